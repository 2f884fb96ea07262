//! Procedurally generated, pre-aligned MR/CT head phantom pairs.
//!
//! Each subject is an ellipsoidal head: a tissue interior, a high-density
//! skull shell, bright ventricle lobes, and 1-3 air cavities. With a
//! configurable probability a subject carries a surgical skull defect — an
//! angular arc of the shell replaced by tissue. CT voxels take fixed
//! Hounsfield levels per structure and stay noise-free; MR voxels get an
//! independent contrast in which bone and air are both near-zero (the
//! ambiguity the translation models must resolve), a smooth multiplicative
//! bias field, and additive Gaussian noise.
//!
//! The module also owns preprocessing: head masking, normalization into the
//! generator's `[-1, 1]` range, and pairing volumes into training slices.

mod mask;
mod normalize;
mod volume;

pub use mask::{
    close, ct_head_mask, dilate, erode, fill_holes, head_mask, largest_component, percentile,
    Mask, CT_HEAD_THRESHOLD_HU, HEAD_MORPH_RADIUS, HEAD_THRESHOLD_FRACTION,
};
pub use normalize::{
    apply_mask, denormalize_ct, mr_scale, normalize_ct, normalize_mr, CT_WINDOW,
};
pub use volume::{
    read_volume, write_volume, Modality, Volume, VolumeError, CT_STORAGE_RANGE,
    VOLUME_FORMAT_VERSION,
};

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("image size {size} must be a positive multiple of 8")]
    SizeNotDivisible { size: usize },
    #[error("anomaly rate {rate} outside [0, 1]")]
    AnomalyRate { rate: f64 },
    #[error("noise level {noise} must be >= 0")]
    NegativeNoise { noise: f64 },
    #[error("subjects need at least one slice")]
    ZeroSlices,
    #[error("no head found in the slice after masking")]
    NoHead,
    #[error("subject `{subject}` is missing its {missing} volume")]
    MissingModality { subject: String, missing: Modality },
    #[error("subject `{subject}` has more than one {modality} volume")]
    DuplicateVolume { subject: String, modality: Modality },
    #[error("subject `{subject}`: MR dims {mr:?} do not match CT dims {ct:?}")]
    DimMismatch {
        subject: String,
        mr: [usize; 3],
        ct: [usize; 3],
    },
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Knobs for one generated cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomParams {
    /// Slice width and height in pixels; must be a multiple of 8.
    pub size: usize,
    pub subjects: usize,
    /// Slices (z planes) per subject.
    pub slices: usize,
    /// Probability that a subject carries a skull defect.
    pub anomaly_rate: f64,
    /// Standard deviation of the additive MR noise.
    pub noise: f64,
    /// Strength of the multiplicative MR bias field (0 disables it; 1 sways
    /// intensities by up to +/-50%).
    pub bias_strength: f64,
    pub seed: u64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        PhantomParams {
            size: 64,
            subjects: 10,
            slices: 8,
            anomaly_rate: 0.3,
            noise: 0.03,
            bias_strength: 1.0,
            seed: 0,
        }
    }
}

impl PhantomParams {
    fn validate(&self) -> Result<(), PhantomError> {
        if self.size == 0 || self.size % 8 != 0 {
            return Err(PhantomError::SizeNotDivisible { size: self.size });
        }
        if !(0.0..=1.0).contains(&self.anomaly_rate) {
            return Err(PhantomError::AnomalyRate {
                rate: self.anomaly_rate,
            });
        }
        if self.noise < 0.0 {
            return Err(PhantomError::NegativeNoise { noise: self.noise });
        }
        if self.slices == 0 {
            return Err(PhantomError::ZeroSlices);
        }
        Ok(())
    }
}

// Structure labels assigned while painting; the ground truth behind both
// modalities.
pub const LABEL_BACKGROUND: u8 = 0;
pub const LABEL_TISSUE: u8 = 1;
pub const LABEL_SKULL: u8 = 2;
pub const LABEL_VENTRICLE: u8 = 3;
pub const LABEL_CAVITY: u8 = 4;
/// Surgical skull defect: shell replaced by tissue.
pub const LABEL_DEFECT: u8 = 5;

/// CT Hounsfield level per label (defect reads as tissue).
pub fn label_hu(label: u8) -> f32 {
    match label {
        LABEL_TISSUE | LABEL_DEFECT => 40.0,
        LABEL_SKULL => 1000.0,
        LABEL_VENTRICLE => 10.0,
        _ => -1000.0, // background and air cavities
    }
}

/// Noise-free MR signal per label: bone (0.10) and air (0.03 / 0.0) sit
/// close together near zero while tissue is bright — the contrast that makes
/// bone vs air ambiguous from MR alone.
pub fn label_mr(label: u8) -> f64 {
    match label {
        LABEL_TISSUE | LABEL_DEFECT => 0.70,
        LABEL_VENTRICLE => 0.95,
        LABEL_SKULL => 0.10,
        LABEL_CAVITY => 0.03,
        _ => 0.0,
    }
}

/// Ground-truth label grid of one slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceLabels {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

impl SliceLabels {
    pub fn mask_of(&self, pred: impl Fn(u8) -> bool) -> Mask {
        Mask::from_fn(self.height, self.width, |y, x| {
            pred(self.labels[y * self.width + x])
        })
    }

    /// Everything inside the outer skull ellipse.
    pub fn head_raster(&self) -> Mask {
        self.mask_of(|l| l != LABEL_BACKGROUND)
    }

    pub fn skull_raster(&self) -> Mask {
        self.mask_of(|l| l == LABEL_SKULL)
    }

    pub fn cavity_raster(&self) -> Mask {
        self.mask_of(|l| l == LABEL_CAVITY)
    }

    pub fn defect_raster(&self) -> Mask {
        self.mask_of(|l| l == LABEL_DEFECT)
    }
}

/// One generated subject: both volumes plus the per-slice ground-truth
/// labels they were painted from.
pub struct SubjectPhantom {
    pub mr: Volume,
    pub ct: Volume,
    pub labels: Vec<SliceLabels>,
}

struct Ellipse {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
}

impl Ellipse {
    fn contains(&self, px: f64, py: f64) -> bool {
        if self.ax <= 0.0 || self.ay <= 0.0 {
            return false;
        }
        let ex = (px - self.cx) / self.ax;
        let ey = (py - self.cy) / self.ay;
        ex * ex + ey * ey <= 1.0
    }
}

struct SubjectRecipe {
    cx: f64,
    cy: f64,
    head_ax: f64,
    head_ay: f64,
    skull_thickness: f64,
    // Ventricle lobe geometry (mirrored pair), relative to the head center.
    vent_dx: f64,
    vent_dy: f64,
    vent_ax: f64,
    vent_ay: f64,
    // Air cavities: (offset x, offset y, radius).
    cavities: Vec<(f64, f64, f64)>,
    // Skull defect arc, when present: (start angle, angular width).
    defect: Option<(f64, f64)>,
    // Bias field coefficients.
    bias: [f64; 3],
}

impl SubjectRecipe {
    fn draw(params: &PhantomParams, rng: &mut ChaCha8Rng) -> Self {
        let s = params.size as f64;
        let cx = s * rng.gen_range(0.46..0.54);
        let cy = s * rng.gen_range(0.46..0.54);
        let head_ax = s * rng.gen_range(0.30..0.36);
        let head_ay = s * rng.gen_range(0.36..0.42);
        let skull_thickness = (s * rng.gen_range(0.04..0.06)).max(1.5);
        let vent_dx = s * rng.gen_range(0.06..0.10);
        let vent_dy = s * rng.gen_range(-0.05..0.02);
        let vent_ax = s * rng.gen_range(0.035..0.06);
        let vent_ay = s * rng.gen_range(0.08..0.12);
        let cavity_count = rng.gen_range(1..=3usize);
        let cavities = (0..cavity_count)
            .map(|_| {
                let angle = rng.gen_range(0.0..2.0 * PI);
                let rho = rng.gen_range(0.25..0.55);
                let radius = s * rng.gen_range(0.03..0.055);
                let ox = rho * (head_ax - skull_thickness) * angle.cos();
                let oy = rho * (head_ay - skull_thickness) * angle.sin();
                (ox, oy, radius)
            })
            .collect();
        let defect = rng
            .gen_bool(params.anomaly_rate)
            .then(|| (rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.5..1.1)));
        let bias = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        SubjectRecipe {
            cx,
            cy,
            head_ax,
            head_ay,
            skull_thickness,
            vent_dx,
            vent_dy,
            vent_ax,
            vent_ay,
            cavities,
            defect,
            bias,
        }
    }

    /// Paints the label grid of one slice; `scale` shrinks the anatomy away
    /// from the head's equator.
    fn paint(&self, size: usize, scale: f64) -> SliceLabels {
        let outer = Ellipse {
            cx: self.cx,
            cy: self.cy,
            ax: self.head_ax * scale,
            ay: self.head_ay * scale,
        };
        let inner = Ellipse {
            cx: self.cx,
            cy: self.cy,
            ax: outer.ax - self.skull_thickness,
            ay: outer.ay - self.skull_thickness,
        };
        let ventricles = [-1.0f64, 1.0].map(|side| Ellipse {
            cx: self.cx + side * self.vent_dx * scale,
            cy: self.cy + self.vent_dy * scale,
            ax: self.vent_ax * scale,
            ay: self.vent_ay * scale,
        });

        let mut labels = vec![LABEL_BACKGROUND; size * size];
        for y in 0..size {
            for x in 0..size {
                let px = x as f64 + 0.5;
                let py = y as f64 + 0.5;
                if !outer.contains(px, py) {
                    continue;
                }
                let idx = y * size + x;
                if !inner.contains(px, py) {
                    labels[idx] = match self.defect {
                        Some((start, width)) => {
                            let theta = (py - self.cy).atan2(px - self.cx);
                            if (theta - start).rem_euclid(2.0 * PI) <= width {
                                LABEL_DEFECT
                            } else {
                                LABEL_SKULL
                            }
                        }
                        None => LABEL_SKULL,
                    };
                    continue;
                }
                let mut label = LABEL_TISSUE;
                if ventricles.iter().any(|v| v.ax >= 0.5 && v.contains(px, py)) {
                    label = LABEL_VENTRICLE;
                }
                for &(ox, oy, radius) in &self.cavities {
                    let r = radius * scale;
                    if r < 0.5 {
                        continue;
                    }
                    let dx = px - (self.cx + ox * scale);
                    let dy = py - (self.cy + oy * scale);
                    if dx * dx + dy * dy <= r * r {
                        label = LABEL_CAVITY;
                    }
                }
                labels[idx] = label;
            }
        }
        SliceLabels {
            height: size,
            width: size,
            labels,
        }
    }

    fn bias_field(&self, strength: f64, size: usize, px: f64, py: f64) -> f64 {
        let xn = px / size as f64;
        let yn = py / size as f64;
        1.0 + strength
            * (0.15 * self.bias[0] * (2.0 * xn - 1.0)
                + 0.15 * self.bias[1] * (2.0 * yn - 1.0)
                + 0.2 * self.bias[2] * (PI * xn).sin() * (PI * yn).sin())
    }
}

fn slice_scale(slice: usize, slices: usize) -> f64 {
    let z_rel = if slices == 1 {
        0.0
    } else {
        -0.65 + 1.3 * slice as f64 / (slices - 1) as f64
    };
    (1.0 - z_rel * z_rel).sqrt()
}

/// Generates one subject deterministically; subjects draw from independent
/// streams of the same seed, so any subset can be produced in any order.
pub fn generate_subject(
    params: &PhantomParams,
    index: usize,
) -> Result<SubjectPhantom, PhantomError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(index as u64 + 1);
    let recipe = SubjectRecipe::draw(params, &mut rng);
    let noise = (params.noise > 0.0)
        .then(|| Normal::new(0.0, params.noise).expect("validated noise level"));

    let size = params.size;
    let plane = size * size;
    let mut labels = Vec::with_capacity(params.slices);
    let mut ct = Vec::with_capacity(plane * params.slices);
    let mut mr = Vec::with_capacity(plane * params.slices);
    for slice in 0..params.slices {
        let grid = recipe.paint(size, slice_scale(slice, params.slices));
        for y in 0..size {
            for x in 0..size {
                let label = grid.labels[y * size + x];
                ct.push(label_hu(label));
                let px = x as f64 + 0.5;
                let py = y as f64 + 0.5;
                let mut signal =
                    label_mr(label) * recipe.bias_field(params.bias_strength, size, px, py);
                if let Some(noise) = &noise {
                    signal += noise.sample(&mut rng);
                }
                mr.push(signal.max(0.0) as f32);
            }
        }
        labels.push(grid);
    }

    let subject_id = format!("subject_{index:03}");
    let spacing = [0.9, 0.9, 1.25];
    Ok(SubjectPhantom {
        mr: Volume::new(size, size, params.slices, spacing, Modality::Mr, &subject_id, mr)?,
        ct: Volume::new(size, size, params.slices, spacing, Modality::Ct, &subject_id, ct)?,
        labels,
    })
}

/// Generates the whole cohort as (MR, CT) volume pairs.
pub fn generate_phantom(params: &PhantomParams) -> Result<Vec<(Volume, Volume)>, PhantomError> {
    params.validate()?;
    (0..params.subjects)
        .map(|i| generate_subject(params, i).map(|s| (s.mr, s.ct)))
        .collect()
}

/// One training/evaluation example: normalized MR and CT slices plus the
/// head mask that produced them. Cloning is cheap: the tensors are
/// reference-counted views of the same buffers.
#[derive(Debug, Clone)]
pub struct SlicePair {
    pub subject_id: String,
    pub slice_index: usize,
    /// `[1, 1, H, W]`, in `[-1, 1]`, background forced to -1.
    pub mr: Tensor<f32>,
    /// `[1, 1, H, W]`, in `[-1, 1]`, background forced to -1.
    pub ct: Tensor<f32>,
    pub mask: Mask,
}

/// A slice dropped during preprocessing because no head was found.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedSlice {
    pub subject_id: String,
    pub slice_index: usize,
}

/// Loads every paired subject under `root` (files written by
/// [`write_volume`]) whose subject id passes `filter`, and returns the
/// validated (MR, CT) volume pairs ordered by subject id. Errors on a
/// duplicated or missing modality and on MR/CT dimension mismatches.
pub fn paired_volumes(
    root: &Path,
    filter: impl Fn(&str) -> bool,
) -> Result<Vec<(Volume, Volume)>, PhantomError> {
    let mut header_paths = Vec::new();
    let entries = std::fs::read_dir(root).map_err(|source| PhantomError::Io {
        path: root.to_path_buf(),
        source,
    })?;
    for entry in entries {
        let entry = entry.map_err(|source| PhantomError::Io {
            path: root.to_path_buf(),
            source,
        })?;
        let path = entry.path();
        if path.to_string_lossy().ends_with(".vol.json") {
            header_paths.push(path);
        }
    }
    header_paths.sort();

    let mut subjects: BTreeMap<String, (Option<Volume>, Option<Volume>)> = BTreeMap::new();
    for path in &header_paths {
        let volume = read_volume(path)?;
        if !filter(&volume.subject_id) {
            continue;
        }
        let slot = subjects.entry(volume.subject_id.clone()).or_default();
        let (cell, modality) = match volume.modality {
            Modality::Mr => (&mut slot.0, Modality::Mr),
            Modality::Ct => (&mut slot.1, Modality::Ct),
        };
        if cell.is_some() {
            return Err(PhantomError::DuplicateVolume {
                subject: volume.subject_id,
                modality,
            });
        }
        *cell = Some(volume);
    }

    let mut pairs = Vec::new();
    for (subject, (mr, ct)) in subjects {
        let mr = mr.ok_or_else(|| PhantomError::MissingModality {
            subject: subject.clone(),
            missing: Modality::Mr,
        })?;
        let ct = ct.ok_or_else(|| PhantomError::MissingModality {
            subject: subject.clone(),
            missing: Modality::Ct,
        })?;
        if mr.dims() != ct.dims() {
            return Err(PhantomError::DimMismatch {
                subject,
                mr: mr.dims(),
                ct: ct.dims(),
            });
        }
        pairs.push((mr, ct));
    }
    Ok(pairs)
}

/// Loads every paired subject under `root`, masks and normalizes each
/// slice, and returns the pairs ordered by subject id then slice index.
/// Slices with no detectable head are skipped and reported alongside.
pub fn dataset_slices(
    root: &Path,
    filter: impl Fn(&str) -> bool,
) -> Result<(Vec<SlicePair>, Vec<SkippedSlice>), PhantomError> {
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for (mr, ct) in paired_volumes(root, filter)? {
        let subject = mr.subject_id.clone();
        let scale = mr_scale(&mr.voxels);
        for z in 0..mr.depth {
            let mask = match head_mask(
                mr.slice(z),
                mr.height,
                mr.width,
                HEAD_THRESHOLD_FRACTION,
                HEAD_MORPH_RADIUS,
            ) {
                Ok(mask) => mask,
                Err(PhantomError::NoHead) => {
                    skipped.push(SkippedSlice {
                        subject_id: subject.clone(),
                        slice_index: z,
                    });
                    continue;
                }
                Err(other) => return Err(other),
            };
            let mut mr_norm: Vec<f32> = normalize_mr(mr.slice(z), scale);
            let mut ct_norm: Vec<f32> = normalize_ct(ct.slice(z));
            apply_mask(&mut mr_norm, &mask, -1.0);
            apply_mask(&mut ct_norm, &mask, -1.0);
            let shape = [1, 1, mr.height, mr.width];
            pairs.push(SlicePair {
                subject_id: subject.clone(),
                slice_index: z,
                mr: Tensor::new(&shape, mr_norm, false)?,
                ct: Tensor::new(&shape, ct_norm, false)?,
                mask,
            });
        }
    }
    Ok((pairs, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clean_params(size: usize, subjects: usize, slices: usize) -> PhantomParams {
        PhantomParams {
            size,
            subjects,
            slices,
            anomaly_rate: 0.0,
            noise: 0.0,
            bias_strength: 0.0,
            seed: 11,
        }
    }

    #[test]
    fn same_seed_generates_identical_cohorts() {
        let params = PhantomParams {
            subjects: 2,
            slices: 3,
            size: 32,
            ..PhantomParams::default()
        };
        let a = generate_phantom(&params).unwrap();
        let b = generate_phantom(&params).unwrap();
        for ((mr_a, ct_a), (mr_b, ct_b)) in a.iter().zip(&b) {
            assert_eq!(mr_a, mr_b);
            assert_eq!(ct_a, ct_b);
        }
    }

    #[test]
    fn subjects_differ_from_one_another() {
        let params = PhantomParams {
            subjects: 2,
            slices: 2,
            size: 32,
            ..PhantomParams::default()
        };
        let pairs = generate_phantom(&params).unwrap();
        assert_ne!(pairs[0].1.voxels, pairs[1].1.voxels);
    }

    #[test]
    fn clean_ct_uses_exactly_the_designed_hu_levels() {
        let params = clean_params(48, 3, 3);
        let mut seen = std::collections::BTreeSet::new();
        for (_, ct) in generate_phantom(&params).unwrap() {
            for &v in &ct.voxels {
                seen.insert(v as i32);
            }
        }
        assert_eq!(
            seen.into_iter().collect::<Vec<_>>(),
            vec![-1000, 10, 40, 1000]
        );
    }

    #[test]
    fn invalid_params_are_rejected() {
        let mut p = clean_params(50, 1, 1);
        assert!(matches!(
            generate_phantom(&p),
            Err(PhantomError::SizeNotDivisible { size: 50 })
        ));
        p = clean_params(48, 1, 1);
        p.anomaly_rate = 1.5;
        assert!(matches!(
            generate_phantom(&p),
            Err(PhantomError::AnomalyRate { .. })
        ));
        p = clean_params(48, 1, 0);
        assert!(matches!(generate_phantom(&p), Err(PhantomError::ZeroSlices)));
        p = clean_params(48, 1, 1);
        p.noise = -0.1;
        assert!(matches!(
            generate_phantom(&p),
            Err(PhantomError::NegativeNoise { .. })
        ));
    }

    #[test]
    fn anomalous_subjects_carry_a_tissue_arc_in_the_skull() {
        let mut params = clean_params(48, 4, 3);
        params.anomaly_rate = 1.0;
        params.seed = 5;
        for index in 0..params.subjects {
            let subject = generate_subject(&params, index).unwrap();
            let mid = &subject.labels[1];
            let defect = mid.defect_raster();
            assert!(!defect.is_empty(), "subject {index} lacks a defect");
            // The defect reads as tissue on CT while the remaining shell
            // stays at full skull density.
            let ct_mid = subject.ct.slice(1);
            for y in 0..48 {
                for x in 0..48 {
                    if defect.get(y, x) {
                        assert_eq!(ct_mid[y * 48 + x], 40.0);
                    } else if mid.skull_raster().get(y, x) {
                        assert_eq!(ct_mid[y * 48 + x], 1000.0);
                    }
                }
            }
        }
    }

    #[test]
    fn anomaly_rate_zero_means_no_defects() {
        let params = clean_params(48, 3, 3);
        for index in 0..params.subjects {
            let subject = generate_subject(&params, index).unwrap();
            for grid in &subject.labels {
                assert!(grid.defect_raster().is_empty());
            }
        }
    }

    #[test]
    fn structures_nest_inside_the_head() {
        let mut params = PhantomParams {
            subjects: 3,
            slices: 4,
            size: 48,
            ..PhantomParams::default()
        };
        params.anomaly_rate = 1.0;
        for index in 0..params.subjects {
            let subject = generate_subject(&params, index).unwrap();
            for grid in &subject.labels {
                let head = grid.head_raster();
                assert!(grid.skull_raster().subset_of(&head));
                assert!(grid.cavity_raster().subset_of(&head));
                assert!(grid.defect_raster().subset_of(&head));
                assert!(grid
                    .cavity_raster()
                    .and(&grid.skull_raster())
                    .is_empty());
            }
        }
    }

    #[test]
    fn clean_head_mask_equals_the_generating_raster() {
        let params = clean_params(48, 2, 3);
        for index in 0..params.subjects {
            let subject = generate_subject(&params, index).unwrap();
            for z in 0..params.slices {
                let mask = head_mask(
                    subject.mr.slice(z),
                    48,
                    48,
                    HEAD_THRESHOLD_FRACTION,
                    HEAD_MORPH_RADIUS,
                )
                .unwrap();
                assert_eq!(
                    mask,
                    subject.labels[z].head_raster(),
                    "subject {index} slice {z}"
                );
            }
        }
    }

    fn write_cohort(dir: &Path, params: &PhantomParams) {
        for (mr, ct) in generate_phantom(params).unwrap() {
            write_volume(&mr, &dir.join(format!("{}_mr.vol.json", mr.subject_id))).unwrap();
            write_volume(&ct, &dir.join(format!("{}_ct.vol.json", ct.subject_id))).unwrap();
        }
    }

    fn fresh_dir(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("agct-phantom-tests").join(name);
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn dataset_slices_orders_and_normalizes_pairs() {
        let dir = fresh_dir("dataset");
        let params = PhantomParams {
            subjects: 2,
            slices: 3,
            size: 32,
            ..PhantomParams::default()
        };
        write_cohort(&dir, &params);

        let (pairs, skipped) = dataset_slices(&dir, |_| true).unwrap();
        assert!(skipped.is_empty());
        assert_eq!(pairs.len(), 6);
        let order: Vec<_> = pairs
            .iter()
            .map(|p| (p.subject_id.clone(), p.slice_index))
            .collect();
        let want: Vec<_> = (0..2)
            .flat_map(|s| (0..3).map(move |z| (format!("subject_{s:03}"), z)))
            .collect();
        assert_eq!(order, want);

        for pair in &pairs {
            assert_eq!(pair.mr.shape(), &[1, 1, 32, 32]);
            assert_eq!(pair.ct.shape(), &[1, 1, 32, 32]);
            assert!(!pair.mask.is_empty());
            let in_range =
                |v: &Vec<f32>| v.iter().all(|&x| (-1.0..=1.0).contains(&x));
            assert!(in_range(&pair.mr.to_vec()));
            assert!(in_range(&pair.ct.to_vec()));
            // Outside the head both grids read air-equivalent -1.
            let mr = pair.mr.to_vec();
            for y in 0..32 {
                for x in 0..32 {
                    if !pair.mask.get(y, x) {
                        assert_eq!(mr[y * 32 + x], -1.0);
                    }
                }
            }
        }
    }

    #[test]
    fn dataset_filter_limits_subjects() {
        let dir = fresh_dir("filtered");
        let params = PhantomParams {
            subjects: 2,
            slices: 2,
            size: 32,
            ..PhantomParams::default()
        };
        write_cohort(&dir, &params);
        let (pairs, _) = dataset_slices(&dir, |s| s == "subject_001").unwrap();
        assert_eq!(pairs.len(), 2);
        assert!(pairs.iter().all(|p| p.subject_id == "subject_001"));
    }

    #[test]
    fn missing_counterpart_names_the_subject() {
        let dir = fresh_dir("unpaired");
        let params = PhantomParams {
            subjects: 1,
            slices: 2,
            size: 32,
            ..PhantomParams::default()
        };
        let subject = generate_subject(&params, 0).unwrap();
        write_volume(&subject.mr, &dir.join("subject_000_mr.vol.json")).unwrap();
        let err = dataset_slices(&dir, |_| true).unwrap_err();
        match err {
            PhantomError::MissingModality { subject, missing } => {
                assert_eq!(subject, "subject_000");
                assert_eq!(missing, Modality::Ct);
            }
            other => panic!("unexpected error {other}"),
        }
    }
}
