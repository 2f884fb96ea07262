//! Image-quality metrics between real and synthesized CT volumes.
//!
//! All metrics run on denormalized Hounsfield values restricted to a head
//! mask: MAE, PSNR (peak taken as the maximum intensity of either image
//! inside the mask), and a single global SSIM statistic (one mean/variance
//! pair per image, population counting). Region breakdowns threshold the
//! ground-truth CT at -465 HU (air) and +200 HU (bone). Also here: seeded
//! k-fold subject splitting and mean/SD aggregation across reports.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::phantom::{Mask, Volume};

/// Voxels at or below this HU (inside the head) count as air.
pub const AIR_HU_MAX: f64 = -465.0;
/// Voxels at or above this HU (inside the head) count as bone.
pub const BONE_HU_MIN: f64 = 200.0;
/// SSIM stabilizer weights: C1 = (K1*Q)^2, C2 = (K2*Q)^2.
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.02;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("metric mask selects no voxels")]
    EmptyMask,
    #[error("grid lengths differ: real {real}, syn {syn}, mask {mask}")]
    ShapeMismatch { real: usize, syn: usize, mask: usize },
    #[error("volume dims differ: real {real:?}, syn {syn:?}")]
    DimMismatch { real: [usize; 3], syn: [usize; 3] },
    #[error("expected {expected} slice masks, got {got}")]
    MaskCount { expected: usize, got: usize },
    #[error("cannot aggregate zero reports")]
    NoReports,
    #[error("cannot split {n} subjects into {k} folds")]
    TooManyFolds { k: usize, n: usize },
    #[error("fold count must be positive")]
    ZeroFolds,
}

fn masked_pairs(
    real: &[f32],
    syn: &[f32],
    mask: &Mask,
) -> Result<Vec<(f64, f64)>, MetricsError> {
    let expected = mask.data().len();
    if real.len() != expected || syn.len() != expected {
        return Err(MetricsError::ShapeMismatch {
            real: real.len(),
            syn: syn.len(),
            mask: expected,
        });
    }
    Ok(mask
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &keep)| keep)
        .map(|(i, _)| (real[i] as f64, syn[i] as f64))
        .collect())
}

fn mae_pooled(pairs: &[(f64, f64)]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyMask);
    }
    let sum: f64 = pairs.iter().map(|&(r, s)| (r - s).abs()).sum();
    Ok(sum / pairs.len() as f64)
}

fn peak_intensity(pairs: &[(f64, f64)]) -> f64 {
    pairs
        .iter()
        .flat_map(|&(r, s)| [r, s])
        .fold(f64::NEG_INFINITY, f64::max)
}

fn psnr_pooled(pairs: &[(f64, f64)]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyMask);
    }
    let mse: f64 =
        pairs.iter().map(|&(r, s)| (r - s) * (r - s)).sum::<f64>() / pairs.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let q = peak_intensity(pairs);
    Ok(10.0 * (q * q / mse).log10())
}

fn ssim_pooled(pairs: &[(f64, f64)]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyMask);
    }
    let n = pairs.len() as f64;
    let mean_r = pairs.iter().map(|&(r, _)| r).sum::<f64>() / n;
    let mean_s = pairs.iter().map(|&(_, s)| s).sum::<f64>() / n;
    let mut var_r = 0.0;
    let mut var_s = 0.0;
    let mut cov = 0.0;
    for &(r, s) in pairs {
        let dr = r - mean_r;
        let ds = s - mean_s;
        var_r += dr * dr;
        var_s += ds * ds;
        cov += dr * ds;
    }
    var_r /= n;
    var_s /= n;
    cov /= n;
    let q = peak_intensity(pairs);
    let c1 = (SSIM_K1 * q) * (SSIM_K1 * q);
    let c2 = (SSIM_K2 * q) * (SSIM_K2 * q);
    Ok(((2.0 * mean_r * mean_s + c1) * (2.0 * cov + c2))
        / ((mean_r * mean_r + mean_s * mean_s + c1) * (var_r + var_s + c2)))
}

/// Mean absolute error in HU over the masked voxels.
pub fn mae(real: &[f32], syn: &[f32], mask: &Mask) -> Result<f64, MetricsError> {
    mae_pooled(&masked_pairs(real, syn, mask)?)
}

/// Peak signal-to-noise ratio in dB over the masked voxels; identical
/// grids give positive infinity.
pub fn psnr(real: &[f32], syn: &[f32], mask: &Mask) -> Result<f64, MetricsError> {
    psnr_pooled(&masked_pairs(real, syn, mask)?)
}

/// Global structural-similarity index over the masked voxels.
pub fn ssim(real: &[f32], syn: &[f32], mask: &Mask) -> Result<f64, MetricsError> {
    ssim_pooled(&masked_pairs(real, syn, mask)?)
}

/// The head split into air / bone / tissue by thresholding the
/// ground-truth CT.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMasks {
    pub head: Mask,
    pub air: Mask,
    pub bone: Mask,
    pub tissue: Mask,
}

/// Partitions `head` by the reference CT: air at or below -465 HU, bone at
/// or above +200 HU, tissue the remainder. Regions may be empty.
pub fn region_masks(real_ct: &[f32], head: &Mask) -> RegionMasks {
    let (h, w) = (head.height(), head.width());
    let air = Mask::from_fn(h, w, |y, x| {
        head.get(y, x) && real_ct[y * w + x] as f64 <= AIR_HU_MAX
    });
    let bone = Mask::from_fn(h, w, |y, x| {
        head.get(y, x) && real_ct[y * w + x] as f64 >= BONE_HU_MIN
    });
    let tissue = head.minus(&air).minus(&bone);
    RegionMasks {
        head: head.clone(),
        air,
        bone,
        tissue,
    }
}

/// Per-subject evaluation result. Region MAEs are absent when the region
/// selects no voxels anywhere in the volume.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub subject_id: String,
    pub mae_full: f64,
    pub mae_air: Option<f64>,
    pub mae_bone: Option<f64>,
    pub mae_tissue: Option<f64>,
    pub psnr: f64,
    pub ssim: f64,
    pub voxels_head: usize,
    pub voxels_air: usize,
    pub voxels_bone: usize,
    pub voxels_tissue: usize,
}

/// Evaluates a synthesized CT against its reference over the pooled masked
/// voxels of the whole volume. `head_masks` holds one mask per z plane
/// (individual planes may be empty, e.g. slices where no head was found).
pub fn evaluate(
    real_ct: &Volume,
    syn_ct: &Volume,
    head_masks: &[Mask],
) -> Result<MetricsReport, MetricsError> {
    if real_ct.dims() != syn_ct.dims() {
        return Err(MetricsError::DimMismatch {
            real: real_ct.dims(),
            syn: syn_ct.dims(),
        });
    }
    if head_masks.len() != real_ct.depth {
        return Err(MetricsError::MaskCount {
            expected: real_ct.depth,
            got: head_masks.len(),
        });
    }

    let mut full = Vec::new();
    let mut air = Vec::new();
    let mut bone = Vec::new();
    let mut tissue = Vec::new();
    for z in 0..real_ct.depth {
        let real = real_ct.slice(z);
        let syn = syn_ct.slice(z);
        let regions = region_masks(real, &head_masks[z]);
        full.extend(masked_pairs(real, syn, &regions.head)?);
        air.extend(masked_pairs(real, syn, &regions.air)?);
        bone.extend(masked_pairs(real, syn, &regions.bone)?);
        tissue.extend(masked_pairs(real, syn, &regions.tissue)?);
    }

    let region_mae = |pairs: &[(f64, f64)]| -> Result<Option<f64>, MetricsError> {
        if pairs.is_empty() {
            Ok(None)
        } else {
            mae_pooled(pairs).map(Some)
        }
    };
    Ok(MetricsReport {
        subject_id: real_ct.subject_id.clone(),
        mae_full: mae_pooled(&full)?,
        mae_air: region_mae(&air)?,
        mae_bone: region_mae(&bone)?,
        mae_tissue: region_mae(&tissue)?,
        psnr: psnr_pooled(&full)?,
        ssim: ssim_pooled(&full)?,
        voxels_head: full.len(),
        voxels_air: air.len(),
        voxels_bone: bone.len(),
        voxels_tissue: tissue.len(),
    })
}

/// A seeded partition of subject ids into folds of near-equal size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSpec {
    pub folds: Vec<Vec<String>>,
}

impl FoldSpec {
    /// (training subjects, test subjects) for one fold index.
    pub fn split(&self, fold: usize) -> (Vec<String>, Vec<String>) {
        let test = self.folds[fold].clone();
        let train = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != fold)
            .flat_map(|(_, ids)| ids.iter().cloned())
            .collect();
        (train, test)
    }
}

/// Splits subjects into `k` folds: sort, seeded shuffle, round-robin deal.
/// Fold sizes differ by at most one; the same seed always reproduces the
/// same assignment regardless of input order.
pub fn kfold(subject_ids: &[String], k: usize, seed: u64) -> Result<FoldSpec, MetricsError> {
    if k == 0 {
        return Err(MetricsError::ZeroFolds);
    }
    if k > subject_ids.len() {
        return Err(MetricsError::TooManyFolds {
            k,
            n: subject_ids.len(),
        });
    }
    let mut ids = subject_ids.to_vec();
    ids.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); k];
    for (i, id) in ids.into_iter().enumerate() {
        folds[i % k].push(id);
    }
    Ok(FoldSpec { folds })
}

/// Mean and population SD of one report field; non-finite values are
/// excluded from the statistics and counted instead.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldStat {
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    /// Finite values the statistics cover.
    pub samples: usize,
    /// Non-finite values (e.g. infinite PSNR) left out.
    pub excluded: usize,
}

impl FieldStat {
    fn over(values: impl Iterator<Item = f64>) -> FieldStat {
        let mut finite = Vec::new();
        let mut excluded = 0usize;
        for v in values {
            if v.is_finite() {
                finite.push(v);
            } else {
                excluded += 1;
            }
        }
        if finite.is_empty() {
            return FieldStat {
                mean: None,
                sd: None,
                samples: 0,
                excluded,
            };
        }
        let n = finite.len() as f64;
        let mean = finite.iter().sum::<f64>() / n;
        let var = finite.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        FieldStat {
            mean: Some(mean),
            sd: Some(var.sqrt()),
            samples: finite.len(),
            excluded,
        }
    }
}

/// Aggregated statistics across a set of per-subject reports.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub mae_full: FieldStat,
    pub mae_air: FieldStat,
    pub mae_bone: FieldStat,
    pub mae_tissue: FieldStat,
    pub psnr: FieldStat,
    pub ssim: FieldStat,
}

/// Mean and population SD per metric field over the reports. Reports are
/// ordered by subject id internally so the floating-point sums do not
/// depend on the caller's ordering.
pub fn aggregate(reports: &[MetricsReport]) -> Result<Aggregate, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::NoReports);
    }
    let ordered: BTreeMap<(&str, usize), &MetricsReport> = reports
        .iter()
        .enumerate()
        .map(|(i, r)| ((r.subject_id.as_str(), i), r))
        .collect();
    let field = |get: fn(&MetricsReport) -> Option<f64>| {
        FieldStat::over(ordered.values().filter_map(|r| get(r)))
    };
    Ok(Aggregate {
        mae_full: field(|r| Some(r.mae_full)),
        mae_air: field(|r| r.mae_air),
        mae_bone: field(|r| r.mae_bone),
        mae_tissue: field(|r| r.mae_tissue),
        psnr: field(|r| Some(r.psnr)),
        ssim: field(|r| Some(r.ssim)),
    })
}
