//! Whole-volume inference: raw MR in, Hounsfield CT out.
//!
//! Each z plane goes through the same preprocessing as training (per-volume
//! MR scaling, head masking, background forced to -1), then the generator,
//! then the inverse CT intensity map. Voxels outside the head — and whole
//! planes where no head is found — come back as air (-1000 HU). Batch
//! normalization runs on the single slice's own statistics, matching how
//! the networks behaved during training.

use super::attention::generate;
use super::{ModelError, ModelKind, Models};
use crate::nn::NormMode;
use crate::phantom::{
    apply_mask, denormalize_ct, head_mask, mr_scale, normalize_mr, Mask, Modality,
    PhantomError, Volume, HEAD_MORPH_RADIUS, HEAD_THRESHOLD_FRACTION,
};
use crate::tensor::{no_grad, Tensor};

/// Background fill for everything outside the head mask.
const AIR_HU: f32 = -1000.0;

/// One synthesized volume plus the by-products worth keeping.
pub struct SynthesisResult {
    /// Synthesized CT in HU, aligned with the input MR.
    pub ct: Volume,
    /// Per-plane head masks (empty where no head was found).
    pub masks: Vec<Mask>,
    /// Per-plane attention grids at their native resolution, row-major;
    /// present only for the attention variant, and only on planes with a
    /// head.
    pub attention: Vec<Option<Vec<f32>>>,
    /// Height and width of the attention grids.
    pub attention_dims: (usize, usize),
}

/// Translates a raw MR volume into a synthesized CT volume.
pub fn synthesize_volume(
    models: &Models<f32>,
    mr: &Volume,
) -> Result<SynthesisResult, ModelError> {
    let cfg = &models.config;
    let (h, w) = (mr.height, mr.width);
    if h != cfg.height || w != cfg.width {
        return Err(ModelError::InputShape {
            expected_h: cfg.height,
            expected_w: cfg.width,
            got_h: h,
            got_w: w,
        });
    }

    let scale = mr_scale(&mr.voxels);
    let plane = h * w;
    let mut ct_voxels = Vec::with_capacity(plane * mr.depth);
    let mut masks = Vec::with_capacity(mr.depth);
    let mut attention = Vec::with_capacity(mr.depth);
    for z in 0..mr.depth {
        let mask = match head_mask(mr.slice(z), h, w, HEAD_THRESHOLD_FRACTION, HEAD_MORPH_RADIUS)
        {
            Ok(mask) => mask,
            Err(PhantomError::NoHead) => {
                ct_voxels.extend(std::iter::repeat(AIR_HU).take(plane));
                masks.push(Mask::new(h, w));
                attention.push(None);
                continue;
            }
            Err(other) => return Err(other.into()),
        };

        let mut normalized: Vec<f32> = normalize_mr(mr.slice(z), scale);
        apply_mask(&mut normalized, &mask, -1.0);
        let input = Tensor::new(&[1, 1, h, w], normalized, false)?;
        let (synthetic, map) = no_grad(|| generate(models, &input, NormMode::Train))?;

        let mut hu = denormalize_ct(&synthetic.to_vec());
        for (i, &inside) in mask.data().iter().enumerate() {
            if !inside {
                hu[i] = AIR_HU;
            }
        }
        ct_voxels.extend_from_slice(&hu);
        masks.push(mask);
        attention.push((cfg.kind == ModelKind::AttentionGan).then(|| map.map.to_vec()));
    }

    let ct = Volume::new(
        w,
        h,
        mr.depth,
        mr.spacing,
        Modality::Ct,
        mr.subject_id.clone(),
        ct_voxels,
    )
    .map_err(PhantomError::from)?;
    Ok(SynthesisResult {
        ct,
        masks,
        attention,
        attention_dims: (h / 2, w / 2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_models, ModelConfig};
    use crate::phantom::{generate_subject, PhantomParams};

    fn phantom_mr(size: usize, slices: usize) -> Volume {
        let params = PhantomParams {
            size,
            subjects: 1,
            slices,
            ..PhantomParams::default()
        };
        generate_subject(&params, 0).unwrap().mr
    }

    fn small_config(kind: ModelKind, size: usize) -> ModelConfig {
        let mut cfg = ModelConfig::new(kind, size, size);
        cfg.base_width = 1;
        cfg
    }

    #[test]
    fn synthesized_volume_mirrors_input_geometry() {
        let mr = phantom_mr(16, 3);
        let models = build_models::<f32>(&small_config(ModelKind::Cnn, 16), 0).unwrap();
        let result = synthesize_volume(&models, &mr).unwrap();
        assert_eq!(result.ct.dims(), mr.dims());
        assert_eq!(result.ct.modality, Modality::Ct);
        assert_eq!(result.ct.subject_id, mr.subject_id);
        assert_eq!(result.ct.spacing, mr.spacing);
        assert_eq!(result.masks.len(), 3);

        // Values live in the CT display window; background is exactly air.
        for z in 0..3 {
            let slice = result.ct.slice(z);
            for (i, &inside) in result.masks[z].data().iter().enumerate() {
                if inside {
                    assert!((-1000.0..=2000.0).contains(&slice[i]));
                } else {
                    assert_eq!(slice[i], -1000.0);
                }
            }
        }
        // The reconstruction-only variant never produces attention.
        assert!(result.attention.iter().all(|a| a.is_none()));
    }

    #[test]
    fn inference_is_deterministic() {
        let mr = phantom_mr(16, 2);
        let models = build_models::<f32>(&small_config(ModelKind::Cnn, 16), 1).unwrap();
        let a = synthesize_volume(&models, &mr).unwrap();
        let b = synthesize_volume(&models, &mr).unwrap();
        assert_eq!(a.ct.voxels, b.ct.voxels);
    }

    #[test]
    fn attention_variant_yields_a_grid_per_headed_plane() {
        let mr = phantom_mr(48, 2);
        let models =
            build_models::<f32>(&small_config(ModelKind::AttentionGan, 48), 2).unwrap();
        let result = synthesize_volume(&models, &mr).unwrap();
        assert_eq!(result.attention_dims, (24, 24));
        for (z, att) in result.attention.iter().enumerate() {
            if result.masks[z].is_empty() {
                assert!(att.is_none());
            } else {
                let grid = att.as_ref().expect("attention grid");
                assert_eq!(grid.len(), 24 * 24);
                assert!(grid.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn wrong_input_size_is_rejected() {
        let mr = phantom_mr(24, 1);
        let models = build_models::<f32>(&small_config(ModelKind::Cnn, 16), 0).unwrap();
        assert!(matches!(
            synthesize_volume(&models, &mr),
            Err(ModelError::InputShape {
                expected_h: 16,
                got_h: 24,
                ..
            })
        ));
    }
}
