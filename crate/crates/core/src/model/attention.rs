//! Attention distillation and two-pass synthesis.

use super::{Discriminator, ModelError, ModelKind, Models};
use crate::nn::{bilinear_upsample, NormMode};
use crate::tensor::{no_grad, Real, Tensor};

/// Below this spread between the strongest and weakest pre-normalization
/// response, a feature map is treated as flat and the attention degenerates
/// to all ones.
pub const ATTENTION_FLAT_EPS: f64 = 1e-8;

/// Spatial weighting grid distilled from a discriminator feature map.
///
/// `map` is `[n, 1, h, w]` with values in `[0, 1]`, carries no gradient
/// history (the weighting is a constant during generator updates), and is
/// sized to the generator's first encoder feature map.
pub struct AttentionMap<T: Real> {
    pub map: Tensor<T>,
    /// 1-based discriminator layer the map came from.
    pub source_layer: usize,
    /// Smallest channel-summed magnitude before normalization.
    pub pre_min: f64,
    /// Largest channel-summed magnitude before normalization.
    pub pre_max: f64,
}

impl<T: Real> AttentionMap<T> {
    /// All-ones map: the multiplicative identity used by the variants that
    /// skip attention.
    pub fn neutral(batch: usize, h: usize, w: usize, source_layer: usize) -> Self {
        AttentionMap {
            map: Tensor::full(&[batch, 1, h, w], T::one()).expect("neutral map shape"),
            source_layer,
            pre_min: 1.0,
            pre_max: 1.0,
        }
    }
}

/// Distills a spatial attention map from `activations[layer - 1]`.
///
/// Per spatial position the channel magnitudes are summed, the grid is
/// min-max normalized to `[0, 1]` (flat grids become all ones), and the
/// result is bilinearly upsampled to `target_h x target_w`. The output is
/// detached: gradients never flow back into the discriminator through the
/// attention path.
pub fn extract_attention<T: Real>(
    activations: &[Tensor<T>],
    layer: usize,
    target_h: usize,
    target_w: usize,
) -> Result<AttentionMap<T>, ModelError> {
    if layer == 0 || layer > activations.len() {
        return Err(ModelError::AttentionLayer {
            layer,
            available: activations.len(),
        });
    }
    let source = &activations[layer - 1];
    let shape = source.shape();
    debug_assert_eq!(shape.len(), 4, "activations are feature maps");
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let plane = h * w;

    // Channel-magnitude sum per spatial position.
    let values = source.values();
    let mut raw = vec![T::zero(); n * plane];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            let dst = &mut raw[ni * plane..(ni + 1) * plane];
            for p in 0..plane {
                dst[p] = dst[p] + values[base + p].abs();
            }
        }
    }
    drop(values);

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in &raw {
        let v = v.as_f64();
        lo = lo.min(v);
        hi = hi.max(v);
    }

    let normalized: Vec<T> = if hi - lo < ATTENTION_FLAT_EPS {
        vec![T::one(); raw.len()]
    } else {
        let span = T::from_f64(hi - lo);
        let lo_t = T::from_f64(lo);
        raw.iter().map(|&v| (v - lo_t) / span).collect()
    };

    let grid = Tensor::new(&[n, 1, h, w], normalized, false).map_err(crate::nn::LayerError::from)?;
    let map = bilinear_upsample(&grid, target_h, target_w)?;
    Ok(AttentionMap {
        map,
        source_layer: layer,
        pre_min: lo,
        pre_max: hi,
    })
}

/// Synthesizes a CT-like image from an MR slice according to the variant.
///
/// * `cnn` / `gan`: one plain generator pass; the returned attention map is
///   the neutral all-ones grid.
/// * `attention-gan`: a provisional no-gradient pass produces a first
///   estimate, the discriminator's feature maps yield an attention map, and
///   a second (gradient-recording) pass re-synthesizes with the weighting.
pub fn generate<T: Real>(
    models: &Models<T>,
    mr: &Tensor<T>,
    mode: NormMode,
) -> Result<(Tensor<T>, AttentionMap<T>), ModelError> {
    let shape = mr.shape();
    if shape.len() != 4 || shape[2] % 2 != 0 || shape[3] % 2 != 0 {
        return Err(ModelError::SizeNotDivisible {
            h: shape.get(2).copied().unwrap_or(0),
            w: shape.get(3).copied().unwrap_or(0),
        });
    }
    let (batch, feat_h, feat_w) = (shape[0], shape[2] / 2, shape[3] / 2);

    match models.config.kind {
        ModelKind::Cnn | ModelKind::Gan => {
            let syn = models.generator.forward(mr, None, mode)?;
            Ok((
                syn,
                AttentionMap::neutral(batch, feat_h, feat_w, models.config.attention_layer),
            ))
        }
        ModelKind::AttentionGan => {
            let d: &Discriminator<T> =
                models
                    .discriminator
                    .as_ref()
                    .ok_or(ModelError::MissingDiscriminator {
                        kind: models.config.kind,
                    })?;
            // Pass 1 feeds only the (detached) attention map, so nothing
            // here needs a graph.
            let attention = no_grad(|| -> Result<AttentionMap<T>, ModelError> {
                let provisional = models.generator.forward(mr, None, mode)?;
                let scored = d.discriminate(&provisional, mode)?;
                extract_attention(
                    &scored.activations,
                    models.config.attention_layer,
                    feat_h,
                    feat_w,
                )
            })?;
            let syn = models.generator.forward(mr, Some(&attention.map), mode)?;
            Ok((syn, attention))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_models, ModelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn feature_map(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(), false).unwrap()
    }

    /// Independent oracle: per-position channel-magnitude sum by explicit
    /// loops, then min-max normalization.
    fn attention_oracle(values: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
        let mut raw = vec![0.0; h * w];
        for (p, slot) in raw.iter_mut().enumerate() {
            for ci in 0..c {
                *slot += values[ci * h * w + p].abs();
            }
        }
        let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo < ATTENTION_FLAT_EPS {
            return vec![1.0; h * w];
        }
        raw.iter().map(|v| (v - lo) / (hi - lo)).collect()
    }

    #[test]
    fn matches_the_loop_oracle_without_upsampling() {
        for seed in 0..20 {
            let (c, h, w) = (3 + (seed as usize % 5), 4 + (seed as usize % 3), 5);
            let a = feature_map(&[1, c, h, w], seed);
            let att = extract_attention(&[a.clone()], 1, h, w).unwrap();
            let want = attention_oracle(&a.to_vec(), c, h, w);
            let got = att.map.to_vec();
            assert_eq!(att.map.shape(), &[1, 1, h, w]);
            for (g, want) in got.iter().zip(&want) {
                assert!((g - want).abs() < 1e-12, "seed {seed}: {g} vs {want}");
            }
        }
    }

    #[test]
    fn values_stay_in_unit_range_and_hit_both_ends() {
        let a = feature_map(&[1, 4, 6, 6], 99);
        let att = extract_attention(&[a], 1, 6, 6).unwrap();
        let v = att.map.to_vec();
        assert!(v.iter().all(|&x| (0.0..=1.0).contains(&x)));
        assert!(v.iter().any(|&x| x == 0.0), "min maps to 0");
        assert!(v.iter().any(|&x| x == 1.0), "max maps to 1");
        assert!(att.pre_max > att.pre_min);
    }

    #[test]
    fn flat_map_degenerates_to_ones() {
        let a = Tensor::full(&[1, 3, 4, 4], 0.7).unwrap();
        let att = extract_attention::<f64>(&[a], 1, 8, 8).unwrap();
        assert!(att.map.to_vec().iter().all(|&v| v == 1.0));
        assert_eq!(att.map.shape(), &[1, 1, 8, 8]);
    }

    #[test]
    fn layer_index_is_one_based_and_validated() {
        let a = feature_map(&[1, 2, 4, 4], 1);
        assert!(extract_attention(&[a.clone()], 0, 4, 4).is_err());
        assert!(matches!(
            extract_attention(&[a], 2, 4, 4),
            Err(ModelError::AttentionLayer { layer: 2, available: 1 })
        ));
    }

    #[test]
    fn upsampled_map_keeps_unit_range() {
        let a = feature_map(&[1, 8, 3, 3], 7);
        let att = extract_attention(&[a], 1, 12, 12).unwrap();
        assert_eq!(att.map.shape(), &[1, 1, 12, 12]);
        assert!(att.map.to_vec().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn attention_map_carries_no_graph() {
        let a = feature_map(&[1, 2, 4, 4], 3);
        let live = a.mul_scalar(1.0); // would record a node if inputs did
        let att = extract_attention(&[live], 1, 8, 8).unwrap();
        assert!(!att.map.needs_grad());
    }

    fn small_cfg(kind: ModelKind) -> ModelConfig {
        ModelConfig {
            kind,
            height: 48,
            width: 48,
            base_width: 2,
            attention_layer: 3,
        }
    }

    fn mr_slice(seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(
            &[1, 1, 48, 48],
            (0..48 * 48).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
            false,
        )
        .unwrap()
    }

    #[test]
    fn gan_variant_output_equals_a_plain_generator_pass() {
        let models = build_models::<f32>(&small_cfg(ModelKind::Gan), 5).unwrap();
        let mr = mr_slice(11);
        let (syn, att) = generate(&models, &mr, NormMode::Eval).unwrap();
        let plain = models.generator.forward(&mr, None, NormMode::Eval).unwrap();
        assert_eq!(syn.to_vec(), plain.to_vec());
        assert!(att.map.to_vec().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn attention_variant_yields_a_half_resolution_unit_range_map() {
        let models = build_models::<f32>(&small_cfg(ModelKind::AttentionGan), 6).unwrap();
        let mr = mr_slice(12);
        let (syn, att) = generate(&models, &mr, NormMode::Train).unwrap();
        assert_eq!(syn.shape(), &[1, 1, 48, 48]);
        assert_eq!(att.map.shape(), &[1, 1, 24, 24]);
        assert!(att.map.to_vec().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(att.source_layer, 3);
    }

    #[test]
    fn two_pass_generation_matches_manual_composition() {
        let models = build_models::<f32>(&small_cfg(ModelKind::AttentionGan), 7).unwrap();
        let mr = mr_slice(13);
        let (syn, att) = generate(&models, &mr, NormMode::Eval).unwrap();

        // Replay the two passes by hand on a second identical build.
        let replay = build_models::<f32>(&small_cfg(ModelKind::AttentionGan), 7).unwrap();
        let d = replay.discriminator.as_ref().unwrap();
        let provisional = replay.generator.forward(&mr, None, NormMode::Eval).unwrap();
        let scored = d.discriminate(&provisional, NormMode::Eval).unwrap();
        let att2 = extract_attention(&scored.activations, 3, 24, 24).unwrap();
        let syn2 = replay
            .generator
            .forward(&mr, Some(&att2.map), NormMode::Eval)
            .unwrap();

        assert_eq!(att.map.to_vec(), att2.map.to_vec());
        assert_eq!(syn.to_vec(), syn2.to_vec());
    }

    #[test]
    fn training_mode_synthesis_records_gradients_only_on_the_second_pass() {
        let models = build_models::<f32>(&small_cfg(ModelKind::AttentionGan), 8).unwrap();
        let mr = mr_slice(14);
        let (syn, att) = generate(&models, &mr, NormMode::Train).unwrap();
        assert!(syn.needs_grad(), "the attended pass trains the generator");
        assert!(!att.map.needs_grad(), "the weighting is a constant");
    }
}
