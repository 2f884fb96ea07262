//! Intensity normalization to the generator's tanh range `[-1, 1]`.
//!
//! CT: clip to the fixed Hounsfield window `[-1000, 2000]` and map linearly.
//! MR: map `[0, p99.9]` (per volume) to `[-1, 1]` with clipping.
//!
//! All arithmetic runs in f64 even when the stored grids are f32, so the
//! CT map and its inverse cancel exactly at f32 resolution.

use crate::phantom::mask::{percentile, Mask};
use crate::tensor::Real;

/// Display/training window endpoints in HU.
pub const CT_WINDOW: (f64, f64) = (-1000.0, 2000.0);

const CT_CENTER: f64 = 500.0; // midpoint of the window
const CT_HALF_SPAN: f64 = 1500.0;

/// Clips to the CT window and maps linearly to `[-1, 1]`.
pub fn normalize_ct<T: Real>(hu: &[f32]) -> Vec<T> {
    hu.iter()
        .map(|&v| {
            let clipped = (v as f64).clamp(CT_WINDOW.0, CT_WINDOW.1);
            T::from_f64((clipped - CT_CENTER) / CT_HALF_SPAN)
        })
        .collect()
}

/// Inverse of [`normalize_ct`] back to HU.
pub fn denormalize_ct<T: Real>(normalized: &[T]) -> Vec<f32> {
    normalized
        .iter()
        .map(|v| (v.as_f64() * CT_HALF_SPAN + CT_CENTER) as f32)
        .collect()
}

/// Scale factor for one MR volume: its 99.9th-percentile intensity.
pub fn mr_scale(voxels: &[f32]) -> f64 {
    percentile(voxels, 99.9) as f64
}

/// Maps `[0, scale]` to `[-1, 1]` with clipping; `scale` comes from
/// [`mr_scale`] over the whole volume. A degenerate all-zero scale maps
/// everything to -1.
pub fn normalize_mr<T: Real>(values: &[f32], scale: f64) -> Vec<T> {
    values
        .iter()
        .map(|&v| {
            let n = if scale > 0.0 {
                2.0 * (v as f64).clamp(0.0, scale) / scale - 1.0
            } else {
                -1.0
            };
            T::from_f64(n)
        })
        .collect()
}

/// Overwrites everything outside the head with the given fill value
/// (air-equivalent -1 for normalized grids).
pub fn apply_mask<T: Real>(values: &mut [T], mask: &Mask, fill: T) {
    debug_assert_eq!(values.len(), mask.height() * mask.width());
    for (v, &inside) in values.iter_mut().zip(mask.data()) {
        if !inside {
            *v = fill;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ct_window_endpoints_and_midpoint() {
        let n = normalize_ct::<f64>(&[-1000.0, 2000.0, 500.0]);
        assert_eq!(n, vec![-1.0, 1.0, 0.0]);
    }

    #[test]
    fn ct_values_outside_the_window_clip() {
        let n = normalize_ct::<f64>(&[-1024.0, 3000.0]);
        assert_eq!(n, vec![-1.0, 1.0]);
    }

    #[test]
    fn ct_round_trip_is_exact_at_f32_resolution() {
        // Phantom HU levels plus awkward values across the window.
        let mut hu: Vec<f32> = vec![-1000.0, -465.0, 0.0, 10.0, 40.0, 200.0, 1000.0, 2000.0];
        hu.extend((0..1000).map(|i| -1000.0 + 3.0 * i as f32 + 0.125));
        let clipped: Vec<f32> = hu
            .iter()
            .map(|&v| (v as f64).clamp(CT_WINDOW.0, CT_WINDOW.1) as f32)
            .collect();
        let back = denormalize_ct::<f64>(&normalize_ct::<f64>(&hu));
        assert_eq!(back, clipped);
    }

    #[test]
    fn f32_storage_of_the_normalized_grid_costs_under_a_thousandth_hu() {
        let hu: Vec<f32> = (0..3000).map(|i| -1000.0 + i as f32).collect();
        let back = denormalize_ct::<f32>(&normalize_ct::<f32>(&hu));
        for (&b, &h) in back.iter().zip(&hu) {
            assert!((b - h).abs() < 1e-3, "{h} came back as {b}");
        }
    }

    #[test]
    fn mr_at_its_own_percentile_maps_to_one() {
        let v = vec![5.0f32; 64];
        let scale = mr_scale(&v);
        let n = normalize_mr::<f64>(&v, scale);
        assert!(n.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn mr_zero_maps_to_minus_one_and_hot_pixels_clip() {
        let n = normalize_mr::<f64>(&[0.0, 2.0, 4.0, 100.0], 4.0);
        assert_eq!(n, vec![-1.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn degenerate_all_zero_volume_maps_to_minus_one() {
        let v = vec![0.0f32; 16];
        let n = normalize_mr::<f64>(&v, mr_scale(&v));
        assert!(n.iter().all(|&x| x == -1.0));
    }

    #[test]
    fn masking_overwrites_only_the_outside() {
        let mask = Mask::from_fn(2, 2, |y, x| y == 0 && x == 0);
        let mut values = vec![0.5f64, 0.5, 0.5, 0.5];
        apply_mask(&mut values, &mask, -1.0);
        assert_eq!(values, vec![0.5, -1.0, -1.0, -1.0]);
    }
}
