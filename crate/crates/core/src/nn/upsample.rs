//! Corner-aligned bilinear upsampling.

use super::{expect_rank, LayerError};
use crate::tensor::{Node, Real, Tensor};

/// One output coordinate's source interpolation: the two source indices and
/// the weight of the upper one.
fn axis_map(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            if dst == 1 || src == 1 {
                return (0, 0, 0.0);
            }
            // Corners map to corners; interior positions interpolate.
            let pos = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Upsamples `[n, c, h, w]` to `[n, c, target_h, target_w]` with bilinear
/// interpolation whose corner pixels map exactly onto the source corners.
///
/// Only enlargement (or identity) is supported; a smaller target is an
/// error. Constant inputs stay constant, values never leave the source
/// range, and gradients distribute each output's adjoint onto its source
/// corners with the interpolation weights.
pub fn bilinear_upsample<T: Real>(
    input: &Tensor<T>,
    target_h: usize,
    target_w: usize,
) -> Result<Tensor<T>, LayerError> {
    const OP: &str = "bilinear_upsample";
    expect_rank(OP, input, 4)?;
    let s = input.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if target_h < h || target_w < w {
        return Err(LayerError::UpsampleTarget {
            from_h: h,
            from_w: w,
            to_h: target_h,
            to_w: target_w,
        });
    }

    let rows = axis_map(h, target_h);
    let cols = axis_map(w, target_w);

    let x = input.values();
    let mut values = vec![T::zero(); n * c * target_h * target_w];
    for plane_idx in 0..n * c {
        let src = &x[plane_idx * h * w..(plane_idx + 1) * h * w];
        let dst = &mut values[plane_idx * target_h * target_w..(plane_idx + 1) * target_h * target_w];
        for (oy, &(y0, y1, wy)) in rows.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in cols.iter().enumerate() {
                let wy = T::from_f64(wy);
                let wx = T::from_f64(wx);
                let one = T::one();
                let top = src[y0 * w + x0] * (one - wx) + src[y0 * w + x1] * wx;
                let bottom = src[y1 * w + x0] * (one - wx) + src[y1 * w + x1] * wx;
                dst[oy * target_w + ox] = top * (one - wy) + bottom * wy;
            }
        }
    }
    drop(x);

    let shape = vec![n, c, target_h, target_w];
    let src_len = n * c * h * w;
    let backward: crate::tensor::BackwardFn<T> = Box::new(move |grad: &[T]| {
        let mut d = vec![T::zero(); src_len];
        for plane_idx in 0..n * c {
            let g = &grad[plane_idx * target_h * target_w..(plane_idx + 1) * target_h * target_w];
            let dst = &mut d[plane_idx * h * w..(plane_idx + 1) * h * w];
            for (oy, &(y0, y1, wy)) in rows.iter().enumerate() {
                for (ox, &(x0, x1, wx)) in cols.iter().enumerate() {
                    let gv = g[oy * target_w + ox];
                    let wy_t = T::from_f64(wy);
                    let wx_t = T::from_f64(wx);
                    let one = T::one();
                    dst[y0 * w + x0] = dst[y0 * w + x0] + gv * (one - wy_t) * (one - wx_t);
                    dst[y0 * w + x1] = dst[y0 * w + x1] + gv * (one - wy_t) * wx_t;
                    dst[y1 * w + x0] = dst[y1 * w + x0] + gv * wy_t * (one - wx_t);
                    dst[y1 * w + x1] = dst[y1 * w + x1] + gv * wy_t * wx_t;
                }
            }
        }
        vec![Some(d)]
    });
    Ok(Tensor::from_op(
        shape,
        values,
        Node {
            parents: vec![input.clone()],
            backward,
            op: OP,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;

    #[test]
    fn corners_map_to_corners() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0], false).unwrap();
        let y = bilinear_upsample(&x, 5, 5).unwrap();
        let v = y.to_vec();
        assert_eq!(v[0], 1.0);
        assert_eq!(v[4], 2.0);
        assert_eq!(v[20], 3.0);
        assert_eq!(v[24], 4.0);
        // Center interpolates all four corners equally.
        assert!((v[12] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn doubling_a_ramp_stays_a_ramp() {
        let x = Tensor::new(&[1, 1, 1, 3], vec![0.0f64, 1.0, 2.0], false).unwrap();
        let y = bilinear_upsample(&x, 1, 5).unwrap();
        let v = y.to_vec();
        for (i, &val) in v.iter().enumerate() {
            assert!((val - i as f64 * 0.5).abs() < 1e-12, "{v:?}");
        }
    }

    #[test]
    fn constant_input_stays_constant_and_in_range() {
        let x = Tensor::new(&[1, 2, 3, 3], vec![0.75f64; 18], false).unwrap();
        let y = bilinear_upsample(&x, 9, 7).unwrap();
        assert_eq!(y.shape(), &[1, 2, 9, 7]);
        assert!(y.to_vec().iter().all(|&v| (v - 0.75).abs() < 1e-12));
    }

    #[test]
    fn output_never_leaves_the_source_value_range() {
        let vals: Vec<f64> = (0..16).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let x = Tensor::new(&[1, 1, 4, 4], vals, false).unwrap();
        let y = bilinear_upsample(&x, 13, 11).unwrap();
        for v in y.to_vec() {
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn shrinking_is_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 1, 4, 4]).unwrap();
        let err = bilinear_upsample(&x, 3, 8).unwrap_err();
        assert!(matches!(err, LayerError::UpsampleTarget { .. }), "{err}");
    }

    #[test]
    fn identity_target_copies_the_input() {
        let x = Tensor::new(&[1, 1, 2, 3], vec![1.0f64, -2.0, 3.0, 4.0, 5.0, -6.0], false).unwrap();
        let y = bilinear_upsample(&x, 2, 3).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn single_pixel_source_broadcasts() {
        let x = Tensor::new(&[1, 1, 1, 1], vec![0.42f64], false).unwrap();
        let y = bilinear_upsample(&x, 4, 4).unwrap();
        assert!(y.to_vec().iter().all(|&v| v == 0.42));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let x = Tensor::new(
            &[1, 1, 3, 3],
            vec![0.1f64, -0.4, 0.2, 0.9, -0.7, 0.3, 0.5, 0.0, -0.2],
            true,
        )
        .unwrap();
        let report = grad_check(
            |ins| bilinear_upsample(&ins[0], 7, 5).unwrap().square().mean_all(),
            &[x],
            1e-5,
        )
        .unwrap();
        assert_eq!(report.excluded, 0);
        assert!(report.max_rel_err < 1e-8, "max rel {}", report.max_rel_err);
    }
}
