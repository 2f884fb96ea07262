//! 2-D convolution and transposed convolution.
//!
//! Both directions share one weight layout `[a, b, kh, kw]`: a convolution
//! consumes `b` input channels and produces `a`, a transposed convolution
//! consumes `a` and produces `b`. With identical stride and padding the two
//! are exact adjoints of each other, which is what ties the generator's
//! decoder to its encoder and the gradient of one to the forward pass of the
//! other.
//!
//! Spatial work is lowered to matrix products: patches are unrolled with
//! im2col so each batch element becomes a single GEMM, and the scatter-add
//! inverse (col2im) implements both the transposed forward pass and the
//! input gradient.

use rand::Rng;

use super::{expect_rank, normal_init, LayerError};
use crate::tensor::{Node, Real, Tensor};

#[derive(Clone, Copy)]
struct ConvGeom {
    batch: usize,
    in_ch: usize,
    out_ch: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unrolls sliding-window patches of one image `[c, h, w]` into a
/// `[c*kh*kw, out_h*out_w]` matrix; out-of-bounds taps read as zero.
fn im2col<T: Real>(img: &[T], g: &ConvGeom, cols: &mut [T]) {
    let positions = g.positions();
    debug_assert_eq!(cols.len(), g.patch_len() * positions);
    for c in 0..g.in_ch {
        let img_plane = &img[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let out_row = &mut cols[row * positions..(row + 1) * positions];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let dst = &mut out_row[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.in_h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src_row = &img_plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, slot) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        *slot = if ix < 0 || ix >= g.in_w as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds a `[c*kh*kw, out_h*out_w]` matrix
/// back onto an image `[c, h, w]`.
fn col2im<T: Real>(cols: &[T], g: &ConvGeom, img: &mut [T]) {
    let positions = g.positions();
    debug_assert_eq!(cols.len(), g.patch_len() * positions);
    debug_assert_eq!(img.len(), g.in_ch * g.in_h * g.in_w);
    img.fill(T::zero());
    for c in 0..g.in_ch {
        let img_plane = &mut img[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src_row = &cols[row * positions..(row + 1) * positions];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst_row = &mut img_plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    let src = &src_row[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.in_w as isize {
                            dst_row[ix as usize] = dst_row[ix as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

fn transpose<T: Real>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    debug_assert_eq!(src.len(), rows * cols);
    debug_assert_eq!(dst.len(), rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

fn check_conv_params<T: Real>(
    op: &'static str,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    flow_channel_axis: usize,
    bias_axis: usize,
) -> Result<(), LayerError> {
    expect_rank(op, input, 4)?;
    if weight.rank() != 4 {
        return Err(LayerError::ParamLen {
            op,
            name: "weight",
            expected: 4,
            got: weight.rank(),
        });
    }
    let expected_in = weight.shape()[flow_channel_axis];
    if input.shape()[1] != expected_in {
        return Err(LayerError::Channels {
            op,
            expected: expected_in,
            got: input.shape()[1],
        });
    }
    let expected_bias = weight.shape()[bias_axis];
    if bias.rank() != 1 || bias.shape()[0] != expected_bias {
        return Err(LayerError::ParamLen {
            op,
            name: "bias",
            expected: expected_bias,
            got: bias.numel(),
        });
    }
    Ok(())
}

/// Strided 2-D convolution with zero padding.
///
/// `input` is `[n, b, h, w]`, `weight` is `[a, b, kh, kw]`, `bias` is `[a]`;
/// the output is `[n, a, (h + 2*padding - kh)/stride + 1, ...]`. Gradients
/// flow to the input, the weight, and the bias.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>, LayerError> {
    const OP: &str = "conv2d";
    check_conv_params(OP, input, weight, bias, 1, 0)?;
    assert!(stride >= 1, "conv2d stride must be >= 1");

    let (n, _, in_h, in_w) = shape4(input);
    let (out_ch, in_ch, kh, kw) = shape4(weight);
    let out_h_i = (in_h as isize + 2 * padding as isize - kh as isize) / stride as isize + 1;
    let out_w_i = (in_w as isize + 2 * padding as isize - kw as isize) / stride as isize + 1;
    if out_h_i < 1 || out_w_i < 1 || in_h + 2 * padding < kh || in_w + 2 * padding < kw {
        return Err(LayerError::OutputTooSmall {
            op: OP,
            in_h,
            in_w,
            out_h: out_h_i,
            out_w: out_w_i,
            kernel: kh,
            stride,
            padding,
        });
    }
    let g = ConvGeom {
        batch: n,
        in_ch,
        out_ch,
        in_h,
        in_w,
        out_h: out_h_i as usize,
        out_w: out_w_i as usize,
        kh,
        kw,
        stride,
        padding,
    };

    let positions = g.positions();
    let patch = g.patch_len();
    let mut cols = vec![T::zero(); patch * positions];
    let mut values = vec![T::zero(); n * out_ch * positions];
    {
        let x = input.values();
        let w = weight.values();
        let b = bias.values();
        let img_len = in_ch * in_h * in_w;
        for ni in 0..n {
            im2col(&x[ni * img_len..(ni + 1) * img_len], &g, &mut cols);
            let out = &mut values[ni * out_ch * positions..(ni + 1) * out_ch * positions];
            T::gemm(out_ch, patch, positions, T::one(), &w, &cols, T::zero(), out);
            for a in 0..out_ch {
                let row = &mut out[a * positions..(a + 1) * positions];
                for v in row.iter_mut() {
                    *v = *v + b[a];
                }
            }
        }
    }

    let shape = vec![n, out_ch, g.out_h, g.out_w];
    let (input_c, weight_c, bias_c) = (input.clone(), weight.clone(), bias.clone());
    let backward: crate::tensor::BackwardFn<T> = Box::new(move |grad: &[T]| {
        conv2d_backward(grad, &input_c, &weight_c, &bias_c, &g)
    });
    Ok(Tensor::from_op(
        shape,
        values,
        Node {
            parents: vec![input.clone(), weight.clone(), bias.clone()],
            backward,
            op: OP,
        },
    ))
}

fn conv2d_backward<T: Real>(
    grad: &[T],
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    g: &ConvGeom,
) -> Vec<Option<Vec<T>>> {
    let positions = g.positions();
    let patch = g.patch_len();
    let img_len = g.in_ch * g.in_h * g.in_w;
    let x = input.values();
    let w = weight.values();

    let need_x = input.needs_grad();
    let need_w = weight.needs_grad();
    let need_b = bias.needs_grad();

    let mut dx = need_x.then(|| vec![T::zero(); g.batch * img_len]);
    let mut dw = need_w.then(|| vec![T::zero(); w.len()]);
    let mut db = need_b.then(|| vec![T::zero(); g.out_ch]);

    // W^T once, cols / cols^T buffers reused across the batch.
    let mut w_t = need_x.then(|| {
        let mut buf = vec![T::zero(); w.len()];
        transpose(&w, g.out_ch, patch, &mut buf);
        buf
    });
    let mut cols = vec![T::zero(); patch * positions];
    let mut cols_t = need_w.then(|| vec![T::zero(); patch * positions]);
    let mut dcols = need_x.then(|| vec![T::zero(); patch * positions]);

    for ni in 0..g.batch {
        let g_n = &grad[ni * g.out_ch * positions..(ni + 1) * g.out_ch * positions];
        if need_w || need_x {
            // dw needs this batch's patches; dx reuses the buffer for scatter.
            im2col(&x[ni * img_len..(ni + 1) * img_len], g, &mut cols);
        }
        if let (Some(dw), Some(cols_t)) = (dw.as_mut(), cols_t.as_mut()) {
            transpose(&cols, patch, positions, cols_t);
            T::gemm(g.out_ch, positions, patch, T::one(), g_n, cols_t, T::one(), dw);
        }
        if let (Some(dx), Some(w_t), Some(dcols)) = (dx.as_mut(), w_t.as_mut(), dcols.as_mut()) {
            T::gemm(patch, g.out_ch, positions, T::one(), w_t, g_n, T::zero(), dcols);
            col2im(dcols, g, &mut dx[ni * img_len..(ni + 1) * img_len]);
        }
        if let Some(db) = db.as_mut() {
            for a in 0..g.out_ch {
                let row = &g_n[a * positions..(a + 1) * positions];
                let mut acc = T::zero();
                for &v in row {
                    acc = acc + v;
                }
                db[a] = db[a] + acc;
            }
        }
    }
    vec![dx, dw, db]
}

/// Strided 2-D transposed convolution (fractionally strided upsampling).
///
/// `input` is `[n, a, h, w]`, `weight` is `[a, b, kh, kw]`, `bias` is `[b]`;
/// the output is `[n, b, (h-1)*stride - 2*padding + kh, ...]`. For a shared
/// weight this is the exact adjoint of [`conv2d`] with the same stride and
/// padding.
pub fn conv_transpose2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>, LayerError> {
    const OP: &str = "conv_transpose2d";
    check_conv_params(OP, input, weight, bias, 0, 1)?;
    assert!(stride >= 1, "conv_transpose2d stride must be >= 1");

    let (n, _, in_h, in_w) = shape4(input);
    let (flow_in, flow_out, kh, kw) = shape4(weight);
    let out_h_i = (in_h as isize - 1) * stride as isize - 2 * padding as isize + kh as isize;
    let out_w_i = (in_w as isize - 1) * stride as isize - 2 * padding as isize + kw as isize;
    if out_h_i < 1 || out_w_i < 1 {
        return Err(LayerError::OutputTooSmall {
            op: OP,
            in_h,
            in_w,
            out_h: out_h_i,
            out_w: out_w_i,
            kernel: kh,
            stride,
            padding,
        });
    }
    // The matching direct convolution maps [flow_out, out_h, out_w] down to
    // [flow_in, in_h, in_w]; its geometry drives im2col/col2im here.
    let g = ConvGeom {
        batch: n,
        in_ch: flow_out,
        out_ch: flow_in,
        in_h: out_h_i as usize,
        in_w: out_w_i as usize,
        out_h: in_h,
        out_w: in_w,
        kh,
        kw,
        stride,
        padding,
    };

    let positions = g.positions(); // = in_h * in_w
    let patch = g.patch_len(); // = flow_out * kh * kw
    let out_img_len = flow_out * g.in_h * g.in_w;
    let mut w_t = vec![T::zero(); weight.numel()];
    let mut cols = vec![T::zero(); patch * positions];
    let mut values = vec![T::zero(); n * out_img_len];
    {
        let x = input.values();
        let w = weight.values();
        let b = bias.values();
        transpose(&w, flow_in, patch, &mut w_t);
        let in_img_len = flow_in * in_h * in_w;
        for ni in 0..n {
            let x_n = &x[ni * in_img_len..(ni + 1) * in_img_len];
            T::gemm(patch, flow_in, positions, T::one(), &w_t, x_n, T::zero(), &mut cols);
            let out = &mut values[ni * out_img_len..(ni + 1) * out_img_len];
            col2im(&cols, &g, out);
            for c in 0..flow_out {
                let plane = &mut out[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
                for v in plane.iter_mut() {
                    *v = *v + b[c];
                }
            }
        }
    }

    let shape = vec![n, flow_out, g.in_h, g.in_w];
    let (input_c, weight_c, bias_c) = (input.clone(), weight.clone(), bias.clone());
    let backward: crate::tensor::BackwardFn<T> = Box::new(move |grad: &[T]| {
        conv_transpose2d_backward(grad, &input_c, &weight_c, &bias_c, &g)
    });
    Ok(Tensor::from_op(
        shape,
        values,
        Node {
            parents: vec![input.clone(), weight.clone(), bias.clone()],
            backward,
            op: OP,
        },
    ))
}

fn conv_transpose2d_backward<T: Real>(
    grad: &[T],
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    g: &ConvGeom,
) -> Vec<Option<Vec<T>>> {
    let positions = g.positions();
    let patch = g.patch_len();
    let flow_in = g.out_ch;
    let flow_out = g.in_ch;
    let out_img_len = flow_out * g.in_h * g.in_w;
    let in_img_len = flow_in * g.out_h * g.out_w;
    let x = input.values();
    let w = weight.values();

    let need_x = input.needs_grad();
    let need_w = weight.needs_grad();
    let need_b = bias.needs_grad();

    let mut dx = need_x.then(|| vec![T::zero(); g.batch * in_img_len]);
    let mut dw = need_w.then(|| vec![T::zero(); w.len()]);
    let mut db = need_b.then(|| vec![T::zero(); flow_out]);

    let mut gcols = vec![T::zero(); patch * positions];
    let mut gcols_t = need_w.then(|| vec![T::zero(); patch * positions]);

    for ni in 0..g.batch {
        let g_n = &grad[ni * out_img_len..(ni + 1) * out_img_len];
        if need_x || need_w {
            // The output gradient plays the "image" role of the matching
            // direct convolution.
            im2col(g_n, g, &mut gcols);
        }
        if let Some(dx) = dx.as_mut() {
            let dst = &mut dx[ni * in_img_len..(ni + 1) * in_img_len];
            T::gemm(flow_in, patch, positions, T::one(), &w, &gcols, T::zero(), dst);
        }
        if let (Some(dw), Some(gcols_t)) = (dw.as_mut(), gcols_t.as_mut()) {
            transpose(&gcols, patch, positions, gcols_t);
            let x_n = &x[ni * in_img_len..(ni + 1) * in_img_len];
            T::gemm(flow_in, positions, patch, T::one(), x_n, gcols_t, T::one(), dw);
        }
        if let Some(db) = db.as_mut() {
            for c in 0..flow_out {
                let plane = &g_n[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
                let mut acc = T::zero();
                for &v in plane {
                    acc = acc + v;
                }
                db[c] = db[c] + acc;
            }
        }
    }
    vec![dx, dw, db]
}

fn shape4<T: Real>(t: &Tensor<T>) -> (usize, usize, usize, usize) {
    let s = t.shape();
    (s[0], s[1], s[2], s[3])
}

/// Convolution layer: learnable weight `[out, in, k, k]` and bias `[out]`.
pub struct Conv2d<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Real> Conv2d<T> {
    /// Weights drawn from N(0, 0.02^2); biases start at zero.
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = Tensor::new(
            &[out_ch, in_ch, kernel, kernel],
            normal_init(rng, out_ch * in_ch * kernel * kernel),
            true,
        )
        .expect("conv weight shape");
        let bias = Tensor::new(&[out_ch], vec![T::zero(); out_ch], true).expect("conv bias shape");
        Conv2d {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
        conv2d(x, &self.weight, &self.bias, self.stride, self.padding)
    }
}

/// Transposed convolution layer: learnable weight `[in, out, k, k]` and bias
/// `[out]`.
pub struct ConvTranspose2d<T: Real> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Real> ConvTranspose2d<T> {
    /// Weights drawn from N(0, 0.02^2); biases start at zero.
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = Tensor::new(
            &[in_ch, out_ch, kernel, kernel],
            normal_init(rng, in_ch * out_ch * kernel * kernel),
            true,
        )
        .expect("transposed conv weight shape");
        let bias = Tensor::new(&[out_ch], vec![T::zero(); out_ch], true).expect("transposed conv bias shape");
        ConvTranspose2d {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, LayerError> {
        conv_transpose2d(x, &self.weight, &self.bias, self.stride, self.padding)
    }
}
