//! Elementwise operations, activations, reductions, and reshape.
//!
//! Binary operations accept either identical shapes or a rank-4 right-hand
//! side whose channel dimension is 1 (`[N, 1, H, W]` against `[N, C, H, W]`),
//! which is the broadcast needed to weight feature maps with a single-channel
//! spatial map.

use super::{strides_of, Node, Real, Tensor, TensorError};

/// How the right-hand operand maps onto the left-hand shape.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    /// Same shape on both sides.
    Elementwise,
    /// `rhs` is `[N, 1, H, W]`, expanded across the channel axis of `lhs`.
    Channel,
}

fn binary_broadcast(lhs: &[usize], rhs: &[usize]) -> Result<Broadcast, TensorError> {
    if lhs == rhs {
        return Ok(Broadcast::Elementwise);
    }
    if lhs.len() == 4
        && rhs.len() == 4
        && rhs[1] == 1
        && lhs[0] == rhs[0]
        && lhs[2] == rhs[2]
        && lhs[3] == rhs[3]
    {
        return Ok(Broadcast::Channel);
    }
    Err(TensorError::ShapeMismatch {
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    })
}

/// Applies `f(a_i, b_j)` with `b` indexed through the broadcast map.
fn zip_broadcast<T: Real>(
    a: &[T],
    b: &[T],
    shape: &[usize],
    bc: Broadcast,
    f: impl Fn(T, T) -> T,
) -> Vec<T> {
    match bc {
        Broadcast::Elementwise => a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect(),
        Broadcast::Channel => {
            let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
            let plane = h * w;
            let mut out = Vec::with_capacity(a.len());
            for ni in 0..n {
                for ci in 0..c {
                    let a_off = (ni * c + ci) * plane;
                    let b_off = ni * plane;
                    for p in 0..plane {
                        out.push(f(a[a_off + p], b[b_off + p]));
                    }
                }
            }
            out
        }
    }
}

/// Sums a `[N, C, H, W]` buffer over the channel axis into `[N, 1, H, W]`.
fn sum_channels<T: Real>(vals: &[T], shape: &[usize]) -> Vec<T> {
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let plane = h * w;
    let mut out = vec![T::zero(); n * plane];
    for ni in 0..n {
        for ci in 0..c {
            let src = (ni * c + ci) * plane;
            let dst = ni * plane;
            for p in 0..plane {
                out[dst + p] = out[dst + p] + vals[src + p];
            }
        }
    }
    out
}

impl<T: Real> Tensor<T> {
    fn binary(
        &self,
        rhs: &Tensor<T>,
        op: &'static str,
        fwd: impl Fn(T, T) -> T,
        // (grad_out, a, b, bc, shape) -> (d_lhs, d_rhs); each computed only on demand
        make_backward: impl Fn(&Tensor<T>, &Tensor<T>, Broadcast, Vec<usize>) -> super::BackwardFn<T>,
    ) -> Result<Tensor<T>, TensorError> {
        let bc = binary_broadcast(self.shape(), rhs.shape())?;
        let shape = self.shape().to_vec();
        let values = zip_broadcast(&self.values(), &rhs.values(), &shape, bc, fwd);
        let backward = make_backward(self, rhs, bc, shape.clone());
        Ok(Tensor::from_op(
            shape,
            values,
            Node {
                parents: vec![self.clone(), rhs.clone()],
                backward,
                op,
            },
        ))
    }

    /// Elementwise sum. `rhs` may be `[N, 1, H, W]` against a `[N, C, H, W]`
    /// left-hand side.
    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        self.binary(rhs, "add", |x, y| x + y, |lhs, rhs, bc, shape| {
            let (lhs, rhs) = (lhs.clone(), rhs.clone());
            Box::new(move |g: &[T]| {
                let d_lhs = lhs.needs_grad().then(|| g.to_vec());
                let d_rhs = rhs.needs_grad().then(|| match bc {
                    Broadcast::Elementwise => g.to_vec(),
                    Broadcast::Channel => sum_channels(g, &shape),
                });
                vec![d_lhs, d_rhs]
            })
        })
    }

    /// Elementwise difference `self - rhs`, with the same broadcast rule as
    /// [`Tensor::add`].
    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        self.binary(rhs, "sub", |x, y| x - y, |lhs, rhs, bc, shape| {
            let (lhs, rhs) = (lhs.clone(), rhs.clone());
            Box::new(move |g: &[T]| {
                let d_lhs = lhs.needs_grad().then(|| g.to_vec());
                let d_rhs = rhs.needs_grad().then(|| {
                    let summed = match bc {
                        Broadcast::Elementwise => g.to_vec(),
                        Broadcast::Channel => sum_channels(g, &shape),
                    };
                    summed.into_iter().map(|v| -v).collect()
                });
                vec![d_lhs, d_rhs]
            })
        })
    }

    /// Elementwise product, with the same broadcast rule as [`Tensor::add`].
    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        self.binary(rhs, "mul", |x, y| x * y, |lhs, rhs, bc, shape| {
            let (lhs, rhs) = (lhs.clone(), rhs.clone());
            Box::new(move |g: &[T]| {
                let d_lhs = lhs.needs_grad().then(|| {
                    zip_broadcast(g, &rhs.values(), &shape, bc, |gi, y| gi * y)
                });
                let d_rhs = rhs.needs_grad().then(|| {
                    let per_element: Vec<T> =
                        g.iter().zip(lhs.values().iter()).map(|(&gi, &x)| gi * x).collect();
                    match bc {
                        Broadcast::Elementwise => per_element,
                        Broadcast::Channel => sum_channels(&per_element, &shape),
                    }
                });
                vec![d_lhs, d_rhs]
            })
        })
    }

    fn unary(&self, op: &'static str, fwd: impl Fn(T) -> T, dfdx: impl Fn(T) -> T + 'static) -> Tensor<T> {
        let values: Vec<T> = self.values().iter().map(|&x| fwd(x)).collect();
        let parent = self.clone();
        let backward: super::BackwardFn<T> = Box::new(move |g: &[T]| {
            let d = g
                .iter()
                .zip(parent.values().iter())
                .map(|(&gi, &x)| gi * dfdx(x))
                .collect();
            vec![Some(d)]
        });
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            Node {
                parents: vec![self.clone()],
                backward,
                op,
            },
        )
    }

    /// Elementwise absolute value. The derivative at 0 is taken as 0.
    pub fn abs(&self) -> Tensor<T> {
        self.unary(
            "abs",
            |x| x.abs(),
            |x| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    /// Elementwise negation.
    pub fn neg(&self) -> Tensor<T> {
        self.unary("neg", |x| -x, |_| -T::one())
    }

    /// Elementwise square.
    pub fn square(&self) -> Tensor<T> {
        let two = T::from_f64(2.0);
        self.unary("square", |x| x * x, move |x| two * x)
    }

    /// Rectified linear unit; the derivative at 0 is taken as 0.
    pub fn relu(&self) -> Tensor<T> {
        self.unary(
            "relu",
            |x| if x > T::zero() { x } else { T::zero() },
            |x| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    /// Hyperbolic tangent.
    pub fn tanh(&self) -> Tensor<T> {
        let values: Vec<T> = self.values().iter().map(|&x| x.tanh()).collect();
        let saved = values.clone();
        let backward: super::BackwardFn<T> = Box::new(move |g: &[T]| {
            let d = g
                .iter()
                .zip(saved.iter())
                .map(|(&gi, &y)| gi * (T::one() - y * y))
                .collect();
            vec![Some(d)]
        });
        Tensor::from_op(
            self.shape().to_vec(),
            values,
            Node {
                parents: vec![self.clone()],
                backward,
                op: "tanh",
            },
        )
    }

    /// Adds a scalar constant to every element.
    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        self.unary("add_scalar", |x| x + c, |_| T::one())
    }

    /// Subtracts a scalar constant from every element.
    pub fn sub_scalar(&self, c: T) -> Tensor<T> {
        self.unary("sub_scalar", |x| x - c, |_| T::one())
    }

    /// Multiplies every element by a scalar constant.
    pub fn mul_scalar(&self, c: T) -> Tensor<T> {
        self.unary("mul_scalar", move |x| x * c, move |_| c)
    }

    /// Changes the shape without touching values; the element count must be
    /// preserved.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>, TensorError> {
        let to_len = super::validate_shape(shape)?;
        if to_len != self.numel() {
            return Err(TensorError::ReshapeMismatch {
                from: self.shape().to_vec(),
                from_len: self.numel(),
                to: shape.to_vec(),
                to_len,
            });
        }
        let backward: super::BackwardFn<T> = Box::new(move |g: &[T]| vec![Some(g.to_vec())]);
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            Node {
                parents: vec![self.clone()],
                backward,
                op: "reshape",
            },
        ))
    }

    /// Sum over every element, producing a rank-0 tensor.
    pub fn sum_all(&self) -> Tensor<T> {
        let total = self.values().iter().fold(T::zero(), |acc, &x| acc + x);
        let n = self.numel();
        let backward: super::BackwardFn<T> = Box::new(move |g: &[T]| vec![Some(vec![g[0]; n])]);
        Tensor::from_op(
            Vec::new(),
            vec![total],
            Node {
                parents: vec![self.clone()],
                backward,
                op: "sum_all",
            },
        )
    }

    /// Arithmetic mean over every element, producing a rank-0 tensor.
    pub fn mean_all(&self) -> Tensor<T> {
        let n = self.numel();
        let inv = T::one() / T::from_f64(n as f64);
        let total = self.values().iter().fold(T::zero(), |acc, &x| acc + x) * inv;
        let backward: super::BackwardFn<T> = Box::new(move |g: &[T]| vec![Some(vec![g[0] * inv; n])]);
        Tensor::from_op(
            Vec::new(),
            vec![total],
            Node {
                parents: vec![self.clone()],
                backward,
                op: "mean_all",
            },
        )
    }

    /// Minimum over every element. Not differentiable; the result is a
    /// constant.
    pub fn min_all(&self) -> T {
        self.values().iter().fold(T::infinity(), |acc, &x| acc.min(x))
    }

    /// Maximum over every element. Not differentiable; the result is a
    /// constant.
    pub fn max_all(&self) -> T {
        self.values().iter().fold(T::neg_infinity(), |acc, &x| acc.max(x))
    }

    /// Sums over the listed axes; the reduced axes are removed from the
    /// shape. Reducing every axis yields a rank-0 tensor.
    pub fn sum_axes(&self, axes: &[usize]) -> Result<Tensor<T>, TensorError> {
        self.reduce_axes(axes, false)
    }

    /// Means over the listed axes; the reduced axes are removed from the
    /// shape.
    pub fn mean_axes(&self, axes: &[usize]) -> Result<Tensor<T>, TensorError> {
        self.reduce_axes(axes, true)
    }

    fn reduce_axes(&self, axes: &[usize], mean: bool) -> Result<Tensor<T>, TensorError> {
        let rank = self.rank();
        let mut reduce = vec![false; rank];
        for &axis in axes {
            if axis >= rank {
                return Err(TensorError::AxisOutOfRange { axis, rank });
            }
            reduce[axis] = true;
        }
        let in_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = in_shape
            .iter()
            .zip(&reduce)
            .filter(|(_, &r)| !r)
            .map(|(&d, _)| d)
            .collect();
        let reduced_count: usize = in_shape
            .iter()
            .zip(&reduce)
            .filter(|(_, &r)| r)
            .map(|(&d, _)| d)
            .product();
        let in_strides = strides_of(&in_shape);
        let out_strides = strides_of(&out_shape);

        // Map each input flat index to its output flat index.
        let out_index = {
            let in_shape = in_shape.clone();
            let reduce = reduce.clone();
            let in_strides = in_strides.clone();
            let out_strides = out_strides.clone();
            move |flat: usize| -> usize {
                let mut rest = flat;
                let mut out = 0usize;
                let mut out_axis = 0usize;
                for axis in 0..in_shape.len() {
                    let coord = rest / in_strides[axis];
                    rest %= in_strides[axis];
                    if !reduce[axis] {
                        out += coord * out_strides[out_axis];
                        out_axis += 1;
                    }
                }
                out
            }
        };

        let out_len: usize = out_shape.iter().product::<usize>().max(1);
        let mut values = vec![T::zero(); out_len];
        for (flat, &v) in self.values().iter().enumerate() {
            let o = out_index(flat);
            values[o] = values[o] + v;
        }
        let scale = if mean {
            T::one() / T::from_f64(reduced_count as f64)
        } else {
            T::one()
        };
        if mean {
            for v in &mut values {
                *v = *v * scale;
            }
        }

        let in_len = self.numel();
        let backward: super::BackwardFn<T> = Box::new(move |g: &[T]| {
            let mut d = vec![T::zero(); in_len];
            for (flat, slot) in d.iter_mut().enumerate() {
                *slot = g[out_index(flat)] * scale;
            }
            vec![Some(d)]
        });
        Ok(Tensor::from_op(
            out_shape,
            values,
            Node {
                parents: vec![self.clone()],
                backward,
                op: if mean { "mean_axes" } else { "sum_axes" },
            },
        ))
    }
}
