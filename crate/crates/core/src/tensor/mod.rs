//! Dense n-dimensional tensors with reverse-mode automatic differentiation.
//!
//! Tensors are immutable after construction (only gradient buffers and
//! optimizer-driven parameter updates mutate storage). Every operation that
//! runs while gradients are enabled records a node holding its parents and a
//! backward closure; [`backward`] replays those closures in reverse
//! topological order and accumulates adjoints into the `requires_grad`
//! leaves.
//!
//! All math is generic over [`Real`] so the same graph code runs in `f32`
//! (training) and `f64` (gradient checking).

mod adam;
mod backward;
mod grad_check;
mod ops;

pub use adam::{AdamHyper, AdamState, ParamMoments};
pub use backward::{backward, GradMap};
pub use grad_check::{grad_check, GradCheckReport};

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use num_traits::Float;
use thiserror::Error;

/// Errors produced by tensor construction and graph operations.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("value length mismatch: shape {shape:?} needs {expected} values, got {got}")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("dimension {axis} of shape {shape:?} is zero; all dimensions must be >= 1")]
    ZeroDim { shape: Vec<usize>, axis: usize },
    #[error("shapes {lhs:?} and {rhs:?} are not elementwise-compatible")]
    ShapeMismatch { lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("axis {axis} out of range for rank-{rank} tensor")]
    AxisOutOfRange { axis: usize, rank: usize },
    #[error("reshape from {from:?} ({from_len} values) to {to:?} ({to_len} values)")]
    ReshapeMismatch {
        from: Vec<usize>,
        from_len: usize,
        to: Vec<usize>,
        to_len: usize,
    },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("loss is not connected to any tensor that requires gradients")]
    Unconnected,
    #[error("parameter `{name}` has no gradient in the supplied gradient map")]
    MissingGrad { name: String },
    #[error("optimizer state for `{name}` has {got} values, parameter has {expected}")]
    MomentLen {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("optimizer state entry `{name}` does not match any parameter")]
    UnknownMoment { name: String },
    #[error("optimizer state is missing an entry for parameter `{name}`")]
    MissingMoment { name: String },
    #[error("gradient check needs a scalar objective, got shape {shape:?}")]
    NonScalarObjective { shape: Vec<usize> },
    #[error("gradient check input {index} does not require gradients")]
    InputWithoutGrad { index: usize },
    #[error("tensor with {len} values cannot be read as a scalar")]
    NotScalar { len: usize },
}

/// Floating-point scalar usable for tensor math.
///
/// Implemented for `f32` and `f64`; the GEMM hook routes matrix products to
/// the corresponding `matrixmultiply` kernel.
pub trait Real: Float + fmt::Debug + fmt::Display + Default + Send + Sync + 'static {
    /// Short dtype tag used in diagnostics and checkpoint entries.
    const DTYPE: &'static str;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = alpha * a @ b + beta * c` for row-major contiguous `a` (m x k),
    /// `b` (k x n), `c` (m x n). The argument order follows the BLAS gemm
    /// convention.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]);
}

impl Real for f32 {
    const DTYPE: &'static str = "f32";

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    fn gemm(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]) {
        assert_eq!(a.len(), m * k, "gemm: lhs buffer length");
        assert_eq!(b.len(), k * n, "gemm: rhs buffer length");
        assert_eq!(c.len(), m * n, "gemm: out buffer length");
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                k as isize,
                1,
                b.as_ptr(),
                n as isize,
                1,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

impl Real for f64 {
    const DTYPE: &'static str = "f64";

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    fn gemm(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]) {
        assert_eq!(a.len(), m * k, "gemm: lhs buffer length");
        assert_eq!(b.len(), k * n, "gemm: rhs buffer length");
        assert_eq!(c.len(), m * n, "gemm: out buffer length");
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                k as isize,
                1,
                b.as_ptr(),
                n as isize,
                1,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

static NEXT_TENSOR_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with gradient recording disabled on the current thread.
///
/// Operations executed inside build no graph nodes, so their outputs are
/// plain constants.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    GRAD_ENABLED.with(|flag| {
        let prev = flag.get();
        flag.set(false);
        let out = f();
        flag.set(prev);
        out
    })
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|flag| flag.get())
}

/// Backward closure: maps the adjoint of the output to per-parent adjoint
/// contributions (`None` for parents that do not need gradients).
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Option<Vec<T>>>>;

pub(crate) struct Node<T: Real> {
    pub parents: Vec<Tensor<T>>,
    pub backward: BackwardFn<T>,
    #[allow(dead_code)]
    pub op: &'static str,
}

struct Inner<T: Real> {
    id: u64,
    shape: Vec<usize>,
    values: RefCell<Vec<T>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<T>>>,
    node: Option<Node<T>>,
}

/// Reference-counted dense tensor. Cloning is cheap and shares storage.
pub struct Tensor<T: Real> {
    inner: Rc<Inner<T>>,
}

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

fn validate_shape(shape: &[usize]) -> Result<usize, TensorError> {
    let mut n = 1usize;
    for (axis, &d) in shape.iter().enumerate() {
        if d == 0 {
            return Err(TensorError::ZeroDim {
                shape: shape.to_vec(),
                axis,
            });
        }
        n *= d;
    }
    Ok(n)
}

impl<T: Real> Tensor<T> {
    /// Builds a leaf tensor, validating that every dimension is >= 1 and that
    /// the value buffer length matches the shape product.
    pub fn new(shape: &[usize], values: Vec<T>, requires_grad: bool) -> Result<Self, TensorError> {
        let expected = validate_shape(shape)?;
        if values.len() != expected {
            return Err(TensorError::LengthMismatch {
                shape: shape.to_vec(),
                expected,
                got: values.len(),
            });
        }
        Ok(Self::make(shape.to_vec(), values, requires_grad, None))
    }

    /// Leaf filled with zeros.
    pub fn zeros(shape: &[usize]) -> Result<Self, TensorError> {
        let n = validate_shape(shape)?;
        Ok(Self::make(shape.to_vec(), vec![T::zero(); n], false, None))
    }

    /// Leaf filled with a constant.
    pub fn full(shape: &[usize], value: T) -> Result<Self, TensorError> {
        let n = validate_shape(shape)?;
        Ok(Self::make(shape.to_vec(), vec![value; n], false, None))
    }

    /// Rank-0 constant.
    pub fn scalar(value: T) -> Self {
        Self::make(Vec::new(), vec![value], false, None)
    }

    pub(crate) fn make(shape: Vec<usize>, values: Vec<T>, requires_grad: bool, node: Option<Node<T>>) -> Self {
        debug_assert_eq!(values.len(), shape.iter().product::<usize>().max(1));
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_TENSOR_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                values: RefCell::new(values),
                requires_grad,
                grad: RefCell::new(None),
                node,
            }),
        }
    }

    /// Wraps the result of an operation, attaching `node` only while gradient
    /// recording is enabled and at least one parent needs gradients.
    pub(crate) fn from_op(shape: Vec<usize>, values: Vec<T>, node: Node<T>) -> Self {
        let record = grad_enabled() && node.parents.iter().any(Tensor::needs_grad);
        Self::make(shape, values, false, record.then_some(node))
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.values.borrow().len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// True when this tensor participates in gradient flow, either as a
    /// trainable leaf or as the output of a recorded operation.
    pub fn needs_grad(&self) -> bool {
        self.inner.requires_grad || self.inner.node.is_some()
    }

    pub(crate) fn node(&self) -> Option<&Node<T>> {
        self.inner.node.as_ref()
    }

    /// Immutable view of the value buffer (row-major).
    pub fn values(&self) -> Ref<'_, Vec<T>> {
        self.inner.values.borrow()
    }

    /// Mutable access for optimizer updates and checkpoint loading. Callers
    /// must not resize the buffer or mutate tensors that sit inside a live
    /// graph.
    pub(crate) fn values_mut(&self) -> RefMut<'_, Vec<T>> {
        self.inner.values.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.values.borrow().clone()
    }

    /// Reads a single-element tensor as a scalar.
    pub fn item(&self) -> Result<T, TensorError> {
        let v = self.inner.values.borrow();
        if v.len() != 1 {
            return Err(TensorError::NotScalar { len: v.len() });
        }
        Ok(v[0])
    }

    /// Copy of the accumulated gradient, if any backward pass reached this
    /// leaf.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, contribution: &[T]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contribution) {
                    *gi = *gi + *ci;
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }

    /// Constant copy sharing no graph history: same values, no node, no
    /// gradient requirement.
    pub fn detach(&self) -> Tensor<T> {
        Self::make(self.inner.shape.clone(), self.to_vec(), false, None)
    }
}

/// Ordered, named collection of trainable parameter tensors.
///
/// The ordering is fixed by construction and shared by the optimizer and the
/// checkpoint format, which keeps snapshots byte-stable across runs.
pub struct ParamSet<T: Real> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        self.entries.push((name.into(), tensor));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grads(&self) {
        for (_, t) in &self.entries {
            t.zero_grad();
        }
    }
}

/// Row-major strides for a shape.
pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Gradient lookup by tensor identity, keyed on [`Tensor::id`].
pub(crate) type AdjointMap<T> = HashMap<u64, Vec<T>>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_validates_length_against_shape() {
        let err = Tensor::<f64>::new(&[3], vec![1.0, 2.0], false).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('3') && msg.contains('2'), "message should carry both lengths: {msg}");
    }

    #[test]
    fn new_rejects_zero_dimensions() {
        let err = Tensor::<f64>::new(&[2, 0], vec![], false).unwrap_err();
        assert!(matches!(err, TensorError::ZeroDim { axis: 1, .. }));
    }

    #[test]
    fn scalar_has_rank_zero() {
        let s = Tensor::scalar(4.0f64);
        assert_eq!(s.rank(), 0);
        assert_eq!(s.numel(), 1);
        assert_eq!(s.item().unwrap(), 4.0);
    }

    #[test]
    fn item_rejects_multielement_tensors() {
        let t = Tensor::new(&[2], vec![1.0f64, 2.0], false).unwrap();
        assert!(matches!(t.item(), Err(TensorError::NotScalar { len: 2 })));
    }

    #[test]
    fn detach_copies_values_and_drops_history() {
        let x = Tensor::new(&[2], vec![1.0f64, -2.0], true).unwrap();
        let y = x.square();
        assert!(y.needs_grad());
        let d = y.detach();
        assert!(!d.needs_grad());
        assert_eq!(d.to_vec(), y.to_vec());
        assert_ne!(d.id(), y.id());
    }

    #[test]
    fn no_grad_suppresses_node_recording() {
        let x = Tensor::new(&[2], vec![1.0f64, 2.0], true).unwrap();
        let y = no_grad(|| x.square());
        assert!(!y.needs_grad());
    }

    #[test]
    fn ids_are_unique() {
        let a = Tensor::<f32>::zeros(&[1]).unwrap();
        let b = Tensor::<f32>::zeros(&[1]).unwrap();
        assert_ne!(a.id(), b.id());
    }

    #[test]
    fn strides_are_row_major() {
        assert_eq!(strides_of(&[2, 3, 4]), vec![12, 4, 1]);
        assert_eq!(strides_of(&[5]), vec![1]);
        assert!(strides_of(&[]).is_empty());
    }

    #[test]
    fn gemm_f32_matches_manual_product() {
        // 2x3 @ 3x2
        let a = [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0f32, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut c = [0.0f32; 4];
        f32::gemm(2, 3, 2, 1.0, &a, &b, 0.0, &mut c);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn gemm_accumulates_with_beta_one() {
        let a = [1.0f64, 0.0, 0.0, 1.0];
        let b = [2.0f64, 3.0, 4.0, 5.0];
        let mut c = [1.0f64; 4];
        f64::gemm(2, 2, 2, 1.0, &a, &b, 1.0, &mut c);
        assert_eq!(c, [3.0, 4.0, 5.0, 6.0]);
    }
}
