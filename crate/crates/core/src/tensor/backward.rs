//! Reverse-mode differentiation over the recorded operation graph.

use std::collections::{HashMap, HashSet};

use super::{AdjointMap, Real, Tensor, TensorError};

/// Gradients keyed by tensor identity, as returned by [`backward`].
pub struct GradMap<T: Real> {
    grads: AdjointMap<T>,
}

impl<T: Real> GradMap<T> {
    pub fn get(&self, tensor: &Tensor<T>) -> Option<&Vec<T>> {
        self.grads.get(&tensor.id())
    }

    pub fn get_by_id(&self, id: u64) -> Option<&Vec<T>> {
        self.grads.get(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Propagates `d loss / d x` from a scalar `loss` to every reachable
/// `requires_grad` leaf.
///
/// Each leaf's gradient is accumulated into its `grad` buffer (summing with
/// whatever a previous backward pass left there) and returned in the
/// [`GradMap`], which holds only this call's contribution. Errors when the
/// loss is not a single element or when no gradient-requiring leaf is
/// reachable.
pub fn backward<T: Real>(loss: &Tensor<T>) -> Result<GradMap<T>, TensorError> {
    if loss.numel() != 1 {
        return Err(TensorError::NonScalarLoss {
            shape: loss.shape().to_vec(),
        });
    }

    // Iterative post-order walk: every tensor lands after all tensors that
    // consume it, so the reversed list is a valid processing order.
    let order = topo_order(loss);

    let mut adjoints: AdjointMap<T> = HashMap::new();
    adjoints.insert(loss.id(), vec![T::one()]);

    let mut leaf_grads: AdjointMap<T> = HashMap::new();
    for tensor in order.iter().rev() {
        let Some(adjoint) = adjoints.remove(&tensor.id()) else {
            // Visited but received no adjoint: a parent of a node whose
            // backward returned None for it.
            continue;
        };
        if tensor.requires_grad() {
            tensor.accumulate_grad(&adjoint);
            leaf_grads.insert(tensor.id(), adjoint.clone());
        }
        if let Some(node) = tensor.node() {
            let contributions = (node.backward)(&adjoint);
            debug_assert_eq!(contributions.len(), node.parents.len());
            for (parent, contribution) in node.parents.iter().zip(contributions) {
                let Some(contribution) = contribution else {
                    continue;
                };
                debug_assert_eq!(contribution.len(), parent.numel());
                adjoints
                    .entry(parent.id())
                    .and_modify(|acc| {
                        for (ai, ci) in acc.iter_mut().zip(&contribution) {
                            *ai = *ai + *ci;
                        }
                    })
                    .or_insert(contribution);
            }
        }
    }

    if leaf_grads.is_empty() {
        return Err(TensorError::Unconnected);
    }
    Ok(GradMap { grads: leaf_grads })
}

fn topo_order<T: Real>(root: &Tensor<T>) -> Vec<Tensor<T>> {
    enum Step<T: Real> {
        Enter(Tensor<T>),
        Exit(Tensor<T>),
    }

    let mut order = Vec::new();
    let mut seen: HashSet<u64> = HashSet::new();
    let mut stack = vec![Step::Enter(root.clone())];
    while let Some(step) = stack.pop() {
        match step {
            Step::Enter(t) => {
                if !seen.insert(t.id()) {
                    continue;
                }
                if let Some(node) = t.node() {
                    stack.push(Step::Exit(t.clone()));
                    for parent in &node.parents {
                        if parent.needs_grad() && !seen.contains(&parent.id()) {
                            stack.push(Step::Enter(parent.clone()));
                        }
                    }
                } else {
                    order.push(t);
                }
            }
            Step::Exit(t) => order.push(t),
        }
    }
    order
}
