//! Minimal differentiable layer for small feature networks: values,
//! input Jacobians, and parameter gradients of losses that themselves
//! contain input Jacobians.

mod activation;
mod batch;
mod net;

pub use activation::Activation;
pub use batch::TangentWorkspace;
pub use net::{EvalRecord, FeatureNet, LayerView};

use crate::scalar::Scalar;

/// Per-sample view handed to a loss closure by [`loss_parameter_gradient`].
pub struct SampleOutputs<'a, T> {
    pub index: usize,
    /// `φ(s)`, length `l`.
    pub value: &'a [T],
    /// `∂φ/∂s` as `n` rows of length `l` (row `j` is the derivative along `s_j`).
    /// Empty when tangents were not requested.
    pub tangents: &'a [Vec<T>],
}

/// Adjoints a loss closure writes for one sample.
pub struct SampleAdjoints<'a, T> {
    /// `∂loss/∂φ`, length `l`.
    pub value: &'a mut [T],
    /// `∂loss/∂(∂φ/∂s_j)`, `n` rows of length `l`.
    pub tangents: &'a mut [Vec<T>],
}

/// Evaluates `Σ_b loss_b(φ(s_b), ∂φ/∂s(s_b))` and its gradient with respect
/// to the network parameters.
///
/// The closure returns the sample's loss contribution and fills in the
/// adjoints of the quantities it used. States are row-major `B×n`.
pub fn loss_parameter_gradient<T, F>(
    net: &FeatureNet<T>,
    states: &[T],
    with_tangents: bool,
    mut per_sample: F,
) -> (T, Vec<T>)
where
    T: Scalar,
    F: FnMut(&SampleOutputs<'_, T>, &mut SampleAdjoints<'_, T>) -> T,
{
    let mut ws = TangentWorkspace::new();
    net.forward_batch(states, with_tangents, &mut ws);
    let (batch, dirs, l) = (ws.batch(), ws.dirs(), net.output_dim());
    let cols = batch * (1 + dirs);
    let mut out_bar = vec![T::zero(); l * cols];
    let mut value = vec![T::zero(); l];
    let mut tangents = vec![vec![T::zero(); l]; dirs];
    let mut value_bar = vec![T::zero(); l];
    let mut tangents_bar = vec![vec![T::zero(); l]; dirs];
    let mut total = T::zero();
    for b in 0..batch {
        for r in 0..l {
            value[r] = ws.value(r, b);
            for j in 0..dirs {
                tangents[j][r] = ws.tangent(r, j, b);
            }
        }
        value_bar.iter_mut().for_each(|x| *x = T::zero());
        tangents_bar.iter_mut().for_each(|t| t.iter_mut().for_each(|x| *x = T::zero()));
        total += per_sample(
            &SampleOutputs { index: b, value: &value, tangents: &tangents },
            &mut SampleAdjoints { value: &mut value_bar, tangents: &mut tangents_bar },
        );
        for r in 0..l {
            out_bar[r * cols + b] = value_bar[r];
            for j in 0..dirs {
                out_bar[r * cols + (1 + j) * batch + b] = tangents_bar[j][r];
            }
        }
    }
    let mut grad = vec![T::zero(); net.num_params()];
    net.pullback_batch(&mut ws, &out_bar, &mut grad);
    (total, grad)
}

#[cfg(test)]
mod tests;
