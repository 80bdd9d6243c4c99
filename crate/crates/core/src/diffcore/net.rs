use rand::Rng;

use super::Activation;
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Fully connected feature network `φ_θ: Rⁿ → Rˡ`.
///
/// All parameters live in one flat buffer, layer by layer: the `out×in`
/// weight block in row-major order followed by the `out` biases. Optimizers
/// and checkpoints work on that buffer directly.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureNet<T> {
    widths: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<T>,
    offsets: Vec<usize>,
}

/// Borrowed view of one layer inside the flat parameter buffer.
#[derive(Clone, Copy, Debug)]
pub struct LayerView<'a, T> {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub weights: &'a [T],
    pub bias: &'a [T],
    /// Start of this layer's weight block in the flat buffer.
    pub offset: usize,
}

fn layer_offsets(widths: &[usize]) -> (Vec<usize>, usize) {
    let mut offsets = Vec::with_capacity(widths.len().saturating_sub(1));
    let mut total = 0;
    for w in widths.windows(2) {
        offsets.push(total);
        total += w[1] * w[0] + w[1];
    }
    (offsets, total)
}

impl<T: Scalar> FeatureNet<T> {
    /// `widths = [n, h₁, …, l]`, one activation per layer.
    pub fn new(widths: Vec<usize>, activations: Vec<Activation>, params: Vec<T>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidInput("a feature net needs at least one layer".into()));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidInput(format!("layer widths must be positive, got {widths:?}")));
        }
        if activations.len() != widths.len() - 1 {
            return Err(Error::Dimension {
                what: "activations per layer",
                expected: widths.len() - 1,
                actual: activations.len(),
            });
        }
        let (offsets, total) = layer_offsets(&widths);
        if params.len() != total {
            return Err(Error::Dimension { what: "parameter count", expected: total, actual: params.len() });
        }
        Ok(Self { widths, activations, params, offsets })
    }

    pub fn zeros(widths: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        let (_, total) = layer_offsets(&widths);
        Self::new(widths, activations, vec![T::zero(); total])
    }

    /// Uniform initialization in `±1/√fan_in` for weights and biases.
    pub fn init_uniform<R: Rng + ?Sized>(
        widths: Vec<usize>,
        activations: Vec<Activation>,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(widths, activations)?;
        for k in 0..net.num_layers() {
            let fan_in = net.widths[k];
            let bound = 1.0 / (fan_in as f64).sqrt();
            let start = net.offsets[k];
            let len = net.widths[k + 1] * (fan_in + 1);
            for p in &mut net.params[start..start + len] {
                *p = T::lit(rng.random_range(-bound..=bound));
            }
        }
        Ok(net)
    }

    /// Multilayer perceptron with a shared hidden activation and a chosen output activation.
    pub fn mlp_widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
        std::iter::once(input).chain(hidden.iter().copied()).chain(std::iter::once(output)).collect()
    }

    pub fn mlp_activations(hidden_layers: usize, hidden: Activation, output: Activation) -> Vec<Activation> {
        std::iter::repeat_n(hidden, hidden_layers).chain(std::iter::once(output)).collect()
    }

    /// Single affine layer `s ↦ W s + b` with identity activation.
    pub fn affine(weights: &Matrix<T>, bias: &[T]) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::Dimension { what: "bias length", expected: weights.rows(), actual: bias.len() });
        }
        let mut params = weights.as_slice().to_vec();
        params.extend_from_slice(bias);
        Self::new(vec![weights.cols(), weights.rows()], vec![Activation::Identity], params)
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("non-empty widths")
    }

    #[inline]
    pub fn num_layers(&self) -> usize {
        self.activations.len()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn max_width(&self) -> usize {
        self.widths.iter().copied().max().unwrap_or(0)
    }

    #[inline]
    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[T]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Dimension { what: "parameter count", expected: self.params.len(), actual: params.len() });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    pub fn layer(&self, k: usize) -> LayerView<'_, T> {
        let (inputs, outputs) = (self.widths[k], self.widths[k + 1]);
        let offset = self.offsets[k];
        let wlen = inputs * outputs;
        LayerView {
            inputs,
            outputs,
            activation: self.activations[k],
            weights: &self.params[offset..offset + wlen],
            bias: &self.params[offset + wlen..offset + wlen + outputs],
            offset,
        }
    }

    fn check_input(&self, s: &[T]) -> Result<()> {
        if s.len() != self.input_dim() {
            return Err(Error::Dimension { what: "network input", expected: self.input_dim(), actual: s.len() });
        }
        Ok(())
    }

    pub fn forward(&self, s: &[T]) -> Result<Vec<T>> {
        Ok(self.forward_record(s)?.into_output())
    }

    /// Forward pass keeping every intermediate.
    pub fn forward_record(&self, s: &[T]) -> Result<EvalRecord<T>> {
        self.check_input(s)?;
        let mut pre = Vec::with_capacity(self.num_layers());
        let mut post = Vec::with_capacity(self.num_layers());
        let mut h = s.to_vec();
        for k in 0..self.num_layers() {
            let layer = self.layer(k);
            let z: Vec<T> = (0..layer.outputs)
                .map(|r| {
                    let row = &layer.weights[r * layer.inputs..(r + 1) * layer.inputs];
                    row.iter().zip(&h).fold(layer.bias[r], |acc, (&w, &x)| acc + w * x)
                })
                .collect();
            h = z.iter().map(|&x| layer.activation.value(x)).collect();
            pre.push(z);
            post.push(h.clone());
        }
        Ok(EvalRecord { input: s.to_vec(), pre, post })
    }

    /// `∂φ/∂s` as an `l×n` matrix, by forward-mode propagation of the `n`
    /// coordinate directions.
    pub fn input_jacobian(&self, s: &[T]) -> Result<Matrix<T>> {
        self.check_input(s)?;
        let n = self.input_dim();
        let mut h = s.to_vec();
        // tangent[j] = ∂h/∂s_j
        let mut tangents: Vec<Vec<T>> = (0..n)
            .map(|j| (0..n).map(|i| if i == j { T::one() } else { T::zero() }).collect())
            .collect();
        for k in 0..self.num_layers() {
            let layer = self.layer(k);
            let mut next_h = Vec::with_capacity(layer.outputs);
            let mut next_t = vec![Vec::with_capacity(layer.outputs); n];
            for r in 0..layer.outputs {
                let row = &layer.weights[r * layer.inputs..(r + 1) * layer.inputs];
                let z = row.iter().zip(&h).fold(layer.bias[r], |acc, (&w, &x)| acc + w * x);
                let (v, d1) = layer.activation.eval2(z);
                next_h.push(v);
                for (j, t) in tangents.iter().enumerate() {
                    let dz: T = row.iter().zip(t).map(|(&w, &x)| w * x).sum();
                    next_t[j].push(d1 * dz);
                }
            }
            h = next_h;
            tangents = next_t;
        }
        let l = self.output_dim();
        let mut jac = Matrix::zeros(l, n);
        for (j, t) in tangents.iter().enumerate() {
            for r in 0..l {
                jac[(r, j)] = t[r];
            }
        }
        Ok(jac)
    }
}

/// Intermediates of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord<T> {
    pub input: Vec<T>,
    /// Pre-activation values, one vector per layer.
    pub pre: Vec<Vec<T>>,
    /// Post-activation values, one vector per layer.
    pub post: Vec<Vec<T>>,
}

impl<T: Scalar> EvalRecord<T> {
    pub fn output(&self) -> &[T] {
        self.post.last().map_or(&self.input, Vec::as_slice)
    }

    pub fn into_output(mut self) -> Vec<T> {
        self.post.pop().unwrap_or(self.input)
    }

    /// Re-applies each layer's activation to the stored pre-activations.
    pub fn replay(&self, net: &FeatureNet<T>) -> Vec<T> {
        let k = net.num_layers() - 1;
        self.pre[k].iter().map(|&z| net.activations()[k].value(z)).collect()
    }
}
