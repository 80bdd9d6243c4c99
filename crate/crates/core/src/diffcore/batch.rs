//! Batched forward-mode input tangents with reverse accumulation into the
//! parameters.
//!
//! A batch of `B` states is laid out column-wise. Every layer keeps a
//! *stack* of `1 + d` column blocks: block 0 holds the primal values and
//! block `1 + j` the derivative along input coordinate `j`. One matrix
//! product per layer then pushes primal and tangents forward together; the
//! reverse sweep differentiates that whole computation with respect to the
//! weights, which is what a loss depending on `∇_s V` requires.

use super::FeatureNet;
use crate::scalar::Scalar;

/// Reusable buffers for one batch evaluation.
#[derive(Clone, Debug, Default)]
pub struct TangentWorkspace<T> {
    batch: usize,
    dirs: usize,
    /// `stacks[k]` is the input stack of layer `k`; the last one is the output.
    stacks: Vec<Vec<T>>,
    /// Pre-activation stacks per layer.
    pre: Vec<Vec<T>>,
    /// `σ'(z)` and `σ''(z)` at the primal pre-activations.
    d1: Vec<Vec<T>>,
    d2: Vec<Vec<T>>,
    bar: Vec<T>,
    bar_prev: Vec<T>,
}

impl<T: Scalar> TangentWorkspace<T> {
    pub fn new() -> Self {
        Self {
            batch: 0,
            dirs: 0,
            stacks: Vec::new(),
            pre: Vec::new(),
            d1: Vec::new(),
            d2: Vec::new(),
            bar: Vec::new(),
            bar_prev: Vec::new(),
        }
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.batch
    }

    #[inline]
    pub fn dirs(&self) -> usize {
        self.dirs
    }

    #[inline]
    fn cols(&self) -> usize {
        self.batch * (1 + self.dirs)
    }

    /// Output stack, `l × B(1+d)` row-major.
    pub fn output(&self) -> &[T] {
        self.stacks.last().map_or(&[], Vec::as_slice)
    }

    /// Output `r` for sample `b`.
    #[inline]
    pub fn value(&self, r: usize, b: usize) -> T {
        self.output()[r * self.cols() + b]
    }

    /// Derivative of output `r` along input coordinate `j` for sample `b`.
    #[inline]
    pub fn tangent(&self, r: usize, j: usize, b: usize) -> T {
        self.output()[r * self.cols() + (1 + j) * self.batch + b]
    }
}

fn resize<T: Scalar>(v: &mut Vec<T>, len: usize) {
    if v.len() != len {
        v.resize(len, T::zero());
    }
}

impl<T: Scalar> FeatureNet<T> {
    /// Evaluates `B = states.len() / n` states (row-major `B×n`), carrying
    /// input tangents along all `n` coordinates when `with_tangents` is set.
    pub fn forward_batch(&self, states: &[T], with_tangents: bool, ws: &mut TangentWorkspace<T>) {
        let n = self.input_dim();
        assert_eq!(states.len() % n, 0, "state buffer is not a multiple of the input width");
        let batch = states.len() / n;
        let dirs = if with_tangents { n } else { 0 };
        let layers = self.num_layers();
        ws.batch = batch;
        ws.dirs = dirs;
        let cols = ws.cols();
        ws.stacks.resize_with(layers + 1, Vec::new);
        ws.pre.resize_with(layers, Vec::new);
        ws.d1.resize_with(layers, Vec::new);
        ws.d2.resize_with(layers, Vec::new);

        let input = &mut ws.stacks[0];
        resize(input, n * cols);
        for i in 0..n {
            let row = &mut input[i * cols..(i + 1) * cols];
            for b in 0..batch {
                row[b] = states[b * n + i];
            }
            for j in 0..dirs {
                let fill = if i == j { T::one() } else { T::zero() };
                row[(1 + j) * batch..(2 + j) * batch].iter_mut().for_each(|x| *x = fill);
            }
        }

        for k in 0..layers {
            let layer = self.layer(k);
            let (inp, out) = (layer.inputs, layer.outputs);
            let (before, after) = ws.stacks.split_at_mut(k + 1);
            let h_in = &before[k];
            let pre = &mut ws.pre[k];
            resize(pre, out * cols);
            T::gemm(out, inp, cols, T::one(), layer.weights, (inp as isize, 1), h_in, (cols as isize, 1), T::zero(), pre, (cols as isize, 1));
            for r in 0..out {
                let bias = layer.bias[r];
                pre[r * cols..r * cols + batch].iter_mut().for_each(|z| *z += bias);
            }

            let h_out = &mut after[0];
            resize(h_out, out * cols);
            let d1 = &mut ws.d1[k];
            let d2 = &mut ws.d2[k];
            resize(d1, out * batch);
            resize(d2, out * batch);
            let act = layer.activation;
            for r in 0..out {
                let zrow = &pre[r * cols..(r + 1) * cols];
                let hrow = &mut h_out[r * cols..(r + 1) * cols];
                let d1row = &mut d1[r * batch..(r + 1) * batch];
                let d2row = &mut d2[r * batch..(r + 1) * batch];
                for b in 0..batch {
                    let (v, g1, g2) = act.eval(zrow[b]);
                    hrow[b] = v;
                    d1row[b] = g1;
                    d2row[b] = g2;
                }
                for j in 0..dirs {
                    let off = (1 + j) * batch;
                    for b in 0..batch {
                        hrow[off + b] = d1row[b] * zrow[off + b];
                    }
                }
            }
        }
    }

    /// Reverse sweep after [`forward_batch`](Self::forward_batch).
    ///
    /// `output_bar` is the adjoint of the whole output stack (`l × B(1+d)`,
    /// same layout as [`TangentWorkspace::output`]). Parameter gradients are
    /// *added* into `grad`, laid out like [`FeatureNet::params`].
    pub fn pullback_batch(&self, ws: &mut TangentWorkspace<T>, output_bar: &[T], grad: &mut [T]) {
        assert_eq!(grad.len(), self.num_params(), "gradient buffer size");
        let (batch, dirs) = (ws.batch, ws.dirs);
        let cols = ws.cols();
        assert_eq!(output_bar.len(), self.output_dim() * cols, "output adjoint size");
        let mut bar = std::mem::take(&mut ws.bar);
        let mut bar_prev = std::mem::take(&mut ws.bar_prev);
        bar.clear();
        bar.extend_from_slice(output_bar);

        for k in (0..self.num_layers()).rev() {
            let layer = self.layer(k);
            let (inp, out) = (layer.inputs, layer.outputs);
            // Through the activation: turn the adjoint of h into that of z.
            if layer.activation != super::Activation::Identity {
                let pre = &ws.pre[k];
                let d1 = &ws.d1[k];
                let d2 = &ws.d2[k];
                for r in 0..out {
                    let row = &mut bar[r * cols..(r + 1) * cols];
                    let zrow = &pre[r * cols..(r + 1) * cols];
                    let d1row = &d1[r * batch..(r + 1) * batch];
                    let d2row = &d2[r * batch..(r + 1) * batch];
                    for b in 0..batch {
                        let mut zbar = row[b] * d1row[b];
                        for j in 0..dirs {
                            let off = (1 + j) * batch + b;
                            zbar += row[off] * d2row[b] * zrow[off];
                        }
                        row[b] = zbar;
                    }
                    for j in 0..dirs {
                        let off = (1 + j) * batch;
                        for b in 0..batch {
                            row[off + b] *= d1row[b];
                        }
                    }
                }
            }
            // Through the affine map.
            let h_in = &ws.stacks[k];
            let wgrad = &mut grad[layer.offset..layer.offset + out * inp];
            T::gemm(out, cols, inp, T::one(), &bar, (cols as isize, 1), h_in, (1, cols as isize), T::one(), wgrad, (inp as isize, 1));
            let bgrad = &mut grad[layer.offset + out * inp..layer.offset + out * inp + out];
            for r in 0..out {
                bgrad[r] += bar[r * cols..r * cols + batch].iter().copied().sum::<T>();
            }
            if k > 0 {
                resize(&mut bar_prev, inp * cols);
                T::gemm(inp, out, cols, T::one(), layer.weights, (1, inp as isize), &bar, (cols as isize, 1), T::zero(), &mut bar_prev, (cols as isize, 1));
                std::mem::swap(&mut bar, &mut bar_prev);
            }
        }
        ws.bar = bar;
        ws.bar_prev = bar_prev;
    }
}
