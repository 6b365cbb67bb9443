//! Dense feed-forward networks with hand-written reverse-mode gradients.
//!
//! Layers operate on row batches (one sample per row) so that each weight row
//! is reused across the batch while it is hot in cache. The single-sample
//! entry points are batches of one.

mod adam;
mod batch;
mod gradcheck;
mod params;

pub use adam::{adam_step, AdamConfig, Moments};
pub use batch::Batch;
pub use gradcheck::{finite_diff_at, finite_diff_grad, relative_error};
pub use params::{GradStore, ParamLayout, ParamStore, Segment, SegmentKind};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// `y = W x + b`
    Affine { input_dim: usize, output_dim: usize },
    Relu,
    Tanh,
    /// `ln(1 + e^x)`, used for nonnegative outputs.
    Softplus,
}

impl LayerSpec {
    pub fn affine(input_dim: usize, output_dim: usize) -> Self {
        LayerSpec::Affine {
            input_dim,
            output_dim,
        }
    }
}

/// Builds `[affine, act, affine, act, ..., affine]` through `widths`, with
/// `activation` after every affine except the last.
pub fn mlp(widths: &[usize], activation: LayerSpec) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    for (i, w) in widths.windows(2).enumerate() {
        layers.push(LayerSpec::affine(w[0], w[1]));
        if i + 2 < widths.len() {
            layers.push(activation);
        }
    }
    layers
}

/// Which part of the input gradient a backward pass should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputGrad {
    Skip,
    Full,
    /// Only the first `n` input columns; the rest are left at zero.
    Prefix(usize),
}

/// A layer stack bound to a region of a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<LayerSpec>,
    /// Weight offset for each affine layer, `None` for activations.
    offsets: Vec<Option<usize>>,
    input_dim: usize,
    output_dim: usize,
}

/// Cached layer inputs from a forward pass; `values[i]` feeds layer `i`, the
/// last entry is the network output.
#[derive(Debug, Clone, PartialEq)]
pub struct Tape<S> {
    values: Vec<Batch<S>>,
}

impl<S: Scalar> Tape<S> {
    pub fn input(&self) -> &Batch<S> {
        &self.values[0]
    }

    pub fn output(&self) -> &Batch<S> {
        self.values.last().expect("tape always holds the input")
    }
}

impl Network {
    /// Validates the stack and allocates its parameters in `layout` under `name`.
    pub fn new(name: &str, layers: Vec<LayerSpec>, layout: &mut ParamLayout) -> Result<Self> {
        let mut dim: Option<usize> = None;
        let mut input_dim = None;
        let mut offsets = Vec::with_capacity(layers.len());
        for (i, layer) in layers.iter().enumerate() {
            match *layer {
                LayerSpec::Affine {
                    input_dim: din,
                    output_dim: dout,
                } => {
                    if din == 0 || dout == 0 {
                        return invalid(format!("{name}: affine layer {i} has a zero dimension"));
                    }
                    if let Some(d) = dim {
                        if d != din {
                            return invalid(format!(
                                "{name}: layer {i} expects {din} inputs, previous layer gives {d}"
                            ));
                        }
                    } else {
                        input_dim = Some(din);
                    }
                    let w = layout.push(
                        format!("{name}.{i}.weight"),
                        din * dout,
                        SegmentKind::Weight {
                            fan_in: din,
                            fan_out: dout,
                        },
                    );
                    layout.push(format!("{name}.{i}.bias"), dout, SegmentKind::Bias);
                    offsets.push(Some(w));
                    dim = Some(dout);
                }
                _ => {
                    if dim.is_none() {
                        return invalid(format!("{name}: network must start with an affine layer"));
                    }
                    offsets.push(None);
                }
            }
        }
        let (Some(input_dim), Some(output_dim)) = (input_dim, dim) else {
            return invalid(format!("{name}: empty network"));
        };
        Ok(Self {
            layers,
            offsets,
            input_dim,
            output_dim,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match *l {
                LayerSpec::Affine {
                    input_dim,
                    output_dim,
                } => input_dim * output_dim + output_dim,
                _ => 0,
            })
            .sum()
    }

    /// Single-sample forward pass.
    pub fn forward<S: Scalar>(&self, params: &[S], input: &[S]) -> Result<(Vec<S>, Tape<S>)> {
        let tape = self.forward_batch(params, Batch::from_row(input))?;
        Ok((tape.output().row(0).to_vec(), tape))
    }

    pub fn forward_batch<S: Scalar>(&self, params: &[S], input: Batch<S>) -> Result<Tape<S>> {
        if input.cols() != self.input_dim {
            return invalid(format!(
                "network expects {} inputs, got {}",
                self.input_dim,
                input.cols()
            ));
        }
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input);
        for (layer, off) in self.layers.iter().zip(&self.offsets) {
            let x = values.last().expect("non-empty");
            let y = match (*layer, *off) {
                (
                    LayerSpec::Affine {
                        input_dim,
                        output_dim,
                    },
                    Some(w),
                ) => affine_forward(params, w, input_dim, output_dim, x),
                (LayerSpec::Relu, _) => x.map(|v| v.max(S::zero())),
                (LayerSpec::Tanh, _) => x.map(|v| v.tanh()),
                (LayerSpec::Softplus, _) => x.map(softplus),
                _ => unreachable!("affine layers always carry an offset"),
            };
            values.push(y);
        }
        Ok(Tape { values })
    }

    /// Single-sample backward pass: accumulates parameter gradients into
    /// `grads` and returns the input gradient.
    pub fn backward<S: Scalar>(
        &self,
        params: &[S],
        tape: &Tape<S>,
        output_grad: &[S],
        grads: &mut [S],
    ) -> Result<Vec<S>> {
        let g = self.backward_batch(params, tape, Batch::from_row(output_grad), grads, InputGrad::Full)?;
        Ok(g.expect("input gradient requested").row(0).to_vec())
    }

    pub fn backward_batch<S: Scalar>(
        &self,
        params: &[S],
        tape: &Tape<S>,
        output_grad: Batch<S>,
        grads: &mut [S],
        input_grad: InputGrad,
    ) -> Result<Option<Batch<S>>> {
        if tape.values.len() != self.layers.len() + 1
            || tape.values[0].cols() != self.input_dim
            || tape.output().cols() != self.output_dim
        {
            return invalid("tape does not match network");
        }
        if output_grad.cols() != self.output_dim || output_grad.rows() != tape.output().rows() {
            return invalid(format!(
                "output gradient is {}x{}, expected {}x{}",
                output_grad.rows(),
                output_grad.cols(),
                tape.output().rows(),
                self.output_dim
            ));
        }
        if params.len() != grads.len() {
            return invalid("gradient buffer is not congruent with parameters");
        }
        let mut g = output_grad;
        for (i, (layer, off)) in self.layers.iter().zip(&self.offsets).enumerate().rev() {
            let x = &tape.values[i];
            match (*layer, *off) {
                (
                    LayerSpec::Affine {
                        input_dim,
                        output_dim,
                    },
                    Some(w),
                ) => {
                    let dx_cols = match (i, input_grad) {
                        (0, InputGrad::Skip) => 0,
                        (0, InputGrad::Prefix(n)) => n.min(input_dim),
                        _ => input_dim,
                    };
                    g = affine_backward(params, grads, w, input_dim, output_dim, x, &g, dx_cols);
                }
                (LayerSpec::Relu, _) => g.zip_apply(x, |gi, xi| if xi <= S::zero() { S::zero() } else { gi }),
                (LayerSpec::Tanh, _) => {
                    g.zip_apply(&tape.values[i + 1], |gi, yi| gi * (S::one() - yi * yi));
                }
                (LayerSpec::Softplus, _) => g.zip_apply(x, |gi, xi| gi * sigmoid(xi)),
                _ => unreachable!("affine layers always carry an offset"),
            }
        }
        Ok((input_grad != InputGrad::Skip).then_some(g))
    }
}

#[inline]
pub fn softplus<S: Scalar>(x: S) -> S {
    // ln(1 + e^x) = max(x, 0) + ln(1 + e^-|x|)
    x.max(S::zero()) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Nonzero column indices of each row that is mostly zeros; `None` for dense
/// rows. Deciding per row keeps a batched pass bitwise equal to row-by-row
/// passes.
fn row_supports<S: Scalar>(x: &Batch<S>) -> Vec<Option<Vec<usize>>> {
    x.iter_rows()
        .map(|row| {
            let idx: Vec<usize> = (0..row.len()).filter(|&j| !row[j].is_zero()).collect();
            (idx.len() * 2 < row.len()).then_some(idx)
        })
        .collect()
}

fn affine_forward<S: Scalar>(params: &[S], w: usize, din: usize, dout: usize, x: &Batch<S>) -> Batch<S> {
    let weights = &params[w..w + din * dout];
    let bias = &params[w + din * dout..w + din * dout + dout];
    let supports = row_supports(x);
    let mut y = Batch::zeros(x.rows(), dout);
    for (i, (row, &b)) in weights.chunks_exact(din).zip(bias).enumerate() {
        for (r, support) in supports.iter().enumerate() {
            let xr = x.row(r);
            let v = match support {
                Some(idx) => idx.iter().fold(S::zero(), |a, &j| a + row[j] * xr[j]),
                None => crate::scalar::dot(row, xr),
            };
            y.row_mut(r)[i] = v + b;
        }
    }
    y
}

/// Accumulates weight/bias gradients and returns the input gradient for the
/// first `dx_cols` input columns.
#[allow(clippy::too_many_arguments)]
fn affine_backward<S: Scalar>(
    params: &[S],
    grads: &mut [S],
    w: usize,
    din: usize,
    dout: usize,
    x: &Batch<S>,
    g: &Batch<S>,
    dx_cols: usize,
) -> Batch<S> {
    let weights = &params[w..w + din * dout];
    let mut dx = Batch::zeros(x.rows(), din);
    let (gw, gb) = grads[w..w + din * dout + dout].split_at_mut(din * dout);
    let supports = row_supports(x);
    for i in 0..dout {
        let grow = &mut gw[i * din..(i + 1) * din];
        let wrow = &weights[i * din..(i + 1) * din];
        for (r, support) in supports.iter().enumerate() {
            let gi = g.row(r)[i];
            if gi.is_zero() {
                continue;
            }
            gb[i] += gi;
            let xr = x.row(r);
            match support {
                Some(idx) => idx.iter().for_each(|&j| grow[j] += gi * xr[j]),
                None => grow.iter_mut().zip(xr).for_each(|(a, &xj)| *a += gi * xj),
            }
            if dx_cols > 0 {
                dx.row_mut(r)[..dx_cols]
                    .iter_mut()
                    .zip(&wrow[..dx_cols])
                    .for_each(|(d, &wij)| *d += gi * wij);
            }
        }
    }
    dx
}
