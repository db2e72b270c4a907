//! Densely connected graph convolution over attention graphs.
//!
//! A dense block of `L` sublayers works on width `d`: sublayer `l` reads the
//! block input concatenated with every earlier sublayer output (width
//! `d + d_sub·(l-1)`) and emits `d_sub = d / L` features. The block output is
//! the concatenation of all sublayer outputs, which is width `d` again.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Bindings, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::init::xavier_uniform;

/// Width bookkeeping for a dense block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DcgcnDims {
    pub d: usize,
    pub sublayers: usize,
    pub d_sub: usize,
}

impl DcgcnDims {
    pub fn new(d: usize, sublayers: usize) -> Result<Self> {
        if sublayers == 0 || d == 0 || !d.is_multiple_of(sublayers) {
            return Err(Error::Config(format!(
                "dense GCN width {d} must be a positive multiple of the sublayer count {sublayers}"
            )));
        }
        let dims = Self {
            d,
            sublayers,
            d_sub: d / sublayers,
        };
        debug_assert_eq!(dims.d_sub * sublayers, d);
        Ok(dims)
    }

    /// Input width of sublayer `l` (1-based).
    pub fn input_width(&self, l: usize) -> usize {
        self.d + self.d_sub * (l - 1)
    }

    pub fn input_widths(&self) -> Vec<usize> {
        (1..=self.sublayers).map(|l| self.input_width(l)).collect()
    }

    pub fn output_width(&self) -> usize {
        self.d_sub * self.sublayers
    }

    /// Scalar parameter count of the sublayers (no output linear).
    pub fn parameter_count(&self) -> usize {
        self.input_widths().iter().map(|w| w * self.d_sub + self.d_sub).sum()
    }
}

/// Scalar parameter count of an `L`-layer vanilla GCN of width `d`.
pub fn vanilla_parameter_count(d: usize, layers: usize) -> usize {
    layers * (d * d + d)
}

#[derive(Clone, Copy, Debug)]
pub struct GcnLayer {
    pub weight: Var,
    pub bias: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub fn init(params: &mut ParamSet, prefix: &str, d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) {
        params.insert(format!("{prefix}.weight"), xavier_uniform(rng, d_in, d_out));
        params.insert(format!("{prefix}.bias"), Tensor::zeros(&[d_out]));
    }

    pub fn bind(b: &Bindings, prefix: &str) -> Result<Self> {
        Ok(Self {
            weight: b.var(&format!("{prefix}.weight"))?,
            bias: b.var(&format!("{prefix}.bias"))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let y = tape.matmul(x, self.weight)?;
        tape.add_row_bias(y, self.bias)
    }
}

/// Sublayer weights of one graph convolution stack.
#[derive(Clone, Debug)]
pub struct GcnStack {
    pub dense: bool,
    pub layers: Vec<GcnLayer>,
}

impl GcnStack {
    /// Dense sublayers `W^l: d^l × d_sub` or vanilla layers `W^l: d × d`.
    pub fn init(params: &mut ParamSet, prefix: &str, dims: DcgcnDims, dense: bool, rng: &mut ChaCha8Rng) {
        for l in 1..=dims.sublayers {
            let (rows, cols) = if dense {
                (dims.input_width(l), dims.d_sub)
            } else {
                (dims.d, dims.d)
            };
            params.insert(format!("{prefix}.l{l}.weight"), xavier_uniform(rng, rows, cols));
            params.insert(format!("{prefix}.l{l}.bias"), Tensor::zeros(&[cols]));
        }
    }

    pub fn bind(b: &Bindings, prefix: &str, sublayers: usize, dense: bool) -> Result<Self> {
        let layers = (1..=sublayers)
            .map(|l| {
                Ok(GcnLayer {
                    weight: b.var(&format!("{prefix}.l{l}.weight"))?,
                    bias: b.var(&format!("{prefix}.l{l}.bias"))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { dense, layers })
    }

    /// Stack output before any output linear.
    pub fn forward(&self, tape: &mut Tape, a: Var, x: Var) -> Result<Var> {
        if self.dense {
            dcgcn_body(tape, a, x, &self.layers)
        } else {
            vanilla_gcn_forward(tape, a, x, &self.layers)
        }
    }
}

fn check_graph(tape: &Tape, a: Var, x: Var) -> Result<()> {
    let (n, _) = tape.value(x).dims2()?;
    if tape.value(a).dims2()? != (n, n) {
        return Err(Error::dim(
            "graph convolution",
            tape.value(a).shape(),
            tape.value(x).shape(),
        ));
    }
    Ok(())
}

/// `ReLU((A · G) · W + b)`.
pub fn gcn_layer(tape: &mut Tape, a: Var, g: Var, layer: &GcnLayer) -> Result<Var> {
    let ag = tape.matmul(a, g)?;
    let agw = tape.matmul(ag, layer.weight)?;
    let pre = tape.add_row_bias(agw, layer.bias)?;
    Ok(tape.relu(pre))
}

/// Dense sublayers over `x`; returns the concatenated sublayer outputs.
pub fn dcgcn_body(tape: &mut Tape, a: Var, x: Var, layers: &[GcnLayer]) -> Result<Var> {
    check_graph(tape, a, x)?;
    if layers.is_empty() {
        return Err(Error::Config("dense GCN needs at least one sublayer".into()));
    }
    let mut features = vec![x];
    let mut outputs = Vec::with_capacity(layers.len());
    for layer in layers {
        let g = if features.len() == 1 {
            x
        } else {
            tape.concat_cols(&features)?
        };
        let h = gcn_layer(tape, a, g, layer)?;
        features.push(h);
        outputs.push(h);
    }
    if outputs.len() == 1 {
        Ok(outputs[0])
    } else {
        tape.concat_cols(&outputs)
    }
}

/// Dense block followed by its output linear; `n × d → n × d`.
pub fn dcgcn_forward(tape: &mut Tape, a: Var, x: Var, layers: &[GcnLayer], linear: &Linear) -> Result<Var> {
    let body = dcgcn_body(tape, a, x, layers)?;
    linear.forward(tape, body)
}

/// Plain stacked GCN: `H^l = ReLU(A H^{l-1} W^l + b^l)` with `H^0 = x`.
pub fn vanilla_gcn_forward(tape: &mut Tape, a: Var, x: Var, layers: &[GcnLayer]) -> Result<Var> {
    check_graph(tape, a, x)?;
    if layers.is_empty() {
        return Err(Error::Config("GCN needs at least one layer".into()));
    }
    let mut h = x;
    for layer in layers {
        h = gcn_layer(tape, a, h, layer)?;
    }
    Ok(h)
}

/// One independent stack per graph; outputs concatenated and mixed by
/// `W_out: (d·M) × d`, `b_out: d`.
pub fn multi_graph_dcgcn(tape: &mut Tape, graphs: &[Var], x: Var, stacks: &[GcnStack], out: &Linear) -> Result<Var> {
    if graphs.len() != stacks.len() || graphs.is_empty() {
        return Err(Error::Config(format!(
            "{} graphs but {} graph convolution stacks",
            graphs.len(),
            stacks.len()
        )));
    }
    let mut branches = Vec::with_capacity(graphs.len());
    for (a, stack) in graphs.iter().zip(stacks) {
        branches.push(stack.forward(tape, *a, x)?);
    }
    let joined = tape.concat_cols(&branches)?;
    out.forward(tape, joined)
}
