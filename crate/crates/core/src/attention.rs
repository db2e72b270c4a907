//! Affinity graphs and multi-head self-attention.
//!
//! No positional encoding is applied anywhere, so every function here is
//! equivariant under a joint permutation of the sequence rows.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Bindings, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::init::xavier_uniform;

#[derive(Clone, Copy, Debug)]
pub struct AffinityParams {
    pub w_q: Var,
    pub w_k: Var,
}

impl AffinityParams {
    pub fn init(params: &mut ParamSet, prefix: &str, d: usize, rng: &mut ChaCha8Rng) {
        params.insert(format!("{prefix}.w_q"), xavier_uniform(rng, d, d));
        params.insert(format!("{prefix}.w_k"), xavier_uniform(rng, d, d));
    }

    pub fn bind(b: &Bindings, prefix: &str) -> Result<Self> {
        Ok(Self {
            w_q: b.var(&format!("{prefix}.w_q"))?,
            w_k: b.var(&format!("{prefix}.w_k"))?,
        })
    }
}

/// Per-head query/key projections, each `d × d/M`.
#[derive(Clone, Debug)]
pub struct HeadProjections {
    pub query: Vec<Var>,
    pub key: Vec<Var>,
}

impl HeadProjections {
    pub fn init(params: &mut ParamSet, prefix: &str, d: usize, heads: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        let d_head = head_width(d, heads)?;
        for t in 0..heads {
            params.insert(format!("{prefix}.h{t}.w_q"), xavier_uniform(rng, d, d_head));
            params.insert(format!("{prefix}.h{t}.w_k"), xavier_uniform(rng, d, d_head));
        }
        Ok(())
    }

    pub fn bind(b: &Bindings, prefix: &str, heads: usize) -> Result<Self> {
        let mut query = Vec::with_capacity(heads);
        let mut key = Vec::with_capacity(heads);
        for t in 0..heads {
            query.push(b.var(&format!("{prefix}.h{t}.w_q"))?);
            key.push(b.var(&format!("{prefix}.h{t}.w_k"))?);
        }
        Ok(Self { query, key })
    }

    pub fn heads(&self) -> usize {
        self.query.len()
    }
}

/// Standard multi-head attention weights: per-head `W^Q, W^K, W^V`
/// (`d × d/M`) and an output projection `W^O` (`d × d`).
#[derive(Clone, Debug)]
pub struct MhaParams {
    pub heads: HeadProjections,
    pub value: Vec<Var>,
    pub output: Var,
}

impl MhaParams {
    pub fn init(params: &mut ParamSet, prefix: &str, d: usize, heads: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        HeadProjections::init(params, prefix, d, heads, rng)?;
        let d_head = d / heads;
        for t in 0..heads {
            params.insert(format!("{prefix}.h{t}.w_v"), xavier_uniform(rng, d, d_head));
        }
        params.insert(format!("{prefix}.w_o"), xavier_uniform(rng, d, d));
        Ok(())
    }

    pub fn bind(b: &Bindings, prefix: &str, heads: usize) -> Result<Self> {
        let projections = HeadProjections::bind(b, prefix, heads)?;
        let value = (0..heads)
            .map(|t| b.var(&format!("{prefix}.h{t}.w_v")))
            .collect::<Result<_>>()?;
        Ok(Self {
            heads: projections,
            value,
            output: b.var(&format!("{prefix}.w_o"))?,
        })
    }
}

pub fn head_width(d: usize, heads: usize) -> Result<usize> {
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::Config(format!(
            "width {d} is not divisible by head count {heads}"
        )));
    }
    Ok(d / heads)
}

/// `softmax_rows((Q Wq)(K Wk)ᵀ / sqrt(scale_dim))`.
fn scaled_scores(tape: &mut Tape, q_src: Var, k_src: Var, w_q: Var, w_k: Var, scale_dim: usize) -> Result<Var> {
    let q = tape.matmul(q_src, w_q)?;
    let k = tape.matmul(k_src, w_k)?;
    let kt = tape.transpose(k)?;
    let logits = tape.matmul(q, kt)?;
    let logits = tape.scale(logits, 1.0 / (scale_dim as f64).sqrt());
    tape.softmax_rows(logits)
}

fn check_aligned(tape: &Tape, a: Var, b: Var) -> Result<(usize, usize)> {
    let (na, da) = tape.value(a).dims2()?;
    let (nb, db) = tape.value(b).dims2()?;
    if na != nb {
        return Err(Error::Alignment { left: na, right: nb });
    }
    if da != db {
        return Err(Error::dim("attention", tape.value(a).shape(), tape.value(b).shape()));
    }
    Ok((na, da))
}

/// Row-stochastic `n × n` affinity between two aligned sequences, scaled by
/// `sqrt(d)` where `d` is the shared width.
pub fn affinity(tape: &mut Tape, h_q: Var, h_k: Var, p: &AffinityParams) -> Result<Var> {
    let (_, d) = check_aligned(tape, h_q, h_k)?;
    for w in [p.w_q, p.w_k] {
        if tape.value(w).dims2()? != (d, d) {
            return Err(Error::dim("affinity", tape.value(h_q).shape(), tape.value(w).shape()));
        }
    }
    scaled_scores(tape, h_q, h_k, p.w_q, p.w_k, d)
}

/// One self-attention graph per head, scaled by `sqrt(d/M)`.
pub fn multi_head_graphs(tape: &mut Tape, h: Var, p: &HeadProjections) -> Result<Vec<Var>> {
    let (_, d) = tape.value(h).dims2()?;
    let d_head = head_width(d, p.heads())?;
    let mut graphs = Vec::with_capacity(p.heads());
    for (w_q, w_k) in p.query.iter().zip(&p.key) {
        for w in [*w_q, *w_k] {
            if tape.value(w).dims2()? != (d, d_head) {
                return Err(Error::dim(
                    "multi_head_graphs",
                    tape.value(h).shape(),
                    tape.value(w).shape(),
                ));
            }
        }
        graphs.push(scaled_scores(tape, h, h, *w_q, *w_k, d_head)?);
    }
    Ok(graphs)
}

/// Multi-head scaled dot-product self-attention with query, key and value
/// all taken from `x`. Output keeps the shape of `x`.
pub fn mha_self(tape: &mut Tape, x: Var, p: &MhaParams) -> Result<Var> {
    let graphs = multi_head_graphs(tape, x, &p.heads)?;
    let mut heads = Vec::with_capacity(graphs.len());
    for (graph, w_v) in graphs.into_iter().zip(&p.value) {
        let v = tape.matmul(x, *w_v)?;
        heads.push(tape.matmul(graph, v)?);
    }
    let joined = tape.concat_cols(&heads)?;
    tape.matmul(joined, p.output)
}
