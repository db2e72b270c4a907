use super::config::{LossKind, MagcnConfig, Modality};
use super::params::{LanguageBlock, ModelBindings, TowerParams};
use crate::attention::{affinity, mha_self, multi_head_graphs};
use crate::autodiff::{Tape, Tensor, Var};
use crate::data::UtteranceSample;
use crate::dcgcn::multi_graph_dcgcn;
use crate::embeddings::{build_language_input, polarity_flags, sentiment_flags, Lexicon, TokenInput};
use crate::encoders::bilstm;
use crate::error::{Error, Result};

/// Intermediates of one inter-modality tower.
#[derive(Clone, Copy, Debug)]
pub struct TowerTrace {
    pub partner: Modality,
    /// Affinity graph between the primary sequence and the partner.
    pub affinity: Var,
    /// Dense GCN output before its linear transform.
    pub fused_body: Var,
    /// Dense GCN output after its linear transform.
    pub fused: Var,
    /// `fused` with the sentiment rows appended.
    pub with_sentiment: Var,
    /// Multi-head self-attention over `with_sentiment`.
    pub out: Var,
    /// `out` mapped to width `d` for the consistency term.
    pub projected: Option<Var>,
}

/// Every named intermediate of a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub h_l: Option<Var>,
    pub h_v: Option<Var>,
    pub h_a: Option<Var>,
    pub sentiment: Option<Var>,
    pub primary: Modality,
    pub tower_v: Option<TowerTrace>,
    pub tower_a: Option<TowerTrace>,
    pub language_graphs: Vec<Var>,
    pub h_l_out: Var,
    pub consistency: Option<Var>,
    pub pooled: Var,
    pub logits: Var,
    pub probs: Var,
    /// Expected class index under `probs`.
    pub score: Var,
}

impl ForwardTrace {
    pub fn towers(&self) -> impl Iterator<Item = &TowerTrace> {
        self.tower_v.iter().chain(self.tower_a.iter())
    }

    /// Every attention or affinity matrix produced in the pass.
    pub fn attention_graphs(&self) -> Vec<Var> {
        self.towers()
            .map(|t| t.affinity)
            .chain(self.language_graphs.iter().copied())
            .collect()
    }
}

/// Encoder outputs; the input to everything past the Bi-LSTMs.
#[derive(Clone, Copy, Debug, Default)]
pub struct Encoded {
    pub language: Option<Var>,
    pub vision: Option<Var>,
    pub acoustic: Option<Var>,
    pub sentiment: Option<Var>,
}

impl Encoded {
    pub fn get(&self, m: Modality) -> Option<Var> {
        match m {
            Modality::Language => self.language,
            Modality::Vision => self.vision,
            Modality::Acoustic => self.acoustic,
        }
    }
}

/// Sentiment-table row index per token for `cfg`.
pub fn token_flags<S: AsRef<str>>(cfg: &MagcnConfig, tokens: &[S], lexicon: &Lexicon) -> Vec<usize> {
    if cfg.polarity_sentiment {
        polarity_flags(tokens, lexicon)
    } else {
        sentiment_flags(tokens, lexicon)
    }
}

/// Affinity graph, graph convolution with its linear transform, sentiment
/// concat, then multi-head self-attention.
pub fn inter_modality_forward(
    tape: &mut Tape,
    h_primary: Var,
    h_partner: Var,
    sentiment: Option<Var>,
    partner: Modality,
    p: &TowerParams,
) -> Result<TowerTrace> {
    let graph = affinity(tape, h_primary, h_partner, &p.affinity)?;
    let fused_body = p.gcn.forward(tape, graph, h_partner)?;
    let fused = p.gcn_out.forward(tape, fused_body)?;
    let with_sentiment = match sentiment {
        Some(s) if tape.value(s).cols() > 0 => tape.concat_cols(&[fused, s])?,
        _ => fused,
    };
    let out = mha_self(tape, with_sentiment, &p.mha)?;
    let projected = match p.projection {
        Some(w) => Some(tape.matmul(out, w)?),
        None => None,
    };
    Ok(TowerTrace {
        partner,
        affinity: graph,
        fused_body,
        fused,
        with_sentiment,
        out,
        projected,
    })
}

/// `Z` blocks of per-head graphs feeding independent graph convolutions.
/// Returns the tower output and every graph built along the way.
pub fn unimodal_language_forward(tape: &mut Tape, h: Var, blocks: &[LanguageBlock]) -> Result<(Var, Vec<Var>)> {
    let mut x = h;
    let mut all_graphs = Vec::new();
    for block in blocks {
        let graphs = multi_head_graphs(tape, x, &block.graphs)?;
        x = multi_graph_dcgcn(tape, &graphs, x, &block.stacks, &block.out)?;
        all_graphs.extend(graphs);
    }
    Ok((x, all_graphs))
}

/// `‖C_L C_LVᵀ − C_L C_LAᵀ‖_F²` over row-normalized inputs. All three inputs
/// must already share a width.
pub fn consistency_loss(tape: &mut Tape, h_l_out: Var, hs_lv: Var, hs_la: Var) -> Result<Var> {
    if tape.value(hs_lv).shape() != tape.value(hs_la).shape() {
        return Err(Error::dim(
            "consistency_loss",
            tape.value(hs_lv).shape(),
            tape.value(hs_la).shape(),
        ));
    }
    let c_l = tape.l2norm_rows(h_l_out)?;
    let c_lv = tape.l2norm_rows(hs_lv)?;
    let c_la = tape.l2norm_rows(hs_la)?;
    let c_lv_t = tape.transpose(c_lv)?;
    let c_la_t = tape.transpose(c_la)?;
    let gram_v = tape.matmul(c_l, c_lv_t)?;
    let gram_a = tape.matmul(c_l, c_la_t)?;
    let diff = tape.sub(gram_v, gram_a)?;
    Ok(tape.frobenius_sq(diff))
}

#[derive(Clone, Copy, Debug)]
pub struct Prediction {
    pub pooled: Var,
    pub logits: Var,
    pub probs: Var,
}

/// Feature concat, mean pooling over rows, linear head, softmax.
pub fn predict(tape: &mut Tape, parts: &[Var], head: &crate::dcgcn::Linear) -> Result<Prediction> {
    let joined = tape.concat_cols(parts)?;
    let pooled = tape.mean_rows(joined)?;
    let logits = head.forward(tape, pooled)?;
    let probs = tape.softmax_rows(logits)?;
    Ok(Prediction { pooled, logits, probs })
}

/// `probs · [0, 1, …, C-1]ᵀ`.
pub fn expected_score(tape: &mut Tape, probs: Var) -> Result<Var> {
    let classes = tape.value(probs).cols();
    let ramp = Tensor::new(vec![classes, 1], (0..classes).map(|c| c as f64).collect())?;
    let ramp = tape.constant(ramp);
    tape.matmul(probs, ramp)
}

/// `α · mean|y − ŷ| + β · L_c` over a batch.
pub fn total_loss(scores: &[f64], targets: &[f64], consistency: f64, alpha: f64, beta: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Contract("total loss over zero samples".into()));
    }
    if scores.len() != targets.len() {
        return Err(Error::dim("total_loss", &[scores.len()], &[targets.len()]));
    }
    let mae = scores.iter().zip(targets).map(|(y, t)| (y - t).abs()).sum::<f64>() / scores.len() as f64;
    Ok(alpha * mae + beta * consistency)
}

fn check_rows(tape: &Tape, v: Var, n: usize) -> Result<()> {
    let rows = tape.value(v).rows();
    if rows != n {
        return Err(Error::Alignment { left: n, right: rows });
    }
    Ok(())
}

fn check_width(t: &Tensor, expected: usize, m: Modality) -> Result<()> {
    if t.cols() != expected {
        return Err(Error::Validation(format!(
            "{} features have width {}, model expects {expected}",
            m.name(),
            t.cols()
        )));
    }
    Ok(())
}

/// Runs the Bi-LSTM encoders of every enabled modality.
pub fn encode(
    tape: &mut Tape,
    mb: &ModelBindings,
    cfg: &MagcnConfig,
    sample: &UtteranceSample,
    flags: &[usize],
) -> Result<Encoded> {
    let n = sample.len();
    let mut enc = Encoded::default();
    for m in [Modality::Language, Modality::Vision, Modality::Acoustic] {
        let Some((fwd, bwd)) = mb.encoder(m) else { continue };
        let x = match m {
            Modality::Language => {
                let words = sample
                    .language
                    .as_ref()
                    .ok_or_else(|| Error::Validation("sample has no language features".into()))?;
                check_width(words, cfg.language_dim, m)?;
                let words = tape.constant(words.clone());
                check_rows(tape, words, n)?;
                let (x, s) = build_language_input(tape, &TokenInput::WordVectors(words), flags, mb.sentiment_table)?;
                enc.sentiment = Some(s);
                x
            }
            Modality::Vision => {
                check_width(&sample.vision, cfg.vision_dim, m)?;
                tape.constant(sample.vision.clone())
            }
            Modality::Acoustic => {
                check_width(&sample.acoustic, cfg.acoustic_dim, m)?;
                tape.constant(sample.acoustic.clone())
            }
        };
        check_rows(tape, x, n)?;
        let h = bilstm(tape, x, fwd, bwd)?;
        match m {
            Modality::Language => enc.language = Some(h),
            Modality::Vision => enc.vision = Some(h),
            Modality::Acoustic => enc.acoustic = Some(h),
        }
    }
    Ok(enc)
}

/// Everything downstream of the encoders.
pub fn forward_encoded(tape: &mut Tape, mb: &ModelBindings, cfg: &MagcnConfig, enc: &Encoded) -> Result<ForwardTrace> {
    let primary = cfg
        .modalities
        .primary()
        .ok_or_else(|| Error::Config("modality set is empty".into()))?;
    let h_primary = enc
        .get(primary)
        .ok_or_else(|| Error::Validation(format!("{} encoding missing", primary.name())))?;
    let sentiment = if primary == Modality::Language {
        enc.sentiment
    } else {
        None
    };

    let mut tower_v = None;
    let mut tower_a = None;
    for (partner, p) in &mb.towers {
        let h_partner = enc
            .get(*partner)
            .ok_or_else(|| Error::Validation(format!("{} encoding missing", partner.name())))?;
        let trace = inter_modality_forward(tape, h_primary, h_partner, sentiment, *partner, p)?;
        match partner {
            Modality::Vision => tower_v = Some(trace),
            _ => tower_a = Some(trace),
        }
    }

    let (h_l_out, language_graphs) = unimodal_language_forward(tape, h_primary, &mb.blocks)?;

    let consistency = match (&tower_v, &tower_a) {
        (Some(v), Some(a)) if cfg.has_consistency_term() => {
            let (pv, pa) = (v.projected.unwrap_or(v.out), a.projected.unwrap_or(a.out));
            Some(consistency_loss(tape, h_l_out, pv, pa)?)
        }
        _ => None,
    };

    let mut parts = vec![h_l_out];
    parts.extend(tower_v.iter().chain(tower_a.iter()).map(|t| t.out));
    let prediction = predict(tape, &parts, &mb.head)?;
    let score = expected_score(tape, prediction.probs)?;

    Ok(ForwardTrace {
        h_l: enc.language,
        h_v: enc.vision,
        h_a: enc.acoustic,
        sentiment,
        primary,
        tower_v,
        tower_a,
        language_graphs,
        h_l_out,
        consistency,
        pooled: prediction.pooled,
        logits: prediction.logits,
        probs: prediction.probs,
        score,
    })
}

pub fn magcn_forward(
    tape: &mut Tape,
    mb: &ModelBindings,
    cfg: &MagcnConfig,
    sample: &UtteranceSample,
    flags: &[usize],
) -> Result<ForwardTrace> {
    let enc = encode(tape, mb, cfg, sample, flags)?;
    forward_encoded(tape, mb, cfg, &enc)
}

/// Per-sample training objective and its two weighted parts.
#[derive(Clone, Copy, Debug)]
pub struct Objective {
    pub total: Var,
    pub error_term: f64,
    pub consistency_term: f64,
}

/// `α · |y − label| + β · L_c` for one sample (or `α · CE + β · L_c`).
pub fn sample_objective(tape: &mut Tape, cfg: &MagcnConfig, trace: &ForwardTrace, label: usize) -> Result<Objective> {
    if label >= cfg.num_classes {
        return Err(Error::Validation(format!(
            "label {label} outside 0..{}",
            cfg.num_classes
        )));
    }
    let error = match cfg.loss {
        LossKind::AbsoluteError => {
            let target = tape.constant(Tensor::full(&[1, 1], label as f64));
            let diff = tape.sub(trace.score, target)?;
            let abs = tape.abs(diff);
            tape.sum(abs)
        }
        LossKind::CrossEntropy => {
            let classes = cfg.num_classes;
            let mut onehot = Tensor::zeros(&[1, classes]);
            onehot.data_mut()[label] = 1.0;
            let onehot = tape.constant(onehot);
            let picked = tape.mul(trace.probs, onehot)?;
            let p = tape.sum(picked);
            let logp = tape.ln(p);
            tape.scale(logp, -1.0)
        }
    };
    let weighted_error = tape.scale(error, cfg.alpha);
    let error_term = tape.value(weighted_error).item();
    let beta = cfg.effective_beta();
    match trace.consistency {
        Some(lc) if beta > 0.0 => {
            let weighted = tape.scale(lc, beta);
            let consistency_term = tape.value(weighted).item();
            let total = tape.add(weighted_error, weighted)?;
            Ok(Objective {
                total,
                error_term,
                consistency_term,
            })
        }
        _ => Ok(Objective {
            total: weighted_error,
            error_term,
            consistency_term: 0.0,
        }),
    }
}
