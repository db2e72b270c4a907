use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{MagcnConfig, Modality};
use crate::attention::{AffinityParams, HeadProjections, MhaParams};
use crate::autodiff::{Bindings, ParamSet, Var};
use crate::dcgcn::{DcgcnDims, GcnStack, Linear};
use crate::embeddings::SentimentEmbedding;
use crate::encoders::LstmParams;
use crate::error::Result;
use crate::init::xavier_uniform;

pub const SENTIMENT_TABLE: &str = "sentiment.table";

fn encoder_prefix(m: Modality) -> String {
    format!("encoder.{}", m.name())
}

fn tower_prefix(partner: Modality) -> String {
    format!("tower.{}", partner.name())
}

/// Width of the pooled feature vector fed to the classification head.
pub fn head_input_width(cfg: &MagcnConfig) -> usize {
    cfg.d + cfg.tower_width() * cfg.modalities.tower_partners().len()
}

/// Freshly initialized parameters for `cfg`, fully determined by `seed`.
///
/// The sentiment table is always allocated so that ablated runs can show it
/// receives no gradient.
pub fn init_params(cfg: &MagcnConfig, seed: u64) -> Result<ParamSet> {
    cfg.validate()?;
    let mut params = ParamSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.d;
    let d_h = d / 2;
    let dims = DcgcnDims::new(d, cfg.sublayers)?;

    let se = SentimentEmbedding::new(cfg.sentiment_dim, cfg.polarity_sentiment);
    params.insert(SENTIMENT_TABLE, se.init_table(seed ^ 0x5e17_1e47));

    for m in [Modality::Language, Modality::Vision, Modality::Acoustic] {
        if cfg.modalities.contains(m) {
            let prefix = encoder_prefix(m);
            LstmParams::init(&mut params, &format!("{prefix}.fwd"), cfg.input_dim(m), d_h, &mut rng);
            LstmParams::init(&mut params, &format!("{prefix}.bwd"), cfg.input_dim(m), d_h, &mut rng);
        }
    }

    let width = cfg.tower_width();
    for partner in cfg.modalities.tower_partners() {
        let prefix = tower_prefix(partner);
        AffinityParams::init(&mut params, &format!("{prefix}.affinity"), d, &mut rng);
        GcnStack::init(&mut params, &format!("{prefix}.gcn"), dims, cfg.use_dense_gcn, &mut rng);
        Linear::init(&mut params, &format!("{prefix}.gcn_out"), d, d, &mut rng);
        MhaParams::init(&mut params, &format!("{prefix}.mha"), width, cfg.heads, &mut rng)?;
        if cfg.has_consistency_term() {
            params.insert(format!("{prefix}.projection"), xavier_uniform(&mut rng, width, d));
        }
    }

    for z in 0..cfg.blocks {
        let prefix = format!("language.block{z}");
        HeadProjections::init(&mut params, &format!("{prefix}.graphs"), d, cfg.heads, &mut rng)?;
        for t in 0..cfg.heads {
            GcnStack::init(
                &mut params,
                &format!("{prefix}.gcn{t}"),
                dims,
                cfg.use_dense_gcn,
                &mut rng,
            );
        }
        Linear::init(&mut params, &format!("{prefix}.out"), d * cfg.heads, d, &mut rng);
    }

    Linear::init(&mut params, "head", head_input_width(cfg), cfg.num_classes, &mut rng);
    Ok(params)
}

#[derive(Clone, Debug)]
pub struct TowerParams {
    pub affinity: AffinityParams,
    pub gcn: GcnStack,
    pub gcn_out: Linear,
    pub mha: MhaParams,
    /// Maps the tower output to width `d` for the consistency term.
    pub projection: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct LanguageBlock {
    pub graphs: HeadProjections,
    pub stacks: Vec<GcnStack>,
    pub out: Linear,
}

/// Typed views of bound model parameters.
#[derive(Clone, Debug)]
pub struct ModelBindings {
    pub sentiment_table: Option<Var>,
    pub encoders: Vec<(Modality, LstmParams, LstmParams)>,
    pub towers: Vec<(Modality, TowerParams)>,
    pub blocks: Vec<LanguageBlock>,
    pub head: Linear,
}

impl ModelBindings {
    pub fn bind(b: &Bindings, cfg: &MagcnConfig) -> Result<Self> {
        let sentiment_table = if cfg.effective_sentiment_dim() > 0 {
            Some(b.var(SENTIMENT_TABLE)?)
        } else {
            None
        };
        let mut encoders = Vec::new();
        for m in [Modality::Language, Modality::Vision, Modality::Acoustic] {
            if cfg.modalities.contains(m) {
                let prefix = encoder_prefix(m);
                encoders.push((
                    m,
                    LstmParams::bind(b, &format!("{prefix}.fwd"))?,
                    LstmParams::bind(b, &format!("{prefix}.bwd"))?,
                ));
            }
        }
        let mut towers = Vec::new();
        for partner in cfg.modalities.tower_partners() {
            let prefix = tower_prefix(partner);
            let projection = if cfg.has_consistency_term() {
                Some(b.var(&format!("{prefix}.projection"))?)
            } else {
                None
            };
            towers.push((
                partner,
                TowerParams {
                    affinity: AffinityParams::bind(b, &format!("{prefix}.affinity"))?,
                    gcn: GcnStack::bind(b, &format!("{prefix}.gcn"), cfg.sublayers, cfg.use_dense_gcn)?,
                    gcn_out: Linear::bind(b, &format!("{prefix}.gcn_out"))?,
                    mha: MhaParams::bind(b, &format!("{prefix}.mha"), cfg.heads)?,
                    projection,
                },
            ));
        }
        let blocks = (0..cfg.blocks)
            .map(|z| {
                let prefix = format!("language.block{z}");
                Ok(LanguageBlock {
                    graphs: HeadProjections::bind(b, &format!("{prefix}.graphs"), cfg.heads)?,
                    stacks: (0..cfg.heads)
                        .map(|t| GcnStack::bind(b, &format!("{prefix}.gcn{t}"), cfg.sublayers, cfg.use_dense_gcn))
                        .collect::<Result<_>>()?,
                    out: Linear::bind(b, &format!("{prefix}.out"))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            sentiment_table,
            encoders,
            towers,
            blocks,
            head: Linear::bind(b, "head")?,
        })
    }

    pub fn encoder(&self, m: Modality) -> Option<(&LstmParams, &LstmParams)> {
        self.encoders.iter().find(|(x, _, _)| *x == m).map(|(_, f, b)| (f, b))
    }
}
