use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Which modalities feed the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Modalities {
    pub language: bool,
    pub vision: bool,
    pub acoustic: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Language,
    Vision,
    Acoustic,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Language => "language",
            Modality::Vision => "vision",
            Modality::Acoustic => "acoustic",
        }
    }
}

impl Modalities {
    pub const ALL: Modalities = Modalities {
        language: true,
        vision: true,
        acoustic: true,
    };

    pub fn contains(&self, m: Modality) -> bool {
        match m {
            Modality::Language => self.language,
            Modality::Vision => self.vision,
            Modality::Acoustic => self.acoustic,
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.language || self.vision || self.acoustic)
    }

    /// The modality fed to the unimodal tower: language when present,
    /// otherwise vision, otherwise acoustics.
    pub fn primary(&self) -> Option<Modality> {
        [Modality::Language, Modality::Vision, Modality::Acoustic]
            .into_iter()
            .find(|m| self.contains(*m))
    }

    /// Modalities fused with the primary one by an inter-modality tower.
    pub fn tower_partners(&self) -> Vec<Modality> {
        let primary = self.primary();
        [Modality::Vision, Modality::Acoustic]
            .into_iter()
            .filter(|m| self.contains(*m) && Some(*m) != primary)
            .collect()
    }

    /// The seven subsets compared in the modality ablation, in table order:
    /// V, A, L, A+V, L+V, L+A, L+V+A.
    pub fn ablation_grid() -> Vec<Modalities> {
        ["V", "A", "L", "A+V", "L+V", "L+A", "L+V+A"]
            .iter()
            .map(|s| s.parse().expect("static subset"))
            .collect()
    }
}

impl Default for Modalities {
    fn default() -> Self {
        Self::ALL
    }
}

impl fmt::Display for Modalities {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Bimodal subsets without language are written A+V.
        let parts: Vec<&str> = if !self.language && self.vision && self.acoustic {
            vec!["A", "V"]
        } else {
            [(self.language, "L"), (self.vision, "V"), (self.acoustic, "A")]
                .iter()
                .filter(|(on, _)| *on)
                .map(|(_, s)| *s)
                .collect()
        };
        write!(f, "{}", parts.join("+"))
    }
}

impl FromStr for Modalities {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut m = Modalities {
            language: false,
            vision: false,
            acoustic: false,
        };
        for c in s.chars().filter(|c| !matches!(c, '+' | ',' | ' ')) {
            match c.to_ascii_uppercase() {
                'L' => m.language = true,
                'V' => m.vision = true,
                'A' => m.acoustic = true,
                other => return Err(Error::Config(format!("unknown modality {other:?} in {s:?}"))),
            }
        }
        if m.is_empty() {
            return Err(Error::Config("modality set is empty".into()));
        }
        Ok(m)
    }
}

impl Serialize for Modalities {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Modalities {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Absolute error between the expected class index and the label.
    #[default]
    AbsoluteError,
    CrossEntropy,
}

/// Architecture, loss weights and ablation switches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MagcnConfig {
    /// Shared model width; each Bi-LSTM direction has `d / 2` units.
    pub d: usize,
    /// Dense GCN sublayers per block.
    pub sublayers: usize,
    /// Attention heads (and graphs in the language tower).
    pub heads: usize,
    /// Language tower blocks.
    pub blocks: usize,
    pub sentiment_dim: usize,
    pub polarity_sentiment: bool,
    pub alpha: f64,
    pub beta: f64,
    pub num_classes: usize,
    pub loss: LossKind,
    pub use_sentiment_embedding: bool,
    pub use_consistency_loss: bool,
    pub use_dense_gcn: bool,
    pub modalities: Modalities,
    pub language_dim: usize,
    pub vision_dim: usize,
    pub acoustic_dim: usize,
}

impl Default for MagcnConfig {
    fn default() -> Self {
        Self {
            d: 64,
            sublayers: 2,
            heads: 4,
            blocks: 2,
            sentiment_dim: 8,
            polarity_sentiment: false,
            alpha: 1.0,
            beta: 0.1,
            num_classes: 2,
            loss: LossKind::AbsoluteError,
            use_sentiment_embedding: true,
            use_consistency_loss: true,
            use_dense_gcn: true,
            modalities: Modalities::ALL,
            language_dim: 16,
            vision_dim: 8,
            acoustic_dim: 8,
        }
    }
}

impl MagcnConfig {
    /// Width of the sentiment part of the language input and of `S`.
    pub fn effective_sentiment_dim(&self) -> usize {
        if self.use_sentiment_embedding && self.modalities.primary() == Some(Modality::Language) {
            self.sentiment_dim
        } else {
            0
        }
    }

    pub fn effective_beta(&self) -> f64 {
        if self.use_consistency_loss {
            self.beta
        } else {
            0.0
        }
    }

    /// Width of a tower's sentiment-augmented representation.
    pub fn tower_width(&self) -> usize {
        self.d + self.effective_sentiment_dim()
    }

    pub fn input_dim(&self, m: Modality) -> usize {
        match m {
            Modality::Language => self.language_dim + self.effective_sentiment_dim(),
            Modality::Vision => self.vision_dim,
            Modality::Acoustic => self.acoustic_dim,
        }
    }

    /// Whether the consistency term is part of the graph: both towers must
    /// exist and the switch must be on.
    pub fn has_consistency_term(&self) -> bool {
        self.use_consistency_loss && self.modalities.tower_partners().len() == 2
    }

    pub fn sentiment_rows(&self) -> usize {
        if self.polarity_sentiment {
            3
        } else {
            2
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.d == 0 || !self.d.is_multiple_of(2) {
            return fail(format!("d = {} must be positive and even", self.d));
        }
        if self.sublayers == 0 || !self.d.is_multiple_of(self.sublayers) {
            return fail(format!(
                "d = {} is not divisible by sublayers = {}",
                self.d, self.sublayers
            ));
        }
        if self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return fail(format!("d = {} is not divisible by heads = {}", self.d, self.heads));
        }
        if !self.modalities.tower_partners().is_empty() && !self.tower_width().is_multiple_of(self.heads) {
            return fail(format!(
                "tower width d + d_s = {} is not divisible by heads = {}",
                self.tower_width(),
                self.heads
            ));
        }
        if self.blocks == 0 {
            return fail("blocks must be at least 1".into());
        }
        if self.num_classes < 2 {
            return fail("num_classes must be at least 2".into());
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} = {v} must be finite and non-negative"));
            }
        }
        if self.modalities.is_empty() {
            return fail("modality set is empty".into());
        }
        for m in [Modality::Language, Modality::Vision, Modality::Acoustic] {
            let width = match m {
                Modality::Language => self.language_dim,
                Modality::Vision => self.vision_dim,
                Modality::Acoustic => self.acoustic_dim,
            };
            if self.modalities.contains(m) && width == 0 {
                return fail(format!("{} feature width is zero", m.name()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modality_strings_round_trip() {
        let grid = Modalities::ablation_grid();
        let names: Vec<String> = grid.iter().map(|m| m.to_string()).collect();
        assert_eq!(names, ["V", "A", "L", "A+V", "L+V", "L+A", "L+V+A"]);
        for m in grid {
            assert_eq!(m.to_string().parse::<Modalities>().unwrap(), m);
        }
        assert!("".parse::<Modalities>().is_err());
        assert!("LX".parse::<Modalities>().is_err());
    }

    #[test]
    fn routing_of_subsets() {
        let av: Modalities = "A+V".parse().unwrap();
        assert_eq!(av.primary(), Some(Modality::Vision));
        assert_eq!(av.tower_partners(), vec![Modality::Acoustic]);
        let all = Modalities::ALL;
        assert_eq!(all.primary(), Some(Modality::Language));
        assert_eq!(all.tower_partners(), vec![Modality::Vision, Modality::Acoustic]);
        let l: Modalities = "L".parse().unwrap();
        assert!(l.tower_partners().is_empty());
    }

    #[test]
    fn defaults_validate() {
        MagcnConfig::default().validate().unwrap();
    }

    #[test]
    fn divisibility_is_enforced() {
        let bad = MagcnConfig {
            d: 60,
            sublayers: 7,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = MagcnConfig {
            d: 8,
            heads: 2,
            sentiment_dim: 3,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = MagcnConfig {
            beta: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn switches_zero_their_terms() {
        let cfg = MagcnConfig {
            use_sentiment_embedding: false,
            use_consistency_loss: false,
            ..Default::default()
        };
        assert_eq!(cfg.effective_sentiment_dim(), 0);
        assert_eq!(cfg.effective_beta(), 0.0);
        assert!(!cfg.has_consistency_term());
    }
}
