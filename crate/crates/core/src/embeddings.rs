//! Opinion-lexicon ingestion and the sentiment-augmented language input.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Sentiment-word sets. Lookups are case-insensitive; a word listed as both
/// positive and negative is dropped from both.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Lexicon {
    positive: BTreeSet<String>,
    negative: BTreeSet<String>,
    conflicts: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Lexicon {
    pub fn from_words<P, N>(positive: P, negative: N) -> Self
    where
        P: IntoIterator,
        P::Item: AsRef<str>,
        N: IntoIterator,
        N::Item: AsRef<str>,
    {
        let normalize = |w: &str| w.trim().to_lowercase();
        let mut pos: BTreeSet<String> = positive
            .into_iter()
            .map(|w| normalize(w.as_ref()))
            .filter(|w| !w.is_empty())
            .collect();
        let mut neg: BTreeSet<String> = negative
            .into_iter()
            .map(|w| normalize(w.as_ref()))
            .filter(|w| !w.is_empty())
            .collect();
        let shared: Vec<String> = pos.intersection(&neg).cloned().collect();
        for w in &shared {
            log::warn!("lexicon word {w:?} is both positive and negative; dropped");
            pos.remove(w);
            neg.remove(w);
        }
        Self {
            positive: pos,
            negative: neg,
            conflicts: shared.len(),
        }
    }

    /// Reads two word-per-line files; blank lines and `;` comments are skipped.
    pub fn load(positive_path: impl AsRef<Path>, negative_path: impl AsRef<Path>) -> Result<Self> {
        let pos = read_word_list(positive_path.as_ref())?;
        let neg = read_word_list(negative_path.as_ref())?;
        Ok(Self::from_words(pos, neg))
    }

    pub fn positive_count(&self) -> usize {
        self.positive.len()
    }

    pub fn negative_count(&self) -> usize {
        self.negative.len()
    }

    /// Number of words dropped because they appeared in both lists.
    pub fn conflicts(&self) -> usize {
        self.conflicts
    }

    pub fn positive_words(&self) -> impl Iterator<Item = &str> {
        self.positive.iter().map(String::as_str)
    }

    pub fn negative_words(&self) -> impl Iterator<Item = &str> {
        self.negative.iter().map(String::as_str)
    }

    pub fn polarity(&self, word: &str) -> Option<Polarity> {
        let w = word.to_lowercase();
        if self.positive.contains(&w) {
            Some(Polarity::Positive)
        } else if self.negative.contains(&w) {
            Some(Polarity::Negative)
        } else {
            None
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.polarity(word).is_some()
    }
}

fn read_word_list(path: &Path) -> Result<Vec<String>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(String::from_utf8_lossy(&bytes)
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with(';'))
        .map(str::to_string)
        .collect())
}

/// 1 for lexicon words, 0 otherwise.
pub fn sentiment_flags<S: AsRef<str>>(tokens: &[S], lexicon: &Lexicon) -> Vec<usize> {
    tokens
        .iter()
        .map(|t| usize::from(lexicon.contains(t.as_ref())))
        .collect()
}

/// Row indices for the polarity-aware table: 0 neutral, 1 positive, 2 negative.
pub fn polarity_flags<S: AsRef<str>>(tokens: &[S], lexicon: &Lexicon) -> Vec<usize> {
    tokens
        .iter()
        .map(|t| match lexicon.polarity(t.as_ref()) {
            None => 0,
            Some(Polarity::Positive) => 1,
            Some(Polarity::Negative) => 2,
        })
        .collect()
}

/// Trainable lookup table: row 0 is the non-sentiment row, row 1 the
/// sentiment row (rows 1 and 2 split by polarity in the 3-row variant).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SentimentEmbedding {
    pub rows: usize,
    pub width: usize,
}

impl SentimentEmbedding {
    pub fn new(width: usize, polarity_aware: bool) -> Self {
        Self {
            rows: if polarity_aware { 3 } else { 2 },
            width,
        }
    }

    /// Rows drawn from U(-0.1, 0.1), each from its own seed.
    pub fn init_table(&self, seed: u64) -> Tensor {
        let mut data = Vec::with_capacity(self.rows * self.width);
        for row in 0..self.rows {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(row as u64 + 1));
            data.extend((0..self.width).map(|_| rng.gen_range(-0.1..0.1)));
        }
        Tensor::new(vec![self.rows, self.width], data).expect("consistent shape")
    }
}

/// Source of the per-token word vectors `e_i`.
#[derive(Clone, Debug)]
pub enum TokenInput {
    /// Pre-extracted word vectors, `n × d_e`.
    WordVectors(Var),
    /// Token ids into a trainable `V × d_e` table.
    TokenIds { ids: Vec<usize>, table: Var },
}

/// Builds `X_L` (word vector concatenated with its sentiment row) and the
/// sentiment matrix `S`. Without a table the sentiment part has zero width.
pub fn build_language_input(
    tape: &mut Tape,
    tokens: &TokenInput,
    flags: &[usize],
    sentiment_table: Option<Var>,
) -> Result<(Var, Var)> {
    let words = match tokens {
        TokenInput::WordVectors(v) => *v,
        TokenInput::TokenIds { ids, table } => tape.gather_rows(*table, ids)?,
    };
    let n = tape.value(words).rows();
    if n == 0 {
        return Err(Error::Contract("language input has no tokens".into()));
    }
    if flags.len() != n {
        return Err(Error::dim(
            "build_language_input",
            tape.value(words).shape(),
            &[flags.len()],
        ));
    }
    let s = match sentiment_table {
        Some(table) => tape.gather_rows(table, flags)?,
        None => tape.constant(Tensor::zeros(&[n, 0])),
    };
    if tape.value(s).cols() == 0 {
        return Ok((words, s));
    }
    let x = tape.concat_cols(&[words, s])?;
    Ok((x, s))
}
