//! Aligned multimodal samples: synthetic generation, the line-delimited
//! dataset file, and stratified splitting.
//!
//! File layout: the first line is `{"manifest": {...}}`, every following
//! line one JSON record with `tokens`, optional `language`, `vision`,
//! `acoustic`, `label` and optional `score`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::embeddings::Lexicon;
use crate::error::{Error, Result};
use crate::model::{Modalities, Modality};

#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceSample {
    pub tokens: Vec<String>,
    /// Pre-extracted word vectors, one row per token.
    pub language: Option<Tensor>,
    pub vision: Tensor,
    pub acoustic: Tensor,
    pub label: usize,
    /// Continuous sentiment score, when the source provides one.
    pub score: f64,
}

impl UtteranceSample {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// The first `n` aligned steps (all of them if shorter).
    pub fn truncated(&self, n: usize) -> UtteranceSample {
        let n = n.min(self.len());
        let head = |t: &Tensor| {
            let w = t.cols();
            Tensor::new(vec![n, w], t.data()[..n * w].to_vec()).expect("prefix of a valid tensor")
        };
        UtteranceSample {
            tokens: self.tokens[..n].to_vec(),
            language: self.language.as_ref().map(head),
            vision: head(&self.vision),
            acoustic: head(&self.acoustic),
            label: self.label,
            score: self.score,
        }
    }

    fn validate(&self, index: usize, manifest: &DatasetManifest) -> Result<()> {
        let n = self.len();
        let at = |msg: String| Error::Validation(format!("sample {index}: {msg}"));
        if n == 0 {
            return Err(at("no tokens".into()));
        }
        let mut blocks = vec![
            ("vision", &self.vision, manifest.vision_dim),
            ("acoustic", &self.acoustic, manifest.acoustic_dim),
        ];
        if let Some(lang) = &self.language {
            blocks.push(("language", lang, manifest.language_dim));
        }
        for (name, t, width) in blocks {
            if t.rows() != n {
                return Err(at(format!("{name} has {} rows but there are {n} tokens", t.rows())));
            }
            if t.cols() != width {
                return Err(at(format!(
                    "{name} width {} differs from manifest width {width}",
                    t.cols()
                )));
            }
            if !t.is_finite() {
                return Err(at(format!("{name} contains non-finite values")));
            }
        }
        if self.label >= manifest.num_classes {
            return Err(at(format!("label {} outside 0..{}", self.label, manifest.num_classes)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub samples: usize,
    pub language_dim: usize,
    pub vision_dim: usize,
    pub acoustic_dim: usize,
    pub num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_sizes: Option<Vec<usize>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<UtteranceSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    fn subset(&self, indices: &[usize]) -> Dataset {
        let samples: Vec<_> = indices.iter().map(|&i| self.samples[i].clone()).collect();
        Dataset {
            manifest: DatasetManifest {
                samples: samples.len(),
                split_sizes: None,
                ..self.manifest.clone()
            },
            samples,
        }
    }
}

const NEUTRAL_WORDS: &[&str] = &[
    "the", "a", "movie", "film", "is", "was", "this", "it", "and", "plot", "actor", "scene", "really", "very", "story",
    "just",
];
const POSITIVE_WORDS: &[&str] = &["good", "great", "excellent", "love", "wonderful", "amazing"];
const NEGATIVE_WORDS: &[&str] = &["bad", "awful", "terrible", "boring", "hate", "poor"];

/// The lexicon matching the generator's planted sentiment words.
pub fn synthetic_lexicon() -> Lexicon {
    Lexicon::from_words(POSITIVE_WORDS, NEGATIVE_WORDS)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub seq_len: usize,
    pub language_dim: usize,
    pub vision_dim: usize,
    pub acoustic_dim: usize,
    pub num_classes: usize,
    /// Distance between adjacent class means along each modality's signal
    /// direction.
    pub class_separation: f64,
    pub noise: f64,
    /// Modalities that carry class information.
    pub modality_signal: Modalities,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_samples: 200,
            seq_len: 6,
            language_dim: 16,
            vision_dim: 8,
            acoustic_dim: 8,
            num_classes: 2,
            class_separation: 2.0,
            noise: 1.0,
            modality_signal: Modalities::ALL,
            seed: 0,
        }
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v = normal_vec(rng, n);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / norm).collect()
}

/// Deterministic aligned dataset in which only the modalities named in
/// `modality_signal` carry a class-dependent mean shift. Every utterance
/// gets one planted lexicon word whose polarity follows the class only when
/// language carries signal.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.modality_signal.is_empty() {
        return Err(Error::Config("modality_signal is empty".into()));
    }
    if spec.n_samples == 0 || spec.seq_len == 0 || spec.num_classes < 2 {
        return Err(Error::Config(
            "sample count, sequence length and class count must be positive".into(),
        ));
    }
    if !(spec.class_separation.is_finite() && spec.noise.is_finite() && spec.noise >= 0.0) {
        return Err(Error::Config(
            "separation and noise must be finite, noise non-negative".into(),
        ));
    }
    let widths = [
        (Modality::Language, spec.language_dim),
        (Modality::Vision, spec.vision_dim),
        (Modality::Acoustic, spec.acoustic_dim),
    ];
    if widths.iter().any(|(_, w)| *w == 0) {
        return Err(Error::Config("feature widths must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let directions: Vec<Vec<f64>> = widths.iter().map(|(_, w)| unit_vec(&mut rng, *w)).collect();
    let vocab: Vec<&str> = NEUTRAL_WORDS
        .iter()
        .chain(POSITIVE_WORDS)
        .chain(NEGATIVE_WORDS)
        .copied()
        .collect();
    let word_vectors: Vec<Vec<f64>> = vocab.iter().map(|_| normal_vec(&mut rng, spec.language_dim)).collect();
    let word_index = |w: &str| vocab.iter().position(|v| *v == w).expect("vocabulary word");

    let mut labels: Vec<usize> = (0..spec.n_samples).map(|i| i % spec.num_classes).collect();
    labels.shuffle(&mut rng);

    let informative = |m: Modality| spec.modality_signal.contains(m) && spec.class_separation != 0.0;
    let centre = (spec.num_classes - 1) as f64 / 2.0;

    let mut samples = Vec::with_capacity(spec.n_samples);
    for label in labels {
        let shift = spec.class_separation * (label as f64 - centre);
        let offset = |m: usize| -> Vec<f64> {
            if informative(widths[m].0) {
                directions[m].iter().map(|u| u * shift).collect()
            } else {
                vec![0.0; widths[m].1]
            }
        };

        let mut tokens: Vec<&str> = (0..spec.seq_len)
            .map(|_| *NEUTRAL_WORDS.choose(&mut rng).expect("non-empty"))
            .collect();
        let positive = if informative(Modality::Language) {
            (label as f64) > centre || ((label as f64) == centre && rng.gen_bool(0.5))
        } else {
            rng.gen_bool(0.5)
        };
        let pool = if positive { POSITIVE_WORDS } else { NEGATIVE_WORDS };
        let slot = rng.gen_range(0..spec.seq_len);
        tokens[slot] = pool.choose(&mut rng).expect("non-empty");

        let lang_offset = offset(0);
        let mut language = Vec::with_capacity(spec.seq_len * spec.language_dim);
        for tok in &tokens {
            let base = &word_vectors[word_index(tok)];
            for j in 0..spec.language_dim {
                language.push(base[j] + lang_offset[j] + spec.noise * rng.sample::<f64, _>(StandardNormal));
            }
        }
        let mut block = |m: usize| -> Result<Tensor> {
            let off = offset(m);
            let w = widths[m].1;
            let data = (0..spec.seq_len * w)
                .map(|i| off[i % w] + spec.noise * rng.sample::<f64, _>(StandardNormal))
                .collect();
            Tensor::new(vec![spec.seq_len, w], data)
        };
        let vision = block(1)?;
        let acoustic = block(2)?;
        samples.push(UtteranceSample {
            tokens: tokens.iter().map(|t| t.to_string()).collect(),
            language: Some(Tensor::new(vec![spec.seq_len, spec.language_dim], language)?),
            vision,
            acoustic,
            label,
            score: label as f64,
        });
    }

    Ok(Dataset {
        manifest: DatasetManifest {
            samples: samples.len(),
            language_dim: spec.language_dim,
            vision_dim: spec.vision_dim,
            acoustic_dim: spec.acoustic_dim,
            num_classes: spec.num_classes,
            split_sizes: None,
        },
        samples,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    tokens: Vec<String>,
    #[serde(default)]
    language: Option<Vec<Vec<f64>>>,
    vision: Vec<Vec<f64>>,
    acoustic: Vec<Vec<f64>>,
    label: usize,
    #[serde(default)]
    score: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestLine {
    manifest: DatasetManifest,
}

fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn tensor_of(rows: &[Vec<f64>], width: usize) -> Result<Tensor> {
    if rows.is_empty() {
        return Ok(Tensor::zeros(&[0, width]));
    }
    Tensor::from_rows(rows)
}

pub fn write_dataset<W: Write>(dataset: &Dataset, out: W) -> Result<()> {
    let mut out = BufWriter::new(out);
    let io = |e: std::io::Error| Error::io("<dataset writer>", e);
    let json = |e: serde_json::Error| Error::Validation(e.to_string());
    let manifest = ManifestLine {
        manifest: DatasetManifest {
            samples: dataset.samples.len(),
            ..dataset.manifest.clone()
        },
    };
    serde_json::to_writer(&mut out, &manifest).map_err(json)?;
    out.write_all(b"\n").map_err(io)?;
    for s in &dataset.samples {
        let record = Record {
            tokens: s.tokens.clone(),
            language: s.language.as_ref().map(rows_of),
            vision: rows_of(&s.vision),
            acoustic: rows_of(&s.acoustic),
            label: s.label,
            score: Some(s.score),
        };
        serde_json::to_writer(&mut out, &record).map_err(json)?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(dataset, file)
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<Dataset> {
    let mut manifest: Option<DatasetManifest> = None;
    let mut samples = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            detail: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |e: serde_json::Error| Error::Parse {
            line: line_no,
            detail: e.to_string(),
        };
        let Some(m) = &manifest else {
            let header: ManifestLine = serde_json::from_str(&line).map_err(parse_err)?;
            manifest = Some(header.manifest);
            continue;
        };
        let record: Record = serde_json::from_str(&line).map_err(parse_err)?;
        let index = samples.len();
        let located = |e: Error| match e {
            Error::Validation(msg) => Error::Validation(format!("{msg} (line {line_no})")),
            other => Error::Validation(format!("sample {index} (line {line_no}): {other}")),
        };
        let sample = UtteranceSample {
            language: record
                .language
                .as_deref()
                .map(|rows| tensor_of(rows, m.language_dim))
                .transpose()
                .map_err(located)?,
            vision: tensor_of(&record.vision, m.vision_dim).map_err(located)?,
            acoustic: tensor_of(&record.acoustic, m.acoustic_dim).map_err(located)?,
            tokens: record.tokens,
            label: record.label,
            score: record.score.unwrap_or(record.label as f64),
        };
        sample.validate(index, m).map_err(located)?;
        samples.push(sample);
    }
    let manifest = manifest.unwrap_or_default();
    if manifest.samples != samples.len() {
        return Err(Error::Validation(format!(
            "manifest declares {} samples but the file holds {}",
            manifest.samples,
            samples.len()
        )));
    }
    if let Some(sizes) = &manifest.split_sizes {
        if sizes.iter().sum::<usize>() != samples.len() {
            return Err(Error::Validation(format!(
                "split sizes {sizes:?} do not cover {} samples",
                samples.len()
            )));
        }
    }
    Ok(Dataset { manifest, samples })
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file))
}

/// Stratified, seeded split into train/validation/test.
pub fn split(dataset: &Dataset, ratios: [f64; 3], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios {ratios:?} must be non-negative and sum to 1"
        )));
    }
    let classes = dataset.samples.iter().map(|s| s.label + 1).max().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: [Vec<usize>; 3] = Default::default();
    for class in 0..classes {
        let mut members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.samples[i].label == class)
            .collect();
        members.shuffle(&mut rng);
        let k = members.len();
        let n_train = ((ratios[0] * k as f64).round() as usize).min(k);
        let n_val = ((ratios[1] * k as f64).round() as usize).min(k - n_train);
        parts[0].extend(&members[..n_train]);
        parts[1].extend(&members[n_train..n_train + n_val]);
        parts[2].extend(&members[n_train + n_val..]);
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok((
        dataset.subset(&parts[0]),
        dataset.subset(&parts[1]),
        dataset.subset(&parts[2]),
    ))
}
