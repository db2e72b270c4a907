//! Run configuration and the end-to-end train / evaluate / ablate drivers.
//!
//! A run config is flat TOML: model keys (`d`, `heads`, `modalities`, ...)
//! sit next to run keys (`seed`, `epochs`, `data`, ...). An optional
//! `[synthetic]` table describes generated data when `data` is absent.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, load_dataset, split, synthetic_lexicon, Dataset, SyntheticSpec};
use crate::dcgcn::{vanilla_parameter_count, DcgcnDims};
use crate::embeddings::Lexicon;
use crate::error::{Error, Result};
use crate::metrics::{EpochRecord, MetricsReport};
use crate::model::{init_params, Checkpoint, MagcnConfig, Modalities, Modality};
use crate::par::Execution;
use crate::training::{evaluate_params, train, OptimizerKind, TrainOptions, TrainOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    /// Required; seeds initialization, shuffling and splitting.
    pub seed: u64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub execution: Execution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_train_accuracy: Option<f64>,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    /// Dataset file; synthetic data is generated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_lexicon: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_lexicon: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: SyntheticSpec,
}

fn default_epochs() -> usize {
    50
}
fn default_learning_rate() -> f64 {
    1e-3
}
fn default_batch_size() -> usize {
    1
}
fn default_split() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: MagcnConfig,
    pub run: RunSettings,
}

fn toml_error(e: impl fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl RunConfig {
    /// A config for `seed` with every other key at its default.
    pub fn with_seed(seed: u64) -> Self {
        Self::from_toml_str(&format!("seed = {seed}")).expect("default config parses")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(toml_error)?;
        let model_keys: BTreeSet<String> = toml::Table::try_from(MagcnConfig::default())
            .map_err(toml_error)?
            .keys()
            .cloned()
            .collect();
        let mut model = toml::Table::new();
        for key in model_keys {
            if let Some(v) = table.remove(&key) {
                model.insert(key, v);
            }
        }
        let model: MagcnConfig = model.try_into().map_err(toml_error)?;
        let run: RunSettings = table.try_into().map_err(toml_error)?;
        let rc = Self { model, run };
        rc.validate()?;
        Ok(rc)
    }

    /// Reads `path`; relative data and lexicon paths resolve against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rc = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut rc.run.data,
            &mut rc.run.positive_lexicon,
            &mut rc.run.negative_lexicon,
        ] {
            if let Some(rel) = p.as_ref().filter(|p| p.is_relative()) {
                *p = Some(base.join(rel));
            }
        }
        Ok(rc)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        let mut table = toml::Table::try_from(&self.model).map_err(toml_error)?;
        let run = toml::Table::try_from(&self.run).map_err(toml_error)?;
        table.extend(run);
        toml::to_string(&table).map_err(toml_error)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.run.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if let Some(t) = self.run.target_train_accuracy {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("target_train_accuracy {t} outside [0, 1]")));
            }
        }
        if self.run.positive_lexicon.is_some() != self.run.negative_lexicon.is_some() {
            return Err(Error::Config("give both lexicon files or neither".into()));
        }
        Ok(())
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.run.epochs,
            learning_rate: self.run.learning_rate,
            batch_size: self.run.batch_size,
            optimizer: self.run.optimizer,
            execution: self.run.execution,
            target_train_accuracy: self.run.target_train_accuracy,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunData {
    pub lexicon: Lexicon,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

pub fn prepare_data(rc: &RunConfig) -> Result<RunData> {
    let dataset = match &rc.run.data {
        Some(path) => load_dataset(path)?,
        None => generate_synthetic(&rc.run.synthetic)?,
    };
    check_widths(&rc.model, &dataset)?;
    let lexicon = match (&rc.run.positive_lexicon, &rc.run.negative_lexicon) {
        (Some(p), Some(n)) => Lexicon::load(p, n)?,
        _ if rc.run.data.is_none() => synthetic_lexicon(),
        _ => {
            log::warn!("no lexicon files given; every token is treated as non-sentiment");
            Lexicon::default()
        }
    };
    let (train, val, test) = split(&dataset, rc.run.split, rc.run.seed)?;
    Ok(RunData {
        lexicon,
        train,
        val,
        test,
    })
}

/// Rejects datasets whose feature widths or labels do not fit `cfg`.
pub fn check_widths(cfg: &MagcnConfig, dataset: &Dataset) -> Result<()> {
    if dataset.is_empty() {
        return Ok(());
    }
    let m = &dataset.manifest;
    for (modality, have, want) in [
        (Modality::Language, m.language_dim, cfg.language_dim),
        (Modality::Vision, m.vision_dim, cfg.vision_dim),
        (Modality::Acoustic, m.acoustic_dim, cfg.acoustic_dim),
    ] {
        if cfg.modalities.contains(modality) && have != want {
            return Err(Error::Validation(format!(
                "dataset {} width {have} does not match model width {want}",
                modality.name()
            )));
        }
    }
    if cfg.modalities.contains(Modality::Language) && dataset.samples.iter().any(|s| s.language.is_none()) {
        return Err(Error::Validation(
            "model uses language but some samples carry no word vectors".into(),
        ));
    }
    if m.num_classes > cfg.num_classes {
        return Err(Error::Validation(format!(
            "dataset has {} classes, model predicts {}",
            m.num_classes, cfg.num_classes
        )));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    /// Metrics of the selected parameters on the test split.
    pub report: MetricsReport,
    pub checkpoint: Checkpoint,
    pub training: TrainOutcome,
}

/// Trains from a fresh initialization and evaluates on the test split (or
/// the validation split, or the training split, whichever is first
/// non-empty starting from test).
pub fn run_with_data(rc: &RunConfig, data: &RunData, tag: &str) -> Result<RunOutcome> {
    rc.validate()?;
    let params = init_params(&rc.model, rc.run.seed)?;
    let training = train(
        &rc.model,
        &rc.train_options(),
        &data.lexicon,
        params,
        &data.train,
        Some(&data.val),
        rc.run.seed,
    )?;
    let eval_set = [&data.test, &data.val, &data.train]
        .into_iter()
        .find(|d| !d.is_empty())
        .ok_or_else(|| Error::Validation("dataset is empty".into()))?;
    let mut report = evaluate_params(
        rc.run.execution,
        &rc.model,
        &training.best_params,
        &data.lexicon,
        eval_set,
        tag,
    )?;
    report.history = training.history.clone();
    let checkpoint = Checkpoint {
        config: rc.model.clone(),
        lexicon: data.lexicon.clone(),
        params: training.best_params.clone(),
    };
    Ok(RunOutcome {
        report,
        checkpoint,
        training,
    })
}

pub fn run(rc: &RunConfig, tag: &str) -> Result<RunOutcome> {
    let data = prepare_data(rc)?;
    run_with_data(rc, &data, tag)
}

pub fn evaluate_checkpoint(checkpoint: &Checkpoint, dataset: &Dataset, exec: Execution) -> Result<MetricsReport> {
    check_widths(&checkpoint.config, dataset)?;
    evaluate_params(
        exec,
        &checkpoint.config,
        &checkpoint.params,
        &checkpoint.lexicon,
        dataset,
        "eval",
    )
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn to_jsonl<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row).map_err(|e| Error::Validation(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

/// Writes `config.toml`, `checkpoint.bin`, `metrics.json` and
/// `history.jsonl` into `dir`.
pub fn write_run_outputs(dir: &Path, rc: &RunConfig, outcome: &RunOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_text(&dir.join("config.toml"), &rc.to_toml_string()?)?;
    crate::model::save_checkpoint(dir.join("checkpoint.bin"), &outcome.checkpoint)?;
    let metrics = serde_json::to_string_pretty(&outcome.report).map_err(|e| Error::Validation(e.to_string()))?;
    write_text(&dir.join("metrics.json"), &metrics)?;
    write_text(&dir.join("history.jsonl"), &to_jsonl(&outcome.training.history)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationGrid {
    /// With and without the sentiment embedding.
    Se,
    /// With and without the consistency loss.
    Cl,
    /// Dense versus vanilla graph convolution.
    Gcn,
    /// The seven modality subsets.
    Modality,
}

impl FromStr for AblationGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "se" => Ok(Self::Se),
            "cl" => Ok(Self::Cl),
            "gcn" => Ok(Self::Gcn),
            "modality" => Ok(Self::Modality),
            other => Err(Error::Config(format!("unknown ablation grid {other:?}"))),
        }
    }
}

impl fmt::Display for AblationGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Se => "se",
            Self::Cl => "cl",
            Self::Gcn => "gcn",
            Self::Modality => "modality",
        })
    }
}

/// The tagged model variants of `grid`, all sharing `base`'s other keys.
pub fn grid_variants(base: &MagcnConfig, grid: AblationGrid) -> Vec<(String, MagcnConfig)> {
    let with = |tag: &str, f: &dyn Fn(&mut MagcnConfig)| {
        let mut cfg = base.clone();
        f(&mut cfg);
        (tag.to_string(), cfg)
    };
    match grid {
        AblationGrid::Se => vec![
            with("full", &|c| c.use_sentiment_embedding = true),
            with("w/o SE", &|c| c.use_sentiment_embedding = false),
        ],
        AblationGrid::Cl => vec![
            with("full", &|c| c.use_consistency_loss = true),
            with("w/o CL", &|c| c.use_consistency_loss = false),
        ],
        AblationGrid::Gcn => vec![
            with("DCGCN", &|c| c.use_dense_gcn = true),
            with("vanilla GCN", &|c| c.use_dense_gcn = false),
        ],
        AblationGrid::Modality => Modalities::ablation_grid()
            .into_iter()
            .map(|m| with(&m.to_string(), &|c| c.modalities = m))
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub grid: String,
    pub tag: String,
    pub parameters: usize,
    /// Scalars in one graph-convolution stack of this variant.
    pub gcn_stack_parameters: usize,
    pub max_sentiment_grad: f64,
    pub max_consistency_term: f64,
    pub metrics: MetricsReport,
}

/// Trains every variant of `grid` on the same data with the same seed.
pub fn ablate(rc: &RunConfig, grid: AblationGrid) -> Result<Vec<AblationRow>> {
    let data = prepare_data(rc)?;
    let mut rows = Vec::new();
    for (tag, model) in grid_variants(&rc.model, grid) {
        log::info!("ablation {grid}: {tag}");
        let variant = RunConfig {
            model,
            run: rc.run.clone(),
        };
        let outcome = run_with_data(&variant, &data, &tag)?;
        let dims = DcgcnDims::new(variant.model.d, variant.model.sublayers)?;
        rows.push(AblationRow {
            grid: grid.to_string(),
            tag,
            parameters: outcome.checkpoint.params.scalar_count(),
            gcn_stack_parameters: if variant.model.use_dense_gcn {
                dims.parameter_count()
            } else {
                vanilla_parameter_count(variant.model.d, variant.model.sublayers)
            },
            max_sentiment_grad: outcome.training.max_sentiment_grad,
            max_consistency_term: outcome.training.max_consistency_term,
            metrics: outcome.report,
        });
    }
    Ok(rows)
}

pub fn render_ablation_table(rows: &[AblationRow]) -> String {
    let width = rows.iter().map(|r| r.tag.len()).max().unwrap_or(0).max(7);
    let mut out = format!(
        "{:<width$}  {:>8}  {:>8}  {:>8}  {:>10}  {:>10}\n",
        "variant", "acc", "f1", "macro-f1", "params", "gcn-stack"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<width$}  {:>8.4}  {:>8.4}  {:>8.4}  {:>10}  {:>10}\n",
            r.tag, r.metrics.accuracy, r.metrics.f1_positive, r.metrics.macro_f1, r.parameters, r.gcn_stack_parameters
        ));
    }
    out
}

/// Loss curve as CSV, one row per epoch.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,error_term,consistency_term,train_accuracy,val_accuracy,val_loss\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.epoch,
            r.train_loss,
            r.error_term,
            r.consistency_term,
            r.train_accuracy,
            opt(r.val_accuracy),
            opt(r.val_loss)
        ));
    }
    out
}
