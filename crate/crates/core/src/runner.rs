//! Training loop, multi-seed protocol, evaluation and report tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    default_split, generate, load_jsonl, load_split, records_from_table, CaptionRecord, DatasetError, FeatureSpec, Split,
    IMAGES_PER_CAPTION,
};
use crate::encoders::{load_features, EncodeError, FeatureSource};
use crate::model::{Checkpoint, EncoderKind, Example, Model, ModelError, ModelSpec};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("non-finite loss at seed {seed}, epoch {epoch}, batch {batch}: loss {loss}, largest |grad| {grad} at {slot}")]
    NonFinite { seed: u64, epoch: usize, batch: usize, loss: f64, grad: f64, slot: String },
}

/// Named sub-streams of one root seed.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    Init = 0,
    Shuffle = 1,
    Noise = 2,
}

pub fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n: usize) -> Self {
        Self { kind, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        match self.kind {
            OptimizerKind::Sgd => params.iter_mut().zip(grad).for_each(|(p, g)| *p -= lr * g),
            OptimizerKind::Adam { beta1, beta2, eps } => {
                self.t += 1;
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for i in 0..params.len() {
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
                }
            }
        }
    }
}

/// Where the records come from. Without `data`, a dataset is generated in
/// memory from `features` (a CSV) or `generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub data: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub generate: FeatureSpec,
    pub images_per_caption: usize,
    pub data_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            data: None,
            features: None,
            split: None,
            generate: FeatureSpec::default(),
            images_per_caption: IMAGES_PER_CAPTION,
            data_seed: 1,
        }
    }
}

pub fn load_records(cfg: &DataConfig) -> Result<Vec<CaptionRecord>, RunError> {
    let table = cfg.features.as_ref().map(load_features).transpose()?;
    if let Some(path) = &cfg.data {
        return Ok(load_jsonl(path, table.as_ref())?);
    }
    let split = match &cfg.split {
        Some(p) => load_split(p)?,
        None => default_split(),
    };
    match table {
        Some(t) => Ok(records_from_table(&split, &t, FeatureSource::External, cfg.images_per_caption)?),
        None => Ok(generate(&split, &cfg.generate, cfg.images_per_caption, &mut rng_for(cfg.data_seed, Stream::Noise))?),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelSpec,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seeds: Vec<u64>,
    pub optimizer: OptimizerKind,
    pub data: DataConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelSpec::Quantum(Default::default()),
            epochs: 100,
            lr: 0.001,
            batch: 8,
            seeds: vec![1],
            optimizer: OptimizerKind::default(),
            data: DataConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Classical defaults: 50 epochs, lr 0.01 on multi-hot vectors and 0.1 on
    /// external embeddings.
    pub fn classical(external: bool) -> Self {
        Self { model: ModelSpec::Classical, epochs: 50, lr: if external { 0.1 } else { 0.01 }, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let mut errs = Vec::new();
        if self.batch == 0 {
            errs.push("batch must be >= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            errs.push("lr must be > 0");
        }
        if self.seeds.is_empty() {
            errs.push("seeds must be non-empty");
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(RunError::Config(errs.join("; ")))
        }
    }

    pub fn label(&self) -> String {
        let source = match (&self.data.features, &self.data.generate) {
            (Some(_), _) | (None, FeatureSpec::Synthetic { .. }) => "Synthetic",
            (None, FeatureSpec::Mhe { sigma }) if *sigma > 0.0 => "MHE+noise",
            _ => "MHE",
        };
        match &self.model {
            ModelSpec::Classical => format!("Classical-DisCoCat-{source}"),
            ModelSpec::Quantum(q) => {
                let enc = match q.encoder {
                    EncoderKind::Mhe => source.to_string(),
                    EncoderKind::Angle => format!("Angle-{source}"),
                    EncoderKind::Amplitude => format!("Amplitude-{source}"),
                };
                let align = match q.alignment {
                    crate::model::Alignment::TrainableBox => "box",
                    crate::model::Alignment::Widen => "widen",
                };
                format!("Quantum-{enc} ({align})")
            }
        }
    }
}

/// Accuracy under both counting conventions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Accuracy {
    /// Fraction of images whose correct caption outscores the swapped one
    /// (ties count as wrong).
    pub image: f64,
    /// Fraction of (image, caption) pairs classified on the right side of 0.5.
    pub pair: f64,
    pub n: usize,
}

pub fn accuracy(scores: &[(f64, f64)]) -> Accuracy {
    if scores.is_empty() {
        return Accuracy::default();
    }
    let n = scores.len();
    let image = scores.iter().filter(|(p, q)| p > q).count() as f64 / n as f64;
    let pair = scores.iter().map(|(p, q)| (*p > 0.5) as usize + (*q < 0.5) as usize).sum::<usize>() as f64 / (2 * n) as f64;
    Accuracy { image, pair, n }
}

pub type SplitMetrics = BTreeMap<Split, Accuracy>;

/// Accuracy per split of the records behind `examples`.
pub fn evaluate(model: &Model, params: &[f64], records: &[CaptionRecord], examples: &[Example]) -> Result<SplitMetrics, RunError> {
    let scores = model.scores(params, examples)?;
    let mut by: BTreeMap<Split, Vec<(f64, f64)>> = BTreeMap::new();
    for (r, s) in records.iter().zip(scores) {
        by.entry(r.split).or_default().push(s);
    }
    Ok(by.into_iter().map(|(k, v)| (k, accuracy(&v))).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: BTreeMap<Split, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    /// Accuracies before training.
    pub initial: SplitMetrics,
    pub epochs: Vec<EpochLog>,
    pub final_metrics: SplitMetrics,
    #[serde(skip)]
    pub params: Vec<f64>,
}

impl SeedRun {
    pub fn image_accuracy(&self, s: Split) -> f64 {
        self.final_metrics.get(&s).map_or(0.0, |a| a.image)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub config: TrainConfig,
    pub n_params: usize,
    /// Distinct trainable parameters per caption circuit (quantum only).
    pub params_per_caption: Option<usize>,
    pub runs: Vec<SeedRun>,
    pub selected_seed: u64,
    pub selected: SplitMetrics,
    pub wall_clock_s: f64,
}

impl RunReport {
    pub fn selected_run(&self) -> &SeedRun {
        self.runs.iter().find(|r| r.seed == self.selected_seed).expect("selected seed is in runs")
    }
}

/// Highest ood_val image accuracy; ties go to the lowest seed.
pub fn select_seed(runs: &[SeedRun]) -> u64 {
    let mut best: Option<&SeedRun> = None;
    for r in runs {
        let better = match best {
            None => true,
            Some(b) => {
                let (x, y) = (r.image_accuracy(Split::OodVal), b.image_accuracy(Split::OodVal));
                x > y || (x == y && r.seed < b.seed)
            }
        };
        if better {
            best = Some(r);
        }
    }
    best.expect("at least one seed").seed
}

fn train_seed(cfg: &TrainConfig, model: &Model, records: &[CaptionRecord], examples: &[Example], seed: u64) -> Result<SeedRun, RunError> {
    let mut params = model.init_params(&mut rng_for(seed, Stream::Init));
    let mut shuffle = rng_for(seed, Stream::Shuffle);
    let initial = evaluate(model, &params, records, examples)?;
    let mut order: Vec<usize> = records.iter().enumerate().filter(|(_, r)| r.split == Split::Train).map(|(i, _)| i).collect();
    let mut opt = Optimizer::new(cfg.optimizer, params.len());
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let (loss, grad) = model.loss_grad(&params, &batch)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                let (slot, g) = grad
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                    .map(|(i, g)| (model.param_owner(i), g.abs()))
                    .unwrap_or_default();
                return Err(RunError::NonFinite { seed, epoch, batch: bi, loss, grad: g, slot });
            }
            total += loss * chunk.len() as f64;
            opt.step(&mut params, &grad, cfg.lr);
        }
        let metrics = evaluate(model, &params, records, examples)?;
        logs.push(EpochLog {
            epoch,
            loss: total / order.len().max(1) as f64,
            accuracy: metrics.iter().map(|(k, a)| (*k, a.image)).collect(),
        });
    }
    let final_metrics = evaluate(model, &params, records, examples)?;
    Ok(SeedRun { seed, initial, epochs: logs, final_metrics, params })
}

/// Prepared model and examples, shared by all seeds.
pub struct Setup {
    pub model: Model,
    pub examples: Vec<Example>,
}

pub fn setup(cfg: &TrainConfig, records: &[CaptionRecord]) -> Result<Setup, RunError> {
    let train: Vec<&CaptionRecord> = records.iter().filter(|r| r.split == Split::Train).collect();
    if train.is_empty() {
        return Err(RunError::Config("dataset has no train records".into()));
    }
    let model = Model::build(&cfg.model, &train)?;
    let examples = model.prepare(records)?;
    Ok(Setup { model, examples })
}

pub fn train(cfg: &TrainConfig, records: &[CaptionRecord]) -> Result<(RunReport, Setup), RunError> {
    cfg.validate()?;
    let start = Instant::now();
    let s = setup(cfg, records)?;
    let runs = cfg
        .seeds
        .par_iter()
        .map(|&seed| train_seed(cfg, &s.model, records, &s.examples, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let selected_seed = select_seed(&runs);
    let selected = runs.iter().find(|r| r.seed == selected_seed).expect("selected").final_metrics.clone();
    let params_per_caption = match &s.model {
        Model::Quantum { matcher, .. } => records.first().map(|r| matcher.caption_param_count(&r.caption)).transpose()?,
        Model::Classical(_) => None,
    };
    let report = RunReport {
        label: cfg.label(),
        config: cfg.clone(),
        n_params: s.model.n_params(),
        params_per_caption,
        runs,
        selected_seed,
        selected,
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    Ok((report, s))
}

pub fn checkpoint(report: &RunReport, s: &Setup) -> Checkpoint {
    let run = report.selected_run();
    let echo = serde_json::to_value(&report.config).expect("config serialises");
    s.model.checkpoint(&report.config.model, &run.params, echo)
}

/// Evaluate a checkpoint on the records of one split (all splits if `None`).
pub fn evaluate_checkpoint(ck: &Checkpoint, records: &[CaptionRecord], split: Option<Split>) -> Result<SplitMetrics, RunError> {
    let (model, params) = Model::from_checkpoint(ck)?;
    let chosen: Vec<CaptionRecord> = records.iter().filter(|r| split.is_none_or(|s| r.split == s)).cloned().collect();
    let examples = model.prepare(&chosen)?;
    evaluate(&model, &params, &chosen, &examples)
}

const TABLE_SPLITS: [Split; 4] = [Split::Train, Split::IdVal, Split::OodVal, Split::OodTest];

/// Aligned text table, one row per report, image-counting accuracy in percent.
pub fn report_text(reports: &[RunReport]) -> String {
    let header: Vec<String> =
        std::iter::once("model".to_string()).chain(TABLE_SPLITS.iter().map(|s| s.name().to_string())).chain(["seed".to_string()]).collect();
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let mut row = vec![r.label.clone()];
            row.extend(TABLE_SPLITS.iter().map(|s| r.selected.get(s).map_or("-".to_string(), |a| format!("{:.2}%", 100.0 * a.image))));
            row.push(r.selected_seed.to_string());
            row
        })
        .collect();
    let widths: Vec<usize> =
        (0..header.len()).map(|j| rows.iter().map(|r| r[j].len()).chain([header[j].len()]).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in std::iter::once(&header).chain(&rows) {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(j, c)| if j == 0 { format!("{c:<w$}", w = widths[j]) } else { format!("{c:>w$}", w = widths[j]) })
            .collect();
        writeln!(out, "{}", cells.join("  ").trim_end()).expect("write to string");
    }
    out
}

/// CSV with both conventions per split.
pub fn report_csv(reports: &[RunReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["model".to_string(), "seed".to_string()];
    for s in TABLE_SPLITS {
        header.push(format!("{s}_image"));
        header.push(format!("{s}_pair"));
    }
    w.write_record(&header).expect("in-memory write");
    for r in reports {
        let mut row = vec![r.label.clone(), r.selected_seed.to_string()];
        for s in TABLE_SPLITS {
            let a = r.selected.get(&s).copied().unwrap_or_default();
            row.push(format!("{:.4}", a.image));
            row.push(format!("{:.4}", a.pair));
        }
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}
