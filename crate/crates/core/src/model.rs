//! Caption/image matching models.
//!
//! The quantum matcher compiles captions into circuits and compares their
//! output state with an encoded image state, optionally after a trainable
//! box that squeezes the image register down to one qubit. The classical
//! baseline composes noun vectors and relation matrices with Copy-Subj.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ansatz::{compile, word_circuit, AnsatzError, Axis, Circuit, CompileConfig, ParameterRegistry, ParameterSlot};
use crate::dataset::{enumerate_captions, CaptionRecord, Relation, Shape, Triple};
use crate::diagram::Diagram;
use crate::encoders::{amplitude_encode, angle_encode, pca_fit, AngleScaler, EncodeError, FeatureVector, PcaModel};
use crate::pregroup::{GrammarError, Lexicon};
use crate::simulator::{forward, overlap, overlap_cotangents, run, Forward, ParameterVector, SimError, StateVector};

pub const IMG_BOX: &str = "IMG_BOX";
pub const CLAMP_LO: f64 = 1e-9;
pub const CLAMP_HI: f64 = 1.0 - 1e-9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Ansatz(#[from] AnsatzError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("caption `{0}` is not part of the task")]
    UnknownCaption(String),
    #[error("{0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Mhe,
    Angle,
    Amplitude,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Alignment {
    #[serde(rename = "box", alias = "trainable_box")]
    TrainableBox,
    #[serde(rename = "widen")]
    Widen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantumConfig {
    pub encoder: EncoderKind,
    pub alignment: Alignment,
    /// IQP layers for multi-qubit caption words.
    pub layers: usize,
    pub box_layers: usize,
    pub noun_qubits: usize,
    /// Image register width; `None` picks 3 (mhe), 9 (angle) or 12 (amplitude).
    pub image_qubits: Option<usize>,
}

impl Default for QuantumConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderKind::Mhe,
            alignment: Alignment::TrainableBox,
            layers: 3,
            box_layers: 2,
            noun_qubits: 1,
            image_qubits: None,
        }
    }
}

impl QuantumConfig {
    pub fn image_qubits(&self) -> usize {
        self.image_qubits.unwrap_or(match self.encoder {
            EncoderKind::Mhe => 3,
            EncoderKind::Angle => 9,
            EncoderKind::Amplitude => 12,
        })
    }

    pub fn sentence_qubits(&self) -> usize {
        match self.alignment {
            Alignment::TrainableBox => 1,
            Alignment::Widen => self.image_qubits(),
        }
    }

    pub fn compile_config(&self) -> CompileConfig {
        CompileConfig::new(self.noun_qubits, self.sentence_qubits(), self.layers)
    }
}

/// Image-side preprocessing fitted on the training split.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    pub pca: Option<PcaModel>,
    pub scaler: Option<AngleScaler>,
}

impl Preprocess {
    pub fn fit(config: &QuantumConfig, train: &[&FeatureVector]) -> Result<Self, ModelError> {
        let dim = train.first().map(|f| f.len()).ok_or_else(|| ModelError::Config("no training features".into()))?;
        let q = config.image_qubits();
        let target = match config.encoder {
            EncoderKind::Angle => q,
            EncoderKind::Mhe | EncoderKind::Amplitude => 1usize << q,
        };
        let rows: Vec<Vec<f64>> = train.iter().map(|f| f.values.clone()).collect();
        let pca = if dim > target { Some(pca_fit(&rows, target)?) } else { None };
        let scaler = match config.encoder {
            EncoderKind::Angle => {
                let reduced: Vec<Vec<f64>> = match &pca {
                    Some(p) => rows.iter().map(|r| p.apply(r)).collect(),
                    None => rows,
                };
                if reduced[0].len() != q {
                    return Err(ModelError::Config(format!("angle encoding on {q} qubits needs {q} features, got {}", reduced[0].len())));
                }
                Some(AngleScaler::fit(&reduced))
            }
            _ => None,
        };
        Ok(Self { pca, scaler })
    }

    pub fn reduce(&self, v: &FeatureVector) -> FeatureVector {
        match &self.pca {
            Some(p) => FeatureVector::new(p.apply(&v.values), v.source),
            None => v.clone(),
        }
    }
}

/// Compiled circuits for every task caption plus the optional image box,
/// all drawing slots from one registry.
#[derive(Debug, Clone)]
pub struct QuantumMatcher {
    pub config: QuantumConfig,
    pub lexicon: Lexicon,
    pub registry: ParameterRegistry,
    circuits: BTreeMap<String, Circuit>,
    box_circuit: Option<Circuit>,
}

/// Trainable block over the image register; postselects all but the last
/// qubit so one qubit remains.
pub fn trainable_box(n_image_qubits: usize, layers: usize, registry: &mut ParameterRegistry) -> Result<Circuit, ModelError> {
    if n_image_qubits == 0 {
        return Err(ModelError::Config("trainable box needs at least one qubit".into()));
    }
    let qubits: Vec<usize> = (0..n_image_qubits).collect();
    let gates = word_circuit(IMG_BOX, &qubits, layers, Axis::Z, registry)?;
    Ok(Circuit::new(n_image_qubits, gates).with_postselect((0..n_image_qubits - 1).map(|q| (q, 0))))
}

pub fn caption_circuit(
    lexicon: &Lexicon,
    caption: &str,
    config: &CompileConfig,
    registry: &mut ParameterRegistry,
) -> Result<Circuit, ModelError> {
    let d = lexicon.parse(caption)?;
    Ok(compile(&Diagram::from_derivation(&d), config, registry)?)
}

impl QuantumMatcher {
    pub fn new(config: QuantumConfig) -> Result<Self, ModelError> {
        if config.layers == 0 || config.box_layers == 0 || config.noun_qubits == 0 || config.image_qubits() == 0 {
            return Err(ModelError::Config("layers and qubit counts must be >= 1".into()));
        }
        if config.encoder == EncoderKind::Angle && config.image_qubits() < 2 {
            return Err(EncodeError::AngleQubits.into());
        }
        let lexicon = Lexicon::task_default();
        let cc = config.compile_config();
        let mut registry = ParameterRegistry::new();
        let mut circuits = BTreeMap::new();
        for t in enumerate_captions() {
            let c = t.caption();
            let circ = caption_circuit(&lexicon, &c, &cc, &mut registry)?;
            circuits.insert(c, circ);
        }
        let box_circuit = match config.alignment {
            Alignment::TrainableBox => Some(trainable_box(config.image_qubits(), config.box_layers, &mut registry)?),
            Alignment::Widen => None,
        };
        Ok(Self { config, lexicon, registry, circuits, box_circuit })
    }

    pub fn n_params(&self) -> usize {
        self.registry.len()
    }

    pub fn circuit(&self, caption: &str) -> Result<&Circuit, ModelError> {
        self.circuits.get(caption).ok_or_else(|| ModelError::UnknownCaption(caption.to_string()))
    }

    pub fn box_circuit(&self) -> Option<&Circuit> {
        self.box_circuit.as_ref()
    }

    /// Distinct trainable slots a caption's circuit touches.
    pub fn caption_param_count(&self, caption: &str) -> Result<usize, ModelError> {
        Ok(self.circuit(caption)?.slots().len())
    }

    /// Constant state-preparation circuit for one image.
    pub fn image_prep(&self, features: &FeatureVector, pre: &Preprocess) -> Result<Circuit, ModelError> {
        let v = pre.reduce(features);
        let q = self.config.image_qubits();
        Ok(match self.config.encoder {
            EncoderKind::Mhe | EncoderKind::Amplitude => amplitude_encode(&v, Some(q))?,
            EncoderKind::Angle => {
                let unit = AngleScaler::unit(q);
                angle_encode(&v, q, pre.scaler.as_ref().unwrap_or(&unit))?
            }
        })
    }

    /// Prepared image register before any trainable block.
    pub fn image_state(&self, features: &FeatureVector, pre: &Preprocess) -> Result<Vec<C64>, ModelError> {
        let prep = self.image_prep(features, pre)?;
        Ok(run(&prep, &ParameterVector::default())?.amplitudes)
    }

    fn image_forward(&self, image: &[C64], p: &ParameterVector) -> Result<ImageOut, ModelError> {
        Ok(match &self.box_circuit {
            Some(b) => ImageOut::Boxed(forward(b, p, Some(image))?),
            None => ImageOut::Fixed(StateVector::from_amplitudes(image.to_vec())?),
        })
    }

    pub fn caption_state(&self, caption: &str, p: &ParameterVector) -> Result<StateVector, ModelError> {
        Ok(run(self.circuit(caption)?, p)?)
    }

    /// Image output compared against caption states.
    pub fn image_output(&self, image: &[C64], p: &ParameterVector) -> Result<StateVector, ModelError> {
        Ok(self.image_forward(image, p)?.state().clone())
    }

    pub fn score(&self, caption: &str, image: &[C64], p: &ParameterVector) -> Result<f64, ModelError> {
        Ok(overlap(&self.caption_state(caption, p)?, &self.image_output(image, p)?)?)
    }

    pub fn score_features(&self, caption: &str, features: &FeatureVector, pre: &Preprocess, p: &ParameterVector) -> Result<f64, ModelError> {
        self.score(caption, &self.image_state(features, pre)?, p)
    }

    /// `(p_pos, p_neg)` per example, sharing caption evaluations.
    pub fn scores(&self, examples: &[(Triple, &[C64])], p: &ParameterVector) -> Result<Vec<(f64, f64)>, ModelError> {
        let captions = distinct_captions(examples.iter().map(|e| e.0));
        let states: BTreeMap<String, StateVector> = captions
            .par_iter()
            .map(|c| Ok((c.clone(), self.caption_state(c, p)?)))
            .collect::<Result<_, ModelError>>()?;
        examples
            .par_iter()
            .map(|(t, img)| {
                let out = self.image_output(img, p)?;
                let pos = overlap(&states[&t.caption()], &out)?;
                let neg = overlap(&states[&t.negative().caption()], &out)?;
                Ok((pos, neg))
            })
            .collect()
    }

    /// Mean loss over `examples` and its gradient. Each distinct caption
    /// circuit runs forward and backward once per call.
    pub fn loss_grad(&self, examples: &[(Triple, &[C64])], p: &ParameterVector) -> Result<(f64, Vec<f64>), ModelError> {
        let captions = distinct_captions(examples.iter().map(|e| e.0));
        let index: BTreeMap<&str, usize> = captions.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        let cap_fwd: Vec<Forward> = captions
            .par_iter()
            .map(|c| Ok(forward(self.circuit(c)?, p, None)?))
            .collect::<Result<_, ModelError>>()?;
        let img_fwd: Vec<ImageOut> = examples
            .par_iter()
            .map(|(_, img)| self.image_forward(img, p))
            .collect::<Result<_, _>>()?;

        let scale = 1.0 / examples.len().max(1) as f64;
        let mut cap_cot: Vec<Vec<C64>> = cap_fwd.iter().map(|f| vec![C64::new(0.0, 0.0); f.state.amplitudes.len()]).collect();
        let mut img_cot: Vec<Vec<C64>> = Vec::with_capacity(examples.len());
        let mut total = 0.0;
        for ((t, _), img) in examples.iter().zip(&img_fwd) {
            let out = img.state();
            let ip = index[t.caption().as_str()];
            let ineg = index[t.negative().caption().as_str()];
            let (sp, sn) = (&cap_fwd[ip].state, &cap_fwd[ineg].state);
            let (pp, pn) = (overlap(sp, out)?, overlap(sn, out)?);
            total += quantum_loss(pp, pn);
            let (dp, dn) = quantum_loss_derivs(pp, pn);
            let (ca_p, ci_p) = overlap_cotangents(sp, out);
            let (ca_n, ci_n) = overlap_cotangents(sn, out);
            axpy(&mut cap_cot[ip], dp * scale, &ca_p);
            axpy(&mut cap_cot[ineg], dn * scale, &ca_n);
            let mut gi = vec![C64::new(0.0, 0.0); out.amplitudes.len()];
            axpy(&mut gi, dp * scale, &ci_p);
            axpy(&mut gi, dn * scale, &ci_n);
            img_cot.push(gi);
        }

        let n = p.len();
        let mut parts: Vec<Vec<f64>> = captions
            .par_iter()
            .zip(&cap_fwd)
            .zip(&cap_cot)
            .map(|((c, f), g)| {
                let mut grad = vec![0.0; n];
                f.backward(self.circuit(c)?, p, g, &mut grad)?;
                Ok(grad)
            })
            .collect::<Result<_, ModelError>>()?;
        if let Some(b) = &self.box_circuit {
            let boxed: Vec<Vec<f64>> = img_fwd
                .par_iter()
                .zip(&img_cot)
                .map(|(f, g)| {
                    let mut grad = vec![0.0; n];
                    if let ImageOut::Boxed(f) = f {
                        f.backward(b, p, g, &mut grad)?;
                    }
                    Ok(grad)
                })
                .collect::<Result<_, ModelError>>()?;
            parts.extend(boxed);
        }
        // fixed-order reduction keeps results independent of scheduling
        let mut grad = vec![0.0; n];
        for part in &parts {
            grad.iter_mut().zip(part).for_each(|(a, b)| *a += b);
        }
        Ok((total * scale, grad))
    }

    /// Slots drawn uniformly from `[0, 2pi)`.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParameterVector {
        ParameterVector((0..self.n_params()).map(|_| rng.random_range(0.0..2.0 * PI)).collect())
    }
}

enum ImageOut {
    Boxed(Forward),
    Fixed(StateVector),
}

impl ImageOut {
    fn state(&self) -> &StateVector {
        match self {
            ImageOut::Boxed(f) => &f.state,
            ImageOut::Fixed(s) => s,
        }
    }
}

fn distinct_captions(triples: impl Iterator<Item = Triple>) -> Vec<String> {
    let mut set = std::collections::BTreeSet::new();
    for t in triples {
        set.insert(t.caption());
        set.insert(t.negative().caption());
    }
    set.into_iter().collect()
}

fn axpy(acc: &mut [C64], a: f64, x: &[C64]) {
    acc.iter_mut().zip(x).for_each(|(y, x)| *y += x * a);
}

/// `-ln(clamp p_pos) - ln(clamp(1 - p_neg))`, clamped to `[1e-9, 1 - 1e-9]`.
pub fn quantum_loss(p_pos: f64, p_neg: f64) -> f64 {
    -p_pos.clamp(CLAMP_LO, CLAMP_HI).ln() - (1.0 - p_neg).clamp(CLAMP_LO, CLAMP_HI).ln()
}

/// `(dL/dp_pos, dL/dp_neg)`; zero where the clamp is active.
pub fn quantum_loss_derivs(p_pos: f64, p_neg: f64) -> (f64, f64) {
    let inside = |x: f64| (CLAMP_LO..=CLAMP_HI).contains(&x);
    let dp = if inside(p_pos) { -1.0 / p_pos } else { 0.0 };
    let dn = if inside(1.0 - p_neg) { 1.0 / (1.0 - p_neg) } else { 0.0 };
    (dp, dn)
}

// ---------------------------------------------------------------------------
// Classical Copy-Subj baseline

/// Flat parameter layout: four noun vectors (shape order), then the
/// `isLeftOf` and `isRightOf` matrices row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalModel {
    pub dim: usize,
}

pub const CLASSICAL_INIT_SD: f64 = 0.1;

impl ClassicalModel {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    pub fn n_params(&self) -> usize {
        4 * self.dim + 2 * self.dim * self.dim
    }

    fn noun_offset(&self, s: Shape) -> usize {
        s.index() * self.dim
    }

    fn rel_offset(&self, r: Relation) -> usize {
        4 * self.dim + (r as usize) * self.dim * self.dim
    }

    pub fn noun<'a>(&self, p: &'a [f64], s: Shape) -> &'a [f64] {
        &p[self.noun_offset(s)..self.noun_offset(s) + self.dim]
    }

    pub fn relation<'a>(&self, p: &'a [f64], r: Relation) -> &'a [f64] {
        &p[self.rel_offset(r)..self.rel_offset(r) + self.dim * self.dim]
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let normal = Normal::new(0.0, CLASSICAL_INIT_SD).expect("valid sd");
        (0..self.n_params()).map(|_| normal.sample(rng)).collect()
    }

    /// `subj ⊙ (Rel · obj)`.
    pub fn sentence_vec(&self, p: &[f64], t: &Triple) -> Vec<f64> {
        classical_sentence_vec(self.noun(p, t.subject), self.relation(p, t.relation), self.noun(p, t.object))
    }

    pub fn logits(&self, p: &[f64], m: &[f64], pos: &Triple) -> (f64, f64) {
        (dot(m, &self.sentence_vec(p, pos)), dot(m, &self.sentence_vec(p, &pos.negative())))
    }

    pub fn loss(&self, p: &[f64], m: &[f64], pos: &Triple) -> f64 {
        let (x, y) = self.logits(p, m, pos);
        classical_loss(x, y)
    }

    /// Loss and gradient accumulated into `grad` (scaled by `scale`).
    pub fn loss_grad_into(&self, p: &[f64], m: &[f64], pos: &Triple, scale: f64, grad: &mut [f64]) -> f64 {
        let d = self.dim;
        let (x, y) = self.logits(p, m, pos);
        // dJ/dx = -(1 - sigma(x)), dJ/dy = sigma(y)
        for (t, dj) in [(*pos, -sigmoid(-x)), (pos.negative(), sigmoid(y))] {
            let subj = self.noun(p, t.subject);
            let obj = self.noun(p, t.object);
            let rel = self.relation(p, t.relation);
            let a: Vec<f64> = (0..d).map(|i| dot(&rel[i * d..(i + 1) * d], obj)).collect();
            let ms: Vec<f64> = (0..d).map(|i| m[i] * subj[i]).collect();
            let w = dj * scale;
            let so = self.noun_offset(t.subject);
            for i in 0..d {
                grad[so + i] += w * m[i] * a[i];
            }
            let ro = self.rel_offset(t.relation);
            for i in 0..d {
                for j in 0..d {
                    grad[ro + i * d + j] += w * ms[i] * obj[j];
                }
            }
            let oo = self.noun_offset(t.object);
            for j in 0..d {
                let s: f64 = (0..d).map(|i| rel[i * d + j] * ms[i]).sum();
                grad[oo + j] += w * s;
            }
        }
        classical_loss(x, y)
    }
}

pub fn classical_sentence_vec(subj: &[f64], rel: &[f64], obj: &[f64]) -> Vec<f64> {
    let d = subj.len();
    assert_eq!(rel.len(), d * d, "relation must be d x d");
    (0..d).map(|i| subj[i] * dot(&rel[i * d..(i + 1) * d], obj)).collect()
}

/// `-ln sigma(x) - ln sigma(-y)` for positive logit `x`, negative logit `y`.
pub fn classical_loss(x: f64, y: f64) -> f64 {
    softplus(-x) + softplus(y)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// Unified model used by training and evaluation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelSpec {
    Quantum(QuantumConfig),
    Classical,
}

#[derive(Debug, Clone)]
pub enum Model {
    Quantum { matcher: QuantumMatcher, pre: Preprocess },
    Classical(ClassicalModel),
}

/// One training/evaluation item: the correct caption and the prepared image.
#[derive(Debug, Clone)]
pub struct Example {
    pub pos: Triple,
    pub input: Vec<C64>,
    pub vector: Vec<f64>,
}

impl Model {
    /// Build the model, fitting preprocessing on `train`.
    pub fn build(spec: &ModelSpec, train: &[&CaptionRecord]) -> Result<Self, ModelError> {
        let dim = train.first().map(|r| r.features.len()).ok_or_else(|| ModelError::Config("no training records".into()))?;
        Ok(match spec {
            ModelSpec::Quantum(cfg) => {
                let matcher = QuantumMatcher::new(cfg.clone())?;
                let feats: Vec<&FeatureVector> = train.iter().map(|r| &r.features).collect();
                let pre = Preprocess::fit(cfg, &feats)?;
                Model::Quantum { matcher, pre }
            }
            ModelSpec::Classical => Model::Classical(ClassicalModel::new(dim)),
        })
    }

    pub fn n_params(&self) -> usize {
        match self {
            Model::Quantum { matcher, .. } => matcher.n_params(),
            Model::Classical(c) => c.n_params(),
        }
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Model::Quantum { matcher, .. } => matcher.init_params(rng).0,
            Model::Classical(c) => c.init_params(rng),
        }
    }

    pub fn prepare(&self, records: &[CaptionRecord]) -> Result<Vec<Example>, ModelError> {
        records
            .par_iter()
            .map(|r| {
                let (input, vector) = match self {
                    Model::Quantum { matcher, pre } => (matcher.image_state(&r.features, pre)?, Vec::new()),
                    Model::Classical(c) => {
                        if r.features.len() != c.dim {
                            return Err(ModelError::Config(format!("record `{}` has {} features, model expects {}", r.id, r.features.len(), c.dim)));
                        }
                        (Vec::new(), r.features.values.clone())
                    }
                };
                Ok(Example { pos: r.triple(), input, vector })
            })
            .collect()
    }

    /// Mean loss and gradient over a batch.
    pub fn loss_grad(&self, params: &[f64], batch: &[&Example]) -> Result<(f64, Vec<f64>), ModelError> {
        match self {
            Model::Quantum { matcher, .. } => {
                let ex: Vec<(Triple, &[C64])> = batch.iter().map(|e| (e.pos, e.input.as_slice())).collect();
                matcher.loss_grad(&ex, &ParameterVector(params.to_vec()))
            }
            Model::Classical(c) => {
                let scale = 1.0 / batch.len().max(1) as f64;
                let mut grad = vec![0.0; params.len()];
                let mut total = 0.0;
                for e in batch {
                    total += c.loss_grad_into(params, &e.vector, &e.pos, scale, &mut grad);
                }
                Ok((total * scale, grad))
            }
        }
    }

    /// Match probabilities `(pos, neg)`: overlaps for the quantum model,
    /// logistic of the inner product for the classical one.
    pub fn scores(&self, params: &[f64], examples: &[Example]) -> Result<Vec<(f64, f64)>, ModelError> {
        match self {
            Model::Quantum { matcher, .. } => {
                let ex: Vec<(Triple, &[C64])> = examples.iter().map(|e| (e.pos, e.input.as_slice())).collect();
                matcher.scores(&ex, &ParameterVector(params.to_vec()))
            }
            Model::Classical(c) => Ok(examples
                .iter()
                .map(|e| {
                    let (x, y) = c.logits(params, &e.vector, &e.pos);
                    (sigmoid(x), sigmoid(y))
                })
                .collect()),
        }
    }

    /// Owner of each parameter, for diagnostics.
    pub fn param_owner(&self, i: usize) -> String {
        match self {
            Model::Quantum { matcher, .. } => matcher
                .registry
                .slots()
                .get(i)
                .map(|s| format!("{}[{}]", s.owner, s.position))
                .unwrap_or_else(|| format!("#{i}")),
            Model::Classical(c) => {
                let d = c.dim;
                if i < 4 * d {
                    format!("{}[{}]", Shape::ALL[i / d], i % d)
                } else {
                    let k = i - 4 * d;
                    format!("{}[{},{}]", Relation::ALL[k / (d * d)].word(), (k % (d * d)) / d, k % d)
                }
            }
        }
    }

    pub fn checkpoint(&self, spec: &ModelSpec, params: &[f64], config_echo: serde_json::Value) -> Checkpoint {
        let weights = match self {
            Model::Quantum { matcher, pre } => Weights::Quantum {
                slots: matcher.registry.slots().to_vec(),
                values: params.to_vec(),
                preprocess: pre.clone(),
            },
            Model::Classical(c) => Weights::Classical {
                dim: c.dim,
                nouns: Shape::ALL.iter().map(|&s| (s.name().to_string(), c.noun(params, s).to_vec())).collect(),
                relations: Relation::ALL
                    .iter()
                    .map(|&r| (r.word().to_string(), c.relation(params, r).chunks(c.dim).map(<[f64]>::to_vec).collect()))
                    .collect(),
            },
        };
        Checkpoint { model: spec.clone(), weights, config: config_echo }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, Vec<f64>), ModelError> {
        let bad = |m: &str| ModelError::Checkpoint(m.to_string());
        match (&ck.model, &ck.weights) {
            (ModelSpec::Quantum(cfg), Weights::Quantum { slots, values, preprocess }) => {
                let matcher = QuantumMatcher::new(cfg.clone())?;
                if matcher.registry.slots() != slots.as_slice() || values.len() != slots.len() {
                    return Err(bad("slot layout does not match the configured model"));
                }
                Ok((Model::Quantum { matcher, pre: preprocess.clone() }, values.clone()))
            }
            (ModelSpec::Classical, Weights::Classical { dim, nouns, relations }) => {
                let c = ClassicalModel::new(*dim);
                let mut p = Vec::with_capacity(c.n_params());
                for s in Shape::ALL {
                    let v = nouns.get(s.name()).filter(|v| v.len() == *dim).ok_or_else(|| bad("missing noun vector"))?;
                    p.extend(v);
                }
                for r in Relation::ALL {
                    let m = relations.get(r.word()).filter(|m| m.len() == *dim && m.iter().all(|row| row.len() == *dim));
                    p.extend(m.ok_or_else(|| bad("missing relation matrix"))?.iter().flatten());
                }
                Ok((Model::Classical(c), p))
            }
            _ => Err(bad("model family and weights disagree")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Weights {
    Quantum { slots: Vec<ParameterSlot>, values: Vec<f64>, preprocess: Preprocess },
    Classical { dim: usize, nouns: BTreeMap<String, Vec<f64>>, relations: BTreeMap<String, Vec<Vec<f64>>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: ModelSpec,
    pub weights: Weights,
    /// Echo of the training configuration.
    pub config: serde_json::Value,
}
