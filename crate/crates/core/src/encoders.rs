//! Image-side encodings: multi-hot vectors, Gaussian input noise, PCA,
//! amplitude and angle state preparation, and the feature CSV format.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ansatz::{Angle, Circuit, Gate};
use crate::dataset::{Relation, Shape};

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("subject and object are both `{0}`")]
    SameShape(Shape),
    #[error("cannot encode the zero vector")]
    ZeroVector,
    #[error("expected {expected} features, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("{0} qubits cannot hold {1} amplitudes")]
    TooFewQubits(usize, usize),
    #[error("angle encoding needs at least 2 qubits")]
    AngleQubits,
    #[error("requested {k} components but the data has rank {rank}")]
    RankExceeded { k: usize, rank: usize },
    #[error("power iteration did not converge for component {component} after {iterations} iterations")]
    NoConvergence { component: usize, iterations: usize },
    #[error("feature file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("feature file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSource {
    Mhe,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub source: FeatureSource,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, source: FeatureSource) -> Self {
        debug_assert!(!values.is_empty() && values.iter().all(|v| v.is_finite()));
        Self { values, source }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn one_hot(shape: Shape) -> [f64; 4] {
    let mut v = [0.0; 4];
    v[shape.index()] = 1.0;
    v
}

/// `left`: `[OHE(subject), OHE(object)]`; `right`: `[OHE(object), OHE(subject)]`.
pub fn mhe(subject: Shape, relation: Relation, object: Shape) -> Result<FeatureVector, EncodeError> {
    if subject == object {
        return Err(EncodeError::SameShape(subject));
    }
    let (first, second) = match relation {
        Relation::Left => (subject, object),
        Relation::Right => (object, subject),
    };
    let values = one_hot(first).into_iter().chain(one_hot(second)).collect();
    Ok(FeatureVector::new(values, FeatureSource::Mhe))
}

pub fn add_noise<R: Rng + ?Sized>(v: &FeatureVector, sigma: f64, rng: &mut R) -> FeatureVector {
    assert!(sigma >= 0.0, "noise sigma must be non-negative");
    if sigma == 0.0 {
        return v.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let values = v.values.iter().map(|x| x + normal.sample(rng)).collect();
    FeatureVector::new(values, v.source)
}

// ---------------------------------------------------------------------------
// PCA

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Row `i` is the `i`-th component, unit length.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
}

pub const PCA_TOLERANCE: f64 = 1e-10;
pub const PCA_MAX_ITERATIONS: usize = 10_000;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// First nonzero entry positive.
fn fix_sign(v: &mut [f64]) {
    if let Some(&first) = v.iter().find(|x| x.abs() > 1e-12) {
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Sample covariance (divisor `n - 1`) of row vectors.
pub fn covariance(data: &[Vec<f64>], mean: &[f64]) -> Vec<Vec<f64>> {
    let d = mean.len();
    let mut cov = vec![vec![0.0; d]; d];
    let centered: Vec<Vec<f64>> = data.iter().map(|r| r.iter().zip(mean).map(|(x, m)| x - m).collect()).collect();
    for i in 0..d {
        for j in i..d {
            let s: f64 = centered.iter().map(|r| r[i] * r[j]).sum();
            cov[i][j] = s;
            cov[j][i] = s;
        }
    }
    let denom = (data.len().max(2) - 1) as f64;
    cov.iter_mut().flatten().for_each(|x| *x /= denom);
    cov
}

/// Top-`k` principal components by deflated power iteration.
pub fn pca_fit(data: &[Vec<f64>], k: usize) -> Result<PcaModel, EncodeError> {
    let d = data.first().map_or(0, Vec::len);
    if let Some(r) = data.iter().find(|r| r.len() != d) {
        return Err(EncodeError::LengthMismatch { expected: d, got: r.len() });
    }
    let max_rank = d.min(data.len().saturating_sub(1));
    if k > max_rank {
        return Err(EncodeError::RankExceeded { k, rank: max_rank });
    }
    let n = data.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| data.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let mut cov = covariance(data, &mean);
    let trace: f64 = (0..d).map(|i| cov[i][i]).sum();

    let mut components: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut explained = Vec::with_capacity(k);
    for c in 0..k {
        // deterministic start with weight on every axis
        let mut v: Vec<f64> = (0..d).map(|i| 1.0 + 0.1 * ((i * 7919 + c * 104_729) % 97) as f64 / 97.0).collect();
        normalize(&mut v);
        let mut converged = false;
        let mut w = vec![0.0; d];
        for _ in 0..PCA_MAX_ITERATIONS {
            for (wi, row) in w.iter_mut().zip(&cov) {
                *wi = dot(row, &v);
            }
            // keep the iterate out of the span of found components
            for u in &components {
                let p = dot(&w, u);
                w.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
            }
            if normalize(&mut w) <= 1e-14 * trace.max(1e-300) {
                return Err(EncodeError::RankExceeded { k, rank: c });
            }
            let delta = w.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            std::mem::swap(&mut v, &mut w);
            if delta < PCA_TOLERANCE {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(EncodeError::NoConvergence { component: c, iterations: PCA_MAX_ITERATIONS });
        }
        let lambda: f64 = cov.iter().zip(&v).map(|(row, vi)| dot(row, &v) * vi).sum();
        if lambda <= 1e-12 * trace {
            return Err(EncodeError::RankExceeded { k, rank: c });
        }
        for i in 0..d {
            for j in 0..d {
                cov[i][j] -= lambda * v[i] * v[j];
            }
        }
        fix_sign(&mut v);
        components.push(v);
        explained.push(lambda);
    }
    Ok(PcaModel { mean, components, explained_variance: explained })
}

impl PcaModel {
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = v.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        self.components.iter().map(|c| dot(c, &centered)).collect()
    }

    pub fn reconstruct(&self, proj: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (p, c) in proj.iter().zip(&self.components) {
            out.iter_mut().zip(c).for_each(|(o, x)| *o += p * x);
        }
        out
    }
}

pub fn pca_apply(m: &PcaModel, v: &FeatureVector) -> FeatureVector {
    FeatureVector::new(m.apply(&v.values), v.source)
}

// ---------------------------------------------------------------------------
// Amplitude encoding

/// Qubits needed for `len` amplitudes (at least one).
pub fn qubits_for(len: usize) -> usize {
    len.next_power_of_two().trailing_zeros().max(1) as usize
}

/// Normalised vector padded with zeros to `2^n_qubits`.
pub fn padded_unit(values: &[f64], n_qubits: usize) -> Result<Vec<f64>, EncodeError> {
    let size = 1usize << n_qubits;
    if values.len() > size {
        return Err(EncodeError::TooFewQubits(n_qubits, values.len()));
    }
    let norm = dot(values, values).sqrt();
    if norm == 0.0 {
        return Err(EncodeError::ZeroVector);
    }
    let mut out = vec![0.0; size];
    out.iter_mut().zip(values).for_each(|(o, v)| *o = v / norm);
    Ok(out)
}

/// Uniformly controlled `Ry` on `target` with controls `0..target`:
/// control state `j` (big-endian over the controls) receives `alphas[j]`.
/// Gray-code decomposition into `2^q` rotations and `2^q` CNOTs.
fn multiplexed_ry(target: usize, alphas: &[f64]) -> Vec<Gate> {
    let q = target;
    debug_assert_eq!(alphas.len(), 1 << q);
    if alphas.iter().all(|a| *a == 0.0) {
        return Vec::new();
    }
    if q == 0 {
        return vec![Gate::ry(0, Angle::Const(alphas[0]))];
    }
    let count = 1usize << q;
    let gray = |i: usize| i ^ (i >> 1);
    let scale = 1.0 / count as f64;
    let mut gates = Vec::with_capacity(2 * count);
    for i in 0..count {
        let g = gray(i);
        let theta: f64 = alphas
            .iter()
            .enumerate()
            .map(|(j, a)| if (j & g).count_ones() % 2 == 0 { *a } else { -*a })
            .sum::<f64>()
            * scale;
        gates.push(Gate::ry(target, Angle::Const(theta)));
        let flipped = g ^ gray((i + 1) % count);
        let bitpos = flipped.trailing_zeros() as usize;
        gates.push(Gate::Cnot { control: q - 1 - bitpos, target });
    }
    gates
}

/// State preparation whose output amplitudes equal the normalised, zero
/// padded input. Uses `n_qubits` when given, else the minimum.
pub fn amplitude_encode(v: &FeatureVector, n_qubits: Option<usize>) -> Result<Circuit, EncodeError> {
    let n = n_qubits.unwrap_or_else(|| qubits_for(v.len()));
    let amps = padded_unit(&v.values, n)?;
    let mut gates = Vec::new();
    for q in 0..n {
        let block = 1usize << (n - q);
        let half = block / 2;
        let alphas: Vec<f64> = amps
            .chunks(block)
            .map(|chunk| {
                if q == n - 1 {
                    2.0 * chunk[1].atan2(chunk[0])
                } else {
                    let l = dot(&chunk[..half], &chunk[..half]).sqrt();
                    let r = dot(&chunk[half..], &chunk[half..]).sqrt();
                    2.0 * r.atan2(l)
                }
            })
            .collect();
        gates.extend(multiplexed_ry(q, &alphas));
    }
    Ok(Circuit::new(n, gates))
}

// ---------------------------------------------------------------------------
// Angle encoding

/// Per-feature min-max statistics mapping features onto `[0, pi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl AngleScaler {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for r in rows {
            for j in 0..d {
                min[j] = min[j].min(r[j]);
                max[j] = max[j].max(r[j]);
            }
        }
        Self { min, max }
    }

    /// Identity scaling for features already in `[0, pi]`.
    pub fn unit(d: usize) -> Self {
        Self { min: vec![0.0; d], max: vec![PI; d] }
    }

    pub fn angles(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .enumerate()
            .map(|(j, &x)| {
                let (lo, hi) = (self.min[j], self.max[j]);
                if hi <= lo {
                    PI / 2.0
                } else {
                    ((x - lo) / (hi - lo) * PI).clamp(0.0, PI)
                }
            })
            .collect()
    }
}

/// `H` on every qubit, then `CRz(angle_i)` on ring pairs `(i, i+1 mod n)`.
pub fn angle_encode(v: &FeatureVector, n_qubits: usize, scaler: &AngleScaler) -> Result<Circuit, EncodeError> {
    if n_qubits < 2 {
        return Err(EncodeError::AngleQubits);
    }
    if v.len() != n_qubits || scaler.min.len() != n_qubits {
        return Err(EncodeError::LengthMismatch { expected: n_qubits, got: v.len() });
    }
    let angles = scaler.angles(&v.values);
    let mut gates: Vec<Gate> = (0..n_qubits).map(Gate::H).collect();
    for (i, a) in angles.into_iter().enumerate() {
        gates.push(Gate::crz(i, (i + 1) % n_qubits, Angle::Const(a)));
    }
    Ok(Circuit::new(n_qubits, gates))
}

// ---------------------------------------------------------------------------
// Feature files

/// Rows of a feature file, in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureTable {
    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.ids.iter().position(|x| x == id).map(|i| self.rows[i].as_slice())
    }

    pub fn to_map(&self) -> std::collections::HashMap<String, FeatureVector> {
        self.ids
            .iter()
            .cloned()
            .zip(self.rows.iter().map(|r| FeatureVector::new(r.clone(), FeatureSource::External)))
            .collect()
    }

    pub fn write<W: Write>(&self, out: W) -> Result<(), EncodeError> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| EncodeError::Io(e.to_string());
        let mut header = vec!["id".to_string()];
        header.extend((0..self.dim()).map(|j| format!("f{j}")));
        w.write_record(&header).map_err(io)?;
        for (id, row) in self.ids.iter().zip(&self.rows) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|x| format!("{x:?}")));
            w.write_record(&rec).map_err(io)?;
        }
        w.flush().map_err(|e| EncodeError::Io(e.to_string()))
    }

    pub fn read<R: Read>(input: R) -> Result<Self, EncodeError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(input);
        let mut records = rdr.records();
        let header = match records.next() {
            None => return Err(EncodeError::Parse { line: 1, msg: "empty file".into() }),
            Some(h) => h.map_err(|e| EncodeError::Parse { line: 1, msg: e.to_string() })?,
        };
        if header.get(0) != Some("id") || header.iter().skip(1).enumerate().any(|(j, h)| h != format!("f{j}")) {
            return Err(EncodeError::Parse { line: 1, msg: "header must be `id,f0,f1,...`".into() });
        }
        let dim = header.len() - 1;
        if dim == 0 {
            return Err(EncodeError::Parse { line: 1, msg: "no feature columns".into() });
        }
        let mut table = FeatureTable::default();
        for (i, rec) in records.enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| EncodeError::Parse { line, msg: e.to_string() })?;
            if rec.len() != dim + 1 {
                return Err(EncodeError::Parse { line, msg: format!("ragged row: {} columns, expected {}", rec.len(), dim + 1) });
            }
            let row = rec
                .iter()
                .skip(1)
                .map(|x| x.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| EncodeError::Parse { line, msg: "bad number".into() })?;
            table.ids.push(rec[0].to_string());
            table.rows.push(row);
        }
        if table.rows.is_empty() {
            return Err(EncodeError::Parse { line: 2, msg: "no data rows".into() });
        }
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EncodeError> {
        let f = std::fs::File::create(path.as_ref()).map_err(|e| EncodeError::Io(e.to_string()))?;
        self.write(std::io::BufWriter::new(f))
    }
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureTable, EncodeError> {
    let f = std::fs::File::open(path.as_ref()).map_err(|e| EncodeError::Io(format!("{}: {e}", path.as_ref().display())))?;
    FeatureTable::read(std::io::BufReader::new(f))
}

/// Stand-in for vision-model embeddings: one Gaussian cluster per caption.
/// Centres are standard normal in `dim` dimensions; members add `sigma` noise.
pub fn synthetic_clusters<R: Rng + ?Sized>(
    n_captions: usize,
    per_caption: usize,
    dim: usize,
    sigma: f64,
    rng: &mut R,
) -> FeatureTable {
    let centers: Vec<Vec<f64>> =
        (0..n_captions).map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect()).collect();
    let noise = Normal::new(0.0, sigma).expect("finite sigma");
    let mut table = FeatureTable::default();
    for (c, center) in centers.iter().enumerate() {
        for i in 0..per_caption {
            table.ids.push(format!("{c}_{i}"));
            table.rows.push(center.iter().map(|x| x + noise.sample(rng)).collect());
        }
    }
    table
}
