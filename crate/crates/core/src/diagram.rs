//! String diagrams built from pregroup derivations, and their dense real
//! tensor semantics. Cups are the inner-product pairing of a self-dual
//! space, so a cup between two wires is a trace over their shared axis.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pregroup::{BasicType, Derivation, PregroupType, SimpleType};

pub type WireId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum DiagramError {
    #[error("no tensor for word `{0}`")]
    MissingTensor(String),
    #[error("no dimension for basic type `{0}`")]
    MissingDim(BasicType),
    #[error("dimension mismatch on wire {wire}: {detail}")]
    DimensionMismatch { wire: WireId, detail: String },
    #[error("invalid diagram: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagramBox {
    pub word: String,
    pub ty: PregroupType,
    pub wires: Vec<WireId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagram {
    pub boxes: Vec<DiagramBox>,
    /// Wire id is the index.
    pub wires: Vec<SimpleType>,
    pub cups: Vec<(WireId, WireId)>,
    pub outputs: Vec<WireId>,
}

impl Diagram {
    /// Boxes in order; one wire per factor; cups given as flat factor
    /// indices. Outputs are the uncovered wires, left to right.
    pub fn new(boxes: Vec<(String, PregroupType)>, cups: Vec<(WireId, WireId)>) -> Result<Self, DiagramError> {
        let mut wires = Vec::new();
        let mut dboxes = Vec::with_capacity(boxes.len());
        for (word, ty) in boxes {
            let ids: Vec<WireId> = (wires.len()..wires.len() + ty.len()).collect();
            wires.extend_from_slice(ty.factors());
            dboxes.push(DiagramBox { word, ty, wires: ids });
        }
        let mut covered = vec![false; wires.len()];
        for &(a, b) in &cups {
            for w in [a, b] {
                if w >= wires.len() {
                    return Err(DiagramError::Invalid(format!("cup references unknown wire {w}")));
                }
                if std::mem::replace(&mut covered[w], true) {
                    return Err(DiagramError::Invalid(format!("wire {w} is in more than one cup")));
                }
            }
            let (ta, tb) = (wires[a], wires[b]);
            if !(ta.contracts_with(tb) || tb.contracts_with(ta)) {
                return Err(DiagramError::Invalid(format!(
                    "cup ({a}, {b}) joins non-adjoint types {ta} and {tb}"
                )));
            }
        }
        let outputs = (0..wires.len()).filter(|&w| !covered[w]).collect();
        Ok(Diagram { boxes: dboxes, wires, cups, outputs })
    }

    pub fn from_derivation(d: &Derivation) -> Self {
        let cups = d.cups.iter().map(|l| (d.flat_index(l.left), d.flat_index(l.right))).collect();
        Diagram::new(d.input.clone(), cups).expect("derivation links are valid cups")
    }

    pub fn output_type(&self) -> PregroupType {
        PregroupType::from_factors(self.outputs.iter().map(|&w| self.wires[w]))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("diagram serializes")
    }
}

/// Dense row-major real tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor data does not match shape");
        Self { shape, data }
    }

    pub fn scalar(x: f64) -> Self {
        Self::new(vec![], vec![x])
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n])
    }

    pub fn identity(d: usize) -> Self {
        let mut t = Self::zeros(vec![d, d]);
        for i in 0..d {
            t.data[i * d + i] = 1.0;
        }
        t
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.shape.len()];
        for k in (0..self.shape.len().saturating_sub(1)).rev() {
            s[k] = s[k + 1] * self.shape[k + 1];
        }
        s
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        let off: usize = idx.iter().zip(self.strides()).map(|(i, s)| i * s).sum();
        self.data[off]
    }

    fn outer(&self, other: &Tensor) -> Tensor {
        let mut shape = self.shape.clone();
        shape.extend_from_slice(&other.shape);
        let mut data = Vec::with_capacity(self.data.len() * other.data.len());
        for &a in &self.data {
            data.extend(other.data.iter().map(|&b| a * b));
        }
        Tensor { shape, data }
    }

    /// Sum over the diagonal of axes `i` and `j`.
    fn trace(&self, i: usize, j: usize) -> Tensor {
        let (i, j) = (i.min(j), i.max(j));
        let d = self.shape[i];
        debug_assert_eq!(d, self.shape[j]);
        let strides = self.strides();
        let shape: Vec<usize> =
            self.shape.iter().enumerate().filter(|&(k, _)| k != i && k != j).map(|(_, &s)| s).collect();
        let kept: Vec<usize> = (0..self.rank()).filter(|&k| k != i && k != j).collect();
        let n: usize = shape.iter().product();
        let mut data = vec![0.0; n];
        let mut idx = vec![0usize; shape.len()];
        for out in data.iter_mut() {
            let base: usize = idx.iter().zip(&kept).map(|(&x, &k)| x * strides[k]).sum();
            *out = (0..d).map(|t| self.data[base + t * (strides[i] + strides[j])]).sum();
            for k in (0..idx.len()).rev() {
                idx[k] += 1;
                if idx[k] < shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Tensor { shape, data }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TensorAssignment {
    pub dims: BTreeMap<BasicType, usize>,
    pub tensors: HashMap<String, Tensor>,
}

impl TensorAssignment {
    pub fn new(dims: impl IntoIterator<Item = (BasicType, usize)>) -> Self {
        Self { dims: dims.into_iter().collect(), tensors: HashMap::new() }
    }

    pub fn with(mut self, word: impl Into<String>, t: Tensor) -> Self {
        self.tensors.insert(word.into(), t);
        self
    }

    pub fn dim(&self, b: BasicType) -> Result<usize, DiagramError> {
        self.dims.get(&b).copied().filter(|&d| d > 0).ok_or(DiagramError::MissingDim(b))
    }
}

/// Contract cups left to right.
pub fn contract(diag: &Diagram, assign: &TensorAssignment) -> Result<Tensor, DiagramError> {
    let order: Vec<usize> = (0..diag.cups.len()).collect();
    contract_in_order(diag, assign, &order)
}

/// Contract with the cups taken in the given order (a permutation of cup
/// indices). The axes of the result follow `diag.outputs`.
pub fn contract_in_order(diag: &Diagram, assign: &TensorAssignment, order: &[usize]) -> Result<Tensor, DiagramError> {
    let mut acc = Tensor::scalar(1.0);
    let mut labels: Vec<WireId> = Vec::new();
    for b in &diag.boxes {
        let t = assign.tensors.get(&b.word).ok_or_else(|| DiagramError::MissingTensor(b.word.clone()))?;
        if t.rank() != b.wires.len() {
            let wire = b.wires.first().copied().unwrap_or(0);
            return Err(DiagramError::DimensionMismatch {
                wire,
                detail: format!("tensor for `{}` has rank {}, type has {} factors", b.word, t.rank(), b.wires.len()),
            });
        }
        for (axis, &w) in b.wires.iter().enumerate() {
            let want = assign.dim(diag.wires[w].base)?;
            if t.shape[axis] != want {
                return Err(DiagramError::DimensionMismatch {
                    wire: w,
                    detail: format!("`{}` axis {axis} has size {}, expected {want}", b.word, t.shape[axis]),
                });
            }
        }
        acc = acc.outer(t);
        labels.extend_from_slice(&b.wires);
    }
    for &c in order {
        let (a, b) = diag.cups[c];
        let ia = labels.iter().position(|&w| w == a).expect("cup wire is open");
        let ib = labels.iter().position(|&w| w == b).expect("cup wire is open");
        acc = acc.trace(ia, ib);
        labels.retain(|&w| w != a && w != b);
    }
    debug_assert_eq!(labels, diag.outputs);
    Ok(acc)
}

/// Build the four yanking diagrams for a wire of dimension `dim` and check
/// each acts as the identity matrix within 1e-12.
pub fn snake_check(dim: usize) -> bool {
    assert!(dim >= 1);
    snake_matrices(dim).iter().all(|m| {
        m.data.iter().enumerate().all(|(k, &x)| {
            let expect = if k / dim == k % dim { 1.0 } else { 0.0 };
            (x - expect).abs() <= 1e-12
        })
    })
}

/// Each snake evaluated column by column: the input wire is fed a basis
/// vector by an `in` box, the cap `eta` is an identity-valued state.
pub fn snake_matrices(dim: usize) -> Vec<Tensor> {
    let a = SimpleType::plain(BasicType::N);
    let (al, ar) = (a.left(), a.right());
    let ty = |f: &[SimpleType]| PregroupType::from_factors(f.iter().copied());
    // (boxes, cups): each list is ordered left to right; `in` marks the input.
    let layouts: [(Vec<(&str, PregroupType)>, (usize, usize)); 4] = [
        // (1 ⊗ ε^l)(η^l ⊗ 1): a a^l | a
        (vec![("eta", ty(&[a, al])), ("in", ty(&[a]))], (1, 2)),
        // (ε^r ⊗ 1)(1 ⊗ η^r): a | a^r a
        (vec![("in", ty(&[a])), ("eta", ty(&[ar, a]))], (0, 1)),
        // (ε^l ⊗ 1)(1 ⊗ η^l): a^l | a a^l
        (vec![("in", ty(&[al])), ("eta", ty(&[a, al]))], (0, 1)),
        // (1 ⊗ ε^r)(η^r ⊗ 1): a^r a | a^r
        (vec![("eta", ty(&[ar, a])), ("in", ty(&[ar]))], (1, 2)),
    ];
    layouts
        .into_iter()
        .map(|(boxes, cup)| {
            let boxes: Vec<_> = boxes.into_iter().map(|(w, t)| (w.to_string(), t)).collect();
            let diag = Diagram::new(boxes, vec![cup]).expect("snake layout is valid");
            let mut m = Tensor::zeros(vec![dim, dim]);
            for j in 0..dim {
                let mut e = Tensor::zeros(vec![dim]);
                e.data[j] = 1.0;
                let assign = TensorAssignment::new([(BasicType::N, dim)])
                    .with("eta", Tensor::identity(dim))
                    .with("in", e);
                let col = contract(&diag, &assign).expect("snake contracts");
                for i in 0..dim {
                    m.data[i * dim + j] = col.data[i];
                }
            }
            m
        })
        .collect()
}
