//! IQP-style compilation of string diagrams into parameterised circuits.
//!
//! Every wire gets a contiguous block of qubits. A word on one qubit is an
//! `Rx Rz Rx` Euler block; a word on `m >= 2` qubits is `layers` rounds of
//! Hadamards followed by a chain of `m - 1` controlled rotations. Cups become
//! Bell effects: `CNOT`, `H` on the control, postselect both qubits on 0.
//! Trainable angles live in a [`ParameterRegistry`] keyed by word, so every
//! circuit that mentions a word shares its slots.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagram::Diagram;
use crate::pregroup::BasicType;

pub type SlotId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum AnsatzError {
    #[error("no qubit count configured for basic type `{0}`")]
    MissingType(BasicType),
    #[error("word `{owner}` already owns {existing} slots, requested {requested}")]
    BlockConflict { owner: String, existing: usize, requested: usize },
    #[error("invalid circuit: {0}")]
    Invalid(String),
    #[error("line {line}: {msg}")]
    Dump { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Angle {
    Const(f64),
    Slot(SlotId),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Gate {
    H(usize),
    Rot { axis: Axis, qubit: usize, angle: Angle },
    /// Rotation on `target` when `control` is 1.
    CRot { axis: Axis, control: usize, target: usize, angle: Angle },
    Cnot { control: usize, target: usize },
}

impl Gate {
    pub fn rx(qubit: usize, angle: Angle) -> Self {
        Gate::Rot { axis: Axis::X, qubit, angle }
    }

    pub fn ry(qubit: usize, angle: Angle) -> Self {
        Gate::Rot { axis: Axis::Y, qubit, angle }
    }

    pub fn rz(qubit: usize, angle: Angle) -> Self {
        Gate::Rot { axis: Axis::Z, qubit, angle }
    }

    pub fn crz(control: usize, target: usize, angle: Angle) -> Self {
        Gate::CRot { axis: Axis::Z, control, target, angle }
    }

    pub fn qubits(&self) -> Vec<usize> {
        match *self {
            Gate::H(q) | Gate::Rot { qubit: q, .. } => vec![q],
            Gate::CRot { control, target, .. } | Gate::Cnot { control, target } => vec![control, target],
        }
    }

    pub fn angle(&self) -> Option<Angle> {
        match *self {
            Gate::Rot { angle, .. } | Gate::CRot { angle, .. } => Some(angle),
            _ => None,
        }
    }

    pub fn slot(&self) -> Option<SlotId> {
        match self.angle() {
            Some(Angle::Slot(s)) => Some(s),
            _ => None,
        }
    }

    /// Same gate with qubits renumbered by `f`.
    pub fn remap(&self, f: impl Fn(usize) -> usize) -> Gate {
        match *self {
            Gate::H(q) => Gate::H(f(q)),
            Gate::Rot { axis, qubit, angle } => Gate::Rot { axis, qubit: f(qubit), angle },
            Gate::CRot { axis, control, target, angle } => {
                Gate::CRot { axis, control: f(control), target: f(target), angle }
            }
            Gate::Cnot { control, target } => Gate::Cnot { control: f(control), target: f(target) },
        }
    }

    fn mnemonic(&self) -> &'static str {
        match self {
            Gate::H(_) => "H",
            Gate::Rot { axis: Axis::X, .. } => "RX",
            Gate::Rot { axis: Axis::Y, .. } => "RY",
            Gate::Rot { axis: Axis::Z, .. } => "RZ",
            Gate::CRot { axis: Axis::X, .. } => "CRX",
            Gate::CRot { axis: Axis::Y, .. } => "CRY",
            Gate::CRot { axis: Axis::Z, .. } => "CRZ",
            Gate::Cnot { .. } => "CNOT",
        }
    }
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let qs: Vec<String> = self.qubits().iter().map(|q| q.to_string()).collect();
        write!(f, "{} {}", self.mnemonic(), qs.join(","))?;
        match self.angle() {
            Some(Angle::Const(a)) => write!(f, " {a:?}"),
            Some(Angle::Slot(s)) => write!(f, " slot:{s}"),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterSlot {
    pub id: SlotId,
    pub owner: String,
    pub position: usize,
}

/// Word-keyed trainable slots. Ids are dense and assigned in creation order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterRegistry {
    slots: Vec<ParameterSlot>,
    blocks: BTreeMap<String, Vec<SlotId>>,
}

impl ParameterRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The slot block owned by `owner`, created on first request.
    pub fn block(&mut self, owner: &str, size: usize) -> Result<Vec<SlotId>, AnsatzError> {
        if let Some(existing) = self.blocks.get(owner) {
            if existing.len() != size {
                return Err(AnsatzError::BlockConflict {
                    owner: owner.to_string(),
                    existing: existing.len(),
                    requested: size,
                });
            }
            return Ok(existing.clone());
        }
        let ids: Vec<SlotId> = (self.slots.len()..self.slots.len() + size).collect();
        for (position, &id) in ids.iter().enumerate() {
            self.slots.push(ParameterSlot { id, owner: owner.to_string(), position });
        }
        self.blocks.insert(owner.to_string(), ids.clone());
        Ok(ids)
    }

    pub fn get(&self, owner: &str) -> Option<&[SlotId]> {
        self.blocks.get(owner).map(Vec::as_slice)
    }

    pub fn slots(&self) -> &[ParameterSlot] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn owners(&self) -> impl Iterator<Item = (&str, &[SlotId])> {
        self.blocks.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

/// Number of trainable slots a word on `m` qubits gets.
pub fn word_slot_count(m: usize, layers: usize) -> usize {
    if m == 1 {
        3
    } else {
        layers * (m - 1)
    }
}

/// Gates for one word acting on `qubits`, with slots drawn from `registry`.
pub fn word_circuit(
    word: &str,
    qubits: &[usize],
    layers: usize,
    entangler: Axis,
    registry: &mut ParameterRegistry,
) -> Result<Vec<Gate>, AnsatzError> {
    let m = qubits.len();
    if m == 0 || layers == 0 {
        return Err(AnsatzError::Invalid(format!("word `{word}` needs >= 1 qubit and >= 1 layer")));
    }
    let slots = registry.block(word, word_slot_count(m, layers))?;
    if m == 1 {
        let q = qubits[0];
        return Ok(vec![
            Gate::rx(q, Angle::Slot(slots[0])),
            Gate::rz(q, Angle::Slot(slots[1])),
            Gate::rx(q, Angle::Slot(slots[2])),
        ]);
    }
    let mut gates = Vec::with_capacity(layers * (2 * m - 1));
    let mut next = slots.iter();
    for _ in 0..layers {
        gates.extend(qubits.iter().map(|&q| Gate::H(q)));
        for pair in qubits.windows(2) {
            let slot = *next.next().expect("slot count matches layer structure");
            gates.push(Gate::CRot { axis: entangler, control: pair[0], target: pair[1], angle: Angle::Slot(slot) });
        }
    }
    Ok(gates)
}

/// Bell effect `<00| (H ⊗ I) CNOT` on `(qa, qb)`: the cup up to a factor 1/√2.
pub fn cup_effect(qa: usize, qb: usize) -> (Vec<Gate>, [(usize, u8); 2]) {
    assert_ne!(qa, qb, "cup needs two distinct qubits");
    (vec![Gate::Cnot { control: qa, target: qb }, Gate::H(qa)], [(qa, 0), (qb, 0)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    pub n_qubits: usize,
    pub gates: Vec<Gate>,
    pub postselect: BTreeMap<usize, u8>,
    pub output_qubits: Vec<usize>,
}

impl Circuit {
    /// Circuit with every qubit an output.
    pub fn new(n_qubits: usize, gates: Vec<Gate>) -> Self {
        Circuit { n_qubits, gates, postselect: BTreeMap::new(), output_qubits: (0..n_qubits).collect() }
    }

    pub fn with_postselect(mut self, postselect: impl IntoIterator<Item = (usize, u8)>) -> Self {
        self.postselect.extend(postselect);
        self.output_qubits = (0..self.n_qubits).filter(|q| !self.postselect.contains_key(q)).collect();
        self
    }

    pub fn validate(&self) -> Result<(), AnsatzError> {
        for g in &self.gates {
            let qs = g.qubits();
            if qs.iter().any(|&q| q >= self.n_qubits) {
                return Err(AnsatzError::Invalid(format!("gate `{g}` out of range for {} qubits", self.n_qubits)));
            }
            if qs.len() == 2 && qs[0] == qs[1] {
                return Err(AnsatzError::Invalid(format!("gate `{g}` has control == target")));
            }
        }
        let mut seen = vec![false; self.n_qubits];
        for &q in self.postselect.keys().chain(&self.output_qubits) {
            if q >= self.n_qubits || std::mem::replace(&mut seen[q], true) {
                return Err(AnsatzError::Invalid(format!("qubit {q} is not uniquely postselected or output")));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(AnsatzError::Invalid("postselect and outputs do not cover all qubits".into()));
        }
        Ok(())
    }

    /// Distinct slots referenced by this circuit, ascending.
    pub fn slots(&self) -> Vec<SlotId> {
        let mut s: Vec<SlotId> = self.gates.iter().filter_map(Gate::slot).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Line-oriented text form:
    /// header `qubits=N postselect=q:b,...`, then one gate per line.
    pub fn dump(&self) -> String {
        let ps: Vec<String> = self.postselect.iter().map(|(q, b)| format!("{q}:{b}")).collect();
        let mut out = format!("qubits={} postselect={}\n", self.n_qubits, ps.join(","));
        for g in &self.gates {
            writeln!(out, "{g}").expect("write to string");
        }
        out
    }

    pub fn parse_dump(text: &str) -> Result<Circuit, AnsatzError> {
        let err = |line: usize, msg: &str| AnsatzError::Dump { line, msg: msg.to_string() };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| err(1, "missing header"))?;
        let mut n_qubits = None;
        let mut postselect = BTreeMap::new();
        for field in header.split_whitespace() {
            match field.split_once('=') {
                Some(("qubits", v)) => n_qubits = Some(v.parse().map_err(|_| err(1, "bad qubit count"))?),
                Some(("postselect", v)) => {
                    for item in v.split(',').filter(|s| !s.is_empty()) {
                        let (q, b) = item.split_once(':').ok_or_else(|| err(1, "bad postselect entry"))?;
                        let q = q.parse().map_err(|_| err(1, "bad postselect qubit"))?;
                        let b = b.parse().map_err(|_| err(1, "bad postselect bit"))?;
                        postselect.insert(q, b);
                    }
                }
                _ => return Err(err(1, "unknown header field")),
            }
        }
        let n_qubits = n_qubits.ok_or_else(|| err(1, "missing qubits="))?;
        let mut gates = Vec::new();
        for (i, line) in lines {
            let lineno = i + 1;
            let mut parts = line.split_whitespace();
            let Some(name) = parts.next() else { continue };
            let qs: Vec<usize> = parts
                .next()
                .ok_or_else(|| err(lineno, "missing qubits"))?
                .split(',')
                .map(|q| q.parse().map_err(|_| err(lineno, "bad qubit")))
                .collect::<Result<_, _>>()?;
            let angle = parts
                .next()
                .map(|a| match a.strip_prefix("slot:") {
                    Some(id) => id.parse().map(Angle::Slot).map_err(|_| err(lineno, "bad slot")),
                    None => a.parse().map(Angle::Const).map_err(|_| err(lineno, "bad angle")),
                })
                .transpose()?;
            let need = |n: usize| if qs.len() == n { Ok(()) } else { Err(err(lineno, "wrong qubit arity")) };
            let angle_or = || angle.ok_or_else(|| err(lineno, "missing angle"));
            let g = match name {
                "H" => {
                    need(1)?;
                    Gate::H(qs[0])
                }
                "CNOT" => {
                    need(2)?;
                    Gate::Cnot { control: qs[0], target: qs[1] }
                }
                "RX" | "RY" | "RZ" => {
                    need(1)?;
                    Gate::Rot { axis: axis_of(&name[1..]), qubit: qs[0], angle: angle_or()? }
                }
                "CRX" | "CRY" | "CRZ" => {
                    need(2)?;
                    Gate::CRot { axis: axis_of(&name[2..]), control: qs[0], target: qs[1], angle: angle_or()? }
                }
                _ => return Err(err(lineno, "unknown gate")),
            };
            gates.push(g);
        }
        let c = Circuit::new(n_qubits, gates).with_postselect(postselect);
        c.validate()?;
        Ok(c)
    }
}

fn axis_of(s: &str) -> Axis {
    match s {
        "X" => Axis::X,
        "Y" => Axis::Y,
        _ => Axis::Z,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompileConfig {
    pub qubits: BTreeMap<BasicType, usize>,
    pub layers: usize,
    pub entangler: Axis,
}

impl CompileConfig {
    pub fn new(noun: usize, sentence: usize, layers: usize) -> Self {
        Self {
            qubits: [(BasicType::N, noun), (BasicType::S, sentence), (BasicType::P, noun)].into(),
            layers,
            entangler: Axis::Z,
        }
    }

    fn qubits_for(&self, b: BasicType) -> Result<usize, AnsatzError> {
        self.qubits.get(&b).copied().filter(|&q| q > 0).ok_or(AnsatzError::MissingType(b))
    }
}

/// Compile a diagram: word blocks first, then one Bell effect per cup qubit
/// pair. Qubits are numbered left to right by wire.
pub fn compile(diag: &Diagram, config: &CompileConfig, registry: &mut ParameterRegistry) -> Result<Circuit, AnsatzError> {
    let mut wire_qubits = Vec::with_capacity(diag.wires.len());
    let mut next = 0usize;
    for w in &diag.wires {
        let k = config.qubits_for(w.base)?;
        wire_qubits.push((next..next + k).collect::<Vec<_>>());
        next += k;
    }
    let mut gates = Vec::new();
    for b in &diag.boxes {
        let qubits: Vec<usize> = b.wires.iter().flat_map(|&w| wire_qubits[w].iter().copied()).collect();
        gates.extend(word_circuit(&b.word, &qubits, config.layers, config.entangler, registry)?);
    }
    let mut postselect = Vec::new();
    for &(a, b) in &diag.cups {
        for (&qa, &qb) in wire_qubits[a].iter().zip(&wire_qubits[b]) {
            let (g, ps) = cup_effect(qa, qb);
            gates.extend(g);
            postselect.extend(ps);
        }
    }
    let c = Circuit::new(next, gates).with_postselect(postselect);
    c.validate()?;
    Ok(c)
}
