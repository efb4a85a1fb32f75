//! Dense statevector simulation with postselection, and adjoint-mode
//! gradients through the renormalised output state.
//!
//! Qubit 0 is the most significant bit of an amplitude index. Rotation
//! conventions: `Rz(t) = diag(e^{-it/2}, e^{it/2})`, `Rx(t) = cos(t/2) I -
//! i sin(t/2) X`, `Ry(t) = cos(t/2) I - i sin(t/2) Y`; controlled rotations
//! act on the target when the control is 1.

use std::fmt::Write as _;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ansatz::{Angle, Axis, Circuit, Gate, SlotId};

pub const MAX_QUBITS: usize = 24;
/// Squared surviving norm at or below this counts as a zero-probability outcome.
pub const DEGENERATE_PROB: f64 = 1e-24;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("circuit references slot {0} but the parameter vector has {1} entries")]
    MissingSlot(SlotId, usize),
    #[error("postselection has probability {0:e}")]
    DegeneratePostselection(f64),
    #[error("{0} qubits exceeds the {MAX_QUBITS}-qubit limit")]
    TooManyQubits(usize),
    #[error("state size mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub n_qubits: usize,
    pub amplitudes: Vec<C64>,
    pub success_prob: f64,
}

impl StateVector {
    pub fn zero(n_qubits: usize) -> Self {
        let mut amplitudes = vec![C64::new(0.0, 0.0); 1 << n_qubits];
        amplitudes[0] = C64::new(1.0, 0.0);
        Self { n_qubits, amplitudes, success_prob: 1.0 }
    }

    pub fn from_amplitudes(amplitudes: Vec<C64>) -> Result<Self, SimError> {
        let n = amplitudes.len();
        if !n.is_power_of_two() {
            return Err(SimError::SizeMismatch(n, n.next_power_of_two()));
        }
        Ok(Self { n_qubits: n.trailing_zeros() as usize, amplitudes, success_prob: 1.0 })
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// `index,re,im` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,re,im\n");
        for (i, a) in self.amplitudes.iter().enumerate() {
            writeln!(out, "{i},{:?},{:?}", a.re, a.im).expect("write to string");
        }
        out
    }
}

/// Angle values indexed by slot id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(pub Vec<f64>);

impl ParameterVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn resolve(&self, a: Angle) -> Result<f64, SimError> {
        match a {
            Angle::Const(x) => Ok(x),
            Angle::Slot(s) => self.0.get(s).copied().ok_or(SimError::MissingSlot(s, self.0.len())),
        }
    }
}

fn mat(axis: Axis, theta: f64) -> [[C64; 2]; 2] {
    let (s, c) = (theta / 2.0).sin_cos();
    let z = C64::new(0.0, 0.0);
    match axis {
        Axis::X => [[C64::new(c, 0.0), C64::new(0.0, -s)], [C64::new(0.0, -s), C64::new(c, 0.0)]],
        Axis::Y => [[C64::new(c, 0.0), C64::new(-s, 0.0)], [C64::new(s, 0.0), C64::new(c, 0.0)]],
        Axis::Z => [[C64::new(c, -s), z], [z, C64::new(c, s)]],
    }
}

fn pauli(axis: Axis) -> [[C64; 2]; 2] {
    let (o, l, i) = (C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 1.0));
    match axis {
        Axis::X => [[o, l], [l, o]],
        Axis::Y => [[o, -i], [i, o]],
        Axis::Z => [[l, o], [o, -l]],
    }
}

fn hadamard() -> [[C64; 2]; 2] {
    let h = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    [[h, h], [h, -h]]
}

fn dagger(m: [[C64; 2]; 2]) -> [[C64; 2]; 2] {
    [[m[0][0].conj(), m[1][0].conj()], [m[0][1].conj(), m[1][1].conj()]]
}

fn bit(n: usize, q: usize) -> usize {
    1 << (n - 1 - q)
}

/// Apply a 2x2 matrix to `target`, restricted to indices where all bits of
/// `cmask` are set.
fn apply_1q(state: &mut [C64], n: usize, target: usize, cmask: usize, m: [[C64; 2]; 2]) {
    let stride = bit(n, target);
    let len = state.len();
    let mut base = 0;
    while base < len {
        for i in base..base + stride {
            if i & cmask != cmask {
                continue;
            }
            let (a, b) = (state[i], state[i + stride]);
            state[i] = m[0][0] * a + m[0][1] * b;
            state[i + stride] = m[1][0] * a + m[1][1] * b;
        }
        base += 2 * stride;
    }
}

fn gate_matrix(g: &Gate, p: &ParameterVector) -> Result<(usize, usize, [[C64; 2]; 2]), SimError> {
    Ok(match *g {
        Gate::H(q) => (q, usize::MAX, hadamard()),
        Gate::Rot { axis, qubit, angle } => (qubit, usize::MAX, mat(axis, p.resolve(angle)?)),
        Gate::CRot { axis, control, target, angle } => (target, control, mat(axis, p.resolve(angle)?)),
        Gate::Cnot { control, target } => (target, control, pauli(Axis::X)),
    })
}

fn apply(state: &mut [C64], n: usize, g: &Gate, p: &ParameterVector, adjoint: bool) -> Result<(), SimError> {
    let (target, control, m) = gate_matrix(g, p)?;
    let cmask = if control == usize::MAX { 0 } else { bit(n, control) };
    apply_1q(state, n, target, cmask, if adjoint { dagger(m) } else { m });
    Ok(())
}

/// `<lambda| G |phi>` for the generator `G` of a rotation gate.
fn generator_expectation(lambda: &[C64], phi: &[C64], n: usize, g: &Gate) -> C64 {
    let (axis, target, cmask) = match *g {
        Gate::Rot { axis, qubit, .. } => (axis, qubit, 0),
        Gate::CRot { axis, control, target, .. } => (axis, target, bit(n, control)),
        _ => unreachable!("only rotations carry parameters"),
    };
    let m = pauli(axis);
    let stride = bit(n, target);
    let mut acc = C64::new(0.0, 0.0);
    let mut base = 0;
    while base < phi.len() {
        for i in base..base + stride {
            if i & cmask != cmask {
                continue;
            }
            let (a, b) = (phi[i], phi[i + stride]);
            acc += lambda[i].conj() * (m[0][0] * a + m[0][1] * b);
            acc += lambda[i + stride].conj() * (m[1][0] * a + m[1][1] * b);
        }
        base += 2 * stride;
    }
    acc
}

/// Full-register indices that survive postselection, ordered by the
/// big-endian index over `output_qubits`.
fn survivors(c: &Circuit) -> Vec<usize> {
    let n = c.n_qubits;
    let fixed: usize = c.postselect.iter().filter(|(_, &b)| b == 1).map(|(&q, _)| bit(n, q)).sum();
    let k = c.output_qubits.len();
    (0..1usize << k)
        .map(|out| {
            let mut idx = fixed;
            for (j, &q) in c.output_qubits.iter().enumerate() {
                if out & (1 << (k - 1 - j)) != 0 {
                    idx |= bit(n, q);
                }
            }
            idx
        })
        .collect()
}

/// Result of a forward pass, retaining what the backward pass needs.
#[derive(Debug, Clone)]
pub struct Forward {
    full: Vec<C64>,
    survivors: Vec<usize>,
    norm: f64,
    pub state: StateVector,
}

/// Run `c` from `|0...0>` or from `initial` (a full-register state).
pub fn forward(c: &Circuit, p: &ParameterVector, initial: Option<&[C64]>) -> Result<Forward, SimError> {
    let n = c.n_qubits;
    if n > MAX_QUBITS {
        return Err(SimError::TooManyQubits(n));
    }
    let mut full = match initial {
        Some(init) if init.len() != 1 << n => return Err(SimError::SizeMismatch(init.len(), 1 << n)),
        Some(init) => init.to_vec(),
        None => StateVector::zero(n).amplitudes,
    };
    for g in &c.gates {
        apply(&mut full, n, g, p, false)?;
    }
    let survivors = survivors(c);
    let reduced: Vec<C64> = survivors.iter().map(|&i| full[i]).collect();
    let prob: f64 = reduced.iter().map(|a| a.norm_sqr()).sum();
    if prob <= DEGENERATE_PROB {
        return Err(SimError::DegeneratePostselection(prob));
    }
    let norm = prob.sqrt();
    let amplitudes = reduced.into_iter().map(|a| a / norm).collect();
    let state = StateVector { n_qubits: c.output_qubits.len(), amplitudes, success_prob: prob };
    Ok(Forward { full, survivors, norm, state })
}

pub fn run(c: &Circuit, p: &ParameterVector) -> Result<StateVector, SimError> {
    forward(c, p, None).map(|f| f.state)
}

pub fn run_from(c: &Circuit, p: &ParameterVector, initial: &[C64]) -> Result<StateVector, SimError> {
    forward(c, p, Some(initial)).map(|f| f.state)
}

/// Full-register state after all gates, without postselection or
/// renormalisation.
pub fn evolve(c: &Circuit, p: &ParameterVector, initial: Option<&[C64]>) -> Result<Vec<C64>, SimError> {
    let n = c.n_qubits;
    if n > MAX_QUBITS {
        return Err(SimError::TooManyQubits(n));
    }
    let mut full = initial.map(<[C64]>::to_vec).unwrap_or_else(|| StateVector::zero(n).amplitudes);
    if full.len() != 1 << n {
        return Err(SimError::SizeMismatch(full.len(), 1 << n));
    }
    for g in &c.gates {
        apply(&mut full, n, g, p, false)?;
    }
    Ok(full)
}

impl Forward {
    /// Accumulate `dL/dtheta` into `grad` given `cot = dL/d(conj psi)` for the
    /// normalised output state `psi`.
    pub fn backward(&self, c: &Circuit, p: &ParameterVector, cot: &[C64], grad: &mut [f64]) -> Result<(), SimError> {
        let psi = &self.state.amplitudes;
        if cot.len() != psi.len() {
            return Err(SimError::SizeMismatch(cot.len(), psi.len()));
        }
        // through psi = u / |u|
        let proj: f64 = psi.iter().zip(cot).map(|(a, g)| (a.conj() * g).re).sum();
        let mut lambda = vec![C64::new(0.0, 0.0); self.full.len()];
        for ((&i, g), a) in self.survivors.iter().zip(cot).zip(psi) {
            lambda[i] = (g - a * proj) / self.norm;
        }
        let n = c.n_qubits;
        let mut phi = self.full.clone();
        for g in c.gates.iter().rev() {
            if let Some(Angle::Slot(s)) = g.angle() {
                if s >= grad.len() {
                    return Err(SimError::MissingSlot(s, grad.len()));
                }
                grad[s] += generator_expectation(&lambda, &phi, n, g).im;
            }
            apply(&mut phi, n, g, p, true)?;
            apply(&mut lambda, n, g, p, true)?;
        }
        Ok(())
    }
}

/// `|<a|b>|^2` of the normalised states.
pub fn overlap(a: &StateVector, b: &StateVector) -> Result<f64, SimError> {
    Ok(inner(a, b)?.norm_sqr() / (a.norm_sqr() * b.norm_sqr()))
}

/// `<a|b>`.
pub fn inner(a: &StateVector, b: &StateVector) -> Result<C64, SimError> {
    if a.amplitudes.len() != b.amplitudes.len() {
        return Err(SimError::SizeMismatch(a.amplitudes.len(), b.amplitudes.len()));
    }
    Ok(a.amplitudes.iter().zip(&b.amplitudes).map(|(x, y)| x.conj() * y).sum())
}

/// Cotangents of `p = |<a|b>|^2` for unit vectors: `(dp/d conj a, dp/d conj b)`.
pub fn overlap_cotangents(a: &StateVector, b: &StateVector) -> (Vec<C64>, Vec<C64>) {
    let ab: C64 = a.amplitudes.iter().zip(&b.amplitudes).map(|(x, y)| x.conj() * y).sum();
    let ga = b.amplitudes.iter().map(|y| y * ab.conj()).collect();
    let gb = a.amplitudes.iter().map(|x| x * ab).collect();
    (ga, gb)
}

/// One circuit evaluation in a loss graph.
#[derive(Debug, Clone, Copy)]
pub struct Program<'a> {
    pub circuit: &'a Circuit,
    pub initial: Option<&'a [C64]>,
}

/// Evaluate a scalar loss of several circuit outputs and its gradient with
/// respect to every slot. `loss` receives the normalised outputs and returns
/// the value plus `dL/d(conj psi)` per output.
pub fn value_and_grad<F>(programs: &[Program<'_>], p: &ParameterVector, loss: F) -> Result<(f64, Vec<f64>), SimError>
where
    F: FnOnce(&[StateVector]) -> (f64, Vec<Vec<C64>>),
{
    let fwd = programs
        .iter()
        .map(|pr| forward(pr.circuit, p, pr.initial))
        .collect::<Result<Vec<_>, _>>()?;
    let states: Vec<StateVector> = fwd.iter().map(|f| f.state.clone()).collect();
    let (value, cots) = loss(&states);
    let mut grad = vec![0.0; p.len()];
    for ((f, pr), cot) in fwd.iter().zip(programs).zip(&cots) {
        f.backward(pr.circuit, p, cot, &mut grad)?;
    }
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::{cup_effect, Gate};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    const EPS: f64 = 1e-12;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_state(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
        let v: Vec<C64> = (0..1 << n).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let norm = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        v.into_iter().map(|a| a / norm).collect()
    }

    /// Dense 2^n x 2^n matrix of a gate, built from Kronecker products.
    fn dense(g: &Gate, n: usize, p: &ParameterVector) -> Vec<Vec<C64>> {
        let dim = 1 << n;
        let (t, ctl, m) = gate_matrix(g, p).unwrap();
        let mut out = vec![vec![c(0.0, 0.0); dim]; dim];
        for col in 0..dim {
            let ctl_on = ctl == usize::MAX || col & bit(n, ctl) != 0;
            if !ctl_on {
                out[col][col] = c(1.0, 0.0);
                continue;
            }
            let tb = (col & bit(n, t) != 0) as usize;
            for row_bit in 0..2 {
                let row = (col & !bit(n, t)) | if row_bit == 1 { bit(n, t) } else { 0 };
                out[row][col] += m[row_bit][tb];
            }
        }
        out
    }

    fn matvec(m: &[Vec<C64>], v: &[C64]) -> Vec<C64> {
        m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }

    #[test]
    fn hadamard_and_identity_rotation() {
        let s = run(&Circuit::new(1, vec![Gate::H(0)]), &ParameterVector::default()).unwrap();
        assert!((s.amplitudes[0] - c(FRAC_1_SQRT_2, 0.0)).norm() < EPS);
        assert!((s.amplitudes[1] - c(FRAC_1_SQRT_2, 0.0)).norm() < EPS);
        assert!((s.success_prob - 1.0).abs() < EPS);
        let s = run(&Circuit::new(1, vec![Gate::rz(0, Angle::Const(0.0))]), &ParameterVector::default()).unwrap();
        assert_eq!(s.amplitudes, vec![c(1.0, 0.0), c(0.0, 0.0)]);
    }

    #[test]
    fn gates_match_dense_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 3;
        let p = ParameterVector(vec![0.3, -1.7, 2.9]);
        let gates = [
            Gate::H(1),
            Gate::rx(0, Angle::Slot(0)),
            Gate::ry(2, Angle::Slot(1)),
            Gate::rz(1, Angle::Slot(2)),
            Gate::crz(2, 0, Angle::Const(0.77)),
            Gate::CRot { axis: Axis::X, control: 0, target: 2, angle: Angle::Slot(1) },
            Gate::Cnot { control: 1, target: 2 },
        ];
        for g in gates {
            let init = random_state(&mut rng, n);
            let want = matvec(&dense(&g, n, &p), &init);
            let got = evolve(&Circuit::new(n, vec![g]), &p, Some(&init)).unwrap();
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).norm() < EPS, "{g}");
            }
        }
    }

    fn bell_pair() -> Vec<Gate> {
        vec![Gate::H(0), Gate::Cnot { control: 0, target: 1 }]
    }

    /// Matrix oracle for the Bell effect: row 00 of (H ⊗ I)·CNOT.
    fn bell_effect_row() -> Vec<C64> {
        let p = ParameterVector::default();
        let cnot = dense(&Gate::Cnot { control: 0, target: 1 }, 2, &p);
        let h = dense(&Gate::H(0), 2, &p);
        (0..4).map(|k| (0..4).map(|j| h[0][j] * cnot[j][k]).sum()).collect()
    }

    #[test]
    fn cup_effect_on_bell_pair() {
        // oracle: <effect|bell>
        let row = bell_effect_row();
        let bell = [c(FRAC_1_SQRT_2, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(FRAC_1_SQRT_2, 0.0)];
        let amp: C64 = row.iter().zip(&bell).map(|(a, b)| a * b).sum();
        assert!((amp.norm_sqr() - 1.0).abs() < EPS);

        let (g, ps) = cup_effect(0, 1);
        let mut gates = bell_pair();
        gates.extend(g);
        let circ = Circuit::new(2, gates).with_postselect(ps);
        let s = run(&circ, &ParameterVector::default()).unwrap();
        assert!((s.success_prob - amp.norm_sqr()).abs() < EPS);
        assert_eq!(s.n_qubits, 0);
        assert!((s.amplitudes[0] - c(1.0, 0.0)).norm() < EPS);
    }

    #[test]
    fn cup_effect_on_basis_state() {
        let row = bell_effect_row();
        // |01>: the effect row has no |01> component
        assert!(row[1].norm() < EPS);
        let (g, ps) = cup_effect(0, 1);
        let mut gates = vec![Gate::rx(1, Angle::Const(PI))];
        gates.extend(g);
        let circ = Circuit::new(2, gates).with_postselect(ps);
        assert!(matches!(run(&circ, &ParameterVector::default()), Err(SimError::DegeneratePostselection(_))));
        // |00>: probability |row[0]|^2 = 1/2
        let (g, ps) = cup_effect(0, 1);
        let s = run(&Circuit::new(2, g).with_postselect(ps), &ParameterVector::default()).unwrap();
        assert!((s.success_prob - row[0].norm_sqr()).abs() < EPS);
        assert!((s.success_prob - 0.5).abs() < EPS);
    }

    #[test]
    fn two_cups_multiply() {
        let mut gates = vec![Gate::H(0), Gate::Cnot { control: 0, target: 1 }, Gate::H(2), Gate::Cnot { control: 2, target: 3 }];
        // second pair rotated so its probability is not 1
        gates.push(Gate::ry(3, Angle::Const(1.1)));
        let single = {
            let mut g = vec![Gate::H(0), Gate::Cnot { control: 0, target: 1 }, Gate::ry(1, Angle::Const(1.1))];
            let (e, ps) = cup_effect(0, 1);
            g.extend(e);
            run(&Circuit::new(2, g).with_postselect(ps), &ParameterVector::default()).unwrap().success_prob
        };
        let (e1, p1) = cup_effect(0, 1);
        let (e2, p2) = cup_effect(2, 3);
        gates.extend(e1);
        gates.extend(e2);
        let circ = Circuit::new(4, gates).with_postselect(p1.into_iter().chain(p2));
        let s = run(&circ, &ParameterVector::default()).unwrap();
        assert!((s.success_prob - single).abs() < EPS);
    }

    #[test]
    fn cup_effect_is_scaled_epsilon() {
        // effect row as a 2x2 tensor must be epsilon = identity, times 1/sqrt2
        let row = bell_effect_row();
        for i in 0..2 {
            for j in 0..2 {
                let eps = if i == j { 1.0 } else { 0.0 };
                assert!((row[2 * i + j] - c(eps * FRAC_1_SQRT_2, 0.0)).norm() < EPS);
            }
        }
    }

    #[test]
    fn overlap_examples() {
        let zero = StateVector::zero(1);
        let one = run(&Circuit::new(1, vec![Gate::rx(0, Angle::Const(PI))]), &ParameterVector::default()).unwrap();
        assert!((overlap(&zero, &zero).unwrap() - 1.0).abs() < EPS);
        assert!(overlap(&zero, &one).unwrap() < EPS);
        assert!(matches!(overlap(&zero, &StateVector::zero(2)), Err(SimError::SizeMismatch(2, 4))));

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let a = StateVector::from_amplitudes(random_state(&mut rng, 3)).unwrap();
            let b = StateVector::from_amplitudes(random_state(&mut rng, 3)).unwrap();
            let mut re = 0.0;
            let mut im = 0.0;
            for k in 0..8 {
                let (x, y) = (a.amplitudes[k], b.amplitudes[k]);
                re += x.re * y.re + x.im * y.im;
                im += x.re * y.im - x.im * y.re;
            }
            assert!((overlap(&a, &b).unwrap() - (re * re + im * im)).abs() < EPS);
        }
    }

    #[test]
    fn missing_slot_and_qubit_guard() {
        let circ = Circuit::new(1, vec![Gate::rx(0, Angle::Slot(3))]);
        assert_eq!(run(&circ, &ParameterVector::zeros(2)), Err(SimError::MissingSlot(3, 2)));
        assert_eq!(run(&Circuit::new(25, vec![]), &ParameterVector::default()), Err(SimError::TooManyQubits(25)));
    }

    #[test]
    fn unitarity_and_gate_algebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 4;
        let p = ParameterVector((0..8).map(|_| rng.random_range(0.0..2.0 * PI)).collect());
        let gates: Vec<Gate> = (0..4)
            .flat_map(|q| [Gate::H(q), Gate::rx(q, Angle::Slot(q)), Gate::crz(q, (q + 1) % n, Angle::Slot(q + 4))])
            .collect();
        let out = evolve(&Circuit::new(n, gates), &p, None).unwrap();
        let norm: f64 = out.iter().map(|a| a.norm_sqr()).sum();
        assert!((norm - 1.0).abs() < EPS);

        for _ in 0..10 {
            let init = random_state(&mut rng, 2);
            let (a, b) = (rng.random_range(-PI..PI), rng.random_range(-PI..PI));
            let two = Circuit::new(2, vec![Gate::rz(1, Angle::Const(a)), Gate::rz(1, Angle::Const(b))]);
            let one = Circuit::new(2, vec![Gate::rz(1, Angle::Const(a + b))]);
            let x = evolve(&two, &p, Some(&init)).unwrap();
            let y = evolve(&one, &p, Some(&init)).unwrap();
            assert!(x.iter().zip(&y).all(|(u, v)| (u - v).norm() < EPS));

            // CRz leaves the control-0 subspace alone
            let crz = Circuit::new(2, vec![Gate::crz(0, 1, Angle::Const(a))]);
            let z = evolve(&crz, &p, Some(&init)).unwrap();
            assert_eq!(&z[..2], &init[..2]);
        }
    }

    #[test]
    fn determinism() {
        let p = ParameterVector(vec![0.1, 0.2]);
        let circ = Circuit::new(3, vec![Gate::H(0), Gate::crz(0, 2, Angle::Slot(1)), Gate::rx(1, Angle::Slot(0))]);
        assert_eq!(run(&circ, &p).unwrap(), run(&circ, &p).unwrap());
    }

    #[test]
    fn gradient_of_unused_slot_is_zero() {
        let circ = Circuit::new(1, vec![Gate::rx(0, Angle::Slot(0))]);
        let p = ParameterVector(vec![0.4, 1.0]);
        let (_, g) = value_and_grad(&[Program { circuit: &circ, initial: None }], &p, |s| {
            let a = s[0].amplitudes[0];
            (a.norm_sqr(), vec![vec![a, c(0.0, 0.0)]])
        })
        .unwrap();
        assert_eq!(g[1], 0.0);
    }

    #[test]
    fn rx_gradient_matches_analytic() {
        // loss = |<0|Rx(t)|0>|^2 = cos^2(t/2); d/dt = -sin(t)/2
        let circ = Circuit::new(1, vec![Gate::rx(0, Angle::Slot(0))]);
        for t in [PI / 2.0, 0.3, 2.5] {
            let (v, g) = value_and_grad(&[Program { circuit: &circ, initial: None }], &ParameterVector(vec![t]), |s| {
                let a = s[0].amplitudes[0];
                (a.norm_sqr(), vec![vec![a, c(0.0, 0.0)]])
            })
            .unwrap();
            assert!((v - (t / 2.0).cos().powi(2)).abs() < EPS);
            assert!((g[0] + t.sin() / 2.0).abs() < EPS);
        }
    }

    #[test]
    fn gradient_through_postselection_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let target = StateVector::from_amplitudes(random_state(&mut rng, 1)).unwrap();
        let gates = vec![
            Gate::rx(0, Angle::Slot(0)),
            Gate::rz(0, Angle::Slot(1)),
            Gate::H(1),
            Gate::H(2),
            Gate::crz(1, 2, Angle::Slot(2)),
            Gate::ry(2, Angle::Slot(3)),
            Gate::Cnot { control: 0, target: 1 },
            Gate::H(0),
            Gate::CRot { axis: Axis::X, control: 2, target: 0, angle: Angle::Slot(1) },
        ];
        let circ = Circuit::new(3, gates).with_postselect([(0, 0), (1, 0)]);
        let loss = |p: &ParameterVector| overlap(&run(&circ, p).unwrap(), &target).unwrap();
        for _ in 0..20 {
            let p = ParameterVector((0..4).map(|_| rng.random_range(0.0..2.0 * PI)).collect());
            let (v, g) = value_and_grad(&[Program { circuit: &circ, initial: None }], &p, |s| {
                let (ga, _) = overlap_cotangents(&s[0], &target);
                (overlap(&s[0], &target).unwrap(), vec![ga])
            })
            .unwrap();
            assert!((v - loss(&p)).abs() < EPS);
            let h = 1e-5;
            for k in 0..4 {
                let mut up = p.clone();
                let mut dn = p.clone();
                up.0[k] += h;
                dn.0[k] -= h;
                let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-8, "slot {k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn amplitude_csv_dump() {
        let s = StateVector::zero(1);
        assert_eq!(s.to_csv(), "index,re,im\n0,1.0,0.0\n1,0.0,0.0\n");
    }
}
