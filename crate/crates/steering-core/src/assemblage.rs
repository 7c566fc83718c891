//! Assemblages, behaviors and POVMs for the minimal 2-input/2-output
//! scenarios with a qubit trusted party.
//!
//! Index convention throughout: tuples are ordered (outputs..., inputs...)
//! with party order A, B, C and binary values 0/1, so a tripartite element
//! key reads "a,b|x,y".

use crate::hermitian::{fidelity_subnormalized, HermitianMatrix, MatrixError, C64};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

pub const NS_TOL: f64 = 1e-6;
pub const PSD_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum AssemblageError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("assemblage is not non-signaling (violation {0:.3e})")]
    NotNonsignaling(f64),
    #[error("invalid behavior: {0}")]
    InvalidBehavior(String),
    #[error("invalid POVM: {0}")]
    InvalidPovm(String),
    #[error("scenario mismatch")]
    ScenarioMismatch,
}

/// The paper-minimal scenario: 1 or 2 untrusted binary-input/binary-output
/// parties plus one trusted qubit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub n_untrusted: u8,
    pub inputs_per_party: u8,
    pub outputs_per_party: u8,
    pub trusted_dim: u8,
}

impl Scenario {
    pub fn bipartite() -> Self {
        Self {
            n_untrusted: 1,
            inputs_per_party: 2,
            outputs_per_party: 2,
            trusted_dim: 2,
        }
    }

    pub fn tripartite() -> Self {
        Self {
            n_untrusted: 2,
            inputs_per_party: 2,
            outputs_per_party: 2,
            trusted_dim: 2,
        }
    }

    pub fn check(&self) -> Result<(), AssemblageError> {
        if !(self.n_untrusted == 1 || self.n_untrusted == 2)
            || self.inputs_per_party != 2
            || self.outputs_per_party != 2
            || self.trusted_dim != 2
        {
            return Err(AssemblageError::InvalidScenario(format!("{self:?}")));
        }
        Ok(())
    }

    /// All element keys of the scenario in canonical order.
    pub fn element_keys(&self) -> Vec<ElemKey> {
        let mut keys = Vec::new();
        match self.n_untrusted {
            1 => {
                for a in 0..2 {
                    for x in 0..2 {
                        keys.push(ElemKey::Bi { a, x });
                    }
                }
            }
            2 => {
                for a in 0..2 {
                    for b in 0..2 {
                        for x in 0..2 {
                            for y in 0..2 {
                                keys.push(ElemKey::Tri { a, b, x, y });
                            }
                        }
                    }
                }
            }
            _ => unreachable!(),
        }
        keys
    }

    /// Input tuples, e.g. [(x,)] or [(x, y)] flattened to small vectors.
    pub fn input_tuples(&self) -> Vec<Vec<u8>> {
        match self.n_untrusted {
            1 => (0..2).map(|x| vec![x]).collect(),
            2 => (0..2)
                .flat_map(|x| (0..2).map(move |y| vec![x, y]))
                .collect(),
            _ => unreachable!(),
        }
    }
}

/// Index of one assemblage element, `a|x` or `a,b|x,y`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ElemKey {
    Bi { a: u8, x: u8 },
    Tri { a: u8, b: u8, x: u8, y: u8 },
}

impl ElemKey {
    pub fn inputs(&self) -> Vec<u8> {
        match self {
            ElemKey::Bi { x, .. } => vec![*x],
            ElemKey::Tri { x, y, .. } => vec![*x, *y],
        }
    }

    pub fn outputs(&self) -> Vec<u8> {
        match self {
            ElemKey::Bi { a, .. } => vec![*a],
            ElemKey::Tri { a, b, .. } => vec![*a, *b],
        }
    }

    pub fn parse(s: &str) -> Result<Self, AssemblageError> {
        let bad = || AssemblageError::InvalidShape(format!("bad element key {s:?}"));
        let (outs, ins) = s.split_once('|').ok_or_else(bad)?;
        let parse_list = |part: &str| -> Result<Vec<u8>, AssemblageError> {
            part.split(',')
                .map(|t| match t.trim() {
                    "0" => Ok(0),
                    "1" => Ok(1),
                    _ => Err(bad()),
                })
                .collect()
        };
        let outs = parse_list(outs)?;
        let ins = parse_list(ins)?;
        match (outs.as_slice(), ins.as_slice()) {
            ([a], [x]) => Ok(ElemKey::Bi { a: *a, x: *x }),
            ([a, b], [x, y]) => Ok(ElemKey::Tri {
                a: *a,
                b: *b,
                x: *x,
                y: *y,
            }),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for ElemKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ElemKey::Bi { a, x } => write!(f, "{a}|{x}"),
            ElemKey::Tri { a, b, x, y } => write!(f, "{a},{b}|{x},{y}"),
        }
    }
}

/// An indexed family of sub-normalized positive matrices.
#[derive(Clone, Debug)]
pub struct Assemblage {
    scenario: Scenario,
    elements: BTreeMap<ElemKey, HermitianMatrix>,
}

impl Assemblage {
    /// Builds without enforcing PSD or NS; those are reported by
    /// [`validate`]. Shape and key completeness are enforced.
    pub fn new(
        scenario: Scenario,
        elements: BTreeMap<ElemKey, HermitianMatrix>,
    ) -> Result<Self, AssemblageError> {
        scenario.check()?;
        let expected = scenario.element_keys();
        if elements.len() != expected.len()
            || expected.iter().any(|k| !elements.contains_key(k))
        {
            return Err(AssemblageError::InvalidShape(format!(
                "expected {} elements, got {}",
                expected.len(),
                elements.len()
            )));
        }
        for (k, m) in &elements {
            if m.dim() != scenario.trusted_dim as usize {
                return Err(AssemblageError::InvalidShape(format!(
                    "element {k} has dim {}",
                    m.dim()
                )));
            }
        }
        Ok(Self { scenario, elements })
    }

    pub fn from_fn(
        scenario: Scenario,
        f: impl Fn(&ElemKey) -> HermitianMatrix,
    ) -> Self {
        let elements = scenario
            .element_keys()
            .into_iter()
            .map(|k| {
                let m = f(&k);
                (k, m)
            })
            .collect();
        Self::new(scenario, elements).expect("from_fn produces complete keys")
    }

    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    pub fn element(&self, k: &ElemKey) -> &HermitianMatrix {
        &self.elements[k]
    }

    pub fn elements(&self) -> &BTreeMap<ElemKey, HermitianMatrix> {
        &self.elements
    }

    pub fn max_abs_diff(&self, other: &Assemblage) -> f64 {
        self.elements
            .iter()
            .map(|(k, m)| m.sub(other.element(k)).max_abs())
            .fold(0.0, f64::max)
    }

    /// Convex combination `w*self + (1-w)*other`.
    pub fn mix_with(&self, other: &Assemblage, w: f64) -> Assemblage {
        assert_eq!(self.scenario, other.scenario);
        Assemblage::from_fn(self.scenario, |k| {
            self.element(k).scale(w).add(&other.element(k).scale(1.0 - w))
        })
    }

    /// The fully uninformative assemblage: uniform outputs, maximally mixed
    /// trusted state.
    pub fn white_noise(scenario: Scenario) -> Assemblage {
        let n_out = match scenario.n_untrusted {
            1 => 2.0,
            _ => 4.0,
        };
        Assemblage::from_fn(scenario, |_| {
            HermitianMatrix::identity(2).scale(0.5 / n_out)
        })
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ValidationReport {
    pub psd_ok: bool,
    pub normalized_ok: bool,
    pub ns_ok: bool,
    pub max_violation: f64,
}

impl ValidationReport {
    pub fn all_ok(&self) -> bool {
        self.psd_ok && self.normalized_ok && self.ns_ok
    }
}

/// Checks PSD, normalization and the no-signaling marginal identities.
pub fn validate(asm: &Assemblage) -> ValidationReport {
    validate_with_tol(asm, PSD_TOL, NS_TOL)
}

pub fn validate_with_tol(asm: &Assemblage, psd_tol: f64, ns_tol: f64) -> ValidationReport {
    let mut max_violation: f64 = 0.0;

    let mut psd_ok = true;
    for m in asm.elements().values() {
        let min = m.min_eigenvalue();
        if min < -psd_tol {
            psd_ok = false;
        }
        max_violation = max_violation.max((-min).max(0.0));
    }

    let mut normalized_ok = true;
    for ins in asm.scenario().input_tuples() {
        let total: f64 = asm
            .elements()
            .iter()
            .filter(|(k, _)| k.inputs() == ins)
            .map(|(_, m)| m.trace())
            .sum();
        let dev = (total - 1.0).abs();
        if dev > 1e-6 {
            normalized_ok = false;
        }
        max_violation = max_violation.max(dev);
    }

    let ns_dev = ns_violation(asm);
    max_violation = max_violation.max(ns_dev);
    let ns_ok = ns_dev <= ns_tol;

    ValidationReport {
        psd_ok,
        normalized_ok,
        ns_ok,
        max_violation,
    }
}

/// Largest entrywise deviation across the no-signaling marginal identities.
pub fn ns_violation(asm: &Assemblage) -> f64 {
    let mut dev: f64 = 0.0;
    match asm.scenario().n_untrusted {
        1 => {
            // Sum over a must be input-independent.
            let marg = |x: u8| -> HermitianMatrix {
                (0..2)
                    .map(|a| asm.element(&ElemKey::Bi { a, x }).clone())
                    .reduce(|m, n| m.add(&n))
                    .unwrap()
            };
            dev = dev.max(marg(0).sub(&marg(1)).max_abs());
        }
        2 => {
            // Sum over a independent of x, for each (b, y).
            for b in 0..2 {
                for y in 0..2 {
                    let marg = |x: u8| -> HermitianMatrix {
                        (0..2)
                            .map(|a| asm.element(&ElemKey::Tri { a, b, x, y }).clone())
                            .reduce(|m, n| m.add(&n))
                            .unwrap()
                    };
                    dev = dev.max(marg(0).sub(&marg(1)).max_abs());
                }
            }
            // Sum over b independent of y, for each (a, x).
            for a in 0..2 {
                for x in 0..2 {
                    let marg = |y: u8| -> HermitianMatrix {
                        (0..2)
                            .map(|b| asm.element(&ElemKey::Tri { a, b, x, y }).clone())
                            .reduce(|m, n| m.add(&n))
                            .unwrap()
                    };
                    dev = dev.max(marg(0).sub(&marg(1)).max_abs());
                }
            }
            // Total marginal independent of both inputs.
            let total = |x: u8, y: u8| -> HermitianMatrix {
                let mut acc = HermitianMatrix::zeros(2);
                for a in 0..2 {
                    for b in 0..2 {
                        acc = acc.add(asm.element(&ElemKey::Tri { a, b, x, y }));
                    }
                }
                acc
            };
            let base = total(0, 0);
            for (x, y) in [(0, 1), (1, 0), (1, 1)] {
                dev = dev.max(base.sub(&total(x, y)).max_abs());
            }
        }
        _ => unreachable!(),
    }
    dev
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Party {
    A,
    B,
}

/// Traces out one untrusted party of a tripartite assemblage by summing its
/// output at input 0, asserting the result is input-independent (NS).
pub fn reduce(asm: &Assemblage, traced: Party) -> Result<Assemblage, AssemblageError> {
    if asm.scenario().n_untrusted != 2 {
        return Err(AssemblageError::InvalidShape(
            "reduce requires a tripartite assemblage".into(),
        ));
    }
    let marg = |o: u8, i: u8, fixed_in: u8| -> HermitianMatrix {
        let mut acc = HermitianMatrix::zeros(2);
        for t in 0..2 {
            let k = match traced {
                Party::B => ElemKey::Tri {
                    a: o,
                    b: t,
                    x: i,
                    y: fixed_in,
                },
                Party::A => ElemKey::Tri {
                    a: t,
                    b: o,
                    x: fixed_in,
                    y: i,
                },
            };
            acc = acc.add(asm.element(&k));
        }
        acc
    };
    let mut elements = BTreeMap::new();
    for o in 0..2 {
        for i in 0..2 {
            let m0 = marg(o, i, 0);
            let m1 = marg(o, i, 1);
            let dev = m0.sub(&m1).max_abs();
            if dev > NS_TOL {
                return Err(AssemblageError::NotNonsignaling(dev));
            }
            elements.insert(ElemKey::Bi { a: o, x: i }, m0);
        }
    }
    Assemblage::new(Scenario::bipartite(), elements)
}

/// A measurement with one list of effects per input.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Povm {
    pub effects: Vec<Vec<HermitianMatrix>>,
}

impl Povm {
    pub fn check(&self) -> Result<(), AssemblageError> {
        if self.effects.is_empty() {
            return Err(AssemblageError::InvalidPovm("no inputs".into()));
        }
        for (x, effs) in self.effects.iter().enumerate() {
            if effs.is_empty() {
                return Err(AssemblageError::InvalidPovm(format!("input {x} empty")));
            }
            let dim = effs[0].dim();
            let mut total = HermitianMatrix::zeros(dim);
            for e in effs {
                if !e.is_psd(PSD_TOL) {
                    return Err(AssemblageError::InvalidPovm(format!(
                        "input {x} has a non-PSD effect"
                    )));
                }
                total = total.add(e);
            }
            if total.sub(&HermitianMatrix::identity(dim)).max_abs() > 1e-9 {
                return Err(AssemblageError::InvalidPovm(format!(
                    "input {x} effects do not sum to identity"
                )));
            }
        }
        Ok(())
    }

    /// Two-outcome projective measurement along a unit Bloch direction
    /// `n = (nx, ny, nz)`: effects `(I +- n.sigma)/2` for outcomes 0/1.
    pub fn qubit_bases(directions: &[(f64, f64, f64)]) -> Povm {
        use crate::hermitian::{pauli_i, pauli_x, pauli_y, pauli_z};
        let effects = directions
            .iter()
            .map(|&(nx, ny, nz)| {
                let nvec = pauli_x()
                    .scale(nx)
                    .add(&pauli_y().scale(ny))
                    .add(&pauli_z().scale(nz));
                vec![
                    pauli_i().add(&nvec).scale(0.5),
                    pauli_i().sub(&nvec).scale(0.5),
                ]
            })
            .collect();
        Povm { effects }
    }

    /// The trivial coin-flip measurement {I/2, I/2} for each given input.
    pub fn trivial(inputs: usize) -> Povm {
        use crate::hermitian::pauli_i;
        Povm {
            effects: (0..inputs)
                .map(|_| vec![pauli_i().scale(0.5), pauli_i().scale(0.5)])
                .collect(),
        }
    }
}

/// Computes the assemblage obtained from `state` (untrusted qubits first,
/// trusted qubit last) under local measurements by the untrusted parties:
/// `sigma = Tr_untrusted[(M_a|x (x) M_b|y (x) I) rho]`.
pub fn realize(state: &HermitianMatrix, povms: &[Povm]) -> Result<Assemblage, AssemblageError> {
    let n = povms.len();
    if !(n == 1 || n == 2) {
        return Err(AssemblageError::InvalidShape(format!(
            "expected 1 or 2 POVMs, got {n}"
        )));
    }
    let dim = 1usize << (n + 1);
    if state.dim() != dim {
        return Err(AssemblageError::InvalidShape(format!(
            "state dim {} does not match 2^{}",
            state.dim(),
            n + 1
        )));
    }
    if !state.is_psd(PSD_TOL) {
        return Err(AssemblageError::Matrix(MatrixError::NotPsd(
            state.min_eigenvalue(),
        )));
    }
    if (state.trace() - 1.0).abs() > 1e-6 {
        return Err(AssemblageError::Matrix(MatrixError::NotNormalized(
            state.trace(),
        )));
    }
    for p in povms {
        p.check()?;
        if p.effects.len() != 2 || p.effects.iter().any(|e| e.len() != 2) {
            return Err(AssemblageError::InvalidPovm(
                "realize expects 2-input/2-outcome POVMs".into(),
            ));
        }
        if p.effects[0][0].dim() != 2 {
            return Err(AssemblageError::InvalidPovm(
                "untrusted parties are qubits".into(),
            ));
        }
    }

    let scenario = if n == 1 {
        Scenario::bipartite()
    } else {
        Scenario::tripartite()
    };
    let eye = HermitianMatrix::identity(2);
    let mut elements = BTreeMap::new();
    for key in scenario.element_keys() {
        let meas = match (&key, n) {
            (ElemKey::Bi { a, x }, 1) => povms[0].effects[*x as usize][*a as usize].clone(),
            (ElemKey::Tri { a, b, x, y }, 2) => povms[0].effects[*x as usize][*a as usize]
                .kron(&povms[1].effects[*y as usize][*b as usize]),
            _ => unreachable!(),
        };
        let op = meas.kron(&eye);
        let prod = op.matrix() * state.matrix();
        // Partial trace over the untrusted qubits (all but the last).
        let blocks = dim / 2;
        let mut out = DMatrix::<C64>::zeros(2, 2);
        for k in 0..blocks {
            for i in 0..2 {
                for j in 0..2 {
                    out[(i, j)] += prod[(2 * k + i, 2 * k + j)];
                }
            }
        }
        let adj = out.adjoint();
        let sym = (out + adj).scale(0.5);
        elements.insert(key, HermitianMatrix::new(sym)?);
    }
    Assemblage::new(scenario, elements)
}

/// Mean assemblage fidelity `(1/N_x) * sum_x sum_a sqrt(P1 P2) F(rho1, rho2)`
/// where `N_x` counts input tuples (2 bipartite, 4 tripartite).
pub fn assemblage_fidelity(a1: &Assemblage, a2: &Assemblage) -> Result<f64, AssemblageError> {
    if a1.scenario() != a2.scenario() {
        return Err(AssemblageError::ScenarioMismatch);
    }
    let n_x = a1.scenario().input_tuples().len() as f64;
    let total: f64 = a1
        .elements()
        .iter()
        .map(|(k, m)| fidelity_subnormalized(m, a2.element(k)))
        .sum();
    Ok(total / n_x)
}

/// Index of one behavior entry; the number of parties is the variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BehKey {
    One { a: u8, x: u8 },
    Two { a: u8, b: u8, x: u8, y: u8 },
    Three { a: u8, b: u8, c: u8, x: u8, y: u8, z: u8 },
}

impl fmt::Display for BehKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BehKey::One { a, x } => write!(f, "{a}|{x}"),
            BehKey::Two { a, b, x, y } => write!(f, "{a},{b}|{x},{y}"),
            BehKey::Three { a, b, c, x, y, z } => write!(f, "{a},{b},{c}|{x},{y},{z}"),
        }
    }
}

impl BehKey {
    pub fn parse(s: &str) -> Result<Self, AssemblageError> {
        let bad = || AssemblageError::InvalidBehavior(format!("bad behavior key {s:?}"));
        let (outs, ins) = s.split_once('|').ok_or_else(bad)?;
        let parse_list = |part: &str| -> Result<Vec<u8>, AssemblageError> {
            part.split(',')
                .map(|t| match t.trim() {
                    "0" => Ok(0),
                    "1" => Ok(1),
                    _ => Err(bad()),
                })
                .collect()
        };
        let o = parse_list(outs)?;
        let i = parse_list(ins)?;
        match (o.as_slice(), i.as_slice()) {
            ([a], [x]) => Ok(BehKey::One { a: *a, x: *x }),
            ([a, b], [x, y]) => Ok(BehKey::Two { a: *a, b: *b, x: *x, y: *y }),
            ([a, b, c], [x, y, z]) => Ok(BehKey::Three {
                a: *a,
                b: *b,
                c: *c,
                x: *x,
                y: *y,
                z: *z,
            }),
            _ => Err(bad()),
        }
    }

    fn parties(&self) -> u8 {
        match self {
            BehKey::One { .. } => 1,
            BehKey::Two { .. } => 2,
            BehKey::Three { .. } => 3,
        }
    }
}

/// A conditional probability table over 1 to 3 binary-input/binary-output
/// parties.
#[derive(Clone, Debug)]
pub struct Behavior {
    probs: BTreeMap<BehKey, f64>,
}

impl Behavior {
    pub fn new(probs: BTreeMap<BehKey, f64>) -> Result<Self, AssemblageError> {
        let parties = probs
            .keys()
            .next()
            .ok_or_else(|| AssemblageError::InvalidBehavior("empty".into()))?
            .parties();
        let expected = 4usize.pow(parties as u32);
        if probs.len() != expected || probs.keys().any(|k| k.parties() != parties) {
            return Err(AssemblageError::InvalidBehavior(format!(
                "expected {expected} entries for {parties} parties, got {}",
                probs.len()
            )));
        }
        for (k, p) in &probs {
            if !p.is_finite() || *p < -1e-12 {
                return Err(AssemblageError::InvalidBehavior(format!(
                    "entry {k} = {p}"
                )));
            }
        }
        // Normalization per input tuple.
        let mut by_input: BTreeMap<Vec<u8>, f64> = BTreeMap::new();
        for (k, p) in &probs {
            let ins = match k {
                BehKey::One { x, .. } => vec![*x],
                BehKey::Two { x, y, .. } => vec![*x, *y],
                BehKey::Three { x, y, z, .. } => vec![*x, *y, *z],
            };
            *by_input.entry(ins).or_insert(0.0) += p;
        }
        for (ins, total) in by_input {
            if (total - 1.0).abs() > 1e-9 {
                return Err(AssemblageError::InvalidBehavior(format!(
                    "inputs {ins:?} sum to {total}"
                )));
            }
        }
        Ok(Self { probs })
    }

    pub fn parties(&self) -> u8 {
        self.probs.keys().next().unwrap().parties()
    }

    pub fn get(&self, k: &BehKey) -> f64 {
        self.probs[k]
    }

    pub fn probabilities(&self) -> &BTreeMap<BehKey, f64> {
        &self.probs
    }
}

/// The behavior obtained when the trusted party measures `charlie`:
/// `P(outputs, c | inputs, z) = Tr[M_c|z sigma_outputs|inputs]`.
pub fn behavior_from_assemblage(
    asm: &Assemblage,
    charlie: &Povm,
) -> Result<Behavior, AssemblageError> {
    charlie.check()?;
    if charlie.effects.len() != 2 || charlie.effects.iter().any(|e| e.len() != 2) {
        return Err(AssemblageError::InvalidPovm(
            "behavior construction expects a 2-input/2-outcome trusted POVM".into(),
        ));
    }
    let mut probs = BTreeMap::new();
    for (k, sigma) in asm.elements() {
        for z in 0..2u8 {
            for c in 0..2u8 {
                let p = charlie.effects[z as usize][c as usize].inner(sigma);
                let key = match k {
                    ElemKey::Bi { a, x } => BehKey::Two {
                        a: *a,
                        b: c,
                        x: *x,
                        y: z,
                    },
                    ElemKey::Tri { a, b, x, y } => BehKey::Three {
                        a: *a,
                        b: *b,
                        c,
                        x: *x,
                        y: *y,
                        z,
                    },
                };
                probs.insert(key, p.max(0.0));
            }
        }
    }
    Behavior::new(probs)
}

// ---- JSON ----

#[derive(Serialize, Deserialize)]
struct AssemblageJson {
    scenario: Scenario,
    elements: BTreeMap<String, HermitianMatrix>,
}

impl Serialize for Assemblage {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let json = AssemblageJson {
            scenario: self.scenario,
            elements: self
                .elements
                .iter()
                .map(|(k, m)| (k.to_string(), m.clone()))
                .collect(),
        };
        json.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Assemblage {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error as _;
        let json = AssemblageJson::deserialize(deserializer)?;
        let mut elements = BTreeMap::new();
        for (k, m) in json.elements {
            elements.insert(ElemKey::parse(&k).map_err(D::Error::custom)?, m);
        }
        Assemblage::new(json.scenario, elements).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermitian::{pauli_i, pauli_x, pauli_z};

    fn product_bipartite() -> Assemblage {
        // P(a|x) = 1/2, fixed conditional state.
        let rho = pauli_i().add(&pauli_z().scale(0.3)).scale(0.5);
        Assemblage::from_fn(Scenario::bipartite(), |_| rho.scale(0.5))
    }

    #[test]
    fn validate_product() {
        let asm = product_bipartite();
        let rep = validate(&asm);
        assert!(rep.all_ok());
        assert!(rep.max_violation < 1e-12);
    }

    #[test]
    fn validate_catches_normalization() {
        let asm = product_bipartite();
        let mut elems = asm.elements().clone();
        let k = ElemKey::Bi { a: 0, x: 0 };
        elems.insert(k, elems[&k].scale(1.1));
        let bad = Assemblage::new(Scenario::bipartite(), elems).unwrap();
        let rep = validate(&bad);
        assert!(!rep.normalized_ok);
        assert!(!rep.ns_ok);
    }

    #[test]
    fn realize_product_state() {
        // rho_A (x) rho_C with a projective Alice measurement gives
        // sigma_a|x = P(a|x) rho_C.
        let rho_a = pauli_i().add(&pauli_x().scale(0.4)).scale(0.5);
        let rho_c = pauli_i().add(&pauli_z().scale(0.7)).scale(0.5);
        let state = rho_a.kron(&rho_c);
        let povm = Povm::qubit_bases(&[(0.0, 0.0, 1.0), (1.0, 0.0, 0.0)]);
        let asm = realize(&state, &[povm.clone()]).unwrap();
        assert!(validate(&asm).all_ok());
        for a in 0..2 {
            for x in 0..2 {
                let p = povm.effects[x as usize][a as usize].inner(&rho_a);
                let expect = rho_c.scale(p);
                let got = asm.element(&ElemKey::Bi { a, x });
                assert!(got.sub(&expect).max_abs() < 1e-12);
            }
        }
    }

    #[test]
    fn realize_always_validates() {
        // Random-ish states through a deterministic generator.
        let mut seed = 1u64;
        let mut next = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for _ in 0..20 {
            let raw = DMatrix::from_fn(8, 8, |_, _| C64::new(next(), next()));
            let psd = &raw * raw.adjoint();
            let tr = psd.trace().re;
            let state = HermitianMatrix::new(psd.scale(1.0 / tr)).unwrap();
            let mk_dir = |nx: f64, nz: f64| {
                let n = (nx * nx + nz * nz).sqrt();
                (nx / n, 0.0, nz / n)
            };
            let povm_a = Povm::qubit_bases(&[mk_dir(next(), next()), mk_dir(next(), next())]);
            let povm_b = Povm::qubit_bases(&[mk_dir(next(), next()), mk_dir(next(), next())]);
            let asm = realize(&state, &[povm_a, povm_b]).unwrap();
            let rep = validate(&asm);
            assert!(rep.all_ok(), "violation {}", rep.max_violation);
        }
    }

    #[test]
    fn reduce_requires_tripartite_and_traces() {
        let bip = product_bipartite();
        assert!(reduce(&bip, Party::B).is_err());

        // Product tripartite: P(a|x) P(b|y) rho.
        let rho = pauli_i().scale(0.5);
        let pa = [[0.3, 0.7], [0.6, 0.4]];
        let pb = [[0.5, 0.5], [0.2, 0.8]];
        let asm = Assemblage::from_fn(Scenario::tripartite(), |k| {
            if let ElemKey::Tri { a, b, x, y } = k {
                rho.scale(pa[*x as usize][*a as usize] * pb[*y as usize][*b as usize])
            } else {
                unreachable!()
            }
        });
        let red = reduce(&asm, Party::B).unwrap();
        for a in 0..2 {
            for x in 0..2 {
                let expect = rho.scale(pa[x as usize][a as usize]);
                assert!(red.element(&ElemKey::Bi { a, x }).sub(&expect).max_abs() < 1e-12);
            }
        }
        let red_a = reduce(&asm, Party::A).unwrap();
        for b in 0..2 {
            for y in 0..2 {
                let expect = rho.scale(pb[y as usize][b as usize]);
                assert!(red_a.element(&ElemKey::Bi { a: b, x: y }).sub(&expect).max_abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reduce_commutes_with_mixture() {
        let rho1 = pauli_i().add(&pauli_z().scale(0.5)).scale(0.5);
        let rho2 = pauli_i().add(&pauli_x().scale(0.5)).scale(0.5);
        let asm1 = Assemblage::from_fn(Scenario::tripartite(), |_| rho1.scale(0.25));
        let asm2 = Assemblage::from_fn(Scenario::tripartite(), |_| rho2.scale(0.25));
        let mixed = asm1.mix_with(&asm2, 0.3);
        let lhs = reduce(&mixed, Party::B).unwrap();
        let rhs = reduce(&asm1, Party::B)
            .unwrap()
            .mix_with(&reduce(&asm2, Party::B).unwrap(), 0.3);
        assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn fidelity_props() {
        let asm = product_bipartite();
        assert!((assemblage_fidelity(&asm, &asm).unwrap() - 1.0).abs() < 1e-9);

        // Identical probabilities, orthogonal conditional states.
        let up = Assemblage::from_fn(Scenario::bipartite(), |_| {
            pauli_i().add(&pauli_z()).scale(0.25)
        });
        let down = Assemblage::from_fn(Scenario::bipartite(), |_| {
            pauli_i().sub(&pauli_z()).scale(0.25)
        });
        assert!(assemblage_fidelity(&up, &down).unwrap().abs() < 1e-9);

        let f12 = assemblage_fidelity(&asm, &up).unwrap();
        let f21 = assemblage_fidelity(&up, &asm).unwrap();
        assert!((f12 - f21).abs() < 1e-9);
    }

    #[test]
    fn behavior_from_trivial_charlie() {
        let asm = product_bipartite();
        let beh = behavior_from_assemblage(&asm, &Povm::trivial(2)).unwrap();
        for (k, p) in beh.probabilities() {
            if let BehKey::Two { a, x, .. } = k {
                let marginal = asm.element(&ElemKey::Bi { a: *a, x: *x }).trace();
                assert!((p - 0.5 * marginal).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn assemblage_json_round_trip() {
        let asm = product_bipartite();
        let s = serde_json::to_string(&asm).unwrap();
        let back: Assemblage = serde_json::from_str(&s).unwrap();
        assert!(asm.max_abs_diff(&back) < 1e-15);
        assert!(s.contains("\"0|0\""));
    }

    #[test]
    fn elem_key_parse() {
        assert_eq!(ElemKey::parse("1|0").unwrap(), ElemKey::Bi { a: 1, x: 0 });
        assert_eq!(
            ElemKey::parse("0,1|1,0").unwrap(),
            ElemKey::Tri { a: 0, b: 1, x: 1, y: 0 }
        );
        assert!(ElemKey::parse("2|0").is_err());
        assert!(ElemKey::parse("0,1|1").is_err());
    }
}
