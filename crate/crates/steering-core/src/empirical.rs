//! Statistical pipeline for finite-count data: Poisson Monte-Carlo
//! resampling of count tables, frequency-to-assemblage conversion by
//! least-squares linear inversion, projection onto the no-signaling set,
//! and histogram summaries of derived statistics.

use crate::assemblage::{
    behavior_from_assemblage, Assemblage, AssemblageError, ElemKey, Scenario,
};
use crate::exposure::{charlie_chsh_povm, chsh_value, wire, Wiring};
use crate::hermitian::{
    pauli_i, pauli_x, pauli_y, pauli_z, psd_clip, HermitianMatrix, PauliVector,
};
use crate::presets::{eq56_witness, ns_lhs_witness};
use crate::steering::{robustness, witness_evaluate, NoiseModel, SteeringError};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmpiricalError {
    /// The counts do not determine every assemblage element (missing
    /// entries, empty settings, or projectors spanning less than the full
    /// Hermitian space).
    #[error("counts do not determine the assemblage")]
    Underdetermined,
    #[error("invalid projector set: {0}")]
    InvalidProjectors(String),
    #[error("invalid count table: {0}")]
    InvalidCounts(String),
    #[error("statistic is not applicable to this scenario: {0}")]
    ScenarioMismatch(String),
    #[error("no-signaling projection did not converge")]
    ProjectionFailed,
    #[error(transparent)]
    Assemblage(#[from] AssemblageError),
    #[error(transparent)]
    Steering(#[from] SteeringError),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

// ---- Deterministic RNG and Poisson sampling ----
//
// The generator and the Poisson algorithm are pinned so that a given seed
// produces bit-identical tables on every platform: splitmix64 for the
// uniform stream and for deriving per-sample seeds, sequential-search
// inversion for lambda < 30, and the PTRS transformed-rejection method
// above.

/// splitmix64: a small, fast, well-mixed 64-bit generator. Used both as the
/// uniform source and as the seed-splitting function for parallel samples.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

fn ln_factorial(k: u64) -> f64 {
    if k < 2 {
        return 0.0;
    }
    if k < 256 {
        let mut s = 0.0;
        for i in 2..=k {
            s += (i as f64).ln();
        }
        return s;
    }
    // Stirling series; relative error far below 1e-12 for k >= 256.
    let kf = k as f64;
    (kf + 0.5) * kf.ln() - kf + 0.5 * (2.0 * std::f64::consts::PI).ln() + 1.0 / (12.0 * kf)
        - 1.0 / (360.0 * kf * kf * kf)
}

/// Draws Poisson(lambda). Inversion by sequential search below lambda = 30,
/// PTRS transformed rejection (Hoermann) above.
pub fn poisson(lambda: f64, rng: &mut SplitMix64) -> u64 {
    if !(lambda > 0.0) {
        return 0;
    }
    if lambda < 30.0 {
        let mut k: u64 = 0;
        let mut p = (-lambda).exp();
        let mut s = p;
        let u = rng.next_f64();
        while u > s {
            k += 1;
            p *= lambda / k as f64;
            s += p;
            if k > 10_000 {
                break;
            }
        }
        return k;
    }
    let loglam = lambda.ln();
    let b = 0.931 + 2.53 * lambda.sqrt();
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let v_r = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.next_f64() - 0.5;
        let v = rng.next_f64();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= v_r {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        if v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln()
            <= -lambda + k * loglam - ln_factorial(k as u64)
        {
            return k as u64;
        }
    }
}

// ---- Count tables ----

/// Raw tomography data: per assemblage element, one count per projector of
/// a fixed tomographically complete set on the trusted qubit. Expected
/// tables built from an assemblage carry fractional Poisson means;
/// resampled tables carry integers.
#[derive(Clone, Debug)]
pub struct CountTable {
    scenario: Scenario,
    projectors: Vec<HermitianMatrix>,
    counts: BTreeMap<(ElemKey, usize), f64>,
}

/// The standard qubit tomography set: eigenprojectors of Z, X and Y
/// (six rank-1 effects, summing to 3 I).
pub fn tomography_projectors() -> Vec<HermitianMatrix> {
    let half = |p: &HermitianMatrix, s: f64| pauli_i().add(&p.scale(s)).scale(0.5);
    vec![
        half(&pauli_z(), 1.0),
        half(&pauli_z(), -1.0),
        half(&pauli_x(), 1.0),
        half(&pauli_x(), -1.0),
        half(&pauli_y(), 1.0),
        half(&pauli_y(), -1.0),
    ]
}

impl CountTable {
    pub fn new(
        scenario: Scenario,
        projectors: Vec<HermitianMatrix>,
        counts: BTreeMap<(ElemKey, usize), f64>,
    ) -> Result<Self, EmpiricalError> {
        scenario.check().map_err(EmpiricalError::Assemblage)?;
        for p in &projectors {
            if p.dim() != 2 {
                return Err(EmpiricalError::InvalidProjectors("effect is not 2x2".into()));
            }
            if !p.is_psd(1e-9) {
                return Err(EmpiricalError::InvalidProjectors("effect is not PSD".into()));
            }
        }
        let keys = scenario.element_keys();
        for ((k, j), c) in &counts {
            if !keys.contains(k) {
                return Err(EmpiricalError::InvalidCounts(format!(
                    "element {k} is not in the scenario"
                )));
            }
            if *j >= projectors.len() {
                return Err(EmpiricalError::InvalidCounts(format!(
                    "projector index {j} out of range"
                )));
            }
            if !c.is_finite() || *c < 0.0 {
                return Err(EmpiricalError::InvalidCounts(format!(
                    "count for {k}/proj_{j} is {c}"
                )));
            }
        }
        Ok(Self {
            scenario,
            projectors,
            counts,
        })
    }

    /// Noiseless expected counts `scale * Tr(Pi_j sigma_e)` for every
    /// element and projector; these are the Poisson means of an ideal run.
    pub fn expected(
        asm: &Assemblage,
        projectors: Vec<HermitianMatrix>,
        scale: f64,
    ) -> Result<Self, EmpiricalError> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(EmpiricalError::InvalidCounts(format!("scale {scale}")));
        }
        let mut counts = BTreeMap::new();
        for (k, sigma) in asm.elements() {
            for (j, p) in projectors.iter().enumerate() {
                counts.insert((*k, j), (scale * p.inner(sigma)).max(0.0));
            }
        }
        Self::new(asm.scenario(), projectors, counts)
    }

    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    pub fn projectors(&self) -> &[HermitianMatrix] {
        &self.projectors
    }

    pub fn counts(&self) -> &BTreeMap<(ElemKey, usize), f64> {
        &self.counts
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("count table serializes")
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self, EmpiricalError> {
        Ok(serde_json::from_value(v.clone())?)
    }
}

#[derive(Serialize, Deserialize)]
struct CountTableJson {
    settings: BTreeMap<String, HermitianMatrix>,
    counts: BTreeMap<String, f64>,
}

impl Serialize for CountTable {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let json = CountTableJson {
            settings: self
                .projectors
                .iter()
                .enumerate()
                .map(|(j, p)| (format!("proj_{j}"), p.clone()))
                .collect(),
            counts: self
                .counts
                .iter()
                .map(|((k, j), c)| (format!("{k}/proj_{j}"), *c))
                .collect(),
        };
        json.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CountTable {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let json = CountTableJson::deserialize(deserializer)?;
        let mut projectors = vec![None; json.settings.len()];
        for (name, m) in json.settings {
            let j: usize = name
                .strip_prefix("proj_")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| D::Error::custom(format!("bad projector name {name}")))?;
            if j >= projectors.len() {
                return Err(D::Error::custom(format!("projector index {j} out of range")));
            }
            projectors[j] = Some(m);
        }
        let projectors: Vec<_> = projectors
            .into_iter()
            .map(|p| p.ok_or_else(|| D::Error::custom("missing projector index")))
            .collect::<Result<_, _>>()?;
        let mut counts = BTreeMap::new();
        let mut scenario = None;
        for (key, c) in json.counts {
            let (elem, proj) = key
                .split_once('/')
                .ok_or_else(|| D::Error::custom(format!("bad count key {key}")))?;
            let k = ElemKey::parse(elem).map_err(D::Error::custom)?;
            let j: usize = proj
                .strip_prefix("proj_")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| D::Error::custom(format!("bad projector ref {proj}")))?;
            scenario = Some(match k {
                ElemKey::Bi { .. } => Scenario::bipartite(),
                ElemKey::Tri { .. } => Scenario::tripartite(),
            });
            counts.insert((k, j), c);
        }
        let scenario = scenario.ok_or_else(|| D::Error::custom("empty count table"))?;
        CountTable::new(scenario, projectors, counts).map_err(D::Error::custom)
    }
}

// ---- Resampling ----

/// Derives the deterministic per-sample seed for sample `i` of run `seed`.
fn sample_seed(seed: u64, i: u64) -> u64 {
    let mut splitter = SplitMix64::new(seed);
    let mut s = 0;
    for _ in 0..=i {
        s = splitter.next_u64();
    }
    s
}

fn resample_one(ct: &CountTable, seed: u64) -> CountTable {
    let mut rng = SplitMix64::new(seed);
    let counts = ct
        .counts
        .iter()
        .map(|(k, lambda)| (*k, poisson(*lambda, &mut rng) as f64))
        .collect();
    CountTable {
        scenario: ct.scenario,
        projectors: ct.projectors.clone(),
        counts,
    }
}

/// Draws `n` Poisson resamples of the table, each count with mean equal to
/// the observed count. Deterministic: the same seed yields bit-identical
/// output, independent of threading (per-sample seeds come from a splitmix
/// stream, counts are drawn in key order).
pub fn resample(ct: &CountTable, n: usize, seed: u64) -> Vec<CountTable> {
    let mut splitter = SplitMix64::new(seed);
    (0..n)
        .map(|_| resample_one(ct, splitter.next_u64()))
        .collect()
}

// ---- Tomography by linear inversion ----

/// Reconstructs the assemblage from counts by per-element least-squares
/// linear inversion. The per-setting flux is estimated from the total
/// counts of the setting (the projector set must sum to a multiple of the
/// identity, so the expected total is flux times that multiple). The result
/// may violate PSD or no-signaling; `assemblage::validate` flags that, the
/// reconstruction does not reject it.
pub fn assemblage_from_counts(ct: &CountTable) -> Result<Assemblage, EmpiricalError> {
    let projs = &ct.projectors;
    let basis = [pauli_i(), pauli_z(), pauli_x(), pauli_y()];
    // The flux estimate requires sum_j Pi_j = c I.
    let mut total = HermitianMatrix::zeros(2);
    for p in projs {
        total = total.add(p);
    }
    let c = total.trace() / 2.0;
    if c <= 0.0 || total.sub(&pauli_i().scale(c)).max_abs() > 1e-9 {
        return Err(EmpiricalError::InvalidProjectors(
            "projectors must sum to a positive multiple of the identity".into(),
        ));
    }
    // Design matrix: Tr(Pi_j sigma) is linear in the Pauli coordinates.
    let a = DMatrix::from_fn(projs.len(), 4, |j, i| projs[j].inner(&basis[i]));
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.iter().filter(|s| **s > 1e-10 * smax).count() < 4 {
        return Err(EmpiricalError::Underdetermined);
    }
    // Per-setting flux from the total counts of that setting.
    let mut flux: BTreeMap<Vec<u8>, f64> = BTreeMap::new();
    for ins in ct.scenario.input_tuples() {
        flux.insert(ins, 0.0);
    }
    for ((k, _), c) in &ct.counts {
        *flux.get_mut(&k.inputs()).expect("validated key") += c;
    }
    let mut elements = BTreeMap::new();
    for k in ct.scenario.element_keys() {
        let setting_total = flux[&k.inputs()];
        if setting_total <= 0.0 {
            return Err(EmpiricalError::Underdetermined);
        }
        let scale = setting_total / c;
        let mut p = DVector::zeros(projs.len());
        for j in 0..projs.len() {
            let count = ct
                .counts
                .get(&(k, j))
                .ok_or(EmpiricalError::Underdetermined)?;
            p[j] = count / scale;
        }
        let t = svd
            .solve(&p, 1e-10 * smax)
            .map_err(|_| EmpiricalError::Underdetermined)?;
        let sigma = PauliVector {
            c0: t[0],
            cz: t[1],
            cx: t[2],
            cy: t[3],
        }
        .to_matrix();
        elements.insert(k, sigma);
    }
    let scenario = ct.scenario;
    Ok(Assemblage::from_fn(scenario, |k| elements[k].clone()))
}

// ---- Projection onto the no-signaling set ----

/// Pauli coordinates of all elements, concatenated in key order. The
/// Frobenius metric is a uniform multiple of the Euclidean metric in these
/// coordinates, so orthogonal projections agree.
fn to_coords(asm: &Assemblage) -> DVector<f64> {
    let mut v = DVector::zeros(4 * asm.elements().len());
    for (i, (_, m)) in asm.elements().iter().enumerate() {
        let pv = PauliVector::from_matrix(m).expect("qubit element");
        v[4 * i] = pv.c0;
        v[4 * i + 1] = pv.cz;
        v[4 * i + 2] = pv.cx;
        v[4 * i + 3] = pv.cy;
    }
    v
}

fn from_coords(scenario: Scenario, keys: &[ElemKey], v: &DVector<f64>) -> Assemblage {
    let index: BTreeMap<ElemKey, usize> = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    Assemblage::from_fn(scenario, |k| {
        let i = index[k];
        PauliVector {
            c0: v[4 * i],
            cz: v[4 * i + 1],
            cx: v[4 * i + 2],
            cy: v[4 * i + 3],
        }
        .to_matrix()
    })
}

/// Rows of the affine constraints (no-signaling marginals + unit trace) in
/// the Pauli coordinates, as (matrix, rhs).
fn ns_constraint_rows(scenario: Scenario, keys: &[ElemKey]) -> (DMatrix<f64>, DVector<f64>) {
    let index: BTreeMap<ElemKey, usize> = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let n = 4 * keys.len();
    let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    match scenario.n_untrusted {
        1 => {
            // sum_a sigma_{a|0} = sum_a sigma_{a|1}, componentwise.
            for comp in 0..4 {
                let mut row = Vec::new();
                for a in 0..2u8 {
                    row.push((4 * index[&ElemKey::Bi { a, x: 0 }] + comp, 1.0));
                    row.push((4 * index[&ElemKey::Bi { a, x: 1 }] + comp, -1.0));
                }
                rows.push((row, 0.0));
            }
            // Unit trace of the reduced state: trace = 2 c0.
            let row = (0..2u8)
                .map(|a| (4 * index[&ElemKey::Bi { a, x: 0 }], 2.0))
                .collect();
            rows.push((row, 1.0));
        }
        2 => {
            // sum_b sigma_{ab|x,0} = sum_b sigma_{ab|x,1} for each (a, x).
            for a in 0..2u8 {
                for x in 0..2u8 {
                    for comp in 0..4 {
                        let mut row = Vec::new();
                        for b in 0..2u8 {
                            row.push((4 * index[&ElemKey::Tri { a, b, x, y: 0 }] + comp, 1.0));
                            row.push((4 * index[&ElemKey::Tri { a, b, x, y: 1 }] + comp, -1.0));
                        }
                        rows.push((row, 0.0));
                    }
                }
            }
            // sum_a sigma_{ab|0,y} = sum_a sigma_{ab|1,y} for each (b, y).
            for b in 0..2u8 {
                for y in 0..2u8 {
                    for comp in 0..4 {
                        let mut row = Vec::new();
                        for a in 0..2u8 {
                            row.push((4 * index[&ElemKey::Tri { a, b, x: 0, y }] + comp, 1.0));
                            row.push((4 * index[&ElemKey::Tri { a, b, x: 1, y }] + comp, -1.0));
                        }
                        rows.push((row, 0.0));
                    }
                }
            }
            let mut row = Vec::new();
            for a in 0..2u8 {
                for b in 0..2u8 {
                    row.push((4 * index[&ElemKey::Tri { a, b, x: 0, y: 0 }], 2.0));
                }
            }
            rows.push((row, 1.0));
        }
        _ => unreachable!("scenarios are bipartite or tripartite"),
    }
    let m = rows.len();
    let mut a = DMatrix::zeros(m, n);
    let mut b = DVector::zeros(m);
    for (i, (row, rhs)) in rows.into_iter().enumerate() {
        for (j, v) in row {
            a[(i, j)] += v;
        }
        b[i] = rhs;
    }
    (a, b)
}

fn psd_project_coords(v: &DVector<f64>) -> DVector<f64> {
    let mut out = v.clone();
    for i in 0..v.len() / 4 {
        let m = PauliVector {
            c0: v[4 * i],
            cz: v[4 * i + 1],
            cx: v[4 * i + 2],
            cy: v[4 * i + 3],
        }
        .to_matrix();
        if m.min_eigenvalue() >= 0.0 {
            continue;
        }
        let pv = PauliVector::from_matrix(&psd_clip(&m)).expect("clip is 2x2");
        out[4 * i] = pv.c0;
        out[4 * i + 1] = pv.cz;
        out[4 * i + 2] = pv.cx;
        out[4 * i + 3] = pv.cy;
    }
    out
}

fn min_eig_coords(v: &DVector<f64>) -> f64 {
    let mut worst = f64::INFINITY;
    for i in 0..v.len() / 4 {
        let m = PauliVector {
            c0: v[4 * i],
            cz: v[4 * i + 1],
            cx: v[4 * i + 2],
            cy: v[4 * i + 3],
        }
        .to_matrix();
        worst = worst.min(m.min_eigenvalue());
    }
    worst
}

/// Projects onto the set of valid assemblages (PSD elements, no-signaling
/// marginals, unit trace), minimizing the summed Frobenius distance.
/// Dykstra's alternating projection between the PSD product cone and the
/// affine no-signaling subspace converges to the exact nearest point; it is
/// run until the iterate is feasible to well below the validation
/// tolerances, so the output passes `validate` fully and already-valid
/// inputs are exact fixed points.
pub fn project_to_ns(asm: &Assemblage) -> Result<Assemblage, EmpiricalError> {
    let scenario = asm.scenario();
    let keys = scenario.element_keys();
    let (a, b) = ns_constraint_rows(scenario, &keys);
    let svd = a.clone().svd(true, true);
    let affine_project = |v: &DVector<f64>| -> DVector<f64> {
        let r = &a * v - &b;
        let correction = svd.solve(&r, 1e-12).expect("svd computed");
        v - correction
    };

    let mut x = to_coords(asm);
    let mut p = DVector::zeros(x.len());
    let mut q = DVector::zeros(x.len());
    let max_iter = 200_000;
    for _ in 0..max_iter {
        let y = psd_project_coords(&(&x + &p));
        p = &x + &p - &y;
        let x_new = affine_project(&(&y + &q));
        q = &y + &q - &x_new;
        let change = (&x_new - &x).norm();
        x = x_new;
        if change < 1e-13 && min_eig_coords(&x) > -1e-10 {
            return Ok(from_coords(scenario, &keys, &x));
        }
    }
    if min_eig_coords(&x) > -1e-10 {
        return Ok(from_coords(scenario, &keys, &x));
    }
    Err(EmpiricalError::ProjectionFailed)
}

// ---- Sweep statistics ----

/// The statistic evaluated per resample after projection. The bipartite
/// statistics (witness, CHSH) accept tripartite data by applying the y = a
/// wiring to the projected assemblage first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Statistic {
    /// Bipartite bound-1 steering witness value.
    WitnessEq56,
    /// Tripartite NS-LHS table witness value.
    NsLhsWitness,
    /// LHS-noise steering robustness.
    Robustness,
    /// CHSH value of the behavior under the trusted party's CHSH bases.
    Chsh,
}

/// Wires tripartite data down to the bipartite scenario; bipartite data
/// passes through.
fn bipartite_view(asm: &Assemblage) -> Result<Assemblage, EmpiricalError> {
    if asm.scenario().n_untrusted == 2 {
        Ok(wire(asm, Wiring::default())?)
    } else {
        Ok(asm.clone())
    }
}

impl Statistic {
    fn name(&self) -> &'static str {
        match self {
            Statistic::WitnessEq56 => "witness_eq56",
            Statistic::NsLhsWitness => "ns_lhs_witness",
            Statistic::Robustness => "robustness",
            Statistic::Chsh => "chsh",
        }
    }

    fn check_scenario(&self, scenario: Scenario) -> Result<(), EmpiricalError> {
        if *self == Statistic::NsLhsWitness && scenario.n_untrusted != 2 {
            return Err(EmpiricalError::ScenarioMismatch(
                "ns_lhs_witness needs tripartite data".into(),
            ));
        }
        Ok(())
    }

    fn evaluate(&self, asm: &Assemblage) -> Result<f64, EmpiricalError> {
        Ok(match self {
            Statistic::WitnessEq56 => {
                witness_evaluate(&eq56_witness(), &bipartite_view(asm)?)?.0
            }
            Statistic::NsLhsWitness => witness_evaluate(&ns_lhs_witness(), asm)?.0,
            Statistic::Robustness => robustness(asm, NoiseModel::Lhs)?,
            Statistic::Chsh => chsh_value(&behavior_from_assemblage(
                &bipartite_view(asm)?,
                &charlie_chsh_povm(),
            )?)?,
        })
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Summary of a Monte-Carlo sweep: per-sample statistic values with mean,
/// sample standard deviation and a histogram.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResampleSummary {
    pub statistic: String,
    pub samples: usize,
    pub mean: f64,
    pub std: f64,
    pub bins: Vec<HistogramBin>,
    pub values: Vec<f64>,
}

impl ResampleSummary {
    fn from_values(statistic: &str, values: Vec<f64>) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let nbins = 20.min(n).max(1);
        let width = ((hi - lo) / nbins as f64).max(f64::MIN_POSITIVE);
        let mut bins: Vec<HistogramBin> = (0..nbins)
            .map(|i| HistogramBin {
                lo: lo + i as f64 * width,
                hi: lo + (i + 1) as f64 * width,
                count: 0,
            })
            .collect();
        for v in &values {
            let i = (((v - lo) / width) as usize).min(nbins - 1);
            bins[i].count += 1;
        }
        ResampleSummary {
            statistic: statistic.to_string(),
            samples: n,
            mean,
            std: var.sqrt(),
            bins,
            values,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("summary serializes")
    }

    /// Histogram as CSV with a header row.
    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,count\n");
        for b in &self.bins {
            s.push_str(&format!("{},{},{}\n", b.lo, b.hi, b.count));
        }
        s
    }
}

fn thread_cap() -> Option<usize> {
    std::env::var("STEERING_LAB_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
}

/// Runs the full pipeline per sample (Poisson resample, linear-inversion
/// tomography, NS projection, statistic) and summarizes. Deterministic per
/// seed: per-sample seeds come from a splitmix stream and the results are
/// collected in sample order, so the output is independent of the thread
/// count (STEERING_LAB_THREADS, 0 = sequential).
pub fn sweep_statistic(
    ct: &CountTable,
    n: usize,
    seed: u64,
    statistic: Statistic,
) -> Result<ResampleSummary, EmpiricalError> {
    if n < 1 {
        return Err(EmpiricalError::InvalidCounts("need at least one sample".into()));
    }
    statistic.check_scenario(ct.scenario)?;
    let run_one = |i: usize| -> Result<f64, EmpiricalError> {
        let table = resample_one(ct, sample_seed(seed, i as u64));
        let raw = assemblage_from_counts(&table)?;
        let asm = project_to_ns(&raw)?;
        statistic.evaluate(&asm)
    };
    let values: Vec<f64> = match thread_cap() {
        Some(0) => (0..n).map(run_one).collect::<Result<_, _>>()?,
        cap => {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(cap.unwrap_or(0))
                .build()
                .map_err(|_| EmpiricalError::InvalidCounts("thread pool".into()))?;
            pool.install(|| (0..n).into_par_iter().map(run_one).collect::<Result<_, _>>())?
        }
    };
    Ok(ResampleSummary::from_values(statistic.name(), values))
}
