//! The exposure phenomenon: wirings, the universal exposure construction,
//! the GHZ example and the noisy-W family.

use crate::assemblage::{
    behavior_from_assemblage, realize, Assemblage, AssemblageError, BehKey, Behavior, ElemKey,
    Povm, Scenario,
};
use crate::hermitian::{pauli_i, pauli_x, pauli_z, HermitianMatrix, C64};
use nalgebra::DMatrix;
use std::collections::BTreeMap;

/// The only wiring considered here: Bob's input is set to Alice's output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Wiring {
    pub kind: WiringKind,
    pub direction: WiringDirection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WiringKind {
    #[default]
    YEqualsA,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WiringDirection {
    #[default]
    AtoB,
}

/// Parameters of the noisy-W family and the angle-parameterized targets.
#[derive(Clone, Copy, Debug)]
pub struct FamilyParams {
    /// Visibility in [0, 1].
    pub v: f64,
    /// Measurement parameter in [0, 1].
    pub eta: f64,
    /// Target-family angle (test-data generation only).
    pub theta: f64,
}

pub const DEFAULT_ETA: f64 = 0.97177;

impl FamilyParams {
    pub fn new(v: f64, eta: f64) -> Result<Self, AssemblageError> {
        if !(0.0..=1.0).contains(&v) || !(0.0..=1.0).contains(&eta) {
            return Err(AssemblageError::InvalidScenario(format!(
                "family parameters out of range: v={v}, eta={eta}"
            )));
        }
        Ok(Self { v, eta, theta: 0.0 })
    }
}

/// Applies the wiring y = a: `sigma_b|x = sum_a sigma_a,b|x,y=a`.
pub fn wire(asm: &Assemblage, _w: Wiring) -> Result<Assemblage, AssemblageError> {
    if asm.scenario().n_untrusted != 2 {
        return Err(AssemblageError::InvalidShape(
            "wiring requires a tripartite assemblage".into(),
        ));
    }
    let mut elements = BTreeMap::new();
    for b in 0..2 {
        for x in 0..2 {
            let mut acc = HermitianMatrix::zeros(2);
            for a in 0..2 {
                acc = acc.add(asm.element(&ElemKey::Tri { a, b, x, y: a }));
            }
            elements.insert(ElemKey::Bi { a: b, x }, acc);
        }
    }
    Assemblage::new(Scenario::bipartite(), elements)
}

/// The universal exposure initial assemblage
/// `sigma_a,b|x,y = (1/2) target_b|x^a^y`. Wiring y = a recovers the target
/// exactly, yet the result always admits an LHS model.
pub fn universal_initial(target: &Assemblage) -> Result<Assemblage, AssemblageError> {
    if target.scenario().n_untrusted != 1 {
        return Err(AssemblageError::InvalidShape(
            "universal initial requires a bipartite target".into(),
        ));
    }
    Ok(Assemblage::from_fn(Scenario::tripartite(), |k| {
        if let ElemKey::Tri { a, b, x, y } = k {
            target
                .element(&ElemKey::Bi {
                    a: *b,
                    x: x ^ a ^ y,
                })
                .scale(0.5)
        } else {
            unreachable!()
        }
    }))
}

/// The analytic LHS model of the universal initial assemblage: for
/// lambda = (l0, l1), weight `Tr[target_l0|l1] / 2`, state the normalized
/// target element, and deterministic response `b = l0`, `a = x ^ y ^ l1`.
pub struct UniversalLhsModel {
    pub weights: [f64; 4],
    pub states: [HermitianMatrix; 4],
}

impl UniversalLhsModel {
    pub fn response(l0: u8, l1: u8, a: u8, b: u8, x: u8, y: u8) -> f64 {
        if b == l0 && (x ^ a ^ y) == l1 {
            1.0
        } else {
            0.0
        }
    }

    /// Reconstructs the modeled assemblage; compare to the actual initial.
    pub fn reconstruct(&self) -> Assemblage {
        Assemblage::from_fn(Scenario::tripartite(), |k| {
            if let ElemKey::Tri { a, b, x, y } = k {
                let mut acc = HermitianMatrix::zeros(2);
                for l0 in 0..2u8 {
                    for l1 in 0..2u8 {
                        let idx = (2 * l0 + l1) as usize;
                        let p = self.weights[idx] * Self::response(l0, l1, *a, *b, *x, *y);
                        if p != 0.0 {
                            acc = acc.add(&self.states[idx].scale(p));
                        }
                    }
                }
                acc
            } else {
                unreachable!()
            }
        })
    }
}

pub fn universal_initial_lhs_model(target: &Assemblage) -> UniversalLhsModel {
    let mut weights = [0.0; 4];
    let mut states: Vec<HermitianMatrix> = Vec::with_capacity(4);
    for l0 in 0..2u8 {
        for l1 in 0..2u8 {
            let el = target.element(&ElemKey::Bi { a: l0, x: l1 });
            let tr = el.trace();
            weights[(2 * l0 + l1) as usize] = tr / 2.0;
            // Zero-probability elements get an arbitrary valid state.
            if tr > 1e-12 {
                states.push(el.scale(1.0 / tr));
            } else {
                states.push(pauli_i().scale(0.5));
            }
        }
    }
    UniversalLhsModel {
        weights,
        states: states.try_into().unwrap(),
    }
}

/// `P_initial(a,b,c|x,y,z) = (1/2) P_target(b,c|x^a^y,z)`.
pub fn universal_initial_behavior(target: &Behavior) -> Result<Behavior, AssemblageError> {
    if target.parties() != 2 {
        return Err(AssemblageError::InvalidBehavior(
            "universal initial requires a bipartite behavior".into(),
        ));
    }
    let mut probs = BTreeMap::new();
    for a in 0..2u8 {
        for b in 0..2u8 {
            for c in 0..2u8 {
                for x in 0..2u8 {
                    for y in 0..2u8 {
                        for z in 0..2u8 {
                            let p = 0.5
                                * target.get(&BehKey::Two {
                                    a: b,
                                    b: c,
                                    x: x ^ a ^ y,
                                    y: z,
                                });
                            probs.insert(BehKey::Three { a, b, c, x, y, z }, p);
                        }
                    }
                }
            }
        }
    }
    Behavior::new(probs)
}

/// Applies the wiring y = a to a tripartite behavior.
pub fn wire_behavior(beh: &Behavior) -> Result<Behavior, AssemblageError> {
    if beh.parties() != 3 {
        return Err(AssemblageError::InvalidBehavior(
            "wiring requires a tripartite behavior".into(),
        ));
    }
    let mut probs = BTreeMap::new();
    for b in 0..2u8 {
        for c in 0..2u8 {
            for x in 0..2u8 {
                for z in 0..2u8 {
                    let p: f64 = (0..2u8)
                        .map(|a| beh.get(&BehKey::Three { a, b, c, x, y: a, z }))
                        .sum();
                    probs.insert(BehKey::Two { a: b, b: c, x, y: z }, p);
                }
            }
        }
    }
    Behavior::new(probs)
}

/// The GHZ example: `sigma_a,b|x,y = (1/8){I + ((-1)^b/sqrt2)[Z + x(-1)^(a+y) X]}`.
pub fn ghz_assemblage() -> Assemblage {
    let s2 = 2.0_f64.sqrt();
    Assemblage::from_fn(Scenario::tripartite(), |k| {
        if let ElemKey::Tri { a, b, x, y } = k {
            let sb = if b % 2 == 0 { 1.0 } else { -1.0 };
            let sa = if (a + y) % 2 == 0 { 1.0 } else { -1.0 };
            pauli_i()
                .add(
                    &pauli_z()
                        .add(&pauli_x().scale(*x as f64 * sa))
                        .scale(sb / s2),
                )
                .scale(1.0 / 8.0)
        } else {
            unreachable!()
        }
    })
}

/// The analytic LHS model of the GHZ assemblage: four hidden values
/// lambda = (l0, l1) with weight 1/4 and state
/// 1/2 + ((-1)^l0 / 2 sqrt2)[Z + (-1)^l1 X]. The response fixes b = l0; for
/// x = 0 the a output is an unbiased coin, for x = 1 it is a = l1 ^ y.
pub struct GhzLhsModel {
    pub weights: [f64; 4],
    pub states: [HermitianMatrix; 4],
}

impl GhzLhsModel {
    pub fn response(l0: u8, l1: u8, a: u8, b: u8, x: u8, y: u8) -> f64 {
        if b != l0 {
            return 0.0;
        }
        if x == 0 {
            0.5
        } else if a == (l1 ^ y) {
            1.0
        } else {
            0.0
        }
    }

    pub fn reconstruct(&self) -> Assemblage {
        Assemblage::from_fn(Scenario::tripartite(), |k| {
            if let ElemKey::Tri { a, b, x, y } = k {
                let mut acc = HermitianMatrix::zeros(2);
                for l0 in 0..2u8 {
                    for l1 in 0..2u8 {
                        let idx = (2 * l0 + l1) as usize;
                        let p = self.weights[idx] * Self::response(l0, l1, *a, *b, *x, *y);
                        if p != 0.0 {
                            acc = acc.add(&self.states[idx].scale(p));
                        }
                    }
                }
                acc
            } else {
                unreachable!()
            }
        })
    }
}

pub fn ghz_lhs_model() -> GhzLhsModel {
    let s2 = 2.0_f64.sqrt();
    let mut states: Vec<HermitianMatrix> = Vec::with_capacity(4);
    for l0 in 0..2 {
        for l1 in 0..2 {
            let sz = if l0 == 0 { 1.0 } else { -1.0 };
            let sx = if l1 == 0 { 1.0 } else { -1.0 };
            states.push(
                pauli_i()
                    .scale(0.5)
                    .add(&pauli_z().add(&pauli_x().scale(sx)).scale(sz / (2.0 * s2))),
            );
        }
    }
    GhzLhsModel {
        weights: [0.25; 4],
        states: states.try_into().unwrap(),
    }
}

/// The GHZ state (|000> + |111>)/sqrt(2) as a density matrix.
pub fn ghz_state() -> HermitianMatrix {
    let mut m = DMatrix::<C64>::zeros(8, 8);
    for (i, j) in [(0, 0), (0, 7), (7, 0), (7, 7)] {
        m[(i, j)] = C64::new(0.5, 0.0);
    }
    HermitianMatrix::new(m).unwrap()
}

/// The measurements realizing the GHZ assemblage: Alice uses the trivial
/// POVM for x = 0 and the X basis for x = 1; Bob measures along
/// (Z + X)/sqrt2 and (Z - X)/sqrt2.
pub fn ghz_povms() -> (Povm, Povm) {
    let s2 = 2.0_f64.sqrt();
    let trivial_then_x = Povm {
        effects: vec![
            Povm::trivial(1).effects[0].clone(),
            Povm::qubit_bases(&[(1.0, 0.0, 0.0)]).effects[0].clone(),
        ],
    };
    let bob = Povm::qubit_bases(&[(1.0 / s2, 0.0, 1.0 / s2), (-1.0 / s2, 0.0, 1.0 / s2)]);
    (trivial_then_x, bob)
}

/// The wired GHZ assemblage `(1/4)[I + ((-1)^b/sqrt2)(Z + xX)]`, the paper's
/// steerable-and-Bell-nonlocal example.
pub fn wired_ghz_assemblage() -> Assemblage {
    let s2 = 2.0_f64.sqrt();
    Assemblage::from_fn(Scenario::bipartite(), |k| {
        if let ElemKey::Bi { a: b, x } = k {
            let sb = if b % 2 == 0 { 1.0 } else { -1.0 };
            pauli_i()
                .add(&pauli_z().add(&pauli_x().scale(*x as f64)).scale(sb / s2))
                .scale(0.25)
        } else {
            unreachable!()
        }
    })
}

/// The noisy W state `v |W><W| + (1 - v) I/8`.
pub fn noisy_w_state(v: f64) -> HermitianMatrix {
    let amp = 1.0 / 3.0_f64.sqrt();
    let mut w = DMatrix::<C64>::zeros(8, 8);
    // |W> = (|001> + |010> + |100>)/sqrt(3); indices 1, 2, 4.
    for i in [1usize, 2, 4] {
        for j in [1usize, 2, 4] {
            w[(i, j)] = C64::new(amp * amp, 0.0);
        }
    }
    let noise = DMatrix::<C64>::identity(8, 8).scale(1.0 / 8.0);
    HermitianMatrix::new(w.scale(v) + noise.scale(1.0 - v)).unwrap()
}

/// Measurement directions for the noisy-W family: `eta X + sqrt(1-eta^2) Z`
/// for input 0 and `sqrt(1-eta^2) X - eta Z` for input 1, identical for
/// Alice and Bob.
pub fn noisy_w_povm(eta: f64) -> Povm {
    let r = (1.0 - eta * eta).max(0.0).sqrt();
    Povm::qubit_bases(&[(eta, 0.0, r), (r, 0.0, -eta)])
}

/// The noisy-W assemblage, built by measuring the noisy W state.
pub fn noisy_w_assemblage(params: FamilyParams) -> Result<Assemblage, AssemblageError> {
    if !(0.0..=1.0).contains(&params.v) || !(0.0..=1.0).contains(&params.eta) {
        return Err(AssemblageError::InvalidScenario(format!(
            "family parameters out of range: v={}, eta={}",
            params.v, params.eta
        )));
    }
    let povm = noisy_w_povm(params.eta);
    realize(&noisy_w_state(params.v), &[povm.clone(), povm])
}

/// Angle-parameterized pure-state target family, used as test data:
/// `sigma_a|x = (1/2)|psi(a,x)><psi(a,x)|` with psi(0,0)=|0>, psi(1,0)=|1>,
/// psi(0,1)=cos t|0>+sin t|1>, psi(1,1)=-sin t|0>+cos t|1>.
pub fn psitheta_target(theta: f64) -> Assemblage {
    let proj = |c0: f64, c1: f64| -> HermitianMatrix {
        HermitianMatrix::from_real(&[&[c0 * c0, c0 * c1], &[c0 * c1, c1 * c1]]).unwrap()
    };
    Assemblage::from_fn(Scenario::bipartite(), |k| {
        if let ElemKey::Bi { a, x } = k {
            let m = match (a, x) {
                (0, 0) => proj(1.0, 0.0),
                (1, 0) => proj(0.0, 1.0),
                (0, 1) => proj(theta.cos(), theta.sin()),
                (1, 1) => proj(-theta.sin(), theta.cos()),
                _ => unreachable!(),
            };
            m.scale(0.5)
        } else {
            unreachable!()
        }
    })
}

/// Charlie's CHSH measurements: the eigenbasis of (2Z + X)/sqrt5 for z = 0
/// and of X for z = 1. The Bloch directions are normalized to unit length
/// (the normalization is required for a von Neumann measurement) and the
/// z = 1 outcome labeling is flipped so that the fixed correlator form
/// `S = sum (-1)^(xz) E(x,z)` comes out positive on the wired GHZ behavior.
pub fn charlie_chsh_povm() -> Povm {
    let s5 = 5.0_f64.sqrt();
    Povm::qubit_bases(&[(1.0 / s5, 0.0, 2.0 / s5), (-1.0, 0.0, 0.0)])
}

/// CHSH value `S = sum_{x,z} (-1)^(xz) E(x,z)` of a bipartite behavior,
/// with `E` the +-1-outcome correlator.
pub fn chsh_value(beh: &Behavior) -> Result<f64, AssemblageError> {
    if beh.parties() != 2 {
        return Err(AssemblageError::InvalidBehavior(
            "CHSH requires a bipartite behavior".into(),
        ));
    }
    let mut s = 0.0;
    for x in 0..2u8 {
        for z in 0..2u8 {
            let mut e = 0.0;
            for a in 0..2u8 {
                for b in 0..2u8 {
                    let sign = if (a + b) % 2 == 0 { 1.0 } else { -1.0 };
                    e += sign * beh.get(&BehKey::Two { a, b, x, y: z });
                }
            }
            let sign = if x * z == 1 { -1.0 } else { 1.0 };
            s += sign * e;
        }
    }
    Ok(s)
}

/// The CHSH-optimal behavior of the wired GHZ example.
pub fn wired_ghz_chsh_behavior() -> Behavior {
    behavior_from_assemblage(&wired_ghz_assemblage(), &charlie_chsh_povm())
        .expect("analytic construction is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assemblage::validate;
    use crate::strategies::{enumerate, mix, StrategyKind};

    #[test]
    fn ghz_matches_realize() {
        let analytic = ghz_assemblage();
        assert!(validate(&analytic).all_ok());
        assert!(validate(&analytic).max_violation <= 1e-12);
        let (alice, bob) = ghz_povms();
        let realized = realize(&ghz_state(), &[alice, bob]).unwrap();
        assert!(analytic.max_abs_diff(&realized) < 1e-12);
    }

    #[test]
    fn ghz_total_marginal_is_maximally_mixed() {
        let asm = ghz_assemblage();
        for x in 0..2 {
            for y in 0..2 {
                let mut acc = HermitianMatrix::zeros(2);
                for a in 0..2 {
                    for b in 0..2 {
                        acc = acc.add(asm.element(&ElemKey::Tri { a, b, x, y }));
                    }
                }
                assert!(acc.sub(&pauli_i().scale(0.5)).max_abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ghz_lhs_model_reconstructs_exactly() {
        let model = ghz_lhs_model();
        assert!((model.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for s in &model.states {
            assert!(s.is_psd(1e-12));
            assert!((s.trace() - 1.0).abs() < 1e-12);
        }
        // The response is a valid conditional distribution.
        for l0 in 0..2 {
            for l1 in 0..2 {
                for x in 0..2 {
                    for y in 0..2 {
                        let total: f64 = (0..2)
                            .flat_map(|a| (0..2).map(move |b| (a, b)))
                            .map(|(a, b)| GhzLhsModel::response(l0, l1, a, b, x, y))
                            .sum();
                        assert!((total - 1.0).abs() < 1e-15);
                    }
                }
            }
        }
        assert!(model.reconstruct().max_abs_diff(&ghz_assemblage()) <= 1e-12);
    }

    #[test]
    fn wire_ghz_gives_steerable_form() {
        let wired = wire(&ghz_assemblage(), Wiring::default()).unwrap();
        assert!(wired.max_abs_diff(&wired_ghz_assemblage()) < 1e-12);
        assert!(validate(&wired).all_ok());
    }

    #[test]
    fn wire_is_linear() {
        let a = ghz_assemblage();
        let b = Assemblage::white_noise(Scenario::tripartite());
        let alpha = 0.37;
        let lhs = wire(&a.mix_with(&b, alpha), Wiring::default()).unwrap();
        let rhs = wire(&a, Wiring::default())
            .unwrap()
            .mix_with(&wire(&b, Wiring::default()).unwrap(), alpha);
        assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn universal_initial_round_trip() {
        for target in [
            wired_ghz_assemblage(),
            psitheta_target(std::f64::consts::FRAC_PI_4),
            psitheta_target(0.3),
        ] {
            let initial = universal_initial(&target).unwrap();
            assert!(validate(&initial).all_ok());
            let back = wire(&initial, Wiring::default()).unwrap();
            assert!(back.max_abs_diff(&target) < 1e-12);

            let model = universal_initial_lhs_model(&target);
            assert!(model.reconstruct().max_abs_diff(&initial) < 1e-12);
        }
    }

    #[test]
    fn universal_initial_behavior_round_trip() {
        let target = wired_ghz_chsh_behavior();
        let initial = universal_initial_behavior(&target).unwrap();
        let back = wire_behavior(&initial).unwrap();
        for (k, p) in target.probabilities() {
            assert!((back.get(k) - p).abs() < 1e-12);
        }

        // The PR box wires back to itself and reaches CHSH 4.
        let pr = crate::strategies::ns_extreme_points()[16].clone();
        let initial = universal_initial_behavior(&pr).unwrap();
        let back = wire_behavior(&initial).unwrap();
        assert!((chsh_value(&back).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn noisy_w_validates_and_white_noise_limit() {
        let asm = noisy_w_assemblage(FamilyParams::new(0.0, DEFAULT_ETA).unwrap()).unwrap();
        assert!(validate(&asm).all_ok());
        // v = 0: every element is (1/4) I/2.
        for (_, m) in asm.elements() {
            assert!(m.sub(&pauli_i().scale(0.125)).max_abs() < 1e-12);
        }
        let asm = noisy_w_assemblage(FamilyParams::new(0.64, DEFAULT_ETA).unwrap()).unwrap();
        assert!(validate(&asm).all_ok());
        assert!(noisy_w_assemblage(FamilyParams { v: 1.3, eta: 0.5, theta: 0.0 }).is_err());
    }

    #[test]
    fn noisy_w_matches_table_formulas_at_v1() {
        // Cross-check the realize path against the closed-form entries for
        // the (a,b|0,0) and (a,b|1,1) blocks.
        let e = DEFAULT_ETA;
        let r = (1.0 - e * e).sqrt();
        let p0 = HermitianMatrix::from_real(&[&[1.0, 0.0], &[0.0, 0.0]]).unwrap();
        let p1 = HermitianMatrix::from_real(&[&[0.0, 0.0], &[0.0, 1.0]]).unwrap();
        let asm = noisy_w_assemblage(FamilyParams::new(1.0, e).unwrap()).unwrap();

        let expect_0000 = p0
            .scale(2.0 * e * e)
            .add(&p1.scale(1.0 + r - e * e / 2.0))
            .add(&pauli_x().scale(e * (1.0 + r)))
            .scale(1.0 / 6.0);
        assert!(
            asm.element(&ElemKey::Tri { a: 0, b: 0, x: 0, y: 0 })
                .sub(&expect_0000)
                .max_abs()
                < 1e-4
        );

        let expect_0100 = p0
            .scale(2.0 * (1.0 - e * e))
            .add(&p1.scale(e * e / 2.0))
            .sub(&pauli_x().scale(e * r))
            .scale(1.0 / 6.0);
        assert!(
            asm.element(&ElemKey::Tri { a: 0, b: 1, x: 0, y: 0 })
                .sub(&expect_0100)
                .max_abs()
                < 1e-4
        );

        let expect_1111 = p0
            .scale(2.0 * (1.0 - e * e))
            .add(&p1.scale(1.0 + e - (1.0 - e * e) / 2.0))
            .sub(&pauli_x().scale(r * (1.0 + e)))
            .scale(1.0 / 6.0);
        assert!(
            asm.element(&ElemKey::Tri { a: 1, b: 1, x: 1, y: 1 })
                .sub(&expect_1111)
                .max_abs()
                < 1e-4
        );
    }

    #[test]
    fn chsh_wired_ghz_optimal() {
        let s = chsh_value(&wired_ghz_chsh_behavior()).unwrap();
        let expect = (1.0 + 5.0_f64.sqrt()) / 2.0_f64.sqrt();
        assert!((s - expect).abs() < 1e-12, "S = {s}");
    }

    #[test]
    fn chsh_local_bound() {
        let set = enumerate(StrategyKind::FullyLocal);
        // Every deterministic local behavior and a few mixtures stay at or
        // below 2.
        for l in 0..16 {
            let mut w = [0.0; 16];
            w[l] = 1.0;
            let beh = mix(&set, &w).unwrap();
            assert!(chsh_value(&beh).unwrap().abs() <= 2.0 + 1e-9);
        }
        let beh = mix(&set, &[1.0 / 16.0; 16]).unwrap();
        assert!(chsh_value(&beh).unwrap().abs() <= 2.0 + 1e-9);
    }
}
