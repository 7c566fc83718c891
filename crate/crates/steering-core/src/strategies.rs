//! Enumeration of deterministic hidden-variable response functions.
//!
//! The time-ordered encodings follow the appendix convention: each strategy
//! index is the binary number formed by the six response bits, most
//! significant bit first, `(a0, a1, b00, b01, b10, b11)` for A->B and
//! `(a00, a01, a10, a11, b0, b1)` for B->A (subscripts are input values,
//! pair subscripts ordered `xy`).

use crate::assemblage::{BehKey, Behavior};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StrategyKind {
    SingleParty,
    TimeOrderedAtoB,
    TimeOrderedBtoA,
    FullyLocal,
}

/// One deterministic response function. For `SingleParty` only the `a`
/// responses are meaningful; for two-party kinds `prob` gives the joint
/// 0/1 table.
#[derive(Clone, Debug)]
pub struct Strategy {
    kind: StrategyKind,
    /// a(x) for single-party and fully-local; a(x, y) for B->A.
    a_resp: [[u8; 2]; 2],
    /// b(y) for fully-local; b(x, y) for A->B; unused for single-party.
    b_resp: [[u8; 2]; 2],
}

impl Strategy {
    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    /// Response of party A. For kinds where `a` ignores `y` the second
    /// argument is irrelevant.
    pub fn a(&self, x: u8, y: u8) -> u8 {
        match self.kind {
            StrategyKind::TimeOrderedBtoA => self.a_resp[x as usize][y as usize],
            _ => self.a_resp[x as usize][0],
        }
    }

    pub fn b(&self, x: u8, y: u8) -> u8 {
        match self.kind {
            StrategyKind::TimeOrderedAtoB => self.b_resp[x as usize][y as usize],
            _ => self.b_resp[y as usize][0],
        }
    }

    /// Deterministic joint probability P(a, b | x, y) in {0, 1}.
    pub fn prob(&self, a: u8, b: u8, x: u8, y: u8) -> f64 {
        assert!(self.kind != StrategyKind::SingleParty);
        if self.a(x, y) == a && self.b(x, y) == b {
            1.0
        } else {
            0.0
        }
    }

    /// Single-party probability P(a | x) in {0, 1}.
    pub fn prob_single(&self, a: u8, x: u8) -> f64 {
        if self.a(x, 0) == a {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug)]
pub struct DeterministicStrategySet {
    pub kind: StrategyKind,
    pub strategies: Vec<Strategy>,
}

impl DeterministicStrategySet {
    pub fn len(&self) -> usize {
        self.strategies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strategies.is_empty()
    }
}

fn bit(value: usize, pos_from_msb: usize, width: usize) -> u8 {
    ((value >> (width - 1 - pos_from_msb)) & 1) as u8
}

pub fn enumerate(kind: StrategyKind) -> DeterministicStrategySet {
    let strategies = match kind {
        StrategyKind::SingleParty => (0..4)
            .map(|l| Strategy {
                kind,
                a_resp: [[bit(l, 0, 2); 2], [bit(l, 1, 2); 2]],
                b_resp: [[0; 2]; 2],
            })
            .collect(),
        StrategyKind::FullyLocal => (0..16)
            .map(|l| Strategy {
                kind,
                a_resp: [[bit(l, 0, 4); 2], [bit(l, 1, 4); 2]],
                b_resp: [[bit(l, 2, 4); 2], [bit(l, 3, 4); 2]],
            })
            .collect(),
        StrategyKind::TimeOrderedAtoB => (0..64)
            .map(|l| Strategy {
                kind,
                a_resp: [[bit(l, 0, 6); 2], [bit(l, 1, 6); 2]],
                b_resp: [
                    [bit(l, 2, 6), bit(l, 3, 6)],
                    [bit(l, 4, 6), bit(l, 5, 6)],
                ],
            })
            .collect(),
        StrategyKind::TimeOrderedBtoA => (0..64)
            .map(|l| Strategy {
                kind,
                a_resp: [
                    [bit(l, 0, 6), bit(l, 1, 6)],
                    [bit(l, 2, 6), bit(l, 3, 6)],
                ],
                b_resp: [[bit(l, 4, 6); 2], [bit(l, 5, 6); 2]],
            })
            .collect(),
    };
    DeterministicStrategySet { kind, strategies }
}

/// True iff the strategy's joint distribution is non-signaling in both
/// directions. For a deterministic time-ordered strategy this holds exactly
/// when the dependent party's response ignores the other party's input,
/// i.e. when the strategy coincides with a fully local one.
pub fn is_ns_strategy(kind: StrategyKind, lambda: usize) -> bool {
    let set = enumerate(kind);
    assert!(lambda < set.len(), "strategy index out of range");
    let s = &set.strategies[lambda];
    match kind {
        StrategyKind::SingleParty | StrategyKind::FullyLocal => true,
        StrategyKind::TimeOrderedAtoB => {
            (0..2).all(|y| s.b_resp[0][y] == s.b_resp[1][y])
        }
        StrategyKind::TimeOrderedBtoA => {
            (0..2).all(|x| s.a_resp[x][0] == s.a_resp[x][1])
        }
    }
}

/// Convex mixture of a strategy set into a behavior.
pub fn mix(set: &DeterministicStrategySet, weights: &[f64]) -> Result<Behavior, String> {
    if weights.len() != set.len() {
        return Err(format!(
            "weight count {} does not match set size {}",
            weights.len(),
            set.len()
        ));
    }
    if weights.iter().any(|w| *w < -1e-12) {
        return Err("negative weight".into());
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(format!("weights sum to {total}, expected 1"));
    }
    let mut probs: BTreeMap<BehKey, f64> = BTreeMap::new();
    match set.kind {
        StrategyKind::SingleParty => {
            for a in 0..2u8 {
                for x in 0..2u8 {
                    let p: f64 = set
                        .strategies
                        .iter()
                        .zip(weights)
                        .map(|(s, w)| w * s.prob_single(a, x))
                        .sum();
                    probs.insert(BehKey::One { a, x }, p);
                }
            }
        }
        _ => {
            for a in 0..2u8 {
                for b in 0..2u8 {
                    for x in 0..2u8 {
                        for y in 0..2u8 {
                            let p: f64 = set
                                .strategies
                                .iter()
                                .zip(weights)
                                .map(|(s, w)| w * s.prob(a, b, x, y))
                                .sum();
                            probs.insert(BehKey::Two { a, b, x, y }, p);
                        }
                    }
                }
            }
        }
    }
    Behavior::new(probs).map_err(|e| e.to_string())
}

/// The 256 deterministic joint response functions (a, b) = f(x, y), the
/// extreme points of the unconstrained conditional-distribution polytope
/// used by the tripartite LHS test. Strategy `l` packs the four output
/// pairs for inputs (x, y) in order (0,0), (0,1), (1,0), (1,1), each pair
/// encoded as `(a << 1) | b`, most significant pair first.
pub fn joint_prob(l: usize, a: u8, b: u8, x: u8, y: u8) -> f64 {
    debug_assert!(l < 256);
    let m = (2 * x + y) as usize;
    let o = (l >> (2 * (3 - m))) & 3;
    if o == ((a << 1) | b) as usize {
        1.0
    } else {
        0.0
    }
}

pub const NUM_JOINT_STRATEGIES: usize = 256;

/// Extreme points of the non-signaling polytope for the 2-input/2-output
/// bipartite scenario: the 16 local deterministic vertices followed by the
/// 8 PR-box variants `a xor b = xy xor alpha*x xor beta*y xor gamma`
/// (index `8*0 + 4*alpha + 2*beta + gamma` after the 16 locals).
pub fn ns_extreme_points() -> Vec<Behavior> {
    let mut out = Vec::with_capacity(24);
    let local = enumerate(StrategyKind::FullyLocal);
    for s in &local.strategies {
        let mut probs = BTreeMap::new();
        for a in 0..2u8 {
            for b in 0..2u8 {
                for x in 0..2u8 {
                    for y in 0..2u8 {
                        probs.insert(BehKey::Two { a, b, x, y }, s.prob(a, b, x, y));
                    }
                }
            }
        }
        out.push(Behavior::new(probs).unwrap());
    }
    for idx in 0..8u8 {
        let (alpha, beta, gamma) = ((idx >> 2) & 1, (idx >> 1) & 1, idx & 1);
        let mut probs = BTreeMap::new();
        for a in 0..2u8 {
            for b in 0..2u8 {
                for x in 0..2u8 {
                    for y in 0..2u8 {
                        let rhs = (x & y) ^ (alpha & x) ^ (beta & y) ^ gamma;
                        let p = if (a ^ b) == rhs { 0.5 } else { 0.0 };
                        probs.insert(BehKey::Two { a, b, x, y }, p);
                    }
                }
            }
        }
        out.push(Behavior::new(probs).unwrap());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_sizes() {
        assert_eq!(enumerate(StrategyKind::SingleParty).len(), 4);
        assert_eq!(enumerate(StrategyKind::FullyLocal).len(), 16);
        assert_eq!(enumerate(StrategyKind::TimeOrderedAtoB).len(), 64);
        assert_eq!(enumerate(StrategyKind::TimeOrderedBtoA).len(), 64);
    }

    #[test]
    fn single_party_lambda_zero() {
        let set = enumerate(StrategyKind::SingleParty);
        let s = &set.strategies[0];
        assert_eq!(s.a(0, 0), 0);
        assert_eq!(s.a(1, 0), 0);
    }

    #[test]
    fn a_to_b_table_rows() {
        let set = enumerate(StrategyKind::TimeOrderedAtoB);
        // Row 1: a0=a1=0, b00=b01=b10=0, b11=1.
        let s = &set.strategies[1];
        assert_eq!((s.a(0, 0), s.a(1, 0)), (0, 0));
        assert_eq!(
            (s.b(0, 0), s.b(0, 1), s.b(1, 0), s.b(1, 1)),
            (0, 0, 0, 1)
        );
        // Row 62 is the bit complement of row 1.
        let s = &set.strategies[62];
        assert_eq!((s.a(0, 0), s.a(1, 0)), (1, 1));
        assert_eq!(
            (s.b(0, 0), s.b(0, 1), s.b(1, 0), s.b(1, 1)),
            (1, 1, 1, 0)
        );
    }

    #[test]
    fn strategies_are_deterministic_and_complete() {
        for kind in [
            StrategyKind::TimeOrderedAtoB,
            StrategyKind::TimeOrderedBtoA,
            StrategyKind::FullyLocal,
        ] {
            let set = enumerate(kind);
            // Each strategy is a valid deterministic distribution.
            for s in &set.strategies {
                for x in 0..2 {
                    for y in 0..2 {
                        let total: f64 = (0..2)
                            .flat_map(|a| (0..2).map(move |b| (a, b)))
                            .map(|(a, b)| s.prob(a, b, x, y))
                            .sum();
                        assert_eq!(total, 1.0);
                    }
                }
            }
            // Completeness: all response tables distinct.
            let mut seen = std::collections::HashSet::new();
            for s in &set.strategies {
                let sig: Vec<u8> = (0..2)
                    .flat_map(|x| (0..2).map(move |y| (x, y)))
                    .map(|(x, y)| (s.a(x, y) << 1) | s.b(x, y))
                    .collect();
                assert!(seen.insert(sig), "duplicate strategy in {kind:?}");
            }
        }
    }

    #[test]
    fn a_to_b_never_signals_to_alice() {
        let set = enumerate(StrategyKind::TimeOrderedAtoB);
        for s in &set.strategies {
            for x in 0..2 {
                for a in 0..2 {
                    let m0: f64 = (0..2).map(|b| s.prob(a, b, x, 0)).sum();
                    let m1: f64 = (0..2).map(|b| s.prob(a, b, x, 1)).sum();
                    assert_eq!(m0, m1);
                }
            }
        }
    }

    #[test]
    fn ns_strategies_are_the_fully_local_ones() {
        let count = (0..64)
            .filter(|&l| is_ns_strategy(StrategyKind::TimeOrderedAtoB, l))
            .count();
        assert_eq!(count, 16);
        let count = (0..64)
            .filter(|&l| is_ns_strategy(StrategyKind::TimeOrderedBtoA, l))
            .count();
        assert_eq!(count, 16);
        assert!((0..16).all(|l| is_ns_strategy(StrategyKind::FullyLocal, l)));
        // Constant response is trivially NS.
        assert!(is_ns_strategy(StrategyKind::TimeOrderedAtoB, 0b000000));
        // b depends on x: signals from Alice's input to Bob.
        assert!(!is_ns_strategy(StrategyKind::TimeOrderedAtoB, 0b000010));
    }

    #[test]
    fn fully_local_embeds_in_both_orders() {
        let local = enumerate(StrategyKind::FullyLocal);
        let ab = enumerate(StrategyKind::TimeOrderedAtoB);
        let ba = enumerate(StrategyKind::TimeOrderedBtoA);
        for s in &local.strategies {
            let matches_ab = ab
                .strategies
                .iter()
                .filter(|t| {
                    (0..2).all(|x| {
                        (0..2).all(|y| t.a(x, y) == s.a(x, y) && t.b(x, y) == s.b(x, y))
                    })
                })
                .count();
            let matches_ba = ba
                .strategies
                .iter()
                .filter(|t| {
                    (0..2).all(|x| {
                        (0..2).all(|y| t.a(x, y) == s.a(x, y) && t.b(x, y) == s.b(x, y))
                    })
                })
                .count();
            assert_eq!(matches_ab, 1);
            assert_eq!(matches_ba, 1);
        }
    }

    #[test]
    fn mix_uniform_fully_local_is_white_noise() {
        let set = enumerate(StrategyKind::FullyLocal);
        let beh = mix(&set, &[1.0 / 16.0; 16]).unwrap();
        for (_, p) in beh.probabilities() {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn mix_point_mass() {
        let set = enumerate(StrategyKind::TimeOrderedAtoB);
        let mut w = [0.0; 64];
        w[5] = 1.0;
        let beh = mix(&set, &w).unwrap();
        let s = &set.strategies[5];
        for (k, p) in beh.probabilities() {
            if let BehKey::Two { a, b, x, y } = k {
                assert_eq!(*p, s.prob(*a, *b, *x, *y));
            }
        }
    }

    #[test]
    fn mix_rejects_bad_weights() {
        let set = enumerate(StrategyKind::SingleParty);
        assert!(mix(&set, &[0.5, 0.5]).is_err());
        assert!(mix(&set, &[0.5, 0.5, 0.5, 0.5]).is_err());
        assert!(mix(&set, &[-0.1, 0.4, 0.4, 0.3]).is_err());
    }

    #[test]
    fn joint_strategies_partition() {
        for x in 0..2u8 {
            for y in 0..2u8 {
                for a in 0..2u8 {
                    for b in 0..2u8 {
                        let hits = (0..NUM_JOINT_STRATEGIES)
                            .filter(|&l| joint_prob(l, a, b, x, y) == 1.0)
                            .count();
                        assert_eq!(hits, 64);
                    }
                }
            }
        }
    }

    #[test]
    fn ns_vertices_are_normalized_and_ns() {
        let verts = ns_extreme_points();
        assert_eq!(verts.len(), 24);
        for v in &verts {
            for x in 0..2u8 {
                for y in 0..2u8 {
                    let total: f64 = (0..2u8)
                        .flat_map(|a| (0..2u8).map(move |b| (a, b)))
                        .map(|(a, b)| v.get(&BehKey::Two { a, b, x, y }))
                        .sum();
                    assert!((total - 1.0).abs() < 1e-12);
                }
            }
            // Marginal of a must not depend on y, and vice versa.
            for a in 0..2u8 {
                for x in 0..2u8 {
                    let m0: f64 = (0..2u8).map(|b| v.get(&BehKey::Two { a, b, x, y: 0 })).sum();
                    let m1: f64 = (0..2u8).map(|b| v.get(&BehKey::Two { a, b, x, y: 1 })).sum();
                    assert!((m0 - m1).abs() < 1e-12);
                }
            }
            for b in 0..2u8 {
                for y in 0..2u8 {
                    let m0: f64 = (0..2u8).map(|a| v.get(&BehKey::Two { a, b, x: 0, y })).sum();
                    let m1: f64 = (0..2u8).map(|a| v.get(&BehKey::Two { a, b, x: 1, y })).sum();
                    assert!((m0 - m1).abs() < 1e-12);
                }
            }
        }
        // The last 8 vertices reach the algebraic CHSH maximum.
        let pr = &verts[16];
        for x in 0..2u8 {
            for y in 0..2u8 {
                for a in 0..2u8 {
                    for b in 0..2u8 {
                        let expect = if (a ^ b) == (x & y) { 0.5 } else { 0.0 };
                        assert_eq!(pr.get(&BehKey::Two { a, b, x, y }), expect);
                    }
                }
            }
        }
    }
}
