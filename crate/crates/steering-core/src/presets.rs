//! Published reference data: the bipartite steering witness in the bound-1
//! convention, the NS-LHS witness table, and the tabulated A->B time-ordered
//! decomposition of the noisy-W assemblage at v = 0.64.

use crate::assemblage::{Assemblage, ElemKey, Scenario};
use crate::hermitian::{pauli_i, pauli_y, HermitianMatrix};
use crate::steering::{ConventionTag, Witness, WitnessDirection};
use crate::strategies::{enumerate, StrategyKind};
use std::collections::BTreeMap;

fn real_sym(m11: f64, m12: f64, m22: f64) -> HermitianMatrix {
    HermitianMatrix::from_real(&[&[m11, m12], &[m12, m22]]).unwrap()
}

/// The published bipartite witness with bound 1: w_{0|0} and w_{0|1} as
/// given, w_{1|x} = Y w_{0|x} Y.
pub fn eq56_witness() -> Witness {
    let p = 0.5 * (1.0 + 1.0 / 5.0_f64.sqrt());
    let c = 0.1382;
    let q = 0.2236;
    let w00 = real_sym(p, -c, 1.0 - p);
    let w01 = real_sym(q, p / 2.0, -q);
    let conj = |m: &HermitianMatrix| -> HermitianMatrix {
        let y = pauli_y();
        HermitianMatrix::new(y.matrix() * m.matrix() * y.matrix()).unwrap()
    };
    let mut blocks = BTreeMap::new();
    blocks.insert(ElemKey::Bi { a: 0, x: 0 }, w00.clone());
    blocks.insert(ElemKey::Bi { a: 0, x: 1 }, w01.clone());
    blocks.insert(ElemKey::Bi { a: 1, x: 0 }, conj(&w00));
    blocks.insert(ElemKey::Bi { a: 1, x: 1 }, conj(&w01));
    Witness {
        blocks,
        bound: 1.0,
        direction: WitnessDirection::ViolatedIfAbove,
        convention_tag: ConventionTag::PaperEq56,
    }
}

/// The published NS-LHS witness table: members evaluate in [-1, 0], any
/// positive value certifies that the assemblage is not NS-LHS.
pub fn ns_lhs_witness() -> Witness {
    #[rustfmt::skip]
    let rows: [(u8, u8, u8, u8, [f64; 3]); 16] = [
        (0, 0, 0, 0, [-0.0056,  0.1194, -0.1205]),
        (0, 1, 0, 0, [-0.1394, -0.0603,  0.0662]),
        (1, 0, 0, 0, [-0.1394, -0.0603,  0.0662]),
        (1, 1, 0, 0, [ 0.0239, -0.0656, -0.1869]),
        (0, 0, 0, 1, [ 0.0233, -0.0324, -0.1706]),
        (0, 1, 0, 1, [-0.2194,  0.1346, -0.0079]),
        (1, 0, 0, 1, [-0.0560,  0.1109,  0.0114]),
        (1, 1, 0, 1, [-0.0417, -0.1490, -0.1079]),
        (0, 0, 1, 0, [ 0.0233, -0.0324, -0.1706]),
        (0, 1, 1, 0, [-0.0560,  0.1109,  0.0114]),
        (1, 0, 1, 0, [-0.2194,  0.1346, -0.0079]),
        (1, 1, 1, 0, [-0.0417, -0.1490, -0.1079]),
        (0, 0, 1, 1, [-0.0410, -0.0560,  0.0863]),
        (0, 1, 1, 1, [ 0.0665,  0.0431, -0.2194]),
        (1, 0, 1, 1, [ 0.0665,  0.0431, -0.2194]),
        (1, 1, 1, 1, [-0.4431, -0.0727,  0.0239]),
    ];
    let blocks = rows
        .iter()
        .map(|&(a, b, x, y, [m11, m12, m22])| {
            (ElemKey::Tri { a, b, x, y }, real_sym(m11, m12, m22))
        })
        .collect();
    Witness {
        blocks,
        bound: 0.0,
        direction: WitnessDirection::ViolatedIfAbove,
        convention_tag: ConventionTag::NsLhsTable,
    }
}

/// The tabulated non-normalized states of the A->B time-ordered
/// decomposition of the noisy-W assemblage at v = 0.64, rounded to four
/// decimals. Row-major over the 64 strategies in the appendix bit order
/// (a0, a1, b00, b01, b10, b11), each cell giving (m11, m12, m22).
const SIGMA_LAMBDA_RAW: &str = "\
0.0045 0.0013 0.0009|0.0928 0.0246 0.0070|0.0036 0.0011 0.0009|0.0244 0.0068 0.0024
0.0055 0.0058 0.0071|0.0084 0.0071 0.0067|0.0066 0.0076 0.0098|0.0100 0.0090 0.0089
0.0048 -0.0029 0.0025|0.0118 -0.0052 0.0029|0.0040 -0.0026 0.0024|0.0079 -0.0037 0.0024
0.0007 -0.0004 0.0024|0.0008 -0.0002 0.0014|0.0006 -0.0004 0.0029|0.0007 -0.0002 0.0015
0.0219 0.0118 0.0064|0.0001 0.0002 0.0010|0.0028 -0.0005 0.0001|0.0002 -0.0002 0.0004
0.0612 0.0411 0.0277|0.0034 0.0126 0.0467|0.0007 -0.0001 0.0001|0.0002 -0.0002 0.0004
0.0007 0.0003 0.0002|0.0001 0.0001 0.0010|0.0135 -0.0036 0.0010|0.0074 -0.0106 0.0153
0.0006 0.0003 0.0003|0.0010 0.0073 0.0545|0.0008 -0.0002 0.0001|0.0015 -0.0025 0.0045
0.0020 0.0006 0.0016|0.0049 0.0013 0.0013|0.0017 0.0006 0.0018|0.0038 0.0011 0.0014
0.0020 -0.0013 0.0022|0.0031 -0.0012 0.0014|0.0018 -0.0013 0.0024|0.0026 -0.0011 0.0015
0.0037 -0.0000 0.0009|0.0261 0.0009 0.0007|0.0029 -0.0000 0.0010|0.0125 0.0005 0.0008
0.0069 -0.0040 0.0032|0.0227 -0.0094 0.0045|0.0055 -0.0034 0.0030|0.0140 -0.0060 0.0033
0.0062 0.0036 0.0022|0.0011 0.0051 0.0258|0.0031 -0.0006 0.0002|0.0007 -0.0011 0.0018
0.0009 0.0005 0.0003|0.0001 0.0005 0.0034|0.0035 -0.0008 0.0003|0.0193 -0.0303 0.0479
0.0044 0.0023 0.0013|0.0002 0.0004 0.0024|0.0287 -0.0055 0.0011|0.0008 -0.0011 0.0018
0.0008 0.0004 0.0003|0.0001 0.0002 0.0015|0.0967 -0.0246 0.0063|0.0206 -0.0300 0.0440";

/// Parses the tabulated sigma_lambda states, indexed by the A->B strategy.
pub fn sigma_lambda_table() -> Vec<HermitianMatrix> {
    let mut out = Vec::with_capacity(64);
    for line in SIGMA_LAMBDA_RAW.lines() {
        for cell in line.split('|') {
            let vals: Vec<f64> = cell
                .split_whitespace()
                .map(|t| t.parse().expect("table entry parses"))
                .collect();
            assert_eq!(vals.len(), 3, "malformed table cell");
            out.push(real_sym(vals[0], vals[1], vals[2]));
        }
    }
    assert_eq!(out.len(), 64);
    out
}

/// Rebuilds the assemblage encoded by the sigma_lambda table through the
/// A->B deterministic strategies.
pub fn sigma_lambda_reconstruction() -> Assemblage {
    let states = sigma_lambda_table();
    let set = enumerate(StrategyKind::TimeOrderedAtoB);
    Assemblage::from_fn(Scenario::tripartite(), |k| {
        if let ElemKey::Tri { a, b, x, y } = k {
            let mut acc = HermitianMatrix::zeros(2);
            for (s, m) in set.strategies.iter().zip(&states) {
                if s.prob(*a, *b, *x, *y) > 0.0 {
                    acc = acc.add(m);
                }
            }
            acc
        } else {
            unreachable!()
        }
    })
}

/// The trivial witness evaluating to 1 on every assemblage in the bound-1
/// convention; used to anchor the affine convention conversion.
pub fn identity_witness_eq56(scenario: Scenario) -> Witness {
    let blocks = scenario
        .element_keys()
        .into_iter()
        .map(|k| (k, pauli_i().scale(0.5)))
        .collect();
    Witness {
        blocks,
        bound: 1.0,
        direction: WitnessDirection::ViolatedIfAbove,
        convention_tag: ConventionTag::PaperEq56,
    }
}
