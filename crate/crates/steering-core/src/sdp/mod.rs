//! A self-contained dense semidefinite-programming solver for small block
//! problems: optimize a linear functional over Hermitian (or real symmetric)
//! PSD blocks plus free scalar variables, subject to affine equalities.
//!
//! Complex Hermitian blocks are solved through the real-symmetric embedding
//! `[[Re, -Im], [Im, Re]]`; coefficient matrices are embedded with a factor
//! 1/2 so that `<A_emb, X_emb> = Re Tr[A H]` and objective values, duals and
//! gaps agree between the complex and embedded pictures.

mod ipm;

use crate::hermitian::{HermitianMatrix, C64};
use nalgebra::DMatrix;
use serde::Serialize;

pub use ipm::{IpmStatus as SdpStatus, IpmOptions};

const MAX_CONSTRAINTS: usize = 4096;
const MAX_BLOCKS: usize = 512;
const MAX_BLOCK_DIM: usize = 16;
/// Pivot threshold for dropping linearly dependent constraint rows.
const QR_PIVOT_TOL: f64 = 1e-10;

#[derive(Debug, thiserror::Error)]
pub enum SdpError {
    #[error("problem exceeds configured caps: {0}")]
    TooLarge(String),
    #[error("invalid problem data: {0}")]
    InvalidData(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FreeId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    /// Complex Hermitian PSD variable of the given dimension.
    Hermitian(usize),
    /// Real symmetric PSD variable of the given dimension.
    RealSym(usize),
}

impl BlockKind {
    fn dim(&self) -> usize {
        match self {
            BlockKind::Hermitian(d) | BlockKind::RealSym(d) => *d,
        }
    }
}

#[derive(Clone, Debug)]
struct Constraint {
    terms: Vec<(usize, HermitianMatrix)>,
    free: Vec<(usize, f64)>,
    rhs: f64,
}

#[derive(Clone, Debug)]
pub struct SdpProblem {
    sense: Sense,
    blocks: Vec<BlockKind>,
    n_free: usize,
    obj_blocks: Vec<Option<HermitianMatrix>>,
    obj_free: Vec<f64>,
    constraints: Vec<Constraint>,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Residuals {
    pub primal_eq: f64,
    pub dual_eq: f64,
    pub complementarity: f64,
}

/// A Farkas-type dual improving ray proving primal infeasibility:
/// `sum_i y_i A_ij <= 0` per block, `F^T y = 0`, and `b . y = 1 > 0`.
#[derive(Clone, Debug, Serialize)]
pub struct FarkasCertificate {
    pub y: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub primal_value: f64,
    pub dual_value: f64,
    pub blocks: Vec<HermitianMatrix>,
    pub free_values: Vec<f64>,
    /// Dual multipliers for the full constraint list; rows dropped as
    /// linearly dependent in preprocessing carry 0.
    pub dual_y: Vec<f64>,
    pub dual_slacks: Vec<HermitianMatrix>,
    pub gap: f64,
    pub residuals: Residuals,
    pub iterations: usize,
    pub farkas: Option<FarkasCertificate>,
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub tol_gap: f64,
    pub tol_feas: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_gap: 1e-7,
            tol_feas: 1e-7,
            max_iter: 200,
        }
    }
}

impl SdpProblem {
    pub fn new(sense: Sense) -> Self {
        Self {
            sense,
            blocks: Vec::new(),
            n_free: 0,
            obj_blocks: Vec::new(),
            obj_free: Vec::new(),
            constraints: Vec::new(),
        }
    }

    pub fn add_hermitian_block(&mut self, dim: usize) -> BlockId {
        assert!(dim >= 1 && dim <= MAX_BLOCK_DIM && self.blocks.len() < MAX_BLOCKS);
        self.blocks.push(BlockKind::Hermitian(dim));
        self.obj_blocks.push(None);
        BlockId(self.blocks.len() - 1)
    }

    pub fn add_real_block(&mut self, dim: usize) -> BlockId {
        assert!(dim >= 1 && dim <= MAX_BLOCK_DIM && self.blocks.len() < MAX_BLOCKS);
        self.blocks.push(BlockKind::RealSym(dim));
        self.obj_blocks.push(None);
        BlockId(self.blocks.len() - 1)
    }

    pub fn add_free(&mut self) -> FreeId {
        self.n_free += 1;
        self.obj_free.push(0.0);
        FreeId(self.n_free - 1)
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn set_objective_block(&mut self, blk: BlockId, c: HermitianMatrix) {
        assert_eq!(c.dim(), self.blocks[blk.0].dim());
        self.obj_blocks[blk.0] = Some(c);
    }

    pub fn set_objective_free(&mut self, f: FreeId, coef: f64) {
        self.obj_free[f.0] = coef;
    }

    /// Adds `sum_j Tr[A_j X_j] + sum_k f_k t_k = rhs`.
    pub fn add_constraint(
        &mut self,
        terms: Vec<(BlockId, HermitianMatrix)>,
        free: Vec<(FreeId, f64)>,
        rhs: f64,
    ) -> Result<(), SdpError> {
        if self.constraints.len() >= MAX_CONSTRAINTS {
            return Err(SdpError::TooLarge(format!(
                "more than {MAX_CONSTRAINTS} constraints"
            )));
        }
        for (b, a) in &terms {
            if a.dim() != self.blocks[b.0].dim() {
                return Err(SdpError::InvalidData(format!(
                    "coefficient dim {} does not match block dim {}",
                    a.dim(),
                    self.blocks[b.0].dim()
                )));
            }
        }
        self.constraints.push(Constraint {
            terms: terms.into_iter().map(|(b, a)| (b.0, a)).collect(),
            free: free.into_iter().map(|(f, c)| (f.0, c)).collect(),
            rhs,
        });
        Ok(())
    }

    /// Debug dump of the problem in a documented standard form for
    /// cross-checking against external solvers.
    pub fn dump_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct Dump<'a> {
            sense: &'a str,
            blocks: Vec<serde_json::Value>,
            n_free: usize,
            objective_blocks: Vec<Option<&'a HermitianMatrix>>,
            objective_free: &'a [f64],
            constraints: Vec<serde_json::Value>,
        }
        let dump = Dump {
            sense: match self.sense {
                Sense::Minimize => "min",
                Sense::Maximize => "max",
            },
            blocks: self
                .blocks
                .iter()
                .map(|b| match b {
                    BlockKind::Hermitian(d) => serde_json::json!({"kind": "hermitian", "dim": d}),
                    BlockKind::RealSym(d) => serde_json::json!({"kind": "real", "dim": d}),
                })
                .collect(),
            n_free: self.n_free,
            objective_blocks: self.obj_blocks.iter().map(|c| c.as_ref()).collect(),
            objective_free: &self.obj_free,
            constraints: self
                .constraints
                .iter()
                .map(|c| {
                    serde_json::json!({
                        "terms": c.terms.iter().map(|(j, a)| serde_json::json!({
                            "block": j, "matrix": a,
                        })).collect::<Vec<_>>(),
                        "free": c.free,
                        "rhs": c.rhs,
                    })
                })
                .collect(),
        };
        serde_json::to_value(dump).expect("dump serializes")
    }

    fn embed_coef(&self, block: usize, a: &HermitianMatrix) -> Result<DMatrix<f64>, SdpError> {
        match self.blocks[block] {
            // Factor 1/2 makes <A_emb, X_emb> = Re Tr[A H].
            BlockKind::Hermitian(_) => Ok(a.real_embedding().scale(0.5)),
            BlockKind::RealSym(d) => {
                let mut out = DMatrix::zeros(d, d);
                for i in 0..d {
                    for j in 0..d {
                        let z = a.get(i, j);
                        if z.im.abs() > 1e-12 {
                            return Err(SdpError::InvalidData(
                                "complex coefficient on a real block".into(),
                            ));
                        }
                        out[(i, j)] = z.re;
                    }
                }
                Ok(out)
            }
        }
    }

    fn compile(&self) -> Result<ipm::IpmProblem, SdpError> {
        let neg = if self.sense == Sense::Maximize { -1.0 } else { 1.0 };
        let blocks = self
            .blocks
            .iter()
            .map(|b| match b {
                BlockKind::Hermitian(d) => ipm::IpmBlock {
                    dim: 2 * d,
                    embedded_half: Some(*d),
                },
                BlockKind::RealSym(d) => ipm::IpmBlock {
                    dim: *d,
                    embedded_half: None,
                },
            })
            .collect::<Vec<_>>();
        let mut obj_blocks = Vec::with_capacity(self.blocks.len());
        for (j, c) in self.obj_blocks.iter().enumerate() {
            let m = match c {
                Some(c) => self.embed_coef(j, c)?.scale(neg),
                None => DMatrix::zeros(blocks[j].dim, blocks[j].dim),
            };
            obj_blocks.push(m);
        }
        let mut constraints = Vec::with_capacity(self.constraints.len());
        for con in &self.constraints {
            let mut terms = Vec::with_capacity(con.terms.len());
            for (j, a) in &con.terms {
                terms.push((*j, self.embed_coef(*j, a)?));
            }
            constraints.push(ipm::IpmConstraint {
                terms,
                free: con.free.clone(),
                rhs: con.rhs,
            });
        }
        Ok(ipm::IpmProblem {
            blocks,
            n_free: self.n_free,
            obj_blocks,
            obj_free: self.obj_free.iter().map(|c| c * neg).collect(),
            constraints,
        })
    }
}

/// Outcome of the QR row preprocessing.
enum Preprocessed {
    Reduced {
        kept: Vec<usize>,
        problem: ipm::IpmProblem,
    },
    /// The dropped rows were inconsistent with the kept ones; `y` is a
    /// Farkas combination proving it.
    Inconsistent { y: Vec<f64> },
}

/// Removes linearly dependent constraint rows via a column-pivoted QR of the
/// transposed constraint matrix, checking dropped rows for consistency.
fn preprocess(p: &ipm::IpmProblem) -> Preprocessed {
    let m = p.constraints.len();
    // svec length over all blocks plus the free columns.
    let svec_len: usize = p.blocks.iter().map(|b| b.dim * (b.dim + 1) / 2).sum();
    let n_cols = svec_len + p.n_free;
    let mut offsets = Vec::with_capacity(p.blocks.len());
    let mut off = 0;
    for b in &p.blocks {
        offsets.push(off);
        off += b.dim * (b.dim + 1) / 2;
    }

    let mut d_t = DMatrix::<f64>::zeros(n_cols, m);
    let s2 = 2.0_f64.sqrt();
    for (i, con) in p.constraints.iter().enumerate() {
        for (j, a) in &con.terms {
            let n = p.blocks[*j].dim;
            let base = offsets[*j];
            let mut idx = 0;
            for r in 0..n {
                for c in r..n {
                    let v = if r == c { a[(r, c)] } else { s2 * a[(r, c)] };
                    d_t[(base + idx, i)] += v;
                    idx += 1;
                }
            }
        }
        for (k, f) in &con.free {
            d_t[(svec_len + k, i)] += f;
        }
    }

    let qr = d_t.clone().col_piv_qr();
    let r = qr.r();
    // Recover the column (constraint) permutation by applying it to an
    // index vector.
    let mut idx_mat = DMatrix::<f64>::from_fn(1, m, |_, j| j as f64);
    qr.p().permute_columns(&mut idx_mat);
    let perm: Vec<usize> = (0..m).map(|j| idx_mat[(0, j)] as usize).collect();

    let rdiag_max = (0..r.nrows().min(m))
        .map(|i| r[(i, i)].abs())
        .fold(0.0, f64::max);
    let rank = (0..r.nrows().min(m))
        .take_while(|&i| r[(i, i)].abs() > QR_PIVOT_TOL * rdiag_max.max(1e-300))
        .count();

    let b_scale = 1.0
        + p.constraints
            .iter()
            .map(|c| c.rhs.abs())
            .fold(0.0, f64::max);
    if rank < m {
        let r_top = r.view((0, 0), (rank, rank)).into_owned();
        for k in rank..m {
            let col = r.view((0, k), (rank, 1)).into_owned();
            let z = r_top
                .clone()
                .solve_upper_triangular(&col)
                .unwrap_or_else(|| DMatrix::zeros(rank, 1));
            let combo: f64 = (0..rank)
                .map(|i| z[(i, 0)] * p.constraints[perm[i]].rhs)
                .sum();
            let gap = p.constraints[perm[k]].rhs - combo;
            if gap.abs() > 1e-8 * b_scale {
                // Inconsistent dependent row: an exact Farkas ray.
                let mut y = vec![0.0; m];
                y[perm[k]] = 1.0 / gap;
                for i in 0..rank {
                    y[perm[i]] = -z[(i, 0)] / gap;
                }
                return Preprocessed::Inconsistent { y };
            }
        }
    }

    let mut kept: Vec<usize> = perm[..rank].to_vec();
    kept.sort_unstable();
    let problem = ipm::IpmProblem {
        blocks: p.blocks.clone(),
        n_free: p.n_free,
        obj_blocks: p.obj_blocks.clone(),
        obj_free: p.obj_free.clone(),
        constraints: kept.iter().map(|&i| p.constraints[i].clone()).collect(),
    };
    Preprocessed::Reduced { kept, problem }
}

pub fn solve(p: &SdpProblem, opts: &SolverOptions) -> Result<SdpSolution, SdpError> {
    let compiled = p.compile()?;
    let neg = if p.sense == Sense::Maximize { -1.0 } else { 1.0 };
    let m_full = compiled.constraints.len();

    let (kept, reduced) = match preprocess(&compiled) {
        Preprocessed::Reduced { kept, problem } => (kept, problem),
        Preprocessed::Inconsistent { y } => {
            // Scale was fixed in preprocessing; verify and report.
            debug_assert!(ipm::verify_farkas(&compiled, &y));
            return Ok(SdpSolution {
                status: SdpStatus::Infeasible,
                primal_value: f64::NAN,
                dual_value: f64::NAN,
                blocks: Vec::new(),
                free_values: Vec::new(),
                dual_y: vec![0.0; m_full],
                dual_slacks: Vec::new(),
                gap: f64::NAN,
                residuals: Residuals {
                    primal_eq: f64::INFINITY,
                    dual_eq: f64::INFINITY,
                    complementarity: f64::INFINITY,
                },
                iterations: 0,
                farkas: Some(FarkasCertificate { y }),
            });
        }
    };

    let ipm_opts = ipm::IpmOptions {
        tol_gap: opts.tol_gap,
        tol_feas: opts.tol_feas,
        max_iter: opts.max_iter,
    };
    let res = ipm::solve_ipm(&reduced, &ipm_opts);

    let mut dual_y = vec![0.0; m_full];
    for (pos, &row) in kept.iter().enumerate() {
        dual_y[row] = res.y[pos] * neg;
    }
    let farkas = res.farkas_y.as_ref().map(|ray| {
        let mut y = vec![0.0; m_full];
        for (pos, &row) in kept.iter().enumerate() {
            y[row] = ray[pos];
        }
        FarkasCertificate { y }
    });

    let mut blocks = Vec::with_capacity(p.blocks.len());
    let mut dual_slacks = Vec::with_capacity(p.blocks.len());
    for (j, kind) in p.blocks.iter().enumerate() {
        match kind {
            BlockKind::Hermitian(_) => {
                blocks.push(
                    HermitianMatrix::from_real_embedding(&res.x[j])
                        .map_err(|e| SdpError::InvalidData(e.to_string()))?,
                );
                // The embedded slack is embed(S)/2 in the complex picture.
                dual_slacks.push(
                    HermitianMatrix::from_real_embedding(&res.s[j].scale(2.0 * neg))
                        .map_err(|e| SdpError::InvalidData(e.to_string()))?,
                );
            }
            BlockKind::RealSym(d) => {
                let to_h = |m: &DMatrix<f64>, scale: f64| {
                    let c = DMatrix::from_fn(*d, *d, |r, cidx| {
                        C64::new(0.5 * (m[(r, cidx)] + m[(cidx, r)]) * scale, 0.0)
                    });
                    HermitianMatrix::new(c).map_err(|e| SdpError::InvalidData(e.to_string()))
                };
                blocks.push(to_h(&res.x[j], 1.0)?);
                dual_slacks.push(to_h(&res.s[j], neg)?);
            }
        }
    }

    Ok(SdpSolution {
        status: res.status,
        primal_value: res.primal_obj * neg,
        dual_value: res.dual_obj * neg,
        blocks,
        free_values: res.free,
        dual_y,
        dual_slacks,
        gap: res.gap,
        residuals: Residuals {
            primal_eq: res.res_primal,
            dual_eq: res.res_dual,
            complementarity: res.gap / (1.0 + res.primal_obj.abs() + res.dual_obj.abs()),
        },
        iterations: res.iterations,
        farkas,
    })
}

/// Verifies a Farkas certificate against the (compiled) problem data.
pub fn verify_farkas_certificate(p: &SdpProblem, cert: &FarkasCertificate) -> bool {
    match p.compile() {
        Ok(compiled) => ipm::verify_farkas(&compiled, &cert.y),
        Err(_) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermitian::{pauli_i, pauli_x, pauli_z};

    fn diag(vals: &[f64]) -> HermitianMatrix {
        let n = vals.len();
        HermitianMatrix::new(DMatrix::from_fn(n, n, |i, j| {
            C64::new(if i == j { vals[i] } else { 0.0 }, 0.0)
        }))
        .unwrap()
    }

    #[test]
    fn min_trace_diagonal() {
        // min Tr(diag(1,2) X) s.t. Tr X = 1, X >= 0  ->  1 at X = diag(1,0).
        let mut p = SdpProblem::new(Sense::Minimize);
        let b = p.add_hermitian_block(2);
        p.set_objective_block(b, diag(&[1.0, 2.0]));
        p.add_constraint(vec![(b, pauli_i())], vec![], 1.0).unwrap();
        let sol = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.primal_value - 1.0).abs() < 1e-8);
        assert!((sol.blocks[0].get(0, 0).re - 1.0).abs() < 1e-6);
        assert!(sol.blocks[0].get(1, 1).re.abs() < 1e-6);
        assert!((sol.primal_value - sol.dual_value).abs() <= 1e-7 * (1.0 + sol.primal_value.abs()));
    }

    #[test]
    fn max_t_slack_block() {
        // max t s.t. I - t I >= 0 via a slack block S = I - t I.
        let mut p = SdpProblem::new(Sense::Maximize);
        let s = p.add_hermitian_block(2);
        let t = p.add_free();
        p.set_objective_free(t, 1.0);
        // S_ii + t = 1 and S_01 = 0.
        for i in 0..2 {
            let mut e = DMatrix::from_element(2, 2, C64::new(0.0, 0.0));
            e[(i, i)] = C64::new(1.0, 0.0);
            p.add_constraint(
                vec![(s, HermitianMatrix::new(e).unwrap())],
                vec![(t, 1.0)],
                1.0,
            )
            .unwrap();
        }
        p.add_constraint(vec![(s, pauli_x())], vec![], 0.0).unwrap();
        let sol = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.free_values[0] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn lhs_feasibility_of_product_assemblage() {
        // max mu s.t. sum_l D(a|x,l) s_l = (1/2)(I/2), s_l - mu I >= 0,
        // written with shifted blocks s'_l = s_l - mu I. The product
        // assemblage has an explicit interior model, so mu* > 0.
        let mut p = SdpProblem::new(Sense::Maximize);
        let blocks: Vec<BlockId> = (0..4).map(|_| p.add_hermitian_block(2)).collect();
        let mu = p.add_free();
        p.set_objective_free(mu, 1.0);
        let target = pauli_i().scale(0.25);
        let basis = [
            diag(&[1.0, 0.0]),
            diag(&[0.0, 1.0]),
            pauli_x().scale(1.0 / 2.0_f64.sqrt()),
        ];
        for a in 0..2usize {
            for x in 0..2usize {
                for bmat in &basis {
                    let mut terms = Vec::new();
                    let mut hits = 0;
                    for l in 0..4usize {
                        let resp = [(l >> 1) & 1, l & 1];
                        if resp[x] == a {
                            terms.push((blocks[l], bmat.clone()));
                            hits += 1;
                        }
                    }
                    let mu_coef = hits as f64 * bmat.trace();
                    p.add_constraint(terms, vec![(mu, mu_coef)], target.inner(bmat))
                        .unwrap();
                }
            }
        }
        let sol = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!(sol.free_values[0] > 0.0, "mu* = {}", sol.free_values[0]);
    }

    #[test]
    fn detects_infeasible_trace() {
        // Tr X = -1 with X >= 0 is infeasible; y = -1 certifies it.
        let mut p = SdpProblem::new(Sense::Minimize);
        let b = p.add_hermitian_block(2);
        p.set_objective_block(b, pauli_i());
        p.add_constraint(vec![(b, pauli_i())], vec![], -1.0).unwrap();
        let sol = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
        let cert = sol.farkas.expect("certificate present");
        assert!(verify_farkas_certificate(&p, &cert));
    }

    #[test]
    fn detects_inconsistent_rows() {
        // Tr X = 1 and Tr X = 2 are inconsistent; caught in preprocessing.
        let mut p = SdpProblem::new(Sense::Minimize);
        let b = p.add_hermitian_block(2);
        p.set_objective_block(b, pauli_i());
        p.add_constraint(vec![(b, pauli_i())], vec![], 1.0).unwrap();
        p.add_constraint(vec![(b, pauli_i())], vec![], 2.0).unwrap();
        let sol = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
        let cert = sol.farkas.expect("certificate present");
        assert!(verify_farkas_certificate(&p, &cert));
    }

    #[test]
    fn redundant_rows_are_dropped() {
        let mut p = SdpProblem::new(Sense::Minimize);
        let b = p.add_hermitian_block(2);
        p.set_objective_block(b, diag(&[1.0, 2.0]));
        p.add_constraint(vec![(b, pauli_i())], vec![], 1.0).unwrap();
        // Same row again, consistent.
        p.add_constraint(vec![(b, pauli_i())], vec![], 1.0).unwrap();
        p.add_constraint(vec![(b, pauli_i().scale(2.0))], vec![], 2.0)
            .unwrap();
        let sol = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.primal_value - 1.0).abs() < 1e-8);
        // Exactly one of the redundant rows carries the multiplier.
        let active = sol.dual_y.iter().filter(|v| v.abs() > 1e-12).count();
        assert_eq!(active, 1);
    }

    #[test]
    fn scaling_invariance_of_argmin() {
        let mk = |alpha: f64| {
            let mut p = SdpProblem::new(Sense::Minimize);
            let b = p.add_hermitian_block(2);
            p.set_objective_block(
                b,
                diag(&[1.0, 3.0]).add(&pauli_x().scale(0.5)).scale(alpha),
            );
            p.add_constraint(vec![(b, pauli_i())], vec![], 1.0).unwrap();
            solve(&p, &SolverOptions::default()).unwrap()
        };
        let s1 = mk(1.0);
        let s2 = mk(7.5);
        assert!(s1.blocks[0].sub(&s2.blocks[0]).max_abs() < 1e-5);
        assert!((s2.primal_value - 7.5 * s1.primal_value).abs() < 1e-6 * (1.0 + 7.5));
    }

    #[test]
    fn complex_embedding_consistency() {
        // On real data, a Hermitian block and a real block give identical
        // results.
        let c = diag(&[1.0, -0.3]).add(&pauli_x().scale(0.4));
        let a1 = pauli_i();
        let a2 = pauli_z().add(&pauli_x().scale(0.2));
        let run = |real: bool| {
            let mut p = SdpProblem::new(Sense::Minimize);
            let b = if real {
                p.add_real_block(2)
            } else {
                p.add_hermitian_block(2)
            };
            p.set_objective_block(b, c.clone());
            p.add_constraint(vec![(b, a1.clone())], vec![], 1.0).unwrap();
            p.add_constraint(vec![(b, a2.clone())], vec![], 0.3).unwrap();
            solve(&p, &SolverOptions::default()).unwrap()
        };
        let sr = run(true);
        let sh = run(false);
        assert_eq!(sr.status, SdpStatus::Optimal);
        assert_eq!(sh.status, SdpStatus::Optimal);
        assert!((sr.primal_value - sh.primal_value).abs() < 1e-7);
        assert!(sr.blocks[0].sub(&sh.blocks[0]).max_abs() < 1e-6);
    }

    // Deterministic RNG for the randomized soundness tests.
    struct Lcg(u64);
    impl Lcg {
        fn next_f64(&mut self) -> f64 {
            self.0 = self
                .0
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((self.0 >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        }
        fn next_usize(&mut self, bound: usize) -> usize {
            (((self.next_f64() + 1.0) / 2.0) * bound as f64) as usize % bound
        }
    }

    fn random_herm(rng: &mut Lcg, n: usize, complex: bool) -> HermitianMatrix {
        let raw = DMatrix::from_fn(n, n, |_, _| {
            C64::new(rng.next_f64(), if complex { rng.next_f64() } else { 0.0 })
        });
        let adj = raw.adjoint();
        HermitianMatrix::new((raw + adj).scale(0.5)).unwrap()
    }

    fn random_pd(rng: &mut Lcg, n: usize, complex: bool) -> HermitianMatrix {
        let g = DMatrix::from_fn(n, n, |_, _| {
            C64::new(rng.next_f64(), if complex { rng.next_f64() } else { 0.0 })
        });
        let gram = (&g * g.adjoint()).scale(1.0 / n as f64)
            + DMatrix::<C64>::identity(n, n).scale(0.3);
        HermitianMatrix::new(gram).unwrap()
    }

    /// Builds a random strictly feasible problem. Both Slater conditions
    /// hold by construction: b = A(X0) for a strictly positive definite X0
    /// and C = S0 + sum_i y0_i A_i for a strictly positive definite S0, so
    /// the primal optimum lies in [b.y0, <C, X0>] by weak duality.
    fn random_instance(rng: &mut Lcg, seed_idx: usize) -> (SdpProblem, f64, f64) {
        let complex = seed_idx % 2 == 0;
        let nb = 1 + rng.next_usize(3);
        let with_free = seed_idx % 3 == 0;
        let mut p = SdpProblem::new(Sense::Minimize);
        let mut x0 = Vec::new();
        let mut s0 = Vec::new();
        let mut ids = Vec::new();
        for _ in 0..nb {
            let n = 2 + rng.next_usize(3);
            let id = if complex {
                p.add_hermitian_block(n)
            } else {
                p.add_real_block(n)
            };
            ids.push(id);
            x0.push(random_pd(rng, n, complex));
            s0.push(random_pd(rng, n, complex));
        }
        let t0 = if with_free { rng.next_f64() } else { 0.0 };
        let tf = if with_free { Some(p.add_free()) } else { None };
        let m = 1 + rng.next_usize(6);
        let mut y0 = Vec::new();
        let mut f_coefs = Vec::new();
        for _ in 0..m {
            let mut terms = Vec::new();
            let mut rhs = 0.0;
            for (bi, id) in ids.iter().enumerate() {
                let a = random_herm(rng, x0[bi].dim(), complex);
                rhs += a.inner(&x0[bi]);
                terms.push((*id, a));
            }
            let mut free = Vec::new();
            if let Some(t) = tf {
                let f = rng.next_f64();
                rhs += f * t0;
                free.push((t, f));
                f_coefs.push(f);
            }
            p.add_constraint(terms.clone(), free, rhs).unwrap();
            y0.push(rng.next_f64());
        }
        // C_j = S0_j + sum_i y0_i A_ij; c_f = F^T y0.
        for (bi, id) in ids.iter().enumerate() {
            let mut c = s0[bi].clone();
            for (i, con) in p.constraints.iter().enumerate() {
                for (j, a) in &con.terms {
                    if *j == id.0 {
                        c = c.add(&a.scale(y0[i]));
                    }
                }
            }
            p.set_objective_block(*id, c);
        }
        if let Some(t) = tf {
            let cf: f64 = f_coefs.iter().zip(&y0).map(|(f, y)| f * y).sum();
            p.set_objective_free(t, cf);
        }
        let upper: f64 = ids
            .iter()
            .enumerate()
            .map(|(bi, id)| p.obj_blocks[id.0].as_ref().unwrap().inner(&x0[bi]))
            .sum::<f64>()
            + tf.map(|t| p.obj_free[t.0] * t0).unwrap_or(0.0);
        let lower: f64 = p
            .constraints
            .iter()
            .zip(&y0)
            .map(|(con, y)| con.rhs * y)
            .sum();
        (p, lower, upper)
    }

    /// Independently certifies a claimed optimal solution in the complex
    /// picture: primal feasibility, PSD iterates, PSD dual slack recomputed
    /// from the multipliers, dual equality on free variables, and a small
    /// duality gap. By weak duality these checks pin the optimal value
    /// without trusting any solver internals.
    fn certify(p: &SdpProblem, sol: &SdpSolution, case: usize) {
        let tol = 1e-6;
        let mut pval: f64 = sol
            .blocks
            .iter()
            .enumerate()
            .map(|(j, x)| {
                p.obj_blocks[j]
                    .as_ref()
                    .map(|c| c.inner(x))
                    .unwrap_or(0.0)
            })
            .sum();
        pval += p
            .obj_free
            .iter()
            .zip(&sol.free_values)
            .map(|(c, t)| c * t)
            .sum::<f64>();
        let dval: f64 = p
            .constraints
            .iter()
            .zip(&sol.dual_y)
            .map(|(con, y)| con.rhs * y)
            .sum();
        for (i, con) in p.constraints.iter().enumerate() {
            let mut lhs: f64 = con
                .terms
                .iter()
                .map(|(j, a)| a.inner(&sol.blocks[*j]))
                .sum();
            lhs += con
                .free
                .iter()
                .map(|(k, f)| f * sol.free_values[*k])
                .sum::<f64>();
            assert!(
                (lhs - con.rhs).abs() <= tol * (1.0 + con.rhs.abs()),
                "case {case}: primal row {i} violated by {:.3e}",
                (lhs - con.rhs).abs()
            );
        }
        for (j, x) in sol.blocks.iter().enumerate() {
            let scale = 1.0 + x.max_abs();
            assert!(
                x.min_eigenvalue() >= -tol * scale,
                "case {case}: block {j} not PSD"
            );
            let mut z = p.obj_blocks[j]
                .clone()
                .unwrap_or_else(|| HermitianMatrix::zeros(x.dim()));
            for (i, con) in p.constraints.iter().enumerate() {
                for (jj, a) in &con.terms {
                    if *jj == j {
                        z = z.sub(&a.scale(sol.dual_y[i]));
                    }
                }
            }
            assert!(
                z.min_eigenvalue() >= -tol * (1.0 + z.max_abs()),
                "case {case}: dual slack {j} not PSD ({:.3e})",
                z.min_eigenvalue()
            );
        }
        let mut ft = vec![0.0; p.obj_free.len()];
        for (i, con) in p.constraints.iter().enumerate() {
            for (k, f) in &con.free {
                ft[*k] += f * sol.dual_y[i];
            }
        }
        for (k, cf) in p.obj_free.iter().enumerate() {
            assert!(
                (ft[k] - cf).abs() <= tol * (1.0 + cf.abs()),
                "case {case}: dual equality on free var {k}"
            );
        }
        assert!(
            (pval - dval).abs() <= tol * (1.0 + pval.abs() + dval.abs()),
            "case {case}: certified gap {:.3e}",
            (pval - dval).abs()
        );
        assert!(
            (pval - sol.primal_value).abs() <= tol * (1.0 + pval.abs()),
            "case {case}: reported primal value disagrees"
        );
    }

    #[test]
    fn random_soundness_suite() {
        let mut rng = Lcg(20240811);
        for case in 0..200 {
            let (p, lower, upper) = random_instance(&mut rng, case);
            let sol = solve(&p, &SolverOptions::default()).unwrap();
            assert_eq!(sol.status, SdpStatus::Optimal, "case {case}");
            let tol = 1e-6 * (1.0 + lower.abs() + upper.abs());
            assert!(
                sol.primal_value <= upper + tol && sol.dual_value >= lower - tol,
                "case {case}: value {} outside weak-duality bracket [{lower}, {upper}]",
                sol.primal_value
            );
            certify(&p, &sol, case);
        }
    }
}
