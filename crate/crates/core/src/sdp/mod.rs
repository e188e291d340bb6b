//! Dense SDP relaxation solver and the phase-1 feasibility test for `(F_kl)`.

mod ipm;
mod phase1;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HomogeneousQcqp, Sense};
use crate::symlin::{lambda_min, numerical_rank, SymMatrix};

pub use phase1::{phase1_fkl, Phase1Options, Phase1Outcome, Phase1Reason};

use ipm::{solve_conic, ConicProblem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdpOptions {
    pub max_iter: usize,
    pub tol_gap: f64,
    pub tol_feas: f64,
    pub tol_mu: f64,
    pub step_fraction: f64,
    pub rank_tol: f64,
}

impl Default for SdpOptions {
    fn default() -> Self {
        SdpOptions {
            max_iter: 200,
            tol_gap: 1e-8,
            tol_feas: 1e-8,
            tol_mu: 1e-9,
            step_fraction: 0.98,
            rank_tol: 1e-6,
        }
    }
}

impl SdpOptions {
    /// Tighter tolerances for rank-one extraction.
    pub fn tight() -> Self {
        SdpOptions { tol_gap: 1e-10, tol_feas: 1e-10, tol_mu: 1e-11, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
    NumericalTrouble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpRow {
    pub a: SymMatrix,
    pub b: f64,
    pub sense: Sense,
}

/// `min ⟨C, X⟩  s.t.  ⟨Aₚ, X⟩ ≤ bₚ (or = bₚ),  X ⪰ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpProblem {
    pub c: SymMatrix,
    pub rows: Vec<SdpRow>,
}

impl SdpProblem {
    pub fn new(c: SymMatrix, rows: Vec<SdpRow>) -> Result<Self> {
        let n = c.dim();
        for r in &rows {
            if r.a.dim() != n {
                return Err(Error::DimensionMismatch { expected: n, found: r.a.dim() });
            }
            if !r.b.is_finite() {
                return Err(Error::InvalidArgument("non-finite right-hand side".into()));
            }
        }
        Ok(SdpProblem { c, rows })
    }

    pub fn from_homogeneous(h: &HomogeneousQcqp) -> Self {
        SdpProblem {
            c: h.objective.clone(),
            rows: h
                .rows
                .iter()
                .map(|r| SdpRow { a: r.mat.clone(), b: r.rhs, sense: r.sense })
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.c.dim()
    }

    pub fn m(&self) -> usize {
        self.rows.len()
    }

    /// Largest relative row violation `max(0, ⟨Aₚ,X⟩ − bₚ) / (1 + |bₚ|)`.
    pub fn max_violation(&self, x: &SymMatrix) -> f64 {
        self.rows
            .iter()
            .map(|r| {
                let v = r.a.inner(x) - r.b;
                let v = match r.sense {
                    Sense::Le => v.max(0.0),
                    Sense::Eq => v.abs(),
                };
                v / (1.0 + r.b.abs())
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpSolution {
    pub x: SymMatrix,
    pub y: Vec<f64>,
    pub s: SymMatrix,
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub gap: f64,
    pub rank_x: usize,
    pub rank_s: usize,
    pub status: SdpStatus,
    pub iterations: usize,
    pub primal_infeas: f64,
    pub dual_infeas: f64,
}

pub fn solve(prob: &SdpProblem) -> Result<SdpSolution> {
    solve_with(prob, &SdpOptions::default())
}

/// Rows `(A, b)` and `(−A, −b)` that both appear as `≤` collapse to one
/// equality. Returns the reduced rows and, for each original row, its
/// reduced index and sign.
fn merge_complementary(rows: &[SdpRow]) -> (Vec<SdpRow>, Vec<(usize, f64)>) {
    let mut out: Vec<SdpRow> = Vec::new();
    let mut map = vec![(0usize, 1.0f64); rows.len()];
    let mut used = vec![false; rows.len()];
    for i in 0..rows.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        let idx = out.len();
        map[i] = (idx, 1.0);
        let mut row = rows[i].clone();
        if row.sense == Sense::Le {
            for j in (i + 1)..rows.len() {
                let r = &rows[j];
                if !used[j]
                    && r.sense == Sense::Le
                    && r.b == -row.b
                    && r.a.as_matrix() == &(-row.a.as_matrix())
                {
                    used[j] = true;
                    map[j] = (idx, -1.0);
                    row.sense = Sense::Eq;
                    break;
                }
            }
        }
        out.push(row);
    }
    (out, map)
}

pub fn solve_with(prob: &SdpProblem, opts: &SdpOptions) -> Result<SdpSolution> {
    if prob.rows.is_empty() {
        return solve_unconstrained(prob, opts);
    }
    let (rows, map) = merge_complementary(&prob.rows);
    let m = rows.len();
    let slack_rows: Vec<usize> = (0..m).filter(|&i| rows[i].sense == Sense::Le).collect();
    let l = slack_rows.len();
    let mut a_lp = DMatrix::zeros(m, l);
    for (k, &i) in slack_rows.iter().enumerate() {
        a_lp[(i, k)] = 1.0;
    }
    let conic = ConicProblem {
        c: prob.c.as_matrix().clone(),
        c_lp: DVector::zeros(l),
        a: rows.iter().map(|r| r.a.as_matrix().clone()).collect(),
        a_lp,
        b: DVector::from_iterator(m, rows.iter().map(|r| r.b)),
    };
    let sol = solve_conic(&conic, opts)?;

    // y = −w on the reduced rows; split merged equalities back by sign.
    let mut y = vec![0.0; prob.m()];
    for (i, &(idx, sign)) in map.iter().enumerate() {
        let yi = -sol.w[idx];
        y[i] = if rows[idx].sense == Sense::Eq && prob.rows[i].sense == Sense::Le {
            (sign * yi).max(0.0)
        } else {
            yi
        };
    }
    let x = SymMatrix::symmetric_part(&sol.x);
    let mut s = prob.c.clone();
    for (r, yp) in prob.rows.iter().zip(&y) {
        s = s.axpy(*yp, &r.a);
    }
    let primal_obj = prob.c.inner(&x);
    let dual_obj = -prob.rows.iter().zip(&y).map(|(r, yp)| r.b * yp).sum::<f64>();
    let gap = (primal_obj - dual_obj).abs() / (1.0 + primal_obj.abs());
    let rank_x = numerical_rank(&x, opts.rank_tol)?;
    let rank_s = numerical_rank(&s, opts.rank_tol)?;
    Ok(SdpSolution {
        x,
        y,
        s,
        primal_obj,
        dual_obj,
        gap,
        rank_x,
        rank_s,
        status: sol.status,
        iterations: sol.iterations,
        primal_infeas: sol.primal_infeas,
        dual_infeas: sol.dual_infeas,
    })
}

fn solve_unconstrained(prob: &SdpProblem, opts: &SdpOptions) -> Result<SdpSolution> {
    let n = prob.dim();
    let lmin = if n == 0 { 0.0 } else { lambda_min(&prob.c)? };
    let bounded = lmin >= -crate::symlin::PSD_TOL * prob.c.scale();
    let (primal_obj, status) =
        if bounded { (0.0, SdpStatus::Optimal) } else { (f64::NEG_INFINITY, SdpStatus::Unbounded) };
    Ok(SdpSolution {
        x: SymMatrix::zeros(n),
        y: vec![],
        s: prob.c.clone(),
        primal_obj,
        dual_obj: if bounded { 0.0 } else { f64::NEG_INFINITY },
        gap: 0.0,
        rank_x: 0,
        rank_s: numerical_rank(&prob.c, opts.rank_tol)?,
        status,
        iterations: 0,
        primal_infeas: 0.0,
        dual_infeas: 0.0,
    })
}

/// `max bᵀw  s.t.  base + Σ wⱼ Mⱼ ⪰ 0,  constᵢ + Σ coefᵢⱼ wⱼ ≥ 0`, `w` free.
#[derive(Debug, Clone)]
pub struct DualForm {
    base: SymMatrix,
    mats: Vec<SymMatrix>,
    obj: Vec<f64>,
    linear: Vec<(Vec<f64>, f64)>,
}

#[derive(Debug, Clone)]
pub struct DualFormSolution {
    pub w: Vec<f64>,
    pub value: f64,
    pub upper_bound: f64,
    pub status: SdpStatus,
}

impl DualForm {
    pub fn new(base: SymMatrix) -> Self {
        DualForm { base, mats: vec![], obj: vec![], linear: vec![] }
    }

    pub fn add_var(&mut self, mat: SymMatrix, obj_coef: f64) -> usize {
        self.mats.push(mat);
        self.obj.push(obj_coef);
        self.mats.len() - 1
    }

    /// Coefficients may be shorter than the variable count; missing ones are 0.
    pub fn add_linear(&mut self, coef: Vec<f64>, constant: f64) {
        self.linear.push((coef, constant));
    }

    pub fn maximize(&self, opts: &SdpOptions) -> Result<DualFormSolution> {
        let m = self.mats.len();
        let l = self.linear.len();
        for mat in &self.mats {
            if mat.dim() != self.base.dim() {
                return Err(Error::DimensionMismatch { expected: self.base.dim(), found: mat.dim() });
            }
        }
        let mut c_lp = DVector::zeros(l);
        let mut a_lp = DMatrix::zeros(m, l);
        for (i, (coef, constant)) in self.linear.iter().enumerate() {
            if coef.len() > m {
                return Err(Error::DimensionMismatch { expected: m, found: coef.len() });
            }
            let scale = coef.iter().fold(constant.abs(), |a, v| a.max(v.abs())).max(1.0);
            c_lp[i] = constant / scale;
            for (j, v) in coef.iter().enumerate() {
                a_lp[(j, i)] = -v / scale;
            }
        }
        let conic = ConicProblem {
            c: self.base.as_matrix().clone(),
            c_lp,
            a: self.mats.iter().map(|mm| -mm.as_matrix()).collect(),
            a_lp,
            b: DVector::from_column_slice(&self.obj),
        };
        let sol = solve_conic(&conic, opts)?;
        Ok(DualFormSolution {
            w: sol.w.iter().copied().collect(),
            value: sol.dual_obj,
            upper_bound: sol.primal_obj,
            status: sol.status,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symlin::psd_check;
    use proptest::prelude::*;

    fn row(a: SymMatrix, b: f64, sense: Sense) -> SdpRow {
        SdpRow { a, b, sense }
    }

    #[test]
    fn trace_bound_active() {
        let p = SdpProblem::new(
            SymMatrix::identity(2).neg(),
            vec![row(SymMatrix::identity(2), 1.0, Sense::Le)],
        )
        .unwrap();
        let s = solve(&p).unwrap();
        assert_eq!(s.status, SdpStatus::Optimal);
        assert!((s.primal_obj + 1.0).abs() < 1e-7);
        assert!((s.dual_obj + 1.0).abs() < 1e-7);
        assert!((s.y[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn trace_bound_inactive() {
        let p = SdpProblem::new(
            SymMatrix::identity(2),
            vec![row(SymMatrix::identity(2), 1.0, Sense::Le)],
        )
        .unwrap();
        let s = solve(&p).unwrap();
        assert_eq!(s.status, SdpStatus::Optimal);
        assert!(s.primal_obj.abs() < 1e-7);
        assert!(s.x.max_abs() < 1e-6);
    }

    #[test]
    fn homogenized_trs() {
        let q0 = SymMatrix::from_diagonal(&[0.0, 1.0, -1.0]);
        let q1 = SymMatrix::from_diagonal(&[-1.0, 1.0, 1.0]);
        let p = SdpProblem::new(
            q0,
            vec![row(q1, 0.0, Sense::Le), row(crate::model::e11(3), 1.0, Sense::Eq)],
        )
        .unwrap();
        let s = solve(&p).unwrap();
        assert_eq!(s.status, SdpStatus::Optimal);
        assert!((s.primal_obj + 1.0).abs() < 1e-6, "{}", s.primal_obj);
    }

    #[test]
    fn closed_form_without_rows() {
        let s = solve(&SdpProblem::new(SymMatrix::identity(2), vec![]).unwrap()).unwrap();
        assert_eq!(s.status, SdpStatus::Optimal);
        let s = solve(&SdpProblem::new(SymMatrix::identity(2).neg(), vec![]).unwrap()).unwrap();
        assert_eq!(s.status, SdpStatus::Unbounded);
    }

    #[test]
    fn infeasible_detected() {
        // tr X ≤ −1 with X ⪰ 0
        let p = SdpProblem::new(
            SymMatrix::identity(2),
            vec![row(SymMatrix::identity(2), -1.0, Sense::Le)],
        )
        .unwrap();
        let s = solve(&p).unwrap();
        assert_eq!(s.status, SdpStatus::Infeasible);
    }

    #[test]
    fn complementary_rows_merge() {
        let e = crate::model::e11(2);
        let rows = vec![row(e.clone(), 1.0, Sense::Le), row(e.neg(), -1.0, Sense::Le)];
        let (merged, map) = merge_complementary(&rows);
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].sense, Sense::Eq);
        assert_eq!(map, vec![(0, 1.0), (0, -1.0)]);
    }

    #[test]
    fn dual_form_max_min_eigen() {
        // max t s.t. diag(1,3) − tI ⪰ 0 → 1
        let mut f = DualForm::new(SymMatrix::from_diagonal(&[1.0, 3.0]));
        f.add_var(SymMatrix::identity(2).neg(), 1.0);
        let s = f.maximize(&SdpOptions::default()).unwrap();
        assert_eq!(s.status, SdpStatus::Optimal);
        assert!((s.w[0] - 1.0).abs() < 1e-6);
    }

    fn random_sym(n: usize, vals: &[f64]) -> SymMatrix {
        let mut k = 0;
        SymMatrix::from_fn(n, |_, _| {
            let v = vals[k % vals.len()];
            k += 1;
            v
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn optimal_solutions_satisfy_invariants(
            n in 2usize..5,
            c in proptest::collection::vec(-1.0f64..1.0, 15),
            a in proptest::collection::vec(-1.0f64..1.0, 15),
            scale in 0.1f64..10.0,
        ) {
            // trace ball keeps the problem bounded; X = 0 is a Slater point for the other row
            let cm = random_sym(n, &c);
            let am = random_sym(n, &a);
            let rows = vec![row(SymMatrix::identity(n), 1.0, Sense::Le), row(am.clone(), 1.0, Sense::Le)];
            let p = SdpProblem::new(cm.clone(), rows).unwrap();
            let s = solve(&p).unwrap();
            prop_assert_eq!(s.status, SdpStatus::Optimal);
            prop_assert!(s.gap <= 1e-7);
            prop_assert!(psd_check(&s.x, 1e-8).unwrap());
            prop_assert!(psd_check(&s.s, 1e-8).unwrap());
            prop_assert!(p.max_violation(&s.x) <= 1e-7);
            prop_assert!(s.y.iter().all(|v| *v >= -1e-9));
            prop_assert!(s.primal_obj >= s.dual_obj - 1e-6 * (1.0 + s.primal_obj.abs()));
            let xs = s.x.as_matrix() * s.s.as_matrix();
            let bound = 1e-7 * (1.0 + s.x.max_abs()) * (1.0 + s.s.max_abs());
            prop_assert!(xs.amax() <= bound, "{} vs {}", xs.amax(), bound);
            let xs_sym = SymMatrix::symmetric_part(&xs);
            let r = numerical_rank(&xs_sym, 1e-6).unwrap();
            prop_assert!(s.rank_x + s.rank_s <= n + r);

            // scaling invariance
            let scaled = SdpProblem::new(
                cm.scaled(scale),
                p.rows.iter().map(|r| row(r.a.scaled(scale), r.b * scale, r.sense)).collect(),
            ).unwrap();
            let t = solve(&scaled).unwrap();
            prop_assert_eq!(t.status, s.status);
            prop_assert!((t.primal_obj - scale * s.primal_obj).abs() <= 1e-6 * (1.0 + scale * s.primal_obj.abs()));
        }
    }
}
