//! Generalized trust-region subproblems through simultaneous
//! tridiagonalization of the homogenized pair.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exactness::{
    certify_homogeneous, extract_rank_one, solve_certified, CertifyOptions, ExactnessCertificate, RecoveryOptions,
    Verdict,
};
use crate::model::{dehomogenize, e11, homogenize_gtrs, HomogeneousQcqp, HomogeneousRow, Lift, QcqpInstance, Sense};
use crate::sdp::{solve_with, SdpProblem, SdpStatus};
use crate::simtridiag::{tridiagonalize_pair, tridiagonalize_seeded, TridiagonalizationResult, DEFAULT_SEED, TRIDIAG_TOL};
use crate::sparsity::ZeroRule;
use crate::symlin::SymMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtrsOptions {
    pub certify: CertifyOptions,
    pub recovery: RecoveryOptions,
    pub seed: u64,
}

impl Default for GtrsOptions {
    fn default() -> Self {
        GtrsOptions { certify: CertifyOptions::default(), recovery: RecoveryOptions::default(), seed: DEFAULT_SEED }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GtrsPath {
    /// Certified and solved in the tridiagonal coordinates.
    Transformed,
    /// The pencil needed a shift; `steps` shifted problems were solved.
    ShiftSequence { steps: usize },
    /// The transformed route failed and the homogenized problem was solved directly.
    Untransformed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtrsSolution {
    pub x: DVector<f64>,
    /// Objective of the instance at `x`.
    pub value: f64,
    /// Optimum of the relaxation of the homogenized problem.
    pub sdp_value: f64,
    pub violation: f64,
    pub certificate: ExactnessCertificate,
    pub transform: TridiagonalizationResult,
    pub path: GtrsPath,
}

/// `min yᵀR⁰y  s.t.  yᵀR¹y (≤|=) 0,  yᵀE₁₁y = 1`.
pub fn transformed_problem(h: &HomogeneousQcqp, t: &TridiagonalizationResult) -> Result<HomogeneousQcqp> {
    if !t.first_row_unit {
        return Err(Error::InvalidArgument("transform does not fix the first coordinate".into()));
    }
    Ok(HomogeneousQcqp {
        objective: t.r_k.clone(),
        rows: vec![
            HomogeneousRow { mat: t.r_m.clone(), rhs: 0.0, sense: h.rows[0].sense },
            HomogeneousRow { mat: e11(h.dim()), rhs: 1.0, sense: Sense::Eq },
        ],
        lift: Lift::Gtrs,
    })
}

fn relaxation_value(h: &HomogeneousQcqp, opts: &RecoveryOptions) -> Result<f64> {
    let sol = solve_with(&SdpProblem::from_homogeneous(h), &opts.sdp)?;
    match sol.status {
        SdpStatus::Optimal => Ok(sol.primal_obj),
        s => Err(Error::SolverFailure(format!("relaxation ended with status {s:?}"))),
    }
}

struct Attempt {
    x: DVector<f64>,
    cert: ExactnessCertificate,
}

/// Certifies and solves in tridiagonal coordinates, mapping `z = U·ŷ` back.
fn solve_transformed(h: &HomogeneousQcqp, t: &TridiagonalizationResult, opts: &GtrsOptions) -> Result<Attempt> {
    let ht = transformed_problem(h, t)?;
    let scale = ht.objective.scale().max(ht.rows[0].mat.scale());
    let copts = CertifyOptions { zero_rule: ZeroRule::Numeric(TRIDIAG_TOL * scale), ..opts.certify };
    let cert = certify_homogeneous(&ht, &copts)?;
    if cert.verdict != Verdict::Exact {
        return Err(Error::NotCertified);
    }
    match solve_certified(&ht, &cert, &opts.recovery) {
        Ok(sol) => {
            let z = &t.u * &sol.z;
            Ok(Attempt { x: dehomogenize(&z)?, cert })
        }
        // A shifted pencil can give a badly scaled U; the congruent problem in
        // the original coordinates has the same relaxation.
        Err(_) if t.epsilon > 0.0 => {
            let shifted = HomogeneousQcqp { objective: h.objective.axpy(t.epsilon, &SymMatrix::identity(h.dim())), ..h.clone() };
            let sol = solve_with(&SdpProblem::from_homogeneous(&shifted), &opts.recovery.sdp)?;
            let r = extract_rank_one(&sol.x)?;
            if r.ratio > opts.recovery.rank1_tol {
                return Err(Error::RecoveryFailed(format!("shifted relaxation has λ₂/λ₁ = {:.3e}", r.ratio)));
            }
            Ok(Attempt { x: dehomogenize(&r.z)?, cert })
        }
        Err(e) => Err(e),
    }
}

fn gap(inst: &QcqpInstance, x: &DVector<f64>, bound: f64) -> f64 {
    (inst.objective_value(x) - bound).abs() / (1.0 + bound.abs())
}

/// Homogenize, tridiagonalize, certify, solve and map back.
pub fn solve_gtrs(inst: &QcqpInstance) -> Result<GtrsSolution> {
    solve_gtrs_with(inst, &GtrsOptions::default())
}

pub fn solve_gtrs_with(inst: &QcqpInstance, opts: &GtrsOptions) -> Result<GtrsSolution> {
    let h = homogenize_gtrs(inst)?;
    let k = &h.objective;
    let m = &h.rows[0].mat;
    let transform = tridiagonalize_seeded(k, m, opts.seed)?;
    let bound = relaxation_value(&h, &opts.recovery)?;
    let accept = |x: &DVector<f64>| {
        inst.max_violation(x) <= opts.recovery.feas_tol && gap(inst, x, bound) <= opts.recovery.gap_tol
    };
    let done = |x: DVector<f64>, cert: ExactnessCertificate, transform: TridiagonalizationResult, path: GtrsPath| {
        GtrsSolution {
            value: inst.objective_value(&x),
            violation: inst.max_violation(&x),
            x,
            sdp_value: bound,
            certificate: cert,
            transform,
            path,
        }
    };

    if transform.epsilon == 0.0 {
        if let Ok(a) = solve_transformed(&h, &transform, opts) {
            if accept(&a.x) {
                return Ok(done(a.x, a.cert, transform, GtrsPath::Transformed));
            }
        }
    } else {
        let n = h.dim();
        let mut prev: Option<DVector<f64>> = None;
        for step in 0..=opts.recovery.eps_steps {
            let eps = transform.epsilon * 0.5f64.powi(step as i32);
            let shifted = k.axpy(eps, &SymMatrix::identity(n));
            let Ok(mut t) = tridiagonalize_pair(&shifted, m, transform.gamma) else {
                continue;
            };
            t.epsilon = eps;
            let Ok(a) = solve_transformed(&h, &t, opts) else {
                prev = None;
                continue;
            };
            let settled = prev.as_ref().is_some_and(|p| (p - &a.x).amax() <= 1e-6);
            if accept(&a.x) || (settled && inst.max_violation(&a.x) <= opts.recovery.feas_tol) {
                return Ok(done(a.x, a.cert, t, GtrsPath::ShiftSequence { steps: step + 1 }));
            }
            prev = Some(a.x);
        }
    }

    // Direct route on the homogenized problem.
    let cert = certify_homogeneous(&h, &opts.certify)?;
    let z = if cert.verdict == Verdict::Exact {
        solve_certified(&h, &cert, &opts.recovery)?.z
    } else {
        let sol = solve_with(&SdpProblem::from_homogeneous(&h), &opts.recovery.sdp)?;
        let r = extract_rank_one(&sol.x)?;
        if r.ratio > opts.recovery.rank1_tol {
            return Err(Error::RecoveryFailed(format!("relaxation solution has λ₂/λ₁ = {:.3e}", r.ratio)));
        }
        r.z
    };
    let x = dehomogenize(&z)?;
    if !accept(&x) {
        return Err(Error::RecoveryFailed(format!(
            "violation {:.3e}, gap {:.3e}",
            inst.max_violation(&x),
            gap(inst, &x, bound)
        )));
    }
    Ok(done(x, cert, transform, GtrsPath::Untransformed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devtools::generate::random_trs;
    use crate::devtools::oracle::brute_force_qcqp;
    use crate::exactness::{certify_sign_definite, Method};
    use crate::model::{QcqpConstraint, QuadraticForm};
    use crate::sparsity::{analyze_forest, build_graph_homogeneous};
    use proptest::prelude::*;

    fn ball(n: usize, q0: SymMatrix, lin: DVector<f64>) -> QcqpInstance {
        QcqpInstance::new(
            QuadraticForm::new(q0, lin).unwrap(),
            vec![QcqpConstraint::le(QuadraticForm::pure(SymMatrix::identity(n)), 1.0)],
        )
        .unwrap()
    }

    #[test]
    fn trs_examples() {
        let s = solve_gtrs(&ball(2, SymMatrix::from_diagonal(&[1.0, -1.0]), DVector::zeros(2))).unwrap();
        assert!((s.value + 1.0).abs() < 1e-6);
        assert!(s.x[0].abs() < 1e-3 && (s.x[1].abs() - 1.0).abs() < 1e-6);

        let s = solve_gtrs(&ball(3, SymMatrix::identity(3).neg(), DVector::zeros(3))).unwrap();
        assert!((s.value + 1.0).abs() < 1e-6);
        assert!((s.x.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn pipeline_certifies_through_sign_definiteness() {
        let inst = random_trs(5, 3).unwrap();
        let s = solve_gtrs(&inst).unwrap();
        assert_eq!(s.path, GtrsPath::Transformed);
        assert_eq!(s.certificate.method, Some(Method::SignDefinite));
        assert!(s.transform.superdiagonal_sign_definite());
        assert!(s.certificate.assumptions.b == crate::exactness::CheckStatus::Verified);
    }

    #[test]
    fn first_coordinate_row_has_no_offdiagonal_entries() {
        let inst = random_trs(4, 8).unwrap();
        let h = homogenize_gtrs(&inst).unwrap();
        let t = tridiagonalize_seeded(&h.objective, &h.rows[0].mat, 1).unwrap();
        let ht = transformed_problem(&h, &t).unwrap();
        let mut without = ht.clone();
        without.rows.pop();
        let rule = ZeroRule::Numeric(1e-10);
        let fa = analyze_forest(&build_graph_homogeneous(&ht, rule));
        let with_e11 = certify_sign_definite(&ht, &fa, rule).unwrap();
        let without_e11 = certify_sign_definite(&without, &fa, rule).unwrap();
        assert_eq!(with_e11.per_edge, without_e11.per_edge);
    }

    #[test]
    fn transform_preserves_objective() {
        let inst = random_trs(4, 21).unwrap();
        let h = homogenize_gtrs(&inst).unwrap();
        let t = tridiagonalize_seeded(&h.objective, &h.rows[0].mat, 5).unwrap();
        let y = DVector::from_fn(5, |i, _| 1.0 / (1.0 + i as f64));
        let z = &t.u * &y;
        let a = t.r_k.quad(&y);
        let b = h.objective.quad(&z);
        assert!((a - b).abs() <= 1e-8 * (1.0 + b.abs()));
    }

    #[test]
    fn identically_singular_pencil_uses_shift() {
        // min x₁² s.t. x₁² ≤ 1: the lifted pencil is singular for every γ.
        let inst = QcqpInstance::new(
            QuadraticForm::pure(SymMatrix::from_diagonal(&[1.0, 0.0])),
            vec![QcqpConstraint::le(QuadraticForm::pure(SymMatrix::from_diagonal(&[1.0, 0.0])), 1.0)],
        )
        .unwrap();
        let s = solve_gtrs(&inst).unwrap();
        assert!(s.transform.epsilon > 0.0);
        assert!(matches!(s.path, GtrsPath::ShiftSequence { .. }));
        assert!(s.value.abs() < 1e-6);
        assert!(s.certificate.conditional);
    }

    #[test]
    fn wrong_arity() {
        let inst = QcqpInstance::new(QuadraticForm::pure(SymMatrix::identity(2)), vec![]).unwrap();
        assert_eq!(solve_gtrs(&inst).map(|_| ()), Err(Error::WrongArity { found: 0 }));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn trs_matches_oracle(seed in 0u64..10_000, n in 2usize..5) {
            let inst = random_trs(n, seed).unwrap();
            let s = solve_gtrs(&inst).unwrap();
            let o = brute_force_qcqp(&inst, 300).unwrap();
            prop_assert!(s.violation <= 1e-6);
            prop_assert!((s.value - o.value).abs() <= 1e-5 * (1.0 + o.value.abs()), "{} vs {}", s.value, o.value);
            prop_assert!(s.sdp_value <= o.value + 1e-6);
        }
    }
}
