//! Exactness certificates for forest-structured QCQPs and rank-one recovery
//! from the SDP relaxation.
//!
//! Edges are 0-based pairs `(k, l)` with `k < l` in the coordinates of the
//! homogeneous problem.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{homogeneous_form, verify_dominance, AssumptionB, HomogeneousQcqp, Lift, QcqpInstance, Sense};
use crate::sdp::{phase1_fkl, solve_with, Phase1Options, Phase1Outcome, Phase1Reason, SdpOptions, SdpProblem, SdpStatus};
use crate::sparsity::{
    analyze_forest, build_graph_homogeneous, connecting_edges, perturbation_matrix, ForestAnalysis, ZeroRule,
};
use crate::symlin::{eig_sym, lambda_min, SymMatrix, PSD_TOL};

pub const RANK1_TOL: f64 = 1e-6;
pub const RECOVERY_FEAS_TOL: f64 = 1e-6;
pub const RECOVERY_GAP_TOL: f64 = 1e-6;
pub const EPS0: f64 = 1e-2;
pub const EPS_STEPS: usize = 10;
pub const PERTURBATION_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Exact,
    NotCertified,
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    SignDefinite,
    OneEquality,
    FklSystems,
    FklSystemsWithPerturbation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum EdgeEvidence {
    SignDefiniteAt { nonnegative: bool },
    NotSignDefinite { min: f64, max: f64 },
    EntryForcedNonzero { margin: f64 },
    PencilNotPsd { lambda_min: f64 },
    PencilPsd { lambda_min: f64 },
    Phase1Infeasible { margin: f64, y_cap: f64, reason: Phase1Reason },
    /// Entry of the perturbed objective at a connecting edge; every other
    /// matrix vanishes there.
    ConnectingEdge { epsilon: f64 },
    /// Perturbed objective entry at an edge where `[Q⁰]_kl = 0` and every
    /// other matrix has the same sign, so the entry cannot vanish.
    PerturbedSignForced { entry: f64 },
    Feasible { witness: Vec<f64> },
    Inconclusive { t_upper: f64, t_lower: f64 },
}

impl EdgeEvidence {
    pub fn is_infeasibility(&self) -> bool {
        match self {
            EdgeEvidence::SignDefiniteAt { .. }
            | EdgeEvidence::EntryForcedNonzero { .. }
            | EdgeEvidence::PencilNotPsd { .. }
            | EdgeEvidence::Phase1Infeasible { .. } => true,
            EdgeEvidence::ConnectingEdge { epsilon } => *epsilon > 0.0,
            EdgeEvidence::PerturbedSignForced { entry } => *entry != 0.0,
            _ => false,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            EdgeEvidence::SignDefiniteAt { .. } => "SignDefiniteAt",
            EdgeEvidence::NotSignDefinite { .. } => "NotSignDefinite",
            EdgeEvidence::EntryForcedNonzero { .. } => "EntryForcedNonzero",
            EdgeEvidence::PencilNotPsd { .. } => "PencilNotPsd",
            EdgeEvidence::PencilPsd { .. } => "PencilPsd",
            EdgeEvidence::Phase1Infeasible { .. } => "Phase1Infeasible",
            EdgeEvidence::ConnectingEdge { .. } => "ConnectingEdge",
            EdgeEvidence::PerturbedSignForced { .. } => "PerturbedSignForced",
            EdgeEvidence::Feasible { .. } => "Feasible",
            EdgeEvidence::Inconclusive { .. } => "Inconclusive",
        }
    }

    /// Scalar summary for tables: margin, eigenvalue or bound, when one exists.
    pub fn margin(&self) -> Option<f64> {
        match self {
            EdgeEvidence::EntryForcedNonzero { margin } | EdgeEvidence::Phase1Infeasible { margin, .. } => {
                Some(*margin)
            }
            EdgeEvidence::PencilNotPsd { lambda_min } | EdgeEvidence::PencilPsd { lambda_min } => Some(*lambda_min),
            EdgeEvidence::ConnectingEdge { epsilon } => Some(*epsilon),
            EdgeEvidence::PerturbedSignForced { entry } => Some(*entry),
            EdgeEvidence::Inconclusive { t_lower, .. } => Some(*t_lower),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub edge: (usize, usize),
    pub evidence: EdgeEvidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckStatus {
    Verified,
    NotVerified,
    Unchecked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionsReport {
    /// A feasible point is known (the origin, or a lifted origin).
    pub a: CheckStatus,
    pub b: CheckStatus,
    pub b_detail: Option<AssumptionB>,
    /// Strict feasibility of the relaxation, from the origin being strictly
    /// feasible for inequality-only data.
    pub c: CheckStatus,
}

impl AssumptionsReport {
    pub fn unchecked() -> Self {
        AssumptionsReport { a: CheckStatus::Unchecked, b: CheckStatus::Unchecked, b_detail: None, c: CheckStatus::Unchecked }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactnessCertificate {
    pub verdict: Verdict,
    pub method: Option<Method>,
    pub per_edge: Vec<EdgeRecord>,
    pub assumptions: AssumptionsReport,
    pub connected: bool,
    pub d_used: Vec<(usize, usize)>,
    /// Set when dominance could not be verified.
    pub conditional: bool,
    pub y_cap: f64,
    pub forest: ForestAnalysis,
}

/// Outcome of a single certifier.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialCertificate {
    pub passed: bool,
    pub per_edge: Vec<EdgeRecord>,
    pub d_used: Vec<(usize, usize)>,
    pub perturbed: bool,
}

impl PartialCertificate {
    fn from_records(per_edge: Vec<EdgeRecord>, d_used: Vec<(usize, usize)>, perturbed: bool) -> Self {
        let passed = per_edge.iter().all(|r| r.evidence.is_infeasibility());
        PartialCertificate { passed, per_edge, d_used, perturbed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyOptions {
    pub zero_rule: ZeroRule,
    pub psd_tol: f64,
    pub phase1: Phase1Options,
    pub check_assumptions: bool,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            zero_rule: ZeroRule::Exact,
            psd_tol: PSD_TOL,
            phase1: Phase1Options::default(),
            check_assumptions: true,
        }
    }
}

fn threshold(rule: ZeroRule) -> f64 {
    match rule {
        ZeroRule::Exact => 0.0,
        ZeroRule::Numeric(t) => t,
    }
}

/// Objective followed by the expanded row matrices.
pub fn fkl_family(h: &HomogeneousQcqp) -> Vec<SymMatrix> {
    std::iter::once(h.objective.clone())
        .chain(h.expanded_rows().into_iter().map(|(m, _)| m))
        .collect()
}

fn require_forest(fa: &ForestAnalysis) -> Result<()> {
    if fa.is_forest {
        Ok(())
    } else {
        Err(Error::NotAForest)
    }
}

/// Checks that `{[Q⁰]_kl, [Q¹]_kl, …}` is one-signed at every edge, with
/// equalities contributing both signs.
pub fn certify_sign_definite(h: &HomogeneousQcqp, fa: &ForestAnalysis, rule: ZeroRule) -> Result<PartialCertificate> {
    require_forest(fa)?;
    let tol = threshold(rule);
    let family = fkl_family(h);
    let records = fa
        .offdiag_index_set
        .iter()
        .map(|&(k, l)| {
            let vals: Vec<f64> = family
                .iter()
                .map(|m| m.get(k, l))
                .map(|v| if v.abs() <= tol { 0.0 } else { v })
                .collect();
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let evidence = if min >= 0.0 {
                EdgeEvidence::SignDefiniteAt { nonnegative: true }
            } else if max <= 0.0 {
                EdgeEvidence::SignDefiniteAt { nonnegative: false }
            } else {
                EdgeEvidence::NotSignDefinite { min, max }
            };
            EdgeRecord { edge: (k, l), evidence }
        })
        .collect();
    Ok(PartialCertificate::from_records(records, Vec::new(), false))
}

/// Single-equality test: `[Q¹]_kl = 0` forces the entry nonzero, otherwise
/// `Q⁰ − ([Q⁰]_kl/[Q¹]_kl) Q¹` must fail to be PSD.
pub fn certify_one_equality(
    h: &HomogeneousQcqp,
    fa: &ForestAnalysis,
    rule: ZeroRule,
    psd_tol: f64,
) -> Result<PartialCertificate> {
    require_forest(fa)?;
    if !h.is_single_equality() {
        return Err(Error::WrongShape("expected exactly one equality constraint".into()));
    }
    let q0 = &h.objective;
    let q1 = &h.rows[0].mat;
    let mut records = Vec::with_capacity(fa.offdiag_index_set.len());
    for &(k, l) in &fa.offdiag_index_set {
        let (c, a) = (q0.get(k, l), q1.get(k, l));
        let evidence = if !rule.is_nonzero(a) {
            if rule.is_nonzero(c) {
                EdgeEvidence::EntryForcedNonzero { margin: c.abs() }
            } else {
                EdgeEvidence::Inconclusive { t_upper: 0.0, t_lower: 0.0 }
            }
        } else {
            let lam = lambda_min(&q0.axpy(-c / a, q1))?;
            if lam < -psd_tol {
                EdgeEvidence::PencilNotPsd { lambda_min: lam }
            } else {
                EdgeEvidence::PencilPsd { lambda_min: lam }
            }
        };
        records.push(EdgeRecord { edge: (k, l), evidence });
    }
    Ok(PartialCertificate::from_records(records, Vec::new(), false))
}

fn phase1_evidence(outcome: Phase1Outcome, y_cap: f64) -> EdgeEvidence {
    match outcome {
        Phase1Outcome::Infeasible { margin, reason } => EdgeEvidence::Phase1Infeasible { margin, y_cap, reason },
        Phase1Outcome::Feasible { y, .. } => EdgeEvidence::Feasible { witness: y },
        Phase1Outcome::Inconclusive { t_upper, t_lower } => EdgeEvidence::Inconclusive { t_upper, t_lower },
    }
}

/// Runs `phase1_fkl` on every edge, spread over the available cores.
fn run_phase1(family: &[SymMatrix], edges: &[(usize, usize)], opts: &Phase1Options) -> Result<Vec<EdgeEvidence>> {
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(edges.len().max(1));
    let chunk = edges.len().div_ceil(workers).max(1);
    let results: Vec<Result<Vec<EdgeEvidence>>> = std::thread::scope(|s| {
        let handles: Vec<_> = edges
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|&(k, l)| phase1_fkl(family, k, l, opts).map(|o| phase1_evidence(o, opts.y_cap)))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|hd| hd.join().unwrap_or_else(|_| Err(Error::SolverFailure("phase-1 worker panicked".into()))))
            .collect()
    });
    let mut out = Vec::with_capacity(edges.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Objective perturbation `P` used by the limit argument: `E_kl + E_lk` on
/// the connecting edges `D`, and `±(E_kl + E_lk)` on edges where `[Q⁰]_kl = 0`
/// and the remaining entries share a sign (with that sign).
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub matrix: SymMatrix,
    pub connecting: Vec<(usize, usize)>,
    pub sign_edges: Vec<(usize, usize)>,
}

impl Perturbation {
    pub fn is_empty(&self) -> bool {
        self.connecting.is_empty() && self.sign_edges.is_empty()
    }
}

pub fn design_perturbation(h: &HomogeneousQcqp, fa: &ForestAnalysis) -> Result<Perturbation> {
    let connecting = connecting_edges(fa)?;
    let mut matrix = perturbation_matrix(&connecting, h.dim())?;
    let family = fkl_family(h);
    let mut sign_edges = Vec::new();
    for &(k, l) in &fa.offdiag_index_set {
        if h.objective.get(k, l) != 0.0 {
            continue;
        }
        let vals: Vec<f64> = family[1..].iter().map(|m| m.get(k, l)).collect();
        let sign = if vals.iter().all(|v| *v >= 0.0) && vals.iter().any(|v| *v > 0.0) {
            1.0
        } else if vals.iter().all(|v| *v <= 0.0) && vals.iter().any(|v| *v < 0.0) {
            -1.0
        } else {
            continue;
        };
        matrix.set(k, l, sign);
        sign_edges.push((k, l));
    }
    Ok(Perturbation { matrix, connecting, sign_edges })
}

/// Infeasibility of every `(F_kl)` for the objective `Q⁰ + εP` with small
/// `ε > 0`. Connecting edges and sign-forced edges are decided by the
/// perturbed entry; every other edge is tested on the unperturbed data.
pub fn certify_fkl(h: &HomogeneousQcqp, fa: &ForestAnalysis, opts: &Phase1Options) -> Result<PartialCertificate> {
    require_forest(fa)?;
    let pert = design_perturbation(h, fa)?;
    let perturbed = h.with_perturbed_objective(EPS0, &pert.matrix);
    let family = fkl_family(h);
    let tested: Vec<(usize, usize)> =
        fa.offdiag_index_set.iter().copied().filter(|e| !pert.sign_edges.contains(e)).collect();
    let mut evidence = run_phase1(&family, &tested, opts)?.into_iter();
    let mut records: Vec<EdgeRecord> = fa
        .offdiag_index_set
        .iter()
        .map(|&(k, l)| {
            let evidence = if pert.sign_edges.contains(&(k, l)) {
                EdgeEvidence::PerturbedSignForced { entry: perturbed.objective.get(k, l) }
            } else {
                evidence.next().expect("one outcome per tested edge")
            };
            EdgeRecord { edge: (k, l), evidence }
        })
        .collect();
    for &(k, l) in &pert.connecting {
        let others_vanish = h.matrices().all(|m| m.get(k, l) == 0.0);
        let entry = perturbed.objective.get(k, l);
        let epsilon = if others_vanish { entry } else { 0.0 };
        records.push(EdgeRecord { edge: (k, l), evidence: EdgeEvidence::ConnectingEdge { epsilon } });
    }
    let used = !pert.is_empty();
    Ok(PartialCertificate::from_records(records, pert.connecting, used))
}

/// Quadratic blocks of the original constraints, equalities expanded.
fn original_constraint_quads(h: &HomogeneousQcqp) -> Vec<SymMatrix> {
    let dim = h.dim();
    let rows: &[_] = match h.lift {
        Lift::Direct => &h.rows,
        Lift::Standard => &h.rows[..h.rows.len().saturating_sub(2)],
        Lift::Gtrs => &h.rows[..h.rows.len().saturating_sub(1)],
    };
    let mut out = Vec::new();
    for r in rows {
        let q = match h.lift {
            Lift::Direct => r.mat.clone(),
            _ => SymMatrix::from_fn(dim - 1, |i, j| r.mat.get(i + 1, j + 1)),
        };
        if r.sense == Sense::Eq {
            out.push(q.neg());
        }
        out.push(q);
    }
    out
}

fn origin(h: &HomogeneousQcqp) -> DVector<f64> {
    let n = match h.lift {
        Lift::Direct => h.dim(),
        _ => h.dim() - 1,
    };
    h.lift_point(&DVector::zeros(n))
}

/// Cheap checks of the standing assumptions.
pub fn check_assumptions(h: &HomogeneousQcqp, sdp: &SdpOptions) -> Result<AssumptionsReport> {
    let z0 = origin(h);
    let a = if h.max_violation(&z0) <= 1e-12 { CheckStatus::Verified } else { CheckStatus::Unchecked };
    let quads = original_constraint_quads(h);
    let b_detail = verify_dominance(&quads, sdp)?;
    let b = if b_detail.is_verified() { CheckStatus::Verified } else { CheckStatus::NotVerified };
    let original_rows: Vec<_> = match h.lift {
        Lift::Direct => h.rows.iter().map(|r| (r.sense, r.rhs)).collect(),
        Lift::Standard => h.rows[..h.rows.len() - 2].iter().map(|r| (r.sense, r.rhs)).collect(),
        Lift::Gtrs => h.rows[..h.rows.len() - 1].iter().map(|r| (r.sense, -r.mat.get(0, 0))).collect(),
    };
    let c = if original_rows.iter().all(|&(s, b)| s == Sense::Le && b > 0.0) {
        CheckStatus::Verified
    } else {
        CheckStatus::Unchecked
    };
    Ok(AssumptionsReport { a, b, b_detail: Some(b_detail), c })
}

/// Certifies an instance through its homogeneous form with default options.
pub fn certify(inst: &QcqpInstance) -> Result<ExactnessCertificate> {
    certify_homogeneous(&homogeneous_form(inst), &CertifyOptions::default())
}

/// Tries the certifiers in order sign-definite, single equality, `(F_kl)`.
pub fn certify_homogeneous(h: &HomogeneousQcqp, opts: &CertifyOptions) -> Result<ExactnessCertificate> {
    certify_inner(h, opts, true)
}

/// Certifies through the `(F_kl)` systems only.
pub fn certify_by_fkl(h: &HomogeneousQcqp, opts: &CertifyOptions) -> Result<ExactnessCertificate> {
    certify_inner(h, opts, false)
}

fn certify_inner(h: &HomogeneousQcqp, opts: &CertifyOptions, cheap_first: bool) -> Result<ExactnessCertificate> {
    let fa = analyze_forest(&build_graph_homogeneous(h, opts.zero_rule));
    let assumptions = if opts.check_assumptions {
        check_assumptions(h, &opts.phase1.sdp)?
    } else {
        AssumptionsReport::unchecked()
    };
    let conditional = assumptions.b != CheckStatus::Verified;
    let mut cert = ExactnessCertificate {
        verdict: Verdict::NotApplicable,
        method: None,
        per_edge: Vec::new(),
        assumptions,
        connected: fa.is_connected(),
        d_used: Vec::new(),
        conditional,
        y_cap: opts.phase1.y_cap,
        forest: fa.clone(),
    };
    if !fa.is_forest {
        return Ok(cert);
    }
    cert.d_used = connecting_edges(&fa)?;

    if cheap_first {
        let sd = certify_sign_definite(h, &fa, opts.zero_rule)?;
        if sd.passed {
            cert.verdict = Verdict::Exact;
            cert.method = Some(Method::SignDefinite);
            cert.per_edge = sd.per_edge;
            return Ok(cert);
        }
        if h.is_single_equality() {
            let oe = certify_one_equality(h, &fa, opts.zero_rule, opts.psd_tol)?;
            if oe.passed {
                cert.verdict = Verdict::Exact;
                cert.method = Some(Method::OneEquality);
                cert.per_edge = oe.per_edge;
                return Ok(cert);
            }
        }
    }
    let fk = certify_fkl(h, &fa, &opts.phase1)?;
    cert.verdict = if fk.passed { Verdict::Exact } else { Verdict::NotCertified };
    cert.method = Some(if fk.perturbed { Method::FklSystemsWithPerturbation } else { Method::FklSystems });
    cert.per_edge = fk.per_edge;
    Ok(cert)
}

/// Symmetric Gaussian matrix supported on the diagonal and the forest edges.
pub fn random_pattern_perturbation(fa: &ForestAnalysis, seed: u64) -> SymMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = SymMatrix::zeros(fa.n);
    for i in 0..fa.n {
        p.set(i, i, StandardNormal.sample(&mut rng));
    }
    for &(k, l) in &fa.offdiag_index_set {
        p.set(k, l, StandardNormal.sample(&mut rng));
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryOptions {
    pub rank1_tol: f64,
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub eps0: f64,
    pub eps_steps: usize,
    pub seed: u64,
    pub sdp: SdpOptions,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        RecoveryOptions {
            rank1_tol: RANK1_TOL,
            feas_tol: RECOVERY_FEAS_TOL,
            gap_tol: RECOVERY_GAP_TOL,
            eps0: EPS0,
            eps_steps: EPS_STEPS,
            seed: PERTURBATION_SEED,
            sdp: SdpOptions::tight(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankOne {
    pub z: DVector<f64>,
    /// `λ₂/λ₁` of `X`, 0 when `X` vanishes.
    pub ratio: f64,
}

/// `z = √λ₁ v₁` with `z₁ > 0` for lifted problems, else with its first
/// nonzero entry positive.
pub fn extract_rank_one(x: &SymMatrix) -> Result<RankOne> {
    let n = x.dim();
    let eig = eig_sym(x)?;
    let l1 = eig.max();
    if !(l1 > 1e-14) {
        return Ok(RankOne { z: DVector::zeros(n), ratio: 0.0 });
    }
    let l2 = if n > 1 { eig.values[n - 2].max(0.0) } else { 0.0 };
    let mut z = eig.vectors.column(n - 1).into_owned() * l1.sqrt();
    if let Some(first) = z.iter().copied().find(|v| v.abs() > 1e-12 * l1.sqrt()) {
        if first < 0.0 {
            z = -z;
        }
    }
    Ok(RankOne { z, ratio: l2 / l1 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FallbackReport {
    /// `P` came from `D` or the sign argument rather than a random pattern.
    pub designed: bool,
    /// `(ε, perturbed SDP optimum)` per solve.
    pub path: Vec<(f64, f64)>,
    pub accepted_eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifiedSolution {
    /// Homogeneous point.
    pub z: DVector<f64>,
    /// Point in the original variables.
    pub x: DVector<f64>,
    pub value: f64,
    pub sdp_value: f64,
    pub lambda_ratio: f64,
    pub rank_x: usize,
    pub violation: f64,
    pub gap: f64,
    pub iterations: usize,
    pub fallback: Option<FallbackReport>,
}

fn checked_solve(h: &HomogeneousQcqp, sdp: &SdpOptions) -> Result<crate::sdp::SdpSolution> {
    let sol = solve_with(&SdpProblem::from_homogeneous(h), sdp)?;
    match sol.status {
        SdpStatus::Optimal => Ok(sol),
        other => Err(Error::SolverFailure(format!("relaxation ended with status {other:?}"))),
    }
}

/// Solves the relaxation of a certified problem and recovers a rank-one
/// optimum, perturbing the objective along `ε_t = ε₀·2^{−t}` when the solver
/// lands on a higher-rank optimal face.
pub fn solve_certified(
    h: &HomogeneousQcqp,
    cert: &ExactnessCertificate,
    opts: &RecoveryOptions,
) -> Result<CertifiedSolution> {
    if cert.verdict != Verdict::Exact {
        return Err(Error::NotCertified);
    }
    let sol = checked_solve(h, &opts.sdp)?;
    let p_star = sol.primal_obj;
    let gap_of = |z: &DVector<f64>| (h.objective_value(z) - p_star).abs() / (1.0 + p_star.abs());
    let finish = |z: DVector<f64>, ratio: f64, fallback: Option<FallbackReport>| -> Result<CertifiedSolution> {
        let x = h.recover_point(&z)?;
        Ok(CertifiedSolution {
            value: h.objective_value(&z),
            violation: h.max_violation(&z),
            gap: gap_of(&z),
            x,
            z,
            sdp_value: p_star,
            lambda_ratio: ratio,
            rank_x: sol.rank_x,
            iterations: sol.iterations,
            fallback,
        })
    };

    let r = extract_rank_one(&sol.x)?;
    if r.ratio <= opts.rank1_tol && h.max_violation(&r.z) <= opts.feas_tol && gap_of(&r.z) <= opts.gap_tol {
        if h.lift == Lift::Direct || r.z[0] > 0.0 {
            return finish(r.z, r.ratio, None);
        }
    }

    let design = design_perturbation(h, &cert.forest)?;
    let designed = !design.is_empty();
    let p = if designed { design.matrix } else { random_pattern_perturbation(&cert.forest, opts.seed) };
    let mut path = Vec::new();
    let mut prev: Option<DVector<f64>> = None;
    for t in 0..=opts.eps_steps {
        let eps = opts.eps0 * 0.5f64.powi(t as i32);
        let hp = h.with_perturbed_objective(eps, &p);
        let sp = match checked_solve(&hp, &opts.sdp) {
            Ok(s) => s,
            Err(_) => {
                prev = None;
                continue;
            }
        };
        path.push((eps, sp.primal_obj));
        let rt = extract_rank_one(&sp.x)?;
        let usable = rt.ratio <= opts.rank1_tol
            && h.max_violation(&rt.z) <= opts.feas_tol
            && (h.lift == Lift::Direct || rt.z[0] > 0.0);
        if !usable {
            prev = None;
            continue;
        }
        let settled = prev.as_ref().is_some_and(|z| (z - &rt.z).amax() <= 1e-6);
        if gap_of(&rt.z) <= opts.gap_tol || settled {
            let report = FallbackReport { designed, path, accepted_eps: eps };
            return finish(rt.z, rt.ratio, Some(report));
        }
        prev = Some(rt.z);
    }
    Err(Error::RecoveryFailed(format!(
        "no rank-one solution after {} perturbed solves (λ₂/λ₁ = {:.3e})",
        path.len(),
        r.ratio
    )))
}

/// Certifies and, when exact, solves.
pub fn certify_and_solve(
    inst: &QcqpInstance,
    copts: &CertifyOptions,
    ropts: &RecoveryOptions,
) -> Result<(ExactnessCertificate, Option<CertifiedSolution>)> {
    let h = homogeneous_form(inst);
    let cert = certify_homogeneous(&h, copts)?;
    if cert.verdict != Verdict::Exact {
        return Ok((cert, None));
    }
    let sol = solve_certified(&h, &cert, ropts)?;
    Ok((cert, Some(sol)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devtools::generate::{feasible_fkl_instance, random_forest_qcqp, Shape};
    use crate::model::{HomogeneousRow, QcqpConstraint, QuadraticForm};
    use crate::sparsity::build_graph;
    use proptest::prelude::*;

    fn sm(rows: &[&[f64]]) -> SymMatrix {
        SymMatrix::from_rows(rows).unwrap()
    }

    fn direct(q0: SymMatrix, rows: Vec<(SymMatrix, f64, Sense)>) -> HomogeneousQcqp {
        HomogeneousQcqp {
            objective: q0,
            rows: rows.into_iter().map(|(mat, rhs, sense)| HomogeneousRow { mat, rhs, sense }).collect(),
            lift: Lift::Direct,
        }
    }

    fn forest(h: &HomogeneousQcqp) -> ForestAnalysis {
        analyze_forest(&build_graph_homogeneous(h, ZeroRule::Exact))
    }

    fn sign_definite_at_12(q1: SymMatrix) -> bool {
        let h = direct(sm(&[&[1.0, 1.0], &[1.0, 1.0]]), vec![(q1, 1.0, Sense::Le)]);
        certify_sign_definite(&h, &forest(&h), ZeroRule::Exact).unwrap().passed
    }

    #[test]
    fn sign_definite_examples() {
        assert!(sign_definite_at_12(sm(&[&[1.0, 2.0], &[2.0, 3.0]])));
        assert!(!sign_definite_at_12(sm(&[&[1.0, -2.0], &[-2.0, 3.0]])));
        let h = direct(sm(&[&[1.0, 0.0], &[0.0, 1.0]]), vec![(sm(&[&[1.0, 5.0], &[5.0, 1.0]]), 1.0, Sense::Le)]);
        assert!(certify_sign_definite(&h, &forest(&h), ZeroRule::Exact).unwrap().passed);
    }

    #[test]
    fn equality_breaks_sign_definiteness() {
        let h = direct(sm(&[&[1.0, 1.0], &[1.0, 1.0]]), vec![(sm(&[&[1.0, 2.0], &[2.0, 3.0]]), 1.0, Sense::Eq)]);
        let pc = certify_sign_definite(&h, &forest(&h), ZeroRule::Exact).unwrap();
        assert!(!pc.passed);
        assert_eq!(pc.per_edge[0].evidence, EdgeEvidence::NotSignDefinite { min: -2.0, max: 2.0 });
    }

    fn one_eq(q0: SymMatrix, q1: SymMatrix) -> PartialCertificate {
        let h = direct(q0, vec![(q1, 1.0, Sense::Eq)]);
        certify_one_equality(&h, &forest(&h), ZeroRule::Exact, PSD_TOL).unwrap()
    }

    #[test]
    fn one_equality_examples() {
        let pc = one_eq(sm(&[&[0.0, 1.0], &[1.0, 0.0]]), sm(&[&[1.0, 1.0], &[1.0, -1.0]]));
        assert!(pc.passed);
        match pc.per_edge[0].evidence {
            EdgeEvidence::PencilNotPsd { lambda_min } => assert!((lambda_min + 1.0).abs() < 1e-12),
            ref e => panic!("unexpected {e:?}"),
        }

        let pc = one_eq(sm(&[&[0.0, 1.0], &[1.0, 0.0]]), SymMatrix::from_diagonal(&[1.0, -1.0]));
        assert_eq!(pc.per_edge[0].evidence, EdgeEvidence::EntryForcedNonzero { margin: 1.0 });
        assert!(pc.passed);

        let pc = one_eq(sm(&[&[2.0, 1.0], &[1.0, 2.0]]), sm(&[&[0.0, 1.0], &[1.0, 0.0]]));
        assert!(!pc.passed);
        assert!(matches!(pc.per_edge[0].evidence, EdgeEvidence::PencilPsd { .. }));
    }

    #[test]
    fn one_equality_rejects_other_shapes() {
        let h = direct(SymMatrix::identity(2), vec![(SymMatrix::identity(2), 1.0, Sense::Le)]);
        assert!(matches!(
            certify_one_equality(&h, &forest(&h), ZeroRule::Exact, PSD_TOL),
            Err(Error::WrongShape(_))
        ));
    }

    #[test]
    fn diagonal_instance_is_vacuously_exact() {
        let inst = QcqpInstance::new(QuadraticForm::pure(SymMatrix::identity(3)), vec![]).unwrap();
        let cert = certify(&inst).unwrap();
        assert_eq!(cert.verdict, Verdict::Exact);
        assert!(cert.per_edge.is_empty());
    }

    #[test]
    fn feasible_system_is_not_certified() {
        let h = direct(
            sm(&[&[1.0, 1.0], &[1.0, 1.0]]),
            vec![(sm(&[&[0.0, -1.0], &[-1.0, 0.0]]), 1.0, Sense::Le)],
        );
        let pc = certify_fkl(&h, &forest(&h), &Phase1Options::default()).unwrap();
        assert!(!pc.passed);
        assert!(matches!(pc.per_edge[0].evidence, EdgeEvidence::Feasible { .. }));
        let cert = certify_homogeneous(&h, &CertifyOptions::default()).unwrap();
        assert_eq!(cert.verdict, Verdict::NotCertified);
        assert_eq!(cert.method, Some(Method::FklSystems));
    }

    #[test]
    fn triangle_is_not_applicable() {
        let q = sm(&[&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0]]);
        let inst = QcqpInstance::new(QuadraticForm::pure(q), vec![]).unwrap();
        let cert = certify(&inst).unwrap();
        assert_eq!(cert.verdict, Verdict::NotApplicable);
        assert_eq!(cert.method, None);
    }

    #[test]
    fn extraction_examples() {
        let r = extract_rank_one(&sm(&[&[1.0, 2.0], &[2.0, 4.0]])).unwrap();
        assert!((r.z[0] - 1.0).abs() < 1e-10 && (r.z[1] - 2.0).abs() < 1e-10);
        assert!(r.ratio < 1e-12);
        let r = extract_rank_one(&sm(&[&[1.0, -2.0], &[-2.0, 4.0]])).unwrap();
        assert!((r.z[0] - 1.0).abs() < 1e-10 && (r.z[1] + 2.0).abs() < 1e-10);
        assert!((extract_rank_one(&SymMatrix::identity(2)).unwrap().ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lifted_trs_recovers_unit_vector() {
        let inst = QcqpInstance::new(
            QuadraticForm::pure(SymMatrix::from_diagonal(&[1.0, -1.0])),
            vec![QcqpConstraint::le(QuadraticForm::pure(SymMatrix::identity(2)), 1.0)],
        )
        .unwrap();
        let h = crate::model::homogenize(&inst);
        let cert = certify_homogeneous(&h, &CertifyOptions::default()).unwrap();
        assert_eq!(cert.verdict, Verdict::Exact);
        let sol = solve_certified(&h, &cert, &RecoveryOptions::default()).unwrap();
        assert!(sol.gap <= 1e-6 && sol.violation <= 1e-6);
        assert!((sol.value + 1.0).abs() < 1e-5);
        assert!((sol.z[0] - 1.0).abs() < 1e-5);
        assert!((sol.x.norm() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn rank_two_face_triggers_fallback() {
        let inst = QcqpInstance::new(
            QuadraticForm::pure(SymMatrix::identity(2).neg()),
            vec![QcqpConstraint::le(QuadraticForm::pure(SymMatrix::identity(2)), 1.0)],
        )
        .unwrap();
        let h = homogeneous_form(&inst);
        let cert = certify_homogeneous(&h, &CertifyOptions::default()).unwrap();
        assert_eq!(cert.verdict, Verdict::Exact);
        let sol = solve_certified(&h, &cert, &RecoveryOptions::default()).unwrap();
        let fb = sol.fallback.expect("the analytic center has rank two");
        assert!(!fb.path.is_empty());
        assert!((sol.value + 1.0).abs() < 1e-6);
        assert!(sol.violation <= 1e-6);
    }

    #[test]
    fn solve_requires_exact_verdict() {
        let h = direct(
            sm(&[&[1.0, 1.0], &[1.0, 1.0]]),
            vec![(sm(&[&[0.0, -1.0], &[-1.0, 0.0]]), 1.0, Sense::Le)],
        );
        let cert = certify_homogeneous(&h, &CertifyOptions::default()).unwrap();
        assert_eq!(solve_certified(&h, &cert, &RecoveryOptions::default()), Err(Error::NotCertified));
    }

    #[test]
    fn sign_definite_and_fkl_agree_on_tridiagonal_instances() {
        let mut perturbed = 0;
        for seed in 0..100 {
            let inst = random_forest_qcqp(5, 2, Shape::Tridiagonal, true, seed).unwrap();
            let h = homogeneous_form(&inst);
            let fa = forest(&h);
            assert!(certify_sign_definite(&h, &fa, ZeroRule::Exact).unwrap().passed);
            let pc = certify_fkl(&h, &fa, &Phase1Options::default()).unwrap();
            assert!(pc.passed, "seed {seed}");
            if fa.offdiag_index_set.iter().any(|&(k, l)| h.objective.get(k, l) == 0.0) {
                assert!(pc.perturbed);
                perturbed += 1;
            }
        }
        assert!(perturbed > 0);
    }

    #[test]
    fn feasible_fkl_generator_is_caught() {
        for seed in 0..5 {
            let (inst, target) = feasible_fkl_instance(5, seed).unwrap();
            let cert = certify(&inst).unwrap();
            assert_eq!(cert.verdict, Verdict::NotCertified);
            let rec = cert.per_edge.iter().find(|r| r.edge == target).unwrap();
            assert!(!rec.evidence.is_infeasibility());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn certified_instances_recover_rank_one(seed in 0u64..10_000, n in 3usize..8, m in 1usize..4, shape in 0usize..3) {
            let shape = [Shape::Tridiagonal, Shape::Arrow, Shape::RandomTree][shape];
            let inst = random_forest_qcqp(n, m, shape, true, seed).unwrap();
            let (cert, sol) = certify_and_solve(&inst, &CertifyOptions::default(), &RecoveryOptions::default()).unwrap();
            prop_assert_eq!(cert.verdict, Verdict::Exact);
            prop_assert!(cert.per_edge.iter().all(|r| r.evidence.is_infeasibility()));
            let sol = sol.unwrap();
            prop_assert!(sol.lambda_ratio <= RANK1_TOL);
            prop_assert!(inst.max_violation(&sol.x) <= 1e-6);
            prop_assert!(sol.gap <= 1e-6 || sol.fallback.is_some());
        }

        #[test]
        fn connecting_edges_carry_epsilon(seed in 0u64..10_000, n in 4usize..9) {
            let inst = random_forest_qcqp(n, 2, Shape::RandomForest { components: 2 }, false, seed).unwrap();
            let h = homogeneous_form(&inst);
            let fa = analyze_forest(&build_graph(&inst));
            let pc = certify_fkl(&h, &fa, &Phase1Options::default()).unwrap();
            prop_assert!(pc.perturbed);
            prop_assert_eq!(pc.d_used.len(), 1);
            for r in pc.per_edge.iter().filter(|r| pc.d_used.contains(&r.edge)) {
                prop_assert_eq!(&r.evidence, &EdgeEvidence::ConnectingEdge { epsilon: EPS0 });
            }
        }

        #[test]
        fn perturbed_optima_approach_unperturbed(seed in 0u64..10_000, n in 3usize..6) {
            let inst = random_forest_qcqp(n, 2, Shape::RandomForest { components: 2 }, true, seed).unwrap();
            let h = homogeneous_form(&inst);
            let cert = certify_homogeneous(&h, &CertifyOptions::default()).unwrap();
            let base = solve_with(&SdpProblem::from_homogeneous(&h), &SdpOptions::tight()).unwrap().primal_obj;
            let p = perturbation_matrix(&cert.d_used, h.dim()).unwrap();
            let mut last = f64::INFINITY;
            for t in 0..=EPS_STEPS {
                let eps = EPS0 * 0.5f64.powi(t as i32);
                let hp = h.with_perturbed_objective(eps, &p);
                let v = solve_with(&SdpProblem::from_homogeneous(&hp), &SdpOptions::tight()).unwrap().primal_obj;
                last = (v - base).abs();
            }
            prop_assert!(last <= 1e-5, "distance {last}");
        }
    }
}
