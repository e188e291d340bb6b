//! QCQP instances, homogenization and the compactness assumption check.
//!
//! An instance is
//!
//! ```text
//! minimize    xᵀQ⁰x + 2q₀ᵀx
//! subject to  xᵀQᵖx + 2qₚᵀx  (≤ | =)  bₚ,   p = 1..m
//! ```
//!
//! Equalities keep their sense flag here and are expanded into the inequality
//! pair `(Qᵖ, bₚ)`, `(−Qᵖ, −bₚ)` only where a solver or certifier needs it.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sdp::{DualForm, SdpOptions};
use crate::symlin::SymMatrix;

/// Guard on `|z₁|` when mapping a homogeneous point back.
pub const DEHOM_TOL: f64 = 1e-8;
/// Threshold on `t*` for accepting a dominance witness.
pub const PD_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    /// `≤`
    Le,
    /// `=`
    Eq,
}

/// `xᵀ Q x + 2 qᵀ x`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub quad: SymMatrix,
    pub lin: DVector<f64>,
}

impl QuadraticForm {
    pub fn new(quad: SymMatrix, lin: DVector<f64>) -> Result<Self> {
        if quad.dim() != lin.len() {
            return Err(Error::DimensionMismatch {
                expected: quad.dim(),
                found: lin.len(),
            });
        }
        Ok(Self { quad, lin })
    }

    pub fn pure(quad: SymMatrix) -> Self {
        let n = quad.dim();
        Self {
            quad,
            lin: DVector::zeros(n),
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        self.quad.quad(x) + 2.0 * self.lin.dot(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.quad.as_matrix() * x + &self.lin) * 2.0
    }

    pub fn has_linear_term(&self) -> bool {
        self.lin.iter().any(|v| *v != 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QcqpConstraint {
    pub form: QuadraticForm,
    pub rhs: f64,
    pub sense: Sense,
}

impl QcqpConstraint {
    pub fn le(form: QuadraticForm, rhs: f64) -> Self {
        Self { form, rhs, sense: Sense::Le }
    }

    pub fn eq(form: QuadraticForm, rhs: f64) -> Self {
        Self { form, rhs, sense: Sense::Eq }
    }

    /// Signed violation: positive when the constraint is violated.
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        let g = self.form.eval(x) - self.rhs;
        match self.sense {
            Sense::Le => g.max(0.0),
            Sense::Eq => g.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QcqpInstance {
    n: usize,
    objective: QuadraticForm,
    constraints: Vec<QcqpConstraint>,
}

impl QcqpInstance {
    pub fn new(objective: QuadraticForm, constraints: Vec<QcqpConstraint>) -> Result<Self> {
        let n = objective.quad.dim();
        if n == 0 {
            return Err(Error::InvalidArgument("instance needs at least one variable".into()));
        }
        for c in &constraints {
            if c.form.quad.dim() != n || c.form.lin.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: c.form.quad.dim(),
                });
            }
            if !c.rhs.is_finite() {
                return Err(Error::InvalidArgument("non-finite right-hand side".into()));
            }
        }
        Ok(Self { n, objective, constraints })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.constraints.len()
    }

    pub fn objective(&self) -> &QuadraticForm {
        &self.objective
    }

    pub fn constraints(&self) -> &[QcqpConstraint] {
        &self.constraints
    }

    /// `Q⁰, Q¹, …, Qᵐ`.
    pub fn quad_matrices(&self) -> impl Iterator<Item = &SymMatrix> {
        std::iter::once(&self.objective.quad).chain(self.constraints.iter().map(|c| &c.form.quad))
    }

    pub fn has_linear_terms(&self) -> bool {
        self.objective.has_linear_term() || self.constraints.iter().any(|c| c.form.has_linear_term())
    }

    pub fn objective_value(&self, x: &DVector<f64>) -> f64 {
        self.objective.eval(x)
    }

    /// Largest constraint violation, each scaled by `1 + |bₚ|`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        self.constraints
            .iter()
            .map(|c| c.violation(x) / (1.0 + c.rhs.abs()))
            .fold(0.0, f64::max)
    }

    pub fn is_feasible(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.max_violation(x) <= tol
    }

    /// Constraint matrices with every equality expanded into `(Qᵖ, −Qᵖ)`.
    pub fn expanded_constraint_matrices(&self) -> Vec<SymMatrix> {
        let mut out = Vec::new();
        for c in &self.constraints {
            out.push(c.form.quad.clone());
            if c.sense == Sense::Eq {
                out.push(c.form.quad.neg());
            }
        }
        out
    }
}

/// How a homogeneous problem relates to the instance it came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lift {
    /// The instance had no linear terms and is used as is.
    Direct,
    /// Lifted with a zero corner and the pair `zᵀE₁₁z ≤ 1`, `−zᵀE₁₁z ≤ −1`.
    Standard,
    /// Lifted with `−bₚ` in the corner and `zᵀE₁₁z = 1`.
    Gtrs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneousRow {
    pub mat: SymMatrix,
    pub rhs: f64,
    pub sense: Sense,
}

/// Pure-quadratic QCQP `min zᵀQ̄⁰z s.t. zᵀQ̄ᵖz (≤|=) bₚ`.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneousQcqp {
    pub objective: SymMatrix,
    pub rows: Vec<HomogeneousRow>,
    pub lift: Lift,
}

impl HomogeneousQcqp {
    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    /// Objective followed by every row matrix, unexpanded.
    pub fn matrices(&self) -> impl Iterator<Item = &SymMatrix> {
        std::iter::once(&self.objective).chain(self.rows.iter().map(|r| &r.mat))
    }

    /// Row matrices with equalities expanded into `±` pairs, in row order.
    pub fn expanded_rows(&self) -> Vec<(SymMatrix, f64)> {
        let mut out = Vec::new();
        for r in &self.rows {
            out.push((r.mat.clone(), r.rhs));
            if r.sense == Sense::Eq {
                out.push((r.mat.neg(), -r.rhs));
            }
        }
        out
    }

    pub fn objective_value(&self, z: &DVector<f64>) -> f64 {
        self.objective.quad(z)
    }

    pub fn max_violation(&self, z: &DVector<f64>) -> f64 {
        self.rows
            .iter()
            .map(|r| {
                let g = r.mat.quad(z) - r.rhs;
                let v = match r.sense {
                    Sense::Le => g.max(0.0),
                    Sense::Eq => g.abs(),
                };
                v / (1.0 + r.rhs.abs())
            })
            .fold(0.0, f64::max)
    }

    /// True when the single row is an equality and nothing else constrains.
    pub fn is_single_equality(&self) -> bool {
        self.rows.len() == 1 && self.rows[0].sense == Sense::Eq
    }

    /// Same problem with `εP` added to the objective.
    pub fn with_perturbed_objective(&self, eps: f64, p: &SymMatrix) -> Self {
        Self {
            objective: self.objective.axpy(eps, p),
            rows: self.rows.clone(),
            lift: self.lift,
        }
    }

    /// Maps a homogeneous point back to the original variables.
    pub fn recover_point(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        match self.lift {
            Lift::Direct => Ok(z.clone()),
            Lift::Standard | Lift::Gtrs => dehomogenize(z),
        }
    }

    /// Maps an original point into the homogeneous variables.
    pub fn lift_point(&self, x: &DVector<f64>) -> DVector<f64> {
        match self.lift {
            Lift::Direct => x.clone(),
            Lift::Standard | Lift::Gtrs => lift(x),
        }
    }
}

/// `E₁₁` of dimension `dim`.
pub fn e11(dim: usize) -> SymMatrix {
    let mut e = SymMatrix::zeros(dim);
    e.set(0, 0, 1.0);
    e
}

/// `[[corner, qᵀ], [q, Q]]`.
fn bordered(form: &QuadraticForm, corner: f64) -> SymMatrix {
    let n = form.quad.dim();
    SymMatrix::from_fn(n + 1, |i, j| match (i, j) {
        (0, 0) => corner,
        (0, j) => form.lin[j - 1],
        (i, j) => form.quad.get(i - 1, j - 1),
    })
}

/// Lifts to `n + 1` variables with `Q̄ᵖ = [[0, qₚᵀ], [qₚ, Qᵖ]]` and the two
/// `E₁₁` rows pinning `z₁² = 1`.
pub fn homogenize(inst: &QcqpInstance) -> HomogeneousQcqp {
    let dim = inst.n() + 1;
    let mut rows: Vec<HomogeneousRow> = inst
        .constraints()
        .iter()
        .map(|c| HomogeneousRow {
            mat: bordered(&c.form, 0.0),
            rhs: c.rhs,
            sense: c.sense,
        })
        .collect();
    rows.push(HomogeneousRow { mat: e11(dim), rhs: 1.0, sense: Sense::Le });
    rows.push(HomogeneousRow { mat: e11(dim).neg(), rhs: -1.0, sense: Sense::Le });
    HomogeneousQcqp {
        objective: bordered(inst.objective(), 0.0),
        rows,
        lift: Lift::Standard,
    }
}

/// GTRS lift: `Q̄ᵖ = [[−bₚ, qₚᵀ], [qₚ, Qᵖ]]` (with `b₀ = 0`), the constraint
/// becomes `zᵀQ̄¹z ≤ 0` and `zᵀE₁₁z = 1` is kept as an equality.
pub fn homogenize_gtrs(inst: &QcqpInstance) -> Result<HomogeneousQcqp> {
    if inst.m() != 1 {
        return Err(Error::WrongArity { found: inst.m() });
    }
    let c = &inst.constraints()[0];
    let dim = inst.n() + 1;
    Ok(HomogeneousQcqp {
        objective: bordered(inst.objective(), 0.0),
        rows: vec![
            HomogeneousRow {
                mat: bordered(&c.form, -c.rhs),
                rhs: 0.0,
                sense: c.sense,
            },
            HomogeneousRow { mat: e11(dim), rhs: 1.0, sense: Sense::Eq },
        ],
        lift: Lift::Gtrs,
    })
}

/// Uses the instance directly when it has no linear terms, otherwise lifts it.
pub fn homogeneous_form(inst: &QcqpInstance) -> HomogeneousQcqp {
    if inst.has_linear_terms() {
        return homogenize(inst);
    }
    HomogeneousQcqp {
        objective: inst.objective().quad.clone(),
        rows: inst
            .constraints()
            .iter()
            .map(|c| HomogeneousRow {
                mat: c.form.quad.clone(),
                rhs: c.rhs,
                sense: c.sense,
            })
            .collect(),
        lift: Lift::Direct,
    }
}

/// `(z₂/z₁, …, z_{n+1}/z₁)`.
pub fn dehomogenize(z: &DVector<f64>) -> Result<DVector<f64>> {
    if z.len() < 2 {
        return Err(Error::InvalidArgument("homogeneous vector needs at least two entries".into()));
    }
    let z1 = z[0];
    if !(z1.abs() >= DEHOM_TOL) {
        return Err(Error::DegenerateFirstCoordinate { value: z1 });
    }
    Ok(DVector::from_iterator(z.len() - 1, z.iter().skip(1).map(|v| v / z1)))
}

/// `(1, x)`.
pub fn lift(x: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(x.len() + 1, std::iter::once(1.0).chain(x.iter().copied()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DominanceVariant {
    /// `ȳ ≥ 0`, `Σ ȳₚQᵖ ≻ O`.
    Standard,
    /// Found after negating every `Qᵖ`.
    SignFlipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AssumptionB {
    Witness {
        y: Vec<f64>,
        t: f64,
        variant: DominanceVariant,
    },
    NotVerified {
        best_t: f64,
    },
}

impl AssumptionB {
    pub fn is_verified(&self) -> bool {
        matches!(self, AssumptionB::Witness { .. })
    }
}

/// Largest `t` with `Σ yₚ Aₚ ⪰ tI`, `Σ yₚ = 1`, `y ≥ 0`, and its maximizer.
pub fn max_min_eigen_combination(mats: &[SymMatrix], opts: &SdpOptions) -> Result<(Vec<f64>, f64)> {
    let m = mats.len();
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one matrix".into()));
    }
    let n = mats[0].dim();
    if m == 1 {
        let t = crate::symlin::lambda_min(&mats[0])?;
        return Ok((vec![1.0], t));
    }
    // Eliminate y_m = 1 − Σ_{p<m} y_p; free variables (y_1..y_{m−1}, t).
    // Slack: Σ y_p A_p − tI = A_m + Σ_{p<m} y_p (A_p − A_m) − tI.
    let last = &mats[m - 1];
    let mut form = DualForm::new(last.clone());
    for a in &mats[..m - 1] {
        form.add_var(a.axpy(-1.0, last), 0.0);
    }
    form.add_var(SymMatrix::identity(n).neg(), 1.0);
    for p in 0..m - 1 {
        // y_p ≥ 0
        let mut coef = vec![0.0; m];
        coef[p] = 1.0;
        form.add_linear(coef, 0.0);
    }
    // y_m = 1 − Σ y_p ≥ 0
    let mut coef = vec![-1.0; m];
    coef[m - 1] = 0.0;
    form.add_linear(coef, 1.0);
    let sol = form.maximize(opts)?;
    let w = sol.w;
    let mut y: Vec<f64> = w[..m - 1].iter().map(|v| v.max(0.0)).collect();
    y.push((1.0 - y.iter().sum::<f64>()).max(0.0));
    let combo = mats
        .iter()
        .zip(&y)
        .fold(SymMatrix::zeros(n), |acc, (a, yp)| acc.axpy(*yp, a));
    let t = crate::symlin::lambda_min(&combo)?;
    Ok((y, t))
}

/// Looks for `ȳ ≥ 0` with `Σ ȳₚ Qᵖ ≻ O` over the (expanded) constraint
/// matrices; falls back to the sign-flipped variant.
pub fn verify_assumption_b(inst: &QcqpInstance) -> Result<AssumptionB> {
    verify_dominance(&inst.expanded_constraint_matrices(), &SdpOptions::default())
}

pub fn verify_dominance(mats: &[SymMatrix], opts: &SdpOptions) -> Result<AssumptionB> {
    if mats.is_empty() {
        return Ok(AssumptionB::NotVerified { best_t: f64::NEG_INFINITY });
    }
    let (y, t) = max_min_eigen_combination(mats, opts).map_err(solver_failure)?;
    if t > PD_TOL {
        return Ok(AssumptionB::Witness { y, t, variant: DominanceVariant::Standard });
    }
    let flipped: Vec<SymMatrix> = mats.iter().map(SymMatrix::neg).collect();
    let (yf, tf) = max_min_eigen_combination(&flipped, opts).map_err(solver_failure)?;
    if tf > PD_TOL {
        return Ok(AssumptionB::Witness { y: yf, t: tf, variant: DominanceVariant::SignFlipped });
    }
    Ok(AssumptionB::NotVerified { best_t: t.max(tf) })
}

fn solver_failure(e: Error) -> Error {
    match e {
        Error::SolverFailure(_) => e,
        other => Error::SolverFailure(other.to_string()),
    }
}

/// Bounding ellipsoid `xᵀAx + 2aᵀx ≤ β` implied by a standard dominance witness.
#[derive(Debug, Clone)]
pub struct Ellipsoid {
    pub quad: SymMatrix,
    pub lin: DVector<f64>,
    pub rhs: f64,
}

impl Ellipsoid {
    pub fn from_witness(inst: &QcqpInstance, y: &[f64]) -> Self {
        let n = inst.n();
        let mut quad = SymMatrix::zeros(n);
        let mut lin = DVector::zeros(n);
        let mut rhs = 0.0;
        let mut k = 0;
        for c in inst.constraints() {
            quad = quad.axpy(y[k], &c.form.quad);
            lin += &c.form.lin * y[k];
            rhs += y[k] * c.rhs;
            k += 1;
            if c.sense == Sense::Eq {
                quad = quad.axpy(-y[k], &c.form.quad);
                lin -= &c.form.lin * y[k];
                rhs -= y[k] * c.rhs;
                k += 1;
            }
        }
        Self { quad, lin, rhs }
    }
}

pub(crate) fn dominance_ellipsoid(inst: &QcqpInstance) -> Result<Option<Ellipsoid>> {
    match verify_assumption_b(inst)? {
        AssumptionB::Witness { y, variant: DominanceVariant::Standard, .. } => {
            Ok(Some(Ellipsoid::from_witness(inst, &y)))
        }
        _ => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn sym(rows: &[&[f64]]) -> SymMatrix {
        SymMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn homogenize_embeds_linear_term() {
        let obj = QuadraticForm::new(sym(&[&[1.0]]), v(&[2.0])).unwrap();
        let inst = QcqpInstance::new(obj, vec![]).unwrap();
        let h = homogenize(&inst);
        assert_eq!(h.objective, sym(&[&[0.0, 2.0], &[2.0, 1.0]]));
        assert_eq!(h.rows.len(), 2);
        assert_eq!(h.rows[0].mat, e11(2));
        assert_eq!(h.rows[0].rhs, 1.0);
        assert_eq!(h.rows[1].mat, e11(2).neg());
        assert_eq!(h.rows[1].rhs, -1.0);
    }

    #[test]
    fn homogenize_without_linear_terms_is_block_embedding() {
        let ball = QcqpConstraint::le(QuadraticForm::pure(SymMatrix::identity(2)), 1.0);
        let inst = QcqpInstance::new(QuadraticForm::pure(SymMatrix::from_diagonal(&[1.0, -1.0])), vec![ball]).unwrap();
        let h = homogenize(&inst);
        assert_eq!(h.objective, SymMatrix::from_diagonal(&[0.0, 1.0, -1.0]));
        assert_eq!(h.rows[0].mat, SymMatrix::from_diagonal(&[0.0, 1.0, 1.0]));
        assert_eq!(h.rows[0].rhs, 1.0);
    }

    #[test]
    fn gtrs_lift_examples() {
        let inst = QcqpInstance::new(
            QuadraticForm::pure(sym(&[&[-1.0]])),
            vec![QcqpConstraint::le(QuadraticForm::pure(SymMatrix::identity(1)), 1.0)],
        )
        .unwrap();
        let h = homogenize_gtrs(&inst).unwrap();
        assert_eq!(h.rows[0].mat, sym(&[&[-1.0, 0.0], &[0.0, 1.0]]));
        assert_eq!(h.rows[0].rhs, 0.0);
        assert_eq!(h.objective, sym(&[&[0.0, 0.0], &[0.0, -1.0]]));
        assert_eq!(h.rows[1].sense, Sense::Eq);

        let trs = QcqpInstance::new(
            QuadraticForm::pure(SymMatrix::from_diagonal(&[1.0, -1.0])),
            vec![QcqpConstraint::le(QuadraticForm::pure(SymMatrix::identity(2)), 1.0)],
        )
        .unwrap();
        let h = homogenize_gtrs(&trs).unwrap();
        assert_eq!(h.objective, SymMatrix::from_diagonal(&[0.0, 1.0, -1.0]));
        assert_eq!(h.rows[0].mat, SymMatrix::from_diagonal(&[-1.0, 1.0, 1.0]));
    }

    #[test]
    fn gtrs_lift_requires_one_constraint() {
        let inst = QcqpInstance::new(QuadraticForm::pure(SymMatrix::identity(1)), vec![]).unwrap();
        assert_eq!(homogenize_gtrs(&inst).unwrap_err(), Error::WrongArity { found: 0 });
    }

    #[test]
    fn dehomogenize_examples() {
        assert_eq!(dehomogenize(&v(&[1.0, 3.0, 4.0])).unwrap(), v(&[3.0, 4.0]));
        assert_eq!(dehomogenize(&v(&[-1.0, 3.0, 4.0])).unwrap(), v(&[-3.0, -4.0]));
        assert!(matches!(
            dehomogenize(&v(&[1e-12, 1.0, 1.0])),
            Err(Error::DegenerateFirstCoordinate { .. })
        ));
    }

    #[test]
    fn lifted_point_round_trip() {
        let obj = QuadraticForm::new(sym(&[&[1.0, 0.5], &[0.5, -2.0]]), v(&[0.3, -1.0])).unwrap();
        let con = QcqpConstraint::le(QuadraticForm::new(SymMatrix::identity(2), v(&[0.1, 0.2])).unwrap(), 2.0);
        let inst = QcqpInstance::new(obj, vec![con]).unwrap();
        let h = homogenize(&inst);
        let x = v(&[0.4, -0.7]);
        assert!(inst.is_feasible(&x, 0.0));
        let z = lift(&x);
        assert!(h.max_violation(&z) <= 1e-15);
        assert!((h.objective_value(&z) - inst.objective_value(&x)).abs() < 1e-14);
        assert_eq!(dehomogenize(&z).unwrap(), x);
        // all linear terms are gone by construction
        assert!(h.matrices().all(|m| m.dim() == 3));
    }

    #[test]
    fn assumption_b_examples() {
        let one = |q: SymMatrix| {
            let n = q.dim();
            QcqpInstance::new(
                QuadraticForm::pure(SymMatrix::zeros(n)),
                vec![QcqpConstraint::le(QuadraticForm::pure(q), 1.0)],
            )
            .unwrap()
        };
        match verify_assumption_b(&one(SymMatrix::identity(2))).unwrap() {
            AssumptionB::Witness { y, t, variant } => {
                assert_eq!(y, vec![1.0]);
                assert!((t - 1.0).abs() < 1e-12);
                assert_eq!(variant, DominanceVariant::Standard);
            }
            other => panic!("{other:?}"),
        }
        assert!(!verify_assumption_b(&one(SymMatrix::from_diagonal(&[1.0, -1.0]))).unwrap().is_verified());

        let inst = QcqpInstance::new(
            QuadraticForm::pure(SymMatrix::zeros(2)),
            vec![
                QcqpConstraint::le(QuadraticForm::pure(SymMatrix::from_diagonal(&[1.0, 0.0])), 1.0),
                QcqpConstraint::le(QuadraticForm::pure(SymMatrix::from_diagonal(&[0.0, 1.0])), 1.0),
            ],
        )
        .unwrap();
        match verify_assumption_b(&inst).unwrap() {
            AssumptionB::Witness { y, t, .. } => {
                assert!((y[0] - 0.5).abs() < 1e-6 && (y[1] - 0.5).abs() < 1e-6, "{y:?}");
                assert!((t - 0.5).abs() < 1e-6);
                let combo = SymMatrix::from_diagonal(&[y[0], y[1]]).axpy(-t / 2.0, &SymMatrix::identity(2));
                assert!(crate::symlin::psd_check(&combo, 0.0).unwrap());
            }
            other => panic!("{other:?}"),
        }
    }
}
