//! Infeasible primal-dual path-following method over `S₊ⁿ × ℝ₊ˡ`.
//!
//! ```text
//! primal:  min ⟨C, X⟩ + cᵀx   s.t.  ⟨Aᵢ, X⟩ + aᵢᵀx = bᵢ,   X ⪰ 0, x ≥ 0
//! dual:    max bᵀw            s.t.  C − Σ wᵢAᵢ = Z ⪰ 0,  c − Σ wᵢaᵢ = z ≥ 0
//! ```
//!
//! HKM search direction, Mehrotra predictor-corrector, dense Schur complement.

use nalgebra::{DMatrix, DVector};

use super::{SdpOptions, SdpStatus};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct ConicProblem {
    pub c: DMatrix<f64>,
    pub c_lp: DVector<f64>,
    pub a: Vec<DMatrix<f64>>,
    /// `m × l`, row `i` is `aᵢᵀ`.
    pub a_lp: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl ConicProblem {
    pub fn n(&self) -> usize {
        self.c.nrows()
    }

    pub fn l(&self) -> usize {
        self.c_lp.len()
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ConicSolution {
    pub x: DMatrix<f64>,
    pub w: DVector<f64>,
    pub status: SdpStatus,
    pub iterations: usize,
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub primal_infeas: f64,
    pub dual_infeas: f64,
}

const COMP_TOL: f64 = 1e-9;
const MAX_POLISH: usize = 15;

/// Best converged iterate seen while polishing complementarity.
struct Saved {
    comp: f64,
    x: DMatrix<f64>,
    w: DVector<f64>,
    pobj: f64,
    dobj: f64,
    pinf: f64,
    dinf: f64,
}

struct Scaling {
    row: DVector<f64>,
    c: f64,
    b: f64,
}

fn frob(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.dot(b)
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Normalizes rows to unit norm and `C`, `b` to at most unit norm.
fn normalize(p: &ConicProblem) -> (ConicProblem, Scaling) {
    let m = p.m();
    let mut row = DVector::zeros(m);
    let mut a = Vec::with_capacity(m);
    let mut a_lp = p.a_lp.clone();
    let mut b = p.b.clone();
    for i in 0..m {
        let norm = (frob(&p.a[i]).powi(2) + p.a_lp.row(i).norm_squared()).sqrt();
        let d = if norm > 0.0 { 1.0 / norm } else { 1.0 };
        row[i] = d;
        a.push(&p.a[i] * d);
        for k in 0..p.l() {
            a_lp[(i, k)] *= d;
        }
        b[i] *= d;
    }
    let c_norm = (frob(&p.c).powi(2) + p.c_lp.norm_squared()).sqrt().max(1.0);
    let b_norm = b.norm().max(1.0);
    let scaled = ConicProblem {
        c: &p.c / c_norm,
        c_lp: &p.c_lp / c_norm,
        a,
        a_lp,
        b: b / b_norm,
    };
    (scaled, Scaling { row, c: c_norm, b: b_norm })
}

fn apply_a(p: &ConicProblem, x: &DMatrix<f64>, x_lp: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(p.m(), |i, _| inner(&p.a[i], x) + p.a_lp.row(i).transpose().dot(x_lp))
}

fn apply_at(p: &ConicProblem, w: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = p.n();
    let mut s = DMatrix::zeros(n, n);
    for (i, ai) in p.a.iter().enumerate() {
        s += ai * w[i];
    }
    let s_lp = p.a_lp.transpose() * w;
    (s, s_lp)
}

/// Largest step `α` keeping `X + αΔX ⪰ 0`, given the Cholesky factor of `X`.
fn max_step_psd(chol_l: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    let n = chol_l.nrows();
    if n == 0 {
        return f64::INFINITY;
    }
    let linv = match chol_l.clone().try_inverse() {
        Some(v) => v,
        None => return 0.0,
    };
    let t = &linv * dx * linv.transpose();
    let lmin = sym(&t).symmetric_eigenvalues().min();
    if !lmin.is_finite() {
        return 0.0;
    }
    if lmin < 0.0 { -1.0 / lmin } else { f64::INFINITY }
}

fn max_step_lp(x: &DVector<f64>, dx: &DVector<f64>) -> f64 {
    x.iter()
        .zip(dx.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(v, d)| -v / d)
        .fold(f64::INFINITY, f64::min)
}

struct Direction {
    dx: DMatrix<f64>,
    dx_lp: DVector<f64>,
    dw: DVector<f64>,
    dz: DMatrix<f64>,
    dz_lp: DVector<f64>,
}

struct Newton<'a> {
    p: &'a ConicProblem,
    x: &'a DMatrix<f64>,
    x_lp: &'a DVector<f64>,
    z_lp: &'a DVector<f64>,
    z_inv: DMatrix<f64>,
    rp: DVector<f64>,
    rd: DMatrix<f64>,
    rd_lp: DVector<f64>,
    schur: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl Newton<'_> {
    /// Direction targeting `XZ = target·I − corr`.
    fn solve(&self, target: f64, corr: Option<(&DMatrix<f64>, &DVector<f64>)>) -> Direction {
        let p = self.p;
        let n = p.n();
        let mut h_mat = DMatrix::<f64>::identity(n, n) * target;
        let mut h_lp = DVector::from_element(p.l(), target);
        if let Some((c, c_lp)) = corr {
            h_mat -= c;
            h_lp -= c_lp;
        }
        // H = (target I − corr) Z⁻¹ − X
        let h = &h_mat * &self.z_inv - self.x;
        let h_lp = h_lp.component_div(self.z_lp) - self.x_lp;
        let xrz = self.x * &self.rd * &self.z_inv;
        let xr_lp = self.x_lp.component_mul(&self.rd_lp).component_div(self.z_lp);

        let g = &h - &xrz;
        let g_lp = &h_lp - &xr_lp;
        let rhs = &self.rp - apply_a(p, &g, &g_lp);
        let dw = self.schur.solve(&rhs);

        let (at, at_lp) = apply_at(p, &dw);
        let dz = &self.rd - at;
        let dz_lp = &self.rd_lp - at_lp;
        let dx = sym(&(&h - self.x * &dz * &self.z_inv));
        let dx_lp = &h_lp - self.x_lp.component_mul(&dz_lp).component_div(self.z_lp);
        Direction { dx, dx_lp, dw, dz, dz_lp }
    }
}

fn cholesky_lower(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.l())
}

pub(crate) fn solve_conic(problem: &ConicProblem, opts: &SdpOptions) -> Result<ConicSolution> {
    let (p, scaling) = normalize(problem);
    let n = p.n();
    let l = p.l();
    let m = p.m();
    let total = (n + l) as f64;

    let xi = 10f64.max(total);
    let eta = 10f64.max(total.sqrt());
    let mut x = DMatrix::<f64>::identity(n, n) * xi;
    let mut x_lp = DVector::from_element(l, xi);
    let mut z = DMatrix::<f64>::identity(n, n) * eta;
    let mut z_lp = DVector::from_element(l, eta);
    let mut w = DVector::<f64>::zeros(m);

    let b_norm = p.b.norm();
    let c_norm = (frob(&p.c).powi(2) + p.c_lp.norm_squared()).sqrt();

    let mut status = SdpStatus::MaxIter;
    let mut iterations = 0;
    let mut stalled = 0;
    let mut polish = 0;
    let mut saved: Option<Saved> = None;
    let mut pobj;
    let mut dobj;
    let mut pinf;
    let mut dinf;

    loop {
        let ax = apply_a(&p, &x, &x_lp);
        let rp = &p.b - ax;
        let (at, at_lp) = apply_at(&p, &w);
        let rd = &p.c - at - &z;
        let rd_lp = &p.c_lp - at_lp - &z_lp;
        pobj = inner(&p.c, &x) + p.c_lp.dot(&x_lp);
        dobj = p.b.dot(&w);
        let mu = (inner(&x, &z) + x_lp.dot(&z_lp)) / total;
        pinf = rp.norm() / (1.0 + b_norm);
        dinf = (frob(&rd).powi(2) + rd_lp.norm_squared()).sqrt() / (1.0 + c_norm);
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());

        let converged = pinf <= opts.tol_feas && dinf <= opts.tol_feas && gap <= opts.tol_gap && mu <= opts.tol_mu;
        if converged {
            // a few extra steps drive ‖XZ‖ down along with μ
            let comp = (&x * &z).amax() / ((1.0 + x.amax()) * (1.0 + z.amax()));
            if saved.as_ref().is_none_or(|sv| comp < sv.comp) {
                saved = Some(Saved {
                    comp,
                    x: x.clone(),
                    w: w.clone(),
                    pobj,
                    dobj,
                    pinf,
                    dinf,
                });
            }
            if comp <= COMP_TOL || polish >= MAX_POLISH {
                status = SdpStatus::Optimal;
                break;
            }
            polish += 1;
        }
        // Farkas-type certificates.
        if dobj > 1e8 {
            let ray = (frob(&(&p.c - &rd)).powi(2) + (&p.c_lp - &rd_lp).norm_squared()).sqrt();
            if ray / dobj < 1e-8 {
                status = SdpStatus::Infeasible;
                break;
            }
        }
        if pobj < -1e8 {
            let ray = apply_a(&p, &x, &x_lp).norm();
            if ray / (-pobj) < 1e-8 {
                status = SdpStatus::Unbounded;
                break;
            }
        }
        if mu < 1e-12 && pinf > 1e-6 {
            status = SdpStatus::Infeasible;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;

        macro_rules! fail {
            () => {{
                if saved.is_some() {
                    break;
                }
                return Err(Error::NumericalTrouble);
            }};
        }

        let Some(z_chol) = cholesky_lower(&z) else { fail!() };
        let Some(z_chol_inv) = z_chol.clone().try_inverse() else { fail!() };
        let z_inv = sym(&(z_chol_inv.transpose() * &z_chol_inv));
        let Some(x_chol) = cholesky_lower(&x) else { fail!() };

        let mut schur = DMatrix::<f64>::zeros(m, m);
        let d_lp = x_lp.component_div(&z_lp);
        for j in 0..m {
            let g = &x * &p.a[j] * &z_inv;
            for i in 0..=j {
                let mut v = inner(&p.a[i], &g);
                for k in 0..l {
                    v += p.a_lp[(i, k)] * p.a_lp[(j, k)] * d_lp[k];
                }
                schur[(i, j)] = v;
            }
        }
        for j in 0..m {
            for i in (j + 1)..m {
                schur[(i, j)] = schur[(j, i)];
            }
        }
        let mut chol = None;
        let diag_max = (0..m).map(|i| schur[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
        for attempt in 0..4 {
            let mut s = schur.clone();
            if attempt > 0 {
                let reg = diag_max * 1e-14 * 100f64.powi(attempt - 1);
                for i in 0..m {
                    s[(i, i)] += reg;
                }
            }
            if let Some(c) = s.cholesky() {
                chol = Some(c);
                break;
            }
        }
        let Some(schur) = chol else { fail!() };

        let newton = Newton {
            p: &p,
            x: &x,
            x_lp: &x_lp,
            z_lp: &z_lp,
            z_inv,
            rp,
            rd,
            rd_lp,
            schur,
        };

        // predictor
        let pred = newton.solve(0.0, None);
        let ap = max_step_psd(&x_chol, &pred.dx).min(max_step_lp(&x_lp, &pred.dx_lp)).min(1.0);
        let z_chol_dir = max_step_psd(&z_chol, &pred.dz).min(max_step_lp(&z_lp, &pred.dz_lp)).min(1.0);
        let mu_aff = (inner(&(&x + &pred.dx * ap), &(&z + &pred.dz * z_chol_dir))
            + (&x_lp + &pred.dx_lp * ap).dot(&(&z_lp + &pred.dz_lp * z_chol_dir)))
            / total;
        let sigma = if mu > 0.0 { (mu_aff / mu).clamp(0.0, 1.0).powi(3) } else { 0.0 };

        // corrector
        let corr = &pred.dx * &pred.dz;
        let corr_lp = pred.dx_lp.component_mul(&pred.dz_lp);
        let dir = newton.solve(sigma * mu, Some((&corr, &corr_lp)));

        let ap_max = max_step_psd(&x_chol, &dir.dx).min(max_step_lp(&x_lp, &dir.dx_lp));
        let ad_max = max_step_psd(&z_chol, &dir.dz).min(max_step_lp(&z_lp, &dir.dz_lp));
        let ap = (opts.step_fraction * ap_max).min(1.0);
        let ad = (opts.step_fraction * ad_max).min(1.0);

        if ap < 1e-10 && ad < 1e-10 && saved.is_some() {
            break;
        }
        if ap < 1e-10 && ad < 1e-10 {
            stalled += 1;
            if stalled >= 3 {
                status = SdpStatus::NumericalTrouble;
                break;
            }
        } else {
            stalled = 0;
        }

        x = sym(&(&x + &dir.dx * ap));
        x_lp += &dir.dx_lp * ap;
        w += &dir.dw * ad;
        z = sym(&(&z + &dir.dz * ad));
        z_lp += &dir.dz_lp * ad;
    }

    if let Some(sv) = saved {
        if matches!(status, SdpStatus::Optimal | SdpStatus::MaxIter | SdpStatus::NumericalTrouble) {
            status = SdpStatus::Optimal;
            x = sv.x;
            w = sv.w;
            pobj = sv.pobj;
            dobj = sv.dobj;
            pinf = sv.pinf;
            dinf = sv.dinf;
        }
    }

    // undo scaling: X = s_b X', Z = s_c Z', wᵢ = s_c dᵢ w'ᵢ
    let w_out = DVector::from_fn(m, |i, _| w[i] * scaling.c * scaling.row[i]);
    Ok(ConicSolution {
        x: x * scaling.b,
        w: w_out,
        status,
        iterations,
        primal_obj: pobj * scaling.b * scaling.c,
        dual_obj: dobj * scaling.b * scaling.c,
        primal_infeas: pinf,
        dual_infeas: dinf,
    })
}
