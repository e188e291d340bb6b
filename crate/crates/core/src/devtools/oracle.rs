//! Brute-force global optimization for small QCQPs.
//!
//! Multistart augmented Lagrangian with a BFGS inner loop and a
//! Gauss-Newton feasibility restoration. Starts are drawn uniformly from a
//! bounding ellipsoid. Not a certified global method.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{dominance_ellipsoid, Ellipsoid, QcqpInstance, Sense};
use crate::symlin::SymMatrix;

pub const DEFAULT_BUDGET: usize = 2000;
pub const DEFAULT_SEED: u64 = 2024;
pub const FEAS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    /// Bounding ellipsoid from a dominance witness.
    Auto,
    /// Box `[−r, r]ⁿ`.
    Box(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    pub budget: usize,
    pub seed: u64,
    pub feas_tol: f64,
    pub region: Region,
    pub threads: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            budget: DEFAULT_BUDGET,
            seed: DEFAULT_SEED,
            feas_tol: FEAS_TOL,
            region: Region::Auto,
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()).min(8),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub value: f64,
    pub x: DVector<f64>,
    pub feasible_starts: usize,
}

/// Sampler for points inside `{x : (x − c)ᵀA(x − c) ≤ r²}` or a box.
#[derive(Debug, Clone)]
enum Sampler {
    Ellipsoid { center: DVector<f64>, radius: f64, l_inv_t: DMatrix<f64> },
    Box { n: usize, r: f64 },
}

impl Sampler {
    fn from_ellipsoid(e: &Ellipsoid) -> Result<Self> {
        let a = e.quad.as_matrix().clone();
        let chol = a.cholesky().ok_or_else(|| Error::InvalidArgument("ellipsoid matrix not PD".into()))?;
        let center = -chol.solve(&e.lin);
        let r2 = e.rhs + e.lin.dot(&chol.solve(&e.lin));
        if !(r2 >= 0.0) {
            return Err(Error::NoFeasiblePointFound);
        }
        let l_inv_t = chol.l().try_inverse().ok_or(Error::NumericalTrouble)?.transpose();
        Ok(Sampler::Ellipsoid { center, radius: r2.sqrt(), l_inv_t })
    }

    fn new(inst: &QcqpInstance, region: Region) -> Result<Self> {
        match region {
            Region::Box(r) => Ok(Sampler::Box { n: inst.n(), r }),
            Region::Auto => match dominance_ellipsoid(inst)? {
                Some(e) => Self::from_ellipsoid(&e),
                None => Err(Error::InvalidArgument("no bounding ellipsoid; pass an explicit box".into())),
            },
        }
    }

    fn center(&self) -> DVector<f64> {
        match self {
            Sampler::Ellipsoid { center, .. } => center.clone(),
            Sampler::Box { n, .. } => DVector::zeros(*n),
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> DVector<f64> {
        match self {
            Sampler::Ellipsoid { center, radius, l_inv_t } => {
                let n = center.len();
                let mut u: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
                let norm = u.norm().max(1e-300);
                let rad: f64 = rng.random::<f64>().powf(1.0 / n as f64);
                u *= rad / norm;
                center + l_inv_t * u * *radius
            }
            Sampler::Box { n, r } => DVector::from_fn(*n, |_, _| rng.random_range(-*r..=*r)),
        }
    }

    /// Axis-aligned box containing the region.
    fn bounds(&self) -> Vec<(f64, f64)> {
        match self {
            Sampler::Ellipsoid { center, radius, l_inv_t } => {
                // A⁻¹ = L⁻ᵀL⁻¹
                let a_inv = l_inv_t * l_inv_t.transpose();
                (0..center.len())
                    .map(|i| {
                        let h = radius * a_inv[(i, i)].sqrt();
                        (center[i] - h, center[i] + h)
                    })
                    .collect()
            }
            Sampler::Box { n, r } => vec![(-*r, *r); *n],
        }
    }
}

struct Local<'a> {
    inst: &'a QcqpInstance,
}

impl Local<'_> {
    fn constraint_values(&self, x: &DVector<f64>) -> Vec<f64> {
        self.inst.constraints().iter().map(|c| c.form.eval(x) - c.rhs).collect()
    }

    /// Augmented Lagrangian value and gradient.
    fn merit(&self, x: &DVector<f64>, lam: &[f64], rho: f64) -> (f64, DVector<f64>) {
        let obj = self.inst.objective();
        let mut v = obj.eval(x);
        let mut g = obj.gradient(x);
        for (i, c) in self.inst.constraints().iter().enumerate() {
            let gi = c.form.eval(x) - c.rhs;
            let w = match c.sense {
                Sense::Le => {
                    let t = (gi + lam[i] / rho).max(0.0);
                    v += 0.5 * rho * t * t - 0.5 * lam[i] * lam[i] / rho;
                    rho * t
                }
                Sense::Eq => {
                    v += lam[i] * gi + 0.5 * rho * gi * gi;
                    lam[i] + rho * gi
                }
            };
            if w != 0.0 {
                g += c.form.gradient(x) * w;
            }
        }
        (v, g)
    }

    fn bfgs(&self, x0: DVector<f64>, lam: &[f64], rho: f64) -> DVector<f64> {
        let n = x0.len();
        let mut x = x0;
        let (mut f, mut g) = self.merit(&x, lam, rho);
        let mut h = DMatrix::<f64>::identity(n, n);
        for _ in 0..200 {
            if g.norm() <= 1e-11 * (1.0 + f.abs()) {
                break;
            }
            let mut d = -(&h * &g);
            if d.dot(&g) >= 0.0 {
                h = DMatrix::identity(n, n);
                d = -g.clone();
            }
            let slope = d.dot(&g);
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..50 {
                let xn = &x + &d * step;
                let (fnew, gnew) = self.merit(&xn, lam, rho);
                if fnew <= f + 1e-4 * step * slope {
                    accepted = Some((xn, fnew, gnew));
                    break;
                }
                step *= 0.5;
            }
            let Some((xn, fnew, gnew)) = accepted else { break };
            let s = &xn - &x;
            let yv = &gnew - &g;
            let sy = s.dot(&yv);
            if sy > 1e-14 * s.norm() * yv.norm() {
                let rho_b = 1.0 / sy;
                let i = DMatrix::<f64>::identity(n, n);
                let left = &i - &s * yv.transpose() * rho_b;
                let right = &i - &yv * s.transpose() * rho_b;
                h = &left * &h * &right + &s * s.transpose() * rho_b;
            }
            let done = (f - fnew).abs() <= 1e-15 * (1.0 + f.abs());
            x = xn;
            f = fnew;
            g = gnew;
            if done {
                break;
            }
        }
        x
    }

    fn violation(&self, vals: &[f64]) -> f64 {
        self.inst
            .constraints()
            .iter()
            .zip(vals)
            .map(|(c, v)| match c.sense {
                Sense::Le => v.max(0.0),
                Sense::Eq => v.abs(),
            })
            .fold(0.0, f64::max)
    }

    fn augmented_lagrangian(&self, x0: DVector<f64>) -> DVector<f64> {
        let m = self.inst.m();
        let mut lam = vec![0.0; m];
        let mut rho = 10.0;
        let mut x = x0;
        let mut prev_viol = f64::INFINITY;
        for _ in 0..30 {
            x = self.bfgs(x, &lam, rho);
            let vals = self.constraint_values(&x);
            for (i, c) in self.inst.constraints().iter().enumerate() {
                lam[i] = match c.sense {
                    Sense::Le => (lam[i] + rho * vals[i]).max(0.0),
                    Sense::Eq => lam[i] + rho * vals[i],
                };
            }
            let viol = self.violation(&vals);
            if viol <= 1e-12 && prev_viol <= 1e-10 {
                break;
            }
            if viol > 0.25 * prev_viol {
                rho = (rho * 5.0).min(1e9);
            }
            prev_viol = viol;
        }
        x
    }

    /// Minimum-norm Gauss-Newton steps onto the violated constraints.
    fn restore(&self, mut x: DVector<f64>) -> DVector<f64> {
        for _ in 0..30 {
            let rows: Vec<(f64, DVector<f64>)> = self
                .inst
                .constraints()
                .iter()
                .filter_map(|c| {
                    let v = c.form.eval(&x) - c.rhs;
                    let active = match c.sense {
                        Sense::Le => v > 0.0,
                        Sense::Eq => v != 0.0,
                    };
                    active.then(|| (v, c.form.gradient(&x)))
                })
                .collect();
            if rows.is_empty() {
                break;
            }
            let k = rows.len();
            let j = DMatrix::from_fn(k, x.len(), |r, c| rows[r].1[c]);
            let g = DVector::from_fn(k, |r, _| rows[r].0);
            let mut jjt = &j * j.transpose();
            let reg = 1e-14 * jjt.diagonal().amax().max(1e-300);
            for i in 0..k {
                jjt[(i, i)] += reg;
            }
            let Some(sol) = jjt.lu().solve(&g) else { break };
            x -= j.transpose() * sol;
            if self.violation(&self.constraint_values(&x)) <= 1e-14 {
                break;
            }
        }
        x
    }

    fn local_solve(&self, x0: DVector<f64>) -> DVector<f64> {
        let x = self.augmented_lagrangian(x0);
        self.restore(x)
    }
}

fn better(a: &Option<(f64, DVector<f64>)>, v: f64) -> bool {
    a.as_ref().is_none_or(|(best, _)| v < *best)
}

pub fn brute_force_qcqp(inst: &QcqpInstance, budget: usize) -> Result<OracleResult> {
    brute_force_qcqp_with(inst, &OracleOptions { budget, ..OracleOptions::default() })
}

pub fn brute_force_qcqp_with(inst: &QcqpInstance, opts: &OracleOptions) -> Result<OracleResult> {
    let sampler = Sampler::new(inst, opts.region)?;
    let local = Local { inst };
    let threads = opts.threads.max(1);
    let starts: Vec<usize> = (0..opts.budget).collect();
    let chunk = starts.len().div_ceil(threads).max(1);

    // (value, start index, x) per feasible start; reduced by (value, index).
    let results: Vec<(usize, Option<(f64, usize, DVector<f64>)>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = starts
            .chunks(chunk)
            .map(|ids| {
                let sampler = &sampler;
                let local = &local;
                scope.spawn(move || {
                    let mut feasible = 0;
                    let mut best: Option<(f64, usize, DVector<f64>)> = None;
                    for &id in ids {
                        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                        let x0 = if id == 0 { sampler.center() } else { sampler.sample(&mut rng) };
                        let x = local.local_solve(x0);
                        if inst.max_violation(&x) <= opts.feas_tol {
                            feasible += 1;
                            let v = inst.objective_value(&x);
                            if best.as_ref().is_none_or(|(b, bid, _)| v < *b || (v == *b && id < *bid)) {
                                best = Some((v, id, x));
                            }
                        }
                    }
                    (feasible, best)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("oracle worker panicked")).collect()
    });

    let feasible_starts = results.iter().map(|r| r.0).sum();
    let best = results
        .into_iter()
        .filter_map(|r| r.1)
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    match best {
        Some((value, _, x)) => Ok(OracleResult { value, x, feasible_starts }),
        None => Err(Error::NoFeasiblePointFound),
    }
}

/// Exhaustive grid over the bounding box (`n ≤ 3`, inequality constraints
/// only), followed by a local polish of the best grid point.
pub fn grid_search_qcqp(inst: &QcqpInstance, points_per_axis: usize, region: Region) -> Result<OracleResult> {
    let n = inst.n();
    if n > 3 {
        return Err(Error::InvalidArgument("grid mode supports n ≤ 3".into()));
    }
    if inst.constraints().iter().any(|c| c.sense == Sense::Eq) {
        return Err(Error::InvalidArgument("grid mode needs inequality constraints only".into()));
    }
    if points_per_axis < 2 {
        return Err(Error::InvalidArgument("need at least two points per axis".into()));
    }
    let bounds = Sampler::new(inst, region)?.bounds();
    let total = points_per_axis.pow(n as u32);
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut feasible = 0;
    let mut x = DVector::zeros(n);
    for idx in 0..total {
        let mut r = idx;
        for (d, (lo, hi)) in bounds.iter().enumerate() {
            let t = (r % points_per_axis) as f64 / (points_per_axis - 1) as f64;
            x[d] = lo + t * (hi - lo);
            r /= points_per_axis;
        }
        if inst.max_violation(&x) <= 0.0 {
            feasible += 1;
            let v = inst.objective_value(&x);
            if better(&best, v) {
                best = Some((v, x.clone()));
            }
        }
    }
    let Some((mut value, mut xb)) = best else { return Err(Error::NoFeasiblePointFound) };
    let polished = Local { inst }.local_solve(xb.clone());
    if inst.max_violation(&polished) <= FEAS_TOL && inst.objective_value(&polished) < value {
        value = inst.objective_value(&polished);
        xb = polished;
    }
    Ok(OracleResult { value, x: xb, feasible_starts: feasible })
}

/// Randomized search for `y ∈ [0, y_cap]ᵐ` with `[S(y)]_kl = 0` and
/// `S(y) ⪰ −tol·I`. The entry constraint is enforced by solving for the
/// coordinate with the largest `|[Qᵖ]_kl|`. Returns a witness if one is hit.
pub fn audit_phase1(q: &[SymMatrix], k: usize, l: usize, y_cap: f64, samples: usize, seed: u64) -> Option<Vec<f64>> {
    let m = q.len() - 1;
    let c = q[0].get(k, l);
    let a: Vec<f64> = q[1..].iter().map(|mm| mm.get(k, l)).collect();
    let pivot = (0..m).filter(|&p| a[p] != 0.0).max_by(|&i, &j| a[i].abs().total_cmp(&a[j].abs()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = q.iter().map(SymMatrix::scale).fold(1.0, f64::max);
    for _ in 0..samples {
        let mut y: Vec<f64> = (0..m)
            .map(|_| if rng.random_bool(0.3) { 0.0 } else { y_cap * 10f64.powf(-rng.random_range(0.0..12.0)) })
            .collect();
        match pivot {
            Some(ps) => {
                let rest: f64 = (0..m).filter(|&p| p != ps).map(|p| a[p] * y[p]).sum();
                let v = -(c + rest) / a[ps];
                if !(0.0..=y_cap).contains(&v) {
                    continue;
                }
                y[ps] = v;
            }
            None if c != 0.0 => return None,
            None => {}
        }
        let s = y.iter().enumerate().fold(q[0].clone(), |acc, (p, yp)| acc.axpy(*yp, &q[p + 1]));
        let tol = 1e-9 * scale.max(s.scale());
        if crate::symlin::lambda_min(&s).is_ok_and(|v| v >= -tol) {
            return Some(y);
        }
    }
    None
}
