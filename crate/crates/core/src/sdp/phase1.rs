use serde::{Deserialize, Serialize};

use super::{DualForm, SdpOptions, SdpStatus};
use crate::error::{Error, Result};
use crate::symlin::{lambda_min, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase1Options {
    pub y_cap: f64,
    pub feas_tol: f64,
    pub infeas_margin: f64,
    pub sdp: SdpOptions,
}

impl Default for Phase1Options {
    fn default() -> Self {
        Phase1Options { y_cap: 1e6, feas_tol: 1e-7, infeas_margin: 1e-5, sdp: SdpOptions::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase1Reason {
    /// `[Qᵖ]_kl = 0` for every `p ≥ 1` while `[Q⁰]_kl ≠ 0`.
    LinearSliceEmpty,
    /// All nonzero `[Qᵖ]_kl` share the sign of `[Q⁰]_kl`.
    SignForced,
    /// The entry cannot be zeroed with `0 ≤ y ≤ y_cap`.
    CapExceeded,
    /// `min t` over the slice is bounded away from zero.
    Sdp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Phase1Outcome {
    Feasible { y: Vec<f64>, t: f64 },
    Infeasible { margin: f64, reason: Phase1Reason },
    Inconclusive { t_upper: f64, t_lower: f64 },
}

impl Phase1Outcome {
    pub fn is_infeasible(&self) -> bool {
        matches!(self, Phase1Outcome::Infeasible { .. })
    }
}

/// Decides `y ≥ 0, S(y) = Q⁰ + Σ yₚQᵖ ⪰ O, [S(y)]_kl = 0` within `y ≤ y_cap`.
///
/// `q[0]` is the objective matrix; indices are 0-based with `k < l`.
pub fn phase1_fkl(q: &[SymMatrix], k: usize, l: usize, opts: &Phase1Options) -> Result<Phase1Outcome> {
    if q.is_empty() {
        return Err(Error::InvalidArgument("need at least the objective matrix".into()));
    }
    let n = q[0].dim();
    if let Some(bad) = q.iter().find(|m| m.dim() != n) {
        return Err(Error::DimensionMismatch { expected: n, found: bad.dim() });
    }
    if k >= l || l >= n {
        return Err(Error::InvalidArgument(format!("bad index pair ({k}, {l})")));
    }
    if !(opts.y_cap > 0.0) {
        return Err(Error::InvalidArgument("y_cap must be positive".into()));
    }
    let m = q.len() - 1;
    let c = q[0].get(k, l);
    let a: Vec<f64> = q[1..].iter().map(|mm| mm.get(k, l)).collect();

    if c != 0.0 && a.iter().all(|v| *v == 0.0) {
        return Ok(Phase1Outcome::Infeasible { margin: c.abs(), reason: Phase1Reason::LinearSliceEmpty });
    }
    if (c > 0.0 && a.iter().all(|v| *v >= 0.0)) || (c < 0.0 && a.iter().all(|v| *v <= 0.0)) {
        return Ok(Phase1Outcome::Infeasible { margin: c.abs(), reason: Phase1Reason::SignForced });
    }
    let lo = c + opts.y_cap * a.iter().map(|v| v.min(0.0)).sum::<f64>();
    let hi = c + opts.y_cap * a.iter().map(|v| v.max(0.0)).sum::<f64>();
    if lo > 0.0 || hi < 0.0 {
        return Ok(Phase1Outcome::Infeasible { margin: lo.max(-hi), reason: Phase1Reason::CapExceeded });
    }

    // Common scale so thresholds do not depend on the units of the data.
    let scale = q.iter().map(SymMatrix::max_abs).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let qs: Vec<SymMatrix> = q.iter().map(|mm| mm.scaled(1.0 / scale)).collect();
    let c = c / scale;
    let a: Vec<f64> = a.iter().map(|v| v / scale).collect();

    // With c = 0 and one-signed coefficients, the entry forces those y to 0.
    let mut active: Vec<bool> = vec![true; m];
    if c == 0.0 {
        let pos = a.iter().any(|v| *v > 0.0);
        let neg = a.iter().any(|v| *v < 0.0);
        if !(pos && neg) {
            for p in 0..m {
                if a[p] != 0.0 {
                    active[p] = false;
                }
            }
        }
    }
    let pivot = (0..m)
        .filter(|&p| active[p] && a[p] != 0.0)
        .max_by(|&i, &j| a[i].abs().total_cmp(&a[j].abs()));

    let base = match pivot {
        Some(ps) => qs[0].axpy(-c / a[ps], &qs[ps + 1]),
        None => qs[0].clone(),
    };
    let mut form = DualForm::new(base);
    let mut vars: Vec<usize> = Vec::new();
    for p in 0..m {
        if !active[p] || Some(p) == pivot {
            continue;
        }
        let mat = match pivot {
            Some(ps) => qs[p + 1].axpy(-a[p] / a[ps], &qs[ps + 1]),
            None => qs[p + 1].clone(),
        };
        form.add_var(mat, 0.0);
        vars.push(p);
    }
    let nv = vars.len();
    let t_idx = form.add_var(SymMatrix::identity(n), -1.0);
    for i in 0..nv {
        let mut lo = vec![0.0; nv + 1];
        lo[i] = 1.0;
        form.add_linear(lo, 0.0);
        let mut hi = vec![0.0; nv + 1];
        hi[i] = -1.0;
        form.add_linear(hi, opts.y_cap);
    }
    if let Some(ps) = pivot {
        // y* = −(c + Σ aₚyₚ)/a*  ∈ [0, y_cap]
        let coef: Vec<f64> = vars.iter().map(|&p| -a[p] / a[ps]).chain([0.0]).collect();
        form.add_linear(coef.clone(), -c / a[ps]);
        form.add_linear(coef.iter().map(|v| -v).collect(), opts.y_cap + c / a[ps]);
    }
    let mut floor = vec![0.0; nv + 1];
    floor[t_idx] = 1.0;
    form.add_linear(floor, 1.0);

    let sol = form.maximize(&opts.sdp)?;

    let mut y = vec![0.0; m];
    for (i, &p) in vars.iter().enumerate() {
        y[p] = sol.w[i].clamp(0.0, opts.y_cap);
    }
    if let Some(ps) = pivot {
        let rest: f64 = vars.iter().map(|&p| a[p] * y[p]).sum();
        y[ps] = (-(c + rest) / a[ps]).clamp(0.0, opts.y_cap);
    }
    let s = y.iter().enumerate().fold(qs[0].clone(), |acc, (p, yp)| acc.axpy(*yp, &qs[p + 1]));
    let t_witness = -lambda_min(&s)?;
    let entry_ok = s.get(k, l).abs() <= 1e-12;
    if entry_ok && t_witness <= opts.feas_tol {
        return Ok(Phase1Outcome::Feasible { y, t: t_witness * scale });
    }
    let t_lower = if sol.status == SdpStatus::Optimal { -sol.upper_bound } else { f64::NEG_INFINITY };
    if t_lower > opts.infeas_margin {
        return Ok(Phase1Outcome::Infeasible { margin: t_lower * scale, reason: Phase1Reason::Sdp });
    }
    Ok(Phase1Outcome::Inconclusive { t_upper: t_witness * scale, t_lower: t_lower * scale })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sm(rows: &[&[f64]]) -> SymMatrix {
        SymMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn identity_is_feasible() {
        let r = phase1_fkl(&[SymMatrix::identity(2)], 0, 1, &Phase1Options::default()).unwrap();
        assert!(matches!(r, Phase1Outcome::Feasible { .. }), "{r:?}");
    }

    #[test]
    fn fixed_entry_is_infeasible() {
        let r = phase1_fkl(&[sm(&[&[1.0, 1.0], &[1.0, 1.0]])], 0, 1, &Phase1Options::default()).unwrap();
        assert_eq!(r, Phase1Outcome::Infeasible { margin: 1.0, reason: Phase1Reason::LinearSliceEmpty });
    }

    #[test]
    fn negative_multiplier_needed() {
        let q = [sm(&[&[1.0, 1.0], &[1.0, 1.0]]), sm(&[&[0.0, 1.0], &[1.0, 0.0]])];
        let r = phase1_fkl(&q, 0, 1, &Phase1Options::default()).unwrap();
        match r {
            Phase1Outcome::Infeasible { margin, .. } => assert!(margin > 1e-5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sdp_decides_two_multipliers() {
        // S(y) = [[1 − y₁, 1 − y₂ + y₁], ...]; zero entry needs y₂ = 1 + y₁
        let q0 = sm(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let q1 = sm(&[&[-1.0, 1.0], &[1.0, 0.0]]);
        let q2 = sm(&[&[0.0, -1.0], &[-1.0, 1.0]]);
        let r = phase1_fkl(&[q0.clone(), q1.clone(), q2.clone()], 0, 1, &Phase1Options::default()).unwrap();
        // y₁ = 0, y₂ = 1 gives diag(1, 2) ⪰ 0
        match r {
            Phase1Outcome::Feasible { y, .. } => {
                let s = q0.axpy(y[0], &q1).axpy(y[1], &q2);
                assert!(s.get(0, 1).abs() < 1e-9);
                assert!(lambda_min(&s).unwrap() > -1e-7);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sdp_proves_infeasibility() {
        // Zeroing the entry needs y₁ = 1 + y₂ and then the (1,1) entry is −1 − y₂ < 0.
        let q0 = sm(&[&[0.0, 1.0], &[1.0, 1.0]]);
        let q1 = sm(&[&[-1.0, -1.0], &[-1.0, 0.0]]);
        let q2 = sm(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let r = phase1_fkl(&[q0, q1, q2], 0, 1, &Phase1Options::default()).unwrap();
        match r {
            Phase1Outcome::Infeasible { margin, reason } => {
                assert_eq!(reason, Phase1Reason::Sdp);
                assert!(margin > 1e-5);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn verdict_is_scale_invariant() {
        let q0 = sm(&[&[0.0, 1.0], &[1.0, 1.0]]);
        let q1 = sm(&[&[-1.0, -1.0], &[-1.0, 0.0]]);
        let q2 = sm(&[&[0.0, 1.0], &[1.0, 0.0]]);
        for s in [1e-3, 1.0, 1e3] {
            let q = [q0.scaled(s), q1.scaled(s), q2.scaled(s)];
            assert!(phase1_fkl(&q, 0, 1, &Phase1Options::default()).unwrap().is_infeasible());
        }
    }

    #[test]
    fn bad_indices_rejected() {
        assert!(phase1_fkl(&[SymMatrix::identity(2)], 1, 0, &Phase1Options::default()).is_err());
    }
}
