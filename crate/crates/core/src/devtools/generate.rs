//! Seeded generators for forest-structured test instances.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{QcqpConstraint, QcqpInstance, QuadraticForm};
use crate::sparsity::{analyze_forest, SparsityGraph};
use crate::symlin::{lambda_min, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Tridiagonal,
    Arrow,
    RandomTree,
    RandomForest { components: usize },
}

/// Fraction of edge entries zeroed in each matrix.
const ZERO_FRACTION: f64 = 0.2;

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Random labelled tree: vertex `j` attaches to a uniform earlier vertex,
/// then the labels are shuffled.
pub fn random_tree_edges(n: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut edges: Vec<(usize, usize)> = (1..n)
        .map(|j| {
            let i = rng.random_range(0..j);
            let (a, b) = (perm[i], perm[j]);
            (a.min(b), a.max(b))
        })
        .collect();
    edges.sort_unstable();
    edges
}

pub fn shape_edges(n: usize, shape: Shape, rng: &mut impl Rng) -> Result<Vec<(usize, usize)>> {
    Ok(match shape {
        Shape::Tridiagonal => (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect(),
        Shape::Arrow => (0..n.saturating_sub(1)).map(|i| (i, n - 1)).collect(),
        Shape::RandomTree => random_tree_edges(n, rng),
        Shape::RandomForest { components } => {
            if components == 0 || components > n {
                return Err(Error::InvalidArgument(format!("{components} components on {n} vertices")));
            }
            let mut edges = random_tree_edges(n, rng);
            for _ in 1..components {
                let t = rng.random_range(0..edges.len());
                edges.remove(t);
            }
            edges
        }
    })
}

/// Forest-patterned instance with `m` random constraints plus the unit ball
/// `‖x‖² ≤ 1`, no linear terms, and `x = 0` strictly feasible.
///
/// The objective diagonal is shifted so that `λ_min(Q⁰) ≤ −0.5`.
pub fn random_forest_qcqp(n: usize, m: usize, shape: Shape, sign_definite: bool, seed: u64) -> Result<QcqpInstance> {
    if n < 2 {
        return Err(Error::InvalidArgument("need n ≥ 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges = shape_edges(n, shape, &mut rng)?;
    let mut mats: Vec<SymMatrix> = (0..=m)
        .map(|_| SymMatrix::from_diagonal(&(0..n).map(|_| normal(&mut rng)).collect::<Vec<_>>()))
        .collect();
    for &(i, j) in &edges {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let mut any = false;
        for mat in mats.iter_mut() {
            if rng.random_bool(ZERO_FRACTION) {
                continue;
            }
            let v = if sign_definite { sign * normal(&mut rng).abs() } else { normal(&mut rng) };
            mat.set(i, j, v);
            any |= v != 0.0;
        }
        if !any {
            mats[0].set(i, j, sign * (0.5 + normal(&mut rng).abs()));
        }
    }
    let lmin = lambda_min(&mats[0])?;
    if lmin > -0.5 {
        mats[0] = mats[0].axpy(-(lmin + 0.5), &SymMatrix::identity(n));
    }
    let mut constraints: Vec<QcqpConstraint> = mats
        .drain(1..)
        .map(|q| QcqpConstraint::le(QuadraticForm::pure(q), rng.random_range(0.5..1.5)))
        .collect();
    constraints.push(QcqpConstraint::le(QuadraticForm::pure(SymMatrix::identity(n)), 1.0));
    QcqpInstance::new(QuadraticForm::pure(mats.remove(0)), constraints)
}

/// Trust-region instance `min xᵀQ⁰x + 2q₀ᵀx  s.t.  ‖x‖² ≤ 1`.
pub fn random_trs(n: usize, seed: u64) -> Result<QcqpInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q0 = SymMatrix::from_fn(n, |_, _| normal(&mut rng));
    let lin = DVector::from_fn(n, |_, _| normal(&mut rng));
    QcqpInstance::new(
        QuadraticForm::new(q0, lin)?,
        vec![QcqpConstraint::le(QuadraticForm::pure(SymMatrix::identity(n)), 1.0)],
    )
}

/// Tree instance where `(F_kl)` is feasible at one edge: there
/// `[Q⁰]_kl = 1`, `[Q¹]_kl = −1` and `Q¹` has no other off-diagonal entry,
/// so `y₁ = 1` zeroes the entry and a large ball multiplier makes `S(y)` PSD.
pub fn feasible_fkl_instance(n: usize, seed: u64) -> Result<(QcqpInstance, (usize, usize))> {
    if n < 2 {
        return Err(Error::InvalidArgument("need n ≥ 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges = random_tree_edges(n, &mut rng);
    let target = edges[rng.random_range(0..edges.len())];
    let mut q0 = SymMatrix::from_diagonal(&(0..n).map(|_| 1.0 + normal(&mut rng).abs()).collect::<Vec<_>>());
    let mut q1 = SymMatrix::from_diagonal(&(0..n).map(|_| normal(&mut rng)).collect::<Vec<_>>());
    let mut q2 = SymMatrix::from_diagonal(&(0..n).map(|_| normal(&mut rng)).collect::<Vec<_>>());
    for &(i, j) in &edges {
        if (i, j) == target {
            q0.set(i, j, 1.0);
            q1.set(i, j, -1.0);
        } else {
            q0.set(i, j, normal(&mut rng));
            q2.set(i, j, normal(&mut rng));
        }
    }
    let inst = QcqpInstance::new(
        QuadraticForm::pure(q0),
        vec![
            QcqpConstraint::le(QuadraticForm::pure(q1), rng.random_range(0.5..1.5)),
            QcqpConstraint::le(QuadraticForm::pure(q2), rng.random_range(0.5..1.5)),
            QcqpConstraint::le(QuadraticForm::pure(SymMatrix::identity(n)), 1.0),
        ],
    )?;
    Ok((inst, target))
}

fn check_acyclic(n: usize, edges: &[(usize, usize)]) -> Result<SparsityGraph> {
    let g = SparsityGraph::new(n, edges.iter().copied())?;
    if g.edges.len() != edges.len() || !analyze_forest(&g).is_forest {
        return Err(Error::CycleDetected);
    }
    Ok(g)
}

/// `Σ w (eᵢ + s eⱼ)(eᵢ + s eⱼ)ᵀ + Σ dᵢ eᵢeᵢᵀ` over explicit `(i, j, w, s)` terms.
pub fn psd_forest_matrix(n: usize, terms: &[(usize, usize, f64, f64)], diag: &[f64]) -> Result<SymMatrix> {
    let edges: Vec<(usize, usize)> = terms.iter().map(|t| (t.0, t.1)).collect();
    check_acyclic(n, &edges)?;
    if diag.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: diag.len() });
    }
    let mut m = SymMatrix::from_diagonal(diag);
    for &(i, j, w, s) in terms {
        m.set(i, i, m.get(i, i) + w);
        m.set(j, j, m.get(j, j) + w);
        m.set(i, j, m.get(i, j) + w * s);
    }
    Ok(m)
}

/// Random PSD matrix whose off-diagonal support is exactly `edges`, with
/// `w ∈ (0.1, 1)`, `s = ±1`, `d ∈ [0, 0.5]`.
pub fn random_psd_forest_matrix(n: usize, edges: &[(usize, usize)], seed: u64) -> Result<SymMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terms: Vec<(usize, usize, f64, f64)> = edges
        .iter()
        .map(|&(i, j)| {
            let w = rng.random_range(0.1..1.0);
            let s = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            (i.min(j), i.max(j), w, s)
        })
        .collect();
    let diag: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=0.5)).collect();
    psd_forest_matrix(n, &terms, &diag)
}

/// Tridiagonal matrix with random diagonal and superdiagonal magnitudes in `[0.1, 2)`.
pub fn random_tridiagonal(n: usize, seed: u64) -> SymMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let diag: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let mut m = SymMatrix::from_diagonal(&diag);
    for i in 0..n.saturating_sub(1) {
        let mag = rng.random_range(0.1..2.0);
        m.set(i, i + 1, if rng.random_bool(0.5) { mag } else { -mag });
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparsity::{build_graph, Classification};
    use crate::symlin::{numerical_rank, psd_check};

    #[test]
    fn tridiagonal_instances_classify() {
        for seed in 0..10 {
            let inst = random_forest_qcqp(6, 2, Shape::Tridiagonal, true, seed).unwrap();
            assert_eq!(inst.m(), 3);
            let fa = analyze_forest(&build_graph(&inst));
            assert_eq!(fa.classification, Classification::Tridiagonal);
            assert!(lambda_min(&inst.objective().quad).unwrap() <= -0.5 + 1e-9);
        }
    }

    #[test]
    fn arrow_edges() {
        let inst = random_forest_qcqp(5, 1, Shape::Arrow, false, 4).unwrap();
        let g = build_graph(&inst);
        assert_eq!(g.edges.into_iter().collect::<Vec<_>>(), vec![(0, 4), (1, 4), (2, 4), (3, 4)]);
    }

    #[test]
    fn forest_components() {
        for seed in 0..10 {
            let inst = random_forest_qcqp(7, 2, Shape::RandomForest { components: 2 }, true, seed).unwrap();
            assert_eq!(analyze_forest(&build_graph(&inst)).components.len(), 2);
        }
    }

    #[test]
    fn psd_forest_examples() {
        let m = psd_forest_matrix(2, &[(0, 1, 1.0, 1.0)], &[0.0, 0.0]).unwrap();
        assert_eq!(m, SymMatrix::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]).unwrap());
        assert_eq!(numerical_rank(&m, 1e-9).unwrap(), 1);

        for seed in 0..20 {
            let m = random_psd_forest_matrix(3, &[(0, 1), (1, 2)], seed).unwrap();
            assert!(psd_check(&m, 1e-12).unwrap());
            assert!(numerical_rank(&m, 1e-9).unwrap() >= 2);
        }

        let m = random_psd_forest_matrix(4, &[(0, 3), (1, 3), (2, 3)], 5).unwrap();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            assert_eq!(m.get(i, j), 0.0);
        }
        assert_eq!(random_psd_forest_matrix(3, &[(0, 1), (1, 2), (0, 2)], 0), Err(Error::CycleDetected));
    }

    #[test]
    fn generators_are_deterministic() {
        let a = random_forest_qcqp(6, 3, Shape::RandomTree, true, 11).unwrap();
        let b = random_forest_qcqp(6, 3, Shape::RandomTree, true, 11).unwrap();
        assert_eq!(a, b);
    }
}
