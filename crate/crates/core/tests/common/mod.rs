//! Independent projection oracle shared by the integration tests.

#![allow(dead_code)]

use lsm_sweep::numlin::{DenseMatrix, DenseVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random polyhedron `{x : Nx ≤ b}` with a known interior point, a random
/// SPD metric and a random point to project.
pub struct Case {
    pub normals: DenseMatrix,
    pub offsets: DenseVector,
    pub metric: DenseMatrix,
    pub y: DenseVector,
}

pub fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=6);
    let p = rng.random_range(1..=8);
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let normals = DenseMatrix::from_fn(p, n, |_, _| u(-1.0, 1.0));
    let x0 = DenseVector::from_fn(n, |_, _| u(-1.0, 1.0));
    let slack = DenseVector::from_fn(p, |_, _| u(0.0, 1.0));
    let offsets = &normals * &x0 + slack;
    let a = DenseMatrix::from_fn(n, n, |_, _| u(-1.0, 1.0));
    let metric = &a * a.transpose() + DenseMatrix::identity(n, n) * 0.5;
    let y = DenseVector::from_fn(n, |_, _| u(-3.0, 3.0));
    Case { normals, offsets, metric, y }
}

/// Projection by enumerating every candidate active set and keeping the one
/// whose equality-constrained minimizer is feasible with nonnegative
/// multipliers.
pub fn brute_force_projection(c: &Case) -> DenseVector {
    let (p, n) = c.normals.shape();
    let mut best: Option<(f64, DenseVector)> = None;
    for mask in 0u32..(1 << p) {
        let w: Vec<usize> = (0..p).filter(|i| mask & (1 << i) != 0).collect();
        if w.len() > n {
            continue;
        }
        let k = w.len();
        let mut kkt = DenseMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&c.metric);
        let mut rhs = DenseVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(&c.metric * &c.y));
        for (r, &i) in w.iter().enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = c.normals[(i, j)];
                kkt[(j, n + r)] = c.normals[(i, j)];
            }
            rhs[n + r] = c.offsets[i];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        if !sol.iter().all(|v| v.is_finite()) {
            continue;
        }
        let x = sol.rows(0, n).into_owned();
        let lambda_ok = sol.rows(n, k).iter().all(|&l| l >= -1e-9);
        let feasible = (&c.normals * &x - &c.offsets).iter().all(|&g| g <= 1e-9);
        if lambda_ok && feasible {
            let d = &x - &c.y;
            let dist = d.dot(&(&c.metric * &d));
            if best.as_ref().is_none_or(|(b, _)| dist < *b) {
                best = Some((dist, x));
            }
        }
    }
    best.expect("a feasible polyhedron has a projection").1
}

pub fn metric_norm(s: &DenseMatrix, v: &DenseVector) -> f64 {
    v.dot(&(s * v)).sqrt()
}
