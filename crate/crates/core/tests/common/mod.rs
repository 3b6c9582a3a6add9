#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unaligned_cp::tensor::VectorizationMap;
use unaligned_cp::{FactorModel, KernelSpec, Problem, SketchPlan, UnalignedTensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Ragged tensor whose times come from a shared pool of `pool` points, so
/// subjects overlap on some grid points.
pub fn ragged(seed: u64, n: usize, p: usize, min_t: usize, max_t: usize, pool: usize) -> UnalignedTensor<f64> {
    let mut r = rng(seed);
    let points: Vec<f64> = (0..pool).map(|k| (k as f64 + 0.5) / pool as f64).collect();
    let mut times = Vec::new();
    let mut values = Vec::new();
    for _ in 0..n {
        let m = r.random_range(min_t..=max_t);
        let mut idx = rand::seq::index::sample(&mut r, pool, m).into_vec();
        idx.sort_unstable();
        times.push(idx.iter().map(|&k| points[k]).collect::<Vec<_>>());
        values.push(Array2::from_shape_simple_fn((p, m), || r.random_range(-1.0..1.0)));
    }
    UnalignedTensor::new(p, times, values).unwrap()
}

pub fn random_model(problem: &Problem<f64>, rank: usize, seed: u64, positive: bool) -> FactorModel<f64> {
    let mut r = rng(seed);
    let lo = if positive { 0.05 } else { -1.0 };
    let a = Array2::from_shape_simple_fn((problem.n(), rank), || r.random_range(lo..1.0));
    let b = Array2::from_shape_simple_fn((problem.p(), rank), || r.random_range(lo..1.0));
    let theta = Array2::from_shape_simple_fn((rank, problem.grid_len()), || r.random_range(lo..1.0));
    FactorModel::new(a, b, theta, problem.grid.clone(), problem.kernel).unwrap()
}

pub fn to_na(m: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

pub fn to_na_vec(v: &Array1<f64>) -> DVector<f64> {
    DVector::from_iterator(v.len(), v.iter().copied())
}

/// Least squares `min ‖M z − y‖` through an SVD.
pub fn lstsq(m: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    m.clone().svd(true, true).solve(y, 1e-13).unwrap()
}

/// Explicit 0/1 row-sampling matrix of a plan against vectorization order.
pub fn explicit_sketch(plan: &SketchPlan, map: &VectorizationMap) -> Array2<f64> {
    let rows = plan.row_indices(map);
    let mut s = Array2::zeros((rows.len(), map.len()));
    for (k, &c) in rows.iter().enumerate() {
        s[[k, c]] = 1.0;
    }
    s
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let num = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

/// Noiseless rank-one data `a_i b_j ξ(t)` with a smooth positive `ξ`.
pub fn rank_one(seed: u64, n: usize, p: usize, min_t: usize, max_t: usize) -> (UnalignedTensor<f64>, Vec<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let a: Vec<f64> = (0..n).map(|_| r.random_range(0.5..1.5)).collect();
    let b: Vec<f64> = (0..p).map(|_| r.random_range(0.5..1.5)).collect();
    let xi = |t: f64| 1.0 + 0.5 * (std::f64::consts::PI * t).cos();
    let pool = 40;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for i in 0..n {
        let m = r.random_range(min_t..=max_t);
        let mut idx = rand::seq::index::sample(&mut r, pool, m).into_vec();
        idx.sort_unstable();
        let t: Vec<f64> = idx.iter().map(|&k| k as f64 / (pool - 1) as f64).collect();
        values.push(Array2::from_shape_fn((p, m), |(j, l)| a[i] * b[j] * xi(t[l])));
        times.push(t);
    }
    (UnalignedTensor::new(p, times, values).unwrap(), a, b)
}

pub fn problem(x: &UnalignedTensor<f64>, kernel: KernelSpec) -> Problem<'_, f64> {
    Problem::new(x, kernel).unwrap()
}
