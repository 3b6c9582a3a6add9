//! Alternating closed-form updates for the ℓ2 objective with an RKHS ridge
//! penalty on the functional factors.
//!
//! Every block update takes a [`SketchPlan`]. The full-data updates are the
//! same routines called with [`SketchPlan::full`], so a sketched run with a
//! full-coverage plan follows exactly the same arithmetic.

use std::time::Instant;

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{solve_spd, JITTER_LADDER};
use crate::model::{FactorModel, Problem};
use crate::scalar::Scalar;
use crate::sketch::{SketchPlan, SketchSizes};
use crate::trajectory::{SnapshotRing, StopRule, Trajectory, TrajectoryPoint};

#[derive(Debug, Clone, PartialEq)]
pub struct AlsConfig {
    pub rank: usize,
    /// Ridge weight `λ′` on `Σ_r ‖ξ_r‖²_H`.
    pub penalty: f64,
    pub max_iters: usize,
    pub stop: StopRule,
    pub seed: u64,
    /// Relative diagonal jitter levels for the linear solves.
    pub jitter_ladder: Vec<f64>,
}

impl Default for AlsConfig {
    fn default() -> Self {
        AlsConfig {
            rank: 5,
            penalty: 1e-4,
            max_iters: 10,
            stop: StopRule::default(),
            seed: 0,
            jitter_ladder: JITTER_LADDER.to_vec(),
        }
    }
}

impl AlsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidConfig("rank must be at least 1".into()));
        }
        if !(self.penalty >= 0.0) {
            return Err(Error::InvalidConfig(format!("penalty must be >= 0, got {}", self.penalty)));
        }
        if self.jitter_ladder.is_empty() {
            return Err(Error::InvalidConfig("empty jitter ladder".into()));
        }
        Ok(())
    }
}

/// Starting point of a solver run.
#[derive(Debug, Clone, PartialEq)]
pub enum Init<T> {
    /// Seeded random loadings (see the solver docs for the distribution).
    Random,
    Model(FactorModel<T>),
}

/// Output of a solver run.
#[derive(Debug, Clone)]
pub struct FitReport<T> {
    pub model: FactorModel<T>,
    pub trajectory: Trajectory,
    /// Iterations actually executed.
    pub iterations: usize,
    /// Iteration whose model is returned (differs from `iterations` when the
    /// stop rule fired).
    pub returned_iteration: usize,
    pub stopped_early: bool,
    /// Largest relative jitter any linear solve needed.
    pub max_relative_jitter: f64,
    /// Sketched rows skipped because they were underdetermined.
    pub skipped_rows: usize,
    /// Zero columns replaced by random unit vectors during normalization.
    pub restarts: usize,
}

/// Result of a block least-squares update.
#[derive(Debug, Clone)]
pub struct BlockUpdate<T> {
    pub factor: Array2<T>,
    pub max_relative_jitter: f64,
    /// Rows left unchanged because the plan gave them too few equations.
    pub skipped: usize,
}

/// Groups plan entries by subject: `(subject, [entry indices])` in order of
/// first appearance.
fn entries_by_subject(plan: &SketchPlan) -> Vec<(usize, Vec<usize>)> {
    let mut out: Vec<(usize, Vec<usize>)> = Vec::new();
    for (h, &i) in plan.subjects.iter().enumerate() {
        match out.iter_mut().find(|(s, _)| *s == i) {
            Some((_, hs)) => hs.push(h),
            None => out.push((i, vec![h])),
        }
    }
    out
}

fn gather_block<T: Scalar>(x: &Array2<T>, rows: &[usize], cols: &[usize]) -> Array2<T> {
    x.select(Axis(0), rows).select(Axis(1), cols)
}

/// Least-squares update of the subject loadings `A`, row by row, using the
/// planned (feature, time) pairs. Subjects absent from the plan keep their
/// row from `a_prev`.
pub fn update_a<T: Scalar>(
    problem: &Problem<T>,
    b: &Array2<T>,
    theta: &Array2<T>,
    plan: &SketchPlan,
    a_prev: &Array2<T>,
    ladder: &[f64],
) -> Result<BlockUpdate<T>> {
    let rank = b.ncols();
    let xi_grid = problem.xi_on_grid(theta);
    let b_sel = b.select(Axis(0), &plan.features);
    let gram_b = b_sel.t().dot(&b_sel);
    let mut a = a_prev.clone();
    let mut max_jitter = 0.0f64;
    let mut skipped = 0;
    for (i, hs) in entries_by_subject(plan) {
        let xi_i = problem.subject_xi(&xi_grid, i);
        let x_i = problem.tensor.values(i);
        let mut normal = Array2::<T>::zeros((rank, rank));
        let mut rhs = Array1::<T>::zeros(rank);
        let mut rows = 0;
        for &h in &hs {
            let times = &plan.times[h];
            rows += plan.features.len() * times.len();
            let xi_e = xi_i.select(Axis(0), times);
            normal += &(&gram_b * &xi_e.t().dot(&xi_e));
            let m = gather_block(x_i, &plan.features, times).dot(&xi_e);
            rhs += &(&b_sel * &m).sum_axis(Axis(0));
        }
        if rows < rank {
            skipped += 1;
            continue;
        }
        let sol = solve_spd(&normal, &rhs.insert_axis(Axis(1)), ladder)?;
        max_jitter = max_jitter.max(sol.relative_jitter);
        a.row_mut(i).assign(&sol.solution.column(0));
    }
    Ok(BlockUpdate {
        factor: a,
        max_relative_jitter: max_jitter,
        skipped,
    })
}

/// Least-squares update of the feature loadings `B` over the planned
/// (subject, time) pairs. Features absent from the plan keep their row.
pub fn update_b<T: Scalar>(
    problem: &Problem<T>,
    a: &Array2<T>,
    theta: &Array2<T>,
    plan: &SketchPlan,
    b_prev: &Array2<T>,
    ladder: &[f64],
) -> Result<BlockUpdate<T>> {
    let rank = a.ncols();
    let xi_grid = problem.xi_on_grid(theta);
    let mut features = plan.features.clone();
    features.sort_unstable();
    features.dedup();
    let mut normal = Array2::<T>::zeros((rank, rank));
    let mut rhs = Array2::<T>::zeros((features.len(), rank));
    let mut rows = 0;
    for (h, &i) in plan.subjects.iter().enumerate() {
        let times = &plan.times[h];
        rows += times.len();
        let xi_e = problem.subject_xi(&xi_grid, i).select(Axis(0), times);
        let a_i = a.row(i);
        let outer = a_i.view().insert_axis(Axis(1)).dot(&a_i.view().insert_axis(Axis(0)));
        normal += &(&outer * &xi_e.t().dot(&xi_e));
        let m = gather_block(problem.tensor.values(i), &features, times).dot(&xi_e);
        rhs += &(&m * &a_i.insert_axis(Axis(0)));
    }
    let mut b = b_prev.clone();
    if rows < rank {
        return Ok(BlockUpdate {
            factor: b,
            max_relative_jitter: 0.0,
            skipped: features.len(),
        });
    }
    let sol = solve_spd(&normal, &rhs.t().to_owned(), ladder)?;
    for (col, &j) in features.iter().enumerate() {
        b.row_mut(j).assign(&sol.solution.column(col));
    }
    Ok(BlockUpdate {
        factor: b,
        max_relative_jitter: sol.relative_jitter,
        skipped: 0,
    })
}

/// Normal equations `(DᵀD + λ′ K̃) θ = Dᵀx` for the planned rows, assembled
/// without materializing `D`: block `(r, r′)` of `DᵀD` is
/// `K diag(w_{rr′}) K` with `w_{rr′}(s)` the summed `c_r c_r′` of the rows
/// observed at grid point `s`.
pub fn theta_normal_equations<T: Scalar>(
    problem: &Problem<T>,
    a: &Array2<T>,
    b: &Array2<T>,
    plan: &SketchPlan,
    penalty: T,
) -> (Array2<T>, Array1<T>) {
    let rank = a.ncols();
    let m = problem.grid_len();
    let b_sel = b.select(Axis(0), &plan.features);
    let gram_b = b_sel.t().dot(&b_sel);
    // weights[r * rank + r2] for r <= r2
    let mut weights = Array2::<T>::zeros((rank * rank, m));
    let mut y = Array2::<T>::zeros((rank, m));
    let mut touched = vec![false; m];
    for (h, &i) in plan.subjects.iter().enumerate() {
        let v = problem
            .tensor
            .values(i)
            .select(Axis(0), &plan.features)
            .t()
            .dot(&b_sel);
        let a_i = a.row(i);
        for &l in &plan.times[h] {
            let s = problem.positions[i][l];
            touched[s] = true;
            for r in 0..rank {
                y[[r, s]] += a_i[r] * v[[l, r]];
                for r2 in r..rank {
                    weights[[r * rank + r2, s]] += a_i[r] * a_i[r2] * gram_b[[r, r2]];
                }
            }
        }
    }
    let support: Vec<usize> = (0..m).filter(|&s| touched[s]).collect();
    let k_s = problem.gram.select(Axis(1), &support);
    let mut normal = Array2::<T>::zeros((rank * m, rank * m));
    let mut rhs = Array1::<T>::zeros(rank * m);
    for r in 0..rank {
        let y_s = y.row(r).select(Axis(0), &support);
        rhs.slice_mut(s![r * m..(r + 1) * m]).assign(&k_s.dot(&y_s));
        for r2 in r..rank {
            let w = weights.row(r * rank + r2).select(Axis(0), &support);
            let block = (&k_s * &w.insert_axis(Axis(0))).dot(&k_s.t());
            normal
                .slice_mut(s![r * m..(r + 1) * m, r2 * m..(r2 + 1) * m])
                .assign(&block);
            if r2 != r {
                normal
                    .slice_mut(s![r2 * m..(r2 + 1) * m, r * m..(r + 1) * m])
                    .assign(&block.t());
            }
        }
        if penalty != T::zero() {
            let mut diag = normal.slice_mut(s![r * m..(r + 1) * m, r * m..(r + 1) * m]);
            diag.scaled_add(penalty, &problem.gram);
        }
    }
    (normal, rhs)
}

/// Solution of the θ normal equations.
#[derive(Debug, Clone)]
pub struct ThetaUpdate<T> {
    /// `R × |T|`, row-major reshaping of `θ_vec`.
    pub theta: Array2<T>,
    /// Absolute jitter added to the diagonal.
    pub jitter: T,
    pub relative_jitter: f64,
}

/// Penalized least-squares update of the kernel coefficients over the
/// planned rows.
///
/// The planned rows only see `ξ_r` at the grid points they touch, so the
/// minimizer is a combination of kernel sections at those points: the
/// solve runs on that principal subsystem and `θ` is zero elsewhere. A
/// plan that covers every grid point solves the full system.
pub fn update_theta<T: Scalar>(
    problem: &Problem<T>,
    a: &Array2<T>,
    b: &Array2<T>,
    plan: &SketchPlan,
    penalty: T,
    ladder: &[f64],
) -> Result<ThetaUpdate<T>> {
    let rank = a.ncols();
    let m = problem.grid_len();
    let (normal, rhs) = theta_normal_equations(problem, a, b, plan, penalty);
    let mut touched = vec![false; m];
    for (h, &i) in plan.subjects.iter().enumerate() {
        for &l in &plan.times[h] {
            touched[problem.positions[i][l]] = true;
        }
    }
    let support: Vec<usize> = (0..m).filter(|&s| touched[s]).collect();
    let mut theta = Array2::<T>::zeros((rank, m));
    if support.len() == m {
        let sol = solve_spd(&normal, &rhs.insert_axis(Axis(1)), ladder)?;
        theta.assign(&Array2::from_shape_vec((rank, m), sol.solution.column(0).to_vec()).expect("theta shape"));
        return Ok(ThetaUpdate {
            theta,
            jitter: sol.jitter,
            relative_jitter: sol.relative_jitter,
        });
    }
    let idx: Vec<usize> = (0..rank).flat_map(|r| support.iter().map(move |&s| r * m + s)).collect();
    let sub = normal.select(Axis(0), &idx).select(Axis(1), &idx);
    let sub_rhs = rhs.select(Axis(0), &idx).insert_axis(Axis(1));
    let sol = solve_spd(&sub, &sub_rhs, ladder)?;
    for (k, &c) in idx.iter().enumerate() {
        theta[[c / m, c % m]] = sol.solution[[k, 0]];
    }
    Ok(ThetaUpdate {
        theta,
        jitter: sol.jitter,
        relative_jitter: sol.relative_jitter,
    })
}

/// Column norms and the columns that had to be restarted.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization<T> {
    pub scales: Vec<T>,
    pub restarted: Vec<usize>,
}

/// Scales every column to unit ℓ2 norm. Zero (or non-finite) columns are
/// replaced by a random nonnegative unit vector and reported.
pub fn normalize_columns<T: Scalar, R: Rng + ?Sized>(m: &mut Array2<T>, rng: &mut R) -> Normalization<T> {
    let mut scales = Vec::with_capacity(m.ncols());
    let mut restarted = Vec::new();
    for (r, mut col) in m.columns_mut().into_iter().enumerate() {
        let norm = col.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt();
        if norm > T::zero() && norm.is_finite() {
            col.mapv_inplace(|v| v / norm);
            scales.push(norm);
        } else {
            col.mapv_inplace(|_| T::lit(rng.random::<f64>()));
            let fresh = col.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt();
            if fresh > T::zero() {
                col.mapv_inplace(|v| v / fresh);
            } else {
                col[0] = T::one();
            }
            scales.push(T::zero());
            restarted.push(r);
        }
    }
    Normalization { scales, restarted }
}

/// Flips columns so the largest-magnitude entry of each column of `a` is
/// positive, flipping the matching column of `b` to keep every product.
pub fn fix_signs<T: Scalar>(a: &mut Array2<T>, b: &mut Array2<T>) {
    for r in 0..a.ncols() {
        let lead = a
            .column(r)
            .iter()
            .copied()
            .fold(T::zero(), |best, v| if v.abs() > best.abs() { v } else { best });
        if lead < T::zero() {
            a.column_mut(r).mapv_inplace(|v| -v);
            b.column_mut(r).mapv_inplace(|v| -v);
        }
    }
}

/// Seeded random start: `A`, `B` with i.i.d. uniform(0, 1) entries and
/// unit columns.
pub(crate) fn random_loadings<T: Scalar, R: Rng + ?Sized>(
    n: usize,
    p: usize,
    rank: usize,
    rng: &mut R,
) -> (Array2<T>, Array2<T>) {
    let mut a = Array2::from_shape_simple_fn((n, rank), || T::lit(rng.random::<f64>()));
    let mut b = Array2::from_shape_simple_fn((p, rank), || T::lit(rng.random::<f64>()));
    normalize_columns(&mut a, rng);
    normalize_columns(&mut b, rng);
    (a, b)
}

/// Rank-`R` decomposition by alternating least squares: update `A`,
/// normalize, update `B`, normalize, update `θ`, until `max_iters` or the
/// stop rule fires.
///
/// The random start draws `A`, `B` uniform(0, 1) with unit columns and then
/// solves for `θ` exactly, so iteration 0 already fits the data as well as
/// the random loadings allow.
pub fn rkhs_td<T: Scalar>(
    problem: &Problem<T>,
    config: &AlsConfig,
    init: Init<T>,
) -> Result<FitReport<T>> {
    run_als(problem, config, init, &SketchSizes::Full, false)
}

/// Shared ALS loop; `sizes` selects the per-iteration sampling plan.
pub(crate) fn run_als<T: Scalar>(
    problem: &Problem<T>,
    config: &AlsConfig,
    init: Init<T>,
    sizes: &SketchSizes,
    sketch_ab: bool,
) -> Result<FitReport<T>> {
    config.validate()?;
    sizes.validate()?;
    let start = Instant::now();
    let ladder = &config.jitter_ladder;
    let penalty = T::lit(config.penalty);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut plan_rng = ChaCha8Rng::seed_from_u64(config.seed);
    plan_rng.set_stream(1);
    let full = SketchPlan::full(problem.tensor);
    let mut max_jitter = 0.0f64;

    let mut model = match init {
        Init::Model(m) => {
            problem.check_model(&m)?;
            if m.rank() != config.rank {
                return Err(Error::InvalidConfig(format!(
                    "initial model has rank {}, config asks for {}",
                    m.rank(),
                    config.rank
                )));
            }
            m
        }
        Init::Random => {
            let (a, b) = random_loadings(problem.n(), problem.p(), config.rank, &mut rng);
            let th = update_theta(problem, &a, &b, &full, penalty, ladder)?;
            max_jitter = max_jitter.max(th.relative_jitter);
            FactorModel::new(a, b, th.theta, problem.grid.clone(), problem.kernel)?
        }
    };

    let mut history = vec![problem.relative_loss(&model)?.as_f64()];
    let mut trajectory = vec![TrajectoryPoint {
        iteration: 0,
        loss: history[0],
        wall_time_sec: start.elapsed().as_secs_f64(),
        plan_seed: None,
    }];
    let mut ring = SnapshotRing::new(config.stop.window);
    ring.push(0, &model);
    let mut skipped_rows = 0;
    let mut restarts = 0;
    let mut iterations = 0;

    for it in 1..=config.max_iters {
        let (plan, plan_seed) = match sizes {
            SketchSizes::Full => (full.clone(), None),
            SketchSizes::Sampled { s1, s2, s3 } => {
                let seed: u64 = plan_rng.random();
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                (SketchPlan::sample(problem.tensor, *s1, *s2, *s3, &mut r)?.with_seed(seed), Some(seed))
            }
        };
        let ab_plan = if sketch_ab { &plan } else { &full };

        let upd = update_a(problem, &model.b, &model.theta, ab_plan, &model.a, ladder)?;
        max_jitter = max_jitter.max(upd.max_relative_jitter);
        skipped_rows += upd.skipped;
        model.a = upd.factor;
        restarts += normalize_columns(&mut model.a, &mut rng).restarted.len();

        let upd = update_b(problem, &model.a, &model.theta, ab_plan, &model.b, ladder)?;
        max_jitter = max_jitter.max(upd.max_relative_jitter);
        skipped_rows += upd.skipped;
        model.b = upd.factor;
        restarts += normalize_columns(&mut model.b, &mut rng).restarted.len();
        fix_signs(&mut model.a, &mut model.b);

        let th = update_theta(problem, &model.a, &model.b, &plan, penalty, ladder)?;
        max_jitter = max_jitter.max(th.relative_jitter);
        model.theta = th.theta;

        iterations = it;
        let loss = problem.relative_loss(&model)?.as_f64();
        history.push(loss);
        trajectory.push(TrajectoryPoint {
            iteration: it,
            loss,
            wall_time_sec: start.elapsed().as_secs_f64(),
            plan_seed,
        });
        ring.push(it, &model);
        if config.stop.fires(&history) {
            let (returned, m) = ring.oldest().cloned().expect("ring holds the current model");
            return Ok(FitReport {
                model: m,
                trajectory,
                iterations,
                returned_iteration: returned,
                stopped_early: true,
                max_relative_jitter: max_jitter,
                skipped_rows,
                restarts,
            });
        }
    }
    Ok(FitReport {
        model,
        trajectory,
        iterations,
        returned_iteration: iterations,
        stopped_early: false,
        max_relative_jitter: max_jitter,
        skipped_rows,
        restarts,
    })
}
