//! Gradient descent on generalized (non-Gaussian) losses with joint norm
//! scaling and projection onto the feasible set.

use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::als::{random_loadings, FitReport, Init};
use crate::error::{Error, Result};
use crate::losses::{clip_gradient, LossSpec};
use crate::model::{rkhs_norms_sq, FactorModel, Problem};
use crate::scalar::Scalar;
use crate::sketch::{SketchPlan, SketchSizes};
use crate::trajectory::{SnapshotRing, StopRule, TrajectoryPoint};

/// Below this RKHS norm a functional component is considered dead.
pub const DEAD_COMPONENT_NORM: f64 = 1e-14;

/// Loss ratio (relative to the initial loss magnitude) that aborts a run.
pub const DIVERGENCE_FACTOR: f64 = 1e3;

#[derive(Debug, Clone, PartialEq)]
pub struct GdConfig {
    pub rank: usize,
    /// Learning rate `α`.
    pub learning_rate: f64,
    /// Number of epochs; the loss is evaluated once per epoch.
    pub epochs: usize,
    pub iters_per_epoch: usize,
    /// Stop rule over the per-epoch losses.
    pub stop: StopRule,
    pub seed: u64,
}

impl Default for GdConfig {
    fn default() -> Self {
        GdConfig {
            rank: 5,
            learning_rate: 0.4,
            epochs: 15,
            iters_per_epoch: 10,
            stop: StopRule::default(),
            seed: 0,
        }
    }
}

impl GdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidConfig("rank must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.iters_per_epoch == 0 {
            return Err(Error::InvalidConfig("iters_per_epoch must be at least 1".into()));
        }
        Ok(())
    }
}

/// Gradients of the loss with respect to the three factor blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    /// `n × R`.
    pub a: Array2<T>,
    /// `p × R`.
    pub b: Array2<T>,
    /// `R × |T|`, same layout as `θ`.
    pub theta: Array2<T>,
}

impl<T: Scalar> Gradients<T> {
    /// Clips each block separately to norm `c`.
    pub fn clip(&mut self, c: T) {
        clip_gradient(&mut self.a, c);
        clip_gradient(&mut self.b, c);
        clip_gradient(&mut self.theta, c);
    }
}

/// Mean pairwise loss `(1/|Ω|) Σ f(X̂_ij(t), X_ij(t))`.
pub fn generalized_loss<T: Scalar>(problem: &Problem<T>, model: &FactorModel<T>, loss: &LossSpec<T>) -> Result<T> {
    problem.check_model(model)?;
    loss.validate()?;
    let mut total = T::zero();
    for (pred, obs) in problem.predictions(model).iter().zip(problem.tensor.all_values()) {
        loss.check_all(pred.iter().zip(obs.iter()))?;
        total += pred
            .iter()
            .zip(obs.iter())
            .fold(T::zero(), |acc, (&m, &x)| acc + loss.value_unchecked(m, x));
    }
    Ok(total / T::from_count(problem.omega()))
}

/// Gradients restricted to the rows of `plan`. Term `(h, j, l)` contributes
/// `weights[h] · ∂f/∂m`; block `a`/`b` is then scaled by `scale_ab` and
/// `theta` by `scale_theta`.
pub(crate) fn plan_gradients<T: Scalar>(
    problem: &Problem<T>,
    model: &FactorModel<T>,
    loss: &LossSpec<T>,
    plan: &SketchPlan,
    weights: Option<&[T]>,
    scale_ab: T,
    scale_theta: T,
) -> Result<Gradients<T>> {
    let rank = model.rank();
    let m = problem.grid_len();
    let xi_grid = problem.xi_on_grid(&model.theta);
    let b_sel = model.b.select(Axis(0), &plan.features);
    let mut ga = Array2::<T>::zeros((problem.n(), rank));
    let mut gb = Array2::<T>::zeros((problem.p(), rank));
    // y[r, s] accumulates the kernel weights of grid point s
    let mut y = Array2::<T>::zeros((rank, m));
    for (h, &i) in plan.subjects.iter().enumerate() {
        let times = &plan.times[h];
        let pos: Vec<usize> = times.iter().map(|&l| problem.positions[i][l]).collect();
        let xi_e = xi_grid.select(Axis(0), &pos);
        let a_i = model.a.row(i);
        let pred = (&b_sel * &a_i.insert_axis(Axis(0))).dot(&xi_e.t());
        let x_i = problem.tensor.values(i);
        let w = weights.map_or(T::one(), |w| w[h]);
        let mut g = Array2::<T>::zeros(pred.dim());
        for (jj, &j) in plan.features.iter().enumerate() {
            for (ll, &l) in times.iter().enumerate() {
                g[[jj, ll]] = w * loss.dmodel(pred[[jj, ll]], x_i[[j, l]])?;
            }
        }
        let gx = g.dot(&xi_e);
        let gtb = g.t().dot(&b_sel);
        for r in 0..rank {
            let mut acc = T::zero();
            for jj in 0..plan.features.len() {
                acc += b_sel[[jj, r]] * gx[[jj, r]];
                gb[[plan.features[jj], r]] += a_i[r] * gx[[jj, r]];
            }
            ga[[i, r]] += acc;
            for (ll, &s) in pos.iter().enumerate() {
                y[[r, s]] += a_i[r] * gtb[[ll, r]];
            }
        }
    }
    ga.mapv_inplace(|v| v * scale_ab);
    gb.mapv_inplace(|v| v * scale_ab);
    // K is symmetric, so Dᵀg for block r is K · y_r
    let mut gt = y.dot(&problem.gram);
    gt.mapv_inplace(|v| v * scale_theta);
    Ok(Gradients { a: ga, b: gb, theta: gt })
}

/// Full gradients `(1/|Ω|) · Dᵀ f′` for all three blocks.
pub fn gradients<T: Scalar>(problem: &Problem<T>, model: &FactorModel<T>, loss: &LossSpec<T>) -> Result<Gradients<T>> {
    problem.check_model(model)?;
    let plan = SketchPlan::full(problem.tensor);
    let scale = T::one() / T::from_count(problem.omega());
    plan_gradients(problem, model, loss, &plan, None, scale, scale)
}

pub fn grad_a<T: Scalar>(problem: &Problem<T>, model: &FactorModel<T>, loss: &LossSpec<T>) -> Result<Array2<T>> {
    Ok(gradients(problem, model, loss)?.a)
}

pub fn grad_b<T: Scalar>(problem: &Problem<T>, model: &FactorModel<T>, loss: &LossSpec<T>) -> Result<Array2<T>> {
    Ok(gradients(problem, model, loss)?.b)
}

/// Gradient in `θ`, shaped `R × |T|` (row-major reshape of the stacked vector).
pub fn grad_theta<T: Scalar>(problem: &Problem<T>, model: &FactorModel<T>, loss: &LossSpec<T>) -> Result<Array2<T>> {
    Ok(gradients(problem, model, loss)?.theta)
}

/// What [`scale_and_project`] changed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Projection {
    /// Components rescaled to product norm `λ`.
    pub rescaled: Vec<usize>,
    /// Components whose functional factor was reinitialized.
    pub reinitialized: Vec<usize>,
    /// Violating components left alone because a factor norm was zero.
    pub skipped: Vec<usize>,
}

fn col_norm<T: Scalar>(m: &Array2<T>, r: usize) -> T {
    m.column(r).iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt()
}

/// Projects onto the feasible set: clamps to the nonnegative orthant when
/// the loss requires it, then maps every component whose product norm
/// `‖a_r‖‖b_r‖‖ξ_r‖_H` exceeds `λ` to factors of norm `λ^{1/3}` each.
///
/// Clamping first means both constraints hold on return, since rescaling a
/// nonnegative vector keeps it nonnegative. A component with
/// `‖ξ_r‖_H < 1e-14` gets small random nonnegative coefficients.
pub fn scale_and_project<T: Scalar, R: Rng + ?Sized>(
    model: &mut FactorModel<T>,
    gram: &Array2<T>,
    loss: &LossSpec<T>,
    rng: &mut R,
) -> Projection {
    let mut out = Projection::default();
    if loss.nonneg {
        let clamp = |v: T| if v < T::zero() { T::zero() } else { v };
        model.a.mapv_inplace(clamp);
        model.b.mapv_inplace(clamp);
        model.theta.mapv_inplace(clamp);
    }
    let dead = T::lit(DEAD_COMPONENT_NORM);
    for r in 0..model.rank() {
        let norm_xi = rkhs_norms_sq(&model.theta.slice(ndarray::s![r..r + 1, ..]).to_owned(), gram)[0].sqrt();
        if norm_xi < dead {
            let scale = T::lit(1e-3);
            model
                .theta
                .row_mut(r)
                .mapv_inplace(|_| scale * T::lit(rng.random::<f64>()));
            out.reinitialized.push(r);
        }
    }
    let norms_xi: Vec<T> = rkhs_norms_sq(&model.theta, gram).into_iter().map(|v| v.sqrt()).collect();
    let target = loss.norm_bound.cbrt();
    for r in 0..model.rank() {
        let na = col_norm(&model.a, r);
        let nb = col_norm(&model.b, r);
        let nx = norms_xi[r];
        if na * nb * nx > loss.norm_bound {
            if na == T::zero() || nb == T::zero() || nx == T::zero() {
                out.skipped.push(r);
                continue;
            }
            model.a.column_mut(r).mapv_inplace(|v| v * target / na);
            model.b.column_mut(r).mapv_inplace(|v| v * target / nb);
            model.theta.row_mut(r).mapv_inplace(|v| v * target / nx);
            out.rescaled.push(r);
        }
    }
    out
}

/// Random feasible start for the gradient solvers: `A`, `B`, `θ` uniform(0, 1)
/// with unit columns in `A` and `B`, then each component scaled so that the
/// mean reconstruction matches the mean observation (the overall scale is
/// split evenly across the three factors' product).
pub(crate) fn random_gd_model<T: Scalar, R: Rng + ?Sized>(
    problem: &Problem<T>,
    rank: usize,
    rng: &mut R,
) -> Result<FactorModel<T>> {
    let (a, b) = random_loadings::<T, _>(problem.n(), problem.p(), rank, rng);
    let theta = Array2::from_shape_simple_fn((rank, problem.grid_len()), || T::lit(rng.random::<f64>()));
    let mut model = FactorModel::new(a, b, theta, problem.grid.clone(), problem.kernel)?;
    let data_mean = problem
        .tensor
        .all_values()
        .iter()
        .map(|v| v.sum())
        .fold(T::zero(), |acc, v| acc + v)
        / T::from_count(problem.omega());
    let pred_mean = problem
        .predictions(&model)
        .iter()
        .map(|v| v.sum())
        .fold(T::zero(), |acc, v| acc + v)
        / T::from_count(problem.omega());
    if data_mean > T::zero() && pred_mean > T::zero() {
        let f = data_mean / pred_mean;
        model.theta.mapv_inplace(|v| v * f);
    }
    Ok(model)
}

/// How each iteration's gradient is obtained.
pub(crate) enum GradientSource {
    Full,
    Sampled {
        sizes: SketchSizes,
        importance_weighting: bool,
        literal_step_factor: bool,
    },
}

/// Full-gradient descent with scaling and projection. The loss is
/// evaluated at every epoch boundary; the stop rule and the divergence
/// check look at those per-epoch values.
pub fn grkhs_td<T: Scalar>(
    problem: &Problem<T>,
    loss: &LossSpec<T>,
    config: &GdConfig,
    init: Init<T>,
) -> Result<FitReport<T>> {
    run_gd(problem, loss, config, init, GradientSource::Full)
}

pub(crate) fn run_gd<T: Scalar>(
    problem: &Problem<T>,
    loss: &LossSpec<T>,
    config: &GdConfig,
    init: Init<T>,
    source: GradientSource,
) -> Result<FitReport<T>> {
    config.validate()?;
    loss.validate()?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut plan_rng = ChaCha8Rng::seed_from_u64(config.seed);
    plan_rng.set_stream(1);
    let alpha = T::lit(config.learning_rate);
    let omega = T::from_count(problem.omega());
    let full = SketchPlan::full(problem.tensor);

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
        Init::Random => random_gd_model(problem, config.rank, &mut rng)?,
    };
    let mut restarts = scale_and_project(&mut model, &problem.gram, loss, &mut rng)
        .reinitialized
        .len();

    let initial = generalized_loss(problem, &model, loss)?.as_f64();
    let mut history = vec![initial];
    let mut trajectory = vec![TrajectoryPoint {
        iteration: 0,
        loss: initial,
        wall_time_sec: start.elapsed().as_secs_f64(),
        plan_seed: None,
    }];
    let mut ring = SnapshotRing::new(config.stop.window);
    ring.push(0, &model);
    let mut iterations = 0;

    for epoch in 1..=config.epochs {
        let mut last_seed = None;
        for _ in 0..config.iters_per_epoch {
            let mut grads = match &source {
                GradientSource::Full => {
                    let s = T::one() / omega;
                    plan_gradients(problem, &model, loss, &full, None, s, s)?
                }
                GradientSource::Sampled {
                    sizes,
                    importance_weighting,
                    literal_step_factor,
                } => {
                    let (plan, seed) = match *sizes {
                        SketchSizes::Full => (full.clone(), None),
                        SketchSizes::Sampled { s1, s2, s3 } => {
                            let seed: u64 = plan_rng.random();
                            let mut r = ChaCha8Rng::seed_from_u64(seed);
                            (SketchPlan::sample(problem.tensor, s1, s2, s3, &mut r)?.with_seed(seed), Some(seed))
                        }
                    };
                    last_seed = seed;
                    crate::sgd::stochastic_grads_with(
                        problem,
                        &model,
                        loss,
                        &plan,
                        *importance_weighting,
                        *literal_step_factor,
                        loss.clip,
                    )?
                }
            };
            if matches!(source, GradientSource::Full) {
                if let Some(c) = loss.clip {
                    grads.clip(c);
                }
            }
            model.a.scaled_add(-alpha, &grads.a);
            model.b.scaled_add(-alpha, &grads.b);
            model.theta.scaled_add(-alpha, &grads.theta);
            restarts += scale_and_project(&mut model, &problem.gram, loss, &mut rng)
                .reinitialized
                .len();
            iterations += 1;
        }
        let value = generalized_loss(problem, &model, loss)?.as_f64();
        if !value.is_finite() || value > DIVERGENCE_FACTOR * initial.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::Diverged {
                iteration: iterations,
                loss: value,
                initial,
            });
        }
        history.push(value);
        trajectory.push(TrajectoryPoint {
            iteration: epoch,
            loss: value,
            wall_time_sec: start.elapsed().as_secs_f64(),
            plan_seed: last_seed,
        });
        ring.push(epoch, &model);
        if config.stop.fires(&history) {
            let (returned, m) = ring.oldest().cloned().expect("ring holds the current model");
            return Ok(FitReport {
                model: m,
                trajectory,
                iterations: epoch,
                returned_iteration: returned,
                stopped_early: true,
                max_relative_jitter: 0.0,
                skipped_rows: 0,
                restarts,
            });
        }
    }
    Ok(FitReport {
        model,
        trajectory,
        iterations: config.epochs,
        returned_iteration: config.epochs,
        stopped_early: false,
        max_relative_jitter: 0.0,
        skipped_rows: 0,
        restarts,
    })
}
