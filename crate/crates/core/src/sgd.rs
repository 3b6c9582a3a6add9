//! Stochastic gradients over sampled sub-tensors.

use crate::als::{FitReport, Init};
use crate::error::{Error, Result};
use crate::gcp::{plan_gradients, run_gd, GdConfig, GradientSource, Gradients};
use crate::losses::LossSpec;
use crate::model::{FactorModel, Problem};
use crate::scalar::Scalar;
use crate::sketch::{SketchPlan, SketchSizes};

#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    pub gd: GdConfig,
    pub sizes: SketchSizes,
    /// Weight term `(i, j, t)` by `n·p·|T_i|/|Ω|` so the estimator is exactly
    /// unbiased when the `|T_i|` differ.
    pub importance_weighting: bool,
    /// Use the literal step of the reference algorithm: `A`, `B` gradients
    /// normalized by `1/|Ω|`, `θ` by `1/|sampled|`, all clipped, then all
    /// multiplied by `|Ω|/|sampled|`.
    pub literal_step_factor: bool,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            gd: GdConfig::default(),
            sizes: SketchSizes::Sampled { s1: 10, s2: 20, s3: 10 },
            importance_weighting: false,
            literal_step_factor: false,
        }
    }
}

fn importance_weights<T: Scalar>(problem: &Problem<T>, plan: &SketchPlan) -> Vec<T> {
    let base = T::from_count(problem.n() * problem.p()) / T::from_count(problem.omega());
    plan.subjects
        .iter()
        .map(|&i| base * T::from_count(problem.tensor.times(i).len()))
        .collect()
}

/// Gradient estimate from the sampled terms only, every block normalized
/// by `1/|sampled|` with `|sampled| = |Ĵ| · Σ_h |T̂_h|`.
///
/// With a full-coverage plan and uniform weighting this equals the full
/// gradient exactly.
pub fn stochastic_grads<T: Scalar>(
    problem: &Problem<T>,
    model: &FactorModel<T>,
    loss: &LossSpec<T>,
    plan: &SketchPlan,
    importance_weighting: bool,
) -> Result<Gradients<T>> {
    stochastic_grads_with(problem, model, loss, plan, importance_weighting, false, None)
}

/// [`stochastic_grads`] with optional per-block clipping and the literal
/// step factor of the reference algorithm.
pub fn stochastic_grads_with<T: Scalar>(
    problem: &Problem<T>,
    model: &FactorModel<T>,
    loss: &LossSpec<T>,
    plan: &SketchPlan,
    importance_weighting: bool,
    literal_step_factor: bool,
    clip: Option<T>,
) -> Result<Gradients<T>> {
    problem.check_model(model)?;
    plan.validate(problem.tensor)?;
    if plan.is_empty() {
        return Err(Error::EmptyPlan);
    }
    let weights = importance_weighting.then(|| importance_weights(problem, plan));
    let sampled = T::from_count(plan.sampled_count());
    let omega = T::from_count(problem.omega());
    if literal_step_factor {
        let mut g = plan_gradients(
            problem,
            model,
            loss,
            plan,
            weights.as_deref(),
            T::one() / omega,
            T::one() / sampled,
        )?;
        if let Some(c) = clip {
            g.clip(c);
        }
        let f = omega / sampled;
        g.a.mapv_inplace(|v| v * f);
        g.b.mapv_inplace(|v| v * f);
        g.theta.mapv_inplace(|v| v * f);
        Ok(g)
    } else {
        let s = T::one() / sampled;
        let mut g = plan_gradients(problem, model, loss, plan, weights.as_deref(), s, s)?;
        if let Some(c) = clip {
            g.clip(c);
        }
        Ok(g)
    }
}

/// Stochastic gradient descent with scaling and projection. Each iteration
/// draws a fresh plan; the full-data loss is evaluated only at epoch ends.
pub fn s_grkhs_td<T: Scalar>(
    problem: &Problem<T>,
    loss: &LossSpec<T>,
    config: &SgdConfig,
    init: Init<T>,
) -> Result<FitReport<T>> {
    config.sizes.validate()?;
    run_gd(
        problem,
        loss,
        &config.gd,
        init,
        GradientSource::Sampled {
            sizes: config.sizes,
            importance_weighting: config.importance_weighting,
            literal_step_factor: config.literal_step_factor,
        },
    )
}
