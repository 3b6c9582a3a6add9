//! Flat run configuration. Every key is optional; command-line flags win
//! over the file, and the file wins over the built-in defaults.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use unaligned_cp::losses::{DEFAULT_BETA_DELTA, DEFAULT_POISSON_DELTA};
use unaligned_cp::{KernelSpec, LossKind, LossSpec, Scalar, SketchSizes, StopRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    Rkhs,
    SRkhs,
    Grkhs,
    SGrkhs,
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algo::Rkhs => "rkhs",
            Algo::SRkhs => "s-rkhs",
            Algo::Grkhs => "grkhs",
            Algo::SGrkhs => "s-grkhs",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    #[default]
    None,
    Clr,
    Relative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

/// The on-disk schema. Unknown keys are an error.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Long-format CSV with columns subject,feature,time,value.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub algo: Option<Algo>,
    /// `bernoulli` or `radial` (default: radial for the poisson and beta losses, bernoulli otherwise).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<Precision>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transform: Option<Transform>,
    /// Min-max rescale timestamps onto [0, 1].
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rescale_time: Option<bool>,

    /// RKHS penalty λ′ (ALS solvers).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penalty: Option<f64>,
    /// Maximum ALS iterations.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iters: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s1: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s2: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s3: Option<usize>,
    /// Also sketch the A and B updates.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sketch_ab: Option<bool>,

    /// `gaussian`, `bernoulli`, `poisson` or `beta`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_exponent: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub norm_bound: Option<f64>,
    /// Per-block gradient clip bound (default: 0.5 for poisson, 1 for beta, off otherwise).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip: Option<f64>,
    /// Learning rate.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iters_per_epoch: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub importance_weighting: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub literal_step_factor: Option<bool>,

    /// Stop once the loss improves by less than this for `stop_window`
    /// consecutive steps; negative disables.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_eps: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_window: Option<usize>,

    /// Artifact directory (lowest precedence; see `--out`).
    #[arg(skip)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

macro_rules! merge_fields {
    ($hi:expr, $lo:expr; $($f:ident),*) => {
        Settings { $($f: $hi.$f.clone().or_else(|| $lo.$f.clone()),)* }
    };
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// `self` where set, otherwise `lower`.
    pub fn over(&self, lower: &Settings) -> Settings {
        merge_fields!(self, lower; input, algo, kernel, rank, seed, precision, transform, rescale_time,
            penalty, iters, s1, s2, s3, sketch_ab, loss, delta, beta_exponent, norm_bound, clip, alpha,
            epochs, iters_per_epoch, importance_weighting, literal_step_factor, stop_eps, stop_window, out_dir)
    }

    pub fn algo(&self) -> Algo {
        self.algo.unwrap_or(Algo::Rkhs)
    }

    /// Defaults to the radial kernel for the nonnegative losses and the
    /// Bernoulli kernel otherwise.
    pub fn kernel(&self) -> Result<KernelSpec> {
        let default = match self.loss_kind()? {
            LossKind::Poisson | LossKind::BetaDivergence => "radial",
            _ => "bernoulli",
        };
        Ok(KernelSpec::from_str(self.kernel.as_deref().unwrap_or(default))?)
    }

    pub fn rank(&self) -> usize {
        self.rank.unwrap_or(5)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn loss_kind(&self) -> Result<LossKind> {
        Ok(LossKind::from_str(self.loss.as_deref().unwrap_or("gaussian"))?)
    }

    pub fn loss_spec<T: Scalar>(&self) -> Result<LossSpec<T>> {
        let kind = self.loss_kind()?;
        let mut spec = LossSpec::<T>::of_kind(kind);
        match kind {
            LossKind::Poisson => spec.delta = T::lit(self.delta.unwrap_or(DEFAULT_POISSON_DELTA)),
            LossKind::BetaDivergence => {
                spec.delta = T::lit(self.delta.unwrap_or(DEFAULT_BETA_DELTA));
                spec.beta = T::lit(self.beta_exponent.unwrap_or(0.5));
            }
            _ => {}
        }
        if let Some(b) = self.norm_bound {
            spec.norm_bound = T::lit(b);
        }
        let default_clip = match kind {
            LossKind::Poisson => Some(0.5),
            LossKind::BetaDivergence => Some(1.0),
            _ => None,
        };
        spec.clip = self.clip.or(default_clip).map(T::lit);
        spec.validate()?;
        Ok(spec)
    }

    pub fn stop(&self) -> StopRule {
        let d = StopRule::default();
        StopRule::new(self.stop_eps.unwrap_or(d.eps), self.stop_window.unwrap_or(d.window))
    }

    /// Sample sizes; unset sizes fall back to the per-solver defaults.
    pub fn sizes(&self, defaults: (usize, usize, usize)) -> SketchSizes {
        SketchSizes::Sampled {
            s1: self.s1.unwrap_or(defaults.0),
            s2: self.s2.unwrap_or(defaults.1),
            s3: self.s3.unwrap_or(defaults.2),
        }
    }

    pub fn check(&self) -> Result<()> {
        let algo = self.algo();
        if matches!(algo, Algo::Rkhs | Algo::SRkhs) && self.loss_kind()? != LossKind::Gaussian {
            bail!("algo `{algo}` fits the squared-error loss only; use grkhs or s-grkhs for `{}`", self.loss_kind()?);
        }
        self.kernel()?;
        Ok(())
    }
}
