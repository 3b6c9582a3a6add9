//! Seeded synthetic data: low-rank functional tensors built from a cosine
//! basis, observed at random subsets of a common grid.

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::UnalignedTensor;

/// Candidate time points are `k / TIME_DENOMINATOR` for `k = 1..=TIME_DENOMINATOR`.
pub const TIME_DENOMINATOR: usize = 739;

/// Number of basis functions in each `ξ_r`.
pub const BASIS_SIZE: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// `|T|`, the size of the common grid.
    pub grid_size: usize,
    /// Bounds `l ≤ |T_i| ≤ u`.
    pub min_obs: usize,
    pub max_obs: usize,
    pub n: usize,
    pub p: usize,
    pub rank: usize,
    /// Gaussian noise variance `σ²`.
    pub noise_var: f64,
    /// Poisson rate shift `δ`.
    pub delta: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            grid_size: 251,
            min_obs: 8,
            max_obs: 20,
            n: 60,
            p: 51,
            rank: 5,
            noise_var: 1.0,
            delta: 1e-10,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n == 0 || self.p == 0 || self.rank == 0 || self.min_obs == 0 {
            return bad("n, p, rank and min_obs must be positive".into());
        }
        if self.min_obs > self.max_obs || self.max_obs > self.grid_size {
            return bad(format!(
                "need min_obs <= max_obs <= grid_size, got {} / {} / {}",
                self.min_obs, self.max_obs, self.grid_size
            ));
        }
        if self.grid_size > TIME_DENOMINATOR {
            return bad(format!("grid_size at most {TIME_DENOMINATOR}, got {}", self.grid_size));
        }
        if !(self.noise_var >= 0.0) || !(self.delta >= 0.0) {
            return bad("noise_var and delta must be >= 0".into());
        }
        Ok(())
    }
}

/// `u_1(s) = 1`, `u_i(s) = √2 cos((i − 1)πs)`; `i` is 1-based.
pub fn cosine_basis(i: usize, s: f64) -> f64 {
    assert!(i >= 1, "basis index is 1-based");
    if i == 1 {
        1.0
    } else {
        std::f64::consts::SQRT_2 * ((i - 1) as f64 * std::f64::consts::PI * s).cos()
    }
}

/// Ground-truth factors of a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueFactors {
    /// `n × R`, entries uniform(0, 1).
    pub a: Array2<f64>,
    /// `p × R`, entries uniform(0, 1).
    pub b: Array2<f64>,
    /// `R × 10` basis coefficients, `x_{r,i} ~ U[−1/i, 1/i]`.
    pub coefs: Array2<f64>,
    /// Component weights `10√r`.
    pub weights: Array1<f64>,
    /// Constant added to every `ξ_r` (1 for the Poisson family).
    pub shift: f64,
}

impl TrueFactors {
    /// `ξ_r(s)`, 0-based `r`.
    pub fn xi(&self, r: usize, s: f64) -> f64 {
        self.shift
            + (1..=BASIS_SIZE)
                .map(|i| self.coefs[[r, i - 1]] * cosine_basis(i, s))
                .sum::<f64>()
    }

    /// `Λ_ij(t) = Σ_r w_r a_ir b_jr ξ_r(t)`.
    pub fn lambda(&self, i: usize, j: usize, t: f64) -> f64 {
        (0..self.weights.len())
            .map(|r| self.weights[r] * self.a[[i, r]] * self.b[[j, r]] * self.xi(r, t))
            .sum()
    }

    /// Rows `(t, ξ_1(t), …, ξ_R(t))` over `times`.
    pub fn xi_table(&self, times: &[f64]) -> Array2<f64> {
        let rank = self.weights.len();
        Array2::from_shape_fn((times.len(), rank + 1), |(k, c)| {
            if c == 0 {
                times[k]
            } else {
                self.xi(c - 1, times[k])
            }
        })
    }
}

/// A generated dataset: noisy observations, the noiseless signal at the
/// same positions, and everything needed to regenerate it.
#[derive(Debug, Clone)]
pub struct SynthData<T> {
    pub observed: UnalignedTensor<T>,
    /// Signal `Λ̃` at the observed positions. For the Poisson family this is
    /// the rate actually used, `max(Λ̃, 0)`.
    pub truth: UnalignedTensor<T>,
    pub factors: TrueFactors,
    /// The common grid `T`, sorted.
    pub grid: Vec<f64>,
    /// Number of observed positions whose signal was negative before
    /// clamping (Poisson family only).
    pub clamped: usize,
}

struct Layout {
    factors: TrueFactors,
    grid: Vec<f64>,
    /// Per subject, sorted times and the signal `p × |T_i|`.
    subjects: Vec<(Vec<f64>, Array2<f64>)>,
}

fn layout<R: Rng>(cfg: &SynthConfig, shift: f64, rng: &mut R) -> Layout {
    let rank = cfg.rank;
    let a = Array2::from_shape_simple_fn((cfg.n, rank), || rng.random::<f64>());
    let b = Array2::from_shape_simple_fn((cfg.p, rank), || rng.random::<f64>());
    let mut grid: Vec<f64> = sample(rng, TIME_DENOMINATOR, cfg.grid_size)
        .into_iter()
        .map(|k| (k + 1) as f64 / TIME_DENOMINATOR as f64)
        .collect();
    grid.sort_by(f64::total_cmp);
    let mut coefs = Array2::zeros((rank, BASIS_SIZE));
    for r in 0..rank {
        for i in 1..=BASIS_SIZE {
            let h = 1.0 / i as f64;
            coefs[[r, i - 1]] = rng.random_range(-h..=h);
        }
    }
    let weights = Array1::from_shape_fn(rank, |r| 10.0 * ((r + 1) as f64).sqrt());
    let factors = TrueFactors {
        a,
        b,
        coefs,
        weights,
        shift,
    };
    let mut subjects = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let d = rng.random_range(cfg.min_obs..=cfg.max_obs);
        let mut idx = sample(rng, cfg.grid_size, d).into_vec();
        idx.sort_unstable();
        let times: Vec<f64> = idx.iter().map(|&k| grid[k]).collect();
        let signal = Array2::from_shape_fn((cfg.p, d), |(j, l)| factors.lambda(i, j, times[l]));
        subjects.push((times, signal));
    }
    Layout {
        factors,
        grid,
        subjects,
    }
}

fn to_tensor<T: Scalar>(p: usize, subjects: &[(Vec<f64>, Array2<f64>)]) -> Result<UnalignedTensor<T>> {
    UnalignedTensor::new(
        p,
        subjects
            .iter()
            .map(|(t, _)| t.iter().map(|&v| T::lit(v)).collect())
            .collect(),
        subjects.iter().map(|(_, v)| v.mapv(T::lit)).collect(),
    )
}

/// Signal plus i.i.d. `Normal(0, σ²)` noise.
pub fn gen_gaussian<T: Scalar>(cfg: &SynthConfig) -> Result<SynthData<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lay = layout(cfg, 0.0, &mut rng);
    let noise = Normal::new(0.0, cfg.noise_var.sqrt())
        .map_err(|e| Error::InvalidConfig(format!("noise: {e}")))?;
    let observed: Vec<(Vec<f64>, Array2<f64>)> = lay
        .subjects
        .iter()
        .map(|(t, s)| (t.clone(), s.mapv(|v| v + noise.sample(&mut rng))))
        .collect();
    Ok(SynthData {
        observed: to_tensor(cfg.p, &observed)?,
        truth: to_tensor(cfg.p, &lay.subjects)?,
        factors: lay.factors,
        grid: lay.grid,
        clamped: 0,
    })
}

/// Counts `Poisson(max(Λ̃, 0) + δ)` with every `ξ_r` shifted up by one.
///
/// The shifted `ξ_r` can still dip below zero, so a few rates can come out
/// negative; those are clamped to zero and counted in
/// [`SynthData::clamped`].
pub fn gen_poisson<T: Scalar>(cfg: &SynthConfig) -> Result<SynthData<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut lay = layout(cfg, 1.0, &mut rng);
    let mut clamped = 0;
    for (_, s) in lay.subjects.iter_mut() {
        for v in s.iter_mut() {
            if !v.is_finite() {
                return Err(Error::InvalidConfig(format!("non-finite rate {v}")));
            }
            if *v < 0.0 {
                clamped += 1;
                *v = 0.0;
            }
        }
    }
    let mut observed = Vec::with_capacity(cfg.n);
    for (t, s) in &lay.subjects {
        let mut counts = Array2::zeros(s.dim());
        for (c, &rate) in counts.iter_mut().zip(s.iter()) {
            let lam = rate + cfg.delta;
            *c = if lam > 0.0 {
                Poisson::new(lam)
                    .map_err(|e| Error::InvalidConfig(format!("rate {lam}: {e}")))?
                    .sample(&mut rng)
            } else {
                0.0
            };
        }
        observed.push((t.clone(), counts));
    }
    Ok(SynthData {
        observed: to_tensor(cfg.p, &observed)?,
        truth: to_tensor(cfg.p, &lay.subjects)?,
        factors: lay.factors,
        grid: lay.grid,
        clamped,
    })
}
