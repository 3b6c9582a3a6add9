//! Row-sampling sketches: sampled index multisets and the sketched ALS
//! variant built on them.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;

use crate::als::{run_als, AlsConfig, FitReport, Init, ThetaUpdate};
use crate::error::{Error, Result};
use crate::linalg::solve_spd;
use crate::model::Problem;
use crate::scalar::Scalar;
use crate::tensor::{UnalignedTensor, VectorizationMap};

/// Sampled sub-tensor: subjects `N̂`, features `Ĵ` and, for the `h`-th
/// sampled subject, local time indices `T̂_h`. All three are multisets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SketchPlan {
    pub subjects: Vec<usize>,
    pub features: Vec<usize>,
    /// `times[h]` indexes into `T_{subjects[h]}`.
    pub times: Vec<Vec<usize>>,
    pub seed: Option<u64>,
}

impl SketchPlan {
    /// Every observation exactly once, in vectorization order.
    pub fn full<T: Scalar>(x: &UnalignedTensor<T>) -> Self {
        SketchPlan {
            subjects: (0..x.n()).collect(),
            features: (0..x.p()).collect(),
            times: x.all_times().iter().map(|t| (0..t.len()).collect()).collect(),
            seed: None,
        }
    }

    /// Independent uniform draws with replacement: `s1` subjects, `s2`
    /// features, and `s3` time points per sampled subject.
    pub fn sample<T: Scalar, R: Rng + ?Sized>(
        x: &UnalignedTensor<T>,
        s1: usize,
        s2: usize,
        s3: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if s1 == 0 || s2 == 0 || s3 == 0 {
            return Err(Error::InvalidConfig(format!(
                "sketch sizes must be positive, got ({s1}, {s2}, {s3})"
            )));
        }
        let subjects: Vec<usize> = (0..s1).map(|_| rng.random_range(0..x.n())).collect();
        let features = (0..s2).map(|_| rng.random_range(0..x.p())).collect();
        let times = subjects
            .iter()
            .map(|&i| {
                let m = x.times(i).len();
                (0..s3).map(|_| rng.random_range(0..m)).collect()
            })
            .collect();
        Ok(SketchPlan {
            subjects,
            features,
            times,
            seed: None,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// `|Ĵ| · Σ_h |T̂_h|`, the number of sampled observations.
    pub fn sampled_count(&self) -> usize {
        self.features.len() * self.times.iter().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.sampled_count() == 0
    }

    /// Checks every index against the tensor's dimensions.
    pub fn validate<T: Scalar>(&self, x: &UnalignedTensor<T>) -> Result<()> {
        if self.times.len() != self.subjects.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} time lists for {} sampled subjects",
                self.times.len(),
                self.subjects.len()
            )));
        }
        for &i in &self.subjects {
            if i >= x.n() {
                return Err(Error::IndexOutOfRange { what: "subject", index: i, len: x.n() });
            }
        }
        for &j in &self.features {
            if j >= x.p() {
                return Err(Error::IndexOutOfRange { what: "feature", index: j, len: x.p() });
            }
        }
        for (h, &i) in self.subjects.iter().enumerate() {
            let m = x.times(i).len();
            if let Some(&l) = self.times[h].iter().find(|&&l| l >= m) {
                return Err(Error::IndexOutOfRange { what: "time", index: l, len: m });
            }
        }
        Ok(())
    }

    /// Positions in the stacked observation vector of the sampled rows, in
    /// sketch order (sampled subject, then feature, then time).
    pub fn row_indices(&self, map: &VectorizationMap) -> Vec<usize> {
        let mut rows = Vec::with_capacity(self.sampled_count());
        for (h, &i) in self.subjects.iter().enumerate() {
            for &j in &self.features {
                for &l in &self.times[h] {
                    rows.push(map.index_of(i, j, l).expect("validated plan"));
                }
            }
        }
        rows
    }
}

/// Per-iteration sampling for the sketched solvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SketchSizes {
    /// Full-coverage plan every iteration (reduces to the unsketched solver).
    Full,
    Sampled { s1: usize, s2: usize, s3: usize },
}

impl SketchSizes {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SketchSizes::Sampled { s1, s2, s3 } if s1 == 0 || s2 == 0 || s3 == 0 => Err(
                Error::InvalidConfig(format!("sketch sizes must be positive, got ({s1}, {s2}, {s3})")),
            ),
            _ => Ok(()),
        }
    }
}

/// Sampled design rows `D̂` and the matching responses `Sx`, unscaled.
/// Row order follows [`SketchPlan::row_indices`].
pub fn build_sketched_design<T: Scalar>(
    problem: &Problem<T>,
    a: &Array2<T>,
    b: &Array2<T>,
    plan: &SketchPlan,
) -> Result<(Array2<T>, Array1<T>)> {
    let rank = a.ncols();
    if a.nrows() != problem.n() || b.nrows() != problem.p() || b.ncols() != rank {
        return Err(Error::DimensionMismatch(format!(
            "A {:?}, B {:?} for a {}x{} tensor",
            a.dim(),
            b.dim(),
            problem.n(),
            problem.p()
        )));
    }
    plan.validate(problem.tensor)?;
    let m = problem.grid_len();
    let mut d = Array2::zeros((plan.sampled_count(), rank * m));
    let mut sx = Array1::zeros(plan.sampled_count());
    let mut row = 0;
    for (h, &i) in plan.subjects.iter().enumerate() {
        let x_i = problem.tensor.values(i);
        for &j in &plan.features {
            for &l in &plan.times[h] {
                let krow = problem.gram.row(problem.positions[i][l]);
                for r in 0..rank {
                    let c = a[[i, r]] * b[[j, r]];
                    d.slice_mut(s![row, r * m..(r + 1) * m])
                        .assign(&krow.mapv(|k| c * k));
                }
                sx[row] = x_i[[j, l]];
                row += 1;
            }
        }
    }
    Ok((d, sx))
}

/// Solves `(D̂ᵀD̂ + λ′ K̃) θ = D̂ᵀ Sx` from an explicit sketched design, with
/// `K̃` the block-diagonal stack of `R` copies of `gram`.
pub fn sketched_update_theta<T: Scalar>(
    design: &Array2<T>,
    response: &Array1<T>,
    gram: &Array2<T>,
    penalty: T,
    ladder: &[f64],
) -> Result<ThetaUpdate<T>> {
    let m = gram.nrows();
    if m == 0 || design.ncols() % m != 0 || design.nrows() != response.len() {
        return Err(Error::DimensionMismatch(format!(
            "design {:?}, response {}, gram {m}x{m}",
            design.dim(),
            response.len()
        )));
    }
    let rank = design.ncols() / m;
    let mut normal = design.t().dot(design);
    for r in 0..rank {
        normal
            .slice_mut(s![r * m..(r + 1) * m, r * m..(r + 1) * m])
            .scaled_add(penalty, gram);
    }
    let rhs = design.t().dot(response).insert_axis(Axis(1));
    let sol = solve_spd(&normal, &rhs, ladder)?;
    let theta = Array2::from_shape_vec((rank, m), sol.solution.column(0).to_vec()).expect("theta shape");
    Ok(ThetaUpdate {
        theta,
        jitter: sol.jitter,
        relative_jitter: sol.relative_jitter,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SketchConfig {
    pub als: AlsConfig,
    pub sizes: SketchSizes,
    /// Also sketch the `A` and `B` updates (otherwise only `θ`).
    pub sketch_ab: bool,
}

impl Default for SketchConfig {
    fn default() -> Self {
        SketchConfig {
            als: AlsConfig::default(),
            sizes: SketchSizes::Sampled { s1: 10, s2: 40, s3: 10 },
            sketch_ab: true,
        }
    }
}

/// Sketched ALS: each iteration draws a fresh plan from the run's plan
/// stream and applies the `A`, `B`, `θ` updates to the sampled rows only.
/// Losses in the trajectory are always full-data relative losses.
pub fn s_rkhs_td<T: Scalar>(
    problem: &Problem<T>,
    config: &SketchConfig,
    init: Init<T>,
) -> Result<FitReport<T>> {
    run_als(problem, &config.als, init, &config.sizes, config.sketch_ab)
}
