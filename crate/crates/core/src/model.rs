//! Low-rank factor model with functional factors in an RKHS, plus the
//! shared problem context (grid, Gram matrix, index maps) the solvers use.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::scalar::Scalar;
use crate::tensor::{GlobalGrid, UnalignedTensor, VectorizationMap};

/// `X̂_ij(t) = Σ_r A[i,r] B[j,r] ξ_r(t)` with `ξ_r(t) = Σ_s Θ[r,s] K(t, t_s)`
/// over the grid points `t_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel<T> {
    /// `n × R` subject loadings.
    pub a: Array2<T>,
    /// `p × R` feature loadings.
    pub b: Array2<T>,
    /// `R × |T|` kernel coefficients.
    pub theta: Array2<T>,
    pub grid: GlobalGrid<T>,
    pub kernel: KernelSpec,
}

impl<T: Scalar> FactorModel<T> {
    pub fn new(
        a: Array2<T>,
        b: Array2<T>,
        theta: Array2<T>,
        grid: GlobalGrid<T>,
        kernel: KernelSpec,
    ) -> Result<Self> {
        let r = a.ncols();
        if r == 0 || b.ncols() != r || theta.nrows() != r || theta.ncols() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "A {:?}, B {:?}, Theta {:?}, grid {}",
                a.dim(),
                b.dim(),
                theta.dim(),
                grid.len()
            )));
        }
        Ok(FactorModel {
            a,
            b,
            theta,
            grid,
            kernel,
        })
    }

    /// All-zero model of the given shape.
    pub fn zeros(n: usize, p: usize, rank: usize, grid: GlobalGrid<T>, kernel: KernelSpec) -> Self {
        let m = grid.len();
        FactorModel {
            a: Array2::zeros((n, rank)),
            b: Array2::zeros((p, rank)),
            theta: Array2::zeros((rank, m)),
            grid,
            kernel,
        }
    }

    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    fn check_component(&self, r: usize) -> Result<()> {
        if r < self.rank() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                what: "component",
                index: r,
                len: self.rank(),
            })
        }
    }

    /// `ξ_r(t)`, defined for any `t` in the kernel's domain (0-based `r`).
    pub fn evaluate_xi(&self, r: usize, t: T) -> Result<T> {
        self.check_component(r)?;
        let mut acc = T::zero();
        for (s, &ts) in self.grid.points().iter().enumerate() {
            acc += self.theta[[r, s]] * self.kernel.eval(t, ts)?;
        }
        Ok(acc)
    }

    /// `Ξ(S)`: the `|S| × R` table of all functional factors at `times`.
    pub fn xi_at(&self, times: &[T]) -> Result<Array2<T>> {
        let k = self.kernel.gram(times, self.grid.points())?;
        Ok(k.dot(&self.theta.t()))
    }

    /// Squared RKHS norm `θ_rᵀ K(T,T) θ_r`, clamped at zero.
    pub fn rkhs_norm_sq(&self, r: usize) -> Result<T> {
        self.check_component(r)?;
        let gram = self.kernel.gram(self.grid.points(), self.grid.points())?;
        Ok(rkhs_norms_sq(&self.theta, &gram)[r])
    }

    /// Model predictions in vectorization order for the observed points of `x`.
    pub fn reconstruct(&self, x: &UnalignedTensor<T>) -> Result<Vec<T>> {
        Ok(self
            .reconstruct_blocks(x)?
            .iter()
            .flat_map(|b| b.iter().copied().collect::<Vec<_>>())
            .collect())
    }

    /// Predictions as per-subject `p × |T_i|` tables.
    pub fn reconstruct_blocks(&self, x: &UnalignedTensor<T>) -> Result<Vec<Array2<T>>> {
        self.check_shape(x)?;
        (0..x.n())
            .map(|i| {
                let xi = self.xi_at(x.times(i))?;
                Ok(subject_prediction(&self.a, &self.b, i, &xi))
            })
            .collect()
    }

    pub fn check_shape(&self, x: &UnalignedTensor<T>) -> Result<()> {
        if self.a.nrows() != x.n() || self.b.nrows() != x.p() {
            return Err(Error::DimensionMismatch(format!(
                "model is {}x{}, tensor is {}x{}",
                self.a.nrows(),
                self.b.nrows(),
                x.n(),
                x.p()
            )));
        }
        Ok(())
    }
}

/// Squared RKHS norms of every row of `theta` under `gram`, clamped at zero.
pub fn rkhs_norms_sq<T: Scalar>(theta: &Array2<T>, gram: &Array2<T>) -> Vec<T> {
    let kt = theta.dot(gram);
    theta
        .outer_iter()
        .zip(kt.outer_iter())
        .map(|(th, k)| th.dot(&k).max(T::zero()))
        .collect()
}

/// `p × |T_i|` predictions for subject `i` given `Ξ(T_i)` (`|T_i| × R`).
pub(crate) fn subject_prediction<T: Scalar>(a: &Array2<T>, b: &Array2<T>, i: usize, xi: &Array2<T>) -> Array2<T> {
    let scaled = b * &a.row(i).insert_axis(Axis(0));
    scaled.dot(&xi.t())
}

/// Tensor plus everything derived from it that the solvers share: the global
/// grid, each subject's grid positions, and the Gram matrix `K(T, T)`.
#[derive(Debug, Clone)]
pub struct Problem<'a, T> {
    pub tensor: &'a UnalignedTensor<T>,
    pub grid: GlobalGrid<T>,
    /// Grid position of each time point, per subject.
    pub positions: Vec<Vec<usize>>,
    pub kernel: KernelSpec,
    pub gram: Array2<T>,
    data_sum_sq: T,
}

impl<'a, T: Scalar> Problem<'a, T> {
    pub fn new(tensor: &'a UnalignedTensor<T>, kernel: KernelSpec) -> Result<Self> {
        let grid = GlobalGrid::from_tensor(tensor);
        let positions = grid.subject_positions(tensor)?;
        let gram = kernel.gram(grid.points(), grid.points())?;
        Ok(Problem {
            tensor,
            grid,
            positions,
            kernel,
            gram,
            data_sum_sq: tensor.sum_sq(),
        })
    }

    pub fn n(&self) -> usize {
        self.tensor.n()
    }

    pub fn p(&self) -> usize {
        self.tensor.p()
    }

    pub fn grid_len(&self) -> usize {
        self.grid.len()
    }

    pub fn omega(&self) -> usize {
        self.tensor.omega()
    }

    pub fn map(&self) -> VectorizationMap {
        VectorizationMap::new(self.tensor)
    }

    /// Model with zero factors sized for this problem.
    pub fn zero_model(&self, rank: usize) -> FactorModel<T> {
        FactorModel::zeros(self.n(), self.p(), rank, self.grid.clone(), self.kernel)
    }

    pub fn check_model(&self, model: &FactorModel<T>) -> Result<()> {
        model.check_shape(self.tensor)?;
        if model.theta.ncols() != self.grid_len() || model.kernel != self.kernel {
            return Err(Error::DimensionMismatch(format!(
                "model grid {} / kernel {} vs problem grid {} / kernel {}",
                model.theta.ncols(),
                model.kernel,
                self.grid_len(),
                self.kernel
            )));
        }
        Ok(())
    }

    /// `Ξ(T) = K(T,T) Θᵀ`, a `|T| × R` table.
    pub fn xi_on_grid(&self, theta: &Array2<T>) -> Array2<T> {
        self.gram.dot(&theta.t())
    }

    /// `Ξ(T_i)` gathered from the on-grid table.
    pub fn subject_xi(&self, xi_grid: &Array2<T>, i: usize) -> Array2<T> {
        xi_grid.select(Axis(0), &self.positions[i])
    }

    /// Per-subject `p × |T_i|` predictions.
    pub fn predictions(&self, model: &FactorModel<T>) -> Vec<Array2<T>> {
        let xi_grid = self.xi_on_grid(&model.theta);
        (0..self.n())
            .map(|i| subject_prediction(&model.a, &model.b, i, &self.subject_xi(&xi_grid, i)))
            .collect()
    }

    /// Predictions stacked in vectorization order.
    pub fn reconstruct(&self, model: &FactorModel<T>) -> Result<Vec<T>> {
        self.check_model(model)?;
        Ok(self
            .predictions(model)
            .iter()
            .flat_map(|b| b.iter().copied().collect::<Vec<_>>())
            .collect())
    }

    /// Explicit design matrix `D = [D_1, …, D_R]` (`|Ω| × R|T|`): row `k`
    /// of block `r` is `A[i_k,r] B[j_k,r] K(t_k, T)`.
    pub fn build_design(&self, a: &Array2<T>, b: &Array2<T>) -> Result<Array2<T>> {
        let rank = a.ncols();
        if a.nrows() != self.n() || b.nrows() != self.p() || b.ncols() != rank {
            return Err(Error::DimensionMismatch(format!(
                "A {:?}, B {:?} for a {}x{} tensor",
                a.dim(),
                b.dim(),
                self.n(),
                self.p()
            )));
        }
        let m = self.grid_len();
        let map = self.map();
        let mut d = Array2::zeros((map.len(), rank * m));
        for (k, e) in map.entries().iter().enumerate() {
            let krow = self.gram.row(self.positions[e.subject][e.time]);
            for r in 0..rank {
                let c = a[[e.subject, r]] * b[[e.feature, r]];
                let mut dst = d.row_mut(k);
                for s in 0..m {
                    dst[r * m + s] = c * krow[s];
                }
            }
        }
        Ok(d)
    }

    /// Sum of squared residuals over all observations.
    pub fn residual_sum_sq(&self, model: &FactorModel<T>) -> T {
        self.predictions(model)
            .iter()
            .zip(self.tensor.all_values())
            .map(|(pred, obs)| {
                pred.iter()
                    .zip(obs.iter())
                    .fold(T::zero(), |acc, (&m, &x)| acc + (x - m) * (x - m))
            })
            .fold(T::zero(), |acc, v| acc + v)
    }

    /// `Σ (X − X̂)² / Σ X²`.
    pub fn relative_loss(&self, model: &FactorModel<T>) -> Result<T> {
        self.check_model(model)?;
        if self.data_sum_sq == T::zero() {
            return Err(Error::ZeroData);
        }
        Ok(self.residual_sum_sq(model) / self.data_sum_sq)
    }
}

/// `Σ (X − X̂)² / Σ X²` for a model against arbitrary tensor data.
pub fn relative_loss<T: Scalar>(x: &UnalignedTensor<T>, model: &FactorModel<T>) -> Result<T> {
    let pred = model.reconstruct_blocks(x)?;
    relative_loss_blocks(x, &pred)
}

/// Relative loss of per-subject predictions against `x`.
pub fn relative_loss_blocks<T: Scalar>(x: &UnalignedTensor<T>, pred: &[Array2<T>]) -> Result<T> {
    let denom = x.sum_sq();
    if denom == T::zero() {
        return Err(Error::ZeroData);
    }
    if pred.len() != x.n() {
        return Err(Error::DimensionMismatch("prediction block count".into()));
    }
    let mut num = T::zero();
    for (p, o) in pred.iter().zip(x.all_values()) {
        if p.dim() != o.dim() {
            return Err(Error::DimensionMismatch("prediction block shape".into()));
        }
        for (&m, &v) in p.iter().zip(o.iter()) {
            num += (v - m) * (v - m);
        }
    }
    Ok(num / denom)
}

/// Row-major stacking `θ_vec = (θ_{1,1}, …, θ_{1,|T|}, θ_{2,1}, …)`.
pub fn theta_to_vec<T: Scalar>(theta: &Array2<T>) -> Array1<T> {
    Array1::from_iter(theta.iter().copied())
}

/// Inverse of [`theta_to_vec`].
pub fn theta_from_vec<T: Scalar>(v: &Array1<T>, rank: usize) -> Result<Array2<T>> {
    if rank == 0 || v.len() % rank != 0 {
        return Err(Error::DimensionMismatch(format!(
            "vector of length {} for rank {rank}",
            v.len()
        )));
    }
    Ok(Array2::from_shape_vec((rank, v.len() / rank), v.to_vec()).expect("shape checked"))
}
