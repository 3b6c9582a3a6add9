//! Dense symmetric positive definite solves used by the block updates.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Relative diagonal jitter tried in order until the Cholesky factorization succeeds.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-12, 1e-10, 1e-8];

const BLOCK: usize = 64;
const REFINEMENT_STEPS: usize = 20;

/// Solution of `(M + jitter I) X = RHS`.
#[derive(Debug, Clone)]
pub struct SpdSolution<T> {
    pub solution: Array2<T>,
    /// Absolute jitter added to the diagonal.
    pub jitter: T,
    /// Relative jitter level from the ladder that succeeded.
    pub relative_jitter: f64,
}

/// In-place lower Cholesky factor of a symmetric matrix. Only the lower
/// triangle of the input is read. Returns `false` on a non-positive pivot.
pub fn cholesky_in_place<T: Scalar>(a: &mut Array2<T>) -> bool {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let mut k0 = 0;
    while k0 < n {
        let k1 = (k0 + BLOCK).min(n);
        // diagonal block and panel below it
        for j in k0..k1 {
            let mut d = a[[j, j]];
            for m in k0..j {
                let l = a[[j, m]];
                d -= l * l;
            }
            if !(d > T::zero()) || !d.is_finite() {
                return false;
            }
            let djj = d.sqrt();
            a[[j, j]] = djj;
            for i in (j + 1)..n {
                let mut v = a[[i, j]];
                for m in k0..j {
                    v -= a[[i, m]] * a[[j, m]];
                }
                a[[i, j]] = v / djj;
            }
        }
        if k1 < n {
            let panel = a.slice(s![k1.., k0..k1]).to_owned();
            let mut trailing = a.slice_mut(s![k1.., k1..]);
            general_mat_mul(-T::one(), &panel, &panel.t(), T::one(), &mut trailing);
        }
        k0 = k1;
    }
    for i in 0..n {
        for j in (i + 1)..n {
            a[[i, j]] = T::zero();
        }
    }
    true
}

/// Solves `L Lᵀ X = B` given the lower factor `L`.
pub fn cholesky_solve<T: Scalar>(l: &Array2<T>, b: &Array2<T>) -> Array2<T> {
    let n = l.nrows();
    let mut x = b.to_owned();
    for c in 0..x.ncols() {
        let mut col = x.column_mut(c);
        for i in 0..n {
            let mut v = col[i];
            let row = l.row(i);
            for m in 0..i {
                v -= row[m] * col[m];
            }
            col[i] = v / row[i];
        }
        for i in (0..n).rev() {
            let mut v = col[i];
            for m in (i + 1)..n {
                v -= l[[m, i]] * col[m];
            }
            col[i] = v / l[[i, i]];
        }
    }
    x
}

fn jitter_scale<T: Scalar>(m: &ArrayView2<T>) -> T {
    let n = m.nrows();
    if n == 0 {
        return T::one();
    }
    let mean = m.diag().iter().fold(T::zero(), |acc, &v| acc + v.abs()) / T::from_count(n);
    if mean > T::zero() && mean.is_finite() {
        mean
    } else {
        T::one()
    }
}

/// `ladder`, extended for low-precision scalars by `10^k · eps`
/// (`k = 1..=4`) past its last level, since levels below machine epsilon
/// cannot rescue a factorization.
fn effective_ladder<T: Scalar>(ladder: &[f64]) -> Vec<f64> {
    let mut out = ladder.to_vec();
    let eps = T::epsilon().as_f64();
    if eps > 1e-10 {
        let top = ladder.iter().copied().fold(0.0, f64::max);
        out.extend((1..=4).map(|k| eps * 10f64.powi(k)).filter(|&l| l > top));
    }
    out
}

/// Solves the symmetric positive (semi)definite system `M X = RHS`,
/// escalating through `ladder` (relative to the mean absolute diagonal)
/// until the factorization succeeds, then applies iterative refinement.
pub fn solve_spd<T: Scalar>(m: &Array2<T>, rhs: &Array2<T>, ladder: &[f64]) -> Result<SpdSolution<T>> {
    let n = m.nrows();
    if m.ncols() != n || rhs.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "system matrix {}x{} with right-hand side of {} rows",
            m.nrows(),
            m.ncols(),
            rhs.nrows()
        )));
    }
    let scale = jitter_scale(&m.view());
    let mut last = 0.0;
    for level in effective_ladder::<T>(ladder) {
        last = level;
        let jitter = scale * T::lit(level);
        let mut shifted = m.to_owned();
        if jitter > T::zero() {
            shifted.diag_mut().mapv_inplace(|v| v + jitter);
        }
        if !cholesky_in_place(&mut shifted) {
            continue;
        }
        let mut x = cholesky_solve(&shifted, rhs);
        // refine against the unshifted matrix, keeping only improving steps
        let mut residual = rhs - &m.dot(&x);
        let mut res_norm = frobenius(&residual);
        for _ in 0..REFINEMENT_STEPS {
            let candidate = &x + &cholesky_solve(&shifted, &residual);
            let next = rhs - &m.dot(&candidate);
            let next_norm = frobenius(&next);
            if !(next_norm < res_norm) {
                break;
            }
            x = candidate;
            residual = next;
            res_norm = next_norm;
        }
        if x.iter().all(|v| v.is_finite()) {
            return Ok(SpdSolution {
                solution: x,
                jitter,
                relative_jitter: level,
            });
        }
    }
    Err(Error::SolveFailed { jitter: last })
}

fn frobenius<T: Scalar>(m: &Array2<T>) -> T {
    m.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt()
}

/// Vector right-hand-side convenience wrapper around [`solve_spd`].
pub fn solve_spd_vec<T: Scalar>(m: &Array2<T>, rhs: &Array1<T>, ladder: &[f64]) -> Result<(Array1<T>, T)> {
    let b = rhs.view().insert_axis(Axis(1)).to_owned();
    let sol = solve_spd(m, &b, ladder)?;
    Ok((sol.solution.column(0).to_owned(), sol.jitter))
}
