//! Preprocessing transforms for count data. Both act on each time slice
//! `Y_i·(t)` across features.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::UnalignedTensor;

/// Pseudocount added before taking logs.
pub const CLR_PSEUDOCOUNT: f64 = 0.5;

fn check_counts<T: Scalar>(y: &UnalignedTensor<T>) -> Result<()> {
    for v in y.all_values() {
        if let Some(&bad) = v.iter().find(|&&c| c < T::zero()) {
            return Err(Error::NegativeCount(bad.as_f64()));
        }
    }
    Ok(())
}

/// `X_ij(t) = log((Y_ij(t) + ½) / Σ_j′ (Y_ij′(t) + ½))`.
pub fn clr_transform<T: Scalar>(y: &UnalignedTensor<T>) -> Result<UnalignedTensor<T>> {
    check_counts(y)?;
    let half = T::lit(CLR_PSEUDOCOUNT);
    let values = y
        .all_values()
        .iter()
        .map(|v| {
            let mut out = v.mapv(|c| c + half);
            for mut col in out.columns_mut() {
                let total = col.sum();
                col.mapv_inplace(|c| (c / total).ln());
            }
            out
        })
        .collect();
    y.with_values(values)
}

/// `X_ij(t) = Y_ij(t) / Σ_j′ Y_ij′(t)`; every slice then sums to one.
pub fn relative_abundance<T: Scalar>(y: &UnalignedTensor<T>) -> Result<UnalignedTensor<T>> {
    check_counts(y)?;
    let mut values: Vec<Array2<T>> = Vec::with_capacity(y.n());
    for (i, v) in y.all_values().iter().enumerate() {
        let mut out = v.clone();
        for (l, mut col) in out.columns_mut().into_iter().enumerate() {
            let total = col.sum();
            if total == T::zero() {
                return Err(Error::ZeroSlice {
                    subject: i,
                    time: y.times(i)[l].as_f64(),
                });
            }
            col.mapv_inplace(|c| c / total);
        }
        values.push(out);
    }
    y.with_values(values)
}
