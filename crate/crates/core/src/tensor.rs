//! Ragged tensor data model: observations `X_ij(t)` for subjects `i`,
//! features `j` and per-subject time sets `T_i ⊂ [0, 1]`.

use std::collections::HashMap;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Tolerance under which two timestamps are treated as the same instant.
pub fn time_tolerance<T: Scalar>() -> T {
    T::lit(1e-12).max(T::epsilon() * T::lit(8.0))
}

/// One long-format observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Record<T> {
    pub subject: String,
    pub feature: String,
    pub time: T,
    pub value: T,
}

impl<T> Record<T> {
    pub fn new(subject: impl Into<String>, feature: impl Into<String>, time: T, value: T) -> Self {
        Record {
            subject: subject.into(),
            feature: feature.into(),
            time,
            value,
        }
    }
}

/// Dense 0-based relabeling of subject and feature identifiers, in order of
/// first appearance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Labels {
    pub subjects: Vec<String>,
    pub features: Vec<String>,
}

impl Labels {
    /// Labels `0..n` and `0..p` rendered as decimal strings.
    pub fn numeric(n: usize, p: usize) -> Self {
        Labels {
            subjects: (0..n).map(|i| i.to_string()).collect(),
            features: (0..p).map(|j| j.to_string()).collect(),
        }
    }
}

/// Options for [`build_tensor`].
#[derive(Debug, Clone, Copy, Default)]
pub struct BuildOptions {
    /// Min-max rescale all timestamps onto `[0, 1]`.
    pub rescale_time: bool,
}

/// Observations of an order-3 tensor with two tabular modes and one
/// functional mode sampled at unaligned, per-subject time points.
#[derive(Debug, Clone, PartialEq)]
pub struct UnalignedTensor<T> {
    p: usize,
    times: Vec<Vec<T>>,
    /// Per subject, a `p × |T_i|` table (row `j` holds `X_ij(T_i)`).
    values: Vec<Array2<T>>,
}

impl<T: Scalar> UnalignedTensor<T> {
    /// Validates and wraps per-subject times and `p × |T_i|` value tables.
    pub fn new(p: usize, times: Vec<Vec<T>>, values: Vec<Array2<T>>) -> Result<Self> {
        if times.is_empty() || p == 0 {
            return Err(Error::EmptyTensor);
        }
        if times.len() != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} time sets for {} value tables",
                times.len(),
                values.len()
            )));
        }
        let tol = time_tolerance::<T>();
        for (i, (ts, vs)) in times.iter().zip(&values).enumerate() {
            if ts.is_empty() {
                return Err(Error::EmptySubject(i));
            }
            if vs.dim() != (p, ts.len()) {
                return Err(Error::DimensionMismatch(format!(
                    "subject {i}: values {:?}, expected ({p}, {})",
                    vs.dim(),
                    ts.len()
                )));
            }
            for &t in ts {
                if !t.is_finite() {
                    return Err(Error::NonFiniteTimestamp(t.as_f64()));
                }
                if t < T::zero() || t > T::one() {
                    return Err(Error::TimestampOutOfRange(t.as_f64()));
                }
            }
            for w in ts.windows(2) {
                if w[1] - w[0] <= tol {
                    return Err(Error::DuplicateObservation {
                        subject: i.to_string(),
                        feature: "*".into(),
                        time: w[1].as_f64(),
                    });
                }
            }
            if let Some(v) = vs.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue(v.as_f64()));
            }
        }
        Ok(UnalignedTensor { p, times, values })
    }

    pub fn n(&self) -> usize {
        self.times.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Sorted time set `T_i`.
    pub fn times(&self, i: usize) -> &[T] {
        &self.times[i]
    }

    pub fn all_times(&self) -> &[Vec<T>] {
        &self.times
    }

    /// `p × |T_i|` observation table of subject `i`.
    pub fn values(&self, i: usize) -> &Array2<T> {
        &self.values[i]
    }

    pub fn all_values(&self) -> &[Array2<T>] {
        &self.values
    }

    /// `Σ_i |T_i|`.
    pub fn total_time_points(&self) -> usize {
        self.times.iter().map(Vec::len).sum()
    }

    /// Number of observed entries `|Ω| = p Σ_i |T_i|`.
    pub fn omega(&self) -> usize {
        self.p * self.total_time_points()
    }

    /// Same index structure, new values (`p × |T_i|` per subject).
    pub fn with_values(&self, values: Vec<Array2<T>>) -> Result<Self> {
        UnalignedTensor::new(self.p, self.times.clone(), values)
    }

    /// Applies `f` to every stored value.
    pub fn map_values(&self, f: impl Fn(T) -> T) -> Self {
        UnalignedTensor {
            p: self.p,
            times: self.times.clone(),
            values: self.values.iter().map(|v| v.mapv(&f)).collect(),
        }
    }

    /// Sum of squared observations.
    pub fn sum_sq(&self) -> T {
        self.values
            .iter()
            .flat_map(|v| v.iter())
            .fold(T::zero(), |acc, &v| acc + v * v)
    }

    /// Long-format records, subject-major then time then feature, using `labels`.
    pub fn to_records(&self, labels: &Labels) -> Vec<Record<T>> {
        let mut out = Vec::with_capacity(self.omega());
        for (i, ts) in self.times.iter().enumerate() {
            for (l, &t) in ts.iter().enumerate() {
                for j in 0..self.p {
                    out.push(Record {
                        subject: labels.subjects[i].clone(),
                        feature: labels.features[j].clone(),
                        time: t,
                        value: self.values[i][[j, l]],
                    });
                }
            }
        }
        out
    }
}

/// Builds a validated tensor from long-format records. Subject and feature
/// ids are relabeled densely in order of first appearance.
pub fn build_tensor<T: Scalar>(
    records: &[Record<T>],
    opts: BuildOptions,
) -> Result<(UnalignedTensor<T>, Labels)> {
    if records.is_empty() {
        return Err(Error::EmptyTensor);
    }
    let mut labels = Labels::default();
    let mut subject_ids: HashMap<&str, usize> = HashMap::new();
    let mut feature_ids: HashMap<&str, usize> = HashMap::new();
    let (mut lo, mut hi) = (T::infinity(), T::neg_infinity());
    for r in records {
        if !r.time.is_finite() {
            return Err(Error::NonFiniteTimestamp(r.time.as_f64()));
        }
        if !r.value.is_finite() {
            return Err(Error::NonFiniteValue(r.value.as_f64()));
        }
        if !subject_ids.contains_key(r.subject.as_str()) {
            subject_ids.insert(&r.subject, labels.subjects.len());
            labels.subjects.push(r.subject.clone());
        }
        if !feature_ids.contains_key(r.feature.as_str()) {
            feature_ids.insert(&r.feature, labels.features.len());
            labels.features.push(r.feature.clone());
        }
        lo = lo.min(r.time);
        hi = hi.max(r.time);
    }
    let rescale = |t: T| -> Result<T> {
        if opts.rescale_time {
            if hi > lo {
                Ok(((t - lo) / (hi - lo)).max(T::zero()).min(T::one()))
            } else {
                Ok(T::zero())
            }
        } else if t < T::zero() || t > T::one() {
            Err(Error::TimestampOutOfRange(t.as_f64()))
        } else {
            Ok(t)
        }
    };

    let n = labels.subjects.len();
    let p = labels.features.len();
    let mut per_subject: Vec<Vec<(T, usize, T)>> = vec![Vec::new(); n];
    for r in records {
        let i = subject_ids[r.subject.as_str()];
        let j = feature_ids[r.feature.as_str()];
        per_subject[i].push((rescale(r.time)?, j, r.value));
    }

    let tol = time_tolerance::<T>();
    let mut times = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for (i, mut obs) in per_subject.into_iter().enumerate() {
        obs.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));
        let mut ts: Vec<T> = Vec::new();
        let mut columns: Vec<Vec<Option<T>>> = Vec::new();
        for (t, j, v) in obs {
            let new_point = match ts.last() {
                Some(&last) => t - last > tol,
                None => true,
            };
            if new_point {
                ts.push(t);
                columns.push(vec![None; p]);
            }
            let slot = &mut columns.last_mut().unwrap()[j];
            if slot.is_some() {
                return Err(Error::DuplicateObservation {
                    subject: labels.subjects[i].clone(),
                    feature: labels.features[j].clone(),
                    time: t.as_f64(),
                });
            }
            *slot = Some(v);
        }
        let mut table = Array2::zeros((p, ts.len()));
        for (l, col) in columns.iter().enumerate() {
            let found = col.iter().filter(|v| v.is_some()).count();
            if found != p {
                return Err(Error::IncompleteFeatures {
                    subject: labels.subjects[i].clone(),
                    time: ts[l].as_f64(),
                    found,
                    expected: p,
                });
            }
            for (j, v) in col.iter().enumerate() {
                table[[j, l]] = v.unwrap();
            }
        }
        times.push(ts);
        values.push(table);
    }
    Ok((UnalignedTensor::new(p, times, values)?, labels))
}

/// Sorted, deduplicated union `T = ∪_i T_i` of all observation times.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalGrid<T> {
    points: Vec<T>,
}

impl<T: Scalar> GlobalGrid<T> {
    /// Grid from explicit points; they must be strictly increasing.
    pub fn from_points(points: Vec<T>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyTensor);
        }
        for w in points.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidConfig(format!(
                    "grid points not strictly increasing at {}",
                    w[1]
                )));
            }
        }
        Ok(GlobalGrid { points })
    }

    pub fn from_tensor(x: &UnalignedTensor<T>) -> Self {
        let mut all: Vec<T> = x.all_times().iter().flatten().copied().collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let tol = time_tolerance::<T>();
        let mut points: Vec<T> = Vec::with_capacity(all.len());
        for t in all {
            match points.last() {
                Some(&last) if t - last <= tol => {}
                _ => points.push(t),
            }
        }
        GlobalGrid { points }
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Grid position of `t`, if some grid point lies within tolerance.
    pub fn position(&self, t: T) -> Option<usize> {
        let tol = time_tolerance::<T>();
        let idx = self.points.partition_point(|&g| g < t - tol);
        (idx < self.points.len() && (self.points[idx] - t).abs() <= tol).then_some(idx)
    }

    /// For every subject, the grid position of each of its time points.
    pub fn subject_positions(&self, x: &UnalignedTensor<T>) -> Result<Vec<Vec<usize>>> {
        x.all_times()
            .iter()
            .map(|ts| {
                ts.iter()
                    .map(|&t| {
                        self.position(t).ok_or_else(|| {
                            Error::DimensionMismatch(format!("time {t} is not a grid point"))
                        })
                    })
                    .collect()
            })
            .collect()
    }
}

/// One position of the stacked observation vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Entry {
    pub subject: usize,
    pub feature: usize,
    /// Index into the subject's own time set `T_i`.
    pub time: usize,
}

/// Bijection between positions `k` of the stacked vector and observed
/// triples. Order is subject-major, then feature, then time:
/// `X_11(T_1), …, X_1p(T_1), X_21(T_2), …`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VectorizationMap {
    p: usize,
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    entries: Vec<Entry>,
}

impl VectorizationMap {
    pub fn new<T: Scalar>(x: &UnalignedTensor<T>) -> Self {
        let p = x.p();
        let sizes: Vec<usize> = x.all_times().iter().map(Vec::len).collect();
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut entries = Vec::with_capacity(x.omega());
        let mut k = 0;
        for (i, &m) in sizes.iter().enumerate() {
            offsets.push(k);
            for j in 0..p {
                for l in 0..m {
                    entries.push(Entry {
                        subject: i,
                        feature: j,
                        time: l,
                    });
                }
            }
            k += p * m;
        }
        VectorizationMap {
            p,
            sizes,
            offsets,
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n(&self) -> usize {
        self.sizes.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn entry(&self, k: usize) -> Entry {
        self.entries[k]
    }

    /// Position `k` of the triple `(i, j, l)` with `l` indexing `T_i`.
    pub fn index_of(&self, subject: usize, feature: usize, time: usize) -> Option<usize> {
        let m = *self.sizes.get(subject)?;
        (feature < self.p && time < m).then(|| self.offsets[subject] + feature * m + time)
    }

    /// Position of `(i, j, t)` looked up by timestamp.
    pub fn index_of_time<T: Scalar>(
        &self,
        x: &UnalignedTensor<T>,
        subject: usize,
        feature: usize,
        t: T,
    ) -> Option<usize> {
        let ts = x.all_times().get(subject)?;
        let tol = time_tolerance::<T>();
        let l = ts.iter().position(|&s| (s - t).abs() <= tol)?;
        self.index_of(subject, feature, l)
    }
}

/// Stacks the observations into `x ∈ R^{|Ω|}` in [`VectorizationMap`] order.
pub fn vectorize<T: Scalar>(x: &UnalignedTensor<T>) -> (Vec<T>, VectorizationMap) {
    let map = VectorizationMap::new(x);
    let mut out = Vec::with_capacity(map.len());
    for v in x.all_values() {
        // row-major p × |T_i| is exactly feature-then-time order
        out.extend(v.iter().copied());
    }
    (out, map)
}

/// Inverse of [`vectorize`] given the time sets of the original tensor.
pub fn devectorize<T: Scalar>(
    data: &[T],
    map: &VectorizationMap,
    times: &[Vec<T>],
) -> Result<UnalignedTensor<T>> {
    if data.len() != map.len() || times.len() != map.n() {
        return Err(Error::DimensionMismatch(format!(
            "vector of length {} for a map of length {}",
            data.len(),
            map.len()
        )));
    }
    let mut values = Vec::with_capacity(map.n());
    for (i, ts) in times.iter().enumerate() {
        if ts.len() != map.sizes[i] {
            return Err(Error::DimensionMismatch(format!("subject {i} time count")));
        }
        let start = map.offsets[i];
        let block = data[start..start + map.p * ts.len()].to_vec();
        values.push(Array2::from_shape_vec((map.p, ts.len()), block).expect("block shape"));
    }
    UnalignedTensor::new(map.p, times.to_vec(), values)
}
