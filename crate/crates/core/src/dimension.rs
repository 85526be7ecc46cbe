//! Intrinsic dimension (TwoNN) and linear dimension (PC-ID) estimates.

use std::collections::HashSet;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knn;
use crate::par::Execution;
use crate::tensor_io::Tensor2D;

#[derive(Debug, Error, PartialEq)]
pub enum DimensionError {
    #[error("need at least {needed} distinct points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("all points are duplicates of one another")]
    AllPointsDuplicate,
    #[error("all points are identical; covariance is zero")]
    DegenerateData,
    #[error("every neighbor distance ratio is 1; dimension is unbounded")]
    DegenerateRatios,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdEstimate {
    pub id: f64,
    /// Ratios that entered the likelihood uncensored.
    pub n_used: usize,
    /// Distinct points after duplicate removal.
    pub n_points: usize,
    pub discard_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    /// Covariance eigenvalues, descending, clamped at zero.
    pub eigenvalues: Vec<f64>,
    pub pc_id: usize,
    /// Largest gap between consecutive min-max scaled eigenvalues.
    pub mge: f64,
}

fn distinct_rows(data: &Tensor2D) -> Vec<usize> {
    let mut seen = HashSet::new();
    (0..data.rows())
        .filter(|&i| seen.insert(data.row(i).iter().map(|v| v.to_bits()).collect::<Vec<u64>>()))
        .collect()
}

pub const DEFAULT_DISCARD_FRACTION: f64 = 0.1;

/// TwoNN estimate with the default execution.
pub fn twonn_id(data: &Tensor2D, discard_fraction: f64) -> Result<IdEstimate, DimensionError> {
    twonn_id_with(data, discard_fraction, Execution::default())
}

/// TwoNN intrinsic dimension.
///
/// For each distinct point the ratio `mu = r2 / r1` of its second to first
/// neighbor distance is Pareto distributed with shape `d`. The largest
/// `discard_fraction` of ratios are treated as right-censored at the largest
/// kept ratio, and `d` is the censored maximum-likelihood estimate
/// `n_used / (sum_kept ln mu + n_discarded * ln mu_max_kept)`.
pub fn twonn_id_with(data: &Tensor2D, discard_fraction: f64, exec: Execution) -> Result<IdEstimate, DimensionError> {
    if !(0.0..1.0).contains(&discard_fraction) {
        return Err(DimensionError::InvalidParameter(format!(
            "discard fraction must be in [0, 1), got {discard_fraction}"
        )));
    }
    if data.rows() < 3 {
        return Err(DimensionError::TooFewPoints {
            needed: 3,
            got: data.rows(),
        });
    }
    let keep = distinct_rows(data);
    if keep.len() == 1 {
        return Err(DimensionError::AllPointsDuplicate);
    }
    if keep.len() < 3 {
        return Err(DimensionError::TooFewPoints {
            needed: 3,
            got: keep.len(),
        });
    }
    let unique = data.select_rows(&keep);
    let rows: Vec<usize> = (0..unique.rows()).collect();
    let mut mu: Vec<f64> = knn::nearest_for_rows(&unique, &rows, 2, exec)
        .into_iter()
        .map(|nn| nn[1].distance / nn[0].distance)
        .collect();
    mu.sort_by(f64::total_cmp);

    let n = mu.len();
    let n_discard = (discard_fraction * n as f64).floor() as usize;
    let n_used = n - n_discard;
    let log_max_kept = mu[n_used - 1].ln();
    let exposure = mu[..n_used].iter().map(|m| m.ln()).sum::<f64>() + n_discard as f64 * log_max_kept;
    if exposure <= 0.0 {
        return Err(DimensionError::DegenerateRatios);
    }
    Ok(IdEstimate {
        id: n_used as f64 / exposure,
        n_used,
        n_points: n,
        discard_fraction,
    })
}

/// Descending covariance spectrum with `1/(N-1)` normalization. When
/// `N - 1 < D` the nonzero spectrum is taken from the `N x N` Gram matrix and
/// padded with zeros.
pub fn covariance_spectrum(data: &Tensor2D) -> Result<Vec<f64>, DimensionError> {
    let (n, dim) = (data.rows(), data.cols());
    if n < 2 {
        return Err(DimensionError::TooFewPoints { needed: 2, got: n });
    }
    let mut x = DMatrix::from_row_slice(n, dim, data.data());
    for j in 0..dim {
        let mean = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-mean);
    }
    let scale = 1.0 / (n as f64 - 1.0);
    let gram = if n - 1 < dim {
        &x * x.transpose() * scale
    } else {
        x.transpose() * &x * scale
    };
    let mut eig: Vec<f64> = SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .map(|&v| v.max(0.0))
        .collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    eig.resize(dim, 0.0);
    Ok(eig)
}

/// Maximum gap between consecutive eigenvalues after min-max scaling to
/// [0, 1]. Zero for a flat spectrum.
pub fn max_eigengap(descending: &[f64]) -> f64 {
    let (Some(&hi), Some(&lo)) = (descending.first(), descending.last()) else {
        return 0.0;
    };
    let range = hi - lo;
    if range <= 0.0 {
        return 0.0;
    }
    descending.windows(2).map(|w| (w[0] - w[1]) / range).fold(0.0, f64::max)
}

pub const DEFAULT_VARIANCE_THRESHOLD: f64 = 0.9;

/// Smallest number of principal components whose explained variance reaches
/// `variance_threshold`, with the spectrum's maximum gap.
pub fn pc_id(data: &Tensor2D, variance_threshold: f64) -> Result<SpectrumSummary, DimensionError> {
    if !(variance_threshold > 0.0 && variance_threshold <= 1.0) {
        return Err(DimensionError::InvalidParameter(format!(
            "variance threshold must be in (0, 1], got {variance_threshold}"
        )));
    }
    let eigenvalues = covariance_spectrum(data)?;
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return Err(DimensionError::DegenerateData);
    }
    let target = variance_threshold * total * (1.0 - 1e-12);
    let mut acc = 0.0;
    let mut k = eigenvalues.len();
    for (i, v) in eigenvalues.iter().enumerate() {
        acc += v;
        if acc >= target {
            k = i + 1;
            break;
        }
    }
    Ok(SpectrumSummary {
        mge: max_eigengap(&eigenvalues),
        pc_id: k,
        eigenvalues,
    })
}

/// `|pc_id - id| / id`. Requires `id > 0`.
pub fn relative_difference(pc_id: usize, id: f64) -> f64 {
    debug_assert!(id > 0.0);
    (pc_id as f64 - id).abs() / id
}

/// Nearest integer with ties rounded up, never below 1.
pub fn round_id_for_caml(id: f64) -> usize {
    ((id + 0.5).floor() as usize).max(1)
}
