//! Second-order local embedding fit (CAML) and principal curvatures.
//!
//! At a base point `y` with neighbors `y_j`:
//!
//! 1. SVD of the base-centered neighbor matrix `[y_j - y]` gives the local
//!    frame: the first `d` right-singular vectors span the tangent space, the
//!    rest the normal space. Neighbors are projected onto both, giving tangent
//!    coordinates `u_j` and normal heights `f^a(u_j)`.
//! 2. Each height is regressed on the design row
//!    `[u^1..u^d, (u^1)^2..(u^d)^2, u^1 u^2, .., u^{d-1} u^d]` without an
//!    intercept (the base sits at the origin of the frame).
//! 3. With `f(u) = g.u + 1/2 u^T H u`, the squared-term coefficient is
//!    `H_aa / 2` and the cross-term coefficient is `H_ab`. The Hessian is
//!    assembled from the upper triangle and mirrored.
//! 4. Principal curvatures are the eigenvalues of each `H^a`.
//!
//! When `K < D` the data only spans `K` directions. Normal directions outside
//! that span carry identically zero heights and therefore zero Hessians; they
//! are counted in [`LocalFrame::null_normal_dims`] instead of being stored.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neighborhoods::NeighborhoodBatch;
use crate::par::{map_indexed, Execution};

/// Symmetric `d x d` second-derivative matrix of one normal coordinate.
pub type Hessian = DMatrix<f64>;

#[derive(Debug, Error, PartialEq)]
pub enum CamlError {
    #[error("intrinsic dimension d = {d} must satisfy 1 <= d < D = {ambient}")]
    DTooLarge { d: usize, ambient: usize },
    #[error("{k} neighbors, need at least {needed}")]
    TooFewNeighbors { k: usize, needed: usize },
    #[error("neighborhood has rank {rank}, need at least {needed}")]
    RankDeficient { rank: usize, needed: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CamlConfig {
    /// Singular values of the centered neighborhood below `rank_tol * sigma_max`
    /// do not count toward its rank.
    pub rank_tol: f64,
    /// Singular values of the design matrix below `pinv_cutoff * sigma_max`
    /// are dropped from the pseudoinverse.
    pub pinv_cutoff: f64,
    /// Design matrices with a larger condition number are flagged.
    pub max_condition: f64,
    /// Fail with [`CamlError::RankDeficient`] instead of flagging.
    pub strict_rank: bool,
}

impl Default for CamlConfig {
    fn default() -> Self {
        Self {
            rank_tol: 1e-10,
            pinv_cutoff: 1e-10,
            max_condition: 1e8,
            strict_rank: false,
        }
    }
}

/// Orthonormal tangent/normal frame anchored at the base point.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFrame {
    pub base: Vec<f64>,
    /// D x d
    pub tangent_basis: DMatrix<f64>,
    /// D x m, the normal directions spanned by the neighborhood
    pub normal_basis: DMatrix<f64>,
    /// Remaining `D - d - m` normal directions, all heights zero.
    pub null_normal_dims: usize,
    /// K x d
    pub tangent_coords: DMatrix<f64>,
    /// K x m
    pub normal_coords: DMatrix<f64>,
    /// Singular values of the centered neighborhood, descending.
    pub singular_values: Vec<f64>,
    pub rank: usize,
    /// Rank is at least `d + 1`, so the normal component is observable.
    pub rank_ok: bool,
}

impl LocalFrame {
    pub fn d(&self) -> usize {
        self.tangent_basis.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.base.len()
    }

    /// `D - d`
    pub fn codim(&self) -> usize {
        self.normal_basis.ncols() + self.null_normal_dims
    }

    pub fn len(&self) -> usize {
        self.tangent_coords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn build_frame(batch: &NeighborhoodBatch, d: usize, cfg: &CamlConfig) -> Result<LocalFrame, CamlError> {
    let ambient = batch.ambient_dim();
    let k = batch.len();
    if d == 0 || d >= ambient {
        return Err(CamlError::DTooLarge { d, ambient });
    }
    if k < d + 1 {
        return Err(CamlError::TooFewNeighbors { k, needed: d + 1 });
    }

    let mut centered = DMatrix::from_row_slice(k, ambient, batch.neighbors.data());
    for mut row in centered.row_iter_mut() {
        for (v, b) in row.iter_mut().zip(&batch.base) {
            *v -= b;
        }
    }
    let svd = centered.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();

    let sigma_max = singular_values.first().copied().unwrap_or(0.0);
    let rank = singular_values
        .iter()
        .filter(|&&s| sigma_max > 0.0 && s > cfg.rank_tol * sigma_max)
        .count();
    let rank_ok = rank > d;
    if cfg.strict_rank && !rank_ok {
        return Err(CamlError::RankDeficient { rank, needed: d + 1 });
    }

    let spanned = order.len();
    let tangent_basis = DMatrix::from_fn(ambient, d, |i, c| v_t[(order[c], i)]);
    let mut normal_basis = DMatrix::from_fn(ambient, spanned - d, |i, c| v_t[(order[d + c], i)]);
    let tangent_coords = &centered * &tangent_basis;
    let mut normal_coords = &centered * &normal_basis;

    // Orient each normal so the neighborhood bends toward it on average; this
    // makes signed curvatures independent of the solver's sign choice.
    for c in 0..normal_basis.ncols() {
        if normal_coords.column(c).sum() < 0.0 {
            normal_basis.column_mut(c).neg_mut();
            normal_coords.column_mut(c).neg_mut();
        }
    }

    Ok(LocalFrame {
        base: batch.base.clone(),
        tangent_basis,
        null_normal_dims: ambient - spanned,
        normal_basis,
        tangent_coords,
        normal_coords,
        singular_values,
        rank,
        rank_ok,
    })
}

/// Number of unknowns per normal direction: `d` linear, `d` squared and
/// `d(d-1)/2` cross terms.
pub fn design_columns(d: usize) -> usize {
    2 * d + d * (d - 1) / 2
}

/// Design row `[u, u^2, u^a u^b (a < b)]` for tangent coordinates `u`.
pub fn design_row(u: &[f64]) -> Vec<f64> {
    let d = u.len();
    let mut row = Vec::with_capacity(design_columns(d));
    row.extend_from_slice(u);
    row.extend(u.iter().map(|v| v * v));
    for a in 0..d {
        for b in a + 1..d {
            row.push(u[a] * u[b]);
        }
    }
    row
}

/// K x `design_columns(d)` design matrix of the frame's tangent coordinates.
pub fn build_design_matrix(frame: &LocalFrame) -> DMatrix<f64> {
    let d = frame.d();
    let mut psi = DMatrix::zeros(frame.len(), design_columns(d));
    for (j, u) in frame.tangent_coords.row_iter().enumerate() {
        let u: Vec<f64> = u.iter().copied().collect();
        for (c, v) in design_row(&u).into_iter().enumerate() {
            psi[(j, c)] = v;
        }
    }
    psi
}

/// Gradients and Hessians of the normal heights at the base point.
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorFit {
    pub d: usize,
    /// One per spanned normal direction.
    pub gradients: Vec<DVector<f64>>,
    /// One symmetric d x d matrix per spanned normal direction.
    pub hessians: Vec<DMatrix<f64>>,
    pub residual_norms: Vec<f64>,
    /// Normal directions with identically zero Hessians (see [`LocalFrame`]).
    pub null_normal_dims: usize,
    pub condition_number: f64,
    pub ill_conditioned: bool,
    pub rank_ok: bool,
}

impl TaylorFit {
    pub fn codim(&self) -> usize {
        self.hessians.len() + self.null_normal_dims
    }

    /// All `D - d` Hessians, zero matrices included.
    pub fn all_hessians(&self) -> Vec<DMatrix<f64>> {
        let mut all = self.hessians.clone();
        all.extend(std::iter::repeat_n(
            DMatrix::zeros(self.d, self.d),
            self.null_normal_dims,
        ));
        all
    }
}

/// Splits a solution vector into (gradient, Hessian).
pub fn unpack_coefficients(d: usize, x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let grad = DVector::from_column_slice(&x[..d]);
    let mut h = DMatrix::zeros(d, d);
    for a in 0..d {
        h[(a, a)] = 2.0 * x[d + a];
    }
    let mut c = 2 * d;
    for a in 0..d {
        for b in a + 1..d {
            h[(a, b)] = x[c];
            h[(b, a)] = x[c];
            c += 1;
        }
    }
    (grad, h)
}

/// Least-squares fit of every normal height through one SVD of the design
/// matrix.
pub fn fit_taylor(frame: &LocalFrame, cfg: &CamlConfig) -> Result<TaylorFit, CamlError> {
    let d = frame.d();
    let p = design_columns(d);
    if frame.len() < p {
        return Err(CamlError::TooFewNeighbors {
            k: frame.len(),
            needed: p,
        });
    }
    if cfg.strict_rank && !frame.rank_ok {
        return Err(CamlError::RankDeficient {
            rank: frame.rank,
            needed: d + 1,
        });
    }
    let psi = build_design_matrix(frame);
    let svd = psi.clone().svd(true, true);
    let (u, v_t) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
    let sigma = &svd.singular_values;
    let sigma_max = sigma.max();
    let sigma_min = sigma.min();
    let condition_number = if sigma_min > 0.0 {
        sigma_max / sigma_min
    } else {
        f64::INFINITY
    };

    // X = V diag(1/sigma) U^T F, dropping singular values under the cutoff.
    let mut coeffs = u.transpose() * &frame.normal_coords;
    for (i, s) in sigma.iter().enumerate() {
        let inv = if *s > cfg.pinv_cutoff * sigma_max { 1.0 / s } else { 0.0 };
        coeffs.row_mut(i).scale_mut(inv);
    }
    let solution = v_t.transpose() * coeffs;
    let predicted = &psi * &solution;

    let m = frame.normal_coords.ncols();
    let mut gradients = Vec::with_capacity(m);
    let mut hessians = Vec::with_capacity(m);
    let mut residual_norms = Vec::with_capacity(m);
    for a in 0..m {
        let x: Vec<f64> = solution.column(a).iter().copied().collect();
        let (g, h) = unpack_coefficients(d, &x);
        gradients.push(g);
        hessians.push(h);
        residual_norms.push((predicted.column(a) - frame.normal_coords.column(a)).norm());
    }
    Ok(TaylorFit {
        d,
        gradients,
        hessians,
        residual_norms,
        null_normal_dims: frame.null_normal_dims,
        condition_number,
        ill_conditioned: !(condition_number <= cfg.max_condition),
        rank_ok: frame.rank_ok,
    })
}

/// Principal curvatures at one base point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureResult {
    /// Eigenvalues of each spanned-normal Hessian, descending within a row.
    pub principal_curvatures: Vec<Vec<f64>>,
    pub d: usize,
    /// Normal directions whose curvatures are all zero and not stored.
    #[serde(default)]
    pub null_normal_dims: usize,
    pub rank_ok: bool,
    #[serde(default)]
    pub ill_conditioned: bool,
}

impl CurvatureResult {
    /// `D - d`
    pub fn codim(&self) -> usize {
        self.principal_curvatures.len() + self.null_normal_dims
    }

    /// `(D - d) * d`
    pub fn count(&self) -> usize {
        self.codim() * self.d
    }

    /// Every curvature, including the implicit zeros.
    pub fn iter_all(&self) -> impl Iterator<Item = f64> + '_ {
        self.principal_curvatures
            .iter()
            .flatten()
            .copied()
            .chain(std::iter::repeat_n(0.0, self.null_normal_dims * self.d))
    }

    /// Mean absolute principal curvature of this point alone.
    pub fn mean_abs(&self) -> f64 {
        let sum: f64 = self.principal_curvatures.iter().flatten().map(|v| v.abs()).sum();
        sum / self.count() as f64
    }
}

/// Eigenvalues of a symmetric matrix, descending.
pub fn symmetric_eigenvalues(h: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(h.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

pub fn principal_curvatures(fit: &TaylorFit) -> CurvatureResult {
    CurvatureResult {
        principal_curvatures: fit.hessians.iter().map(symmetric_eigenvalues).collect(),
        d: fit.d,
        null_normal_dims: fit.null_normal_dims,
        rank_ok: fit.rank_ok,
        ill_conditioned: fit.ill_conditioned,
    }
}

/// Fit and curvatures of one neighborhood.
#[derive(Debug, Clone, PartialEq)]
pub struct PointEstimate {
    pub fit: TaylorFit,
    pub curvature: CurvatureResult,
}

pub fn estimate_point(batch: &NeighborhoodBatch, d: usize, cfg: &CamlConfig) -> Result<PointEstimate, CamlError> {
    let frame = build_frame(batch, d, cfg)?;
    let fit = fit_taylor(&frame, cfg)?;
    let curvature = principal_curvatures(&fit);
    Ok(PointEstimate { fit, curvature })
}

/// Frame, fit and eigendecomposition in one call.
pub fn estimate_point_curvature(
    batch: &NeighborhoodBatch,
    d: usize,
    cfg: &CamlConfig,
) -> Result<CurvatureResult, CamlError> {
    estimate_point(batch, d, cfg).map(|e| e.curvature)
}

/// Independent estimates for many neighborhoods, in input order.
pub fn estimate_many(
    batches: &[NeighborhoodBatch],
    d: usize,
    cfg: &CamlConfig,
    exec: Execution,
) -> Vec<Result<PointEstimate, CamlError>> {
    map_indexed(exec, batches.len(), |i| estimate_point(&batches[i], d, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neighborhoods::NeighborhoodMethod;
    use crate::tensor_io::Tensor2D;

    fn batch(base: &[f64], rows: &[Vec<f64>]) -> NeighborhoodBatch {
        NeighborhoodBatch::new(base.to_vec(), Tensor2D::from_rows(rows), NeighborhoodMethod::Knn).unwrap()
    }

    fn grid_plane(n: usize, f: impl Fn(f64, f64) -> f64) -> Vec<Vec<f64>> {
        let mut rows = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let x = i as f64 / (n - 1) as f64 - 0.5;
                let y = j as f64 / (n - 1) as f64 - 0.5;
                if x != 0.0 || y != 0.0 {
                    rows.push(vec![x, y, f(x, y)]);
                }
            }
        }
        rows
    }

    #[test]
    fn design_rows() {
        assert_eq!(design_row(&[2.0]), vec![2.0, 4.0]);
        assert_eq!(design_row(&[1.0, 3.0]), vec![1.0, 3.0, 1.0, 9.0, 3.0]);
        assert_eq!(
            design_row(&[1.0, 2.0, 3.0]),
            vec![1.0, 2.0, 3.0, 1.0, 4.0, 9.0, 2.0, 3.0, 6.0]
        );
        assert_eq!(design_columns(4), 14);
    }

    #[test]
    fn coefficient_convention() {
        // f = 1/2 (4 u1^2 - 2 u2^2) + 0.5 u1 u2 has H = [[4, .5], [.5, -2]].
        let (g, h) = unpack_coefficients(2, &[0.1, -0.2, 2.0, -1.0, 0.5]);
        assert_eq!(g.as_slice(), &[0.1, -0.2]);
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[4.0, 0.5, 0.5, -2.0]));
    }

    #[test]
    fn flat_plane_frame_and_rank_flag() {
        let rows = grid_plane(7, |_, _| 0.0);
        let frame = build_frame(&batch(&[0.0, 0.0, 0.0], &rows), 2, &CamlConfig::default()).unwrap();
        assert_eq!(frame.rank, 2);
        assert!(!frame.rank_ok);
        let n = frame.normal_basis.column(0);
        assert!((n[2].abs() - 1.0).abs() < 1e-12);
        assert!(frame.normal_coords.amax() < 1e-12);

        let strict = CamlConfig {
            strict_rank: true,
            ..Default::default()
        };
        assert_eq!(
            build_frame(&batch(&[0.0, 0.0, 0.0], &rows), 2, &strict),
            Err(CamlError::RankDeficient { rank: 2, needed: 3 })
        );
    }

    #[test]
    fn flat_plane_has_zero_hessians() {
        let rows = grid_plane(7, |_, _| 0.0);
        let est = estimate_point(&batch(&[0.0, 0.0, 0.0], &rows), 2, &CamlConfig::default()).unwrap();
        assert!(est.fit.hessians[0].amax() < 1e-10);
        assert!(est.curvature.principal_curvatures[0].iter().all(|k| k.abs() < 1e-10));
        assert!(!est.curvature.rank_ok);
    }

    #[test]
    fn tilted_plane_gradient_matches_slope() {
        // Plane z = 0.3 x - 0.2 y seen in a frame built from a noiseless
        // paraboloid sample: use an explicit axis-aligned frame instead so the
        // first-order term is isolated.
        let rows = grid_plane(6, |x, y| 0.3 * x - 0.2 * y);
        let k = rows.len();
        let frame = LocalFrame {
            base: vec![0.0; 3],
            tangent_basis: DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
            normal_basis: DMatrix::from_row_slice(3, 1, &[0.0, 0.0, 1.0]),
            null_normal_dims: 0,
            tangent_coords: DMatrix::from_fn(k, 2, |j, c| rows[j][c]),
            normal_coords: DMatrix::from_fn(k, 1, |j, _| rows[j][2]),
            singular_values: vec![],
            rank: 2,
            rank_ok: false,
        };
        let fit = fit_taylor(&frame, &CamlConfig::default()).unwrap();
        assert!((fit.gradients[0][0] - 0.3).abs() < 1e-8);
        assert!((fit.gradients[0][1] + 0.2).abs() < 1e-8);
        assert!(fit.hessians[0].amax() < 1e-8);
        assert!(fit.residual_norms[0] < 1e-10);
    }

    #[test]
    fn exact_quadratic_in_axis_frame() {
        let rows = grid_plane(9, |x, y| 0.5 * (4.0 * x * x - 2.0 * y * y));
        let k = rows.len();
        let frame = LocalFrame {
            base: vec![0.0; 3],
            tangent_basis: DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
            normal_basis: DMatrix::from_row_slice(3, 1, &[0.0, 0.0, 1.0]),
            null_normal_dims: 0,
            tangent_coords: DMatrix::from_fn(k, 2, |j, c| rows[j][c]),
            normal_coords: DMatrix::from_fn(k, 1, |j, _| rows[j][2]),
            singular_values: vec![],
            rank: 3,
            rank_ok: true,
        };
        let fit = fit_taylor(&frame, &CamlConfig::default()).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, -2.0]);
        assert!((&fit.hessians[0] - expected).amax() < 1e-8);
        assert!(!fit.ill_conditioned);
        assert_eq!(principal_curvatures(&fit).principal_curvatures[0].len(), 2);
    }

    #[test]
    fn hessians_exactly_symmetric() {
        let rows = grid_plane(8, |x, y| x * x + 0.7 * x * y - 0.3 * y * y + 0.1 * x * x * x);
        let est = estimate_point(&batch(&[0.0, 0.0, 0.0], &rows), 2, &CamlConfig::default()).unwrap();
        let h = &est.fit.hessians[0];
        assert_eq!(h, &h.transpose());
    }

    #[test]
    fn eigenvalue_examples() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert_eq!(symmetric_eigenvalues(&h), vec![1.0, -1.0]);
        assert_eq!(symmetric_eigenvalues(&DMatrix::zeros(3, 3)), vec![0.0; 3]);
    }

    #[test]
    fn dimension_and_count_errors() {
        let rows = grid_plane(4, |x, y| x * y);
        let b = batch(&[0.0, 0.0, 0.0], &rows);
        let cfg = CamlConfig::default();
        assert_eq!(build_frame(&b, 3, &cfg), Err(CamlError::DTooLarge { d: 3, ambient: 3 }));
        assert_eq!(build_frame(&b, 0, &cfg), Err(CamlError::DTooLarge { d: 0, ambient: 3 }));
        let small = batch(&[0.0, 0.0, 0.0], &rows[..4]);
        assert_eq!(
            estimate_point_curvature(&small, 2, &cfg),
            Err(CamlError::TooFewNeighbors { k: 4, needed: 5 })
        );
        let tiny = batch(&[0.0, 0.0, 0.0], &rows[..2]);
        assert_eq!(
            build_frame(&tiny, 2, &cfg),
            Err(CamlError::TooFewNeighbors { k: 2, needed: 3 })
        );
    }

    #[test]
    fn wide_neighborhood_counts_null_normals() {
        // 8 neighbors in R^12: only 8 directions are spanned.
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|j| {
                let x = (j as f64 * 0.37).sin();
                let y = (j as f64 * 1.1).cos();
                let mut r = vec![0.0; 12];
                r[0] = x;
                r[1] = y;
                r[2] = 0.5 * (x * x + y * y);
                r[3 + j % 5] = 1e-3 * (j as f64 + 1.0);
                r
            })
            .collect();
        let est = estimate_point(&batch(&[0.0; 12], &rows), 2, &CamlConfig::default()).unwrap();
        assert_eq!(est.fit.hessians.len(), 6);
        assert_eq!(est.fit.null_normal_dims, 4);
        assert_eq!(est.curvature.codim(), 10);
        assert_eq!(est.curvature.count(), 20);
        assert_eq!(est.curvature.iter_all().count(), 20);
        assert_eq!(est.fit.all_hessians().len(), 10);
    }

    #[test]
    fn sequential_and_parallel_estimates_agree() {
        let batches: Vec<NeighborhoodBatch> = (0..6)
            .map(|s| {
                let c = 0.5 + s as f64 * 0.1;
                batch(
                    &[0.0, 0.0, 0.0],
                    &grid_plane(6, |x, y| c * (x * x + y * y) + 0.05 * x * y * y),
                )
            })
            .collect();
        let cfg = CamlConfig::default();
        assert_eq!(
            estimate_many(&batches, 2, &cfg, Execution::Sequential),
            estimate_many(&batches, 2, &cfg, Execution::Parallel)
        );
    }
}
