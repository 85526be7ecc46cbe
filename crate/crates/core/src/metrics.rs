//! Scalar and tensor curvature summaries built from estimated Hessians.
//!
//! Riemann components follow the Gauss equation in a flat ambient space,
//!
//! ```text
//! R[i][l][j][k] = sum_a ( h^a_ik h^a_lj - h^a_ij h^a_lk )
//! ```
//!
//! With this index layout `R(u, v, v, u)` is the positive quantity
//! `h(u,u) h(v,v) - |h(u,v)|^2` for a convex surface, so sectional curvature
//! is `R(u, v, v, u)` over the Gram determinant of `u, v`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caml::{CurvatureResult, TaylorFit};
use crate::synthetic::point_rng;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no curvature results to summarize")]
    EmptyInput,
    #[error("Riemann tensor for d = {d} exceeds the cap of d <= {cap}")]
    DimensionTooLarge { d: usize, cap: usize },
    #[error("vectors span a degenerate plane (Gram determinant {gram:e})")]
    DegeneratePlane { gram: f64 },
    #[error("Gaussian curvature needs d = 2 and D - d = 1, got d = {d}, D - d = {codim}")]
    WrongDimensions { d: usize, codim: usize },
    #[error("vector of length {got} does not match d = {d}")]
    LengthMismatch { d: usize, got: usize },
}

pub const DEFAULT_MAX_RIEMANN_DIM: usize = 16;
pub const MIN_GRAM_DETERMINANT: f64 = 1e-12;

/// Count-weighted running mean; merging two partial means is exact regardless
/// of how the inputs were split.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeanAccumulator {
    pub sum: f64,
    pub count: usize,
}

impl MeanAccumulator {
    pub fn add(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            sum: self.sum + other.sum,
            count: self.count + other.count,
        }
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

fn point_abs_curvature(r: &CurvatureResult) -> MeanAccumulator {
    MeanAccumulator {
        sum: r.principal_curvatures.iter().flatten().map(|v| v.abs()).sum(),
        count: r.count(),
    }
}

/// Mean absolute principal curvature over all points, normals and tangent
/// eigen-directions.
pub fn mapc(results: &[CurvatureResult]) -> Result<f64, MetricsError> {
    results
        .iter()
        .map(point_abs_curvature)
        .fold(MeanAccumulator::default(), MeanAccumulator::merge)
        .mean()
        .ok_or(MetricsError::EmptyInput)
}

/// Mean over points and normals of `|mean eigenvalue of H^a|`.
pub fn mamc(results: &[CurvatureResult]) -> Result<f64, MetricsError> {
    results
        .iter()
        .map(|r| MeanAccumulator {
            sum: r
                .principal_curvatures
                .iter()
                .map(|row| (row.iter().sum::<f64>() / r.d as f64).abs())
                .sum(),
            count: r.codim(),
        })
        .fold(MeanAccumulator::default(), MeanAccumulator::merge)
        .mean()
        .ok_or(MetricsError::EmptyInput)
}

/// Product of the two principal curvatures of a surface in R^3.
pub fn gaussian_curvature_2d(result: &CurvatureResult) -> Result<f64, MetricsError> {
    if result.d != 2 || result.codim() != 1 {
        return Err(MetricsError::WrongDimensions {
            d: result.d,
            codim: result.codim(),
        });
    }
    let k = result
        .principal_curvatures
        .first()
        .map_or(&[0.0, 0.0][..], |r| r.as_slice());
    Ok(k[0] * k[1])
}

/// Dense `d^4` (0,4)-curvature tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct RiemannTensor {
    d: usize,
    components: Vec<f64>,
}

impl RiemannTensor {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    #[inline]
    pub fn get(&self, i: usize, l: usize, j: usize, k: usize) -> f64 {
        let d = self.d;
        self.components[((i * d + l) * d + j) * d + k]
    }

    /// Full contraction `R(a, b, c, e)`.
    pub fn apply(&self, a: &[f64], b: &[f64], c: &[f64], e: &[f64]) -> f64 {
        let d = self.d;
        let mut acc = 0.0;
        for i in 0..d {
            for l in 0..d {
                let w = a[i] * b[l];
                if w == 0.0 {
                    continue;
                }
                for j in 0..d {
                    for k in 0..d {
                        acc += w * c[j] * e[k] * self.get(i, l, j, k);
                    }
                }
            }
        }
        acc
    }
}

/// Riemann tensor from per-normal Hessians, refusing `d > cap`.
pub fn riemann_from_hessians(d: usize, hessians: &[DMatrix<f64>], cap: usize) -> Result<RiemannTensor, MetricsError> {
    if d > cap {
        return Err(MetricsError::DimensionTooLarge { d, cap });
    }
    let mut components = vec![0.0; d.pow(4)];
    for h in hessians {
        for i in 0..d {
            for l in 0..d {
                for j in 0..d {
                    for k in 0..d {
                        components[((i * d + l) * d + j) * d + k] += h[(i, k)] * h[(l, j)] - h[(i, j)] * h[(l, k)];
                    }
                }
            }
        }
    }
    Ok(RiemannTensor { d, components })
}

/// Riemann tensor of a fit with the default dimension cap.
pub fn riemann_tensor(fit: &TaylorFit) -> Result<RiemannTensor, MetricsError> {
    riemann_from_hessians(fit.d, &fit.hessians, DEFAULT_MAX_RIEMANN_DIM)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sectional curvature of the plane spanned by `u` and `v`.
pub fn sectional_curvature(r: &RiemannTensor, u: &[f64], v: &[f64]) -> Result<f64, MetricsError> {
    for x in [u, v] {
        if x.len() != r.d {
            return Err(MetricsError::LengthMismatch { d: r.d, got: x.len() });
        }
    }
    let gram = dot(u, u) * dot(v, v) - dot(u, v).powi(2);
    if !(gram > MIN_GRAM_DETERMINANT) {
        return Err(MetricsError::DegeneratePlane { gram });
    }
    Ok(r.apply(u, v, v, u) / gram)
}

/// Mean absolute Riemann component.
pub fn marc(r: &RiemannTensor) -> f64 {
    if r.components.is_empty() {
        return 0.0;
    }
    r.components.iter().map(|v| v.abs()).sum::<f64>() / r.components.len() as f64
}

/// Planes over which sectional curvatures are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaneSet {
    /// All `d(d-1)/2` coordinate planes `e_i ^ e_j`, `i < j`.
    Coordinate,
    /// `count` planes spanned by Gaussian random vector pairs.
    Random { count: usize, seed: u64 },
}

/// Mean absolute sectional curvature. A curve (d = 1) has no planes and
/// yields 0.
pub fn masc(r: &RiemannTensor, planes: PlaneSet) -> Result<f64, MetricsError> {
    let d = r.d;
    let mut acc = MeanAccumulator::default();
    match planes {
        PlaneSet::Coordinate => {
            let mut u = vec![0.0; d];
            let mut v = vec![0.0; d];
            for i in 0..d {
                for j in i + 1..d {
                    u.iter_mut().for_each(|x| *x = 0.0);
                    v.iter_mut().for_each(|x| *x = 0.0);
                    u[i] = 1.0;
                    v[j] = 1.0;
                    acc.add(sectional_curvature(r, &u, &v)?.abs());
                }
            }
        }
        PlaneSet::Random { count, seed } => {
            if d < 2 {
                return Ok(0.0);
            }
            for p in 0..count {
                let mut rng = point_rng(seed, p);
                loop {
                    let u: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                    let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                    match sectional_curvature(r, &u, &v) {
                        Ok(k) => {
                            acc.add(k.abs());
                            break;
                        }
                        Err(MetricsError::DegeneratePlane { .. }) => continue,
                        Err(e) => return Err(e),
                    }
                }
            }
        }
    }
    Ok(acc.mean().unwrap_or(0.0))
}

/// MARC over many fits, weighted by component count.
pub fn marc_many(fits: &[TaylorFit], cap: usize) -> Result<f64, MetricsError> {
    let mut acc = MeanAccumulator::default();
    for f in fits {
        let r = riemann_from_hessians(f.d, &f.hessians, cap)?;
        acc = acc.merge(MeanAccumulator {
            sum: r.components.iter().map(|v| v.abs()).sum(),
            count: r.components.len(),
        });
    }
    acc.mean().ok_or(MetricsError::EmptyInput)
}

/// MASC over many fits (each point weighted equally).
pub fn masc_many(fits: &[TaylorFit], planes: PlaneSet, cap: usize) -> Result<f64, MetricsError> {
    if fits.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut acc = MeanAccumulator::default();
    for f in fits {
        acc.add(masc(&riemann_from_hessians(f.d, &f.hessians, cap)?, planes)?);
    }
    Ok(acc.mean().expect("non-empty"))
}
