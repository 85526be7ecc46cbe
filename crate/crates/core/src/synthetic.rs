//! Sampled manifolds with known geometry, and their closed-form curvature.
//!
//! Every generator draws point `i` from its own ChaCha8 stream (`stream = i`)
//! under the caller's seed, so output is identical whether points are
//! generated sequentially or in parallel.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neighborhoods::{NeighborhoodBatch, NeighborhoodMethod};
use crate::par::{map_indexed, Execution};
use crate::tensor_io::Tensor2D;

#[derive(Debug, Error, PartialEq)]
pub enum SyntheticError {
    #[error("radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error("sample count must be at least 1")]
    InvalidCount,
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("point is off the surface (residual {residual:e})")]
    OffSurface { residual: f64 },
}

/// Per-point generator: deterministic in (seed, index).
pub(crate) fn point_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn unit_sphere_point(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm > 1e-8 {
            return [v[0] / norm, v[1] / norm, v[2] / norm];
        }
    }
}

fn unit_sphere(n: usize, seed: u64) -> Vec<[f64; 3]> {
    map_indexed(Execution::default(), n, |i| unit_sphere_point(&mut point_rng(seed, i)))
}

/// `n` points uniform on the sphere of the given radius centered at the origin.
pub fn sample_sphere(radius: f64, n: usize, seed: u64) -> Result<Tensor2D, SyntheticError> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(SyntheticError::InvalidRadius(radius));
    }
    if n == 0 {
        return Err(SyntheticError::InvalidCount);
    }
    let pts: Vec<[f64; 3]> = unit_sphere(n, seed)
        .into_iter()
        .map(|p| [p[0] * radius, p[1] * radius, p[2] * radius])
        .collect();
    Ok(Tensor2D::from_rows(&pts))
}

/// Semi-axes of the ellipsoid `(x/a)^2 + (y/b)^2 + (z/c)^2 = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidSpec {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl EllipsoidSpec {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self, SyntheticError> {
        let spec = Self { a, b, c };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SyntheticError> {
        if [self.a, self.b, self.c].iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(SyntheticError::InvalidSpec(format!(
                "semi-axes must be positive, got ({}, {}, {})",
                self.a, self.b, self.c
            )))
        }
    }

    /// `(x/a)^2 + (y/b)^2 + (z/c)^2 - 1`.
    pub fn residual(&self, p: &[f64]) -> f64 {
        (p[0] / self.a).powi(2) + (p[1] / self.b).powi(2) + (p[2] / self.c).powi(2) - 1.0
    }
}

/// Uniform sphere samples scaled by the semi-axes.
///
/// Not area-uniform on the ellipsoid: regions stretched by the larger axes are
/// sampled more sparsely.
pub fn sample_ellipsoid(spec: &EllipsoidSpec, n: usize, seed: u64) -> Result<Tensor2D, SyntheticError> {
    spec.validate()?;
    if n == 0 {
        return Err(SyntheticError::InvalidCount);
    }
    let pts: Vec<[f64; 3]> = unit_sphere(n, seed)
        .into_iter()
        .map(|p| [p[0] * spec.a, p[1] * spec.b, p[2] * spec.c])
        .collect();
    Ok(Tensor2D::from_rows(&pts))
}

/// Gaussian curvature of the ellipsoid at a surface point:
/// `1 / (a^2 b^2 c^2 (x^2/a^4 + y^2/b^4 + z^2/c^4)^2)`.
pub fn ellipsoid_gauss_curvature(spec: &EllipsoidSpec, p: &[f64]) -> Result<f64, SyntheticError> {
    spec.validate()?;
    if p.len() != 3 {
        return Err(SyntheticError::InvalidSpec(format!(
            "expected a 3-vector, got {}",
            p.len()
        )));
    }
    let residual = spec.residual(p);
    if !(residual.abs() <= 1e-6) {
        return Err(SyntheticError::OffSurface { residual });
    }
    let (a2, b2, c2) = (spec.a * spec.a, spec.b * spec.b, spec.c * spec.c);
    let s = p[0] * p[0] / (a2 * a2) + p[1] * p[1] / (b2 * b2) + p[2] * p[2] / (c2 * c2);
    Ok(1.0 / (a2 * b2 * c2 * s * s))
}

/// Graph patch `x -> [x, f^1(x), .., f^{D-d}(x)]` with `f^a(x) = 1/2 x^T H^a x`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticPatchSpec {
    pub d: usize,
    pub ambient: usize,
    pub hessians: Vec<DMatrix<f64>>,
    /// Tangent coordinates are drawn uniformly from `[-extent, extent]^d`.
    pub extent: f64,
    /// Standard deviation of isotropic Gaussian noise added to every ambient
    /// coordinate. Zero for exact samples.
    pub noise_sigma: f64,
}

impl QuadraticPatchSpec {
    pub fn new(d: usize, ambient: usize, hessians: Vec<DMatrix<f64>>, extent: f64) -> Result<Self, SyntheticError> {
        let spec = Self {
            d,
            ambient,
            hessians,
            extent,
            noise_sigma: 0.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Surface in R^3 with principal curvatures `k1`, `k2` at the origin.
    pub fn diagonal_surface(k1: f64, k2: f64, extent: f64) -> Result<Self, SyntheticError> {
        Self::new(
            2,
            3,
            vec![DMatrix::from_diagonal(&DVector::from_vec(vec![k1, k2]))],
            extent,
        )
    }

    /// Symmetric Hessians with standard-normal entries, drawn from `seed`.
    pub fn random(d: usize, ambient: usize, extent: f64, seed: u64) -> Result<Self, SyntheticError> {
        if ambient <= d {
            return Err(SyntheticError::InvalidSpec(format!(
                "ambient {ambient} must exceed d {d}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hessians = (0..ambient - d)
            .map(|_| {
                let mut h = DMatrix::zeros(d, d);
                for i in 0..d {
                    for j in i..d {
                        let v: f64 = rng.sample(StandardNormal);
                        h[(i, j)] = v;
                        h[(j, i)] = v;
                    }
                }
                h
            })
            .collect();
        Self::new(d, ambient, hessians, extent)
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn codim(&self) -> usize {
        self.ambient - self.d
    }

    pub fn validate(&self) -> Result<(), SyntheticError> {
        let bad = |m: String| Err(SyntheticError::InvalidSpec(m));
        if self.d == 0 || self.ambient <= self.d {
            return bad(format!("need D > d >= 1, got d={} D={}", self.d, self.ambient));
        }
        if self.hessians.len() != self.ambient - self.d {
            return bad(format!(
                "expected {} Hessians, got {}",
                self.ambient - self.d,
                self.hessians.len()
            ));
        }
        for (a, h) in self.hessians.iter().enumerate() {
            if h.shape() != (self.d, self.d) {
                return bad(format!("Hessian {a} has shape {:?}", h.shape()));
            }
            if (h - h.transpose()).amax() > 1e-12 {
                return bad(format!("Hessian {a} is not symmetric"));
            }
            if h.iter().any(|v| !v.is_finite()) {
                return bad(format!("Hessian {a} has non-finite entries"));
            }
        }
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return bad(format!("extent must be positive, got {}", self.extent));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise sigma must be non-negative, got {}", self.noise_sigma));
        }
        Ok(())
    }

    /// Exact (noise-free) embedding of tangent coordinates `x`.
    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        let mut row = x.to_vec();
        for h in &self.hessians {
            let mut q = 0.0;
            for i in 0..self.d {
                for j in 0..self.d {
                    q += x[i] * h[(i, j)] * x[j];
                }
            }
            row.push(0.5 * q);
        }
        row
    }

    fn sample_row(&self, seed: u64, index: usize) -> Vec<f64> {
        let mut rng = point_rng(seed, index);
        let x: Vec<f64> = (0..self.d)
            .map(|_| rng.random_range(-self.extent..=self.extent))
            .collect();
        let mut row = self.embed(&x);
        if self.noise_sigma > 0.0 {
            for v in &mut row {
                *v += self.noise_sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
        row
    }
}

/// `n` samples of the patch as an `n x D` tensor.
pub fn sample_quadratic_patch(spec: &QuadraticPatchSpec, n: usize, seed: u64) -> Result<Tensor2D, SyntheticError> {
    spec.validate()?;
    if n == 0 {
        return Err(SyntheticError::InvalidCount);
    }
    let rows = map_indexed(Execution::default(), n, |i| spec.sample_row(seed, i));
    Ok(Tensor2D::from_rows(&rows))
}

/// Patch samples as a neighborhood of the origin, the point where the
/// generating Hessians are the exact second fundamental form.
pub fn quadratic_patch_batch(
    spec: &QuadraticPatchSpec,
    n: usize,
    seed: u64,
) -> Result<NeighborhoodBatch, SyntheticError> {
    let neighbors = sample_quadratic_patch(spec, n, seed)?;
    Ok(
        NeighborhoodBatch::new(vec![0.0; spec.ambient], neighbors, NeighborhoodMethod::Knn)
            .expect("patch samples are finite and non-empty"),
    )
}
