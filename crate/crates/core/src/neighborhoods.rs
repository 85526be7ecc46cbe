//! Dense local neighborhoods around a base sample.
//!
//! Three builders are provided: spectral tail truncation of an image's
//! per-channel SVD, exact kNN over a point cloud, and random affine
//! augmentation of an image. [`mean_distance_to_center`] measures how tight a
//! neighborhood is.

use std::collections::HashSet;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knn;
use crate::par::{map_indexed, Execution};
use crate::synthetic::point_rng;
use crate::tensor_io::{ImageTensor, Tensor2D};

#[derive(Debug, Error, PartialEq)]
pub enum NeighborhoodError {
    #[error("mask set is empty")]
    EmptyMaskSet,
    #[error("invalid truncation plan: {0}")]
    InvalidPlan(String),
    #[error("k = {k} must satisfy 1 <= k < N = {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("row {index} out of range for {n} rows")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("a neighborhood needs at least one neighbor")]
    Empty,
    #[error("base has {base} coordinates but neighbors have {neighbors}")]
    DimensionMismatch { base: usize, neighbors: usize },
    #[error("neighborhood contains non-finite values")]
    NonFinite,
    #[error("sample count must be at least 1")]
    InvalidCount,
    #[error("tensor with {rows} rows is not a whole number of blocks of {block}")]
    BadBlocks { rows: usize, block: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeighborhoodMethod {
    Svd,
    Knn,
    Affine,
}

/// A base point and `K >= 1` neighbors in the same ambient space.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodBatch {
    pub base: Vec<f64>,
    pub neighbors: Tensor2D,
    pub method: NeighborhoodMethod,
}

impl NeighborhoodBatch {
    pub fn new(base: Vec<f64>, neighbors: Tensor2D, method: NeighborhoodMethod) -> Result<Self, NeighborhoodError> {
        if neighbors.rows() == 0 {
            return Err(NeighborhoodError::Empty);
        }
        if base.len() != neighbors.cols() {
            return Err(NeighborhoodError::DimensionMismatch {
                base: base.len(),
                neighbors: neighbors.cols(),
            });
        }
        if base.iter().chain(neighbors.data()).any(|v| !v.is_finite()) {
            return Err(NeighborhoodError::NonFinite);
        }
        Ok(Self {
            base,
            neighbors,
            method,
        })
    }

    /// Number of neighbors K (the base is not counted).
    pub fn len(&self) -> usize {
        self.neighbors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.rows() == 0
    }

    pub fn ambient_dim(&self) -> usize {
        self.base.len()
    }

    /// Same base, only the listed neighbor rows.
    pub fn subset(&self, rows: &[usize]) -> Result<Self, NeighborhoodError> {
        Self::new(self.base.clone(), self.neighbors.select_rows(rows), self.method)
    }

    /// Applies `f` to the base and every neighbor.
    pub fn map_points(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let base = f(&self.base);
        let rows: Vec<Vec<f64>> = self.neighbors.row_iter().map(&f).collect();
        Self {
            base,
            neighbors: Tensor2D::from_rows(&rows),
            method: self.method,
        }
    }

    /// `(K+1) x D` tensor with the base as row 0, tagged with block size K+1.
    pub fn to_tensor(&self) -> Tensor2D {
        let mut data = Vec::with_capacity((self.len() + 1) * self.ambient_dim());
        data.extend_from_slice(&self.base);
        data.extend_from_slice(self.neighbors.data());
        Tensor2D::new(self.len() + 1, self.ambient_dim(), data)
            .expect("shape is consistent by construction")
            .with_block_size(self.len() + 1)
    }

    /// Splits a tensor into `(base, neighbors...)` blocks. Without a block-size
    /// tag the whole tensor is one block.
    pub fn from_blocks(t: &Tensor2D, method: NeighborhoodMethod) -> Result<Vec<Self>, NeighborhoodError> {
        let block = t.ext.block_size.map_or(t.rows(), |b| b as usize);
        if block < 2 || !t.rows().is_multiple_of(block) {
            return Err(NeighborhoodError::BadBlocks { rows: t.rows(), block });
        }
        (0..t.rows() / block)
            .map(|b| {
                let start = b * block;
                let idx: Vec<usize> = (start + 1..start + block).collect();
                Self::new(t.row(start).to_vec(), t.select_rows(&idx), method)
            })
            .collect()
    }
}

/// Which tail singular values to zero. Bit `b` of a mask refers to the
/// `(b+1)`-th smallest singular value of each channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SvdTruncationPlan {
    pub tail_size: usize,
    pub masks: Vec<u64>,
}

impl Default for SvdTruncationPlan {
    fn default() -> Self {
        Self::exhaustive(10).expect("tail of 10 is valid")
    }
}

impl SvdTruncationPlan {
    pub const MAX_TAIL: usize = 24;

    /// All `2^tail_size` masks, including the empty mask (identity).
    pub fn exhaustive(tail_size: usize) -> Result<Self, NeighborhoodError> {
        if tail_size > Self::MAX_TAIL {
            return Err(NeighborhoodError::InvalidPlan(format!(
                "tail size {tail_size} exceeds {}",
                Self::MAX_TAIL
            )));
        }
        Ok(Self {
            tail_size,
            masks: (0..1u64 << tail_size).collect(),
        })
    }

    pub fn new(tail_size: usize, masks: Vec<u64>) -> Result<Self, NeighborhoodError> {
        let plan = Self { tail_size, masks };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), NeighborhoodError> {
        if self.masks.is_empty() {
            return Err(NeighborhoodError::EmptyMaskSet);
        }
        if self.tail_size > Self::MAX_TAIL {
            return Err(NeighborhoodError::InvalidPlan(format!(
                "tail size {} exceeds {}",
                self.tail_size,
                Self::MAX_TAIL
            )));
        }
        let limit = 1u64 << self.tail_size;
        if let Some(m) = self.masks.iter().find(|&&m| m >= limit) {
            return Err(NeighborhoodError::InvalidPlan(format!(
                "mask {m:#b} has bits beyond the tail of {}",
                self.tail_size
            )));
        }
        let mut seen = HashSet::new();
        if let Some(m) = self.masks.iter().find(|m| !seen.insert(**m)) {
            return Err(NeighborhoodError::InvalidPlan(format!("mask {m:#b} repeated")));
        }
        Ok(())
    }
}

struct ChannelSvd {
    u: DMatrix<f64>,
    sigma: Vec<f64>,
    v_t: DMatrix<f64>,
    /// Count of singular values above the numerical-rank tolerance.
    rank: usize,
}

/// Per-channel SVD of an image, singular triplets sorted descending.
pub struct ImageSvd {
    height: usize,
    width: usize,
    channels: Vec<ChannelSvd>,
}

impl ImageSvd {
    pub fn new(img: &ImageTensor) -> Self {
        let (h, w) = (img.height(), img.width());
        let channels = (0..img.channels())
            .map(|c| {
                let m = DMatrix::from_row_slice(h, w, img.plane(c));
                let svd = m.svd(true, true);
                let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
                let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
                order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
                let sigma: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();
                let tol = sigma.first().copied().unwrap_or(0.0) * h.max(w) as f64 * f64::EPSILON;
                ChannelSvd {
                    u: DMatrix::from_fn(h, order.len(), |i, k| u[(i, order[k])]),
                    rank: sigma.iter().filter(|&&s| s > tol).count(),
                    sigma,
                    v_t: DMatrix::from_fn(order.len(), w, |k, j| v_t[(order[k], j)]),
                }
            })
            .collect();
        Self {
            height: h,
            width: w,
            channels,
        }
    }

    /// Singular values of channel `c`, descending.
    pub fn singular_values(&self, c: usize) -> &[f64] {
        &self.channels[c].sigma
    }

    fn masked_components(&self, c: usize, tail_size: usize, mask: u64) -> impl Iterator<Item = usize> + '_ {
        let ch = &self.channels[c];
        let r = ch.sigma.len();
        (0..tail_size.min(r))
            .filter(move |b| mask >> b & 1 == 1)
            .map(move |b| r - 1 - b)
            .filter(move |&k| k < ch.rank)
    }

    /// Flattened image with the masked tail components removed from every channel.
    pub fn truncated(&self, img: &ImageTensor, tail_size: usize, mask: u64) -> Vec<f64> {
        let plane_len = self.height * self.width;
        let mut out = img.data().to_vec();
        for (c, ch) in self.channels.iter().enumerate() {
            let plane = &mut out[c * plane_len..(c + 1) * plane_len];
            for k in self.masked_components(c, tail_size, mask) {
                let s = ch.sigma[k];
                for i in 0..self.height {
                    let us = ch.u[(i, k)] * s;
                    for j in 0..self.width {
                        plane[i * self.width + j] -= us * ch.v_t[(k, j)];
                    }
                }
            }
        }
        out
    }

    /// `sqrt` of the summed squares of the singular values a mask removes,
    /// over all channels. Equals the Frobenius distance to the original.
    pub fn zeroed_norm(&self, tail_size: usize, mask: u64) -> f64 {
        (0..self.channels.len())
            .flat_map(|c| self.masked_components(c, tail_size, mask).map(move |k| (c, k)))
            .map(|(c, k)| self.channels[c].sigma[k].powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// One neighbor per mask. Zeroing a singular value below numerical rank is a
/// no-op, so a channel of rank below the tail yields identical images; those
/// are de-duplicated by exact comparison and K may be smaller than the number
/// of masks.
pub fn svd_neighborhood(img: &ImageTensor, plan: &SvdTruncationPlan) -> Result<NeighborhoodBatch, NeighborhoodError> {
    svd_neighborhood_with(img, plan, Execution::default())
}

pub fn svd_neighborhood_with(
    img: &ImageTensor,
    plan: &SvdTruncationPlan,
    exec: Execution,
) -> Result<NeighborhoodBatch, NeighborhoodError> {
    plan.validate()?;
    let svd = ImageSvd::new(img);
    let images = map_indexed(exec, plan.masks.len(), |m| {
        svd.truncated(img, plan.tail_size, plan.masks[m])
    });
    let mut seen = HashSet::new();
    let mut data = Vec::with_capacity(images.len() * img.data().len());
    let mut k = 0;
    for im in images {
        let key: Vec<u64> = im.iter().map(|v| v.to_bits()).collect();
        if seen.insert(key) {
            data.extend_from_slice(&im);
            k += 1;
        }
    }
    let neighbors = Tensor2D::new(k, img.data().len(), data).expect("consistent shape");
    NeighborhoodBatch::new(img.data().to_vec(), neighbors, NeighborhoodMethod::Svd)
}

/// The `k` rows nearest to row `index`, excluding that row; ties go to the
/// lower row index.
pub fn knn_neighborhood(data: &Tensor2D, index: usize, k: usize) -> Result<NeighborhoodBatch, NeighborhoodError> {
    let n = data.rows();
    if index >= n {
        return Err(NeighborhoodError::IndexOutOfRange { index, n });
    }
    if k == 0 || k >= n {
        return Err(NeighborhoodError::KTooLarge { k, n });
    }
    let hits = knn::nearest(data, data.row(index), k, Some(index));
    let idx: Vec<usize> = hits.iter().map(|h| h.index).collect();
    NeighborhoodBatch::new(
        data.row(index).to_vec(),
        data.select_rows(&idx),
        NeighborhoodMethod::Knn,
    )
}

/// kNN neighborhoods for several base rows.
pub fn knn_neighborhoods(
    data: &Tensor2D,
    indices: &[usize],
    k: usize,
    exec: Execution,
) -> Result<Vec<NeighborhoodBatch>, NeighborhoodError> {
    crate::par::try_map_indexed(exec, indices.len(), |q| knn_neighborhood(data, indices[q], k))
}

/// Parameters of one affine augmentation. Angles in degrees, translation in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub rotation_deg: f64,
    pub shear_x_deg: f64,
    pub shear_y_deg: f64,
    pub translate_x: f64,
    pub translate_y: f64,
}

impl AffineParams {
    pub const MAX_ANGLE_DEG: f64 = 10.0;
    pub const MAX_SHIFT_FRACTION: f64 = 0.1;

    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            shear_x_deg: 0.0,
            shear_y_deg: 0.0,
            translate_x: 0.0,
            translate_y: 0.0,
        }
    }

    /// Rotation and shears in [-10, 10] degrees, shifts up to 10% of each side.
    pub fn sample<R: Rng>(rng: &mut R, height: usize, width: usize) -> Self {
        let a = Self::MAX_ANGLE_DEG;
        let tx = Self::MAX_SHIFT_FRACTION * width as f64;
        let ty = Self::MAX_SHIFT_FRACTION * height as f64;
        Self {
            rotation_deg: rng.random_range(-a..=a),
            shear_x_deg: rng.random_range(-a..=a),
            shear_y_deg: rng.random_range(-a..=a),
            translate_x: rng.random_range(-tx..=tx),
            translate_y: rng.random_range(-ty..=ty),
        }
    }

    /// Forward linear part `R(theta) * ShearX * ShearY` as row-major 2x2.
    fn linear(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let kx = self.shear_x_deg.to_radians().tan();
        let ky = self.shear_y_deg.to_radians().tan();
        // ShearX * ShearY = [[1 + kx ky, kx], [ky, 1]]
        let sh = [[1.0 + kx * ky, kx], [ky, 1.0]];
        [
            [c * sh[0][0] - s * sh[1][0], c * sh[0][1] - s * sh[1][1]],
            [s * sh[0][0] + c * sh[1][0], s * sh[0][1] + c * sh[1][1]],
        ]
    }

    /// Source location `(x, y)` sampled for output pixel column `x`, row `y`.
    /// The transform acts about the image center.
    pub fn source_coords(&self, height: usize, width: usize, x: f64, y: f64) -> (f64, f64) {
        let m = self.linear();
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
        let dx = x - cx - self.translate_x;
        let dy = y - cy - self.translate_y;
        let sx = (m[1][1] * dx - m[0][1] * dy) / det;
        let sy = (-m[1][0] * dx + m[0][0] * dy) / det;
        (sx + cx, sy + cy)
    }
}

fn bilinear(plane: &[f64], height: usize, width: usize, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let tap = |xi: f64, yi: f64| -> f64 {
        if xi < 0.0 || yi < 0.0 || xi >= width as f64 || yi >= height as f64 {
            0.0
        } else {
            plane[yi as usize * width + xi as usize]
        }
    };
    let top = tap(x0, y0) * (1.0 - fx) + tap(x0 + 1.0, y0) * fx;
    let bottom = tap(x0, y0 + 1.0) * (1.0 - fx) + tap(x0 + 1.0, y0 + 1.0) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Resamples every channel through `params` with bilinear interpolation and
/// zero padding outside the image.
pub fn apply_affine(img: &ImageTensor, params: &AffineParams) -> ImageTensor {
    let (h, w) = (img.height(), img.width());
    let mut data = Vec::with_capacity(img.data().len());
    for c in 0..img.channels() {
        let plane = img.plane(c);
        for i in 0..h {
            for j in 0..w {
                let (sx, sy) = params.source_coords(h, w, j as f64, i as f64);
                data.push(bilinear(plane, h, w, sx, sy));
            }
        }
    }
    ImageTensor::new(h, w, img.channels(), data).expect("same shape as input")
}

/// `n` random affine augmentations of `img`. Sample `i` draws its parameters
/// from stream `i` of `seed`.
pub fn affine_neighborhood(img: &ImageTensor, n: usize, seed: u64) -> Result<NeighborhoodBatch, NeighborhoodError> {
    if n == 0 {
        return Err(NeighborhoodError::InvalidCount);
    }
    let images = map_indexed(Execution::default(), n, |i| {
        let params = AffineParams::sample(&mut point_rng(seed, i), img.height(), img.width());
        apply_affine(img, &params).data().to_vec()
    });
    NeighborhoodBatch::new(
        img.data().to_vec(),
        Tensor2D::from_rows(&images),
        NeighborhoodMethod::Affine,
    )
}

/// Mean Euclidean distance from the neighbors to the base point.
pub fn mean_distance_to_center(batch: &NeighborhoodBatch) -> f64 {
    let total: f64 = batch
        .neighbors
        .row_iter()
        .map(|r| knn::squared_distance(r, &batch.base).sqrt())
        .sum();
    total / batch.len() as f64
}
