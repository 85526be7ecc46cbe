//! Layer-wise curvature and dimension profiles over latent bundles.

use rand::seq::index;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt::Write as _;
use thiserror::Error;

use crate::caml::{estimate_many, estimate_point_curvature, CamlConfig, CamlError, CurvatureResult};
use crate::dimension::{
    pc_id, relative_difference, round_id_for_caml, twonn_id_with, DimensionError, DEFAULT_DISCARD_FRACTION,
    DEFAULT_VARIANCE_THRESHOLD,
};
use crate::metrics::{mamc, mapc, MetricsError};
use crate::neighborhoods::{knn_neighborhoods, NeighborhoodBatch, NeighborhoodError, NeighborhoodMethod};
use crate::par::Execution;
use crate::synthetic::point_rng;
use crate::tensor_io::{LayerBundle, Tensor2D};

#[derive(Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("no layers to profile")]
    Empty,
    #[error("bundles are misaligned: {0}")]
    MisalignedBundle(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("layer {layer}: {source}")]
    Dimension { layer: String, source: DimensionError },
    #[error("layer {layer}: {source}")]
    Neighborhood { layer: String, source: NeighborhoodError },
    #[error("layer {layer}: {source}")]
    Caml { layer: String, source: CamlError },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("mean MAPC is zero; the normalized gap is undefined")]
    ZeroMeanMapc,
    #[error("subsample size {size} exceeds the {available} available neighbors")]
    SizeTooLarge { size: usize, available: usize },
}

/// How the intrinsic dimension passed to the curvature fit is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DimensionChoice {
    /// Rounded TwoNN estimate of the layer.
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileConfig {
    /// Base points per layer.
    pub points: usize,
    /// Neighbors per base point when the layer has no neighborhood blocks.
    pub k: usize,
    pub d: DimensionChoice,
    /// Histogram bins; must be odd and at least 3.
    pub bins: usize,
    pub seed: u64,
    pub discard_fraction: f64,
    pub variance_threshold: f64,
    pub execution: Execution,
    pub caml: CamlConfig,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            points: 100,
            k: 200,
            d: DimensionChoice::Auto,
            bins: 41,
            seed: 0,
            discard_fraction: DEFAULT_DISCARD_FRACTION,
            variance_threshold: DEFAULT_VARIANCE_THRESHOLD,
            execution: Execution::default(),
            caml: CamlConfig::default(),
        }
    }
}

/// Histogram of signed curvatures on symmetric logarithmic bins.
///
/// `edges` has `counts.len() + 1` increasing entries. The central bin
/// `[-lo, lo)` collects values whose magnitude is below the smallest nonzero
/// magnitude, which in practice means exact zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl CurvatureHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

pub fn curvature_histogram(values: &[f64], bins: usize) -> Result<CurvatureHistogram, ProfileError> {
    if bins < 3 || bins.is_multiple_of(2) {
        return Err(ProfileError::InvalidConfig(format!(
            "bins must be odd and >= 3, got {bins}"
        )));
    }
    let side = (bins - 1) / 2;
    let mags = values.iter().map(|v| v.abs()).filter(|m| *m > 0.0 && m.is_finite());
    let (mut lo, mut hi) = mags.fold((f64::INFINITY, 0.0f64), |(l, h), m| (l.min(m), h.max(m)));
    if !lo.is_finite() {
        lo = 1.0;
        hi = 10.0;
    } else if hi <= lo {
        hi = lo * 10.0;
    }
    let (llo, lhi) = (lo.log10(), hi.log10());
    let step = (lhi - llo) / side as f64;
    let pos: Vec<f64> = (0..=side).map(|i| 10f64.powf(llo + step * i as f64)).collect();
    let mut edges: Vec<f64> = pos.iter().rev().map(|v| -v).collect();
    edges.extend(pos.iter().copied());

    let mut counts = vec![0usize; bins];
    for &v in values {
        let m = v.abs();
        let slot = if !(m >= lo) {
            0
        } else {
            let t = ((m.log10() - llo) / step).floor() as isize;
            t.clamp(0, side as isize - 1) as usize + 1
        };
        let bin = if slot == 0 {
            side
        } else if v > 0.0 {
            side + slot
        } else {
            side - slot
        };
        counts[bin] += 1;
    }
    Ok(CurvatureHistogram { edges, counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub name: String,
    pub index: usize,
    /// `index / (total - 1)`, 0 for a single-layer bundle.
    pub relative_depth: f64,
    /// Dimension used for the curvature fit.
    pub d: usize,
    pub points: usize,
    pub mapc: f64,
    /// Standard deviation of per-point mean absolute curvature.
    pub mapc_std: f64,
    pub mamc: f64,
    pub id: f64,
    pub pc_id: usize,
    pub rd: f64,
    pub mge: f64,
    pub ill_conditioned: usize,
    pub rank_deficient: usize,
    pub histogram: CurvatureHistogram,
}

/// What `mapc_std` is computed over.
pub const MAPC_STD_SOURCE: &str = "base points";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProfile {
    pub layers: Vec<LayerRecord>,
    #[serde(default = "default_std_source")]
    pub mapc_std_over: String,
}

fn default_std_source() -> String {
    MAPC_STD_SOURCE.to_string()
}

impl LayerProfile {
    pub fn mapc_values(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.mapc).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("relative_depth,mapc,mapc_std,id,pc_id,rd,mge,layer,index,d,points,mamc\n");
        for l in &self.layers {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                l.relative_depth,
                l.mapc,
                l.mapc_std,
                l.id,
                l.pc_id,
                l.rd,
                l.mge,
                l.name,
                l.index,
                l.d,
                l.points,
                l.mamc
            );
        }
        out
    }
}

fn check_alignment(bundles: &[LayerBundle]) -> Result<(), ProfileError> {
    let first = bundles.first().ok_or(ProfileError::Empty)?;
    let mut seen = HashSet::new();
    for b in bundles {
        if b.total_layers != first.total_layers {
            return Err(ProfileError::MisalignedBundle(format!(
                "layer {} declares {} layers, layer {} declares {}",
                b.layer_name, b.total_layers, first.layer_name, first.total_layers
            )));
        }
        if b.layer_index >= b.total_layers {
            return Err(ProfileError::MisalignedBundle(format!(
                "layer {} has index {} of {}",
                b.layer_name, b.layer_index, b.total_layers
            )));
        }
        if !seen.insert(b.layer_index) {
            return Err(ProfileError::MisalignedBundle(format!(
                "duplicate layer index {}",
                b.layer_index
            )));
        }
        if b.tensor.rows() != first.tensor.rows() {
            return Err(ProfileError::MisalignedBundle(format!(
                "layer {} has {} rows, layer {} has {}",
                b.layer_name,
                b.tensor.rows(),
                first.layer_name,
                first.tensor.rows()
            )));
        }
        if b.tensor.ext.block_size != first.tensor.ext.block_size {
            return Err(ProfileError::MisalignedBundle(
                "layers disagree on neighborhood block size".into(),
            ));
        }
    }
    Ok(())
}

/// Fewest neighborhood blocks whose base rows alone are used for dimension
/// estimation.
pub const MIN_ID_BASES: usize = 20;

/// Rows used for dimension estimation: the base row of each neighborhood
/// block when there are at least [`MIN_ID_BASES`] blocks, otherwise every row.
pub fn id_sample(t: &Tensor2D) -> Tensor2D {
    match t.ext.block_size {
        Some(b) if b > 0 && t.rows() / b as usize >= MIN_ID_BASES => {
            let bases: Vec<usize> = (0..t.rows() / b as usize).map(|i| i * b as usize).collect();
            t.select_rows(&bases)
        }
        _ => t.clone(),
    }
}

/// Rounded dimension estimate, kept below the ambient dimension.
pub fn fit_dimension(id: f64, ambient: usize) -> usize {
    round_id_for_caml(id).min(ambient.saturating_sub(1)).max(1)
}

fn choose(n: usize, amount: usize, seed: u64) -> Vec<usize> {
    if amount >= n {
        return (0..n).collect();
    }
    let mut picked = index::sample(&mut point_rng(seed, 0), n, amount).into_vec();
    picked.sort_unstable();
    picked
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn profile_layer(b: &LayerBundle, cfg: &ProfileConfig) -> Result<LayerRecord, ProfileError> {
    let layer = || b.layer_name.clone();
    let dim_err = |source| ProfileError::Dimension { layer: layer(), source };
    let nb_err = |source| ProfileError::Neighborhood { layer: layer(), source };
    let t = &b.tensor;

    let batches = match t.ext.block_size {
        Some(_) => {
            let all = NeighborhoodBatch::from_blocks(t, NeighborhoodMethod::Svd).map_err(nb_err)?;
            let keep = choose(all.len(), cfg.points, cfg.seed);
            keep.into_iter().map(|i| all[i].clone()).collect()
        }
        None => {
            let rows = choose(t.rows(), cfg.points, cfg.seed);
            let k = cfg.k.min(t.rows().saturating_sub(1));
            knn_neighborhoods(t, &rows, k, cfg.execution).map_err(nb_err)?
        }
    };
    let id_data = id_sample(t);

    let id = twonn_id_with(&id_data, cfg.discard_fraction, cfg.execution).map_err(dim_err)?;
    let spectrum = pc_id(&id_data, cfg.variance_threshold).map_err(dim_err)?;
    let d = match cfg.d {
        DimensionChoice::Auto => fit_dimension(id.id, t.cols()),
        DimensionChoice::Fixed(d) => d,
    };

    let mut results = Vec::with_capacity(batches.len());
    for r in estimate_many(&batches, d, &cfg.caml, cfg.execution) {
        results.push(
            r.map_err(|source| ProfileError::Caml { layer: layer(), source })?
                .curvature,
        );
    }
    let per_point: Vec<f64> = results.iter().map(CurvatureResult::mean_abs).collect();
    let (_, mapc_std) = mean_std(&per_point);
    let all: Vec<f64> = results.iter().flat_map(|r| r.iter_all()).collect();

    let relative_depth = if b.total_layers > 1 {
        b.layer_index as f64 / (b.total_layers - 1) as f64
    } else {
        0.0
    };
    Ok(LayerRecord {
        name: b.layer_name.clone(),
        index: b.layer_index,
        relative_depth,
        d,
        points: results.len(),
        mapc: mapc(&results)?,
        mapc_std,
        mamc: mamc(&results)?,
        id: id.id,
        pc_id: spectrum.pc_id,
        rd: relative_difference(spectrum.pc_id, id.id),
        mge: spectrum.mge,
        ill_conditioned: results.iter().filter(|r| r.ill_conditioned).count(),
        rank_deficient: results.iter().filter(|r| !r.rank_ok).count(),
        histogram: curvature_histogram(&all, cfg.bins)?,
    })
}

/// Profiles every layer, ordered by layer index.
pub fn build_profile(bundles: &[LayerBundle], cfg: &ProfileConfig) -> Result<LayerProfile, ProfileError> {
    check_alignment(bundles)?;
    if cfg.points == 0 {
        return Err(ProfileError::InvalidConfig("points must be at least 1".into()));
    }
    let mut order: Vec<&LayerBundle> = bundles.iter().collect();
    order.sort_by_key(|b| b.layer_index);
    let layers = order
        .into_iter()
        .map(|b| profile_layer(b, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LayerProfile {
        layers,
        mapc_std_over: default_std_source(),
    })
}

/// Spread of MAPC across layers relative to its mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub mapc_gap: f64,
    pub mean_mapc: f64,
    pub nmapc_gap: f64,
}

impl GapReport {
    pub fn from_mapc(values: &[f64]) -> Result<Self, ProfileError> {
        if values.is_empty() {
            return Err(ProfileError::Empty);
        }
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let mean_mapc = values.iter().sum::<f64>() / values.len() as f64;
        if mean_mapc == 0.0 {
            return Err(ProfileError::ZeroMeanMapc);
        }
        let mapc_gap = max - min;
        Ok(Self {
            mapc_gap,
            mean_mapc,
            nmapc_gap: mapc_gap / mean_mapc,
        })
    }
}

pub fn nmapc_gap(profile: &LayerProfile) -> Result<GapReport, ProfileError> {
    GapReport::from_mapc(&profile.mapc_values())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub size: usize,
    pub trials: usize,
    pub mean_mapc: f64,
    pub std_mapc: f64,
}

/// MAPC of random neighbor subsets of each size, `trials` draws per size.
pub fn subsample_stability(
    batch: &NeighborhoodBatch,
    d: usize,
    sizes: &[usize],
    trials: usize,
    seed: u64,
    cfg: &CamlConfig,
) -> Result<Vec<StabilityRow>, ProfileError> {
    if trials == 0 {
        return Err(ProfileError::InvalidConfig("trials must be at least 1".into()));
    }
    let available = batch.len();
    let mut rows = Vec::with_capacity(sizes.len());
    for (si, &size) in sizes.iter().enumerate() {
        if size > available {
            return Err(ProfileError::SizeTooLarge { size, available });
        }
        let mut values = Vec::with_capacity(trials);
        for t in 0..trials {
            let mut rng = point_rng(seed, si * trials + t);
            let mut pick = index::sample(&mut rng, available, size).into_vec();
            pick.sort_unstable();
            let sub = batch.subset(&pick).map_err(|source| ProfileError::Neighborhood {
                layer: String::new(),
                source,
            })?;
            let r = estimate_point_curvature(&sub, d, cfg).map_err(|source| ProfileError::Caml {
                layer: String::new(),
                source,
            })?;
            values.push(mapc(&[r])?);
        }
        let (mean_mapc, std_mapc) = mean_std(&values);
        rows.push(StabilityRow {
            size,
            trials,
            mean_mapc,
            std_mapc,
        });
    }
    Ok(rows)
}
