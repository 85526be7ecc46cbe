use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use curvekit_core::caml::{estimate_many, CurvatureResult};
use curvekit_core::dimension::{pc_id, relative_difference, twonn_id_with, SpectrumSummary};
use curvekit_core::metrics::{self, riemann_from_hessians, PlaneSet};
use curvekit_core::neighborhoods::{affine_neighborhood, knn_neighborhoods, svd_neighborhood_with};
use curvekit_core::profile::{self, fit_dimension, id_sample, DimensionChoice, GapReport, LayerProfile, ProfileConfig};
use curvekit_core::synthetic::{sample_ellipsoid, sample_quadratic_patch, sample_sphere};
use curvekit_core::tensor_io::{load_bundle, load_tensor, save_tensor};
use curvekit_core::{
    CamlConfig, EllipsoidSpec, Execution, IdEstimate, ImageTensor, NeighborhoodBatch, NeighborhoodMethod,
    QuadraticPatchSpec, SvdTruncationPlan, Tensor2D,
};

#[derive(Parser)]
#[command(
    name = "curvekit",
    version,
    about = "Curvature and dimension analysis of point clouds and latent layers"
)]
struct Cli {
    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic manifold.
    Gen(GenArgs),
    /// Build neighborhoods around base samples.
    Neighborhoods(NeighborhoodArgs),
    /// Estimate intrinsic and linear dimension.
    Id(IdArgs),
    /// Estimate principal curvatures at the base of each neighborhood.
    Curvature(CurvatureArgs),
    /// Reduce curvature estimates to a scalar metric.
    Metrics(MetricsArgs),
    /// Layer-wise curvature and dimension profile of a bundle.
    Profile(ProfileArgs),
    /// Normalized MAPC gap of a profile.
    Gap(GapArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Shape {
    Sphere,
    Ellipsoid,
    Patch,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    shape: Shape,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Sphere radius.
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    /// Ellipsoid semi-axes `a,b,c`.
    #[arg(long, value_delimiter = ',', default_values_t = [3.0, 2.0, 1.0])]
    axes: Vec<f64>,
    /// Patch intrinsic dimension.
    #[arg(long, default_value_t = 2)]
    d: usize,
    /// Patch ambient dimension.
    #[arg(long, default_value_t = 3)]
    ambient: usize,
    /// Patch half-width of the parameter cube.
    #[arg(long, default_value_t = 0.5)]
    extent: f64,
    /// Principal curvatures of a diagonal surface patch in R^3; overrides random Hessians.
    #[arg(long, value_delimiter = ',')]
    curvatures: Option<Vec<f64>>,
    /// Seed for random patch Hessians.
    #[arg(long, default_value_t = 0)]
    hessian_seed: u64,
    /// Standard deviation of ambient Gaussian noise added to patch samples.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Svd,
    Knn,
    Affine,
}

#[derive(Args)]
struct NeighborhoodArgs {
    #[arg(long, value_enum)]
    method: Method,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Number of smallest singular values eligible for truncation.
    #[arg(long, default_value_t = 10)]
    tail: usize,
    /// Neighbors per base row.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Base rows for kNN neighborhoods.
    #[arg(long, value_delimiter = ',', default_values_t = [0usize])]
    index: Vec<usize>,
    /// Number of affine augmentations.
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct IdArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Report only the TwoNN estimate.
    #[arg(long, conflicts_with = "pcid")]
    twonn: bool,
    /// Report only the PCA estimate.
    #[arg(long)]
    pcid: bool,
    #[arg(long, default_value_t = 0.9)]
    threshold: f64,
    /// Fraction of largest TwoNN ratios treated as censored.
    #[arg(long, default_value_t = 0.1)]
    discard: f64,
    /// Output path; stdout when omitted.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum DimArg {
    Auto,
    Fixed(usize),
}

impl FromStr for DimArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(DimArg::Auto);
        }
        s.parse::<usize>()
            .ok()
            .filter(|&d| d > 0)
            .map(DimArg::Fixed)
            .ok_or_else(|| format!("expected a positive integer or 'auto', got '{s}'"))
    }
}

#[derive(Args)]
struct CurvatureArgs {
    /// Neighborhood blocks (base row followed by its neighbors).
    #[arg(long = "in", required_unless_present = "bundle", conflicts_with = "bundle")]
    input: Option<PathBuf>,
    /// Layer bundle; every layer is processed.
    #[arg(long)]
    bundle: Option<PathBuf>,
    #[arg(long, default_value = "auto")]
    d: DimArg,
    /// Neighbors per base row when a layer has no block structure.
    #[arg(long, default_value_t = 200)]
    k: usize,
    /// Base rows when a layer has no block structure.
    #[arg(long, default_value_t = 100)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Mapc,
    Mamc,
    Marc,
    Masc,
}

#[derive(Args)]
struct MetricsArgs {
    /// Output of `curvekit curvature`.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum)]
    metric: Metric,
    /// Sectional planes for MASC: `coordinate` or `random:<n>`.
    #[arg(long, default_value = "coordinate")]
    planes: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest intrinsic dimension for Riemann-based metrics.
    #[arg(long, default_value_t = metrics::DEFAULT_MAX_RIEMANN_DIM)]
    max_d: usize,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long, default_value_t = 100)]
    points: usize,
    #[arg(long, default_value_t = 200)]
    k: usize,
    #[arg(long, default_value = "auto")]
    d: DimArg,
    #[arg(long, default_value_t = 41)]
    bins: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct GapArgs {
    #[arg(long)]
    profile: PathBuf,
    #[arg(long)]
    json: Option<PathBuf>,
}

/// One base point: curvature summary plus the Hessian of every explicit normal.
#[derive(Serialize, Deserialize)]
struct PointRecord {
    #[serde(flatten)]
    curvature: CurvatureResult,
    hessians: Vec<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct LayerCurvature {
    name: String,
    index: usize,
    d: usize,
    points: Vec<PointRecord>,
}

#[derive(Serialize, Deserialize)]
struct CurvatureFile {
    layers: Vec<LayerCurvature>,
}

#[derive(Serialize)]
struct IdReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    twonn: Option<IdEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pca: Option<SpectrumSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rd: Option<f64>,
}

#[derive(Serialize)]
struct MetricValue {
    name: String,
    index: usize,
    value: f64,
}

#[derive(Serialize)]
struct MetricsReport {
    metric: &'static str,
    layers: Vec<MetricValue>,
    overall: f64,
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{text}")?;
            Ok(())
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn gen(a: &GenArgs) -> Result<()> {
    let t = match a.shape {
        Shape::Sphere => sample_sphere(a.radius, a.n, a.seed)?,
        Shape::Ellipsoid => {
            let [x, y, z] = a.axes[..] else {
                bail!("--axes needs three values");
            };
            sample_ellipsoid(&EllipsoidSpec::new(x, y, z)?, a.n, a.seed)?
        }
        Shape::Patch => {
            let spec = match &a.curvatures {
                Some(k) => {
                    let [k1, k2] = k[..] else {
                        bail!("--curvatures needs two values");
                    };
                    QuadraticPatchSpec::diagonal_surface(k1, k2, a.extent)?
                }
                None => QuadraticPatchSpec::random(a.d, a.ambient, a.extent, a.hessian_seed)?,
            };
            sample_quadratic_patch(&spec.with_noise(a.noise), a.n, a.seed)?
        }
    };
    save_tensor(&t, &a.out)?;
    Ok(())
}

fn concat_blocks(batches: &[NeighborhoodBatch]) -> Result<Tensor2D> {
    let first = batches.first().context("no neighborhoods were built")?;
    let (block, cols) = (first.len() + 1, first.ambient_dim());
    let mut data = Vec::with_capacity(block * cols * batches.len());
    for b in batches {
        data.extend_from_slice(b.to_tensor().data());
    }
    Ok(Tensor2D::new(block * batches.len(), cols, data)?.with_block_size(block))
}

fn neighborhoods(a: &NeighborhoodArgs, exec: Execution) -> Result<()> {
    let t = load_tensor(&a.input)?;
    let out = match a.method {
        Method::Knn => concat_blocks(&knn_neighborhoods(&t, &a.index, a.k, exec)?)?,
        Method::Svd | Method::Affine => {
            let img = ImageTensor::from_tensor(&t).context("input must be an image tensor")?;
            let batch = match a.method {
                Method::Svd => svd_neighborhood_with(&img, &SvdTruncationPlan::exhaustive(a.tail)?, exec)?,
                _ => affine_neighborhood(&img, a.n, a.seed)?,
            };
            let mut t = batch.to_tensor();
            t.ext.image_dims = img.to_tensor().ext.image_dims;
            t
        }
    };
    save_tensor(&out, &a.out)?;
    Ok(())
}

fn id(a: &IdArgs, exec: Execution) -> Result<()> {
    let t = load_tensor(&a.input)?;
    let twonn = (!a.pcid).then(|| twonn_id_with(&t, a.discard, exec)).transpose()?;
    let pca = (!a.twonn).then(|| pc_id(&t, a.threshold)).transpose()?;
    let rd = match (&twonn, &pca) {
        (Some(i), Some(p)) => Some(relative_difference(p.pc_id, i.id)),
        _ => None,
    };
    write_json(&IdReport { twonn, pca, rd }, a.json.as_deref())
}

fn layer_batches(t: &Tensor2D, a: &CurvatureArgs, exec: Execution) -> Result<Vec<NeighborhoodBatch>> {
    if t.ext.block_size.is_some() {
        return Ok(NeighborhoodBatch::from_blocks(t, NeighborhoodMethod::Svd)?);
    }
    if a.input.is_some() {
        return Ok(NeighborhoodBatch::from_blocks(t, NeighborhoodMethod::Knn)?);
    }
    let n = t.rows();
    let step = (n / a.points.max(1)).max(1);
    let rows: Vec<usize> = (0..n).step_by(step).take(a.points).collect();
    Ok(knn_neighborhoods(t, &rows, a.k.min(n.saturating_sub(1)), exec)?)
}

fn curvature_layer(
    name: String,
    index: usize,
    t: &Tensor2D,
    a: &CurvatureArgs,
    exec: Execution,
) -> Result<LayerCurvature> {
    let d = match a.d {
        DimArg::Fixed(d) => d,
        DimArg::Auto => fit_dimension(twonn_id_with(&id_sample(t), 0.1, exec)?.id, t.cols()),
    };
    let batches = layer_batches(t, a, exec)?;
    let points = estimate_many(&batches, d, &CamlConfig::default(), exec)
        .into_iter()
        .map(|r| {
            let e = r?;
            let hessians = e
                .fit
                .hessians
                .iter()
                .map(|h| h.row_iter().map(|row| row.iter().copied().collect()).collect())
                .collect();
            Ok(PointRecord {
                curvature: e.curvature,
                hessians,
            })
        })
        .collect::<Result<Vec<_>>>()
        .with_context(|| format!("layer {name}"))?;
    Ok(LayerCurvature { name, index, d, points })
}

fn curvature(a: &CurvatureArgs, exec: Execution) -> Result<()> {
    let layers = match (&a.input, &a.bundle) {
        (Some(p), _) => {
            let name = p
                .file_stem()
                .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
            vec![curvature_layer(name, 0, &load_tensor(p)?, a, exec)?]
        }
        (None, Some(p)) => load_bundle(p)?
            .into_iter()
            .map(|b| curvature_layer(b.layer_name, b.layer_index, &b.tensor, a, exec))
            .collect::<Result<_>>()?,
        (None, None) => bail!("either --in or --bundle is required"),
    };
    write_json(&CurvatureFile { layers }, a.json.as_deref())
}

fn parse_planes(s: &str, seed: u64) -> Result<PlaneSet> {
    if s == "coordinate" {
        return Ok(PlaneSet::Coordinate);
    }
    match s.strip_prefix("random:").map(str::parse::<usize>) {
        Some(Ok(count)) if count > 0 => Ok(PlaneSet::Random { count, seed }),
        _ => bail!("--planes must be 'coordinate' or 'random:<n>' with n > 0, got '{s}'"),
    }
}

fn metric_value(layer: &LayerCurvature, metric: Metric, planes: PlaneSet, cap: usize) -> Result<f64> {
    let curv: Vec<CurvatureResult> = layer.points.iter().map(|p| p.curvature.clone()).collect();
    let tensors = || {
        layer.points.iter().map(|p| {
            let hs: Vec<_> = p
                .hessians
                .iter()
                .map(|h| nalgebra_from_rows(layer.d, h))
                .collect::<Result<_>>()?;
            Ok::<_, anyhow::Error>(riemann_from_hessians(layer.d, &hs, cap)?)
        })
    };
    Ok(match metric {
        Metric::Mapc => metrics::mapc(&curv)?,
        Metric::Mamc => metrics::mamc(&curv)?,
        Metric::Marc | Metric::Masc => {
            let mut sum = 0.0;
            let mut n = 0usize;
            for r in tensors() {
                let r = r?;
                sum += match metric {
                    Metric::Marc => metrics::marc(&r),
                    _ => metrics::masc(&r, planes)?,
                };
                n += 1;
            }
            if n == 0 {
                bail!("layer {} has no points", layer.name);
            }
            sum / n as f64
        }
    })
}

fn nalgebra_from_rows(d: usize, rows: &[Vec<f64>]) -> Result<curvekit_core::caml::Hessian> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        bail!("Hessian is not {d} x {d}");
    }
    Ok(curvekit_core::caml::Hessian::from_fn(d, d, |i, j| rows[i][j]))
}

fn metrics_cmd(a: &MetricsArgs) -> Result<()> {
    let file: CurvatureFile = read_json(&a.input)?;
    let planes = parse_planes(&a.planes, a.seed)?;
    let mut layers = Vec::with_capacity(file.layers.len());
    let mut weighted = 0.0;
    let mut weight = 0usize;
    for l in &file.layers {
        let value = metric_value(l, a.metric, planes, a.max_d)?;
        weighted += value * l.points.len() as f64;
        weight += l.points.len();
        layers.push(MetricValue {
            name: l.name.clone(),
            index: l.index,
            value,
        });
    }
    if weight == 0 {
        bail!("no curvature estimates in {}", a.input.display());
    }
    let metric = match a.metric {
        Metric::Mapc => "mapc",
        Metric::Mamc => "mamc",
        Metric::Marc => "marc",
        Metric::Masc => "masc",
    };
    write_json(
        &MetricsReport {
            metric,
            layers,
            overall: weighted / weight as f64,
        },
        a.json.as_deref(),
    )
}

fn profile_cmd(a: &ProfileArgs, exec: Execution) -> Result<()> {
    let bundles = load_bundle(&a.bundle)?;
    let cfg = ProfileConfig {
        points: a.points,
        k: a.k,
        d: match a.d {
            DimArg::Auto => DimensionChoice::Auto,
            DimArg::Fixed(d) => DimensionChoice::Fixed(d),
        },
        bins: a.bins,
        seed: a.seed,
        execution: exec,
        ..Default::default()
    };
    let p = profile::build_profile(&bundles, &cfg)?;
    if let Some(csv) = &a.csv {
        std::fs::write(csv, p.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
    }
    if a.json.is_some() || a.csv.is_none() {
        write_json(&p, a.json.as_deref())?;
    }
    Ok(())
}

fn gap(a: &GapArgs) -> Result<()> {
    let p: LayerProfile = read_json(&a.profile)?;
    write_json(&GapReport::from_mapc(&p.mapc_values())?, a.json.as_deref())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match &cli.command {
        Command::Gen(a) => gen(a),
        Command::Neighborhoods(a) => neighborhoods(a, exec),
        Command::Id(a) => id(a, exec),
        Command::Curvature(a) => curvature(a, exec),
        Command::Metrics(a) => metrics_cmd(a),
        Command::Profile(a) => profile_cmd(a, exec),
        Command::Gap(a) => gap(a),
    }
}
