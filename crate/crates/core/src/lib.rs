//! Curvature estimation for data manifolds sampled as point clouds.
//!
//! The pipeline mirrors how the crate is laid out:
//!
//! * [`tensor_io`] loads and stores point clouds (`LTNT`) and per-layer latent
//!   bundles (`LBND`).
//! * [`neighborhoods`] builds dense local neighborhoods (SVD tail truncation,
//!   kNN, affine augmentation).
//! * [`dimension`] estimates intrinsic (TwoNN) and linear (PC-ID) dimension.
//! * [`caml`] fits the second-order local embedding model at a base point and
//!   returns principal curvatures.
//! * [`metrics`] reduces Hessians to scalar summaries (MAPC, MAMC, MARC, MASC)
//!   and builds the Riemann tensor.
//! * [`profile`] runs the layer-wise analysis and the normalized MAPC gap.
//! * [`synthetic`] samples manifolds with closed-form curvature for validation.
//!
//! Data-parallel loops run on rayon when the `parallel` feature is enabled
//! (the default). Every parallel loop has a sequential path selected through
//! [`Execution`], and both produce identical output.

pub mod caml;
pub mod dimension;
pub mod knn;
pub mod metrics;
pub mod neighborhoods;
mod par;
pub mod profile;
pub mod synthetic;
pub mod tensor_io;

pub use caml::{CamlConfig, CamlError, CurvatureResult, LocalFrame, TaylorFit};
pub use dimension::{DimensionError, IdEstimate, SpectrumSummary};
pub use metrics::{MetricsError, RiemannTensor};
pub use neighborhoods::{NeighborhoodBatch, NeighborhoodError, NeighborhoodMethod, SvdTruncationPlan};
pub use par::Execution;
pub use profile::{GapReport, LayerProfile, LayerRecord, ProfileConfig, ProfileError};
pub use synthetic::{EllipsoidSpec, QuadraticPatchSpec, SyntheticError};
pub use tensor_io::{ImageTensor, LayerBundle, Tensor2D, TensorIoError};
