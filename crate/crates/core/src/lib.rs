//! Spatially constrained component-wise peak-finding (spatial-CPF) clustering
//! for multi-element geochemical soil surveys.
//!
//! The pipeline runs in stage order:
//!
//! 1. [`ingest`]: parse the survey CSV, select the 15 potentially toxic
//!    elements, standardize them.
//! 2. [`geodesy`]: Irish Transverse Mercator (EPSG:2157) ⇄ WGS84.
//! 3. [`graph`]: mutual k-nearest-neighbor graphs over geography and
//!    chemistry, their intersection, and its connected components.
//! 4. [`cpf`]: density peaks within each component, assignment, merging.
//! 5. [`iforest`]: Isolation Forest refinement of the outlier set.
//! 6. [`metrics`]: Calinski–Harabasz and per-cluster box-plot statistics.
//!
//! [`pipeline`] wires the stages together from a single [`config::PipelineConfig`]
//! and [`export`] writes the CSV and GeoJSON artifacts.

pub mod config;
pub mod cpf;
pub mod export;
pub mod geodesy;
pub mod graph;
pub mod iforest;
pub mod ingest;
pub mod matrix;
pub mod metrics;
pub mod pipeline;
pub mod stats;

pub use cpf::{fit, ClusterLabeling, CpfParams, FitResult};
pub use geodesy::{GeoCoord, ItmCoord, TmProjection};
pub use graph::{ComponentLabels, Metric, SparseAdjacency};
pub use ingest::{BdlPolicy, Element, SampleTable, ScalingMethod, ELEMENTS};
pub use matrix::FeatureMatrix;
