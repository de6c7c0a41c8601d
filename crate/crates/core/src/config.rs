//! Declarative pipeline configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cpf::CpfParams;
use crate::geodesy::TmProjection;
use crate::ingest::{BdlPolicy, ColumnAliases, ScalingMethod};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Coordinates and distance used for the geographic neighbor graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeoMetric {
    /// Great-circle distance on WGS84 latitude/longitude.
    #[default]
    Haversine,
    /// Planar distance on ITM easting/northing.
    EuclideanItm,
    /// Planar distance on raw latitude/longitude degrees.
    EuclideanDegrees,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IforestFeatures {
    /// The scaled features the clustering ran on.
    #[default]
    Standardized,
    /// Raw mg/kg concentrations.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub path: PathBuf,
    pub bdl_policy: BdlPolicy,
    pub aliases: ColumnAliases,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            path: PathBuf::from("data/G5.csv"),
            bdl_policy: BdlPolicy::HalfDl,
            aliases: ColumnAliases::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IforestConfig {
    pub n_trees: usize,
    pub subsample_size: usize,
    pub contamination: f64,
    pub features: IforestFeatures,
}

impl Default for IforestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            subsample_size: 256,
            contamination: 0.30,
            features: IforestFeatures::Standardized,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub include_outliers: bool,
    pub log10_export: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            include_outliers: false,
            log10_export: true,
        }
    }
}

/// Output directory and file names of every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub samples: String,
    pub projected: String,
    pub adjacency: String,
    pub labels: String,
    pub refined: String,
    pub summary: String,
    pub plot_data: String,
    pub geojson: String,
    pub report: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            samples: "samples.csv".into(),
            projected: "projected.csv".into(),
            adjacency: "geo_adjacency.bin".into(),
            labels: "labels.csv".into(),
            refined: "refined.csv".into(),
            summary: "summary.csv".into(),
            plot_data: "plot_data.csv".into(),
            geojson: "clusters.geojson".into(),
            report: "report.json".into(),
        }
    }
}

impl OutputConfig {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub scaling: ScalingMethod,
    pub geo_metric: GeoMetric,
    pub input: InputConfig,
    pub projection: TmProjection,
    pub cpf: CpfParams,
    pub iforest: IforestConfig,
    pub metrics: MetricsConfig,
    pub output: OutputConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scaling: ScalingMethod::Zscore,
            geo_metric: GeoMetric::Haversine,
            input: InputConfig::default(),
            projection: TmProjection::itm(),
            cpf: CpfParams::default(),
            iforest: IforestConfig::default(),
            metrics: MetricsConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses TOML. Relative paths are resolved against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: Self = toml::from_str(text)?;
        if cfg.input.path.is_relative() {
            cfg.input.path = base_dir.join(&cfg.input.path);
        }
        if cfg.output.dir.is_relative() {
            cfg.output.dir = base_dir.join(&cfg.output.dir);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }

    /// Range checks. With `require_input`, the input file must exist.
    pub fn validate(&self, require_input: bool) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.cpf
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.projection
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let f = &self.iforest;
        if f.n_trees == 0 {
            return invalid("iforest.n_trees must be at least 1".into());
        }
        if f.subsample_size < 2 {
            return invalid("iforest.subsample_size must be at least 2".into());
        }
        if !(f.contamination > 0.0 && f.contamination < 1.0) {
            return invalid(format!(
                "iforest.contamination = {} not in (0, 1)",
                f.contamination
            ));
        }
        if require_input && !self.input.path.is_file() {
            return invalid(format!(
                "input file {} does not exist",
                self.input.path.display()
            ));
        }
        if self.output.dir.exists() && !self.output.dir.is_dir() {
            return invalid(format!(
                "output.dir {} is not a directory",
                self.output.dir.display()
            ));
        }
        Ok(())
    }
}
