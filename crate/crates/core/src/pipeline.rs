//! End-to-end orchestration: ingest → project → graph → cluster → refine →
//! summarize → export.
//!
//! Each stage can run on its own, reading the previous stage's files from the
//! output directory. [`run_pipeline`] runs them all in one process and writes
//! the same files with the same writers.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::config::{ConfigError, GeoMetric, IforestFeatures, PipelineConfig};
use crate::cpf::{self, ClusterLabeling, CpfParams, FitResult, OUTLIER};
use crate::export::{self, LabelRow};
use crate::geodesy::{itm_to_wgs84_all, GeoCoord, ItmCoord};
use crate::graph::{mutual_knn_graph, Metric, SparseAdjacency};
use crate::iforest;
use crate::ingest::{self, SampleTable, ScalingMethod};
use crate::matrix::FeatureMatrix;
use crate::metrics::{self, ClusterSummary};

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Project,
    Graph,
    Cluster,
    Refine,
    Summarize,
    Export,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Project,
        Stage::Graph,
        Stage::Cluster,
        Stage::Refine,
        Stage::Summarize,
        Stage::Export,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Project => "project",
            Stage::Graph => "graph",
            Stage::Cluster => "cluster",
            Stage::Refine => "refine",
            Stage::Summarize => "summarize",
            Stage::Export => "export",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("[{stage}] {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: BoxError,
    },
}

impl PipelineError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Stage { stage, .. } => Some(*stage),
            PipelineError::Config(_) => None,
        }
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: Into<BoxError>> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::Stage {
            stage,
            source: e.into(),
        })
    }
}

fn io_context(path: &Path, e: std::io::Error) -> BoxError {
    format!("{}: {e}", path.display()).into()
}

/// Files written during a run, removed again if the run fails.
#[derive(Default)]
struct Written(Vec<PathBuf>);

impl Written {
    fn write<F>(&mut self, path: &Path, stage: Stage, f: F) -> Result<(), PipelineError>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<(), BoxError>,
    {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)
                .map_err(|e| io_context(dir, e))
                .at(stage)?;
        }
        let file = File::create(path)
            .map_err(|e| io_context(path, e))
            .at(stage)?;
        self.0.push(path.to_path_buf());
        let mut w = BufWriter::new(file);
        f(&mut w).at(stage)?;
        w.flush().map_err(|e| io_context(path, e)).at(stage)
    }

    fn remove_all(&self) {
        for p in &self.0 {
            let _ = std::fs::remove_file(p);
        }
    }
}

fn read_bytes(path: &Path, stage: Stage) -> Result<Vec<u8>, PipelineError> {
    std::fs::read(path)
        .map_err(|e| io_context(path, e))
        .at(stage)
}

/// Parses the configured input survey.
pub fn ingest_table(cfg: &PipelineConfig, input: &Path) -> Result<SampleTable, PipelineError> {
    ingest::parse_g5_csv(input, cfg.input.bdl_policy, &cfg.input.aliases).at(Stage::Ingest)
}

pub fn project(cfg: &PipelineConfig, table: &SampleTable) -> Result<Vec<GeoCoord>, PipelineError> {
    let itm: Vec<ItmCoord> = table
        .records()
        .iter()
        .map(|r| ItmCoord::new(r.easting, r.northing))
        .collect();
    itm_to_wgs84_all(&itm, &cfg.projection).at(Stage::Project)
}

fn check_min_samples(params: &CpfParams, n: usize, stage: Stage) -> Result<(), PipelineError> {
    if params.min_samples >= n {
        return Err(format!(
            "min_samples = {} must be smaller than the number of samples n = {n}",
            params.min_samples
        ))
        .at(stage);
    }
    Ok(())
}

/// Geographic mutual k-NN graph with `k = min_samples`.
pub fn geo_graph(
    cfg: &PipelineConfig,
    table: &SampleTable,
    coords: &[GeoCoord],
    k: usize,
) -> Result<SparseAdjacency, PipelineError> {
    let stage = Stage::Graph;
    check_min_samples(
        &CpfParams {
            min_samples: k,
            ..cfg.cpf.clone()
        },
        table.len(),
        stage,
    )?;
    let (rows, metric): (Vec<[f64; 2]>, Metric) = match cfg.geo_metric {
        GeoMetric::Haversine => (
            coords.iter().map(|c| [c.latitude, c.longitude]).collect(),
            Metric::Haversine,
        ),
        GeoMetric::EuclideanDegrees => (
            coords.iter().map(|c| [c.latitude, c.longitude]).collect(),
            Metric::Euclidean,
        ),
        GeoMetric::EuclideanItm => (
            table
                .records()
                .iter()
                .map(|r| [r.easting, r.northing])
                .collect(),
            Metric::Euclidean,
        ),
    };
    let points = FeatureMatrix::from_rows(&rows).at(stage)?;
    mutual_knn_graph(&points, k, metric).at(stage)
}

/// The scaled feature matrix the clustering runs on.
pub fn scaled_features(
    table: &SampleTable,
    scaling: ScalingMethod,
    stage: Stage,
) -> Result<FeatureMatrix, PipelineError> {
    let raw = ingest::select_features(table).at(stage)?;
    Ok(ingest::standardize(&raw, scaling).at(stage)?.0)
}

pub fn cluster(
    cfg: &PipelineConfig,
    table: &SampleTable,
    geo: &SparseAdjacency,
) -> Result<FitResult, PipelineError> {
    let stage = Stage::Cluster;
    check_min_samples(&cfg.cpf, table.len(), stage)?;
    let features = scaled_features(table, cfg.scaling, stage)?;
    cpf::fit(&features, geo, &cfg.cpf).at(stage)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefineOutcome {
    pub scored: usize,
    pub flagged: usize,
    pub note: Option<String>,
}

/// Scores the outlier set with an Isolation Forest and flags the most
/// anomalous `contamination` fraction. Rows are updated in place.
pub fn refine(
    cfg: &PipelineConfig,
    table: &SampleTable,
    rows: &mut [LabelRow],
) -> Result<RefineOutcome, PipelineError> {
    let stage = Stage::Refine;
    let outliers: Vec<usize> = (0..rows.len())
        .filter(|&i| rows[i].cluster_label == OUTLIER)
        .collect();
    for r in rows.iter_mut() {
        r.anomaly_score = None;
        r.iforest_flag = Some(false);
    }
    if outliers.len() < 2 {
        return Ok(RefineOutcome {
            scored: 0,
            flagged: 0,
            note: Some(format!(
                "outlier set has {} sample(s); Isolation Forest needs at least 2",
                outliers.len()
            )),
        });
    }
    let all = match cfg.iforest.features {
        IforestFeatures::Standardized => scaled_features(table, cfg.scaling, stage)?,
        IforestFeatures::Raw => ingest::select_features(table).at(stage)?,
    };
    let subset = all.select_rows(&outliers).at(stage)?;
    let f = &cfg.iforest;
    let model = iforest::fit_iforest(&subset, f.n_trees, f.subsample_size, cfg.seed).at(stage)?;
    let scores = iforest::anomaly_scores(&model, &subset).at(stage)?;
    let flags = iforest::flag_outliers(&scores, f.contamination).at(stage)?;
    for ((&i, &s), &fl) in outliers.iter().zip(&scores).zip(&flags) {
        rows[i].anomaly_score = Some(s);
        rows[i].iforest_flag = Some(fl);
    }
    Ok(RefineOutcome {
        scored: outliers.len(),
        flagged: flags.iter().filter(|&&b| b).count(),
        note: None,
    })
}

/// Calinski–Harabasz on the clustering features. `None` (with a reason)
/// when the index is undefined for this labeling or not finite.
pub fn ch_score(
    cfg: &PipelineConfig,
    table: &SampleTable,
    labeling: &ClusterLabeling,
    stage: Stage,
) -> Result<(Option<f64>, Option<String>), PipelineError> {
    let features = scaled_features(table, cfg.scaling, stage)?;
    match metrics::calinski_harabasz(&features, labeling, cfg.metrics.include_outliers) {
        Ok(v) if v.is_finite() => Ok((Some(v), None)),
        Ok(_) => Ok((
            None,
            Some("Calinski-Harabasz is infinite (zero within-cluster dispersion)".into()),
        )),
        Err(e) => Ok((None, Some(format!("Calinski-Harabasz undefined: {e}")))),
    }
}

pub fn summarize(
    cfg: &PipelineConfig,
    table: &SampleTable,
    labeling: &ClusterLabeling,
) -> Result<ClusterSummary, PipelineError> {
    metrics::cluster_summary(table, labeling, cfg.metrics.log10_export).at(Stage::Summarize)
}

/// Everything a run reports, with the resolved configuration embedded.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub seed: u64,
    pub n_samples: usize,
    pub n_clusters: usize,
    pub cluster_sizes: Vec<usize>,
    pub outlier_count: usize,
    pub calinski_harabasz: Option<f64>,
    pub iforest_scored: usize,
    pub iforest_flagged: usize,
    pub warnings: Vec<String>,
    pub stage_seconds: BTreeMap<Stage, f64>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Short human-readable digest.
    pub fn summary_text(&self) -> String {
        let ch = self
            .calinski_harabasz
            .map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        format!(
            "samples: {}\nclusters: {} (sizes {:?})\noutliers: {}\nCalinski-Harabasz: {}\nIsolation Forest: {} of {} outliers flagged",
            self.n_samples,
            self.n_clusters,
            self.cluster_sizes,
            self.outlier_count,
            ch,
            self.iforest_flagged,
            self.iforest_scored
        )
    }
}

struct Timer(BTreeMap<Stage, f64>);

impl Timer {
    fn time<T>(&mut self, stage: Stage, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        *self.0.entry(stage).or_default() += t.elapsed().as_secs_f64();
        out
    }
}

fn write_summary_files(
    cfg: &PipelineConfig,
    summary: &ClusterSummary,
    summary_path: &Path,
    written: &mut Written,
) -> Result<(), PipelineError> {
    written.write(summary_path, Stage::Summarize, |w| {
        Ok(export::export_summary_csv(w, summary)?)
    })?;
    written.write(
        &cfg.output.path(&cfg.output.plot_data),
        Stage::Summarize,
        |w| Ok(export::export_plot_data(w, summary)?),
    )
}

/// Runs every stage in order and writes all artifacts. On failure, files
/// written by this run are removed.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport, PipelineError> {
    cfg.validate(true)?;
    let mut written = Written::default();
    let result = run_inner(cfg, &mut written);
    if result.is_err() {
        written.remove_all();
    }
    result
}

fn run_inner(cfg: &PipelineConfig, written: &mut Written) -> Result<RunReport, PipelineError> {
    let out = &cfg.output;
    let mut timer = Timer(BTreeMap::new());
    let mut warnings = Vec::new();

    let table = timer.time(Stage::Ingest, || ingest_table(cfg, &cfg.input.path))?;
    written.write(&out.path(&out.samples), Stage::Ingest, |w| {
        Ok(table.write_csv(w)?)
    })?;

    let coords = timer.time(Stage::Project, || project(cfg, &table))?;
    written.write(&out.path(&out.projected), Stage::Project, |w| {
        Ok(export::write_projected_csv(w, &table, &coords)?)
    })?;

    let geo = timer.time(Stage::Graph, || {
        geo_graph(cfg, &table, &coords, cfg.cpf.min_samples)
    })?;
    written.write(&out.path(&out.adjacency), Stage::Graph, |w| {
        Ok(geo.write_binary(w)?)
    })?;

    let fit = timer.time(Stage::Cluster, || cluster(cfg, &table, &geo))?;
    warnings.extend(fit.density.warnings.iter().cloned());
    let mut rows = export::label_rows(&table.site_ids(), &fit);
    written.write(&out.path(&out.labels), Stage::Cluster, |w| {
        Ok(export::write_labels_csv(w, &rows, false)?)
    })?;

    let refined = timer.time(Stage::Refine, || refine(cfg, &table, &mut rows))?;
    warnings.extend(refined.note.clone());
    written.write(&out.path(&out.refined), Stage::Refine, |w| {
        Ok(export::write_labels_csv(w, &rows, true)?)
    })?;

    let summary = timer.time(Stage::Summarize, || summarize(cfg, &table, &fit.labeling))?;
    warnings.extend(summary.warnings.iter().cloned());
    write_summary_files(cfg, &summary, &out.path(&out.summary), written)?;

    let (ch, ch_note) = timer.time(Stage::Export, || {
        ch_score(cfg, &table, &fit.labeling, Stage::Export)
    })?;
    warnings.extend(ch_note);
    written.write(&out.path(&out.geojson), Stage::Export, |w| {
        Ok(export::export_geojson(w, &rows, &coords)?)
    })?;

    let report = RunReport {
        config: cfg.clone(),
        seed: cfg.seed,
        n_samples: table.len(),
        n_clusters: fit.labeling.n_clusters(),
        cluster_sizes: fit.labeling.sizes(),
        outlier_count: fit.labeling.outlier_count(),
        calinski_harabasz: ch,
        iforest_scored: refined.scored,
        iforest_flagged: refined.flagged,
        warnings,
        stage_seconds: timer.0,
    };
    written.write(&out.path(&out.report), Stage::Export, |w| {
        Ok(w.write_all(report.to_json().as_bytes())?)
    })?;
    Ok(report)
}

/// Runs a single stage, reading upstream artifacts from the output
/// directory. `input` replaces the stage's primary input file and `output`
/// its primary output file.
pub fn run_stage(
    cfg: &PipelineConfig,
    stage: Stage,
    input: Option<&Path>,
    output: Option<&Path>,
) -> Result<Option<RunReport>, PipelineError> {
    cfg.validate(stage == Stage::Ingest && input.is_none())?;
    let mut written = Written::default();
    let result = run_stage_inner(cfg, stage, input, output, &mut written);
    if result.is_err() {
        written.remove_all();
    }
    result
}

fn run_stage_inner(
    cfg: &PipelineConfig,
    stage: Stage,
    input: Option<&Path>,
    output: Option<&Path>,
    written: &mut Written,
) -> Result<Option<RunReport>, PipelineError> {
    let out = &cfg.output;
    let in_or = |name: &str| {
        input
            .map(Path::to_path_buf)
            .unwrap_or_else(|| out.path(name))
    };
    let out_or = |name: &str| {
        output
            .map(Path::to_path_buf)
            .unwrap_or_else(|| out.path(name))
    };
    let load_projected = |path: &Path| -> Result<(SampleTable, Vec<GeoCoord>), PipelineError> {
        export::read_projected_csv(&read_bytes(path, stage)?).at(stage)
    };
    let mut timer = Timer(BTreeMap::new());

    match stage {
        Stage::Ingest => {
            let src = input
                .map(Path::to_path_buf)
                .unwrap_or_else(|| cfg.input.path.clone());
            let table = ingest_table(cfg, &src)?;
            written.write(&out_or(&out.samples), stage, |w| Ok(table.write_csv(w)?))?;
        }
        Stage::Project => {
            let bytes = read_bytes(&in_or(&out.samples), stage)?;
            let table = ingest::parse_g5_reader(
                bytes.as_slice(),
                ingest::BdlPolicy::Reject,
                &ingest::ColumnAliases::default(),
            )
            .at(stage)?;
            let coords = project(cfg, &table)?;
            written.write(&out_or(&out.projected), stage, |w| {
                Ok(export::write_projected_csv(w, &table, &coords)?)
            })?;
        }
        Stage::Graph => {
            let (table, coords) = load_projected(&in_or(&out.projected))?;
            let geo = geo_graph(cfg, &table, &coords, cfg.cpf.min_samples)?;
            written.write(&out_or(&out.adjacency), stage, |w| Ok(geo.write_binary(w)?))?;
        }
        Stage::Cluster => {
            let (table, _) = load_projected(&in_or(&out.projected))?;
            let adj_path = out.path(&out.adjacency);
            let geo =
                SparseAdjacency::read_binary(read_bytes(&adj_path, stage)?.as_slice()).at(stage)?;
            let fit = cluster(cfg, &table, &geo)?;
            for w in &fit.density.warnings {
                log::warn!("{w}");
            }
            let rows = export::label_rows(&table.site_ids(), &fit);
            written.write(&out_or(&out.labels), stage, |w| {
                Ok(export::write_labels_csv(w, &rows, false)?)
            })?;
        }
        Stage::Refine => {
            let (table, _) = load_projected(&out.path(&out.projected))?;
            let mut rows =
                export::read_labels_csv(read_bytes(&in_or(&out.labels), stage)?.as_slice())
                    .at(stage)?;
            export::labeling_from_rows(&table, &rows).at(stage)?;
            let outcome = refine(cfg, &table, &mut rows)?;
            if let Some(n) = outcome.note {
                log::warn!("{n}");
            }
            written.write(&out_or(&out.refined), stage, |w| {
                Ok(export::write_labels_csv(w, &rows, true)?)
            })?;
        }
        Stage::Summarize => {
            let (table, _) = load_projected(&out.path(&out.projected))?;
            let rows = export::read_labels_csv(read_bytes(&in_or(&out.refined), stage)?.as_slice())
                .at(stage)?;
            let labeling = export::labeling_from_rows(&table, &rows).at(stage)?;
            let summary = summarize(cfg, &table, &labeling)?;
            for w in &summary.warnings {
                log::warn!("{w}");
            }
            write_summary_files(cfg, &summary, &out_or(&out.summary), written)?;
        }
        Stage::Export => {
            let (table, coords) = load_projected(&out.path(&out.projected))?;
            let rows = export::read_labels_csv(read_bytes(&in_or(&out.refined), stage)?.as_slice())
                .at(stage)?;
            let labeling = export::labeling_from_rows(&table, &rows).at(stage)?;
            let (ch, note) = timer.time(stage, || ch_score(cfg, &table, &labeling, stage))?;
            written.write(&out_or(&out.geojson), stage, |w| {
                Ok(export::export_geojson(w, &rows, &coords)?)
            })?;
            let report = RunReport {
                config: cfg.clone(),
                seed: cfg.seed,
                n_samples: table.len(),
                n_clusters: labeling.n_clusters(),
                cluster_sizes: labeling.sizes(),
                outlier_count: labeling.outlier_count(),
                calinski_harabasz: ch,
                iforest_scored: rows.iter().filter(|r| r.anomaly_score.is_some()).count(),
                iforest_flagged: rows.iter().filter(|r| r.iforest_flag == Some(true)).count(),
                warnings: note.into_iter().collect(),
                stage_seconds: timer.0,
            };
            written.write(&out.path(&out.report), stage, |w| {
                Ok(w.write_all(report.to_json().as_bytes())?)
            })?;
            return Ok(Some(report));
        }
    }
    Ok(None)
}

/// Hyperparameter grid for [`grid_search`]. Empty axes take the config value.
#[derive(Debug, Clone, Default)]
pub struct GridSpec {
    pub min_samples: Vec<usize>,
    pub rho: Vec<f64>,
    pub alpha: Vec<f64>,
    pub merge_threshold: Vec<f64>,
    pub density_ratio_threshold: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridRow {
    pub params: CpfParams,
    pub n_clusters: usize,
    pub outlier_count: usize,
    pub calinski_harabasz: Option<f64>,
}

/// Fits every combination in the grid. Choosing among them is left to the user.
pub fn grid_search(cfg: &PipelineConfig, spec: &GridSpec) -> Result<Vec<GridRow>, PipelineError> {
    cfg.validate(true)?;
    fn axis<T: Clone>(v: &[T], default: T) -> Vec<T> {
        if v.is_empty() {
            vec![default]
        } else {
            v.to_vec()
        }
    }
    let table = ingest_table(cfg, &cfg.input.path)?;
    let coords = project(cfg, &table)?;
    let features = scaled_features(&table, cfg.scaling, Stage::Cluster)?;
    let base = &cfg.cpf;
    let mut rows = Vec::new();
    for k in axis(&spec.min_samples, base.min_samples) {
        let geo = geo_graph(cfg, &table, &coords, k)?;
        for rho in axis(&spec.rho, base.rho) {
            for alpha in axis(&spec.alpha, base.alpha) {
                for mt in axis(&spec.merge_threshold, base.merge_threshold) {
                    for dr in axis(&spec.density_ratio_threshold, base.density_ratio_threshold) {
                        let params = CpfParams {
                            min_samples: k,
                            rho,
                            alpha,
                            merge_threshold: mt,
                            density_ratio_threshold: dr,
                            min_component_size: base.min_component_size,
                        };
                        let fit = cpf::fit(&features, &geo, &params).at(Stage::Cluster)?;
                        let ch = metrics::calinski_harabasz(
                            &features,
                            &fit.labeling,
                            cfg.metrics.include_outliers,
                        )
                        .ok()
                        .filter(|v| v.is_finite());
                        rows.push(GridRow {
                            params,
                            n_clusters: fit.labeling.n_clusters(),
                            outlier_count: fit.labeling.outlier_count(),
                            calinski_harabasz: ch,
                        });
                    }
                }
            }
        }
    }
    Ok(rows)
}
