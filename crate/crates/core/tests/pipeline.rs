mod common;

use std::path::Path;

use spatial_cpf::config::PipelineConfig;
use spatial_cpf::pipeline::{grid_search, run_pipeline, run_stage, GridSpec, Stage};

fn setup(dir: &Path, n: usize) -> PipelineConfig {
    let input = dir.join("survey.csv");
    common::synthetic_survey(n, 3)
        .write_csv(std::fs::File::create(&input).unwrap())
        .unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.input.path = input;
    cfg.output.dir = dir.join("out");
    cfg.cpf.min_samples = 20;
    cfg.cpf.merge_threshold = 3.0;
    cfg
}

fn exports(cfg: &PipelineConfig) -> Vec<(String, Vec<u8>)> {
    let o = &cfg.output;
    [
        &o.samples,
        &o.projected,
        &o.adjacency,
        &o.labels,
        &o.refined,
        &o.summary,
        &o.plot_data,
        &o.geojson,
    ]
    .iter()
    .map(|name| (name.to_string(), std::fs::read(o.path(name)).unwrap()))
    .collect()
}

#[test]
fn report_is_consistent_and_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 600);
    let a = run_pipeline(&cfg).unwrap();
    assert_eq!(
        a.cluster_sizes.iter().sum::<usize>(),
        a.n_samples - a.outlier_count
    );
    assert_eq!(a.n_clusters, a.cluster_sizes.len());
    assert!(a.n_clusters >= 1);
    let first = exports(&cfg);
    let b = run_pipeline(&cfg).unwrap();
    assert_eq!(exports(&cfg), first);
    assert_eq!(a.cluster_sizes, b.cluster_sizes);

    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(cfg.output.path(&cfg.output.report)).unwrap())
            .unwrap();
    assert_eq!(report["config"]["cpf"]["min_samples"], 20);
    assert_eq!(report["seed"], 0);
    assert!(report["stage_seconds"]["cluster"].is_number());

    let gj: serde_json::Value =
        serde_json::from_slice(&std::fs::read(cfg.output.path(&cfg.output.geojson)).unwrap())
            .unwrap();
    let feats = gj["features"].as_array().unwrap();
    assert_eq!(feats.len(), 600);
    let outliers = feats
        .iter()
        .filter(|f| f["properties"]["cluster"] == -1)
        .count();
    assert_eq!(outliers, a.outlier_count);
}

#[test]
fn chained_stages_equal_full_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 500);
    run_pipeline(&cfg).unwrap();
    let full = exports(&cfg);
    let full_report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(cfg.output.path(&cfg.output.report)).unwrap())
            .unwrap();
    std::fs::remove_dir_all(&cfg.output.dir).unwrap();
    for stage in Stage::ALL {
        run_stage(&cfg, stage, None, None).unwrap();
    }
    assert_eq!(exports(&cfg), full);
    let chained: serde_json::Value =
        serde_json::from_slice(&std::fs::read(cfg.output.path(&cfg.output.report)).unwrap())
            .unwrap();
    for key in [
        "n_clusters",
        "cluster_sizes",
        "outlier_count",
        "calinski_harabasz",
        "iforest_flagged",
    ] {
        assert_eq!(chained[key], full_report[key], "{key}");
    }
}

#[test]
fn min_samples_at_least_n_is_named_and_leaves_no_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = setup(dir.path(), 50);
    cfg.cpf.min_samples = 50;
    let err = run_pipeline(&cfg).unwrap_err();
    assert_eq!(err.stage(), Some(Stage::Graph));
    let msg = err.to_string();
    assert!(
        msg.contains("min_samples") && msg.contains("[graph]"),
        "{msg}"
    );
    let left: Vec<_> = std::fs::read_dir(&cfg.output.dir)
        .map(|d| d.flatten().map(|e| e.path()).collect())
        .unwrap_or_default();
    assert!(left.is_empty(), "{left:?}");
}

#[test]
fn missing_upstream_artifact_is_stage_tagged() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 50);
    let err = run_stage(&cfg, Stage::Cluster, None, None).unwrap_err();
    assert_eq!(err.stage(), Some(Stage::Cluster));
}

#[test]
fn seed_changes_only_refinement() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = setup(dir.path(), 500);
    let a = run_pipeline(&cfg).unwrap();
    let labels_a = std::fs::read(cfg.output.path(&cfg.output.labels)).unwrap();
    cfg.seed = 99;
    let b = run_pipeline(&cfg).unwrap();
    assert_eq!(
        std::fs::read(cfg.output.path(&cfg.output.labels)).unwrap(),
        labels_a
    );
    assert_eq!(a.iforest_flagged, b.iforest_flagged);
    assert_eq!(b.seed, 99);
}

#[test]
fn grid_covers_every_combination() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 300);
    let spec = GridSpec {
        min_samples: vec![10, 20],
        merge_threshold: vec![1.0, 3.0, 9.0],
        ..GridSpec::default()
    };
    let rows = grid_search(&cfg, &spec).unwrap();
    assert_eq!(rows.len(), 6);
    for pair in rows.chunks(3) {
        assert!(pair.windows(2).all(|w| w[1].n_clusters <= w[0].n_clusters));
    }
}
