use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spatial_cpf::config::PipelineConfig;
use spatial_cpf::pipeline::{self, GridSpec, Stage};

/// Spatially constrained CPF clustering of geochemical soil surveys.
#[derive(Parser)]
#[command(name = "spatial-cpf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the top-level seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct StageArgs {
    #[command(flatten)]
    common: Common,
    /// Primary input file of the stage.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Primary output file of the stage.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',')]
    min_samples: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    rho: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    alpha: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    merge_threshold: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    density_ratio_threshold: Vec<f64>,
    /// Write the grid table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage and write all exports.
    Run(Common),
    /// Parse the survey CSV into the canonical sample table.
    Ingest(StageArgs),
    /// Add WGS84 latitude/longitude to every site.
    Project(StageArgs),
    /// Build the geographic mutual k-NN graph.
    Graph(StageArgs),
    /// Fit the clustering and write per-site labels.
    Cluster(StageArgs),
    /// Score the outlier set with an Isolation Forest.
    Refine(StageArgs),
    /// Per-cluster box-plot statistics.
    Summarize(StageArgs),
    /// GeoJSON and the run report.
    Export(StageArgs),
    /// Fit a grid of CPF parameters and tabulate cluster count, outliers and CH.
    Grid(GridArgs),
    /// Print the default config as TOML.
    DefaultConfig,
}

fn load_config(common: &Common) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn stage_cmd(stage: Stage, args: &StageArgs) -> anyhow::Result<()> {
    let cfg = load_config(&args.common)?;
    if let Some(report) =
        pipeline::run_stage(&cfg, stage, args.input.as_deref(), args.out.as_deref())?
    {
        println!("{}", report.summary_text());
    }
    Ok(())
}

fn write_grid(rows: &[pipeline::GridRow], w: &mut dyn Write) -> anyhow::Result<()> {
    writeln!(
        w,
        "min_samples,rho,alpha,merge_threshold,density_ratio_threshold,n_clusters,outliers,calinski_harabasz"
    )?;
    for r in rows {
        let p = &r.params;
        let ch = r
            .calinski_harabasz
            .map(|v| v.to_string())
            .unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            p.min_samples,
            p.rho,
            p.alpha,
            p.merge_threshold,
            p.density_ratio_threshold,
            r.n_clusters,
            r.outlier_count,
            ch
        )?;
    }
    Ok(())
}

fn grid_cmd(args: &GridArgs) -> anyhow::Result<()> {
    let cfg = load_config(&args.common)?;
    let spec = GridSpec {
        min_samples: args.min_samples.clone(),
        rho: args.rho.clone(),
        alpha: args.alpha.clone(),
        merge_threshold: args.merge_threshold.clone(),
        density_ratio_threshold: args.density_ratio_threshold.clone(),
    };
    let rows = pipeline::grid_search(&cfg, &spec)?;
    match &args.out {
        Some(path) => {
            let mut f = std::fs::File::create(path)
                .map_err(|e| anyhow::anyhow!("cannot create {}: {e}", path.display()))?;
            write_grid(&rows, &mut f)
        }
        None => write_grid(&rows, &mut std::io::stdout().lock()),
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run(common) => {
            let cfg = load_config(&common)?;
            let report = pipeline::run_pipeline(&cfg)?;
            println!("{}", report.summary_text());
            log::info!(
                "report written to {}",
                Path::new(&cfg.output.dir)
                    .join(&cfg.output.report)
                    .display()
            );
            Ok(())
        }
        Command::Ingest(a) => stage_cmd(Stage::Ingest, &a),
        Command::Project(a) => stage_cmd(Stage::Project, &a),
        Command::Graph(a) => stage_cmd(Stage::Graph, &a),
        Command::Cluster(a) => stage_cmd(Stage::Cluster, &a),
        Command::Refine(a) => stage_cmd(Stage::Refine, &a),
        Command::Summarize(a) => stage_cmd(Stage::Summarize, &a),
        Command::Export(a) => stage_cmd(Stage::Export, &a),
        Command::Grid(a) => grid_cmd(&a),
        Command::DefaultConfig => {
            print!("{}", PipelineConfig::default().to_toml_string());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
