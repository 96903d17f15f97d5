use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use chrono::Utc;
use clap::{Args, Parser, Subcommand, ValueEnum};
use ntl_core::deviation::Indicator;
use ntl_core::grid::{parse_model, validate};
use ntl_core::heatmap::{export_heatmap, DEFAULT_CLAMP};
use ntl_core::pipeline::{locate_run, run_pipeline, AnalysisOptions, PipelineConfig};
use ntl_core::ranking::{export_candidates, ExclusionWindow, DEFAULT_TOP_K};
use ntl_core::store::AnalysisStore;
use ntl_core::synth::{synthesize, FraudPlan, SynthConfig};
use ntl_core::Execution;
use serde_json::json;

#[derive(Parser)]
#[command(name = "ntl", version, about = "Voltage-deviation screening for non-technical losses")]
struct Cli {
    /// Run on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a network file and print the validation report.
    ValidateGrid {
        network: PathBuf,
    },
    /// Write a synthetic network, measurement CSVs and a run config.
    Synth(SynthArgs),
    /// Run the full analysis and store the result.
    Run(InputArgs),
    /// Export a heatmap document (JSON or SVG) from a stored run.
    Heatmap {
        #[command(flatten)]
        run: RunSelector,
        #[arg(long, default_value = "dv_min")]
        indicator: String,
        #[arg(long)]
        top: Option<usize>,
        /// Exclusion window `start..end` (end exclusive); repeatable.
        #[arg(long, value_name = "START..END")]
        exclude: Vec<ExclusionWindow>,
        #[arg(long, value_enum, default_value = "json")]
        format: HeatmapFormat,
        #[arg(long, default_value_t = DEFAULT_CLAMP)]
        clamp: f64,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the candidate table as CSV.
    Candidates {
        #[command(flatten)]
        run: RunSelector,
        #[arg(long, default_value_t = DEFAULT_TOP_K)]
        top: usize,
        /// Exclusion window `start..end` (end exclusive); repeatable.
        /// Without it the run's stored windows apply.
        #[arg(long, value_name = "START..END")]
        exclude: Vec<ExclusionWindow>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the runs under a directory over HTTP (bind address from NTL_BIND).
    Serve {
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum HeatmapFormat {
    Json,
    Svg,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory to write into.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 60)]
    days: usize,
    #[arg(long, default_value_t = 12)]
    feeders: usize,
    #[arg(long, default_value_t = 57)]
    buses_per_feeder: usize,
    #[arg(long, default_value_t = 0.4)]
    meter_fraction: f64,
    /// Number of injected unmetered loads.
    #[arg(long, default_value_t = 0)]
    frauds: usize,
    /// Unmetered load as a fraction of the feeder's mean demand.
    #[arg(long, default_value_t = 0.2)]
    fraud_fraction: f64,
}

#[derive(Args)]
struct InputArgs {
    #[arg(long, conflicts_with_all = ["network", "energy", "voltage"])]
    config: Option<PathBuf>,
    #[arg(long, requires_all = ["energy", "voltage"])]
    network: Option<PathBuf>,
    #[arg(long)]
    energy: Option<PathBuf>,
    #[arg(long)]
    voltage: Option<PathBuf>,
    /// Run root directory (overrides the config's).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl InputArgs {
    fn pipeline_config(&self) -> Result<PipelineConfig> {
        let mut config = match (&self.config, &self.network, &self.energy, &self.voltage) {
            (Some(path), ..) => PipelineConfig::load(path)?,
            (None, Some(n), Some(e), Some(v)) => PipelineConfig {
                network: n.clone(),
                energy: e.clone(),
                voltage: v.clone(),
                out: PathBuf::from("runs"),
                analysis: AnalysisOptions::default(),
            },
            _ => bail!("give --config or all of --network, --energy, --voltage"),
        };
        if let Some(out) = &self.out {
            config.out = out.clone();
        }
        Ok(config)
    }
}

#[derive(Args)]
struct RunSelector {
    /// Run directory.
    #[arg(long, conflicts_with = "config")]
    run: Option<PathBuf>,
    /// Config of an earlier `run`; the run is found from its inputs.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl RunSelector {
    fn load(&self) -> Result<AnalysisStore> {
        let dir = match (&self.run, &self.config) {
            (Some(dir), _) => dir.clone(),
            (None, Some(c)) => locate_run(&PipelineConfig::load(c)?)?,
            (None, None) => bail!("give --run or --config"),
        };
        Ok(AnalysisStore::load(&dir)?)
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn synth(args: &SynthArgs, exec: Execution) -> Result<()> {
    let config = SynthConfig {
        seed: args.seed,
        n_feeders: args.feeders,
        buses_per_feeder: args.buses_per_feeder,
        meter_fraction: args.meter_fraction,
        n_days: args.days,
        fraud: FraudPlan {
            count: args.frauds,
            feeder_load_fraction: args.fraud_fraction,
            ..FraudPlan::default()
        },
        ..SynthConfig::default()
    };
    let ds = synthesize(&config, exec)?;
    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    let files = [
        ("network.json", ds.network.to_json()),
        ("energy.csv", ds.measurements.energy_csv()),
        ("voltage.csv", ds.measurements.voltage_csv()),
        ("scenario.json", ds.manifest.to_json()),
        (
            "pipeline.json",
            serde_json::to_string_pretty(&json!({
                "network": "network.json",
                "energy": "energy.csv",
                "voltage": "voltage.csv",
                "out": "runs",
            }))?,
        ),
    ];
    for (name, text) in files {
        let path = args.out.join(name);
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    }
    println!(
        "{}",
        json!({
            "out": args.out,
            "buses": ds.manifest.buses,
            "meters": ds.manifest.meters,
            "frauds": ds.manifest.frauds.iter().map(|f| &f.meter_id).collect::<Vec<_>>(),
        })
    );
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Auto };
    match cli.command {
        Command::ValidateGrid { network } => {
            let text = fs::read_to_string(&network).with_context(|| format!("cannot read {}", network.display()))?;
            let report = validate(&parse_model(&text)?);
            println!("{}", serde_json::to_string(&report)?);
            let failed: Vec<String> = report
                .failures()
                .map(|f| format!("{} ({})", f.name, f.offenders.join(", ")))
                .collect();
            if !failed.is_empty() {
                bail!("validation failed: {}", failed.join("; "));
            }
        }
        Command::Synth(args) => synth(&args, exec)?,
        Command::Run(args) => {
            let config = args.pipeline_config()?;
            let (store, dir) = run_pipeline(&config, exec)?;
            println!(
                "{}",
                json!({
                    "run_id": store.run_id,
                    "dir": dir,
                    "meters": store.matrix.meters().len(),
                    "days": store.matrix.days().len(),
                    "nonconverged_hours": store.diagnostics.nonconverged_hours.len(),
                })
            );
        }
        Command::Heatmap {
            run,
            indicator,
            top,
            exclude,
            format,
            clamp,
            out,
        } => {
            let indicator: Indicator = indicator.parse()?;
            let store = run.load()?;
            let windows = if exclude.is_empty() { store.exclusions.clone() } else { exclude };
            let doc = export_heatmap(&store.matrix, &store.network, indicator, top, &windows, clamp)?;
            let text = match format {
                HeatmapFormat::Json => serde_json::to_string_pretty(&doc)? + "\n",
                HeatmapFormat::Svg => doc.to_svg(),
            };
            write_output(out.as_deref(), &text)?;
        }
        Command::Candidates { run, top, exclude, out } => {
            let mut store = run.load()?;
            if !exclude.is_empty() {
                store.set_exclusions(exclude, None, Utc::now())?;
            }
            if top == 0 {
                bail!("--top must be at least 1");
            }
            write_output(out.as_deref(), &export_candidates(&store.top_candidates(top)))?;
        }
        Command::Serve { out } => {
            let addr = ntl_service::bind_address().map_err(anyhow::Error::msg)?;
            fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(addr)
                    .await
                    .with_context(|| format!("cannot bind {addr}"))?;
                eprintln!("{}", json!({ "listening": listener.local_addr()?.to_string(), "root": out }));
                ntl_service::serve_on(out, listener).await?;
                anyhow::Ok(())
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut body = json!({ "error": format!("{e:#}") });
            if let Some(ntl_core::Error::Stage { stage, .. }) = e.downcast_ref::<ntl_core::Error>() {
                body["stage"] = json!(stage);
            }
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
