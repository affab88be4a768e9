use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use gdamn::config::RunConfig;
use gdamn::experiments::{
    cmd_connectivity, cmd_fig1a, cmd_fig1b, cmd_fig4, cmd_retrain, cmd_train, ExperimentSpec,
    GraphSource,
};
use gdamn::io::load_graph;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "gdamn",
    version,
    about = "Decoupled graph attention trained with variational EM"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the configured method once per seed.
    Train(Common),
    /// Supervised GCN accuracy versus inter-class edge ratio.
    Fig1a {
        #[command(flatten)]
        common: Common,
        /// Comma-separated target inter-class ratios in [0, 1].
        #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.4,0.6,0.8,1")]
        ratios: Vec<f64>,
    },
    /// Positive vs negative relativity weights on original and oracle graphs.
    Fig1b(Common),
    /// Stable re-weighting (0) versus averaging sampled structures.
    Fig4 {
        #[command(flatten)]
        common: Common,
        /// Comma-separated sample counts; 0 selects the stable fusion.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6,7,8,9,10")]
        samples: Vec<usize>,
    },
    /// Class connectivity of Laplacian, uniform, and learned weights.
    Connectivity(Common),
    /// Retrain plain GCNs with original, oracle, and learned weights.
    Retrain {
        #[command(flatten)]
        common: Common,
        /// Directory holding `stable_weights_seed<k>.csv` exports; trained in
        /// place when omitted.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Graph bundle or dataset manifest (JSON). Defaults to a fresh SBM per
    /// seed.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` overrides applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seeds as a comma list (`0,3,7`) or a half-open range (`0..10`).
    #[arg(long, default_value = "0")]
    seeds: String,
    /// Output directory; defaults to `<GDAMN_OUT_ROOT>/<command>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root for default output directories.
    #[arg(long, env = "GDAMN_OUT_ROOT", default_value = "runs")]
    out_root: PathBuf,
    /// Allow writing into a non-empty output directory.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Runtime(String),
}

impl From<gdamn::Error> for Failure {
    fn from(e: gdamn::Error) -> Self {
        if e.is_config_error() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, Failure> {
    let bad = |why: &str| Failure::Config(format!("invalid --seeds `{text}`: {why}"));
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a
            .trim()
            .parse()
            .map_err(|_| bad("range start is not an integer"))?;
        let b: u64 = b
            .trim()
            .parse()
            .map_err(|_| bad("range end is not an integer"))?;
        if a >= b {
            return Err(bad("empty range"));
        }
        return Ok((a..b).collect());
    }
    text.split(',')
        .map(|s| s.trim().parse().map_err(|_| bad("expected integers")))
        .collect()
}

fn is_nonempty_dir(path: &Path) -> bool {
    std::fs::read_dir(path).is_ok_and(|mut d| d.next().is_some())
}

fn build_spec(name: &str, common: &Common) -> Result<ExperimentSpec, Failure> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Config(format!("override `{kv}` is not KEY=VALUE")))?;
        config.set(k.trim(), v)?;
    }
    config.validate()?;
    let seeds = parse_seeds(&common.seeds)?;
    let out = common
        .out
        .clone()
        .unwrap_or_else(|| common.out_root.join(name));
    if is_nonempty_dir(&out) && !common.overwrite {
        return Err(Failure::Config(format!(
            "output directory {} is not empty; pass --overwrite or choose another --out",
            out.display()
        )));
    }
    let graph = match &common.graph {
        Some(path) => GraphSource::Fixed {
            graph: Arc::new(load_graph(path)?),
            origin: path.clone(),
        },
        None => GraphSource::Sbm(config.sbm.clone()),
    };
    let spec = ExperimentSpec {
        command: name.into(),
        graph,
        config,
        seeds,
        out,
    };
    spec.validate()?;
    Ok(spec)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Train(common) => {
            let spec = build_spec("train", common)?;
            let report = cmd_train(&spec)?;
            let s = &report.summary;
            println!(
                "{}: test accuracy {:.4} ± {:.4} over {} seeds -> {}",
                report.method,
                s.mean,
                s.std,
                s.n,
                spec.out.display()
            );
        }
        Command::Fig1a { common, ratios } => {
            let spec = build_spec("fig1a", common)?;
            for r in cmd_fig1a(&spec, ratios)? {
                println!(
                    "ratio {:<5} {:<8} acc {:.4} ± {:.4}",
                    r.ratio, r.status, r.mean_acc, r.std
                );
            }
        }
        Command::Fig1b(common) => {
            let spec = build_spec("fig1b", common)?;
            for r in cmd_fig1b(&spec)? {
                println!(
                    "{:<3} {:<9} acc {:.4} ± {:.4}",
                    r.weights, r.adjacency, r.mean_acc, r.std
                );
            }
        }
        Command::Fig4 { common, samples } => {
            let spec = build_spec("fig4", common)?;
            for r in cmd_fig4(&spec, samples)? {
                println!(
                    "samples {:<3} acc {:.4} ± {:.4}",
                    r.samples, r.mean_acc, r.std
                );
            }
        }
        Command::Connectivity(common) => {
            let spec = build_spec("connectivity", common)?;
            let report = cmd_connectivity(&spec)?;
            for w in gdamn::experiments::CONNECTIVITY_SOURCES {
                println!(
                    "{w:<9} diag/offdiag {:.4} (totals {:.4})",
                    report.mean_ratio(w, false),
                    report.mean_ratio(w, true)
                );
            }
        }
        Command::Retrain { common, weights } => {
            let spec = build_spec("retrain", common)?;
            for r in cmd_retrain(&spec, weights.as_deref())? {
                println!(
                    "{:<8} final acc {:.4} ± {:.4}, epochs to 90% {:.1}",
                    r.variant, r.mean_final_acc, r.std, r.mean_epochs_to_90
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    log::info!("{cli:?}");
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
