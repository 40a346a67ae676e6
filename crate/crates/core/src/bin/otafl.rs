//! Command-line front end: `run`, `dump-channel`, `defaults`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use otafl::bounds::CorollaryForm;
use otafl::channel::sample_channels;
use otafl::harness::{self, parse_descent, Baseline, DataSource, EtaRule, ExperimentSpec, ModelChoice, Sweep};
use otafl::rng::{stream, tag};
use otafl::scenario::{load_config, place_users, DataMode};

#[derive(Parser)]
#[command(name = "otafl", version, about = "Over-the-air federated learning over an active STARS uplink")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment and write history/summary/bounds CSVs plus a manifest.
    Run(RunArgs),
    /// Draw one channel realization and write it as CSV.
    DumpChannel {
        #[command(flatten)]
        cfg: CfgArgs,
        #[arg(long, default_value_t = 0)]
        trial: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the resolved configuration.
    Defaults {
        #[command(flatten)]
        cfg: CfgArgs,
    },
}

#[derive(Args)]
struct CfgArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set q_elements=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long = "sca.imax")]
    sca_imax: Option<String>,
    #[arg(long = "sca.xi")]
    sca_xi: Option<String>,
    #[arg(long = "sca.varpi")]
    sca_varpi: Option<String>,
    #[arg(long = "sca.restarts")]
    sca_restarts: Option<String>,
    #[arg(long = "noris.pen-db")]
    noris_pen_db: Option<String>,
}

impl CfgArgs {
    fn overrides(&self) -> Result<Vec<(String, String)>, String> {
        let mut out = Vec::new();
        for s in &self.set {
            let (k, v) = s.split_once('=').ok_or_else(|| format!("--set expects KEY=VALUE, got `{s}`"))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        for (k, v) in [
            ("sca.imax", &self.sca_imax),
            ("sca.xi", &self.sca_xi),
            ("sca.varpi", &self.sca_varpi),
            ("sca.restarts", &self.sca_restarts),
            ("noris.pen_db", &self.noris_pen_db),
        ] {
            if let Some(v) = v {
                out.push((k.to_string(), v.clone()));
            }
        }
        Ok(out)
    }

    fn load(&self) -> Result<otafl::scenario::SystemConfig, String> {
        load_config(self.config.as_deref(), &self.overrides()?).map_err(|e| e.to_string())
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    cfg: CfgArgs,
    /// Replay a previous run from its manifest (other run flags are ignored
    /// except --out).
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "run")]
    name: String,
    /// noise-free | astars | pstars | dual-ris | no-ris
    #[arg(long, default_value = "astars")]
    baseline: String,
    /// set1 | set2
    #[arg(long = "data-mode", default_value = "set1")]
    data_mode: String,
    /// batch | minibatch | minibatch:<size>:<per_round>
    #[arg(long, default_value = "batch")]
    descent: String,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    #[arg(long = "sweep-q", value_delimiter = ',')]
    sweep_q: Vec<usize>,
    #[arg(long = "sweep-lambda", value_delimiter = ',')]
    sweep_lambda: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long)]
    out: PathBuf,
    /// mnist | synthetic
    #[arg(long, default_value = "mnist")]
    data: String,
    #[arg(long = "mnist-images", default_value = "data/mnist5k-images-idx3-ubyte.gz")]
    mnist_images: PathBuf,
    #[arg(long = "mnist-labels", default_value = "data/mnist5k-labels-idx1-ubyte.gz")]
    mnist_labels: PathBuf,
    /// Use only the first N samples of the pool.
    #[arg(long)]
    limit: Option<usize>,
    /// Synthetic blobs as classes:dim:per_class:margin.
    #[arg(long, default_value = "10:20:100:3")]
    synthetic: String,
    /// logreg | mlp | mlp:<hidden>
    #[arg(long, default_value = "logreg")]
    model: String,
    /// config | inverse-l
    #[arg(long, default_value = "config")]
    eta: String,
    /// Evaluate the convergence bound per round (convex model only).
    #[arg(long)]
    bounds: bool,
    /// printed | series
    #[arg(long = "corollary-form", default_value = "printed")]
    corollary_form: String,
    #[arg(long = "test-frac", default_value_t = 0.1)]
    test_frac: f64,
    /// Write per-trial SCA iterate traces.
    #[arg(long)]
    traces: bool,
}

fn spec_from_args(a: &RunArgs) -> Result<ExperimentSpec, String> {
    let e = |x: otafl::Error| x.to_string();
    let sweep = match (a.sweep_q.is_empty(), a.sweep_lambda.is_empty()) {
        (true, true) => Sweep::None,
        (false, true) => Sweep::Q(a.sweep_q.clone()),
        (true, false) => Sweep::Lambda(a.sweep_lambda.clone()),
        (false, false) => return Err("--sweep-q and --sweep-lambda are mutually exclusive".into()),
    };
    let mut descent = parse_descent(&a.descent).map_err(e)?;
    if let (Some(b), otafl::fl::Descent::MiniBatch { per_round, .. }) = (a.batch_size, descent) {
        descent = otafl::fl::Descent::MiniBatch { batch_size: b, per_round };
    }
    let data = match a.data.as_str() {
        "mnist" => DataSource::Mnist {
            images: a.mnist_images.clone(),
            labels: a.mnist_labels.clone(),
            limit: a.limit,
        },
        "synthetic" => {
            let p: Vec<&str> = a.synthetic.split(':').collect();
            let bad = || format!("--synthetic expects classes:dim:per_class:margin, got `{}`", a.synthetic);
            if p.len() != 4 {
                return Err(bad());
            }
            DataSource::Synthetic {
                classes: p[0].parse().map_err(|_| bad())?,
                dim: p[1].parse().map_err(|_| bad())?,
                per_class: p[2].parse().map_err(|_| bad())?,
                margin: p[3].parse().map_err(|_| bad())?,
            }
        }
        other => return Err(format!("unknown data source `{other}`")),
    };
    Ok(ExperimentSpec {
        name: a.name.clone(),
        baseline: a.baseline.parse::<Baseline>().map_err(e)?,
        data_mode: a.data_mode.parse::<DataMode>().map_err(e)?,
        descent,
        sweep,
        trials: a.trials,
        out_dir: Some(a.out.clone()),
        data,
        model: a.model.parse::<ModelChoice>().map_err(e)?,
        eta: a.eta.parse::<EtaRule>().map_err(e)?,
        bounds: a.bounds,
        corollary_form: a.corollary_form.parse::<CorollaryForm>().map_err(e)?,
        test_frac: a.test_frac,
        traces: a.traces,
    })
}

fn main_inner() -> Result<(), String> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run(a) => {
            let (spec, cfg) = match &a.manifest {
                Some(m) => {
                    let (mut spec, cfg) = harness::load_manifest(m).map_err(|e| e.to_string())?;
                    spec.out_dir = Some(a.out.clone());
                    (spec, cfg)
                }
                None => (spec_from_args(&a)?, a.cfg.load()?),
            };
            let out = harness::run(&spec, &cfg).map_err(|e| e.to_string())?;
            for p in &out.points {
                let s = &p.summary;
                println!(
                    "{} {}={} acc {:.4} ± {:.4} ({} ok, {} failed)",
                    spec.baseline,
                    spec.sweep.kind(),
                    harness::fmt_f(p.value),
                    s.acc_mean,
                    s.acc_std,
                    s.trials_ok,
                    s.trials_failed
                );
            }
            Ok(())
        }
        Cmd::DumpChannel { cfg, trial, out } => {
            let c = cfg.load()?;
            let g = place_users(&c, &mut stream(c.seed, &[tag::GEOMETRY, trial]));
            let r = sample_channels(&c, &g, &mut stream(c.seed, &[tag::CHANNEL, trial, 0]));
            r.write_csv(&out).map_err(|e| e.to_string())
        }
        Cmd::Defaults { cfg } => {
            print!("{}", cfg.load()?.to_flat());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match main_inner() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
