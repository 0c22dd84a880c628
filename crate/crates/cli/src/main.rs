//! `nlbbpp`: batch front end for the transport toolkit.
//!
//! Exit status: 0 success, 2 configuration error, 3 sizing error, 4 solver
//! non-convergence, 5 failed inequality check.

mod config;
mod golden;
mod output;
mod run;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nlbbpp::measures::Marginal;
use nlbbpp::stationary::FamilyKind;
use nlbbpp::Error;

use config::{ExperimentConfig, Model, Output, Task};
use run::{Runner, Status};

#[derive(Parser)]
#[command(
    name = "nlbbpp",
    version,
    about = "Transport distances between lattice point-process laws"
)]
struct Cli {
    /// Worker threads for independent tasks and suite instances.
    #[arg(long, global = true, env = "NLBBPP_JOBS")]
    jobs: Option<usize>,
    /// Output directory; overrides the one in a config file.
    #[arg(long, global = true, env = "NLBBPP_OUT")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// W₀² between two marginals, with an optional refinement table.
    Solve {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        pair: PairArgs,
        #[arg(long = "K", default_value_t = 32)]
        k: usize,
        /// Interval counts of the refinement table, e.g. 16,32,64.
        #[arg(long, value_delimiter = ',')]
        refine: Vec<usize>,
        /// Also run the brute-force oracle.
        #[arg(long)]
        brute: bool,
    },
    /// Thinning interpolation between two marginals.
    Interpolate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        pair: PairArgs,
        #[arg(long = "K", default_value_t = 64)]
        k: usize,
    },
    /// Entropy and Fisher information along the Ornstein–Uhlenbeck flow.
    Flow {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        single: SingleArgs,
        #[arg(long, default_value_t = 2.0)]
        horizon: f64,
        #[arg(long, default_value_t = 20)]
        steps: usize,
    },
    /// Inequality suites on a built-in preset.
    Verify {
        /// `all` or a comma-separated list of suites.
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value = "small")]
        preset: String,
    },
    /// Per-volume W₀² and entropy along tiled or stationarized windows.
    WsLimit {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        pair: PairArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,3")]
        r: Vec<usize>,
        #[arg(long, default_value = "tiled")]
        family: String,
        #[arg(long = "K", default_value_t = 32)]
        k: usize,
    },
    /// W₀² from one marginal to Poisson laws of several intensities.
    Sweep {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        single: SingleArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        intensities: Vec<f64>,
        #[arg(long = "K", default_value_t = 32)]
        k: usize,
    },
    /// Runs an experiment file.
    Run { config: PathBuf },
    /// Checks the solver against the golden oracle values.
    Golden {
        /// Recompute the values with the brute-force oracle and overwrite.
        #[arg(long)]
        bless: bool,
        #[arg(long, default_value = "golden")]
        dir: PathBuf,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// Sites of the one-dimensional window.
    #[arg(long, default_value_t = 1)]
    m: usize,
    #[arg(long)]
    nmax: usize,
    /// Cell side.
    #[arg(long, default_value_t = 1.0)]
    h: f64,
}

#[derive(Args)]
struct PairArgs {
    /// Poisson intensities of the two marginals.
    #[arg(long, num_args = 2, value_names = ["C0", "C1"], required_unless_present = "random")]
    poisson: Option<Vec<f64>>,
    /// Seeds of two random marginals.
    #[arg(long, num_args = 2, value_names = ["SEED0", "SEED1"], conflicts_with = "poisson")]
    random: Option<Vec<u64>>,
    #[arg(long, default_value_t = 1.0)]
    concentration: f64,
}

#[derive(Args)]
struct SingleArgs {
    #[arg(long, required_unless_present = "random")]
    poisson: Option<f64>,
    #[arg(long, conflicts_with = "poisson")]
    random: Option<u64>,
    #[arg(long, default_value_t = 1.0)]
    concentration: f64,
}

impl ModelArgs {
    fn model(&self) -> Model {
        Model {
            dim: 1,
            cells: vec![self.m],
            h: self.h,
            n_max: self.nmax,
        }
    }
}

impl PairArgs {
    fn marginals(&self) -> BTreeMap<String, Marginal> {
        let (a, b) = match (&self.poisson, &self.random) {
            (Some(c), _) => (Marginal::Poisson { c: c[0] }, Marginal::Poisson { c: c[1] }),
            (None, Some(s)) => (self.random(s[0]), self.random(s[1])),
            (None, None) => unreachable!("clap requires one of the marginal flags"),
        };
        BTreeMap::from([("p".to_string(), a), ("q".to_string(), b)])
    }

    fn random(&self, seed: u64) -> Marginal {
        Marginal::Random {
            seed,
            concentration: self.concentration,
        }
    }
}

impl SingleArgs {
    fn marginals(&self) -> BTreeMap<String, Marginal> {
        let a = match (self.poisson, self.random) {
            (Some(c), _) => Marginal::Poisson { c },
            (None, Some(seed)) => Marginal::Random {
                seed,
                concentration: self.concentration,
            },
            (None, None) => unreachable!("clap requires one of the marginal flags"),
        };
        BTreeMap::from([("p".to_string(), a)])
    }
}

fn experiment(model: Option<Model>, marginals: BTreeMap<String, Marginal>, task: Task) -> ExperimentConfig {
    ExperimentConfig {
        model,
        marginals,
        tasks: vec![task],
        output: Output::default(),
    }
}

fn pair_names() -> (String, String) {
    ("p".into(), "q".into())
}

fn build(command: Command) -> Result<ExperimentConfig, Error> {
    Ok(match command {
        Command::Solve {
            model,
            pair,
            k,
            refine,
            brute,
        } => {
            let (p, q) = pair_names();
            experiment(
                Some(model.model()),
                pair.marginals(),
                Task::Solve {
                    p,
                    q,
                    k,
                    refinement: refine,
                    brute,
                },
            )
        }
        Command::Interpolate { model, pair, k } => {
            let (p, q) = pair_names();
            experiment(
                Some(model.model()),
                pair.marginals(),
                Task::Interpolate { p, q, k },
            )
        }
        Command::Flow {
            model,
            single,
            horizon,
            steps,
        } => experiment(
            Some(model.model()),
            single.marginals(),
            Task::Flow {
                p: "p".into(),
                horizon,
                steps,
            },
        ),
        Command::Verify { suite, preset } => {
            experiment(None, BTreeMap::new(), Task::Verify { suite, preset })
        }
        Command::WsLimit {
            model,
            pair,
            r,
            family,
            k,
        } => {
            let family = match family.as_str() {
                "tiled" => FamilyKind::Tiled,
                "stationarized" => FamilyKind::Stationarized,
                other => return Err(Error::Config(format!("unknown family {other}"))),
            };
            let (p, q) = pair_names();
            experiment(
                Some(model.model()),
                pair.marginals(),
                Task::WsLimit { p, q, r, family, k },
            )
        }
        Command::Sweep {
            model,
            single,
            intensities,
            k,
        } => experiment(
            Some(model.model()),
            single.marginals(),
            Task::Sweep {
                p: "p".into(),
                intensities,
                k,
            },
        ),
        Command::Run { config } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", config.display())))?;
            ExperimentConfig::parse(&text)?
        }
        Command::Golden { .. } => unreachable!("handled before building a config"),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let outcome = match cli.command {
        Command::Golden { bless, dir } => golden::golden(&dir, bless, jobs),
        command => build(command).and_then(|cfg| {
            let out_dir = cli
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from(&cfg.output.directory));
            Runner { jobs, out_dir }.run(&cfg)
        }),
    };
    match outcome {
        Ok(status) => {
            if status != Status::Ok {
                eprintln!("nlbbpp: finished with status {status:?}");
            }
            ExitCode::from(status as u8)
        }
        Err(e) => {
            eprintln!("nlbbpp: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
