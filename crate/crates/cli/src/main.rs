mod artifact;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use topotrack::classify::ModelKind;
use topotrack::tracker::FalseTargetModel;
use topotrack::trajectory::SignalKind;

use config::{ExperimentConfig, ScenarioKind};
use error::CliError;

#[derive(Parser)]
#[command(
    name = "topotrack",
    version,
    about = "Topological behavior features and behavior-aware tracking"
)]
struct Cli {
    /// TOML experiment configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled path population or an intersection scenario.
    Generate(GenerateArgs),
    /// Persistence diagrams of trajectory signals, as JSON lines.
    Diagram(DiagramArgs),
    /// Bin diagrams into count matrices (long-form CSV).
    Bin(BinArgs),
    /// Train a behavior classifier.
    Train(TrainArgs),
    /// Error rates of one or more classifiers per test window length.
    Eval(EvalArgs),
    /// Run the multiple hypothesis tracker on a scan file.
    Track(TrackArgs),
    /// Intersection Monte Carlo with and without behavior features.
    Montecarlo(MonteCarloArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    scenario: Option<ScenarioKind>,
    /// Number of paths.
    #[arg(long)]
    n: Option<usize>,
    /// Fraction of aggressive drivers.
    #[arg(long)]
    mix: Option<f64>,
    /// Samples per path.
    #[arg(long)]
    len: Option<usize>,
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Angular noise for the intersection scenario.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SignalArgs {
    /// Comma-separated behavior signals (speed, acceleration, turning).
    #[arg(long, value_delimiter = ',')]
    signals: Option<Vec<SignalKind>>,
    /// Record zero-persistence points (augmented filtration).
    #[arg(long)]
    augmented: Option<bool>,
}

#[derive(Args)]
struct DiagramArgs {
    /// Trajectory CSV (`id,t,x,y,z`).
    #[arg(long)]
    input: Option<PathBuf>,
    #[command(flatten)]
    signal: SignalArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BinArgs {
    /// Diagram JSON-lines file from `diagram`.
    #[arg(long)]
    diagrams: Option<PathBuf>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    /// Fixed binning for every signal; all three must be given together.
    #[arg(long, requires_all = ["alpha1", "beta"])]
    alpha0: Option<f64>,
    #[arg(long, requires_all = ["alpha0", "beta"])]
    alpha1: Option<f64>,
    #[arg(long, requires_all = ["alpha0", "alpha1"])]
    beta: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    model_type: Option<ModelKind>,
    #[command(flatten)]
    signal: SignalArgs,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    /// Train on windows of this many samples.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Model JSON; repeat to compare signal sets.
    #[arg(long)]
    model: Vec<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Comma-separated test window lengths.
    #[arg(long, value_delimiter = ',')]
    windows: Option<Vec<usize>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrackerArgs {
    #[arg(long)]
    max_hypotheses: Option<usize>,
    #[arg(long)]
    gate_probability: Option<f64>,
    #[arg(long)]
    process_noise: Option<f64>,
    #[arg(long)]
    behavior_window: Option<usize>,
    #[arg(long)]
    behavior_period: Option<usize>,
    #[arg(long, value_enum)]
    false_target: Option<FalseTargetArg>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum FalseTargetArg {
    Marginal,
    Uniform,
}

#[derive(Args)]
struct TrackArgs {
    /// Scan JSON-lines file.
    #[arg(long)]
    scans: Option<PathBuf>,
    /// Behavior model JSON; without it the behavior posterior stays at 0.5.
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    tracker: TrackerArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MonteCarloArgs {
    /// Comma-separated angular noise values.
    #[arg(long, value_delimiter = ',')]
    sigmas: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads; 0 uses all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Behavior model JSON; trained from the config when absent.
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    tracker: TrackerArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Results CSV (`sigma,variant,trials,successes,rate,stderr`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional per-trial outcome CSV.
    #[arg(long)]
    trials_out: Option<PathBuf>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

impl SignalArgs {
    fn apply(self, cfg: &mut ExperimentConfig) {
        set(&mut cfg.classifier.signals, self.signals);
        set(&mut cfg.classifier.augmented, self.augmented);
    }
}

impl TrackerArgs {
    fn apply(self, cfg: &mut ExperimentConfig) {
        let t = &mut cfg.tracker;
        set(&mut t.max_hypotheses, self.max_hypotheses);
        set(&mut t.gate_probability, self.gate_probability);
        set(&mut t.process_noise, self.process_noise);
        set(&mut t.behavior_window, self.behavior_window);
        set(&mut t.behavior_period, self.behavior_period);
        set(
            &mut t.false_target,
            self.false_target.map(|f| match f {
                FalseTargetArg::Marginal => FalseTargetModel::Marginal,
                FalseTargetArg::Uniform => FalseTargetModel::Uniform,
            }),
        );
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Generate(a) => {
            set(&mut cfg.generate.scenario, a.scenario);
            set(&mut cfg.generate.n, a.n);
            set(&mut cfg.population.aggressive_fraction, a.mix);
            set(&mut cfg.generate.length, a.len);
            set(&mut cfg.generate.train_fraction, a.train_fraction);
            set_opt(&mut cfg.generate.sigma, a.sigma);
            set_opt(&mut cfg.paths.out_dir, a.out_dir);
            set_opt(&mut cfg.seed, a.seed);
            commands::generate(&cfg)
        }
        Command::Diagram(a) => {
            set_opt(&mut cfg.paths.data, a.input);
            a.signal.apply(&mut cfg);
            set_opt(&mut cfg.paths.out, a.out);
            commands::diagram(&cfg)
        }
        Command::Bin(a) => {
            set_opt(&mut cfg.paths.diagrams, a.diagrams);
            set(&mut cfg.classifier.rows, a.rows);
            set(&mut cfg.classifier.cols, a.cols);
            if let (Some(alpha0), Some(alpha1), Some(beta)) = (a.alpha0, a.alpha1, a.beta) {
                let p = topotrack::features::BinningParams {
                    rows: cfg.classifier.rows,
                    cols: cfg.classifier.cols,
                    alpha0,
                    alpha1,
                    beta,
                };
                for kind in [
                    SignalKind::Speed,
                    SignalKind::Acceleration,
                    SignalKind::Turning,
                ] {
                    cfg.binning.insert(kind, p);
                }
            }
            set_opt(&mut cfg.paths.out, a.out);
            commands::bin(&cfg)
        }
        Command::Train(a) => {
            set_opt(&mut cfg.paths.data, a.data);
            set_opt(&mut cfg.paths.labels, a.labels);
            set(&mut cfg.classifier.model, a.model_type);
            a.signal.apply(&mut cfg);
            set(&mut cfg.classifier.rows, a.rows);
            set(&mut cfg.classifier.cols, a.cols);
            set_opt(&mut cfg.classifier.window, a.window);
            set_opt(&mut cfg.seed, a.seed);
            set_opt(&mut cfg.paths.out, a.out);
            commands::train(&cfg)
        }
        Command::Eval(a) => {
            set_opt(&mut cfg.paths.data, a.data);
            set_opt(&mut cfg.paths.labels, a.labels);
            set(&mut cfg.eval.windows, a.windows);
            set_opt(&mut cfg.paths.out, a.out);
            let mut models = a.model;
            if models.is_empty() {
                models.extend(cfg.paths.model.clone());
            }
            commands::eval(&cfg, &models)
        }
        Command::Track(a) => {
            set_opt(&mut cfg.paths.scans, a.scans);
            set_opt(&mut cfg.paths.model, a.model);
            a.tracker.apply(&mut cfg);
            set_opt(&mut cfg.paths.out, a.out);
            commands::track(&cfg)
        }
        Command::Montecarlo(a) => {
            set(&mut cfg.montecarlo.sigmas, a.sigmas);
            set(&mut cfg.montecarlo.trials, a.trials);
            set(&mut cfg.montecarlo.threads, a.threads);
            set_opt(&mut cfg.paths.model, a.model);
            a.tracker.apply(&mut cfg);
            set_opt(&mut cfg.seed, a.seed);
            set_opt(&mut cfg.paths.out, a.out);
            commands::montecarlo(&cfg, a.trials_out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("topotrack: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
