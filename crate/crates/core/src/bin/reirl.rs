use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use reirl::config::load_config;
use reirl::pipeline::{dispatch, Command, Context, PipelineError};
use reirl::ToleranceMode;

#[derive(Debug, Parser)]
#[command(name = "reirl", version, about = "Relative entropy inverse reinforcement learning")]
struct Cli {
    /// TOML config file; defaults to $REIRL_CONFIG, else built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides data.out_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Use artifacts produced under a different config hash.
    #[arg(long, global = true)]
    force: bool,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// -v info, -vv debug, -vvv trace.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    max_iters: Option<usize>,
    #[arg(long, global = true)]
    grad_tol: Option<f64>,
    #[arg(long, global = true)]
    delta: Option<f64>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// |A| of the uniform base policy.
    #[arg(long, global = true)]
    uniform_actions: Option<usize>,
    #[arg(long, global = true)]
    tolerance_mode: Option<ToleranceMode>,
    /// Neighbors per query.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Covariance ridge.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Policy smoothing floor.
    #[arg(long, global = true)]
    eps: Option<f64>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Load a CSV panel and standardize its features.
    Ingest {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Discretize actions and build trajectories per horizon.
    Discretize,
    /// Rolling KNN estimate of the behavior policy.
    Policy,
    /// Estimate θ for every horizon (or one).
    Estimate {
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Generate a synthetic MDP and exact demonstrations.
    Simulate {
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Solve a small MDP exactly and check the dual solution.
    OracleCheck {
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Weighted t-test of θ across horizons.
    Ttest,
    /// Regress observed raw actions on the recovered reward.
    Regress {
        #[arg(long)]
        theta: PathBuf,
        #[arg(long)]
        panel: Option<PathBuf>,
    },
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Ingest { input } => Command::Ingest { input },
            Cmd::Discretize => Command::Discretize,
            Cmd::Policy => Command::Policy,
            Cmd::Estimate { policy, horizon } => Command::Estimate { policy, horizon },
            Cmd::Simulate { spec } => Command::Simulate { spec },
            Cmd::OracleCheck { spec } => Command::OracleCheck { spec },
            Cmd::Ttest => Command::Ttest,
            Cmd::Regress { theta, panel } => Command::Regress { theta, panel },
        }
    }
}

fn context(cli: &Cli) -> Result<Context, PipelineError> {
    let mut cfg = load_config(cli.config.as_deref())?;
    let r = &mut cfg.reirl;
    if let Some(v) = cli.seed {
        r.seed = v;
    }
    if let Some(v) = cli.alpha {
        r.alpha = v;
    }
    if let Some(v) = cli.max_iters {
        r.max_iters = v;
    }
    if let Some(v) = cli.grad_tol {
        r.grad_tol = v;
    }
    if let Some(v) = cli.delta {
        r.delta = v;
    }
    if let Some(v) = cli.gamma {
        r.gamma = v;
    }
    if let Some(v) = cli.uniform_actions {
        r.uniform_actions = v;
    }
    if let Some(v) = cli.tolerance_mode {
        r.tolerance_mode = v;
    }
    if let Some(v) = cli.k {
        cfg.knn.k = v;
    }
    if let Some(v) = cli.lambda {
        cfg.knn.lambda = v;
    }
    if let Some(v) = cli.eps {
        cfg.knn.eps = v;
    }
    if let Some(out) = &cli.out {
        cfg.data.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(Context {
        out_dir: cfg.data.out_dir.clone(),
        config: cfg,
        force: cli.force,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let ctx = context(&cli);
    let cmd = Command::from(cli.command);
    match ctx.and_then(|ctx| dispatch(&cmd, &ctx)) {
        Ok(manifest) => {
            log::info!("{} wrote {} files", cmd.name(), manifest.outputs.len());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.record(cmd.name()));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
