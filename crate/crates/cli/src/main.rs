use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rnnid_cli::{cmd_analyze, cmd_compare, cmd_run, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "rnnid", version, about = "Recursive ADAM identification of structured RNN models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo identification runs with traces, summary and plots.
    Run(Common),
    /// Frozen-parameter direction and Lyapunov checks.
    Analyze(Common),
    /// Optimizer variants on shared seeds with an overlay plot.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; defaults to the number of available processors.
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides `monte_carlo.master_seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn dispatch(cmd: Command) -> Result<String, CliError> {
    let (common, which) = match cmd {
        Command::Run(c) => (c, 0),
        Command::Analyze(c) => (c, 1),
        Command::Compare(c) => (c, 2),
    };
    if common.workers == Some(0) {
        return Err(CliError::Config("--workers must be >= 1".into()));
    }
    let cfg = ExperimentConfig::load(&common.config)?.with_seed(common.seed);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let out = &common.out;
    pool.install(|| match which {
        0 => cmd_run(&cfg, out).map(|r| {
            format!(
                "{} runs, final MSE mean {:.6e} (stderr {:.3e}); wrote {}",
                r.runs.len(),
                r.final_mse.mean,
                r.final_mse.std_err,
                out.display()
            )
        }),
        1 => cmd_analyze(&cfg, out).map(|r| {
            let mut s = String::new();
            for st in &r.settings {
                s.push_str(&format!(
                    "{}: cos_nsg_adam {:?} cos_ss_adam {:?} dV_nsg {:.3e} dV_ss {:.3e}\n",
                    st.name, st.agreement.cos_nsg_adam, st.agreement.cos_ss_adam, st.lyapunov.dv_nsg, st.lyapunov.dv_ss
                ));
            }
            s.push_str(&format!("wrote {}", out.display()));
            s
        }),
        _ => cmd_compare(&cfg, out).map(|r| {
            let mut s = String::new();
            for v in &r.variants {
                s.push_str(&format!(
                    "{}: final MSE {:.6e} (stderr {:.3e}), drop {:.1}%{}\n",
                    v.name,
                    v.final_mse.mean,
                    v.final_mse.std_err,
                    100.0 * v.mse_drop,
                    if v.slow_convergence { " [slow convergence]" } else { "" }
                ));
            }
            s.push_str(&format!("wrote {}", out.display()));
            s
        }),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
