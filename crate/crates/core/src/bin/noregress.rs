use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use noregress::command::{confine, parse};
use noregress::harness::{load_dir, load_scenario, run_scenario, run_suite, sweep_csv, sweep_step_limit, PolicyKind, Scenario};
use noregress::{Ablation, EpisodeReport, Role, RunConfig, SeverityWeights, SuiteReport};

#[derive(Parser)]
#[command(name = "noregress", version, about = "Run mitigation episodes against simulated clusters")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario file.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
        /// Append the transaction audit log (JSON lines) to this file.
        #[arg(long)]
        audit: Option<PathBuf>,
    },
    /// Run every scenario in a directory.
    Suite {
        dir: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Success rate as a function of the episode step limit.
    Sweep {
        dir: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
        #[arg(long, value_delimiter = ',', default_value = "3,5,10,15,20,30")]
        limits: Vec<usize>,
        /// Print CSV instead of a table.
        #[arg(long)]
        csv: bool,
    },
    /// Check a command string against the confinement rules.
    Lint {
        #[arg(long, value_enum, default_value_t = RoleArg::Writer)]
        role: RoleArg,
        /// The command, e.g. `kubectl scale deployment geo --replicas=2`.
        #[arg(required = true, num_args = 1.., allow_hyphen_values = true, trailing_var_arg = true)]
        words: Vec<String>,
    },
    /// Rewrite scenario files in canonical form.
    Fmt {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Report files that are not canonical instead of rewriting them.
        #[arg(long)]
        check: bool,
    },
}

#[derive(Args, Clone)]
struct RunOpts {
    #[arg(long, default_value = "full")]
    ablation: Ablation,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Severity weights for alerts, SLA violations and capacity losses.
    #[arg(long, default_value = "1,1,1")]
    weights: SeverityWeights,
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long, default_value_t = 9)]
    retry_limit: usize,
    #[arg(long)]
    step_limit: Option<usize>,
    #[arg(long, value_enum, default_value_t = PolicyArg::Scripted)]
    policy: PolicyArg,
    /// Program for `--policy external`; arguments follow after `--`.
    #[arg(long)]
    program: Option<String>,
    #[arg(last = true)]
    program_args: Vec<String>,
    /// Seconds to wait for an external policy reply.
    #[arg(long, default_value_t = 30)]
    timeout: u64,
    /// Write the full JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Scripted,
    Random,
    External,
}

#[derive(Clone, Copy, ValueEnum)]
enum RoleArg {
    Reader,
    Writer,
}

impl RunOpts {
    fn config(&self) -> RunConfig {
        RunConfig {
            k: self.k,
            retry_limit: self.retry_limit,
            step_limit: self.step_limit,
            ablation: self.ablation,
            seed: self.seed,
            weights: self.weights,
            ..RunConfig::default()
        }
    }

    fn policy(&self) -> Result<PolicyKind, String> {
        Ok(match self.policy {
            PolicyArg::Scripted => PolicyKind::Scripted,
            PolicyArg::Random => PolicyKind::Random { seed: self.seed, max_len: self.k.min(5) },
            PolicyArg::External => PolicyKind::External {
                program: self.program.clone().ok_or("--policy external needs --program")?,
                args: self.program_args.clone(),
                timeout: Duration::from_secs(self.timeout),
            },
        })
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), String> {
    let text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    std::fs::write(path, text + "\n").map_err(|e| format!("{}: {e}", path.display()))
}

fn episode_line(r: &EpisodeReport) -> String {
    let peak = r.trajectory.iter().max().expect("trajectory starts at the baseline");
    format!(
        "{:<48} {:<7} {:<20} retries={} steps={} baseline={} peak={}",
        r.scenario,
        if r.solved { "solved" } else { "failed" },
        format!("{:?}", r.termination),
        r.retries,
        r.steps,
        r.baseline,
        peak
    )
}

fn print_suite(report: &SuiteReport) {
    for r in &report.rows {
        println!("{}", episode_line(r));
    }
    let rate = report.success_rate.map(|x| format!("{:.1}%", x * 100.0)).unwrap_or_else(|| "n/a".into());
    println!("solved {}/{} ({rate})", report.solved, report.total);
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Cmd::Run { scenario, opts, audit } => {
            let s = load_scenario(&scenario).map_err(|e| e.to_string())?;
            let config = RunConfig { audit_path: audit, ..opts.config() };
            info!("running {} with ablation {}", s.id, config.ablation);
            let report = run_scenario(&s, 0, &opts.policy()?, &config).map_err(|e| e.to_string())?;
            println!("{}", episode_line(&report));
            for round in &report.rounds {
                for msg in &round.rollback {
                    println!("  round {}: {msg}", round.round);
                }
                if let Some(plan) = &round.plan {
                    println!("  round {}: {}", round.round, plan.summary());
                }
                if let Some(err) = &round.policy_error {
                    println!("  round {}: policy error: {err}", round.round);
                }
            }
            if let Some(path) = &opts.report {
                write_json(path, &report)?;
            }
            Ok(if report.solved { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Cmd::Suite { dir, opts } => {
            let scenarios = load_dir(&dir).map_err(|e| e.to_string())?;
            let report = run_suite(&scenarios, &opts.config(), &opts.policy()?).map_err(|e| e.to_string())?;
            print_suite(&report);
            if let Some(path) = &opts.report {
                write_json(path, &report)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Sweep { dir, opts, limits, csv } => {
            let scenarios = load_dir(&dir).map_err(|e| e.to_string())?;
            let rows = sweep_step_limit(&scenarios, &opts.config(), &opts.policy()?, &limits).map_err(|e| e.to_string())?;
            if csv {
                print!("{}", sweep_csv(&rows));
            } else {
                for r in &rows {
                    let rate = r.success_rate.map(|x| format!("{:.1}%", x * 100.0)).unwrap_or_else(|| "n/a".into());
                    println!("limit {:>3}: {}/{} ({rate})", r.limit, r.solved, r.total);
                }
            }
            if let Some(path) = &opts.report {
                write_json(path, &rows)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Lint { role, words } => {
            let text = words.join(" ");
            let role = match role {
                RoleArg::Reader => Role::ReadOnly,
                RoleArg::Writer => Role::Writer,
            };
            let cmd = parse(&text).map_err(|e| e.to_string())?;
            let verdict = confine(&text, role);
            if verdict.allowed {
                println!("allowed ({:?})", cmd.class());
                Ok(ExitCode::SUCCESS)
            } else {
                println!("blocked: {}", verdict.reason);
                Ok(ExitCode::from(1))
            }
        }
        Cmd::Fmt { files, check } => {
            let mut dirty = false;
            for path in &files {
                let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
                let canon = Scenario::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))?.to_canonical_json();
                if canon == text {
                    continue;
                }
                if check {
                    println!("{}: not canonical", path.display());
                    dirty = true;
                } else {
                    std::fs::write(path, canon).map_err(|e| format!("{}: {e}", path.display()))?;
                }
            }
            Ok(if dirty { ExitCode::from(1) } else { ExitCode::SUCCESS })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
