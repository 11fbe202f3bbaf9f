use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use warpsplit::scheduler::Policy;
use warpsplit_cli::{
    cmd_solve, cmd_solve_jobs, cmd_validate_schedule, cmd_verify, list_problems, CliError, Overrides, RunConfig,
    ScheduleSource, EXIT_CONFIG, EXIT_OK,
};

#[derive(Parser, Debug)]
#[command(name = "warpsplit", version, about = "Asynchronous block-iterative projective splitting")]
struct Cli {
    /// Suppress the summary printed on stdout.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the solver on a JSON config.
    Solve {
        #[command(flatten)]
        run: RunArgs,
        /// Total seeds to run in parallel, starting at the configured seed.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Replay a run through the skew-decomposed warped step and compare.
    Verify {
        #[command(flatten)]
        run: RunArgs,
        /// Test hook: perturb one kernel step of the replay at this iteration.
        #[arg(long, hide = true)]
        corrupt_kernel_at: Option<usize>,
    },
    /// Check a block-activation schedule's coverage and delay rules.
    ValidateSchedule(ScheduleArgs),
    /// List the built-in problem families.
    ListProblems,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PolicyArg {
    Synchronous,
    RoundRobin,
    Random,
}

#[derive(Args, Debug)]
struct ScheduleArgs {
    /// Schedule JSON; when absent one is generated from the flags below.
    #[arg(long, conflicts_with = "policy")]
    schedule: Option<PathBuf>,
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Coverage window T.
    #[arg(short = 'T', long, default_value_t = 0)]
    coverage_window: usize,
    /// Delay bound D.
    #[arg(short = 'D', long, default_value_t = 0)]
    delay_bound: usize,
    #[arg(long, default_value_t = 1)]
    primal: usize,
    #[arg(long, default_value_t = 1)]
    dual: usize,
    #[arg(long, default_value_t = 1000)]
    length: usize,
}

fn load(run: &RunArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::from_path(&run.config)?;
    cfg.apply(&Overrides {
        seed: run.seed,
        max_iter: run.max_iter,
        tol: run.tol,
        trace: run.trace.clone(),
    });
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(quiet: bool, value: &T) {
    if !quiet {
        println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
    }
}

fn execute(cli: &Cli) -> Result<u8, CliError> {
    match &cli.command {
        Command::Solve { run, jobs } => {
            let cfg = load(run)?;
            if *jobs <= 1 {
                let (summary, _) = cmd_solve(&cfg)?;
                print_json(cli.quiet, &summary);
                return Ok(summary.exit_code());
            }
            let mut code = EXIT_OK;
            for result in cmd_solve_jobs(&cfg, *jobs) {
                match result {
                    Ok(summary) => {
                        print_json(cli.quiet, &summary);
                        code = code.max(summary.exit_code());
                    }
                    Err(e) => {
                        log::error!("{e}");
                        eprintln!("error: {e}");
                        code = code.max(e.exit_code());
                    }
                }
            }
            Ok(code)
        }
        Command::Verify { run, corrupt_kernel_at } => {
            let cfg = load(run)?;
            let report = cmd_verify(&cfg, *corrupt_kernel_at)?;
            print_json(cli.quiet, &report);
            if let Some(d) = &report.first_divergence {
                eprintln!("divergence: {d}");
            }
            Ok(report.exit_code())
        }
        Command::ValidateSchedule(a) => {
            let source = match (&a.schedule, a.policy) {
                (Some(p), _) => ScheduleSource::File(p.clone()),
                (None, Some(policy)) => ScheduleSource::Generate {
                    policy: match policy {
                        PolicyArg::Synchronous => Policy::Synchronous,
                        PolicyArg::RoundRobin => Policy::RoundRobin,
                        PolicyArg::Random => Policy::Random,
                    },
                    seed: a.seed,
                    coverage_window: a.coverage_window,
                    delay_bound: a.delay_bound,
                    n_primal: a.primal,
                    n_dual: a.dual,
                    length: a.length,
                },
                (None, None) => return Err(CliError::Usage("give --schedule PATH or --policy".into())),
            };
            let check = cmd_validate_schedule(&source)?;
            print_json(cli.quiet, &check);
            if let Some(v) = &check.violation {
                eprintln!("invalid schedule: {v}");
            }
            Ok(if check.ok { EXIT_OK } else { EXIT_CONFIG })
        }
        Command::ListProblems => {
            for p in list_problems() {
                println!("{:<22} {}\n{:<22} {}", p.name, p.description, "", p.example);
            }
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("WARPSPLIT_LOG", "error")).init();
    // clap exits with 2 on usage errors; the contract reserves 2 for non-convergence
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK });
        }
    };
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
