use mf_stackelberg_cli::{parse_config, run_command, CliError, Command};
use std::process::ExitCode;

const USAGE: &str = "\
mf-stackelberg <command> --config <path> [options]

commands:
  check      assemble the block system and scan the solvability determinant
  solve      compute the decoupling objects K, kappa and P
  simulate   run the N-agent population Monte Carlo
  converge   sweep population sizes and fit error decay slopes
  probe      first-order optimality probe of the decentralized strategies

options:
  --config <path>   run configuration (JSON, required)
  --out <dir>       output directory (default: config output_dir or ./out)
  --seed <int>      override the master seed
  --steps <int>     override the grid step count
  --n <int>         override the population size N
  --runs <int>      override the Monte Carlo run count

environment:
  MF_STACKELBERG_THREADS   cap on worker threads

exit codes: 0 ok, 1 usage, 2 config error, 3 solvability failure,
4 numerical failure";

struct Options {
    command: Command,
    config_path: String,
    out: Option<String>,
    seed: Option<u64>,
    steps: Option<usize>,
    n_agents: Option<usize>,
    runs: Option<usize>,
}

fn parse_args(args: &[String]) -> Result<Options, String> {
    if args.is_empty() {
        return Err("missing command".into());
    }
    let command = Command::parse(&args[0]).ok_or(format!("unknown command `{}`", args[0]))?;
    let mut config_path = None;
    let mut out = None;
    let mut seed = None;
    let mut steps = None;
    let mut n_agents = None;
    let mut runs = None;
    let mut it = args[1..].iter();
    while let Some(flag) = it.next() {
        let mut value = |name: &str| -> Result<String, String> {
            it.next()
                .cloned()
                .ok_or(format!("flag {name} needs a value"))
        };
        match flag.as_str() {
            "--config" => config_path = Some(value("--config")?),
            "--out" => out = Some(value("--out")?),
            "--seed" => {
                seed = Some(
                    value("--seed")?
                        .parse()
                        .map_err(|e| format!("--seed: {e}"))?,
                )
            }
            "--steps" => {
                steps = Some(
                    value("--steps")?
                        .parse()
                        .map_err(|e| format!("--steps: {e}"))?,
                )
            }
            "--n" => {
                n_agents = Some(value("--n")?.parse().map_err(|e| format!("--n: {e}"))?)
            }
            "--runs" => {
                runs = Some(
                    value("--runs")?
                        .parse()
                        .map_err(|e| format!("--runs: {e}"))?,
                )
            }
            other => return Err(format!("unknown flag `{other}`")),
        }
    }
    Ok(Options {
        command,
        config_path: config_path.ok_or("--config is required".to_string())?,
        out,
        seed,
        steps,
        n_agents,
        runs,
    })
}

fn worker_threads() -> usize {
    let available = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    match std::env::var("MF_STACKELBERG_THREADS") {
        Ok(v) => v.parse().ok().filter(|n| *n >= 1).unwrap_or(available),
        Err(_) => available,
    }
}

fn run() -> Result<(), CliError> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let opts = parse_args(&args).map_err(CliError::Usage)?;
    let text = std::fs::read_to_string(&opts.config_path)
        .map_err(|e| CliError::Config(format!("{}: {e}", opts.config_path)))?;
    let mut cfg = parse_config(&text).map_err(CliError::Config)?;
    if let Some(out) = opts.out {
        cfg.output_dir = out.into();
    }
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if let Some(steps) = opts.steps {
        cfg.steps = steps;
    }
    if let Some(n) = opts.n_agents {
        cfg.n_agents = n;
    }
    if let Some(runs) = opts.runs {
        cfg.runs = runs;
    }
    let summary = run_command(opts.command, &cfg, worker_threads())?;
    print!("{summary}");
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if matches!(e, CliError::Usage(_)) {
                eprintln!("error: {}\n\n{USAGE}", e.message());
            } else {
                eprintln!("error: {}", e.message());
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
