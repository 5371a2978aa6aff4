//! `curriculum`: experiment driver. Every operation goes through the HTTP
//! service, either a remote one (`--server`) or one embedded in this process.
//!
//! Exit status: 0 success, 1 internal error, 2 user or configuration error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use curriculum_client::{Client, ClientError};
use curriculum_core::curriculum::Curriculum;
use curriculum_core::error::Error;
use curriculum_core::eval::EvalResult;
use curriculum_core::experiment::{read_trace_dir, write_trace, ExperimentConfig};
use curriculum_core::optim::Algorithm;
use curriculum_core::schedule::ScheduleInstance;

#[derive(Parser)]
#[command(name = "curriculum", version, about = "Curriculum optimization for transfer in grid-world RL")]
struct Cli {
    /// Service to use; without it an embedded server is started.
    #[arg(long, global = true, env = "CURRICULUM_SERVER")]
    server: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train along one curriculum and print its regret and merit.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Literal such as "[0,2]"; "[]" trains on the final task only.
        #[arg(long)]
        curriculum: String,
    },
    /// Run one search algorithm and write its trace.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        /// c0, greedy, gp, heuristic, tpe, random or exhaustive.
        #[arg(long)]
        algo: String,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Tabulate the traces in a directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Print the number of feasible curricula.
    Enumerate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Solve a scheduling instance file exactly.
    Solve {
        #[arg(long)]
        instance: PathBuf,
    },
    /// Run the service in the foreground.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Directory for persistent evaluation caches.
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
}

/// A failure with its exit status.
struct Failure {
    user: bool,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { user: e.is_user_error(), message: e.to_string() }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        Failure { user: e.is_user_error(), message: e.to_string() }
    }
}

fn user(message: impl Into<String>) -> Failure {
    Failure { user: true, message: message.into() }
}

fn internal(message: impl Into<String>) -> Failure {
    Failure { user: false, message: message.into() }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(if f.user { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Serve { addr, cache_dir } => serve(&addr, cache_dir),
        Command::Evaluate { config, curriculum } => {
            let cfg = ExperimentConfig::load(&config)?;
            let c: Curriculum = curriculum.parse().map_err(Error::from)?;
            let client = connect(cli.server.as_deref(), Some(&cache_dir(&cfg)))?;
            let resp = client.evaluate(&cfg, &c)?;
            eprintln!("cache: {}", if resp.cache_hit { "hit" } else { "miss" });
            let curve = write_curve(Path::new(&cfg.output_dir), &resp.result)?;
            eprintln!("learning curve: {}", curve.display());
            print!("{}", render_evaluation(&resp.result));
            Ok(())
        }
        Command::Optimize { config, algo, budget } => {
            let cfg = ExperimentConfig::load(&config)?;
            let algorithm: Algorithm = algo.parse()?;
            if budget == Some(0) {
                return Err(user("--budget must be at least 1"));
            }
            let client = connect(cli.server.as_deref(), Some(&cache_dir(&cfg)))?;
            let run = client.optimize(&cfg, algorithm, budget)?;
            let path = write_trace(Path::new(&cfg.output_dir), algorithm, &run.trace)?;
            eprintln!("trace: {}", path.display());
            let out = &run.outcome;
            let mut text = String::new();
            if algorithm == Algorithm::Exhaustive {
                for (k, (c, r)) in out.ranking().iter().enumerate() {
                    writeln!(text, "{:>6}  {r:>14.6}  {c}", k + 1).unwrap();
                }
            }
            writeln!(text, "algorithm    {algorithm}").unwrap();
            writeln!(text, "best         {}", out.best.curriculum).unwrap();
            writeln!(text, "regret       {:.6}", out.best.regret).unwrap();
            writeln!(text, "evaluations  {}", out.evaluations).unwrap();
            writeln!(text, "requests     {}", out.requests).unwrap();
            if run.prior_evaluations > 0 {
                writeln!(text, "prior evals  {} (heuristic estimate, outside the budget)", run.prior_evaluations).unwrap();
            }
            print!("{text}");
            Ok(())
        }
        Command::Report { dir } => {
            let traces = read_trace_dir(&dir)?;
            if traces.is_empty() {
                return Err(user(format!("no *.trace.jsonl files in {}", dir.display())));
            }
            let client = connect(cli.server.as_deref(), None)?;
            let table = client.report(&traces)?;
            let record = dir.join("report.json");
            let json = serde_json::to_string_pretty(&table).map_err(|e| internal(format!("encoding report: {e}")))?;
            std::fs::write(&record, json + "\n").map_err(|e| internal(format!("writing {}: {e}", record.display())))?;
            for w in &table.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", table.render());
            Ok(())
        }
        Command::Enumerate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let client = connect(cli.server.as_deref(), None)?;
            let resp = client.enumerate(&cfg)?;
            println!("{}", resp.feasible);
            Ok(())
        }
        Command::Solve { instance } => {
            let text = std::fs::read_to_string(&instance)
                .map_err(|e| user(format!("reading {}: {e}", instance.display())))?;
            let inst = ScheduleInstance::from_text(&text).map_err(Error::from)?;
            let client = connect(cli.server.as_deref(), None)?;
            let resp = client.solve(&inst)?;
            println!("curriculum  {}", resp.curriculum);
            println!("objective   {}", resp.solution.objective);
            Ok(())
        }
    }
}

fn cache_dir(cfg: &ExperimentConfig) -> PathBuf {
    Path::new(&cfg.output_dir).join("cache")
}

fn connect(server: Option<&str>, cache_dir: Option<&Path>) -> Result<Client, Failure> {
    let url = match server {
        Some(url) => url.to_string(),
        None => {
            let bg = curriculum_server::spawn_background(cache_dir)
                .map_err(|e| internal(format!("starting embedded server: {e}")))?;
            bg.url()
        }
    };
    Ok(Client::new(url)?)
}

fn serve(addr: &str, cache_dir: Option<PathBuf>) -> Result<(), Failure> {
    curriculum_server::init_tracing();
    let runtime = tokio::runtime::Runtime::new().map_err(|e| internal(format!("starting runtime: {e}")))?;
    runtime.block_on(async {
        let listener =
            tokio::net::TcpListener::bind(addr).await.map_err(|e| user(format!("binding {addr}: {e}")))?;
        eprintln!("listening on http://{}", listener.local_addr().map_err(|e| internal(e.to_string()))?);
        curriculum_server::serve(listener, curriculum_server::ServerConfig { cache_dir })
            .await
            .map_err(|e| internal(format!("server: {e}")))
    })
}

fn render_evaluation(r: &EvalResult) -> String {
    let mut out = String::new();
    let reps = r.per_episode_returns.len();
    let episodes = r.per_episode_returns.first().map_or(0, Vec::len);
    let all: Vec<f64> = r.per_episode_returns.iter().flatten().map(|&g| r.normalizer.apply(g)).collect();
    let mean = all.iter().sum::<f64>() / all.len().max(1) as f64;
    let min = all.iter().copied().fold(f64::INFINITY, f64::min);
    let max = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let last = |k: usize| {
        r.per_episode_returns.iter().map(|row| r.normalizer.apply(row[k])).sum::<f64>() / reps.max(1) as f64
    };
    writeln!(out, "curriculum   {}", r.curriculum).unwrap();
    writeln!(out, "regret       {:.6}", r.regret).unwrap();
    writeln!(out, "merit        {:.6}", r.merit).unwrap();
    writeln!(out, "episodes     {episodes} x {reps} repetitions").unwrap();
    if episodes > 0 {
        writeln!(out, "returns      mean {mean:.4}  min {min:.4}  max {max:.4}  (normalized)").unwrap();
        writeln!(out, "             first episode {:.4}  last episode {:.4}", last(0), last(episodes - 1)).unwrap();
    }
    out
}

/// Tab-separated learning curve: episode, then the normalized return per repetition.
fn write_curve(dir: &Path, r: &EvalResult) -> Result<PathBuf, Failure> {
    let dir = dir.join("curves");
    std::fs::create_dir_all(&dir).map_err(|e| internal(format!("creating {}: {e}", dir.display())))?;
    let label = if r.curriculum.is_empty() {
        "empty".to_string()
    } else {
        r.curriculum.tasks().iter().map(usize::to_string).collect::<Vec<_>>().join("-")
    };
    let path = dir.join(format!("curve_{label}.tsv"));
    let mut text = String::from("episode");
    for k in 0..r.per_episode_returns.len() {
        write!(text, "\trep{k}").unwrap();
    }
    text.push('\n');
    let episodes = r.per_episode_returns.first().map_or(0, Vec::len);
    for e in 0..episodes {
        write!(text, "{}", e + 1).unwrap();
        for row in &r.per_episode_returns {
            write!(text, "\t{}", r.normalizer.apply(row[e])).unwrap();
        }
        text.push('\n');
    }
    std::fs::write(&path, text).map_err(|e| internal(format!("writing {}: {e}", path.display())))?;
    Ok(path)
}
