//! Experiment configuration, algorithm dispatch, run traces and reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cache::EvalCache;
use crate::curriculum::{feasible_count, rank_of_regret, Curriculum, TaskLibrary};
use crate::digest::derive_seed;
use crate::error::{Error, Result};
use crate::eval::{Evaluator, Normalizer, RegretConfig, Session};
use crate::graybox::{estimate_up, HeuristicEstimate};
use crate::gridworld::{load_grid, serialize_grid};
use crate::learner::LearnerConfig;
use crate::optim::{
    run_c0, run_exhaustive, run_gp, run_greedy, run_heuristic, run_random, run_tpe, Algorithm, GpConfig, OptBudget,
    RunOutcome, SearchBox, TpeConfig, TraceRecord, DEFAULT_EXHAUSTIVE_CEILING,
};
use crate::tiles::TileCodingConfig;

pub const SCHEMA_VERSION: u32 = 1;
/// Environment variable holding the worker count for parallel evaluation.
pub const WORKERS_ENV: &str = "CURRICULUM_WORKERS";
pub const TRACE_SUFFIX: &str = ".trace.jsonl";

/// A grid map given by path (relative to the config file) or inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MapSource {
    Path(String),
    Inline { grid: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerSettings {
    pub step_size: f64,
    pub trace_decay: f64,
    pub exploration: f64,
}

impl Default for LearnerSettings {
    fn default() -> Self {
        let d = LearnerConfig::default();
        LearnerSettings { step_size: d.step_size, trace_decay: d.trace_decay, exploration: d.exploration }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpSettings {
    pub budget: Option<usize>,
    #[serde(rename = "box")]
    pub search_box: Option<SearchBox>,
    #[serde(flatten)]
    pub config: GpConfig,
}

impl Default for GpSettings {
    fn default() -> Self {
        GpSettings { budget: None, search_box: None, config: GpConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct TpeSettings {
    pub budget: Option<usize>,
    #[serde(flatten)]
    pub config: TpeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct BudgetSettings {
    pub budget: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExhaustiveSettings {
    pub ceiling: u128,
}

impl Default for ExhaustiveSettings {
    fn default() -> Self {
        ExhaustiveSettings { ceiling: DEFAULT_EXHAUSTIVE_CEILING }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlgorithmSettings {
    /// Budget for any algorithm without its own.
    pub budget: usize,
    pub greedy: BudgetSettings,
    pub random: BudgetSettings,
    pub gp: GpSettings,
    pub tpe: TpeSettings,
    pub exhaustive: ExhaustiveSettings,
}

impl Default for AlgorithmSettings {
    fn default() -> Self {
        AlgorithmSettings {
            budget: 300,
            greedy: BudgetSettings::default(),
            random: BudgetSettings::default(),
            gp: GpSettings::default(),
            tpe: TpeSettings::default(),
            exhaustive: ExhaustiveSettings::default(),
        }
    }
}

fn default_threshold() -> f64 {
    1.0
}

fn default_normalizer() -> Normalizer {
    Normalizer::TaskBounds
}

fn default_output() -> String {
    "out".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub sources: Vec<MapSource>,
    pub final_task: MapSource,
    pub max_length: usize,
    /// Learning episodes on the final task.
    pub episodes: usize,
    /// Learning episodes per source task; defaults to `episodes`.
    #[serde(default)]
    pub source_episodes: Option<usize>,
    pub repetitions: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_normalizer")]
    pub normalizer: Normalizer,
    #[serde(default)]
    pub learner: LearnerSettings,
    #[serde(default)]
    pub tiles: TileCodingConfig,
    #[serde(default)]
    pub algorithms: AlgorithmSettings,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: String,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks that do not need the maps.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        Ok(())
    }

    /// Read a config file and inline its maps (paths are relative to the file).
    /// A relative `output_dir` is also resolved against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.inline_maps(base)?;
        if Path::new(&cfg.output_dir).is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir).to_string_lossy().into_owned();
        }
        Ok(cfg)
    }

    /// Replace path map sources by their contents.
    pub fn inline_maps(&mut self, base: &Path) -> Result<()> {
        for src in self.sources.iter_mut().chain(std::iter::once(&mut self.final_task)) {
            if let MapSource::Path(p) = src {
                let full = base.join(&*p);
                let grid = std::fs::read_to_string(&full)
                    .map_err(|e| Error::Config(format!("reading map {}: {e}", full.display())))?;
                *src = MapSource::Inline { grid };
            }
        }
        Ok(())
    }

    pub fn library(&self) -> Result<TaskLibrary> {
        let read = |src: &MapSource, id: usize| -> Result<_> {
            match src {
                MapSource::Inline { grid } => Ok(load_grid(grid, id)?),
                MapSource::Path(p) => {
                    let grid = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("reading map {p}: {e}")))?;
                    Ok(load_grid(&grid, id)?)
                }
            }
        };
        let tasks = self.sources.iter().enumerate().map(|(i, s)| read(s, i)).collect::<Result<Vec<_>>>()?;
        let final_task = read(&self.final_task, self.sources.len())?;
        Ok(TaskLibrary::new(tasks, final_task, self.max_length)?)
    }

    pub fn regret_config(&self) -> RegretConfig {
        RegretConfig {
            threshold: self.threshold,
            episodes_final: self.episodes,
            episodes_source: self.source_episodes,
            repetitions: self.repetitions,
            base_seed: derive_seed(self.base_seed, "learner", 0),
            normalizer: self.normalizer,
            learner: LearnerConfig {
                step_size: self.learner.step_size,
                trace_decay: self.learner.trace_decay,
                exploration: self.learner.exploration,
                ..LearnerConfig::default()
            },
            tiles: self.tiles.clone(),
        }
    }

    pub fn budget_for(&self, algo: Algorithm, override_budget: Option<usize>) -> Result<OptBudget> {
        let a = &self.algorithms;
        let configured = match algo {
            Algorithm::Greedy => a.greedy.budget,
            Algorithm::Random => a.random.budget,
            Algorithm::Gp => a.gp.budget,
            Algorithm::Tpe => a.tpe.budget,
            _ => None,
        };
        let b = override_budget.or(configured).unwrap_or(a.budget);
        OptBudget::new(b, derive_seed(self.base_seed, "optimizer", algo as u64))
    }

    /// Config with maps inlined, suitable for sending elsewhere.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Template config for a generated library, with maps inlined.
pub fn config_for_library(lib: &TaskLibrary, episodes: usize, repetitions: usize, base_seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        sources: lib.tasks.iter().map(|t| MapSource::Inline { grid: serialize_grid(t) }).collect(),
        final_task: MapSource::Inline { grid: serialize_grid(&lib.final_task) },
        max_length: lib.max_length,
        episodes,
        source_episodes: None,
        repetitions,
        threshold: 1.0,
        normalizer: Normalizer::TaskBounds,
        learner: LearnerSettings::default(),
        tiles: TileCodingConfig::default(),
        algorithms: AlgorithmSettings::default(),
        base_seed,
        output_dir: default_output(),
    }
}

/// Run `f` on a rayon pool sized by `CURRICULUM_WORKERS`, if set.
pub fn with_workers<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::Config(format!("{WORKERS_ENV} must be a positive integer, got {v:?}")))?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("building worker pool: {e}")))?;
            Ok(pool.install(f))
        }
        Err(_) => Ok(f()),
    }
}

/// Where the heuristic estimate for a config digest is kept.
pub fn estimate_path(cache_dir: &Path, digest: &str) -> PathBuf {
    cache_dir.join(format!("{digest}.heuristic.json"))
}

pub fn cache_path(cache_dir: &Path, digest: &str) -> PathBuf {
    cache_dir.join(format!("{digest}.evals.jsonl"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmRun {
    pub outcome: RunOutcome,
    pub trace: Vec<TraceRecord>,
    /// Evaluations spent on the heuristic estimate that seeds TPE, outside its budget.
    pub prior_evaluations: usize,
    pub estimate: Option<HeuristicEstimate>,
}

/// Execute one algorithm. `estimate_file`, when given, persists the heuristic
/// estimate so TPE can reuse it.
pub fn run_algorithm(
    evaluator: &Evaluator,
    cfg: &ExperimentConfig,
    algo: Algorithm,
    budget_override: Option<usize>,
    estimate_file: Option<&Path>,
) -> Result<AlgorithmRun> {
    if budget_override == Some(0) {
        return Err(Error::Budget("the evaluation budget must be at least 1".into()));
    }
    let n = evaluator.library().n();
    let session = Session::new(evaluator);
    let budget = cfg.budget_for(algo, budget_override)?;
    let mut prior_evaluations = 0;
    let mut estimate = None;
    let outcome = match algo {
        Algorithm::C0 => run_c0(&session)?,
        Algorithm::Greedy => run_greedy(&session, &budget)?,
        Algorithm::Random => {
            let b = cfg.algorithms.gp.search_box.clone().unwrap_or_else(|| SearchBox::default_for(n));
            run_random(&session, &b, &budget)?
        }
        Algorithm::Exhaustive => run_exhaustive(&session, cfg.algorithms.exhaustive.ceiling)?,
        Algorithm::Gp => {
            let b = cfg.algorithms.gp.search_box.clone().unwrap_or_else(|| SearchBox::default_for(n));
            run_gp(&session, &b, &cfg.algorithms.gp.config, &budget)?
        }
        Algorithm::Heuristic => {
            let (out, est) = run_heuristic(&session)?;
            if let (Some(e), Some(path)) = (&est, estimate_file) {
                save_estimate(path, e)?;
            }
            estimate = est;
            out
        }
        Algorithm::Tpe => {
            let est = match estimate_file.and_then(load_estimate) {
                Some(e) if e.n() == n => e,
                _ => {
                    let prior = Session::new(evaluator);
                    let e = estimate_up(&prior)?;
                    prior_evaluations = prior.distinct();
                    if let Some(path) = estimate_file {
                        save_estimate(path, &e)?;
                    }
                    e
                }
            };
            let out = run_tpe(&session, &est, &cfg.algorithms.tpe.config, &budget)?;
            estimate = Some(est);
            out
        }
    };
    let trace = outcome.trace();
    Ok(AlgorithmRun { outcome, trace, prior_evaluations, estimate })
}

fn save_estimate(path: &Path, est: &HeuristicEstimate) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    std::fs::write(path, est.to_json()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn load_estimate(path: &Path) -> Option<HeuristicEstimate> {
    std::fs::read_to_string(path).ok().and_then(|t| HeuristicEstimate::from_json(&t).ok())
}

/// Evaluator for `cfg` backed by the persistent cache under `cache_dir`.
pub fn open_evaluator(cfg: &ExperimentConfig, cache_dir: Option<&Path>) -> Result<Evaluator> {
    let lib = cfg.library()?;
    let regret = cfg.regret_config();
    let probe = Evaluator::new(lib.clone(), regret.clone(), None)?;
    let cache = match cache_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
            let (cache, _) = EvalCache::open(cache_path(dir, probe.digest()))?;
            Some(Arc::new(cache))
        }
        None => None,
    };
    Evaluator::new(lib, regret, cache)
}

pub fn trace_file_name(algo: Algorithm) -> String {
    format!("{algo}{TRACE_SUFFIX}")
}

pub fn trace_to_jsonl(trace: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in trace {
        out.push_str(&serde_json::to_string(r).expect("trace record serializes"));
        out.push('\n');
    }
    out
}

pub fn trace_from_jsonl(text: &str) -> Result<Vec<TraceRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::json(format!("trace line {}", i + 1), e)))
        .collect()
}

pub fn write_trace(dir: &Path, algo: Algorithm, trace: &[TraceRecord]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let path = dir.join(trace_file_name(algo));
    std::fs::write(&path, trace_to_jsonl(trace)).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(path)
}

/// Every `<algorithm>.trace.jsonl` in `dir`.
pub fn read_trace_dir(dir: &Path) -> Result<BTreeMap<Algorithm, Vec<TraceRecord>>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Config(format!("reading {}: {e}", dir.display())))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(format!("listing {}", dir.display()), e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let Some(stem) = name.strip_suffix(TRACE_SUFFIX) else { continue };
        let Ok(algo) = stem.parse::<Algorithm>() else { continue };
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        out.insert(algo, trace_from_jsonl(&text)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub algorithm: Algorithm,
    pub curriculum: Curriculum,
    pub regret: f64,
    pub rank: Option<usize>,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
    /// Size of the feasible set, when the exhaustive trace is present.
    pub feasible: Option<usize>,
    pub best_regret: Option<f64>,
    pub warnings: Vec<String>,
}

/// One row per algorithm trace; ranks come from the exhaustive trace.
pub fn build_report(traces: &BTreeMap<Algorithm, Vec<TraceRecord>>) -> ReportTable {
    let mut warnings = Vec::new();
    let ranking: Option<Vec<(Curriculum, f64)>> = traces.get(&Algorithm::Exhaustive).map(|t| {
        t.iter().filter(|r| r.charged).map(|r| (r.curriculum.clone(), r.regret)).collect()
    });
    if ranking.is_none() {
        warnings.push("no exhaustive trace: ranks are unavailable".to_string());
    }
    let mut rows = Vec::new();
    for (&algo, trace) in traces {
        let Some(best) = trace.iter().filter(|r| r.candidate).min_by(|a, b| a.regret.total_cmp(&b.regret).then(a.index.cmp(&b.index))) else {
            warnings.push(format!("{algo} trace has no candidate records"));
            continue;
        };
        rows.push(ReportRow {
            algorithm: algo,
            curriculum: best.curriculum.clone(),
            regret: best.regret,
            rank: ranking.as_ref().map(|all| rank_of_regret(best.regret, all)),
            evaluations: trace.iter().filter(|r| r.charged).count(),
        });
    }
    let feasible = ranking.as_ref().map(|r| r.len());
    let best_regret = ranking.as_ref().and_then(|r| r.iter().map(|(_, v)| *v).min_by(|a, b| a.total_cmp(b)));
    ReportTable { rows, feasible, best_regret, warnings }
}

impl ReportTable {
    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{:<12} {:>14} {:>8} {:>6}  curriculum", "algorithm", "regret", "rank", "evals").unwrap();
        for r in &self.rows {
            let rank = r.rank.map_or("-".to_string(), |k| k.to_string());
            writeln!(out, "{:<12} {:>14.4} {:>8} {:>6}  {}", r.algorithm.name(), r.regret, rank, r.evaluations, r.curriculum)
                .unwrap();
        }
        match (self.feasible, self.best_regret) {
            (Some(c), Some(b)) => writeln!(out, "best regret over C: {b:.4}   |C| = {c}").unwrap(),
            _ => writeln!(out, "best regret over C: unavailable").unwrap(),
        }
        for w in &self.warnings {
            writeln!(out, "warning: {w}").unwrap();
        }
        out
    }
}

/// |C| for a config.
pub fn feasible_size(cfg: &ExperimentConfig) -> u128 {
    feasible_count(cfg.sources.len(), cfg.max_length)
}
