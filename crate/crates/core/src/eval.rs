//! Regret and merit of a curriculum on the final task.
//!
//! Each repetition starts from zero weights, trains through the curriculum's
//! source tasks in order, then trains on the final task. Every final-task
//! episode return is mapped through an affine normalizer; regret sums the gap
//! to the threshold, merit sums the normalized returns.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::cache::EvalCache;
use crate::curriculum::{Curriculum, TaskLibrary};
use crate::digest::{derive_seed, digest_json};
use crate::error::{Error, Result};
use crate::gridworld::TaskSpec;
use crate::learner::{train, LearnerConfig, PolicyParams};
use crate::tiles::TileCodingConfig;

/// `y = scale * x + offset`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub scale: f64,
    pub offset: f64,
}

impl AffineMap {
    pub fn apply(&self, x: f64) -> f64 {
        self.scale * x + self.offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Normalizer {
    Identity,
    Affine { scale: f64, offset: f64 },
    /// Worst achievable final-task return ↦ 0, best achievable ↦ 1.
    TaskBounds,
}

impl Normalizer {
    pub fn resolve(&self, final_task: &TaskSpec) -> AffineMap {
        match *self {
            Normalizer::Identity => AffineMap { scale: 1.0, offset: 0.0 },
            Normalizer::Affine { scale, offset } => AffineMap { scale, offset },
            Normalizer::TaskBounds => {
                let worst = final_task.worst_return();
                let best = final_task.optimal_return();
                let span = (best - worst).max(f64::EPSILON);
                AffineMap { scale: 1.0 / span, offset: -worst / span }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretConfig {
    pub threshold: f64,
    pub episodes_final: usize,
    /// Defaults to `episodes_final`.
    #[serde(default)]
    pub episodes_source: Option<usize>,
    pub repetitions: usize,
    pub base_seed: u64,
    pub normalizer: Normalizer,
    /// `episodes` and `rng_seed` are overridden per training stage.
    pub learner: LearnerConfig,
    pub tiles: TileCodingConfig,
}

impl Default for RegretConfig {
    fn default() -> Self {
        RegretConfig {
            threshold: 1.0,
            episodes_final: 100,
            episodes_source: None,
            repetitions: 1,
            base_seed: 0,
            normalizer: Normalizer::TaskBounds,
            learner: LearnerConfig::default(),
            tiles: TileCodingConfig::default(),
        }
    }
}

impl RegretConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.episodes_final == 0 || self.episodes_source == Some(0) {
            return Err(Error::Config("episode counts must be at least 1".into()));
        }
        if !self.threshold.is_finite() {
            return Err(Error::Config("threshold must be finite".into()));
        }
        self.learner.validate()?;
        self.tiles.validate().map_err(crate::learner::LearnerError::from)?;
        Ok(())
    }

    pub fn episodes_source(&self) -> usize {
        self.episodes_source.unwrap_or(self.episodes_final)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub curriculum: Curriculum,
    pub regret: f64,
    pub merit: f64,
    /// Raw discounted returns, one row per repetition.
    pub per_episode_returns: Vec<Vec<f64>>,
    pub seeds: Vec<u64>,
    pub config_digest: String,
    pub normalizer: AffineMap,
}

/// Merit recomputed from the stored returns: mean over repetitions of the
/// summed normalized returns.
pub fn merit(result: &EvalResult) -> f64 {
    let reps = result.per_episode_returns.len() as f64;
    result.per_episode_returns.iter().map(|row| row.iter().map(|&r| result.normalizer.apply(r)).sum::<f64>()).sum::<f64>()
        / reps
}

/// Regret and merit of one curriculum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub regret: f64,
    pub merit: f64,
}

/// Anything that can score a curriculum. The RL evaluator is the real one;
/// synthetic objectives stand in for it in tests and demos.
pub trait CurriculumObjective: Sync {
    fn n_tasks(&self) -> usize;
    fn max_length(&self) -> usize;
    fn score(&self, c: &Curriculum) -> Result<Scored>;
}

/// Trains agents and measures regret, memoized through an [`EvalCache`].
pub struct Evaluator {
    library: TaskLibrary,
    config: RegretConfig,
    digest: String,
    normalizer: AffineMap,
    cache: Option<Arc<EvalCache>>,
}

impl Evaluator {
    pub fn new(library: TaskLibrary, config: RegretConfig, cache: Option<Arc<EvalCache>>) -> Result<Self> {
        library.validate()?;
        config.validate()?;
        let digest = digest_json(&(&library, &config));
        let normalizer = config.normalizer.resolve(&library.final_task);
        Ok(Evaluator { library, config, digest, normalizer, cache })
    }

    pub fn library(&self) -> &TaskLibrary {
        &self.library
    }

    pub fn config(&self) -> &RegretConfig {
        &self.config
    }

    /// Covers the library and every setting that affects a result.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn cache(&self) -> Option<&Arc<EvalCache>> {
        self.cache.as_ref()
    }

    /// Cached result if present, else train and record. The flag is true on a cache hit.
    pub fn evaluate(&self, c: &Curriculum) -> Result<(EvalResult, bool)> {
        self.library.check(c)?;
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(c, &self.digest) {
                return Ok((hit, true));
            }
        }
        let result = self.evaluate_uncached(c)?;
        if let Some(cache) = &self.cache {
            cache.insert(result.clone())?;
        }
        Ok((result, false))
    }

    pub fn evaluate_uncached(&self, c: &Curriculum) -> Result<EvalResult> {
        self.library.check(c)?;
        let cfg = &self.config;
        let k = cfg.tiles.feature_table_size;
        let g = cfg.threshold;
        let mut rows = Vec::with_capacity(cfg.repetitions);
        let mut seeds = Vec::with_capacity(cfg.repetitions);
        let mut regret_sum = 0.0;
        let mut merit_sum = 0.0;
        for r in 0..cfg.repetitions {
            let seed = cfg.base_seed.wrapping_add(r as u64);
            let mut theta = PolicyParams::zeros(k);
            for (pos, &t) in c.tasks().iter().enumerate() {
                let stage = LearnerConfig {
                    episodes: cfg.episodes_source(),
                    rng_seed: derive_seed(seed, "source", ((pos as u64) << 32) | t as u64),
                    ..cfg.learner.clone()
                };
                theta = train(&self.library.tasks[t], &theta, &stage, &cfg.tiles)?.0;
            }
            let stage =
                LearnerConfig { episodes: cfg.episodes_final, rng_seed: derive_seed(seed, "final", 0), ..cfg.learner.clone() };
            let (_, returns) = train(&self.library.final_task, &theta, &stage, &cfg.tiles)?;
            let normalized: Vec<f64> = returns.returns.iter().map(|&x| self.normalizer.apply(x)).collect();
            regret_sum += normalized.iter().map(|&y| g - y).sum::<f64>();
            merit_sum += normalized.iter().sum::<f64>();
            rows.push(returns.returns);
            seeds.push(seed);
        }
        let reps = cfg.repetitions as f64;
        Ok(EvalResult {
            curriculum: c.clone(),
            regret: regret_sum / reps,
            merit: merit_sum / reps,
            per_episode_returns: rows,
            seeds,
            config_digest: self.digest.clone(),
            normalizer: self.normalizer,
        })
    }
}

impl CurriculumObjective for Evaluator {
    fn n_tasks(&self) -> usize {
        self.library.n()
    }

    fn max_length(&self) -> usize {
        self.library.max_length
    }

    fn score(&self, c: &Curriculum) -> Result<Scored> {
        let (r, _) = self.evaluate(c)?;
        Ok(Scored { regret: r.regret, merit: r.merit })
    }
}

/// Convenience wrapper around [`Evaluator`].
pub fn evaluate_curriculum(
    library: &TaskLibrary,
    c: &Curriculum,
    config: &RegretConfig,
    cache: Option<Arc<EvalCache>>,
) -> Result<EvalResult> {
    Evaluator::new(library.clone(), config.clone(), cache)?.evaluate(c).map(|(r, _)| r)
}

/// Per-run accounting over an objective.
///
/// `requests` counts every call; `distinct` counts curricula seen for the
/// first time in this run, which is what budgets are charged in. Repeat
/// requests are answered from the session memo.
pub struct Session<'a> {
    objective: &'a dyn CurriculumObjective,
    requests: AtomicUsize,
    memo: Mutex<HashMap<Curriculum, Scored>>,
    order: Mutex<Vec<Curriculum>>,
}

impl<'a> Session<'a> {
    pub fn new(objective: &'a dyn CurriculumObjective) -> Self {
        Session { objective, requests: AtomicUsize::new(0), memo: Mutex::new(HashMap::new()), order: Mutex::new(Vec::new()) }
    }

    pub fn objective(&self) -> &'a dyn CurriculumObjective {
        self.objective
    }

    /// Score `c`; the flag is true when `c` is new to this session.
    pub fn score(&self, c: &Curriculum) -> Result<(Scored, bool)> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        if let Some(s) = self.memo.lock().unwrap().get(c) {
            return Ok((*s, false));
        }
        let s = self.objective.score(c)?;
        let mut memo = self.memo.lock().unwrap();
        let fresh = memo.insert(c.clone(), s).is_none();
        if fresh {
            self.order.lock().unwrap().push(c.clone());
        }
        Ok((s, fresh))
    }

    /// Score without counting a request or charging the budget.
    pub fn peek(&self, c: &Curriculum) -> Option<Scored> {
        self.memo.lock().unwrap().get(c).copied()
    }

    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::Relaxed)
    }

    pub fn distinct(&self) -> usize {
        self.memo.lock().unwrap().len()
    }

    /// Curricula in first-seen order.
    pub fn seen(&self) -> Vec<Curriculum> {
        self.order.lock().unwrap().clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::load_grid;

    fn small_library() -> TaskLibrary {
        let tasks = vec![
            load_grid("S.T\n...\n", 0).unwrap(),
            load_grid("S..\n.F.\n..T\n", 1).unwrap(),
            load_grid("S...\n..P.\n...T\n", 2).unwrap(),
        ];
        let final_task = load_grid("S....\n.F...\n...P.\n....T\n", 99).unwrap();
        TaskLibrary::new(tasks, final_task, 2).unwrap()
    }

    fn quick_config() -> RegretConfig {
        RegretConfig { episodes_final: 20, episodes_source: Some(10), repetitions: 2, base_seed: 3, ..RegretConfig::default() }
    }

    #[test]
    fn empty_curriculum_is_direct_training() {
        let lib = small_library();
        let cfg = quick_config();
        let res = evaluate_curriculum(&lib, &Curriculum::empty(), &cfg, None).unwrap();
        for (r, row) in res.per_episode_returns.iter().enumerate() {
            let stage = LearnerConfig {
                episodes: cfg.episodes_final,
                rng_seed: derive_seed(cfg.base_seed + r as u64, "final", 0),
                ..cfg.learner.clone()
            };
            let (_, direct) =
                train(&lib.final_task, &PolicyParams::zeros(cfg.tiles.feature_table_size), &stage, &cfg.tiles).unwrap();
            assert_eq!(row, &direct.returns);
        }
        assert_eq!(res.seeds, vec![3, 4]);
    }

    #[test]
    fn zero_gap_normalizer() {
        let lib = small_library();
        let cfg = RegretConfig { normalizer: Normalizer::Affine { scale: 0.0, offset: 1.0 }, ..quick_config() };
        let res = evaluate_curriculum(&lib, &Curriculum(vec![1]), &cfg, None).unwrap();
        assert_eq!(res.regret, 0.0);
        assert_eq!(res.merit, 20.0);
    }

    #[test]
    fn merit_regret_duality_and_determinism() {
        let lib = small_library();
        let cfg = quick_config();
        for c in [vec![], vec![0], vec![2, 1]] {
            let c = Curriculum(c);
            let a = evaluate_curriculum(&lib, &c, &cfg, None).unwrap();
            let b = evaluate_curriculum(&lib, &c, &cfg, None).unwrap();
            assert_eq!(a, b);
            assert!((a.merit + a.regret - cfg.episodes_final as f64 * cfg.threshold).abs() < 1e-9);
            assert!((merit(&a) - a.merit).abs() < 1e-9);
        }
        let g0 = RegretConfig { threshold: 0.0, ..cfg };
        let r = evaluate_curriculum(&lib, &Curriculum(vec![0]), &g0, None).unwrap();
        assert!((r.merit + r.regret).abs() < 1e-9);
    }

    #[test]
    fn infeasible_curriculum_rejected() {
        let lib = small_library();
        let err = evaluate_curriculum(&lib, &Curriculum(vec![1, 1]), &quick_config(), None).unwrap_err();
        assert!(matches!(err, Error::Curriculum(crate::curriculum::CurriculumError::Repeated { task: 1 })));
        let err = evaluate_curriculum(&lib, &Curriculum(vec![0, 1, 2]), &quick_config(), None).unwrap_err();
        assert!(err.is_user_error());
    }

    #[test]
    fn cache_is_transparent_and_keyed_by_config() {
        let lib = small_library();
        let cache = Arc::new(EvalCache::in_memory());
        let cfg = quick_config();
        let cached = Evaluator::new(lib.clone(), cfg.clone(), Some(cache.clone())).unwrap();
        let plain = Evaluator::new(lib.clone(), cfg.clone(), None).unwrap();
        let c = Curriculum(vec![2]);
        let (first, hit1) = cached.evaluate(&c).unwrap();
        let (second, hit2) = cached.evaluate(&c).unwrap();
        assert!(!hit1 && hit2);
        assert_eq!(first, second);
        assert_eq!(first, plain.evaluate(&c).unwrap().0);

        let more_reps = Evaluator::new(lib, RegretConfig { repetitions: 3, ..cfg }, Some(cache.clone())).unwrap();
        assert_ne!(more_reps.digest(), cached.digest());
        let (_, hit) = more_reps.evaluate(&c).unwrap();
        assert!(!hit);
        assert_eq!(cache.len(), 2);
    }

    #[test]
    fn task_bounds_normalizer_maps_optimum_to_one() {
        let t = load_grid("S.T\n", 0).unwrap();
        let m = Normalizer::TaskBounds.resolve(&t);
        assert!((m.apply(197.0) - 1.0).abs() < 1e-12);
        assert!(m.apply(t.worst_return()).abs() < 1e-12);
    }

    struct Counting(AtomicUsize);
    impl CurriculumObjective for Counting {
        fn n_tasks(&self) -> usize {
            3
        }
        fn max_length(&self) -> usize {
            2
        }
        fn score(&self, c: &Curriculum) -> Result<Scored> {
            self.0.fetch_add(1, Ordering::Relaxed);
            Ok(Scored { regret: c.len() as f64, merit: -(c.len() as f64) })
        }
    }

    #[test]
    fn session_counts_requests_and_distinct() {
        let obj = Counting(AtomicUsize::new(0));
        let s = Session::new(&obj);
        assert!(s.score(&Curriculum(vec![1])).unwrap().1);
        assert!(!s.score(&Curriculum(vec![1])).unwrap().1);
        assert!(s.score(&Curriculum::empty()).unwrap().1);
        assert_eq!((s.requests(), s.distinct()), (3, 2));
        assert_eq!(obj.0.load(Ordering::Relaxed), 2);
        assert_eq!(s.seen(), vec![Curriculum(vec![1]), Curriculum::empty()]);
    }
}
