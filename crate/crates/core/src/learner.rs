//! Linear Sarsa(λ) over tile-coded features.
//!
//! The weight vector is the object a curriculum hands from task to task. Its
//! length is fixed by the tile-coding table size and never changes.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::{self, ActionDir, GridState, TaskSpec};
use crate::tiles::{featurize, FeatureTable, TileCodingConfig, TileConfigError};

/// Traces below this are dropped from the active set.
const TRACE_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub weights: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(k: usize) -> Self {
        PolicyParams { weights: vec![0.0; k] }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Text form: a two-line header (`K`, tiling digest) then one weight per line.
    pub fn to_text(&self, tiles: &TileCodingConfig) -> String {
        let mut out = String::new();
        writeln!(out, "policy-params v1").unwrap();
        writeln!(out, "k {}", self.weights.len()).unwrap();
        writeln!(out, "tiles {}", tiles.digest()).unwrap();
        for w in &self.weights {
            writeln!(out, "{w}").unwrap();
        }
        out
    }

    /// Parse the text form, checking it was written for `tiles`.
    pub fn from_text(text: &str, tiles: &TileCodingConfig) -> Result<Self, LearnerError> {
        let mut lines = text.lines();
        let bad = |what: &str| LearnerError::BadParamsFile(what.to_string());
        if lines.next() != Some("policy-params v1") {
            return Err(bad("missing header"));
        }
        let k: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("k "))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing weight count"))?;
        let digest = lines.next().and_then(|l| l.strip_prefix("tiles ")).ok_or_else(|| bad("missing tiling digest"))?;
        if k != tiles.feature_table_size {
            return Err(LearnerError::DimensionMismatch { expected: tiles.feature_table_size, found: k });
        }
        if digest != tiles.digest() {
            return Err(bad("tiling digest differs from the active tile-coding config"));
        }
        let weights = lines
            .map(|l| l.trim().parse::<f64>().map_err(|_| bad(&format!("unparseable weight {l:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if weights.len() != k {
            return Err(bad(&format!("expected {k} weights, found {}", weights.len())));
        }
        Ok(PolicyParams { weights })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub step_size: f64,
    pub trace_decay: f64,
    pub exploration: f64,
    pub episodes: usize,
    pub rng_seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            step_size: 0.1 / TileCodingConfig::default().num_tilings as f64,
            trace_decay: 0.9,
            exploration: 0.1,
            episodes: 100,
            rng_seed: 0,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(LearnerError::BadConfig(format!("step_size must be positive, got {}", self.step_size)));
        }
        if !(0.0..=1.0).contains(&self.trace_decay) {
            return Err(LearnerError::BadConfig(format!("trace_decay outside [0,1]: {}", self.trace_decay)));
        }
        if !(0.0..=1.0).contains(&self.exploration) {
            return Err(LearnerError::BadConfig(format!("exploration outside [0,1]: {}", self.exploration)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReturns {
    pub returns: Vec<f64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum LearnerError {
    #[error("weight vector has length {found}, tile coding expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("feature index {index} outside table of size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("invalid learner config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Tiles(#[from] TileConfigError),
    #[error("policy params file: {0}")]
    BadParamsFile(String),
}

/// Sum of the weights at the active (binary) features.
pub fn q_hat(theta: &PolicyParams, features: &[usize]) -> Result<f64, LearnerError> {
    let size = theta.weights.len();
    if let Some(&index) = features.iter().find(|&&i| i >= size) {
        return Err(LearnerError::IndexOutOfRange { index, size });
    }
    Ok(q_unchecked(&theta.weights, features))
}

#[inline]
fn q_unchecked(weights: &[f64], features: &[usize]) -> f64 {
    features.iter().fold(0.0, |acc, &i| acc + weights[i])
}

/// First action with the largest value, in `ActionDir::ALL` order.
fn greedy(values: [f64; 4]) -> ActionDir {
    let mut best = 0;
    for a in 1..4 {
        if values[a] > values[best] {
            best = a;
        }
    }
    ActionDir::from_index(best)
}

/// ε-greedy: one uniform draw decides explore vs exploit; exploring draws the action.
fn epsilon_greedy<R: Rng>(values: [f64; 4], epsilon: f64, rng: &mut R) -> ActionDir {
    if rng.gen::<f64>() < epsilon {
        ActionDir::from_index(rng.gen_range(0..4))
    } else {
        greedy(values)
    }
}

pub fn select_action<R: Rng>(
    theta: &PolicyParams,
    tiles: &TileCodingConfig,
    task: &TaskSpec,
    s: GridState,
    epsilon: f64,
    rng: &mut R,
) -> ActionDir {
    let values = ActionDir::ALL.map(|a| q_unchecked(&theta.weights, &featurize(tiles, task, s, a)));
    epsilon_greedy(values, epsilon, rng)
}

fn action_values(weights: &[f64], table: &FeatureTable, s: GridState) -> [f64; 4] {
    ActionDir::ALL.map(|a| q_unchecked(weights, table.get(s, a)))
}

/// Run `learner.episodes` episodes of Sarsa(λ) with replacing traces from `theta0`.
///
/// Returns the final weights and the discounted return of every episode.
pub fn train(
    task: &TaskSpec,
    theta0: &PolicyParams,
    learner: &LearnerConfig,
    tiles: &TileCodingConfig,
) -> Result<(PolicyParams, EpisodeReturns), LearnerError> {
    learner.validate()?;
    tiles.validate()?;
    if theta0.len() != tiles.feature_table_size {
        return Err(LearnerError::DimensionMismatch { expected: tiles.feature_table_size, found: theta0.len() });
    }
    let table = FeatureTable::build(tiles, task);
    let mut rng = ChaCha8Rng::seed_from_u64(learner.rng_seed);
    let mut weights = theta0.weights.clone();
    let mut trace = vec![0.0_f64; weights.len()];
    let mut active: Vec<usize> = Vec::new();
    let mut returns = Vec::with_capacity(learner.episodes);
    let alpha = learner.step_size;
    let gamma = task.discount;
    let decay = gamma * learner.trace_decay;

    for episode in 0..learner.episodes {
        let mut s = task.episode_start(episode);
        let mut a = epsilon_greedy(action_values(&weights, &table, s), learner.exploration, &mut rng);
        let mut ret = 0.0;
        let mut discount = 1.0;

        for t in 0..task.max_steps {
            let out = gridworld::step(task, s, a).expect("episode loop never steps from a terminal state");
            ret += discount * out.reward;
            discount *= gamma;

            let features = table.get(s, a);
            let q = q_unchecked(&weights, features);
            for &i in features {
                if trace[i] == 0.0 {
                    active.push(i);
                }
                trace[i] = 1.0;
            }

            let last = out.terminal || t + 1 == task.max_steps;
            let (delta, next) = if last {
                (out.reward - q, None)
            } else {
                let s2 = out.next_state;
                let a2 = epsilon_greedy(action_values(&weights, &table, s2), learner.exploration, &mut rng);
                let q2 = q_unchecked(&weights, table.get(s2, a2));
                (out.reward + gamma * q2 - q, Some((s2, a2)))
            };
            for &i in &active {
                weights[i] += alpha * delta * trace[i];
            }
            match next {
                None => break,
                Some((s2, a2)) => {
                    active.retain(|&i| {
                        trace[i] *= decay;
                        if trace[i] < TRACE_FLOOR {
                            trace[i] = 0.0;
                            false
                        } else {
                            true
                        }
                    });
                    s = s2;
                    a = a2;
                }
            }
        }
        for &i in &active {
            trace[i] = 0.0;
        }
        active.clear();
        returns.push(ret);
    }
    Ok((PolicyParams { weights }, EpisodeReturns { returns }))
}

/// Discounted return of one greedy (ε = 0) episode under `theta`.
pub fn greedy_return(task: &TaskSpec, theta: &PolicyParams, tiles: &TileCodingConfig) -> f64 {
    let table = FeatureTable::build(tiles, task);
    let mut s = gridworld::initial_state(task);
    let mut ret = 0.0;
    let mut discount = 1.0;
    for _ in 0..task.max_steps {
        let a = greedy(action_values(&theta.weights, &table, s));
        let out = gridworld::step(task, s, a).expect("greedy rollout stops at terminal states");
        ret += discount * out.reward;
        discount *= task.discount;
        if out.terminal {
            break;
        }
        s = out.next_state;
    }
    ret
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{load_grid, Cell};

    fn corridor() -> TaskSpec {
        load_grid("S.T\n", 0).unwrap()
    }

    #[test]
    fn q_hat_basics() {
        let tiles = TileCodingConfig::default();
        let zero = PolicyParams::zeros(tiles.feature_table_size);
        let f = featurize(&tiles, &corridor(), GridState { position: Cell::new(0, 0) }, ActionDir::East);
        assert_eq!(q_hat(&zero, &f).unwrap(), 0.0);
        let ones = PolicyParams { weights: vec![1.0; tiles.feature_table_size] };
        assert_eq!(q_hat(&ones, &f).unwrap(), 8.0);
        assert_eq!(q_hat(&ones, &[tiles.feature_table_size]), Err(LearnerError::IndexOutOfRange { index: 16384, size: 16384 }));
    }

    #[test]
    fn q_hat_matches_dense_dot_product() {
        let tiles = TileCodingConfig { feature_table_size: 256, ..TileCodingConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let task = load_grid("S..F\n.P..\n...T\n", 0).unwrap();
        for _ in 0..50 {
            let theta = PolicyParams { weights: (0..256).map(|_| rng.gen_range(-5.0..5.0)).collect() };
            let s = GridState { position: Cell::new(rng.gen_range(0..3), rng.gen_range(0..3)) };
            let a = ActionDir::from_index(rng.gen_range(0..4));
            let f = featurize(&tiles, &task, s, a);
            let mut dense = vec![0.0; 256];
            for &i in &f {
                dense[i] = 1.0;
            }
            let dot: f64 = dense.iter().zip(&theta.weights).map(|(x, w)| x * w).sum();
            assert!((q_hat(&theta, &f).unwrap() - dot).abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_selection_and_ties() {
        let tiles = TileCodingConfig::default();
        let task = corridor();
        let s = GridState { position: Cell::new(0, 0) };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let zero = PolicyParams::zeros(tiles.feature_table_size);
        assert_eq!(select_action(&zero, &tiles, &task, s, 0.0, &mut rng), ActionDir::North);

        let mut theta = zero.clone();
        for &i in &featurize(&tiles, &task, s, ActionDir::West) {
            theta.weights[i] = 1.0;
        }
        for _ in 0..20 {
            assert_eq!(select_action(&theta, &tiles, &task, s, 0.0, &mut rng), ActionDir::West);
        }
    }

    #[test]
    fn full_exploration_is_uniform() {
        let tiles = TileCodingConfig::default();
        let task = corridor();
        let s = GridState { position: Cell::new(0, 0) };
        let theta = PolicyParams::zeros(tiles.feature_table_size);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 10_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            counts[select_action(&theta, &tiles, &task, s, 1.0, &mut rng).index()] += 1;
        }
        let mean = draws as f64 / 4.0;
        let sigma = (draws as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn zero_episodes_is_identity() {
        let tiles = TileCodingConfig::default();
        let theta0 = PolicyParams { weights: vec![0.5; tiles.feature_table_size] };
        let cfg = LearnerConfig { episodes: 0, ..LearnerConfig::default() };
        let (theta, ret) = train(&corridor(), &theta0, &cfg, &tiles).unwrap();
        assert_eq!(theta, theta0);
        assert!(ret.returns.is_empty());
    }

    #[test]
    fn training_is_seed_deterministic() {
        let tiles = TileCodingConfig::default();
        let task = load_grid("S...\n.F..\n..PT\n", 0).unwrap();
        let cfg = LearnerConfig { episodes: 30, rng_seed: 9, ..LearnerConfig::default() };
        let theta0 = PolicyParams::zeros(tiles.feature_table_size);
        let a = train(&task, &theta0, &cfg, &tiles).unwrap();
        let b = train(&task, &theta0, &cfg, &tiles).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1.returns.len(), 30);
    }

    #[test]
    fn wrong_dimension_rejected() {
        let tiles = TileCodingConfig::default();
        let err = train(&corridor(), &PolicyParams::zeros(10), &LearnerConfig::default(), &tiles).unwrap_err();
        assert_eq!(err, LearnerError::DimensionMismatch { expected: 16384, found: 10 });
    }

    #[test]
    fn transfer_keeps_dimension() {
        let tiles = TileCodingConfig::default();
        let a = load_grid("S..\n.F.\n..T\n", 0).unwrap();
        let b = load_grid("S...P\n.....\n....T\n", 1).unwrap();
        let cfg = LearnerConfig { episodes: 10, ..LearnerConfig::default() };
        let (theta, _) = train(&a, &PolicyParams::zeros(tiles.feature_table_size), &cfg, &tiles).unwrap();
        let (theta, _) = train(&b, &theta, &cfg, &tiles).unwrap();
        assert_eq!(theta.len(), tiles.feature_table_size);
    }

    #[test]
    fn corridor_converges_to_optimum() {
        let tiles = TileCodingConfig::default();
        let task = corridor();
        for seed in 0..5 {
            let cfg = LearnerConfig { episodes: 100, rng_seed: seed, ..LearnerConfig::default() };
            let (theta, _) = train(&task, &PolicyParams::zeros(tiles.feature_table_size), &cfg, &tiles).unwrap();
            let g = greedy_return(&task, &theta, &tiles);
            assert!((g - 197.0).abs() < 1e-9, "seed {seed}: {g}");
        }
    }

    /// Plain one-step Sarsa written without traces.
    fn one_step_sarsa(task: &TaskSpec, cfg: &LearnerConfig, tiles: &TileCodingConfig) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let mut w = vec![0.0_f64; tiles.feature_table_size];
        let feats = |s: GridState, a: ActionDir| featurize(tiles, task, s, a);
        let q = |w: &[f64], f: &[usize]| f.iter().fold(0.0, |acc, &i| acc + w[i]);
        let policy = |w: &[f64], s: GridState, rng: &mut ChaCha8Rng| {
            let explore = rng.gen::<f64>() < cfg.exploration;
            if explore {
                return ActionDir::from_index(rng.gen_range(0..4));
            }
            let mut best = ActionDir::North;
            for a in ActionDir::ALL {
                if q(w, &feats(s, a)) > q(w, &feats(s, best)) {
                    best = a;
                }
            }
            best
        };
        let mut returns = Vec::new();
        for _ in 0..cfg.episodes {
            let mut s = gridworld::initial_state(task);
            let mut a = policy(&w, s, &mut rng);
            let (mut g, mut disc) = (0.0, 1.0);
            for t in 0..task.max_steps {
                let out = gridworld::step(task, s, a).unwrap();
                g += disc * out.reward;
                disc *= task.discount;
                let f = feats(s, a);
                let target_done = out.terminal || t + 1 == task.max_steps;
                let delta = if target_done {
                    out.reward - q(&w, &f)
                } else {
                    let a2 = policy(&w, out.next_state, &mut rng);
                    let d = out.reward + task.discount * q(&w, &feats(out.next_state, a2)) - q(&w, &f);
                    s = out.next_state;
                    a = a2;
                    d
                };
                for &i in &f {
                    w[i] += cfg.step_size * delta;
                }
                if target_done {
                    break;
                }
            }
            returns.push(g);
        }
        (w, returns)
    }

    #[test]
    fn lambda_zero_matches_one_step_sarsa() {
        let tiles = TileCodingConfig::default();
        let task = load_grid("S..F\n.P..\n....\n.F.T\n", 0).unwrap();
        let cfg = LearnerConfig { trace_decay: 0.0, episodes: 40, rng_seed: 17, ..LearnerConfig::default() };
        let (theta, ret) = train(&task, &PolicyParams::zeros(tiles.feature_table_size), &cfg, &tiles).unwrap();
        let (w, oracle_returns) = one_step_sarsa(&task, &cfg, &tiles);
        assert_eq!(ret.returns, oracle_returns);
        assert!(theta.weights.iter().zip(&w).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn params_text_round_trip_and_header_checks() {
        let tiles = TileCodingConfig { feature_table_size: 16, ..TileCodingConfig::default() };
        let theta = PolicyParams { weights: (0..16).map(|i| (i as f64).sin() * 1e3).collect() };
        let text = theta.to_text(&tiles);
        assert_eq!(PolicyParams::from_text(&text, &tiles).unwrap(), theta);

        let other = TileCodingConfig { hashing_seed: 1, ..tiles.clone() };
        assert!(matches!(PolicyParams::from_text(&text, &other), Err(LearnerError::BadParamsFile(_))));
        let bigger = TileCodingConfig { feature_table_size: 32, ..tiles };
        assert!(matches!(PolicyParams::from_text(&text, &bigger), Err(LearnerError::DimensionMismatch { .. })));
    }
}
