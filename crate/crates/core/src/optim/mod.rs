//! Search over curricula: baselines, the exhaustive oracle, and surrogate-based
//! optimizers over Ψ(u, p).
//!
//! Budgets count distinct curricula evaluated within one run. Requests for a
//! curriculum already seen in the run are free.

pub mod gp;
pub mod tpe;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curriculum::{enumerate_feasible, feasible_count, Curriculum};
use crate::digest::digest_point;
use crate::error::{Error, Result};
use crate::eval::{Scored, Session};
use crate::graybox::{estimate_up, heuristic_curriculum, psi, HeuristicEstimate};
use crate::schedule::UtilityPenalty;

pub use gp::{run_gp, GpConfig};
pub use tpe::{run_tpe, TpeConfig};

/// Default ceiling on the feasible-set size for exhaustive evaluation.
pub const DEFAULT_EXHAUSTIVE_CEILING: u128 = 20_000;

/// Proposals per unit of budget before a run gives up on finding new curricula.
const ITERATION_FACTOR: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    C0,
    Greedy,
    Gp,
    Heuristic,
    Tpe,
    Random,
    Exhaustive,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::C0,
        Algorithm::Greedy,
        Algorithm::Gp,
        Algorithm::Heuristic,
        Algorithm::Tpe,
        Algorithm::Random,
        Algorithm::Exhaustive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::C0 => "c0",
            Algorithm::Greedy => "greedy",
            Algorithm::Gp => "gp",
            Algorithm::Heuristic => "heuristic",
            Algorithm::Tpe => "tpe",
            Algorithm::Random => "random",
            Algorithm::Exhaustive => "exhaustive",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm {s:?}; expected one of c0, greedy, gp, heuristic, tpe, random, exhaustive")))
    }
}

/// Axis-aligned bounds on the flattened (u, p) point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SearchBox {
    /// `[0, u_max]^n × [0, p_max]^{n(n−1)}`.
    pub fn uniform(n: usize, u_max: f64, p_max: f64) -> Self {
        let dim = UtilityPenalty::dimension(n);
        SearchBox { lower: vec![0.0; dim], upper: (0..dim).map(|d| if d < n { u_max } else { p_max }).collect() }
    }

    pub fn default_for(n: usize) -> Self {
        Self::uniform(n, 1000.0, 100.0)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let dim = UtilityPenalty::dimension(n);
        if self.lower.len() != dim || self.upper.len() != dim {
            return Err(Error::Config(format!("search box needs {dim} bounds per side")));
        }
        for (d, (&lo, &hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::Config(format!("search box dimension {d}: need 0 ≤ lower ≤ upper < ∞, got [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(&lo, &hi)| if hi > lo { rng.gen_range(lo..hi) } else { lo }).collect()
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&lo, &hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
            .collect()
    }

    pub fn from_unit(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(self.lower.iter().zip(&self.upper)).map(|(&t, (&lo, &hi))| lo + t.clamp(0.0, 1.0) * (hi - lo)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptBudget {
    pub max_evaluations: usize,
    pub rng_seed: u64,
}

impl OptBudget {
    pub fn new(max_evaluations: usize, rng_seed: u64) -> Result<Self> {
        if max_evaluations == 0 {
            return Err(Error::Budget("the evaluation budget must be at least 1".into()));
        }
        Ok(OptBudget { max_evaluations, rng_seed })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub index: usize,
    /// Flattened (u, p); absent for algorithms that propose curricula directly.
    pub point: Option<Vec<f64>>,
    pub curriculum: Curriculum,
    pub regret: f64,
    /// True when this request consumed budget (first time the curriculum was seen).
    pub charged: bool,
    /// False for pilot evaluations that feed an estimate but are not proposals
    /// of the algorithm; only candidates can become the incumbent.
    pub candidate: bool,
}

impl Observation {
    pub fn point_digest(&self) -> Option<String> {
        self.point.as_deref().map(digest_point)
    }
}

/// One line of a run trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub index: usize,
    pub point_digest: Option<String>,
    pub curriculum: Curriculum,
    pub regret: f64,
    /// Best candidate regret so far, this record included.
    pub incumbent: Option<f64>,
    pub charged: bool,
    #[serde(default = "default_candidate")]
    pub candidate: bool,
}

fn default_candidate() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub algorithm: Algorithm,
    pub best: Observation,
    pub history: Vec<Observation>,
    /// Distinct curricula evaluated (the budgeted quantity).
    pub evaluations: usize,
    /// Every objective request, repeats included.
    pub requests: usize,
}

impl RunOutcome {
    pub fn trace(&self) -> Vec<TraceRecord> {
        let mut best: Option<f64> = None;
        self.history
            .iter()
            .map(|o| {
                if o.candidate {
                    best = Some(best.map_or(o.regret, |b| b.min(o.regret)));
                }
                TraceRecord {
                    index: o.index,
                    point_digest: o.point_digest(),
                    curriculum: o.curriculum.clone(),
                    regret: o.regret,
                    incumbent: best,
                    charged: o.charged,
                    candidate: o.candidate,
                }
            })
            .collect()
    }

    /// Distinct curricula ranked by ascending regret, ties in first-seen order.
    pub fn ranking(&self) -> Vec<(Curriculum, f64)> {
        let mut out: Vec<(Curriculum, f64)> =
            self.history.iter().filter(|o| o.charged).map(|o| (o.curriculum.clone(), o.regret)).collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1));
        out
    }
}

/// Observation log shared by all optimizers.
pub(crate) struct Recorder<'s, 'a> {
    session: &'s Session<'a>,
    history: Vec<Observation>,
    seen: HashSet<Curriculum>,
    best: Option<usize>,
}

impl<'s, 'a> Recorder<'s, 'a> {
    pub(crate) fn new(session: &'s Session<'a>) -> Self {
        Recorder { session, history: Vec::new(), seen: HashSet::new(), best: None }
    }

    pub(crate) fn n(&self) -> usize {
        self.session.objective().n_tasks()
    }

    pub(crate) fn distinct(&self) -> usize {
        self.seen.len()
    }

    pub(crate) fn has_seen(&self, c: &Curriculum) -> bool {
        self.seen.contains(c)
    }

    pub(crate) fn history(&self) -> &[Observation] {
        &self.history
    }

    pub(crate) fn best(&self) -> Option<&Observation> {
        self.best.map(|i| &self.history[i])
    }

    /// Log an already-scored request.
    pub(crate) fn note(&mut self, point: Option<Vec<f64>>, curriculum: Curriculum, regret: f64) -> &Observation {
        self.push(point, curriculum, regret, true)
    }

    /// Log a pilot evaluation: charged to the budget, never the incumbent.
    pub(crate) fn note_pilot(&mut self, curriculum: Curriculum, regret: f64) -> &Observation {
        self.push(None, curriculum, regret, false)
    }

    fn push(&mut self, point: Option<Vec<f64>>, curriculum: Curriculum, regret: f64, candidate: bool) -> &Observation {
        let charged = self.seen.insert(curriculum.clone());
        let index = self.history.len();
        self.history.push(Observation { index, point, curriculum, regret, charged, candidate });
        // strict improvement keeps the earliest of tied incumbents
        if candidate && self.best.map_or(true, |b| regret < self.history[b].regret) {
            self.best = Some(index);
        }
        &self.history[index]
    }

    pub(crate) fn eval_curriculum(&mut self, c: &Curriculum) -> Result<&Observation> {
        let (s, _) = self.session.score(c)?;
        Ok(self.note(None, c.clone(), s.regret))
    }

    pub(crate) fn eval_point(&mut self, point: Vec<f64>) -> Result<&Observation> {
        let up = UtilityPenalty::from_point(self.n(), &point)?;
        let v = psi(self.session, &up)?;
        Ok(self.note(Some(point), v.curriculum, v.regret))
    }

    pub(crate) fn finish(self, algorithm: Algorithm) -> Result<RunOutcome> {
        let best = self.best().cloned().ok_or_else(|| Error::Budget("no evaluation was performed".into()))?;
        Ok(RunOutcome {
            algorithm,
            best,
            evaluations: self.seen.len(),
            requests: self.history.len(),
            history: self.history,
        })
    }
}

pub(crate) fn iteration_cap(budget: &OptBudget) -> usize {
    budget.max_evaluations.saturating_mul(ITERATION_FACTOR)
}

/// Train directly on the final task: one evaluation of `∅`.
pub fn run_c0(session: &Session<'_>) -> Result<RunOutcome> {
    let mut rec = Recorder::new(session);
    rec.eval_curriculum(&Curriculum::empty())?;
    rec.finish(Algorithm::C0)
}

/// Grow the curriculum one task at a time from `∅`, keeping the best
/// extension while it strictly lowers regret.
pub fn run_greedy(session: &Session<'_>, budget: &OptBudget) -> Result<RunOutcome> {
    let n = session.objective().n_tasks();
    let max_len = session.objective().max_length();
    if budget.max_evaluations < n {
        return Err(Error::Budget(format!("greedy needs a budget of at least n = {n}")));
    }
    let mut rec = Recorder::new(session);
    let mut incumbent = Curriculum::empty();
    let mut incumbent_regret = rec.eval_curriculum(&incumbent)?.regret;
    'rounds: while incumbent.len() < max_len {
        let mut round_best: Option<(Curriculum, f64)> = None;
        for t in (0..n).filter(|t| !incumbent.tasks().contains(t)) {
            let mut ext = incumbent.clone();
            ext.0.push(t);
            if rec.distinct() >= budget.max_evaluations && !rec.has_seen(&ext) {
                break 'rounds;
            }
            let r = rec.eval_curriculum(&ext)?.regret;
            if round_best.as_ref().map_or(true, |(_, b)| r < *b) {
                round_best = Some((ext, r));
            }
        }
        match round_best {
            Some((c, r)) if r < incumbent_regret => {
                incumbent = c;
                incumbent_regret = r;
            }
            _ => break,
        }
    }
    rec.finish(Algorithm::Greedy)
}

/// Uniform draws in the box.
pub fn run_random(session: &Session<'_>, search: &SearchBox, budget: &OptBudget) -> Result<RunOutcome> {
    use rand::SeedableRng;
    search.validate(session.objective().n_tasks())?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(budget.rng_seed);
    let mut rec = Recorder::new(session);
    let cap = iteration_cap(budget);
    while rec.distinct() < budget.max_evaluations && rec.history().len() < cap {
        rec.eval_point(search.sample(&mut rng))?;
    }
    rec.finish(Algorithm::Random)
}

/// Evaluate every feasible curriculum (concurrently), logged in enumeration order.
pub fn run_exhaustive(session: &Session<'_>, ceiling: u128) -> Result<RunOutcome> {
    let n = session.objective().n_tasks();
    let max_len = session.objective().max_length();
    let count = feasible_count(n, max_len);
    if count > ceiling {
        return Err(Error::TooManyCurricula { count, ceiling });
    }
    let all: Vec<Curriculum> = enumerate_feasible(n, max_len).collect();
    let scores: Vec<Scored> = all.par_iter().map(|c| session.score(c).map(|(s, _)| s)).collect::<Result<_>>()?;
    let mut rec = Recorder::new(session);
    for (c, s) in all.into_iter().zip(scores) {
        rec.note(None, c, s.regret);
    }
    rec.finish(Algorithm::Exhaustive)
}

/// The closed-form estimate followed by one Ψ evaluation: n² + 1 requests.
/// The singleton and pair evaluations are pilots; the answer is Ψ(ū, p̄).
pub fn run_heuristic(session: &Session<'_>) -> Result<(RunOutcome, Option<HeuristicEstimate>)> {
    let n = session.objective().n_tasks();
    let out = heuristic_curriculum(session)?;
    let mut rec = Recorder::new(session);
    let lookup = |c: &Curriculum| session.peek(c).map(|s| s.regret).expect("scored during the estimate");
    match &out.estimate {
        Some(est) => {
            for i in 0..n {
                let c = Curriculum(vec![i]);
                let r = lookup(&c);
                rec.note_pilot(c, r);
            }
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    let c = Curriculum(vec![i, j]);
                    let r = lookup(&c);
                    rec.note_pilot(c, r);
                }
            }
            rec.note(Some(est.up().to_point()), out.curriculum.clone(), out.regret);
        }
        None => {
            for c in [Curriculum(vec![0]), Curriculum::empty()] {
                let r = lookup(&c);
                rec.note(None, c, r);
            }
        }
    }
    Ok((rec.finish(Algorithm::Heuristic)?, out.estimate))
}

/// Convenience for callers that only need the estimate (e.g. to centre TPE).
pub fn estimate(session: &Session<'_>) -> Result<HeuristicEstimate> {
    estimate_up(session)
}
