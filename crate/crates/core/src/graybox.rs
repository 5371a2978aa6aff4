//! The gray-box objective Ψ(u, p) and the closed-form heuristic estimate of
//! (ū, p̄) from singleton and pair merits.
//!
//! Ψ solves the scheduling problem for (u, p), decodes the optimal schedule
//! into a curriculum, and returns that curriculum's regret.
//!
//! Under the additive model, `U(c) = Ū + Û(c; u, p)`, so with
//! `b_ji = U(m_i, m_j) − U(m_i) − U(m_j)`:
//!
//! ```text
//! p̄_ji = b_ji + Ū
//! ū_i  = U(m_i) + Σ_{k≠i} b_ik + (n − 2) Ū
//! ```
//!
//! Ū is free. It is set to `−min b` so that `min p̄ = 0`; afterwards every ū_i
//! is raised by the same amount, if needed, until `min ū ≥ 10 · max p̄`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curriculum::Curriculum;
use crate::error::{Error, Result};
use crate::eval::{CurriculumObjective, Scored, Session};
use crate::schedule::{decode, solve, ScheduleSolution, UtilityPenalty};

/// Required ratio between the smallest utility and the largest penalty.
pub const UTILITY_PENALTY_RATIO: f64 = 10.0;

/// Curriculum selected by the scheduling problem for `up`.
pub fn decode_point(up: &UtilityPenalty, max_len: usize) -> Result<Curriculum> {
    let sol = solve(up, max_len)?;
    Ok(decode(&sol, max_len)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsiValue {
    pub curriculum: Curriculum,
    pub regret: f64,
    pub merit: f64,
    /// First time this curriculum was requested in the session.
    pub fresh: bool,
}

/// Ψ(u, p) = P_r(decode(solve(u, p))).
pub fn psi(session: &Session<'_>, up: &UtilityPenalty) -> Result<PsiValue> {
    let obj = session.objective();
    if up.n() != obj.n_tasks() {
        return Err(Error::Config(format!("point has {} tasks, the library has {}", up.n(), obj.n_tasks())));
    }
    let curriculum = decode_point(up, obj.max_length())?;
    let (s, fresh) = session.score(&curriculum)?;
    Ok(PsiValue { curriculum, regret: s.regret, merit: s.merit, fresh })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicEstimate {
    pub u_bar: Vec<f64>,
    /// Diagonal-free rows, as in [`UtilityPenalty`].
    pub p_bar: Vec<Vec<f64>>,
    /// The constant Ū.
    pub big_u: f64,
    /// Uniform amount added to every ū_i after the Ū step.
    pub utility_shift: f64,
    /// U(m_i).
    pub single_merits: Vec<f64>,
    /// U(m_i, m_j) at row i, diagonal-free column for j.
    pub pair_merits: Vec<Vec<f64>>,
}

impl HeuristicEstimate {
    pub fn n(&self) -> usize {
        self.u_bar.len()
    }

    pub fn up(&self) -> UtilityPenalty {
        UtilityPenalty { u: self.u_bar.clone(), p: self.p_bar.clone() }
    }

    pub fn pair_merit(&self, i: usize, j: usize) -> f64 {
        self.pair_merits[i][if j < i { j } else { j - 1 }]
    }

    /// Closed-form estimate from measured merits. `pair(i, j)` is the merit of
    /// the curriculum `(i, j)`.
    pub fn from_merits(single: Vec<f64>, pair: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let n = single.len();
        if n < 2 {
            return Err(Error::Config("the heuristic estimate needs at least two source tasks".into()));
        }
        let pair_merits: Vec<Vec<f64>> =
            (0..n).map(|i| (0..n).filter(|&j| j != i).map(|j| pair(i, j)).collect()).collect();
        let mut est = HeuristicEstimate {
            u_bar: vec![0.0; n],
            p_bar: vec![vec![0.0; n - 1]; n],
            big_u: 0.0,
            utility_shift: 0.0,
            single_merits: single,
            pair_merits,
        };
        // b[j][i] = U(m_i, m_j) − U(m_i) − U(m_j): the penalty of j before i, up to Ū
        let mut b = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                b[j][i] = est.pair_merit(i, j) - est.single_merits[i] - est.single_merits[j];
            }
        }
        let min_b = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| b[i][j]).fold(f64::INFINITY, f64::min);
        if !min_b.is_finite() {
            return Err(Error::Config("merits must be finite".into()));
        }
        est.big_u = -min_b;
        let mut up = UtilityPenalty::zeros(n);
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                up.set_penalty(i, j, (b[i][j] + est.big_u).max(0.0));
            }
            let a: f64 = est.single_merits[i] + (0..n).filter(|&k| k != i).map(|k| b[i][k]).sum::<f64>();
            up.u[i] = a + (n as f64 - 2.0) * est.big_u;
        }
        let max_p = up.p.iter().flatten().copied().fold(0.0, f64::max);
        let min_u = up.u.iter().copied().fold(f64::INFINITY, f64::min);
        est.utility_shift = (UTILITY_PENALTY_RATIO * max_p - min_u).max(0.0);
        for v in &mut up.u {
            *v += est.utility_shift;
        }
        est.u_bar = up.u;
        est.p_bar = up.p;
        Ok(est)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("estimate serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("reading heuristic estimate", e))
    }
}

/// Measure the n singleton and n(n−1) pair merits (n² requests, evaluated
/// concurrently) and build the estimate.
pub fn estimate_up(session: &Session<'_>) -> Result<HeuristicEstimate> {
    let n = session.objective().n_tasks();
    if n < 2 {
        return Err(Error::Config("the heuristic estimate needs at least two source tasks".into()));
    }
    if session.objective().max_length() < 2 {
        return Err(Error::Config("the heuristic estimate needs curricula of length 2".into()));
    }
    let mut requests: Vec<Curriculum> = (0..n).map(|i| Curriculum(vec![i])).collect();
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            requests.push(Curriculum(vec![i, j]));
        }
    }
    let merits: Vec<f64> =
        requests.par_iter().map(|c| session.score(c).map(|(s, _)| s.merit)).collect::<Result<Vec<_>>>()?;
    let single = merits[..n].to_vec();
    let pairs = &merits[n..];
    HeuristicEstimate::from_merits(single, |i, j| pairs[i * (n - 1) + if j < i { j } else { j - 1 }])
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicOutcome {
    /// `None` when n = 1 and the two candidates were compared directly.
    pub estimate: Option<HeuristicEstimate>,
    pub curriculum: Curriculum,
    pub regret: f64,
    pub merit: f64,
}

/// Estimate (ū, p̄) and evaluate Ψ there. With a single source task, `(0)`
/// and `∅` are compared directly.
pub fn heuristic_curriculum(session: &Session<'_>) -> Result<HeuristicOutcome> {
    let n = session.objective().n_tasks();
    if n == 1 {
        let (one, _) = session.score(&Curriculum(vec![0]))?;
        let (none, _) = session.score(&Curriculum::empty())?;
        let (curriculum, s) =
            if one.merit > none.merit { (Curriculum(vec![0]), one) } else { (Curriculum::empty(), none) };
        return Ok(HeuristicOutcome { estimate: None, curriculum, regret: s.regret, merit: s.merit });
    }
    let estimate = estimate_up(session)?;
    let v = psi(session, &estimate.up())?;
    Ok(HeuristicOutcome { estimate: Some(estimate), curriculum: v.curriculum, regret: v.regret, merit: v.merit })
}

/// Synthetic objective that satisfies the additive model exactly:
/// `U(c) = base + Û(c; u*, p*)` and regret `= −U(c)`.
#[derive(Debug, Clone)]
pub struct PlantedObjective {
    pub up: UtilityPenalty,
    pub base: f64,
    pub max_length: usize,
}

impl PlantedObjective {
    pub fn merit(&self, c: &Curriculum) -> Result<f64> {
        Ok(self.base + ScheduleSolution::for_curriculum(c, &self.up, self.max_length)?.objective)
    }

    /// Best curriculum of the planted model.
    pub fn optimum(&self) -> Result<Curriculum> {
        decode_point(&self.up, self.max_length)
    }
}

impl CurriculumObjective for PlantedObjective {
    fn n_tasks(&self) -> usize {
        self.up.n()
    }

    fn max_length(&self) -> usize {
        self.max_length
    }

    fn score(&self, c: &Curriculum) -> Result<Scored> {
        let merit = self.merit(c)?;
        Ok(Scored { regret: -merit, merit })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curriculum::enumerate_feasible;
    use crate::schedule::encode_curriculum;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Planted instance with min p* = 0 and min u* ≥ 10 max p*, so the
    /// estimate should reproduce it exactly.
    fn planted(n: usize, l: usize, seed: u64) -> PlantedObjective {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut up = UtilityPenalty::zeros(n);
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                up.set_penalty(i, j, rng.gen_range(0.0..10.0));
            }
        }
        up.set_penalty(0, 1, 0.0);
        for v in &mut up.u {
            *v = rng.gen_range(100.0..160.0);
        }
        PlantedObjective { up, base: rng.gen_range(-50.0..50.0), max_length: l }
    }

    #[test]
    fn plant_and_recover() {
        for seed in 0..20 {
            let n = 3 + (seed as usize % 5);
            let obj = planted(n, 3.min(n), seed);
            let s = Session::new(&obj);
            let est = estimate_up(&s).unwrap();
            assert_eq!(s.requests(), n * n);
            assert_eq!(s.distinct(), n * n);
            assert!((est.big_u - obj.base).abs() < 1e-9, "Ū recovers the planted constant");
            assert_eq!(est.utility_shift, 0.0);
            for i in 0..n {
                assert!((est.u_bar[i] - obj.up.u[i]).abs() < 1e-9);
                for j in (0..n).filter(|&j| j != i) {
                    for k in 0..n {
                        for l in (0..n).filter(|&l| l != k) {
                            let d_est = est.up().penalty(i, j) - est.up().penalty(k, l);
                            let d_true = obj.up.penalty(i, j) - obj.up.penalty(k, l);
                            assert!((d_est - d_true).abs() < 1e-9);
                        }
                    }
                }
            }
            let out = heuristic_curriculum(&Session::new(&obj)).unwrap();
            assert_eq!(out.curriculum, obj.optimum().unwrap());
        }
    }

    #[test]
    fn shifted_plant_recovers_differences() {
        // min p* > 0: p̄ = p* − min p* uniformly
        let mut obj = planted(5, 3, 11);
        for row in &mut obj.up.p {
            for v in row.iter_mut() {
                *v += 4.0;
            }
        }
        let est = estimate_up(&Session::new(&obj)).unwrap();
        let up = est.up();
        for i in 0..5 {
            for j in (0..5).filter(|&j| j != i) {
                assert!((up.penalty(i, j) - (obj.up.penalty(i, j) - 4.0)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn estimate_satisfies_the_domain_conditions() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let n = rng.gen_range(2..9);
            let single: Vec<f64> = (0..n).map(|_| rng.gen_range(-100.0..100.0)).collect();
            let pairs: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-100.0..100.0)).collect();
            let est = HeuristicEstimate::from_merits(single, |i, j| pairs[i * n + j]).unwrap();
            let up = est.up();
            up.validate().unwrap();
            let max_p = up.p.iter().flatten().copied().fold(0.0, f64::max);
            let min_p = up.p.iter().flatten().copied().fold(f64::INFINITY, f64::min);
            let min_u = up.u.iter().copied().fold(f64::INFINITY, f64::min);
            assert_eq!(min_p, 0.0);
            assert!(min_u >= 10.0 * max_p - 1e-9);
        }
    }

    #[test]
    fn equal_merits() {
        let n = 4;
        let est = HeuristicEstimate::from_merits(vec![7.0; n], |_, _| 7.0).unwrap();
        assert_eq!(est.big_u, 7.0);
        assert!(est.p_bar.iter().flatten().all(|&v| v == 0.0));
        assert!(est.u_bar.iter().all(|&v| v == est.u_bar[0]));
        // every selection has the same utility; the solver's pick is a maximizer
        let sol = solve(&est.up(), 3).unwrap();
        let best = enumerate_feasible(n, 3)
            .map(|c| ScheduleSolution::for_curriculum(&c, &est.up(), 3).unwrap().objective)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(sol.objective, best);
    }

    #[test]
    fn two_tasks_cost_four_requests_plus_one() {
        let obj = planted(2, 2, 5);
        let s = Session::new(&obj);
        estimate_up(&s).unwrap();
        assert_eq!(s.requests(), 4);
        let s = Session::new(&obj);
        heuristic_curriculum(&s).unwrap();
        assert_eq!(s.requests(), 5);
    }

    #[test]
    fn single_task_compares_directly() {
        for (u, p_out) in [(5.0, -1.0), (0.0, 0.0)] {
            let obj = PlantedObjective { up: UtilityPenalty { u: vec![u], p: vec![vec![]] }, base: p_out, max_length: 1 };
            let s = Session::new(&obj);
            let out = heuristic_curriculum(&s).unwrap();
            let expected = if u > 0.0 { Curriculum(vec![0]) } else { Curriculum::empty() };
            assert_eq!(out.curriculum, expected);
            assert_eq!(s.requests(), 2);
        }
    }

    #[test]
    fn psi_factorizes_and_is_scale_invariant() {
        let obj = planted(5, 3, 9);
        let s = Session::new(&obj);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let point: Vec<f64> = (0..25).map(|d| rng.gen_range(0.0..if d < 5 { 1000.0 } else { 100.0 })).collect();
            let up = UtilityPenalty::from_point(5, &point).unwrap();
            let v = psi(&s, &up).unwrap();
            let c = decode(&solve(&up, 3).unwrap(), 3).unwrap();
            assert_eq!(v.curriculum, c);
            assert_eq!(v.regret.to_bits(), obj.score(&c).unwrap().regret.to_bits());
            let scaled = psi(&s, &up.scaled(rng.gen_range(0.1..10.0))).unwrap();
            assert_eq!(scaled.curriculum, v.curriculum);
            assert_eq!(scaled.regret.to_bits(), v.regret.to_bits());
        }
        let empty = encode_curriculum(&Curriculum::empty(), 5, 3).unwrap();
        assert_eq!(psi(&s, &empty).unwrap().curriculum, Curriculum::empty());
    }

    #[test]
    fn estimate_json_round_trip() {
        let est = estimate_up(&Session::new(&planted(4, 2, 3))).unwrap();
        assert_eq!(HeuristicEstimate::from_json(&est.to_json()).unwrap(), est);
    }
}
