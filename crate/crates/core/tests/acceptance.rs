//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Runs without the libtest harness so the lines are always printed.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;
use std::time::Instant;

use curriculum_core::cache::EvalCache;
use curriculum_core::curriculum::{enumerate_feasible, feasible_count, rank_of_regret};
use curriculum_core::eval::{CurriculumObjective, Evaluator, Session};
use curriculum_core::experiment::{config_for_library, run_algorithm, trace_to_jsonl, ExperimentConfig};
use curriculum_core::graybox::{estimate_up, heuristic_curriculum, psi, PlantedObjective};
use curriculum_core::gridworld::{self, load_grid, ActionDir, GridState, TaskSpec};
use curriculum_core::learner::{greedy_return, train, LearnerConfig, PolicyParams};
use curriculum_core::optim::gp::{expected_improvement, GaussianProcess, Hyper};
use curriculum_core::optim::Algorithm;
use curriculum_core::schedule::{
    brute_force_solve, check_feasible, decode, encode_curriculum, solve, UtilityPenalty,
};
use curriculum_core::taskgen::{generate_library, GeneratorConfig};
use curriculum_core::tiles::{featurize, TileCodingConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("feasible-set counts", c1_feasible_counts),
        ("solver exactness", c2_solver_exactness),
        ("structural properties", c3_structure),
        ("heuristic recovery", c4_heuristic_recovery),
        ("RL sanity", c5_rl_sanity),
        ("end-to-end desk benchmark", c6_desk_benchmark),
        ("gray-box coherence", c7_graybox_coherence),
        ("GP/EI numerics", c8_gp_numerics),
        ("determinism and budget accounting", c9_determinism),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let id = k + 1;
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id} PASS  {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("criterion {id} FAIL  {name}: {why} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn c1_feasible_counts() -> Check {
    let t = Instant::now();
    let a = enumerate_feasible(12, 4).count();
    let b = enumerate_feasible(7, 7).count();
    let secs = t.elapsed().as_secs_f64();
    ensure!(a == 13345 && feasible_count(12, 4) == 13345, "n=12, L=4 gives {a}");
    ensure!(b == 13700 && feasible_count(7, 7) == 13700, "n=7, L=7 gives {b}");
    ensure!(secs < 1.0, "enumeration took {secs:.3}s");
    Ok(format!("|C| = {a} and {b}, enumerated in {:.0} ms", secs * 1e3))
}

fn random_up(rng: &mut ChaCha8Rng, n: usize) -> UtilityPenalty {
    let mut up = UtilityPenalty::zeros(n);
    for i in 0..n {
        up.u[i] = rng.gen_range(0.0..10.0);
        for j in (0..n).filter(|&j| j != i) {
            up.set_penalty(i, j, rng.gen_range(0.0..4.0));
        }
    }
    up
}

fn c2_solver_exactness() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in 3..=8 {
        for k in 0..1000 {
            let up = random_up(&mut rng, n);
            // full-length problems for small n; the brute force caps L at 5 to stay in budget
            let l = rng.gen_range(1..=n.min(5));
            let dp = solve(&up, l).map_err(|e| e.to_string())?;
            let bf = brute_force_solve(&up, l).map_err(|e| e.to_string())?;
            ensure!(dp.objective == bf.objective, "n={n} instance {k}: DP {} vs brute force {}", dp.objective, bf.objective);
            ensure!(check_feasible(&dp, l).is_feasible(), "n={n} instance {k}: infeasible DP solution");
        }
    }
    let secs = t.elapsed().as_secs_f64();
    ensure!(secs < 30.0, "took {secs:.1}s");
    Ok("6000 instances, n = 3..8, DP equals brute force exactly; all solutions feasible".into())
}

fn c3_structure() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in 0..1000 {
        let n = rng.gen_range(1..=10);
        let l = rng.gen_range(1..=n);
        let up = random_up(&mut rng, n);
        let c = decode(&solve(&up, l).map_err(|e| e.to_string())?, l).map_err(|e| e.to_string())?;
        ensure!(c.check(n, l).is_ok(), "instance {k}: decoded {c} is not in C");
    }
    let mut count = 0;
    for c in enumerate_feasible(5, 3) {
        let up = encode_curriculum(&c, 5, 3).map_err(|e| e.to_string())?;
        let back = decode(&solve(&up, 3).map_err(|e| e.to_string())?, 3).map_err(|e| e.to_string())?;
        ensure!(back == c, "{c} round-trips to {back}");
        count += 1;
    }
    ensure!(count == 86, "enumerated {count} curricula");
    Ok("1000 decodes feasible; all 86 curricula round-trip".into())
}

fn c4_heuristic_recovery() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0_f64;
    for trial in 0..30 {
        let n = rng.gen_range(2..=8);
        let l = rng.gen_range(2..=n.min(4));
        // inside the estimator's domain: min p* = 0 and u* ≥ 10 max p*
        let mut up = UtilityPenalty::zeros(n);
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                up.set_penalty(i, j, rng.gen_range(0.0..10.0));
            }
        }
        up.set_penalty(0, 1, 0.0);
        for v in &mut up.u {
            *v = rng.gen_range(100.0..200.0);
        }
        let obj = PlantedObjective { up, base: rng.gen_range(-50.0..50.0), max_length: l };
        let s = Session::new(&obj);
        let est = estimate_up(&s).map_err(|e| e.to_string())?;
        ensure!(s.requests() == n * n && s.distinct() == n * n, "trial {trial}: {} merit evaluations", s.requests());
        let got = est.up();
        let pairs: Vec<(usize, usize)> =
            (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect();
        for &(i, j) in &pairs {
            for &(k, m) in &pairs {
                let d = (got.penalty(i, j) - got.penalty(k, m)) - (obj.up.penalty(i, j) - obj.up.penalty(k, m));
                worst = worst.max(d.abs());
            }
        }
        ensure!(worst < 1e-9, "trial {trial}: penalty differences off by {worst:e}");
        let h = heuristic_curriculum(&Session::new(&obj)).map_err(|e| e.to_string())?;
        let opt = obj.optimum().map_err(|e| e.to_string())?;
        ensure!(h.curriculum == opt, "trial {trial}: heuristic {} vs planted optimum {opt}", h.curriculum);
    }
    Ok(format!("30 planted instances: n² evaluations, max difference error {worst:.1e}, optimum recovered"))
}

/// Independent one-step Sarsa with ε-greedy on the same random stream.
fn one_step_sarsa(task: &TaskSpec, cfg: &LearnerConfig, tiles: &TileCodingConfig) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut w = vec![0.0_f64; tiles.feature_table_size];
    let feats = |s: GridState, a: ActionDir| featurize(tiles, task, s, a);
    let q = |w: &[f64], f: &[usize]| f.iter().fold(0.0, |acc, &i| acc + w[i]);
    let policy = |w: &[f64], s: GridState, rng: &mut ChaCha8Rng| {
        if rng.gen::<f64>() < cfg.exploration {
            return ActionDir::from_index(rng.gen_range(0..4));
        }
        let values: Vec<f64> = ActionDir::ALL.iter().map(|&a| q(w, &feats(s, a))).collect();
        let mut best = 0;
        for a in 1..4 {
            if values[a] > values[best] {
                best = a;
            }
        }
        ActionDir::ALL[best]
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
            let done = out.terminal || t + 1 == task.max_steps;
            let delta = if done {
                out.reward - q(&w, &f)
            } else {
                let a2 = policy(&w, out.next_state, &mut rng);
                let d = out.reward + task.discount * q(&w, &feats(out.next_state, a2)) - q(&w, &f);
                s = out.next_state;
                a = a2;
                d
            };
            let unique: HashSet<usize> = f.iter().copied().collect();
            let mut unique: Vec<usize> = unique.into_iter().collect();
            unique.sort_unstable();
            for i in unique {
                w[i] += cfg.step_size * delta;
            }
            if done {
                break;
            }
        }
        returns.push(g);
    }
    (w, returns)
}

fn c5_rl_sanity() -> Check {
    let tiles = TileCodingConfig::default();
    let corridor = load_grid("S.T\n", 0).map_err(|e| e.to_string())?;
    let expected = -1.0 + 0.99 * 200.0;
    for seed in 0..5 {
        let cfg = LearnerConfig { episodes: 100, rng_seed: seed, ..LearnerConfig::default() };
        let (theta, _) = train(&corridor, &PolicyParams::zeros(tiles.feature_table_size), &cfg, &tiles)
            .map_err(|e| e.to_string())?;
        let g = greedy_return(&corridor, &theta, &tiles);
        ensure!((g - 197.0).abs() < 1e-9 && (g - expected).abs() < 1e-9, "seed {seed}: greedy return {g}");
    }
    let task = load_grid("S..F\n.P..\n....\n.F.T\n", 0).map_err(|e| e.to_string())?;
    let cfg = LearnerConfig { trace_decay: 0.0, episodes: 60, rng_seed: 23, ..LearnerConfig::default() };
    let (theta, ret) =
        train(&task, &PolicyParams::zeros(tiles.feature_table_size), &cfg, &tiles).map_err(|e| e.to_string())?;
    let (w, oracle) = one_step_sarsa(&task, &cfg, &tiles);
    ensure!(ret.returns.len() == oracle.len(), "episode counts differ");
    ensure!(
        ret.returns.iter().zip(&oracle).all(|(a, b)| a.to_bits() == b.to_bits()),
        "Sarsa(0) returns differ from the one-step oracle"
    );
    ensure!(theta.weights.iter().zip(&w).all(|(a, b)| a.to_bits() == b.to_bits()), "Sarsa(0) weights differ");
    Ok("corridor greedy return 197 for 5/5 seeds; Sarsa(0) equals one-step Sarsa bit-for-bit".into())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

fn c6_desk_benchmark() -> Check {
    let t = Instant::now();
    let algos = [Algorithm::C0, Algorithm::Heuristic, Algorithm::Gp, Algorithm::Tpe];
    let mut ranks: BTreeMap<Algorithm, Vec<f64>> = BTreeMap::new();
    let mut regrets: BTreeMap<Algorithm, Vec<f64>> = BTreeMap::new();
    for seed in 0..5 {
        let lib = generate_library(&GeneratorConfig::default(), seed).map_err(|e| e.to_string())?;
        let mut cfg = config_for_library(&lib, 100, 3, seed);
        cfg.algorithms.budget = 50;
        let ev = Evaluator::new(lib, cfg.regret_config(), Some(Arc::new(EvalCache::in_memory())))
            .map_err(|e| e.to_string())?;
        let ex = run_algorithm(&ev, &cfg, Algorithm::Exhaustive, None, None).map_err(|e| e.to_string())?;
        ensure!(ex.outcome.evaluations == 86, "exhaustive used {} evaluations", ex.outcome.evaluations);
        let all = ex.outcome.ranking();
        for algo in algos {
            let run = run_algorithm(&ev, &cfg, algo, None, None).map_err(|e| e.to_string())?;
            let budget_ok = match algo {
                Algorithm::C0 => run.outcome.evaluations == 1,
                Algorithm::Heuristic => run.outcome.requests == 26,
                _ => run.outcome.evaluations <= 50,
            };
            ensure!(budget_ok, "seed {seed}: {algo} used {} evaluations", run.outcome.evaluations);
            let r = run.outcome.best.regret;
            ranks.entry(algo).or_default().push(rank_of_regret(r, &all) as f64);
            regrets.entry(algo).or_default().push(r);
        }
    }
    let med = |m: &BTreeMap<Algorithm, Vec<f64>>, a| median(m[&a].clone());
    let (c0, heu, gp, tpe) = (
        med(&ranks, Algorithm::C0),
        med(&ranks, Algorithm::Heuristic),
        med(&ranks, Algorithm::Gp),
        med(&ranks, Algorithm::Tpe),
    );
    let tpe_wins = regrets[&Algorithm::Tpe].iter().zip(&regrets[&Algorithm::Heuristic]).filter(|(t, h)| t < h).count();
    let summary = format!(
        "median ranks C0 {c0}, heuristic {heu}, GP {gp}, TPE {tpe} of 86; median regret heuristic {:.4}, TPE {:.4}; \
         TPE beats heuristic on {tpe_wins}/5 seeds; {:.0}s",
        med(&regrets, Algorithm::Heuristic),
        med(&regrets, Algorithm::Tpe),
        t.elapsed().as_secs_f64()
    );
    ensure!(c0 > heu && c0 > gp && c0 > tpe, "C0 is not the worst: {summary}");
    ensure!(tpe <= 13.0, "TPE outside the top 15%: {summary}");
    ensure!(gp <= 21.5, "GP outside the top 25%: {summary}");
    ensure!(med(&regrets, Algorithm::Tpe) <= med(&regrets, Algorithm::Heuristic), "TPE regret above heuristic: {summary}");
    ensure!(2 * tpe_wins >= 5, "TPE improves on the heuristic in under half the seeds: {summary}");
    ensure!(t.elapsed().as_secs_f64() < 20.0 * 60.0, "over 20 minutes: {summary}");
    Ok(summary)
}

fn small_config(seed: u64, episodes: usize) -> Result<ExperimentConfig, String> {
    let lib = generate_library(&GeneratorConfig::default(), seed).map_err(|e| e.to_string())?;
    Ok(config_for_library(&lib, episodes, 1, seed))
}

fn c7_graybox_coherence() -> Check {
    let cfg = small_config(70, 15)?;
    let lib = cfg.library().map_err(|e| e.to_string())?;
    let cached = Evaluator::new(lib.clone(), cfg.regret_config(), Some(Arc::new(EvalCache::in_memory())))
        .map_err(|e| e.to_string())?;
    let plain = Evaluator::new(lib, cfg.regret_config(), None).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = cached.n_tasks();
    let point = |rng: &mut ChaCha8Rng| {
        let mut up = UtilityPenalty::zeros(n);
        for i in 0..n {
            up.u[i] = rng.gen_range(0.0..100.0);
            for j in (0..n).filter(|&j| j != i) {
                up.set_penalty(i, j, rng.gen_range(0.0..30.0));
            }
        }
        up
    };
    let points: Vec<UtilityPenalty> = (0..100).map(|_| point(&mut rng)).collect();
    // warm the cache, then read every value back through it
    let warm = Session::new(&cached);
    for up in &points {
        psi(&warm, up).map_err(|e| e.to_string())?;
    }
    let hits_before = cached.cache().unwrap().hits();
    let (from_cache, recomputed) = (Session::new(&cached), Session::new(&plain));
    for (k, up) in points.iter().enumerate() {
        let a = psi(&from_cache, up).map_err(|e| e.to_string())?;
        let b = psi(&recomputed, up).map_err(|e| e.to_string())?;
        ensure!(a.curriculum == b.curriculum, "point {k}: curricula differ");
        ensure!(a.regret.to_bits() == b.regret.to_bits(), "point {k}: cached {} vs recomputed {}", a.regret, b.regret);
    }
    let distinct = from_cache.distinct();
    ensure!(cached.cache().unwrap().hits() - hits_before == distinct, "second pass was not served from the cache");
    let scaled = Session::new(&cached);
    for (k, up) in points.iter().enumerate() {
        let factor = 10f64.powf(rng.gen_range(-3.0..3.0));
        let a = psi(&scaled, up).map_err(|e| e.to_string())?;
        let b = psi(&scaled, &up.scaled(factor)).map_err(|e| e.to_string())?;
        ensure!(a.curriculum == b.curriculum && a.regret.to_bits() == b.regret.to_bits(), "point {k}: scaling by {factor} changed Ψ");
    }
    Ok(format!("100 points ({distinct} curricula) bit-identical with and without cache; invariant under scaling"))
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / m as f64;
    let mut s = f(a) + f(b);
    for k in 1..m {
        s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn c8_gp_numerics() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0_f64;
    for _ in 0..100 {
        let (best, mean, sd) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(0.05..3.0));
        let density = |y: f64| (-0.5 * ((y - mean) / sd).powi(2)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
        let lo = mean - 12.0 * sd;
        let numeric = if best > lo { simpson(|y| (best - y) * density(y), lo, best, 20_000) } else { 0.0 };
        let closed = expected_improvement(best, mean, sd);
        ensure!(closed >= 0.0, "negative EI");
        worst = worst.max((closed - numeric).abs());
    }
    ensure!(worst < 1e-6, "EI differs from quadrature by {worst:e}");
    ensure!(expected_improvement(0.0, 1.0, 0.0) == 0.0, "EI with σ = 0 and a worse mean is not 0");

    let mut max_err = 0.0_f64;
    for trial in 0..5 {
        let dim = 2 + trial;
        let x: Vec<Vec<f64>> = (0..15).map(|_| (0..dim).map(|_| rng.gen::<f64>()).collect()).collect();
        let y: Vec<f64> = x.iter().map(|p| (4.0 * p[0]).sin() + 3.0 * p[1] * p[1] - p.iter().sum::<f64>()).collect();
        let gp = GaussianProcess::fit_with(x.clone(), &y, Hyper::isotropic(dim, 0.5, 1.0, 1e-12))
            .map_err(|e| e.to_string())?;
        for (p, v) in x.iter().zip(&y) {
            max_err = max_err.max((gp.predict(p).0 - v).abs());
        }
    }
    ensure!(max_err < 1e-6, "posterior mean misses training points by {max_err:e}");
    Ok(format!("EI vs quadrature max error {worst:.1e} on 100 posteriors; interpolation error {max_err:.1e}"))
}

fn c9_determinism() -> Check {
    let mut cfg = small_config(90, 10)?;
    cfg.algorithms.budget = 15;
    cfg.algorithms.gp.config.initial_design = 5;
    let n = cfg.sources.len();
    let mut lines = Vec::new();
    for algo in Algorithm::ALL {
        let traces: Vec<String> = (0..2)
            .map(|_| {
                let ev = Evaluator::new(cfg.library().unwrap(), cfg.regret_config(), Some(Arc::new(EvalCache::in_memory())))
                    .unwrap();
                run_algorithm(&ev, &cfg, algo, None, None).map(|r| (trace_to_jsonl(&r.trace), r))
            })
            .map(|r| r.map(|(text, run)| {
                lines.push((algo, run.outcome.evaluations, run.outcome.requests));
                text
            }))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        ensure!(traces[0] == traces[1], "{algo}: traces differ between identical runs");
    }
    for (algo, evals, requests) in &lines {
        let ok = match algo {
            Algorithm::C0 => *evals == 1,
            Algorithm::Heuristic => *requests == n * n + 1,
            Algorithm::Exhaustive => *evals == 86,
            _ => *evals <= 15,
        };
        ensure!(ok, "{algo}: {evals} evaluations, {requests} requests");
    }
    let summary: Vec<String> = lines.iter().step_by(2).map(|(a, e, _)| format!("{a} {e}")).collect();
    Ok(format!("byte-identical traces; evaluations: {}", summary.join(", ")))
}
