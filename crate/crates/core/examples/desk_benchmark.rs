//! Small end-to-end benchmark: random 5-task libraries, every algorithm,
//! ranks against exhaustive evaluation.
//!
//! cargo run --release -p curriculum-core --example desk_benchmark -- [seeds]

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use curriculum_core::cache::EvalCache;
use curriculum_core::eval::Evaluator;
use curriculum_core::experiment::{build_report, config_for_library, run_algorithm};
use curriculum_core::optim::Algorithm;
use curriculum_core::taskgen::{generate_library, GeneratorConfig};

fn main() {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    for seed in 0..seeds {
        let t0 = Instant::now();
        let lib = generate_library(&GeneratorConfig::default(), seed).expect("library");
        let mut cfg = config_for_library(&lib, 100, 3, seed);
        cfg.algorithms.budget = 50;
        let ev = Evaluator::new(lib, cfg.regret_config(), Some(Arc::new(EvalCache::in_memory()))).expect("evaluator");
        let mut traces = BTreeMap::new();
        for algo in [Algorithm::Exhaustive, Algorithm::C0, Algorithm::Greedy, Algorithm::Heuristic, Algorithm::Gp, Algorithm::Tpe] {
            let run = run_algorithm(&ev, &cfg, algo, None, None).expect("run");
            traces.insert(algo, run.trace);
        }
        println!("seed {seed} ({:.1}s)\n{}", t0.elapsed().as_secs_f64(), build_report(&traces).render());
    }
}
