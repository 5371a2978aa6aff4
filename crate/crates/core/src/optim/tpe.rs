//! Tree-structured Parzen estimator used as a local search around the
//! heuristic point (ū, p̄).
//!
//! Every coordinate has a Gaussian prior centred at the heuristic value,
//! truncated at 0. Observations are split at a regret quantile into a good and
//! a bad set; each set gets a per-coordinate Parzen density (prior plus one
//! truncated Gaussian per observation). Candidates are drawn from the good
//! density and the one maximizing `l(x) / g(x)` is evaluated next.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gp::normal_cdf;
use super::{iteration_cap, Algorithm, OptBudget, Recorder, RunOutcome};
use crate::digest::derive_seed;
use crate::error::{Error, Result};
use crate::eval::Session;
use crate::graybox::HeuristicEstimate;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TpeConfig {
    /// Fraction of observations treated as good.
    pub gamma: f64,
    /// Candidates drawn from the good density per iteration.
    pub candidates: usize,
    /// Prior standard deviation as a multiple of the centre value.
    pub prior_std_factor: f64,
    /// Lower bound on a centre used for its prior width, as a fraction of the
    /// mean centre of its group (utilities or penalties). Keeps zero centres
    /// from getting a zero-width prior.
    pub prior_floor_fraction: f64,
    /// Minimum kernel bandwidth, as a fraction of the prior standard deviation.
    pub bandwidth_floor: f64,
    /// Prior draws after the centre, before the density model is used.
    pub startup: usize,
}

impl Default for TpeConfig {
    fn default() -> Self {
        TpeConfig {
            gamma: 0.25,
            candidates: 24,
            prior_std_factor: 0.5,
            prior_floor_fraction: 0.1,
            bandwidth_floor: 0.1,
            startup: 5,
        }
    }
}

impl TpeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config("tpe gamma must lie in (0, 1)".into()));
        }
        if self.candidates == 0 {
            return Err(Error::Config("tpe needs at least one candidate per iteration".into()));
        }
        for (name, v) in [
            ("prior_std_factor", self.prior_std_factor),
            ("prior_floor_fraction", self.prior_floor_fraction),
            ("bandwidth_floor", self.bandwidth_floor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("tpe {name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Gaussian truncated to `[0, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct TruncNormal {
    mu: f64,
    sigma: f64,
    /// ln(σ √(2π) · P[X ≥ 0])
    ln_norm: f64,
}

impl TruncNormal {
    fn new(mu: f64, sigma: f64) -> Self {
        let mass = (1.0 - normal_cdf(-mu / sigma)).max(1e-300);
        TruncNormal { mu, sigma, ln_norm: LN_SQRT_2PI + sigma.ln() + mass.ln() }
    }

    fn ln_pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return f64::NEG_INFINITY;
        }
        let z = (x - self.mu) / self.sigma;
        -0.5 * z * z - self.ln_norm
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        for _ in 0..64 {
            let x = self.mu + self.sigma * standard_normal(rng);
            if x >= 0.0 {
                return x;
            }
        }
        // mass far below zero: the boundary is the mode
        0.0
    }
}

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // Box–Muller
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Per-coordinate prior of the search.
#[derive(Debug, Clone, PartialEq)]
pub struct Prior {
    comps: Vec<TruncNormal>,
}

impl Prior {
    /// Centred at the estimate, width `factor · max(centre, floor · group mean)`.
    pub fn around(estimate: &HeuristicEstimate, cfg: &TpeConfig) -> Self {
        let centre = estimate.up().to_point();
        let n = estimate.n();
        let group_mean = |range: std::ops::Range<usize>| {
            let len = range.len().max(1) as f64;
            let m = centre[range].iter().sum::<f64>() / len;
            if m > 0.0 {
                m
            } else {
                1.0
            }
        };
        let mu_mean = group_mean(0..n);
        let p_mean = group_mean(n..centre.len());
        let comps = centre
            .iter()
            .enumerate()
            .map(|(d, &c)| {
                let g = if d < n { mu_mean } else { p_mean };
                TruncNormal::new(c, cfg.prior_std_factor * c.max(cfg.prior_floor_fraction * g))
            })
            .collect();
        Prior { comps }
    }

    pub fn centre(&self) -> Vec<f64> {
        self.comps.iter().map(|c| c.mu).collect()
    }

    pub fn std(&self) -> Vec<f64> {
        self.comps.iter().map(|c| c.sigma).collect()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.comps.iter().map(|c| c.sample(rng)).collect()
    }
}

/// Parzen density over one set of observed points: per coordinate, an equal
/// mixture of the prior and one truncated Gaussian per point.
#[derive(Debug, Clone)]
pub struct Parzen {
    dims: Vec<Vec<TruncNormal>>,
}

impl Parzen {
    pub fn new(prior: &Prior, points: &[&[f64]], cfg: &TpeConfig) -> Self {
        let m = points.len();
        let dims = prior
            .comps
            .iter()
            .enumerate()
            .map(|(d, p)| {
                let xs: Vec<f64> = points.iter().map(|pt| pt[d]).collect();
                let bw = bandwidth(&xs, p.sigma, cfg.bandwidth_floor);
                std::iter::once(*p).chain(xs.into_iter().take(m).map(|x| TruncNormal::new(x, bw))).collect()
            })
            .collect();
        Parzen { dims }
    }

    pub fn ln_pdf(&self, x: &[f64]) -> f64 {
        self.dims
            .iter()
            .zip(x)
            .map(|(comps, &v)| {
                let terms: Vec<f64> = comps.iter().map(|c| c.ln_pdf(v)).collect();
                log_sum_exp(&terms) - (comps.len() as f64).ln()
            })
            .sum()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.dims.iter().map(|comps| comps[rng.gen_range(0..comps.len())].sample(rng)).collect()
    }

    pub fn bandwidths(&self) -> Vec<f64> {
        self.dims.iter().map(|c| c.get(1).map_or(c[0].sigma, |k| k.sigma)).collect()
    }
}

/// Scott-style bandwidth, clamped to `[floor · prior_sigma, prior_sigma]`.
fn bandwidth(xs: &[f64], prior_sigma: f64, floor: f64) -> f64 {
    let m = xs.len() as f64;
    let raw = if xs.len() > 1 {
        let mean = xs.iter().sum::<f64>() / m;
        let sd = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0)).sqrt();
        1.06 * sd * m.powf(-0.2)
    } else {
        0.0
    };
    raw.clamp(floor * prior_sigma, prior_sigma)
}

/// Index of the largest score; exact ties are broken uniformly at random.
pub fn select_best<R: Rng>(scores: &[f64], rng: &mut R) -> usize {
    let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] == top).collect();
    if ties.is_empty() {
        return rng.gen_range(0..scores.len());
    }
    ties[rng.gen_range(0..ties.len())]
}

/// Local search around the heuristic estimate. The centre is evaluated first.
pub fn run_tpe(
    session: &Session<'_>,
    estimate: &HeuristicEstimate,
    cfg: &TpeConfig,
    budget: &OptBudget,
) -> Result<RunOutcome> {
    cfg.validate()?;
    if estimate.n() != session.objective().n_tasks() {
        return Err(Error::Config("heuristic estimate does not match the task library".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(budget.rng_seed, "optimizer", 1));
    let prior = Prior::around(estimate, cfg);
    let mut rec = Recorder::new(session);
    let cap = iteration_cap(budget);
    rec.eval_point(prior.centre())?;
    while rec.distinct() < budget.max_evaluations && rec.history().len() < cap {
        let point = if rec.history().len() <= cfg.startup {
            prior.sample(&mut rng)
        } else {
            propose(rec.history(), &prior, cfg, &mut rng)
        };
        rec.eval_point(point)?;
    }
    rec.finish(Algorithm::Tpe)
}

fn propose<R: Rng>(history: &[super::Observation], prior: &Prior, cfg: &TpeConfig, rng: &mut R) -> Vec<f64> {
    let mut order: Vec<usize> = (0..history.len()).collect();
    order.sort_by(|&a, &b| history[a].regret.total_cmp(&history[b].regret).then(a.cmp(&b)));
    let n_good = ((cfg.gamma * history.len() as f64).ceil() as usize).clamp(1, history.len());
    let pts = |idx: &[usize]| -> Vec<&[f64]> { idx.iter().map(|&i| history[i].point.as_deref().expect("tpe points")).collect() };
    let good = Parzen::new(prior, &pts(&order[..n_good]), cfg);
    let bad = Parzen::new(prior, &pts(&order[n_good..]), cfg);
    let candidates: Vec<Vec<f64>> = (0..cfg.candidates).map(|_| good.sample(rng)).collect();
    let scores: Vec<f64> = candidates.iter().map(|x| good.ln_pdf(x) - bad.ln_pdf(x)).collect();
    let pick = select_best(&scores, rng);
    candidates.into_iter().nth(pick).expect("candidate index in range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graybox::{estimate_up, PlantedObjective};
    use crate::schedule::UtilityPenalty;

    fn planted(seed: u64) -> PlantedObjective {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut up = UtilityPenalty::zeros(5);
        for i in 0..5 {
            for j in (0..5).filter(|&j| j != i) {
                up.set_penalty(i, j, rng.gen_range(0.0..10.0));
            }
        }
        up.set_penalty(2, 3, 0.0);
        for v in &mut up.u {
            *v = rng.gen_range(100.0..200.0);
        }
        PlantedObjective { up, base: 3.0, max_length: 3 }
    }

    #[test]
    fn centre_on_planted_optimum_is_optimal_first() {
        for seed in 0..5 {
            let obj = planted(seed);
            let est = estimate_up(&Session::new(&obj)).unwrap();
            let out = run_tpe(&Session::new(&obj), &est, &TpeConfig::default(), &OptBudget::new(20, seed).unwrap()).unwrap();
            assert_eq!(out.history[0].curriculum, obj.optimum().unwrap());
            assert_eq!(out.best.index, 0);
            assert!(out.best.regret <= out.history[0].regret);
        }
    }

    #[test]
    fn never_worse_than_centre_and_budgeted() {
        let mut obj = planted(7);
        // perturb so the additive estimate is not exact
        obj.up.u[0] = 90.0;
        let est = estimate_up(&Session::new(&obj)).unwrap();
        let a = run_tpe(&Session::new(&obj), &est, &TpeConfig::default(), &OptBudget::new(15, 2).unwrap()).unwrap();
        let b = run_tpe(&Session::new(&obj), &est, &TpeConfig::default(), &OptBudget::new(15, 2).unwrap()).unwrap();
        assert_eq!(a, b);
        assert!(a.best.regret <= a.history[0].regret);
        assert!(a.evaluations <= 15);
        assert!(a.history.iter().all(|o| o.point.as_ref().unwrap().iter().all(|&v| v >= 0.0)));
    }

    #[test]
    fn bandwidth_is_floored() {
        let bw = bandwidth(&[3.0, 3.0, 3.0], 2.0, 0.1);
        assert_eq!(bw, 0.2);
        assert_eq!(bandwidth(&[1.0], 2.0, 0.1), 0.2);
        assert!(bandwidth(&[0.0, 100.0], 2.0, 0.1) <= 2.0);
        let est = estimate_up(&Session::new(&planted(1))).unwrap();
        let prior = Prior::around(&est, &TpeConfig::default());
        let x = prior.centre();
        let parzen = Parzen::new(&prior, &[&x, &x, &x], &TpeConfig::default());
        assert!(parzen.bandwidths().iter().zip(prior.std()).all(|(b, s)| *b >= 0.1 * s && *b > 0.0));
        assert!(parzen.ln_pdf(&x).is_finite());
    }

    #[test]
    fn prior_widths_are_positive() {
        let est = estimate_up(&Session::new(&planted(2))).unwrap();
        let prior = Prior::around(&est, &TpeConfig::default());
        assert!(prior.std().iter().all(|&s| s > 0.0));
        let c = prior.centre();
        for (s, m) in prior.std().iter().zip(&c) {
            if *m > 0.0 && *s != 0.5 * m {
                // only floored coordinates differ from half their centre
                assert!(*s > 0.5 * m);
            }
        }
    }

    #[test]
    fn truncated_density_integrates_to_one() {
        for (mu, sigma) in [(0.0, 1.0), (2.0, 0.5), (-1.0, 1.0)] {
            let t = TruncNormal::new(mu, sigma);
            let h = 1e-3;
            let total: f64 = (0..20_000).map(|k| t.ln_pdf((k as f64 + 0.5) * h).exp() * h).sum();
            assert!((total - 1.0).abs() < 1e-3, "mu {mu} sigma {sigma}: {total}");
        }
    }

    #[test]
    fn identical_densities_select_uniformly() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let est = estimate_up(&Session::new(&planted(3))).unwrap();
        let prior = Prior::around(&est, &TpeConfig::default());
        let pts: Vec<Vec<f64>> = (0..4).map(|_| prior.sample(&mut rng)).collect();
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let l = Parzen::new(&prior, &refs, &TpeConfig::default());
        let g = Parzen::new(&prior, &refs, &TpeConfig::default());
        let k = 24;
        let trials = 24_000;
        let mut counts = vec![0usize; k];
        for _ in 0..trials {
            let cands: Vec<Vec<f64>> = (0..k).map(|_| l.sample(&mut rng)).collect();
            let scores: Vec<f64> = cands.iter().map(|x| l.ln_pdf(x) - g.ln_pdf(x)).collect();
            counts[select_best(&scores, &mut rng)] += 1;
        }
        let expected = trials as f64 / k as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 23 degrees of freedom; 0.999 quantile ≈ 49.7
        assert!(chi2 < 49.7, "chi2 = {chi2}, counts {counts:?}");
    }
}
