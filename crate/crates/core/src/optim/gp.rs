//! Gaussian-process surrogate with Expected Improvement.
//!
//! Inputs live in the unit box, outputs are standardized before fitting. The
//! kernel is squared-exponential with one length scale per dimension; length
//! scales and signal variance are fitted by maximizing the log marginal
//! likelihood (Adam on the analytic gradient, several starts).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{iteration_cap, Algorithm, OptBudget, Recorder, RunOutcome, SearchBox};
use crate::digest::derive_seed;
use crate::error::{Error, Result};
use crate::eval::Session;

const LOG_LS_RANGE: (f64, f64) = (-4.605_170_185_988_091, 4.605_170_185_988_091); // ln 0.01, ln 100
const LOG_SF2_RANGE: (f64, f64) = (-4.605_170_185_988_091, 4.605_170_185_988_091);
const JITTERS: [f64; 6] = [0.0, 1e-10, 1e-8, 1e-6, 1e-4, 1e-2];
/// EI below this (in standardized units) counts as a flat acquisition surface.
const FLAT_EI: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpConfig {
    /// Observation noise variance on the standardized scale.
    pub noise: f64,
    /// Local refinements of the acquisition per iteration.
    pub restarts: usize,
    /// Space-filling design evaluated before the first fit.
    pub initial_design: usize,
    /// Random starts for the first marginal-likelihood fit; later fits start
    /// from the previous optimum only.
    pub hyper_restarts: usize,
    pub hyper_steps: usize,
    /// Random points scored to seed the acquisition refinement.
    pub random_candidates: usize,
    /// Acquisition evaluations allowed per local refinement.
    pub local_evals: usize,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            noise: 1e-4,
            restarts: 5,
            initial_design: 10,
            hyper_restarts: 2,
            hyper_steps: 30,
            random_candidates: 512,
            local_evals: 300,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(Error::Config("gp noise must be positive".into()));
        }
        if self.restarts == 0 || self.initial_design == 0 || self.random_candidates == 0 {
            return Err(Error::Config("gp restarts, initial design and candidates must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyper {
    pub log_ls: Vec<f64>,
    pub log_sf2: f64,
    pub noise: f64,
}

impl Hyper {
    pub fn isotropic(dim: usize, ls: f64, sf2: f64, noise: f64) -> Self {
        Hyper { log_ls: vec![ls.ln(); dim], log_sf2: sf2.ln(), noise }
    }
}

fn sq_dist_scaled(a: &[f64], b: &[f64], inv_ls2: &[f64]) -> f64 {
    a.iter().zip(b).zip(inv_ls2).map(|((x, y), w)| (x - y) * (x - y) * w).sum()
}

fn kernel_matrix(x: &[Vec<f64>], h: &Hyper) -> DMatrix<f64> {
    let n = x.len();
    let inv: Vec<f64> = h.log_ls.iter().map(|l| (-2.0 * l).exp()).collect();
    let sf2 = h.log_sf2.exp();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = sf2;
        for j in 0..i {
            let v = sf2 * (-0.5 * sq_dist_scaled(&x[i], &x[j], &inv)).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Cholesky of `k + (noise + jitter)·I`, escalating the jitter on failure.
fn robust_cholesky(k: &DMatrix<f64>, noise: f64, sf2: f64) -> Result<Cholesky<f64, Dyn>> {
    for &j in &JITTERS {
        let mut m = k.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += noise + j * sf2;
        }
        if let Some(c) = Cholesky::new(m) {
            return Ok(c);
        }
    }
    Err(Error::Surrogate(format!(
        "covariance of {} points is not positive definite even with jitter {:e}",
        k.nrows(),
        JITTERS[JITTERS.len() - 1] * sf2
    )))
}

/// Log marginal likelihood and its gradient in (log length scales…, log σ_f²).
pub fn log_marginal_likelihood(x: &[Vec<f64>], y: &[f64], h: &Hyper) -> Result<(f64, Vec<f64>)> {
    let n = x.len();
    let dim = h.log_ls.len();
    let sf2 = h.log_sf2.exp();
    let k = kernel_matrix(x, h);
    let chol = robust_cholesky(&k, h.noise, sf2)?;
    let yv = DVector::from_column_slice(y);
    let alpha = chol.solve(&yv);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    let lml = -0.5 * yv.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    let w = &alpha * alpha.transpose() - chol.inverse();
    let inv: Vec<f64> = h.log_ls.iter().map(|l| (-2.0 * l).exp()).collect();
    let mut grad = vec![0.0; dim + 1];
    for i in 0..n {
        for j in 0..i {
            // signal part of K only; factor 2 for the symmetric pair
            let kij = k[(i, j)];
            let wk = w[(i, j)] * kij;
            for d in 0..dim {
                let diff = x[i][d] - x[j][d];
                grad[d] += wk * diff * diff * inv[d];
            }
            grad[dim] += wk;
        }
        grad[dim] += 0.5 * w[(i, i)] * sf2;
    }
    Ok((lml, grad))
}

#[derive(Debug, Clone)]
pub struct GaussianProcess {
    x: Vec<Vec<f64>>,
    hyper: Hyper,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    inv_ls2: Vec<f64>,
    y_mean: f64,
    y_std: f64,
    /// All observed values equal: the model carries no ordering information.
    flat: bool,
}

impl GaussianProcess {
    /// Condition on `(x, y)` with fixed hyperparameters (y in original units).
    pub fn fit_with(x: Vec<Vec<f64>>, y: &[f64], hyper: Hyper) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::Surrogate(format!("{} inputs for {} outputs", x.len(), y.len())));
        }
        let (y_mean, y_std, ys) = standardize(y);
        let flat = y.iter().all(|&v| v == y[0]);
        let k = kernel_matrix(&x, &hyper);
        let chol = robust_cholesky(&k, hyper.noise, hyper.log_sf2.exp())?;
        let alpha = chol.solve(&DVector::from_vec(ys));
        let inv_ls2 = hyper.log_ls.iter().map(|l| (-2.0 * l).exp()).collect();
        Ok(GaussianProcess { x, hyper, chol, alpha, inv_ls2, y_mean, y_std, flat })
    }

    /// Fit hyperparameters by marginal likelihood, then condition.
    pub fn fit<R: Rng>(x: Vec<Vec<f64>>, y: &[f64], cfg: &GpConfig, warm: Option<&Hyper>, rng: &mut R) -> Result<Self> {
        let dim = x.first().map_or(0, |r| r.len());
        let (_, _, ys) = standardize(y);
        let mut starts = vec![warm.cloned().unwrap_or_else(|| Hyper::isotropic(dim, 0.5, 1.0, cfg.noise))];
        let restarts = if warm.is_some() { 0 } else { cfg.hyper_restarts };
        for _ in 0..restarts {
            let log_ls = (0..dim).map(|_| rng.gen_range(0.05f64.ln()..2.0f64.ln())).collect();
            starts.push(Hyper { log_ls, log_sf2: rng.gen_range(-1.0..1.0), noise: cfg.noise });
        }
        let mut best: Option<(f64, Hyper)> = None;
        for s in starts {
            let fitted = adam_fit(&x, &ys, s, cfg.hyper_steps);
            if let Ok((lml, _)) = log_marginal_likelihood(&x, &ys, &fitted) {
                if best.as_ref().map_or(true, |(b, _)| lml > *b) {
                    best = Some((lml, fitted));
                }
            }
        }
        let (_, hyper) = best.ok_or_else(|| Error::Surrogate("no hyperparameter start produced a valid fit".into()))?;
        Self::fit_with(x, y, hyper)
    }

    pub fn hyper(&self) -> &Hyper {
        &self.hyper
    }

    /// Posterior mean and standard deviation of the latent function, in
    /// standardized units.
    fn predict_std(&self, z: &[f64]) -> (f64, f64) {
        let sf2 = self.hyper.log_sf2.exp();
        let kx = DVector::from_iterator(
            self.x.len(),
            self.x.iter().map(|xi| sf2 * (-0.5 * sq_dist_scaled(xi, z, &self.inv_ls2)).exp()),
        );
        let mean = kx.dot(&self.alpha);
        let v = self.chol.l_dirty().solve_lower_triangular(&kx).unwrap_or_else(|| DVector::zeros(self.x.len()));
        let var = (sf2 - v.norm_squared()).max(0.0);
        (mean, var.sqrt())
    }

    /// Posterior mean and standard deviation in original units.
    pub fn predict(&self, z: &[f64]) -> (f64, f64) {
        let (m, s) = self.predict_std(z);
        (self.y_mean + self.y_std * m, self.y_std * s)
    }

    /// EI for minimization against the incumbent `best` (original units).
    /// Zero everywhere when all observations are equal.
    pub fn expected_improvement(&self, z: &[f64], best: f64) -> f64 {
        if self.flat {
            return 0.0;
        }
        let (m, s) = self.predict_std(z);
        expected_improvement((best - self.y_mean) / self.y_std, m, s) * self.y_std
    }
}

fn standardize(y: &[f64]) -> (f64, f64, Vec<f64>) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
    (mean, std, y.iter().map(|v| (v - mean) / std).collect())
}

fn adam_fit(x: &[Vec<f64>], y: &[f64], mut h: Hyper, steps: usize) -> Hyper {
    let dim = h.log_ls.len();
    let (lr, b1, b2, eps) = (0.05, 0.9, 0.999, 1e-8);
    let mut m = vec![0.0; dim + 1];
    let mut v = vec![0.0; dim + 1];
    for t in 1..=steps {
        let Ok((_, g)) = log_marginal_likelihood(x, y, &h) else { break };
        for k in 0..=dim {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let mh = m[k] / (1.0 - b1.powi(t as i32));
            let vh = v[k] / (1.0 - b2.powi(t as i32));
            let step = lr * mh / (vh.sqrt() + eps);
            // ascent on the likelihood
            if k < dim {
                h.log_ls[k] = (h.log_ls[k] + step).clamp(LOG_LS_RANGE.0, LOG_LS_RANGE.1);
            } else {
                h.log_sf2 = (h.log_sf2 + step).clamp(LOG_SF2_RANGE.0, LOG_SF2_RANGE.1);
            }
        }
    }
    h
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Closed-form EI of `f ~ N(mean, sd²)` below `best`: `E[max(best − f, 0)]`.
pub fn expected_improvement(best: f64, mean: f64, sd: f64) -> f64 {
    let gap = best - mean;
    if sd <= 0.0 {
        return gap.max(0.0);
    }
    let z = gap / sd;
    (gap * normal_cdf(z) + sd * normal_pdf(z)).max(0.0)
}

/// Latin hypercube sample of `m` points in the unit box.
pub fn latin_hypercube<R: Rng>(m: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; dim]; m];
    for d in 0..dim {
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(rng);
        for (i, p) in perm.into_iter().enumerate() {
            pts[i][d] = (p as f64 + rng.gen::<f64>()) / m as f64;
        }
    }
    pts
}

/// Argmax of EI in the unit box: score random candidates and the observed
/// points, then refine the best few by compass search. `None` when the
/// surface is flat.
fn maximize_ei<R: Rng>(
    gp: &GaussianProcess,
    observed: &[Vec<f64>],
    best: f64,
    cfg: &GpConfig,
    rng: &mut R,
) -> Option<Vec<f64>> {
    let dim = observed[0].len();
    let mut pool: Vec<(f64, Vec<f64>)> = (0..cfg.random_candidates)
        .map(|_| (0..dim).map(|_| rng.gen::<f64>()).collect::<Vec<f64>>())
        .chain(observed.iter().cloned())
        .map(|z| (gp.expected_improvement(&z, best), z))
        .collect();
    pool.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut winner: Option<(f64, Vec<f64>)> = None;
    for (ei0, start) in pool.into_iter().take(cfg.restarts) {
        let (ei, z) = compass_search(|z| gp.expected_improvement(z, best), start, ei0, cfg.local_evals, rng);
        if winner.as_ref().map_or(true, |(w, _)| ei > *w) {
            winner = Some((ei, z));
        }
    }
    winner.filter(|(ei, _)| *ei > FLAT_EI * gp.y_std).map(|(_, z)| z)
}

/// Derivative-free coordinate search with step halving, maximizing `f`.
fn compass_search<R: Rng>(
    f: impl Fn(&[f64]) -> f64,
    mut z: Vec<f64>,
    mut fz: f64,
    max_evals: usize,
    rng: &mut R,
) -> (f64, Vec<f64>) {
    let dim = z.len();
    let mut step = 0.1;
    let mut evals = 0;
    let mut order: Vec<usize> = (0..dim).collect();
    while step > 1e-3 && evals < max_evals {
        order.shuffle(rng);
        let mut improved = false;
        for &d in &order {
            for dir in [1.0, -1.0] {
                if evals >= max_evals {
                    break;
                }
                let old = z[d];
                let cand = (old + dir * step).clamp(0.0, 1.0);
                if cand == old {
                    continue;
                }
                z[d] = cand;
                let v = f(&z);
                evals += 1;
                if v > fz {
                    fz = v;
                    improved = true;
                    break;
                }
                z[d] = old;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (fz, z)
}

/// Bayesian optimization of Ψ over `search`.
pub fn run_gp(session: &Session<'_>, search: &SearchBox, cfg: &GpConfig, budget: &OptBudget) -> Result<RunOutcome> {
    cfg.validate()?;
    search.validate(session.objective().n_tasks())?;
    if budget.max_evaluations <= cfg.initial_design {
        return Err(Error::Budget(format!(
            "gp needs a budget above its initial design size ({}), got {}",
            cfg.initial_design, budget.max_evaluations
        )));
    }
    let mut design_rng = ChaCha8Rng::seed_from_u64(derive_seed(budget.rng_seed, "design", 0));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(budget.rng_seed, "optimizer", 0));
    let dim = search.dim();
    let mut rec = Recorder::new(session);
    let mut zs: Vec<Vec<f64>> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for z in latin_hypercube(cfg.initial_design, dim, &mut design_rng) {
        let r = rec.eval_point(search.from_unit(&z))?.regret;
        zs.push(z);
        ys.push(r);
    }
    let cap = iteration_cap(budget);
    let mut warm: Option<Hyper> = None;
    while rec.distinct() < budget.max_evaluations && rec.history().len() < cap {
        let gp = GaussianProcess::fit(zs.clone(), &ys, cfg, warm.as_ref(), &mut rng)?;
        warm = Some(gp.hyper().clone());
        let best = ys.iter().copied().fold(f64::INFINITY, f64::min);
        let z = maximize_ei(&gp, &zs, best, cfg, &mut rng).unwrap_or_else(|| (0..dim).map(|_| rng.gen::<f64>()).collect());
        let r = rec.eval_point(search.from_unit(&z))?.regret;
        zs.push(z);
        ys.push(r);
    }
    rec.finish(Algorithm::Gp)
}
