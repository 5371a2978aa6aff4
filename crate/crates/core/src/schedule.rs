//! The curriculum scheduling problem.
//!
//! Select at most `L` of `n` tasks and order them to maximize
//!
//! ```text
//! Û(δ, γ; u, p) = Σ_i u_i δ_i − Σ_{i≠j} p_ij γ_ij
//! ```
//!
//! where `γ_ij = 1` when task `i` is included and precedes task `j`. Excluded
//! tasks count as scheduled after every included task, so an included task pays
//! `p_ij` for every excluded `j`.
//!
//! [`solve`] is an exact dynamic program over task subsets. [`check_feasible`]
//! keeps the integer-programming constraint rows as the ground truth, and
//! [`brute_force_solve`] enumerates the feasible set as an independent oracle.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curriculum::{enumerate_feasible, Curriculum, CurriculumError};

/// Largest `n` accepted by [`solve`].
pub const MAX_EXACT_TASKS: usize = 20;
/// Largest `n` accepted by [`brute_force_solve`].
pub const MAX_BRUTE_FORCE_TASKS: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("{n} tasks exceeds the exact-solver limit of {limit}")]
    Unsupported { n: usize, limit: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{what} must be finite and non-negative, got {value} at {index:?}")]
    Negative { what: &'static str, index: (usize, usize), value: f64 },
    #[error("maximum length must be at least 1")]
    ZeroLength,
    #[error("solution is infeasible: {0}")]
    Infeasible(Violation),
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
    #[error("instance file line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Utilities `u` (length n) and penalties `p` (n rows of n−1, diagonal omitted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityPenalty {
    pub u: Vec<f64>,
    pub p: Vec<Vec<f64>>,
}

/// Column of `j` within row `i` once the diagonal is dropped.
#[inline]
fn off_diag(i: usize, j: usize) -> usize {
    if j < i {
        j
    } else {
        j - 1
    }
}

impl UtilityPenalty {
    pub fn new(u: Vec<f64>, p: Vec<Vec<f64>>) -> Result<Self, ScheduleError> {
        let up = UtilityPenalty { u, p };
        up.validate()?;
        Ok(up)
    }

    pub fn zeros(n: usize) -> Self {
        UtilityPenalty { u: vec![0.0; n], p: vec![vec![0.0; n.saturating_sub(1)]; n] }
    }

    /// Build from a dense n×n penalty matrix; its diagonal is ignored.
    pub fn from_dense(u: Vec<f64>, dense: &[Vec<f64>]) -> Result<Self, ScheduleError> {
        let n = u.len();
        if dense.len() != n || dense.iter().any(|r| r.len() != n) {
            return Err(ScheduleError::Shape(format!("dense penalty matrix must be {n}x{n}")));
        }
        let p = (0..n).map(|i| (0..n).filter(|&j| j != i).map(|j| dense[i][j]).collect()).collect();
        Self::new(u, p)
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        let n = self.u.len();
        if self.p.len() != n || self.p.iter().any(|r| r.len() != n.saturating_sub(1)) {
            return Err(ScheduleError::Shape(format!("penalties must be {n} rows of {} values", n.saturating_sub(1))));
        }
        for (i, &v) in self.u.iter().enumerate() {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ScheduleError::Negative { what: "utility", index: (i, i), value: v });
            }
        }
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                let v = self.penalty(i, j);
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(ScheduleError::Negative { what: "penalty", index: (i, j), value: v });
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.u.len()
    }

    /// Penalty for `i` scheduled before `j` (i ≠ j).
    #[inline]
    pub fn penalty(&self, i: usize, j: usize) -> f64 {
        self.p[i][off_diag(i, j)]
    }

    pub fn set_penalty(&mut self, i: usize, j: usize, v: f64) {
        let col = off_diag(i, j);
        self.p[i][col] = v;
    }

    /// Number of coordinates of the flattened point: n + n(n−1).
    pub fn dimension(n: usize) -> usize {
        n * n
    }

    /// Flatten to `u` followed by the rows of `p`.
    pub fn to_point(&self) -> Vec<f64> {
        self.u.iter().chain(self.p.iter().flatten()).copied().collect()
    }

    /// Inverse of [`to_point`](Self::to_point). Negative coordinates are rejected.
    pub fn from_point(n: usize, point: &[f64]) -> Result<Self, ScheduleError> {
        if point.len() != Self::dimension(n) {
            return Err(ScheduleError::Shape(format!("point has {} coordinates, expected {}", point.len(), n * n)));
        }
        let u = point[..n].to_vec();
        let p = point[n..].chunks(n.saturating_sub(1).max(1)).take(n).map(|r| r.to_vec()).collect::<Vec<_>>();
        let p = if n == 1 { vec![Vec::new()] } else { p };
        Self::new(u, p)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        UtilityPenalty {
            u: self.u.iter().map(|v| v * factor).collect(),
            p: self.p.iter().map(|r| r.iter().map(|v| v * factor).collect()).collect(),
        }
    }
}

/// A point `(x, δ, γ)` of the scheduling problem and its objective value.
/// `gamma` uses the same diagonal-free layout as the penalties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSolution {
    pub x: Vec<i64>,
    pub delta: Vec<u8>,
    pub gamma: Vec<Vec<u8>>,
    pub objective: f64,
}

impl ScheduleSolution {
    pub fn n(&self) -> usize {
        self.x.len()
    }

    fn gamma_at(&self, i: usize, j: usize) -> u8 {
        self.gamma[i][off_diag(i, j)]
    }

    /// Canonical solution for curriculum `c`: consecutive positions from 0 for
    /// included tasks, `L−1` for excluded ones, and `γ_ij = 1` exactly where the
    /// constraints force it.
    pub fn for_curriculum(c: &Curriculum, up: &UtilityPenalty, max_len: usize) -> Result<Self, ScheduleError> {
        let n = up.n();
        c.check(n, max_len)?;
        let mut x = vec![max_len as i64 - 1; n];
        let mut delta = vec![0u8; n];
        for (pos, &t) in c.tasks().iter().enumerate() {
            x[t] = pos as i64;
            delta[t] = 1;
        }
        let mut gamma = vec![vec![0u8; n.saturating_sub(1)]; n];
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                if delta[i] == 1 && (delta[j] == 0 || x[i] < x[j]) {
                    gamma[i][off_diag(i, j)] = 1;
                }
            }
        }
        let objective = objective(&delta, &gamma, up)?;
        Ok(ScheduleSolution { x, delta, gamma, objective })
    }
}

/// Û(δ, γ; u, p).
pub fn objective(delta: &[u8], gamma: &[Vec<u8>], up: &UtilityPenalty) -> Result<f64, ScheduleError> {
    let n = up.n();
    if delta.len() != n || gamma.len() != n || gamma.iter().any(|r| r.len() != n.saturating_sub(1)) {
        return Err(ScheduleError::Shape(format!("δ needs {n} entries and γ {n} rows of {}", n.saturating_sub(1))));
    }
    let mut total = 0.0;
    for i in 0..n {
        total += up.u[i] * f64::from(delta[i]);
    }
    for i in 0..n {
        for (col, &g) in gamma[i].iter().enumerate() {
            total -= up.p[i][col] * f64::from(g);
        }
    }
    Ok(total)
}

/// First violated constraint found by [`check_feasible`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    Shape(String),
    /// `x_i` outside `[0, L−1]`.
    PositionDomain { i: usize, x: i64 },
    /// δ or γ entry not in {0, 1}.
    IndicatorDomain { what: String, i: usize, j: usize },
    /// `x_i ≥ (L−1)(1−δ_i)`
    ExcludedPosition { i: usize },
    /// `x_i + δ_j ≤ x_j + L γ_ji`
    Ordering { i: usize, j: usize },
    /// `γ_ij + γ_ji ≤ 1`
    Pair { i: usize, j: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape(m) => write!(f, "shape: {m}"),
            Violation::PositionDomain { i, x } => write!(f, "x[{i}] = {x} outside [0, L-1]"),
            Violation::IndicatorDomain { what, i, j } => write!(f, "{what}[{i}][{j}] is not 0 or 1"),
            Violation::ExcludedPosition { i } => write!(f, "x[{i}] >= (L-1)(1-delta[{i}])"),
            Violation::Ordering { i, j } => write!(f, "x[{i}] + delta[{j}] <= x[{j}] + L*gamma[{j}][{i}]"),
            Violation::Pair { i, j } => write!(f, "gamma[{i}][{j}] + gamma[{j}][{i}] <= 1"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Feasible,
    Infeasible(Violation),
}

impl Verdict {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Verdict::Feasible)
    }
}

/// Check every constraint row of the scheduling problem for maximum length `max_len`.
pub fn check_feasible(sol: &ScheduleSolution, max_len: usize) -> Verdict {
    let n = sol.n();
    let l = max_len as i64;
    if sol.delta.len() != n || sol.gamma.len() != n || sol.gamma.iter().any(|r| r.len() != n.saturating_sub(1)) {
        return Verdict::Infeasible(Violation::Shape(format!("x has {n} entries; δ and γ must match")));
    }
    for (i, &x) in sol.x.iter().enumerate() {
        if x < 0 || x > l - 1 {
            return Verdict::Infeasible(Violation::PositionDomain { i, x });
        }
    }
    for (i, &d) in sol.delta.iter().enumerate() {
        if d > 1 {
            return Verdict::Infeasible(Violation::IndicatorDomain { what: "delta".into(), i, j: i });
        }
    }
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            if sol.gamma_at(i, j) > 1 {
                return Verdict::Infeasible(Violation::IndicatorDomain { what: "gamma".into(), i, j });
            }
        }
    }
    for i in 0..n {
        if sol.x[i] < (l - 1) * (1 - i64::from(sol.delta[i])) {
            return Verdict::Infeasible(Violation::ExcludedPosition { i });
        }
    }
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            if sol.x[i] + i64::from(sol.delta[j]) > sol.x[j] + l * i64::from(sol.gamma_at(j, i)) {
                return Verdict::Infeasible(Violation::Ordering { i, j });
            }
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if sol.gamma_at(i, j) + sol.gamma_at(j, i) > 1 {
                return Verdict::Infeasible(Violation::Pair { i, j });
            }
        }
    }
    Verdict::Feasible
}

/// Included tasks ordered by position.
pub fn decode(sol: &ScheduleSolution, max_len: usize) -> Result<Curriculum, ScheduleError> {
    if let Verdict::Infeasible(v) = check_feasible(sol, max_len) {
        return Err(ScheduleError::Infeasible(v));
    }
    let mut included: Vec<(i64, usize)> = (0..sol.n()).filter(|&i| sol.delta[i] == 1).map(|i| (sol.x[i], i)).collect();
    included.sort_unstable();
    Ok(Curriculum(included.into_iter().map(|(_, i)| i).collect()))
}

/// Exact optimum by dynamic programming over subsets of at most `max_len` tasks.
///
/// `best[S]` is the best value of ordering the set `S`, built by choosing the
/// first task: `best[S] = max_i u_i − Σ_{j∈S∖i} p_ij + best[S∖i]`. A selection
/// then pays `Σ_{i∈S, j∉S} p_ij` for the excluded tasks it precedes. Among
/// optimal selections the fewest tasks win, then the lexicographically
/// smallest sequence.
pub fn solve(up: &UtilityPenalty, max_len: usize) -> Result<ScheduleSolution, ScheduleError> {
    up.validate()?;
    let n = up.n();
    if n > MAX_EXACT_TASKS {
        return Err(ScheduleError::Unsupported { n, limit: MAX_EXACT_TASKS });
    }
    if max_len == 0 {
        return Err(ScheduleError::ZeroLength);
    }
    let cap = max_len.min(n);
    let full = 1usize << n;

    // dense copy for the inner loops
    let mut pen = vec![0.0; n * n];
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            pen[i * n + j] = up.penalty(i, j);
        }
    }
    let row_sum: Vec<f64> = (0..n).map(|i| (0..n).map(|j| pen[i * n + j]).sum()).collect();
    let lead = |i: usize, rest: usize, best: &[f64]| -> f64 {
        let mut cost = 0.0;
        let mut bits = rest;
        while bits != 0 {
            let j = bits.trailing_zeros() as usize;
            cost += pen[i * n + j];
            bits &= bits - 1;
        }
        up.u[i] - cost + best[rest]
    };

    let mut best = vec![f64::NAN; full];
    best[0] = 0.0;
    let mut top: Option<(f64, usize)> = None;
    let mut candidates: Vec<usize> = Vec::new();
    for mask in 0..full {
        let size = mask.count_ones() as usize;
        if size > cap {
            continue;
        }
        if mask != 0 {
            let mut value = f64::NEG_INFINITY;
            let mut bits = mask;
            while bits != 0 {
                let i = bits.trailing_zeros() as usize;
                value = value.max(lead(i, mask & !(1 << i), &best));
                bits &= bits - 1;
            }
            best[mask] = value;
        }
        let mut boundary = 0.0;
        let mut bits = mask;
        while bits != 0 {
            let i = bits.trailing_zeros() as usize;
            let mut inside = 0.0;
            let mut b2 = mask;
            while b2 != 0 {
                let j = b2.trailing_zeros() as usize;
                inside += pen[i * n + j];
                b2 &= b2 - 1;
            }
            boundary += row_sum[i] - inside;
            bits &= bits - 1;
        }
        let total = best[mask] - boundary;
        match top {
            Some((v, _)) if total < v => {}
            Some((v, s)) if total == v => {
                if size < s {
                    top = Some((v, size));
                    candidates.clear();
                }
                if size <= top.unwrap().1 {
                    candidates.push(mask);
                }
            }
            _ => {
                top = Some((total, size));
                candidates.clear();
                candidates.push(mask);
            }
        }
    }

    let reconstruct = |mut mask: usize| -> Vec<usize> {
        let mut seq = Vec::with_capacity(mask.count_ones() as usize);
        while mask != 0 {
            let mut bits = mask;
            let chosen = loop {
                let i = bits.trailing_zeros() as usize;
                if lead(i, mask & !(1 << i), &best) == best[mask] {
                    break i;
                }
                bits &= bits - 1;
                assert!(bits != 0, "some task attains the subset optimum");
            };
            seq.push(chosen);
            mask &= !(1 << chosen);
        }
        seq
    };
    let seq = candidates.into_iter().map(reconstruct).min().expect("the empty selection is always a candidate");
    ScheduleSolution::for_curriculum(&Curriculum(seq), up, max_len)
}

/// Optimum by scoring every feasible curriculum (n ≤ 8). Enumeration runs
/// shortest-first and lexicographically, so the first maximum wins ties.
pub fn brute_force_solve(up: &UtilityPenalty, max_len: usize) -> Result<ScheduleSolution, ScheduleError> {
    up.validate()?;
    let n = up.n();
    if n > MAX_BRUTE_FORCE_TASKS {
        return Err(ScheduleError::Unsupported { n, limit: MAX_BRUTE_FORCE_TASKS });
    }
    if max_len == 0 {
        return Err(ScheduleError::ZeroLength);
    }
    let mut best: Option<ScheduleSolution> = None;
    for c in enumerate_feasible(n, max_len) {
        let sol = ScheduleSolution::for_curriculum(&c, up, max_len)?;
        if best.as_ref().is_none_or(|b| sol.objective > b.objective) {
            best = Some(sol);
        }
    }
    Ok(best.expect("the empty curriculum is always feasible"))
}

/// Parameters whose unique optimum (up to tie-break) decodes to `c`.
///
/// Tasks of `c` get utility n+1; `p_ij = 1` when both are in `c` and `i` comes
/// after `j`; every task outside `c` pays 1 for preceding anything.
pub fn encode_curriculum(c: &Curriculum, n: usize, max_len: usize) -> Result<UtilityPenalty, ScheduleError> {
    c.check(n, max_len)?;
    let mut pos = vec![None; n];
    for (k, &t) in c.tasks().iter().enumerate() {
        pos[t] = Some(k);
    }
    let mut up = UtilityPenalty::zeros(n);
    for i in 0..n {
        if pos[i].is_some() {
            up.u[i] = (n + 1) as f64;
        }
        for j in (0..n).filter(|&j| j != i) {
            let v = match (pos[i], pos[j]) {
                (None, _) => 1.0,
                (Some(pi), Some(pj)) if pi > pj => 1.0,
                _ => 0.0,
            };
            up.set_penalty(i, j, v);
        }
    }
    Ok(up)
}

/// A scheduling instance as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleInstance {
    pub max_length: usize,
    pub up: UtilityPenalty,
}

impl ScheduleInstance {
    /// Line-oriented text:
    ///
    /// ```text
    /// n 3
    /// L 2
    /// u 5 5 0
    /// p 10 0
    /// p 1 0
    /// p 0 0
    /// ```
    ///
    /// One `p` line per row, diagonal omitted. `#` starts a comment line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let n = self.up.n();
        writeln!(out, "n {n}").unwrap();
        writeln!(out, "L {}", self.max_length).unwrap();
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        writeln!(out, "u {}", join(&self.up.u)).unwrap();
        for row in &self.up.p {
            writeln!(out, "p {}", join(row)).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ScheduleError> {
        let mut n = None;
        let mut max_length = None;
        let mut u = None;
        let mut p = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let err = |message: String| ScheduleError::Parse { line, message };
            let body = raw.trim();
            if body.is_empty() || body.starts_with('#') {
                continue;
            }
            let (key, rest) = body.split_once(' ').unwrap_or((body, ""));
            let numbers = || {
                rest.split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| err(format!("bad number {t:?}"))))
                    .collect::<Result<Vec<f64>, _>>()
            };
            let count = || rest.trim().parse::<usize>().map_err(|_| err(format!("bad count {rest:?}")));
            match key {
                "n" => n = Some(count()?),
                "L" => max_length = Some(count()?),
                "u" => u = Some(numbers()?),
                "p" => p.push(numbers()?),
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        let missing = |what: &str| ScheduleError::Parse { line: 0, message: format!("missing {what} line") };
        let n = n.ok_or_else(|| missing("n"))?;
        let max_length = max_length.ok_or_else(|| missing("L"))?;
        let u = u.ok_or_else(|| missing("u"))?;
        if u.len() != n {
            return Err(ScheduleError::Shape(format!("u has {} values, n = {n}", u.len())));
        }
        if n == 1 && p.is_empty() {
            p.push(Vec::new());
        }
        Ok(ScheduleInstance { max_length, up: UtilityPenalty::new(u, p)? })
    }
}
