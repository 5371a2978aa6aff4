//! Curricula, the task library they index into, and the feasible set.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::TaskSpec;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CurriculumError {
    #[error("task {task} appears more than once in the curriculum")]
    Repeated { task: usize },
    #[error("curriculum has {len} tasks, the maximum length is {max}")]
    TooLong { len: usize, max: usize },
    #[error("task index {task} is out of range for {n} source tasks")]
    UnknownTask { task: usize, n: usize },
    #[error("curriculum literal {0:?} is not a JSON array of task indices")]
    Literal(String),
    #[error("curriculum {0} is missing from the ranked results")]
    NotRanked(Curriculum),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LibraryError {
    #[error("task library needs at least one source task")]
    NoTasks,
    #[error("max length {max_length} must lie in 1..={n}")]
    BadLength { max_length: usize, n: usize },
    #[error("task id {0} is used twice")]
    DuplicateId(usize),
}

/// Ordered, repetition-free sequence of source-task indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct Curriculum(pub Vec<usize>);

impl Curriculum {
    pub fn empty() -> Self {
        Curriculum(Vec::new())
    }

    /// Build and check against `n` tasks and maximum length `max_len`.
    pub fn new(seq: Vec<usize>, n: usize, max_len: usize) -> Result<Self, CurriculumError> {
        let c = Curriculum(seq);
        c.check(n, max_len)?;
        Ok(c)
    }

    pub fn check(&self, n: usize, max_len: usize) -> Result<(), CurriculumError> {
        if self.0.len() > max_len {
            return Err(CurriculumError::TooLong { len: self.0.len(), max: max_len });
        }
        let mut seen = HashSet::new();
        for &task in &self.0 {
            if task >= n {
                return Err(CurriculumError::UnknownTask { task, n });
            }
            if !seen.insert(task) {
                return Err(CurriculumError::Repeated { task });
            }
        }
        Ok(())
    }

    pub fn tasks(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Curriculum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (k, t) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{t}")?;
        }
        write!(f, "]")
    }
}

/// Parses `[i,j,...]` literals. Feasibility is checked separately.
impl FromStr for Curriculum {
    type Err = CurriculumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_str::<Vec<usize>>(s.trim()).map(Curriculum).map_err(|_| CurriculumError::Literal(s.to_string()))
    }
}

/// Source tasks, the final task, and the maximum curriculum length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskLibrary {
    pub tasks: Vec<TaskSpec>,
    pub final_task: TaskSpec,
    pub max_length: usize,
}

impl TaskLibrary {
    pub fn new(tasks: Vec<TaskSpec>, final_task: TaskSpec, max_length: usize) -> Result<Self, LibraryError> {
        let lib = TaskLibrary { tasks, final_task, max_length };
        lib.validate()?;
        Ok(lib)
    }

    pub fn validate(&self) -> Result<(), LibraryError> {
        let n = self.tasks.len();
        if n == 0 {
            return Err(LibraryError::NoTasks);
        }
        if self.max_length == 0 || self.max_length > n {
            return Err(LibraryError::BadLength { max_length: self.max_length, n });
        }
        let mut ids = HashSet::new();
        for t in &self.tasks {
            if !ids.insert(t.id) {
                return Err(LibraryError::DuplicateId(t.id));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.tasks.len()
    }

    pub fn check(&self, c: &Curriculum) -> Result<(), CurriculumError> {
        c.check(self.n(), self.max_length)
    }
}

/// |C| = Σ_{l=0}^{L} n! / (n-l)!
pub fn feasible_count(n: usize, max_len: usize) -> u128 {
    let mut total: u128 = 0;
    let mut perms: u128 = 1;
    for l in 0..=max_len.min(n) {
        if l > 0 {
            perms *= (n - l + 1) as u128;
        }
        total += perms;
    }
    total
}

/// Every feasible curriculum, shortest first, lexicographic within a length.
pub fn enumerate_feasible(n: usize, max_len: usize) -> FeasibleIter {
    FeasibleIter { n, max_len: max_len.min(n), current: None }
}

pub struct FeasibleIter {
    n: usize,
    max_len: usize,
    current: Option<Vec<usize>>,
}

impl FeasibleIter {
    /// Smallest k-permutation greater than `seq`, if any.
    fn advance(n: usize, seq: &mut Vec<usize>) -> bool {
        let k = seq.len();
        let mut used = vec![false; n];
        for &t in seq.iter() {
            used[t] = true;
        }
        for i in (0..k).rev() {
            used[seq[i]] = false;
            if let Some(next) = (seq[i] + 1..n).find(|&v| !used[v]) {
                seq[i] = next;
                used[next] = true;
                let mut fill = (0..n).filter(|&v| !used[v]);
                for slot in seq.iter_mut().skip(i + 1) {
                    *slot = fill.next().expect("k <= n leaves enough unused tasks");
                }
                return true;
            }
        }
        false
    }
}

impl Iterator for FeasibleIter {
    type Item = Curriculum;

    fn next(&mut self) -> Option<Curriculum> {
        let next = match self.current.take() {
            None => Vec::new(),
            Some(mut seq) => {
                if Self::advance(self.n, &mut seq) {
                    seq
                } else if seq.len() < self.max_len {
                    (0..seq.len() + 1).collect()
                } else {
                    return None;
                }
            }
        };
        self.current = Some(next.clone());
        Some(Curriculum(next))
    }
}

/// 1-based rank of `target` by ascending regret; ties share the lowest rank.
pub fn rank_curriculum(target: &Curriculum, all: &[(Curriculum, f64)]) -> Result<usize, CurriculumError> {
    let regret = all
        .iter()
        .find(|(c, _)| c == target)
        .map(|(_, r)| *r)
        .ok_or_else(|| CurriculumError::NotRanked(target.clone()))?;
    Ok(1 + all.iter().filter(|(_, r)| *r < regret).count())
}

/// Rank of a regret value that may not belong to any curriculum in `all`.
pub fn rank_of_regret(regret: f64, all: &[(Curriculum, f64)]) -> usize {
    1 + all.iter().filter(|(_, r)| *r < regret).count()
}
