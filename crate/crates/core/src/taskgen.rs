//! Random grid-world libraries: small source tasks and a larger final task.

use std::collections::{BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curriculum::TaskLibrary;
use crate::error::{Error, Result};
use crate::gridworld::{Cell, TaskSpec, DEFAULT_DISCOUNT, DEFAULT_MAX_STEPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub sources: usize,
    pub source_size: (usize, usize),
    pub final_size: usize,
    pub max_length: usize,
    /// Hazards per cell, for fires and pits respectively.
    pub fire_density: f64,
    pub pit_density: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            sources: 5,
            source_size: (5, 7),
            final_size: 10,
            max_length: 3,
            fire_density: 0.06,
            pit_density: 0.04,
        }
    }
}

/// One task of the given size with a hazard-free path from start to treasure.
pub fn random_task<R: Rng>(
    id: usize,
    width: usize,
    height: usize,
    fires: usize,
    pits: usize,
    rng: &mut R,
) -> Result<TaskSpec> {
    let cells: Vec<Cell> = (0..height).flat_map(|r| (0..width).map(move |c| Cell::new(r, c))).collect();
    if fires + pits + 2 > cells.len() {
        return Err(Error::Config(format!("{width}x{height} grid cannot hold {fires} fires and {pits} pits")));
    }
    for _ in 0..1000 {
        let mut pick: Vec<Cell> = cells.choose_multiple(rng, fires + pits + 2).copied().collect();
        let start = pick.pop().expect("enough cells");
        let treasure = pick.pop().expect("enough cells");
        let fire_set: BTreeSet<Cell> = pick[..fires].iter().copied().collect();
        let pit_set: BTreeSet<Cell> = pick[fires..].iter().copied().collect();
        let task = TaskSpec {
            id,
            width,
            height,
            start,
            treasure,
            fires: fire_set,
            pits: pit_set,
            max_steps: DEFAULT_MAX_STEPS,
            discount: DEFAULT_DISCOUNT,
        };
        if manhattan(start, treasure) >= (width + height) / 3 && safe_path_exists(&task) {
            task.validate().map_err(crate::gridworld::MapError::from)?;
            return Ok(task);
        }
    }
    Err(Error::Config(format!("could not place a solvable {width}x{height} task")))
}

fn manhattan(a: Cell, b: Cell) -> usize {
    a.row.abs_diff(b.row) + a.col.abs_diff(b.col)
}

/// Breadth-first search avoiding fires and pits.
fn safe_path_exists(task: &TaskSpec) -> bool {
    let mut seen = BTreeSet::from([task.start]);
    let mut queue = VecDeque::from([task.start]);
    while let Some(c) = queue.pop_front() {
        if c == task.treasure {
            return true;
        }
        let (r, k) = (c.row as isize, c.col as isize);
        for (dr, dc) in [(-1, 0), (1, 0), (0, 1), (0, -1)] {
            let (nr, nc) = (r + dr, k + dc);
            if nr < 0 || nc < 0 || nr as usize >= task.height || nc as usize >= task.width {
                continue;
            }
            let next = Cell::new(nr as usize, nc as usize);
            if task.fires.contains(&next) || task.pits.contains(&next) || !seen.insert(next) {
                continue;
            }
            queue.push_back(next);
        }
    }
    false
}

/// Library of `sources` random source tasks (ids 0..) and one final task.
pub fn generate_library(cfg: &GeneratorConfig, seed: u64) -> Result<TaskLibrary> {
    let (lo, hi) = cfg.source_size;
    if lo == 0 || lo > hi || cfg.final_size < 2 {
        return Err(Error::Config("invalid grid sizes for the generator".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hazards = |w: usize, h: usize, density: f64| ((w * h) as f64 * density).round() as usize;
    let mut tasks = Vec::with_capacity(cfg.sources);
    for id in 0..cfg.sources {
        let w = rng.gen_range(lo..=hi);
        let h = rng.gen_range(lo..=hi);
        let fires = hazards(w, h, cfg.fire_density).max(1);
        let pits = hazards(w, h, cfg.pit_density);
        tasks.push(random_task(id, w, h, fires, pits, &mut rng)?);
    }
    let s = cfg.final_size;
    let final_task =
        random_task(cfg.sources, s, s, hazards(s, s, cfg.fire_density), hazards(s, s, cfg.pit_density), &mut rng)?;
    Ok(TaskLibrary::new(tasks, final_task, cfg.max_length)?)
}
