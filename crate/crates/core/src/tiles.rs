//! Hashed tile coding over task-relative geometry.
//!
//! Every (state, action) pair activates exactly `num_tilings` distinct indices
//! into a table of `feature_table_size` weights. Inputs are relative only: the
//! offset to the treasure and the layout of fires and pits near the agent. No
//! absolute coordinate or task id reaches the hash, so a weight vector learned
//! on one task is meaningful on every other.
//!
//! Tilings cycle through three roles (`t % 4`):
//! - 0, 1: treasure offset, tiled with per-tiling displacement;
//! - 2: nearest fire and nearest pit offsets within `hazard_radius`;
//! - 3: the full fire/pit pattern of the radius diamond.
//!
//! All roles are conjoined with the action.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::{digest_json, hash_words};
use crate::gridworld::{ActionDir, Cell, GridState, TaskSpec};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct TileCodingConfig {
    pub num_tilings: usize,
    /// Tiles across the clipped offset range, per treasure-offset axis (row, col).
    pub tiles_per_dim: Vec<usize>,
    pub hazard_radius: usize,
    pub feature_table_size: usize,
    pub hashing_seed: u64,
    /// Treasure offsets are clipped to `[-max_offset, max_offset]`.
    pub max_offset: usize,
}

impl Default for TileCodingConfig {
    fn default() -> Self {
        TileCodingConfig {
            num_tilings: 8,
            tiles_per_dim: vec![16, 16],
            hazard_radius: 2,
            feature_table_size: 1 << 14,
            hashing_seed: 0x5EED,
            max_offset: 16,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TileConfigError {
    #[error("num_tilings must be at least 1")]
    NoTilings,
    #[error("feature_table_size {size} is smaller than num_tilings {tilings}")]
    TableTooSmall { size: usize, tilings: usize },
    #[error("tiles_per_dim needs two positive entries (row, col), got {0:?}")]
    BadTiles(Vec<usize>),
}

impl TileCodingConfig {
    pub fn validate(&self) -> Result<(), TileConfigError> {
        if self.num_tilings == 0 {
            return Err(TileConfigError::NoTilings);
        }
        if self.feature_table_size < self.num_tilings {
            return Err(TileConfigError::TableTooSmall { size: self.feature_table_size, tilings: self.num_tilings });
        }
        if self.tiles_per_dim.len() != 2 || self.tiles_per_dim.contains(&0) {
            return Err(TileConfigError::BadTiles(self.tiles_per_dim.clone()));
        }
        Ok(())
    }

    /// Digest stored in serialized weight headers.
    pub fn digest(&self) -> String {
        digest_json(self)
    }

    fn treasure_tilings(&self) -> usize {
        (0..self.num_tilings).filter(|t| t % 4 < 2).count()
    }
}

/// Active feature indices for one (state, action) pair: distinct, in tiling order.
pub fn featurize(cfg: &TileCodingConfig, task: &TaskSpec, s: GridState, a: ActionDir) -> Vec<usize> {
    let mut out = Vec::with_capacity(cfg.num_tilings);
    featurize_into(cfg, task, s.position, a, &mut out);
    out
}

fn featurize_into(cfg: &TileCodingConfig, task: &TaskSpec, pos: Cell, a: ActionDir, out: &mut Vec<usize>) {
    let action = a.index() as i64;
    let range = cfg.max_offset as i64;
    let dr = (task.treasure.row as i64 - pos.row as i64).clamp(-range, range) + range;
    let dc = (task.treasure.col as i64 - pos.col as i64).clamp(-range, range) + range;
    let span = (2 * range + 1) as f64;
    let treasure_tilings = cfg.treasure_tilings() as f64;
    let mut treasure_k = 0usize;

    let (fire, pit) = nearest_hazards(task, pos, cfg.hazard_radius);
    let pattern = hazard_pattern(task, pos, cfg.hazard_radius);

    for t in 0..cfg.num_tilings {
        let tiling = t as i64;
        let h = match t % 4 {
            0 | 1 => {
                let width_r = span / cfg.tiles_per_dim[0] as f64;
                let width_c = span / cfg.tiles_per_dim[1] as f64;
                let shift = treasure_k as f64 / treasure_tilings;
                treasure_k += 1;
                let tr = ((dr as f64 + shift * width_r) / width_r).floor() as i64;
                let tc = ((dc as f64 + shift * width_c) / width_c).floor() as i64;
                hash_words(cfg.hashing_seed, &[tiling, action, tr, tc])
            }
            2 => hash_words(cfg.hashing_seed, &[tiling, action, fire.0, fire.1, pit.0, pit.1]),
            _ => hash_words(cfg.hashing_seed, &[tiling, action, pattern]),
        };
        let mut idx = (h % cfg.feature_table_size as u64) as usize;
        // linear probing keeps the set distinct when two tilings collide
        while out.contains(&idx) {
            idx = (idx + 1) % cfg.feature_table_size;
        }
        out.push(idx);
    }
}

const NO_HAZARD: (i64, i64) = (i64::MIN, i64::MIN);

/// Offsets to the nearest fire and nearest pit within `radius` (Manhattan),
/// ties broken by scan order.
fn nearest_hazards(task: &TaskSpec, pos: Cell, radius: usize) -> ((i64, i64), (i64, i64)) {
    let mut fire = (usize::MAX, NO_HAZARD);
    let mut pit = (usize::MAX, NO_HAZARD);
    for (dr, dc, cell) in diamond(task, pos, radius) {
        let dist = (dr.unsigned_abs() + dc.unsigned_abs()) as usize;
        if task.fires.contains(&cell) && dist < fire.0 {
            fire = (dist, (dr, dc));
        }
        if task.pits.contains(&cell) && dist < pit.0 {
            pit = (dist, (dr, dc));
        }
    }
    (fire.1, pit.1)
}

/// Base-3 code of the diamond around `pos`: 0 free or off-grid, 1 fire, 2 pit.
fn hazard_pattern(task: &TaskSpec, pos: Cell, radius: usize) -> i64 {
    let mut code: i64 = 0;
    let mut slot = 0;
    let r = radius as i64;
    for dr in -r..=r {
        for dc in -r..=r {
            if dr.abs() + dc.abs() > r || (dr == 0 && dc == 0) {
                continue;
            }
            let digit = offset_cell(task, pos, dr, dc).map_or(0, |c| {
                if task.fires.contains(&c) {
                    1
                } else if task.pits.contains(&c) {
                    2
                } else {
                    0
                }
            });
            code = code.wrapping_mul(3).wrapping_add(digit);
            slot += 1;
        }
    }
    code.wrapping_mul(64).wrapping_add(slot)
}

fn offset_cell(task: &TaskSpec, pos: Cell, dr: i64, dc: i64) -> Option<Cell> {
    let row = pos.row as i64 + dr;
    let col = pos.col as i64 + dc;
    (row >= 0 && col >= 0 && (row as usize) < task.height && (col as usize) < task.width)
        .then(|| Cell::new(row as usize, col as usize))
}

fn diamond(task: &TaskSpec, pos: Cell, radius: usize) -> impl Iterator<Item = (i64, i64, Cell)> + '_ {
    let r = radius as i64;
    (-r..=r)
        .flat_map(move |dr| (-r..=r).map(move |dc| (dr, dc)))
        .filter(move |&(dr, dc)| dr.abs() + dc.abs() <= r && (dr, dc) != (0, 0))
        .filter_map(move |(dr, dc)| offset_cell(task, pos, dr, dc).map(|c| (dr, dc, c)))
}

/// Precomputed features for every (cell, action) of one task.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    width: usize,
    tilings: usize,
    indices: Vec<usize>,
}

impl FeatureTable {
    pub fn build(cfg: &TileCodingConfig, task: &TaskSpec) -> Self {
        let mut indices = Vec::with_capacity(task.width * task.height * 4 * cfg.num_tilings);
        let mut buf = Vec::with_capacity(cfg.num_tilings);
        for cell in task.cells() {
            for a in ActionDir::ALL {
                buf.clear();
                featurize_into(cfg, task, cell, a, &mut buf);
                indices.extend_from_slice(&buf);
            }
        }
        FeatureTable { width: task.width, tilings: cfg.num_tilings, indices }
    }

    pub fn get(&self, s: GridState, a: ActionDir) -> &[usize] {
        let base = ((s.position.row * self.width + s.position.col) * 4 + a.index()) * self.tilings;
        &self.indices[base..base + self.tilings]
    }
}
