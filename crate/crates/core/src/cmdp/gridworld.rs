//! Procedural gridworld: reach the goal cell in a walled room.
//!
//! Observation: 5×5 egocentric wall view (out of bounds reads as wall),
//! goal offset scaled to [-1, 1], and an 8-dim per-level texture vector that
//! identifies the level without affecting the dynamics.

use std::collections::VecDeque;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::seed::{mix64, Rng};

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;
pub const NOOP: usize = 4;
pub const N_ACTIONS: usize = 5;
pub const TEXTURE_DIM: usize = 8;
const VIEW: i64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub size: usize,
    pub wall_prob: f64,
    pub max_steps: usize,
    pub goal_reward: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { size: 7, wall_prob: 0.2, max_steps: 64, goal_reward: 1.0 }
    }
}

impl GridConfig {
    pub fn obs_dim(&self) -> usize {
        let w = (2 * VIEW + 1) as usize;
        w * w + 2 + TEXTURE_DIM
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.size < 3 {
            return Err("grid size must be at least 3".into());
        }
        if !(0.0..0.6).contains(&self.wall_prob) {
            return Err("wall_prob must lie in [0, 0.6)".into());
        }
        if self.max_steps == 0 {
            return Err("max_steps must be positive".into());
        }
        Ok(())
    }
}

pub type Cell = (usize, usize);

#[derive(Clone, Debug, PartialEq)]
pub struct GridLevel {
    pub size: usize,
    /// Row-major wall flags.
    pub walls: Vec<bool>,
    pub start: Cell,
    pub goal: Cell,
    pub texture_id: u64,
}

impl GridLevel {
    pub fn generate(cfg: &GridConfig, rng: &mut Rng) -> Self {
        let n = cfg.size;
        loop {
            let walls: Vec<bool> = (0..n * n).map(|_| rng.random_bool(cfg.wall_prob)).collect();
            let free: Vec<Cell> = (0..n * n).filter(|&k| !walls[k]).map(|k| (k / n, k % n)).collect();
            if free.len() < 2 {
                continue;
            }
            let start = free[rng.random_range(0..free.len())];
            let goal = free[rng.random_range(0..free.len())];
            if start == goal {
                continue;
            }
            let level = GridLevel { size: n, walls, start, goal, texture_id: rng.random() };
            if level.distance(start, goal).is_some() {
                return level;
            }
        }
    }

    pub fn is_wall(&self, r: i64, c: i64) -> bool {
        let n = self.size as i64;
        if r < 0 || c < 0 || r >= n || c >= n {
            return true;
        }
        self.walls[r as usize * self.size + c as usize]
    }

    /// Shortest-path length by BFS, `None` when unreachable.
    pub fn distance(&self, from: Cell, to: Cell) -> Option<usize> {
        let n = self.size;
        let mut dist = vec![usize::MAX; n * n];
        let mut queue = VecDeque::new();
        dist[from.0 * n + from.1] = 0;
        queue.push_back(from);
        while let Some((r, c)) = queue.pop_front() {
            if (r, c) == to {
                return Some(dist[r * n + c]);
            }
            for a in [UP, DOWN, LEFT, RIGHT] {
                let next = self.move_from((r, c), a);
                let k = next.0 * n + next.1;
                if dist[k] == usize::MAX {
                    dist[k] = dist[r * n + c] + 1;
                    queue.push_back(next);
                }
            }
        }
        None
    }

    pub fn move_from(&self, (r, c): Cell, action: usize) -> Cell {
        let (dr, dc) = match action {
            UP => (-1, 0),
            DOWN => (1, 0),
            LEFT => (0, -1),
            RIGHT => (0, 1),
            _ => (0, 0),
        };
        let (nr, nc) = (r as i64 + dr, c as i64 + dc);
        if self.is_wall(nr, nc) {
            (r, c)
        } else {
            (nr as usize, nc as usize)
        }
    }

    pub fn texture(&self) -> [f64; TEXTURE_DIM] {
        let mut t = [0.0; TEXTURE_DIM];
        for (i, v) in t.iter_mut().enumerate() {
            let h = mix64(self.texture_id ^ (i as u64).wrapping_mul(0x9E37_79B9));
            *v = (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0;
        }
        t
    }

    pub fn payload_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.size as u64).to_le_bytes());
        out.extend(self.walls.iter().map(|&w| w as u8));
        for v in [self.start.0, self.start.1, self.goal.0, self.goal.1] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        out.extend_from_slice(&self.texture_id.to_le_bytes());
        out
    }
}

pub fn observe(level: &GridLevel, pos: Cell) -> Vec<f64> {
    let mut f = Vec::with_capacity(GridConfig::default().obs_dim());
    for dr in -VIEW..=VIEW {
        for dc in -VIEW..=VIEW {
            f.push(if level.is_wall(pos.0 as i64 + dr, pos.1 as i64 + dc) { 1.0 } else { 0.0 });
        }
    }
    let scale = (level.size - 1) as f64;
    f.push((level.goal.0 as f64 - pos.0 as f64) / scale);
    f.push((level.goal.1 as f64 - pos.1 as f64) / scale);
    f.extend_from_slice(&level.texture());
    f
}

/// Returns `(next cell, reward, done)`; `step_index` counts steps already taken.
pub fn transition(cfg: &GridConfig, level: &GridLevel, pos: Cell, step_index: usize, action: usize) -> (Cell, f64, bool) {
    let next = level.move_from(pos, action);
    if next == level.goal {
        return (next, cfg.goal_reward, true);
    }
    (next, 0.0, step_index + 1 >= cfg.max_steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;

    #[test]
    fn generated_levels_are_solvable() {
        let cfg = GridConfig::default();
        let mut rng = rng_from(2);
        for _ in 0..100 {
            let l = GridLevel::generate(&cfg, &mut rng);
            assert!(!l.is_wall(l.start.0 as i64, l.start.1 as i64));
            assert_ne!(l.start, l.goal);
            assert!(l.distance(l.start, l.goal).unwrap() <= cfg.max_steps);
        }
    }

    #[test]
    fn observation_is_level_identifiable() {
        let cfg = GridConfig::default();
        let mut rng = rng_from(3);
        let a = GridLevel::generate(&cfg, &mut rng);
        let b = GridLevel::generate(&cfg, &mut rng);
        let oa = observe(&a, a.start);
        assert_eq!(oa.len(), cfg.obs_dim());
        assert_ne!(&oa[27..], &observe(&b, b.start)[27..]);
        assert!(oa[27..].iter().all(|v| (-1.0..1.0).contains(v)));
    }

    #[test]
    fn walls_block_movement_and_goal_terminates() {
        let cfg = GridConfig::default();
        let mut walls = vec![false; 49];
        walls[7 + 1] = true; // (1, 1)
        let l = GridLevel { size: 7, walls, start: (0, 1), goal: (0, 2), texture_id: 5 };
        assert_eq!(l.move_from((0, 1), DOWN), (0, 1));
        assert_eq!(l.move_from((0, 1), UP), (0, 1));
        assert_eq!(transition(&cfg, &l, (0, 1), 0, RIGHT), ((0, 2), 1.0, true));
        assert_eq!(transition(&cfg, &l, (0, 1), 63, NOOP), ((0, 1), 0.0, true));
        assert_eq!(transition(&cfg, &l, (0, 1), 10, NOOP), ((0, 1), 0.0, false));
    }
}
