//! Slippery gridworlds with hazard cells.
//!
//! Cells are indexed `y * width + x`. Actions are 0 up, 1 right, 2 down,
//! 3 left; moving off the grid or into a wall leaves the agent in place.
//! With probability `slip` the chosen action is replaced by a uniformly
//! random one. Goals are absorbing and pay their reward on entry.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::mdp::{FiniteMdp, FiniteMdpBuilder};

pub type Cell = (usize, usize);

pub const UP: usize = 0;
pub const RIGHT: usize = 1;
pub const DOWN: usize = 2;
pub const LEFT: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct GridWorldSpec {
    pub width: usize,
    pub height: usize,
    /// Hazard cells and their cost magnitude.
    pub hazards: Vec<(Cell, f64)>,
    /// Absorbing goal cells and the reward paid on entry.
    pub goals: Vec<(Cell, f64)>,
    pub walls: Vec<Cell>,
    /// Start cells, drawn uniformly.
    pub starts: Vec<Cell>,
    pub slip: f64,
    /// Reward paid on every step outside a goal.
    pub step_reward: f64,
    /// Hazards trap the agent: every action self-loops.
    pub hazard_trap: bool,
    pub discount: f64,
    pub horizon: usize,
}

impl Default for GridWorldSpec {
    fn default() -> Self {
        Self {
            width: 5,
            height: 5,
            hazards: Vec::new(),
            goals: Vec::new(),
            walls: Vec::new(),
            starts: vec![(0, 0)],
            slip: 0.0,
            step_reward: 0.0,
            hazard_trap: false,
            discount: 0.99,
            horizon: 100,
        }
    }
}

impl GridWorldSpec {
    pub fn index(&self, (x, y): Cell) -> usize {
        y * self.width + x
    }

    pub fn cell(&self, s: usize) -> Cell {
        (s % self.width, s / self.width)
    }

    pub fn n_states(&self) -> usize {
        self.width * self.height
    }

    pub fn is_wall(&self, c: Cell) -> bool {
        self.walls.contains(&c)
    }

    fn goal_reward(&self, c: Cell) -> Option<f64> {
        self.goals.iter().find(|g| g.0 == c).map(|g| g.1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidModel(m));
        if self.width == 0 || self.height == 0 {
            return bad("grid must be at least 1x1".into());
        }
        if !(0.0..1.0).contains(&self.slip) {
            return bad(format!("slip {} outside [0,1)", self.slip));
        }
        let inside = |c: &Cell| c.0 < self.width && c.1 < self.height;
        let cells = self.hazards.iter().map(|h| &h.0).chain(self.goals.iter().map(|g| &g.0));
        for c in cells.chain(&self.walls).chain(&self.starts) {
            if !inside(c) {
                return bad(format!("cell {c:?} outside the {}x{} grid", self.width, self.height));
            }
        }
        if let Some(h) = self.hazards.iter().find(|h| !(h.1.is_finite() && h.1 >= 0.0)) {
            return bad(format!("hazard {:?} has invalid cost {}", h.0, h.1));
        }
        if self.starts.is_empty() {
            return bad("at least one start cell is required".into());
        }
        for c in self.goals.iter().map(|g| &g.0).chain(&self.starts) {
            if self.is_wall(*c) {
                return bad(format!("cell {c:?} is both a wall and a start or goal"));
            }
        }
        if let Some(g) = self.goals.iter().find(|g| self.hazards.iter().any(|h| h.0 == g.0 && h.1 > 0.0)) {
            return bad(format!("goal {:?} cannot be a hazard", g.0));
        }
        Ok(())
    }

    /// Cell reached by a deterministic move.
    pub fn moved(&self, (x, y): Cell, a: usize) -> Cell {
        let to = match a {
            UP if y > 0 => (x, y - 1),
            RIGHT if x + 1 < self.width => (x + 1, y),
            DOWN if y + 1 < self.height => (x, y + 1),
            LEFT if x > 0 => (x - 1, y),
            _ => (x, y),
        };
        if self.is_wall(to) {
            (x, y)
        } else {
            to
        }
    }

    /// Starts from which no goal can be reached under any action sequence.
    pub fn starts_without_goal(&self) -> Vec<Cell> {
        let mut dead = Vec::new();
        for &start in &self.starts {
            let mut seen = vec![false; self.n_states()];
            let mut queue = VecDeque::from([start]);
            seen[self.index(start)] = true;
            let mut found = false;
            while let Some(c) = queue.pop_front() {
                if self.goal_reward(c).is_some() {
                    found = true;
                    break;
                }
                for a in 0..4 {
                    let n = self.moved(c, a);
                    if !seen[self.index(n)] {
                        seen[self.index(n)] = true;
                        queue.push_back(n);
                    }
                }
            }
            if !found {
                dead.push(start);
            }
        }
        dead
    }
}

/// Compile a grid spec into a finite MDP.
pub fn build_gridworld(spec: &GridWorldSpec) -> Result<FiniteMdp> {
    spec.validate()?;
    let dead = spec.starts_without_goal();
    if !spec.goals.is_empty() && dead.len() == spec.starts.len() {
        log::warn!("no goal is reachable from any start cell");
    }
    let n = spec.n_states();
    let mut b = FiniteMdpBuilder::new(n, 4);
    b.discount(spec.discount).horizon(spec.horizon);
    let mut d0 = vec![0.0; n];
    for &c in &spec.starts {
        d0[spec.index(c)] += 1.0 / spec.starts.len() as f64;
    }
    b.initial(&d0);
    for &(c, h) in &spec.hazards {
        b.cost(spec.index(c), h);
    }
    let eps = spec.slip;
    for s in 0..n {
        let c = spec.cell(s);
        if spec.is_wall(c) || spec.goal_reward(c).is_some() {
            b.absorbing(s);
            continue;
        }
        if spec.hazard_trap && spec.hazards.iter().any(|h| h.0 == c && h.1 > 0.0) {
            for a in 0..4 {
                b.deterministic(s, a, s).reward(s, a, spec.step_reward);
            }
            continue;
        }
        for a in 0..4 {
            let mut row = Vec::with_capacity(4);
            for b_ in 0..4 {
                let p = if b_ == a { 1.0 - eps + eps / 4.0 } else { eps / 4.0 };
                if p > 0.0 {
                    row.push((spec.index(spec.moved(c, b_)), p));
                }
            }
            let r: f64 = row.iter().map(|&(t, p)| p * spec.goal_reward(spec.cell(t)).unwrap_or(0.0)).sum();
            b.transition(s, a, &row).reward(s, a, r + spec.step_reward);
        }
    }
    b.build()
}

/// 5x5 grid split by a wall column. The left room is hazard-free; the right
/// room holds two hazards. Both rooms exit through the goal cut into the wall.
pub fn grid5(slip: f64) -> GridWorldSpec {
    GridWorldSpec {
        width: 5,
        height: 5,
        hazards: vec![((3, 1), 1.0), ((4, 3), 1.0)],
        goals: vec![((2, 4), 1.0)],
        walls: vec![(2, 0), (2, 1), (2, 2), (2, 3)],
        starts: vec![(0, 0), (4, 0)],
        slip,
        ..GridWorldSpec::default()
    }
}

/// 6x6 grid where the short route to the goal crosses a hazard strip and the
/// safe route detours around its open end. One start lies on the strip.
pub fn grid6(slip: f64) -> GridWorldSpec {
    GridWorldSpec {
        width: 6,
        height: 6,
        hazards: vec![((0, 2), 1.0), ((1, 2), 1.0), ((2, 2), 1.0), ((3, 2), 1.0)],
        goals: vec![((0, 5), 1.0)],
        walls: Vec::new(),
        starts: vec![(0, 0), (5, 0), (1, 2)],
        slip,
        ..GridWorldSpec::default()
    }
}

/// 6x6 grid with graded costs. The start cell costs 0.5 and has two exits:
/// one through a single cell of cost 1.0, one along a corridor of four cells
/// of cost 0.5. Both routes reach the goal in ten steps.
pub fn graded(slip: f64) -> GridWorldSpec {
    let mut hazards = vec![((0, 0), 0.5), ((0, 1), 1.0)];
    hazards.extend((1..5).map(|x| ((x, 0), 0.5)));
    GridWorldSpec {
        width: 6,
        height: 6,
        hazards,
        goals: vec![((5, 5), 1.0)],
        walls: (1..5).map(|x| (x, 1)).collect(),
        starts: vec![(0, 0)],
        slip,
        ..GridWorldSpec::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_cell_chain() {
        let spec = GridWorldSpec { width: 2, height: 1, ..GridWorldSpec::default() };
        let mdp = build_gridworld(&spec).unwrap();
        assert!(mdp.is_deterministic());
        assert_eq!(mdp.successors(0, RIGHT), &[(1, 1.0)]);
        assert_eq!(mdp.successors(1, LEFT), &[(0, 1.0)]);
        assert_eq!(mdp.successors(0, UP), &[(0, 1.0)]);
    }

    #[test]
    fn zero_cost_hazard_is_not_a_violation() {
        let spec = GridWorldSpec { hazards: vec![((1, 1), 0.0)], ..GridWorldSpec::default() };
        let mdp = build_gridworld(&spec).unwrap();
        assert!(!mdp.violation().is_violating(spec.index((1, 1))));
    }

    #[test]
    fn rejects_bad_specs() {
        let mut spec = grid5(0.1);
        spec.slip = 1.0;
        assert!(build_gridworld(&spec).is_err());
        let mut spec = grid5(0.1);
        spec.starts.push((2, 0));
        assert!(build_gridworld(&spec).is_err());
    }

    #[test]
    fn presets_build() {
        for spec in [grid5(0.1), grid6(0.0), graded(0.05)] {
            let mdp = build_gridworld(&spec).unwrap();
            assert!(spec.starts_without_goal().is_empty());
            assert_eq!(mdp.n_states(), spec.n_states());
        }
        let g = build_gridworld(&graded(0.0)).unwrap();
        assert_eq!(g.h_delta(), Some(0.5));
    }
}
