//! Two planar drones that must pass a one-wide gap in a wall.
//!
//! Drones move on a lattice of spacing `step`, one lattice move per step each
//! (stay, ±x, ±y), giving 25 joint actions. A move whose center would end
//! strictly inside the wall or outside the world is projected back: the drone
//! stays on its cell. Cost channels:
//!
//! * wall: some drone's disk touches or overlaps the wall or the world edge;
//! * proximity: the drones are closer than `min_separation`;
//! * separation (soft): the drones are farther apart than `max_separation`.
//!
//! Progress is measured either in straight-line distance or along the
//! shortest lattice route to each goal, which runs through the gap.

use rand::Rng;

use crate::error::{Error, Result};
use crate::features::{Featurizer, TileCoder};
use crate::learner::MultiCostEnvironment;
use crate::mdp::{Environment, Outcome};
use crate::rng::StreamRng;

const CONTACT_TOL: f64 = 1e-9;
const MOVES: [(i64, i64); 5] = [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)];

/// How the progress reward measures distance to the goals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Progress {
    Euclidean,
    /// Shortest 4-connected lattice path avoiding the wall interior.
    Route,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DroneTunnelSpec {
    pub world: (f64, f64),
    /// Wall spans `wall_x` horizontally except for the gap `gap_y`.
    pub wall_x: (f64, f64),
    pub gap_y: (f64, f64),
    pub radius: f64,
    pub step: f64,
    pub starts: [(f64, f64); 2],
    pub goals: [(f64, f64); 2],
    /// Shared start offset drawn uniformly from `{-jitter..=jitter}` lattice cells per axis.
    pub jitter: i64,
    pub min_separation: f64,
    pub max_separation: f64,
    pub progress: Progress,
    /// Give each drone its own action distribution instead of one over joint moves.
    pub factored_policy: bool,
    pub progress_coef: f64,
    pub time_penalty: f64,
    /// Probability that a drone's move is replaced by a uniformly random one.
    pub slip: f64,
    pub discount: f64,
    pub horizon: usize,
}

impl Default for DroneTunnelSpec {
    fn default() -> Self {
        Self {
            world: (3.2, 2.4),
            wall_x: (1.4, 1.8),
            gap_y: (0.9, 1.5),
            radius: 0.1,
            step: 0.2,
            starts: [(0.6, 0.8), (0.6, 1.6)],
            goals: [(2.6, 0.8), (2.6, 1.6)],
            jitter: 1,
            min_separation: 0.5,
            max_separation: 0.8,
            progress: Progress::Route,
            factored_policy: true,
            progress_coef: 1.0,
            time_penalty: 0.01,
            slip: 0.0,
            discount: 0.99,
            horizon: 40,
        }
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Distance from a point to an axis-aligned rectangle (zero inside).
fn rect_dist(p: (f64, f64), x: (f64, f64), y: (f64, f64)) -> f64 {
    let dx = (x.0 - p.0).max(p.0 - x.1).max(0.0);
    let dy = (y.0 - p.1).max(p.1 - y.1).max(0.0);
    dx.hypot(dy)
}

impl DroneTunnelSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.step > 0.0
            && self.radius >= 0.0
            && self.min_separation < self.max_separation
            && (0.0..1.0).contains(&self.slip)
            && self.discount > 0.0
            && self.discount < 1.0
            && self.horizon > 0
            && self.jitter >= 0
            && self.world.0 > 0.0
            && self.world.1 > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidModel("invalid drone tunnel parameters".into()))
        }
    }

    fn wall_rects(&self) -> [((f64, f64), (f64, f64)); 2] {
        [(self.wall_x, (0.0, self.gap_y.0)), (self.wall_x, (self.gap_y.1, self.world.1))]
    }

    /// Clearance of one drone's disk to the wall and the world edge.
    pub fn clearance(&self, p: (f64, f64)) -> f64 {
        let edge = p.0.min(self.world.0 - p.0).min(p.1).min(self.world.1 - p.1);
        let wall = self.wall_rects().iter().map(|&(x, y)| rect_dist(p, x, y)).fold(f64::INFINITY, f64::min);
        edge.min(wall) - self.radius
    }

    fn blocked(&self, p: (f64, f64)) -> bool {
        let outside = p.0 < -CONTACT_TOL
            || p.1 < -CONTACT_TOL
            || p.0 > self.world.0 + CONTACT_TOL
            || p.1 > self.world.1 + CONTACT_TOL;
        let inside_wall = self.wall_rects().iter().any(|&(x, y)| {
            p.0 > x.0 + CONTACT_TOL && p.0 < x.1 - CONTACT_TOL && p.1 > y.0 + CONTACT_TOL && p.1 < y.1 - CONTACT_TOL
        });
        outside || inside_wall
    }

    fn snap(&self, v: f64) -> f64 {
        (v / self.step).round() * self.step
    }

    fn positions(state: &[f64]) -> [(f64, f64); 2] {
        [(state[0], state[1]), (state[2], state[3])]
    }

    pub fn separation(state: &[f64]) -> f64 {
        let [a, b] = Self::positions(state);
        dist(a, b)
    }

    pub fn channels(&self, state: &[f64]) -> [f64; 3] {
        let [a, b] = Self::positions(state);
        let wall = self.clearance(a).min(self.clearance(b)) <= CONTACT_TOL;
        let d = dist(a, b);
        [
            f64::from(u8::from(wall)),
            f64::from(u8::from(d < self.min_separation - CONTACT_TOL)),
            f64::from(u8::from(d > self.max_separation + CONTACT_TOL)),
        ]
    }

    fn lattice_dims(&self) -> (usize, usize) {
        ((self.world.0 / self.step).round() as usize + 1, (self.world.1 / self.step).round() as usize + 1)
    }

    /// Breadth-first lattice distances (in world units) from every cell to `goal`.
    fn route_table(&self, goal: (f64, f64)) -> Vec<f64> {
        let (nx, ny) = self.lattice_dims();
        let cell = |i: usize, j: usize| (i as f64 * self.step, j as f64 * self.step);
        let mut dist = vec![f64::INFINITY; nx * ny];
        let gi = ((goal.0 / self.step).round() as usize).min(nx - 1);
        let gj = ((goal.1 / self.step).round() as usize).min(ny - 1);
        let mut queue = std::collections::VecDeque::from([(gi, gj)]);
        dist[gj * nx + gi] = 0.0;
        while let Some((i, j)) = queue.pop_front() {
            let d = dist[j * nx + i];
            for (di, dj) in MOVES[1..].iter() {
                let (ni, nj) = (i as i64 + di, j as i64 + dj);
                if ni < 0 || nj < 0 || ni >= nx as i64 || nj >= ny as i64 {
                    continue;
                }
                let (ni, nj) = (ni as usize, nj as usize);
                if dist[nj * nx + ni].is_finite() || self.blocked(cell(ni, nj)) {
                    continue;
                }
                dist[nj * nx + ni] = d + self.step;
                queue.push_back((ni, nj));
            }
        }
        dist
    }
}

/// A validated tunnel with its goal-distance tables precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct DroneTunnel {
    spec: DroneTunnelSpec,
    routes: [Vec<f64>; 2],
}

impl DroneTunnel {
    pub fn new(spec: DroneTunnelSpec) -> Result<Self> {
        spec.validate()?;
        let j = spec.step * spec.jitter as f64;
        let starts = spec.starts.iter().flat_map(|p| [(p.0 - j, p.1 - j), (p.0 + j, p.1 + j)]);
        for p in starts.chain(spec.goals) {
            if spec.blocked(p) {
                return Err(Error::InvalidModel(format!("start or goal {p:?} lies outside the free space")));
            }
        }
        let routes = [spec.route_table(spec.goals[0]), spec.route_table(spec.goals[1])];
        let (nx, _) = spec.lattice_dims();
        for (g, r) in spec.goals.iter().zip(&routes) {
            for s in &spec.starts {
                let i = (s.1 / spec.step).round() as usize * nx + (s.0 / spec.step).round() as usize;
                if !r[i].is_finite() {
                    return Err(Error::InvalidModel(format!("goal {g:?} unreachable from start {s:?}")));
                }
            }
        }
        Ok(Self { spec, routes })
    }

    pub fn spec(&self) -> &DroneTunnelSpec {
        &self.spec
    }

    pub fn clearance(&self, p: (f64, f64)) -> f64 {
        self.spec.clearance(p)
    }

    pub fn separation(state: &[f64]) -> f64 {
        DroneTunnelSpec::separation(state)
    }

    pub fn channels(&self, state: &[f64]) -> [f64; 3] {
        self.spec.channels(state)
    }

    fn goal_distance(&self, state: &[f64]) -> f64 {
        let s = &self.spec;
        let [a, b] = DroneTunnelSpec::positions(state);
        match s.progress {
            Progress::Euclidean => dist(a, s.goals[0]) + dist(b, s.goals[1]),
            Progress::Route => {
                let (nx, _) = s.lattice_dims();
                let at = |p: (f64, f64), r: &[f64]| {
                    let i = (p.1 / s.step).round() as usize * nx + (p.0 / s.step).round() as usize;
                    r[i]
                };
                at(a, &self.routes[0]) + at(b, &self.routes[1])
            }
        }
    }

    pub fn at_goals(&self, state: &[f64]) -> bool {
        self.goal_distance(state) < 1e-6
    }

    /// Joint action index of per-drone moves.
    pub fn joint_action(a: usize, b: usize) -> usize {
        a * MOVES.len() + b
    }

    /// Step with per-drone moves already resolved.
    pub fn apply(&self, state: &[f64], moves: [usize; 2]) -> Result<(Vec<f64>, f64)> {
        if state.len() != 4 || state.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("drone state {state:?}")));
        }
        let mut next = state.to_vec();
        for (i, &m) in moves.iter().enumerate() {
            let (dx, dy) = MOVES[m];
            let p = (
                self.spec.snap(state[2 * i] + dx as f64 * self.spec.step),
                self.spec.snap(state[2 * i + 1] + dy as f64 * self.spec.step),
            );
            if !self.spec.blocked(p) {
                next[2 * i] = p.0;
                next[2 * i + 1] = p.1;
            }
        }
        let reward = self.spec.progress_coef * (self.goal_distance(state) - self.goal_distance(&next)) - self.spec.time_penalty;
        Ok((next, reward))
    }
}

impl Environment for DroneTunnel {
    type State = Vec<f64>;

    fn n_actions(&self) -> usize {
        MOVES.len() * MOVES.len()
    }

    fn discount(&self) -> f64 {
        self.spec.discount
    }

    fn horizon(&self) -> usize {
        self.spec.horizon
    }

    fn reset(&self, rng: &mut StreamRng) -> Vec<f64> {
        let (jx, jy) = if self.spec.jitter > 0 {
            (rng.random_range(-self.spec.jitter..=self.spec.jitter), rng.random_range(-self.spec.jitter..=self.spec.jitter))
        } else {
            (0, 0)
        };
        let (ox, oy) = (jx as f64 * self.spec.step, jy as f64 * self.spec.step);
        self.spec.starts
            .iter()
            .flat_map(|&(x, y)| [self.spec.snap(x + ox), self.spec.snap(y + oy)])
            .collect()
    }

    fn cost(&self, state: &Vec<f64>) -> f64 {
        self.channels(state).iter().sum()
    }

    fn step(&self, state: &Vec<f64>, action: usize, rng: &mut StreamRng) -> Result<Outcome<Vec<f64>>> {
        if action >= self.n_actions() {
            return Err(Error::InvalidAction { state: 0, action, n_actions: self.n_actions() });
        }
        let mut moves = [action / MOVES.len(), action % MOVES.len()];
        if self.spec.slip > 0.0 {
            for m in &mut moves {
                if rng.random::<f64>() < self.spec.slip {
                    *m = rng.random_range(0..MOVES.len());
                }
            }
        }
        let (next, reward) = self.apply(state, moves)?;
        let done = self.at_goals(&next);
        Ok(Outcome { next_state: next, reward, done })
    }
}

impl MultiCostEnvironment for DroneTunnel {
    fn channel_costs(&self, state: &Vec<f64>) -> [f64; 3] {
        self.channels(state)
    }

    fn action_factors(&self) -> Vec<usize> {
        if self.spec.factored_policy {
            vec![MOVES.len(); 2]
        } else {
            vec![MOVES.len() * MOVES.len()]
        }
    }
}

/// Tile codings of each drone's position, their offset, and the joint state.
#[derive(Debug, Clone)]
pub struct DroneFeatures {
    parts: Vec<(TileCoder, usize)>,
}

impl DroneFeatures {
    pub fn new(env: &DroneTunnel, bins: usize, joint_bins: usize, n_tilings: usize) -> Self {
        let (w, h) = env.spec().world;
        // Half a lattice step of padding keeps lattice points off tile edges.
        let m = env.spec().step / 2.0;
        let single = TileCoder::new(&[-m, -m], &[w + m, h + m], bins, n_tilings);
        let rel = TileCoder::new(&[-w - m, -h - m], &[w + m, h + m], 2 * bins + 1, n_tilings);
        let mut parts = vec![(single.clone(), 0), (single, 1), (rel, 2)];
        if joint_bins > 0 {
            parts.push((TileCoder::new(&[-m; 4], &[w + m, h + m, w + m, h + m], joint_bins, n_tilings), 3));
        }
        Self { parts }
    }

    /// One tile per lattice point for each drone and per lattice offset, so
    /// each drone's position is represented exactly.
    pub fn lattice(env: &DroneTunnel, joint_bins: usize) -> Self {
        let (nx, ny) = env.spec().lattice_dims();
        Self::new(env, nx.max(ny), joint_bins, 1)
    }

    fn project(kind: usize, s: &[f64], buf: &mut [f64; 4]) -> usize {
        match kind {
            0 => {
                buf[..2].copy_from_slice(&s[..2]);
                2
            }
            1 => {
                buf[..2].copy_from_slice(&s[2..4]);
                2
            }
            2 => {
                buf[0] = s[2] - s[0];
                buf[1] = s[3] - s[1];
                2
            }
            _ => {
                buf.copy_from_slice(&s[..4]);
                4
            }
        }
    }
}

impl Featurizer<Vec<f64>> for DroneFeatures {
    fn n_features(&self) -> usize {
        self.parts.iter().map(|(t, _)| Featurizer::<[f64]>::n_features(t)).sum()
    }

    fn n_active(&self) -> usize {
        self.parts.iter().map(|(t, _)| Featurizer::<[f64]>::n_active(t)).sum()
    }

    fn active(&self, state: &Vec<f64>, out: &mut Vec<usize>) {
        out.clear();
        let mut offset = 0;
        let mut buf = [0.0; 4];
        let mut part = Vec::new();
        for (tc, kind) in &self.parts {
            let d = Self::project(*kind, state, &mut buf);
            Featurizer::<[f64]>::active(tc, &buf[..d], &mut part);
            out.extend(part.iter().map(|f| f + offset));
            offset += Featurizer::<[f64]>::n_features(tc);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> DroneTunnel {
        DroneTunnel::new(DroneTunnelSpec::default()).unwrap()
    }

    #[test]
    fn channels_match_definitions() {
        let env = env();
        assert_eq!(env.channels(&[0.6, 0.6, 0.6, 1.2]), [0.0, 0.0, 0.0]);
        assert_eq!(env.channels(&[0.6, 0.6, 0.6, 1.0]), [0.0, 1.0, 0.0]);
        assert_eq!(env.channels(&[0.6, 0.6, 0.6, 1.6]), [0.0, 0.0, 1.0]);
        // Touching the wall face, the gap edge and the world edge.
        assert_eq!(env.channels(&[1.4, 0.4, 0.6, 1.0])[0], 1.0);
        assert_eq!(env.channels(&[1.6, 1.0, 1.0, 1.2])[0], 1.0);
        assert_eq!(env.channels(&[0.0, 1.2, 0.6, 1.2])[0], 1.0);
        assert_eq!(env.channels(&[1.6, 1.2, 1.0, 1.2])[0], 0.0);
    }

    #[test]
    fn wall_blocks_and_gap_passes() {
        let env = env();
        let (next, _) = env.apply(&[1.4, 0.4, 0.6, 2.0], [1, 0]).unwrap();
        assert_eq!(&next[..2], &[1.4, 0.4]);
        let (next, _) = env.apply(&[1.4, 1.2, 0.6, 2.0], [1, 0]).unwrap();
        assert!((next[0] - 1.6).abs() < 1e-12 && (next[1] - 1.2).abs() < 1e-12);
        let (next, _) = env.apply(&[0.0, 1.0, 0.6, 2.0], [2, 0]).unwrap();
        assert_eq!(next[0], 0.0);
    }

    #[test]
    fn route_distance_detours_through_the_gap() {
        // Drone 0 must climb to the gap's edge row and come back down: 0.2 + 2.0 + 0.2.
        let s = [0.6, 0.8, 2.6, 1.6];
        assert!((env().goal_distance(&s) - 2.4).abs() < 1e-9);
        let euclid = DroneTunnel::new(DroneTunnelSpec { progress: Progress::Euclidean, ..DroneTunnelSpec::default() });
        assert!((euclid.unwrap().goal_distance(&s) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn goals_inside_walls_are_rejected() {
        let spec = DroneTunnelSpec { goals: [(1.6, 0.4), (2.6, 1.6)], ..DroneTunnelSpec::default() };
        assert!(DroneTunnel::new(spec).is_err());
        let spec = DroneTunnelSpec { starts: [(0.6, 0.8), (9.0, 1.6)], ..DroneTunnelSpec::default() };
        assert!(DroneTunnel::new(spec).is_err());
    }

    #[test]
    fn reset_keeps_separation() {
        let env = env();
        for e in 0..20 {
            let mut rng = crate::rng::stream(1, 2, e);
            let s = env.reset(&mut rng);
            assert!((DroneTunnel::separation(&s) - 0.8).abs() < 1e-9);
            assert_eq!(env.channels(&s), [0.0; 3]);
        }
    }

    #[test]
    fn features_are_in_range() {
        let env = env();
        for f in [DroneFeatures::new(&env, 12, 4, 2), DroneFeatures::lattice(&env, 0)] {
            let mut out = Vec::new();
            f.active(&vec![0.6, 1.6, 2.6, 0.8], &mut out);
            assert_eq!(out.len(), f.n_active());
            assert!(out.iter().all(|&i| i < f.n_features()));
        }
    }

    #[test]
    fn lattice_features_separate_cells() {
        let env = env();
        let f = DroneFeatures::lattice(&env, 0);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        f.active(&vec![0.6, 1.6, 2.6, 0.8], &mut a);
        f.active(&vec![0.8, 1.6, 2.6, 0.8], &mut b);
        assert_ne!(a[0], b[0]);
        assert_eq!(a[1], b[1]);
    }
}
