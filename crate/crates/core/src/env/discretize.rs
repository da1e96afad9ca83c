//! Grid discretization of continuous environments.

use crate::error::{Error, Result};
use crate::mdp::{FiniteMdp, FiniteMdpBuilder};
use crate::rng::StreamRng;

use super::double_integrator::ContinuousEnv;

/// Largest grid accepted by [`discretize`].
pub const MAX_CELLS: usize = 50_000;

/// Regular grid of cell centers, symmetric about its midpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct StateGrid {
    mid: Vec<f64>,
    width: Vec<f64>,
    counts: Vec<usize>,
}

impl StateGrid {
    /// Grid whose first and last centers per dimension are `first[d]` and `last[d]`.
    pub fn centered(first: &[f64], last: &[f64], counts: &[usize]) -> Result<Self> {
        if first.len() != last.len() || first.len() != counts.len() || counts.is_empty() {
            return Err(Error::InvalidModel("grid dimensions disagree".into()));
        }
        if counts.iter().any(|&n| n < 2) || first.iter().zip(last).any(|(a, b)| !(b > a)) {
            return Err(Error::InvalidModel("each grid dimension needs two or more increasing centers".into()));
        }
        let mid = first.iter().zip(last).map(|(a, b)| 0.5 * (a + b)).collect();
        let width = first.iter().zip(last).zip(counts).map(|((a, b), &n)| (b - a) / (n - 1) as f64).collect();
        Ok(Self { mid, width, counts: counts.to_vec() })
    }

    pub fn n_cells(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    fn coord(&self, d: usize, i: usize) -> f64 {
        let off = i as f64 - (self.counts[d] - 1) as f64 / 2.0;
        self.mid[d] + off * self.width[d]
    }

    /// Per-dimension indices of a flat cell index (last dimension fastest).
    pub fn unflatten(&self, mut cell: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for d in (0..self.dim()).rev() {
            idx[d] = cell % self.counts[d];
            cell /= self.counts[d];
        }
        idx
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.counts).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn center(&self, cell: usize) -> Vec<f64> {
        self.unflatten(cell).iter().enumerate().map(|(d, &i)| self.coord(d, i)).collect()
    }

    /// Nearest cell, clamping states outside the grid to its edge.
    pub fn cell_of(&self, state: &[f64]) -> usize {
        let idx: Vec<usize> = (0..self.dim())
            .map(|d| {
                let n = self.counts[d];
                let y = (state[d] - self.mid[d]) / self.width[d];
                let i = if n % 2 == 1 {
                    // Round about the middle cell so the map is odd-symmetric.
                    y.round() + ((n - 1) / 2) as f64
                } else {
                    (y + n as f64 / 2.0).floor()
                };
                i.clamp(0.0, (n - 1) as f64) as usize
            })
            .collect();
        self.flatten(&idx)
    }
}

/// Estimate a finite MDP by sampling one step from every cell center under
/// every action level. Costs are taken at the centers; rewards are averaged
/// over the samples.
pub fn discretize<E: ContinuousEnv>(
    env: &E,
    grid: &StateGrid,
    action_levels: &[Vec<f64>],
    n_mc_samples: usize,
    rng: &mut StreamRng,
) -> Result<FiniteMdp> {
    let n = grid.n_cells();
    if n > MAX_CELLS {
        let bytes = n * action_levels.len() * (n_mc_samples.max(1) * 16 + 16);
        return Err(Error::Unsupported(format!(
            "{n} cells exceeds the limit of {MAX_CELLS} (about {:.1} MiB of transitions)",
            bytes as f64 / (1 << 20) as f64
        )));
    }
    if grid.dim() != env.state_dim() {
        return Err(Error::InvalidModel("grid and environment dimensions disagree".into()));
    }
    if action_levels.is_empty() {
        return Err(Error::InvalidModel("need at least one action level".into()));
    }
    let m = action_levels.len();
    let mut b = FiniteMdpBuilder::new(n, m);
    b.discount(env.discount()).horizon(env.horizon());
    let mut empty = 0usize;
    for s in 0..n {
        let center = grid.center(s);
        b.cost(s, env.cost(&center));
        for (a, level) in action_levels.iter().enumerate() {
            let mut counts: Vec<(usize, f64)> = Vec::new();
            let mut reward = 0.0;
            let mut got = 0usize;
            for _ in 0..n_mc_samples {
                let Ok(out) = env.step(&center, level, rng) else { continue };
                let t = grid.cell_of(&out.next_state);
                match counts.iter_mut().find(|c| c.0 == t) {
                    Some(c) => c.1 += 1.0,
                    None => counts.push((t, 1.0)),
                }
                reward += out.reward;
                got += 1;
            }
            if got == 0 {
                empty += 1;
                b.deterministic(s, a, s);
                continue;
            }
            counts.iter_mut().for_each(|c| c.1 /= got as f64);
            b.transition(s, a, &counts).reward(s, a, reward / got as f64);
        }
    }
    if empty > 0 {
        log::warn!("{empty} state-action pairs had no successful samples; replaced by self-loops");
    }
    let mut d0 = vec![0.0; n];
    let draws = n_mc_samples.max(1);
    for _ in 0..draws {
        d0[grid.cell_of(&env.reset(rng))] += 1.0 / draws as f64;
    }
    b.initial(&d0);
    b.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centers_and_lookup_agree() {
        let g = StateGrid::centered(&[-7.0, -3.5], &[7.0, 3.5], &[41, 41]).unwrap();
        assert_eq!(g.n_cells(), 1681);
        for cell in [0, 20 * 41 + 20, 1680, 333] {
            assert_eq!(g.cell_of(&g.center(cell)), cell);
        }
        let c = g.center(20 * 41 + 20);
        assert_eq!(c, vec![0.0, 0.0]);
        assert_eq!(g.cell_of(&[100.0, -100.0]), 40 * 41);
    }

    #[test]
    fn lookup_is_odd_symmetric() {
        let g = StateGrid::centered(&[-7.0, -3.5], &[7.0, 3.5], &[41, 41]).unwrap();
        for &(x, y) in &[(0.175, 0.0), (-3.5 * 0.35, 0.0875), (1.0, -2.0)] {
            let a = g.unflatten(g.cell_of(&[x, y]));
            let b = g.unflatten(g.cell_of(&[-x, -y]));
            assert_eq!((a[0] + b[0], a[1] + b[1]), (40, 40));
        }
    }
}
