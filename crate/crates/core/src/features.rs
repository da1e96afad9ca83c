//! Sparse binary feature maps and the linear heads built on them.
//!
//! A value is the mean of the weights of the active features, and a step of
//! size `ζ` toward a target moves every active weight by `ζ·error`, so the
//! prediction itself moves by `ζ·error`. With one-hot features this is exactly
//! the tabular update `x ← x − ζ (x − target)`.

/// Maps a state to the indices of its active binary features.
pub trait Featurizer<S: ?Sized> {
    fn n_features(&self) -> usize;
    /// Number of features active for every state.
    fn n_active(&self) -> usize;
    fn active(&self, state: &S, out: &mut Vec<usize>);
}

/// One feature per state of a finite MDP.
#[derive(Debug, Clone, Copy)]
pub struct OneHot {
    pub n_states: usize,
}

impl Featurizer<usize> for OneHot {
    fn n_features(&self) -> usize {
        self.n_states
    }

    fn n_active(&self) -> usize {
        1
    }

    fn active(&self, state: &usize, out: &mut Vec<usize>) {
        out.clear();
        out.push(*state);
    }
}

/// Grid tile coding over a box, with uniformly offset tilings.
#[derive(Debug, Clone)]
pub struct TileCoder {
    low: Vec<f64>,
    width: Vec<f64>,
    /// Tiles per dimension in each tiling (one more than the bin count to fit the offsets).
    span: usize,
    n_tilings: usize,
    per_tiling: usize,
}

impl TileCoder {
    pub fn new(low: &[f64], high: &[f64], bins: usize, n_tilings: usize) -> Self {
        assert!(low.len() == high.len() && !low.is_empty());
        assert!(bins >= 1 && n_tilings >= 1);
        let width: Vec<f64> = low.iter().zip(high).map(|(l, h)| (h - l) / bins as f64).collect();
        let span = bins + 1;
        let per_tiling = span.pow(low.len() as u32);
        Self { low: low.to_vec(), width, span, n_tilings, per_tiling }
    }
}

impl Featurizer<[f64]> for TileCoder {
    fn n_features(&self) -> usize {
        self.per_tiling * self.n_tilings
    }

    fn n_active(&self) -> usize {
        self.n_tilings
    }

    fn active(&self, state: &[f64], out: &mut Vec<usize>) {
        out.clear();
        for j in 0..self.n_tilings {
            let offset = j as f64 / self.n_tilings as f64;
            let mut idx = 0;
            for (d, &x) in state.iter().enumerate() {
                let c = ((x - self.low[d]) / self.width[d] + offset).floor();
                let c = c.clamp(0.0, (self.span - 1) as f64) as usize;
                idx = idx * self.span + c;
            }
            out.push(j * self.per_tiling + idx);
        }
    }
}

impl Featurizer<Vec<f64>> for TileCoder {
    fn n_features(&self) -> usize {
        Featurizer::<[f64]>::n_features(self)
    }

    fn n_active(&self) -> usize {
        self.n_tilings
    }

    fn active(&self, state: &Vec<f64>, out: &mut Vec<usize>) {
        Featurizer::<[f64]>::active(self, state.as_slice(), out)
    }
}

/// Linear map from sparse features to `width` outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub weights: Vec<f64>,
    pub width: usize,
}

impl LinearHead {
    pub fn new(n_features: usize, width: usize, init: f64) -> Self {
        Self { weights: vec![init; n_features * width], width }
    }

    pub fn value(&self, active: &[usize], out: usize) -> f64 {
        let sum: f64 = active.iter().map(|&f| self.weights[f * self.width + out]).sum();
        sum / active.len() as f64
    }

    pub fn values(&self, active: &[usize], buf: &mut Vec<f64>) {
        buf.clear();
        buf.resize(self.width, 0.0);
        for &f in active {
            for (o, b) in buf.iter_mut().enumerate() {
                *b += self.weights[f * self.width + o];
            }
        }
        let n = active.len() as f64;
        buf.iter_mut().for_each(|b| *b /= n);
    }

    /// Move the prediction for `out` by `delta`.
    pub fn shift(&mut self, active: &[usize], out: usize, delta: f64) {
        for &f in active {
            self.weights[f * self.width + out] += delta;
        }
    }

    pub fn clamp(&mut self, active: &[usize], out: usize, lo: f64, hi: f64) {
        for &f in active {
            let w = &mut self.weights[f * self.width + out];
            *w = w.clamp(lo, hi);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.weights.iter().fold(0.0, |m, w| m.max(w.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiles_are_in_range_and_distinct_per_tiling() {
        let tc = TileCoder::new(&[0.0, 0.0], &[1.0, 2.0], 4, 2);
        let mut out = Vec::new();
        for &(x, y) in &[(0.0, 0.0), (1.0, 2.0), (-5.0, 9.0), (0.3, 1.1)] {
            tc.active(&[x, y][..], &mut out);
            assert_eq!(out.len(), 2);
            assert!(out[0] < 25 && (25..50).contains(&out[1]));
        }
    }

    #[test]
    fn nearby_states_share_tiles() {
        let tc = TileCoder::new(&[0.0], &[1.0], 4, 2);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        tc.active(&[0.30][..], &mut a);
        tc.active(&[0.32][..], &mut b);
        assert_eq!(a, b);
        tc.active(&[0.9][..], &mut b);
        assert!(a.iter().all(|f| !b.contains(f)));
    }

    #[test]
    fn shift_moves_prediction_exactly() {
        let mut h = LinearHead::new(10, 3, 0.0);
        h.shift(&[1, 4], 2, 0.5);
        assert!((h.value(&[1, 4], 2) - 0.5).abs() < 1e-15);
        assert_eq!(h.value(&[1, 4], 0), 0.0);
        assert!((h.value(&[1, 5], 2) - 0.25).abs() < 1e-15);
    }
}
