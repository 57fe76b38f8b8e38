//! Market-factor paths and the per-path random streams behind them.
//!
//! Every path draws from its own ChaCha stream selected by `(seed, path index)`,
//! so the value of path `k` never depends on how paths are distributed over
//! threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Stream families carved out of one master seed so that market draws and
/// idiosyncratic basket draws never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    Market,
    Idiosyncratic,
}

/// RNG for path `path_index` of the given family.
pub fn path_rng(seed: u64, kind: StreamKind, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let family = match kind {
        StreamKind::Market => 0u64,
        StreamKind::Idiosyncratic => 1u64 << 63,
    };
    rng.set_stream(family | path_index);
    rng
}

/// Standard normal draws `Phi_m` on a uniform step `dt`; the market increment
/// over step `m` is `sqrt(dt) * Phi_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketPath {
    dt: f64,
    draws: Vec<f64>,
}

impl MarketPath {
    pub fn generate(seed: u64, path_index: u64, n_steps: usize, dt: f64) -> Self {
        let mut rng = path_rng(seed, StreamKind::Market, path_index);
        let draws = (0..n_steps)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Self { dt, draws }
    }

    pub fn from_draws(draws: Vec<f64>, dt: f64) -> Self {
        Self { dt, draws }
    }

    /// Path with every draw zero.
    pub fn flat(n_steps: usize, dt: f64) -> Self {
        Self {
            dt,
            draws: vec![0.0; n_steps],
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.draws.len()
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.draws.len() as f64
    }

    pub fn draws(&self) -> &[f64] {
        &self.draws
    }

    pub fn increment(&self, m: usize) -> f64 {
        self.dt.sqrt() * self.draws[m]
    }

    /// `M(t_b) - M(t_a)` for step indices `a <= b`.
    pub fn increment_between(&self, a: usize, b: usize) -> f64 {
        self.dt.sqrt() * self.draws[a..b].iter().sum::<f64>()
    }

    /// Levels `M(t_0) = 0, M(t_1), ..., M(t_n)`.
    pub fn levels(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.draws.len() + 1);
        let mut m = 0.0;
        out.push(m);
        for k in 0..self.draws.len() {
            m += self.increment(k);
            out.push(m);
        }
        out
    }

    /// Same Brownian path on a step `factor` times longer.
    pub fn coarsen(&self, factor: usize) -> MarketPath {
        assert!(
            factor >= 1 && self.draws.len().is_multiple_of(factor),
            "coarsening must divide the step count"
        );
        let scale = 1.0 / (factor as f64).sqrt();
        let draws = self
            .draws
            .chunks_exact(factor)
            .map(|c| c.iter().sum::<f64>() * scale)
            .collect();
        MarketPath {
            dt: self.dt * factor as f64,
            draws,
        }
    }
}

/// Number of steps of length `dt` in `t`, requiring exact divisibility.
pub fn steps_for(t: f64, dt: f64) -> Option<usize> {
    let n = (t / dt).round();
    if (n * dt - t).abs() <= 1e-9 * t.abs().max(1.0) && n >= 0.0 {
        Some(n as usize)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a = MarketPath::generate(7, 3, 50, 0.01);
        let b = MarketPath::generate(7, 3, 50, 0.01);
        let c = MarketPath::generate(7, 4, 50, 0.01);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut r1 = path_rng(7, StreamKind::Market, 3);
        let mut r2 = path_rng(7, StreamKind::Idiosyncratic, 3);
        let x: f64 = StandardNormal.sample(&mut r1);
        let y: f64 = StandardNormal.sample(&mut r2);
        assert_ne!(x, y);
    }

    #[test]
    fn coarsening_preserves_levels() {
        let p = MarketPath::generate(1, 0, 64, 1.0 / 64.0);
        let q = p.coarsen(4);
        let lp = p.levels();
        let lq = q.levels();
        for k in 0..=16 {
            assert!((lp[4 * k] - lq[k]).abs() < 1e-12);
        }
        assert!((p.increment_between(8, 24) - (lp[24] - lp[8])).abs() < 1e-12);
    }

    #[test]
    fn step_counts() {
        assert_eq!(steps_for(5.0, 1.0 / 500.0), Some(2500));
        assert_eq!(steps_for(0.25, 1.0 / 1000.0), Some(250));
        assert_eq!(steps_for(0.3, 0.25), None);
        assert_eq!(steps_for(0.0, 0.1), Some(0));
    }
}
