//! Brute-force loss estimators used to validate the SPDE solver.
//!
//! [`simulate_basket`] simulates a finite portfolio of firms driven by a given
//! market path. [`filtering_loss`] computes the large-portfolio loss
//! conditional on the market path directly: given `M`, each firm is a Brownian
//! motion with variance `1 - rho` and a known time-dependent drift, and its
//! survival probability follows from a killed transition-density recursion.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::engine::LossPath;
use crate::error::{Error, Result};
use crate::market_path::{path_rng, steps_for, MarketPath, StreamKind};
use crate::model::{norm_pdf, InitialCondition, ModelParams};

/// Positions of a finite basket; defaulted firms stay at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct BasketState {
    pub positions: Vec<f64>,
    pub defaulted: Vec<bool>,
}

impl BasketState {
    pub fn new(positions: Vec<f64>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Validation("basket needs at least one firm".into()));
        }
        if positions.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::Validation(
                "basket positions must be positive".into(),
            ));
        }
        let n = positions.len();
        Ok(Self {
            positions,
            defaulted: vec![false; n],
        })
    }

    pub fn default_fraction(&self) -> f64 {
        self.defaulted.iter().filter(|&&d| d).count() as f64 / self.defaulted.len() as f64
    }

    /// One Euler step with market increment `dm` and a Brownian-bridge check
    /// for crossings inside the step.
    pub fn step<R: Rng>(&mut self, params: &ModelParams, dt: f64, dm: f64, rng: &mut R) {
        let rho = params.rho();
        let drift = params.mu() * dt + rho.sqrt() * dm;
        let idio_var = (1.0 - rho) * dt;
        let idio_sd = idio_var.sqrt();
        for (x, dead) in self.positions.iter_mut().zip(self.defaulted.iter_mut()) {
            if *dead {
                continue;
            }
            let xi: f64 = rng.sample(StandardNormal);
            let next = *x + drift + idio_sd * xi;
            let hit = if next <= 0.0 {
                true
            } else {
                // given the market path only the idiosyncratic part is random
                let u: f64 = rng.random();
                u < (-2.0 * *x * next / idio_var).exp()
            };
            if hit {
                *x = 0.0;
                *dead = true;
            } else {
                *x = next;
            }
        }
    }
}

/// Default fraction of a finite basket along `path`, reported at `times`.
/// Path `path_index` of `seed` selects the idiosyncratic stream.
pub fn simulate_basket(
    positions: &[f64],
    params: &ModelParams,
    path: &MarketPath,
    times: &[f64],
    seed: u64,
    path_index: u64,
) -> Result<LossPath> {
    let dt = path.dt();
    let steps = grid_steps(times, dt, path.n_steps())?;
    let mut state = BasketState::new(positions.to_vec())?;
    let mut rng = path_rng(seed, StreamKind::Idiosyncratic, path_index);
    let mut raw = Vec::with_capacity(times.len());
    let mut done = 0;
    for &k in &steps {
        while done < k {
            state.step(params, dt, path.increment(done), &mut rng);
            done += 1;
        }
        raw.push(state.default_fraction());
    }
    Ok(exact_path(times, raw))
}

fn grid_steps(times: &[f64], dt: f64, available: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let k = steps_for(t, dt)
            .ok_or_else(|| Error::Validation(format!("time {t} is not a multiple of dt = {dt}")))?;
        if k > available {
            return Err(Error::Validation(format!(
                "market path covers {available} steps, need {k}"
            )));
        }
        if out.last().is_some_and(|&p| k < p) {
            return Err(Error::Validation(
                "reporting times must be non-decreasing".into(),
            ));
        }
        out.push(k);
    }
    Ok(out)
}

fn exact_path(times: &[f64], raw: Vec<f64>) -> LossPath {
    LossPath {
        times: times.to_vec(),
        values: raw.clone(),
        raw,
        diagnostics: Default::default(),
    }
}

/// Resolution of the filtering recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    /// Spatial step as a fraction of the one-step idiosyncratic deviation
    /// `sqrt((1 - rho) dt)`.
    pub spacing_ratio: f64,
    /// Upper end of the spatial grid.
    pub upper: f64,
}

impl FilterConfig {
    pub fn new(upper: f64) -> Self {
        Self {
            spacing_ratio: 0.6,
            upper,
        }
    }
}

/// Large-portfolio loss conditional on `path`, reported at `times`.
///
/// The market path is linearly interpolated between its grid points, so over
/// each step a firm is a Brownian motion with variance `(1 - rho) dt` and a
/// constant drift `m = mu dt + sqrt(rho) dM`. The surviving density is carried
/// on a uniform grid with the killed kernel
/// `G(y - x - m) * (1 - exp(-2 x y / ((1 - rho) dt)))`, the first step taken
/// exactly from the atoms.
pub fn filtering_loss(
    ic: &InitialCondition,
    params: &ModelParams,
    path: &MarketPath,
    times: &[f64],
    cfg: &FilterConfig,
) -> Result<LossPath> {
    let dt = path.dt();
    let steps = grid_steps(times, dt, path.n_steps())?;
    let rho = params.rho();
    let var = (1.0 - rho) * dt;
    let sd = var.sqrt();
    let h = cfg.spacing_ratio * sd;
    if !(cfg.upper > ic.max_position()) {
        return Err(Error::Domain(format!(
            "filtering grid upper {} must exceed the largest atom; enlarge grid_upper",
            cfg.upper
        )));
    }
    let n = (cfg.upper / h).ceil() as usize + 1;
    let node = |j: usize| j as f64 * h;
    let drift_of = |m: usize| params.mu() * dt + rho.sqrt() * path.increment(m);
    // bridge factor exp(-2 x y / var) matters only where both x and y are small
    let band = ((40.0 * var).sqrt() / h).ceil() as usize + 1;
    let width = (8.0 * sd / h).ceil() as i64 + 1;

    let mut p = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut kernel = Vec::new();
    let mut raw = Vec::with_capacity(times.len());
    let mut done = 0usize;

    // trapezoid plus the Euler-Maclaurin term for the nonzero slope at zero
    let mass =
        |p: &[f64]| h * p.iter().sum::<f64>() + h * h / 12.0 * (4.0 * p[1] - p[2]) / (2.0 * h);
    for &k in &steps {
        while done < k {
            let m = drift_of(done);
            if done == 0 {
                for &(x, w) in ic.atoms() {
                    let c = x + m;
                    let j0 = (((c - 8.0 * sd) / h).floor().max(1.0)) as usize;
                    let j1 = (((c + 8.0 * sd) / h).ceil() as usize).min(n - 1);
                    for (j, pj) in p.iter_mut().enumerate().take(j1 + 1).skip(j0) {
                        let y = node(j);
                        *pj += w * norm_pdf((y - c) / sd) / sd * -(-2.0 * x * y / var).exp_m1();
                    }
                }
            } else {
                // Toeplitz part: next_j = h sum_i p_i G(y_j - x_i - m)
                let off = (m / h).round() as i64;
                kernel.clear();
                for d in (off - width)..=(off + width) {
                    kernel.push(h * norm_pdf((d as f64 * h - m) / sd) / sd);
                }
                next.iter_mut().for_each(|v| *v = 0.0);
                for (ki, &g) in kernel.iter().enumerate() {
                    let d = off - width + ki as i64;
                    // target j = source i + d, both in 1..n
                    let i_lo = 1i64.max(1 - d);
                    let i_hi = (n as i64).min(n as i64 - d);
                    if i_lo >= i_hi {
                        continue;
                    }
                    let (i0, i1) = (i_lo as usize, i_hi as usize);
                    let t0 = (i_lo + d) as usize;
                    let src = &p[i0..i1];
                    let dst = &mut next[t0..t0 + (i1 - i0)];
                    for (o, s) in dst.iter_mut().zip(src) {
                        *o += g * s;
                    }
                }
                // remove the paths that touched zero within the step; the
                // factor is negligible unless min(x, y) lies in the band
                let reach = (band + width as usize).min(n);
                for (j, nj) in next.iter_mut().enumerate().take(reach).skip(1) {
                    let y = node(j);
                    let mut corr = 0.0;
                    for (i, &pi) in p.iter().enumerate().take(reach).skip(1) {
                        let x = node(i);
                        corr +=
                            h * pi * norm_pdf((y - x - m) / sd) / sd * (-2.0 * x * y / var).exp();
                    }
                    *nj -= corr;
                }
                next[0] = 0.0;
                std::mem::swap(&mut p, &mut next);
            }
            done += 1;
        }
        raw.push(if done == 0 {
            0.0
        } else {
            (1.0 - mass(&p)).clamp(0.0, 1.0)
        });
    }
    Ok(exact_path(times, raw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::default_probability_raw;

    #[test]
    fn zero_correlation_filter_matches_closed_form() {
        let p = ModelParams::new(0.042, 0.22, 0.0, 0.4).unwrap();
        let ic = InitialCondition::equal_weights(&[0.5, 1.0, 2.0]).unwrap();
        let path = MarketPath::generate(1, 0, 200, 0.01);
        let l = filtering_loss(&ic, &p, &path, &[0.0, 1.0, 2.0], &FilterConfig::new(12.0)).unwrap();
        assert_eq!(l.values[0], 0.0);
        for (k, t) in [(1, 1.0), (2, 2.0)] {
            let exact = ic.expected_default_fraction(p.mu(), t);
            assert!(
                (l.values[k] - exact).abs() < 1e-6,
                "{} vs {exact}",
                l.values[k]
            );
        }
    }

    #[test]
    fn flat_market_path_is_rescaled_closed_form() {
        let p = ModelParams::new(0.042, 0.22, 0.5, 0.4).unwrap();
        let ic = InitialCondition::equal_weights(&[1.0, 2.0]).unwrap();
        let path = MarketPath::flat(100, 0.01);
        let l = filtering_loss(&ic, &p, &path, &[1.0], &FilterConfig::new(12.0)).unwrap();
        // x + mu t + sqrt(1 - rho) W hits zero like x' + mu' t + W with x' = x / sqrt(1 - rho)
        let s = (1.0 - p.rho()).sqrt();
        let exact: f64 = ic
            .atoms()
            .iter()
            .map(|&(x, w)| w * default_probability_raw(x / s, p.mu() / s, 1.0))
            .sum();
        assert!(
            (l.values[0] - exact).abs() < 1e-6,
            "{} vs {exact}",
            l.values[0]
        );
    }

    #[test]
    fn filter_loss_is_monotone() {
        let p = ModelParams::new(0.042, 0.22, 0.4, 0.4).unwrap();
        let ic = InitialCondition::equal_weights(&[0.4, 1.0, 2.0]).unwrap();
        let path = MarketPath::generate(5, 3, 400, 0.005);
        let times: Vec<f64> = (0..=20).map(|k| k as f64 * 0.1).collect();
        let l = filtering_loss(&ic, &p, &path, &times, &FilterConfig::new(12.0)).unwrap();
        assert!(l.values.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }

    #[test]
    fn single_firm_default_frequency() {
        let p = ModelParams::new(0.042, 0.22, 0.0, 0.4).unwrap();
        let dt = 0.01;
        let path = MarketPath::flat(100, dt);
        let reps = 200_000;
        let hits: f64 = (0..reps)
            .map(|k| {
                simulate_basket(&[1.0], &p, &path, &[1.0], 3, k)
                    .unwrap()
                    .values[0]
            })
            .sum();
        let freq = hits / reps as f64;
        let exact = default_probability_raw(1.0, p.mu(), 1.0);
        let se = (exact * (1.0 - exact) / reps as f64).sqrt();
        assert!(
            (freq - exact).abs() < 3.0 * se,
            "{freq} vs {exact} (se {se})"
        );
    }

    #[test]
    fn near_one_correlation_defaults_together() {
        let p = ModelParams::new(0.042, 0.22, 0.999, 0.4).unwrap();
        let positions = vec![0.5; 50];
        let mut extreme = 0;
        let reps = 200;
        for k in 0..reps {
            let path = MarketPath::generate(11, k, 100, 0.01);
            let l = simulate_basket(&positions, &p, &path, &[1.0], 11, k)
                .unwrap()
                .values[0];
            if l == 0.0 || l == 1.0 {
                extreme += 1;
            }
        }
        assert!(extreme as f64 / reps as f64 > 0.9, "{extreme}");
    }

    #[test]
    fn basket_loss_is_monotone_and_bounded() {
        let p = ModelParams::new(0.042, 0.22, 0.3, 0.4).unwrap();
        let positions: Vec<f64> = (1..=40).map(|k| 0.1 * k as f64).collect();
        let path = MarketPath::generate(2, 0, 200, 0.01);
        let times: Vec<f64> = (0..=8).map(|k| k as f64 * 0.25).collect();
        let l = simulate_basket(&positions, &p, &path, &times, 2, 0).unwrap();
        assert!(l.values.windows(2).all(|w| w[1] >= w[0]));
        assert!(l.values.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(BasketState::new(vec![]).is_err());
        assert!(BasketState::new(vec![-1.0]).is_err());
    }
}
