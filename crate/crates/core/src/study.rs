//! Convergence studies and oracle comparisons.

use rayon::prelude::*;

use crate::engine::{LossPathSet, LossSimulator, SolverConfig};
use crate::error::{Error, Result};
use crate::fem::Grid;
use crate::market_path::{steps_for, MarketPath};
use crate::model::{InitialCondition, ModelParams};
use crate::oracle::{filtering_loss, simulate_basket, FilterConfig};
use crate::pricing::{tranche_loss, Tranche};

/// Sample sizes `16 * 4^(k-1)` for `k = 1..=levels`.
pub fn mc_sizes(levels: u32) -> Vec<usize> {
    (0..levels).map(|k| 16usize << (2 * k)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct McErrorRow {
    pub n_sims: usize,
    pub tranche: Tranche,
    /// `E[Y_T] / (d - a)`.
    pub expected_loss: f64,
    pub stderr: f64,
}

/// Expected fractional tranche loss at `horizon` and its standard error on
/// the first `n` paths, for every `n` in `sizes`.
pub fn mc_error_table(
    paths: &LossPathSet,
    horizon: f64,
    tranches: &[Tranche],
    recovery: f64,
    sizes: &[usize],
) -> Result<Vec<McErrorRow>> {
    let k = paths
        .time_index(horizon)
        .ok_or_else(|| Error::Validation(format!("paths are not sampled at {horizon}")))?;
    let mut rows = Vec::new();
    for &n in sizes {
        if n > paths.n_paths() || n < 2 {
            return Err(Error::Validation(format!(
                "need {n} paths, have {}",
                paths.n_paths()
            )));
        }
        for tr in tranches {
            let ys: Vec<f64> = (0..n)
                .map(|p| tranche_loss((1.0 - recovery) * paths.path(p)[k], tr) / tr.width())
                .collect();
            let (mean, se) = mean_stderr(&ys);
            rows.push(McErrorRow {
                n_sims: n,
                tranche: *tr,
                expected_loss: mean,
                stderr: se,
            });
        }
    }
    Ok(rows)
}

pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakOrder {
    pub dts: [f64; 3],
    pub means: [f64; 3],
    pub stderrs: [f64; 3],
    /// `(E_1 - E_2) / (E_2 - E_3)`; 2 for a first-order scheme.
    pub ratio: f64,
    /// Standard errors of `E_1 - E_2` and `E_2 - E_3`.
    pub difference_stderrs: [f64; 2],
    /// Expected raw loss of the scheme without sampling: the market term is
    /// mean-zero and enters linearly, so the mean follows the zero-noise path.
    pub exact_means: [f64; 3],
    pub exact_ratio: f64,
}

/// Expected loss at `horizon` for three step sizes, every path driven by the
/// same Brownian path sampled on the finest step.
#[allow(clippy::too_many_arguments)]
pub fn weak_order(
    params: &ModelParams,
    ic: &InitialCondition,
    grid: Grid,
    theta: f64,
    dts: [f64; 3],
    n_paths: usize,
    seed: u64,
    horizon: f64,
    deterministic: bool,
) -> Result<WeakOrder> {
    let fine = dts.iter().copied().fold(f64::INFINITY, f64::min);
    let n_fine = steps_for(horizon, fine)
        .ok_or_else(|| Error::Validation(format!("{horizon} is not a multiple of {fine}")))?;
    let mut sims = Vec::new();
    let mut factors = Vec::new();
    for &dt in &dts {
        let f = steps_for(dt, fine)
            .filter(|&f| f >= 1)
            .ok_or_else(|| Error::Config {
                key: "weak_dts".into(),
                msg: format!("{dt} is not a multiple of {fine}"),
            })?;
        factors.push(f);
        sims.push(LossSimulator::new(
            params,
            ic,
            grid,
            SolverConfig {
                theta,
                ..SolverConfig::full(dt)
            },
        )?);
    }
    let times = [0.0, horizon];
    let mut exact_means = [0.0; 3];
    for j in 0..3 {
        let flat = MarketPath::flat(n_fine / factors[j], fine * factors[j] as f64);
        exact_means[j] = sims[j].simulate(&flat, &times)?.raw[1];
    }
    let run = |k: usize| -> Result<[f64; 3]> {
        let path = MarketPath::generate(seed, k as u64, n_fine, fine);
        let mut out = [0.0; 3];
        for j in 0..3 {
            out[j] = sims[j].simulate(&path.coarsen(factors[j]), &times)?.values[1];
        }
        Ok(out)
    };
    let rows: Vec<[f64; 3]> = if deterministic {
        (0..n_paths).map(run).collect::<Result<_>>()?
    } else {
        (0..n_paths)
            .into_par_iter()
            .map(run)
            .collect::<Result<_>>()?
    };
    let col = |j: usize| rows.iter().map(|r| r[j]).collect::<Vec<_>>();
    let stats: Vec<(f64, f64)> = (0..3).map(|j| mean_stderr(&col(j))).collect();
    let d12: Vec<f64> = rows.iter().map(|r| r[0] - r[1]).collect();
    let d23: Vec<f64> = rows.iter().map(|r| r[1] - r[2]).collect();
    let (m12, s12) = mean_stderr(&d12);
    let (m23, s23) = mean_stderr(&d23);
    Ok(WeakOrder {
        dts,
        means: [stats[0].0, stats[1].0, stats[2].0],
        stderrs: [stats[0].1, stats[1].1, stats[2].1],
        ratio: m12 / m23,
        difference_stderrs: [s12, s23],
        exact_ratio: (exact_means[0] - exact_means[1]) / (exact_means[1] - exact_means[2]),
        exact_means,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpaceRow {
    pub nodes: usize,
    pub spacing: f64,
    pub loss: f64,
    pub analytic: f64,
}

impl SpaceRow {
    pub fn error(&self) -> f64 {
        (self.loss - self.analytic).abs()
    }
}

/// Uncorrelated loss at `horizon` against the closed form for each grid size.
pub fn space_order(
    params: &ModelParams,
    ic: &InitialCondition,
    upper: f64,
    nodes: &[usize],
    cfg: &SolverConfig,
    horizon: f64,
) -> Result<Vec<SpaceRow>> {
    let p0 = params.with_rho(0.0)?;
    let analytic = ic.expected_default_fraction(p0.mu(), horizon);
    nodes
        .iter()
        .map(|&n| {
            let grid = Grid::new(upper, n)?;
            let sim = LossSimulator::new(&p0, ic, grid, cfg.clone())?;
            let path = MarketPath::flat(sim.steps_to(&[horizon])?, cfg.dt);
            let loss = sim.simulate(&path, &[0.0, horizon])?.values[1];
            Ok(SpaceRow {
                nodes: n,
                spacing: grid.spacing(),
                loss,
                analytic,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    pub path: usize,
    pub spde: f64,
    pub filtering: f64,
    pub baskets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleComparison {
    pub basket_sizes: Vec<usize>,
    pub rows: Vec<OracleRow>,
}

impl OracleComparison {
    fn rms(&self, f: impl Fn(&OracleRow) -> f64) -> f64 {
        (self.rows.iter().map(|r| f(r).powi(2)).sum::<f64>() / self.rows.len() as f64).sqrt()
    }

    pub fn filtering_rms(&self) -> f64 {
        self.rms(|r| r.spde - r.filtering)
    }

    /// RMS gap between each basket size and the SPDE.
    pub fn basket_rms(&self) -> Vec<f64> {
        (0..self.basket_sizes.len())
            .map(|j| self.rms(|r| r.baskets[j] - r.spde))
            .collect()
    }
}

/// Losses at `horizon` along shared market paths from the SPDE solver, the
/// filtering recursion and finite baskets of each size. The simulator must use
/// the full scheme; its step sets the path resolution.
#[allow(clippy::too_many_arguments)]
pub fn compare_oracles(
    sim: &LossSimulator,
    ic: &InitialCondition,
    horizon: f64,
    n_paths: usize,
    seed: u64,
    basket_sizes: &[usize],
    filter: &FilterConfig,
    deterministic: bool,
) -> Result<OracleComparison> {
    let params = *sim.params();
    let dt = sim.config().dt;
    let n_steps = sim.steps_to(&[horizon])?;
    let times = [0.0, horizon];
    let firms: Vec<Vec<f64>> = basket_sizes.iter().map(|&n| ic.expand(n)).collect();
    let run = |k: usize| -> Result<OracleRow> {
        let path = MarketPath::generate(seed, k as u64, n_steps, dt);
        let spde = sim.simulate(&path, &times)?.values[1];
        let filtering = filtering_loss(ic, &params, &path, &times, filter)?.values[1];
        let baskets = firms
            .iter()
            .map(|pos| Ok(simulate_basket(pos, &params, &path, &times, seed, k as u64)?.values[1]))
            .collect::<Result<_>>()?;
        Ok(OracleRow {
            path: k,
            spde,
            filtering,
            baskets,
        })
    };
    let rows = if deterministic {
        (0..n_paths).map(run).collect::<Result<_>>()?
    } else {
        (0..n_paths)
            .into_par_iter()
            .map(run)
            .collect::<Result<_>>()?
    };
    Ok(OracleComparison {
        basket_sizes: basket_sizes.to_vec(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fig_one_sizes() {
        assert_eq!(mc_sizes(7), vec![16, 64, 256, 1024, 4096, 16384, 65536]);
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 10.0, 100.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-0.5)).collect();
        assert!((loglog_slope(&xs, &ys) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn stderr_of_constant_is_zero() {
        assert_eq!(mean_stderr(&[2.0; 5]), (2.0, 0.0));
        let (m, s) = mean_stderr(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exact_weak_ratio_is_first_order() {
        let params = ModelParams::new(0.042, 0.22, 0.3, 0.4).unwrap();
        let ic = InitialCondition::equal_weights(&[0.5, 1.0]).unwrap();
        let grid = Grid::new(8.0, 161).unwrap();
        let w = weak_order(&params, &ic, grid, 1.0, [0.04, 0.02, 0.01], 8, 2, 1.0, true).unwrap();
        assert!((w.exact_ratio - 2.0).abs() < 0.1, "{w:?}");
        assert!(w.stderrs.iter().all(|&s| s > 0.0));
    }

    #[test]
    fn space_errors_shrink() {
        let params = ModelParams::new(0.042, 0.22, 0.3, 0.4).unwrap();
        let ic = InitialCondition::equal_weights(&[2.0, 3.0]).unwrap();
        let rows = space_order(
            &params,
            &ic,
            12.0,
            &[61, 121, 241],
            &SolverConfig::full(1e-3),
            1.0,
        )
        .unwrap();
        assert!(
            rows[0].error() > rows[1].error() && rows[1].error() > rows[2].error(),
            "{rows:?}"
        );
    }

    #[test]
    fn uncorrelated_oracles_agree() {
        let params = ModelParams::new(0.042, 0.22, 0.0, 0.4).unwrap();
        let ic = InitialCondition::equal_weights(&[1.0, 1.5]).unwrap();
        let grid = Grid::new(Grid::default_upper(&ic, &params, 1.0), 401).unwrap();
        let sim = LossSimulator::new(&params, &ic, grid, SolverConfig::full(1e-3)).unwrap();
        let cmp = compare_oracles(
            &sim,
            &ic,
            1.0,
            3,
            5,
            &[200],
            &FilterConfig::new(grid.upper()),
            true,
        )
        .unwrap();
        let exact = ic.expected_default_fraction(params.mu(), 1.0);
        for r in &cmp.rows {
            assert!((r.spde - exact).abs() < 1e-3, "{} {}", r.spde, exact);
            assert!((r.filtering - exact).abs() < 1e-5);
        }
        assert!(cmp.filtering_rms() < 1e-3);
        assert!(cmp.basket_rms()[0] < 0.1);
    }
}
