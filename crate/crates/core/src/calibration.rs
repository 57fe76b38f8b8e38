//! Calibration of initial distances to default, volatility and implied
//! correlation.
//!
//! Single names are priced with the first-passage default probability on the
//! tranche payment grid. Index spreads only need expected losses, so the
//! volatility fit is analytic and free of Monte-Carlo noise. Implied
//! correlations use simulated loss paths with common random numbers across
//! every trial correlation.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;

use crate::engine::{LossPathSet, LossSimulator, SolverConfig};
use crate::error::{Error, Result};
use crate::fem::Grid;
use crate::market_data::{build_schedule, CdsQuote, IndexQuote, MarketEnv, Schedule, BP};
use crate::model::{default_probability_raw, InitialCondition, ModelParams};
use crate::pricing::{index_legs, legs, quote, Quote, Quoting, Tranche};

pub const X0_BRACKET: (f64, f64) = (1e-6, 50.0);
pub const SIGMA_BRACKET: (f64, f64) = (0.01, 2.0);
const X0_TOL: f64 = 1e-10;
const CDS_MATURITY: f64 = 5.0;

/// Par spread (decimal) of a single-name CDS on `schedule` for a firm
/// starting at distance `x0`.
pub fn cds_spread_from_x0(
    x0: f64,
    params: &ModelParams,
    schedule: &Schedule,
    env: &MarketEnv,
) -> f64 {
    let mu = params.mu();
    let lgd = 1.0 - params.recovery();
    let mut prev = default_probability_raw(x0, mu, schedule.start());
    let (mut fee, mut prot) = (0.0, 0.0);
    for (&t, &d) in schedule.payment_times().iter().zip(&schedule.accruals()) {
        let q = default_probability_raw(x0, mu, t);
        let df = env.discount(t);
        fee += d * df * (1.0 - q);
        prot += df * lgd * (q - prev);
        prev = q;
    }
    if fee > 0.0 {
        prot / fee
    } else {
        f64::INFINITY
    }
}

/// Distance to default reproducing the quoted five-year spread.
pub fn x0_from_cds(
    quote: &CdsQuote,
    params: &ModelParams,
    schedule: &Schedule,
    env: &MarketEnv,
) -> Result<f64> {
    let target = quote.five_year_spread;
    if !(target > 0.0) {
        return Err(Error::Validation(format!(
            "{}: spread must be positive",
            quote.name
        )));
    }
    let (mut lo, mut hi) = X0_BRACKET;
    let f = |x: f64| cds_spread_from_x0(x, params, schedule, env) - target;
    if f(lo) < 0.0 || f(hi) > 0.0 {
        return Err(Error::Unattainable(format!(
            "{}: {}bp is outside the spreads reachable with x0 in [{lo}, {hi}]",
            quote.name,
            quote.spread_bp()
        )));
    }
    while hi - lo > X0_TOL {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Distances to default for every constituent, in input order.
pub fn x0s_from_cds(
    portfolio: &[CdsQuote],
    params: &ModelParams,
    env: &MarketEnv,
    frequency: u32,
) -> Result<Vec<f64>> {
    let schedule = build_schedule(0.0, CDS_MATURITY, frequency)?;
    portfolio
        .par_iter()
        .map(|q| x0_from_cds(q, params, &schedule, env))
        .collect()
}

/// Index par spread (decimal) from the average first-passage probability of
/// the constituents.
pub fn index_spread_analytic(
    x0s: &[f64],
    params: &ModelParams,
    schedule: &Schedule,
    env: &MarketEnv,
) -> f64 {
    let mu = params.mu();
    let n = x0s.len() as f64;
    let el = |t: f64| {
        x0s.iter()
            .map(|&x| default_probability_raw(x, mu, t))
            .sum::<f64>()
            / n
    };
    let lgd = 1.0 - params.recovery();
    let mut prev = el(schedule.start());
    let (mut fee, mut prot) = (0.0, 0.0);
    for (&t, &d) in schedule.payment_times().iter().zip(&schedule.accruals()) {
        let q = el(t);
        let df = env.discount(t);
        fee += d * df * (1.0 - q);
        prot += df * lgd * (q - prev);
        prev = q;
    }
    prot / fee
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexResidual {
    pub maturity: f64,
    pub market_bp: f64,
    pub model_bp: f64,
}

impl IndexResidual {
    pub fn residual_bp(&self) -> f64 {
        self.model_bp - self.market_bp
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub sigma: f64,
    pub names: Vec<String>,
    pub per_name_x0: Vec<f64>,
    pub residuals: Vec<IndexResidual>,
    /// Sum of squared residuals in bp^2.
    pub objective: f64,
    pub evaluations: usize,
}

impl CalibrationResult {
    pub fn initial_condition(&self) -> Result<InitialCondition> {
        InitialCondition::equal_weights(&self.per_name_x0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSearch {
    pub scan_points: usize,
    /// Golden-section stops once the bracket is narrower than this.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub frequency: u32,
}

impl Default for SigmaSearch {
    fn default() -> Self {
        Self {
            scan_points: 40,
            tolerance: 1e-9,
            max_iterations: 200,
            frequency: 4,
        }
    }
}

struct SigmaObjective<'a> {
    index: &'a [IndexQuote],
    schedules: Vec<Schedule>,
    portfolio: &'a [CdsQuote],
    base: ModelParams,
    env: &'a MarketEnv,
    frequency: u32,
}

impl SigmaObjective<'_> {
    fn model_spreads(&self, sigma: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let params = self.base.with_sigma(sigma)?;
        let x0s = x0s_from_cds(self.portfolio, &params, self.env, self.frequency)?;
        let spreads = self
            .schedules
            .iter()
            .map(|s| index_spread_analytic(&x0s, &params, s, self.env))
            .collect();
        Ok((x0s, spreads))
    }

    fn value(&self, sigma: f64) -> f64 {
        match self.model_spreads(sigma) {
            Ok((_, spreads)) => self
                .index
                .iter()
                .zip(&spreads)
                .map(|(q, s)| ((s - q.traded_spread) / BP).powi(2))
                .sum(),
            Err(_) => f64::INFINITY,
        }
    }
}

/// Volatility minimising the squared index-spread residuals, with the
/// constituent distances re-derived from their CDS quotes at every trial
/// volatility. `base` supplies `r` and the recovery; its correlation is unused.
pub fn calibrate_sigma(
    index: &[IndexQuote],
    portfolio: &[CdsQuote],
    base: &ModelParams,
    env: &MarketEnv,
    search: &SigmaSearch,
) -> Result<CalibrationResult> {
    if index.is_empty() {
        return Err(Error::Validation(
            "at least one index quote is needed".into(),
        ));
    }
    if portfolio.is_empty() {
        return Err(Error::Validation("portfolio is empty".into()));
    }
    let schedules = index
        .iter()
        .map(|q| build_schedule(0.0, q.maturity, search.frequency))
        .collect::<Result<Vec<_>>>()?;
    let obj = SigmaObjective {
        index,
        schedules,
        portfolio,
        base: *base,
        env,
        frequency: search.frequency,
    };
    let mut evaluations = 0;
    let mut eval = |s: f64| {
        evaluations += 1;
        obj.value(s)
    };

    let (lo, hi) = SIGMA_BRACKET;
    let n = search.scan_points.max(3);
    let grid: Vec<f64> = (0..n)
        .map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64))
        .collect();
    let values: Vec<f64> = grid.iter().map(|&s| eval(s)).collect();
    let best = (0..n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .filter(|&k| values[k].is_finite())
        .ok_or_else(|| {
            Error::Calibration("objective is infinite across the volatility bracket".into())
        })?;
    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(n - 1)]);

    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (eval(c), eval(d));
    let mut trace = Vec::new();
    let mut iterations = 0;
    while b - a > search.tolerance {
        if iterations == search.max_iterations {
            return Err(Error::Calibration(format!(
                "volatility search stopped after {iterations} iterations with bracket [{a}, {b}]; trace {trace:?}"
            )));
        }
        iterations += 1;
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = eval(d);
        }
        trace.push((0.5 * (a + b), fc.min(fd)));
    }
    let sigma = if fc <= fd { c } else { d };
    let objective = eval(sigma);
    let (x0s, spreads) = obj.model_spreads(sigma)?;
    log::info!("sigma = {sigma:.8} after {evaluations} objective evaluations, objective {objective:.3e} bp^2");
    Ok(CalibrationResult {
        sigma,
        names: portfolio.iter().map(|q| q.name.clone()).collect(),
        per_name_x0: x0s,
        residuals: index
            .iter()
            .zip(&spreads)
            .map(|(q, s)| IndexResidual {
                maturity: q.maturity,
                market_bp: q.traded_spread / BP,
                model_bp: s / BP,
            })
            .collect(),
        objective,
        evaluations,
    })
}

/// Writes `maturity,market_bp,model_bp,residual_bp`.
pub fn write_calibration_report<W: Write>(result: &CalibrationResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["maturity", "market_bp", "model_bp", "residual_bp"])
        .map_err(io)?;
    for r in &result.residuals {
        w.write_record([
            format!("{}", r.maturity),
            format!("{:.6}", r.market_bp),
            format!("{:.6}", r.model_bp),
            format!("{:.6}", r.residual_bp()),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `name,x0`.
pub fn write_x0s<W: Write>(result: &CalibrationResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["name", "x0"]).map_err(io)?;
    for (n, x) in result.names.iter().zip(&result.per_name_x0) {
        w.write_record([n.clone(), format!("{x:.12}")])
            .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `name,x0` file written by [`write_x0s`].
pub fn read_x0s(path: &std::path::Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if k == 0 || line.is_empty() || line.starts_with('#') {
            continue;
        }
        let field = line.rsplit(',').next().unwrap_or("");
        let x = field.trim().parse::<f64>().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: k as u64 + 1,
            msg: format!("bad x0 `{field}`"),
        })?;
        out.push(x);
    }
    Ok(out)
}

/// A tranche quote to be matched: spread in bp, or upfront in percent for
/// upfront-quoted tranches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrancheTarget {
    pub tranche: Tranche,
    pub maturity: f64,
    pub market: f64,
}

/// Simulated tranche quotes as a function of correlation, everything else
/// held fixed. Every correlation reuses the same market paths.
#[derive(Debug, Clone)]
pub struct TrancheModel {
    pub base: ModelParams,
    pub initial: InitialCondition,
    pub env: MarketEnv,
    pub solver: SolverConfig,
    pub grid: Grid,
    pub n_paths: usize,
    pub seed: u64,
    pub frequency: u32,
    pub deterministic: bool,
}

impl TrancheModel {
    /// Grid wide enough for every correlation up to `horizon`, with spacing
    /// at most `h`.
    pub fn grid_for(
        ic: &InitialCondition,
        base: &ModelParams,
        horizon: f64,
        h: f64,
    ) -> Result<Grid> {
        let upper = Grid::default_upper(ic, &base.with_rho(0.5)?, horizon);
        Grid::with_spacing(upper, h)
    }

    pub fn loss_paths(&self, rho: f64, horizon: f64) -> Result<LossPathSet> {
        let params = self.base.with_rho(rho)?;
        let sim = LossSimulator::new(&params, &self.initial, self.grid, self.solver.clone())?;
        let n = (horizon * self.frequency as f64).round() as usize;
        let times: Vec<f64> = (0..=n).map(|k| k as f64 / self.frequency as f64).collect();
        sim.simulate_batch(self.seed, self.n_paths, &times, self.deterministic)
    }

    /// Quotes for `(tranche, maturity)` pairs at correlation `rho`.
    pub fn quotes(&self, rho: f64, contracts: &[(Tranche, f64)]) -> Result<Vec<Quote>> {
        let horizon = contracts.iter().map(|c| c.1).fold(0.0, f64::max);
        let paths = self.loss_paths(rho, horizon)?;
        let recovery = self.base.recovery();
        contracts
            .iter()
            .map(|(tr, m)| {
                let sched = build_schedule(0.0, *m, self.frequency)?;
                quote(
                    &legs(&paths, tr, &sched, &self.env, recovery, None)?,
                    tr.quoting,
                )
            })
            .collect()
    }

    /// Index spread in bp with its standard error.
    pub fn index_quote(&self, rho: f64, maturity: f64) -> Result<Quote> {
        let paths = self.loss_paths(rho, maturity)?;
        let sched = build_schedule(0.0, maturity, self.frequency)?;
        quote(
            &index_legs(&paths, &sched, &self.env, self.base.recovery())?,
            Quoting::RunningSpread,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSearch {
    /// Correlations evaluated before bisection; brackets come from sign
    /// changes between neighbours.
    pub scan: Vec<f64>,
    /// Bisection stops once the bracket is narrower than this; the root is
    /// then interpolated linearly.
    pub resolution: f64,
}

impl Default for CorrelationSearch {
    fn default() -> Self {
        Self {
            scan: vec![0.0, 0.2, 0.4, 0.6, 0.8, 0.999],
            resolution: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpliedCorrelationPoint {
    pub tranche: Tranche,
    pub maturity: f64,
    pub market: f64,
    /// Lowest root, or zero when unattainable.
    pub implied_rho: f64,
    pub attainable: bool,
    /// Approximate locations of further roots on the scan grid.
    pub additional_roots: Vec<f64>,
    /// Monte-Carlo standard error of the root, from the quote error and the
    /// local slope.
    pub rho_stderr: f64,
}

impl ImpliedCorrelationPoint {
    pub fn note(&self) -> String {
        match (self.attainable, self.additional_roots.is_empty()) {
            (false, _) => "unattainable: set to zero".into(),
            (true, true) => String::new(),
            (true, false) => format!(
                "lowest root; also fits at {}",
                self.additional_roots
                    .iter()
                    .map(|r| format!("{r:.3}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            ),
        }
    }
}

/// Memoised quote evaluation keyed by the exact correlation.
struct QuoteCache<F> {
    eval: F,
    values: HashMap<u64, Vec<Quote>>,
}

impl<F: FnMut(f64) -> Result<Vec<Quote>>> QuoteCache<F> {
    fn get(&mut self, rho: f64) -> Result<Vec<Quote>> {
        if let Some(v) = self.values.get(&rho.to_bits()) {
            return Ok(v.clone());
        }
        let v = (self.eval)(rho)?;
        self.values.insert(rho.to_bits(), v.clone());
        Ok(v)
    }
}

/// Implied correlations for several targets sharing one quote function.
/// `model(rho)` returns one quote per target, in target order.
pub fn implied_correlations<F>(
    targets: &[TrancheTarget],
    model: F,
    search: &CorrelationSearch,
) -> Result<Vec<ImpliedCorrelationPoint>>
where
    F: FnMut(f64) -> Result<Vec<Quote>>,
{
    if search.scan.len() < 2 || search.scan.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Validation(
            "correlation scan must be increasing with at least two points".into(),
        ));
    }
    let mut cache = QuoteCache {
        eval: model,
        values: HashMap::new(),
    };
    let mut scanned = Vec::with_capacity(search.scan.len());
    for &rho in &search.scan {
        let q = cache.get(rho)?;
        if q.len() != targets.len() {
            return Err(Error::Validation(format!(
                "model returned {} quotes for {} targets",
                q.len(),
                targets.len()
            )));
        }
        scanned.push(q);
    }
    let mut out = Vec::with_capacity(targets.len());
    for (j, t) in targets.iter().enumerate() {
        let g: Vec<f64> = scanned.iter().map(|q| q[j].value - t.market).collect();
        let brackets: Vec<usize> = (0..g.len() - 1)
            .filter(|&k| g[k] == 0.0 || g[k] * g[k + 1] < 0.0)
            .collect();
        let Some(&first) = brackets.first() else {
            log::warn!(
                "{} {}y: quote {} unattainable over the scan",
                t.tranche.label(),
                t.maturity,
                t.market
            );
            out.push(ImpliedCorrelationPoint {
                tranche: t.tranche,
                maturity: t.maturity,
                market: t.market,
                implied_rho: 0.0,
                attainable: false,
                additional_roots: Vec::new(),
                rho_stderr: 0.0,
            });
            continue;
        };
        let interp = |a: f64, ga: f64, b: f64, gb: f64| {
            if ga == gb {
                a
            } else {
                a - ga * (b - a) / (gb - ga)
            }
        };
        let additional_roots = brackets[1..]
            .iter()
            .map(|&k| interp(search.scan[k], g[k], search.scan[k + 1], g[k + 1]))
            .collect();

        let (mut a, mut b) = (search.scan[first], search.scan[first + 1]);
        let (mut ga, mut gb) = (g[first], g[first + 1]);
        let (mut sa, mut sb) = (scanned[first][j].stderr, scanned[first + 1][j].stderr);
        while b - a > search.resolution && ga != 0.0 {
            let mid = 0.5 * (a + b);
            let q = cache.get(mid)?[j];
            let gm = q.value - t.market;
            if ga * gm <= 0.0 {
                (b, gb, sb) = (mid, gm, q.stderr);
            } else {
                (a, ga, sa) = (mid, gm, q.stderr);
            }
        }
        let implied_rho = interp(a, ga, b, gb);
        let slope = (gb - ga) / (b - a);
        let rho_stderr = if ga == gb {
            0.0
        } else {
            0.5 * (sa + sb) / slope.abs()
        };
        if rho_stderr > search.resolution {
            return Err(Error::Numerical(format!(
                "{} {}y: Monte-Carlo error in the implied correlation ({rho_stderr:.3}) exceeds the bracket \
                 resolution {}; increase n_sims",
                t.tranche.label(),
                t.maturity,
                search.resolution
            )));
        }
        out.push(ImpliedCorrelationPoint {
            tranche: t.tranche,
            maturity: t.maturity,
            market: t.market,
            implied_rho,
            attainable: true,
            additional_roots,
            rho_stderr,
        });
    }
    Ok(out)
}

/// Implied correlations under `model`.
pub fn implied_correlation(
    targets: &[TrancheTarget],
    model: &TrancheModel,
    search: &CorrelationSearch,
) -> Result<Vec<ImpliedCorrelationPoint>> {
    let contracts: Vec<(Tranche, f64)> = targets.iter().map(|t| (t.tranche, t.maturity)).collect();
    implied_correlations(targets, |rho| model.quotes(rho, &contracts), search)
}
