//! Subcommand implementations. Each writes its CSVs and the resolved config
//! into the output directory.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use credit_spde::calibration::{
    calibrate_sigma, read_x0s, write_calibration_report, write_x0s, x0s_from_cds, SigmaSearch,
};
use credit_spde::engine::{LossPathSet, LossSimulator, Scheme, SolverConfig};
use credit_spde::fem::Grid;
use credit_spde::market_data::{build_schedule, load_index, load_portfolio, MarketEnv};
use credit_spde::model::{InitialCondition, ModelParams};
use credit_spde::oracle::FilterConfig;
use credit_spde::pricing::{
    index_legs, legs, par_spread, par_spread_stderr, write_report, ForwardSpec, ReportRow, Reset,
    Tranche,
};
use credit_spde::study::{
    compare_oracles, loglog_slope, mc_error_table, mc_sizes, space_order, weak_order,
};
use credit_spde::{synthetic, Error, Result};

use crate::config::RunConfig;

pub struct Run {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

impl Run {
    pub fn new(cfg: RunConfig, out: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&out).map_err(|e| Error::io_at(&out, e))?;
        std::fs::write(out.join("config.txt"), cfg.render()).map_err(|e| Error::io_at(&out, e))?;
        Ok(Self { cfg, out })
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let path = self.out.join(name);
        Ok(BufWriter::new(
            File::create(&path).map_err(|e| Error::io_at(&path, e))?,
        ))
    }

    fn params(&self, rho: f64) -> Result<ModelParams> {
        ModelParams::new(self.cfg.r, self.cfg.sigma, rho, self.cfg.recovery)
    }

    fn env(&self) -> MarketEnv {
        MarketEnv::new(self.cfg.r)
    }

    fn required(&self, key: &str, p: &Option<PathBuf>) -> Result<PathBuf> {
        p.clone().ok_or_else(|| Error::Config {
            key: key.into(),
            msg: "path required for this command".into(),
        })
    }

    /// Distances to default from `x0`, `x0_file` or `portfolio`, in that order.
    fn explicit_x0s(&self) -> Result<Option<Vec<f64>>> {
        let c = &self.cfg;
        if !c.x0.is_empty() {
            return Ok(Some(c.x0.clone()));
        }
        if let Some(p) = &c.x0_file {
            return Ok(Some(read_x0s(p)?));
        }
        if let Some(p) = &c.portfolio {
            let pf = load_portfolio(p)?;
            return Ok(Some(x0s_from_cds(
                &pf,
                &self.params(c.rho)?,
                &self.env(),
                c.payment_frequency,
            )?));
        }
        Ok(None)
    }

    fn initial_condition(&self) -> Result<InitialCondition> {
        let x0s = self.explicit_x0s()?.ok_or_else(|| Error::Config {
            key: "x0".into(),
            msg: "supply x0, x0_file or portfolio".into(),
        })?;
        InitialCondition::equal_weights(&x0s)
    }

    /// As [`Run::initial_condition`], falling back to the synthetic
    /// pre-crunch portfolio.
    fn initial_condition_or_synthetic(&self) -> Result<InitialCondition> {
        let x0s = match self.explicit_x0s()? {
            Some(x) => x,
            None => {
                log::info!("no x0 source configured; using the synthetic pre-crunch portfolio");
                x0s_from_cds(
                    &synthetic::pre_crunch_portfolio(),
                    &self.params(self.cfg.rho)?,
                    &self.env(),
                    self.cfg.payment_frequency,
                )?
            }
        };
        InitialCondition::equal_weights(&x0s)
    }

    fn solver(&self, dt: f64) -> SolverConfig {
        SolverConfig {
            theta: self.cfg.theta,
            dt,
            scheme: self.cfg.scheme,
            monitoring_times: None,
            lumped: self.cfg.lumped,
        }
    }

    /// Longest date any pricing command needs, so spot and forward runs share a grid.
    fn pricing_horizon(&self) -> f64 {
        let c = &self.cfg;
        c.forwards()
            .iter()
            .map(|f| f.1)
            .chain(c.maturities.iter().copied())
            .fold(0.0, f64::max)
    }

    /// Grid for `horizon`; `all_rho` sizes it for every correlation so that a
    /// correlation sweep shares one mesh.
    fn grid(&self, ic: &InitialCondition, rho: f64, horizon: f64, all_rho: bool) -> Result<Grid> {
        let upper = match self.cfg.grid_upper {
            Some(u) => u,
            None => {
                Grid::default_upper(ic, &self.params(if all_rho { 0.5 } else { rho })?, horizon)
            }
        };
        Grid::new(upper, self.cfg.grid_nodes)
    }

    fn times(&self, horizon: f64, per_year: u32) -> Vec<f64> {
        let n = (horizon * per_year as f64).round() as usize;
        (0..=n).map(|k| k as f64 / per_year as f64).collect()
    }

    /// Loss paths for `rho`, reported at payment dates up to `horizon`. The
    /// decoupled scheme absorbs at `monitoring_per_year` dates.
    fn loss_paths(
        &self,
        ic: &InitialCondition,
        rho: f64,
        horizon: f64,
        grid: Grid,
    ) -> Result<LossPathSet> {
        let mut solver = self.solver(self.cfg.dt);
        if solver.scheme == Scheme::Decoupled {
            solver.monitoring_times = Some(self.times(horizon, self.cfg.monitoring_per_year));
        }
        let sim = LossSimulator::new(&self.params(rho)?, ic, grid, solver)?;
        let times = self.times(horizon, self.cfg.payment_frequency);
        let paths = sim.simulate_batch(
            self.cfg.seed,
            self.cfg.n_sims,
            &times,
            self.cfg.deterministic,
        )?;
        log::info!(
            "rho {rho}: {} paths, max monotone adjustment {:.2e}, max mass defect {:.2e}",
            paths.n_paths(),
            paths.max_adjustment,
            paths.max_mass_defect
        );
        Ok(paths)
    }

    fn tranches(&self) -> Result<Vec<Tranche>> {
        self.cfg
            .tranches
            .iter()
            .map(|s| Tranche::parse(s))
            .collect()
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.10}")
}

fn csv_line(w: &mut impl Write, fields: &[String]) -> Result<()> {
    writeln!(w, "{}", fields.join(","))?;
    Ok(())
}

pub fn calibrate(run: &Run) -> Result<()> {
    let c = &run.cfg;
    let index = load_index(run.required("index", &c.index)?)?;
    let portfolio = load_portfolio(run.required("portfolio", &c.portfolio)?)?;
    let search = SigmaSearch {
        frequency: c.payment_frequency,
        ..SigmaSearch::default()
    };
    let result = calibrate_sigma(&index, &portfolio, &run.params(c.rho)?, &run.env(), &search)?;
    write_calibration_report(&result, run.create("calibration.csv")?)?;
    write_x0s(&result, run.create("x0.csv")?)?;
    let mut w = run.create("sigma.txt")?;
    writeln!(w, "sigma = {}", result.sigma)?;
    writeln!(w, "objective_bp2 = {:e}", result.objective)?;
    writeln!(w, "evaluations = {}", result.evaluations)?;
    w.flush()?;
    Ok(())
}

pub fn price_tranches(run: &Run) -> Result<()> {
    let c = &run.cfg;
    let ic = run.initial_condition()?;
    let tranches = run.tranches()?;
    let horizon = c.maturities.iter().copied().fold(0.0, f64::max);
    let grid = run.grid(&ic, c.rho, run.pricing_horizon(), true)?;
    let env = run.env();
    let mut rows = Vec::new();
    for rho in c.rho_values() {
        let paths = run.loss_paths(&ic, rho, horizon, grid)?;
        for &m in &c.maturities {
            let sched = build_schedule(0.0, m, c.payment_frequency)?;
            for tr in &tranches {
                let l = legs(&paths, tr, &sched, &env, c.recovery, None)?;
                rows.push(ReportRow::new(tr.label(), m, rho, l, tr.quoting)?);
            }
            let l = index_legs(&paths, &sched, &env, c.recovery)?;
            rows.push(ReportRow::new(
                "index".into(),
                m,
                rho,
                l,
                credit_spde::pricing::Quoting::RunningSpread,
            )?);
        }
    }
    write_report(&rows, run.create("tranches.csv")?)
}

pub fn price_forward(run: &Run) -> Result<()> {
    let c = &run.cfg;
    let ic = run.initial_condition()?;
    let tranches = run.tranches()?;
    let forwards = c.forwards();
    let horizon = forwards.iter().map(|f| f.1).fold(0.0, f64::max);
    let grid = run.grid(&ic, c.rho, run.pricing_horizon(), true)?;
    let env = run.env();
    let mut w = run.create("forwards.csv")?;
    csv_line(
        &mut w,
        &[
            "tranche",
            "start",
            "end",
            "rho",
            "non_resetting_bp",
            "non_resetting_stderr",
            "resetting_bp",
            "resetting_stderr",
        ]
        .map(String::from),
    )?;
    let spread = |l: &credit_spde::pricing::LegValues| match (par_spread(l), par_spread_stderr(l)) {
        (Ok(s), Ok(e)) => (format!("{s:.6}"), format!("{e:.6}")),
        _ => (String::new(), String::new()),
    };
    for rho in c.rho_values() {
        let paths = run.loss_paths(&ic, rho, horizon, grid)?;
        for &(start, end) in &forwards {
            let sched = build_schedule(start, end, c.payment_frequency)?;
            for tr in &tranches {
                let non = legs(
                    &paths,
                    tr,
                    &sched,
                    &env,
                    c.recovery,
                    Some(&ForwardSpec::new(start, end, Reset::NonResetting)?),
                )?;
                let res = legs(
                    &paths,
                    tr,
                    &sched,
                    &env,
                    c.recovery,
                    Some(&ForwardSpec::new(start, end, Reset::Resetting)?),
                )?;
                let (ns, ne) = spread(&non);
                let (rs, re) = spread(&res);
                if ns.is_empty() {
                    log::warn!(
                        "{} ({start}, {end}] rho {rho}: non-resetting fee leg is zero",
                        tr.label()
                    );
                }
                csv_line(
                    &mut w,
                    &[
                        tr.label(),
                        start.to_string(),
                        end.to_string(),
                        rho.to_string(),
                        ns,
                        ne,
                        rs,
                        re,
                    ],
                )?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn convergence_study(run: &Run) -> Result<()> {
    let c = &run.cfg;
    let ic = run.initial_condition_or_synthetic()?;
    let horizon = c.study_horizon;
    let params = run.params(c.rho)?;
    let grid = run.grid(&ic, c.rho, horizon, false)?;

    let sizes = mc_sizes(c.mc_levels);
    let needed = *sizes.last().unwrap_or(&16);
    let mc_run = Run {
        cfg: RunConfig {
            n_sims: needed,
            ..c.clone()
        },
        out: run.out.clone(),
    };
    let paths = mc_run.loss_paths(&ic, c.rho, horizon, grid)?;
    let tranches: Vec<Tranche> = ["0-3", "6-9", "12-22"]
        .iter()
        .map(|s| Tranche::parse(s))
        .collect::<Result<_>>()?;
    let rows = mc_error_table(&paths, horizon, &tranches, c.recovery, &sizes)?;
    let mut w = run.create("mc_error.csv")?;
    csv_line(
        &mut w,
        &["n_sims", "tranche", "expected_loss", "stderr"].map(String::from),
    )?;
    for r in &rows {
        csv_line(
            &mut w,
            &[
                r.n_sims.to_string(),
                r.tranche.label(),
                fmt(r.expected_loss),
                fmt(r.stderr),
            ],
        )?;
    }
    w.flush()?;
    let mut w = run.create("mc_slope.csv")?;
    csv_line(&mut w, &["tranche", "loglog_slope"].map(String::from))?;
    for tr in &tranches {
        let (ns, ses): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .filter(|r| r.tranche == *tr && r.stderr > 0.0)
            .map(|r| (r.n_sims as f64, r.stderr))
            .unzip();
        let slope = if ns.len() >= 2 {
            loglog_slope(&ns, &ses)
        } else {
            f64::NAN
        };
        csv_line(&mut w, &[tr.label(), format!("{slope:.6}")])?;
    }
    w.flush()?;

    let weak_grid = Grid::new(grid.upper(), c.weak_grid_nodes)?;
    let dts = [c.weak_dts[0], c.weak_dts[1], c.weak_dts[2]];
    let wo = weak_order(
        &params,
        &ic,
        weak_grid,
        c.theta,
        dts,
        c.weak_paths,
        c.seed,
        horizon,
        c.deterministic,
    )?;
    let mut w = run.create("weak_order.csv")?;
    csv_line(
        &mut w,
        &["dt", "mean_loss", "stderr", "exact_mean"].map(String::from),
    )?;
    for j in 0..3 {
        csv_line(
            &mut w,
            &[
                wo.dts[j].to_string(),
                fmt(wo.means[j]),
                fmt(wo.stderrs[j]),
                fmt(wo.exact_means[j]),
            ],
        )?;
    }
    writeln!(w, "# richardson_ratio = {:.6}", wo.ratio)?;
    writeln!(
        w,
        "# difference_stderrs = {:.3e} {:.3e}",
        wo.difference_stderrs[0], wo.difference_stderrs[1]
    )?;
    writeln!(w, "# exact_ratio = {:.6}", wo.exact_ratio)?;
    w.flush()?;

    let full = SolverConfig {
        scheme: Scheme::FullSpde,
        ..run.solver(c.dt)
    };
    let rows = space_order(&params, &ic, grid.upper(), &c.space_nodes, &full, horizon)?;
    let mut w = run.create("space_order.csv")?;
    csv_line(
        &mut w,
        &["nodes", "h", "loss", "analytic", "abs_error"].map(String::from),
    )?;
    for r in &rows {
        csv_line(
            &mut w,
            &[
                r.nodes.to_string(),
                fmt(r.spacing),
                fmt(r.loss),
                fmt(r.analytic),
                format!("{:.3e}", r.error()),
            ],
        )?;
    }
    w.flush()?;

    let sim = LossSimulator::new(&params, &ic, grid, full)?;
    let n = c.oracle_paths.clamp(1, 20);
    let times = [0.0, horizon];
    let steps = sim.steps_to(&times)?;
    let mut w = run.create("boundary_mass.csv")?;
    csv_line(
        &mut w,
        &["path", "grid_upper", "upper_leak", "mass_defect"].map(String::from),
    )?;
    for k in 0..n {
        let path = credit_spde::market_path::MarketPath::generate(c.seed, k as u64, steps, c.dt);
        let lp = sim.simulate(&path, &times)?;
        let defect = lp
            .diagnostics
            .mass_defect
            .iter()
            .copied()
            .fold(0.0, f64::max);
        csv_line(
            &mut w,
            &[
                k.to_string(),
                fmt(grid.upper()),
                format!("{:.3e}", lp.diagnostics.upper_leak),
                format!("{defect:.3e}"),
            ],
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn simulate_basket(run: &Run) -> Result<()> {
    let c = &run.cfg;
    let ic = run.initial_condition_or_synthetic()?;
    let horizon = c.study_horizon;
    let params = run.params(c.rho)?;
    let grid = run.grid(&ic, c.rho, horizon, false)?;
    let sim = LossSimulator::new(
        &params,
        &ic,
        grid,
        SolverConfig {
            scheme: Scheme::FullSpde,
            ..run.solver(c.oracle_dt)
        },
    )?;
    let cmp = compare_oracles(
        &sim,
        &ic,
        horizon,
        c.oracle_paths,
        c.seed,
        &c.basket_sizes,
        &FilterConfig::new(grid.upper()),
        c.deterministic,
    )?;
    let mut w = run.create("oracle_paths.csv")?;
    let mut header = vec!["path".to_string(), "spde".into(), "filtering".into()];
    header.extend(c.basket_sizes.iter().map(|n| format!("basket_{n}")));
    csv_line(&mut w, &header)?;
    for r in &cmp.rows {
        let mut f = vec![r.path.to_string(), fmt(r.spde), fmt(r.filtering)];
        f.extend(r.baskets.iter().map(|&b| fmt(b)));
        csv_line(&mut w, &f)?;
    }
    w.flush()?;
    let mut w = run.create("oracle_gaps.csv")?;
    csv_line(&mut w, &["oracle", "n_firms", "rms_gap"].map(String::from))?;
    csv_line(
        &mut w,
        &[
            "filtering".into(),
            String::new(),
            format!("{:.6e}", cmp.filtering_rms()),
        ],
    )?;
    for (n, g) in c.basket_sizes.iter().zip(cmp.basket_rms()) {
        csv_line(
            &mut w,
            &["basket".into(), n.to_string(), format!("{g:.6e}")],
        )?;
    }
    if c.rho == 0.0 {
        let exact = ic.expected_default_fraction(params.mu(), horizon);
        csv_line(&mut w, &["closed_form".into(), String::new(), fmt(exact)])?;
    }
    w.flush()?;
    Ok(())
}
