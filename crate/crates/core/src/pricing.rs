//! Tranche, index and forward-tranche valuation from simulated loss paths.
//!
//! Loss paths carry default fractions. Monetary portfolio loss is
//! `(1 - R) * L`, and tranche attachment points are compared against it.
//! Losses are paid at coupon dates.

use std::io::Write;

use crate::engine::LossPathSet;
use crate::error::{Error, Result};
use crate::market_data::{MarketEnv, Schedule, BP};

/// Running coupon assumed by upfront quotes.
pub const UPFRONT_RUNNING: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quoting {
    RunningSpread,
    /// Upfront percentage with a 500bp running coupon.
    UpfrontPlus500,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tranche {
    pub attachment: f64,
    pub detachment: f64,
    pub quoting: Quoting,
}

impl Tranche {
    pub fn new(attachment: f64, detachment: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&attachment) || !(detachment > attachment && detachment <= 1.0) {
            return Err(Error::Validation(format!(
                "tranche needs 0 <= a < d <= 1, got ({attachment}, {detachment})"
            )));
        }
        Ok(Self {
            attachment,
            detachment,
            quoting: Quoting::RunningSpread,
        })
    }

    pub fn upfront(attachment: f64, detachment: f64) -> Result<Self> {
        Ok(Self {
            quoting: Quoting::UpfrontPlus500,
            ..Self::new(attachment, detachment)?
        })
    }

    pub fn width(&self) -> f64 {
        self.detachment - self.attachment
    }

    /// `"3-6%"` style label.
    pub fn label(&self) -> String {
        let pct = |x: f64| {
            let v = (x * 1e4).round() / 100.0;
            format!("{v}")
        };
        format!("{}-{}%", pct(self.attachment), pct(self.detachment))
    }

    /// Parses `"3-6"` (percent) into a running-spread tranche; the equity
    /// tranche starting at zero is upfront-quoted.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim().trim_end_matches('%');
        let (a, d) = s
            .split_once('-')
            .ok_or_else(|| Error::Validation(format!("tranche `{s}` is not of the form a-d")))?;
        let num = |x: &str| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| Error::Validation(format!("bad tranche bound `{x}`")))
        };
        let (a, d) = (num(a)? / 100.0, num(d)? / 100.0);
        if a == 0.0 {
            Tranche::upfront(a, d)
        } else {
            Tranche::new(a, d)
        }
    }

    /// The standard capital structure 0-3, 3-6, 6-9, 9-12, 12-22, 22-100.
    pub fn standard() -> Vec<Tranche> {
        [
            (0.0, 0.03),
            (0.03, 0.06),
            (0.06, 0.09),
            (0.09, 0.12),
            (0.12, 0.22),
            (0.22, 1.0),
        ]
        .iter()
        .map(|&(a, d)| Tranche::parse(&format!("{}-{}", a * 100.0, d * 100.0)).unwrap())
        .collect()
    }
}

/// Outstanding tranche notional `Z = [d - L]^+ - [a - L]^+` at monetary loss `l`.
pub fn tranche_notional(l: f64, tr: &Tranche) -> f64 {
    (tr.detachment - l).max(0.0) - (tr.attachment - l).max(0.0)
}

/// Tranche loss `Y = [L - a]^+ - [L - d]^+`; `Y + Z = d - a`.
pub fn tranche_loss(l: f64, tr: &Tranche) -> f64 {
    (l - tr.attachment).max(0.0) - (l - tr.detachment).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reset {
    Resetting,
    NonResetting,
}

/// Forward-starting contract over `(start, end]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardSpec {
    pub start: f64,
    pub end: f64,
    pub reset: Reset,
}

impl ForwardSpec {
    pub fn new(start: f64, end: f64, reset: Reset) -> Result<Self> {
        if !(start >= 0.0 && end > start) {
            return Err(Error::Validation(format!(
                "forward needs 0 <= T < T*, got ({start}, {end})"
            )));
        }
        Ok(Self { start, end, reset })
    }
}

/// Monte-Carlo leg values with their sampling statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegValues {
    /// Fee leg per unit spread.
    pub fee: f64,
    pub protection: f64,
    pub fee_se: f64,
    pub protection_se: f64,
    /// Sample covariance of the per-path fee and protection values, divided
    /// by the number of paths.
    pub covariance: f64,
    /// Tranche width `d - a`.
    pub notional: f64,
}

impl LegValues {
    /// Leg values known exactly.
    pub fn exact(fee: f64, protection: f64, notional: f64) -> Self {
        Self {
            fee,
            protection,
            fee_se: 0.0,
            protection_se: 0.0,
            covariance: 0.0,
            notional,
        }
    }

    fn from_samples(fee: &[f64], prot: &[f64], notional: f64) -> Self {
        let n = fee.len() as f64;
        let mf = fee.iter().sum::<f64>() / n;
        let mp = prot.iter().sum::<f64>() / n;
        let (mut vf, mut vp, mut c) = (0.0, 0.0, 0.0);
        if fee.len() > 1 {
            for (f, p) in fee.iter().zip(prot) {
                vf += (f - mf) * (f - mf);
                vp += (p - mp) * (p - mp);
                c += (f - mf) * (p - mp);
            }
            let d = (n - 1.0) * n;
            vf /= d;
            vp /= d;
            c /= d;
        }
        Self {
            fee: mf,
            protection: mp,
            fee_se: vf.sqrt(),
            protection_se: vp.sqrt(),
            covariance: c,
            notional,
        }
    }
}

/// Reporting index of `t` in `paths`, or a validation error.
fn index_of(paths: &LossPathSet, t: f64) -> Result<usize> {
    paths
        .time_index(t)
        .ok_or_else(|| Error::Validation(format!("loss paths are not sampled at t = {t}")))
}

/// Fee and protection legs of `tr` over `schedule`. For a forward the
/// schedule must cover `(start, end]`; a resetting forward measures losses
/// from its start date only.
pub fn legs(
    paths: &LossPathSet,
    tr: &Tranche,
    schedule: &Schedule,
    env: &MarketEnv,
    recovery: f64,
    forward: Option<&ForwardSpec>,
) -> Result<LegValues> {
    if paths.n_paths() == 0 {
        return Err(Error::Validation("no loss paths supplied".into()));
    }
    let start = schedule.start();
    if let Some(f) = forward {
        if (f.start - start).abs() > 1e-9 || (f.end - schedule.end()).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "schedule ({start}, {}] does not match forward ({}, {}]",
                schedule.end(),
                f.start,
                f.end
            )));
        }
    }
    let resetting = matches!(
        forward,
        Some(ForwardSpec {
            reset: Reset::Resetting,
            ..
        })
    );
    let k0 = index_of(paths, start)?;
    let ks: Vec<usize> = schedule
        .payment_times()
        .iter()
        .map(|&t| index_of(paths, t))
        .collect::<Result<_>>()?;
    let disc: Vec<f64> = schedule
        .payment_times()
        .iter()
        .map(|&t| env.discount(t))
        .collect();
    let accr = schedule.accruals();
    let lgd = 1.0 - recovery;
    let mut fee = Vec::with_capacity(paths.n_paths());
    let mut prot = Vec::with_capacity(paths.n_paths());
    for row in paths.iter() {
        let base = if resetting { row[k0] } else { 0.0 };
        let z = |k: usize| tranche_notional(lgd * (row[k] - base), tr);
        let mut prev = z(k0);
        let (mut f, mut p) = (0.0, 0.0);
        for ((&k, &df), &d) in ks.iter().zip(&disc).zip(&accr) {
            let zk = z(k);
            f += d * df * zk;
            p += df * (prev - zk);
            prev = zk;
        }
        fee.push(f);
        prot.push(p);
    }
    Ok(LegValues::from_samples(&fee, &prot, tr.width()))
}

/// Index legs: fee on the surviving fraction `1 - L`, protection on
/// `(1 - R) dL`.
pub fn index_legs(
    paths: &LossPathSet,
    schedule: &Schedule,
    env: &MarketEnv,
    recovery: f64,
) -> Result<LegValues> {
    if paths.n_paths() == 0 {
        return Err(Error::Validation("no loss paths supplied".into()));
    }
    let k0 = index_of(paths, schedule.start())?;
    let ks: Vec<usize> = schedule
        .payment_times()
        .iter()
        .map(|&t| index_of(paths, t))
        .collect::<Result<_>>()?;
    let disc: Vec<f64> = schedule
        .payment_times()
        .iter()
        .map(|&t| env.discount(t))
        .collect();
    let accr = schedule.accruals();
    let mut fee = Vec::with_capacity(paths.n_paths());
    let mut prot = Vec::with_capacity(paths.n_paths());
    for row in paths.iter() {
        let mut prev = row[k0];
        let (mut f, mut p) = (0.0, 0.0);
        for ((&k, &df), &d) in ks.iter().zip(&disc).zip(&accr) {
            f += d * df * (1.0 - row[k]);
            p += df * (1.0 - recovery) * (row[k] - prev);
            prev = row[k];
        }
        fee.push(f);
        prot.push(p);
    }
    Ok(LegValues::from_samples(&fee, &prot, 1.0))
}

/// Par spread `V_prot / V_fee` in basis points.
pub fn par_spread(legs: &LegValues) -> Result<f64> {
    if !(legs.fee > 0.0) {
        return Err(Error::UndefinedSpread(legs.fee));
    }
    Ok(legs.protection / legs.fee / BP)
}

/// Delta-method standard error of [`par_spread`], in basis points.
pub fn par_spread_stderr(legs: &LegValues) -> Result<f64> {
    let s = par_spread(legs)? * BP;
    let var = legs.protection_se.powi(2) - 2.0 * s * legs.covariance + s * s * legs.fee_se.powi(2);
    Ok(var.max(0.0).sqrt() / legs.fee / BP)
}

/// Upfront in percent of tranche notional that makes the tranche fair with
/// running coupon `running` (a decimal, 0.05 for 500bp).
pub fn equity_upfront(legs: &LegValues, running: f64) -> f64 {
    (legs.protection - running * legs.fee) / legs.notional * 100.0
}

pub fn equity_upfront_stderr(legs: &LegValues, running: f64) -> f64 {
    let var = legs.protection_se.powi(2) - 2.0 * running * legs.covariance
        + running * running * legs.fee_se.powi(2);
    var.max(0.0).sqrt() / legs.notional * 100.0
}

/// Index par spread in basis points.
pub fn index_spread(
    paths: &LossPathSet,
    schedule: &Schedule,
    env: &MarketEnv,
    recovery: f64,
) -> Result<f64> {
    par_spread(&index_legs(paths, schedule, env, recovery)?)
}

/// Quoted value of a tranche: spread in bp, or upfront in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quote {
    pub value: f64,
    pub stderr: f64,
}

pub fn quote(legs: &LegValues, quoting: Quoting) -> Result<Quote> {
    match quoting {
        Quoting::RunningSpread => Ok(Quote {
            value: par_spread(legs)?,
            stderr: par_spread_stderr(legs)?,
        }),
        Quoting::UpfrontPlus500 => Ok(Quote {
            value: equity_upfront(legs, UPFRONT_RUNNING),
            stderr: equity_upfront_stderr(legs, UPFRONT_RUNNING),
        }),
    }
}

/// One line of a tranche report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub tranche: String,
    pub maturity: f64,
    pub rho: f64,
    pub legs: LegValues,
    pub spread_bp: Option<f64>,
    pub upfront_pct: Option<f64>,
    pub stderr: f64,
}

impl ReportRow {
    pub fn new(
        label: String,
        maturity: f64,
        rho: f64,
        legs: LegValues,
        quoting: Quoting,
    ) -> Result<Self> {
        let q = quote(&legs, quoting)?;
        let (spread_bp, upfront_pct) = match quoting {
            Quoting::RunningSpread => (Some(q.value), None),
            Quoting::UpfrontPlus500 => (None, Some(q.value)),
        };
        Ok(Self {
            tranche: label,
            maturity,
            rho,
            legs,
            spread_bp,
            upfront_pct,
            stderr: q.stderr,
        })
    }
}

pub fn write_report<W: Write>(rows: &[ReportRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record([
        "tranche",
        "maturity",
        "rho",
        "fee_leg",
        "prot_leg",
        "spread_bp",
        "upfront_pct",
        "mc_stderr",
    ])
    .map_err(io)?;
    let opt = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.tranche.clone(),
            format!("{}", r.maturity),
            format!("{}", r.rho),
            format!("{:.10}", r.legs.fee),
            format!("{:.10}", r.legs.protection),
            opt(r.spread_bp),
            opt(r.upfront_pct),
            format!("{:.6}", r.stderr),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::build_schedule;
    use proptest::prelude::*;

    fn quarterly(n: usize, horizon: f64) -> Vec<f64> {
        (0..=n).map(|k| k as f64 * horizon / n as f64).collect()
    }

    fn sample_paths() -> LossPathSet {
        let times = quarterly(40, 10.0);
        let rows = (0..50)
            .map(|p| {
                let rate = 0.002 + 0.004 * p as f64;
                times.iter().map(|t| 1.0 - (-rate * t).exp()).collect()
            })
            .collect();
        LossPathSet::from_rows(times, rows).unwrap()
    }

    #[test]
    fn notional_and_loss_examples() {
        let tr = Tranche::new(0.03, 0.06).unwrap();
        assert!((tranche_notional(0.0, &tr) - 0.03).abs() < 1e-15);
        assert!((tranche_notional(0.04, &tr) - 0.02).abs() < 1e-15);
        assert_eq!(tranche_notional(1.0, &tr), 0.0);
        assert_eq!(tranche_loss(0.0, &tr), 0.0);
        assert!((tranche_loss(0.05, &tr) - 0.02).abs() < 1e-15);
        assert!(Tranche::new(0.06, 0.03).is_err());
    }

    #[test]
    fn labels_and_parsing() {
        let t = Tranche::parse("3-6").unwrap();
        assert_eq!(t.label(), "3-6%");
        assert_eq!(t.quoting, Quoting::RunningSpread);
        assert_eq!(
            Tranche::parse("0-3%").unwrap().quoting,
            Quoting::UpfrontPlus500
        );
        assert_eq!(Tranche::parse("22-100").unwrap().label(), "22-100%");
        assert!(Tranche::parse("nonsense").is_err());
        assert_eq!(Tranche::standard().len(), 6);
    }

    #[test]
    fn riskless_paths_give_annuity() {
        let times = quarterly(20, 5.0);
        let paths = LossPathSet::from_rows(times.clone(), vec![vec![0.0; times.len()]; 3]).unwrap();
        let sched = build_schedule(0.0, 5.0, 4).unwrap();
        let env = MarketEnv::new(0.042);
        let tr = Tranche::new(0.03, 0.06).unwrap();
        let l = legs(&paths, &tr, &sched, &env, 0.4, None).unwrap();
        let annuity: f64 = sched
            .payment_times()
            .iter()
            .map(|&t| 0.25 * env.discount(t))
            .sum::<f64>()
            * 0.03;
        assert!((l.fee - annuity).abs() < 1e-15);
        assert_eq!(l.protection, 0.0);
        assert_eq!(par_spread(&l).unwrap(), 0.0);
        assert_eq!(index_spread(&paths, &sched, &env, 0.4).unwrap(), 0.0);
    }

    #[test]
    fn spread_and_upfront_algebra() {
        let l = LegValues::exact(2.0, 2.0, 0.03);
        assert!((par_spread(&l).unwrap() - 10_000.0).abs() < 1e-9);
        let l = LegValues::exact(2.0, 0.1, 0.03);
        assert!(equity_upfront(&l, 0.05).abs() < 1e-12);
        let l = LegValues::exact(2.0, 0.0, 0.03);
        assert!((equity_upfront(&l, 0.05) + 0.05 * 2.0 / 0.03 * 100.0).abs() < 1e-9);
        assert!(matches!(
            par_spread(&LegValues::exact(0.0, 1.0, 0.03)),
            Err(Error::UndefinedSpread(_))
        ));
        // upfront sign flips where the spread crosses 500bp
        for prot in [0.09, 0.1, 0.11] {
            let l = LegValues::exact(2.0, prot, 0.03);
            let s = par_spread(&l).unwrap();
            let u = equity_upfront(&l, 0.05);
            assert_eq!(s > 500.0 + 1e-9, u > 1e-12);
        }
    }

    #[test]
    fn discount_scaling_leaves_spread_unchanged() {
        let l = LegValues::exact(1.7, 0.03, 0.03);
        let scaled = LegValues::exact(3.4, 0.06, 0.03);
        assert!((par_spread(&l).unwrap() - par_spread(&scaled).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn protection_legs_sum_over_capital_structure() {
        let paths = sample_paths();
        let sched = build_schedule(0.0, 10.0, 4).unwrap();
        let env = MarketEnv::new(0.042);
        let total: f64 = Tranche::standard()
            .iter()
            .map(|t| legs(&paths, t, &sched, &env, 0.4, None).unwrap().protection)
            .sum();
        let whole = legs(
            &paths,
            &Tranche::new(0.0, 1.0).unwrap(),
            &sched,
            &env,
            0.4,
            None,
        )
        .unwrap();
        let index = index_legs(&paths, &sched, &env, 0.4).unwrap();
        assert!((total - whole.protection).abs() < 1e-10);
        assert!((whole.protection - index.protection).abs() < 1e-10);
    }

    #[test]
    fn spread_falls_with_attachment() {
        let paths = sample_paths();
        let sched = build_schedule(0.0, 10.0, 4).unwrap();
        let env = MarketEnv::new(0.042);
        let spreads: Vec<f64> = (0..8)
            .map(|k| {
                let tr = Tranche::new(0.01 * k as f64, 0.01 * k as f64 + 0.03).unwrap();
                par_spread(&legs(&paths, &tr, &sched, &env, 0.4, None).unwrap()).unwrap()
            })
            .collect();
        assert!(spreads.windows(2).all(|w| w[1] <= w[0]), "{spreads:?}");
    }

    #[test]
    fn forwards_starting_today_are_spot() {
        let paths = sample_paths();
        let sched = build_schedule(0.0, 5.0, 4).unwrap();
        let env = MarketEnv::new(0.042);
        let tr = Tranche::new(0.03, 0.06).unwrap();
        let spot = legs(&paths, &tr, &sched, &env, 0.4, None).unwrap();
        for reset in [Reset::Resetting, Reset::NonResetting] {
            let f = ForwardSpec::new(0.0, 5.0, reset).unwrap();
            let fwd = legs(&paths, &tr, &sched, &env, 0.4, Some(&f)).unwrap();
            assert_eq!(spot, fwd);
        }
        let f = ForwardSpec::new(1.0, 6.0, Reset::Resetting).unwrap();
        assert!(legs(&paths, &tr, &sched, &env, 0.4, Some(&f)).is_err());
    }

    #[test]
    fn resetting_forward_ignores_earlier_losses() {
        // all losses happen before the forward start
        let times = quarterly(24, 6.0);
        let row: Vec<f64> = times
            .iter()
            .map(|&t| if t < 0.9 { 0.0 } else { 0.1 })
            .collect();
        let paths = LossPathSet::from_rows(times, vec![row]).unwrap();
        let sched = build_schedule(1.0, 6.0, 4).unwrap();
        let env = MarketEnv::new(0.0);
        let tr = Tranche::new(0.03, 0.06).unwrap();
        let f = ForwardSpec::new(1.0, 6.0, Reset::Resetting).unwrap();
        let reset = legs(&paths, &tr, &sched, &env, 0.4, Some(&f)).unwrap();
        assert_eq!(reset.protection, 0.0);
        assert!((reset.fee - 5.0 * 0.03).abs() < 1e-12);
        let f = ForwardSpec::new(1.0, 6.0, Reset::NonResetting).unwrap();
        let non = legs(&paths, &tr, &sched, &env, 0.4, Some(&f)).unwrap();
        // loss 0.06 wipes out the whole tranche before the start
        assert_eq!(non.fee, 0.0);
        assert!(matches!(par_spread(&non), Err(Error::UndefinedSpread(_))));
    }

    #[test]
    fn full_recovery_has_no_protection() {
        let paths = sample_paths();
        let sched = build_schedule(0.0, 5.0, 4).unwrap();
        let s = index_spread(&paths, &sched, &MarketEnv::new(0.042), 1.0).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn report_has_expected_columns() {
        let rows = vec![
            ReportRow::new(
                "0-3%".into(),
                5.0,
                0.3,
                LegValues::exact(0.1, 0.02, 0.03),
                Quoting::UpfrontPlus500,
            )
            .unwrap(),
            ReportRow::new(
                "3-6%".into(),
                5.0,
                0.3,
                LegValues::exact(0.1, 0.001, 0.03),
                Quoting::RunningSpread,
            )
            .unwrap(),
        ];
        let mut out = Vec::new();
        write_report(&rows, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "tranche,maturity,rho,fee_leg,prot_leg,spread_bp,upfront_pct,mc_stderr"
        );
        assert!(lines[1].starts_with("0-3%,5,0.3,"));
        assert!(lines[2].contains(",100.000000,,"));
    }

    proptest! {
        #[test]
        fn notional_plus_loss_is_width(l in 0.0f64..1.0, a in 0.0f64..0.5, w in 0.001f64..0.5) {
            let tr = Tranche::new(a, (a + w).min(1.0)).unwrap();
            let z = tranche_notional(l, &tr);
            let y = tranche_loss(l, &tr);
            prop_assert!((y + z - tr.width()).abs() < 1e-12);
            prop_assert!(z >= 0.0 && z <= tr.width() + 1e-15);
        }
    }
}
