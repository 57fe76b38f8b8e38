//! Flat `key = value` run configuration.
//!
//! Unknown keys and unparsable values are rejected with the offending key
//! named. [`RunConfig::render`] writes every key back out, so a rendered
//! config reproduces the run it came from.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use credit_spde::engine::Scheme;
use credit_spde::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub r: f64,
    pub recovery: f64,
    pub sigma: f64,
    pub rho: f64,
    /// `None` picks the upper boundary from the initial condition.
    pub grid_upper: Option<f64>,
    pub grid_nodes: usize,
    pub dt: f64,
    pub n_sims: usize,
    pub seed: u64,
    pub theta: f64,
    pub scheme: Scheme,
    pub lumped: bool,
    /// Absorption dates per year for the decoupled scheme.
    pub monitoring_per_year: u32,
    pub payment_frequency: u32,
    pub maturities: Vec<f64>,
    pub tranches: Vec<String>,
    /// Empty means `[rho]`.
    pub rho_grid: Vec<f64>,
    pub portfolio: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub x0_file: Option<PathBuf>,
    pub x0: Vec<f64>,
    pub forward_starts: Vec<f64>,
    pub forward_ends: Vec<f64>,
    pub forward_tenor: Option<f64>,
    pub basket_sizes: Vec<usize>,
    pub oracle_paths: usize,
    pub oracle_dt: f64,
    pub study_horizon: f64,
    pub mc_levels: u32,
    pub weak_dts: Vec<f64>,
    pub weak_paths: usize,
    pub weak_grid_nodes: usize,
    pub space_nodes: Vec<usize>,
    pub deterministic: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            r: 0.042,
            recovery: 0.4,
            sigma: 0.22,
            rho: 0.3,
            grid_upper: None,
            grid_nodes: 2001,
            dt: 1.0 / 500.0,
            n_sims: 10_000,
            seed: 1,
            theta: 1.0,
            scheme: Scheme::FullSpde,
            lumped: true,
            monitoring_per_year: 4,
            payment_frequency: 4,
            maturities: vec![5.0, 7.0, 10.0],
            tranches: ["0-3", "3-6", "6-9", "9-12", "12-22", "22-100"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            rho_grid: Vec::new(),
            portfolio: None,
            index: None,
            x0_file: None,
            x0: Vec::new(),
            forward_starts: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            forward_ends: Vec::new(),
            forward_tenor: Some(5.0),
            basket_sizes: vec![125, 500, 2000],
            oracle_paths: 200,
            oracle_dt: 1.0 / 1000.0,
            study_horizon: 5.0,
            mc_levels: 7,
            weak_dts: vec![1.0 / 125.0, 1.0 / 250.0, 1.0 / 500.0],
            weak_paths: 10_000,
            weak_grid_nodes: 401,
            space_nodes: vec![251, 501, 1001, 2001],
            deterministic: false,
        }
    }
}

fn bad(key: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        msg: msg.into(),
    }
}

/// Number, optionally written as a fraction `a/b`.
fn number(key: &str, v: &str) -> Result<f64> {
    let parsed = match v.split_once('/') {
        Some((a, b)) => a
            .trim()
            .parse::<f64>()
            .ok()
            .zip(b.trim().parse::<f64>().ok())
            .map(|(a, b)| a / b),
        None => v.parse::<f64>().ok(),
    };
    parsed
        .filter(|x| x.is_finite())
        .ok_or_else(|| bad(key, format!("`{v}` is not a number")))
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| bad(key, format!("cannot parse `{v}`")))
}

fn list<T>(key: &str, v: &str, item: impl Fn(&str, &str) -> Result<T>) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| item(key, s))
        .collect()
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(key, format!("`{v}` is not a boolean"))),
    }
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

impl RunConfig {
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(line, "expected `key = value`"))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })?;
        Self::parse_str(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "r" => self.r = number(key, v)?,
            "recovery" => self.recovery = number(key, v)?,
            "sigma" => self.sigma = number(key, v)?,
            "rho" => self.rho = number(key, v)?,
            "grid_upper" => {
                self.grid_upper = if v == "auto" {
                    None
                } else {
                    Some(number(key, v)?)
                }
            }
            "grid_nodes" => self.grid_nodes = parse(key, v)?,
            "dt" => self.dt = number(key, v)?,
            "n_sims" => self.n_sims = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "theta" => self.theta = number(key, v)?,
            "scheme" => self.scheme = parse(key, v)?,
            "lumped" => self.lumped = boolean(key, v)?,
            "monitoring_per_year" => self.monitoring_per_year = parse(key, v)?,
            "payment_frequency" => self.payment_frequency = parse(key, v)?,
            "maturities" => self.maturities = list(key, v, number)?,
            "tranches" => self.tranches = list(key, v, |_, s| Ok(s.to_string()))?,
            "rho_grid" => self.rho_grid = list(key, v, number)?,
            "portfolio" => self.portfolio = path(v),
            "index" => self.index = path(v),
            "x0_file" => self.x0_file = path(v),
            "x0" => self.x0 = list(key, v, number)?,
            "forward_starts" => self.forward_starts = list(key, v, number)?,
            "forward_ends" => self.forward_ends = list(key, v, number)?,
            "forward_tenor" => {
                self.forward_tenor = if v.is_empty() {
                    None
                } else {
                    Some(number(key, v)?)
                }
            }
            "basket_sizes" => self.basket_sizes = list(key, v, parse)?,
            "oracle_paths" => self.oracle_paths = parse(key, v)?,
            "oracle_dt" => self.oracle_dt = number(key, v)?,
            "study_horizon" => self.study_horizon = number(key, v)?,
            "mc_levels" => self.mc_levels = parse(key, v)?,
            "weak_dts" => self.weak_dts = list(key, v, number)?,
            "weak_paths" => self.weak_paths = parse(key, v)?,
            "weak_grid_nodes" => self.weak_grid_nodes = parse(key, v)?,
            "space_nodes" => self.space_nodes = list(key, v, parse)?,
            "deterministic" => self.deterministic = boolean(key, v)?,
            _ => return Err(bad(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |key: &str, x: f64| {
            if (0.0..1.0).contains(&x) {
                Ok(())
            } else {
                Err(bad(key, format!("must lie in [0, 1), got {x}")))
            }
        };
        unit("recovery", self.recovery)?;
        unit("rho", self.rho)?;
        for &x in &self.rho_grid {
            unit("rho_grid", x)?;
        }
        if !(self.sigma > 0.0) {
            return Err(bad("sigma", "must be positive"));
        }
        if !(self.dt > 0.0) {
            return Err(bad("dt", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(bad("theta", "must lie in [0, 1]"));
        }
        if self.grid_nodes < 3 {
            return Err(bad("grid_nodes", "needs at least 3 nodes"));
        }
        if self.n_sims == 0 {
            return Err(bad("n_sims", "must be positive"));
        }
        if self.monitoring_per_year == 0 {
            return Err(bad("monitoring_per_year", "must be positive"));
        }
        if ![1, 2, 4, 12].contains(&self.payment_frequency) {
            return Err(bad("payment_frequency", "must be 1, 2, 4 or 12"));
        }
        if self.maturities.iter().any(|&m| !(m > 0.0)) {
            return Err(bad("maturities", "must be positive"));
        }
        if let Some(u) = self.grid_upper {
            if !(u > 0.0) {
                return Err(bad("grid_upper", "must be positive"));
            }
        }
        if !self.forward_ends.is_empty() && self.forward_ends.len() != self.forward_starts.len() {
            return Err(bad("forward_ends", "needs one end per forward start"));
        }
        if self.forward_ends.is_empty() && self.forward_tenor.is_none() {
            return Err(bad(
                "forward_tenor",
                "needed when forward_ends is not given",
            ));
        }
        if let Some(tenor) = self.forward_tenor {
            for (s, e) in self.forward_starts.iter().zip(&self.forward_ends) {
                if ((e - s) - tenor).abs() > 1e-9 {
                    return Err(bad(
                        "forward_ends",
                        format!("forward ({s}, {e}] breaks the tenor {tenor}"),
                    ));
                }
            }
        }
        if self.weak_dts.len() != 3 {
            return Err(bad("weak_dts", "needs exactly three step sizes"));
        }
        Ok(())
    }

    pub fn rho_values(&self) -> Vec<f64> {
        if self.rho_grid.is_empty() {
            vec![self.rho]
        } else {
            self.rho_grid.clone()
        }
    }

    /// `(start, end)` of every forward.
    pub fn forwards(&self) -> Vec<(f64, f64)> {
        if self.forward_ends.is_empty() {
            let tenor = self.forward_tenor.unwrap_or(5.0);
            self.forward_starts
                .iter()
                .map(|&s| (s, s + tenor))
                .collect()
        } else {
            self.forward_starts
                .iter()
                .copied()
                .zip(self.forward_ends.iter().copied())
                .collect()
        }
    }

    /// Every key in a fixed order; parsing the output gives back `self`.
    pub fn render(&self) -> String {
        let entries: Vec<(&str, String)> = vec![
            ("r", self.r.to_string()),
            ("recovery", self.recovery.to_string()),
            ("sigma", self.sigma.to_string()),
            ("rho", self.rho.to_string()),
            (
                "grid_upper",
                self.grid_upper
                    .map(|u| u.to_string())
                    .unwrap_or_else(|| "auto".into()),
            ),
            ("grid_nodes", self.grid_nodes.to_string()),
            ("dt", self.dt.to_string()),
            ("n_sims", self.n_sims.to_string()),
            ("seed", self.seed.to_string()),
            ("theta", self.theta.to_string()),
            ("scheme", self.scheme.to_string()),
            ("lumped", self.lumped.to_string()),
            ("monitoring_per_year", self.monitoring_per_year.to_string()),
            ("payment_frequency", self.payment_frequency.to_string()),
            ("maturities", join(&self.maturities)),
            ("tranches", self.tranches.join(",")),
            ("rho_grid", join(&self.rho_grid)),
            ("portfolio", show_path(&self.portfolio)),
            ("index", show_path(&self.index)),
            ("x0_file", show_path(&self.x0_file)),
            ("x0", join(&self.x0)),
            ("forward_starts", join(&self.forward_starts)),
            ("forward_ends", join(&self.forward_ends)),
            (
                "forward_tenor",
                self.forward_tenor
                    .map(|t| t.to_string())
                    .unwrap_or_default(),
            ),
            ("basket_sizes", join(&self.basket_sizes)),
            ("oracle_paths", self.oracle_paths.to_string()),
            ("oracle_dt", self.oracle_dt.to_string()),
            ("study_horizon", self.study_horizon.to_string()),
            ("mc_levels", self.mc_levels.to_string()),
            ("weak_dts", join(&self.weak_dts)),
            ("weak_paths", self.weak_paths.to_string()),
            ("weak_grid_nodes", self.weak_grid_nodes.to_string()),
            ("space_nodes", join(&self.space_nodes)),
            ("deterministic", self.deterministic.to_string()),
        ];
        entries
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse_str(&cfg.render()).unwrap(), cfg);
    }

    #[test]
    fn overrides_and_comments() {
        let cfg = RunConfig::parse_str(
            "# run\nsigma = 0.3\ndt = 1/250  # coarse\nrho_grid = 0.1, 0.4\nscheme = decoupled\n",
        )
        .unwrap();
        assert_eq!(cfg.sigma, 0.3);
        assert_eq!(cfg.dt, 1.0 / 250.0);
        assert_eq!(cfg.rho_values(), vec![0.1, 0.4]);
        assert_eq!(cfg.scheme, Scheme::Decoupled);
        assert_eq!(RunConfig::parse_str(&cfg.render()).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse_str("sigmaa = 0.2").unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "sigmaa"));
        let err = RunConfig::parse_str("grid_nodes = many").unwrap_err();
        assert!(err.to_string().contains("grid_nodes"));
        assert!(RunConfig::parse_str("just words").is_err());
    }

    #[test]
    fn range_checks() {
        assert!(RunConfig::parse_str("rho = 1").is_err());
        assert!(RunConfig::parse_str("payment_frequency = 3").is_err());
        assert!(RunConfig::parse_str("theta = 2").is_err());
    }

    #[test]
    fn tenor_is_enforced() {
        let ok = RunConfig::parse_str("forward_starts = 0,1\nforward_ends = 5,6\n").unwrap();
        assert_eq!(ok.forwards(), vec![(0.0, 5.0), (1.0, 6.0)]);
        let err = RunConfig::parse_str("forward_starts = 0,1\nforward_ends = 5,7\n").unwrap_err();
        assert!(matches!(err, Error::Config { key, .. } if key == "forward_ends"));
        let free =
            RunConfig::parse_str("forward_tenor =\nforward_starts = 0,1\nforward_ends = 5,7\n")
                .unwrap();
        assert_eq!(free.forwards()[1], (1.0, 7.0));
    }
}
