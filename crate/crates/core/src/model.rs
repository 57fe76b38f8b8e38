//! Model parameters, the distance-to-default map and first-passage formulas
//! for Brownian motion with constant drift.
//!
//! Distances are measured in units of asset volatility, so a firm's distance
//! to default moves like `x0 + mu * t + B_t` for a standard Brownian motion
//! `B`, where `mu = (r - sigma^2 / 2) / sigma`. Default is the first time this
//! process reaches zero.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use libm::erfc;

use crate::error::{Error, Result};

/// Standard normal cumulative distribution function.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// `ln(norm_cdf(z))`, accurate in the far left tail where the CDF underflows.
pub fn ln_norm_cdf(z: f64) -> f64 {
    if z > -35.0 {
        return norm_cdf(z).ln();
    }
    // Asymptotic series for the Mills ratio.
    let z2 = z * z;
    let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
    -0.5 * z2 - (-z).ln() - 0.5 * (2.0 * PI).ln() + series.ln()
}

/// Homogeneous model parameters shared by every firm in the portfolio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    r: f64,
    sigma: f64,
    rho: f64,
    recovery: f64,
}

impl ModelParams {
    pub fn new(r: f64, sigma: f64, rho: f64, recovery: f64) -> Result<Self> {
        if !r.is_finite() {
            return Err(Error::Validation(format!(
                "risk-free rate must be finite, got {r}"
            )));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Validation(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::Validation(format!(
                "rho must lie in [0, 1), got {rho}"
            )));
        }
        if !(0.0..1.0).contains(&recovery) {
            return Err(Error::Validation(format!(
                "recovery must lie in [0, 1), got {recovery}"
            )));
        }
        Ok(Self {
            r,
            sigma,
            rho,
            recovery,
        })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn recovery(&self) -> f64 {
        self.recovery
    }

    /// Drift of the distance to default, `(r - sigma^2/2) / sigma`.
    pub fn mu(&self) -> f64 {
        (self.r - 0.5 * self.sigma * self.sigma) / self.sigma
    }

    pub fn with_rho(&self, rho: f64) -> Result<Self> {
        Self::new(self.r, self.sigma, rho, self.recovery)
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        Self::new(self.r, sigma, self.rho, self.recovery)
    }
}

/// `(ln A - ln B) / sigma`.
pub fn distance_to_default(asset_value: f64, barrier: f64, sigma: f64) -> Result<f64> {
    if !(asset_value > 0.0 && barrier > 0.0 && sigma > 0.0) {
        return Err(Error::Domain(format!(
            "distance to default needs positive inputs, got A={asset_value}, B={barrier}, sigma={sigma}"
        )));
    }
    Ok((asset_value.ln() - barrier.ln()) / sigma)
}

/// Starting point, drift and horizon of a first-passage question.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstPassageQuery {
    pub x0: f64,
    pub drift: f64,
    pub horizon: f64,
}

impl FirstPassageQuery {
    pub fn new(x0: f64, drift: f64, horizon: f64) -> Result<Self> {
        if !(x0 > 0.0) || !drift.is_finite() || !(horizon > 0.0) {
            return Err(Error::Domain(format!(
                "first-passage query needs x0 > 0 and horizon > 0, got x0={x0}, t={horizon}"
            )));
        }
        Ok(Self { x0, drift, horizon })
    }
}

/// Probability that `x0 + drift * s + W_s` touches zero for some `s <= horizon`.
pub fn default_probability(q: &FirstPassageQuery) -> f64 {
    default_probability_raw(q.x0, q.drift, q.horizon)
}

/// Unchecked form of [`default_probability`] used in hot loops.
///
/// Returns 1 for `x0 <= 0` and 0 for `t <= 0` with positive `x0`.
pub fn default_probability_raw(x0: f64, mu: f64, t: f64) -> f64 {
    if x0 <= 0.0 {
        return 1.0;
    }
    if t <= 0.0 {
        return 0.0;
    }
    let sqrt_t = t.sqrt();
    let direct = norm_cdf((-x0 - mu * t) / sqrt_t);
    // exp(-2 mu x0) can overflow while the CDF underflows; combine in log space.
    let reflected = (-2.0 * mu * x0 + ln_norm_cdf((-x0 + mu * t) / sqrt_t)).exp();
    (direct + reflected).clamp(0.0, 1.0)
}

/// Sub-probability density at `x` of a path that has not yet defaulted by the
/// query horizon. Integrates to `1 - default_probability(q)` over `x > 0`.
pub fn survival_density(x: f64, q: &FirstPassageQuery) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let t = q.horizon;
    let z = x - q.drift * t - q.x0;
    let gauss = (-z * z / (2.0 * t)).exp() / (2.0 * PI * t).sqrt();
    gauss * -(-2.0 * x * q.x0 / t).exp_m1()
}

/// Atomic initial measure of distances to default.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialCondition {
    atoms: Vec<(f64, f64)>,
}

impl InitialCondition {
    /// Atoms as `(distance, weight)`; weights must be positive and sum to one.
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Validation("initial condition has no atoms".into()));
        }
        for &(x, w) in &atoms {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::Validation(format!(
                    "atom position must be positive, got {x}"
                )));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Validation(format!(
                    "atom weight must be positive, got {w}"
                )));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Validation(format!(
                "atom weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { atoms })
    }

    /// Equal weights `1/N`, one atom per firm.
    pub fn equal_weights(positions: &[f64]) -> Result<Self> {
        let w = 1.0 / positions.len().max(1) as f64;
        Self::normalized(positions.iter().map(|&x| (x, w)).collect())
    }

    /// Rescales positive weights so they sum to one.
    pub fn normalized(atoms: Vec<(f64, f64)>) -> Result<Self> {
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if !(total > 0.0) {
            return Err(Error::Validation(
                "initial condition weights must be positive".into(),
            ));
        }
        Self::new(atoms.into_iter().map(|(x, w)| (x, w / total)).collect())
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn max_position(&self) -> f64 {
        self.atoms.iter().map(|a| a.0).fold(0.0, f64::max)
    }

    /// Weighted closed-form default probability of the portfolio by `t` under
    /// unit volatility and drift `mu`.
    pub fn expected_default_fraction(&self, mu: f64, t: f64) -> f64 {
        self.atoms
            .iter()
            .map(|&(x, w)| w * default_probability_raw(x, mu, t))
            .sum()
    }

    /// Deterministic stratified expansion into `n` firm positions: firm `k`
    /// sits at the atom containing cumulative weight `(k + 1/2) / n`.
    pub fn expand(&self, n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n);
        let mut idx = 0;
        let mut cum = self.atoms[0].1;
        for k in 0..n {
            let u = (k as f64 + 0.5) / n as f64;
            while u > cum && idx + 1 < self.atoms.len() {
                idx += 1;
                cum += self.atoms[idx].1;
            }
            out.push(self.atoms[idx].0);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_examples() {
        assert_eq!(distance_to_default(3.0, 3.0, 0.7).unwrap(), 0.0);
        let x = distance_to_default(std::f64::consts::E * 2.0, 2.0, 1.0).unwrap();
        assert!((x - 1.0).abs() < 1e-15);
        // ln 2 / 0.2
        let x = distance_to_default(100.0, 50.0, 0.2).unwrap();
        assert!((x - 3.465_735_902_799_726_5).abs() < 1e-12);
        assert!(distance_to_default(-1.0, 1.0, 0.2).is_err());
        assert!(distance_to_default(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn zero_drift_is_reflection_principle() {
        let q = FirstPassageQuery::new(1.0, 0.0, 1.0).unwrap();
        // 2 * Phi(-1)
        assert!((default_probability(&q) - 0.317_310_507_862_914_1).abs() < 1e-13);
        for &(x, t) in &[(0.3, 0.1), (2.0, 5.0), (4.0, 0.5)] {
            let p = default_probability_raw(x, 0.0, t);
            assert!((p - 2.0 * norm_cdf(-x / f64::sqrt(t))).abs() < 1e-15);
        }
    }

    #[test]
    fn far_barrier_is_unreachable() {
        assert!(default_probability_raw(60.0, 0.1, 1.0) < 1e-300);
        assert!(default_probability_raw(50.0, -1.0, 0.25) < 1e-100);
        let p = default_probability_raw(50.0, -4.0, 30.0);
        assert!(p.is_finite() && p > 0.99);
    }

    #[test]
    fn log_cdf_tail_is_continuous() {
        let a = ln_norm_cdf(-34.999_999);
        let b = ln_norm_cdf(-35.000_001);
        assert!((a - b).abs() < 1e-3);
        assert!((ln_norm_cdf(-1.0) - norm_cdf(-1.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn survival_density_vanishes_at_barrier() {
        let q = FirstPassageQuery::new(1.0, 0.3, 2.0).unwrap();
        assert_eq!(survival_density(0.0, &q), 0.0);
        assert_eq!(survival_density(-1.0, &q), 0.0);
        assert!(survival_density(1.0, &q) > 0.0);
    }

    #[test]
    fn survival_density_conserves_mass() {
        for &(x0, mu, t) in &[
            (1.0, 0.0, 1.0),
            (1.0, 0.5, 4.0),
            (3.0, -0.2, 5.0),
            (0.5, 0.08, 0.3),
        ] {
            let q = FirstPassageQuery::new(x0, mu, t).unwrap();
            // composite Simpson on [0, x0 + |mu| t + 14 sqrt(t)]
            let upper = x0 + mu.abs() * t + 14.0 * f64::sqrt(t);
            let n = 200_000;
            let h = upper / n as f64;
            let mut s = survival_density(0.0, &q) + survival_density(upper, &q);
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                s += w * survival_density(i as f64 * h, &q);
            }
            let mass = s * h / 3.0;
            assert!(
                (mass - (1.0 - default_probability(&q))).abs() < 1e-8,
                "{x0} {mu} {t}"
            );
        }
    }

    #[test]
    fn params_validate_and_derive_drift() {
        let p = ModelParams::new(0.042, 0.22, 0.3, 0.4).unwrap();
        assert!((p.mu() - (0.042 - 0.5 * 0.22 * 0.22) / 0.22).abs() < 1e-15);
        assert!(ModelParams::new(0.04, 0.0, 0.3, 0.4).is_err());
        assert!(ModelParams::new(0.04, 0.2, 1.0, 0.4).is_err());
        assert!(ModelParams::new(0.04, 0.2, -0.1, 0.4).is_err());
        assert!(ModelParams::new(0.04, 0.2, 0.3, 1.0).is_err());
    }

    #[test]
    fn initial_condition_invariants() {
        assert!(InitialCondition::new(vec![(1.0, 0.5), (2.0, 0.5)]).is_ok());
        assert!(InitialCondition::new(vec![(1.0, 0.5), (2.0, 0.4)]).is_err());
        assert!(InitialCondition::new(vec![(0.0, 1.0)]).is_err());
        assert!(InitialCondition::new(vec![(1.0, -1.0), (2.0, 2.0)]).is_err());
        let ic = InitialCondition::equal_weights(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(ic.expand(6), vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        assert_eq!(ic.expand(3), vec![1.0, 2.0, 3.0]);
    }
}
