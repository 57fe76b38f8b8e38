//! Pathwise solution of the density SPDE and extraction of the loss path.
//!
//! Two schemes are available. The full scheme integrates
//!
//! ```text
//! dv = -mu v_x dt + 1/2 v_xx dt - sqrt(rho) v_x dM,   v(t, 0) = 0
//! ```
//!
//! with the stochastic theta-scheme on the finite-element matrices. The
//! decoupled scheme writes `v(t, x) = u(t, x - sqrt(rho) M_t)`, evolves `u`
//! exactly by Gaussian convolution between monitoring dates and removes the
//! mass on `x <= 0` only at those dates.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{assemble, integrate, project_initial, DensityVector, FeMatrices, Grid};
use crate::market_path::{steps_for, MarketPath};
use crate::model::{norm_cdf, InitialCondition, ModelParams};
use crate::tridiag::{ThomasFactor, Tridiagonal};

/// Kernel truncation of the decoupled scheme, in standard deviations.
pub const KERNEL_WIDTH: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    FullSpde,
    Decoupled,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full-spde" => Ok(Scheme::FullSpde),
            "decoupled" => Ok(Scheme::Decoupled),
            other => Err(Error::Config {
                key: "scheme".into(),
                msg: format!("unknown scheme `{other}`"),
            }),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::FullSpde => "full-spde",
            Scheme::Decoupled => "decoupled",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub theta: f64,
    pub dt: f64,
    pub scheme: Scheme,
    /// Absorption dates of the decoupled scheme; `None` means the reporting
    /// times.
    pub monitoring_times: Option<Vec<f64>>,
    pub lumped: bool,
}

impl SolverConfig {
    pub fn full(dt: f64) -> Self {
        Self {
            theta: 1.0,
            dt,
            scheme: Scheme::FullSpde,
            monitoring_times: None,
            lumped: true,
        }
    }

    pub fn decoupled(dt: f64) -> Self {
        Self {
            scheme: Scheme::Decoupled,
            ..Self::full(dt)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Config {
                key: "theta".into(),
                msg: format!("must lie in [0, 1], got {}", self.theta),
            });
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config {
                key: "dt".into(),
                msg: format!("must be positive, got {}", self.dt),
            });
        }
        if let Some(times) = &self.monitoring_times {
            for &t in times {
                if steps_for(t, self.dt).is_none() {
                    return Err(Error::Config {
                        key: "monitoring_times".into(),
                        msg: format!("{t} is not a multiple of dt = {}", self.dt),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Per-path diagnostics recorded alongside the loss values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PathDiagnostics {
    /// Mass absorbed at zero by each reporting time, from the boundary flux of
    /// the discrete scheme.
    pub absorbed: Vec<f64>,
    /// `|integral(v) + absorbed - 1|` at each reporting time.
    pub mass_defect: Vec<f64>,
    /// Mass lost through the truncation boundary by the horizon.
    pub upper_leak: f64,
}

/// Loss fractions `L_t` of one market path at the reporting times.
#[derive(Debug, Clone, PartialEq)]
pub struct LossPath {
    pub times: Vec<f64>,
    /// Clamped to `[0, 1]` and made non-decreasing.
    pub values: Vec<f64>,
    /// Values before the monotone rewrite.
    pub raw: Vec<f64>,
    pub diagnostics: PathDiagnostics,
}

impl LossPath {
    fn from_raw(times: Vec<f64>, raw: Vec<f64>, diagnostics: PathDiagnostics) -> Self {
        let mut values = Vec::with_capacity(raw.len());
        let mut prev = 0.0f64;
        for &l in &raw {
            let v = l.clamp(0.0, 1.0).max(prev);
            values.push(v);
            prev = v;
        }
        Self {
            times,
            values,
            raw,
            diagnostics,
        }
    }

    /// `|clamped - raw|` per reporting time.
    pub fn adjustments(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.raw)
            .map(|(v, r)| (v - r).abs())
            .collect()
    }

    pub fn at(&self, t: f64) -> Option<f64> {
        time_index(&self.times, t).map(|k| self.values[k])
    }
}

pub(crate) fn time_index(times: &[f64], t: f64) -> Option<usize> {
    times.iter().position(|&s| (s - t).abs() <= 1e-9)
}

/// Precomputed theta-scheme step `(M + theta dt A) v+ = (M - (1 - theta) dt A) v + sqrt(rho dt) phi D v`.
#[derive(Debug, Clone)]
pub struct Stepper {
    factor: ThomasFactor,
    explicit: Tridiagonal,
    derivative: Tridiagonal,
    noise_scale: f64,
    theta: f64,
    dt: f64,
    col_a: (f64, f64),
    col_d: (f64, f64),
    mass_weights: Vec<f64>,
}

/// Boundary fluxes of one step, positive when mass leaves the domain.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepFlux {
    pub lower: f64,
    pub upper: f64,
}

impl Stepper {
    pub fn new(mats: &FeMatrices, rho: f64, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let implicit = mats.mass.axpy(cfg.theta * cfg.dt, &mats.generator);
        if !implicit.is_strictly_diagonally_dominant() {
            log::warn!(
                "implicit system is not strictly diagonally dominant; Thomas solve may be unstable"
            );
        }
        let factor = implicit.factorize()?;
        let explicit = mats.mass.axpy(-(1.0 - cfg.theta) * cfg.dt, &mats.generator);
        let ca = mats.generator.column_sums();
        let cd = mats.derivative.column_sums();
        let n = ca.len();
        Ok(Self {
            factor,
            explicit,
            derivative: mats.derivative.clone(),
            noise_scale: (rho * cfg.dt).sqrt(),
            theta: cfg.theta,
            dt: cfg.dt,
            col_a: (ca[0], ca[n - 1]),
            col_d: (cd[0], cd[n - 1]),
            mass_weights: mats.mass.column_sums(),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// One step from `v` with standard normal draw `phi`.
    pub fn step(&self, v: &DensityVector, phi: f64) -> DensityVector {
        let mut out = vec![0.0; v.len()];
        self.step_into(&v.values, phi, &mut out);
        DensityVector { values: out }
    }

    /// Writes the next state into `out` and returns the boundary fluxes.
    pub fn step_into(&self, v: &[f64], phi: f64, out: &mut [f64]) -> StepFlux {
        let n = v.len();
        let c = self.noise_scale * phi;
        let b = &self.explicit;
        let d = &self.derivative;
        if n == 1 {
            out[0] = b.diag[0] * v[0];
        } else {
            out[0] = b.diag[0] * v[0] + (b.upper[0] + c * d.upper[0]) * v[1];
            for i in 1..n - 1 {
                out[i] = (b.lower[i - 1] + c * d.lower[i - 1]) * v[i - 1]
                    + b.diag[i] * v[i]
                    + (b.upper[i] + c * d.upper[i]) * v[i + 1];
            }
            out[n - 1] =
                (b.lower[n - 2] + c * d.lower[n - 2]) * v[n - 2] + b.diag[n - 1] * v[n - 1];
        }
        self.factor.solve_in_place(out);
        let blend = |new: f64, old: f64| self.theta * new + (1.0 - self.theta) * old;
        StepFlux {
            lower: self.dt * self.col_a.0 * blend(out[0], v[0]) - c * self.col_d.0 * v[0],
            upper: self.dt * self.col_a.1 * blend(out[n - 1], v[n - 1])
                - c * self.col_d.1 * v[n - 1],
        }
    }

    /// `1^T M v`, the mass conserved by the scheme up to boundary fluxes.
    pub fn mass(&self, v: &[f64]) -> f64 {
        self.mass_weights.iter().zip(v).map(|(w, x)| w * x).sum()
    }
}

/// Runs the full scheme along `path` and reports at `times` (each a multiple
/// of the step).
pub fn simulate_path(
    v0: &DensityVector,
    grid: &Grid,
    stepper: &Stepper,
    path: &MarketPath,
    times: &[f64],
) -> Result<LossPath> {
    let dt = stepper.dt();
    if (path.dt() - dt).abs() > 1e-12 * dt {
        return Err(Error::Validation(format!(
            "market path step {} differs from solver step {dt}",
            path.dt()
        )));
    }
    let report_steps = report_steps(times, dt)?;
    let last = report_steps.last().copied().unwrap_or(0);
    if last > path.n_steps() {
        return Err(Error::Validation(format!(
            "market path covers {} steps, reporting needs {last}",
            path.n_steps()
        )));
    }
    let mut v = v0.values.clone();
    let mut work = vec![0.0; v.len()];
    let mass0 = stepper.mass(&v);
    let mut absorbed = 1.0 - mass0;
    let mut leak = 0.0;
    let mut raw = Vec::with_capacity(times.len());
    let mut diag = PathDiagnostics::default();
    let record = |v: &[f64], absorbed: f64, raw: &mut Vec<f64>, diag: &mut PathDiagnostics| {
        let mass = stepper.mass(v);
        raw.push(1.0 - integrate(grid, &DensityVector { values: v.to_vec() }));
        diag.absorbed.push(absorbed);
        diag.mass_defect.push((mass + absorbed - 1.0).abs());
    };
    let mut next = 0;
    while next < report_steps.len() && report_steps[next] == 0 {
        record(&v, absorbed, &mut raw, &mut diag);
        next += 1;
    }
    for m in 0..last {
        let flux = stepper.step_into(&v, path.draws()[m], &mut work);
        std::mem::swap(&mut v, &mut work);
        absorbed += flux.lower;
        leak += flux.upper;
        while next < report_steps.len() && report_steps[next] == m + 1 {
            record(&v, absorbed, &mut raw, &mut diag);
            next += 1;
        }
    }
    diag.upper_leak = leak;
    Ok(LossPath::from_raw(times.to_vec(), raw, diag))
}

fn report_steps(times: &[f64], dt: f64) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(times.len());
    let mut prev = 0usize;
    for &t in times {
        let k = steps_for(t, dt).ok_or_else(|| {
            Error::Validation(format!("reporting time {t} is not a multiple of dt = {dt}"))
        })?;
        if k < prev {
            return Err(Error::Validation(
                "reporting times must be non-decreasing".into(),
            ));
        }
        prev = k;
        out.push(k);
    }
    Ok(out)
}

/// Near-boundary behaviour of a discrete density.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryProfile {
    /// First interior value over the spacing, a one-sided slope at zero.
    pub slope: f64,
    /// `(epsilon, nu((0, epsilon)) / epsilon)` for `epsilon` in `{2h, 4h, 8h}`.
    pub ratios: Vec<(f64, f64)>,
}

pub fn boundary_profile(v: &DensityVector, grid: &Grid) -> BoundaryProfile {
    let h = grid.spacing();
    let node = |i: usize| {
        if i == 0 || i > v.len() {
            0.0
        } else {
            v.values[i - 1]
        }
    };
    let ratios = [2usize, 4, 8]
        .iter()
        .map(|&k| {
            // trapezoid of the piecewise-linear density over [0, k h]
            let mass: f64 = (0..k).map(|i| 0.5 * h * (node(i) + node(i + 1))).sum();
            let eps = k as f64 * h;
            (eps, mass / eps)
        })
        .collect();
    BoundaryProfile {
        slope: node(1) / h,
        ratios,
    }
}

/// Decoupled scheme on cells `[j h, (j + 1) h)` whose mass sits at the cell
/// centre. Atoms are split linearly between the two nearest centres.
#[derive(Debug, Clone)]
pub struct DecoupledSolver {
    spacing: f64,
    n_cells: usize,
    mu: f64,
    rho: f64,
    initial: Vec<f64>,
    initial_active: (usize, usize),
}

/// Reusable buffers for [`DecoupledSolver`]. Cell `j` lives at index
/// `j + pad`; everything outside the active cells is kept at zero.
#[derive(Debug, Clone, Default)]
pub struct DecoupledWorkspace {
    pad: usize,
    mass: Vec<f64>,
    next: Vec<f64>,
    cdf: Vec<f64>,
    kernel: Vec<f64>,
}

impl DecoupledWorkspace {
    fn ensure(&mut self, n_cells: usize, pad: usize) {
        if self.mass.len() == n_cells + 2 * self.pad && pad <= self.pad {
            return;
        }
        let pad = pad.max(self.pad).max(8);
        self.pad = pad;
        self.mass = vec![0.0; n_cells + 2 * pad];
        self.next = vec![0.0; n_cells + 2 * pad];
    }
}

impl DecoupledSolver {
    pub fn new(grid: &Grid, params: &ModelParams, ic: &InitialCondition) -> Result<Self> {
        let h = grid.spacing();
        let n_cells = grid.n_nodes() - 1;
        let mut initial = vec![0.0; n_cells];
        for &(x, w) in ic.atoms() {
            if !(x > 0.0 && x < grid.upper() - 0.5 * h) {
                return Err(Error::Domain(format!(
                    "atom at {x} lies outside (0, {}); enlarge grid_upper",
                    grid.upper() - 0.5 * h
                )));
            }
            // linear split between the neighbouring cell centres
            let p = x / h - 0.5;
            if p <= 0.0 {
                initial[0] += w;
                continue;
            }
            let j = p.floor() as usize;
            let frac = p - j as f64;
            initial[j] += w * (1.0 - frac);
            initial[j + 1] += w * frac;
        }
        let lo = initial.iter().position(|&m| m != 0.0).unwrap_or(0);
        let hi = initial.iter().rposition(|&m| m != 0.0).map_or(0, |i| i + 1);
        Ok(Self {
            spacing: h,
            n_cells,
            mu: params.mu(),
            rho: params.rho(),
            initial,
            initial_active: (lo, hi),
        })
    }

    pub fn workspace(&self) -> DecoupledWorkspace {
        let mut ws = DecoupledWorkspace::default();
        ws.ensure(self.n_cells, 64);
        ws
    }

    /// Loss path with absorption at `monitoring` dates, reported at `times`.
    /// The market path supplies the increments between consecutive dates.
    pub fn simulate(
        &self,
        path: &MarketPath,
        monitoring: &[f64],
        times: &[f64],
        ws: &mut DecoupledWorkspace,
    ) -> Result<LossPath> {
        let dt = path.dt();
        let mon_steps = report_steps(monitoring, dt)?;
        let rep_steps = report_steps(times, dt)?;
        let last = mon_steps
            .last()
            .copied()
            .unwrap_or(0)
            .max(rep_steps.last().copied().unwrap_or(0));
        if last > path.n_steps() {
            return Err(Error::Validation(format!(
                "market path covers {} steps, monitoring needs {last}",
                path.n_steps()
            )));
        }
        ws.ensure(self.n_cells, ws.pad);
        let h = self.spacing;
        let mut absorbed = 0.0;
        let mut leak = 0.0;
        let mut raw = Vec::with_capacity(times.len());
        let mut diag = PathDiagnostics::default();
        let mut active = self.initial_active;
        let pad = ws.pad;
        ws.mass[pad + active.0..pad + active.1].copy_from_slice(&self.initial[active.0..active.1]);
        let mut prev_step = 0usize;
        let mut next_rep = 0;
        let push = |absorbed: f64, mass: f64, raw: &mut Vec<f64>, diag: &mut PathDiagnostics| {
            raw.push(absorbed);
            diag.absorbed.push(absorbed);
            diag.mass_defect.push((mass + absorbed - 1.0).abs());
        };
        let mut in_grid = 1.0;
        while next_rep < rep_steps.len() && rep_steps[next_rep] == 0 {
            push(0.0, 1.0, &mut raw, &mut diag);
            next_rep += 1;
        }
        for &k in mon_steps.iter().filter(|&&k| k > 0) {
            let tau = (k - prev_step) as f64 * dt;
            if k == prev_step {
                continue;
            }
            let shift = self.mu * tau + self.rho.sqrt() * path.increment_between(prev_step, k);
            let sd = binned_sd((1.0 - self.rho) * tau, h);
            let (a, lost) = self.convolve(ws, &mut active, shift, sd, h);
            absorbed += a;
            leak += lost;
            in_grid = ws.mass[ws.pad + active.0..ws.pad + active.1]
                .iter()
                .sum::<f64>();
            prev_step = k;
            while next_rep < rep_steps.len() && rep_steps[next_rep] <= k {
                // a reporting date before the next monitoring date sees the last absorption
                push(absorbed, in_grid, &mut raw, &mut diag);
                next_rep += 1;
            }
        }
        while next_rep < rep_steps.len() {
            push(absorbed, in_grid, &mut raw, &mut diag);
            next_rep += 1;
        }
        diag.upper_leak = leak;
        ws.mass[ws.pad + active.0..ws.pad + active.1]
            .iter_mut()
            .for_each(|m| *m = 0.0);
        Ok(LossPath::from_raw(times.to_vec(), raw, diag))
    }

    fn tap_range(shift: f64, sd: f64, h: f64) -> (i64, i64) {
        let lo = ((shift - KERNEL_WIDTH * sd) / h).floor() as i64 - 1;
        let hi = ((shift + KERNEL_WIDTH * sd) / h).ceil() as i64 + 1;
        (lo, hi)
    }

    /// Gaussian transition of the cell masses followed by absorption below zero.
    fn convolve(
        &self,
        ws: &mut DecoupledWorkspace,
        active: &mut (usize, usize),
        shift: f64,
        sd: f64,
        h: f64,
    ) -> (f64, f64) {
        let (lo, hi) = *active;
        if lo >= hi {
            return (0.0, 0.0);
        }
        let n = self.n_cells as i64;
        let (k0, k1) = Self::tap_range(shift, sd, h);
        let taps = (k1 - k0 + 1) as usize;
        let need = (k0.unsigned_abs().max(k1.unsigned_abs()) as usize) + 8;
        if need > ws.pad {
            let old = ws.pad;
            let saved = ws.mass[old + lo..old + hi].to_vec();
            ws.mass.iter_mut().for_each(|m| *m = 0.0);
            ws.ensure(self.n_cells, need);
            let pad = ws.pad;
            ws.mass[pad + lo..pad + hi].copy_from_slice(&saved);
        }
        let pad = ws.pad as i64;
        // cdf[i] = F(k0 - 1 + i) with F(k) = P(Y < (k + 1/2) h), Y ~ N(shift, sd^2)
        ws.cdf.clear();
        ws.cdf
            .extend((k0 - 1..=k1).map(|k| norm_cdf(((k as f64 + 0.5) * h - shift) / sd)));
        // kernel[i] = P(target = source + k0 + i)
        ws.kernel.clear();
        ws.kernel.extend(ws.cdf.windows(2).map(|w| w[1] - w[0]));

        // source l is absorbed with probability F(-l-1) = cdf[-l - k0]
        let mut absorbed = 0.0;
        for l in lo..hi {
            let i = -(l as i64) - k0;
            if i < 0 {
                break;
            }
            let f = ws.cdf.get(i as usize).copied().unwrap_or(1.0);
            absorbed += ws.mass[(pad + l as i64) as usize] * f;
        }
        let src_lo = (pad + lo as i64) as usize;
        let len = hi - lo;
        let before: f64 = ws.mass[src_lo..src_lo + len].iter().sum();

        // targets of sources lo..hi under taps k0..=k1, in buffer coordinates
        let t_lo = (pad + lo as i64 + k0) as usize;
        let t_hi = (pad + hi as i64 + k1) as usize;
        ws.next[t_lo..t_hi].iter_mut().for_each(|x| *x = 0.0);
        let mut i = 0;
        while i + 4 <= taps {
            let [p0, p1, p2, p3] = [
                ws.kernel[i],
                ws.kernel[i + 1],
                ws.kernel[i + 2],
                ws.kernel[i + 3],
            ];
            // output q receives src[q] p0 + src[q-1] p1 + src[q-2] p2 + src[q-3] p3
            let out_lo = t_lo + i;
            let m = len + 3;
            let s = &ws.mass[src_lo - 3..src_lo - 3 + m + 3];
            let dst = &mut ws.next[out_lo..out_lo + m];
            let (a, b, c, d) = (&s[3..3 + m], &s[2..2 + m], &s[1..1 + m], &s[..m]);
            for q in 0..m {
                dst[q] += p0 * a[q] + p1 * b[q] + p2 * c[q] + p3 * d[q];
            }
            i += 4;
        }
        while i < taps {
            let p = ws.kernel[i];
            let out_lo = t_lo + i;
            let (src, dst) = (
                &ws.mass[src_lo..src_lo + len],
                &mut ws.next[out_lo..out_lo + len],
            );
            for (d, s) in dst.iter_mut().zip(src) {
                *d += p * s;
            }
            i += 1;
        }
        ws.mass[src_lo..src_lo + len]
            .iter_mut()
            .for_each(|x| *x = 0.0);
        std::mem::swap(&mut ws.mass, &mut ws.next);

        // drop what landed below zero (absorbed) or above the grid (leaked)
        let p = pad as usize;
        let cell_lo = p.max(t_lo);
        let cell_hi = (p + n as usize).min(t_hi + 3);
        ws.mass[t_lo.min(cell_lo)..cell_lo]
            .iter_mut()
            .for_each(|x| *x = 0.0);
        if cell_hi < t_hi + 3 {
            ws.mass[cell_hi..t_hi + 3].iter_mut().for_each(|x| *x = 0.0);
        }
        let mut a = cell_lo;
        let mut b = cell_hi.max(a);
        while a < b && ws.mass[a] == 0.0 {
            a += 1;
        }
        while b > a && ws.mass[b - 1] == 0.0 {
            b -= 1;
        }
        *active = (a - p, b - p);
        let after: f64 = ws.mass[a..b].iter().sum();
        let lost = (before - absorbed - after).max(0.0);
        (absorbed, lost)
    }
}

/// Kernel standard deviation for a transition of variance `var` between cells
/// of width `h`. Binning into cells adds about `h^2 / 12` of variance per
/// transition, which is taken out of the kernel.
pub fn binned_sd(var: f64, h: f64) -> f64 {
    (var - h * h / 12.0).max(0.5 * var).sqrt()
}

/// Loss paths of many market paths on common reporting times, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LossPathSet {
    pub times: Vec<f64>,
    n_paths: usize,
    data: Vec<f64>,
    /// Largest `|clamped - raw|` over all paths and dates.
    pub max_adjustment: f64,
    /// Mean `|clamped - raw|` per path and date.
    pub mean_adjustment: f64,
    /// Largest mass defect over all paths and dates.
    pub max_mass_defect: f64,
}

impl LossPathSet {
    pub fn from_paths(paths: &[LossPath]) -> Result<Self> {
        let times = paths.first().map(|p| p.times.clone()).unwrap_or_default();
        let mut data = Vec::with_capacity(paths.len() * times.len());
        let mut max_adj = 0.0f64;
        let mut sum_adj = 0.0;
        let mut max_defect = 0.0f64;
        for p in paths {
            if p.times != times {
                return Err(Error::Validation(
                    "loss paths have different reporting times".into(),
                ));
            }
            data.extend_from_slice(&p.values);
            for a in p.adjustments() {
                max_adj = max_adj.max(a);
                sum_adj += a;
            }
            for &d in &p.diagnostics.mass_defect {
                max_defect = max_defect.max(d);
            }
        }
        let count = (paths.len() * times.len()).max(1) as f64;
        Ok(Self {
            times,
            n_paths: paths.len(),
            data,
            max_adjustment: max_adj,
            mean_adjustment: sum_adj / count,
            max_mass_defect: max_defect,
        })
    }

    /// Paths given directly as rows of loss values.
    pub fn from_rows(times: Vec<f64>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * times.len());
        for r in &rows {
            if r.len() != times.len() {
                return Err(Error::Validation(
                    "loss row length differs from reporting times".into(),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            times,
            n_paths: rows.len(),
            data,
            max_adjustment: 0.0,
            mean_adjustment: 0.0,
            max_mass_defect: 0.0,
        })
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn path(&self, p: usize) -> &[f64] {
        let n = self.times.len();
        &self.data[p * n..(p + 1) * n]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.times.len().max(1))
    }

    pub fn time_index(&self, t: f64) -> Option<usize> {
        time_index(&self.times, t)
    }

    /// First `n` paths.
    pub fn truncated(&self, n: usize) -> LossPathSet {
        let n = n.min(self.n_paths);
        LossPathSet {
            n_paths: n,
            data: self.data[..n * self.times.len()].to_vec(),
            ..self.clone()
        }
    }

    /// Sample mean of `L` at each reporting time.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.times.len()];
        for row in self.iter() {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut()
            .for_each(|o| *o /= self.n_paths.max(1) as f64);
        out
    }
}

/// Everything needed to turn market paths into loss paths.
#[derive(Debug, Clone)]
pub struct LossSimulator {
    params: ModelParams,
    grid: Grid,
    cfg: SolverConfig,
    inner: Inner,
}

#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
enum Inner {
    Full { stepper: Stepper, v0: DensityVector },
    Decoupled(DecoupledSolver),
}

impl LossSimulator {
    pub fn new(
        params: &ModelParams,
        ic: &InitialCondition,
        grid: Grid,
        cfg: SolverConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let inner = match cfg.scheme {
            Scheme::FullSpde => {
                let mats = assemble(&grid, params, cfg.lumped);
                let v0 = project_initial(&grid, ic, cfg.lumped)?;
                Inner::Full {
                    stepper: Stepper::new(&mats, params.rho(), &cfg)?,
                    v0,
                }
            }
            Scheme::Decoupled => Inner::Decoupled(DecoupledSolver::new(&grid, params, ic)?),
        };
        Ok(Self {
            params: *params,
            grid,
            cfg,
            inner,
        })
    }

    /// Full scheme started from an arbitrary discrete density.
    pub fn from_density(
        params: &ModelParams,
        v0: DensityVector,
        grid: Grid,
        cfg: SolverConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if cfg.scheme != Scheme::FullSpde {
            return Err(Error::Config {
                key: "scheme".into(),
                msg: "a density start needs full-spde".into(),
            });
        }
        if v0.len() != grid.n_interior() {
            return Err(Error::Validation(
                "density length does not match the grid".into(),
            ));
        }
        let mats = assemble(&grid, params, cfg.lumped);
        Ok(Self {
            params: *params,
            grid,
            inner: Inner::Full {
                stepper: Stepper::new(&mats, params.rho(), &cfg)?,
                v0,
            },
            cfg,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn simulate(&self, path: &MarketPath, times: &[f64]) -> Result<LossPath> {
        match &self.inner {
            Inner::Full { stepper, v0 } => simulate_path(v0, &self.grid, stepper, path, times),
            Inner::Decoupled(solver) => {
                let mut ws = solver.workspace();
                solver.simulate(
                    path,
                    self.cfg.monitoring_times.as_deref().unwrap_or(times),
                    times,
                    &mut ws,
                )
            }
        }
    }

    /// Final density of the full scheme along `path` after `n_steps` steps.
    pub fn density_after(&self, path: &MarketPath, n_steps: usize) -> Result<DensityVector> {
        let Inner::Full { stepper, v0 } = &self.inner else {
            return Err(Error::Config {
                key: "scheme".into(),
                msg: "densities need full-spde".into(),
            });
        };
        let mut v = v0.values.clone();
        let mut work = vec![0.0; v.len()];
        for m in 0..n_steps.min(path.n_steps()) {
            stepper.step_into(&v, path.draws()[m], &mut work);
            std::mem::swap(&mut v, &mut work);
        }
        Ok(DensityVector { values: v })
    }

    /// Steps needed to reach the last of `times`.
    pub fn steps_to(&self, times: &[f64]) -> Result<usize> {
        let last = times.iter().copied().fold(0.0, f64::max);
        steps_for(last, self.cfg.dt).ok_or_else(|| {
            Error::Validation(format!(
                "horizon {last} is not a multiple of dt = {}",
                self.cfg.dt
            ))
        })
    }

    /// Simulates paths `0..n_paths` of `seed`. Path `k` depends only on
    /// `(seed, k)`. With `deterministic` the batch runs on one thread; the
    /// result is the same either way since paths are collected in order.
    pub fn simulate_batch(
        &self,
        seed: u64,
        n_paths: usize,
        times: &[f64],
        deterministic: bool,
    ) -> Result<LossPathSet> {
        let n_steps = self.steps_to(times)?;
        let dt = self.cfg.dt;
        let run = |k: usize, ws: &mut Option<DecoupledWorkspace>| -> Result<LossPath> {
            let path = MarketPath::generate(seed, k as u64, n_steps, dt);
            match &self.inner {
                Inner::Decoupled(solver) => {
                    let ws = ws.get_or_insert_with(|| solver.workspace());
                    solver.simulate(
                        &path,
                        self.cfg.monitoring_times.as_deref().unwrap_or(times),
                        times,
                        ws,
                    )
                }
                Inner::Full { .. } => self.simulate(&path, times),
            }
        };
        let paths: Vec<LossPath> = if deterministic {
            let mut ws = None;
            (0..n_paths)
                .map(|k| run(k, &mut ws))
                .collect::<Result<_>>()?
        } else {
            (0..n_paths)
                .into_par_iter()
                .map_init(|| None, |ws, k| run(k, ws))
                .collect::<Result<_>>()?
        };
        LossPathSet::from_paths(&paths)
    }
}
