//! Piecewise-linear finite elements on a uniform mesh of `[0, x_N]`.
//!
//! All matrices act on interior nodes only: the absorbing boundary at zero and
//! the truncation boundary at `x_N` carry homogeneous Dirichlet conditions and
//! their rows and columns are dropped. For hat functions `phi_i` on spacing `h`
//! the entries are
//!
//! ```text
//! mass        (phi_i, phi_j)    : 2h/3 on the diagonal, h/6 off it (lumped: h, 0)
//! stiffness   (phi_i', phi_j')  : 2/h on the diagonal, -1/h off it
//! derivative  (phi_i', phi_j)   : 0 on the diagonal, -1/2 above, +1/2 below
//! ```
//!
//! and the bilinear form of the generator is
//! `a(phi, v) = 1/2 (phi', v') - mu (phi', v)`, so `A = K/2 - mu D`.

use crate::error::{Error, Result};
use crate::model::{InitialCondition, ModelParams};
use crate::tridiag::Tridiagonal;

/// Uniform mesh `0 = x_0 < x_1 < ... < x_{N-1} = upper`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    upper: f64,
    n_nodes: usize,
}

impl Grid {
    pub fn new(upper: f64, n_nodes: usize) -> Result<Self> {
        if n_nodes < 3 {
            return Err(Error::Domain(format!(
                "grid needs at least 3 nodes, got {n_nodes}"
            )));
        }
        if !(upper > 0.0 && upper.is_finite()) {
            return Err(Error::Domain(format!(
                "grid upper bound must be positive, got {upper}"
            )));
        }
        Ok(Self { upper, n_nodes })
    }

    /// Mesh with spacing as close as possible to `h` (never coarser).
    pub fn with_spacing(upper: f64, h: f64) -> Result<Self> {
        let cells = (upper / h).ceil().max(2.0) as usize;
        Self::new(upper, cells + 1)
    }

    /// Upper boundary large enough that mass crossing it by `horizon` is
    /// negligible: the largest atom plus six idiosyncratic and six systematic
    /// standard deviations plus the drift.
    pub fn default_upper(ic: &InitialCondition, params: &ModelParams, horizon: f64) -> f64 {
        let rho = params.rho();
        ic.max_position()
            + 6.0 * (horizon * (1.0 - rho)).sqrt()
            + params.mu().abs() * horizon
            + 6.0 * (rho * horizon).sqrt()
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_interior(&self) -> usize {
        self.n_nodes - 2
    }

    pub fn spacing(&self) -> f64 {
        self.upper / (self.n_nodes - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.n_nodes - 1 {
            self.upper
        } else {
            i as f64 * self.spacing()
        }
    }

    /// Coordinates of the interior nodes.
    pub fn interior_nodes(&self) -> Vec<f64> {
        (1..self.n_nodes - 1).map(|i| self.node(i)).collect()
    }

    /// Halved spacing over the same domain.
    pub fn refined(&self) -> Grid {
        Grid {
            upper: self.upper,
            n_nodes: 2 * self.n_nodes - 1,
        }
    }
}

/// Nodal values of a density at the interior nodes of a grid; the boundary
/// values are implicitly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityVector {
    pub values: Vec<f64>,
}

impl DensityVector {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            values: vec![0.0; grid.n_interior()],
        }
    }

    /// Interpolates `f` at the interior nodes.
    pub fn from_fn(grid: &Grid, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: grid.interior_nodes().into_iter().map(f).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Copy with negative entries replaced by zero, for reporting.
    pub fn clipped(&self) -> DensityVector {
        Self {
            values: self.values.iter().map(|v| v.max(0.0)).collect(),
        }
    }
}

/// Assembled interior-node matrices.
#[derive(Debug, Clone)]
pub struct FeMatrices {
    pub mass: Tridiagonal,
    /// Matrix of the bilinear form `a(phi_i, phi_j)`.
    pub generator: Tridiagonal,
    /// `(phi_i', phi_j)`; carries the market-factor term.
    pub derivative: Tridiagonal,
    pub lumped: bool,
    pub spacing: f64,
}

impl FeMatrices {
    pub fn interior_size(&self) -> usize {
        self.mass.size()
    }
}

pub fn mass_matrix(grid: &Grid, lumped: bool) -> Tridiagonal {
    let n = grid.n_interior();
    let h = grid.spacing();
    if lumped {
        Tridiagonal::toeplitz(n, 0.0, h, 0.0)
    } else {
        Tridiagonal::toeplitz(n, h / 6.0, 2.0 * h / 3.0, h / 6.0)
    }
}

pub fn stiffness_matrix(grid: &Grid) -> Tridiagonal {
    let h = grid.spacing();
    Tridiagonal::toeplitz(grid.n_interior(), -1.0 / h, 2.0 / h, -1.0 / h)
}

pub fn derivative_matrix(grid: &Grid) -> Tridiagonal {
    Tridiagonal::toeplitz(grid.n_interior(), 0.5, 0.0, -0.5)
}

pub fn assemble(grid: &Grid, params: &ModelParams, lumped: bool) -> FeMatrices {
    let stiffness = stiffness_matrix(grid);
    let derivative = derivative_matrix(grid);
    let zero = Tridiagonal::toeplitz(grid.n_interior(), 0.0, 0.0, 0.0);
    let generator = zero.axpy(0.5, &stiffness).axpy(-params.mu(), &derivative);
    FeMatrices {
        mass: mass_matrix(grid, lumped),
        generator,
        derivative,
        lumped,
        spacing: grid.spacing(),
    }
}

/// Hat function centred at node `n` evaluated at `x`.
pub fn hat(grid: &Grid, n: usize, x: f64) -> f64 {
    let h = grid.spacing();
    let d = (x - grid.node(n)).abs() / h;
    if d < 1.0 {
        1.0 - d
    } else {
        0.0
    }
}

/// `L^2` projection of the atomic measure onto the interior hats: solves
/// `M v = b` with `b_n = sum_i w_i phi_n(x_i)`.
pub fn project_initial(grid: &Grid, ic: &InitialCondition, lumped: bool) -> Result<DensityVector> {
    let h = grid.spacing();
    let mut rhs = vec![0.0; grid.n_interior()];
    for &(x, w) in ic.atoms() {
        if !(x > 0.0 && x < grid.upper()) {
            return Err(Error::Domain(format!(
                "atom at {x} lies outside (0, {}); enlarge grid_upper",
                grid.upper()
            )));
        }
        let cell = ((x / h).floor() as usize).min(grid.n_nodes() - 2);
        let frac = x / h - cell as f64;
        // left node `cell`, right node `cell + 1`; interior index is node - 1
        if cell >= 1 {
            rhs[cell - 1] += w * (1.0 - frac);
        }
        if cell < grid.n_interior() {
            rhs[cell] += w * frac;
        }
    }
    let values = mass_matrix(grid, lumped).solve(&rhs)?;
    Ok(DensityVector { values })
}

/// `h * sum(v)`: exact integral of the piecewise-linear interpolant with zero
/// boundary values.
pub fn integrate(grid: &Grid, v: &DensityVector) -> f64 {
    grid.spacing() * v.values.iter().sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(mu_sigma: f64) -> ModelParams {
        ModelParams::new(0.042, mu_sigma, 0.3, 0.4).unwrap()
    }

    #[test]
    fn three_node_mass() {
        let g = Grid::new(2.0, 3).unwrap();
        let m = assemble(&g, &params(0.22), false);
        assert_eq!(m.interior_size(), 1);
        assert!((m.mass.diag[0] - 2.0 / 3.0).abs() < 1e-15);
        let m = assemble(&g, &params(0.22), true);
        assert_eq!(m.mass.diag[0], 1.0);
    }

    #[test]
    fn rejects_tiny_grid() {
        assert!(Grid::new(1.0, 2).is_err());
        assert!(Grid::new(0.0, 10).is_err());
    }

    #[test]
    fn lumped_is_row_sum_of_consistent() {
        let g = Grid::new(7.0, 15).unwrap();
        let consistent = mass_matrix(&g, false);
        let lumped = mass_matrix(&g, true);
        let rs = consistent.row_sums();
        let h = g.spacing();
        // interior rows; the two boundary-adjacent rows lose a 1/6 neighbour
        for (r, d) in rs.iter().zip(&lumped.diag).take(rs.len() - 1).skip(1) {
            assert!((r - d).abs() < 1e-14);
        }
        assert!((rs[0] - 5.0 * h / 6.0).abs() < 1e-14);
    }

    #[test]
    fn derivative_rows_sum_to_zero_in_interior() {
        let g = Grid::new(3.0, 9).unwrap();
        let rs = derivative_matrix(&g).row_sums();
        for v in &rs[1..rs.len() - 1] {
            assert_eq!(*v, 0.0);
        }
    }

    // Two-point Gauss quadrature over each element of the defining integrals.
    fn quadrature_forms(grid: &Grid, w: &[f64], u: &[f64], mu: f64) -> (f64, f64, f64) {
        let h = grid.spacing();
        let nodal = |v: &[f64], i: usize| -> f64 {
            if i == 0 || i == grid.n_nodes() - 1 {
                0.0
            } else {
                v[i - 1]
            }
        };
        let g = 0.5 / 3f64.sqrt();
        let (mut mass, mut stiff, mut deriv) = (0.0, 0.0, 0.0);
        for e in 0..grid.n_nodes() - 1 {
            let (wl, wr) = (nodal(w, e), nodal(w, e + 1));
            let (ul, ur) = (nodal(u, e), nodal(u, e + 1));
            let dw = (wr - wl) / h;
            let du = (ur - ul) / h;
            for s in [0.5 - g, 0.5 + g] {
                let wv = wl + s * (wr - wl);
                let uv = ul + s * (ur - ul);
                mass += 0.5 * h * wv * uv;
                stiff += 0.5 * h * dw * du;
                deriv += 0.5 * h * dw * uv;
            }
        }
        (mass, 0.5 * stiff - mu * deriv, deriv)
    }

    proptest! {
        #[test]
        fn matrices_match_element_quadrature(
            n in 3usize..12,
            w in proptest::collection::vec(-1.0f64..1.0, 10),
            u in proptest::collection::vec(-1.0f64..1.0, 10),
            sigma in 0.05f64..1.0,
        ) {
            let g = Grid::new(5.0, n).unwrap();
            let p = params(sigma);
            let m = assemble(&g, &p, false);
            let w = &w[..g.n_interior()];
            let u = &u[..g.n_interior()];
            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            let (mq, aq, dq) = quadrature_forms(&g, w, u, p.mu());
            prop_assert!((dot(w, &m.mass.apply(u)) - mq).abs() < 1e-12);
            prop_assert!((dot(w, &m.generator.apply(u)) - aq).abs() < 1e-12);
            prop_assert!((dot(w, &m.derivative.apply(u)) - dq).abs() < 1e-12);
        }

        #[test]
        fn projection_is_linear_in_weights(a in 0.1f64..0.9, x1 in 0.5f64..4.5, x2 in 0.5f64..4.5) {
            let g = Grid::new(5.0, 41).unwrap();
            let single = |x: f64| {
                project_initial(&g, &InitialCondition::new(vec![(x, 1.0)]).unwrap(), false).unwrap()
            };
            let mix = project_initial(
                &g,
                &InitialCondition::new(vec![(x1, a), (x2, 1.0 - a)]).unwrap(),
                false,
            ).unwrap();
            let (p1, p2) = (single(x1), single(x2));
            for i in 0..mix.len() {
                prop_assert!((mix.values[i] - a * p1.values[i] - (1.0 - a) * p2.values[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn five_node_generator_on_tent() {
        // Discrete tent vanishing at both ends: interior values 1, 2, 1.
        let g = Grid::new(4.0, 5).unwrap();
        let p = params(0.22);
        let m = assemble(&g, &p, false);
        let u = [1.0, 2.0, 1.0];
        for k in 0..3 {
            let mut e = [0.0; 3];
            e[k] = 1.0;
            let (_, aq, _) = quadrature_forms(&g, &e, &u, p.mu());
            let row = m.generator.apply(&u)[k];
            assert!((row - aq).abs() < 1e-12);
        }
    }

    #[test]
    fn nodal_atom_projects_to_scaled_hat() {
        let g = Grid::new(10.0, 101).unwrap();
        let x = g.node(40);
        let v = project_initial(&g, &InitialCondition::new(vec![(x, 1.0)]).unwrap(), true).unwrap();
        let h = g.spacing();
        for (i, val) in v.values.iter().enumerate() {
            let expect = if i + 1 == 40 { 1.0 / h } else { 0.0 };
            assert!((val - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn midpoint_atom_splits_equally() {
        let g = Grid::new(10.0, 101).unwrap();
        let x = 0.5 * (g.node(40) + g.node(41));
        let v = project_initial(&g, &InitialCondition::new(vec![(x, 1.0)]).unwrap(), true).unwrap();
        assert!((v.values[39] - v.values[40]).abs() < 1e-9);
        assert!((integrate(&g, &v) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn many_atoms_keep_unit_mass() {
        let g = Grid::new(30.0, 2001).unwrap();
        let xs: Vec<f64> = (0..125)
            .map(|i| 2.0 + 4.0 * i as f64 / 124.0 + 1e-3 * (i as f64).sin())
            .collect();
        let ic = InitialCondition::equal_weights(&xs).unwrap();
        for lumped in [true, false] {
            let v = project_initial(&g, &ic, lumped).unwrap();
            assert!((integrate(&g, &v) - 1.0).abs() < 1e-10, "lumped={lumped}");
        }
    }

    #[test]
    fn atom_outside_grid_is_rejected() {
        let g = Grid::new(5.0, 11).unwrap();
        let ic = InitialCondition::new(vec![(6.0, 1.0)]).unwrap();
        let err = project_initial(&g, &ic, true).unwrap_err();
        assert!(err.to_string().contains("enlarge grid_upper"));
    }

    #[test]
    fn integrate_examples() {
        let g = Grid::new(5.0, 11).unwrap();
        assert_eq!(integrate(&g, &DensityVector::zeros(&g)), 0.0);
        let mut v = DensityVector::zeros(&g);
        v.values[3] = 1.0 / g.spacing();
        assert!((integrate(&g, &v) - 1.0).abs() < 1e-15);
    }
}
