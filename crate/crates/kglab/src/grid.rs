//! Spatial discretization: symmetric uniform grids, grid functions with parity
//! tags, 8th-order finite differences, quadrature, cumulative integration, and
//! the smoothing inverse `X_eps = (1 - eps d_xx)^{-2}`.
//!
//! Everything here is a pure function of its inputs; grids and grid functions
//! are immutable once constructed and safe to share across threads.

use crate::{Error, Result};
use std::sync::Arc;

/// Width of the centered interior stencil (8th order).
const CENTERED_PTS: usize = 9;
/// Width of the offset stencils used near the boundary. Ten nodes keep the
/// one-sided second derivative at 8th order.
const BOUNDARY_PTS: usize = 10;
/// Number of rows on each side that need offset stencils.
const BOUNDARY_ROWS: usize = CENTERED_PTS / 2;

/// Parity of a function sampled on a symmetric grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
    None,
}

impl Parity {
    /// Parity of a pointwise product.
    pub fn product(self, other: Parity) -> Parity {
        match (self, other) {
            (Parity::Even, Parity::Even) | (Parity::Odd, Parity::Odd) => Parity::Even,
            (Parity::Even, Parity::Odd) | (Parity::Odd, Parity::Even) => Parity::Odd,
            _ => Parity::None,
        }
    }

    /// Parity of a sum; mixed parities lose the tag.
    pub fn sum(self, other: Parity) -> Parity {
        if self == other {
            self
        } else {
            Parity::None
        }
    }

    /// Parity after one spatial derivative.
    pub fn flip(self) -> Parity {
        match self {
            Parity::Even => Parity::Odd,
            Parity::Odd => Parity::Even,
            Parity::None => Parity::None,
        }
    }
}

/// Precomputed finite-difference stencils for one grid.
#[derive(Debug)]
struct DiffTables {
    /// Centered weights for k = 0..=4; order-1 row is used antisymmetrically.
    centered: [[f64; BOUNDARY_ROWS + 1]; 2],
    /// Offset-row weights near the left boundary, rows 0..=3 over nodes 0..=9.
    boundary: [[[f64; BOUNDARY_PTS]; BOUNDARY_ROWS]; 2],
}

/// Uniform symmetric grid on `[-R, R]` with an odd number of nodes, so that
/// `x = 0` is a node and `x_j = -x_{N-1-j}` holds exactly.
#[derive(Debug)]
pub struct Grid1D {
    half_width: f64,
    n_points: usize,
    spacing: f64,
    sponge_width: f64,
    nodes: Vec<f64>,
    tables: DiffTables,
}

impl PartialEq for Grid1D {
    fn eq(&self, other: &Self) -> bool {
        self.half_width == other.half_width
            && self.n_points == other.n_points
            && self.sponge_width == other.sponge_width
    }
}

impl Grid1D {
    /// Create a grid with half-width `R`, `N` nodes (odd), and the given sponge
    /// width (`0` disables the sponge).
    pub fn new(half_width: f64, n_points: usize, sponge_width: f64) -> Result<Arc<Self>> {
        if !(half_width > 0.0) {
            return Err(Error::Config(format!("half_width must be positive, got {half_width}")));
        }
        if n_points % 2 == 0 || n_points < 2 * BOUNDARY_PTS + 1 {
            return Err(Error::Config(format!(
                "n_points must be odd and at least {}, got {n_points}",
                2 * BOUNDARY_PTS + 1
            )));
        }
        if !(0.0..=half_width).contains(&sponge_width) {
            return Err(Error::Config(format!(
                "sponge_width must lie in [0, {half_width}], got {sponge_width}"
            )));
        }
        let spacing = 2.0 * half_width / (n_points - 1) as f64;
        let center = (n_points - 1) / 2;
        // Nodes from signed index arithmetic: x_c = 0 and x_j = -x_{N-1-j}
        // hold bit-exactly.
        let nodes: Vec<f64> = (0..n_points)
            .map(|j| (j as isize - center as isize) as f64 * spacing)
            .collect();
        let tables = DiffTables::build(spacing);
        Ok(Arc::new(Grid1D { half_width, n_points, spacing, sponge_width, nodes, tables }))
    }

    /// Default laboratory grid: `R = 60`, `N = 4801` (`h = 0.025`), sponge `R/6`.
    pub fn default_lab() -> Arc<Self> {
        Grid1D::new(60.0, 4801, 10.0).expect("default grid parameters are valid")
    }

    /// Grid with the same extent and sponge but doubled resolution
    /// (`N -> 2N - 1`, so nodes nest and `N` stays odd).
    pub fn refined(&self) -> Arc<Self> {
        Grid1D::new(self.half_width, 2 * self.n_points - 1, self.sponge_width)
            .expect("refinement of a valid grid is valid")
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn sponge_width(&self) -> f64 {
        self.sponge_width
    }

    /// Index of the center node `x = 0`.
    pub fn center(&self) -> usize {
        (self.n_points - 1) / 2
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, j: usize) -> f64 {
        self.nodes[j]
    }

    /// Nearest node index for a coordinate inside the grid.
    pub fn index_of(&self, x: f64) -> Result<usize> {
        if x < -self.half_width - 0.5 * self.spacing || x > self.half_width + 0.5 * self.spacing {
            return Err(Error::Precondition(format!("coordinate {x} outside grid")));
        }
        let j = ((x + self.half_width) / self.spacing).round() as isize;
        Ok(j.clamp(0, self.n_points as isize - 1) as usize)
    }
}

/// Real-valued function sampled on a [`Grid1D`], carrying a parity tag.
#[derive(Debug, Clone)]
pub struct GridFn {
    grid: Arc<Grid1D>,
    values: Vec<f64>,
    parity: Parity,
}

impl GridFn {
    /// Wrap raw samples. The tag is trusted; see [`GridFn::asymmetry`].
    pub fn from_values(grid: Arc<Grid1D>, values: Vec<f64>, parity: Parity) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        Ok(GridFn { grid, values, parity })
    }

    /// Sample `f(x)` on the grid nodes.
    pub fn sample(grid: &Arc<Grid1D>, parity: Parity, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().iter().map(|&x| f(x)).collect();
        GridFn { grid: Arc::clone(grid), values, parity }
    }

    pub fn zeros(grid: &Arc<Grid1D>) -> Self {
        GridFn { grid: Arc::clone(grid), values: vec![0.0; grid.len()], parity: Parity::Even }
    }

    pub fn grid(&self) -> &Arc<Grid1D> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    pub fn with_parity(mut self, parity: Parity) -> Self {
        self.parity = parity;
        self
    }

    pub fn same_grid(&self, other: &GridFn) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Largest deviation from the tagged symmetry, `max_j |v_j -+ v_{N-1-j}|`;
    /// `0` for untagged functions.
    pub fn asymmetry(&self) -> f64 {
        let n = self.values.len();
        let mut worst = 0.0f64;
        match self.parity {
            Parity::Even => {
                for j in 0..n / 2 {
                    worst = worst.max((self.values[j] - self.values[n - 1 - j]).abs());
                }
            }
            Parity::Odd => {
                for j in 0..n / 2 {
                    worst = worst.max((self.values[j] + self.values[n - 1 - j]).abs());
                }
                worst = worst.max(self.values[n / 2].abs());
            }
            Parity::None => {}
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn scale(&self, s: f64) -> GridFn {
        GridFn {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().map(|v| s * v).collect(),
            parity: self.parity,
        }
    }

    pub fn add(&self, other: &GridFn) -> GridFn {
        debug_assert!(self.same_grid(other).is_ok());
        GridFn {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
            parity: self.parity.sum(other.parity),
        }
    }

    pub fn sub(&self, other: &GridFn) -> GridFn {
        debug_assert!(self.same_grid(other).is_ok());
        GridFn {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
            parity: self.parity.sum(other.parity),
        }
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, s: f64, other: &GridFn) -> GridFn {
        debug_assert!(self.same_grid(other).is_ok());
        GridFn {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + s * b).collect(),
            parity: self.parity.sum(other.parity),
        }
    }

    /// Pointwise product.
    pub fn mul(&self, other: &GridFn) -> GridFn {
        debug_assert!(self.same_grid(other).is_ok());
        GridFn {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect(),
            parity: self.parity.product(other.parity),
        }
    }

    /// `L^2` inner product `<f, g>` by quadrature.
    pub fn inner(&self, other: &GridFn) -> f64 {
        quad(&self.mul(other))
    }

    /// `L^2` norm by quadrature.
    pub fn norm(&self) -> f64 {
        self.inner(self).max(0.0).sqrt()
    }

    /// Weighted norm `|| w f ||`.
    pub fn weighted_norm(&self, weight: &GridFn) -> f64 {
        self.mul(weight).norm()
    }

    /// `L^2` norm restricted to `|x| <= cut`.
    pub fn norm_within(&self, cut: f64) -> f64 {
        let h = self.grid.spacing();
        let mut acc = 0.0;
        for (j, &x) in self.grid.nodes().iter().enumerate() {
            if x.abs() <= cut {
                acc += self.values[j] * self.values[j];
            }
        }
        (acc * h).sqrt()
    }

    /// `L^2` norm over the band `cut < |x|`.
    pub fn norm_outside(&self, cut: f64) -> f64 {
        let h = self.grid.spacing();
        let mut acc = 0.0;
        for (j, &x) in self.grid.nodes().iter().enumerate() {
            if x.abs() > cut {
                acc += self.values[j] * self.values[j];
            }
        }
        (acc * h).sqrt()
    }

    /// Max-abs over the interior `|x| <= R - margin`.
    pub fn max_abs_within(&self, margin: f64) -> f64 {
        let cut = self.grid.half_width() - margin;
        let mut worst = 0.0f64;
        for (j, &x) in self.grid.nodes().iter().enumerate() {
            if x.abs() <= cut {
                worst = worst.max(self.values[j].abs());
            }
        }
        worst
    }
}

impl DiffTables {
    fn build(h: f64) -> Self {
        let mut centered = [[0.0; BOUNDARY_ROWS + 1]; 2];
        let mut boundary = [[[0.0; BOUNDARY_PTS]; BOUNDARY_ROWS]; 2];
        let offsets: Vec<f64> = (-(BOUNDARY_ROWS as isize)..=BOUNDARY_ROWS as isize)
            .map(|k| k as f64)
            .collect();
        let left: Vec<f64> = (0..BOUNDARY_PTS).map(|k| k as f64).collect();
        for (mi, m) in [1usize, 2].into_iter().enumerate() {
            let scale = h.powi(-(m as i32));
            let w = fd_weights(0.0, &offsets, m);
            for k in 0..=BOUNDARY_ROWS {
                centered[mi][k] = w[BOUNDARY_ROWS + k] * scale;
            }
            // Pin the center weight so every row annihilates constants exactly.
            centered[mi][0] = -2.0 * centered[mi][1..].iter().sum::<f64>();
            for row in 0..BOUNDARY_ROWS {
                let w = fd_weights(row as f64, &left, m);
                for k in 0..BOUNDARY_PTS {
                    boundary[mi][row][k] = w[k] * scale;
                }
                let others: f64 =
                    (0..BOUNDARY_PTS).filter(|&k| k != row).map(|k| boundary[mi][row][k]).sum();
                boundary[mi][row][row] = -others;
            }
        }
        DiffTables { centered, boundary }
    }
}

/// Finite-difference weights for the `m`-th derivative at `z` over nodes `xs`
/// (Fornberg's recursion).
fn fd_weights(z: f64, xs: &[f64], m: usize) -> Vec<f64> {
    let n = xs.len();
    let mut c = vec![vec![0.0f64; m + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - z;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[m]).collect()
}

/// 8th-order spatial derivative of order 1 or 2. Centered stencils in the
/// interior, offset stencils of the same order at the boundary. The stencil is
/// applied in symmetrized pairs so that parity is preserved bit-exactly.
pub fn diff(f: &GridFn, order: usize) -> Result<GridFn> {
    if order != 1 && order != 2 {
        return Err(Error::Config(format!("diff order must be 1 or 2, got {order}")));
    }
    let grid = f.grid();
    let n = grid.len();
    if n < 2 * BOUNDARY_PTS + 1 {
        return Err(Error::Config(format!("grid too small for 8th-order stencils: N = {n}")));
    }
    let mi = order - 1;
    let t = &grid.tables;
    let v = f.values();
    let mut out = vec![0.0f64; n];

    if order == 1 {
        // Antisymmetric pairing: w_0 = 0 for the first derivative.
        let w = &t.centered[0];
        for j in BOUNDARY_ROWS..n - BOUNDARY_ROWS {
            let mut acc = 0.0;
            for k in 1..=BOUNDARY_ROWS {
                acc += w[k] * (v[j + k] - v[j - k]);
            }
            out[j] = acc;
        }
    } else {
        let w = &t.centered[1];
        for j in BOUNDARY_ROWS..n - BOUNDARY_ROWS {
            let mut acc = w[0] * v[j];
            for k in 1..=BOUNDARY_ROWS {
                acc += w[k] * (v[j + k] + v[j - k]);
            }
            out[j] = acc;
        }
    }
    // Boundary rows; the right side mirrors the left so that the whole
    // operator commutes exactly with reflection.
    let sign = if order == 1 { -1.0 } else { 1.0 };
    for row in 0..BOUNDARY_ROWS {
        let w = &t.boundary[mi][row];
        let mut left = 0.0;
        let mut right = 0.0;
        for k in 0..BOUNDARY_PTS {
            left += w[k] * v[k];
            right += w[k] * v[n - 1 - k];
        }
        out[row] = left;
        out[n - 1 - row] = sign * right;
    }

    let parity = if order == 1 { f.parity().flip() } else { f.parity() };
    GridFn::from_values(Arc::clone(grid), out, parity)
}

/// Second derivative with the centered 8th-order stencil everywhere, closed
/// at the walls by odd-reflection ghosts (`f(x_wall - s) = -f(x_wall + s)`).
/// The folded operator is symmetric, so time evolution with it is free of the
/// boundary instabilities that one-sided closures create; the closure acts as
/// a reflecting wall pinning `f = 0` there. Intended for the evolution
/// right-hand sides; [`diff`] keeps full-order one-sided rows for analysis.
pub fn laplacian_dirichlet(f: &GridFn) -> Result<GridFn> {
    let grid = f.grid();
    let n = grid.len();
    if n < 2 * BOUNDARY_PTS + 1 {
        return Err(Error::Config(format!("grid too small for 8th-order stencils: N = {n}")));
    }
    let w = &grid.tables.centered[1];
    let v = f.values();
    let mut out = vec![0.0f64; n];
    for j in BOUNDARY_ROWS..n - BOUNDARY_ROWS {
        let mut acc = w[0] * v[j];
        for k in 1..=BOUNDARY_ROWS {
            acc += w[k] * (v[j + k] + v[j - k]);
        }
        out[j] = acc;
    }
    // Ghosts: index -m about the left wall maps to -v[m]; mirrored right.
    for j in 0..BOUNDARY_ROWS {
        let mut left = w[0] * v[j];
        let mut right = w[0] * v[n - 1 - j];
        for k in 1..=BOUNDARY_ROWS {
            let lo = j as isize - k as isize;
            let l_ghost = if lo >= 0 { v[lo as usize] } else { -v[(-lo) as usize] };
            left += w[k] * (v[j + k] + l_ghost);
            let hi = j as isize - k as isize;
            let r_ghost =
                if hi >= 0 { v[n - 1 - hi as usize] } else { -v[n - 1 - (-hi) as usize] };
            right += w[k] * (v[n - 1 - j - k] + r_ghost);
        }
        out[j] = left;
        out[n - 1 - j] = right;
    }
    GridFn::from_values(Arc::clone(grid), out, f.parity())
}

/// Trapezoid quadrature over the grid. Node pairs `(j, N-1-j)` are summed
/// together, which makes the rule exactly mirror-symmetric.
pub fn quad(f: &GridFn) -> f64 {
    let v = f.values();
    let n = v.len();
    let c = n / 2;
    let mut acc = 0.5 * (v[0] + v[n - 1]);
    for j in 1..c {
        acc += v[j] + v[n - 1 - j];
    }
    acc += v[c];
    acc * f.grid().spacing()
}

/// Cumulative integral `F(x) = int_0^x f`, anchored at the center node, with
/// Euler-Maclaurin endpoint corrections through `h^6` so that smooth decaying
/// integrands are reproduced to stencil accuracy.
pub fn cumint(f: &GridFn) -> Result<GridFn> {
    let grid = f.grid();
    let n = grid.len();
    let c = grid.center();
    let h = grid.spacing();
    let v = f.values();

    let mut acc = vec![0.0f64; n];
    for j in c..n - 1 {
        acc[j + 1] = acc[j] + 0.5 * h * (v[j] + v[j + 1]);
    }
    for j in (0..c).rev() {
        acc[j] = acc[j + 1] - 0.5 * h * (v[j] + v[j + 1]);
    }

    // Endpoint corrections: int_a^b = T - h^2/12 [f'] + h^4/720 [f'''] - h^6/30240 [f^(5)].
    let f1 = diff(f, 1)?;
    let f2 = diff(f, 2)?;
    let f3 = diff(&f2, 1)?;
    let f5 = diff(&diff(&f2, 2)?, 1)?;
    let (c2, c4, c6) = (h * h / 12.0, h.powi(4) / 720.0, h.powi(6) / 30240.0);
    let (d1, d3, d5) = (f1.values(), f3.values(), f5.values());
    for j in 0..n {
        acc[j] += -c2 * (d1[j] - d1[c]) + c4 * (d3[j] - d3[c]) - c6 * (d5[j] - d5[c]);
    }
    GridFn::from_values(Arc::clone(grid), acc, f.parity().flip())
}

/// Smoothing inverse `X_eps f = (1 - eps d_xx)^{-2} f`, realized by two
/// successive tridiagonal solves of `(1 - eps D2)` with zero Dirichlet data.
/// `eps = 0` returns `f` unchanged. Parity is preserved.
pub fn smooth_inverse(f: &GridFn, eps: f64) -> Result<GridFn> {
    if eps < 0.0 {
        return Err(Error::Config(format!("smoothing eps must be nonnegative, got {eps}")));
    }
    if eps == 0.0 {
        return Ok(f.clone());
    }
    let grid = f.grid();
    let n = grid.len();
    let h = grid.spacing();
    let r = eps / (h * h);
    let diag = 1.0 + 2.0 * r;
    let off = -r;

    let mut stage = f.values().to_vec();
    let mut cp = vec![0.0f64; n - 2];
    let mut dp = vec![0.0f64; n - 2];
    for _ in 0..2 {
        // Thomas algorithm on the interior unknowns, k_0 = k_{N-1} = 0.
        let m = n - 2;
        let mut beta = diag;
        if beta == 0.0 {
            return Err(Error::Internal("singular pivot in smoothing solve".into()));
        }
        cp[0] = off / beta;
        dp[0] = stage[1] / beta;
        for i in 1..m {
            beta = diag - off * cp[i - 1];
            if beta == 0.0 {
                return Err(Error::Internal("singular pivot in smoothing solve".into()));
            }
            cp[i] = off / beta;
            dp[i] = (stage[i + 1] - off * dp[i - 1]) / beta;
        }
        stage[n - 2] = dp[m - 1];
        for i in (0..m - 1).rev() {
            stage[i + 1] = dp[i] - cp[i] * stage[i + 2];
        }
        stage[0] = 0.0;
        stage[n - 1] = 0.0;
    }
    GridFn::from_values(Arc::clone(grid), stage, f.parity())
}
