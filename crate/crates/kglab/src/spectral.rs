//! Closed-form spectral data of the linearized operator `L = -d_xx - 2Q + 1`
//! around the soliton `Q(x) = (3/2) sech^2(x/2)`, together with the weight
//! functions used by the virial functionals.
//!
//! The discrete spectrum consists of the unstable mode `Y0` (eigenvalue
//! `-nu^2 = -5/4`), the translational mode `Y1` (eigenvalue `0`), and the
//! internal mode `Y2` (gap eigenvalue `mu^2 = 3/4`); `Y3` is the odd threshold
//! resonance with `L Y3 = Y3`. The bounded function `g` solves `L g = 3 g` and
//! feeds the nonlinear-resonance constant `Gamma = (1/2) int Y2^2 g`.

use crate::grid::{diff, quad, Grid1D, GridFn, Parity};
use crate::{Error, Result};
use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

fn sech(x: f64) -> f64 {
    1.0 / x.cosh()
}

/// Soliton profile `Q(x) = (3/2) sech^2(x/2)`.
pub fn soliton(x: f64) -> f64 {
    1.5 * sech(x / 2.0).powi(2)
}

/// Closed-form spectral data sampled on one grid.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    grid: Arc<Grid1D>,
    pub q: GridFn,
    pub y0: GridFn,
    pub y1: GridFn,
    pub y2: GridFn,
    pub y3: GridFn,
    pub g: GridFn,
    pub nu: f64,
    pub mu: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub gamma: f64,
}

impl SpectralBasis {
    /// Sample every closed form on the grid. `Gamma` is set from its closed
    /// form `(243/32) pi / sinh(sqrt(2) pi)`.
    pub fn build(grid: &Arc<Grid1D>) -> Self {
        let c0 = (15.0f64 / 32.0).sqrt();
        let c1 = (15.0f64 / 8.0).sqrt();
        let c2 = (3.0f64 / 32.0).sqrt();
        let q = GridFn::sample(grid, Parity::Even, soliton);
        let y0 = GridFn::sample(grid, Parity::Even, |x| c0 * sech(x / 2.0).powi(3));
        let y1 =
            GridFn::sample(grid, Parity::Odd, |x| c1 * sech(x / 2.0).powi(2) * (x / 2.0).tanh());
        let y2 = GridFn::sample(grid, Parity::Even, |x| {
            let s = (x / 2.0).sinh();
            c2 * sech(x / 2.0).powi(3) * (1.0 - 4.0 * s * s)
        });
        let y3 = GridFn::sample(grid, Parity::Odd, |x| {
            let t = (x / 2.0).tanh();
            t - 2.5 * sech(x / 2.0).powi(2) * t
        });
        let g = GridFn::sample(grid, Parity::Even, fgr_g);
        let gamma = 243.0 / 32.0 * PI / (SQRT_2 * PI).sinh();
        SpectralBasis {
            grid: Arc::clone(grid),
            q,
            y0,
            y1,
            y2,
            y3,
            g,
            nu: (5.0f64 / 4.0).sqrt(),
            mu: (3.0f64 / 4.0).sqrt(),
            c0,
            c1,
            c2,
            gamma,
        }
    }

    pub fn grid(&self) -> &Arc<Grid1D> {
        &self.grid
    }

    /// Apply the linearized operator: `L f = -f'' - 2 Q f + f`.
    pub fn apply_l(&self, f: &GridFn) -> Result<GridFn> {
        f.same_grid(&self.q)?;
        let d2 = diff(f, 2)?;
        let vals: Vec<f64> = f
            .values()
            .iter()
            .zip(d2.values())
            .zip(self.q.values())
            .map(|((&fv, &dv), &qv)| -dv - 2.0 * qv * fv + fv)
            .collect();
        GridFn::from_values(Arc::clone(&self.grid), vals, f.parity())
    }

    /// Projection onto the continuous spectral subspace:
    /// `P_c f = f - <Y0,f> Y0 - <Y1,f> Y1 - <Y2,f> Y2`.
    pub fn project_continuous(&self, f: &GridFn) -> GridFn {
        let parity = f.parity();
        let mut out = f.add_scaled(-self.y0.inner(f), &self.y0);
        out = out.add_scaled(-self.y1.inner(f), &self.y1);
        out = out.add_scaled(-self.y2.inner(f), &self.y2);
        out.with_parity(parity)
    }

    /// `Gamma` by direct quadrature, `(1/2) int Y2^2 g`.
    pub fn fgr_constant_by_quadrature(&self) -> f64 {
        0.5 * quad(&self.y2.mul(&self.y2).mul(&self.g))
    }

    /// Residual of the eigen-relation `L f = lambda f` over the interior
    /// `|x| <= R - margin`, in the restricted `L^2` norm relative to `scale`.
    pub fn eigen_residual(&self, f: &GridFn, lambda: f64, margin: f64, scale: f64) -> Result<f64> {
        let lf = self.apply_l(f)?;
        let res = lf.add_scaled(-lambda, f);
        let cut = self.grid.half_width() - margin;
        Ok(res.norm_within(cut) / scale)
    }
}

/// The bounded solution of `L g = 3 g` generating the resonance constant.
pub fn fgr_g(x: f64) -> f64 {
    let t = (x / 2.0).tanh();
    let s2 = sech(x / 2.0).powi(2);
    (SQRT_2 * x).cos() * (-1.5 / SQRT_2 + 7.5 / SQRT_2 * s2)
        + (SQRT_2 * x).sin() * (-57.0 / 8.0 * t + 15.0 / 8.0 * t * t * t)
}

/// Closed-form odd profile `H(x) = D1 D2 D3 (Y2^2)`.
pub fn fgr_h_closed(x: f64) -> f64 {
    let s = sech(x / 2.0);
    9.0 / 256.0 * (875.0 * s.powi(8) - 700.0 * s.powi(6) + 64.0 * s.powi(4)) * (x / 2.0).tanh()
}

/// Fourier-side resonance value: `i sqrt(pi/2) Hhat(sqrt 2)` with
/// `Hhat(xi) = -(i/64) sqrt(pi/2) (-28 + 17 xi^2 + 70 xi^4 + 25 xi^6) xi^2 / sinh(pi xi)`.
pub fn fgr_gamma_from_transform() -> f64 {
    let xi2 = 2.0f64;
    let poly = -28.0 + 17.0 * xi2 + 70.0 * xi2 * xi2 + 25.0 * xi2 * xi2 * xi2;
    (PI / 2.0) / 64.0 * poly * xi2 / (PI * SQRT_2).sinh()
}

/// Report of the `H(x)` cross-checks behind the resonance constant.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FgrHReport {
    /// Max deviation of the numerically transformed `Y2^2` from the closed form.
    pub max_dev_closed_form: f64,
    /// Max deviation from the odd-derivative-stack form applied to `sech^2(x/2)`.
    pub max_dev_derivative_form: f64,
    /// Resonance value reconstructed from the Fourier-side closed form.
    pub gamma_from_transform: f64,
    pub gamma_closed_form: f64,
    /// Mirror defect of the computed `H`; it must be odd.
    pub h_asymmetry: f64,
}

impl FgrHReport {
    pub fn pass(&self, tol_pointwise: f64, tol_gamma_rel: f64) -> bool {
        self.max_dev_closed_form <= tol_pointwise
            && self.max_dev_derivative_form <= tol_pointwise
            && (self.gamma_from_transform - self.gamma_closed_form).abs()
                <= tol_gamma_rel * self.gamma_closed_form.abs()
            && self.h_asymmetry <= tol_pointwise
    }
}

/// Cross-check `H = D1 D2 D3 (Y2^2)` against its two closed forms and the
/// Fourier-side value of the resonance constant.
pub fn fgr_h_identities(basis: &SpectralBasis) -> Result<FgrHReport> {
    let grid = basis.grid();
    let y2sq = basis.y2.mul(&basis.y2);
    let h_num = crate::darboux::d123(&y2sq)?;
    let h_closed = GridFn::sample(grid, Parity::Odd, fgr_h_closed);

    // (28 d + 17 d^3 - 70 d^5 + 25 d^7)[sech^2(x/2)] / 256. Stencils cannot
    // resolve the 7th derivative in f64 (rounding grows like eps/h^7), so the
    // stack is sampled from the exact odd-derivative forms
    // d^k/dx^k sech^2(x/2) = tanh(x/2) P_k(sech^2(x/2)) and combined with the
    // display's weights at runtime.
    let h_deriv = GridFn::sample(grid, Parity::Odd, |x| {
        let s = sech(x / 2.0).powi(2);
        let t = (x / 2.0).tanh();
        let p1 = -s;
        let p3 = 3.0 * s * s - s;
        let p5 = -22.5 * s * s * s + 15.0 * s * s - s;
        let p7 = 315.0 * s * s * s * s - 315.0 * s * s * s + 63.0 * s * s - s;
        t * (28.0 * p1 + 17.0 * p3 - 70.0 * p5 + 25.0 * p7) / 256.0
    });

    let margin = 2.0 * grid.sponge_width().max(0.5);
    Ok(FgrHReport {
        max_dev_closed_form: h_num.sub(&h_closed).max_abs_within(margin),
        max_dev_derivative_form: h_num.sub(&h_deriv).max_abs_within(margin),
        gamma_from_transform: fgr_gamma_from_transform(),
        gamma_closed_form: basis.gamma,
        h_asymmetry: h_num.asymmetry(),
    })
}

/// Smooth even cutoff: `1` on `|x| <= 1`, `0` on `|x| >= 2`, built from the
/// standard mollifier `psi(s) = exp(-1/s)`.
pub fn cutoff(x: f64) -> f64 {
    let s = x.abs();
    if s <= 1.0 {
        1.0
    } else if s >= 2.0 {
        0.0
    } else {
        let a = psi(2.0 - s);
        let b = psi(s - 1.0);
        a / (a + b)
    }
}

/// First derivative of [`cutoff`], in closed form.
pub fn cutoff_d1(x: f64) -> f64 {
    let s = x.abs();
    if !(1.0..2.0).contains(&s) {
        return 0.0;
    }
    let (a, b) = (psi(2.0 - s), psi(s - 1.0));
    let (ap, bp) = (-psi_d1(2.0 - s), psi_d1(s - 1.0));
    let ds = (ap * b - a * bp) / ((a + b) * (a + b));
    x.signum() * ds
}

/// Second derivative of [`cutoff`], in closed form.
pub fn cutoff_d2(x: f64) -> f64 {
    let s = x.abs();
    if !(1.0..2.0).contains(&s) {
        return 0.0;
    }
    let (a, b) = (psi(2.0 - s), psi(s - 1.0));
    let (ap, bp) = (-psi_d1(2.0 - s), psi_d1(s - 1.0));
    let (app, bpp) = (psi_d2(2.0 - s), psi_d2(s - 1.0));
    let den = a + b;
    ((app * b - a * bpp) * den - 2.0 * (ap * b - a * bp) * (ap + bp)) / (den * den * den)
}

fn psi(s: f64) -> f64 {
    if s > 0.0 {
        (-1.0 / s).exp()
    } else {
        0.0
    }
}

fn psi_d1(s: f64) -> f64 {
    if s > 0.0 {
        (-1.0 / s).exp() / (s * s)
    } else {
        0.0
    }
}

fn psi_d2(s: f64) -> f64 {
    if s > 0.0 {
        (-1.0 / s).exp() * (1.0 / (s * s * s * s) - 2.0 / (s * s * s))
    } else {
        0.0
    }
}

/// Fixed switch scale of the transformed-side virial weight.
pub const B_SCALE: f64 = 100.0;

/// Weight family for the virial functionals, sampled on one grid.
///
/// `zeta_A(x) = exp(-(1/A)(1 - chi(x))|x|)` with `Phi_A` the primitive of
/// `zeta_A^2`, `sigma_A = sech(2x/A)`, `rho = sech^2(x/20)`, and on the
/// transformed side `zeta_B = sech(x/B)`, `Phi_B = B tanh(x/B)`,
/// `Psi_{A,B} = chi_A^2 Phi_B` with `B = 100` fixed.
#[derive(Debug, Clone)]
pub struct VirialWeights {
    grid: Arc<Grid1D>,
    pub a_scale: f64,
    pub b_scale: f64,
    pub eps: f64,
    pub chi: GridFn,
    pub chi_a: GridFn,
    pub zeta_a: GridFn,
    pub phi_a: GridFn,
    /// `Phi_A' = zeta_A^2`, exact by definition of `Phi_A`.
    pub phi_a_prime: GridFn,
    /// `Phi_A''' = (zeta_A^2)''`, from the closed-form cutoff derivatives.
    pub phi_a_ppp: GridFn,
    pub sigma_a: GridFn,
    pub rho: GridFn,
    pub zeta_b: GridFn,
    pub phi_b: GridFn,
    pub psi_ab: GridFn,
    pub psi_ab_prime: GridFn,
    pub psi_ab_ppp: GridFn,
}

impl VirialWeights {
    pub fn build(grid: &Arc<Grid1D>, a_scale: f64, eps: f64) -> Result<Self> {
        if a_scale < 10.0 {
            return Err(Error::Config(format!("weight scale A must be >= 10, got {a_scale}")));
        }
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(Error::Config(format!("smoothing eps must lie in (0, 1], got {eps}")));
        }
        if 2.0 * a_scale > grid.half_width() {
            return Err(Error::Config(format!(
                "cutoff support needs 2A <= R: A = {a_scale}, R = {}",
                grid.half_width()
            )));
        }
        let b = B_SCALE;
        let chi = GridFn::sample(grid, Parity::Even, cutoff);
        let chi_a = GridFn::sample(grid, Parity::Even, |x| cutoff(x / a_scale));
        let zeta_a =
            GridFn::sample(grid, Parity::Even, |x| (-(1.0 - cutoff(x)) * x.abs() / a_scale).exp());
        let phi_a_prime = zeta_a.mul(&zeta_a);
        // Phi_A in deficit form, x - int_0^x (1 - zeta_A^2): the deficit is
        // nonnegative so |Phi_A| <= |x| holds by construction. The cumulative
        // is Romberg-extrapolated from analytic samples at h, h/2, h/4;
        // stencil derivatives of the mollifier band are unreliable, so no
        // derivative-based endpoint corrections enter here.
        let deficit_cum = cumulative_deficit(grid, a_scale);
        let phi_a = GridFn::sample(grid, Parity::Odd, |x| x).sub(&deficit_cum);
        let phi_a_ppp =
            GridFn::sample(grid, Parity::Even, |x| zeta_a_sq_d2(x, a_scale)).with_parity(Parity::Odd);
        let sigma_a = GridFn::sample(grid, Parity::Even, |x| sech(2.0 * x / a_scale));
        let rho = GridFn::sample(grid, Parity::Even, |x| sech(x / 20.0).powi(2));
        let zeta_b = GridFn::sample(grid, Parity::Even, |x| sech(x / b));
        let phi_b = GridFn::sample(grid, Parity::Odd, |x| b * (x / b).tanh());
        let psi_ab = chi_a.mul(&chi_a).mul(&phi_b);
        let psi_ab_prime = GridFn::sample(grid, Parity::Even, |x| {
            let c = cutoff(x / a_scale);
            let cp = cutoff_d1(x / a_scale) / a_scale;
            2.0 * c * cp * b * (x / b).tanh() + c * c * sech(x / b).powi(2)
        });
        // chi_A is scale-tamed, so a stencil third derivative of Psi is accurate.
        let psi_ab_ppp = diff(&diff(&psi_ab, 2)?, 1)?;
        Ok(VirialWeights {
            grid: Arc::clone(grid),
            a_scale,
            b_scale: b,
            eps,
            chi,
            chi_a,
            zeta_a,
            phi_a,
            phi_a_prime,
            phi_a_ppp,
            sigma_a,
            rho,
            zeta_b,
            phi_b,
            psi_ab,
            psi_ab_prime,
            psi_ab_ppp,
        })
    }

    pub fn grid(&self) -> &Arc<Grid1D> {
        &self.grid
    }

    /// `chi_A' = chi'(x/A)/A` in closed form.
    pub fn chi_a_d1(&self, x: f64) -> f64 {
        cutoff_d1(x / self.a_scale) / self.a_scale
    }

    /// `chi_A'' = chi''(x/A)/A^2` in closed form.
    pub fn chi_a_d2(&self, x: f64) -> f64 {
        cutoff_d2(x / self.a_scale) / (self.a_scale * self.a_scale)
    }
}

/// Odd cumulative `int_0^x (1 - zeta_A^2)` by Romberg extrapolation of
/// trapezoid sums at spacings `h`, `h/2`, `h/4`, all sampled from the closed
/// form. The result is clamped at zero (the integrand is nonnegative) and
/// mirrored, so the output is bit-exactly odd.
fn cumulative_deficit(grid: &Arc<Grid1D>, a_scale: f64) -> GridFn {
    let n = grid.len();
    let c = grid.center();
    let h = grid.spacing();
    let deficit =
        |x: f64| 1.0 - (-2.0 * (1.0 - cutoff(x)) * x.abs() / a_scale).exp();

    // Fine samples on [0, R] at spacing h/4.
    let m = 4 * (n - 1 - c) + 1;
    let fine: Vec<f64> = (0..m).map(|k| deficit(k as f64 * h / 4.0)).collect();

    // Cumulative trapezoid at each spacing, evaluated at the coarse nodes.
    let cum_at = |stride: usize| -> Vec<f64> {
        let step = h * stride as f64 / 4.0;
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(n - c);
        out.push(0.0);
        let mut k = 0;
        while k + stride < m {
            acc += 0.5 * step * (fine[k] + fine[k + stride]);
            k += stride;
            if k % 4 == 0 {
                out.push(acc);
            }
        }
        out
    };
    let t1 = cum_at(4);
    let t2 = cum_at(2);
    let t4 = cum_at(1);

    let mut vals = vec![0.0f64; n];
    for j in 0..n - c {
        let r1a = (4.0 * t2[j] - t1[j]) / 3.0;
        let r1b = (4.0 * t4[j] - t2[j]) / 3.0;
        let d = ((16.0 * r1b - r1a) / 15.0).max(0.0);
        vals[c + j] = d;
        vals[c - j] = -d;
    }
    GridFn::from_values(Arc::clone(grid), vals, Parity::Odd).expect("sized to grid")
}

/// `(zeta_A^2)''(x)` from the closed-form cutoff derivatives. The parity-even
/// profile depends on `|x|` only; inside `|x| < 1` the exponent vanishes
/// identically so all derivatives are zero there.
fn zeta_a_sq_d2(x: f64, a: f64) -> f64 {
    let s = x.abs();
    if s <= 1.0 {
        return 0.0;
    }
    let c = cutoff(s);
    let cp = cutoff_d1(s);
    let cpp = cutoff_d2(s);
    let m = (1.0 - c) * s;
    let mp = (1.0 - c) - cp * s;
    let mpp = -2.0 * cp - cpp * s;
    let z2 = (-2.0 * m / a).exp();
    ((2.0 / a) * (2.0 / a) * mp * mp - (2.0 / a) * mpp) * z2
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn basis() -> SpectralBasis {
        SpectralBasis::build(&Grid1D::default_lab())
    }

    #[test]
    fn closed_form_point_values() {
        let b = basis();
        let c = b.grid().center();
        assert_abs_diff_eq!(b.q.values()[c], 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(b.y2.values()[c], (3.0f64 / 32.0).sqrt(), epsilon = 1e-15);
        // Frozen 16-digit evaluation of (243/32) pi / sinh(sqrt2 pi).
        assert_abs_diff_eq!(b.gamma, 0.5612763021797835, epsilon = 1e-15);
    }

    #[test]
    fn eigenfunctions_are_orthonormal() {
        let b = basis();
        let ys = [&b.y0, &b.y1, &b.y2];
        for (i, yi) in ys.iter().enumerate() {
            for (j, yj) in ys.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(yi.inner(yj), want, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn eigen_relations_hold() {
        let b = basis();
        let m = 2.0 * b.grid().sponge_width();
        assert!(b.eigen_residual(&b.y0, -1.25, m, b.y0.norm()).unwrap() <= 1e-7);
        let y1pp_norm = diff(&b.y1, 2).unwrap().norm();
        assert!(b.eigen_residual(&b.y1, 0.0, m, y1pp_norm).unwrap() <= 1e-7);
        assert!(b.eigen_residual(&b.y2, 0.75, m, b.y2.norm()).unwrap() <= 1e-7);
    }

    #[test]
    fn resonance_and_g_satisfy_their_relations_pointwise() {
        let b = basis();
        let margin = 2.0 * b.grid().sponge_width();
        let ly3 = b.apply_l(&b.y3).unwrap();
        assert!(ly3.sub(&b.y3).max_abs_within(margin) <= 1e-7);
        let lg = b.apply_l(&b.g).unwrap();
        assert!(lg.sub(&b.g.scale(3.0)).max_abs_within(margin) <= 1e-7);
    }

    #[test]
    fn eigen_residuals_shrink_at_stencil_order_under_refinement() {
        let coarse = Grid1D::new(60.0, 601, 10.0).unwrap();
        let fine = coarse.refined();
        let bc = SpectralBasis::build(&coarse);
        let bf = SpectralBasis::build(&fine);
        let rc = bc.eigen_residual(&bc.y0, -1.25, 20.0, bc.y0.norm()).unwrap();
        let rf = bf.eigen_residual(&bf.y0, -1.25, 20.0, bf.y0.norm()).unwrap();
        assert!(rc / rf >= 64.0, "ratio {} (coarse {rc:.3e}, fine {rf:.3e})", rc / rf);
    }

    #[test]
    fn projection_annihilates_basis_and_keeps_resonance() {
        let b = basis();
        assert!(b.project_continuous(&b.y0).norm() <= 1e-10);
        let f = b.y2.add(&b.y3);
        let p = b.project_continuous(&f);
        assert!(p.sub(&b.y3).norm_within(50.0) <= 1e-9);
    }

    #[test]
    fn projection_is_idempotent() {
        let b = basis();
        let f = GridFn::sample(b.grid(), Parity::None, |x| {
            (-(x - 1.0) * (x - 1.0) / 6.0).exp() + 0.3 * (x / 30.0).sin() * sech(x / 4.0)
        });
        let p1 = b.project_continuous(&f);
        let p2 = b.project_continuous(&p1);
        assert!(p2.sub(&p1).norm() <= 1e-10);
    }

    #[test]
    fn g_is_orthogonal_to_discrete_modes() {
        let b = basis();
        assert!(b.y0.inner(&b.g).abs() <= 1e-9);
        assert!(b.y2.inner(&b.g).abs() <= 1e-9);
    }

    #[test]
    fn resonance_constant_by_quadrature() {
        let b = basis();
        let gq = b.fgr_constant_by_quadrature();
        assert!((gq - b.gamma).abs() <= 1e-9 * b.gamma);

        // Same value on the halved domain: the integrand decays like sech^6.
        let half = Grid1D::new(30.0, 2401, 5.0).unwrap();
        let bh = SpectralBasis::build(&half);
        assert!((bh.fgr_constant_by_quadrature() - gq).abs() <= 1e-9 * gq);

        // Parity: replacing g by the odd resonance kills the integral.
        let odd = quad(&b.y2.mul(&b.y2).mul(&b.y3));
        assert!(odd.abs() <= 1e-10);
    }

    #[test]
    fn transform_side_polynomial_arithmetic() {
        // (-28 + 17*2 + 70*4 + 25*8) = 486, times xi^2 = 2 gives 972, and
        // 972/128 = 243/32 = 7.59375 reproduces the closed-form prefactor.
        let poly = -28.0 + 17.0 * 2.0 + 70.0 * 4.0 + 25.0 * 8.0;
        assert_abs_diff_eq!(poly, 486.0, epsilon = 0.0);
        assert_abs_diff_eq!(poly * 2.0 / 128.0, 243.0 / 32.0, epsilon = 1e-14);
        let b = basis();
        assert!((fgr_gamma_from_transform() - b.gamma).abs() <= 1e-14);
    }

    #[test]
    fn cutoff_matches_finite_differences() {
        let hs = 1e-5;
        for &x in &[1.13, 1.5, 1.77, -1.3, -1.92] {
            let fd1 = (cutoff(x + hs) - cutoff(x - hs)) / (2.0 * hs);
            assert_abs_diff_eq!(cutoff_d1(x), fd1, epsilon = 1e-5);
            let fd2 = (cutoff(x + hs) - 2.0 * cutoff(x) + cutoff(x - hs)) / (hs * hs);
            assert_abs_diff_eq!(cutoff_d2(x), fd2, epsilon = 1e-4);
        }
        assert_eq!(cutoff(0.5), 1.0);
        assert_eq!(cutoff(2.5), 0.0);
        assert_eq!(cutoff_d1(0.5), 0.0);
    }

    #[test]
    fn weights_sample_their_formulas() {
        let g = Grid1D::default_lab();
        let w = VirialWeights::build(&g, 20.0, 0.05).unwrap();
        let c = g.center();
        assert_eq!(w.phi_a.values()[c], 0.0);
        assert_eq!(w.phi_a.parity(), Parity::Odd);
        // zeta_A = 1 on |x| <= 1 where the cutoff is 1.
        for (j, &x) in g.nodes().iter().enumerate() {
            if x.abs() <= 1.0 {
                assert_eq!(w.zeta_a.values()[j], 1.0);
            }
        }
        // Phi_B(B) = B tanh(1); frozen high-precision value of 100 tanh(1).
        assert_abs_diff_eq!(w.b_scale * (1.0f64).tanh(), 76.15941559557649, epsilon = 1e-10);
        // rho is exactly sech^2(x/20); Psi is exactly the sampled product.
        for (j, &x) in g.nodes().iter().enumerate().step_by(97) {
            assert_eq!(w.rho.values()[j], sech(x / 20.0).powi(2));
            assert_eq!(w.psi_ab.values()[j], w.chi_a.values()[j].powi(2) * w.phi_b.values()[j]);
        }
    }

    #[test]
    fn phi_a_is_an_odd_primitive_with_unit_slope_bound() {
        let g = Grid1D::default_lab();
        let w = VirialWeights::build(&g, 20.0, 0.05).unwrap();
        // Stored derivative is zeta_A^2 by definition.
        for (a, b) in w.phi_a_prime.values().iter().zip(w.zeta_a.values()) {
            assert_eq!(*a, b * b);
        }
        // Stencil cross-check of the primitive, away from the cutoff band
        // where the mollifier's high derivatives defeat the stencil.
        let d = diff(&w.phi_a, 1).unwrap();
        let dev = d.sub(&w.phi_a_prime);
        let mut worst = 0.0f64;
        for (j, &x) in g.nodes().iter().enumerate() {
            if !(0.5..=2.5).contains(&x.abs()) && x.abs() <= 55.0 {
                worst = worst.max(dev.values()[j].abs());
            }
        }
        assert!(worst <= 1e-8, "stencil deviation {worst}");
        // |Phi_A| <= |x| and 0 < Phi_A' <= 1; strict monotonicity.
        for (j, &x) in g.nodes().iter().enumerate() {
            assert!(w.phi_a.values()[j].abs() <= x.abs() + 1e-12);
            assert!(w.phi_a_prime.values()[j] > 0.0 && w.phi_a_prime.values()[j] <= 1.0);
            if j > 0 {
                assert!(w.phi_a.values()[j] > w.phi_a.values()[j - 1]);
            }
        }
    }

    #[test]
    fn zeta_a_squared_and_sigma_a_are_comparable() {
        let g = Grid1D::default_lab();
        let w = VirialWeights::build(&g, 20.0, 0.05).unwrap();
        let mut c_up = 0.0f64;
        let mut c_down = 0.0f64;
        for (z2, s) in w.phi_a_prime.values().iter().zip(w.sigma_a.values()) {
            c_up = c_up.max(z2 / s);
            c_down = c_down.max(s / z2);
        }
        assert!(c_up <= 10.0, "zeta_A^2 <= C sigma_A with C = {c_up}");
        assert!(c_down <= 10.0, "sigma_A <= C zeta_A^2 with C = {c_down}");
    }

    #[test]
    fn phi_a_ppp_matches_central_differences_of_zeta_sq() {
        let g = Grid1D::default_lab();
        let w = VirialWeights::build(&g, 20.0, 0.05).unwrap();
        let hs = 1e-4;
        let z2 = |t: f64| (-2.0 * (1.0 - cutoff(t)) * t.abs() / 20.0).exp();
        for &x in &[0.7, 1.4, 1.9, 3.0, 12.0] {
            let fd = (z2(x + hs) - 2.0 * z2(x) + z2(x - hs)) / (hs * hs);
            let j = g.index_of(x).unwrap();
            assert_abs_diff_eq!(w.phi_a_ppp.values()[j], fd, epsilon = 1e-4);
        }
    }

    #[test]
    fn weights_reject_bad_parameters() {
        let g = Grid1D::default_lab();
        assert!(VirialWeights::build(&g, 5.0, 0.05).is_err());
        assert!(VirialWeights::build(&g, 20.0, 0.0).is_err());
        assert!(VirialWeights::build(&g, 20.0, 1.5).is_err());
        assert!(VirialWeights::build(&g, 40.0, 0.05).is_err());
    }

    #[test]
    fn discrete_modes_dominate_by_rho_cubed_up_to_fourth_derivatives() {
        let b = basis();
        let g = b.grid();
        let rho3 = GridFn::sample(g, Parity::Even, |x| sech(x / 20.0).powi(6));
        for f in [&b.q, &b.y0, &b.y1, &b.y2] {
            let mut cur = (*f).clone();
            for _k in 0..=4 {
                let mut c_k = 0.0f64;
                for (v, r) in cur.values().iter().zip(rho3.values()) {
                    c_k = c_k.max(v.abs() / r);
                }
                assert!(c_k <= 100.0, "decay-domination constant {c_k}");
                cur = diff(&cur, 1).unwrap();
            }
        }
    }
}
