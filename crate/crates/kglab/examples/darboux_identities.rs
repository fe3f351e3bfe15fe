//! The iterated Darboux transformation at work: the conjugation identity
//! `D1 D2 D3 L = (-d_xx + 1) D1 D2 D3`, the right inverses `R_l`, the kernel
//! combinations that reproduce the discrete modes, and the integration-by-
//! parts expansions of `R[d^2 v]` and `R[d^4 v]`.
//!
//! Run with: `cargo run --release --example darboux_identities`

use kglab::darboux;
use kglab::grid::{Grid1D, GridFn, Parity};
use kglab::spectral::SpectralBasis;

fn main() -> kglab::Result<()> {
    let grid = Grid1D::default_lab();
    let b = SpectralBasis::build(&grid);

    let bump = GridFn::sample(&grid, Parity::Even, |x| (-x * x / 7.0).exp());
    let check = darboux::conjugation_residual(&bump)?;
    println!("conjugation residual (gaussian bump) = {:.3e}", check.residual);
    let check = darboux::conjugation_residual(&b.y0)?;
    println!("conjugation residual (unstable mode) = {:.3e}", check.residual);

    // D_l R_l = id and R_l D_l = id - f(0) Z_l.
    for l in 1..=3 {
        let back = darboux::d(l, &darboux::r(l, &bump)?)?;
        println!("l = {l}: max |D_l R_l f - f| = {:.3e}", back.sub(&bump).max_abs_within(1.0));
    }

    // Kernel combinations: R3[Z2] = 2 c1^{-1} Y1, R3[R2[Z1]] = c0^{-1}Y0/2 - c2^{-1}Y2/2.
    let fac = darboux::DarbouxFactors::build(&grid);
    let r3z2 = darboux::r(3, &fac.z2)?;
    println!("max |R3[Z2] - 2 c1^-1 Y1|        = {:.3e}",
        r3z2.sub(&b.y1.scale(2.0 / b.c1)).max_abs());
    let r3r2z1 = darboux::r(3, &darboux::r(2, &fac.z1)?)?;
    let combo = b.y0.scale(0.5 / b.c0).add(&b.y2.scale(-0.5 / b.c2));
    println!("max |R3[R2[Z1]] - mode combo|    = {:.3e}", r3r2z1.sub(&combo).max_abs());

    let v = GridFn::sample(&grid, Parity::Even, |x| 1.0 / (x / 2.0).cosh());
    let rep = darboux::appendix_identities(&v)?;
    println!("IBP expansions, worst residual   = {:.3e}", rep.worst());

    // P_c R[D1D2D3 f] = P_c f.
    let lhs = b.project_continuous(&darboux::r_composite(&darboux::d123(&bump)?)?);
    let rhs = b.project_continuous(&bump);
    println!("projected transfer identity      = {:.3e}", lhs.sub(&rhs).norm());
    Ok(())
}
