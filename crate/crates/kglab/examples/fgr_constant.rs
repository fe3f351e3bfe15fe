//! The nonlinear resonance constant three ways: closed form
//! `(243/32) pi / sinh(sqrt2 pi)`, direct quadrature `(1/2) int Y2^2 g`, and
//! the Fourier-side expression through the transformed profile
//! `H = D1 D2 D3 (Y2^2)`.
//!
//! Run with: `cargo run --release --example fgr_constant`

use kglab::grid::Grid1D;
use kglab::spectral::{fgr_h_identities, SpectralBasis};

fn main() -> kglab::Result<()> {
    let grid = Grid1D::default_lab();
    let b = SpectralBasis::build(&grid);

    let closed = b.gamma;
    let quad = b.fgr_constant_by_quadrature();
    let h = fgr_h_identities(&b)?;

    println!("Gamma (closed form)     = {closed:.15}");
    println!("Gamma (quadrature)      = {quad:.15}   rel dev {:.2e}", (quad - closed).abs() / closed);
    println!("Gamma (Fourier side)    = {:.15}   rel dev {:.2e}",
        h.gamma_from_transform, (h.gamma_from_transform - closed).abs() / closed);
    println!("H vs sech-power form    : max dev {:.3e}", h.max_dev_closed_form);
    println!("H vs derivative stack   : max dev {:.3e}", h.max_dev_derivative_form);
    println!("H oddness defect        : {:.3e}", h.h_asymmetry);
    println!("<Y0, g> = {:+.3e},  <Y2, g> = {:+.3e}", b.y0.inner(&b.g), b.y2.inner(&b.g));
    Ok(())
}
