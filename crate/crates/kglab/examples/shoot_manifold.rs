//! Track the center-stable manifold: bisection finds the unstable-direction
//! correction `h` so that `Q + eps + h Y_+` neither blows up nor collapses,
//! despite the `e^{nu t}` instability. Takes about half a minute.
//!
//! Run with: `cargo run --release --example shoot_manifold`

use kglab::dynamics::{shoot_manifold, ShootConfig};
use kglab::grid::{Grid1D, GridFn};
use kglab::spectral::SpectralBasis;

fn main() -> kglab::Result<()> {
    let grid = Grid1D::default_lab();
    let b = SpectralBasis::build(&grid);

    let amplitude = 0.02;
    let e1 = b.y2.scale(amplitude);
    let zero = GridFn::zeros(&grid);
    let cfg = ShootConfig::for_amplitude(amplitude, 40.0);

    println!("shooting from Q + {amplitude} Y2 (internal-mode excitation) ...");
    let out = shoot_manifold(&b, (&e1, &zero), &cfg, None)?;
    println!("h                    = {:+.6e}", out.h);
    println!("||eps|| (L2 pair)    = {:.4}", out.eps_norm);
    println!("re-aims              = {}", out.corrections.len());
    let max_c = out.corrections.iter().map(|(_, c)| c.abs()).fold(0.0f64, f64::max);
    println!("largest re-aim kick  = {max_c:.3e}");
    println!("max H1xL2 distance   = {:.4e}  (5 ||eps||_H1 = {:.4e})",
        out.max_h1l2_distance, 5.0 * out.eps_norm_h1);
    Ok(())
}
