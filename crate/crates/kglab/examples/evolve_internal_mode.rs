//! Linear dynamics around the soliton: the unstable mode grows like
//! `e^{nu t}` and the internal mode oscillates at the gap frequency `mu`.
//! Both rates are fitted from short evolutions of the linearized system.
//!
//! Run with: `cargo run --release --example evolve_internal_mode`

use kglab::diagnostics::{fit_log_slope, frequency_by_crossings};
use kglab::dynamics::{EvolveConfig, EvolveMode, Evolver, FieldState};
use kglab::grid::{Grid1D, GridFn};
use kglab::spectral::SpectralBasis;

fn main() -> kglab::Result<()> {
    let grid = Grid1D::default_lab();
    let b = SpectralBasis::build(&grid);
    let ev = Evolver::new(&grid);

    // Pure growing direction (Y0, nu Y0).
    let cfg = EvolveConfig {
        dt: 0.01,
        t_end: 5.0,
        sponge: false,
        mode: EvolveMode::Linearized,
        record_every: 10,
    };
    let mut samples = Vec::new();
    let s0 = FieldState {
        phi1: b.y0.scale(1e-3),
        phi2: b.y0.scale(1e-3 * b.nu),
        time: 0.0,
    };
    let mut rec = |s: &FieldState| -> kglab::Result<()> {
        samples.push((s.time, s.phi1.norm()));
        Ok(())
    };
    ev.evolve(s0, &cfg, Some(&mut rec))?;
    let rate = fit_log_slope(&samples);
    println!("fitted growth rate  = {rate:.6}   (nu = {:.6}, rel dev {:.2e})",
        b.nu, (rate - b.nu).abs() / b.nu);

    // Internal mode (Y2, 0): periodic in the linear system.
    let cfg = EvolveConfig { t_end: 40.0, record_every: 5, ..cfg };
    let mut samples = Vec::new();
    let s0 = FieldState { phi1: b.y2.scale(1e-3), phi2: GridFn::zeros(&grid), time: 0.0 };
    let y2 = b.y2.clone();
    let mut rec = |s: &FieldState| -> kglab::Result<()> {
        samples.push((s.time, y2.inner(&s.phi1)));
        Ok(())
    };
    ev.evolve(s0, &cfg, Some(&mut rec))?;
    let freq = frequency_by_crossings(&samples)?;
    println!("fitted frequency    = {freq:.6}   (mu = {:.6}, rel dev {:.2e})",
        b.mu, (freq - b.mu).abs() / b.mu);
    Ok(())
}
