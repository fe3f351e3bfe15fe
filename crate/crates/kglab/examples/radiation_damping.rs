//! Internal-mode radiation damping: on a manifold shot with a z-excitation,
//! the second harmonic of the internal mode couples to radiation (the
//! resonance constant Gamma is nonzero), the oscillation loses energy, and
//! the composite monitor M(t) decays. Runs a shortened version of the long
//! damping experiment; expect a couple of minutes.
//!
//! Run with: `cargo run --release --example radiation_damping`

use kglab::diagnostics::Recorder;
use kglab::dynamics::{shoot_manifold, FieldState, ShootConfig};
use kglab::grid::{Grid1D, GridFn};
use kglab::spectral::{SpectralBasis, VirialWeights};

fn main() -> kglab::Result<()> {
    let grid = Grid1D::default_lab();
    let b = SpectralBasis::build(&grid);
    let w = VirialWeights::build(&grid, 20.0, 0.05)?;

    let amplitude = 0.1;
    let t_end = 120.0;
    let e1 = b.y2.scale(amplitude);
    let zero = GridFn::zeros(&grid);
    let mut cfg = ShootConfig::for_amplitude(amplitude, t_end);
    cfg.record_every = 5;

    let mut rec = Recorder::new(b.clone(), w, cfg.sponge);
    let mut cb = |s: &FieldState| rec.record(s);
    println!("shooting and tracking to t = {t_end} (z-amplitude {amplitude}) ...");
    let out = shoot_manifold(&b, (&e1, &zero), &cfg, Some(&mut cb))?;
    let records = rec.into_records();

    println!("h = {:+.4e}, re-aims = {}", out.h, out.corrections.len());
    println!("  t      |z|^2        M(t)        localE[-5,5]");
    for r in records.iter().step_by(records.len() / 12) {
        println!(
            "{:6.1}  {:.4e}  {:.4e}  {:.4e}",
            r.t,
            r.z1 * r.z1 + r.z2 * r.z2,
            r.monitor,
            r.local_e[1]
        );
    }
    let m0 = records.first().unwrap().monitor;
    let m1 = records.last().unwrap().monitor;
    println!("monitor decay M({t_end})/M(0) = {:.3}", m1 / m0);
    Ok(())
}
