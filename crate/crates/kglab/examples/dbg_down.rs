use kglab::dynamics::*;
use kglab::grid::*;
use kglab::spectral::*;

fn main() {
    let g = Grid1D::default_lab();
    let b = SpectralBasis::build(&g);
    let ev = Evolver::new(&g);
    let cfg = EvolveConfig { dt: 0.01, t_end: 100.0, sponge: false, mode: EvolveMode::Nonlinear, record_every: 1000 };
    let s0 = FieldState {
        phi1: b.q.add_scaled(0.05, &b.y2).add_scaled(-2e-3, &b.y0),
        phi2: b.y0.scale(-2e-3 * b.nu),
        time: 0.0,
    };
    let e0 = energy(&s0).unwrap();
    let mut rec = |s: &FieldState| -> kglab::Result<()> {
        if (s.time / 10.0).fract().abs() < 1e-9 {
            println!("t={:6.1}  max|phi1|={:7.3}  E drift={:+.3e}  asym={:.1e}",
                s.time, s.phi1.max_abs(), (energy(s).unwrap() - e0) / e0, s.asymmetry());
        }
        Ok(())
    };
    match ev.evolve(s0, &cfg, Some(&mut rec)) {
        Ok(s) => println!("survived, final drift {:+.3e}", (energy(&s).unwrap() - e0) / e0),
        Err(e) => println!("error: {e}"),
    }
}
