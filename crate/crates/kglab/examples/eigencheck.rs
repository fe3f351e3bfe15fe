//! Verify the closed-form spectral data of the linearized operator
//! `L = -d_xx - 2Q + 1` around the soliton: orthonormality of the discrete
//! modes, their eigen-relations, the threshold resonance, and the bounded
//! resonance source `g` with `L g = 3g`.
//!
//! Run with: `cargo run --release --example eigencheck`

use kglab::grid::{diff, Grid1D};
use kglab::spectral::SpectralBasis;

fn main() -> kglab::Result<()> {
    let grid = Grid1D::default_lab();
    let b = SpectralBasis::build(&grid);
    let margin = 2.0 * grid.sponge_width();

    println!("grid: R = {}, N = {}, h = {}", grid.half_width(), grid.len(), grid.spacing());
    println!("eigenvalues: -nu^2 = -{:.4}, 0, mu^2 = {:.4}", b.nu * b.nu, b.mu * b.mu);

    let ys = [("Y0", &b.y0), ("Y1", &b.y1), ("Y2", &b.y2)];
    for (ni, yi) in ys {
        for (nj, yj) in ys {
            let want = if ni == nj { 1.0 } else { 0.0 };
            println!("<{ni},{nj}> - {want} = {:+.3e}", yi.inner(yj) - want);
        }
    }

    println!("|| L Y0 + nu^2 Y0 || / ||Y0||  = {:.3e}",
        b.eigen_residual(&b.y0, -1.25, margin, b.y0.norm())?);
    println!("|| L Y1 ||        / ||Y1''|| = {:.3e}",
        b.eigen_residual(&b.y1, 0.0, margin, diff(&b.y1, 2)?.norm())?);
    println!("|| L Y2 - mu^2 Y2 || / ||Y2|| = {:.3e}",
        b.eigen_residual(&b.y2, 0.75, margin, b.y2.norm())?);
    let ly3 = b.apply_l(&b.y3)?;
    println!("max | L Y3 - Y3 | (interior)  = {:.3e}", ly3.sub(&b.y3).max_abs_within(margin));
    let lg = b.apply_l(&b.g)?;
    println!("max | L g - 3 g | (interior)  = {:.3e}", lg.sub(&b.g.scale(3.0)).max_abs_within(margin));
    Ok(())
}
