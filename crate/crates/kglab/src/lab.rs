//! Reproducible experiment drivers behind the `kglab` binary: every
//! verification and simulation is a function from a validated [`RunConfig`]
//! to a machine-readable [`Report`] plus optional trace/checkpoint files.
//!
//! Identical configs and seeds produce byte-identical outputs: randomized
//! suites derive from the config seed, sweeps collect in fixed order, and no
//! timestamps enter the files. The `KGLAB_THREADS` environment variable caps
//! the worker pool used for amplitude sweeps.

use crate::config::RunConfig;
use crate::darboux;
use crate::diagnostics::{
    fit_log_slope, fit_power_law, frequency_by_crossings, IdentityKind, Recorder,
    virial_identity_check,
};
use crate::dynamics::{
    self, EvolveConfig, Evolver, FieldState, ShootConfig,
};
use crate::grid::{diff, Grid1D, GridFn, Parity};
use crate::report::{CheckItem, Report};
use crate::spectral::{fgr_h_identities, SpectralBasis, VirialWeights};
use crate::trace;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::path::PathBuf;
use std::sync::Arc;

fn sech(x: f64) -> f64 {
    1.0 / x.cosh()
}

/// Worker pool capped by `KGLAB_THREADS` when set.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("KGLAB_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("KGLAB_THREADS must be a count, got '{v}'")))?;
        builder = builder.num_threads(n.max(1));
    }
    builder
        .build()
        .map_err(|e| Error::Internal(format!("worker pool construction failed: {e}")))
}

/// Initial state for the named preset.
pub fn build_initial(cfg: &RunConfig, basis: &SpectralBasis) -> Result<FieldState> {
    let grid = basis.grid();
    let a = cfg.evolve.amplitude;
    let state = match cfg.evolve.preset.as_str() {
        "soliton" => FieldState::soliton(grid),
        // The velocity component puts the kick on the pure growing direction.
        "soliton+Y0" => FieldState {
            phi1: basis.q.add_scaled(a, &basis.y0),
            phi2: basis.y0.scale(a * basis.nu),
            time: 0.0,
        },
        "soliton+Y2" => FieldState {
            phi1: basis.q.add_scaled(a, &basis.y2),
            phi2: GridFn::zeros(grid),
            time: 0.0,
        },
        "soliton+bump" => {
            let bump = GridFn::sample(grid, Parity::Even, |x| (-x * x / 2.0).exp());
            let pc = basis.project_continuous(&bump);
            let unit = pc.scale(1.0 / pc.norm());
            FieldState { phi1: basis.q.add_scaled(a, &unit), phi2: GridFn::zeros(grid), time: 0.0 }
        }
        "custom" => {
            let path = cfg.evolve.custom_path.as_ref().ok_or_else(|| {
                Error::Config("preset 'custom' needs evolve.custom_path".into())
            })?;
            let state = trace::read_checkpoint(path)?;
            if state.grid().len() != grid.len()
                || (state.grid().half_width() - grid.half_width()).abs() > 1e-12
            {
                return Err(Error::Config(
                    "checkpoint grid does not match the configured grid".into(),
                ));
            }
            FieldState::new(
                GridFn::from_values(
                    Arc::clone(grid),
                    state.phi1.values().to_vec(),
                    state.phi1.parity(),
                )?,
                GridFn::from_values(
                    Arc::clone(grid),
                    state.phi2.values().to_vec(),
                    state.phi2.parity(),
                )?,
                state.time,
            )?
        }
        other => return Err(Error::Config(format!("unknown preset '{other}'"))),
    };
    Ok(state)
}

fn eigen_checks(grid: &Arc<Grid1D>, label: &str) -> Result<Vec<CheckItem>> {
    let b = SpectralBasis::build(grid);
    let margin = 2.0 * grid.sponge_width().max(0.5);
    let mut checks = Vec::new();

    let ys = [&b.y0, &b.y1, &b.y2];
    let mut ortho_dev = 0.0f64;
    for (i, yi) in ys.iter().enumerate() {
        for (j, yj) in ys.iter().enumerate() {
            let want = if i == j { 1.0 } else { 0.0 };
            ortho_dev = ortho_dev.max((yi.inner(yj) - want).abs());
        }
    }
    checks.push(CheckItem::bounded(format!("orthonormality@{label}"), ortho_dev, 1e-10));

    checks.push(CheckItem::bounded(
        format!("unstable_mode_residual@{label}"),
        b.eigen_residual(&b.y0, -1.25, margin, b.y0.norm())?,
        1e-7,
    ));
    let y1pp = diff(&b.y1, 2)?.norm();
    checks.push(CheckItem::bounded(
        format!("translational_mode_residual@{label}"),
        b.eigen_residual(&b.y1, 0.0, margin, y1pp)?,
        1e-7,
    ));
    checks.push(CheckItem::bounded(
        format!("internal_mode_residual@{label}"),
        b.eigen_residual(&b.y2, 0.75, margin, b.y2.norm())?,
        1e-7,
    ));
    let ly3 = b.apply_l(&b.y3)?;
    checks.push(CheckItem::bounded(
        format!("threshold_resonance_residual@{label}"),
        ly3.sub(&b.y3).max_abs_within(margin),
        1e-7,
    ));
    let lg = b.apply_l(&b.g)?;
    checks.push(CheckItem::bounded(
        format!("resonance_source_residual@{label}"),
        lg.sub(&b.g.scale(3.0)).max_abs_within(margin),
        1e-7,
    ));
    Ok(checks)
}

/// Spectral closed forms at the configured resolution and its refinement.
pub fn run_eigencheck(cfg: &RunConfig) -> Result<Report> {
    let grid = cfg.build_grid()?;
    let mut checks = eigen_checks(&grid, &format!("N{}", grid.len()))?;
    let fine = grid.refined();
    checks.extend(eigen_checks(&fine, &format!("N{}", fine.len()))?);
    Ok(Report::new("eigencheck", checks))
}

/// Resonance constant and the transformed-profile identities behind it.
pub fn run_fgr(cfg: &RunConfig) -> Result<Report> {
    let grid = cfg.build_grid()?;
    let b = SpectralBasis::build(&grid);
    let mut checks = Vec::new();

    let gq = b.fgr_constant_by_quadrature();
    checks.push(CheckItem::bounded(
        "gamma_quadrature_vs_closed_form_rel",
        (gq - b.gamma).abs() / b.gamma,
        1e-9,
    ));

    // Halved domain at the same spacing: the integrand decays like sech^6.
    let half_n = (grid.len() - 1) / 2 + 1;
    let half = Grid1D::new(grid.half_width() / 2.0, half_n, grid.sponge_width() / 2.0)?;
    let bh = SpectralBasis::build(&half);
    checks.push(CheckItem::bounded(
        "gamma_halved_domain_rel",
        (bh.fgr_constant_by_quadrature() - gq).abs() / b.gamma,
        1e-9,
    ));

    checks.push(CheckItem::bounded("g_orthogonal_to_unstable_mode", b.y0.inner(&b.g).abs(), 1e-9));
    checks.push(CheckItem::bounded("g_orthogonal_to_internal_mode", b.y2.inner(&b.g).abs(), 1e-9));

    let h = fgr_h_identities(&b)?;
    checks.push(CheckItem::bounded("transformed_profile_closed_form", h.max_dev_closed_form, 1e-7));
    checks.push(CheckItem::bounded(
        "transformed_profile_derivative_form",
        h.max_dev_derivative_form,
        1e-7,
    ));
    checks.push(CheckItem::bounded(
        "fourier_side_reproduces_gamma_rel",
        (h.gamma_from_transform - h.gamma_closed_form).abs() / b.gamma,
        1e-12,
    ));
    checks.push(CheckItem::bounded("transformed_profile_oddness", h.h_asymmetry, 1e-7));

    let extras = serde_json::json!({
        "gamma_closed_form": b.gamma,
        "gamma_quadrature": gq,
        "gamma_fourier_side": h.gamma_from_transform,
    });
    Ok(Report::new("fgr", checks).with_extras(extras))
}

/// Canned decaying suite for operator checks: Gaussians of varied width and
/// center-symmetric combinations, sech powers, and modulated bumps.
fn decaying_suite(grid: &Arc<Grid1D>, seed: u64, count: usize) -> Vec<GridFn> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut suite = Vec::with_capacity(count);
    for i in 0..count {
        let c = rng.gen_range(0.2..1.0);
        let s = rng.gen_range(1.0..6.0);
        let k = rng.gen_range(0.0..1.5);
        let x0 = rng.gen_range(0.0..3.0);
        let f = match i % 4 {
            0 => GridFn::sample(grid, Parity::Even, move |x| {
                c * (-x * x / (2.0 * s * s)).exp() * (k * x).cos()
            }),
            1 => GridFn::sample(grid, Parity::Odd, move |x| {
                c * x * (-x * x / (2.0 * s * s)).exp()
            }),
            2 => GridFn::sample(grid, Parity::Even, move |x| c * sech(x / s).powi(1 + (i % 3) as i32)),
            _ => GridFn::sample(grid, Parity::None, move |x| {
                c * ((-(x - x0) * (x - x0) / (2.0 * s * s)).exp()
                    + (-(x + x0) * (x + x0) / (2.0 * s * s)).exp())
                    * (k * x).cos()
            }),
        };
        suite.push(f);
    }
    suite
}

/// The transformation suite: conjugation, right inverses, kernel identities,
/// integration-by-parts expansions, transfer probes, and refinement ratios.
pub fn run_darboux(cfg: &RunConfig) -> Result<Report> {
    let grid = cfg.build_grid()?;
    let b = SpectralBasis::build(&grid);
    let fac = darboux::DarbouxFactors::build(&grid);
    let mut checks = Vec::new();

    // Conjugation identity on a 20-function canned suite.
    let suite = decaying_suite(&grid, cfg.seed, 20);
    let mut worst = 0.0f64;
    for f in &suite {
        worst = worst.max(darboux::conjugation_residual(f)?.residual);
    }
    checks.push(CheckItem::bounded("conjugation_suite_max_residual", worst, 1e-6));

    // Right inverses.
    let probe = GridFn::sample(&grid, Parity::Even, |x| (-x * x / 9.0).exp());
    let mut dr = 0.0f64;
    let mut rd = 0.0f64;
    let c = grid.center();
    for l in 1..=3 {
        let back = darboux::d(l, &darboux::r(l, &probe)?)?;
        dr = dr.max(back.sub(&probe).max_abs_within(1.0));
        let zl = GridFn::sample(&grid, Parity::Even, move |x| darboux::z_profile(l, x));
        let rdf = darboux::r(l, &darboux::d(l, &probe)?)?;
        let expect = probe.add_scaled(-probe.values()[c], &zl);
        rd = rd.max(rdf.sub(&expect).max_abs_within(1.0));
    }
    checks.push(CheckItem::bounded("right_inverse_d_of_r", dr, 1e-7));
    checks.push(CheckItem::bounded("right_inverse_r_of_d", rd, 1e-7));

    // Nested right inverses against the eigenfunction combinations.
    let r3z2 = darboux::r(3, &fac.z2)?;
    checks.push(CheckItem::bounded(
        "nested_inverse_translational_combination",
        r3z2.sub(&b.y1.scale(2.0 / b.c1)).max_abs(),
        1e-7,
    ));
    let r3r2z1 = darboux::r(3, &darboux::r(2, &fac.z1)?)?;
    let combo = b.y0.scale(0.5 / b.c0).add(&b.y2.scale(-0.5 / b.c2));
    checks.push(CheckItem::bounded(
        "nested_inverse_discrete_combination",
        r3r2z1.sub(&combo).max_abs(),
        1e-9,
    ));

    // Kernel span of the composite transformation.
    let mut ker = 0.0f64;
    for k in [fac.z3.clone(), r3z2.clone(), r3r2z1.clone()] {
        let img = darboux::d123(&k)?;
        ker = ker.max(img.norm() / diff(&k, 1)?.norm().max(1.0));
    }
    checks.push(CheckItem::bounded("composite_kernel_annihilation", ker, 1e-7));

    // Boundary-data identity at the origin.
    let f = GridFn::sample(&grid, Parity::Even, |x| (-x * x / 6.0).exp() * (1.0 + x * x));
    let lhs = darboux::d(2, &darboux::d(3, &f)?)?.values()[c];
    let rhs = diff(&f, 2)?.values()[c] + 0.75 * f.values()[c];
    checks.push(CheckItem::bounded("boundary_data_identity", (lhs - rhs).abs(), 1e-9));

    // Integration-by-parts expansions.
    let v = GridFn::sample(&grid, Parity::Even, |x| sech(x / 2.0));
    let app = darboux::appendix_identities(&v)?;
    checks.push(CheckItem::bounded("ibp_expansion_worst_residual", app.worst(), 1e-6));

    // Projected transfer identity P_c R[D1D2D3 f] = P_c f.
    let lhsf = b.project_continuous(&darboux::r_composite(&darboux::d123(&probe)?)?);
    let rhsf = b.project_continuous(&probe);
    checks.push(CheckItem::bounded(
        "projected_transfer_identity",
        lhsf.sub(&rhsf).norm(),
        1e-7,
    ));

    // Refinement ratios at a truncation-dominated pair.
    let coarse = Grid1D::new(grid.half_width(), 601, grid.sponge_width())?;
    let fine = coarse.refined();
    let mk = |g: &Arc<Grid1D>| GridFn::sample(g, Parity::Even, |x| sech(x / 2.0));
    let rc = darboux::conjugation_residual(&mk(&coarse))?.residual;
    let rf = darboux::conjugation_residual(&mk(&fine))?.residual;
    checks.push(CheckItem::at_least("conjugation_refinement_ratio", rc / rf, 64.0));
    let ac = darboux::appendix_identities(&mk(&coarse))?.worst();
    let af = darboux::appendix_identities(&mk(&fine))?.worst();
    checks.push(CheckItem::at_least("ibp_refinement_ratio", ac / af, 64.0));

    // Weighted kernel norms stay modest (exponentially localized kernels).
    let mut schur = 0.0f64;
    for (i, f) in decaying_suite(&grid, cfg.seed.wrapping_add(1), 20).iter().enumerate() {
        let unit = f.scale(1.0 / f.norm());
        schur = schur.max(darboux::weighted_kernel_norm(1 + i % 3, &unit)?);
    }
    checks.push(CheckItem::bounded("weighted_kernel_norm_max", schur, 50.0));

    // Transfer-bound probe table over the smoothing sweep (measured only).
    let bumps = decaying_suite(&grid, cfg.seed.wrapping_add(2), 50);
    let eps_sweep = [0.01, 0.05, 0.2];
    let mut table = Vec::new();
    for &eps in &eps_sweep {
        let mut max_ratio = 0.0f64;
        for f in &bumps {
            let even = f.add(&GridFn::from_values(
                Arc::clone(&grid),
                f.values().iter().rev().copied().collect(),
                Parity::None,
            )?)
            .scale(0.5)
            .with_parity(Parity::Even);
            let u = b.project_continuous(&even);
            if u.norm() < 1e-12 {
                continue;
            }
            let (lhs, rhs) = darboux::transfer_bound_probe(&u, eps, &b)?;
            if rhs > 0.0 {
                max_ratio = max_ratio.max(lhs / rhs);
            }
        }
        table.push(serde_json::json!({"eps": eps, "max_transfer_ratio": max_ratio}));
        checks.push(CheckItem::measured(format!("transfer_ratio_max@eps{eps}"), max_ratio));
    }

    // Smoothing-operator norm probes ||X_eps d^m|| eps^{m/2} (measured only).
    let mut xeps_norms = Vec::new();
    for m in 0..=4usize {
        let mut cmax = 0.0f64;
        for f in suite.iter().take(8) {
            let mut d = f.clone();
            for _ in 0..m {
                d = diff(&d, 1)?;
            }
            let out = crate::grid::smooth_inverse(&d, 0.05)?;
            cmax = cmax.max(out.norm() * 0.05f64.powf(m as f64 / 2.0) / f.norm());
        }
        xeps_norms.push(serde_json::json!({"m": m, "constant": cmax}));
        checks.push(CheckItem::measured(format!("smoothing_norm_constant_m{m}"), cmax));
    }

    let extras = serde_json::json!({
        "transfer_table": table,
        "smoothing_norms": xeps_norms,
    });
    Ok(Report::new("darboux", checks).with_extras(extras))
}

/// Evolve a preset initial state, stream the trace, and write a final
/// checkpoint. On blow-up the truncated trace carries the last valid time in
/// its footer and the error propagates (exit code 3).
pub fn run_evolve(cfg: &RunConfig) -> Result<(Report, PathBuf)> {
    let grid = cfg.build_grid()?;
    let b = SpectralBasis::build(&grid);
    let w = VirialWeights::build(&grid, cfg.weights.a, cfg.weights.eps)?;
    let evolver = Evolver::new(&grid);
    let ec = EvolveConfig {
        dt: cfg.evolve.dt,
        t_end: cfg.evolve.t_end,
        sponge: cfg.evolve.sponge,
        mode: cfg.evolve.mode,
        record_every: cfg.evolve.record_every,
    };
    let initial = build_initial(cfg, &b)?;
    // Linearized runs evolve the perturbation; records are assembled around
    // the soliton so the trace columns keep their meaning.
    let state0 = match cfg.evolve.mode {
        crate::dynamics::EvolveMode::Nonlinear => initial,
        crate::dynamics::EvolveMode::Linearized => FieldState {
            phi1: initial.phi1.sub(&b.q),
            phi2: initial.phi2.clone(),
            time: initial.time,
        },
    };
    let mut rec = Recorder::new(b.clone(), w, ec.sponge);
    let lin = cfg.evolve.mode == crate::dynamics::EvolveMode::Linearized;
    let bq = b.q.clone();
    let mut observer = |s: &FieldState| -> Result<()> {
        if lin {
            let full = FieldState {
                phi1: s.phi1.add(&bq).with_parity(s.phi1.parity()),
                phi2: s.phi2.clone(),
                time: s.time,
            };
            rec.record(&full)
        } else {
            rec.record(s)
        }
    };
    let outcome = evolver.evolve(state0, &ec, Some(&mut observer));

    std::fs::create_dir_all(&cfg.output_dir)?;
    let trace_path = cfg.output_dir.join("trace_evolve.csv");
    let records = rec.into_records();
    match outcome {
        Ok(final_state) => {
            trace::write_trace(&trace_path, &records, &[])?;
            let ck_path = cfg.output_dir.join("checkpoint_final.csv");
            let full_final = if lin {
                FieldState {
                    phi1: final_state.phi1.add(&b.q),
                    phi2: final_state.phi2.clone(),
                    time: final_state.time,
                }
            } else {
                final_state
            };
            trace::write_checkpoint(&ck_path, &full_final)?;

            let mut checks = Vec::new();
            let e0 = records.first().map(|r| r.energy).unwrap_or(0.0);
            let e1 = records.last().map(|r| r.energy).unwrap_or(0.0);
            if !ec.sponge && cfg.evolve.mode == crate::dynamics::EvolveMode::Nonlinear {
                checks.push(CheckItem::bounded(
                    "energy_drift_rel",
                    (e1 - e0).abs() / e0.abs().max(1e-300),
                    1e-6,
                ));
            }
            let mut extras = serde_json::json!({
                "records": records.len(),
                "t_final": records.last().map(|r| r.t),
                "energy_initial": e0,
                "energy_final": e1,
            });
            if cfg.evolve.preset == "soliton+Y0" && lin {
                let samples: Vec<(f64, f64)> =
                    records.iter().map(|r| (r.t, r.a1.abs().max(1e-300))).collect();
                let rate = fit_log_slope(
                    &samples.iter().map(|&(t, v)| (t, v)).collect::<Vec<_>>(),
                );
                extras["fitted_growth_rate"] = serde_json::json!(rate);
                checks.push(CheckItem::bounded(
                    "growth_rate_rel_error",
                    (rate - b.nu).abs() / b.nu,
                    0.01,
                ));
            }
            if cfg.evolve.preset == "soliton+Y2" {
                let samples: Vec<(f64, f64)> = records.iter().map(|r| (r.t, r.z1)).collect();
                if let Ok(freq) = frequency_by_crossings(&samples) {
                    extras["fitted_frequency"] = serde_json::json!(freq);
                    if lin {
                        checks.push(CheckItem::bounded(
                            "internal_mode_frequency_rel_error",
                            (freq - b.mu).abs() / b.mu,
                            0.01,
                        ));
                    }
                }
                let escaped = records.iter().find(|r| r.bplus.abs() > cfg.shoot.theta_exit);
                extras["bplus_escape_time"] = serde_json::json!(escaped.map(|r| r.t));
            }
            Ok((Report::new("evolve", checks).with_extras(extras), trace_path))
        }
        Err(Error::BlowUp { t }) => {
            trace::write_trace(
                &trace_path,
                &records,
                &[("blowup_t".to_string(), format!("{t:.6}"))],
            )?;
            Err(Error::BlowUp { t })
        }
        Err(e) => Err(e),
    }
}

/// Shoot the manifold across the configured amplitude sweep of internal-mode
/// perturbations, fit the correction-size power law, and write the trace of
/// the last accepted trajectory.
pub fn run_shoot(cfg: &RunConfig) -> Result<(Report, PathBuf)> {
    let grid = cfg.build_grid()?;
    let b = SpectralBasis::build(&grid);
    let w = VirialWeights::build(&grid, cfg.weights.a, cfg.weights.eps)?;
    if cfg.shoot.amplitudes.is_empty() {
        return Err(Error::Config("shoot.amplitudes must not be empty".into()));
    }

    let pool = worker_pool()?;
    let shots: Vec<Result<(dynamics::ShootOutcome, Vec<crate::diagnostics::TraceRecord>)>> =
        pool.install(|| {
            cfg.shoot
                .amplitudes
                .par_iter()
                .enumerate()
                .map(|(idx, &a)| {
                    let mut sc = ShootConfig::for_amplitude(a, cfg.shoot.t_end);
                    sc.tol = cfg.shoot.tol;
                    sc.theta_exit = cfg.shoot.theta_exit;
                    sc.reaim_interval = cfg.shoot.reaim_interval;
                    sc.dt = cfg.evolve.dt;
                    sc.record_every = cfg.evolve.record_every;
                    sc.sponge = cfg.evolve.sponge;
                    if let Some(th) = cfg.shoot.t_horizon {
                        sc.t_horizon = th;
                    }
                    let e1 = b.y2.scale(a);
                    let zero = GridFn::zeros(&grid);
                    let annotate = |e: crate::Error| match e {
                        crate::Error::BracketFailure(msg) => crate::Error::BracketFailure(
                            format!("amplitude {a}: {msg}"),
                        ),
                        other => other,
                    };
                    // Record only the last amplitude's accepted trajectory.
                    if idx + 1 == cfg.shoot.amplitudes.len() {
                        let mut rec = Recorder::new(b.clone(), w.clone(), sc.sponge);
                        let mut cb = |s: &FieldState| rec.record(s);
                        let out = dynamics::shoot_manifold(&b, (&e1, &zero), &sc, Some(&mut cb))
                            .map_err(annotate)?;
                        for (t, _) in &out.corrections {
                            rec.mark_reaim_at(*t);
                        }
                        Ok((out, rec.into_records()))
                    } else {
                        let out = dynamics::shoot_manifold(&b, (&e1, &zero), &sc, None)
                            .map_err(annotate)?;
                        Ok((out, Vec::new()))
                    }
                })
                .collect()
        });

    let mut checks = Vec::new();
    let mut outcomes = Vec::new();
    let mut last_records = Vec::new();
    for shot in shots {
        let (out, recs) = shot?;
        if !recs.is_empty() {
            last_records = recs;
        }
        outcomes.push(out);
    }

    let mut per_amp = Vec::new();
    for (a, out) in cfg.shoot.amplitudes.iter().zip(&outcomes) {
        checks.push(CheckItem::bounded(
            format!("trajectory_within_5eps@a{a}"),
            out.max_h1l2_distance,
            5.0 * out.eps_norm_h1,
        ));
        let max_corr =
            out.corrections.iter().map(|(_, c)| c.abs()).fold(0.0f64, f64::max);
        per_amp.push(serde_json::json!({
            "amplitude": a,
            "h": out.h,
            "eps_norm_l2": out.eps_norm,
            "eps_norm_h1": out.eps_norm_h1,
            "max_h1l2_distance": out.max_h1l2_distance,
            "reaim_count": out.corrections.len(),
            "max_reaim_correction": max_corr,
        }));
    }

    let fit_pairs: Vec<(f64, f64)> = cfg
        .shoot
        .amplitudes
        .iter()
        .zip(&outcomes)
        .filter(|(_, o)| o.h.abs() > 0.0)
        .map(|(&a, o)| (a, o.h.abs()))
        .collect();
    let exponent = if fit_pairs.len() >= 2 {
        let p = fit_power_law(&fit_pairs);
        checks.push(CheckItem::at_least("correction_power_law_exponent", p, 1.4));
        Some(p)
    } else {
        None
    };

    std::fs::create_dir_all(&cfg.output_dir)?;
    let trace_path = cfg.output_dir.join("trace_shoot.csv");
    trace::write_trace(&trace_path, &last_records, &[])?;

    // Monitor decay statistics of the recorded trajectory.
    let mut extras = serde_json::json!({
        "per_amplitude": per_amp,
        "exponent": exponent,
    });
    if !last_records.is_empty() {
        let m0 = last_records.first().unwrap().monitor;
        let m_end = last_records.last().unwrap().monitor;
        let dt_rec = if last_records.len() > 1 {
            last_records[1].t - last_records[0].t
        } else {
            0.0
        };
        let quarter = last_records.len() / 4;
        let int = |slice: &[crate::diagnostics::TraceRecord]| -> f64 {
            slice.iter().map(|r| r.monitor).sum::<f64>() * dt_rec
        };
        let first_quarter = int(&last_records[..quarter.max(1)]);
        let last_quarter = int(&last_records[last_records.len() - quarter.max(1)..]);
        let le0 = last_records.first().unwrap().local_e[1];
        let le_end = last_records.last().unwrap().local_e[1];
        extras["monitor_initial"] = serde_json::json!(m0);
        extras["monitor_final"] = serde_json::json!(m_end);
        extras["monitor_integral_first_quarter"] = serde_json::json!(first_quarter);
        extras["monitor_integral_last_quarter"] = serde_json::json!(last_quarter);
        extras["local_energy5_initial"] = serde_json::json!(le0);
        extras["local_energy5_final"] = serde_json::json!(le_end);
        // Hard decay checks belong to the long damping experiment.
        if cfg.shoot.t_end >= 400.0 {
            checks.push(CheckItem::bounded("monitor_decay_ratio", m_end / m0, 0.1));
            checks.push(CheckItem::bounded("local_energy5_decay_ratio", le_end / le0, 0.2));
            checks.push(CheckItem::bounded(
                "monitor_integral_flattening",
                last_quarter / first_quarter,
                0.5,
            ));
        }
    }

    Ok((Report::new("shoot", checks).with_extras(extras), trace_path))
}

/// Replay the exact identities against a stored trace (no re-simulation).
pub fn run_trace_check(cfg: &RunConfig, path_override: Option<PathBuf>) -> Result<Report> {
    let path = path_override
        .or_else(|| cfg.trace_check.path.clone())
        .ok_or_else(|| Error::Config("trace-check needs a trace path".into()))?;
    let (records, footer) = trace::read_trace(&path)?;
    let tol = cfg.trace_check.tol;
    let mut checks = Vec::new();
    let mut details = Vec::new();
    let suite = [
        IdentityKind::I,
        IdentityKind::JZ,
        IdentityKind::B,
        IdentityKind::K,
        IdentityKind::ModZsq,
        IdentityKind::Z1Dot,
        IdentityKind::Z2Dot,
        IdentityKind::BplusDot,
        IdentityKind::BminusDot,
    ];
    for kind in suite {
        let chk = virial_identity_check(&records, kind, tol)?;
        checks.push(CheckItem::bounded(
            format!("identity {}", chk.name),
            chk.max_extrapolated,
            tol,
        ));
        details.push(serde_json::json!({
            "identity": chk.name,
            "max_mismatch": chk.max_mismatch,
            "max_extrapolated": chk.max_extrapolated,
            "time_of_max": chk.time_of_max,
        }));
    }
    let extras = serde_json::json!({
        "records": records.len(),
        "footer": footer.iter().map(|(k, v)| serde_json::json!({k: v})).collect::<Vec<_>>(),
        "details": details,
    });
    Ok(Report::new("trace-check", checks).with_extras(extras))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.grid.n = 1201;
        cfg.evolve.t_end = 2.0;
        cfg
    }

    #[test]
    fn eigencheck_passes_on_default_and_fails_when_too_coarse() {
        let mut cfg = RunConfig::default();
        let rep = run_eigencheck(&cfg).unwrap();
        assert!(rep.pass);

        cfg.grid.n = 101;
        cfg.grid.sponge_width = Some(10.0);
        let rep = run_eigencheck(&cfg).unwrap();
        assert!(!rep.pass, "coarse grid must fail the residual tolerances");
    }

    #[test]
    fn fgr_report_passes() {
        let cfg = RunConfig::default();
        let rep = run_fgr(&cfg).unwrap();
        assert!(rep.pass, "{}", rep.to_json());
    }

    #[test]
    fn evolve_writes_trace_and_reports_energy() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_cfg();
        cfg.output_dir = dir.path().to_path_buf();
        cfg.evolve.sponge = false;
        cfg.evolve.preset = "soliton+Y2".into();
        cfg.evolve.amplitude = 0.05;
        cfg.evolve.dt = 0.02;
        cfg.evolve.record_every = 5;
        let (rep, path) = run_evolve(&cfg).unwrap();
        assert!(path.exists());
        let (records, _) = trace::read_trace(&path).unwrap();
        assert_eq!(records.len(), 21);
        assert!(rep.pass, "{}", rep.to_json());
        assert!(dir.path().join("checkpoint_final.csv").exists());
    }

    #[test]
    fn evolve_blow_up_truncates_with_footer() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_cfg();
        cfg.output_dir = dir.path().to_path_buf();
        cfg.evolve.preset = "soliton+Y0".into();
        cfg.evolve.amplitude = 1.0;
        cfg.evolve.t_end = 50.0;
        cfg.evolve.record_every = 10;
        match run_evolve(&cfg) {
            Err(Error::BlowUp { t }) => assert!(t > 0.0),
            other => panic!("expected blow-up, got {other:?}"),
        }
        let (_, footer) = trace::read_trace(&dir.path().join("trace_evolve.csv")).unwrap();
        assert!(footer.iter().any(|(k, _)| k == "blowup_t"));
    }

    #[test]
    fn soliton_bump_preset_is_projected() {
        let cfg = {
            let mut c = small_cfg();
            c.evolve.preset = "soliton+bump".into();
            c.evolve.amplitude = 0.01;
            c
        };
        let grid = cfg.build_grid().unwrap();
        let b = SpectralBasis::build(&grid);
        let s = build_initial(&cfg, &b).unwrap();
        let pert = s.phi1.sub(&b.q);
        assert!((pert.norm() - 0.01).abs() <= 1e-12);
        assert!(b.y0.inner(&pert).abs() <= 1e-12);
        assert!(b.y2.inner(&pert).abs() <= 1e-12);
    }

    #[test]
    fn trace_check_flags_corruption_and_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_cfg();
        cfg.output_dir = dir.path().to_path_buf();
        cfg.evolve.sponge = false;
        cfg.evolve.preset = "soliton+Y2".into();
        cfg.evolve.amplitude = 0.05;
        cfg.evolve.t_end = 1.0;
        let (_rep, path) = run_evolve(&cfg).unwrap();

        let rep = run_trace_check(&cfg, Some(path.clone())).unwrap();
        assert!(rep.pass, "{}", rep.to_json());

        // Corrupt one z1 cell and expect a failing identity near it.
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut cells: Vec<String> = lines[41].split(',').map(String::from).collect();
        let z1: f64 = cells[3].parse().unwrap();
        cells[3] = format!("{:.16e}", z1 + 1e-3);
        lines[41] = cells.join(",");
        std::fs::write(&path, lines.join("\n")).unwrap();
        let rep = run_trace_check(&cfg, Some(path)).unwrap();
        assert!(!rep.pass);

        let garbage = dir.path().join("garbage.csv");
        std::fs::write(&garbage, "nope\n").unwrap();
        assert!(matches!(
            run_trace_check(&cfg, Some(garbage)),
            Err(Error::Config(_))
        ));
    }
}
