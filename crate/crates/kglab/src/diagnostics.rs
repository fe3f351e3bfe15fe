//! Virial functionals along trajectories, the composite decay monitor, local
//! energies, exact identity replay against recorded traces, and small fitting
//! helpers for rates, frequencies, and power laws.
//!
//! Each TraceRecord also stores the evaluated right-hand sides of the
//! identities that need field-level integrals (`i_rhs`, `jz_rhs`, `k_rhs`), so
//! a stored trace can be replayed without re-simulation.

use crate::dynamics::{decompose, energy, nonlinearity_terms, FieldState, ModeCoords};
use crate::grid::{diff, quad, GridFn, Parity};
use crate::spectral::{SpectralBasis, VirialWeights};
use crate::{Error, Result};
use std::sync::Arc;

/// One time-sample of every traced diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub a1: f64,
    pub a2: f64,
    pub z1: f64,
    pub z2: f64,
    pub bplus: f64,
    pub bminus: f64,
    /// `alpha = z1^2 - z2^2`.
    pub alpha: f64,
    /// `beta = 2 z1 z2`.
    pub beta: f64,
    pub norm_rho_u1: f64,
    pub norm_sigma_u1: f64,
    pub norm_sigma_dxu1: f64,
    pub norm_sigma_u2: f64,
    pub norm_rho_seps_u1: f64,
    pub norm_rho_dx_seps_u1: f64,
    pub func_i: f64,
    pub func_h: f64,
    pub func_j: f64,
    pub func_z: f64,
    /// `b_+^2 - b_-^2`.
    pub func_b: f64,
    pub func_k: f64,
    /// Composite monitor, recomputed from its parts.
    pub monitor: f64,
    pub energy: f64,
    pub n0: f64,
    pub n2: f64,
    pub i_rhs: f64,
    pub jz_rhs: f64,
    pub k_rhs: f64,
    /// Local `H^1 x L^2` energies on `[-2,2]`, `[-5,5]`, `[-10,10]`.
    pub local_e: [f64; 3],
    /// Set on the last record before a shooting re-aim kick; identity replay
    /// skips difference windows that touch flagged samples.
    pub reaim: bool,
}

/// Default intervals for the local-energy columns.
pub const LOCAL_INTERVALS: [(f64, f64); 3] = [(-2.0, 2.0), (-5.0, 5.0), (-10.0, 10.0)];

/// Large-scale virial functional `I = int (Phi_A d_x u1 + 1/2 Phi_A' u1) u2`.
pub fn virial_i(m: &ModeCoords, w: &VirialWeights) -> Result<f64> {
    m.u1.same_grid(&w.phi_a)?;
    let du1 = diff(&m.u1, 1)?;
    Ok(quad(&w.phi_a.mul(&du1).add(&w.phi_a_prime.mul(&m.u1).scale(0.5)).mul(&m.u2)))
}

/// Localized pairing `H = int sigma_A^2 u1 u2`.
pub fn virial_h(m: &ModeCoords, w: &VirialWeights) -> f64 {
    quad(&w.sigma_a.mul(&w.sigma_a).mul(&m.u1).mul(&m.u2))
}

/// The three summands of
/// `J = alpha int u2 g chi_A - 2 mu beta int u1 g chi_A + (Gamma/2mu) beta |z|^2`.
pub fn virial_j_terms(m: &ModeCoords, w: &VirialWeights, basis: &SpectralBasis) -> (f64, f64, f64) {
    let gchi = basis.g.mul(&w.chi_a);
    let t1 = m.alpha() * quad(&gchi.mul(&m.u2));
    let t2 = -2.0 * basis.mu * m.beta() * quad(&gchi.mul(&m.u1));
    let t3 = basis.gamma / (2.0 * basis.mu) * m.beta() * m.zsq();
    (t1, t2, t3)
}

/// Internal-mode functional `J`.
pub fn virial_j(m: &ModeCoords, w: &VirialWeights, basis: &SpectralBasis) -> f64 {
    let (t1, t2, t3) = virial_j_terms(m, w, basis);
    t1 + t2 + t3
}

/// Quartic companion `Z = (Gamma/4mu) alpha beta`.
pub fn virial_zfun(m: &ModeCoords, basis: &SpectralBasis) -> f64 {
    basis.gamma / (4.0 * basis.mu) * m.alpha() * m.beta()
}

/// Transformed-side virial functional
/// `K = int (Psi_{A,B} d_x v1 + 1/2 Psi_{A,B}' v1) v2` for odd `v1, v2`.
pub fn virial_k(v1: &GridFn, v2: &GridFn, w: &VirialWeights) -> Result<f64> {
    if v1.parity() != Parity::Odd || v2.parity() != Parity::Odd {
        return Err(Error::Precondition(
            "transformed-side virial needs odd inputs".into(),
        ));
    }
    v1.same_grid(&w.psi_ab)?;
    let dv1 = diff(v1, 1)?;
    Ok(quad(&w.psi_ab.mul(&dv1).add(&w.psi_ab_prime.mul(v1).scale(0.5)).mul(v2)))
}

/// Composite decay monitor
/// `M = ||sigma_A d_x u1||^2 + ||sigma_A u1||^2 + ||sigma_A u2||^2 + |z|^4 + b_+^2 + b_-^2`.
pub fn monitor_from_parts(
    norm_sigma_dxu1: f64,
    norm_sigma_u1: f64,
    norm_sigma_u2: f64,
    zsq: f64,
    bplus: f64,
    bminus: f64,
) -> f64 {
    norm_sigma_dxu1 * norm_sigma_dxu1
        + norm_sigma_u1 * norm_sigma_u1
        + norm_sigma_u2 * norm_sigma_u2
        + zsq * zsq
        + bplus * bplus
        + bminus * bminus
}

/// Both sides of the odd-function coercivity bound
/// `int (d_x f)^2 >= (2/B^2) int sech^2(x/B) f^2` with `B` the transformed-side
/// switch scale.
pub fn coercivity_probe(f: &GridFn, w: &VirialWeights) -> Result<(f64, f64)> {
    if f.parity() != Parity::Odd {
        return Err(Error::Precondition("coercivity probe needs odd input".into()));
    }
    let lhs = diff(f, 1)?.norm().powi(2);
    let rhs = 2.0 / (w.b_scale * w.b_scale) * quad(&w.zeta_b.mul(&w.zeta_b).mul(f).mul(f));
    Ok((lhs, rhs))
}

/// Local `H^1 x L^2` energy of the perturbation `phi - (Q, 0)` on an interval.
pub fn local_energy(s: &FieldState, basis: &SpectralBasis, interval: (f64, f64)) -> Result<f64> {
    let grid = s.grid();
    if interval.0 >= interval.1
        || interval.0 < -grid.half_width() - 1e-12
        || interval.1 > grid.half_width() + 1e-12
    {
        return Err(Error::Precondition(format!(
            "interval [{}, {}] not inside the grid",
            interval.0, interval.1
        )));
    }
    let pert = s.phi1.sub(&basis.q);
    let dp = diff(&pert, 1)?;
    let lo = grid.index_of(interval.0)?;
    let hi = grid.index_of(interval.1)?;
    let h = grid.spacing();
    let mut acc = 0.0;
    for j in lo..=hi {
        let w = if j == lo || j == hi { 0.5 } else { 1.0 };
        let d = dp.values()[j];
        let p = pert.values()[j];
        let v = s.phi2.values()[j];
        acc += w * (d * d + p * p + v * v);
    }
    Ok((acc * h).sqrt())
}

/// Assembles TraceRecords from field states; owns the spectral data, weights,
/// and whether the generating run used the sponge (its damping enters the
/// `u`-equation forcing and therefore the I/K right-hand sides).
pub struct Recorder {
    basis: SpectralBasis,
    weights: VirialWeights,
    sponge_on: bool,
    sponge_profile: GridFn,
    q_prime: GridFn,
    chi_a_d1: GridFn,
    chi_a_d2: GridFn,
    records: Vec<TraceRecord>,
}

impl Recorder {
    pub fn new(basis: SpectralBasis, weights: VirialWeights, sponge_on: bool) -> Self {
        let grid = Arc::clone(basis.grid());
        let wgt = weights.clone();
        let r = grid.half_width();
        let ww = grid.sponge_width();
        let sponge_profile = if ww > 0.0 {
            GridFn::sample(&grid, Parity::Even, move |x| {
                let s = (x.abs() - (r - ww)) / ww;
                if s > 0.0 {
                    s * s
                } else {
                    0.0
                }
            })
        } else {
            GridFn::zeros(&grid)
        };
        let q_prime = GridFn::sample(&grid, Parity::Odd, |x| {
            -1.5 / (x / 2.0).cosh().powi(2) * (x / 2.0).tanh()
        });
        let chi_a_d1 = GridFn::sample(&grid, Parity::Odd, |x| wgt.chi_a_d1(x));
        let chi_a_d2 = GridFn::sample(&grid, Parity::Even, |x| wgt.chi_a_d2(x));
        Recorder {
            basis,
            weights,
            sponge_on,
            sponge_profile,
            q_prime,
            chi_a_d1,
            chi_a_d2,
            records: Vec::new(),
        }
    }

    pub fn basis(&self) -> &SpectralBasis {
        &self.basis
    }

    pub fn weights(&self) -> &VirialWeights {
        &self.weights
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<TraceRecord> {
        self.records
    }

    /// Flag the record nearest to `t` as a re-aim instant.
    pub fn mark_reaim_at(&mut self, t: f64) {
        if let Some(rec) = self
            .records
            .iter_mut()
            .min_by(|a, b| (a.t - t).abs().partial_cmp(&(b.t - t).abs()).unwrap())
        {
            rec.reaim = true;
        }
    }

    /// Evaluate every diagnostic for one state and append the record.
    pub fn record(&mut self, s: &FieldState) -> Result<()> {
        let b = &self.basis;
        let w = &self.weights;
        let m = decompose(s, b)?;
        let nt = nonlinearity_terms(&m, b);
        let eps = w.eps;

        let du1 = diff(&m.u1, 1)?;
        let v1 = crate::darboux::s_eps(&m.u1, eps)?;
        let v2 = crate::darboux::s_eps(&m.u2, eps)?;
        let dv1 = diff(&v1, 1)?;

        // Forcing of the u-equation; with the sponge on, its damping term
        // belongs to the right-hand sides of the exact identities.
        let g_field = if self.sponge_on {
            let damped = self.sponge_profile.mul(&s.phi2);
            nt.nperp.sub(&b.project_continuous(&damped))
        } else {
            nt.nperp.clone()
        };

        let norm_rho_u1 = m.u1.weighted_norm(&w.rho);
        let norm_sigma_u1 = m.u1.weighted_norm(&w.sigma_a);
        let norm_sigma_dxu1 = du1.weighted_norm(&w.sigma_a);
        let norm_sigma_u2 = m.u2.weighted_norm(&w.sigma_a);
        let norm_rho_seps_u1 = v1.weighted_norm(&w.rho);
        let norm_rho_dx_seps_u1 = dv1.weighted_norm(&w.rho);

        let func_i = quad(&w.phi_a.mul(&du1).add(&w.phi_a_prime.mul(&m.u1).scale(0.5)).mul(&m.u2));
        let func_h = virial_h(&m, w);
        let func_j = virial_j(&m, w, b);
        let func_z = virial_zfun(&m, b);
        let func_b = m.bplus * m.bplus - m.bminus * m.bminus;
        let func_k = virial_k(&v1, &v2, w)?;

        // d/dt I = -int Phi' (dx u1)^2 + 1/4 int Phi''' u1^2 - int Phi Q' u1^2
        //          + int G (Phi dx u1 + 1/2 Phi' u1),  P = 1 - 2Q.
        let i_rhs = -quad(&w.phi_a_prime.mul(&du1).mul(&du1))
            + 0.25 * quad(&w.phi_a_ppp.mul(&m.u1).mul(&m.u1))
            - quad(&w.phi_a.mul(&self.q_prime).mul(&m.u1).mul(&m.u1))
            + quad(&g_field.mul(&w.phi_a.mul(&du1).add(&w.phi_a_prime.mul(&m.u1).scale(0.5))));

        // d/dt (J + Z) via its four-term expansion plus the Z part.
        let gchi = b.g.mul(&w.chi_a);
        let int_u1_gchi = quad(&gchi.mul(&m.u1));
        let int_u2_gchi = quad(&gchi.mul(&m.u2));
        let alpha = m.alpha();
        let beta = m.beta();
        let j1 = -alpha
            * (2.0 * quad(&b.g.mul(&self.chi_a_d1).mul(&du1))
                + quad(&b.g.mul(&self.chi_a_d2).mul(&m.u1)));
        let j2 = -alpha * (b.gamma * m.zsq() - quad(&nt.nperp.mul(&gchi)));
        let j3 = -2.0 / b.mu * nt.n2 * (m.z2 * int_u2_gchi + 2.0 * b.mu * m.z1 * int_u1_gchi);
        let j4 = b.gamma / (b.mu * b.mu) * nt.n2 * (m.z1 * m.zsq() + m.z2 * beta);
        let z_rhs = 0.5 * b.gamma * (beta * beta - alpha * alpha)
            + 0.5 * b.gamma / (b.mu * b.mu) * nt.n2 * (alpha * m.z1 - beta * m.z2);
        let jz_rhs = j1 + j2 + j3 + j4 + z_rhs;

        // d/dt K on the transformed side; the flat operator has no potential
        // term, so only the weight derivatives and the forcing appear.
        let sg = crate::darboux::s_eps(&g_field, eps)?;
        let k_rhs = -quad(&w.psi_ab_prime.mul(&dv1).mul(&dv1))
            + 0.25 * quad(&w.psi_ab_ppp.mul(&v1).mul(&v1))
            + quad(&sg.mul(&w.psi_ab.mul(&dv1).add(&w.psi_ab_prime.mul(&v1).scale(0.5))));

        let monitor = monitor_from_parts(
            norm_sigma_dxu1,
            norm_sigma_u1,
            norm_sigma_u2,
            m.zsq(),
            m.bplus,
            m.bminus,
        );
        let mut local_e = [0.0f64; 3];
        for (k, itv) in LOCAL_INTERVALS.iter().enumerate() {
            local_e[k] = local_energy(s, b, *itv)?;
        }

        self.records.push(TraceRecord {
            t: s.time,
            a1: m.a1,
            a2: m.a2,
            z1: m.z1,
            z2: m.z2,
            bplus: m.bplus,
            bminus: m.bminus,
            alpha,
            beta,
            norm_rho_u1,
            norm_sigma_u1,
            norm_sigma_dxu1,
            norm_sigma_u2,
            norm_rho_seps_u1,
            norm_rho_dx_seps_u1,
            func_i,
            func_h,
            func_j,
            func_z,
            func_b,
            func_k,
            monitor,
            energy: energy(s)?,
            n0: nt.n0,
            n2: nt.n2,
            i_rhs,
            jz_rhs,
            k_rhs,
            local_e,
            reaim: false,
        });
        Ok(())
    }
}

/// Which exact identity to replay against a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdentityKind {
    /// `d/dt I` against the general virial identity with `G = Nperp` (+ sponge).
    I,
    /// `d/dt (J + Z)` against the four-term expansion plus the `Z` part.
    JZ,
    /// `d/dt B = 2 nu (b_+^2 + b_-^2) + nu^{-1} N0 (b_+ + b_-)`.
    B,
    /// `d/dt K` on the transformed side.
    K,
    /// `d/dt |z|^2 = 2 mu^{-1} z2 N2`.
    ModZsq,
    /// `d/dt z1 = mu z2`.
    Z1Dot,
    /// `d/dt z2 = -mu z1 + mu^{-1} N2`.
    Z2Dot,
    /// `d/dt b_+ = nu b_+ + (2nu)^{-1} N0`.
    BplusDot,
    /// `d/dt b_- = -nu b_- - (2nu)^{-1} N0`.
    BminusDot,
}

impl IdentityKind {
    pub fn name(self) -> &'static str {
        match self {
            IdentityKind::I => "dI/dt",
            IdentityKind::JZ => "d(J+Z)/dt",
            IdentityKind::B => "dB/dt",
            IdentityKind::K => "dK/dt",
            IdentityKind::ModZsq => "d|z|^2/dt",
            IdentityKind::Z1Dot => "dz1/dt",
            IdentityKind::Z2Dot => "dz2/dt",
            IdentityKind::BplusDot => "db+/dt",
            IdentityKind::BminusDot => "db-/dt",
        }
    }

    /// The replayable identities behind the trace-check command.
    pub fn replay_suite() -> [IdentityKind; 5] {
        [IdentityKind::I, IdentityKind::JZ, IdentityKind::B, IdentityKind::K, IdentityKind::ModZsq]
    }

    fn series(self, r: &TraceRecord) -> f64 {
        match self {
            IdentityKind::I => r.func_i,
            IdentityKind::JZ => r.func_j + r.func_z,
            IdentityKind::B => r.func_b,
            IdentityKind::K => r.func_k,
            IdentityKind::ModZsq => r.z1 * r.z1 + r.z2 * r.z2,
            IdentityKind::Z1Dot => r.z1,
            IdentityKind::Z2Dot => r.z2,
            IdentityKind::BplusDot => r.bplus,
            IdentityKind::BminusDot => r.bminus,
        }
    }

    fn rhs(self, r: &TraceRecord) -> f64 {
        let nu = (5.0f64 / 4.0).sqrt();
        let mu = (3.0f64 / 4.0).sqrt();
        match self {
            IdentityKind::I => r.i_rhs,
            IdentityKind::JZ => r.jz_rhs,
            IdentityKind::B => {
                2.0 * nu * (r.bplus * r.bplus + r.bminus * r.bminus)
                    + r.n0 * (r.bplus + r.bminus) / nu
            }
            IdentityKind::K => r.k_rhs,
            IdentityKind::ModZsq => 2.0 / mu * r.z2 * r.n2,
            IdentityKind::Z1Dot => mu * r.z2,
            IdentityKind::Z2Dot => -mu * r.z1 + r.n2 / mu,
            IdentityKind::BplusDot => nu * r.bplus + r.n0 / (2.0 * nu),
            IdentityKind::BminusDot => -nu * r.bminus - r.n0 / (2.0 * nu),
        }
    }
}

/// Outcome of replaying one identity against a trace.
#[derive(Debug, Clone, serde::Serialize)]
pub struct IdentityCheck {
    pub name: String,
    /// Largest centered-difference mismatch at spacing dt.
    pub max_mismatch: f64,
    /// Largest Richardson-extrapolated residual (dt against 2dt), which
    /// removes the O(dt^2) differencing error and isolates the formula error.
    pub max_extrapolated: f64,
    /// Time of the largest raw mismatch.
    pub time_of_max: f64,
    pub pass: bool,
}

/// Replay one exact identity along a uniformly sampled trace. The mismatch is
/// `FD(series) - rhs`; Richardson extrapolation across sample spacings `dt`
/// and `2dt` isolates the formula error, which must stay within `tol`.
pub fn virial_identity_check(
    records: &[TraceRecord],
    which: IdentityKind,
    tol: f64,
) -> Result<IdentityCheck> {
    if records.len() < 7 {
        return Err(Error::Precondition(format!(
            "trace too sparse for identity replay: {} samples",
            records.len()
        )));
    }
    let dt = records[1].t - records[0].t;
    for w in records.windows(2) {
        if ((w[1].t - w[0].t) - dt).abs() > 1e-9 * dt.max(1.0) {
            return Err(Error::Precondition(
                "identity replay needs uniformly spaced records".into(),
            ));
        }
    }
    let n = records.len();
    let flagged: Vec<usize> =
        records.iter().enumerate().filter(|(_, r)| r.reaim).map(|(i, _)| i).collect();
    let near_flag = |i: usize, radius: usize| {
        flagged.iter().any(|&f| (f as isize - i as isize).unsigned_abs() <= radius)
    };

    let f: Vec<f64> = records.iter().map(|r| which.series(r)).collect();
    let rhs: Vec<f64> = records.iter().map(|r| which.rhs(r)).collect();

    let mut max_mismatch = 0.0f64;
    let mut time_of_max = records[0].t;
    let mut max_extrapolated = 0.0f64;
    for i in 2..n - 2 {
        if near_flag(i, 2) {
            continue;
        }
        let m1 = (f[i + 1] - f[i - 1]) / (2.0 * dt) - rhs[i];
        let m2 = (f[i + 2] - f[i - 2]) / (4.0 * dt) - rhs[i];
        if m1.abs() > max_mismatch {
            max_mismatch = m1.abs();
            time_of_max = records[i].t;
        }
        max_extrapolated = max_extrapolated.max(((4.0 * m1 - m2) / 3.0).abs());
    }
    Ok(IdentityCheck {
        name: which.name().to_string(),
        max_mismatch,
        max_extrapolated,
        time_of_max,
        pass: max_extrapolated <= tol,
    })
}

/// Least-squares slope of `(t, ln v)` samples.
pub fn fit_log_slope(samples: &[(f64, f64)]) -> f64 {
    let n = samples.len() as f64;
    let (st, sv, stt, stv) = samples.iter().fold((0.0, 0.0, 0.0, 0.0), |acc, &(t, v)| {
        let lv = v.ln();
        (acc.0 + t, acc.1 + lv, acc.2 + t * t, acc.3 + t * lv)
    });
    (n * stv - st * sv) / (n * stt - st * st)
}

/// Dominant angular frequency from interpolated zero crossings.
pub fn frequency_by_crossings(samples: &[(f64, f64)]) -> Result<f64> {
    let mut crossings = Vec::new();
    for w in samples.windows(2) {
        let (t0, v0) = w[0];
        let (t1, v1) = w[1];
        if v0 == 0.0 {
            crossings.push(t0);
        } else if v0.signum() != v1.signum() {
            crossings.push(t0 + (t1 - t0) * v0.abs() / (v0 - v1).abs());
        }
    }
    if crossings.len() < 2 {
        return Err(Error::Precondition("too few zero crossings for a frequency fit".into()));
    }
    let half_periods = crossings.len() - 1;
    Ok(std::f64::consts::PI * half_periods as f64
        / (crossings[half_periods] - crossings[0]))
}

/// Power-law exponent `p` from `v ~ c a^p` by log-log regression.
pub fn fit_power_law(pairs: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = pairs.iter().map(|&(a, v)| (a.ln(), v.abs().ln())).collect();
    let n = logs.len() as f64;
    let (sx, sy, sxx, sxy) = logs.iter().fold((0.0, 0.0, 0.0, 0.0), |acc, &(x, y)| {
        (acc.0 + x, acc.1 + y, acc.2 + x * x, acc.3 + x * y)
    });
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}
