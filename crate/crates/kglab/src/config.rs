//! Structured run configuration: a single TOML file with sections, full
//! validation, and printable defaults. Unknown keys are rejected.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    /// Half-width `R` of the symmetric domain.
    pub r: f64,
    /// Number of nodes (odd).
    pub n: usize,
    /// Sponge width; `None` means the default `R/6`, `0` disables.
    pub sponge_width: Option<f64>,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { r: 60.0, n: 4801, sponge_width: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsSection {
    /// Large-scale weight parameter `A`.
    pub a: f64,
    /// Smoothing strength of the regularized transformation.
    pub eps: f64,
}

impl Default for WeightsSection {
    fn default() -> Self {
        WeightsSection { a: 20.0, eps: 0.05 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveSection {
    pub dt: f64,
    pub t_end: f64,
    pub record_every: usize,
    pub mode: crate::dynamics::EvolveMode,
    pub sponge: bool,
    /// Initial state: soliton | soliton+Y0 | soliton+Y2 | soliton+bump | custom.
    pub preset: String,
    /// Perturbation amplitude for the non-trivial presets.
    pub amplitude: f64,
    /// Checkpoint path for the `custom` preset.
    pub custom_path: Option<PathBuf>,
}

impl Default for EvolveSection {
    fn default() -> Self {
        EvolveSection {
            dt: 0.01,
            t_end: 100.0,
            record_every: 1,
            mode: crate::dynamics::EvolveMode::Nonlinear,
            sponge: true,
            preset: "soliton".into(),
            amplitude: 0.1,
            custom_path: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShootSection {
    /// Classification horizon; `None` means `max(200, (20/nu) ln(1/||eps||))`.
    pub t_horizon: Option<f64>,
    pub tol: f64,
    pub theta_exit: f64,
    /// Internal-mode amplitudes swept by the shoot command.
    pub amplitudes: Vec<f64>,
    /// Time the accepted trajectory is tracked.
    pub t_end: f64,
    pub reaim_interval: f64,
}

impl Default for ShootSection {
    fn default() -> Self {
        ShootSection {
            t_horizon: None,
            tol: 1e-12,
            theta_exit: 0.05,
            amplitudes: vec![0.04, 0.02, 0.01, 0.005],
            t_end: 200.0,
            reaim_interval: 10.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceCheckSection {
    /// Stored trace to replay.
    pub path: Option<PathBuf>,
    /// Tolerance on the Richardson-extrapolated identity residual.
    pub tol: f64,
}

impl Default for TraceCheckSection {
    fn default() -> Self {
        TraceCheckSection { path: None, tol: 1e-6 }
    }
}

/// Full laboratory configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub grid: GridSection,
    pub weights: WeightsSection,
    pub evolve: EvolveSection,
    pub shoot: ShootSection,
    pub trace_check: TraceCheckSection,
    /// Seed for randomized probe suites.
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid: GridSection::default(),
            weights: WeightsSection::default(),
            evolve: EvolveSection::default(),
            shoot: ShootSection::default(),
            trace_check: TraceCheckSection::default(),
            seed: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn sponge_width(&self) -> f64 {
        self.grid.sponge_width.unwrap_or(self.grid.r / 6.0)
    }

    pub fn build_grid(&self) -> Result<std::sync::Arc<crate::grid::Grid1D>> {
        crate::grid::Grid1D::new(self.grid.r, self.grid.n, self.sponge_width())
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.build_grid()?;
        crate::spectral::VirialWeights::build(&grid, self.weights.a, self.weights.eps)?;
        let ec = crate::dynamics::EvolveConfig {
            dt: self.evolve.dt,
            t_end: self.evolve.t_end,
            sponge: self.evolve.sponge,
            mode: self.evolve.mode,
            record_every: self.evolve.record_every,
        };
        ec.validate(&grid)?;
        let known = ["soliton", "soliton+Y0", "soliton+Y2", "soliton+bump", "custom"];
        if !known.contains(&self.evolve.preset.as_str()) {
            return Err(Error::Config(format!(
                "unknown preset '{}'; expected one of {known:?}",
                self.evolve.preset
            )));
        }
        if self.evolve.preset == "custom" && self.evolve.custom_path.is_none() {
            return Err(Error::Config("preset 'custom' needs evolve.custom_path".into()));
        }
        if !(self.shoot.tol > 0.0) || !(self.shoot.theta_exit > 0.0) {
            return Err(Error::Config("shoot.tol and shoot.theta_exit must be positive".into()));
        }
        if self.shoot.amplitudes.iter().any(|&a| a < 0.0) {
            return Err(Error::Config("shoot amplitudes must be nonnegative".into()));
        }
        if !(self.shoot.reaim_interval > 0.0) {
            return Err(Error::Config("shoot.reaim_interval must be positive".into()));
        }
        if !(self.trace_check.tol > 0.0) {
            return Err(Error::Config("trace_check.tol must be positive".into()));
        }
        Ok(())
    }

    /// Default config in default TOML form (for `--print-config`).
    pub fn defaults_toml() -> String {
        RunConfig::default().to_toml()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        back.validate().unwrap();
        assert_eq!(back.grid.n, 4801);
        assert_eq!(back.sponge_width(), 10.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "[grid]\nr = 60.0\nn = 4801\nwobble = 3\n";
        let parsed: std::result::Result<RunConfig, _> = toml::from_str(text);
        assert!(parsed.is_err());
    }

    #[test]
    fn invalid_numbers_are_rejected() {
        let mut cfg = RunConfig::default();
        cfg.grid.n = 4800;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.evolve.dt = 0.2;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.evolve.preset = "vortex".into();
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.weights.a = 40.0;
        assert!(cfg.validate().is_err());
    }
}
