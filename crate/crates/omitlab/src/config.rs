//! Run configuration: one JSON document fully specifies a run.
//!
//! Every rate and frequency field is angular (rad/s), matching the crate
//! convention; lengths are metres, masses kilograms, powers watts. The
//! format round-trips losslessly (parse → emit → parse preserves every
//! value bit-exactly), which is what makes run records reproducible.

use serde::{Deserialize, Serialize};

use crate::dispersion::{DispersionModel, MembraneSlab};
use crate::error::{Error, Result};
use crate::fit::{FitParams, ParamMask, PARAM_NAMES};
use crate::model::{CavityOptics, DerivedCoupling, DriveConfig, MechanicalMode, OmitSystem};
use crate::oracle::OracleSettings;
use crate::response::SweepMode;
use num_complex::Complex64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mechanics: MechanicsConfig,
    pub optics: OpticsConfig,
    pub drive: DriveSection,
    pub coupling: CouplingConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub membrane: Option<MembraneConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thermal: Option<ThermalConfig>,
    pub sweep: SweepConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSection>,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanicsConfig {
    pub omega_m_rad_s: f64,
    pub q_factor: f64,
    pub mass_kg: f64,
    #[serde(default = "default_theta")]
    pub overlap_theta: f64,
}

fn default_theta() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticsConfig {
    pub kappa0_rad_s: f64,
    pub kappa2_rad_s: f64,
    pub wavelength_m: f64,
    pub cavity_length_m: f64,
    /// Empty-cavity finesse; sets the mirror reflectivity of the dispersion
    /// model only.
    #[serde(default = "default_finesse")]
    pub finesse: f64,
}

fn default_finesse() -> f64 {
    60_000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveSection {
    pub pump_power_w: f64,
    pub delta_rad_s: f64,
    #[serde(default = "default_probe_re")]
    pub probe_amp_re: f64,
    #[serde(default)]
    pub probe_amp_im: f64,
    pub probe_offset_rad_s: f64,
}

fn default_probe_re() -> f64 {
    1.0
}

/// How the coupling quantities are obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CouplingConfig {
    /// |G| given directly (a fitted or published value).
    Direct {
        g_rad_s: f64,
        #[serde(default)]
        h_rad_s: f64,
    },
    /// Target cooperativity; |G| = sqrt(2 κ_T γ_m C).
    Cooperativity {
        c: f64,
        #[serde(default)]
        h_rad_s: f64,
    },
    /// Derived from the membrane dispersion model at the configured z₀.
    Dispersion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MembraneConfig {
    pub thickness_m: f64,
    pub n_real: f64,
    #[serde(default)]
    pub n_imag: f64,
    pub z0_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalConfig {
    pub temperature_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Grid start; rad/s for respond/oracle sweeps, metres for dispersion
    /// scans.
    pub start: f64,
    pub stop: f64,
    pub count: usize,
    #[serde(default = "default_mode")]
    pub mode: SweepMode,
}

fn default_mode() -> SweepMode {
    SweepMode::Locked
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end_s: Option<f64>,
    #[serde(default = "default_window_periods")]
    pub window_periods: usize,
    /// Reduced mechanical Q for desk-scale oracle runs; replaces the
    /// mechanics Q for both the integration and its analytic reference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surrogate_q: Option<f64>,
}

fn default_window_periods() -> usize {
    40
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    /// Free-parameter names from ["g", "kappa_t", "gamma_m", "scale",
    /// "phase_offset"].
    #[serde(default = "default_free")]
    pub free: Vec<String>,
    #[serde(default)]
    pub use_phase: bool,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Seed-restart count (1..=5); see the fit module's restart heuristic.
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<FitInitial>,
}

fn default_restarts() -> usize {
    1
}

fn default_free() -> Vec<String> {
    vec!["g".into(), "scale".into()]
}

fn default_max_iterations() -> usize {
    500
}

/// Explicit seed overrides; anything absent is seeded from the other config
/// sections (or from the spectrum itself for g).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FitInitial {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_rad_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_t_rad_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_m_rad_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_offset_rad: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub path: String,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config {
            path: "<config>".into(),
            reason: e.to_string(),
        })
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Config {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    /// Pretty JSON; parsing it back yields a bit-identical config.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Non-fatal physics warnings (currently the weak-probe check).
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Ok(sys) = self.build_system() {
            if let Some(w) = sys.drive.weak_probe_warning(sys.optics.omega_laser) {
                out.push(w);
            }
        }
        out
    }

    fn mechanics(&self, q_override: Option<f64>) -> Result<MechanicalMode> {
        MechanicalMode::new(
            self.mechanics.omega_m_rad_s,
            q_override.unwrap_or(self.mechanics.q_factor),
            self.mechanics.mass_kg,
            self.mechanics.overlap_theta,
        )
    }

    fn optics(&self) -> Result<CavityOptics> {
        CavityOptics::new(
            self.optics.kappa0_rad_s,
            self.optics.kappa2_rad_s,
            self.optics.wavelength_m,
            self.optics.cavity_length_m,
        )
    }

    fn drive(&self) -> Result<DriveConfig> {
        DriveConfig::new(
            self.drive.pump_power_w,
            self.drive.delta_rad_s,
            Complex64::new(self.drive.probe_amp_re, self.drive.probe_amp_im),
            self.drive.probe_offset_rad_s,
        )
    }

    /// The membrane dispersion model, required by `coupling: dispersion` and
    /// the dispersion scan.
    pub fn dispersion_model(&self) -> Result<DispersionModel> {
        let m = self.membrane.as_ref().ok_or_else(|| Error::Config {
            path: "membrane".into(),
            reason: "section required for the dispersion model".into(),
        })?;
        let slab = MembraneSlab::new(m.thickness_m, m.n_real, m.n_imag, m.z0_m)?;
        DispersionModel::new(
            slab,
            self.optics.cavity_length_m,
            self.optics.wavelength_m,
            self.optics.finesse,
        )
    }

    fn assemble(&self, q_override: Option<f64>) -> Result<OmitSystem> {
        let mechanics = self.mechanics(q_override)?;
        let optics = self.optics()?;
        let drive = self.drive()?;
        let coupling = match &self.coupling {
            CouplingConfig::Direct { g_rad_s, h_rad_s } => {
                DerivedCoupling::from_coupling(&mechanics, &optics, &drive, *g_rad_s, *h_rad_s)?
            }
            CouplingConfig::Cooperativity { c, h_rad_s } => {
                DerivedCoupling::from_cooperativity(&mechanics, &optics, &drive, *c, *h_rad_s)?
            }
            CouplingConfig::Dispersion => {
                let model = self.dispersion_model()?;
                let z0 = self.membrane.as_ref().map(|m| m.z0_m).unwrap_or(0.0);
                let (slope, curvature) = model.derivatives(z0)?;
                DerivedCoupling::steady_state(&mechanics, &optics, &drive, slope, curvature)?
            }
        };
        Ok(OmitSystem::new(mechanics, optics, drive, coupling))
    }

    /// Builds the parameter bundle as configured.
    pub fn build_system(&self) -> Result<OmitSystem> {
        self.assemble(None)
    }

    /// Same, with the oracle's surrogate Q applied (when set) so both the
    /// integration and its analytic reference use the desk-scale mechanics.
    pub fn build_oracle_system(&self) -> Result<OmitSystem> {
        self.assemble(self.oracle.as_ref().and_then(|o| o.surrogate_q))
    }

    pub fn oracle_settings(&self) -> OracleSettings {
        match &self.oracle {
            Some(o) => OracleSettings {
                dt: o.dt_s,
                t_end: o.t_end_s,
                window_periods: o.window_periods,
            },
            None => OracleSettings::default(),
        }
    }

    /// The sweep grid (rad/s for response/oracle runs, metres for dispersion
    /// scans).
    pub fn grid(&self) -> Result<Vec<f64>> {
        let s = &self.sweep;
        if s.count == 0 {
            return Err(Error::Config {
                path: "sweep.count".into(),
                reason: "must be at least 1".into(),
            });
        }
        if s.count == 1 {
            return Ok(vec![s.start]);
        }
        if !(s.stop > s.start) {
            return Err(Error::Config {
                path: "sweep".into(),
                reason: format!("stop ({}) must exceed start ({})", s.stop, s.start),
            });
        }
        Ok((0..s.count)
            .map(|i| s.start + (s.stop - s.start) * i as f64 / (s.count - 1) as f64)
            .collect())
    }

    /// Free-parameter mask and seed for a fit run. The seed falls back to the
    /// physics sections for (g, κ_T, γ_m) and to (1, 0) for (scale, phase).
    pub fn fit_setup(&self, sys: &OmitSystem) -> Result<(FitParams, ParamMask, crate::fit::FitOptions)> {
        let section = self.fit.clone().unwrap_or(FitSection {
            free: default_free(),
            use_phase: false,
            max_iterations: default_max_iterations(),
            restarts: default_restarts(),
            initial: None,
        });
        let mut mask: ParamMask = [false; PARAM_NAMES.len()];
        for name in &section.free {
            let idx = PARAM_NAMES
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Config {
                    path: "fit.free".into(),
                    reason: format!(
                        "unknown parameter `{name}` (expected one of {PARAM_NAMES:?})"
                    ),
                })?;
            mask[idx] = true;
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::Config {
                path: "fit.free".into(),
                reason: "no free parameters".into(),
            });
        }
        let init = section.initial.clone().unwrap_or_default();
        let seed = FitParams {
            g: init.g_rad_s.unwrap_or(sys.coupling.g_coupling.abs()),
            kappa_t: init.kappa_t_rad_s.unwrap_or(sys.optics.kappa_t),
            gamma_m: init.gamma_m_rad_s.unwrap_or(sys.mechanics.gamma_m),
            scale: init.scale.unwrap_or(1.0),
            phase_offset: init.phase_offset_rad.unwrap_or(0.0),
        };
        Ok((
            seed,
            mask,
            crate::fit::FitOptions {
                max_iterations: section.max_iterations,
                use_phase: section.use_phase,
                restarts: section.restarts,
            },
        ))
    }
}
