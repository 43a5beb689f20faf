//! Physical parameters and derived scalar quantities.
//!
//! Unit convention: every rate and frequency in this crate (mechanical
//! frequency, cavity decay rates, detunings, coupling, damping) is *angular*,
//! in rad/s. Lengths are in metres, masses in kilograms, powers in watts,
//! temperatures in kelvin. Probe amplitudes are in sqrt(photons/s).
//!
//! All types here are immutable value objects; every operation is a pure
//! function, safe to evaluate from any number of threads.

use num_complex::Complex64;

use crate::constants::{BOLTZMANN, HBAR, SPEED_OF_LIGHT};
use crate::error::{Error, Result};

/// The membrane vibrational mode treated as a damped harmonic oscillator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MechanicalMode {
    /// Angular resonance frequency Ω_m (rad/s).
    pub omega_m: f64,
    /// Quality factor Q = Ω_m / γ_m.
    pub q_factor: f64,
    /// Angular damping rate γ_m = Ω_m / Q (rad/s).
    pub gamma_m: f64,
    /// Effective mass (kg).
    pub mass: f64,
    /// Transverse overlap Θ between the optical and vibrational mode (0, 1].
    pub overlap_theta: f64,
    /// Zero-point length scale x0 = sqrt(ħ / (m Ω_m)) (m).
    pub x0: f64,
}

impl MechanicalMode {
    /// Builds the mode from (Ω_m, Q, m, Θ), deriving γ_m and x0.
    pub fn new(omega_m: f64, q_factor: f64, mass: f64, overlap_theta: f64) -> Result<Self> {
        ensure_positive("omega_m", omega_m)?;
        ensure_positive("q_factor", q_factor)?;
        if !q_factor.is_finite() {
            return Err(Error::domain("q_factor", "must be finite"));
        }
        ensure_positive("mass", mass)?;
        ensure_positive("overlap_theta", overlap_theta)?;
        if overlap_theta > 1.0 {
            return Err(Error::domain(
                "overlap_theta",
                format!("must be <= 1 (got {overlap_theta})"),
            ));
        }
        Ok(MechanicalMode {
            omega_m,
            q_factor,
            gamma_m: omega_m / q_factor,
            mass,
            overlap_theta,
            x0: (HBAR / (mass * omega_m)).sqrt(),
        })
    }

    /// Builds the mode from an explicit damping rate instead of Q.
    pub fn from_damping(omega_m: f64, gamma_m: f64, mass: f64, overlap_theta: f64) -> Result<Self> {
        ensure_positive("gamma_m", gamma_m)?;
        Self::new(omega_m, omega_m / gamma_m, mass, overlap_theta)
    }

    /// Same mode with the quality factor replaced (used for reduced-Q
    /// time-domain surrogates).
    pub fn with_q_factor(&self, q_factor: f64) -> Result<Self> {
        Self::new(self.omega_m, q_factor, self.mass, self.overlap_theta)
    }
}

/// Two-mirror cavity decay rates and pump wavelength bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityOptics {
    /// Input-mirror amplitude decay rate κ₀ (rad/s).
    pub kappa0: f64,
    /// Back-mirror amplitude decay rate κ₂ (rad/s).
    pub kappa2: f64,
    /// Total decay rate κ_T = κ₀ + κ₂ (rad/s).
    pub kappa_t: f64,
    /// Pump angular frequency ω_L = 2πc/λ (rad/s).
    pub omega_laser: f64,
    /// Mirror-to-mirror length L (m).
    pub cavity_length: f64,
    /// η = 2κ₀/κ_T.
    pub eta: f64,
    /// η′ = 2 sqrt(κ₀κ₂)/κ_T; equals 1 iff κ₀ = κ₂.
    pub eta_prime: f64,
}

impl CavityOptics {
    pub fn new(kappa0: f64, kappa2: f64, wavelength: f64, cavity_length: f64) -> Result<Self> {
        ensure_positive("kappa0", kappa0)?;
        ensure_positive("kappa2", kappa2)?;
        ensure_positive("wavelength", wavelength)?;
        ensure_positive("cavity_length", cavity_length)?;
        let kappa_t = kappa0 + kappa2;
        Ok(CavityOptics {
            kappa0,
            kappa2,
            kappa_t,
            omega_laser: 2.0 * std::f64::consts::PI * SPEED_OF_LIGHT / wavelength,
            cavity_length,
            eta: 2.0 * kappa0 / kappa_t,
            eta_prime: 2.0 * (kappa0 * kappa2).sqrt() / kappa_t,
        })
    }
}

/// Pump and probe drive settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveConfig {
    /// Incident pump power P (W).
    pub pump_power: f64,
    /// Cavity–pump detuning Δ = ω_cav − ω_L (rad/s).
    pub delta: f64,
    /// Probe amplitude s_p (sqrt(photons/s), complex; its phase is the
    /// reference for the beat phase).
    pub probe_amp: Complex64,
    /// Pump–probe detuning Ω = ω_p − ω_L (rad/s).
    pub probe_offset: f64,
}

impl DriveConfig {
    pub fn new(pump_power: f64, delta: f64, probe_amp: Complex64, probe_offset: f64) -> Result<Self> {
        if !(pump_power >= 0.0) {
            return Err(Error::domain(
                "pump_power",
                format!("must be >= 0 (got {pump_power})"),
            ));
        }
        Ok(DriveConfig {
            pump_power,
            delta,
            probe_amp,
            probe_offset,
        })
    }

    /// Probe-to-pump power ratio |s_p|²ħω_L / P. The linearized model assumes
    /// this is small; [`DriveConfig::weak_probe_warning`] flags ratios above
    /// 1e-2.
    pub fn probe_power_ratio(&self, omega_laser: f64) -> f64 {
        if self.pump_power == 0.0 {
            return f64::INFINITY;
        }
        self.probe_amp.norm_sqr() * HBAR * omega_laser / self.pump_power
    }

    /// Returns a human-readable warning when the weak-probe assumption is
    /// strained (both tones nonzero and ratio > 1e-2).
    pub fn weak_probe_warning(&self, omega_laser: f64) -> Option<String> {
        if self.pump_power == 0.0 || self.probe_amp.norm() == 0.0 {
            return None;
        }
        let ratio = self.probe_power_ratio(omega_laser);
        (ratio > 1e-2).then(|| {
            format!(
                "probe power is {ratio:.3e} of the pump power; \
                 the linearized weak-probe model assumes a ratio well below 1e-2"
            )
        })
    }
}

/// Steady-state quantities derived from the pump drive and the dispersion
/// of the cavity frequency with membrane position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedCoupling {
    /// Steady intracavity amplitude α_s (sqrt(photons), real ≥ 0 by phase
    /// convention).
    pub alpha_s: f64,
    /// Effective optomechanical coupling G (rad/s, signed).
    pub g_coupling: f64,
    /// Second-order frequency shift h = ∂²_q ω(q_s) |α_s|² (rad/s).
    pub h_shift: f64,
    /// Shifted mechanical frequency Ω̃_m with Ω̃_m² = Ω_m² + h Ω_m (rad/s).
    pub omega_m_tilde: f64,
    /// Cooperativity C = G² / (2 κ_T γ_m).
    pub cooperativity: f64,
}

/// Steady intracavity amplitude for a pump of power `pump_power` at detuning
/// `delta`: sqrt(2κ₀ P / ħω_L) / sqrt(κ_T² + Δ²).
pub fn steady_amplitude(optics: &CavityOptics, pump_power: f64, delta: f64) -> f64 {
    let photon_flux = 2.0 * optics.kappa0 * pump_power / (HBAR * optics.omega_laser);
    photon_flux.sqrt() / (optics.kappa_t.powi(2) + delta * delta).sqrt()
}

impl DerivedCoupling {
    /// Evaluates the steady state for a membrane dispersion characterized by
    /// its first two axial derivatives ∂ω/∂z₀ (rad s⁻¹ m⁻¹) and ∂²ω/∂z₀²
    /// (rad s⁻¹ m⁻²) at the working point.
    ///
    /// G = −2 (∂ω/∂z₀) Θ sqrt(P κ₀ / (m Ω_m ω_L (κ_T² + Δ²))) and
    /// h = (∂²ω/∂z₀²)(x₀Θ)² α_s².
    pub fn steady_state(
        mechanics: &MechanicalMode,
        optics: &CavityOptics,
        drive: &DriveConfig,
        dispersion_slope: f64,
        dispersion_curvature: f64,
    ) -> Result<Self> {
        let alpha_s = steady_amplitude(optics, drive.pump_power, drive.delta);
        let lorentz = optics.kappa_t.powi(2) + drive.delta * drive.delta;
        let g_coupling = -2.0
            * dispersion_slope
            * mechanics.overlap_theta
            * (drive.pump_power * optics.kappa0
                / (mechanics.mass * mechanics.omega_m * optics.omega_laser * lorentz))
                .sqrt();
        let d2q = dispersion_curvature * (mechanics.x0 * mechanics.overlap_theta).powi(2);
        let h_shift = d2q * alpha_s * alpha_s;
        Self::assemble(mechanics, optics, alpha_s, g_coupling, h_shift)
    }

    /// Builds the coupling from an explicitly given G (and optional h),
    /// as when G is a fitted quantity rather than derived from dispersion.
    pub fn from_coupling(
        mechanics: &MechanicalMode,
        optics: &CavityOptics,
        drive: &DriveConfig,
        g_coupling: f64,
        h_shift: f64,
    ) -> Result<Self> {
        let alpha_s = steady_amplitude(optics, drive.pump_power, drive.delta);
        Self::assemble(mechanics, optics, alpha_s, g_coupling, h_shift)
    }

    /// Builds the coupling from a target cooperativity, |G| = sqrt(2 κ_T γ_m C).
    pub fn from_cooperativity(
        mechanics: &MechanicalMode,
        optics: &CavityOptics,
        drive: &DriveConfig,
        cooperativity: f64,
        h_shift: f64,
    ) -> Result<Self> {
        if !(cooperativity >= 0.0) {
            return Err(Error::domain(
                "cooperativity",
                format!("must be >= 0 (got {cooperativity})"),
            ));
        }
        let g = (2.0 * optics.kappa_t * mechanics.gamma_m * cooperativity).sqrt();
        Self::from_coupling(mechanics, optics, drive, g, h_shift)
    }

    fn assemble(
        mechanics: &MechanicalMode,
        optics: &CavityOptics,
        alpha_s: f64,
        g_coupling: f64,
        h_shift: f64,
    ) -> Result<Self> {
        let omega_sq = mechanics.omega_m * mechanics.omega_m + h_shift * mechanics.omega_m;
        if omega_sq <= 0.0 {
            return Err(Error::domain(
                "h_shift",
                format!(
                    "optical spring shift h = {h_shift:.6e} rad/s drives the \
                     squared mechanical frequency non-positive"
                ),
            ));
        }
        Ok(DerivedCoupling {
            alpha_s,
            g_coupling,
            h_shift,
            omega_m_tilde: omega_sq.sqrt(),
            cooperativity: g_coupling * g_coupling / (2.0 * optics.kappa_t * mechanics.gamma_m),
        })
    }
}

/// Thermal bath occupancy of the mechanical mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalEnvironment {
    /// Bath temperature (K).
    pub temperature: f64,
    /// Mean thermal phonon occupancy, exact Bose factor
    /// 1/(exp(ħΩ_m/k_BT) − 1).
    pub n_th: f64,
}

impl ThermalEnvironment {
    pub fn new(temperature: f64, mechanics: &MechanicalMode) -> Result<Self> {
        ensure_positive("temperature", temperature)?;
        let x = HBAR * mechanics.omega_m / (BOLTZMANN * temperature);
        Ok(ThermalEnvironment {
            temperature,
            n_th: 1.0 / x.exp_m1(),
        })
    }
}

/// C / n_th. Values above 1 mean a quantum state survives storage for the
/// window lifetime; below 1 only classical pulses can be stored.
///
/// Returns `f64::INFINITY` when `n_th` is zero.
pub fn quantum_storage_margin(env: &ThermalEnvironment, coupling: &DerivedCoupling) -> f64 {
    if env.n_th == 0.0 {
        return f64::INFINITY;
    }
    coupling.cooperativity / env.n_th
}

/// The complete parameter bundle consumed by the response solver, the
/// time-domain oracle, and the fitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmitSystem {
    pub mechanics: MechanicalMode,
    pub optics: CavityOptics,
    pub drive: DriveConfig,
    pub coupling: DerivedCoupling,
}

impl OmitSystem {
    pub fn new(
        mechanics: MechanicalMode,
        optics: CavityOptics,
        drive: DriveConfig,
        coupling: DerivedCoupling,
    ) -> Self {
        OmitSystem {
            mechanics,
            optics,
            drive,
            coupling,
        }
    }

    /// Copy of the system evaluated at another sweep point.
    ///
    /// The coupling quantities (G, h, Ω̃_m, C) are held fixed — they play the
    /// role of fitted constants across a sweep — while α_s and every explicit
    /// Δ/Ω dependence of the response follow the new point.
    pub fn at_sweep_point(&self, delta: f64, probe_offset: f64) -> Self {
        let mut out = *self;
        out.drive.delta = delta;
        out.drive.probe_offset = probe_offset;
        out.coupling.alpha_s = steady_amplitude(&self.optics, self.drive.pump_power, delta);
        out
    }
}

fn ensure_positive(field: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(field, format!("must be positive (got {value})")))
    }
}
