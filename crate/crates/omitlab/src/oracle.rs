//! Independent time-domain cross-check of the analytic response.
//!
//! The classical limit of the linearized equations of motion is a
//! four-real-dimensional ODE for the mechanical fluctuation quadratures
//! (q, p) and the cavity field fluctuation a, driven by the probe tone in the
//! frame rotating at the pump:
//!
//! ```text
//! q̇ = Ω_m p
//! ṗ = −(Ω_m + h) q − γ_m p − 2 g Re(a)
//! ȧ = −(κ_T + iΔ) a − i g q + √(2κ₀) s_p e^{−iΩt},     g = −G/√2
//! ```
//!
//! Integrating this with a fixed-step RK4 and demodulating the settled field
//! at ±Ω reproduces the sideband amplitudes of [`crate::response`] with no
//! shared algebra — the central correctness property of the crate. Noise
//! terms are dropped: every observable compared here is deterministic.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::OmitSystem;
use crate::numerics::linear_fit;
use crate::response::SweepMode;

/// Classical phase-space point of the fluctuation dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalState {
    /// Dimensionless position fluctuation.
    pub q: f64,
    /// Dimensionless momentum fluctuation.
    pub p: f64,
    /// Intracavity field fluctuation (sqrt photons).
    pub a: Complex64,
}

impl ClassicalState {
    pub const ZERO: ClassicalState = ClassicalState {
        q: 0.0,
        p: 0.0,
        a: Complex64::new(0.0, 0.0),
    };

    fn norm(&self) -> f64 {
        (self.q * self.q + self.p * self.p + self.a.norm_sqr()).sqrt()
    }
}

/// Integration controls. `None` fields fall back to system-derived defaults:
/// dt = 2π/(200 Ω_m), and a total time of 40/γ_eff settling plus the
/// demodulation window. (The settling default is deliberately generous: at a
/// transparency dip the signal is suppressed by 1+C while the in-band
/// transient only decays at γ_eff/2, so residual targets of 1e-6 need
/// e^{-20}-level settling.)
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSettings {
    /// Fixed RK4 step (s); must satisfy dt ≤ 2π/(50·max(Ω_m, κ_T, |Δ|)).
    pub dt: Option<f64>,
    /// Total integration time (s).
    pub t_end: Option<f64>,
    /// Demodulation window length in probe-beat periods (≥ 20).
    pub window_periods: usize,
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings {
            dt: None,
            t_end: None,
            window_periods: 40,
        }
    }
}

/// Uniformly sampled tail of a simulated trajectory.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Time of the first recorded sample (s).
    pub t0: f64,
    /// Sample spacing (s).
    pub dt_sample: f64,
    pub states: Vec<ClassicalState>,
}

impl Trajectory {
    /// Recorded duration (s).
    pub fn span(&self) -> f64 {
        self.dt_sample * self.states.len().saturating_sub(1) as f64
    }
}

/// Result of one integration.
#[derive(Debug, Clone)]
pub struct IntegrationOutcome {
    pub trajectory: Trajectory,
    /// True when the run hit the hard norm ceiling, grew by more than e³ over
    /// three mechanical periods, or shows net exponential growth.
    pub diverged: bool,
    /// Fitted amplitude growth rate of the state envelope (1/s, signed;
    /// negative = decaying).
    pub envelope_rate: f64,
    /// Scale against which divergence is judged.
    pub drive_scale: f64,
}

/// Demodulated beat of one settled run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemodResult {
    /// 2κ₂ α_s A₋, phase referenced to the probe — directly comparable to
    /// [`crate::response::beat_amplitude`].
    pub beat_complex: Complex64,
    /// Raw e^{−iΩt} field component.
    pub a_minus: Complex64,
    /// Raw e^{+iΩt} field component.
    pub a_plus: Complex64,
    /// Relative rms misfit of the three-function model {cos Ωt, sin Ωt, 1}.
    pub residual: f64,
}

/// One grid point of an oracle sweep.
#[derive(Debug, Clone)]
pub struct OraclePoint {
    pub omega_probe_offset: f64,
    /// `None` when the point diverged.
    pub demod: Option<DemodResult>,
    pub diverged: bool,
    pub envelope_rate: f64,
}

/// Slowest excited decay rate, used to size the default settling time.
fn settling_rate(sys: &OmitSystem) -> f64 {
    let gamma = sys.mechanics.gamma_m;
    if sys.coupling.g_coupling == 0.0 {
        // Mechanics are decoupled and unexcited; only the cavity settles.
        return sys.optics.kappa_t;
    }
    let c = sys.coupling.cooperativity;
    let window = if sys.drive.delta >= 0.0 {
        gamma * (1.0 + c)
    } else {
        (gamma * (1.0 - c).abs()).max(0.02 * gamma)
    };
    // γ_m(1±C) saturates once G approaches κ_T (hybridized modes decay no
    // faster than the cavity allows), so cap the assumed rate there.
    window.min(0.5 * sys.optics.kappa_t)
}

fn default_dt(sys: &OmitSystem) -> f64 {
    std::f64::consts::TAU / (200.0 * sys.mechanics.omega_m)
}

fn beat_period(sys: &OmitSystem) -> f64 {
    let omega = sys.drive.probe_offset.abs();
    if omega > 0.0 {
        std::f64::consts::TAU / omega
    } else {
        std::f64::consts::TAU / sys.mechanics.omega_m
    }
}

/// Fixed-step RK4 integration of the classical fluctuation dynamics from
/// `initial`, recording the trailing demodulation window.
///
/// Divergence is reported in the outcome rather than as an error, so
/// blue-sideband instability studies can inspect the growth rate.
pub fn integrate(
    sys: &OmitSystem,
    settings: &OracleSettings,
    initial: ClassicalState,
) -> Result<IntegrationOutcome> {
    let dt = settings.dt.unwrap_or_else(|| default_dt(sys));
    let fastest = sys
        .mechanics
        .omega_m
        .max(sys.optics.kappa_t)
        .max(sys.drive.delta.abs());
    let dt_max = std::f64::consts::TAU / (50.0 * fastest);
    if !(dt > 0.0) || dt > dt_max {
        return Err(Error::domain(
            "dt",
            format!("step {dt:.3e} s outside (0, {dt_max:.3e}] s"),
        ));
    }
    if settings.window_periods < 20 {
        return Err(Error::domain(
            "window_periods",
            "demodulation window must cover at least 20 beat periods",
        ));
    }
    let window = settings.window_periods as f64 * beat_period(sys);
    let t_end = settings
        .t_end
        .unwrap_or_else(|| 40.0 / settling_rate(sys) + window);
    if t_end <= window {
        return Err(Error::domain(
            "t_end",
            format!("total time {t_end:.3e} s leaves no settling before the {window:.3e} s window"),
        ));
    }

    let n_steps = (t_end / dt).ceil() as usize;
    let record_from = n_steps - ((window / dt).round() as usize).min(n_steps);
    let stride = ((beat_period(sys) / (64.0 * dt)).floor() as usize).max(1);

    let g = -sys.coupling.g_coupling / std::f64::consts::SQRT_2;
    let spring = sys.mechanics.omega_m + sys.coupling.h_shift;
    let gamma = sys.mechanics.gamma_m;
    let omega_m = sys.mechanics.omega_m;
    let cavity_pole = Complex64::new(-sys.optics.kappa_t, -sys.drive.delta);
    let drive_amp = (2.0 * sys.optics.kappa0).sqrt() * sys.drive.probe_amp;
    let omega = sys.drive.probe_offset;

    let deriv = |t: f64, s: &ClassicalState| -> ClassicalState {
        let (sin, cos) = (-omega * t).sin_cos();
        ClassicalState {
            q: omega_m * s.p,
            p: -spring * s.q - gamma * s.p - 2.0 * g * s.a.re,
            a: cavity_pole * s.a - Complex64::i() * g * s.q + drive_amp * Complex64::new(cos, sin),
        }
    };
    let add = |s: &ClassicalState, k: &ClassicalState, w: f64| ClassicalState {
        q: s.q + w * k.q,
        p: s.p + w * k.p,
        a: s.a + w * k.a,
    };

    let drive_scale = initial
        .norm()
        .max(drive_amp.norm() / sys.optics.kappa_t)
        .max(f64::MIN_POSITIVE);
    let ceiling = 1e12 * drive_scale;
    let mech_period = std::f64::consts::TAU / omega_m;

    let mut state = initial;
    let mut samples = Vec::new();
    let mut t0 = 0.0;
    let mut peaks: Vec<(f64, f64)> = Vec::new();
    let mut bucket = 0usize;
    let mut bucket_peak = state.norm();
    let mut diverged = false;

    for idx in 0..n_steps {
        let t = idx as f64 * dt;
        if idx >= record_from && (idx - record_from).is_multiple_of(stride) {
            if samples.is_empty() {
                t0 = t;
            }
            samples.push(state);
        }

        let k1 = deriv(t, &state);
        let k2 = deriv(t + 0.5 * dt, &add(&state, &k1, 0.5 * dt));
        let k3 = deriv(t + 0.5 * dt, &add(&state, &k2, 0.5 * dt));
        let k4 = deriv(t + dt, &add(&state, &k3, dt));
        state = ClassicalState {
            q: state.q + dt / 6.0 * (k1.q + 2.0 * k2.q + 2.0 * k3.q + k4.q),
            p: state.p + dt / 6.0 * (k1.p + 2.0 * k2.p + 2.0 * k3.p + k4.p),
            a: state.a + dt / 6.0 * (k1.a + 2.0 * k2.a + 2.0 * k3.a + k4.a),
        };

        let norm = state.norm();
        if !norm.is_finite() || norm > ceiling {
            diverged = true;
            break;
        }
        let this_bucket = ((t + dt) / mech_period) as usize;
        if this_bucket != bucket {
            peaks.push(((bucket as f64 + 0.5) * mech_period, bucket_peak));
            bucket = this_bucket;
            bucket_peak = norm;
            // e³ growth across three consecutive mechanical periods; the
            // first bucket is skipped (turn-on ramp from rest).
            let n = peaks.len();
            if n >= 5 && peaks[n - 4].1 > 0.0 && peaks[n - 1].1 > peaks[n - 4].1 * 3f64.exp() {
                diverged = true;
                break;
            }
        } else {
            bucket_peak = bucket_peak.max(norm);
        }
    }

    // Envelope rate from the second half of the per-period peaks.
    let half = peaks.len() / 2;
    let tail: Vec<(f64, f64)> = peaks[half..]
        .iter()
        .filter(|(_, v)| *v > 0.0)
        .cloned()
        .collect();
    let envelope_rate = if tail.len() >= 4 {
        let ts: Vec<f64> = tail.iter().map(|(t, _)| *t).collect();
        let ys: Vec<f64> = tail.iter().map(|(_, v)| v.ln()).collect();
        linear_fit(&ts, &ys).1
    } else {
        0.0
    };
    if !diverged && envelope_rate > 0.0 {
        let fitted_span = tail.last().map(|(t, _)| *t).unwrap_or(0.0)
            - tail.first().map(|(t, _)| *t).unwrap_or(0.0);
        if envelope_rate * fitted_span > 3.0 {
            diverged = true;
        }
    }

    Ok(IntegrationOutcome {
        trajectory: Trajectory {
            t0,
            dt_sample: stride as f64 * dt,
            states: samples,
        },
        diverged,
        envelope_rate,
        drive_scale,
    })
}

/// Least-squares projection of a complex sample train onto
/// {cos ωt, sin ωt, 1}, separating the e^{∓iωt} components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToneProjection {
    pub a_minus: Complex64,
    pub a_plus: Complex64,
    pub dc: Complex64,
    /// rms misfit relative to the rms of the mean-free signal.
    pub residual: f64,
}

/// Projects uniformly sampled complex data (first sample at `t0`, spacing
/// `dt`) onto the probe-beat basis at angular frequency `omega`.
#[allow(clippy::needless_range_loop)]
pub fn project_tone(t0: f64, dt: f64, samples: &[Complex64], omega: f64) -> ToneProjection {
    assert!(samples.len() >= 3, "projection needs at least 3 samples");
    // Shared Gram matrix of {cos, sin, 1}.
    let mut m = [[0.0f64; 3]; 3];
    let mut rhs_re = [0.0f64; 3];
    let mut rhs_im = [0.0f64; 3];
    for (k, s) in samples.iter().enumerate() {
        let t = t0 + k as f64 * dt;
        let (sin, cos) = (omega * t).sin_cos();
        let basis = [cos, sin, 1.0];
        for i in 0..3 {
            for j in i..3 {
                m[i][j] += basis[i] * basis[j];
            }
            rhs_re[i] += basis[i] * s.re;
            rhs_im[i] += basis[i] * s.im;
        }
    }
    for i in 0..3 {
        for j in 0..i {
            m[i][j] = m[j][i];
        }
    }
    let coeff_re = solve3(m, rhs_re);
    let coeff_im = solve3(m, rhs_im);

    let (a_c, a_s) = (coeff_re[0], coeff_re[1]);
    let (b_c, b_s) = (coeff_im[0], coeff_im[1]);
    let a_minus = Complex64::new(0.5 * (a_c - b_s), 0.5 * (a_s + b_c));
    let a_plus = Complex64::new(0.5 * (a_c + b_s), 0.5 * (b_c - a_s));
    let dc = Complex64::new(coeff_re[2], coeff_im[2]);

    let mean = samples.iter().sum::<Complex64>() / samples.len() as f64;
    let mut misfit = 0.0;
    let mut power = 0.0;
    for (k, s) in samples.iter().enumerate() {
        let t = t0 + k as f64 * dt;
        let (sin, cos) = (omega * t).sin_cos();
        let fit = Complex64::new(
            coeff_re[0] * cos + coeff_re[1] * sin + coeff_re[2],
            coeff_im[0] * cos + coeff_im[1] * sin + coeff_im[2],
        );
        misfit += (s - fit).norm_sqr();
        power += (s - mean).norm_sqr();
    }
    ToneProjection {
        a_minus,
        a_plus,
        dc,
        residual: if power > 0.0 {
            (misfit / power).sqrt()
        } else {
            0.0
        },
    }
}

fn solve3(m: [[f64; 3]; 3], b: [f64; 3]) -> [f64; 3] {
    let det = |a: [[f64; 3]; 3]| -> f64 {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let d = det(m);
    let mut out = [0.0; 3];
    for (col, slot) in out.iter_mut().enumerate() {
        let mut mm = m;
        for row in 0..3 {
            mm[row][col] = b[row];
        }
        *slot = det(mm) / d;
    }
    out
}

/// Demodulates the trailing `window` seconds of a trajectory at `omega` and
/// scales the extracted A₋ to the transmitted-beat convention
/// (2κ₂ α_s A₋, phase referenced to the probe).
pub fn demodulate(
    sys: &OmitSystem,
    trajectory: &Trajectory,
    omega: f64,
    window: f64,
) -> Result<DemodResult> {
    let period = if omega != 0.0 {
        std::f64::consts::TAU / omega.abs()
    } else {
        return Err(Error::domain("omega", "demodulation frequency is zero"));
    };
    if window < 20.0 * period {
        return Err(Error::domain(
            "window",
            format!(
                "window {window:.3e} s covers fewer than 20 beat periods ({:.3e} s)",
                20.0 * period
            ),
        ));
    }
    if window > trajectory.span() * (1.0 + 1e-9) {
        return Err(Error::domain(
            "window",
            "window exceeds the recorded trajectory span",
        ));
    }
    let take = ((window / trajectory.dt_sample).round() as usize + 1).min(trajectory.states.len());
    let skip = trajectory.states.len() - take;
    let samples: Vec<Complex64> = trajectory.states[skip..].iter().map(|s| s.a).collect();
    let t0 = trajectory.t0 + skip as f64 * trajectory.dt_sample;
    let tone = project_tone(t0, trajectory.dt_sample, &samples, omega);

    let scale = 2.0 * sys.optics.kappa2 * sys.coupling.alpha_s;
    let probe = sys.drive.probe_amp;
    let beat = if probe.norm() > 0.0 {
        scale * tone.a_minus * probe.conj() / probe.norm()
    } else {
        Complex64::new(0.0, 0.0)
    };
    Ok(DemodResult {
        beat_complex: beat,
        a_minus: tone.a_minus,
        a_plus: tone.a_plus,
        residual: tone.residual,
    })
}

/// Integrate-and-demodulate over a probe-offset grid with the same grid
/// semantics as [`crate::response::spectrum_sweep`]. Divergent points carry
/// a flag instead of a demodulation result.
pub fn oracle_sweep(
    sys: &OmitSystem,
    grid: &[f64],
    mode: SweepMode,
    settings: &OracleSettings,
) -> Result<Vec<OraclePoint>> {
    if grid.is_empty() {
        return Err(Error::domain("grid", "sweep grid is empty"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::domain("grid", "sweep grid must be strictly increasing"));
    }
    grid.par_iter()
        .map(|&omega| {
            let local = match mode {
                SweepMode::Locked => sys.at_sweep_point(omega, omega),
                SweepMode::FixedDelta => sys.at_sweep_point(sys.drive.delta, omega),
            };
            let outcome = integrate(&local, settings, ClassicalState::ZERO)?;
            if outcome.diverged {
                return Ok(OraclePoint {
                    omega_probe_offset: omega,
                    demod: None,
                    diverged: true,
                    envelope_rate: outcome.envelope_rate,
                });
            }
            let window = outcome.trajectory.span();
            let demod = demodulate(&local, &outcome.trajectory, omega, window)?;
            Ok(OraclePoint {
                omega_probe_offset: omega,
                demod: Some(demod),
                diverged: false,
                envelope_rate: outcome.envelope_rate,
            })
        })
        .collect()
}
