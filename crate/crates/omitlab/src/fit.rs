//! Nonlinear least-squares estimation of window parameters from beat spectra.
//!
//! A measured (or synthetic) locked-sweep spectrum — |A_beat| and optionally
//! its phase on a detuning grid — is fitted against the analytic response of
//! [`crate::response`] with up to five parameters free: the coupling
//! magnitude |G|, the total cavity rate κ_T (the κ₀:κ₂ split is preserved),
//! the mechanical damping γ_m, an overall amplitude scale, and a phase
//! offset. The sign of G is unidentifiable from beat data (it enters
//! squared), so results report |G|.
//!
//! The minimizer is a damped least-squares (Levenberg–Marquardt) iteration
//! with centered finite-difference gradients (1e-6 relative step per
//! parameter), terminating when the relative objective change drops below
//! 1e-10 or after the iteration budget. Monte-Carlo replicas over noisy data
//! run concurrently with independent counter-seeded generators.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{CavityOptics, DerivedCoupling, MechanicalMode, OmitSystem};
use crate::response::beat_amplitude;

/// Number of scalar fit parameters.
pub const PARAM_COUNT: usize = 5;

/// Parameter names, in the packing order used by masks.
pub const PARAM_NAMES: [&str; PARAM_COUNT] = ["g", "kappa_t", "gamma_m", "scale", "phase_offset"];

/// Fit parameter vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitParams {
    /// Coupling magnitude |G| (rad/s).
    pub g: f64,
    /// Total cavity decay rate κ_T (rad/s).
    pub kappa_t: f64,
    /// Mechanical damping γ_m (rad/s).
    pub gamma_m: f64,
    /// Amplitude scale applied to the model modulus.
    pub scale: f64,
    /// Phase offset added to the model phase (rad).
    pub phase_offset: f64,
}

impl FitParams {
    fn to_array(self) -> [f64; PARAM_COUNT] {
        [
            self.g,
            self.kappa_t,
            self.gamma_m,
            self.scale,
            self.phase_offset,
        ]
    }

    fn from_array(x: [f64; PARAM_COUNT]) -> Self {
        FitParams {
            g: x[0].abs(),
            kappa_t: x[1],
            gamma_m: x[2],
            scale: x[3],
            phase_offset: x[4],
        }
    }
}

/// Which parameters are free, in [`PARAM_NAMES`] order.
pub type ParamMask = [bool; PARAM_COUNT];

/// A measured beat spectrum on a strictly increasing locked-sweep grid
/// (Ω = Δ at every point).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumData {
    /// Detuning grid (rad/s).
    pub detuning: Vec<f64>,
    /// Measured |A_beat| (arbitrary units).
    pub modulus: Vec<f64>,
    /// Measured beat phase (rad), if recorded.
    pub phase: Option<Vec<f64>>,
    /// Per-point modulus uncertainty (same units as `modulus`).
    pub sigma: Option<Vec<f64>>,
}

impl SpectrumData {
    pub fn validate(&self) -> Result<()> {
        if self.detuning.len() < 3 {
            return Err(Error::domain("detuning", "spectrum needs at least 3 points"));
        }
        if self.detuning.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("detuning", "grid must be strictly increasing"));
        }
        if self.modulus.len() != self.detuning.len() {
            return Err(Error::domain("modulus", "length mismatch with grid"));
        }
        if let Some(p) = &self.phase {
            if p.len() != self.detuning.len() {
                return Err(Error::domain("phase", "length mismatch with grid"));
            }
        }
        if let Some(s) = &self.sigma {
            if s.len() != self.detuning.len() {
                return Err(Error::domain("sigma", "length mismatch with grid"));
            }
            if s.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::domain("sigma", "uncertainties must be positive"));
            }
        }
        Ok(())
    }
}

/// Fit outcome with local-quadratic-model uncertainties.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: FitParams,
    /// 1-σ uncertainties from the curvature of the objective at the optimum
    /// (the local quadratic model); `None` when the curvature is singular.
    pub sigmas: Option<FitParams>,
    pub reduced_chi_square: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Objective value after each accepted step (monotonically decreasing).
    pub objective_trace: Vec<f64>,
}

/// Options for [`fit_spectrum`] and [`fit_joint`].
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Fit phase jointly with modulus when the data carry phase.
    pub use_phase: bool,
    /// Number of seed variants to try (1..=5). The first run starts from the
    /// given seed; later runs rescale the nonlinear free parameters by the
    /// fixed factors of [`RESTART_FACTORS`], and the lowest final objective
    /// wins. This is the whole multi-start story — no global optimizer.
    pub restarts: usize,
}

/// Deterministic seed rescalings used by the restart heuristic.
pub const RESTART_FACTORS: [f64; 5] = [1.0, 0.6, 1.8, 0.3, 3.0];

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 500,
            use_phase: false,
            restarts: 1,
        }
    }
}

/// Rebuilds the system with fit parameters applied: κ₀ and κ₂ are rescaled
/// together (preserving their ratio), γ_m replaces the damping, and |G|
/// replaces the coupling. The static spring shift h is kept from the base.
fn system_with(base: &OmitSystem, g: f64, kappa_t: f64, gamma_m: f64) -> Result<OmitSystem> {
    let mechanics = MechanicalMode::from_damping(
        base.mechanics.omega_m,
        gamma_m,
        base.mechanics.mass,
        base.mechanics.overlap_theta,
    )?;
    let ratio = kappa_t / base.optics.kappa_t;
    let wavelength =
        2.0 * std::f64::consts::PI * crate::constants::SPEED_OF_LIGHT / base.optics.omega_laser;
    let optics = CavityOptics::new(
        base.optics.kappa0 * ratio,
        base.optics.kappa2 * ratio,
        wavelength,
        base.optics.cavity_length,
    )?;
    let coupling = DerivedCoupling::from_coupling(
        &mechanics,
        &optics,
        &base.drive,
        g.abs(),
        base.coupling.h_shift,
    )?;
    Ok(OmitSystem::new(mechanics, optics, base.drive, coupling))
}

/// Model beat (modulus and phase) over the data grid for one parameter set.
fn model_beat(base: &OmitSystem, data: &SpectrumData, p: &FitParams) -> Result<Vec<(f64, f64)>> {
    let sys = system_with(base, p.g, p.kappa_t, p.gamma_m)?;
    data.detuning
        .iter()
        .map(|&delta| {
            let beat = beat_amplitude(&sys.at_sweep_point(delta, delta))?;
            Ok((p.scale * beat.norm(), beat.arg() + p.phase_offset))
        })
        .collect()
}

fn wrap_pi(x: f64) -> f64 {
    x - (x / std::f64::consts::TAU).round() * std::f64::consts::TAU
}

/// Weighted residual vector (modulus residuals, then phase residuals when
/// fitted). Unit weights when the data carry no uncertainties.
fn residuals(
    base: &OmitSystem,
    data: &SpectrumData,
    use_phase: bool,
    p: &FitParams,
) -> Result<Vec<f64>> {
    let model = model_beat(base, data, p)?;
    let mut out = Vec::with_capacity(2 * model.len());
    for (i, (modulus, _)) in model.iter().enumerate() {
        let w = data.sigma.as_ref().map_or(1.0, |s| 1.0 / s[i]);
        out.push((modulus - data.modulus[i]) * w);
    }
    if use_phase {
        if let Some(phases) = &data.phase {
            for (i, (_, phase)) in model.iter().enumerate() {
                out.push(wrap_pi(phase - phases[i]));
            }
        }
    }
    Ok(out)
}

/// One-shot linear refinement of the amplitude scale: the model modulus is
/// proportional to `scale`, so the weighted least-squares optimum is closed
/// form. Seed spectra arrive in arbitrary units and the damped iteration
/// needs a starting magnitude of the right order.
fn refine_scale(base: &OmitSystem, data: &SpectrumData, p: &mut FitParams) -> Result<()> {
    let unit = FitParams { scale: 1.0, ..*p };
    let model = model_beat(base, data, &unit)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, (m, _)) in model.iter().enumerate() {
        let w = data.sigma.as_ref().map_or(1.0, |s| 1.0 / (s[i] * s[i]));
        num += w * m * data.modulus[i];
        den += w * m * m;
    }
    if den > 0.0 && num > 0.0 {
        p.scale = num / den;
    }
    Ok(())
}

/// Levenberg–Marquardt over a generic residual function.
struct LmOutcome {
    x: Vec<f64>,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
    /// JᵀJ at the optimum (for the covariance estimate).
    normal_matrix: Vec<Vec<f64>>,
    residual_count: usize,
    cost: f64,
}

#[allow(clippy::needless_range_loop)]
fn lm_minimize<F>(f: F, x0: &[f64], max_iterations: usize) -> Result<LmOutcome>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let p = x0.len();
    let cost_of = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
    let mut x = x0.to_vec();
    let mut r = f(&x)?;
    let mut cost = cost_of(&r);
    let mut trace = vec![cost];
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let mut jtj_last = vec![vec![0.0; p]; p];

    for _ in 0..max_iterations {
        iterations += 1;
        // Centered finite-difference Jacobian, 1e-6 relative step.
        let n = r.len();
        let mut jac = vec![vec![0.0; p]; n];
        for j in 0..p {
            let step = 1e-6 * x[j].abs().max(x0[j].abs()).max(1e-12);
            let mut xp = x.clone();
            xp[j] += step;
            let mut xm = x.clone();
            xm[j] -= step;
            let rp = f(&xp)?;
            let rm = f(&xm)?;
            for i in 0..n {
                jac[i][j] = (rp[i] - rm[i]) / (2.0 * step);
            }
        }
        let mut jtj = vec![vec![0.0; p]; p];
        let mut jtr = vec![0.0; p];
        for i in 0..n {
            for a in 0..p {
                jtr[a] += jac[i][a] * r[i];
                for b in a..p {
                    jtj[a][b] += jac[i][a] * jac[i][b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                jtj[a][b] = jtj[b][a];
            }
        }
        jtj_last = jtj.clone();

        // Damped step, retried with increasing λ until the cost drops.
        let mut accepted = false;
        for _ in 0..16 {
            let mut lhs = jtj.clone();
            for a in 0..p {
                lhs[a][a] += lambda * jtj[a][a].max(1e-300);
            }
            let rhs: Vec<f64> = jtr.iter().map(|v| -v).collect();
            let Some(step) = solve_dense(lhs, rhs) else {
                lambda *= 8.0;
                continue;
            };
            let x_try: Vec<f64> = x.iter().zip(&step).map(|(a, d)| a + d).collect();
            let r_try = f(&x_try)?;
            let cost_try = cost_of(&r_try);
            if cost_try < cost && cost_try.is_finite() {
                let change = (cost - cost_try) / cost.max(f64::MIN_POSITIVE);
                x = x_try;
                r = r_try;
                cost = cost_try;
                trace.push(cost);
                lambda = (lambda / 3.0).max(1e-14);
                accepted = true;
                if change < 1e-10 {
                    converged = true;
                }
                break;
            }
            lambda *= 8.0;
        }
        if !accepted {
            // No descent direction left at any damping: the objective is at
            // a numerical stationary point.
            converged = true;
        }
        if converged {
            break;
        }
    }

    Ok(LmOutcome {
        x,
        iterations,
        converged,
        trace,
        normal_matrix: jtj_last,
        residual_count: r.len(),
        cost,
    })
}

/// Gaussian elimination with partial pivoting; `None` on a singular system.
#[allow(clippy::needless_range_loop)]
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap()
        })?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in col + 1..n {
            acc -= a[col][k] * x[k];
        }
        x[col] = acc / a[col][col];
    }
    Some(x)
}

fn invert(m: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = m.len();
    let mut out = vec![vec![0.0; n]; n];
    for col in 0..n {
        let mut e = vec![0.0; n];
        e[col] = 1.0;
        let x = solve_dense(m.to_vec(), e)?;
        for row in 0..n {
            out[row][col] = x[row];
        }
    }
    Some(out)
}

/// Fits a beat spectrum against the analytic response.
///
/// `base` supplies everything the mask holds fixed (detuning protocol, mirror
/// split, pump power, spring shift). `initial` seeds all five parameters;
/// masked-out entries stay at their seed values. When `scale` is free it is
/// first refined linearly, which makes unit seeds workable for data in
/// arbitrary units.
pub fn fit_spectrum(
    base: &OmitSystem,
    data: &SpectrumData,
    initial: FitParams,
    mask: ParamMask,
    options: &FitOptions,
) -> Result<FitResult> {
    data.validate()?;
    let n_free = mask.iter().filter(|&&m| m).count();
    if n_free == 0 {
        return Err(Error::domain("mask", "no free parameters"));
    }
    if data.detuning.len() < 3 * n_free {
        return Err(Error::domain(
            "detuning",
            format!(
                "{} points cannot constrain {n_free} free parameters (need 3x)",
                data.detuning.len()
            ),
        ));
    }
    let use_phase = options.use_phase && data.phase.is_some();

    let mut seed = initial;
    if mask[3] {
        refine_scale(base, data, &mut seed)?;
    }
    let full0 = seed.to_array();
    let free_idx: Vec<usize> = (0..PARAM_COUNT).filter(|&i| mask[i]).collect();
    let x0: Vec<f64> = free_idx.iter().map(|&i| full0[i]).collect();

    let expand = |x: &[f64]| {
        let mut full = full0;
        for (slot, &i) in x.iter().zip(&free_idx) {
            full[i] = *slot;
        }
        FitParams::from_array(full)
    };
    // Restart heuristic: the nonlinear free parameters (g, κ_T, γ_m) get
    // deterministically rescaled seeds; the best final objective wins.
    let restarts = options.restarts.clamp(1, RESTART_FACTORS.len());
    let mut outcome: Option<LmOutcome> = None;
    let mut total_iterations = 0;
    for factor in RESTART_FACTORS.iter().take(restarts) {
        let start: Vec<f64> = x0
            .iter()
            .zip(&free_idx)
            .map(|(v, &i)| if i < 3 { v * factor } else { *v })
            .collect();
        let candidate = lm_minimize(
            |x| residuals(base, data, use_phase, &expand(x)),
            &start,
            options.max_iterations,
        )?;
        total_iterations += candidate.iterations;
        if outcome.as_ref().is_none_or(|best| candidate.cost < best.cost) {
            outcome = Some(candidate);
        }
    }
    let mut outcome = outcome.expect("at least one restart");
    outcome.iterations = total_iterations;

    let params = expand(&outcome.x);
    let dof = outcome.residual_count.saturating_sub(n_free).max(1);
    let reduced_chi_square = outcome.cost / dof as f64;

    let sigmas = invert(&outcome.normal_matrix).map(|cov| {
        let mut full = [0.0; PARAM_COUNT];
        for (slot, &i) in (0..free_idx.len()).zip(&free_idx) {
            full[i] = (cov[slot][slot].max(0.0) * reduced_chi_square).sqrt();
        }
        FitParams {
            g: full[0],
            kappa_t: full[1],
            gamma_m: full[2],
            scale: full[3],
            phase_offset: full[4],
        }
    });

    Ok(FitResult {
        params,
        sigmas,
        reduced_chi_square,
        converged: outcome.converged,
        iterations: outcome.iterations,
        objective_trace: outcome.trace,
    })
}

/// Joint fit of several spectra sharing (κ_T, γ_m) with one coupling and one
/// amplitude scale per dataset.
#[derive(Debug, Clone)]
pub struct JointFitResult {
    pub kappa_t: f64,
    pub gamma_m: f64,
    /// |G| per dataset.
    pub couplings: Vec<f64>,
    pub scales: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub reduced_chi_square: f64,
}

/// Fits `datasets` jointly: shared free (κ_T, γ_m), per-dataset free
/// (|G|, scale). Amplitude-only.
pub fn fit_joint(
    base: &OmitSystem,
    datasets: &[SpectrumData],
    initial: FitParams,
    initial_couplings: &[f64],
    options: &FitOptions,
) -> Result<JointFitResult> {
    if datasets.is_empty() {
        return Err(Error::domain("datasets", "joint fit needs at least one dataset"));
    }
    if initial_couplings.len() != datasets.len() {
        return Err(Error::domain(
            "initial_couplings",
            "one seed coupling per dataset required",
        ));
    }
    let total_points: usize = datasets.iter().map(|d| d.detuning.len()).sum();
    let n_free = 2 + 2 * datasets.len();
    if total_points < 3 * n_free {
        return Err(Error::domain(
            "datasets",
            format!("{total_points} points cannot constrain {n_free} free parameters"),
        ));
    }

    let mut x0 = vec![initial.kappa_t, initial.gamma_m];
    for (d, &g) in datasets.iter().zip(initial_couplings) {
        let mut p = FitParams {
            g,
            scale: 1.0,
            ..initial
        };
        refine_scale(base, d, &mut p)?;
        x0.push(g);
        x0.push(p.scale);
        d.validate()?;
    }

    let residual_fn = |x: &[f64]| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(total_points);
        for (k, d) in datasets.iter().enumerate() {
            let p = FitParams {
                g: x[2 + 2 * k].abs(),
                kappa_t: x[0],
                gamma_m: x[1],
                scale: x[2 + 2 * k + 1],
                phase_offset: 0.0,
            };
            out.extend(residuals(base, d, false, &p)?);
        }
        Ok(out)
    };
    let outcome = lm_minimize(residual_fn, &x0, options.max_iterations)?;
    let dof = outcome.residual_count.saturating_sub(n_free).max(1);
    Ok(JointFitResult {
        kappa_t: outcome.x[0],
        gamma_m: outcome.x[1],
        couplings: (0..datasets.len())
            .map(|k| outcome.x[2 + 2 * k].abs())
            .collect(),
        scales: (0..datasets.len()).map(|k| outcome.x[2 + 2 * k + 1]).collect(),
        converged: outcome.converged,
        iterations: outcome.iterations,
        reduced_chi_square: outcome.cost / dof as f64,
    })
}

/// Parameter seeds read off a spectrum: the effective linewidth from the
/// window width, κ_T from the curvature of the (window-subtracted) baseline,
/// and |G| = sqrt((FWHM/γ_m − 1)·2κ_Tγ_m) on the transparency branch or
/// sqrt((1 − FWHM/γ_m)·2κ_Tγ_m) on the amplification branch. γ_m itself is
/// not identifiable from a single window and must be supplied.
pub fn initial_guess(data: &SpectrumData, gamma_m_hint: f64) -> Result<FitParams> {
    data.validate()?;
    if !(gamma_m_hint > 0.0) {
        return Err(Error::domain("gamma_m_hint", "must be positive"));
    }
    let n = data.detuning.len();
    let edge = (n / 5).max(2);
    let baseline_idx: Vec<usize> = (0..edge).chain(n - edge..n).collect();
    let mut edge_values: Vec<f64> = baseline_idx.iter().map(|&i| data.modulus[i]).collect();
    edge_values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let baseline = edge_values[edge_values.len() / 2];

    // Noise floor: supplied uncertainties, or adjacent differences on the
    // baseline region.
    let noise = if let Some(s) = &data.sigma {
        let mut v = s.clone();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    } else {
        let mut diffs: Vec<f64> = baseline_idx
            .windows(2)
            .filter(|w| w[1] == w[0] + 1)
            .map(|w| (data.modulus[w[1]] - data.modulus[w[0]]).abs())
            .collect();
        diffs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        diffs.get(diffs.len() / 2).copied().unwrap_or(0.0) * std::f64::consts::FRAC_1_SQRT_2
    };

    let (imin, min) = data
        .modulus
        .iter()
        .cloned()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap();
    let (imax, max) = data
        .modulus
        .iter()
        .cloned()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap();
    let dip_excursion = baseline - min;
    let peak_excursion = max - baseline;
    let is_dip = dip_excursion >= peak_excursion;
    let (iext, excursion) = if is_dip {
        (imin, dip_excursion)
    } else {
        (imax, peak_excursion)
    };
    if excursion <= 3.0 * noise {
        return Err(Error::Seeding(format!(
            "no extremum beyond 3σ of the baseline (excursion {excursion:.3e}, noise {noise:.3e})"
        )));
    }

    // Window width on |y|², halfway between extremum and baseline.
    let ext_sq = data.modulus[iext] * data.modulus[iext];
    let base_sq = baseline * baseline;
    let half = 0.5 * (ext_sq + base_sq);
    let crossed = |v: f64| {
        if is_dip {
            v * v > half
        } else {
            v * v < half
        }
    };
    let cross_at = |i: usize, j: usize| -> f64 {
        let (v0, v1) = (
            data.modulus[i] * data.modulus[i],
            data.modulus[j] * data.modulus[j],
        );
        data.detuning[i] + (half - v0) * (data.detuning[j] - data.detuning[i]) / (v1 - v0)
    };
    let mut left = None;
    for i in (0..iext).rev() {
        if crossed(data.modulus[i]) {
            left = Some(cross_at(i, i + 1));
            break;
        }
    }
    let mut right = None;
    for i in iext + 1..n {
        if crossed(data.modulus[i]) {
            right = Some(cross_at(i - 1, i));
            break;
        }
    }
    let (Some(l), Some(r)) = (left, right) else {
        return Err(Error::Seeding(
            "window half-crossings not bracketed by the grid".into(),
        ));
    };
    let fwhm = r - l;

    // κ_T from the curvature of ln|baseline| after subtracting the window's
    // two-Lorentzian profile: d²(ln b)/dΔ² = (Δ² − κ²)/(κ² + Δ²)² inverts in
    // closed form. The inversion is ill-conditioned for κ ≪ Δ, so a failed
    // or absurd root falls back to the grid span as an order-of-magnitude
    // seed.
    let center = data.detuning[iext];
    let depth = data.modulus[iext] / baseline;
    let window_ln = |delta: f64| -> f64 {
        let d2 = 4.0 * (delta - center) * (delta - center);
        let num = d2 + (depth * fwhm) * (depth * fwhm);
        let den = d2 + fwhm * fwhm;
        0.5 * (num / den).ln()
    };
    let xs: Vec<f64> = baseline_idx.iter().map(|&i| data.detuning[i]).collect();
    let ys: Vec<f64> = baseline_idx
        .iter()
        .map(|&i| data.modulus[i].max(f64::MIN_POSITIVE).ln() - window_ln(data.detuning[i]))
        .collect();
    let span = data.detuning[n - 1] - data.detuning[0];
    let kappa_t = quadratic_curvature(&xs, &ys)
        .and_then(|c2| {
            let delta_sq = center * center;
            let x = c2 * delta_sq;
            let disc = 1.0 + 8.0 * x;
            if disc <= 0.0 || c2 == 0.0 {
                return None;
            }
            let u = (-(2.0 * x + 1.0) + disc.sqrt()) / (2.0 * c2);
            (u > 0.0).then(|| u.sqrt())
        })
        .unwrap_or(span);

    let c_seed = if is_dip {
        (fwhm / gamma_m_hint - 1.0).max(0.0)
    } else {
        (1.0 - fwhm / gamma_m_hint).max(0.0)
    };
    Ok(FitParams {
        g: (c_seed * 2.0 * kappa_t * gamma_m_hint).sqrt(),
        kappa_t,
        gamma_m: gamma_m_hint,
        scale: 1.0,
        phase_offset: 0.0,
    })
}

/// Least-squares quadratic coefficient; returns d²y/dx² = 2a₂.
fn quadratic_curvature(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 3 {
        return None;
    }
    let x0 = xs.iter().sum::<f64>() / n as f64;
    let mut m = vec![vec![0.0; 3]; 3];
    let mut b = vec![0.0; 3];
    for (&x, &y) in xs.iter().zip(ys) {
        let t = x - x0;
        let basis = [1.0, t, t * t];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += basis[i] * basis[j];
            }
            b[i] += basis[i] * y;
        }
    }
    solve_dense(m, b).map(|c| 2.0 * c[2])
}

/// Synthesizes the model spectrum for a parameter set (modulus and phase on
/// the grid); the building block for synthetic-data studies and the CLI
/// round-trip tests.
pub fn synthesize(
    base: &OmitSystem,
    grid: &[f64],
    p: &FitParams,
) -> Result<SpectrumData> {
    let data = SpectrumData {
        detuning: grid.to_vec(),
        modulus: vec![0.0; grid.len()],
        phase: None,
        sigma: None,
    };
    let model = model_beat(base, &data, p)?;
    Ok(SpectrumData {
        detuning: grid.to_vec(),
        modulus: model.iter().map(|(m, _)| *m).collect(),
        phase: Some(model.iter().map(|(_, ph)| *ph).collect()),
        sigma: None,
    })
}

/// Monte-Carlo recovery study: replicas of `data` with multiplicative
/// Gaussian noise of fractional level `noise`, fitted concurrently with
/// counter-seeded reproducible generators. Returns the fitted |G| per
/// replica.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_g_recovery(
    base: &OmitSystem,
    clean: &SpectrumData,
    initial: FitParams,
    mask: ParamMask,
    options: &FitOptions,
    noise: f64,
    replicas: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    use rand::{Rng, SeedableRng};
    (0..replicas)
        .into_par_iter()
        .map(|k| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
            let mut noisy = clean.clone();
            for v in &mut noisy.modulus {
                // Box-Muller keeps the dependency surface to `rand`'s
                // uniform source.
                let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
                let u2: f64 = rng.gen();
                let gauss: f64 =
                    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                *v *= 1.0 + noise * gauss;
            }
            noisy.phase = None;
            Ok(fit_spectrum(base, &noisy, initial, mask, options)?.params.g)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DriveConfig, OmitSystem};
    use num_complex::Complex64;
    use std::f64::consts::PI;

    const OMEGA_M: f64 = 2.0 * PI * 355.6e3;
    const KAPPA_T: f64 = 8.5e4;

    fn base_system(q: f64) -> OmitSystem {
        let mechanics = MechanicalMode::new(OMEGA_M, q, 45e-12, 1.0).unwrap();
        let optics = CavityOptics::new(KAPPA_T / 2.0, KAPPA_T / 2.0, 1.064e-6, 0.093).unwrap();
        let drive = DriveConfig::new(3e-3, OMEGA_M, Complex64::new(1.0, 0.0), OMEGA_M).unwrap();
        let coupling =
            DerivedCoupling::from_coupling(&mechanics, &optics, &drive, 1e-2 * OMEGA_M, 0.0)
                .unwrap();
        OmitSystem::new(mechanics, optics, drive, coupling)
    }

    fn window_grid(center: f64, half_span: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| center - half_span + 2.0 * half_span * i as f64 / (n - 1) as f64)
            .collect()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    fn truth(q: f64) -> FitParams {
        FitParams {
            g: 9.4e-3 * OMEGA_M,
            kappa_t: KAPPA_T,
            gamma_m: OMEGA_M / q,
            scale: 3.7,
            phase_offset: 0.0,
        }
    }

    #[test]
    fn noiseless_spectrum_recovers_exactly() {
        let base = base_system(122_000.0);
        let p = truth(122_000.0);
        let gamma_eff = p.gamma_m * (1.0 + p.g * p.g / (2.0 * p.kappa_t * p.gamma_m));
        // Wide grid so κ_T is identifiable from the cavity-line prefactor.
        let grid = window_grid(OMEGA_M, 1.5 * KAPPA_T, 401);
        assert!(3.0 * gamma_eff < KAPPA_T);
        let clean = synthesize(&base, &grid, &p).unwrap();
        let seed = FitParams {
            g: p.g * 1.25,
            kappa_t: p.kappa_t * 0.8,
            gamma_m: p.gamma_m,
            scale: 1.0,
            phase_offset: 0.0,
        };
        let fit = fit_spectrum(
            &base,
            &clean,
            seed,
            [true, true, false, true, false],
            &FitOptions::default(),
        )
        .unwrap();
        assert!(fit.converged);
        assert!(rel(fit.params.g, p.g) < 1e-6, "g = {}", fit.params.g);
        assert!(rel(fit.params.kappa_t, p.kappa_t) < 1e-6);
        assert!(rel(fit.params.scale, p.scale) < 1e-6);
    }

    #[test]
    fn objective_decreases_monotonically() {
        let base = base_system(122_000.0);
        let p = truth(122_000.0);
        let gamma_eff = p.gamma_m * (1.0 + p.g * p.g / (2.0 * p.kappa_t * p.gamma_m));
        let grid = window_grid(OMEGA_M, 3.0 * gamma_eff, 200);
        let clean = synthesize(&base, &grid, &p).unwrap();
        let seed = FitParams {
            g: p.g * 1.4,
            scale: 1.0,
            ..p
        };
        let fit = fit_spectrum(
            &base,
            &clean,
            seed,
            [true, false, false, true, false],
            &FitOptions::default(),
        )
        .unwrap();
        assert!(fit
            .objective_trace
            .windows(2)
            .all(|w| w[1] <= w[0]), "trace {:?}", fit.objective_trace);
    }

    #[test]
    fn amplitude_rescaling_leaves_physics_unchanged() {
        let base = base_system(122_000.0);
        let p = truth(122_000.0);
        let gamma_eff = p.gamma_m * (1.0 + p.g * p.g / (2.0 * p.kappa_t * p.gamma_m));
        let grid = window_grid(OMEGA_M, 3.0 * gamma_eff, 200);
        let clean = synthesize(&base, &grid, &p).unwrap();
        let mut rescaled = clean.clone();
        for v in &mut rescaled.modulus {
            *v *= 7.3;
        }
        let seed = FitParams {
            g: p.g * 1.2,
            scale: 1.0,
            ..p
        };
        let mask = [true, false, false, true, false];
        let a = fit_spectrum(&base, &clean, seed, mask, &FitOptions::default()).unwrap();
        let b = fit_spectrum(&base, &rescaled, seed, mask, &FitOptions::default()).unwrap();
        assert!(rel(a.params.g, b.params.g) < 1e-8);
        assert!(rel(b.params.scale, 7.3 * a.params.scale) < 1e-8);
    }

    #[test]
    fn noisy_recovery_within_two_percent() {
        // Smaller sibling of the acceptance Monte-Carlo study.
        let base = base_system(122_000.0);
        let p = truth(122_000.0);
        let gamma_eff = p.gamma_m * (1.0 + p.g * p.g / (2.0 * p.kappa_t * p.gamma_m));
        let grid = window_grid(OMEGA_M, 3.0 * gamma_eff, 200);
        let clean = synthesize(&base, &grid, &p).unwrap();
        let seed = FitParams {
            g: p.g * 1.15,
            scale: 1.0,
            ..p
        };
        let gs = monte_carlo_g_recovery(
            &base,
            &clean,
            seed,
            [true, false, false, true, false],
            &FitOptions::default(),
            0.01,
            10,
            41,
        )
        .unwrap();
        for g in gs {
            assert!(rel(g, p.g) < 0.02, "recovered {g} vs {}", p.g);
        }
    }

    #[test]
    fn phase_data_shrink_the_coupling_variance() {
        let base = base_system(122_000.0);
        let p = truth(122_000.0);
        let gamma_eff = p.gamma_m * (1.0 + p.g * p.g / (2.0 * p.kappa_t * p.gamma_m));
        let grid = window_grid(OMEGA_M, 3.0 * gamma_eff, 150);
        let clean = synthesize(&base, &grid, &p).unwrap();
        let seed = FitParams {
            g: p.g * 1.1,
            scale: 1.0,
            ..p
        };
        let mask = [true, true, false, true, false];
        let spread = |use_phase: bool| -> f64 {
            use rand::{Rng, SeedableRng};
            let mut gs = Vec::new();
            for k in 0..12u64 {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(100 + k);
                let mut noisy = clean.clone();
                for v in &mut noisy.modulus {
                    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
                    let u2: f64 = rng.gen();
                    *v *= 1.0
                        + 0.01
                            * (-2.0 * u1.ln()).sqrt()
                            * (std::f64::consts::TAU * u2).cos();
                }
                if !use_phase {
                    noisy.phase = None;
                }
                let fit = fit_spectrum(
                    &base,
                    &noisy,
                    seed,
                    mask,
                    &FitOptions {
                        use_phase,
                        ..Default::default()
                    },
                )
                .unwrap();
                gs.push(fit.params.g);
            }
            let mean = gs.iter().sum::<f64>() / gs.len() as f64;
            gs.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / gs.len() as f64
        };
        let amp_only = spread(false);
        let joint = spread(true);
        assert!(
            joint < amp_only,
            "joint variance {joint} should beat amplitude-only {amp_only}"
        );
    }

    #[test]
    fn joint_fit_recovers_coupling_ratios() {
        let base = base_system(24_000.0);
        let gamma = OMEGA_M / 24_000.0;
        let ratios = [1.0e-2, 1.4e-2, 3.1e-2, 4.2e-2];
        let mut datasets = Vec::new();
        for &frac in &ratios {
            let p = FitParams {
                g: frac * OMEGA_M,
                kappa_t: KAPPA_T,
                gamma_m: gamma,
                scale: 2.0,
                phase_offset: 0.0,
            };
            let c = p.g * p.g / (2.0 * KAPPA_T * gamma);
            let grid = window_grid(OMEGA_M, 6.0 * gamma * (1.0 + c), 120);
            datasets.push(synthesize(&base, &grid, &p).unwrap());
        }
        let initial = FitParams {
            g: 0.0,
            kappa_t: KAPPA_T * 1.2,
            gamma_m: gamma * 0.9,
            scale: 1.0,
            phase_offset: 0.0,
        };
        let seeds: Vec<f64> = ratios.iter().map(|r| r * OMEGA_M * 1.2).collect();
        let fit = fit_joint(&base, &datasets, initial, &seeds, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        let g0 = fit.couplings[0];
        for (g, want) in fit.couplings.iter().zip([1.0, 1.4, 3.1, 4.2]) {
            assert!(
                rel(g / g0 * 1.0, want / 1.0) < 0.05,
                "ratio {} vs {want}",
                g / g0
            );
        }
    }

    #[test]
    fn seeds_from_clean_dip() {
        let base = base_system(122_000.0);
        let gamma = OMEGA_M / 122_000.0;
        let c = 100.0;
        let g = (c * 2.0 * KAPPA_T * gamma).sqrt();
        let p = FitParams {
            g,
            kappa_t: KAPPA_T,
            gamma_m: gamma,
            scale: 1.0,
            phase_offset: 0.0,
        };
        let grid = window_grid(OMEGA_M, 2.0 * KAPPA_T, 1501);
        let clean = synthesize(&base, &grid, &p).unwrap();
        let seed = initial_guess(&clean, gamma).unwrap();
        assert!(rel(seed.g, g) < 0.3, "g seed {} vs {g}", seed.g);
        assert!(
            rel(seed.kappa_t, KAPPA_T) < 0.3,
            "kappa seed {} vs {KAPPA_T}",
            seed.kappa_t
        );
    }

    #[test]
    fn flat_spectrum_cannot_seed() {
        let grid = window_grid(OMEGA_M, 1e4, 101);
        let flat = SpectrumData {
            detuning: grid.clone(),
            modulus: vec![1.0; grid.len()],
            phase: None,
            sigma: None,
        };
        assert!(matches!(
            initial_guess(&flat, 18.0),
            Err(Error::Seeding(_))
        ));
    }

    #[test]
    fn amplification_peak_selects_positive_gain_branch() {
        let base = base_system(24_000.0);
        let gamma = OMEGA_M / 24_000.0;
        let c = 0.32;
        let g = (c * 2.0 * KAPPA_T * gamma).sqrt();
        let p = FitParams {
            g,
            kappa_t: KAPPA_T,
            gamma_m: gamma,
            scale: 1.0,
            phase_offset: 0.0,
        };
        // Blue-sideband window: detunings around −Ω_m.
        let grid = window_grid(-OMEGA_M, 20.0 * gamma, 801);
        let clean = synthesize(&base, &grid, &p).unwrap();
        let seed = initial_guess(&clean, gamma).unwrap();
        assert!(seed.g > 0.0);
        let c_seed = seed.g * seed.g / (2.0 * seed.kappa_t * gamma);
        assert!(c_seed < 1.0, "amplification branch implies C < 1, got {c_seed}");
        assert!((c_seed - c).abs() < 0.3, "c seed {c_seed} vs {c}");
    }

    #[test]
    fn masks_and_sizes_are_validated() {
        let base = base_system(122_000.0);
        let p = truth(122_000.0);
        let grid = window_grid(OMEGA_M, 1e4, 30);
        let clean = synthesize(&base, &grid, &p).unwrap();
        assert!(fit_spectrum(
            &base,
            &clean,
            p,
            [false; PARAM_COUNT],
            &FitOptions::default()
        )
        .is_err());
        let tiny = SpectrumData {
            detuning: clean.detuning[..8].to_vec(),
            modulus: clean.modulus[..8].to_vec(),
            phase: None,
            sigma: None,
        };
        assert!(fit_spectrum(
            &base,
            &tiny,
            p,
            [true, true, true, true, false],
            &FitOptions::default()
        )
        .is_err());
    }

    #[test]
    fn restarts_never_worsen_the_fit() {
        let base = base_system(122_000.0);
        let p = truth(122_000.0);
        let gamma_eff = p.gamma_m * (1.0 + p.g * p.g / (2.0 * p.kappa_t * p.gamma_m));
        let grid = window_grid(OMEGA_M, 3.0 * gamma_eff, 120);
        let clean = synthesize(&base, &grid, &p).unwrap();
        // Deliberately poor coupling seed.
        let seed = FitParams {
            g: p.g * 8.0,
            scale: 1.0,
            ..p
        };
        let mask = [true, false, false, true, false];
        let single = fit_spectrum(&base, &clean, seed, mask, &FitOptions::default()).unwrap();
        let multi = fit_spectrum(
            &base,
            &clean,
            seed,
            mask,
            &FitOptions {
                restarts: 5,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(multi.iterations > single.iterations, "all restarts ran");
        let last = |r: &FitResult| *r.objective_trace.last().unwrap();
        assert!(last(&multi) <= last(&single) * (1.0 + 1e-12));
        assert!(rel(multi.params.g, p.g) < 1e-6);
    }

    #[test]
    fn iteration_budget_marks_non_convergence() {
        let base = base_system(122_000.0);
        let p = truth(122_000.0);
        let gamma_eff = p.gamma_m * (1.0 + p.g * p.g / (2.0 * p.kappa_t * p.gamma_m));
        let grid = window_grid(OMEGA_M, 3.0 * gamma_eff, 120);
        let clean = synthesize(&base, &grid, &p).unwrap();
        let seed = FitParams {
            g: p.g * 2.0,
            scale: 1.0,
            ..p
        };
        let fit = fit_spectrum(
            &base,
            &clean,
            seed,
            [true, false, false, true, false],
            &FitOptions {
                max_iterations: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!fit.converged);
    }
}
