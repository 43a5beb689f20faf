//! Membrane-position dependence of the cavity resonance frequency.
//!
//! A thin semitransparent slab inside a two-mirror cavity shifts each
//! longitudinal resonance by an amount δω(z₀) that is periodic in the slab
//! position z₀ with period λ/2. The first derivative ∂ω/∂z₀ sets the
//! optomechanical coupling, the second sets the static spring shift, so this
//! module is where the coupling quantities of [`crate::model`] physically
//! come from.
//!
//! The model is a 1-D stack — mirror, vacuum gap, dielectric slab, vacuum
//! gap, mirror — at normal incidence, evaluated with 2×2 transfer matrices.
//! A resonance is a root of the round-trip phase, found by bracketing and
//! secant refinement. End mirrors are lossless with amplitude reflectivity
//! set by the empty-cavity finesse, r = exp(−π/2F).
//!
//! Numerical note: optical angular frequencies (~2e15 rad/s) have an f64
//! resolution of ~0.4 rad/s, far too coarse for finite differences of δω.
//! All internal arithmetic therefore runs in offsets — frequency offset δ
//! from a reference longitudinal mode and membrane offset ζ from the cavity
//! centre — with the large reference phases reduced exactly (multiples of
//! π/2 plus small corrections), which keeps the round-trip phase accurate to
//! ~1e-15 rad.

use num_complex::Complex64;

use crate::constants::SPEED_OF_LIGHT;
use crate::error::{Error, Result};
use crate::numerics::richardson_derivatives;

/// Membrane as a uniform dielectric slab.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MembraneSlab {
    /// Thickness L_d (m).
    pub thickness: f64,
    /// Real part of the refractive index.
    pub n_real: f64,
    /// Imaginary part of the refractive index (absorption).
    pub n_imag: f64,
    /// Working-point displacement from a field node (m).
    pub z0: f64,
}

impl MembraneSlab {
    pub fn new(thickness: f64, n_real: f64, n_imag: f64, z0: f64) -> Result<Self> {
        if !(thickness > 0.0) {
            return Err(Error::domain(
                "thickness",
                format!("must be positive (got {thickness})"),
            ));
        }
        if !(n_real >= 1.0) {
            return Err(Error::domain(
                "n_real",
                format!("must be >= 1 (got {n_real})"),
            ));
        }
        if !(n_imag >= 0.0) {
            return Err(Error::domain(
                "n_imag",
                format!("must be >= 0 (got {n_imag})"),
            ));
        }
        Ok(MembraneSlab {
            thickness,
            n_real,
            n_imag,
            z0,
        })
    }

    fn index(&self) -> Complex64 {
        Complex64::new(self.n_real, self.n_imag)
    }
}

/// Amplitude reflection and transmission of the bare slab at normal
/// incidence, from single-slab interference. Energy satisfies
/// |r|² + |t|² ≤ 1 with the deficit equal to the slab absorption.
pub fn slab_reflectivity(slab: &MembraneSlab, wavelength: f64) -> Result<(Complex64, Complex64)> {
    if !(wavelength > 0.0) {
        return Err(Error::domain(
            "wavelength",
            format!("must be positive (got {wavelength})"),
        ));
    }
    let k = 2.0 * std::f64::consts::PI / wavelength;
    Ok(slab_airy(slab.index(), k * slab.thickness))
}

/// Airy formulas for a symmetric slab: r₁ = (1−n)/(1+n), β = n k L_d.
fn slab_airy(n: Complex64, k_thickness: f64) -> (Complex64, Complex64) {
    let one = Complex64::new(1.0, 0.0);
    let r1 = (one - n) / (one + n);
    let beta = n * k_thickness;
    let e1 = (Complex64::i() * beta).exp();
    let e2 = e1 * e1;
    let denom = one - r1 * r1 * e2;
    let r = r1 * (one - e2) / denom;
    let t = (one - r1 * r1) * e1 / denom;
    (r, t)
}

/// 2×2 transfer matrix relating (rightward, leftward) field amplitudes on the
/// left side of an element to those on its right side.
#[derive(Debug, Clone, Copy)]
struct Transfer {
    a: Complex64,
    b: Complex64,
    c: Complex64,
    d: Complex64,
}

impl Transfer {
    fn compose(self, rhs: Transfer) -> Transfer {
        Transfer {
            a: self.a * rhs.a + self.b * rhs.c,
            b: self.a * rhs.b + self.b * rhs.d,
            c: self.c * rhs.a + self.d * rhs.c,
            d: self.c * rhs.b + self.d * rhs.d,
        }
    }

    /// Interface from index `na` into `nb`.
    fn interface(na: Complex64, nb: Complex64) -> Transfer {
        let r = (na - nb) / (na + nb);
        let t = 2.0 * na / (na + nb);
        Transfer {
            a: 1.0 / t,
            b: r / t,
            c: r / t,
            d: 1.0 / t,
        }
    }

    /// Propagation with one-way phase `phi` (complex for absorbing media).
    fn propagation(phi: Complex64) -> Transfer {
        let zero = Complex64::new(0.0, 0.0);
        Transfer {
            a: (-Complex64::i() * phi).exp(),
            b: zero,
            c: zero,
            d: (Complex64::i() * phi).exp(),
        }
    }

    /// Reflection seen from the left when the right side is terminated by an
    /// amplitude reflector `r_back`.
    fn reflection_into(self, r_back: f64) -> Complex64 {
        (self.c + self.d * r_back) / (self.a + self.b * r_back)
    }
}

/// Dispersion curve sampled on a z₀ grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DispersionCurve {
    /// Membrane displacements from the node (m).
    pub z0: Vec<f64>,
    /// Resonance shift Re δω at each z0 (rad/s), relative to the reference
    /// empty-cavity mode.
    pub delta_omega: Vec<f64>,
    /// ∂ω/∂z₀ (rad s⁻¹ m⁻¹).
    pub slope: Vec<f64>,
    /// ∂²ω/∂z₀² (rad s⁻¹ m⁻²).
    pub curvature: Vec<f64>,
}

/// Round-trip loss bookkeeping at one membrane position. Membrane absorption
/// shows up here as extra implied cavity decay; it is reported as a
/// diagnostic only and never fed back into the parameter bundle, where the
/// decay rates are measured quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossDiagnostic {
    /// |round-trip amplitude| at the resonance.
    pub round_trip_amplitude: f64,
    /// Total implied decay rate −c ln|g| / 2L (rad/s).
    pub implied_kappa_t: f64,
    /// Mirror-only decay rate −c ln(r₁r₂) / 2L (rad/s).
    pub mirror_kappa_t: f64,
}

/// Transfer-matrix model of the membrane-in-the-middle cavity, with the
/// node-referenced coordinate fixed at construction.
#[derive(Debug, Clone)]
pub struct DispersionModel {
    slab: MembraneSlab,
    cavity_length: f64,
    wavelength: f64,
    mirror_r: f64,
    /// k_ref = πm/L for the reference longitudinal mode index m.
    k_ref: f64,
    /// Half-gap D = (L − L_d)/2 of the centred reference split.
    half_gap: f64,
    /// πm/2 reduced mod 2π (exact).
    quadrant_phase: f64,
    /// −πm L_d / 2L, the gap-shortening correction to the reference phase.
    gap_correction: f64,
    /// Membrane-centre offset (from the cavity centre) of the chosen node.
    zeta_node: f64,
    /// Coarse (ζ, δ) table over one period, seeds the root finder.
    branch_table: Vec<(f64, f64)>,
}

/// FSR in angular frequency, πc/L.
fn free_spectral_range(cavity_length: f64) -> f64 {
    std::f64::consts::PI * SPEED_OF_LIGHT / cavity_length
}

impl DispersionModel {
    /// Builds the model and locates the field node nearest the cavity centre,
    /// which becomes the origin of the z₀ coordinate.
    pub fn new(
        slab: MembraneSlab,
        cavity_length: f64,
        wavelength: f64,
        finesse: f64,
    ) -> Result<Self> {
        if !(cavity_length > 0.0) {
            return Err(Error::domain("cavity_length", "must be positive"));
        }
        if !(wavelength > 0.0) {
            return Err(Error::domain("wavelength", "must be positive"));
        }
        if !(finesse > 1.0) {
            return Err(Error::domain("finesse", "must exceed 1"));
        }
        if slab.thickness >= cavity_length / 2.0 {
            return Err(Error::domain("thickness", "slab does not fit in the cavity"));
        }
        let mode_index = (2.0 * cavity_length / wavelength).round() as i64;
        let k_ref = std::f64::consts::PI * mode_index as f64 / cavity_length;
        let mut model = DispersionModel {
            slab,
            cavity_length,
            wavelength,
            mirror_r: (-std::f64::consts::PI / (2.0 * finesse)).exp(),
            k_ref,
            half_gap: 0.5 * (cavity_length - slab.thickness),
            quadrant_phase: (mode_index.rem_euclid(4)) as f64 * std::f64::consts::FRAC_PI_2,
            gap_correction: -std::f64::consts::PI * mode_index as f64 * slab.thickness
                / (2.0 * cavity_length),
            zeta_node: 0.0,
            branch_table: Vec::new(),
        };
        model.locate_node()?;
        Ok(model)
    }

    /// Reference empty-cavity resonance ω_ref = πmc/L (rad/s).
    pub fn reference_frequency(&self) -> f64 {
        self.k_ref * SPEED_OF_LIGHT
    }

    /// Bare-slab amplitude reflectivity magnitude at the working wavelength.
    pub fn slab_reflectivity_magnitude(&self) -> f64 {
        let k = 2.0 * std::f64::consts::PI / self.wavelength;
        slab_airy(self.slab.index(), k * self.slab.thickness).0.norm()
    }

    /// Peak-to-centre modulation scale (c/L)·asin|r_m| of the closed-form
    /// approximation, used to normalize cross-checks.
    pub fn modulation_amplitude(&self) -> f64 {
        SPEED_OF_LIGHT / self.cavity_length * self.slab_reflectivity_magnitude().asin()
    }

    /// Closed-form approximation δω ≈ (c/L)·asin(|r_m| cos(2kz₀)), valid up
    /// to a constant offset. Kept as an independent cross-check of the
    /// transfer-matrix solve, never used as the primary result.
    pub fn arcsin_shift(&self, z0: f64) -> f64 {
        let k = 2.0 * std::f64::consts::PI / self.wavelength;
        let r = self.slab_reflectivity_magnitude();
        SPEED_OF_LIGHT / self.cavity_length * (r * (2.0 * k * z0).cos()).asin()
    }

    /// Analytic z₀-derivative of [`Self::arcsin_shift`].
    pub fn arcsin_slope(&self, z0: f64) -> f64 {
        let k = 2.0 * std::f64::consts::PI / self.wavelength;
        let r = self.slab_reflectivity_magnitude();
        let c2 = (2.0 * k * z0).cos();
        -SPEED_OF_LIGHT / self.cavity_length * r * 2.0 * k * (2.0 * k * z0).sin()
            / (1.0 - r * r * c2 * c2).sqrt()
    }

    /// Resonance shift δω(z₀) of the tracked mode, z₀ measured from the node.
    pub fn resonance_shift(&self, z0: f64) -> Result<f64> {
        self.check_range(z0)?;
        let zeta = self.zeta_node + z0;
        self.resonance_delta(zeta, self.guess_from_table(zeta))
    }

    /// (∂ω/∂z₀, ∂²ω/∂z₀²) at `z0`, by Richardson-extrapolated central
    /// differences of the resonance shift with step λ/10⁴.
    pub fn derivatives(&self, z0: f64) -> Result<(f64, f64)> {
        self.check_range(z0)?;
        let h = self.wavelength * 1e-4;
        richardson_derivatives(|z| self.resonance_shift(z), z0, h)
    }

    /// Samples δω and its derivatives over a z₀ grid.
    pub fn sample_curve(&self, z0_grid: &[f64]) -> Result<DispersionCurve> {
        let mut curve = DispersionCurve {
            z0: z0_grid.to_vec(),
            delta_omega: Vec::with_capacity(z0_grid.len()),
            slope: Vec::with_capacity(z0_grid.len()),
            curvature: Vec::with_capacity(z0_grid.len()),
        };
        for &z in z0_grid {
            curve.delta_omega.push(self.resonance_shift(z)?);
            let (s, c) = self.derivatives(z)?;
            curve.slope.push(s);
            curve.curvature.push(c);
        }
        Ok(curve)
    }

    /// Round-trip amplitude loss at the resonance for `z0`.
    pub fn loss_diagnostic(&self, z0: f64) -> Result<LossDiagnostic> {
        let zeta = self.zeta_node + z0;
        let delta = self.resonance_shift(z0)?;
        let g = self.round_trip(delta, zeta).norm();
        let scale = SPEED_OF_LIGHT / (2.0 * self.cavity_length);
        Ok(LossDiagnostic {
            round_trip_amplitude: g,
            implied_kappa_t: -g.ln() * scale,
            mirror_kappa_t: -(self.mirror_r * self.mirror_r).ln() * scale,
        })
    }

    fn check_range(&self, z0: f64) -> Result<()> {
        if z0.abs() >= self.cavity_length / 4.0 {
            return Err(Error::domain(
                "z0",
                format!(
                    "|z0| = {:.3e} m must stay below L/4 = {:.3e} m",
                    z0.abs(),
                    self.cavity_length / 4.0
                ),
            ));
        }
        Ok(())
    }

    /// Round-trip amplitude g(δ, ζ) = r₁ · ρ(δ, ζ) seen from the inner face
    /// of the input mirror; a resonance is arg g = 0.
    fn round_trip(&self, delta: f64, zeta: f64) -> Complex64 {
        let dk = delta / SPEED_OF_LIGHT;
        // One-way gap phases, decomposed so every term is either exactly
        // reduced (the quadrant) or small.
        let common = self.quadrant_phase + self.gap_correction;
        let phi1 = common + self.k_ref * zeta + dk * (self.half_gap + zeta);
        let phi2 = common - self.k_ref * zeta + dk * (self.half_gap - zeta);

        let n = self.slab.index();
        let one = Complex64::new(1.0, 0.0);
        let beta = n * ((self.k_ref + dk) * self.slab.thickness);
        let slab = Transfer::interface(one, n)
            .compose(Transfer::propagation(beta))
            .compose(Transfer::interface(n, one));
        let stack = Transfer::propagation(Complex64::new(phi1, 0.0))
            .compose(slab)
            .compose(Transfer::propagation(Complex64::new(phi2, 0.0)));
        self.mirror_r * stack.reflection_into(self.mirror_r)
    }

    fn phase_residual(&self, delta: f64, zeta: f64) -> f64 {
        let g = self.round_trip(delta, zeta);
        g.im.atan2(g.re)
    }

    /// Finds the resonance offset δ nearest `guess` for membrane-centre
    /// offset ζ, to |phase residual| below 1e-10 rad (typically ~1e-14).
    fn resonance_delta(&self, zeta: f64, guess: f64) -> Result<f64> {
        let fsr = free_spectral_range(self.cavity_length);
        let lo = guess - 0.75 * fsr;
        let hi = guess + 0.75 * fsr;
        const SCAN: usize = 192;
        let step = (hi - lo) / SCAN as f64;

        // The principal-value round-trip phase rises through 0 at each
        // resonance and wraps (falls by ~2π) at each antiresonance, so a
        // resonance bracket is an upward sign change without a wrap.
        let mut best: Option<(f64, f64, f64, f64)> = None;
        let mut prev_x = lo;
        let mut prev_p = self.phase_residual(lo, zeta);
        for i in 1..=SCAN {
            let x = lo + step * i as f64;
            let p = self.phase_residual(x, zeta);
            if prev_p <= 0.0 && p > 0.0 && (p - prev_p) < std::f64::consts::PI {
                let take = match best {
                    None => true,
                    Some((a, b, _, _)) => {
                        (0.5 * (prev_x + x) - guess).abs() < (0.5 * (a + b) - guess).abs()
                    }
                };
                if take {
                    best = Some((prev_x, x, prev_p, p));
                }
            }
            prev_x = x;
            prev_p = p;
        }
        let (mut a, mut b, pa, pb) = best.ok_or_else(|| {
            Error::numerical(
                "dispersion resonance",
                format!(
                    "no round-trip phase zero in [{lo:.6e}, {hi:.6e}] rad/s at zeta = {zeta:.6e} m"
                ),
            )
        })?;

        // Bisection to localize, then secant to machine-level residual.
        for _ in 0..20 {
            let m = 0.5 * (a + b);
            if self.phase_residual(m, zeta) <= 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        let (mut x0, mut x1) = (a, b);
        let mut p0 = self.phase_residual(x0, zeta);
        let mut p1 = self.phase_residual(x1, zeta);
        for _ in 0..60 {
            if p1 == p0 {
                break;
            }
            let x2 = (x1 - p1 * (x1 - x0) / (p1 - p0)).clamp(a, b);
            let p2 = self.phase_residual(x2, zeta);
            x0 = x1;
            p0 = p1;
            x1 = x2;
            p1 = p2;
            if p1.abs() < 1e-13 {
                break;
            }
        }
        if p1.abs() > 1e-10 {
            return Err(Error::numerical(
                "dispersion resonance",
                format!(
                    "secant stalled with |phase| = {:.3e} rad in bracket \
                     [{a:.9e}, {b:.9e}] (bracket residuals {pa:.3e}, {pb:.3e})",
                    p1.abs()
                ),
            ));
        }
        Ok(x1)
    }

    fn guess_from_table(&self, zeta: f64) -> f64 {
        if self.branch_table.is_empty() {
            return 0.0;
        }
        // Fold onto the tabulated period (the curve is λ/2-periodic).
        let period = self.wavelength / 2.0;
        let start = self.branch_table[0].0;
        let folded = start + (zeta - start).rem_euclid(period);
        self.branch_table
            .iter()
            .min_by(|p, q| {
                let dp = (p.0 - folded).abs();
                let dq = (q.0 - folded).abs();
                dp.partial_cmp(&dq).unwrap()
            })
            .map(|p| p.1)
            .unwrap()
    }

    /// Locates the field node: the membrane position maximizing δω (a
    /// dielectric pulls the resonance down most at an antinode, least at a
    /// node), nearest the cavity centre.
    fn locate_node(&mut self) -> Result<()> {
        let period = self.wavelength / 2.0;
        // Anchor the branch at the cavity centre, then walk ~1.1 periods so
        // the maximum is interior.
        let mut guess = self.resonance_delta(0.0, 0.0)?;
        const N: usize = 53;
        let span = 1.1 * period;
        let z_start = -0.55 * period;
        let mut table = Vec::with_capacity(N + 1);
        let mut best = (z_start, f64::NEG_INFINITY);
        for i in 0..=N {
            let zeta = z_start + span * i as f64 / N as f64;
            let delta = self.resonance_delta(zeta, guess)?;
            guess = delta;
            table.push((zeta, delta));
            if delta > best.1 {
                best = (zeta, delta);
            }
        }
        self.branch_table = table;

        // Golden-section refinement of the maximum.
        let gr = (5f64.sqrt() - 1.0) / 2.0;
        let step = span / N as f64;
        let (mut a, mut b) = (best.0 - step, best.0 + step);
        let mut x1 = b - gr * (b - a);
        let mut x2 = a + gr * (b - a);
        let mut f1 = self.resonance_delta(x1, self.guess_from_table(x1))?;
        let mut f2 = self.resonance_delta(x2, self.guess_from_table(x2))?;
        for _ in 0..60 {
            if f1 < f2 {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + gr * (b - a);
                f2 = self.resonance_delta(x2, self.guess_from_table(x2))?;
            } else {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - gr * (b - a);
                f1 = self.resonance_delta(x1, self.guess_from_table(x1))?;
            }
            if b - a < 1e-13 {
                break;
            }
        }
        let mut node = 0.5 * (a + b);

        // Newton polish on the slope so the node satisfies slope = 0 to the
        // precision of the root solve itself.
        let h = self.wavelength * 1e-4;
        for _ in 0..4 {
            let (slope, curvature) = richardson_derivatives(
                |z| self.resonance_delta(z, self.guess_from_table(z)),
                node,
                h,
            )?;
            if curvature == 0.0 {
                break;
            }
            let step = slope / curvature;
            node -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let (_, curvature) = richardson_derivatives(
            |z| self.resonance_delta(z, self.guess_from_table(z)),
            node,
            h,
        )?;
        if curvature > 0.0 {
            return Err(Error::numerical(
                "node location",
                "converged to a frequency minimum (antinode) instead of a node",
            ));
        }
        self.zeta_node = node;
        Ok(())
    }
}
