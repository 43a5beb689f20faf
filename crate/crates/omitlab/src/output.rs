//! Deterministic CSV emission, spectrum CSV ingestion, and run records.
//!
//! Every numeric field is written in fixed 17-significant-digit scientific
//! notation with "." decimals, comma delimiters, LF line endings and UTF-8,
//! so identical configs produce byte-identical files on any machine.

use num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::dispersion::DispersionCurve;
use crate::error::{Error, Result};
use crate::fit::{FitResult, SpectrumData, PARAM_NAMES};
use crate::oracle::OraclePoint;
use crate::response::ResponsePoint;

/// Fixed 17-significant-digit scientific formatting.
pub fn fmt_g17(x: f64) -> String {
    format!("{x:.16e}")
}

fn angular_to_hz(omega: f64) -> f64 {
    omega / std::f64::consts::TAU
}

/// CSV for a response sweep: one row per grid point.
pub fn respond_csv(points: &[ResponsePoint]) -> String {
    let mut out = String::from("omega_over_2pi_hz,beat_modulus,beat_phase_rad,group_delay_s\n");
    for p in points {
        out.push_str(&fmt_g17(angular_to_hz(p.omega_probe_offset)));
        out.push(',');
        out.push_str(&fmt_g17(p.a_beat.norm()));
        out.push(',');
        out.push_str(&fmt_g17(p.a_beat.arg()));
        out.push(',');
        out.push_str(&fmt_g17(p.group_delay));
        out.push('\n');
    }
    out
}

/// CSV for a dispersion scan.
pub fn dispersion_csv(curve: &DispersionCurve) -> String {
    let mut out = String::from("z0_m,delta_omega_rad_s,slope,curvature\n");
    for i in 0..curve.z0.len() {
        out.push_str(&fmt_g17(curve.z0[i]));
        out.push(',');
        out.push_str(&fmt_g17(curve.delta_omega[i]));
        out.push(',');
        out.push_str(&fmt_g17(curve.slope[i]));
        out.push(',');
        out.push_str(&fmt_g17(curve.curvature[i]));
        out.push('\n');
    }
    out
}

/// Side-by-side oracle/analytic CSV; divergent rows carry `diverged = 1` and
/// NaN observables.
pub fn oracle_csv(rows: &[(OraclePoint, Complex64)]) -> String {
    let mut out = String::from(
        "omega_over_2pi_hz,analytic_modulus,analytic_phase_rad,oracle_modulus,oracle_phase_rad,rel_deviation,diverged\n",
    );
    for (point, analytic) in rows {
        let (om, op, dev) = match &point.demod {
            Some(d) => (
                d.beat_complex.norm(),
                d.beat_complex.arg(),
                (d.beat_complex - analytic).norm() / analytic.norm().max(f64::MIN_POSITIVE),
            ),
            None => (f64::NAN, f64::NAN, f64::NAN),
        };
        out.push_str(&fmt_g17(angular_to_hz(point.omega_probe_offset)));
        out.push(',');
        out.push_str(&fmt_g17(analytic.norm()));
        out.push(',');
        out.push_str(&fmt_g17(analytic.arg()));
        out.push(',');
        out.push_str(&fmt_g17(om));
        out.push(',');
        out.push_str(&fmt_g17(op));
        out.push(',');
        out.push_str(&fmt_g17(dev));
        out.push(',');
        out.push(if point.diverged { '1' } else { '0' });
        out.push('\n');
    }
    out
}

/// Machine-readable key=value fit report.
pub fn fit_report(result: &FitResult) -> String {
    let mut out = String::new();
    let values = [
        result.params.g,
        result.params.kappa_t,
        result.params.gamma_m,
        result.params.scale,
        result.params.phase_offset,
    ];
    for (name, value) in PARAM_NAMES.iter().zip(values) {
        out.push_str(&format!("{name}={}\n", fmt_g17(value)));
    }
    if let Some(s) = &result.sigmas {
        let sig = [s.g, s.kappa_t, s.gamma_m, s.scale, s.phase_offset];
        for (name, value) in PARAM_NAMES.iter().zip(sig) {
            out.push_str(&format!("{name}_sigma={}\n", fmt_g17(value)));
        }
    } else {
        out.push_str("sigmas=unavailable\n");
    }
    out.push_str(&format!(
        "reduced_chi_square={}\n",
        fmt_g17(result.reduced_chi_square)
    ));
    out.push_str(&format!("converged={}\n", result.converged));
    out.push_str(&format!("iterations={}\n", result.iterations));
    out
}

/// Reads a spectrum CSV with a header row. Required columns:
/// `omega_over_2pi_hz` and `beat_modulus`; optional `beat_phase_rad` and
/// `sigma`. Extra columns (e.g. `group_delay_s` from a respond run) are
/// ignored, so respond output is directly fittable.
pub fn read_spectrum_csv(text: &str) -> Result<SpectrumData> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Config {
        path: "<spectrum csv>".into(),
        reason: "empty file".into(),
    })?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let find = |name: &str| columns.iter().position(|c| *c == name);
    let omega_col = find("omega_over_2pi_hz").ok_or_else(|| Error::Config {
        path: "<spectrum csv>".into(),
        reason: "missing column omega_over_2pi_hz".into(),
    })?;
    let modulus_col = find("beat_modulus").ok_or_else(|| Error::Config {
        path: "<spectrum csv>".into(),
        reason: "missing column beat_modulus".into(),
    })?;
    let phase_col = find("beat_phase_rad");
    let sigma_col = find("sigma");

    let mut detuning = Vec::new();
    let mut modulus = Vec::new();
    let mut phase = Vec::new();
    let mut sigma = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parse = |col: usize| -> Result<f64> {
            fields
                .get(col)
                .ok_or_else(|| Error::Config {
                    path: format!("<spectrum csv> line {}", lineno + 2),
                    reason: format!("missing field {col}"),
                })?
                .parse::<f64>()
                .map_err(|e| Error::Config {
                    path: format!("<spectrum csv> line {}", lineno + 2),
                    reason: e.to_string(),
                })
        };
        detuning.push(parse(omega_col)? * std::f64::consts::TAU);
        modulus.push(parse(modulus_col)?);
        if let Some(c) = phase_col {
            phase.push(parse(c)?);
        }
        if let Some(c) = sigma_col {
            sigma.push(parse(c)?);
        }
    }
    if detuning.is_empty() {
        return Err(Error::Config {
            path: "<spectrum csv>".into(),
            reason: "no data rows".into(),
        });
    }
    let data = SpectrumData {
        detuning,
        modulus,
        phase: phase_col.map(|_| phase),
        sigma: sigma_col.map(|_| sigma),
    };
    data.validate()?;
    Ok(data)
}

/// SHA-256 of a byte string, hex encoded.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Record of a completed run: the full config snapshot plus digests of every
/// produced file make the outputs reproducible from the record alone.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RunRecord {
    pub toolkit_version: String,
    pub timestamp_utc: String,
    pub config: crate::config::RunConfig,
    pub outputs: Vec<OutputDigest>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct OutputDigest {
    pub path: String,
    pub sha256: String,
}

impl RunRecord {
    pub fn new(config: crate::config::RunConfig, outputs: Vec<OutputDigest>) -> Self {
        RunRecord {
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp_utc: chrono::Utc::now().to_rfc3339(),
            config,
            outputs,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }
}
