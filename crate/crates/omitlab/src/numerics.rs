//! Small numerical helpers shared by the dispersion and response modules.

use crate::error::{Error, Result};

/// First and second derivative of `f` at `x` by central differences with one
/// Richardson extrapolation step (stencil at x, x ± h/2, x ± h; leading error
/// O(h⁴)).
pub fn richardson_derivatives<F>(mut f: F, x: f64, h: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(h > 0.0) || x + h == x || x + 0.5 * h == x {
        return Err(Error::numerical(
            "richardson_derivatives",
            format!("step {h:.3e} underflows at x = {x:.6e}"),
        ));
    }
    let f0 = f(x)?;
    let fp_h = f(x + h)?;
    let fm_h = f(x - h)?;
    let fp_half = f(x + 0.5 * h)?;
    let fm_half = f(x - 0.5 * h)?;

    let slope_h = (fp_h - fm_h) / (2.0 * h);
    let slope_half = (fp_half - fm_half) / h;
    let slope = (4.0 * slope_half - slope_h) / 3.0;

    let curv_h = (fp_h - 2.0 * f0 + fm_h) / (h * h);
    let curv_half = (fp_half - 2.0 * f0 + fm_half) / (0.25 * h * h);
    let curvature = (4.0 * curv_half - curv_h) / 3.0;

    Ok((slope, curvature))
}

/// Linear regression y = a + b x; returns (a, b).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - b * mx, b)
}
