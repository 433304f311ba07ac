//! Error norms and observed convergence rates.

use anyhow::{bail, ensure, Result};

/// Root-mean-square difference over grid points.
pub fn rmse(numeric: &[f64], exact: &[f64]) -> Result<f64> {
    ensure!(
        numeric.len() == exact.len(),
        "grid mismatch: {} numeric values against {} exact values",
        numeric.len(),
        exact.len()
    );
    ensure!(!numeric.is_empty(), "empty field");
    let sum: f64 = numeric.iter().zip(exact).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sum / numeric.len() as f64).sqrt())
}

/// RMSE of a vector field given component-wise: squared component errors are summed per point.
pub fn rmse_components(numeric: &[&[f64]], exact: &[&[f64]]) -> Result<f64> {
    ensure!(numeric.len() == exact.len() && !numeric.is_empty(), "component count mismatch");
    let n = numeric[0].len();
    let mut sum = 0.0;
    for (a, b) in numeric.iter().zip(exact) {
        ensure!(a.len() == n && b.len() == n, "grid mismatch between components");
        sum += a.iter().zip(*b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    }
    Ok((sum / n as f64).sqrt())
}

/// Observed rate between consecutive entries: `log(e_i / e_{i+1}) / log(h_i / h_{i+1})`.
/// With halved spacings this is `log2(e_i / e_{i+1})`.
pub fn pairwise_rates(errors: &[f64], spacings: &[f64]) -> Result<Vec<f64>> {
    check_series(errors, spacings)?;
    Ok(errors
        .windows(2)
        .zip(spacings.windows(2))
        .map(|(e, h)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
        .collect())
}

/// Least-squares slope of `log e` against `log h`.
pub fn least_squares_rate(errors: &[f64], spacings: &[f64]) -> Result<f64> {
    check_series(errors, spacings)?;
    let n = errors.len() as f64;
    let xs: Vec<f64> = spacings.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    ensure!(sxx > 0.0, "spacings must differ");
    Ok(sxy / sxx)
}

fn check_series(errors: &[f64], spacings: &[f64]) -> Result<()> {
    if errors.len() < 2 {
        bail!("a convergence rate needs at least two resolutions, got {}", errors.len());
    }
    ensure!(errors.len() == spacings.len(), "{} errors for {} spacings", errors.len(), spacings.len());
    ensure!(
        errors.iter().chain(spacings).all(|v| v.is_finite() && *v > 0.0),
        "errors and spacings must be positive and finite"
    );
    Ok(())
}

/// Four significant digits in the `1.7185e-4` style.
pub fn sci4(v: f64) -> String {
    format!("{v:.4e}")
}

/// Relative deviation `|x - reference| / |reference|`.
pub fn rel_dev(x: f64, reference: f64) -> f64 {
    (x - reference).abs() / reference.abs()
}
