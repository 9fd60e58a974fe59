//! Small fitting helpers shared by the rate diagnostics and tests.

/// Least-squares line `y = slope * x + intercept`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2);
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Slope of `log y` against `log x`; entries with non-positive `y` are
/// dropped.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> f64 {
    let pairs: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let lx: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ly: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    fit_line(&lx, &ly).0
}

/// Relative gap `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_gap(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_fit_recovers_exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        let (s, b) = fit_line(&xs, &ys);
        assert!((s - 2.0).abs() < 1e-12);
        assert!((b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loglog_slope_of_power_law() {
        let xs: Vec<f64> = (1..=6).map(|k| 2f64.powi(-k)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(0.7)).collect();
        assert!((fit_loglog(&xs, &ys) - 0.7).abs() < 1e-12);
    }
}
