//! Small statistical helpers: ordinary least squares on a line, with a
//! classical confidence interval for the slope.

/// Least-squares fit of `y = slope * x + intercept`.
///
/// Panics if fewer than two points are supplied or the lengths differ;
/// callers own that invariant.
pub fn ols_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2, "need at least two points for a line");
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Slope estimate with a symmetric 95% confidence half-width from the
/// residual variance (classical t interval; exact under iid normal errors,
/// a sturdy summary otherwise).
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub half_width_95: f64,
    pub residual_sd: f64,
}

pub fn ols_slope_with_ci(xs: &[f64], ys: &[f64]) -> SlopeFit {
    let (slope, intercept) = ols_line(xs, ys);
    let n = xs.len();
    let mx = xs.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if n == 2 {
        // Two points determine the line; no residual information.
        return SlopeFit { slope, intercept, half_width_95: f64::INFINITY, residual_sd: 0.0 };
    }
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum();
    let residual_sd = (rss / (n - 2) as f64).sqrt();
    let se = residual_sd / sxx.sqrt();
    SlopeFit {
        slope,
        intercept,
        half_width_95: t_quantile_975(n - 2) * se,
        residual_sd,
    }
}

/// Two-sided 97.5% quantile of Student's t with `df` degrees of freedom
/// (tabulated for small df, normal limit beyond).
pub fn t_quantile_975(df: usize) -> f64 {
    const TABLE: [f64; 30] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179,
        2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064,
        2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
    ];
    if df == 0 {
        f64::INFINITY
    } else if df <= 30 {
        TABLE[df - 1]
    } else {
        1.96
    }
}
