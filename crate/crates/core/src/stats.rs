//! Small statistics kit shared by the estimators: means with standard errors,
//! batch means, Kolmogorov–Smirnov distance, (weighted) least squares.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// A point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn new(value: f64, stderr: f64) -> Self {
        Estimate { value, stderr }
    }

    pub fn exact(value: f64) -> Self {
        Estimate { value, stderr: 0.0 }
    }

    /// `|a - b| <= k * sqrt(se_a^2 + se_b^2) + floor`
    pub fn agrees_with(&self, other: &Estimate, k: f64, floor: f64) -> bool {
        (self.value - other.value).abs() <= k * self.combined_stderr(other) + floor
    }

    pub fn combined_stderr(&self, other: &Estimate) -> f64 {
        self.stderr.hypot(other.stderr)
    }
}

/// Mean shifted by the first value, so constant input is returned exactly.
pub fn mean(xs: &[f64]) -> f64 {
    let Some(&first) = xs.first() else {
        return f64::NAN;
    };
    first + xs.iter().map(|x| x - first).sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; exactly zero when all values coincide.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let first = xs[0];
    if xs.iter().all(|&x| x == first) {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Mean and standard error of i.i.d. samples.
pub fn mean_stderr(xs: &[f64]) -> Estimate {
    let m = mean(xs);
    if xs.len() < 2 {
        return Estimate::new(m, 0.0);
    }
    Estimate::new(m, (variance(xs) / xs.len() as f64).sqrt())
}

/// Mean of a correlated series with a batch-means standard error.
pub fn batch_means(xs: &[f64], batches: usize) -> Estimate {
    let batches = batches.clamp(1, xs.len().max(1));
    let len = xs.len() / batches;
    if len == 0 || batches < 2 {
        return Estimate::new(mean(xs), 0.0);
    }
    let bm: Vec<f64> = xs.chunks_exact(len).take(batches).map(mean).collect();
    let overall = mean(xs);
    Estimate::new(overall, (variance(&bm) / batches as f64).sqrt())
}

/// Grouped (delete-a-group) jackknife standard error of the sample variance.
pub fn jackknife_variance_stderr(xs: &[f64], groups: usize) -> f64 {
    let groups = groups.min(xs.len());
    if groups < 2 {
        return 0.0;
    }
    let len = xs.len() / groups;
    let used = &xs[..len * groups];
    let n = used.len() as f64;
    let total: f64 = used.iter().sum();
    let total_sq: f64 = used.iter().map(|x| x * x).sum();
    let reps: Vec<f64> = used
        .chunks_exact(len)
        .map(|g| {
            let s: f64 = g.iter().sum();
            let s2: f64 = g.iter().map(|x| x * x).sum();
            let k = n - len as f64;
            let m = (total - s) / k;
            ((total_sq - s2) - k * m * m) / (k - 1.0)
        })
        .collect();
    let g = groups as f64;
    let rbar = mean(&reps);
    ((g - 1.0) / g * reps.iter().map(|r| (r - rbar) * (r - rbar)).sum::<f64>()).sqrt()
}

pub fn standard_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Kolmogorov–Smirnov distance `sup |F_n - F|` of a sample against `cdf`.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut xs: Vec<f64> = samples.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    /// Root-mean-square residual.
    pub residual: f64,
}

/// Ordinary least squares of `y` on `x`; the slope error comes from residuals.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let w = vec![1.0; x.len()];
    let fit = weighted_fit(x, y, &w)?;
    let n = x.len() as f64;
    let xm = mean(x);
    let sxx: f64 = x.iter().map(|v| (v - xm) * (v - xm)).sum();
    let slope_stderr = if x.len() > 2 {
        (fit.residual * fit.residual * n / (n - 2.0) / sxx).sqrt()
    } else {
        f64::INFINITY
    };
    Some(LinearFit { slope_stderr, ..fit })
}

/// Weighted least squares with weights `w_i = 1 / var(y_i)`; the slope error
/// is the model-based one, `sqrt(1 / Σ w (x - x̄_w)^2)`.
pub fn weighted_fit(x: &[f64], y: &[f64], w: &[f64]) -> Option<LinearFit> {
    if x.len() != y.len() || x.len() != w.len() || x.len() < 2 {
        return None;
    }
    let sw: f64 = w.iter().sum();
    let xm = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let ym = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(a, b)| b * (a - xm) * (a - xm)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((a, c), b)| b * (a - xm) * (c - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let residual = (x.iter().zip(y).map(|(a, c)| (c - intercept - slope * a).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
    Some(LinearFit {
        slope,
        intercept,
        slope_stderr: (1.0 / sxx).sqrt(),
        residual,
    })
}

/// Nonnegative least squares for `y ≈ p a + q b` with `p, q ≥ 0`.
pub fn nnls2(a: &[f64], b: &[f64], y: &[f64]) -> (f64, f64) {
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
    let (aa, bb, ab) = (dot(a, a), dot(b, b), dot(a, b));
    let (ay, by) = (dot(a, y), dot(b, y));
    let det = aa * bb - ab * ab;
    if det > 1e-300 {
        let p = (bb * ay - ab * by) / det;
        let q = (aa * by - ab * ay) / det;
        if p >= 0.0 && q >= 0.0 {
            return (p, q);
        }
    }
    let sse = |p: f64, q: f64| {
        y.iter()
            .zip(a.iter().zip(b))
            .map(|(yi, (ai, bi))| (yi - p * ai - q * bi).powi(2))
            .sum::<f64>()
    };
    let only_a = if aa > 0.0 { (ay / aa).max(0.0) } else { 0.0 };
    let only_b = if bb > 0.0 { (by / bb).max(0.0) } else { 0.0 };
    if sse(only_a, 0.0) <= sse(0.0, only_b) {
        (only_a, 0.0)
    } else {
        (0.0, only_b)
    }
}
