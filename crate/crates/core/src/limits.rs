//! Empirical limit theorems for `S_n = log‖Aⁿ(ω)x‖` (cocycles) and
//! `S_n = log Lfⁿ_ω(x)` (1-D random maps): CLT, Berry–Esseen rate, large
//! deviations and the strong law.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cocycles::Cocycle;
use crate::error::{Error, Result};
use crate::rng::{pair_index, stream_id, Purpose, StreamRng};
use crate::spaces::{SpacePoint, MAX_DIM};
use crate::stats::{self, Estimate, LinearFit};
use crate::systems::{RandomMapSystem, SymbolStream};

pub const MIN_TRIALS: usize = 1000;
/// Below this `σ̂²` counts as degenerate.
pub const DEGENERATE_VARIANCE: f64 = 1e-6;
/// Smallest tail count kept in a deviation fit.
pub const MIN_TAIL_COUNT: usize = 20;

const JACKKNIFE_GROUPS: usize = 50;

/// What `S_n` is computed from.
#[derive(Debug, Clone, Copy)]
pub enum SampleSource<'a> {
    /// `log ‖Aⁿ(ω)x‖` for a unit vector `x`.
    Cocycle { cocycle: &'a Cocycle, x: &'a [f64] },
    /// `log Lfⁿ_ω(x)` for a random map (exact derivative on 1-D spaces).
    Maps { system: &'a RandomMapSystem, x: SpacePoint },
    /// Sums of i.i.d. ±1 steps; a calibration source with `λ = 0`, `σ = 1`.
    Rademacher,
}

impl SampleSource<'_> {
    fn validate(&self) -> Result<()> {
        match self {
            SampleSource::Cocycle { cocycle, x } => {
                if x.len() != cocycle.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: cocycle.dim(),
                        found: x.len(),
                    });
                }
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidParameter(format!("start vector has norm {norm}")));
                }
                Ok(())
            }
            SampleSource::Maps { system, x } => {
                if x.dim() != system.space().point_dim() {
                    return Err(Error::DimensionMismatch {
                        expected: system.space().point_dim(),
                        found: x.dim(),
                    });
                }
                Ok(())
            }
            SampleSource::Rademacher => Ok(()),
        }
    }

    /// `S_n − n·λ̂` along stream `(seed, stream)`, centered step by step so
    /// that constant increments cancel exactly.
    fn centered_sum(&self, n: usize, lambda: f64, seed: u64, stream: u64) -> Result<f64> {
        match self {
            SampleSource::Cocycle { cocycle, x } => {
                let mut v = [0.0; MAX_DIM];
                v[..x.len()].copy_from_slice(x);
                let mut symbols = SymbolStream::new(cocycle.sampler(), seed, stream);
                let mut acc = 0.0;
                for _ in 0..n {
                    acc += cocycle.growth_along([symbols.next_symbol()], &mut v) - lambda;
                }
                Ok(acc)
            }
            SampleSource::Maps { system, x } => {
                let mut symbols = SymbolStream::new(system.sampler(), seed, stream);
                let mut p = *x;
                let mut acc = 0.0;
                for k in 0..n {
                    let s = symbols.next_symbol();
                    acc += system.log_step_lipschitz(s, &p, k)?.0 - lambda;
                    p = system.apply(s, &p)?;
                }
                Ok(acc)
            }
            SampleSource::Rademacher => {
                let mut rng = StreamRng::new(seed, stream);
                let mut acc = 0.0;
                let mut left = n;
                while left > 0 {
                    let bits = rng.next_u64();
                    let take = left.min(64);
                    let mask = if take == 64 { u64::MAX } else { (1u64 << take) - 1 };
                    let ones = (bits & mask).count_ones() as f64;
                    acc += 2.0 * ones - take as f64;
                    left -= take;
                }
                Ok(acc - n as f64 * lambda)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnSamples {
    pub n_list: Vec<usize>,
    pub trials: usize,
    pub lambda_hat: Estimate,
    /// Where `λ̂` came from (e.g. "furstenberg", "analytic").
    pub lambda_source: String,
    pub seed: u64,
    /// `z[k][t] = (S_n − nλ̂)/√n` for `n = n_list[k]`.
    pub z: Vec<Vec<f64>>,
}

fn centered_sums(source: &SampleSource, n_list: &[usize], trials: usize, lambda: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    source.validate()?;
    n_list
        .iter()
        .map(|&n| {
            (0..trials)
                .into_par_iter()
                .map(|t| source.centered_sum(n, lambda, seed, stream_id(Purpose::Trial, pair_index(n as u64, t as u64))))
                .collect()
        })
        .collect()
}

/// Independent words for every `(n, trial)`.
pub fn collect_sn(
    source: &SampleSource,
    n_list: &[usize],
    trials: usize,
    lambda_hat: Estimate,
    lambda_source: &str,
    seed: u64,
) -> Result<SnSamples> {
    if trials < MIN_TRIALS {
        return Err(Error::InvalidParameter(format!("need trials >= {MIN_TRIALS}, got {trials}")));
    }
    if n_list.is_empty() || n_list.contains(&0) {
        return Err(Error::InvalidParameter("n_list must be nonempty with n >= 1".into()));
    }
    let sums = centered_sums(source, n_list, trials, lambda_hat.value, seed)?;
    let z = sums
        .into_iter()
        .zip(n_list)
        .map(|(s, &n)| {
            let r = (n as f64).sqrt();
            s.into_iter().map(|v| v / r).collect()
        })
        .collect();
    Ok(SnSamples {
        n_list: n_list.to_vec(),
        trials,
        lambda_hat,
        lambda_source: lambda_source.to_string(),
        seed,
        z,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltRow {
    pub n: usize,
    pub mean: f64,
    /// Stderr of the mean with `λ̂`'s own error folded in.
    pub mean_band: f64,
    pub sigma2: f64,
    pub sigma2_stderr: f64,
    /// KS distance of `Z_n/σ̂` to the standard normal (NaN when degenerate).
    pub ks: f64,
    pub degenerate: bool,
}

pub fn clt_test(samples: &SnSamples) -> Result<Vec<CltRow>> {
    if samples.trials < MIN_TRIALS {
        return Err(Error::InvalidParameter(format!("need trials >= {MIN_TRIALS}")));
    }
    Ok(samples
        .n_list
        .iter()
        .zip(&samples.z)
        .map(|(&n, z)| {
            let m = stats::mean_stderr(z);
            let sigma2 = stats::variance(z);
            let degenerate = sigma2 < DEGENERATE_VARIANCE;
            let ks = if degenerate {
                f64::NAN
            } else {
                let s = sigma2.sqrt();
                stats::ks_distance(z, |u| stats::standard_normal_cdf(u / s))
            };
            CltRow {
                n,
                mean: m.value,
                mean_band: m.stderr.hypot((n as f64).sqrt() * samples.lambda_hat.stderr),
                sigma2,
                sigma2_stderr: stats::jackknife_variance_stderr(z, JACKKNIFE_GROUPS),
                ks,
                degenerate,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerryEsseenFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    /// `(n, sup_u |F̂(u) − Φ(u)|)`.
    pub gaps: Vec<(usize, f64)>,
}

/// Slope of `log sup|F̂_{Z_n/σ̂} − Φ|` against `log n`.
pub fn berry_esseen_fit(samples: &SnSamples) -> Result<BerryEsseenFit> {
    if samples.n_list.len() < 3 {
        return Err(Error::InvalidParameter("need at least three values of n".into()));
    }
    let rows = clt_test(samples)?;
    if let Some(r) = rows.iter().find(|r| r.degenerate) {
        return Err(Error::DegenerateVariance { n: r.n });
    }
    let gaps: Vec<(usize, f64)> = rows.iter().map(|r| (r.n, r.ks)).collect();
    let x: Vec<f64> = gaps.iter().map(|g| (g.0 as f64).ln()).collect();
    let y: Vec<f64> = gaps.iter().map(|g| g.1.ln()).collect();
    let LinearFit {
        slope,
        intercept,
        slope_stderr,
        ..
    } = stats::linear_fit(&x, &y).ok_or_else(|| Error::InvalidParameter("n values must differ".into()))?;
    Ok(BerryEsseenFit {
        slope,
        intercept,
        slope_stderr,
        gaps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationCell {
    pub n: usize,
    pub eps: f64,
    pub p_hat: f64,
    pub count: usize,
    /// Fewer than the minimum tail count; excluded from fits.
    pub omitted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub eps: f64,
    /// `ĥ(ε) = −slope/ε²`.
    pub h: f64,
    pub h_stderr: f64,
    pub slope: f64,
    pub points: usize,
    /// `log p̂` strictly decreasing along the retained `n`.
    pub decreasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationFit {
    pub cells: Vec<DeviationCell>,
    /// One entry per ε; `None` when fewer than three cells survive.
    pub fits: Vec<Option<RateFit>>,
    /// Second differences of `ε ↦ ε²ĥ(ε)` over consecutive fitted ε.
    pub convexity: Vec<f64>,
}

/// Tail probabilities `p̂(n, ε) = P(|S_n/n − λ̂| > ε)` and exponential
/// rates from weighted fits of `log p̂` against `n`.
pub fn large_deviation_fit(
    source: &SampleSource,
    eps_list: &[f64],
    n_list: &[usize],
    trials: usize,
    lambda_hat: Estimate,
    seed: u64,
) -> Result<DeviationFit> {
    if eps_list.iter().any(|e| !(*e > 0.0)) || eps_list.is_empty() {
        return Err(Error::InvalidParameter("eps values must be positive".into()));
    }
    if n_list.is_empty() || n_list.contains(&0) {
        return Err(Error::InvalidParameter("n_list must be nonempty with n >= 1".into()));
    }
    if trials < 1 {
        return Err(Error::InvalidParameter("need trials >= 1".into()));
    }
    let sums = centered_sums(source, n_list, trials, lambda_hat.value, seed)?;
    let mut cells = Vec::new();
    let mut fits = Vec::new();
    for &eps in eps_list {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut ws = Vec::new();
        for (&n, s) in n_list.iter().zip(&sums) {
            let count = s.iter().filter(|v| (*v / n as f64).abs() > eps).count();
            let p_hat = count as f64 / trials as f64;
            let omitted = count < MIN_TAIL_COUNT;
            if !omitted {
                xs.push(n as f64);
                ys.push(p_hat.ln());
                // Var(log p̂) ≈ (1 − p)/count
                ws.push(count as f64 / (1.0 - p_hat).max(1e-12));
            }
            cells.push(DeviationCell {
                n,
                eps,
                p_hat,
                count,
                omitted,
            });
        }
        let fit = if xs.len() >= 3 {
            stats::weighted_fit(&xs, &ys, &ws).map(|f| RateFit {
                eps,
                h: -f.slope / (eps * eps),
                h_stderr: f.slope_stderr / (eps * eps),
                slope: f.slope,
                points: xs.len(),
                decreasing: ys.windows(2).all(|w| w[1] < w[0]),
            })
        } else {
            None
        };
        fits.push(fit);
    }
    let fitted: Vec<f64> = fits.iter().flatten().map(|f| f.eps * f.eps * f.h).collect();
    let convexity = fitted.windows(3).map(|w| w[2] - 2.0 * w[1] + w[0]).collect();
    Ok(DeviationFit { cells, fits, convexity })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SllnResult {
    pub n: usize,
    pub fraction: f64,
    pub sigma_hat: f64,
    pub band: f64,
}

/// Share of trajectories with `|S_n/n − λ̂| < 3σ̂/√n + tol`, where `tol`
/// covers `λ̂`'s own error.
pub fn slln_check(source: &SampleSource, n_big: usize, trials: usize, lambda_hat: Estimate, seed: u64) -> Result<SllnResult> {
    if n_big < 1000 || trials < 2 {
        return Err(Error::InvalidParameter("need n_big >= 1000 and trials >= 2".into()));
    }
    let sums = centered_sums(source, &[n_big], trials, lambda_hat.value, seed)?.remove(0);
    let n = n_big as f64;
    let z: Vec<f64> = sums.iter().map(|s| s / n.sqrt()).collect();
    let sigma_hat = stats::variance(&z).sqrt();
    let band = 3.0 * sigma_hat / n.sqrt() + 3.0 * lambda_hat.stderr + 1e-12;
    let inside = sums.iter().filter(|s| (*s / n).abs() < band).count();
    Ok(SllnResult {
        n: n_big,
        fraction: inside as f64 / trials as f64,
        sigma_hat,
        band,
    })
}
