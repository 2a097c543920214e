//! Annealed Lyapunov exponents of random maps and the contraction tests
//! built on them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_id, Purpose, StreamRng};
use crate::spaces::{Space, SpacePoint};
use crate::stats::{self, Estimate};
use crate::systems::{enumerate_words, RandomMapSystem, SymbolStream};

/// `λ̂(x; n) = (1/n)·E log Lfⁿ_ω(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentAtPoint {
    pub x: SpacePoint,
    pub n: usize,
    pub estimate: f64,
    pub stderr: f64,
    pub mc_samples: usize,
    /// True when every word of length `n` was enumerated with its weight.
    pub exact: bool,
}

impl ExponentAtPoint {
    pub fn upper(&self, k: f64) -> f64 {
        self.estimate + k * self.stderr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub pass: bool,
    pub n: usize,
    pub margin: f64,
    pub worst_point: SpacePoint,
    pub worst_estimate: f64,
    pub worst_stderr: f64,
    pub eps: f64,
    pub net_size: usize,
    pub mc_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionOnAverageWitness {
    pub alpha: f64,
    pub q: f64,
    pub n: usize,
    /// `None` for the global version (all pairs tested).
    pub radius: Option<f64>,
    pub pair_grid_eps: f64,
    pub pairs_tested: usize,
    pub max_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionFit {
    /// `exp(λ̂_con)`.
    pub q_hat: f64,
    /// Median tail slope of `log diam` per step.
    pub lambda_con: f64,
    pub slopes: Vec<f64>,
    pub success: Vec<bool>,
    pub success_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynchronizationResult {
    pub fraction: f64,
    pub pairs: usize,
    pub trials: usize,
}

/// A slope counts as contracting when it is below this.
pub const SUCCESS_SLOPE: f64 = -1e-9;

/// Diameters below this are dropped from slope fits (circle wrap precision).
pub const DIAMETER_FLOOR: f64 = 1e-12;

const BALL_POINTS: usize = 16;

fn log_lipschitz_sample(system: &RandomMapSystem, x: &SpacePoint, n: usize, seed: u64, sample: usize) -> Result<f64> {
    let mut symbols = SymbolStream::new(system.sampler(), seed, stream_id(Purpose::Word, sample as u64));
    Ok(system.log_lipschitz_run((0..n).map(|_| symbols.next_symbol()), x)?.0)
}

fn exponent_inner(
    system: &RandomMapSystem,
    x: &SpacePoint,
    n: usize,
    mc_samples: usize,
    seed: u64,
    parallel: bool,
) -> Result<ExponentAtPoint> {
    if let Some(words) = enumerate_words(system.weights(), n, mc_samples) {
        let mut total = 0.0;
        for (w, p) in words {
            let (l, _) = system.log_lipschitz_run(w.iter().map(|s| *s as usize), x)?;
            total += p * l;
        }
        return Ok(ExponentAtPoint {
            x: *x,
            n,
            estimate: total / n as f64,
            stderr: 0.0,
            mc_samples,
            exact: true,
        });
    }
    let values: Vec<f64> = if parallel {
        (0..mc_samples)
            .into_par_iter()
            .map(|i| log_lipschitz_sample(system, x, n, seed, i).map(|v| v / n as f64))
            .collect::<Result<_>>()?
    } else {
        (0..mc_samples)
            .map(|i| log_lipschitz_sample(system, x, n, seed, i).map(|v| v / n as f64))
            .collect::<Result<_>>()?
    };
    let e = stats::mean_stderr(&values);
    Ok(ExponentAtPoint {
        x: *x,
        n,
        estimate: e.value,
        stderr: e.stderr,
        mc_samples,
        exact: false,
    })
}

fn check_point(system: &RandomMapSystem, x: &SpacePoint) -> Result<()> {
    let space = system.space();
    if x.dim() != space.point_dim() {
        return Err(Error::DimensionMismatch {
            expected: space.point_dim(),
            found: x.dim(),
        });
    }
    Ok(())
}

/// Monte Carlo (or exact, when `atoms^n ≤ mc_samples`) annealed exponent at
/// `x`. Word `i` comes from stream `i` of `seed`, so different points see
/// the same words.
pub fn annealed_exponent_at(system: &RandomMapSystem, x: &SpacePoint, n: usize, mc_samples: usize, seed: u64) -> Result<ExponentAtPoint> {
    if n < 1 || mc_samples < 10 {
        return Err(Error::InvalidParameter(format!(
            "need n >= 1 and mc_samples >= 10 (got n={n}, mc_samples={mc_samples})"
        )));
    }
    check_point(system, x)?;
    exponent_inner(system, x, n, mc_samples, seed, true)
}

/// Exponents at every point of the `eps`-net.
pub fn exponents_on_net(system: &RandomMapSystem, eps: f64, n: usize, mc_samples: usize, seed: u64) -> Result<Vec<ExponentAtPoint>> {
    if n < 1 || mc_samples < 10 {
        return Err(Error::InvalidParameter(format!(
            "need n >= 1 and mc_samples >= 10 (got n={n}, mc_samples={mc_samples})"
        )));
    }
    let net = system.space().epsilon_net(eps)?;
    net.par_iter()
        .map(|x| exponent_inner(system, x, n, mc_samples, seed, false))
        .collect()
}

fn worst_of(points: &[ExponentAtPoint], k: f64) -> &ExponentAtPoint {
    points
        .iter()
        .reduce(|a, b| if b.upper(k) > a.upper(k) { b } else { a })
        .expect("nets are nonempty")
}

/// Passes iff `λ̂(x) + 3σ < −margin` at every net point.
pub fn mostly_contracting_certificate(
    system: &RandomMapSystem,
    eps: f64,
    n: usize,
    mc_samples: usize,
    margin: f64,
    seed: u64,
) -> Result<Certificate> {
    if !(margin >= 0.0) {
        return Err(Error::InvalidParameter(format!("margin must be >= 0, got {margin}")));
    }
    let points = exponents_on_net(system, eps, n, mc_samples, seed)?;
    let worst = worst_of(&points, 3.0);
    Ok(Certificate {
        pass: points.iter().all(|p| p.upper(3.0) < -margin),
        n,
        margin,
        worst_point: worst.x,
        worst_estimate: worst.estimate,
        worst_stderr: worst.stderr,
        eps,
        net_size: points.len(),
        mc_samples,
        seed,
    })
}

/// `max_x λ̂(x; n)` over the net; the returned record is the maximizer.
pub fn lambda_of_system(system: &RandomMapSystem, n: usize, mc_samples: usize, eps: f64, seed: u64) -> Result<ExponentAtPoint> {
    let points = exponents_on_net(system, eps, n, mc_samples, seed)?;
    Ok(points
        .into_iter()
        .reduce(|a, b| if b.estimate > a.estimate { b } else { a })
        .expect("nets are nonempty"))
}

fn net_pairs(space: &Space, net: &[SpacePoint], radius: Option<f64>) -> Vec<(usize, usize, f64)> {
    let mut pairs = Vec::new();
    for i in 0..net.len() {
        for j in i + 1..net.len() {
            let d = space.dist(&net[i], &net[j]);
            if d > 0.0 && radius.is_none_or(|r| d < r) {
                pairs.push((i, j, d));
            }
        }
    }
    pairs
}

/// Orbits of every net point along one word, recorded after each step.
fn net_orbits(system: &RandomMapSystem, net: &[SpacePoint], n: usize, seed: u64, trial: usize) -> Result<Vec<Vec<SpacePoint>>> {
    let word = system.sample_word(n, seed, stream_id(Purpose::Word, trial as u64));
    let mut current = net.to_vec();
    let mut out = Vec::with_capacity(n);
    for &s in &word.symbols {
        for p in current.iter_mut() {
            *p = system.apply(s as usize, p)?;
        }
        out.push(current.clone());
    }
    Ok(out)
}

/// Search `(alpha, n)` in lexicographic order for a pair with
/// `max_{pairs} (Ê[d(fⁿx,fⁿy)^α]/d(x,y)^α + 3σ) < 1`.
#[allow(clippy::too_many_arguments)]
pub fn contraction_on_average_search(
    system: &RandomMapSystem,
    alphas: &[f64],
    n_max: usize,
    radius: Option<f64>,
    pair_grid_eps: f64,
    mc_samples: usize,
    seed: u64,
) -> Result<ContractionOnAverageWitness> {
    if alphas.is_empty() || alphas.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
        return Err(Error::InvalidParameter("alphas must lie in (0, 1]".into()));
    }
    if n_max < 1 || mc_samples < 2 {
        return Err(Error::InvalidParameter("need n_max >= 1 and mc_samples >= 2".into()));
    }
    let space = system.space();
    let net = space.epsilon_net(pair_grid_eps)?;
    let pairs = net_pairs(&space, &net, radius);
    if pairs.is_empty() {
        return Err(Error::NotFound("no net pairs within the radius".into()));
    }
    let na = alphas.len();
    // sums[(a * n_max + k) * pairs + p] accumulates the ratio and its square
    let per_trial: Vec<Vec<f64>> = (0..mc_samples)
        .into_par_iter()
        .map(|t| {
            let orbits = net_orbits(system, &net, n_max, seed, t)?;
            let mut ratios = vec![0.0; na * n_max * pairs.len()];
            for (k, images) in orbits.iter().enumerate() {
                for (p, &(i, j, d0)) in pairs.iter().enumerate() {
                    let r = space.dist(&images[i], &images[j]) / d0;
                    for (a, alpha) in alphas.iter().enumerate() {
                        ratios[(a * n_max + k) * pairs.len() + p] = if *alpha == 1.0 { r } else { r.powf(*alpha) };
                    }
                }
            }
            Ok(ratios)
        })
        .collect::<Result<_>>()?;
    let m = mc_samples as f64;
    let mut column = vec![0.0; mc_samples];
    for (a, alpha) in alphas.iter().enumerate() {
        for k in 0..n_max {
            let mut q = f64::NEG_INFINITY;
            let mut max_ratio = f64::NEG_INFINITY;
            for p in 0..pairs.len() {
                let idx = (a * n_max + k) * pairs.len() + p;
                for (c, row) in column.iter_mut().zip(&per_trial) {
                    *c = row[idx];
                }
                let mean = stats::mean(&column);
                let var = stats::variance(&column);
                max_ratio = max_ratio.max(mean);
                q = q.max(mean + 3.0 * (var / m).sqrt());
            }
            if q < 1.0 {
                return Ok(ContractionOnAverageWitness {
                    alpha: *alpha,
                    q,
                    n: k + 1,
                    radius,
                    pair_grid_eps,
                    pairs_tested: pairs.len(),
                    max_ratio,
                });
            }
        }
    }
    Err(Error::NotFound(format!(
        "no (alpha, n) with q < 1 for alphas {alphas:?}, n <= {n_max}"
    )))
}

/// 16 points spread over the `delta0`-ball around `x`, plus `x` itself.
fn ball_points(space: &Space, x: &SpacePoint, delta0: f64, seed: u64, trial: usize) -> Vec<SpacePoint> {
    let mut pts = vec![*x];
    match space {
        Space::Projective { dim } if *dim >= 3 => {
            let mut rng = StreamRng::for_task(seed, Purpose::StartPoint, trial as u64);
            let c = x.coords();
            let angle = delta0.min(1.0).asin();
            for _ in 0..BALL_POINTS {
                let v = space.sample_uniform(&mut rng);
                let dot: f64 = v.coords().iter().zip(c).map(|(a, b)| a * b).sum();
                let mut t: Vec<f64> = v.coords().iter().zip(c).map(|(a, b)| a - dot * b).collect();
                let tn = t.iter().map(|a| a * a).sum::<f64>().sqrt();
                if tn < 1e-12 {
                    continue;
                }
                for a in t.iter_mut() {
                    *a /= tn;
                }
                let y: Vec<f64> = c.iter().zip(&t).map(|(a, b)| angle.cos() * a + angle.sin() * b).collect();
                pts.push(SpacePoint::line(&y).expect("nonzero"));
            }
        }
        _ => {
            // one-dimensional parameter: spread evenly over [x − δ, x + δ]
            let len = space.parameter_length();
            let s0 = space.to_unit(x);
            let step = match space {
                Space::Projective { .. } => delta0.min(1.0).asin() / std::f64::consts::PI,
                _ => delta0 / len,
            };
            for i in 0..BALL_POINTS {
                let u = -1.0 + 2.0 * i as f64 / (BALL_POINTS - 1) as f64;
                let s = s0 + u * step;
                let s = if space.is_periodic() {
                    s.rem_euclid(1.0)
                } else {
                    s.clamp(0.0, 1.0)
                };
                pts.push(space.from_unit(s));
            }
        }
    }
    pts
}

fn diameter(space: &Space, pts: &[SpacePoint]) -> f64 {
    let mut d = 0.0f64;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            d = d.max(space.dist(&pts[i], &pts[j]));
        }
    }
    d
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Tail slope of `log diam fⁿ_ω(B(x, δ₀))` against `n` for each trial word.
pub fn exponential_contraction_fit(
    system: &RandomMapSystem,
    x: &SpacePoint,
    delta0: f64,
    n_max: usize,
    trials: usize,
    seed: u64,
) -> Result<ContractionFit> {
    if !(delta0 > 0.0) || n_max < 2 || trials < 1 {
        return Err(Error::InvalidParameter(format!(
            "need delta0 > 0, n_max >= 2, trials >= 1 (got {delta0}, {n_max}, {trials})"
        )));
    }
    check_point(system, x)?;
    let space = system.space();
    let slopes: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut pts = ball_points(&space, x, delta0, seed, t);
            let word = system.sample_word(n_max, seed, stream_id(Purpose::Trial, t as u64));
            let mut series = Vec::with_capacity(n_max + 1);
            series.push((0.0, diameter(&space, &pts)));
            for (k, &s) in word.symbols.iter().enumerate() {
                for p in pts.iter_mut() {
                    *p = system.apply(s as usize, p)?;
                }
                series.push(((k + 1) as f64, diameter(&space, &pts)));
            }
            Ok(tail_slope(&series, n_max))
        })
        .collect::<Result<_>>()?;
    let lambda_con = median(&slopes);
    let success: Vec<bool> = slopes.iter().map(|s| *s < SUCCESS_SLOPE).collect();
    let success_fraction = success.iter().filter(|s| **s).count() as f64 / trials as f64;
    Ok(ContractionFit {
        q_hat: lambda_con.exp(),
        lambda_con,
        slopes,
        success,
        success_fraction,
    })
}

/// Least-squares slope of `log d` over `n ∈ [n_max/2, n_max]`, skipping
/// diameters under the floor. If the ball collapsed below the floor before
/// the window, the last resolvable stretch of equal length is used instead.
fn tail_slope(series: &[(f64, f64)], n_max: usize) -> f64 {
    let usable: Vec<(f64, f64)> = series
        .iter()
        .filter(|(_, d)| *d >= DIAMETER_FLOOR)
        .map(|(n, d)| (*n, d.ln()))
        .collect();
    let start = (n_max / 2) as f64;
    let mut window: Vec<(f64, f64)> = usable.iter().copied().filter(|(n, _)| *n >= start).collect();
    if window.len() < 2 {
        let keep = (n_max - n_max / 2 + 1).min(usable.len());
        window = usable[usable.len() - keep..].to_vec();
    }
    if window.len() < 2 {
        // collapsed within one step
        return f64::NEG_INFINITY;
    }
    let xs: Vec<f64> = window.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = window.iter().map(|p| p.1).collect();
    stats::linear_fit(&xs, &ys).map(|f| f.slope).unwrap_or(0.0)
}

/// Fraction of (net pair, trial) with `d(fⁿx, fⁿy) < threshold`, over pairs
/// initially farther apart than `threshold`.
pub fn synchronization_test(
    system: &RandomMapSystem,
    pair_grid_eps: f64,
    n: usize,
    trials: usize,
    threshold: f64,
    seed: u64,
) -> Result<SynchronizationResult> {
    if !(threshold > 0.0) || n < 1 || trials < 1 {
        return Err(Error::InvalidParameter("need threshold > 0, n >= 1, trials >= 1".into()));
    }
    let space = system.space();
    let net = space.epsilon_net(pair_grid_eps)?;
    let pairs: Vec<(usize, usize, f64)> = net_pairs(&space, &net, None).into_iter().filter(|p| p.2 > threshold).collect();
    let counts: Vec<usize> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let word = system.sample_word(n, seed, stream_id(Purpose::Word, t as u64));
            let mut pts = net.clone();
            for &s in &word.symbols {
                for p in pts.iter_mut() {
                    *p = system.apply(s as usize, p)?;
                }
            }
            Ok(pairs.iter().filter(|(i, j, _)| space.dist(&pts[*i], &pts[*j]) < threshold).count())
        })
        .collect::<Result<_>>()?;
    let total = (pairs.len() * trials) as f64;
    Ok(SynchronizationResult {
        fraction: if total > 0.0 {
            counts.iter().sum::<usize>() as f64 / total
        } else {
            0.0
        },
        pairs: pairs.len(),
        trials,
    })
}

/// Exponent estimates at one point for several `n`, sharing words.
pub fn exponent_profile(system: &RandomMapSystem, x: &SpacePoint, ns: &[usize], mc_samples: usize, seed: u64) -> Result<Vec<Estimate>> {
    ns.iter()
        .map(|&n| annealed_exponent_at(system, x, n, mc_samples, seed).map(|e| Estimate::new(e.estimate, e.stderr)))
        .collect()
}
