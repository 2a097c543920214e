//! Ulam discretization of the annealed Koopman operator
//! `Pφ(x) = Σ_t p_t φ(f_t(x))` on 1-D spaces, and the finite-grid versions
//! of stationary measures, spectral gap, Cesàro averages, basins and
//! convergence of laws.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::SparseStochastic;
use crate::rng::{stream_id, Purpose, StreamRng};
use crate::spaces::{Space, SpacePoint};
use crate::stats;
use crate::systems::{enumerate_words, RandomMapSystem, SymbolStream};

/// Largest supported grid.
pub const MAX_CELLS: usize = 1 << 16;

/// Largest grid for the spectral-gap iteration.
pub const MAX_GAP_CELLS: usize = 4096;

/// Sample points per cell used to build a row.
pub const SUBCELL_POINTS: usize = 8;

const GAP_BUDGET: usize = 1 << 18;
const GAP_WINDOW: usize = 64;
const GAP_TOL: f64 = 1e-4;

const HOLDER_NET_EPS: f64 = 1.0 / 64.0;
const HOLDER_WORDS: usize = 256;
const HOLDER_KNOTS: usize = 8;

/// Uniform cells on a 1-D space, indexed along its unit parametrization.
///
/// Periodic spaces put centers at `k/N` (so the base point is a center);
/// intervals put them at `(k + 1/2)/N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    space: Space,
    cells: usize,
}

impl Grid {
    pub fn new(space: Space, cells: usize) -> Result<Self> {
        space.validate()?;
        if !space.is_one_dimensional() {
            return Err(Error::InvalidParameter("grids are only supported on 1-D spaces".into()));
        }
        if let Space::Interval { a, b } = space {
            if !(b > a) {
                return Err(Error::InvalidParameter("degenerate interval".into()));
            }
        }
        if cells == 0 {
            return Err(Error::InvalidParameter("grid needs at least one cell".into()));
        }
        if cells > MAX_CELLS {
            return Err(Error::UnsupportedResolution {
                points: cells,
                cap: MAX_CELLS,
            });
        }
        Ok(Grid { space, cells })
    }

    /// Smallest grid whose cell width is at most `eps`.
    pub fn with_width(space: Space, eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
        }
        let n = (space.parameter_length() / eps).ceil().max(1.0);
        if n > MAX_CELLS as f64 {
            return Err(Error::UnsupportedResolution {
                points: n as usize,
                cap: MAX_CELLS,
            });
        }
        Self::new(space, n as usize)
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn len(&self) -> usize {
        self.cells
    }

    pub fn is_empty(&self) -> bool {
        self.cells == 0
    }

    /// Cell width in the natural length unit of the space.
    pub fn width(&self) -> f64 {
        self.space.parameter_length() / self.cells as f64
    }

    /// Unit-parameter coordinate of cell `i`'s center.
    pub fn center_unit(&self, i: usize) -> f64 {
        let n = self.cells as f64;
        if self.space.is_periodic() {
            i as f64 / n
        } else {
            (i as f64 + 0.5) / n
        }
    }

    pub fn center(&self, i: usize) -> SpacePoint {
        self.space.from_unit(self.center_unit(i))
    }

    pub fn centers(&self) -> Vec<SpacePoint> {
        (0..self.cells).map(|i| self.center(i)).collect()
    }

    pub fn cell_of_unit(&self, s: f64) -> usize {
        let n = self.cells as f64;
        if self.space.is_periodic() {
            ((s * n).round() as i64).rem_euclid(self.cells as i64) as usize
        } else {
            ((s * n).floor().max(0.0) as usize).min(self.cells - 1)
        }
    }

    pub fn cell_of(&self, p: &SpacePoint) -> usize {
        self.cell_of_unit(self.space.to_unit(p))
    }

    /// Midpoints of `k` equal sub-cells of cell `i`.
    fn sub_points(&self, i: usize, k: usize) -> impl Iterator<Item = SpacePoint> + '_ {
        let c = self.center_unit(i);
        let n = self.cells as f64;
        (0..k).map(move |s| {
            let off = ((s as f64 + 0.5) / k as f64 - 0.5) / n;
            self.space.from_unit(c + off)
        })
    }
}

/// Row-stochastic Ulam matrix of a random map on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizedKoopman {
    pub grid: Grid,
    pub matrix: SparseStochastic,
}

/// `Q[i][j] = Σ_t p_t · (share of cell i's sample points with f_t(·) in cell j)`.
pub fn discretize(system: &RandomMapSystem, grid: &Grid) -> Result<DiscretizedKoopman> {
    if system.space() != grid.space() {
        return Err(Error::InvalidParameter(format!(
            "system lives on {:?} but the grid on {:?}",
            system.space(),
            grid.space()
        )));
    }
    let k = SUBCELL_POINTS;
    let rows: Vec<Vec<(u32, f64)>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let mut entries: Vec<(u32, f64)> = Vec::with_capacity(k * system.atoms());
            for p in grid.sub_points(i, k) {
                for (map, w) in system.maps().iter().zip(system.weights()) {
                    let y = map.try_apply(&p)?;
                    entries.push((grid.cell_of(&y) as u32, w / k as f64));
                }
            }
            entries.sort_by_key(|e| e.0);
            let mut row: Vec<(u32, f64)> = Vec::with_capacity(entries.len());
            for (j, v) in entries {
                match row.last_mut() {
                    Some(last) if last.0 == j => last.1 += v,
                    _ => row.push((j, v)),
                }
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(DiscretizedKoopman {
        grid: grid.clone(),
        matrix: SparseStochastic::new(rows)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryReport {
    /// One stationary probability vector per closed class, full length.
    pub measures: Vec<Vec<f64>>,
    pub multiplicity: usize,
    pub classes: Vec<Vec<usize>>,
    pub periods: Vec<usize>,
    pub transient: Vec<usize>,
    /// `absorption[c][i]`: probability that the chain from cell `i` ends in class `c`.
    pub absorption: Vec<Vec<f64>>,
    /// Second-largest eigenvalue modulus (1 when there is no gap).
    pub rho2: f64,
    /// False when the ρ₂ iteration ran out of budget.
    pub rho2_converged: bool,
}

impl StationaryReport {
    pub fn is_aperiodic(&self) -> bool {
        self.periods.iter().all(|p| *p == 1)
    }
}

pub fn stationary_report(q: &DiscretizedKoopman, tol: f64) -> Result<StationaryReport> {
    stationary_report_of(&q.matrix, tol)
}

/// Closed classes, their stationary vectors and periods, absorption
/// probabilities of transient cells and ρ₂.
pub fn stationary_report_of(q: &SparseStochastic, tol: f64) -> Result<StationaryReport> {
    let (classes, transient) = q.recurrent_classes();
    let measures = q.ergodic_measures(&classes, tol)?;
    let periods: Vec<usize> = classes.iter().map(|c| q.period(c)).collect();
    let absorption = q.absorption(&classes, &transient)?;
    let (rho2, rho2_converged) = if classes.len() >= 2 || periods.iter().any(|p| *p > 1) {
        (1.0, true)
    } else if q.len() > MAX_GAP_CELLS {
        (f64::NAN, false)
    } else {
        deflated_power(q, &measures[0])
    };
    Ok(StationaryReport {
        multiplicity: classes.len(),
        measures,
        classes,
        periods,
        transient,
        absorption,
        rho2,
        rho2_converged,
    })
}

/// ρ₂ by power iteration on functions with zero mean under `mu`; the rate is
/// a windowed geometric mean of norm growth so complex pairs average out.
fn deflated_power(q: &SparseStochastic, mu: &[f64]) -> (f64, bool) {
    let n = q.len();
    let mut rng = StreamRng::for_task(0, Purpose::TestFunction, 0);
    let mut phi: Vec<f64> = (0..n).map(|_| 2.0 * rng.uniform() - 1.0).collect();
    let deflate = |v: &mut Vec<f64>| {
        let m: f64 = v.iter().zip(mu).map(|(a, b)| a * b).sum();
        v.iter_mut().for_each(|x| *x -= m);
    };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    deflate(&mut phi);
    let n0 = norm(&phi);
    if n0 == 0.0 {
        return (0.0, true);
    }
    phi.iter_mut().for_each(|x| *x /= n0);
    let mut logs = vec![0.0];
    let mut prev_rate = f64::NAN;
    for k in 1..=GAP_BUDGET {
        let mut next = q.apply(&phi);
        deflate(&mut next);
        let nn = norm(&next);
        // a collapse to round-off means every remaining mode is ~0
        if nn < 1e-14 {
            return (0.0, true);
        }
        next.iter_mut().for_each(|x| *x /= nn);
        phi = next;
        logs.push(logs[k - 1] + nn.ln());
        if k % GAP_WINDOW == 0 && k >= 2 * GAP_WINDOW {
            let rate = ((logs[k] - logs[k - GAP_WINDOW]) / GAP_WINDOW as f64).exp();
            if (rate - prev_rate).abs() < GAP_TOL {
                return (rate.min(1.0), true);
            }
            prev_rate = rate;
        }
    }
    (prev_rate.min(1.0), false)
}

/// Second-largest eigenvalue modulus of `Q`; 1 when eigenvalue 1 is
/// repeated or some class is periodic.
pub fn spectral_gap_estimate(q: &SparseStochastic) -> Result<f64> {
    if q.len() > MAX_GAP_CELLS {
        return Err(Error::UnsupportedResolution {
            points: q.len(),
            cap: MAX_GAP_CELLS,
        });
    }
    let report = stationary_report_of(q, 1e-12)?;
    if report.rho2_converged {
        Ok(report.rho2)
    } else {
        Err(Error::NoConvergence {
            iterations: GAP_BUDGET,
            residual: report.rho2,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CesaroResult {
    /// `A_nφ = (1/n) Σ_{i<n} Qⁱφ`.
    pub average: Vec<f64>,
    /// `Πφ`.
    pub projection: Vec<f64>,
    /// `‖A_nφ − Πφ‖_∞`.
    pub distance: f64,
}

/// `Πφ(i) = Σ_c absorption_c(i)·⟨μ_c, φ⟩`.
pub fn projection(report: &StationaryReport, phi: &[f64]) -> Vec<f64> {
    let means: Vec<f64> = report
        .measures
        .iter()
        .map(|mu| mu.iter().zip(phi).map(|(a, b)| a * b).sum())
        .collect();
    (0..phi.len())
        .map(|i| report.absorption.iter().zip(&means).map(|(h, m)| h[i] * m).sum())
        .collect()
}

pub fn cesaro_projection(q: &SparseStochastic, report: &StationaryReport, phi: &[f64], n: usize) -> Result<CesaroResult> {
    if n < 1 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    if phi.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: q.len(),
            found: phi.len(),
        });
    }
    let mut power = phi.to_vec();
    let mut sum = phi.to_vec();
    for _ in 1..n {
        power = q.apply(&power);
        for (s, p) in sum.iter_mut().zip(&power) {
            *s += p;
        }
    }
    let average: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let projection = projection(report, phi);
    let distance = average.iter().zip(&projection).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(CesaroResult {
        average,
        projection,
        distance,
    })
}

/// Outcome of a finite check of `|Pⁿφ|_α ≤ q|φ|_α + C‖φ‖_∞`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderCheck {
    pub q_hat: f64,
    pub c_hat: f64,
    /// True when no `q < 1` fits the sample.
    pub violated: bool,
    /// `(|φ|_α, ‖φ‖_∞, |Pⁿφ|_α)` per sample function; the first `probes`
    /// entries are sawtooth probes.
    pub samples: Vec<(f64, f64, f64)>,
    pub probes: usize,
    pub net_size: usize,
    pub words: usize,
}

/// A test function on the space.
enum TestFunction {
    /// `x ↦ tri(k·d(x, base))/k` with `tri` the distance to the nearest
    /// integer: Lipschitz seminorm one, sup norm at most `1/2k`.
    Sawtooth { base: SpacePoint, k: f64 },
    /// Piecewise-linear in the unit parameter with knots at `j/8`.
    PiecewiseLinear { values: Vec<f64> },
    /// `x ↦ xᵀSx` on lines.
    Quadratic { s: Vec<f64>, dim: usize },
}

impl TestFunction {
    fn random(space: &Space, rng: &mut StreamRng) -> Self {
        match space {
            Space::Projective { dim } if *dim >= 3 => {
                let d = *dim;
                let mut s = vec![0.0; d * d];
                for i in 0..d {
                    for j in i..d {
                        let v = 2.0 * rng.uniform() - 1.0;
                        s[i * d + j] = v;
                        s[j * d + i] = v;
                    }
                }
                TestFunction::Quadratic { s, dim: d }
            }
            _ => {
                let mut values: Vec<f64> = (0..=HOLDER_KNOTS).map(|_| 2.0 * rng.uniform() - 1.0).collect();
                if space.is_periodic() {
                    values[HOLDER_KNOTS] = values[0];
                }
                TestFunction::PiecewiseLinear { values }
            }
        }
    }

    fn eval(&self, space: &Space, p: &SpacePoint) -> f64 {
        match self {
            TestFunction::Sawtooth { base, k } => {
                let s = k * space.dist(p, base);
                (s - s.round()).abs() / k
            }
            TestFunction::PiecewiseLinear { values } => {
                let s = space.to_unit(p) * HOLDER_KNOTS as f64;
                let k = (s.floor() as usize).min(HOLDER_KNOTS - 1);
                let t = s - k as f64;
                values[k] * (1.0 - t) + values[k + 1] * t
            }
            TestFunction::Quadratic { s, dim } => {
                let x = p.coords();
                let mut acc = 0.0;
                for i in 0..*dim {
                    for j in 0..*dim {
                        acc += x[i] * s[i * dim + j] * x[j];
                    }
                }
                acc
            }
        }
    }
}

fn holder_seminorm(space: &Space, net: &[SpacePoint], values: &[f64], alpha: f64, radius: Option<f64>) -> f64 {
    let mut best = 0.0f64;
    for i in 0..net.len() {
        for j in i + 1..net.len() {
            let d = space.dist(&net[i], &net[j]);
            if d > 0.0 && radius.is_none_or(|r| d < r) {
                best = best.max((values[i] - values[j]).abs() / d.powf(alpha));
            }
        }
    }
    best
}

/// Empirical check of the Doeblin–Fortet type inequality on a net.
///
/// The sample holds sawtooth probes of the distance to a base point at
/// scales `k = 1, 2, 4, …` down to the net spacing, followed by
/// `sample_functions` random piecewise-linear functions (random quadratic
/// forms on higher projective spaces). Probes have a small sup norm next to
/// their seminorm, so `q̂` is their largest ratio `|Pⁿφ|_α / |φ|_α`; `Ĉ` is
/// then the smallest constant making the inequality hold across the whole
/// sample.
pub fn holder_contraction_check(
    system: &RandomMapSystem,
    alpha: f64,
    n: usize,
    radius: Option<f64>,
    sample_functions: usize,
    seed: u64,
) -> Result<HolderCheck> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if sample_functions < 2 || n < 1 {
        return Err(Error::InvalidParameter("need n >= 1 and at least two sample functions".into()));
    }
    let space = system.space();
    let net = space.epsilon_net(HOLDER_NET_EPS)?;
    // images of every net point under each word, with word weights
    let words: Vec<(Vec<usize>, f64)> = match enumerate_words(system.weights(), n, HOLDER_WORDS) {
        Some(ws) => ws
            .into_iter()
            .map(|(w, p)| (w.into_iter().map(|s| s as usize).collect(), p))
            .collect(),
        None => (0..HOLDER_WORDS)
            .map(|i| {
                let mut st = SymbolStream::new(system.sampler(), seed, stream_id(Purpose::Word, i as u64));
                ((0..n).map(|_| st.next_symbol()).collect(), 1.0 / HOLDER_WORDS as f64)
            })
            .collect(),
    };
    let images: Vec<Vec<SpacePoint>> = words
        .par_iter()
        .map(|(w, _)| {
            net.iter()
                .map(|x| {
                    let mut p = *x;
                    for &s in w {
                        p = system.apply(s, &p)?;
                    }
                    Ok(p)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut functions = Vec::new();
    let mut k = 1.0;
    while k * HOLDER_NET_EPS <= 0.25 {
        functions.push(TestFunction::Sawtooth { base: net[0], k });
        k *= 2.0;
    }
    let probes = functions.len();
    for i in 1..=sample_functions {
        let mut rng = StreamRng::for_task(seed, Purpose::TestFunction, i as u64);
        functions.push(TestFunction::random(&space, &mut rng));
    }
    let samples: Vec<(f64, f64, f64)> = functions
        .par_iter()
        .map(|f| {
            let vals: Vec<f64> = net.iter().map(|p| f.eval(&space, p)).collect();
            let pushed: Vec<f64> = (0..net.len())
                .map(|x| words.iter().zip(&images).map(|((_, w), im)| w * f.eval(&space, &im[x])).sum())
                .collect();
            let a = holder_seminorm(&space, &net, &vals, alpha, radius);
            let b = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let y = holder_seminorm(&space, &net, &pushed, alpha, radius);
            (a, b, y)
        })
        .collect();
    let q_hat = samples[..probes]
        .iter()
        .filter(|s| s.0 > 0.0)
        .map(|s| s.2 / s.0)
        .fold(0.0, f64::max);
    let c_hat = samples
        .iter()
        .filter(|s| s.1 > 0.0)
        .map(|s| (s.2 - q_hat * s.0) / s.1)
        .fold(0.0, f64::max);
    Ok(HolderCheck {
        q_hat,
        c_hat,
        violated: q_hat >= 1.0 - 1e-9,
        samples,
        probes,
        net_size: net.len(),
        words: words.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinReport {
    /// `attribution[i][c]`: share of trials from cell `i` attributed to measure `c`.
    pub attribution: Vec<Vec<f64>>,
    /// Per-cell share of trials not attributed to any measure.
    pub unattributed: Vec<f64>,
    /// Mean of `unattributed` over cells.
    pub unattributed_fraction: f64,
    /// Total-variation threshold `2·(1/N + n^{−1/2})`.
    pub threshold: f64,
}

/// Attribute each cell's empirical occupation (steps `1..=n`) to the
/// nearest ergodic measure in total variation, when within the threshold.
pub fn empirical_basins(
    system: &RandomMapSystem,
    grid: &Grid,
    report: &StationaryReport,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<BasinReport> {
    if n < 1 || trials < 1 {
        return Err(Error::InvalidParameter("need n >= 1 and trials >= 1".into()));
    }
    if report.measures.iter().any(|m| m.len() != grid.len()) {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            found: report.measures.first().map_or(0, |m| m.len()),
        });
    }
    let threshold = 2.0 * (1.0 / grid.len() as f64 + 1.0 / (n as f64).sqrt());
    let per_cell: Vec<(Vec<f64>, f64)> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let mut hits = vec![0usize; report.measures.len()];
            let mut miss = 0usize;
            let mut counts = vec![0u32; grid.len()];
            let mut touched: Vec<usize> = Vec::with_capacity(n);
            for t in 0..trials {
                let mut symbols = SymbolStream::new(system.sampler(), seed, stream_id(Purpose::Word, t as u64));
                let mut p = grid.center(i);
                for _ in 0..n {
                    p = system.apply(symbols.next_symbol(), &p)?;
                    let c = grid.cell_of(&p);
                    if counts[c] == 0 {
                        touched.push(c);
                    }
                    counts[c] += 1;
                }
                let best = report
                    .measures
                    .iter()
                    .enumerate()
                    .map(|(m, mu)| {
                        // ½Σ|occ − μ| over touched cells plus untouched μ mass
                        let mut diff = 0.0;
                        let mut covered = 0.0;
                        for &c in &touched {
                            diff += (counts[c] as f64 / n as f64 - mu[c]).abs();
                            covered += mu[c];
                        }
                        (m, 0.5 * (diff + (1.0 - covered).max(0.0)))
                    })
                    .min_by(|a, b| a.1.total_cmp(&b.1));
                match best {
                    Some((m, tv)) if tv <= threshold => hits[m] += 1,
                    _ => miss += 1,
                }
                for &c in &touched {
                    counts[c] = 0;
                }
                touched.clear();
            }
            Ok((
                hits.iter().map(|h| *h as f64 / trials as f64).collect(),
                miss as f64 / trials as f64,
            ))
        })
        .collect::<Result<_>>()?;
    let (attribution, unattributed): (Vec<_>, Vec<_>) = per_cell.into_iter().unzip();
    let unattributed_fraction = stats::mean(&unattributed);
    Ok(BasinReport {
        attribution,
        unattributed,
        unattributed_fraction,
        threshold,
    })
}

/// Wasserstein-1 distance between two finite measures on a 1-D space,
/// given as `(unit coordinate, mass)` atoms with equal total mass. The
/// result is in the natural length unit of the space (angle for lines).
pub fn wasserstein1(space: &Space, a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let mut pts: Vec<(f64, f64)> = a.iter().copied().chain(b.iter().map(|(s, m)| (*s, -m))).collect();
    pts.sort_by(|x, y| x.0.total_cmp(&y.0));
    if pts.is_empty() {
        return 0.0;
    }
    // D = F_a − F_b is constant between consecutive atoms
    let mut segments: Vec<(f64, f64)> = Vec::with_capacity(pts.len() + 1);
    let mut d = 0.0;
    for k in 0..pts.len() {
        d += pts[k].1;
        let end = if k + 1 < pts.len() { pts[k + 1].0 } else { 1.0 };
        segments.push((end - pts[k].0, d));
    }
    let len = space.parameter_length();
    if !space.is_periodic() {
        return len * segments.iter().map(|(l, v)| l * v.abs()).sum::<f64>();
    }
    // before the first atom D is 0
    segments.push((pts[0].0, 0.0));
    // min_c Σ l |D − c| is attained at a weighted median of D
    let mut sorted = segments.clone();
    sorted.sort_by(|x, y| x.1.total_cmp(&y.1));
    let total: f64 = sorted.iter().map(|s| s.0).sum();
    let mut acc = 0.0;
    let mut c = sorted[0].1;
    for (l, v) in &sorted {
        acc += l;
        c = *v;
        if acc >= 0.5 * total {
            break;
        }
    }
    len * segments.iter().map(|(l, v)| l * (v - c).abs()).sum::<f64>()
}

/// Atoms of a grid measure at the cell centers.
pub fn grid_atoms(grid: &Grid, mu: &[f64]) -> Vec<(f64, f64)> {
    mu.iter()
        .enumerate()
        .filter(|(_, m)| **m > 0.0)
        .map(|(i, m)| (grid.center_unit(i), *m))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawConvergence {
    pub n: Vec<usize>,
    /// `W₁` from the law of `fⁿ_ω(x)` to the nearest stationary measure.
    pub w1: Vec<f64>,
    pub nearest: Vec<usize>,
    pub trials: usize,
}

pub fn law_convergence_test(
    system: &RandomMapSystem,
    x: &SpacePoint,
    grid: &Grid,
    report: &StationaryReport,
    n_list: &[usize],
    trials: usize,
    seed: u64,
) -> Result<LawConvergence> {
    if n_list.is_empty() || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("n_list must be nonempty and strictly ascending".into()));
    }
    if trials < 1 {
        return Err(Error::InvalidParameter("need trials >= 1".into()));
    }
    let space = system.space();
    let n_max = *n_list.last().expect("nonempty");
    let positions: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut symbols = SymbolStream::new(system.sampler(), seed, stream_id(Purpose::Trial, t as u64));
            let mut p = *x;
            let mut out = Vec::with_capacity(n_list.len());
            let mut next = 0;
            for k in 1..=n_max {
                p = system.apply(symbols.next_symbol(), &p)?;
                if k == n_list[next] {
                    out.push(space.to_unit(&p));
                    next += 1;
                }
            }
            if n_list[0] == 0 {
                out.insert(0, space.to_unit(x));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let targets: Vec<Vec<(f64, f64)>> = report.measures.iter().map(|mu| grid_atoms(grid, mu)).collect();
    let mass = 1.0 / trials as f64;
    let mut w1 = Vec::with_capacity(n_list.len());
    let mut nearest = Vec::with_capacity(n_list.len());
    for k in 0..n_list.len() {
        let law: Vec<(f64, f64)> = positions.iter().map(|p| (p[k], mass)).collect();
        let (best, d) = targets
            .iter()
            .enumerate()
            .map(|(c, t)| (c, wasserstein1(&space, &law, t)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap_or((usize::MAX, f64::NAN));
        w1.push(d);
        nearest.push(best);
    }
    Ok(LawConvergence {
        n: n_list.to_vec(),
        w1,
        nearest,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::markov::eigenvalue_one_multiplicity;
    use crate::systems::FiberMap;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn third_rotation() -> RandomMapSystem {
        RandomMapSystem::new(vec![(FiberMap::circle_wave(1.0 / 3.0, 0.0, 1).unwrap(), 1.0)]).unwrap()
    }

    fn ulam(sys: &RandomMapSystem, n: usize) -> (DiscretizedKoopman, StationaryReport) {
        let q = discretize(sys, &Grid::new(sys.space(), n).unwrap()).unwrap();
        let r = stationary_report(&q, 1e-13).unwrap();
        (q, r)
    }

    #[test]
    fn ifs_rows_and_uniform_measure() {
        let (q, r) = ulam(&catalog::ifs_halves(), 64);
        for row in q.matrix.rows() {
            assert_eq!(row.len(), 2);
            assert!(row.iter().all(|e| e.1 == 0.5));
        }
        assert_eq!(r.multiplicity, 1);
        assert!(r.measures[0].iter().all(|m| (m - 1.0 / 64.0).abs() < 1e-6));
    }

    #[test]
    fn third_rotation_is_a_three_cycle() {
        let (q, r) = ulam(&third_rotation(), 3);
        let d = q.matrix.to_dense();
        for i in 0..3 {
            assert_eq!(d[(i, (i + 1) % 3)], 1.0);
        }
        assert_eq!(r.multiplicity, 1);
        assert_eq!(r.periods, vec![3]);
        assert!(r.measures[0].iter().all(|m| (m - 1.0 / 3.0).abs() < 1e-14));
        assert_eq!(spectral_gap_estimate(&q.matrix).unwrap(), 1.0);
    }

    #[test]
    fn two_attractor_has_two_classes() {
        let sys = catalog::two_attractor();
        let (q, r) = ulam(&sys, 128);
        assert_eq!(r.multiplicity, 2);
        assert_eq!(r.classes, vec![vec![0], vec![64]]);
        assert_eq!(r.periods, vec![1, 1]);
        assert_eq!(q.matrix.row(0), &[(0, 1.0)]);
        assert_eq!(q.matrix.row(64), &[(64, 1.0)]);
        assert_eq!(r.rho2, 1.0);
        assert_eq!(eigenvalue_one_multiplicity(&q.matrix.to_dense(), 1e-8), 2);
    }

    #[test]
    fn ifs_gap_matches_dense_eigenvalues() {
        let (q, _) = ulam(&catalog::ifs_halves(), 64);
        let rho = spectral_gap_estimate(&q.matrix).unwrap();
        let mut mods: Vec<f64> = q.matrix.to_dense().complex_eigenvalues().iter().map(|z| z.norm()).collect();
        mods.sort_by(|a, b| b.total_cmp(a));
        assert!((mods[0] - 1.0).abs() < 1e-9);
        assert!(rho < 1.0);
        // the subdominant spectrum is 0 with a large Jordan block, which a
        // dense solver resolves only to about ε^(1/64)
        assert!(rho < 1e-2 && mods[1] < 1e-2, "{rho} vs {}", mods[1]);
        let dense = q.matrix.to_dense();
        let mu = DVector::from_element(64, 1.0 / 64.0);
        let mut x = DMatrix::<f64>::identity(64, 64) - DMatrix::from_fn(64, 64, |_, j| mu[j]);
        for _ in 0..64 {
            x = &dense * x;
        }
        assert!(x.amax() < 1e-9, "{}", x.amax());
    }

    #[test]
    fn mixing_gap_matches_dense_eigenvalues() {
        let (q, _) = ulam(&catalog::minimal_circle(), 64);
        let rho = spectral_gap_estimate(&q.matrix).unwrap();
        let mut mods: Vec<f64> = q.matrix.to_dense().complex_eigenvalues().iter().map(|z| z.norm()).collect();
        mods.sort_by(|a, b| b.total_cmp(a));
        assert!((rho - mods[1]).abs() < 1e-2, "{rho} vs {}", mods[1]);
    }

    #[test]
    fn cesaro_examples() {
        let (q, r) = ulam(&catalog::ifs_halves(), 64);
        let one = vec![1.0; 64];
        for n in [1, 5, 50] {
            assert_eq!(cesaro_projection(&q.matrix, &r, &one, n).unwrap().distance, 0.0);
        }
        let x: Vec<f64> = (0..64).map(|i| q.grid.center_unit(i)).collect();
        let d100 = cesaro_projection(&q.matrix, &r, &x, 100).unwrap().distance;
        let d200 = cesaro_projection(&q.matrix, &r, &x, 200).unwrap().distance;
        assert!(d200 <= 0.02 && d200 <= d100, "{d100} {d200}");

        let (q, r) = ulam(&third_rotation(), 3);
        for n in [3, 6, 30] {
            let c = cesaro_projection(&q.matrix, &r, &[1.0, 0.0, 0.0], n).unwrap();
            assert!(c.average.iter().all(|a| *a == 1.0 / 3.0));
            assert_eq!(c.distance, 0.0);
        }
    }

    #[test]
    fn class_indicators_sum_to_one() {
        let sys = catalog::two_attractor();
        let (_, r) = ulam(&sys, 128);
        for i in 0..128 {
            let s: f64 = r.absorption.iter().map(|h| h[i]).sum();
            assert!((s - 1.0).abs() < 1e-9, "cell {i}: {s}");
        }
        // the basin of 0 is (−1/4, 1/4)
        assert!(r.absorption[0][10] > 1.0 - 1e-9);
        assert!(r.absorption[1][50] > 1.0 - 1e-9);
    }

    #[test]
    fn holder_examples() {
        let h = holder_contraction_check(&catalog::ifs_halves(), 1.0, 1, None, 12, 0).unwrap();
        assert!((h.q_hat - 0.5).abs() < 1e-9, "{h:?}");
        assert!(h.c_hat.abs() < 1e-12);
        assert!(!h.violated);
        let h = holder_contraction_check(&catalog::random_rotations(), 1.0, 1, None, 12, 0).unwrap();
        assert!(h.violated, "{h:?}");
    }

    #[test]
    fn holder_projective_pair() {
        let h = holder_contraction_check(&catalog::hyperbolic_rotation_projective(), 0.1, 30, None, 8, 1).unwrap();
        assert!(h.q_hat < 1.0 && !h.violated, "{h:?}");
    }

    #[test]
    fn basin_examples() {
        let sys = catalog::ifs_halves();
        let (q, r) = ulam(&sys, 64);
        let b = empirical_basins(&sys, &q.grid, &r, 20_000, 3, 0).unwrap();
        assert!(b.attribution.iter().all(|a| a[0] == 1.0));

        let sys = catalog::two_attractor();
        let (q, r) = ulam(&sys, 128);
        let b = empirical_basins(&sys, &q.grid, &r, 1000, 4, 0).unwrap();
        assert!(b.unattributed_fraction <= 2.0 / 128.0, "{}", b.unattributed_fraction);
        for i in 0..128 {
            let s = q.grid.center_unit(i);
            if (s - 0.25).abs() > 0.01 && (s - 0.75).abs() > 0.01 {
                let expect = if (0.25..0.75).contains(&s) { 1 } else { 0 };
                assert_eq!(b.attribution[i][expect], 1.0, "cell {i}");
            }
        }
    }

    #[test]
    fn rotation_basins_fill_in_with_n() {
        let sys = catalog::random_rotations();
        // 16 visits cover at most a quarter of 64 cells: TV ≥ 3/4 > threshold 0.53
        let (q, r) = ulam(&sys, 64);
        let short = empirical_basins(&sys, &q.grid, &r, 16, 4, 0).unwrap();
        let long = empirical_basins(&sys, &q.grid, &r, 20_000, 4, 0).unwrap();
        assert_eq!(short.unattributed_fraction, 1.0);
        assert_eq!(long.unattributed_fraction, 0.0);
    }

    #[test]
    fn law_convergence_examples() {
        let sys = catalog::ifs_halves();
        let (q, r) = ulam(&sys, 64);
        let l = law_convergence_test(&sys, &SpacePoint::scalar(0.0), &q.grid, &r, &[2, 5, 10], 20_000, 0).unwrap();
        for (n, w) in l.n.iter().zip(&l.w1) {
            assert!(*w <= 0.5f64.powi(*n as i32) + 1.0 / 64.0, "n={n}: {w}");
        }

        let sys = third_rotation();
        let (q, r) = ulam(&sys, 3);
        let l = law_convergence_test(&sys, &SpacePoint::scalar(0.0), &q.grid, &r, &[3, 30, 301], 10, 0).unwrap();
        assert!(l.w1.iter().all(|w| *w > 0.1));

        let sys = catalog::two_attractor();
        let (q, r) = ulam(&sys, 128);
        let l = law_convergence_test(&sys, &SpacePoint::scalar(0.1), &q.grid, &r, &[1, 4, 16], 200, 0).unwrap();
        assert!(l.nearest.iter().all(|c| *c == 0));
        assert!(l.w1[2] < 1e-6 && l.w1[1] < l.w1[0], "{:?}", l.w1);
    }

    #[test]
    fn wasserstein_oracles() {
        let line = Space::Interval { a: 0.0, b: 1.0 };
        assert!((wasserstein1(&line, &[(0.2, 1.0)], &[(0.7, 1.0)]) - 0.5).abs() < 1e-15);
        let circle = Space::Circle;
        assert!((wasserstein1(&circle, &[(0.05, 1.0)], &[(0.95, 1.0)]) - 0.1).abs() < 1e-12);
        // uniform atoms against themselves shifted by half a cell
        let a: Vec<(f64, f64)> = (0..10).map(|i| (i as f64 / 10.0, 0.1)).collect();
        let b: Vec<(f64, f64)> = (0..10).map(|i| ((i as f64 + 0.5) / 10.0, 0.1)).collect();
        assert!((wasserstein1(&circle, &a, &b) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn refinement_consistency() {
        for sys in [catalog::ifs_halves(), catalog::two_attractor(), catalog::minimal_circle()] {
            for n in [32, 64] {
                let (qa, ra) = ulam(&sys, n);
                let (qb, rb) = ulam(&sys, 2 * n);
                assert_eq!(ra.multiplicity, rb.multiplicity);
                for (ma, mb) in ra.measures.iter().zip(&rb.measures) {
                    let w = wasserstein1(&sys.space(), &grid_atoms(&qa.grid, ma), &grid_atoms(&qb.grid, mb));
                    assert!(w <= 2.0 * qa.grid.width(), "N={n}: {w}");
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn rows_are_stochastic(c1 in -0.9f64..0.9, c2 in -0.9f64..0.9, rho in 0.0f64..1.0, n in 4usize..200) {
            let sys = RandomMapSystem::new(vec![
                (FiberMap::circle_wave(rho, c1, 1).unwrap(), 0.3),
                (FiberMap::circle_wave(0.0, c2, 2).unwrap(), 0.7),
            ]).unwrap();
            let q = discretize(&sys, &Grid::new(Space::Circle, n).unwrap()).unwrap();
            for row in q.matrix.rows() {
                prop_assert!(row.iter().all(|e| e.1 >= 0.0));
                prop_assert!((row.iter().map(|e| e.1).sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn cesaro_distance_nonincreasing(seed in 0u64..200) {
            let sys = catalog::two_attractor();
            let (q, r) = ulam(&sys, 32);
            let mut rng = StreamRng::new(seed, 0);
            let phi: Vec<f64> = (0..32).map(|_| rng.uniform()).collect();
            let mut prev = f64::INFINITY;
            for n in [1, 2, 4, 8, 16, 32, 64] {
                let d = cesaro_projection(&q.matrix, &r, &phi, n).unwrap().distance;
                prop_assert!(d <= prev + 1.0 / n as f64);
                prev = d;
            }
        }
    }
}
