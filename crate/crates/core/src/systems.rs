//! Random maps: finitely supported distributions over fiber maps of one
//! space, i.i.d. words, orbits along words and local Lipschitz constants.

use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::spaces::{circle_dist, wrap_unit, Space, SpacePoint, MAX_DIM};

/// Maximum number of atoms in a random map or cocycle.
pub const MAX_ATOMS: usize = 64;

/// Tolerance for fiber-map images leaving the space.
pub const ESCAPE_TOL: f64 = 1e-9;

/// Finite-difference step, in the metric of the space.
pub const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum MapFamily {
    /// `x ↦ slope·x + offset` on an interval.
    AffineInterval { slope: f64, offset: f64 },
    /// `x ↦ x + rotation − (amplitude / 2πk)·sin(2πk x) mod 1`, with
    /// derivative `1 − amplitude·cos(2πk x)`.
    CircleWave { rotation: f64, amplitude: f64, frequency: u32 },
    /// Projective action `x̂ ↦ M x̂`.
    ProjectiveOfMatrix { matrix: DMatrix<f64> },
    /// Piecewise-linear interpolation of `values` at `knots`. On the circle
    /// the values are a lift (`values[last] = values[0] + 1` for degree one)
    /// taken mod 1.
    UserTabulated { knots: Vec<f64>, values: Vec<f64> },
}

/// A single Lipschitz self-map of a [`Space`].
#[derive(Debug, Clone)]
pub struct FiberMap {
    space: Space,
    family: MapFamily,
    lipschitz: f64,
    /// Row-major copy of the projective matrix.
    rows: Vec<f64>,
}

impl FiberMap {
    pub fn affine(space: Space, slope: f64, offset: f64) -> Result<Self> {
        if !matches!(space, Space::Interval { .. }) {
            return Err(Error::InvalidParameter("affine maps act on intervals".into()));
        }
        if !slope.is_finite() || !offset.is_finite() {
            return Err(Error::InvalidParameter("non-finite affine coefficients".into()));
        }
        Self::build(space, MapFamily::AffineInterval { slope, offset })
    }

    pub fn circle_wave(rotation: f64, amplitude: f64, frequency: u32) -> Result<Self> {
        if frequency == 0 {
            return Err(Error::InvalidParameter("frequency must be at least 1".into()));
        }
        if !rotation.is_finite() || !amplitude.is_finite() {
            return Err(Error::InvalidParameter("non-finite circle map parameters".into()));
        }
        Self::build(
            Space::Circle,
            MapFamily::CircleWave {
                rotation,
                amplitude,
                frequency,
            },
        )
    }

    pub fn projective(matrix: DMatrix<f64>) -> Result<Self> {
        let m = matrix.nrows();
        if matrix.ncols() != m {
            return Err(Error::ShapeMismatch(format!("matrix is {}x{}", matrix.nrows(), matrix.ncols())));
        }
        if !(2..=MAX_DIM).contains(&m) {
            return Err(Error::InvalidParameter(format!(
                "projective maps need 2 <= m <= {MAX_DIM}, got {m}"
            )));
        }
        Self::build(Space::Projective { dim: m }, MapFamily::ProjectiveOfMatrix { matrix })
    }

    pub fn tabulated(space: Space, knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let (lo, hi) = match space {
            Space::Interval { a, b } => (a, b),
            Space::Circle => (0.0, 1.0),
            Space::Projective { .. } => return Err(Error::InvalidParameter("tabulated maps are supported on 1-D spaces only".into())),
        };
        if knots.len() < 2 || knots.len() != values.len() {
            return Err(Error::ShapeMismatch("need at least two knots and one value per knot".into()));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidParameter("knots must be strictly increasing".into()));
        }
        if (knots[0] - lo).abs() > 1e-12 || (knots[knots.len() - 1] - hi).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("knots must span the space [{lo}, {hi}]")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite tabulated value".into()));
        }
        Self::build(space, MapFamily::UserTabulated { knots, values })
    }

    fn build(space: Space, family: MapFamily) -> Result<Self> {
        space.validate()?;
        let (lipschitz, rows) = match &family {
            MapFamily::AffineInterval { slope, .. } => (slope.abs(), Vec::new()),
            MapFamily::CircleWave { amplitude, .. } => (1.0 + amplitude.abs(), Vec::new()),
            MapFamily::ProjectiveOfMatrix { matrix } => {
                let sv = matrix.clone().svd(false, false).singular_values;
                let smax = sv.max();
                let smin = sv.min();
                if !(smin > 1e-10) {
                    return Err(Error::NotInvertible(format!("smallest singular value {smin:e}")));
                }
                let m = matrix.nrows();
                let rows = (0..m * m).map(|k| matrix[(k / m, k % m)]).collect();
                ((smax / smin).powi(2), rows)
            }
            MapFamily::UserTabulated { knots, values } => (
                knots
                    .windows(2)
                    .zip(values.windows(2))
                    .map(|(k, v)| ((v[1] - v[0]) / (k[1] - k[0])).abs())
                    .fold(0.0, f64::max),
                Vec::new(),
            ),
        };
        let map = FiberMap {
            space,
            family,
            lipschitz,
            rows,
        };
        map.check_self_map()?;
        Ok(map)
    }

    /// Images of the ε-net must stay in the space.
    fn check_self_map(&self) -> Result<()> {
        let eps = match self.space {
            Space::Projective { .. } => return Ok(()),
            Space::Circle => 1.0 / 256.0,
            Space::Interval { a, b } => ((b - a) / 256.0).max(f64::MIN_POSITIVE),
        };
        for p in self.space.epsilon_net(eps)? {
            self.try_apply(&p)?;
        }
        Ok(())
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn family(&self) -> &MapFamily {
        &self.family
    }

    /// Image of `p`, or `EscapedSpace` if it leaves the space by more than
    /// [`ESCAPE_TOL`]. Images within the tolerance are clamped back in.
    #[inline]
    pub fn try_apply(&self, p: &SpacePoint) -> Result<SpacePoint> {
        match &self.family {
            MapFamily::AffineInterval { slope, offset } => {
                let y = slope * p.value() + offset;
                self.clamp_interval(y)
            }
            MapFamily::CircleWave {
                rotation,
                amplitude,
                frequency,
            } => {
                let x = p.value();
                let k = *frequency as f64;
                let y = x + rotation - amplitude / (2.0 * PI * k) * (2.0 * PI * k * x).sin();
                Ok(SpacePoint::scalar(wrap_unit(y)))
            }
            MapFamily::ProjectiveOfMatrix { .. } => {
                let m = p.dim();
                let mut y = [0.0; MAX_DIM];
                matvec(&self.rows, p.coords(), &mut y[..m]);
                SpacePoint::line(&y[..m])
            }
            MapFamily::UserTabulated { knots, values } => {
                let y = interpolate(knots, values, p.value());
                match self.space {
                    Space::Circle => Ok(SpacePoint::scalar(wrap_unit(y))),
                    _ => self.clamp_interval(y),
                }
            }
        }
    }

    fn clamp_interval(&self, y: f64) -> Result<SpacePoint> {
        let Space::Interval { a, b } = self.space else {
            unreachable!("interval family on non-interval space")
        };
        if !(y >= a - ESCAPE_TOL && y <= b + ESCAPE_TOL) {
            return Err(Error::EscapedSpace(format!("{y} outside [{a}, {b}]")));
        }
        Ok(SpacePoint::scalar(y.clamp(a, b)))
    }

    /// Signed derivative of a 1-D smooth family (`None` otherwise).
    pub fn derivative(&self, x: f64) -> Option<f64> {
        match &self.family {
            MapFamily::AffineInterval { slope, .. } => Some(*slope),
            MapFamily::CircleWave { amplitude, frequency, .. } => Some(1.0 - amplitude * (2.0 * PI * *frequency as f64 * x).cos()),
            _ => None,
        }
    }

    /// Analytic local Lipschitz constant `Lg(z) = ‖Dg(z)‖`, when available.
    pub fn derivative_norm(&self, p: &SpacePoint) -> Option<f64> {
        match &self.family {
            MapFamily::AffineInterval { .. } | MapFamily::CircleWave { .. } => self.derivative(p.value()).map(f64::abs),
            MapFamily::ProjectiveOfMatrix { matrix } => Some(projective_derivative_norm(matrix, &self.rows, p.coords())),
            MapFamily::UserTabulated { .. } => None,
        }
    }

    /// Global Lipschitz constant: `|a|` for affine maps, `sup|f′| = 1 + |c|`
    /// for circle waves, `‖M‖²‖M⁻¹‖²` for projective maps, the largest
    /// slope for tabulated maps.
    pub fn global_lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Central-difference estimate of the local Lipschitz constant at `p`
    /// with step `h`, maximized over an orthonormal frame of directions.
    pub fn fd_lipschitz(&self, p: &SpacePoint, h: f64) -> Result<f64> {
        let ratio = |lo: SpacePoint, hi: SpacePoint| -> Result<f64> {
            let base = self.space.dist(&lo, &hi);
            if base == 0.0 {
                return Ok(0.0);
            }
            Ok(self.space.dist(&self.try_apply(&lo)?, &self.try_apply(&hi)?) / base)
        };
        match self.space {
            Space::Circle => ratio(
                SpacePoint::scalar(wrap_unit(p.value() - h)),
                SpacePoint::scalar(wrap_unit(p.value() + h)),
            ),
            Space::Interval { a, b } => ratio(
                SpacePoint::scalar((p.value() - h).max(a)),
                SpacePoint::scalar((p.value() + h).min(b)),
            ),
            Space::Projective { dim } => {
                let x = DVector::from_column_slice(p.coords());
                let mut best: f64 = 0.0;
                for v in orthonormal_complement(&x).column_iter() {
                    // step of angle h: d = sin(h) ≈ h
                    let plus: Vec<f64> = (0..dim).map(|i| x[i] * h.cos() + v[i] * h.sin()).collect();
                    let minus: Vec<f64> = (0..dim).map(|i| x[i] * h.cos() - v[i] * h.sin()).collect();
                    best = best.max(ratio(SpacePoint::line(&minus)?, SpacePoint::line(&plus)?)?);
                }
                Ok(best)
            }
        }
    }
}

#[inline]
pub(crate) fn matvec(rows: &[f64], x: &[f64], out: &mut [f64]) {
    let m = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = rows[i * m..(i + 1) * m].iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

fn interpolate(knots: &[f64], values: &[f64], x: f64) -> f64 {
    let i = match knots.partition_point(|k| *k <= x) {
        0 => 0,
        i if i >= knots.len() => knots.len() - 2,
        i => i - 1,
    };
    let t = (x - knots[i]) / (knots[i + 1] - knots[i]);
    values[i] + t * (values[i + 1] - values[i])
}

/// Orthonormal basis (as columns) of the complement of the unit vector `x`.
pub(crate) fn orthonormal_complement(x: &DVector<f64>) -> DMatrix<f64> {
    let m = x.len();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(m - 1);
    for i in 0..m {
        let mut v = DVector::zeros(m);
        v[i] = 1.0;
        v -= x * x.dot(&v);
        for b in &basis {
            v -= b * b.dot(&v);
        }
        let n = v.norm();
        if n > 1e-8 {
            basis.push(v / n);
        }
        if basis.len() == m - 1 {
            break;
        }
    }
    DMatrix::from_columns(&basis)
}

/// Operator norm of the differential of `x̂ ↦ Mx̂` at the unit vector `x`:
/// `v ↦ Π_{Mx}(Mv)/‖Mx‖` on `x^⊥`. For m = 2 this is `|det M| / ‖Mx‖²`.
fn projective_derivative_norm(matrix: &DMatrix<f64>, rows: &[f64], x: &[f64]) -> f64 {
    let m = x.len();
    let mut y = [0.0; MAX_DIM];
    matvec(rows, x, &mut y[..m]);
    let ny2: f64 = y[..m].iter().map(|v| v * v).sum();
    if m == 2 {
        let det = rows[0] * rows[3] - rows[1] * rows[2];
        return det.abs() / ny2;
    }
    let xv = DVector::from_column_slice(x);
    let yhat = DVector::from_column_slice(&y[..m]) / ny2.sqrt();
    let proj = DMatrix::identity(m, m) - &yhat * yhat.transpose();
    let b = proj * matrix * orthonormal_complement(&xv) / ny2.sqrt();
    b.svd(false, false).singular_values.max()
}

/// Cumulative table for drawing atom indices.
#[derive(Debug, Clone)]
pub struct AtomSampler {
    cumulative: Vec<f64>,
}

impl AtomSampler {
    pub fn new(weights: &[f64]) -> Result<Self> {
        validate_weights(weights)?;
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        if let Some(last) = cumulative.last_mut() {
            *last = f64::INFINITY;
        }
        Ok(AtomSampler { cumulative })
    }

    #[inline]
    pub fn pick(&self, u: f64) -> u8 {
        self.cumulative.partition_point(|c| *c <= u) as u8
    }

    pub fn len(&self) -> usize {
        self.cumulative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cumulative.is_empty()
    }
}

pub fn validate_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() || weights.len() > MAX_ATOMS {
        return Err(Error::InvalidWeights(format!(
            "need between 1 and {MAX_ATOMS} atoms, got {}",
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(Error::InvalidWeights(format!("weight {w} is not positive")));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidWeights(format!("weights sum to {sum}, not 1")));
    }
    Ok(())
}

/// Endless i.i.d. symbol source for one `(seed, stream)`.
pub struct SymbolStream<'a> {
    sampler: &'a AtomSampler,
    rng: StreamRng,
}

impl<'a> SymbolStream<'a> {
    pub fn new(sampler: &'a AtomSampler, master_seed: u64, stream: u64) -> Self {
        SymbolStream {
            sampler,
            rng: StreamRng::new(master_seed, stream),
        }
    }

    #[inline]
    pub fn next_symbol(&mut self) -> usize {
        self.sampler.pick(self.rng.uniform()) as usize
    }
}

/// A finite sequence of atom indices, applied left to right.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Word {
    pub symbols: Vec<u8>,
    /// `(master_seed, stream)` when the word was sampled.
    pub provenance: Option<(u64, u64)>,
}

impl Word {
    pub fn from_symbols(symbols: Vec<u8>) -> Self {
        Word { symbols, provenance: None }
    }

    pub fn sample(sampler: &AtomSampler, n: usize, master_seed: u64, stream: u64) -> Self {
        let mut s = SymbolStream::new(sampler, master_seed, stream);
        Word {
            symbols: (0..n).map(|_| s.next_symbol() as u8).collect(),
            provenance: Some((master_seed, stream)),
        }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// `self` applied first, then `then`.
    pub fn followed_by(&self, then: &Word) -> Word {
        let mut symbols = self.symbols.clone();
        symbols.extend_from_slice(&then.symbols);
        Word::from_symbols(symbols)
    }
}

/// All words of length `n` with their probabilities, if there are at most
/// `limit` of them.
pub fn enumerate_words(weights: &[f64], n: usize, limit: usize) -> Option<Vec<(Vec<u8>, f64)>> {
    let k = weights.len();
    let count = (k as f64).powi(n as i32);
    if count > limit as f64 {
        return None;
    }
    let mut out = vec![(Vec::with_capacity(n), 1.0)];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|(w, p)| {
                (0..k).map(move |s| {
                    let mut w2 = w.clone();
                    w2.push(s as u8);
                    (w2, p * weights[s])
                })
            })
            .collect();
    }
    Some(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LipschitzMethod {
    Analytic,
    /// Per-step central differences at `step`; `richardson_gap` is the
    /// largest |L(h) − L(h/2)| seen along the orbit.
    FiniteDifference {
        step: f64,
        richardson_gap: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalLipschitz {
    pub log_value: f64,
    pub method: LipschitzMethod,
}

impl LocalLipschitz {
    pub fn value(&self) -> f64 {
        self.log_value.exp()
    }
}

/// A finitely supported random map `f_ω` on one space.
#[derive(Debug, Clone)]
pub struct RandomMapSystem {
    space: Space,
    maps: Vec<FiberMap>,
    weights: Vec<f64>,
    sampler: AtomSampler,
    fd_fallback: bool,
}

impl RandomMapSystem {
    pub fn new(atoms: Vec<(FiberMap, f64)>) -> Result<Self> {
        let (maps, weights): (Vec<_>, Vec<_>) = atoms.into_iter().unzip();
        let sampler = AtomSampler::new(&weights)?;
        let space = maps[0].space();
        if let Some(m) = maps.iter().find(|m| m.space() != space) {
            return Err(Error::InvalidParameter(format!(
                "all fiber maps must share one space ({:?} vs {:?})",
                space,
                m.space()
            )));
        }
        Ok(RandomMapSystem {
            space,
            maps,
            weights,
            sampler,
            fd_fallback: true,
        })
    }

    /// Disable the finite-difference fallback for maps without an analytic
    /// derivative; such maps then make Lipschitz queries fail.
    pub fn without_fd_fallback(mut self) -> Self {
        self.fd_fallback = false;
        self
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn maps(&self) -> &[FiberMap] {
        &self.maps
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sampler(&self) -> &AtomSampler {
        &self.sampler
    }

    pub fn atoms(&self) -> usize {
        self.maps.len()
    }

    pub fn sample_word(&self, n: usize, master_seed: u64, stream: u64) -> Word {
        Word::sample(&self.sampler, n, master_seed, stream)
    }

    fn check_word(&self, word: &Word) -> Result<()> {
        if let Some(s) = word.symbols.iter().find(|s| **s as usize >= self.maps.len()) {
            return Err(Error::InvalidParameter(format!(
                "symbol {s} out of range for {} atoms",
                self.maps.len()
            )));
        }
        Ok(())
    }

    fn check_point(&self, x: &SpacePoint) -> Result<()> {
        if x.dim() != self.space.point_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.space.point_dim(),
                found: x.dim(),
            });
        }
        if !self.space.contains(x, ESCAPE_TOL) {
            return Err(Error::EscapedSpace(format!("start point {x:?}")));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, symbol: usize, x: &SpacePoint) -> Result<SpacePoint> {
        self.maps[symbol].try_apply(x)
    }

    /// Orbit `x, f_{w0}(x), f_{w1}(f_{w0}(x)), …` of length `|word| + 1`.
    pub fn iterate(&self, word: &Word, x: &SpacePoint) -> Result<Vec<SpacePoint>> {
        self.check_word(word)?;
        self.check_point(x)?;
        let mut orbit = Vec::with_capacity(word.len() + 1);
        orbit.push(*x);
        let mut p = *x;
        for &s in &word.symbols {
            p = self.apply(s as usize, &p)?;
            orbit.push(p);
        }
        Ok(orbit)
    }

    /// `log Lf_s(x)` for one step: analytic when available, otherwise a
    /// central difference (with its Richardson gap).
    #[inline]
    pub(crate) fn log_step_lipschitz(&self, symbol: usize, x: &SpacePoint, step: usize) -> Result<(f64, Option<f64>)> {
        let map = &self.maps[symbol];
        let (l, gap) = match map.derivative_norm(x) {
            Some(l) => (l, None),
            None if self.fd_fallback => {
                let l = map.fd_lipschitz(x, FD_STEP)?;
                let l2 = map.fd_lipschitz(x, FD_STEP / 2.0)?;
                (l, Some((l - l2).abs()))
            }
            None => {
                return Err(Error::InvalidParameter(
                    "map has no analytic derivative and finite differences are disabled".into(),
                ))
            }
        };
        if l == 0.0 {
            return Err(Error::ZeroDerivative { step });
        }
        Ok((l.ln(), gap))
    }

    /// `Lfⁿ_ω(x)` along the word, as a product of per-step local constants.
    pub fn local_lipschitz_along(&self, word: &Word, x: &SpacePoint) -> Result<LocalLipschitz> {
        self.check_word(word)?;
        self.check_point(x)?;
        let mut p = *x;
        let mut log_value = 0.0;
        let mut fd_gap: Option<f64> = None;
        for (k, &s) in word.symbols.iter().enumerate() {
            let (l, gap) = self.log_step_lipschitz(s as usize, &p, k)?;
            log_value += l;
            if let Some(g) = gap {
                fd_gap = Some(fd_gap.unwrap_or(0.0).max(g));
            }
            p = self.apply(s as usize, &p)?;
        }
        let method = match fd_gap {
            None => LipschitzMethod::Analytic,
            Some(richardson_gap) => LipschitzMethod::FiniteDifference {
                step: FD_STEP,
                richardson_gap,
            },
        };
        Ok(LocalLipschitz { log_value, method })
    }

    /// Sum of `log Lf` along a symbol sequence; returns the end point too.
    #[inline]
    pub(crate) fn log_lipschitz_run<I: IntoIterator<Item = usize>>(&self, symbols: I, x: &SpacePoint) -> Result<(f64, SpacePoint)> {
        let mut p = *x;
        let mut acc = 0.0;
        for (k, s) in symbols.into_iter().enumerate() {
            acc += self.log_step_lipschitz(s, &p, k)?.0;
            p = self.apply(s, &p)?;
        }
        Ok((acc, p))
    }
}

/// Global Lipschitz constant of one fiber map.
pub fn global_lipschitz(fm: &FiberMap) -> f64 {
    fm.global_lipschitz()
}

/// Circle distance, re-exported for the modules that work on the circle.
pub fn circle_distance(x: f64, y: f64) -> f64 {
    circle_dist(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use proptest::prelude::*;

    #[test]
    fn single_atom_word_is_constant() {
        let sys = RandomMapSystem::new(vec![(FiberMap::affine(Space::Interval { a: 0.0, b: 1.0 }, 0.5, 0.0).unwrap(), 1.0)]).unwrap();
        assert_eq!(sys.sample_word(5, 1, 2).symbols, vec![0; 5]);
    }

    #[test]
    fn fair_coin_frequency() {
        // 3σ binomial band: 0.5 ± 3·sqrt(0.25/1e5) = 0.5 ± 0.00474
        let sys = catalog::ifs_halves();
        let w = sys.sample_word(100_000, 11, 0);
        let zeros = w.symbols.iter().filter(|s| **s == 0).count() as f64 / 1e5;
        assert!((0.494..=0.506).contains(&zeros), "{zeros}");
    }

    #[test]
    fn words_reproduce() {
        let sys = catalog::ifs_halves();
        assert_eq!(sys.sample_word(64, 5, 9), sys.sample_word(64, 5, 9));
        assert_ne!(sys.sample_word(64, 5, 9), sys.sample_word(64, 5, 10));
    }

    #[test]
    fn halving_orbit() {
        let space = Space::Interval { a: 0.0, b: 1.0 };
        let sys = RandomMapSystem::new(vec![
            (FiberMap::affine(space, 0.5, 0.0).unwrap(), 0.5),
            (FiberMap::affine(space, 0.5, 0.0).unwrap(), 0.5),
        ])
        .unwrap();
        let orbit = sys.iterate(&Word::from_symbols(vec![0, 1, 0]), &SpacePoint::scalar(1.0)).unwrap();
        let xs: Vec<f64> = orbit.iter().map(|p| p.value()).collect();
        assert_eq!(xs, vec![1.0, 0.5, 0.25, 0.125]);
        let empty = sys.iterate(&Word::from_symbols(vec![]), &SpacePoint::scalar(0.3)).unwrap();
        assert_eq!(empty.len(), 1);
        let l = sys
            .local_lipschitz_along(&Word::from_symbols(vec![1; 7]), &SpacePoint::scalar(0.3))
            .unwrap();
        assert!((l.value() - 0.5f64.powi(7)).abs() < 1e-15);
        assert_eq!(l.method, LipschitzMethod::Analytic);
    }

    #[test]
    fn rotation_wraps() {
        let sys = RandomMapSystem::new(vec![(FiberMap::circle_wave(0.25, 0.0, 1).unwrap(), 1.0)]).unwrap();
        let orbit = sys.iterate(&Word::from_symbols(vec![0, 0]), &SpacePoint::scalar(0.9)).unwrap();
        assert!((orbit[1].value() - 0.15).abs() < 1e-12);
        assert!((orbit[2].value() - 0.4).abs() < 1e-12);
        let l = sys
            .local_lipschitz_along(&Word::from_symbols(vec![0; 9]), &SpacePoint::scalar(0.37))
            .unwrap();
        assert_eq!(l.value(), 1.0);
    }

    #[test]
    fn escape_is_detected() {
        let space = Space::Interval { a: 0.0, b: 1.0 };
        assert!(matches!(FiberMap::affine(space, 0.5, 0.6), Err(Error::EscapedSpace(_))));
    }

    #[test]
    fn projective_derivative_matches_finite_differences() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        let map = FiberMap::projective(m).unwrap();
        let e1 = SpacePoint::line(&[1.0, 0.0]).unwrap();
        let e2 = SpacePoint::line(&[0.0, 1.0]).unwrap();
        // finite-difference oracle on the projective metric
        let fd1 = map.fd_lipschitz(&e1, 1e-6).unwrap();
        let fd2 = map.fd_lipschitz(&e2, 1e-6).unwrap();
        assert!((fd1 - 0.25).abs() < 1e-6, "{fd1}");
        assert!((fd2 - 4.0).abs() < 1e-5, "{fd2}");
        assert!((map.derivative_norm(&e1).unwrap() - 0.25).abs() < 1e-15);
        assert!((map.derivative_norm(&e2).unwrap() - 4.0).abs() < 1e-15);

        let sys = RandomMapSystem::new(vec![(map, 1.0)]).unwrap();
        let l = sys.local_lipschitz_along(&Word::from_symbols(vec![0]), &e1).unwrap();
        assert!((l.value() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn derivative_norm_matches_fd_3d() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.0, -0.2, 1.5, 0.4, 0.1, 0.0, 0.7]);
        let map = FiberMap::projective(m).unwrap();
        let mut rng = StreamRng::new(3, 3);
        let space = Space::Projective { dim: 3 };
        for _ in 0..20 {
            let p = space.sample_uniform(&mut rng);
            let analytic = map.derivative_norm(&p).unwrap();
            let fd = map.fd_lipschitz(&p, 1e-6).unwrap();
            // basis directions can only under-estimate the operator norm
            assert!(fd <= analytic * (1.0 + 1e-4) + 1e-9);
        }
    }

    #[test]
    fn global_lipschitz_examples() {
        let space = Space::Interval { a: 0.0, b: 1.0 };
        assert_eq!(global_lipschitz(&FiberMap::affine(space, 0.5, 0.25).unwrap()), 0.5);
        let p = FiberMap::projective(DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5])).unwrap();
        assert!((global_lipschitz(&p) - 16.0).abs() < 1e-12);
        let w = FiberMap::circle_wave(0.0, 0.5, 2).unwrap();
        assert!((global_lipschitz(&w) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn circle_wave_derivative_matches_fd() {
        let w = FiberMap::circle_wave(0.1, 0.7, 2).unwrap();
        for k in 0..50 {
            let x = SpacePoint::scalar(k as f64 / 50.0 + 0.003);
            let analytic = w.derivative_norm(&x).unwrap();
            let fd = w.fd_lipschitz(&x, 1e-6).unwrap();
            assert!((fd - analytic).abs() < 1e-4, "{fd} vs {analytic}");
        }
    }

    #[test]
    fn tabulated_uses_finite_differences() {
        let space = Space::Interval { a: 0.0, b: 1.0 };
        let map = FiberMap::tabulated(space, vec![0.0, 0.5, 1.0], vec![0.0, 0.1, 0.6]).unwrap();
        assert!((map.global_lipschitz() - 1.0).abs() < 1e-15);
        let sys = RandomMapSystem::new(vec![(map.clone(), 1.0)]).unwrap();
        let l = sys
            .local_lipschitz_along(&Word::from_symbols(vec![0]), &SpacePoint::scalar(0.25))
            .unwrap();
        assert!((l.value() - 0.2).abs() < 1e-6);
        assert!(matches!(l.method, LipschitzMethod::FiniteDifference { .. }));
        let strict = RandomMapSystem::new(vec![(map, 1.0)]).unwrap().without_fd_fallback();
        assert!(strict
            .local_lipschitz_along(&Word::from_symbols(vec![0]), &SpacePoint::scalar(0.25))
            .is_err());
    }

    #[test]
    fn zero_derivative_is_an_error() {
        let space = Space::Interval { a: 0.0, b: 1.0 };
        let sys = RandomMapSystem::new(vec![(FiberMap::affine(space, 0.0, 0.5).unwrap(), 1.0)]).unwrap();
        assert_eq!(
            sys.local_lipschitz_along(&Word::from_symbols(vec![0]), &SpacePoint::scalar(0.1)),
            Err(Error::ZeroDerivative { step: 0 })
        );
    }

    #[test]
    fn weights_are_validated() {
        let space = Space::Interval { a: 0.0, b: 1.0 };
        let m = FiberMap::affine(space, 0.5, 0.0).unwrap();
        assert!(matches!(
            RandomMapSystem::new(vec![(m.clone(), 0.5), (m.clone(), 0.4)]),
            Err(Error::InvalidWeights(_))
        ));
        assert!(RandomMapSystem::new(vec![(m.clone(), 1.0), (m, 0.0)]).is_err());
    }

    #[test]
    fn enumeration_sums_to_one() {
        let ws = enumerate_words(&[0.3, 0.7], 5, 64).unwrap();
        assert_eq!(ws.len(), 32);
        assert!((ws.iter().map(|w| w.1).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(enumerate_words(&[0.5, 0.5], 7, 64).is_none());
    }

    proptest! {
        // Lf_{u·v}(x) ≤ Lf_v(x) · Lf_u(f_v(x)), with equality in 1-D.
        #[test]
        fn chain_rule(seed in 0u64..500, nu in 0usize..12, nv in 0usize..12) {
            for sys in [catalog::two_attractor(), catalog::hyperbolic_rotation_projective()] {
                let mut rng = StreamRng::new(seed, 17);
                let x = sys.space().sample_uniform(&mut rng);
                let v = sys.sample_word(nv, seed, 1);
                let u = sys.sample_word(nu, seed, 2);
                let whole = sys.local_lipschitz_along(&v.followed_by(&u), &x).unwrap();
                let lv = sys.local_lipschitz_along(&v, &x).unwrap();
                let fx = *sys.iterate(&v, &x).unwrap().last().unwrap();
                let lu = sys.local_lipschitz_along(&u, &fx).unwrap();
                let bound = lv.log_value + lu.log_value;
                prop_assert!(whole.log_value <= bound + 1e-9);
                if sys.space().is_one_dimensional() {
                    prop_assert!((whole.log_value - bound).abs() <= 1e-9);
                }
                // product of global constants bounds the local one
                let global: f64 = v.followed_by(&u).symbols.iter()
                    .map(|s| sys.maps()[*s as usize].global_lipschitz().ln()).sum();
                prop_assert!(whole.log_value <= global + 1e-9);
            }
        }
    }
}
