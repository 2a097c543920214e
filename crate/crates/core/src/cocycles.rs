//! Locally constant linear cocycles: i.i.d. products of invertible matrices.
//!
//! Products are renormalized after every multiplication so that the running
//! log-scale carries the growth and nothing overflows. The top exponent is
//! available three ways: renormalized products, the projective Markov chain
//! (Furstenberg's integral), and an Ulam discretization of that chain.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::koopman::{self, Grid};
use crate::rng::{Purpose, StreamRng};
use crate::spaces::{Space, SpacePoint, MAX_DIM};
use crate::stats::{self, Estimate};
use crate::systems::{matvec, validate_weights, AtomSampler, FiberMap, RandomMapSystem, SymbolStream, Word};

/// Batches used for batch-means errors along a single chain.
const CHAIN_BATCHES: usize = 50;
/// Batches per trial in the QR spectrum estimator.
const SPECTRUM_BATCHES: usize = 10;

#[derive(Debug, Clone)]
pub struct Cocycle {
    dim: usize,
    atoms: Vec<DMatrix<f64>>,
    weights: Vec<f64>,
    sampler: AtomSampler,
    rows: Vec<Vec<f64>>,
}

/// `Aⁿ(ω) = exp(log_scale) · matrix` with `‖matrix‖ = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProduct {
    pub matrix: DMatrix<f64>,
    pub log_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEstimate {
    /// λ̂₁ ≥ … ≥ λ̂_m in nats per step.
    pub exponents: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n: usize,
    pub trials: usize,
    /// `E log|det A|` under the atom weights.
    pub mean_log_det: f64,
}

impl SpectrumEstimate {
    /// Standard error of the sum of the exponents (batches are shared, so
    /// the errors are added linearly as a conservative bound).
    pub fn sum_stderr(&self) -> f64 {
        self.stderr.iter().sum()
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    (0..d * d).map(|k| m[(k / d, k % d)]).collect()
}

/// Spectral norm; closed form for 1×1 and 2×2.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    match (m.nrows(), m.ncols()) {
        (1, 1) => m[(0, 0)].abs(),
        (2, 2) => {
            let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
            let f = a * a + b * b + c * c + d * d;
            let det = (a * d - b * c).abs();
            let disc = ((f - 2.0 * det) * (f + 2.0 * det)).max(0.0);
            ((f + disc.sqrt()) / 2.0).sqrt()
        }
        _ => m.clone().svd(false, false).singular_values.max(),
    }
}

fn singular_values_desc(m: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// `‖∧²M‖`, the product of the two largest singular values (0 for 1×1).
pub fn exterior2_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() < 2 {
        return 0.0;
    }
    let sv = singular_values_desc(m);
    sv[0] * sv[1]
}

impl Cocycle {
    pub fn new(atoms: Vec<DMatrix<f64>>, weights: Vec<f64>) -> Result<Self> {
        validate_weights(&weights)?;
        if atoms.len() != weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} matrices but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        let dim = atoms[0].nrows();
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::InvalidParameter(format!("dimension must be in 1..={MAX_DIM}, got {dim}")));
        }
        for (i, a) in atoms.iter().enumerate() {
            if a.nrows() != dim || a.ncols() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "atom {i} is {}x{}, expected {dim}x{dim}",
                    a.nrows(),
                    a.ncols()
                )));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!("atom {i} has non-finite entries")));
            }
            let smin = a.clone().svd(false, false).singular_values.min();
            if !(smin > 1e-10) {
                return Err(Error::NotInvertible(format!("atom {i}: smallest singular value {smin:e}")));
            }
        }
        let sampler = AtomSampler::new(&weights)?;
        let rows = atoms.iter().map(row_major).collect();
        Ok(Cocycle {
            dim,
            atoms,
            weights,
            sampler,
            rows,
        })
    }

    /// A single matrix with probability one.
    pub fn constant(m: DMatrix<f64>) -> Result<Self> {
        Self::new(vec![m], vec![1.0])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[DMatrix<f64>] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sampler(&self) -> &AtomSampler {
        &self.sampler
    }

    pub fn sample_word(&self, n: usize, master_seed: u64, stream: u64) -> Word {
        Word::sample(&self.sampler, n, master_seed, stream)
    }

    fn check_word(&self, word: &Word) -> Result<()> {
        match word.symbols.iter().find(|s| **s as usize >= self.atoms.len()) {
            Some(s) => Err(Error::InvalidParameter(format!(
                "symbol {s} out of range for {} atoms",
                self.atoms.len()
            ))),
            None => Ok(()),
        }
    }

    pub fn mean_log_det(&self) -> f64 {
        self.atoms
            .iter()
            .zip(&self.weights)
            .map(|(a, w)| w * a.determinant().abs().ln())
            .sum()
    }

    /// Renormalized product along the word.
    pub fn log_product(&self, word: &Word) -> Result<LogProduct> {
        self.check_word(word)?;
        let mut matrix = DMatrix::identity(self.dim, self.dim);
        let mut log_scale = 0.0;
        for (step, &s) in word.symbols.iter().enumerate() {
            matrix = &self.atoms[s as usize] * matrix;
            let norm = spectral_norm(&matrix);
            if !(norm > f64::MIN_POSITIVE && norm.is_finite()) {
                return Err(Error::SingularProduct { step });
            }
            matrix /= norm;
            log_scale += norm.ln();
        }
        Ok(LogProduct { matrix, log_scale })
    }

    /// `log ‖Aⁿ(ω)x‖` for a unit vector `x`, by summing per-step stretches.
    pub fn log_vector_growth(&self, word: &Word, x: &[f64]) -> Result<f64> {
        self.check_word(word)?;
        let mut v = self.unit_start(x)?;
        Ok(self.growth_along(word.symbols.iter().map(|s| *s as usize), &mut v))
    }

    fn unit_start(&self, x: &[f64]) -> Result<[f64; MAX_DIM]> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("start vector has norm {norm}")));
        }
        let mut v = [0.0; MAX_DIM];
        v[..self.dim].copy_from_slice(x);
        Ok(v)
    }

    /// Apply atoms in order to the unit vector `v` (updated in place) and
    /// return the summed log stretch.
    #[inline]
    pub(crate) fn growth_along<I: IntoIterator<Item = usize>>(&self, symbols: I, v: &mut [f64; MAX_DIM]) -> f64 {
        let m = self.dim;
        let mut acc = 0.0;
        let mut y = [0.0; MAX_DIM];
        for s in symbols {
            matvec(&self.rows[s], &v[..m], &mut y[..m]);
            let n = y[..m].iter().map(|a| a * a).sum::<f64>().sqrt();
            acc += n.ln();
            for i in 0..m {
                v[i] = y[i] / n;
            }
        }
        acc
    }

    /// `φ_A(x) = Σ_t p_t log ‖A_t x‖` for a unit vector `x`.
    pub fn furstenberg_integrand(&self, x: &[f64]) -> f64 {
        let m = self.dim;
        let mut y = [0.0; MAX_DIM];
        self.rows
            .iter()
            .zip(&self.weights)
            .map(|(r, w)| {
                matvec(r, &x[..m], &mut y[..m]);
                w * y[..m].iter().map(|a| a * a).sum::<f64>().sqrt().ln()
            })
            .sum()
    }

    /// Lyapunov spectrum by QR re-orthonormalization at every step.
    pub fn lyapunov_spectrum(&self, n: usize, trials: usize, master_seed: u64) -> Result<SpectrumEstimate> {
        if n < 10 || trials < 1 {
            return Err(Error::InvalidParameter(format!(
                "need n >= 10 and trials >= 1 (got n={n}, trials={trials})"
            )));
        }
        let m = self.dim;
        let batch_len = n / SPECTRUM_BATCHES;
        // per trial: SPECTRUM_BATCHES rows of m exponent rates
        let per_trial: Vec<Vec<Vec<f64>>> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut symbols = SymbolStream::new(&self.sampler, master_seed, crate::rng::stream_id(Purpose::Trial, t as u64));
                let mut q = DMatrix::<f64>::identity(m, m);
                let mut batches = Vec::with_capacity(SPECTRUM_BATCHES);
                for b in 0..SPECTRUM_BATCHES {
                    let len = if b + 1 == SPECTRUM_BATCHES { n - batch_len * b } else { batch_len };
                    let mut sums = vec![0.0; m];
                    for _ in 0..len {
                        let z = &self.atoms[symbols.next_symbol()] * &q;
                        let qr = z.qr();
                        let r = qr.r();
                        for (j, s) in sums.iter_mut().enumerate() {
                            *s += r[(j, j)].abs().ln();
                        }
                        q = qr.q();
                    }
                    batches.push(sums.into_iter().map(|s| s / len as f64).collect());
                }
                batches
            })
            .collect();
        let mut rows: Vec<(f64, f64)> = (0..m)
            .map(|j| {
                let vals: Vec<f64> = per_trial.iter().flatten().map(|b| b[j]).collect();
                let e = stats::mean_stderr(&vals);
                (e.value, e.stderr)
            })
            .collect();
        rows.sort_by(|a, b| b.0.total_cmp(&a.0));
        Ok(SpectrumEstimate {
            exponents: rows.iter().map(|r| r.0).collect(),
            stderr: rows.iter().map(|r| r.1).collect(),
            n,
            trials,
            mean_log_det: self.mean_log_det(),
        })
    }

    /// Top exponent as the trial mean of `log ‖Aⁿ(ω)‖ / n`.
    pub fn top_exponent_by_product(&self, n: usize, trials: usize, master_seed: u64) -> Result<Estimate> {
        if n < 1 || trials < 2 {
            return Err(Error::InvalidParameter(format!(
                "need n >= 1 and trials >= 2 (got n={n}, trials={trials})"
            )));
        }
        let vals = (0..trials)
            .into_par_iter()
            .map(|t| {
                let w = self.sample_word(n, master_seed, crate::rng::stream_id(Purpose::Trial, t as u64));
                self.log_product(&w).map(|p| p.log_scale / n as f64)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(stats::mean_stderr(&vals))
    }

    /// The projective random map `x̂ ↦ A(ω)x̂` on `P(ℝ^m)`.
    pub fn projective_system(&self) -> Result<RandomMapSystem> {
        let atoms = self
            .atoms
            .iter()
            .zip(&self.weights)
            .map(|(a, w)| Ok((FiberMap::projective(a.clone())?, *w)))
            .collect::<Result<Vec<_>>>()?;
        RandomMapSystem::new(atoms)
    }

    /// Restriction to a common invariant subspace, in an orthonormal basis.
    pub fn restrict(&self, basis: &[Vec<f64>]) -> Result<Cocycle> {
        let k = basis.len();
        if k == 0 || k > self.dim {
            return Err(Error::InvalidParameter(format!("basis of {k} vectors in dimension {}", self.dim)));
        }
        if let Some(b) = basis.iter().find(|b| b.len() != self.dim) {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: b.len(),
            });
        }
        let cols: Vec<DVector<f64>> = basis.iter().map(|b| DVector::from_column_slice(b)).collect();
        let b = DMatrix::from_columns(&cols);
        let scale = b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let qr = b.qr();
        let r = qr.r();
        if (0..k).any(|j| r[(j, j)].abs() <= 1e-10 * scale.max(1.0)) {
            return Err(Error::InvalidParameter("basis vectors are linearly dependent".into()));
        }
        let u = qr.q();
        let mut restricted = Vec::with_capacity(self.atoms.len());
        for (i, a) in self.atoms.iter().enumerate() {
            let au = a * &u;
            let inside = u.transpose() * &au;
            let residual = (&au - &u * &inside).column_iter().map(|c| c.norm()).fold(0.0, f64::max);
            if residual > 1e-9 {
                return Err(Error::NotInvariant { atom: i, residual });
            }
            restricted.push(inside);
        }
        Cocycle::new(restricted, self.weights.clone())
    }

    /// Furstenberg chain estimate of λ₁ from a seeded random start.
    pub fn furstenberg_estimate(&self, burn_in: usize, samples: usize, master_seed: u64) -> Result<Estimate> {
        let mut rng = StreamRng::for_task(master_seed, Purpose::StartPoint, 0);
        let start = Space::Projective { dim: self.dim.max(2) }.sample_uniform(&mut rng);
        if self.dim == 1 {
            return self.furstenberg_estimate_from(&[1.0], burn_in, samples, master_seed);
        }
        self.furstenberg_estimate_from(start.coords(), burn_in, samples, master_seed)
    }

    /// Runs `x̂_{k+1} = A(t_k) x̂_k` and averages `φ_A(x̂_k)` after `burn_in`
    /// steps; batch-means error.
    pub fn furstenberg_estimate_from(&self, start: &[f64], burn_in: usize, samples: usize, master_seed: u64) -> Result<Estimate> {
        if samples < 100 {
            return Err(Error::InvalidParameter(format!("need samples >= 100, got {samples}")));
        }
        let mut v = self.unit_start(start)?;
        let mut symbols = SymbolStream::new(&self.sampler, master_seed, crate::rng::stream_id(Purpose::Word, 0));
        for _ in 0..burn_in {
            let s = symbols.next_symbol();
            self.growth_along([s], &mut v);
        }
        let mut values = Vec::with_capacity(samples);
        for _ in 0..samples {
            values.push(self.furstenberg_integrand(&v[..self.dim]));
            let s = symbols.next_symbol();
            self.growth_along([s], &mut v);
        }
        Ok(stats::batch_means(&values, CHAIN_BATCHES))
    }
}

/// `D(A,B) = Σ_k p_k ‖A_k − B_k‖` for cocycles over the same symbols.
pub fn cocycle_distance(a: &Cocycle, b: &Cocycle) -> Result<f64> {
    paired_distance(a, b, false)
}

/// `D_±(A,B)`: adds `‖A_k⁻¹ − B_k⁻¹‖` per atom.
pub fn cocycle_distance_pm(a: &Cocycle, b: &Cocycle) -> Result<f64> {
    paired_distance(a, b, true)
}

fn paired_distance(a: &Cocycle, b: &Cocycle, with_inverse: bool) -> Result<f64> {
    if a.dim != b.dim || a.atoms.len() != b.atoms.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} atoms of dim {} vs {} atoms of dim {}",
            a.atoms.len(),
            a.dim,
            b.atoms.len(),
            b.dim
        )));
    }
    if a.weights.iter().zip(&b.weights).any(|(x, y)| (x - y).abs() > 1e-12) {
        return Err(Error::ShapeMismatch("atom weights differ".into()));
    }
    let mut total = 0.0;
    for ((x, y), w) in a.atoms.iter().zip(&b.atoms).zip(&a.weights) {
        let mut d = spectral_norm(&(x - y));
        if with_inverse {
            let xi = x.clone().try_inverse().ok_or_else(|| Error::NotInvertible("atom".into()))?;
            let yi = y.clone().try_inverse().ok_or_else(|| Error::NotInvertible("atom".into()))?;
            d += spectral_norm(&(xi - yi));
        }
        total += w * d;
    }
    Ok(total)
}

/// λ₁ from the Ulam discretization of the projective chain on `cells`
/// cells of `P(ℝ²)`: `max_μ Σ_i μ_i φ_A(center_i)` over the discrete
/// stationary measures. The reported error is the change against the
/// half-resolution grid.
pub fn ulam_top_exponent(cocycle: &Cocycle, cells: usize) -> Result<Estimate> {
    if cocycle.dim() != 2 {
        return Err(Error::InvalidParameter("Ulam oracle needs a 2x2 cocycle".into()));
    }
    if cells < 4 {
        return Err(Error::InvalidParameter("need at least 4 cells".into()));
    }
    let system = cocycle.projective_system()?;
    let at = |n: usize| -> Result<f64> {
        let grid = Grid::new(system.space(), n)?;
        let q = koopman::discretize(&system, &grid)?;
        let report = koopman::stationary_report(&q, 1e-13)?;
        let phi: Vec<f64> = grid.centers().iter().map(|c| cocycle.furstenberg_integrand(c.coords())).collect();
        Ok(report
            .measures
            .iter()
            .map(|mu| mu.iter().zip(&phi).map(|(a, b)| a * b).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max))
    };
    let fine = at(cells)?;
    let coarse = at(cells / 2)?;
    Ok(Estimate::new(fine, (fine - coarse).abs()))
}

/// Unit vector helper for the common `ê_i`.
pub fn basis_vector(dim: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[i] = 1.0;
    v
}

/// Point of `P(ℝ^m)` for a vector; convenience for tests and callers.
pub fn line(v: &[f64]) -> Result<SpacePoint> {
    SpacePoint::line(v)
}
