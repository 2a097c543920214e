//! Subadditive sequences over finite Markov operators and the uniform and
//! pointwise Kingman limits, computed exactly on small chains.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::SparseStochastic;

pub const MAX_STATES: usize = 512;
pub const MAX_TERMS: usize = 4096;

/// Values of `φ_n/n` below this are reported as divergent.
pub const DIVERGENCE_FLOOR: f64 = -1e6;

/// Relative slack for the entrywise subadditivity check.
fn slack(x: f64) -> f64 {
    1e-9 * (1.0 + x.abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMarkovOperator {
    dense: DMatrix<f64>,
    sparse: SparseStochastic,
}

impl FiniteMarkovOperator {
    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        if p.nrows() > MAX_STATES {
            return Err(Error::UnsupportedResolution {
                points: p.nrows(),
                cap: MAX_STATES,
            });
        }
        let sparse = SparseStochastic::from_dense(&p)?;
        Ok(FiniteMarkovOperator { dense: p, sparse })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let s = rows.len();
        if rows.iter().any(|r| r.len() != s) {
            return Err(Error::ShapeMismatch("transition matrix must be square".into()));
        }
        Self::new(DMatrix::from_fn(s, s, |i, j| rows[i][j]))
    }

    pub fn states(&self) -> usize {
        self.dense.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.dense
    }

    pub fn stochastic(&self) -> &SparseStochastic {
        &self.sparse
    }

    /// `Pφ`.
    pub fn apply(&self, phi: &[f64]) -> Vec<f64> {
        (&self.dense * DVector::from_column_slice(phi)).as_slice().to_vec()
    }

    /// Ergodic invariant measures, one per closed class.
    pub fn ergodic_measures(&self) -> Result<Vec<Vec<f64>>> {
        let (classes, _) = self.sparse.recurrent_classes();
        self.sparse.ergodic_measures(&classes, 1e-14)
    }

    /// `I₂`.
    pub fn identity2() -> Self {
        Self::new(DMatrix::identity(2, 2)).expect("valid")
    }

    /// The 2×2 matrix with all entries 1/2.
    pub fn uniform2() -> Self {
        Self::new(DMatrix::from_element(2, 2, 0.5)).expect("valid")
    }

    /// State 0 moves to state 1 or 2 with probability 1/2; both are absorbing.
    pub fn absorbing3() -> Self {
        Self::from_rows(&[vec![0.0, 0.5, 0.5], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).expect("valid")
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "identity" => Some(Self::identity2()),
            "uniform" => Some(Self::uniform2()),
            "absorbing" => Some(Self::absorbing3()),
            _ => None,
        }
    }
}

/// `φ_1, …, φ_N` as state vectors; `terms[n-1] = φ_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubadditiveSequence {
    pub terms: Vec<Vec<f64>>,
}

impl SubadditiveSequence {
    pub fn new(terms: Vec<Vec<f64>>) -> Result<Self> {
        if terms.is_empty() || terms.len() > MAX_TERMS {
            return Err(Error::InvalidParameter(format!("need 1..={MAX_TERMS} terms, got {}", terms.len())));
        }
        let s = terms[0].len();
        if terms.iter().any(|t| t.len() != s) {
            return Err(Error::ShapeMismatch("terms have different lengths".into()));
        }
        Ok(SubadditiveSequence { terms })
    }

    /// `φ_n(x) = f(n, x)`.
    pub fn from_fn(states: usize, n: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        Self::new((1..=n).map(|k| (0..states).map(|x| f(k, x)).collect()).collect())
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn states(&self) -> usize {
        self.terms[0].len()
    }

    /// `φ_n` for `n ≥ 1`.
    pub fn term(&self, n: usize) -> &[f64] {
        &self.terms[n - 1]
    }
}

/// `φ_n = Σ_{i<n} Pⁱφ₁`.
pub fn build_additive(p: &FiniteMarkovOperator, phi1: &[f64], n: usize) -> Result<SubadditiveSequence> {
    if n < 1 {
        return Err(Error::InvalidParameter("N must be at least 1".into()));
    }
    if phi1.len() != p.states() {
        return Err(Error::DimensionMismatch {
            expected: p.states(),
            found: phi1.len(),
        });
    }
    let mut terms = Vec::with_capacity(n);
    let mut power = phi1.to_vec();
    let mut sum = phi1.to_vec();
    terms.push(sum.clone());
    for _ in 1..n {
        power = p.apply(&power);
        for (s, x) in sum.iter_mut().zip(&power) {
            *s += x;
        }
        terms.push(sum.clone());
    }
    SubadditiveSequence::new(terms)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubadditivityCheck {
    pub pass: bool,
    /// Largest `φ_{n+m} − φ_n − Pⁿφ_m` seen, with its `(n, m, state)`.
    pub worst: (usize, usize, usize),
    pub max_excess: f64,
}

/// Exhaustive check of `φ_{n+m} ≤ φ_n + Pⁿφ_m` over `n + m ≤ N`.
pub fn check_subadditivity(p: &FiniteMarkovOperator, seq: &SubadditiveSequence) -> Result<SubadditivityCheck> {
    if seq.states() != p.states() {
        return Err(Error::DimensionMismatch {
            expected: p.states(),
            found: seq.states(),
        });
    }
    let big_n = seq.len();
    let per_m: Vec<(f64, (usize, usize, usize), bool)> = (1..big_n)
        .into_par_iter()
        .map(|m| {
            let mut best = (f64::NEG_INFINITY, (0, m, 0), true);
            let mut pushed = seq.term(m).to_vec();
            for n in 1..=big_n - m {
                pushed = p.apply(&pushed); // Pⁿφ_m
                let lhs = seq.term(n + m);
                let phin = seq.term(n);
                for x in 0..p.states() {
                    let rhs = phin[x] + pushed[x];
                    let excess = lhs[x] - rhs;
                    if excess > slack(rhs) {
                        best.2 = false;
                    }
                    if excess > best.0 {
                        best.0 = excess;
                        best.1 = (n, m, x);
                    }
                }
            }
            best
        })
        .collect();
    let mut out = SubadditivityCheck {
        pass: true,
        worst: (0, 0, 0),
        max_excess: f64::NEG_INFINITY,
    };
    for (excess, at, ok) in per_m {
        out.pass &= ok;
        if excess > out.max_excess {
            out.max_excess = excess;
            out.worst = at;
        }
    }
    if big_n == 1 {
        out.max_excess = 0.0;
    }
    Ok(out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformKingmanReport {
    /// `max_x φ_n(x)/n`, averaged over the tail window.
    pub via_max_limit: f64,
    /// `max Λ(μ)` over ergodic `μ`, with `Λ(μ) = inf_n ⟨φ_n, μ⟩/n`.
    pub via_ergodic_max: f64,
    /// `max_x` of the largest `φ_n(x)/n` in the tail window.
    pub via_pointwise_sup: f64,
    /// `inf_n max_x φ_n(x)/n`.
    pub via_inf_formula: f64,
    pub lambda_by_measure: Vec<f64>,
    pub measures: Vec<Vec<f64>>,
    pub tolerance: f64,
    pub agree: bool,
    pub additive: bool,
    /// For additive sequences, `|max Λ(μ) − max ⟨φ₁, μ⟩|`.
    pub additive_gap: Option<f64>,
    pub diverged: bool,
}

impl UniformKingmanReport {
    pub fn values(&self) -> [f64; 4] {
        [
            self.via_max_limit,
            self.via_ergodic_max,
            self.via_pointwise_sup,
            self.via_inf_formula,
        ]
    }
}

fn is_additive(p: &FiniteMarkovOperator, seq: &SubadditiveSequence) -> bool {
    let phi1 = seq.term(1);
    (1..seq.len()).all(|n| {
        let next = p.apply(seq.term(n));
        seq.term(n + 1)
            .iter()
            .zip(phi1.iter().zip(&next))
            .all(|(l, (a, b))| (l - a - b).abs() <= slack(*l))
    })
}

fn ensure_subadditive(p: &FiniteMarkovOperator, seq: &SubadditiveSequence) -> Result<()> {
    let check = check_subadditivity(p, seq)?;
    if !check.pass {
        let (n, m, state) = check.worst;
        return Err(Error::SubadditivityViolated {
            n,
            m,
            state,
            excess: check.max_excess,
        });
    }
    Ok(())
}

/// `Λ(μ) = inf_n ⟨φ_n, μ⟩ / n`.
pub fn lambda_of_measure(seq: &SubadditiveSequence, mu: &[f64]) -> f64 {
    (1..=seq.len())
        .map(|n| dot(seq.term(n), mu) / n as f64)
        .fold(f64::INFINITY, f64::min)
}

/// The four finite-`N` forms of the uniform limit `Λ`.
pub fn verify_uniform_kingman(p: &FiniteMarkovOperator, seq: &SubadditiveSequence, tail_window: usize) -> Result<UniformKingmanReport> {
    ensure_subadditive(p, seq)?;
    let big_n = seq.len();
    let w = tail_window.clamp(1, big_n);
    let tail = big_n + 1 - w..=big_n;
    let max_over = |n: usize| seq.term(n).iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b)) / n as f64;

    let measures = p.ergodic_measures()?;
    let lambda_by_measure: Vec<f64> = measures.iter().map(|mu| lambda_of_measure(seq, mu)).collect();
    let via_ergodic_max = lambda_by_measure.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let via_max_limit = tail.clone().map(max_over).sum::<f64>() / w as f64;
    let via_pointwise_sup = (0..p.states())
        .map(|x| tail.clone().map(|n| seq.term(n)[x] / n as f64).fold(f64::NEG_INFINITY, f64::max))
        .fold(f64::NEG_INFINITY, f64::max);
    let via_inf_formula = (1..=big_n).map(max_over).fold(f64::INFINITY, f64::min);

    let tolerance = 10.0 / big_n as f64;
    let vals = [via_max_limit, via_ergodic_max, via_pointwise_sup, via_inf_formula];
    let agree = vals.iter().all(|a| vals.iter().all(|b| (a - b).abs() <= tolerance));
    let additive = is_additive(p, seq);
    let additive_gap = additive.then(|| {
        let best = measures.iter().map(|mu| dot(seq.term(1), mu)).fold(f64::NEG_INFINITY, f64::max);
        (via_ergodic_max - best).abs()
    });
    let diverged = vals.iter().any(|v| *v < DIVERGENCE_FLOOR);
    Ok(UniformKingmanReport {
        via_max_limit,
        via_ergodic_max,
        via_pointwise_sup,
        via_inf_formula,
        lambda_by_measure,
        measures,
        tolerance,
        agree,
        additive,
        additive_gap,
        diverged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseKingmanReport {
    /// `ĝ = φ_N / N`.
    pub g_hat: Vec<f64>,
    pub pairing: f64,
    pub lambda_mu: f64,
    pub pairing_ok: bool,
    pub ergodic: bool,
    /// `max − min` of `ĝ` on the support of `μ` (only for ergodic `μ`).
    pub constancy_gap: Option<f64>,
    pub constancy_ok: bool,
    pub tolerance: f64,
}

pub fn verify_pointwise_kingman(p: &FiniteMarkovOperator, seq: &SubadditiveSequence, mu: &[f64]) -> Result<PointwiseKingmanReport> {
    if mu.len() != p.states() {
        return Err(Error::DimensionMismatch {
            expected: p.states(),
            found: mu.len(),
        });
    }
    let residual = p.stochastic().stationarity_residual(mu);
    if residual > 1e-10 || (mu.iter().sum::<f64>() - 1.0).abs() > 1e-10 || mu.iter().any(|m| *m < 0.0) {
        return Err(Error::NotInvariantMeasure { residual });
    }
    let big_n = seq.len();
    let tolerance = 10.0 / big_n as f64;
    let g_hat: Vec<f64> = seq.term(big_n).iter().map(|v| v / big_n as f64).collect();
    let pairing = dot(&g_hat, mu);
    let lambda_mu = lambda_of_measure(seq, mu);
    let (classes, _) = p.stochastic().recurrent_classes();
    let charged: Vec<&Vec<usize>> = classes.iter().filter(|c| c.iter().any(|i| mu[*i] > 1e-12)).collect();
    let ergodic = charged.len() == 1;
    let constancy_gap = ergodic.then(|| {
        let support: Vec<f64> = (0..mu.len()).filter(|i| mu[*i] > 1e-12).map(|i| g_hat[i]).collect();
        support.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b)) - support.iter().fold(f64::INFINITY, |a, b| a.min(*b))
    });
    Ok(PointwiseKingmanReport {
        pairing_ok: (pairing - lambda_mu).abs() <= tolerance,
        constancy_ok: constancy_gap.is_none_or(|g| g <= tolerance),
        g_hat,
        pairing,
        lambda_mu,
        ergodic,
        constancy_gap,
        tolerance,
    })
}
