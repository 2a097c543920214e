//! Finite row-stochastic matrices: recurrent classes, periods, stationary
//! vectors and absorption probabilities.

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Entries at or below this are treated as structural zeros.
pub const ZERO_THRESHOLD: f64 = 1e-12;

/// Tolerance on row sums.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Dense solves are used up to this many unknowns; larger systems iterate.
const DENSE_LIMIT: usize = 2048;

const POWER_BUDGET: usize = 200_000;

/// A row-stochastic matrix stored by rows of `(column, value)`, columns sorted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseStochastic {
    rows: Vec<Vec<(u32, f64)>>,
}

impl SparseStochastic {
    pub fn new(rows: Vec<Vec<(u32, f64)>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::ShapeMismatch("empty matrix".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            let mut sum = 0.0;
            for &(j, v) in row {
                if j as usize >= n || !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::InvalidParameter(format!("row {i}: bad entry ({j}, {v})")));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidParameter(format!("row {i} sums to {sum}")));
            }
        }
        Ok(SparseStochastic { rows })
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::ShapeMismatch(format!("{}x{} is not square", m.nrows(), m.ncols())));
        }
        let rows = (0..m.nrows())
            .map(|i| {
                (0..m.ncols())
                    .filter(|&j| m[(i, j)] != 0.0)
                    .map(|j| (j as u32, m[(i, j)]))
                    .collect()
            })
            .collect();
        Self::new(rows)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[(u32, f64)] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<(u32, f64)>] {
        &self.rows
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                m[(i, j as usize)] += v;
            }
        }
        m
    }

    /// `Qφ`, acting on functions.
    pub fn apply(&self, phi: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, v)| v * phi[j as usize]).sum())
            .collect()
    }

    /// `μQ`, acting on measures.
    pub fn push_forward(&self, mu: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (i, row) in self.rows.iter().enumerate() {
            if mu[i] != 0.0 {
                for &(j, v) in row {
                    out[j as usize] += mu[i] * v;
                }
            }
        }
        out
    }

    fn graph(&self) -> DiGraph<(), ()> {
        let mut g = DiGraph::with_capacity(self.len(), 0);
        let nodes: Vec<_> = (0..self.len()).map(|_| g.add_node(())).collect();
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                if v > ZERO_THRESHOLD {
                    g.add_edge(nodes[i], nodes[j as usize], ());
                }
            }
        }
        g
    }

    /// Closed communicating classes (sorted by smallest state) and the
    /// remaining transient states.
    pub fn recurrent_classes(&self) -> (Vec<Vec<usize>>, Vec<usize>) {
        let g = self.graph();
        let mut comp = vec![0usize; self.len()];
        let sccs = tarjan_scc(&g);
        for (c, members) in sccs.iter().enumerate() {
            for v in members {
                comp[v.index()] = c;
            }
        }
        let mut closed = vec![true; sccs.len()];
        for (i, row) in self.rows.iter().enumerate() {
            if row.iter().any(|&(j, v)| v > ZERO_THRESHOLD && comp[j as usize] != comp[i]) {
                closed[comp[i]] = false;
            }
        }
        let mut classes: Vec<Vec<usize>> = sccs
            .iter()
            .enumerate()
            .filter(|(c, _)| closed[*c])
            .map(|(_, m)| {
                let mut v: Vec<usize> = m.iter().map(|n| n.index()).collect();
                v.sort_unstable();
                v
            })
            .collect();
        classes.sort_by_key(|c| c[0]);
        let mut recurrent = vec![false; self.len()];
        for c in &classes {
            for &i in c {
                recurrent[i] = true;
            }
        }
        let transient = (0..self.len()).filter(|i| !recurrent[*i]).collect();
        (classes, transient)
    }

    /// Period of a closed class: gcd of `level(u) + 1 − level(v)` over edges.
    pub fn period(&self, class: &[usize]) -> usize {
        let mut level = vec![usize::MAX; self.len()];
        let start = class[0];
        level[start] = 0;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &(j, v) in &self.rows[u] {
                let j = j as usize;
                if v > ZERO_THRESHOLD && level[j] == usize::MAX {
                    level[j] = level[u] + 1;
                    queue.push_back(j);
                }
            }
        }
        let mut g = 0usize;
        for &u in class {
            for &(j, v) in &self.rows[u] {
                if v > ZERO_THRESHOLD {
                    let d = (level[u] as i64 + 1 - level[j as usize] as i64).unsigned_abs() as usize;
                    g = gcd(g, d);
                }
            }
        }
        g.max(1)
    }

    /// `max_i |(μQ − μ)_i|`.
    pub fn stationarity_residual(&self, mu: &[f64]) -> f64 {
        self.push_forward(mu).iter().zip(mu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Stationary probability vector supported on a closed class.
    pub fn class_stationary(&self, class: &[usize], tol: f64) -> Result<Vec<f64>> {
        let n = self.len();
        let k = class.len();
        let mut local = vec![usize::MAX; n];
        for (a, &i) in class.iter().enumerate() {
            local[i] = a;
        }
        let mut mu = vec![0.0; n];
        if k == 1 {
            mu[class[0]] = 1.0;
        } else if k <= DENSE_LIMIT {
            // (Qᵀ − I)μ = 0 with the last equation replaced by Σμ = 1
            let mut a = DMatrix::<f64>::zeros(k, k);
            for (r, &i) in class.iter().enumerate() {
                for &(j, v) in &self.rows[i] {
                    a[(local[j as usize], r)] += v;
                }
                a[(r, r)] -= 1.0;
            }
            for c in 0..k {
                a[(k - 1, c)] = 1.0;
            }
            let mut b = DVector::zeros(k);
            b[k - 1] = 1.0;
            let x = a.lu().solve(&b).ok_or(Error::NoConvergence {
                iterations: 0,
                residual: f64::INFINITY,
            })?;
            for (r, &i) in class.iter().enumerate() {
                mu[i] = x[r].max(0.0);
            }
            let s: f64 = mu.iter().sum();
            mu.iter_mut().for_each(|v| *v /= s);
        } else {
            for &i in class {
                mu[i] = 1.0 / k as f64;
            }
        }
        let mut residual = self.stationarity_residual(&mu);
        let mut it = 0;
        while residual > tol {
            if it >= POWER_BUDGET {
                return Err(Error::NoConvergence { iterations: it, residual });
            }
            // lazy step: converges for periodic classes too
            let next = self.push_forward(&mu);
            for (m, x) in mu.iter_mut().zip(&next) {
                *m = 0.5 * (*m + x);
            }
            it += 1;
            if it % 16 == 0 {
                residual = self.stationarity_residual(&mu);
            }
        }
        Ok(mu)
    }

    /// For each closed class, the probability of eventual absorption into it
    /// from every state (1 on the class, 0 on the other classes).
    pub fn absorption(&self, classes: &[Vec<usize>], transient: &[usize]) -> Result<Vec<Vec<f64>>> {
        let n = self.len();
        let mut owner = vec![usize::MAX; n];
        for (c, members) in classes.iter().enumerate() {
            for &i in members {
                owner[i] = c;
            }
        }
        let mut local = vec![usize::MAX; n];
        for (a, &i) in transient.iter().enumerate() {
            local[i] = a;
        }
        let t = transient.len();
        let nc = classes.len();
        // one-step entry probabilities from transient states into each class
        let mut b = DMatrix::<f64>::zeros(t, nc);
        for (a, &i) in transient.iter().enumerate() {
            for &(j, v) in &self.rows[i] {
                if owner[j as usize] != usize::MAX {
                    b[(a, owner[j as usize])] += v;
                }
            }
        }
        let h = if t == 0 {
            b
        } else if t <= DENSE_LIMIT {
            let mut m = DMatrix::<f64>::identity(t, t);
            for (a, &i) in transient.iter().enumerate() {
                for &(j, v) in &self.rows[i] {
                    if local[j as usize] != usize::MAX {
                        m[(a, local[j as usize])] -= v;
                    }
                }
            }
            m.lu().solve(&b).ok_or(Error::NoConvergence {
                iterations: 0,
                residual: f64::INFINITY,
            })?
        } else {
            let mut h = b.clone();
            let mut it = 0;
            loop {
                let mut next = b.clone();
                for (a, &i) in transient.iter().enumerate() {
                    for &(j, v) in &self.rows[i] {
                        let l = local[j as usize];
                        if l != usize::MAX {
                            for c in 0..nc {
                                next[(a, c)] += v * h[(l, c)];
                            }
                        }
                    }
                }
                let change = (&next - &h).amax();
                h = next;
                it += 1;
                if change < 1e-14 {
                    break;
                }
                if it >= POWER_BUDGET {
                    return Err(Error::NoConvergence {
                        iterations: it,
                        residual: change,
                    });
                }
            }
            h
        };
        Ok((0..nc)
            .map(|c| {
                let mut v = vec![0.0; n];
                for &i in &classes[c] {
                    v[i] = 1.0;
                }
                for (a, &i) in transient.iter().enumerate() {
                    v[i] = h[(a, c)].clamp(0.0, 1.0);
                }
                v
            })
            .collect())
    }

    /// Stationary vectors of all closed classes, computed concurrently.
    pub fn ergodic_measures(&self, classes: &[Vec<usize>], tol: f64) -> Result<Vec<Vec<f64>>> {
        classes.par_iter().map(|c| self.class_stationary(c, tol)).collect()
    }
}

/// Dimension of the eigenvalue-1 eigenspace, as `n − rank(Q − I)` with
/// singular values below `tol` counted as zero.
pub fn eigenvalue_one_multiplicity(q: &DMatrix<f64>, tol: f64) -> usize {
    let n = q.nrows();
    let m = q - DMatrix::<f64>::identity(n, n);
    m.svd(false, false).singular_values.iter().filter(|s| **s < tol).count()
}

pub fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense(rows: &[&[f64]]) -> SparseStochastic {
        let n = rows.len();
        SparseStochastic::from_dense(&DMatrix::from_fn(n, n, |i, j| rows[i][j])).unwrap()
    }

    #[test]
    fn cycle_has_period_three() {
        let q = dense(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0]]);
        let (classes, transient) = q.recurrent_classes();
        assert_eq!(classes, vec![vec![0, 1, 2]]);
        assert!(transient.is_empty());
        assert_eq!(q.period(&classes[0]), 3);
        let mu = q.class_stationary(&classes[0], 1e-14).unwrap();
        assert!(mu.iter().all(|m| (m - 1.0 / 3.0).abs() < 1e-14));
    }

    #[test]
    fn absorbing_chain() {
        let q = dense(&[&[0.5, 0.3, 0.2], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let (classes, transient) = q.recurrent_classes();
        assert_eq!(classes, vec![vec![1], vec![2]]);
        assert_eq!(transient, vec![0]);
        let h = q.absorption(&classes, &transient).unwrap();
        assert!((h[0][0] - 0.6).abs() < 1e-14);
        assert!((h[1][0] - 0.4).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(SparseStochastic::new(vec![vec![(0, 0.7)]]).is_err());
        assert!(SparseStochastic::new(vec![vec![(1, 1.0)]]).is_err());
    }

    proptest! {
        // closed-class count equals the eigenvalue-1 multiplicity
        #[test]
        fn classes_match_eigenvalue_multiplicity(blocks in proptest::collection::vec(1usize..4, 1..4),
                                                 transient in 0usize..3, seed in 0u64..1000) {
            let sizes: Vec<usize> = blocks;
            let n: usize = sizes.iter().sum::<usize>() + transient;
            let mut m = DMatrix::<f64>::zeros(n, n);
            let mut rng = crate::rng::StreamRng::new(seed, 0);
            let mut start = 0;
            for &s in &sizes {
                for i in start..start + s {
                    let mut row: Vec<f64> = (0..s).map(|_| 0.1 + rng.uniform()).collect();
                    let tot: f64 = row.iter().sum();
                    row.iter_mut().for_each(|v| *v /= tot);
                    for (k, v) in row.into_iter().enumerate() { m[(i, start + k)] = v; }
                }
                start += s;
            }
            for i in start..n {
                let mut row: Vec<f64> = (0..n).map(|_| 0.1 + rng.uniform()).collect();
                let tot: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= tot);
                for (k, v) in row.into_iter().enumerate() { m[(i, k)] = v; }
            }
            let q = SparseStochastic::from_dense(&m).unwrap();
            let (classes, _) = q.recurrent_classes();
            prop_assert_eq!(classes.len(), sizes.len());
            prop_assert_eq!(eigenvalue_one_multiplicity(&m, 1e-8), sizes.len());
            for mu in q.ergodic_measures(&classes, 1e-13).unwrap() {
                prop_assert!(q.stationarity_residual(&mu) <= 1e-13);
                prop_assert!((mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
