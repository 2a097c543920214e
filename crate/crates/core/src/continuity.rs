//! Perturbation sweeps: exponents and stationary measures along a
//! one-parameter path, with Hölder fits of the response against the size of
//! the perturbation.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cocycles::{cocycle_distance, Cocycle};
use crate::error::{Error, Result};
use crate::koopman::{discretize, grid_atoms, stationary_report, wasserstein1, Grid};
use crate::rng::{stream_id, Purpose};
use crate::spaces::{Space, SpacePoint};
use crate::stats::{self, Estimate};
use crate::systems::{circle_distance, FiberMap, RandomMapSystem, SymbolStream};

/// Grid used for sup-norm distances between maps.
pub const DISTANCE_GRID: usize = 4096;
/// Fewest usable points in a Hölder fit.
pub const MIN_FIT_POINTS: usize = 4;

const BIRKHOFF_BATCHES: usize = 50;
const ULAM_TOL: f64 = 1e-13;

/// One atom of a map path: base parameters and their velocity in `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PathAtom {
    Affine {
        slope: f64,
        offset: f64,
        d_slope: f64,
        d_offset: f64,
    },
    CircleWave {
        rotation: f64,
        amplitude: f64,
        frequency: u32,
        d_rotation: f64,
        d_amplitude: f64,
    },
}

/// A linear path `t ↦ system(t)` of random maps with fixed weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemPath {
    pub space: Space,
    pub atoms: Vec<PathAtom>,
    pub weights: Vec<f64>,
}

impl SystemPath {
    /// Two-attractor family with the first amplitude moved `0.5 → 0.5 + t`.
    pub fn two_attractor_shift() -> Self {
        SystemPath {
            space: Space::Circle,
            atoms: vec![
                PathAtom::CircleWave {
                    rotation: 0.0,
                    amplitude: 0.5,
                    frequency: 2,
                    d_rotation: 0.0,
                    d_amplitude: 1.0,
                },
                PathAtom::CircleWave {
                    rotation: 0.0,
                    amplitude: 0.8,
                    frequency: 2,
                    d_rotation: 0.0,
                    d_amplitude: 0.0,
                },
            ],
            weights: vec![0.5, 0.5],
        }
    }

    /// Contracting halves with slopes `0.5 + t`; the second map keeps 1 fixed.
    pub fn ifs_slopes() -> Self {
        SystemPath {
            space: Space::Interval { a: 0.0, b: 1.0 },
            atoms: vec![
                PathAtom::Affine {
                    slope: 0.5,
                    offset: 0.0,
                    d_slope: 1.0,
                    d_offset: 0.0,
                },
                PathAtom::Affine {
                    slope: 0.5,
                    offset: 0.5,
                    d_slope: 1.0,
                    d_offset: -1.0,
                },
            ],
            weights: vec![0.5, 0.5],
        }
    }

    /// The minimal circle system with its wave amplitude moved `0.8 → 0.8 + t`.
    pub fn minimal_circle_amplitude() -> Self {
        SystemPath {
            space: Space::Circle,
            atoms: vec![
                PathAtom::CircleWave {
                    rotation: 0.0,
                    amplitude: 0.8,
                    frequency: 1,
                    d_rotation: 0.0,
                    d_amplitude: 1.0,
                },
                PathAtom::CircleWave {
                    rotation: crate::catalog::GOLDEN_ROTATION,
                    amplitude: 0.0,
                    frequency: 1,
                    d_rotation: 0.0,
                    d_amplitude: 0.0,
                },
            ],
            weights: vec![0.5, 0.5],
        }
    }

    fn map_at(&self, atom: &PathAtom, t: f64) -> Result<FiberMap> {
        match *atom {
            PathAtom::Affine {
                slope,
                offset,
                d_slope,
                d_offset,
            } => FiberMap::affine(self.space, slope + t * d_slope, offset + t * d_offset),
            PathAtom::CircleWave {
                rotation,
                amplitude,
                frequency,
                d_rotation,
                d_amplitude,
            } => {
                if self.space != Space::Circle {
                    return Err(Error::InvalidParameter("circle waves need the circle".into()));
                }
                FiberMap::circle_wave(rotation + t * d_rotation, amplitude + t * d_amplitude, frequency)
            }
        }
    }

    /// The system at `t`; `NotDiffeomorphismAt` when a map folds or leaves
    /// the space.
    pub fn at(&self, t: f64) -> Result<RandomMapSystem> {
        if self.atoms.len() != self.weights.len() || self.atoms.is_empty() {
            return Err(Error::ShapeMismatch("one weight per path atom".into()));
        }
        let mut maps = Vec::with_capacity(self.atoms.len());
        for (atom, &w) in self.atoms.iter().zip(&self.weights) {
            let f = match self.map_at(atom, t) {
                Ok(f) => f,
                Err(Error::EscapedSpace(_)) => return Err(Error::NotDiffeomorphismAt { t }),
                Err(e) => return Err(e),
            };
            let folds = match atom {
                PathAtom::Affine { .. } => f.derivative(0.0).is_some_and(|d| d == 0.0),
                PathAtom::CircleWave { .. } => grid(self.space).any(|x| !(f.derivative(x).unwrap_or(1.0) > 0.0)),
            };
            if folds {
                return Err(Error::NotDiffeomorphismAt { t });
            }
            // an affine map must send both ends inside
            if let Space::Interval { a, b } = self.space {
                for x in [a, b] {
                    if f.try_apply(&SpacePoint::scalar(x)).is_err() {
                        return Err(Error::NotDiffeomorphismAt { t });
                    }
                }
            }
            maps.push((f, w));
        }
        RandomMapSystem::new(maps)
    }
}

fn grid(space: Space) -> impl Iterator<Item = f64> {
    (0..DISTANCE_GRID).map(move |i| space.from_unit(i as f64 / (DISTANCE_GRID - 1) as f64).value())
}

/// `Σ_k w_k sup_grid |f_k − g_k|`, plus `sup_grid |f′_k − g′_k|` when
/// `with_derivative` is set.
pub fn map_distance(space: Space, f: &RandomMapSystem, g: &RandomMapSystem, with_derivative: bool) -> Result<f64> {
    if f.atoms() != g.atoms() {
        return Err(Error::ShapeMismatch("systems differ in atom count".into()));
    }
    let mut total = 0.0;
    for ((fk, gk), w) in f.maps().iter().zip(g.maps()).zip(f.weights()) {
        let mut c0: f64 = 0.0;
        let mut c1: f64 = 0.0;
        for x in grid(space) {
            let p = SpacePoint::scalar(x);
            let (a, b) = (fk.try_apply(&p)?.value(), gk.try_apply(&p)?.value());
            c0 = c0.max(if space.is_periodic() {
                circle_distance(a, b)
            } else {
                (a - b).abs()
            });
            if with_derivative {
                let da = fk.derivative(x).unwrap_or(f64::NAN);
                let db = gk.derivative(x).unwrap_or(f64::NAN);
                c1 = c1.max((da - db).abs());
            }
        }
        total += w * (c0 + c1);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderFit {
    pub c: f64,
    pub gamma: f64,
    pub gamma_stderr: f64,
    pub residual: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub t: Vec<f64>,
    /// `λ̂₁(t)`, `λ̂(μ_t)` or `W₁(μ̂_t, μ̂_0)`; NaN where undefined.
    pub estimate: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Distance from the system at `t` to the system at `t = 0`.
    pub distance: Vec<f64>,
    /// Number of stationary measures per `t` (measure sweeps only).
    pub multiplicity: Option<Vec<usize>>,
    /// `None` with fewer than four usable points.
    pub fit: Option<HolderFit>,
}

/// Least squares of `log|Δ|` on `log D` over rows with `D > 0` and a
/// signal above three standard errors.
pub fn holder_fit(distance: &[f64], delta: &[f64], delta_stderr: &[f64]) -> Option<HolderFit> {
    let (x, y): (Vec<f64>, Vec<f64>) = distance
        .iter()
        .zip(delta)
        .zip(delta_stderr)
        .filter(|((d, v), s)| **d > 0.0 && v.is_finite() && v.abs() > 3.0 * **s && **v != 0.0)
        .map(|((d, v), _)| (d.ln(), v.abs().ln()))
        .unzip();
    if x.len() < MIN_FIT_POINTS {
        return None;
    }
    let fit = stats::linear_fit(&x, &y)?;
    Some(HolderFit {
        c: fit.intercept.exp(),
        gamma: fit.slope,
        gamma_stderr: fit.slope_stderr,
        residual: fit.residual,
        points: x.len(),
    })
}

fn base_index(t_list: &[f64]) -> Result<usize> {
    t_list
        .iter()
        .position(|t| *t == 0.0)
        .ok_or_else(|| Error::InvalidParameter("t_list must contain 0".into()))
}

fn finish(t_list: &[f64], est: Vec<Estimate>, distance: Vec<f64>, multiplicity: Option<Vec<usize>>) -> Result<SweepResult> {
    let b = base_index(t_list)?;
    let delta: Vec<f64> = est.iter().map(|e| e.value - est[b].value).collect();
    let se: Vec<f64> = est.iter().map(|e| e.combined_stderr(&est[b])).collect();
    Ok(SweepResult {
        t: t_list.to_vec(),
        fit: holder_fit(&distance, &delta, &se),
        estimate: est.iter().map(|e| e.value).collect(),
        stderr: est.iter().map(|e| e.stderr).collect(),
        distance,
        multiplicity,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FurstenbergParams {
    pub burn_in: usize,
    pub samples: usize,
    pub seed: u64,
}

/// `λ̂₁` along `base + t·direction`, one Furstenberg estimate per `t` with a
/// shared seed so that all `t` see the same words.
pub fn lambda1_sweep(base: &Cocycle, direction: &[DMatrix<f64>], t_list: &[f64], params: FurstenbergParams) -> Result<SweepResult> {
    if direction.len() != base.atoms().len() {
        return Err(Error::ShapeMismatch("one direction matrix per atom".into()));
    }
    if direction.iter().any(|d| d.shape() != (base.dim(), base.dim())) {
        return Err(Error::ShapeMismatch("direction matrices must match the cocycle".into()));
    }
    base_index(t_list)?;
    let rows: Vec<(Estimate, f64)> = t_list
        .par_iter()
        .map(|&t| {
            let atoms = base.atoms().iter().zip(direction).map(|(a, d)| a + d * t).collect();
            let ct = Cocycle::new(atoms, base.weights().to_vec()).map_err(|e| match e {
                Error::NotInvertible(_) => Error::NotInvertibleAt { t },
                e => e,
            })?;
            let est = ct.furstenberg_estimate(params.burn_in, params.samples, params.seed)?;
            Ok((est, cocycle_distance(&ct, base)?))
        })
        .collect::<Result<_>>()?;
    let (est, dist) = rows.into_iter().unzip();
    finish(t_list, est, dist, None)
}

/// Birkhoff average of `Σ_s p_s log|f_s′(x_k)|` along one chain of the
/// random walk from `start`; batch-means stderr.
pub fn birkhoff_exponent(sys: &RandomMapSystem, start: &SpacePoint, burn_in: usize, steps: usize, seed: u64) -> Result<Estimate> {
    if steps < 100 {
        return Err(Error::InvalidParameter(format!("need steps >= 100, got {steps}")));
    }
    let mut symbols = SymbolStream::new(sys.sampler(), seed, stream_id(Purpose::Word, 0));
    let mut p = *start;
    for _ in 0..burn_in {
        p = sys.apply(symbols.next_symbol(), &p)?;
    }
    let mut values = Vec::with_capacity(steps);
    for k in 0..steps {
        let mut v = 0.0;
        for (s, w) in sys.weights().iter().enumerate() {
            v += w * sys.log_step_lipschitz(s, &p, k)?.0;
        }
        values.push(v);
        p = sys.apply(symbols.next_symbol(), &p)?;
    }
    Ok(stats::batch_means(&values, BIRKHOFF_BATCHES))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirkhoffParams {
    pub start: SpacePoint,
    pub burn_in: usize,
    pub steps: usize,
    pub seed: u64,
}

/// `λ̂(μ_t)` along a path of circle (or interval) diffeomorphisms against
/// the `C¹` distance to `t = 0`.
pub fn circle_exponent_sweep(path: &SystemPath, t_list: &[f64], params: &BirkhoffParams) -> Result<SweepResult> {
    if !path.space.is_one_dimensional() {
        return Err(Error::InvalidParameter("paths live on 1-D spaces".into()));
    }
    let base = path.at(0.0)?;
    base_index(t_list)?;
    let rows: Vec<(Estimate, f64)> = t_list
        .par_iter()
        .map(|&t| {
            let sys = path.at(t)?;
            let est = birkhoff_exponent(&sys, &params.start, params.burn_in, params.steps, params.seed)?;
            Ok((est, map_distance(path.space, &sys, &base, true)?))
        })
        .collect::<Result<_>>()?;
    let (est, dist) = rows.into_iter().unzip();
    finish(t_list, est, dist, None)
}

/// Ulam stationary measures per `t` on a fixed grid and their `W₁` distance
/// to the measure at `t = 0`, against the `C⁰` distance. When both ends have
/// the same number of measures they are paired in grid order and the largest
/// pairwise distance is reported; otherwise the row is NaN.
pub fn stationary_stability_sweep(path: &SystemPath, t_list: &[f64], grid: &Grid) -> Result<SweepResult> {
    if grid.space() != path.space {
        return Err(Error::InvalidParameter("grid and path live on different spaces".into()));
    }
    base_index(t_list)?;
    let base = path.at(0.0)?;
    let measures = |sys: &RandomMapSystem| -> Result<Vec<Vec<(f64, f64)>>> {
        let report = stationary_report(&discretize(sys, grid)?, ULAM_TOL)?;
        Ok(report.measures.iter().map(|m| grid_atoms(grid, m)).collect())
    };
    let mu0 = measures(&base)?;
    let rows: Vec<(f64, f64, usize)> = t_list
        .par_iter()
        .map(|&t| {
            let sys = path.at(t)?;
            let mu = measures(&sys)?;
            let w1 = if mu.len() == mu0.len() {
                mu.iter()
                    .zip(&mu0)
                    .map(|(a, b)| wasserstein1(&path.space, a, b))
                    .fold(0.0, f64::max)
            } else {
                f64::NAN
            };
            Ok((w1, map_distance(path.space, &sys, &base, false)?, mu.len()))
        })
        .collect::<Result<_>>()?;
    let est = rows.iter().map(|r| Estimate::exact(r.0)).collect();
    let dist = rows.iter().map(|r| r.1).collect();
    let mult = rows.iter().map(|r| r.2).collect();
    finish(t_list, est, dist, Some(mult))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;

    fn params(seed: u64) -> FurstenbergParams {
        FurstenbergParams {
            burn_in: 1000,
            samples: 20_000,
            seed,
        }
    }

    #[test]
    fn golden_shift_matches_eigenvalue() {
        let base = catalog::golden_cocycle();
        let t_list = [0.0, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1];
        let r = lambda1_sweep(&base, &[DMatrix::identity(2, 2)], &t_list, params(1)).unwrap();
        let phi = (3.0 + 5f64.sqrt()) / 2.0;
        for (k, &t) in t_list.iter().enumerate() {
            let exact = (phi + t).ln();
            assert!(
                (r.estimate[k] - exact).abs() <= 3.0 * r.stderr[k] + 1e-9,
                "t={t}: {} vs {exact}",
                r.estimate[k]
            );
            assert!((r.distance[k] - t).abs() < 1e-12);
        }
        let fit = r.fit.unwrap();
        assert!((0.8..=1.2).contains(&fit.gamma), "{fit:?}");
    }

    #[test]
    fn zero_direction_gives_flat_curve() {
        let base = catalog::rotation_cocycle(1.0);
        let r = lambda1_sweep(&base, &[DMatrix::zeros(2, 2)], &[0.0, 0.01, 0.1], params(0)).unwrap();
        assert!(r.distance.iter().all(|d| *d == 0.0));
        assert!(r.estimate.iter().all(|e| *e == r.estimate[0]));
        assert!(r.fit.is_none());
    }

    #[test]
    fn singular_perturbation_is_rejected() {
        let base = Cocycle::constant(DMatrix::identity(2, 2)).unwrap();
        let e = lambda1_sweep(&base, &[-DMatrix::identity(2, 2)], &[0.0, 1.0], params(0)).unwrap_err();
        assert_eq!(e, Error::NotInvertibleAt { t: 1.0 });
    }

    #[test]
    fn two_attractor_exponent_at_zero() {
        let path = SystemPath::two_attractor_shift();
        let t_list = [0.0, 0.0, 0.01, 0.02, 0.05, 0.1];
        let p = BirkhoffParams {
            start: SpacePoint::scalar(0.0),
            burn_in: 0,
            steps: 1000,
            seed: 4,
        };
        let r = circle_exponent_sweep(&path, &t_list, &p).unwrap();
        for (k, &t) in t_list.iter().enumerate() {
            let exact = ((0.5 - t).ln() + 0.2f64.ln()) / 2.0;
            assert!((r.estimate[k] - exact).abs() < 1e-3, "t={t}");
        }
        assert_eq!(r.distance[1], 0.0);
        let fit = r.fit.unwrap();
        assert_eq!(fit.points, 4);
        assert!((fit.gamma - 1.0).abs() < 0.1, "{fit:?}");
    }

    #[test]
    fn c1_distance_of_wave_shift() {
        // amplitude shift t: sup|Δf| = t/4π, sup|Δf′| = t, weight 1/2
        let path = SystemPath::two_attractor_shift();
        let t = 0.01;
        let d = map_distance(Space::Circle, &path.at(t).unwrap(), &path.at(0.0).unwrap(), true).unwrap();
        let exact = 0.5 * (t / (4.0 * std::f64::consts::PI) + t);
        assert!((d - exact).abs() < 1e-6, "{d} vs {exact}");
    }

    #[test]
    fn folding_is_rejected() {
        let path = SystemPath::two_attractor_shift();
        assert_eq!(path.at(0.6).unwrap_err(), Error::NotDiffeomorphismAt { t: 0.6 });
        let r = circle_exponent_sweep(
            &path,
            &[0.0, 0.6],
            &BirkhoffParams {
                start: SpacePoint::scalar(0.0),
                burn_in: 0,
                steps: 100,
                seed: 0,
            },
        );
        assert!(matches!(r, Err(Error::NotDiffeomorphismAt { .. })));
    }

    #[test]
    fn ifs_stationary_curve() {
        let path = SystemPath::ifs_slopes();
        let grid = Grid::new(path.space, 256).unwrap();
        let t_list = [0.0, 0.005, 0.01, 0.02, 0.05];
        let r = stationary_stability_sweep(&path, &t_list, &grid).unwrap();
        assert_eq!(r.estimate[0], 0.0);
        assert_eq!(r.distance[0], 0.0);
        for (k, &t) in t_list.iter().enumerate() {
            assert!(r.estimate[k] <= grid.width() + 5.0 * t, "t={t}: {}", r.estimate[k]);
        }
        assert!(r.multiplicity.unwrap().iter().all(|m| *m == 1));
    }

    #[test]
    fn ifs_curve_agrees_with_double_resolution() {
        // the same sweep on a grid twice as fine moves by at most a cell
        let path = SystemPath::ifs_slopes();
        let t_list = [0.0, 0.02, 0.05];
        let coarse = stationary_stability_sweep(&path, &t_list, &Grid::new(path.space, 256).unwrap()).unwrap();
        let fine = stationary_stability_sweep(&path, &t_list, &Grid::new(path.space, 512).unwrap()).unwrap();
        for k in 0..t_list.len() {
            assert!((coarse.estimate[k] - fine.estimate[k]).abs() <= 2.0 / 256.0);
        }
    }

    #[test]
    fn two_attractor_keeps_two_measures() {
        let path = SystemPath::two_attractor_shift();
        let grid = Grid::new(Space::Circle, 512).unwrap();
        let r = stationary_stability_sweep(&path, &[0.0, 0.01, 0.03, 0.05, -0.05], &grid).unwrap();
        assert!(r.multiplicity.unwrap().iter().all(|m| *m == 2));
        assert_eq!(r.estimate[0], 0.0);
    }
}
