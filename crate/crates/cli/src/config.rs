//! Experiment configuration: a strict schema, parsed from TOML (or from the
//! JSON echo inside a report) and resolved into library objects before any
//! computation starts.

use std::path::PathBuf;

use nalgebra::DMatrix;
use randmaps::continuity::PathAtom;
use randmaps::{catalog, Cocycle, FiberMap, FiniteMarkovOperator, RandomMapSystem, Space, SpacePoint, SystemPath};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub system: SystemConfig,
    pub experiment: Experiment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Directory for `report.json` and CSV tables.
    pub dir: PathBuf,
}

/// Where the system comes from. A catalog name is resolved against whatever
/// the experiment needs: a map system, a cocycle, a finite chain or a path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemConfig {
    Catalog {
        name: String,
    },
    Maps {
        space: Space,
        maps: Vec<MapConfig>,
        weights: Vec<f64>,
    },
    Cocycle {
        /// One square matrix per atom, as rows.
        matrices: Vec<Vec<Vec<f64>>>,
        weights: Vec<f64>,
    },
    Chain {
        /// Row-stochastic transition matrix.
        rows: Vec<Vec<f64>>,
    },
    Path {
        space: Space,
        atoms: Vec<PathAtom>,
        weights: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum MapConfig {
    Affine { slope: f64, offset: f64 },
    CircleWave { rotation: f64, amplitude: f64, frequency: u32 },
    Projective { matrix: Vec<Vec<f64>> },
    Tabulated { knots: Vec<f64>, values: Vec<f64> },
}

/// Reference value `λ̂` used to center `S_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum LambdaConfig {
    Analytic {
        value: f64,
    },
    /// Furstenberg chain on the projective space (cocycles only).
    Furstenberg {
        burn_in: usize,
        samples: usize,
    },
    /// Birkhoff average of the exponent integrand (map systems only).
    Birkhoff {
        burn_in: usize,
        steps: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "quantity", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepTarget {
    /// Top exponent of `base + t·direction`; the system must be a cocycle.
    Lambda1 {
        direction: Vec<Vec<Vec<f64>>>,
        burn_in: usize,
        samples: usize,
    },
    /// Exponent of the stationary measure along a path of 1-D maps.
    CircleExponent { start: Vec<f64>, burn_in: usize, steps: usize },
    /// `W₁` between Ulam stationary measures along a path.
    Stationary { cells: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    Certificate {
        eps: f64,
        n: usize,
        mc_samples: usize,
        margin: f64,
    },
    Spectrum {
        n: usize,
        trials: usize,
    },
    Furstenberg {
        burn_in: usize,
        samples: usize,
    },
    Koopman {
        cells: usize,
        tol: f64,
    },
    Kingman {
        n: usize,
        tail_window: usize,
        phi1: Vec<f64>,
    },
    Clt {
        start: Vec<f64>,
        n_list: Vec<usize>,
        trials: usize,
        lambda: LambdaConfig,
        /// Largest accepted KS distance for a non-degenerate row.
        ks_max: f64,
    },
    LargeDeviation {
        start: Vec<f64>,
        eps_list: Vec<f64>,
        n_list: Vec<usize>,
        trials: usize,
        lambda: LambdaConfig,
    },
    Sweep {
        t_list: Vec<f64>,
        target: SweepTarget,
    },
    Synchronization {
        pair_grid_eps: f64,
        n: usize,
        trials: usize,
        threshold: f64,
    },
    Basins {
        cells: usize,
        tol: f64,
        n: usize,
        trials: usize,
    },
    LawConvergence {
        cells: usize,
        tol: f64,
        start: Vec<f64>,
        n_list: Vec<usize>,
        trials: usize,
    },
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::ConfigInvalid {
            path: "<document>".into(),
            message: e.message().trim().to_string(),
        })?;
        let value = serde_json::to_value(table).map_err(|e| CliError::ConfigInvalid {
            path: "<document>".into(),
            message: e.to_string(),
        })?;
        Self::from_json(value)
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self, CliError> {
        let config: Self = serde_path_to_error::deserialize(value).map_err(|e| CliError::ConfigInvalid {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Checks that do not need any estimation, so a bad config fails fast.
    pub fn validate(&self) -> Result<(), CliError> {
        if let SystemConfig::Maps { weights, .. } | SystemConfig::Cocycle { weights, .. } | SystemConfig::Path { weights, .. } =
            &self.system
        {
            randmaps::systems::validate_weights(weights).map_err(|e| invalid("system.weights", e))?;
        }
        let positive = |path: &str, v: usize| if v == 0 { Err(invalid(path, "must be at least 1")) } else { Ok(()) };
        let ascending = |path: &str, v: &[usize]| {
            if v.is_empty() || v.contains(&0) || v.windows(2).any(|w| w[0] >= w[1]) {
                Err(invalid(path, "must be a nonempty, strictly ascending list of positive integers"))
            } else {
                Ok(())
            }
        };
        match &self.experiment {
            Experiment::Certificate { eps, n, mc_samples, .. } => {
                positive_f64("experiment.eps", *eps)?;
                positive("experiment.n", *n)?;
                positive("experiment.mc_samples", *mc_samples)?;
            }
            Experiment::Spectrum { n, trials } => {
                positive("experiment.n", *n)?;
                positive("experiment.trials", *trials)?;
            }
            Experiment::Furstenberg { samples, .. } => positive("experiment.samples", *samples)?,
            Experiment::Koopman { cells, tol } | Experiment::Basins { cells, tol, .. } | Experiment::LawConvergence { cells, tol, .. } => {
                positive("experiment.cells", *cells)?;
                positive_f64("experiment.tol", *tol)?;
            }
            Experiment::Kingman { n, phi1, .. } => {
                positive("experiment.n", *n)?;
                if phi1.iter().any(|v| !v.is_finite()) {
                    return Err(invalid("experiment.phi1", "entries must be finite"));
                }
            }
            Experiment::Clt { n_list, ks_max, .. } => {
                ascending("experiment.n_list", n_list)?;
                positive_f64("experiment.ks_max", *ks_max)?;
            }
            Experiment::LargeDeviation { eps_list, n_list, .. } => {
                ascending("experiment.n_list", n_list)?;
                for (i, e) in eps_list.iter().enumerate() {
                    positive_f64(&format!("experiment.eps_list[{i}]"), *e)?;
                }
                if eps_list.is_empty() {
                    return Err(invalid("experiment.eps_list", "must not be empty"));
                }
            }
            Experiment::Sweep { t_list, .. } => {
                if !t_list.contains(&0.0) {
                    return Err(invalid("experiment.t_list", "must contain 0"));
                }
                if t_list.iter().any(|t| !t.is_finite()) {
                    return Err(invalid("experiment.t_list", "entries must be finite"));
                }
            }
            Experiment::Synchronization {
                pair_grid_eps, threshold, ..
            } => {
                positive_f64("experiment.pair_grid_eps", *pair_grid_eps)?;
                positive_f64("experiment.threshold", *threshold)?;
            }
        }
        Ok(())
    }
}

fn positive_f64(path: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(path, format!("must be positive and finite, got {v}")))
    }
}

pub fn invalid(path: &str, message: impl ToString) -> CliError {
    CliError::ConfigInvalid {
        path: path.to_string(),
        message: message.to_string(),
    }
}

pub fn matrix(rows: &[Vec<f64>], path: &str) -> Result<DMatrix<f64>, CliError> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(invalid(path, "matrix must be square and nonempty"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn build_map(space: Space, m: &MapConfig) -> randmaps::Result<FiberMap> {
    match m {
        MapConfig::Affine { slope, offset } => FiberMap::affine(space, *slope, *offset),
        MapConfig::CircleWave {
            rotation,
            amplitude,
            frequency,
        } => FiberMap::circle_wave(*rotation, *amplitude, *frequency),
        MapConfig::Projective { matrix: rows } => {
            let n = rows.len();
            if n == 0 || rows.iter().any(|r| r.len() != n) {
                return Err(randmaps::Error::ShapeMismatch("matrix must be square".into()));
            }
            FiberMap::projective(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
        }
        MapConfig::Tabulated { knots, values } => FiberMap::tabulated(space, knots.clone(), values.clone()),
    }
}

fn unknown_name(kind: &str, name: &str) -> CliError {
    invalid("system.name", format!("no built-in {kind} named `{name}`"))
}

impl SystemConfig {
    pub fn maps(&self) -> Result<RandomMapSystem, CliError> {
        match self {
            SystemConfig::Catalog { name } => catalog::system_by_name(name).ok_or_else(|| unknown_name("map system", name)),
            SystemConfig::Maps { space, maps, weights } => {
                if maps.len() != weights.len() {
                    return Err(invalid("system.weights", "one weight per map"));
                }
                let mut atoms = Vec::with_capacity(maps.len());
                for (i, (m, w)) in maps.iter().zip(weights).enumerate() {
                    atoms.push((build_map(*space, m).map_err(|e| invalid(&format!("system.maps[{i}]"), e))?, *w));
                }
                RandomMapSystem::new(atoms).map_err(|e| invalid("system", e))
            }
            SystemConfig::Cocycle { .. } => self.cocycle()?.projective_system().map_err(|e| invalid("system", e)),
            _ => Err(invalid("system.source", "this experiment needs a map system or a cocycle")),
        }
    }

    pub fn cocycle(&self) -> Result<Cocycle, CliError> {
        match self {
            SystemConfig::Catalog { name } => catalog::cocycle_by_name(name).ok_or_else(|| unknown_name("cocycle", name)),
            SystemConfig::Cocycle { matrices, weights } => {
                let atoms = matrices
                    .iter()
                    .enumerate()
                    .map(|(i, m)| matrix(m, &format!("system.matrices[{i}]")))
                    .collect::<Result<Vec<_>, _>>()?;
                Cocycle::new(atoms, weights.clone()).map_err(|e| invalid("system", e))
            }
            _ => Err(invalid("system.source", "this experiment needs a cocycle")),
        }
    }

    pub fn chain(&self) -> Result<FiniteMarkovOperator, CliError> {
        match self {
            SystemConfig::Catalog { name } => FiniteMarkovOperator::by_name(name).ok_or_else(|| unknown_name("chain", name)),
            SystemConfig::Chain { rows } => FiniteMarkovOperator::from_rows(rows).map_err(|e| invalid("system.rows", e)),
            _ => Err(invalid("system.source", "this experiment needs a finite chain")),
        }
    }

    pub fn path(&self) -> Result<SystemPath, CliError> {
        match self {
            SystemConfig::Catalog { name } => match name.as_str() {
                "two_attractor_shift" => Ok(SystemPath::two_attractor_shift()),
                "ifs_slopes" => Ok(SystemPath::ifs_slopes()),
                "minimal_circle_amplitude" => Ok(SystemPath::minimal_circle_amplitude()),
                _ => Err(unknown_name("path", name)),
            },
            SystemConfig::Path { space, atoms, weights } => {
                let path = SystemPath {
                    space: *space,
                    atoms: atoms.clone(),
                    weights: weights.clone(),
                };
                path.at(0.0).map_err(|e| invalid("system", e))?;
                Ok(path)
            }
            _ => Err(invalid("system.source", "this experiment needs a path of systems")),
        }
    }
}

/// A start point for a map system: one coordinate on 1-D spaces, a
/// direction vector on projective space.
pub fn start_point(space: Space, coords: &[f64], path: &str) -> Result<SpacePoint, CliError> {
    match space {
        Space::Projective { dim } => {
            if coords.len() != dim {
                return Err(invalid(path, format!("need {dim} coordinates")));
            }
            SpacePoint::line(coords).map_err(|e| invalid(path, e))
        }
        _ => match coords {
            [x] if space.contains(&SpacePoint::scalar(*x), 0.0) => Ok(SpacePoint::scalar(*x)),
            [_] => Err(invalid(path, "point lies outside the space")),
            _ => Err(invalid(path, "need exactly one coordinate")),
        },
    }
}

/// A unit start vector for a cocycle.
pub fn start_vector(dim: usize, coords: &[f64], path: &str) -> Result<Vec<f64>, CliError> {
    let norm = coords.iter().map(|v| v * v).sum::<f64>().sqrt();
    if coords.len() != dim || !(norm > 0.0 && norm.is_finite()) {
        return Err(invalid(path, format!("need a nonzero vector of length {dim}")));
    }
    Ok(coords.iter().map(|v| v / norm).collect())
}
