//! Dispatch from a validated config to the library, producing a report.

use randmaps::continuity::{self, BirkhoffParams, FurstenbergParams};
use randmaps::kingman::{build_additive, verify_uniform_kingman};
use randmaps::koopman::{self, Grid};
use randmaps::limits::{self, SampleSource};
use randmaps::{lyapunov, Estimate, RandomMapSystem, SweepResult};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{invalid, matrix, start_point, start_vector, Experiment, ExperimentConfig, LambdaConfig, SweepTarget, SystemConfig};
use crate::error::{CliError, Context};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
}

/// A CSV table: header plus rows of already formatted cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub config: ExperimentConfig,
    pub results: Value,
    pub verdicts: Vec<Verdict>,
    pub wall_clock_seconds: f64,
}

impl RunReport {
    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }
}

pub struct Outcome {
    pub results: Value,
    pub verdicts: Vec<Verdict>,
    pub tables: Vec<Table>,
}

fn verdict(name: impl Into<String>, pass: bool) -> Verdict {
    Verdict { name: name.into(), pass }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("result types serialize to JSON")
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

pub fn run(config: &ExperimentConfig) -> Result<(RunReport, Vec<Table>), CliError> {
    let start = std::time::Instant::now();
    let outcome = execute(config)?;
    let report = RunReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        results: outcome.results,
        verdicts: outcome.verdicts,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((report, outcome.tables))
}

pub fn execute(config: &ExperimentConfig) -> Result<Outcome, CliError> {
    let seed = config.master_seed;
    let sys = &config.system;
    match &config.experiment {
        Experiment::Certificate {
            eps,
            n,
            mc_samples,
            margin,
        } => {
            let system = sys.maps()?;
            let cert = lyapunov::mostly_contracting_certificate(&system, *eps, *n, *mc_samples, *margin, seed).context("certificate")?;
            Ok(Outcome {
                verdicts: vec![verdict("mostly_contracting", cert.pass)],
                results: to_value(&cert),
                tables: vec![],
            })
        }
        Experiment::Spectrum { n, trials } => {
            let c = sys.cocycle()?;
            let s = c.lyapunov_spectrum(*n, *trials, seed).context("spectrum")?;
            let mut t = Table::new("spectrum", &["index", "exponent", "stderr"]);
            for (i, (e, se)) in s.exponents.iter().zip(&s.stderr).enumerate() {
                t.push(vec![(i + 1).to_string(), fmt(*e), fmt(*se)]);
            }
            Ok(Outcome {
                results: to_value(&s),
                verdicts: vec![],
                tables: vec![t],
            })
        }
        Experiment::Furstenberg { burn_in, samples } => {
            let c = sys.cocycle()?;
            let e = c.furstenberg_estimate(*burn_in, *samples, seed).context("furstenberg estimate")?;
            Ok(Outcome {
                results: json!({ "lambda1": e }),
                verdicts: vec![],
                tables: vec![],
            })
        }
        Experiment::Koopman { cells, tol } => {
            let system = sys.maps()?;
            let (grid, report) = ulam(&system, *cells, *tol)?;
            let mut header = vec!["cell".to_string(), "center".to_string()];
            header.extend((0..report.multiplicity).map(|k| format!("mu_{k}")));
            let mut t = Table {
                name: "stationary".into(),
                header,
                rows: vec![],
            };
            for i in 0..grid.len() {
                let mut row = vec![i.to_string(), fmt(grid.center_unit(i))];
                row.extend(report.measures.iter().map(|m| fmt(m[i])));
                t.push(row);
            }
            Ok(Outcome {
                results: json!({
                    "multiplicity": report.multiplicity,
                    "class_sizes": report.classes.iter().map(Vec::len).collect::<Vec<_>>(),
                    "periods": report.periods,
                    "transient_cells": report.transient.len(),
                    "rho2": report.rho2,
                    "rho2_converged": report.rho2_converged,
                    "aperiodic": report.is_aperiodic(),
                }),
                verdicts: vec![],
                tables: vec![t],
            })
        }
        Experiment::Kingman { n, tail_window, phi1 } => {
            let p = sys.chain()?;
            if phi1.len() != p.states() {
                return Err(invalid("experiment.phi1", format!("need {} entries, one per state", p.states())));
            }
            let seq = build_additive(&p, phi1, *n).context("additive sequence")?;
            let r = verify_uniform_kingman(&p, &seq, *tail_window).context("kingman check")?;
            let mut t = Table::new("kingman", &["n", "max_phi_n_over_n"]);
            for k in 1..=seq.len() {
                let m = seq.term(k).iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
                t.push(vec![k.to_string(), fmt(m / k as f64)]);
            }
            let mut verdicts = vec![verdict("limits_agree", r.agree)];
            if r.additive {
                verdicts.push(verdict("additive_identity", r.additive_gap == Some(0.0)));
            }
            Ok(Outcome {
                results: to_value(&r),
                verdicts,
                tables: vec![t],
            })
        }
        Experiment::Clt {
            start,
            n_list,
            trials,
            lambda,
            ks_max,
        } => {
            let (samples, lambda_used) = with_source(sys, start, lambda, seed, |src, lam, label| {
                limits::collect_sn(src, n_list, *trials, lam, label, seed).context("collecting S_n")
            })?;
            let rows = limits::clt_test(&samples).context("CLT test")?;
            let mut t = Table::new("clt", &["n", "mean", "mean_band", "sigma2", "sigma2_stderr", "ks", "degenerate"]);
            let mut verdicts = Vec::new();
            for r in &rows {
                t.push(vec![
                    r.n.to_string(),
                    fmt(r.mean),
                    fmt(r.mean_band),
                    fmt(r.sigma2),
                    fmt(r.sigma2_stderr),
                    fmt(r.ks),
                    r.degenerate.to_string(),
                ]);
                if !r.degenerate {
                    verdicts.push(verdict(format!("ks_below_max_n{}", r.n), r.ks < *ks_max));
                }
            }
            let berry_esseen = if n_list.len() >= 3 && rows.iter().all(|r| !r.degenerate) {
                Some(limits::berry_esseen_fit(&samples).context("Berry–Esseen fit")?)
            } else {
                None
            };
            Ok(Outcome {
                results: json!({
                    "lambda_hat": lambda_used,
                    "lambda_source": samples.lambda_source,
                    "rows": rows,
                    "berry_esseen": berry_esseen,
                }),
                verdicts,
                tables: vec![t],
            })
        }
        Experiment::LargeDeviation {
            start,
            eps_list,
            n_list,
            trials,
            lambda,
        } => {
            let (fit, lambda_used) = with_source(sys, start, lambda, seed, |src, lam, _| {
                limits::large_deviation_fit(src, eps_list, n_list, *trials, lam, seed).context("large deviations")
            })?;
            let mut t = Table::new("large_deviation", &["n", "eps", "p_hat", "count", "omitted"]);
            for c in &fit.cells {
                t.push(vec![
                    c.n.to_string(),
                    fmt(c.eps),
                    fmt(c.p_hat),
                    c.count.to_string(),
                    c.omitted.to_string(),
                ]);
            }
            let verdicts = fit
                .fits
                .iter()
                .flatten()
                .map(|f| verdict(format!("rate_positive_eps{}", f.eps), f.decreasing && f.h - 3.0 * f.h_stderr > 0.0))
                .collect();
            Ok(Outcome {
                results: json!({ "lambda_hat": lambda_used, "fit": fit }),
                verdicts,
                tables: vec![t],
            })
        }
        Experiment::Sweep { t_list, target } => {
            let r = sweep(sys, t_list, target, seed)?;
            let mut t = Table::new("sweep", &["t", "distance", "estimate", "stderr"]);
            for k in 0..r.t.len() {
                t.push(vec![fmt(r.t[k]), fmt(r.distance[k]), fmt(r.estimate[k]), fmt(r.stderr[k])]);
            }
            Ok(Outcome {
                results: to_value(&r),
                verdicts: vec![],
                tables: vec![t],
            })
        }
        Experiment::Synchronization {
            pair_grid_eps,
            n,
            trials,
            threshold,
        } => {
            let system = sys.maps()?;
            let r = lyapunov::synchronization_test(&system, *pair_grid_eps, *n, *trials, *threshold, seed).context("synchronization")?;
            Ok(Outcome {
                results: to_value(&r),
                verdicts: vec![],
                tables: vec![],
            })
        }
        Experiment::Basins { cells, tol, n, trials } => {
            let system = sys.maps()?;
            let (grid, report) = ulam(&system, *cells, *tol)?;
            let b = koopman::empirical_basins(&system, &grid, &report, *n, *trials, seed).context("basins")?;
            let mut header = vec!["cell".to_string(), "center".to_string()];
            header.extend((0..report.multiplicity).map(|k| format!("basin_{k}")));
            header.push("unattributed".into());
            let mut t = Table {
                name: "basins".into(),
                header,
                rows: vec![],
            };
            for i in 0..grid.len() {
                let mut row = vec![i.to_string(), fmt(grid.center_unit(i))];
                row.extend(b.attribution[i].iter().map(|v| fmt(*v)));
                row.push(fmt(b.unattributed[i]));
                t.push(row);
            }
            Ok(Outcome {
                results: json!({
                    "multiplicity": report.multiplicity,
                    "unattributed_fraction": b.unattributed_fraction,
                    "threshold": b.threshold,
                }),
                verdicts: vec![],
                tables: vec![t],
            })
        }
        Experiment::LawConvergence {
            cells,
            tol,
            start,
            n_list,
            trials,
        } => {
            let system = sys.maps()?;
            let x = start_point(system.space(), start, "experiment.start")?;
            let (grid, report) = ulam(&system, *cells, *tol)?;
            let r = koopman::law_convergence_test(&system, &x, &grid, &report, n_list, *trials, seed).context("law convergence")?;
            let mut t = Table::new("law_convergence", &["n", "w1", "nearest"]);
            for k in 0..r.n.len() {
                t.push(vec![r.n[k].to_string(), fmt(r.w1[k]), r.nearest[k].to_string()]);
            }
            Ok(Outcome {
                results: to_value(&r),
                verdicts: vec![],
                tables: vec![t],
            })
        }
    }
}

fn ulam(system: &RandomMapSystem, cells: usize, tol: f64) -> Result<(Grid, randmaps::StationaryReport), CliError> {
    let grid = Grid::new(system.space(), cells).map_err(|e| invalid("experiment.cells", e))?;
    let q = koopman::discretize(system, &grid).context("Ulam discretization")?;
    let report = koopman::stationary_report(&q, tol).context("stationary measures")?;
    Ok((grid, report))
}

/// Builds the `S_n` source the system calls for (a cocycle when the system
/// is given by matrices, a map system otherwise), resolves `λ̂` and runs `f`.
fn with_source<T>(
    sys: &SystemConfig,
    start: &[f64],
    lambda: &LambdaConfig,
    seed: u64,
    f: impl FnOnce(&SampleSource, Estimate, &str) -> Result<T, CliError>,
) -> Result<(T, Estimate), CliError> {
    let as_cocycle = match sys {
        SystemConfig::Cocycle { .. } => true,
        SystemConfig::Catalog { name } => randmaps::catalog::COCYCLE_NAMES.contains(&name.as_str()),
        _ => false,
    };
    if as_cocycle {
        let c = sys.cocycle()?;
        let x = start_vector(c.dim(), start, "experiment.start")?;
        let (lam, label) = match *lambda {
            LambdaConfig::Analytic { value } => (Estimate::exact(value), "analytic"),
            LambdaConfig::Furstenberg { burn_in, samples } => (
                c.furstenberg_estimate(burn_in, samples, seed).context("λ̂ by Furstenberg")?,
                "furstenberg",
            ),
            LambdaConfig::Birkhoff { .. } => return Err(invalid("experiment.lambda.source", "cocycles use `furstenberg` or `analytic`")),
        };
        let out = f(&SampleSource::Cocycle { cocycle: &c, x: &x }, lam, label)?;
        Ok((out, lam))
    } else {
        let system = sys.maps()?;
        if !system.space().is_one_dimensional() {
            return Err(invalid("system", "limit theorems for maps need a 1-D space"));
        }
        let x = start_point(system.space(), start, "experiment.start")?;
        let (lam, label) = match *lambda {
            LambdaConfig::Analytic { value } => (Estimate::exact(value), "analytic"),
            LambdaConfig::Birkhoff { burn_in, steps } => (
                continuity::birkhoff_exponent(&system, &x, burn_in, steps, seed).context("λ̂ by Birkhoff average")?,
                "birkhoff",
            ),
            LambdaConfig::Furstenberg { .. } => {
                return Err(invalid("experiment.lambda.source", "map systems use `birkhoff` or `analytic`"))
            }
        };
        let out = f(&SampleSource::Maps { system: &system, x }, lam, label)?;
        Ok((out, lam))
    }
}

fn sweep(sys: &SystemConfig, t_list: &[f64], target: &SweepTarget, seed: u64) -> Result<SweepResult, CliError> {
    match target {
        SweepTarget::Lambda1 {
            direction,
            burn_in,
            samples,
        } => {
            let base = sys.cocycle()?;
            let dir = direction
                .iter()
                .enumerate()
                .map(|(i, m)| matrix(m, &format!("experiment.target.direction[{i}]")))
                .collect::<Result<Vec<_>, _>>()?;
            let params = FurstenbergParams {
                burn_in: *burn_in,
                samples: *samples,
                seed,
            };
            continuity::lambda1_sweep(&base, &dir, t_list, params).context("λ₁ sweep")
        }
        SweepTarget::CircleExponent { start, burn_in, steps } => {
            let path = sys.path()?;
            let params = BirkhoffParams {
                start: start_point(path.space, start, "experiment.target.start")?,
                burn_in: *burn_in,
                steps: *steps,
                seed,
            };
            continuity::circle_exponent_sweep(&path, t_list, &params).context("exponent sweep")
        }
        SweepTarget::Stationary { cells } => {
            let path = sys.path()?;
            let grid = Grid::new(path.space, *cells).map_err(|e| invalid("experiment.target.cells", e))?;
            continuity::stationary_stability_sweep(&path, t_list, &grid).context("stationary sweep")
        }
    }
}
