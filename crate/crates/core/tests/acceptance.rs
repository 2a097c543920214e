//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N: PASS|FAIL` line with the measured values.

use std::time::Instant;

use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use randmaps::catalog;
use randmaps::cocycles::{self, exterior2_norm, spectral_norm, Cocycle};
use randmaps::continuity::{self, BirkhoffParams, FurstenbergParams, SystemPath};
use randmaps::kingman::{build_additive, verify_uniform_kingman, FiniteMarkovOperator};
use randmaps::koopman::{self, Grid};
use randmaps::limits::{self, SampleSource};
use randmaps::lyapunov;
use randmaps::{Estimate, FiberMap, RandomMapSystem, Space, SpacePoint, Word};

const LN2: f64 = std::f64::consts::LN_2;

fn report(id: u32, pass: bool, start: Instant, detail: String) {
    println!(
        "criterion {id}: {} ({:.1}s) {detail}",
        if pass { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    );
    assert!(pass, "criterion {id} failed: {detail}");
}

fn ulam(sys: &RandomMapSystem, cells: usize) -> (koopman::DiscretizedKoopman, randmaps::StationaryReport) {
    let grid = Grid::new(sys.space(), cells).unwrap();
    let q = koopman::discretize(sys, &grid).unwrap();
    let r = koopman::stationary_report(&q, 1e-13).unwrap();
    (q, r)
}

#[test]
fn criterion_01_contracting_halves() {
    let start = Instant::now();
    let sys = catalog::ifs_halves();
    let cert = lyapunov::mostly_contracting_certificate(&sys, 0.05, 1, 100, 0.0, 1).unwrap();
    let cert_ok = cert.pass && cert.worst_estimate == -LN2 && cert.worst_stderr == 0.0;

    let fit = lyapunov::exponential_contraction_fit(&sys, &SpacePoint::scalar(0.3), 0.01, 30, 50, 2).unwrap();
    let fit_ok = (0.48..=0.52).contains(&fit.q_hat);

    let (q, r) = ulam(&sys, 64);
    let uniform_err = r.measures[0].iter().map(|m| (m - 1.0 / 64.0).abs()).fold(0.0, f64::max);
    let uniform_ok = r.multiplicity == 1 && uniform_err <= 1e-6;

    let law = koopman::law_convergence_test(&sys, &SpacePoint::scalar(0.0), &q.grid, &r, &[10], 20_000, 3).unwrap();
    let law_bound = 2f64.powi(-10) + 1.0 / 64.0;
    let law_ok = law.w1[0] <= law_bound;

    report(
        1,
        cert_ok && fit_ok && uniform_ok && law_ok,
        start,
        format!(
            "worst={} stderr={} q_hat={:.4} max|mu-1/64|={uniform_err:.2e} W1(n=10)={:.5} <= {law_bound:.5}",
            cert.worst_estimate, cert.worst_stderr, fit.q_hat, law.w1[0]
        ),
    );
}

#[test]
fn criterion_02_random_rotations() {
    let start = Instant::now();
    let sys = catalog::random_rotations();
    let cert = lyapunov::mostly_contracting_certificate(&sys, 0.05, 5, 100, 0.0, 1).unwrap();
    let points = lyapunov::exponents_on_net(&sys, 0.05, 5, 100, 1).unwrap();
    let max_abs = points.iter().map(|p| p.estimate.abs()).fold(0.0, f64::max);
    let sync = lyapunov::synchronization_test(&sys, 0.1, 200, 20, 0.01, 2).unwrap();
    let tau = std::f64::consts::TAU;
    let as_matrices = Cocycle::new(
        vec![
            catalog::rotation(tau * catalog::SILVER_ROTATION),
            catalog::rotation(tau * catalog::GOLDEN_ROTATION),
        ],
        vec![0.5, 0.5],
    )
    .unwrap();
    let spectrum = as_matrices.lyapunov_spectrum(1000, 8, 3).unwrap();
    let spectrum_ok = spectrum.exponents.iter().all(|e| e.abs() <= 1e-12);
    report(
        2,
        !cert.pass && max_abs <= 1e-12 && sync.fraction == 0.0 && spectrum_ok,
        start,
        format!(
            "certificate pass={} max|estimate|={max_abs:.1e} sync fraction={} spectrum={:?}",
            cert.pass, sync.fraction, spectrum.exponents
        ),
    );
}

#[test]
fn criterion_03_golden_matrix() {
    let start = Instant::now();
    let c = catalog::golden_cocycle();
    let exact = ((3.0 + 5f64.sqrt()) / 2.0).ln();
    let word = c.sample_word(1000, 0, 0);
    let by_product = c.log_product(&word).unwrap().log_scale / 1000.0;
    let by_chain = c.furstenberg_estimate(100, 10_000, 1).unwrap();
    let ok = (by_product - exact).abs() <= 1e-3 && (by_chain.value - exact).abs() <= 1e-3;
    report(
        3,
        ok,
        start,
        format!("exact={exact:.6} product={by_product:.6} furstenberg={:.6}", by_chain.value),
    );
}

#[test]
fn criterion_04_hyperbolic_rotation_pair() {
    let start = Instant::now();
    let c = catalog::hyperbolic_rotation();
    let product = c.top_exponent_by_product(20_000, 200, 11).unwrap();
    let chain = c.furstenberg_estimate(1000, 2_000_000, 12).unwrap();
    let oracle = cocycles::ulam_top_exponent(&c, 512).unwrap();
    let pairs = [(&product, &chain), (&product, &oracle), (&chain, &oracle)];
    let agree = pairs.iter().all(|(a, b)| (a.value - b.value).abs() <= 3.0 * a.combined_stderr(b));
    let cert = lyapunov::mostly_contracting_certificate(&catalog::hyperbolic_rotation_projective(), 0.05, 30, 200, 0.0, 13).unwrap();
    report(
        4,
        agree && cert.pass,
        start,
        format!(
            "product={:.5}±{:.5} furstenberg={:.5}±{:.5} ulam={:.5}±{:.5} certificate worst={:.4}±{:.4} pass={}",
            product.value,
            product.stderr,
            chain.value,
            chain.stderr,
            oracle.value,
            oracle.stderr,
            cert.worst_estimate,
            cert.worst_stderr,
            cert.pass
        ),
    );
}

#[test]
fn criterion_05_two_attractors() {
    let start = Instant::now();
    let sys = catalog::two_attractor();
    let (q, r) = ulam(&sys, 128);
    let exact = (0.5f64.ln() + 0.2f64.ln()) / 2.0;
    let at_zero = lyapunov::annealed_exponent_at(&sys, &SpacePoint::scalar(0.0), 10, 1024, 1).unwrap();
    let basins = koopman::empirical_basins(&sys, &q.grid, &r, 1000, 4, 2).unwrap();
    let ok = r.multiplicity == 2 && (at_zero.estimate - exact).abs() <= 1e-3 && basins.unattributed_fraction <= 2.0 / 128.0;
    report(
        5,
        ok,
        start,
        format!(
            "r={} lambda(0)={:.6} (exact {exact:.6}) unattributed={:.5}",
            r.multiplicity, at_zero.estimate, basins.unattributed_fraction
        ),
    );
}

#[test]
fn criterion_06_kingman() {
    let start = Instant::now();
    let n = 2048;
    let cases = [
        ("identity", FiniteMarkovOperator::identity2(), vec![1.0, -1.0]),
        ("uniform", FiniteMarkovOperator::uniform2(), vec![1.0, -1.0]),
        ("absorbing", FiniteMarkovOperator::absorbing3(), vec![0.0, 2.0, -1.0]),
    ];
    let mut ok = true;
    let mut detail = String::new();
    for (name, p, phi1) in cases {
        let seq = build_additive(&p, &phi1, n).unwrap();
        let r = verify_uniform_kingman(&p, &seq, 64).unwrap();
        let spread = r.values().iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b)) - r.values().iter().fold(f64::INFINITY, |a, b| a.min(*b));
        ok &= r.agree && spread <= 10.0 / n as f64 && r.additive && r.additive_gap == Some(0.0);
        detail += &format!("{name}: values={:?} additive_gap={:?}; ", r.values(), r.additive_gap);
    }
    report(6, ok, start, detail);
}

fn lambda_hat(c: &Cocycle) -> Estimate {
    c.furstenberg_estimate(1000, 50_000_000, 99).unwrap()
}

#[test]
fn criterion_07_clt() {
    let start = Instant::now();
    let c = catalog::hyperbolic_rotation();
    let lam = lambda_hat(&c);
    let x = [1.0, 0.0];
    let s = limits::collect_sn(
        &SampleSource::Cocycle { cocycle: &c, x: &x },
        &[1000],
        10_000,
        lam,
        "furstenberg",
        1,
    )
    .unwrap();
    let pair = limits::clt_test(&s).unwrap().remove(0);

    let circle = catalog::minimal_circle();
    let x0 = SpacePoint::scalar(0.3);
    let lam_c = continuity::birkhoff_exponent(&circle, &x0, 1000, 10_000_000, 5).unwrap();
    let s = limits::collect_sn(
        &SampleSource::Maps { system: &circle, x: x0 },
        &[1000],
        10_000,
        lam_c,
        "birkhoff",
        2,
    )
    .unwrap();
    let circ = limits::clt_test(&s).unwrap().remove(0);

    let diag = Cocycle::constant(DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5])).unwrap();
    let s = limits::collect_sn(
        &SampleSource::Cocycle { cocycle: &diag, x: &x },
        &[1000],
        1000,
        Estimate::exact(LN2),
        "analytic",
        3,
    )
    .unwrap();
    let det = limits::clt_test(&s).unwrap().remove(0);
    let single = RandomMapSystem::new(vec![(FiberMap::circle_wave(0.1, 0.5, 1).unwrap(), 1.0)]).unwrap();
    let s = limits::collect_sn(
        &SampleSource::Maps { system: &single, x: x0 },
        &[1000],
        1000,
        Estimate::exact(0.0),
        "analytic",
        4,
    )
    .unwrap();
    let det_circle = limits::clt_test(&s).unwrap().remove(0);

    let ok = pair.ks < 0.05
        && !pair.degenerate
        && circ.ks < 0.05
        && !circ.degenerate
        && det.degenerate
        && det.sigma2 == 0.0
        && det_circle.degenerate
        && det_circle.sigma2 == 0.0;
    report(
        7,
        ok,
        start,
        format!(
            "pair: ks={:.4} sigma2={:.4}; circle: ks={:.4} sigma2={:.4}; deterministic sigma2={} / {}",
            pair.ks, pair.sigma2, circ.ks, circ.sigma2, det.sigma2, det_circle.sigma2
        ),
    );
}

#[test]
fn criterion_08_berry_esseen() {
    let start = Instant::now();
    let c = catalog::hyperbolic_rotation();
    let lam = lambda_hat(&c);
    let x = [1.0, 0.0];
    let n_list = [100, 400, 1600];
    let s = limits::collect_sn(
        &SampleSource::Cocycle { cocycle: &c, x: &x },
        &n_list,
        100_000,
        lam,
        "furstenberg",
        8,
    )
    .unwrap();
    let pair = limits::berry_esseen_fit(&s).unwrap();
    let s = limits::collect_sn(&SampleSource::Rademacher, &n_list, 100_000, Estimate::exact(0.0), "analytic", 9).unwrap();
    let calib = limits::berry_esseen_fit(&s).unwrap();
    let ok = (-0.8..=-0.3).contains(&pair.slope) && (calib.slope + 0.5).abs() <= 0.15;
    report(
        8,
        ok,
        start,
        format!(
            "pair slope={:.3}±{:.3} gaps={:?}; calibration slope={:.3}±{:.3}",
            pair.slope, pair.slope_stderr, pair.gaps, calib.slope, calib.slope_stderr
        ),
    );
}

#[test]
fn criterion_09_large_deviations() {
    let start = Instant::now();
    let c = catalog::hyperbolic_rotation();
    let lam = c.furstenberg_estimate(1000, 10_000_000, 98).unwrap();
    let x = [1.0, 0.0];
    let fit = limits::large_deviation_fit(
        &SampleSource::Cocycle { cocycle: &c, x: &x },
        &[0.1],
        &[50, 100, 150, 200],
        200_000,
        lam,
        5,
    )
    .unwrap();
    let rate = fit.fits[0].clone();
    let pair_ok = rate
        .as_ref()
        .is_some_and(|r| r.points >= 3 && r.decreasing && r.h - 3.0 * r.h_stderr > 0.0);

    let rot = catalog::rotation_cocycle(1.0);
    let rot_fit = limits::large_deviation_fit(
        &SampleSource::Cocycle { cocycle: &rot, x: &x },
        &[0.1, 0.01],
        &[50, 100, 150],
        10_000,
        Estimate::exact(0.0),
        6,
    )
    .unwrap();
    let rot_ok = rot_fit.cells.iter().all(|c| c.p_hat == 0.0);
    let cells: Vec<(usize, f64, usize)> = fit.cells.iter().map(|c| (c.n, c.p_hat, c.count)).collect();
    report(
        9,
        pair_ok && rot_ok,
        start,
        format!("cells={cells:?} fit={rate:?} rotation all zero={rot_ok}"),
    );
}

#[test]
fn criterion_10_continuity_sweeps() {
    let start = Instant::now();
    let golden = catalog::golden_cocycle();
    let t_list = [0.0, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1];
    let sweep = continuity::lambda1_sweep(
        &golden,
        &[DMatrix::identity(2, 2)],
        &t_list,
        FurstenbergParams {
            burn_in: 1000,
            samples: 20_000,
            seed: 1,
        },
    )
    .unwrap();
    let phi = (3.0 + 5f64.sqrt()) / 2.0;
    let golden_ok = t_list
        .iter()
        .enumerate()
        .all(|(k, t)| (sweep.estimate[k] - (phi + t).ln()).abs() <= 3.0 * sweep.stderr[k] + 1e-9);
    let gamma = sweep.fit.as_ref().map(|f| f.gamma);
    let gamma_ok = gamma.is_some_and(|g| (0.8..=1.2).contains(&g));

    let path = SystemPath::two_attractor_shift();
    let t2 = [0.0, 0.01, 0.02, 0.05, 0.1, 0.2];
    let circ = continuity::circle_exponent_sweep(
        &path,
        &t2,
        &BirkhoffParams {
            start: SpacePoint::scalar(0.0),
            burn_in: 0,
            steps: 10_000,
            seed: 2,
        },
    )
    .unwrap();
    let circ_err = t2
        .iter()
        .enumerate()
        .map(|(k, t)| (circ.estimate[k] - ((0.5 - t).ln() + 0.2f64.ln()) / 2.0).abs())
        .fold(0.0, f64::max);

    let ifs = SystemPath::ifs_slopes();
    let grid = Grid::new(ifs.space, 256).unwrap();
    let t3 = [0.0, -0.05, -0.02, -0.005, 0.005, 0.02, 0.05];
    let w = continuity::stationary_stability_sweep(&ifs, &t3, &grid).unwrap();
    let w_ok = w.estimate[0] == 0.0 && t3.iter().enumerate().all(|(k, t)| w.estimate[k] <= grid.width() + 5.0 * t.abs());

    report(
        10,
        golden_ok && gamma_ok && circ_err <= 1e-3 && w_ok,
        start,
        format!(
            "golden curve ok={golden_ok} gamma={gamma:?}; two-attractor max error={circ_err:.2e}; W1={:?}",
            w.estimate
        ),
    );
}

/// Runs one property with a fixed-seed runner and reports its outcome.
fn property<S: Strategy>(name: &str, cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    let config = Config {
        cases,
        failure_persistence: None,
        rng_algorithm: proptest::test_runner::RngAlgorithm::ChaCha,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(
        config,
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    runner.run(&strategy, test).map_err(|e| format!("{name}: {e}"))
}

fn m2(e: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, e)
}

#[test]
fn criterion_11_structural_invariants() {
    let start = Instant::now();
    let mut results: Vec<Result<(), String>> = Vec::new();

    // metric axioms on all three kinds of space
    results.push(property(
        "metric axioms",
        256,
        (0usize..3, proptest::collection::vec(-1.0f64..1.0, 9)),
        |(kind, c)| {
            let (space, pts) = match kind {
                0 => (Space::Circle, [0, 1, 2].map(|i| SpacePoint::scalar(c[i].abs()))),
                1 => (Space::Interval { a: -1.0, b: 1.0 }, [0, 1, 2].map(|i| SpacePoint::scalar(c[i]))),
                _ => (
                    Space::Projective { dim: 3 },
                    [0, 3, 6].map(|i| SpacePoint::line(&[c[i] + 2.0, c[i + 1], c[i + 2]]).unwrap()),
                ),
            };
            let d = |a: &SpacePoint, b: &SpacePoint| space.distance(a, b).unwrap();
            let [x, y, z] = pts;
            prop_assert_eq!(d(&x, &x), 0.0);
            prop_assert!(d(&x, &y) >= 0.0);
            prop_assert_eq!(d(&x, &y), d(&y, &x));
            prop_assert!(d(&x, &z) <= d(&x, &y) + d(&y, &z) + 1e-12);
            Ok(())
        },
    ));

    // L(g∘f)(x) ≤ Lg(f(x))·Lf(x), the composite measured by central differences
    results.push(property(
        "chain rule",
        256,
        (0.0f64..1.0, -0.9f64..0.9, 0.0f64..1.0, -0.9f64..0.9, 1u32..4, 0.0f64..1.0),
        |(r1, a1, r2, a2, k, x)| {
            let sys = RandomMapSystem::new(vec![
                (FiberMap::circle_wave(r1, a1, k).unwrap(), 0.5),
                (FiberMap::circle_wave(r2, a2, 1).unwrap(), 0.5),
            ])
            .unwrap();
            let word = Word::from_symbols(vec![0, 1]);
            let product = sys.local_lipschitz_along(&word, &SpacePoint::scalar(x)).unwrap().log_value.exp();
            let h = 1e-6;
            let run = |p: f64| sys.iterate(&word, &SpacePoint::scalar(p)).unwrap()[2];
            let fd = Space::Circle.dist(&run(x - h), &run(x + h)) / (2.0 * h);
            prop_assert!(fd <= product * (1.0 + 1e-5) + 1e-9, "{} > {}", fd, product);
            Ok(())
        },
    ));

    results.push(property(
        "row stochasticity",
        32,
        (-0.9f64..0.9, 0.0f64..1.0, 1u32..4, 8usize..200),
        |(a, r, k, cells)| {
            let sys = RandomMapSystem::new(vec![
                (FiberMap::circle_wave(r, a, k).unwrap(), 0.3),
                (FiberMap::circle_wave(catalog::GOLDEN_ROTATION, 0.0, 1).unwrap(), 0.7),
            ])
            .unwrap();
            let q = koopman::discretize(&sys, &Grid::new(Space::Circle, cells).unwrap()).unwrap();
            for i in 0..cells {
                let row = q.matrix.row(i);
                prop_assert!(row.iter().all(|(_, v)| *v >= 0.0));
                prop_assert!((row.iter().map(|(_, v)| v).sum::<f64>() - 1.0).abs() <= 1e-12);
            }
            Ok(())
        },
    ));

    // a_n = log‖A_{ω_{n−1}}⋯A_{ω_0}‖ along one word: a_{n+m} ≤ a_n + a_m∘σⁿ
    results.push(property(
        "Fekete subadditivity",
        128,
        (any::<u64>(), 1usize..40, 1usize..40),
        |(seed, n, m)| {
            let c = Cocycle::new(vec![m2(&[1.0, 2.0, 0.5, 3.0]), m2(&[-2.0, 1.0, 0.0, 0.7])], vec![0.4, 0.6]).unwrap();
            let w = c.sample_word(n + m, seed, 0);
            let prefix = Word::from_symbols(w.symbols[..n].to_vec());
            let suffix = Word::from_symbols(w.symbols[n..].to_vec());
            let a = |word: &Word| c.log_product(word).unwrap().log_scale;
            let (whole, head, tail) = (a(&w), a(&prefix), a(&suffix));
            prop_assert!(whole <= head + tail + 1e-9 * (1.0 + whole.abs()));
            Ok(())
        },
    ));

    results.push(property(
        "spectrum ordering and trace identity",
        16,
        (proptest::collection::vec(-2.0f64..2.0, 18), any::<u64>()),
        |(e, seed)| {
            let a = DMatrix::from_row_slice(3, 3, &e[..9]) + DMatrix::identity(3, 3) * 3.0;
            let b = DMatrix::from_row_slice(3, 3, &e[9..]) - DMatrix::identity(3, 3) * 3.0;
            let c = Cocycle::new(vec![a, b], vec![0.5, 0.5]).unwrap();
            let s = c.lyapunov_spectrum(400, 20, seed).unwrap();
            prop_assert!(s.exponents.windows(2).all(|w| w[0] >= w[1]));
            let sum: f64 = s.exponents.iter().sum();
            prop_assert!(
                (sum - s.mean_log_det).abs() <= 3.0 * s.sum_stderr() + 1e-9,
                "{} vs {}",
                sum,
                s.mean_log_det
            );
            Ok(())
        },
    ));

    results.push(property(
        "projective derivative bound",
        256,
        (
            proptest::collection::vec(-3.0f64..3.0, 9),
            proptest::collection::vec(-1.0f64..1.0, 3),
        ),
        |(e, v)| {
            let m = DMatrix::from_row_slice(3, 3, &e);
            prop_assume!(m.clone().svd(false, false).singular_values.min() > 1e-3);
            prop_assume!(v.iter().map(|x| x * x).sum::<f64>() > 1e-6);
            let x = SpacePoint::line(&v).unwrap();
            let f = FiberMap::projective(m.clone()).unwrap();
            let mx = &m * nalgebra::DVector::from_column_slice(x.coords());
            let bound = exterior2_norm(&m) / mx.norm_squared();
            let d = f.derivative_norm(&x).unwrap();
            prop_assert!(d <= bound + 1e-9, "{} > {}", d, bound);
            let inv = m.clone().try_inverse().unwrap();
            prop_assert!(d <= (spectral_norm(&m) * spectral_norm(&inv)).powi(2) * (1.0 + 1e-9));
            Ok(())
        },
    ));

    // bit-identical results for the same seed on 1 and 4 worker threads
    results.push(property("seed and worker reproducibility", 6, any::<u64>(), |seed| {
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let sys = catalog::minimal_circle();
                let net = lyapunov::exponents_on_net(&sys, 0.1, 20, 50, seed).unwrap();
                let spectrum = catalog::hyperbolic_rotation().lyapunov_spectrum(200, 12, seed).unwrap();
                let basins = {
                    let (q, r) = ulam(&catalog::two_attractor(), 64);
                    koopman::empirical_basins(&catalog::two_attractor(), &q.grid, &r, 200, 3, seed).unwrap()
                };
                (net, spectrum, basins)
            })
        };
        let (a, b) = (run(1), run(4));
        prop_assert!(a == b);
        Ok(())
    }));

    let failures: Vec<&String> = results.iter().filter_map(|r| r.as_ref().err()).collect();
    report(
        11,
        failures.is_empty(),
        start,
        format!("{} properties, failures: {failures:?}", results.len()),
    );
}
