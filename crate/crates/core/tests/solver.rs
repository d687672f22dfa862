#![allow(clippy::needless_range_loop)]
use mtfsim_core::impulse::{ImpulseSchedule, ImpulseSpec, Interval, MultiplierSpec};
use mtfsim_core::kernels::TimeGrid;
use mtfsim_core::resolvent::{build_resolvent_table, FractionalOrders, ResolventTable};
use mtfsim_core::solver::{
    interval_tags, picard_solve, sample_noise, simulate_ensemble, Forcing, NoisePath, SolverOptions,
};
use mtfsim_core::spectral::{InitialData, NoiseModel, Nonlinearity, NonlinearitySpec, SpectralModel, DEFAULT_PANELS};
use mtfsim_core::Error;

fn nl(name: &str, params: &[(&str, f64)]) -> Nonlinearity {
    let mut s = NonlinearitySpec::new(name);
    for (k, v) in params {
        s = s.with(k, *v);
    }
    Nonlinearity::resolve(&s).unwrap()
}

fn impulse_schedule() -> ImpulseSchedule {
    ImpulseSchedule::new(
        1.0,
        &[ImpulseSpec {
            t: 0.2,
            e: 0.9,
            varsigma: MultiplierSpec::new("sin", &[("scale", 0.25)]),
            varphi: MultiplierSpec::new("sin", &[("scale", 1.0 / 3.0)]),
        }],
        2.0,
    )
    .unwrap()
}

#[allow(clippy::too_many_arguments)]
fn model(
    n: usize,
    orders: FractionalOrders,
    g1: Nonlinearity,
    g2: Nonlinearity,
    z0: Vec<f64>,
    z1: Vec<f64>,
    noise: NoiseModel,
    schedule: ImpulseSchedule,
) -> SpectralModel {
    SpectralModel::new(n, orders, g1, g2, z0, z1, noise, schedule, 2.0).unwrap()
}

fn table(m: &SpectralModel, dt: f64) -> ResolventTable {
    let g = TimeGrid::covering(m.ell(), dt).unwrap();
    build_resolvent_table(&m.orders, &m.eigenvalues, g).unwrap()
}

#[test]
fn wave_limit_matches_closed_form_with_impulse() {
    let n = 5;
    let z0 = InitialData::Parabola { scale: 1.0 }
        .coefficients(n, DEFAULT_PANELS)
        .unwrap();
    let z1 = InitialData::SineMode { n: 2, amplitude: 0.5 }
        .coefficients(n, DEFAULT_PANELS)
        .unwrap();
    let m = model(
        n,
        FractionalOrders::single(1.0).unwrap(),
        Nonlinearity::Zero,
        Nonlinearity::Zero,
        z0.clone(),
        z1.clone(),
        NoiseModel::none(),
        impulse_schedule(),
    );
    let tab = table(&m, 1.0 / 400.0);
    let tr = picard_solve(&m, None, &tab, None, &SolverOptions::default()).unwrap();
    let flow = |a: &[f64], v: &[f64], s: f64, i: usize| {
        let w = (i + 1) as f64;
        (w * s).cos() * a[i] + (w * s).sin() / w * v[i]
    };
    let z02: Vec<f64> = (0..n).map(|i| flow(&z0, &z1, 0.2, i)).collect();
    let a: Vec<f64> = z02.iter().map(|v| 0.25 * 0.9f64.sin() * v).collect();
    let v: Vec<f64> = z02.iter().map(|v| 0.9f64.sin() / 3.0 * v).collect();
    for k in 0..tab.grid.n_steps {
        let t = tab.grid.t(k);
        for i in 0..n {
            let exact = match tr.tags[k] {
                Interval::Flow(0) => flow(&z0, &z1, t, i),
                Interval::Impulse(1) => 0.25 * t.sin() * z02[i],
                Interval::Flow(1) => flow(&a, &v, t - 0.9, i),
                other => panic!("unexpected tag {other:?}"),
            };
            assert!(
                (tr.at(k)[i] - exact).abs() < 1e-7,
                "t={t} mode {i}: {} vs {exact}",
                tr.at(k)[i]
            );
        }
    }
    assert!(tr
        .picard
        .iter()
        .all(|r| r.iterations() == 1 && r.final_residual() == 0.0));
}

#[test]
fn interval_tags_follow_schedule() {
    let m = model(
        1,
        FractionalOrders::single(0.5).unwrap(),
        Nonlinearity::Zero,
        Nonlinearity::Zero,
        vec![1.0],
        vec![0.0],
        NoiseModel::none(),
        impulse_schedule(),
    );
    let g = TimeGrid::covering(1.0, 0.1).unwrap();
    let tags: Vec<String> = interval_tags(&m, &g).unwrap().iter().map(|t| t.tag()).collect();
    let mut expected = vec!["flow0"; 3];
    expected.extend(["impulse1"; 7]);
    expected.push("flow1");
    assert_eq!(tags, expected);
    // a schedule time off the grid is rejected
    let bad = TimeGrid::covering(1.0, 0.3).unwrap_or(TimeGrid::new(0.0, 1.0 / 3.0, 4).unwrap());
    assert!(interval_tags(&m, &bad).is_err());
}

#[test]
fn zero_data_gives_zero_path() {
    let m = model(
        4,
        FractionalOrders::new(0.5, vec![0.6], vec![0.5]).unwrap(),
        nl("saturating", &[]),
        nl("exp_scale", &[]),
        vec![0.0; 4],
        vec![0.0; 4],
        NoiseModel::scalar(1.0).unwrap(),
        impulse_schedule(),
    );
    let tab = table(&m, 0.01);
    let path = sample_noise(&m.noise, &tab.grid, 1, 0);
    let tr = picard_solve(&m, None, &tab, Some(&path), &SolverOptions::default()).unwrap();
    assert!(tr.z.iter().all(|v| *v == 0.0));
    assert!(tr.picard.iter().all(|r| r.iterations() == 1));
}

#[test]
fn ito_isometry_for_additive_noise() {
    // λ = 0, α = 1: J(t) = t, so z(1) = Σ (1 − t_i) σ ΔW_i and E z(1)² → σ²/3
    let sigma = 0.7;
    let m = model(
        1,
        FractionalOrders::single(1.0).unwrap(),
        Nonlinearity::Zero,
        nl("constant", &[("sigma", sigma)]),
        vec![0.0],
        vec![0.0],
        NoiseModel::scalar(1.0).unwrap(),
        ImpulseSchedule::empty(1.0).unwrap(),
    )
    .with_eigenvalues(vec![0.0])
    .unwrap();
    let dt = 0.002;
    let tab = table(&m, dt);
    for k in 0..tab.grid.n_steps {
        assert!((tab.j[0][k] - tab.grid.t(k)).abs() < 1e-9);
    }
    let ens = simulate_ensemble(&m, None, &tab, 10_000, 11, &SolverOptions::default()).unwrap();
    let last = tab.grid.n_steps - 1;
    let discrete: f64 = (0..last)
        .map(|i| sigma * sigma * (1.0 - i as f64 * dt).powi(2) * dt)
        .sum();
    let exact = sigma * sigma / 3.0;
    assert!((discrete - exact).abs() < 0.004 * exact);
    let err = (ens.m_p[last] - exact).abs();
    assert!(
        err < 3.0 * ens.stderr[last],
        "{} vs {exact} ± {}",
        ens.m_p[last],
        ens.stderr[last]
    );

    // negating the increments leaves the second moment unchanged
    let neg: Vec<f64> = (0..2000)
        .map(|i| {
            let p = sample_noise(&m.noise, &tab.grid, 11, i);
            let flipped = NoisePath {
                increments: vec![p.increments[0].iter().map(|x| -x).collect()],
                ..p.clone()
            };
            let a = picard_solve(&m, None, &tab, Some(&p), &SolverOptions::default()).unwrap();
            let b = picard_solve(&m, None, &tab, Some(&flipped), &SolverOptions::default()).unwrap();
            a.norm_sq(last) - b.norm_sq(last)
        })
        .collect();
    assert!(neg.iter().all(|d| d.abs() < 1e-14));
}

#[test]
fn stderr_scales_as_inverse_sqrt_paths() {
    let m = model(
        1,
        FractionalOrders::single(1.0).unwrap(),
        Nonlinearity::Zero,
        nl("constant", &[("sigma", 1.0)]),
        vec![0.0],
        vec![0.0],
        NoiseModel::scalar(1.0).unwrap(),
        ImpulseSchedule::empty(1.0).unwrap(),
    )
    .with_eigenvalues(vec![0.0])
    .unwrap();
    let tab = table(&m, 0.02);
    let last = tab.grid.n_steps - 1;
    let se: Vec<f64> = [100, 1000, 10_000]
        .iter()
        .map(|&n| {
            simulate_ensemble(&m, None, &tab, n, 3, &SolverOptions::default())
                .unwrap()
                .stderr[last]
        })
        .collect();
    for w in se.windows(2) {
        let ratio = w[0] / w[1];
        assert!((ratio / 10f64.sqrt() - 1.0).abs() < 0.2, "{se:?}");
    }
}

#[test]
fn wave_eigenmodes() {
    for n in 1..=3 {
        let mut e = vec![0.0; 3];
        e[n - 1] = 1.0;
        for (z0, z1) in [(e.clone(), vec![0.0; 3]), (vec![0.0; 3], e.clone())] {
            let m = model(
                3,
                FractionalOrders::single(1.0).unwrap(),
                Nonlinearity::Zero,
                Nonlinearity::Zero,
                z0.clone(),
                z1,
                NoiseModel::none(),
                ImpulseSchedule::empty(1.0).unwrap(),
            );
            let tab = table(&m, 0.01);
            let tr = picard_solve(&m, None, &tab, None, &SolverOptions::default()).unwrap();
            let w = n as f64;
            for k in 0..tab.grid.n_steps {
                let t = tab.grid.t(k);
                let exact = if z0[n - 1] == 1.0 {
                    (w * t).cos()
                } else {
                    (w * t).sin() / w
                };
                assert!((tr.at(k)[n - 1] - exact).abs() < 1e-4);
            }
        }
    }
}

#[test]
fn sign_symmetry() {
    let orders = FractionalOrders::new(0.5, vec![0.6], vec![0.5]).unwrap();
    let z0 = InitialData::Parabola { scale: 1.0 }
        .coefficients(4, DEFAULT_PANELS)
        .unwrap();
    let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
    let opts = SolverOptions::default();
    // odd g1 and g2: negating the data negates the path, same noise
    let mk = |z0: Vec<f64>, g2: Nonlinearity| {
        model(
            4,
            orders.clone(),
            nl("saturating", &[("k", 0.0), ("d", 0.5)]),
            g2,
            z0,
            vec![0.0; 4],
            NoiseModel::scalar(0.1).unwrap(),
            impulse_schedule(),
        )
    };
    let m = mk(z0.clone(), nl("exp_scale", &[("c", 1.0)]));
    let mn = mk(neg(&z0), nl("exp_scale", &[("c", 1.0)]));
    let tab = table(&m, 0.01);
    let path = sample_noise(&m.noise, &tab.grid, 5, 2);
    let a = picard_solve(&m, None, &tab, Some(&path), &opts).unwrap();
    let b = picard_solve(&mn, None, &tab, Some(&path), &opts).unwrap();
    for (x, y) in a.z.iter().zip(&b.z) {
        assert!((x + y).abs() < 1e-12);
    }
    // additive noise: negate the increments as well
    let m = mk(z0.clone(), nl("constant", &[("sigma", 0.3)]));
    let mn = mk(neg(&z0), nl("constant", &[("sigma", 0.3)]));
    let flipped = NoisePath {
        increments: path.increments.iter().map(|r| neg(r)).collect(),
        ..path.clone()
    };
    let a = picard_solve(&m, None, &tab, Some(&path), &opts).unwrap();
    let b = picard_solve(&mn, None, &tab, Some(&flipped), &opts).unwrap();
    for (x, y) in a.z.iter().zip(&b.z) {
        assert!((x + y).abs() < 1e-12);
    }
}

#[test]
fn deterministic_refinement_converges_at_first_order() {
    let n = 3;
    let m = model(
        n,
        FractionalOrders::new(0.5, vec![0.6], vec![0.5]).unwrap(),
        nl("saturating", &[("k", 0.0), ("d", 0.5)]),
        Nonlinearity::Zero,
        InitialData::SineMode { n: 1, amplitude: 1.0 }
            .coefficients(n, DEFAULT_PANELS)
            .unwrap(),
        vec![0.0; n],
        NoiseModel::none(),
        ImpulseSchedule::empty(1.0).unwrap(),
    );
    let opts = SolverOptions::default();
    let at_end = |dt: f64| {
        let tab = table(&m, dt);
        let tr = picard_solve(&m, None, &tab, None, &opts).unwrap();
        assert!(tr.converged());
        tr.at(tab.grid.n_steps - 1).to_vec()
    };
    let reference = at_end(1.0 / 1600.0);
    let errs: Vec<f64> = [1.0 / 50.0, 1.0 / 100.0, 1.0 / 200.0]
        .iter()
        .map(|&dt| {
            let z = at_end(dt);
            z.iter()
                .zip(&reference)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    for w in errs.windows(2) {
        let rate = (w[0] / w[1]).log2();
        assert!(rate > 0.8, "errors {errs:?}");
    }
}

#[test]
fn linear_refinement_order_at_least_point_nine() {
    let n = 3;
    let m = model(
        n,
        FractionalOrders::new(0.5, vec![0.6], vec![0.5]).unwrap(),
        nl("linear_decay", &[("c", 2.0), ("k", 0.5)]),
        Nonlinearity::Zero,
        InitialData::Parabola { scale: 1.0 }
            .coefficients(n, DEFAULT_PANELS)
            .unwrap(),
        vec![0.0; n],
        NoiseModel::none(),
        impulse_schedule(),
    );
    let opts = SolverOptions::default();
    let at_end = |dt: f64| {
        let tab = table(&m, dt);
        picard_solve(&m, None, &tab, None, &opts)
            .unwrap()
            .at(tab.grid.n_steps - 1)
            .to_vec()
    };
    let reference = at_end(1.0 / 1600.0);
    let errs: Vec<f64> = [1.0 / 50.0, 1.0 / 100.0, 1.0 / 200.0]
        .iter()
        .map(|&dt| {
            at_end(dt)
                .iter()
                .zip(&reference)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    for w in errs.windows(2) {
        assert!((w[0] / w[1]).log2() >= 0.9, "errors {errs:?}");
    }
}

#[test]
fn forcing_enters_through_cell_weights() {
    // α = 1, one mode, constant forcing f: z(t) = f (1 − cos t) exactly
    let m = model(
        1,
        FractionalOrders::single(1.0).unwrap(),
        Nonlinearity::Zero,
        Nonlinearity::Zero,
        vec![0.0],
        vec![0.0],
        NoiseModel::none(),
        ImpulseSchedule::empty(1.0).unwrap(),
    );
    let tab = table(&m, 0.01);
    let f = Forcing {
        values: vec![vec![2.0; tab.grid.n_steps - 1]],
    };
    let tr = picard_solve(&m, Some(&f), &tab, None, &SolverOptions::default()).unwrap();
    for k in 0..tab.grid.n_steps {
        let t = tab.grid.t(k);
        assert!((tr.at(k)[0] - 2.0 * (1.0 - t.cos())).abs() < 1e-8);
    }
}

#[test]
fn ensembles_are_reproducible_and_collapse_without_noise() {
    let mk = |noise: NoiseModel| {
        model(
            3,
            FractionalOrders::new(0.5, vec![0.6], vec![0.5]).unwrap(),
            nl("linear_decay", &[]),
            nl("exp_scale", &[("c", 1.0)]),
            vec![1.0, 0.5, 0.0],
            vec![0.0; 3],
            noise,
            impulse_schedule(),
        )
    };
    let m = mk(NoiseModel::scalar(0.5).unwrap());
    let tab = table(&m, 0.02);
    let opts = SolverOptions::default();
    let a = simulate_ensemble(&m, None, &tab, 64, 9, &opts).unwrap();
    let b = simulate_ensemble(&m, None, &tab, 64, 9, &opts).unwrap();
    assert_eq!(a.m_p, b.m_p);
    assert_eq!(a.state_costs, b.state_costs);
    let c = simulate_ensemble(&m, None, &tab, 64, 10, &opts).unwrap();
    assert_ne!(a.m_p, c.m_p);
    assert!(a.max_picard_ratio.unwrap() < 1.0);

    let d = simulate_ensemble(&mk(NoiseModel::none()), None, &tab, 10, 9, &opts).unwrap();
    assert!(d.stderr.iter().all(|s| *s == 0.0));
    assert_eq!(d.state_costs.len(), 10);
}

#[test]
fn ensemble_fails_when_paths_fail() {
    let m = model(
        2,
        FractionalOrders::single(0.5).unwrap(),
        nl("saturating", &[("k", 0.0)]),
        Nonlinearity::Zero,
        vec![1.0, 0.0],
        vec![0.0; 2],
        NoiseModel::none(),
        ImpulseSchedule::empty(1.0).unwrap(),
    );
    let tab = table(&m, 0.05);
    let opts = SolverOptions {
        tol: 1e-8,
        max_iters: 1,
    };
    let r = simulate_ensemble(&m, None, &tab, 10, 0, &opts);
    assert!(matches!(r, Err(Error::EnsembleFailure { failed: 10, total: 10 })));
}

#[test]
fn csv_output_has_header_and_rows() {
    let m = model(
        2,
        FractionalOrders::single(0.5).unwrap(),
        Nonlinearity::Zero,
        Nonlinearity::Zero,
        vec![1.0, 0.0],
        vec![0.0; 2],
        NoiseModel::none(),
        impulse_schedule(),
    );
    let tab = table(&m, 0.1);
    let tr = picard_solve(&m, None, &tab, None, &SolverOptions::default()).unwrap();
    let mut buf = Vec::new();
    tr.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,interval_tag,z_1,z_2");
    assert_eq!(lines.len(), 12);
    assert!(lines[5].contains(",impulse1,"));
}
