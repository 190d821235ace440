use spc_aux_core::estimators::{first_order_mse_t3, weights_for, EstimatorWeights};
use spc_aux_core::{
    arl, arl_curve, limits_probability, limits_three_sigma, subgroup_stats, ChartConfig, ControlLimits,
    Estimator, EstimatorKind, LimitStyle, ProcessParameters, RngStream, ShiftGrid, ShiftSpec, Subgroup,
    SummarySampler, WeightSource,
};
use statrs::distribution::{ContinuousCDF, Normal};

fn params(rho: f64) -> ProcessParameters {
    ProcessParameters::new(5.0, 5.0, 1.0, 1.0, rho).unwrap()
}

fn three_sigma(kind: EstimatorKind, n: usize, l: f64) -> ChartConfig {
    ChartConfig::new(kind, n, LimitStyle::ThreeSigmaScaled, l, 370.4).unwrap()
}

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[test]
fn five_point_fixture_matches_recomputation() {
    let g = Subgroup::new(vec![(4.2, 4.0), (5.1, 5.3), (5.9, 5.6), (4.8, 4.4), (5.5, 5.2)]).unwrap();
    let s = subgroup_stats(&g);
    // values from an independent numpy recomputation (ddof = 1)
    assert!((s.y_bar - 5.1).abs() < 1e-12);
    assert!((s.x_bar - 4.9).abs() < 1e-12);
    assert!((s.s_y - 0.651920240520265).abs() < 1e-12);
    assert!((s.s_x - 0.6708203932499367).abs() < 1e-12);
    assert!((s.r_xy.unwrap() - 0.9375255987790482).abs() < 1e-12);
}

#[test]
fn in_control_bias() {
    let p = ProcessParameters::new(5.0, 5.0, 1.0, 1.0, 0.9).unwrap();
    let n = 5;
    let sampler = SummarySampler::new(p, n).unwrap();
    let mut rng = RngStream::new(11);
    let stats: Vec<_> = (0..1_000_000).map(|_| sampler.stats(ShiftSpec::IN_CONTROL, &mut rng)).collect();
    for kind in EstimatorKind::ALL {
        let est = Estimator::new(kind, p, n, WeightSource::default()).unwrap();
        let vals: Vec<f64> = stats.iter().map(|s| est.evaluate(s).unwrap()).collect();
        let (m, se) = mean_and_se(&vals);
        let bias = m - p.mu_y();
        println!("{kind}: bias {bias:.5} (se {se:.5})");
        match kind {
            EstimatorKind::T0 | EstimatorKind::T1 => assert!(bias.abs() <= 5.0 * se, "{kind}: {bias} vs {se}"),
            // second-order bias of the exponential forms, ~ Y C^2 / n
            _ => assert!(bias.abs() <= 5.0 * p.cv_y().powi(2) + 5.0 * se, "{kind}: {bias}"),
        }
    }
}

fn empirical_mse(p: &ProcessParameters, w: &EstimatorWeights, means: &[(f64, f64)]) -> f64 {
    let est = Estimator::with_weights(EstimatorKind::T3, *p, *w);
    means
        .iter()
        .map(|&(y, x)| {
            let s = spc_aux_core::SubgroupStats { y_bar: y, x_bar: x, s_y: 0.0, s_x: 0.0, r_xy: None };
            (est.evaluate(&s).unwrap() - p.mu_y()).powi(2)
        })
        .sum::<f64>()
        / means.len() as f64
}

#[test]
fn quadratic_minimizer_is_locally_optimal() {
    for (rho, n) in [(0.9, 5), (0.6, 10), (0.3, 15)] {
        let p = params(rho);
        let w = weights_for(&p, n, WeightSource::QuadraticMinimizer).unwrap();
        let sampler = SummarySampler::new(p, n).unwrap();
        let mut rng = RngStream::new(21);
        let means: Vec<_> = (0..100_000).map(|_| sampler.means(ShiftSpec::IN_CONTROL, &mut rng)).collect();
        let base = empirical_mse(&p, &w, &means);
        let analytic = first_order_mse_t3(&p, n, &w).unwrap();
        assert!((base / analytic - 1.0).abs() < 0.05, "rho {rho}: {base} vs {analytic}");
        for (d1, d2) in [(0.05, 0.0), (-0.05, 0.0), (0.0, 0.01), (0.0, -0.01), (0.05, 0.01), (-0.05, -0.01)] {
            let moved = EstimatorWeights { w1: w.w1 + d1, w2: w.w2 + d2, ..w };
            let m = empirical_mse(&p, &moved, &means);
            assert!(base <= m, "rho {rho} n {n}: perturbation ({d1}, {d2}) lowers MSE {base} -> {m}");
        }
    }
}

#[test]
fn t0_matches_normal_theory_arl() {
    let normal = Normal::standard();
    let p = params(0.5);
    for (l, seed) in [(2.0, 1), (2.5, 2)] {
        let cfg = three_sigma(EstimatorKind::T0, 5, l);
        let limits = limits_three_sigma(&cfg, &p).unwrap();
        let e = arl(&cfg, &limits, &p, ShiftSpec::IN_CONTROL, 100_000, seed).unwrap();
        let exact = 1.0 / (2.0 * normal.cdf(-l));
        assert!((e.arl - exact).abs() <= 3.0 * e.se, "L={l}: {} vs {exact} (se {})", e.arl, e.se);
    }
}

fn geometric_ratio_se(arl: f64, reps: u64) -> f64 {
    // delta method for sd/mean of a geometric law with p = 1/arl
    let p = 1.0 / arl;
    let q = 1.0 - p;
    let m = arl;
    let var = q / (p * p);
    let mu3 = (2.0 - p) * q / p.powi(3);
    let mu4 = var * var * (9.0 + p * p / q);
    ((var * var / m.powi(4) + (mu4 - var * var) / (4.0 * m * m * var) - mu3 / m.powi(3)) / reps as f64).sqrt()
}

#[test]
fn in_control_run_lengths_are_geometric() {
    let p = params(0.6);
    for kind in EstimatorKind::ALL {
        let cfg = three_sigma(kind, 10, 2.5);
        let limits = limits_three_sigma(&cfg, &p).unwrap();
        let e = arl(&cfg, &limits, &p, ShiftSpec::IN_CONTROL, 100_000, 31).unwrap();
        let ratio = e.sdrl / e.arl;
        let expected = (1.0 - 1.0 / e.arl).sqrt();
        assert!((ratio - expected).abs() <= 3.0 * geometric_ratio_se(e.arl, e.reps), "{kind}: {ratio} vs {expected}");
    }
}

#[test]
fn t0_probability_limits_match_normal_quantiles() {
    let p = params(0.5);
    let n = 5;
    let cfg = ChartConfig::new(EstimatorKind::T0, n, LimitStyle::ProbabilityQuantile, 0.005, 200.0).unwrap();
    let l = limits_probability(&cfg, &p, 1_000_000, &RngStream::new(41)).unwrap();
    let half = 2.807 / (n as f64).sqrt();
    assert!((l.lcl() / (5.0 - half) - 1.0).abs() < 0.02, "{}", l.lcl());
    assert!((l.ucl() / (5.0 + half) - 1.0).abs() < 0.02, "{}", l.ucl());
    // the median sits on the mean, se of a median ~ 1.2533 sigma / sqrt(m n)
    let se_median = 1.2533 / (n as f64 * 1e6).sqrt();
    assert!((l.cl() - 5.0).abs() < 4.0 * se_median, "{}", l.cl());
}

#[test]
fn stronger_correlation_detects_shifts_faster() {
    let mut arls = Vec::new();
    for rho in [0.3, 0.9] {
        let p = params(rho);
        let cfg = three_sigma(EstimatorKind::T1, 5, 3.0);
        let limits = limits_three_sigma(&cfg, &p).unwrap();
        arls.push(arl(&cfg, &limits, &p, ShiftSpec::new(1.0).unwrap(), 20_000, 51).unwrap());
    }
    let (weak, strong) = (arls[0], arls[1]);
    assert!(strong.arl + 3.0 * strong.se < weak.arl - 3.0 * weak.se, "{} vs {}", strong.arl, weak.arl);
}

#[test]
fn arl_curve_is_nonincreasing() {
    let p = params(0.9);
    let grid = ShiftGrid::default();
    for kind in EstimatorKind::ALL {
        let cfg = three_sigma(kind, 5, 2.5);
        let limits = limits_three_sigma(&cfg, &p).unwrap();
        let profile = arl_curve(&cfg, &limits, &p, &grid, 10_000, 61).unwrap();
        for w in profile.entries.windows(2) {
            let slack = 3.0 * (w[0].se.powi(2) + w[1].se.powi(2)).sqrt();
            assert!(w[1].arl <= w[0].arl + slack, "{kind}: {:?}", w);
        }
    }
}

#[test]
fn explicit_limits_round_trip_through_json() {
    let l = ControlLimits::new(3.5, 5.0, 6.5).unwrap();
    let back: ControlLimits = serde_json::from_str(&serde_json::to_string(&l).unwrap()).unwrap();
    assert_eq!(l, back);
}
