use rspde::dynamics::{CoefficientSpec, Diffusion, Drift};
use rspde::lattice::{Grid, Walls};
use rspde::measure::*;
use rspde::Error;

fn benchmark(n: usize, alpha: f64) -> (Grid, Walls, CoefficientSpec) {
    let g = Grid::new(n).unwrap();
    let w = Walls::constant(&g, -10.0, 10.0).unwrap();
    (g, w, CoefficientSpec::linear_gaussian(alpha).unwrap())
}

fn plan(alpha: f64, dt: f64, samples: usize) -> SamplingPlan {
    SamplingPlan::relaxation_default(alpha, dt, samples)
}

#[test]
fn zero_noise_samples_sit_at_the_attractor() {
    let (g, w, c) = benchmark(16, 4.0);
    let m = sample_invariant(&g, &w, &c, 0.0, &plan(4.0, 1e-2, 20), &[1, 2]).unwrap();
    assert_eq!(m.count(), 40);
    assert!(m.samples.iter().all(|s| s.iter().all(|&v| v == 0.0)));
}

#[test]
fn hypothesis_and_burn_in_are_enforced() {
    let g = Grid::new(8).unwrap();
    let w = Walls::constant(&g, -1.0, 1.0).unwrap();
    let bad = CoefficientSpec::new(Drift::Linear { c: 2.0 }, Diffusion::Constant { value: 1.0 }, 1.0).unwrap();
    let p = plan(1.0, 1e-2, 4);
    assert!(matches!(
        sample_invariant(&g, &w, &bad, 0.1, &p, &[0]),
        Err(Error::HypothesisRequired(_))
    ));
    let c = CoefficientSpec::linear_gaussian(2.0).unwrap();
    let short = SamplingPlan { burn_in: 2.0, ..plan(2.0, 1e-2, 4) };
    assert!(matches!(
        sample_invariant(&g, &w, &c, 0.1, &short, &[0]),
        Err(Error::BurnInTooShort { .. })
    ));
}

#[test]
fn samples_are_reproducible_and_respect_walls() {
    let g = Grid::new(16).unwrap();
    let w = Walls::constant(&g, -0.2, 0.3).unwrap();
    let c = CoefficientSpec::new(
        Drift::Sinusoidal { c: 0.5 },
        Diffusion::Cosine { base: 1.0, amplitude: 0.5 },
        2.0,
    )
    .unwrap();
    let p = plan(1.5, 5e-3, 30);
    let a = sample_invariant(&g, &w, &c, 0.5, &p, &[7, 8, 9]).unwrap();
    let b = sample_invariant(&g, &w, &c, 0.5, &p, &[7, 8, 9]).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.count(), 90);
    for s in &a.samples {
        assert!(w.contains(s, 1e-9));
    }
    let touched = a.samples.iter().any(|s| s.iter().any(|&v| v >= 0.3 - 1e-12 || v <= -0.2 + 1e-12));
    assert!(touched, "walls should bind at this noise level");
}

#[test]
fn ball_probability_trivial_cases_and_monotonicity() {
    let (g, w, c) = benchmark(16, 4.0);
    let m = sample_invariant(&g, &w, &c, 0.5, &plan(4.0, 1e-2, 200), &[3]).unwrap();
    let zero = vec![0.0; g.len()];
    let all = ball_probability(&m, &zero, 25.0).unwrap();
    assert_eq!((all.hits, all.p_hat), (200, 1.0));
    let far = vec![30.0; g.len()];
    assert_eq!(ball_probability(&m, &far, 1.0).unwrap().p_hat, 0.0);
    let mut last = 0.0;
    for d in [0.05, 0.1, 0.2, 0.3, 0.5, 1.0] {
        let e = ball_probability(&m, &zero, d).unwrap();
        assert!(e.p_hat >= last);
        assert!(e.wilson_lo <= e.p_hat && e.p_hat <= e.wilson_hi);
        last = e.p_hat;
    }
    let empty = EmpiricalMeasure { samples: vec![], ..m };
    assert!(matches!(ball_probability(&empty, &zero, 0.1), Err(Error::EmptyMeasure)));
}

/// Sample variance of `∫u` against the OU value `ε²/(2α)` for the constant
/// mode.
#[test]
fn spatial_mean_variance_matches_ou() {
    let alpha = 6.0;
    let (g, w, c) = benchmark(32, alpha);
    let eps = 0.3;
    let m = sample_invariant(&g, &w, &c, eps, &plan(alpha, 1e-3, 250), &[11, 12, 13, 14]).unwrap();
    let v = variance(&m.spatial_means(&g));
    let target = eps * eps / (2.0 * alpha);
    assert!((v / target - 1.0).abs() <= 0.15, "variance {v:e} against {target:e}");
}

#[test]
fn disjoint_seed_sets_agree_in_distribution() {
    let (g, w, c) = benchmark(16, 6.0);
    let p = plan(6.0, 2e-3, 100);
    let a = sample_invariant(&g, &w, &c, 0.3, &p, &[1, 2, 3, 4, 5]).unwrap();
    let b = sample_invariant(&g, &w, &c, 0.3, &p, &[101, 102, 103, 104, 105]).unwrap();
    let d = ks_distance(&sup_norms(&a), &sup_norms(&b));
    assert!(d <= 0.15, "KS distance {d}");
}

#[test]
fn attractor_ball_mass_grows_as_noise_drops() {
    let (g, w, c) = benchmark(16, 6.0);
    let zero = vec![0.0; g.len()];
    let mut last = -1.0;
    let mut last_log = f64::NEG_INFINITY;
    for eps in [0.4, 0.2, 0.1] {
        let m = sample_invariant(&g, &w, &c, eps, &plan(6.0, 2e-3, 300), &[5]).unwrap();
        let e = ball_probability(&m, &zero, 0.15).unwrap();
        assert!(e.p_hat > last, "p̂ {} at ε = {eps}", e.p_hat);
        let l = eps * eps * e.p_hat.ln();
        assert!(l > last_log && l <= 0.0);
        last = e.p_hat;
        last_log = l;
    }
}

#[test]
fn unresolved_targets_are_flagged_and_excluded() {
    let (g, w, c) = benchmark(16, 6.0);
    let targets = vec![
        LdpTarget {
            id: "origin".into(),
            z: vec![0.0; g.len()],
            delta: 0.3,
            j_center: 0.0,
            j_inner: 0.0,
            j_outer: 0.54,
        },
        LdpTarget {
            id: "far".into(),
            z: vec![3.0; g.len()],
            delta: 0.1,
            j_center: 54.0,
            j_inner: 50.46,
            j_outer: 57.66,
        },
    ];
    let eps = [0.4, 0.3, 0.2];
    let plans = vec![plan(6.0, 5e-3, 100); 3];
    let d = ldp_scaling_curve(&g, &w, &c, &targets, &eps, &plans, &[1, 2]).unwrap();
    assert_eq!(d.rows.len(), 6);
    for r in d.rows.iter().filter(|r| r.target_id == "far") {
        assert!(!r.resolved && r.eps2_log_p.is_none() && r.within_bracket.is_none());
    }
    let far = d.trends.iter().find(|t| t.target_id == "far").unwrap();
    assert!(far.spearman.is_none() && !far.monotone);
    let origin: Vec<f64> = d
        .rows
        .iter()
        .filter(|r| r.target_id == "origin")
        .map(|r| r.eps2_log_p.unwrap())
        .collect();
    assert!(origin.windows(2).all(|w| w[1] > w[0]) && origin[2] <= 0.0);
    assert!(ldp_scaling_curve(&g, &w, &c, &targets, &[0.2, 0.3], &plans[..2], &[1]).is_err());
}

#[test]
fn tightness_mass_decays_in_radius_and_noise() {
    let (g, w, c) = benchmark(16, 6.0);
    let radii = [0.5, 1.0, 2.0, 1e6];
    let mut outside = Vec::new();
    let mut logs = Vec::new();
    let mut medians = Vec::new();
    for (k, eps) in [0.5, 0.35, 0.25].into_iter().enumerate() {
        let m = sample_invariant(&g, &w, &c, eps, &plan(6.0, 2e-3, 300), &[9 + k as u64]).unwrap();
        let rows = tightness_probe(&g, &m, 0.4, &radii).unwrap();
        assert!(rows.windows(2).all(|r| r[1].mass_outside <= r[0].mass_outside));
        assert_eq!(rows[3].mass_outside, 0.0);
        outside.push(rows[1].mass_outside);
        logs.push(rows[0].eps2_log.unwrap());
        medians.push(median(&holder_norms(&g, &m, 0.4)) / eps);
    }
    assert!(outside.windows(2).all(|w| w[1] <= w[0]));
    assert!(logs.windows(2).all(|w| w[1] < w[0]), "ε² log mass {logs:?}");
    let (lo, hi) = medians.iter().fold((f64::MAX, 0.0_f64), |(l, h), &v| (l.min(v), h.max(v)));
    assert!(hi / lo <= 1.2, "normalized medians {medians:?}");
    let m = sample_invariant(&g, &w, &c, 0.3, &plan(6.0, 2e-3, 5), &[1]).unwrap();
    assert!(tightness_probe(&g, &m, 0.5, &radii).is_err());
}
