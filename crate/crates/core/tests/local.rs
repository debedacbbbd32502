use geodid::did::{event_study, EstimationConfig};
use geodid::kernel::KernelSpec;
use geodid::local::{
    local_estimate_all, local_estimate_one, robustness_correlation, LocalConfig, LocalEstimator, LocalStatus,
    SkipReason,
};
use geodid::panel::{assign_cohorts, Location, Observation, Panel, PanelBuilder, ReversalPolicy};
use geodid::synth::{simulate_panel, EffectProfile, SimConfig};

fn homogeneous(n: usize, tau: f64, seed: u64) -> Panel {
    let cfg =
        SimConfig { n_units: n, default_effect: EffectProfile::Constant { value: tau }, seed, ..SimConfig::default() };
    simulate_panel(&cfg).unwrap().0
}

#[test]
fn unit_weights_reproduce_global_study() {
    let panel = homogeneous(200, 0.03, 1);
    let cohorts = assign_cohorts(&panel, ReversalPolicy::Drop);
    let est = EstimationConfig::point_only();
    let global = event_study(&panel, &cohorts, &est).unwrap();
    // exp(-(d/h)^2) rounds to exactly 1 at this bandwidth.
    let flat = LocalConfig { min_mass: 0.0, ..LocalConfig::new(KernelSpec::Gaussian { h: 1e12 }) };
    let field = local_estimate_all(&panel, &cohorts, &flat, &est, Some(2)).unwrap();
    for e in &field.entries {
        assert!(e.status.is_ok());
        assert_eq!(e.post_avg, global.post_avg.as_ref().map(|s| s.att));
        assert_eq!(e.pre_avg, global.pre_avg.as_ref().map(|s| s.att));
    }
    let one = local_estimate_one(&panel, &cohorts, 7, &flat, &est).unwrap();
    let local = one.study.unwrap();
    for g in &global.estimates {
        assert!((local.att(g.event_time).unwrap() - g.att).abs() < 1e-12);
    }
}

#[test]
fn empty_window_is_skipped() {
    // Treated units sit far away from the focal cluster of never-treated units.
    let mut b = PanelBuilder::new(vec![]);
    for i in 0..20 {
        let far = i < 10;
        let loc = Location::new(if far { 1000.0 + i as f64 } else { i as f64 }, 0.0);
        for p in 2010..2014 {
            let treated = far && p >= 2012;
            b.push(&format!("u{i}"), Some(loc), p, Observation::new(Some(0.1 * i as f64), treated)).unwrap();
        }
    }
    let panel = b.build().unwrap();
    let cohorts = assign_cohorts(&panel, ReversalPolicy::Drop);
    let cfg = LocalConfig::new(KernelSpec::LinearRestricted { d_max: 1100.0 });
    let got = local_estimate_one(&panel, &cohorts, 15, &cfg, &EstimationConfig::point_only()).unwrap();
    assert!(matches!(got.status, LocalStatus::Skipped { reason: SkipReason::InsufficientLocalMass, .. }));
    assert_eq!(got.effective_n_treated, 0.0);
    assert!(got.study.is_none());
}

fn toy() -> Panel {
    let mut b = PanelBuilder::new(vec![]);
    let coords = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (0.5, 0.5)];
    let cohort = [Some(2011), Some(2012), None, None, Some(2011)];
    for (i, (&(x, y), c)) in coords.iter().zip(cohort).enumerate() {
        for (k, p) in (2010..2013).enumerate() {
            let y_it = (i * 3 + k * 5) as f64 / 7.0 + if c.is_some_and(|c| p >= c) { 0.2 } else { 0.0 };
            let obs = Observation::new(Some(y_it), c.is_some_and(|c| p >= c));
            b.push(&format!("t{i}"), Some(Location::new(x, y)), p, obs).unwrap();
        }
    }
    b.build().unwrap()
}

#[test]
fn toy_field_is_order_independent() {
    let panel = toy();
    let cohorts = assign_cohorts(&panel, ReversalPolicy::Drop);
    let cfg = LocalConfig { min_mass: 0.5, ..LocalConfig::new(KernelSpec::Gaussian { h: 2.0 }) };
    let est = EstimationConfig::point_only();
    let field = local_estimate_all(&panel, &cohorts, &cfg, &est, Some(1)).unwrap();
    assert_eq!(field.entries.len(), 5);
    assert_eq!(field.n_ok(), 5);

    let order = [3, 0, 4, 2, 1];
    let shuffled = panel.reorder_units(&order);
    let shuffled_cohorts = assign_cohorts(&shuffled, ReversalPolicy::Drop);
    let other = local_estimate_all(&shuffled, &shuffled_cohorts, &cfg, &est, Some(3)).unwrap();
    for e in &other.entries {
        let base = field.entries.iter().find(|b| b.unit_id == e.unit_id).unwrap();
        assert_eq!(e.status, base.status);
        for (a, b) in e.att_by_e.iter().zip(&base.att_by_e) {
            assert!((a.unwrap() - b.unwrap()).abs() < 1e-12);
        }
    }
}

#[test]
fn any_job_count_gives_identical_field() {
    let panel = homogeneous(150, 0.03, 2);
    let cohorts = assign_cohorts(&panel, ReversalPolicy::Drop);
    let cfg = LocalConfig::new(KernelSpec::Gaussian { h: 30.0 });
    let est = EstimationConfig::point_only();
    let one = local_estimate_all(&panel, &cohorts, &cfg, &est, Some(1)).unwrap();
    for jobs in [2, 5, 8] {
        assert_eq!(local_estimate_all(&panel, &cohorts, &cfg, &est, Some(jobs)).unwrap(), one);
    }
}

#[test]
fn raising_min_mass_never_revives_a_unit() {
    let panel = homogeneous(120, 0.03, 3);
    let cohorts = assign_cohorts(&panel, ReversalPolicy::Drop);
    let est = EstimationConfig::point_only();
    let fields: Vec<_> = [1.0, 5.0, 15.0, 40.0]
        .iter()
        .map(|&m| {
            let cfg = LocalConfig { min_mass: m, ..LocalConfig::new(KernelSpec::Gaussian { h: 15.0 }) };
            local_estimate_all(&panel, &cohorts, &cfg, &est, None).unwrap()
        })
        .collect();
    for pair in fields.windows(2) {
        for (lo, hi) in pair[0].entries.iter().zip(&pair[1].entries) {
            assert!(lo.status.is_ok() || !hi.status.is_ok(), "{} revived", lo.unit_id);
        }
    }
    assert!(fields[0].n_ok() > fields[3].n_ok());
    for f in &fields {
        for e in f.entries.iter().filter(|e| e.status.is_ok()) {
            assert!(e.effective_n_treated >= f.min_mass && e.effective_n_control >= f.min_mass);
            assert!(e.post_avg.unwrap().is_finite());
        }
    }
}

#[test]
fn homogeneous_effect_is_recovered_everywhere() {
    let panel = homogeneous(600, 0.03, 4);
    let cohorts = assign_cohorts(&panel, ReversalPolicy::Drop);
    let cfg = LocalConfig::new(KernelSpec::LinearRestricted { d_max: 141.5 });
    let field = local_estimate_all(&panel, &cohorts, &cfg, &EstimationConfig::point_only(), None).unwrap();
    assert!(field.n_ok() > 500);
    for e in field.entries.iter().filter(|e| e.status.is_ok()) {
        assert!((e.post_avg.unwrap() - 0.03).abs() < 0.02, "{}: {:?}", e.unit_id, e.post_avg);
    }
}

#[test]
fn field_scales_with_outcomes() {
    let panel = homogeneous(300, 0.05, 5);
    let scaled = panel.map_outcomes(|_, _, y| 3.0 * y);
    let cohorts = assign_cohorts(&panel, ReversalPolicy::Drop);
    let cfg = LocalConfig { min_mass: 1.0, ..LocalConfig::new(KernelSpec::Gaussian { h: 40.0 }) };
    let est = EstimationConfig::point_only();
    let a = local_estimate_all(&panel, &cohorts, &cfg, &est, None).unwrap();
    let b = local_estimate_all(&scaled, &cohorts, &cfg, &est, None).unwrap();
    for (x, y) in a.entries.iter().zip(&b.entries) {
        assert_eq!(x.status, y.status);
        if let (Some(u), Some(v)) = (x.post_avg, y.post_avg) {
            assert!((3.0 * u - v).abs() < 1e-12);
        }
    }
    assert!(a.n_ok() > 250);
    assert!((robustness_correlation(&a, &b).unwrap().correlation - 1.0).abs() < 1e-12);
}

#[test]
fn estimator_rejects_bad_min_mass() {
    let panel = toy();
    let cohorts = assign_cohorts(&panel, ReversalPolicy::Drop);
    let cfg = LocalConfig { min_mass: -1.0, ..LocalConfig::new(KernelSpec::Gaussian { h: 1.0 }) };
    assert!(LocalEstimator::new(&panel, &cohorts, cfg, &EstimationConfig::point_only()).is_err());
}
