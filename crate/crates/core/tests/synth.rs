use geodid::did::{event_study, group_time_att, EstimationConfig};
use geodid::panel::{assign_cohorts, ingest_reader, write_panel_csv, Cohort, ColumnSchema, ReversalPolicy};
use geodid::synth::{simulate_panel, CovariateModel, EffectProfile, GroundTruth, SimConfig};

#[test]
fn cohort_shares_follow_hazards() {
    let hazards = vec![0.0, 0.05, 0.1, 0.05, 0.15, 0.05, 0.1, 0.0, 0.05, 0.1];
    let cfg = SimConfig { n_units: 10_000, hazards: hazards.clone(), seed: 3, ..SimConfig::default() };
    let (panel, _) = simulate_panel(&cfg).unwrap();
    let table = assign_cohorts(&panel, ReversalPolicy::Drop).table();
    let mut survive = 1.0;
    for (t, h) in hazards.iter().enumerate() {
        let expected = survive * h;
        survive *= 1.0 - h;
        let got = table.cohorts.get(&(2010 + t as i64)).copied().unwrap_or(0) as f64 / 10_000.0;
        assert!((got - expected).abs() < 0.02, "period {t}: {got} vs {expected}");
    }
    assert!((table.never as f64 / 10_000.0 - survive).abs() < 0.02);
}

#[test]
fn adoption_is_capped() {
    let cfg =
        SimConfig { n_units: 5_000, hazards: vec![0.0, 0.5, 0.5, 0.5, 0.5], n_periods: 5, ..SimConfig::default() };
    let (panel, truth) = simulate_panel(&cfg).unwrap();
    let never = truth.units.iter().filter(|u| u.cohort.is_none()).count() as f64 / 5_000.0;
    assert!((never - 0.2).abs() < 0.02);
    assert!(assign_cohorts(&panel, ReversalPolicy::Drop).table().never > 0);
}

#[test]
fn no_reversals_without_reversal_probability() {
    let (panel, truth) = simulate_panel(&SimConfig { n_units: 800, seed: 1, ..SimConfig::default() }).unwrap();
    let cohorts = assign_cohorts(&panel, ReversalPolicy::Drop);
    assert!(cohorts.table().reversals == 0);
    assert!(truth.units.iter().all(|u| !u.reversed));

    let (panel, truth) =
        simulate_panel(&SimConfig { n_units: 800, reversal_prob: 0.2, seed: 1, ..SimConfig::default() }).unwrap();
    let cohorts = assign_cohorts(&panel, ReversalPolicy::Drop);
    let flagged = truth.units.iter().filter(|u| u.reversed).count();
    assert!(flagged > 0);
    assert_eq!(cohorts.table().reversals, flagged);
}

#[test]
fn noiseless_null_effect_estimates_zero() {
    let flat = SimConfig { noise_sd: 0.0, fe_unit_sd: 0.0, fe_time_sd: 0.0, n_units: 300, ..SimConfig::default() };
    let (panel, _) = simulate_panel(&flat).unwrap();
    let cohorts = assign_cohorts(&panel, ReversalPolicy::Drop);
    let es = event_study(&panel, &cohorts, &EstimationConfig::point_only()).unwrap();
    assert!(es.estimates.iter().all(|e| e.att == 0.0));

    let with_fe = SimConfig { noise_sd: 0.0, n_units: 300, ..SimConfig::default() };
    let (panel, _) = simulate_panel(&with_fe).unwrap();
    let cohorts = assign_cohorts(&panel, ReversalPolicy::Drop);
    let es = event_study(&panel, &cohorts, &EstimationConfig::point_only()).unwrap();
    assert!(es.estimates.iter().all(|e| e.att.abs() < 1e-12));
}

#[test]
fn noiseless_dynamic_effect_is_recovered_per_cell() {
    let cfg = SimConfig {
        noise_sd: 0.0,
        n_units: 400,
        default_effect: EffectProfile::Linear { intercept: 0.02, slope: 0.02 },
        covariates: vec![CovariateModel { name: "income".into(), mean: 1.0, sd: 0.0, loading: 0.3, persistence: 0.5 }],
        ..SimConfig::default()
    };
    let (panel, truth) = simulate_panel(&cfg).unwrap();
    let cohorts = assign_cohorts(&panel, ReversalPolicy::Drop);
    for c in cohorts.estimable_cohorts() {
        for t in c..=panel.last_period() {
            let g = group_time_att(&panel, &cohorts, c, t, &EstimationConfig::point_only()).unwrap();
            assert!((g.att - 0.02 * ((t - c) as f64 + 1.0)).abs() < 1e-12);
        }
    }
    let es = event_study(&panel, &cohorts, &EstimationConfig::point_only()).unwrap();
    for e in &es.estimates {
        assert!((e.att - truth.att_by_e[&e.event_time]).abs() < 1e-12);
    }
}

#[test]
fn two_region_truth_is_recorded() {
    let (panel, truth) = simulate_panel(&SimConfig::two_region(300, 0.03, 0.10, 4)).unwrap();
    assert_eq!(truth.effects["north"][0], 0.03);
    assert_eq!(truth.effects["south"][3], 0.10);
    for (i, u) in truth.units.iter().enumerate() {
        let y = panel.unit(i).location.unwrap().y_km;
        assert_eq!(u.region == "north", y >= 350.0);
        let cohort = assign_cohorts(&panel, ReversalPolicy::Drop).cohort(i);
        assert_eq!(cohort, u.cohort.map_or(Cohort::Never, Cohort::Period));
    }
}

#[test]
fn panel_and_truth_round_trip_through_files() {
    let cfg = SimConfig {
        n_units: 60,
        covariates: vec![CovariateModel {
            name: "density".into(),
            mean: 276.871,
            sd: 50.0,
            loading: 0.0,
            persistence: 0.9,
        }],
        ..SimConfig::default()
    };
    let (panel, truth) = simulate_panel(&cfg).unwrap();
    let mut buf = Vec::new();
    write_panel_csv(&panel, &mut buf).unwrap();
    let back = ingest_reader(buf.as_slice(), &ColumnSchema::default()).unwrap().panel;
    assert_eq!(back, panel);
    let json = serde_json::to_string(&truth).unwrap();
    let truth_back: GroundTruth = serde_json::from_str(&json).unwrap();
    assert_eq!(truth_back, truth);
}
