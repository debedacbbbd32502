use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use anyhow::{anyhow, Context};
use geodid::did::{event_study, DidError, EstimationConfig};
use geodid::export::{
    read_field_csv, write_cluster_profiles_csv, write_event_study_csv, write_field_csv, write_field_geojson,
    write_json, ClusterReport,
};
use geodid::fda::{funfem_cluster, select_k, smooth_curves, BasisConfig, ClusterConfig, FdaError};
use geodid::kernel::KernelError;
use geodid::local::{
    local_estimate_all, resolve_kernel, robustness_correlation, KernelRequest, LocalATTField, LocalConfig, LocalError,
};
use geodid::panel::{assign_cohorts, ingest_csv, validate_panel_with, write_panel_csv, Panel, Severity};
use geodid::synth::{simulate_panel, EffectProfile, SimConfig, TrajectoryFamilies};
use serde_json::json;

use crate::config::{parse_k_range, RunConfig};
use crate::manifest::Run;
use crate::{
    ClusterArgs, Common, EstimateArgs, KernelFlag, LocalArgs, PanelArgs, Preset, RobustnessArgs, SimulateArgs,
    ValidateArgs,
};

pub const INPUT_ERROR: u8 = 2;
pub const ESTIMATION_ERROR: u8 = 3;

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn input(error: impl Into<anyhow::Error>) -> Self {
        Self { code: INPUT_ERROR, error: error.into() }
    }

    pub fn estimation(error: impl Into<anyhow::Error>) -> Self {
        Self { code: ESTIMATION_ERROR, error: error.into() }
    }
}

trait OrFail<T> {
    fn or_input(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrFail<T> for Result<T, E> {
    fn or_input(self) -> Result<T, Failure> {
        self.map_err(Failure::input)
    }
}

fn did_failure(e: DidError) -> Failure {
    match e {
        DidError::UnknownCovariate(_) | DidError::InvalidConfig(_) | DidError::NoNeverTreated => Failure::input(e),
        other => Failure::estimation(other),
    }
}

fn local_failure(e: LocalError) -> Failure {
    match e {
        LocalError::Did(d) => did_failure(d),
        LocalError::Kernel(KernelError::AllFitsFailed) | LocalError::ZeroVariance | LocalError::ThreadPool(_) => {
            Failure::estimation(e)
        }
        other => Failure::input(other),
    }
}

fn fda_failure(e: FdaError) -> Failure {
    match e {
        FdaError::SingularBasis | FdaError::EmptyClusterCollapse { .. } => Failure::estimation(e),
        other => Failure::input(other),
    }
}

/// Loads the config file and applies the shared flag overrides.
fn load_config(run: &mut Run, common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(common.config.as_deref()).or_input()?;
    if let Some(path) = &common.config {
        run.input(path).or_input()?;
    }
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    Ok(cfg)
}

fn apply_panel_flags(cfg: &mut RunConfig, args: &PanelArgs) -> Result<(), Failure> {
    if let Some(c) = &args.covariates {
        cfg.covariates = Some(c.clone());
        cfg.covariate_columns = None;
    }
    if let Some(p) = &args.reversal_policy {
        cfg.reversal_policy = Some(p.parse().map_err(|e: String| Failure::input(anyhow!(e)))?);
    }
    Ok(())
}

/// Ingests the panel, demands every covariate of the requested ladder row
/// and rejects panels with validation errors.
fn load_panel(run: &mut Run, cfg: &RunConfig, path: &Path, demanded: &[String]) -> Result<Panel, Failure> {
    run.input(path).or_input()?;
    let schema = cfg.columns.clone().unwrap_or_default();
    let ingested = run.stage("ingest", |_| ingest_csv(path, &schema)).or_input()?;
    for (col, n) in &ingested.report.unparseable {
        run.warn(format!("{n} unparseable `{col}` cells loaded as missing"));
    }
    let panel = ingested.panel;
    let missing: Vec<&str> =
        demanded.iter().filter(|c| !panel.covariate_names().contains(c)).map(String::as_str).collect();
    if !missing.is_empty() {
        return Err(Failure::input(anyhow!("panel lacks covariate column(s): {}", missing.join(", "))));
    }
    let report = validate_panel_with(&panel, cfg.reversal_policy.unwrap_or_default());
    let mut errors = Vec::new();
    for issue in &report.issues {
        match issue.severity {
            Severity::Error => errors.push(issue.message.clone()),
            Severity::Warning => run.warn(issue.message.clone()),
            Severity::Info => {}
        }
    }
    if !errors.is_empty() {
        return Err(Failure::input(anyhow!("panel validation failed: {}", errors.join("; "))));
    }
    Ok(panel)
}

fn estimation_config(
    run: &mut Run,
    cfg: &RunConfig,
    bootstrap: bool,
    stage: &str,
) -> Result<EstimationConfig, Failure> {
    let spec = cfg.covariate_spec().or_input()?;
    let reps = if bootstrap { cfg.bootstrap_reps.unwrap_or(999) } else { 0 };
    let seed = if reps > 0 { cfg.require_seed(stage).or_input()? } else { cfg.seed.unwrap_or(0) };
    if reps > 0 {
        run.manifest.seed = Some(seed);
    }
    let est = EstimationConfig {
        adjustment: cfg.adjustment(&spec),
        covariate_spec: spec,
        bootstrap_reps: reps,
        confidence_level: cfg.confidence_level.unwrap_or(0.95),
        seed,
        unit_weights: None,
    };
    Ok(est)
}

pub fn estimate(run: &mut Run, args: &EstimateArgs) -> Result<(), Failure> {
    let mut cfg = load_config(run, &args.common)?;
    apply_panel_flags(&mut cfg, &args.panel)?;
    if let Some(a) = &args.adjustment {
        cfg.adjustment = Some(a.parse().map_err(|e: String| Failure::input(anyhow!(e)))?);
    }
    if args.reps.is_some() {
        cfg.bootstrap_reps = args.reps;
    }
    run.echo(&json!({ "args": args, "config": cfg }));
    let est = estimation_config(run, &cfg, true, "bootstrap inference")?;
    let panel = load_panel(run, &cfg, &args.panel.panel, &est.covariate_spec.covariates)?;
    let cohorts = assign_cohorts(&panel, cfg.reversal_policy.unwrap_or_default());
    let study = run.stage("estimate", |_| event_study(&panel, &cohorts, &est)).map_err(did_failure)?;
    for w in &study.warnings {
        run.warn(w.clone());
    }
    for m in &study.missing_cells {
        run.warn(format!("cohort {} period {}: {}", m.cohort, m.period, m.reason));
    }
    run.result("covariate_spec", &est.covariate_spec);
    run.result("adjustment", est.adjustment);
    run.result("pre_avg", study.pre_avg.as_ref().map(|s| s.att));
    run.result("post_avg", study.post_avg.as_ref().map(|s| s.att));
    run.emit("event_study.csv", |b| write_event_study_csv(&study, b)).or_input()?;
    run.emit("event_study.json", |b| write_json(&study, b)).or_input()?;
    Ok(())
}

pub fn local(run: &mut Run, args: &LocalArgs) -> Result<(), Failure> {
    let mut cfg = load_config(run, &args.common)?;
    apply_panel_flags(&mut cfg, &args.panel)?;
    let l = &mut cfg.local;
    if let Some(k) = args.kernel {
        l.kernel = Some(match k {
            KernelFlag::Linear => "linear".into(),
            KernelFlag::Gaussian => "gaussian".into(),
        });
    }
    if args.bandwidth.is_some() {
        l.bandwidth = args.bandwidth.clone();
    }
    if args.d_max.is_some() {
        l.d_max = args.d_max;
    }
    if args.min_mass.is_some() {
        l.min_mass = args.min_mass;
    }
    if args.bootstrap {
        l.bootstrap = Some(true);
    }
    let jobs = args.jobs.or(cfg.local.jobs);
    run.echo(&json!({ "args": args, "config": cfg }));

    let l = &cfg.local;
    let request = match l.kernel.as_deref().unwrap_or("linear") {
        "linear" => {
            if l.bandwidth.is_some() {
                return Err(Failure::input(anyhow!(
                    "--bandwidth applies to the gaussian kernel; use --d-max for linear"
                )));
            }
            KernelRequest::Linear { d_max: l.d_max }
        }
        "gaussian" => match l.bandwidth.as_deref().unwrap_or("auto") {
            "auto" => KernelRequest::Gaussian { h: None, grid: l.bandwidth_grid.clone() },
            km => KernelRequest::Gaussian {
                h: Some(
                    km.parse()
                        .with_context(|| format!("bandwidth `{km}` is neither `auto` nor a number"))
                        .or_input()?,
                ),
                grid: None,
            },
        },
        other => return Err(Failure::input(anyhow!("unknown kernel `{other}` (expected linear | gaussian)"))),
    };
    let bootstrap = l.bootstrap.unwrap_or(false);
    let est = estimation_config(run, &cfg, bootstrap, "local bootstrap inference")?;
    let panel = load_panel(run, &cfg, &args.panel.panel, &est.covariate_spec.covariates)?;
    let cohorts = assign_cohorts(&panel, cfg.reversal_policy.unwrap_or_default());

    let (kernel, selection) =
        run.stage("kernel", |_| resolve_kernel(&panel, &request, &est.covariate_spec)).map_err(local_failure)?;
    run.result("kernel", kernel);
    if let Some(sel) = &selection {
        run.result("selected_bandwidth_km", sel.h);
    }
    let local_cfg = LocalConfig { kernel, min_mass: cfg.local.min_mass.unwrap_or(5.0), bootstrap };
    let field =
        run.stage("local", |_| local_estimate_all(&panel, &cohorts, &local_cfg, &est, jobs)).map_err(local_failure)?;
    report_field(run, &field);
    run.emit("field.csv", |b| write_field_csv(&field, b)).or_input()?;
    run.emit("field.geojson", |b| write_field_geojson(&field, None, b)).or_input()?;
    if let Some(sel) = &selection {
        run.emit("bandwidth.json", |b| write_json(sel, b)).or_input()?;
    }
    Ok(())
}

fn report_field(run: &mut Run, field: &LocalATTField) {
    let mut skipped: BTreeMap<String, usize> = BTreeMap::new();
    for e in field.entries.iter().filter(|e| !e.status.is_ok()) {
        *skipped.entry(e.status.label()).or_default() += 1;
    }
    for (label, n) in &skipped {
        run.warn(format!("{n} units {label}"));
    }
    run.result("n_units", field.entries.len());
    run.result("n_ok", field.n_ok());
}

fn read_field(run: &mut Run, path: &Path) -> Result<LocalATTField, Failure> {
    run.input(path).or_input()?;
    let file = File::open(path).with_context(|| format!("opening {}", path.display())).or_input()?;
    read_field_csv(file).with_context(|| format!("reading field {}", path.display())).or_input()
}

pub fn cluster(run: &mut Run, args: &ClusterArgs) -> Result<(), Failure> {
    let mut cfg = load_config(run, &args.common)?;
    let c = &mut cfg.cluster;
    if args.k.is_some() {
        c.k = args.k;
    }
    if args.select_k.is_some() {
        c.select_k = args.select_k.clone();
    }
    if args.restarts.is_some() {
        c.restarts = args.restarts;
    }
    if args.n_basis.is_some() {
        c.n_basis = args.n_basis;
    }
    run.echo(&json!({ "args": args, "config": cfg }));
    let seed = cfg.require_seed("clustering").or_input()?;
    run.manifest.seed = Some(seed);
    let c = &cfg.cluster;
    let k_range = c.select_k.as_deref().map(parse_k_range).transpose().or_input()?;

    let field = read_field(run, &args.field)?;
    let basis = BasisConfig { n_basis: c.n_basis, order: c.order };
    let curves = run.stage("smooth", |_| smooth_curves(&field, basis)).map_err(fda_failure)?;
    if !curves.excluded.is_empty() {
        run.warn(format!("{} units without a complete ok trajectory were excluded", curves.excluded.len()));
    }
    run.result("excluded_units", &curves.excluded);
    let defaults = ClusterConfig::default();
    let mut cc = ClusterConfig {
        k: c.k.unwrap_or(defaults.k),
        seed,
        max_iter: c.max_iter.unwrap_or(defaults.max_iter),
        tol: c.tol.unwrap_or(defaults.tol),
        restarts: c.restarts.unwrap_or(defaults.restarts),
    };
    let (model, table) = match &k_range {
        Some(range) => {
            let sel = run.stage("select_k", |_| select_k(&curves, range, &cc)).map_err(fda_failure)?;
            run.result("selected_k", sel.k);
            match c.k {
                Some(k) if k != sel.k => {
                    cc.k = k;
                    (run.stage("cluster", |_| funfem_cluster(&curves, &cc)).map_err(fda_failure)?, Some(sel.table))
                }
                _ => (sel.model, Some(sel.table)),
            }
        }
        None => (run.stage("cluster", |_| funfem_cluster(&curves, &cc)).map_err(fda_failure)?, None),
    };
    if model.reinitialised {
        run.warn("a collapsing cluster was reinitialised once".to_string());
    }
    if !model.converged {
        run.warn(format!("assignments still changing after {} iterations", model.iterations));
    }
    run.result("k", model.k);
    run.result("bic", model.bic);
    run.result("cluster_sizes", model.cluster_sizes());

    if let Some(t) = &table {
        run.emit("k_selection.csv", |b| -> anyhow::Result<()> {
            let mut w = csv::Writer::from_writer(b);
            w.write_record(["k", "loglik", "n_params", "bic"])?;
            for r in t {
                w.write_record([r.k.to_string(), r.loglik.to_string(), r.n_params.to_string(), r.bic.to_string()])?;
            }
            w.flush()?;
            Ok(())
        })
        .or_input()?;
    }
    run.emit("cluster_labels.csv", |b| -> anyhow::Result<()> {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["unit_id", "x_km", "y_km", "cluster", "responsibility"])?;
        for (i, id) in curves.unit_ids.iter().enumerate() {
            let l = model.labels[i];
            let loc = curves.locations[i];
            w.write_record([
                id.clone(),
                loc.x_km.to_string(),
                loc.y_km.to_string(),
                l.to_string(),
                model.responsibilities[i][l].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })
    .or_input()?;
    run.emit("cluster_profiles.csv", |b| write_cluster_profiles_csv(&curves, &model, b)).or_input()?;
    run.emit("clusters.geojson", |b| write_field_geojson(&field, Some((&curves.unit_ids, &model.labels)), b))
        .or_input()?;
    let report = ClusterReport::new(&curves, model, table);
    run.emit("clusters.json", |b| write_json(&report, b)).or_input()?;
    Ok(())
}

pub fn robustness(run: &mut Run, args: &RobustnessArgs) -> Result<(), Failure> {
    run.echo(&json!({ "args": args }));
    let a = read_field(run, &args.field_a)?;
    let b = read_field(run, &args.field_b)?;
    let report = run.stage("correlate", |_| robustness_correlation(&a, &b)).map_err(local_failure)?;
    run.result("correlation", report.correlation);
    run.result("n_common", report.n_common);
    run.emit("robustness.json", |buf| write_json(&report, buf)).or_input()?;
    Ok(())
}

fn preset_config(preset: Preset) -> SimConfig {
    match preset {
        Preset::Default | Preset::Families => SimConfig::default(),
        Preset::TwoRegion => SimConfig::two_region(1000, 0.03, 0.10, 0),
        Preset::Dynamic => {
            SimConfig { default_effect: EffectProfile::Linear { intercept: 0.02, slope: 0.02 }, ..SimConfig::default() }
        }
    }
}

pub fn simulate(run: &mut Run, args: &SimulateArgs) -> Result<(), Failure> {
    let cfg = load_config(run, &args.common)?;
    let seed = cfg.require_seed("simulation").or_input()?;
    run.manifest.seed = Some(seed);
    let preset = args.preset.unwrap_or(Preset::Default);
    if matches!(preset, Preset::Families) {
        let mut fam = TrajectoryFamilies { seed, ..TrajectoryFamilies::default() };
        if let Some(n) = args.n_units {
            fam.units_per_family = n.div_ceil(3);
        }
        run.echo(&json!({ "args": args, "config": cfg, "families": fam }));
        let (field, labels) = run.stage("simulate", |_| fam.generate());
        let ids: Vec<&str> = field.entries.iter().map(|e| e.unit_id.as_str()).collect();
        let truth = json!({ "seed": seed, "unit_ids": ids, "labels": labels });
        run.emit("field.csv", |b| write_field_csv(&field, b)).or_input()?;
        run.emit("truth.json", |b| write_json(&truth, b)).or_input()?;
        return Ok(());
    }
    let mut sim = cfg.simulate.clone().unwrap_or_else(|| preset_config(preset));
    sim.seed = seed;
    if let Some(n) = args.n_units {
        sim.n_units = n;
    }
    run.echo(&json!({ "args": args, "config": cfg, "simulate": sim }));
    let (panel, truth) = run.stage("simulate", |_| simulate_panel(&sim)).or_input()?;
    run.result("n_units", panel.n_units());
    run.result("never_treated", truth.units.iter().filter(|u| u.cohort.is_none()).count());
    run.emit("panel.csv", |b| write_panel_csv(&panel, b)).or_input()?;
    run.emit("truth.json", |b| write_json(&truth, b)).or_input()?;
    Ok(())
}

pub fn validate(run: &mut Run, args: &ValidateArgs) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(args.config.as_deref()).or_input()?;
    if let Some(path) = &args.config {
        run.input(path).or_input()?;
    }
    if let Some(p) = &args.reversal_policy {
        cfg.reversal_policy = Some(p.parse().map_err(|e: String| Failure::input(anyhow!(e)))?);
    }
    run.echo(&json!({ "args": args, "config": cfg }));
    run.input(&args.panel).or_input()?;
    let schema = cfg.columns.clone().unwrap_or_default();
    let ingested = run.stage("ingest", |_| ingest_csv(&args.panel, &schema)).or_input()?;
    let report = validate_panel_with(&ingested.panel, cfg.reversal_policy.unwrap_or_default());
    run.result("n_issues", report.issues.len());
    run.result("max_severity", report.max_severity());
    run.emit("validation.json", |b| write_json(&json!({ "ingest": ingested.report, "validation": report }), b))
        .or_input()?;
    if report.has_errors() {
        let msgs: Vec<&str> =
            report.issues.iter().filter(|i| i.severity == Severity::Error).map(|i| i.message.as_str()).collect();
        return Err(Failure::input(anyhow!("panel validation failed: {}", msgs.join("; "))));
    }
    Ok(())
}
