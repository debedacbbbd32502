//! Geographically weighted re-estimation of the event study.
//!
//! At every focal unit the global cohort assignment is kept and each unit is
//! weighted by the spatial kernel evaluated at its distance from the focal
//! unit; cell means become kernel-weighted means. The result is a field of
//! local event studies, one per unit.

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::did::{CovariateSpec, DidEngine, DidError, EstimationConfig, EventStudy};
use crate::kernel::{
    default_bandwidth_grid, distances_from, max_pairwise_distance, select_bandwidth, BandwidthSelection, KernelError,
    KernelSpec,
};
use crate::panel::{Cohorts, Location, Panel, PanelError};

#[derive(Debug, Error)]
pub enum LocalError {
    #[error("units without coordinates: {}", .0.join(", "))]
    MissingCoordinates(Vec<String>),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Did(#[from] DidError),
    #[error("fields cover different unit sets")]
    UnitSetMismatch,
    #[error("only {0} units are ok in both fields, need at least 3")]
    TooFewCommonUnits(usize),
    #[error("post_avg has zero variance across common units")]
    ZeroVariance,
    #[error("invalid local config: {0}")]
    InvalidConfig(String),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalConfig {
    pub kernel: KernelSpec,
    /// Minimum kernel-weighted count of treated and of never-treated units,
    /// overall and in every cell entering the aggregation.
    pub min_mass: f64,
    /// Attach bootstrap inference to each local event study.
    pub bootstrap: bool,
}

impl LocalConfig {
    pub fn new(kernel: KernelSpec) -> Self {
        Self { kernel, min_mass: 5.0, bootstrap: false }
    }
}

/// How the kernel scale should be obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kernel", rename_all = "kebab-case")]
pub enum KernelRequest {
    /// `d_max` defaults to the largest pairwise distance in the panel.
    Linear { d_max: Option<f64> },
    /// `h = None` selects the bandwidth by cross-validation over `grid`
    /// (default grid when `None`).
    Gaussian { h: Option<f64>, grid: Option<Vec<f64>> },
}

pub fn resolve_kernel(
    panel: &Panel,
    request: &KernelRequest,
    spec: &CovariateSpec,
) -> Result<(KernelSpec, Option<BandwidthSelection>), LocalError> {
    let locs = panel_locations(panel)?;
    let kernel = match request {
        KernelRequest::Linear { d_max } => {
            KernelSpec::LinearRestricted { d_max: d_max.unwrap_or_else(|| max_pairwise_distance(&locs)) }
        }
        KernelRequest::Gaussian { h: Some(h), .. } => KernelSpec::Gaussian { h: *h },
        KernelRequest::Gaussian { h: None, grid } => {
            let grid = grid.clone().unwrap_or_else(|| default_bandwidth_grid(&locs));
            let sel = select_bandwidth(panel, spec, &grid)?;
            return Ok((KernelSpec::Gaussian { h: sel.h }, Some(sel)));
        }
    };
    kernel.validate()?;
    Ok((kernel, None))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SkipReason {
    InsufficientLocalMass,
    EstimationFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LocalStatus {
    Ok,
    Skipped { reason: SkipReason, detail: String },
}

impl LocalStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, LocalStatus::Ok)
    }

    /// `ok` or `skipped:<Reason>`.
    pub fn label(&self) -> String {
        match self {
            LocalStatus::Ok => "ok".into(),
            LocalStatus::Skipped { reason, .. } => format!("skipped:{reason:?}"),
        }
    }
}

/// Result at one focal unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalEstimate {
    pub status: LocalStatus,
    pub effective_n_treated: f64,
    pub effective_n_control: f64,
    pub study: Option<EventStudy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalEntry {
    pub unit_id: String,
    pub location: Location,
    pub status: LocalStatus,
    pub post_avg: Option<f64>,
    pub pre_avg: Option<f64>,
    /// Aligned with [`LocalATTField::event_times`].
    pub att_by_e: Vec<Option<f64>>,
    pub effective_n_treated: f64,
    pub effective_n_control: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalATTField {
    pub event_times: Vec<i64>,
    pub kernel: Option<KernelSpec>,
    pub min_mass: f64,
    pub entries: Vec<LocalEntry>,
}

impl LocalATTField {
    pub fn n_ok(&self) -> usize {
        self.entries.iter().filter(|e| e.status.is_ok()).count()
    }

    pub fn post_event_times(&self) -> Vec<i64> {
        self.event_times.iter().copied().filter(|e| *e >= 0).collect()
    }

    pub fn att(&self, entry: usize, event_time: i64) -> Option<f64> {
        let k = self.event_times.iter().position(|e| *e == event_time)?;
        self.entries[entry].att_by_e[k]
    }
}

fn panel_locations(panel: &Panel) -> Result<Vec<Location>, LocalError> {
    panel.locations().map_err(|e| match e {
        PanelError::MissingCoordinates(u) => LocalError::MissingCoordinates(u),
        other => unreachable!("{other}"),
    })
}

/// Shared read-only state for the per-focal-unit loop.
pub struct LocalEstimator<'a> {
    engine: DidEngine<'a>,
    locations: Vec<Location>,
    config: LocalConfig,
    estimation: EstimationConfig,
}

impl<'a> LocalEstimator<'a> {
    pub fn new(
        panel: &'a Panel,
        cohorts: &Cohorts,
        config: LocalConfig,
        estimation: &EstimationConfig,
    ) -> Result<Self, LocalError> {
        config.kernel.validate()?;
        if !(config.min_mass >= 0.0 && config.min_mass.is_finite()) {
            return Err(LocalError::InvalidConfig(format!("min_mass {} must be finite and >= 0", config.min_mass)));
        }
        estimation.validate(panel.n_units())?;
        let locations = panel_locations(panel)?;
        let mut estimation = estimation.clone();
        estimation.unit_weights = None;
        if !config.bootstrap {
            estimation.bootstrap_reps = 0;
        }
        Ok(Self { engine: DidEngine::new(panel, cohorts), locations, config, estimation })
    }

    pub fn kernel_weights(&self, focal: usize) -> Vec<f64> {
        let d = distances_from(&self.locations, focal);
        d.iter().map(|&d| self.config.kernel.weight(d)).collect()
    }

    pub fn estimate(&self, focal: usize) -> Result<LocalEstimate, LocalError> {
        let w = self.kernel_weights(focal);
        self.estimate_with_weights(&w)
    }

    /// Local event study under an arbitrary weight vector (panel unit order).
    pub fn estimate_with_weights(&self, w: &[f64]) -> Result<LocalEstimate, LocalError> {
        let treated: f64 = self.engine.treated_members().map(|i| w[i]).sum();
        let control: f64 = self.engine.never_members().iter().map(|&i| w[i]).sum();
        let skip = |reason, detail: String| LocalEstimate {
            status: LocalStatus::Skipped { reason, detail },
            effective_n_treated: treated,
            effective_n_control: control,
            study: None,
        };
        let min_mass = self.config.min_mass;
        if treated < min_mass || control < min_mass || treated <= 0.0 || control <= 0.0 {
            return Ok(skip(
                SkipReason::InsufficientLocalMass,
                format!("treated mass {treated:.3}, control mass {control:.3}, need {min_mass}"),
            ));
        }
        match self.engine.event_study(&self.estimation, Some(w), min_mass) {
            Ok(study) if study.post_avg.is_some() => Ok(LocalEstimate {
                status: LocalStatus::Ok,
                effective_n_treated: treated,
                effective_n_control: control,
                study: Some(study),
            }),
            Ok(_) => Ok(skip(SkipReason::InsufficientLocalMass, "no post-treatment cell meets min_mass".into())),
            Err(DidError::NoEventTimes | DidError::NoNeverTreated) => {
                Ok(skip(SkipReason::InsufficientLocalMass, "no cell meets min_mass".into()))
            }
            Err(e @ (DidError::UnknownCovariate(_) | DidError::InvalidConfig(_))) => Err(e.into()),
            Err(e) => Ok(skip(SkipReason::EstimationFailed, e.to_string())),
        }
    }

    /// Estimates at every unit. Output order follows panel unit order and is
    /// identical for any thread count.
    pub fn estimate_all(&self, progress: Option<&(dyn Fn(usize, usize) + Sync)>) -> Result<LocalATTField, LocalError> {
        let n = self.locations.len();
        let done = AtomicUsize::new(0);
        let results: Vec<LocalEstimate> = (0..n)
            .into_par_iter()
            .map(|focal| {
                let r = self.estimate(focal);
                let k = done.fetch_add(1, Ordering::Relaxed) + 1;
                if let Some(cb) = progress {
                    cb(k, n);
                }
                r
            })
            .collect::<Result<_, _>>()?;
        Ok(self.assemble(results))
    }

    fn assemble(&self, results: Vec<LocalEstimate>) -> LocalATTField {
        let mut event_times: Vec<i64> = results
            .iter()
            .filter_map(|r| r.study.as_ref())
            .flat_map(|s| s.estimates.iter().map(|e| e.event_time))
            .collect();
        event_times.sort_unstable();
        event_times.dedup();
        let panel = self.engine.panel();
        let entries = results
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                let (att_by_e, pre, post) = match &r.study {
                    Some(s) => (
                        event_times.iter().map(|&e| s.att(e)).collect(),
                        s.pre_avg.as_ref().map(|p| p.att),
                        s.post_avg.as_ref().map(|p| p.att),
                    ),
                    None => (vec![None; event_times.len()], None, None),
                };
                LocalEntry {
                    unit_id: panel.unit(i).unit_id.clone(),
                    location: self.locations[i],
                    status: r.status,
                    post_avg: post,
                    pre_avg: pre,
                    att_by_e,
                    effective_n_treated: r.effective_n_treated,
                    effective_n_control: r.effective_n_control,
                }
            })
            .collect();
        LocalATTField { event_times, kernel: Some(self.config.kernel), min_mass: self.config.min_mass, entries }
    }
}

pub fn local_estimate_one(
    panel: &Panel,
    cohorts: &Cohorts,
    focal: usize,
    config: &LocalConfig,
    estimation: &EstimationConfig,
) -> Result<LocalEstimate, LocalError> {
    if focal >= panel.n_units() {
        return Err(LocalError::Kernel(KernelError::UnknownUnit(focal)));
    }
    LocalEstimator::new(panel, cohorts, config.clone(), estimation)?.estimate(focal)
}

/// Runs the local loop on `jobs` worker threads (rayon's default when `None`).
pub fn local_estimate_all(
    panel: &Panel,
    cohorts: &Cohorts,
    config: &LocalConfig,
    estimation: &EstimationConfig,
    jobs: Option<usize>,
) -> Result<LocalATTField, LocalError> {
    let estimator = LocalEstimator::new(panel, cohorts, config.clone(), estimation)?;
    match jobs {
        None => estimator.estimate_all(None),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| LocalError::ThreadPool(e.to_string()))?
            .install(|| estimator.estimate_all(None)),
    }
}

/// Pearson correlation of `post_avg` over units that are ok in both fields.
pub fn robustness_correlation(a: &LocalATTField, b: &LocalATTField) -> Result<RobustnessReport, LocalError> {
    let mut ids_a: Vec<&str> = a.entries.iter().map(|e| e.unit_id.as_str()).collect();
    let mut ids_b: Vec<&str> = b.entries.iter().map(|e| e.unit_id.as_str()).collect();
    ids_a.sort_unstable();
    ids_b.sort_unstable();
    if ids_a != ids_b {
        return Err(LocalError::UnitSetMismatch);
    }
    let lookup: std::collections::HashMap<&str, &LocalEntry> =
        b.entries.iter().map(|e| (e.unit_id.as_str(), e)).collect();
    let pairs: Vec<(f64, f64)> = a
        .entries
        .iter()
        .filter_map(|ea| {
            let eb = lookup[ea.unit_id.as_str()];
            match (ea.status.is_ok(), eb.status.is_ok(), ea.post_avg, eb.post_avg) {
                (true, true, Some(x), Some(y)) => Some((x, y)),
                _ => None,
            }
        })
        .collect();
    if pairs.len() < 3 {
        return Err(LocalError::TooFewCommonUnits(pairs.len()));
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(LocalError::ZeroVariance);
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    Ok(RobustnessReport { correlation: r, n_common: pairs.len(), n_units: a.entries.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub correlation: f64,
    pub n_common: usize,
    pub n_units: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, post: Option<f64>, ok: bool) -> LocalEntry {
        LocalEntry {
            unit_id: id.into(),
            location: Location::new(0.0, 0.0),
            status: if ok {
                LocalStatus::Ok
            } else {
                LocalStatus::Skipped { reason: SkipReason::InsufficientLocalMass, detail: String::new() }
            },
            post_avg: post,
            pre_avg: None,
            att_by_e: vec![],
            effective_n_treated: 0.0,
            effective_n_control: 0.0,
        }
    }

    fn field(values: &[(f64, bool)]) -> LocalATTField {
        LocalATTField {
            event_times: vec![],
            kernel: None,
            min_mass: 5.0,
            entries: values
                .iter()
                .enumerate()
                .map(|(i, &(v, ok))| entry(&format!("u{i}"), ok.then_some(v), ok))
                .collect(),
        }
    }

    #[test]
    fn self_and_negated_correlation() {
        let f = field(&[(0.01, true), (0.05, true), (0.03, true), (0.09, true)]);
        assert!((robustness_correlation(&f, &f).unwrap().correlation - 1.0).abs() < 1e-15);
        let mut g = f.clone();
        for e in &mut g.entries {
            e.post_avg = e.post_avg.map(|v| -v);
        }
        assert!((robustness_correlation(&f, &g).unwrap().correlation + 1.0).abs() < 1e-15);
    }

    #[test]
    fn disjoint_ok_sets() {
        let a = field(&[(0.1, true), (0.2, true), (0.3, false), (0.4, false)]);
        let b = field(&[(0.1, false), (0.2, false), (0.3, true), (0.4, true)]);
        assert!(matches!(robustness_correlation(&a, &b), Err(LocalError::TooFewCommonUnits(0))));
    }

    #[test]
    fn mismatched_units() {
        let a = field(&[(0.1, true), (0.2, true), (0.3, true)]);
        let mut b = a.clone();
        b.entries[0].unit_id = "zzz".into();
        assert!(matches!(robustness_correlation(&a, &b), Err(LocalError::UnitSetMismatch)));
    }
}
