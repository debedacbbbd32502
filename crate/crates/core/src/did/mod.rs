//! Group-time average treatment effects against the never-treated group.
//!
//! For a cohort `c` first treated in period `c` and a period `t`, the estimate
//! compares the outcome change of the cohort with the change of the
//! never-treated group over the same window:
//!
//! * post periods (`t >= c`) use the fixed base `c - 1`;
//! * pre periods (`t < c`) use the short difference `t - 1 -> t` (placebos).
//!
//! Estimates are aggregated by event time `e = t - c` with cohort-size weights
//! and summarised as simple means over pre (`e < 0`) and post (`e >= 0`) event
//! times. Standard errors come from a Rademacher multiplier bootstrap over the
//! unit-level influence functions.

mod adjust;
mod bootstrap;
mod covariates;
mod engine;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{Cohort, Cohorts, Panel, Period};

pub use adjust::OrAdjustment;
pub use bootstrap::{bootstrap_standard_errors, normal_quantile};
pub use covariates::{columns, CovariateSpec};
pub use engine::DidEngine;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DidError {
    #[error("cohort {cohort}, period {period}: no contributing units in the {cell} cell")]
    InsufficientData { cohort: Period, period: Period, cell: &'static str },
    #[error("cohort {cohort}, period {period}: local mass below threshold (treated {treated_mass:.3}, control {control_mass:.3})")]
    InsufficientMass { cohort: Period, period: Period, treated_mass: f64, control_mass: f64 },
    #[error("the never-treated comparison group is empty")]
    NoNeverTreated,
    #[error("cohort {cohort}, period {period}: no base period inside the panel")]
    NoBasePeriod { cohort: Period, period: Period },
    #[error("period {0} is outside the panel range")]
    PeriodOutOfRange(Period),
    #[error("no included unit belongs to cohort {0}")]
    UnknownCohort(Period),
    #[error("no event time could be estimated")]
    NoEventTimes,
    #[error("cohort {cohort}, period {period}: fewer than 2 contributing units, bootstrap is degenerate")]
    DegenerateBootstrap { cohort: Period, period: Period },
    #[error("outcome-regression design is singular (collinear covariates)")]
    SingularDesign,
    #[error("covariate `{0}` is not present in the panel")]
    UnknownCovariate(String),
    #[error("invalid estimation config: {0}")]
    InvalidConfig(String),
}

impl DidError {
    /// Errors that invalidate a single (cohort, period) cell rather than the whole run.
    pub fn is_cell_level(&self) -> bool {
        matches!(
            self,
            DidError::InsufficientData { .. } | DidError::InsufficientMass { .. } | DidError::NoBasePeriod { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Adjustment {
    #[default]
    None,
    OutcomeRegression,
}

impl std::str::FromStr for Adjustment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "outcome-regression" | "or" => Ok(Self::OutcomeRegression),
            other => Err(format!("unknown adjustment `{other}` (expected none | outcome-regression)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationConfig {
    pub covariate_spec: CovariateSpec,
    pub adjustment: Adjustment,
    pub bootstrap_reps: usize,
    pub confidence_level: f64,
    pub seed: u64,
    /// Per-unit nonnegative weights in panel unit order.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unit_weights: Option<Vec<f64>>,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            covariate_spec: CovariateSpec::baseline(),
            adjustment: Adjustment::None,
            bootstrap_reps: 999,
            confidence_level: 0.95,
            seed: 0,
            unit_weights: None,
        }
    }
}

impl EstimationConfig {
    pub fn point_only() -> Self {
        Self { bootstrap_reps: 0, ..Self::default() }
    }

    pub fn validate(&self, n_units: usize) -> Result<(), DidError> {
        if !(self.confidence_level > 0.0 && self.confidence_level < 1.0) {
            return Err(DidError::InvalidConfig(format!("confidence_level {} not in (0, 1)", self.confidence_level)));
        }
        if let Some(w) = &self.unit_weights {
            validate_weights(w, n_units)?;
        }
        Ok(())
    }
}

pub(crate) fn validate_weights(w: &[f64], n_units: usize) -> Result<(), DidError> {
    if w.len() != n_units {
        return Err(DidError::InvalidConfig(format!("{} unit weights for {n_units} units", w.len())));
    }
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(DidError::InvalidConfig("unit weights must be finite and nonnegative".into()));
    }
    if w.iter().all(|v| *v == 0.0) {
        return Err(DidError::InvalidConfig("unit weights are all zero".into()));
    }
    Ok(())
}

/// Estimated effect for one cohort in one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTimeATT {
    pub cohort: Period,
    pub period: Period,
    pub event_time: i64,
    pub base_period: Period,
    pub att: f64,
    /// Cohort units contributing to both the period and base cells.
    pub n_treated: usize,
    pub n_control: usize,
    pub treated_mass: f64,
    pub control_mass: f64,
    pub adjusted: bool,
    /// Outcome regression was requested but the design was singular.
    pub fallback_unadjusted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    pub se: f64,
    pub z: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Inference {
    pub fn from_se(estimate: f64, se: f64, quantile: f64) -> Self {
        Self { se, z: estimate / se, ci_low: estimate - quantile * se, ci_high: estimate + quantile * se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTimeEstimate {
    pub event_time: i64,
    pub att: f64,
    /// Cohorts averaged into this event time.
    pub n_cohorts: usize,
    /// Total cohort mass behind the aggregation weights.
    pub mass: f64,
    pub inference: Option<Inference>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEstimate {
    pub att: f64,
    pub n_event_times: usize,
    pub inference: Option<Inference>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingCell {
    pub cohort: Period,
    pub period: Period,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventStudy {
    pub estimates: Vec<EventTimeEstimate>,
    pub pre_avg: Option<SummaryEstimate>,
    pub post_avg: Option<SummaryEstimate>,
    pub group_time: Vec<GroupTimeATT>,
    pub missing_cells: Vec<MissingCell>,
    pub warnings: Vec<String>,
    pub confidence_level: f64,
    pub bootstrap_reps: usize,
}

impl EventStudy {
    pub fn event_times(&self) -> Vec<i64> {
        self.estimates.iter().map(|e| e.event_time).collect()
    }

    pub fn att(&self, event_time: i64) -> Option<f64> {
        self.estimates.iter().find(|e| e.event_time == event_time).map(|e| e.att)
    }

    pub fn estimate(&self, event_time: i64) -> Option<&EventTimeEstimate> {
        self.estimates.iter().find(|e| e.event_time == event_time)
    }
}

/// Bootstrap statistic identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    EventTime(i64),
    PreAvg,
    PostAvg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticInference {
    pub statistic: Statistic,
    pub estimate: f64,
    pub inference: Inference,
}

/// Weighted mean of the non-missing outcomes of `group` in `period`.
///
/// Excluded units (always treated, dropped reversals) never contribute.
pub fn cell_mean(
    panel: &Panel,
    cohorts: &Cohorts,
    group: Cohort,
    period: Period,
    unit_weights: Option<&[f64]>,
) -> Option<f64> {
    let offset = panel.period_offset(period)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (i, unit) in panel.units().iter().enumerate() {
        if !cohorts.included(i) || cohorts.cohort(i) != group {
            continue;
        }
        let w = unit_weights.map_or(1.0, |w| w[i]);
        if let (Some(y), true) = (unit.outcome(offset), w > 0.0) {
            num += w * y;
            den += w;
        }
    }
    (den > 0.0).then(|| num / den)
}

pub fn group_time_att(
    panel: &Panel,
    cohorts: &Cohorts,
    cohort: Period,
    period: Period,
    config: &EstimationConfig,
) -> Result<GroupTimeATT, DidError> {
    config.validate(panel.n_units())?;
    let engine = DidEngine::new(panel, cohorts);
    engine.group_time_att(cohort, period, config, config.unit_weights.as_deref())
}

pub fn event_study(panel: &Panel, cohorts: &Cohorts, config: &EstimationConfig) -> Result<EventStudy, DidError> {
    config.validate(panel.n_units())?;
    DidEngine::new(panel, cohorts).event_study(config, config.unit_weights.as_deref(), 0.0)
}

/// Standard errors and pointwise intervals for every event time and the two averages.
pub fn multiplier_bootstrap(
    panel: &Panel,
    cohorts: &Cohorts,
    config: &EstimationConfig,
) -> Result<Vec<StatisticInference>, DidError> {
    if config.bootstrap_reps == 0 {
        return Err(DidError::InvalidConfig("bootstrap_reps must be at least 1".into()));
    }
    let study = event_study(panel, cohorts, config)?;
    let mut out: Vec<StatisticInference> = study
        .estimates
        .iter()
        .map(|e| StatisticInference {
            statistic: Statistic::EventTime(e.event_time),
            estimate: e.att,
            inference: e.inference.clone().expect("bootstrap ran"),
        })
        .collect();
    for (stat, summary) in [(Statistic::PreAvg, &study.pre_avg), (Statistic::PostAvg, &study.post_avg)] {
        if let Some(s) = summary {
            out.push(StatisticInference {
                statistic: stat,
                estimate: s.att,
                inference: s.inference.clone().expect("bootstrap ran"),
            });
        }
    }
    Ok(out)
}

/// Outcome-regression prediction of the never-treated change for cohort `cohort`.
pub fn or_adjust(
    panel: &Panel,
    cohorts: &Cohorts,
    cohort: Period,
    period: Period,
    covariate_spec: &CovariateSpec,
    unit_weights: Option<&[f64]>,
) -> Result<OrAdjustment, DidError> {
    if let Some(w) = unit_weights {
        validate_weights(w, panel.n_units())?;
    }
    DidEngine::new(panel, cohorts).or_adjust(cohort, period, covariate_spec, unit_weights)
}
