//! Long-format unit × period panels.
//!
//! A [`Panel`] stores one [`UnitSeries`] per unit, each holding at most one
//! [`Observation`] per period of a contiguous integer period range. Panels are
//! immutable once built and are shared read-only by every estimator.

mod cohort;
mod ingest;
mod validate;

use std::collections::HashMap;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cohort::{assign_cohorts, Cohort, CohortAssignment, CohortTable, Cohorts, Exclusion, ReversalPolicy};
pub use ingest::{ingest_csv, ingest_reader, write_panel_csv, ColumnSchema, IngestReport, Ingested};
pub use validate::{validate_panel, validate_panel_with, Issue, IssueKind, Severity, ValidationReport};

/// Calendar period (a year in the motivating application).
pub type Period = i64;

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("column `{0}` is missing from the header")]
    MissingColumn(String),
    #[error("duplicate observation for unit `{unit}` in period {period}")]
    DuplicateObservation { unit: String, period: Period },
    #[error("panel has no observations")]
    EmptyPanel,
    #[error("line {line}: cannot parse period `{value}`")]
    InvalidPeriod { line: u64, value: String },
    #[error("line {line}: treatment indicator must be 0 or 1, got `{value}`")]
    InvalidTreatment { line: u64, value: String },
    #[error("line {line}: empty unit identifier")]
    EmptyUnitId { line: u64 },
    #[error("unit `{unit}`: outcome {value} outside [0, 1] for a share outcome")]
    OutcomeOutOfRange { unit: String, value: f64 },
    #[error("unit `{unit}`: non-finite value in {what}")]
    NonFinite { unit: String, what: &'static str },
    #[error("unit `{unit}`: rows disagree on coordinates")]
    InconsistentLocation { unit: String },
    #[error("unit `{unit}`: covariate vector has length {got}, expected {expected}")]
    CovariateLength { unit: String, got: usize, expected: usize },
    #[error("units without coordinates: {}", .0.join(", "))]
    MissingCoordinates(Vec<String>),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Planar coordinates in kilometres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub x_km: f64,
    pub y_km: f64,
}

impl Location {
    pub fn new(x_km: f64, y_km: f64) -> Self {
        Self { x_km, y_km }
    }

    pub fn distance(&self, other: &Location) -> f64 {
        (self.x_km - other.x_km).hypot(self.y_km - other.y_km)
    }
}

/// One unit-period record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub outcome: Option<f64>,
    pub treated: bool,
    /// One slot per panel covariate; `None` marks a missing cell.
    pub covariates: Vec<Option<f64>>,
}

impl Observation {
    pub fn new(outcome: Option<f64>, treated: bool) -> Self {
        Self { outcome, treated, covariates: Vec::new() }
    }

    pub fn with_covariates(mut self, covariates: Vec<Option<f64>>) -> Self {
        self.covariates = covariates;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSeries {
    pub unit_id: String,
    pub location: Option<Location>,
    /// Indexed by period offset from the panel's first period.
    observations: Vec<Option<Observation>>,
}

impl UnitSeries {
    pub fn observations(&self) -> &[Option<Observation>] {
        &self.observations
    }

    pub fn observation(&self, offset: usize) -> Option<&Observation> {
        self.observations.get(offset).and_then(Option::as_ref)
    }

    pub fn outcome(&self, offset: usize) -> Option<f64> {
        self.observation(offset).and_then(|o| o.outcome)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    first_period: Period,
    n_periods: usize,
    covariate_names: Vec<String>,
    outcome_is_share: bool,
    units: Vec<UnitSeries>,
}

impl Panel {
    pub fn first_period(&self) -> Period {
        self.first_period
    }

    pub fn last_period(&self) -> Period {
        self.first_period + self.n_periods as Period - 1
    }

    pub fn periods(&self) -> RangeInclusive<Period> {
        self.first_period..=self.last_period()
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn units(&self) -> &[UnitSeries] {
        &self.units
    }

    pub fn unit(&self, index: usize) -> &UnitSeries {
        &self.units[index]
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn outcome_is_share(&self) -> bool {
        self.outcome_is_share
    }

    /// Offset of `period` from the first period, if inside the panel range.
    pub fn period_offset(&self, period: Period) -> Option<usize> {
        if self.periods().contains(&period) {
            Some((period - self.first_period) as usize)
        } else {
            None
        }
    }

    pub fn unit_index(&self, unit_id: &str) -> Option<usize> {
        self.units.iter().position(|u| u.unit_id == unit_id)
    }

    pub fn has_coordinates(&self) -> bool {
        self.units.iter().all(|u| u.location.is_some())
    }

    /// Locations of every unit, or the list of units lacking one.
    pub fn locations(&self) -> Result<Vec<Location>, PanelError> {
        let missing: Vec<String> =
            self.units.iter().filter(|u| u.location.is_none()).map(|u| u.unit_id.clone()).collect();
        if !missing.is_empty() {
            return Err(PanelError::MissingCoordinates(missing));
        }
        Ok(self.units.iter().map(|u| u.location.unwrap()).collect())
    }

    /// Returns a copy with every present outcome replaced by `f(unit_index, period, y)`.
    ///
    /// The share-outcome declaration is dropped since the map may leave [0, 1].
    pub fn map_outcomes(&self, mut f: impl FnMut(usize, Period, f64) -> f64) -> Panel {
        let mut out = self.clone();
        out.outcome_is_share = false;
        for (i, unit) in out.units.iter_mut().enumerate() {
            for (offset, obs) in unit.observations.iter_mut().enumerate() {
                if let Some(obs) = obs {
                    if let Some(y) = obs.outcome {
                        obs.outcome = Some(f(i, self.first_period + offset as Period, y));
                    }
                }
            }
        }
        out
    }

    /// Returns a copy with units reordered so that new unit `k` is old unit `order[k]`.
    pub fn reorder_units(&self, order: &[usize]) -> Panel {
        let mut out = self.clone();
        out.units = order.iter().map(|&i| self.units[i].clone()).collect();
        out
    }
}

type PendingUnit = (String, Option<Location>, Vec<(Period, Observation)>);

/// Incremental constructor used by CSV ingestion and the simulator.
#[derive(Debug, Default)]
pub struct PanelBuilder {
    covariate_names: Vec<String>,
    outcome_is_share: bool,
    index: HashMap<String, usize>,
    units: Vec<PendingUnit>,
}

impl PanelBuilder {
    pub fn new(covariate_names: Vec<String>) -> Self {
        Self { covariate_names, ..Self::default() }
    }

    pub fn outcome_is_share(mut self, share: bool) -> Self {
        self.outcome_is_share = share;
        self
    }

    /// Registers a unit (idempotent) and sets its location if one is given.
    pub fn unit(&mut self, unit_id: &str, location: Option<Location>) -> Result<usize, PanelError> {
        let idx = match self.index.get(unit_id) {
            Some(&i) => i,
            None => {
                self.units.push((unit_id.to_string(), None, Vec::new()));
                self.index.insert(unit_id.to_string(), self.units.len() - 1);
                self.units.len() - 1
            }
        };
        if let Some(loc) = location {
            if !(loc.x_km.is_finite() && loc.y_km.is_finite()) {
                return Err(PanelError::NonFinite { unit: unit_id.to_string(), what: "coordinates" });
            }
            match self.units[idx].1 {
                None => self.units[idx].1 = Some(loc),
                Some(prev) if prev != loc => {
                    return Err(PanelError::InconsistentLocation { unit: unit_id.to_string() })
                }
                Some(_) => {}
            }
        }
        Ok(idx)
    }

    pub fn push(
        &mut self,
        unit_id: &str,
        location: Option<Location>,
        period: Period,
        mut obs: Observation,
    ) -> Result<(), PanelError> {
        let idx = self.unit(unit_id, location)?;
        if obs.covariates.is_empty() && !self.covariate_names.is_empty() {
            obs.covariates = vec![None; self.covariate_names.len()];
        }
        if obs.covariates.len() != self.covariate_names.len() {
            return Err(PanelError::CovariateLength {
                unit: unit_id.to_string(),
                got: obs.covariates.len(),
                expected: self.covariate_names.len(),
            });
        }
        if obs.outcome.is_some_and(|y| !y.is_finite()) || obs.covariates.iter().flatten().any(|v| !v.is_finite()) {
            return Err(PanelError::NonFinite { unit: unit_id.to_string(), what: "observation" });
        }
        if let Some(y) = obs.outcome {
            if self.outcome_is_share && !(0.0..=1.0).contains(&y) {
                return Err(PanelError::OutcomeOutOfRange { unit: unit_id.to_string(), value: y });
            }
        }
        let records = &mut self.units[idx].2;
        if records.iter().any(|(p, _)| *p == period) {
            return Err(PanelError::DuplicateObservation { unit: unit_id.to_string(), period });
        }
        records.push((period, obs));
        Ok(())
    }

    pub fn build(self) -> Result<Panel, PanelError> {
        let periods = self.units.iter().flat_map(|u| u.2.iter().map(|(p, _)| *p));
        let (lo, hi) = periods.fold((Period::MAX, Period::MIN), |(lo, hi), p| (lo.min(p), hi.max(p)));
        if lo > hi {
            return Err(PanelError::EmptyPanel);
        }
        let n_periods = (hi - lo + 1) as usize;
        let units = self
            .units
            .into_iter()
            .map(|(unit_id, location, records)| {
                let mut observations = vec![None; n_periods];
                for (p, obs) in records {
                    observations[(p - lo) as usize] = Some(obs);
                }
                UnitSeries { unit_id, location, observations }
            })
            .collect();
        Ok(Panel {
            first_period: lo,
            n_periods,
            covariate_names: self.covariate_names,
            outcome_is_share: self.outcome_is_share,
            units,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_rejects_duplicate_period() {
        let mut b = PanelBuilder::new(vec![]);
        b.push("a", None, 2010, Observation::new(Some(0.1), false)).unwrap();
        let err = b.push("a", None, 2010, Observation::new(Some(0.2), false)).unwrap_err();
        assert!(matches!(err, PanelError::DuplicateObservation { period: 2010, .. }));
    }

    #[test]
    fn empty_builder_is_empty_panel() {
        assert!(matches!(PanelBuilder::new(vec![]).build(), Err(PanelError::EmptyPanel)));
    }

    #[test]
    fn period_range_is_contiguous_even_with_gaps() {
        let mut b = PanelBuilder::new(vec![]);
        b.push("a", None, 2010, Observation::new(Some(0.1), false)).unwrap();
        b.push("b", None, 2013, Observation::new(Some(0.1), false)).unwrap();
        let p = b.build().unwrap();
        assert_eq!(p.periods(), 2010..=2013);
        assert_eq!(p.unit(0).observations().len(), 4);
        assert!(p.unit(0).observation(3).is_none());
    }

    #[test]
    fn share_outcome_is_range_checked() {
        let mut b = PanelBuilder::new(vec![]).outcome_is_share(true);
        let err = b.push("a", None, 2010, Observation::new(Some(1.2), false)).unwrap_err();
        assert!(matches!(err, PanelError::OutcomeOutOfRange { .. }));
    }

    #[test]
    fn conflicting_locations_rejected() {
        let mut b = PanelBuilder::new(vec![]);
        b.push("a", Some(Location::new(0.0, 0.0)), 2010, Observation::new(None, false)).unwrap();
        let err = b.push("a", Some(Location::new(1.0, 0.0)), 2011, Observation::new(None, false)).unwrap_err();
        assert!(matches!(err, PanelError::InconsistentLocation { .. }));
    }
}
