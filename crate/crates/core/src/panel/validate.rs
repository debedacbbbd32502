use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{assign_cohorts, CohortTable, Exclusion, Panel, Period, ReversalPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Info,
    Warning,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    MissingOutcomes,
    MissingObservations,
    MissingCoordinates,
    AlwaysTreated,
    TreatmentReversal,
    NoNeverTreated,
    NoTreatedCohort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub severity: Severity,
    pub kind: IssueKind,
    pub unit_id: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n_units: usize,
    pub n_periods: usize,
    pub first_period: Period,
    pub last_period: Period,
    pub reversal_policy: ReversalPolicy,
    pub issues: Vec<Issue>,
    pub missing_outcomes_by_period: BTreeMap<Period, usize>,
    pub units_without_coordinates: Vec<String>,
    pub always_treated: Vec<String>,
    pub reversals: Vec<String>,
    pub cohort_sizes: CohortTable,
}

impl ValidationReport {
    pub fn max_severity(&self) -> Option<Severity> {
        self.issues.iter().map(|i| i.severity).max()
    }

    pub fn has_errors(&self) -> bool {
        self.max_severity() == Some(Severity::Error)
    }
}

pub fn validate_panel(panel: &Panel) -> ValidationReport {
    validate_panel_with(panel, ReversalPolicy::default())
}

pub fn validate_panel_with(panel: &Panel, policy: ReversalPolicy) -> ValidationReport {
    let cohorts = assign_cohorts(panel, policy);
    let mut issues = Vec::new();
    let mut missing_outcomes_by_period: BTreeMap<Period, usize> = panel.periods().map(|p| (p, 0)).collect();
    let mut units_without_coordinates = Vec::new();
    let mut always_treated = Vec::new();
    let mut reversals = Vec::new();
    let any_coordinates = panel.units().iter().any(|u| u.location.is_some());

    for (i, unit) in panel.units().iter().enumerate() {
        let id = Some(unit.unit_id.clone());
        let absent = unit.observations().iter().filter(|o| o.is_none()).count();
        let mut missing_y = 0;
        for (t, obs) in unit.observations().iter().enumerate() {
            if let Some(obs) = obs {
                if obs.outcome.is_none() {
                    missing_y += 1;
                    *missing_outcomes_by_period.get_mut(&(panel.first_period() + t as Period)).unwrap() += 1;
                }
            }
        }
        if absent > 0 {
            issues.push(Issue {
                severity: Severity::Warning,
                kind: IssueKind::MissingObservations,
                unit_id: id.clone(),
                message: format!("missing observations: {absent}"),
            });
        }
        if missing_y > 0 {
            issues.push(Issue {
                severity: Severity::Warning,
                kind: IssueKind::MissingOutcomes,
                unit_id: id.clone(),
                message: format!("missing outcomes: {missing_y}"),
            });
        }
        if any_coordinates && unit.location.is_none() {
            units_without_coordinates.push(unit.unit_id.clone());
            issues.push(Issue {
                severity: Severity::Warning,
                kind: IssueKind::MissingCoordinates,
                unit_id: id.clone(),
                message: "missing coordinates".into(),
            });
        }
        if cohorts.assignments[i].reversal_flag {
            reversals.push(unit.unit_id.clone());
            let action = match policy {
                ReversalPolicy::Drop => "excluded",
                ReversalPolicy::FirstAdoption => "treated as absorbing",
            };
            issues.push(Issue {
                severity: Severity::Warning,
                kind: IssueKind::TreatmentReversal,
                unit_id: id.clone(),
                message: format!("treatment reversal: {action}"),
            });
        }
        if cohorts.exclusion(i) == Some(Exclusion::AlwaysTreated) {
            always_treated.push(unit.unit_id.clone());
            issues.push(Issue {
                severity: Severity::Warning,
                kind: IssueKind::AlwaysTreated,
                unit_id: id,
                message: "always treated: excluded".into(),
            });
        }
    }

    let table = cohorts.table();
    let never_included =
        (0..cohorts.len()).filter(|&i| cohorts.included(i) && cohorts.cohort(i) == super::Cohort::Never).count();
    if never_included == 0 {
        issues.push(Issue {
            severity: Severity::Error,
            kind: IssueKind::NoNeverTreated,
            unit_id: None,
            message: "no never-treated units: comparison group is empty".into(),
        });
    }
    if cohorts.estimable_cohorts().is_empty() {
        issues.push(Issue {
            severity: Severity::Error,
            kind: IssueKind::NoTreatedCohort,
            unit_id: None,
            message: "no cohort adopts treatment after the first period".into(),
        });
    }

    ValidationReport {
        n_units: panel.n_units(),
        n_periods: panel.n_periods(),
        first_period: panel.first_period(),
        last_period: panel.last_period(),
        reversal_policy: policy,
        issues,
        missing_outcomes_by_period,
        units_without_coordinates,
        always_treated,
        reversals,
        cohort_sizes: table,
    }
}
