use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Panel, Period};

/// First-treatment period of a unit, or `Never`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cohort {
    Never,
    Period(Period),
}

impl Cohort {
    pub fn period(self) -> Option<Period> {
        match self {
            Cohort::Never => None,
            Cohort::Period(p) => Some(p),
        }
    }
}

/// How units whose treatment switches back off are handled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReversalPolicy {
    /// Exclude reversing units from estimation.
    #[default]
    Drop,
    /// Treat treatment as absorbing from the first adoption period.
    FirstAdoption,
}

impl std::str::FromStr for ReversalPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "drop" => Ok(Self::Drop),
            "first-adoption" => Ok(Self::FirstAdoption),
            other => Err(format!("unknown reversal policy `{other}` (expected drop | first-adoption)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortAssignment {
    pub unit_id: String,
    pub cohort: Cohort,
    /// Treatment observed off again after the first adoption.
    pub reversal_flag: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exclusion {
    /// Treated in the first panel period, so no pre-period exists.
    AlwaysTreated,
    /// Reversal under the `drop` policy.
    Reversal,
}

/// Cohort assignments for every unit of a panel, in panel unit order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohorts {
    pub policy: ReversalPolicy,
    pub first_period: Period,
    pub assignments: Vec<CohortAssignment>,
}

/// Unit counts by cohort, over every unit of the panel.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CohortTable {
    /// Units per adoption period, always-treated units excluded.
    pub cohorts: BTreeMap<Period, usize>,
    pub never: usize,
    pub always_treated: usize,
    pub reversals: usize,
}

impl CohortTable {
    pub fn total(&self) -> usize {
        self.cohorts.values().sum::<usize>() + self.never + self.always_treated
    }
}

impl Cohorts {
    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn exclusion(&self, unit: usize) -> Option<Exclusion> {
        let a = &self.assignments[unit];
        if a.cohort == Cohort::Period(self.first_period) {
            Some(Exclusion::AlwaysTreated)
        } else if a.reversal_flag && self.policy == ReversalPolicy::Drop {
            Some(Exclusion::Reversal)
        } else {
            None
        }
    }

    pub fn included(&self, unit: usize) -> bool {
        self.exclusion(unit).is_none()
    }

    pub fn cohort(&self, unit: usize) -> Cohort {
        self.assignments[unit].cohort
    }

    /// Adoption periods that have at least one included unit, ascending.
    pub fn estimable_cohorts(&self) -> Vec<Period> {
        let mut out: Vec<Period> =
            (0..self.len()).filter(|&i| self.included(i)).filter_map(|i| self.cohort(i).period()).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn table(&self) -> CohortTable {
        let mut table = CohortTable::default();
        for (i, a) in self.assignments.iter().enumerate() {
            if a.reversal_flag {
                table.reversals += 1;
            }
            match (self.exclusion(i), a.cohort) {
                (Some(Exclusion::AlwaysTreated), _) => table.always_treated += 1,
                (_, Cohort::Never) => table.never += 1,
                (_, Cohort::Period(p)) => *table.cohorts.entry(p).or_default() += 1,
            }
        }
        table
    }
}

/// Assigns each unit to the cohort of its earliest treated period.
pub fn assign_cohorts(panel: &Panel, policy: ReversalPolicy) -> Cohorts {
    let assignments = panel
        .units()
        .iter()
        .map(|unit| {
            let treated: Vec<(usize, bool)> = unit
                .observations()
                .iter()
                .enumerate()
                .filter_map(|(t, o)| o.as_ref().map(|o| (t, o.treated)))
                .collect();
            let first = treated.iter().find(|(_, d)| *d).map(|(t, _)| *t);
            let (cohort, reversal_flag) = match first {
                None => (Cohort::Never, false),
                Some(t0) => {
                    (Cohort::Period(panel.first_period() + t0 as Period), treated.iter().any(|&(t, d)| t > t0 && !d))
                }
            };
            CohortAssignment { unit_id: unit.unit_id.clone(), cohort, reversal_flag }
        })
        .collect();
    Cohorts { policy, first_period: panel.first_period(), assignments }
}
