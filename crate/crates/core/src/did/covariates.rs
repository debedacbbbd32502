use serde::{Deserialize, Serialize};

/// Canonical covariate column names for municipal waste panels.
pub mod columns {
    pub const DENSITY: &str = "density";
    pub const POPULATION: &str = "population";
    pub const AREA: &str = "area_km2";
    pub const HOUSEHOLD_MEMBERS: &str = "household_members";
    pub const MOUNTAIN: &str = "mountain";
    pub const TOURIST_BEDS: &str = "tourist_beds";
    pub const INCOME: &str = "income_per_capita";
    pub const COLLECTION_COST_HAB: &str = "collection_cost_per_hab";
    pub const TREATMENT_COST_HAB: &str = "treatment_cost_per_hab";
    pub const COLLECTION_COST_KG: &str = "collection_cost_per_kg";
    pub const TREATMENT_COST_KG: &str = "treatment_cost_per_kg";
}

/// A named set of control covariates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub label: String,
    pub covariates: Vec<String>,
}

impl Default for CovariateSpec {
    fn default() -> Self {
        Self::baseline()
    }
}

impl CovariateSpec {
    pub fn baseline() -> Self {
        Self { label: "Baseline".into(), covariates: Vec::new() }
    }

    pub fn custom(label: impl Into<String>, covariates: Vec<String>) -> Self {
        Self { label: label.into(), covariates }
    }

    pub fn is_empty(&self) -> bool {
        self.covariates.is_empty()
    }

    /// The specification ladder from the bare comparison up to the full
    /// control set, as `(short key, spec)` pairs.
    pub fn ladder() -> Vec<(&'static str, CovariateSpec)> {
        use columns::*;
        let row = |key: &'static str, label: &str, cols: &[&str]| {
            (key, CovariateSpec::custom(label, cols.iter().map(|c| c.to_string()).collect()))
        };
        vec![
            row("baseline", "Baseline", &[]),
            row("sociodemo1", "Baseline and Socio-Demographic Controls 1", &[DENSITY, MOUNTAIN, TOURIST_BEDS]),
            row(
                "sociodemo2",
                "Baseline and Socio-Demographic Controls 2",
                &[DENSITY, AREA, HOUSEHOLD_MEMBERS, MOUNTAIN, TOURIST_BEDS],
            ),
            row(
                "sociodemo3",
                "Baseline and Socio-Demographic Controls 3",
                &[DENSITY, POPULATION, AREA, HOUSEHOLD_MEMBERS, MOUNTAIN, TOURIST_BEDS],
            ),
            row("economic1", "Baseline and Economic Controls 1", &[COLLECTION_COST_HAB, TREATMENT_COST_HAB]),
            row("economic2", "Baseline and Economic Controls 2", &[COLLECTION_COST_KG, TREATMENT_COST_KG]),
            row("economic3", "Baseline and Economic Controls 3", &[INCOME]),
            row("economic4", "Baseline and Economic Controls 4", &[INCOME, COLLECTION_COST_HAB, TREATMENT_COST_HAB]),
            row("economic5", "Baseline and Economic Controls 5", &[INCOME, COLLECTION_COST_KG, TREATMENT_COST_KG]),
            row(
                "complete",
                "Complete",
                &[
                    DENSITY,
                    POPULATION,
                    AREA,
                    HOUSEHOLD_MEMBERS,
                    MOUNTAIN,
                    TOURIST_BEDS,
                    INCOME,
                    COLLECTION_COST_HAB,
                    TREATMENT_COST_HAB,
                ],
            ),
        ]
    }

    /// Looks up a ladder row by its full label or short key (case-insensitive).
    pub fn from_label(label: &str) -> Option<CovariateSpec> {
        Self::ladder()
            .into_iter()
            .find(|(key, spec)| key.eq_ignore_ascii_case(label) || spec.label.eq_ignore_ascii_case(label))
            .map(|(_, spec)| spec)
    }
}
