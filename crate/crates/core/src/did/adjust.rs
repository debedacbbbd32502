//! Outcome-regression adjustment of the comparison-group change.
//!
//! Among never-treated units the outcome change from the base period to `t`
//! is regressed on an intercept and base-period covariates. The fitted model
//! predicts the untreated change of each cohort unit, and the effect is the
//! mean gap between observed and predicted changes.

use serde::{Deserialize, Serialize};

use crate::linalg::NormalEquations;
use crate::panel::Period;

use super::engine::DidEngine;
use super::{CovariateSpec, DidError, GroupTimeATT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrAdjustment {
    pub cohort: Period,
    pub period: Period,
    pub base_period: Period,
    /// Mean predicted untreated change over the cohort's units.
    pub predicted_change: f64,
    /// Mean observed change over the cohort's units.
    pub treated_change: f64,
    /// Intercept first, then one slope per covariate.
    pub coefficients: Vec<f64>,
    pub n_treated: usize,
    pub n_control: usize,
}

pub(super) struct OrCell {
    pub att: GroupTimeATT,
    pub adjustment: OrAdjustment,
    pub influence: Vec<f64>,
}

struct Row {
    unit: usize,
    w: f64,
    x: Vec<f64>,
    dy: f64,
}

impl DidEngine<'_> {
    fn or_rows(&self, units: &[usize], t: usize, base: usize, cov: &[usize], weights: Option<&[f64]>) -> Vec<Row> {
        units
            .iter()
            .filter_map(|&i| {
                let w = weights.map_or(1.0, |w| w[i]);
                if w <= 0.0 {
                    return None;
                }
                let dy = self.y(i, t)? - self.y(i, base)?;
                let obs = self.panel.unit(i).observation(base)?;
                let mut x = Vec::with_capacity(cov.len() + 1);
                x.push(1.0);
                for &k in cov {
                    x.push(obs.covariates[k]?);
                }
                Some(Row { unit: i, w, x, dy })
            })
            .collect()
    }

    #[allow(clippy::too_many_arguments)]
    pub(super) fn or_cell(
        &self,
        ci: usize,
        t: usize,
        base: usize,
        cov: &[usize],
        weights: Option<&[f64]>,
        min_mass: f64,
        want_influence: bool,
    ) -> Result<OrCell, DidError> {
        let cohort = self.cohort_periods()[ci];
        let period = self.period(t);
        let treated = self.or_rows(self.cohort_members(ci), t, base, cov, weights);
        let controls = self.or_rows(&self.never, t, base, cov, weights);
        if treated.is_empty() {
            return Err(DidError::InsufficientData { cohort, period, cell: "cohort, covariate-complete changes" });
        }
        if controls.is_empty() {
            return Err(DidError::InsufficientData {
                cohort,
                period,
                cell: "never-treated, covariate-complete changes",
            });
        }
        let treated_mass: f64 = treated.iter().map(|r| r.w).sum();
        let control_mass: f64 = controls.iter().map(|r| r.w).sum();
        if treated_mass < min_mass || control_mass < min_mass {
            return Err(DidError::InsufficientMass { cohort, period, treated_mass, control_mass });
        }

        let p = cov.len() + 1;
        let mut ne = NormalEquations::new(p);
        for r in &controls {
            ne.add(&r.x, r.dy, r.w);
        }
        let fit = ne.solve().map_err(|_| DidError::SingularDesign)?;

        let mut xbar = vec![0.0; p];
        let (mut treated_change, mut predicted_change) = (0.0, 0.0);
        for r in &treated {
            let share = r.w / treated_mass;
            treated_change += share * r.dy;
            predicted_change += share * fit.predict(&r.x);
            for (a, x) in xbar.iter_mut().zip(&r.x) {
                *a += share * x;
            }
        }
        let att = treated_change - predicted_change;

        let mut influence = Vec::new();
        if want_influence {
            influence = vec![0.0; self.panel.n_units()];
            for r in &treated {
                influence[r.unit] += r.w * (r.dy - fit.predict(&r.x) - att) / treated_mass;
            }
            // -xbar' (X'WX)^{-1} x_j w_j e_j
            let lever: Vec<f64> = (0..p).map(|b| (0..p).map(|a| xbar[a] * fit.xtwx_inv[(a, b)]).sum()).collect();
            for r in &controls {
                let resid = r.dy - fit.predict(&r.x);
                let l: f64 = lever.iter().zip(&r.x).map(|(a, b)| a * b).sum();
                influence[r.unit] -= l * r.w * resid;
            }
        }

        let adjustment = OrAdjustment {
            cohort,
            period,
            base_period: self.period(base),
            predicted_change,
            treated_change,
            coefficients: fit.coef.iter().copied().collect(),
            n_treated: treated.len(),
            n_control: controls.len(),
        };
        Ok(OrCell {
            att: GroupTimeATT {
                cohort,
                period,
                event_time: period - cohort,
                base_period: self.period(base),
                att,
                n_treated: treated.len(),
                n_control: controls.len(),
                treated_mass,
                control_mass,
                adjusted: true,
                fallback_unadjusted: false,
            },
            adjustment,
            influence,
        })
    }

    pub fn or_adjust(
        &self,
        cohort: Period,
        period: Period,
        spec: &CovariateSpec,
        weights: Option<&[f64]>,
    ) -> Result<OrAdjustment, DidError> {
        let ci = self.cohort_periods().binary_search(&cohort).map_err(|_| DidError::UnknownCohort(cohort))?;
        let t = self.panel.period_offset(period).ok_or(DidError::PeriodOutOfRange(period))?;
        let tc = self.panel.period_offset(cohort).expect("cohort inside panel");
        let base = if t >= tc { tc - 1 } else { t.checked_sub(1).ok_or(DidError::NoBasePeriod { cohort, period })? };
        if Self::mass(&self.never, weights) <= 0.0 {
            return Err(DidError::NoNeverTreated);
        }
        let cov = self.resolve_covariates(spec)?;
        Ok(self.or_cell(ci, t, base, &cov, weights, 0.0, false)?.adjustment)
    }
}
