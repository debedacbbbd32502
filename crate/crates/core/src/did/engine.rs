use std::collections::BTreeMap;

use crate::panel::{Cohort, Cohorts, Panel, Period};

use super::bootstrap::{bootstrap_standard_errors, normal_quantile};
use super::{
    Adjustment, DidError, EstimationConfig, EventStudy, EventTimeEstimate, GroupTimeATT, Inference, MissingCell,
    SummaryEstimate,
};

/// Weighted mean of one group in one period.
#[derive(Debug, Clone, Copy)]
pub(super) struct Cell {
    pub mean: f64,
    pub mass: f64,
    pub count: usize,
}

/// Per-call options shared by every cell of an estimation.
pub(super) struct CellContext<'w> {
    pub weights: Option<&'w [f64]>,
    pub covariates: Vec<usize>,
    pub adjust: bool,
    pub min_mass: f64,
}

/// Dense view of a panel and its cohorts, prepared once and reused across
/// many weighted estimations (one per focal unit in the local loop).
#[derive(Debug, Clone)]
pub struct DidEngine<'a> {
    pub(super) panel: &'a Panel,
    pub(super) n_periods: usize,
    first: Period,
    /// Outcomes, unit-major; NaN marks a missing value.
    y: Vec<f64>,
    cohort_periods: Vec<Period>,
    members: Vec<Vec<usize>>,
    pub(super) never: Vec<usize>,
}

impl<'a> DidEngine<'a> {
    pub fn new(panel: &'a Panel, cohorts: &Cohorts) -> Self {
        let n_periods = panel.n_periods();
        let mut y = vec![f64::NAN; panel.n_units() * n_periods];
        for (i, unit) in panel.units().iter().enumerate() {
            for t in 0..n_periods {
                if let Some(v) = unit.outcome(t) {
                    y[i * n_periods + t] = v;
                }
            }
        }
        let cohort_periods = cohorts.estimable_cohorts();
        let mut members = vec![Vec::new(); cohort_periods.len()];
        let mut never = Vec::new();
        for i in 0..panel.n_units() {
            if !cohorts.included(i) {
                continue;
            }
            match cohorts.cohort(i) {
                Cohort::Never => never.push(i),
                Cohort::Period(c) => {
                    let ci = cohort_periods.binary_search(&c).expect("estimable cohort");
                    members[ci].push(i);
                }
            }
        }
        Self { panel, n_periods, first: panel.first_period(), y, cohort_periods, members, never }
    }

    pub fn panel(&self) -> &Panel {
        self.panel
    }

    pub fn cohort_periods(&self) -> &[Period] {
        &self.cohort_periods
    }

    pub fn cohort_members(&self, cohort_index: usize) -> &[usize] {
        &self.members[cohort_index]
    }

    pub fn never_members(&self) -> &[usize] {
        &self.never
    }

    /// Units belonging to any estimable cohort.
    pub fn treated_members(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().flatten().copied()
    }

    #[inline]
    pub(super) fn y(&self, unit: usize, t: usize) -> Option<f64> {
        let v = self.y[unit * self.n_periods + t];
        (!v.is_nan()).then_some(v)
    }

    pub(super) fn period(&self, t: usize) -> Period {
        self.first + t as Period
    }

    pub fn mass(units: &[usize], weights: Option<&[f64]>) -> f64 {
        match weights {
            None => units.len() as f64,
            Some(w) => units.iter().map(|&i| w[i]).sum(),
        }
    }

    pub(super) fn cell(&self, units: &[usize], t: usize, weights: Option<&[f64]>) -> Option<Cell> {
        let (mut num, mut den, mut count) = (0.0, 0.0, 0);
        for &i in units {
            let w = weights.map_or(1.0, |w| w[i]);
            if w <= 0.0 {
                continue;
            }
            if let Some(v) = self.y(i, t) {
                num += w * v;
                den += w;
                count += 1;
            }
        }
        (den > 0.0).then(|| Cell { mean: num / den, mass: den, count })
    }

    /// Adds `sign * w_i (y_it - mean) / mass` for every contributing unit.
    pub(super) fn add_cell_influence(
        &self,
        units: &[usize],
        t: usize,
        cell: &Cell,
        weights: Option<&[f64]>,
        sign: f64,
        psi: &mut [f64],
    ) {
        for &i in units {
            let w = weights.map_or(1.0, |w| w[i]);
            if w <= 0.0 {
                continue;
            }
            if let Some(v) = self.y(i, t) {
                psi[i] += sign * w * (v - cell.mean) / cell.mass;
            }
        }
    }

    pub(super) fn resolve_covariates(&self, spec: &super::CovariateSpec) -> Result<Vec<usize>, DidError> {
        let names = self.panel.covariate_names();
        spec.covariates
            .iter()
            .map(|c| names.iter().position(|n| n == c).ok_or_else(|| DidError::UnknownCovariate(c.clone())))
            .collect()
    }

    fn base_offset(&self, ci: usize, t: usize) -> Result<usize, DidError> {
        let tc = (self.cohort_periods[ci] - self.first) as usize;
        let base = if t >= tc { tc.checked_sub(1) } else { t.checked_sub(1) };
        base.ok_or(DidError::NoBasePeriod { cohort: self.cohort_periods[ci], period: self.period(t) })
    }

    pub(super) fn att_cell(
        &self,
        ci: usize,
        t: usize,
        ctx: &CellContext<'_>,
        psi: Option<&mut [f64]>,
    ) -> Result<GroupTimeATT, DidError> {
        let cohort = self.cohort_periods[ci];
        let base = self.base_offset(ci, t)?;
        let mut fallback = false;
        if ctx.adjust {
            match self.or_cell(ci, t, base, &ctx.covariates, ctx.weights, ctx.min_mass, psi.is_some()) {
                Ok(or) => {
                    if let Some(psi) = psi {
                        for (dst, src) in psi.iter_mut().zip(or.influence.iter()) {
                            *dst += src;
                        }
                    }
                    return Ok(or.att);
                }
                Err(DidError::SingularDesign) => fallback = true,
                Err(e) => return Err(e),
            }
        }

        let members = &self.members[ci];
        let missing = |cell: &'static str| DidError::InsufficientData { cohort, period: self.period(t), cell };
        let ct = self.cell(members, t, ctx.weights).ok_or_else(|| missing("cohort, current period"))?;
        let cb = self.cell(members, base, ctx.weights).ok_or_else(|| missing("cohort, base period"))?;
        let nt = self.cell(&self.never, t, ctx.weights).ok_or_else(|| missing("never-treated, current period"))?;
        let nb = self.cell(&self.never, base, ctx.weights).ok_or_else(|| missing("never-treated, base period"))?;

        let treated_mass = ct.mass.min(cb.mass);
        let control_mass = nt.mass.min(nb.mass);
        if treated_mass < ctx.min_mass || control_mass < ctx.min_mass {
            return Err(DidError::InsufficientMass { cohort, period: self.period(t), treated_mass, control_mass });
        }

        if let Some(psi) = psi {
            self.add_cell_influence(members, t, &ct, ctx.weights, 1.0, psi);
            self.add_cell_influence(members, base, &cb, ctx.weights, -1.0, psi);
            self.add_cell_influence(&self.never, t, &nt, ctx.weights, -1.0, psi);
            self.add_cell_influence(&self.never, base, &nb, ctx.weights, 1.0, psi);
        }

        Ok(GroupTimeATT {
            cohort,
            period: self.period(t),
            event_time: self.period(t) - cohort,
            base_period: self.period(base),
            att: (ct.mean - cb.mean) - (nt.mean - nb.mean),
            n_treated: ct.count.min(cb.count),
            n_control: nt.count.min(nb.count),
            treated_mass,
            control_mass,
            adjusted: false,
            fallback_unadjusted: fallback,
        })
    }

    fn context<'w>(
        &self,
        config: &EstimationConfig,
        weights: Option<&'w [f64]>,
        min_mass: f64,
        warnings: &mut Vec<String>,
    ) -> Result<CellContext<'w>, DidError> {
        let covariates = self.resolve_covariates(&config.covariate_spec)?;
        let adjust = config.adjustment == Adjustment::OutcomeRegression && !covariates.is_empty();
        if config.adjustment == Adjustment::OutcomeRegression && covariates.is_empty() {
            warnings.push("outcome regression skipped: covariate specification is empty".into());
        }
        Ok(CellContext { weights, covariates, adjust, min_mass })
    }

    fn check_never(&self, weights: Option<&[f64]>) -> Result<(), DidError> {
        if Self::mass(&self.never, weights) > 0.0 {
            Ok(())
        } else {
            Err(DidError::NoNeverTreated)
        }
    }

    pub fn group_time_att(
        &self,
        cohort: Period,
        period: Period,
        config: &EstimationConfig,
        weights: Option<&[f64]>,
    ) -> Result<GroupTimeATT, DidError> {
        let ci = self.cohort_periods.binary_search(&cohort).map_err(|_| DidError::UnknownCohort(cohort))?;
        let t = self.panel.period_offset(period).ok_or(DidError::PeriodOutOfRange(period))?;
        self.check_never(weights)?;
        let ctx = self.context(config, weights, 0.0, &mut Vec::new())?;
        self.att_cell(ci, t, &ctx, None)
    }

    /// Event-study aggregation under optional unit weights.
    ///
    /// Cells failing `min_mass` (or lacking data) are left out of the
    /// aggregation and listed in `missing_cells`; cohorts with zero mass
    /// under `weights` are ignored entirely.
    pub fn event_study(
        &self,
        config: &EstimationConfig,
        weights: Option<&[f64]>,
        min_mass: f64,
    ) -> Result<EventStudy, DidError> {
        let mut warnings = Vec::new();
        let ctx = self.context(config, weights, min_mass, &mut warnings)?;
        self.check_never(weights)?;
        let want_if = config.bootstrap_reps > 0;
        let n_units = self.panel.n_units();

        struct Entry {
            mass: f64,
            att: f64,
            psi: Option<Vec<f64>>,
        }
        let mut by_event: BTreeMap<i64, Vec<Entry>> = BTreeMap::new();
        let mut group_time = Vec::new();
        let mut missing_cells = Vec::new();

        for ci in 0..self.cohort_periods.len() {
            let cohort_mass = Self::mass(&self.members[ci], weights);
            if cohort_mass <= 0.0 {
                continue;
            }
            for t in 1..self.n_periods {
                let mut psi = want_if.then(|| vec![0.0; n_units]);
                match self.att_cell(ci, t, &ctx, psi.as_deref_mut()) {
                    Ok(g) => {
                        if want_if && (g.n_treated < 2 || g.n_control < 2) {
                            return Err(DidError::DegenerateBootstrap { cohort: g.cohort, period: g.period });
                        }
                        if g.fallback_unadjusted {
                            warnings.push(format!(
                                "cohort {}, period {}: singular outcome-regression design, fell back to unadjusted",
                                g.cohort, g.period
                            ));
                        }
                        by_event.entry(g.event_time).or_default().push(Entry { mass: cohort_mass, att: g.att, psi });
                        group_time.push(g);
                    }
                    Err(e) if e.is_cell_level() => missing_cells.push(MissingCell {
                        cohort: self.cohort_periods[ci],
                        period: self.period(t),
                        reason: e.to_string(),
                    }),
                    Err(e) => return Err(e),
                }
            }
        }
        if by_event.is_empty() {
            return Err(DidError::NoEventTimes);
        }

        let mut estimates = Vec::with_capacity(by_event.len());
        let mut influences: Vec<Vec<f64>> = Vec::new();
        for (&e, entries) in &by_event {
            let total: f64 = entries.iter().map(|x| x.mass).sum();
            let att = entries.iter().map(|x| x.mass * x.att).sum::<f64>() / total;
            if want_if {
                let mut psi = vec![0.0; n_units];
                for x in entries {
                    let share = x.mass / total;
                    for (dst, src) in psi.iter_mut().zip(x.psi.as_ref().unwrap()) {
                        *dst += share * src;
                    }
                }
                influences.push(psi);
            }
            estimates.push(EventTimeEstimate {
                event_time: e,
                att,
                n_cohorts: entries.len(),
                mass: total,
                inference: None,
            });
        }

        let summarise = |pick: &dyn Fn(i64) -> bool, influences: &mut Vec<Vec<f64>>| -> Option<SummaryEstimate> {
            let idx: Vec<usize> = (0..estimates.len()).filter(|&k| pick(estimates[k].event_time)).collect();
            if idx.is_empty() {
                return None;
            }
            let k = idx.len() as f64;
            let att = idx.iter().map(|&j| estimates[j].att).sum::<f64>() / k;
            if want_if {
                let mut psi = vec![0.0; n_units];
                for &j in &idx {
                    for (dst, src) in psi.iter_mut().zip(&influences[j]) {
                        *dst += src / k;
                    }
                }
                influences.push(psi);
            }
            Some(SummaryEstimate { att, n_event_times: idx.len(), inference: None })
        };
        let mut pre_avg = summarise(&|e| e < 0, &mut influences);
        let mut post_avg = summarise(&|e| e >= 0, &mut influences);

        if want_if {
            let se = bootstrap_standard_errors(&influences, config.bootstrap_reps, config.seed);
            let q = normal_quantile(1.0 - (1.0 - config.confidence_level) / 2.0);
            let n_event = estimates.len();
            for (est, s) in estimates.iter_mut().zip(&se) {
                est.inference = Some(Inference::from_se(est.att, *s, q));
            }
            for (summary, s) in [&mut pre_avg, &mut post_avg].into_iter().flatten().zip(&se[n_event..]) {
                summary.inference = Some(Inference::from_se(summary.att, *s, q));
            }
        }

        Ok(EventStudy {
            estimates,
            pre_avg,
            post_avg,
            group_time,
            missing_cells,
            warnings,
            confidence_level: config.confidence_level,
            bootstrap_reps: config.bootstrap_reps,
        })
    }
}
