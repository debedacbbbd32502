//! Synthetic panels with planted treatment effects.
//!
//! Outcomes follow
//! `y_it = baseline + a_i + g_t + sum_k b_k x_kit + tau(region_i, t - c_i) * D_it + e_it`
//! with unit effects `a_i`, period effects `g_t`, optional covariates, a
//! region-specific effect profile by event time, and Gaussian noise. Units are
//! placed uniformly inside rectangular regions, adopt treatment according to
//! per-period hazards, and may revert.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::local::{LocalATTField, LocalEntry, LocalStatus};
use crate::panel::{Location, Observation, Panel, PanelBuilder, Period};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Region {
    pub fn new(name: &str, x: (f64, f64), y: (f64, f64)) -> Self {
        Self { name: name.into(), x_min: x.0, x_max: x.1, y_min: y.0, y_max: y.1 }
    }

    fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }
}

/// Treatment effect as a function of event time `e >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EffectProfile {
    Constant {
        value: f64,
    },
    /// `intercept + slope * e`.
    Linear {
        intercept: f64,
        slope: f64,
    },
    /// Value per event time; the last entry extends beyond the table.
    Table {
        values: Vec<f64>,
    },
}

impl EffectProfile {
    pub fn at(&self, e: i64) -> f64 {
        if e < 0 {
            return 0.0;
        }
        match self {
            EffectProfile::Constant { value } => *value,
            EffectProfile::Linear { intercept, slope } => intercept + slope * e as f64,
            EffectProfile::Table { values } => values.get(e as usize).or(values.last()).copied().unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateModel {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    /// Contribution to the outcome per unit of the covariate.
    pub loading: f64,
    /// Share of the covariate variance that is a fixed unit component.
    #[serde(default = "default_persistence")]
    pub persistence: f64,
}

fn default_persistence() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_units: usize,
    pub n_periods: usize,
    pub first_period: Period,
    pub regions: Vec<Region>,
    /// Probability of first treatment in each period given no treatment
    /// before, indexed by period offset. A positive first entry produces
    /// always-treated units.
    pub hazards: Vec<f64>,
    /// Region-specific hazards replacing `hazards`.
    pub region_hazards: BTreeMap<String, Vec<f64>>,
    /// Ever-treated probability cap; hazards are scaled down to respect it.
    pub max_adoption: f64,
    pub effects: BTreeMap<String, EffectProfile>,
    pub default_effect: EffectProfile,
    pub baseline: f64,
    pub fe_unit_sd: f64,
    pub fe_time_sd: f64,
    pub noise_sd: f64,
    pub covariates: Vec<CovariateModel>,
    /// Per post-adoption period probability that treatment switches off for good.
    pub reversal_prob: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let n_periods = 10;
        Self {
            n_units: 500,
            n_periods,
            first_period: 2010,
            regions: vec![Region::new("all", (0.0, 100.0), (0.0, 100.0))],
            hazards: std::iter::once(0.0).chain(std::iter::repeat_n(0.07, n_periods - 1)).collect(),
            region_hazards: BTreeMap::new(),
            max_adoption: 0.8,
            effects: BTreeMap::new(),
            default_effect: EffectProfile::Constant { value: 0.0 },
            baseline: 0.5,
            fe_unit_sd: 0.1,
            fe_time_sd: 0.02,
            noise_sd: 0.05,
            covariates: Vec::new(),
            reversal_prob: 0.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    /// Two 100 × 100 km blocks, "north" and "south", 250 km apart.
    ///
    /// The gap exceeds half the largest pairwise distance, so the restricted
    /// linear kernel at its default `d_max` never mixes the two blocks.
    pub fn two_region(n_units: usize, tau_north: f64, tau_south: f64, seed: u64) -> Self {
        let mut effects = BTreeMap::new();
        effects.insert("north".to_string(), EffectProfile::Constant { value: tau_north });
        effects.insert("south".to_string(), EffectProfile::Constant { value: tau_south });
        Self {
            n_units,
            regions: vec![
                Region::new("north", (0.0, 100.0), (350.0, 450.0)),
                Region::new("south", (0.0, 100.0), (0.0, 100.0)),
            ],
            effects,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.n_periods < 3 {
            return bad(format!("n_periods = {} < 3", self.n_periods));
        }
        if self.n_units == 0 {
            return bad("n_units = 0".into());
        }
        if self.regions.is_empty() {
            return bad("no regions".into());
        }
        for r in &self.regions {
            if !(r.area() > 0.0 && r.area().is_finite()) {
                return bad(format!("region `{}` has nonpositive area", r.name));
            }
        }
        let sds = [self.fe_unit_sd, self.fe_time_sd, self.noise_sd];
        if sds.iter().chain(self.covariates.iter().map(|c| &c.sd)).any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad("standard deviations must be finite and >= 0".into());
        }
        for hz in std::iter::once(&self.hazards).chain(self.region_hazards.values()) {
            if hz.len() != self.n_periods {
                return bad(format!("hazard vector has {} entries for {} periods", hz.len(), self.n_periods));
            }
            if hz.iter().any(|h| !(0.0..=1.0).contains(h)) {
                return bad("hazards must lie in [0, 1]".into());
            }
        }
        for name in self.region_hazards.keys().chain(self.effects.keys()) {
            if !self.regions.iter().any(|r| &r.name == name) {
                return bad(format!("unknown region `{name}`"));
            }
        }
        if !(0.0..=1.0).contains(&self.reversal_prob) {
            return bad("reversal_prob must lie in [0, 1]".into());
        }
        if !(self.max_adoption > 0.0 && self.max_adoption <= 1.0) {
            return bad("max_adoption must lie in (0, 1]".into());
        }
        if self.covariates.iter().any(|c| !(0.0..=1.0).contains(&c.persistence)) {
            return bad("covariate persistence must lie in [0, 1]".into());
        }
        Ok(())
    }

    fn effect(&self, region: &str) -> &EffectProfile {
        self.effects.get(region).unwrap_or(&self.default_effect)
    }

    fn hazards_for(&self, region: &str) -> &[f64] {
        self.region_hazards.get(region).unwrap_or(&self.hazards)
    }

    /// Hazards after applying the ever-treated cap.
    pub fn effective_hazards(&self, region: &str) -> Vec<f64> {
        cap_hazards(self.hazards_for(region), self.max_adoption)
    }
}

fn ever_treated(h: &[f64], scale: f64) -> f64 {
    1.0 - h.iter().map(|v| 1.0 - (v * scale).min(1.0)).product::<f64>()
}

fn cap_hazards(h: &[f64], cap: f64) -> Vec<f64> {
    if ever_treated(h, 1.0) <= cap {
        return h.to_vec();
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if ever_treated(h, mid) > cap {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    h.iter().map(|v| v * lo).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitTruth {
    pub unit_id: String,
    pub region: String,
    pub cohort: Option<Period>,
    pub reversed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub units: Vec<UnitTruth>,
    /// Planted effect per region at event times `0..n_periods - 1`.
    pub effects: BTreeMap<String, Vec<f64>>,
    /// Sample-level target of the event-study aggregation, with reversing
    /// and always-treated units excluded. Zero at negative event times.
    pub att_by_e: BTreeMap<i64, f64>,
}

impl GroundTruth {
    pub fn region_of(&self, unit: usize) -> &str {
        &self.units[unit].region
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn simulate_panel(config: &SimConfig) -> Result<(Panel, GroundTruth), SimError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_t = config.n_periods;
    let time_fe: Vec<f64> = (0..n_t).map(|_| config.fe_time_sd * normal(&mut rng)).collect();
    let total_area: f64 = config.regions.iter().map(Region::area).sum();
    let hazards: BTreeMap<&str, Vec<f64>> =
        config.regions.iter().map(|r| (r.name.as_str(), config.effective_hazards(&r.name))).collect();
    let names: Vec<String> = config.covariates.iter().map(|c| c.name.clone()).collect();
    let mut builder = PanelBuilder::new(names);
    let mut truth_units = Vec::with_capacity(config.n_units);
    let width = config.n_units.to_string().len().max(4);

    for i in 0..config.n_units {
        let unit_id = format!("u{:0width$}", i, width = width);
        let mut pick = rng.random::<f64>() * total_area;
        let region = config
            .regions
            .iter()
            .find(|r| {
                pick -= r.area();
                pick < 0.0
            })
            .unwrap_or(config.regions.last().unwrap());
        let loc =
            Location::new(rng.random_range(region.x_min..region.x_max), rng.random_range(region.y_min..region.y_max));
        let unit_fe = config.fe_unit_sd * normal(&mut rng);

        let hz = &hazards[region.name.as_str()];
        let cohort = (0..n_t).find(|&t| rng.random::<f64>() < hz[t]);
        let mut treated = vec![false; n_t];
        let mut reversed = false;
        if let Some(c) = cohort {
            for (t, d) in treated.iter_mut().enumerate().skip(c) {
                if t > c && !reversed && rng.random::<f64>() < config.reversal_prob {
                    reversed = true;
                }
                *d = !reversed;
            }
        }

        let unit_component: Vec<f64> = config.covariates.iter().map(|_| normal(&mut rng)).collect();
        let effect = config.effect(&region.name);
        for t in 0..n_t {
            let mut y = config.baseline + unit_fe + time_fe[t];
            let covs: Vec<Option<f64>> = config
                .covariates
                .iter()
                .zip(&unit_component)
                .map(|(m, u)| {
                    let z = m.persistence.sqrt() * u + (1.0 - m.persistence).sqrt() * normal(&mut rng);
                    let x = m.mean + m.sd * z;
                    y += m.loading * x;
                    Some(x)
                })
                .collect();
            if treated[t] {
                y += effect.at((t - cohort.unwrap()) as i64);
            }
            y += config.noise_sd * normal(&mut rng);
            let period = config.first_period + t as Period;
            let obs = Observation { outcome: Some(y), treated: treated[t], covariates: covs };
            builder.push(&unit_id, Some(loc), period, obs).expect("generated records are well formed");
        }
        truth_units.push(UnitTruth {
            unit_id,
            region: region.name.clone(),
            cohort: cohort.map(|c| config.first_period + c as Period),
            reversed,
        });
    }

    let panel = builder.build().expect("nonempty panel");
    let effects = config
        .regions
        .iter()
        .map(|r| (r.name.clone(), (0..n_t as i64).map(|e| config.effect(&r.name).at(e)).collect()))
        .collect();
    let att_by_e = sample_truth(config, &truth_units);
    Ok((panel, GroundTruth { seed: config.seed, units: truth_units, effects, att_by_e }))
}

fn sample_truth(config: &SimConfig, units: &[UnitTruth]) -> BTreeMap<i64, f64> {
    let first = config.first_period;
    let last = first + config.n_periods as Period - 1;
    let eligible: Vec<(&UnitTruth, Period)> =
        units.iter().filter(|u| !u.reversed).filter_map(|u| u.cohort.filter(|&c| c > first).map(|c| (u, c))).collect();
    let mut out = BTreeMap::new();
    for e in -(config.n_periods as i64 - 2)..=(config.n_periods as i64 - 2) {
        let contributing: Vec<f64> = eligible
            .iter()
            .filter(|(_, c)| {
                let t = c + e;
                if e >= 0 {
                    t <= last
                } else {
                    t > first
                }
            })
            .map(|(u, _)| config.effect(&u.region).at(e))
            .collect();
        if !contributing.is_empty() {
            out.insert(e, contributing.iter().sum::<f64>() / contributing.len() as f64);
        }
    }
    out
}

/// Planted post-treatment trajectory families for clustering experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryFamilies {
    pub units_per_family: usize,
    /// Event times `0..n_nodes`.
    pub n_nodes: usize,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for TrajectoryFamilies {
    fn default() -> Self {
        Self { units_per_family: 60, n_nodes: 9, noise_sd: 0.004, seed: 0 }
    }
}

impl TrajectoryFamilies {
    /// Mean curve of family `k`: flat low, moderate early hump, strong early hump.
    pub fn family_curve(k: usize, e: f64) -> f64 {
        let hump = 0.4 + 0.6 * (-((e - 2.0) / 2.0).powi(2)).exp();
        match k {
            0 => 0.01,
            1 => 0.04 * hump,
            _ => 0.10 * hump,
        }
    }

    /// A field of ok entries whose post-treatment trajectories follow the
    /// three families plus Gaussian noise; families occupy northern, central
    /// and southern bands. Returns the field and the planted labels.
    pub fn generate(&self) -> (LocalATTField, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let event_times: Vec<i64> = (0..self.n_nodes as i64).collect();
        let mut entries = Vec::new();
        let mut labels = Vec::new();
        for k in 0..3 {
            for j in 0..self.units_per_family {
                let att_by_e: Vec<Option<f64>> = event_times
                    .iter()
                    .map(|&e| Some(Self::family_curve(k, e as f64) + self.noise_sd * normal(&mut rng)))
                    .collect();
                let post = att_by_e.iter().flatten().sum::<f64>() / att_by_e.len() as f64;
                let y_band = 200.0 - 100.0 * k as f64;
                entries.push(LocalEntry {
                    unit_id: format!("f{k}_{j:04}"),
                    location: Location::new(rng.random_range(0.0..300.0), rng.random_range(y_band..y_band + 100.0)),
                    status: LocalStatus::Ok,
                    post_avg: Some(post),
                    pre_avg: Some(0.0),
                    att_by_e,
                    effective_n_treated: f64::NAN,
                    effective_n_control: f64::NAN,
                });
                labels.push(k);
            }
        }
        (LocalATTField { event_times, kernel: None, min_mass: 0.0, entries }, labels)
    }
}
