//! Leave-one-out cross-validated bandwidth for the Gaussian kernel.
//!
//! Each unit is collapsed to its time-averaged outcome and covariates. For a
//! candidate `h`, every unit's outcome is predicted from a geographically
//! weighted least-squares fit over all *other* units, and the candidate is
//! scored by the sum of squared prediction errors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::did::CovariateSpec;
use crate::linalg::NormalEquations;
use crate::panel::{Location, Panel};

use super::{gaussian_weight, locations, KernelError};

/// Scores within this fraction of the outcome's total sum of squares count as ties.
const TIE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSelection {
    pub h: f64,
    pub grid: Vec<f64>,
    /// CV score per grid value; `None` where some local design was singular.
    pub scores: Vec<Option<f64>>,
    pub n_units_used: usize,
}

/// One row per unit with a complete time average.
#[derive(Debug, Clone)]
pub struct CrossSection {
    pub locations: Vec<Location>,
    pub outcome: Vec<f64>,
    /// Regressor rows, intercept first.
    pub design: Vec<Vec<f64>>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn unit_cross_section(panel: &Panel, spec: &CovariateSpec) -> Result<CrossSection, KernelError> {
    let locs = locations(panel)?;
    let idx: Vec<usize> = spec
        .covariates
        .iter()
        .map(|c| {
            panel.covariate_names().iter().position(|n| n == c).ok_or_else(|| KernelError::UnknownCovariate(c.clone()))
        })
        .collect::<Result<_, _>>()?;

    let mut out = CrossSection { locations: Vec::new(), outcome: Vec::new(), design: Vec::new() };
    for (unit, loc) in panel.units().iter().zip(locs) {
        let obs = || unit.observations().iter().flatten();
        let Some(y) = mean(obs().filter_map(|o| o.outcome)) else { continue };
        let mut row = vec![1.0];
        for &k in &idx {
            match mean(obs().filter_map(|o| o.covariates[k])) {
                Some(v) => row.push(v),
                None => break,
            }
        }
        if row.len() == idx.len() + 1 {
            out.locations.push(loc);
            out.outcome.push(y);
            out.design.push(row);
        }
    }
    Ok(out)
}

fn loo_score(cs: &CrossSection, h: f64) -> Option<f64> {
    let n = cs.outcome.len();
    let p = cs.design.first().map_or(1, Vec::len);
    let residuals: Option<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut ne = NormalEquations::new(p);
            for j in 0..n {
                if j != i {
                    let w = gaussian_weight(cs.locations[i].distance(&cs.locations[j]), h);
                    ne.add(&cs.design[j], cs.outcome[j], w);
                }
            }
            let fit = ne.solve().ok()?;
            Some(cs.outcome[i] - fit.predict(&cs.design[i]))
        })
        .collect();
    residuals.map(|r| r.iter().map(|e| e * e).sum())
}

/// Picks the grid value with the smallest leave-one-out error, preferring
/// larger bandwidths among ties.
pub fn select_bandwidth(panel: &Panel, spec: &CovariateSpec, grid: &[f64]) -> Result<BandwidthSelection, KernelError> {
    if grid.is_empty() {
        return Err(KernelError::EmptyGrid);
    }
    if let Some(&bad) = grid.iter().find(|h| !(**h > 0.0 && h.is_finite())) {
        return Err(KernelError::NonpositiveBandwidth(bad));
    }
    let cs = unit_cross_section(panel, spec)?;
    if grid.len() == 1 {
        return Ok(BandwidthSelection {
            h: grid[0],
            grid: grid.to_vec(),
            scores: vec![loo_score(&cs, grid[0])],
            n_units_used: cs.outcome.len(),
        });
    }
    let scores: Vec<Option<f64>> = grid.iter().map(|&h| loo_score(&cs, h)).collect();
    let best = scores.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(KernelError::AllFitsFailed);
    }
    let ybar = cs.outcome.iter().sum::<f64>() / cs.outcome.len() as f64;
    let tss: f64 = cs.outcome.iter().map(|y| (y - ybar).powi(2)).sum();
    let cutoff = best + TIE_TOL * tss;
    let h = grid
        .iter()
        .zip(&scores)
        .filter(|(_, s)| s.is_some_and(|s| s <= cutoff))
        .map(|(h, _)| *h)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(BandwidthSelection { h, grid: grid.to_vec(), scores, n_units_used: cs.outcome.len() })
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// 16 log-spaced bandwidths between the 1st and 99th percentiles of the
/// pairwise distances. Above 2,000 units the percentiles come from an evenly
/// strided subset of units.
pub fn default_bandwidth_grid(locations: &[Location]) -> Vec<f64> {
    const N_GRID: usize = 16;
    let stride = locations.len().div_ceil(2000).max(1);
    let sample: Vec<&Location> = locations.iter().step_by(stride).collect();
    let mut d: Vec<f64> = Vec::with_capacity(sample.len() * sample.len() / 2);
    for (i, a) in sample.iter().enumerate() {
        for b in &sample[i + 1..] {
            let v = a.distance(b);
            if v > 0.0 {
                d.push(v);
            }
        }
    }
    if d.is_empty() {
        return vec![1.0];
    }
    d.sort_by(f64::total_cmp);
    let (lo, hi) = (percentile(&d, 0.01), percentile(&d, 0.99));
    if hi <= lo {
        return vec![lo];
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..N_GRID).map(|k| (llo + (lhi - llo) * k as f64 / (N_GRID - 1) as f64).exp()).collect()
}
