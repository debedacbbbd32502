//! Planar distances and spatial decay kernels.
//!
//! Two kernels are provided:
//!
//! * restricted linear: `w = 1 - d/d_max` while that ratio stays above 0.5,
//!   zero otherwise (support ends at `d_max / 2`);
//! * Gaussian: `w = exp(-(d/h)^2)`, positive at every distance.

mod bandwidth;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{Location, Panel};

pub use bandwidth::{default_bandwidth_grid, select_bandwidth, unit_cross_section, BandwidthSelection, CrossSection};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("d_max must be positive, got {0}")]
    NonpositiveDmax(f64),
    #[error("bandwidth must be positive, got {0}")]
    NonpositiveBandwidth(f64),
    #[error("units without coordinates: {}", .0.join(", "))]
    MissingCoordinates(Vec<String>),
    #[error("bandwidth grid is empty")]
    EmptyGrid,
    #[error("every bandwidth candidate produced a singular local design")]
    AllFitsFailed,
    #[error("covariate `{0}` is not present in the panel")]
    UnknownCovariate(String),
    #[error("focal unit index {0} out of range")]
    UnknownUnit(usize),
}

fn locations(panel: &Panel) -> Result<Vec<Location>, KernelError> {
    panel.locations().map_err(|e| match e {
        crate::panel::PanelError::MissingCoordinates(units) => KernelError::MissingCoordinates(units),
        other => unreachable!("{other}"),
    })
}

/// Symmetric matrix of Euclidean distances in kilometres.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }
}

pub fn distance_matrix(panel: &Panel) -> Result<DistanceMatrix, KernelError> {
    let locs = locations(panel)?;
    let n = locs.len();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = locs[i].distance(&locs[j]);
            data[i * n + j] = d;
            data[j * n + i] = d;
        }
    }
    Ok(DistanceMatrix { n, data })
}

/// Distances from `focal` to every location, without materialising the full matrix.
pub fn distances_from(locations: &[Location], focal: usize) -> Vec<f64> {
    let c = locations[focal];
    locations.iter().map(|l| c.distance(l)).collect()
}

/// Largest distance between any two locations.
pub fn max_pairwise_distance(locations: &[Location]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in locations.iter().enumerate() {
        for b in &locations[i + 1..] {
            best = best.max(a.distance(b));
        }
    }
    best
}

#[inline]
pub fn linear_weight(d: f64, d_max: f64) -> f64 {
    let raw = 1.0 - d / d_max;
    if raw > 0.5 {
        raw
    } else {
        0.0
    }
}

#[inline]
pub fn gaussian_weight(d: f64, h: f64) -> f64 {
    let r = d / h;
    (-r * r).exp()
}

pub fn linear_kernel(distances: &[f64], d_max: f64) -> Result<Vec<f64>, KernelError> {
    if !(d_max > 0.0 && d_max.is_finite()) {
        return Err(KernelError::NonpositiveDmax(d_max));
    }
    Ok(distances.iter().map(|&d| linear_weight(d, d_max)).collect())
}

/// Gaussian weights; values underflow to 0.0 once `(d/h)^2` exceeds about 745.
pub fn gaussian_kernel(distances: &[f64], h: f64) -> Result<Vec<f64>, KernelError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(KernelError::NonpositiveBandwidth(h));
    }
    Ok(distances.iter().map(|&d| gaussian_weight(d, h)).collect())
}

/// A kernel with its resolved scale parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kernel", rename_all = "kebab-case")]
pub enum KernelSpec {
    LinearRestricted { d_max: f64 },
    Gaussian { h: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<(), KernelError> {
        match *self {
            KernelSpec::LinearRestricted { d_max } if !(d_max > 0.0 && d_max.is_finite()) => {
                Err(KernelError::NonpositiveDmax(d_max))
            }
            KernelSpec::Gaussian { h } if !(h > 0.0 && h.is_finite()) => Err(KernelError::NonpositiveBandwidth(h)),
            _ => Ok(()),
        }
    }

    pub fn weight(&self, d: f64) -> f64 {
        match *self {
            KernelSpec::LinearRestricted { d_max } => linear_weight(d, d_max),
            KernelSpec::Gaussian { h } => gaussian_weight(d, h),
        }
    }

    pub fn weights(&self, distances: &[f64]) -> Result<Vec<f64>, KernelError> {
        match *self {
            KernelSpec::LinearRestricted { d_max } => linear_kernel(distances, d_max),
            KernelSpec::Gaussian { h } => gaussian_kernel(distances, h),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::LinearRestricted { .. } => "linear",
            KernelSpec::Gaussian { .. } => "gaussian",
        }
    }
}

/// Kernel weights of every unit around one focal unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    pub focal_unit: String,
    pub unit_ids: Vec<String>,
    pub weights: Vec<f64>,
    pub kernel: KernelSpec,
}

pub fn weight_matrix(panel: &Panel, focal: usize, kernel: KernelSpec) -> Result<WeightMatrix, KernelError> {
    if focal >= panel.n_units() {
        return Err(KernelError::UnknownUnit(focal));
    }
    let locs = locations(panel)?;
    let weights = kernel.weights(&distances_from(&locs, focal))?;
    Ok(WeightMatrix {
        focal_unit: panel.unit(focal).unit_id.clone(),
        unit_ids: panel.units().iter().map(|u| u.unit_id.clone()).collect(),
        weights,
        kernel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{Observation, PanelBuilder};

    fn panel_at(points: &[(f64, f64)]) -> Panel {
        let mut b = PanelBuilder::new(vec![]);
        for (k, &(x, y)) in points.iter().enumerate() {
            b.push(&format!("u{k}"), Some(Location::new(x, y)), 2010, Observation::new(Some(0.0), false)).unwrap();
        }
        b.build().unwrap()
    }

    #[test]
    fn three_four_five() {
        let d = distance_matrix(&panel_at(&[(0.0, 0.0), (3.0, 4.0)])).unwrap();
        assert_eq!(d.get(0, 1), 5.0);
        assert_eq!(d.get(1, 0), 5.0);
        assert_eq!(d.get(1, 1), 0.0);
    }

    #[test]
    fn collinear_distances_add_up() {
        let d = distance_matrix(&panel_at(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)])).unwrap();
        assert_eq!(d.get(0, 2), d.get(0, 1) + d.get(1, 2));
        assert_eq!(d.max(), 2.0);
    }

    #[test]
    fn missing_coordinates_listed() {
        let mut b = PanelBuilder::new(vec![]);
        b.push("a", Some(Location::new(0.0, 0.0)), 2010, Observation::new(None, false)).unwrap();
        b.push("b", None, 2010, Observation::new(None, false)).unwrap();
        let err = distance_matrix(&b.build().unwrap()).unwrap_err();
        assert_eq!(err, KernelError::MissingCoordinates(vec!["b".into()]));
    }

    #[test]
    fn linear_kernel_values() {
        let w = linear_kernel(&[0.0, 25.0, 75.0], 100.0).unwrap();
        assert_eq!(w, vec![1.0, 0.75, 0.0]);
        assert!(matches!(linear_kernel(&[1.0], 0.0), Err(KernelError::NonpositiveDmax(_))));
    }

    #[test]
    fn gaussian_kernel_values() {
        let w = gaussian_kernel(&[0.0, 10.0, 20.0], 10.0).unwrap();
        assert_eq!(w[0], 1.0);
        assert!((w[1] - 0.36787944117144233).abs() < 1e-15);
        assert!((w[2] - 0.018_315_638_888_734_18).abs() < 1e-15);
        assert!(matches!(gaussian_kernel(&[1.0], -1.0), Err(KernelError::NonpositiveBandwidth(_))));
    }

    #[test]
    fn focal_weight_is_one() {
        let p = panel_at(&[(0.0, 0.0), (1.0, 1.0), (5.0, 5.0)]);
        for kernel in [KernelSpec::LinearRestricted { d_max: 8.0 }, KernelSpec::Gaussian { h: 2.0 }] {
            let wm = weight_matrix(&p, 1, kernel).unwrap();
            assert_eq!(wm.weights[1], 1.0);
            assert_eq!(wm.focal_unit, "u1");
        }
    }
}
