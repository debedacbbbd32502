//! Functional representation and clustering of post-treatment trajectories.
//!
//! Each unit's local event-study estimates at the post-treatment event times
//! are projected onto a B-spline basis by least squares. Clustering works on
//! the basis coefficients mapped through the square root of the basis Gram
//! matrix, so Euclidean geometry there is the L2 geometry of the curves.

mod ari;
mod bspline;
mod funfem;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::NormalEquations;
use crate::local::LocalATTField;
use crate::panel::Location;

pub use ari::adjusted_rand_index;
pub use bspline::BSplineBasis;
pub use funfem::{funfem_cluster, n_params, select_k, ClusterConfig, ClusterModel, KCriterion, KSelection};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FdaError {
    #[error("n_basis = {n_basis} exceeds the {n_nodes} available nodes")]
    BasisTooRich { n_basis: usize, n_nodes: usize },
    #[error("need at least 2 post-treatment event times, found {0}")]
    TooFewNodes(usize),
    #[error("no unit has a complete post-treatment trajectory")]
    NoCurves,
    #[error("basis design is singular at the node grid")]
    SingularBasis,
    #[error("invalid clustering request: {0}")]
    InvalidConfig(String),
    #[error("{n_units} curves cannot form {k} clusters")]
    TooFewCurves { n_units: usize, k: usize },
    #[error("cluster {cluster} lost its responsibility mass after reinitialisation")]
    EmptyClusterCollapse { cluster: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BasisConfig {
    /// Defaults to `min(6, n_nodes)`.
    pub n_basis: Option<usize>,
    /// Polynomial order; defaults to cubic, reduced to `n_basis` when smaller.
    pub order: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedUnit {
    pub unit_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSet {
    pub unit_ids: Vec<String>,
    pub locations: Vec<Location>,
    /// Event times at which every curve was observed.
    pub node_grid: Vec<f64>,
    pub raw_values: Vec<Vec<f64>>,
    pub basis: BSplineBasis,
    /// One vector of length `basis.n_basis` per unit.
    pub coefficients: Vec<Vec<f64>>,
    pub excluded: Vec<ExcludedUnit>,
}

impl CurveSet {
    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// `None` outside the node range.
    pub fn evaluate(&self, unit: usize, t: f64) -> Option<f64> {
        evaluate_coefficients(&self.basis, &self.coefficients[unit], t)
    }

    /// Fitted values at the nodes.
    pub fn fitted(&self, unit: usize) -> Vec<f64> {
        self.node_grid.iter().map(|&t| self.evaluate(unit, t).unwrap()).collect()
    }

    pub fn residuals(&self, unit: usize) -> Vec<f64> {
        self.raw_values[unit].iter().zip(self.fitted(unit)).map(|(y, f)| y - f).collect()
    }

    /// A curve set on the same basis with new raw values, projected afresh.
    pub fn refit(
        &self,
        unit_ids: Vec<String>,
        locations: Vec<Location>,
        raw_values: Vec<Vec<f64>>,
    ) -> Result<Self, FdaError> {
        let coefficients = project(&self.basis, &self.node_grid, &raw_values)?;
        Ok(Self {
            unit_ids,
            locations,
            node_grid: self.node_grid.clone(),
            raw_values,
            basis: self.basis.clone(),
            coefficients,
            excluded: Vec::new(),
        })
    }
}

pub fn evaluate_coefficients(basis: &BSplineBasis, coef: &[f64], t: f64) -> Option<f64> {
    let lo = basis.lower();
    let hi = basis.upper();
    (t >= lo && t <= hi).then(|| basis.eval(t).iter().zip(coef).map(|(b, c)| b * c).sum())
}

fn project(basis: &BSplineBasis, nodes: &[f64], raw: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, FdaError> {
    let p = basis.n_basis;
    let rows: Vec<Vec<f64>> = nodes.iter().map(|&t| basis.eval(t)).collect();
    let mut ne = NormalEquations::new(p);
    for r in &rows {
        ne.add(r, 0.0, 1.0);
    }
    let fit = ne.solve().map_err(|_| FdaError::SingularBasis)?;
    let design = DMatrix::from_fn(nodes.len(), p, |i, j| rows[i][j]);
    let hat = &fit.xtwx_inv * design.transpose();
    Ok(raw.iter().map(|y| (&hat * DVector::from_column_slice(y)).iter().copied().collect()).collect())
}

/// Least-squares B-spline fit of every complete post-treatment trajectory.
pub fn smooth_curves(field: &LocalATTField, config: BasisConfig) -> Result<CurveSet, FdaError> {
    let post: Vec<(usize, i64)> = field.event_times.iter().copied().enumerate().filter(|(_, e)| *e >= 0).collect();
    let n_nodes = post.len();
    if !field.entries.iter().any(|e| e.status.is_ok()) {
        return Err(FdaError::NoCurves);
    }
    if n_nodes < 2 {
        return Err(FdaError::TooFewNodes(n_nodes));
    }
    let n_basis = config.n_basis.unwrap_or(n_nodes.min(6));
    if n_basis == 0 {
        return Err(FdaError::InvalidConfig("n_basis must be positive".into()));
    }
    if n_basis > n_nodes {
        return Err(FdaError::BasisTooRich { n_basis, n_nodes });
    }
    let order = config.order.unwrap_or(4).min(n_basis);
    if order == 0 {
        return Err(FdaError::InvalidConfig("order must be positive".into()));
    }
    let node_grid: Vec<f64> = post.iter().map(|(_, e)| *e as f64).collect();
    let basis = BSplineBasis::uniform(node_grid[0], node_grid[n_nodes - 1], n_basis, order);

    let mut unit_ids = Vec::new();
    let mut locations = Vec::new();
    let mut raw_values = Vec::new();
    let mut excluded = Vec::new();
    for entry in &field.entries {
        if !entry.status.is_ok() {
            excluded.push(ExcludedUnit { unit_id: entry.unit_id.clone(), reason: entry.status.label() });
            continue;
        }
        let values: Option<Vec<f64>> = post.iter().map(|(k, _)| entry.att_by_e[*k]).collect();
        match values {
            Some(v) => {
                unit_ids.push(entry.unit_id.clone());
                locations.push(entry.location);
                raw_values.push(v);
            }
            None => {
                excluded.push(ExcludedUnit { unit_id: entry.unit_id.clone(), reason: "incomplete trajectory".into() })
            }
        }
    }
    if raw_values.is_empty() {
        return Err(FdaError::NoCurves);
    }
    let coefficients = project(&basis, &node_grid, &raw_values)?;
    Ok(CurveSet { unit_ids, locations, node_grid, raw_values, basis, coefficients, excluded })
}
