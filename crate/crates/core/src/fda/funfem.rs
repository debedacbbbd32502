//! Discriminative latent mixture clustering of curves (Fisher-EM).
//!
//! Whitened coefficient vectors `x_i` in `R^p` are modelled as a mixture in
//! which cluster `k` has mean `m_k`, a full `d × d` covariance `Σ_k` inside a
//! common orthonormal subspace `U` and isotropic variance `β_k` in its
//! orthogonal complement. Each iteration runs
//!
//! 1. F-step: `U` spans the leading generalized eigenvectors of the soft
//!    between-cluster scatter against the total scatter;
//! 2. M-step: proportions, means, `Σ_k = U' C_k U` and
//!    `β_k = (tr C_k - tr Σ_k) / (p - d)`;
//! 3. E-step: responsibilities from the resulting Gaussian densities.
//!
//! `d = min(K - 1, p - 1)`, at least 1.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bspline::sqrt_and_inv_sqrt;
use super::{evaluate_coefficients, CurveSet, FdaError};

/// Variance floor relative to the average total variance per dimension.
const RIDGE: f64 = 1e-4;
const LLOYD_ITERS: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once the fraction of units changing label falls below this.
    pub tol: f64,
    pub restarts: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { k: 3, seed: 0, max_iter: 200, tol: 1e-3, restarts: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    /// Latent subspace dimension.
    pub d: usize,
    pub unit_ids: Vec<String>,
    /// `n × K`, rows sum to one.
    pub responsibilities: Vec<Vec<f64>>,
    /// Clusters are numbered by increasing average level of their mean curve.
    pub labels: Vec<usize>,
    pub proportions: Vec<f64>,
    /// `p × d` orthonormal loadings in whitened coefficient coordinates.
    pub subspace: Vec<Vec<f64>>,
    /// Basis coefficients of each cluster's mean curve.
    pub cluster_mean_curves: Vec<Vec<f64>>,
    /// Log-likelihood after every iteration of the retained restart.
    pub criterion_trace: Vec<f64>,
    pub loglik: f64,
    pub n_params: usize,
    /// `-2 loglik + n_params ln n`; smaller is better.
    pub bic: f64,
    pub iterations: usize,
    pub converged: bool,
    pub restart: usize,
    pub reinitialised: bool,
    pub seed: u64,
}

impl ClusterModel {
    /// Mean curve of `cluster` sampled at `grid`.
    pub fn mean_curve_at(&self, curves: &CurveSet, cluster: usize, grid: &[f64]) -> Vec<f64> {
        grid.iter()
            .map(|&t| evaluate_coefficients(&curves.basis, &self.cluster_mean_curves[cluster], t).unwrap_or(f64::NAN))
            .collect()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

pub fn n_params(k: usize, d: usize, p: usize) -> usize {
    let complement = if d < p { k } else { 0 };
    (k - 1) + k * d + k * d * (d + 1) / 2 + complement + (p * d - d * (d + 1) / 2)
}

struct Data {
    x: Vec<DVector<f64>>,
    total_scatter: DMatrix<f64>,
    grand_mean: DVector<f64>,
    ridge: f64,
    p: usize,
}

struct Fit {
    t: DMatrix<f64>,
    u: DMatrix<f64>,
    means: Vec<DVector<f64>>,
    props: Vec<f64>,
    loglik: f64,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
    reinitialised: bool,
}

fn prepare(curves: &CurveSet) -> Result<(Data, DMatrix<f64>), FdaError> {
    let gram = curves.basis.gram();
    let (root, inv_root) = sqrt_and_inv_sqrt(&gram);
    let p = curves.basis.n_basis;
    let x: Vec<DVector<f64>> = curves.coefficients.iter().map(|c| &root * DVector::from_column_slice(c)).collect();
    let n = x.len() as f64;
    let grand_mean = x.iter().fold(DVector::zeros(p), |a, v| a + v) / n;
    let mut s = DMatrix::zeros(p, p);
    for v in &x {
        let c = v - &grand_mean;
        s += &c * c.transpose();
    }
    s /= n;
    let tr = s.trace();
    if !(tr > 0.0 && tr.is_finite()) {
        return Err(FdaError::InvalidConfig("curves show no variation".into()));
    }
    let ridge = RIDGE * tr / p as f64;
    Ok((Data { x, total_scatter: s, grand_mean, ridge, p }, inv_root))
}

fn hard(labels: &[usize], k: usize) -> DMatrix<f64> {
    let mut t = DMatrix::zeros(labels.len(), k);
    for (i, &l) in labels.iter().enumerate() {
        t[(i, l)] = 1.0;
    }
    t
}

fn argmax_rows(t: &DMatrix<f64>) -> Vec<usize> {
    (0..t.nrows())
        .map(|i| {
            let row = t.row(i);
            (0..t.ncols()).fold(0, |b, k| if row[k] > row[b] { k } else { b })
        })
        .collect()
}

fn kmeans_pp(x: &[DVector<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = x.len();
    let mut centers = vec![x[rng.random_range(0..n)].clone()];
    while centers.len() < k {
        let d2: Vec<f64> =
            x.iter().map(|v| centers.iter().map(|c| (v - c).norm_squared()).fold(f64::INFINITY, f64::min)).collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            d2.iter()
                .position(|&w| {
                    u -= w;
                    u < 0.0
                })
                .unwrap_or(n - 1)
        } else {
            rng.random_range(0..n)
        };
        centers.push(x[pick].clone());
    }
    let nearest = |v: &DVector<f64>, centers: &[DVector<f64>]| {
        (0..k)
            .map(|j| (v - &centers[j]).norm_squared())
            .enumerate()
            .fold((0, f64::INFINITY), |b, (j, d)| if d < b.1 { (j, d) } else { b })
            .0
    };
    let mut labels: Vec<usize> = x.iter().map(|v| nearest(v, &centers)).collect();
    for _ in 0..LLOYD_ITERS {
        for (j, c) in centers.iter_mut().enumerate() {
            let members: Vec<&DVector<f64>> = x.iter().zip(&labels).filter(|(_, l)| **l == j).map(|(v, _)| v).collect();
            if !members.is_empty() {
                *c = members.iter().fold(DVector::zeros(c.len()), |a, v| a + *v) / members.len() as f64;
            }
        }
        let next: Vec<usize> = x.iter().map(|v| nearest(v, &centers)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    labels
}

/// Moves part of the largest cluster into the collapsed one, splitting along
/// that cluster's leading principal direction.
fn split_largest(x: &[DVector<f64>], labels: &mut [usize], k: usize, empty: usize) {
    let mut sizes = vec![0usize; k];
    for &l in labels.iter() {
        sizes[l] += 1;
    }
    let big = (0..k).fold(0, |b, j| if sizes[j] > sizes[b] { j } else { b });
    let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == big).collect();
    let p = x[0].len();
    let mean = members.iter().fold(DVector::zeros(p), |a, &i| a + &x[i]) / members.len() as f64;
    let mut scatter = DMatrix::zeros(p, p);
    for &i in &members {
        let c = &x[i] - &mean;
        scatter += &c * c.transpose();
    }
    let eig = SymmetricEigen::new(scatter);
    let lead = eig.eigenvalues.imax();
    let dir = eig.eigenvectors.column(lead).into_owned();
    let mut moved = 0;
    for &i in &members {
        if (&x[i] - &mean).dot(&dir) > 0.0 {
            labels[i] = empty;
            moved += 1;
        }
    }
    if moved == 0 || moved == members.len() {
        for &i in members.iter().skip(members.len() / 2) {
            labels[i] = empty;
        }
    }
}

fn normalise_columns(mut u: DMatrix<f64>) -> DMatrix<f64> {
    for mut col in u.column_iter_mut() {
        let lead = col.iter().enumerate().fold(0, |b, (i, v)| if v.abs() > col[b].abs() { i } else { b });
        if col[lead] < 0.0 {
            col.neg_mut();
        }
    }
    u
}

fn f_step(data: &Data, means: &[DVector<f64>], props: &[f64], d: usize) -> DMatrix<f64> {
    let p = data.p;
    let mut sb = DMatrix::zeros(p, p);
    for (m, &pi) in means.iter().zip(props) {
        let c = m - &data.grand_mean;
        sb += pi * &c * c.transpose();
    }
    let a = &data.total_scatter + DMatrix::identity(p, p) * data.ridge;
    let chol = a.cholesky().expect("ridged scatter is positive definite");
    let l_inv = chol.l().solve_lower_triangular(&DMatrix::identity(p, p)).expect("triangular factor");
    let m = &l_inv * sb * l_inv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let w = DMatrix::from_fn(p, d, |r, c| eig.eigenvectors[(r, order[c])]);
    let v = l_inv.transpose() * w;
    normalise_columns(v.qr().q())
}

struct Components {
    sigma_inv: Vec<DMatrix<f64>>,
    log_det: Vec<f64>,
    beta: Vec<f64>,
}

fn m_step(data: &Data, t: &DMatrix<f64>, u: &DMatrix<f64>, means: &[DVector<f64>], mass: &[f64]) -> Components {
    let (p, d) = (data.p, u.ncols());
    let mut out = Components { sigma_inv: Vec::new(), log_det: Vec::new(), beta: Vec::new() };
    for (k, m) in means.iter().enumerate() {
        let mut c = DMatrix::zeros(p, p);
        for (i, v) in data.x.iter().enumerate() {
            let r = v - m;
            c += t[(i, k)] * &r * r.transpose();
        }
        c /= mass[k];
        let sigma = u.transpose() * &c * u + DMatrix::identity(d, d) * data.ridge;
        let beta =
            if d < p { ((c.trace() - (u.transpose() * &c * u).trace()) / (p - d) as f64).max(data.ridge) } else { 1.0 };
        let chol = sigma.cholesky().expect("ridged covariance is positive definite");
        out.log_det.push(2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>());
        out.sigma_inv.push(chol.inverse());
        out.beta.push(beta);
    }
    out
}

/// Responsibilities and log-likelihood.
fn e_step(
    data: &Data,
    u: &DMatrix<f64>,
    means: &[DVector<f64>],
    props: &[f64],
    comp: &Components,
) -> (DMatrix<f64>, f64) {
    let (p, d) = (data.p, u.ncols());
    let k = means.len();
    let n = data.x.len();
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let mut t = DMatrix::zeros(n, k);
    let mut loglik = 0.0;
    let mut logs = vec![0.0; k];
    for (i, v) in data.x.iter().enumerate() {
        for j in 0..k {
            let r = v - &means[j];
            let z = u.transpose() * &r;
            let q = (z.transpose() * &comp.sigma_inv[j] * &z)[(0, 0)];
            let mut lf = q + comp.log_det[j] + p as f64 * ln2pi;
            if d < p {
                let resid = (r.norm_squared() - z.norm_squared()).max(0.0);
                lf += resid / comp.beta[j] + (p - d) as f64 * comp.beta[j].ln();
            }
            logs[j] = props[j].ln() - 0.5 * lf;
        }
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = logs.iter().map(|l| (l - top).exp()).sum();
        loglik += top + s.ln();
        for j in 0..k {
            t[(i, j)] = (logs[j] - top).exp() / s;
        }
    }
    (t, loglik)
}

fn weighted_means(data: &Data, t: &DMatrix<f64>) -> (Vec<DVector<f64>>, Vec<f64>) {
    let k = t.ncols();
    let mass: Vec<f64> = (0..k).map(|j| t.column(j).sum()).collect();
    let means = (0..k)
        .map(|j| data.x.iter().enumerate().fold(DVector::zeros(data.p), |a, (i, v)| a + t[(i, j)] * v) / mass[j])
        .collect();
    (means, mass)
}

fn run_restart(data: &Data, k: usize, d: usize, cfg: &ClusterConfig, restart: usize) -> Result<Fit, FdaError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(restart as u64);
    let n = data.x.len();
    let min_mass = (d + 1) as f64;
    let mut labels = kmeans_pp(&data.x, k, &mut rng);
    let mut t = hard(&labels, k);
    let mut reinitialised = false;
    let mut trace = Vec::new();
    let mut iter = 0;
    loop {
        iter += 1;
        let (means, mass) = weighted_means(data, &t);
        // NaN mass counts as empty.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        let empty = (0..k).find(|&j| !(mass[j] >= min_mass));
        if let Some(empty) = empty {
            if reinitialised {
                return Err(FdaError::EmptyClusterCollapse { cluster: empty });
            }
            reinitialised = true;
            split_largest(&data.x, &mut labels, k, empty);
            t = hard(&labels, k);
            continue;
        }
        let props: Vec<f64> = mass.iter().map(|m| m / n as f64).collect();
        let u = f_step(data, &means, &props, d);
        let comp = m_step(data, &t, &u, &means, &mass);
        let (next, loglik) = e_step(data, &u, &means, &props, &comp);
        trace.push(loglik);
        let next_labels = argmax_rows(&next);
        let changed = next_labels.iter().zip(&labels).filter(|(a, b)| a != b).count() as f64 / n as f64;
        labels = next_labels;
        t = next;
        let converged = iter >= 2 && changed < cfg.tol;
        if converged || iter >= cfg.max_iter {
            let (means, mass) = weighted_means(data, &t);
            let props = mass.iter().map(|m| m / n as f64).collect();
            return Ok(Fit { t, u, means, props, loglik, trace, iterations: iter, converged, reinitialised });
        }
    }
}

/// Fits a `K`-cluster model, keeping the restart with the highest final
/// log-likelihood (earliest restart on ties).
pub fn funfem_cluster(curves: &CurveSet, cfg: &ClusterConfig) -> Result<ClusterModel, FdaError> {
    let k = cfg.k;
    if k < 2 {
        return Err(FdaError::InvalidConfig(format!("K = {k}, need at least 2")));
    }
    if curves.len() < k {
        return Err(FdaError::TooFewCurves { n_units: curves.len(), k });
    }
    if cfg.restarts == 0 || cfg.max_iter == 0 {
        return Err(FdaError::InvalidConfig("restarts and max_iter must be positive".into()));
    }
    let (data, inv_root) = prepare(curves)?;
    let p = data.p;
    let d = (k - 1).min(p.saturating_sub(1)).max(1);
    let fits: Vec<Result<Fit, FdaError>> =
        (0..cfg.restarts).into_par_iter().map(|r| run_restart(&data, k, d, cfg, r)).collect();
    let mut best: Option<(usize, Fit)> = None;
    let mut first_err = None;
    for (r, fit) in fits.into_iter().enumerate() {
        match fit {
            Ok(f) if best.as_ref().is_none_or(|(_, b)| f.loglik > b.loglik) => best = Some((r, f)),
            Ok(_) => {}
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let Some((restart, fit)) = best else {
        return Err(first_err.expect("at least one restart ran"));
    };

    let mean_coefs: Vec<Vec<f64>> = fit.means.iter().map(|m| (&inv_root * m).iter().copied().collect()).collect();
    let level = |c: &Vec<f64>| {
        let g = &curves.node_grid;
        g.iter().map(|&t| evaluate_coefficients(&curves.basis, c, t).unwrap()).sum::<f64>() / g.len() as f64
    };
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| level(&mean_coefs[a]).total_cmp(&level(&mean_coefs[b])).then(a.cmp(&b)));
    let mut rank = vec![0; k];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new;
    }

    let n = curves.len();
    let responsibilities: Vec<Vec<f64>> = (0..n).map(|i| order.iter().map(|&old| fit.t[(i, old)]).collect()).collect();
    let labels = argmax_rows(&fit.t).into_iter().map(|l| rank[l]).collect();
    let n_params = n_params(k, d, p);
    Ok(ClusterModel {
        k,
        d,
        unit_ids: curves.unit_ids.clone(),
        responsibilities,
        labels,
        proportions: order.iter().map(|&o| fit.props[o]).collect(),
        subspace: (0..p).map(|r| fit.u.row(r).iter().copied().collect()).collect(),
        cluster_mean_curves: order.iter().map(|&o| mean_coefs[o].clone()).collect(),
        criterion_trace: fit.trace,
        loglik: fit.loglik,
        n_params,
        bic: -2.0 * fit.loglik + n_params as f64 * (n as f64).ln(),
        iterations: fit.iterations,
        converged: fit.converged,
        restart,
        reinitialised: fit.reinitialised,
        seed: cfg.seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KCriterion {
    pub k: usize,
    pub loglik: f64,
    pub n_params: usize,
    pub bic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub k: usize,
    pub table: Vec<KCriterion>,
    pub model: ClusterModel,
}

/// Fits every `K` in `k_range` and keeps the smallest BIC (smaller `K` on ties).
pub fn select_k(curves: &CurveSet, k_range: &[usize], cfg: &ClusterConfig) -> Result<KSelection, FdaError> {
    if k_range.is_empty() {
        return Err(FdaError::InvalidConfig("empty K range".into()));
    }
    let mut ks = k_range.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut table = Vec::new();
    let mut best: Option<ClusterModel> = None;
    for k in ks {
        let model = funfem_cluster(curves, &ClusterConfig { k, ..cfg.clone() })?;
        table.push(KCriterion { k, loglik: model.loglik, n_params: model.n_params, bic: model.bic });
        if best.as_ref().is_none_or(|b| model.bic < b.bic) {
            best = Some(model);
        }
    }
    let model = best.expect("nonempty range");
    Ok(KSelection { k: model.k, table, model })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fda::{adjusted_rand_index, smooth_curves, BasisConfig};
    use crate::synth::TrajectoryFamilies;

    fn planted(seed: u64) -> (CurveSet, Vec<usize>) {
        let (field, labels) = TrajectoryFamilies { units_per_family: 30, seed, ..Default::default() }.generate();
        (smooth_curves(&field, BasisConfig::default()).unwrap(), labels)
    }

    #[test]
    fn parameter_count() {
        // K=3, d=2, p=6: 2 + 6 + 9 + 3 + (12 - 3).
        assert_eq!(n_params(3, 2, 6), 29);
        assert_eq!(n_params(2, 1, 1), 5);
    }

    #[test]
    fn recovers_planted_families_with_model_invariants() {
        let (curves, truth) = planted(1);
        let m = funfem_cluster(&curves, &ClusterConfig { seed: 3, ..Default::default() }).unwrap();
        assert!(adjusted_rand_index(&m.labels, &truth) > 0.9);
        for row in &m.responsibilities {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|r| *r >= 0.0));
        }
        let u = DMatrix::from_fn(m.subspace.len(), m.d, |r, c| m.subspace[r][c]);
        assert!((u.transpose() * &u - DMatrix::identity(m.d, m.d)).abs().max() < 1e-9);
        assert!(m.criterion_trace.iter().all(|v| v.is_finite()));
        assert!(m.cluster_sizes().iter().all(|s| *s > 0));
        // Ordered by level: the flat family is cluster 0, the strong hump cluster 2.
        assert_eq!(m.labels[0], 0);
        assert_eq!(m.labels[truth.len() - 1], 2);
    }

    #[test]
    fn deterministic_given_seed() {
        let (curves, _) = planted(2);
        let cfg = ClusterConfig { seed: 11, ..Default::default() };
        assert_eq!(funfem_cluster(&curves, &cfg).unwrap(), funfem_cluster(&curves, &cfg).unwrap());
    }

    #[test]
    fn rescaling_leaves_labels_unchanged() {
        let (curves, _) = planted(4);
        let cfg = ClusterConfig { seed: 5, ..Default::default() };
        let scaled_raw: Vec<Vec<f64>> = curves.raw_values.iter().map(|r| r.iter().map(|v| v * 7.5).collect()).collect();
        let scaled = curves.refit(curves.unit_ids.clone(), curves.locations.clone(), scaled_raw).unwrap();
        let a = funfem_cluster(&curves, &cfg).unwrap();
        let b = funfem_cluster(&scaled, &cfg).unwrap();
        assert_eq!(adjusted_rand_index(&a.labels, &b.labels), 1.0);
    }

    #[test]
    fn k_one_and_too_few_units_rejected() {
        let (curves, _) = planted(0);
        assert!(matches!(
            funfem_cluster(&curves, &ClusterConfig { k: 1, ..Default::default() }),
            Err(FdaError::InvalidConfig(_))
        ));
        let tiny =
            curves.refit(vec!["a".into()], vec![curves.locations[0]], vec![curves.raw_values[0].clone()]).unwrap();
        assert_eq!(
            funfem_cluster(&tiny, &ClusterConfig::default()).unwrap_err(),
            FdaError::TooFewCurves { n_units: 1, k: 3 }
        );
    }

    #[test]
    fn singleton_range_returns_it() {
        let (curves, _) = planted(6);
        let sel = select_k(&curves, &[3], &ClusterConfig::default()).unwrap();
        assert_eq!(sel.k, 3);
        assert_eq!(sel.table.len(), 1);
    }
}
