//! Weighted least squares via equilibrated normal equations.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigenvalue ratio below which the equilibrated cross-product matrix is
/// treated as rank deficient (condition number of the design about 1e6).
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Singular;

/// Accumulates `X'WX` and `X'Wy` row by row.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    xtwx: DMatrix<f64>,
    xtwy: DVector<f64>,
    rows: usize,
}

#[derive(Debug, Clone)]
pub struct LsFit {
    pub coef: DVector<f64>,
    /// `(X'WX)^{-1}`.
    pub xtwx_inv: DMatrix<f64>,
}

impl LsFit {
    pub fn predict(&self, row: &[f64]) -> f64 {
        row.iter().zip(self.coef.iter()).map(|(x, b)| x * b).sum()
    }
}

impl NormalEquations {
    pub fn new(p: usize) -> Self {
        Self { xtwx: DMatrix::zeros(p, p), xtwy: DVector::zeros(p), rows: 0 }
    }

    pub fn add(&mut self, row: &[f64], y: f64, w: f64) {
        let p = self.xtwy.len();
        debug_assert_eq!(row.len(), p);
        if w == 0.0 {
            return;
        }
        for a in 0..p {
            let wa = w * row[a];
            self.xtwy[a] += wa * y;
            for (b, rb) in row.iter().enumerate().skip(a) {
                self.xtwx[(a, b)] += wa * rb;
            }
        }
        self.rows += 1;
    }

    pub fn solve(&self) -> Result<LsFit, Singular> {
        let p = self.xtwy.len();
        if self.rows < p {
            return Err(Singular);
        }
        let mut m = self.xtwx.clone();
        for a in 0..p {
            for b in 0..a {
                m[(a, b)] = m[(b, a)];
            }
        }
        let scale: Vec<f64> = (0..p).map(|a| m[(a, a)].sqrt()).collect();
        if scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Singular);
        }
        for a in 0..p {
            for b in 0..p {
                m[(a, b)] /= scale[a] * scale[b];
            }
        }
        let eig = SymmetricEigen::new(m);
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        let not_positive = !(max > 0.0);
        if not_positive || min <= RANK_TOL * max {
            return Err(Singular);
        }
        let inv_vals = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
        let mut inv = &eig.eigenvectors * inv_vals * eig.eigenvectors.transpose();
        for a in 0..p {
            for b in 0..p {
                inv[(a, b)] /= scale[a] * scale[b];
            }
        }
        let coef = &inv * &self.xtwy;
        Ok(LsFit { coef, xtwx_inv: inv })
    }
}
