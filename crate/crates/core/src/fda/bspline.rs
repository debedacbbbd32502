use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

/// Clamped B-spline basis on `[lower, upper]` with uniformly spaced interior knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis {
    /// Polynomial order (degree + 1).
    pub order: usize,
    pub n_basis: usize,
    /// Full knot vector of length `n_basis + order`.
    pub knots: Vec<f64>,
}

impl BSplineBasis {
    /// Requires `n_basis >= 1`, `order >= 1`, `n_basis >= order` and `lower < upper`.
    pub fn uniform(lower: f64, upper: f64, n_basis: usize, order: usize) -> Self {
        assert!(order >= 1 && n_basis >= order && lower < upper);
        let n_interior = n_basis - order;
        let mut knots = vec![lower; order];
        for j in 1..=n_interior {
            knots.push(lower + (upper - lower) * j as f64 / (n_interior + 1) as f64);
        }
        knots.extend(std::iter::repeat_n(upper, order));
        Self { order, n_basis, knots }
    }

    pub fn lower(&self) -> f64 {
        self.knots[0]
    }

    pub fn upper(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    /// Index `s` of the knot span `[knots[s], knots[s+1])` containing `t`;
    /// the right endpoint belongs to the last nonempty span.
    fn span(&self, t: f64) -> usize {
        let k = self.order;
        let last = self.n_basis - 1;
        if t >= self.knots[last + 1] {
            return last;
        }
        let mut s = k - 1;
        while s < last && t >= self.knots[s + 1] {
            s += 1;
        }
        s
    }

    /// All basis functions at `t`; zero outside `[lower, upper]`.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_basis];
        if !(t >= self.lower() && t <= self.upper()) {
            return out;
        }
        let k = self.order;
        let s = self.span(t);
        // Cox-de Boor on the `k` functions that are nonzero on span `s`,
        // i.e. indices `s + 1 - k ..= s`.
        let mut n = vec![0.0; k];
        n[0] = 1.0;
        let knots = &self.knots;
        for deg in 1..k {
            let mut saved = 0.0;
            for r in 0..deg {
                let left = knots[s + 1 + r - deg];
                let right = knots[s + 1 + r];
                let temp = n[r] / (right - left);
                n[r] = saved + (right - t) * temp;
                saved = (t - left) * temp;
            }
            n[deg] = saved;
        }
        for (r, v) in n.into_iter().enumerate() {
            out[s + 1 - k + r] = v;
        }
        out
    }

    /// `∫ B_i(t) B_j(t) dt` over the domain, exact for orders up to 4.
    pub fn gram(&self) -> DMatrix<f64> {
        const NODES: [f64; 4] =
            [-0.861_136_311_594_052_6, -0.339_981_043_584_856_3, 0.339_981_043_584_856_3, 0.861_136_311_594_052_6];
        const WEIGHTS: [f64; 4] =
            [0.347_854_845_137_453_9, 0.652_145_154_862_546_1, 0.652_145_154_862_546_1, 0.347_854_845_137_453_9];
        let p = self.n_basis;
        let mut g = DMatrix::zeros(p, p);
        for w in self.knots.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
            for (x, wq) in NODES.iter().zip(WEIGHTS) {
                let v = self.eval(mid + half * x);
                for i in 0..p {
                    for j in 0..p {
                        g[(i, j)] += wq * half * v[i] * v[j];
                    }
                }
            }
        }
        g
    }
}

/// Symmetric square root and inverse square root of a positive definite matrix.
pub(crate) fn sqrt_and_inv_sqrt(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let v = &eig.eigenvectors;
    let root = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    let inv_root = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.max(f64::MIN_POSITIVE).sqrt()));
    (v * root * v.transpose(), v * inv_root * v.transpose())
}
