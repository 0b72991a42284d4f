//! B-spline basis on [0,1] for the quantile coefficient functions, plus the
//! matching composite Gauss-Legendre quadrature rule.
//!
//! The basis is clamped at both ends, so the `dim` functions are nonnegative
//! and sum to one everywhere on [0,1]. For `order == 1` the basis reduces to
//! subinterval indicators, which is the configuration used in all baseline
//! runs.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Spline basis of a given order on a knot partition of [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    interior_knots: Vec<f64>,
    order: usize,
    dim: usize,
    /// Clamped knot vector: `order` zeros, interior knots, `order` ones.
    full_knots: Vec<f64>,
}

impl SplineBasis {
    /// Uniform interior knots `j / (j_tilde + 1)`, dimension `order + j_tilde`.
    pub fn uniform(j_tilde: usize, order: usize) -> Result<Self> {
        let knots: Vec<f64> =
            (1..=j_tilde).map(|j| j as f64 / (j_tilde + 1) as f64).collect();
        Self::with_knots(&knots, order)
    }

    /// Explicit strictly increasing interior knots in (0,1).
    pub fn with_knots(interior_knots: &[f64], order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::Invalid("spline order must be >= 1".into()));
        }
        for w in interior_knots.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::Invalid("interior knots must be strictly increasing".into()));
            }
        }
        if interior_knots.iter().any(|&t| t <= 0.0 || t >= 1.0) {
            return Err(Error::Invalid("interior knots must lie strictly inside (0,1)".into()));
        }
        let mut full = vec![0.0; order];
        full.extend_from_slice(interior_knots);
        full.extend(std::iter::repeat(1.0).take(order));
        Ok(Self {
            interior_knots: interior_knots.to_vec(),
            order,
            dim: order + interior_knots.len(),
            full_knots: full,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Basis dimension (number of spline coefficients per component).
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior_knots
    }

    /// Number of subintervals in the knot partition.
    pub fn n_cells(&self) -> usize {
        self.interior_knots.len() + 1
    }

    /// Boundaries of cell `j`: `[t_j, t_{j+1}]`.
    pub fn cell_bounds(&self, j: usize) -> (f64, f64) {
        let lo = if j == 0 { 0.0 } else { self.interior_knots[j - 1] };
        let hi = if j == self.interior_knots.len() { 1.0 } else { self.interior_knots[j] };
        (lo, hi)
    }

    /// Index of the subinterval containing `u` (right-continuous; u = 1 maps
    /// to the last cell).
    pub fn cell_of(&self, u: f64) -> usize {
        let m = self.interior_knots.len();
        match self.interior_knots.iter().position(|&t| u < t) {
            Some(j) => j,
            None => m,
        }
    }

    /// Midpoints of the knot partition cells.
    pub fn cell_midpoints(&self) -> Vec<f64> {
        (0..self.n_cells())
            .map(|j| {
                let (lo, hi) = self.cell_bounds(j);
                0.5 * (lo + hi)
            })
            .collect()
    }

    /// Evaluate all basis functions at `u` in [0,1].
    pub fn eval(&self, u: f64) -> Result<Vec<f64>> {
        if !(0.0..=1.0).contains(&u) || u.is_nan() {
            return Err(Error::Domain(format!("basis evaluation at u = {u} outside [0,1]")));
        }
        let mut out = vec![0.0; self.dim];
        self.eval_into(u, &mut out);
        Ok(out)
    }

    /// Cox-de Boor evaluation without the domain check, writing into `out`.
    pub(crate) fn eval_into(&self, u: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        out.iter_mut().for_each(|v| *v = 0.0);
        let p = self.order - 1; // polynomial degree
        let t = &self.full_knots;
        // Knot span: largest k with t[k] <= u < t[k+1]; u = 1 falls in the
        // last nontrivial span.
        let span = if u >= 1.0 {
            self.dim - 1
        } else {
            let mut k = p;
            while k + 1 < self.dim && t[k + 1] <= u {
                k += 1;
            }
            k
        };
        // Triangular recursion over the `order` nonzero functions.
        let mut vals = vec![0.0; self.order];
        vals[0] = 1.0;
        let mut left = vec![0.0; self.order];
        let mut right = vec![0.0; self.order];
        for j in 1..=p {
            left[j] = u - t[span + 1 - j];
            right[j] = t[span + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                let den = right[r + 1] + left[j - r];
                let term = if den != 0.0 { vals[r] / den } else { 0.0 };
                vals[r] = saved + right[r + 1] * term;
                saved = left[j - r] * term;
            }
            vals[j] = saved;
        }
        for (r, v) in vals.iter().enumerate() {
            out[span - p + r] = *v;
        }
    }

    /// Basis matrix with one row per evaluation point.
    pub fn eval_matrix(&self, us: &[f64]) -> Result<Matrix> {
        let mut m = Matrix::zeros(us.len(), self.dim);
        let mut buf = vec![0.0; self.dim];
        for (i, &u) in us.iter().enumerate() {
            if !(0.0..=1.0).contains(&u) || u.is_nan() {
                return Err(Error::Domain(format!("basis evaluation at u = {u} outside [0,1]")));
            }
            self.eval_into(u, &mut buf);
            for (j, v) in buf.iter().enumerate() {
                m.set(i, j, *v);
            }
        }
        Ok(m)
    }
}

/// Composite quadrature rule on [0,1] aligned with a spline basis partition.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// Nodes per subinterval.
    pub points_per_cell: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Cell index of node `q` (nodes are laid out cell by cell).
    #[inline]
    pub fn cell_of_node(&self, q: usize) -> usize {
        q / self.points_per_cell
    }

    /// Integrate a function over [0,1] with this rule.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&u, &w)| w * f(u)).sum()
    }
}

/// Gauss-Legendre nodes and weights on [-1,1] by Newton iteration on the
/// Legendre recurrence.
fn gauss_legendre_reference(q: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; q];
    let mut weights = vec![0.0; q];
    let m = (q + 1) / 2;
    for i in 0..m {
        // Chebyshev initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (q as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre P_q(x) and derivative via three-term recurrence.
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=q {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = q as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[q - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[q - 1 - i] = w;
    }
    if q % 2 == 1 {
        nodes[q / 2] = 0.0;
    }
    (nodes, weights)
}

/// `q`-point Gauss-Legendre rule mapped into every subinterval of the basis
/// partition. Weights sum to 1 (the length of [0,1]); nodes are strictly
/// interior to their cells.
pub fn gauss_legendre(basis: &SplineBasis, q: usize) -> Result<QuadratureRule> {
    if q == 0 {
        return Err(Error::Invalid("quadrature needs at least one node per interval".into()));
    }
    let (xs, ws) = gauss_legendre_reference(q);
    let mut nodes = Vec::with_capacity(q * basis.n_cells());
    let mut weights = Vec::with_capacity(q * basis.n_cells());
    for j in 0..basis.n_cells() {
        let (a, b) = basis.cell_bounds(j);
        let h = 0.5 * (b - a);
        let c = 0.5 * (a + b);
        for (x, w) in xs.iter().zip(&ws) {
            nodes.push(c + h * x);
            weights.push(h * w);
        }
    }
    Ok(QuadratureRule { nodes, weights, points_per_cell: q })
}
