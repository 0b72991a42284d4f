//! Minimal dense linear algebra kernel: least squares, generalized inverse,
//! weighted least squares, and isotonic regression.
//!
//! Factorizations are delegated to `nalgebra`; the row-major [`Matrix`] type is
//! the crate-wide exchange format because estimation code walks observations
//! row by row.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value cutoff for the generalized inverse.
pub const PINV_TRUNCATION: f64 = 1e-10;

/// Dense row-major real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    data: Vec<f64>,
    nrows: usize,
    ncols: usize,
}

impl Matrix {
    /// Build from row-major data. Rejects non-finite entries and shape mismatches.
    pub fn new(nrows: usize, ncols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nrows * ncols {
            return Err(Error::Invalid(format!(
                "matrix data length {} != {}x{}",
                data.len(),
                nrows,
                ncols
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entries must be finite".into()));
        }
        Ok(Self { data, nrows, ncols })
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { data: vec![0.0; nrows * ncols], nrows, ncols }
    }

    /// Build from a slice of equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(Error::Invalid("ragged rows".into()));
        }
        Self::new(nrows, ncols, rows.concat())
    }

    /// Stack column vectors side by side.
    pub fn from_cols(cols: &[Vec<f64>]) -> Result<Self> {
        let ncols = cols.len();
        let nrows = cols.first().map_or(0, |c| c.len());
        if cols.iter().any(|c| c.len() != nrows) {
            return Err(Error::Invalid("ragged columns".into()));
        }
        let mut data = vec![0.0; nrows * ncols];
        for (j, col) in cols.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                data[i * ncols + j] = *v;
            }
        }
        Self::new(nrows, ncols, data)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.ncols + j] = v;
    }

    /// Contiguous view of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.nrows).map(|i| self.get(i, j)).collect()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Select rows by index (with repetition allowed), e.g. for resampling.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.ncols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self { data, nrows: idx.len(), ncols: self.ncols }
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.nrows, self.ncols, &self.data)
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        Self { data, nrows: m.nrows(), ncols: m.ncols() }
    }

    /// Matrix-vector product `self * v`.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.ncols);
        (0..self.nrows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }
}

fn check_finite(name: &str, v: &[f64]) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("{name} contains NaN or infinity")));
    }
    Ok(())
}

/// Ordinary least squares of `y` on the columns of `a` via column-pivoted QR.
///
/// Errors on rank deficiency; the returned residual is orthogonal to the
/// columns of `a` to factorization accuracy.
pub fn least_squares(a: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    if a.nrows() != y.len() {
        return Err(Error::Invalid(format!(
            "least_squares: {} rows vs {} responses",
            a.nrows(),
            y.len()
        )));
    }
    check_finite("y", y)?;
    let am = a.to_dmatrix();
    let qr = am.col_piv_qr();
    let r = qr.r();
    let k = a.ncols().min(a.nrows());
    let rmax = (0..k).map(|i| r[(i, i)].abs()).fold(0.0f64, f64::max);
    if k < a.ncols() || rmax == 0.0 || (0..k).any(|i| r[(i, i)].abs() < 1e-12 * rmax) {
        return Err(Error::SingularDesign(format!(
            "rank-deficient design ({}x{})",
            a.nrows(),
            a.ncols()
        )));
    }
    // Thin-QR solve: with A P = Q R, the LS solution is P R^{-1} Q' y.
    let qty = qr.q().transpose() * DVector::from_column_slice(y);
    let mut sol = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::SingularDesign("triangular solve failed".into()))?;
    qr.p().inv_permute_rows(&mut sol);
    Ok(sol.iter().copied().collect())
}

/// Weighted least squares with nonnegative weights: minimizes `sum w_i (y_i - x_i'b)^2`.
pub fn weighted_ls(a: &Matrix, y: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    if w.len() != y.len() || a.nrows() != y.len() {
        return Err(Error::Invalid("weighted_ls: shape mismatch".into()));
    }
    check_finite("w", w)?;
    if w.iter().any(|&wi| wi < 0.0) {
        return Err(Error::Invalid("weighted_ls: negative weight".into()));
    }
    let mut asc = Matrix::zeros(a.nrows(), a.ncols());
    let mut ysc = vec![0.0; y.len()];
    for i in 0..a.nrows() {
        let s = w[i].sqrt();
        for j in 0..a.ncols() {
            asc.set(i, j, a.get(i, j) * s);
        }
        ysc[i] = y[i] * s;
    }
    least_squares(&asc, &ysc)
}

/// Minimum-norm solution of `a * X = Y` through a truncated SVD generalized
/// inverse. Singular values below `PINV_TRUNCATION * sigma_max` are dropped;
/// the number dropped is returned alongside the solution.
pub fn pinv_solve(a: &Matrix, y: &Matrix) -> Result<(Matrix, usize)> {
    if a.nrows() != y.nrows() {
        return Err(Error::Invalid("pinv_solve: row mismatch".into()));
    }
    let svd = a.to_dmatrix().svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let vt = svd.v_t.as_ref().expect("svd with v_t");
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let cutoff = PINV_TRUNCATION * smax;
    let mut truncated = 0usize;
    let mut sinv = svd.singular_values.clone();
    for s in sinv.iter_mut() {
        if *s > cutoff && *s > 0.0 {
            *s = 1.0 / *s;
        } else {
            *s = 0.0;
            truncated += 1;
        }
    }
    // X = V * S^+ * U' * Y
    let uty = u.transpose() * y.to_dmatrix();
    let mut scaled = uty;
    for i in 0..sinv.len().min(scaled.nrows()) {
        for j in 0..scaled.ncols() {
            scaled[(i, j)] *= sinv[i];
        }
    }
    let x = vt.transpose() * scaled.rows(0, sinv.len()).into_owned();
    Ok((Matrix::from_dmatrix(&x), truncated))
}

/// `pinv_solve` for a single right-hand side.
pub fn pinv_solve_vec(a: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    let ym = Matrix::new(y.len(), 1, y.to_vec())?;
    let (x, _) = pinv_solve(a, &ym)?;
    Ok(x.col(0))
}

/// Weighted L2 projection onto the nondecreasing cone (pool adjacent violators).
///
/// Weights must be nonnegative with at least one strictly positive entry per
/// pooled block for the projection to be well defined; zero-weight entries
/// inherit their block's value.
pub fn isotonic(v: &[f64], w: &[f64]) -> Vec<f64> {
    assert_eq!(v.len(), w.len());
    let n = v.len();
    if n == 0 {
        return Vec::new();
    }
    // Blocks carry (weighted mean, total weight, count).
    let mut means: Vec<f64> = Vec::with_capacity(n);
    let mut wts: Vec<f64> = Vec::with_capacity(n);
    let mut lens: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        means.push(v[i]);
        wts.push(w[i]);
        lens.push(1);
        while means.len() > 1 {
            let m = means.len();
            if means[m - 2] <= means[m - 1] {
                break;
            }
            let wt = wts[m - 2] + wts[m - 1];
            let mean = if wt > 0.0 {
                (means[m - 2] * wts[m - 2] + means[m - 1] * wts[m - 1]) / wt
            } else {
                0.5 * (means[m - 2] + means[m - 1])
            };
            means[m - 2] = mean;
            wts[m - 2] = wt;
            lens[m - 2] += lens[m - 1];
            means.pop();
            wts.pop();
            lens.pop();
        }
    }
    let mut out = Vec::with_capacity(n);
    for (m, l) in means.iter().zip(&lens) {
        out.extend(std::iter::repeat(*m).take(*l));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rejects_non_finite() {
        assert!(Matrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        let a = Matrix::new(2, 1, vec![1.0, 2.0]).unwrap();
        assert!(least_squares(&a, &[1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn identity_recovers_rhs() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = least_squares(&a, &[3.0, -2.0]).unwrap();
        assert_abs_diff_eq!(b[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b[1], -2.0, epsilon = 1e-12);
    }

    #[test]
    fn residual_orthogonality() {
        // Overdetermined 6x2 with known noise.
        let rows: Vec<Vec<f64>> =
            (0..6).map(|i| vec![1.0, i as f64]).collect();
        let a = Matrix::from_rows(&rows).unwrap();
        let y: Vec<f64> = (0..6).map(|i| 2.0 + 0.5 * i as f64 + ((i * 7 % 3) as f64 - 1.0)).collect();
        let b = least_squares(&a, &y).unwrap();
        for j in 0..2 {
            let dot: f64 = (0..6).map(|i| a.get(i, j) * (y[i] - a.row(i).iter().zip(&b).map(|(x, c)| x * c).sum::<f64>())).sum();
            assert!(dot.abs() < 1e-10, "col {j} residual dot {dot}");
        }
    }

    #[test]
    fn rank_deficiency_detected() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]).unwrap();
        assert!(matches!(least_squares(&a, &[1.0, 2.0, 3.0]), Err(Error::SingularDesign(_))));
    }

    #[test]
    fn pinv_duplicated_column_splits_weight() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 + 1.0, i as f64 + 1.0]).collect();
        let a = Matrix::from_rows(&rows).unwrap();
        let y: Vec<f64> = (0..5).map(|i| 3.0 * (i as f64 + 1.0)).collect();
        let x = pinv_solve_vec(&a, &y).unwrap();
        assert_abs_diff_eq!(x[0], 1.5, epsilon = 1e-9);
        assert_abs_diff_eq!(x[1], 1.5, epsilon = 1e-9);
    }

    #[test]
    fn pinv_matches_least_squares_on_full_rank() {
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|i| vec![1.0, (i as f64).sin(), (i as f64).cos()])
            .collect();
        let a = Matrix::from_rows(&rows).unwrap();
        let y: Vec<f64> = (0..8).map(|i| (i as f64) * 0.3 - 1.0).collect();
        let b1 = least_squares(&a, &y).unwrap();
        let b2 = pinv_solve_vec(&a, &y).unwrap();
        for (u, v) in b1.iter().zip(&b2) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-9);
        }
    }

    #[test]
    fn isotonic_hand_check() {
        let out = isotonic(&[3.0, 1.0, 2.0], &[1.0, 1.0, 1.0]);
        assert_eq!(out, vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn isotonic_idempotent_and_mean_preserving() {
        let v = [5.0, 1.0, 4.0, 2.0, 8.0, 3.0];
        let w = [1.0, 2.0, 1.0, 0.5, 1.0, 1.5];
        let p = isotonic(&v, &w);
        for win in p.windows(2) {
            assert!(win[0] <= win[1] + 1e-14);
        }
        let p2 = isotonic(&p, &w);
        for (a, b) in p.iter().zip(&p2) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let m0: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let m1: f64 = p.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert_abs_diff_eq!(m0, m1, epsilon = 1e-10);
    }

    /// Brute-force weighted projection via the minimax representation
    /// x_i = min_{k>=i} max_{j<=i} mean(v[j..=k]).
    fn isotonic_minimax(v: &[f64], w: &[f64]) -> Vec<f64> {
        let n = v.len();
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut best_min = f64::INFINITY;
            for k in i..n {
                let mut best_max = f64::NEG_INFINITY;
                for j in 0..=i {
                    let (mut num, mut den) = (0.0, 0.0);
                    for t in j..=k {
                        num += v[t] * w[t];
                        den += w[t];
                    }
                    best_max = best_max.max(num / den);
                }
                best_min = best_min.min(best_max);
            }
            out[i] = best_min;
        }
        out
    }

    #[test]
    fn isotonic_matches_minimax_oracle() {
        let cases: Vec<(Vec<f64>, Vec<f64>)> = vec![
            (vec![3.0, 1.0, 2.0], vec![1.0, 1.0, 1.0]),
            (vec![1.0, 2.0, 3.0], vec![1.0, 1.0, 1.0]),
            (vec![4.0, 3.0, 2.0, 1.0], vec![1.0, 2.0, 3.0, 4.0]),
            (vec![1.0, 3.0, 2.0, 4.0, 0.0, 5.0], vec![2.0, 1.0, 1.0, 0.5, 1.0, 1.0]),
            (vec![-1.0, -3.0, 2.0, 2.0, -5.0], vec![1.0, 1.0, 1.0, 1.0, 1.0]),
        ];
        for (v, w) in cases {
            let got = isotonic(&v, &w);
            let want = isotonic_minimax(&v, &w);
            for (a, b) in got.iter().zip(&want) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
    }
}
