//! Control-variable construction: a parametric location model for the
//! transformed endogenous regressor, or a nonparametric series regression of
//! the threshold indicators on spline terms of the conditioning variables.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// How the control variable was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FirstStageMethod {
    Parametric,
    Series,
}

/// Summary statistics of first-stage residuals (parametric route).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResidualMoments {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

impl ResidualMoments {
    fn from(res: &[f64]) -> Self {
        let n = res.len() as f64;
        let mean = res.iter().sum::<f64>() / n;
        let var = res.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
        Self {
            mean,
            sd: var.sqrt(),
            min: res.iter().cloned().fold(f64::INFINITY, f64::min),
            max: res.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Generated control values with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstStageFit {
    pub vhat: Vec<f64>,
    pub method: FirstStageMethod,
    /// Coefficients of the location regression (parametric route only).
    pub pi_hat: Option<Vec<f64>>,
    /// Series dimension and spline order (series route only).
    pub k: Option<usize>,
    pub order: Option<usize>,
    pub diagnostics: ResidualMoments,
}

/// Least-squares location fit of the transformed endogenous variable on
/// `zmat`, mapped through the disturbance CDF `f_eta`.
///
/// `x1t` must already be on the regression scale (log of the endogenous
/// regressor in the benchmark design); the library does not guess the
/// transform.
pub fn fit_parametric(
    x1t: &[f64],
    zmat: &Matrix,
    f_eta: impl Fn(f64) -> f64,
) -> Result<FirstStageFit> {
    if zmat.nrows() != x1t.len() {
        return Err(Error::Invalid("first stage: design rows != observations".into()));
    }
    let pi = linalg::least_squares(zmat, x1t)?;
    let fitted = zmat.matvec(&pi);
    let res: Vec<f64> = x1t.iter().zip(&fitted).map(|(x, f)| x - f).collect();
    let vhat: Vec<f64> = res.iter().map(|&r| f_eta(r).clamp(0.0, 1.0)).collect();
    Ok(FirstStageFit {
        vhat,
        method: FirstStageMethod::Parametric,
        pi_hat: Some(pi),
        k: None,
        order: None,
        diagnostics: ResidualMoments::from(&res),
    })
}

/// Per-column basis expansion used by the series route: an intercept plus,
/// for each conditioning column, either monomial terms (when the column's
/// share of functions is below the spline order) or a clamped B-spline basis
/// with knots at empirical quantiles.
fn series_design(zmat: &Matrix, k: usize, order: usize) -> Result<Matrix> {
    let n = zmat.nrows();
    let d = zmat.ncols();
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
    if k == 1 {
        return Matrix::from_cols(&cols);
    }
    // Distribute the remaining k-1 functions across columns, leading columns first.
    let base = (k - 1) / d;
    let rem = (k - 1) % d;
    for j in 0..d {
        let count = base + usize::from(j < rem);
        if count == 0 {
            continue;
        }
        let col = zmat.col(j);
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let width = (hi - lo).max(1e-12);
        if count < order {
            // Not enough room for a spline basis of this order; monomials.
            for p in 1..=count {
                cols.push(col.iter().map(|&z| ((z - lo) / width).powi(p as i32)).collect());
            }
        } else {
            let n_interior = count - order;
            let basis = crate::basis::SplineBasis::uniform(n_interior, order)?;
            let scaled: Vec<f64> =
                col.iter().map(|&z| ((z - lo) / width).clamp(0.0, 1.0)).collect();
            let bm = basis.eval_matrix(&scaled)?;
            for b in 0..basis.dim() {
                cols.push(bm.col(b));
            }
        }
    }
    Matrix::from_cols(&cols)
}

/// Series estimator of the conditional CDF of the endogenous regressor:
/// regress the indicators `1{x1_j <= x}` on the basis `p(z_j)` and evaluate
/// each observation's own row at its own threshold. Collinearity is absorbed
/// by the generalized inverse; results are clipped to [0,1].
pub fn fit_series(x1: &[f64], zmat: &Matrix, k: usize, order: usize) -> Result<FirstStageFit> {
    let n = x1.len();
    if zmat.nrows() != n {
        return Err(Error::Invalid("first stage: design rows != observations".into()));
    }
    if k == 0 || order == 0 {
        return Err(Error::Invalid("series first stage needs k >= 1 and order >= 1".into()));
    }
    let p = series_design(zmat, k, order)?;
    let kb = p.ncols();

    // Gram matrix and its generalized inverse.
    let mut gram = Matrix::zeros(kb, kb);
    for i in 0..n {
        let row = p.row(i);
        for a in 0..kb {
            for b in a..kb {
                let v = gram.get(a, b) + row[a] * row[b];
                gram.set(a, b, v);
            }
        }
    }
    for a in 0..kb {
        for b in 0..a {
            gram.set(a, b, gram.get(b, a));
        }
    }
    let eye = {
        let mut m = Matrix::zeros(kb, kb);
        for a in 0..kb {
            m.set(a, a, 1.0);
        }
        m
    };
    let (ginv, _) = linalg::pinv_solve(&gram, &eye)?;

    // Sorted sweep over thresholds: prefix sums of basis rows give
    // sum_j p_j * 1{x1_j <= x} for every distinct threshold.
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x1[a].total_cmp(&x1[b]));
    let mut prefix = vec![0.0; kb];
    let mut vhat = vec![0.0; n];
    let mut pos = 0;
    while pos < n {
        // Include every observation tied at this threshold before evaluating.
        let mut end = pos;
        while end < n && x1[idx[end]] == x1[idx[pos]] {
            let row = p.row(idx[end]);
            for a in 0..kb {
                prefix[a] += row[a];
            }
            end += 1;
        }
        let coeff = ginv.matvec(&prefix);
        for &i in &idx[pos..end] {
            let v: f64 = p.row(i).iter().zip(&coeff).map(|(a, b)| a * b).sum();
            vhat[i] = v.clamp(0.0, 1.0);
        }
        pos = end;
    }

    let moments = ResidualMoments::from(&vhat);
    Ok(FirstStageFit {
        vhat,
        method: FirstStageMethod::Series,
        pi_hat: None,
        k: Some(k),
        order: Some(order),
        diagnostics: moments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{simulate, DGPConfig, ErrorLaw};
    use crate::distributions::normal_cdf;
    use approx::assert_abs_diff_eq;

    #[test]
    fn intercept_only_parametric_is_centered_cdf() {
        let x1t = vec![1.0, 2.0, 3.0, 6.0];
        let ones = Matrix::from_cols(&[vec![1.0; 4]]).unwrap();
        let fit = fit_parametric(&x1t, &ones, normal_cdf).unwrap();
        let mean = 3.0;
        for (i, &x) in x1t.iter().enumerate() {
            assert_abs_diff_eq!(fit.vhat[i], normal_cdf(x - mean), epsilon = 1e-10);
        }
    }

    #[test]
    fn parametric_orthogonality_and_rank_error() {
        let cfg = DGPConfig::new(500, 0.5, 0.5, ErrorLaw::StdNormal, 10).unwrap();
        let sim = simulate(&cfg).unwrap();
        let x1t: Vec<f64> = sim.x1.iter().map(|v| v.ln()).collect();
        let zmat = Matrix::from_cols(&[vec![1.0; 500], sim.z.clone()]).unwrap();
        let fit = fit_parametric(&x1t, &zmat, normal_cdf).unwrap();
        let pi = fit.pi_hat.as_ref().unwrap();
        let fitted = zmat.matvec(pi);
        for j in 0..2 {
            let dot: f64 =
                (0..500).map(|i| zmat.get(i, j) * (x1t[i] - fitted[i])).sum();
            assert!(dot.abs() < 1e-8, "normal equations violated: {dot}");
        }
        let dup = Matrix::from_cols(&[sim.z.clone(), sim.z.clone()]).unwrap();
        assert!(fit_parametric(&x1t, &dup, normal_cdf).is_err());
    }

    #[test]
    fn parametric_recovers_oracle_control() {
        let cfg = DGPConfig::new(100_000, 0.5, 0.5, ErrorLaw::default_mixture(), 31).unwrap();
        let sim = simulate(&cfg).unwrap();
        let n = sim.len();
        let x1t: Vec<f64> = sim.x1.iter().map(|v| v.ln()).collect();
        let zmat = Matrix::from_cols(&[vec![1.0; n], sim.z.clone()]).unwrap();
        // Standardize residuals by their own dispersion, so the caller does
        // not need the true noise scale.
        let pre = fit_parametric(&x1t, &zmat, |r| r).unwrap();
        let sd = pre.diagnostics.sd;
        let fit = fit_parametric(&x1t, &zmat, |r| normal_cdf(r / sd)).unwrap();
        let mad = fit
            .vhat
            .iter()
            .zip(&sim.oracle_v)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / n as f64;
        assert!(mad <= 0.01, "mean abs deviation {mad}");
        // Correlation with the oracle control close to one.
        let corr = {
            let ma = fit.vhat.iter().sum::<f64>() / n as f64;
            let mb = sim.oracle_v.iter().sum::<f64>() / n as f64;
            let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
            for (a, b) in fit.vhat.iter().zip(&sim.oracle_v) {
                saa += (a - ma) * (a - ma);
                sbb += (b - mb) * (b - mb);
                sab += (a - ma) * (b - mb);
            }
            sab / (saa * sbb).sqrt()
        };
        assert!(corr >= 0.99, "corr {corr}");
    }

    #[test]
    fn series_k1_is_ecdf() {
        let cfg = DGPConfig::new(300, 0.5, 0.5, ErrorLaw::StdNormal, 8).unwrap();
        let sim = simulate(&cfg).unwrap();
        let zmat = Matrix::from_cols(&[sim.z.clone()]).unwrap();
        let fit = fit_series(&sim.x1, &zmat, 1, 2).unwrap();
        for i in 0..300 {
            let ecdf =
                sim.x1.iter().filter(|&&v| v <= sim.x1[i]).count() as f64 / 300.0;
            assert_abs_diff_eq!(fit.vhat[i], ecdf, epsilon = 1e-12);
        }
        // ECDF is monotone in the endogenous variable by construction.
        let mut pairs: Vec<(f64, f64)> =
            sim.x1.iter().cloned().zip(fit.vhat.iter().cloned()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in pairs.windows(2) {
            assert!(w[0].1 <= w[1].1 + 1e-12);
        }
    }

    #[test]
    fn series_tracks_oracle_control() {
        let cfg = DGPConfig::new(5000, 0.5, 0.5, ErrorLaw::default_mixture(), 14).unwrap();
        let sim = simulate(&cfg).unwrap();
        let zmat = Matrix::from_cols(&[sim.z.clone(), sim.x2.clone()]).unwrap();
        let fit = fit_series(&sim.x1, &zmat, 6, 2).unwrap();
        let mse = fit
            .vhat
            .iter()
            .zip(&sim.oracle_v)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / 5000.0;
        assert!(mse < 0.01, "series control MSE {mse}");
        assert!(fit.vhat.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
