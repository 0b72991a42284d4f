//! Comparison estimators: plain quantile regression, control-function
//! quantile regression with a power series in the generated control, and the
//! exogenous sieve MLE (the independence-copula special case of the main
//! estimator).
//!
//! Quantile regression minimizes the check loss through a
//! majorize-minimize reweighting with a smoothing floor that shrinks across
//! iterations; no linear-programming dependency is involved.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::optimize::{fit_sieve_ml, CopulaMode, FitConfig, FitResult};

/// Lower trim bound on the generated control for CFQR.
pub const CFQR_TRIM_LO: f64 = 0.01;
/// Upper trim bound on the generated control for CFQR.
pub const CFQR_TRIM_HI: f64 = 0.99;

/// Quantile-regression fits across a grid of levels.
#[derive(Debug, Clone)]
pub struct QRFit {
    pub tau_grid: Vec<f64>,
    /// One coefficient row per requested level.
    pub coef: Matrix,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
}

fn sd(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    (y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

fn check_loss(r: f64, tau: f64) -> f64 {
    r * (tau - f64::from(r < 0.0))
}

/// Solve the smoothed reweighting step: coefficients of
/// `argmin sum r_i^2 / (4 d_i) + (tau - 1/2) sum r_i`.
fn mm_step(x: &Matrix, y: &[f64], d: &[f64], tau: f64) -> Result<Vec<f64>> {
    let p = x.ncols();
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut b = DVector::<f64>::zeros(p);
    for i in 0..x.nrows() {
        let row = x.row(i);
        let w = 0.5 / d[i];
        for j in 0..p {
            for k in j..p {
                a[(j, k)] += w * row[j] * row[k];
            }
            b[j] += row[j] * (w * y[i] + (tau - 0.5));
        }
    }
    for j in 0..p {
        for k in 0..j {
            a[(j, k)] = a[(k, j)];
        }
    }
    let chol = Cholesky::new(a)
        .ok_or_else(|| Error::SingularDesign("quantile regression normal matrix".into()))?;
    Ok(chol.solve(&b).iter().copied().collect())
}

/// Quantile regression with iteration diagnostics. The smoothing floor
/// starts at 1e-2 of the outcome dispersion and shrinks tenfold per stage to
/// 1e-6 of it.
pub fn fit_qr_full(x: &Matrix, y: &[f64], tau: f64) -> Result<(Vec<f64>, usize, bool)> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Invalid(format!("quantile level {tau} outside (0,1)")));
    }
    if x.nrows() != y.len() {
        return Err(Error::Invalid("design rows != responses".into()));
    }
    let scale = sd(y).max(1e-12);
    let eps_final = 1e-6 * scale;
    let mut eps = 1e-2 * scale;
    let mut beta = crate::linalg::least_squares(x, y)?;
    let mut iters = 0usize;
    let mut converged = false;
    let cap = 400usize;
    'outer: loop {
        for _ in 0..60 {
            iters += 1;
            let d: Vec<f64> = (0..x.nrows())
                .map(|i| {
                    let r = y[i] - x.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
                    r.abs().max(eps)
                })
                .collect();
            let next = mm_step(x, y, &d, tau)?;
            let delta = next
                .iter()
                .zip(&beta)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            let size = beta.iter().map(|b| b.abs()).fold(1.0f64, f64::max);
            beta = next;
            if delta <= 1e-9 * size {
                if eps <= eps_final {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            if iters >= cap {
                break 'outer;
            }
        }
        if iters >= cap {
            break;
        }
        eps = (eps / 10.0).max(eps_final);
    }
    Ok((beta, iters, converged))
}

/// Minimizer of the sample check loss at level `tau`.
pub fn fit_qr(x: &Matrix, y: &[f64], tau: f64) -> Result<Vec<f64>> {
    fit_qr_full(x, y, tau).map(|(b, _, _)| b)
}

/// Quantile regression across a grid of levels.
pub fn fit_qr_grid(x: &Matrix, y: &[f64], taus: &[f64]) -> Result<QRFit> {
    let mut coef = Matrix::zeros(taus.len(), x.ncols());
    let mut iterations = Vec::with_capacity(taus.len());
    let mut converged = Vec::with_capacity(taus.len());
    for (t, &tau) in taus.iter().enumerate() {
        let (b, it, cv) = fit_qr_full(x, y, tau)?;
        for (j, v) in b.iter().enumerate() {
            coef.set(t, j, *v);
        }
        iterations.push(it);
        converged.push(cv);
    }
    Ok(QRFit { tau_grid: taus.to_vec(), coef, iterations, converged })
}

/// Sample check-loss objective, for tests and diagnostics.
pub fn qr_objective(x: &Matrix, y: &[f64], beta: &[f64], tau: f64) -> f64 {
    (0..x.nrows())
        .map(|i| {
            let r = y[i] - x.row(i).iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
            check_loss(r, tau)
        })
        .sum()
}

/// Control-function quantile regression: QR of y on the outcome design plus
/// the raw control powers `vhat^1..vhat^k`, over observations whose control
/// lies inside the trim band. Returns the full coefficient vector (outcome
/// design first, then the control powers).
pub fn fit_cfqr(data: &Dataset, vhat: &[f64], tau: f64, k: usize) -> Result<Vec<f64>> {
    if vhat.len() != data.n() {
        return Err(Error::Invalid("vhat length != data length".into()));
    }
    let keep: Vec<usize> = (0..data.n())
        .filter(|&i| vhat[i] >= CFQR_TRIM_LO && vhat[i] <= CFQR_TRIM_HI)
        .collect();
    if keep.len() < k + data.d_x() {
        return Err(Error::TrimTooAggressive(format!(
            "{} observations left after trimming, need at least {}",
            keep.len(),
            k + data.d_x()
        )));
    }
    let p = data.d_x() + k;
    let mut design = Matrix::zeros(keep.len(), p);
    let mut yk = Vec::with_capacity(keep.len());
    for (r, &i) in keep.iter().enumerate() {
        for j in 0..data.d_x() {
            design.set(r, j, data.x.get(i, j));
        }
        let mut pow = 1.0;
        for j in 0..k {
            pow *= vhat[i];
            design.set(r, data.d_x() + j, pow);
        }
        yk.push(data.y[i]);
    }
    fit_qr(&design, &yk, tau)
}

/// Exogenous sieve MLE: the identical likelihood pipeline with the copula
/// frozen at independence. Takes no first stage and never reads a control.
pub fn fit_smle(data: &Dataset, cfg: &FitConfig) -> Result<FitResult> {
    fit_sieve_ml(data, None, cfg, CopulaMode::Frozen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{simulate, true_beta, DGPConfig, ErrorLaw};
    use approx::assert_abs_diff_eq;

    #[test]
    fn intercept_only_median() {
        let y = vec![3.0, -1.0, 0.5, 9.0, 2.0, 2.5, -4.0];
        let x = Matrix::from_cols(&[vec![1.0; 7]]).unwrap();
        let (b, _, converged) = fit_qr_full(&x, &y, 0.5).unwrap();
        assert!(converged);
        assert_abs_diff_eq!(b[0], 2.0, epsilon = 1e-3);
        // Other levels give the corresponding sample quantiles (n*tau = 1.75
        // picks the second order statistic).
        let (b1, _, _) = fit_qr_full(&x, &y, 0.25).unwrap();
        assert_abs_diff_eq!(b1[0], -1.0, epsilon = 1e-3);
    }

    #[test]
    fn exact_fit_recovers_slope() {
        let xs: Vec<f64> = (1..=50).map(|i| i as f64 / 10.0).collect();
        let y: Vec<f64> = xs.iter().map(|v| 2.0 * v).collect();
        let x = Matrix::from_cols(&[xs]).unwrap();
        for &tau in &[0.1, 0.5, 0.9] {
            let b = fit_qr(&x, &y, tau).unwrap();
            assert_abs_diff_eq!(b[0], 2.0, epsilon = 1e-4);
        }
    }

    #[test]
    fn objective_near_stationary() {
        // The returned objective is no worse than small coordinate moves.
        let cfg = DGPConfig::new(400, 0.5, 0.5, ErrorLaw::default_mixture(), 3).unwrap();
        let sim = simulate(&cfg).unwrap();
        let ds = Dataset::from_simulated(&sim).unwrap();
        let tau = 0.3;
        let b = fit_qr(&ds.x, &ds.y, tau).unwrap();
        let obj = qr_objective(&ds.x, &ds.y, &b, tau);
        let tol = 1e-6 * 400.0 * sd(&ds.y);
        for j in 0..b.len() {
            for step in [-1e-4, 1e-4] {
                let mut bb = b.clone();
                bb[j] += step;
                assert!(qr_objective(&ds.x, &ds.y, &bb, tau) >= obj - tol);
            }
        }
    }

    #[test]
    fn aggregate_quantile_monotonicity() {
        let cfg = DGPConfig::new(2000, 0.5, 0.5, ErrorLaw::default_mixture(), 17).unwrap();
        let sim = simulate(&cfg).unwrap();
        let ds = Dataset::from_simulated(&sim).unwrap();
        let taus: Vec<f64> = (1..10).map(|k| k as f64 / 10.0).collect();
        let fit = fit_qr_grid(&ds.x, &ds.y, &taus).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for t in 0..taus.len() {
            let avg: f64 = (0..ds.n())
                .map(|i| {
                    ds.x.row(i)
                        .iter()
                        .zip(fit.coef.row(t))
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                })
                .sum::<f64>()
                / ds.n() as f64;
            assert!(avg >= prev - 1e-8, "tau {}: {avg} < {prev}", taus[t]);
            prev = avg;
        }
    }

    #[test]
    fn cfqr_degenerate_control_is_singular() {
        let cfg = DGPConfig::new(200, 0.5, 0.5, ErrorLaw::StdNormal, 5).unwrap();
        let sim = simulate(&cfg).unwrap();
        let ds = Dataset::from_simulated(&sim).unwrap();
        let vhat = vec![0.5; 200];
        match fit_cfqr(&ds, &vhat, 0.5, 3) {
            Err(Error::SingularDesign(_)) => {}
            other => panic!("expected singular design, got {other:?}"),
        }
    }

    #[test]
    fn cfqr_zero_powers_equals_qr_on_trimmed_sample() {
        let cfg = DGPConfig::new(500, 0.5, 0.5, ErrorLaw::default_mixture(), 8).unwrap();
        let sim = simulate(&cfg).unwrap();
        let ds = Dataset::from_simulated(&sim).unwrap();
        let vhat = sim.oracle_v.clone();
        let via_cfqr = fit_cfqr(&ds, &vhat, 0.4, 0).unwrap();
        let keep: Vec<usize> = (0..500)
            .filter(|&i| vhat[i] >= CFQR_TRIM_LO && vhat[i] <= CFQR_TRIM_HI)
            .collect();
        let trimmed = ds.resample(&keep);
        let direct = fit_qr(&trimmed.x, &trimmed.y, 0.4).unwrap();
        for (a, b) in via_cfqr.iter().zip(&direct) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn trim_too_aggressive_detected() {
        let cfg = DGPConfig::new(30, 0.5, 0.5, ErrorLaw::StdNormal, 5).unwrap();
        let sim = simulate(&cfg).unwrap();
        let ds = Dataset::from_simulated(&sim).unwrap();
        let vhat = vec![0.999; 30];
        assert!(matches!(
            fit_cfqr(&ds, &vhat, 0.5, 3),
            Err(Error::TrimTooAggressive(_))
        ));
    }

    #[test]
    fn qr_slope_bias_on_benchmark_design() {
        // Median slope on the endogenous regressor under the mixture error
        // and rho = 0.5: bias near +0.815 (50 replications at n = 5000).
        let mut acc = 0.0;
        let reps = 50;
        for rep in 0..reps {
            let cfg =
                DGPConfig::new(5000, 0.5, 0.5, ErrorLaw::default_mixture(), 9000 + rep).unwrap();
            let sim = simulate(&cfg).unwrap();
            let ds = Dataset::from_simulated(&sim).unwrap();
            let b = fit_qr(&ds.x, &ds.y, 0.5).unwrap();
            acc += b[1] - true_beta(0.5).unwrap()[1];
        }
        let bias = acc / reps as f64;
        assert!((bias - 0.815).abs() < 0.15, "QR slope bias {bias}");
    }
}
