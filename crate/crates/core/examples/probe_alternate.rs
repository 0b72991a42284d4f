use sieveqr::basis::gauss_legendre;
use sieveqr::data::Dataset;
use sieveqr::dgp::{simulate, true_beta, DGPConfig, ErrorLaw};
use sieveqr::distributions::{normal_cdf, CopulaParams};
use sieveqr::first_stage::fit_parametric;
use sieveqr::likelihood::loglik;
use sieveqr::linalg::Matrix;
use sieveqr::optimize::{fit_2ssmle_from, warm_start_with_rho, FitConfig};

fn main() {
    let cfg = DGPConfig::new(2000, 0.5, 0.5, ErrorLaw::default_mixture(), 12345).unwrap();
    let sim = simulate(&cfg).unwrap();
    let ds = Dataset::from_simulated(&sim).unwrap();
    let x1t: Vec<f64> = ds.x1.iter().map(|v| v.ln()).collect();
    let zmat = Matrix::from_cols(&[vec![1.0; ds.n()], ds.z.clone()]).unwrap();
    let pre = fit_parametric(&x1t, &zmat, |r| r).unwrap();
    let sdv = pre.diagnostics.sd;
    let fs = fit_parametric(&x1t, &zmat, |r| normal_cdf(r / sdv)).unwrap();
    let fit_cfg = FitConfig { seed: 7, ..FitConfig::default() };

    for rho0 in [0.0, 0.2, 0.45, 0.7] {
        let t = std::time::Instant::now();
        let theta = warm_start_with_rho(&ds, &fs.vhat, &fit_cfg, rho0).unwrap();
        let rule = gauss_legendre(&theta.basis, fit_cfg.quad_points).unwrap();
        let warm_l = loglik(&ds, &fs.vhat, &theta, &rule).unwrap().value;
        let fit = fit_2ssmle_from(&ds, &fs, &fit_cfg, &theta).unwrap();
        let b = fit.theta_hat.beta_at(0.5).unwrap();
        println!(
            "rho0={rho0:.2}: warm obj {warm_l:.6} -> final {:.6} (conv={} iters={}), rho_hat={:.3}, b1(0.5) bias {:+.3}, took {:?}",
            fit.objective, fit.converged, fit.iterations, fit.theta_hat.gamma.rho,
            b[1] - true_beta(0.5).unwrap()[1], t.elapsed()
        );
    }
    let _ = CopulaParams::new(0.0).unwrap();
}
