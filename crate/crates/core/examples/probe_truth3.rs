use sieveqr::basis::{gauss_legendre, SplineBasis};
use sieveqr::data::Dataset;
use sieveqr::dgp::{simulate, true_beta, DGPConfig, ErrorLaw};
use sieveqr::distributions::{normal_cdf, CopulaParams, MixtureParams};
use sieveqr::first_stage::fit_parametric;
use sieveqr::likelihood::Theta;
use sieveqr::linalg::Matrix;
use sieveqr::optimize::{fit_2ssmle_from, FitConfig};

fn main() {
    for seed in [1000u64, 1001, 1002, 1003] {
        let cfg = DGPConfig::new(2000, 0.5, 0.5, ErrorLaw::default_mixture(), seed).unwrap();
        let sim = simulate(&cfg).unwrap();
        let ds = Dataset::from_simulated(&sim).unwrap();
        let x1t: Vec<f64> = ds.x1.iter().map(|v| v.ln()).collect();
        let zmat = Matrix::from_cols(&[vec![1.0; ds.n()], ds.z.clone()]).unwrap();
        let pre = fit_parametric(&x1t, &zmat, |r| r).unwrap();
        let sdv = pre.diagnostics.sd;
        let fs = fit_parametric(&x1t, &zmat, |r| normal_cdf(r / sdv)).unwrap();

        let basis = SplineBasis::uniform(19, 1).unwrap();
        let rule = gauss_legendre(&basis, 5).unwrap();
        let sigma = MixtureParams::new(vec![0.5, 0.25, 0.25], vec![-3.0, 2.0, 4.0], vec![1.0; 3]).unwrap();
        let gamma = CopulaParams::new(0.5).unwrap();
        let theta0 = Theta::from_function(&basis, &rule, |u| true_beta(u).unwrap().to_vec(), sigma, gamma).unwrap();
        let fit_cfg = FitConfig { seed: 7, max_iter: 3000, ..FitConfig::default() };
        let fit = fit_2ssmle_from(&ds, &fs, &fit_cfg, &theta0).unwrap();
        let b = fit.theta_hat.beta_at(0.5).unwrap();
        println!(
            "seed={seed}: from truth -> obj {:.6} conv={} it={} rho={:.3} b1 bias {:+.3} mu={:?}",
            fit.objective, fit.converged, fit.iterations, fit.theta_hat.gamma.rho,
            b[1] - true_beta(0.5).unwrap()[1],
            fit.theta_hat.sigma.means().iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>()
        );
    }
}
