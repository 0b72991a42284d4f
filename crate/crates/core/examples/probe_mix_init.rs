use sieveqr::basis::gauss_legendre;
use sieveqr::data::Dataset;
use sieveqr::dgp::{simulate, true_beta, DGPConfig, ErrorLaw};
use sieveqr::distributions::normal_cdf;
use sieveqr::first_stage::fit_parametric;
use sieveqr::likelihood::loglik;
use sieveqr::linalg::Matrix;
use sieveqr::optimize::{
    fit_2ssmle_from, residual_quantile_mixture, warm_start_candidate, CopulaMode, FitConfig,
};

fn main() {
    for seed in [12345u64, 1, 2, 3] {
        let cfg = DGPConfig::new(2000, 0.5, 0.5, ErrorLaw::default_mixture(), seed).unwrap();
        let sim = simulate(&cfg).unwrap();
        let ds = Dataset::from_simulated(&sim).unwrap();
        let x1t: Vec<f64> = ds.x1.iter().map(|v| v.ln()).collect();
        let zmat = Matrix::from_cols(&[vec![1.0; ds.n()], ds.z.clone()]).unwrap();
        let pre = fit_parametric(&x1t, &zmat, |r| r).unwrap();
        let sdv = pre.diagnostics.sd;
        let fs = fit_parametric(&x1t, &zmat, |r| normal_cdf(r / sdv)).unwrap();
        let fit_cfg = FitConfig { seed: 7, max_iter: 1200, ..FitConfig::default() };

        let mix = residual_quantile_mixture(&ds, 3).unwrap();
        println!(
            "seed={seed}: rq mixture mu={:?} s={:.3}",
            mix.means().iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>(),
            mix.sds()[0]
        );
        for rho0 in [0.2, 0.45] {
            let (theta, _, _) = warm_start_candidate(
                &ds, &fs.vhat, &fit_cfg, CopulaMode::Free, Some(rho0), Some(mix.clone()),
            )
            .unwrap();
            let rule = gauss_legendre(&theta.basis, fit_cfg.quad_points).unwrap();
            let wl = loglik(&ds, &fs.vhat, &theta, &rule).unwrap().value;
            let fit = fit_2ssmle_from(&ds, &fs, &fit_cfg, &theta).unwrap();
            let b = fit.theta_hat.beta_at(0.5).unwrap();
            println!(
                "  rho0={rho0}: warm {wl:.6} -> {:.6} conv={} it={} rho={:.3} b1 bias {:+.3}",
                fit.objective, fit.converged, fit.iterations, fit.theta_hat.gamma.rho,
                b[1] - true_beta(0.5).unwrap()[1]
            );
        }
    }
}
