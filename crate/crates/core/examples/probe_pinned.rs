use sieveqr::data::Dataset;
use sieveqr::dgp::{simulate, true_beta, DGPConfig, ErrorLaw};
use sieveqr::distributions::normal_cdf;
use sieveqr::first_stage::fit_parametric;
use sieveqr::linalg::Matrix;
use sieveqr::optimize::{fit_2ssmle_from, warm_start_with_rho, FitConfig};

fn main() {
    let mut biases = Vec::new();
    let mut rhos = Vec::new();
    for seed in 0..8u64 {
        let cfg = DGPConfig::new(2000, 0.5, 0.5, ErrorLaw::default_mixture(), 1000 + seed).unwrap();
        let sim = simulate(&cfg).unwrap();
        let ds = Dataset::from_simulated(&sim).unwrap();
        let x1t: Vec<f64> = ds.x1.iter().map(|v| v.ln()).collect();
        let zmat = Matrix::from_cols(&[vec![1.0; ds.n()], ds.z.clone()]).unwrap();
        let pre = fit_parametric(&x1t, &zmat, |r| r).unwrap();
        let sdv = pre.diagnostics.sd;
        let fs = fit_parametric(&x1t, &zmat, |r| normal_cdf(r / sdv)).unwrap();
        let fit_cfg = FitConfig { seed: 7, max_iter: 1500, ..FitConfig::default() };
        let theta = warm_start_with_rho(&ds, &fs.vhat, &fit_cfg, 0.45).unwrap();
        let fit = fit_2ssmle_from(&ds, &fs, &fit_cfg, &theta).unwrap();
        let b = fit.theta_hat.beta_at(0.5).unwrap();
        let bias = b[1] - true_beta(0.5).unwrap()[1];
        biases.push(bias);
        rhos.push(fit.theta_hat.gamma.rho);
        println!("seed {seed}: bias {:+.3} rho {:.3} obj {:.6} conv={}", bias, fit.theta_hat.gamma.rho, fit.objective, fit.converged);
    }
    println!("mean bias {:+.4} mean rho {:.3}",
        biases.iter().sum::<f64>() / 8.0, rhos.iter().sum::<f64>() / 8.0);
}
