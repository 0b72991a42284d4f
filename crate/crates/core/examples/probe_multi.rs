use sieveqr::data::Dataset;
use sieveqr::dgp::{simulate, true_beta, DGPConfig, ErrorLaw};
use sieveqr::distributions::normal_cdf;
use sieveqr::first_stage::fit_parametric;
use sieveqr::linalg::Matrix;
use sieveqr::optimize::{fit_2ssmle, FitConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let n_seeds: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(4);
    let max_iter: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1500);
    let starts: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(2);
    let mut biases = Vec::new();
    let mut rhos = Vec::new();
    for seed in 0..n_seeds {
        let t = std::time::Instant::now();
        let cfg = DGPConfig::new(n, 0.5, 0.5, ErrorLaw::default_mixture(), 1000 + seed).unwrap();
        let sim = simulate(&cfg).unwrap();
        let ds = Dataset::from_simulated(&sim).unwrap();
        let x1t: Vec<f64> = ds.x1.iter().map(|v| v.ln()).collect();
        let zmat = Matrix::from_cols(&[vec![1.0; ds.n()], ds.z.clone()]).unwrap();
        let pre = fit_parametric(&x1t, &zmat, |r| r).unwrap();
        let sdv = pre.diagnostics.sd;
        let fs = fit_parametric(&x1t, &zmat, |r| normal_cdf(r / sdv)).unwrap();
        let fit_cfg = FitConfig { seed: 7, max_iter, ascent_starts: starts, ..FitConfig::default() };
        let fit = fit_2ssmle(&ds, &fs, &fit_cfg).unwrap();
        let b = fit.theta_hat.beta_at(0.5).unwrap();
        let bias = b[1] - true_beta(0.5).unwrap()[1];
        biases.push(bias);
        rhos.push(fit.theta_hat.gamma.rho);
        println!(
            "seed {seed}: bias {:+.3} rho {:.3} obj {:.6} conv={} it={} took {:?}",
            bias, fit.theta_hat.gamma.rho, fit.objective, fit.converged, fit.iterations, t.elapsed()
        );
    }
    let mean_bias = biases.iter().sum::<f64>() / biases.len() as f64;
    let mean_rho = rhos.iter().sum::<f64>() / rhos.len() as f64;
    println!("mean bias {:+.4}  mean rho {:.3}", mean_bias, mean_rho);
}
