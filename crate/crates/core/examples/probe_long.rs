use sieveqr::data::Dataset;
use sieveqr::dgp::{simulate, true_beta, DGPConfig, ErrorLaw};
use sieveqr::distributions::normal_cdf;
use sieveqr::first_stage::fit_parametric;
use sieveqr::linalg::Matrix;
use sieveqr::optimize::{fit_2ssmle_from, warm_start_with_rho, FitConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(12345);
    let iters: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let cfg = DGPConfig::new(n, 0.5, 0.5, ErrorLaw::default_mixture(), seed).unwrap();
    let sim = simulate(&cfg).unwrap();
    let ds = Dataset::from_simulated(&sim).unwrap();
    let x1t: Vec<f64> = ds.x1.iter().map(|v| v.ln()).collect();
    let zmat = Matrix::from_cols(&[vec![1.0; ds.n()], ds.z.clone()]).unwrap();
    let pre = fit_parametric(&x1t, &zmat, |r| r).unwrap();
    let sdv = pre.diagnostics.sd;
    let fs = fit_parametric(&x1t, &zmat, |r| normal_cdf(r / sdv)).unwrap();
    let fit_cfg = FitConfig { seed: 7, max_iter: iters, ..FitConfig::default() };
    let theta = warm_start_with_rho(&ds, &fs.vhat, &fit_cfg, 0.45).unwrap();
    let t = std::time::Instant::now();
    let fit = fit_2ssmle_from(&ds, &fs, &fit_cfg, &theta).unwrap();
    println!(
        "n={n} seed={seed}: obj {:.6} conv={} iters={} rho={:.3} took {:?}",
        fit.objective, fit.converged, fit.iterations, fit.theta_hat.gamma.rho, t.elapsed()
    );
    for tau in [0.1, 0.5, 0.9] {
        let b = fit.theta_hat.beta_at(tau).unwrap();
        let tr = true_beta(tau).unwrap();
        println!("  tau={tau}: b1 {:+.3} bias, b0 {:+.3}, b2 {:+.3}", b[1]-tr[1], b[0]-tr[0], b[2]-tr[2]);
    }
    println!("  mix w={:?}\n  mu={:?}\n  s={:?}", fit.theta_hat.sigma.weights(), fit.theta_hat.sigma.means(), fit.theta_hat.sigma.sds());
}
