use sieveqr::baselines;
use sieveqr::data::Dataset;
use sieveqr::dgp::{simulate, true_beta, DGPConfig, ErrorLaw};
use sieveqr::distributions::normal_cdf;
use sieveqr::first_stage::fit_parametric;
use sieveqr::linalg::Matrix;
use sieveqr::optimize::{fit_2ssmle, FitConfig};

fn main() {
    let t0 = std::time::Instant::now();
    let cfg = DGPConfig::new(2000, 0.5, 0.5, ErrorLaw::default_mixture(), 12345).unwrap();
    let sim = simulate(&cfg).unwrap();
    let ds = Dataset::from_simulated(&sim).unwrap();

    let x1t: Vec<f64> = ds.x1.iter().map(|v| v.ln()).collect();
    let zmat = Matrix::from_cols(&[vec![1.0; ds.n()], ds.z.clone()]).unwrap();
    let pre = fit_parametric(&x1t, &zmat, |r| r).unwrap();
    let sd = pre.diagnostics.sd;
    let fs = fit_parametric(&x1t, &zmat, |r| normal_cdf(r / sd)).unwrap();
    println!("first stage done t={:?}", t0.elapsed());

    let fit_cfg = FitConfig { seed: 7, ..FitConfig::default() };
    let t1 = std::time::Instant::now();
    let fit = fit_2ssmle(&ds, &fs, &fit_cfg).unwrap();
    println!(
        "fit done in {:?}; converged={} iters={} em_iters={} objective={:.6}",
        t1.elapsed(),
        fit.converged,
        fit.iterations,
        fit.em_iters,
        fit.objective
    );
    println!(
        "em path head {:?} tail {:?}",
        &fit.loglik_path[..3.min(fit.loglik_path.len())],
        &fit.loglik_path[fit.loglik_path.len().saturating_sub(3)..]
    );
    let warm_obj = fit.loglik_path[fit.em_iters];
    println!("outer start obj {:.6} -> final {:.6}", warm_obj, fit.objective);
    println!("rho_hat = {:.4}", fit.theta_hat.gamma.rho);
    println!(
        "mixture: w={:?} mu={:?} s={:?}",
        fit.theta_hat.sigma.weights(),
        fit.theta_hat.sigma.means(),
        fit.theta_hat.sigma.sds()
    );
    for tau in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let b = fit.theta_hat.beta_at(tau).unwrap();
        let t = true_beta(tau).unwrap();
        println!(
            "tau={tau:.1}: b0 {:.3} (true {:.3})  b1 {:.3} (true {:.3})  b2 {:.3} (true {:.3})",
            b[0], t[0], b[1], t[1], b[2], t[2]
        );
    }
    println!("diag {:?}", fit.diagnostics);

    // Baseline comparison at the median.
    let qr = baselines::fit_qr(&ds.x, &ds.y, 0.5).unwrap();
    let cf = baselines::fit_cfqr(&ds, &fs.vhat, 0.5, 5).unwrap();
    let t = true_beta(0.5).unwrap();
    println!("QR b1 bias {:.3}, CFQR b1 bias {:.3}", qr[1] - t[1], cf[1] - t[1]);
    println!("total {:?}", t0.elapsed());
}

#[allow(dead_code)]
fn probe_truth_objective() {}
