use sieveqr::basis::{gauss_legendre, SplineBasis};
use sieveqr::data::Dataset;
use sieveqr::dgp::{simulate, true_beta, DGPConfig, ErrorLaw};
use sieveqr::distributions::{normal_cdf, CopulaParams, MixtureParams};
use sieveqr::first_stage::fit_parametric;
use sieveqr::likelihood::Theta;
use sieveqr::linalg::Matrix;
use sieveqr::optimize::{fit_2ssmle_from, FitConfig};

fn main() {
    let cfg = DGPConfig::new(2000, 0.5, 0.5, ErrorLaw::default_mixture(), 12345).unwrap();
    let sim = simulate(&cfg).unwrap();
    let ds = Dataset::from_simulated(&sim).unwrap();
    let x1t: Vec<f64> = ds.x1.iter().map(|v| v.ln()).collect();
    let zmat = Matrix::from_cols(&[vec![1.0; ds.n()], ds.z.clone()]).unwrap();
    let pre = fit_parametric(&x1t, &zmat, |r| r).unwrap();
    let sd = pre.diagnostics.sd;
    let fs = fit_parametric(&x1t, &zmat, |r| normal_cdf(r / sd)).unwrap();

    let basis = SplineBasis::uniform(19, 1).unwrap();
    let rule = gauss_legendre(&basis, 5).unwrap();
    let sigma = MixtureParams::new(vec![0.5, 0.25, 0.25], vec![-3.0, 2.0, 4.0], vec![1.0; 3]).unwrap();
    let gamma = CopulaParams::new(0.5).unwrap();
    let theta0 = Theta::from_function(&basis, &rule, |u| true_beta(u).unwrap().to_vec(), sigma, gamma).unwrap();

    let t = std::time::Instant::now();
    let fit_cfg = FitConfig { seed: 7, max_iter: 1000, ..FitConfig::default() };
    let fit = fit_2ssmle_from(&ds, &fs, &fit_cfg, &theta0).unwrap();
    println!("from truth: {:?} converged={} iters={} obj={:.6} rho={:.4}",
        t.elapsed(), fit.converged, fit.iterations, fit.objective, fit.theta_hat.gamma.rho);
    for tau in [0.1, 0.5, 0.9] {
        let b = fit.theta_hat.beta_at(tau).unwrap();
        let tr = true_beta(tau).unwrap();
        println!("tau={tau}: b1 {:.3} (true {:.3}) b0 {:.3} ({:.3}) b2 {:.3} ({:.3})", b[1], tr[1], b[0], tr[0], b[2], tr[2]);
    }
    println!("mixture w={:?} mu={:?} s={:?}", fit.theta_hat.sigma.weights(), fit.theta_hat.sigma.means(), fit.theta_hat.sigma.sds());
}
