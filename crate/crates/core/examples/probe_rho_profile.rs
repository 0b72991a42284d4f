use sieveqr::basis::gauss_legendre;
use sieveqr::data::Dataset;
use sieveqr::dgp::{simulate, DGPConfig, ErrorLaw};
use sieveqr::distributions::{normal_cdf, CopulaParams};
use sieveqr::first_stage::fit_parametric;
use sieveqr::likelihood::loglik;
use sieveqr::linalg::Matrix;
use sieveqr::optimize::{warm_start, FitConfig};

fn main() {
    let cfg = DGPConfig::new(2000, 0.5, 0.5, ErrorLaw::default_mixture(), 12345).unwrap();
    let sim = simulate(&cfg).unwrap();
    let ds = Dataset::from_simulated(&sim).unwrap();
    let x1t: Vec<f64> = ds.x1.iter().map(|v| v.ln()).collect();
    let zmat = Matrix::from_cols(&[vec![1.0; ds.n()], ds.z.clone()]).unwrap();
    let pre = fit_parametric(&x1t, &zmat, |r| r).unwrap();
    let sd = pre.diagnostics.sd;
    let fs = fit_parametric(&x1t, &zmat, |r| normal_cdf(r / sd)).unwrap();

    let fit_cfg = FitConfig { seed: 7, ..FitConfig::default() };
    let theta = warm_start(&ds, &fs.vhat, &fit_cfg).unwrap();
    println!("warm-start rho = {:.4}", theta.gamma.rho);
    let rule = gauss_legendre(&theta.basis, fit_cfg.quad_points).unwrap();
    for rho in [-0.2, 0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8] {
        let mut th = theta.clone();
        th.gamma = CopulaParams::new(rho).unwrap();
        let l = loglik(&ds, &fs.vhat, &th, &rule).unwrap();
        println!("rho={rho:+.2}: loglik {:.6}", l.value);
    }
}
