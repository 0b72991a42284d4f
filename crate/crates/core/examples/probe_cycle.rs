use sieveqr::basis::gauss_legendre;
use sieveqr::data::Dataset;
use sieveqr::dgp::{simulate, DGPConfig, ErrorLaw};
use sieveqr::distributions::{normal_cdf, CopulaParams};
use sieveqr::first_stage::fit_parametric;
use sieveqr::likelihood::loglik;
use sieveqr::linalg::Matrix;
use sieveqr::optimize::{warm_start_candidate, CopulaMode, FitConfig};

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
        let fit_cfg = FitConfig { seed: 7, ..FitConfig::default() };

        let mut rho = 0.0;
        print!("seed {seed}: rho path 0.00");
        for _cycle in 0..6 {
            let (theta, _, _) = warm_start_candidate(
                &ds, &fs.vhat, &fit_cfg, CopulaMode::Free, Some(rho), None,
            )
            .unwrap();
            let rule = gauss_legendre(&theta.basis, fit_cfg.quad_points).unwrap();
            let mut best = (f64::NEG_INFINITY, rho);
            for k in -17..=17 {
                let r = k as f64 / 20.0;
                let mut probe = theta.clone();
                probe.gamma = CopulaParams::with_clamp(r, fit_cfg.clamp_eps).unwrap();
                let v = loglik(&ds, &fs.vhat, &probe, &rule).unwrap().value;
                if v > best.0 {
                    best = (v, r);
                }
            }
            rho = best.1;
            print!(" -> {:.2}", rho);
        }
        println!();
    }
}
