use sieveqr::basis::{gauss_legendre, SplineBasis};
use sieveqr::data::Dataset;
use sieveqr::dgp::{simulate, true_beta, DGPConfig, ErrorLaw};
use sieveqr::distributions::{normal_cdf, CopulaParams, MixtureParams};
use sieveqr::first_stage::fit_parametric;
use sieveqr::likelihood::{loglik, Theta};
use sieveqr::linalg::Matrix;

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
    let theta = Theta::from_function(&basis, &rule, |u| true_beta(u).unwrap().to_vec(), sigma, gamma).unwrap();
    let l = loglik(&ds, &fs.vhat, &theta, &rule).unwrap();
    println!("loglik at projected truth: {:.6} (floored {})", l.value, l.floored);
}
