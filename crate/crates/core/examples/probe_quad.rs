use sieveqr::basis::{gauss_legendre, SplineBasis};
use sieveqr::distributions::CopulaParams;

fn main() {
    for (jt, q) in [(19usize, 5usize), (19, 10), (39, 5), (19, 15), (39, 10)] {
        let b = SplineBasis::uniform(jt, 1).unwrap();
        let rule = gauss_legendre(&b, q).unwrap();
        let mut worst: f64 = 0.0;
        for rho in [-0.9, -0.5, 0.0, 0.3, 0.5, 0.9] {
            for v in [0.05, 0.1, 0.3, 0.5, 0.7, 0.9, 0.95] {
                let c = CopulaParams::new(rho).unwrap();
                let mass = rule.integrate(|u| c.cond_density(u, v));
                worst = worst.max((mass - 1.0).abs());
            }
        }
        println!("jt={jt} q={q}: worst |mass-1| = {worst:.3e}");
    }
    // The paper's stated example point with the production rule.
    let b = SplineBasis::uniform(19, 1).unwrap();
    let rule = gauss_legendre(&b, 5).unwrap();
    let c = CopulaParams::new(0.5).unwrap();
    let mass = rule.integrate(|u| c.cond_density(u, 0.3));
    println!("production rule at (rho=0.5, v=0.3): |mass-1| = {:.3e}", (mass - 1.0).abs());
}
