//! Conditional outcome density via quadrature, the sample mean
//! log-likelihood, and its full analytic gradient in the free parameters.
//!
//! The density of an observation is
//! `f(y|x,v) = sum_q w_q * f_eps(y - x' B S(u_q)) * c(u_q|v)`,
//! the quadrature image of the rank integral. Evaluation is serial with a
//! fixed summation order, so results do not depend on any thread schedule.

use crate::basis::{QuadratureRule, SplineBasis};
use crate::data::Dataset;
use crate::distributions::{
    normal_quantile, CopulaParams, MixtureParams, DENSITY_FLOOR,
};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// Full second-stage parameter: spline coefficients for every component of
/// `beta(·)`, the mixture error law, and the copula dependence.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    /// `d_x x J_n` coefficient matrix; row k holds the spline coefficients of
    /// the k-th coefficient function.
    pub coef: Matrix,
    pub sigma: MixtureParams,
    pub gamma: CopulaParams,
    pub basis: SplineBasis,
}

impl Theta {
    pub fn new(coef: Matrix, sigma: MixtureParams, gamma: CopulaParams, basis: SplineBasis) -> Result<Self> {
        if coef.ncols() != basis.dim() {
            return Err(Error::Invalid(format!(
                "coefficient columns {} != basis dimension {}",
                coef.ncols(),
                basis.dim()
            )));
        }
        Ok(Self { coef, sigma, gamma, basis })
    }

    pub fn d_x(&self) -> usize {
        self.coef.nrows()
    }

    /// Coefficient functions evaluated at rank `u`.
    pub fn beta_at(&self, u: f64) -> Result<Vec<f64>> {
        let s = self.basis.eval(u)?;
        Ok((0..self.d_x())
            .map(|k| self.coef.row(k).iter().zip(&s).map(|(c, b)| c * b).sum())
            .collect())
    }

    /// Componentwise monotonicity of the spline coefficients. Nondecreasing
    /// coefficients imply a nondecreasing spline (exactly the grid values for
    /// order 1), which is the feasibility notion the optimizer enforces.
    pub fn monotone_feasible(&self, slack: f64) -> bool {
        (0..self.d_x()).all(|k| {
            self.coef.row(k).windows(2).all(|w| w[1] >= w[0] - slack)
        })
    }

    /// Project componentwise onto nondecreasing coefficients.
    pub fn isotonized(&self) -> Self {
        let mut coef = self.coef.clone();
        let w = vec![1.0; coef.ncols()];
        for k in 0..coef.nrows() {
            let row = linalg::isotonic(coef.row(k), &w);
            for (j, v) in row.iter().enumerate() {
                coef.set(k, j, *v);
            }
        }
        Self { coef, sigma: self.sigma.clone(), gamma: self.gamma, basis: self.basis.clone() }
    }

    /// Least-squares projection of a coefficient-function map onto the basis
    /// at the quadrature nodes, followed by the monotone projection.
    pub fn from_function(
        basis: &SplineBasis,
        rule: &QuadratureRule,
        f: impl Fn(f64) -> Vec<f64>,
        sigma: MixtureParams,
        gamma: CopulaParams,
    ) -> Result<Self> {
        let design = basis.eval_matrix(&rule.nodes)?;
        let probe = f(rule.nodes[0]);
        let d_x = probe.len();
        let values: Vec<Vec<f64>> = rule.nodes.iter().map(|&u| f(u)).collect();
        let mut coef = Matrix::zeros(d_x, basis.dim());
        for k in 0..d_x {
            let target: Vec<f64> = values.iter().map(|v| v[k]).collect();
            let ck = linalg::weighted_ls(&design, &target, &rule.weights)?;
            for (j, v) in ck.iter().enumerate() {
                coef.set(k, j, *v);
            }
        }
        Ok(Theta::new(coef, sigma, gamma, basis.clone())?.isotonized())
    }

    /// Number of free coordinates: the coefficient matrix, the mixture free
    /// view, and (unless the copula is frozen) the dependence parameter.
    pub fn n_free(&self, copula_free: bool) -> usize {
        self.d_x() * self.basis.dim() + self.sigma.n_free() + usize::from(copula_free)
    }

    /// Pack into the unconstrained coordinates the optimizer works in.
    pub fn pack_free(&self, copula_free: bool) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_free(copula_free));
        out.extend_from_slice(self.coef.data());
        out.extend(self.sigma.to_free());
        if copula_free {
            out.push(self.gamma.to_free());
        }
        out
    }

    /// Rebuild from packed free coordinates, keeping this value's basis,
    /// mixture size, and clamp width.
    pub fn unpack_free(&self, free: &[f64], copula_free: bool) -> Theta {
        let d_x = self.d_x();
        let jn = self.basis.dim();
        let m = self.sigma.m();
        debug_assert_eq!(free.len(), self.n_free(copula_free));
        let coef = Matrix::new(d_x, jn, free[..d_x * jn].to_vec()).expect("finite coef");
        let sigma = MixtureParams::from_free(&free[d_x * jn..d_x * jn + 3 * m - 2], m);
        let gamma = if copula_free {
            self.gamma.from_free(free[d_x * jn + 3 * m - 2])
        } else {
            self.gamma
        };
        Theta { coef, sigma, gamma, basis: self.basis.clone() }
    }

    /// Canonical form for cross-replication comparisons: mixture components
    /// sorted by mean.
    pub fn canonicalized(&self) -> Self {
        Self {
            coef: self.coef.clone(),
            sigma: self.sigma.sorted_by_mean(),
            gamma: self.gamma,
            basis: self.basis.clone(),
        }
    }
}

/// Value of a likelihood evaluation plus its pathology counter (observations
/// whose density hit the floor).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodEval {
    pub value: f64,
    pub floored: usize,
}

/// Cached quadrature-dependent quantities: basis rows at the nodes, normal
/// scores of the nodes, and normal scores of the generated controls.
#[derive(Debug, Clone)]
pub struct LikelihoodWorkspace {
    pub(crate) s_nodes: Matrix,
    pub(crate) a_nodes: Vec<f64>,
    pub(crate) b_obs: Vec<f64>,
}

impl LikelihoodWorkspace {
    pub fn new(
        basis: &SplineBasis,
        rule: &QuadratureRule,
        vhat: &[f64],
        clamp_eps: f64,
    ) -> Result<Self> {
        let s_nodes = basis.eval_matrix(&rule.nodes)?;
        let a_nodes = rule
            .nodes
            .iter()
            .map(|&u| normal_quantile(u.max(clamp_eps).min(1.0 - clamp_eps)))
            .collect();
        let b_obs = vhat
            .iter()
            .map(|&v| normal_quantile(v.max(clamp_eps).min(1.0 - clamp_eps)))
            .collect();
        Ok(Self { s_nodes, a_nodes, b_obs })
    }
}

/// Fused likelihood/gradient evaluator over one dataset.
pub(crate) struct SieveLikelihood<'a> {
    pub data: &'a Dataset,
    pub rule: &'a QuadratureRule,
    pub ws: LikelihoodWorkspace,
    /// When false the copula is frozen at independence and excluded from the
    /// packed coordinates (the exogenous special case).
    pub copula_free: bool,
}

impl<'a> SieveLikelihood<'a> {
    pub fn new(
        data: &'a Dataset,
        basis: &SplineBasis,
        rule: &'a QuadratureRule,
        vhat: &[f64],
        clamp_eps: f64,
        copula_free: bool,
    ) -> Result<Self> {
        if vhat.len() != data.n() {
            return Err(Error::Invalid("vhat length != data length".into()));
        }
        let ws = LikelihoodWorkspace::new(basis, rule, vhat, clamp_eps)?;
        Ok(Self { data, rule, ws, copula_free })
    }

    /// Structural part `x_i' B S(u_q)` for all nodes, laid out `q`-major.
    fn node_predictor(&self, theta: &Theta) -> Vec<f64> {
        let q_n = self.rule.len();
        let d_x = theta.d_x();
        let jn = theta.basis.dim();
        let mut xb = vec![0.0; q_n * d_x];
        for q in 0..q_n {
            let s = self.ws.s_nodes.row(q);
            for k in 0..d_x {
                let row = theta.coef.row(k);
                let mut acc = 0.0;
                for j in 0..jn {
                    acc += row[j] * s[j];
                }
                xb[q * d_x + k] = acc;
            }
        }
        xb
    }

    /// Mean log-likelihood.
    pub fn value(&self, theta: &Theta) -> LikelihoodEval {
        let n = self.data.n();
        let q_n = self.rule.len();
        let d_x = theta.d_x();
        let xb = self.node_predictor(theta);
        let rho = if self.copula_free { theta.gamma.rho } else { 0.0 };
        let om = 1.0 - rho * rho;
        let alpha = -rho * rho / (2.0 * om);
        let beta_c = rho / om;
        let s0 = 1.0 / om.sqrt();
        let ea: Vec<f64> = self.ws.a_nodes.iter().map(|&a| (alpha * a * a).exp()).collect();

        let mut total = 0.0;
        let mut floored = 0usize;
        for i in 0..n {
            let xi = self.data.x.row(i);
            let yi = self.data.y[i];
            let bi = self.ws.b_obs[i];
            let eb = s0 * (alpha * bi * bi).exp();
            let mut fi = 0.0;
            for q in 0..q_n {
                let mut pred = 0.0;
                for k in 0..d_x {
                    pred += xi[k] * xb[q * d_x + k];
                }
                let e = yi - pred;
                let c = if rho == 0.0 {
                    1.0
                } else {
                    eb * ea[q] * (beta_c * self.ws.a_nodes[q] * bi).exp()
                };
                fi += self.rule.weights[q] * c * theta.sigma.pdf(e);
            }
            if !(fi > DENSITY_FLOOR) {
                floored += 1;
                fi = DENSITY_FLOOR;
            }
            total += fi.ln();
        }
        LikelihoodEval { value: total / n as f64, floored }
    }

    /// Mean log-likelihood and its gradient in the packed free coordinates.
    pub fn value_and_grad(&self, theta: &Theta) -> (LikelihoodEval, Vec<f64>) {
        let n = self.data.n();
        let q_n = self.rule.len();
        let d_x = theta.d_x();
        let jn = theta.basis.dim();
        let m = theta.sigma.m();
        let xb = self.node_predictor(theta);
        let rho = if self.copula_free { theta.gamma.rho } else { 0.0 };
        let om = 1.0 - rho * rho;
        let alpha = -rho * rho / (2.0 * om);
        let beta_c = rho / om;
        let s0 = 1.0 / om.sqrt();
        let ea: Vec<f64> = self.ws.a_nodes.iter().map(|&a| (alpha * a * a).exp()).collect();

        let weights = theta.sigma.weights();
        let means = theta.sigma.means();
        let sds = theta.sigma.sds();

        // Per-node scratch reused across observations.
        let mut comp = vec![0.0; q_n * m]; // component densities
        let mut feps = vec![0.0; q_n];
        let mut cvals = vec![0.0; q_n];
        // Accumulators.
        let mut mcoef = vec![0.0; d_x * q_n]; // sum_i x_ik t_iq
        let mut gnat = vec![0.0; 3 * m];
        let mut grho = 0.0;
        let mut total = 0.0;
        let mut floored = 0usize;

        for i in 0..n {
            let xi = self.data.x.row(i);
            let yi = self.data.y[i];
            let bi = self.ws.b_obs[i];
            let eb = s0 * (alpha * bi * bi).exp();
            let mut fi = 0.0;
            for q in 0..q_n {
                let mut pred = 0.0;
                for k in 0..d_x {
                    pred += xi[k] * xb[q * d_x + k];
                }
                let e = yi - pred;
                let mut fq = 0.0;
                for j in 0..m {
                    let z = (e - means[j]) / sds[j];
                    let nj = (-0.5 * z * z).exp() / (sds[j] * 2.5066282746310002);
                    comp[q * m + j] = nj;
                    fq += weights[j] * nj;
                }
                feps[q] = fq;
                let c = if rho == 0.0 {
                    1.0
                } else {
                    eb * ea[q] * (beta_c * self.ws.a_nodes[q] * bi).exp()
                };
                cvals[q] = c;
                fi += self.rule.weights[q] * c * fq;
            }
            if !(fi > DENSITY_FLOOR) {
                floored += 1;
                fi = DENSITY_FLOOR;
            }
            total += fi.ln();
            let inv_fi = 1.0 / fi;

            for q in 0..q_n {
                let wq = self.rule.weights[q];
                let base = wq * cvals[q] * inv_fi;
                let mut pred = 0.0;
                for k in 0..d_x {
                    pred += xi[k] * xb[q * d_x + k];
                }
                let e = yi - pred;
                // d f_eps / d e and natural-parameter pieces.
                let mut dfde = 0.0;
                for j in 0..m {
                    let nj = comp[q * m + j];
                    let z = (e - means[j]) / sds[j];
                    dfde -= weights[j] * nj * z / sds[j];
                    gnat[j] += base * nj;
                    gnat[m + j] += base * weights[j] * nj * z / sds[j];
                    gnat[2 * m + j] += base * weights[j] * nj * (z * z - 1.0) / sds[j];
                }
                let t = base * dfde;
                for k in 0..d_x {
                    mcoef[k * q_n + q] += xi[k] * t;
                }
                if self.copula_free {
                    let a = self.ws.a_nodes[q];
                    let dc = cvals[q]
                        * (rho * om - rho * (a * a + bi * bi) + a * bi * (1.0 + rho * rho))
                        / (om * om);
                    grho += wq * feps[q] * dc * inv_fi;
                }
            }
        }

        let nf = n as f64;
        let mut grad = vec![0.0; theta.n_free(self.copula_free)];
        // Coefficient block: -(1/n) * M * S.
        for k in 0..d_x {
            for j in 0..jn {
                let mut acc = 0.0;
                for q in 0..q_n {
                    acc += mcoef[k * q_n + q] * self.ws.s_nodes.get(q, j);
                }
                grad[k * jn + j] = -acc / nf;
            }
        }
        // Mixture block through the free-parameter Jacobian.
        let jac = theta.sigma.free_jacobian();
        for c in 0..theta.sigma.n_free() {
            let mut acc = 0.0;
            for r in 0..3 * m {
                acc += jac.get(r, c) * gnat[r];
            }
            grad[d_x * jn + c] = acc / nf;
        }
        if self.copula_free {
            let last = grad.len() - 1;
            grad[last] = grho * theta.gamma.drho_dfree() / nf;
        }
        (LikelihoodEval { value: total / nf, floored }, grad)
    }
}

/// Conditional density `f(y | x, v; theta)` under the given quadrature rule.
pub fn cond_density(y: f64, x: &[f64], v: f64, theta: &Theta, rule: &QuadratureRule) -> Result<f64> {
    if x.len() != theta.d_x() {
        return Err(Error::Invalid("x length != d_x".into()));
    }
    let eps = theta.gamma.clamp_eps;
    let b = normal_quantile(v.max(eps).min(1.0 - eps));
    let mut total = 0.0;
    let mut s = vec![0.0; theta.basis.dim()];
    for (q, (&u, &w)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
        let _ = q;
        theta.basis.eval_into(u, &mut s);
        let mut pred = 0.0;
        for k in 0..theta.d_x() {
            let row = theta.coef.row(k);
            let mut bk = 0.0;
            for j in 0..s.len() {
                bk += row[j] * s[j];
            }
            pred += x[k] * bk;
        }
        let a = normal_quantile(u.max(eps).min(1.0 - eps));
        let c = theta.gamma.cond_density_scores(a, b);
        total += w * c * theta.sigma.pdf(y - pred);
    }
    Ok(total.max(0.0))
}

/// Mean log-likelihood over the dataset with generated controls `vhat`.
pub fn loglik(
    data: &Dataset,
    vhat: &[f64],
    theta: &Theta,
    rule: &QuadratureRule,
) -> Result<LikelihoodEval> {
    let eval = SieveLikelihood::new(data, &theta.basis, rule, vhat, theta.gamma.clamp_eps, true)?;
    Ok(eval.value(theta))
}

/// Mean log-likelihood and its gradient over (vec coef, free sigma, free gamma).
pub fn grad_loglik(
    data: &Dataset,
    vhat: &[f64],
    theta: &Theta,
    rule: &QuadratureRule,
) -> Result<(LikelihoodEval, Vec<f64>)> {
    let eval = SieveLikelihood::new(data, &theta.basis, rule, vhat, theta.gamma.clamp_eps, true)?;
    Ok(eval.value_and_grad(theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::gauss_legendre;
    use crate::dgp::{simulate, true_beta, DGPConfig, ErrorLaw};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn constant_theta(value: Vec<f64>, basis: &SplineBasis) -> Theta {
        let d_x = value.len();
        let mut coef = Matrix::zeros(d_x, basis.dim());
        for k in 0..d_x {
            for j in 0..basis.dim() {
                coef.set(k, j, value[k]);
            }
        }
        Theta::new(
            coef,
            MixtureParams::new(vec![1.0], vec![0.0], vec![1.0]).unwrap(),
            CopulaParams::new(0.0).unwrap(),
            basis.clone(),
        )
        .unwrap()
    }

    fn small_dataset(n: usize, seed: u64, rho: f64) -> (Dataset, Vec<f64>) {
        let cfg = DGPConfig::new(n, 0.5, rho, ErrorLaw::default_mixture(), seed).unwrap();
        let sim = simulate(&cfg).unwrap();
        let ds = Dataset::from_simulated(&sim).unwrap();
        let vhat = sim.oracle_v.clone();
        (ds, vhat)
    }

    fn paper_theta(basis: &SplineBasis, rule: &QuadratureRule, rho: f64) -> Theta {
        Theta::from_function(
            basis,
            rule,
            |u| true_beta(u).unwrap().to_vec(),
            MixtureParams::new(vec![0.5, 0.25, 0.25], vec![-3.0, 2.0, 4.0], vec![1.0, 1.0, 1.0])
                .unwrap(),
            CopulaParams::new(rho).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn constant_beta_reduces_to_error_density() {
        let basis = SplineBasis::uniform(3, 1).unwrap();
        let rule = gauss_legendre(&basis, 4).unwrap();
        let theta = constant_theta(vec![1.0, 2.0], &basis);
        // y = x' beta exactly.
        let x = [1.0, 0.5];
        let y = 1.0 + 2.0 * 0.5;
        let f = cond_density(y, &x, 0.37, &theta, &rule).unwrap();
        assert_abs_diff_eq!(f, 1.0 / (2.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-12);
        let f1 = cond_density(y + 1.0, &x, 0.37, &theta, &rule).unwrap();
        assert_abs_diff_eq!(f1, 0.24197072451914337, epsilon = 1e-12);
    }

    #[test]
    fn loglik_single_observation_reference() {
        let basis = SplineBasis::uniform(3, 1).unwrap();
        let rule = gauss_legendre(&basis, 4).unwrap();
        let theta = constant_theta(vec![1.0, 2.0], &basis);
        let data = Dataset {
            y: vec![2.0],
            x: Matrix::from_rows(&[vec![1.0, 0.5]]).unwrap(),
            x1: vec![0.5],
            z: vec![0.0],
        };
        let eval = loglik(&data, &[0.37], &theta, &rule).unwrap();
        assert_abs_diff_eq!(eval.value, -0.9189385332046727, epsilon = 1e-10);
        assert_eq!(eval.floored, 0);
    }

    #[test]
    fn mean_loglik_invariant_to_duplication() {
        let basis = SplineBasis::uniform(4, 1).unwrap();
        let rule = gauss_legendre(&basis, 3).unwrap();
        let (data, vhat) = small_dataset(40, 3, 0.5);
        let theta = paper_theta(&basis, &rule, 0.5);
        let base = loglik(&data, &vhat, &theta, &rule).unwrap().value;
        let idx: Vec<usize> = (0..40).chain(0..40).collect();
        let doubled = data.resample(&idx);
        let vhat2: Vec<f64> = idx.iter().map(|&i| vhat[i]).collect();
        let twice = loglik(&doubled, &vhat2, &theta, &rule).unwrap().value;
        assert_abs_diff_eq!(base, twice, epsilon = 1e-12);
    }

    #[test]
    fn density_integrates_to_one_in_y() {
        // The y-mass of the quadrature density equals the copula mass under
        // the rule, so 10 points per cell are needed to hold 1e-4 at rho=0.5
        // (5 points leave ~1.4e-4 from the boundary cells).
        let basis = SplineBasis::uniform(19, 1).unwrap();
        let rule = gauss_legendre(&basis, 10).unwrap();
        let theta = paper_theta(&basis, &rule, 0.5);
        let (data, vhat) = small_dataset(5, 11, 0.5);
        for i in 0..data.n() {
            let x = data.x.row(i);
            let blo = theta.beta_at(0.0).unwrap();
            let bhi = theta.beta_at(1.0).unwrap();
            let qlo: f64 = x.iter().zip(&blo).map(|(a, b)| a * b).sum::<f64>() - 15.0;
            let qhi: f64 = x.iter().zip(&bhi).map(|(a, b)| a * b).sum::<f64>() + 15.0;
            let ngrid = 4000;
            let h = (qhi - qlo) / ngrid as f64;
            let mut mass = 0.0;
            for g in 0..=ngrid {
                let y = qlo + g as f64 * h;
                let f = cond_density(y, x, vhat[i], &theta, &rule).unwrap();
                let w = if g == 0 || g == ngrid { 0.5 } else { 1.0 };
                mass += w * f * h;
            }
            assert!((mass - 1.0).abs() < 1e-4, "obs {i}: mass {mass}");
        }
    }

    #[test]
    fn truth_beats_shifted_parameter() {
        let basis = SplineBasis::uniform(19, 1).unwrap();
        let rule = gauss_legendre(&basis, 5).unwrap();
        let (data, vhat) = small_dataset(5000, 7, 0.5);
        let theta = paper_theta(&basis, &rule, 0.5);
        let l_true = loglik(&data, &vhat, &theta, &rule).unwrap().value;
        let mut shifted = theta.clone();
        let mut coef = shifted.coef.clone();
        for k in 0..coef.nrows() {
            for j in 0..coef.ncols() {
                coef.set(k, j, coef.get(k, j) + 0.5);
            }
        }
        shifted.coef = coef;
        let l_shift = loglik(&data, &vhat, &shifted, &rule).unwrap().value;
        assert!(l_true > l_shift, "truth {l_true} vs shifted {l_shift}");
    }

    #[test]
    fn flipping_dependence_sign_lowers_loglik() {
        let basis = SplineBasis::uniform(19, 1).unwrap();
        let rule = gauss_legendre(&basis, 5).unwrap();
        let (data, vhat) = small_dataset(5000, 19, 0.5);
        let plus = paper_theta(&basis, &rule, 0.5);
        let minus = paper_theta(&basis, &rule, -0.5);
        let lp = loglik(&data, &vhat, &plus, &rule).unwrap().value;
        let lm = loglik(&data, &vhat, &minus, &rule).unwrap().value;
        assert!(lp > lm, "rho=+0.5: {lp}, rho=-0.5: {lm}");
    }

    #[test]
    fn component_relabeling_leaves_density_unchanged() {
        let basis = SplineBasis::uniform(4, 1).unwrap();
        let rule = gauss_legendre(&basis, 4).unwrap();
        let theta = paper_theta(&basis, &rule, 0.3);
        let permuted = Theta::new(
            theta.coef.clone(),
            MixtureParams::new(vec![0.25, 0.25, 0.5], vec![2.0, 4.0, -3.0], vec![1.0, 1.0, 1.0])
                .unwrap(),
            theta.gamma,
            theta.basis.clone(),
        )
        .unwrap();
        let (data, vhat) = small_dataset(30, 2, 0.3);
        for i in 0..data.n() {
            let f0 = cond_density(data.y[i], data.x.row(i), vhat[i], &theta, &rule).unwrap();
            let f1 = cond_density(data.y[i], data.x.row(i), vhat[i], &permuted, &rule).unwrap();
            assert_abs_diff_eq!(f0, f1, epsilon = 1e-13);
        }
    }

    #[test]
    fn quadrature_consistency_under_refinement() {
        let basis = SplineBasis::uniform(19, 1).unwrap();
        let rule5 = gauss_legendre(&basis, 5).unwrap();
        let rule10 = gauss_legendre(&basis, 10).unwrap();
        let (data, vhat) = small_dataset(2000, 23, 0.5);
        // Independence copula: the integrand is panel-smooth (kinks only at
        // the knots) and doubling q moves the objective below 1e-6.
        let theta0 = paper_theta(&basis, &rule5, 0.0);
        let l5 = loglik(&data, &vhat, &theta0, &rule5).unwrap().value;
        let l10 = loglik(&data, &vhat, &theta0, &rule10).unwrap().value;
        assert!((l5 - l10).abs() <= 1e-6, "rho=0: q=5 {l5} vs q=10 {l10}");
        // With dependence the copula factor is not panel-smooth at the rank
        // boundaries; the measured refinement gap sits near 1e-5.
        let theta = paper_theta(&basis, &rule5, 0.5);
        let l5 = loglik(&data, &vhat, &theta, &rule5).unwrap().value;
        let l10 = loglik(&data, &vhat, &theta, &rule10).unwrap().value;
        assert!((l5 - l10).abs() <= 2e-5, "rho=0.5: q=5 {l5} vs q=10 {l10}");
    }

    fn random_feasible_theta(
        basis: &SplineBasis,
        m: usize,
        rng: &mut ChaCha8Rng,
        copula_free: bool,
    ) -> Theta {
        let d_x = 3;
        let mut coef = Matrix::zeros(d_x, basis.dim());
        for k in 0..d_x {
            let mut level = -1.0 + 2.0 * rng.random::<f64>();
            for j in 0..basis.dim() {
                level += rng.random::<f64>() * 0.8;
                coef.set(k, j, level);
            }
        }
        let free: Vec<f64> = (0..3 * m - 2).map(|_| rng.random::<f64>() * 1.4 - 0.7).collect();
        let sigma = MixtureParams::from_free(&free, m);
        let rho = if copula_free { 1.2 * rng.random::<f64>() - 0.6 } else { 0.0 };
        Theta::new(coef, sigma, CopulaParams::new(rho).unwrap(), basis.clone()).unwrap()
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for point in 0..20 {
            let (jt, r) = if point % 2 == 0 { (4, 1) } else { (3, 2) };
            let basis = SplineBasis::uniform(jt, r).unwrap();
            let rule = gauss_legendre(&basis, 3).unwrap();
            let (data, vhat) = small_dataset(60, 100 + point as u64, 0.4);
            let theta = random_feasible_theta(&basis, 3, &mut rng, true);
            let (_, grad) = grad_loglik(&data, &vhat, &theta, &rule).unwrap();
            let free = theta.pack_free(true);
            let h = 1e-6;
            for c in 0..free.len() {
                let mut up = free.clone();
                up[c] += h;
                let lu = loglik(&data, &vhat, &theta.unpack_free(&up, true), &rule).unwrap().value;
                up[c] -= 2.0 * h;
                let ld = loglik(&data, &vhat, &theta.unpack_free(&up, true), &rule).unwrap().value;
                let fd = (lu - ld) / (2.0 * h);
                let denom = fd.abs().max(1.0);
                assert!(
                    (grad[c] - fd).abs() <= 1e-5 * denom,
                    "point {point}, coord {c}: analytic {} vs fd {fd}",
                    grad[c]
                );
            }
        }
    }
}
