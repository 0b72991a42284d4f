//! Gaussian-mixture error law, Gaussian copula conditional density, and
//! standard-normal primitives, all with the analytic derivatives the
//! likelihood gradient needs.
//!
//! Both parameter families carry an unconstrained "free" reparametrization
//! (softmax weights, log standard deviations, atanh correlation) so the outer
//! optimizer is box-free in these coordinates. The mixture is kept mean zero
//! exactly by solving the last component mean from the others.

use rand::Rng;
use statrs::function::erf::erf_inv;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Densities are floored at this value before logs are taken; hits are
/// reported through pathology counters rather than silently masked.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Default clamp applied to ranks before the normal quantile transform.
pub const DEFAULT_CLAMP_EPS: f64 = 1e-6;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const SQRT_2PI: f64 = 2.5066282746310002;

/// Complementary error function via Cody's rational Chebyshev
/// approximations; relative error around 1e-16 across the whole line.
fn erfc_cody(x: f64) -> f64 {
    const A: [f64; 5] = [
        3.16112374387056560e0,
        1.13864154151050156e2,
        3.77485237685302021e2,
        3.20937758913846947e3,
        1.85777706184603153e-1,
    ];
    const B: [f64; 4] =
        [2.36012909523441209e1, 2.44024637934444173e2, 1.28261652607737228e3, 2.84423683343917062e3];
    const C: [f64; 9] = [
        5.64188496988670089e-1,
        8.88314979438837594e0,
        6.61191906371416295e1,
        2.98635138197400131e2,
        8.81952221241769090e2,
        1.71204761263407058e3,
        2.05107837782607147e3,
        1.23033935479799725e3,
        2.15311535474403846e-8,
    ];
    const D: [f64; 8] = [
        1.57449261107098347e1,
        1.17693950891312499e2,
        5.37181101862009858e2,
        1.62138957456669019e3,
        3.29079923573345963e3,
        4.36261909014324716e3,
        3.43936767414372164e3,
        1.23033935480374942e3,
    ];
    const P: [f64; 6] = [
        3.05326634961232344e-1,
        3.60344899949804439e-1,
        1.25781726111229246e-1,
        1.60837851487422766e-2,
        6.58749161529837803e-4,
        1.63153871373020978e-2,
    ];
    const Q: [f64; 5] = [
        2.56852019228982242e0,
        1.87295284992346047e0,
        5.27905102951428412e-1,
        6.05183413124413191e-2,
        2.33520497626869185e-3,
    ];
    const INV_SQRT_PI: f64 = 5.64189583547756287e-1;

    if x.is_nan() {
        return f64::NAN;
    }
    let y = x.abs();
    let result = if y <= 0.46875 {
        let ysq = if y > 1e-300 { y * y } else { 0.0 };
        let mut xnum = A[4] * ysq;
        let mut xden = ysq;
        for i in 0..3 {
            xnum = (xnum + A[i]) * ysq;
            xden = (xden + B[i]) * ysq;
        }
        return 1.0 - x * (xnum + A[3]) / (xden + B[3]);
    } else if y <= 4.0 {
        let mut xnum = C[8] * y;
        let mut xden = y;
        for i in 0..7 {
            xnum = (xnum + C[i]) * y;
            xden = (xden + D[i]) * y;
        }
        let r = (xnum + C[7]) / (xden + D[7]);
        let ysq = (y * 16.0).trunc() / 16.0;
        let del = (y - ysq) * (y + ysq);
        (-ysq * ysq).exp() * (-del).exp() * r
    } else if y < 26.6 {
        let ysq = 1.0 / (y * y);
        let mut xnum = P[5] * ysq;
        let mut xden = ysq;
        for i in 0..4 {
            xnum = (xnum + P[i]) * ysq;
            xden = (xden + Q[i]) * ysq;
        }
        let mut r = ysq * (xnum + P[4]) / (xden + Q[4]);
        r = (INV_SQRT_PI - r) / y;
        let ysq = (y * 16.0).trunc() / 16.0;
        let del = (y - ysq) * (y + ysq);
        (-ysq * ysq).exp() * (-del).exp() * r
    } else {
        0.0
    };
    if x < 0.0 {
        2.0 - result
    } else {
        result
    }
}

/// Standard normal density.
#[inline]
pub fn normal_pdf(t: f64) -> f64 {
    (-0.5 * t * t).exp() / SQRT_2PI
}

/// Standard normal CDF, absolute error below 1e-15.
#[inline]
pub fn normal_cdf(t: f64) -> f64 {
    0.5 * erfc_cody(-t / SQRT_2)
}

/// Standard normal quantile.
///
/// Returns `-inf` / `+inf` at p <= 0 / p >= 1; callers clamp ranks before use.
/// A Halley refinement of the inverse-erf seed keeps the absolute error well
/// below 1e-9 on (0,1).
pub fn normal_quantile(p: f64) -> f64 {
    if p.is_nan() {
        return f64::NAN;
    }
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let mut x = SQRT_2 * erf_inv(2.0 * p - 1.0);
    if !x.is_finite() {
        // Tail fallback: asymptotic expansion seed.
        let q = p.min(1.0 - p);
        let t = (-2.0 * q.ln()).sqrt();
        x = t - (2.515517 + 0.802853 * t + 0.010328 * t * t)
            / (1.0 + 1.432788 * t + 0.189269 * t * t + 0.001308 * t * t * t);
        if p < 0.5 {
            x = -x;
        }
    }
    // One Halley step against the high-precision CDF.
    for _ in 0..2 {
        let e = normal_cdf(x) - p;
        if e == 0.0 {
            break;
        }
        let u = e * SQRT_2PI * (0.5 * x * x).exp();
        x -= u / (1.0 + 0.5 * x * u);
    }
    x
}

/// Finite Gaussian mixture with the mean-zero constraint built in.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    weights: Vec<f64>,
    means: Vec<f64>,
    sds: Vec<f64>,
}

impl MixtureParams {
    /// Build a mixture; the last mean is recomputed from the others so that
    /// `sum(weights * means) == 0` holds exactly.
    pub fn new(weights: Vec<f64>, means: Vec<f64>, sds: Vec<f64>) -> Result<Self> {
        let m = weights.len();
        if m == 0 || means.len() != m || sds.len() != m {
            return Err(Error::Invalid("mixture parameter lengths disagree".into()));
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::Invalid("mixture weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-8 {
            return Err(Error::Invalid(format!("mixture weights sum to {total}, not 1")));
        }
        if sds.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Invalid("mixture sds must be positive".into()));
        }
        if means.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mixture means must be finite".into()));
        }
        let mut weights = weights;
        let wlast = 1.0 - weights[..m - 1].iter().sum::<f64>();
        weights[m - 1] = wlast;
        let mut means = means;
        let head: f64 = weights[..m - 1].iter().zip(&means).map(|(w, mu)| w * mu).sum();
        means[m - 1] = -head / weights[m - 1];
        Ok(Self { weights, means, sds })
    }

    pub fn m(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn sds(&self) -> &[f64] {
        &self.sds
    }

    /// Number of free parameters: (m-1) weight logits, (m-1) means, m log-sds.
    pub fn n_free(&self) -> usize {
        3 * self.m() - 2
    }

    /// Mixture mean; zero by construction up to rounding.
    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.means).map(|(w, mu)| w * mu).sum()
    }

    pub fn variance(&self) -> f64 {
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(w, (mu, s))| w * (mu * mu + s * s))
            .sum()
    }

    /// Free view: logits relative to the last weight, the first m-1 means,
    /// then log standard deviations.
    pub fn to_free(&self) -> Vec<f64> {
        let m = self.m();
        let mut out = Vec::with_capacity(self.n_free());
        let last = self.weights[m - 1];
        for j in 0..m - 1 {
            out.push((self.weights[j] / last).ln());
        }
        out.extend_from_slice(&self.means[..m - 1]);
        out.extend(self.sds.iter().map(|s| s.ln()));
        out
    }

    /// Rebuild from the free view; mean zero holds exactly by construction.
    pub fn from_free(free: &[f64], m: usize) -> Self {
        assert_eq!(free.len(), 3 * m - 2);
        let logits = &free[..m - 1];
        let maxl = logits.iter().cloned().fold(0.0f64, f64::max);
        let mut weights: Vec<f64> = logits.iter().map(|w| (w - maxl).exp()).collect();
        weights.push((-maxl).exp());
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let mut means: Vec<f64> = free[m - 1..2 * m - 2].to_vec();
        let head: f64 = weights[..m - 1].iter().zip(&means).map(|(w, mu)| w * mu).sum();
        means.push(-head / weights[m - 1]);
        let sds: Vec<f64> = free[2 * m - 2..].iter().map(|t| t.exp()).collect();
        Self { weights, means, sds }
    }

    /// Density of component `j` (without its weight).
    #[inline]
    pub fn comp_pdf(&self, j: usize, e: f64) -> f64 {
        normal_pdf((e - self.means[j]) / self.sds[j]) / self.sds[j]
    }

    /// Mixture density.
    pub fn pdf(&self, e: f64) -> f64 {
        (0..self.m()).map(|j| self.weights[j] * self.comp_pdf(j, e)).sum()
    }

    /// Derivative of the density in its argument.
    pub fn dpdf_de(&self, e: f64) -> f64 {
        (0..self.m())
            .map(|j| {
                let z = (e - self.means[j]) / self.sds[j];
                -self.weights[j] * self.comp_pdf(j, e) * z / self.sds[j]
            })
            .sum()
    }

    /// Gradient of the density in the natural parameters
    /// (all weights, all means, all sds), written into `out` (length 3m).
    pub fn pdf_grad_natural(&self, e: f64, out: &mut [f64]) {
        let m = self.m();
        debug_assert_eq!(out.len(), 3 * m);
        for j in 0..m {
            let nj = self.comp_pdf(j, e);
            let z = (e - self.means[j]) / self.sds[j];
            out[j] = nj;
            out[m + j] = self.weights[j] * nj * z / self.sds[j];
            out[2 * m + j] = self.weights[j] * nj * (z * z - 1.0) / self.sds[j];
        }
    }

    /// Jacobian of natural parameters in the free ones: rows are
    /// (weights, means, sds), columns (logits, free means, log sds).
    pub fn free_jacobian(&self) -> Matrix {
        let m = self.m();
        let mut jac = Matrix::zeros(3 * m, 3 * m - 2);
        for j in 0..m {
            for k in 0..m - 1 {
                let delta = if j == k { 1.0 } else { 0.0 };
                jac.set(j, k, self.weights[j] * (delta - self.weights[k]));
            }
        }
        for j in 0..m - 1 {
            jac.set(m + j, (m - 1) + j, 1.0);
        }
        let wm = self.weights[m - 1];
        for k in 0..m - 1 {
            // Last mean responds to both the logits and the free means.
            jac.set(2 * m - 1, k, -self.weights[k] * self.means[k] / wm);
            jac.set(2 * m - 1, (m - 1) + k, -self.weights[k] / wm);
        }
        for j in 0..m {
            jac.set(2 * m + j, (2 * m - 2) + j, self.sds[j]);
        }
        jac
    }

    /// Gradient of the density in the free parameters.
    pub fn pdf_grad_free(&self, e: f64) -> Vec<f64> {
        let m = self.m();
        let mut nat = vec![0.0; 3 * m];
        self.pdf_grad_natural(e, &mut nat);
        let jac = self.free_jacobian();
        (0..self.n_free())
            .map(|k| (0..3 * m).map(|r| jac.get(r, k) * nat[r]).sum())
            .collect()
    }

    /// Draw one value: component from the weights, then a normal draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut j = self.m() - 1;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                j = k;
                break;
            }
        }
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        self.means[j] + self.sds[j] * z
    }

    /// Relabel components in increasing order of mean.
    pub fn sorted_by_mean(&self) -> Self {
        let mut idx: Vec<usize> = (0..self.m()).collect();
        idx.sort_by(|&a, &b| self.means[a].total_cmp(&self.means[b]));
        Self {
            weights: idx.iter().map(|&j| self.weights[j]).collect(),
            means: idx.iter().map(|&j| self.means[j]).collect(),
            sds: idx.iter().map(|&j| self.sds[j]).collect(),
        }
    }
}

/// Gaussian copula dependence parameter with rank clamping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CopulaParams {
    pub rho: f64,
    pub clamp_eps: f64,
}

impl CopulaParams {
    pub fn new(rho: f64) -> Result<Self> {
        Self::with_clamp(rho, DEFAULT_CLAMP_EPS)
    }

    pub fn with_clamp(rho: f64, clamp_eps: f64) -> Result<Self> {
        if !(rho > -1.0 && rho < 1.0) {
            return Err(Error::Invalid(format!("copula rho = {rho} outside (-1,1)")));
        }
        if !(clamp_eps > 0.0 && clamp_eps < 0.5) {
            return Err(Error::Invalid("clamp epsilon must lie in (0, 0.5)".into()));
        }
        Ok(Self { rho, clamp_eps })
    }

    /// Clamp a rank into `[eps, 1-eps]` before the quantile transform.
    #[inline]
    pub fn clamp(&self, u: f64) -> f64 {
        u.max(self.clamp_eps).min(1.0 - self.clamp_eps)
    }

    pub fn to_free(&self) -> f64 {
        self.rho.atanh()
    }

    pub fn from_free(&self, free: f64) -> Self {
        Self { rho: free.tanh(), clamp_eps: self.clamp_eps }
    }

    /// d rho / d free at the current value.
    pub fn drho_dfree(&self) -> f64 {
        1.0 - self.rho * self.rho
    }

    /// Conditional density c(u|v) on normal scores a = Phi^-1(u), b = Phi^-1(v).
    #[inline]
    pub fn cond_density_scores(&self, a: f64, b: f64) -> f64 {
        let r = self.rho;
        let om = 1.0 - r * r;
        let expo = -(r * r * a * a - 2.0 * r * a * b + r * r * b * b) / (2.0 * om);
        expo.exp() / om.sqrt()
    }

    /// Conditional (= joint) copula density c(u|v; rho).
    pub fn cond_density(&self, u: f64, v: f64) -> f64 {
        let a = normal_quantile(self.clamp(u));
        let b = normal_quantile(self.clamp(v));
        self.cond_density_scores(a, b)
    }

    /// Partial derivative in u.
    pub fn d_du(&self, u: f64, v: f64) -> f64 {
        let a = normal_quantile(self.clamp(u));
        let b = normal_quantile(self.clamp(v));
        let c = self.cond_density_scores(a, b);
        let r = self.rho;
        c * r * (b - r * a) / (1.0 - r * r) / normal_pdf(a)
    }

    /// Partial derivative in v.
    pub fn d_dv(&self, u: f64, v: f64) -> f64 {
        let a = normal_quantile(self.clamp(u));
        let b = normal_quantile(self.clamp(v));
        let c = self.cond_density_scores(a, b);
        let r = self.rho;
        c * r * (a - r * b) / (1.0 - r * r) / normal_pdf(b)
    }

    /// Partial derivative in rho on normal scores.
    #[inline]
    pub fn d_drho_scores(&self, a: f64, b: f64, c: f64) -> f64 {
        let r = self.rho;
        let om = 1.0 - r * r;
        c * (r * om - r * (a * a + b * b) + a * b * (1.0 + r * r)) / (om * om)
    }

    /// Partial derivative in rho.
    pub fn d_drho(&self, u: f64, v: f64) -> f64 {
        let a = normal_quantile(self.clamp(u));
        let b = normal_quantile(self.clamp(v));
        let c = self.cond_density_scores(a, b);
        self.d_drho_scores(a, b, c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn paper_mixture() -> MixtureParams {
        MixtureParams::new(vec![0.5, 0.25, 0.25], vec![-3.0, 2.0, 4.0], vec![1.0, 1.0, 1.0])
            .unwrap()
    }

    #[test]
    fn normal_cdf_basics() {
        assert_abs_diff_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-15);
        // Reference values from the complementary error function at double
        // precision.
        assert_abs_diff_eq!(normal_cdf(1.0), 0.8413447460685429, epsilon = 1e-12);
        assert_abs_diff_eq!(normal_cdf(-2.5), 0.006209665325776132, epsilon = 1e-13);
        assert_abs_diff_eq!(normal_cdf(5.0), 0.9999997133484281, epsilon = 1e-12);
    }

    #[test]
    fn normal_quantile_accuracy() {
        assert_abs_diff_eq!(normal_quantile(0.975), 1.959963984540054, epsilon = 1e-9);
        assert_abs_diff_eq!(normal_quantile(0.5), 0.0, epsilon = 1e-12);
        assert!(normal_quantile(0.0).is_infinite());
        assert!(normal_quantile(1.0).is_infinite());
        // Round trip on a grid.
        for k in 1..200 {
            let p = k as f64 / 200.0;
            assert_abs_diff_eq!(normal_cdf(normal_quantile(p)), p, epsilon = 1e-9);
        }
        // Tails.
        for &p in &[1e-10, 1e-6, 1.0 - 1e-6] {
            assert_abs_diff_eq!(normal_cdf(normal_quantile(p)), p, epsilon = 1e-12 + p * 1e-9);
        }
    }

    #[test]
    fn mixture_pdf_reference_values() {
        let single = MixtureParams::new(vec![1.0], vec![0.0], vec![1.0]).unwrap();
        assert_abs_diff_eq!(single.pdf(0.0), 1.0 / SQRT_2PI, epsilon = 1e-15);
        let mix = paper_mixture();
        assert_abs_diff_eq!(mix.pdf(0.0), 0.01574712339070724, epsilon = 1e-12);
    }

    #[test]
    fn mixture_integrates_to_one() {
        let mix = paper_mixture();
        // Trapezoid over a wide grid.
        let (lo, hi, n) = (-40.0, 40.0, 160_000);
        let h = (hi - lo) / n as f64;
        let mut total = 0.5 * (mix.pdf(lo) + mix.pdf(hi));
        for i in 1..n {
            total += mix.pdf(lo + i as f64 * h);
        }
        total *= h;
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn mixture_mean_zero_exact_under_free_updates() {
        let mix = paper_mixture();
        assert_abs_diff_eq!(mix.mean(), 0.0, epsilon = 1e-15);
        let mut free = mix.to_free();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            for f in free.iter_mut() {
                *f += rng.random::<f64>() - 0.5;
            }
            let rebuilt = MixtureParams::from_free(&free, 3);
            assert!(rebuilt.mean().abs() < 1e-13, "mean {}", rebuilt.mean());
        }
    }

    #[test]
    fn free_round_trip() {
        let mix = paper_mixture();
        let back = MixtureParams::from_free(&mix.to_free(), 3);
        for j in 0..3 {
            assert_abs_diff_eq!(back.weights()[j], mix.weights()[j], epsilon = 1e-12);
            assert_abs_diff_eq!(back.means()[j], mix.means()[j], epsilon = 1e-12);
            assert_abs_diff_eq!(back.sds()[j], mix.sds()[j], epsilon = 1e-12);
        }
        // m = 1: only the log-sd is free and the mean is pinned at zero.
        let single = MixtureParams::new(vec![1.0], vec![3.0], vec![2.0]).unwrap();
        assert_eq!(single.means(), &[0.0]);
        assert_eq!(single.to_free().len(), 1);
    }

    #[test]
    fn mixture_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let free: Vec<f64> = (0..7).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
            let mix = MixtureParams::from_free(&free, 3);
            let e = 6.0 * rng.random::<f64>() - 3.0;
            let h = 1e-6;
            // d/de.
            let fd = (mix.pdf(e + h) - mix.pdf(e - h)) / (2.0 * h);
            let an = mix.dpdf_de(e);
            assert!((an - fd).abs() <= 1e-5 * fd.abs().max(1e-4), "d/de {an} vs {fd}");
            // Free-parameter gradient.
            let grad = mix.pdf_grad_free(e);
            for k in 0..free.len() {
                let mut fp = free.clone();
                fp[k] += h;
                let up = MixtureParams::from_free(&fp, 3).pdf(e);
                fp[k] -= 2.0 * h;
                let dn = MixtureParams::from_free(&fp, 3).pdf(e);
                let fd = (up - dn) / (2.0 * h);
                assert!(
                    (grad[k] - fd).abs() <= 1e-5 * fd.abs().max(1e-4),
                    "free coord {k}: {} vs {fd}",
                    grad[k]
                );
            }
        }
    }

    #[test]
    fn mixture_sampling_moments() {
        let mix = paper_mixture();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| mix.sample(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.05, "sample mean {mean}");
        // Share below -0.5 versus the exact mixture CDF.
        let share = draws.iter().filter(|&&e| e < -0.5).count() as f64 / n as f64;
        let exact: f64 = mix
            .weights()
            .iter()
            .zip(mix.means().iter().zip(mix.sds()))
            .map(|(w, (mu, s))| w * normal_cdf((-0.5 - mu) / s))
            .sum();
        assert!((share - exact).abs() < 0.02, "share {share} vs exact {exact}");
        assert!((share - 0.5).abs() < 0.02);
    }

    #[test]
    fn near_degenerate_component() {
        let mix = MixtureParams::new(vec![1.0], vec![0.0], vec![1e-8]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            assert!(mix.sample(&mut rng).abs() < 1e-6);
        }
    }

    #[test]
    fn copula_reference_values() {
        let c = CopulaParams::new(0.0).unwrap();
        for &(u, v) in &[(0.1, 0.9), (0.5, 0.5), (0.37, 0.62)] {
            assert_abs_diff_eq!(c.cond_density(u, v), 1.0, epsilon = 1e-12);
        }
        let c = CopulaParams::new(0.5).unwrap();
        assert_abs_diff_eq!(c.cond_density(0.5, 0.5), 1.0 / 0.75f64.sqrt(), epsilon = 1e-12);
        assert!(CopulaParams::new(1.0).is_err());
        assert!(CopulaParams::new(-1.2).is_err());
    }

    #[test]
    fn copula_symmetry_and_positivity() {
        let c = CopulaParams::new(0.7).unwrap();
        for i in 1..20 {
            for j in 1..20 {
                let (u, v) = (i as f64 / 20.0, j as f64 / 20.0);
                let duv = c.cond_density(u, v);
                assert!(duv > 0.0);
                assert_abs_diff_eq!(duv, c.cond_density(v, u), epsilon = 1e-12);
            }
        }
    }

    /// Simpson oracle for the u-integral of the conditional density, computed
    /// on the normal-score scale where the integrand is smooth:
    /// int c(u|v) du = int c(Phi(a)|v) phi(a) da.
    fn simpson_copula_mass(c: &CopulaParams, v: f64) -> f64 {
        let (lo, hi, n) = (-10.0f64, 10.0f64, 8000usize);
        let h = (hi - lo) / n as f64;
        let b = normal_quantile(v);
        let f = |a: f64| c.cond_density_scores(a, b) * normal_pdf(a);
        let mut s = f(lo) + f(hi);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(lo + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn copula_conditional_mass_is_one() {
        for &rho in &[-0.9, -0.5, 0.0, 0.3, 0.5, 0.9] {
            let c = CopulaParams::new(rho).unwrap();
            for &v in &[0.1, 0.3, 0.5, 0.7, 0.9] {
                let mass = simpson_copula_mass(&c, v);
                assert!((mass - 1.0).abs() < 1e-6, "rho={rho} v={v} mass={mass}");
            }
        }
    }

    #[test]
    fn copula_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let rho = 1.8 * rng.random::<f64>() - 0.9;
            let c = CopulaParams::new(rho).unwrap();
            let u = 0.05 + 0.9 * rng.random::<f64>();
            let v = 0.05 + 0.9 * rng.random::<f64>();
            let h = 1e-6;
            let fd_u = (c.cond_density(u + h, v) - c.cond_density(u - h, v)) / (2.0 * h);
            let an_u = c.d_du(u, v);
            assert!((an_u - fd_u).abs() <= 1e-5 * fd_u.abs().max(1e-3), "d/du {an_u} vs {fd_u}");
            let fd_v = (c.cond_density(u, v + h) - c.cond_density(u, v - h)) / (2.0 * h);
            let an_v = c.d_dv(u, v);
            assert!((an_v - fd_v).abs() <= 1e-5 * fd_v.abs().max(1e-3), "d/dv {an_v} vs {fd_v}");
            let cp = CopulaParams::new(rho + h).unwrap();
            let cm = CopulaParams::new(rho - h).unwrap();
            let fd_r = (cp.cond_density(u, v) - cm.cond_density(u, v)) / (2.0 * h);
            let an_r = c.d_drho(u, v);
            assert!((an_r - fd_r).abs() <= 1e-5 * fd_r.abs().max(1e-3), "d/drho {an_r} vs {fd_r}");
        }
    }
}
