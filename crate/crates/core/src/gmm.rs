//! Symmetric two-component Gaussian mixture `½N(−θ*, σ²I) + ½N(θ*, σ²I)`.
//!
//! Writing `½φ(x|θ) + ½φ(x|−θ) = (2πσ²)^{−d/2} exp(−(‖x‖²+‖θ‖²)/2σ²) cosh(xᵀθ/σ²)`
//! turns the sample negative log-likelihood into
//!
//! ```text
//! L̄_n(θ) = (1/n) Σ [(‖X_i‖² + ‖θ‖²)/2σ² − log cosh(X_iᵀθ/σ²)] + (d/2) log(2πσ²)
//! ∇L̄_n(θ)  = θ/σ² − (1/nσ²) Σ X_i tanh(X_iᵀθ/σ²)
//! ∇²L̄_n(θ) = (1/σ²) (I − (1/nσ²) Σ X_i X_iᵀ sech²(X_iᵀθ/σ²))
//! ```
//!
//! The EM update for this model is `θ' = (1/n) Σ X_i tanh(X_iᵀθ/σ²)`, i.e.
//! gradient descent with step `σ²`.

use crate::error::{check_dim, Error, Result};
use crate::numkit::{dot, SymMatrix};
use crate::optim::Objective;
use crate::stochastics::GmmDataset;

/// Default Gauss–Hermite order for population expectations.
pub const DEFAULT_QUADRATURE_ORDER: usize = 40;

/// `log cosh(x)` without overflow: `|x| + log(1 + e^{−2|x|}) − log 2`.
pub fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// `sech²(x) = (2 / (eˣ + e⁻ˣ))²`, exactly 0 once `|x| > 350`.
pub fn sech2(x: f64) -> f64 {
    if x.abs() > 350.0 {
        return 0.0;
    }
    let s = 2.0 / (x.exp() + (-x).exp());
    s * s
}

#[derive(Clone, Debug)]
pub struct GmmObjective {
    data: GmmDataset,
}

impl GmmObjective {
    pub fn new(data: GmmDataset) -> Result<Self> {
        data.validate()?;
        Ok(Self { data })
    }

    pub fn data(&self) -> &GmmDataset {
        &self.data
    }

    pub fn sigma(&self) -> f64 {
        self.data.sigma
    }

    pub fn nll(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.data.d, theta.len())?;
        let s2 = self.data.sigma * self.data.sigma;
        let t2 = dot(theta, theta);
        let mut total = 0.0;
        for i in 0..self.data.n {
            let x = self.data.row(i);
            total += (dot(x, x) + t2) / (2.0 * s2) - log_cosh(dot(x, theta) / s2);
        }
        let d = self.data.d as f64;
        Ok(total / self.data.n as f64 + 0.5 * d * (std::f64::consts::TAU * s2).ln())
    }

    /// `(1/n) Σ X_i tanh(X_iᵀθ/σ²)`
    fn weighted_mean_tanh(&self, theta: &[f64]) -> Vec<f64> {
        let s2 = self.data.sigma * self.data.sigma;
        let mut acc = vec![0.0; self.data.d];
        for i in 0..self.data.n {
            let x = self.data.row(i);
            let w = (dot(x, theta) / s2).tanh();
            for (a, xj) in acc.iter_mut().zip(x) {
                *a += w * xj;
            }
        }
        let inv_n = 1.0 / self.data.n as f64;
        acc.iter_mut().for_each(|v| *v *= inv_n);
        acc
    }

    pub fn grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.data.d, theta.len())?;
        let s2 = self.data.sigma * self.data.sigma;
        let m = self.weighted_mean_tanh(theta);
        Ok(theta.iter().zip(&m).map(|(t, mj)| (t - mj) / s2).collect())
    }

    pub fn hessian(&self, theta: &[f64]) -> Result<SymMatrix> {
        check_dim(self.data.d, theta.len())?;
        let s2 = self.data.sigma * self.data.sigma;
        let mut acc = SymMatrix::zeros(self.data.d)?;
        for i in 0..self.data.n {
            let x = self.data.row(i);
            acc.add_outer(sech2(dot(x, theta) / s2), x);
        }
        acc.scale(-1.0 / (self.data.n as f64 * s2));
        acc.add_diag(1.0);
        acc.scale(1.0 / s2);
        Ok(acc)
    }

    /// One EM iteration.
    pub fn em_step(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.data.d, theta.len())?;
        Ok(self.weighted_mean_tanh(theta))
    }
}

impl Objective for GmmObjective {
    fn dim(&self) -> usize {
        self.data.d
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        self.nll(theta)
    }

    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.grad(theta)
    }

    fn hessian(&self, theta: &[f64]) -> Result<SymMatrix> {
        GmmObjective::hessian(self, theta)
    }

    fn em_update(&self, theta: &[f64]) -> Option<Result<Vec<f64>>> {
        Some(self.em_step(theta))
    }
}

/// Gauss–Hermite rule against the standard normal density (probabilists'
/// convention): `E[f(W)] ≈ Σ w_k f(x_k)` with `Σ w_k = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub order: usize,
}

impl QuadratureRule {
    /// Builds the `order`-point rule. Nodes are the roots of the normalized
    /// Hermite polynomial `ψ_order`, seeded by Golub–Welsch and polished with
    /// Newton steps; weights are the Christoffel numbers `1 / Σ_k ψ_k(x)²`.
    pub fn gauss_hermite(order: usize) -> Result<Self> {
        if order == 0 || order > crate::numkit::MAX_EXACT_DIM {
            return Err(Error::InvalidInput(format!(
                "quadrature order must be in [1, {}], got {order}",
                crate::numkit::MAX_EXACT_DIM
            )));
        }
        let jacobi = SymMatrix::from_fn(
            order,
            |i, j| {
                if j == i + 1 {
                    (j as f64).sqrt()
                } else {
                    0.0
                }
            },
        )?;
        let mut nodes: Vec<f64> = crate::numkit::sym_eig_all(&jacobi)?
            .into_iter()
            .map(|p| p.value)
            .collect();
        nodes.reverse();

        let mut weights = Vec::with_capacity(order);
        for x in nodes.iter_mut() {
            for _ in 0..3 {
                let (psi_n, psi_nm1, _) = hermite_normalized(order, *x);
                let dpsi = (order as f64).sqrt() * psi_nm1;
                if dpsi == 0.0 {
                    break;
                }
                *x -= psi_n / dpsi;
            }
            let (_, _, sum_sq) = hermite_normalized(order, *x);
            weights.push(1.0 / sum_sq);
        }
        // Symmetrize to remove the last rounding asymmetries.
        for k in 0..order / 2 {
            let j = order - 1 - k;
            let x = 0.5 * (nodes[j] - nodes[k]);
            nodes[k] = -x;
            nodes[j] = x;
            let w = 0.5 * (weights[k] + weights[j]);
            weights[k] = w;
            weights[j] = w;
        }
        if order % 2 == 1 {
            nodes[order / 2] = 0.0;
        }
        Ok(Self {
            nodes,
            weights,
            order,
        })
    }

    /// `E[f(W)]` for `W ~ N(0, 1)`.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Returns `(ψ_n(x), ψ_{n−1}(x), Σ_{k<n} ψ_k(x)²)` for the orthonormal
/// probabilists' Hermite polynomials.
fn hermite_normalized(n: usize, x: f64) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    let mut sum_sq = 0.0;
    for k in 0..n {
        sum_sq += cur * cur;
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    (cur, prev, sum_sq)
}

/// Population side of the mixture model. Only the `θ* = 0` regime reduces to
/// one-dimensional expectations.
#[derive(Clone, Debug)]
pub struct GmmPopulation {
    pub sigma: f64,
    pub theta_star: Vec<f64>,
}

impl GmmPopulation {
    pub fn at_zero(sigma: f64, d: usize) -> Result<Self> {
        if !(sigma > 0.0) || d == 0 {
            return Err(Error::InvalidInput(format!(
                "need sigma > 0 and d >= 1, got sigma={sigma}, d={d}"
            )));
        }
        Ok(Self {
            sigma,
            theta_star: vec![0.0; d],
        })
    }

    /// The `B` entries of the rotated population Hessian at `‖θ‖ = theta_norm`:
    /// `B₁₁ = E[W² sech²(W‖θ‖/σ)]`, `B_ii = E[sech²(W‖θ‖/σ)]`.
    pub fn b_entries(&self, theta_norm: f64, rule: &QuadratureRule) -> Result<(f64, f64)> {
        if self.theta_star.iter().any(|&v| v != 0.0) {
            return Err(Error::UnsupportedRegime(
                "population mixture Hessian is only reduced for theta_star = 0".into(),
            ));
        }
        if !(theta_norm >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "theta_norm must be >= 0, got {theta_norm}"
            )));
        }
        if rule.order < 20 {
            return Err(Error::InvalidInput(format!(
                "quadrature order must be >= 20, got {}",
                rule.order
            )));
        }
        let t = theta_norm / self.sigma;
        let b11 = rule.expect(|w| w * w * sech2(w * t));
        let bii = rule.expect(|w| sech2(w * t));
        Ok((b11, bii))
    }

    /// `(λ_min, λ_max)` of `(1/σ²)(I − B)`.
    pub fn hessian_eigs(&self, theta_norm: f64, rule: &QuadratureRule) -> Result<(f64, f64)> {
        let (b11, bii) = self.b_entries(theta_norm, rule)?;
        let s2 = self.sigma * self.sigma;
        let radial = (1.0 - b11) / s2;
        if self.theta_star.len() == 1 {
            return Ok((radial, radial));
        }
        let tangential = (1.0 - bii) / s2;
        Ok((radial.min(tangential), radial.max(tangential)))
    }
}

/// Population Hessian eigenvalues at `θ* = 0` by Gauss–Hermite quadrature.
pub fn gmm_pop_hessian_quadrature(
    theta_norm: f64,
    sigma: f64,
    d: usize,
    rule: &QuadratureRule,
) -> Result<(f64, f64)> {
    GmmPopulation::at_zero(sigma, d)?.hessian_eigs(theta_norm, rule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::norm;
    use crate::stochastics::{sample_gmm, Rng};

    fn objective(seed: u64, n: usize, d: usize, sigma: f64) -> GmmObjective {
        let ts: Vec<f64> = (0..d).map(|j| 0.5 * (j as f64 + 1.0)).collect();
        GmmObjective::new(sample_gmm(n, d, &ts, sigma, &mut Rng::new(seed)).unwrap()).unwrap()
    }

    #[test]
    fn stable_helpers() {
        assert_eq!(log_cosh(0.0), 0.0);
        assert!((log_cosh(1.3) - 1.3f64.cosh().ln()).abs() < 1e-15);
        assert!((log_cosh(1e4) - (1e4 - std::f64::consts::LN_2)).abs() < 1e-9);
        assert_eq!(sech2(0.0), 1.0);
        assert_eq!(sech2(400.0), 0.0);
        assert!((sech2(0.7) - 1.0 / 0.7f64.cosh().powi(2)).abs() < 1e-15);
        assert!(sech2(349.0).is_finite());
    }

    #[test]
    fn nll_is_even() {
        let obj = objective(1, 50, 3, 1.2);
        let th = [0.3, -0.7, 1.1];
        let neg: Vec<f64> = th.iter().map(|v| -v).collect();
        assert_eq!(obj.nll(&th).unwrap(), obj.nll(&neg).unwrap());
    }

    #[test]
    fn nll_single_point_at_origin() {
        let sigma = 1.7f64;
        let d = 3;
        let obj = GmmObjective::new(GmmDataset {
            n: 1,
            d,
            x: vec![0.0; d],
            sigma,
            theta_star: vec![0.0; d],
        })
        .unwrap();
        let th = [0.4, 0.1, -2.0];
        let s2 = sigma * sigma;
        let want = dot(&th, &th) / (2.0 * s2)
            + (2.0 * (2.0 * std::f64::consts::PI).sqrt().powi(d as i32) * sigma.powi(d as i32))
                .ln()
            - std::f64::consts::LN_2;
        assert!((obj.nll(&th).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn grad_and_hessian_symmetries() {
        let obj = objective(2, 40, 2, 0.9);
        let th = [0.8, -0.2];
        let neg = [-0.8, 0.2];
        let g = obj.grad(&th).unwrap();
        let gn = obj.grad(&neg).unwrap();
        assert!(g.iter().zip(&gn).all(|(a, b)| *a == -*b));
        assert_eq!(obj.hessian(&th).unwrap(), obj.hessian(&neg).unwrap());
        assert!(obj.grad(&[0.0, 0.0]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hessian_far_limit() {
        let obj = objective(3, 20, 2, 1.0);
        let h = obj.hessian(&[1e6, -1e6]).unwrap();
        // Every |Xᵀθ| is huge except on a measure-zero set.
        assert!((h.get(0, 0) - 1.0).abs() < 1e-12);
        assert!(h.get(0, 1).abs() < 1e-12);
    }

    #[test]
    fn em_step_properties() {
        let obj = objective(4, 100, 2, 1.3);
        assert_eq!(obj.em_step(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        let th = [0.4, 1.6];
        let em = obj.em_step(&th).unwrap();
        let g = obj.grad(&th).unwrap();
        let s2 = 1.3 * 1.3;
        for j in 0..2 {
            assert!((em[j] - (th[j] - s2 * g[j])).abs() < 1e-12);
        }
        let mut wide = obj.data().clone();
        wide.sigma = 1e8;
        let far = GmmObjective::new(wide).unwrap().em_step(&th).unwrap();
        assert!(norm(&far) < 1e-10);
    }

    #[test]
    fn dimension_checks() {
        let obj = objective(5, 10, 2, 1.0);
        assert!(obj.nll(&[0.0]).is_err());
        assert!(obj.grad(&[0.0; 3]).is_err());
        assert!(obj.hessian(&[0.0]).is_err());
        assert!(obj.em_step(&[0.0]).is_err());
    }

    #[test]
    fn quadrature_moments() {
        let rule = QuadratureRule::gauss_hermite(DEFAULT_QUADRATURE_ORDER).unwrap();
        assert!((rule.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        // E[W^{2k}] = (2k−1)!!, exact up to degree 2·order − 1.
        let mut df = 1.0;
        for k in 1..=20 {
            df *= (2 * k - 1) as f64;
            let m = rule.expect(|x| x.powi(2 * k));
            assert!((m - df).abs() <= 1e-11 * df, "k={k}: {m} vs {df}");
            assert!(rule.expect(|x| x.powi(2 * k - 1)).abs() < 1e-10 * df);
        }
    }

    #[test]
    fn small_rule_exact() {
        let rule = QuadratureRule::gauss_hermite(3).unwrap();
        // Probabilists' H₃ roots: 0, ±√3 with weights 2/3, 1/6.
        assert!((rule.nodes[2] - 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(rule.nodes[1], 0.0);
        assert!((rule.weights[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!((rule.weights[0] - 1.0 / 6.0).abs() < 1e-15);
        assert!(QuadratureRule::gauss_hermite(0).is_err());
        assert!(QuadratureRule::gauss_hermite(65).is_err());
    }

    #[test]
    fn population_eigs_at_origin() {
        let rule = QuadratureRule::gauss_hermite(40).unwrap();
        let (lo, hi) = gmm_pop_hessian_quadrature(0.0, 1.0, 2, &rule).unwrap();
        assert!(lo.abs() < 1e-13 && hi.abs() < 1e-13);
    }

    #[test]
    fn population_lower_bound_at_quarter() {
        let rule = QuadratureRule::gauss_hermite(40).unwrap();
        let (lo, hi) = gmm_pop_hessian_quadrature(0.25, 1.0, 2, &rule).unwrap();
        assert!(lo >= 0.03125, "{lo}");
        assert!(hi <= 3.0 * 0.0625);
    }

    #[test]
    fn population_guards() {
        let rule = QuadratureRule::gauss_hermite(40).unwrap();
        let short = QuadratureRule::gauss_hermite(10).unwrap();
        assert!(gmm_pop_hessian_quadrature(0.3, 1.0, 2, &short).is_err());
        assert!(gmm_pop_hessian_quadrature(-0.3, 1.0, 2, &rule).is_err());
        let shifted = GmmPopulation {
            sigma: 1.0,
            theta_star: vec![1.0, 2.0],
        };
        assert!(matches!(
            shifted.hessian_eigs(0.3, &rule),
            Err(Error::UnsupportedRegime(_))
        ));
    }
}
