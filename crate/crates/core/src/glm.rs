//! Least-squares objective for the polynomial-link generalized linear model
//! `Y = (Xᵀθ*)^p + ε`.
//!
//! Sample loss: `L_n(θ) = (1/2n) Σ (Y_i − (X_iᵀθ)^p)²`. With `u_i = X_iᵀθ`
//! its derivatives are
//!
//! ```text
//! ∇L_n(θ)  = (1/n) Σ p (u_i^p − Y_i) u_i^{p−1} X_i
//! ∇²L_n(θ) = (1/n) Σ [p(2p−1) u_i^{2p−2} − p(p−1) Y_i u_i^{p−2}] X_i X_iᵀ
//! ```
//!
//! At `θ* = 0` the population loss has the closed form
//! `L(θ) = (σ² + (2p−1)!! ‖θ‖^{2p}) / 2`.

use crate::error::{check_dim, Error, Result};
use crate::numkit::{dot, norm, SymMatrix};
use crate::optim::Objective;
use crate::stochastics::GlmDataset;

/// `m·(m−2)·…·1` for odd `1 <= m <= 33`.
pub fn double_factorial(m: u32) -> Result<u64> {
    if m.is_multiple_of(2) || m > 33 {
        return Err(Error::InvalidInput(format!(
            "double factorial needs an odd m in [1, 33], got {m}"
        )));
    }
    Ok((1..=m as u64).rev().step_by(2).product())
}

#[derive(Clone, Debug)]
pub struct GlmObjective {
    data: GlmDataset,
}

impl GlmObjective {
    pub fn new(data: GlmDataset) -> Result<Self> {
        data.validate()?;
        Ok(Self { data })
    }

    pub fn data(&self) -> &GlmDataset {
        &self.data
    }

    pub fn p(&self) -> u32 {
        self.data.p
    }

    pub fn loss(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.data.d, theta.len())?;
        let p = self.data.p as i32;
        let total: f64 = (0..self.data.n)
            .map(|i| {
                let r = self.data.y[i] - dot(self.data.row(i), theta).powi(p);
                r * r
            })
            .sum();
        Ok(total / (2.0 * self.data.n as f64))
    }

    pub fn grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.data.d, theta.len())?;
        let p = self.data.p as i32;
        let mut g = vec![0.0; self.data.d];
        for i in 0..self.data.n {
            let x = self.data.row(i);
            let u = dot(x, theta);
            let um1 = u.powi(p - 1);
            let w = (um1 * u - self.data.y[i]) * um1;
            for (gj, xj) in g.iter_mut().zip(x) {
                *gj += w * xj;
            }
        }
        let scale = p as f64 / self.data.n as f64;
        g.iter_mut().for_each(|v| *v *= scale);
        Ok(g)
    }

    pub fn hessian(&self, theta: &[f64]) -> Result<SymMatrix> {
        check_dim(self.data.d, theta.len())?;
        let d = self.data.d;
        let p = self.data.p as i32;
        let pf = p as f64;
        let lead = pf * (2.0 * pf - 1.0);
        let cross = pf * (pf - 1.0);
        let mut h = SymMatrix::zeros(d)?;
        for i in 0..self.data.n {
            let x = self.data.row(i);
            let u = dot(x, theta);
            let um2 = u.powi(p - 2);
            let w = lead * um2 * um2 * u * u - cross * self.data.y[i] * um2;
            h.add_outer(w, x);
        }
        h.scale(1.0 / self.data.n as f64);
        Ok(h)
    }
}

impl Objective for GlmObjective {
    fn dim(&self) -> usize {
        self.data.d
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        self.loss(theta)
    }

    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.grad(theta)
    }

    fn hessian(&self, theta: &[f64]) -> Result<SymMatrix> {
        GlmObjective::hessian(self, theta)
    }
}

/// Population loss of the GLM. Closed forms exist only for `θ* = 0`.
#[derive(Clone, Debug)]
pub struct GlmPopulation {
    pub p: u32,
    pub sigma: f64,
    pub theta_star: Vec<f64>,
}

impl GlmPopulation {
    /// Low signal-to-noise population (`θ* = 0`) in dimension `d`.
    pub fn at_zero(p: u32, sigma: f64, d: usize) -> Result<Self> {
        if p < 2 || d == 0 {
            return Err(Error::InvalidInput(format!(
                "need p >= 2 and d >= 1, got p={p}, d={d}"
            )));
        }
        Ok(Self {
            p,
            sigma,
            theta_star: vec![0.0; d],
        })
    }

    fn closed_form(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.theta_star.len(), theta.len())?;
        if self.theta_star.iter().any(|&v| v != 0.0) {
            return Err(Error::UnsupportedRegime(
                "closed-form GLM population quantities require theta_star = 0".into(),
            ));
        }
        Ok(double_factorial(2 * self.p - 1)? as f64)
    }

    pub fn loss(&self, theta: &[f64]) -> Result<f64> {
        let moment = self.closed_form(theta)?;
        let r2 = dot(theta, theta);
        Ok((self.sigma * self.sigma + moment * r2.powi(self.p as i32)) / 2.0)
    }

    /// `p (2p−1)!! ‖θ‖^{2p−2} θ`
    pub fn grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let moment = self.closed_form(theta)?;
        let c = self.p as f64 * moment * dot(theta, theta).powi(self.p as i32 - 1);
        Ok(theta.iter().map(|v| c * v).collect())
    }

    /// `p (2p−1)!! ‖θ‖^{2p−4} (‖θ‖² I + (2p−2) θθᵀ)`
    pub fn hessian(&self, theta: &[f64]) -> Result<SymMatrix> {
        let moment = self.closed_form(theta)?;
        let p = self.p as i32;
        let r2 = dot(theta, theta);
        let c = self.p as f64 * moment;
        let mut h = SymMatrix::identity(theta.len())?;
        h.scale(c * r2.powi(p - 1));
        h.add_outer(c * (2.0 * self.p as f64 - 2.0) * r2.powi(p - 2), theta);
        Ok(h)
    }

    /// `(λ_min, λ_max)` of the closed-form population Hessian. The direction
    /// of `θ` carries `(2p−1)·p(2p−1)!!‖θ‖^{2p−2}`, its orthogonal complement
    /// `p(2p−1)!!‖θ‖^{2p−2}`, so the ratio is `2p − 1`.
    pub fn hessian_eigs(&self, theta: &[f64]) -> Result<(f64, f64)> {
        let moment = self.closed_form(theta)?;
        let r = norm(theta);
        if r == 0.0 {
            return Err(Error::SingularPoint(
                "population Hessian vanishes at theta = theta_star".into(),
            ));
        }
        let base = self.p as f64 * moment * r.powi(2 * self.p as i32 - 2);
        let radial = (2.0 * self.p as f64 - 1.0) * base;
        if theta.len() == 1 {
            Ok((radial, radial))
        } else {
            Ok((base, radial))
        }
    }
}

impl Objective for GlmPopulation {
    fn dim(&self) -> usize {
        self.theta_star.len()
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        self.loss(theta)
    }

    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.grad(theta)
    }

    fn hessian(&self, theta: &[f64]) -> Result<SymMatrix> {
        GlmPopulation::hessian(self, theta)
    }
}
