//! Runtime validation suites: finite-difference derivative checks, the
//! eigensolver cross-check, quadrature against Monte Carlo, the EM/GD
//! identity and a few sanity checks of the RNG and line fit.
//!
//! Each oracle here evaluates the quantity by a route that does not share
//! code with the implementation it checks (central differences of the loss,
//! independent sampling, constructed spectra).

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::glm::{GlmObjective, GlmPopulation};
use crate::gmm::{sech2, GmmObjective, GmmPopulation, QuadratureRule, DEFAULT_QUADRATURE_ORDER};
use crate::numkit::{self, dist, dot, norm, sym_eig_all, SymMatrix};
use crate::optim::Objective;
use crate::stochastics::{sample_glm, sample_gmm, GlmDataset, Rng};

/// Relative-error gate for finite-difference checks.
pub const FD_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Eig,
    Glm,
    Gmm,
    Em,
    Quad,
    Pop,
    Linfit,
    Rng,
}

impl Suite {
    pub const ALL: [Suite; 8] = [
        Suite::Eig,
        Suite::Glm,
        Suite::Gmm,
        Suite::Em,
        Suite::Quad,
        Suite::Pop,
        Suite::Linfit,
        Suite::Rng,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Eig => "eig",
            Suite::Glm => "glm",
            Suite::Gmm => "gmm",
            Suite::Em => "em",
            Suite::Quad => "quad",
            Suite::Pop => "pop",
            Suite::Linfit => "linfit",
            Suite::Rng => "rng",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.as_str() == s.trim())
            .ok_or_else(|| Error::InvalidInput(format!("unknown check suite '{s}'")))
    }
}

/// Deliberate defects used to prove the suites catch real bugs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// GLM Hessian with leading coefficient `p` instead of `p(2p−1)`.
    GlmHessianCoefficient,
}

#[derive(Clone, Debug)]
pub struct CheckOptions {
    pub suites: Vec<Suite>,
    pub seed: u64,
    pub instances: usize,
    pub mc_draws: usize,
    pub pop_samples: usize,
    pub fault: Option<Fault>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            suites: Suite::ALL.to_vec(),
            seed: 7,
            instances: 100,
            mc_draws: 1_000_000,
            pop_samples: 1_000_000,
            fault: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Outcome {
    pub suite: Suite,
    pub property: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct CheckReport {
    pub outcomes: Vec<Outcome>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Outcome> {
        self.outcomes.iter().filter(|o| !o.passed)
    }

    /// Tab-separated `suite property status detail` lines with a header.
    pub fn table(&self) -> String {
        let mut s = String::from("suite\tproperty\tstatus\tdetail\n");
        for o in &self.outcomes {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                o.suite,
                o.property,
                if o.passed { "PASS" } else { "FAIL" },
                o.detail
            ));
        }
        s
    }

    fn push(&mut self, suite: Suite, property: &str, passed: bool, detail: String) {
        self.outcomes.push(Outcome {
            suite,
            property: property.into(),
            passed,
            detail,
        });
    }
}

pub fn run_checks(opts: &CheckOptions) -> Result<CheckReport> {
    let mut report = CheckReport::default();
    let root = Rng::new(opts.seed);
    for (k, suite) in opts.suites.iter().enumerate() {
        let mut rng = root.split(k as u64 + 1);
        match suite {
            Suite::Eig => eig_suite(&mut report, opts, &mut rng)?,
            Suite::Glm => glm_suite(&mut report, opts, &mut rng)?,
            Suite::Gmm => gmm_suite(&mut report, opts, &mut rng)?,
            Suite::Em => em_suite(&mut report, opts, &mut rng)?,
            Suite::Quad => quad_suite(&mut report, opts, &mut rng)?,
            Suite::Pop => pop_suite(&mut report, opts, &mut rng)?,
            Suite::Linfit => linfit_suite(&mut report)?,
            Suite::Rng => rng_suite(&mut report, opts)?,
        }
    }
    Ok(report)
}

/// Central-difference step `1e-5·max(1, ‖θ‖)`.
pub fn fd_step(theta: &[f64]) -> f64 {
    1e-5 * norm(theta).max(1.0)
}

/// Central differences of `f` along each coordinate.
pub fn fd_gradient(f: impl Fn(&[f64]) -> Result<f64>, theta: &[f64]) -> Result<Vec<f64>> {
    let h = fd_step(theta);
    let mut x = theta.to_vec();
    let mut g = Vec::with_capacity(theta.len());
    for j in 0..theta.len() {
        x[j] = theta[j] + h;
        let up = f(&x)?;
        x[j] = theta[j] - h;
        let down = f(&x)?;
        x[j] = theta[j];
        g.push((up - down) / (2.0 * h));
    }
    Ok(g)
}

/// Jacobian of `grad` by central differences, returned row-major.
pub fn fd_jacobian(grad: impl Fn(&[f64]) -> Result<Vec<f64>>, theta: &[f64]) -> Result<Vec<f64>> {
    let d = theta.len();
    let h = fd_step(theta);
    let mut x = theta.to_vec();
    let mut jac = vec![0.0; d * d];
    for j in 0..d {
        x[j] = theta[j] + h;
        let up = grad(&x)?;
        x[j] = theta[j] - h;
        let down = grad(&x)?;
        x[j] = theta[j];
        for i in 0..d {
            jac[i * d + j] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// `‖a − b‖ / max(1, ‖b‖)` with `b` the analytic value.
pub fn rel_err(approx: &[f64], exact: &[f64]) -> f64 {
    dist(approx, exact) / norm(exact).max(1.0)
}

/// Worst relative errors of gradient and Hessian against finite differences.
pub fn derivative_errors(obj: &(impl Objective + ?Sized), theta: &[f64]) -> Result<(f64, f64)> {
    let fd_g = fd_gradient(|t| obj.value(t), theta)?;
    let g = obj.gradient(theta)?;
    let fd_h = fd_jacobian(|t| obj.gradient(t), theta)?;
    let h = obj.hessian(theta)?;
    Ok((rel_err(&fd_g, &g), rel_err(&fd_h, h.as_slice())))
}

/// GLM objective with the leading Hessian coefficient misprinted as `p`.
struct MiscoefficientGlm(GlmObjective);

impl Objective for MiscoefficientGlm {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        self.0.loss(theta)
    }

    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.0.grad(theta)
    }

    fn hessian(&self, theta: &[f64]) -> Result<SymMatrix> {
        let data = self.0.data();
        let p = data.p as i32;
        let pf = p as f64;
        let mut h = SymMatrix::zeros(data.d)?;
        for i in 0..data.n {
            let x = data.row(i);
            let u = dot(x, theta);
            let w = pf * u.powi(2 * p - 2) - pf * (pf - 1.0) * data.y[i] * u.powi(p - 2);
            h.add_outer(w / data.n as f64, x);
        }
        Ok(h)
    }
}

pub fn random_glm_instance(rng: &mut Rng) -> Result<(GlmObjective, Vec<f64>)> {
    let d = 1 + (rng.uniform() * 5.0) as usize;
    let p = if rng.coin() { 2 } else { 3 };
    let n = 20 + (rng.uniform() * 30.0) as usize;
    let theta_star: Vec<f64> = rng.normals(d).iter().map(|v| 0.7 * v).collect();
    let mut data_rng = rng.split(0);
    let data = sample_glm(n, d, &theta_star, p, 1.0, &mut data_rng)?;
    let theta = rng.normals(d).iter().map(|v| 0.8 * v).collect();
    Ok((GlmObjective::new(data)?, theta))
}

pub fn random_gmm_instance(rng: &mut Rng) -> Result<(GmmObjective, Vec<f64>)> {
    let d = 1 + (rng.uniform() * 4.0) as usize;
    let sigma = 0.5 + 1.5 * rng.uniform();
    let n = 20 + (rng.uniform() * 30.0) as usize;
    let theta_star: Vec<f64> = rng.normals(d);
    let mut data_rng = rng.split(0);
    let data = sample_gmm(n, d, &theta_star, sigma, &mut data_rng)?;
    let theta = rng.normals(d);
    Ok((GmmObjective::new(data)?, theta))
}

fn derivative_suite(
    report: &mut Report<'_>,
    grad_name: &str,
    hess_name: &str,
    errors: impl Iterator<Item = Result<(f64, f64)>>,
) -> Result<()> {
    let (mut worst_g, mut worst_h, mut count) = (0.0f64, 0.0f64, 0);
    for e in errors {
        let (g, h) = e?;
        worst_g = worst_g.max(g);
        worst_h = worst_h.max(h);
        count += 1;
    }
    report.push(
        grad_name,
        worst_g <= FD_TOLERANCE,
        format!("{count} instances, worst rel err {worst_g:.2e}"),
    );
    report.push(
        hess_name,
        worst_h <= FD_TOLERANCE,
        format!("{count} instances, worst rel err {worst_h:.2e}"),
    );
    Ok(())
}

struct Report<'a> {
    inner: &'a mut CheckReport,
    suite: Suite,
}

impl Report<'_> {
    fn push(&mut self, property: &str, passed: bool, detail: String) {
        self.inner.push(self.suite, property, passed, detail);
    }
}

fn glm_suite(report: &mut CheckReport, opts: &CheckOptions, rng: &mut Rng) -> Result<()> {
    let mut r = Report {
        inner: report,
        suite: Suite::Glm,
    };
    let instances: Vec<(GlmObjective, Vec<f64>)> = (0..opts.instances)
        .map(|k| random_glm_instance(&mut rng.split(k as u64)))
        .collect::<Result<_>>()?;
    let errors = instances.iter().map(|(obj, theta)| match opts.fault {
        Some(Fault::GlmHessianCoefficient) => {
            derivative_errors(&MiscoefficientGlm(obj.clone()), theta)
        }
        None => derivative_errors(obj, theta),
    });
    derivative_suite(&mut r, "glm_grad", "glm_hessian", errors)?;

    let mut worst = 0.0f64;
    for (obj, theta) in &instances {
        let naive = naive_glm_loss(obj.data(), theta);
        worst = worst.max((obj.loss(theta)? - naive).abs() / naive.abs().max(1.0));
    }
    r.push(
        "glm_loss",
        worst <= 1e-12,
        format!("naive re-summation, worst {worst:.2e}"),
    );
    Ok(())
}

fn naive_glm_loss(data: &GlmDataset, theta: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..data.n {
        let mut u = 0.0;
        for (x, t) in data.x[i * data.d..(i + 1) * data.d].iter().zip(theta) {
            u += x * t;
        }
        let mut link = 1.0;
        for _ in 0..data.p {
            link *= u;
        }
        acc += 0.5 * (data.y[i] - link).powi(2);
    }
    acc / data.n as f64
}

fn gmm_suite(report: &mut CheckReport, opts: &CheckOptions, rng: &mut Rng) -> Result<()> {
    let mut r = Report {
        inner: report,
        suite: Suite::Gmm,
    };
    let instances: Vec<(GmmObjective, Vec<f64>)> = (0..opts.instances)
        .map(|k| random_gmm_instance(&mut rng.split(k as u64)))
        .collect::<Result<_>>()?;
    derivative_suite(
        &mut r,
        "gmm_grad",
        "gmm_hessian",
        instances.iter().map(|(o, t)| derivative_errors(o, t)),
    )?;

    let mut worst_nll = 0.0f64;
    let mut symmetric = true;
    for (obj, theta) in &instances {
        let naive = naive_gmm_nll(obj, theta);
        worst_nll = worst_nll.max((obj.nll(theta)? - naive).abs() / naive.abs().max(1.0));
        let neg: Vec<f64> = theta.iter().map(|v| -v).collect();
        let g = obj.grad(theta)?;
        let gn = obj.grad(&neg)?;
        symmetric &= obj.nll(theta)? == obj.nll(&neg)?
            && g.iter().zip(&gn).all(|(a, b)| *a == -*b)
            && obj.hessian(theta)? == obj.hessian(&neg)?;
    }
    r.push(
        "gmm_nll",
        worst_nll <= 1e-10,
        format!("two-density log-sum oracle, worst {worst_nll:.2e}"),
    );
    r.push(
        "gmm_symmetry",
        symmetric,
        "nll even, grad odd, hessian even".into(),
    );
    Ok(())
}

/// `−(1/n) Σ log(½φ(x|θ) + ½φ(x|−θ))` straight from the densities.
pub fn naive_gmm_nll(obj: &GmmObjective, theta: &[f64]) -> f64 {
    let data = obj.data();
    let s2 = data.sigma * data.sigma;
    let norm_const = (2.0 * std::f64::consts::PI * s2).powf(data.d as f64 / 2.0);
    let mut acc = 0.0;
    for i in 0..data.n {
        let x = data.row(i);
        let plus: f64 = x.iter().zip(theta).map(|(a, b)| (a - b) * (a - b)).sum();
        let minus: f64 = x.iter().zip(theta).map(|(a, b)| (a + b) * (a + b)).sum();
        let dens = 0.5 * (-plus / (2.0 * s2)).exp() / norm_const
            + 0.5 * (-minus / (2.0 * s2)).exp() / norm_const;
        acc -= dens.ln();
    }
    acc / data.n as f64
}

fn em_suite(report: &mut CheckReport, opts: &CheckOptions, rng: &mut Rng) -> Result<()> {
    let mut worst = 0.0f64;
    for k in 0..opts.instances {
        let (obj, theta) = random_gmm_instance(&mut rng.split(k as u64))?;
        let em = obj.em_step(&theta)?;
        let g = obj.grad(&theta)?;
        let s2 = obj.sigma() * obj.sigma();
        let gd: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t - s2 * gi).collect();
        worst = worst.max(dist(&em, &gd) / norm(&theta).max(1.0));
    }
    report.push(
        Suite::Em,
        "em_equals_gd_sigma2",
        worst <= 1e-12,
        format!("{} states, worst {worst:.2e}", opts.instances),
    );
    Ok(())
}

/// Random symmetric matrix `QΛQᵀ` with `λ₁ − λ₂ ≥ 0.1·|λ₁|`; every fourth
/// matrix has a negative eigenvalue larger in magnitude than `λ₁`.
pub fn gapped_matrix(dim: usize, indefinite: bool, rng: &mut Rng) -> Result<(SymMatrix, f64)> {
    let z = rng.normals(dim * dim);
    let basis = sym_eig_all(&SymMatrix::from_fn(dim, |i, j| z[i * dim + j])?)?;
    let top = (0.5 + 1.5 * rng.uniform()) * if rng.coin() { 1.0 } else { -1.0 };
    let gap = (0.1 + 0.4 * rng.uniform()) * top.abs();
    let mut values = vec![top];
    for k in 1..dim {
        let v = if indefinite && k == dim - 1 {
            top - top.abs() * (2.2 + rng.uniform())
        } else {
            top - gap - rng.uniform() * 2.0 * top.abs()
        };
        values.push(v);
    }
    let a = SymMatrix::from_fn(dim, |i, j| {
        basis
            .iter()
            .zip(&values)
            .map(|(p, l)| l * p.vector[i] * p.vector[j])
            .sum()
    })?;
    Ok((a, top))
}

fn eig_suite(report: &mut CheckReport, _opts: &CheckOptions, rng: &mut Rng) -> Result<()> {
    let mut r = Report {
        inner: report,
        suite: Suite::Eig,
    };
    let mut worst_recon = 0.0f64;
    let mut worst_orth = 0.0f64;
    let mut worst_power = 0.0f64;
    let mut not_converged = 0;
    let mut indefinite_cases = 0;
    for k in 0..200 {
        let mut mrng = rng.split(k);
        let dim = 1 + (mrng.uniform() * 16.0) as usize;
        let indefinite = dim > 1 && k % 4 == 0;
        let (a, top) = gapped_matrix(dim, indefinite, &mut mrng)?;
        let pairs = sym_eig_all(&a)?;
        let mut rec = vec![0.0; dim * dim];
        for p in &pairs {
            for i in 0..dim {
                for j in 0..dim {
                    rec[i * dim + j] += p.value * p.vector[i] * p.vector[j];
                }
            }
        }
        worst_recon = worst_recon.max(dist(&rec, a.as_slice()) / a.frobenius());
        for i in 0..dim {
            for j in 0..dim {
                let want = if i == j { 1.0 } else { 0.0 };
                worst_orth = worst_orth.max((dot(&pairs[i].vector, &pairs[j].vector) - want).abs());
            }
        }
        let min_val = pairs.last().unwrap().value;
        if min_val.abs() > pairs[0].value.abs() {
            indefinite_cases += 1;
        }
        let res = numkit::power_iteration_sym(&a, 1e-8, 100_000, &mut mrng.split(9))?;
        if !res.converged {
            not_converged += 1;
        }
        let scale = top.abs().max(1.0);
        worst_power = worst_power
            .max((res.value - pairs[0].value).abs() / scale)
            .max((pairs[0].value - top).abs() / scale);
    }
    r.push(
        "jacobi_reconstruction",
        worst_recon <= 1e-9,
        format!("200 matrices, worst {worst_recon:.2e}"),
    );
    r.push(
        "jacobi_orthonormality",
        worst_orth <= 1e-10,
        format!("worst {worst_orth:.2e}"),
    );
    r.push(
        "power_vs_jacobi",
        worst_power <= 1e-8 && not_converged == 0,
        format!(
            "worst {worst_power:.2e}, {not_converged} unconverged, {indefinite_cases} largest-magnitude-negative cases"
        ),
    );
    Ok(())
}

/// Monte Carlo estimates `(B₁₁, se₁₁, B_ii, se_ii)` at `W ~ N(0,1)`.
pub fn mc_b_entries(t: f64, draws: usize, rng: &mut Rng) -> (f64, f64, f64, f64) {
    let (mut s1, mut s1sq, mut s2, mut s2sq) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..draws {
        let w = rng.normal();
        let s = sech2(w * t);
        let a = w * w * s;
        s1 += a;
        s1sq += a * a;
        s2 += s;
        s2sq += s * s;
    }
    let n = draws as f64;
    let (m1, m2) = (s1 / n, s2 / n);
    let se1 = ((s1sq / n - m1 * m1).max(0.0) / n).sqrt();
    let se2 = ((s2sq / n - m2 * m2).max(0.0) / n).sqrt();
    (m1, se1, m2, se2)
}

fn quad_suite(report: &mut CheckReport, opts: &CheckOptions, rng: &mut Rng) -> Result<()> {
    let mut r = Report {
        inner: report,
        suite: Suite::Quad,
    };
    let rule = QuadratureRule::gauss_hermite(DEFAULT_QUADRATURE_ORDER)?;
    let pop = GmmPopulation::at_zero(1.0, 2)?;
    for (k, &t) in [0.1, 0.25, 0.5].iter().enumerate() {
        let (lo, hi) = pop.hessian_eigs(t, &rule)?;
        r.push(
            &format!("homogeneity_{t}"),
            lo >= t * t / 2.0 && hi <= 3.0 * t * t,
            format!(
                "[{lo:.6}, {hi:.6}] within [{:.6}, {:.6}]",
                t * t / 2.0,
                3.0 * t * t
            ),
        );
        let (b11, bii) = pop.b_entries(t, &rule)?;
        let (m11, se11, mii, seii) = mc_b_entries(t, opts.mc_draws, &mut rng.split(k as u64));
        let z11 = (b11 - m11).abs() / se11.max(1e-300);
        let zii = (bii - mii).abs() / seii.max(1e-300);
        r.push(
            &format!("quadrature_vs_mc_{t}"),
            z11 <= 4.0 && zii <= 4.0,
            format!("{} draws, |z| = {z11:.2}, {zii:.2}", opts.mc_draws),
        );
    }
    Ok(())
}

fn pop_suite(report: &mut CheckReport, opts: &CheckOptions, rng: &mut Rng) -> Result<()> {
    let d = 4;
    let data = sample_glm(opts.pop_samples, d, &[0.0; 4], 2, 1.0, rng)?;
    let obj = GlmObjective::new(data)?;
    let pop = GlmPopulation::at_zero(2, 1.0, d)?;
    let points: [[f64; 4]; 3] = [[0.0; 4], [0.5, 0.0, 0.0, 0.0], [0.3, -0.4, 0.2, 0.6]];
    let mut worst = 0.0f64;
    for th in &points {
        let want = pop.loss(th)?;
        worst = worst.max((obj.loss(th)? - want).abs() / want);
    }
    report.push(
        Suite::Pop,
        "glm_pop_loss_lln",
        worst <= 0.01,
        format!("n = {}, worst rel dev {worst:.2e}", opts.pop_samples),
    );
    Ok(())
}

fn linfit_suite(report: &mut CheckReport) -> Result<()> {
    let xs: Vec<f64> = (0..7).map(|k| (500.0 * 2f64.powi(k)).ln()).collect();
    let ys: Vec<f64> = xs.iter().map(|x| 1.3 - 0.25 * x).collect();
    let fit = numkit::linfit(&xs, &ys)?;
    report.push(
        Suite::Linfit,
        "exact_affine",
        (fit.slope + 0.25).abs() < 1e-12 && (fit.intercept - 1.3).abs() < 1e-11,
        format!("slope {:.15}, intercept {:.15}", fit.slope, fit.intercept),
    );
    Ok(())
}

fn rng_suite(report: &mut CheckReport, opts: &CheckOptions) -> Result<()> {
    let a = Rng::new(opts.seed).normals(1000);
    let b = Rng::new(opts.seed).normals(1000);
    report.push(
        Suite::Rng,
        "determinism",
        a == b,
        "same seed, same draws".into(),
    );
    let n = 1_000_000;
    let m = Rng::new(opts.seed).split(1).normals(n).iter().sum::<f64>() / n as f64;
    report.push(
        Suite::Rng,
        "normal_mean",
        m.abs() <= 4.0 / (n as f64).sqrt(),
        format!("mean {m:.2e}"),
    );
    Ok(())
}
