//! Optimizer steppers and the traced run loop.
//!
//! NormGD iterates `θ ← θ − (η / λ_max(∇²f_n(θ))) ∇f_n(θ)`. Fixed-step GD
//! uses `θ ← θ − η ∇f_n(θ)` and EM delegates to the objective's own update.
//! [`run`] records the distance to a reference parameter at every iteration
//! together with the running minimum over iterates.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numkit::{self, dist, norm, SymMatrix};
use crate::stochastics::Rng;

/// Evaluation surface shared by the models.
pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, theta: &[f64]) -> Result<f64>;
    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>>;
    fn hessian(&self, theta: &[f64]) -> Result<SymMatrix>;

    /// Closed-form EM update, for models that have one.
    fn em_update(&self, _theta: &[f64]) -> Option<Result<Vec<f64>>> {
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    NormGd,
    Gd,
    Em,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::NormGd => "normgd",
            Algorithm::Gd => "gd",
            Algorithm::Em => "em",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normgd" => Ok(Algorithm::NormGd),
            "gd" => Ok(Algorithm::Gd),
            "em" => Ok(Algorithm::Em),
            other => Err(Error::InvalidInput(format!("unknown algorithm '{other}'"))),
        }
    }
}

/// How `λ_max` of the sample Hessian is computed at each NormGD step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EigBackend {
    /// Cyclic Jacobi.
    Exact,
    /// Gershgorin-shifted power iteration.
    Power,
}

impl EigBackend {
    /// Exact below 17 dimensions, power iteration above.
    pub fn default_for(dim: usize) -> Self {
        if dim <= 16 {
            EigBackend::Exact
        } else {
            EigBackend::Power
        }
    }
}

impl FromStr for EigBackend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exact" => Ok(EigBackend::Exact),
            "power" => Ok(EigBackend::Power),
            other => Err(Error::InvalidInput(format!(
                "unknown eigen backend '{other}'"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    /// Step scale. Ignored by EM.
    pub eta: f64,
    pub max_iter: usize,
    /// Stop once `‖∇f_n(θ_t)‖ <= stop_tol`. Zero runs the full horizon.
    pub stop_tol: f64,
    pub eig_backend: EigBackend,
    pub eig_tol: f64,
}

pub const DEFAULT_EIG_TOL: f64 = 1e-10;

/// Power iteration inside NormGD is seeded with a fixed stream so that every
/// run is a pure function of its inputs.
const POWER_SEED: u64 = 0x6e6f_726d_6764;

/// Iterates are stored densely up to this index, then every tenth.
pub const DENSE_ITERATE_LIMIT: usize = 10_000;

impl OptimizerConfig {
    pub fn new(algorithm: Algorithm, eta: f64, max_iter: usize) -> Self {
        Self {
            algorithm,
            eta,
            max_iter,
            stop_tol: 0.0,
            eig_backend: EigBackend::Exact,
            eig_tol: DEFAULT_EIG_TOL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.algorithm != Algorithm::Em && !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "eta must be > 0, got {}",
                self.eta
            )));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "stop_tol must be >= 0, got {}",
                self.stop_tol
            )));
        }
        if !(self.eig_tol > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "eig_tol must be > 0, got {}",
                self.eig_tol
            )));
        }
        Ok(())
    }
}

/// `λ_max` of a symmetric matrix through the selected backend.
pub fn lambda_max(h: &SymMatrix, backend: EigBackend, eig_tol: f64) -> Result<f64> {
    match backend {
        EigBackend::Exact => numkit::lambda_max_exact(h),
        EigBackend::Power => {
            let max_iter = numkit::default_power_max_iter(h.dim(), eig_tol);
            let r = numkit::power_iteration_sym(h, eig_tol, max_iter, &mut Rng::new(POWER_SEED))?;
            Ok(r.value)
        }
    }
}

fn normgd_update(
    obj: &(impl Objective + ?Sized),
    theta: &[f64],
    grad: &[f64],
    eta: f64,
    backend: EigBackend,
    eig_tol: f64,
) -> Result<(Vec<f64>, f64)> {
    let h = obj.hessian(theta)?;
    let lambda = lambda_max(&h, backend, eig_tol)?;
    let floor = 1e-12 * h.inf_norm().max(1.0);
    if !(lambda > floor) {
        return Err(Error::DegenerateCurvature { lambda });
    }
    let step = eta / lambda;
    let next = theta.iter().zip(grad).map(|(t, g)| t - step * g).collect();
    Ok((next, lambda))
}

/// One NormGD step. Returns the new iterate and the `λ_max` used.
///
/// Fails with [`Error::DegenerateCurvature`] when `λ_max` is not above
/// `1e-12·max(1, ‖∇²f_n‖_∞)`.
pub fn normgd_step(
    obj: &(impl Objective + ?Sized),
    theta: &[f64],
    eta: f64,
    backend: EigBackend,
    eig_tol: f64,
) -> Result<(Vec<f64>, f64)> {
    check_dim(obj.dim(), theta.len())?;
    let g = obj.gradient(theta)?;
    normgd_update(obj, theta, &g, eta, backend, eig_tol)
}

pub fn gd_step(obj: &(impl Objective + ?Sized), theta: &[f64], eta: f64) -> Result<Vec<f64>> {
    if !(eta > 0.0) {
        return Err(Error::InvalidInput(format!("eta must be > 0, got {eta}")));
    }
    check_dim(obj.dim(), theta.len())?;
    let g = obj.gradient(theta)?;
    Ok(theta.iter().zip(&g).map(|(t, gi)| t - eta * gi).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunStatus {
    /// Ran the full `max_iter` horizon.
    MaxIter,
    /// Gradient norm fell to `stop_tol`.
    Converged,
    /// NormGD met a Hessian without usable positive curvature.
    DegenerateCurvature { lambda: f64 },
}

/// Per-iteration record of a run.
///
/// `errors[t]` and `grad_norms[t]` belong to iterate `θ_t` for
/// `t = 0..=iterations`; `lambda_max_seq[t]` is the curvature used for the
/// step from `θ_t` (NormGD only). Iterates are thinned past
/// [`DENSE_ITERATE_LIMIT`]; `iterate_index` gives their positions.
#[derive(Clone, Debug, Serialize)]
pub struct RunTrace {
    pub algorithm: Algorithm,
    pub iterate_index: Vec<usize>,
    pub iterates: Vec<Vec<f64>>,
    pub errors: Vec<f64>,
    pub lambda_max_seq: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub min_error: Option<f64>,
    pub min_error_iter: Option<usize>,
    pub final_iterate: Vec<f64>,
    pub iterations: usize,
    pub status: RunStatus,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl RunTrace {
    /// Error of the last iterate.
    pub fn final_error(&self) -> Option<f64> {
        self.errors.last().copied()
    }

    /// Error at iteration `t`, holding the last value once the run stopped.
    pub fn error_at(&self, t: usize) -> Option<f64> {
        self.errors
            .get(t.min(self.errors.len().checked_sub(1)?))
            .copied()
    }

    /// CSV rows `iter,error,grad_norm,lambda_max`; missing entries are empty.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "error", "grad_norm", "lambda_max"])?;
        for t in 0..self.grad_norms.len() {
            let fmt = |v: Option<&f64>| v.map(|x| x.to_string()).unwrap_or_default();
            w.write_record([
                t.to_string(),
                fmt(self.errors.get(t)),
                fmt(self.grad_norms.get(t)),
                fmt(self.lambda_max_seq.get(t)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `cfg.algorithm` from `theta0` for up to `cfg.max_iter` steps.
///
/// Stops early when the gradient norm reaches `cfg.stop_tol` or when NormGD
/// hits degenerate curvature; the latter ends the run with the trace so far
/// rather than an error.
pub fn run(
    obj: &(impl Objective + ?Sized),
    theta0: &[f64],
    cfg: &OptimizerConfig,
    theta_star: Option<&[f64]>,
) -> Result<RunTrace> {
    cfg.validate()?;
    check_dim(obj.dim(), theta0.len())?;
    if let Some(ts) = theta_star {
        check_dim(obj.dim(), ts.len())?;
    }
    if cfg.algorithm == Algorithm::Em && obj.em_update(theta0).is_none() {
        return Err(Error::InvalidConfig(
            "em is only available for the mixture model".into(),
        ));
    }

    let start = Instant::now();
    let mut trace = RunTrace {
        algorithm: cfg.algorithm,
        iterate_index: Vec::new(),
        iterates: Vec::new(),
        errors: Vec::new(),
        lambda_max_seq: Vec::new(),
        grad_norms: Vec::new(),
        min_error: None,
        min_error_iter: None,
        final_iterate: theta0.to_vec(),
        iterations: 0,
        status: RunStatus::MaxIter,
        wall_time: Duration::ZERO,
    };

    let mut theta = theta0.to_vec();
    let mut t = 0;
    loop {
        if let Some(ts) = theta_star {
            let e = dist(&theta, ts);
            if trace.min_error.is_none_or(|m| e < m) {
                trace.min_error = Some(e);
                trace.min_error_iter = Some(t);
            }
            trace.errors.push(e);
        }
        if t <= DENSE_ITERATE_LIMIT || t % 10 == 0 {
            trace.iterate_index.push(t);
            trace.iterates.push(theta.clone());
        }
        let g = obj.gradient(&theta)?;
        let gn = norm(&g);
        trace.grad_norms.push(gn);
        if gn <= cfg.stop_tol {
            trace.status = RunStatus::Converged;
            break;
        }
        if t == cfg.max_iter {
            break;
        }
        theta = match cfg.algorithm {
            Algorithm::NormGd => {
                match normgd_update(obj, &theta, &g, cfg.eta, cfg.eig_backend, cfg.eig_tol) {
                    Ok((next, lambda)) => {
                        trace.lambda_max_seq.push(lambda);
                        next
                    }
                    Err(Error::DegenerateCurvature { lambda }) => {
                        trace.status = RunStatus::DegenerateCurvature { lambda };
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            Algorithm::Gd => theta
                .iter()
                .zip(&g)
                .map(|(x, gi)| x - cfg.eta * gi)
                .collect(),
            Algorithm::Em => obj.em_update(&theta).expect("checked above")?,
        };
        t += 1;
    }
    if trace.iterate_index.last() != Some(&t) {
        trace.iterate_index.push(t);
        trace.iterates.push(theta.clone());
    }
    trace.iterations = t;
    trace.final_iterate = theta;
    trace.wall_time = start.elapsed();
    Ok(trace)
}

/// First iteration whose error is at most `radius`.
pub fn iterations_to_radius(trace: &RunTrace, radius: f64) -> Option<usize> {
    trace.errors.iter().position(|&e| e <= radius)
}

/// `f(θ) = ½ θᵀHθ`; a test shim with a known Hessian.
#[derive(Clone, Debug)]
pub struct QuadraticObjective {
    pub h: SymMatrix,
}

impl Objective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.h.dim()
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.dim(), theta.len())?;
        let mut hx = vec![0.0; theta.len()];
        self.h.matvec(theta, &mut hx);
        Ok(0.5 * numkit::dot(theta, &hx))
    }

    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), theta.len())?;
        let mut hx = vec![0.0; theta.len()];
        self.h.matvec(theta, &mut hx);
        Ok(hx)
    }

    fn hessian(&self, theta: &[f64]) -> Result<SymMatrix> {
        check_dim(self.dim(), theta.len())?;
        Ok(self.h.clone())
    }
}

/// `c·f` for a positive constant `c`.
pub struct Scaled<'a, O: ?Sized> {
    pub inner: &'a O,
    pub factor: f64,
}

impl<O: Objective + ?Sized> Objective for Scaled<'_, O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.factor * self.inner.value(theta)?)
    }

    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.inner.gradient(theta)?;
        g.iter_mut().for_each(|v| *v *= self.factor);
        Ok(g)
    }

    fn hessian(&self, theta: &[f64]) -> Result<SymMatrix> {
        let mut h = self.inner.hessian(theta)?;
        h.scale(self.factor);
        Ok(h)
    }
}
