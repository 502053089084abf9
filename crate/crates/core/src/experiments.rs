//! Seeded experiment harness: convergence curves, log-log slope studies and
//! iteration-count scaling for the GLM and mixture models.
//!
//! Every `(n, repeat)` cell draws its data and its initialization from
//! `Rng::new(seed).split(n).split(repeat)`, so results do not depend on the
//! thread pool width or on which other cells were requested. All algorithms
//! in a cell share the same dataset and starting point.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::GlmObjective;
use crate::gmm::GmmObjective;
use crate::numkit::{linfit, norm, LineFit, SymMatrix};
use crate::optim::{
    iterations_to_radius, run, Algorithm, EigBackend, Objective, OptimizerConfig, RunStatus,
    RunTrace,
};
use crate::plot::{Plot, Series};
use crate::stochastics::{sample_glm, sample_gmm, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Glm,
    Gmm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Strong,
    Low,
}

/// Which per-run number counts as "the statistical error".
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorStatistic {
    MinOverIterates,
    FinalIterate,
}

impl Regime {
    /// Min over iterates in the low regime, final iterate in the strong one.
    pub fn default_statistic(self) -> ErrorStatistic {
        match self {
            Regime::Strong => ErrorStatistic::FinalIterate,
            Regime::Low => ErrorStatistic::MinOverIterates,
        }
    }
}

/// Step sizes and horizons per algorithm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub eta_normgd: f64,
    pub eta_gd: f64,
    pub max_iter_normgd: usize,
    pub max_iter_gd: usize,
    pub max_iter_em: usize,
    pub stop_tol: f64,
    pub eig_backend: EigBackend,
    pub eig_tol: f64,
}

impl OptimizerSettings {
    pub fn defaults(model: Model, regime: Regime, d: usize) -> Self {
        Self {
            eta_normgd: 0.5,
            // GLM: a fixed step must stay stable in the strong regime, where
            // λ_max of the population Hessian at θ* = (1,2,3,4) is 360.
            eta_gd: match model {
                Model::Glm => 0.0025,
                Model::Gmm => 0.5,
            },
            max_iter_normgd: 500,
            max_iter_gd: match regime {
                Regime::Low => 20_000,
                Regime::Strong => 2_000,
            },
            max_iter_em: 500,
            stop_tol: 0.0,
            eig_backend: EigBackend::default_for(d),
            eig_tol: crate::optim::DEFAULT_EIG_TOL,
        }
    }

    pub fn config_for(&self, algorithm: Algorithm) -> OptimizerConfig {
        let (eta, max_iter) = match algorithm {
            Algorithm::NormGd => (self.eta_normgd, self.max_iter_normgd),
            Algorithm::Gd => (self.eta_gd, self.max_iter_gd),
            Algorithm::Em => (1.0, self.max_iter_em),
        };
        OptimizerConfig {
            algorithm,
            eta,
            max_iter,
            stop_tol: self.stop_tol,
            eig_backend: self.eig_backend,
            eig_tol: self.eig_tol,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub model: Model,
    pub regime: Regime,
    pub d: usize,
    /// Link exponent; GLM only.
    pub p: u32,
    pub sigma: f64,
    pub theta_star: Vec<f64>,
    /// Sample size for convergence experiments.
    pub n: usize,
    /// Sample sizes for slope and scaling studies.
    pub n_grid: Vec<usize>,
    pub repeats: usize,
    pub algorithms: Vec<Algorithm>,
    pub seed: u64,
    /// Distance of `θ₀` from `θ*`; the direction is uniform on the sphere.
    pub init_radius: f64,
    pub optimizer: OptimizerSettings,
    /// Worker threads; 0 uses the available parallelism.
    pub jobs: usize,
}

pub const DEFAULT_SEED: u64 = 7;

impl ExperimentSpec {
    /// The replication configurations: GLM with `p = 2, d = 4` and
    /// `θ* ∈ {(1,2,3,4), 0}`; mixture with `d = 2` and `θ* ∈ {(1,2), 0}`.
    pub fn replication(model: Model, regime: Regime) -> Self {
        let (d, strong_theta, n, n_grid): (usize, Vec<f64>, usize, Vec<usize>) = match model {
            Model::Glm => (
                4,
                vec![1.0, 2.0, 3.0, 4.0],
                1000,
                vec![500, 1000, 2000, 4000, 8000, 16000],
            ),
            Model::Gmm => (
                2,
                vec![1.0, 2.0],
                10_000,
                vec![1000, 2000, 4000, 8000, 16000, 32000],
            ),
        };
        let theta_star = match regime {
            Regime::Strong => strong_theta,
            Regime::Low => vec![0.0; d],
        };
        Self {
            model,
            regime,
            d,
            p: 2,
            sigma: 1.0,
            theta_star,
            n,
            n_grid,
            repeats: 10,
            algorithms: vec![Algorithm::NormGd, Algorithm::Gd],
            seed: DEFAULT_SEED,
            init_radius: 0.5,
            optimizer: OptimizerSettings::defaults(model, regime, d),
            jobs: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.d == 0 || self.theta_star.len() != self.d {
            return bad(format!(
                "theta_star has {} entries but d = {}",
                self.theta_star.len(),
                self.d
            ));
        }
        let zero = self.theta_star.iter().all(|&v| v == 0.0);
        match self.regime {
            Regime::Strong if zero => return bad("strong regime needs theta_star != 0".into()),
            Regime::Low if !zero => return bad("low regime needs theta_star = 0".into()),
            _ => {}
        }
        if !(self.sigma > 0.0) {
            return bad(format!("sigma must be > 0, got {}", self.sigma));
        }
        if self.model == Model::Glm && self.p < 2 {
            return bad(format!("p must be >= 2, got {}", self.p));
        }
        if self.repeats == 0 {
            return bad("repeats must be >= 1".into());
        }
        if self.algorithms.is_empty() {
            return bad("no algorithms requested".into());
        }
        if self.model == Model::Glm && self.algorithms.contains(&Algorithm::Em) {
            return bad("em is only available for the mixture model".into());
        }
        if !(self.init_radius >= 0.0) {
            return bad("init_radius must be >= 0".into());
        }
        for alg in &self.algorithms {
            self.optimizer.config_for(*alg).validate()?;
        }
        Ok(())
    }

    fn validate_grid(&self, min_len: usize) -> Result<()> {
        if self.n_grid.len() < min_len {
            return Err(Error::InvalidConfig(format!(
                "n_grid needs at least {min_len} sizes, got {}",
                self.n_grid.len()
            )));
        }
        if self.n_grid[0] == 0 || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "n_grid must be positive and strictly increasing".into(),
            ));
        }
        Ok(())
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
    }
}

/// Objective for one cell, dispatching to the configured model.
pub enum ModelObjective {
    Glm(GlmObjective),
    Gmm(GmmObjective),
}

impl Objective for ModelObjective {
    fn dim(&self) -> usize {
        match self {
            ModelObjective::Glm(o) => o.dim(),
            ModelObjective::Gmm(o) => o.dim(),
        }
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        match self {
            ModelObjective::Glm(o) => o.loss(theta),
            ModelObjective::Gmm(o) => o.nll(theta),
        }
    }

    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        match self {
            ModelObjective::Glm(o) => o.grad(theta),
            ModelObjective::Gmm(o) => o.grad(theta),
        }
    }

    fn hessian(&self, theta: &[f64]) -> Result<SymMatrix> {
        match self {
            ModelObjective::Glm(o) => o.hessian(theta),
            ModelObjective::Gmm(o) => o.hessian(theta),
        }
    }

    fn em_update(&self, theta: &[f64]) -> Option<Result<Vec<f64>>> {
        match self {
            ModelObjective::Glm(_) => None,
            ModelObjective::Gmm(o) => Some(o.em_step(theta)),
        }
    }
}

/// Dataset, starting point and traces of one `(n, repeat)` cell.
#[derive(Clone, Debug, Serialize)]
pub struct Trial {
    pub n: usize,
    pub repeat: usize,
    pub cell_seed: u64,
    pub dataset_hash: String,
    pub theta0: Vec<f64>,
    pub traces: Vec<RunTrace>,
}

fn cell_rng(spec: &ExperimentSpec, n: usize, repeat: usize) -> Rng {
    Rng::new(spec.seed).split(n as u64).split(repeat as u64)
}

/// Builds the objective and `θ₀` for a cell.
pub fn prepare_cell(
    spec: &ExperimentSpec,
    n: usize,
    repeat: usize,
) -> Result<(ModelObjective, Vec<f64>, u64)> {
    let cell = cell_rng(spec, n, repeat);
    let mut data_rng = cell.split(0);
    let (obj, hash) = match spec.model {
        Model::Glm => {
            let data = sample_glm(
                n,
                spec.d,
                &spec.theta_star,
                spec.p,
                spec.sigma,
                &mut data_rng,
            )?;
            let hash = data.fingerprint();
            (ModelObjective::Glm(GlmObjective::new(data)?), hash)
        }
        Model::Gmm => {
            let data = sample_gmm(n, spec.d, &spec.theta_star, spec.sigma, &mut data_rng)?;
            let hash = data.fingerprint();
            (ModelObjective::Gmm(GmmObjective::new(data)?), hash)
        }
    };
    let mut init_rng = cell.split(1);
    let dir = loop {
        let z = init_rng.normals(spec.d);
        let r = norm(&z);
        if r > 1e-12 {
            break z.into_iter().map(|v| v / r).collect::<Vec<_>>();
        }
    };
    let theta0 = spec
        .theta_star
        .iter()
        .zip(&dir)
        .map(|(t, u)| t + spec.init_radius * u)
        .collect();
    Ok((obj, theta0, hash))
}

fn run_cell(
    spec: &ExperimentSpec,
    n: usize,
    repeat: usize,
    algorithms: &[Algorithm],
) -> Result<Trial> {
    let (obj, theta0, hash) = prepare_cell(spec, n, repeat)?;
    let traces = algorithms
        .iter()
        .map(|&alg| {
            run(
                &obj,
                &theta0,
                &spec.optimizer.config_for(alg),
                Some(&spec.theta_star),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Trial {
        n,
        repeat,
        cell_seed: cell_rng(spec, n, repeat).seed(),
        dataset_hash: format!("{hash:016x}"),
        theta0,
        traces,
    })
}

fn run_cells(
    spec: &ExperimentSpec,
    cells: &[(usize, usize)],
    algorithms: &[Algorithm],
) -> Result<Vec<Trial>> {
    spec.pool()?.install(|| {
        cells
            .par_iter()
            .map(|&(n, r)| run_cell(spec, n, r, algorithms))
            .collect()
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceResult {
    pub spec: ExperimentSpec,
    pub trials: Vec<Trial>,
}

impl ConvergenceResult {
    /// Traces of `algorithm`, one per repeat.
    pub fn traces(&self, algorithm: Algorithm) -> Vec<&RunTrace> {
        self.trials
            .iter()
            .flat_map(|t| t.traces.iter().filter(move |tr| tr.algorithm == algorithm))
            .collect()
    }

    pub fn by_algorithm(&self) -> BTreeMap<Algorithm, Vec<&RunTrace>> {
        self.spec
            .algorithms
            .iter()
            .map(|&a| (a, self.traces(a)))
            .collect()
    }

    /// Error curve averaged over repeats for `len` iterations; runs that
    /// stopped early hold their last error.
    pub fn mean_curve(&self, algorithm: Algorithm, len: usize) -> Vec<f64> {
        let traces = self.traces(algorithm);
        (0..len)
            .map(|t| {
                traces.iter().filter_map(|tr| tr.error_at(t)).sum::<f64>() / traces.len() as f64
            })
            .collect()
    }
}

/// Runs every requested algorithm on `spec.repeats` datasets of size `spec.n`.
pub fn convergence_experiment(spec: &ExperimentSpec) -> Result<ConvergenceResult> {
    spec.validate()?;
    if spec.n == 0 {
        return Err(Error::InvalidConfig("n must be >= 1".into()));
    }
    let cells: Vec<(usize, usize)> = (0..spec.repeats).map(|r| (spec.n, r)).collect();
    let trials = run_cells(spec, &cells, &spec.algorithms)?;
    Ok(ConvergenceResult {
        spec: spec.clone(),
        trials,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SlopeResult {
    pub algorithm: Algorithm,
    pub regime: Regime,
    /// Statistic used for `mean_errors` and the fit.
    pub statistic: ErrorStatistic,
    pub n_grid: Vec<usize>,
    pub mean_errors: Vec<f64>,
    /// `per_repeat_errors[i][r]` for grid point `i`, repeat `r`.
    pub per_repeat_errors: Vec<Vec<f64>>,
    pub mean_min_errors: Vec<f64>,
    pub mean_final_errors: Vec<f64>,
    /// Fit of `ln(mean_error)` on `ln(n)`.
    pub fit: LineFit,
    /// Runs that produced no error value and were left out.
    pub excluded_runs: usize,
    /// Runs that ended on degenerate curvature (still included).
    pub degenerate_runs: usize,
}

/// Fresh dataset and run per `(n, repeat)`; the per-run error is averaged over
/// repeats and `ln(mean error)` is regressed on `ln(n)`.
pub fn slope_experiment(spec: &ExperimentSpec) -> Result<Vec<SlopeResult>> {
    spec.validate()?;
    spec.validate_grid(3)?;
    let cells: Vec<(usize, usize)> = spec
        .n_grid
        .iter()
        .flat_map(|&n| (0..spec.repeats).map(move |r| (n, r)))
        .collect();
    let trials = run_cells(spec, &cells, &spec.algorithms)?;
    let statistic = spec.regime.default_statistic();

    spec.algorithms
        .iter()
        .enumerate()
        .map(|(k, &algorithm)| {
            let mut per_repeat = Vec::with_capacity(spec.n_grid.len());
            let mut mean_errors = Vec::new();
            let mut mean_min = Vec::new();
            let mut mean_final = Vec::new();
            let mut excluded = 0;
            let mut degenerate = 0;
            for (i, _) in spec.n_grid.iter().enumerate() {
                let row = &trials[i * spec.repeats..(i + 1) * spec.repeats];
                let mut chosen = Vec::new();
                let mut mins = Vec::new();
                let mut finals = Vec::new();
                for trial in row {
                    let tr = &trial.traces[k];
                    if matches!(tr.status, RunStatus::DegenerateCurvature { .. }) {
                        degenerate += 1;
                    }
                    let (Some(min), Some(fin)) = (tr.min_error, tr.final_error()) else {
                        excluded += 1;
                        continue;
                    };
                    mins.push(min);
                    finals.push(fin);
                    chosen.push(match statistic {
                        ErrorStatistic::MinOverIterates => min,
                        ErrorStatistic::FinalIterate => fin,
                    });
                }
                if chosen.is_empty() {
                    return Err(Error::InvalidInput(format!(
                        "no usable runs for {algorithm} at n = {}",
                        spec.n_grid[i]
                    )));
                }
                mean_errors.push(mean(&chosen));
                mean_min.push(mean(&mins));
                mean_final.push(mean(&finals));
                per_repeat.push(chosen);
            }
            let xs: Vec<f64> = spec.n_grid.iter().map(|&n| (n as f64).ln()).collect();
            let ys: Vec<f64> = mean_errors.iter().map(|e| e.ln()).collect();
            Ok(SlopeResult {
                algorithm,
                regime: spec.regime,
                statistic,
                n_grid: spec.n_grid.clone(),
                mean_errors,
                per_repeat_errors: per_repeat,
                mean_min_errors: mean_min,
                mean_final_errors: mean_final,
                fit: linfit(&xs, &ys)?,
                excluded_runs: excluded,
                degenerate_runs: degenerate,
            })
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Radius schedule `c·n^{−exponent}` with `c` calibrated from the reference
/// algorithm: `c = factor · mean_min_error(n_max) · n_max^{exponent}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusRule {
    pub exponent: f64,
    pub factor: f64,
    pub reference: Algorithm,
}

impl RadiusRule {
    /// `n^{−1/(2p)}` for the GLM and `n^{−1/4}` for the mixture, calibrated at
    /// twice NormGD's error at the largest sample size.
    pub fn theoretical(spec: &ExperimentSpec) -> Self {
        let exponent = match spec.model {
            Model::Glm => 1.0 / (2.0 * spec.p as f64),
            Model::Gmm => 0.25,
        };
        Self {
            exponent,
            factor: 2.0,
            reference: Algorithm::NormGd,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingRow {
    pub n: usize,
    pub algorithm: Algorithm,
    pub repeat: usize,
    pub radius: f64,
    /// `None` when the radius was never reached (censored).
    pub iterations: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingTable {
    pub rule: RadiusRule,
    pub constant: f64,
    pub rows: Vec<ScalingRow>,
}

impl ScalingTable {
    /// Median count over repeats; censored runs rank above every count, so
    /// a censored median comes back as `None`.
    pub fn median_iterations(&self, n: usize, algorithm: Algorithm) -> Option<usize> {
        let mut counts: Vec<usize> = self
            .rows
            .iter()
            .filter(|r| r.n == n && r.algorithm == algorithm)
            .map(|r| r.iterations.unwrap_or(usize::MAX))
            .collect();
        if counts.is_empty() {
            return None;
        }
        counts.sort_unstable();
        let mid = counts[(counts.len() - 1) / 2];
        (mid != usize::MAX).then_some(mid)
    }

    pub fn censored(&self, n: usize, algorithm: Algorithm) -> usize {
        self.rows
            .iter()
            .filter(|r| r.n == n && r.algorithm == algorithm && r.iterations.is_none())
            .count()
    }
}

/// Iterations each algorithm needs to first reach `c·n^{−exponent}`.
pub fn iteration_scaling_study(spec: &ExperimentSpec, rule: RadiusRule) -> Result<ScalingTable> {
    spec.validate()?;
    spec.validate_grid(2)?;
    if spec.regime != Regime::Low {
        return Err(Error::InvalidConfig(
            "iteration scaling study needs the low regime".into(),
        ));
    }
    let mut algorithms = spec.algorithms.clone();
    if !algorithms.contains(&rule.reference) {
        algorithms.insert(0, rule.reference);
    }
    let cells: Vec<(usize, usize)> = spec
        .n_grid
        .iter()
        .flat_map(|&n| (0..spec.repeats).map(move |r| (n, r)))
        .collect();
    let trials = run_cells(spec, &cells, &algorithms)?;
    let reference = algorithms
        .iter()
        .position(|&a| a == rule.reference)
        .unwrap();

    let n_max = *spec.n_grid.last().unwrap();
    let ref_errors: Vec<f64> = trials
        .iter()
        .filter(|t| t.n == n_max)
        .filter_map(|t| t.traces[reference].min_error)
        .collect();
    let constant = rule.factor * mean(&ref_errors) * (n_max as f64).powf(rule.exponent);

    let mut rows = Vec::new();
    for trial in &trials {
        let radius = constant * (trial.n as f64).powf(-rule.exponent);
        for tr in &trial.traces {
            rows.push(ScalingRow {
                n: trial.n,
                algorithm: tr.algorithm,
                repeat: trial.repeat,
                radius,
                iterations: iterations_to_radius(tr, radius),
            });
        }
    }
    Ok(ScalingTable {
        rule,
        constant,
        rows,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

#[derive(Serialize)]
struct RunMeta<'a> {
    algorithm: Algorithm,
    repeat: usize,
    n: usize,
    seed: u64,
    cell_seed: u64,
    dataset_hash: &'a str,
    config: OptimizerConfig,
    theta0: &'a [f64],
    final_iterate: &'a [f64],
    status: RunStatus,
    iterations: usize,
    min_error: Option<f64>,
    min_error_iter: Option<usize>,
    final_error: Option<f64>,
}

/// Writes `spec.json`, `traces/<alg>_r<k>.{csv,json}`, `summary.csv` and
/// `convergence.svg` under `dir`.
pub fn write_convergence(dir: &Path, result: &ConvergenceResult) -> Result<()> {
    let traces_dir = dir.join("traces");
    fs::create_dir_all(&traces_dir)?;
    write_json(&dir.join("spec.json"), &result.spec)?;

    let mut summary = csv::Writer::from_path(dir.join("summary.csv"))?;
    summary.write_record([
        "algorithm",
        "repeat",
        "min_error",
        "min_error_iter",
        "final_error",
        "iterations",
        "status",
    ])?;
    for trial in &result.trials {
        for tr in &trial.traces {
            let stem = format!("{}_r{}", tr.algorithm, trial.repeat);
            tr.write_csv(fs::File::create(traces_dir.join(format!("{stem}.csv")))?)?;
            write_json(
                &traces_dir.join(format!("{stem}.json")),
                &RunMeta {
                    algorithm: tr.algorithm,
                    repeat: trial.repeat,
                    n: trial.n,
                    seed: result.spec.seed,
                    cell_seed: trial.cell_seed,
                    dataset_hash: &trial.dataset_hash,
                    config: result.spec.optimizer.config_for(tr.algorithm),
                    theta0: &trial.theta0,
                    final_iterate: &tr.final_iterate,
                    status: tr.status,
                    iterations: tr.iterations,
                    min_error: tr.min_error,
                    min_error_iter: tr.min_error_iter,
                    final_error: tr.final_error(),
                },
            )?;
            summary.write_record([
                tr.algorithm.to_string(),
                trial.repeat.to_string(),
                opt(tr.min_error),
                opt(tr.min_error_iter),
                opt(tr.final_error()),
                tr.iterations.to_string(),
                status_name(&tr.status).to_string(),
            ])?;
        }
    }
    summary.flush()?;

    let mut plot = Plot::new(
        &format!(
            "{:?} {:?} SNR, n = {}",
            result.spec.model, result.spec.regime, result.spec.n
        ),
        "iteration",
        "log10 error",
    );
    for alg in &result.spec.algorithms {
        let len = result
            .traces(*alg)
            .iter()
            .map(|t| t.errors.len())
            .max()
            .unwrap_or(0);
        let curve = result.mean_curve(*alg, len);
        let pts: Vec<(f64, f64)> = curve
            .iter()
            .enumerate()
            .filter(|(_, e)| **e > 0.0)
            .map(|(t, e)| (t as f64, e.log10()))
            .collect();
        plot.add(Series::line(alg.as_str(), pts));
    }
    fs::write(dir.join("convergence.svg"), plot.render())?;
    Ok(())
}

/// Writes `spec.json`, `summary.csv`, `errors.csv` and `slope.svg` under `dir`.
pub fn write_slope(dir: &Path, spec: &ExperimentSpec, results: &[SlopeResult]) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("spec.json"), spec)?;
    write_json(&dir.join("slopes.json"), &results)?;

    let mut summary = csv::Writer::from_path(dir.join("summary.csv"))?;
    summary.write_record(["n", "algorithm", "mean_error", "slope", "r2", "statistic"])?;
    let mut errors = csv::Writer::from_path(dir.join("errors.csv"))?;
    errors.write_record(["n", "algorithm", "repeat", "error"])?;
    for res in results {
        for (i, &n) in res.n_grid.iter().enumerate() {
            summary.write_record([
                n.to_string(),
                res.algorithm.to_string(),
                res.mean_errors[i].to_string(),
                res.fit.slope.to_string(),
                res.fit.r_squared.to_string(),
                statistic_name(res.statistic).to_string(),
            ])?;
            for (r, e) in res.per_repeat_errors[i].iter().enumerate() {
                errors.write_record([
                    n.to_string(),
                    res.algorithm.to_string(),
                    r.to_string(),
                    e.to_string(),
                ])?;
            }
        }
    }
    summary.flush()?;
    errors.flush()?;

    let mut plot = Plot::new(
        &format!("{:?} {:?} SNR", spec.model, spec.regime),
        "ln n",
        "ln error",
    );
    for res in results {
        let xs: Vec<f64> = res.n_grid.iter().map(|&n| (n as f64).ln()).collect();
        let scatter: Vec<(f64, f64)> = res
            .per_repeat_errors
            .iter()
            .zip(&xs)
            .flat_map(|(errs, &x)| errs.iter().map(move |e| (x, e.ln())))
            .collect();
        plot.add(Series::scatter(
            &format!("{} repeats", res.algorithm),
            scatter,
        ));
        let means: Vec<(f64, f64)> = xs
            .iter()
            .zip(&res.mean_errors)
            .map(|(&x, e)| (x, e.ln()))
            .collect();
        plot.add(Series::scatter(&format!("{} mean", res.algorithm), means));
        let (x0, x1) = (xs[0], xs[xs.len() - 1]);
        let line = vec![
            (x0, res.fit.intercept + res.fit.slope * x0),
            (x1, res.fit.intercept + res.fit.slope * x1),
        ];
        plot.add(Series::line(
            &format!(
                "{} fit: slope {:.3}, r² {:.3}",
                res.algorithm, res.fit.slope, res.fit.r_squared
            ),
            line,
        ));
    }
    fs::write(dir.join("slope.svg"), plot.render())?;
    Ok(())
}

/// Writes `spec.json` and `scaling.csv` under `dir`.
pub fn write_scaling(dir: &Path, spec: &ExperimentSpec, table: &ScalingTable) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("spec.json"), spec)?;
    let mut w = csv::Writer::from_path(dir.join("scaling.csv"))?;
    w.write_record(["n", "algorithm", "repeat", "radius", "iterations"])?;
    for row in &table.rows {
        w.write_record([
            row.n.to_string(),
            row.algorithm.to_string(),
            row.repeat.to_string(),
            row.radius.to_string(),
            opt(row.iterations),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn status_name(s: &RunStatus) -> &'static str {
    match s {
        RunStatus::MaxIter => "max_iter",
        RunStatus::Converged => "converged",
        RunStatus::DegenerateCurvature { .. } => "degenerate_curvature",
    }
}

fn statistic_name(s: ErrorStatistic) -> &'static str {
    match s {
        ErrorStatistic::MinOverIterates => "min_over_iterates",
        ErrorStatistic::FinalIterate => "final_iterate",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(model: Model, regime: Regime) -> ExperimentSpec {
        let mut s = ExperimentSpec::replication(model, regime);
        s.repeats = 2;
        s.n = 200;
        s.n_grid = vec![200, 400, 800];
        s.optimizer.max_iter_gd = 50;
        s.optimizer.max_iter_normgd = 50;
        s.jobs = 2;
        s
    }

    #[test]
    fn regime_consistency() {
        let mut s = small(Model::Glm, Regime::Low);
        s.theta_star = vec![1.0, 0.0, 0.0, 0.0];
        assert!(s.validate().is_err());
        let mut s = small(Model::Gmm, Regime::Strong);
        s.theta_star = vec![0.0, 0.0];
        assert!(s.validate().is_err());
        let mut s = small(Model::Glm, Regime::Low);
        s.algorithms = vec![Algorithm::Em];
        assert!(s.validate().is_err());
    }

    #[test]
    fn grid_checks() {
        let mut s = small(Model::Glm, Regime::Low);
        s.n_grid = vec![200, 400];
        assert!(slope_experiment(&s).is_err());
        s.n_grid = vec![200, 400, 400];
        assert!(slope_experiment(&s).is_err());
    }

    #[test]
    fn cells_share_dataset_and_start() {
        let s = small(Model::Gmm, Regime::Low);
        let (_, a, ha) = prepare_cell(&s, 300, 1).unwrap();
        let (_, b, hb) = prepare_cell(&s, 300, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert!((norm(&a) - 0.5).abs() < 1e-12);
        let (_, c, hc) = prepare_cell(&s, 300, 2).unwrap();
        assert_ne!(a, c);
        assert_ne!(ha, hc);
    }

    #[test]
    fn convergence_is_deterministic_across_pool_widths() {
        let mut s = small(Model::Glm, Regime::Low);
        let a = convergence_experiment(&s).unwrap();
        s.jobs = 1;
        let b = convergence_experiment(&s).unwrap();
        for (x, y) in a.trials.iter().zip(&b.trials) {
            for (tx, ty) in x.traces.iter().zip(&y.traces) {
                assert_eq!(tx.errors, ty.errors);
            }
        }
    }

    #[test]
    fn scaling_with_huge_radius_is_zero() {
        let s = small(Model::Glm, Regime::Low);
        let rule = RadiusRule {
            exponent: 0.25,
            factor: 1e6,
            reference: Algorithm::NormGd,
        };
        let t = iteration_scaling_study(&s, rule).unwrap();
        assert!(t.rows.iter().all(|r| r.iterations == Some(0)));
        assert_eq!(t.median_iterations(200, Algorithm::Gd), Some(0));
    }

    #[test]
    fn scaling_requires_low_regime() {
        let s = small(Model::Glm, Regime::Strong);
        assert!(iteration_scaling_study(&s, RadiusRule::theoretical(&s)).is_err());
    }

    #[test]
    fn median_with_censoring() {
        let row = |r, it| ScalingRow {
            n: 10,
            algorithm: Algorithm::Gd,
            repeat: r,
            radius: 1.0,
            iterations: it,
        };
        let t = ScalingTable {
            rule: RadiusRule {
                exponent: 0.25,
                factor: 2.0,
                reference: Algorithm::NormGd,
            },
            constant: 1.0,
            rows: vec![row(0, Some(5)), row(1, None), row(2, Some(3))],
        };
        assert_eq!(t.median_iterations(10, Algorithm::Gd), Some(5));
        assert_eq!(t.censored(10, Algorithm::Gd), 1);
        let t2 = ScalingTable {
            rows: vec![row(0, None), row(1, None), row(2, Some(3))],
            ..t
        };
        assert_eq!(t2.median_iterations(10, Algorithm::Gd), None);
    }
}
