//! Seeded random streams and the synthetic datasets for both models.
//!
//! Uniform bits come from ChaCha8; normals are produced with Box–Muller so
//! the sample sequence depends only on the seed. Child streams are derived
//! from `(seed, index)` with a SplitMix64 finalizer, which lets parallel
//! trials draw independent data while the aggregate stays reproducible.

use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{check_dim, Error, Result};

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic random stream. Not `Sync`; derive children with
/// [`Rng::split`] before fanning work out to threads.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
    spare: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream keyed by `(seed, index)`. Independent of how much of the
    /// parent stream has been consumed.
    pub fn split(&self, index: u64) -> Rng {
        let child = splitmix64(self.seed ^ splitmix64(index.wrapping_mul(GOLDEN_GAMMA) ^ 0x51a7));
        Rng::new(child)
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn coin(&mut self) -> bool {
        self.inner.next_u64() >> 63 == 1
    }

    /// Standard normal draw (Box–Muller, second variate cached).
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 − U lies in (0, 1], so the log is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare = Some(r * angle.sin());
        r * angle.cos()
    }

    pub fn normals(&mut self, count: usize) -> Vec<f64> {
        (0..count).map(|_| self.normal()).collect()
    }
}

/// Sample from `Y = (Xᵀθ*)^p + ε`, `X ~ N(0, I_d)`, `ε ~ N(0, σ²)`.
/// `x` is row-major `n × d`.
#[derive(Clone, Debug, PartialEq)]
pub struct GlmDataset {
    pub n: usize,
    pub d: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub p: u32,
    pub sigma: f64,
    pub theta_star: Vec<f64>,
}

/// Sample from `½N(−θ*, σ²I_d) + ½N(θ*, σ²I_d)`; `x` is row-major `n × d`.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmDataset {
    pub n: usize,
    pub d: usize,
    pub x: Vec<f64>,
    pub sigma: f64,
    pub theta_star: Vec<f64>,
}

fn validate_shape(n: usize, d: usize, theta_star: &[f64], sigma: f64) -> Result<()> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidInput(format!(
            "dataset needs n >= 1 and d >= 1, got n={n}, d={d}"
        )));
    }
    check_dim(d, theta_star.len())?;
    if !theta_star.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("theta_star must be finite".into()));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidInput(format!(
            "sigma must be finite and >= 0, got {sigma}"
        )));
    }
    Ok(())
}

/// Draws a GLM sample. Rows are generated one at a time: `d` covariates,
/// then the noise term.
///
/// `sigma = 0` is accepted and gives noiseless responses.
pub fn sample_glm(
    n: usize,
    d: usize,
    theta_star: &[f64],
    p: u32,
    sigma: f64,
    rng: &mut Rng,
) -> Result<GlmDataset> {
    validate_shape(n, d, theta_star, sigma)?;
    if p < 2 {
        return Err(Error::InvalidInput(format!(
            "link exponent p must be >= 2, got {p}"
        )));
    }
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let start = x.len();
        for _ in 0..d {
            x.push(rng.normal());
        }
        let u: f64 = x[start..].iter().zip(theta_star).map(|(a, b)| a * b).sum();
        let noise = rng.normal();
        y.push(u.powi(p as i32) + sigma * noise);
    }
    let data = GlmDataset {
        n,
        d,
        x,
        y,
        p,
        sigma,
        theta_star: theta_star.to_vec(),
    };
    data.validate()?;
    Ok(data)
}

/// Draws a mixture sample: fair coin for the component sign, then
/// `±θ* + σ·z` with `z ~ N(0, I_d)`.
pub fn sample_gmm(
    n: usize,
    d: usize,
    theta_star: &[f64],
    sigma: f64,
    rng: &mut Rng,
) -> Result<GmmDataset> {
    validate_shape(n, d, theta_star, sigma)?;
    if sigma == 0.0 {
        return Err(Error::InvalidInput("mixture sigma must be > 0".into()));
    }
    let mut x = Vec::with_capacity(n * d);
    for _ in 0..n {
        let sign = if rng.coin() { 1.0 } else { -1.0 };
        for &t in theta_star {
            x.push(sign * t + sigma * rng.normal());
        }
    }
    let data = GmmDataset {
        n,
        d,
        x,
        sigma,
        theta_star: theta_star.to_vec(),
    };
    data.validate()?;
    Ok(data)
}

impl GlmDataset {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn validate(&self) -> Result<()> {
        validate_shape(self.n, self.d, &self.theta_star, self.sigma)?;
        check_dim(self.n * self.d, self.x.len())?;
        check_dim(self.n, self.y.len())?;
        if self.p < 2 {
            return Err(Error::InvalidInput("link exponent p must be >= 2".into()));
        }
        if !self.x.iter().chain(&self.y).all(|v| v.is_finite()) {
            return Err(Error::InvalidInput(
                "dataset contains non-finite values".into(),
            ));
        }
        Ok(())
    }

    /// CSV with header `x_1,…,x_d,y`, one sample per line.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=self.d).map(|j| format!("x_{j}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for i in 0..self.n {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.y[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// FNV-1a over the shape and every stored value; used to stamp run
    /// metadata.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        h.word(self.n as u64);
        h.word(self.d as u64);
        h.word(self.p as u64);
        h.word(self.sigma.to_bits());
        self.x
            .iter()
            .chain(&self.y)
            .for_each(|v| h.word(v.to_bits()));
        h.finish()
    }
}

impl GmmDataset {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn validate(&self) -> Result<()> {
        validate_shape(self.n, self.d, &self.theta_star, self.sigma)?;
        if self.sigma == 0.0 {
            return Err(Error::InvalidInput("mixture sigma must be > 0".into()));
        }
        check_dim(self.n * self.d, self.x.len())?;
        if !self.x.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput(
                "dataset contains non-finite values".into(),
            ));
        }
        Ok(())
    }

    /// CSV with header `x_1,…,x_d`, one sample per line.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<String> = (1..=self.d).map(|j| format!("x_{j}")).collect();
        w.write_record(&header)?;
        for i in 0..self.n {
            let rec: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        h.word(self.n as u64);
        h.word(self.d as u64);
        h.word(self.sigma.to_bits());
        self.x.iter().for_each(|v| h.word(v.to_bits()));
        h.finish()
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn word(&mut self, w: u64) {
        for b in w.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    #[test]
    fn same_seed_same_sequence() {
        let a = Rng::new(42).normals(1000);
        let b = Rng::new(42).normals(1000);
        assert_eq!(a, b);
    }

    #[test]
    fn split_children_differ() {
        let r = Rng::new(42);
        let a = r.split(0).normals(16);
        let b = r.split(1).normals(16);
        assert_ne!(a, b);
        assert_eq!(r.split(1).normals(16), b);
    }

    #[test]
    fn split_ignores_parent_position() {
        let mut r = Rng::new(5);
        let before = r.split(3).normals(4);
        r.normals(10);
        assert_eq!(r.split(3).normals(4), before);
    }

    #[test]
    fn normal_mean_within_clt_bound() {
        let z = Rng::new(2024).normals(1_000_000);
        let m = mean(&z);
        assert!(m.abs() < 4.0 / 1000.0, "mean {m}");
        let var = z.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / z.len() as f64;
        // Var of the sample variance is 2/n for a standard normal.
        assert!((var - 1.0).abs() < 5.0 * (2.0f64 / 1e6).sqrt(), "var {var}");
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut r = Rng::new(9);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn glm_zero_signal_zero_noise() {
        let data = sample_glm(50, 3, &[0.0; 3], 2, 0.0, &mut Rng::new(1)).unwrap();
        assert!(data.y.iter().all(|&y| y == 0.0));
    }

    #[test]
    fn glm_deterministic_link() {
        let data = sample_glm(50, 2, &[1.0, 0.0], 2, 0.0, &mut Rng::new(1)).unwrap();
        for i in 0..data.n {
            assert_eq!(data.y[i], data.row(i)[0].powi(2));
        }
    }

    #[test]
    fn glm_second_moment() {
        // E[(Xᵀθ)²] = ‖θ‖² = 30; with σ = 1 and Y = (Xᵀθ)² + ε,
        // Var(Y) = 2‖θ‖⁴ + 1 = 1801.
        let n = 100_000;
        let data = sample_glm(n, 4, &[1.0, 2.0, 3.0, 4.0], 2, 1.0, &mut Rng::new(77)).unwrap();
        let m = mean(&data.y);
        let se = (1801.0f64 / n as f64).sqrt();
        assert!((m - 30.0).abs() < 5.0 * se, "mean {m}");
    }

    #[test]
    fn gmm_moments() {
        let n = 100_000;
        let ts = [1.0, 2.0];
        let data = sample_gmm(n, 2, &ts, 1.0, &mut Rng::new(8)).unwrap();
        for (j, t) in ts.iter().enumerate() {
            let col: Vec<f64> = (0..n).map(|i| data.row(i)[j]).collect();
            let m = mean(&col);
            let var = 1.0 + t * t;
            assert!(m.abs() < 5.0 * (var / n as f64).sqrt(), "mean {m}");
            // X² = (±t + z)²; Var(X²) = E[X⁴] − (1 + t²)² = 2 + 4t².
            let m2 = mean(&col.iter().map(|v| v * v).collect::<Vec<_>>());
            let sd2 = ((2.0 + 4.0 * ts[j] * ts[j]) / n as f64).sqrt();
            assert!((m2 - var).abs() < 5.0 * sd2, "second moment {m2}");
        }
    }

    #[test]
    fn gmm_zero_signal_is_pure_gaussian() {
        let mut a = Rng::new(3);
        let data = sample_gmm(200, 2, &[0.0, 0.0], 1.5, &mut a).unwrap();
        let m = mean(&data.x);
        assert!(m.abs() < 0.5);
        assert!(data.x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn invalid_shapes_rejected() {
        let mut r = Rng::new(0);
        assert!(sample_glm(0, 2, &[0.0, 0.0], 2, 1.0, &mut r).is_err());
        assert!(sample_glm(5, 2, &[0.0], 2, 1.0, &mut r).is_err());
        assert!(sample_glm(5, 1, &[0.0], 1, 1.0, &mut r).is_err());
        assert!(sample_glm(5, 1, &[0.0], 2, -1.0, &mut r).is_err());
        assert!(sample_gmm(5, 1, &[0.0], 0.0, &mut r).is_err());
        assert!(sample_gmm(5, 0, &[], 1.0, &mut r).is_err());
    }

    #[test]
    fn csv_layout() {
        let data = sample_glm(3, 2, &[1.0, 0.0], 2, 0.0, &mut Rng::new(1)).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x_1,x_2,y");
        assert_eq!(lines.len(), 4);
        let first: Vec<f64> = lines[1].split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(first[0], data.row(0)[0]);
        assert_eq!(first[2], data.y[0]);

        let g = sample_gmm(2, 3, &[0.0; 3], 1.0, &mut Rng::new(1)).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("x_1,x_2,x_3\n"));
    }
}
