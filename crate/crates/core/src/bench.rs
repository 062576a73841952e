//! Resource-allocation benchmark: instance parameters, the covariate
//! distribution, and the demand model with tunable degree and
//! heteroscedasticity.
//!
//! Covariates are raw (no intercept); models that need one get it from
//! [`Dataset::with_intercept`](crate::regress::Dataset::with_intercept).

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, LogNormal, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::twostage::{FirstStage, TwoStageLp};

/// Parameter scheme for `c_z`, `ρ`, `μ` (not taken from the source recipe) and
/// the lognormal `τ` behind `q_w = τ‖c_z‖_∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceConfig {
    pub c_z_range: (f64, f64),
    pub rho_range: (f64, f64),
    pub mu_range: (f64, f64),
    pub tau_log_mean: f64,
    pub tau_log_sd: f64,
    pub z_max: f64,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        Self {
            c_z_range: (8.0, 12.0),
            rho_range: (0.8, 1.0),
            mu_range: (0.5, 2.0),
            tau_log_mean: 0.5,
            tau_log_sd: 0.05,
            z_max: 1e4,
        }
    }
}

impl InstanceConfig {
    pub fn scheme(&self) -> String {
        format!(
            "c_z~U({},{}) rho~U({},{}) mu~U({},{}) tau~LN({},{}) z_max={}",
            self.c_z_range.0,
            self.c_z_range.1,
            self.rho_range.0,
            self.rho_range.1,
            self.mu_range.0,
            self.mu_range.1,
            self.tau_log_mean,
            self.tau_log_sd,
            self.z_max
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResourceAllocInstance {
    pub n_resources: usize,
    pub n_customers: usize,
    pub c_z: Vec<f64>,
    pub rho: Vec<f64>,
    /// `|ℐ| × |𝒥|`
    pub mu: DMatrix<f64>,
    pub tau: Vec<f64>,
    pub q_w: Vec<f64>,
    pub z_max: f64,
}

fn uniform_range(r: (f64, f64), what: &str) -> Result<Uniform<f64>> {
    if !(r.0 > 0.0 && r.0 <= r.1 && r.1.is_finite()) {
        return Err(Error::BadConfig(format!("{what} range must satisfy 0 < lo ≤ hi, got {r:?}")));
    }
    Ok(Uniform::new_inclusive(r.0, r.1))
}

pub fn gen_instance(n_resources: usize, n_customers: usize, seed: u64, config: &InstanceConfig) -> Result<ResourceAllocInstance> {
    if n_resources == 0 || n_customers == 0 {
        return Err(Error::BadConfig("instance dimensions must be at least 1".into()));
    }
    if !(config.z_max > 0.0) || !config.z_max.is_finite() {
        return Err(Error::BadConfig("z_max must be positive and finite".into()));
    }
    let cz = uniform_range(config.c_z_range, "c_z")?;
    let rh = uniform_range(config.rho_range, "rho")?;
    let mu_d = uniform_range(config.mu_range, "mu")?;
    let tau_d = LogNormal::new(config.tau_log_mean, config.tau_log_sd)
        .map_err(|e| Error::BadConfig(format!("tau distribution: {e}")))?;
    let mut rng = stream(seed, Purpose::Instance, &[]);
    let c_z: Vec<f64> = (0..n_resources).map(|_| cz.sample(&mut rng)).collect();
    let rho: Vec<f64> = (0..n_resources).map(|_| rh.sample(&mut rng)).collect();
    let mut mu = DMatrix::zeros(n_resources, n_customers);
    for i in 0..n_resources {
        for j in 0..n_customers {
            mu[(i, j)] = mu_d.sample(&mut rng);
        }
    }
    let tau: Vec<f64> = (0..n_customers).map(|_| tau_d.sample(&mut rng)).collect();
    let cmax = c_z.iter().cloned().fold(0.0, f64::max);
    let q_w = tau.iter().map(|t| t * cmax).collect();
    Ok(ResourceAllocInstance { n_resources, n_customers, c_z, rho, mu, tau, q_w, z_max: config.z_max })
}

impl ResourceAllocInstance {
    /// Column of `v_ij` in the recourse vector.
    pub fn v_index(&self, i: usize, j: usize) -> usize {
        i * self.n_customers + j
    }

    pub fn w_index(&self, j: usize) -> usize {
        self.n_resources * self.n_customers + j
    }

    pub fn slack_index(&self, i: usize) -> usize {
        self.n_resources * self.n_customers + self.n_customers + i
    }

    pub fn surplus_index(&self, j: usize) -> usize {
        self.n_resources * self.n_customers + self.n_customers + self.n_resources + j
    }
}

/// Recourse columns `[v_ij (i-major), w_j, slack_i, surplus_j]`; rows
/// `Σ_j v_ij + slack_i = ρ_i z_i` then `Σ_i μ_ij v_ij + w_j − surplus_j = y_j`.
pub fn to_two_stage(inst: &ResourceAllocInstance) -> Result<TwoStageLp> {
    let (ni, nj) = (inst.n_resources, inst.n_customers);
    let d_v = ni * nj + nj + ni + nj;
    let m2 = ni + nj;
    let mut w = DMatrix::zeros(m2, d_v);
    let mut t = DMatrix::zeros(m2, ni);
    let mut h = DMatrix::zeros(m2, nj);
    for i in 0..ni {
        for j in 0..nj {
            w[(i, inst.v_index(i, j))] = 1.0;
            w[(ni + j, inst.v_index(i, j))] = inst.mu[(i, j)];
        }
        w[(i, inst.slack_index(i))] = 1.0;
        t[(i, i)] = -inst.rho[i];
    }
    for j in 0..nj {
        w[(ni + j, inst.w_index(j))] = 1.0;
        w[(ni + j, inst.surplus_index(j))] = -1.0;
        h[(ni + j, j)] = 1.0;
    }
    let mut c_v = vec![0.0; d_v];
    for j in 0..nj {
        c_v[inst.w_index(j)] = inst.q_w[j];
    }
    TwoStageLp::new(
        inst.c_z.clone(),
        FirstStage::boxed(vec![0.0; ni], vec![inst.z_max; ni]),
        w,
        t,
        c_v,
        vec![0.0; m2],
        h,
    )
}

/// Random correlation matrix from a C-vine of Beta(2,2) partial correlations
/// mapped to `[−1, 1]`.
pub fn vine_correlation(d_x: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = stream(seed, Purpose::Correlation, &[d_x as u64]);
    let beta = Beta::new(2.0, 2.0).expect("valid beta parameters");
    let mut partial = DMatrix::zeros(d_x, d_x);
    let mut s = DMatrix::identity(d_x, d_x);
    for k in 0..d_x.saturating_sub(1) {
        for i in k + 1..d_x {
            partial[(k, i)] = 2.0 * beta.sample(&mut rng) - 1.0;
            let mut p: f64 = partial[(k, i)];
            for l in (0..k).rev() {
                let (a, b) = (partial[(l, i)], partial[(l, k)]);
                p = p * ((1.0 - a * a) * (1.0 - b * b)).sqrt() + a * b;
            }
            s[(k, i)] = p;
            s[(i, k)] = p;
        }
    }
    s
}

/// Folded normal `|V|`, `V ~ N(0, Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateSampler {
    correlation: DMatrix<f64>,
    chol: DMatrix<f64>,
    seed: u64,
}

impl CovariateSampler {
    pub fn new(correlation: DMatrix<f64>, seed: u64) -> Result<Self> {
        let d = correlation.nrows();
        if d == 0 || correlation.ncols() != d {
            return Err(Error::dims("correlation must be square and nonempty"));
        }
        let chol = correlation
            .clone()
            .cholesky()
            .ok_or_else(|| Error::DomainError("correlation is not positive definite".into()))?
            .l();
        Ok(Self { correlation, chol, seed })
    }

    /// Sampler over a fresh vine correlation.
    pub fn vine(d_x: usize, seed: u64) -> Result<Self> {
        Self::new(vine_correlation(d_x, seed), seed)
    }

    pub fn d_x(&self) -> usize {
        self.correlation.nrows()
    }

    pub fn correlation(&self) -> &DMatrix<f64> {
        &self.correlation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `n` rows drawn one after another, so a longer draw extends a shorter one.
    pub fn sample_with(&self, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let d = self.d_x();
        let mut x = DMatrix::zeros(n, d);
        let mut z = vec![0.0; d];
        for i in 0..n {
            z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            for a in 0..d {
                let v: f64 = (0..=a).map(|b| self.chol[(a, b)] * z[b]).sum();
                x[(i, a)] = v.abs();
            }
        }
        x
    }

    /// Rows from the stream keyed by `keys`.
    pub fn sample_keyed(&self, n: usize, keys: &[u64]) -> DMatrix<f64> {
        self.sample_with(n, &mut stream(self.seed, Purpose::Covariates, keys))
    }
}

pub fn sample_covariates(sampler: &CovariateSampler, n: usize) -> DMatrix<f64> {
    sampler.sample_keyed(n, &[])
}

pub const DEFAULT_CALIBRATION_SAMPLES: usize = 10_001;

/// Demand `Y_j = φ_j + Σ_l ζ_jl X_l^p + q_j(X) ε_j`, `ε_j ~ N(0, σ²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandModel {
    pub phi: Vec<f64>,
    /// `|𝒥| × 3`
    pub zeta: DMatrix<f64>,
    /// Zero-based indices into the raw covariate vector.
    pub active: [usize; 3],
    pub degree: f64,
    pub sigma: f64,
    pub omega: u32,
    /// `|𝒥| × 3`
    pub pi_star: DMatrix<f64>,
    /// Median of `exp(Σ_l π_jl log(1+X_l))`; `q_j` divides by it.
    pub s: Vec<f64>,
    pub d_x: usize,
}

fn validate_shape(p: f64, omega: u32, d_x: usize, sigma: f64) -> Result<()> {
    if ![0.5, 1.0, 2.0].contains(&p) {
        return Err(Error::BadConfig(format!("degree must be 0.5, 1 or 2, got {p}")));
    }
    if !(1..=3).contains(&omega) {
        return Err(Error::BadConfig(format!("omega must be 1, 2 or 3, got {omega}")));
    }
    if d_x < 3 {
        return Err(Error::BadConfig(format!("need at least 3 covariates, got {d_x}")));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::BadConfig(format!("sigma must be finite and nonnegative, got {sigma}")));
    }
    Ok(())
}

/// Draws `φ`, `ζ`, `π` and calibrates `s` on `calibration` fresh covariate rows.
pub fn gen_demand_model(
    sampler: &CovariateSampler,
    n_customers: usize,
    p: f64,
    sigma: f64,
    omega: u32,
    seed: u64,
    calibration: usize,
) -> Result<DemandModel> {
    let d_x = sampler.d_x();
    validate_shape(p, omega, d_x, sigma)?;
    if n_customers == 0 {
        return Err(Error::BadConfig("need at least one customer".into()));
    }
    let mut rng = stream(seed, Purpose::DemandModel, &[]);
    let offset = Uniform::new_inclusive(-4.0, 4.0);
    let unit = Uniform::new(0.0, 1.0);
    let pi_hi = 2.0 * f64::from(omega - 1).powi(2);
    let mut phi = vec![0.0; n_customers];
    let mut zeta = DMatrix::zeros(n_customers, 3);
    let mut pi_star = DMatrix::zeros(n_customers, 3);
    let base = [10.0, 5.0, 2.0];
    for j in 0..n_customers {
        let d0: f64 = rng.sample(StandardNormal);
        phi[j] = 50.0 + 5.0 * d0;
        for l in 0..3 {
            zeta[(j, l)] = base[l] + offset.sample(&mut rng);
        }
        for l in 0..3 {
            pi_star[(j, l)] = pi_hi * unit.sample(&mut rng);
        }
    }
    let mut model = DemandModel { phi, zeta, active: [0, 1, 2], degree: p, sigma, omega, pi_star, s: vec![1.0; n_customers], d_x };
    if omega > 1 {
        if calibration == 0 {
            return Err(Error::BadConfig("calibration sample size must be positive".into()));
        }
        let xs = sampler.sample_with(calibration, &mut stream(seed, Purpose::Calibration, &[]));
        for j in 0..n_customers {
            let mut v: Vec<f64> = (0..calibration).map(|i| model.log_scale(j, xs.row(i).iter().copied()).exp()).collect();
            v.sort_by(f64::total_cmp);
            let mid = calibration / 2;
            model.s[j] = if calibration % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) };
        }
    }
    Ok(model)
}

impl DemandModel {
    pub fn n_customers(&self) -> usize {
        self.phi.len()
    }

    fn log_scale(&self, j: usize, x: impl Iterator<Item = f64>) -> f64 {
        let x: Vec<f64> = x.collect();
        self.active.iter().enumerate().map(|(l, &k)| self.pi_star[(j, l)] * (1.0 + x[k]).abs().ln()).sum()
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d_x {
            return Err(Error::dims(format!("covariate vector has {} entries, model expects {}", x.len(), self.d_x)));
        }
        Ok(())
    }

    /// `f*(x)` for a raw covariate vector.
    pub fn f_star(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_x(x)?;
        Ok((0..self.n_customers())
            .map(|j| {
                self.phi[j]
                    + self.active.iter().enumerate().map(|(l, &k)| self.zeta[(j, l)] * x[k].powf(self.degree)).sum::<f64>()
            })
            .collect())
    }

    /// `q*(x)`; identically one when `ω = 1`.
    pub fn q_star(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_x(x)?;
        if self.omega == 1 {
            return Ok(vec![1.0; self.n_customers()]);
        }
        Ok((0..self.n_customers())
            .map(|j| (self.log_scale(j, x.iter().copied()).exp() / self.s[j]).sqrt())
            .collect())
    }

    /// `f*(x) + q*(x)·σ·ξ` for each standard normal row `ξ` drawn from `rng`.
    pub fn draw_at(&self, x: &[f64], m: usize, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
        let f = self.f_star(x)?;
        let q = self.q_star(x)?;
        let mut y = DMatrix::zeros(m, self.n_customers());
        for i in 0..m {
            for j in 0..self.n_customers() {
                let e: f64 = rng.sample(StandardNormal);
                y[(i, j)] = f[j] + q[j] * self.sigma * e;
            }
        }
        Ok(y)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let row = |s: &mut String, v: &mut dyn Iterator<Item = f64>| {
            let p: Vec<String> = v.map(|x| format!("{x:?}")).collect();
            let _ = writeln!(s, "{}", p.join(" "));
        };
        let _ = writeln!(s, "demand 1");
        let _ = writeln!(s, "dims {} {}", self.n_customers(), self.d_x);
        let _ = writeln!(s, "degree {:?}", self.degree);
        let _ = writeln!(s, "sigma {:?}", self.sigma);
        let _ = writeln!(s, "omega {}", self.omega);
        let _ = writeln!(s, "active {} {} {}", self.active[0], self.active[1], self.active[2]);
        let _ = writeln!(s, "phi");
        row(&mut s, &mut self.phi.iter().copied());
        let _ = writeln!(s, "zeta");
        for j in 0..self.n_customers() {
            row(&mut s, &mut self.zeta.row(j).iter().copied());
        }
        let _ = writeln!(s, "pi_star");
        for j in 0..self.n_customers() {
            row(&mut s, &mut self.pi_star.row(j).iter().copied());
        }
        let _ = writeln!(s, "s");
        row(&mut s, &mut self.s.iter().copied());
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let mut next = |what: &str| lines.next().ok_or_else(|| Error::Parse(format!("missing {what}")));
        let floats = |l: &str, what: &str| -> Result<Vec<f64>> {
            l.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("{what}: {e}"))))
                .collect()
        };
        let keyed = |l: &str, key: &str| -> Result<String> {
            l.strip_prefix(key)
                .map(|r| r.trim().to_string())
                .ok_or_else(|| Error::Parse(format!("expected `{key}` line, found `{l}`")))
        };
        if next("header")? != "demand 1" {
            return Err(Error::Parse("unknown demand header".into()));
        }
        let dims: Vec<usize> = keyed(next("dims")?, "dims")?
            .split_whitespace()
            .map(|t| t.parse().map_err(|e| Error::Parse(format!("dims: {e}"))))
            .collect::<Result<_>>()?;
        let [nj, d_x] = dims[..] else {
            return Err(Error::Parse("dims needs two counts".into()));
        };
        let degree: f64 = keyed(next("degree")?, "degree")?.parse().map_err(|e| Error::Parse(format!("degree: {e}")))?;
        let sigma: f64 = keyed(next("sigma")?, "sigma")?.parse().map_err(|e| Error::Parse(format!("sigma: {e}")))?;
        let omega: u32 = keyed(next("omega")?, "omega")?.parse().map_err(|e| Error::Parse(format!("omega: {e}")))?;
        let act: Vec<usize> = keyed(next("active")?, "active")?
            .split_whitespace()
            .map(|t| t.parse().map_err(|e| Error::Parse(format!("active: {e}"))))
            .collect::<Result<_>>()?;
        let [a0, a1, a2] = act[..] else {
            return Err(Error::Parse("active needs three indices".into()));
        };
        validate_shape(degree, omega, d_x, sigma).map_err(|e| Error::Parse(e.to_string()))?;
        if [a0, a1, a2].iter().any(|&a| a >= d_x) {
            return Err(Error::Parse("active index out of range".into()));
        }
        let mut block = |name: &str, rows: usize, cols: usize| -> Result<DMatrix<f64>> {
            if next(name)? != name {
                return Err(Error::Parse(format!("expected section `{name}`")));
            }
            let mut m = DMatrix::zeros(rows, cols);
            for r in 0..rows {
                let v = floats(next(name)?, name)?;
                if v.len() != cols {
                    return Err(Error::Parse(format!("{name}: expected {cols} values")));
                }
                m.row_mut(r).iter_mut().zip(v).for_each(|(a, b)| *a = b);
            }
            Ok(m)
        };
        let phi = block("phi", 1, nj)?;
        let zeta = block("zeta", nj, 3)?;
        let pi_star = block("pi_star", nj, 3)?;
        let s = block("s", 1, nj)?;
        if s.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Parse("scale calibration must be positive".into()));
        }
        Ok(DemandModel {
            phi: phi.iter().copied().collect(),
            zeta,
            active: [a0, a1, a2],
            degree,
            sigma,
            omega,
            pi_star,
            s: s.iter().copied().collect(),
            d_x,
        })
    }
}

/// Responses for covariate rows `x`, errors from the stream keyed by `keys`.
pub fn simulate_demand_keyed(model: &DemandModel, x: &DMatrix<f64>, seed: u64, keys: &[u64]) -> Result<DMatrix<f64>> {
    if x.ncols() != model.d_x {
        return Err(Error::dims(format!("covariates have {} columns, model expects {}", x.ncols(), model.d_x)));
    }
    if x.iter().any(|&v| v < 0.0) {
        return Err(Error::DomainError("covariates must be nonnegative".into()));
    }
    let mut rng = stream(seed, Purpose::Errors, keys);
    let mut y = DMatrix::zeros(x.nrows(), model.n_customers());
    for i in 0..x.nrows() {
        let xi: Vec<f64> = x.row(i).iter().copied().collect();
        let row = model.draw_at(&xi, 1, &mut rng)?;
        y.row_mut(i).copy_from(&row.row(0));
    }
    Ok(y)
}

pub fn simulate_demand(model: &DemandModel, x: &DMatrix<f64>, seed: u64) -> Result<DMatrix<f64>> {
    simulate_demand_keyed(model, x, seed, &[])
}

/// `# key: value` lines prepended to instance files.
pub fn metadata_block(entries: &[(&str, String)]) -> String {
    let mut s = String::new();
    for (k, v) in entries {
        let _ = writeln!(s, "# {k}: {v}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vine_small_cases() {
        assert_eq!(vine_correlation(1, 3), DMatrix::identity(1, 1));
        let c = vine_correlation(2, 3);
        assert!(c[(0, 1)].abs() < 1.0);
        assert_eq!(c[(0, 1)], c[(1, 0)]);
    }

    #[test]
    fn homoscedastic_model_is_exact() {
        let s = CovariateSampler::vine(4, 1).unwrap();
        let m = gen_demand_model(&s, 5, 1.0, 5.0, 1, 2, 101).unwrap();
        assert!(m.pi_star.iter().all(|&v| v == 0.0));
        assert!(m.s.iter().all(|&v| v == 1.0));
        assert_eq!(m.q_star(&[0.3, 2.0, 1.0, 4.0]).unwrap(), vec![1.0; 5]);
        assert!(gen_demand_model(&s, 5, 3.0, 5.0, 1, 2, 101).is_err());
        assert!(gen_demand_model(&s, 5, 1.0, 5.0, 4, 2, 101).is_err());
    }

    #[test]
    fn deterministic_affine_demand() {
        let s = CovariateSampler::vine(3, 1).unwrap();
        let m = gen_demand_model(&s, 2, 1.0, 0.0, 1, 2, 1).unwrap();
        let x = sample_covariates(&s, 4);
        let y = simulate_demand(&m, &x, 9).unwrap();
        for i in 0..4 {
            let xi: Vec<f64> = x.row(i).iter().copied().collect();
            assert_eq!(y.row(i).iter().copied().collect::<Vec<_>>(), m.f_star(&xi).unwrap());
        }
    }

    #[test]
    fn micro_recourse_formula() {
        let inst = ResourceAllocInstance {
            n_resources: 1,
            n_customers: 1,
            c_z: vec![1.0],
            rho: vec![0.9],
            mu: DMatrix::from_element(1, 1, 1.3),
            tau: vec![2.0],
            q_w: vec![2.0],
            z_max: 100.0,
        };
        let m = to_two_stage(&inst).unwrap();
        for (z, y) in [(0.0, 3.0), (1.0, 0.5), (2.0, 4.0), (5.0, -1.0)] {
            let v = crate::twostage::second_stage_value(&m, &[z], &[y]).unwrap().value;
            assert!((v - 2.0 * (y - 1.3 * 0.9 * z).max(0.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn text_round_trip() {
        let s = CovariateSampler::vine(4, 5).unwrap();
        let m = gen_demand_model(&s, 3, 2.0, 5.0, 3, 6, 51).unwrap();
        assert_eq!(DemandModel::from_text(&m.to_text()).unwrap(), m);
    }
}
