//! Optimality-gap certification by multiple replications and the experiment
//! driver that sweeps methods, sample sizes and replications.
//!
//! Every random draw is keyed by `(seed, purpose, replication, batch)`, so
//! tables are identical for any thread count.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;

use crate::bench::{gen_demand_model, gen_instance, to_two_stage, CovariateSampler, DemandModel, InstanceConfig};
use crate::error::{Error, Result};
use crate::par;
use crate::regress::{
    cv_select, fit_knn, fit_lasso, fit_ols, fit_pipeline, knn_grid, lasso_lambda_grid, loo_ols, Dataset, FeatureTransform,
    FitMethod, HeteroModel, HeteroSpec, Hyper, PointModel, DEFAULT_DELTA,
};
use crate::rng::{derive_seed, stream, Purpose};
use crate::scenario::{
    build_er_saa_with, build_jplus_saa_with, build_knn_saa, build_n_saa, build_pp_with, empirical_residuals, loo_residuals,
    OlsShortcut, ScenarioSet, SupportBox,
};
use crate::twostage::{saa_objective, solve_lshaped_traced, LShapedOptions, TwoStageLp};

pub const DEFAULT_N_EVAL: usize = 1000;
pub const DEFAULT_N_BATCHES: usize = 30;
pub const DEFAULT_T_MULTIPLIER: f64 = 2.462;
/// Below this `|v̄|` the bound is reported as an absolute gap.
pub const NORMALIZATION_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct UcbOptions {
    pub n_eval: usize,
    pub n_batches: usize,
    pub t_multiplier: f64,
    pub lshaped_tol: f64,
    pub max_iter: usize,
}

impl Default for UcbOptions {
    fn default() -> Self {
        Self {
            n_eval: DEFAULT_N_EVAL,
            n_batches: DEFAULT_N_BATCHES,
            t_multiplier: DEFAULT_T_MULTIPLIER,
            lshaped_tol: 1e-7,
            max_iter: 1000,
        }
    }
}

impl UcbOptions {
    fn validate(&self) -> Result<()> {
        if self.n_eval == 0 {
            return Err(Error::BadConfig("n_eval must be at least 1".into()));
        }
        if self.n_batches < 2 {
            return Err(Error::BadConfig("n_batches must be at least 2".into()));
        }
        if !(self.t_multiplier >= 0.0) || !self.t_multiplier.is_finite() {
            return Err(Error::BadConfig("t_multiplier must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UcbReport {
    pub gaps: Vec<f64>,
    pub batch_optima: Vec<f64>,
    pub batch_costs: Vec<f64>,
    pub v_bar: f64,
    /// Percent of `|v̄|`, or an absolute gap when `absolute` is set.
    pub b99: f64,
    pub absolute: bool,
    pub t_multiplier: f64,
    pub n_eval: usize,
}

impl UcbReport {
    pub fn gap_mean(&self) -> f64 {
        mean(&self.gaps)
    }

    pub fn gap_std(&self) -> f64 {
        sample_var(&self.gaps).sqrt()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_var(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

/// `(100/|v̄|)(mean G + t √(var G / K))`, or the unnormalized bound when `|v̄|` is tiny.
pub fn ucb_from_gaps(gaps: &[f64], v_bar: f64, t_multiplier: f64) -> (f64, bool) {
    let ub = mean(gaps) + t_multiplier * (sample_var(gaps) / gaps.len() as f64).sqrt();
    if v_bar.abs() < NORMALIZATION_FLOOR {
        (ub, true)
    } else {
        (100.0 * ub / v_bar.abs(), false)
    }
}

/// Batch `k` of full-information scenarios `f*(x) + Q*(x)ε` (no projection).
pub fn batch_scenarios(demand: &DemandModel, x: &[f64], n_eval: usize, seed: u64, keys: &[u64], k: usize) -> Result<ScenarioSet> {
    let mut all = keys.to_vec();
    all.push(k as u64);
    let y = demand.draw_at(x, n_eval, &mut stream(seed, Purpose::Evaluation, &all))?;
    ScenarioSet::uniform(y)
}

/// Full-information SAA optimum of every batch.
pub fn fi_batch_optima(
    model: &TwoStageLp,
    demand: &DemandModel,
    x: &[f64],
    opts: &UcbOptions,
    seed: u64,
    keys: &[u64],
) -> Result<Vec<f64>> {
    opts.validate()?;
    let lopts = LShapedOptions { tol: opts.lshaped_tol, max_iter: opts.max_iter, incumbent: None };
    par::map_indexed(opts.n_batches, |k| {
        let scen = batch_scenarios(demand, x, opts.n_eval, seed, keys, k)?;
        match solve_lshaped_traced(model, &scen, &lopts) {
            Ok(t) => Ok(t.result.objective),
            Err(Error::IterationLimit { best, .. }) => Ok(best.objective),
            Err(e) => Err(e),
        }
        .map_err(|e| Error::Batch { batch: k, source: Box::new(e) })
    })
    .into_iter()
    .collect()
}

/// Certifies `z_hat` against precomputed batch optima. The batch optimum is
/// the better of the full-information solve and `z_hat` itself, where `z_hat`
/// is kept unless beaten by more than a relative `1e-12`.
pub fn certify_with_optima(
    model: &TwoStageLp,
    demand: &DemandModel,
    x: &[f64],
    z_hat: &[f64],
    opts: &UcbOptions,
    seed: u64,
    keys: &[u64],
    fi_optima: &[f64],
) -> Result<UcbReport> {
    opts.validate()?;
    if fi_optima.len() != opts.n_batches {
        return Err(Error::dims("one precomputed optimum per batch required"));
    }
    if z_hat.len() != model.d_z() || !model.first_stage().contains(z_hat) {
        return Err(Error::InfeasibleCandidate("candidate violates the first-stage constraints".into()));
    }
    let costs: Vec<f64> = par::map_indexed(opts.n_batches, |k| {
        batch_scenarios(demand, x, opts.n_eval, seed, keys, k)
            .and_then(|scen| saa_objective(model, &scen, z_hat))
            .map_err(|e| Error::Batch { batch: k, source: Box::new(e) })
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let optima: Vec<f64> = costs
        .iter()
        .zip(fi_optima)
        .map(|(&v_hat, &v_fi)| if v_fi < v_hat - 1e-12 * v_hat.abs().max(1.0) { v_fi } else { v_hat })
        .collect();
    let gaps: Vec<f64> = costs.iter().zip(&optima).map(|(a, b)| a - b).collect();
    let v_bar = mean(&optima);
    let (b99, absolute) = ucb_from_gaps(&gaps, v_bar, opts.t_multiplier);
    Ok(UcbReport {
        gaps,
        batch_optima: optima,
        batch_costs: costs,
        v_bar,
        b99,
        absolute,
        t_multiplier: opts.t_multiplier,
        n_eval: opts.n_eval,
    })
}

/// Normalized 99% upper confidence bound on the optimality gap of `z_hat` at `x`.
pub fn mrp_ucb(
    model: &TwoStageLp,
    demand: &DemandModel,
    x: &[f64],
    z_hat: &[f64],
    opts: &UcbOptions,
    seed: u64,
) -> Result<UcbReport> {
    if z_hat.len() != model.d_z() || !model.first_stage().contains(z_hat) {
        return Err(Error::InfeasibleCandidate("candidate violates the first-stage constraints".into()));
    }
    let fi = fi_batch_optima(model, demand, x, opts, seed, &[])?;
    certify_with_optima(model, demand, x, z_hat, opts, seed, &[], &fi)
}

/// Five summary quantiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Percentiles {
    pub p5: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
}

/// Linear interpolation at `q (n − 1)` on the sorted sample.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

pub fn percentiles(values: &[f64]) -> Result<Percentiles> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(Percentiles {
        p5: quantile_sorted(&v, 0.05),
        p25: quantile_sorted(&v, 0.25),
        p50: quantile_sorted(&v, 0.50),
        p75: quantile_sorted(&v, 0.75),
        p95: quantile_sorted(&v, 0.95),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    ErOls,
    ErLasso,
    ErKnn,
    JOls,
    JplusOls,
    NSaa,
    PpOls,
    PpLasso,
    KnnSaa,
    ErOlsHetero,
    ErKnnHetero,
}

impl Method {
    pub const ALL: [Method; 11] = [
        Method::ErOls,
        Method::ErLasso,
        Method::ErKnn,
        Method::JOls,
        Method::JplusOls,
        Method::NSaa,
        Method::PpOls,
        Method::PpLasso,
        Method::KnnSaa,
        Method::ErOlsHetero,
        Method::ErKnnHetero,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::ErOls => "er_ols",
            Method::ErLasso => "er_lasso",
            Method::ErKnn => "er_knn",
            Method::JOls => "j_ols",
            Method::JplusOls => "jplus_ols",
            Method::NSaa => "n_saa",
            Method::PpOls => "pp_ols",
            Method::PpLasso => "pp_lasso",
            Method::KnnSaa => "knn_saa",
            Method::ErOlsHetero => "er_ols_hetero",
            Method::ErKnnHetero => "er_knn_hetero",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::BadConfig(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub n_resources: usize,
    pub n_customers: usize,
    /// Raw covariates, intercept excluded.
    pub d_x: usize,
    pub degree: f64,
    pub sigma: f64,
    pub omega: u32,
    pub instance: InstanceConfig,
    pub calibration_samples: usize,
    pub methods: Vec<Method>,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub ucb: UcbOptions,
    pub master_seed: u64,
    pub instance_seed: u64,
    pub demand_seed: u64,
    pub covariate_seed: u64,
    pub project: bool,
    pub cv_folds: usize,
    pub delta: f64,
    pub saa_tol: f64,
    /// Record wall-clock solve times (makes tables non-reproducible).
    pub timing: bool,
}

impl ExperimentConfig {
    /// Defaults with every seed derived from `master_seed`.
    pub fn with_master_seed(master_seed: u64) -> Self {
        Self {
            n_resources: 20,
            n_customers: 30,
            d_x: 10,
            degree: 1.0,
            sigma: 5.0,
            omega: 1,
            instance: InstanceConfig::default(),
            calibration_samples: crate::bench::DEFAULT_CALIBRATION_SAMPLES,
            methods: vec![Method::ErOls, Method::NSaa],
            n_grid: vec![40],
            replications: 1,
            ucb: UcbOptions::default(),
            master_seed,
            instance_seed: derive_seed(master_seed, &[1]),
            demand_seed: derive_seed(master_seed, &[2]),
            covariate_seed: derive_seed(master_seed, &[3]),
            project: true,
            cv_folds: 5,
            delta: DEFAULT_DELTA,
            saa_tol: 1e-6,
            timing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::BadConfig("replications must be at least 1".into()));
        }
        if self.methods.is_empty() || self.n_grid.is_empty() {
            return Err(Error::BadConfig("need at least one method and one sample size".into()));
        }
        if self.n_grid.iter().any(|&n| n < 2) {
            return Err(Error::BadConfig("sample sizes must be at least 2".into()));
        }
        if self.cv_folds < 2 {
            return Err(Error::BadConfig("cv_folds must be at least 2".into()));
        }
        if !(self.delta > 0.0) {
            return Err(Error::NonpositiveDelta(self.delta));
        }
        if !(self.saa_tol > 0.0) {
            return Err(Error::BadConfig("saa_tol must be positive".into()));
        }
        self.ucb.validate()
    }

    /// `key: value` lines describing everything needed to reproduce a run.
    pub fn metadata(&self) -> String {
        let methods: Vec<&str> = self.methods.iter().map(|m| m.name()).collect();
        let ns: Vec<String> = self.n_grid.iter().map(|n| n.to_string()).collect();
        crate::bench::metadata_block(&[
            ("master_seed", self.master_seed.to_string()),
            ("instance_seed", self.instance_seed.to_string()),
            ("demand_seed", self.demand_seed.to_string()),
            ("covariate_seed", self.covariate_seed.to_string()),
            ("dims", format!("resources={} customers={} d_x={}", self.n_resources, self.n_customers, self.d_x)),
            ("demand", format!("degree={} sigma={} omega={}", self.degree, self.sigma, self.omega)),
            ("instance_scheme", self.instance.scheme()),
            ("methods", methods.join(",")),
            ("n_grid", ns.join(",")),
            ("replications", self.replications.to_string()),
            ("ucb", format!("n_eval={} n_batches={} t={}", self.ucb.n_eval, self.ucb.n_batches, self.ucb.t_multiplier)),
            ("query_sharing", "one covariate draw per replication shared by all methods".into()),
            ("batch_sharing", "evaluation batches keyed by (replication, batch), shared by all methods and n".into()),
            ("projection", self.project.to_string()),
        ])
    }
}

/// One `(method, n, replication)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: Method,
    pub n: usize,
    pub replication: usize,
    pub b99_percent: f64,
    pub gap_mean: f64,
    pub gap_std: f64,
    pub v_bar: f64,
    pub solve_ms: f64,
    pub status: String,
    /// Smallest batch gap; not serialized.
    pub gap_min: f64,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.status.starts_with("ok")
    }
}

/// Generated benchmark pieces shared by every replication.
pub struct Experiment {
    pub model: TwoStageLp,
    pub demand: DemandModel,
    pub sampler: CovariateSampler,
    pub config: ExperimentConfig,
}

impl Experiment {
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let inst = gen_instance(config.n_resources, config.n_customers, config.instance_seed, &config.instance)?;
        let model = to_two_stage(&inst)?;
        let sampler = CovariateSampler::vine(config.d_x, config.covariate_seed)?;
        let demand = gen_demand_model(
            &sampler,
            config.n_customers,
            config.degree,
            config.sigma,
            config.omega,
            config.demand_seed,
            config.calibration_samples,
        )?;
        Ok(Self { model, demand, sampler, config: config.clone() })
    }

    /// Training data of size `n` for replication `r`; prefixes of one stream.
    pub fn training(&self, r: usize, n: usize) -> Result<Dataset> {
        let x = self.sampler.sample_keyed(n, &[r as u64]);
        let y = crate::bench::simulate_demand_keyed(&self.demand, &x, self.config.covariate_seed, &[r as u64])?;
        Dataset::with_intercept(&x, y)
    }

    /// The query covariate of replication `r`.
    pub fn query(&self, r: usize) -> Vec<f64> {
        let x = self.sampler.sample_with(1, &mut stream(self.config.covariate_seed, Purpose::Query, &[r as u64]));
        x.row(0).iter().copied().collect()
    }

    fn eval_seed(&self) -> u64 {
        derive_seed(self.config.master_seed, &[Purpose::Evaluation as u64])
    }

    /// Scenario set of `method` trained on `data` at raw query `x`.
    pub fn scenarios(&self, method: Method, data: &Dataset, x: &[f64], fold_seed: u64) -> Result<ScenarioSet> {
        let c = &self.config;
        let support = SupportBox::nonnegative(c.n_customers);
        let xd = data.design_point(x);
        let proj = c.project;
        let hetero = HeteroSpec::LogLinear { delta: c.delta, transform: FeatureTransform::Log1p };
        let identity = HeteroModel::identity(c.n_customers);
        let er = |f: &PointModel, q: &HeteroModel| -> Result<ScenarioSet> {
            let res = empirical_residuals(data, f, q)?;
            build_er_saa_with(&xd, f, q, &res, &support, proj)
        };
        let lambda = || -> Result<f64> {
            let grid: Vec<Hyper> = lasso_lambda_grid(data, 100, 1e-3)?.into_iter().map(Hyper::Lambda).collect();
            match cv_select(data, &grid, c.cv_folds.min(data.n()), fold_seed)? {
                Hyper::Lambda(l) => Ok(l),
                Hyper::K(_) => unreachable!(),
            }
        };
        let k = || -> Result<usize> {
            let train_min = data.n() - data.n().div_ceil(c.cv_folds.min(data.n()));
            let grid: Vec<Hyper> = knn_grid(data.n(), train_min.max(1)).into_iter().map(Hyper::K).collect();
            match cv_select(data, &grid, c.cv_folds.min(data.n()), fold_seed)? {
                Hyper::K(k) => Ok(k),
                Hyper::Lambda(_) => unreachable!(),
            }
        };
        match method {
            Method::ErOls => er(&fit_ols(data, None)?.into(), &identity),
            Method::ErLasso => er(&fit_lasso(data, lambda()?)?.into(), &identity),
            Method::ErKnn => er(&fit_knn(data, k()?)?.into(), &identity),
            Method::JOls | Method::JplusOls => {
                let bundle = loo_ols(data)?;
                let sc = OlsShortcut { bundle: &bundle, data };
                let res = loo_residuals(data, &sc)?;
                if method == Method::JOls {
                    let f: PointModel = bundle.model.clone().into();
                    build_er_saa_with(&xd, &f, &identity, &res, &support, proj)
                } else {
                    build_jplus_saa_with(&xd, &sc, &res, &support, proj)
                }
            }
            Method::NSaa => Ok(build_n_saa(data)),
            Method::PpOls => build_pp_with(&xd, &fit_ols(data, None)?.into(), &support, proj),
            Method::PpLasso => build_pp_with(&xd, &fit_lasso(data, lambda()?)?.into(), &support, proj),
            Method::KnnSaa => build_knn_saa(data, &xd, k()?),
            Method::ErOlsHetero => {
                let (f, q) = fit_pipeline(data, FitMethod::Ols, hetero)?;
                er(&f, &q)
            }
            Method::ErKnnHetero => {
                let (f, q) = fit_pipeline(data, FitMethod::Knn(k()?), hetero)?;
                er(&f, &q)
            }
        }
    }

    fn cell(&self, method: Method, n: usize, r: usize, data: &Dataset, x: &[f64], fi: &[f64]) -> ResultRow {
        let start = Instant::now();
        let fold_seed = derive_seed(self.config.master_seed, &[Purpose::Folds as u64, r as u64, n as u64]);
        let solved = self.scenarios(method, data, x, fold_seed).and_then(|scen| {
            let opts = LShapedOptions { tol: self.config.saa_tol, max_iter: self.config.ucb.max_iter, incumbent: None };
            match solve_lshaped_traced(&self.model, &scen, &opts) {
                Ok(t) => Ok((t.result.z_star, "ok")),
                Err(Error::IterationLimit { best, .. }) => Ok((best.z_star, "ok_iteration_limit")),
                Err(e) => Err(e),
            }
        });
        let solve_ms = if self.config.timing { start.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
        let fail = |tag: &str| ResultRow {
            method,
            n,
            replication: r,
            b99_percent: f64::NAN,
            gap_mean: f64::NAN,
            gap_std: f64::NAN,
            v_bar: f64::NAN,
            solve_ms,
            status: tag.to_string(),
            gap_min: f64::NAN,
        };
        let (z, status) = match solved {
            Ok(v) => v,
            Err(e) => return fail(e.tag()),
        };
        match certify_with_optima(&self.model, &self.demand, x, &z, &self.config.ucb, self.eval_seed(), &[r as u64], fi) {
            Ok(rep) => ResultRow {
                method,
                n,
                replication: r,
                b99_percent: rep.b99,
                gap_mean: rep.gap_mean(),
                gap_std: rep.gap_std(),
                v_bar: rep.v_bar,
                solve_ms,
                status: if rep.absolute { format!("{status}_absolute") } else { status.to_string() },
                gap_min: rep.gaps.iter().cloned().fold(f64::INFINITY, f64::min),
            },
            Err(e) => fail(e.tag()),
        }
    }

    /// All cells of replication `r`, ordered by `n` then method.
    pub fn replication(&self, r: usize) -> Vec<ResultRow> {
        let c = &self.config;
        let x = self.query(r);
        let cells: Vec<(usize, Method)> = c.n_grid.iter().flat_map(|&n| c.methods.iter().map(move |&m| (n, m))).collect();
        let fi = match fi_batch_optima(&self.model, &self.demand, &x, &c.ucb, self.eval_seed(), &[r as u64]) {
            Ok(v) => v,
            Err(e) => {
                return cells
                    .iter()
                    .map(|&(n, m)| ResultRow {
                        method: m,
                        n,
                        replication: r,
                        b99_percent: f64::NAN,
                        gap_mean: f64::NAN,
                        gap_std: f64::NAN,
                        v_bar: f64::NAN,
                        solve_ms: 0.0,
                        status: e.tag().to_string(),
                        gap_min: f64::NAN,
                    })
                    .collect()
            }
        };
        let n_max = c.n_grid.iter().copied().max().unwrap_or(0);
        let full = self.training(r, n_max);
        par::map_indexed(cells.len(), |idx| {
            let (n, m) = cells[idx];
            match &full {
                Ok(d) => self.cell(m, n, r, &d.prefix(n), &x, &fi),
                Err(e) => ResultRow {
                    method: m,
                    n,
                    replication: r,
                    b99_percent: f64::NAN,
                    gap_mean: f64::NAN,
                    gap_std: f64::NAN,
                    v_bar: f64::NAN,
                    solve_ms: 0.0,
                    status: e.tag().to_string(),
                    gap_min: f64::NAN,
                },
            }
        })
    }
}

/// Rows ordered by replication, then `n`, then method as listed in the config.
pub fn run_replications(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let exp = Experiment::build(config)?;
    Ok(par::map_indexed(config.replications, |r| exp.replication(r)).into_iter().flatten().collect())
}

pub const RESULTS_HEADER: &str = "method,n,replication,b99_percent,gap_mean,gap_std,v_bar,solve_ms,status";
pub const SUMMARY_HEADER: &str = "method,n,p5,p25,p50,p75,p95,count";

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut s = String::from(RESULTS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:?},{:?},{:?},{:?},{:?},{}",
            r.method, r.n, r.replication, r.b99_percent, r.gap_mean, r.gap_std, r.v_bar, r.solve_ms, r.status
        );
    }
    s
}

pub fn parse_results_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or(Error::EmptyInput)?;
    if header.trim() != RESULTS_HEADER {
        return Err(Error::Parse(format!("unexpected results header `{header}`")));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 9 {
                return Err(Error::Parse(format!("row {}: expected 9 fields", i + 1)));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("row {}: {e}", i + 1)));
            let int = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("row {}: {e}", i + 1)));
            Ok(ResultRow {
                method: f[0].parse()?,
                n: int(f[1])?,
                replication: int(f[2])?,
                b99_percent: num(f[3])?,
                gap_mean: num(f[4])?,
                gap_std: num(f[5])?,
                v_bar: num(f[6])?,
                solve_ms: num(f[7])?,
                status: f[8].to_string(),
                gap_min: f64::NAN,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub n: usize,
    pub percentiles: Percentiles,
    pub count: usize,
}

/// Percentiles of `b99_percent` per `(method, n)` over successful cells.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(Method, usize), Vec<f64>> = BTreeMap::new();
    for r in rows {
        let g = groups.entry((r.method, r.n)).or_default();
        if r.is_ok() && r.b99_percent.is_finite() {
            g.push(r.b99_percent);
        }
    }
    groups
        .into_iter()
        .filter_map(|((method, n), v)| {
            percentiles(&v).ok().map(|percentiles| SummaryRow { method, n, percentiles, count: v.len() })
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for r in rows {
        let p = r.percentiles;
        let _ = writeln!(s, "{},{},{:?},{:?},{:?},{:?},{:?},{}", r.method, r.n, p.p5, p.p25, p.p50, p.p75, p.p95, r.count);
    }
    s
}
