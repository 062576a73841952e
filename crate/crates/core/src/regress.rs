//! Point predictors and heteroscedasticity estimates.
//!
//! Linear models (OLS, WLS, lasso) and kNN regression, the diagonal
//! log-linear scale model, the closed-form OLS leave-one-out quantities and
//! k-fold cross-validation for hyperparameter selection.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::par;
use crate::rng::{stream, Purpose};

/// Paired covariate/response sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    covariates: DMatrix<f64>,
    responses: DMatrix<f64>,
    intercept: bool,
}

impl Dataset {
    pub fn new(covariates: DMatrix<f64>, responses: DMatrix<f64>, intercept: bool) -> Result<Self> {
        let n = covariates.nrows();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        if responses.nrows() != n {
            return Err(Error::dims(format!(
                "{} covariate rows vs {} response rows",
                n,
                responses.nrows()
            )));
        }
        if covariates.ncols() == 0 || responses.ncols() == 0 {
            return Err(Error::dims("need at least one covariate and one response column"));
        }
        if covariates.iter().chain(responses.iter()).any(|v| !v.is_finite()) {
            return Err(Error::DomainError("dataset entries must be finite".into()));
        }
        if intercept && covariates.column(0).iter().any(|&v| v != 1.0) {
            return Err(Error::DomainError("intercept column must be identically 1".into()));
        }
        Ok(Self { covariates, responses, intercept })
    }

    /// Prepends a column of ones to `raw` and sets intercept mode.
    pub fn with_intercept(raw: &DMatrix<f64>, responses: DMatrix<f64>) -> Result<Self> {
        Self::new(prepend_ones(raw), responses, true)
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn responses(&self) -> &DMatrix<f64> {
        &self.responses
    }

    pub fn has_intercept(&self) -> bool {
        self.intercept
    }

    pub fn n(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn d_x(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn d_y(&self) -> usize {
        self.responses.ncols()
    }

    pub fn x(&self, i: usize) -> Vec<f64> {
        self.covariates.row(i).iter().copied().collect()
    }

    pub fn y(&self, i: usize) -> Vec<f64> {
        self.responses.row(i).iter().copied().collect()
    }

    /// Rows at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            covariates: self.covariates.select_rows(idx),
            responses: self.responses.select_rows(idx),
            intercept: self.intercept,
        }
    }

    pub fn without(&self, i: usize) -> Dataset {
        let idx: Vec<usize> = (0..self.n()).filter(|&k| k != i).collect();
        self.subset(&idx)
    }

    /// First `n` rows.
    pub fn prefix(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.n())).collect();
        self.subset(&idx)
    }

    /// Query vector in the same layout as the covariate rows.
    pub fn design_point(&self, raw: &[f64]) -> Vec<f64> {
        if self.intercept {
            std::iter::once(1.0).chain(raw.iter().copied()).collect()
        } else {
            raw.to_vec()
        }
    }

    /// CSV with header `x1,...,xdx,y1,...,ydy` and round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let header: Vec<String> = (1..=self.d_x())
            .map(|k| format!("x{k}"))
            .chain((1..=self.d_y()).map(|k| format!("y{k}")))
            .collect();
        let _ = writeln!(s, "{}", header.join(","));
        for i in 0..self.n() {
            let row: Vec<String> = self
                .covariates
                .row(i)
                .iter()
                .chain(self.responses.row(i).iter())
                .map(|v| format!("{v:?}"))
                .collect();
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }

    pub fn from_csv(text: &str, intercept: bool) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or(Error::EmptyInput)?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let d_x = cols.iter().take_while(|c| c.starts_with('x')).count();
        let d_y = cols.len() - d_x;
        if d_x == 0 || d_y == 0 || !cols[d_x..].iter().all(|c| c.starts_with('y')) {
            return Err(Error::Parse(format!("bad dataset header `{header}`")));
        }
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (ln, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("row {}: {e}", ln + 1)))?;
            if vals.len() != d_x + d_y {
                return Err(Error::Parse(format!("row {} has {} fields", ln + 1, vals.len())));
            }
            xs.extend_from_slice(&vals[..d_x]);
            ys.extend_from_slice(&vals[d_x..]);
        }
        let n = xs.len() / d_x;
        Self::new(
            DMatrix::from_row_slice(n, d_x, &xs),
            DMatrix::from_row_slice(n, d_y, &ys),
            intercept,
        )
    }
}

pub fn prepend_ones(raw: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = raw.shape();
    DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { raw[(i, j - 1)] })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearKind {
    Ols,
    Wls,
    Lasso,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    /// `d_y × d_x`.
    pub coef: DMatrix<f64>,
    pub kind: LinearKind,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    k: usize,
    training: Dataset,
}

impl KnnModel {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn training(&self) -> &Dataset {
        &self.training
    }

    /// Indices of the `k` nearest training rows (Euclidean, earliest index wins ties).
    pub fn neighbors(&self, x: &[f64]) -> Vec<usize> {
        nearest(self.training.covariates(), x, self.k)
    }
}

/// The `k` rows of `cov` closest to `x`, ordered by distance then index.
pub fn nearest(cov: &DMatrix<f64>, x: &[f64], k: usize) -> Vec<usize> {
    let mut order = sorted_by_distance(cov, x);
    order.truncate(k);
    order
}

fn sorted_by_distance(cov: &DMatrix<f64>, x: &[f64]) -> Vec<usize> {
    let d: Vec<f64> = (0..cov.nrows())
        .map(|i| cov.row(i).iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum())
        .collect();
    let mut order: Vec<usize> = (0..cov.nrows()).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
    order
}

#[derive(Debug, Clone, PartialEq)]
pub enum PointModel {
    Linear(LinearModel),
    Knn(KnnModel),
}

impl From<LinearModel> for PointModel {
    fn from(m: LinearModel) -> Self {
        PointModel::Linear(m)
    }
}

impl From<KnnModel> for PointModel {
    fn from(m: KnnModel) -> Self {
        PointModel::Knn(m)
    }
}

impl PointModel {
    pub fn d_x(&self) -> usize {
        match self {
            PointModel::Linear(m) => m.coef.ncols(),
            PointModel::Knn(m) => m.training.d_x(),
        }
    }

    pub fn d_y(&self) -> usize {
        match self {
            PointModel::Linear(m) => m.coef.nrows(),
            PointModel::Knn(m) => m.training.d_y(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d_x() {
            return Err(Error::dims(format!("query has {} entries, model expects {}", x.len(), self.d_x())));
        }
        Ok(match self {
            PointModel::Linear(m) => (0..m.coef.nrows())
                .map(|j| m.coef.row(j).iter().zip(x).map(|(a, b)| a * b).sum())
                .collect(),
            PointModel::Knn(m) => {
                let nb = m.neighbors(x);
                let r = m.training.responses();
                (0..r.ncols())
                    .map(|j| nb.iter().map(|&i| r[(i, j)]).sum::<f64>() / nb.len() as f64)
                    .collect()
            }
        })
    }
}

pub fn predict(model: &PointModel, x: &[f64]) -> Result<Vec<f64>> {
    model.predict(x)
}

struct LeastSquares {
    /// `d × c` solution.
    beta: DMatrix<f64>,
    /// Thin Q, `n × d`.
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

fn least_squares(design: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<LeastSquares> {
    let (n, d) = design.shape();
    if targets.nrows() != n {
        return Err(Error::dims("design and targets row counts differ"));
    }
    if n < d {
        return Err(Error::RankDeficient { rank: n, cols: d });
    }
    let qr = design.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let scale = (0..d).map(|j| design.column(j).norm()).fold(0.0, f64::max);
    let tol = 1e-10 * scale.max(f64::MIN_POSITIVE);
    let rank = (0..d).filter(|&i| r[(i, i)].abs() > tol).count();
    if rank < d {
        return Err(Error::RankDeficient { rank, cols: d });
    }
    let qty = q.transpose() * targets;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::RankDeficient { rank, cols: d })?;
    Ok(LeastSquares { beta, q, r })
}

/// Ordinary or row-weighted least squares, all outputs sharing the weights.
pub fn fit_ols(data: &Dataset, weights: Option<&[f64]>) -> Result<LinearModel> {
    match weights {
        None => {
            let ls = least_squares(data.covariates(), data.responses())?;
            Ok(LinearModel { coef: ls.beta.transpose(), kind: LinearKind::Ols, lambda: 0.0 })
        }
        Some(w) => {
            let sw = sqrt_weights(w, data.n())?;
            let coef = weighted_fit(data.covariates(), data.responses(), &sw)?;
            Ok(LinearModel { coef: coef.transpose(), kind: LinearKind::Wls, lambda: 0.0 })
        }
    }
}

/// Weighted least squares with a separate weight column per output
/// (`weights` is `n × d_y`).
pub fn fit_wls_columns(data: &Dataset, weights: &DMatrix<f64>) -> Result<LinearModel> {
    if weights.shape() != (data.n(), data.d_y()) {
        return Err(Error::dims("weights must be n × d_y"));
    }
    let mut coef = DMatrix::zeros(data.d_y(), data.d_x());
    for j in 0..data.d_y() {
        let w: Vec<f64> = weights.column(j).iter().copied().collect();
        let sw = sqrt_weights(&w, data.n())?;
        let y = data.responses().columns(j, 1).into_owned();
        let b = weighted_fit(data.covariates(), &y, &sw)?;
        coef.row_mut(j).copy_from(&b.transpose());
    }
    Ok(LinearModel { coef, kind: LinearKind::Wls, lambda: 0.0 })
}

fn sqrt_weights(w: &[f64], n: usize) -> Result<Vec<f64>> {
    if w.len() != n {
        return Err(Error::dims(format!("{} weights for {} rows", w.len(), n)));
    }
    if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::DomainError("weights must be finite and nonnegative".into()));
    }
    Ok(w.iter().map(|v| v.sqrt()).collect())
}

fn weighted_fit(x: &DMatrix<f64>, y: &DMatrix<f64>, sw: &[f64]) -> Result<DMatrix<f64>> {
    let xw = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * sw[i]);
    let yw = DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| y[(i, j)] * sw[i]);
    Ok(least_squares(&xw, &yw)?.beta)
}

/// Residual matrix `y^i − f̂(x^i)`.
pub fn residuals(data: &Dataset, model: &PointModel) -> Result<DMatrix<f64>> {
    let mut e = DMatrix::zeros(data.n(), data.d_y());
    for i in 0..data.n() {
        let f = model.predict(&data.x(i))?;
        for j in 0..data.d_y() {
            e[(i, j)] = data.responses()[(i, j)] - f[j];
        }
    }
    Ok(e)
}

// ---------------------------------------------------------------- lasso

pub const LASSO_TOL: f64 = 1e-7;
pub const LASSO_MAX_SWEEPS: usize = 100_000;

/// Standardized design used by the lasso; the penalty applies on this scale.
#[derive(Debug, Clone)]
pub struct Standardized {
    /// `n × d_x`; intercept and constant columns are zero.
    pub x: DMatrix<f64>,
    /// Centered (intercept mode) responses.
    pub y: DMatrix<f64>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub y_means: Vec<f64>,
    /// Columns with an unpenalized role or zero variance are inactive.
    pub active: Vec<bool>,
}

pub fn standardize(data: &Dataset) -> Result<Standardized> {
    let (n, d) = data.covariates().shape();
    if n < 2 {
        return Err(Error::EmptyInput);
    }
    let nf = n as f64;
    let cov = data.covariates();
    let mut x = DMatrix::zeros(n, d);
    let mut means = vec![0.0; d];
    let mut scales = vec![1.0; d];
    let mut active = vec![false; d];
    for k in 0..d {
        if data.has_intercept() && k == 0 {
            continue;
        }
        let col = cov.column(k);
        let mean = if data.has_intercept() { col.sum() / nf } else { 0.0 };
        let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
        let sd = ss.sqrt();
        means[k] = mean;
        if sd > 1e-12 * (1.0 + mean.abs()) {
            scales[k] = sd;
            active[k] = true;
            for i in 0..n {
                x[(i, k)] = (cov[(i, k)] - mean) / sd;
            }
        }
    }
    if !active.iter().any(|&a| a) {
        return Err(Error::DegenerateDesign);
    }
    let d_y = data.d_y();
    let mut y = data.responses().clone();
    let mut y_means = vec![0.0; d_y];
    if data.has_intercept() {
        for j in 0..d_y {
            let m = y.column(j).sum() / nf;
            y_means[j] = m;
            y.column_mut(j).add_scalar_mut(-m);
        }
    }
    Ok(Standardized { x, y, means, scales, y_means, active })
}

/// Smallest penalty at which every slope is zero.
pub fn lasso_lambda_max(data: &Dataset) -> Result<f64> {
    let st = standardize(data)?;
    let n = data.n() as f64;
    let mut best = 0.0f64;
    for j in 0..st.y.ncols() {
        for k in 0..st.x.ncols() {
            if st.active[k] {
                let g = st.x.column(k).dot(&st.y.column(j)) / n;
                best = best.max(g.abs());
            }
        }
    }
    Ok(best)
}

/// `count` log-spaced penalties from `λ_max` down to `ratio·λ_max`.
pub fn lasso_lambda_grid(data: &Dataset, count: usize, ratio: f64) -> Result<Vec<f64>> {
    let lmax = lasso_lambda_max(data)?;
    if count == 1 {
        return Ok(vec![lmax]);
    }
    Ok((0..count)
        .map(|i| lmax * ratio.powf(i as f64 / (count - 1) as f64))
        .collect())
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Cyclic coordinate descent on one output column; `beta` is warm-started in place.
fn lasso_cd(st: &Standardized, j: usize, lambda: f64, beta: &mut [f64]) {
    let (n, d) = st.x.shape();
    let nf = n as f64;
    let mut r: Vec<f64> = (0..n)
        .map(|i| st.y[(i, j)] - (0..d).map(|k| st.x[(i, k)] * beta[k]).sum::<f64>())
        .collect();
    for _ in 0..LASSO_MAX_SWEEPS {
        let mut max_change = 0.0f64;
        for k in 0..d {
            if !st.active[k] {
                continue;
            }
            let col = st.x.column(k);
            let rho = col.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / nf + beta[k];
            let new = soft_threshold(rho, lambda);
            let delta = new - beta[k];
            if delta != 0.0 {
                for (ri, xi) in r.iter_mut().zip(col.iter()) {
                    *ri -= xi * delta;
                }
                beta[k] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < LASSO_TOL * 1e-2 {
            break;
        }
    }
}

fn unstandardize(st: &Standardized, betas: &[Vec<f64>], intercept: bool) -> DMatrix<f64> {
    let d_y = betas.len();
    let d = st.means.len();
    let mut coef = DMatrix::zeros(d_y, d);
    for j in 0..d_y {
        let mut shift = 0.0;
        for k in 0..d {
            if st.active[k] {
                let c = betas[j][k] / st.scales[k];
                coef[(j, k)] = c;
                shift += c * st.means[k];
            }
        }
        if intercept {
            coef[(j, 0)] = st.y_means[j] - shift;
        }
    }
    coef
}

/// Lasso with unpenalized intercept on standardized features.
pub fn fit_lasso(data: &Dataset, lambda: f64) -> Result<LinearModel> {
    Ok(lasso_path(data, &[lambda])?.pop().expect("one model"))
}

/// Lasso fits along `lambdas` in the given order, each warm-started from the previous.
pub fn lasso_path(data: &Dataset, lambdas: &[f64]) -> Result<Vec<LinearModel>> {
    if lambdas.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
        return Err(Error::DomainError("lasso penalty must be finite and nonnegative".into()));
    }
    let st = standardize(data)?;
    let d = data.d_x();
    let mut betas = vec![vec![0.0; d]; data.d_y()];
    let mut out = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        for (j, b) in betas.iter_mut().enumerate() {
            lasso_cd(&st, j, lambda, b);
        }
        out.push(LinearModel {
            coef: unstandardize(&st, &betas, data.has_intercept()),
            kind: LinearKind::Lasso,
            lambda,
        });
    }
    Ok(out)
}

// ------------------------------------------------------------------ kNN

pub fn fit_knn(data: &Dataset, k: usize) -> Result<KnnModel> {
    if k == 0 || k > data.n() {
        return Err(Error::KOutOfRange { k, n: data.n() });
    }
    Ok(KnnModel { k, training: data.clone() })
}

// --------------------------------------------------------- heteroscedastic

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeteroKind {
    Identity,
    LogLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureTransform {
    /// `log|v|`
    LogAbs,
    /// `log(1+v)`
    Log1p,
}

impl FeatureTransform {
    fn apply(self, v: f64) -> Result<f64> {
        match self {
            FeatureTransform::LogAbs => {
                if v == 0.0 {
                    Err(Error::DomainError("log|0| under log_abs transform".into()))
                } else {
                    Ok(v.abs().ln())
                }
            }
            FeatureTransform::Log1p => {
                if v <= -1.0 {
                    Err(Error::DomainError(format!("log(1+{v}) undefined")))
                } else {
                    Ok(v.ln_1p())
                }
            }
        }
    }
}

pub const DEFAULT_DELTA: f64 = 1e-4;

/// Diagonal scale model `Q̂(x) = diag(q_1(x), …, q_dy(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeteroModel {
    pub kind: HeteroKind,
    /// `d_y × (1 + #transformed columns)`; first column is the explicit
    /// intercept. Empty for the identity kind.
    pub pi: DMatrix<f64>,
    pub feature_transform: FeatureTransform,
    pub delta: f64,
    /// Skip covariate column 0 (the dataset intercept) when building features.
    pub skip_first: bool,
    d_y: usize,
}

impl HeteroModel {
    pub fn identity(d_y: usize) -> Self {
        Self {
            kind: HeteroKind::Identity,
            pi: DMatrix::zeros(0, 0),
            feature_transform: FeatureTransform::Log1p,
            delta: DEFAULT_DELTA,
            skip_first: false,
            d_y,
        }
    }

    pub fn loglinear(pi: DMatrix<f64>, transform: FeatureTransform, delta: f64, skip_first: bool) -> Self {
        let d_y = pi.nrows();
        Self { kind: HeteroKind::LogLinear, pi, feature_transform: transform, delta, skip_first, d_y }
    }

    pub fn d_y(&self) -> usize {
        self.d_y
    }

    fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        let start = usize::from(self.skip_first);
        if x.len() < start || self.pi.ncols() != 1 + x.len() - start {
            return Err(Error::dims(format!(
                "query has {} entries, scale model expects {}",
                x.len(),
                self.pi.ncols() - 1 + start
            )));
        }
        std::iter::once(Ok(1.0))
            .chain(x[start..].iter().map(|&v| self.feature_transform.apply(v)))
            .collect()
    }

    /// Diagonal entries `q_j(x) > 0`.
    pub fn q_diag(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self.kind {
            HeteroKind::Identity => Ok(vec![1.0; self.d_y]),
            HeteroKind::LogLinear => {
                let t = self.features(x)?;
                Ok((0..self.d_y)
                    .map(|j| {
                        let s: f64 = self.pi.row(j).iter().zip(&t).map(|(a, b)| a * b).sum();
                        (0.5 * s).exp()
                    })
                    .collect())
            }
        }
    }
}

pub fn q_matrix(model: &HeteroModel, x: &[f64]) -> Result<DMatrix<f64>> {
    let q = model.q_diag(x)?;
    Ok(DMatrix::from_diagonal(&DVector::from_vec(q)))
}

/// Regresses `log(max{δ, |residual|}²)` on `[1, t(x_k)…]` per output.
pub fn fit_hetero_loglinear(
    data: &Dataset,
    point_model: &PointModel,
    delta: f64,
    transform: FeatureTransform,
) -> Result<HeteroModel> {
    if !(delta > 0.0) {
        return Err(Error::NonpositiveDelta(delta));
    }
    let e = residuals(data, point_model)?;
    let start = usize::from(data.has_intercept());
    let d = data.d_x() - start;
    let n = data.n();
    let mut design = DMatrix::zeros(n, d + 1);
    for i in 0..n {
        design[(i, 0)] = 1.0;
        for k in 0..d {
            design[(i, k + 1)] = transform.apply(data.covariates()[(i, k + start)])?;
        }
    }
    let targets = e.map(|v| 2.0 * v.abs().max(delta).ln());
    let ls = least_squares(&design, &targets)?;
    Ok(HeteroModel::loglinear(ls.beta.transpose(), transform, delta, data.has_intercept()))
}

// --------------------------------------------------------- leave-one-out

pub const LEVERAGE_MAX: f64 = 1.0 - 1e-10;

#[derive(Debug, Clone)]
pub struct LooBundle {
    pub loo_residuals: DMatrix<f64>,
    pub leverages: Vec<f64>,
    pub gram_inverse: DMatrix<f64>,
    pub base_residuals: DMatrix<f64>,
    pub model: LinearModel,
}

/// Closed-form OLS leave-one-out residuals `e^i / (1 − h^i)`.
pub fn loo_ols(data: &Dataset) -> Result<LooBundle> {
    let ls = least_squares(data.covariates(), data.responses())?;
    let n = data.n();
    let d = data.d_x();
    let leverages: Vec<f64> = (0..n).map(|i| ls.q.row(i).norm_squared()).collect();
    if let Some((i, &h)) = leverages.iter().enumerate().find(|(_, &h)| h >= LEVERAGE_MAX) {
        return Err(Error::LeverageOne { index: i, leverage: h });
    }
    let rinv = ls
        .r
        .solve_upper_triangular(&DMatrix::identity(d, d))
        .ok_or(Error::RankDeficient { rank: d - 1, cols: d })?;
    let gram_inverse = &rinv * rinv.transpose();
    let base = data.responses() - data.covariates() * &ls.beta;
    let mut loo = base.clone();
    for i in 0..n {
        let s = 1.0 / (1.0 - leverages[i]);
        loo.row_mut(i).scale_mut(s);
    }
    Ok(LooBundle {
        loo_residuals: loo,
        leverages,
        gram_inverse,
        base_residuals: base,
        model: LinearModel { coef: ls.beta.transpose(), kind: LinearKind::Ols, lambda: 0.0 },
    })
}

impl LooBundle {
    pub fn n(&self) -> usize {
        self.leverages.len()
    }
}

/// `f̂_n(x) − f̂_{−i}(x)` for the OLS fit (zero-based `i`).
pub fn loo_predict_delta(bundle: &LooBundle, data: &Dataset, x: &[f64], i: usize) -> Result<Vec<f64>> {
    if i >= bundle.n() {
        return Err(Error::IndexOutOfRange { index: i, len: bundle.n() });
    }
    if x.len() != data.d_x() || bundle.gram_inverse.nrows() != data.d_x() {
        return Err(Error::dims("query does not match design"));
    }
    let xi = data.covariates().row(i);
    let gxi = &bundle.gram_inverse * xi.transpose();
    let s: f64 = x.iter().zip(gxi.iter()).map(|(a, b)| a * b).sum::<f64>() / (1.0 - bundle.leverages[i]);
    Ok(bundle.base_residuals.row(i).iter().map(|e| s * e).collect())
}

/// Point-model family used in pipelines and leave-one-out refits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FitMethod {
    Ols,
    Lasso(f64),
    Knn(usize),
}

/// Scale-model choice in a pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeteroSpec {
    Identity,
    LogLinear { delta: f64, transform: FeatureTransform },
}

pub fn fit_point(data: &Dataset, method: FitMethod) -> Result<PointModel> {
    Ok(match method {
        FitMethod::Ols => fit_ols(data, None)?.into(),
        FitMethod::Lasso(l) => fit_lasso(data, l)?.into(),
        FitMethod::Knn(k) => fit_knn(data, k)?.into(),
    })
}

/// Point fit, optional scale fit, then (for OLS) a weighted refit with
/// weights `1/q̂_j(x^i)²`.
pub fn fit_pipeline(data: &Dataset, method: FitMethod, hetero: HeteroSpec) -> Result<(PointModel, HeteroModel)> {
    let point = fit_point(data, method)?;
    match hetero {
        HeteroSpec::Identity => Ok((point, HeteroModel::identity(data.d_y()))),
        HeteroSpec::LogLinear { delta, transform } => {
            let q = fit_hetero_loglinear(data, &point, delta, transform)?;
            if method != FitMethod::Ols {
                return Ok((point, q));
            }
            let mut w = DMatrix::zeros(data.n(), data.d_y());
            for i in 0..data.n() {
                let qi = q.q_diag(&data.x(i))?;
                for j in 0..data.d_y() {
                    w[(i, j)] = 1.0 / (qi[j] * qi[j]);
                }
            }
            Ok((fit_wls_columns(data, &w)?.into(), q))
        }
    }
}

/// The `n` drop-one pipelines, ordered by omitted index.
pub fn loo_refit(data: &Dataset, method: FitMethod, hetero: HeteroSpec) -> Result<Vec<(PointModel, HeteroModel)>> {
    par::map_indexed(data.n(), |i| {
        fit_pipeline(&data.without(i), method, hetero)
            .map_err(|e| Error::Omitted { index: i, source: Box::new(e) })
    })
    .into_iter()
    .collect()
}

// ------------------------------------------------------ cross-validation

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Hyper {
    K(usize),
    Lambda(f64),
}

impl Hyper {
    /// Sort key where smaller means a simpler model (smaller k, larger λ).
    fn complexity(&self) -> f64 {
        match *self {
            Hyper::K(k) => k as f64,
            Hyper::Lambda(l) => -l,
        }
    }
}

/// Fold label per row: seeded permutation cut into contiguous blocks.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream(seed, Purpose::Folds, &[n as u64, folds as u64]));
    let mut label = vec![0; n];
    for f in 0..folds {
        for &i in &perm[f * n / folds..(f + 1) * n / folds] {
            label[i] = f;
        }
    }
    label
}

/// Mean held-out squared error per grid value, averaged over folds.
pub fn cv_errors(data: &Dataset, grid: &[Hyper], folds: usize, seed: u64) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if folds < 2 || data.n() < folds {
        return Err(Error::BadConfig(format!("need 2 ≤ folds ≤ n, got folds={folds}, n={}", data.n())));
    }
    let label = fold_assignment(data.n(), folds, seed);
    let mut total = vec![0.0; grid.len()];
    for f in 0..folds {
        let train_idx: Vec<usize> = (0..data.n()).filter(|&i| label[i] != f).collect();
        let test_idx: Vec<usize> = (0..data.n()).filter(|&i| label[i] == f).collect();
        let train = data.subset(&train_idx);
        let test = data.subset(&test_idx);
        let errs = fold_errors(&train, &test, grid)?;
        for (t, e) in total.iter_mut().zip(errs) {
            *t += e;
        }
    }
    Ok(total.into_iter().map(|t| t / folds as f64).collect())
}

fn mse(test: &Dataset, pred: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    for (i, p) in pred.iter().enumerate() {
        for (j, v) in p.iter().enumerate() {
            let e = test.responses()[(i, j)] - v;
            s += e * e;
        }
    }
    s / test.n() as f64
}

fn fold_errors(train: &Dataset, test: &Dataset, grid: &[Hyper]) -> Result<Vec<f64>> {
    let mut out = vec![f64::INFINITY; grid.len()];
    // kNN: one neighbor ordering per test point serves every k
    let ks: Vec<(usize, usize)> = grid
        .iter()
        .enumerate()
        .filter_map(|(g, h)| if let Hyper::K(k) = h { Some((g, *k)) } else { None })
        .collect();
    if !ks.is_empty() {
        let r = train.responses();
        let d_y = train.d_y();
        let mut sse = vec![0.0; grid.len()];
        for t in 0..test.n() {
            let order = sorted_by_distance(train.covariates(), &test.x(t));
            let mut csum = vec![0.0; d_y];
            let mut by_k: Vec<Vec<f64>> = Vec::with_capacity(order.len());
            for &i in &order {
                for j in 0..d_y {
                    csum[j] += r[(i, j)];
                }
                by_k.push(csum.clone());
            }
            for &(g, k) in &ks {
                if k == 0 || k > train.n() {
                    continue;
                }
                for j in 0..d_y {
                    let e = test.responses()[(t, j)] - by_k[k - 1][j] / k as f64;
                    sse[g] += e * e;
                }
            }
        }
        for &(g, k) in &ks {
            if k >= 1 && k <= train.n() {
                out[g] = sse[g] / test.n() as f64;
            }
        }
    }
    let lambdas: Vec<(usize, f64)> = grid
        .iter()
        .enumerate()
        .filter_map(|(g, h)| if let Hyper::Lambda(l) = h { Some((g, *l)) } else { None })
        .collect();
    if !lambdas.is_empty() {
        let mut sorted = lambdas.clone();
        sorted.sort_by(|a, b| b.1.total_cmp(&a.1));
        let path_l: Vec<f64> = sorted.iter().map(|s| s.1).collect();
        let models = lasso_path(train, &path_l)?;
        for ((g, _), m) in sorted.iter().zip(models) {
            let pm = PointModel::Linear(m);
            let pred: Vec<Vec<f64>> = (0..test.n()).map(|t| pm.predict(&test.x(t))).collect::<Result<_>>()?;
            out[*g] = mse(test, &pred);
        }
    }
    Ok(out)
}

/// Grid value with the smallest CV error; near-ties go to the simpler model.
pub fn cv_select(data: &Dataset, grid: &[Hyper], folds: usize, seed: u64) -> Result<Hyper> {
    let errs = cv_errors(data, grid, folds, seed)?;
    let mut best = 0;
    for g in 1..grid.len() {
        let tie = (errs[g] - errs[best]).abs() <= 1e-12 * (1.0 + errs[best].abs());
        if (errs[g] < errs[best] && !tie)
            || (tie && grid[g].complexity() < grid[best].complexity())
        {
            best = g;
        }
    }
    if !errs[best].is_finite() {
        return Err(Error::EmptyGrid);
    }
    Ok(grid[best])
}

/// Candidate k values in `[⌊n^0.1⌋, ⌈n^0.9⌉]`, capped at `k_cap`; at most 50
/// (geometric spacing past that).
pub fn knn_grid(n: usize, k_cap: usize) -> Vec<usize> {
    let nf = n as f64;
    let lo = (nf.powf(0.1).floor() as usize).max(1);
    let hi = (nf.powf(0.9).ceil() as usize).min(k_cap).max(lo);
    if hi - lo + 1 <= 50 {
        return (lo..=hi).collect();
    }
    let mut v: Vec<usize> = (0..50)
        .map(|i| {
            let t = i as f64 / 49.0;
            ((lo as f64) * ((hi as f64) / (lo as f64)).powf(t)).round() as usize
        })
        .collect();
    v.dedup();
    v
}
