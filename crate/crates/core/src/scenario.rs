//! Scenario sets for the data-driven SAA formulations.
//!
//! Every builder returns points in training-data order with no merging of
//! duplicates. Projection onto the support box is applied last.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::regress::{Dataset, HeteroModel, KnnModel, LooBundle, PointModel};

/// Componentwise box `lower ≤ y ≤ upper`, possibly unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl SupportBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::dims("support bounds differ in length"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| l.is_nan() || u.is_nan() || l > u || *l == f64::INFINITY || *u == f64::NEG_INFINITY) {
            return Err(Error::DomainError("empty support box".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(d: usize) -> Self {
        Self { lower: vec![f64::NEG_INFINITY; d], upper: vec![f64::INFINITY; d] }
    }

    pub fn nonnegative(d: usize) -> Self {
        Self { lower: vec![0.0; d], upper: vec![f64::INFINITY; d] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Euclidean projection (componentwise clamp).
    pub fn project(&self, y: &mut [f64]) {
        for ((v, l), u) in y.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        y.iter().zip(&self.lower).zip(&self.upper).all(|((v, l), u)| v >= l && v <= u)
    }
}

/// Weighted scenarios; weights are nonnegative and sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    points: DMatrix<f64>,
    weights: Vec<f64>,
}

impl ScenarioSet {
    pub fn new(points: DMatrix<f64>, weights: Vec<f64>) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(Error::EmptyInput);
        }
        if points.nrows() != weights.len() {
            return Err(Error::dims(format!("{} points vs {} weights", points.nrows(), weights.len())));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::DomainError("scenario values must be finite".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::DomainError("negative scenario weight".into()));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::DomainError(format!("weights sum to {s}")));
        }
        Ok(Self { points, weights })
    }

    pub fn uniform(points: DMatrix<f64>) -> Result<Self> {
        let m = points.nrows();
        Self::new(points, vec![1.0 / m as f64; m])
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.points.row(i).iter().copied().collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("w");
        for j in 1..=self.dim() {
            let _ = write!(s, ",y{j}");
        }
        s.push('\n');
        for i in 0..self.len() {
            let _ = write!(s, "{:?}", self.weights[i]);
            for v in self.points.row(i).iter() {
                let _ = write!(s, ",{v:?}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or(Error::EmptyInput)?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 2 || cols[0] != "w" {
            return Err(Error::Parse(format!("bad scenario header `{header}`")));
        }
        let d = cols.len() - 1;
        let mut w = Vec::new();
        let mut pts = Vec::new();
        for (ln, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("row {}: {e}", ln + 1)))?;
            if vals.len() != d + 1 {
                return Err(Error::Parse(format!("row {} has {} fields", ln + 1, vals.len())));
            }
            w.push(vals[0]);
            pts.extend_from_slice(&vals[1..]);
        }
        Self::new(DMatrix::from_row_slice(w.len(), d, &pts), w)
    }
}

/// Standardized residual rows `ε̂^i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMatrix {
    pub values: DMatrix<f64>,
}

impl ResidualMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::DomainError("non-finite residual".into()));
        }
        Ok(Self { values })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn d_y(&self) -> usize {
        self.values.ncols()
    }
}

fn scaled_residual(data: &Dataset, i: usize, f: &[f64], q: &[f64]) -> Vec<f64> {
    (0..data.d_y()).map(|j| (data.responses()[(i, j)] - f[j]) / q[j]).collect()
}

/// Row i is `Q̂(x^i)⁻¹(y^i − f̂(x^i))`.
pub fn empirical_residuals(data: &Dataset, f: &PointModel, q: &HeteroModel) -> Result<ResidualMatrix> {
    check_models(data, f, q)?;
    let mut v = DMatrix::zeros(data.n(), data.d_y());
    for i in 0..data.n() {
        let x = data.x(i);
        let r = scaled_residual(data, i, &f.predict(&x)?, &q.q_diag(&x)?);
        v.row_mut(i).iter_mut().zip(r).for_each(|(a, b)| *a = b);
    }
    ResidualMatrix::new(v)
}

fn check_models(data: &Dataset, f: &PointModel, q: &HeteroModel) -> Result<()> {
    if f.d_x() != data.d_x() || f.d_y() != data.d_y() || q.d_y() != data.d_y() {
        return Err(Error::dims("models do not match dataset dimensions"));
    }
    Ok(())
}

/// Drop-one predictions `f̂_{−i}` and scales `Q̂_{−i}`.
pub trait LooPredictor {
    fn n(&self) -> usize;
    fn predict_without(&self, i: usize, x: &[f64]) -> Result<Vec<f64>>;
    fn q_without(&self, i: usize, x: &[f64]) -> Result<Vec<f64>>;
}

impl LooPredictor for [(PointModel, HeteroModel)] {
    fn n(&self) -> usize {
        self.len()
    }

    fn predict_without(&self, i: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.get(i).ok_or(Error::IndexOutOfRange { index: i, len: self.len() })?.0.predict(x)
    }

    fn q_without(&self, i: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.get(i).ok_or(Error::IndexOutOfRange { index: i, len: self.len() })?.1.q_diag(x)
    }
}

impl LooPredictor for Vec<(PointModel, HeteroModel)> {
    fn n(&self) -> usize {
        self.as_slice().n()
    }

    fn predict_without(&self, i: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.as_slice().predict_without(i, x)
    }

    fn q_without(&self, i: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.as_slice().q_without(i, x)
    }
}

/// Homoscedastic OLS drop-one models via the rank-one shortcut.
#[derive(Debug, Clone, Copy)]
pub struct OlsShortcut<'a> {
    pub bundle: &'a LooBundle,
    pub data: &'a Dataset,
}

impl LooPredictor for OlsShortcut<'_> {
    fn n(&self) -> usize {
        self.bundle.n()
    }

    fn predict_without(&self, i: usize, x: &[f64]) -> Result<Vec<f64>> {
        let full = PointModel::Linear(self.bundle.model.clone()).predict(x)?;
        let delta = crate::regress::loo_predict_delta(self.bundle, self.data, x, i)?;
        Ok(full.iter().zip(delta).map(|(a, b)| a - b).collect())
    }

    fn q_without(&self, _i: usize, _x: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![1.0; self.data.d_y()])
    }
}

/// Row i is `Q̂_{−i}(x^i)⁻¹(y^i − f̂_{−i}(x^i))`.
pub fn loo_residuals(data: &Dataset, loo: &(impl LooPredictor + ?Sized)) -> Result<ResidualMatrix> {
    if loo.n() != data.n() {
        return Err(Error::dims(format!("{} drop-one models for {} rows", loo.n(), data.n())));
    }
    let mut v = DMatrix::zeros(data.n(), data.d_y());
    for i in 0..data.n() {
        let x = data.x(i);
        let f = loo.predict_without(i, &x)?;
        let q = loo.q_without(i, &x)?;
        if f.len() != data.d_y() || q.len() != data.d_y() {
            return Err(Error::dims("drop-one model output size"));
        }
        let r = scaled_residual(data, i, &f, &q);
        v.row_mut(i).iter_mut().zip(r).for_each(|(a, b)| *a = b);
    }
    ResidualMatrix::new(v)
}

fn affine_set(
    support: &SupportBox,
    residuals: &ResidualMatrix,
    project: bool,
    mut centre: impl FnMut(usize) -> Result<(Vec<f64>, Vec<f64>)>,
) -> Result<ScenarioSet> {
    let (n, d) = (residuals.n(), residuals.d_y());
    if support.dim() != d {
        return Err(Error::dims("support dimension differs from residuals"));
    }
    let mut pts = DMatrix::zeros(n, d);
    let mut row = vec![0.0; d];
    for i in 0..n {
        let (f, q) = centre(i)?;
        if f.len() != d || q.len() != d {
            return Err(Error::dims("model output size differs from residuals"));
        }
        for j in 0..d {
            row[j] = f[j] + q[j] * residuals.values[(i, j)];
        }
        if project {
            support.project(&mut row);
        }
        pts.row_mut(i).iter_mut().zip(&row).for_each(|(a, b)| *a = *b);
    }
    ScenarioSet::uniform(pts)
}

/// Point i is `Π[f̂(x) + Q̂(x) ε̂^i]`; `project = false` skips the clamp.
pub fn build_er_saa_with(
    x: &[f64],
    f: &PointModel,
    q: &HeteroModel,
    residuals: &ResidualMatrix,
    support: &SupportBox,
    project: bool,
) -> Result<ScenarioSet> {
    let fx = f.predict(x)?;
    let qx = q.q_diag(x)?;
    affine_set(support, residuals, project, |_| Ok((fx.clone(), qx.clone())))
}

pub fn build_er_saa(
    x: &[f64],
    f: &PointModel,
    q: &HeteroModel,
    residuals: &ResidualMatrix,
    support: &SupportBox,
) -> Result<ScenarioSet> {
    build_er_saa_with(x, f, q, residuals, support, true)
}

/// Same formula as ER-SAA with leave-one-out residuals.
pub fn build_j_saa(
    x: &[f64],
    f: &PointModel,
    q: &HeteroModel,
    loo_res: &ResidualMatrix,
    support: &SupportBox,
) -> Result<ScenarioSet> {
    build_er_saa_with(x, f, q, loo_res, support, true)
}

/// Point i is `Π[f̂_{−i}(x) + Q̂_{−i}(x) ε̂^i_J]`.
pub fn build_jplus_saa_with(
    x: &[f64],
    loo: &(impl LooPredictor + ?Sized),
    loo_res: &ResidualMatrix,
    support: &SupportBox,
    project: bool,
) -> Result<ScenarioSet> {
    if loo.n() != loo_res.n() {
        return Err(Error::dims(format!("{} drop-one models for {} residual rows", loo.n(), loo_res.n())));
    }
    affine_set(support, loo_res, project, |i| Ok((loo.predict_without(i, x)?, loo.q_without(i, x)?)))
}

pub fn build_jplus_saa(
    x: &[f64],
    loo: &(impl LooPredictor + ?Sized),
    loo_res: &ResidualMatrix,
    support: &SupportBox,
) -> Result<ScenarioSet> {
    build_jplus_saa_with(x, loo, loo_res, support, true)
}

/// The observed responses, uniformly weighted.
pub fn build_n_saa(data: &Dataset) -> ScenarioSet {
    ScenarioSet::uniform(data.responses().clone()).expect("dataset rows are finite and nonempty")
}

/// Single point `Π[f̂(x)]`.
pub fn build_pp_with(x: &[f64], f: &PointModel, support: &SupportBox, project: bool) -> Result<ScenarioSet> {
    let mut p = f.predict(x)?;
    if support.dim() != p.len() {
        return Err(Error::dims("support dimension differs from prediction"));
    }
    if project {
        support.project(&mut p);
    }
    ScenarioSet::new(DMatrix::from_row_slice(1, p.len(), &p), vec![1.0])
}

pub fn build_pp(x: &[f64], f: &PointModel, support: &SupportBox) -> Result<ScenarioSet> {
    build_pp_with(x, f, support, true)
}

/// All responses, weight `1/k` on the `k` rows nearest to `x`.
pub fn build_knn_saa(data: &Dataset, x: &[f64], k: usize) -> Result<ScenarioSet> {
    if x.len() != data.d_x() {
        return Err(Error::dims("query size differs from covariates"));
    }
    let model: KnnModel = crate::regress::fit_knn(data, k)?;
    let mut w = vec![0.0; data.n()];
    for i in model.neighbors(x) {
        w[i] = 1.0 / k as f64;
    }
    ScenarioSet::new(data.responses().clone(), w)
}

/// Both sides of the homoscedastic mean-deviation inequality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanDeviationCheck {
    pub lhs: f64,
    pub rhs: f64,
}

impl MeanDeviationCheck {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs + 1e-10
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// `lhs = (1/n)Σ‖(f̂(x)+ε̂^i) − (f*(x)+ε^i)‖`, `rhs = ‖f̂(x)−f*(x)‖ + (1/n)Σ‖f̂(x^i)−f*(x^i)‖`,
/// with true errors `ε^i = y^i − f*(x^i)`.
pub fn check_mean_deviation_bound(
    x: &[f64],
    f: &PointModel,
    homoscedastic: bool,
    f_true: Option<&dyn Fn(&[f64]) -> Vec<f64>>,
    residuals: &ResidualMatrix,
    data: &Dataset,
) -> Result<MeanDeviationCheck> {
    let f_true = f_true.ok_or(Error::TrueModelUnavailable)?;
    if !homoscedastic {
        return Err(Error::DomainError("bound applies to the homoscedastic setting".into()));
    }
    if residuals.n() != data.n() || residuals.d_y() != data.d_y() {
        return Err(Error::dims("residuals do not match dataset"));
    }
    let fx = f.predict(x)?;
    let tx = f_true(x);
    let n = data.n() as f64;
    let mut lhs = 0.0;
    let mut tail = 0.0;
    for i in 0..data.n() {
        let xi = data.x(i);
        let yi = data.y(i);
        let ti = f_true(&xi);
        let a: Vec<f64> = (0..data.d_y()).map(|j| fx[j] + residuals.values[(i, j)]).collect();
        let b: Vec<f64> = (0..data.d_y()).map(|j| tx[j] + yi[j] - ti[j]).collect();
        lhs += dist(&a, &b);
        tail += dist(&f.predict(&xi)?, &ti);
    }
    Ok(MeanDeviationCheck { lhs: lhs / n, rhs: dist(&fx, &tx) + tail / n })
}
