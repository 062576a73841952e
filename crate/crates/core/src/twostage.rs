//! Two-stage stochastic LP with fixed recourse.
//!
//! `V(z, y) = min { c_vᵀv : W v = h(y) − T z, v ≥ 0 }` with affine
//! `h(y) = h0 + H y`. First stage: `z ∈ 𝒵 = { A z ≤ b, lower ≤ z ≤ upper }`.
//!
//! Recourse values come from a [`RecourseSolver`] that keeps a cache of optimal
//! bases; since the reduced costs of a basis do not depend on the right-hand
//! side, any cached basis that stays primal feasible is optimal for a new one.
//! Evaluation is sequential in scenario order, so results do not depend on
//! thread scheduling.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, LpFailure, Result};
use crate::lpcore::{eta_update, invert_with_condition, solve_lp, LpProblem, LpStatus, MAX_CONDITION};
use crate::scenario::ScenarioSet;

pub const Z_TOL: f64 = 1e-7;
pub const DEFAULT_VAR_CAP: usize = 200_000;
pub const DEFAULT_LSHAPED_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 500;
const BASIS_CACHE: usize = 32;
const RECOURSE_FEAS: f64 = 1e-9;
const REFRESH_EVERY: usize = 50;

/// `𝒵 = { z : A z ≤ b, lower ≤ z ≤ upper }`.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstStage {
    pub a: DMatrix<f64>,
    pub b: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl FirstStage {
    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        let d = lower.len();
        Self { a: DMatrix::zeros(0, d), b: Vec::new(), lower, upper }
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        let bounds = z
            .iter()
            .zip(&self.lower)
            .zip(&self.upper)
            .all(|((v, l), u)| *v >= l - Z_TOL * (1.0 + l.abs()) && *v <= u + Z_TOL * (1.0 + u.abs()));
        bounds
            && (0..self.a.nrows()).all(|i| {
                let s: f64 = self.a.row(i).iter().zip(z).map(|(a, b)| a * b).sum();
                s <= self.b[i] + Z_TOL * (1.0 + self.b[i].abs())
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageLp {
    c_z: Vec<f64>,
    first: FirstStage,
    w: DMatrix<f64>,
    t: DMatrix<f64>,
    c_v: Vec<f64>,
    h0: Vec<f64>,
    h: DMatrix<f64>,
}

/// Optimal recourse value and multipliers `λ ∈ Λ = {λ : λᵀW ≤ c_vᵀ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Recourse {
    pub value: f64,
    pub dual: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub z_star: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub cuts: usize,
    /// Final relative gap `(UB − LB)/max(1, |UB|)`; zero for the extensive form.
    pub gap: f64,
}

impl TwoStageLp {
    pub fn new(
        c_z: Vec<f64>,
        first: FirstStage,
        w: DMatrix<f64>,
        t: DMatrix<f64>,
        c_v: Vec<f64>,
        h0: Vec<f64>,
        h: DMatrix<f64>,
    ) -> Result<Self> {
        let d_z = c_z.len();
        let (m2, d_v) = w.shape();
        if first.lower.len() != d_z || first.upper.len() != d_z || first.a.ncols() != d_z || first.a.nrows() != first.b.len() {
            return Err(Error::dims("first-stage data does not match c_z"));
        }
        if t.shape() != (m2, d_z) || c_v.len() != d_v || h0.len() != m2 || h.nrows() != m2 {
            return Err(Error::dims("second-stage blocks have inconsistent shapes"));
        }
        let finite = c_z.iter().chain(&c_v).chain(&h0).chain(&first.b).all(|v| v.is_finite())
            && w.iter().chain(t.iter()).chain(h.iter()).chain(first.a.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::DomainError("model data must be finite".into()));
        }
        if first.lower.iter().zip(&first.upper).any(|(l, u)| l > u || l.is_nan() || u.is_nan()) {
            return Err(Error::DomainError("first-stage bounds cross".into()));
        }
        if m2 > 0 {
            let sv = w.clone().svd(false, false).singular_values;
            let top = sv.iter().cloned().fold(0.0, f64::max);
            let rank = sv.iter().filter(|&&s| s > 1e-10 * top.max(f64::MIN_POSITIVE)).count();
            if rank < m2 {
                return Err(Error::RankDeficient { rank, cols: m2 });
            }
        }
        let model = Self { c_z, first, w, t, c_v, h0, h };
        model.check_dual_nonempty()?;
        Ok(model)
    }

    fn check_dual_nonempty(&self) -> Result<()> {
        if self.c_v.iter().all(|&c| c >= 0.0) {
            return Ok(());
        }
        // λ free, s ≥ 0 with Wᵀλ + s = c_v
        let (m2, d_v) = self.w.shape();
        let a = DMatrix::from_fn(d_v, m2 + d_v, |i, j| if j < m2 { self.w[(j, i)] } else if j - m2 == i { 1.0 } else { 0.0 });
        let mut lower = vec![f64::NEG_INFINITY; m2];
        lower.extend(vec![0.0; d_v]);
        let lp = LpProblem::new(vec![0.0; m2 + d_v], a, self.c_v.clone(), lower, vec![f64::INFINITY; m2 + d_v])?;
        match solve_lp(&lp)?.status {
            LpStatus::Optimal => Ok(()),
            _ => Err(Error::LpStatus(LpFailure::Unbounded)),
        }
    }

    pub fn d_z(&self) -> usize {
        self.c_z.len()
    }
    pub fn d_v(&self) -> usize {
        self.w.ncols()
    }
    pub fn m2(&self) -> usize {
        self.w.nrows()
    }
    pub fn d_y(&self) -> usize {
        self.h.ncols()
    }
    pub fn c_z(&self) -> &[f64] {
        &self.c_z
    }
    pub fn c_v(&self) -> &[f64] {
        &self.c_v
    }
    pub fn first_stage(&self) -> &FirstStage {
        &self.first
    }
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }
    pub fn t(&self) -> &DMatrix<f64> {
        &self.t
    }
    pub fn h0(&self) -> &[f64] {
        &self.h0
    }
    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    /// `h(y) = h0 + H y`.
    pub fn h_of(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.d_y() {
            return Err(Error::dims(format!("demand has {} entries, model expects {}", y.len(), self.d_y())));
        }
        Ok((0..self.m2())
            .map(|i| self.h0[i] + self.h.row(i).iter().zip(y).map(|(a, b)| a * b).sum::<f64>())
            .collect())
    }

    /// `T z`.
    pub fn t_times(&self, z: &[f64]) -> Vec<f64> {
        (0..self.m2()).map(|i| self.t.row(i).iter().zip(z).map(|(a, b)| a * b).sum()).collect()
    }

    fn check_z(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.d_z() {
            return Err(Error::dims(format!("decision has {} entries, model expects {}", z.len(), self.d_z())));
        }
        if !self.first.contains(z) {
            return Err(Error::InfeasibleCandidate("decision lies outside the first-stage region".into()));
        }
        Ok(())
    }

    pub fn first_stage_cost(&self, z: &[f64]) -> f64 {
        self.c_z.iter().zip(z).map(|(a, b)| a * b).sum()
    }

    /// Plain-text instance format; see `from_text`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let fmt_row = |s: &mut String, v: &mut dyn Iterator<Item = f64>| {
            let parts: Vec<String> = v.map(|x| format!("{x:?}")).collect();
            let _ = writeln!(s, "{}", parts.join(" "));
        };
        let _ = writeln!(s, "twostage 1");
        let _ = writeln!(s, "dims {} {} {} {} {}", self.d_z(), self.first.a.nrows(), self.m2(), self.d_v(), self.d_y());
        let _ = writeln!(s, "c_z");
        fmt_row(&mut s, &mut self.c_z.iter().copied());
        let _ = writeln!(s, "z_lower");
        fmt_row(&mut s, &mut self.first.lower.iter().copied());
        let _ = writeln!(s, "z_upper");
        fmt_row(&mut s, &mut self.first.upper.iter().copied());
        let _ = writeln!(s, "first_rows");
        for i in 0..self.first.a.nrows() {
            fmt_row(&mut s, &mut self.first.a.row(i).iter().copied().chain(std::iter::once(self.first.b[i])));
        }
        for (name, m) in [("W", &self.w), ("T", &self.t)] {
            let _ = writeln!(s, "{name}");
            for i in 0..m.nrows() {
                fmt_row(&mut s, &mut m.row(i).iter().copied());
            }
        }
        let _ = writeln!(s, "c_v");
        fmt_row(&mut s, &mut self.c_v.iter().copied());
        let _ = writeln!(s, "h0");
        fmt_row(&mut s, &mut self.h0.iter().copied());
        let _ = writeln!(s, "H");
        for i in 0..self.h.nrows() {
            fmt_row(&mut s, &mut self.h.row(i).iter().copied());
        }
        s
    }

    /// Parses the format written by `to_text`. Lines starting with `#` are ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let mut next = |what: &str| lines.next().ok_or_else(|| Error::Parse(format!("missing {what}")));
        let nums = |line: &str, len: usize, what: &str| -> Result<Vec<f64>> {
            let v: Vec<f64> = if line.is_empty() {
                Vec::new()
            } else {
                line.split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Parse(format!("{what}: {e}")))?
            };
            if v.len() != len {
                return Err(Error::Parse(format!("{what}: expected {len} values, found {}", v.len())));
            }
            Ok(v)
        };
        let head = next("header")?;
        if head != "twostage 1" {
            return Err(Error::Parse(format!("unknown header `{head}`")));
        }
        let dims_line = next("dims")?;
        let dims: Vec<usize> = dims_line
            .strip_prefix("dims")
            .ok_or_else(|| Error::Parse("expected dims line".into()))?
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| Error::Parse(format!("dims: {e}"))))
            .collect::<Result<_>>()?;
        let [d_z, m1, m2, d_v, d_y] = dims[..] else {
            return Err(Error::Parse("dims needs five counts".into()));
        };
        let mut section = |name: &str, rows: usize, cols: usize| -> Result<Vec<Vec<f64>>> {
            let tag = next(name)?;
            if tag != name {
                return Err(Error::Parse(format!("expected section `{name}`, found `{tag}`")));
            }
            (0..rows).map(|_| next(name).and_then(|l| nums(l, cols, name))).collect()
        };
        let c_z = section("c_z", 1, d_z)?.remove(0);
        let lower = section("z_lower", 1, d_z)?.remove(0);
        let upper = section("z_upper", 1, d_z)?.remove(0);
        let first_rows = section("first_rows", m1, d_z + 1)?;
        let w = section("W", m2, d_v)?;
        let t = section("T", m2, d_z)?;
        let c_v = section("c_v", 1, d_v)?.remove(0);
        let h0 = section("h0", 1, m2)?.remove(0);
        let h = section("H", m2, d_y)?;
        let mat = |rows: &[Vec<f64>], c: usize| DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j]);
        let first = FirstStage {
            a: mat(&first_rows, d_z),
            b: first_rows.iter().map(|r| r[d_z]).collect(),
            lower,
            upper,
        };
        Self::new(c_z, first, mat(&w, d_v), mat(&t, d_z), c_v, h0, mat(&h, d_y))
    }
}

struct CachedBasis {
    basis: Vec<usize>,
    binv: DMatrix<f64>,
    lambda: Vec<f64>,
}

/// Recourse LP solver with a most-recently-used cache of optimal bases and a
/// dual simplex warm start when no cached basis fits.
pub struct RecourseSolver<'a> {
    model: &'a TwoStageLp,
    cache: Vec<CachedBasis>,
    pub cold_solves: usize,
    pub warm_solves: usize,
    pub cache_hits: usize,
}

impl<'a> RecourseSolver<'a> {
    pub fn new(model: &'a TwoStageLp) -> Self {
        Self { model, cache: Vec::new(), cold_solves: 0, warm_solves: 0, cache_hits: 0 }
    }

    /// Value and multipliers at `z`; `z` is not checked against `𝒵`.
    pub fn value(&mut self, z: &[f64], y: &[f64]) -> Result<Recourse> {
        let h = self.model.h_of(y)?;
        let tz = self.model.t_times(z);
        let r: Vec<f64> = h.iter().zip(&tz).map(|(a, b)| a - b).collect();
        self.solve_rhs(&r)
    }

    fn tol(r: &[f64]) -> f64 {
        RECOURSE_FEAS * (1.0 + r.iter().map(|v| v.abs()).fold(0.0, f64::max))
    }

    fn solve_rhs(&mut self, r: &[f64]) -> Result<Recourse> {
        let m = self.model.m2();
        if m == 0 {
            return Ok(Recourse { value: 0.0, dual: Vec::new() });
        }
        let tol = Self::tol(r);
        for idx in 0..self.cache.len() {
            let cb = &self.cache[idx];
            let ok = (0..m).all(|k| cb.binv.row(k).iter().zip(r).map(|(a, b)| a * b).sum::<f64>() >= -tol);
            if ok {
                let value = dot(&cb.lambda, r);
                let dual = cb.lambda.clone();
                self.cache[..=idx].rotate_right(1);
                self.cache_hits += 1;
                return Ok(Recourse { value, dual });
            }
        }
        if !self.cache.is_empty() {
            if let Some(res) = self.dual_simplex(r)? {
                self.warm_solves += 1;
                return Ok(res);
            }
        }
        self.cold_solves += 1;
        self.cold(r)
    }

    fn remember(&mut self, cb: CachedBasis) {
        self.cache.insert(0, cb);
        self.cache.truncate(BASIS_CACHE);
    }

    fn cold(&mut self, r: &[f64]) -> Result<Recourse> {
        let model = self.model;
        let d_v = model.d_v();
        let lp = LpProblem::new(model.c_v.clone(), model.w.clone(), r.to_vec(), vec![0.0; d_v], vec![f64::INFINITY; d_v])?;
        let sol = solve_lp(&lp)?;
        match sol.status {
            LpStatus::Infeasible => return Err(Error::RecourseInfeasible(format!("no v ≥ 0 with W v = {r:?}"))),
            LpStatus::Unbounded => return Err(Error::LpStatus(LpFailure::Unbounded)),
            LpStatus::Optimal => {}
        }
        let basis = sol.basis().to_vec();
        if basis.iter().all(|&j| j < d_v) {
            let b = model.w.select_columns(&basis);
            if let Some((binv, cond)) = invert_with_condition(&b) {
                if cond <= MAX_CONDITION {
                    let lambda = basis_duals(&model.c_v, &basis, &binv);
                    let value = dot(&lambda, r);
                    self.remember(CachedBasis { basis, binv, lambda: lambda.clone() });
                    return Ok(Recourse { value, dual: lambda });
                }
            }
        }
        Ok(Recourse { value: sol.objective_value, dual: sol.dual })
    }

    /// Dual simplex from the most recent basis. `None` means give up and solve cold.
    fn dual_simplex(&mut self, r: &[f64]) -> Result<Option<Recourse>> {
        let model = self.model;
        let (m, p) = model.w.shape();
        let c = &model.c_v;
        let start = &self.cache[0];
        let mut basis = start.basis.clone();
        let mut binv = start.binv.clone();
        let mut is_basic = vec![false; p];
        basis.iter().for_each(|&j| is_basic[j] = true);
        let tol = Self::tol(r);
        let mut xb = vec![0.0; m];
        let mut alpha = vec![0.0; m];
        let mut col = vec![0.0; m];
        let cap = 20 * (m + p);
        for it in 0..cap {
            if it > 0 && it % REFRESH_EVERY == 0 {
                let b = model.w.select_columns(&basis);
                match invert_with_condition(&b) {
                    Some((inv, cond)) if cond <= MAX_CONDITION => binv = inv,
                    _ => return Ok(None),
                }
            }
            for k in 0..m {
                xb[k] = binv.row(k).iter().zip(r).map(|(a, b)| a * b).sum();
            }
            let mut leave = None;
            let mut worst = -tol;
            for (k, &v) in xb.iter().enumerate() {
                if v < worst {
                    worst = v;
                    leave = Some(k);
                }
            }
            let lambda = basis_duals(c, &basis, &binv);
            let Some(lr) = leave else {
                let value = dot(&lambda, r);
                self.remember(CachedBasis { basis, binv, lambda: lambda.clone() });
                return Ok(Some(Recourse { value, dual: lambda }));
            };
            let rho: Vec<f64> = binv.row(lr).iter().copied().collect();
            let mut enter: Option<(usize, f64, f64)> = None;
            for j in 0..p {
                if is_basic[j] {
                    continue;
                }
                let wj = model.w.column(j);
                let a: f64 = rho.iter().zip(wj.iter()).map(|(x, y)| x * y).sum();
                if a >= -1e-9 {
                    continue;
                }
                let d = (c[j] - lambda.iter().zip(wj.iter()).map(|(x, y)| x * y).sum::<f64>()).max(0.0);
                let ratio = d / -a;
                let better = match enter {
                    None => true,
                    Some((_, br, ba)) => ratio < br - 1e-12 || (ratio <= br + 1e-12 && a.abs() > ba.abs()),
                };
                if better {
                    enter = Some((j, ratio, a));
                }
            }
            let Some((j, _, _)) = enter else {
                return Err(Error::RecourseInfeasible("dual simplex found no entering column".into()));
            };
            for i in 0..m {
                col[i] = model.w[(i, j)];
            }
            for k in 0..m {
                alpha[k] = binv.row(k).iter().zip(&col).map(|(a, b)| a * b).sum();
            }
            if alpha[lr].abs() < 1e-11 {
                return Ok(None);
            }
            eta_update(&mut binv, &alpha, lr);
            is_basic[basis[lr]] = false;
            is_basic[j] = true;
            basis[lr] = j;
        }
        Ok(None)
    }
}

fn basis_duals(c: &[f64], basis: &[usize], binv: &DMatrix<f64>) -> Vec<f64> {
    let m = basis.len();
    (0..m).map(|i| (0..m).map(|k| c[basis[k]] * binv[(k, i)]).sum()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `V(z, y)` with an optimal multiplier.
pub fn second_stage_value(model: &TwoStageLp, z: &[f64], y: &[f64]) -> Result<Recourse> {
    model.check_z(z)?;
    RecourseSolver::new(model).value(z, y)
}

/// `c_zᵀz + V(z, y)`.
pub fn cost(model: &TwoStageLp, z: &[f64], y: &[f64]) -> Result<f64> {
    Ok(model.first_stage_cost(z) + second_stage_value(model, z, y)?.value)
}

struct Evaluation {
    value: f64,
    /// `Σ w_i λ_iᵀ h(y_i)`
    alpha: f64,
    /// `Σ w_i Tᵀλ_i`
    beta: Vec<f64>,
}

fn evaluate(solver: &mut RecourseSolver<'_>, model: &TwoStageLp, scen: &ScenarioSet, z: &[f64]) -> Result<Evaluation> {
    if scen.dim() != model.d_y() {
        return Err(Error::dims("scenario dimension differs from model"));
    }
    let tz = model.t_times(z);
    let m = model.m2();
    let mut recourse = 0.0;
    let mut alpha = 0.0;
    let mut lam_bar = vec![0.0; m];
    let mut r = vec![0.0; m];
    for i in 0..scen.len() {
        let wgt = scen.weights()[i];
        if wgt == 0.0 {
            continue;
        }
        let h = model.h_of(&scen.point(i))?;
        for k in 0..m {
            r[k] = h[k] - tz[k];
        }
        let rec = solver.solve_rhs(&r)?;
        recourse += wgt * rec.value;
        alpha += wgt * dot(&rec.dual, &h);
        for k in 0..m {
            lam_bar[k] += wgt * rec.dual[k];
        }
    }
    let beta = (0..model.d_z()).map(|j| (0..m).map(|k| model.t[(k, j)] * lam_bar[k]).sum()).collect();
    Ok(Evaluation { value: model.first_stage_cost(z) + recourse, alpha, beta })
}

/// `Σ_i w_i · cost(z, y_i)`.
pub fn saa_objective(model: &TwoStageLp, scenarios: &ScenarioSet, z: &[f64]) -> Result<f64> {
    model.check_z(z)?;
    Ok(evaluate(&mut RecourseSolver::new(model), model, scenarios, z)?.value)
}

/// Deterministic-equivalent LP over all positive-weight scenarios.
pub fn solve_extensive(model: &TwoStageLp, scenarios: &ScenarioSet) -> Result<SolveResult> {
    solve_extensive_capped(model, scenarios, DEFAULT_VAR_CAP)
}

pub fn solve_extensive_capped(model: &TwoStageLp, scenarios: &ScenarioSet, cap: usize) -> Result<SolveResult> {
    if scenarios.dim() != model.d_y() {
        return Err(Error::dims("scenario dimension differs from model"));
    }
    let active: Vec<usize> = (0..scenarios.len()).filter(|&i| scenarios.weights()[i] > 0.0).collect();
    let (d_z, m1, m2, d_v) = (model.d_z(), model.first.a.nrows(), model.m2(), model.d_v());
    let vars = d_z + m1 + active.len() * d_v;
    if vars > cap {
        return Err(Error::SizeCapExceeded { vars, cap });
    }
    let rows = m1 + active.len() * m2;
    let mut a = DMatrix::zeros(rows, vars);
    let mut rhs = vec![0.0; rows];
    let mut c = vec![0.0; vars];
    let mut lower = vec![0.0; vars];
    let mut upper = vec![f64::INFINITY; vars];
    c[..d_z].copy_from_slice(&model.c_z);
    lower[..d_z].copy_from_slice(&model.first.lower);
    upper[..d_z].copy_from_slice(&model.first.upper);
    for i in 0..m1 {
        for j in 0..d_z {
            a[(i, j)] = model.first.a[(i, j)];
        }
        a[(i, d_z + i)] = 1.0;
        rhs[i] = model.first.b[i];
    }
    for (s, &idx) in active.iter().enumerate() {
        let h = model.h_of(&scenarios.point(idx))?;
        let wgt = scenarios.weights()[idx];
        let col0 = d_z + m1 + s * d_v;
        let row0 = m1 + s * m2;
        for k in 0..m2 {
            for j in 0..d_z {
                a[(row0 + k, j)] = model.t[(k, j)];
            }
            for j in 0..d_v {
                a[(row0 + k, col0 + j)] = model.w[(k, j)];
            }
            rhs[row0 + k] = h[k];
        }
        for j in 0..d_v {
            c[col0 + j] = wgt * model.c_v[j];
        }
    }
    let lp = LpProblem::new(c, a, rhs, lower, upper)?;
    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(Error::LpStatus(LpFailure::Infeasible)),
        LpStatus::Unbounded => return Err(Error::LpStatus(LpFailure::Unbounded)),
    }
    let z_star = clamp_to_bounds(&sol.primal[..d_z], &model.first);
    Ok(SolveResult { z_star, objective: sol.objective_value, iterations: sol.iterations, cuts: 0, gap: 0.0 })
}

fn clamp_to_bounds(z: &[f64], first: &FirstStage) -> Vec<f64> {
    z.iter().zip(&first.lower).zip(&first.upper).map(|((v, l), u)| v.clamp(*l, *u)).collect()
}

#[derive(Debug, Clone)]
pub struct LShapedOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Feasible starting decision evaluated before the first master solve.
    pub incumbent: Option<Vec<f64>>,
}

impl Default for LShapedOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_LSHAPED_TOL, max_iter: DEFAULT_MAX_ITER, incumbent: None }
    }
}

/// Outcome of one L-shaped run, including the bound history.
#[derive(Debug, Clone)]
pub struct LShapedTrace {
    pub result: SolveResult,
    pub lower_bounds: Vec<f64>,
    pub upper_bounds: Vec<f64>,
}

pub fn solve_lshaped(model: &TwoStageLp, scenarios: &ScenarioSet, tol: f64, max_iter: usize) -> Result<SolveResult> {
    let opts = LShapedOptions { tol, max_iter, incumbent: None };
    Ok(solve_lshaped_traced(model, scenarios, &opts)?.result)
}

struct Cut {
    alpha: f64,
    beta: Vec<f64>,
}

fn solve_master(model: &TwoStageLp, cuts: &[Cut]) -> Result<(Vec<f64>, f64)> {
    let (d_z, m1) = (model.d_z(), model.first.a.nrows());
    let with_theta = !cuts.is_empty();
    let nt = usize::from(with_theta);
    let cols = d_z + nt + m1 + cuts.len();
    let rows = m1 + cuts.len();
    let mut a = DMatrix::zeros(rows, cols);
    let mut rhs = vec![0.0; rows];
    let mut c = vec![0.0; cols];
    let mut lower = vec![0.0; cols];
    let mut upper = vec![f64::INFINITY; cols];
    c[..d_z].copy_from_slice(&model.c_z);
    lower[..d_z].copy_from_slice(&model.first.lower);
    upper[..d_z].copy_from_slice(&model.first.upper);
    if with_theta {
        c[d_z] = 1.0;
        lower[d_z] = f64::NEG_INFINITY;
    }
    for i in 0..m1 {
        for j in 0..d_z {
            a[(i, j)] = model.first.a[(i, j)];
        }
        a[(i, d_z + nt + i)] = 1.0;
        rhs[i] = model.first.b[i];
    }
    // θ + βᵀz − s = α
    for (k, cut) in cuts.iter().enumerate() {
        let row = m1 + k;
        for j in 0..d_z {
            a[(row, j)] = cut.beta[j];
        }
        a[(row, d_z)] = 1.0;
        a[(row, d_z + nt + m1 + k)] = -1.0;
        rhs[row] = cut.alpha;
    }
    let lp = LpProblem::new(c, a, rhs, lower, upper)?;
    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(Error::LpStatus(LpFailure::Infeasible)),
        LpStatus::Unbounded => return Err(Error::LpStatus(LpFailure::Unbounded)),
    }
    Ok((clamp_to_bounds(&sol.primal[..d_z], &model.first), sol.objective_value))
}

/// Single-cut L-shaped method. The first master ignores the recourse term;
/// each later master carries `θ` and all cuts so far. An incumbent is replaced
/// only by a strictly better decision (relative improvement above 1e-12).
pub fn solve_lshaped_traced(model: &TwoStageLp, scenarios: &ScenarioSet, opts: &LShapedOptions) -> Result<LShapedTrace> {
    if !(opts.tol > 0.0) {
        return Err(Error::BadConfig(format!("L-shaped tolerance must be positive, got {}", opts.tol)));
    }
    if scenarios.dim() != model.d_y() {
        return Err(Error::dims("scenario dimension differs from model"));
    }
    let mut solver = RecourseSolver::new(model);
    let mut cuts: Vec<Cut> = Vec::new();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut lbs = Vec::new();
    let mut ubs = Vec::new();
    let mut lb = f64::NEG_INFINITY;

    let offer = |z: Vec<f64>, ev: &Evaluation, best: &mut Option<(Vec<f64>, f64)>| {
        let improves = match best {
            None => true,
            Some((_, ub)) => ev.value < *ub - 1e-12 * ub.abs().max(1.0),
        };
        if improves {
            *best = Some((z, ev.value));
        }
    };

    if let Some(z0) = &opts.incumbent {
        model.check_z(z0)?;
        let ev = evaluate(&mut solver, model, scenarios, z0)?;
        cuts.push(Cut { alpha: ev.alpha, beta: ev.beta.clone() });
        offer(z0.clone(), &ev, &mut best);
    } else {
        let (z0, _) = solve_master(model, &[])?;
        let ev = evaluate(&mut solver, model, scenarios, &z0)?;
        cuts.push(Cut { alpha: ev.alpha, beta: ev.beta.clone() });
        offer(z0, &ev, &mut best);
    }
    ubs.push(best.as_ref().map(|b| b.1).unwrap());

    let gap_of = |ub: f64, lb: f64| (ub - lb) / ub.abs().max(1.0);
    for iter in 1..=opts.max_iter {
        let (z, obj) = solve_master(model, &cuts)?;
        lb = lb.max(obj);
        lbs.push(lb);
        let ev = evaluate(&mut solver, model, scenarios, &z)?;
        offer(z, &ev, &mut best);
        let (bz, ub) = best.clone().unwrap();
        ubs.push(ub);
        let gap = gap_of(ub, lb);
        if gap <= opts.tol {
            return Ok(LShapedTrace {
                result: SolveResult { z_star: bz, objective: ub, iterations: iter, cuts: cuts.len(), gap: gap.max(0.0) },
                lower_bounds: lbs,
                upper_bounds: ubs,
            });
        }
        cuts.push(Cut { alpha: ev.alpha, beta: ev.beta });
    }
    let (bz, ub) = best.unwrap();
    let gap = gap_of(ub, lb);
    Err(Error::IterationLimit {
        gap,
        best: Box::new(SolveResult { z_star: bz, objective: ub, iterations: opts.max_iter, cuts: cuts.len(), gap }),
    })
}
