//! Dense bounded-variable revised simplex.
//!
//! Problems are in the form `min cᵀv  s.t.  A v = b,  l ≤ v ≤ u` with
//! possibly infinite bounds. Phase 1 adds one signed artificial per row;
//! artificials are then fixed at zero and driven out of the basis where a
//! structural replacement exists. Pricing is Dantzig with lowest-index ties,
//! switching to Bland's rule after `3·(m+p)` consecutive degenerate pivots.
//! The explicit basis inverse is refreshed every [`REFACTOR_EVERY`] pivots.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const FEAS_TOL: f64 = 1e-7;
pub const OPT_TOL: f64 = 1e-9;
pub const REFACTOR_EVERY: usize = 100;
pub const MAX_CONDITION: f64 = 1e14;
const PIVOT_TOL: f64 = 1e-9;
const ZERO_STEP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub objective_value: f64,
    pub primal: Vec<f64>,
    /// Equality multipliers.
    pub dual: Vec<f64>,
    /// `c - Aᵀ dual`.
    pub reduced_costs: Vec<f64>,
    pub iterations: usize,
    basis: Vec<usize>,
}

impl LpSolution {
    /// Basic column per row. Indices `>= p` denote artificials that stayed
    /// basic at zero (only possible for redundant rows).
    pub fn basis(&self) -> &[usize] {
        &self.basis
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

impl LpProblem {
    pub fn new(
        objective: Vec<f64>,
        eq_matrix: DMatrix<f64>,
        eq_rhs: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self> {
        let (m, p) = eq_matrix.shape();
        if objective.len() != p || lower.len() != p || upper.len() != p {
            return Err(Error::dims(format!(
                "objective/bounds must have {p} entries"
            )));
        }
        if eq_rhs.len() != m {
            return Err(Error::dims(format!("rhs must have {m} entries")));
        }
        if objective.iter().chain(eq_matrix.iter()).chain(eq_rhs.iter()).any(|v| !v.is_finite()) {
            return Err(Error::BadConfig("LP data must be finite".into()));
        }
        for j in 0..p {
            if lower[j].is_nan() || upper[j].is_nan() || lower[j] > upper[j] {
                return Err(Error::BadConfig(format!("bad bounds on variable {j}")));
            }
            if lower[j] == f64::INFINITY || upper[j] == f64::NEG_INFINITY {
                return Err(Error::BadConfig(format!("bad bounds on variable {j}")));
            }
        }
        for i in 0..m {
            if eq_matrix.row(i).iter().all(|&a| a == 0.0) && eq_rhs[i] != 0.0 {
                return Err(Error::BadConfig(format!(
                    "row {i} is all zero with nonzero rhs"
                )));
            }
        }
        Ok(Self { objective, eq_matrix, eq_rhs, lower, upper })
    }

    pub fn num_rows(&self) -> usize {
        self.eq_matrix.nrows()
    }

    pub fn num_cols(&self) -> usize {
        self.eq_matrix.ncols()
    }

    /// Plain-text fixed-point dump for bug reports.
    pub fn dump(&self) -> String {
        let (m, p) = self.eq_matrix.shape();
        let fx = |v: f64| {
            if v.is_infinite() {
                if v > 0.0 { "inf".to_string() } else { "-inf".to_string() }
            } else {
                format!("{v:.12}")
            }
        };
        let mut s = String::new();
        let _ = writeln!(s, "lp {m} {p}");
        let _ = writeln!(s, "objective");
        let _ = writeln!(s, "{}", self.objective.iter().map(|&v| fx(v)).collect::<Vec<_>>().join(" "));
        let _ = writeln!(s, "rows");
        for i in 0..m {
            let row: Vec<String> = (0..p).map(|j| fx(self.eq_matrix[(i, j)])).collect();
            let _ = writeln!(s, "{} = {}", row.join(" "), fx(self.eq_rhs[i]));
        }
        let _ = writeln!(s, "bounds");
        for j in 0..p {
            let _ = writeln!(s, "{} {}", fx(self.lower[j]), fx(self.upper[j]));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic,
    AtLower,
    AtUpper,
    FreeZero,
}

/// Inverts `b`, returning `None` when singular, otherwise the inverse and the
/// 1-norm condition estimate `‖B‖₁‖B⁻¹‖₁`.
pub(crate) fn invert_with_condition(b: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let inv = b.clone().lu().try_inverse()?;
    let norm1 = |m: &DMatrix<f64>| {
        (0..m.ncols())
            .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    let cond = norm1(b) * norm1(&inv);
    if !cond.is_finite() {
        return None;
    }
    Some((inv, cond))
}

/// Replaces row `r` of the basis inverse after pivoting on column `alpha = B⁻¹ a_q`.
pub(crate) fn eta_update(binv: &mut DMatrix<f64>, alpha: &[f64], r: usize) {
    let m = alpha.len();
    let piv = alpha[r];
    for c in 0..m {
        binv[(r, c)] /= piv;
    }
    for k in 0..m {
        if k == r || alpha[k] == 0.0 {
            continue;
        }
        let f = alpha[k];
        for c in 0..m {
            let v = binv[(r, c)];
            binv[(k, c)] -= f * v;
        }
    }
}

struct Simplex<'a> {
    prob: &'a LpProblem,
    m: usize,
    p: usize,
    art_sign: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    x: Vec<f64>,
    state: Vec<VarState>,
    basis: Vec<usize>,
    binv: DMatrix<f64>,
    pivots_since_refactor: usize,
    iterations: usize,
}

enum PhaseOutcome {
    Optimal,
    Unbounded,
}

impl<'a> Simplex<'a> {
    fn new(prob: &'a LpProblem) -> Self {
        let (m, p) = prob.eq_matrix.shape();
        let mut lo = prob.lower.clone();
        let mut hi = prob.upper.clone();
        let mut x = vec![0.0; p + m];
        let mut state = vec![VarState::AtLower; p + m];
        for j in 0..p {
            if lo[j].is_finite() {
                x[j] = lo[j];
                state[j] = VarState::AtLower;
            } else if hi[j].is_finite() {
                x[j] = hi[j];
                state[j] = VarState::AtUpper;
            } else {
                x[j] = 0.0;
                state[j] = VarState::FreeZero;
            }
        }
        let mut art_sign = vec![1.0; m];
        let mut binv = DMatrix::zeros(m, m);
        let mut basis = Vec::with_capacity(m);
        for i in 0..m {
            let ax: f64 = (0..p).map(|j| prob.eq_matrix[(i, j)] * x[j]).sum();
            let r = prob.eq_rhs[i] - ax;
            art_sign[i] = if r < 0.0 { -1.0 } else { 1.0 };
            x[p + i] = r.abs();
            state[p + i] = VarState::Basic;
            binv[(i, i)] = art_sign[i];
            basis.push(p + i);
        }
        lo.extend(std::iter::repeat(0.0).take(m));
        hi.extend(std::iter::repeat(f64::INFINITY).take(m));
        Self {
            prob,
            m,
            p,
            art_sign,
            lo,
            hi,
            x,
            state,
            basis,
            binv,
            pivots_since_refactor: 0,
            iterations: 0,
        }
    }

    fn column(&self, j: usize, out: &mut [f64]) {
        if j < self.p {
            for (i, o) in out.iter_mut().enumerate() {
                *o = self.prob.eq_matrix[(i, j)];
            }
        } else {
            out.iter_mut().for_each(|o| *o = 0.0);
            out[j - self.p] = self.art_sign[j - self.p];
        }
    }

    fn col_dot(&self, j: usize, y: &[f64]) -> f64 {
        if j < self.p {
            self.prob.eq_matrix.column(j).iter().zip(y).map(|(a, b)| a * b).sum()
        } else {
            self.art_sign[j - self.p] * y[j - self.p]
        }
    }

    fn ftran(&self, col: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = (0..self.m).map(|c| self.binv[(k, c)] * col[c]).sum();
        }
    }

    fn duals(&self, cost: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|i| (0..self.m).map(|k| cost[self.basis[k]] * self.binv[(k, i)]).sum())
            .collect()
    }

    fn refactor(&mut self) -> Result<()> {
        let mut b = DMatrix::zeros(self.m, self.m);
        let mut col = vec![0.0; self.m];
        for (k, &j) in self.basis.iter().enumerate() {
            self.column(j, &mut col);
            for i in 0..self.m {
                b[(i, k)] = col[i];
            }
        }
        let (inv, cond) = invert_with_condition(&b)
            .ok_or_else(|| Error::NumericalBreakdown("singular basis".into()))?;
        if cond > MAX_CONDITION {
            return Err(Error::NumericalBreakdown(format!(
                "basis condition estimate {cond:e} exceeds {MAX_CONDITION:e}"
            )));
        }
        self.binv = inv;
        self.pivots_since_refactor = 0;
        self.recompute_basic_values();
        Ok(())
    }

    fn recompute_basic_values(&mut self) {
        let mut r = self.prob.eq_rhs.clone();
        let mut col = vec![0.0; self.m];
        for j in 0..self.p + self.m {
            if self.state[j] != VarState::Basic && self.x[j] != 0.0 {
                self.column(j, &mut col);
                for i in 0..self.m {
                    r[i] -= col[i] * self.x[j];
                }
            }
        }
        let mut xb = vec![0.0; self.m];
        self.ftran(&r, &mut xb);
        for (k, &j) in self.basis.iter().enumerate() {
            self.x[j] = xb[k];
        }
    }

    fn run_phase(&mut self, cost: &[f64]) -> Result<PhaseOutcome> {
        let n = self.p + self.m;
        let degenerate_limit = 3 * (self.m + self.p);
        let mut degenerate_run = 0usize;
        let mut alpha = vec![0.0; self.m];
        let mut col = vec![0.0; self.m];
        let iter_cap = 50 * (n + self.m).max(100) * 10;
        loop {
            if self.iterations > iter_cap {
                return Err(Error::NumericalBreakdown("simplex iteration cap exceeded".into()));
            }
            let bland = degenerate_run > degenerate_limit;
            let y = self.duals(cost);
            // pricing
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..n {
                let st = self.state[j];
                if st == VarState::Basic || self.hi[j] == self.lo[j] {
                    continue;
                }
                let d = cost[j] - self.col_dot(j, &y);
                let eligible = match st {
                    VarState::AtLower => d < -OPT_TOL,
                    VarState::AtUpper => d > OPT_TOL,
                    VarState::FreeZero => d.abs() > OPT_TOL,
                    VarState::Basic => false,
                };
                if !eligible {
                    continue;
                }
                if bland {
                    entering = Some((j, d));
                    break;
                }
                match entering {
                    Some((_, best)) if d.abs() <= best.abs() => {}
                    _ => entering = Some((j, d)),
                }
            }
            let Some((q, dq)) = entering else {
                return Ok(PhaseOutcome::Optimal);
            };
            let dir = if dq < 0.0 { 1.0 } else { -1.0 };
            self.column(q, &mut col);
            self.ftran(&col, &mut alpha);

            // ratio test
            let mut t_best = self.hi[q] - self.lo[q];
            let mut leave: Option<usize> = None;
            let mut candidates: Vec<(usize, f64)> = Vec::new();
            for k in 0..self.m {
                let rate = -dir * alpha[k];
                let j = self.basis[k];
                let lim = if rate < -PIVOT_TOL && self.lo[j].is_finite() {
                    ((self.x[j] - self.lo[j]) / -rate).max(0.0)
                } else if rate > PIVOT_TOL && self.hi[j].is_finite() {
                    ((self.hi[j] - self.x[j]) / rate).max(0.0)
                } else {
                    continue;
                };
                candidates.push((k, lim));
            }
            let t_min = candidates.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
            if t_min < t_best {
                let thr = t_min + ZERO_STEP * (1.0 + t_min.abs());
                for &(k, lim) in &candidates {
                    if lim > thr {
                        continue;
                    }
                    leave = match leave {
                        None => Some(k),
                        Some(b) => {
                            let better = if bland {
                                self.basis[k] < self.basis[b]
                            } else {
                                alpha[k].abs() > alpha[b].abs()
                            };
                            if better { Some(k) } else { Some(b) }
                        }
                    };
                }
                t_best = t_min;
            }
            if t_best.is_infinite() {
                return Ok(PhaseOutcome::Unbounded);
            }
            self.iterations += 1;
            if t_best <= ZERO_STEP {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }

            // move
            self.x[q] += dir * t_best;
            for k in 0..self.m {
                let j = self.basis[k];
                self.x[j] -= dir * alpha[k] * t_best;
            }
            match leave {
                None => {
                    // bound flip
                    self.state[q] = if dir > 0.0 { VarState::AtUpper } else { VarState::AtLower };
                    self.x[q] = if dir > 0.0 { self.hi[q] } else { self.lo[q] };
                }
                Some(r) => {
                    let out = self.basis[r];
                    let rate = -dir * alpha[r];
                    if rate < 0.0 {
                        self.x[out] = self.lo[out];
                        self.state[out] = VarState::AtLower;
                    } else {
                        self.x[out] = self.hi[out];
                        self.state[out] = VarState::AtUpper;
                    }
                    self.basis[r] = q;
                    self.state[q] = VarState::Basic;
                    eta_update(&mut self.binv, &alpha, r);
                    self.pivots_since_refactor += 1;
                    if self.pivots_since_refactor >= REFACTOR_EVERY {
                        self.refactor()?;
                    }
                }
            }
        }
    }

    /// Pivot basic artificials out where a structural column can replace them.
    fn drive_out_artificials(&mut self) -> Result<()> {
        let mut col = vec![0.0; self.m];
        let mut alpha = vec![0.0; self.m];
        for r in 0..self.m {
            if self.basis[r] < self.p {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for j in 0..self.p {
                if self.state[j] == VarState::Basic {
                    continue;
                }
                // row r of B⁻¹ A_j
                let v: f64 = (0..self.m).map(|c| self.binv[(r, c)] * self.prob.eq_matrix[(c, j)]).sum();
                if v.abs() > PIVOT_TOL && best.map_or(true, |(_, b)| v.abs() > b.abs()) {
                    best = Some((j, v));
                }
            }
            if let Some((j, _)) = best {
                self.column(j, &mut col);
                self.ftran(&col, &mut alpha);
                let out = self.basis[r];
                self.x[out] = 0.0;
                self.state[out] = VarState::AtLower;
                self.basis[r] = j;
                self.state[j] = VarState::Basic;
                eta_update(&mut self.binv, &alpha, r);
            }
        }
        self.refactor()
    }
}

/// Solves an LP to optimality, infeasibility or unboundedness.
pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution> {
    let (m, p) = problem.eq_matrix.shape();
    let mut sx = Simplex::new(problem);
    let b_norm = problem.eq_rhs.iter().map(|v| v.abs()).fold(0.0, f64::max);

    let mut phase1_cost = vec![0.0; p + m];
    phase1_cost[p..].iter_mut().for_each(|c| *c = 1.0);
    sx.run_phase(&phase1_cost)?;
    sx.recompute_basic_values();
    let infeas: f64 = (p..p + m).map(|j| sx.x[j].max(0.0)).sum();
    if infeas > FEAS_TOL * (1.0 + b_norm) {
        return Ok(LpSolution {
            status: LpStatus::Infeasible,
            objective_value: f64::NAN,
            primal: sx.x[..p].to_vec(),
            dual: vec![0.0; m],
            reduced_costs: vec![0.0; p],
            iterations: sx.iterations,
            basis: sx.basis.clone(),
        });
    }
    for j in p..p + m {
        sx.hi[j] = 0.0;
        if sx.state[j] != VarState::Basic {
            sx.x[j] = 0.0;
            sx.state[j] = VarState::AtLower;
        }
    }
    if m > 0 {
        sx.drive_out_artificials()?;
    }

    let mut cost = problem.objective.clone();
    cost.extend(std::iter::repeat(0.0).take(m));
    let outcome = sx.run_phase(&cost)?;
    if m > 0 {
        sx.refactor()?;
    }
    let dual = sx.duals(&cost);
    let reduced_costs: Vec<f64> = (0..p).map(|j| cost[j] - sx.col_dot(j, &dual)).collect();
    let primal: Vec<f64> = (0..p)
        .map(|j| {
            let v = sx.x[j];
            // snap basics that drifted marginally past a bound
            if v < sx.lo[j] && v > sx.lo[j] - FEAS_TOL {
                sx.lo[j]
            } else if v > sx.hi[j] && v < sx.hi[j] + FEAS_TOL {
                sx.hi[j]
            } else {
                v
            }
        })
        .collect();
    let objective_value = primal.iter().zip(&problem.objective).map(|(a, b)| a * b).sum();
    let status = match outcome {
        PhaseOutcome::Optimal => LpStatus::Optimal,
        PhaseOutcome::Unbounded => LpStatus::Unbounded,
    };
    Ok(LpSolution {
        status,
        objective_value: if status == LpStatus::Optimal { objective_value } else { f64::NEG_INFINITY },
        primal,
        dual,
        reduced_costs,
        iterations: sx.iterations,
        basis: sx.basis,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lp(c: &[f64], a: &[&[f64]], b: &[f64], lo: &[f64], hi: &[f64]) -> LpProblem {
        let m = a.len();
        let p = c.len();
        let mat = DMatrix::from_fn(m, p, |i, j| a[i][j]);
        LpProblem::new(c.to_vec(), mat, b.to_vec(), lo.to_vec(), hi.to_vec()).unwrap()
    }

    #[test]
    fn minimize_v_with_v_at_least_one() {
        // v - s = 1, s >= 0
        let p = lp(&[1.0, 0.0], &[&[1.0, -1.0]], &[1.0], &[f64::NEG_INFINITY, 0.0], &[f64::INFINITY; 2]);
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective_value - 1.0).abs() < 1e-12);
        assert!((s.primal[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn plain_lower_bound_without_rows() {
        let p = lp(&[1.0], &[], &[], &[1.0], &[f64::INFINITY]);
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_eq!(s.primal, vec![1.0]);
    }

    #[test]
    fn fixed_at_zero_but_row_demands_one_is_infeasible() {
        let p = lp(&[0.0], &[&[1.0]], &[1.0], &[0.0], &[0.0]);
        assert_eq!(solve_lp(&p).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn detects_unbounded() {
        // min -v1 s.t. v1 - v2 = 0, v >= 0
        let p = lp(&[-1.0, 0.0], &[&[1.0, -1.0]], &[0.0], &[0.0, 0.0], &[f64::INFINITY; 2]);
        assert_eq!(solve_lp(&p).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn zero_row_with_rhs_rejected() {
        let mat = DMatrix::from_row_slice(1, 1, &[0.0]);
        assert!(LpProblem::new(vec![1.0], mat, vec![1.0], vec![0.0], vec![1.0]).is_err());
    }

    #[test]
    fn redundant_rows_are_handled() {
        // v1 + v2 = 2 twice
        let p = lp(&[1.0, 2.0], &[&[1.0, 1.0], &[1.0, 1.0]], &[2.0, 2.0], &[0.0, 0.0], &[f64::INFINITY; 2]);
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective_value - 2.0).abs() < 1e-10);
    }

    #[test]
    fn free_variables() {
        // min v1 + v2 s.t. v1 - v2 = 3, v1 in [-5, 5], v2 free with v2 >= -1 via v2 + s = ... keep simple
        let p = lp(&[1.0, 0.0], &[&[1.0, -1.0]], &[3.0], &[-5.0, f64::NEG_INFINITY], &[5.0, 10.0]);
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective_value + 5.0).abs() < 1e-10);
        assert!((s.primal[1] + 8.0).abs() < 1e-10);
    }

    #[test]
    fn dump_is_fixed_point() {
        let p = lp(&[1.0], &[&[2.0]], &[3.0], &[0.0], &[f64::INFINITY]);
        let d = p.dump();
        assert!(d.contains("2.000000000000 = 3.000000000000"));
        assert!(d.contains("0.000000000000 inf"));
    }

    #[test]
    fn objective_scaling_keeps_argmin() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let m = 3;
            let p = 6;
            let a = DMatrix::from_fn(m, p, |_, _| rng.gen_range(-1.0..1.0));
            let v0: Vec<f64> = (0..p).map(|_| rng.gen_range(0.0..1.0)).collect();
            let b: Vec<f64> = (0..m).map(|i| (0..p).map(|j| a[(i, j)] * v0[j]).sum()).collect();
            let c: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let base = LpProblem::new(c.clone(), a.clone(), b.clone(), vec![0.0; p], vec![1.0; p]).unwrap();
            let scaled = LpProblem::new(c.iter().map(|v| v * 4.0).collect(), a, b, vec![0.0; p], vec![1.0; p]).unwrap();
            let s1 = solve_lp(&base).unwrap();
            let s2 = solve_lp(&scaled).unwrap();
            assert!((s2.objective_value - 4.0 * s1.objective_value).abs() < 1e-9);
            assert_eq!(s1.basis(), s2.basis());
        }
    }
}
