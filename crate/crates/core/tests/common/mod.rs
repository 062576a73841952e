//! Brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// All `m`-subsets of `0..p` in lexicographic order.
pub fn combinations(p: usize, m: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, p: usize, m: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == m {
            out.push(cur.clone());
            return;
        }
        for j in start..p {
            cur.push(j);
            rec(j + 1, p, m, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, p, m, &mut Vec::with_capacity(m), &mut out);
    out
}

/// Minimum of `cᵀv` over every basic solution of `A v = b`, `l ≤ v ≤ u`
/// (finite bounds, full row rank `A`). `None` when no basic solution is feasible.
pub fn vertex_enumeration(a: &DMatrix<f64>, b: &[f64], c: &[f64], lo: &[f64], hi: &[f64]) -> Option<f64> {
    let (m, p) = a.shape();
    let mut best: Option<f64> = None;
    for basis in combinations(p, m) {
        let Some(inv) = a.select_columns(&basis).try_inverse() else { continue };
        let non: Vec<usize> = (0..p).filter(|j| !basis.contains(j)).collect();
        for mask in 0u64..(1 << non.len()) {
            let mut v = vec![0.0; p];
            for (t, &j) in non.iter().enumerate() {
                v[j] = if mask >> t & 1 == 1 { hi[j] } else { lo[j] };
            }
            let r = DVector::from_fn(m, |i, _| b[i] - non.iter().map(|&j| a[(i, j)] * v[j]).sum::<f64>());
            let vb = &inv * r;
            let ok = basis.iter().enumerate().all(|(k, &j)| vb[k] >= lo[j] - 1e-9 && vb[k] <= hi[j] + 1e-9);
            if ok {
                for (k, &j) in basis.iter().enumerate() {
                    v[j] = vb[k];
                }
                let obj: f64 = v.iter().zip(c).map(|(x, y)| x * y).sum();
                best = Some(best.map_or(obj, |bv: f64| bv.min(obj)));
            }
        }
    }
    best
}

/// Vertices of `{λ : Wᵀλ ≤ c}`.
pub fn dual_vertices(w: &DMatrix<f64>, c: &[f64]) -> Vec<DVector<f64>> {
    let (m, p) = w.shape();
    let wt = w.transpose();
    combinations(p, m)
        .into_iter()
        .filter_map(|rows| {
            let inv = wt.select_rows(&rows).try_inverse()?;
            let lam = inv * DVector::from_iterator(m, rows.iter().map(|&j| c[j]));
            (0..p).all(|j| wt.row(j).transpose().dot(&lam) <= c[j] + 1e-9).then_some(lam)
        })
        .collect()
}
