//! Empirical probability measures on `R^d` and the Wasserstein-2 distance.
//!
//! `W₂` is computed exactly whenever that is cheap:
//!
//! * `d = 1`: the monotone (quantile) coupling, any weights.
//! * equal-weight measures with the same number of atoms (≤ 64): optimal
//!   assignment via the Hungarian method.
//! * general weights, at most 64 atoms on each side: transportation simplex.
//!
//! Larger multi-dimensional instances fall back to log-domain Sinkhorn with
//! regularization `1e-3 · max cost`; the returned [`W2Estimate`] names the
//! method so callers can tell an approximation from an exact value. The
//! entropic value is biased upward by at most `reg · log(n m)` in `W₂²`.

use crate::error::{ensure_dim, Error, Result};
use crate::linalg;

/// Atom count up to which `W₂` is computed by an exact linear program.
pub const EXACT_SUPPORT_LIMIT: usize = 64;

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Weighted particle cloud `Σ w_i δ_{x_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    /// Builds a measure from flat row-major `points` and `weights`.
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("measure dimension must be positive"));
        }
        if weights.is_empty() || points.len() != dim * weights.len() {
            return Err(Error::invalid(format!(
                "{} coordinates do not form {} points of dimension {dim}",
                points.len(),
                weights.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("measure support must be finite"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("measure weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!("measure weights sum to {total}, not 1")));
        }
        Ok(Self { dim, points, weights })
    }

    /// Equal-weight measure on the given points.
    pub fn uniform(dim: usize, points: Vec<f64>) -> Result<Self> {
        let n = points.len().checked_div(dim).unwrap_or(0);
        if n == 0 {
            return Err(Error::invalid("uniform measure needs at least one point"));
        }
        Self::new(dim, points, vec![1.0 / n as f64; n])
    }

    /// The Dirac mass `δ_x`.
    pub fn dirac(x: &[f64]) -> Result<Self> {
        Self::new(x.len(), x.to_vec(), vec![1.0])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_dirac(&self) -> bool {
        self.len() == 1
    }

    fn is_uniform(&self) -> bool {
        let w = 1.0 / self.len() as f64;
        self.weights.iter().all(|v| (v - w).abs() <= 1e-15)
    }

    /// `‖μ‖₂² = Σ w_i |x_i|²`.
    pub fn second_moment(&self) -> f64 {
        (0..self.len()).map(|i| self.weights[i] * linalg::norm_sq(self.point(i))).sum()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for i in 0..self.len() {
            for (mc, xc) in m.iter_mut().zip(self.point(i)) {
                *mc += self.weights[i] * xc;
            }
        }
        m
    }

    /// Push-forward under `x ↦ s·x`.
    pub fn dilate(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            points: self.points.iter().map(|v| s * v).collect(),
            weights: self.weights.clone(),
        }
    }
}

/// How a `W₂` value was obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum W2Method {
    Exact1d,
    Assignment,
    TransportSimplex,
    Sinkhorn { regularization: f64 },
}

impl W2Method {
    pub fn is_exact(&self) -> bool {
        !matches!(self, W2Method::Sinkhorn { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct W2Estimate {
    pub value: f64,
    pub method: W2Method,
}

/// `𝕎₂(μ, ν)`.
pub fn w2(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    w2_detailed(mu, nu).map(|e| e.value)
}

pub fn w2_detailed(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<W2Estimate> {
    ensure_dim(mu.dim, nu.dim)?;
    if mu.is_dirac() {
        return Ok(W2Estimate { value: w2_to_dirac(nu, mu.point(0)), method: W2Method::Assignment });
    }
    if nu.is_dirac() {
        return Ok(W2Estimate { value: w2_to_dirac(mu, nu.point(0)), method: W2Method::Assignment });
    }
    if mu.dim == 1 {
        return Ok(W2Estimate { value: w2_sq_1d(mu, nu).max(0.0).sqrt(), method: W2Method::Exact1d });
    }
    let cost = cost_matrix(mu, nu);
    let (n, m) = (mu.len(), nu.len());
    if n == m && n <= EXACT_SUPPORT_LIMIT && mu.is_uniform() && nu.is_uniform() {
        let assign = hungarian(&cost, n, m);
        let total: f64 = assign.iter().enumerate().map(|(i, &j)| cost[i * m + j]).sum();
        return Ok(W2Estimate {
            value: (total / n as f64).max(0.0).sqrt(),
            method: W2Method::Assignment,
        });
    }
    if n <= EXACT_SUPPORT_LIMIT && m <= EXACT_SUPPORT_LIMIT {
        let v = transport_simplex(&cost, &mu.weights, &nu.weights);
        return Ok(W2Estimate { value: v.max(0.0).sqrt(), method: W2Method::TransportSimplex });
    }
    let cmax = cost.iter().cloned().fold(0.0, f64::max);
    let reg = 1e-3 * cmax.max(f64::MIN_POSITIVE);
    let v = sinkhorn(&cost, &mu.weights, &nu.weights, reg);
    Ok(W2Estimate { value: v.max(0.0).sqrt(), method: W2Method::Sinkhorn { regularization: reg } })
}

/// `‖μ‖₂`-style distance to a Dirac: `√(Σ w_i |x_i - x|²)`.
pub fn w2_to_dirac(mu: &EmpiricalMeasure, x: &[f64]) -> f64 {
    (0..mu.len())
        .map(|i| mu.weights[i] * linalg::dist_sq(mu.point(i), x))
        .sum::<f64>()
        .sqrt()
}

pub fn second_moment(mu: &EmpiricalMeasure) -> f64 {
    mu.second_moment()
}

fn cost_matrix(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Vec<f64> {
    let (n, m) = (mu.len(), nu.len());
    let mut c = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            c[i * m + j] = linalg::dist_sq(mu.point(i), nu.point(j));
        }
    }
    c
}

/// Squared `W₂` on the line via the monotone rearrangement.
fn w2_sq_1d(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> f64 {
    let sorted = |m: &EmpiricalMeasure| {
        let mut v: Vec<(f64, f64)> = m.points.iter().cloned().zip(m.weights.iter().cloned()).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    };
    let (a, b) = (sorted(mu), sorted(nu));
    // Walk the merged breakpoints of the two CDFs.
    let (mut i, mut j) = (0, 0);
    let (mut ca, mut cb) = (a[0].1, b[0].1);
    let mut prev = 0.0;
    let mut total = 0.0;
    loop {
        let next = ca.min(cb);
        total += (next - prev).max(0.0) * (a[i].0 - b[j].0).powi(2);
        prev = next;
        if ca <= cb {
            i += 1;
            if i == a.len() {
                break;
            }
            ca += a[i].1;
        } else {
            j += 1;
            if j == b.len() {
                break;
            }
            cb += b[j].1;
        }
    }
    total
}

/// Min-cost perfect assignment for a row-major `n x m` cost, `n <= m`.
/// Returns the column assigned to each row.
pub(crate) fn hungarian(cost: &[f64], n: usize, m: usize) -> Vec<usize> {
    debug_assert!(n <= m);
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

/// Optimal transport cost `min Σ π_ij c_ij` by the transportation simplex
/// (MODI potentials on a spanning-tree basis). Degenerate stalls switch the
/// entering rule from Dantzig to Bland, which cannot cycle.
pub(crate) fn transport_simplex(cost: &[f64], supply: &[f64], demand: &[f64]) -> f64 {
    let (n, m) = (supply.len(), demand.len());
    let mut flow = vec![0.0; n * m];
    let mut basic = vec![false; n * m];

    // North-west corner: a staircase of exactly n + m - 1 cells.
    {
        let (mut i, mut j) = (0, 0);
        let mut ra = supply.to_vec();
        let mut rb = demand.to_vec();
        loop {
            let q = ra[i].min(rb[j]).max(0.0);
            flow[i * m + j] = q;
            basic[i * m + j] = true;
            ra[i] -= q;
            rb[j] -= q;
            if i == n - 1 && j == m - 1 {
                break;
            }
            if j == m - 1 || (i < n - 1 && ra[i] <= rb[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
    }

    let scale = cost.iter().cloned().fold(0.0, f64::max).max(1e-300);
    let tol = 1e-12 * scale;
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; m];
    let mut degenerate_run = 0usize;
    let max_iter = 50 * (n + m) * (n + m) + 1000;

    for _ in 0..max_iter {
        // Potentials: u_i + v_j = c_ij on basic cells, u_0 = 0.
        let (adj_r, adj_c) = adjacency(&basic, n, m);
        let mut seen_r = vec![false; n];
        let mut seen_c = vec![false; m];
        let mut stack = vec![(true, 0usize)];
        seen_r[0] = true;
        u[0] = 0.0;
        while let Some((is_row, k)) = stack.pop() {
            if is_row {
                for &j in &adj_r[k] {
                    if !seen_c[j] {
                        seen_c[j] = true;
                        v[j] = cost[k * m + j] - u[k];
                        stack.push((false, j));
                    }
                }
            } else {
                for &i in &adj_c[k] {
                    if !seen_r[i] {
                        seen_r[i] = true;
                        u[i] = cost[i * m + k] - v[k];
                        stack.push((true, i));
                    }
                }
            }
        }

        let bland = degenerate_run > 2 * (n + m);
        let mut entering: Option<(usize, usize)> = None;
        let mut best = -tol;
        'scan: for i in 0..n {
            for j in 0..m {
                if basic[i * m + j] {
                    continue;
                }
                let r = cost[i * m + j] - u[i] - v[j];
                if r < best {
                    entering = Some((i, j));
                    if bland {
                        break 'scan;
                    }
                    best = r;
                }
            }
        }
        let Some((ei, ej)) = entering else { break };

        // Tree path from column ej back to row ei; alternating signs start
        // with "-" on the edge leaving column ej.
        let path = tree_path(&adj_r, &adj_c, n, m, ei, ej);
        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for (pos, &cell) in path.iter().enumerate() {
            if pos % 2 == 0 {
                let f = flow[cell];
                if f < theta || (f == theta && cell < leave) {
                    theta = f;
                    leave = cell;
                }
            }
        }
        for (pos, &cell) in path.iter().enumerate() {
            if pos % 2 == 0 {
                flow[cell] = (flow[cell] - theta).max(0.0);
            } else {
                flow[cell] += theta;
            }
        }
        flow[ei * m + ej] = theta;
        basic[ei * m + ej] = true;
        basic[leave] = false;
        flow[leave] = 0.0;
        if theta <= 0.0 {
            degenerate_run += 1;
        } else {
            degenerate_run = 0;
        }
    }

    flow.iter().zip(cost).map(|(f, c)| f * c).sum()
}

fn adjacency(basic: &[bool], n: usize, m: usize) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let mut adj_r = vec![Vec::new(); n];
    let mut adj_c = vec![Vec::new(); m];
    for i in 0..n {
        for j in 0..m {
            if basic[i * m + j] {
                adj_r[i].push(j);
                adj_c[j].push(i);
            }
        }
    }
    (adj_r, adj_c)
}

/// Cells on the unique basis-tree path from column `to_col` to row `from_row`.
fn tree_path(
    adj_r: &[Vec<usize>],
    adj_c: &[Vec<usize>],
    n: usize,
    m: usize,
    from_row: usize,
    to_col: usize,
) -> Vec<usize> {
    // Nodes: rows 0..n, columns n..n+m. BFS from the column.
    let total = n + m;
    let mut parent = vec![usize::MAX; total];
    let start = n + to_col;
    parent[start] = start;
    let mut queue = std::collections::VecDeque::from([start]);
    while let Some(node) = queue.pop_front() {
        if node == from_row {
            break;
        }
        let neighbors: Box<dyn Iterator<Item = usize>> = if node < n {
            Box::new(adj_r[node].iter().map(|&j| n + j))
        } else {
            Box::new(adj_c[node - n].iter().copied())
        };
        for nb in neighbors {
            if parent[nb] == usize::MAX {
                parent[nb] = node;
                queue.push_back(nb);
            }
        }
    }
    // Walk back from the row to the column, then reverse.
    let mut cells = Vec::new();
    let mut node = from_row;
    while node != start {
        let prev = parent[node];
        let (r, c) = if node < n { (node, prev - n) } else { (prev, node - n) };
        cells.push(r * m + c);
        node = prev;
    }
    cells.reverse();
    cells
}

fn log_sum_exp(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let mx = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return mx;
    }
    mx + vals.map(|v| (v - mx).exp()).sum::<f64>().ln()
}

/// Entropic transport cost `Σ π_ij c_ij` for the Sinkhorn plan.
fn sinkhorn(cost: &[f64], a: &[f64], b: &[f64], reg: f64) -> f64 {
    let (n, m) = (a.len(), b.len());
    let la: Vec<f64> = a.iter().map(|w| w.ln()).collect();
    let lb: Vec<f64> = b.iter().map(|w| w.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    for _ in 0..500 {
        for i in 0..n {
            f[i] = -reg * log_sum_exp((0..m).map(|j| (g[j] - cost[i * m + j]) / reg + lb[j]));
        }
        let mut err = 0.0f64;
        for j in 0..m {
            let new = -reg * log_sum_exp((0..n).map(|i| (f[i] - cost[i * m + j]) / reg + la[i]));
            err = err.max((new - g[j]).abs());
            g[j] = new;
        }
        if err < 1e-9 * reg.max(1.0) {
            break;
        }
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..m {
            let c = cost[i * m + j];
            total += (la[i] + lb[j] + (f[i] + g[j] - c) / reg).exp() * c;
        }
    }
    total
}
