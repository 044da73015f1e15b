//! Transportation simplex (MODI method) for dense cost matrices.

use crate::linalg::compensated_sum;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct Solution {
    /// Basic cells `(i, j, flow)`; `m + n - 1` of them, some possibly zero.
    pub basis: Vec<(usize, usize, f64)>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub cost: f64,
    pub dual: f64,
    /// `max(0, -min_ij (c_ij - u_i - v_j))`.
    pub dual_infeasibility: f64,
    pub iterations: usize,
}

/// Initial basis by the least-cost rule: cells in increasing cost order,
/// each allocation retires exactly one line so the basis is a spanning tree.
fn least_cost_start(cost: &[f64], a: &[f64], b: &[f64]) -> Vec<(usize, usize, f64)> {
    let (m, n) = (a.len(), b.len());
    let mut order: Vec<usize> = (0..m * n).collect();
    order.sort_by(|&p, &q| cost[p].total_cmp(&cost[q]).then(p.cmp(&q)));
    let (mut ra, mut rb) = (a.to_vec(), b.to_vec());
    let (mut row_on, mut col_on) = (vec![true; m], vec![true; n]);
    let (mut rows_left, mut cols_left) = (m, n);
    let mut basis = Vec::with_capacity(m + n - 1);
    for p in order {
        let (i, j) = (p / n, p % n);
        if !row_on[i] || !col_on[j] {
            continue;
        }
        let x = ra[i].min(rb[j]).max(0.0);
        basis.push((i, j, x));
        if rows_left + cols_left == 2 {
            break;
        }
        // Retire the exhausted line; on ties keep the last row or column.
        let retire_row = if cols_left == 1 {
            true
        } else if rows_left == 1 {
            false
        } else {
            ra[i] <= rb[j]
        };
        if retire_row {
            row_on[i] = false;
            rows_left -= 1;
            rb[j] -= x;
            ra[i] = 0.0;
        } else {
            col_on[j] = false;
            cols_left -= 1;
            ra[i] -= x;
            rb[j] = 0.0;
        }
    }
    basis
}

/// Tree bookkeeping: node `i < m` is row `i`, node `m + j` is column `j`.
struct Tree {
    parent: Vec<usize>,
    parent_edge: Vec<usize>,
    depth: Vec<usize>,
}

fn potentials(
    cost: &[f64],
    m: usize,
    n: usize,
    basis: &[(usize, usize, f64)],
    u: &mut [f64],
    v: &mut [f64],
) -> Result<Tree> {
    let nodes = m + n;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    for (e, &(i, j, _)) in basis.iter().enumerate() {
        adj[i].push(e);
        adj[m + j].push(e);
    }
    let mut tree = Tree {
        parent: vec![usize::MAX; nodes],
        parent_edge: vec![usize::MAX; nodes],
        depth: vec![0; nodes],
    };
    let mut seen = vec![false; nodes];
    let mut stack = vec![0usize];
    seen[0] = true;
    u[0] = 0.0;
    let mut visited = 1;
    while let Some(node) = stack.pop() {
        for &e in &adj[node] {
            let (i, j, _) = basis[e];
            let other = if node < m { m + j } else { i };
            if seen[other] {
                continue;
            }
            seen[other] = true;
            visited += 1;
            let c = cost[i * n + j];
            if other >= m {
                v[j] = c - u[i];
            } else {
                u[i] = c - v[j];
            }
            tree.parent[other] = node;
            tree.parent_edge[other] = e;
            tree.depth[other] = tree.depth[node] + 1;
            stack.push(other);
        }
    }
    if visited != nodes {
        return Err(Error::Solver(
            "transport basis is not a spanning tree".into(),
        ));
    }
    Ok(tree)
}

/// Solve `min Σ c_ij x_ij` subject to row sums `a`, column sums `b`,
/// `x ≥ 0`. The sums of `a` and `b` must agree.
pub fn solve(cost: &[f64], a: &[f64], b: &[f64]) -> Result<Solution> {
    let (m, n) = (a.len(), b.len());
    if m == 0 || n == 0 || cost.len() != m * n {
        return Err(Error::InvalidParameter(
            "empty or mis-sized transport problem".into(),
        ));
    }
    let scale = cost.iter().fold(0.0f64, |s, c| s.max(c.abs())).max(1e-300);
    let tol = 1e-13 * scale;
    let mut basis = least_cost_start(cost, a, b);
    let (mut u, mut v) = (vec![0.0; m], vec![0.0; n]);
    let max_iter = 50 * (m + n) * (m + n).max(20);
    let mut iterations = 0;
    loop {
        let tree = potentials(cost, m, n, &basis, &mut u, &mut v)?;
        // Dantzig pricing.
        let mut best = (-tol, usize::MAX);
        for i in 0..m {
            let row = &cost[i * n..(i + 1) * n];
            for j in 0..n {
                let r = row[j] - u[i] - v[j];
                if r < best.0 {
                    best = (r, i * n + j);
                }
            }
        }
        if best.1 == usize::MAX {
            break;
        }
        iterations += 1;
        if iterations > max_iter {
            return Err(Error::Solver(format!(
                "transport simplex did not converge in {max_iter} pivots"
            )));
        }
        let (ei, ej) = (best.1 / n, best.1 % n);
        // Tree path from column ej up and row ei up to their common ancestor.
        let (mut a_node, mut b_node) = (ei, m + ej);
        let (mut from_row, mut from_col) = (Vec::new(), Vec::new());
        while tree.depth[a_node] > tree.depth[b_node] {
            from_row.push(tree.parent_edge[a_node]);
            a_node = tree.parent[a_node];
        }
        while tree.depth[b_node] > tree.depth[a_node] {
            from_col.push(tree.parent_edge[b_node]);
            b_node = tree.parent[b_node];
        }
        while a_node != b_node {
            from_row.push(tree.parent_edge[a_node]);
            a_node = tree.parent[a_node];
            from_col.push(tree.parent_edge[b_node]);
            b_node = tree.parent[b_node];
        }
        // Cycle from the entering cell: column side first, alternating -, +.
        let cycle: Vec<usize> = from_col
            .iter()
            .copied()
            .chain(from_row.iter().rev().copied())
            .collect();
        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for (k, &e) in cycle.iter().enumerate() {
            if k % 2 == 0 && (basis[e].2 < theta || (basis[e].2 == theta && e < leave)) {
                theta = basis[e].2;
                leave = e;
            }
        }
        for (k, &e) in cycle.iter().enumerate() {
            if k % 2 == 0 {
                basis[e].2 -= theta;
            } else {
                basis[e].2 += theta;
            }
        }
        basis[leave] = (ei, ej, theta);
    }
    for cell in &mut basis {
        cell.2 = cell.2.max(0.0);
    }
    let cost_total = compensated_sum(basis.iter().map(|&(i, j, x)| x * cost[i * n + j]));
    let dual = compensated_sum(
        a.iter()
            .zip(&u)
            .map(|(p, q)| p * q)
            .chain(b.iter().zip(&v).map(|(p, q)| p * q)),
    );
    let mut worst = 0.0f64;
    for i in 0..m {
        for j in 0..n {
            worst = worst.max(u[i] + v[j] - cost[i * n + j]);
        }
    }
    Ok(Solution {
        basis,
        u,
        v,
        cost: cost_total,
        dual,
        dual_infeasibility: worst,
        iterations,
    })
}
