//! Exact discrete optimal transport by the transportation simplex
//! (spanning-tree basis, row/column potentials, block pricing).

use alloc::vec;
use alloc::vec::Vec;

use crate::lp::LpError;

/// Optimal coupling summary.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub cost: f64,
    /// Basic cells `(row, col, flow)`, zero flows included.
    pub cells: Vec<(usize, usize, f64)>,
    pub pivots: usize,
}

struct Tree {
    rows: usize,
    /// Adjacency over `rows + cols` nodes, each entry an index into `cells`.
    adj: Vec<Vec<usize>>,
    cells: Vec<(usize, usize, f64)>,
}

impl Tree {
    fn other(&self, cell: usize, node: usize) -> usize {
        let (i, j, _) = self.cells[cell];
        if node == i {
            self.rows + j
        } else {
            i
        }
    }

    fn remove(&mut self, cell: usize) {
        let (i, j, _) = self.cells[cell];
        let r = self.rows + j;
        self.adj[i].retain(|&c| c != cell);
        self.adj[r].retain(|&c| c != cell);
    }

    fn add(&mut self, cell: usize) {
        let (i, j, _) = self.cells[cell];
        self.adj[i].push(cell);
        self.adj[self.rows + j].push(cell);
    }

    /// Parent cell, parent node, depth and potential of every node, rooted
    /// at row 0 with `c_ij = pot_i + pot_j` on tree cells.
    fn root<C: Fn(usize, usize) -> f64>(
        &self,
        cost: &C,
        parent_cell: &mut [usize],
        parent: &mut [usize],
        depth: &mut [usize],
        pot: &mut [f64],
        stack: &mut Vec<usize>,
    ) {
        let nodes = self.adj.len();
        parent_cell.iter_mut().for_each(|p| *p = usize::MAX);
        parent[0] = usize::MAX;
        depth[0] = 0;
        pot[0] = 0.0;
        let mut seen = vec![false; nodes];
        seen[0] = true;
        stack.clear();
        stack.push(0);
        while let Some(node) = stack.pop() {
            for &c in &self.adj[node] {
                let next = self.other(c, node);
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = node;
                    parent_cell[next] = c;
                    depth[next] = depth[node] + 1;
                    let (ci, cj, _) = self.cells[c];
                    pot[next] = cost(ci, cj) - pot[node];
                    stack.push(next);
                }
            }
        }
    }
}

/// Minimize `sum c_ij x_ij` with row sums `supply` and column sums
/// `demand` (equal totals). `cost(i, j)` is evaluated on demand.
pub fn transport<C: Fn(usize, usize) -> f64>(supply: &[f64], demand: &[f64], cost: C) -> Result<TransportPlan, LpError> {
    let (n, m) = (supply.len(), demand.len());
    let costs: Vec<f64> = (0..n * m).map(|k| cost(k / m, k % m)).collect();
    let c = |i: usize, j: usize| costs[i * m + j];

    // northwest corner start, exactly n + m - 1 cells
    let mut cells = Vec::with_capacity(n + m - 1);
    let (mut s, mut d) = (supply[0], demand[0]);
    let (mut i, mut j) = (0, 0);
    loop {
        let x = s.min(d).max(0.0);
        cells.push((i, j, x));
        s -= x;
        d -= x;
        if i == n - 1 && j == m - 1 {
            break;
        }
        if i == n - 1 || (j < m - 1 && d <= s) {
            j += 1;
            d = demand[j];
        } else {
            i += 1;
            s = supply[i];
        }
    }

    let nodes = n + m;
    let mut tree = Tree { rows: n, adj: vec![Vec::new(); nodes], cells };
    for k in 0..tree.cells.len() {
        tree.add(k);
    }

    let mut parent_cell = vec![usize::MAX; nodes];
    let mut parent = vec![usize::MAX; nodes];
    let mut depth = vec![0usize; nodes];
    let mut pot = vec![0.0; nodes];
    let mut stack = Vec::new();
    let block = libm::ceil(libm::sqrt((n * m) as f64)).max(32.0) as usize;
    let mut cursor = 0usize;
    let mut pivots = 0usize;
    let max_pivots = 50 * n * m + 10_000;
    let scale = costs.iter().fold(0.0f64, |a, &b| a.max(libm::fabs(b))).max(1.0);
    let tol = 1e-12 * scale;

    loop {
        tree.root(&c, &mut parent_cell, &mut parent, &mut depth, &mut pot, &mut stack);

        // block pricing over the cells, cyclic
        let mut enter = None;
        let mut best = -tol;
        let mut scanned = 0;
        while scanned < n * m {
            let end = (scanned + block).min(n * m);
            for _ in scanned..end {
                let (ci, cj) = (cursor / m, cursor % m);
                let r = c(ci, cj) - pot[ci] - pot[n + cj];
                if r < best {
                    best = r;
                    enter = Some((ci, cj));
                }
                cursor = (cursor + 1) % (n * m);
            }
            scanned = end;
            if enter.is_some() {
                break;
            }
        }
        let Some((ei, ej)) = enter else { break };
        if pivots >= max_pivots {
            return Err(LpError::IterationLimit { pivots });
        }

        // cycle: entering cell, then the tree path from column ej back to row ei
        let (mut a, mut b) = (ei, n + ej);
        let mut up_a = Vec::new();
        let mut up_b = Vec::new();
        while a != b {
            if depth[a] >= depth[b] {
                up_a.push(parent_cell[a]);
                a = parent[a];
            } else {
                up_b.push(parent_cell[b]);
                b = parent[b];
            }
        }
        // path from column node to row node: up_b then reversed up_a
        let path: Vec<usize> = up_b.iter().copied().chain(up_a.iter().rev().copied()).collect();
        // cells alternate -, +, -, ... starting from the column end
        let mut leave = path[0];
        let mut theta = f64::INFINITY;
        for (k, &cell) in path.iter().enumerate() {
            if k % 2 == 0 && tree.cells[cell].2 < theta {
                theta = tree.cells[cell].2;
                leave = cell;
            }
        }
        for (k, &cell) in path.iter().enumerate() {
            let f = &mut tree.cells[cell].2;
            if k % 2 == 0 {
                *f = (*f - theta).max(0.0);
            } else {
                *f += theta;
            }
        }
        tree.remove(leave);
        tree.cells[leave] = (ei, ej, theta);
        tree.add(leave);
        pivots += 1;
    }

    let total = tree.cells.iter().map(|&(i, j, x)| x * c(i, j)).sum();
    Ok(TransportPlan { cost: total, cells: tree.cells, pivots })
}
