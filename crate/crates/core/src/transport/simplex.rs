//! Network simplex for the balanced transportation problem.
//!
//! The basis is a spanning tree of the complete bipartite graph (rows then
//! columns, `n + m - 1` cells). Entering cell: most negative reduced cost, ties
//! to the lowest index; after a run of degenerate pivots the rule falls back to
//! lowest-index entering and leaving, which cannot cycle.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct TransportSolution {
    /// Row-major `n x m` plan.
    pub flow: Vec<f64>,
    /// Row potentials.
    pub u: Vec<f64>,
    /// Column potentials, `u_i + v_j <= c_ij` up to the optimality tolerance.
    pub v: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

/// Solves `min <c, M>` over plans with row sums `a` and column sums `b`.
pub fn network_simplex(a: &[f64], b: &[f64], cost: &[f64]) -> Result<TransportSolution> {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 || cost.len() != n * m {
        return Err(Error::Invariant("transport problem shape".into()));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Domain("non-finite cost".into()));
    }
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if (sa - sb).abs() > 1e-9 * sa.max(sb).max(1.0) {
        return Err(Error::Invariant(format!("unbalanced masses {sa} vs {sb}")));
    }
    let cmax = cost.iter().fold(0.0_f64, |acc, c| acc.max(c.abs()));
    let tol = 1e-12 * (1.0 + cmax);

    let mut flow = vec![0.0; n * m];
    let mut basic = vec![false; n * m];
    let mut basis: Vec<usize> = Vec::with_capacity(n + m - 1);

    // North-west corner start; always yields a spanning tree.
    {
        let mut ra = a.to_vec();
        let mut rb = b.to_vec();
        let (mut i, mut j) = (0, 0);
        loop {
            let x = ra[i].min(rb[j]).max(0.0);
            let cell = i * m + j;
            flow[cell] = x;
            basic[cell] = true;
            basis.push(cell);
            ra[i] -= x;
            rb[j] -= x;
            if i == n - 1 && j == m - 1 {
                break;
            }
            if i == n - 1 {
                j += 1;
            } else if j == m - 1 || ra[i] <= rb[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
    }

    let nodes = n + m;
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; m];
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nodes];
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; nodes];
    let mut queue: Vec<usize> = Vec::with_capacity(nodes);
    let mut degenerate_run = 0usize;
    let max_iter = 1000 + 50 * nodes * nodes;

    for iter in 0..max_iter {
        for l in adj.iter_mut() {
            l.clear();
        }
        for &cell in &basis {
            let (i, j) = (cell / m, cell % m);
            adj[i].push((n + j, cell));
            adj[n + j].push((i, cell));
        }
        // Potentials from row 0 with u_0 = 0.
        let mut seen = vec![false; nodes];
        seen[0] = true;
        u[0] = 0.0;
        queue.clear();
        queue.push(0);
        let mut head = 0;
        while head < queue.len() {
            let x = queue[head];
            head += 1;
            for &(y, cell) in &adj[x] {
                if seen[y] {
                    continue;
                }
                seen[y] = true;
                if y >= n {
                    v[y - n] = cost[cell] - u[x];
                } else {
                    u[y] = cost[cell] - v[x - n];
                }
                queue.push(y);
            }
        }
        if queue.len() != nodes {
            return Err(Error::Invariant(
                "transport basis is not a spanning tree".into(),
            ));
        }

        let bland = degenerate_run > 50;
        let mut enter = None;
        let mut best = -tol;
        'scan: for i in 0..n {
            for j in 0..m {
                let cell = i * m + j;
                if basic[cell] {
                    continue;
                }
                let r = cost[cell] - u[i] - v[j];
                if r < best {
                    enter = Some(cell);
                    if bland {
                        break 'scan;
                    }
                    best = r;
                }
            }
        }
        let Some(enter) = enter else {
            let value = flow.iter().zip(cost).map(|(x, c)| x * c).sum();
            return Ok(TransportSolution {
                flow,
                u,
                v,
                value,
                iterations: iter,
            });
        };

        // Tree path from row i to column j closes the cycle with the entering cell.
        let (ei, ej) = (enter / m, enter % m);
        for p in parent.iter_mut() {
            *p = None;
        }
        let mut seen = vec![false; nodes];
        seen[ei] = true;
        queue.clear();
        queue.push(ei);
        let mut head = 0;
        while head < queue.len() {
            let x = queue[head];
            head += 1;
            if x == n + ej {
                break;
            }
            for &(y, cell) in &adj[x] {
                if !seen[y] {
                    seen[y] = true;
                    parent[y] = Some((x, cell));
                    queue.push(y);
                }
            }
        }
        let mut path = Vec::new();
        let mut x = n + ej;
        while x != ei {
            let (px, cell) = parent[x].expect("tree path");
            path.push(cell);
            x = px;
        }
        path.reverse();
        // path[0] touches row ei and gets a minus sign; signs alternate.
        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for (k, &cell) in path.iter().enumerate() {
            if k % 2 == 0 && (flow[cell] < theta || (flow[cell] == theta && cell < leave)) {
                theta = flow[cell];
                leave = cell;
            }
        }
        for (k, &cell) in path.iter().enumerate() {
            if k % 2 == 0 {
                flow[cell] -= theta;
            } else {
                flow[cell] += theta;
            }
        }
        flow[enter] = theta;
        flow[leave] = 0.0;
        basic[leave] = false;
        basic[enter] = true;
        let pos = basis
            .iter()
            .position(|&c| c == leave)
            .expect("leaving cell in basis");
        basis[pos] = enter;
        degenerate_run = if theta <= 0.0 { degenerate_run + 1 } else { 0 };
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        detail: "network simplex iteration limit".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        let s = network_simplex(&[0.5, 0.5], &[0.5, 0.5], &[0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!(s.value.abs() < 1e-15);
        assert_eq!(s.flow, vec![0.5, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn degenerate_start_is_handled() {
        // Equal masses make the north-west corner degenerate at every step.
        let a = [0.25; 4];
        let c: Vec<f64> = (0..16)
            .map(|k| (((k / 4) as f64) - ((3 - k % 4) as f64)).abs())
            .collect();
        let s = network_simplex(&a, &a, &c).unwrap();
        assert!(s.value.abs() < 1e-12, "{}", s.value);
    }

    #[test]
    fn potentials_are_dual_feasible() {
        let a = [0.2, 0.3, 0.5];
        let b = [0.6, 0.1, 0.1, 0.2];
        let c: Vec<f64> = (0..12)
            .map(|k| ((k * 7 % 5) as f64) + 0.3 * (k % 3) as f64)
            .collect();
        let s = network_simplex(&a, &b, &c).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                assert!(s.u[i] + s.v[j] <= c[i * 4 + j] + 1e-12);
            }
        }
        let dual: f64 = a.iter().zip(&s.u).map(|(x, y)| x * y).sum::<f64>()
            + b.iter().zip(&s.v).map(|(x, y)| x * y).sum::<f64>();
        assert!((dual - s.value).abs() < 1e-12);
    }
}
