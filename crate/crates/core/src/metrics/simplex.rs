//! Primal network simplex for balanced transportation problems.
//!
//! Arcs run from every source to every sink with unbounded capacity, so a
//! non-tree arc always sits at zero flow and only tree arcs need storage.
//! Costs are evaluated on demand, which keeps memory linear in the number of
//! nodes. Leaving arcs follow the strongly feasible tree rule, so degenerate
//! pivots cannot cycle.

const STATE_UP: i8 = 1;
const STATE_DOWN: i8 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TreeArc {
    /// Initial artificial arc between a node and the root.
    Artificial,
    /// Real arc from source `i` to sink `j`.
    Real(u32, u32),
}

/// Solution of a transportation problem.
#[derive(Debug, Clone)]
pub struct TransportSolution {
    pub cost: f64,
    /// Nonzero entries of the optimal plan as `(source, sink, mass)`.
    pub plan: Vec<(usize, usize, f64)>,
    pub pivots: usize,
}

/// Minimizes `sum c(i, j) x_ij` subject to row sums `supply` and column sums
/// `demand`. Both sides must carry the same total (up to rounding; the
/// largest demand absorbs the difference). Costs must be nonnegative.
pub fn solve_transport<C>(supply: &[f64], demand: &[f64], cost: C) -> TransportSolution
where
    C: Fn(usize, usize) -> f64,
{
    let n1 = supply.len();
    let n2 = demand.len();
    assert!(n1 > 0 && n2 > 0, "empty transportation problem");
    let n = n1 + n2;
    let root = n;

    let mut b = Vec::with_capacity(n);
    b.extend_from_slice(supply);
    b.extend(demand.iter().map(|&d| -d));
    let imbalance: f64 = b.iter().sum();
    if imbalance != 0.0 {
        let (k, _) = demand
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (k, &d)| if d > acc.1 { (k, d) } else { acc });
        b[n1 + k] -= imbalance;
    }

    let table: Vec<f64> = (0..n1 * n2).map(|e| cost(e / n2, e % n2)).collect();
    let cost = |i: usize, j: usize| table[i * n2 + j];
    let max_cost = table.iter().copied().fold(0.0f64, f64::max);
    let art_cost = (max_cost + 1.0) * (n as f64 + 1.0) * 4.0;

    // tree arrays indexed by node; the root has no pred arc
    let mut parent = vec![root; n + 1];
    let mut pred = vec![TreeArc::Artificial; n + 1];
    let mut dir = vec![STATE_UP; n + 1];
    let mut flow = vec![0.0f64; n + 1];
    let mut pi = vec![0.0f64; n + 1];
    let mut depth = vec![1u32; n + 1];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    for u in 0..n {
        if b[u] >= 0.0 {
            dir[u] = STATE_UP;
            flow[u] = b[u];
            pi[u] = 0.0;
        } else {
            dir[u] = STATE_DOWN;
            flow[u] = -b[u];
            pi[u] = art_cost;
        }
    }
    parent[root] = usize::MAX;
    depth[root] = 0;
    children[root] = (0..n).collect();

    let total_arcs = n1 * n2;
    let block = ((total_arcs as f64).sqrt().ceil() as usize).max(10).min(total_arcs);
    let tol = 1e-12 * (max_cost + 1.0);

    let mut next_arc = 0usize;
    let mut pivots = 0usize;
    let mut subtree = Vec::new();
    let mut stack = Vec::new();

    loop {
        // block search pricing
        let mut best = None;
        let mut best_rc = -tol;
        let mut scanned = 0usize;
        let mut in_block = 0usize;
        while scanned < total_arcs {
            let e = next_arc;
            next_arc += 1;
            if next_arc == total_arcs {
                next_arc = 0;
            }
            let (i, j) = (e / n2, e % n2);
            let rc = table[e] + pi[i] - pi[n1 + j];
            if rc < best_rc {
                best_rc = rc;
                best = Some((i, j));
            }
            scanned += 1;
            in_block += 1;
            if in_block == block {
                if best.is_some() {
                    break;
                }
                in_block = 0;
            }
        }
        let Some((ei, ej)) = best else { break };
        pivots += 1;

        let first = ei;
        let second = n1 + ej;

        // join node: lowest common ancestor
        let (mut a, mut c) = (first, second);
        while a != c {
            if depth[a] >= depth[c] {
                a = parent[a];
            } else {
                c = parent[c];
            }
        }
        let join = a;

        // leaving arc (strongly feasible rule: strict on the first side)
        let mut delta = f64::INFINITY;
        let mut u_out = usize::MAX;
        let mut result = 0;
        let mut u = first;
        while u != join {
            if dir[u] == STATE_UP && flow[u] < delta {
                delta = flow[u];
                u_out = u;
                result = 1;
            }
            u = parent[u];
        }
        let mut u = second;
        while u != join {
            if dir[u] == STATE_DOWN && flow[u] <= delta {
                delta = flow[u];
                u_out = u;
                result = 2;
            }
            u = parent[u];
        }
        assert!(result != 0, "unbounded transportation problem");

        // push delta around the cycle
        if delta > 0.0 {
            let mut u = first;
            while u != join {
                flow[u] -= dir[u] as f64 * delta;
                u = parent[u];
            }
            let mut u = second;
            while u != join {
                flow[u] += dir[u] as f64 * delta;
                u = parent[u];
            }
        }

        // the subtree below u_out gets re-hung from the entering arc
        let (u_in, v_in) = if result == 1 { (first, second) } else { (second, first) };

        // potentials: the entering arc must end up with zero reduced cost
        let sigma = if u_in == first { -best_rc } else { best_rc };
        subtree.clear();
        stack.push(u_out);
        while let Some(w) = stack.pop() {
            subtree.push(w);
            stack.extend_from_slice(&children[w]);
        }
        for &w in &subtree {
            pi[w] += sigma;
        }

        // reverse the path u_in -> ... -> u_out
        let mut prev_node = v_in;
        let mut prev_arc = TreeArc::Real(ei as u32, ej as u32);
        let mut prev_dir = if u_in == first { STATE_UP } else { STATE_DOWN };
        let mut prev_flow = delta;
        let mut u = u_in;
        loop {
            let old_parent = parent[u];
            let old_arc = pred[u];
            let old_dir = dir[u];
            let old_flow = flow[u];
            let siblings = &mut children[old_parent];
            let at = siblings.iter().position(|&x| x == u).unwrap();
            siblings.swap_remove(at);
            children[prev_node].push(u);
            parent[u] = prev_node;
            pred[u] = prev_arc;
            dir[u] = prev_dir;
            flow[u] = prev_flow;
            if u == u_out {
                break;
            }
            prev_node = u;
            prev_arc = old_arc;
            prev_dir = -old_dir;
            prev_flow = old_flow;
            u = old_parent;
        }

        // depths below the entering arc
        stack.push(u_in);
        while let Some(w) = stack.pop() {
            depth[w] = depth[parent[w]] + 1;
            stack.extend_from_slice(&children[w]);
        }
    }

    let mut total = 0.0;
    let mut plan = Vec::new();
    for u in 0..n {
        if let TreeArc::Real(i, j) = pred[u] {
            let (i, j) = (i as usize, j as usize);
            if flow[u] > 0.0 {
                total += flow[u] * cost(i, j);
                plan.push((i, j, flow[u]));
            }
        }
    }
    plan.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    TransportSolution {
        cost: total,
        plan,
        pivots,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_arc() {
        let sol = solve_transport(&[1.0], &[1.0], |_, _| 2.5);
        assert!((sol.cost - 2.5).abs() < 1e-15);
    }

    #[test]
    fn two_by_two_prefers_diagonal() {
        let c = [[1.0, 4.0], [4.0, 1.0]];
        let sol = solve_transport(&[0.5, 0.5], &[0.5, 0.5], |i, j| c[i][j]);
        assert!((sol.cost - 1.0).abs() < 1e-14);
    }

    #[test]
    fn split_supply() {
        // one source feeding two sinks
        let sol = solve_transport(&[1.0], &[0.25, 0.75], |_, j| [2.0, 3.0][j]);
        assert!((sol.cost - (0.5 + 2.25)).abs() < 1e-14);
        let shipped: f64 = sol.plan.iter().map(|p| p.2).sum();
        assert!((shipped - 1.0).abs() < 1e-15);
    }
}
