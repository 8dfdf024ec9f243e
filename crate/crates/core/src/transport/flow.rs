//! Exact transportation problem for uniform marginals of unequal sizes.
//!
//! Marginals `1/N` and `1/M` are scaled by `N·M` to integer supplies `M` and
//! demands `N`; successive shortest augmenting paths (Dijkstra on reduced
//! costs) then yield an integral, hence exact, optimal flow.

use nalgebra::DMatrix;

/// Returns the optimal integer flow `f_ij` with row sums `M` and column sums `N`.
pub fn solve_transportation(cost: &DMatrix<f64>) -> DMatrix<u64> {
    let (n, m) = cost.shape();
    let mut flow = DMatrix::<u64>::zeros(n, m);
    let mut supply = vec![m as u64; n];
    let mut demand = vec![n as u64; m];
    let supply_total = m as u64;

    // Node layout: sources 0..n, targets n..n+m, super source, super sink.
    let nodes = n + m + 2;
    let src = n + m;
    let sink = n + m + 1;
    let mut potential = vec![0.0f64; nodes];

    let mut remaining: u64 = (n * m) as u64;
    while remaining > 0 {
        let mut dist = vec![f64::INFINITY; nodes];
        let mut parent = vec![usize::MAX; nodes];
        let mut done = vec![false; nodes];
        dist[src] = 0.0;

        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for v in 0..nodes {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX || u == sink {
                break;
            }
            done[u] = true;
            let du = dist[u];
            let relax = |v: usize, reduced: f64, dist: &mut [f64], parent: &mut [usize]| {
                let nd = du + reduced.max(0.0);
                if nd < dist[v] {
                    dist[v] = nd;
                    parent[v] = u;
                }
            };
            if u == src {
                for i in 0..n {
                    if supply[i] > 0 && !done[i] {
                        relax(i, potential[src] - potential[i], &mut dist, &mut parent);
                    }
                }
            } else if u < n {
                let i = u;
                for j in 0..m {
                    if !done[n + j] {
                        relax(n + j, cost[(i, j)] + potential[i] - potential[n + j], &mut dist, &mut parent);
                    }
                }
                if supply[i] < supply_total && !done[src] {
                    relax(src, potential[i] - potential[src], &mut dist, &mut parent);
                }
            } else {
                let j = u - n;
                for i in 0..n {
                    if flow[(i, j)] > 0 && !done[i] {
                        relax(i, -cost[(i, j)] + potential[n + j] - potential[i], &mut dist, &mut parent);
                    }
                }
                if demand[j] > 0 {
                    relax(sink, potential[n + j] - potential[sink], &mut dist, &mut parent);
                }
            }
        }

        let reach = dist[sink];
        assert!(reach.is_finite(), "transportation problem has no augmenting path");
        for v in 0..nodes {
            potential[v] += dist[v].min(reach);
        }

        // Walk the path back from the sink to find the bottleneck.
        let mut path = vec![sink];
        let mut v = sink;
        while v != src {
            v = parent[v];
            path.push(v);
        }
        path.reverse();
        let mut bottleneck = u64::MAX;
        for w in path.windows(2) {
            let (a, b) = (w[0], w[1]);
            let cap = if a == src {
                supply[b]
            } else if b == sink {
                demand[a - n]
            } else if a < n {
                u64::MAX
            } else {
                flow[(b, a - n)]
            };
            bottleneck = bottleneck.min(cap);
        }
        for w in path.windows(2) {
            let (a, b) = (w[0], w[1]);
            if a == src {
                supply[b] -= bottleneck;
            } else if b == sink {
                demand[a - n] -= bottleneck;
            } else if a < n {
                flow[(a, b - n)] += bottleneck;
            } else {
                flow[(b, a - n)] -= bottleneck;
            }
        }
        remaining -= bottleneck;
    }
    flow
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_source_many_targets() {
        let c = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        let f = solve_transportation(&c);
        assert_eq!(f.as_slice(), &[1, 1, 1]);
    }

    #[test]
    fn marginals_are_integral() {
        let c = DMatrix::from_fn(4, 6, |i, j| ((i * 7 + j * 3) % 5) as f64 + 0.1 * j as f64);
        let f = solve_transportation(&c);
        for i in 0..4 {
            assert_eq!(f.row(i).sum(), 6);
        }
        for j in 0..6 {
            assert_eq!(f.column(j).sum(), 4);
        }
    }
}
