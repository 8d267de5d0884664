//! Fill-reducing ordering for sparse symmetric factorization.
//!
//! Plain minimum degree on the explicit elimination graph. Nodes whose
//! initial degree exceeds a density threshold are removed up front and
//! ordered last, which keeps the graph updates cheap for arrowhead-like
//! patterns (many local variables coupled to a few global ones).

/// Returns `perm` with `perm[k]` the original index eliminated at step `k`.
pub fn minimum_degree(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in edges {
        if a != b {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    for list in adj.iter_mut() {
        list.sort_unstable();
        list.dedup();
    }

    let threshold = 16.max((2.0 * (n as f64).sqrt()) as usize);
    let dense: Vec<bool> = adj.iter().map(|l| l.len() > threshold).collect();
    if dense.iter().any(|&d| d) {
        for list in adj.iter_mut() {
            list.retain(|&j| !dense[j]);
        }
    }

    let mut alive: Vec<bool> = dense.iter().map(|d| !d).collect();
    let n_sparse = alive.iter().filter(|&&a| a).count();
    let mut perm = Vec::with_capacity(n);
    let mut merged = Vec::new();
    for _ in 0..n_sparse {
        let mut best = usize::MAX;
        let mut best_deg = usize::MAX;
        for i in 0..n {
            if alive[i] && adj[i].len() < best_deg {
                best = i;
                best_deg = adj[i].len();
            }
        }
        alive[best] = false;
        perm.push(best);
        let nbrs = std::mem::take(&mut adj[best]);
        for &u in &nbrs {
            merged.clear();
            let cur = &adj[u];
            let (mut i, mut j) = (0, 0);
            while i < cur.len() || j < nbrs.len() {
                let a = cur.get(i).copied().unwrap_or(usize::MAX);
                let b = nbrs.get(j).copied().unwrap_or(usize::MAX);
                let next = if a <= b {
                    i += 1;
                    if a == b {
                        j += 1;
                    }
                    a
                } else {
                    j += 1;
                    b
                };
                if next != u && next != best {
                    merged.push(next);
                }
            }
            std::mem::swap(&mut adj[u], &mut merged);
        }
    }
    perm.extend((0..n).filter(|&i| dense[i]));
    perm
}
