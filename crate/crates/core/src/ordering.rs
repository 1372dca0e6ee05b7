//! Bandwidth-reducing orderings for the envelope Cholesky factorization.

use crate::scalar::Real;
use crate::sparse::CsrMatrix;

/// Elimination order requested for a factorization.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Ordering {
    /// Identity permutation.
    Natural,
    /// Reverse Cuthill–McKee from a pseudo-peripheral start per component.
    #[default]
    Rcm,
    /// Reverse Cuthill–McKee whose first component starts its breadth-first
    /// sweep at the given DOFs; after reversal they land at the end of the
    /// elimination order, which keeps forward solves starting there short.
    RcmSeeded(Vec<usize>),
}

/// Permutation with `perm[new] = old` and `inv[old] = new`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    pub perm: Vec<usize>,
    pub inv: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation {
            perm: (0..n).collect(),
            inv: (0..n).collect(),
        }
    }

    pub fn from_perm(perm: Vec<usize>) -> Self {
        let mut inv = vec![usize::MAX; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        debug_assert!(inv.iter().all(|&v| v != usize::MAX));
        Permutation { perm, inv }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }
}

fn adjacency<T: Real>(a: &CsrMatrix<T>) -> Vec<Vec<usize>> {
    (0..a.n())
        .map(|i| {
            let (c, v) = a.row(i);
            c.iter()
                .zip(v)
                .filter(|(&j, &x)| j != i && x != T::zero())
                .map(|(&j, _)| j)
                .collect()
        })
        .collect()
}

/// Breadth-first level structure from `starts`; returns visit order and the
/// index of the last level's first entry.
fn bfs(adj: &[Vec<usize>], starts: &[usize], seen: &mut [bool], sort_by_degree: bool) -> (Vec<usize>, usize) {
    let mut order = Vec::new();
    for &s in starts {
        if !seen[s] {
            seen[s] = true;
            order.push(s);
        }
    }
    let mut level_start = 0;
    let mut head = 0;
    while head < order.len() {
        let level_end = order.len();
        level_start = head;
        while head < level_end {
            let v = order[head];
            head += 1;
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !seen[w]).collect();
            if sort_by_degree {
                next.sort_by_key(|&w| (adj[w].len(), w));
            }
            for w in next {
                if !seen[w] {
                    seen[w] = true;
                    order.push(w);
                }
            }
        }
    }
    (order, level_start)
}

fn pseudo_peripheral(adj: &[Vec<usize>], start: usize, n: usize) -> usize {
    let mut root = start;
    let mut depth = 0usize;
    for _ in 0..8 {
        let mut seen = vec![false; n];
        let (order, last) = bfs(adj, &[root], &mut seen, false);
        let levels = level_count(adj, &order, root);
        if levels <= depth {
            break;
        }
        depth = levels;
        root = *order[last..].iter().min_by_key(|&&w| (adj[w].len(), w)).unwrap();
    }
    root
}

fn level_count(adj: &[Vec<usize>], order: &[usize], root: usize) -> usize {
    let mut lvl = std::collections::HashMap::with_capacity(order.len());
    lvl.insert(root, 0usize);
    let mut max = 0;
    for &v in order {
        let l = lvl[&v];
        for &w in &adj[v] {
            lvl.entry(w).or_insert_with(|| {
                max = max.max(l + 1);
                l + 1
            });
        }
    }
    max + 1
}

/// Computes the elimination permutation of a symmetric matrix.
pub fn compute<T: Real>(a: &CsrMatrix<T>, ordering: &Ordering) -> Permutation {
    let n = a.n();
    match ordering {
        Ordering::Natural => Permutation::identity(n),
        Ordering::Rcm | Ordering::RcmSeeded(_) => {
            let adj = adjacency(a);
            let mut seen = vec![false; n];
            let mut order = Vec::with_capacity(n);
            if let Ordering::RcmSeeded(seeds) = ordering {
                let seeds: Vec<usize> = seeds.iter().copied().filter(|&s| s < n).collect();
                if !seeds.is_empty() {
                    order.extend(bfs(&adj, &seeds, &mut seen, true).0);
                }
            }
            // Remaining components, smallest-degree unvisited vertex first.
            let mut by_degree: Vec<usize> = (0..n).collect();
            by_degree.sort_by_key(|&v| (adj[v].len(), v));
            for &v in &by_degree {
                if seen[v] {
                    continue;
                }
                let root = pseudo_peripheral(&adj, v, n);
                let root = if seen[root] { v } else { root };
                order.extend(bfs(&adj, &[root], &mut seen, true).0);
            }
            order.reverse();
            Permutation::from_perm(order)
        }
    }
}

/// Sum over rows of (i − first nonzero column of row i), under `p`.
pub fn envelope_size<T: Real>(a: &CsrMatrix<T>, p: &Permutation) -> usize {
    let mut total = 0;
    for new in 0..a.n() {
        let old = p.perm[new];
        let (c, _) = a.row(old);
        let first = c.iter().map(|&j| p.inv[j]).min().unwrap_or(new).min(new);
        total += new - first;
    }
    total
}
