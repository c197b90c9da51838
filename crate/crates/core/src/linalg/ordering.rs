//! Fill-reducing orderings for block graphs.

/// Geometric nested dissection on a block graph.
///
/// `coords[b]` is a representative point of block `b` (cell centroid, vertex
/// position). Blocks listed in `pinned_last` (e.g. a global slack variable
/// coupled to everything) are removed from the dissection and appended at
/// the end. Returns `perm` with `perm[new] = old`.
pub fn nested_dissection(
    adj: &[Vec<usize>],
    coords: &[[f64; 3]],
    pinned_last: &[usize],
    leaf_size: usize,
) -> Vec<usize> {
    let n = adj.len();
    assert_eq!(coords.len(), n);
    let mut pinned = vec![false; n];
    for &p in pinned_last {
        pinned[p] = true;
    }
    let nodes: Vec<usize> = (0..n).filter(|&b| !pinned[b]).collect();
    let mut perm = Vec::with_capacity(n);
    // side marker: 0 = not in current subproblem, 1 = left, 2 = right
    let mut side = vec![0u8; n];
    dissect(adj, coords, nodes, leaf_size.max(1), &mut side, &mut perm);
    perm.extend_from_slice(pinned_last);
    debug_assert_eq!(perm.len(), n);
    perm
}

fn dissect(
    adj: &[Vec<usize>],
    coords: &[[f64; 3]],
    mut nodes: Vec<usize>,
    leaf: usize,
    side: &mut [u8],
    perm: &mut Vec<usize>,
) {
    if nodes.len() <= leaf {
        perm.extend_from_slice(&nodes);
        return;
    }
    // longest bounding-box axis
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &b in &nodes {
        for d in 0..3 {
            lo[d] = lo[d].min(coords[b][d]);
            hi[d] = hi[d].max(coords[b][d]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap_or(0);
    nodes.sort_by(|&a, &b| coords[a][axis].total_cmp(&coords[b][axis]).then(a.cmp(&b)));
    let mid = nodes.len() / 2;
    let (left, right) = nodes.split_at(mid);
    for &b in left {
        side[b] = 1;
    }
    for &b in right {
        side[b] = 2;
    }
    // one-sided separators; take the smaller
    let sep_l: Vec<usize> = left
        .iter()
        .copied()
        .filter(|&b| adj[b].iter().any(|&c| side[c] == 2))
        .collect();
    let sep_r: Vec<usize> = right
        .iter()
        .copied()
        .filter(|&b| adj[b].iter().any(|&c| side[c] == 1))
        .collect();
    let sep = if sep_l.len() <= sep_r.len() {
        sep_l
    } else {
        sep_r
    };
    for &b in &nodes {
        side[b] = 0;
    }
    if sep.len() * 2 >= nodes.len() {
        // dissection does not pay off (dense-ish subgraph)
        perm.extend_from_slice(&nodes);
        return;
    }
    let mut in_sep = std::collections::HashSet::with_capacity(sep.len());
    in_sep.extend(sep.iter().copied());
    let l: Vec<usize> = left
        .iter()
        .copied()
        .filter(|b| !in_sep.contains(b))
        .collect();
    let r: Vec<usize> = right
        .iter()
        .copied()
        .filter(|b| !in_sep.contains(b))
        .collect();
    dissect(adj, coords, l, leaf, side, perm);
    dissect(adj, coords, r, leaf, side, perm);
    perm.extend_from_slice(&sep);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> (Vec<Vec<usize>>, Vec<[f64; 3]>) {
        let id = |i: usize, j: usize| i * n + j;
        let mut adj = vec![Vec::new(); n * n];
        let mut coords = vec![[0.0; 3]; n * n];
        for i in 0..n {
            for j in 0..n {
                coords[id(i, j)] = [i as f64, j as f64, 0.0];
                if i + 1 < n {
                    adj[id(i, j)].push(id(i + 1, j));
                    adj[id(i + 1, j)].push(id(i, j));
                }
                if j + 1 < n {
                    adj[id(i, j)].push(id(i, j + 1));
                    adj[id(i, j + 1)].push(id(i, j));
                }
            }
        }
        (adj, coords)
    }

    #[test]
    fn is_a_permutation_with_pinned_tail() {
        let (mut adj, mut coords) = grid(9);
        let extra = adj.len();
        adj.push((0..extra).collect());
        for a in adj.iter_mut().take(extra) {
            a.push(extra);
        }
        coords.push([0.0; 3]);
        let perm = nested_dissection(&adj, &coords, &[extra], 4);
        let mut seen = perm.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..=extra).collect::<Vec<_>>());
        assert_eq!(*perm.last().unwrap(), extra);
    }
}
