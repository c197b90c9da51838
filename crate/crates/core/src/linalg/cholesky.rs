//! Left-looking block Cholesky factorization for [`SymMatrix`].
//!
//! The symbolic phase works on the block graph (elimination tree and column
//! structures); the numeric phase stores every block column of `L` as a dense
//! column-major panel and applies descendant updates through dense kernels.

use std::sync::Arc;

use super::ordering::nested_dissection;
use super::sparse::{BlockPattern, SymMatrix};

#[derive(Debug, thiserror::Error)]
pub enum FactorError {
    #[error("matrix is not positive definite (pivot {pivot:.3e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
}

/// Ordering and fill structure, reusable for every matrix on the same pattern.
#[derive(Debug)]
pub struct Symbolic {
    pattern: Arc<BlockPattern>,
    /// `perm[new] = old` (block indices)
    perm: Vec<usize>,
    iperm: Vec<usize>,
    /// Sorted block rows (new numbering) of every block column of `L`, diagonal first.
    structs: Vec<Vec<usize>>,
    /// Row offset of each structure entry inside the panel.
    row_offsets: Vec<Vec<usize>>,
    panel_height: Vec<usize>,
    panel_start: Vec<usize>,
    total: usize,
}

impl Symbolic {
    /// Computes a nested-dissection ordering and the block fill structure.
    /// `coords` gives a point per block; `pinned_last` are blocks to order last.
    pub fn analyze(pattern: Arc<BlockPattern>, coords: &[[f64; 3]], pinned_last: &[usize]) -> Self {
        let adj = pattern.adjacency();
        let perm = nested_dissection(&adj, coords, pinned_last, 8);
        Self::with_ordering(pattern, perm)
    }

    pub fn with_ordering(pattern: Arc<BlockPattern>, perm: Vec<usize>) -> Self {
        let nb = pattern.num_blocks();
        assert_eq!(perm.len(), nb);
        let mut iperm = vec![0; nb];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        // lower adjacency in the new numbering
        let adj = pattern.adjacency();
        let mut lower: Vec<Vec<usize>> = vec![Vec::new(); nb];
        for (old, nbrs) in adj.iter().enumerate() {
            let j = iperm[old];
            for &o in nbrs {
                let i = iperm[o];
                if i > j {
                    lower[j].push(i);
                }
            }
        }
        // column structures via children merge: struct(j) = adj(j) U struct(c) \ {c}
        let mut structs: Vec<Vec<usize>> = Vec::with_capacity(nb);
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); nb];
        let mut mark = vec![usize::MAX; nb];
        for j in 0..nb {
            let mut s = vec![j];
            mark[j] = j;
            for &i in &lower[j] {
                if mark[i] != j {
                    mark[i] = j;
                    s.push(i);
                }
            }
            for &c in &children[j] {
                let cs: &Vec<usize> = &structs[c];
                for &i in &cs[1..] {
                    if mark[i] != j {
                        mark[i] = j;
                        s.push(i);
                    }
                }
            }
            s[1..].sort_unstable();
            if s.len() > 1 {
                children[s[1]].push(j);
            }
            structs.push(s);
        }
        let mut row_offsets = Vec::with_capacity(nb);
        let mut panel_height = Vec::with_capacity(nb);
        let mut panel_start = Vec::with_capacity(nb);
        let mut total = 0;
        for j in 0..nb {
            let mut offs = Vec::with_capacity(structs[j].len());
            let mut h = 0;
            for &i in &structs[j] {
                offs.push(h);
                h += pattern.block_size(perm[i]);
            }
            row_offsets.push(offs);
            panel_height.push(h);
            panel_start.push(total);
            total += h * pattern.block_size(perm[j]);
        }
        Self {
            pattern,
            perm,
            iperm,
            structs,
            row_offsets,
            panel_height,
            panel_start,
            total,
        }
    }

    /// Number of stored entries in the factor.
    pub fn factor_size(&self) -> usize {
        self.total
    }

    fn width(&self, j: usize) -> usize {
        self.pattern.block_size(self.perm[j])
    }
}

/// Numeric Cholesky factor `P A P^T = L L^T`.
#[derive(Debug)]
pub struct Cholesky {
    sym: Arc<Symbolic>,
    panels: Vec<f64>,
}

impl Cholesky {
    /// Factorizes `a + diag(shift)` (pass an empty slice for no shift).
    pub fn factor(sym: Arc<Symbolic>, a: &SymMatrix, shift: &[f64]) -> Result<Self, FactorError> {
        assert!(Arc::ptr_eq(&sym.pattern, a.pattern()) || sym.pattern.dim() == a.dim());
        let nb = sym.perm.len();
        let mut panels = vec![0.0; sym.total];
        // scatter A into panels
        for (bi, bj, vals) in a.blocks() {
            let (ni, nj) = (sym.iperm[bi], sym.iperm[bj]);
            let rs = sym.pattern.block_size(bi);
            let cs = sym.pattern.block_size(bj);
            if ni >= nj {
                let p = sym.structs[nj]
                    .binary_search(&ni)
                    .expect("pattern entry missing from factor");
                let h = sym.panel_height[nj];
                let base = sym.panel_start[nj] + sym.row_offsets[nj][p];
                for c in 0..cs {
                    for r in 0..rs {
                        panels[base + c * h + r] += vals[c * rs + r];
                    }
                }
            } else {
                // stored block sits above the diagonal after permutation: transpose it
                let p = sym.structs[ni]
                    .binary_search(&nj)
                    .expect("pattern entry missing from factor");
                let h = sym.panel_height[ni];
                let base = sym.panel_start[ni] + sym.row_offsets[ni][p];
                for c in 0..cs {
                    for r in 0..rs {
                        panels[base + r * h + c] += vals[c * rs + r];
                    }
                }
            }
        }
        if !shift.is_empty() {
            assert_eq!(shift.len(), a.dim());
            for j in 0..nb {
                let old = sym.perm[j];
                let o = sym.pattern.block_offset(old);
                let h = sym.panel_height[j];
                for l in 0..sym.width(j) {
                    panels[sym.panel_start[j] + l * h + l] += shift[o + l];
                }
            }
        }

        // left-looking sweep; `next[k]` = position in structs[k] of the next block to update
        let mut next = vec![1usize; nb];
        let mut head: Vec<Vec<usize>> = vec![Vec::new(); nb];
        let mut pos = vec![usize::MAX; nb];
        let mut buf: Vec<f64> = Vec::new();
        for j in 0..nb {
            let wj = sym.width(j);
            let hj = sym.panel_height[j];
            for (p, &i) in sym.structs[j].iter().enumerate() {
                pos[i] = sym.row_offsets[j][p];
            }
            let updaters = std::mem::take(&mut head[j]);
            for &k in &updaters {
                let pk = next[k];
                let sk = &sym.structs[k];
                debug_assert_eq!(sk[pk], j);
                let hk = sym.panel_height[k];
                let wk = sym.width(k);
                let r0 = sym.row_offsets[k][pk];
                let m = hk - r0;
                buf.clear();
                buf.resize(m * wj, 0.0);
                let lk = &panels[sym.panel_start[k]..sym.panel_start[k] + hk * wk];
                // buf (m x wj) = Lk[r0.., :] * Lk[r0..r0+wj, :]^T
                for c in 0..wj {
                    let col = &mut buf[c * m..(c + 1) * m];
                    for l in 0..wk {
                        let a = lk[l * hk + r0 + c];
                        if a == 0.0 {
                            continue;
                        }
                        let src = &lk[l * hk + r0..l * hk + hk];
                        for (x, y) in col.iter_mut().zip(src) {
                            *x += a * y;
                        }
                    }
                }
                // scatter-subtract into panel j by row blocks
                let pj = sym.panel_start[j];
                for q in pk..sk.len() {
                    let i = sk[q];
                    let src_off = sym.row_offsets[k][q] - r0;
                    let len = sym.pattern.block_size(sym.perm[i]);
                    let dst_off = pos[i];
                    debug_assert!(dst_off != usize::MAX);
                    for c in 0..wj {
                        let d = &mut panels[pj + c * hj + dst_off..pj + c * hj + dst_off + len];
                        let s = &buf[c * m + src_off..c * m + src_off + len];
                        for (x, y) in d.iter_mut().zip(s) {
                            *x -= y;
                        }
                    }
                }
                if pk + 1 < sk.len() {
                    next[k] = pk + 1;
                    head[sk[pk + 1]].push(k);
                }
            }
            for &i in &sym.structs[j] {
                pos[i] = usize::MAX;
            }
            // dense factorization of the panel
            let panel = &mut panels[sym.panel_start[j]..sym.panel_start[j] + hj * wj];
            for c in 0..wj {
                let d = panel[c * hj + c];
                if d <= 0.0 || !d.is_finite() {
                    return Err(FactorError::NotPositiveDefinite {
                        row: sym.pattern.block_offset(sym.perm[j]) + c,
                        pivot: d,
                    });
                }
                let d = d.sqrt();
                panel[c * hj + c] = d;
                let inv = 1.0 / d;
                for r in c + 1..hj {
                    panel[c * hj + r] *= inv;
                }
                // rank-1 update of the remaining columns
                for c2 in c + 1..wj {
                    let a = panel[c * hj + c2];
                    if a == 0.0 {
                        continue;
                    }
                    let (left, right) = panel.split_at_mut(c2 * hj);
                    let src = &left[c * hj + c2..c * hj + hj];
                    let dst = &mut right[c2..hj];
                    for (x, y) in dst.iter_mut().zip(src) {
                        *x -= a * y;
                    }
                }
            }
            if sym.structs[j].len() > 1 {
                head[sym.structs[j][1]].push(j);
            }
        }
        Ok(Self { sym, panels })
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let sym = &*self.sym;
        let nb = sym.perm.len();
        let n = sym.pattern.dim();
        assert_eq!(b.len(), n);
        // permuted right-hand side, laid out by new block order
        let mut y: Vec<Vec<f64>> = (0..nb)
            .map(|j| {
                let old = sym.perm[j];
                let o = sym.pattern.block_offset(old);
                b[o..o + sym.pattern.block_size(old)].to_vec()
            })
            .collect();
        // forward: L y = b
        for j in 0..nb {
            let wj = sym.width(j);
            let hj = sym.panel_height[j];
            let panel = &self.panels[sym.panel_start[j]..sym.panel_start[j] + hj * wj];
            let mut yj = std::mem::take(&mut y[j]);
            for c in 0..wj {
                yj[c] /= panel[c * hj + c];
                let v = yj[c];
                for r in c + 1..wj {
                    yj[r] -= panel[c * hj + r] * v;
                }
            }
            for (p, &i) in sym.structs[j].iter().enumerate().skip(1) {
                let off = sym.row_offsets[j][p];
                let yi = &mut y[i];
                for c in 0..wj {
                    let v = yj[c];
                    for (r, x) in yi.iter_mut().enumerate() {
                        *x -= panel[c * hj + off + r] * v;
                    }
                }
            }
            y[j] = yj;
        }
        // backward: L^T x = y
        for j in (0..nb).rev() {
            let wj = sym.width(j);
            let hj = sym.panel_height[j];
            let panel = &self.panels[sym.panel_start[j]..sym.panel_start[j] + hj * wj];
            let mut yj = std::mem::take(&mut y[j]);
            for (p, &i) in sym.structs[j].iter().enumerate().skip(1) {
                let off = sym.row_offsets[j][p];
                let yi = &y[i];
                for c in 0..wj {
                    let mut acc = 0.0;
                    for (r, x) in yi.iter().enumerate() {
                        acc += panel[c * hj + off + r] * x;
                    }
                    yj[c] -= acc;
                }
            }
            for c in (0..wj).rev() {
                let mut v = yj[c];
                for r in c + 1..wj {
                    v -= panel[c * hj + r] * yj[r];
                }
                yj[c] = v / panel[c * hj + c];
            }
            y[j] = yj;
        }
        let mut x = vec![0.0; n];
        for j in 0..nb {
            let o = sym.pattern.block_offset(sym.perm[j]);
            x[o..o + y[j].len()].copy_from_slice(&y[j]);
        }
        x
    }
}

/// Factorizes `a + ridge`, where the ridge is `delta * |a_ii|` per row,
/// increasing `delta` by 100x on breakdown (at most `max_tries` times).
pub fn factor_with_ridge(
    sym: &Arc<Symbolic>,
    a: &SymMatrix,
    delta: f64,
    max_tries: usize,
) -> Result<(Cholesky, f64), FactorError> {
    let diag = a.diagonal();
    let scale = diag
        .iter()
        .fold(0.0f64, |m, d| m.max(d.abs()))
        .max(f64::MIN_POSITIVE);
    let mut delta = delta;
    let mut last = None;
    for _ in 0..max_tries.max(1) {
        let shift: Vec<f64> = diag
            .iter()
            .map(|d| delta * d.abs().max(1e-30 * scale))
            .collect();
        match Cholesky::factor(sym.clone(), a, &shift) {
            Ok(f) => return Ok((f, delta)),
            Err(e) => {
                log::debug!("factorization failed with ridge {delta:.1e}: {e}");
                last = Some(e);
                delta = if delta == 0.0 { 1e-14 } else { delta * 100.0 };
            }
        }
    }
    Err(last.expect("at least one attempt"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
                .unwrap();
            a.swap(k, p);
            b.swap(k, p);
            for i in k + 1..n {
                let f = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
            x[i] = (b[i] - s) / a[i][i];
        }
        x
    }

    /// Random SPD matrix on a grid block graph plus a dense trailing block.
    fn random_problem(seed: u64, n: usize, bs: usize) -> (SymMatrix, Vec<[f64; 3]>, usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nb = n * n + 1;
        let mut sizes = vec![bs; n * n];
        sizes.push(1);
        let mut pairs = Vec::new();
        let mut coords = Vec::new();
        for i in 0..n {
            for j in 0..n {
                coords.push([i as f64, j as f64, 0.0]);
                if i + 1 < n {
                    pairs.push((i * n + j, (i + 1) * n + j));
                }
                if j + 1 < n {
                    pairs.push((i * n + j, i * n + j + 1));
                }
                if rng.random_bool(0.3) {
                    pairs.push((i * n + j, nb - 1));
                }
            }
        }
        coords.push([0.0; 3]);
        let pattern = Arc::new(BlockPattern::new(sizes, pairs.clone()));
        let mut a = SymMatrix::zeros(pattern.clone());
        // sum of random rank-one terms on coupled pairs => PSD; add diagonal => SPD
        for &(p, q) in &pairs {
            let mut dofs: Vec<usize> = Vec::new();
            for b in [p, q] {
                let o = pattern.block_offset(b);
                dofs.extend(o..o + pattern.block_size(b));
            }
            let v: Vec<f64> = dofs.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
            let m = dofs.len();
            let local: Vec<f64> = (0..m * m).map(|k| v[k / m] * v[k % m]).collect();
            a.add_local(&dofs, &local);
        }
        for i in 0..a.dim() {
            a.add(i, i, 0.1 + rng.random_range(0.0..1.0));
        }
        (a, coords, nb - 1)
    }

    #[test]
    fn matches_dense_solve() {
        for seed in 0..4 {
            let (a, coords, last) = random_problem(seed, 7, 3);
            let sym = Arc::new(Symbolic::analyze(a.pattern().clone(), &coords, &[last]));
            let f = Cholesky::factor(sym, &a, &[]).unwrap();
            let b: Vec<f64> = (0..a.dim())
                .map(|i| ((i * 7 + 3) % 11) as f64 - 5.0)
                .collect();
            let x = f.solve(&b);
            let xd = dense_solve(a.to_dense(), b.clone());
            for (p, q) in x.iter().zip(&xd) {
                assert!((p - q).abs() < 1e-9 * (1.0 + q.abs()), "{p} vs {q}");
            }
        }
    }

    #[test]
    fn identity_ordering_also_works() {
        let (a, _, _) = random_problem(9, 4, 2);
        let nb = a.pattern().num_blocks();
        let sym = Arc::new(Symbolic::with_ordering(
            a.pattern().clone(),
            (0..nb).collect(),
        ));
        let f = Cholesky::factor(sym, &a, &[]).unwrap();
        let b = vec![1.0; a.dim()];
        let r: Vec<f64> = a
            .mul_vec(&f.solve(&b))
            .iter()
            .zip(&b)
            .map(|(p, q)| p - q)
            .collect();
        assert!(r.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn indefinite_matrix_is_reported_and_ridge_recovers_semidefinite() {
        let pattern = Arc::new(BlockPattern::new(vec![2], []));
        let mut a = SymMatrix::zeros(pattern.clone());
        a.add(0, 0, 1.0);
        a.add(1, 0, 1.0);
        a.add(1, 1, 1.0); // singular PSD
        let sym = Arc::new(Symbolic::with_ordering(pattern, vec![0]));
        let mut b = a.clone();
        b.add(1, 1, -2.0);
        assert!(Cholesky::factor(sym.clone(), &b, &[]).is_err());
        let (_, used) = factor_with_ridge(&sym, &a, 1e-12, 8).unwrap();
        assert!(used >= 1e-12);
    }
}
