//! Block-sparse symmetric matrices.
//!
//! The finite element systems in this crate have a natural block structure:
//! every DG cell (or every BFS vertex) owns a small contiguous range of dofs,
//! and two blocks interact only if they share a cell or a face. Storing the
//! lower triangle as dense blocks keeps assembly simple and gives the
//! factorization dense kernels to work with.

/// Block layout of a symmetric matrix: block sizes plus the strictly lower
/// block adjacency.
#[derive(Debug, Clone)]
pub struct BlockPattern {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    owner: Vec<usize>,
    /// For every block column `j`, the sorted block rows `i >= j` (diagonal first).
    col_rows: Vec<Vec<usize>>,
}

impl BlockPattern {
    /// Builds a pattern from block sizes and an (unordered, possibly
    /// duplicated) list of coupled block pairs. Diagonal blocks are always
    /// present.
    pub fn new(sizes: Vec<usize>, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let nb = sizes.len();
        let mut col_rows: Vec<Vec<usize>> = (0..nb).map(|j| vec![j]).collect();
        for (a, b) in pairs {
            assert!(a < nb && b < nb, "block index out of range");
            if a == b {
                continue;
            }
            let (i, j) = if a > b { (a, b) } else { (b, a) };
            col_rows[j].push(i);
        }
        for rows in &mut col_rows {
            rows.sort_unstable();
            rows.dedup();
        }
        let mut offsets = Vec::with_capacity(nb + 1);
        let mut acc = 0;
        for &s in &sizes {
            offsets.push(acc);
            acc += s;
        }
        offsets.push(acc);
        let mut owner = Vec::with_capacity(acc);
        for (b, &s) in sizes.iter().enumerate() {
            owner.extend(std::iter::repeat_n(b, s));
        }
        Self {
            sizes,
            offsets,
            owner,
            col_rows,
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.sizes.len()
    }

    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn block_size(&self, b: usize) -> usize {
        self.sizes[b]
    }

    pub fn block_offset(&self, b: usize) -> usize {
        self.offsets[b]
    }

    /// Block that owns scalar index `i`.
    pub fn block_of(&self, i: usize) -> usize {
        self.owner[i]
    }

    /// Sorted block rows `>= j` in block column `j`.
    pub fn column(&self, j: usize) -> &[usize] {
        &self.col_rows[j]
    }

    /// Symmetric block adjacency lists (without the diagonal).
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_blocks()];
        for (j, rows) in self.col_rows.iter().enumerate() {
            for &i in &rows[1..] {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        adj
    }
}

/// Symmetric matrix with values stored as dense lower-triangle blocks.
///
/// Only the lower triangle (block row >= block column) is stored; diagonal
/// blocks are stored in full and kept symmetric by [`SymMatrix::add_local`].
#[derive(Debug, Clone)]
pub struct SymMatrix {
    pattern: std::sync::Arc<BlockPattern>,
    /// Start of each block column inside `entry_row`/`entry_val`.
    col_ptr: Vec<usize>,
    entry_row: Vec<usize>,
    /// Offset of each block entry in `values` (column-major `rows x cols`).
    entry_val: Vec<usize>,
    values: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(pattern: std::sync::Arc<BlockPattern>) -> Self {
        let mut col_ptr = vec![0];
        let mut entry_row = Vec::new();
        let mut entry_val = Vec::new();
        let mut acc = 0;
        for j in 0..pattern.num_blocks() {
            for &i in pattern.column(j) {
                entry_row.push(i);
                entry_val.push(acc);
                acc += pattern.block_size(i) * pattern.block_size(j);
            }
            col_ptr.push(entry_row.len());
        }
        Self {
            pattern,
            col_ptr,
            entry_row,
            entry_val,
            values: vec![0.0; acc],
        }
    }

    pub fn pattern(&self) -> &std::sync::Arc<BlockPattern> {
        &self.pattern
    }

    pub fn dim(&self) -> usize {
        self.pattern.dim()
    }

    pub fn set_zero(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Copies values from a matrix with the same pattern.
    pub fn copy_from(&mut self, other: &SymMatrix) {
        assert_eq!(self.values.len(), other.values.len());
        self.values.copy_from_slice(&other.values);
    }

    /// Iterates over stored blocks as (block row, block column, column-major values).
    pub(crate) fn blocks(&self) -> impl Iterator<Item = (usize, usize, &[f64])> + '_ {
        (0..self.pattern.num_blocks()).flat_map(move |j| {
            (self.col_ptr[j]..self.col_ptr[j + 1]).map(move |e| {
                let i = self.entry_row[e];
                let len = self.pattern.block_size(i) * self.pattern.block_size(j);
                let off = self.entry_val[e];
                (i, j, &self.values[off..off + len])
            })
        })
    }

    fn find(&self, i: usize, j: usize) -> usize {
        let range = self.col_ptr[j]..self.col_ptr[j + 1];
        match self.entry_row[range.clone()].binary_search(&i) {
            Ok(p) => range.start + p,
            Err(_) => panic!("block ({i}, {j}) is not in the sparsity pattern"),
        }
    }

    /// Adds `a * e_i e_j^T` (and its transpose when `i != j`).
    pub fn add(&mut self, i: usize, j: usize, a: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let bi = self.pattern.block_of(i);
        let bj = self.pattern.block_of(j);
        let e = self.find(bi, bj);
        let rows = self.pattern.block_size(bi);
        let li = i - self.pattern.block_offset(bi);
        let lj = j - self.pattern.block_offset(bj);
        let off = self.entry_val[e];
        self.values[off + lj * rows + li] += a;
        if bi == bj && li != lj {
            self.values[off + li * rows + lj] += a;
        }
    }

    /// Adds the symmetric dense matrix `local` (row-major, `dofs.len()`
    /// squared) at the global indices `dofs`. Only the entries that land in
    /// the stored lower triangle are read, so `local` must be symmetric.
    pub fn add_local(&mut self, dofs: &[usize], local: &[f64]) {
        let m = dofs.len();
        debug_assert_eq!(local.len(), m * m);
        // group local indices by owning block
        let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
        for (a, &d) in dofs.iter().enumerate() {
            let b = self.pattern.block_of(d);
            match groups.iter_mut().find(|(gb, _)| *gb == b) {
                Some((_, v)) => v.push(a),
                None => groups.push((b, vec![a])),
            }
        }
        for (bi, ai) in &groups {
            for (bj, aj) in &groups {
                if bi < bj {
                    continue;
                }
                let e = self.find(*bi, *bj);
                let rows = self.pattern.block_size(*bi);
                let oi = self.pattern.block_offset(*bi);
                let oj = self.pattern.block_offset(*bj);
                let off = self.entry_val[e];
                for &a in ai {
                    let li = dofs[a] - oi;
                    for &b in aj {
                        let lj = dofs[b] - oj;
                        self.values[off + lj * rows + li] += local[a * m + b];
                    }
                }
            }
        }
    }

    /// Diagonal of the matrix.
    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dim()];
        for j in 0..self.pattern.num_blocks() {
            let e = self.col_ptr[j];
            let s = self.pattern.block_size(j);
            let off = self.entry_val[e];
            let o = self.pattern.block_offset(j);
            for l in 0..s {
                d[o + l] = self.values[off + l * s + l];
            }
        }
        d
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        let p = &self.pattern;
        for j in 0..p.num_blocks() {
            let cs = p.block_size(j);
            let oj = p.block_offset(j);
            for e in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.entry_row[e];
                let rs = p.block_size(i);
                let oi = p.block_offset(i);
                let v = &self.values[self.entry_val[e]..self.entry_val[e] + rs * cs];
                for c in 0..cs {
                    for r in 0..rs {
                        let a = v[c * rs + r];
                        y[oi + r] += a * x[oj + c];
                        if i != j {
                            y[oj + c] += a * x[oi + r];
                        }
                    }
                }
            }
        }
        y
    }

    /// Dense copy (tests and tiny problems only).
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut a = vec![vec![0.0; n]; n];
        let p = &self.pattern;
        for j in 0..p.num_blocks() {
            let cs = p.block_size(j);
            let oj = p.block_offset(j);
            for e in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.entry_row[e];
                let rs = p.block_size(i);
                let oi = p.block_offset(i);
                let v = &self.values[self.entry_val[e]..];
                for c in 0..cs {
                    for r in 0..rs {
                        a[oi + r][oj + c] = v[c * rs + r];
                        a[oj + c][oi + r] = v[c * rs + r];
                    }
                }
            }
        }
        a
    }
}
