//! Sparse matrix storage (CRS and SELL-C-σ) and row-major block vectors.
//!
//! Column indices are 32-bit; matrices refuse to build beyond that range.
//! Block vectors interleave the R columns row-major so the column index is
//! unit-stride, which is what the blocked kernels rely on.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};

type C = Complex64;

const ZERO: C = Complex64::new(0.0, 0.0);

/// Compressed row storage: row pointers, 32-bit column indices, values.
#[derive(Clone, Debug)]
pub struct CrsMatrix {
    nrows: usize,
    ncols: usize,
    row_ptrs: Vec<usize>,
    col_indices: Vec<u32>,
    values: Vec<C>,
}

impl CrsMatrix {
    pub fn from_parts(
        nrows: usize,
        ncols: usize,
        row_ptrs: Vec<usize>,
        col_indices: Vec<u32>,
        values: Vec<C>,
    ) -> Result<Self> {
        if ncols as u128 > u32::MAX as u128 {
            return Err(Error::IndexOverflow(ncols as u128));
        }
        if row_ptrs.len() != nrows + 1
            || row_ptrs.windows(2).any(|w| w[0] > w[1])
            || *row_ptrs.last().unwrap_or(&0) != values.len()
            || col_indices.len() != values.len()
        {
            return Err(Error::ShapeMismatch("inconsistent CRS arrays".into()));
        }
        if col_indices.iter().any(|&j| j as usize >= ncols) {
            return Err(Error::ShapeMismatch("column index out of range".into()));
        }
        Ok(CrsMatrix {
            nrows,
            ncols,
            row_ptrs,
            col_indices,
            values,
        })
    }

    /// Builds from unsorted triplets, accumulating duplicates.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, C)>,
    ) -> Result<Self> {
        let mut items: Vec<(usize, usize, C)> = triplets.into_iter().collect();
        if items.iter().any(|&(i, j, _)| i >= nrows || j >= ncols) {
            return Err(Error::ShapeMismatch("triplet index out of range".into()));
        }
        items.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_ptrs = vec![0usize; nrows + 1];
        let mut cols: Vec<u32> = Vec::with_capacity(items.len());
        let mut vals: Vec<C> = Vec::with_capacity(items.len());
        let mut last = None;
        for (i, j, v) in items {
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(j as u32);
                vals.push(v);
                row_ptrs[i + 1] = cols.len();
                last = Some((i, j));
            }
        }
        // empty rows inherit the previous pointer
        for i in 1..=nrows {
            if row_ptrs[i] < row_ptrs[i - 1] {
                row_ptrs[i] = row_ptrs[i - 1];
            }
        }
        Self::from_parts(nrows, ncols, row_ptrs, cols, vals)
    }

    pub fn identity(n: usize) -> Self {
        let one = C::new(1.0, 0.0);
        Self::from_diag(&vec![one; n])
    }

    pub fn from_diag(diag: &[C]) -> Self {
        let n = diag.len();
        CrsMatrix {
            nrows: n,
            ncols: n,
            row_ptrs: (0..=n).collect(),
            col_indices: (0..n as u32).collect(),
            values: diag.to_vec(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (u32, C)> + '_ {
        let lo = self.row_ptrs[i];
        let hi = self.row_ptrs[i + 1];
        self.col_indices[lo..hi]
            .iter()
            .copied()
            .zip(self.values[lo..hi].iter().copied())
    }

    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptrs[i]..self.row_ptrs[i + 1]
    }

    pub fn col_indices(&self) -> &[u32] {
        &self.col_indices
    }

    pub fn values(&self) -> &[C] {
        &self.values
    }

    pub fn row_ptrs(&self) -> &[usize] {
        &self.row_ptrs
    }
}

/// SELL-C-σ storage: rows are sorted by descending length inside windows of
/// σ rows (stable on the original index), grouped into chunks of C rows, and
/// each chunk is stored column-major padded to its longest row.
#[derive(Clone, Debug)]
pub struct SellMatrix {
    nrows: usize,
    ncols: usize,
    chunk_height: usize,
    sigma: usize,
    chunk_offsets: Vec<usize>,
    chunk_lengths: Vec<usize>,
    /// stored position -> original row
    permutation: Vec<u32>,
    /// true row length at each stored position
    row_lengths: Vec<usize>,
    col_indices: Vec<u32>,
    values: Vec<C>,
}

impl SellMatrix {
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.row_lengths.iter().sum()
    }

    pub fn chunk_height(&self) -> usize {
        self.chunk_height
    }

    pub fn sigma(&self) -> usize {
        self.sigma
    }

    pub fn n_chunks(&self) -> usize {
        self.chunk_lengths.len()
    }

    pub fn chunk_offsets(&self) -> &[usize] {
        &self.chunk_offsets
    }

    pub fn chunk_lengths(&self) -> &[usize] {
        &self.chunk_lengths
    }

    pub fn permutation(&self) -> &[u32] {
        &self.permutation
    }

    pub fn row_lengths(&self) -> &[usize] {
        &self.row_lengths
    }

    pub fn col_indices(&self) -> &[u32] {
        &self.col_indices
    }

    pub fn values(&self) -> &[C] {
        &self.values
    }

    /// Fraction of stored slots that are padding.
    pub fn padding_fraction(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        1.0 - self.nnz() as f64 / self.values.len() as f64
    }
}

/// Unified sparse operator; both layouts represent the same entry set.
#[derive(Clone, Debug)]
pub enum SparseMatrix {
    Crs(CrsMatrix),
    Sell(SellMatrix),
}

impl SparseMatrix {
    pub fn nrows(&self) -> usize {
        match self {
            SparseMatrix::Crs(m) => m.nrows(),
            SparseMatrix::Sell(m) => m.nrows(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            SparseMatrix::Crs(m) => m.ncols(),
            SparseMatrix::Sell(m) => m.ncols(),
        }
    }

    pub fn nnz(&self) -> usize {
        match self {
            SparseMatrix::Crs(m) => m.nnz(),
            SparseMatrix::Sell(m) => m.nnz(),
        }
    }

    pub fn layout_name(&self) -> String {
        match self {
            SparseMatrix::Crs(_) => "crs".to_string(),
            SparseMatrix::Sell(m) => format!("sell-{}-{}", m.chunk_height(), m.sigma()),
        }
    }

    /// Visits every stored non-padding entry as `(row, col, value)`.
    pub fn for_each_entry(&self, mut f: impl FnMut(usize, usize, C)) {
        match self {
            SparseMatrix::Crs(m) => {
                for i in 0..m.nrows() {
                    for (j, v) in m.row(i) {
                        f(i, j as usize, v);
                    }
                }
            }
            SparseMatrix::Sell(m) => {
                for chunk in 0..m.n_chunks() {
                    let base = m.chunk_offsets[chunk];
                    let clen = m.chunk_lengths[chunk];
                    for lane in 0..m.chunk_height {
                        let pos = chunk * m.chunk_height + lane;
                        if pos >= m.nrows {
                            break;
                        }
                        let row = m.permutation[pos] as usize;
                        for k in 0..m.row_lengths[pos].min(clen) {
                            let idx = base + k * m.chunk_height + lane;
                            f(row, m.col_indices[idx] as usize, m.values[idx]);
                        }
                    }
                }
            }
        }
    }

    /// Entry set sorted by (row, col); padding excluded. Exact round-trip
    /// comparisons go through this.
    pub fn entry_set(&self) -> Vec<(usize, usize, C)> {
        let mut out = Vec::with_capacity(self.nnz());
        self.for_each_entry(|i, j, v| out.push((i, j, v)));
        out.sort_by_key(|&(i, j, _)| (i, j));
        out
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let entries = self.entry_set();
        let mut map = std::collections::HashMap::with_capacity(entries.len());
        for &(i, j, v) in &entries {
            map.insert((i, j), v);
        }
        entries.iter().all(|&(i, j, v)| match map.get(&(j, i)) {
            Some(w) => (v - w.conj()).norm() <= tol,
            None => false,
        })
    }

    pub fn to_crs(&self) -> CrsMatrix {
        match self {
            SparseMatrix::Crs(m) => m.clone(),
            SparseMatrix::Sell(_) => {
                let entries = self.entry_set();
                CrsMatrix::from_triplets(self.nrows(), self.ncols(), entries)
                    .expect("entry set of a valid matrix")
            }
        }
    }

    /// Converts to SELL-C-σ. `sigma` must be 1 or a multiple of `c`.
    pub fn to_sell(&self, c: usize, sigma: usize) -> Result<SparseMatrix> {
        let crs = self.to_crs();
        if c == 0 {
            return Err(Error::InvalidArgument("chunk height must be >= 1".into()));
        }
        if sigma != 1 && sigma % c != 0 {
            return Err(Error::InvalidArgument(
                "sigma must be 1 or a multiple of the chunk height".into(),
            ));
        }
        let n = crs.nrows();
        let mut perm: Vec<u32> = (0..n as u32).collect();
        if sigma > 1 {
            for window in perm.chunks_mut(sigma) {
                // stable: ties keep original row order
                window.sort_by_key(|&r| {
                    std::cmp::Reverse(crs.row_range(r as usize).len())
                });
            }
        }

        let n_chunks = n.div_ceil(c);
        let mut chunk_offsets = Vec::with_capacity(n_chunks);
        let mut chunk_lengths = Vec::with_capacity(n_chunks);
        let mut row_lengths = Vec::with_capacity(n);
        let mut cols = Vec::new();
        let mut vals = Vec::new();

        for chunk in 0..n_chunks {
            let rows = &perm[chunk * c..n.min((chunk + 1) * c)];
            let clen = rows
                .iter()
                .map(|&r| crs.row_range(r as usize).len())
                .max()
                .unwrap_or(0);
            chunk_offsets.push(cols.len());
            chunk_lengths.push(clen);
            cols.resize(cols.len() + clen * c, 0u32);
            vals.resize(vals.len() + clen * c, ZERO);
            let base = chunk_offsets[chunk];
            for (lane, &r) in rows.iter().enumerate() {
                let range = crs.row_range(r as usize);
                row_lengths.push(range.len());
                for (k, idx) in range.enumerate() {
                    cols[base + k * c + lane] = crs.col_indices()[idx];
                    vals[base + k * c + lane] = crs.values()[idx];
                }
            }
        }

        Ok(SparseMatrix::Sell(SellMatrix {
            nrows: n,
            ncols: crs.ncols(),
            chunk_height: c,
            sigma,
            chunk_offsets,
            chunk_lengths,
            permutation: perm,
            row_lengths,
            col_indices: cols,
            values: vals,
        }))
    }

    /// Storage accounting: entry payload plus pointer/descriptor overhead.
    pub fn storage_report(&self) -> StorageReport {
        let entry_bytes = self.nnz() * (16 + 4);
        match self {
            SparseMatrix::Crs(m) => StorageReport {
                entry_bytes,
                overhead_bytes: m.row_ptrs.len() * std::mem::size_of::<usize>(),
                padding_bytes: 0,
                padding_fraction: 0.0,
            },
            SparseMatrix::Sell(m) => StorageReport {
                entry_bytes,
                overhead_bytes: (m.chunk_offsets.len() + m.chunk_lengths.len())
                    * std::mem::size_of::<usize>()
                    + m.permutation.len() * 4,
                padding_bytes: (m.values.len() - m.nnz()) * (16 + 4),
                padding_fraction: m.padding_fraction(),
            },
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StorageReport {
    pub entry_bytes: usize,
    pub overhead_bytes: usize,
    pub padding_bytes: usize,
    pub padding_fraction: f64,
}

impl StorageReport {
    pub fn total_bytes(&self) -> usize {
        self.entry_bytes + self.overhead_bytes + self.padding_bytes
    }
}

/// R complex vectors of length `nrows`, interleaved row-major: element
/// `(i, r)` lives at offset `i·R + r`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockVector {
    nrows: usize,
    width: usize,
    data: Vec<C>,
}

impl BlockVector {
    pub fn zeros(nrows: usize, width: usize) -> Self {
        BlockVector {
            nrows,
            width,
            data: vec![ZERO; nrows * width],
        }
    }

    pub fn from_fn(nrows: usize, width: usize, mut f: impl FnMut(usize, usize) -> C) -> Self {
        let mut v = Self::zeros(nrows, width);
        for i in 0..nrows {
            for r in 0..width {
                v.data[i * width + r] = f(i, r);
            }
        }
        v
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, i: usize, r: usize) -> C {
        self.data[i * self.width + r]
    }

    pub fn set(&mut self, i: usize, r: usize, v: C) {
        self.data[i * self.width + r] = v;
    }

    pub fn as_slice(&self) -> &[C] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C] {
        &mut self.data
    }

    pub fn fill(&mut self, v: C) {
        self.data.fill(v);
    }

    pub fn column(&self, r: usize) -> Vec<C> {
        (0..self.nrows).map(|i| self.get(i, r)).collect()
    }

    /// Extracts column `r` as a width-1 block vector.
    pub fn extract_column(&self, r: usize) -> BlockVector {
        BlockVector {
            nrows: self.nrows,
            width: 1,
            data: self.column(r),
        }
    }

    pub fn same_shape(&self, other: &BlockVector) -> bool {
        self.nrows == other.nrows && self.width == other.width
    }

    /// Column-wise scalar products `result[r] = Σ_i conj(x[i,r])·y[i,r]`,
    /// accumulated serially in row order.
    pub fn column_dot(&self, other: &BlockVector) -> Result<Vec<C>> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch(format!(
                "dot of {}x{} with {}x{}",
                self.nrows, self.width, other.nrows, other.width
            )));
        }
        let mut acc = vec![ZERO; self.width];
        for i in 0..self.nrows {
            for r in 0..self.width {
                acc[r] += self.get(i, r).conj() * other.get(i, r);
            }
        }
        Ok(acc)
    }

    /// Column-wise squared norms (the `x = y` case of `column_dot`).
    pub fn column_nrm2(&self) -> Vec<f64> {
        let mut acc = vec![0.0f64; self.width];
        for i in 0..self.nrows {
            for r in 0..self.width {
                acc[r] += self.get(i, r).norm_sqr();
            }
        }
        acc
    }
}

/// Draws column `col` of the conceptual random block for `seed`: unit-modulus
/// entries with uniformly random phase, one counter stream per column.
///
/// A given `(seed, col)` pair produces the same vector regardless of how wide
/// a block it is embedded in, so blocked and one-vector-at-a-time runs see
/// identical randomness.
pub fn random_vector_column(nrows: usize, seed: u64, col: usize) -> BlockVector {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(col as u64 + 1);
    let mut v = BlockVector::zeros(nrows, 1);
    for i in 0..nrows {
        let theta = rng.random::<f64>() * std::f64::consts::TAU;
        v.set(i, 0, C::new(theta.cos(), theta.sin()));
    }
    v
}

/// Draws a block of R random vectors, column `r` from stream `r` (see
/// [`random_vector_column`]).
pub fn random_block_vector(nrows: usize, width: usize, seed: u64) -> BlockVector {
    let mut v = BlockVector::zeros(nrows, width);
    for r in 0..width {
        let col = random_vector_column(nrows, seed, r);
        for i in 0..nrows {
            v.set(i, r, col.get(i, 0));
        }
    }
    v
}
