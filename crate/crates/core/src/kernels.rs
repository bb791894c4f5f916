//! Computational kernels: plain SpM(M)V, the augmented SpMV (shift, scale,
//! AXPY and both scalar products fused into one matrix sweep), its blocked
//! SpMMV variant, and the BLAS-1 pieces of the unfused chain.
//!
//! Every kernel comes in a plain flavor (data-parallel over row or chunk
//! partitions, deterministic for a fixed thread count and partition) and a
//! `_counted` flavor that runs serially and charges a [`TrafficMeter`].
//! Flop charges follow the algorithmic convention used by the performance
//! model, so all stages are compared in the same currency.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::sparsemat::{BlockVector, CrsMatrix, SellMatrix, SparseMatrix};
use crate::traffic::{Meter, NoMeter, TrafficMeter};

type C = Complex64;

const ZERO: C = Complex64::new(0.0, 0.0);
const NEG_ONE: C = Complex64::new(-1.0, 0.0);

/// Worker layout for the data-parallel kernels: a thread count and optional
/// per-worker weights (heavier weight, larger row share).
#[derive(Clone, Debug)]
pub struct ExecConfig {
    threads: usize,
    weights: Option<Vec<f64>>,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig {
            threads: 1,
            weights: None,
        }
    }
}

impl ExecConfig {
    pub fn new(threads: usize) -> Self {
        ExecConfig {
            threads: threads.max(1),
            weights: None,
        }
    }

    pub fn with_weights(threads: usize, weights: Vec<f64>) -> Result<Self> {
        let threads = threads.max(1);
        if weights.len() != threads {
            return Err(Error::InvalidArgument(format!(
                "{} weights for {} workers",
                weights.len(),
                threads
            )));
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(
                "weights must be positive and finite".into(),
            ));
        }
        Ok(ExecConfig {
            threads,
            weights: Some(weights),
        })
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    /// Static split of `n_units` work units into one contiguous range per
    /// worker, proportional to the weights.
    pub fn partition(&self, n_units: usize) -> Vec<std::ops::Range<usize>> {
        let t = self.threads;
        let total: f64 = match &self.weights {
            Some(w) => w.iter().sum(),
            None => t as f64,
        };
        let mut bounds = Vec::with_capacity(t + 1);
        bounds.push(0usize);
        let mut cum = 0.0;
        for k in 0..t {
            cum += self.weights.as_ref().map_or(1.0, |w| w[k]);
            let at = ((cum / total) * n_units as f64).round() as usize;
            bounds.push(at.clamp(bounds[k], n_units));
        }
        *bounds.last_mut().unwrap() = n_units;
        (0..t).map(|k| bounds[k]..bounds[k + 1]).collect()
    }
}

/// Scalar products returned by the augmented kernels: per column,
/// `eta_even[r] = ⟨v_r|v_r⟩` and `eta_odd[r] = ⟨w_r|v_r⟩` with `w` taken
/// after the update.
#[derive(Clone, Debug)]
pub struct AugmentedResult {
    pub eta_even: Vec<C>,
    pub eta_odd: Vec<C>,
}

fn check_spmmv_shapes(h: &SparseMatrix, x: &BlockVector, y: &BlockVector) -> Result<()> {
    if h.ncols() != x.nrows() || h.nrows() != y.nrows() || x.width() != y.width() {
        return Err(Error::ShapeMismatch(format!(
            "spmmv of {}x{} matrix with input {}x{} and output {}x{}",
            h.nrows(),
            h.ncols(),
            x.nrows(),
            x.width(),
            y.nrows(),
            y.width()
        )));
    }
    Ok(())
}

fn check_aug_shapes(h: &SparseMatrix, v: &BlockVector, w: &BlockVector) -> Result<()> {
    if h.nrows() != h.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "augmented kernel needs a square matrix, got {}x{}",
            h.nrows(),
            h.ncols()
        )));
    }
    if h.ncols() != v.nrows() || !v.same_shape(w) {
        return Err(Error::ShapeMismatch(format!(
            "augmented kernel of {}x{} matrix with v {}x{} and w {}x{}",
            h.nrows(),
            h.ncols(),
            v.nrows(),
            v.width(),
            w.nrows(),
            w.width()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// inner loops
// ---------------------------------------------------------------------------

/// Raw pointer that may cross thread boundaries; each worker writes a
/// disjoint row set.
#[derive(Clone, Copy)]
struct RowsPtr(*mut C);
unsafe impl Send for RowsPtr {}

#[allow(clippy::too_many_arguments)]
fn spmmv_crs_rows<M: Meter>(
    m: &CrsMatrix,
    x: &[C],
    y: RowsPtr,
    rows: std::ops::Range<usize>,
    width: usize,
    meter: &mut M,
) {
    let row_ptrs = m.row_ptrs();
    let cols = m.col_indices();
    let vals = m.values();
    let arith = meter.arith();
    for i in rows {
        let (lo, hi) = (row_ptrs[i], row_ptrs[i + 1]);
        // SAFETY: caller hands out disjoint row ranges over a live buffer
        let yrow =
            unsafe { std::slice::from_raw_parts_mut(y.0.add(i * width), width) };
        yrow.fill(ZERO);
        for k in lo..hi {
            let col = cols[k] as usize;
            let hv = vals[k];
            if M::ACTIVE {
                meter.input_gather(col, width);
            }
            let xrow = &x[col * width..col * width + width];
            for r in 0..width {
                yrow[r] += hv * xrow[r];
            }
        }
        if M::ACTIVE {
            let len = (hi - lo) as u64;
            let wn = width as u64;
            meter.matrix_entries(len);
            meter.flops(wn * len * arith.flops_add, wn * len * arith.flops_mul);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn spmmv_sell_chunks<M: Meter>(
    m: &SellMatrix,
    x: &[C],
    y: RowsPtr,
    chunks: std::ops::Range<usize>,
    width: usize,
    meter: &mut M,
) {
    let c = m.chunk_height();
    let arith = meter.arith();
    for chunk in chunks {
        let base = m.chunk_offsets()[chunk];
        for lane in 0..c {
            let pos = chunk * c + lane;
            if pos >= m.nrows() {
                break;
            }
            let row = m.permutation()[pos] as usize;
            let len = m.row_lengths()[pos];
            // SAFETY: permutation is a bijection and chunk ranges are
            // disjoint, so no two workers touch the same row
            let yrow =
                unsafe { std::slice::from_raw_parts_mut(y.0.add(row * width), width) };
            yrow.fill(ZERO);
            for k in 0..len {
                let idx = base + k * c + lane;
                let col = m.col_indices()[idx] as usize;
                let hv = m.values()[idx];
                if M::ACTIVE {
                    meter.input_gather(col, width);
                }
                let xrow = &x[col * width..col * width + width];
                for r in 0..width {
                    yrow[r] += hv * xrow[r];
                }
            }
            if M::ACTIVE {
                let wn = width as u64;
                meter.matrix_entries(len as u64);
                meter.flops(
                    wn * len as u64 * arith.flops_add,
                    wn * len as u64 * arith.flops_mul,
                );
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn aug_crs_rows<M: Meter>(
    m: &CrsMatrix,
    scale2: C,
    neg_shift: C,
    v: &[C],
    w: RowsPtr,
    rows: std::ops::Range<usize>,
    width: usize,
    acc: &mut [C],
    eta_even: &mut [C],
    eta_odd: &mut [C],
    meter: &mut M,
) {
    let row_ptrs = m.row_ptrs();
    let cols = m.col_indices();
    let vals = m.values();
    let arith = meter.arith();
    for i in rows {
        let (lo, hi) = (row_ptrs[i], row_ptrs[i + 1]);
        acc.fill(ZERO);
        for k in lo..hi {
            let col = cols[k] as usize;
            let hv = vals[k];
            if M::ACTIVE {
                meter.input_gather(col, width);
            }
            let vrow = &v[col * width..col * width + width];
            for r in 0..width {
                acc[r] += hv * vrow[r];
            }
        }
        if M::ACTIVE {
            let len = (hi - lo) as u64;
            let wn = width as u64;
            meter.matrix_entries(len);
            meter.input_gather(i, width);
            meter.flops(
                wn * (len * arith.flops_add + 3 * arith.flops_add + arith.flops_add.div_ceil(2)),
                wn * (len * arith.flops_mul + 4 * arith.flops_mul + arith.flops_mul.div_ceil(2)),
            );
        }
        let vrow = &v[i * width..i * width + width];
        // SAFETY: disjoint row ranges per worker
        let wrow =
            unsafe { std::slice::from_raw_parts_mut(w.0.add(i * width), width) };
        for r in 0..width {
            let vi = vrow[r];
            let shifted = acc[r] + neg_shift * vi;
            let wnew = scale2 * shifted + NEG_ONE * wrow[r];
            wrow[r] = wnew;
            eta_even[r] += vi.conj() * vi;
            eta_odd[r] += wnew.conj() * vi;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn aug_sell_chunks<M: Meter>(
    m: &SellMatrix,
    scale2: C,
    neg_shift: C,
    v: &[C],
    w: RowsPtr,
    chunks: std::ops::Range<usize>,
    width: usize,
    acc: &mut [C],
    eta_even: &mut [C],
    eta_odd: &mut [C],
    meter: &mut M,
) {
    let c = m.chunk_height();
    let arith = meter.arith();
    for chunk in chunks {
        let base = m.chunk_offsets()[chunk];
        for lane in 0..c {
            let pos = chunk * c + lane;
            if pos >= m.nrows() {
                break;
            }
            let row = m.permutation()[pos] as usize;
            let len = m.row_lengths()[pos];
            acc.fill(ZERO);
            for k in 0..len {
                let idx = base + k * c + lane;
                let col = m.col_indices()[idx] as usize;
                let hv = m.values()[idx];
                if M::ACTIVE {
                    meter.input_gather(col, width);
                }
                let vrow = &v[col * width..col * width + width];
                for r in 0..width {
                    acc[r] += hv * vrow[r];
                }
            }
            if M::ACTIVE {
                let wn = width as u64;
                meter.matrix_entries(len as u64);
                meter.input_gather(row, width);
                meter.flops(
                    wn * (len as u64 * arith.flops_add
                        + 3 * arith.flops_add
                        + arith.flops_add.div_ceil(2)),
                    wn * (len as u64 * arith.flops_mul
                        + 4 * arith.flops_mul
                        + arith.flops_mul.div_ceil(2)),
                );
            }
            let vrow = &v[row * width..row * width + width];
            // SAFETY: permutation bijective, chunk ranges disjoint
            let wrow =
                unsafe { std::slice::from_raw_parts_mut(w.0.add(row * width), width) };
            for r in 0..width {
                let vi = vrow[r];
                let shifted = acc[r] + neg_shift * vi;
                let wnew = scale2 * shifted + NEG_ONE * wrow[r];
                wrow[r] = wnew;
                eta_even[r] += vi.conj() * vi;
                eta_odd[r] += wnew.conj() * vi;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// dispatchers
// ---------------------------------------------------------------------------

fn work_units(h: &SparseMatrix) -> usize {
    match h {
        SparseMatrix::Crs(m) => m.nrows(),
        SparseMatrix::Sell(m) => m.n_chunks(),
    }
}

fn spmmv_dispatch<M: Meter>(
    h: &SparseMatrix,
    x: &BlockVector,
    y: &mut BlockVector,
    exec: &ExecConfig,
    meter: &mut M,
) -> Result<()> {
    check_spmmv_shapes(h, x, y)?;
    let width = x.width();
    if M::ACTIVE {
        meter.input_unique((x.nrows() * width) as u64);
        meter.stream_writes((y.nrows() * width) as u64);
    }
    let yptr = RowsPtr(y.as_mut_slice().as_mut_ptr());
    let units = work_units(h);
    let threads = if M::ACTIVE { 1 } else { exec.threads() };
    if threads == 1 {
        match h {
            SparseMatrix::Crs(m) => spmmv_crs_rows(m, x.as_slice(), yptr, 0..units, width, meter),
            SparseMatrix::Sell(m) => {
                spmmv_sell_chunks(m, x.as_slice(), yptr, 0..units, width, meter)
            }
        }
        return Ok(());
    }
    let parts = exec.partition(units);
    std::thread::scope(|s| {
        for range in parts {
            let xs = x.as_slice();
            s.spawn(move || match h {
                SparseMatrix::Crs(m) => {
                    spmmv_crs_rows(m, xs, yptr, range, width, &mut NoMeter)
                }
                SparseMatrix::Sell(m) => {
                    spmmv_sell_chunks(m, xs, yptr, range, width, &mut NoMeter)
                }
            });
        }
    });
    Ok(())
}

fn aug_dispatch<M: Meter>(
    h: &SparseMatrix,
    scale: f64,
    shift: f64,
    v: &BlockVector,
    w: &mut BlockVector,
    exec: &ExecConfig,
    meter: &mut M,
) -> Result<AugmentedResult> {
    check_aug_shapes(h, v, w)?;
    let width = v.width();
    let n = v.nrows();
    if M::ACTIVE {
        meter.input_unique((n * width) as u64);
        meter.stream_reads((n * width) as u64);
        meter.stream_writes((n * width) as u64);
    }
    let scale2 = C::new(2.0 * scale, 0.0);
    let neg_shift = C::new(-shift, 0.0);
    let wptr = RowsPtr(w.as_mut_slice().as_mut_ptr());
    let units = work_units(h);
    let threads = if M::ACTIVE { 1 } else { exec.threads() };

    if threads == 1 {
        let mut acc = vec![ZERO; width];
        let mut eta_even = vec![ZERO; width];
        let mut eta_odd = vec![ZERO; width];
        match h {
            SparseMatrix::Crs(m) => aug_crs_rows(
                m,
                scale2,
                neg_shift,
                v.as_slice(),
                wptr,
                0..units,
                width,
                &mut acc,
                &mut eta_even,
                &mut eta_odd,
                meter,
            ),
            SparseMatrix::Sell(m) => aug_sell_chunks(
                m,
                scale2,
                neg_shift,
                v.as_slice(),
                wptr,
                0..units,
                width,
                &mut acc,
                &mut eta_even,
                &mut eta_odd,
                meter,
            ),
        }
        return Ok(AugmentedResult { eta_even, eta_odd });
    }

    let parts = exec.partition(units);
    let partials: Vec<(Vec<C>, Vec<C>)> = std::thread::scope(|s| {
        let handles: Vec<_> = parts
            .into_iter()
            .map(|range| {
                let vs = v.as_slice();
                s.spawn(move || {
                    let mut acc = vec![ZERO; width];
                    let mut eta_even = vec![ZERO; width];
                    let mut eta_odd = vec![ZERO; width];
                    match h {
                        SparseMatrix::Crs(m) => aug_crs_rows(
                            m,
                            scale2,
                            neg_shift,
                            vs,
                            wptr,
                            range,
                            width,
                            &mut acc,
                            &mut eta_even,
                            &mut eta_odd,
                            &mut NoMeter,
                        ),
                        SparseMatrix::Sell(m) => aug_sell_chunks(
                            m,
                            scale2,
                            neg_shift,
                            vs,
                            wptr,
                            range,
                            width,
                            &mut acc,
                            &mut eta_even,
                            &mut eta_odd,
                            &mut NoMeter,
                        ),
                    }
                    (eta_even, eta_odd)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });

    // reduce partial dot products in fixed worker order
    let mut eta_even = vec![ZERO; width];
    let mut eta_odd = vec![ZERO; width];
    for (pe, po) in partials {
        for r in 0..width {
            eta_even[r] += pe[r];
            eta_odd[r] += po[r];
        }
    }
    Ok(AugmentedResult { eta_even, eta_odd })
}

// ---------------------------------------------------------------------------
// public kernels
// ---------------------------------------------------------------------------

/// `y = H·x` for a single vector; `x` must have width 1.
pub fn spmv(h: &SparseMatrix, x: &BlockVector, exec: &ExecConfig) -> Result<BlockVector> {
    if x.width() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "spmv expects width 1, got {}",
            x.width()
        )));
    }
    let mut y = BlockVector::zeros(h.nrows(), 1);
    spmmv_dispatch(h, x, &mut y, exec, &mut NoMeter)?;
    Ok(y)
}

/// `Y = H·X` over all columns in one matrix sweep.
pub fn spmmv(
    h: &SparseMatrix,
    x: &BlockVector,
    y: &mut BlockVector,
    exec: &ExecConfig,
) -> Result<()> {
    spmmv_dispatch(h, x, y, exec, &mut NoMeter)
}

/// Counted `Y = H·X`; runs serially and charges `meter`.
pub fn spmmv_counted(
    h: &SparseMatrix,
    x: &BlockVector,
    y: &mut BlockVector,
    meter: &mut TrafficMeter,
) -> Result<()> {
    spmmv_dispatch(h, x, y, &ExecConfig::default(), meter)
}

/// One fused sweep for a single column: `w ← 2·scale·(H - shift·1)·v - w`,
/// returning `⟨v|v⟩` and `⟨w_new|v⟩` computed on the fly.
pub fn aug_spmv(
    h: &SparseMatrix,
    scale: f64,
    shift: f64,
    v: &BlockVector,
    w: &mut BlockVector,
    exec: &ExecConfig,
) -> Result<AugmentedResult> {
    if v.width() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "aug_spmv expects width 1, got {}",
            v.width()
        )));
    }
    aug_dispatch(h, scale, shift, v, w, exec, &mut NoMeter)
}

pub fn aug_spmv_counted(
    h: &SparseMatrix,
    scale: f64,
    shift: f64,
    v: &BlockVector,
    w: &mut BlockVector,
    meter: &mut TrafficMeter,
) -> Result<AugmentedResult> {
    if v.width() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "aug_spmv expects width 1, got {}",
            v.width()
        )));
    }
    aug_dispatch(h, scale, shift, v, w, &ExecConfig::default(), meter)
}

/// Blocked fused sweep: column-wise identical to [`aug_spmv`] but reads the
/// matrix once for all R columns.
pub fn aug_spmmv(
    h: &SparseMatrix,
    scale: f64,
    shift: f64,
    v: &BlockVector,
    w: &mut BlockVector,
    exec: &ExecConfig,
) -> Result<AugmentedResult> {
    aug_dispatch(h, scale, shift, v, w, exec, &mut NoMeter)
}

pub fn aug_spmmv_counted(
    h: &SparseMatrix,
    scale: f64,
    shift: f64,
    v: &BlockVector,
    w: &mut BlockVector,
    meter: &mut TrafficMeter,
) -> Result<AugmentedResult> {
    aug_dispatch(h, scale, shift, v, w, &ExecConfig::default(), meter)
}

// ---------------------------------------------------------------------------
// BLAS-1 pieces of the unfused chain
// ---------------------------------------------------------------------------

fn split_rows<'a>(
    data: &'a mut [C],
    parts: &[std::ops::Range<usize>],
    width: usize,
) -> Vec<&'a mut [C]> {
    let mut out = Vec::with_capacity(parts.len());
    let mut rest = data;
    let mut offset = 0usize;
    for p in parts {
        let take = (p.end - p.start) * width;
        debug_assert_eq!(p.start * width, offset);
        let (head, tail) = rest.split_at_mut(take);
        out.push(head);
        rest = tail;
        offset += take;
    }
    out
}

fn blas1_shape_check(x: &BlockVector, y: &BlockVector, what: &str) -> Result<()> {
    if !x.same_shape(y) {
        return Err(Error::ShapeMismatch(format!(
            "{what} of {}x{} with {}x{}",
            x.nrows(),
            x.width(),
            y.nrows(),
            y.width()
        )));
    }
    Ok(())
}

fn axpy_impl<M: Meter>(alpha: C, x: &BlockVector, y: &mut BlockVector, exec: &ExecConfig, meter: &mut M) -> Result<()> {
    blas1_shape_check(x, y, "axpy")?;
    let width = x.width();
    let elems = (x.nrows() * width) as u64;
    if M::ACTIVE {
        let arith = meter.arith();
        meter.stream_reads(2 * elems);
        meter.stream_writes(elems);
        meter.flops(elems * arith.flops_add, elems * arith.flops_mul);
    }
    let threads = if M::ACTIVE { 1 } else { exec.threads() };
    if threads == 1 {
        for (yi, xi) in y.as_mut_slice().iter_mut().zip(x.as_slice()) {
            *yi += alpha * xi;
        }
        return Ok(());
    }
    let parts = exec.partition(x.nrows());
    let chunks = split_rows(y.as_mut_slice(), &parts, width);
    std::thread::scope(|s| {
        for (p, chunk) in parts.iter().zip(chunks) {
            let xs = &x.as_slice()[p.start * width..p.end * width];
            s.spawn(move || {
                for (yi, xi) in chunk.iter_mut().zip(xs) {
                    *yi += alpha * xi;
                }
            });
        }
    });
    Ok(())
}

/// `y ← y + alpha·x` per element.
pub fn axpy(alpha: C, x: &BlockVector, y: &mut BlockVector, exec: &ExecConfig) -> Result<()> {
    axpy_impl(alpha, x, y, exec, &mut NoMeter)
}

pub fn axpy_counted(alpha: C, x: &BlockVector, y: &mut BlockVector, meter: &mut TrafficMeter) -> Result<()> {
    axpy_impl(alpha, x, y, &ExecConfig::default(), meter)
}

fn scal_impl<M: Meter>(alpha: C, x: &mut BlockVector, exec: &ExecConfig, meter: &mut M) {
    let width = x.width();
    let elems = (x.nrows() * width) as u64;
    if M::ACTIVE {
        let arith = meter.arith();
        meter.stream_reads(elems);
        meter.stream_writes(elems);
        meter.flops(0, elems * arith.flops_mul);
    }
    let threads = if M::ACTIVE { 1 } else { exec.threads() };
    if threads == 1 {
        for xi in x.as_mut_slice() {
            *xi = alpha * *xi;
        }
        return;
    }
    let parts = exec.partition(x.nrows());
    let chunks = split_rows(x.as_mut_slice(), &parts, width);
    std::thread::scope(|s| {
        for chunk in chunks {
            s.spawn(move || {
                for xi in chunk.iter_mut() {
                    *xi = alpha * *xi;
                }
            });
        }
    });
}

/// `x ← alpha·x` per element.
pub fn scal(alpha: C, x: &mut BlockVector, exec: &ExecConfig) {
    scal_impl(alpha, x, exec, &mut NoMeter);
}

pub fn scal_counted(alpha: C, x: &mut BlockVector, meter: &mut TrafficMeter) {
    scal_impl(alpha, x, &ExecConfig::default(), meter);
}

fn nrm2_impl<M: Meter>(x: &BlockVector, exec: &ExecConfig, meter: &mut M) -> Vec<f64> {
    let width = x.width();
    let elems = (x.nrows() * width) as u64;
    if M::ACTIVE {
        let arith = meter.arith();
        meter.stream_reads(elems);
        meter.flops(
            elems * arith.flops_add.div_ceil(2),
            elems * arith.flops_mul.div_ceil(2),
        );
    }
    let threads = if M::ACTIVE { 1 } else { exec.threads() };
    let serial = |rows: std::ops::Range<usize>| {
        let mut acc = vec![0.0f64; width];
        for i in rows {
            for r in 0..width {
                acc[r] += x.get(i, r).norm_sqr();
            }
        }
        acc
    };
    if threads == 1 {
        return serial(0..x.nrows());
    }
    let parts = exec.partition(x.nrows());
    let partials: Vec<Vec<f64>> = std::thread::scope(|s| {
        let handles: Vec<_> = parts.into_iter().map(|p| s.spawn(move || serial(p))).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut acc = vec![0.0f64; width];
    for p in partials {
        for r in 0..width {
            acc[r] += p[r];
        }
    }
    acc
}

/// Column-wise squared norms `⟨x_r|x_r⟩`.
pub fn nrm2(x: &BlockVector, exec: &ExecConfig) -> Vec<f64> {
    nrm2_impl(x, exec, &mut NoMeter)
}

pub fn nrm2_counted(x: &BlockVector, meter: &mut TrafficMeter) -> Vec<f64> {
    nrm2_impl(x, &ExecConfig::default(), meter)
}

fn dot_impl<M: Meter>(x: &BlockVector, y: &BlockVector, exec: &ExecConfig, meter: &mut M) -> Result<Vec<C>> {
    blas1_shape_check(x, y, "dot")?;
    let width = x.width();
    let elems = (x.nrows() * width) as u64;
    if M::ACTIVE {
        let arith = meter.arith();
        meter.stream_reads(2 * elems);
        meter.flops(elems * arith.flops_add, elems * arith.flops_mul);
    }
    let threads = if M::ACTIVE { 1 } else { exec.threads() };
    let serial = |rows: std::ops::Range<usize>| {
        let mut acc = vec![ZERO; width];
        for i in rows {
            for r in 0..width {
                acc[r] += x.get(i, r).conj() * y.get(i, r);
            }
        }
        acc
    };
    if threads == 1 {
        return Ok(serial(0..x.nrows()));
    }
    let parts = exec.partition(x.nrows());
    let partials: Vec<Vec<C>> = std::thread::scope(|s| {
        let handles: Vec<_> = parts.into_iter().map(|p| s.spawn(move || serial(p))).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut acc = vec![ZERO; width];
    for p in partials {
        for r in 0..width {
            acc[r] += p[r];
        }
    }
    Ok(acc)
}

/// Column-wise scalar products `⟨x_r|y_r⟩` (conjugate on `x`).
pub fn dot(x: &BlockVector, y: &BlockVector, exec: &ExecConfig) -> Result<Vec<C>> {
    dot_impl(x, y, exec, &mut NoMeter)
}

pub fn dot_counted(x: &BlockVector, y: &BlockVector, meter: &mut TrafficMeter) -> Result<Vec<C>> {
    dot_impl(x, y, &ExecConfig::default(), meter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_hamiltonian, Domain, PotentialSpec};
    use crate::oracle;
    use crate::perfmodel::ArithmeticSpec;
    use crate::sparsemat::random_block_vector;

    fn test_matrix() -> SparseMatrix {
        let d = Domain::new(4, 4, 4, PotentialSpec::Zero).unwrap();
        build_hamiltonian(&d).unwrap()
    }

    #[test]
    fn partition_respects_weights() {
        let exec = ExecConfig::with_weights(2, vec![1.0, 3.0]).unwrap();
        assert_eq!(exec.partition(100), vec![0..25, 25..100]);
        let even = ExecConfig::new(4);
        let parts = even.partition(103);
        assert_eq!(parts.len(), 4);
        assert_eq!(parts.last().unwrap().end, 103);
    }

    #[test]
    fn weights_are_validated() {
        assert!(ExecConfig::with_weights(2, vec![1.0]).is_err());
        assert!(ExecConfig::with_weights(2, vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn spmv_identity_is_identity() {
        let eye = SparseMatrix::Crs(CrsMatrix::identity(16));
        let x = random_block_vector(16, 1, 3);
        let y = spmv(&eye, &x, &ExecConfig::default()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn spmv_matches_dense_column() {
        let d = Domain::new(2, 2, 2, PotentialSpec::Zero).unwrap();
        let h = build_hamiltonian(&d).unwrap();
        let dense = oracle::dense_from_sparse(&h);
        let e0 = BlockVector::from_fn(h.nrows(), 1, |i, _| {
            if i == 0 { C::new(1.0, 0.0) } else { ZERO }
        });
        let y = spmv(&h, &e0, &ExecConfig::default()).unwrap();
        for i in 0..h.nrows() {
            assert!((y.get(i, 0) - dense[(i, 0)]).norm() < 1e-15);
        }
    }

    #[test]
    fn aug_spmv_hand_case() {
        // identity H, scale 1/2, shift 0, v = w = ones: w_new = v - w = 0
        let n = 8;
        let eye = SparseMatrix::Crs(CrsMatrix::identity(n));
        let v = BlockVector::from_fn(n, 1, |_, _| C::new(1.0, 0.0));
        let mut w = v.clone();
        let res = aug_spmv(&eye, 0.5, 0.0, &v, &mut w, &ExecConfig::default()).unwrap();
        for i in 0..n {
            assert_eq!(w.get(i, 0), ZERO);
        }
        assert_eq!(res.eta_even[0], C::new(n as f64, 0.0));
        assert_eq!(res.eta_odd[0], ZERO);
    }

    #[test]
    fn aug_spmv_equals_unfused_chain() {
        let h = test_matrix();
        let n = h.nrows();
        let exec = ExecConfig::default();
        let (a, b) = (0.11, -0.37);
        let v = random_block_vector(n, 1, 5);
        let w0 = random_block_vector(n, 1, 6);

        let mut w_fused = w0.clone();
        let res = aug_spmv(&h, a, b, &v, &mut w_fused, &exec).unwrap();

        // spmv, axpy, scal, axpy, nrm2, dot
        let mut u = spmv(&h, &v, &exec).unwrap();
        axpy(C::new(-b, 0.0), &v, &mut u, &exec).unwrap();
        let mut w_chain = w0.clone();
        scal(NEG_ONE, &mut w_chain, &exec);
        axpy(C::new(2.0 * a, 0.0), &u, &mut w_chain, &exec).unwrap();
        let even = nrm2(&v, &exec);
        let odd = dot(&w_chain, &v, &exec).unwrap();

        for i in 0..n {
            let d = (w_fused.get(i, 0) - w_chain.get(i, 0)).norm();
            assert!(d <= 1e-13 * w_chain.get(i, 0).norm().max(1.0));
        }
        assert!((res.eta_even[0].re - even[0]).abs() <= 1e-13 * even[0].abs());
        assert!((res.eta_odd[0] - odd[0]).norm() <= 1e-13 * odd[0].norm().max(1.0));
    }

    #[test]
    fn aug_result_even_part_is_real() {
        let h = test_matrix();
        let v = random_block_vector(h.nrows(), 4, 9);
        let mut w = random_block_vector(h.nrows(), 4, 10);
        let res = aug_spmmv(&h, 0.2, 0.1, &v, &mut w, &ExecConfig::default()).unwrap();
        for e in &res.eta_even {
            assert!(e.im.abs() <= 1e-12 * e.norm());
            assert!(e.re >= 0.0);
        }
    }

    #[test]
    fn blocked_kernel_matches_per_column_runs() {
        let h = test_matrix();
        let n = h.nrows();
        let exec = ExecConfig::default();
        let (a, b) = (0.45, 0.08);
        let r = 8;
        let v = random_block_vector(n, r, 21);
        let w0 = random_block_vector(n, r, 22);

        let mut w_block = w0.clone();
        let res = aug_spmmv(&h, a, b, &v, &mut w_block, &exec).unwrap();

        for c in 0..r {
            let vc = v.extract_column(c);
            let mut wc = w0.extract_column(c);
            let rc = aug_spmv(&h, a, b, &vc, &mut wc, &exec).unwrap();
            for i in 0..n {
                let want = wc.get(i, 0);
                let got = w_block.get(i, c);
                assert!((got - want).norm() <= 1e-12 * want.norm().max(1.0));
            }
            assert!((res.eta_even[c] - rc.eta_even[0]).norm() <= 1e-12 * rc.eta_even[0].norm());
            assert!(
                (res.eta_odd[c] - rc.eta_odd[0]).norm()
                    <= 1e-12 * rc.eta_odd[0].norm().max(1.0)
            );
        }
    }

    #[test]
    fn blocked_width_one_bit_for_bit_with_aug_spmv() {
        let h = test_matrix();
        let n = h.nrows();
        let exec = ExecConfig::default();
        let v = random_block_vector(n, 1, 31);
        let w0 = random_block_vector(n, 1, 32);
        let mut w1 = w0.clone();
        let mut w2 = w0.clone();
        let r1 = aug_spmv(&h, 0.3, -0.2, &v, &mut w1, &exec).unwrap();
        let r2 = aug_spmmv(&h, 0.3, -0.2, &v, &mut w2, &exec).unwrap();
        assert_eq!(w1, w2);
        assert_eq!(r1.eta_even, r2.eta_even);
        assert_eq!(r1.eta_odd, r2.eta_odd);

        let arith = ArithmeticSpec::double_complex();
        let mut m1 = TrafficMeter::perfect(arith);
        let mut m2 = TrafficMeter::perfect(arith);
        let mut wa = w0.clone();
        let mut wb = w0.clone();
        aug_spmv_counted(&h, 0.3, -0.2, &v, &mut wa, &mut m1).unwrap();
        aug_spmmv_counted(&h, 0.3, -0.2, &v, &mut wb, &mut m2).unwrap();
        assert_eq!(m1.counters(), m2.counters());
    }

    #[test]
    fn augmented_with_neutral_params_is_plain_product() {
        let h = test_matrix();
        let n = h.nrows();
        let exec = ExecConfig::default();
        let v = random_block_vector(n, 3, 41);
        let mut w = BlockVector::zeros(n, 3);
        aug_spmmv(&h, 0.5, 0.0, &v, &mut w, &exec).unwrap();
        let mut y = BlockVector::zeros(n, 3);
        spmmv(&h, &v, &mut y, &exec).unwrap();
        for i in 0..n {
            for r in 0..3 {
                assert!((w.get(i, r) - y.get(i, r)).norm() <= 1e-14 * y.get(i, r).norm().max(1.0));
            }
        }
    }

    #[test]
    fn column_permutation_permutes_outputs() {
        let h = test_matrix();
        let n = h.nrows();
        let exec = ExecConfig::default();
        let r = 4;
        let perm = [2usize, 0, 3, 1];
        let v = random_block_vector(n, r, 51);
        let w0 = random_block_vector(n, r, 52);
        let vp = BlockVector::from_fn(n, r, |i, c| v.get(i, perm[c]));
        let w0p = BlockVector::from_fn(n, r, |i, c| w0.get(i, perm[c]));

        let mut w = w0.clone();
        let res = aug_spmmv(&h, 0.21, 0.05, &v, &mut w, &exec).unwrap();
        let mut wp = w0p.clone();
        let resp = aug_spmmv(&h, 0.21, 0.05, &vp, &mut wp, &exec).unwrap();

        for c in 0..r {
            assert_eq!(resp.eta_even[c], res.eta_even[perm[c]]);
            assert_eq!(resp.eta_odd[c], res.eta_odd[perm[c]]);
            for i in 0..n {
                assert_eq!(wp.get(i, c), w.get(i, perm[c]));
            }
        }
    }

    #[test]
    fn threaded_runs_are_deterministic_and_weighted_split_agrees() {
        let h = test_matrix();
        let n = h.nrows();
        let v = random_block_vector(n, 2, 61);
        let w0 = random_block_vector(n, 2, 62);

        let run = |exec: &ExecConfig| {
            let mut w = w0.clone();
            let res = aug_spmmv(&h, 0.33, -0.11, &v, &mut w, exec).unwrap();
            (w, res)
        };
        let (w_a, r_a) = run(&ExecConfig::new(3));
        let (w_b, r_b) = run(&ExecConfig::new(3));
        assert_eq!(w_a, w_b);
        assert_eq!(r_a.eta_even, r_b.eta_even);
        assert_eq!(r_a.eta_odd, r_b.eta_odd);

        let weighted = ExecConfig::with_weights(2, vec![1.0, 3.0]).unwrap();
        let (w_c, _) = run(&weighted);
        for i in 0..n {
            for r in 0..2 {
                let d = (w_c.get(i, r) - w_a.get(i, r)).norm();
                assert!(d <= 1e-13 * w_a.get(i, r).norm().max(1.0));
            }
        }
    }

    #[test]
    fn sell_spmv_matches_crs_for_random_vectors() {
        let d = Domain::new(4, 4, 4, PotentialSpec::Zero).unwrap();
        let h = build_hamiltonian(&d).unwrap();
        let sell = h.to_sell(32, 128).unwrap();
        let exec = ExecConfig::default();
        for seed in 0..10 {
            let x = random_block_vector(h.nrows(), 1, 100 + seed);
            let y_crs = spmv(&h, &x, &exec).unwrap();
            let y_sell = spmv(&sell, &x, &exec).unwrap();
            for i in 0..h.nrows() {
                assert_eq!(y_crs.get(i, 0), y_sell.get(i, 0));
            }
        }
    }

    #[test]
    fn counted_kernels_match_closed_forms() {
        let d = Domain::new(8, 8, 8, PotentialSpec::Zero).unwrap();
        let h = build_hamiltonian(&d).unwrap();
        let n = h.nrows() as u64;
        let nnz = h.nnz() as u64;
        let arith = ArithmeticSpec::double_complex();
        let (sd, si) = (arith.data_bytes, arith.index_bytes);

        let x = random_block_vector(h.nrows(), 1, 70);
        let mut y = BlockVector::zeros(h.nrows(), 1);
        let mut meter = TrafficMeter::perfect(arith);
        spmmv_counted(&h, &x, &mut y, &mut meter).unwrap();
        let c = meter.counters();
        assert_eq!(c.total_bytes(), nnz * (sd + si) + 2 * n * sd);
        assert_eq!(c.total_flops(), nnz * (arith.flops_add + arith.flops_mul));

        for r in [1u64, 4, 8] {
            let v = random_block_vector(h.nrows(), r as usize, 71);
            let mut w = random_block_vector(h.nrows(), r as usize, 72);
            let mut meter = TrafficMeter::perfect(arith);
            aug_spmmv_counted(&h, 0.4, 0.1, &v, &mut w, &mut meter).unwrap();
            let c = meter.counters();
            assert_eq!(c.total_bytes(), nnz * (sd + si) + 3 * r * n * sd);
            let vec_flops = 7 * arith.flops_add / 2 + 9 * arith.flops_mul / 2;
            assert_eq!(
                c.total_flops(),
                r * (nnz * (arith.flops_add + arith.flops_mul) + n * vec_flops)
            );
        }
    }

    #[test]
    fn llc_simulation_omega_behaviour() {
        let d = Domain::new(8, 8, 4, PotentialSpec::Zero).unwrap();
        let h = build_hamiltonian(&d).unwrap();
        let n = h.nrows();
        let arith = ArithmeticSpec::double_complex();

        let omega_for = |r: usize, capacity: u64| {
            let v = random_block_vector(n, r, 80);
            let mut w = random_block_vector(n, r, 81);
            let mut perfect = TrafficMeter::perfect(arith);
            aug_spmmv_counted(&h, 0.4, 0.0, &v, &mut w.clone(), &mut perfect).unwrap();
            let mut sim = TrafficMeter::llc_sim(arith, capacity);
            aug_spmmv_counted(&h, 0.4, 0.0, &v, &mut w, &mut sim).unwrap();
            sim.counters().total_bytes() as f64 / perfect.counters().total_bytes() as f64
        };

        // capacity beyond the working set: nothing is evicted
        let big = 64 * 1024 * 1024;
        assert_eq!(omega_for(2, big), 1.0);

        // a tiny cache forces re-reads
        let small = 16 * 1024;
        assert!(omega_for(2, small) > 1.0);

        // inflation does not decrease with the block width
        let mut last = 0.0;
        for r in [1usize, 2, 4, 8] {
            let o = omega_for(r, small);
            assert!(o >= last - 1e-12, "omega dropped from {last} to {o} at R={r}");
            last = o;
        }
    }
}
