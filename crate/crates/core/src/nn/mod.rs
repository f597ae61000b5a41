//! Minimal building blocks for stride-free temporal convolution networks.
//!
//! Parameters of a model live in one flat `Vec<f64>`; a [`ParamLayout`]
//! names slices of it. Gradients use the same layout, which keeps the
//! optimizer, freezing and checkpointing independent of the architecture.

mod conv;
mod optim;

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use conv::{Conv1d, Conv1dCache};
pub use optim::Adam;

/// A contiguous slice of a flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamRange {
    pub offset: usize,
    pub len: usize,
}

impl ParamRange {
    pub fn of<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.offset..self.offset + self.len]
    }

    pub fn of_mut<'a>(&self, params: &'a mut [f64]) -> &'a mut [f64] {
        &mut params[self.offset..self.offset + self.len]
    }

    pub fn end(&self) -> usize {
        self.offset + self.len
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub range: ParamRange,
}

/// Named tensors packed into one flat buffer.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamRange {
        let len = shape.iter().product();
        let range = ParamRange { offset: self.total, len };
        self.entries.push(ParamEntry {
            name: name.into(),
            shape: shape.to_vec(),
            range,
        });
        self.total += len;
        range
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    /// Ranges of all entries whose name starts with `prefix`.
    pub fn ranges_with_prefix(&self, prefix: &str) -> Vec<ParamRange> {
        self.entries
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .map(|e| e.range)
            .collect()
    }
}

/// Variable-length sequences of `channels`-dimensional frames stored back to
/// back, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqBatch {
    pub data: Vec<f64>,
    pub channels: usize,
    lens: Vec<usize>,
    starts: Vec<usize>,
}

impl SeqBatch {
    pub fn new(data: Vec<f64>, channels: usize, lens: Vec<usize>) -> Self {
        let mut starts = Vec::with_capacity(lens.len());
        let mut acc = 0;
        for &l in &lens {
            starts.push(acc);
            acc += l;
        }
        assert_eq!(data.len(), acc * channels, "batch data does not match lengths");
        Self {
            data,
            channels,
            lens,
            starts,
        }
    }

    pub fn zeros_like_layout(&self, channels: usize) -> Self {
        Self::new(alloc::vec![0.0; self.rows() * channels], channels, self.lens.clone())
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.channels.max(1)
    }

    pub fn lens(&self) -> &[usize] {
        &self.lens
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn sequences(&self) -> usize {
        self.lens.len()
    }

    /// Rows of sequence `i`.
    pub fn seq(&self, i: usize) -> &[f64] {
        let s = self.starts[i] * self.channels;
        &self.data[s..s + self.lens[i] * self.channels]
    }
}

/// C (m×n) = A (m×k) · B (k×n) + beta·C, all row-major, with optional
/// transposes expressed through strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    // strides of the logical (row, col) views
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices are exactly m·k, k·n and m·n long and the strides
    // describe row-major (or transposed row-major) views within them.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn relu_inplace(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes `grad` where the ReLU output was not positive.
pub fn relu_backward(output: &[f64], grad: &mut [f64]) {
    for (g, &o) in grad.iter_mut().zip(output) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Row-wise softmax, max-shifted.
pub fn softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut sum = 0.0;
        for &v in row {
            let e = libm::exp(v - max);
            sum += e;
            out.push(e);
        }
        for p in &mut out[start..] {
            *p /= sum;
        }
    }
    out
}

/// Uniform initialization in ±sqrt(6 / fan_in).
pub fn he_uniform<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64], fan_in: usize) {
    let a = libm::sqrt(6.0 / fan_in as f64);
    for v in out {
        *v = rng.random_range(-a..a);
    }
}

/// Lookup of rows `ids` from a `rows × dim` table.
pub fn embed(table: &[f64], dim: usize, ids: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(ids.len() * dim);
    for &i in ids {
        out.extend_from_slice(&table[i * dim..(i + 1) * dim]);
    }
    out
}

/// Scatter-add of per-row gradients back into an embedding table gradient.
pub fn embed_backward(grad_table: &mut [f64], dim: usize, ids: &[usize], grad_rows: &[f64]) {
    for (r, &i) in ids.iter().enumerate() {
        for (g, &d) in grad_table[i * dim..(i + 1) * dim]
            .iter_mut()
            .zip(&grad_rows[r * dim..(r + 1) * dim])
        {
            *g += d;
        }
    }
}

/// FNV-1a over the bit patterns of a parameter vector.
pub fn params_fingerprint(params: &[f64]) -> u64 {
    let mut h = crate::types::Fnv::new();
    for p in params {
        h.write(&p.to_bits().to_le_bytes());
    }
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn gemm_transposes() {
        // A = [[1,2,3],[4,5,6]] (2×3), B = [[1,0],[0,1],[1,1]] (3×2)
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut c = [0.0; 4];
        gemm(2, 3, 2, &a, false, &b, false, &mut c, false);
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);
        // Aᵀ·A via transpose flag: (3×2)(2×3)
        let mut c = [0.0; 9];
        gemm(3, 2, 3, &a, true, &a, false, &mut c, false);
        assert_eq!(c, [17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]);
        // A·Aᵀ (2×2), accumulated onto ones
        let mut c = [1.0; 4];
        gemm(2, 3, 2, &a, false, &a, true, &mut c, true);
        assert_eq!(c, [15.0, 33.0, 33.0, 78.0]);
    }

    #[test]
    fn softmax_is_stochastic() {
        let p = softmax_rows(&[1000.0, 0.0, -5.0, 1.0, 2.0, 3.0], 3);
        for row in p.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(p[0] > 0.999);
    }

    #[test]
    fn layout_ranges() {
        let mut l = ParamLayout::new();
        let a = l.add("enc.w", &[3, 4]);
        let b = l.add("dec.w", &[2]);
        assert_eq!((a.offset, a.len, b.offset, b.len), (0, 12, 12, 2));
        assert_eq!(l.ranges_with_prefix("dec"), vec![b]);
        assert_eq!(l.total(), 14);
    }
}
