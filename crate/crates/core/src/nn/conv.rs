use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{gemm, he_uniform, ParamLayout, ParamRange, SeqBatch};

/// Stride-1 temporal convolution with zero "same" padding, applied
/// independently to every sequence of a [`SeqBatch`].
///
/// The weight is stored as a `(kernel·in_ch) × out_ch` matrix so that the
/// forward pass is one GEMM over an im2col patch matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv1d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub weight: ParamRange,
    pub bias: ParamRange,
}

/// Patch matrix saved by the forward pass.
#[derive(Debug, Clone)]
pub struct Conv1dCache {
    patches: Vec<f64>,
    rows: usize,
}

impl Conv1d {
    pub fn register(layout: &mut ParamLayout, name: &str, in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        assert!(kernel % 2 == 1, "same padding needs an odd kernel");
        let weight = layout.add(alloc::format!("{name}.weight"), &[kernel * in_ch, out_ch]);
        let bias = layout.add(alloc::format!("{name}.bias"), &[out_ch]);
        Self {
            in_ch,
            out_ch,
            kernel,
            weight,
            bias,
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut [f64], rng: &mut R) {
        he_uniform(rng, self.weight.of_mut(params), self.kernel * self.in_ch);
        self.bias.of_mut(params).fill(0.0);
    }

    fn im2col(&self, x: &SeqBatch) -> Vec<f64> {
        let k = self.kernel;
        let c = self.in_ch;
        let pad = (k - 1) / 2;
        let width = k * c;
        let mut patches = vec![0.0; x.rows() * width];
        for (s, &len) in x.lens().iter().enumerate() {
            let start = x.starts()[s];
            for t in 0..len {
                let row = &mut patches[(start + t) * width..(start + t + 1) * width];
                for j in 0..k {
                    let src = t as isize + j as isize - pad as isize;
                    if src < 0 || src >= len as isize {
                        continue;
                    }
                    let src = start + src as usize;
                    row[j * c..(j + 1) * c].copy_from_slice(&x.data[src * c..(src + 1) * c]);
                }
            }
        }
        patches
    }

    pub fn forward(&self, params: &[f64], x: &SeqBatch) -> (SeqBatch, Conv1dCache) {
        assert_eq!(x.channels, self.in_ch, "conv input channels");
        let rows = x.rows();
        let patches = if self.kernel == 1 {
            x.data.clone()
        } else {
            self.im2col(x)
        };
        let mut out = Vec::with_capacity(rows * self.out_ch);
        let bias = self.bias.of(params);
        for _ in 0..rows {
            out.extend_from_slice(bias);
        }
        gemm(
            rows,
            self.kernel * self.in_ch,
            self.out_ch,
            &patches,
            false,
            self.weight.of(params),
            false,
            &mut out,
            true,
        );
        (
            SeqBatch::new(out, self.out_ch, x.lens().to_vec()),
            Conv1dCache { patches, rows },
        )
    }

    /// Forward pass without keeping the patch matrix.
    pub fn apply(&self, params: &[f64], x: &SeqBatch) -> SeqBatch {
        self.forward(params, x).0
    }

    /// Accumulates parameter gradients into `grads` (if given) and returns
    /// the gradient with respect to the input when `want_input` is set.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &Conv1dCache,
        input_layout: &SeqBatch,
        dy: &[f64],
        grads: Option<&mut [f64]>,
        want_input: bool,
    ) -> Option<Vec<f64>> {
        let rows = cache.rows;
        let width = self.kernel * self.in_ch;
        debug_assert_eq!(dy.len(), rows * self.out_ch);
        if let Some(g) = grads {
            gemm(
                width,
                rows,
                self.out_ch,
                &cache.patches,
                true,
                dy,
                false,
                self.weight.of_mut(g),
                true,
            );
            let gb = self.bias.of_mut(g);
            for row in dy.chunks(self.out_ch) {
                for (b, &d) in gb.iter_mut().zip(row) {
                    *b += d;
                }
            }
        }
        if !want_input {
            return None;
        }
        let mut dpatches = vec![0.0; rows * width];
        gemm(
            rows,
            self.out_ch,
            width,
            dy,
            false,
            self.weight.of(params),
            true,
            &mut dpatches,
            false,
        );
        if self.kernel == 1 {
            return Some(dpatches);
        }
        // col2im
        let k = self.kernel;
        let c = self.in_ch;
        let pad = (k - 1) / 2;
        let mut dx = vec![0.0; rows * c];
        for (s, &len) in input_layout.lens().iter().enumerate() {
            let start = input_layout.starts()[s];
            for t in 0..len {
                let row = &dpatches[(start + t) * width..(start + t + 1) * width];
                for j in 0..k {
                    let src = t as isize + j as isize - pad as isize;
                    if src < 0 || src >= len as isize {
                        continue;
                    }
                    let src = start + src as usize;
                    for (d, &v) in dx[src * c..(src + 1) * c].iter_mut().zip(&row[j * c..(j + 1) * c]) {
                        *d += v;
                    }
                }
            }
        }
        Some(dx)
    }
}
