//! Frame-level phone classifier.
//!
//! A stack of stride-1 convolution blocks followed by a per-frame softmax
//! head, so the output has exactly one posterior row per input frame. Its
//! input gradient is available with parameters held fixed, which is how the
//! consistency term reaches the acoustic model.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, shape_err, Error, Result};
use crate::loss::TruthPosteriorMap;
use crate::nn::{params_fingerprint, relu_backward, relu_inplace, softmax_rows, Adam, Conv1d, Conv1dCache, ParamLayout, ParamRange, SeqBatch};
use crate::types::{Corpus, ExpandedLabels, FramePosteriors, MelSpectrogram, PhonemeInventory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierArch {
    pub blocks: usize,
    pub kernel: usize,
    pub hidden: usize,
}

impl Default for ClassifierArch {
    fn default() -> Self {
        Self {
            blocks: 3,
            kernel: 5,
            hidden: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierTrainConfig {
    pub arch: ClassifierArch,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            arch: ClassifierArch::default(),
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
        }
    }
}

/// Everything needed to rebuild the parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierMeta {
    pub inventory_fingerprint: u64,
    pub bins: usize,
    pub classes: usize,
    pub seed: u64,
    pub arch: ClassifierArch,
}

#[derive(Debug, Clone)]
pub struct PhoneClassifier {
    meta: ClassifierMeta,
    layout: ParamLayout,
    params: Vec<f64>,
    input_mean: ParamRange,
    input_scale: ParamRange,
    blocks: Vec<Conv1d>,
    head: Conv1d,
    frozen: bool,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ClassifierPass {
    inputs: Vec<SeqBatch>,
    caches: Vec<Conv1dCache>,
    /// Post-ReLU block outputs.
    activations: Vec<SeqBatch>,
    head_cache: Conv1dCache,
    pub logits: SeqBatch,
}

impl PhoneClassifier {
    pub fn new(meta: ClassifierMeta) -> Self {
        let (layout, input_mean, input_scale, blocks, head) = Self::build_layout(&meta);
        let mut params = vec![0.0; layout.total()];
        let mut rng = ChaCha8Rng::seed_from_u64(meta.seed);
        for b in &blocks {
            b.init(&mut params, &mut rng);
        }
        head.init(&mut params, &mut rng);
        input_scale.of_mut(&mut params).fill(1.0);
        Self {
            meta,
            layout,
            params,
            input_mean,
            input_scale,
            blocks,
            head,
            frozen: false,
        }
    }

    /// Rebuilds a classifier from stored parameters.
    pub fn from_parts(meta: ClassifierMeta, params: Vec<f64>) -> Result<Self> {
        let mut model = Self::new(meta);
        if params.len() != model.params.len() {
            return Err(Error::Incompatible(alloc::format!(
                "classifier expects {} parameters, got {}",
                model.params.len(),
                params.len()
            )));
        }
        model.params = params;
        model.frozen = true;
        Ok(model)
    }

    fn build_layout(meta: &ClassifierMeta) -> (ParamLayout, ParamRange, ParamRange, Vec<Conv1d>, Conv1d) {
        let mut layout = ParamLayout::new();
        let mean = layout.add("input.mean", &[meta.bins]);
        let scale = layout.add("input.scale", &[meta.bins]);
        let mut blocks = Vec::new();
        let mut width = meta.bins;
        for i in 0..meta.arch.blocks {
            blocks.push(Conv1d::register(
                &mut layout,
                &alloc::format!("block{i}"),
                width,
                meta.arch.hidden,
                meta.arch.kernel,
            ));
            width = meta.arch.hidden;
        }
        let head = Conv1d::register(&mut layout, "head", width, meta.classes, 1);
        (layout, mean, scale, blocks, head)
    }

    pub fn meta(&self) -> &ClassifierMeta {
        &self.meta
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Identifies this exact set of weights.
    pub fn id(&self) -> u64 {
        params_fingerprint(&self.params) ^ self.meta.seed.rotate_left(17)
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn check_inventory(&self, inventory: &PhonemeInventory) -> Result<()> {
        if inventory.fingerprint() != self.meta.inventory_fingerprint || inventory.len() != self.meta.classes {
            return Err(Error::Incompatible("classifier was trained on a different inventory".into()));
        }
        Ok(())
    }

    /// Per-bin standardization applied before the first block.
    fn set_input_normalization(&mut self, mean: &[f64], std: &[f64]) {
        self.input_mean.of_mut(&mut self.params).copy_from_slice(mean);
        for (s, &d) in self.input_scale.of_mut(&mut self.params).iter_mut().zip(std) {
            *s = 1.0 / d.max(1e-6);
        }
    }

    fn trainable(&self) -> Vec<ParamRange> {
        self.layout
            .entries()
            .iter()
            .filter(|e| !e.name.starts_with("input."))
            .map(|e| e.range)
            .collect()
    }

    pub fn forward(&self, x: &SeqBatch) -> ClassifierPass {
        self.forward_with(&self.params, x)
    }

    fn forward_with(&self, params: &[f64], x: &SeqBatch) -> ClassifierPass {
        assert_eq!(x.channels, self.meta.bins, "classifier input width");
        let mean = self.input_mean.of(params);
        let scale = self.input_scale.of(params);
        let mut h = x.clone();
        for row in h.data.chunks_mut(self.meta.bins) {
            for ((v, &m), &s) in row.iter_mut().zip(mean).zip(scale) {
                *v = (*v - m) * s;
            }
        }
        let mut inputs = Vec::with_capacity(self.blocks.len());
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut activations = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (mut out, cache) = block.forward(params, &h);
            relu_inplace(&mut out.data);
            inputs.push(h);
            caches.push(cache);
            h = out.clone();
            activations.push(out);
        }
        let (logits, head_cache) = self.head.forward(params, &h);
        ClassifierPass {
            inputs,
            caches,
            activations,
            head_cache,
            logits,
        }
    }

    /// Backpropagates `d_logits`. Parameter gradients accumulate into
    /// `grads` when given; returns dL/d(raw input) when `want_input`.
    pub fn backward(
        &self,
        pass: &ClassifierPass,
        d_logits: &[f64],
        mut grads: Option<&mut [f64]>,
        want_input: bool,
    ) -> Option<Vec<f64>> {
        let last = pass.activations.last().expect("at least one block");
        let mut d = self
            .head
            .backward(&self.params, &pass.head_cache, last, d_logits, grads.as_deref_mut(), true)
            .expect("input grad requested");
        for i in (0..self.blocks.len()).rev() {
            relu_backward(&pass.activations[i].data, &mut d);
            let need = want_input || i > 0;
            match self.blocks[i].backward(&self.params, &pass.caches[i], &pass.inputs[i], &d, grads.as_deref_mut(), need) {
                Some(dx) => d = dx,
                None => return None,
            }
        }
        let scale = self.input_scale.of(&self.params);
        for row in d.chunks_mut(self.meta.bins) {
            for (v, &s) in row.iter_mut().zip(scale) {
                *v *= s;
            }
        }
        Some(d)
    }

    pub fn posteriors(&self, mel: &MelSpectrogram) -> Result<FramePosteriors> {
        if mel.bins() != self.meta.bins {
            return Err(shape_err!("mel has {} bins, classifier expects {}", mel.bins(), self.meta.bins));
        }
        let probs = self.posteriors_f64(&mel.to_f64(), mel.frames());
        FramePosteriors::new(mel.frames(), self.meta.classes, probs)
    }

    /// Posterior matrix for one frame sequence given as `frames × bins`.
    pub fn posteriors_f64(&self, y: &[f64], frames: usize) -> Vec<f64> {
        let x = SeqBatch::new(y.to_vec(), self.meta.bins, vec![frames]);
        let pass = self.forward(&x);
        softmax_rows(&pass.logits.data, self.meta.classes)
    }

    /// Posteriors for every sequence of a batch, row-aligned with it.
    pub fn posteriors_batch(&self, x: &SeqBatch) -> Vec<f64> {
        softmax_rows(&self.forward(x).logits.data, self.meta.classes)
    }

    pub fn predict(&self, mel: &MelSpectrogram) -> Result<Vec<usize>> {
        Ok(self.posteriors(mel)?.argmax())
    }

    /// Binds reference labels, giving the differentiable map
    /// `y ↦ p(label_t | y)` used by the consistency term.
    pub fn critic<'a>(&'a self, labels: &'a ExpandedLabels) -> ClassifierCritic<'a> {
        ClassifierCritic { model: self, labels }
    }
}

/// dL/dlogits from dL/dp where p_t = softmax(logits_t)[label_t]:
/// dlogits[t, j] = dp_t · p_t · (δ(j, label_t) − probs[t, j]).
pub fn gather_pullback_logits(probs: &[f64], classes: usize, labels: &[usize], d_p: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; probs.len()];
    for (t, (&l, &dp)) in labels.iter().zip(d_p).enumerate() {
        if dp == 0.0 {
            continue;
        }
        let row = &probs[t * classes..(t + 1) * classes];
        let p = row[l];
        for (j, o) in out[t * classes..(t + 1) * classes].iter_mut().enumerate() {
            let delta = if j == l { 1.0 } else { 0.0 };
            *o = dp * p * (delta - row[j]);
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct ClassifierCritic<'a> {
    model: &'a PhoneClassifier,
    labels: &'a ExpandedLabels,
}

impl TruthPosteriorMap for ClassifierCritic<'_> {
    fn truth_posteriors(&self, y: &[f64], bins: usize) -> Result<Vec<f64>> {
        if bins != self.model.meta.bins || y.len() != self.labels.len() * bins {
            return Err(shape_err!("critic input does not match labels"));
        }
        let k = self.model.meta.classes;
        let probs = self.model.posteriors_f64(y, self.labels.len());
        Ok(self.labels.ids().iter().enumerate().map(|(t, &l)| probs[t * k + l]).collect())
    }

    fn pullback(&self, y: &[f64], bins: usize, d_posteriors: &[f64]) -> Result<Vec<f64>> {
        if bins != self.model.meta.bins || y.len() != self.labels.len() * bins {
            return Err(shape_err!("critic input does not match labels"));
        }
        let frames = self.labels.len();
        let x = SeqBatch::new(y.to_vec(), bins, vec![frames]);
        let pass = self.model.forward(&x);
        let k = self.model.meta.classes;
        let probs = softmax_rows(&pass.logits.data, k);
        let dl = gather_pullback_logits(&probs, k, self.labels.ids(), d_posteriors);
        Ok(self.model.backward(&pass, &dl, None, true).expect("input grad"))
    }
}

/// Per-bin mean and standard deviation over all frames.
pub(crate) fn frame_statistics<'a>(mels: impl Iterator<Item = &'a MelSpectrogram>, bins: usize) -> (Vec<f64>, Vec<f64>) {
    let mut sum = vec![0.0; bins];
    let mut sq = vec![0.0; bins];
    let mut n = 0usize;
    for mel in mels {
        for t in 0..mel.frames() {
            for (m, &v) in mel.frame(t).iter().enumerate() {
                let v = f64::from(v);
                sum[m] += v;
                sq[m] += v * v;
            }
            n += 1;
        }
    }
    let n = n.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(s, m)| libm::sqrt((s / n - m * m).max(0.0)))
        .collect();
    (mean, std)
}

/// Trains a classifier with frame-wise cross-entropy against
/// duration-expanded labels.
pub fn train_classifier(
    corpus: &Corpus,
    inventory: &PhonemeInventory,
    cfg: &ClassifierTrainConfig,
    seed: u64,
) -> Result<PhoneClassifier> {
    if corpus.utterances.is_empty() {
        return Err(Error::Empty("classifier training corpus".into()));
    }
    if corpus.inventory.fingerprint() != inventory.fingerprint() {
        return Err(Error::Incompatible("corpus inventory differs from the configured one".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(contract!("epochs and batch size must be positive"));
    }
    corpus.validate()?;
    let classes = inventory.len();
    let bins = corpus.bins;
    let mut model = PhoneClassifier::new(ClassifierMeta {
        inventory_fingerprint: inventory.fingerprint(),
        bins,
        classes,
        seed,
        arch: cfg.arch,
    });
    let (mean, std) = frame_statistics(corpus.utterances.iter().map(|u| &u.mel), bins);
    model.set_input_normalization(&mean, &std);

    let labels: Vec<ExpandedLabels> = corpus.utterances.iter().map(|u| u.labels()).collect();
    let trainable = model.trainable();
    let mut opt = Adam::new(model.params.len(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..corpus.utterances.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c1a5);
    let mut grads = vec![0.0; model.params.len()];

    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut data = Vec::new();
            let mut lens = Vec::with_capacity(batch.len());
            let mut batch_labels = Vec::new();
            for &i in batch {
                let u = &corpus.utterances[i];
                data.extend(u.mel.values().iter().map(|&v| f64::from(v)));
                lens.push(u.frames());
                batch_labels.extend_from_slice(labels[i].ids());
            }
            let x = SeqBatch::new(data, bins, lens);
            let pass = model.forward(&x);
            let probs = softmax_rows(&pass.logits.data, classes);
            let n = batch_labels.len() as f64;
            let mut d = probs;
            for (t, &l) in batch_labels.iter().enumerate() {
                d[t * classes + l] -= 1.0;
            }
            for v in &mut d {
                *v /= n;
            }
            grads.fill(0.0);
            model.backward(&pass, &d, Some(&mut grads), false);
            opt.step(&mut model.params, &grads, &trainable);
        }
    }
    model.freeze();
    Ok(model)
}

/// Fraction of frames whose argmax equals the reference label.
pub fn frame_accuracy(model: &PhoneClassifier, utterances: &[crate::types::Utterance]) -> Result<f64> {
    let mut hit = 0usize;
    let mut total = 0usize;
    for u in utterances {
        let pred = model.predict(&u.mel)?;
        let labels = u.labels();
        hit += pred.iter().zip(labels.ids()).filter(|(a, b)| a == b).count();
        total += pred.len();
    }
    if total == 0 {
        return Err(Error::Empty("no frames to score".into()));
    }
    Ok(hit as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn meta(bins: usize, classes: usize) -> ClassifierMeta {
        ClassifierMeta {
            inventory_fingerprint: 0,
            bins,
            classes,
            seed: 3,
            arch: ClassifierArch {
                blocks: 3,
                kernel: 5,
                hidden: 8,
            },
        }
    }

    #[test]
    fn output_rows_match_input_frames_and_are_stochastic() {
        let model = PhoneClassifier::new(meta(4, 5));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for frames in [1usize, 2, 7, 64] {
            let vals: Vec<f32> = (0..frames * 4).map(|_| rng.random_range(-30.0..30.0)).collect();
            let mel = MelSpectrogram::new(frames, 4, vals).unwrap();
            let p = model.posteriors(&mel).unwrap();
            assert_eq!(p.frames(), frames);
            for t in 0..frames {
                assert!((p.row(t).iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_wrong_bins() {
        let model = PhoneClassifier::new(meta(4, 5));
        let mel = MelSpectrogram::new(1, 3, vec![0.0; 3]).unwrap();
        assert!(model.posteriors(&mel).is_err());
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let model = PhoneClassifier::new(meta(4, 5));
        let labels = ExpandedLabels::from_ids(vec![1, 3]);
        let critic = model.critic(&labels);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dp = [0.7, -1.3];
        let g = critic.pullback(&y, 4, &dp).unwrap();
        let f = |v: &[f64]| -> f64 {
            let p = critic.truth_posteriors(v, 4).unwrap();
            p[0] * dp[0] + p[1] * dp[1]
        };
        let h = 1e-5;
        for i in 0..y.len() {
            let mut a = y.clone();
            a[i] += h;
            let mut b = y.clone();
            b[i] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-3 * fd.abs().max(1e-6) + 1e-9, "{i}: {fd} vs {}", g[i]);
        }
    }
}
