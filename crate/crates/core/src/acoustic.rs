//! Duration-driven mel prediction network and the separate duration model.
//!
//! Dataflow: token embedding → convolutional encoder (h_{1:N}) → length
//! regulation by durations (h'_{1:T}) → concatenation with the speaker
//! embedding → convolutional decoder → T×M frames.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::frame_statistics;
use crate::error::{contract, shape_err, Error, Result};
use crate::nn::{embed, embed_backward, relu_backward, relu_inplace, Adam, Conv1d, Conv1dCache, ParamLayout, ParamRange, SeqBatch};
use crate::types::{Corpus, DurationSequence, MelSpectrogram, PhonemeInventory, SpeakerId, TokenSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcousticArch {
    pub token_dim: usize,
    pub hidden: usize,
    pub speaker_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub kernel: usize,
}

impl Default for AcousticArch {
    fn default() -> Self {
        Self {
            token_dim: 32,
            hidden: 64,
            speaker_dim: 16,
            encoder_layers: 2,
            decoder_layers: 3,
            kernel: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcousticMeta {
    pub inventory_fingerprint: u64,
    pub classes: usize,
    pub bins: usize,
    pub speakers: usize,
    pub seed: u64,
    pub arch: AcousticArch,
}

/// Parameter groups of the acoustic model, used for freezing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// Token embedding and encoder convolutions.
    Encoder,
    SpeakerTable,
    Decoder,
}

#[derive(Debug, Clone)]
pub struct AcousticModel {
    meta: AcousticMeta,
    layout: ParamLayout,
    params: Vec<f64>,
    token_table: ParamRange,
    encoder: Vec<Conv1d>,
    speaker_table: ParamRange,
    decoder: Vec<Conv1d>,
    out_mean: ParamRange,
    out_scale: ParamRange,
}

/// One item of a training batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub tokens: &'a TokenSequence,
    pub durations: &'a DurationSequence,
    pub speaker: SpeakerId,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AcousticPass {
    token_ids: Vec<usize>,
    enc_inputs: Vec<SeqBatch>,
    enc_caches: Vec<Conv1dCache>,
    enc_outputs: Vec<SeqBatch>,
    /// Token row feeding each frame.
    frame_token: Vec<usize>,
    frame_speaker: Vec<SpeakerId>,
    dec_inputs: Vec<SeqBatch>,
    dec_caches: Vec<Conv1dCache>,
    dec_outputs: Vec<SeqBatch>,
    /// Predicted frames, `frames × bins` per sequence.
    pub output: SeqBatch,
}

impl AcousticModel {
    pub fn new(meta: AcousticMeta) -> Self {
        let a = meta.arch;
        let mut layout = ParamLayout::new();
        let token_table = layout.add("encoder.token_embedding", &[meta.classes, a.token_dim]);
        let mut encoder = Vec::new();
        let mut width = a.token_dim;
        for i in 0..a.encoder_layers {
            encoder.push(Conv1d::register(&mut layout, &format!("encoder.conv{i}"), width, a.hidden, a.kernel));
            width = a.hidden;
        }
        let speaker_table = layout.add("speaker_embedding", &[meta.speakers, a.speaker_dim]);
        let mut decoder = Vec::new();
        width = a.hidden + a.speaker_dim;
        for i in 0..a.decoder_layers {
            let last = i + 1 == a.decoder_layers;
            let (out, k) = if last { (meta.bins, 1) } else { (a.hidden, a.kernel) };
            decoder.push(Conv1d::register(&mut layout, &format!("decoder.conv{i}"), width, out, k));
            width = out;
        }
        let out_mean = layout.add("output.mean", &[meta.bins]);
        let out_scale = layout.add("output.scale", &[meta.bins]);

        let mut params = vec![0.0; layout.total()];
        let mut rng = ChaCha8Rng::seed_from_u64(meta.seed);
        for v in token_table.of_mut(&mut params) {
            *v = rng.random_range(-1.0..1.0);
        }
        for c in &encoder {
            c.init(&mut params, &mut rng);
        }
        for v in speaker_table.of_mut(&mut params) {
            *v = rng.random_range(-0.1..0.1);
        }
        for c in &decoder {
            c.init(&mut params, &mut rng);
        }
        out_scale.of_mut(&mut params).fill(1.0);
        Self {
            meta,
            layout,
            params,
            token_table,
            encoder,
            speaker_table,
            decoder,
            out_mean,
            out_scale,
        }
    }

    pub fn from_parts(meta: AcousticMeta, params: Vec<f64>) -> Result<Self> {
        let mut model = Self::new(meta);
        if params.len() != model.params.len() {
            return Err(Error::Incompatible(format!(
                "acoustic model expects {} parameters, got {}",
                model.params.len(),
                params.len()
            )));
        }
        model.params = params;
        Ok(model)
    }

    pub fn meta(&self) -> &AcousticMeta {
        &self.meta
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn check_inventory(&self, inventory: &PhonemeInventory) -> Result<()> {
        if inventory.fingerprint() != self.meta.inventory_fingerprint || inventory.len() != self.meta.classes {
            return Err(Error::Incompatible("acoustic model was built for a different inventory".into()));
        }
        Ok(())
    }

    pub fn group_ranges(&self, group: ParamGroup) -> Vec<ParamRange> {
        let prefix = match group {
            ParamGroup::Encoder => "encoder.",
            ParamGroup::SpeakerTable => "speaker_embedding",
            ParamGroup::Decoder => "decoder.",
        };
        self.layout.ranges_with_prefix(prefix)
    }

    /// Sets the fixed output de-normalization from reference frames.
    pub fn set_output_normalization(&mut self, corpus: &Corpus) {
        let (mean, std) = frame_statistics(corpus.utterances.iter().map(|u| &u.mel), self.meta.bins);
        self.out_mean.of_mut(&mut self.params).copy_from_slice(&mean);
        for (s, d) in self.out_scale.of_mut(&mut self.params).iter_mut().zip(std) {
            *s = d.max(1e-6);
        }
    }

    fn check_tokens(&self, tokens: &TokenSequence) -> Result<()> {
        match tokens.ids().iter().find(|&&t| t >= self.meta.classes) {
            Some(t) => Err(contract!("token {t} outside inventory of {}", self.meta.classes)),
            None => Ok(()),
        }
    }

    fn check_item(&self, item: &BatchItem<'_>) -> Result<()> {
        self.check_tokens(item.tokens)?;
        if item.speaker >= self.meta.speakers {
            return Err(contract!("unknown speaker {}", item.speaker));
        }
        if item.tokens.len() != item.durations.len() {
            return Err(contract!("{} tokens but {} durations", item.tokens.len(), item.durations.len()));
        }
        Ok(())
    }

    fn encoder_pass(&self, token_ids: &[usize], lens: Vec<usize>) -> (Vec<SeqBatch>, Vec<Conv1dCache>, Vec<SeqBatch>) {
        let a = self.meta.arch;
        let mut h = SeqBatch::new(embed(self.token_table.of(&self.params), a.token_dim, token_ids), a.token_dim, lens);
        let mut inputs = Vec::new();
        let mut caches = Vec::new();
        let mut outputs = Vec::new();
        for conv in &self.encoder {
            let (mut out, cache) = conv.forward(&self.params, &h);
            relu_inplace(&mut out.data);
            inputs.push(h);
            caches.push(cache);
            h = out.clone();
            outputs.push(out);
        }
        (inputs, caches, outputs)
    }

    /// h_{1:N} for one token sequence, `N × hidden`.
    pub fn encode(&self, tokens: &TokenSequence) -> Result<Vec<f64>> {
        self.check_tokens(tokens)?;
        let (_, _, mut outs) = self.encoder_pass(tokens.ids(), vec![tokens.len()]);
        Ok(outs.pop().map(|b| b.data).unwrap_or_default())
    }

    pub fn forward(&self, tokens: &TokenSequence, durations: &DurationSequence, speaker: SpeakerId) -> Result<MelSpectrogram> {
        let item = BatchItem {
            tokens,
            durations,
            speaker,
        };
        let pass = self.forward_batch(&[item])?;
        MelSpectrogram::from_f64(durations.total(), self.meta.bins, &pass.output.data)
    }

    /// Batched forward pass keeping every activation for [`Self::backward`].
    pub fn forward_batch(&self, items: &[BatchItem<'_>]) -> Result<AcousticPass> {
        for it in items {
            self.check_item(it)?;
        }
        let a = self.meta.arch;
        let token_ids: Vec<usize> = items.iter().flat_map(|it| it.tokens.ids().iter().copied()).collect();
        let token_lens: Vec<usize> = items.iter().map(|it| it.tokens.len()).collect();
        let (enc_inputs, enc_caches, enc_outputs) = self.encoder_pass(&token_ids, token_lens);
        let h = enc_outputs.last().expect("encoder has layers");

        let width = a.hidden + a.speaker_dim;
        let frame_lens: Vec<usize> = items.iter().map(|it| it.durations.total()).collect();
        let total: usize = frame_lens.iter().sum();
        let mut frame_token = Vec::with_capacity(total);
        let mut frame_speaker = Vec::with_capacity(total);
        let mut row = 0;
        for it in items {
            for &d in it.durations.frames() {
                for _ in 0..d {
                    frame_token.push(row);
                    frame_speaker.push(it.speaker);
                }
                row += 1;
            }
        }
        let spk = self.speaker_table.of(&self.params);
        let mut x = Vec::with_capacity(total * width);
        for (&tok, &s) in frame_token.iter().zip(&frame_speaker) {
            x.extend_from_slice(&h.data[tok * a.hidden..(tok + 1) * a.hidden]);
            x.extend_from_slice(&spk[s * a.speaker_dim..(s + 1) * a.speaker_dim]);
        }
        let mut cur = SeqBatch::new(x, width, frame_lens);
        let mut dec_inputs = Vec::new();
        let mut dec_caches = Vec::new();
        let mut dec_outputs = Vec::new();
        let n = self.decoder.len();
        for (i, conv) in self.decoder.iter().enumerate() {
            let (mut out, cache) = conv.forward(&self.params, &cur);
            if i + 1 < n {
                relu_inplace(&mut out.data);
            }
            dec_inputs.push(cur);
            dec_caches.push(cache);
            cur = out.clone();
            dec_outputs.push(out);
        }
        let mean = self.out_mean.of(&self.params);
        let scale = self.out_scale.of(&self.params);
        for frame in cur.data.chunks_mut(self.meta.bins) {
            for ((v, &m), &s) in frame.iter_mut().zip(mean).zip(scale) {
                *v = *v * s + m;
            }
        }
        Ok(AcousticPass {
            token_ids,
            enc_inputs,
            enc_caches,
            enc_outputs,
            frame_token,
            frame_speaker,
            dec_inputs,
            dec_caches,
            dec_outputs,
            output: cur,
        })
    }

    /// Accumulates dL/dθ into `grads`. With `through_encoder` false, the
    /// token embedding and encoder receive no gradient at all.
    pub fn backward(&self, pass: &AcousticPass, d_output: &[f64], grads: &mut [f64], through_encoder: bool) {
        let a = self.meta.arch;
        let scale = self.out_scale.of(&self.params);
        let mut d: Vec<f64> = d_output.to_vec();
        for frame in d.chunks_mut(self.meta.bins) {
            for (v, &s) in frame.iter_mut().zip(scale) {
                *v *= s;
            }
        }
        let n = self.decoder.len();
        for i in (0..n).rev() {
            if i + 1 < n {
                relu_backward(&pass.dec_outputs[i].data, &mut d);
            }
            d = self.decoder[i]
                .backward(&self.params, &pass.dec_caches[i], &pass.dec_inputs[i], &d, Some(grads), true)
                .expect("input grad requested");
        }
        // split the concatenated input gradient
        let width = a.hidden + a.speaker_dim;
        let spk_grad = self.speaker_table.of_mut(grads);
        for (t, &s) in pass.frame_speaker.iter().enumerate() {
            let src = &d[t * width + a.hidden..(t + 1) * width];
            for (g, &v) in spk_grad[s * a.speaker_dim..(s + 1) * a.speaker_dim].iter_mut().zip(src) {
                *g += v;
            }
        }
        if !through_encoder {
            return;
        }
        let h = pass.enc_outputs.last().expect("encoder has layers");
        let mut dh = vec![0.0; h.data.len()];
        for (t, &tok) in pass.frame_token.iter().enumerate() {
            for (g, &v) in dh[tok * a.hidden..(tok + 1) * a.hidden].iter_mut().zip(&d[t * width..t * width + a.hidden]) {
                *g += v;
            }
        }
        let mut d = dh;
        for i in (0..self.encoder.len()).rev() {
            relu_backward(&pass.enc_outputs[i].data, &mut d);
            d = self.encoder[i]
                .backward(&self.params, &pass.enc_caches[i], &pass.enc_inputs[i], &d, Some(grads), true)
                .expect("input grad requested");
        }
        embed_backward(self.token_table.of_mut(grads), a.token_dim, &pass.token_ids, &d);
    }
}

/// Replicates each row of `h` (`N × dim`) by its duration.
pub fn length_regulate(h: &[f64], dim: usize, durations: &DurationSequence) -> Result<Vec<f64>> {
    if dim == 0 || h.len() != durations.len() * dim {
        return Err(shape_err!(
            "{} hidden values of width {dim} for {} durations",
            h.len(),
            durations.len()
        ));
    }
    let mut out = Vec::with_capacity(durations.total() * dim);
    for (row, &d) in h.chunks(dim).zip(durations.frames()) {
        for _ in 0..d {
            out.extend_from_slice(row);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationTrainConfig {
    pub hidden: usize,
    pub speaker_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for DurationTrainConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            speaker_dim: 8,
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationMeta {
    pub encoder_hidden: usize,
    pub speakers: usize,
    pub seed: u64,
    pub hidden: usize,
    pub speaker_dim: usize,
    pub kernel: usize,
}

/// Regresses per-token log-durations from encoder states and a speaker
/// embedding of its own.
#[derive(Debug, Clone)]
pub struct DurationModel {
    meta: DurationMeta,
    layout: ParamLayout,
    params: Vec<f64>,
    speaker_table: ParamRange,
    conv0: Conv1d,
    conv1: Conv1d,
}

/// Rounds a raw frame-count prediction, never below one frame.
pub fn clamp_duration(raw_frames: f64) -> u32 {
    if !raw_frames.is_finite() || raw_frames < 1.0 {
        return 1;
    }
    libm::round(raw_frames).min(u32::MAX as f64) as u32
}

impl DurationModel {
    pub fn new(meta: DurationMeta) -> Self {
        let mut layout = ParamLayout::new();
        let speaker_table = layout.add("speaker_embedding", &[meta.speakers, meta.speaker_dim]);
        let conv0 = Conv1d::register(&mut layout, "conv0", meta.encoder_hidden + meta.speaker_dim, meta.hidden, meta.kernel);
        let conv1 = Conv1d::register(&mut layout, "conv1", meta.hidden, 1, 1);
        let mut params = vec![0.0; layout.total()];
        let mut rng = ChaCha8Rng::seed_from_u64(meta.seed);
        for v in speaker_table.of_mut(&mut params) {
            *v = rng.random_range(-0.1..0.1);
        }
        conv0.init(&mut params, &mut rng);
        conv1.init(&mut params, &mut rng);
        Self {
            meta,
            layout,
            params,
            speaker_table,
            conv0,
            conv1,
        }
    }

    pub fn from_parts(meta: DurationMeta, params: Vec<f64>) -> Result<Self> {
        let mut model = Self::new(meta);
        if params.len() != model.params.len() {
            return Err(Error::Incompatible(format!(
                "duration model expects {} parameters, got {}",
                model.params.len(),
                params.len()
            )));
        }
        model.params = params;
        Ok(model)
    }

    pub fn meta(&self) -> &DurationMeta {
        &self.meta
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    fn inputs(&self, hs: &[(&[f64], SpeakerId)]) -> SeqBatch {
        let e = self.meta.speaker_dim;
        let hd = self.meta.encoder_hidden;
        let table = self.speaker_table.of(&self.params);
        let mut data = Vec::new();
        let mut lens = Vec::new();
        for &(h, s) in hs {
            for row in h.chunks(hd) {
                data.extend_from_slice(row);
                data.extend_from_slice(&table[s * e..(s + 1) * e]);
            }
            lens.push(h.len() / hd);
        }
        SeqBatch::new(data, hd + e, lens)
    }

    /// Raw log-duration per token.
    pub fn predict_log(&self, h: &[f64], speaker: SpeakerId) -> Result<Vec<f64>> {
        if speaker >= self.meta.speakers {
            return Err(contract!("unknown speaker {speaker}"));
        }
        if h.is_empty() || h.len() % self.meta.encoder_hidden != 0 {
            return Err(shape_err!("hidden sequence of {} values", h.len()));
        }
        let x = self.inputs(&[(h, speaker)]);
        let mut mid = self.conv0.apply(&self.params, &x);
        relu_inplace(&mut mid.data);
        Ok(self.conv1.apply(&self.params, &mid).data)
    }

    pub fn predict_durations(&self, h: &[f64], speaker: SpeakerId) -> Result<DurationSequence> {
        let raw = self.predict_log(h, speaker)?;
        DurationSequence::new(raw.iter().map(|&l| clamp_duration(libm::exp(l))).collect())
    }
}

/// Fits the duration model by squared error on log-durations, with the
/// acoustic encoder held fixed.
pub fn train_duration_model(
    acoustic: &AcousticModel,
    corpus: &Corpus,
    cfg: &DurationTrainConfig,
    seed: u64,
) -> Result<DurationModel> {
    if corpus.utterances.is_empty() {
        return Err(Error::Empty("duration training corpus".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(contract!("epochs and batch size must be positive"));
    }
    acoustic.check_inventory(&corpus.inventory)?;
    let mut model = DurationModel::new(DurationMeta {
        encoder_hidden: acoustic.meta.arch.hidden,
        speakers: acoustic.meta.speakers,
        seed,
        hidden: cfg.hidden,
        speaker_dim: cfg.speaker_dim,
        kernel: 3,
    });
    if let Some(u) = corpus.utterances.iter().find(|u| u.speaker >= model.meta.speakers) {
        return Err(contract!("utterance {} has unknown speaker {}", u.utt_id, u.speaker));
    }
    let hidden: Vec<Vec<f64>> = corpus
        .utterances
        .iter()
        .map(|u| acoustic.encode(&u.tokens))
        .collect::<Result<_>>()?;
    let targets: Vec<Vec<f64>> = corpus
        .utterances
        .iter()
        .map(|u| u.durations.frames().iter().map(|&d| libm::log(f64::from(d))).collect())
        .collect();
    let mut opt = Adam::new(model.params.len(), cfg.learning_rate);
    let trainable = [ParamRange {
        offset: 0,
        len: model.params.len(),
    }];
    let mut order: Vec<usize> = (0..corpus.utterances.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd0_7a71);
    let mut grads = vec![0.0; model.params.len()];
    let e = model.meta.speaker_dim;
    let hd = model.meta.encoder_hidden;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let items: Vec<(&[f64], SpeakerId)> = batch
                .iter()
                .map(|&i| (hidden[i].as_slice(), corpus.utterances[i].speaker))
                .collect();
            let x = model.inputs(&items);
            let (mut mid, c0) = model.conv0.forward(&model.params, &x);
            relu_inplace(&mut mid.data);
            let (out, c1) = model.conv1.forward(&model.params, &mid);
            let target: Vec<f64> = batch.iter().flat_map(|&i| targets[i].iter().copied()).collect();
            let n = target.len() as f64;
            let d: Vec<f64> = out.data.iter().zip(&target).map(|(p, t)| 2.0 * (p - t) / n).collect();
            grads.fill(0.0);
            let mut dmid = model
                .conv1
                .backward(&model.params, &c1, &mid, &d, Some(&mut grads), true)
                .expect("input grad");
            relu_backward(&mid.data, &mut dmid);
            let dx = model
                .conv0
                .backward(&model.params, &c0, &x, &dmid, Some(&mut grads), true)
                .expect("input grad");
            let mut row = 0;
            for &i in batch {
                let s = corpus.utterances[i].speaker;
                for _ in 0..corpus.utterances[i].tokens.len() {
                    let src = &dx[row * (hd + e) + hd..(row + 1) * (hd + e)];
                    let g = model.speaker_table.of_mut(&mut grads);
                    for (gv, &v) in g[s * e..(s + 1) * e].iter_mut().zip(src) {
                        *gv += v;
                    }
                    row += 1;
                }
            }
            opt.step(&mut model.params, &grads, &trainable);
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> AcousticMeta {
        AcousticMeta {
            inventory_fingerprint: 0,
            classes: 5,
            bins: 4,
            speakers: 2,
            seed: 1,
            arch: AcousticArch {
                token_dim: 6,
                hidden: 8,
                speaker_dim: 3,
                encoder_layers: 2,
                decoder_layers: 3,
                kernel: 3,
            },
        }
    }

    #[test]
    fn length_regulation_examples() {
        let h = [1.0, 2.0, 3.0, 4.0]; // u = (1,2), v = (3,4)
        let d = DurationSequence::new(vec![2, 1]).unwrap();
        assert_eq!(length_regulate(&h, 2, &d).unwrap(), vec![1.0, 2.0, 1.0, 2.0, 3.0, 4.0]);
        let ones = DurationSequence::new(vec![1, 1]).unwrap();
        assert_eq!(length_regulate(&h, 2, &ones).unwrap(), h.to_vec());
        let d = DurationSequence::new(vec![3, 4]).unwrap();
        assert_eq!(length_regulate(&h, 2, &d).unwrap().len() / 2, 7);
        assert!(length_regulate(&h, 2, &DurationSequence::new(vec![1]).unwrap()).is_err());
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let m = AcousticModel::new(meta());
        let t = TokenSequence::new(vec![1, 2, 3], 5).unwrap();
        let d = DurationSequence::new(vec![2, 1, 4]).unwrap();
        let a = m.forward(&t, &d, 1).unwrap();
        assert_eq!((a.frames(), a.bins()), (7, 4));
        assert_eq!(a, m.forward(&t, &d, 1).unwrap());
        assert_ne!(a, m.forward(&t, &d, 0).unwrap());
        assert!(m.forward(&t, &d, 2).is_err());
        let one = TokenSequence::new(vec![4], 5).unwrap();
        assert_eq!(m.encode(&one).unwrap().len(), 8);
        assert!(m.encode(&TokenSequence::new(vec![5], 6).unwrap()).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut m = AcousticModel::new(meta());
        let t = TokenSequence::new(vec![1, 2, 3], 5).unwrap();
        let d = DurationSequence::new(vec![2, 1, 2]).unwrap();
        let item = [BatchItem {
            tokens: &t,
            durations: &d,
            speaker: 1,
        }];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pass = m.forward_batch(&item).unwrap();
        let c: Vec<f64> = (0..pass.output.data.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut g = vec![0.0; m.params.len()];
        m.backward(&pass, &c, &mut g, true);
        let h = 1e-6;
        let mean = m.out_mean.offset;
        for i in (0..m.params.len()).step_by(7).filter(|&i| i < mean) {
            let orig = m.params[i];
            m.params[i] = orig + h;
            let up: f64 = m.forward_batch(&item).unwrap().output.data.iter().zip(&c).map(|(a, b)| a * b).sum();
            m.params[i] = orig - h;
            let dn: f64 = m.forward_batch(&item).unwrap().output.data.iter().zip(&c).map(|(a, b)| a * b).sum();
            m.params[i] = orig;
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-5 * fd.abs().max(1.0), "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn frozen_encoder_gets_no_gradient() {
        let m = AcousticModel::new(meta());
        let t = TokenSequence::new(vec![1, 2], 5).unwrap();
        let d = DurationSequence::new(vec![2, 2]).unwrap();
        let pass = m
            .forward_batch(&[BatchItem {
                tokens: &t,
                durations: &d,
                speaker: 0,
            }])
            .unwrap();
        let mut g = vec![0.0; m.params.len()];
        m.backward(&pass, &vec![1.0; pass.output.data.len()], &mut g, false);
        for r in m.group_ranges(ParamGroup::Encoder) {
            assert!(r.of(&g).iter().all(|&v| v == 0.0));
        }
        let dec: f64 = m.group_ranges(ParamGroup::Decoder).iter().map(|r| r.of(&g).iter().map(|v| v.abs()).sum::<f64>()).sum();
        assert!(dec > 0.0);
    }

    #[test]
    fn clamp_contract() {
        assert_eq!(clamp_duration(0.2), 1);
        assert_eq!(clamp_duration(-3.0), 1);
        assert_eq!(clamp_duration(f64::NAN), 1);
        assert_eq!(clamp_duration(3.6), 4);
    }
}
