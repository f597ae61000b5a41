//! Shared domain types.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{contract, shape_err, Error, Result};

/// Index into the speaker table of a corpus.
pub type SpeakerId = usize;

/// Ordered phoneme symbols, one of which is the silence token.
///
/// The position of a symbol is its class index for the classifier and its
/// token id for the acoustic model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "InventoryRepr", into = "InventoryRepr")]
pub struct PhonemeInventory {
    symbols: Vec<String>,
    silence: usize,
}

#[derive(Serialize, Deserialize)]
struct InventoryRepr {
    symbols: Vec<String>,
    silence: String,
}

impl TryFrom<InventoryRepr> for PhonemeInventory {
    type Error = Error;

    fn try_from(r: InventoryRepr) -> Result<Self> {
        PhonemeInventory::new(r.symbols, &r.silence)
    }
}

impl From<PhonemeInventory> for InventoryRepr {
    fn from(inv: PhonemeInventory) -> Self {
        InventoryRepr {
            silence: inv.symbols[inv.silence].clone(),
            symbols: inv.symbols,
        }
    }
}

impl PhonemeInventory {
    pub fn new(symbols: Vec<String>, silence: &str) -> Result<Self> {
        for (i, s) in symbols.iter().enumerate() {
            if symbols[..i].contains(s) {
                return Err(contract!("duplicate phoneme symbol {s:?}"));
            }
        }
        let silence = symbols
            .iter()
            .position(|s| s == silence)
            .ok_or_else(|| contract!("silence symbol {silence:?} missing from inventory"))?;
        Ok(Self { symbols, silence })
    }

    /// Twelve phonemes plus silence at index 0.
    pub fn toy_default() -> Self {
        let symbols = [
            "sil", "a", "e", "i", "o", "u", "y", "k", "g", "ng", "t", "d", "s",
        ];
        Self::new(symbols.iter().map(|s| s.to_string()).collect(), "sil")
            .expect("static inventory is valid")
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == symbol)
    }

    pub fn silence(&self) -> usize {
        self.silence
    }

    /// FNV-1a over the symbols and the silence index. Stored in checkpoints
    /// so that models refuse to load against a different inventory.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        for s in &self.symbols {
            h.write(s.as_bytes());
            h.write(&[0]);
        }
        h.write(&(self.silence as u64).to_le_bytes());
        h.finish()
    }
}

/// 64-bit FNV-1a.
#[derive(Debug, Clone)]
pub(crate) struct Fnv(u64);

impl Fnv {
    pub(crate) fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    pub(crate) fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}

/// Input token ids, length N ≥ 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<usize>);

impl TokenSequence {
    pub fn new(ids: Vec<usize>, classes: usize) -> Result<Self> {
        if ids.is_empty() {
            return Err(contract!("token sequence must be non-empty"));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= classes) {
            return Err(contract!("token id {bad} out of range for {classes} classes"));
        }
        Ok(Self(ids))
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-token frame counts, each at least one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DurationSequence(Vec<u32>);

impl DurationSequence {
    pub fn new(frames: Vec<u32>) -> Result<Self> {
        if frames.is_empty() {
            return Err(contract!("duration sequence must be non-empty"));
        }
        if let Some(pos) = frames.iter().position(|&d| d == 0) {
            return Err(contract!("duration at position {pos} is zero"));
        }
        Ok(Self(frames))
    }

    pub fn frames(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Σ d_n, the number of output frames.
    pub fn total(&self) -> usize {
        self.0.iter().map(|&d| d as usize).sum()
    }
}

/// T×M matrix of frame features, frame-major. Stored as `f32` so that the
/// on-disk format round-trips exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    frames: usize,
    bins: usize,
    values: Vec<f32>,
}

impl MelSpectrogram {
    pub fn new(frames: usize, bins: usize, values: Vec<f32>) -> Result<Self> {
        if frames == 0 || bins == 0 {
            return Err(contract!("mel must have T ≥ 1 and M ≥ 1, got {frames}×{bins}"));
        }
        if values.len() != frames * bins {
            return Err(shape_err!(
                "{} values for a {frames}×{bins} mel",
                values.len()
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(contract!("non-finite mel value at frame {}", i / bins));
        }
        Ok(Self { frames, bins, values })
    }

    /// Rounds each entry to `f32`.
    pub fn from_f64(frames: usize, bins: usize, values: &[f64]) -> Result<Self> {
        Self::new(frames, bins, values.iter().map(|&v| v as f32).collect())
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.values[t * self.bins..(t + 1) * self.bins]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| f64::from(v)).collect()
    }
}

/// T×K row-stochastic matrix of per-frame class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePosteriors {
    frames: usize,
    classes: usize,
    probs: Vec<f64>,
}

impl FramePosteriors {
    pub const ROW_TOLERANCE: f64 = 1e-6;

    pub fn new(frames: usize, classes: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != frames * classes {
            return Err(shape_err!("{} probabilities for {frames}×{classes}", probs.len()));
        }
        for (t, row) in probs.chunks(classes.max(1)).enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(contract!("posterior row {t} has entries outside [0, 1]"));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > Self::ROW_TOLERANCE {
                return Err(contract!("posterior row {t} sums to {s}"));
            }
        }
        Ok(Self { frames, classes, probs })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.probs[t * self.classes..(t + 1) * self.classes]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Index of the largest probability in each row (first on ties).
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.frames).map(|t| argmax(self.row(t))).collect()
    }

    /// out[t] = probs[t, labels[t]], the posterior of the reference label.
    pub fn gather_truth(&self, labels: &ExpandedLabels) -> Result<Vec<f64>> {
        if labels.len() != self.frames {
            return Err(shape_err!(
                "{} labels for {} posterior frames",
                labels.len(),
                self.frames
            ));
        }
        labels
            .ids()
            .iter()
            .enumerate()
            .map(|(t, &k)| {
                if k >= self.classes {
                    Err(contract!("label {k} out of range for {} classes", self.classes))
                } else {
                    Ok(self.probs[t * self.classes + k])
                }
            })
            .collect()
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Frame-level label sequence x'_{1:T}.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExpandedLabels(Vec<usize>);

impl ExpandedLabels {
    pub fn from_ids(ids: Vec<usize>) -> Self {
        Self(ids)
    }

    pub fn ids(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Replicates each token by its duration.
pub fn expand_labels(tokens: &TokenSequence, durations: &DurationSequence) -> Result<ExpandedLabels> {
    if tokens.len() != durations.len() {
        return Err(contract!(
            "{} tokens but {} durations",
            tokens.len(),
            durations.len()
        ));
    }
    let mut out = Vec::with_capacity(durations.total());
    for (&id, &d) in tokens.ids().iter().zip(durations.frames()) {
        if d == 0 {
            return Err(contract!("zero duration"));
        }
        out.extend(core::iter::repeat(id).take(d as usize));
    }
    Ok(ExpandedLabels(out))
}

/// One training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub utt_id: String,
    pub speaker: SpeakerId,
    pub tokens: TokenSequence,
    pub durations: DurationSequence,
    pub mel: MelSpectrogram,
    /// Ground-truth corruption marker per frame. Corpus metadata only; no
    /// training code reads it.
    pub impaired_mask: Option<Vec<bool>>,
}

impl Utterance {
    pub fn validate(&self) -> Result<()> {
        let fail = |detail: String| Error::Invariant {
            context: format!("utterance {}", self.utt_id),
            detail,
        };
        if self.tokens.len() != self.durations.len() {
            return Err(fail(format!(
                "{} tokens but {} durations",
                self.tokens.len(),
                self.durations.len()
            )));
        }
        let total = self.durations.total();
        if total != self.mel.frames() {
            return Err(fail(format!(
                "durations sum to {total} but mel has {} frames",
                self.mel.frames()
            )));
        }
        if let Some(mask) = &self.impaired_mask {
            if mask.len() != total {
                return Err(fail(format!(
                    "impaired mask has {} entries for {total} frames",
                    mask.len()
                )));
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> ExpandedLabels {
        expand_labels(&self.tokens, &self.durations).expect("validated utterance")
    }

    pub fn frames(&self) -> usize {
        self.mel.frames()
    }
}

/// Utterances sharing an inventory and a frame dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub inventory: PhonemeInventory,
    pub bins: usize,
    /// Speaker names indexed by [`SpeakerId`].
    pub speakers: Vec<String>,
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    /// Checks every utterance invariant plus corpus-wide consistency.
    pub fn validate(&self) -> Result<()> {
        let k = self.inventory.len();
        for u in &self.utterances {
            u.validate()?;
            let fail = |detail: String| Error::Invariant {
                context: format!("utterance {}", u.utt_id),
                detail,
            };
            if u.mel.bins() != self.bins {
                return Err(fail(format!("{} bins, corpus has {}", u.mel.bins(), self.bins)));
            }
            if u.speaker >= self.speakers.len() {
                return Err(fail(format!("unknown speaker {}", u.speaker)));
            }
            if let Some(&bad) = u.tokens.ids().iter().find(|&&id| id >= k) {
                return Err(fail(format!("token {bad} outside inventory of {k}")));
            }
        }
        Ok(())
    }

    pub fn by_speaker(&self, speaker: SpeakerId) -> impl Iterator<Item = &Utterance> {
        self.utterances.iter().filter(move |u| u.speaker == speaker)
    }

    pub fn total_frames(&self) -> usize {
        self.utterances.iter().map(Utterance::frames).sum()
    }
}

/// Loss weights and numerical floors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Weight of the regularization term.
    pub beta: f64,
    /// Weight of the consistency term.
    pub gamma: f64,
    /// Decay rate of the severity weight in the reference posterior.
    #[serde(rename = "lambda")]
    pub lambda_: f64,
    /// Variance of the impairment density. Training never reads it: the
    /// loss weight β plays the role of 2σ². Defaults to β/2.
    pub sigma2: f64,
    /// Lower clamp inside both logarithms.
    pub eps_floor: f64,
    /// Drop silence frames from all three loss terms.
    #[serde(default)]
    pub exclude_silence: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            beta: 0.05,
            gamma: 0.3,
            lambda_: 25.0,
            sigma2: 0.025,
            eps_floor: 1e-8,
            exclude_silence: false,
        }
    }
}

impl HyperParams {
    /// β and γ may be zero (plain-reconstruction baselines); the rest must
    /// be strictly positive.
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(contract!("{name} must be finite and ≥ 0, got {v}"))
            }
        };
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(contract!("{name} must be finite and > 0, got {v}"))
            }
        };
        finite_nonneg("beta", self.beta)?;
        finite_nonneg("gamma", self.gamma)?;
        positive("lambda", self.lambda_)?;
        positive("sigma2", self.sigma2)?;
        positive("eps_floor", self.eps_floor)
    }
}

/// The three loss terms, their weighted sum and the weights used.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_rec: f64,
    pub l_reg: f64,
    pub l_consis: f64,
    pub l_total: f64,
    pub beta: f64,
    pub gamma: f64,
    pub frame_count: usize,
}

impl LossBreakdown {
    pub const RECOMPOSE_TOLERANCE: f64 = 1e-9;

    pub fn compose(l_rec: f64, l_reg: f64, l_consis: f64, beta: f64, gamma: f64, frames: usize) -> Self {
        Self {
            l_rec,
            l_reg,
            l_consis,
            l_total: l_rec + beta * l_reg + gamma * l_consis,
            beta,
            gamma,
            frame_count: frames,
        }
    }

    pub fn recomposed_total(&self) -> f64 {
        self.l_rec + self.beta * self.l_reg + self.gamma * self.l_consis
    }

    pub fn is_consistent(&self) -> bool {
        let scale = 1.0f64.max(self.l_total.abs());
        (self.recomposed_total() - self.l_total).abs() <= Self::RECOMPOSE_TOLERANCE * scale
    }

    /// Adds another breakdown computed with the same weights.
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.l_rec += other.l_rec;
        self.l_reg += other.l_reg;
        self.l_consis += other.l_consis;
        self.l_total += other.l_total;
        self.frame_count += other.frame_count;
        self.beta = other.beta;
        self.gamma = other.gamma;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn inv3() -> PhonemeInventory {
        PhonemeInventory::new(vec!["sil".into(), "a".into(), "b".into()], "sil").unwrap()
    }

    #[test]
    fn expand_examples() {
        let inv = inv3();
        let (sil, a, b) = (0, inv.index_of("a").unwrap(), inv.index_of("b").unwrap());
        let t = TokenSequence::new(vec![a, b], 3).unwrap();
        let d = DurationSequence::new(vec![2, 3]).unwrap();
        assert_eq!(expand_labels(&t, &d).unwrap().ids(), &[a, a, b, b, b]);

        let t = TokenSequence::new(vec![a], 3).unwrap();
        let d = DurationSequence::new(vec![1]).unwrap();
        assert_eq!(expand_labels(&t, &d).unwrap().ids(), &[a]);

        let t = TokenSequence::new(vec![sil, a, sil], 3).unwrap();
        let d = DurationSequence::new(vec![1, 2, 1]).unwrap();
        assert_eq!(expand_labels(&t, &d).unwrap().ids(), &[sil, a, a, sil]);
    }

    #[test]
    fn expand_rejects_length_mismatch_and_zero_duration() {
        let t = TokenSequence::new(vec![1, 2], 3).unwrap();
        let d = DurationSequence::new(vec![2]).unwrap();
        assert!(matches!(expand_labels(&t, &d), Err(Error::Contract(_))));
        assert!(DurationSequence::new(vec![1, 0]).is_err());
        assert!(DurationSequence::new(vec![]).is_err());
    }

    #[test]
    fn inventory_rules() {
        assert!(PhonemeInventory::new(vec!["a".into(), "a".into()], "a").is_err());
        assert!(PhonemeInventory::new(vec!["a".into(), "b".into()], "sil").is_err());
        let inv = PhonemeInventory::toy_default();
        assert_eq!(inv.len(), 13);
        assert_eq!(inv.silence(), 0);
        assert_ne!(inv.fingerprint(), inv3().fingerprint());
    }

    #[test]
    fn token_ids_bounded() {
        assert!(TokenSequence::new(vec![3], 3).is_err());
        assert!(TokenSequence::new(vec![], 3).is_err());
    }

    #[test]
    fn gather_truth_examples() {
        let p = FramePosteriors::new(2, 3, vec![0.7, 0.2, 0.1, 0.1, 0.8, 0.1]).unwrap();
        let l = ExpandedLabels::from_ids(vec![0, 1]);
        assert_eq!(p.gather_truth(&l).unwrap(), vec![0.7, 0.8]);

        let onehot = FramePosteriors::new(2, 3, vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let l = ExpandedLabels::from_ids(vec![2, 0]);
        assert_eq!(onehot.gather_truth(&l).unwrap(), vec![1.0, 1.0]);

        let k = 13;
        let uniform = FramePosteriors::new(1, k, vec![1.0 / k as f64; k]).unwrap();
        let got = uniform.gather_truth(&ExpandedLabels::from_ids(vec![5])).unwrap();
        assert!((got[0] - 0.076923).abs() < 1e-6);

        assert!(p.gather_truth(&ExpandedLabels::from_ids(vec![0])).is_err());
        assert!(p.gather_truth(&ExpandedLabels::from_ids(vec![0, 3])).is_err());
    }

    #[test]
    fn posteriors_must_be_stochastic() {
        assert!(FramePosteriors::new(1, 2, vec![0.5, 0.6]).is_err());
        assert!(FramePosteriors::new(1, 2, vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn utterance_duration_sum_checked() {
        let mel = MelSpectrogram::new(3, 2, vec![0.0; 6]).unwrap();
        let u = Utterance {
            utt_id: "u1".into(),
            speaker: 0,
            tokens: TokenSequence::new(vec![1, 2], 3).unwrap(),
            durations: DurationSequence::new(vec![1, 1]).unwrap(),
            mel,
            impaired_mask: None,
        };
        match u.validate() {
            Err(Error::Invariant { context, .. }) => assert!(context.contains("u1")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mel_rejects_non_finite() {
        assert!(MelSpectrogram::new(1, 2, vec![0.0, f32::NAN]).is_err());
        assert!(MelSpectrogram::new(1, 2, vec![0.0]).is_err());
    }

    #[test]
    fn hyperparams_defaults_and_validation() {
        let hp = HyperParams::default();
        assert_eq!((hp.beta, hp.gamma, hp.lambda_), (0.05, 0.3, 25.0));
        hp.validate().unwrap();
        let zero = HyperParams { beta: 0.0, gamma: 0.0, ..hp };
        zero.validate().unwrap();
        assert!(HyperParams { lambda_: 0.0, ..hp }.validate().is_err());
        assert!(HyperParams { eps_floor: -1.0, ..hp }.validate().is_err());
    }

    #[test]
    fn breakdown_recomposes() {
        let b = LossBreakdown::compose(1.0, -1.0, 2.0, 0.05, 0.3, 4);
        assert!((b.l_total - 1.55).abs() < 1e-12);
        assert!(b.is_consistent());
    }
}
