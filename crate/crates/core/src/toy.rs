//! Synthetic "toy language" corpora with controllable articulation
//! impairment.
//!
//! Every phoneme owns a spectral template with a distinct two-band pattern;
//! every speaker owns a fixed multiplicative gain vector (its coloration).
//! A clean frame is `coloration ⊙ template + noise`. The designated target
//! speaker can have selected phonemes corrupted, either by blending toward a
//! confusable phoneme's template or by drawing from the radial impairment
//! density `r^α · exp(−r²/(2σ²))` around the clean frame.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::types::{Corpus, DurationSequence, MelSpectrogram, PhonemeInventory, SpeakerId, TokenSequence, Utterance};

/// Knobs for building a [`ToyLanguageSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyLanguageConfig {
    pub bins: usize,
    pub speakers: usize,
    /// Overall magnitude of the templates.
    pub amplitude: f64,
    pub bump_width: f64,
    /// Per-bin standard deviation of the additive frame noise.
    pub noise_scale: f64,
    /// Standard deviation of the per-bin log gain of each speaker.
    pub coloration_std: f64,
    pub duration_range: (u32, u32),
    pub sentence_len: (usize, usize),
}

impl Default for ToyLanguageConfig {
    fn default() -> Self {
        Self {
            bins: 20,
            speakers: 9,
            amplitude: 0.2,
            bump_width: 1.2,
            noise_scale: 0.08,
            coloration_std: 0.08,
            duration_range: (2, 8),
            sentence_len: (4, 12),
        }
    }
}

/// The generating process of the toy world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyLanguageSpec {
    pub inventory: PhonemeInventory,
    pub bins: usize,
    /// K × M.
    pub templates: Vec<Vec<f64>>,
    /// S × M multiplicative gains.
    pub colorations: Vec<Vec<f64>>,
    pub noise_scale: f64,
    /// Typical duration of each phoneme, within `duration_range`.
    pub mean_durations: Vec<u32>,
    /// Per-speaker shift of all durations (−1, 0 or +1 frames).
    pub rate_offsets: Vec<i32>,
    pub duration_range: (u32, u32),
    pub sentence_len: (usize, usize),
}

impl ToyLanguageSpec {
    pub fn generate(inventory: PhonemeInventory, cfg: &ToyLanguageConfig, seed: u64) -> Result<Self> {
        if cfg.bins < 2 || cfg.speakers == 0 || inventory.len() < 2 {
            return Err(contract!("toy language needs ≥ 2 bins, ≥ 1 speaker and ≥ 2 symbols"));
        }
        let (dmin, dmax) = cfg.duration_range;
        if dmin == 0 || dmin > dmax {
            return Err(contract!("invalid duration range {dmin}..={dmax}"));
        }
        let (smin, smax) = cfg.sentence_len;
        if smin < 3 || smin > smax {
            return Err(contract!("sentence length range must start at ≥ 3 (two silences plus a phoneme)"));
        }
        let k = inventory.len();
        let m = cfg.bins;
        let phonemes = k - 1;
        // Band centres spread over the frequency axis; the second band is a
        // fixed permutation of the first so that no two patterns coincide.
        let spacing = (m as f64 - 2.0) / phonemes as f64;
        let mut templates = Vec::with_capacity(k);
        let mut rank = 0usize;
        for id in 0..k {
            if id == inventory.silence() {
                templates.push(vec![0.05 * cfg.amplitude; m]);
                continue;
            }
            let c1 = 1.0 + spacing * rank as f64;
            let c2 = 1.0 + spacing * ((5 * rank + 3) % phonemes) as f64;
            let w2 = 2.0 * cfg.bump_width * cfg.bump_width;
            let t = (0..m)
                .map(|b| {
                    let x = b as f64;
                    cfg.amplitude
                        * (1.0 + 2.0 * libm::exp(-(x - c1) * (x - c1) / w2) + libm::exp(-(x - c2) * (x - c2) / w2))
                })
                .collect();
            templates.push(t);
            rank += 1;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let colorations = (0..cfg.speakers)
            .map(|_| {
                (0..m)
                    .map(|_| {
                        let g: f64 = rng.sample(StandardNormal);
                        libm::exp(cfg.coloration_std * g)
                    })
                    .collect()
            })
            .collect();
        let rate_offsets = (0..cfg.speakers).map(|_| rng.random_range(-1..=1)).collect();
        let span = dmax - dmin;
        let mean_durations = (0..k)
            .map(|id| {
                if span < 2 {
                    dmin
                } else {
                    // mid-range values so that ±1 jitter stays inside the range
                    dmin + 1 + ((id as u32 * 7) % (span - 1).max(1))
                }
            })
            .collect();
        let spec = Self {
            inventory,
            bins: m,
            templates,
            colorations,
            noise_scale: cfg.noise_scale,
            mean_durations,
            rate_offsets,
            duration_range: cfg.duration_range,
            sentence_len: cfg.sentence_len,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn speakers(&self) -> usize {
        self.colorations.len()
    }

    /// Smallest Euclidean distance between two templates.
    pub fn min_template_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for a in 0..self.templates.len() {
            for b in a + 1..self.templates.len() {
                best = best.min(distance(&self.templates[a], &self.templates[b]));
            }
        }
        best
    }

    /// Templates must stay at least four noise scales apart.
    pub fn validate(&self) -> Result<()> {
        let k = self.inventory.len();
        if self.templates.len() != k || self.templates.iter().any(|t| t.len() != self.bins) {
            return Err(contract!("templates must be {k}×{}", self.bins));
        }
        if self.colorations.iter().any(|c| c.len() != self.bins || c.iter().any(|g| !(*g > 0.0))) {
            return Err(contract!("colorations must be positive {}-vectors", self.bins));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(contract!("noise scale must be non-negative"));
        }
        let d = self.min_template_distance();
        if d < 4.0 * self.noise_scale {
            return Err(contract!(
                "templates are {d:.4} apart, below 4× the noise scale {}",
                self.noise_scale
            ));
        }
        Ok(())
    }

    /// Expected clean frame of `phoneme` spoken by `speaker`.
    pub fn colored_template(&self, speaker: SpeakerId, phoneme: usize) -> Vec<f64> {
        self.templates[phoneme]
            .iter()
            .zip(&self.colorations[speaker])
            .map(|(t, c)| t * c)
            .collect()
    }

    /// Non-silence template closest to `phoneme`'s.
    pub fn nearest_other(&self, phoneme: usize) -> usize {
        let sil = self.inventory.silence();
        (0..self.templates.len())
            .filter(|&j| j != phoneme && j != sil)
            .min_by(|&a, &b| {
                distance(&self.templates[phoneme], &self.templates[a])
                    .total_cmp(&distance(&self.templates[phoneme], &self.templates[b]))
            })
            .expect("inventory has another phoneme")
    }

    /// Draws a token sequence (silence, phonemes without immediate repeats,
    /// silence) and its durations.
    pub fn sample_sentence<R: Rng + ?Sized>(&self, speaker: SpeakerId, rng: &mut R) -> (TokenSequence, DurationSequence) {
        let sil = self.inventory.silence();
        let k = self.inventory.len();
        let n = rng.random_range(self.sentence_len.0..=self.sentence_len.1);
        let mut ids = Vec::with_capacity(n);
        ids.push(sil);
        while ids.len() < n - 1 {
            let p = rng.random_range(0..k);
            if p != sil && Some(&p) != ids.last() {
                ids.push(p);
            }
        }
        ids.push(sil);
        let (dmin, dmax) = self.duration_range;
        let rate = self.rate_offsets[speaker];
        let durs = ids
            .iter()
            .map(|&p| {
                let jitter: i32 = rng.random_range(-1..=1);
                (self.mean_durations[p] as i32 + rate + jitter).clamp(dmin as i32, dmax as i32) as u32
            })
            .collect();
        (
            TokenSequence::new(ids, k).expect("ids drawn from inventory"),
            DurationSequence::new(durs).expect("durations clamped to ≥ 1"),
        )
    }

    /// Renders frames for given content. Returns the mel and the per-frame
    /// impairment mask.
    pub fn render<R: Rng + ?Sized>(
        &self,
        speaker: SpeakerId,
        tokens: &TokenSequence,
        durations: &DurationSequence,
        impairment: Option<&ImpairmentSpec>,
        rng: &mut R,
    ) -> Result<(MelSpectrogram, Vec<bool>)> {
        let m = self.bins;
        let frames = durations.total();
        let mut values = Vec::with_capacity(frames * m);
        let mut mask = Vec::with_capacity(frames);
        let active = impairment.filter(|imp| imp.speaker == speaker);
        for (&p, &d) in tokens.ids().iter().zip(durations.frames()) {
            let slot = active.and_then(|imp| imp.phonemes.iter().position(|&q| q == p));
            for _ in 0..d {
                let (frame, impaired) = match (active, slot) {
                    (Some(imp), Some(i)) => (self.impaired_frame(speaker, p, imp, i, rng)?, true),
                    _ => (self.clean_frame(speaker, p, rng), false),
                };
                values.extend(frame.iter().map(|&v| v as f32));
                mask.push(impaired);
            }
        }
        Ok((MelSpectrogram::new(frames, m, values)?, mask))
    }

    fn clean_frame<R: Rng + ?Sized>(&self, speaker: SpeakerId, phoneme: usize, rng: &mut R) -> Vec<f64> {
        let mut f = self.colored_template(speaker, phoneme);
        self.add_noise(&mut f, rng);
        f
    }

    fn add_noise<R: Rng + ?Sized>(&self, frame: &mut [f64], rng: &mut R) {
        for v in frame {
            let z: f64 = rng.sample(StandardNormal);
            *v += self.noise_scale * z;
        }
    }

    fn impaired_frame<R: Rng + ?Sized>(
        &self,
        speaker: SpeakerId,
        phoneme: usize,
        imp: &ImpairmentSpec,
        slot: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        match &imp.mode {
            ImpairmentMode::Substitution { rho, confusable } => {
                let target = &self.templates[confusable[slot]];
                let mut f: Vec<f64> = self.templates[phoneme]
                    .iter()
                    .zip(target)
                    .zip(&self.colorations[speaker])
                    .map(|((a, b), c)| c * ((1.0 - rho) * a + rho * b))
                    .collect();
                self.add_noise(&mut f, rng);
                Ok(f)
            }
            ImpairmentMode::RadialSampled { alpha, sigma2 } => {
                let clean = self.clean_frame(speaker, phoneme, rng);
                sample_impaired_frame(&clean, *alpha, *sigma2, rng)
            }
        }
    }

    /// Phoneme whose speaker-colored template is closest to `frame`.
    pub fn nearest_template(&self, speaker: SpeakerId, frame: &[f64]) -> usize {
        (0..self.templates.len())
            .min_by(|&a, &b| {
                distance(frame, &self.colored_template(speaker, a))
                    .total_cmp(&distance(frame, &self.colored_template(speaker, b)))
            })
            .expect("non-empty inventory")
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// How the target speaker's impaired phonemes are corrupted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ImpairmentMode {
    /// Blend toward `confusable[i]`'s template with factor ρ.
    Substitution { rho: f64, confusable: Vec<usize> },
    /// Draw from the radial impairment density around the clean frame.
    RadialSampled { alpha: f64, sigma2: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpairmentSpec {
    pub speaker: SpeakerId,
    pub phonemes: Vec<usize>,
    #[serde(flatten)]
    pub mode: ImpairmentMode,
}

impl ImpairmentSpec {
    /// Substitution of the given symbols toward their nearest templates.
    pub fn substitution(lang: &ToyLanguageSpec, speaker: SpeakerId, symbols: &[&str], rho: f64) -> Result<Self> {
        let phonemes = symbols
            .iter()
            .map(|s| {
                lang.inventory
                    .index_of(s)
                    .ok_or_else(|| contract!("unknown phoneme {s:?}"))
            })
            .collect::<Result<Vec<_>>>()?;
        let confusable = phonemes.iter().map(|&p| lang.nearest_other(p)).collect();
        let spec = Self {
            speaker,
            phonemes,
            mode: ImpairmentMode::Substitution { rho, confusable },
        };
        spec.validate(lang)?;
        Ok(spec)
    }

    pub fn validate(&self, lang: &ToyLanguageSpec) -> Result<()> {
        let k = lang.inventory.len();
        if self.speaker >= lang.speakers() {
            return Err(contract!("impaired speaker {} not in the speaker list", self.speaker));
        }
        if self.phonemes.iter().any(|&p| p >= k) {
            return Err(contract!("impaired phoneme outside inventory"));
        }
        if self.phonemes.contains(&lang.inventory.silence()) {
            return Err(contract!("silence cannot be impaired"));
        }
        match &self.mode {
            ImpairmentMode::Substitution { rho, confusable } => {
                if !(0.0..=1.0).contains(rho) {
                    return Err(contract!("rho must lie in [0, 1], got {rho}"));
                }
                if confusable.len() != self.phonemes.len() || confusable.iter().any(|&c| c >= k) {
                    return Err(contract!("one confusable phoneme per impaired phoneme required"));
                }
            }
            ImpairmentMode::RadialSampled { alpha, sigma2 } => {
                if !(*alpha >= 0.0) || !(*sigma2 > 0.0) {
                    return Err(contract!("need alpha ≥ 0 and sigma2 > 0"));
                }
            }
        }
        Ok(())
    }
}

/// Exact draw from the normalized density ∝ r^α · exp(−r²/(2σ²)) around
/// `clean`, r = ‖frame − clean‖.
///
/// The density is isotropic, so r² ~ Gamma(shape (α+M)/2, scale 2σ²) and the
/// direction is uniform on the sphere.
pub fn sample_impaired_frame<R: Rng + ?Sized>(clean: &[f64], alpha: f64, sigma2: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(alpha >= 0.0 && alpha.is_finite()) || !(sigma2 > 0.0 && sigma2.is_finite()) || clean.is_empty() {
        return Err(contract!("need alpha ≥ 0, sigma2 > 0 and a non-empty frame"));
    }
    let m = clean.len() as f64;
    let gamma = Gamma::new((alpha + m) / 2.0, 2.0 * sigma2).map_err(|e| contract!("gamma law: {e}"))?;
    let r = libm::sqrt(gamma.sample(rng));
    let mut dir: Vec<f64> = loop {
        let d: Vec<f64> = clean.iter().map(|_| rng.sample(StandardNormal)).collect();
        if d.iter().any(|v: &f64| *v != 0.0) {
            break d;
        }
    };
    let norm = libm::sqrt(dir.iter().map(|v| v * v).sum());
    for (d, c) in dir.iter_mut().zip(clean) {
        *d = c + r * *d / norm;
    }
    Ok(dir)
}

/// Stream-separated RNG so each utterance's draws depend only on
/// (seed, speaker, index).
pub fn utterance_rng(seed: u64, speaker: SpeakerId, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((speaker as u64) << 32) | index as u64);
    rng
}

pub fn utterance_id(speaker: SpeakerId, index: usize) -> String {
    format!("spk{speaker:02}_{index:04}")
}

/// Generates `sentences_per_speaker` utterances for every listed speaker.
pub fn generate_corpus(
    lang: &ToyLanguageSpec,
    speakers: &[SpeakerId],
    sentences_per_speaker: usize,
    impairment: Option<&ImpairmentSpec>,
    seed: u64,
) -> Result<Corpus> {
    if let Some(imp) = impairment {
        imp.validate(lang)?;
        if !speakers.contains(&imp.speaker) {
            return Err(contract!("impaired speaker {} is not among the generated speakers", imp.speaker));
        }
    }
    if let Some(&s) = speakers.iter().find(|&&s| s >= lang.speakers()) {
        return Err(contract!("speaker {s} has no coloration"));
    }
    let mut utterances = Vec::with_capacity(speakers.len() * sentences_per_speaker);
    for &s in speakers {
        for i in 0..sentences_per_speaker {
            let mut rng = utterance_rng(seed, s, i);
            let (tokens, durations) = lang.sample_sentence(s, &mut rng);
            let (mel, mask) = lang.render(s, &tokens, &durations, impairment, &mut rng)?;
            utterances.push(Utterance {
                utt_id: utterance_id(s, i),
                speaker: s,
                tokens,
                durations,
                mel,
                impaired_mask: Some(mask),
            });
        }
    }
    let corpus = Corpus {
        inventory: lang.inventory.clone(),
        bins: lang.bins,
        speakers: (0..lang.speakers()).map(|s| format!("speaker{s:02}")).collect(),
        utterances,
    };
    corpus.validate()?;
    Ok(corpus)
}

/// Re-renders the content of `source` utterances with another speaker's
/// clean process (same tokens and durations).
pub fn rerender(lang: &ToyLanguageSpec, source: &[Utterance], speaker: SpeakerId, seed: u64) -> Result<Vec<Utterance>> {
    if speaker >= lang.speakers() {
        return Err(Error::Invariant {
            context: "rerender".into(),
            detail: format!("unknown speaker {speaker}"),
        });
    }
    source
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let mut rng = utterance_rng(seed ^ 0x00c0_ffee, speaker, i);
            let (mel, mask) = lang.render(speaker, &u.tokens, &u.durations, None, &mut rng)?;
            Ok(Utterance {
                utt_id: format!("{}_as_spk{speaker:02}", u.utt_id),
                speaker,
                tokens: u.tokens.clone(),
                durations: u.durations.clone(),
                mel,
                impaired_mask: Some(mask),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lang() -> ToyLanguageSpec {
        ToyLanguageSpec::generate(PhonemeInventory::toy_default(), &ToyLanguageConfig::default(), 11).unwrap()
    }

    #[test]
    fn templates_separated() {
        let l = lang();
        assert!(l.min_template_distance() >= 4.0 * l.noise_scale);
    }

    #[test]
    fn nearest_confusables_pair_up() {
        let l = lang();
        let inv = &l.inventory;
        let pair = |a: &str| inv.symbol(l.nearest_other(inv.index_of(a).unwrap())).unwrap();
        assert_eq!(pair("k"), "g");
        assert_eq!(pair("t"), "d");
        assert_eq!(pair("y"), "u");
    }

    #[test]
    fn clean_corpus_has_empty_masks() {
        let l = lang();
        let c = generate_corpus(&l, &[0, 1], 5, None, 3).unwrap();
        assert_eq!(c.utterances.len(), 10);
        for u in &c.utterances {
            assert!(u.impaired_mask.as_ref().unwrap().iter().all(|m| !m));
            let n = u.tokens.len();
            assert!((4..=12).contains(&n));
            assert!(u.durations.frames().iter().all(|d| (2..=8).contains(d)));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let l = lang();
        let imp = ImpairmentSpec::substitution(&l, 1, &["k", "t", "y"], 0.85).unwrap();
        let a = generate_corpus(&l, &[0, 1], 4, Some(&imp), 7).unwrap();
        let b = generate_corpus(&l, &[0, 1], 4, Some(&imp), 7).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(&l, &[0, 1], 4, Some(&imp), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn impaired_speaker_must_be_generated() {
        let l = lang();
        let imp = ImpairmentSpec::substitution(&l, 2, &["k"], 0.5).unwrap();
        assert!(generate_corpus(&l, &[0, 1], 1, Some(&imp), 1).is_err());
        assert!(ImpairmentSpec::substitution(&l, 1, &["sil"], 0.5).is_err());
        assert!(ImpairmentSpec::substitution(&l, 1, &["k"], 1.5).is_err());
    }

    #[test]
    fn full_substitution_reads_as_confusable() {
        let l = lang();
        let imp = ImpairmentSpec::substitution(&l, 0, &["k", "t", "y"], 1.0).unwrap();
        let c = generate_corpus(&l, &[0], 40, Some(&imp), 5).unwrap();
        let ImpairmentMode::Substitution { confusable, .. } = &imp.mode else { unreachable!() };
        let (mut hit, mut n) = (0, 0);
        for u in &c.utterances {
            let labels = u.labels();
            let mel = u.mel.to_f64();
            for (t, &impaired) in u.impaired_mask.as_ref().unwrap().iter().enumerate() {
                if !impaired {
                    continue;
                }
                let slot = imp.phonemes.iter().position(|&p| p == labels.ids()[t]).unwrap();
                n += 1;
                if l.nearest_template(0, &mel[t * l.bins..(t + 1) * l.bins]) == confusable[slot] {
                    hit += 1;
                }
            }
        }
        assert!(n > 50);
        assert!(hit as f64 / n as f64 >= 0.9, "{hit}/{n}");
    }

    #[test]
    fn sampler_zero_alpha_mean_square_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let clean = vec![0.5; 20];
        let n = 20_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let f = sample_impaired_frame(&clean, 0.0, 1.0, &mut rng).unwrap();
            let d = distance(&f, &clean);
            acc += d * d;
        }
        let mean = acc / n as f64;
        assert!((mean - 20.0).abs() / 20.0 < 0.03, "{mean}");
        assert!(sample_impaired_frame(&clean, -1.0, 1.0, &mut rng).is_err());
        assert!(sample_impaired_frame(&clean, 1.0, 0.0, &mut rng).is_err());
    }
}
