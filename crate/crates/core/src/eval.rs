//! Oracle frame error rate, coloration-based speaker similarity and the
//! system comparison report.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::classifier::PhoneClassifier;
use crate::error::{contract, Error, Result};
use crate::toy::ToyLanguageSpec;
use crate::types::{argmax, SpeakerId, Utterance};

/// Frames per phoneme required for a coloration estimate.
pub const MIN_FRAMES_PER_PHONEME: usize = 10;

pub const REPORT_NOTE: &str =
    "FER = frame error rate of an independently seeded oracle classifier against ground-truth expanded labels; \
     it stands in for phone error rate and is strictly harsher (no decoding).";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FerBreakdown {
    pub frames: usize,
    pub errors: usize,
    pub impaired_frames: usize,
    pub impaired_errors: usize,
    pub clean_frames: usize,
    pub clean_errors: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl FerBreakdown {
    /// Adds one frame record.
    pub fn record(&mut self, impaired: bool, error: bool) {
        self.frames += 1;
        self.errors += usize::from(error);
        if impaired {
            self.impaired_frames += 1;
            self.impaired_errors += usize::from(error);
        } else {
            self.clean_frames += 1;
            self.clean_errors += usize::from(error);
        }
    }

    pub fn overall(&self) -> f64 {
        ratio(self.errors, self.frames)
    }

    pub fn impaired(&self) -> f64 {
        ratio(self.impaired_errors, self.impaired_frames)
    }

    pub fn clean(&self) -> f64 {
        ratio(self.clean_errors, self.clean_frames)
    }
}

/// Per-frame oracle decisions; `impaired_set` splits frames by the
/// impaired-set membership of their label.
pub fn evaluate_fer(
    oracle: &PhoneClassifier,
    training_classifier_id: u64,
    utterances: &[Utterance],
    impaired_set: &[usize],
) -> Result<FerBreakdown> {
    if oracle.id() == training_classifier_id {
        return Err(contract!("the evaluation oracle must not be the training-time classifier"));
    }
    let mut fer = FerBreakdown::default();
    for u in utterances {
        u.validate()?;
        let post = oracle.posteriors(&u.mel)?;
        for (t, &label) in u.labels().ids().iter().enumerate() {
            let pred = argmax(post.row(t));
            fer.record(impaired_set.contains(&label), pred != label);
        }
    }
    Ok(fer)
}

/// Per-bin gain estimate: for every phoneme with enough frames the least
/// squares gain against its template, then the median over phonemes.
pub fn estimate_coloration(utterances: &[Utterance], lang: &ToyLanguageSpec) -> Result<Vec<f64>> {
    let m = lang.bins;
    let k = lang.inventory.len();
    let sil = lang.inventory.silence();
    let mut sums = vec![0.0; k * m];
    let mut counts = vec![0usize; k];
    for u in utterances {
        if u.mel.bins() != m {
            return Err(Error::Shape(format!("{} has {} bins, expected {m}", u.utt_id, u.mel.bins())));
        }
        for (t, &label) in u.labels().ids().iter().enumerate() {
            counts[label] += 1;
            for (s, &v) in sums[label * m..(label + 1) * m].iter_mut().zip(u.mel.frame(t)) {
                *s += f64::from(v);
            }
        }
    }
    let usable: Vec<usize> = (0..k)
        .filter(|&p| p != sil && counts[p] >= MIN_FRAMES_PER_PHONEME)
        .collect();
    if usable.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no phoneme has {MIN_FRAMES_PER_PHONEME} or more frames"
        )));
    }
    let mut out = Vec::with_capacity(m);
    let mut per_phoneme = Vec::with_capacity(usable.len());
    for b in 0..m {
        per_phoneme.clear();
        for &p in &usable {
            // identical template rows, so the LS gain is mean / template
            let mean = sums[p * m + b] / counts[p] as f64;
            per_phoneme.push(mean / lang.templates[p][b]);
        }
        out.push(median(&mut per_phoneme));
    }
    Ok(out)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `(1 + cos) / 2` between mean-centred gain vectors.
pub fn coloration_similarity(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() || estimate.is_empty() {
        return Err(Error::Shape("coloration vectors differ in length".into()));
    }
    let centre = |v: &[f64]| {
        let mu = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| x - mu).collect::<Vec<_>>()
    };
    let (a, b) = (centre(estimate), centre(truth));
    let na = libm::sqrt(a.iter().map(|x| x * x).sum());
    let nb = libm::sqrt(b.iter().map(|x| x * x).sum());
    if !(na > 1e-12 && nb > 1e-12) || !na.is_finite() {
        return Err(Error::InsufficientData("degenerate coloration estimate".into()));
    }
    let cos = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
    Ok((0.5 * (1.0 + cos)).clamp(0.0, 1.0))
}

/// Similarity of the frames' estimated coloration to every toy speaker.
pub fn similarity_by_speaker(utterances: &[Utterance], lang: &ToyLanguageSpec) -> Result<Vec<f64>> {
    let est = estimate_coloration(utterances, lang)?;
    lang.colorations
        .iter()
        .map(|c| coloration_similarity(&est, c))
        .collect()
}

pub fn evaluate_speaker_similarity(utterances: &[Utterance], lang: &ToyLanguageSpec, speaker: SpeakerId) -> Result<f64> {
    if speaker >= lang.speakers() {
        return Err(contract!("unknown speaker {speaker}"));
    }
    Ok(similarity_by_speaker(utterances, lang)?[speaker])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub system: String,
    pub fer_overall: f64,
    pub fer_impaired: f64,
    pub fer_clean: f64,
    pub similarity: f64,
    /// Similarity against every toy speaker's coloration, indexed by id.
    pub similarity_by_speaker: Vec<f64>,
    pub utterances: usize,
    pub frames: usize,
    pub counts: FerBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub note: String,
    pub target_speaker: SpeakerId,
    pub impaired_phonemes: Vec<String>,
    pub oracle_id: u64,
    pub training_classifier_id: u64,
    pub seed: u64,
    pub checkpoints: Vec<String>,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn row(&self, system: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.system == system)
    }

    /// Rates must be probabilities and frame counts must add up.
    pub fn validate(&self) -> Result<()> {
        for r in &self.rows {
            let c = &r.counts;
            let rates = [r.fer_overall, r.fer_impaired, r.fer_clean, r.similarity];
            if rates.iter().any(|x| !(0.0..=1.0).contains(x)) || c.impaired_frames + c.clean_frames != c.frames {
                return Err(Error::Invariant {
                    context: r.system.clone(),
                    detail: "rates outside [0,1] or frame counts inconsistent".into(),
                });
            }
            if r.fer_overall != c.overall() || r.fer_impaired != c.impaired() || r.fer_clean != c.clean() {
                return Err(Error::Invariant {
                    context: r.system.clone(),
                    detail: "rates do not recompute from frame records".into(),
                });
            }
        }
        Ok(())
    }
}

/// Inputs shared by every evaluated system.
#[derive(Debug, Clone, Copy)]
pub struct ReportContext<'a> {
    pub oracle: &'a PhoneClassifier,
    pub training_classifier_id: u64,
    pub lang: &'a ToyLanguageSpec,
    pub target_speaker: SpeakerId,
    pub impaired_set: &'a [usize],
    pub seed: u64,
}

/// Rows keep the order of `systems`; all systems must cover the same
/// sentences (ids, tokens and durations).
pub fn build_report(ctx: &ReportContext<'_>, systems: &[(String, Vec<Utterance>)]) -> Result<EvalReport> {
    let Some((_, reference)) = systems.first() else {
        return Err(Error::Empty("systems to report".into()));
    };
    let mut rows = Vec::with_capacity(systems.len());
    for (name, utts) in systems {
        let same = utts.len() == reference.len()
            && utts
                .iter()
                .zip(reference)
                .all(|(a, b)| a.tokens == b.tokens && a.durations == b.durations);
        if !same {
            return Err(Error::Incompatible(format!("system {name} was evaluated on a different sentence set")));
        }
        let counts = evaluate_fer(ctx.oracle, ctx.training_classifier_id, utts, ctx.impaired_set)?;
        let by_speaker = similarity_by_speaker(utts, ctx.lang)?;
        rows.push(EvalRow {
            system: name.clone(),
            fer_overall: counts.overall(),
            fer_impaired: counts.impaired(),
            fer_clean: counts.clean(),
            similarity: by_speaker[ctx.target_speaker],
            similarity_by_speaker: by_speaker,
            utterances: utts.len(),
            frames: counts.frames,
            counts,
        });
    }
    let report = EvalReport {
        note: REPORT_NOTE.into(),
        target_speaker: ctx.target_speaker,
        impaired_phonemes: ctx
            .impaired_set
            .iter()
            .map(|&p| ctx.lang.inventory.symbol(p).unwrap_or("?").into())
            .collect(),
        oracle_id: ctx.oracle.id(),
        training_classifier_id: ctx.training_classifier_id,
        seed: ctx.seed,
        checkpoints: Vec::new(),
        rows,
    };
    report.validate()?;
    Ok(report)
}
