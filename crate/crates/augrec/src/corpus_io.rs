//! On-disk corpus: `manifest.json` plus one MELF matrix per utterance.
//!
//! MELF layout: magic `MELF`, u32 LE frame count T, u32 LE bin count M,
//! four zero bytes, then T·M little-endian `f32`, frame-major.

use std::fs;
use std::path::{Path, PathBuf};

use augrec_core::toy::{ImpairmentSpec, ToyLanguageSpec};
use augrec_core::{Corpus, DurationSequence, MelSpectrogram, PhonemeInventory, SpeakerId, TokenSequence, Utterance};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

pub const MELF_MAGIC: &[u8; 4] = b"MELF";
pub const MELF_HEADER: usize = 16;
pub const MANIFEST: &str = "manifest.json";
const FORMAT: &str = "augrec-corpus/1";

pub fn encode_melf(mel: &MelSpectrogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(MELF_HEADER + 4 * mel.values().len());
    out.extend_from_slice(MELF_MAGIC);
    out.extend_from_slice(&(mel.frames() as u32).to_le_bytes());
    out.extend_from_slice(&(mel.bins() as u32).to_le_bytes());
    out.extend_from_slice(&[0; 4]);
    for v in mel.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_melf(bytes: &[u8], path: &Path) -> Result<MelSpectrogram> {
    let malformed = |detail: &str| AppError::Malformed {
        path: path.to_owned(),
        detail: detail.into(),
    };
    if bytes.len() < MELF_HEADER || &bytes[..4] != MELF_MAGIC {
        return Err(malformed("missing MELF header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (frames, bins) = (word(4), word(8));
    let body = &bytes[MELF_HEADER..];
    if frames == 0 || bins == 0 || body.len() != frames * bins * 4 {
        return Err(AppError::ShapeMismatch {
            path: path.to_owned(),
            detail: format!("header says {frames}×{bins}, body holds {} bytes", body.len()),
        });
    }
    let values: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(AppError::NonFinite {
            path: path.to_owned(),
            index,
        });
    }
    Ok(MelSpectrogram::new(frames, bins, values)?)
}

pub fn write_melf(path: &Path, mel: &MelSpectrogram) -> Result<()> {
    fs::write(path, encode_melf(mel)).map_err(AppError::io(path))
}

pub fn read_melf(path: &Path) -> Result<MelSpectrogram> {
    decode_melf(&fs::read(path).map_err(AppError::io(path))?, path)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct UtteranceRecord {
    utt_id: String,
    speaker: SpeakerId,
    tokens: Vec<usize>,
    durations: Vec<u32>,
    impaired_mask: Option<Vec<bool>>,
    mel: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: String,
    inventory: PhonemeInventory,
    bins: usize,
    speakers: Vec<String>,
    #[serde(default)]
    language: Option<ToyLanguageSpec>,
    #[serde(default)]
    impairment: Option<ImpairmentSpec>,
    utterances: Vec<UtteranceRecord>,
}

/// A loaded corpus directory with the generating process, when recorded.
#[derive(Debug, Clone)]
pub struct StoredCorpus {
    pub corpus: Corpus,
    pub language: Option<ToyLanguageSpec>,
    pub impairment: Option<ImpairmentSpec>,
}

pub fn save_corpus(
    dir: &Path,
    corpus: &Corpus,
    language: Option<&ToyLanguageSpec>,
    impairment: Option<&ImpairmentSpec>,
) -> Result<()> {
    corpus.validate()?;
    let mels = dir.join("mels");
    fs::create_dir_all(&mels).map_err(AppError::io(&mels))?;
    let mut records = Vec::with_capacity(corpus.utterances.len());
    for u in &corpus.utterances {
        if u.utt_id.is_empty() || u.utt_id.contains(['/', '\\']) || u.utt_id.starts_with('.') {
            return Err(AppError::Config(format!("utterance id {:?} is not a valid file name", u.utt_id)));
        }
        let rel = format!("mels/{}.melf", u.utt_id);
        write_melf(&dir.join(&rel), &u.mel)?;
        records.push(UtteranceRecord {
            utt_id: u.utt_id.clone(),
            speaker: u.speaker,
            tokens: u.tokens.ids().to_vec(),
            durations: u.durations.frames().to_vec(),
            impaired_mask: u.impaired_mask.clone(),
            mel: rel,
        });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        inventory: corpus.inventory.clone(),
        bins: corpus.bins,
        speakers: corpus.speakers.clone(),
        language: language.cloned(),
        impairment: impairment.cloned(),
        utterances: records,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(AppError::io(&path))
}

pub fn load_corpus(dir: &Path) -> Result<StoredCorpus> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(AppError::io(&path))?;
    let malformed = |detail: String| AppError::Malformed {
        path: path.clone(),
        detail,
    };
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    if manifest.format != FORMAT {
        return Err(malformed(format!("unsupported format {:?}", manifest.format)));
    }
    let k = manifest.inventory.len();
    let mut utterances = Vec::with_capacity(manifest.utterances.len());
    for r in manifest.utterances {
        let mel_path: PathBuf = dir.join(&r.mel);
        if Path::new(&r.mel).is_absolute() || r.mel.contains("..") {
            return Err(malformed(format!("matrix path {:?} escapes the corpus", r.mel)));
        }
        let mel = read_melf(&mel_path)?;
        if mel.bins() != manifest.bins {
            return Err(AppError::ShapeMismatch {
                path: mel_path,
                detail: format!("{} bins, manifest says {}", mel.bins(), manifest.bins),
            });
        }
        let tokens = TokenSequence::new(r.tokens, k).map_err(|e| malformed(format!("{}: {e}", r.utt_id)))?;
        let durations =
            DurationSequence::new(r.durations).map_err(|e| malformed(format!("{}: {e}", r.utt_id)))?;
        utterances.push(Utterance {
            utt_id: r.utt_id,
            speaker: r.speaker,
            tokens,
            durations,
            mel,
            impaired_mask: r.impaired_mask,
        });
    }
    let corpus = Corpus {
        inventory: manifest.inventory,
        bins: manifest.bins,
        speakers: manifest.speakers,
        utterances,
    };
    corpus.validate()?;
    Ok(StoredCorpus {
        corpus,
        language: manifest.language,
        impairment: manifest.impairment,
    })
}
