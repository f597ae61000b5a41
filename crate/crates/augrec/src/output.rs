//! Training logs and report rendering.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use augrec_core::eval::EvalReport;
use augrec_core::train::StepRecord;
use augrec_core::Utterance;
use serde::Serialize;

use crate::error::{AppError, Result};

#[derive(Serialize)]
struct LogLine<'a> {
    step: usize,
    stage: &'a str,
    l_rec: f64,
    l_reg: f64,
    l_consis: f64,
    l_total: f64,
    frame_count: usize,
    mixed_items: usize,
    batch_items: usize,
}

/// Line-delimited JSON training log. Loss values are batch sums.
#[derive(Debug)]
pub struct TrainLog {
    path: PathBuf,
    out: BufWriter<File>,
    error: Option<std::io::Error>,
}

impl TrainLog {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(AppError::io(path))?;
        Ok(Self {
            path: path.to_owned(),
            out: BufWriter::new(file),
            error: None,
        })
    }

    pub fn record(&mut self, r: &StepRecord) {
        if self.error.is_some() {
            return;
        }
        let b = &r.breakdown;
        let line = LogLine {
            step: r.step,
            stage: r.stage.name(),
            l_rec: b.l_rec,
            l_reg: b.l_reg,
            l_consis: b.l_consis,
            l_total: b.l_total,
            frame_count: b.frame_count,
            mixed_items: r.mixed_items,
            batch_items: r.batch_items,
        };
        let res = serde_json::to_writer(&mut self.out, &line)
            .map_err(std::io::Error::from)
            .and_then(|()| self.out.write_all(b"\n"));
        if let Err(e) = res {
            self.error = Some(e);
        }
    }

    pub fn finish(mut self) -> Result<()> {
        if let Some(e) = self.error.take() {
            return Err(AppError::io(&self.path)(e));
        }
        self.out.flush().map_err(AppError::io(&self.path))
    }
}

pub fn report_csv(report: &EvalReport) -> String {
    let mut s = format!("# {}\n", report.note);
    s.push_str("system,fer_overall,fer_impaired,fer_clean,similarity,utterances,frames\n");
    for r in &report.rows {
        s.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{},{}\n",
            r.system, r.fer_overall, r.fer_impaired, r.fer_clean, r.similarity, r.utterances, r.frames
        ));
    }
    s
}

/// Human-readable table for the terminal.
pub fn report_table(report: &EvalReport) -> String {
    let mut s = format!(
        "{:<28} {:>8} {:>10} {:>8} {:>8}\n",
        "system", "FER%", "impaired%", "clean%", "sim"
    );
    for r in &report.rows {
        s.push_str(&format!(
            "{:<28} {:>8.2} {:>10.2} {:>8.2} {:>8.3}\n",
            r.system,
            100.0 * r.fer_overall,
            100.0 * r.fer_impaired,
            100.0 * r.fer_clean,
            r.similarity
        ));
    }
    s
}

/// Binary PGM, one column per frame, low bins at the bottom.
pub fn pgm(mel: &augrec_core::MelSpectrogram, lo: f32, hi: f32) -> Vec<u8> {
    let (t, m) = (mel.frames(), mel.bins());
    let mut out = format!("P5\n{t} {m}\n255\n").into_bytes();
    let span = (hi - lo).max(f32::EPSILON);
    for b in (0..m).rev() {
        for f in 0..t {
            let v = (mel.frame(f)[b] - lo) / span;
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

pub fn write_report(dir: &Path, report: &EvalReport, systems: &[(String, Vec<Utterance>)]) -> Result<()> {
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    let path = dir.join("report.json");
    fs::write(&path, json).map_err(AppError::io(&path))?;
    let path = dir.join("report.csv");
    fs::write(&path, report_csv(report)).map_err(AppError::io(&path))?;
    let mels = dir.join("mels");
    fs::create_dir_all(&mels).map_err(AppError::io(&mels))?;
    let firsts: Vec<(&str, &Utterance)> = systems
        .iter()
        .filter_map(|(name, utts)| utts.first().map(|u| (name.as_str(), u)))
        .collect();
    let (lo, hi) = firsts
        .iter()
        .flat_map(|(_, u)| u.mel.values())
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    for (name, u) in firsts {
        let path = mels.join(format!("{name}.pgm"));
        fs::write(&path, pgm(&u.mel, lo, hi)).map_err(AppError::io(&path))?;
    }
    Ok(())
}
