//! File-backed experiment stages. Every artifact lives in one run directory
//! named `<config hash>-s<seed>`:
//!
//! ```text
//! config.toml              resolved configuration
//! corpus/                  generated corpus (manifest.json + mels/*.melf)
//! classifier.ckpt          training-time phone classifier (frozen)
//! oracle.ckpt              evaluation oracle, independently seeded
//! pretrained.ckpt          multi-speaker acoustic model
//! duration.ckpt            duration predictor
//! <stage>.ckpt             fine-tuned acoustic models
//! logs/<stage>.jsonl       per-step loss records
//! eval/<system>/           held-out outputs per report row
//! report.json, report.csv, mels/*.pgm
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use augrec_core::acoustic::{train_duration_model, AcousticModel, DurationModel};
use augrec_core::classifier::PhoneClassifier;
use augrec_core::eval::{build_report, EvalReport, ReportContext};
use augrec_core::experiment::{
    report_systems, train_classifiers, Seeds, World, ROW_ABLATION, ROW_BASELINE, ROW_CLEAN_SOURCE, ROW_FULL,
    ROW_IMPAIRED_TARGET,
};
use augrec_core::train::{pretrain_tts, synthesize, FinetuneSession, Stage, StepRecord, TrainConfig};
use augrec_core::{Corpus, DurationSequence, MelSpectrogram, SpeakerId, TokenSequence};

use crate::checkpoint;
use crate::config::{run_dir_name, RunConfig};
use crate::corpus_io::{load_corpus, save_corpus};
use crate::error::{AppError, Result};
use crate::output::{write_report, TrainLog};
use crate::verify::{articulation_repair, speaker_preservation, Check};

pub const CORPUS_DIR: &str = "corpus";
pub const CLASSIFIER: &str = "classifier.ckpt";
pub const ORACLE: &str = "oracle.ckpt";
pub const PRETRAINED: &str = "pretrained.ckpt";
pub const DURATION: &str = "duration.ckpt";

/// Checkpoint file of a fine-tuning stage.
pub fn stage_checkpoint(stage: Stage) -> String {
    match stage {
        Stage::Pretrain => PRETRAINED.into(),
        s => format!("{}.ckpt", s.name()),
    }
}

const REPORT_ROWS: [&str; 5] = [ROW_CLEAN_SOURCE, ROW_IMPAIRED_TARGET, ROW_BASELINE, ROW_ABLATION, ROW_FULL];

#[derive(Debug, Clone)]
pub struct Run {
    pub dir: PathBuf,
    pub cfg: RunConfig,
    pub seed: u64,
    pub seeds: Seeds,
}

impl Run {
    /// Creates (or reuses) the run directory under `root` and records the
    /// resolved configuration.
    pub fn open(root: &Path, cfg: RunConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let dir = root.join(run_dir_name(&cfg, seed));
        fs::create_dir_all(dir.join("logs")).map_err(AppError::io(&dir))?;
        let path = dir.join("config.toml");
        fs::write(&path, cfg.to_toml()).map_err(AppError::io(&path))?;
        Ok(Self {
            dir,
            cfg,
            seed,
            seeds: Seeds::derive(seed),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn log(&self, stage: Stage) -> Result<TrainLog> {
        TrainLog::create(&self.dir.join("logs").join(format!("{}.jsonl", stage.name())))
    }

    pub fn gen_corpus(&self) -> Result<()> {
        let world = World::build(&self.cfg.experiment, self.seeds.world)?;
        let dir = self.path(CORPUS_DIR);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(AppError::io(&dir))?;
        }
        save_corpus(&dir, &world.corpus, Some(&world.lang), Some(&world.impairment))
    }

    pub fn world(&self) -> Result<World> {
        let stored = load_corpus(&self.path(CORPUS_DIR))?;
        let missing = |what: &str| AppError::Incompatible(format!("corpus manifest lacks the {what}"));
        let lang = stored.language.ok_or_else(|| missing("toy language"))?;
        let impairment = stored.impairment.ok_or_else(|| missing("impairment"))?;
        if impairment.speaker != self.cfg.experiment.target_speaker {
            return Err(AppError::Incompatible("corpus target speaker differs from the config".into()));
        }
        Ok(World {
            lang,
            target_speaker: impairment.speaker,
            impairment,
            corpus: stored.corpus,
            target_train: self.cfg.experiment.target_train,
        })
    }

    pub fn train_classifiers(&self) -> Result<()> {
        let world = self.world()?;
        let (classifier, oracle) = train_classifiers(&self.cfg.experiment, &world, &self.seeds)?;
        let inv = &world.lang.inventory;
        checkpoint::save(&self.path(CLASSIFIER), &classifier, inv)?;
        checkpoint::save(&self.path(ORACLE), &oracle, inv)
    }

    /// Returns pretraining warnings.
    pub fn pretrain(&self) -> Result<Vec<String>> {
        let world = self.world()?;
        let exp = &self.cfg.experiment;
        let corpus = world.pretrain_corpus();
        let mut log = self.log(Stage::Pretrain)?;
        let trained = pretrain_tts(&corpus, exp.acoustic, &exp.pretrain, self.seeds.pretrain, &mut |r| {
            log.record(r)
        })?;
        log.finish()?;
        let duration = train_duration_model(&trained.model, &world.corpus, &exp.duration, self.seeds.duration)?;
        let inv = &world.lang.inventory;
        checkpoint::save(&self.path(PRETRAINED), &trained.model, inv)?;
        checkpoint::save(&self.path(DURATION), &duration, inv)?;
        Ok(trained.warnings)
    }

    fn stage_config(&self, stage: Stage) -> Result<(TrainConfig, &'static str, u64)> {
        let exp = &self.cfg.experiment;
        Ok(match stage {
            Stage::Pretrain => return Err(AppError::Config("pretraining is not a fine-tuning stage".into())),
            Stage::BaselineFinetune => (exp.baseline, PRETRAINED, self.seeds.baseline),
            Stage::AblationNoReg => (exp.finetune_for(stage), "baseline-finetune.ckpt", self.seeds.ablation),
            Stage::Finetune => (exp.finetune_for(stage), "baseline-finetune.ckpt", self.seeds.finetune),
        })
    }

    pub fn finetune(&self, stage: Stage) -> Result<()> {
        let (cfg, init, seed) = self.stage_config(stage)?;
        let world = self.world()?;
        let inv = &world.lang.inventory;
        let start: AcousticModel = checkpoint::load(&self.path(init), inv)?;
        let classifier: PhoneClassifier = checkpoint::load(&self.path(CLASSIFIER), inv)?;
        let target = world.target_train();
        let pool = world.pretrain_corpus().utterances;
        let mut session = FinetuneSession::new(&start, &target, &pool, &classifier, &cfg, seed, inv)?;
        let mut log = self.log(stage)?;
        let every = self.cfg.checkpoint_every;
        while !session.is_done() {
            let rec: StepRecord = session.step()?;
            log.record(&rec);
            if every > 0 && rec.step % every == 0 && !session.is_done() {
                let name = format!("{}.step{:05}.ckpt", stage.name(), rec.step);
                checkpoint::save(&self.path(&name), session.model(), inv)?;
            }
        }
        log.finish()?;
        checkpoint::save(&self.path(&stage_checkpoint(stage)), session.model(), inv)
    }

    /// Synthesizes with predicted durations.
    pub fn synthesize(&self, model: &str, symbols: &[&str], speaker: SpeakerId) -> Result<(MelSpectrogram, DurationSequence)> {
        let world = self.world()?;
        let inv = &world.lang.inventory;
        let ids = symbols
            .iter()
            .map(|s| {
                inv.index_of(s)
                    .ok_or_else(|| AppError::Config(format!("unknown phoneme {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let tokens = TokenSequence::new(ids, inv.len())?;
        let acoustic: AcousticModel = checkpoint::load(&self.path(model), inv)?;
        let duration: DurationModel = checkpoint::load(&self.path(DURATION), inv)?;
        Ok(synthesize(&acoustic, &duration, &tokens, speaker)?)
    }

    /// Writes the held-out outputs of every report row under `eval/`.
    pub fn evaluate(&self) -> Result<()> {
        let world = self.world()?;
        let inv = &world.lang.inventory;
        let load = |stage| -> Result<AcousticModel> { checkpoint::load(&self.path(&stage_checkpoint(stage)), inv) };
        let baseline = load(Stage::BaselineFinetune)?;
        let ablation = load(Stage::AblationNoReg)?;
        let full = load(Stage::Finetune)?;
        let systems = report_systems(
            &world,
            self.seeds.world,
            self.cfg.experiment.source_speaker,
            &baseline,
            &ablation,
            &full,
        )?;
        let eval = self.path("eval");
        if eval.exists() {
            fs::remove_dir_all(&eval).map_err(AppError::io(&eval))?;
        }
        for (name, utts) in systems {
            let corpus = Corpus {
                utterances: utts,
                ..corpus_header(&world)
            };
            save_corpus(&eval.join(&name), &corpus, None, None)?;
        }
        Ok(())
    }

    /// Rebuilds the report from persisted outputs and renders it.
    pub fn report(&self) -> Result<EvalReport> {
        let world = self.world()?;
        let inv = &world.lang.inventory;
        let classifier: PhoneClassifier = checkpoint::load(&self.path(CLASSIFIER), inv)?;
        let oracle: PhoneClassifier = checkpoint::load(&self.path(ORACLE), inv)?;
        let systems = REPORT_ROWS
            .iter()
            .map(|&name| Ok((name.to_string(), load_corpus(&self.path("eval").join(name))?.corpus.utterances)))
            .collect::<Result<Vec<_>>>()?;
        let ctx = ReportContext {
            oracle: &oracle,
            training_classifier_id: classifier.id(),
            lang: &world.lang,
            target_speaker: world.target_speaker,
            impaired_set: &world.impairment.phonemes,
            seed: self.seed,
        };
        let mut report = build_report(&ctx, &systems)?;
        report.checkpoints = [CLASSIFIER, ORACLE, PRETRAINED, DURATION]
            .into_iter()
            .map(String::from)
            .chain(
                [Stage::BaselineFinetune, Stage::AblationNoReg, Stage::Finetune]
                    .into_iter()
                    .map(stage_checkpoint),
            )
            .collect();
        write_report(&self.dir, &report, &systems)?;
        Ok(report)
    }

    /// The whole chain followed by the experiment-level acceptance checks.
    pub fn reproduce(&self, progress: &mut dyn FnMut(&str)) -> Result<(EvalReport, Vec<Check>)> {
        self.gen_corpus()?;
        progress("gen-corpus");
        self.train_classifiers()?;
        progress("train-classifier");
        for w in self.pretrain()? {
            progress(&format!("warning: {w}"));
        }
        progress("pretrain");
        for stage in [Stage::BaselineFinetune, Stage::AblationNoReg, Stage::Finetune] {
            self.finetune(stage)?;
            progress(stage.name());
        }
        self.evaluate()?;
        progress("evaluate");
        let report = self.report()?;
        progress("report");
        let checks = vec![articulation_repair(&report), speaker_preservation(&report)];
        Ok((report, checks))
    }
}

/// Inventory, bins and speaker names without utterances.
fn corpus_header(world: &World) -> Corpus {
    Corpus {
        inventory: world.corpus.inventory.clone(),
        bins: world.corpus.bins,
        speakers: world.corpus.speakers.clone(),
        utterances: Vec::new(),
    }
}
