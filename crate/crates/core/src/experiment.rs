//! The default synthetic experiment: eight clean speakers plus one impaired
//! target speaker, the four trained systems and the comparison report.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::acoustic::{train_duration_model, AcousticArch, AcousticModel, DurationModel, DurationTrainConfig};
use crate::classifier::{train_classifier, ClassifierTrainConfig, PhoneClassifier};
use crate::error::{contract, Result};
use crate::eval::{build_report, EvalReport, ReportContext};
use crate::toy::{generate_corpus, rerender, ImpairmentSpec, ToyLanguageConfig, ToyLanguageSpec};
use crate::train::{finetune_tts, pretrain_tts, Stage, StepRecord, TrainConfig};
use crate::types::{Corpus, HyperParams, PhonemeInventory, SpeakerId, Utterance};

pub const ROW_CLEAN_SOURCE: &str = "recording-clean-source";
pub const ROW_IMPAIRED_TARGET: &str = "recording-impaired-target";
pub const ROW_BASELINE: &str = "baseline-finetune";
pub const ROW_ABLATION: &str = "ablation-no-reg";
pub const ROW_FULL: &str = "augrec-full";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub toy: ToyLanguageConfig,
    pub target_speaker: SpeakerId,
    pub impaired_phonemes: Vec<String>,
    pub rho: f64,
    pub sentences_per_speaker: usize,
    pub target_sentences: usize,
    /// Leading target sentences used for fine-tuning; the rest are held out.
    pub target_train: usize,
    /// Clean speaker whose rendering of the held-out content is reported.
    pub source_speaker: SpeakerId,
    pub classifier: ClassifierTrainConfig,
    pub acoustic: AcousticArch,
    pub duration: DurationTrainConfig,
    pub pretrain: TrainConfig,
    /// Plain reconstruction fine-tuning on the target data.
    pub baseline: TrainConfig,
    /// Augmented-loss fine-tuning, started from the baseline.
    pub finetune: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut baseline = TrainConfig::finetune(Stage::BaselineFinetune);
        baseline.mix_ratio = 0.0;
        Self {
            toy: ToyLanguageConfig::default(),
            target_speaker: 8,
            impaired_phonemes: ["k", "t", "y"].iter().map(|s| s.to_string()).collect(),
            rho: 0.85,
            sentences_per_speaker: 200,
            target_sentences: 60,
            target_train: 30,
            source_speaker: 0,
            classifier: ClassifierTrainConfig::default(),
            acoustic: AcousticArch::default(),
            duration: DurationTrainConfig::default(),
            pretrain: TrainConfig::pretrain(),
            baseline,
            finetune: TrainConfig::finetune(Stage::Finetune),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_speaker >= self.toy.speakers || self.source_speaker >= self.toy.speakers {
            return Err(contract!("target and source speakers must be toy speakers"));
        }
        if self.source_speaker == self.target_speaker {
            return Err(contract!("source speaker must differ from the target"));
        }
        if self.target_train == 0 || self.target_train >= self.target_sentences {
            return Err(contract!("need 0 < target_train < target_sentences"));
        }
        if self.toy.speakers < 2 {
            return Err(contract!("need at least one pretraining speaker besides the target"));
        }
        self.pretrain.validate()?;
        self.baseline.validate()?;
        self.finetune.validate()?;
        if self.pretrain.stage != Stage::Pretrain || self.baseline.stage != Stage::BaselineFinetune {
            return Err(contract!("pretrain/baseline sections carry fixed stages"));
        }
        if matches!(self.finetune.stage, Stage::Pretrain | Stage::BaselineFinetune) {
            return Err(contract!("finetune section must use an augmented-loss stage"));
        }
        Ok(())
    }

    /// Augmented-loss config for a given stage, sharing everything else.
    pub fn finetune_for(&self, stage: Stage) -> TrainConfig {
        TrainConfig { stage, ..self.finetune }
    }

    pub fn with_hp(mut self, hp: HyperParams) -> Self {
        self.finetune.hp = hp;
        self
    }
}

/// Independent seeds for the experiment's stochastic parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub world: u64,
    pub classifier: u64,
    pub oracle: u64,
    pub pretrain: u64,
    pub duration: u64,
    pub baseline: u64,
    pub finetune: u64,
    pub ablation: u64,
}

impl Seeds {
    pub fn derive(seed: u64) -> Self {
        let at = |k: u64| splitmix(seed ^ k.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        Self {
            world: seed,
            classifier: at(1),
            oracle: at(2),
            pretrain: at(3),
            duration: at(4),
            baseline: at(5),
            finetune: at(6),
            ablation: at(7),
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Toy language, impairment and the full generated corpus.
#[derive(Debug, Clone)]
pub struct World {
    pub lang: ToyLanguageSpec,
    pub impairment: ImpairmentSpec,
    pub corpus: Corpus,
    pub target_speaker: SpeakerId,
    pub target_train: usize,
}

impl World {
    pub fn build(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let lang = ToyLanguageSpec::generate(PhonemeInventory::toy_default(), &cfg.toy, seed)?;
        let symbols: Vec<&str> = cfg.impaired_phonemes.iter().map(String::as_str).collect();
        let impairment = ImpairmentSpec::substitution(&lang, cfg.target_speaker, &symbols, cfg.rho)?;
        let clean: Vec<SpeakerId> = (0..cfg.toy.speakers).filter(|&s| s != cfg.target_speaker).collect();
        let mut corpus = generate_corpus(&lang, &clean, cfg.sentences_per_speaker, None, seed)?;
        let target = generate_corpus(
            &lang,
            &[cfg.target_speaker],
            cfg.target_sentences,
            Some(&impairment),
            seed,
        )?;
        corpus.utterances.extend(target.utterances);
        Ok(Self {
            lang,
            impairment,
            corpus,
            target_speaker: cfg.target_speaker,
            target_train: cfg.target_train,
        })
    }

    /// Clean multi-speaker utterances (everything except the target).
    pub fn pretrain_corpus(&self) -> Corpus {
        Corpus {
            utterances: self
                .corpus
                .utterances
                .iter()
                .filter(|u| u.speaker != self.target_speaker)
                .cloned()
                .collect(),
            ..self.corpus.clone()
        }
    }

    fn target(&self) -> Vec<Utterance> {
        self.corpus
            .utterances
            .iter()
            .filter(|u| u.speaker == self.target_speaker)
            .cloned()
            .collect()
    }

    pub fn target_train(&self) -> Vec<Utterance> {
        let mut t = self.target();
        t.truncate(self.target_train);
        t
    }

    pub fn target_heldout(&self) -> Vec<Utterance> {
        self.target().split_off(self.target_train)
    }
}

/// Training-time classifier and evaluation oracle, both frozen.
pub fn train_classifiers(
    cfg: &ExperimentConfig,
    world: &World,
    seeds: &Seeds,
) -> Result<(PhoneClassifier, PhoneClassifier)> {
    let corpus = world.pretrain_corpus();
    let classifier = train_classifier(&corpus, &world.lang.inventory, &cfg.classifier, seeds.classifier)?;
    let oracle = train_classifier(&corpus, &world.lang.inventory, &cfg.classifier, seeds.oracle)?;
    if classifier.id() == oracle.id() {
        return Err(contract!("classifier and oracle seeds collide"));
    }
    Ok((classifier, oracle))
}

/// Synthesis of held-out content for the target speaker, with the
/// reference durations so that frames align with the expanded labels.
pub fn synthesize_heldout(model: &AcousticModel, heldout: &[Utterance], system: &str) -> Result<Vec<Utterance>> {
    heldout
        .iter()
        .map(|u| {
            Ok(Utterance {
                utt_id: alloc::format!("{}_{system}", u.utt_id),
                speaker: u.speaker,
                tokens: u.tokens.clone(),
                durations: u.durations.clone(),
                mel: model.forward(&u.tokens, &u.durations, u.speaker)?,
                impaired_mask: None,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub seeds: Seeds,
    pub world: World,
    pub classifier: PhoneClassifier,
    pub oracle: PhoneClassifier,
    pub pretrained: AcousticModel,
    pub duration: DurationModel,
    pub baseline: AcousticModel,
    pub ablation: AcousticModel,
    pub full: AcousticModel,
    pub report: EvalReport,
    /// Synthesized held-out sets in report row order.
    pub systems: Vec<(String, Vec<Utterance>)>,
    pub warnings: Vec<String>,
}

/// Evaluation rows in their fixed order.
pub fn report_systems(
    world: &World,
    seed: u64,
    source_speaker: SpeakerId,
    baseline: &AcousticModel,
    ablation: &AcousticModel,
    full: &AcousticModel,
) -> Result<Vec<(String, Vec<Utterance>)>> {
    let heldout = world.target_heldout();
    Ok(alloc::vec![
        (ROW_CLEAN_SOURCE.into(), rerender(&world.lang, &heldout, source_speaker, seed)?),
        (ROW_IMPAIRED_TARGET.into(), heldout.clone()),
        (ROW_BASELINE.into(), synthesize_heldout(baseline, &heldout, ROW_BASELINE)?),
        (ROW_ABLATION.into(), synthesize_heldout(ablation, &heldout, ROW_ABLATION)?),
        (ROW_FULL.into(), synthesize_heldout(full, &heldout, ROW_FULL)?),
    ])
}

/// Runs every stage in memory. `on_step` sees each optimizer step.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    seed: u64,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let seeds = Seeds::derive(seed);
    let world = World::build(cfg, seeds.world)?;
    let (classifier, oracle) = train_classifiers(cfg, &world, &seeds)?;
    let pre_corpus = world.pretrain_corpus();
    let trained = pretrain_tts(&pre_corpus, cfg.acoustic, &cfg.pretrain, seeds.pretrain, on_step)?;
    let pretrained = trained.model;
    let duration = train_duration_model(&pretrained, &world.corpus, &cfg.duration, seeds.duration)?;
    let target = world.target_train();
    let inv = &world.lang.inventory;
    let pool = &pre_corpus.utterances;
    let baseline = finetune_tts(&pretrained, &target, pool, &classifier, inv, &cfg.baseline, seeds.baseline, on_step)?;
    let ablation_cfg = cfg.finetune_for(Stage::AblationNoReg);
    let ablation = finetune_tts(&baseline, &target, pool, &classifier, inv, &ablation_cfg, seeds.ablation, on_step)?;
    let full = finetune_tts(&baseline, &target, pool, &classifier, inv, &cfg.finetune, seeds.finetune, on_step)?;
    let systems = report_systems(&world, seeds.world, cfg.source_speaker, &baseline, &ablation, &full)?;
    let ctx = ReportContext {
        oracle: &oracle,
        training_classifier_id: classifier.id(),
        lang: &world.lang,
        target_speaker: world.target_speaker,
        impaired_set: &world.impairment.phonemes,
        seed,
    };
    let report = build_report(&ctx, &systems)?;
    Ok(ExperimentOutcome {
        seeds,
        world,
        classifier,
        oracle,
        pretrained,
        duration,
        baseline,
        ablation,
        full,
        report,
        systems,
        warnings: trained.warnings,
    })
}
