//! Training protocol: multi-speaker pretraining with the plain
//! reconstruction loss, then target-speaker fine-tuning with the augmented
//! loss, a frozen encoder, a frozen classifier and multi-speaker batch
//! mixing.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acoustic::{AcousticArch, AcousticMeta, AcousticModel, BatchItem, DurationModel, ParamGroup};
use crate::classifier::{gather_pullback_logits, PhoneClassifier};
use crate::error::{contract, Error, Result};
use crate::loss;
use crate::nn::{softmax_rows, Adam, ParamRange, SeqBatch};
use crate::types::{Corpus, DurationSequence, HyperParams, LossBreakdown, MelSpectrogram, SpeakerId, TokenSequence, Utterance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Pretrain,
    /// Augmented loss with the configured β and γ.
    Finetune,
    /// Plain reconstruction fine-tuning (β = γ = 0).
    BaselineFinetune,
    /// Consistency term only (β = 0).
    AblationNoReg,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
            Stage::BaselineFinetune => "baseline-finetune",
            Stage::AblationNoReg => "ablation-no-reg",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Stage::Pretrain, Stage::Finetune, Stage::BaselineFinetune, Stage::AblationNoReg]
            .into_iter()
            .find(|st| st.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    /// Passes over the corpus (pretraining).
    pub epochs: usize,
    /// Optimizer steps (fine-tuning).
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hp: HyperParams,
    /// Fraction of every fine-tuning batch drawn from the multi-speaker pool.
    pub mix_ratio: f64,
    /// Number of multi-speaker utterances randomly selected into the pool.
    pub mix_pool_size: usize,
}

impl TrainConfig {
    pub fn pretrain() -> Self {
        Self {
            stage: Stage::Pretrain,
            epochs: 60,
            steps: 0,
            batch_size: 32,
            learning_rate: 1e-3,
            hp: HyperParams::default(),
            mix_ratio: 0.0,
            mix_pool_size: 0,
        }
    }

    pub fn finetune(stage: Stage) -> Self {
        Self {
            stage,
            epochs: 0,
            steps: 750,
            batch_size: 32,
            learning_rate: 1e-4,
            hp: HyperParams::default(),
            mix_ratio: 0.5,
            mix_pool_size: 2000,
        }
    }

    /// Loss weights after applying the stage's overrides.
    pub fn effective_hp(&self) -> HyperParams {
        match self.stage {
            Stage::Pretrain | Stage::BaselineFinetune => HyperParams {
                beta: 0.0,
                gamma: 0.0,
                ..self.hp
            },
            Stage::AblationNoReg => HyperParams { beta: 0.0, ..self.hp },
            Stage::Finetune => self.hp,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        if self.batch_size == 0 {
            return Err(contract!("batch size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(contract!("learning rate must be positive"));
        }
        if !(0.0..=1.0).contains(&self.mix_ratio) {
            return Err(contract!("mix ratio must lie in [0, 1], got {}", self.mix_ratio));
        }
        match self.stage {
            Stage::Pretrain if self.epochs == 0 => Err(contract!("pretraining needs ≥ 1 epoch")),
            Stage::Pretrain => Ok(()),
            _ if self.steps == 0 => Err(contract!("fine-tuning needs ≥ 1 step")),
            _ => Ok(()),
        }
    }
}

/// One logged optimizer step. Loss terms are batch sums; the gradient step
/// divides them by `breakdown.frame_count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub stage: Stage,
    pub breakdown: LossBreakdown,
    /// Items of the batch drawn from the multi-speaker pool.
    pub mixed_items: usize,
    pub batch_items: usize,
}

#[derive(Debug, Clone)]
pub struct Trained<M> {
    pub model: M,
    pub warnings: Vec<String>,
}

fn items_of<'a>(utts: &[&'a Utterance]) -> Vec<BatchItem<'a>> {
    utts.iter()
        .map(|u| BatchItem {
            tokens: &u.tokens,
            durations: &u.durations,
            speaker: u.speaker,
        })
        .collect()
}

fn reference_frames(utts: &[&Utterance]) -> Vec<f64> {
    utts.iter()
        .flat_map(|u| u.mel.values().iter().map(|&v| f64::from(v)))
        .collect()
}

/// Multi-speaker pretraining on the reconstruction loss alone. All
/// parameters are trained.
pub fn pretrain_tts(
    corpus: &Corpus,
    arch: AcousticArch,
    cfg: &TrainConfig,
    seed: u64,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<Trained<AcousticModel>> {
    cfg.validate()?;
    if cfg.stage != Stage::Pretrain {
        return Err(contract!("pretrain_tts called with stage {}", cfg.stage.name()));
    }
    if corpus.utterances.is_empty() {
        return Err(Error::Empty("pretraining corpus".into()));
    }
    corpus.validate()?;
    let mut warnings = Vec::new();
    let mut present: Vec<SpeakerId> = corpus.utterances.iter().map(|u| u.speaker).collect();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        warnings.push(format!(
            "pretraining corpus has {} speaker(s); the speaker table will not learn contrasts",
            present.len()
        ));
    }
    let mut model = AcousticModel::new(AcousticMeta {
        inventory_fingerprint: corpus.inventory.fingerprint(),
        classes: corpus.inventory.len(),
        bins: corpus.bins,
        speakers: corpus.speakers.len(),
        seed,
        arch,
    });
    model.set_output_normalization(corpus);
    let trainable: Vec<ParamRange> = [ParamGroup::Encoder, ParamGroup::SpeakerTable, ParamGroup::Decoder]
        .into_iter()
        .flat_map(|g| model.group_ranges(g))
        .collect();
    let mut opt = Adam::new(model.params().len(), cfg.learning_rate);
    let mut grads = vec![0.0; model.params().len()];
    let mut order: Vec<usize> = (0..corpus.utterances.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let bins = corpus.bins;
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let utts: Vec<&Utterance> = batch.iter().map(|&i| &corpus.utterances[i]).collect();
            let pass = model.forward_batch(&items_of(&utts))?;
            let y_star = reference_frames(&utts);
            let y = &pass.output.data;
            let frames = y.len() / bins;
            let l_rec = loss::reconstruction_loss(&y_star, y, bins)?;
            let mut d = loss::reconstruction_grad(&y_star, y, bins, None)?;
            let norm = 1.0 / frames as f64;
            for v in &mut d {
                *v *= norm;
            }
            grads.fill(0.0);
            model.backward(&pass, &d, &mut grads, true);
            opt.step(model.params_mut(), &grads, &trainable);
            step += 1;
            on_step(&StepRecord {
                step,
                stage: Stage::Pretrain,
                breakdown: LossBreakdown::compose(l_rec, 0.0, 0.0, 0.0, 0.0, frames),
                mixed_items: 0,
                batch_items: utts.len(),
            });
        }
    }
    Ok(Trained { model, warnings })
}

/// Cycles through a seeded permutation, reshuffling at every wrap.
#[derive(Debug, Clone)]
struct Sampler {
    order: Vec<usize>,
    pos: usize,
}

impl Sampler {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self { order, pos: 0 }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Step-wise fine-tuning state. Only the decoder and the speaker table are
/// updated; the classifier is borrowed immutably.
#[derive(Debug)]
pub struct FinetuneSession<'a> {
    model: AcousticModel,
    classifier: &'a PhoneClassifier,
    cfg: TrainConfig,
    hp: HyperParams,
    target: Vec<&'a Utterance>,
    pool: Vec<&'a Utterance>,
    target_p_star: Vec<Vec<f64>>,
    pool_p_star: Vec<Vec<f64>>,
    target_sampler: Sampler,
    pool_sampler: Option<Sampler>,
    rng: ChaCha8Rng,
    opt: Adam,
    trainable: Vec<ParamRange>,
    grads: Vec<f64>,
    step: usize,
    silence: usize,
}

/// Classifier posterior of the reference label on the reference frames.
fn truth_posteriors(classifier: &PhoneClassifier, u: &Utterance) -> Result<Vec<f64>> {
    classifier.posteriors(&u.mel)?.gather_truth(&u.labels())
}

impl<'a> FinetuneSession<'a> {
    pub fn new(
        pretrained: &AcousticModel,
        target: &'a [Utterance],
        pool: &'a [Utterance],
        classifier: &'a PhoneClassifier,
        cfg: &TrainConfig,
        seed: u64,
        inventory: &crate::types::PhonemeInventory,
    ) -> Result<Self> {
        cfg.validate()?;
        if cfg.stage == Stage::Pretrain {
            return Err(contract!("fine-tuning needs a fine-tuning stage"));
        }
        if !classifier.is_frozen() {
            return Err(contract!("classifier must be frozen before fine-tuning"));
        }
        pretrained.check_inventory(inventory)?;
        classifier.check_inventory(inventory)?;
        if classifier.meta().bins != pretrained.meta().bins {
            return Err(Error::Incompatible("classifier and acoustic model disagree on bins".into()));
        }
        if target.is_empty() {
            return Err(Error::Empty("target fine-tuning set".into()));
        }
        for u in target.iter().chain(pool) {
            u.validate()?;
            if u.speaker >= pretrained.meta().speakers {
                return Err(contract!("utterance {} has unknown speaker {}", u.utt_id, u.speaker));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf1_7e7e);
        let mixed = mixed_per_batch(cfg);
        let pool: Vec<&Utterance> = if mixed > 0 {
            if pool.is_empty() {
                return Err(Error::Empty("multi-speaker mixing pool".into()));
            }
            let mut idx: Vec<usize> = (0..pool.len()).collect();
            idx.shuffle(&mut rng);
            idx.truncate(cfg.mix_pool_size.max(1).min(pool.len()));
            idx.sort_unstable();
            idx.into_iter().map(|i| &pool[i]).collect()
        } else {
            Vec::new()
        };
        let target: Vec<&Utterance> = target.iter().collect();
        let target_p_star = target
            .iter()
            .map(|u| truth_posteriors(classifier, u))
            .collect::<Result<_>>()?;
        let pool_p_star = pool.iter().map(|u| truth_posteriors(classifier, u)).collect::<Result<_>>()?;
        let target_sampler = Sampler::new(target.len(), &mut rng);
        let pool_sampler = (!pool.is_empty()).then(|| Sampler::new(pool.len(), &mut rng));
        let model = pretrained.clone();
        let trainable = [ParamGroup::SpeakerTable, ParamGroup::Decoder]
            .into_iter()
            .flat_map(|g| model.group_ranges(g))
            .collect();
        let n = model.params().len();
        Ok(Self {
            model,
            classifier,
            cfg: *cfg,
            hp: cfg.effective_hp(),
            target,
            pool,
            target_p_star,
            pool_p_star,
            target_sampler,
            pool_sampler,
            rng,
            opt: Adam::new(n, cfg.learning_rate),
            trainable,
            grads: vec![0.0; n],
            step: 0,
            silence: inventory.silence(),
        })
    }

    pub fn model(&self) -> &AcousticModel {
        &self.model
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.cfg.steps
    }

    /// One optimizer step on a freshly composed batch.
    pub fn step(&mut self) -> Result<StepRecord> {
        let mixed = mixed_per_batch(&self.cfg);
        let mut utts: Vec<&Utterance> = Vec::with_capacity(self.cfg.batch_size);
        let mut p_star: Vec<f64> = Vec::new();
        for i in 0..self.cfg.batch_size {
            let (u, ps) = if i < mixed {
                let j = self.pool_sampler.as_mut().expect("pool present").next(&mut self.rng);
                (self.pool[j], &self.pool_p_star[j])
            } else {
                let j = self.target_sampler.next(&mut self.rng);
                (self.target[j], &self.target_p_star[j])
            };
            utts.push(u);
            p_star.extend_from_slice(ps);
        }
        let bins = self.model.meta().bins;
        let pass = self.model.forward_batch(&items_of(&utts))?;
        let y_star = reference_frames(&utts);
        let y = &pass.output.data;
        let labels: Vec<usize> = utts.iter().flat_map(|u| u.labels().ids().to_vec()).collect();
        let mask: Option<Vec<bool>> = self
            .hp
            .exclude_silence
            .then(|| labels.iter().map(|&l| l != self.silence).collect());
        let mask = mask.as_deref();

        // consistency: posteriors of the reference labels on generated frames
        let classes = self.classifier.meta().classes;
        let gen = SeqBatch::new(y.clone(), bins, pass.output.lens().to_vec());
        let cpass = self.classifier.forward(&gen);
        let probs = softmax_rows(&cpass.logits.data, classes);
        let p_gen: Vec<f64> = labels.iter().enumerate().map(|(t, &l)| probs[t * classes + l]).collect();

        let breakdown = loss::total_loss_masked(&y_star, y, bins, &p_star, &p_gen, &self.hp, mask)?;
        let mut d = loss::reconstruction_grad(&y_star, y, bins, mask)?;
        if self.hp.beta != 0.0 {
            let w = loss::severity_weights(&p_star, self.hp.lambda_)?;
            let g = loss::regularization_grad(&y_star, y, bins, &w, self.hp.eps_floor, mask)?;
            for (a, b) in d.iter_mut().zip(&g) {
                *a += self.hp.beta * b;
            }
        }
        if self.hp.gamma != 0.0 {
            let dp = loss::consistency_grad_wrt_posteriors(&p_gen, self.hp.eps_floor, mask)?;
            let dlogits = gather_pullback_logits(&probs, classes, &labels, &dp);
            let g = self.classifier.backward(&cpass, &dlogits, None, true).expect("input grad");
            for (a, b) in d.iter_mut().zip(&g) {
                *a += self.hp.gamma * b;
            }
        }
        let norm = 1.0 / breakdown.frame_count.max(1) as f64;
        for v in &mut d {
            *v *= norm;
        }
        self.grads.fill(0.0);
        self.model.backward(&pass, &d, &mut self.grads, false);
        let params = self.model.params_mut();
        self.opt.step(params, &self.grads, &self.trainable);
        self.step += 1;
        Ok(StepRecord {
            step: self.step,
            stage: self.cfg.stage,
            breakdown,
            mixed_items: mixed,
            batch_items: utts.len(),
        })
    }

    /// Gradient buffer of the most recent step.
    pub fn last_gradients(&self) -> &[f64] {
        &self.grads
    }

    pub fn finish(self) -> AcousticModel {
        self.model
    }
}

fn mixed_per_batch(cfg: &TrainConfig) -> usize {
    libm::round(cfg.mix_ratio * cfg.batch_size as f64) as usize
}

/// Runs all configured fine-tuning steps.
#[allow(clippy::too_many_arguments)]
pub fn finetune_tts(
    pretrained: &AcousticModel,
    target: &[Utterance],
    pool: &[Utterance],
    classifier: &PhoneClassifier,
    inventory: &crate::types::PhonemeInventory,
    cfg: &TrainConfig,
    seed: u64,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<AcousticModel> {
    let mut session = FinetuneSession::new(pretrained, target, pool, classifier, cfg, seed, inventory)?;
    while !session.is_done() {
        let rec = session.step()?;
        on_step(&rec);
    }
    Ok(session.finish())
}

/// Inference path: predicted durations drive the length regulator.
pub fn synthesize(
    model: &AcousticModel,
    durations: &DurationModel,
    tokens: &TokenSequence,
    speaker: SpeakerId,
) -> Result<(MelSpectrogram, DurationSequence)> {
    if durations.meta().encoder_hidden != model.meta().arch.hidden {
        return Err(Error::Incompatible("duration model was fit to a different encoder width".into()));
    }
    if speaker >= model.meta().speakers || speaker >= durations.meta().speakers {
        return Err(contract!("unknown speaker {speaker}"));
    }
    let h = model.encode(tokens)?;
    let d = durations.predict_durations(&h, speaker)?;
    let mel = model.forward(tokens, &d, speaker)?;
    Ok((mel, d))
}
