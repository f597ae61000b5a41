use augrec_core::classifier::{frame_accuracy, ClassifierArch, ClassifierMeta, PhoneClassifier};
use augrec_core::eval::{
    build_report, coloration_similarity, estimate_coloration, evaluate_fer, evaluate_speaker_similarity,
    similarity_by_speaker, ReportContext,
};
use augrec_core::toy::{generate_corpus, rerender, ImpairmentSpec, ToyLanguageConfig, ToyLanguageSpec};
use augrec_core::{Error, MelSpectrogram, PhonemeInventory, Utterance};

fn lang(seed: u64) -> ToyLanguageSpec {
    ToyLanguageSpec::generate(PhonemeInventory::toy_default(), &ToyLanguageConfig::default(), seed).unwrap()
}

fn classifier(seed: u64, lang: &ToyLanguageSpec) -> PhoneClassifier {
    PhoneClassifier::new(ClassifierMeta {
        inventory_fingerprint: lang.inventory.fingerprint(),
        bins: lang.bins,
        classes: lang.inventory.len(),
        seed,
        arch: ClassifierArch {
            blocks: 1,
            kernel: 3,
            hidden: 8,
        },
    })
}

fn frame(u: &Utterance, t: usize) -> Vec<f64> {
    u.mel.frame(t).iter().map(|&v| f64::from(v)).collect()
}

#[test]
fn clean_frames_sit_near_their_own_template() {
    for seed in [1, 2, 3] {
        let lang = lang(seed);
        lang.validate().unwrap();
        let corpus = generate_corpus(&lang, &(0..9).collect::<Vec<_>>(), 10, None, seed).unwrap();
        let (mut hits, mut total) = (0, 0);
        for u in &corpus.utterances {
            for (t, &label) in u.labels().ids().iter().enumerate() {
                hits += usize::from(lang.nearest_template(u.speaker, &frame(u, t)) == label);
                total += 1;
            }
        }
        assert!(hits as f64 / total as f64 >= 0.99, "seed {seed}: {hits}/{total}");
    }
}

#[test]
fn corruption_touches_only_impaired_frames_of_the_target() {
    let lang = lang(4);
    let speakers: Vec<usize> = (0..9).collect();
    let imp = ImpairmentSpec::substitution(&lang, 8, &["k", "t", "y"], 0.85).unwrap();
    let clean = generate_corpus(&lang, &speakers, 8, None, 4).unwrap();
    let dirty = generate_corpus(&lang, &speakers, 8, Some(&imp), 4).unwrap();
    let mut impaired_frames = 0;
    let mut moved_to_confusable = 0;
    for (c, d) in clean.utterances.iter().zip(&dirty.utterances) {
        assert_eq!((&c.tokens, &c.durations), (&d.tokens, &d.durations));
        let mask = d.impaired_mask.as_ref().unwrap();
        let labels = d.labels();
        for t in 0..d.mel.frames() {
            let label = labels.ids()[t];
            let expect_impaired = d.speaker == 8 && imp.phonemes.contains(&label);
            assert_eq!(mask[t], expect_impaired);
            if expect_impaired {
                impaired_frames += 1;
                moved_to_confusable +=
                    usize::from(lang.nearest_template(8, &frame(d, t)) == lang.nearest_other(label));
            } else {
                assert_eq!(c.mel.frame(t), d.mel.frame(t), "{} frame {t}", d.utt_id);
            }
        }
    }
    assert!(impaired_frames > 0);
    assert!(moved_to_confusable as f64 / impaired_frames as f64 >= 0.9);
}

#[test]
fn zero_rho_reproduces_clean_frames() {
    let lang = lang(5);
    let imp = ImpairmentSpec::substitution(&lang, 8, &["k", "t", "y"], 0.0).unwrap();
    let clean = generate_corpus(&lang, &[8], 10, None, 5).unwrap();
    let dirty = generate_corpus(&lang, &[8], 10, Some(&imp), 5).unwrap();
    for (c, d) in clean.utterances.iter().zip(&dirty.utterances) {
        assert_eq!(c.mel, d.mel);
    }
    assert!(ImpairmentSpec::substitution(&lang, 8, &["sil"], 0.5).is_err());
    assert!(ImpairmentSpec::substitution(&lang, 8, &["k"], 1.5).is_err());
    assert!(ImpairmentSpec::substitution(&lang, 30, &["k"], 0.5).is_err());
}

#[test]
fn similarity_identifies_the_speaker() {
    for seed in [6, 7] {
        let lang = lang(seed);
        let speakers: Vec<usize> = (0..9).collect();
        let corpus = generate_corpus(&lang, &speakers, 30, None, seed).unwrap();
        for s in speakers {
            let utts: Vec<Utterance> = corpus.utterances.iter().filter(|u| u.speaker == s).cloned().collect();
            let sims = similarity_by_speaker(&utts, &lang).unwrap();
            let own = sims[s];
            assert!(own >= 0.98, "seed {seed} speaker {s}: {own}");
            let best_other = sims.iter().enumerate().filter(|&(o, _)| o != s).map(|(_, v)| *v).fold(0.0, f64::max);
            assert!(best_other <= own - 0.1, "seed {seed} speaker {s}: {sims:?}");
            assert_eq!(evaluate_speaker_similarity(&utts, &lang, s).unwrap(), own);
        }
    }
}

#[test]
fn similarity_of_rerendered_content_follows_the_renderer() {
    let lang = lang(8);
    let source = generate_corpus(&lang, &[0], 30, None, 8).unwrap().utterances;
    let as_target = rerender(&lang, &source, 8, 1).unwrap();
    let sims = similarity_by_speaker(&as_target, &lang).unwrap();
    let best = sims.iter().copied().enumerate().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
    assert_eq!(best, 8);
    assert!(rerender(&lang, &source, 99, 1).is_err());
}

#[test]
fn degenerate_similarity_inputs_are_errors() {
    let lang = lang(9);
    let mut utts = generate_corpus(&lang, &[1], 3, None, 9).unwrap().utterances;
    for u in &mut utts {
        let (t, m) = (u.mel.frames(), u.mel.bins());
        u.mel = MelSpectrogram::new(t, m, vec![0.0; t * m]).unwrap();
    }
    let err = similarity_by_speaker(&utts, &lang).unwrap_err();
    assert!(matches!(err, Error::InsufficientData(_)), "{err}");
    // silence alone never qualifies
    let mut sil_only = utts[0].clone();
    let sil = lang.inventory.silence();
    sil_only.tokens = augrec_core::TokenSequence::new(vec![sil; sil_only.tokens.len()], lang.inventory.len()).unwrap();
    assert!(matches!(estimate_coloration(&[sil_only], &lang), Err(Error::InsufficientData(_))));
    assert!(coloration_similarity(&[1.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
    assert!(evaluate_speaker_similarity(&utts, &lang, 99).is_err());
}

#[test]
fn fer_is_deterministic_order_free_and_complements_accuracy() {
    let lang = lang(10);
    let corpus = generate_corpus(&lang, &[2, 8], 6, None, 10).unwrap();
    let oracle = classifier(1, &lang);
    let training = classifier(2, &lang);
    let imp = [lang.inventory.index_of("k").unwrap()];
    let a = evaluate_fer(&oracle, training.id(), &corpus.utterances, &imp).unwrap();
    let b = evaluate_fer(&oracle, training.id(), &corpus.utterances, &imp).unwrap();
    assert_eq!(a, b);
    let mut reversed = corpus.utterances.clone();
    reversed.reverse();
    assert_eq!(evaluate_fer(&oracle, training.id(), &reversed, &imp).unwrap(), a);
    let acc = frame_accuracy(&oracle, &corpus.utterances).unwrap();
    assert!((a.overall() - (1.0 - acc)).abs() < 1e-12);
    assert_eq!(a.impaired_frames + a.clean_frames, a.frames);
    let err = evaluate_fer(&oracle, oracle.id(), &corpus.utterances, &imp).unwrap_err();
    assert!(matches!(err, Error::Contract(_)), "{err}");
}

#[test]
fn report_keeps_system_order_and_rejects_mismatched_sets() {
    let lang = lang(11);
    let corpus = generate_corpus(&lang, &[0, 8], 12, None, 11).unwrap();
    let target: Vec<Utterance> = corpus.utterances.iter().filter(|u| u.speaker == 8).cloned().collect();
    let source = rerender(&lang, &target, 0, 3).unwrap();
    let oracle = classifier(1, &lang);
    let imp = [lang.inventory.index_of("t").unwrap()];
    let ctx = ReportContext {
        oracle: &oracle,
        training_classifier_id: 77,
        lang: &lang,
        target_speaker: 8,
        impaired_set: &imp,
        seed: 11,
    };
    let systems = vec![("z-first".to_string(), source.clone()), ("a-second".to_string(), target.clone())];
    let report = build_report(&ctx, &systems).unwrap();
    let names: Vec<&str> = report.rows.iter().map(|r| r.system.as_str()).collect();
    assert_eq!(names, ["z-first", "a-second"]);
    report.validate().unwrap();
    assert!(report.row("a-second").unwrap().similarity > report.row("z-first").unwrap().similarity);
    assert_eq!(report.impaired_phonemes, ["t"]);

    let mut shorter = target.clone();
    shorter.pop();
    let bad = vec![("x".to_string(), target.clone()), ("y".to_string(), shorter)];
    assert!(matches!(build_report(&ctx, &bad), Err(Error::Incompatible(_))));
    assert!(build_report(&ctx, &[]).is_err());
}
