use augrec_core::acoustic::length_regulate;
use augrec_core::classifier::{ClassifierArch, ClassifierMeta, PhoneClassifier};
use augrec_core::loss::{
    consistency_loss, reconstruction_loss, regularization_loss, severity_weights, total_loss,
};
use augrec_core::toy::sample_impaired_frame;
use augrec_core::{
    expand_labels, DurationSequence, FramePosteriors, HyperParams, LossBreakdown, MelSpectrogram, PhonemeInventory,
    TokenSequence,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tokens_and_durations() -> impl Strategy<Value = (Vec<usize>, Vec<u32>)> {
    prop::collection::vec((0usize..13, 1u32..12), 1..40).prop_map(|v| v.into_iter().unzip())
}

proptest! {
    #[test]
    fn expanded_labels_are_contiguous_runs((ids, durs) in tokens_and_durations()) {
        let tokens = TokenSequence::new(ids.clone(), 13).unwrap();
        let durations = DurationSequence::new(durs.clone()).unwrap();
        let labels = expand_labels(&tokens, &durations).unwrap();
        prop_assert_eq!(labels.len(), durs.iter().map(|&d| d as usize).sum::<usize>());
        let mut at = 0;
        for (id, d) in ids.iter().zip(&durs) {
            prop_assert!(labels.ids()[at..at + *d as usize].iter().all(|l| l == id));
            at += *d as usize;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn length_regulation_replicates_blocks(
        durs in prop::collection::vec(1u32..9, 1..20),
        dim in 1usize..6,
        seed in any::<u64>(),
    ) {
        let n = durs.len();
        let h: Vec<f64> = (0..n * dim).map(|i| (seed.wrapping_add(i as u64) % 1000) as f64 + i as f64 * 1e-3).collect();
        let d = DurationSequence::new(durs.clone()).unwrap();
        let out = length_regulate(&h, dim, &d).unwrap();
        let total: usize = durs.iter().map(|&x| x as usize).sum();
        prop_assert_eq!(out.len(), total * dim);
        let mut row = 0;
        for (i, &k) in durs.iter().enumerate() {
            for _ in 0..k {
                prop_assert_eq!(&out[row * dim..(row + 1) * dim], &h[i * dim..(i + 1) * dim]);
                row += 1;
            }
        }
    }
}

fn frames_strategy() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..6, 1usize..10).prop_flat_map(|(bins, frames)| {
        (
            Just(bins),
            prop::collection::vec(-3.0f64..3.0, bins * frames),
            prop::collection::vec(-3.0f64..3.0, bins * frames),
            prop::collection::vec(0.0f64..=1.0, frames),
            prop::collection::vec(0.0f64..=1.0, frames),
        )
    })
}

fn permute_rows(v: &[f64], width: usize, perm: &[usize]) -> Vec<f64> {
    perm.iter().flat_map(|&t| v[t * width..(t + 1) * width].iter().copied()).collect()
}

proptest! {
    #[test]
    fn losses_invariant_to_joint_frame_permutation(
        (bins, y_star, y, p_star, p_gen) in frames_strategy(),
        shuffle_seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let frames = p_star.len();
        let mut perm: Vec<usize> = (0..frames).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        let hp = HyperParams::default();
        let a = total_loss(&y_star, &y, bins, &p_star, &p_gen, &hp).unwrap();
        let b = total_loss(
            &permute_rows(&y_star, bins, &perm),
            &permute_rows(&y, bins, &perm),
            bins,
            &permute_rows(&p_star, 1, &perm),
            &permute_rows(&p_gen, 1, &perm),
            &hp,
        ).unwrap();
        for (x, z) in [(a.l_rec, b.l_rec), (a.l_reg, b.l_reg), (a.l_consis, b.l_consis), (a.l_total, b.l_total)] {
            prop_assert!((x - z).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }

    #[test]
    fn breakdown_recomposes(
        (bins, y_star, y, p_star, p_gen) in frames_strategy(),
        beta in 0.0f64..2.0,
        gamma in 0.0f64..2.0,
    ) {
        let hp = HyperParams { beta, gamma, ..HyperParams::default() };
        let b = total_loss(&y_star, &y, bins, &p_star, &p_gen, &hp).unwrap();
        prop_assert!((b.recomposed_total() - b.l_total).abs() <= 1e-9);
        prop_assert!(b.is_consistent());
        let w = severity_weights(&p_star, hp.lambda_).unwrap();
        let by_hand = reconstruction_loss(&y_star, &y, bins).unwrap()
            + beta * regularization_loss(&y_star, &y, bins, &w, hp.eps_floor).unwrap()
            + gamma * consistency_loss(&p_gen, hp.eps_floor).unwrap();
        prop_assert!((by_hand - b.l_total).abs() <= 1e-9 * by_hand.abs().max(1.0));
    }

    #[test]
    fn severity_is_antitone_in_unit_interval(a in 0.0f64..=1.0, b in 0.0f64..=1.0, lambda in 0.1f64..50.0) {
        let w = severity_weights(&[a, b], lambda).unwrap();
        let w = w.as_slice();
        prop_assert!(w.iter().all(|&x| x > 0.0 && x <= 1.0));
        if a < b {
            prop_assert!(w[0] > w[1]);
        }
    }

    #[test]
    fn consistency_is_cross_entropy(p in prop::collection::vec(1e-6f64..=1.0, 1..30)) {
        let l = consistency_loss(&p, 1e-8).unwrap();
        prop_assert!(l >= 0.0);
        let ce: f64 = p.iter().map(|v| -v.ln()).sum();
        prop_assert!((l - ce).abs() <= 1e-12 * ce.max(1.0));
        let ones = vec![1.0; p.len()];
        prop_assert_eq!(consistency_loss(&ones, 1e-8).unwrap(), 0.0);
    }
}

fn random_classifier(seed: u64) -> PhoneClassifier {
    let inv = PhonemeInventory::toy_default();
    PhoneClassifier::new(ClassifierMeta {
        inventory_fingerprint: inv.fingerprint(),
        bins: 20,
        classes: inv.len(),
        seed,
        arch: ClassifierArch::default(),
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn posteriors_keep_length_and_are_row_stochastic(
        frames in 1usize..=512,
        scale in prop::sample::select(vec![1e-3f32, 1.0, 50.0, 1e4]),
        seed in any::<u64>(),
    ) {
        let model = random_classifier(seed % 4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f32> = (0..frames * 20).map(|_| scale * rand::Rng::random_range(&mut rng, -1.0f32..1.0)).collect();
        let mel = MelSpectrogram::new(frames, 20, values).unwrap();
        let post = model.posteriors(&mel).unwrap();
        prop_assert_eq!(post.frames(), frames);
        for t in 0..frames {
            let s: f64 = post.row(t).iter().sum();
            prop_assert!((s - 1.0).abs() <= FramePosteriors::ROW_TOLERANCE);
        }
    }
}

#[test]
fn stronger_severity_moves_samples_further() {
    let clean = vec![0.0; 20];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mean_r = |alpha: f64, rng: &mut ChaCha8Rng| {
        (0..20_000)
            .map(|_| {
                let f = sample_impaired_frame(&clean, alpha, 1.0, rng).unwrap();
                f.iter().map(|v| v * v).sum::<f64>().sqrt()
            })
            .sum::<f64>()
            / 20_000.0
    };
    let r0 = mean_r(0.0, &mut rng);
    let r100 = mean_r(100.0, &mut rng);
    assert!(r100 > r0, "{r100} vs {r0}");
}

#[test]
fn tiny_weights_reduce_to_reconstruction() {
    let y_star = [0.3, -1.0, 2.0, 0.5];
    let y = [0.1, -0.2, 1.0, 0.4];
    let hp = HyperParams {
        beta: 1e-12,
        gamma: 1e-12,
        ..HyperParams::default()
    };
    let b = total_loss(&y_star, &y, 2, &[0.4, 0.9], &[0.5, 0.2], &hp).unwrap();
    assert!((b.l_total - b.l_rec).abs() < 1e-9);
    let zero = LossBreakdown::compose(1.0, -1.0, 2.0, 0.05, 0.3, 1);
    assert!((zero.l_total - 1.55).abs() < 1e-12);
}
