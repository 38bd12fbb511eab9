//! Descriptor model against full-joint enumeration, plus property tests.

mod support;

use std::collections::BTreeSet;

use emofuse::bayes::{
    build_vocabulary, classify, fit_mle, posterior, posterior_direct, BayesModel, BernoulliCpt, ClassPrior,
    CnnEvidenceCpt, DescriptorCounts, EvidenceMode,
};
use emofuse::data_io::DatasetManifest;
use emofuse::eval::descriptor_histogram;
use emofuse::{Emotion, EmotionDistribution};
use proptest::prelude::*;
use support::*;

fn assert_close(a: &[f64; 3], b: &[f64; 3], tol: f64) {
    for i in 0..3 {
        assert!((a[i] - b[i]).abs() <= tol, "{a:?} vs {b:?}");
    }
}

#[test]
fn matches_enumeration_with_and_without_cnn() {
    let mut g = rng(7);
    for case in 0..400 {
        let d = case % 6;
        let mode = if case % 2 == 0 { EvidenceMode::Full } else { EvidenceMode::PresenceOnly };
        let model = random_bayes(d, mode, &mut g);
        let cpt = random_cnn_cpt(&mut g);
        let ev = random_evidence(&model, &mut g);
        let seen = Emotion::ALL[case % 3];
        for cnn in [None, Some((seen, &cpt))] {
            let want = brute_force_posterior(&ev, &model, cnn);
            let got = posterior(&ev, &model, cnn).unwrap();
            assert_close(got.distribution.probs(), &want, 1e-12);
            assert_eq!(classify(&ev, &model, cnn).unwrap(), argmax(&want));
        }
    }
}

#[test]
fn unknown_descriptors_are_counted_and_ignored() {
    let model = random_bayes(3, EvidenceMode::Full, &mut rng(1));
    let plain: BTreeSet<String> = ["d0".to_string()].into();
    let mut noisy = plain.clone();
    noisy.insert("zebra".into());
    noisy.insert("unicorn".into());
    let a = posterior(&plain, &model, None).unwrap();
    let b = posterior(&noisy, &model, None).unwrap();
    assert_eq!(a.distribution, b.distribution);
    assert_eq!((a.unknown_descriptors, b.unknown_descriptors), (0, 2));
}

#[test]
fn empty_vocabulary_returns_the_prior() {
    let prior = EmotionDistribution::new([0.5, 0.3, 0.2]).unwrap();
    let model = BayesModel::new(
        emofuse::bayes::DescriptorVocabulary::from_descriptors(Vec::<String>::new()),
        BernoulliCpt::new(Vec::new(), 1.0).unwrap(),
        ClassPrior(prior),
        EvidenceMode::Full,
    )
    .unwrap();
    let ev: BTreeSet<String> = ["anything".to_string()].into();
    assert_close(posterior(&ev, &model, None).unwrap().distribution.probs(), prior.probs(), 1e-15);
}

#[test]
fn unsmoothed_fit_equals_hand_counts() {
    let records = fixture();
    let vocab = build_vocabulary(&records, 1).unwrap();
    let fit = fit_mle(&records, &vocab, 0.0).unwrap();
    assert_eq!(fit.prior.0.probs(), &[8.0 / 20.0, 7.0 / 20.0, 5.0 / 20.0]);
    // Counted by hand from the fixture table: (positive, neutral, negative) presences.
    let expected: [(&str, [u32; 3]); 6] = [
        ("beach", [3, 0, 0]),
        ("crowd", [4, 3, 3]),
        ("meeting", [0, 3, 1]),
        ("office", [0, 4, 0]),
        ("party", [5, 1, 0]),
        ("protest", [0, 0, 4]),
    ];
    assert_eq!(vocab.len(), expected.len());
    let totals = [8.0, 7.0, 5.0];
    for (name, counts) in expected {
        let i = vocab.index_of(name).unwrap();
        for y in Emotion::ALL {
            assert_eq!(fit.cpt.p_true(i, y), counts[y.index()] as f64 / totals[y.index()], "{name} {y}");
        }
    }
}

#[test]
fn histogram_totals_match_counts() {
    let records = fixture();
    let vocab = build_vocabulary(&records, 1).unwrap();
    let counts = DescriptorCounts::count(&records, &vocab).unwrap();
    let manifest = DatasetManifest::new("train", records).unwrap();
    let rows = descriptor_histogram(&manifest, &vocab);
    assert_eq!(rows.len(), vocab.len());
    for row in &rows {
        let i = vocab.index_of(&row.descriptor).unwrap();
        for y in Emotion::ALL {
            assert_eq!(row.counts[y.index()], counts.present(i, y));
            assert_eq!(counts.present(i, y) + counts.absent(i, y), counts.class_total(y));
        }
    }
    let totals: Vec<u64> = rows.iter().map(|r| r.total()).collect();
    assert!(totals.windows(2).all(|w| w[0] >= w[1]));
}

fn model_strategy() -> impl Strategy<Value = (u64, usize, bool)> {
    (any::<u64>(), 0usize..8, any::<bool>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn posterior_is_a_distribution((seed, d, full) in model_strategy(), cnn_class in 0usize..3, use_cnn: bool) {
        let mut g = rng(seed);
        let mode = if full { EvidenceMode::Full } else { EvidenceMode::PresenceOnly };
        let model = random_bayes(d, mode, &mut g);
        let cpt = random_cnn_cpt(&mut g);
        let ev = random_evidence(&model, &mut g);
        let cnn = use_cnn.then_some((Emotion::ALL[cnn_class], &cpt));
        let p = posterior(&ev, &model, cnn).unwrap().distribution;
        prop_assert!(p.probs().iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_and_direct_agree((seed, d, full) in model_strategy()) {
        let mut g = rng(seed);
        let mode = if full { EvidenceMode::Full } else { EvidenceMode::PresenceOnly };
        let model = random_bayes(d, mode, &mut g);
        let cpt = random_cnn_cpt(&mut g);
        let ev = random_evidence(&model, &mut g);
        for cnn in [None, Some((Emotion::Neutral, &cpt))] {
            let a = posterior(&ev, &model, cnn).unwrap().distribution;
            let b = posterior_direct(&ev, &model, cnn).unwrap().distribution;
            for (x, y) in a.probs().iter().zip(b.probs()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    /// Making a present descriptor more likely under class `y` cannot lower `P(y | evidence)`.
    #[test]
    fn raising_a_present_likelihood_is_monotone(seed: u64, d in 1usize..6, class in 0usize..3, bump in 0.0f64..0.5) {
        let mut g = rng(seed);
        let model = random_bayes(d, EvidenceMode::Full, &mut g);
        let mut ev = random_evidence(&model, &mut g);
        ev.insert("d0".into());
        let y = Emotion::ALL[class];
        let mut rows = model.cpt().rows().to_vec();
        rows[0][class] = (rows[0][class] + bump).min(0.99);
        let raised = BayesModel::new(
            model.vocabulary().clone(),
            BernoulliCpt::new(rows, 1.0).unwrap(),
            *model.prior(),
            EvidenceMode::Full,
        )
        .unwrap();
        let before = posterior(&ev, &model, None).unwrap().distribution.get(y);
        let after = posterior(&ev, &raised, None).unwrap().distribution.get(y);
        prop_assert!(after >= before - 1e-12, "{before} -> {after}");
    }

    /// A CNN node whose table ignores the true class carries no information.
    #[test]
    fn uniform_cnn_column_leaves_the_posterior_unchanged((seed, d, full) in model_strategy(), cnn_class in 0usize..3) {
        let mut g = rng(seed);
        let mode = if full { EvidenceMode::Full } else { EvidenceMode::PresenceOnly };
        let model = random_bayes(d, mode, &mut g);
        let ev = random_evidence(&model, &mut g);
        let row = *random_distribution(&mut g).probs();
        let flat = CnnEvidenceCpt::new([row, row, row]).unwrap();
        let without = posterior(&ev, &model, None).unwrap().distribution;
        let with = posterior(&ev, &model, Some((Emotion::ALL[cnn_class], &flat))).unwrap().distribution;
        prop_assert_eq!(without, with);
    }

    #[test]
    fn identity_cnn_table_forces_the_cnn_class((seed, d, full) in model_strategy(), cnn_class in 0usize..3) {
        let mut g = rng(seed);
        let mode = if full { EvidenceMode::Full } else { EvidenceMode::PresenceOnly };
        let model = random_bayes(d, mode, &mut g);
        let ev = random_evidence(&model, &mut g);
        let seen = Emotion::ALL[cnn_class];
        let p = posterior(&ev, &model, Some((seen, &CnnEvidenceCpt::identity()))).unwrap().distribution;
        prop_assert_eq!(p.argmax(), seen);
        prop_assert!((p.get(seen) - 1.0).abs() < 1e-12);
    }
}
