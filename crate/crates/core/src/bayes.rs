//! Top-down scene model and fusion node.
//!
//! The class node `y` has one Bernoulli child per scene descriptor, fitted by
//! (optionally smoothed) maximum likelihood from presence counts. The CNN's
//! aggregated prediction can be attached as one more categorical child whose
//! table is the CNN's row-normalized confusion matrix. Because the network is a
//! tree rooted at `y` with every child observed or marginalized out, exact
//! inference is the prior times the product of the child likelihoods.

use std::collections::{BTreeMap, BTreeSet};

use crate::data_io::SampleRecord;
use crate::emotion::{Emotion, EmotionDistribution, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::eval::ConfusionMatrix;

/// Canonical descriptor form: trimmed and lowercased.
pub fn normalize_descriptor(raw: &str) -> String {
    raw.trim().to_lowercase()
}

/// Lexicographically ordered descriptor → index map.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DescriptorVocabulary {
    index: BTreeMap<String, usize>,
    names: Vec<String>,
}

impl DescriptorVocabulary {
    /// Normalizes, deduplicates and sorts the given descriptors. Empty strings are dropped.
    pub fn from_descriptors<I, S>(descriptors: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> = descriptors
            .into_iter()
            .map(|d| normalize_descriptor(d.as_ref()))
            .filter(|d| !d.is_empty())
            .collect();
        let names: Vec<String> = set.into_iter().collect();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        DescriptorVocabulary { index, names }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, descriptor: &str) -> Option<usize> {
        self.index
            .get(descriptor)
            .or_else(|| self.index.get(&normalize_descriptor(descriptor)))
            .copied()
    }

    /// Descriptors in index order.
    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Vocabulary of every descriptor present in at least `min_count` records.
pub fn build_vocabulary(records: &[SampleRecord], min_count: usize) -> Result<DescriptorVocabulary> {
    if records.is_empty() {
        return Err(Error::Data("cannot build a vocabulary from an empty training set".into()));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in records {
        let per_record: BTreeSet<String> = r.descriptors.iter().map(|d| normalize_descriptor(d)).collect();
        for d in per_record {
            *counts.entry(d).or_default() += 1;
        }
    }
    Ok(DescriptorVocabulary::from_descriptors(
        counts.into_iter().filter(|(_, c)| *c >= min_count.max(1)).map(|(d, _)| d),
    ))
}

/// Per-descriptor, per-class presence counts over a labeled training set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DescriptorCounts {
    present: Vec<[u64; NUM_CLASSES]>,
    class_totals: [u64; NUM_CLASSES],
}

impl DescriptorCounts {
    pub fn count(records: &[SampleRecord], vocab: &DescriptorVocabulary) -> Result<Self> {
        let mut present = vec![[0u64; NUM_CLASSES]; vocab.len()];
        let mut class_totals = [0u64; NUM_CLASSES];
        for r in records {
            let label = r
                .label
                .ok_or_else(|| Error::Data(format!("record '{}' has no label", r.image_id)))?;
            class_totals[label.index()] += 1;
            let seen: BTreeSet<usize> = r.descriptors.iter().filter_map(|d| vocab.index_of(d)).collect();
            for i in seen {
                present[i][label.index()] += 1;
            }
        }
        Ok(DescriptorCounts { present, class_totals })
    }

    /// Images of class `y` showing descriptor `i`.
    pub fn present(&self, i: usize, y: Emotion) -> u64 {
        self.present[i][y.index()]
    }

    /// Images of class `y` not showing descriptor `i`.
    pub fn absent(&self, i: usize, y: Emotion) -> u64 {
        self.class_totals[y.index()] - self.present[i][y.index()]
    }

    pub fn class_total(&self, y: Emotion) -> u64 {
        self.class_totals[y.index()]
    }

    pub fn len(&self) -> usize {
        self.present.len()
    }

    pub fn is_empty(&self) -> bool {
        self.present.is_empty()
    }
}

/// `P(descriptor present | y)` for every descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliCpt {
    table: Vec<[f64; NUM_CLASSES]>,
    smoothing: f64,
}

impl BernoulliCpt {
    pub fn new(table: Vec<[f64; NUM_CLASSES]>, smoothing: f64) -> Result<Self> {
        if let Some(row) = table.iter().find(|r| r.iter().any(|p| !(0.0..=1.0).contains(p))) {
            return Err(Error::Data(format!("Bernoulli probabilities {row:?} outside [0, 1]")));
        }
        if smoothing.is_nan() || smoothing < 0.0 {
            return Err(Error::Config(format!("smoothing {smoothing} must be non-negative")));
        }
        Ok(BernoulliCpt { table, smoothing })
    }

    pub fn p_true(&self, i: usize, y: Emotion) -> f64 {
        self.table[i][y.index()]
    }

    pub fn rows(&self) -> &[[f64; NUM_CLASSES]] {
        &self.table
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

/// Class prior `P(y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassPrior(pub EmotionDistribution);

/// Output of [`fit_mle`].
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveBayesFit {
    pub cpt: BernoulliCpt,
    pub prior: ClassPrior,
    pub counts: DescriptorCounts,
}

fn smoothed(hits: u64, total: u64, smoothing: f64, outcomes: f64) -> Option<f64> {
    let denom = total as f64 + outcomes * smoothing;
    (denom > 0.0).then(|| (hits as f64 + smoothing) / denom)
}

/// Estimates `P(x_i = true | y) = (N_t + a) / (N_t + N_f + 2a)` and the class
/// prior `(N_y + a) / (N + 3a)`; `a = 0` is plain maximum likelihood.
pub fn fit_mle(records: &[SampleRecord], vocab: &DescriptorVocabulary, smoothing: f64) -> Result<NaiveBayesFit> {
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(Error::Config(format!("smoothing {smoothing} must be a non-negative number")));
    }
    let counts = DescriptorCounts::count(records, vocab)?;
    if let Some(missing) = Emotion::ALL.iter().find(|&&y| counts.class_total(y) == 0) {
        if smoothing == 0.0 {
            return Err(Error::Fit(format!(
                "class '{missing}' has no training images; use a positive smoothing"
            )));
        }
    }
    let table = (0..vocab.len())
        .map(|i| {
            Emotion::ALL.map(|y| {
                smoothed(counts.present(i, y), counts.class_total(y), smoothing, 2.0)
                    .expect("positive class totals or smoothing checked above")
            })
        })
        .collect();
    let n: u64 = counts.class_totals.iter().sum();
    let prior = Emotion::ALL.map(|y| smoothed(counts.class_total(y), n, smoothing, NUM_CLASSES as f64).unwrap_or(0.0));
    Ok(NaiveBayesFit {
        cpt: BernoulliCpt::new(table, smoothing)?,
        prior: ClassPrior(EmotionDistribution::new(prior)?),
        counts,
    })
}

/// How descriptors missing from an image enter the evidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvidenceMode {
    /// Every vocabulary descriptor is observed: absent ones contribute `P(false | y)`.
    #[default]
    Full,
    /// Only present descriptors are observed; absent ones are marginalized out.
    PresenceOnly,
}

impl std::str::FromStr for EvidenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(EvidenceMode::Full),
            "presence" | "presence-only" => Ok(EvidenceMode::PresenceOnly),
            other => Err(Error::Config(format!("unknown evidence mode '{other}' (full|presence)"))),
        }
    }
}

impl std::fmt::Display for EvidenceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EvidenceMode::Full => "full",
            EvidenceMode::PresenceOnly => "presence",
        })
    }
}

/// Conditional table of the CNN evidence node: row `y` is `P(cnn predicts c | y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CnnEvidenceCpt {
    table: [[f64; NUM_CLASSES]; NUM_CLASSES],
}

impl CnnEvidenceCpt {
    pub fn new(table: [[f64; NUM_CLASSES]; NUM_CLASSES]) -> Result<Self> {
        for row in &table {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| p.is_nan() || *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Data(format!("CNN evidence row {row:?} is not a distribution")));
            }
        }
        Ok(CnnEvidenceCpt { table })
    }

    pub fn identity() -> Self {
        CnnEvidenceCpt {
            table: std::array::from_fn(|y| std::array::from_fn(|c| if y == c { 1.0 } else { 0.0 })),
        }
    }

    pub fn uniform() -> Self {
        CnnEvidenceCpt {
            table: [[1.0 / 3.0; NUM_CLASSES]; NUM_CLASSES],
        }
    }

    pub fn likelihood(&self, truth: Emotion, predicted: Emotion) -> f64 {
        self.table[truth.index()][predicted.index()]
    }

    pub fn rows(&self) -> &[[f64; NUM_CLASSES]; NUM_CLASSES] {
        &self.table
    }
}

/// Row-normalizes `(counts + smoothing)` of a confusion matrix (rows = true class).
pub fn integrate_cnn_node(confusion: &ConfusionMatrix, smoothing: f64) -> Result<CnnEvidenceCpt> {
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(Error::Config(format!("smoothing {smoothing} must be a non-negative number")));
    }
    let mut table = [[0.0; NUM_CLASSES]; NUM_CLASSES];
    for y in Emotion::ALL {
        let row = confusion.row(y);
        let total: u64 = row.iter().sum();
        for c in Emotion::ALL {
            table[y.index()][c.index()] = smoothed(row[c.index()], total, smoothing, NUM_CLASSES as f64)
                .ok_or_else(|| {
                    Error::Fit(format!("no calibration samples of class '{y}' and zero smoothing"))
                })?;
        }
    }
    CnnEvidenceCpt::new(table)
}

/// Fitted descriptor model ready for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct BayesModel {
    vocab: DescriptorVocabulary,
    cpt: BernoulliCpt,
    prior: ClassPrior,
    mode: EvidenceMode,
    log_true: Vec<[f64; NUM_CLASSES]>,
    log_false: Vec<[f64; NUM_CLASSES]>,
}

impl BayesModel {
    pub fn new(vocab: DescriptorVocabulary, cpt: BernoulliCpt, prior: ClassPrior, mode: EvidenceMode) -> Result<Self> {
        if vocab.len() != cpt.len() {
            return Err(Error::dim("BayesModel", format!("{} CPT rows", vocab.len()), cpt.len()));
        }
        let log_true = cpt.rows().iter().map(|r| r.map(f64::ln)).collect();
        let log_false = cpt.rows().iter().map(|r| r.map(|p| (1.0 - p).ln())).collect();
        Ok(BayesModel {
            vocab,
            cpt,
            prior,
            mode,
            log_true,
            log_false,
        })
    }

    pub fn from_fit(vocab: DescriptorVocabulary, fit: NaiveBayesFit, mode: EvidenceMode) -> Result<Self> {
        Self::new(vocab, fit.cpt, fit.prior, mode)
    }

    pub fn vocabulary(&self) -> &DescriptorVocabulary {
        &self.vocab
    }

    pub fn cpt(&self) -> &BernoulliCpt {
        &self.cpt
    }

    pub fn prior(&self) -> &ClassPrior {
        &self.prior
    }

    pub fn mode(&self) -> EvidenceMode {
        self.mode
    }

    pub fn with_mode(mut self, mode: EvidenceMode) -> Self {
        self.mode = mode;
        self
    }

    /// Present-descriptor flags over the vocabulary plus the count of unknown descriptors.
    fn observe<'a>(&self, evidence: impl IntoIterator<Item = &'a String>) -> (Vec<bool>, usize) {
        let mut present = vec![false; self.vocab.len()];
        let mut unknown = 0;
        for d in evidence {
            match self.vocab.index_of(d) {
                Some(i) => present[i] = true,
                None => unknown += 1,
            }
        }
        (present, unknown)
    }
}

/// Class posterior plus inference diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub distribution: EmotionDistribution,
    /// Evidence descriptors not in the vocabulary (ignored).
    pub unknown_descriptors: usize,
}

/// `P(cnn = predicted | y)` for every `y`, divided by its largest entry.
fn cnn_column(cpt: &CnnEvidenceCpt, predicted: Emotion) -> [f64; NUM_CLASSES] {
    let col = Emotion::ALL.map(|y| cpt.likelihood(y, predicted));
    let max = col.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        col.map(|l| l / max)
    } else {
        col
    }
}

/// `P(y | descriptors, cnn) ∝ P(y) · Π_i P(x_i | y) · P(cnn | y)`, computed in log space.
pub fn posterior(
    evidence: &BTreeSet<String>,
    model: &BayesModel,
    cnn: Option<(Emotion, &CnnEvidenceCpt)>,
) -> Result<Posterior> {
    let (present, unknown) = model.observe(evidence);
    let mut log_w = model.prior.0.probs().map(f64::ln);
    for (i, &on) in present.iter().enumerate() {
        let row = match (on, model.mode) {
            (true, _) => &model.log_true[i],
            (false, EvidenceMode::Full) => &model.log_false[i],
            (false, EvidenceMode::PresenceOnly) => continue,
        };
        for (w, l) in log_w.iter_mut().zip(row) {
            *w += l;
        }
    }
    if let Some((predicted, cpt)) = cnn {
        // Scaling the column by its max leaves the posterior unchanged and makes
        // a constant column add exactly zero.
        let col = cnn_column(cpt, predicted);
        for (w, l) in log_w.iter_mut().zip(col) {
            *w += l.ln();
        }
    }
    Ok(Posterior {
        distribution: EmotionDistribution::from_log_weights(log_w)?,
        unknown_descriptors: unknown,
    })
}

/// Same quantity as [`posterior`] by direct multiplication. Underflows for large
/// vocabularies; kept as a cross-check for small ones.
pub fn posterior_direct(
    evidence: &BTreeSet<String>,
    model: &BayesModel,
    cnn: Option<(Emotion, &CnnEvidenceCpt)>,
) -> Result<Posterior> {
    let (present, unknown) = model.observe(evidence);
    let mut w = *model.prior.0.probs();
    for (i, &on) in present.iter().enumerate() {
        for y in Emotion::ALL {
            let p = model.cpt.p_true(i, y);
            w[y.index()] *= match (on, model.mode) {
                (true, _) => p,
                (false, EvidenceMode::Full) => 1.0 - p,
                (false, EvidenceMode::PresenceOnly) => 1.0,
            };
        }
    }
    if let Some((predicted, cpt)) = cnn {
        for (w, l) in w.iter_mut().zip(cnn_column(cpt, predicted)) {
            *w *= l;
        }
    }
    Ok(Posterior {
        distribution: EmotionDistribution::from_weights(w)?,
        unknown_descriptors: unknown,
    })
}

/// Most probable class given the evidence.
pub fn classify(
    evidence: &BTreeSet<String>,
    model: &BayesModel,
    cnn: Option<(Emotion, &CnnEvidenceCpt)>,
) -> Result<Emotion> {
    Ok(posterior(evidence, model, cnn)?.distribution.argmax())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn record(id: &str, label: Option<Emotion>, descriptors: &[&str]) -> SampleRecord {
        SampleRecord {
            image_id: id.into(),
            image_path: PathBuf::from(format!("{id}.ppm")),
            face_boxes: Vec::new(),
            descriptors: descriptors.iter().map(|s| s.to_string()).collect(),
            label,
        }
    }

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn model(rows: Vec<[f64; 3]>, prior: [f64; 3], mode: EvidenceMode) -> BayesModel {
        let names: Vec<String> = (0..rows.len()).map(|i| format!("d{i}")).collect();
        BayesModel::new(
            DescriptorVocabulary::from_descriptors(&names),
            BernoulliCpt::new(rows, 0.0).unwrap(),
            ClassPrior(EmotionDistribution::new(prior).unwrap()),
            mode,
        )
        .unwrap()
    }

    #[test]
    fn vocabulary_from_records() {
        let recs = [record("a", None, &["a", "b"]), record("b", None, &["b", "c"])];
        let v = build_vocabulary(&recs, 1).unwrap();
        assert_eq!(v.names(), &["a", "b", "c"]);
        let v2 = build_vocabulary(&recs, 2).unwrap();
        assert_eq!(v2.names(), &["b"]);
        assert!(build_vocabulary(&[], 1).is_err());
    }

    #[test]
    fn vocabulary_normalizes() {
        let v = DescriptorVocabulary::from_descriptors(["Party ", "party", "", "Smile"]);
        assert_eq!(v.names(), &["party", "smile"]);
        assert_eq!(v.index_of("PARTY"), Some(0));
    }

    #[test]
    fn raw_and_smoothed_estimates() {
        // 100 positive images, descriptor "x" in 30 of them; 10 neutral, 10 negative without it.
        let mut recs = Vec::new();
        for i in 0..100 {
            let d: &[&str] = if i < 30 { &["x"] } else { &[] };
            recs.push(record(&format!("p{i}"), Some(Emotion::Positive), d));
        }
        for i in 0..10 {
            recs.push(record(&format!("u{i}"), Some(Emotion::Neutral), &[]));
            recs.push(record(&format!("n{i}"), Some(Emotion::Negative), &[]));
        }
        let vocab = DescriptorVocabulary::from_descriptors(["x"]);
        let raw = fit_mle(&recs, &vocab, 0.0).unwrap();
        assert_eq!(raw.cpt.p_true(0, Emotion::Positive), 0.3);
        assert_eq!(raw.counts.present(0, Emotion::Positive), 30);
        assert_eq!(raw.counts.absent(0, Emotion::Positive), 70);
        let smooth = fit_mle(&recs, &vocab, 1.0).unwrap();
        assert!((smooth.cpt.p_true(0, Emotion::Positive) - 31.0 / 102.0).abs() < 1e-15);
        assert!((smooth.cpt.p_true(0, Emotion::Positive) - 0.30392).abs() < 1e-5);
    }

    #[test]
    fn zero_count_floor() {
        let recs: Vec<_> = (0..100).map(|i| record(&format!("r{i}"), Some(Emotion::Neutral), &[])).collect();
        let vocab = DescriptorVocabulary::from_descriptors(["never"]);
        let fit = fit_mle(&recs, &vocab, 1.0).unwrap();
        assert_eq!(fit.cpt.p_true(0, Emotion::Neutral), 1.0 / 102.0);
    }

    #[test]
    fn absent_class_needs_smoothing() {
        let recs = [record("a", Some(Emotion::Positive), &["x"])];
        let vocab = DescriptorVocabulary::from_descriptors(["x"]);
        assert!(matches!(fit_mle(&recs, &vocab, 0.0), Err(Error::Fit(_))));
        assert!(fit_mle(&recs, &vocab, 1.0).is_ok());
    }

    #[test]
    fn unlabeled_record_rejected() {
        let recs = [record("a", None, &["x"])];
        let vocab = DescriptorVocabulary::from_descriptors(["x"]);
        assert!(matches!(fit_mle(&recs, &vocab, 1.0), Err(Error::Data(_))));
    }

    #[test]
    fn exclusive_descriptor_is_certain() {
        let recs = [
            record("p1", Some(Emotion::Positive), &["sun"]),
            record("p2", Some(Emotion::Positive), &["sun", "crowd"]),
            record("u1", Some(Emotion::Neutral), &["crowd"]),
            record("n1", Some(Emotion::Negative), &[]),
        ];
        let vocab = DescriptorVocabulary::from_descriptors(["sun", "crowd"]);
        let fit = fit_mle(&recs, &vocab, 0.0).unwrap();
        let sun = vocab.index_of("sun").unwrap();
        assert_eq!(fit.cpt.p_true(sun, Emotion::Positive), 1.0);
        assert_eq!(fit.cpt.p_true(sun, Emotion::Neutral), 0.0);
        assert_eq!(fit.cpt.p_true(sun, Emotion::Negative), 0.0);
    }

    #[test]
    fn empty_vocabulary_passes_prior_through() {
        let m = model(vec![], [1.0 / 3.0; 3], EvidenceMode::Full);
        let p = posterior(&set(&["anything"]), &m, None).unwrap();
        assert_eq!(p.distribution, EmotionDistribution::uniform());
        assert_eq!(p.unknown_descriptors, 1);
    }

    #[test]
    fn single_descriptor_hand_arithmetic() {
        let m = model(vec![[0.9, 0.5, 0.1]], [1.0 / 3.0; 3], EvidenceMode::Full);
        let p = posterior(&set(&["d0"]), &m, None).unwrap();
        for (a, e) in p.distribution.probs().iter().zip([0.6, 1.0 / 3.0, 1.0 / 15.0]) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
        assert_eq!(classify(&set(&["d0"]), &m, None).unwrap(), Emotion::Positive);
    }

    #[test]
    fn presence_only_ignores_absent() {
        let rows = vec![[0.9, 0.5, 0.1], [0.2, 0.2, 0.9]];
        let full = model(rows.clone(), [1.0 / 3.0; 3], EvidenceMode::Full);
        let presence = model(rows, [1.0 / 3.0; 3], EvidenceMode::PresenceOnly);
        let only = posterior(&set(&["d0"]), &presence, None).unwrap();
        let single = model(vec![[0.9, 0.5, 0.1]], [1.0 / 3.0; 3], EvidenceMode::Full);
        let reference = posterior(&set(&["d0"]), &single, None).unwrap();
        assert_eq!(only.distribution, reference.distribution);
        assert_ne!(posterior(&set(&["d0"]), &full, None).unwrap().distribution, only.distribution);
    }

    #[test]
    fn uniform_prior_cnn_only_follows_column() {
        let cpt = CnnEvidenceCpt::new([[0.6, 0.3, 0.1], [0.2, 0.7, 0.1], [0.1, 0.1, 0.8]]).unwrap();
        let m = model(vec![], [1.0 / 3.0; 3], EvidenceMode::Full);
        let p = posterior(&set(&[]), &m, Some((Emotion::Neutral, &cpt))).unwrap();
        let col = [0.3, 0.7, 0.1];
        let sum: f64 = col.iter().sum();
        for (a, c) in p.distribution.probs().iter().zip(col) {
            assert!((a - c / sum).abs() < 1e-12);
        }
    }

    #[test]
    fn confusion_rows_normalize() {
        let mut cm = ConfusionMatrix::default();
        for (t, p, n) in [(0, 0, 8), (0, 1, 1), (0, 2, 1), (1, 1, 5), (2, 2, 4), (2, 0, 4)] {
            for _ in 0..n {
                cm.record(Emotion::ALL[t], Emotion::ALL[p]);
            }
        }
        let cpt = integrate_cnn_node(&cm, 0.0).unwrap();
        assert_eq!(cpt.rows()[0], [0.8, 0.1, 0.1]);
        assert_eq!(cpt.rows()[2], [0.5, 0.0, 0.5]);
    }

    #[test]
    fn perfect_cnn_gives_identity() {
        let mut cm = ConfusionMatrix::default();
        for y in Emotion::ALL {
            for _ in 0..10 {
                cm.record(y, y);
            }
        }
        assert_eq!(integrate_cnn_node(&cm, 0.0).unwrap(), CnnEvidenceCpt::identity());
    }

    #[test]
    fn empty_row_needs_smoothing() {
        let mut cm = ConfusionMatrix::default();
        cm.record(Emotion::Positive, Emotion::Positive);
        cm.record(Emotion::Neutral, Emotion::Neutral);
        assert!(matches!(integrate_cnn_node(&cm, 0.0), Err(Error::Fit(_))));
        let cpt = integrate_cnn_node(&cm, 1.0).unwrap();
        for p in cpt.rows()[2] {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn log_and_direct_agree() {
        let rows: Vec<[f64; 3]> = (0..20)
            .map(|i| {
                let f = |k: usize| 0.05 + 0.9 * (((i * 7 + k * 13) % 17) as f64 / 16.0);
                [f(0), f(1), f(2)]
            })
            .collect();
        let m = model(rows, [0.5, 0.3, 0.2], EvidenceMode::Full);
        let ev = set(&["d1", "d4", "d9", "d17", "zzz"]);
        let cpt = CnnEvidenceCpt::new([[0.7, 0.2, 0.1], [0.2, 0.6, 0.2], [0.1, 0.3, 0.6]]).unwrap();
        let a = posterior(&ev, &m, Some((Emotion::Negative, &cpt))).unwrap();
        let b = posterior_direct(&ev, &m, Some((Emotion::Negative, &cpt))).unwrap();
        for (x, y) in a.distribution.probs().iter().zip(b.distribution.probs()) {
            assert!((x - y).abs() < 1e-9);
        }
        assert_eq!(a.unknown_descriptors, 1);
    }

    #[test]
    fn large_vocabulary_does_not_underflow() {
        let rows = vec![[0.01, 0.02, 0.03]; 812];
        let m = model(rows, [1.0 / 3.0; 3], EvidenceMode::Full);
        let names: Vec<&str> = m.vocabulary().names().iter().map(String::as_str).collect();
        let p = posterior(&set(&names), &m, None).unwrap();
        assert!(p.distribution.probs()[2] > 0.99);
    }
}
