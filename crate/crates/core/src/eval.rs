//! Scoring of the descriptor-only, CNN-only and fused classifiers, and the
//! descriptor frequency table.

use std::fmt::Write as _;

use crate::bayes::DescriptorVocabulary;
use crate::data_io::{AnnotationProvider, DatasetManifest};
use crate::emotion::{Emotion, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::pipeline::{analyze, prior_class, Analysis, FusionModel};

/// 3×3 counts; rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; NUM_CLASSES]; NUM_CLASSES]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn record(&mut self, truth: Emotion, predicted: Emotion) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn get(&self, truth: Emotion, predicted: Emotion) -> u64 {
        self.counts[truth.index()][predicted.index()]
    }

    pub fn row(&self, truth: Emotion) -> [u64; NUM_CLASSES] {
        self.counts[truth.index()]
    }

    pub fn counts(&self) -> &[[u64; NUM_CLASSES]; NUM_CLASSES] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    /// `trace / total`; `None` for an empty matrix.
    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| self.trace() as f64 / total as f64)
    }

    /// Each row divided by its sum; empty rows stay zero.
    pub fn row_normalized(&self) -> [[f64; NUM_CLASSES]; NUM_CLASSES] {
        self.counts.map(|row| {
            let sum: u64 = row.iter().sum();
            row.map(|c| if sum == 0 { 0.0 } else { c as f64 / sum as f64 })
        })
    }

    /// Fraction of predictions of `class` that were right; `None` if never predicted.
    pub fn precision(&self, class: Emotion) -> Option<f64> {
        let c = class.index();
        let predicted: u64 = (0..NUM_CLASSES).map(|t| self.counts[t][c]).sum();
        (predicted > 0).then(|| self.counts[c][c] as f64 / predicted as f64)
    }

    /// Fraction of `class` samples found; `None` if the class never occurred.
    pub fn recall(&self, class: Emotion) -> Option<f64> {
        let c = class.index();
        let actual: u64 = self.counts[c].iter().sum();
        (actual > 0).then(|| self.counts[c][c] as f64 / actual as f64)
    }
}

/// Which classifier is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    /// Descriptor model alone.
    Bn,
    /// Face-averaged CNN alone.
    Cnn,
    /// Fused prediction.
    Ensemble,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Bn, Mode::Cnn, Mode::Ensemble];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Bn => "bn",
            Mode::Cnn => "cnn",
            Mode::Ensemble => "ensemble",
        }
    }

    fn needs_network(self) -> bool {
        self != Mode::Bn
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode '{s}' (bn|cnn|ensemble)")))
    }
}

/// Scores of one mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeReport {
    pub mode: Mode,
    pub confusion: ConfusionMatrix,
    /// Images without faces, scored by the descriptor model (ensemble) or the prior (cnn).
    pub no_face_fallbacks: usize,
}

impl ModeReport {
    pub fn accuracy(&self) -> f64 {
        self.confusion.accuracy().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub split: String,
    /// Records in the manifest.
    pub records: usize,
    /// Records without a label, left out of every score.
    pub excluded_unlabeled: usize,
    /// The mode reported first.
    pub headline: Mode,
    pub modes: Vec<ModeReport>,
}

impl EvalReport {
    pub fn mode(&self, mode: Mode) -> Option<&ModeReport> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

/// Accumulates per-record analyses into mode scores.
#[derive(Debug, Clone)]
pub struct Scorer {
    modes: Vec<ModeReport>,
    prior_class: Emotion,
    records: usize,
    unlabeled: usize,
}

impl Scorer {
    pub fn new(modes: &[Mode], prior_class: Emotion) -> Self {
        let mut modes = modes.to_vec();
        modes.sort();
        modes.dedup();
        Scorer {
            modes: modes
                .into_iter()
                .map(|mode| ModeReport {
                    mode,
                    confusion: ConfusionMatrix::default(),
                    no_face_fallbacks: 0,
                })
                .collect(),
            prior_class,
            records: 0,
            unlabeled: 0,
        }
    }

    pub fn add(&mut self, label: Option<Emotion>, analysis: &Analysis) {
        self.records += 1;
        let Some(truth) = label else {
            self.unlabeled += 1;
            return;
        };
        for m in &mut self.modes {
            let (predicted, fallback) = match (m.mode, analysis.cnn) {
                (Mode::Bn, _) => (analysis.bn.distribution.argmax(), false),
                (Mode::Cnn, Some((class, _))) => (class, false),
                (Mode::Cnn, None) => (self.prior_class, true),
                (Mode::Ensemble, cnn) => (analysis.fused.class, cnn.is_none()),
            };
            m.confusion.record(truth, predicted);
            m.no_face_fallbacks += usize::from(fallback);
        }
    }

    pub fn finish(self, split: impl Into<String>, headline: Mode) -> EvalReport {
        EvalReport {
            split: split.into(),
            records: self.records,
            excluded_unlabeled: self.unlabeled,
            headline,
            modes: self.modes,
        }
    }
}

/// Classifies every record once and scores each requested mode. The first
/// entry of `modes` is the headline.
pub fn evaluate(
    manifest: &DatasetManifest,
    model: &FusionModel,
    provider: &dyn AnnotationProvider,
    modes: &[Mode],
) -> Result<EvalReport> {
    let headline = *modes.first().ok_or_else(|| Error::Usage("no evaluation mode given".into()))?;
    if model.network.is_none() {
        if let Some(m) = modes.iter().find(|m| m.needs_network()) {
            return Err(Error::Usage(format!("mode '{m}' needs a trained CNN in the model")));
        }
    }
    if modes.contains(&Mode::Ensemble) && model.cnn_cpt.is_none() && model.fusion == crate::pipeline::FusionRule::EvidenceNode {
        return Err(Error::Usage("ensemble mode needs a calibrated CNN evidence table".into()));
    }
    let mut scorer = Scorer::new(modes, prior_class(model));
    for record in &manifest.records {
        scorer.add(record.label, &analyze(record, model, provider)?);
    }
    if scorer.unlabeled > 0 {
        log::warn!("{} unlabeled records excluded from scoring", scorer.unlabeled);
    }
    Ok(scorer.finish(&manifest.split, headline))
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{:.2}", 100.0 * v))
}

/// Plain-text report. Identical reports render to identical bytes.
pub fn render_report(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "split: {}", report.split);
    let _ = writeln!(
        out,
        "records: {} (scored {}, unlabeled {})",
        report.records,
        report.records - report.excluded_unlabeled,
        report.excluded_unlabeled
    );
    if let Some(h) = report.mode(report.headline) {
        let _ = writeln!(out, "headline: {} accuracy {}%", h.mode, pct(Some(h.accuracy())));
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "mode      accuracy  no-face fallbacks");
    for m in &report.modes {
        let _ = writeln!(out, "{:<9} {:>7}%  {}", m.mode.name(), pct(Some(m.accuracy())), m.no_face_fallbacks);
    }
    for m in &report.modes {
        let _ = writeln!(out);
        let _ = writeln!(out, "[{}] confusion (rows = truth, columns = predicted)", m.mode);
        let _ = writeln!(out, "{:<9} {:>8} {:>8} {:>8}", "", "positive", "neutral", "negative");
        for y in Emotion::ALL {
            let row = m.confusion.row(y);
            let _ = writeln!(out, "{:<9} {:>8} {:>8} {:>8}", y.name(), row[0], row[1], row[2]);
        }
        let _ = writeln!(out, "[{}] row-normalized", m.mode);
        let norm = m.confusion.row_normalized();
        for y in Emotion::ALL {
            let r = norm[y.index()];
            let _ = writeln!(out, "{:<9} {:>8.2} {:>8.2} {:>8.2}", y.name(), r[0], r[1], r[2]);
        }
        let _ = writeln!(out, "[{}] per class: precision% recall%", m.mode);
        for y in Emotion::ALL {
            let _ = writeln!(
                out,
                "{:<9} {:>7} {:>7}",
                y.name(),
                pct(m.confusion.precision(y)),
                pct(m.confusion.recall(y))
            );
        }
    }
    out
}

/// Long-format CSV `mode,metric,truth,predicted,value`: accuracy and no-face
/// fallbacks per mode, then a count and a row fraction per confusion cell.
pub fn report_csv(report: &EvalReport) -> String {
    let mut out = String::from("mode,metric,truth,predicted,value\n");
    for m in &report.modes {
        let _ = writeln!(out, "{},accuracy,,,{}", m.mode, m.accuracy());
        let _ = writeln!(out, "{},no_face_fallbacks,,,{}", m.mode, m.no_face_fallbacks);
        let norm = m.confusion.row_normalized();
        for y in Emotion::ALL {
            for c in Emotion::ALL {
                let _ = writeln!(out, "{},count,{y},{c},{}", m.mode, m.confusion.get(y, c));
                let _ = writeln!(out, "{},row_fraction,{y},{c},{}", m.mode, norm[y.index()][c.index()]);
            }
        }
    }
    out
}

/// Per-class image counts of one descriptor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistogramRow {
    pub descriptor: String,
    pub counts: [u64; NUM_CLASSES],
}

impl HistogramRow {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Labeled images showing each vocabulary descriptor, by class; sorted by total
/// descending, ties by descriptor.
pub fn descriptor_histogram(manifest: &DatasetManifest, vocab: &DescriptorVocabulary) -> Vec<HistogramRow> {
    let mut rows: Vec<HistogramRow> = vocab
        .names()
        .iter()
        .map(|d| HistogramRow {
            descriptor: d.clone(),
            counts: [0; NUM_CLASSES],
        })
        .collect();
    for record in &manifest.records {
        let Some(label) = record.label else { continue };
        let seen: std::collections::BTreeSet<usize> =
            record.descriptors.iter().filter_map(|d| vocab.index_of(d)).collect();
        for i in seen {
            rows[i].counts[label.index()] += 1;
        }
    }
    rows.sort_by(|a, b| b.total().cmp(&a.total()).then_with(|| a.descriptor.cmp(&b.descriptor)));
    rows
}

pub fn histogram_csv(rows: &[HistogramRow]) -> String {
    let mut out = String::from("descriptor,positive,neutral,negative,total\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.descriptor, r.counts[0], r.counts[1], r.counts[2], r.total());
    }
    out
}
