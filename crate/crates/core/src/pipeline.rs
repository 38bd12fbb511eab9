//! Per-image orchestration: faces through the CNN, descriptors through the
//! Bayes model, and the fusion of the two.

use std::collections::BTreeSet;

use crate::bayes::{integrate_cnn_node, posterior, BayesModel, CnnEvidenceCpt, Posterior};
use crate::data_io::{AnnotationProvider, DatasetManifest, ModelBundle, SampleRecord};
use crate::emotion::{Emotion, EmotionDistribution};
use crate::error::{Error, Result};
use crate::eval::ConfusionMatrix;
use crate::facepath::{aggregate_faces, classify_faces, face_source_load};
use crate::nn::Network;
use crate::train::FaceDataset;

/// How the CNN's output is combined with the descriptor model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FusionRule {
    /// The CNN's class is an observed child of the class node.
    #[default]
    EvidenceNode,
    /// Mean of the descriptor posterior and the CNN's face-averaged distribution.
    Averaging,
}

impl std::str::FromStr for FusionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "evidence" | "evidence-node" => Ok(FusionRule::EvidenceNode),
            "average" | "averaging" => Ok(FusionRule::Averaging),
            other => Err(Error::Config(format!("unknown fusion rule '{other}' (evidence|average)"))),
        }
    }
}

impl std::fmt::Display for FusionRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionRule::EvidenceNode => "evidence",
            FusionRule::Averaging => "average",
        })
    }
}

/// The trained components used at prediction time.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub network: Option<Network>,
    pub bayes: BayesModel,
    pub cnn_cpt: Option<CnnEvidenceCpt>,
    pub fusion: FusionRule,
}

impl FusionModel {
    /// Requires at least the Bayes model.
    pub fn from_bundle(bundle: ModelBundle, fusion: FusionRule) -> Result<Self> {
        let bayes = bundle
            .bayes
            .ok_or_else(|| Error::Usage("model has no descriptor model; run fit-bn first".into()))?;
        Ok(FusionModel {
            network: bundle.network,
            bayes,
            cnn_cpt: bundle.cnn_cpt,
            fusion,
        })
    }

    fn network(&self) -> Result<&Network> {
        self.network
            .as_ref()
            .ok_or_else(|| Error::Usage("model has no CNN; run train-cnn first".into()))
    }
}

/// Fused prediction for one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub class: Emotion,
    pub posterior: EmotionDistribution,
    /// Face-averaged CNN class; `None` when no face was found.
    pub cnn_class: Option<Emotion>,
    pub face_count: usize,
    pub unknown_descriptor_count: usize,
}

/// Every intermediate result for one image, so all scoring modes can share one pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Analysis {
    /// Descriptor-only posterior.
    pub bn: Posterior,
    /// Aggregated CNN class and mean distribution, when `K ≥ 1`.
    pub cnn: Option<(Emotion, EmotionDistribution)>,
    pub fused: Prediction,
}

/// Fuses already-computed per-face CNN outputs with the descriptor evidence.
/// An empty `face_outputs` leaves the CNN out entirely.
pub fn analyze_faces(
    descriptors: &BTreeSet<String>,
    face_outputs: &[EmotionDistribution],
    model: &FusionModel,
) -> Result<Analysis> {
    let bn = posterior(descriptors, &model.bayes, None)?;
    let cnn = match face_outputs {
        [] => None,
        outputs => Some(aggregate_faces(outputs)?),
    };
    let fused = match (cnn, model.fusion) {
        (None, _) => bn.distribution,
        (Some((class, _)), FusionRule::EvidenceNode) => {
            let cpt = model
                .cnn_cpt
                .as_ref()
                .ok_or_else(|| Error::Usage("model has no CNN evidence table; run calibrate first".into()))?;
            posterior(descriptors, &model.bayes, Some((class, cpt)))?.distribution
        }
        (Some((_, mean)), FusionRule::Averaging) => {
            let (a, b) = (bn.distribution.probs(), mean.probs());
            EmotionDistribution::new(std::array::from_fn(|i| 0.5 * (a[i] + b[i])))?
        }
    };
    Ok(Analysis {
        bn,
        cnn,
        fused: Prediction {
            class: fused.argmax(),
            posterior: fused,
            cnn_class: cnn.map(|(c, _)| c),
            face_count: face_outputs.len(),
            unknown_descriptor_count: bn.unknown_descriptors,
        },
    })
}

/// [`analyze_faces`] returning only the fused prediction.
pub fn predict_from_faces(
    descriptors: &BTreeSet<String>,
    face_outputs: &[EmotionDistribution],
    model: &FusionModel,
) -> Result<Prediction> {
    Ok(analyze_faces(descriptors, face_outputs, model)?.fused)
}

fn record_descriptors(record: &SampleRecord, provider: &dyn AnnotationProvider) -> Result<BTreeSet<String>> {
    Ok(provider.descriptors(record)?.unwrap_or_else(|| {
        log::warn!("{}: no descriptor annotation", record.image_id);
        BTreeSet::new()
    }))
}

/// Loads faces and descriptors for `record` and runs the whole model on them.
/// The CNN runs only when the model has one.
pub fn analyze(record: &SampleRecord, model: &FusionModel, provider: &dyn AnnotationProvider) -> Result<Analysis> {
    let run = || -> Result<Analysis> {
        let descriptors = record_descriptors(record, provider)?;
        let outputs = match &model.network {
            Some(net) => classify_faces(net, &face_source_load(record, provider)?)?,
            None => Vec::new(),
        };
        analyze_faces(&descriptors, &outputs, model)
    };
    run().map_err(|e| e.context(format!("image {}", record.image_id)))
}

/// Fused prediction for one image.
pub fn predict(record: &SampleRecord, model: &FusionModel, provider: &dyn AnnotationProvider) -> Result<Prediction> {
    model.network()?;
    Ok(analyze(record, model, provider)?.fused)
}

/// Every face of every labeled record, labeled with its image's class.
pub fn face_dataset(manifest: &DatasetManifest, provider: &dyn AnnotationProvider) -> Result<FaceDataset> {
    let mut ds = FaceDataset::default();
    for record in &manifest.records {
        let Some(label) = record.label else { continue };
        let faces = face_source_load(record, provider).map_err(|e| e.context(format!("image {}", record.image_id)))?;
        for face in faces.faces {
            ds.push(face.pixels, label)?;
        }
    }
    if ds.is_empty() {
        return Err(Error::Data(format!("split '{}' yields no labeled faces", manifest.split)));
    }
    Ok(ds)
}

/// Confusion matrix of the face-averaged CNN class on the labeled records that
/// have faces, and the evidence table derived from it.
pub fn calibrate(
    manifest: &DatasetManifest,
    network: &Network,
    provider: &dyn AnnotationProvider,
    smoothing: f64,
) -> Result<(ConfusionMatrix, CnnEvidenceCpt)> {
    let mut cm = ConfusionMatrix::default();
    let mut skipped = 0;
    for record in &manifest.records {
        let Some(label) = record.label else { continue };
        let faces = face_source_load(record, provider).map_err(|e| e.context(format!("image {}", record.image_id)))?;
        if faces.is_empty() {
            skipped += 1;
            continue;
        }
        let (class, _) = aggregate_faces(&classify_faces(network, &faces)?)?;
        cm.record(label, class);
    }
    if skipped > 0 {
        log::warn!("calibration: {skipped} labeled images without faces left out");
    }
    let cpt = integrate_cnn_node(&cm, smoothing)?;
    Ok((cm, cpt))
}

/// Prior argmax, used when the CNN has no face to look at.
pub fn prior_class(model: &FusionModel) -> Emotion {
    model.bayes.prior().0.argmax()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::{BernoulliCpt, ClassPrior, DescriptorVocabulary, EvidenceMode};

    fn model(rows: Vec<[f64; 3]>, prior: [f64; 3], cpt: Option<CnnEvidenceCpt>, fusion: FusionRule) -> FusionModel {
        let names: Vec<String> = (0..rows.len()).map(|i| format!("d{i}")).collect();
        FusionModel {
            network: None,
            bayes: BayesModel::new(
                DescriptorVocabulary::from_descriptors(&names),
                BernoulliCpt::new(rows, 0.0).unwrap(),
                ClassPrior(EmotionDistribution::new(prior).unwrap()),
                EvidenceMode::Full,
            )
            .unwrap(),
            cnn_cpt: cpt,
            fusion,
        }
    }

    fn d(p: [f64; 3]) -> EmotionDistribution {
        EmotionDistribution::new(p).unwrap()
    }

    #[test]
    fn no_faces_no_descriptors_gives_prior() {
        let m = model(vec![], [0.2, 0.5, 0.3], Some(CnnEvidenceCpt::identity()), FusionRule::EvidenceNode);
        let p = predict_from_faces(&BTreeSet::new(), &[], &m).unwrap();
        assert_eq!(p.class, Emotion::Neutral);
        assert_eq!(p.face_count, 0);
        assert_eq!(p.cnn_class, None);
        for (a, e) in p.posterior.probs().iter().zip([0.2, 0.5, 0.3]) {
            assert!((a - e).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_cpt_follows_cnn() {
        let m = model(vec![], [1.0 / 3.0; 3], Some(CnnEvidenceCpt::identity()), FusionRule::EvidenceNode);
        let p = predict_from_faces(&BTreeSet::new(), &[d([0.1, 0.2, 0.7])], &m).unwrap();
        assert_eq!(p.class, Emotion::Negative);
        assert_eq!(p.cnn_class, Some(Emotion::Negative));
    }

    #[test]
    fn uniform_cpt_is_uninformative() {
        let with = model(vec![[0.9, 0.5, 0.1]], [0.5, 0.3, 0.2], Some(CnnEvidenceCpt::uniform()), FusionRule::EvidenceNode);
        let ev: BTreeSet<String> = ["d0".to_string()].into();
        let fused = predict_from_faces(&ev, &[d([0.1, 0.8, 0.1])], &with).unwrap();
        let alone = predict_from_faces(&ev, &[], &with).unwrap();
        assert_eq!(fused.posterior, alone.posterior);
    }

    #[test]
    fn evidence_node_needs_table() {
        let m = model(vec![], [1.0 / 3.0; 3], None, FusionRule::EvidenceNode);
        assert!(matches!(
            predict_from_faces(&BTreeSet::new(), &[d([0.1, 0.2, 0.7])], &m),
            Err(Error::Usage(_))
        ));
        // Without faces the table is never consulted.
        assert!(predict_from_faces(&BTreeSet::new(), &[], &m).is_ok());
    }

    #[test]
    fn averaging_rule() {
        let m = model(vec![[0.9, 0.5, 0.1]], [1.0 / 3.0; 3], None, FusionRule::Averaging);
        let ev: BTreeSet<String> = ["d0".to_string()].into();
        let p = predict_from_faces(&ev, &[d([0.0, 0.0, 1.0])], &m).unwrap();
        // Descriptor posterior is (0.6, 1/3, 1/15).
        let expected = [0.3, 1.0 / 6.0, 0.5 + 1.0 / 30.0];
        for (a, e) in p.posterior.probs().iter().zip(expected) {
            assert!((a - e).abs() < 1e-12);
        }
        assert_eq!(p.class, Emotion::Negative);
    }

    #[test]
    fn fusion_rule_parse() {
        assert_eq!("average".parse::<FusionRule>().unwrap(), FusionRule::Averaging);
        assert_eq!("evidence".parse::<FusionRule>().unwrap(), FusionRule::default());
        assert!("vote".parse::<FusionRule>().is_err());
    }
}
