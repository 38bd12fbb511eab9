use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::emotion::{Emotion, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Labeled, preprocessed face crops for CNN training.
#[derive(Debug, Clone, Default)]
pub struct FaceDataset {
    faces: Vec<Tensor>,
    labels: Vec<Emotion>,
    by_class: [Vec<usize>; NUM_CLASSES],
}

impl FaceDataset {
    pub fn new(samples: impl IntoIterator<Item = (Tensor, Emotion)>) -> Result<Self> {
        let mut ds = FaceDataset::default();
        for (face, label) in samples {
            ds.push(face, label)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, face: Tensor, label: Emotion) -> Result<()> {
        if let Some(first) = self.faces.first() {
            face.expect_shape("FaceDataset::push", first.shape())?;
        }
        self.by_class[label.index()].push(self.faces.len());
        self.faces.push(face);
        self.labels.push(label);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn face(&self, i: usize) -> &Tensor {
        &self.faces[i]
    }

    pub fn label(&self, i: usize) -> Emotion {
        self.labels[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Tensor, Emotion)> {
        self.faces.iter().zip(self.labels.iter().copied())
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        std::array::from_fn(|c| self.by_class[c].len())
    }
}

/// Draws `per_class` sample indices from every class and shuffles them together.
///
/// Classes holding at least `per_class` samples are drawn without replacement;
/// smaller classes are drawn with replacement to fill their slots.
pub fn balanced_batch<R: Rng + ?Sized>(
    dataset: &FaceDataset,
    per_class: usize,
    rng: &mut R,
) -> Result<Vec<(usize, Emotion)>> {
    if let Some(empty) = Emotion::ALL.iter().find(|c| dataset.by_class[c.index()].is_empty()) {
        return Err(Error::Data(format!("no training faces for class '{empty}'")));
    }
    let mut batch = Vec::with_capacity(per_class * NUM_CLASSES);
    for class in Emotion::ALL {
        let pool = &dataset.by_class[class.index()];
        if pool.len() >= per_class {
            batch.extend(index::sample(rng, pool.len(), per_class).into_iter().map(|i| (pool[i], class)));
        } else {
            batch.extend((0..per_class).map(|_| (pool[rng.gen_range(0..pool.len())], class)));
        }
    }
    batch.shuffle(rng);
    Ok(batch)
}
