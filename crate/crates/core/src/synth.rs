//! Synthetic group images for tests and demos.
//!
//! Every class has its own face texture: horizontal stripes (positive),
//! vertical stripes (neutral) and a checkerboard (negative), each with random
//! colour, phase, frequency and pixel noise. A corpus image is a group of
//! 2–6 such faces on a noisy background. Within each split exactly `face_noise` of the
//! faces (rounded) show another class's texture, and exactly
//! `1 - descriptor_fidelity` of the class-specific descriptors come from another
//! class's pool; which faces and descriptors are picked is random. Every image
//! also carries one or two generic descriptors shared by all classes.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data_io::{sidecar_path, write_descriptors, write_faces, write_ppm, FACES_EXT, LABELS_EXT};
use crate::emotion::{Emotion, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::facepath::{min_max_normalize, resize_bilinear, FaceBox};
use crate::nn::CROP_SIZE;
use crate::tensor::Tensor;
use crate::train::{substream, FaceDataset};

const POOLS: [[&str; 8]; NUM_CLASSES] = [
    ["beach", "birthday", "celebration", "concert", "festival", "graduation", "party", "wedding"],
    ["classroom", "conference", "lecture", "meeting", "office", "portrait", "queue", "street"],
    ["accident", "crying", "disaster", "fight", "flood", "funeral", "protest", "riot"],
];
const GENERIC: [&str; 6] = ["crowd", "daylight", "group", "indoor", "outdoor", "people"];
/// Class-specific descriptors per image.
const CLASS_DESCRIPTORS: usize = 3;
const GRID_COLS: usize = 3;
const GRID_ROWS: usize = 2;

/// Shape of a generated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    /// Images per split; each must be a multiple of 3 (classes are balanced).
    pub splits: Vec<(String, usize)>,
    pub width: usize,
    pub height: usize,
    /// Faces per image are uniform in `min_faces..=max_faces`, at most 6.
    pub min_faces: usize,
    pub max_faces: usize,
    pub face_noise: f64,
    pub descriptor_fidelity: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            splits: vec![("train".into(), 150), ("val".into(), 60), ("test".into(), 90)],
            width: 144,
            height: 96,
            min_faces: 2,
            max_faces: 6,
            face_noise: 0.2,
            descriptor_fidelity: 0.9,
            seed: 0,
        }
    }
}

/// What was written, per split.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusSummary {
    pub images: usize,
    pub faces: usize,
    /// Faces whose texture differs from their image's class.
    pub noisy_faces: usize,
    /// Class-specific descriptors taken from another class's pool.
    pub noisy_descriptors: usize,
}

fn other_class<R: Rng>(class: Emotion, rng: &mut R) -> Emotion {
    let offset = rng.gen_range(1..NUM_CLASSES);
    Emotion::ALL[(class.index() + offset) % NUM_CLASSES]
}

/// A `size × size × 3` face texture of `class` with 0–255 values.
pub fn face_texture<R: Rng>(class: Emotion, size: usize, rng: &mut R) -> Tensor {
    let cycles = rng.gen_range(2.5..4.5);
    let period = size as f64 / cycles;
    let phase = rng.gen_range(0.0..period);
    let dark: [f64; 3] = std::array::from_fn(|_| rng.gen_range(10.0..90.0));
    let light: [f64; 3] = std::array::from_fn(|_| rng.gen_range(160.0..245.0));
    let mut noise = Vec::with_capacity(size * size * 3);
    for _ in 0..size * size * 3 {
        noise.push(rng.gen_range(-20.0..20.0));
    }
    Tensor::from_fn(&[size, size, 3], |i| {
        let (y, x, c) = (i / (size * 3), (i / 3) % size, i % 3);
        let band = |v: usize| ((v as f64 + phase) / (period / 2.0)).floor() as i64 % 2 == 0;
        let on = match class {
            Emotion::Positive => band(y),
            Emotion::Neutral => band(x),
            Emotion::Negative => band(x) ^ band(y),
        };
        ((if on { light[c] } else { dark[c] }) + noise[i]).clamp(0.0, 255.0)
    })
}

/// Preprocessed texture crops: `per_class` faces per class, ready for the CNN.
pub fn separable_faces(per_class: usize, seed: u64) -> Result<FaceDataset> {
    let mut rng = substream(seed, 0);
    let mut ds = FaceDataset::default();
    for _ in 0..per_class {
        for class in Emotion::ALL {
            let size = rng.gen_range(32..=72);
            let raw = face_texture(class, size, &mut rng);
            let mut face = resize_bilinear(&raw, CROP_SIZE, CROP_SIZE)?;
            min_max_normalize(&mut face);
            ds.push(face, class)?;
        }
    }
    Ok(ds)
}

fn render_image(
    spec: &CorpusSpec,
    class: Emotion,
    noisy_faces: &[bool],
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor, Vec<FaceBox>)> {
    let (w, h) = (spec.width, spec.height);
    let base: [f64; 3] = std::array::from_fn(|_| rng.gen_range(60.0..200.0));
    let mut data: Vec<f64> = (0..w * h * 3).map(|i| base[i % 3] + rng.gen_range(-25.0..25.0)).collect();

    // Faces sit in distinct cells of a 3×2 grid so they never overlap.
    let (cw, ch) = (w / GRID_COLS, h / GRID_ROWS);
    let mut cells: [usize; GRID_COLS * GRID_ROWS] = std::array::from_fn(|i| i);
    cells.shuffle(rng);
    let mut boxes = Vec::with_capacity(noisy_faces.len());
    for (&cell, &noisy) in cells.iter().zip(noisy_faces) {
        let size = rng.gen_range((cw.min(ch) * 2 / 3)..=cw.min(ch) - 2);
        let x = (cell % GRID_COLS) * cw + rng.gen_range(1..=cw - size - 1);
        let y = (cell / GRID_COLS) * ch + rng.gen_range(1..=ch - size - 1);
        let shown = if noisy { other_class(class, rng) } else { class };
        let tex = face_texture(shown, size, rng);
        for fy in 0..size {
            let row = ((y + fy) * w + x) * 3;
            data[row..row + size * 3].copy_from_slice(&tex.data()[fy * size * 3..(fy + 1) * size * 3]);
        }
        boxes.push(FaceBox::new(x as i64, y as i64, size as i64, size as i64));
    }
    for v in &mut data {
        *v = v.clamp(0.0, 255.0).round();
    }
    Ok((Tensor::new(vec![h, w, 3], data)?, boxes))
}

/// One class-specific descriptor per flag (from another class's pool when set)
/// plus one or two generic ones.
fn descriptors(class: Emotion, noisy: &[bool], rng: &mut ChaCha8Rng) -> BTreeSet<String> {
    let mut per_source = [0usize; NUM_CLASSES];
    for &n in noisy {
        per_source[if n { other_class(class, rng) } else { class }.index()] += 1;
    }
    let mut out = BTreeSet::new();
    for (pool, &n) in POOLS.iter().zip(&per_source) {
        out.extend(pool.choose_multiple(rng, n).map(|s| s.to_string()));
    }
    let generic = rng.gen_range(1..=2);
    out.extend(GENERIC.choose_multiple(rng, generic).map(|s| s.to_string()));
    out
}

/// `count` flags of which exactly `round(rate * count)` are set, in random positions.
fn exact_flags(count: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let set = (rate * count as f64).round() as usize;
    let mut flags: Vec<bool> = (0..count).map(|i| i < set).collect();
    flags.shuffle(rng);
    flags
}

/// Writes `root/<split>/<class>/<id>.ppm` plus `.faces` and `.labels` sidecars.
pub fn generate_corpus(root: &Path, spec: &CorpusSpec) -> Result<CorpusSummary> {
    if spec.width < 20 * GRID_COLS || spec.height < 20 * GRID_ROWS {
        return Err(Error::Config(format!(
            "synthetic images must be at least {}x{}",
            20 * GRID_COLS,
            20 * GRID_ROWS
        )));
    }
    if spec.min_faces == 0 || spec.min_faces > spec.max_faces || spec.max_faces > GRID_COLS * GRID_ROWS {
        return Err(Error::Config(format!(
            "faces per image {}..={} must lie within 1..={}",
            spec.min_faces,
            spec.max_faces,
            GRID_COLS * GRID_ROWS
        )));
    }
    if !(0.0..=1.0).contains(&spec.face_noise) || !(0.0..=1.0).contains(&spec.descriptor_fidelity) {
        return Err(Error::Config("noise and fidelity must be probabilities".into()));
    }
    let mut summary = CorpusSummary::default();
    for (s, (split, count)) in spec.splits.iter().enumerate() {
        if count % NUM_CLASSES != 0 {
            return Err(Error::Config(format!("split '{split}' size {count} is not a multiple of 3")));
        }
        let mut rng = substream(spec.seed, 10 + s as u64);
        let face_counts: Vec<usize> = (0..*count).map(|_| rng.gen_range(spec.min_faces..=spec.max_faces)).collect();
        let noisy_faces = exact_flags(face_counts.iter().sum(), spec.face_noise, &mut rng);
        let noisy_descriptors = exact_flags(count * CLASS_DESCRIPTORS, 1.0 - spec.descriptor_fidelity, &mut rng);
        let mut next_face = 0;
        for (n, (&k, desc_flags)) in face_counts.iter().zip(noisy_descriptors.chunks(CLASS_DESCRIPTORS)).enumerate() {
            let class = Emotion::ALL[n / (count / NUM_CLASSES)];
            let i = n % (count / NUM_CLASSES);
            let dir: PathBuf = root.join(split).join(class.name());
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let flags = &noisy_faces[next_face..next_face + k];
            next_face += k;
            let (pixels, boxes) = render_image(spec, class, flags, &mut rng)?;
            let desc = descriptors(class, desc_flags, &mut rng);
            let path = dir.join(format!("{split}-{}-{i:04}.ppm", class.name()));
            write_ppm(&path, &pixels)?;
            write_faces(&sidecar_path(&path, FACES_EXT), &boxes)?;
            write_descriptors(&sidecar_path(&path, LABELS_EXT), &desc)?;
            summary.images += 1;
            summary.faces += k;
            summary.noisy_faces += flags.iter().filter(|&&f| f).count();
            summary.noisy_descriptors += desc_flags.iter().filter(|&&f| f).count();
        }
    }
    Ok(summary)
}
