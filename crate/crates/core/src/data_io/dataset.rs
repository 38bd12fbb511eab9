use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::sidecar::{read_descriptors, read_faces, sidecar_path, FACES_EXT, LABELS_EXT};
use crate::emotion::{Emotion, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::facepath::FaceBox;
use crate::tensor::Tensor;

/// Extensions recognized as images (case-insensitive).
pub const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "ppm"];

/// One image plus its annotations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub image_id: String,
    pub image_path: PathBuf,
    pub face_boxes: Vec<FaceBox>,
    pub descriptors: BTreeSet<String>,
    pub label: Option<Emotion>,
}

/// Records of one split, ordered by `image_id`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub split: String,
    pub records: Vec<SampleRecord>,
    /// Images without a `.faces` sidecar.
    pub missing_faces: usize,
    /// Images without a `.labels` sidecar.
    pub missing_labels: usize,
    /// Image files that could not be read and were left out.
    pub skipped_images: usize,
}

impl DatasetManifest {
    /// Checks unique ids and builds a manifest; records are sorted by id.
    pub fn new(split: impl Into<String>, mut records: Vec<SampleRecord>) -> Result<Self> {
        records.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        if let Some(w) = records.windows(2).find(|w| w[0].image_id == w[1].image_id) {
            return Err(Error::Data(format!("duplicate image id '{}'", w[0].image_id)));
        }
        Ok(DatasetManifest {
            split: split.into(),
            records,
            missing_faces: 0,
            missing_labels: 0,
            skipped_images: 0,
        })
    }

    /// Labeled image count per class.
    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for label in self.records.iter().filter_map(|r| r.label) {
            counts[label.index()] += 1;
        }
        counts
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_image(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Reads one split laid out as `root/split/{positive,neutral,negative}/`.
///
/// Images directly under `root/split/` are loaded without a label. Face boxes
/// and descriptors come from `<stem>.faces` / `<stem>.labels` next to each
/// image; a missing sidecar means no boxes or no descriptors and is counted.
pub fn load_dataset(root: &Path, split: &str) -> Result<DatasetManifest> {
    let split_dir = root.join(split);
    if !split_dir.is_dir() {
        return Err(Error::Data(format!("split directory {} does not exist", split_dir.display())));
    }
    let mut sources: Vec<(PathBuf, Option<Emotion>)> =
        list_images(&split_dir)?.into_iter().map(|p| (p, None)).collect();
    for class in Emotion::ALL {
        let dir = split_dir.join(class.name());
        if dir.is_dir() {
            sources.extend(list_images(&dir)?.into_iter().map(|p| (p, Some(class))));
        }
    }

    let mut records = BTreeMap::new();
    let (mut missing_faces, mut missing_labels, mut skipped) = (0, 0, 0);
    for (path, label) in sources {
        if let Err(e) = image::image_dimensions(&path) {
            log::warn!("skipping unreadable image {}: {e}", path.display());
            skipped += 1;
            continue;
        }
        let image_id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Data(format!("image name {} is not valid UTF-8", path.display())))?
            .to_string();
        let face_boxes = match read_faces(&sidecar_path(&path, FACES_EXT))? {
            Some(b) => b,
            None => {
                missing_faces += 1;
                Vec::new()
            }
        };
        let descriptors = match read_descriptors(&sidecar_path(&path, LABELS_EXT))? {
            Some(d) => d,
            None => {
                missing_labels += 1;
                BTreeSet::new()
            }
        };
        let record = SampleRecord {
            image_id: image_id.clone(),
            image_path: path,
            face_boxes,
            descriptors,
            label,
        };
        if let Some(prev) = records.insert(image_id.clone(), record) {
            return Err(Error::Data(format!(
                "duplicate image id '{image_id}' ({} and another file)",
                prev.image_path.display()
            )));
        }
    }
    if records.is_empty() {
        return Err(Error::Data(format!("split '{split}' under {} has no readable images", root.display())));
    }
    if missing_faces + missing_labels > 0 {
        log::warn!("split '{split}': {missing_faces} images without .faces, {missing_labels} without .labels");
    }
    let mut manifest = DatasetManifest::new(split, records.into_values().collect())?;
    manifest.missing_faces = missing_faces;
    manifest.missing_labels = missing_labels;
    manifest.skipped_images = skipped;
    Ok(manifest)
}

/// Decodes an image into an `[H, W, 3]` tensor of 0–255 values.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .into_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(f64::from).collect();
    Tensor::new(vec![h as usize, w as usize, 3], data)
}

/// Writes an `[H, W, 3]` tensor as binary PPM, rounding and clamping to 0–255.
pub fn write_ppm(path: &Path, image: &Tensor) -> Result<()> {
    let (h, w, c) = image
        .hwc()
        .filter(|&(_, _, c)| c == 3)
        .ok_or_else(|| Error::dim("write_ppm", "[H, W, 3]", format!("{:?}", image.shape())))?;
    debug_assert_eq!(c, 3);
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    bytes.extend(image.data().iter().map(|v| v.round().clamp(0.0, 255.0) as u8));
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::sidecar::{write_descriptors, write_faces};

    fn put_image(path: &Path) {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        write_ppm(path, &Tensor::from_fn(&[6, 5, 3], |i| (i * 7 % 256) as f64)).unwrap();
    }

    #[test]
    fn ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ppm");
        let img = Tensor::from_fn(&[4, 7, 3], |i| (i * 3 % 256) as f64);
        write_ppm(&path, &img).unwrap();
        assert_eq!(load_image(&path).unwrap(), img);
    }

    #[test]
    fn positive_only_split() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["c", "a", "b"] {
            put_image(&dir.path().join("train/positive").join(format!("{name}.ppm")));
        }
        let m = load_dataset(dir.path(), "train").unwrap();
        assert_eq!(m.class_counts(), [3, 0, 0]);
        let ids: Vec<&str> = m.records.iter().map(|r| r.image_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!((m.missing_faces, m.missing_labels), (3, 3));
    }

    #[test]
    fn sidecars_are_attached() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("val/negative/x.ppm");
        put_image(&img);
        write_faces(&sidecar_path(&img, FACES_EXT), &[FaceBox::new(0, 0, 2, 2), FaceBox::new(1, 1, 3, 3)]).unwrap();
        write_descriptors(&sidecar_path(&img, LABELS_EXT), &["Protest".to_string()].into()).unwrap();
        let m = load_dataset(dir.path(), "val").unwrap();
        let r = &m.records[0];
        assert_eq!(r.face_boxes.len(), 2);
        assert_eq!(r.label, Some(Emotion::Negative));
        assert!(r.descriptors.contains("protest"));
        assert_eq!((m.missing_faces, m.missing_labels), (0, 0));
    }

    #[test]
    fn unlabeled_and_unreadable() {
        let dir = tempfile::tempdir().unwrap();
        put_image(&dir.path().join("test/loose.ppm"));
        fs::write(dir.path().join("test/broken.ppm"), b"not an image").unwrap();
        let m = load_dataset(dir.path(), "test").unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.records[0].label, None);
        assert_eq!(m.skipped_images, 1);
    }

    #[test]
    fn empty_or_missing_split() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path(), "train"), Err(Error::Data(_))));
        fs::create_dir_all(dir.path().join("train/positive")).unwrap();
        assert!(matches!(load_dataset(dir.path(), "train"), Err(Error::Data(_))));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        put_image(&dir.path().join("train/positive/same.ppm"));
        put_image(&dir.path().join("train/neutral/same.ppm"));
        assert!(matches!(load_dataset(dir.path(), "train"), Err(Error::Data(_))));
    }
}
