//! Plain-text annotation files stored next to each image.
//!
//! `<id>.faces` holds one box per line as `x=<int> y=<int> w=<int> h=<int>`;
//! `<id>.labels` holds one descriptor per line. In both, blank lines and lines
//! starting with `#` are ignored.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use super::dataset::SampleRecord;
use crate::bayes::normalize_descriptor;
use crate::error::{Error, Result};
use crate::facepath::FaceBox;

pub const FACES_EXT: &str = "faces";
pub const LABELS_EXT: &str = "labels";

/// Source of face boxes and scene descriptors for an image.
///
/// `Ok(None)` means the source has no annotation for the image, which callers
/// treat as zero faces or no descriptors.
pub trait AnnotationProvider {
    fn face_boxes(&self, record: &SampleRecord) -> Result<Option<Vec<FaceBox>>>;
    fn descriptors(&self, record: &SampleRecord) -> Result<Option<BTreeSet<String>>>;
}

/// Uses the annotations already stored in the record.
#[derive(Debug, Clone, Copy, Default)]
pub struct RecordAnnotations;

impl AnnotationProvider for RecordAnnotations {
    fn face_boxes(&self, record: &SampleRecord) -> Result<Option<Vec<FaceBox>>> {
        Ok(Some(record.face_boxes.clone()))
    }

    fn descriptors(&self, record: &SampleRecord) -> Result<Option<BTreeSet<String>>> {
        Ok(Some(record.descriptors.clone()))
    }
}

/// Reads `.faces` / `.labels` files next to the record's image.
#[derive(Debug, Clone, Copy, Default)]
pub struct SidecarAnnotations;

impl AnnotationProvider for SidecarAnnotations {
    fn face_boxes(&self, record: &SampleRecord) -> Result<Option<Vec<FaceBox>>> {
        read_faces(&sidecar_path(&record.image_path, FACES_EXT))
    }

    fn descriptors(&self, record: &SampleRecord) -> Result<Option<BTreeSet<String>>> {
        read_descriptors(&sidecar_path(&record.image_path, LABELS_EXT))
    }
}

/// `dir/<stem>.<ext>` for an image at `dir/<stem>.<img-ext>`.
pub fn sidecar_path(image: &Path, ext: &str) -> PathBuf {
    image.with_extension(ext)
}

fn read_optional(path: &Path) -> Result<Option<String>> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(Some(s)),
        Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Parses `.faces` text.
pub fn parse_faces(text: &str) -> Result<Vec<FaceBox>> {
    content_lines(text)
        .map(|(n, line)| {
            let mut fields = [None; 4];
            for token in line.split_whitespace() {
                let (key, value) = token
                    .split_once('=')
                    .ok_or_else(|| Error::Data(format!("line {n}: expected key=value, got '{token}'")))?;
                let slot = match key {
                    "x" => 0,
                    "y" => 1,
                    "w" => 2,
                    "h" => 3,
                    _ => return Err(Error::Data(format!("line {n}: unknown face field '{key}'"))),
                };
                let v: i64 = value
                    .parse()
                    .map_err(|_| Error::Data(format!("line {n}: '{value}' is not an integer")))?;
                if fields[slot].replace(v).is_some() {
                    return Err(Error::Data(format!("line {n}: field '{key}' repeated")));
                }
            }
            match fields {
                [Some(x), Some(y), Some(w), Some(h)] => Ok(FaceBox::new(x, y, w, h)),
                _ => Err(Error::Data(format!("line {n}: a face needs x, y, w and h"))),
            }
        })
        .collect()
}

/// Renders boxes in `.faces` format.
pub fn format_faces(boxes: &[FaceBox]) -> String {
    let mut out = String::new();
    for b in boxes {
        let _ = writeln!(out, "x={} y={} w={} h={}", b.x, b.y, b.w, b.h);
    }
    out
}

/// Parses `.labels` text into normalized descriptors.
pub fn parse_descriptors(text: &str) -> BTreeSet<String> {
    content_lines(text).map(|(_, l)| normalize_descriptor(l)).collect()
}

/// `None` when the file does not exist.
pub fn read_faces(path: &Path) -> Result<Option<Vec<FaceBox>>> {
    read_optional(path)?
        .map(|t| parse_faces(&t).map_err(|e| e.context(path.display().to_string())))
        .transpose()
}

/// `None` when the file does not exist.
pub fn read_descriptors(path: &Path) -> Result<Option<BTreeSet<String>>> {
    Ok(read_optional(path)?.map(|t| parse_descriptors(&t)))
}

pub fn write_faces(path: &Path, boxes: &[FaceBox]) -> Result<()> {
    fs::write(path, format_faces(boxes)).map_err(|e| Error::io(path, e))
}

pub fn write_descriptors(path: &Path, descriptors: &BTreeSet<String>) -> Result<()> {
    let mut text = String::new();
    for d in descriptors {
        text.push_str(d);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
