//! Bottom-up path: face crops are cut from the image, resized to the network
//! input, min-max normalized, scored by the CNN and averaged into one group
//! prediction.

use crate::data_io::{load_image, AnnotationProvider, SampleRecord};
use crate::emotion::{Emotion, EmotionDistribution, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::nn::{Network, CROP_SIZE};
use crate::tensor::Tensor;

/// Axis-aligned face rectangle in image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FaceBox {
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
}

impl FaceBox {
    pub fn new(x: i64, y: i64, w: i64, h: i64) -> Self {
        FaceBox { x, y, w, h }
    }

    /// Intersection with a `width × height` image; `SkipFace` when nothing is left.
    pub fn clamp_to(self, width: usize, height: usize) -> Result<FaceBox> {
        let x0 = self.x.max(0);
        let y0 = self.y.max(0);
        let x1 = self.x.saturating_add(self.w).min(width as i64);
        let y1 = self.y.saturating_add(self.h).min(height as i64);
        if self.w < 1 || self.h < 1 || x1 <= x0 || y1 <= y0 {
            return Err(Error::SkipFace {
                x: self.x,
                y: self.y,
                w: self.w,
                h: self.h,
                width,
                height,
            });
        }
        Ok(FaceBox::new(x0, y0, x1 - x0, y1 - y0))
    }
}

/// One preprocessed face: `64 × 64 × C` pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceCrop {
    pub pixels: Tensor,
    /// The box actually cropped, after clamping.
    pub source_box: FaceBox,
}

/// The faces found in one image, in annotation order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FaceBatch {
    pub faces: Vec<FaceCrop>,
}

impl FaceBatch {
    /// Number of faces `K`.
    pub fn len(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }
}

/// Bilinear resampling with pixel-centre alignment; resizing to the same size is exact.
pub fn resize_bilinear(image: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w, c) = image
        .hwc()
        .ok_or_else(|| Error::dim("resize_bilinear", "[H, W, C]", format!("{:?}", image.shape())))?;
    let src = image.data();
    let axis = |out: usize, len: usize| -> Vec<(usize, usize, f64)> {
        let scale = len as f64 / out as f64;
        (0..out)
            .map(|d| {
                let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
                let lo = s.floor() as usize;
                let hi = (lo + 1).min(len - 1);
                (lo, hi, s - lo as f64)
            })
            .collect()
    };
    let rows = axis(out_h, h);
    let cols = axis(out_w, w);
    let mut out = vec![0.0; out_h * out_w * c];
    for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
            for ch in 0..c {
                let at = |y: usize, x: usize| src[(y * w + x) * c + ch];
                let top = at(y0, x0) + fx * (at(y0, x1) - at(y0, x0));
                let bottom = at(y1, x0) + fx * (at(y1, x1) - at(y1, x0));
                out[(oy * out_w + ox) * c + ch] = top + fy * (bottom - top);
            }
        }
    }
    Tensor::new(vec![out_h, out_w, c], out)
}

/// `(p - min) / (max - min)` over all values jointly; a constant tensor becomes zeros.
pub fn min_max_normalize(t: &mut Tensor) {
    let (min, max) = t
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = max - min;
    for v in t.data_mut() {
        *v = if range > 0.0 { (*v - min) / range } else { 0.0 };
    }
}

/// Crops `face` from an `[H, W, C]` image, resizes it to 64×64 and min-max normalizes it.
/// Boxes reaching outside the image are clamped (with a warning).
pub fn preprocess(raw: &Tensor, face: FaceBox) -> Result<FaceCrop> {
    let (h, w, c) = raw
        .hwc()
        .ok_or_else(|| Error::dim("preprocess", "[H, W, C]", format!("{:?}", raw.shape())))?;
    let clamped = face.clamp_to(w, h)?;
    if clamped != face {
        log::warn!("face box {face:?} clamped to {clamped:?} ({w}x{h} image)");
    }
    let (x0, y0) = (clamped.x as usize, clamped.y as usize);
    let (cw, ch) = (clamped.w as usize, clamped.h as usize);
    let mut crop = Vec::with_capacity(cw * ch * c);
    for y in y0..y0 + ch {
        crop.extend_from_slice(&raw.data()[(y * w + x0) * c..(y * w + x0 + cw) * c]);
    }
    let crop = Tensor::new(vec![ch, cw, c], crop)?;
    let mut pixels = resize_bilinear(&crop, CROP_SIZE, CROP_SIZE)?;
    min_max_normalize(&mut pixels);
    Ok(FaceCrop {
        pixels,
        source_box: clamped,
    })
}

/// Preprocesses every box, dropping (and logging) boxes that fall outside the image.
pub fn crop_faces(image: &Tensor, boxes: &[FaceBox]) -> Result<FaceBatch> {
    let mut faces = Vec::with_capacity(boxes.len());
    for &b in boxes {
        match preprocess(image, b) {
            Ok(crop) => faces.push(crop),
            Err(e @ Error::SkipFace { .. }) => log::warn!("skipping face: {e}"),
            Err(e) => return Err(e),
        }
    }
    Ok(FaceBatch { faces })
}

/// Loads the record's image and turns the provider's face boxes into crops.
/// A missing annotation yields an empty batch (and a warning).
pub fn face_source_load(record: &SampleRecord, provider: &dyn AnnotationProvider) -> Result<FaceBatch> {
    let Some(boxes) = provider.face_boxes(record)? else {
        log::warn!("{}: no face annotation", record.image_id);
        return Ok(FaceBatch::default());
    };
    if boxes.is_empty() {
        return Ok(FaceBatch::default());
    }
    let image = load_image(&record.image_path)?;
    crop_faces(&image, &boxes).map_err(|e| e.context(format!("image {}", record.image_id)))
}

/// Inference-mode class distribution of every face.
pub fn classify_faces(network: &Network, faces: &FaceBatch) -> Result<Vec<EmotionDistribution>> {
    faces.faces.iter().map(|f| network.predict(&f.pixels)).collect()
}

/// Mean of the per-face distributions and its most probable class.
pub fn aggregate_faces(outputs: &[EmotionDistribution]) -> Result<(Emotion, EmotionDistribution)> {
    if outputs.is_empty() {
        return Err(Error::NoFaces);
    }
    let mut sum = [0.0; NUM_CLASSES];
    for d in outputs {
        for (s, p) in sum.iter_mut().zip(d.probs()) {
            *s += p;
        }
    }
    let k = outputs.len() as f64;
    let mean = EmotionDistribution::new(sum.map(|s| s / k))?;
    Ok((mean.argmax(), mean))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(p: [f64; 3]) -> EmotionDistribution {
        EmotionDistribution::new(p).unwrap()
    }

    #[test]
    fn single_face_passes_through() {
        let (c, m) = aggregate_faces(&[dist([0.2, 0.5, 0.3])]).unwrap();
        assert_eq!(c, Emotion::Neutral);
        assert_eq!(m, dist([0.2, 0.5, 0.3]));
    }

    #[test]
    fn two_face_mean() {
        let (c, m) = aggregate_faces(&[dist([0.7, 0.2, 0.1]), dist([0.2, 0.5, 0.3])]).unwrap();
        assert_eq!(c, Emotion::Positive);
        for (a, e) in m.probs().iter().zip([0.45, 0.35, 0.2]) {
            assert!((a - e).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_faces_tie_to_positive() {
        let u = EmotionDistribution::uniform();
        assert_eq!(aggregate_faces(&[u, u, u]).unwrap().0, Emotion::Positive);
    }

    #[test]
    fn no_faces_signal() {
        assert!(matches!(aggregate_faces(&[]), Err(Error::NoFaces)));
    }

    #[test]
    fn min_max_midpoint() {
        let mut t = Tensor::new(vec![1, 3, 1], vec![10.0, 110.0, 210.0]).unwrap();
        min_max_normalize(&mut t);
        assert_eq!(t.data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn constant_crop_is_zero() {
        let img = Tensor::filled(&[20, 20, 3], 77.0);
        let crop = preprocess(&img, FaceBox::new(2, 2, 10, 10)).unwrap();
        assert!(crop.pixels.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn large_crop_resized() {
        let img = Tensor::from_fn(&[200, 150, 3], |i| (i % 251) as f64);
        let crop = preprocess(&img, FaceBox::new(10, 20, 128, 128)).unwrap();
        assert_eq!(crop.pixels.shape(), &[64, 64, 3]);
        assert!(crop.pixels.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn same_size_resize_is_identity() {
        let img = Tensor::from_fn(&[64, 64, 3], |i| (i as f64 * 0.013).sin());
        assert_eq!(resize_bilinear(&img, 64, 64).unwrap(), img);
    }

    #[test]
    fn downsample_by_two_averages_pairs() {
        let img = Tensor::new(vec![2, 2, 1], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let out = resize_bilinear(&img, 1, 1).unwrap();
        assert!((out.data()[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn out_of_bounds_box_is_clamped() {
        // Left half dark, right half bright; the box hangs off the right edge.
        let img = Tensor::from_fn(&[40, 40, 3], |i| if (i / 3) % 40 < 20 { 0.0 } else { 255.0 });
        let crop = preprocess(&img, FaceBox::new(10, -5, 50, 30)).unwrap();
        assert_eq!(crop.source_box, FaceBox::new(10, 0, 30, 25));
        assert_eq!(crop.pixels.shape(), &[64, 64, 3]);
    }

    #[test]
    fn fully_outside_box_is_skipped() {
        let img = Tensor::zeros(&[10, 10, 3]);
        assert!(matches!(preprocess(&img, FaceBox::new(20, 0, 5, 5)), Err(Error::SkipFace { .. })));
        assert!(matches!(preprocess(&img, FaceBox::new(0, 0, 0, 5)), Err(Error::SkipFace { .. })));
        let batch = crop_faces(&img, &[FaceBox::new(20, 0, 5, 5), FaceBox::new(0, 0, 5, 5)]).unwrap();
        assert_eq!(batch.len(), 1);
    }
}
