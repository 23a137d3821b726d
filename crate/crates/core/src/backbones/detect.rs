use std::collections::VecDeque;

use super::graph::sigmoid;
use super::{Backbone, FaceBox};
use crate::error::{Error, Result};
use crate::image::{resize_exact, Image, ResizeKernel};

/// Face localization. Not differentiable; only ever run on the content image.
pub trait FaceDetector: Send + Sync {
    /// Raw detections in image pixel coordinates, any order.
    fn detect(&self, img: &Image) -> Result<Vec<FaceBox>>;
}

/// Detections at or above `min_confidence`, clipped to the image and sorted
/// by `x`, then `y`.
pub fn detect_faces(detector: &dyn FaceDetector, img: &Image, min_confidence: f64) -> Result<Vec<FaceBox>> {
    let mut boxes: Vec<FaceBox> = detector
        .detect(img)?
        .into_iter()
        .filter(|b| b.confidence >= min_confidence)
        .filter_map(|b| b.clipped(img.width(), img.height()))
        .collect();
    sort_boxes(&mut boxes);
    Ok(boxes)
}

pub(crate) fn sort_boxes(boxes: &mut [FaceBox]) {
    boxes.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
}

/// Greedy suppression: keeps the most confident box of every overlapping group.
pub fn non_max_suppression(mut boxes: Vec<FaceBox>, iou_threshold: f64) -> Vec<FaceBox> {
    boxes.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut kept: Vec<FaceBox> = Vec::new();
    for b in boxes {
        if kept.iter().all(|k| k.iou(&b) <= iou_threshold) {
            kept.push(b);
        }
    }
    kept
}

/// Deterministic stand-in detector: every 4-connected region whose colour is
/// within `tolerance` (per channel) of `key` and covers at least `min_area`
/// pixels is a face. Confidence is the fraction of the bounding box the
/// region fills.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorBlobDetector {
    pub key: [f64; 3],
    pub tolerance: f64,
    pub min_area: usize,
}

impl ColorBlobDetector {
    pub const SKIN: [f64; 3] = [0.93, 0.76, 0.64];
}

impl Default for ColorBlobDetector {
    fn default() -> Self {
        Self {
            key: Self::SKIN,
            tolerance: 0.1,
            min_area: 16,
        }
    }
}

impl FaceDetector for ColorBlobDetector {
    fn detect(&self, img: &Image) -> Result<Vec<FaceBox>> {
        let (h, w) = (img.height(), img.width());
        let arr = img.as_array();
        let hit = |y: usize, x: usize| (0..3).all(|c| (arr[[c, y, x]] - self.key[c]).abs() <= self.tolerance);
        let mut seen = vec![false; h * w];
        let mut out = Vec::new();
        let mut queue = VecDeque::new();
        for y0 in 0..h {
            for x0 in 0..w {
                if seen[y0 * w + x0] || !hit(y0, x0) {
                    continue;
                }
                seen[y0 * w + x0] = true;
                queue.push_back((y0, x0));
                let (mut area, mut min_x, mut min_y, mut max_x, mut max_y) = (0usize, x0, y0, x0, y0);
                while let Some((y, x)) = queue.pop_front() {
                    area += 1;
                    min_x = min_x.min(x);
                    max_x = max_x.max(x);
                    min_y = min_y.min(y);
                    max_y = max_y.max(y);
                    let neighbours = [
                        (y.wrapping_sub(1), x),
                        (y + 1, x),
                        (y, x.wrapping_sub(1)),
                        (y, x + 1),
                    ];
                    for (ny, nx) in neighbours {
                        if ny < h && nx < w && !seen[ny * w + nx] && hit(ny, nx) {
                            seen[ny * w + nx] = true;
                            queue.push_back((ny, nx));
                        }
                    }
                }
                if area >= self.min_area {
                    let bw = (max_x - min_x + 1) as f64;
                    let bh = (max_y - min_y + 1) as f64;
                    out.push(FaceBox::new(min_x as f64, min_y as f64, bw, bh, area as f64 / (bw * bh)));
                }
            }
        }
        Ok(out)
    }
}

/// Dense single-shot detector on top of a network graph.
///
/// The network exposes a `scores` layer (1 channel of logits per cell) and a
/// `boxes` layer (4 channels: left, top, right, bottom distances from the cell
/// centre in network-input pixels). Cells are decoded, suppressed with NMS
/// and mapped back to image coordinates.
#[derive(Clone, Debug)]
pub struct NetworkDetector {
    network: Backbone,
    input: (usize, usize),
    candidate_threshold: f64,
    nms_iou: f64,
}

impl NetworkDetector {
    pub const SCORES: &'static str = "scores";
    pub const BOXES: &'static str = "boxes";

    pub fn new(network: Backbone, input: (usize, usize)) -> Result<Self> {
        for l in [Self::SCORES, Self::BOXES] {
            if !network.has_layer(l) {
                return Err(Error::Model(format!("detector network lacks `{l}` output")));
            }
        }
        Ok(Self {
            network,
            input,
            candidate_threshold: 0.05,
            nms_iou: 0.3,
        })
    }
}

impl FaceDetector for NetworkDetector {
    fn detect(&self, img: &Image) -> Result<Vec<FaceBox>> {
        let (ih, iw) = self.input;
        let resized = resize_exact(img, ih, iw, ResizeKernel::Area)?;
        let feats = self.network.extract_features(&resized, &[Self::SCORES, Self::BOXES])?;
        let scores = feats.get(Self::SCORES).expect("requested");
        let boxes = feats.get(Self::BOXES).expect("requested");
        if scores.nrows() != 1 || boxes.nrows() != 4 || boxes.ncols() != scores.ncols() {
            return Err(Error::Model("detector outputs have unexpected shapes".into()));
        }
        let cells = scores.ncols();
        // Square-ish grid assumption: recover the grid from the input aspect.
        let gw = ((cells as f64 * iw as f64 / ih as f64).sqrt().round() as usize).max(1);
        let gh = cells / gw;
        if gh * gw != cells {
            return Err(Error::Model(format!("cannot infer detector grid from {cells} cells")));
        }
        let (sy, sx) = (ih as f64 / gh as f64, iw as f64 / gw as f64);
        let (to_x, to_y) = (img.width() as f64 / iw as f64, img.height() as f64 / ih as f64);
        let mut cand = Vec::new();
        for cell in 0..cells {
            let p = sigmoid(scores[[0, cell]]);
            if p < self.candidate_threshold {
                continue;
            }
            let (gy, gx) = (cell / gw, cell % gw);
            let (cy, cx) = ((gy as f64 + 0.5) * sy, (gx as f64 + 0.5) * sx);
            let x0 = cx - boxes[[0, cell]];
            let y0 = cy - boxes[[1, cell]];
            let x1 = cx + boxes[[2, cell]];
            let y1 = cy + boxes[[3, cell]];
            if x1 > x0 && y1 > y0 {
                cand.push(FaceBox::new(x0 * to_x, y0 * to_y, (x1 - x0) * to_x, (y1 - y0) * to_y, p));
            }
        }
        Ok(non_max_suppression(cand, self.nms_iou))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_face_fixture() -> Image {
        Image::from_fn(120, 400, |y, x| {
            let in_face = |cx: f64, cy: f64| {
                let (dx, dy) = ((x as f64 - cx) / 25.0, (y as f64 - cy) / 32.0);
                dx * dx + dy * dy <= 1.0
            };
            if in_face(300.0, 60.0) || in_face(40.0, 55.0) {
                ColorBlobDetector::SKIN
            } else {
                [0.2, 0.3, 0.5]
            }
        })
    }

    #[test]
    fn blank_image_has_no_faces() {
        let img = Image::filled(50, 50, [0.1, 0.2, 0.3]);
        assert!(detect_faces(&ColorBlobDetector::default(), &img, 0.0).unwrap().is_empty());
    }

    #[test]
    fn two_faces_sorted_left_to_right() {
        let img = two_face_fixture();
        let boxes = detect_faces(&ColorBlobDetector::default(), &img, 0.5).unwrap();
        assert_eq!(boxes.len(), 2);
        assert!(boxes[0].x < boxes[1].x);
        assert!((boxes[0].x - 15.0).abs() <= 1.0);
        assert!((boxes[1].x - 275.0).abs() <= 1.0);
        for b in &boxes {
            assert!(b.confidence >= 0.5 && b.confidence <= 1.0);
        }
    }

    #[test]
    fn threshold_above_all_confidences_yields_nothing() {
        let img = two_face_fixture();
        assert!(detect_faces(&ColorBlobDetector::default(), &img, 1.0 + 1e-9).unwrap().is_empty());
    }

    #[test]
    fn nms_keeps_most_confident() {
        let boxes = vec![
            FaceBox::new(0.0, 0.0, 10.0, 10.0, 0.6),
            FaceBox::new(1.0, 1.0, 10.0, 10.0, 0.9),
            FaceBox::new(50.0, 50.0, 10.0, 10.0, 0.7),
        ];
        let kept = non_max_suppression(boxes, 0.3);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].confidence, 0.9);
    }
}
