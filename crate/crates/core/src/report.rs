//! Run reports and the identity-similarity metric.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbones::{Backbone, FaceBox};
use crate::config::StyleTransferConfig;
use crate::error::{Error, Result};
use crate::face::{crop_faces_sized, locate_faces};
use crate::image::Image;
use crate::losses::LossBreakdown;
use crate::objective::ModelSet;
use crate::optimizer::{run_pipeline_with_faces, OptimizationTrace};
use crate::preprocess::prepare_content;

/// Cosine of the angle between `a` and `b`; zero when either is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("embeddings of length {} and {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Mean cosine similarity of recognizer embeddings between matching
/// content and result face crops. `boxes` are in content coordinates and are
/// rescaled when `result` has another size.
pub fn identity_similarity(content: &Image, result: &Image, recognizer: &Backbone, boxes: &[FaceBox], crop: usize) -> Result<f64> {
    if boxes.is_empty() {
        return Err(Error::NoFaces);
    }
    let result_boxes = crate::face::rescale_boxes(boxes, (content.height(), content.width()), (result.height(), result.width()));
    if result_boxes.len() != boxes.len() {
        return Err(Error::InvalidArgument("face boxes do not map onto the result image".into()));
    }
    let c = crop_faces_sized(content, boxes, crop)?;
    let r = crop_faces_sized(result, &result_boxes, crop)?;
    let mut sims = Vec::with_capacity(boxes.len());
    for (a, b) in c.crops().iter().zip(r.crops()) {
        sims.push(cosine(&recognizer.embedding(a)?, &recognizer.embedding(b)?)?);
    }
    Ok(mean(&sims))
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sidecar written next to every result image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub final_loss: LossBreakdown,
    /// Mean recognizer-embedding cosine between content and result faces;
    /// `None` when no face was found.
    pub identity_similarity: Option<f64>,
    pub stage_resolutions: Vec<usize>,
    pub output_size: [usize; 2],
    /// Faces located on the content image, in content coordinates.
    pub face_boxes: Vec<FaceBox>,
    pub wall_clock_secs: f64,
    pub config: StyleTransferConfig,
    pub trace: Option<OptimizationTrace>,
}

impl RunReport {
    pub fn new(config: &StyleTransferConfig, result: &Image, trace: &OptimizationTrace, identity_similarity: Option<f64>, with_trace: bool) -> Self {
        Self {
            method: config.preset.to_string(),
            final_loss: trace.final_loss().unwrap_or_default(),
            identity_similarity,
            stage_resolutions: trace.resolutions(),
            output_size: [result.height(), result.width()],
            face_boxes: trace.face_boxes.clone(),
            wall_clock_secs: trace.wall_clock_secs(),
            config: config.clone(),
            trace: with_trace.then(|| trace.clone()),
        }
    }

    /// Copy with every wall-clock field zeroed, for run-to-run comparison.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.wall_clock_secs = 0.0;
        if let Some(t) = &mut r.trace {
            for s in &mut t.stages {
                s.wall_clock_secs = 0.0;
            }
        }
        r
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Preprocesses `content`, runs the pipeline and measures identity
/// similarity on the faces of the prepared content.
///
/// Faces are located even when the facial terms are off, so methods can be
/// compared on the same boxes.
pub fn run_method(content: &Image, style: &Image, config: &StyleTransferConfig, models: &ModelSet) -> Result<(Image, RunReport)> {
    config.validate()?;
    let prepared = prepare_content(content, config, models.matting.as_ref())?;
    let boxes = locate_faces(&prepared, models.detector.as_ref(), config.min_face_confidence)?;
    let used: &[FaceBox] = if config.weights().faces_enabled() { &boxes } else { &[] };
    if used.is_empty() && config.weights().faces_enabled() {
        log::warn!("no faces found in the content image; facial terms are disabled for this run");
    }
    let (result, trace) = run_pipeline_with_faces(&prepared, style, config, models, used)?;
    let similarity = if boxes.is_empty() {
        None
    } else {
        Some(identity_similarity(&prepared, &result, &models.faces.recognizer, &boxes, config.recognizer_crop)?)
    };
    let mut report = RunReport::new(config, &result, &trace, similarity, true);
    report.face_boxes = boxes;
    Ok((result, report))
}
