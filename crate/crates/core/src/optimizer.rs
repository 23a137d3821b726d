//! Pixel-space Adam optimization, stage by stage from coarse to fine.

use std::path::Path;
use std::time::Instant;

use ndarray::{Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::backbones::FaceBox;
use crate::backbones::graph::sigmoid;
use crate::config::{LossWeights, ObjectiveConfig, PixelParam, StyleTransferConfig};
use crate::error::{Error, Result};
use crate::face::{locate_faces, rescale_boxes};
use crate::image::{init_result, resize, resize_exact, Image, ResizeKernel, ResizePurpose};
use crate::losses::LossBreakdown;
use crate::objective::{ModelSet, Objective};

/// Adam state over a `(3, H, W)` parameter tensor.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Array3<f64>,
    v: Array3<f64>,
    t: i32,
}

impl Adam {
    pub fn new(shape: (usize, usize, usize), learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: Array3::zeros(shape),
            v: Array3::zeros(shape),
            t: 0,
        }
    }

    /// One descent step on `params` in place.
    pub fn step(&mut self, params: &mut Array3<f64>, grad: &Array3<f64>) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let (lr, eps) = (self.learning_rate, self.epsilon);
        Zip::from(params)
            .and(&mut self.m)
            .and(&mut self.v)
            .and(grad)
            .for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub resolution: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub weights: LossWeights,
    pub pixel_param: PixelParam,
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("a stage needs at least one step".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// Loss history of one stage; `history[i]` is the loss before update `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub resolution: usize,
    pub height: usize,
    pub width: usize,
    pub learning_rate: f64,
    pub history: Vec<LossBreakdown>,
    pub final_loss: LossBreakdown,
    pub wall_clock_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    pub seed: u64,
    /// Face boxes in content-image coordinates, in concatenation order.
    pub face_boxes: Vec<FaceBox>,
    pub stages: Vec<StageTrace>,
}

impl OptimizationTrace {
    pub fn resolutions(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.resolution).collect()
    }

    pub fn final_loss(&self) -> Option<LossBreakdown> {
        self.stages.last().map(|s| s.final_loss)
    }

    pub fn wall_clock_secs(&self) -> f64 {
        self.stages.iter().map(|s| s.wall_clock_secs).sum()
    }
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

fn check_finite(b: &LossBreakdown, grad: &Array3<f64>, stage: usize, step: usize) -> Result<()> {
    if b.is_finite() && grad.iter().all(|g| g.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss { stage, step })
    }
}

/// Optimizes `x0` against the objective for `cfg.steps` updates.
///
/// `content` and `x0` must share a size; `boxes` are in their coordinates.
/// `stage` only labels errors.
#[allow(clippy::too_many_arguments)]
pub fn optimize_stage(
    x0: &Image,
    content: &Image,
    style: &Image,
    cfg: &StageConfig,
    objective: &ObjectiveConfig,
    models: &ModelSet,
    boxes: &[FaceBox],
    stage: usize,
) -> Result<(Image, StageTrace)> {
    cfg.validate()?;
    if (x0.height(), x0.width()) != (content.height(), content.width()) {
        return Err(Error::ShapeMismatch(format!(
            "initial image is {}x{}, content is {}x{}",
            x0.height(),
            x0.width(),
            content.height(),
            content.width()
        )));
    }
    let started = Instant::now();
    let mut obj_cfg = objective.clone();
    obj_cfg.weights = cfg.weights;
    let obj = Objective::new(models, &obj_cfg, content, style, boxes)?;

    let mut params = match cfg.pixel_param {
        PixelParam::Clamp => x0.as_array().clone(),
        PixelParam::Sigmoid => x0.as_array().mapv(logit),
    };
    let pixels = |p: &Array3<f64>| match cfg.pixel_param {
        PixelParam::Clamp => p.clone(),
        PixelParam::Sigmoid => p.mapv(sigmoid),
    };
    let mut adam = Adam::new(params.dim(), cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.steps);
    let mut x = x0.as_array().clone();
    for step in 0..cfg.steps {
        let (b, mut grad) = obj.evaluate(&x, true)?;
        check_finite(&b, &grad, stage, step)?;
        history.push(b);
        if cfg.pixel_param == PixelParam::Sigmoid {
            Zip::from(&mut grad).and(&x).for_each(|g, &s| *g *= s * (1.0 - s));
        }
        adam.step(&mut params, &grad);
        if cfg.pixel_param == PixelParam::Clamp {
            params.mapv_inplace(|p| p.clamp(0.0, 1.0));
        }
        x = pixels(&params);
    }
    let (final_loss, _) = obj.evaluate(&x, false)?;
    if !final_loss.is_finite() {
        return Err(Error::NonFiniteLoss { stage, step: cfg.steps });
    }
    let out = Image::from_array(x)?;
    log::info!(
        "stage {stage} at {}x{}: loss {:.6} -> {:.6}",
        out.height(),
        out.width(),
        history.first().map_or(f64::NAN, |b| b.total),
        final_loss.total
    );
    let trace = StageTrace {
        resolution: cfg.resolution,
        height: out.height(),
        width: out.width(),
        learning_rate: cfg.learning_rate,
        history,
        final_loss,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok((out, trace))
}

fn resize_to(img: &Image, long_side: usize) -> Result<Image> {
    let purpose = if long_side < img.long_side() {
        ResizePurpose::Downsample
    } else {
        ResizePurpose::Upsample
    };
    resize(img, long_side, purpose)
}

/// Face boxes of `content` when the configuration uses the facial terms.
pub fn pipeline_faces(content: &Image, config: &StyleTransferConfig, models: &ModelSet) -> Result<Vec<FaceBox>> {
    if !config.weights().faces_enabled() {
        return Ok(Vec::new());
    }
    let boxes = locate_faces(content, models.detector.as_ref(), config.min_face_confidence)?;
    if boxes.is_empty() {
        log::warn!("no faces found in the content image; facial terms are disabled for this run");
    }
    Ok(boxes)
}

/// Coarse-to-fine optimization over the configured resolution schedule.
///
/// Faces are detected once on `content` and rescaled for every stage. The
/// result's long side equals the final resolution.
pub fn run_pipeline(content: &Image, style: &Image, config: &StyleTransferConfig, models: &ModelSet) -> Result<(Image, OptimizationTrace)> {
    config.validate()?;
    let boxes = pipeline_faces(content, config, models)?;
    run_pipeline_with_faces(content, style, config, models, &boxes)
}

/// [`run_pipeline`] with caller-supplied boxes in `content` coordinates.
pub fn run_pipeline_with_faces(
    content: &Image,
    style: &Image,
    config: &StyleTransferConfig,
    models: &ModelSet,
    boxes: &[FaceBox],
) -> Result<(Image, OptimizationTrace)> {
    config.validate()?;
    let schedule = config.schedule()?;
    let objective = config.objective()?;
    let full = (content.height(), content.width());
    let mut stages = Vec::with_capacity(schedule.len());
    let mut current: Option<Image> = None;
    let mut lr = config.learning_rate;
    for (index, res) in schedule.stages() {
        let c = resize_to(content, res)?;
        let s = resize_to(style, res)?;
        let x0 = match current.take() {
            None => init_result(&c, config.init, config.seed),
            Some(prev) => resize_exact(&prev, c.height(), c.width(), ResizeKernel::Bicubic)?,
        };
        let stage_boxes = rescale_boxes(boxes, full, (c.height(), c.width()));
        let stage_cfg = StageConfig {
            resolution: res,
            steps: config.steps_per_stage,
            learning_rate: lr,
            weights: config.weights(),
            pixel_param: config.pixel_param,
        };
        let (x, trace) = optimize_stage(&x0, &c, &s, &stage_cfg, &objective, models, &stage_boxes, index)?;
        if let Some(dir) = &config.snapshot_dir {
            write_snapshot(dir, index, res, &x)?;
        }
        stages.push(trace);
        current = Some(x);
        lr *= config.lr_decay;
    }
    let trace = OptimizationTrace {
        seed: config.seed,
        face_boxes: boxes.to_vec(),
        stages,
    };
    Ok((current.expect("schedule is never empty"), trace))
}

fn write_snapshot(dir: &Path, stage: usize, res: usize, img: &Image) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    img.save(dir.join(format!("stage{stage:02}_{res}.png")))
}
