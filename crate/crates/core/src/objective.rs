//! The weighted total objective with cached targets.

use ndarray::Array3;

use crate::backbones::{
    load_pretrained, stub_classifier, stub_face_mesher, stub_face_recognizer, Backbone, ColorBlobDetector, ConstantMatting, FaceBox,
    FaceDetector, FeatureSet, Matting, Pretrained, Registry,
};
use crate::config::ObjectiveConfig;
use crate::error::{Error, Result};
use crate::face::{FaceModels, FaceTargets};
use crate::image::Image;
use crate::losses::{content_loss_grad, style_loss_from_targets, style_targets, tv_loss_grad, LossBreakdown};

/// Every network a run may need.
pub struct ModelSet {
    pub classifier: Backbone,
    pub faces: FaceModels,
    pub detector: Box<dyn FaceDetector>,
    pub matting: Box<dyn Matting>,
}

impl std::fmt::Debug for ModelSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSet")
            .field("classifier", &self.classifier.kind())
            .field("recognizer", &self.faces.recognizer.kind())
            .field("mesher", &self.faces.mesher.kind())
            .finish_non_exhaustive()
    }
}

impl ModelSet {
    /// Small deterministic networks with fixed seeded weights, a skin-colour
    /// blob detector and an all-foreground matte.
    pub fn stub(seed: u64) -> Self {
        Self {
            classifier: stub_classifier(seed),
            faces: FaceModels::new(stub_face_recognizer(seed.wrapping_add(1)), stub_face_mesher(seed.wrapping_add(2))),
            detector: Box::new(ColorBlobDetector::default()),
            matting: Box::new(ConstantMatting(1.0)),
        }
    }

    /// All five pretrained networks from `registry`.
    pub fn pretrained(registry: &Registry) -> Result<Self> {
        let features = |kind: &str| -> Result<Backbone> {
            load_pretrained(kind, registry)?
                .into_backbone()
                .ok_or_else(|| Error::Model(format!("`{kind}` is not a feature network")))
        };
        let classifier = features("vgg19")?;
        let faces = FaceModels::new(features("face_recognizer")?, features("face_mesher")?);
        let detector: Box<dyn FaceDetector> = match load_pretrained("face_detector", registry)? {
            Pretrained::Detector(d) => Box::new(d),
            _ => return Err(Error::Model("`face_detector` entry is not a detector".into())),
        };
        let matting: Box<dyn Matting> = match load_pretrained("matting", registry)? {
            Pretrained::Matting(m) => Box::new(m),
            _ => return Err(Error::Model("`matting` entry is not a matting network".into())),
        };
        Ok(Self {
            classifier,
            faces,
            detector,
            matting,
        })
    }

    pub fn with_recognizer_crop(mut self, size: usize) -> Self {
        self.faces.recognizer_crop = size;
        self
    }
}

/// Objective for one stage: content, style and face targets are computed
/// once; [`Objective::evaluate`] only runs the networks on the result.
pub struct Objective<'a> {
    models: &'a ModelSet,
    cfg: &'a ObjectiveConfig,
    content_features: FeatureSet,
    style_grams: FeatureSet,
    faces: Option<FaceTargets>,
    layers: Vec<String>,
}

impl<'a> Objective<'a> {
    /// `boxes` are in the coordinates of `content`. Terms with zero weight
    /// are neither precomputed nor evaluated.
    pub fn new(models: &'a ModelSet, cfg: &'a ObjectiveConfig, content: &Image, style: &Image, boxes: &[FaceBox]) -> Result<Self> {
        let w = cfg.weights;
        let mut layers: Vec<String> = Vec::new();
        let mut add = |names: Vec<&str>| {
            for n in names {
                if !layers.iter().any(|l| l == n) {
                    layers.push(n.to_string());
                }
            }
        };
        if w.alpha > 0.0 {
            add(cfg.content_layers.names());
        }
        if w.beta > 0.0 {
            add(cfg.style_layers.names());
        }
        let content_features = if w.alpha > 0.0 {
            models.classifier.extract_features(content, &cfg.content_layers.names())?
        } else {
            FeatureSet::new()
        };
        let style_grams = if w.beta > 0.0 {
            let feats = models.classifier.extract_features(style, &cfg.style_layers.names())?;
            style_targets(&feats, &cfg.style_layers, cfg.style_variant)?
        } else {
            FeatureSet::new()
        };
        let faces = if w.faces_enabled() && !boxes.is_empty() {
            Some(FaceTargets::new(content, boxes, &models.faces, &cfg.facial_layers, w.delta, w.eta)?)
        } else {
            None
        };
        Ok(Self {
            models,
            cfg,
            content_features,
            style_grams,
            faces,
            layers,
        })
    }

    /// Loss breakdown at `x` (`(3, H, W)` pixels) and, when `with_grad`, the
    /// gradient of the total with respect to `x`.
    pub fn evaluate(&self, x: &Array3<f64>, with_grad: bool) -> Result<(LossBreakdown, Array3<f64>)> {
        let w = self.cfg.weights;
        let mut grad = Array3::zeros(x.dim());
        let (mut content, mut style, mut tv) = (0.0, 0.0, 0.0);

        if !self.layers.is_empty() {
            let names: Vec<&str> = self.layers.iter().map(String::as_str).collect();
            let eval = self.models.classifier.forward_array(x, &names)?;
            let mut seeds = FeatureSet::new();
            if w.alpha > 0.0 {
                let (v, g) = content_loss_grad(&self.content_features, eval.features(), &self.cfg.content_layers, self.cfg.content_mode)?;
                content = v;
                accumulate(&mut seeds, g, w.alpha);
            }
            if w.beta > 0.0 {
                let (v, g) = style_loss_from_targets(&self.style_grams, eval.features(), &self.cfg.style_layers, self.cfg.style_variant)?;
                style = v;
                accumulate(&mut seeds, g, w.beta);
            }
            if with_grad {
                grad += &eval.backward(&seeds)?;
            }
        }
        if w.gamma > 0.0 {
            let (v, g) = tv_loss_grad(x.view())?;
            tv = v;
            if with_grad {
                grad.scaled_add(w.gamma, &g);
            }
        }
        let (mut ff, mut fm) = (0.0, 0.0);
        if let Some(faces) = &self.faces {
            let (a, b, g) = faces.evaluate(x, &self.models.faces, &self.cfg.facial_layers, with_grad)?;
            ff = a;
            fm = b;
            if with_grad {
                grad += &g;
            }
        }
        Ok((LossBreakdown::combine(w.alpha, w.beta, w.gamma, content, style, tv, ff, fm), grad))
    }
}

fn accumulate(seeds: &mut FeatureSet, grads: FeatureSet, scale: f64) {
    for (name, g) in grads.iter() {
        let g = g * scale;
        let merged = match seeds.get(name) {
            Some(a) => a + &g,
            None => g,
        };
        seeds.insert(name, merged);
    }
}

/// Breakdown of the objective at `x`; `content`, `style` and `x` share a
/// stage resolution only as far as the networks require.
pub fn total_loss(content: &Image, style: &Image, x: &Image, models: &ModelSet, cfg: &ObjectiveConfig, boxes: &[FaceBox]) -> Result<LossBreakdown> {
    let obj = Objective::new(models, cfg, content, style, boxes)?;
    Ok(obj.evaluate(x.as_array(), false)?.0)
}
