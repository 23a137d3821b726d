//! Run configuration and the named method presets.

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::face::FACIAL_LAYERS;
use crate::image::InitStrategy;
use crate::losses::{ContentMode, LayerWeights, StyleVariant, WeightScheme};
use crate::schedule::ResolutionSchedule;

pub const STYLE_LAYERS: [&str; 5] = ["relu1_1", "relu2_1", "relu3_1", "relu4_1", "relu5_1"];
pub const CONTENT_LAYER: &str = "relu4_2";
pub const CROWSON_STYLE_WEIGHTS: [f64; 5] = [256.0, 64.0, 16.0, 4.0, 1.0];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Gatys,
    Crowson,
    #[default]
    Ps,
    Custom,
}

impl Preset {
    pub const COMPARED: [Preset; 3] = [Preset::Gatys, Preset::Crowson, Preset::Ps];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Gatys => "gatys",
            Preset::Crowson => "crowson",
            Preset::Ps => "ps",
            Preset::Custom => "custom",
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gatys" => Ok(Preset::Gatys),
            "crowson" => Ok(Preset::Crowson),
            "ps" => Ok(Preset::Ps),
            "custom" => Ok(Preset::Custom),
            other => Err(Error::InvalidArgument(format!(
                "unknown preset `{other}` (expected gatys, crowson, ps or custom)"
            ))),
        }
    }
}

/// How pixels are kept inside `[0, 1]` during optimization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixelParam {
    /// Plain pixel variables clamped after every update.
    #[default]
    Clamp,
    /// Unconstrained logits passed through a sigmoid.
    Sigmoid,
}

impl FromStr for PixelParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clamp" => Ok(Self::Clamp),
            "sigmoid" => Ok(Self::Sigmoid),
            other => Err(Error::InvalidArgument(format!("unknown pixel parameterization `{other}`"))),
        }
    }
}

/// The five objective weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub eta: f64,
}

impl LossWeights {
    pub fn faces_enabled(&self) -> bool {
        self.delta > 0.0 || self.eta > 0.0
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("tv weight", self.gamma),
            ("face weight", self.delta),
            ("mesh weight", self.eta),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        Ok(())
    }
}

/// Everything the objective needs besides images and models.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveConfig {
    pub weights: LossWeights,
    pub content_layers: LayerWeights,
    pub style_layers: LayerWeights,
    pub facial_layers: LayerWeights,
    pub content_mode: ContentMode,
    pub style_variant: StyleVariant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleTransferConfig {
    pub preset: Preset,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub eta: f64,
    pub content_layers: LayerWeights,
    /// Raw per-layer style weights, normalized under `style_weight_norm`.
    pub style_layers: LayerWeights,
    pub style_weight_norm: WeightScheme,
    pub facial_layers: LayerWeights,
    pub content_mode: ContentMode,
    pub style_variant: StyleVariant,
    pub init_res: usize,
    pub final_res: usize,
    pub scale_factor: f64,
    pub steps_per_stage: usize,
    pub learning_rate: f64,
    /// Learning-rate multiplier applied at each successive stage.
    pub lr_decay: f64,
    pub seed: u64,
    pub init: InitStrategy,
    pub pixel_param: PixelParam,
    pub min_face_confidence: f64,
    pub recognizer_crop: usize,
    pub remove_background: bool,
    pub bg_color: [f64; 3],
    /// Binarizes the matte at this alpha when set.
    pub matte_threshold: Option<f64>,
    pub registry: Option<PathBuf>,
    pub snapshot_dir: Option<PathBuf>,
}

impl Default for StyleTransferConfig {
    fn default() -> Self {
        Self::preset(Preset::default())
    }
}

impl StyleTransferConfig {
    pub fn preset(preset: Preset) -> Self {
        let crowson = Self {
            preset,
            alpha: 0.05,
            beta: 1.0,
            gamma: 1e-3,
            delta: 0.0,
            eta: 0.0,
            content_layers: LayerWeights::uniform([CONTENT_LAYER]),
            style_layers: LayerWeights::new(STYLE_LAYERS.into_iter().zip(CROWSON_STYLE_WEIGHTS)).expect("static weights"),
            style_weight_norm: WeightScheme::Sum,
            facial_layers: LayerWeights::uniform(FACIAL_LAYERS),
            content_mode: ContentMode::Nse,
            style_variant: StyleVariant::Crowson,
            init_res: 256,
            final_res: 512,
            scale_factor: std::f64::consts::SQRT_2,
            steps_per_stage: 500,
            learning_rate: 0.02,
            lr_decay: 0.5,
            seed: 0,
            init: InitStrategy::Content,
            pixel_param: PixelParam::Clamp,
            min_face_confidence: 0.5,
            recognizer_crop: 192,
            remove_background: false,
            bg_color: [0.0; 3],
            matte_threshold: None,
            registry: None,
            snapshot_dir: None,
        };
        match preset {
            Preset::Crowson | Preset::Custom => crowson,
            Preset::Ps => Self {
                delta: 0.25,
                eta: 0.015,
                ..crowson
            },
            Preset::Gatys => Self {
                alpha: 1.0,
                beta: 1e3,
                gamma: 0.0,
                style_layers: LayerWeights::new(STYLE_LAYERS.map(|l| (l, 1.0))).expect("static weights"),
                content_mode: ContentMode::Mse,
                style_variant: StyleVariant::Gatys,
                ..crowson
            },
        }
    }

    /// Preset named by the overrides (or the default), then the overrides.
    pub fn resolve(layers: &[&ConfigOverrides]) -> Result<Self> {
        let preset = layers.iter().rev().find_map(|o| o.preset).unwrap_or_default();
        let mut cfg = Self::preset(preset);
        for o in layers {
            cfg.apply(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &ConfigOverrides) -> Result<()> {
        macro_rules! set {
            ($($src:ident => $dst:ident),* $(,)?) => {
                $(if let Some(v) = o.$src.clone() { self.$dst = v; })*
            };
        }
        set!(
            alpha => alpha,
            beta => beta,
            tv_weight => gamma,
            face_weight => delta,
            mesh_weight => eta,
            init_res => init_res,
            final_res => final_res,
            scale_factor => scale_factor,
            steps => steps_per_stage,
            learning_rate => learning_rate,
            lr_decay => lr_decay,
            seed => seed,
            init => init,
            pixel_param => pixel_param,
            min_face_confidence => min_face_confidence,
            recognizer_crop => recognizer_crop,
            remove_background => remove_background,
            style_weight_norm => style_weight_norm,
        );
        if let Some(c) = &o.bg_color {
            self.bg_color = parse_color(c)?;
        }
        if let Some(t) = o.matte_threshold {
            self.matte_threshold = Some(t);
        }
        if let Some(r) = &o.registry {
            self.registry = Some(r.clone());
        }
        if let Some(d) = &o.snapshot_dir {
            self.snapshot_dir = Some(d.clone());
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            delta: self.delta,
            eta: self.eta,
        }
    }

    pub fn schedule(&self) -> Result<ResolutionSchedule> {
        ResolutionSchedule::new(self.init_res, self.final_res, self.scale_factor)
    }

    pub fn objective(&self) -> Result<ObjectiveConfig> {
        let names = self.style_layers.names();
        let raw: Vec<f64> = self.style_layers.iter().map(|(_, w)| w).collect();
        Ok(ObjectiveConfig {
            weights: self.weights(),
            content_layers: self.content_layers.clone(),
            style_layers: LayerWeights::from_raw(names, &raw, self.style_weight_norm)?,
            facial_layers: self.facial_layers.clone(),
            content_mode: self.content_mode,
            style_variant: self.style_variant,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.weights().validate()?;
        self.schedule()?;
        if self.steps_per_stage == 0 {
            return Err(Error::InvalidArgument("steps must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.lr_decay.is_finite() && self.lr_decay > 0.0) {
            return Err(Error::InvalidArgument(format!("learning-rate decay must be positive, got {}", self.lr_decay)));
        }
        if !(0.0..=1.0).contains(&self.min_face_confidence) {
            return Err(Error::InvalidArgument("minimum face confidence must lie in [0, 1]".into()));
        }
        if self.recognizer_crop == 0 {
            return Err(Error::InvalidArgument("recognizer crop size must be positive".into()));
        }
        if self.bg_color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidArgument("background color channels must lie in [0, 1]".into()));
        }
        if let Some(t) = self.matte_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidArgument("matte threshold must lie in [0, 1]".into()));
            }
        }
        if self.style_layers.is_empty() && self.beta > 0.0 {
            return Err(Error::InvalidArgument("style weight is positive but no style layers are set".into()));
        }
        self.objective().map(|_| ())
    }
}

/// Optional settings layered over a preset; field names mirror the CLI flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ConfigOverrides {
    pub preset: Option<Preset>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub tv_weight: Option<f64>,
    pub face_weight: Option<f64>,
    pub mesh_weight: Option<f64>,
    pub init_res: Option<usize>,
    pub final_res: Option<usize>,
    pub scale_factor: Option<f64>,
    pub steps: Option<usize>,
    pub learning_rate: Option<f64>,
    pub lr_decay: Option<f64>,
    pub seed: Option<u64>,
    pub init: Option<InitStrategy>,
    pub pixel_param: Option<PixelParam>,
    pub min_face_confidence: Option<f64>,
    pub recognizer_crop: Option<usize>,
    pub remove_background: Option<bool>,
    pub bg_color: Option<String>,
    pub matte_threshold: Option<f64>,
    pub style_weight_norm: Option<WeightScheme>,
    pub registry: Option<PathBuf>,
    pub snapshot_dir: Option<PathBuf>,
}

/// `r,g,b` in `[0, 1]` or `#rrggbb`.
pub fn parse_color(s: &str) -> Result<[f64; 3]> {
    let bad = || Error::InvalidArgument(format!("cannot parse color `{s}` (use r,g,b in [0,1] or #rrggbb)"));
    let s = s.trim();
    if let Some(hex) = s.strip_prefix('#') {
        if hex.len() != 6 || !hex.is_ascii() {
            return Err(bad());
        }
        let mut out = [0.0; 3];
        for (i, c) in out.iter_mut().enumerate() {
            let v = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
            *c = f64::from(v) / 255.0;
        }
        return Ok(out);
    }
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    match parts[..] {
        [r, g, b] if [r, g, b].iter().all(|c| (0.0..=1.0).contains(c)) => Ok([r, g, b]),
        _ => Err(bad()),
    }
}
