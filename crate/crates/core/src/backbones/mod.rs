//! Feature providers: a single differentiable contract shared by the image
//! classifier, the face recognizer and the face mesher, plus the
//! non-differentiable face detector and matting model.
//!
//! Every provider owns its input normalization. Callers always hand over
//! unit-interval [`Image`]s and receive gradients with respect to those
//! unit-interval pixels.

mod detect;
pub mod graph;
mod matting;
mod registry;
mod stub;

use std::collections::HashMap;

use indexmap::IndexMap;
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

pub use detect::{detect_faces, non_max_suppression, ColorBlobDetector, FaceDetector, NetworkDetector};
pub(crate) use detect::sort_boxes;
pub use graph::{Graph, Op};
pub use matting::{compute_matte, ConstantMatting, Matting, NetworkMatting};
pub use registry::{
    cache_dir, load_graph_spec, load_pretrained, sha256_hex, vgg19_graph, GraphSpec, NodeSpec, Pretrained,
    Registry, RegistryEntry, CACHE_ENV,
};
pub use stub::{
    identity_backbone, stub_backbone, stub_classifier, stub_face_mesher, stub_face_recognizer, Activation,
    StubLayer,
};

/// Number of vertices produced by the face mesher.
pub const MESH_VERTICES: usize = 468;
/// Side length of the square crop the face mesher consumes.
pub const MESH_CROP: usize = 192;
/// Layer name under which a mesher exposes its flattened `468 * 3` output.
pub const MESH_LAYER: &str = "mesh";
/// Layer name of the face recognizer's final identity embedding.
pub const EMBEDDING_LAYER: &str = "embedding";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    Vgg19,
    FaceRecognizer,
    FaceMesher,
    FaceDetector,
    Matting,
    Stub,
}

impl BackboneKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackboneKind::Vgg19 => "vgg19",
            BackboneKind::FaceRecognizer => "face_recognizer",
            BackboneKind::FaceMesher => "face_mesher",
            BackboneKind::FaceDetector => "face_detector",
            BackboneKind::Matting => "matting",
            BackboneKind::Stub => "stub",
        }
    }
}

impl std::fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "vgg19" => Self::Vgg19,
            "face_recognizer" => Self::FaceRecognizer,
            "face_mesher" => Self::FaceMesher,
            "face_detector" => Self::FaceDetector,
            "matting" => Self::Matting,
            other => return Err(Error::UnsupportedKind(other.to_string())),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerRole {
    Content,
    Style,
    Facial,
    Output,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub channels: usize,
    pub role: LayerRole,
}

/// Input normalization a backbone applies to unit-interval pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Normalization {
    Identity,
    /// `(x - mean[c]) / std[c]`
    MeanStd { mean: [f64; 3], std: [f64; 3] },
    /// `scale * x + shift` on every channel.
    Affine { scale: f64, shift: f64 },
}

impl Normalization {
    pub fn imagenet() -> Self {
        Normalization::MeanStd {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }

    /// Maps `[0, 1]` onto `[-1, 1]`.
    pub fn symmetric() -> Self {
        Normalization::Affine {
            scale: 2.0,
            shift: -1.0,
        }
    }

    fn apply(&self, x: &Array3<f64>) -> Array3<f64> {
        match self {
            Normalization::Identity => x.clone(),
            Normalization::MeanStd { mean, std } => {
                let mut out = x.clone();
                for (c, mut plane) in out.outer_iter_mut().enumerate() {
                    let (m, s) = (mean[c % 3], std[c % 3]);
                    plane.mapv_inplace(|v| (v - m) / s);
                }
                out
            }
            Normalization::Affine { scale, shift } => x.mapv(|v| scale * v + shift),
        }
    }

    fn backward(&self, g: Array3<f64>) -> Array3<f64> {
        match self {
            Normalization::Identity => g,
            Normalization::MeanStd { std, .. } => {
                let mut g = g;
                for (c, mut plane) in g.outer_iter_mut().enumerate() {
                    let s = std[c % 3];
                    plane.mapv_inplace(|v| v / s);
                }
                g
            }
            Normalization::Affine { scale, .. } => g * *scale,
        }
    }
}

/// Ordered layer name to `(N_l, M_l)` feature matrix map.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureSet {
    entries: IndexMap<String, Array2<f64>>,
}

impl FeatureSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, features: Array2<f64>) {
        self.entries.insert(name.into(), features);
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl FromIterator<(String, Array2<f64>)> for FeatureSet {
    fn from_iter<T: IntoIterator<Item = (String, Array2<f64>)>>(iter: T) -> Self {
        Self {
            entries: iter.into_iter().collect(),
        }
    }
}

/// Dense 468-vertex face surface, coordinates in the crop frame.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshModel {
    vertices: Array2<f64>,
}

impl MeshModel {
    pub fn new(vertices: Array2<f64>) -> Result<Self> {
        if vertices.dim() != (MESH_VERTICES, 3) {
            return Err(Error::ShapeMismatch(format!(
                "mesh must be {MESH_VERTICES}x3, got {:?}",
                vertices.dim()
            )));
        }
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mesh vertex".into()));
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &Array2<f64> {
        &self.vertices
    }
}

/// Face rectangle in image pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
}

impl FaceBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64, confidence: f64) -> Self {
        Self { x, y, w, h, confidence }
    }

    /// Intersects the box with `[0, width] x [0, height]`. `None` when empty.
    pub fn clipped(&self, width: usize, height: usize) -> Option<FaceBox> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = (self.x + self.w).min(width as f64);
        let y1 = (self.y + self.h).min(height as f64);
        (x1 > x0 && y1 > y0).then(|| FaceBox {
            x: x0,
            y: y0,
            w: x1 - x0,
            h: y1 - y0,
            confidence: self.confidence.clamp(0.0, 1.0),
        })
    }

    /// Grows each side by `margin` times the box's own extent.
    pub fn expanded(&self, margin: f64) -> FaceBox {
        FaceBox {
            x: self.x - margin * self.w,
            y: self.y - margin * self.h,
            w: self.w * (1.0 + 2.0 * margin),
            h: self.h * (1.0 + 2.0 * margin),
            confidence: self.confidence,
        }
    }

    pub fn scaled(&self, sx: f64, sy: f64) -> FaceBox {
        FaceBox {
            x: self.x * sx,
            y: self.y * sy,
            w: self.w * sx,
            h: self.h * sy,
            confidence: self.confidence,
        }
    }

    pub fn iou(&self, other: &FaceBox) -> f64 {
        let ix = ((self.x + self.w).min(other.x + other.w) - self.x.max(other.x)).max(0.0);
        let iy = ((self.y + self.h).min(other.y + other.h) - self.y.max(other.y)).max(0.0);
        let inter = ix * iy;
        let union = self.w * self.h + other.w * other.h - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x && x <= self.x + self.w && y >= self.y && y <= self.y + self.h
    }
}

/// Per-pixel foreground opacity.
#[derive(Clone, Debug, PartialEq)]
pub struct Matte {
    alpha: Array2<f64>,
}

impl Matte {
    /// Clamps into `[0, 1]`; NaN becomes 0.
    pub fn new(mut alpha: Array2<f64>) -> Self {
        alpha.mapv_inplace(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
        Self { alpha }
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Self::new(Array2::from_elem((height, width), value))
    }

    pub fn alpha(&self) -> &Array2<f64> {
        &self.alpha
    }

    pub fn height(&self) -> usize {
        self.alpha.nrows()
    }

    pub fn width(&self) -> usize {
        self.alpha.ncols()
    }
}

/// A differentiable feature provider backed by a network [`Graph`].
#[derive(Clone, Debug)]
pub struct Backbone {
    kind: BackboneKind,
    graph: Graph,
    normalization: Normalization,
    layers: Vec<LayerSpec>,
    nodes: HashMap<String, usize>,
    input_size: Option<(usize, usize)>,
}

impl Backbone {
    /// `exposed` maps public layer names (e.g. `relu1_1`) to graph node names.
    pub fn new(
        kind: BackboneKind,
        graph: Graph,
        normalization: Normalization,
        exposed: &[(String, String, LayerRole)],
    ) -> Result<Self> {
        let channels = graph_channels(&graph)?;
        let mut layers = Vec::with_capacity(exposed.len());
        let mut nodes = HashMap::new();
        for (public, node, role) in exposed {
            let id = graph
                .node_id(node)
                .ok_or_else(|| Error::Model(format!("layer `{public}` maps to missing node `{node}`")))?;
            if nodes.insert(public.clone(), id).is_some() {
                return Err(Error::Model(format!("duplicate layer name `{public}`")));
            }
            layers.push(LayerSpec {
                name: public.clone(),
                channels: channels[id],
                role: *role,
            });
        }
        Ok(Self {
            kind,
            graph,
            normalization,
            layers,
            nodes,
            input_size: None,
        })
    }

    pub fn with_input_size(mut self, size: Option<(usize, usize)>) -> Self {
        self.input_size = size;
        self
    }

    pub fn kind(&self) -> BackboneKind {
        self.kind
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    /// Fixed `(height, width)` input the network requires, if any.
    pub fn input_size(&self) -> Option<(usize, usize)> {
        self.input_size
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn has_layer(&self, name: &str) -> bool {
        self.nodes.contains_key(name)
    }

    /// Features of the requested layers, in request order.
    pub fn extract_features(&self, img: &Image, layers: &[&str]) -> Result<FeatureSet> {
        Ok(self.forward(img, layers)?.features)
    }

    /// Forward pass that keeps activations for a later [`FeatureEval::backward`].
    pub fn forward(&self, img: &Image, layers: &[&str]) -> Result<FeatureEval<'_>> {
        self.forward_array(img.as_array(), layers)
    }

    pub(crate) fn forward_array(&self, pixels: &Array3<f64>, layers: &[&str]) -> Result<FeatureEval<'_>> {
        let requested = layers
            .iter()
            .map(|&l| {
                self.nodes
                    .get(l)
                    .map(|&id| (l.to_string(), id))
                    .ok_or_else(|| Error::UnknownLayer(l.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some((h, w)) = self.input_size {
            let (_, ih, iw) = pixels.dim();
            if (ih, iw) != (h, w) {
                return Err(Error::ShapeMismatch(format!(
                    "{} expects {h}x{w} input, got {ih}x{iw}",
                    self.kind
                )));
            }
        }
        let upto = requested.iter().map(|(_, id)| *id).max().unwrap_or(0);
        let acts = self.graph.forward(self.normalization.apply(pixels), upto)?;
        let features = requested
            .iter()
            .map(|(name, id)| {
                let a = &acts[*id];
                let (c, h, w) = a.dim();
                let m = a.to_owned().into_shape_with_order((c, h * w)).expect("activation reshape");
                (name.clone(), m)
            })
            .collect();
        Ok(FeatureEval {
            backbone: self,
            acts,
            requested,
            features,
        })
    }

    /// Runs the mesher on a `192 x 192` crop.
    pub fn face_mesh(&self, crop: &Image) -> Result<MeshModel> {
        check_mesh_crop(crop.height(), crop.width())?;
        let eval = self.forward(crop, &[MESH_LAYER])?;
        mesh_from_features(eval.features().get(MESH_LAYER).expect("requested"))
    }

    /// Final identity embedding of a face crop as a flat vector.
    pub fn embedding(&self, crop: &Image) -> Result<Vec<f64>> {
        let f = self.extract_features(crop, &[EMBEDDING_LAYER])?;
        Ok(f.get(EMBEDDING_LAYER).expect("requested").iter().copied().collect())
    }
}

pub fn check_mesh_crop(height: usize, width: usize) -> Result<()> {
    if (height, width) != (MESH_CROP, MESH_CROP) {
        return Err(Error::WrongCropSize {
            expected: MESH_CROP,
            height,
            width,
        });
    }
    Ok(())
}

pub fn mesh_from_features(f: &Array2<f64>) -> Result<MeshModel> {
    if f.len() != MESH_VERTICES * 3 {
        return Err(Error::ShapeMismatch(format!(
            "mesher output has {} values, expected {}",
            f.len(),
            MESH_VERTICES * 3
        )));
    }
    let v = Array2::from_shape_vec((MESH_VERTICES, 3), f.iter().copied().collect()).expect("length checked");
    MeshModel::new(v)
}

/// Activations of one forward pass, able to backpropagate feature gradients.
pub struct FeatureEval<'a> {
    backbone: &'a Backbone,
    acts: Vec<Array3<f64>>,
    requested: Vec<(String, usize)>,
    features: FeatureSet,
}

impl FeatureEval<'_> {
    pub fn features(&self) -> &FeatureSet {
        &self.features
    }

    pub fn into_features(self) -> FeatureSet {
        self.features
    }

    /// Gradient with respect to the unit-interval input pixels, `(3, H, W)`.
    ///
    /// `grads` holds dL/dF for any subset of the requested layers, each with
    /// the same `(N_l, M_l)` shape as the feature.
    pub fn backward(&self, grads: &FeatureSet) -> Result<Array3<f64>> {
        let mut seeds = Vec::with_capacity(grads.len());
        for (name, g) in grads.iter() {
            let &(_, id) = self
                .requested
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::UnknownLayer(name.to_string()))?;
            let dim = self.acts[id].dim();
            if g.len() != dim.0 * dim.1 * dim.2 || g.nrows() != dim.0 {
                return Err(Error::ShapeMismatch(format!(
                    "gradient for `{name}` is {:?}, features are ({}, {})",
                    g.dim(),
                    dim.0,
                    dim.1 * dim.2
                )));
            }
            let g3 = g.as_standard_layout().to_owned().into_shape_with_order(dim).expect("size checked");
            seeds.push((id, g3));
        }
        let g = self.backbone.graph.backward(&self.acts, seeds)?;
        Ok(self.backbone.normalization.backward(g))
    }
}

/// Output channel count of every node, derived from the weights alone.
fn graph_channels(graph: &Graph) -> Result<Vec<usize>> {
    let mut ch: Vec<usize> = Vec::with_capacity(graph.len());
    for node in graph.nodes() {
        let c = match &node.op {
            Op::Input => 3,
            Op::Conv2d { weight, .. } => weight.dim().0,
            Op::Linear { weight, .. } => weight.nrows(),
            Op::Concat => node.inputs.iter().map(|&i| ch[i]).sum(),
            _ => ch[node.inputs[0]],
        };
        ch.push(c);
    }
    Ok(ch)
}
