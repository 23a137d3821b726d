//! Face localization, differentiable cropping and the identity-preservation
//! terms computed on faces concatenated across the image.

use ndarray::{concatenate, s, Array2, Array3, ArrayView3, Axis};

use crate::backbones::{detect_faces, mesh_from_features, Backbone, FaceBox, FaceDetector, FeatureSet, MESH_CROP, MESH_LAYER, MESH_VERTICES};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::{nse, nse_grad, LayerWeights, NSE_EPSILON};

/// Fraction of the detected box added on every side before cropping.
pub const FACE_MARGIN: f64 = 0.15;

/// Recognizer layers used for the facial-feature term.
pub const FACIAL_LAYERS: [&str; 5] = ["conv_1a", "conv_2a", "maxpool_3a", "conv_4a", "conv_4b"];

pub fn default_facial_weights() -> LayerWeights {
    LayerWeights::uniform(FACIAL_LAYERS)
}

/// Faces of the content image: detected, grown by [`FACE_MARGIN`], clipped
/// and ordered by `x`, then `y`.
pub fn locate_faces(content: &Image, detector: &dyn FaceDetector, min_confidence: f64) -> Result<Vec<FaceBox>> {
    let mut boxes: Vec<FaceBox> = detect_faces(detector, content, min_confidence)?
        .into_iter()
        .filter_map(|b| b.expanded(FACE_MARGIN).clipped(content.width(), content.height()))
        .collect();
    crate::backbones::sort_boxes(&mut boxes);
    Ok(boxes)
}

/// Rescales content-resolution boxes to an image of `height x width`.
pub fn rescale_boxes(boxes: &[FaceBox], from: (usize, usize), to: (usize, usize)) -> Vec<FaceBox> {
    let sy = to.0 as f64 / from.0 as f64;
    let sx = to.1 as f64 / from.1 as f64;
    boxes
        .iter()
        .filter_map(|b| b.scaled(sx, sy).clipped(to.1, to.0))
        .collect()
}

/// Linear interpolation taps along one axis: `(i0, i1, w0, w1)` per output.
#[derive(Clone, Debug)]
struct AxisTaps(Vec<(usize, usize, f64, f64)>);

impl AxisTaps {
    /// Half-pixel-centred sampling of `[start, start + extent)` with `out`
    /// samples. Taps stay inside the pixels the interval touches.
    fn new(start: f64, extent: f64, out: usize, len: usize) -> Self {
        let lo = (start.floor().max(0.0) as usize).min(len - 1);
        let hi = (((start + extent).ceil() as usize).saturating_sub(1)).clamp(lo, len - 1);
        let step = extent / out as f64;
        let taps = (0..out)
            .map(|u| {
                let src = (start + (u as f64 + 0.5) * step - 0.5).clamp(lo as f64, hi as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(hi);
                let t = src - i0 as f64;
                if i1 == i0 {
                    (i0, i1, 1.0, 0.0)
                } else {
                    (i0, i1, 1.0 - t, t)
                }
            })
            .collect();
        Self(taps)
    }
}

fn box_taps(b: &FaceBox, size: usize, height: usize, width: usize) -> (AxisTaps, AxisTaps) {
    (
        AxisTaps::new(b.y, b.h, size, height),
        AxisTaps::new(b.x, b.w, size, width),
    )
}

/// Bilinear `size x size` resampling of the box region of `(C, H, W)` planes.
pub fn crop_region(planes: ArrayView3<'_, f64>, b: &FaceBox, size: usize) -> Array3<f64> {
    let (c, h, w) = planes.dim();
    let (ty, tx) = box_taps(b, size, h, w);
    let mut out = Array3::zeros((c, size, size));
    for ch in 0..c {
        let p = planes.index_axis(Axis(0), ch);
        for (v, &(y0, y1, wy0, wy1)) in ty.0.iter().enumerate() {
            for (u, &(x0, x1, wx0, wx1)) in tx.0.iter().enumerate() {
                out[[ch, v, u]] = wy0 * (wx0 * p[[y0, x0]] + wx1 * p[[y0, x1]]) + wy1 * (wx0 * p[[y1, x0]] + wx1 * p[[y1, x1]]);
            }
        }
    }
    out
}

/// Adjoint of [`crop_region`]: scatters a crop gradient back onto `(C, H, W)`.
pub fn crop_region_backward(grad: ArrayView3<'_, f64>, b: &FaceBox, height: usize, width: usize) -> Array3<f64> {
    let (c, size, size2) = grad.dim();
    debug_assert_eq!(size, size2);
    let (ty, tx) = box_taps(b, size, height, width);
    let mut out = Array3::zeros((c, height, width));
    for ch in 0..c {
        let g = grad.index_axis(Axis(0), ch);
        let mut o = out.index_axis_mut(Axis(0), ch);
        for (v, &(y0, y1, wy0, wy1)) in ty.0.iter().enumerate() {
            for (u, &(x0, x1, wx0, wx1)) in tx.0.iter().enumerate() {
                let d = g[[v, u]];
                o[[y0, x0]] += wy0 * wx0 * d;
                o[[y0, x1]] += wy0 * wx1 * d;
                o[[y1, x0]] += wy1 * wx0 * d;
                o[[y1, x1]] += wy1 * wx1 * d;
            }
        }
    }
    out
}

/// Boxes and their crops, in box order.
#[derive(Clone, Debug)]
pub struct FaceCropSet {
    boxes: Vec<FaceBox>,
    crops: Vec<Image>,
}

impl FaceCropSet {
    pub fn boxes(&self) -> &[FaceBox] {
        &self.boxes
    }

    pub fn crops(&self) -> &[Image] {
        &self.crops
    }

    pub fn len(&self) -> usize {
        self.crops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.crops.is_empty()
    }
}

/// `192 x 192` crops of every box.
pub fn crop_faces(img: &Image, boxes: &[FaceBox]) -> Result<FaceCropSet> {
    crop_faces_sized(img, boxes, MESH_CROP)
}

pub fn crop_faces_sized(img: &Image, boxes: &[FaceBox], size: usize) -> Result<FaceCropSet> {
    if size == 0 {
        return Err(Error::InvalidArgument("crop size must be positive".into()));
    }
    let (h, w) = (img.height(), img.width());
    let mut crops = Vec::with_capacity(boxes.len());
    for b in boxes {
        if b.clipped(w, h).is_none() {
            return Err(Error::InvalidArgument(format!("face box {b:?} lies outside the {h}x{w} image")));
        }
        crops.push(Image::from_array(crop_region(img.view(), b, size))?);
    }
    Ok(FaceCropSet {
        boxes: boxes.to_vec(),
        crops,
    })
}

/// Face models used by the identity terms.
#[derive(Clone, Debug)]
pub struct FaceModels {
    pub recognizer: Backbone,
    pub mesher: Backbone,
    /// Side of the square crops fed to the recognizer.
    pub recognizer_crop: usize,
}

impl FaceModels {
    pub fn new(recognizer: Backbone, mesher: Backbone) -> Self {
        Self {
            recognizer,
            mesher,
            recognizer_crop: MESH_CROP,
        }
    }

    pub fn with_recognizer_crop(mut self, size: usize) -> Self {
        self.recognizer_crop = size;
        self
    }
}

/// Per-layer features and meshes of all faces, stacked along the first axis
/// in box order.
#[derive(Clone, Debug, PartialEq)]
pub struct ConcatFacialFeatures {
    pub per_layer: FeatureSet,
    pub mesh: Option<Array2<f64>>,
}

fn stack(blocks: &[Array2<f64>]) -> Array2<f64> {
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    concatenate(Axis(0), &views).expect("blocks share trailing dimensions")
}

/// Concatenates per-face recognizer features (and meshes when `use_mesh`).
///
/// Meshes are computed from the same crops, which must then be `192 x 192`.
pub fn concat_facial_features(
    crops: &FaceCropSet,
    recognizer: &Backbone,
    mesher: &Backbone,
    layers: &LayerWeights,
    use_mesh: bool,
) -> Result<ConcatFacialFeatures> {
    concat_with_mesh_crops(crops, None, recognizer, mesher, layers, use_mesh)
}

fn concat_with_mesh_crops(
    crops: &FaceCropSet,
    mesh_crops: Option<&FaceCropSet>,
    recognizer: &Backbone,
    mesher: &Backbone,
    layers: &LayerWeights,
    use_mesh: bool,
) -> Result<ConcatFacialFeatures> {
    if crops.is_empty() {
        return Err(Error::NoFaces);
    }
    let names = layers.names();
    let mut blocks: Vec<Vec<Array2<f64>>> = vec![Vec::with_capacity(crops.len()); names.len()];
    for crop in crops.crops() {
        let feats = recognizer.extract_features(crop, &names)?;
        for (slot, name) in blocks.iter_mut().zip(&names) {
            slot.push(feats.get(name).expect("requested").clone());
        }
    }
    let per_layer = names.iter().zip(&blocks).map(|(n, b)| (n.to_string(), stack(b))).collect();
    let mesh = if use_mesh {
        let source = mesh_crops.unwrap_or(crops);
        let meshes = source
            .crops()
            .iter()
            .map(|c| mesher.face_mesh(c).map(|m| m.vertices().clone()))
            .collect::<Result<Vec<_>>>()?;
        Some(stack(&meshes))
    } else {
        None
    };
    Ok(ConcatFacialFeatures { per_layer, mesh })
}

fn mesh_crops_for(img: &Image, boxes: &[FaceBox], crops: &FaceCropSet) -> Result<Option<FaceCropSet>> {
    if crops.crops().first().is_some_and(|c| c.height() == MESH_CROP) {
        Ok(None)
    } else {
        crop_faces(img, boxes).map(Some)
    }
}

/// `delta * sum_l W_l NSE(G_l, H_l) + eta * NSE(G_M, H_M)` as separate
/// terms, on already concatenated features.
pub fn facial_terms(
    content: &ConcatFacialFeatures,
    result: &ConcatFacialFeatures,
    weights: &LayerWeights,
    delta: f64,
    eta: f64,
) -> Result<(f64, f64)> {
    check_face_weights(delta, eta)?;
    let mut ff = 0.0;
    if delta > 0.0 {
        for (name, w) in weights.iter() {
            let g = content.per_layer.get(name).ok_or_else(|| Error::LayerMismatch(format!("content faces lack `{name}`")))?;
            let h = result.per_layer.get(name).ok_or_else(|| Error::LayerMismatch(format!("result faces lack `{name}`")))?;
            ff += w * nse(g, h, NSE_EPSILON)?;
        }
    }
    let mut fm = 0.0;
    if eta > 0.0 {
        match (&content.mesh, &result.mesh) {
            (Some(g), Some(h)) => fm = nse(g, h, NSE_EPSILON)?,
            _ => return Err(Error::LayerMismatch(format!("`{MESH_LAYER}` missing from facial features"))),
        }
    }
    Ok((delta * ff, eta * fm))
}

/// Facial-feature and mesh terms for `result` against `content` on the same
/// boxes, faces concatenated in box order.
///
/// Zero when both weights are zero or there are no boxes.
pub fn faceid_loss(
    content: &Image,
    result: &Image,
    boxes: &[FaceBox],
    models: &FaceModels,
    weights: &LayerWeights,
    delta: f64,
    eta: f64,
) -> Result<(f64, f64)> {
    check_face_weights(delta, eta)?;
    if (delta == 0.0 && eta == 0.0) || boxes.is_empty() {
        return Ok((0.0, 0.0));
    }
    let features = |img: &Image| -> Result<ConcatFacialFeatures> {
        let crops = crop_faces_sized(img, boxes, models.recognizer_crop)?;
        let mesh_crops = if eta > 0.0 { mesh_crops_for(img, boxes, &crops)? } else { None };
        concat_with_mesh_crops(&crops, mesh_crops.as_ref(), &models.recognizer, &models.mesher, weights, eta > 0.0)
    };
    facial_terms(&features(content)?, &features(result)?, weights, delta, eta)
}

fn check_face_weights(delta: f64, eta: f64) -> Result<()> {
    for (name, v) in [("face weight", delta), ("mesh weight", eta)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument(format!("{name} must be a non-negative number, got {v}")));
        }
    }
    Ok(())
}

/// Content-side facial features for a fixed set of boxes, computed once and
/// compared against result crops at every step.
#[derive(Clone, Debug)]
pub struct FaceTargets {
    boxes: Vec<FaceBox>,
    content: ConcatFacialFeatures,
    delta: f64,
    eta: f64,
}

impl FaceTargets {
    pub fn new(content: &Image, boxes: &[FaceBox], models: &FaceModels, weights: &LayerWeights, delta: f64, eta: f64) -> Result<Self> {
        check_face_weights(delta, eta)?;
        let crops = crop_faces_sized(content, boxes, models.recognizer_crop)?;
        let mesh_crops = if eta > 0.0 { mesh_crops_for(content, boxes, &crops)? } else { None };
        let features = concat_with_mesh_crops(&crops, mesh_crops.as_ref(), &models.recognizer, &models.mesher, weights, eta > 0.0)?;
        Ok(Self {
            boxes: boxes.to_vec(),
            content: features,
            delta,
            eta,
        })
    }

    pub fn boxes(&self) -> &[FaceBox] {
        &self.boxes
    }

    pub fn content(&self) -> &ConcatFacialFeatures {
        &self.content
    }

    /// `(facial_features, facial_mesh, d/dx)` for result pixels `(3, H, W)`.
    /// The gradient is all zeros unless `with_grad`.
    pub fn evaluate(&self, result: &Array3<f64>, models: &FaceModels, weights: &LayerWeights, with_grad: bool) -> Result<(f64, f64, Array3<f64>)> {
        let (_, h, w) = result.dim();
        let mut grad = Array3::zeros(result.dim());
        let faces = self.boxes.len();
        let names = weights.names();

        let mut ff = 0.0;
        if self.delta > 0.0 {
            let crops: Vec<Array3<f64>> = self.boxes.iter().map(|b| crop_region(result.view(), b, models.recognizer_crop)).collect();
            let evals = crops
                .iter()
                .map(|c| models.recognizer.forward_array(c, &names))
                .collect::<Result<Vec<_>>>()?;
            let mut face_grads: Vec<FeatureSet> = (0..faces).map(|_| FeatureSet::new()).collect();
            for (name, wl) in weights.iter() {
                let blocks: Vec<Array2<f64>> = evals.iter().map(|e| e.features().get(name).expect("requested").clone()).collect();
                let x = stack(&blocks);
                let c = self.content.per_layer.get(name).ok_or_else(|| Error::LayerMismatch(name.to_string()))?;
                if !with_grad {
                    ff += self.delta * wl * nse(c, &x, NSE_EPSILON)?;
                    continue;
                }
                let (v, g) = nse_grad(c, &x, NSE_EPSILON)?;
                ff += self.delta * wl * v;
                let rows = blocks[0].nrows();
                for (f, fg) in face_grads.iter_mut().enumerate() {
                    fg.insert(name, g.slice(s![f * rows..(f + 1) * rows, ..]).to_owned() * (self.delta * wl));
                }
            }
            if with_grad {
                for ((eval, fg), b) in evals.iter().zip(&face_grads).zip(&self.boxes) {
                    let crop_grad = eval.backward(fg)?;
                    grad += &crop_region_backward(crop_grad.view(), b, h, w);
                }
            }
        }

        let mut fm = 0.0;
        if self.eta > 0.0 {
            let target = self.content.mesh.as_ref().ok_or_else(|| Error::LayerMismatch(MESH_LAYER.into()))?;
            let crops: Vec<Array3<f64>> = self.boxes.iter().map(|b| crop_region(result.view(), b, MESH_CROP)).collect();
            let evals = crops
                .iter()
                .map(|c| models.mesher.forward_array(c, &[MESH_LAYER]))
                .collect::<Result<Vec<_>>>()?;
            let meshes = evals
                .iter()
                .map(|e| mesh_from_features(e.features().get(MESH_LAYER).expect("requested")).map(|m| m.vertices().clone()))
                .collect::<Result<Vec<_>>>()?;
            let x = stack(&meshes);
            if with_grad {
                let (v, g) = nse_grad(target, &x, NSE_EPSILON)?;
                fm = self.eta * v;
                for (f, (eval, b)) in evals.iter().zip(&self.boxes).enumerate() {
                    let shape = eval.features().get(MESH_LAYER).expect("requested").dim();
                    let block = g.slice(s![f * MESH_VERTICES..(f + 1) * MESH_VERTICES, ..]).to_owned() * self.eta;
                    let block = Array2::from_shape_vec(shape, block.iter().copied().collect()).expect("mesh size checked");
                    let mut seeds = FeatureSet::new();
                    seeds.insert(MESH_LAYER, block);
                    let crop_grad = eval.backward(&seeds)?;
                    grad += &crop_region_backward(crop_grad.view(), b, h, w);
                }
            } else {
                fm = self.eta * nse(target, &x, NSE_EPSILON)?;
            }
        }
        Ok((ff, fm, grad))
    }
}
