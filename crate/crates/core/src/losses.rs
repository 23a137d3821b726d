//! Differentiable objective terms.
//!
//! Every loss comes in a value form and a `*_grad` form returning the value
//! together with its gradient with respect to the *result* side (the second
//! argument), which is what the optimizer needs.

use indexmap::IndexMap;
use ndarray::{Array, Array2, Array3, ArrayBase, ArrayView3, Axis, Data, Dimension, Zip};
use serde::{Deserialize, Serialize};

use crate::backbones::FeatureSet;
use crate::error::{Error, Result};

/// Denominator guard of the normalized squared error.
pub const NSE_EPSILON: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContentMode {
    Mse,
    #[default]
    Nse,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StyleVariant {
    /// Unnormalized Grams, squared error scaled by `1 / (4 N^2 M^2)`.
    Gatys,
    /// Grams divided by the filter count, compared with NSE.
    #[default]
    Crowson,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightScheme {
    Softmax,
    #[default]
    Sum,
}

impl std::str::FromStr for WeightScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(Self::Softmax),
            "sum" => Ok(Self::Sum),
            other => Err(Error::InvalidArgument(format!("unknown weight scheme `{other}`"))),
        }
    }
}

/// Per-layer weights, kept in insertion order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LayerWeights {
    entries: IndexMap<String, f64>,
}

impl LayerWeights {
    /// Weights taken as given; they must be finite and non-negative.
    pub fn new<S: Into<String>>(entries: impl IntoIterator<Item = (S, f64)>) -> Result<Self> {
        let entries: IndexMap<String, f64> = entries.into_iter().map(|(k, v)| (k.into(), v)).collect();
        if let Some((name, w)) = entries.iter().find(|(_, w)| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidArgument(format!("layer weight for `{name}` is {w}")));
        }
        Ok(Self { entries })
    }

    pub fn uniform<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let w = 1.0 / names.len().max(1) as f64;
        Self {
            entries: names.into_iter().map(|n| (n, w)).collect(),
        }
    }

    /// Pairs `names` with `raw` weights normalized under `scheme`.
    pub fn from_raw<S: Into<String>>(names: impl IntoIterator<Item = S>, raw: &[f64], scheme: WeightScheme) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() != raw.len() {
            return Err(Error::InvalidArgument(format!(
                "{} layer names but {} raw weights",
                names.len(),
                raw.len()
            )));
        }
        let w = normalize_style_weights(raw, scheme)?;
        Ok(Self {
            entries: names.into_iter().zip(w).collect(),
        })
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.entries.values().sum()
    }
}

pub fn normalize_style_weights(raw: &[f64], scheme: WeightScheme) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::InvalidArgument("no style weights given".into()));
    }
    if raw.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite("style weight".into()));
    }
    match scheme {
        WeightScheme::Softmax => {
            let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = raw.iter().map(|r| (r - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            Ok(exps.into_iter().map(|e| e / total).collect())
        }
        WeightScheme::Sum => {
            let total: f64 = raw.iter().sum();
            if total == 0.0 {
                return Err(Error::InvalidArgument("style weights sum to zero".into()));
            }
            Ok(raw.iter().map(|r| r / total).collect())
        }
    }
}

fn check_same_shape(a: &[usize], b: &[usize], what: &str) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
}

/// `sum((y - y_hat)^2) / (sum(|y - y_hat|) + eps)`.
pub fn nse<S1, S2, D>(y: &ArrayBase<S1, D>, y_hat: &ArrayBase<S2, D>, eps: f64) -> Result<f64>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    check_same_shape(y.shape(), y_hat.shape(), "nse")?;
    let (sq, abs) = Zip::from(y).and(y_hat).fold((0.0, 0.0), |(sq, abs), &a, &b| {
        let e = a - b;
        (sq + e * e, abs + e.abs())
    });
    Ok(sq / (abs + eps))
}

/// NSE and its gradient with respect to `y_hat`.
pub fn nse_grad<S1, S2, D>(y: &ArrayBase<S1, D>, y_hat: &ArrayBase<S2, D>, eps: f64) -> Result<(f64, Array<f64, D>)>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    check_same_shape(y.shape(), y_hat.shape(), "nse")?;
    let err: Array<f64, D> = Zip::from(y).and(y_hat).map_collect(|&a, &b| a - b);
    let sq: f64 = err.iter().map(|e| e * e).sum();
    let l1: f64 = err.iter().map(|e| e.abs()).sum::<f64>() + eps;
    let value = sq / l1;
    let grad = err.mapv(|e| (-2.0 * e * l1 + sq * sign(e)) / (l1 * l1));
    Ok((value, grad))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `G = F F^T` for features shaped `(N_l, M_l)`.
pub fn gram(features: &Array2<f64>) -> Result<Array2<f64>> {
    let (n, m) = features.dim();
    if n == 0 || m == 0 {
        return Err(Error::ShapeMismatch(format!("gram needs a non-empty matrix, got {n}x{m}")));
    }
    Ok(features.dot(&features.t()))
}

/// Gram matrix divided by the filter count `N_l`.
pub fn gram_normalized(features: &Array2<f64>) -> Result<Array2<f64>> {
    let n = features.nrows() as f64;
    Ok(gram(features)? / n)
}

fn mse_grad(target: &Array2<f64>, x: &Array2<f64>) -> (f64, Array2<f64>) {
    let n = x.len() as f64;
    let diff = x - target;
    let value = diff.iter().map(|d| d * d).sum::<f64>() / n;
    (value, diff * (2.0 / n))
}

fn pair<'a>(a: &'a FeatureSet, b: &'a FeatureSet, layer: &str) -> Result<(&'a Array2<f64>, &'a Array2<f64>)> {
    let ta = a
        .get(layer)
        .ok_or_else(|| Error::LayerMismatch(format!("target lacks layer `{layer}`")))?;
    let tb = b
        .get(layer)
        .ok_or_else(|| Error::LayerMismatch(format!("result lacks layer `{layer}`")))?;
    Ok((ta, tb))
}

/// Weighted content distance; gradients are with respect to `result`.
pub fn content_loss_grad(
    content: &FeatureSet,
    result: &FeatureSet,
    weights: &LayerWeights,
    mode: ContentMode,
) -> Result<(f64, FeatureSet)> {
    let mut total = 0.0;
    let mut grads = FeatureSet::new();
    for (layer, w) in weights.iter() {
        let (c, x) = pair(content, result, layer)?;
        if c.dim() != x.dim() {
            return Err(Error::ShapeMismatch(format!(
                "content layer `{layer}`: {:?} vs {:?}",
                c.dim(),
                x.dim()
            )));
        }
        let (v, g) = match mode {
            ContentMode::Mse => mse_grad(c, x),
            ContentMode::Nse => nse_grad(c, x, NSE_EPSILON)?,
        };
        total += w * v;
        grads.insert(layer, g * w);
    }
    Ok((total, grads))
}

pub fn content_loss(content: &FeatureSet, result: &FeatureSet, weights: &LayerWeights, mode: ContentMode) -> Result<f64> {
    content_loss_grad(content, result, weights, mode).map(|(v, _)| v)
}

/// Per-layer style targets: the style image's Grams under `variant`.
pub fn style_targets(style: &FeatureSet, weights: &LayerWeights, variant: StyleVariant) -> Result<FeatureSet> {
    let mut out = FeatureSet::new();
    for (layer, _) in weights.iter() {
        let f = style
            .get(layer)
            .ok_or_else(|| Error::LayerMismatch(format!("style lacks layer `{layer}`")))?;
        let g = match variant {
            StyleVariant::Gatys => gram(f)?,
            StyleVariant::Crowson => gram_normalized(f)?,
        };
        out.insert(layer, g);
    }
    Ok(out)
}

/// Style distance against precomputed target Grams (see [`style_targets`]).
pub fn style_loss_from_targets(
    targets: &FeatureSet,
    result: &FeatureSet,
    weights: &LayerWeights,
    variant: StyleVariant,
) -> Result<(f64, FeatureSet)> {
    let mut total = 0.0;
    let mut grads = FeatureSet::new();
    for (layer, w) in weights.iter() {
        let (s_gram, x) = pair(targets, result, layer)?;
        let (n, m) = x.dim();
        if s_gram.dim() != (n, n) {
            return Err(Error::ShapeMismatch(format!(
                "style layer `{layer}` has {} channels, result has {n}",
                s_gram.nrows()
            )));
        }
        let (v, g) = match variant {
            StyleVariant::Gatys => {
                let k = 1.0 / (4.0 * (n * n) as f64 * (m * m) as f64);
                let d = gram(x)? - s_gram;
                let v = k * d.iter().map(|e| e * e).sum::<f64>();
                (v, d.dot(x) * (4.0 * k))
            }
            StyleVariant::Crowson => {
                let x_gram = gram_normalized(x)?;
                let (v, dg) = nse_grad(s_gram, &x_gram, NSE_EPSILON)?;
                let sym = &dg + &dg.t();
                (v, sym.dot(x) / n as f64)
            }
        };
        total += w * v;
        grads.insert(layer, g * w);
    }
    Ok((total, grads))
}

pub fn style_loss_grad(
    style: &FeatureSet,
    result: &FeatureSet,
    weights: &LayerWeights,
    variant: StyleVariant,
) -> Result<(f64, FeatureSet)> {
    for (layer, _) in weights.iter() {
        let (s, x) = pair(style, result, layer)?;
        if s.nrows() != x.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "style layer `{layer}` has {} channels, result has {}",
                s.nrows(),
                x.nrows()
            )));
        }
    }
    let targets = style_targets(style, weights, variant)?;
    style_loss_from_targets(&targets, result, weights, variant)
}

pub fn style_loss(style: &FeatureSet, result: &FeatureSet, weights: &LayerWeights, variant: StyleVariant) -> Result<f64> {
    style_loss_grad(style, result, weights, variant).map(|(v, _)| v)
}

/// Squared forward differences over `(C, H, W)` planes, divided by the number
/// of valid difference positions per plane, `H (W - 1) + (H - 1) W`, and
/// summed over planes.
pub fn tv_loss_grad(planes: ArrayView3<'_, f64>) -> Result<(f64, Array3<f64>)> {
    let (c, h, w) = planes.dim();
    if h < 2 || w < 2 {
        return Err(Error::ImageTooSmall(format!("total variation needs at least 2x2, got {h}x{w}")));
    }
    let count = (h * (w - 1) + (h - 1) * w) as f64;
    let mut value = 0.0;
    let mut grad = Array3::zeros((c, h, w));
    for ch in 0..c {
        let p = planes.index_axis(Axis(0), ch);
        let mut g = grad.index_axis_mut(Axis(0), ch);
        for y in 0..h {
            for x in 0..w {
                if x + 1 < w {
                    let d = p[[y, x + 1]] - p[[y, x]];
                    value += d * d;
                    g[[y, x + 1]] += 2.0 * d / count;
                    g[[y, x]] -= 2.0 * d / count;
                }
                if y + 1 < h {
                    let d = p[[y + 1, x]] - p[[y, x]];
                    value += d * d;
                    g[[y + 1, x]] += 2.0 * d / count;
                    g[[y, x]] -= 2.0 * d / count;
                }
            }
        }
    }
    Ok((value / count, grad))
}

pub fn tv_loss(planes: ArrayView3<'_, f64>) -> Result<f64> {
    tv_loss_grad(planes).map(|(v, _)| v)
}

/// Value of every objective term. `content`, `style` and `tv` are unweighted;
/// the facial terms already include their weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub content: f64,
    pub style: f64,
    pub tv: f64,
    pub facial_features: f64,
    pub facial_mesh: f64,
    pub total: f64,
}

impl LossBreakdown {
    #[allow(clippy::too_many_arguments)]
    pub fn combine(alpha: f64, beta: f64, gamma: f64, content: f64, style: f64, tv: f64, facial_features: f64, facial_mesh: f64) -> Self {
        let mut total = 0.0;
        for (w, v) in [(alpha, content), (beta, style), (gamma, tv)] {
            if w != 0.0 {
                total += w * v;
            }
        }
        total += facial_features + facial_mesh;
        Self {
            content,
            style,
            tv,
            facial_features,
            facial_mesh,
            total,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.content, self.style, self.tv, self.facial_features, self.facial_mesh, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}
