use ndarray::Axis;

use super::{Backbone, Matte};
use crate::error::{Error, Result};
use crate::image::{resize_exact, resize_planes, Image, ResizeKernel};

/// Foreground matting. Not differentiable; used only for preprocessing.
pub trait Matting: Send + Sync {
    fn matte(&self, img: &Image) -> Result<Matte>;
}

/// Matte with the image's shape and every alpha in `[0, 1]`.
pub fn compute_matte(model: &dyn Matting, img: &Image) -> Result<Matte> {
    let m = model.matte(img)?;
    if (m.height(), m.width()) != (img.height(), img.width()) {
        return Err(Error::ShapeMismatch(format!(
            "matte is {}x{}, image is {}x{}",
            m.height(),
            m.width(),
            img.height(),
            img.width()
        )));
    }
    Ok(m)
}

/// Constant alpha everywhere; `1.0` keeps the whole image as foreground.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantMatting(pub f64);

impl Default for ConstantMatting {
    fn default() -> Self {
        Self(1.0)
    }
}

impl Matting for ConstantMatting {
    fn matte(&self, img: &Image) -> Result<Matte> {
        Ok(Matte::constant(img.height(), img.width(), self.0))
    }
}

/// Matting network exposing a single-channel `alpha` layer at any stride;
/// the output is resized back to the image.
#[derive(Clone, Debug)]
pub struct NetworkMatting {
    network: Backbone,
    input: (usize, usize),
}

impl NetworkMatting {
    pub const ALPHA: &'static str = "alpha";

    pub fn new(network: Backbone, input: (usize, usize)) -> Result<Self> {
        if !network.has_layer(Self::ALPHA) {
            return Err(Error::Model("matting network lacks `alpha` output".into()));
        }
        Ok(Self { network, input })
    }
}

impl Matting for NetworkMatting {
    fn matte(&self, img: &Image) -> Result<Matte> {
        let (ih, iw) = self.input;
        let resized = resize_exact(img, ih, iw, ResizeKernel::Area)?;
        let eval = self.network.forward(&resized, &[Self::ALPHA])?;
        let alpha = eval.features().get(Self::ALPHA).expect("requested");
        if alpha.nrows() != 1 {
            return Err(Error::Model("matting output must have one channel".into()));
        }
        let cells = alpha.ncols();
        let gw = ((cells as f64 * iw as f64 / ih as f64).sqrt().round() as usize).max(1);
        let gh = cells / gw;
        if gh * gw != cells {
            return Err(Error::Model(format!("cannot infer matte grid from {cells} cells")));
        }
        let plane = alpha
            .clone()
            .into_shape_with_order((1, gh, gw))
            .expect("cell count checked");
        let full = resize_planes(plane.view(), img.height(), img.width(), ResizeKernel::Bicubic);
        Ok(Matte::new(full.index_axis(Axis(0), 0).to_owned()))
    }
}
