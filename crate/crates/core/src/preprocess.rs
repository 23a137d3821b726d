//! Background replacement on the content image.

use ndarray::Zip;

use crate::backbones::{compute_matte, Matte, Matting};
use crate::config::StyleTransferConfig;
use crate::error::{Error, Result};
use crate::image::Image;

/// `alpha * img + (1 - alpha) * color` per pixel.
pub fn replace_background(img: &Image, matte: &Matte, color: [f64; 3]) -> Result<Image> {
    if (matte.height(), matte.width()) != (img.height(), img.width()) {
        return Err(Error::ShapeMismatch(format!(
            "matte is {}x{}, image is {}x{}",
            matte.height(),
            matte.width(),
            img.height(),
            img.width()
        )));
    }
    if color.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(Error::InvalidArgument(format!("background color {color:?} is outside [0, 1]")));
    }
    let mut out = img.as_array().clone();
    for (c, &fill) in color.iter().enumerate() {
        let mut plane = out.index_axis_mut(ndarray::Axis(0), c);
        Zip::from(&mut plane).and(matte.alpha()).for_each(|p, &a| {
            *p = a * *p + (1.0 - a) * fill;
        });
    }
    Image::from_array(out)
}

/// Matte with every alpha at or above `threshold` set to 1 and the rest to 0.
pub fn binarize_matte(matte: &Matte, threshold: f64) -> Matte {
    Matte::new(matte.alpha().mapv(|a| if a >= threshold { 1.0 } else { 0.0 }))
}

/// Applies the configured background replacement to a content image.
pub fn prepare_content(content: &Image, config: &StyleTransferConfig, matting: &dyn Matting) -> Result<Image> {
    if !config.remove_background {
        return Ok(content.clone());
    }
    let mut matte = compute_matte(matting, content)?;
    if let Some(t) = config.matte_threshold {
        matte = binarize_matte(&matte, t);
    }
    replace_background(content, &matte, config.bg_color)
}
