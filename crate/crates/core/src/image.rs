//! Unit-interval RGB rasters, file I/O, resampling and result initialization.
//!
//! Pixels are stored planar as a `(3, height, width)` array of `f64`. Every
//! public constructor and operation clamps to `[0, 1]`, so an [`Image`] never
//! carries out-of-range intensities.

use std::path::Path;

use ndarray::{s, Array2, Array3, ArrayView3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    data: Array3<f64>,
}

impl Image {
    /// Wraps a `(3, H, W)` array, clamping every component into `[0, 1]`.
    /// Non-finite components become 0.
    pub fn from_array(mut data: Array3<f64>) -> Result<Self> {
        let (c, h, w) = data.dim();
        if c != 3 {
            return Err(Error::ShapeMismatch(format!(
                "image needs 3 channels, got {c}"
            )));
        }
        if h == 0 || w == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {h}x{w}"
            )));
        }
        data.mapv_inplace(clamp_unit);
        Ok(Self { data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        let mut data = Array3::zeros((3, height, width));
        for (c, v) in rgb.iter().enumerate() {
            data.index_axis_mut(Axis(0), c).fill(clamp_unit(*v));
        }
        Self { data }
    }

    /// Builds an image from a per-pixel function of `(y, x)` returning RGB.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        let mut data = Array3::zeros((3, height, width));
        for y in 0..height {
            for x in 0..width {
                let px = f(y, x);
                for c in 0..3 {
                    data[[c, y, x]] = clamp_unit(px[c]);
                }
            }
        }
        Self { data }
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn long_side(&self) -> usize {
        self.height().max(self.width())
    }

    pub fn view(&self) -> ArrayView3<'_, f64> {
        self.data.view()
    }

    pub fn as_array(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array3<f64> {
        self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        [
            self.data[[0, y, x]],
            self.data[[1, y, x]],
            self.data[[2, y, x]],
        ]
    }

    /// Largest absolute per-component difference; panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        assert_eq!(self.data.dim(), other.data.dim(), "image shapes differ");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        format_for(path)?;
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let decoded = image::load_from_memory(&bytes)?.to_rgb8();
        let (w, h) = decoded.dimensions();
        let mut data = Array3::zeros((3, h as usize, w as usize));
        for (x, y, px) in decoded.enumerate_pixels() {
            for c in 0..3 {
                data[[c, y as usize, x as usize]] = px[c] as f64 / 255.0;
            }
        }
        Ok(Self { data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let format = format_for(path)?;
        let buf = self.to_rgb8();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = std::io::BufWriter::new(file);
        buf.write_to(&mut writer, format)?;
        Ok(())
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let (h, w) = (self.height(), self.width());
        image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let px = self.pixel(y as usize, x as usize);
            image::Rgb(px.map(|v| (v * 255.0).round() as u8))
        })
    }
}

fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

fn format_for(path: &Path) -> Result<image::ImageFormat> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => Ok(image::ImageFormat::Png),
        "jpg" | "jpeg" => Ok(image::ImageFormat::Jpeg),
        _ => Err(Error::UnsupportedFormat(path.display().to_string())),
    }
}

/// Interpolation kernel used by [`resize`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeKernel {
    /// Exact box averaging with fractional coverage; used for downsampling.
    Area,
    /// Keys cubic convolution (a = -0.5); used for upsampling between stages.
    Bicubic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResizePurpose {
    Downsample,
    Upsample,
}

impl ResizePurpose {
    pub fn kernel(self) -> ResizeKernel {
        match self {
            ResizePurpose::Downsample => ResizeKernel::Area,
            ResizePurpose::Upsample => ResizeKernel::Bicubic,
        }
    }
}

/// Output `(height, width)` when scaling so the longest side becomes `long_side`.
pub fn scaled_dims(height: usize, width: usize, long_side: usize) -> (usize, usize) {
    if height >= width {
        let w = (width as f64 * long_side as f64 / height as f64).round() as usize;
        (long_side, w.max(1))
    } else {
        let h = (height as f64 * long_side as f64 / width as f64).round() as usize;
        (h.max(1), long_side)
    }
}

/// Resizes so that the longest side equals `target_long_side`, preserving aspect.
pub fn resize(img: &Image, target_long_side: usize, purpose: ResizePurpose) -> Result<Image> {
    if target_long_side == 0 {
        return Err(Error::InvalidArgument(
            "target long side must be at least 1".into(),
        ));
    }
    let (h, w) = scaled_dims(img.height(), img.width(), target_long_side);
    resize_exact(img, h, w, purpose.kernel())
}

pub fn resize_exact(img: &Image, height: usize, width: usize, kernel: ResizeKernel) -> Result<Image> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target must be positive, got {height}x{width}"
        )));
    }
    if (height, width) == (img.height(), img.width()) {
        return Ok(img.clone());
    }
    Image::from_array(resize_planes(img.view(), height, width, kernel))
}

/// Resamples every plane of a `(C, H, W)` array. No clamping is applied.
pub fn resize_planes(src: ArrayView3<'_, f64>, height: usize, width: usize, kernel: ResizeKernel) -> Array3<f64> {
    let (c, h, w) = src.dim();
    let rows = weight_table(h, height, kernel);
    let cols = weight_table(w, width, kernel);

    let mut tmp = Array3::<f64>::zeros((c, height, w));
    for ch in 0..c {
        for (oy, taps) in rows.iter().enumerate() {
            let mut out_row = tmp.slice_mut(s![ch, oy, ..]);
            for &(iy, wt) in taps {
                out_row.scaled_add(wt, &src.slice(s![ch, iy, ..]));
            }
        }
    }
    let mut out = Array3::<f64>::zeros((c, height, width));
    for ch in 0..c {
        for (ox, taps) in cols.iter().enumerate() {
            let mut out_col = out.slice_mut(s![ch, .., ox]);
            for &(ix, wt) in taps {
                out_col.scaled_add(wt, &tmp.slice(s![ch, .., ix]));
            }
        }
    }
    out
}

/// Keys cubic convolution kernel with a = -0.5.
pub fn cubic_kernel(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

type Taps = Vec<(usize, f64)>;

fn weight_table(input: usize, output: usize, kernel: ResizeKernel) -> Vec<Taps> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| match kernel {
            ResizeKernel::Bicubic => {
                let src = (o as f64 + 0.5) * scale - 0.5;
                let base = src.floor();
                let frac = src - base;
                let mut taps: Taps = Vec::with_capacity(4);
                for k in -1i64..=2 {
                    let wt = cubic_kernel(k as f64 - frac);
                    if wt == 0.0 {
                        continue;
                    }
                    let idx = (base as i64 + k).clamp(0, input as i64 - 1) as usize;
                    match taps.iter_mut().find(|(i, _)| *i == idx) {
                        Some(t) => t.1 += wt,
                        None => taps.push((idx, wt)),
                    }
                }
                taps
            }
            ResizeKernel::Area => {
                let lo = o as f64 * scale;
                let hi = (o as f64 + 1.0) * scale;
                let first = lo.floor() as usize;
                let last = (hi.ceil() as usize).min(input);
                let mut taps: Taps = (first..last)
                    .filter_map(|i| {
                        let cover = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                        (cover > 0.0).then_some((i, cover / scale))
                    })
                    .collect();
                if taps.is_empty() {
                    taps.push((first.min(input - 1), 1.0));
                }
                taps
            }
        })
        .collect()
}

/// How the first stage's result image is seeded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitStrategy {
    #[default]
    Content,
    Noise,
}

impl std::str::FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "content" => Ok(Self::Content),
            "noise" => Ok(Self::Noise),
            other => Err(Error::InvalidArgument(format!(
                "unknown init strategy `{other}`"
            ))),
        }
    }
}

pub fn init_result(content: &Image, strategy: InitStrategy, seed: u64) -> Image {
    match strategy {
        InitStrategy::Content => content.clone(),
        InitStrategy::Noise => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = Array3::from_shape_simple_fn(content.data.dim(), || rng.random::<f64>());
            Image { data }
        }
    }
}

/// Single-channel `(H, W)` view helper used by mattes and tests.
pub fn plane(img: &Image, channel: usize) -> Array2<f64> {
    img.data.index_axis(Axis(0), channel).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(n: usize) -> Image {
        Image::from_fn(n, n, |y, x| {
            let v = ((x + y) % 2) as f64;
            [v, v, v]
        })
    }

    #[test]
    fn identity_resize_is_pixel_exact() {
        let img = checker(5);
        let out = resize(&img, 5, ResizePurpose::Upsample).unwrap();
        assert_eq!(out, img);
        let out = resize_exact(&img, 5, 5, ResizeKernel::Area).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn constant_stays_constant() {
        let img = Image::filled(7, 11, [0.5, 0.5, 0.5]);
        for target in [1, 3, 11, 17, 40] {
            for purpose in [ResizePurpose::Downsample, ResizePurpose::Upsample] {
                let out = resize(&img, target, purpose).unwrap();
                assert_eq!(out.long_side(), target);
                assert!(out.view().iter().all(|v| (v - 0.5).abs() < 1e-6));
            }
        }
    }

    #[test]
    fn aspect_ratio_preserved() {
        let img = Image::filled(30, 40, [0.2, 0.3, 0.4]);
        let out = resize(&img, 20, ResizePurpose::Downsample).unwrap();
        assert_eq!((out.height(), out.width()), (15, 20));
        let out = resize(&img, 50, ResizePurpose::Upsample).unwrap();
        assert_eq!((out.height(), out.width()), (38, 50));
    }

    #[test]
    fn zero_target_rejected() {
        let img = Image::filled(2, 2, [0.0; 3]);
        assert!(matches!(
            resize(&img, 0, ResizePurpose::Upsample),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn area_halving_averages_blocks() {
        let img = Image::from_fn(4, 4, |y, x| {
            let v = (y * 4 + x) as f64 / 15.0;
            [v, v, v]
        });
        let out = resize(&img, 2, ResizePurpose::Downsample).unwrap();
        let expect = (0.0 + 1.0 + 4.0 + 5.0) / 4.0 / 15.0;
        assert!((out.pixel(0, 0)[0] - expect).abs() < 1e-12);
    }

    // Brute-force 2D cubic convolution over the full 4x4 neighbourhood,
    // independent of the separable weight tables.
    fn reference_bicubic(src: &Image, h: usize, w: usize) -> Array3<f64> {
        let (sh, sw) = (src.height() as i64, src.width() as i64);
        let mut out = Array3::zeros((3, h, w));
        for c in 0..3 {
            for oy in 0..h {
                for ox in 0..w {
                    let fy = (oy as f64 + 0.5) * sh as f64 / h as f64 - 0.5;
                    let fx = (ox as f64 + 0.5) * sw as f64 / w as f64 - 0.5;
                    let mut acc = 0.0;
                    for iy in (fy.floor() as i64 - 1)..=(fy.floor() as i64 + 2) {
                        for ix in (fx.floor() as i64 - 1)..=(fx.floor() as i64 + 2) {
                            let wy = cubic_kernel(fy - iy as f64);
                            let wx = cubic_kernel(fx - ix as f64);
                            let py = iy.clamp(0, sh - 1) as usize;
                            let px = ix.clamp(0, sw - 1) as usize;
                            acc += wy * wx * src.as_array()[[c, py, px]];
                        }
                    }
                    out[[c, oy, ox]] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn checkerboard_upsample_matches_reference() {
        let img = checker(4);
        let got = resize_planes(img.view(), 8, 8, ResizeKernel::Bicubic);
        let want = reference_bicubic(&img, 8, 8);
        for (a, b) in got.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        // The public path clamps the overshoot of the cubic kernel.
        let clamped = resize(&img, 8, ResizePurpose::Upsample).unwrap();
        for (a, b) in clamped.view().iter().zip(want.iter()) {
            assert!((a - b.clamp(0.0, 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn cubic_kernel_partition_of_unity() {
        for i in 0..=10 {
            let t = i as f64 / 10.0;
            let sum: f64 = (-1..=2).map(|k| cubic_kernel(k as f64 - t)).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        assert_eq!(cubic_kernel(0.0), 1.0);
        assert_eq!(cubic_kernel(1.0), 0.0);
        assert_eq!(cubic_kernel(2.0), 0.0);
    }

    #[test]
    fn init_content_is_a_copy() {
        let c = checker(3);
        let mut r = init_result(&c, InitStrategy::Content, 1);
        assert_eq!(r, c);
        r.data[[0, 0, 0]] = 0.25;
        assert_eq!(c.pixel(0, 0)[0], 0.0);
    }

    #[test]
    fn init_noise_seeded() {
        let c = Image::filled(6, 5, [0.5; 3]);
        let a = init_result(&c, InitStrategy::Noise, 7);
        let b = init_result(&c, InitStrategy::Noise, 7);
        let d = init_result(&c, InitStrategy::Noise, 8);
        assert_eq!(a, b);
        assert_ne!(a, d);
        assert_eq!(a.as_array().dim(), c.as_array().dim());
        assert!(a.view().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn from_array_clamps() {
        let mut arr = Array3::zeros((3, 1, 2));
        arr[[0, 0, 0]] = 1.5;
        arr[[1, 0, 1]] = -0.25;
        arr[[2, 0, 0]] = f64::NAN;
        let img = Image::from_array(arr).unwrap();
        assert_eq!(img.pixel(0, 0), [1.0, 0.0, 0.0]);
        assert_eq!(img.pixel(0, 1), [0.0, 0.0, 0.0]);
        assert!(Image::from_array(Array3::zeros((1, 2, 2))).is_err());
    }

    #[test]
    fn io_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let zero = Image::filled(4, 3, [0.0; 3]);
        let p = dir.path().join("zero.png");
        zero.save(&p).unwrap();
        assert_eq!(Image::load(&p).unwrap(), zero);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noisy = Image::from_fn(9, 13, |_, _| [rng.random(), rng.random(), rng.random()]);
        let p = dir.path().join("noise.png");
        noisy.save(&p).unwrap();
        let back = Image::load(&p).unwrap();
        assert!(back.max_abs_diff(&noisy) <= 1.0 / 255.0);

        assert!(matches!(
            Image::load(dir.path().join("missing.png")),
            Err(Error::Io { .. })
        ));
        assert!(matches!(
            zero.save(dir.path().join("x.bmp")),
            Err(Error::UnsupportedFormat(_))
        ));
    }
}
