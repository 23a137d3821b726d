#![allow(dead_code)]

use facestyle::backbones::ColorBlobDetector;
use facestyle::image::Image;
use ndarray::{Array, Dimension, ShapeBuilder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_array<D: Dimension, Sh: ShapeBuilder<Dim = D>>(rng: &mut ChaCha8Rng, shape: Sh, lo: f64, hi: f64) -> Array<f64, D> {
    Array::from_shape_simple_fn(shape, || rng.random_range(lo..hi))
}

/// Central differences of `f` at every element of `x`.
pub fn numeric_grad<D: Dimension>(x: &Array<f64, D>, h: f64, mut f: impl FnMut(&Array<f64, D>) -> f64) -> Array<f64, D> {
    let mut g = Array::zeros(x.raw_dim());
    let mut probe = x.clone();
    for (i, gi) in g.iter_mut().enumerate() {
        let orig = probe.as_slice_mut().unwrap()[i];
        probe.as_slice_mut().unwrap()[i] = orig + h;
        let fp = f(&probe);
        probe.as_slice_mut().unwrap()[i] = orig - h;
        let fm = f(&probe);
        probe.as_slice_mut().unwrap()[i] = orig;
        *gi = (fp - fm) / (2.0 * h);
    }
    g
}

/// Largest elementwise relative error, with errors below `floor` ignored.
pub fn max_rel_err<D: Dimension>(analytic: &Array<f64, D>, numeric: &Array<f64, D>, floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, n)| {
            let diff = (a - n).abs();
            if diff <= floor {
                0.0
            } else {
                diff / a.abs().max(n.abs())
            }
        })
        .fold(0.0, f64::max)
}

/// Background with skin-coloured ellipses centred at `faces` (`(cx, cy, rx, ry)`).
pub fn faces_image(height: usize, width: usize, faces: &[(f64, f64, f64, f64)]) -> Image {
    Image::from_fn(height, width, |y, x| {
        for &(cx, cy, rx, ry) in faces {
            let (dx, dy) = ((x as f64 - cx) / rx, (y as f64 - cy) / ry);
            if dx * dx + dy * dy <= 1.0 {
                let eye = ((x as f64 - cx).abs() - 0.4 * rx).abs() < 0.12 * rx && ((y as f64 - cy) + 0.2 * ry).abs() < 0.1 * ry;
                return if eye { [0.2, 0.15, 0.15] } else { ColorBlobDetector::SKIN };
            }
        }
        let t = (x + 2 * y) as f64 / (width + 2 * height) as f64;
        [0.2 + 0.2 * t, 0.3, 0.55 - 0.2 * t]
    })
}

/// A single-face portrait, `height x width`.
pub fn portrait(height: usize, width: usize) -> Image {
    let (h, w) = (height as f64, width as f64);
    faces_image(height, width, &[(0.5 * w, 0.5 * h, 0.22 * w, 0.32 * h)])
}

/// Two faces with left edges near x = 10 and x = 300 on a 120 x 400 canvas.
pub fn two_face_fixture() -> Image {
    faces_image(120, 400, &[(325.0, 60.0, 25.0, 32.0), (35.0, 58.0, 25.0, 32.0)])
}

/// Colourful stripes used as a style image.
pub fn style_pattern(height: usize, width: usize) -> Image {
    Image::from_fn(height, width, |y, x| {
        let a = ((x as f64) * 0.45).sin() * 0.5 + 0.5;
        let b = ((y as f64) * 0.3 + (x as f64) * 0.1).cos() * 0.5 + 0.5;
        [a, b, 1.0 - 0.5 * (a + b)]
    })
}
