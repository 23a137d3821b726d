mod common;

use common::random_array;
use facestyle::backbones::{ConstantMatting, Matte};
use facestyle::config::{Preset, StyleTransferConfig};
use facestyle::image::Image;
use facestyle::preprocess::{binarize_matte, prepare_content, replace_background};
use proptest::prelude::*;

proptest! {
    #[test]
    fn replacement_is_a_convex_combination(seed in any::<u64>(), r in 0.0f64..=1.0, g in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let mut rng = common::rng(seed);
        let img = Image::from_array(random_array(&mut rng, (3, 6, 7), 0.0, 1.0)).unwrap();
        let matte = Matte::new(random_array(&mut rng, (6, 7), 0.0, 1.0));
        let color = [r, g, b];
        let out = replace_background(&img, &matte, color).unwrap();
        for ((c, y, x), v) in out.as_array().indexed_iter() {
            let (p, fill) = (img.as_array()[[c, y, x]], color[c]);
            prop_assert!(*v >= p.min(fill) - 1e-12 && *v <= p.max(fill) + 1e-12);
        }
        let hard = binarize_matte(&matte, 0.5);
        let out = replace_background(&img, &hard, color).unwrap();
        for ((c, y, x), v) in out.as_array().indexed_iter() {
            let want = if matte.alpha()[[y, x]] >= 0.5 { img.as_array()[[c, y, x]] } else { color[c] };
            prop_assert_eq!(*v, want);
        }
    }
}

#[test]
fn background_removal_is_opt_in() {
    let img = common::portrait(12, 10);
    let mut cfg = StyleTransferConfig::preset(Preset::Ps);
    let matting = ConstantMatting(0.0);
    assert_eq!(prepare_content(&img, &cfg, &matting).unwrap(), img);
    cfg.remove_background = true;
    cfg.bg_color = [0.25, 0.5, 0.75];
    let out = prepare_content(&img, &cfg, &matting).unwrap();
    assert_eq!(out, Image::filled(12, 10, [0.25, 0.5, 0.75]));
}

#[test]
fn mismatched_matte_is_rejected() {
    let img = Image::filled(4, 4, [0.5; 3]);
    assert!(replace_background(&img, &Matte::constant(4, 5, 1.0), [0.0; 3]).is_err());
    assert!(replace_background(&img, &Matte::constant(4, 4, 1.0), [2.0, 0.0, 0.0]).is_err());
}
