//! Seeded random-weight networks standing in for pretrained backbones.

use ndarray::{Array1, Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Op};
use super::{Backbone, BackboneKind, LayerRole, Normalization, EMBEDDING_LAYER, MESH_CROP, MESH_LAYER, MESH_VERTICES};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StubLayer {
    Conv {
        name: String,
        kernel: usize,
        channels: usize,
        activation: Activation,
        stride: usize,
    },
    MaxPool {
        name: String,
        kernel: usize,
        stride: usize,
    },
}

impl StubLayer {
    pub fn conv(name: impl Into<String>, kernel: usize, channels: usize, activation: Activation) -> Self {
        StubLayer::Conv {
            name: name.into(),
            kernel,
            channels,
            activation,
            stride: 1,
        }
    }

    pub fn max_pool(name: impl Into<String>, kernel: usize, stride: usize) -> Self {
        StubLayer::MaxPool {
            name: name.into(),
            kernel,
            stride,
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        if let StubLayer::Conv { stride, .. } = &mut self {
            *stride = s;
        }
        self
    }

    pub fn name(&self) -> &str {
        match self {
            StubLayer::Conv { name, .. } | StubLayer::MaxPool { name, .. } => name,
        }
    }
}

/// Builds a convolutional stack with fixed random weights drawn from `seed`.
///
/// Each arch entry becomes one exposed layer. Layers with a nonlinearity
/// carry a bias; linear layers do not, so an all-identity arch is a linear
/// map of the image.
pub fn stub_backbone(seed: u64, arch: &[StubLayer]) -> Result<Backbone> {
    let (graph, exposed) = build_stack(seed, arch, LayerRole::Content)?;
    Backbone::new(BackboneKind::Stub, graph, Normalization::Identity, &exposed)
}

type Exposed = Vec<(String, String, LayerRole)>;

fn build_stack(seed: u64, arch: &[StubLayer], role: LayerRole) -> Result<(Graph, Exposed)> {
    if arch.is_empty() {
        return Err(Error::InvalidArgument("stub arch must not be empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graph = Graph::new();
    let mut exposed = Vec::with_capacity(arch.len());
    let mut in_ch = 3;
    for layer in arch {
        match layer {
            StubLayer::Conv {
                name,
                kernel,
                channels,
                activation,
                stride,
            } => {
                let fan_in = (in_ch * kernel * kernel) as f64;
                let bound = (6.0 / fan_in).sqrt();
                let weight =
                    Array4::from_shape_simple_fn((*channels, in_ch, *kernel, *kernel), || rng.random_range(-bound..bound));
                let bias = (*activation != Activation::Identity)
                    .then(|| Array1::from_shape_simple_fn(*channels, || rng.random_range(-0.1..0.1)));
                let conv = Op::Conv2d {
                    weight,
                    bias,
                    stride: *stride,
                    padding: kernel / 2,
                };
                match activation {
                    Activation::Identity => {
                        graph.chain(name.clone(), conv)?;
                    }
                    Activation::Relu | Activation::Tanh => {
                        graph.chain(format!("{name}.conv"), conv)?;
                        let act = if *activation == Activation::Relu { Op::Relu } else { Op::Tanh };
                        graph.chain(name.clone(), act)?;
                    }
                }
                in_ch = *channels;
            }
            StubLayer::MaxPool { name, kernel, stride } => {
                graph.chain(
                    name.clone(),
                    Op::MaxPool {
                        kernel: *kernel,
                        stride: *stride,
                        padding: 0,
                    },
                )?;
            }
        }
        exposed.push((layer.name().to_string(), layer.name().to_string(), role));
    }
    Ok((graph, exposed))
}

/// A single 1x1 convolution with identity weights: features are the image channels.
pub fn identity_backbone(layer: &str) -> Backbone {
    let mut weight = Array4::zeros((3, 3, 1, 1));
    for c in 0..3 {
        weight[[c, c, 0, 0]] = 1.0;
    }
    let mut graph = Graph::new();
    graph
        .chain(
            layer,
            Op::Conv2d {
                weight,
                bias: None,
                stride: 1,
                padding: 0,
            },
        )
        .expect("fresh graph");
    Backbone::new(
        BackboneKind::Stub,
        graph,
        Normalization::Identity,
        &[(layer.to_string(), layer.to_string(), LayerRole::Content)],
    )
    .expect("identity backbone is well formed")
}

/// Small VGG-shaped classifier exposing `relu1_1 .. relu5_1` and `relu4_2`.
pub fn stub_classifier(seed: u64) -> Backbone {
    let arch = [
        StubLayer::conv("relu1_1", 3, 8, Activation::Relu),
        StubLayer::conv("relu2_1", 3, 12, Activation::Relu).stride(2),
        StubLayer::conv("relu3_1", 3, 16, Activation::Relu).stride(2),
        StubLayer::conv("relu4_1", 3, 16, Activation::Relu).stride(2),
        StubLayer::conv("relu4_2", 3, 16, Activation::Relu),
        StubLayer::conv("relu5_1", 3, 16, Activation::Relu).stride(2),
    ];
    let (graph, mut exposed) = build_stack(seed, &arch, LayerRole::Style).expect("static arch");
    for e in exposed.iter_mut().filter(|e| e.0 == "relu4_2") {
        e.2 = LayerRole::Content;
    }
    Backbone::new(BackboneKind::Stub, graph, Normalization::Identity, &exposed).expect("static arch")
}

/// Recognizer stand-in exposing the five facial layers and an embedding.
pub fn stub_face_recognizer(seed: u64) -> Backbone {
    let arch = [
        StubLayer::conv("conv_1a", 3, 8, Activation::Tanh).stride(2),
        StubLayer::conv("conv_2a", 3, 8, Activation::Tanh),
        StubLayer::max_pool("maxpool_3a", 3, 2),
        StubLayer::conv("conv_4a", 3, 12, Activation::Tanh).stride(2),
        StubLayer::conv("conv_4b", 3, 16, Activation::Tanh),
    ];
    let (mut graph, mut exposed) = build_stack(seed, &arch, LayerRole::Facial).expect("static arch");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e4b0);
    graph.chain("pool", Op::GlobalAvgPool).expect("static arch");
    let bound = (6.0f64 / 16.0).sqrt();
    graph
        .chain(
            EMBEDDING_LAYER,
            Op::Linear {
                weight: Array2::from_shape_simple_fn((32, 16), || rng.random_range(-bound..bound)),
                bias: None,
            },
        )
        .expect("static arch");
    exposed.push((EMBEDDING_LAYER.into(), EMBEDDING_LAYER.into(), LayerRole::Output));
    Backbone::new(BackboneKind::Stub, graph, Normalization::symmetric(), &exposed).expect("static arch")
}

/// Mesher stand-in: a fixed linear projection of the (block-averaged) crop
/// onto `468 x 3` vertex coordinates.
pub fn stub_face_mesher(seed: u64) -> Backbone {
    const BLOCK: usize = 16;
    let side = MESH_CROP / BLOCK;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = 3 * side * side;
    let bound = (3.0 / inputs as f64).sqrt();
    let mut graph = Graph::new();
    graph
        .chain("pool", Op::AvgPool { kernel: BLOCK, stride: BLOCK })
        .expect("static arch");
    graph
        .chain(
            MESH_LAYER,
            Op::Linear {
                weight: Array2::from_shape_simple_fn((MESH_VERTICES * 3, inputs), || rng.random_range(-bound..bound)),
                bias: None,
            },
        )
        .expect("static arch");
    Backbone::new(
        BackboneKind::Stub,
        graph,
        Normalization::Identity,
        &[(MESH_LAYER.into(), MESH_LAYER.into(), LayerRole::Output)],
    )
    .expect("static arch")
    .with_input_size(Some((MESH_CROP, MESH_CROP)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use ndarray::Array3;

    fn noise(seed: u64, h: usize, w: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    fn tanh_arch() -> Vec<StubLayer> {
        vec![
            StubLayer::conv("a", 3, 4, Activation::Tanh),
            StubLayer::conv("b", 3, 5, Activation::Tanh).stride(2),
            StubLayer::max_pool("p", 2, 2),
            StubLayer::conv("c", 1, 3, Activation::Identity),
        ]
    }

    #[test]
    fn empty_arch_rejected() {
        assert!(stub_backbone(1, &[]).is_err());
    }

    #[test]
    fn zero_image_gives_bias_response() {
        let bb = stub_backbone(3, &[StubLayer::conv("a", 3, 4, Activation::Tanh)]).unwrap();
        let zero = Image::filled(6, 5, [0.0; 3]);
        let f1 = bb.extract_features(&zero, &["a"]).unwrap();
        let f2 = bb.extract_features(&zero, &["a"]).unwrap();
        assert_eq!(f1, f2);
        let Op::Conv2d { bias: Some(bias), .. } = &bb.graph().nodes()[1].op else {
            panic!("expected biased conv")
        };
        let f = f1.get("a").unwrap();
        for c in 0..4 {
            assert!(f.row(c).iter().all(|v| (v - bias[c].tanh()).abs() < 1e-15));
        }
    }

    #[test]
    fn identity_layer_returns_channels() {
        let bb = identity_backbone("id");
        let img = noise(1, 4, 3);
        let f = bb.extract_features(&img, &["id"]).unwrap();
        let want = img.as_array().clone().into_shape_with_order((3, 12)).unwrap();
        assert_eq!(f.get("id").unwrap(), &want);
    }

    #[test]
    fn seeds_control_weights() {
        let img = noise(2, 8, 8);
        let a = stub_backbone(5, &tanh_arch()).unwrap().extract_features(&img, &["c"]).unwrap();
        let b = stub_backbone(5, &tanh_arch()).unwrap().extract_features(&img, &["c"]).unwrap();
        let c = stub_backbone(6, &tanh_arch()).unwrap().extract_features(&img, &["c"]).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn linear_arch_is_homogeneous() {
        let bb = stub_backbone(9, &[StubLayer::conv("lin", 3, 4, Activation::Identity)]).unwrap();
        let img = noise(4, 6, 6);
        let half = Image::from_array(img.as_array() * 0.5).unwrap();
        let f = bb.extract_features(&img, &["lin"]).unwrap();
        let fh = bb.extract_features(&half, &["lin"]).unwrap();
        for (a, b) in f.get("lin").unwrap().iter().zip(fh.get("lin").unwrap().iter()) {
            assert!((0.5 * a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn request_order_and_unknown_layers() {
        let bb = stub_backbone(1, &tanh_arch()).unwrap();
        let img = noise(3, 8, 8);
        let f = bb.extract_features(&img, &["c", "a", "b"]).unwrap();
        assert_eq!(f.names().collect::<Vec<_>>(), vec!["c", "a", "b"]);
        assert!(matches!(
            bb.extract_features(&img, &["zzz"]),
            Err(Error::UnknownLayer(_))
        ));
        assert_eq!(bb.layer("b").unwrap().channels, 5);
    }

    #[test]
    fn feature_sum_gradient_matches_finite_differences() {
        let bb = stub_backbone(21, &tanh_arch()).unwrap();
        let img = noise(8, 6, 7);
        let layers = ["a", "c"];
        let eval = bb.forward(&img, &layers).unwrap();
        let ones: crate::backbones::FeatureSet = eval
            .features()
            .iter()
            .map(|(n, f)| (n.to_string(), Array2::ones(f.dim())))
            .collect();
        let grad = eval.backward(&ones).unwrap();
        let scalar = |arr: &Array3<f64>| -> f64 {
            let e = bb.forward_array(arr, &layers).unwrap();
            e.features().iter().map(|(_, f)| f.sum()).sum()
        };
        let h = 1e-3;
        for idx in [(0, 0, 0), (1, 3, 4), (2, 5, 6), (0, 2, 1)] {
            let mut p = img.as_array().clone();
            p[idx] += h;
            let mut m = img.as_array().clone();
            m[idx] -= h;
            let fd = (scalar(&p) - scalar(&m)) / (2.0 * h);
            let rel = (fd - grad[idx]).abs() / fd.abs().max(1e-8);
            assert!(rel < 1e-4, "{idx:?}: {fd} vs {}", grad[idx]);
        }
    }

    #[test]
    fn mesher_contract() {
        let mesher = stub_face_mesher(4);
        assert!(matches!(
            mesher.face_mesh(&Image::filled(100, 192, [0.3; 3])),
            Err(Error::WrongCropSize { .. })
        ));
        let crop = noise(5, 192, 192);
        let a = mesher.face_mesh(&crop).unwrap();
        let b = mesher.face_mesh(&crop).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.vertices().dim(), (468, 3));
    }

    #[test]
    fn mesher_gradient_matches_finite_differences() {
        let mesher = stub_face_mesher(7);
        let crop = noise(6, 192, 192);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let wts = Array2::from_shape_simple_fn((1404, 1), || rng.random_range(-1.0..1.0));
        let eval = mesher.forward(&crop, &[MESH_LAYER]).unwrap();
        let mut gs = crate::backbones::FeatureSet::new();
        gs.insert(MESH_LAYER, wts.clone());
        let grad = eval.backward(&gs).unwrap();
        let scalar = |arr: &Array3<f64>| -> f64 {
            let e = mesher.forward_array(arr, &[MESH_LAYER]).unwrap();
            (e.features().get(MESH_LAYER).unwrap() * &wts).sum()
        };
        let h = 1e-3;
        for idx in [(0, 0, 0), (1, 100, 37), (2, 191, 191)] {
            let mut p = crop.as_array().clone();
            p[idx] += h;
            let mut m = crop.as_array().clone();
            m[idx] -= h;
            let fd = (scalar(&p) - scalar(&m)) / (2.0 * h);
            let rel = (fd - grad[idx]).abs() / fd.abs().max(1e-12);
            assert!(rel < 1e-4, "{idx:?}: {fd} vs {}", grad[idx]);
        }
    }

    #[test]
    fn recognizer_exposes_facial_layers() {
        let rec = stub_face_recognizer(1);
        for l in ["conv_1a", "conv_2a", "maxpool_3a", "conv_4a", "conv_4b", EMBEDDING_LAYER] {
            assert!(rec.has_layer(l), "{l}");
        }
        let e = rec.embedding(&noise(3, 192, 192)).unwrap();
        assert_eq!(e.len(), 32);
    }
}
