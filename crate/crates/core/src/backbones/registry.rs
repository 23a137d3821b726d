//! Pretrained weight registry and loader.
//!
//! A registry is a JSON object keyed by backbone kind:
//!
//! ```json
//! {
//!   "vgg19": { "url": "https://.../vgg19.safetensors", "sha256": "ab12..." },
//!   "face_recognizer": {
//!     "url": "weights/facenet.safetensors",
//!     "sha256": "...",
//!     "graph": "graphs/facenet.json",
//!     "aliases": { "conv_1a": "conv2d_1a" }
//!   }
//! }
//! ```
//!
//! Weights are safetensors files (F32 or F64). Local paths are resolved
//! relative to the registry file; remote URLs are looked up in the cache
//! directory (see [`CACHE_ENV`]) by file name and are never downloaded here.
//! Every artifact is verified against its pinned SHA-256 before use.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Array4, ArrayD, IxDyn};
use safetensors::{Dtype, SafeTensors};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::detect::NetworkDetector;
use super::graph::{Graph, Op};
use super::matting::NetworkMatting;
use super::{Backbone, BackboneKind, LayerRole, Normalization, EMBEDDING_LAYER, MESH_CROP, MESH_LAYER};
use crate::error::{Error, Result};

/// Environment variable overriding the weight cache directory.
pub const CACHE_ENV: &str = "FACESTYLE_CACHE_DIR";

pub fn cache_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os(CACHE_ENV) {
        return PathBuf::from(dir);
    }
    let home = std::env::var_os("HOME").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
    home.join(".cache").join("facestyle")
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub url: String,
    pub sha256: String,
    /// Graph description file; optional for `vgg19`, which has a built-in one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<String>,
    /// Public layer name to graph node name; merged over the kind's defaults.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub aliases: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Normalization>,
    /// Fixed network input `[height, width]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_size: Option<[usize; 2]>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Registry {
    entries: BTreeMap<String, RegistryEntry>,
    base_dir: PathBuf,
}

impl Registry {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries: BTreeMap<String, RegistryEntry> = serde_json::from_str(&text)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { entries, base_dir })
    }

    pub fn from_entries(entries: BTreeMap<String, RegistryEntry>, base_dir: impl Into<PathBuf>) -> Self {
        Self {
            entries,
            base_dir: base_dir.into(),
        }
    }

    pub fn entry(&self, kind: BackboneKind) -> Option<&RegistryEntry> {
        self.entries.get(kind.as_str())
    }

    fn resolve_local(&self, p: &str) -> PathBuf {
        let p = p.strip_prefix("file://").unwrap_or(p);
        let path = PathBuf::from(p);
        if path.is_absolute() {
            path
        } else {
            self.base_dir.join(path)
        }
    }

    fn weights_path(&self, kind: BackboneKind, entry: &RegistryEntry) -> Result<PathBuf> {
        let path = if entry.url.starts_with("http://") || entry.url.starts_with("https://") {
            let name = entry.url.rsplit('/').next().filter(|n| !n.is_empty()).unwrap_or(kind.as_str());
            cache_dir().join(name)
        } else {
            self.resolve_local(&entry.url)
        };
        if !path.is_file() {
            return Err(Error::MissingWeights {
                kind: kind.to_string(),
                detail: format!("expected {} (source: {})", path.display(), entry.url),
            });
        }
        Ok(path)
    }
}

/// A loaded pretrained model, by role.
#[derive(Debug)]
pub enum Pretrained {
    Features(Backbone),
    Detector(NetworkDetector),
    Matting(NetworkMatting),
}

impl Pretrained {
    pub fn into_backbone(self) -> Option<Backbone> {
        match self {
            Pretrained::Features(b) => Some(b),
            _ => None,
        }
    }
}

/// One node of a serialized graph. Tensor fields name entries of the
/// weight file. `inputs` defaults to the preceding node.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub op: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub running_mean: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub running_var: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<usize>,
    /// Negative slope for `leaky_relu`, factor for `scale`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub nodes: Vec<NodeSpec>,
}

pub fn load_graph_spec(path: impl AsRef<Path>) -> Result<GraphSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// torchvision VGG-19 `features` up to `relu5_1` (index 29).
pub fn vgg19_graph() -> GraphSpec {
    const CFG: [Option<usize>; 21] = [
        Some(64), Some(64), None,
        Some(128), Some(128), None,
        Some(256), Some(256), Some(256), Some(256), None,
        Some(512), Some(512), Some(512), Some(512), None,
        Some(512), Some(512), Some(512), Some(512), None,
    ];
    let mut nodes = Vec::new();
    let mut idx = 0usize;
    for entry in CFG {
        match entry {
            Some(_) => {
                nodes.push(NodeSpec {
                    name: format!("features.{idx}"),
                    op: "conv2d".into(),
                    weight: Some(format!("features.{idx}.weight")),
                    bias: Some(format!("features.{idx}.bias")),
                    stride: Some(1),
                    padding: Some(1),
                    ..Default::default()
                });
                nodes.push(NodeSpec {
                    name: format!("features.{}", idx + 1),
                    op: "relu".into(),
                    ..Default::default()
                });
                idx += 2;
            }
            None => {
                nodes.push(NodeSpec {
                    name: format!("features.{idx}"),
                    op: "max_pool".into(),
                    kernel: Some(2),
                    stride: Some(2),
                    ..Default::default()
                });
                idx += 1;
            }
        }
        if idx > 29 {
            break;
        }
    }
    GraphSpec { nodes }
}

fn default_aliases(kind: BackboneKind) -> Vec<(&'static str, &'static str, LayerRole)> {
    match kind {
        BackboneKind::Vgg19 => vec![
            ("relu1_1", "features.1", LayerRole::Style),
            ("relu2_1", "features.6", LayerRole::Style),
            ("relu3_1", "features.11", LayerRole::Style),
            ("relu4_1", "features.20", LayerRole::Style),
            ("relu4_2", "features.22", LayerRole::Content),
            ("relu5_1", "features.29", LayerRole::Style),
        ],
        // Inception-ResNet-V1 module names as exported by facenet-pytorch.
        BackboneKind::FaceRecognizer => vec![
            ("conv_1a", "conv2d_1a", LayerRole::Facial),
            ("conv_2a", "conv2d_2a", LayerRole::Facial),
            ("maxpool_3a", "maxpool_3a", LayerRole::Facial),
            ("conv_4a", "conv2d_4a", LayerRole::Facial),
            ("conv_4b", "conv2d_4b", LayerRole::Facial),
            (EMBEDDING_LAYER, "last_bn", LayerRole::Output),
        ],
        BackboneKind::FaceMesher => vec![(MESH_LAYER, MESH_LAYER, LayerRole::Output)],
        BackboneKind::FaceDetector => vec![
            (NetworkDetector::SCORES, NetworkDetector::SCORES, LayerRole::Output),
            (NetworkDetector::BOXES, NetworkDetector::BOXES, LayerRole::Output),
        ],
        BackboneKind::Matting => vec![(NetworkMatting::ALPHA, NetworkMatting::ALPHA, LayerRole::Output)],
        BackboneKind::Stub => Vec::new(),
    }
}

fn default_normalization(kind: BackboneKind) -> Normalization {
    match kind {
        BackboneKind::Vgg19 => Normalization::imagenet(),
        BackboneKind::FaceRecognizer | BackboneKind::FaceMesher => Normalization::symmetric(),
        _ => Normalization::Identity,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Loads and verifies the pretrained model registered for `kind`.
pub fn load_pretrained(kind: &str, registry: &Registry) -> Result<Pretrained> {
    let kind: BackboneKind = kind.parse()?;
    if kind == BackboneKind::Stub {
        return Err(Error::UnsupportedKind(kind.to_string()));
    }
    let entry = registry.entry(kind).ok_or_else(|| Error::MissingWeights {
        kind: kind.to_string(),
        detail: "no registry entry".into(),
    })?;
    let path = registry.weights_path(kind, entry)?;
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let actual = sha256_hex(&bytes);
    if !actual.eq_ignore_ascii_case(entry.sha256.trim()) {
        return Err(Error::ChecksumMismatch {
            path,
            expected: entry.sha256.clone(),
            actual,
        });
    }
    let tensors = read_tensors(&bytes)?;
    let spec = match (&entry.graph, kind) {
        (Some(g), _) => load_graph_spec(registry.resolve_local(g))?,
        (None, BackboneKind::Vgg19) => vgg19_graph(),
        (None, _) => return Err(Error::Model(format!("registry entry for {kind} needs a graph file"))),
    };
    let graph = build_graph(&spec, &tensors)?;

    let mut exposed: Vec<(String, String, LayerRole)> = Vec::new();
    for (public, node, role) in default_aliases(kind) {
        let node = entry.aliases.get(public).map(String::as_str).unwrap_or(node);
        exposed.push((public.to_string(), node.to_string(), role));
    }
    for (public, node) in &entry.aliases {
        if !exposed.iter().any(|(p, _, _)| p == public) {
            exposed.push((public.clone(), node.clone(), LayerRole::Output));
        }
    }
    let normalization = entry.normalization.clone().unwrap_or_else(|| default_normalization(kind));
    let input_size = entry.input_size.map(|[h, w]| (h, w));
    let backbone = Backbone::new(kind, graph, normalization, &exposed)?;

    Ok(match kind {
        BackboneKind::Vgg19 | BackboneKind::FaceRecognizer => Pretrained::Features(backbone.with_input_size(input_size)),
        BackboneKind::FaceMesher => {
            Pretrained::Features(backbone.with_input_size(Some(input_size.unwrap_or((MESH_CROP, MESH_CROP)))))
        }
        BackboneKind::FaceDetector => {
            let size = input_size.ok_or_else(|| Error::Model("face_detector entry needs input_size".into()))?;
            Pretrained::Detector(NetworkDetector::new(backbone, size)?)
        }
        BackboneKind::Matting => {
            Pretrained::Matting(NetworkMatting::new(backbone, input_size.unwrap_or((512, 512)))?)
        }
        BackboneKind::Stub => unreachable!(),
    })
}

fn read_tensors(bytes: &[u8]) -> Result<HashMap<String, ArrayD<f64>>> {
    let st = SafeTensors::deserialize(bytes).map_err(|e| Error::Model(format!("safetensors: {e}")))?;
    let mut out = HashMap::new();
    for (name, view) in st.tensors() {
        let data = view.data();
        let values: Vec<f64> = match view.dtype() {
            Dtype::F32 => data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect(),
            Dtype::F64 => data
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect(),
            other => return Err(Error::Model(format!("tensor `{name}` has unsupported dtype {other:?}"))),
        };
        let arr = ArrayD::from_shape_vec(IxDyn(view.shape()), values)
            .map_err(|e| Error::Model(format!("tensor `{name}`: {e}")))?;
        out.insert(name, arr);
    }
    Ok(out)
}

fn tensor<'a>(tensors: &'a HashMap<String, ArrayD<f64>>, node: &NodeSpec, key: &Option<String>, what: &str) -> Result<&'a ArrayD<f64>> {
    let name = key
        .as_ref()
        .ok_or_else(|| Error::Model(format!("node `{}` needs a `{what}` tensor", node.name)))?;
    tensors
        .get(name)
        .ok_or_else(|| Error::Model(format!("tensor `{name}` missing from weights")))
}

fn vector(t: &ArrayD<f64>, node: &NodeSpec) -> Result<Array1<f64>> {
    t.clone()
        .into_dimensionality()
        .map_err(|_| Error::Model(format!("node `{}`: expected a vector tensor", node.name)))
}

pub(crate) fn build_graph(spec: &GraphSpec, tensors: &HashMap<String, ArrayD<f64>>) -> Result<Graph> {
    let mut g = Graph::new();
    let mut prev = Graph::INPUT.to_string();
    for n in &spec.nodes {
        let bias = match &n.bias {
            Some(_) => Some(vector(tensor(tensors, n, &n.bias, "bias")?, n)?),
            None => None,
        };
        let op = match n.op.as_str() {
            "conv2d" => Op::Conv2d {
                weight: tensor(tensors, n, &n.weight, "weight")?
                    .clone()
                    .into_dimensionality::<ndarray::Ix4>()
                    .map_err(|_| Error::Model(format!("node `{}`: conv weight must be 4-D", n.name)))
                    .map(|w: Array4<f64>| w.as_standard_layout().to_owned())?,
                bias,
                stride: n.stride.unwrap_or(1),
                padding: n.padding.unwrap_or(0),
            },
            "linear" => Op::Linear {
                weight: tensor(tensors, n, &n.weight, "weight")?
                    .clone()
                    .into_dimensionality::<ndarray::Ix2>()
                    .map_err(|_| Error::Model(format!("node `{}`: linear weight must be 2-D", n.name)))
                    .map(|w: Array2<f64>| w.as_standard_layout().to_owned())?,
                bias,
            },
            "batchnorm" => {
                let mean = vector(tensor(tensors, n, &n.running_mean, "running_mean")?, n)?;
                let var = vector(tensor(tensors, n, &n.running_var, "running_var")?, n)?;
                let gamma = match &n.weight {
                    Some(_) => vector(tensor(tensors, n, &n.weight, "weight")?, n)?,
                    None => Array1::ones(mean.len()),
                };
                let beta = bias.unwrap_or_else(|| Array1::zeros(mean.len()));
                let eps = n.eps.unwrap_or(1e-5);
                let scale = &gamma / &var.mapv(|v| (v + eps).sqrt());
                let shift = &beta - &(&scale * &mean);
                Op::Affine { scale, shift }
            }
            "relu" => Op::Relu,
            "leaky_relu" => Op::LeakyRelu(n.value.unwrap_or(0.01)),
            "prelu" => Op::Prelu(vector(tensor(tensors, n, &n.weight, "weight")?, n)?),
            "tanh" => Op::Tanh,
            "sigmoid" => Op::Sigmoid,
            "max_pool" => Op::MaxPool {
                kernel: n.kernel.unwrap_or(2),
                stride: n.stride.or(n.kernel).unwrap_or(2),
                padding: n.padding.unwrap_or(0),
            },
            "avg_pool" => Op::AvgPool {
                kernel: n.kernel.unwrap_or(2),
                stride: n.stride.or(n.kernel).unwrap_or(2),
            },
            "global_avg_pool" => Op::GlobalAvgPool,
            "add" => Op::Add,
            "concat" => Op::Concat,
            "scale" => Op::Scale(n.value.unwrap_or(1.0)),
            other => return Err(Error::Model(format!("node `{}`: unknown op `{other}`", n.name))),
        };
        let inputs: Vec<String> = n.inputs.clone().unwrap_or_else(|| vec![prev.clone()]);
        let refs: Vec<&str> = inputs.iter().map(String::as_str).collect();
        g.push(n.name.clone(), op, &refs)?;
        prev = n.name.clone();
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use safetensors::tensor::TensorView;

    fn write_f32(path: &Path, tensors: &[(String, Vec<usize>, Vec<f32>)]) -> String {
        let bytes: Vec<(String, Vec<u8>, Vec<usize>)> = tensors
            .iter()
            .map(|(n, s, v)| (n.clone(), v.iter().flat_map(|x| x.to_le_bytes()).collect(), s.clone()))
            .collect();
        let views: Vec<(String, TensorView)> = bytes
            .iter()
            .map(|(n, b, s)| (n.clone(), TensorView::new(Dtype::F32, s.clone(), b).unwrap()))
            .collect();
        let out = safetensors::serialize(views, &None).unwrap();
        std::fs::write(path, &out).unwrap();
        sha256_hex(&out)
    }

    fn registry_with(kind: &str, entry: RegistryEntry, dir: &Path) -> Registry {
        let mut m = BTreeMap::new();
        m.insert(kind.to_string(), entry);
        Registry::from_entries(m, dir)
    }

    #[test]
    fn unknown_kind() {
        let r = Registry::default();
        assert!(matches!(load_pretrained("alexnet", &r), Err(Error::UnsupportedKind(_))));
    }

    #[test]
    fn missing_weights() {
        let dir = tempfile::tempdir().unwrap();
        let r = Registry::default();
        assert!(matches!(load_pretrained("vgg19", &r), Err(Error::MissingWeights { .. })));
        let r = registry_with(
            "vgg19",
            RegistryEntry {
                url: "nope.safetensors".into(),
                sha256: "00".into(),
                ..Default::default()
            },
            dir.path(),
        );
        assert!(matches!(load_pretrained("vgg19", &r), Err(Error::MissingWeights { .. })));
    }

    #[test]
    fn corrupted_file_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mesh.safetensors");
        let sum = write_f32(&p, &[("w".into(), vec![2, 2], vec![1.0, 2.0, 3.0, 4.0])]);
        let mut bytes = std::fs::read(&p).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        std::fs::write(&p, bytes).unwrap();
        let r = registry_with(
            "face_mesher",
            RegistryEntry {
                url: "mesh.safetensors".into(),
                sha256: sum,
                ..Default::default()
            },
            dir.path(),
        );
        assert!(matches!(load_pretrained("face_mesher", &r), Err(Error::ChecksumMismatch { .. })));
    }

    #[test]
    fn graph_file_with_batchnorm_and_aliases() {
        let dir = tempfile::tempdir().unwrap();
        let wp = dir.path().join("m.safetensors");
        let conv: Vec<f32> = (0..2 * 3 * 9).map(|i| (i as f32 - 20.0) / 50.0).collect();
        let sum = write_f32(
            &wp,
            &[
                ("c.w".into(), vec![2, 3, 3, 3], conv),
                ("bn.mean".into(), vec![2], vec![0.1, -0.1]),
                ("bn.var".into(), vec![2], vec![4.0, 1.0]),
                ("bn.g".into(), vec![2], vec![1.0, 2.0]),
                ("bn.b".into(), vec![2], vec![0.0, 0.5]),
            ],
        );
        let spec = GraphSpec {
            nodes: vec![
                NodeSpec { name: "c".into(), op: "conv2d".into(), weight: Some("c.w".into()), padding: Some(1), ..Default::default() },
                NodeSpec {
                    name: "bn".into(),
                    op: "batchnorm".into(),
                    weight: Some("bn.g".into()),
                    bias: Some("bn.b".into()),
                    running_mean: Some("bn.mean".into()),
                    running_var: Some("bn.var".into()),
                    eps: Some(0.0),
                    ..Default::default()
                },
                NodeSpec { name: "act".into(), op: "tanh".into(), ..Default::default() },
            ],
        };
        std::fs::write(dir.path().join("g.json"), serde_json::to_string(&spec).unwrap()).unwrap();
        let mut aliases = BTreeMap::new();
        aliases.insert("mesh".to_string(), "act".to_string());
        aliases.insert("pre".to_string(), "bn".to_string());
        let r = registry_with(
            "face_mesher",
            RegistryEntry {
                url: format!("file://{}", wp.display()),
                sha256: sum.to_uppercase(),
                graph: Some("g.json".into()),
                aliases,
                input_size: Some([4, 4]),
                normalization: Some(Normalization::Identity),
            },
            dir.path(),
        );
        let bb = load_pretrained("face_mesher", &r).unwrap().into_backbone().unwrap();
        assert_eq!(bb.kind(), BackboneKind::FaceMesher);
        assert_eq!(bb.layer("pre").unwrap().channels, 2);
        let img = Image::filled(4, 4, [0.0; 3]);
        let f = bb.extract_features(&img, &["pre"]).unwrap();
        // zero conv output through bn: (0 - mean) / sqrt(var) * g + b
        let pre = f.get("pre").unwrap();
        assert!((pre[[0, 0]] - (-0.1 / 2.0)).abs() < 1e-6);
        assert!((pre[[1, 5]] - (0.1 * 2.0 + 0.5)).abs() < 1e-6);
    }

    #[test]
    fn vgg19_channels_read_from_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let spec = vgg19_graph();
        assert_eq!(spec.nodes.last().unwrap().name, "features.29");
        let mut tensors = Vec::new();
        let mut in_ch = 3;
        for n in spec.nodes.iter().filter(|n| n.op == "conv2d") {
            let idx: usize = n.name["features.".len()..].parse().unwrap();
            let out = match idx {
                0 | 2 => 64,
                5 | 7 => 128,
                10..=16 => 256,
                _ => 512,
            };
            tensors.push((n.weight.clone().unwrap(), vec![out, in_ch, 3, 3], vec![0.0f32; out * in_ch * 9]));
            tensors.push((n.bias.clone().unwrap(), vec![out], vec![0.01f32; out]));
            in_ch = out;
        }
        let wp = dir.path().join("vgg19.safetensors");
        let sum = write_f32(&wp, &tensors);
        let r = registry_with(
            "vgg19",
            RegistryEntry {
                url: "vgg19.safetensors".into(),
                sha256: sum,
                ..Default::default()
            },
            dir.path(),
        );
        let bb = load_pretrained("vgg19", &r).unwrap().into_backbone().unwrap();
        assert_eq!(bb.layer("relu1_1").unwrap().channels, 64);
        assert_eq!(bb.layer("relu3_1").unwrap().channels, 256);
        assert_eq!(bb.layer("relu5_1").unwrap().channels, 512);
        assert_eq!(bb.layer("relu4_2").unwrap().role, LayerRole::Content);
        let f = bb.extract_features(&Image::filled(16, 16, [0.5; 3]), &["relu2_1"]).unwrap();
        assert_eq!(f.get("relu2_1").unwrap().dim(), (128, 64));
    }

    #[test]
    fn remote_urls_resolve_into_cache() {
        let dir = tempfile::tempdir().unwrap();
        let r = registry_with(
            "vgg19",
            RegistryEntry {
                url: "https://example.invalid/models/vgg19-xyz.safetensors".into(),
                sha256: "00".into(),
                ..Default::default()
            },
            dir.path(),
        );
        match load_pretrained("vgg19", &r) {
            Err(Error::MissingWeights { detail, .. }) => assert!(detail.contains("vgg19-xyz.safetensors")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
