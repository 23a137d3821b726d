//! Static feed-forward network graphs with reverse-mode gradients.
//!
//! Nodes are stored in topological order; node 0 is always the input. A
//! forward pass keeps every activation so that [`Graph::backward`] can push
//! gradients seeded at arbitrary nodes back to the input. Weights are fixed:
//! only input gradients are computed.

use std::collections::HashMap;

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView3, Axis, Zip};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub enum Op {
    Input,
    /// Weight `(out, in, kh, kw)`, zero padding.
    Conv2d {
        weight: Array4<f64>,
        bias: Option<Array1<f64>>,
        stride: usize,
        padding: usize,
    },
    /// Dense layer over the flattened `(C, H, W)` input; output is `(out, 1, 1)`.
    Linear {
        weight: Array2<f64>,
        bias: Option<Array1<f64>>,
    },
    /// Per-channel `scale * x + shift`; batch norm folds into this at load time.
    Affine {
        scale: Array1<f64>,
        shift: Array1<f64>,
    },
    Relu,
    LeakyRelu(f64),
    Prelu(Array1<f64>),
    Tanh,
    Sigmoid,
    MaxPool {
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    AvgPool {
        kernel: usize,
        stride: usize,
    },
    GlobalAvgPool,
    Add,
    /// Channel-axis concatenation of all inputs.
    Concat,
    Scale(f64),
}

impl Op {
    fn arity(&self) -> Option<usize> {
        match self {
            Op::Input => Some(0),
            Op::Add | Op::Concat => None,
            _ => Some(1),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    index: HashMap<String, usize>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub const INPUT: &'static str = "input";

    pub fn new() -> Self {
        let mut index = HashMap::new();
        index.insert(Self::INPUT.to_string(), 0);
        Self {
            nodes: vec![Node {
                name: Self::INPUT.to_string(),
                op: Op::Input,
                inputs: Vec::new(),
            }],
            index,
        }
    }

    /// Appends a node fed by the named, already-present nodes.
    pub fn push(&mut self, name: impl Into<String>, op: Op, inputs: &[&str]) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Model(format!("duplicate node name `{name}`")));
        }
        if matches!(op, Op::Input) {
            return Err(Error::Model("only one input node is allowed".into()));
        }
        match op.arity() {
            Some(n) if n != inputs.len() => {
                return Err(Error::Model(format!(
                    "node `{name}` expects {n} input(s), got {}",
                    inputs.len()
                )))
            }
            None if inputs.is_empty() => {
                return Err(Error::Model(format!("node `{name}` needs inputs")))
            }
            _ => {}
        }
        let ids = inputs
            .iter()
            .map(|i| {
                self.index
                    .get(*i)
                    .copied()
                    .ok_or_else(|| Error::Model(format!("node `{name}` refers to unknown `{i}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let id = self.nodes.len();
        self.nodes.push(Node { name: name.clone(), op, inputs: ids });
        self.index.insert(name, id);
        Ok(id)
    }

    /// Appends a node fed by the most recently added node.
    pub fn chain(&mut self, name: impl Into<String>, op: Op) -> Result<usize> {
        let prev = self.nodes.last().expect("graph has an input").name.clone();
        self.push(name, op, &[prev.as_str()])
    }

    pub fn node_id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() <= 1
    }

    /// Output shape of every node for a given input shape.
    pub fn infer_shapes(&self, input: (usize, usize, usize)) -> Result<Vec<(usize, usize, usize)>> {
        let mut shapes: Vec<(usize, usize, usize)> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let ins: Vec<_> = node.inputs.iter().map(|&i| shapes[i]).collect();
            let shape = match &node.op {
                Op::Input => input,
                Op::Conv2d { weight, stride, padding, .. } => {
                    let (o, ci, kh, kw) = weight.dim();
                    let (c, h, w) = ins[0];
                    if c != ci {
                        return Err(shape_err(node, format!("expects {ci} channels, got {c}")));
                    }
                    let (oh, ow) = window_out(h, w, kh, kw, *stride, *padding)
                        .ok_or_else(|| shape_err(node, format!("input {h}x{w} smaller than kernel")))?;
                    (o, oh, ow)
                }
                Op::Linear { weight, .. } => {
                    let (o, i) = weight.dim();
                    let (c, h, w) = ins[0];
                    if c * h * w != i {
                        return Err(shape_err(node, format!("expects {i} inputs, got {}", c * h * w)));
                    }
                    (o, 1, 1)
                }
                Op::Affine { scale, .. } => {
                    if scale.len() != ins[0].0 {
                        return Err(shape_err(node, "channel count differs from affine params".into()));
                    }
                    ins[0]
                }
                Op::Prelu(slope) => {
                    if slope.len() != ins[0].0 {
                        return Err(shape_err(node, "channel count differs from prelu params".into()));
                    }
                    ins[0]
                }
                Op::MaxPool { kernel, stride, padding } => {
                    let (c, h, w) = ins[0];
                    let (oh, ow) = window_out(h, w, *kernel, *kernel, *stride, *padding)
                        .ok_or_else(|| shape_err(node, "input smaller than pooling window".into()))?;
                    (c, oh, ow)
                }
                Op::AvgPool { kernel, stride } => {
                    let (c, h, w) = ins[0];
                    let (oh, ow) = window_out(h, w, *kernel, *kernel, *stride, 0)
                        .ok_or_else(|| shape_err(node, "input smaller than pooling window".into()))?;
                    (c, oh, ow)
                }
                Op::GlobalAvgPool => (ins[0].0, 1, 1),
                Op::Add => {
                    if ins.iter().any(|s| *s != ins[0]) {
                        return Err(shape_err(node, "add inputs differ in shape".into()));
                    }
                    ins[0]
                }
                Op::Concat => {
                    let (_, h, w) = ins[0];
                    if ins.iter().any(|s| (s.1, s.2) != (h, w)) {
                        return Err(shape_err(node, "concat inputs differ spatially".into()));
                    }
                    (ins.iter().map(|s| s.0).sum(), h, w)
                }
                Op::Relu | Op::LeakyRelu(_) | Op::Tanh | Op::Sigmoid | Op::Scale(_) => ins[0],
            };
            shapes.push(shape);
        }
        Ok(shapes)
    }

    /// Runs nodes `0..=upto`, returning all activations.
    pub fn forward(&self, input: Array3<f64>, upto: usize) -> Result<Vec<Array3<f64>>> {
        if upto >= self.nodes.len() {
            return Err(Error::Model(format!("node index {upto} out of range")));
        }
        let mut acts: Vec<Array3<f64>> = Vec::with_capacity(upto + 1);
        acts.push(input);
        for node in &self.nodes[1..=upto] {
            let out = {
                let ins: Vec<&Array3<f64>> = node.inputs.iter().map(|&i| &acts[i]).collect();
                eval(node, &ins)?
            };
            acts.push(out);
        }
        Ok(acts)
    }

    /// Gradient with respect to the input, given upstream gradients on nodes.
    ///
    /// `acts` must come from [`Graph::forward`] run at least up to the
    /// deepest seeded node. Seeds on the same node accumulate.
    pub fn backward(&self, acts: &[Array3<f64>], seeds: Vec<(usize, Array3<f64>)>) -> Result<Array3<f64>> {
        let mut grads: Vec<Option<Array3<f64>>> = vec![None; acts.len()];
        for (id, g) in seeds {
            if id >= acts.len() {
                return Err(Error::Model(format!("gradient seeded on node {id} beyond forward pass")));
            }
            if g.dim() != acts[id].dim() {
                return Err(Error::ShapeMismatch(format!(
                    "gradient for `{}` has shape {:?}, activation {:?}",
                    self.nodes[id].name,
                    g.dim(),
                    acts[id].dim()
                )));
            }
            accumulate(&mut grads[id], g);
        }
        for id in (1..acts.len()).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let ins: Vec<&Array3<f64>> = node.inputs.iter().map(|&i| &acts[i]).collect();
            let input_grads = eval_backward(node, &ins, &acts[id], &g);
            for (&src, ig) in node.inputs.iter().zip(input_grads) {
                accumulate(&mut grads[src], ig);
            }
        }
        Ok(grads[0]
            .take()
            .unwrap_or_else(|| Array3::zeros(acts[0].dim())))
    }
}

fn shape_err(node: &Node, msg: String) -> Error {
    Error::ShapeMismatch(format!("node `{}`: {msg}", node.name))
}

fn accumulate(slot: &mut Option<Array3<f64>>, g: Array3<f64>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

fn window_out(h: usize, w: usize, kh: usize, kw: usize, stride: usize, padding: usize) -> Option<(usize, usize)> {
    let (ph, pw) = (h + 2 * padding, w + 2 * padding);
    if ph < kh || pw < kw || stride == 0 {
        return None;
    }
    Some(((ph - kh) / stride + 1, (pw - kw) / stride + 1))
}

fn eval(node: &Node, ins: &[&Array3<f64>]) -> Result<Array3<f64>> {
    let x = ins.first().copied();
    Ok(match &node.op {
        Op::Input => unreachable!("input node is never evaluated"),
        Op::Conv2d { weight, bias, stride, padding } => conv2d(x.unwrap(), weight, bias.as_ref(), *stride, *padding)
            .ok_or_else(|| shape_err(node, format!("cannot convolve input {:?}", x.unwrap().dim())))?,
        Op::Linear { weight, bias } => {
            let x = x.unwrap();
            let flat = x.iter().copied().collect::<Array1<f64>>();
            if flat.len() != weight.ncols() {
                return Err(shape_err(node, format!("expects {} inputs, got {}", weight.ncols(), flat.len())));
            }
            let mut out = weight.dot(&flat);
            if let Some(b) = bias {
                out += b;
            }
            let n = out.len();
            out.into_shape_with_order((n, 1, 1)).expect("linear output reshape")
        }
        Op::Affine { scale, shift } => {
            let x = x.unwrap();
            check_channels(node, x, scale.len())?;
            let mut out = x.clone();
            for (c, mut plane) in out.axis_iter_mut(Axis(0)).enumerate() {
                plane.mapv_inplace(|v| v * scale[c] + shift[c]);
            }
            out
        }
        Op::Relu => x.unwrap().mapv(|v| v.max(0.0)),
        Op::LeakyRelu(a) => x.unwrap().mapv(|v| if v > 0.0 { v } else { a * v }),
        Op::Prelu(slope) => {
            let x = x.unwrap();
            check_channels(node, x, slope.len())?;
            let mut out = x.clone();
            for (c, mut plane) in out.axis_iter_mut(Axis(0)).enumerate() {
                plane.mapv_inplace(|v| if v > 0.0 { v } else { slope[c] * v });
            }
            out
        }
        Op::Tanh => x.unwrap().mapv(f64::tanh),
        Op::Sigmoid => x.unwrap().mapv(sigmoid),
        Op::MaxPool { kernel, stride, padding } => max_pool(x.unwrap(), *kernel, *stride, *padding)
            .ok_or_else(|| shape_err(node, "input smaller than pooling window".into()))?
            .0,
        Op::AvgPool { kernel, stride } => avg_pool(x.unwrap(), *kernel, *stride)
            .ok_or_else(|| shape_err(node, "input smaller than pooling window".into()))?,
        Op::GlobalAvgPool => {
            let x = x.unwrap();
            let (c, h, w) = x.dim();
            let means = x
                .axis_iter(Axis(0))
                .map(|p| p.sum() / (h * w) as f64)
                .collect::<Array1<f64>>();
            means.into_shape_with_order((c, 1, 1)).expect("pool reshape")
        }
        Op::Add => {
            let mut out = ins[0].clone();
            for other in &ins[1..] {
                if other.dim() != out.dim() {
                    return Err(shape_err(node, "add inputs differ in shape".into()));
                }
                out += *other;
            }
            out
        }
        Op::Concat => {
            let (_, h, w) = ins[0].dim();
            if ins.iter().any(|a| (a.dim().1, a.dim().2) != (h, w)) {
                return Err(shape_err(node, "concat inputs differ spatially".into()));
            }
            let views: Vec<ArrayView3<f64>> = ins.iter().map(|a| a.view()).collect();
            ndarray::concatenate(Axis(0), &views).expect("concat shapes checked")
        }
        Op::Scale(k) => x.unwrap() * *k,
    })
}

fn check_channels(node: &Node, x: &Array3<f64>, n: usize) -> Result<()> {
    if x.dim().0 != n {
        return Err(shape_err(node, format!("expects {n} channels, got {}", x.dim().0)));
    }
    Ok(())
}

fn eval_backward(node: &Node, ins: &[&Array3<f64>], out: &Array3<f64>, g: &Array3<f64>) -> Vec<Array3<f64>> {
    match &node.op {
        Op::Input => Vec::new(),
        Op::Conv2d { weight, stride, padding, .. } => {
            vec![conv2d_backward(ins[0].dim(), g, weight, *stride, *padding)]
        }
        Op::Linear { weight, .. } => {
            let flat_g = g.iter().copied().collect::<Array1<f64>>();
            let dx = weight.t().dot(&flat_g);
            vec![dx.into_shape_with_order(ins[0].dim()).expect("linear grad reshape")]
        }
        Op::Affine { scale, .. } => {
            let mut dx = g.clone();
            for (c, mut plane) in dx.axis_iter_mut(Axis(0)).enumerate() {
                plane *= scale[c];
            }
            vec![dx]
        }
        Op::Relu => vec![Zip::from(g).and(ins[0]).map_collect(|&g, &x| if x > 0.0 { g } else { 0.0 })],
        Op::LeakyRelu(a) => vec![Zip::from(g).and(ins[0]).map_collect(|&g, &x| if x > 0.0 { g } else { a * g })],
        Op::Prelu(slope) => {
            let mut dx = g.clone();
            for (c, (mut dplane, xplane)) in dx.axis_iter_mut(Axis(0)).zip(ins[0].axis_iter(Axis(0))).enumerate() {
                Zip::from(&mut dplane).and(&xplane).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d *= slope[c];
                    }
                });
            }
            vec![dx]
        }
        Op::Tanh => vec![Zip::from(g).and(out).map_collect(|&g, &y| g * (1.0 - y * y))],
        Op::Sigmoid => vec![Zip::from(g).and(out).map_collect(|&g, &y| g * y * (1.0 - y))],
        Op::MaxPool { kernel, stride, padding } => {
            let (_, argmax) = max_pool(ins[0], *kernel, *stride, *padding).expect("shape validated in forward");
            let mut dx = Array3::zeros(ins[0].dim());
            for ((c, oy, ox), &(iy, ix)) in argmax.indexed_iter() {
                dx[[c, iy, ix]] += g[[c, oy, ox]];
            }
            vec![dx]
        }
        Op::AvgPool { kernel, stride } => {
            let mut dx = Array3::zeros(ins[0].dim());
            let norm = 1.0 / (kernel * kernel) as f64;
            for ((c, oy, ox), &gv) in g.indexed_iter() {
                dx.slice_mut(s![c, oy * stride..oy * stride + kernel, ox * stride..ox * stride + kernel])
                    .mapv_inplace(|v| v + gv * norm);
            }
            vec![dx]
        }
        Op::GlobalAvgPool => {
            let (c, h, w) = ins[0].dim();
            let mut dx = Array3::zeros((c, h, w));
            for ch in 0..c {
                dx.index_axis_mut(Axis(0), ch).fill(g[[ch, 0, 0]] / (h * w) as f64);
            }
            vec![dx]
        }
        Op::Add => ins.iter().map(|_| g.clone()).collect(),
        Op::Concat => {
            let mut start = 0;
            ins.iter()
                .map(|a| {
                    let c = a.dim().0;
                    let part = g.slice(s![start..start + c, .., ..]).to_owned();
                    start += c;
                    part
                })
                .collect()
        }
        Op::Scale(k) => vec![g * *k],
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn im2col(x: &Array3<f64>, kh: usize, kw: usize, stride: usize, padding: usize, oh: usize, ow: usize) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let mut cols = Array2::zeros((c * kh * kw, oh * ow));
    for ch in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ch * kh + ky) * kw + kx;
                let mut dst = cols.row_mut(row);
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dst[oy * ow + ox] = x[[ch, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &Array2<f64>,
    dim: (usize, usize, usize),
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
) -> Array3<f64> {
    let (c, h, w) = dim;
    let mut dx = Array3::zeros(dim);
    for ch in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = cols.row((ch * kh + ky) * kw + kx);
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dx[[ch, iy as usize, ix as usize]] += row[oy * ow + ox];
                    }
                }
            }
        }
    }
    dx
}

fn conv2d(
    x: &Array3<f64>,
    weight: &Array4<f64>,
    bias: Option<&Array1<f64>>,
    stride: usize,
    padding: usize,
) -> Option<Array3<f64>> {
    let (o, ci, kh, kw) = weight.dim();
    let (c, h, w) = x.dim();
    if c != ci {
        return None;
    }
    let (oh, ow) = window_out(h, w, kh, kw, stride, padding)?;
    let cols = im2col(x, kh, kw, stride, padding, oh, ow);
    let wmat = weight.view().into_shape_with_order((o, ci * kh * kw)).ok()?;
    let mut out = wmat.dot(&cols);
    if let Some(b) = bias {
        for (mut row, bv) in out.rows_mut().into_iter().zip(b.iter()) {
            row += *bv;
        }
    }
    out.into_shape_with_order((o, oh, ow)).ok()
}

fn conv2d_backward(
    in_dim: (usize, usize, usize),
    g: &Array3<f64>,
    weight: &Array4<f64>,
    stride: usize,
    padding: usize,
) -> Array3<f64> {
    let (o, ci, kh, kw) = weight.dim();
    let (_, oh, ow) = g.dim();
    let wmat = weight
        .view()
        .into_shape_with_order((o, ci * kh * kw))
        .expect("conv weight is contiguous");
    let gmat = g.view().into_shape_with_order((o, oh * ow)).expect("grad is contiguous");
    let dcols = wmat.t().dot(&gmat);
    col2im(&dcols, in_dim, kh, kw, stride, padding, oh, ow)
}

type ArgMax = ndarray::Array3<(usize, usize)>;

fn max_pool(x: &Array3<f64>, kernel: usize, stride: usize, padding: usize) -> Option<(Array3<f64>, ArgMax)> {
    let (c, h, w) = x.dim();
    let (oh, ow) = window_out(h, w, kernel, kernel, stride, padding)?;
    let mut out = Array3::zeros((c, oh, ow));
    let mut arg = Array3::from_elem((c, oh, ow), (0usize, 0usize));
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut at = None;
                for ky in 0..kernel {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kernel {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let v = x[[ch, iy as usize, ix as usize]];
                        if at.is_none() || v > best {
                            best = v;
                            at = Some((iy as usize, ix as usize));
                        }
                    }
                }
                // A window lying entirely in padding has no source pixel.
                let at = at?;
                out[[ch, oy, ox]] = best;
                arg[[ch, oy, ox]] = at;
            }
        }
    }
    Some((out, arg))
}

fn avg_pool(x: &Array3<f64>, kernel: usize, stride: usize) -> Option<Array3<f64>> {
    let (c, h, w) = x.dim();
    let (oh, ow) = window_out(h, w, kernel, kernel, stride, 0)?;
    let norm = 1.0 / (kernel * kernel) as f64;
    let mut out = Array3::zeros((c, oh, ow));
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                out[[ch, oy, ox]] = x
                    .slice(s![ch, oy * stride..oy * stride + kernel, ox * stride..ox * stride + kernel])
                    .sum()
                    * norm;
            }
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random3(rng: &mut ChaCha8Rng, dim: (usize, usize, usize)) -> Array3<f64> {
        Array3::from_shape_simple_fn(dim, || rng.random_range(-1.0..1.0))
    }

    fn random4(rng: &mut ChaCha8Rng, dim: (usize, usize, usize, usize)) -> Array4<f64> {
        Array4::from_shape_simple_fn(dim, || rng.random_range(-0.5..0.5))
    }

    // Direct nested-loop convolution, independent of im2col.
    fn naive_conv(x: &Array3<f64>, wt: &Array4<f64>, stride: usize, pad: usize) -> Array3<f64> {
        let (o, ci, kh, kw) = wt.dim();
        let (_, h, w) = x.dim();
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let mut out = Array3::zeros((o, oh, ow));
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..ci {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += wt[[oc, c, ky, kx]] * x[[c, iy as usize, ix as usize]];
                                }
                            }
                        }
                    }
                    out[[oc, oy, ox]] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (stride, pad) in [(1, 0), (1, 1), (2, 1), (2, 0)] {
            let x = random3(&mut rng, (3, 7, 6));
            let wt = random4(&mut rng, (4, 3, 3, 3));
            let got = conv2d(&x, &wt, None, stride, pad).unwrap();
            let want = naive_conv(&x, &wt, stride, pad);
            assert_eq!(got.dim(), want.dim());
            for (a, b) in got.iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    fn build_mixed_graph(rng: &mut ChaCha8Rng) -> Graph {
        let mut g = Graph::new();
        g.chain("c1", Op::Conv2d { weight: random4(rng, (4, 2, 3, 3)), bias: Some(Array1::from(vec![0.1, -0.2, 0.3, 0.0])), stride: 1, padding: 1 }).unwrap();
        g.chain("a1", Op::Tanh).unwrap();
        g.chain("c2", Op::Conv2d { weight: random4(rng, (3, 4, 3, 3)), bias: None, stride: 2, padding: 1 }).unwrap();
        g.chain("bn", Op::Affine { scale: Array1::from(vec![1.5, -0.5, 2.0]), shift: Array1::from(vec![0.1, 0.2, -0.3]) }).unwrap();
        g.chain("pr", Op::Prelu(Array1::from(vec![0.1, 0.2, 0.3]))).unwrap();
        g.push("side", Op::Conv2d { weight: random4(rng, (3, 3, 1, 1)), bias: None, stride: 1, padding: 0 }, &["pr"]).unwrap();
        g.push("sum", Op::Add, &["pr", "side"]).unwrap();
        g.push("cat", Op::Concat, &["sum", "pr"]).unwrap();
        g.chain("sg", Op::Sigmoid).unwrap();
        g.chain("ap", Op::AvgPool { kernel: 2, stride: 1 }).unwrap();
        g.chain("lin", Op::Linear { weight: Array2::from_shape_simple_fn((5, 6 * 2 * 2), || rng.random_range(-0.3..0.3)), bias: None }).unwrap();
        g.chain("sc", Op::Scale(0.7)).unwrap();
        g
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = build_mixed_graph(&mut rng);
        let x = random3(&mut rng, (2, 5, 6));
        let last = g.len() - 1;
        let probe_id = g.node_id("cat").unwrap();
        let acts = g.forward(x.clone(), last).unwrap();
        let w_out = random3(&mut rng, acts[last].dim());
        let w_probe = random3(&mut rng, acts[probe_id].dim());
        let scalar = |x: &Array3<f64>| {
            let a = g.forward(x.clone(), last).unwrap();
            (&a[last] * &w_out).sum() + (&a[probe_id] * &w_probe).sum()
        };
        let grad = g
            .backward(&acts, vec![(last, w_out.clone()), (probe_id, w_probe.clone())])
            .unwrap();
        let h = 1e-5;
        for idx in [(0, 0, 0), (1, 2, 3), (0, 4, 5), (1, 3, 0)] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fd = (scalar(&xp) - scalar(&xm)) / (2.0 * h);
            let an = grad[idx];
            assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "{idx:?}: fd {fd} vs analytic {an}");
        }
    }

    #[test]
    fn maxpool_and_relu_route_gradients() {
        let mut g = Graph::new();
        g.chain("relu", Op::Relu).unwrap();
        g.chain("pool", Op::MaxPool { kernel: 2, stride: 2, padding: 0 }).unwrap();
        let x = Array3::from_shape_vec((1, 2, 2), vec![-1.0, 0.5, 0.25, 0.1]).unwrap();
        let acts = g.forward(x, 2).unwrap();
        assert_eq!(acts[2][[0, 0, 0]], 0.5);
        let dx = g.backward(&acts, vec![(2, Array3::from_elem((1, 1, 1), 2.0))]).unwrap();
        assert_eq!(dx.iter().copied().collect::<Vec<_>>(), vec![0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn shape_inference_and_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = build_mixed_graph(&mut rng);
        let shapes = g.infer_shapes((2, 5, 6)).unwrap();
        assert_eq!(*shapes.last().unwrap(), (5, 1, 1));
        assert!(g.infer_shapes((3, 5, 6)).is_err());

        let mut bad = Graph::new();
        assert!(bad.push("x", Op::Relu, &["nope"]).is_err());
        bad.chain("x", Op::Relu).unwrap();
        assert!(bad.chain("x", Op::Relu).is_err());
        assert!(bad.push("y", Op::Add, &[]).is_err());
    }

    #[test]
    fn backward_rejects_bad_seed_shape() {
        let mut g = Graph::new();
        g.chain("r", Op::Relu).unwrap();
        let acts = g.forward(Array3::zeros((1, 2, 2)), 1).unwrap();
        assert!(g.backward(&acts, vec![(1, Array3::zeros((1, 1, 1)))]).is_err());
    }
}
