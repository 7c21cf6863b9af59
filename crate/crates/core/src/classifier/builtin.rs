//! Dense feed-forward network evaluated in-process, with reverse-mode input
//! gradients of the prediction loss.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::classifier::Probs;
use crate::error::{Error, Result};
use crate::tensor::{load_container, save_container, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "none" | "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::Manifest(format!("unknown activation `{other}`"))),
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu if pre > 0.0 => 1.0,
            Activation::Relu => 0.0,
            Activation::Identity => 1.0,
        }
    }
}

/// `out = act(W x + b)` with `W` stored row-major as `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if weight.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::Manifest(format!(
                "layer {in_dim}->{out_dim} needs {} weights and {out_dim} biases, got {} and {}",
                in_dim * out_dim,
                weight.len(),
                bias.len()
            )));
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Manifest("non-finite layer parameter".into()));
        }
        Ok(DenseLayer {
            in_dim,
            out_dim,
            weight,
            bias,
            activation,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        DenseLayer {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut [f64] {
        &mut self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn pre_activation(&self, input: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(input).map(|(a, x)| a * x).sum::<f64>() + b)
            .collect()
    }
}

/// Per-layer values retained by a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `inputs[l]` is the input of layer `l`.
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activations of each layer.
    pub pre: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuiltinNet {
    input_shape: [usize; 3],
    layers: Vec<DenseLayer>,
}

impl BuiltinNet {
    pub fn new(input_shape: [usize; 3], layers: Vec<DenseLayer>) -> Result<Self> {
        let mut width: usize = input_shape.iter().product();
        if layers.is_empty() {
            return Err(Error::Manifest("network has no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.in_dim != width {
                return Err(Error::Manifest(format!(
                    "layer {i} expects {} inputs but previous width is {width}",
                    l.in_dim
                )));
            }
            width = l.out_dim;
        }
        if width < 2 {
            return Err(Error::Manifest("network must output at least 2 classes".into()));
        }
        Ok(BuiltinNet {
            input_shape,
            layers,
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn class_count(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn forward(&self, x: &[f64]) -> ForwardTrace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.to_vec();
        for layer in &self.layers {
            let z = layer.pre_activation(&a);
            let next: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            inputs.push(std::mem::replace(&mut a, next));
            pre.push(z);
        }
        ForwardTrace {
            inputs,
            pre,
            logits: a,
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).logits
    }

    pub fn probs(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    pub(crate) fn predict_batch(&self, data: &[f32], rows: usize) -> Probs {
        let width = self.input_len();
        let mut out = Vec::with_capacity(rows * self.class_count());
        let mut buf = vec![0.0f64; width];
        for img in data.chunks_exact(width) {
            for (b, &v) in buf.iter_mut().zip(img) {
                *b = f64::from(v);
            }
            out.extend(self.probs(&buf));
        }
        Probs::new(self.class_count(), out).expect("net output width is the class count")
    }

    /// Prediction loss `max_{i != y} p_i - p_y` and its gradient with respect
    /// to `x`. The competing class is fixed at the evaluated argmax.
    pub fn loss_and_gradient(&self, x: &[f64], y: usize) -> (f64, Vec<f64>) {
        let trace = self.forward(x);
        let p = softmax(&trace.logits);
        let j = runner_up(&p, y);
        let loss = p[j] - p[y];

        // d(p_j - p_y)/dz_k = p_j [j=k] - p_y [y=k] - (p_j - p_y) p_k
        let mut grad: Vec<f64> = p.iter().map(|&pk| -loss * pk).collect();
        grad[j] += p[j];
        grad[y] -= p[y];

        for (l, layer) in self.layers.iter().enumerate().rev() {
            for (g, &z) in grad.iter_mut().zip(&trace.pre[l]) {
                *g *= layer.activation.derivative(z);
            }
            let mut prev = vec![0.0; layer.in_dim];
            for (row, &g) in layer.weight.chunks_exact(layer.in_dim).zip(&grad) {
                if g != 0.0 {
                    for (p, &w) in prev.iter_mut().zip(row) {
                        *p += g * w;
                    }
                }
            }
            grad = prev;
        }
        (loss, grad)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Highest-probability class other than `y`, lowest index on ties.
pub(crate) fn runner_up(p: &[f64], y: usize) -> usize {
    let mut best = usize::MAX;
    for (i, &v) in p.iter().enumerate() {
        if i != y && (best == usize::MAX || v > p[best]) {
            best = i;
        }
    }
    best
}

/// Reads a model manifest.
///
/// ```text
/// input 1 8 8
/// layer relu w0.hdat b0.hdat
/// layer none w1.hdat b1.hdat
/// ```
///
/// Weight containers are `[out, in]`, biases `[out]`. Relative paths resolve
/// against the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<BuiltinNet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &str| -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };

    let mut input_shape = None;
    let mut layers = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::Manifest(format!("line {}: malformed `{line}`", lineno + 1));
        match fields[0] {
            "input" if fields.len() == 4 => {
                let mut dims = [0usize; 3];
                for (d, f) in dims.iter_mut().zip(&fields[1..]) {
                    *d = f.parse().map_err(|_| bad())?;
                }
                input_shape = Some(dims);
            }
            "layer" if fields.len() == 4 => {
                let activation = Activation::parse(fields[1])?;
                let w = load_container(resolve(fields[2]))?;
                let b = load_container(resolve(fields[3]))?;
                if w.rank() != 2 || b.rank() != 1 {
                    return Err(Error::Manifest(format!(
                        "line {}: weight must be [out, in] and bias [out], got {:?} and {:?}",
                        lineno + 1,
                        w.shape(),
                        b.shape()
                    )));
                }
                layers.push(DenseLayer::new(
                    w.shape()[1],
                    w.shape()[0],
                    w.to_f64(),
                    b.to_f64(),
                    activation,
                )?);
            }
            _ => return Err(bad()),
        }
    }
    let input_shape =
        input_shape.ok_or_else(|| Error::Manifest("missing `input c h w` line".into()))?;
    BuiltinNet::new(input_shape, layers)
}

/// Writes `net` as `<dir>/<stem>.manifest` plus one container per tensor.
/// Parameters are stored as `f32`.
pub fn save_manifest(net: &BuiltinNet, dir: impl AsRef<Path>, stem: &str) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let [c, h, w] = net.input_shape;
    let mut text = format!("input {c} {h} {w}\n");
    for (i, l) in net.layers.iter().enumerate() {
        let wname = format!("{stem}_w{i}.hdat");
        let bname = format!("{stem}_b{i}.hdat");
        save_container(
            &Tensor::from_f64(vec![l.out_dim, l.in_dim], &l.weight)?,
            dir.join(&wname),
        )?;
        save_container(&Tensor::from_f64(vec![l.out_dim], &l.bias)?, dir.join(&bname))?;
        writeln!(text, "layer {} {wname} {bname}", l.activation.name()).expect("string write");
    }
    let path = dir.join(format!("{stem}.manifest"));
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
