//! Dense feed-forward networks with optional low-rank adapters.
//!
//! Buffers are flat and row-major. A batch of `n` inputs of width `d` is a
//! slice of `n * d` values; weight matrices are stored `(out, in)`.

use serde::{Deserialize, Serialize};

use super::linalg::{matmul, matmul_at, matmul_bt};
use super::param::ParamBlock;
use crate::error::{Error, Result};
use crate::rng::{standard_normal, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, xs: &mut [f64]) {
        match self {
            Activation::Tanh => xs.iter_mut().for_each(|x| *x = x.tanh()),
            Activation::Relu => xs.iter_mut().for_each(|x| *x = x.max(0.0)),
            Activation::Identity => {}
        }
    }

    /// Multiplies `grad` in place by the derivative, expressed via the activation output `y`.
    fn backprop(self, y: &[f64], grad: &mut [f64]) {
        match self {
            Activation::Tanh => grad.iter_mut().zip(y).for_each(|(g, y)| *g *= 1.0 - y * y),
            Activation::Relu => grad.iter_mut().zip(y).for_each(|(g, y)| {
                if *y <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Identity => {}
        }
    }
}

/// Layer widths (input first, output last) and the hidden activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(Error::Config("an MLP needs at least input and output widths".into()));
        }
        if layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::Config(format!("zero width in {layer_widths:?}")));
        }
        Ok(MlpSpec {
            layer_widths,
            activation,
        })
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }
}

/// Trainable low-rank correction `(alpha / rank) · B·A` to a frozen weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowRankAdapter {
    pub target: String,
    pub rank: usize,
    pub alpha: f64,
    /// `rank × in`
    pub a: ParamBlock,
    /// `out × rank`, zero at initialization.
    pub b: ParamBlock,
}

impl LowRankAdapter {
    pub fn new(target: &str, in_dim: usize, out_dim: usize, rank: usize, alpha: f64, rng: &mut Rng) -> Result<Self> {
        if rank == 0 || alpha <= 0.0 {
            return Err(Error::Config(format!(
                "adapter on `{target}` needs rank > 0 and alpha > 0 (got {rank}, {alpha})"
            )));
        }
        let std = 1.0 / (in_dim as f64).sqrt();
        let mut a = ParamBlock::zeros(format!("{target}.lora_a"), &[rank, in_dim]);
        a.values.iter_mut().for_each(|v| *v = std * standard_normal(rng));
        let b = ParamBlock::zeros(format!("{target}.lora_b"), &[out_dim, rank]);
        Ok(LowRankAdapter {
            target: target.to_string(),
            rank,
            alpha,
            a,
            b,
        })
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: ParamBlock,
    pub bias: ParamBlock,
    pub adapter: Option<LowRankAdapter>,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape[0]
    }

    /// `W + (alpha/rank)·B·A`, or exactly `W` when there is no adapter or `B = 0`.
    pub fn effective_weight(&self) -> Vec<f64> {
        let mut w = self.weight.values.clone();
        if let Some(ad) = &self.adapter {
            if ad.b.values.iter().any(|&v| v != 0.0) {
                let mut delta = vec![0.0; w.len()];
                matmul(self.out_dim(), ad.rank, self.in_dim(), &ad.b.values, &ad.a.values, 0.0, &mut delta);
                let s = ad.scale();
                w.iter_mut().zip(&delta).for_each(|(w, d)| *w += s * d);
            }
        }
        w
    }

    fn blocks(&self) -> impl Iterator<Item = &ParamBlock> {
        [&self.weight, &self.bias]
            .into_iter()
            .chain(self.adapter.iter().flat_map(|a| [&a.a, &a.b]))
    }

    fn blocks_mut(&mut self) -> Vec<&mut ParamBlock> {
        let mut out = vec![&mut self.weight, &mut self.bias];
        if let Some(a) = &mut self.adapter {
            out.push(&mut a.a);
            out.push(&mut a.b);
        }
        out
    }

    /// `out = x Wᵀ + b (+ s·(x Aᵀ) Bᵀ)`; returns the adapter hidden `x Aᵀ` when present.
    fn affine(&self, x: &[f64], n: usize, out: &mut [f64]) -> Option<Vec<f64>> {
        let (i, o) = (self.in_dim(), self.out_dim());
        for row in out.chunks_exact_mut(o) {
            row.copy_from_slice(&self.bias.values);
        }
        matmul_bt(n, i, o, x, &self.weight.values, 1.0, out);
        self.adapter.as_ref().map(|ad| {
            let mut h = vec![0.0; n * ad.rank];
            matmul_bt(n, i, ad.rank, x, &ad.a.values, 0.0, &mut h);
            let s = ad.scale();
            let hs: Vec<f64> = h.iter().map(|v| v * s).collect();
            matmul_bt(n, ad.rank, o, &hs, &ad.b.values, 1.0, out);
            h
        })
    }
}

#[derive(Debug, Clone)]
struct ForwardCache {
    n: usize,
    /// Layer inputs; the final entry is the network output.
    activations: Vec<Vec<f64>>,
    adapter_hidden: Vec<Option<Vec<f64>>>,
}

/// A feed-forward network: affine layers, hidden activation, identity output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Dense>,
    #[serde(skip)]
    cache: Option<ForwardCache>,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.layers == other.layers
    }
}

impl Mlp {
    /// Random initialization: weights `N(0, 1/fan_in)`, biases zero.
    pub fn new(name: &str, spec: MlpSpec, rng: &mut Rng) -> Self {
        let layers = spec
            .layer_widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (i, o) = (w[0], w[1]);
                let std = 1.0 / (i as f64).sqrt();
                let mut weight = ParamBlock::zeros(format!("{name}.{l}.weight"), &[o, i]);
                weight.values.iter_mut().for_each(|v| *v = std * standard_normal(rng));
                Dense {
                    weight,
                    bias: ParamBlock::zeros(format!("{name}.{l}.bias"), &[o]),
                    adapter: None,
                }
            })
            .collect();
        Mlp {
            spec,
            layers,
            cache: None,
        }
    }

    /// Builds a network from explicit `(weight, bias)` blocks, validating every layer.
    pub fn from_layers(spec: MlpSpec, layers: Vec<Dense>) -> Result<Self> {
        if layers.len() != spec.num_layers() {
            return Err(Error::Shape(format!(
                "spec has {} layers but {} were supplied",
                spec.num_layers(),
                layers.len()
            )));
        }
        for (l, (layer, w)) in layers.iter().zip(spec.layer_widths.windows(2)).enumerate() {
            let (i, o) = (w[0], w[1]);
            if layer.weight.shape != [o, i] || layer.weight.values.len() != o * i {
                return Err(Error::Shape(format!(
                    "layer {l}: weight shape {:?}, expected [{o}, {i}]",
                    layer.weight.shape
                )));
            }
            if layer.bias.shape != [o] || layer.bias.values.len() != o {
                return Err(Error::Shape(format!(
                    "layer {l}: bias shape {:?}, expected [{o}]",
                    layer.bias.shape
                )));
            }
            if let Some(ad) = &layer.adapter {
                if ad.a.shape != [ad.rank, i] || ad.b.shape != [o, ad.rank] {
                    return Err(Error::Shape(format!("layer {l}: adapter shapes do not match rank {}", ad.rank)));
                }
            }
        }
        let mut layers = layers;
        for layer in &mut layers {
            layer.blocks_mut().into_iter().for_each(ParamBlock::ensure_grad);
        }
        Ok(Mlp {
            spec,
            layers,
            cache: None,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn has_adapters(&self) -> bool {
        self.layers.iter().any(|l| l.adapter.is_some())
    }

    pub fn blocks(&self) -> Vec<&ParamBlock> {
        self.layers.iter().flat_map(Dense::blocks).collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut ParamBlock> {
        self.layers.iter_mut().flat_map(Dense::blocks_mut).collect()
    }

    /// Base weights and biases only (adapters excluded).
    pub fn base_blocks(&self) -> Vec<&ParamBlock> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.blocks_mut().into_iter().for_each(|b| b.trainable = trainable);
    }

    /// Inserts a zero-initialized adapter on every layer and freezes base weights.
    pub fn attach_adapters(&mut self, rank: usize, alpha: f64, rng: &mut Rng) -> Result<()> {
        for layer in &mut self.layers {
            let ad = LowRankAdapter::new(&layer.weight.name, layer.in_dim(), layer.out_dim(), rank, alpha, rng)?;
            layer.weight.trainable = false;
            layer.bias.trainable = false;
            layer.adapter = Some(ad);
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.blocks_mut().into_iter().for_each(ParamBlock::zero_grad);
    }

    fn check_input(&self, x: &[f64], n: usize) -> Result<()> {
        let w = self.spec.input_width();
        if x.len() != n * w {
            return Err(Error::Shape(format!(
                "layer 0: input of length {} does not hold {n} rows of width {w}",
                x.len()
            )));
        }
        Ok(())
    }

    fn run(&self, x: &[f64], n: usize, keep: bool) -> Result<(Vec<f64>, Option<ForwardCache>)> {
        self.check_input(x, n)?;
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(if keep { self.layers.len() + 1 } else { 0 });
        let mut adapter_hidden = Vec::new();
        let mut cur = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; n * layer.out_dim()];
            let h = layer.affine(&cur, n, &mut out);
            if l != last {
                self.spec.activation.apply(&mut out);
            }
            if keep {
                activations.push(std::mem::replace(&mut cur, out));
                adapter_hidden.push(h);
            } else {
                cur = out;
            }
        }
        let cache = keep.then(|| {
            activations.push(cur.clone());
            ForwardCache {
                n,
                activations,
                adapter_hidden,
            }
        });
        Ok((cur, cache))
    }

    /// Pure batched forward pass.
    pub fn forward(&self, x: &[f64], n: usize) -> Result<Vec<f64>> {
        Ok(self.run(x, n, false)?.0)
    }

    /// Forward pass that keeps intermediate activations for [`Mlp::backward`].
    pub fn forward_train(&mut self, x: &[f64], n: usize) -> Result<Vec<f64>> {
        let (out, cache) = self.run(x, n, true)?;
        self.cache = cache;
        Ok(out)
    }

    /// Accumulates the gradient of `⟨upstream, output⟩` into every trainable
    /// block and returns the gradient with respect to the input batch.
    pub fn backward(&mut self, upstream: &[f64]) -> Result<Vec<f64>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("backward called without a cached forward pass".into()))?;
        let n = cache.n;
        let out_w = self.spec.output_width();
        if upstream.len() != n * out_w {
            return Err(Error::Shape(format!(
                "upstream gradient of length {} for {n} rows of width {out_w}",
                upstream.len()
            )));
        }
        let last = self.layers.len() - 1;
        let mut dy = upstream.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &mut self.layers[l];
            let (i, o) = (layer.in_dim(), layer.out_dim());
            if l != last {
                self.spec.activation.backprop(&cache.activations[l + 1], &mut dy);
            }
            let x = &cache.activations[l];
            if layer.weight.trainable {
                matmul_at(o, n, i, 1.0, &dy, x, 1.0, &mut layer.weight.grad);
            }
            if layer.bias.trainable {
                for row in dy.chunks_exact(o) {
                    layer.bias.grad.iter_mut().zip(row).for_each(|(g, d)| *g += d);
                }
            }
            let mut dx = vec![0.0; n * i];
            matmul(n, o, i, &dy, &layer.weight.values, 0.0, &mut dx);
            if let (Some(ad), Some(h)) = (&mut layer.adapter, &cache.adapter_hidden[l]) {
                let (r, s) = (ad.rank, ad.scale());
                if ad.b.trainable {
                    matmul_at(o, n, r, s, &dy, h, 1.0, &mut ad.b.grad);
                }
                let mut dh = vec![0.0; n * r];
                matmul(n, o, r, &dy, &ad.b.values, 0.0, &mut dh);
                dh.iter_mut().for_each(|v| *v *= s);
                if ad.a.trainable {
                    matmul_at(r, n, i, 1.0, &dh, x, 1.0, &mut ad.a.grad);
                }
                matmul(n, r, i, &dh, &ad.a.values, 1.0, &mut dx);
            }
            dy = dx;
        }
        Ok(dy)
    }
}
