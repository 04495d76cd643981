//! The feature network: a stack of conv+ReLU and 2×2 max-pool layers with
//! per-layer activation capture and reverse-mode gradients to the input.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{
    conv2d_backward, conv2d_forward, maxpool2x2_backward, maxpool2x2_forward, relu_backward,
    relu_forward, ConvGeometry, PoolRecord, Tensor,
};

/// VGG16 convolutional blocks: (convs per block, channel width).
pub const VGG16_BLOCKS: [(usize, usize); 5] = [(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// Convolution followed by ReLU.
    Conv(ConvGeometry),
    MaxPool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn conv(name: impl Into<String>, geom: ConvGeometry) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Conv(geom),
        }
    }

    pub fn pool(name: impl Into<String>) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::MaxPool,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    input_channels: usize,
    layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(input_channels: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        let mut names = HashSet::new();
        let mut channels = input_channels;
        for layer in &layers {
            if !names.insert(layer.name.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate layer name {}",
                    layer.name
                )));
            }
            if let LayerKind::Conv(g) = layer.kind {
                if g.in_channels != channels {
                    return Err(Error::Shape(format!(
                        "{} expects {} input channels but receives {channels}",
                        layer.name, g.in_channels
                    )));
                }
                if g.out_channels == 0 || g.kernel_h == 0 || g.kernel_w == 0 || g.stride == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "{} has a degenerate geometry",
                        layer.name
                    )));
                }
                channels = g.out_channels;
            }
        }
        Ok(NetworkSpec {
            input_channels,
            layers,
        })
    }

    /// Builds VGG-style blocks: `convN_i` layers of 3×3 same-padded
    /// convolutions followed by `poolN`.
    pub fn from_blocks(input_channels: usize, blocks: &[(usize, usize)]) -> Result<Self> {
        let mut layers = Vec::new();
        let mut c = input_channels;
        for (b, &(count, width)) in blocks.iter().enumerate() {
            for i in 0..count {
                layers.push(LayerSpec::conv(
                    format!("conv{}_{}", b + 1, i + 1),
                    ConvGeometry::same3x3(c, width),
                ));
                c = width;
            }
            layers.push(LayerSpec::pool(format!("pool{}", b + 1)));
        }
        Self::new(input_channels, layers)
    }

    /// The 13 convolutional layers and 5 pools of VGG16.
    pub fn vgg16() -> Self {
        Self::from_blocks(3, &VGG16_BLOCKS).expect("valid preset")
    }

    /// Three-conv miniature of VGG: `conv1_1`(8) · pool1 · `conv2_1`(16) ·
    /// pool2 · `conv3_1`(16).
    pub fn toy() -> Self {
        let mut spec = Self::from_blocks(3, &[(1, 8), (1, 16), (1, 16)]).expect("valid preset");
        spec.layers.pop(); // no trailing pool3
        spec
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn conv_layers(&self) -> impl Iterator<Item = (&str, &ConvGeometry)> {
        self.layers.iter().filter_map(|l| match &l.kind {
            LayerKind::Conv(g) => Some((l.name.as_str(), g)),
            LayerKind::MaxPool => None,
        })
    }

    /// Kernel and bias parameters over all conv layers.
    pub fn param_count(&self) -> usize {
        self.conv_layers().map(|(_, g)| g.param_count()).sum()
    }

    /// Number of pools at or above layer `idx`; the input extents must be
    /// divisible by `2^n` to reach it.
    pub fn pools_through(&self, idx: usize) -> usize {
        self.layers[..=idx]
            .iter()
            .filter(|l| l.kind == LayerKind::MaxPool)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    /// `[out, in, kh, kw]`
    pub kernels: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

/// Named conv parameters, in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    entries: IndexMap<String, ConvWeights>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, kernels: Tensor, bias: Tensor) -> Result<()> {
        let name = name.into();
        match (kernels.shape(), bias.shape()) {
            ([o, _, _, _], [b]) if o == b => {}
            (k, b) => {
                return Err(Error::Shape(format!(
                    "{name}: kernel shape {k:?} and bias shape {b:?} are inconsistent"
                )))
            }
        }
        self.entries.insert(name, ConvWeights { kernels, bias });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ConvWeights> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ConvWeights)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.entries
            .values()
            .map(|w| w.kernels.len() + w.bias.len())
            .sum()
    }

    /// He-scaled normal kernels (`σ = √(2 / fan_in)`) and small normal
    /// biases, reproducible from `seed`.
    pub fn random(spec: &NetworkSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = WeightStore::new();
        for (name, g) in spec.conv_layers() {
            let fan_in = (g.in_channels * g.kernel_h * g.kernel_w) as f32;
            let kdist = Normal::new(0.0f32, (2.0 / fan_in).sqrt()).expect("finite sigma");
            let bdist = Normal::new(0.0f32, 0.05).expect("finite sigma");
            let kernels = Tensor::from_fn(g.kernel_shape(), |_| kdist.sample(&mut rng))
                .expect("valid geometry");
            let bias =
                Tensor::from_fn(vec![g.out_channels], |_| bdist.sample(&mut rng)).expect("valid");
            store
                .insert(name, kernels, bias)
                .expect("consistent shapes");
        }
        store
    }

    pub fn zeros(spec: &NetworkSpec) -> Self {
        let mut store = WeightStore::new();
        for (name, g) in spec.conv_layers() {
            store
                .insert(
                    name,
                    Tensor::zeros(g.kernel_shape()).expect("valid geometry"),
                    Tensor::zeros(vec![g.out_channels]).expect("valid"),
                )
                .expect("consistent shapes");
        }
        store
    }

    /// Checks that every conv layer of `spec` has parameters of the right shape.
    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        for (name, g) in spec.conv_layers() {
            self.layer(name, g)?;
        }
        Ok(())
    }

    fn layer(&self, name: &str, g: &ConvGeometry) -> Result<&ConvWeights> {
        let w = self
            .get(name)
            .ok_or_else(|| Error::MissingLayer(name.to_string()))?;
        let expected = g.kernel_shape();
        if w.kernels.shape() != expected.as_slice() {
            return Err(Error::ShapeConflict {
                name: name.to_string(),
                expected,
                found: w.kernels.shape().to_vec(),
            });
        }
        if w.bias.shape() != [g.out_channels] {
            return Err(Error::ShapeConflict {
                name: format!("{name}.bias"),
                expected: vec![g.out_channels],
                found: w.bias.shape().to_vec(),
            });
        }
        Ok(w)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Saved {
    Conv { pre_activation: Tensor },
    Pool(PoolRecord),
}

#[derive(Debug, Clone, PartialEq)]
struct TraceEntry {
    name: String,
    output: Tensor,
    saved: Saved,
}

/// Feature maps from one forward pass, for every layer down to the deepest
/// captured one, plus what the backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    input: Tensor,
    entries: Vec<TraceEntry>,
    captured: BTreeSet<String>,
}

impl ActivationTrace {
    pub fn input(&self) -> &Tensor {
        &self.input
    }

    /// Output of `name` (post-ReLU for conv layers), if it was computed.
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| &e.output)
    }

    pub fn captured(&self) -> &BTreeSet<String> {
        &self.captured
    }

    /// Every layer computed, in network order.
    pub fn layer_names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Per-layer cotangents keyed by layer name.
pub type Cotangents = BTreeMap<String, Tensor>;

/// Runs `x` through the network, stopping after the deepest layer in `capture`.
pub fn forward<S: AsRef<str>>(
    spec: &NetworkSpec,
    weights: &WeightStore,
    x: &Tensor,
    capture: &[S],
) -> Result<ActivationTrace> {
    let (c, h, w) = x.dims3()?;
    if c != spec.input_channels {
        return Err(Error::Shape(format!(
            "network takes {} input channels, got {c}",
            spec.input_channels
        )));
    }
    let mut deepest = None;
    let mut captured = BTreeSet::new();
    for name in capture {
        let name = name.as_ref();
        let idx = spec
            .layer_index(name)
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))?;
        deepest = deepest.max(Some(idx));
        captured.insert(name.to_string());
    }
    let mut trace = ActivationTrace {
        input: x.clone(),
        entries: Vec::new(),
        captured,
    };
    let Some(deepest) = deepest else {
        return Ok(trace);
    };
    let factor = 1usize << spec.pools_through(deepest);
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::Shape(format!(
            "{h}x{w} input is not divisible by {factor} as required to reach {}",
            spec.layers[deepest].name
        )));
    }

    for layer in &spec.layers[..=deepest] {
        let current = trace.entries.last().map_or(x, |e| &e.output);
        let entry = match &layer.kind {
            LayerKind::Conv(g) => {
                let p = weights.layer(&layer.name, g)?;
                let pre = conv2d_forward(current, &p.kernels, &p.bias, g)?;
                TraceEntry {
                    name: layer.name.clone(),
                    output: relu_forward(&pre),
                    saved: Saved::Conv {
                        pre_activation: pre,
                    },
                }
            }
            LayerKind::MaxPool => {
                let (out, rec) = maxpool2x2_forward(current)?;
                TraceEntry {
                    name: layer.name.clone(),
                    output: out,
                    saved: Saved::Pool(rec),
                }
            }
        };
        trace.entries.push(entry);
    }
    Ok(trace)
}

/// `Σ_l ∂⟨activation_l, cotangent_l⟩ / ∂x` by reverse traversal of the trace.
pub fn backward_to_input(
    spec: &NetworkSpec,
    weights: &WeightStore,
    trace: &ActivationTrace,
    cotangents: &Cotangents,
) -> Result<Tensor> {
    let mut deepest = None;
    for (name, ct) in cotangents {
        if !trace.captured.contains(name) {
            return Err(Error::UncapturedLayer(name.clone()));
        }
        let idx = trace
            .entries
            .iter()
            .position(|e| &e.name == name)
            .ok_or_else(|| Error::UncapturedLayer(name.clone()))?;
        trace.entries[idx].output.require_same_shape(ct)?;
        deepest = deepest.max(Some(idx));
    }
    let Some(deepest) = deepest else {
        return Ok(trace.input.zeros_like());
    };

    let mut grad: Option<Tensor> = None;
    for idx in (0..=deepest).rev() {
        let entry = &trace.entries[idx];
        if let Some(ct) = cotangents.get(&entry.name) {
            grad = Some(match grad {
                Some(mut g) => {
                    g.add_assign(ct)?;
                    g
                }
                None => ct.clone(),
            });
        }
        let Some(g) = grad.take() else { continue };
        let layer_input = if idx == 0 {
            &trace.input
        } else {
            &trace.entries[idx - 1].output
        };
        let layer = &spec.layers[idx];
        grad = Some(match (&layer.kind, &entry.saved) {
            (LayerKind::Conv(geom), Saved::Conv { pre_activation }) => {
                let p = weights.layer(&layer.name, geom)?;
                let g = relu_backward(pre_activation, &g)?;
                conv2d_backward(layer_input, &p.kernels, &g, geom)?
            }
            (LayerKind::MaxPool, Saved::Pool(rec)) => maxpool2x2_backward(rec, &g)?,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "trace does not belong to this network (layer {})",
                    layer.name
                )))
            }
        });
    }
    Ok(grad.unwrap_or_else(|| trace.input.zeros_like()))
}

/// A network description bound to compatible weights.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    weights: WeightStore,
}

impl Network {
    pub fn new(spec: NetworkSpec, weights: WeightStore) -> Result<Self> {
        weights.check(&spec)?;
        Ok(Network { spec, weights })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn weights(&self) -> &WeightStore {
        &self.weights
    }

    pub fn forward<S: AsRef<str>>(&self, x: &Tensor, capture: &[S]) -> Result<ActivationTrace> {
        forward(&self.spec, &self.weights, x, capture)
    }

    pub fn backward_to_input(
        &self,
        trace: &ActivationTrace,
        cotangents: &Cotangents,
    ) -> Result<Tensor> {
        backward_to_input(&self.spec, &self.weights, trace, cotangents)
    }
}
