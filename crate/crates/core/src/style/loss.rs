use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::{ActivationTrace, Cotangents};
use crate::tensor::Tensor;

/// A layer activation flattened to `rows` feature maps × `cols` positions.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMatrix {
    pub name: String,
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl LayerMatrix {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows * cols != data.len() || rows == 0 || cols == 0 {
            return Err(Error::Shape(format!(
                "{rows}x{cols} layer matrix cannot hold {} values",
                data.len()
            )));
        }
        Ok(LayerMatrix {
            name: name.into(),
            rows,
            cols,
            data,
        })
    }

    /// Row `c` is the row-major flattening of channel `c`.
    pub fn from_activation(name: impl Into<String>, activation: &Tensor) -> Result<Self> {
        let (c, h, w) = activation.dims3()?;
        Self::new(name, c, h * w, activation.data().to_vec())
    }

    /// Inverse of [`LayerMatrix::from_activation`].
    pub fn to_tensor(&self, height: usize, width: usize) -> Result<Tensor> {
        if height * width != self.cols {
            return Err(Error::Shape(format!(
                "{} columns cannot be viewed as {height}x{width}",
                self.cols
            )));
        }
        Tensor::new(vec![self.rows, height, width], self.data.clone())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, k: usize) -> f32 {
        self.data[i * self.cols + k]
    }

    /// Column `k` of the result is column `perm[k]` of `self`.
    pub fn permute_columns(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.cols {
            return Err(Error::Shape(
                "permutation length differs from column count".into(),
            ));
        }
        let mut data = Vec::with_capacity(self.data.len());
        for i in 0..self.rows {
            let row = self.row(i);
            data.extend(perm.iter().map(|&k| row[k]));
        }
        Self::new(self.name.clone(), self.rows, self.cols, data)
    }
}

/// Symmetric `n × n` inner-product matrix of a layer's feature maps.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub name: String,
    n: usize,
    data: Vec<f64>,
}

impl GramMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }
}

fn dot64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// `G = F·Fᵀ`, accumulated in `f64`. The upper triangle is computed and
/// mirrored, so the result is exactly symmetric.
pub fn gram(f: &LayerMatrix) -> GramMatrix {
    let n = f.rows;
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| dot64(f.row(i), f.row(j))).collect())
        .collect();
    let mut data = vec![0.0; n * n];
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + off;
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
    GramMatrix {
        name: f.name.clone(),
        n,
        data,
    }
}

/// `Σ_ij (G_ij − A_ij)²`.
pub fn gram_distance(g: &GramMatrix, a: &GramMatrix) -> Result<f64> {
    if g.n != a.n {
        return Err(Error::Shape(format!(
            "Gram sizes differ: {} vs {}",
            g.n, a.n
        )));
    }
    Ok(g.data
        .iter()
        .zip(&a.data)
        .map(|(x, y)| (x - y).powi(2))
        .sum())
}

/// `Σ (G − A)² / (4 N² M²)` with `G = gram(F)`, and its gradient
/// `(G − A)·F / (N² M²)`.
pub fn style_loss_layer(f: &LayerMatrix, a: &GramMatrix) -> Result<(f64, LayerMatrix)> {
    if a.n != f.rows {
        return Err(Error::Shape(format!(
            "{}: target Gram is {0}x{0} but the layer has {1} feature maps",
            a.n, f.rows
        )));
    }
    let (n, m) = (f.rows, f.cols);
    let g = gram(f);
    let diff: Vec<f64> = g.data.iter().zip(&a.data).map(|(x, y)| x - y).collect();
    let norm = (n * n) as f64 * (m * m) as f64;
    let value = diff.iter().map(|d| d * d).sum::<f64>() / (4.0 * norm);

    let mut grad = vec![0.0f32; n * m];
    grad.par_chunks_mut(m).enumerate().for_each(|(i, out)| {
        let mut acc = vec![0.0f64; m];
        for j in 0..n {
            let d = diff[i * n + j];
            if d == 0.0 {
                continue;
            }
            for (a, &x) in acc.iter_mut().zip(f.row(j)) {
                *a += d * x as f64;
            }
        }
        for (o, a) in out.iter_mut().zip(acc) {
            *o = (a / norm) as f32;
        }
    });
    Ok((value, LayerMatrix::new(f.name.clone(), n, m, grad)?))
}

/// `½ Σ (F − P)²` and its gradient `F − P`.
pub fn content_loss_layer(f: &LayerMatrix, p: &LayerMatrix) -> Result<(f64, LayerMatrix)> {
    if (f.rows, f.cols) != (p.rows, p.cols) {
        return Err(Error::Shape(format!(
            "{}: layer matrix is {}x{}, target is {}x{}",
            f.name, f.rows, f.cols, p.rows, p.cols
        )));
    }
    let grad: Vec<f32> = f.data.iter().zip(&p.data).map(|(a, b)| a - b).collect();
    let value = 0.5
        * f.data
            .iter()
            .zip(&p.data)
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum::<f64>();
    Ok((
        value,
        LayerMatrix::new(f.name.clone(), f.rows, f.cols, grad)?,
    ))
}

/// Squared maximum mean discrepancy between the column samples of `f` and
/// `s` under the kernel `k(x, y) = (xᵀy)²`, by direct kernel sums.
pub fn mmd_second_order(f: &LayerMatrix, s: &LayerMatrix) -> Result<f64> {
    if f.rows != s.rows || f.cols != s.cols {
        return Err(Error::Shape(format!(
            "MMD needs equal shapes, got {}x{} and {}x{}",
            f.rows, f.cols, s.rows, s.cols
        )));
    }
    let m = f.cols;
    let column = |x: &LayerMatrix, k: usize| -> Vec<f64> {
        (0..x.rows).map(|i| x.get(i, k) as f64).collect()
    };
    let fc: Vec<Vec<f64>> = (0..m).map(|k| column(f, k)).collect();
    let sc: Vec<Vec<f64>> = (0..m).map(|k| column(s, k)).collect();
    let kernel = |x: &[f64], y: &[f64]| -> f64 {
        let d: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        d * d
    };
    let mut ff = 0.0;
    let mut ss = 0.0;
    let mut fs = 0.0;
    for k in 0..m {
        for l in 0..m {
            ff += kernel(&fc[k], &fc[l]);
            ss += kernel(&sc[k], &sc[l]);
            fs += kernel(&fc[k], &sc[l]);
        }
    }
    Ok((ff + ss - 2.0 * fs) / (m * m) as f64)
}

/// Which layers contribute, and how much.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub content_layers: Vec<(String, f64)>,
    pub style_layers: Vec<(String, f64)>,
    /// Global content weight.
    pub alpha: f64,
    /// Global style weight.
    pub beta: f64,
    /// Content normalizer; the content sum is divided by it.
    pub content_norm: f64,
    /// Style normalizer.
    pub style_norm: f64,
}

impl Default for LossConfig {
    /// VGG16 setup: style on the first conv of each block, content on
    /// `conv4_2`, `alpha = 1`, `beta = 1000`.
    fn default() -> Self {
        LossConfig {
            content_layers: vec![("conv4_2".into(), 1.0)],
            style_layers: ["conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1"]
                .iter()
                .map(|&n| (n.to_string(), 0.2))
                .collect(),
            alpha: 1.0,
            beta: 1000.0,
            content_norm: 1.0,
            style_norm: 1.0,
        }
    }
}

impl LossConfig {
    /// Layer choice for the three-conv toy network.
    pub fn toy() -> Self {
        LossConfig {
            content_layers: vec![("conv3_1".into(), 1.0)],
            style_layers: ["conv1_1", "conv2_1", "conv3_1"]
                .iter()
                .map(|&n| (n.to_string(), 1.0 / 3.0))
                .collect(),
            ..Self::default()
        }
    }

    pub fn content_only(mut self) -> Self {
        self.beta = 0.0;
        self.style_layers.clear();
        self
    }

    pub fn style_only(mut self) -> Self {
        self.alpha = 0.0;
        self.content_layers.clear();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let weights = self.content_layers.iter().chain(&self.style_layers);
        for (name, w) in weights {
            if !(w.is_finite() && *w >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "layer weight for {name} must be finite and non-negative, got {w}"
                )));
            }
        }
        for (label, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{label} must be finite and non-negative, got {v}"
                )));
            }
        }
        for (label, v) in [
            ("content_norm", self.content_norm),
            ("style_norm", self.style_norm),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{label} must be finite and positive, got {v}"
                )));
            }
        }
        if self.content_layers.is_empty() && self.style_layers.is_empty() {
            return Err(Error::InvalidArgument("no loss layers selected".into()));
        }
        Ok(())
    }

    fn content_scale(&self) -> f64 {
        self.alpha / self.content_norm
    }

    fn style_scale(&self) -> f64 {
        self.beta / self.style_norm
    }
}

/// Per-layer targets extracted once from the content and style images.
#[derive(Debug, Clone, Default)]
pub struct LossTargets {
    content: BTreeMap<String, LayerMatrix>,
    style: BTreeMap<String, GramMatrix>,
}

fn activation<'a>(trace: &'a ActivationTrace, name: &str) -> Result<&'a Tensor> {
    trace
        .get(name)
        .ok_or_else(|| Error::MissingActivation(name.to_string()))
}

impl LossTargets {
    /// Content terms come from `content`, style terms from `style`; a
    /// missing trace (or a zero global weight) disables that family.
    pub fn new(
        cfg: &LossConfig,
        content: Option<&ActivationTrace>,
        style: Option<&ActivationTrace>,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut targets = LossTargets::default();
        if let Some(trace) = content.filter(|_| cfg.alpha > 0.0) {
            for (name, _) in &cfg.content_layers {
                let p = LayerMatrix::from_activation(name.clone(), activation(trace, name)?)?;
                targets.content.insert(name.clone(), p);
            }
        }
        if let Some(trace) = style.filter(|_| cfg.beta > 0.0) {
            for (name, _) in &cfg.style_layers {
                let s = LayerMatrix::from_activation(name.clone(), activation(trace, name)?)?;
                targets.style.insert(name.clone(), gram(&s));
            }
        }
        Ok(targets)
    }

    pub fn is_empty(&self) -> bool {
        self.content.is_empty() && self.style.is_empty()
    }

    /// Layers the synthesized image's trace has to capture.
    pub fn layers(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .content
            .keys()
            .chain(self.style.keys())
            .cloned()
            .collect();
        names.sort();
        names.dedup();
        names
    }

    pub fn style_target(&self, name: &str) -> Option<&GramMatrix> {
        self.style.get(name)
    }

    pub fn content_target(&self, name: &str) -> Option<&LayerMatrix> {
        self.content.get(name)
    }

    /// Loss of `trace` against these targets and the cotangent for every
    /// contributing layer.
    pub fn evaluate(&self, trace: &ActivationTrace, cfg: &LossConfig) -> Result<LossEvaluation> {
        let mut content_total = 0.0;
        let mut style_total = 0.0;
        let mut cotangents = Cotangents::new();
        let mut accumulate =
            |name: &str, grad: LayerMatrix, scale: f64, shape: &[usize]| -> Result<()> {
                let t = grad.to_tensor(shape[1], shape[2])?.scale(scale as f32);
                match cotangents.get_mut(name) {
                    Some(ct) => ct.add_assign(&t)?,
                    None => {
                        cotangents.insert(name.to_string(), t);
                    }
                }
                Ok(())
            };

        for (name, w) in &cfg.content_layers {
            let Some(p) = self.content.get(name) else {
                continue;
            };
            let scale = cfg.content_scale() * w;
            if scale == 0.0 {
                continue;
            }
            let act = activation(trace, name)?;
            let f = LayerMatrix::from_activation(name.clone(), act)?;
            let (value, grad) = content_loss_layer(&f, p)?;
            content_total += scale * value;
            accumulate(name, grad, scale, act.shape())?;
        }
        for (name, w) in &cfg.style_layers {
            let Some(a) = self.style.get(name) else {
                continue;
            };
            let scale = cfg.style_scale() * w;
            if scale == 0.0 {
                continue;
            }
            let act = activation(trace, name)?;
            let f = LayerMatrix::from_activation(name.clone(), act)?;
            let (value, grad) = style_loss_layer(&f, a)?;
            style_total += scale * value;
            accumulate(name, grad, scale, act.shape())?;
        }
        Ok(LossEvaluation {
            loss: LossBreakdown {
                total: content_total + style_total,
                content: content_total,
                style: style_total,
            },
            cotangents,
        })
    }
}

/// Weighted loss terms; `total = content + style`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub content: f64,
    pub style: f64,
}

#[derive(Debug, Clone)]
pub struct LossEvaluation {
    pub loss: LossBreakdown,
    pub cotangents: Cotangents,
}

/// `α/k_c · Σ w_l·content_l + β/k_s · Σ w_l·style_l` of the `noise` trace
/// against targets taken from the `content` and `style` traces.
pub fn total_loss(
    noise: &ActivationTrace,
    content: Option<&ActivationTrace>,
    style: Option<&ActivationTrace>,
    cfg: &LossConfig,
) -> Result<LossEvaluation> {
    LossTargets::new(cfg, content, style)?.evaluate(noise, cfg)
}
