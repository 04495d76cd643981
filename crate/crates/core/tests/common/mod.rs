#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use synthima::network::{ActivationTrace, LayerKind, NetworkSpec};
use synthima::tensor::{maxpool2x2_forward, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: Vec<usize>, lo: f32, hi: f32, seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| r.random_range(lo..hi)).unwrap()
}

/// Central difference of `f` along element `idx`, divided by the step that
/// was actually representable in `f32`.
pub fn central_diff(f: impl Fn(&Tensor) -> f64, x: &Tensor, idx: usize, h: f32) -> f64 {
    let mut plus = x.clone();
    let mut minus = x.clone();
    plus.data_mut()[idx] += h;
    minus.data_mut()[idx] -= h;
    let step = plus.data()[idx] as f64 - minus.data()[idx] as f64;
    (f(&plus) - f(&minus)) / step
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// ReLU active sets and pool argmaxes of a trace; two inputs with equal
/// signatures lie in the same linear region of the network.
pub fn region_signature(spec: &NetworkSpec, trace: &ActivationTrace) -> Vec<usize> {
    let mut sig = Vec::new();
    let mut prev: Option<&Tensor> = Some(trace.input());
    for name in trace.layer_names() {
        let layer = &spec.layers()[spec.layer_index(name).unwrap()];
        let out = trace.get(name).unwrap();
        match layer.kind {
            LayerKind::Conv(_) => {
                sig.extend(out.data().iter().map(|&v| (v > 0.0) as usize));
            }
            LayerKind::MaxPool => {
                let (_, rec) = maxpool2x2_forward(prev.unwrap()).unwrap();
                sig.extend_from_slice(rec.argmax());
            }
        }
        prev = Some(out);
    }
    sig
}

/// Direct-summation `f64` cross-correlation used as an independent oracle.
/// `x` is `[cin, h, w]`, `k` is `[cout, cin, kh, kw]`.
#[allow(clippy::too_many_arguments)]
pub fn ref_conv(
    x: &[f64],
    (cin, h, w): (usize, usize, usize),
    k: &[f64],
    bias: &[f64],
    (cout, kh, kw): (usize, usize, usize),
    stride: usize,
    pad: usize,
) -> (Vec<f64>, (usize, usize, usize)) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; cout * oh * ow];
    for o in 0..cout {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = bias[o];
                for c in 0..cin {
                    for i in 0..kh {
                        for j in 0..kw {
                            let iy = (y * stride + i) as isize - pad as isize;
                            let ix = (xx * stride + j) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += x[(c * h + iy as usize) * w + ix as usize]
                                * k[((o * cin + c) * kh + i) * kw + j];
                        }
                    }
                }
                out[(o * oh + y) * ow + xx] = acc;
            }
        }
    }
    (out, (cout, oh, ow))
}

pub fn ref_pool(
    x: &[f64],
    (c, h, w): (usize, usize, usize),
) -> (Vec<f64>, Vec<usize>, (usize, usize, usize)) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::new();
    let mut arg = Vec::new();
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = (ch * h + 2 * y) * w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = (ch * h + 2 * y + dy) * w + 2 * xx + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg, (c, oh, ow))
}

/// One layer output of the reference network.
pub struct RefActivation {
    pub name: String,
    pub data: Vec<f64>,
    pub dims: (usize, usize, usize),
}

/// `f64` forward pass over the same layers and weights as the library
/// network, through `deepest` inclusive. Also returns the linear-region
/// signature (ReLU signs and pool winners).
pub fn ref_forward(
    spec: &NetworkSpec,
    weights: &synthima::WeightStore,
    x: &Tensor,
    deepest: &str,
) -> (Vec<RefActivation>, Vec<usize>) {
    ref_forward_values(spec, weights, &to_f64(x), x.dims3().unwrap(), deepest)
}

pub fn ref_forward_values(
    spec: &NetworkSpec,
    weights: &synthima::WeightStore,
    x: &[f64],
    dims: (usize, usize, usize),
    deepest: &str,
) -> (Vec<RefActivation>, Vec<usize>) {
    let mut dims = dims;
    let mut cur: Vec<f64> = x.to_vec();
    let mut acts = Vec::new();
    let mut sig = Vec::new();
    for layer in spec.layers() {
        match layer.kind {
            LayerKind::Conv(g) => {
                let p = weights.get(&layer.name).unwrap();
                let k: Vec<f64> = p.kernels.data().iter().map(|&v| v as f64).collect();
                let b: Vec<f64> = p.bias.data().iter().map(|&v| v as f64).collect();
                let (pre, d) = ref_conv(
                    &cur,
                    dims,
                    &k,
                    &b,
                    (g.out_channels, g.kernel_h, g.kernel_w),
                    g.stride,
                    g.padding,
                );
                sig.extend(pre.iter().map(|&v| (v > 0.0) as usize));
                cur = pre.into_iter().map(|v| v.max(0.0)).collect();
                dims = d;
            }
            LayerKind::MaxPool => {
                let (out, arg, d) = ref_pool(&cur, dims);
                sig.extend(arg);
                cur = out;
                dims = d;
            }
        }
        acts.push(RefActivation {
            name: layer.name.clone(),
            data: cur.clone(),
            dims,
        });
        if layer.name == deepest {
            break;
        }
    }
    (acts, sig)
}

pub fn ref_content_loss(f: &[f64], p: &[f64]) -> f64 {
    0.5 * f.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
}

/// Brute-force double loop over `Σ_ij (G_ij − A_ij)² / (4 N² M²)`.
pub fn ref_style_loss(f: &[f64], n: usize, m: usize, a: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut g = 0.0;
            for k in 0..m {
                g += f[i * m + k] * f[j * m + k];
            }
            total += (g - a[i * n + j]).powi(2);
        }
    }
    total / (4.0 * (n * n) as f64 * (m * m) as f64)
}

pub fn ref_gram(f: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..m {
                g[i * n + j] += f[i * m + k] * f[j * m + k];
            }
        }
    }
    g
}

/// Central difference of an `f64` function of a tensor, with `x` promoted
/// to `f64` before perturbing.
pub fn central_diff64(f: impl Fn(&[f64]) -> f64, x: &[f64], idx: usize, h: f64) -> f64 {
    let mut plus = x.to_vec();
    let mut minus = x.to_vec();
    plus[idx] += h;
    minus[idx] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

pub fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}
