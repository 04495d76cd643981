//! Pixel-compositing generative models: convolution filters, two-image
//! blending, the pencil-sketch pipeline, elementary cellular automata and
//! formula-driven patterns.

mod automata;
mod pattern;

pub use automata::{ca_generate, CaGrid, CaRule};
pub use pattern::{math_pattern, PatternFormula, PatternParams};

use crate::error::{Error, Result};
use crate::image_io::RgbImage;
use crate::tensor::{conv2d_forward, ConvGeometry, Tensor};

/// A classical convolution kernel plus the affine map applied to its response.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterKernel {
    pub name: String,
    /// `[kh, kw]`, both odd.
    coefficients: Tensor,
    pub scale: f32,
    pub bias: f32,
}

impl FilterKernel {
    pub fn new(
        name: impl Into<String>,
        coefficients: Tensor,
        scale: f32,
        bias: f32,
    ) -> Result<Self> {
        let name = name.into();
        match coefficients.shape() {
            [kh, kw] if kh % 2 == 1 && kw % 2 == 1 => Ok(FilterKernel {
                name,
                coefficients,
                scale,
                bias,
            }),
            [_, _] => Err(Error::InvalidArgument(format!(
                "filter {name}: kernel extents must be odd, got {:?}",
                coefficients.shape()
            ))),
            s => Err(Error::Shape(format!(
                "filter {name}: expected a rank-2 kernel, got {s:?}"
            ))),
        }
    }

    fn from_rows(name: &str, rows: &[&[f32]], scale: f32, bias: f32) -> Result<Self> {
        let kh = rows.len();
        let kw = rows.first().map_or(0, |r| r.len());
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(name, Tensor::new(vec![kh, kw], data)?, scale, bias)
    }

    pub fn coefficients(&self) -> &Tensor {
        &self.coefficients
    }

    pub fn identity() -> Self {
        Self::from_rows("identity", &[&[1.0]], 1.0, 0.0).expect("1x1 kernel")
    }

    /// `n × n` mean filter; `n` must be odd.
    pub fn box_blur(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("box size must be positive".into()));
        }
        let v = 1.0 / (n * n) as f32;
        Self::new("box", Tensor::full(vec![n, n], v)?, 1.0, 0.0)
    }

    /// Normalized Gaussian with standard deviation `sigma`, truncated at
    /// `ceil(3σ)`. `sigma = 0` is the identity.
    pub fn gaussian(sigma: f32) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "gaussian sigma must be finite and non-negative, got {sigma}"
            )));
        }
        if sigma == 0.0 {
            return Ok(FilterKernel {
                name: "gaussian".into(),
                ..Self::identity()
            });
        }
        let r = (3.0 * sigma).ceil() as isize;
        let n = (2 * r + 1) as usize;
        let s2 = 2.0 * (sigma as f64) * (sigma as f64);
        let raw: Vec<f64> = (0..n * n)
            .map(|i| {
                let dy = (i / n) as isize - r;
                let dx = (i % n) as isize - r;
                (-((dx * dx + dy * dy) as f64) / s2).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        let data = raw.iter().map(|v| (v / total) as f32).collect();
        Self::new("gaussian", Tensor::new(vec![n, n], data)?, 1.0, 0.0)
    }

    pub fn sharpen() -> Self {
        Self::from_rows(
            "sharpen",
            &[&[0.0, -1.0, 0.0], &[-1.0, 5.0, -1.0], &[0.0, -1.0, 0.0]],
            1.0,
            0.0,
        )
        .expect("3x3 kernel")
    }

    /// Horizontal-gradient Sobel operator.
    pub fn sobel_x() -> Self {
        Self::from_rows(
            "sobel-x",
            &[&[-1.0, 0.0, 1.0], &[-2.0, 0.0, 2.0], &[-1.0, 0.0, 1.0]],
            1.0,
            0.0,
        )
        .expect("3x3 kernel")
    }

    pub fn sobel_y() -> Self {
        Self::from_rows(
            "sobel-y",
            &[&[-1.0, -2.0, -1.0], &[0.0, 0.0, 0.0], &[1.0, 2.0, 1.0]],
            1.0,
            0.0,
        )
        .expect("3x3 kernel")
    }

    pub fn emboss() -> Self {
        Self::from_rows(
            "emboss",
            &[&[-2.0, -1.0, 0.0], &[-1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]],
            1.0,
            0.0,
        )
        .expect("3x3 kernel")
    }

    /// Looks up a built-in kernel. `param` is the size for `box` and sigma
    /// for `gaussian`; it is ignored otherwise.
    pub fn by_name(name: &str, param: f32) -> Result<Self> {
        match name {
            "identity" => Ok(Self::identity()),
            "box" => Self::box_blur(param as usize),
            "gaussian" => Self::gaussian(param),
            "sharpen" => Ok(Self::sharpen()),
            "sobel-x" => Ok(Self::sobel_x()),
            "sobel-y" => Ok(Self::sobel_y()),
            "emboss" => Ok(Self::emboss()),
            other => Err(Error::InvalidArgument(format!("unknown filter {other}"))),
        }
    }

    pub const NAMES: [&'static str; 7] = [
        "identity", "box", "gaussian", "sharpen", "sobel-x", "sobel-y", "emboss",
    ];
}

/// Applies `k` to every channel as a true convolution (kernel flipped) with
/// replicate-edge padding, then `clamp(round(scale·response + bias))`.
pub fn apply_filter(img: &RgbImage, k: &FilterKernel) -> Result<RgbImage> {
    let [kh, kw] = [k.coefficients.shape()[0], k.coefficients.shape()[1]];
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::InvalidArgument("even kernel extent".into()));
    }
    let (w, h) = (img.width(), img.height());
    let (ph, pw) = (kh / 2, kw / 2);
    let (hp, wp) = (h + 2 * ph, w + 2 * pw);

    let coef = k.coefficients.data();
    let flipped = Tensor::from_fn(vec![1, 1, kh, kw], |i| coef[kh * kw - 1 - i])?;
    let bias = Tensor::zeros(vec![1])?;
    let geom = ConvGeometry::new(1, 1, kh, kw);

    let mut pixels = vec![0u8; 3 * w * h];
    for c in 0..3 {
        let src = img.channel(c);
        let padded = Tensor::from_fn(vec![1, hp, wp], |i| {
            let y = (i / wp).saturating_sub(ph).min(h - 1);
            let x = (i % wp).saturating_sub(pw).min(w - 1);
            f32::from(src[y * w + x])
        })?;
        let response = conv2d_forward(&padded, &flipped, &bias, &geom)?;
        for (i, &v) in response.data().iter().enumerate() {
            pixels[3 * i + c] = to_u8(k.scale as f64 * v as f64 + k.bias as f64);
        }
    }
    RgbImage::new(w, h, pixels)
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// `alpha·a + (1 − alpha)·b` per channel, rounded and clamped.
pub fn blend(a: &RgbImage, b: &RgbImage, alpha: f32) -> Result<RgbImage> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::Shape(format!(
            "blend extents differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    let alpha = alpha as f64;
    let pixels = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&pa, &pb)| to_u8(alpha * pa as f64 + (1.0 - alpha) * pb as f64))
        .collect();
    RgbImage::new(a.width(), a.height(), pixels)
}

/// Rec. 601 luma replicated into all three channels.
pub fn grayscale(img: &RgbImage) -> RgbImage {
    let pixels = img
        .pixels()
        .chunks_exact(3)
        .flat_map(|p| {
            let l = to_u8(0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64);
            [l, l, l]
        })
        .collect();
    RgbImage::new(img.width(), img.height(), pixels).expect("same extents")
}

pub fn invert(img: &RgbImage) -> RgbImage {
    let pixels = img.pixels().iter().map(|&v| 255 - v).collect();
    RgbImage::new(img.width(), img.height(), pixels).expect("same extents")
}

/// Color-dodge: `base · 255 / (255 − top)`, saturating to white.
pub fn color_dodge(base: &RgbImage, top: &RgbImage) -> Result<RgbImage> {
    if (base.width(), base.height()) != (top.width(), top.height()) {
        return Err(Error::Shape("color dodge extents differ".into()));
    }
    let pixels = base
        .pixels()
        .iter()
        .zip(top.pixels())
        .map(|(&b, &t)| {
            if t == 255 {
                255
            } else {
                to_u8(b as f64 * 255.0 / (255 - t) as f64)
            }
        })
        .collect();
    RgbImage::new(base.width(), base.height(), pixels)
}

/// Grayscale, invert, Gaussian blur with `sigma = blur_radius`, then
/// color-dodge the blurred negative onto the grayscale.
pub fn pencil_sketch(img: &RgbImage, blur_radius: f32) -> Result<RgbImage> {
    if blur_radius.is_nan() || blur_radius < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "blur radius must be non-negative, got {blur_radius}"
        )));
    }
    let gray = grayscale(img);
    let blurred = apply_filter(&invert(&gray), &FilterKernel::gaussian(blur_radius)?)?;
    color_dodge(&gray, &blurred)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RgbImage {
        RgbImage::from_fn(7, 5, |x, y| {
            [(x * 30) as u8, (y * 50) as u8, ((x + y) * 17) as u8]
        })
        .unwrap()
    }

    #[test]
    fn identity_filter_is_exact() {
        let img = sample();
        assert_eq!(apply_filter(&img, &FilterKernel::identity()).unwrap(), img);
    }

    #[test]
    fn box_filter_preserves_constant() {
        let img = RgbImage::filled(6, 6, [37, 128, 250]).unwrap();
        for n in [3, 5] {
            let k = FilterKernel::box_blur(n).unwrap();
            assert_eq!(apply_filter(&img, &k).unwrap(), img);
        }
    }

    #[test]
    fn even_kernel_rejected() {
        let t = Tensor::full(vec![2, 2], 0.25).unwrap();
        assert!(FilterKernel::new("even", t, 1.0, 0.0).is_err());
        assert!(FilterKernel::box_blur(4).is_err());
    }

    #[test]
    fn filter_is_a_true_convolution() {
        // a kernel with a single off-center tap shifts the image; a
        // convolution shifts in the opposite direction to a correlation
        let mut coef = Tensor::zeros(vec![3, 3]).unwrap();
        coef.data_mut()[5] = 1.0; // row 1, col 2
        let k = FilterKernel::new("shift", coef, 1.0, 0.0).unwrap();
        let img = sample();
        let out = apply_filter(&img, &k).unwrap();
        for y in 0..img.height() {
            for x in 1..img.width() {
                assert_eq!(out.get(x, y), img.get(x - 1, y));
            }
            assert_eq!(out.get(0, y), img.get(0, y));
        }
    }

    #[test]
    fn blend_boundaries_and_midpoint() {
        let a = RgbImage::filled(2, 2, [100; 3]).unwrap();
        let b = RgbImage::filled(2, 2, [200; 3]).unwrap();
        assert_eq!(blend(&a, &b, 1.0).unwrap(), a);
        assert_eq!(blend(&a, &b, 0.0).unwrap(), b);
        assert_eq!(blend(&a, &b, 0.5).unwrap().pixels(), &[150; 12]);
    }

    #[test]
    fn blend_errors() {
        let a = RgbImage::filled(2, 2, [1; 3]).unwrap();
        let b = RgbImage::filled(3, 2, [1; 3]).unwrap();
        assert!(blend(&a, &b, 0.5).is_err());
        assert!(blend(&a, &a, 1.5).is_err());
        assert!(blend(&a, &a, -0.1).is_err());
        assert!(blend(&a, &a, f32::NAN).is_err());
    }

    #[test]
    fn sketch_of_flat_image_is_white() {
        for v in [0u8, 30, 128, 255] {
            let img = RgbImage::filled(8, 8, [v; 3]).unwrap();
            let out = pencil_sketch(&img, 2.0).unwrap();
            assert!(out.pixels().iter().all(|&p| p == 255), "gray {v}");
        }
    }

    #[test]
    fn sketch_with_zero_radius_is_white() {
        let out = pencil_sketch(&sample(), 0.0).unwrap();
        assert!(out.pixels().iter().all(|&p| p == 255));
    }

    #[test]
    fn sketch_negative_radius_rejected() {
        assert!(pencil_sketch(&sample(), -1.0).is_err());
    }
}
