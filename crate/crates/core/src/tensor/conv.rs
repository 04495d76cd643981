use rayon::prelude::*;

use super::Tensor;
use crate::error::{Error, Result};

/// Geometry of a 2-D convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    /// Zero padding added on every side.
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(in_channels: usize, out_channels: usize, kernel_h: usize, kernel_w: usize) -> Self {
        ConvGeometry {
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
            stride: 1,
            padding: 0,
        }
    }

    /// 3×3, stride 1, padding 1: the VGG building block.
    pub fn same3x3(in_channels: usize, out_channels: usize) -> Self {
        Self::new(in_channels, out_channels, 3, 3).with_padding(1)
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn kernel_shape(&self) -> Vec<usize> {
        vec![
            self.out_channels,
            self.in_channels,
            self.kernel_h,
            self.kernel_w,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * (self.in_channels * self.kernel_h * self.kernel_w + 1)
    }

    /// `floor((input + 2·padding − kernel) / stride) + 1`, or `None` when the
    /// kernel does not fit.
    pub fn output_extent(&self, input: usize, kernel: usize) -> Option<usize> {
        if self.stride == 0 || kernel == 0 {
            return None;
        }
        let padded = input + 2 * self.padding;
        if padded < kernel {
            return None;
        }
        Some((padded - kernel) / self.stride + 1)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match (
            self.output_extent(h, self.kernel_h),
            self.output_extent(w, self.kernel_w),
        ) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::Shape(format!(
                "{}x{} kernel (stride {}, padding {}) does not fit a {h}x{w} input",
                self.kernel_h, self.kernel_w, self.stride, self.padding
            ))),
        }
    }

    fn validate(&self, input: &Tensor, kernels: &Tensor) -> Result<(usize, usize, usize, usize)> {
        let (c, h, w) = input.dims3()?;
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "input has {c} channels, geometry expects {}",
                self.in_channels
            )));
        }
        if kernels.shape() != self.kernel_shape().as_slice() {
            return Err(Error::Shape(format!(
                "kernel shape {:?} does not match geometry {:?}",
                kernels.shape(),
                self.kernel_shape()
            )));
        }
        let (oh, ow) = self.output_hw(h, w)?;
        Ok((h, w, oh, ow))
    }
}

/// Output positions `o` in `0..out_len` whose tap `o·stride + offset` lands
/// inside `0..in_len`, as a half-open range.
fn valid_range(out_len: usize, in_len: usize, offset: isize, stride: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 {
        0
    } else {
        (-offset + s - 1) / s
    };
    // largest o with o·s + offset <= in_len − 1
    let top = in_len as isize - 1 - offset;
    let hi = if top < 0 { 0 } else { top / s + 1 };
    let lo = lo.clamp(0, out_len as isize) as usize;
    let hi = hi.clamp(0, out_len as isize) as usize;
    (lo, hi.max(lo))
}

/// Cross-correlation with zero padding (no kernel flip):
/// `out[o,y,x] = bias[o] + Σ_{c,i,j} input[c, y·s−p+i, x·s−p+j] · kernels[o,c,i,j]`.
///
/// Each output element is accumulated in `f64` in fixed `(c, i, j)` order, so
/// the result does not depend on how output channels are scheduled.
pub fn conv2d_forward(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    geom: &ConvGeometry,
) -> Result<Tensor> {
    let (h, w, oh, ow) = geom.validate(input, kernels)?;
    if bias.shape() != [geom.out_channels] {
        return Err(Error::Shape(format!(
            "bias shape {:?}, expected [{}]",
            bias.shape(),
            geom.out_channels
        )));
    }
    let (cin, kh, kw) = (geom.in_channels, geom.kernel_h, geom.kernel_w);
    let (s, p) = (geom.stride, geom.padding as isize);
    let x = input.data();
    let k = kernels.data();
    let mut out = vec![0.0f32; geom.out_channels * oh * ow];

    out.par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(o, plane)| {
            let mut acc = vec![bias.data()[o] as f64; oh * ow];
            for c in 0..cin {
                let xc = &x[c * h * w..(c + 1) * h * w];
                for i in 0..kh {
                    let (ylo, yhi) = valid_range(oh, h, i as isize - p, s);
                    for j in 0..kw {
                        let kv = k[((o * cin + c) * kh + i) * kw + j] as f64;
                        let (xlo, xhi) = valid_range(ow, w, j as isize - p, s);
                        for y in ylo..yhi {
                            let iy = (y * s) as isize + i as isize - p;
                            let row = &xc[iy as usize * w..(iy as usize + 1) * w];
                            let arow = &mut acc[y * ow..(y + 1) * ow];
                            for (xo, a) in arow.iter_mut().enumerate().take(xhi).skip(xlo) {
                                let ix = ((xo * s) as isize + j as isize - p) as usize;
                                *a += kv * row[ix] as f64;
                            }
                        }
                    }
                }
            }
            for (dst, a) in plane.iter_mut().zip(acc) {
                *dst = a as f32;
            }
        });

    Tensor::new(vec![geom.out_channels, oh, ow], out)
}

/// Gradient of `⟨conv2d_forward(input), grad_out⟩` with respect to `input`.
/// Only the shape of `input` is read; weights receive no gradient.
pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    grad_out: &Tensor,
    geom: &ConvGeometry,
) -> Result<Tensor> {
    let (h, w, oh, ow) = geom.validate(input, kernels)?;
    if grad_out.shape() != [geom.out_channels, oh, ow] {
        return Err(Error::Shape(format!(
            "grad_out shape {:?}, expected {:?}",
            grad_out.shape(),
            [geom.out_channels, oh, ow]
        )));
    }
    let (cin, kh, kw) = (geom.in_channels, geom.kernel_h, geom.kernel_w);
    let (s, p) = (geom.stride, geom.padding as isize);
    let g = grad_out.data();
    let k = kernels.data();
    let mut out = vec![0.0f32; cin * h * w];

    out.par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(c, plane)| {
            let mut acc = vec![0.0f64; h * w];
            for o in 0..geom.out_channels {
                let go = &g[o * oh * ow..(o + 1) * oh * ow];
                for i in 0..kh {
                    let (ylo, yhi) = valid_range(oh, h, i as isize - p, s);
                    for j in 0..kw {
                        let kv = k[((o * cin + c) * kh + i) * kw + j] as f64;
                        let (xlo, xhi) = valid_range(ow, w, j as isize - p, s);
                        for y in ylo..yhi {
                            let iy = ((y * s) as isize + i as isize - p) as usize;
                            let arow = &mut acc[iy * w..(iy + 1) * w];
                            let grow = &go[y * ow..(y + 1) * ow];
                            for (xo, &gv) in grow.iter().enumerate().take(xhi).skip(xlo) {
                                let ix = ((xo * s) as isize + j as isize - p) as usize;
                                arow[ix] += kv * gv as f64;
                            }
                        }
                    }
                }
            }
            for (dst, a) in plane.iter_mut().zip(acc) {
                *dst = a as f32;
            }
        });

    Tensor::new(vec![cin, h, w], out)
}
