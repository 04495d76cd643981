//! Raster I/O (8-bit PNG, binary PPM) and the conversion between pixel space
//! and the network's real-valued input space.

use std::fs;
use std::io::{BufWriter, Cursor, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 8-bit RGB raster, row-major, three bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image extents must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != 3 * width * height {
            return Err(Error::Shape(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                3 * width * height,
                pixels.len()
            )));
        }
        Ok(RgbImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(3 * width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// One channel as a row-major plane.
    pub fn channel(&self, c: usize) -> Vec<u8> {
        self.pixels.iter().skip(c).step_by(3).copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Png,
    Ppm,
}

fn format_for_path(path: &Path) -> Result<Format> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("png") => Ok(Format::Png),
        Some("ppm") => Ok(Format::Ppm),
        _ => Err(Error::UnsupportedFormat(format!(
            "{} (expected .png or .ppm)",
            path.display()
        ))),
    }
}

/// Loads a PNG or binary PPM (P6). The format is sniffed from the content.
pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

pub fn decode_image(bytes: &[u8]) -> Result<RgbImage> {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        decode_png(bytes)
    } else if bytes.starts_with(b"P6") {
        decode_ppm(bytes)
    } else {
        Err(Error::UnsupportedFormat(
            "neither a PNG nor a binary PPM".into(),
        ))
    }
}

/// Writes PNG or PPM depending on the file extension.
pub fn save_image(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_image(img, format_for_path(path)? == Format::Png)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Encoded bytes of `img`; `png = false` produces PPM P6.
pub fn encode_image(img: &RgbImage, png: bool) -> Result<Vec<u8>> {
    if png {
        encode_png(img)
    } else {
        Ok(encode_ppm(img))
    }
}

fn composite_on_white(c: u8, a: u8) -> u8 {
    let (c, a) = (c as u32, a as u32);
    ((c * a + 255 * (255 - a) + 127) / 255) as u8
}

fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Decode(e.to_string()))?;
    let depth = reader.info().bit_depth;
    if depth == png::BitDepth::Sixteen {
        return Err(Error::UnsupportedDepth("16-bit PNG".into()));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Decode("PNG too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Decode(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedDepth(format!("{:?}", info.bit_depth)));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let data = &buf[..info.buffer_size()];
    let mut pixels = Vec::with_capacity(3 * w * h);
    for row in data.chunks(info.line_size) {
        match info.color_type {
            png::ColorType::Rgb => pixels.extend_from_slice(&row[..3 * w]),
            png::ColorType::Rgba => {
                for px in row[..4 * w].chunks_exact(4) {
                    for &c in &px[..3] {
                        pixels.push(composite_on_white(c, px[3]));
                    }
                }
            }
            png::ColorType::Grayscale => {
                for &g in &row[..w] {
                    pixels.extend_from_slice(&[g, g, g]);
                }
            }
            png::ColorType::GrayscaleAlpha => {
                for px in row[..2 * w].chunks_exact(2) {
                    let g = composite_on_white(px[0], px[1]);
                    pixels.extend_from_slice(&[g, g, g]);
                }
            }
            png::ColorType::Indexed => {
                return Err(Error::Decode("palette was not expanded".into()));
            }
        }
    }
    RgbImage::new(w, h, pixels)
}

fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(
            BufWriter::new(&mut out),
            img.width as u32,
            img.height as u32,
        );
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Decode(e.to_string()))?;
        writer
            .write_image_data(&img.pixels)
            .map_err(|e| Error::Decode(e.to_string()))?;
        writer.finish().map_err(|e| Error::Decode(e.to_string()))?;
    }
    Ok(out)
}

fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.pixels.len() + 20);
    write!(out, "P6\n{} {}\n255\n", img.width, img.height).expect("write to Vec");
    out.extend_from_slice(&img.pixels);
    out
}

fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    // header: magic, width, height, maxval, separated by whitespace and
    // '#' comments, followed by exactly one whitespace byte
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::Decode("truncated PPM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Decode("malformed PPM header".into()))?;
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::Decode("malformed PPM header".into()));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(Error::UnsupportedDepth(format!("PPM maxval {maxval}")));
    }
    let need = 3 * w * h;
    let body = &bytes[pos..];
    if body.len() < need {
        return Err(Error::Decode(format!(
            "PPM body has {} bytes, expected {need}",
            body.len()
        )));
    }
    RgbImage::new(w, h, body[..need].to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelOrder {
    Rgb,
    Bgr,
}

/// How pixels are mapped into network input space.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessSpec {
    /// Subtracted per channel, in the output channel order.
    pub means: [f32; 3],
    pub order: ChannelOrder,
    /// `(width, height)` to resize to; `None` keeps the source extents.
    pub target: Option<(usize, usize)>,
}

impl Default for PreprocessSpec {
    /// Caffe-style VGG16 preprocessing: BGR with ImageNet means.
    fn default() -> Self {
        PreprocessSpec {
            means: [103.939, 116.779, 123.68],
            order: ChannelOrder::Bgr,
            target: None,
        }
    }
}

impl PreprocessSpec {
    /// RGB order, zero means; what random-weight networks expect.
    pub fn plain() -> Self {
        PreprocessSpec {
            means: [0.0; 3],
            order: ChannelOrder::Rgb,
            target: None,
        }
    }

    pub fn with_target(mut self, width: usize, height: usize) -> Self {
        self.target = Some((width, height));
        self
    }

    fn source_channel(&self, c: usize) -> usize {
        match self.order {
            ChannelOrder::Rgb => c,
            ChannelOrder::Bgr => 2 - c,
        }
    }

    /// Per-channel `(min, max)` that deprocesses without clamping.
    pub fn valid_range(&self) -> [(f32, f32); 3] {
        self.means.map(|m| (-m, 255.0 - m))
    }

    fn validate(&self) -> Result<()> {
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument("non-finite channel mean".into()));
        }
        if let Some((w, h)) = self.target {
            if w == 0 || h == 0 {
                return Err(Error::InvalidArgument(format!(
                    "zero-extent preprocess target {w}x{h}"
                )));
            }
        }
        Ok(())
    }
}

/// Rounds `n` to the nearest positive multiple of `m`.
pub fn snap_extent(n: usize, m: usize) -> usize {
    (((n + m / 2) / m) * m).max(m)
}

/// Bilinear resize of a single plane with half-pixel centers and edge clamping.
pub fn resize_plane(src: &[f32], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f32> {
    if sw == dw && sh == dh {
        return src.to_vec();
    }
    let axis = |d: usize, s: usize, n: usize| -> (usize, usize, f32) {
        let pos = ((d as f64 + 0.5) * s as f64 / n as f64 - 0.5).clamp(0.0, (s - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(s - 1);
        (i0, i1, (pos - i0 as f64) as f32)
    };
    let xs: Vec<_> = (0..dw).map(|x| axis(x, sw, dw)).collect();
    let mut out = Vec::with_capacity(dw * dh);
    for y in 0..dh {
        let (y0, y1, ty) = axis(y, sh, dh);
        for &(x0, x1, tx) in &xs {
            let lerp = |a: f32, b: f32, t: f32| if a == b { a } else { a + t * (b - a) };
            let top = lerp(src[y0 * sw + x0], src[y0 * sw + x1], tx);
            let bottom = lerp(src[y1 * sw + x0], src[y1 * sw + x1], tx);
            out.push(lerp(top, bottom, ty));
        }
    }
    out
}

/// Pixels to a `[3, H, W]` network input: resize, reorder, subtract means.
pub fn preprocess(img: &RgbImage, spec: &PreprocessSpec) -> Result<Tensor> {
    spec.validate()?;
    let (sw, sh) = (img.width, img.height);
    let (dw, dh) = spec.target.unwrap_or((sw, sh));
    let mut data = Vec::with_capacity(3 * dw * dh);
    for c in 0..3 {
        let plane: Vec<f32> = img
            .channel(spec.source_channel(c))
            .into_iter()
            .map(f32::from)
            .collect();
        let mean = spec.means[c];
        data.extend(
            resize_plane(&plane, sw, sh, dw, dh)
                .into_iter()
                .map(|v| v - mean),
        );
    }
    Tensor::new(vec![3, dh, dw], data)
}

/// Inverse of [`preprocess`] (without resizing): add means, restore RGB
/// order, clamp to `[0, 255]` and round half away from zero.
pub fn deprocess(t: &Tensor, spec: &PreprocessSpec) -> Result<RgbImage> {
    spec.validate()?;
    let (c, h, w) = t.dims3()?;
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let mut pixels = vec![0u8; 3 * w * h];
    for ch in 0..3 {
        let dst = spec.source_channel(ch);
        let mean = spec.means[ch];
        let plane = &t.data()[ch * h * w..(ch + 1) * h * w];
        for (i, &v) in plane.iter().enumerate() {
            pixels[3 * i + dst] = (v + mean).clamp(0.0, 255.0).round() as u8;
        }
    }
    RgbImage::new(w, h, pixels)
}
