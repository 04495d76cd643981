use std::f64::consts::TAU;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::image_io::RgbImage;

/// Registry of closed-form pattern generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternFormula {
    /// `sin(a·x) + sin(b·y) + sin(c·(x + y))`
    Interference,
    /// `sin(a·r) + sin(b·x)·sin(c·y)`, `r` the distance to the image center.
    Rings,
}

impl PatternFormula {
    pub const IDS: [&'static str; 2] = ["interference", "rings"];

    fn eval(self, x: f64, y: f64, p: &PatternParams, center: (f64, f64)) -> f64 {
        match self {
            PatternFormula::Interference => {
                ((p.a * x).sin() + (p.b * y).sin() + (p.c * (x + y)).sin()) / 3.0
            }
            PatternFormula::Rings => {
                let r = (x - center.0).hypot(y - center.1);
                ((p.a * r).sin() + (p.b * x).sin() * (p.c * y).sin()) / 2.0
            }
        }
    }
}

impl FromStr for PatternFormula {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interference" => Ok(PatternFormula::Interference),
            "rings" => Ok(PatternFormula::Rings),
            other => Err(Error::InvalidArgument(format!(
                "unknown formula {other:?}, expected one of {:?}",
                Self::IDS
            ))),
        }
    }
}

/// Angular frequencies, in radians per pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Default for PatternParams {
    fn default() -> Self {
        PatternParams {
            a: 0.11,
            b: 0.07,
            c: 0.05,
        }
    }
}

/// Cosine palette over `t ∈ [-1, 1]`.
fn palette(t: f64) -> [u8; 3] {
    let u = 0.5 * (t + 1.0);
    [0.0, 1.0 / 3.0, 2.0 / 3.0].map(|phase| {
        let v = 0.5 + 0.5 * (TAU * (u + phase)).cos();
        (255.0 * v).round().clamp(0.0, 255.0) as u8
    })
}

pub fn math_pattern(
    width: usize,
    height: usize,
    formula: PatternFormula,
    params: &PatternParams,
) -> Result<RgbImage> {
    if [params.a, params.b, params.c]
        .iter()
        .any(|v| !v.is_finite())
    {
        return Err(Error::InvalidArgument(
            "pattern parameters must be finite".into(),
        ));
    }
    let center = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    RgbImage::from_fn(width, height, |x, y| {
        palette(formula.eval(x as f64, y as f64, params, center))
    })
}
