use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image_io::RgbImage;

/// An elementary (radius-1, binary) cellular automaton run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaRule {
    /// Wolfram code: bit `k` is the next state for neighborhood `k = 4l + 2c + r`.
    pub rule_number: u8,
    pub width: usize,
    /// Number of rows produced, seed row included.
    pub steps: usize,
    pub seed: Vec<bool>,
}

impl CaRule {
    pub fn new(rule_number: u8, seed: Vec<bool>, steps: usize) -> Result<Self> {
        let rule = CaRule {
            rule_number,
            width: seed.len(),
            steps,
            seed,
        };
        rule.validate()?;
        Ok(rule)
    }

    /// Seed row with only the middle cell set.
    pub fn single_cell(rule_number: u8, width: usize, steps: usize) -> Result<Self> {
        let mut seed = vec![false; width];
        if width > 0 {
            seed[width / 2] = true;
        }
        Self::new(rule_number, seed, steps)
    }

    /// Seed row of independent fair coin flips.
    pub fn random(rule_number: u8, width: usize, steps: usize, rng_seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let seed = (0..width).map(|_| rng.random::<bool>()).collect();
        Self::new(rule_number, seed, steps)
    }

    pub fn next_state(&self, left: bool, center: bool, right: bool) -> bool {
        let k = (left as u8) << 2 | (center as u8) << 1 | right as u8;
        (self.rule_number >> k) & 1 == 1
    }

    fn validate(&self) -> Result<()> {
        if self.width < 3 {
            return Err(Error::InvalidArgument(format!(
                "automaton width must be at least 3, got {}",
                self.width
            )));
        }
        if self.seed.len() != self.width {
            return Err(Error::InvalidArgument(format!(
                "seed row has {} cells, width is {}",
                self.seed.len(),
                self.width
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be positive".into()));
        }
        Ok(())
    }
}

/// Space-time diagram of a run: `steps` rows of `width` cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaGrid {
    width: usize,
    cells: Vec<bool>,
}

impl CaGrid {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn steps(&self) -> usize {
        self.cells.len() / self.width
    }

    pub fn row(&self, t: usize) -> &[bool] {
        &self.cells[t * self.width..(t + 1) * self.width]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[bool]> {
        self.cells.chunks_exact(self.width)
    }

    /// One pixel per cell: live cells black, dead cells white.
    pub fn to_image(&self) -> RgbImage {
        RgbImage::from_fn(self.width, self.steps(), |x, y| {
            if self.cells[y * self.width + x] {
                [0; 3]
            } else {
                [255; 3]
            }
        })
        .expect("non-empty grid")
    }
}

/// Runs the automaton with wrap-around boundaries.
pub fn ca_generate(rule: &CaRule) -> Result<CaGrid> {
    rule.validate()?;
    let w = rule.width;
    let mut cells = Vec::with_capacity(w * rule.steps);
    cells.extend_from_slice(&rule.seed);
    for t in 1..rule.steps {
        let prev = (t - 1) * w;
        for i in 0..w {
            let l = cells[prev + (i + w - 1) % w];
            let c = cells[prev + i];
            let r = cells[prev + (i + 1) % w];
            cells.push(rule.next_state(l, c, r));
        }
    }
    Ok(CaGrid { width: w, cells })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_90_is_xor_of_neighbors() {
        let rule = CaRule::random(90, 31, 2, 3).unwrap();
        let grid = ca_generate(&rule).unwrap();
        let (r0, r1) = (grid.row(0), grid.row(1));
        for i in 0..31 {
            assert_eq!(r1[i], r0[(i + 30) % 31] ^ r0[(i + 1) % 31]);
        }
    }

    #[test]
    fn rule_30_first_step_from_single_cell() {
        let grid = ca_generate(&CaRule::single_cell(30, 7, 2).unwrap()).unwrap();
        assert_eq!(
            grid.row(0),
            &[false, false, false, true, false, false, false]
        );
        assert_eq!(grid.row(1), &[false, false, true, true, true, false, false]);
    }

    #[test]
    fn rule_0_dies_out() {
        let grid = ca_generate(&CaRule::random(0, 16, 5, 9).unwrap()).unwrap();
        for t in 1..5 {
            assert!(grid.row(t).iter().all(|&c| !c));
        }
    }

    #[test]
    fn narrow_or_inconsistent_rules_rejected() {
        assert!(CaRule::single_cell(30, 2, 4).is_err());
        assert!(CaRule::single_cell(30, 5, 0).is_err());
        let bad = CaRule {
            rule_number: 30,
            width: 5,
            steps: 3,
            seed: vec![true; 4],
        };
        assert!(ca_generate(&bad).is_err());
    }

    #[test]
    fn rendering_colors() {
        let grid = ca_generate(&CaRule::single_cell(4, 5, 2).unwrap()).unwrap();
        let img = grid.to_image();
        assert_eq!((img.width(), img.height()), (5, 2));
        assert_eq!(img.get(2, 0), [0; 3]);
        assert_eq!(img.get(0, 0), [255; 3]);
        // rule 4 keeps an isolated live cell alive
        assert_eq!(img.get(2, 1), [0; 3]);
    }
}
