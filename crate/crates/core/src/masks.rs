//! `P×P` binary patch masks.
//!
//! A bit value of 1 selects the *first* image of a pair for that patch
//! region, 0 selects the second. Cells are stored row-major.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::math;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PatchMask {
    grid: usize,
    bits: Vec<bool>,
}

impl PatchMask {
    pub fn new(grid: usize, bits: Vec<bool>) -> Result<Self> {
        if grid == 0 {
            return Err(Error::config("grid size must be at least 1"));
        }
        if bits.len() != grid * grid {
            return Err(Error::config(alloc::format!(
                "mask with grid {grid} needs {} bits, got {}",
                grid * grid,
                bits.len()
            )));
        }
        Ok(PatchMask { grid, bits })
    }

    /// Builds a mask from rows of 0/1 values.
    pub fn from_rows(rows: &[&[u8]]) -> Result<Self> {
        let grid = rows.len();
        let mut bits = Vec::with_capacity(grid * grid);
        for row in rows {
            if row.len() != grid {
                return Err(Error::config("mask rows must form a square"));
            }
            for &v in *row {
                match v {
                    0 => bits.push(false),
                    1 => bits.push(true),
                    _ => return Err(Error::config("mask values must be 0 or 1")),
                }
            }
        }
        PatchMask::new(grid, bits)
    }

    pub fn filled(grid: usize, value: bool) -> Self {
        assert!(grid >= 1, "grid size must be at least 1");
        PatchMask { grid, bits: alloc::vec![value; grid * grid] }
    }

    pub fn zeros(grid: usize) -> Self {
        Self::filled(grid, false)
    }

    pub fn ones(grid: usize) -> Self {
        Self::filled(grid, true)
    }

    /// Every cell independently `round(Beta(α, α))`.
    pub fn sample_random<R: Rng + ?Sized>(grid: usize, alpha: f64, rng: &mut R) -> Result<Self> {
        if grid == 0 {
            return Err(Error::config("grid size must be at least 1"));
        }
        let beta = Beta::new(alpha, alpha)
            .map_err(|_| Error::config(alloc::format!("invalid Beta shape {alpha}")))?;
        let bits = (0..grid * grid).map(|_| math::round(beta.sample(rng)) >= 1.0).collect();
        Ok(PatchMask { grid, bits })
    }

    /// Uniform bits, each cell a fair coin.
    pub fn uniform<R: Rng + ?Sized>(grid: usize, rng: &mut R) -> Self {
        assert!(grid >= 1, "grid size must be at least 1");
        PatchMask { grid, bits: (0..grid * grid).map(|_| rng.random::<bool>()).collect() }
    }

    pub fn grid_size(&self) -> usize {
        self.grid
    }

    pub fn cell_count(&self) -> usize {
        self.bits.len()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.grid + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.grid + col] = value;
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// `λ = popcount / P²`.
    pub fn mixing_ratio(&self) -> f64 {
        self.popcount() as f64 / self.bits.len() as f64
    }

    pub fn complement(&self) -> Self {
        PatchMask { grid: self.grid, bits: self.bits.iter().map(|b| !b).collect() }
    }

    pub fn transpose(&self) -> Self {
        let p = self.grid;
        let mut bits = alloc::vec![false; p * p];
        for r in 0..p {
            for c in 0..p {
                bits[c * p + r] = self.get(r, c);
            }
        }
        PatchMask { grid: p, bits }
    }

    pub(crate) fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    /// Hamming distance to another mask of the same grid size.
    pub fn hamming(&self, other: &PatchMask) -> usize {
        assert_eq!(self.grid, other.grid, "grid sizes differ");
        self.bits.iter().zip(&other.bits).filter(|(a, b)| a != b).count()
    }

    /// Expands to pixel resolution: pixel `(s, t)` takes
    /// `bits[⌊s·P/H⌋][⌊t·P/W⌋]`.
    pub fn expand(&self, width: usize, height: usize) -> Result<PixelMask> {
        check_divisible(self.grid, width, height)?;
        let mut bits = Vec::with_capacity(width * height);
        for s in 0..height {
            let r = s * self.grid / height;
            for t in 0..width {
                bits.push(self.get(r, t * self.grid / width));
            }
        }
        Ok(PixelMask { width, height, bits })
    }

    /// Recovers the grid mask from a pixel mask by majority vote per region.
    pub fn from_pixel_mask(pixels: &PixelMask, grid: usize) -> Result<Self> {
        check_divisible(grid, pixels.width, pixels.height)?;
        let (rh, rw) = (pixels.height / grid, pixels.width / grid);
        let mut bits = Vec::with_capacity(grid * grid);
        for r in 0..grid {
            for c in 0..grid {
                let mut ones = 0usize;
                for s in r * rh..(r + 1) * rh {
                    for t in c * rw..(c + 1) * rw {
                        ones += usize::from(pixels.get(s, t));
                    }
                }
                bits.push(2 * ones > rh * rw);
            }
        }
        PatchMask::new(grid, bits)
    }

    /// Text body without the `P=` header: `P` lines of `P` characters.
    pub fn rows_text(&self) -> String {
        let mut out = String::with_capacity(self.grid * (self.grid + 1));
        for r in 0..self.grid {
            if r > 0 {
                out.push('\n');
            }
            for c in 0..self.grid {
                out.push(if self.get(r, c) { '1' } else { '0' });
            }
        }
        out
    }

    /// Parses `P` lines of `P` `0`/`1` characters.
    pub fn parse_rows<'a>(grid: usize, lines: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut bits = Vec::with_capacity(grid * grid);
        let mut count = 0;
        for line in lines {
            count += 1;
            if count > grid {
                return Err(Error::format(alloc::format!("expected {grid} mask rows, got more")));
            }
            let line = line.trim_end_matches('\r');
            if line.chars().count() != grid {
                return Err(Error::format(alloc::format!(
                    "mask row {line:?} should have {grid} characters"
                )));
            }
            for ch in line.chars() {
                match ch {
                    '0' => bits.push(false),
                    '1' => bits.push(true),
                    other => {
                        return Err(Error::format(alloc::format!(
                            "invalid mask character {other:?} in row {line:?}"
                        )))
                    }
                }
            }
        }
        if count != grid {
            return Err(Error::format(alloc::format!("expected {grid} mask rows, got {count}")));
        }
        PatchMask::new(grid, bits).map_err(|e| Error::format(alloc::format!("{e}")))
    }
}

fn check_divisible(grid: usize, width: usize, height: usize) -> Result<()> {
    if grid == 0 || width % grid != 0 || height % grid != 0 || width == 0 || height == 0 {
        return Err(Error::config(alloc::format!(
            "image {width}x{height} is not divisible into a {grid}x{grid} grid"
        )));
    }
    Ok(())
}

/// Text form: `P=<n>` then `P` rows of `0`/`1`.
impl fmt::Display for PatchMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P={}\n{}", self.grid, self.rows_text())
    }
}

impl FromStr for PatchMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut lines = s.trim_end_matches('\n').split('\n');
        let header = lines.next().unwrap_or("").trim_end_matches('\r');
        let grid: usize = header
            .strip_prefix("P=")
            .and_then(|n| n.parse().ok())
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::format(alloc::format!("bad mask header {header:?}")))?;
        PatchMask::parse_rows(grid, lines)
    }
}

/// Pixel-resolution mask, row-major over `H` rows of `W` pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl PixelMask {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}
