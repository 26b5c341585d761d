//! Dense `F×H×W×C` latent tensors and token addressing.
//!
//! Storage is row-major with channels innermost, so the `C` values of one
//! token are contiguous and token `p = f·H·W + h·W + w` occupies
//! `data[p·C .. (p+1)·C]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Extent of one chunk latent: frames, height, width, channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

/// Spatial-temporal address of a single token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TokenIndex {
    pub frame: usize,
    pub row: usize,
    pub col: usize,
}

impl Shape {
    pub fn new(frames: usize, height: usize, width: usize, channels: usize) -> Result<Self> {
        let shape = Shape {
            frames,
            height,
            width,
            channels,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::invalid(format!(
                "every extent must be >= 1, got {}x{}x{}x{}",
                self.frames, self.height, self.width, self.channels
            )));
        }
        Ok(())
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.height * self.width
    }

    pub fn tokens(&self) -> usize {
        self.frames * self.tokens_per_frame()
    }

    pub fn len(&self) -> usize {
        self.tokens() * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self, idx: TokenIndex) -> Result<usize> {
        if idx.frame >= self.frames || idx.row >= self.height || idx.col >= self.width {
            return Err(Error::invalid(format!(
                "token ({}, {}, {}) outside {}x{}x{}",
                idx.frame, idx.row, idx.col, self.frames, self.height, self.width
            )));
        }
        Ok(idx.frame * self.tokens_per_frame() + idx.row * self.width + idx.col)
    }

    pub fn unflatten(&self, p: usize) -> Result<TokenIndex> {
        if p >= self.tokens() {
            return Err(Error::invalid(format!(
                "token index {p} outside 0..{}",
                self.tokens()
            )));
        }
        let hw = self.tokens_per_frame();
        Ok(TokenIndex {
            frame: p / hw,
            row: (p % hw) / self.width,
            col: p % self.width,
        })
    }
}

/// Dense double-precision latent tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::invalid(format!(
                "buffer of {} values does not fit shape {:?} ({} values)",
                data.len(),
                shape,
                shape.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn token(&self, p: usize) -> &[f64] {
        let c = self.shape.channels;
        &self.data[p * c..(p + 1) * c]
    }

    pub fn token_mut(&mut self, p: usize) -> &mut [f64] {
        let c = self.shape.channels;
        &mut self.data[p * c..(p + 1) * c]
    }

    /// The `H·W·C` values of frame `f`.
    pub fn frame(&self, f: usize) -> &[f64] {
        let n = self.shape.tokens_per_frame() * self.shape.channels;
        &self.data[f * n..(f + 1) * n]
    }

    pub fn ensure_same_shape(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::invalid(format!(
                "{what}: shape {:?} does not match {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::Numeric(format!(
                "{what}: non-finite value {} at element {i}",
                self.data[i]
            ))),
            None => Ok(()),
        }
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.ensure_same_shape(other, what)?;
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.ensure_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Per-token L2 norm over channels, length `F·H·W`.
    pub fn token_l2_norms(&self) -> Vec<f64> {
        self.data
            .chunks_exact(self.shape.channels)
            .map(|t| t.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }

    /// Little-endian bytes of the buffer, used for digests.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

/// Per-token selection over the `F·H·W` tokens of a chunk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenMask {
    bits: Vec<bool>,
}

impl TokenMask {
    pub fn all(tokens: usize) -> Self {
        TokenMask {
            bits: vec![true; tokens],
        }
    }

    pub fn none(tokens: usize) -> Self {
        TokenMask {
            bits: vec![false; tokens],
        }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        TokenMask { bits }
    }

    pub fn from_indices(tokens: usize, active: &[usize]) -> Result<Self> {
        let mut bits = vec![false; tokens];
        for &p in active {
            if p >= tokens {
                return Err(Error::invalid(format!("mask index {p} outside 0..{tokens}")));
            }
            bits[p] = true;
        }
        Ok(TokenMask { bits })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, p: usize) -> bool {
        self.bits[p]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_all(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }

    pub fn is_none(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn active_indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(p, &b)| b.then_some(p))
            .collect()
    }

    /// Packed LSB-first bitmap, token `p` at bit `p % 8` of byte `p / 8`.
    pub fn to_bitmap(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.bits.len().div_ceil(8)];
        for (p, &b) in self.bits.iter().enumerate() {
            if b {
                out[p / 8] |= 1 << (p % 8);
            }
        }
        out
    }

    pub fn from_bitmap(tokens: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != tokens.div_ceil(8) {
            return Err(Error::Format(format!(
                "bitmap of {} bytes cannot hold exactly {tokens} tokens",
                bytes.len()
            )));
        }
        let bits = (0..tokens).map(|p| bytes[p / 8] & (1 << (p % 8)) != 0).collect();
        Ok(TokenMask { bits })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn flatten_known_positions() {
        let s = Shape::new(2, 3, 4, 1).unwrap();
        let origin = TokenIndex { frame: 0, row: 0, col: 0 };
        assert_eq!(s.flatten(origin).unwrap(), 0);
        let last = TokenIndex { frame: 1, row: 2, col: 3 };
        assert_eq!(s.flatten(last).unwrap(), 23);
    }

    #[test]
    fn flatten_rejects_out_of_range() {
        let s = Shape::new(2, 3, 4, 1).unwrap();
        assert!(s.flatten(TokenIndex { frame: 2, row: 0, col: 0 }).is_err());
        assert!(s.flatten(TokenIndex { frame: 0, row: 3, col: 0 }).is_err());
        assert!(s.flatten(TokenIndex { frame: 0, row: 0, col: 4 }).is_err());
        assert!(s.unflatten(24).is_err());
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(Shape::new(0, 1, 1, 1).is_err());
        assert!(Tensor::new(Shape { frames: 1, height: 1, width: 1, channels: 2 }, vec![1.0]).is_err());
    }

    #[test]
    fn bitmap_layout_is_lsb_first() {
        let m = TokenMask::from_indices(10, &[0, 3, 9]).unwrap();
        assert_eq!(m.to_bitmap(), vec![0b0000_1001, 0b0000_0010]);
        assert_eq!(TokenMask::from_bitmap(10, &m.to_bitmap()).unwrap(), m);
    }

    proptest! {
        #[test]
        fn flatten_unflatten_bijection(f in 1usize..5, h in 1usize..7, w in 1usize..7) {
            let s = Shape::new(f, h, w, 1).unwrap();
            for p in 0..s.tokens() {
                let idx = s.unflatten(p).unwrap();
                prop_assert_eq!(s.flatten(idx).unwrap(), p);
            }
        }
    }
}
