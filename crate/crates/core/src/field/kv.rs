//! Key/value blocks for the toy attention field.

use crate::error::{Error, Result};

/// Keys and values of every token of one chunk, `tokens × dim` each.
#[derive(Debug, Clone, PartialEq)]
pub struct KvBlock {
    tokens: usize,
    dim: usize,
    keys: Vec<f64>,
    values: Vec<f64>,
}

impl KvBlock {
    pub fn new(tokens: usize, dim: usize, keys: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if keys.len() != tokens * dim || values.len() != tokens * dim {
            return Err(Error::invalid(format!(
                "kv block expects {} values per side, got {} keys and {} values",
                tokens * dim,
                keys.len(),
                values.len()
            )));
        }
        Ok(KvBlock {
            tokens,
            dim,
            keys,
            values,
        })
    }

    pub fn zeros(tokens: usize, dim: usize) -> Self {
        KvBlock {
            tokens,
            dim,
            keys: vec![0.0; tokens * dim],
            values: vec![0.0; tokens * dim],
        }
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn key(&self, j: usize) -> &[f64] {
        &self.keys[j * self.dim..(j + 1) * self.dim]
    }

    pub fn value(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    /// Overwrites the rows listed in `rows.tokens` with freshly projected K/V.
    pub fn update_rows(&mut self, rows: &KvRows) -> Result<()> {
        if rows.dim != self.dim {
            return Err(Error::invalid("kv row width mismatch"));
        }
        let d = self.dim;
        for (r, &p) in rows.tokens.iter().enumerate() {
            if p >= self.tokens {
                return Err(Error::invalid(format!("kv row {p} outside 0..{}", self.tokens)));
            }
            self.keys[p * d..(p + 1) * d].copy_from_slice(&rows.keys[r * d..(r + 1) * d]);
            self.values[p * d..(p + 1) * d].copy_from_slice(&rows.values[r * d..(r + 1) * d]);
        }
        Ok(())
    }
}

/// A subset of projected K/V rows, parallel to `tokens`.
#[derive(Debug, Clone, PartialEq)]
pub struct KvRows {
    pub tokens: Vec<usize>,
    pub dim: usize,
    pub keys: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
enum Slot {
    /// Still being denoised; refreshed whenever the chunk computes.
    Live(KvBlock),
    Finalized(KvBlock),
}

impl Slot {
    fn block(&self) -> &KvBlock {
        match self {
            Slot::Live(b) | Slot::Finalized(b) => b,
        }
    }
}

/// Per-chunk K/V blocks ordered by chunk index.
///
/// Finalized blocks are immutable and must be appended in chunk order.
/// Live blocks carry the current state of chunks that are still denoising
/// when windows overlap.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvCache {
    slots: Vec<Option<Slot>>,
}

impl KvCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn slot_mut(&mut self, chunk: usize) -> &mut Option<Slot> {
        if self.slots.len() <= chunk {
            self.slots.resize(chunk + 1, None);
        }
        &mut self.slots[chunk]
    }

    pub fn set_live(&mut self, chunk: usize, block: KvBlock) -> Result<()> {
        let slot = self.slot_mut(chunk);
        if let Some(Slot::Finalized(_)) = slot {
            return Err(Error::state(format!("chunk {chunk} K/V is finalized and immutable")));
        }
        *slot = Some(Slot::Live(block));
        Ok(())
    }

    /// Appends the immutable K/V block of a fully denoised chunk.
    pub fn finalize_chunk(&mut self, chunk: usize, block: KvBlock) -> Result<()> {
        let done = self.finalized_chunks();
        if chunk < done
            || matches!(self.slots.get(chunk), Some(Some(Slot::Finalized(_))))
        {
            return Err(Error::state(format!("chunk {chunk} is already finalized")));
        }
        if chunk != done {
            return Err(Error::state(format!(
                "chunk {chunk} finalized out of order, next expected is {done}"
            )));
        }
        *self.slot_mut(chunk) = Some(Slot::Finalized(block));
        Ok(())
    }

    pub fn is_finalized(&self, chunk: usize) -> bool {
        matches!(self.slots.get(chunk), Some(Some(Slot::Finalized(_))))
    }

    pub fn contains(&self, chunk: usize) -> bool {
        matches!(self.slots.get(chunk), Some(Some(_)))
    }

    pub fn block(&self, chunk: usize) -> Option<&KvBlock> {
        self.slots.get(chunk).and_then(|s| s.as_ref()).map(Slot::block)
    }

    /// Number of leading finalized chunks.
    pub fn finalized_chunks(&self) -> usize {
        self.slots
            .iter()
            .take_while(|s| matches!(s, Some(Slot::Finalized(_))))
            .count()
    }

    pub fn finalized_tokens(&self) -> usize {
        self.slots
            .iter()
            .filter_map(|s| match s {
                Some(Slot::Finalized(b)) => Some(b.tokens()),
                _ => None,
            })
            .sum()
    }

    /// Blocks of all chunks preceding `chunk`, oldest first.
    ///
    /// Every earlier chunk must have a live or finalized block.
    pub fn context_for(&self, chunk: usize) -> Result<Vec<&KvBlock>> {
        (0..chunk)
            .map(|j| {
                self.block(j).ok_or_else(|| {
                    Error::state(format!("K/V for chunk {j} missing while evaluating chunk {chunk}"))
                })
            })
            .collect()
    }

    pub fn context_tokens(&self, chunk: usize) -> usize {
        (0..chunk).filter_map(|j| self.block(j)).map(KvBlock::tokens).sum()
    }
}
