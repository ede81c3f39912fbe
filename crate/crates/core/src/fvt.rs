//! Fast vocabulary transfer of embedding matrices.
//!
//! Tokens present in both vocabularies keep their row; every other token of
//! the new vocabulary gets the mean of the rows its content splits into
//! under the old tokenizer.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::TokenizerModel;

pub const EMBEDDING_MAGIC: &[u8; 8] = b"TOKEMB01";

/// Dense row-major matrix, one row per token.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value at row {}, column {}",
                i / cols.max(1),
                i % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimMismatch("rows of differing lengths".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != EMBEDDING_MAGIC {
            return Err(Error::InvalidArgument("not an embedding file (bad magic)".into()));
        }
        let mut dims = [0u8; 8];
        r.read_exact(&mut dims)?;
        let rows = u32::from_le_bytes(dims[..4].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(dims[4..].try_into().unwrap()) as usize;
        let mut raw = Vec::new();
        r.read_to_end(&mut raw)?;
        if raw.len() != rows * cols * 4 {
            return Err(Error::DimMismatch(format!(
                "header declares {rows}x{cols} but the file holds {} bytes of data",
                raw.len()
            )));
        }
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(rows, cols, data)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let dim = |n: usize| {
            u32::try_from(n).map_err(|_| Error::InvalidArgument(format!("dimension {n} exceeds u32")))
        };
        w.write_all(EMBEDDING_MAGIC)?;
        w.write_all(&dim(self.rows)?.to_le_bytes())?;
        w.write_all(&dim(self.cols)?.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Writes to a temporary file next to `path` and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, |w| self.write_to(w))
    }
}

/// Builds the embedding matrix of `new_model` from `old_model`'s.
///
/// New tokens are decomposed by tokenizing their raw content with the old
/// model, merge skipping off; the mean is accumulated in `f64`.
pub fn fvt_transfer(
    old_model: &TokenizerModel,
    new_model: &TokenizerModel,
    old: &EmbeddingMatrix,
) -> Result<EmbeddingMatrix> {
    if old.rows() != old_model.vocab_size() {
        return Err(Error::DimMismatch(format!(
            "embedding has {} rows but the old vocabulary has {} tokens",
            old.rows(),
            old_model.vocab_size()
        )));
    }
    let cols = old.cols();
    let rows: Vec<Vec<f32>> = (0..new_model.vocab_size() as u32)
        .into_par_iter()
        .map(|id| {
            let bytes = new_model.token_bytes(id)?;
            if let Some(old_id) = old_model.token_id(bytes) {
                return Ok(old.row(old_id as usize).to_vec());
            }
            let display = || new_model.display_token(id);
            let parts = old_model
                .tokenize_segment(bytes, false)
                .map_err(|e| Error::UntokenizableNewToken {
                    token: display(),
                    reason: e.to_string(),
                })?;
            if let Some(unk) = old_model.unk_token().filter(|u| parts.contains(u)) {
                return Err(Error::UntokenizableNewToken {
                    token: display(),
                    reason: format!("decomposition contains the unknown token {unk}"),
                });
            }
            let mut acc = vec![0f64; cols];
            for &p in &parts {
                for (a, &v) in acc.iter_mut().zip(old.row(p as usize)) {
                    *a += v as f64;
                }
            }
            let n = parts.len() as f64;
            Ok(acc.into_iter().map(|a| (a / n) as f32).collect())
        })
        .collect::<Result<_>>()?;
    EmbeddingMatrix::new(rows.len(), cols, rows.concat())
}
