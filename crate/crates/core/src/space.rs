//! Embedding spaces ("sub-perceptions") and the corpus that bundles them.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::linalg::{dot_f32, dot_mixed};
use crate::{Error, Result};

/// Rows whose norm is already this close to one are stored untouched, so
/// normalising a saved corpus again is the identity.
const UNIT_TOLERANCE: f64 = 1e-6;

/// One embedding space: `len` rows of `dim` unit-norm `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSpace {
    id: String,
    dim: usize,
    data: Vec<f32>,
}

/// Summary of row norms, reported by `ingest --check`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl EmbeddingSpace {
    /// Builds a space from row-major data, normalising every row to unit
    /// length. Zero or non-finite rows are rejected.
    pub fn from_rows(id: impl Into<String>, dim: usize, mut data: Vec<f32>) -> Result<Self> {
        let id = id.into();
        if dim == 0 {
            return Err(Error::InvalidParam(alloc::format!("space `{id}` has dim 0")));
        }
        if data.len() % dim != 0 {
            return Err(Error::DimMismatch {
                context: id,
                expected: dim,
                actual: data.len() % dim,
            });
        }
        for (row, chunk) in data.chunks_exact_mut(dim).enumerate() {
            if chunk.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteRow { space: id, row });
            }
            let norm = libm::sqrt(dot_f32(chunk, chunk));
            if norm == 0.0 {
                return Err(Error::ZeroNormRow { space: id, row });
            }
            if (norm - 1.0).abs() > UNIT_TOLERANCE {
                for x in chunk.iter_mut() {
                    *x = (*x as f64 / norm) as f32;
                }
            }
        }
        Ok(Self { id, dim, data })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.len(),
            });
        }
        Ok(())
    }

    /// Cosine similarity of items `a` and `b` (a dot product of unit rows).
    pub fn similarity(&self, a: usize, b: usize) -> Result<f64> {
        self.check_index(a)?;
        self.check_index(b)?;
        Ok(dot_f32(self.row(a), self.row(b)))
    }

    /// Cosine similarity of `query` against every row.
    pub fn similarity_to_all(&self, query: &[f32]) -> Result<Vec<f64>> {
        let q = self.normalized_query(query)?;
        let mut out = vec![0.0; self.len()];
        self.similarity_to_all_into(&q, &mut out);
        Ok(out)
    }

    /// Normalises a query to a unit `f64` vector of this space's dimension.
    pub fn normalized_query(&self, query: &[f32]) -> Result<Vec<f64>> {
        if query.len() != self.dim {
            return Err(Error::DimMismatch {
                context: self.id.to_string(),
                expected: self.dim,
                actual: query.len(),
            });
        }
        let norm = libm::sqrt(dot_f32(query, query));
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidParam(alloc::format!(
                "query for space `{}` has zero or non-finite norm",
                self.id
            )));
        }
        Ok(query.iter().map(|&x| x as f64 / norm).collect())
    }

    /// Writes `dot(query, row_i)` into `out[i]`; `query` must already be unit length.
    pub fn similarity_to_all_into(&self, query: &[f64], out: &mut [f64]) {
        debug_assert_eq!(query.len(), self.dim);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.dim)) {
            *o = dot_mixed(query, row);
        }
    }

    pub fn norm_stats(&self) -> NormStats {
        let mut stats = NormStats {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            mean: 0.0,
        };
        for row in self.data.chunks_exact(self.dim) {
            let n = libm::sqrt(dot_f32(row, row));
            stats.min = stats.min.min(n);
            stats.max = stats.max.max(n);
            stats.mean += n;
        }
        stats.mean /= self.len().max(1) as f64;
        stats
    }
}

/// Per-item metadata from the corpus manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemMeta {
    pub item_id: String,
    #[serde(default)]
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thumbnail_uri: Option<String>,
}

impl ItemMeta {
    pub fn new(item_id: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            item_id: item_id.into(),
            label: label.into(),
            thumbnail_uri: None,
        }
    }
}

/// Items plus `F >= 1` parallel embedding spaces. Immutable once built.
#[derive(Debug, Clone)]
pub struct Corpus {
    items: Vec<ItemMeta>,
    spaces: Vec<EmbeddingSpace>,
    index: BTreeMap<String, usize>,
}

impl Corpus {
    pub fn new(items: Vec<ItemMeta>, spaces: Vec<EmbeddingSpace>) -> Result<Self> {
        if spaces.is_empty() {
            return Err(Error::InvalidParam("a corpus needs at least one space".into()));
        }
        let n = items.len();
        for space in &spaces {
            if space.len() != n {
                return Err(Error::ItemCountMismatch {
                    space: space.id().to_string(),
                    expected: n,
                    actual: space.len(),
                });
            }
        }
        let mut index = BTreeMap::new();
        for (i, item) in items.iter().enumerate() {
            if index.insert(item.item_id.clone(), i).is_some() {
                return Err(Error::DuplicateItem(item.item_id.clone()));
            }
        }
        Ok(Self {
            items,
            spaces,
            index,
        })
    }

    /// Convenience constructor that labels items `item-0`, `item-1`, ...
    pub fn from_spaces(spaces: Vec<EmbeddingSpace>) -> Result<Self> {
        let n = spaces.first().map_or(0, EmbeddingSpace::len);
        let items = (0..n)
            .map(|i| ItemMeta::new(alloc::format!("item-{i}"), alloc::format!("item {i}")))
            .collect();
        Self::new(items, spaces)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn num_spaces(&self) -> usize {
        self.spaces.len()
    }

    pub fn spaces(&self) -> &[EmbeddingSpace] {
        &self.spaces
    }

    pub fn space(&self, f: usize) -> &EmbeddingSpace {
        &self.spaces[f]
    }

    pub fn space_index(&self, id: &str) -> Option<usize> {
        self.spaces.iter().position(|s| s.id() == id)
    }

    pub fn items(&self) -> &[ItemMeta] {
        &self.items
    }

    pub fn item(&self, i: usize) -> Option<&ItemMeta> {
        self.items.get(i)
    }

    pub fn item_index(&self, item_id: &str) -> Option<usize> {
        self.index.get(item_id).copied()
    }

    pub fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.len(),
            });
        }
        Ok(())
    }

    /// Mean over spaces of `cos(query_f, row_i^f)` for every item.
    pub fn mean_similarity_to_all(&self, queries: &[Vec<f32>]) -> Result<Vec<f64>> {
        if queries.len() != self.num_spaces() {
            return Err(Error::LengthMismatch {
                what: "per-space query vectors",
                expected: self.num_spaces(),
                actual: queries.len(),
            });
        }
        let mut total = vec![0.0; self.len()];
        let mut scratch = vec![0.0; self.len()];
        for (space, q) in self.spaces.iter().zip(queries) {
            let q = space.normalized_query(q)?;
            space.similarity_to_all_into(&q, &mut scratch);
            for (t, s) in total.iter_mut().zip(&scratch) {
                *t += *s;
            }
        }
        let f = self.num_spaces() as f64;
        for t in &mut total {
            *t /= f;
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn space(rows: &[[f32; 2]]) -> EmbeddingSpace {
        EmbeddingSpace::from_rows("s", 2, rows.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn similarity_examples() {
        let s = space(&[[1.0, 0.0], [0.0, 1.0], [0.6, 0.8], [1.0, 0.0]]);
        assert_eq!(s.similarity(0, 3).unwrap(), 1.0);
        assert_eq!(s.similarity(0, 1).unwrap(), 0.0);
        assert_abs_diff_eq!(s.similarity(0, 2).unwrap(), 0.6, epsilon = 1e-7);
        assert!(matches!(
            s.similarity(0, 9),
            Err(Error::IndexOutOfRange { index: 9, len: 4 })
        ));
    }

    #[test]
    fn rows_are_normalised_and_zero_rows_rejected() {
        let s = space(&[[3.0, 4.0], [0.0, -2.0]]);
        assert_abs_diff_eq!(s.row(0)[0] as f64, 0.6, epsilon = 1e-7);
        let stats = s.norm_stats();
        assert!((stats.min - 1.0).abs() < 1e-4 && (stats.max - 1.0).abs() < 1e-4);
        let err = EmbeddingSpace::from_rows("b", 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap_err();
        assert_eq!(
            err,
            Error::ZeroNormRow {
                space: "b".into(),
                row: 1
            }
        );
    }

    #[test]
    fn renormalising_is_the_identity() {
        let raw: Vec<f32> = (0..64 * 5).map(|i| ((i * 7919) % 113) as f32 - 50.0).collect();
        let s = EmbeddingSpace::from_rows("a", 64, raw).unwrap();
        let again = EmbeddingSpace::from_rows("a", 64, s.as_slice().to_vec()).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn similarity_to_all_examples() {
        let s = space(&[[1.0, 0.0], [0.0, 1.0], [0.6, 0.8], [-1.0, 0.0]]);
        let scores = s.similarity_to_all(&[0.6, 0.8]).unwrap();
        let argmax = (0..4).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
        assert_eq!(argmax, 2);
        assert_abs_diff_eq!(scores[2], 1.0, epsilon = 1e-7);
        let orth = space(&[[1.0, 0.0], [-1.0, 0.0]]).similarity_to_all(&[0.0, 5.0]).unwrap();
        assert_eq!(orth, vec![0.0, 0.0]);
        assert!(matches!(
            s.similarity_to_all(&[1.0, 0.0, 0.0]),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn corpus_rejects_count_mismatch_and_duplicates() {
        let a = space(&[[1.0, 0.0], [0.0, 1.0]]);
        let b = space(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        assert!(matches!(
            Corpus::from_spaces(vec![a.clone(), b]),
            Err(Error::ItemCountMismatch { .. })
        ));
        let items = vec![ItemMeta::new("x", ""), ItemMeta::new("x", "")];
        assert_eq!(
            Corpus::new(items, vec![a]).unwrap_err(),
            Error::DuplicateItem("x".into())
        );
    }
}
