//! Small dense-matrix helpers shared across modules.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

/// Contiguous partition of a stacked vector into per-agent blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Blocks {
    offsets: Vec<usize>,
}

impl Blocks {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let mut offsets = vec![0];
        for s in sizes {
            let last = *offsets.last().unwrap();
            offsets.push(last + s);
        }
        Self { offsets }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn size(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn range(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Block that owns global index `k`.
    pub fn owner(&self, k: usize) -> Option<usize> {
        if k >= self.total() {
            return None;
        }
        Some(self.offsets.partition_point(|&o| o <= k) - 1)
    }
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Block-diagonal matrix from square or rectangular blocks.
pub fn blkdiag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn slice(v: &DVector<f64>, r: Range<usize>) -> DVector<f64> {
    DVector::from_column_slice(&v.as_slice()[r])
}

/// Row-major nested arrays, the on-disk matrix representation.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Inverse of [`to_rows`]; `cols` disambiguates the empty case.
pub fn from_rows(rows: &[Vec<f64>], cols: usize) -> Option<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != cols) {
        return None;
    }
    Some(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// Serde adapter storing a `DMatrix<f64>` as row-major nested arrays.
pub mod rows_serde {
    use nalgebra::DMatrix;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        super::to_rows(m).serialize(s)
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Rows(Vec<Vec<f64>>),
        Diagonal { diagonal: Vec<f64> },
    }

    /// Accepts nested rows or a `{ diagonal = [...] }` table.
    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Rows(rows) => {
                let cols = rows.first().map_or(0, |r| r.len());
                super::from_rows(&rows, cols).ok_or_else(|| D::Error::custom("ragged matrix rows"))
            }
            Repr::Diagonal { diagonal } => Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diagonal))),
        }
    }
}
