//! Sparse direct solves backed by faer's LU factorization.

use faer::prelude::*;
use faer::sparse::SparseColMat;
use faer::Mat;

use crate::error::{Error, Result};

/// Triplet accumulator for a square sparse matrix.
#[derive(Debug, Clone, Default)]
pub struct Triplets {
    pub n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(n: usize) -> Self {
        Triplets {
            n,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(n: usize, cap: usize) -> Self {
        Triplets {
            n,
            entries: Vec::with_capacity(cap),
        }
    }

    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            self.entries.push((i, j, v));
        }
    }

    pub fn transpose(&self) -> Triplets {
        Triplets {
            n: self.n,
            entries: self.entries.iter().map(|&(i, j, v)| (j, i, v)).collect(),
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries.iter().copied()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut entries = self.entries.clone();
        entries.sort_unstable_by_key(|&(i, j, _)| (j, i));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
        for (i, j, v) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => merged.push((i, j, v)),
            }
        }
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(self.n, self.n, &merged)
            .map_err(|e| Error::Dimension(format!("sparse assembly failed: {e:?}")))?;
        let lu = a.sp_lu().map_err(|e| Error::Singular(format!("{e:?}")))?;
        let rhs = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        let x = lu.solve(&rhs);
        let mut out: Vec<f64> = (0..self.n).map(|i| x.read(i, 0)).collect();
        // One step of iterative refinement.
        let mut r = b.to_vec();
        for &(i, j, v) in &merged {
            r[i] -= v * out[j];
        }
        let dx = lu.solve(&Mat::<f64>::from_fn(self.n, 1, |i, _| r[i]));
        for (i, o) in out.iter_mut().enumerate() {
            *o += dx.read(i, 0);
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("non-finite solution".into()));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_system() {
        let mut t = Triplets::new(3);
        t.push(0, 0, 2.0);
        t.push(0, 1, -1.0);
        t.push(1, 0, -1.0);
        t.push(1, 1, 1.0);
        t.push(1, 1, 1.0);
        t.push(1, 2, -1.0);
        t.push(2, 1, -1.0);
        t.push(2, 2, 2.0);
        let x = t.solve(&[1.0, 0.0, 1.0]).unwrap();
        for v in x {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }
}
