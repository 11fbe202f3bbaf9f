//! Finite-dimensional product spaces and block vectors.
//!
//! A point of the ambient space is a list of coordinate blocks. The primal
//! blocks come first, followed by the dual blocks. All reductions run in a
//! fixed order (block order, then coordinate order) so repeated runs are
//! bit-identical.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Block dimensions of the primal spaces `H_i` and dual spaces `G_k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceSignature {
    pub primal_dims: Vec<usize>,
    pub dual_dims: Vec<usize>,
}

impl SpaceSignature {
    pub fn new(primal_dims: Vec<usize>, dual_dims: Vec<usize>) -> Result<Self> {
        let sig = SpaceSignature {
            primal_dims,
            dual_dims,
        };
        sig.validate()?;
        Ok(sig)
    }

    pub fn validate(&self) -> Result<()> {
        if self.primal_dims.is_empty() || self.dual_dims.is_empty() {
            return Err(Error::Structure(
                "signature needs at least one primal and one dual block".into(),
            ));
        }
        if self.primal_dims.iter().chain(&self.dual_dims).any(|&d| d == 0) {
            return Err(Error::Structure("block dimensions must be >= 1".into()));
        }
        Ok(())
    }

    pub fn n_primal(&self) -> usize {
        self.primal_dims.len()
    }

    pub fn n_dual(&self) -> usize {
        self.dual_dims.len()
    }

    /// Dimensions of the full product space, primal blocks first.
    pub fn product_dims(&self) -> Vec<usize> {
        self.primal_dims
            .iter()
            .chain(&self.dual_dims)
            .copied()
            .collect()
    }

    pub fn total_dim(&self) -> usize {
        self.primal_dims.iter().sum::<usize>() + self.dual_dims.iter().sum::<usize>()
    }
}

/// An immutable family of real coordinate blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockVector {
    blocks: Vec<Vec<f64>>,
}

impl BlockVector {
    pub fn new(blocks: Vec<Vec<f64>>) -> Self {
        BlockVector { blocks }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        BlockVector {
            blocks: dims.iter().map(|&d| vec![0.0; d]).collect(),
        }
    }

    /// Joins a primal part and a dual part into a product-space vector.
    pub fn concat(primal: &BlockVector, dual: &BlockVector) -> Self {
        let mut blocks = primal.blocks.clone();
        blocks.extend(dual.blocks.iter().cloned());
        BlockVector { blocks }
    }

    /// Splits a product-space vector after the first `n_primal` blocks.
    pub fn split(&self, n_primal: usize) -> (BlockVector, BlockVector) {
        let (p, d) = self.blocks.split_at(n_primal.min(self.blocks.len()));
        (BlockVector::new(p.to_vec()), BlockVector::new(d.to_vec()))
    }

    pub fn blocks(&self) -> &[Vec<f64>] {
        &self.blocks
    }

    pub fn block(&self, j: usize) -> &[f64] {
        &self.blocks[j]
    }

    pub fn into_blocks(self) -> Vec<Vec<f64>> {
        self.blocks
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.blocks.iter().map(Vec::len).collect()
    }

    pub fn conforms(&self, dims: &[usize]) -> bool {
        self.blocks.len() == dims.len() && self.blocks.iter().zip(dims).all(|(b, &d)| b.len() == d)
    }

    pub fn check_conforms(&self, dims: &[usize], what: &str) -> Result<()> {
        if self.conforms(dims) {
            Ok(())
        } else {
            Err(Error::Structure(format!(
                "{what}: expected block dims {dims:?}, got {:?}",
                self.dims()
            )))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().flatten().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::Data(format!("{what} contains non-finite entries")))
        }
    }

    fn same_shape(&self, other: &BlockVector) -> Result<()> {
        if self.blocks.len() == other.blocks.len()
            && self
                .blocks
                .iter()
                .zip(&other.blocks)
                .all(|(a, b)| a.len() == b.len())
        {
            Ok(())
        } else {
            Err(Error::Structure(format!(
                "block vectors have different shapes {:?} vs {:?}",
                self.dims(),
                other.dims()
            )))
        }
    }

    pub fn inner(&self, other: &BlockVector) -> Result<f64> {
        self.same_shape(other)?;
        Ok(self
            .blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| dot(a, b))
            .fold(0.0, |acc, v| acc + v))
    }

    pub fn norm_squared(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| dot(b, b))
            .fold(0.0, |acc, v| acc + v)
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// `alpha * self + y`.
    pub fn axpy(&self, alpha: f64, y: &BlockVector) -> Result<BlockVector> {
        self.same_shape(y)?;
        Ok(self.zip_map(y, |a, b| alpha * a + b))
    }

    pub fn add(&self, other: &BlockVector) -> Result<BlockVector> {
        self.same_shape(other)?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &BlockVector) -> Result<BlockVector> {
        self.same_shape(other)?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    pub fn scale(&self, alpha: f64) -> BlockVector {
        BlockVector {
            blocks: self
                .blocks
                .iter()
                .map(|b| b.iter().map(|v| alpha * v).collect())
                .collect(),
        }
    }

    pub fn distance(&self, other: &BlockVector) -> Result<f64> {
        Ok(self.sub(other)?.norm())
    }

    fn zip_map(&self, other: &BlockVector, f: impl Fn(f64, f64) -> f64) -> BlockVector {
        BlockVector {
            blocks: self
                .blocks
                .iter()
                .zip(&other.blocks)
                .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
                .collect(),
        }
    }
}

pub fn inner(a: &BlockVector, b: &BlockVector) -> Result<f64> {
    a.inner(b)
}

pub fn axpy(alpha: f64, x: &BlockVector, y: &BlockVector) -> Result<BlockVector> {
    x.axpy(alpha, y)
}

pub fn norm(a: &BlockVector) -> f64 {
    a.norm()
}

/// Plain dot product in coordinate order.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn vsub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bv(blocks: &[&[f64]]) -> BlockVector {
        BlockVector::new(blocks.iter().map(|b| b.to_vec()).collect())
    }

    #[test]
    fn hand_dot_product() {
        let a = bv(&[&[1.0, 2.0], &[3.0]]);
        let b = bv(&[&[4.0, -1.0], &[2.0]]);
        let per_block = dot(&[1.0, 2.0], &[4.0, -1.0]) + dot(&[3.0], &[2.0]);
        assert_eq!(a.inner(&b).unwrap(), 8.0);
        assert_eq!(per_block, 8.0);
    }

    #[test]
    fn zero_is_annihilating() {
        let b = bv(&[&[4.0, -1.0], &[2.0]]);
        let z = BlockVector::zeros(&[2, 1]);
        assert_eq!(z.inner(&b).unwrap(), 0.0);
        assert_eq!(z.norm(), 0.0);
    }

    #[test]
    fn axpy_cases() {
        let x = bv(&[&[1.0], &[1.0]]);
        let y = bv(&[&[3.0], &[0.0]]);
        assert_eq!(x.axpy(-2.0, &y).unwrap(), bv(&[&[1.0], &[-2.0]]));
        assert_eq!(x.axpy(0.0, &y).unwrap(), y);
        assert_eq!(x.axpy(1.0, &BlockVector::zeros(&[1, 1])).unwrap(), x);
    }

    #[test]
    fn pythagorean_norm() {
        assert_eq!(bv(&[&[3.0], &[4.0]]).norm(), 5.0);
    }

    #[test]
    fn shape_mismatch_is_structural() {
        let a = bv(&[&[1.0, 2.0]]);
        let b = bv(&[&[1.0], &[2.0]]);
        assert!(matches!(a.inner(&b), Err(Error::Structure(_))));
        assert!(matches!(a.axpy(1.0, &b), Err(Error::Structure(_))));
    }

    #[test]
    fn signature_rejects_empty_and_zero_dims() {
        assert!(SpaceSignature::new(vec![], vec![1]).is_err());
        assert!(SpaceSignature::new(vec![1], vec![0]).is_err());
        let s = SpaceSignature::new(vec![2, 3], vec![1]).unwrap();
        assert_eq!(s.product_dims(), vec![2, 3, 1]);
        assert_eq!(s.total_dim(), 6);
    }

    #[test]
    fn split_and_concat_round_trip() {
        let p = bv(&[&[1.0], &[2.0, 3.0], &[4.0]]);
        let (a, b) = p.split(2);
        assert_eq!(a.n_blocks(), 2);
        assert_eq!(BlockVector::concat(&a, &b), p);
    }

    fn pair() -> impl Strategy<Value = (BlockVector, BlockVector)> {
        prop::collection::vec(1usize..5, 1..4).prop_flat_map(|dims| {
            let total: usize = dims.iter().sum();
            (
                prop::collection::vec(-10.0f64..10.0, total * 2),
                Just(dims),
            )
                .prop_map(|(vals, dims)| {
                    let mut it = vals.into_iter();
                    let mut take = |dims: &[usize]| {
                        BlockVector::new(
                            dims.iter()
                                .map(|&d| (0..d).map(|_| it.next().unwrap()).collect())
                                .collect(),
                        )
                    };
                    let a = take(&dims);
                    let b = take(&dims);
                    (a, b)
                })
        })
    }

    proptest! {
        #[test]
        fn inner_is_symmetric((a, b) in pair()) {
            prop_assert_eq!(a.inner(&b).unwrap(), b.inner(&a).unwrap());
        }

        #[test]
        fn cauchy_schwarz((a, b) in pair()) {
            let bound = a.norm() * b.norm();
            prop_assert!(a.inner(&b).unwrap().abs() <= bound + 1e-12 * bound);
        }

        #[test]
        fn triangle_inequality((a, b) in pair()) {
            let s = a.add(&b).unwrap();
            prop_assert!(s.norm() <= a.norm() + b.norm() + 1e-12);
        }

        #[test]
        fn axpy_preserves_shape_and_inputs((a, b) in pair(), alpha in -3.0f64..3.0) {
            let a0 = a.clone();
            let b0 = b.clone();
            let out = a.axpy(alpha, &b).unwrap();
            prop_assert_eq!(out.dims(), a.dims());
            prop_assert_eq!(a, a0);
            prop_assert_eq!(b, b0);
        }
    }
}
