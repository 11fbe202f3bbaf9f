//! Linear couplings `L_{k,i}: H_i → G_k` and the skew operator they induce.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{BlockVector, SpaceSignature};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CouplingRepr")]
pub struct LinearCoupling {
    signature: SpaceSignature,
    /// `matrices[k][i]` is `L_{k,i}`, of shape `dual_dims[k] × primal_dims[i]`.
    matrices: Vec<Vec<Matrix>>,
}

/// Wire form; blocks given as `[]` are zero.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CouplingRepr {
    signature: SpaceSignature,
    matrices: Vec<Vec<Matrix>>,
}

impl TryFrom<CouplingRepr> for LinearCoupling {
    type Error = Error;

    fn try_from(r: CouplingRepr) -> Result<Self> {
        let c = LinearCoupling {
            signature: r.signature,
            matrices: r.matrices,
        };
        c.validate()?;
        Ok(c.normalized())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum NormMethod {
    Frobenius,
    PowerIteration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormBound {
    pub value: f64,
    pub method: NormMethod,
}

impl LinearCoupling {
    pub fn new(signature: SpaceSignature, matrices: Vec<Vec<Matrix>>) -> Result<Self> {
        let c = LinearCoupling {
            signature,
            matrices,
        };
        c.validate()?;
        Ok(c.normalized())
    }

    pub fn zeros(signature: SpaceSignature) -> Self {
        let matrices = signature
            .dual_dims
            .iter()
            .map(|&m| signature.primal_dims.iter().map(|&n| Matrix::zeros(m, n)).collect())
            .collect();
        LinearCoupling {
            signature,
            matrices,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.signature.validate()?;
        if self.matrices.len() != self.signature.n_dual() {
            return Err(Error::Structure(format!(
                "coupling has {} dual rows, signature has {}",
                self.matrices.len(),
                self.signature.n_dual()
            )));
        }
        for (k, row) in self.matrices.iter().enumerate() {
            if row.len() != self.signature.n_primal() {
                return Err(Error::Structure(format!(
                    "coupling row {k} has {} blocks, expected {}",
                    row.len(),
                    self.signature.n_primal()
                )));
            }
            for (i, m) in row.iter().enumerate() {
                let (r, c) = (self.signature.dual_dims[k], self.signature.primal_dims[i]);
                // An empty nested array deserializes as 0x0, which stands for a zero block.
                if m.rows() == 0 && m.cols() == 0 {
                    continue;
                }
                if m.rows() != r || m.cols() != c {
                    return Err(Error::Structure(format!(
                        "L[{k}][{i}] is {}x{}, expected {r}x{c}",
                        m.rows(),
                        m.cols()
                    )));
                }
                if !m.is_finite() {
                    return Err(Error::Data(format!("L[{k}][{i}] has non-finite entries")));
                }
            }
        }
        Ok(())
    }

    fn normalized(mut self) -> Self {
        for (k, row) in self.matrices.iter_mut().enumerate() {
            for (i, m) in row.iter_mut().enumerate() {
                if m.rows() == 0 && m.cols() == 0 {
                    *m = Matrix::zeros(self.signature.dual_dims[k], self.signature.primal_dims[i]);
                }
            }
        }
        self
    }

    pub fn signature(&self) -> &SpaceSignature {
        &self.signature
    }

    pub fn block(&self, k: usize, i: usize) -> &Matrix {
        &self.matrices[k][i]
    }

    pub fn matrices(&self) -> &[Vec<Matrix>] {
        &self.matrices
    }

    /// `Σ_i L_{k,i} x_i` for a single dual index `k`, with `x_i` supplied per block.
    pub fn forward_block<'a>(&self, k: usize, x: impl Fn(usize) -> &'a [f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.signature.dual_dims[k]];
        for (i, m) in self.matrices[k].iter().enumerate() {
            if m.is_zero() {
                continue;
            }
            for (o, v) in out.iter_mut().zip(m.mul_vec(x(i))) {
                *o += v;
            }
        }
        out
    }

    /// `Σ_k L_{k,i}ᵀ v_k` for a single primal index `i`.
    pub fn adjoint_block<'a>(&self, i: usize, v: impl Fn(usize) -> &'a [f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.signature.primal_dims[i]];
        for (k, row) in self.matrices.iter().enumerate() {
            let m = &row[i];
            if m.is_zero() {
                continue;
            }
            for (o, w) in out.iter_mut().zip(m.mul_vec_transpose(v(k))) {
                *o += w;
            }
        }
        out
    }

    pub fn forward(&self, x: &BlockVector) -> Result<BlockVector> {
        x.check_conforms(&self.signature.primal_dims, "coupling forward")?;
        Ok(BlockVector::new(
            (0..self.signature.n_dual())
                .map(|k| self.forward_block(k, |i| x.block(i)))
                .collect(),
        ))
    }

    pub fn adjoint(&self, v: &BlockVector) -> Result<BlockVector> {
        v.check_conforms(&self.signature.dual_dims, "coupling adjoint")?;
        Ok(BlockVector::new(
            (0..self.signature.n_primal())
                .map(|i| self.adjoint_block(i, |k| v.block(k)))
                .collect(),
        ))
    }

    /// `S(x, v*) = (L* v*, −L x)`.
    pub fn skew_apply(&self, p: &BlockVector) -> Result<BlockVector> {
        p.check_conforms(&self.signature.product_dims(), "skew operator")?;
        let (x, v) = p.split(self.signature.n_primal());
        let top = self.adjoint(&v)?;
        let bottom = self.forward(&x)?.scale(-1.0);
        Ok(BlockVector::concat(&top, &bottom))
    }

    /// Upper bound on `‖S‖ = ‖L‖` from the Frobenius norm of the stacked matrix.
    pub fn operator_norm_bound(&self) -> NormBound {
        let sq: f64 = self
            .matrices
            .iter()
            .flatten()
            .map(|m| m.frobenius_norm().powi(2))
            .sum();
        NormBound {
            value: sq.sqrt(),
            method: NormMethod::Frobenius,
        }
    }

    /// Power-iteration estimate of `‖L‖` (a lower bound that converges to the spectral norm).
    pub fn operator_norm_estimate(&self, iterations: usize) -> NormBound {
        let mut x = BlockVector::new(
            self.signature
                .primal_dims
                .iter()
                .enumerate()
                .map(|(i, &d)| (0..d).map(|j| 1.0 + 0.1 * ((i + j) % 7) as f64).collect())
                .collect(),
        );
        let mut sigma = 0.0;
        for _ in 0..iterations {
            let n = x.norm();
            if n == 0.0 {
                break;
            }
            x = x.scale(1.0 / n);
            let lx = self.forward(&x).expect("conforming");
            sigma = lx.norm();
            x = self.adjoint(&lx).expect("conforming");
        }
        NormBound {
            value: sigma,
            method: NormMethod::PowerIteration,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sig(p: &[usize], d: &[usize]) -> SpaceSignature {
        SpaceSignature::new(p.to_vec(), d.to_vec()).unwrap()
    }

    fn hand_coupling() -> LinearCoupling {
        // I = {0, 1} with dims (2, 1); K = {0, 1} with dims (1, 2).
        LinearCoupling::new(
            sig(&[2, 1], &[1, 2]),
            vec![
                vec![
                    Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap(),
                    Matrix::from_rows(&[vec![-1.0]]).unwrap(),
                ],
                vec![
                    Matrix::from_rows(&[vec![0.0, 1.0], vec![3.0, 0.0]]).unwrap(),
                    Matrix::from_rows(&[vec![2.0], vec![0.0]]).unwrap(),
                ],
            ],
        )
        .unwrap()
    }

    #[test]
    fn forward_and_adjoint_by_hand() {
        let l = hand_coupling();
        let x = BlockVector::new(vec![vec![1.0, -1.0], vec![2.0]]);
        // k=0: [1,2]·[1,-1] + (-1)(2) = -1 - 2 = -3
        // k=1: [[0,1],[3,0]]·[1,-1] + [2,0]·2 = [-1, 3] + [4, 0] = [3, 3]
        assert_eq!(l.forward(&x).unwrap(), BlockVector::new(vec![vec![-3.0], vec![3.0, 3.0]]));
        let v = BlockVector::new(vec![vec![1.0], vec![1.0, 2.0]]);
        // i=0: [1,2]ᵀ·1 + [[0,3],[1,0]]·[1,2] = [1,2] + [6,1] = [7,3]
        // i=1: [-1]·1 + [2,0]·[1,2] = -1 + 2 = 1
        assert_eq!(l.adjoint(&v).unwrap(), BlockVector::new(vec![vec![7.0, 3.0], vec![1.0]]));
    }

    #[test]
    fn zero_inputs_and_identity_blocks() {
        let l = hand_coupling();
        assert_eq!(l.forward(&BlockVector::zeros(&[2, 1])).unwrap(), BlockVector::zeros(&[1, 2]));
        assert_eq!(l.adjoint(&BlockVector::zeros(&[1, 2])).unwrap(), BlockVector::zeros(&[2, 1]));
        let id = LinearCoupling::new(sig(&[3], &[3]), vec![vec![Matrix::identity(3)]]).unwrap();
        let x = BlockVector::new(vec![vec![1.0, 2.0, 3.0]]);
        assert_eq!(id.forward(&x).unwrap(), x);
        assert_eq!(id.adjoint(&x).unwrap(), x);
        let p = BlockVector::zeros(&[3, 3]);
        assert_eq!(id.skew_apply(&p).unwrap(), p);
    }

    #[test]
    fn shape_errors() {
        assert!(LinearCoupling::new(sig(&[2], &[1]), vec![vec![Matrix::zeros(2, 2)]]).is_err());
        assert!(LinearCoupling::new(sig(&[2], &[1]), vec![]).is_err());
        let l = hand_coupling();
        assert!(matches!(l.forward(&BlockVector::zeros(&[2])), Err(Error::Structure(_))));
    }

    #[test]
    fn skew_twice_matches_direct_matrix() {
        let l = hand_coupling();
        let p = BlockVector::new(vec![vec![1.0, 0.5], vec![-2.0], vec![0.3], vec![1.0, -1.0]]);
        let twice = l.skew_apply(&l.skew_apply(&p).unwrap()).unwrap();
        // S² (x, v) = (−Lᵀ L x, −L Lᵀ v), assembled from dense block matrices.
        let big_l = nalgebra::DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 0.0, 0.0],
        );
        let x = nalgebra::DVector::from_column_slice(&[1.0, 0.5, -2.0]);
        let v = nalgebra::DVector::from_column_slice(&[0.3, 1.0, -1.0]);
        let top = -(big_l.transpose() * &big_l * x);
        let bottom = -(&big_l * big_l.transpose() * v);
        let flat: Vec<f64> = twice.blocks().iter().flatten().copied().collect();
        let expect: Vec<f64> = top.iter().chain(bottom.iter()).copied().collect();
        for (a, b) in flat.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn norm_bounds() {
        assert_eq!(LinearCoupling::zeros(sig(&[2], &[3])).operator_norm_bound().value, 0.0);
        let one = LinearCoupling::new(sig(&[1], &[1]), vec![vec![Matrix::from_rows(&[vec![-2.5]]).unwrap()]]).unwrap();
        assert_eq!(one.operator_norm_bound().value, 2.5);
        assert!((one.operator_norm_estimate(5).value - 2.5).abs() < 1e-14);
        let l = hand_coupling();
        assert!(l.operator_norm_estimate(200).value <= l.operator_norm_bound().value + 1e-12);
    }

    fn random_coupling_and_point() -> impl Strategy<Value = (LinearCoupling, BlockVector, BlockVector)> {
        (
            prop::collection::vec(1usize..4, 1..4),
            prop::collection::vec(1usize..4, 1..4),
        )
            .prop_flat_map(|(pd, dd)| {
                let n_entries: usize = pd.iter().sum::<usize>() * dd.iter().sum::<usize>();
                let tot = pd.iter().sum::<usize>() + dd.iter().sum::<usize>();
                (
                    Just(pd),
                    Just(dd),
                    prop::collection::vec(-3.0f64..3.0, n_entries),
                    prop::collection::vec(-5.0f64..5.0, tot),
                    prop::collection::vec(-5.0f64..5.0, tot),
                )
            })
            .prop_map(|(pd, dd, entries, p, q)| {
                let mut it = entries.into_iter();
                let mats = dd
                    .iter()
                    .map(|&m| {
                        pd.iter()
                            .map(|&n| Matrix::from_row_major(m, n, it.by_ref().take(m * n).collect()).unwrap())
                            .collect()
                    })
                    .collect();
                let s = sig(&pd, &dd);
                let dims = s.product_dims();
                let chop = |vals: Vec<f64>| {
                    let mut it = vals.into_iter();
                    BlockVector::new(dims.iter().map(|&d| it.by_ref().take(d).collect()).collect())
                };
                (LinearCoupling::new(s, mats).unwrap(), chop(p), chop(q))
            })
    }

    proptest! {
        #[test]
        fn skew_is_antisymmetric((l, p, _q) in random_coupling_and_point()) {
            let sp = l.skew_apply(&p).unwrap();
            prop_assert!(p.inner(&sp).unwrap().abs() <= 1e-12 * (1.0 + p.norm_squared()));
        }

        #[test]
        fn adjoint_identity((l, p, q) in random_coupling_and_point()) {
            let np = l.signature().n_primal();
            let (x, _) = p.split(np);
            let (_, v) = q.split(np);
            let lhs = l.forward(&x).unwrap().inner(&v).unwrap();
            let rhs = x.inner(&l.adjoint(&v).unwrap()).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10);
        }

        #[test]
        fn skew_is_linear((l, p, q) in random_coupling_and_point(), a in -2.0f64..2.0) {
            let lhs = l.skew_apply(&p.axpy(a, &q).unwrap()).unwrap();
            let rhs = l.skew_apply(&p).unwrap().axpy(a, &l.skew_apply(&q).unwrap()).unwrap();
            prop_assert!(lhs.distance(&rhs).unwrap() <= 1e-10 * (1.0 + lhs.norm()));
        }

        #[test]
        fn norm_bound_dominates((l, p, _q) in random_coupling_and_point()) {
            let n = p.norm();
            prop_assume!(n > 1e-6);
            let sp = l.skew_apply(&p).unwrap();
            prop_assert!(sp.norm() / n <= l.operator_norm_bound().value * (1.0 + 1e-12));
        }
    }
}
