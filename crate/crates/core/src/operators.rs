//! Maximally monotone operators with closed-form resolvents.
//!
//! Every operator in the catalogue has full domain and a single-valued
//! resolvent `J_{γA} = (Id + γA)^{-1}`. The inverse resolvent
//! `J_{γA^{-1}}` is also provided in closed form wherever one exists, so the
//! Moreau identity can be checked against an independent formula.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::norm2;
use crate::linalg::{solve_dense, Matrix};

const PSD_TOL: f64 = 1e-10;
const SOLVE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MonotoneOperator {
    /// The zero operator; its resolvent is the identity.
    Zero { dim: usize },
    /// Subdifferential of `weight * ‖·‖₁`.
    L1 { dim: usize, weight: f64 },
    /// Normal cone of the box `[lower, upper]`. Infinite bounds serialize as `null`.
    BoxNormalCone {
        #[serde(serialize_with = "bounds::serialize", deserialize_with = "bounds::lower")]
        lower: Vec<f64>,
        #[serde(serialize_with = "bounds::serialize", deserialize_with = "bounds::upper")]
        upper: Vec<f64>,
    },
    /// `y ↦ Q y + q` with `Q + Qᵀ` positive semidefinite.
    AffineMonotone { matrix: Matrix, offset: Vec<f64> },
    /// Subdifferential of `½‖· − center‖²`.
    TranslatedQuadratic { center: Vec<f64> },
}

impl MonotoneOperator {
    pub fn zero(dim: usize) -> Self {
        MonotoneOperator::Zero { dim }
    }

    pub fn l1(dim: usize, weight: f64) -> Self {
        MonotoneOperator::L1 { dim, weight }
    }

    pub fn box_normal_cone(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        MonotoneOperator::BoxNormalCone { lower, upper }
    }

    /// Normal cone of the single point `p`.
    pub fn point_normal_cone(p: Vec<f64>) -> Self {
        MonotoneOperator::BoxNormalCone {
            lower: p.clone(),
            upper: p,
        }
    }

    pub fn affine(matrix: Matrix, offset: Vec<f64>) -> Self {
        MonotoneOperator::AffineMonotone { matrix, offset }
    }

    pub fn translated_quadratic(center: Vec<f64>) -> Self {
        MonotoneOperator::TranslatedQuadratic { center }
    }

    pub fn dim(&self) -> usize {
        match self {
            MonotoneOperator::Zero { dim } | MonotoneOperator::L1 { dim, .. } => *dim,
            MonotoneOperator::BoxNormalCone { lower, .. } => lower.len(),
            MonotoneOperator::AffineMonotone { offset, .. } => offset.len(),
            MonotoneOperator::TranslatedQuadratic { center } => center.len(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            MonotoneOperator::Zero { .. } => "zero",
            MonotoneOperator::L1 { .. } => "l1",
            MonotoneOperator::BoxNormalCone { .. } => "box_normal_cone",
            MonotoneOperator::AffineMonotone { .. } => "affine_monotone",
            MonotoneOperator::TranslatedQuadratic { .. } => "translated_quadratic",
        }
    }

    /// Checks the data that makes the operator maximally monotone.
    pub fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(Error::Structure(format!("{}: dimension must be >= 1", self.kind_name())));
        }
        match self {
            MonotoneOperator::Zero { .. } => Ok(()),
            MonotoneOperator::L1 { weight, .. } => {
                if weight.is_finite() && *weight >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::Parameter(format!("l1 weight must be finite and >= 0, got {weight}")))
                }
            }
            MonotoneOperator::BoxNormalCone { lower, upper } => {
                if lower.len() != upper.len() {
                    return Err(Error::Structure("box bounds have different lengths".into()));
                }
                for (j, (l, u)) in lower.iter().zip(upper).enumerate() {
                    if l.is_nan() || u.is_nan() || *l == f64::INFINITY || *u == f64::NEG_INFINITY {
                        return Err(Error::Parameter(format!("box coordinate {j}: invalid bounds")));
                    }
                    if l > u {
                        return Err(Error::Parameter(format!(
                            "box coordinate {j}: lower {l} exceeds upper {u}"
                        )));
                    }
                }
                Ok(())
            }
            MonotoneOperator::AffineMonotone { matrix, offset } => {
                if matrix.rows() != offset.len() || matrix.cols() != offset.len() {
                    return Err(Error::Structure(format!(
                        "affine operator: matrix is {}x{}, offset has length {}",
                        matrix.rows(),
                        matrix.cols(),
                        offset.len()
                    )));
                }
                if !matrix.is_finite() || offset.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Data("affine operator data is not finite".into()));
                }
                let lam = matrix.min_symmetric_eigenvalue();
                if lam < -PSD_TOL {
                    return Err(Error::Parameter(format!(
                        "affine operator is not monotone: min eigenvalue of symmetric part is {lam:e}"
                    )));
                }
                Ok(())
            }
            MonotoneOperator::TranslatedQuadratic { center } => {
                if center.iter().all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::Data("quadratic center is not finite".into()))
                }
            }
        }
    }

    fn check_args(&self, gamma: f64, x: &[f64]) -> Result<()> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Parameter(format!("resolvent step must be positive, got {gamma}")));
        }
        if x.len() != self.dim() {
            return Err(Error::Structure(format!(
                "{}: expected dimension {}, got {}",
                self.kind_name(),
                self.dim(),
                x.len()
            )));
        }
        Ok(())
    }

    /// Evaluates `J_{γA}(x)`.
    pub fn resolvent(&self, gamma: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.check_args(gamma, x)?;
        Ok(match self {
            MonotoneOperator::Zero { .. } => x.to_vec(),
            MonotoneOperator::L1 { weight, .. } => {
                let t = gamma * weight;
                x.iter().map(|&v| soft_threshold(v, t)).collect()
            }
            MonotoneOperator::BoxNormalCone { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(&v, (&l, &u))| v.max(l).min(u))
                .collect(),
            MonotoneOperator::AffineMonotone { matrix, offset } => {
                let n = offset.len();
                let m = DMatrix::identity(n, n) + matrix.to_nalgebra() * gamma;
                let rhs: Vec<f64> = x.iter().zip(offset).map(|(v, q)| v - gamma * q).collect();
                solve_dense(&m, &rhs, SOLVE_TOL)?
            }
            MonotoneOperator::TranslatedQuadratic { center } => x
                .iter()
                .zip(center)
                .map(|(v, b)| (v + gamma * b) / (1.0 + gamma))
                .collect(),
        })
    }

    /// Evaluates `J_{γA^{-1}}(x)`.
    pub fn inverse_resolvent(&self, gamma: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.check_args(gamma, x)?;
        Ok(match self {
            // A⁻¹ is the normal cone of {0}.
            MonotoneOperator::Zero { .. } => vec![0.0; x.len()],
            // A⁻¹ is the normal cone of [-weight, weight]^d.
            MonotoneOperator::L1 { weight, .. } => {
                x.iter().map(|v| v.max(-weight).min(*weight)).collect()
            }
            // A⁻¹ is the subdifferential of the support function of the box.
            MonotoneOperator::BoxNormalCone { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(&v, (&l, &u))| {
                    if v > gamma * u {
                        v - gamma * u
                    } else if v < gamma * l {
                        v - gamma * l
                    } else {
                        0.0
                    }
                })
                .collect(),
            MonotoneOperator::AffineMonotone { .. } => {
                let inner = self.resolvent(1.0 / gamma, &x.iter().map(|v| v / gamma).collect::<Vec<_>>())?;
                x.iter().zip(&inner).map(|(v, j)| v - gamma * j).collect()
            }
            // A⁻¹ w = w + center.
            MonotoneOperator::TranslatedQuadratic { center } => x
                .iter()
                .zip(center)
                .map(|(v, b)| (v - gamma * b) / (1.0 + gamma))
                .collect(),
        })
    }

    /// Applies the operator at a point where it is single-valued.
    pub fn apply_single_valued(&self, y: &[f64]) -> Option<Vec<f64>> {
        match self {
            MonotoneOperator::Zero { dim } => Some(vec![0.0; *dim]),
            MonotoneOperator::AffineMonotone { matrix, offset } => Some(
                matrix
                    .mul_vec(y)
                    .iter()
                    .zip(offset)
                    .map(|(a, b)| a + b)
                    .collect(),
            ),
            MonotoneOperator::TranslatedQuadratic { center } => {
                Some(y.iter().zip(center).map(|(a, b)| a - b).collect())
            }
            _ => None,
        }
    }

    /// Measures how far `(x − y)/γ ∈ A y` is from holding. Returns 0 when the
    /// inclusion holds exactly.
    pub fn verify_resolvent_inclusion(&self, gamma: f64, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_args(gamma, x)?;
        if y.len() != x.len() {
            return Err(Error::Structure("resolvent inclusion: x and y differ in length".into()));
        }
        let g: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - b) / gamma).collect();
        let violation: Vec<f64> = match self {
            MonotoneOperator::Zero { .. } => g,
            MonotoneOperator::L1 { weight, .. } => g
                .iter()
                .zip(y)
                .map(|(&gj, &yj)| {
                    let snap = 1e-12 * (1.0 + yj.abs().max(gj.abs()));
                    if yj.abs() <= snap {
                        yj.abs() + (gj.abs() - weight).max(0.0)
                    } else {
                        (gj - weight * yj.signum()).abs()
                    }
                })
                .collect(),
            MonotoneOperator::BoxNormalCone { lower, upper } => g
                .iter()
                .zip(y)
                .zip(lower.iter().zip(upper))
                .map(|((&gj, &yj), (&l, &u))| {
                    let near = |b: f64| b.is_finite() && (yj - b).abs() <= 1e-12 * (1.0 + b.abs());
                    let (at_l, at_u) = (near(l), near(u));
                    let outside = if at_l || at_u {
                        0.0
                    } else {
                        (l - yj).max(0.0) + (yj - u).max(0.0)
                    };
                    let cone = match (at_l, at_u) {
                        (true, true) => 0.0,
                        (true, false) => gj.max(0.0),
                        (false, true) => (-gj).max(0.0),
                        (false, false) if outside > 0.0 => 0.0,
                        (false, false) => gj.abs(),
                    };
                    outside + cone
                })
                .collect(),
            MonotoneOperator::AffineMonotone { .. } | MonotoneOperator::TranslatedQuadratic { .. } => {
                let ay = self.apply_single_valued(y).expect("single valued");
                ay.iter().zip(&g).map(|(a, b)| a - b).collect()
            }
        };
        Ok(norm2(&violation))
    }
}

/// Coordinatewise shrinkage `sign(v) max(|v| − t, 0)`.
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// `±∞` bounds as JSON `null`.
mod bounds {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|x| if x.is_finite() { Some(*x) } else { None })
            .collect::<Vec<_>>()
            .serialize(s)
    }

    fn with_default<'de, D: Deserializer<'de>>(d: D, missing: f64) -> Result<Vec<f64>, D::Error> {
        let raw = Vec::<Option<f64>>::deserialize(d)?;
        Ok(raw.into_iter().map(|x| x.unwrap_or(missing)).collect())
    }

    pub fn lower<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        with_default(d, f64::NEG_INFINITY)
    }

    pub fn upper<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        with_default(d, f64::INFINITY)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Golden-section minimization on [lo, hi]; an independent 1-D prox oracle.
    /// Comparing function values limits its accuracy to about sqrt(machine epsilon).
    fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let a = hi - phi * (hi - lo);
            let b = lo + phi * (hi - lo);
            if f(a) < f(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn zero_resolvent_is_identity() {
        let op = MonotoneOperator::zero(3);
        let x = vec![1.0, -2.0, 0.5];
        assert_eq!(op.resolvent(7.0, &x).unwrap(), x);
        assert_eq!(op.verify_resolvent_inclusion(7.0, &x, &x).unwrap(), 0.0);
    }

    #[test]
    fn l1_resolvent_matches_prox_oracle() {
        let oracle = golden_min(|y| 0.5 * (y - 2.0) * (y - 2.0) + y.abs(), -10.0, 10.0);
        assert!((oracle - 1.0).abs() < 1e-6);
        let op = MonotoneOperator::l1(1, 1.0);
        assert_eq!(op.resolvent(1.0, &[2.0]).unwrap(), vec![1.0]);
        assert_eq!(op.verify_resolvent_inclusion(1.0, &[2.0], &[1.0]).unwrap(), 0.0);
    }

    #[test]
    fn box_resolvent_is_gamma_independent_projection() {
        // Brute force over a grid: the resolvent inclusion at y means
        // (x - y)/γ ∈ N_[0,1](y); scan candidates and keep those with zero violation.
        let op = MonotoneOperator::box_normal_cone(vec![0.0], vec![1.0]);
        let x = [-3.0];
        let grid: Vec<f64> = (0..=1000).map(|k| -0.5 + 2.0 * k as f64 / 1000.0).collect();
        let feasible: Vec<f64> = grid
            .iter()
            .copied()
            .filter(|&y| op.verify_resolvent_inclusion(5.0, &x, &[y]).unwrap() == 0.0)
            .collect();
        assert_eq!(feasible, vec![0.0]);
        assert_eq!(op.resolvent(5.0, &x).unwrap(), vec![0.0]);
        assert!(op.verify_resolvent_inclusion(1.0, &x, &[0.5]).unwrap() > 0.0);
    }

    #[test]
    fn translated_quadratic_matches_prox_oracle() {
        let oracle = golden_min(|y| 0.5 * y * y + 0.5 * (y - 4.0) * (y - 4.0), -10.0, 10.0);
        let op = MonotoneOperator::translated_quadratic(vec![0.0]);
        let y = op.resolvent(1.0, &[4.0]).unwrap();
        assert_eq!(y, vec![2.0]);
        assert!((oracle - 2.0).abs() < 1e-6);
    }

    #[test]
    fn affine_resolvent_solves_linear_system() {
        let q = Matrix::from_rows(&[vec![2.0, 1.0], vec![-1.0, 1.0]]).unwrap();
        let op = MonotoneOperator::affine(q, vec![1.0, -1.0]);
        op.validate().unwrap();
        let x = [3.0, 0.5];
        let y = op.resolvent(0.7, &x).unwrap();
        assert!(op.verify_resolvent_inclusion(0.7, &x, &y).unwrap() < 1e-12);
    }

    #[test]
    fn invalid_operators_rejected() {
        let not_monotone = MonotoneOperator::affine(
            Matrix::from_rows(&[vec![-1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            vec![0.0, 0.0],
        );
        assert!(matches!(not_monotone.validate(), Err(Error::Parameter(_))));
        assert!(MonotoneOperator::box_normal_cone(vec![1.0], vec![0.0]).validate().is_err());
        assert!(MonotoneOperator::l1(2, -1.0).validate().is_err());
        assert!(matches!(
            MonotoneOperator::zero(1).resolvent(0.0, &[1.0]),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            MonotoneOperator::zero(2).resolvent(1.0, &[1.0]),
            Err(Error::Structure(_))
        ));
    }

    #[test]
    fn box_json_uses_null_for_infinite_bounds() {
        let op = MonotoneOperator::box_normal_cone(vec![f64::NEG_INFINITY, 0.0], vec![1.0, f64::INFINITY]);
        let s = serde_json::to_string(&op).unwrap();
        assert_eq!(s, r#"{"kind":"box_normal_cone","lower":[null,0.0],"upper":[1.0,null]}"#);
        let back: MonotoneOperator = serde_json::from_str(&s).unwrap();
        assert_eq!(back, op);
    }

    pub(crate) fn any_operator(dim: usize) -> impl Strategy<Value = MonotoneOperator> {
        let vecs = move || prop::collection::vec(-3.0f64..3.0, dim);
        prop_oneof![
            Just(MonotoneOperator::zero(dim)),
            (0.0f64..3.0).prop_map(move |w| MonotoneOperator::l1(dim, w)),
            (vecs(), prop::collection::vec(0.0f64..2.0, dim)).prop_map(|(l, w)| {
                let u = l.iter().zip(&w).map(|(a, b)| a + b).collect();
                MonotoneOperator::box_normal_cone(l, u)
            }),
            (prop::collection::vec(-1.0f64..1.0, dim * dim), vecs(), 0.0f64..1.0).prop_map(
                move |(g, q, shift)| {
                    // G Gᵀ + skew part + shift·I is monotone.
                    let gm = Matrix::from_row_major(dim, dim, g).unwrap();
                    let mut m = Matrix::zeros(dim, dim);
                    for r in 0..dim {
                        for c in 0..dim {
                            let psd: f64 = (0..dim).map(|t| gm.get(r, t) * gm.get(c, t)).sum();
                            let skew = gm.get(r, c) - gm.get(c, r);
                            m.set(r, c, psd + skew + if r == c { shift } else { 0.0 });
                        }
                    }
                    MonotoneOperator::affine(m, q)
                }
            ),
            vecs().prop_map(MonotoneOperator::translated_quadratic),
        ]
    }

    proptest! {
        #[test]
        fn firm_nonexpansive(
            (op, x, xp) in (1usize..4).prop_flat_map(|d| (
                any_operator(d),
                prop::collection::vec(-10.0f64..10.0, d),
                prop::collection::vec(-10.0f64..10.0, d),
            )),
            log_gamma in -2.0f64..2.0,
        ) {
            let gamma = 10f64.powf(log_gamma);
            let j = op.resolvent(gamma, &x).unwrap();
            let jp = op.resolvent(gamma, &xp).unwrap();
            let dj: Vec<f64> = j.iter().zip(&jp).map(|(a, b)| a - b).collect();
            let dx: Vec<f64> = x.iter().zip(&xp).map(|(a, b)| a - b).collect();
            let lhs: f64 = dj.iter().map(|v| v * v).sum();
            let rhs: f64 = dx.iter().zip(&dj).map(|(a, b)| a * b).sum();
            prop_assert!(lhs <= rhs + 1e-10);
        }

        #[test]
        fn resolvent_satisfies_inclusion(
            (op, x) in (1usize..4).prop_flat_map(|d| (any_operator(d), prop::collection::vec(-10.0f64..10.0, d))),
            log_gamma in -2.0f64..2.0,
        ) {
            let gamma = 10f64.powf(log_gamma);
            let y = op.resolvent(gamma, &x).unwrap();
            prop_assert!(op.verify_resolvent_inclusion(gamma, &x, &y).unwrap() <= 1e-8);
        }

        #[test]
        fn moreau_identity(
            (op, x) in (1usize..4).prop_flat_map(|d| (any_operator(d), prop::collection::vec(-10.0f64..10.0, d))),
            log_gamma in -2.0f64..2.0,
        ) {
            let gamma = 10f64.powf(log_gamma);
            let j = op.resolvent(gamma, &x).unwrap();
            let xs: Vec<f64> = x.iter().map(|v| v / gamma).collect();
            let ji = op.inverse_resolvent(1.0 / gamma, &xs).unwrap();
            for ((a, b), c) in j.iter().zip(&ji).zip(&x) {
                prop_assert!((a + gamma * b - c).abs() <= 1e-9 * (1.0 + c.abs()));
            }
        }
    }
}
