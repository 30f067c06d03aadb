//! Extended observability subspaces: extraction from `Ξ`, order selection
//! and Grassmannian comparison through principal angles.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::io::write_matrix_csv;
use crate::linalg::sym_eig_desc;

/// How many dominant directions to keep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OrderRule {
    /// Exactly this many (clamped to the positive spectrum).
    Fixed(usize),
    /// Every singular value `σ_k ≥ rel_tol · σ_1`, capped at `max_order`.
    Relative { rel_tol: f64, max_order: usize },
}

impl Default for OrderRule {
    fn default() -> Self {
        OrderRule::Relative { rel_tol: 1e-3, max_order: usize::MAX }
    }
}

/// Column-orthonormal basis of the dominant range of `Ξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    /// `Q_r`, `(l·p) × r` with orthonormal columns.
    pub basis: DMatrix<f64>,
    /// `Σ_r`: the retained singular values, nonincreasing and positive.
    pub weights: Vec<f64>,
    /// All singular values of `Ξ^{1/2}` in descending order (diagnostics).
    pub spectrum: Vec<f64>,
}

impl Subspace {
    pub fn order(&self) -> usize {
        self.basis.ncols()
    }

    pub fn ambient(&self) -> usize {
        self.basis.nrows()
    }

    /// `Γ_r = Q_r Σ_r^{1/2}`.
    pub fn gamma(&self) -> DMatrix<f64> {
        let mut g = self.basis.clone();
        for (k, w) in self.weights.iter().enumerate() {
            g.column_mut(k).scale_mut(w.sqrt());
        }
        g
    }

    /// Orthonormal subspace spanned by the columns of `m` (QR), with unit
    /// weights. Used for reference subspaces such as a true observability
    /// matrix.
    pub fn from_span(m: &DMatrix<f64>) -> Self {
        let basis = m.clone().qr().q();
        let r = basis.ncols();
        Subspace { basis, weights: vec![1.0; r], spectrum: vec![1.0; r] }
    }

    /// Dumps `basis.csv` and `weights.csv` into `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_matrix_csv(&dir.join("basis.csv"), &self.basis)?;
        let w = DMatrix::from_column_slice(self.weights.len(), 1, &self.weights);
        write_matrix_csv(&dir.join("weights.csv"), &w)
    }
}

/// Number of weights with `w_k ≥ rel_tol · w_1` (at least one).
pub fn select_order(weights: &[f64], rel_tol: f64) -> usize {
    let Some(&top) = weights.first() else { return 1 };
    weights.iter().take_while(|&&w| w >= rel_tol * top).count().max(1)
}

/// Eigendecomposes the symmetric PSD matrix `Ξ = QΣ²Qᵀ` and keeps the
/// dominant directions chosen by `rule`.
///
/// `weights` hold `Σ_r`, the square roots of the retained eigenvalues.
pub fn extract_subspace(xi: &DMatrix<f64>, rule: OrderRule) -> Result<Subspace> {
    let (values, vectors) = sym_eig_desc(xi);
    let max = values.iter().copied().fold(0.0_f64, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if max <= 0.0 {
        return Err(Error::EmptySpectrum);
    }
    if min < -1e-6 * max {
        return Err(Error::NotPsd { min, max });
    }
    let spectrum: Vec<f64> = values.iter().map(|&v| v.max(0.0).sqrt()).collect();
    let positive = spectrum.iter().take_while(|&&s| s > 0.0).count();
    let r = match rule {
        OrderRule::Fixed(r) => r,
        OrderRule::Relative { rel_tol, max_order } => select_order(&spectrum, rel_tol).min(max_order),
    }
    .clamp(1, positive);
    Ok(Subspace {
        basis: vectors.columns(0, r).into_owned(),
        weights: spectrum[..r].to_vec(),
        spectrum,
    })
}

/// Principal angles between the spans of two subspaces, ascending, in
/// `[0, π/2]`. Unequal orders yield `min(r_a, r_b)` angles.
///
/// Cosines come from the singular values of `Q_bigᵀ Q_small`; angles below
/// π/4 are taken from the sines (singular values of the residual
/// `Q_small − Q_big Q_bigᵀ Q_small`) instead, which keeps nearly identical
/// subspaces accurate where `acos` loses half the digits.
pub fn principal_angles(a: &Subspace, b: &Subspace) -> Result<Vec<f64>> {
    if a.ambient() != b.ambient() {
        return Err(Error::AmbientMismatch { left: a.ambient(), right: b.ambient() });
    }
    let (small, big) = if a.order() <= b.order() { (a, b) } else { (b, a) };
    let cross = big.basis.transpose() * &small.basis;
    let residual = &small.basis - &big.basis * &cross;
    let mut cos: Vec<f64> = cross.singular_values().iter().copied().collect();
    let mut sin: Vec<f64> = residual.singular_values().iter().copied().collect();
    cos.sort_by(|x, y| y.total_cmp(x));
    sin.sort_by(f64::total_cmp);
    Ok(cos
        .iter()
        .zip(&sin)
        .map(|(&c, &s)| {
            let c = c.clamp(0.0, 1.0);
            if c * c > 0.5 {
                s.clamp(0.0, 1.0).asin()
            } else {
                c.acos()
            }
        })
        .collect())
}

/// Geodesic Grassmann distance `(Σ θ_k²)^{1/2}` over the principal angles.
pub fn grassmann_distance(a: &Subspace, b: &Subspace) -> Result<f64> {
    Ok(principal_angles(a, b)?.iter().map(|t| t * t).sum::<f64>().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::relative_frobenius;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn random_subspace(rng: &mut ChaCha8Rng, n: usize, r: usize) -> Subspace {
        Subspace::from_span(&DMatrix::from_fn(n, r, |_, _| rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn diagonal_extraction() {
        let xi = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0, 0.0]));
        let s = extract_subspace(&xi, OrderRule::Fixed(2)).unwrap();
        assert_eq!(s.weights, vec![2.0, 1.0]);
        assert!((s.basis[(0, 0)].abs() - 1.0).abs() < 1e-14);
        assert!((s.basis[(1, 1)].abs() - 1.0).abs() < 1e-14);
        let g = s.gamma();
        assert!((g[(0, 0)].abs() - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn identity_extraction() {
        let s = extract_subspace(&DMatrix::identity(3, 3), OrderRule::Fixed(3)).unwrap();
        assert_eq!(s.weights, vec![1.0, 1.0, 1.0]);
        assert!(relative_frobenius(&(s.basis.transpose() * &s.basis), &DMatrix::identity(3, 3)) < 1e-12);
    }

    #[test]
    fn rejects_indefinite_and_zero() {
        let xi = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        assert!(matches!(extract_subspace(&xi, OrderRule::default()), Err(Error::NotPsd { .. })));
        assert!(matches!(extract_subspace(&DMatrix::zeros(2, 2), OrderRule::default()), Err(Error::EmptySpectrum)));
    }

    #[test]
    fn order_threshold() {
        assert_eq!(select_order(&[10.0, 5.0, 2.0, 1e-8], 1e-3), 3);
        assert_eq!(select_order(&[3.0; 5], 1e-3), 5);
        assert_eq!(select_order(&[1.0, 0.0], 0.5), 1);
    }

    #[test]
    fn relative_rule_respects_cap() {
        let xi = DMatrix::from_diagonal(&DVector::from_vec(vec![9.0, 4.0, 1.0]));
        let s = extract_subspace(&xi, OrderRule::Relative { rel_tol: 1e-3, max_order: 2 }).unwrap();
        assert_eq!(s.order(), 2);
    }

    #[test]
    fn reconstruction_from_full_decomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = DMatrix::from_fn(6, 9, |_, _| rng.random_range(-1.0..1.0));
        let xi = &a * a.transpose();
        let s = extract_subspace(&xi, OrderRule::Fixed(6)).unwrap();
        let sig2 = DMatrix::from_diagonal(&DVector::from_iterator(6, s.weights.iter().map(|w| w * w)));
        let rebuilt = &s.basis * sig2 * s.basis.transpose();
        assert!(relative_frobenius(&rebuilt, &xi) < 1e-8);
        assert!(s.weights.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn orthogonal_lines() {
        let e1 = Subspace::from_span(&DMatrix::from_column_slice(2, 1, &[1.0, 0.0]));
        let e2 = Subspace::from_span(&DMatrix::from_column_slice(2, 1, &[0.0, 1.0]));
        assert!((grassmann_distance(&e1, &e2).unwrap() - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(grassmann_distance(&e1, &e1).unwrap(), 0.0);
    }

    #[test]
    fn ambient_mismatch() {
        let a = Subspace::from_span(&DMatrix::identity(3, 1));
        let b = Subspace::from_span(&DMatrix::identity(4, 1));
        assert!(matches!(grassmann_distance(&a, &b), Err(Error::AmbientMismatch { .. })));
    }

    #[test]
    fn containment_gives_zero_distance() {
        let small = Subspace::from_span(&DMatrix::identity(4, 1));
        let big = Subspace::from_span(&DMatrix::identity(4, 2));
        assert!(grassmann_distance(&small, &big).unwrap() < 1e-12);
    }

    #[test]
    fn angles_match_independent_oracle() {
        // oracle: Gram–Schmidt bases and cos θ from the eigenvalues of MᵀM
        fn gram_schmidt(m: &DMatrix<f64>) -> DMatrix<f64> {
            let mut q = m.clone();
            for j in 0..q.ncols() {
                for i in 0..j {
                    let proj = q.column(i).dot(&q.column(j));
                    let qi = q.column(i).into_owned();
                    q.column_mut(j).axpy(-proj, &qi, 1.0);
                }
                let n = q.column(j).norm();
                q.column_mut(j).scale_mut(1.0 / n);
            }
            q
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let a = DMatrix::from_fn(7, 3, |_, _| rng.random_range(-1.0..1.0));
            let b = DMatrix::from_fn(7, 3, |_, _| rng.random_range(-1.0..1.0));
            let (qa, qb) = (gram_schmidt(&a), gram_schmidt(&b));
            let m = qa.transpose() * qb;
            let mut cos2: Vec<f64> = (m.transpose() * &m).symmetric_eigen().eigenvalues.iter().copied().collect();
            cos2.sort_by(|x, y| y.total_cmp(x));
            let oracle: Vec<f64> = cos2.iter().map(|c| c.clamp(0.0, 1.0).sqrt().acos()).collect();
            let got = principal_angles(&Subspace::from_span(&a), &Subspace::from_span(&b)).unwrap();
            for (g, o) in got.iter().zip(&oracle) {
                assert!((g - o).abs() < 1e-10, "{g} vs {o}");
            }
        }
    }

    #[test]
    fn basis_rotation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_subspace(&mut rng, 8, 3);
        let b = random_subspace(&mut rng, 8, 3);
        let rot = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0)).qr().q();
        let a_rot = Subspace { basis: &a.basis * rot, ..a.clone() };
        let d0 = grassmann_distance(&a, &b).unwrap();
        let d1 = grassmann_distance(&a_rot, &b).unwrap();
        assert!((d0 - d1).abs() < 1e-10);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn metric_axioms(seed in 0u64..100_000, n in 3usize..9, r in 1usize..3) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = random_subspace(&mut rng, n, r);
                let b = random_subspace(&mut rng, n, r);
                let c = random_subspace(&mut rng, n, r);
                let ab = grassmann_distance(&a, &b).unwrap();
                let ba = grassmann_distance(&b, &a).unwrap();
                let bc = grassmann_distance(&b, &c).unwrap();
                let ac = grassmann_distance(&a, &c).unwrap();
                prop_assert!((ab - ba).abs() < 1e-12);
                prop_assert!(grassmann_distance(&a, &a).unwrap() < 1e-14);
                prop_assert!(ab > 0.0);
                prop_assert!(ac <= ab + bc + 1e-10);
                let angles = principal_angles(&a, &b).unwrap();
                prop_assert!(angles.windows(2).all(|w| w[0] <= w[1] + 1e-15));
                prop_assert!(angles.iter().all(|t| (0.0..=FRAC_PI_2 + 1e-15).contains(t)));
            }
        }
    }
}
