//! Recursive maintenance of the squared data matrix `Ξ = Y Π⊥ Yᵀ`, the
//! inverse input Gram `P = (UUᵀ)⁻¹` and the cross term `YUᵀ` as Hankel
//! columns stream in.
//!
//! Each column costs a handful of rank-one updates; the mosaic-Hankel
//! matrices themselves are never stored.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hankel::{check_compatible, HankelPair};
use crate::io::{parse_matrix_rows, write_matrix_rows};
use crate::linalg::{add_mul_tr, spd_inverse, symmetrize};

#[derive(Debug, Clone, PartialEq)]
pub struct SquaredDataState {
    /// `Ξ_N`, symmetric `(l·p) × (l·p)`.
    pub xi: DMatrix<f64>,
    /// `P_N = (U_N U_Nᵀ)⁻¹`; `None` for autonomous data.
    pub p: Option<DMatrix<f64>>,
    /// `Y_N U_Nᵀ`; `None` for autonomous data.
    pub yut: Option<DMatrix<f64>>,
    /// `U_N U_Nᵀ`, kept alongside `P` for the input-map recovery.
    pub uut: Option<DMatrix<f64>>,
    pub depth: usize,
    pub output_dim: usize,
    pub input_dim: usize,
    pub datasets_ingested: usize,
    pub columns_ingested: usize,
}

impl SquaredDataState {
    /// Batch initialization from the mosaic concatenation of `batch`.
    pub fn init(batch: &[HankelPair]) -> Result<Self> {
        let first = batch
            .first()
            .ok_or_else(|| Error::ShapeMismatch("initial batch is empty".into()))?;
        check_compatible(batch)?;
        let lp = first.y.nrows();
        let lm = first.u.nrows();
        let mut yy = DMatrix::zeros(lp, lp);
        let mut uu = DMatrix::zeros(lm, lm);
        let mut yu = DMatrix::zeros(lp, lm);
        let mut columns = 0;
        for h in batch {
            yy += &h.y * h.y.transpose();
            if lm > 0 {
                uu += &h.u * h.u.transpose();
                yu += &h.y * h.u.transpose();
            }
            columns += h.columns();
        }
        let (xi, p, yut, uut) = if lm == 0 {
            (yy, None, None, None)
        } else {
            let p = spd_inverse(&uu)?;
            let xi = yy - &yu * (&p * yu.transpose());
            (xi, Some(p), Some(yu), Some(uu))
        };
        let mut state = Self {
            xi,
            p,
            yut,
            uut,
            depth: first.depth,
            output_dim: first.output_dim,
            input_dim: first.input_dim,
            datasets_ingested: batch.len(),
            columns_ingested: columns,
        };
        state.symmetrize();
        Ok(state)
    }

    pub fn ambient_dim(&self) -> usize {
        self.xi.nrows()
    }

    /// Folds one Hankel column into the state and returns the gain `α`.
    ///
    /// `α` and the innovation `e` are evaluated from the pre-update `P` and
    /// `YUᵀ`, after which `Ξ`, `P` and `YUᵀ` are updated in that order.
    pub fn rank_one_update(&mut self, u_col: &DVector<f64>, y_col: &DVector<f64>) -> Result<f64> {
        if y_col.len() != self.xi.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "output column has length {}, state expects {}",
                y_col.len(),
                self.xi.nrows()
            )));
        }
        let lm = self.depth * self.input_dim;
        if u_col.len() != lm {
            return Err(Error::DimensionMismatch(format!(
                "input column has length {}, state expects {lm}",
                u_col.len()
            )));
        }
        let (Some(p), Some(yut), Some(uut)) = (&mut self.p, &mut self.yut, &mut self.uut) else {
            self.xi.ger(1.0, y_col, y_col, 1.0);
            self.columns_ingested += 1;
            return Ok(1.0);
        };
        let pu = &*p * u_col;
        let alpha = 1.0 / (1.0 + u_col.dot(&pu));
        let mut e = y_col.clone();
        e.gemv(-1.0, yut, &pu, 1.0);
        self.xi.ger(alpha, &e, &e, 1.0);
        p.ger(-alpha, &pu, &pu, 1.0);
        yut.ger(1.0, y_col, u_col, 1.0);
        uut.ger(1.0, u_col, u_col, 1.0);
        self.columns_ingested += 1;
        Ok(alpha)
    }

    /// Streams every column of `h` through the recursion, then
    /// re-symmetrizes `Ξ`, `P` and `UUᵀ`.
    ///
    /// Equivalent to calling [`Self::rank_one_update`] per column: `P` and
    /// `YUᵀ` are updated column by column, while the `Ξ` and `UUᵀ` terms,
    /// which never feed back into the recursion, are accumulated as
    /// `Σ α_k e_k e_kᵀ = E Eᵀ` and added once at the end.
    pub fn ingest_dataset(&mut self, h: &HankelPair) -> Result<()> {
        if h.depth != self.depth || h.output_dim != self.output_dim || h.input_dim != self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "dataset (l={}, p={}, m={}) does not match state (l={}, p={}, m={})",
                h.depth, h.output_dim, h.input_dim, self.depth, self.output_dim, self.input_dim
            )));
        }
        if h.y.iter().chain(h.u.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        match (&mut self.p, &mut self.yut, &mut self.uut) {
            (Some(p), Some(yut), Some(uut)) => {
                let s = h.columns();
                let mut scaled = DMatrix::zeros(h.y.nrows(), s);
                let mut u_col = DVector::zeros(h.u.nrows());
                let mut y_col = DVector::zeros(h.y.nrows());
                let mut pu = DVector::zeros(h.u.nrows());
                for k in 0..s {
                    u_col.copy_from(&h.u.column(k));
                    y_col.copy_from(&h.y.column(k));
                    pu.gemv(1.0, p, &u_col, 0.0);
                    let alpha = 1.0 / (1.0 + u_col.dot(&pu));
                    let mut e = scaled.column_mut(k);
                    e.copy_from(&y_col);
                    e.gemv(-1.0, yut, &pu, 1.0);
                    e *= alpha.sqrt();
                    p.ger(-alpha, &pu, &pu, 1.0);
                    yut.ger(1.0, &y_col, &u_col, 1.0);
                }
                add_mul_tr(&mut self.xi, &scaled, &scaled, 1.0);
                add_mul_tr(uut, &h.u, &h.u, 1.0);
            }
            _ => add_mul_tr(&mut self.xi, &h.y, &h.y, 1.0),
        }
        self.columns_ingested += h.columns();
        self.symmetrize();
        self.datasets_ingested += 1;
        Ok(())
    }

    fn symmetrize(&mut self) {
        symmetrize(&mut self.xi);
        if let Some(p) = &mut self.p {
            symmetrize(p);
        }
        if let Some(uu) = &mut self.uut {
            symmetrize(uu);
        }
    }

    /// Writes a text checkpoint; every float uses 17 significant digits so
    /// [`Self::read_checkpoint`] restores the state bit-exactly.
    pub fn write_checkpoint(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "rssid-checkpoint,1")?;
        writeln!(w, "depth,{}", self.depth)?;
        writeln!(w, "output_dim,{}", self.output_dim)?;
        writeln!(w, "input_dim,{}", self.input_dim)?;
        writeln!(w, "datasets_ingested,{}", self.datasets_ingested)?;
        writeln!(w, "columns_ingested,{}", self.columns_ingested)?;
        let blocks = [("xi", Some(&self.xi)), ("p", self.p.as_ref()), ("yut", self.yut.as_ref()), ("uut", self.uut.as_ref())];
        for (name, m) in blocks {
            if let Some(m) = m {
                writeln!(w, "matrix,{name},{},{}", m.nrows(), m.ncols())?;
                write_matrix_rows(&mut w, m)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_checkpoint(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let lines: Vec<&str> = text.lines().collect();
        if lines.first() != Some(&"rssid-checkpoint,1") {
            return Err(Error::Parse(format!("{} is not an rssid checkpoint", path.display())));
        }
        let mut scalars = std::collections::HashMap::new();
        let mut matrices = std::collections::HashMap::new();
        let mut i = 1;
        while i < lines.len() {
            let fields: Vec<&str> = lines[i].split(',').collect();
            if fields[0] == "matrix" && fields.len() == 4 {
                let rows: usize = fields[2].parse().map_err(|_| Error::Parse(lines[i].into()))?;
                let cols: usize = fields[3].parse().map_err(|_| Error::Parse(lines[i].into()))?;
                let m = if rows == 0 || cols == 0 {
                    DMatrix::zeros(rows, cols)
                } else {
                    parse_matrix_rows(&lines[i + 1..i + 1 + rows])?
                };
                matrices.insert(fields[1].to_string(), m);
                i += 1 + if cols == 0 { 0 } else { rows };
            } else if fields.len() == 2 {
                let v: usize = fields[1].parse().map_err(|_| Error::Parse(lines[i].into()))?;
                scalars.insert(fields[0].to_string(), v);
                i += 1;
            } else {
                return Err(Error::Parse(format!("unexpected checkpoint line {:?}", lines[i])));
            }
        }
        let get = |k: &str| scalars.get(k).copied().ok_or_else(|| Error::Parse(format!("checkpoint missing {k}")));
        Ok(Self {
            xi: matrices.remove("xi").ok_or_else(|| Error::Parse("checkpoint missing xi".into()))?,
            p: matrices.remove("p"),
            yut: matrices.remove("yut"),
            uut: matrices.remove("uut"),
            depth: get("depth")?,
            output_dim: get("output_dim")?,
            input_dim: get("input_dim")?,
            datasets_ingested: get("datasets_ingested")?,
            columns_ingested: get("columns_ingested")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hankel::{build_hankel, projected_gram, DataRecord};
    use crate::linalg::relative_frobenius;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_record(rng: &mut ChaCha8Rng, id: usize, m: usize, p: usize, len: usize) -> DataRecord {
        let u = DMatrix::from_fn(m, len, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(p, len, |_, _| rng.random_range(-1.0..1.0));
        DataRecord::new(id, u, y).unwrap()
    }

    /// Batch Ξ of the mosaic concatenation, evaluated densely with an exact inverse.
    fn batch_xi(pairs: &[HankelPair]) -> DMatrix<f64> {
        let all = HankelPair::concat(pairs).unwrap();
        if all.input_dim == 0 {
            return &all.y * all.y.transpose();
        }
        let inv = (&all.u * all.u.transpose()).try_inverse().unwrap();
        let pi = DMatrix::<f64>::identity(all.columns(), all.columns()) - all.u.transpose() * inv * &all.u;
        &all.y * pi * all.y.transpose()
    }

    #[test]
    fn dataset_ingest_equals_column_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pairs: Vec<HankelPair> = (0..3).map(|i| build_hankel(&random_record(&mut rng, i, 2, 2, 40), 4, 2).unwrap()).collect();
        let mut batched = SquaredDataState::init(&pairs[..1]).unwrap();
        let mut columnwise = batched.clone();
        for h in &pairs[1..] {
            batched.ingest_dataset(h).unwrap();
            for k in 0..h.columns() {
                columnwise.rank_one_update(&h.u.column(k).into_owned(), &h.y.column(k).into_owned()).unwrap();
            }
        }
        assert!(relative_frobenius(&batched.xi, &columnwise.xi) < 1e-13);
        assert!(relative_frobenius(batched.p.as_ref().unwrap(), columnwise.p.as_ref().unwrap()) < 1e-13);
        assert!(relative_frobenius(batched.uut.as_ref().unwrap(), columnwise.uut.as_ref().unwrap()) < 1e-13);
        assert_eq!(batched.columns_ingested, columnwise.columns_ingested);
    }

    #[test]
    fn single_autonomous_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = build_hankel(&random_record(&mut rng, 0, 0, 2, 12), 3, 0).unwrap();
        let s = SquaredDataState::init(std::slice::from_ref(&h)).unwrap();
        assert!(s.p.is_none() && s.yut.is_none());
        assert!(relative_frobenius(&s.xi, &(&h.y * h.y.transpose())) < 1e-14);
    }

    #[test]
    fn identity_input_gram() {
        let y = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let h = HankelPair { y: y.clone(), u: DMatrix::identity(3, 3), depth: 1, output_dim: 2, input_dim: 3, record_id: 0 };
        let s = SquaredDataState::init(&[h]).unwrap();
        assert!(relative_frobenius(s.p.as_ref().unwrap(), &DMatrix::identity(3, 3)) < 1e-9);
        assert_eq!(s.yut.as_ref().unwrap(), &y);
    }

    #[test]
    fn two_pair_init_equals_concatenation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = build_hankel(&random_record(&mut rng, 0, 1, 2, 30), 4, 1).unwrap();
        let b = build_hankel(&random_record(&mut rng, 1, 1, 2, 30), 4, 1).unwrap();
        let s = SquaredDataState::init(&[a.clone(), b.clone()]).unwrap();
        assert!(relative_frobenius(&s.xi, &batch_xi(&[a, b])) < 1e-9);
    }

    #[test]
    fn zero_input_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = build_hankel(&random_record(&mut rng, 0, 1, 1, 30), 3, 1).unwrap();
        let mut s = SquaredDataState::init(&[h]).unwrap();
        let before = s.clone();
        let y = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let alpha = s.rank_one_update(&DVector::zeros(3), &y).unwrap();
        assert_eq!(alpha, 1.0);
        assert!(relative_frobenius(&s.xi, &(&before.xi + &y * y.transpose())) < 1e-14);
        assert_eq!(s.p, before.p);
        assert_eq!(s.yut, before.yut);
    }

    #[test]
    fn recursive_matches_batch_and_inverse_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pairs: Vec<_> = (0..4)
            .map(|i| build_hankel(&random_record(&mut rng, i, 2, 2, 40), 5, 2).unwrap())
            .collect();
        let mut s = SquaredDataState::init(&pairs[..1]).unwrap();
        for h in &pairs[1..] {
            s.ingest_dataset(h).unwrap();
        }
        assert_eq!(s.datasets_ingested, 4);
        assert_eq!(s.columns_ingested, pairs.iter().map(HankelPair::columns).sum::<usize>());
        assert!(relative_frobenius(&s.xi, &batch_xi(&pairs)) < 1e-8);
        let all = HankelPair::concat(&pairs).unwrap();
        let p_exact = (&all.u * all.u.transpose()).try_inverse().unwrap();
        assert!(relative_frobenius(s.p.as_ref().unwrap(), &p_exact) < 1e-8);
        assert!(relative_frobenius(s.yut.as_ref().unwrap(), &(&all.y * all.u.transpose())) < 1e-12);
    }

    #[test]
    fn ingest_after_init_equals_joint_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = build_hankel(&random_record(&mut rng, 0, 1, 3, 25), 3, 1).unwrap();
        let b = build_hankel(&random_record(&mut rng, 1, 1, 3, 25), 3, 1).unwrap();
        let mut rec = SquaredDataState::init(std::slice::from_ref(&a)).unwrap();
        rec.ingest_dataset(&b).unwrap();
        let joint = SquaredDataState::init(&[a, b]).unwrap();
        assert!(relative_frobenius(&rec.xi, &joint.xi) < 1e-8);
    }

    #[test]
    fn zero_dataset_leaves_autonomous_state_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let h = build_hankel(&random_record(&mut rng, 0, 0, 2, 20), 3, 0).unwrap();
        let mut s = SquaredDataState::init(std::slice::from_ref(&h)).unwrap();
        let before = s.xi.clone();
        let zero = HankelPair { y: DMatrix::zeros(h.y.nrows(), h.columns()), ..h };
        s.ingest_dataset(&zero).unwrap();
        assert_eq!(s.xi, before);
    }

    #[test]
    fn repeated_ingestion_grows_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let h = build_hankel(&random_record(&mut rng, 0, 0, 2, 20), 3, 0).unwrap();
        let mut s = SquaredDataState::init(std::slice::from_ref(&h)).unwrap();
        let mut prev = s.xi.clone().symmetric_eigen().eigenvalues.as_slice().to_vec();
        prev.sort_by(f64::total_cmp);
        for _ in 0..3 {
            s.ingest_dataset(&h).unwrap();
            let mut now = s.xi.clone().symmetric_eigen().eigenvalues.as_slice().to_vec();
            now.sort_by(f64::total_cmp);
            for (a, b) in prev.iter().zip(&now) {
                assert!(b + 1e-10 >= *a);
            }
            prev = now;
        }
        let gram = projected_gram(&h).unwrap();
        assert!(relative_frobenius(&s.xi, &(gram * 4.0)) < 1e-12);
    }

    #[test]
    fn mismatched_dataset_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let a = build_hankel(&random_record(&mut rng, 0, 1, 2, 30), 4, 1).unwrap();
        let b = build_hankel(&random_record(&mut rng, 1, 1, 2, 30), 5, 1).unwrap();
        let mut s = SquaredDataState::init(std::slice::from_ref(&a)).unwrap();
        assert!(matches!(s.ingest_dataset(&b), Err(Error::ShapeMismatch(_))));
        assert!(matches!(SquaredDataState::init(&[a, b]), Err(Error::ShapeMismatch(_))));
        assert!(matches!(SquaredDataState::init(&[]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let a = build_hankel(&random_record(&mut rng, 0, 1, 2, 30), 4, 1).unwrap();
        let b = build_hankel(&random_record(&mut rng, 1, 1, 2, 30), 4, 1).unwrap();
        let mut s = SquaredDataState::init(&[a]).unwrap();
        s.ingest_dataset(&b).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.csv");
        s.write_checkpoint(&path).unwrap();
        assert_eq!(SquaredDataState::read_checkpoint(&path).unwrap(), s);

        let h = build_hankel(&random_record(&mut rng, 2, 0, 2, 20), 3, 0).unwrap();
        let auto = SquaredDataState::init(&[h]).unwrap();
        auto.write_checkpoint(&path).unwrap();
        assert_eq!(SquaredDataState::read_checkpoint(&path).unwrap(), auto);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn alpha_in_unit_interval_and_p_symmetric(seed in 0u64..10_000, m in 1usize..3) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let h = build_hankel(&random_record(&mut rng, 0, m, 2, 40), 4, 1).unwrap();
                let next = build_hankel(&random_record(&mut rng, 1, m, 2, 40), 4, 1).unwrap();
                let mut s = SquaredDataState::init(&[h]).unwrap();
                for k in 0..next.columns() {
                    let (u, y) = crate::hankel::column_pair(&next, k);
                    let alpha = s.rank_one_update(&u, &y).unwrap();
                    prop_assert!(alpha > 0.0 && alpha <= 1.0);
                    let p = s.p.as_ref().unwrap();
                    prop_assert!((p - p.transpose()).norm() <= 1e-12 * p.norm().max(1.0));
                }
            }
        }
    }
}
