//! Streamed I/O segments, block-Hankel arrangement and the input-orthogonal
//! projection of the output Hankel matrix.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, parse_f64};
use crate::linalg::{add_mul_tr, mul_tr, spd_inverse, symmetrize};

/// One streamed experiment segment of `n + 1` samples.
///
/// Samples are stored column-wise: column `t` of `inputs` is `u_t` and column
/// `t` of `outputs` is `y_t`. Autonomous records have a `0 × (n + 1)` input
/// matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DataRecord {
    pub id: usize,
    inputs: DMatrix<f64>,
    outputs: DMatrix<f64>,
}

impl DataRecord {
    pub fn new(id: usize, inputs: DMatrix<f64>, outputs: DMatrix<f64>) -> Result<Self> {
        if inputs.ncols() != outputs.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "record {id}: {} input samples but {} output samples",
                inputs.ncols(),
                outputs.ncols()
            )));
        }
        if outputs.ncols() < 2 {
            return Err(Error::DimensionMismatch(format!(
                "record {id}: need at least 2 samples, got {}",
                outputs.ncols()
            )));
        }
        if outputs.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!("record {id}: no output channels")));
        }
        Ok(Self { id, inputs, outputs })
    }

    /// Builds a record from per-step sample vectors, rejecting ragged samples.
    pub fn from_samples(id: usize, inputs: &[Vec<f64>], outputs: &[Vec<f64>]) -> Result<Self> {
        let p = outputs.first().map_or(0, Vec::len);
        let m = inputs.first().map_or(0, Vec::len);
        if let Some(bad) = outputs.iter().position(|y| y.len() != p) {
            return Err(Error::DimensionMismatch(format!(
                "output sample {bad} has dimension {} (expected {p})",
                outputs[bad].len()
            )));
        }
        if let Some(bad) = inputs.iter().position(|u| u.len() != m) {
            return Err(Error::DimensionMismatch(format!(
                "input sample {bad} has dimension {} (expected {m})",
                inputs[bad].len()
            )));
        }
        let len = outputs.len();
        let inputs = if inputs.is_empty() {
            DMatrix::zeros(0, len)
        } else {
            DMatrix::from_fn(m, inputs.len(), |i, t| inputs[t][i])
        };
        let outputs = DMatrix::from_fn(p, len, |i, t| outputs[t][i]);
        Self::new(id, inputs, outputs)
    }

    /// Number of samples, `n + 1`.
    pub fn len(&self) -> usize {
        self.outputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of time steps `n`.
    pub fn steps(&self) -> usize {
        self.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.nrows()
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn outputs(&self) -> &DMatrix<f64> {
        &self.outputs
    }

    /// Writes the record as CSV with header `t,u_1..u_m,y_1..y_p`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.input_dim()).map(|k| format!("u_{k}")));
        header.extend((1..=self.output_dim()).map(|k| format!("y_{k}")));
        writeln!(w, "{}", header.join(","))?;
        for t in 0..self.len() {
            let mut row = vec![t.to_string()];
            row.extend(self.inputs.column(t).iter().map(|&v| fmt_f64(v)));
            row.extend(self.outputs.column(t).iter().map(|&v| fmt_f64(v)));
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a record written by [`DataRecord::write_csv`].
    pub fn read_csv(path: &Path, id: usize) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let mut u_cols = Vec::new();
        let mut y_cols = Vec::new();
        for (k, h) in headers.iter().enumerate() {
            if h.starts_with("u_") {
                u_cols.push(k);
            } else if h.starts_with("y_") {
                y_cols.push(k);
            } else if h != "t" {
                return Err(Error::Parse(format!("unexpected column {h:?} in {}", path.display())));
            }
        }
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        for row in reader.records() {
            let row = row?;
            let u = u_cols.iter().map(|&k| parse_f64(&row[k])).collect::<Result<Vec<_>>>()?;
            let y = y_cols.iter().map(|&k| parse_f64(&row[k])).collect::<Result<Vec<_>>>()?;
            inputs.push(u);
            outputs.push(y);
        }
        let len = outputs.len();
        let inputs_m = DMatrix::from_fn(u_cols.len(), len, |i, t| inputs[t][i]);
        let outputs_m = DMatrix::from_fn(y_cols.len(), len, |i, t| outputs[t][i]);
        Self::new(id, inputs_m, outputs_m)
    }
}

/// Block-Hankel matrices of one record.
///
/// `y` is `(l·p) × s` and `u` is `(l·m) × s` with `s = n − l + 1`; block row
/// `j`, column `k` holds sample `j + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelPair {
    pub y: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub depth: usize,
    pub output_dim: usize,
    pub input_dim: usize,
    pub record_id: usize,
}

impl HankelPair {
    /// Number of Hankel columns `s`.
    pub fn columns(&self) -> usize {
        self.y.ncols()
    }

    /// Output sample at the first step of each column (`p × s`), i.e. the
    /// initial condition of every column trajectory when `y` measures the
    /// full state.
    pub fn initial_outputs(&self) -> DMatrix<f64> {
        self.y.rows(0, self.output_dim).into_owned()
    }

    /// Horizontally concatenates pairs into one mosaic pair.
    pub fn concat(pairs: &[HankelPair]) -> Result<HankelPair> {
        let first = pairs
            .first()
            .ok_or_else(|| Error::ShapeMismatch("no Hankel pairs to concatenate".into()))?;
        check_compatible(pairs)?;
        let total: usize = pairs.iter().map(HankelPair::columns).sum();
        let mut y = DMatrix::zeros(first.y.nrows(), total);
        let mut u = DMatrix::zeros(first.u.nrows(), total);
        let mut at = 0;
        for p in pairs {
            let s = p.columns();
            y.columns_mut(at, s).copy_from(&p.y);
            u.columns_mut(at, s).copy_from(&p.u);
            at += s;
        }
        Ok(HankelPair {
            y,
            u,
            depth: first.depth,
            output_dim: first.output_dim,
            input_dim: first.input_dim,
            record_id: first.record_id,
        })
    }
}

pub(crate) fn check_compatible(pairs: &[HankelPair]) -> Result<()> {
    if let Some(first) = pairs.first() {
        for p in &pairs[1..] {
            if p.depth != first.depth || p.output_dim != first.output_dim || p.input_dim != first.input_dim {
                return Err(Error::ShapeMismatch(format!(
                    "Hankel pair (l={}, p={}, m={}) incompatible with (l={}, p={}, m={})",
                    p.depth, p.output_dim, p.input_dim, first.depth, first.output_dim, first.input_dim
                )));
            }
        }
    }
    Ok(())
}

/// Arranges a record into block-Hankel matrices of the given depth.
///
/// `r_max` is the largest model order the caller intends to identify; the
/// column count must exceed `l·m + r_max`.
pub fn build_hankel(record: &DataRecord, depth: usize, r_max: usize) -> Result<HankelPair> {
    if depth == 0 {
        return Err(Error::InvalidConfig("Hankel depth must be at least 1".into()));
    }
    let samples = record.len();
    if samples <= depth {
        return Err(Error::DepthTooLarge { depth, samples });
    }
    // s = n − l + 1 with n = samples − 1
    let s = samples - depth;
    let p = record.output_dim();
    let m = record.input_dim();
    let required = depth * m + r_max;
    if s <= required {
        return Err(Error::InsufficientColumns { columns: s, required });
    }
    let y = block_hankel(record.outputs(), depth, s);
    let u = block_hankel(record.inputs(), depth, s);
    Ok(HankelPair {
        y,
        u,
        depth,
        output_dim: p,
        input_dim: m,
        record_id: record.id,
    })
}

fn block_hankel(samples: &DMatrix<f64>, depth: usize, s: usize) -> DMatrix<f64> {
    let dim = samples.nrows();
    let mut h = DMatrix::zeros(depth * dim, s);
    for k in 0..s {
        for j in 0..depth {
            h.view_mut((j * dim, k), (dim, 1)).copy_from(&samples.column(j + k));
        }
    }
    h
}

/// `Y · Π⊥ · Yᵀ` with `Π⊥ = I − Uᵀ(UUᵀ)⁻¹U`, or `Y·Yᵀ` for autonomous data.
///
/// The projector is never formed: the result is evaluated as
/// `YYᵀ − (YUᵀ)(UUᵀ)⁻¹(YUᵀ)ᵀ`. A numerically singular input Gram is
/// ridge-regularized by `1e-10 · trace(UUᵀ)/(l·m)`.
pub fn projected_gram(h: &HankelPair) -> Result<DMatrix<f64>> {
    let mut xi = mul_tr(&h.y, &h.y);
    if h.input_dim > 0 {
        let uu = mul_tr(&h.u, &h.u);
        let yu = mul_tr(&h.y, &h.u);
        let p = spd_inverse(&uu)?;
        let pyu = mul_tr(&p, &yu);
        add_mul_tr(&mut xi, &yu, &pyu.transpose(), -1.0);
    }
    symmetrize(&mut xi);
    Ok(xi)
}

/// The dense `s × s` projector `I − Uᵀ(UUᵀ)⁻¹U` (identity when `U` has no
/// rows). Only sensible for small `s`.
pub fn dense_projector(u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = u.ncols();
    let mut pi = DMatrix::identity(s, s);
    if u.nrows() > 0 {
        let p = spd_inverse(&(u * u.transpose()))?;
        pi -= u.transpose() * p * u;
    }
    Ok(pi)
}

/// Hankel column `k` of the inputs and outputs as owned vectors.
pub fn column_pair(h: &HankelPair, k: usize) -> (DVector<f64>, DVector<f64>) {
    (h.u.column(k).into_owned(), h.y.column(k).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::relative_frobenius;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_record(values: &[f64]) -> DataRecord {
        let outputs: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
        DataRecord::from_samples(0, &[], &outputs).unwrap()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn shift_structure_scalar() {
        // 5 samples (n = 4), depth 2: s = n − l + 1 = 3, last sample unused.
        let rec = scalar_record(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let h = build_hankel(&rec, 2, 0).unwrap();
        assert_eq!(h.y, DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 3.0, 4.0]));
        assert_eq!(h.u.shape(), (0, 3));
    }

    #[test]
    fn column_counts_match_experiment_settings() {
        let rec = scalar_record(&vec![0.0; 16]);
        assert_eq!(build_hankel(&rec, 10, 3).unwrap().columns(), 6);
        let rec = scalar_record(&vec![0.0; 801]);
        assert_eq!(build_hankel(&rec, 200, 11).unwrap().columns(), 601);
    }

    #[test]
    fn multichannel_block_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rec = DataRecord::new(7, random_matrix(&mut rng, 2, 14), random_matrix(&mut rng, 3, 14)).unwrap();
        let h = build_hankel(&rec, 4, 0).unwrap();
        assert_eq!(h.y.shape(), (12, 10));
        assert_eq!(h.u.shape(), (8, 10));
        for j in 0..4 {
            for k in 0..10 {
                for c in 0..3 {
                    assert_eq!(h.y[(j * 3 + c, k)], rec.outputs()[(c, j + k)]);
                }
                for c in 0..2 {
                    assert_eq!(h.u[(j * 2 + c, k)], rec.inputs()[(c, j + k)]);
                }
            }
        }
        assert_eq!(h.initial_outputs(), rec.outputs().columns(0, 10).into_owned());
    }

    #[test]
    fn construction_errors() {
        let rec = scalar_record(&[1.0, 2.0, 3.0]);
        assert!(matches!(build_hankel(&rec, 3, 0), Err(Error::DepthTooLarge { .. })));
        assert!(matches!(build_hankel(&rec, 2, 1), Err(Error::InsufficientColumns { .. })));
        let ragged = DataRecord::from_samples(0, &[], &[vec![1.0, 2.0], vec![1.0]]);
        assert!(matches!(ragged, Err(Error::DimensionMismatch(_))));
        let ragged_u = DataRecord::from_samples(0, &[vec![1.0], vec![]], &[vec![1.0], vec![2.0]]);
        assert!(matches!(ragged_u, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn autonomous_gram_is_plain_gram() {
        let h = HankelPair {
            y: DMatrix::identity(2, 2),
            u: DMatrix::zeros(0, 2),
            depth: 1,
            output_dim: 2,
            input_dim: 0,
            record_id: 0,
        };
        assert_eq!(projected_gram(&h).unwrap(), DMatrix::identity(2, 2));
    }

    #[test]
    fn projected_gram_matches_dense_projector() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y = random_matrix(&mut rng, 4, 6);
        let u = random_matrix(&mut rng, 2, 6);
        // oracle: explicit projector with an exact inverse
        let uu_inv = (&u * u.transpose()).try_inverse().unwrap();
        let pi = DMatrix::<f64>::identity(6, 6) - u.transpose() * uu_inv * &u;
        let oracle = &y * &pi * y.transpose();
        let h = HankelPair { y, u, depth: 2, output_dim: 2, input_dim: 1, record_id: 0 };
        let xi = projected_gram(&h).unwrap();
        assert!((&xi - &oracle).norm() < 1e-10);
        assert_eq!(xi, xi.transpose());
    }

    #[test]
    fn projector_is_idempotent_and_annihilates_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_matrix(&mut rng, 3, 9);
        let pi = dense_projector(&u).unwrap();
        assert!(relative_frobenius(&(&pi * &pi), &pi) < 1e-9);
        assert!((&u * &pi).norm() < 1e-9);
        let mix = random_matrix(&mut rng, 4, 3);
        let h = HankelPair { y: &mix * &u, u, depth: 1, output_dim: 4, input_dim: 3, record_id: 0 };
        let xi = projected_gram(&h).unwrap();
        let scale = (&h.y * h.y.transpose()).norm();
        assert!(xi.norm() / scale < 1e-8);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rec = DataRecord::new(3, random_matrix(&mut rng, 1, 10), random_matrix(&mut rng, 2, 10)).unwrap();
        let path = dir.path().join("record_3.csv");
        rec.write_csv(&path).unwrap();
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("t,u_1,y_1,y_2\n"));
        assert_eq!(DataRecord::read_csv(&path, 3).unwrap(), rec);
    }
}
