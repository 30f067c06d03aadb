//! Recovery of the lifted state-space quadruple `(K, B, C, D)` and of the
//! lifted initial conditions `Z₀` from an identified observability subspace.
//!
//! `C` is the first block row of `Γ_r`, `K` solves the shift-invariance
//! equation `Γ_↑ K = Γ_↓` in the least-squares sense, and `(B, D, Z₀)` solve
//! the column-wise problem `y = Γ z₀ + H(B, D) u` jointly. The joint problem
//! is separable: eliminating `z₀` leaves a least-squares problem in `(B, D)`
//! alone whose normal equations only involve `UUᵀ` and `YUᵀ`, so the archive
//! never has to be revisited to obtain `(B, D)`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hankel::HankelPair;
use crate::io::{fmt_f64, from_rows, to_rows};
use crate::linalg::{condition_number, lstsq, pinv};
use crate::rssid::SquaredDataState;
use crate::subspace::Subspace;

/// Lifted LTI model `z⁺ = Kz + Bu`, `y = Cz + Du`.
///
/// Autonomous models carry `r × 0` and `p × 0` input matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub k: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    /// Hankel depth `l` the model was identified with.
    pub depth: usize,
}

impl StateSpaceModel {
    pub fn new(k: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>, depth: usize) -> Result<Self> {
        let r = k.nrows();
        let (p, m) = (c.nrows(), b.ncols());
        if k.ncols() != r || b.nrows() != r || c.ncols() != r || d.shape() != (p, m) {
            return Err(Error::ShapeMismatch(format!(
                "inconsistent model shapes K {:?}, B {:?}, C {:?}, D {:?}",
                k.shape(),
                b.shape(),
                c.shape(),
                d.shape()
            )));
        }
        Ok(Self { k, b, c, d, depth })
    }

    pub fn order(&self) -> usize {
        self.k.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn eigenvalues(&self) -> Vec<Complex<f64>> {
        sorted_eigenvalues(&self.k)
    }

    /// `Γ_l = [C; CK; …; CK^{l−1}]`.
    pub fn observability(&self, depth: usize) -> DMatrix<f64> {
        observability_matrix(&self.c, &self.k, depth)
    }

    /// Impulse-response blocks `D, CB, CKB, …` (`count` of them).
    pub fn markov_parameters(&self, count: usize) -> Vec<DMatrix<f64>> {
        let mut out = Vec::with_capacity(count);
        if count == 0 {
            return out;
        }
        out.push(self.d.clone());
        let mut ck = self.c.clone();
        for _ in 1..count {
            out.push(&ck * &self.b);
            ck = &ck * &self.k;
        }
        out
    }

    /// Output sequence `y_0 … y_{T−1}` (`p × T`) from lifted state `z0`.
    ///
    /// `inputs` must have at least `T` columns when the model has inputs.
    pub fn simulate(&self, z0: &DVector<f64>, inputs: &DMatrix<f64>, horizon: usize) -> DMatrix<f64> {
        let m = self.input_dim();
        let mut z = z0.clone();
        let mut ys = DMatrix::zeros(self.output_dim(), horizon);
        for t in 0..horizon {
            let mut y = &self.c * &z;
            if m > 0 {
                let u = inputs.column(t);
                y += &self.d * u;
                z = &self.k * &z + &self.b * u;
            } else {
                z = &self.k * &z;
            }
            ys.set_column(t, &y);
        }
        ys
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDoc {
            order: self.order(),
            outputs: self.output_dim(),
            inputs: self.input_dim(),
            depth: self.depth,
            k: to_rows(&self.k),
            b: to_rows(&self.b),
            c: to_rows(&self.c),
            d: to_rows(&self.d),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(text)?;
        let (r, p, m) = (doc.order, doc.outputs, doc.inputs);
        Self::new(
            from_rows(&doc.k, r, r)?,
            from_rows(&doc.b, r, m)?,
            from_rows(&doc.c, p, r)?,
            from_rows(&doc.d, p, m)?,
            doc.depth,
        )
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    order: usize,
    outputs: usize,
    inputs: usize,
    depth: usize,
    k: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    d: Vec<Vec<f64>>,
}

/// Eigenvalues sorted by decreasing modulus (ties by argument).
pub fn sorted_eigenvalues(k: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let mut ev: Vec<Complex<f64>> = k.complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(a.im.total_cmp(&b.im)));
    ev
}

pub fn observability_matrix(c: &DMatrix<f64>, k: &DMatrix<f64>, depth: usize) -> DMatrix<f64> {
    let p = c.nrows();
    let mut gamma = DMatrix::zeros(depth * p, c.ncols());
    let mut block = c.clone();
    for j in 0..depth {
        gamma.rows_mut(j * p, p).copy_from(&block);
        block = &block * k;
    }
    gamma
}

/// Lower block-triangular Toeplitz matrix `H_l` (`(l·p) × (l·m)`): `D` on the
/// diagonal and `C K^{j−1} B` on the `j`-th block sub-diagonal.
pub fn build_toeplitz(model: &StateSpaceModel, depth: usize) -> DMatrix<f64> {
    let (p, m) = (model.output_dim(), model.input_dim());
    let markov = model.markov_parameters(depth);
    let mut h = DMatrix::zeros(depth * p, depth * m);
    if m == 0 {
        return h;
    }
    for i in 0..depth {
        for j in 0..=i {
            h.view_mut((i * p, j * m), (p, m)).copy_from(&markov[i - j]);
        }
    }
    h
}

/// Recovers `(C, K)` from the weighted basis `Γ_r = Q_r Σ_r^{1/2}`.
pub fn recover_ck(subspace: &Subspace, output_dim: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let gamma = subspace.gamma();
    let (lp, r) = gamma.shape();
    if output_dim == 0 || lp % output_dim != 0 {
        return Err(Error::DimensionMismatch(format!(
            "ambient dimension {lp} is not a multiple of output dimension {output_dim}"
        )));
    }
    let depth = lp / output_dim;
    if depth < 2 {
        return Err(Error::InvalidConfig("shift invariance needs Hankel depth ≥ 2".into()));
    }
    let c = gamma.rows(0, output_dim).into_owned();
    let upper = gamma.rows(0, lp - output_dim).into_owned();
    let lower = gamma.rows(output_dim, lp - output_dim).into_owned();
    let (k, rank) = lstsq(&upper, &lower, 1e-12);
    if rank < r {
        return Err(Error::RankDeficientShift { rank, order: r });
    }
    Ok((c, k))
}

/// Second moments `UUᵀ` and `YUᵀ` of a set of Hankel columns.
#[derive(Debug, Clone)]
pub struct CrossMoments {
    pub uu: DMatrix<f64>,
    pub yu: DMatrix<f64>,
}

impl CrossMoments {
    pub fn from_pairs(pairs: &[HankelPair]) -> Result<Self> {
        let first = pairs.first().ok_or(Error::EmptyArchive)?;
        let mut uu = DMatrix::zeros(first.u.nrows(), first.u.nrows());
        let mut yu = DMatrix::zeros(first.y.nrows(), first.u.nrows());
        for h in pairs {
            uu += &h.u * h.u.transpose();
            yu += &h.y * h.u.transpose();
        }
        Ok(Self { uu, yu })
    }

    /// Moments tracked by a recursive state (`None` for autonomous data).
    pub fn from_state(state: &SquaredDataState) -> Option<Self> {
        Some(Self { uu: state.uut.clone()?, yu: state.yut.clone()? })
    }
}

/// Estimated input maps and the conditioning of their normal equations.
#[derive(Debug, Clone)]
pub struct InputMaps {
    pub b: DMatrix<f64>,
    pub d: DMatrix<f64>,
    /// Condition number of the normal-equation matrix; above `1e12` the
    /// estimate is the minimum-norm solution of a near-singular problem.
    pub condition: f64,
}

impl InputMaps {
    pub fn is_ill_conditioned(&self) -> bool {
        !(self.condition <= 1e12)
    }

    /// Turns a poorly conditioned estimate into [`Error::IllConditioned`].
    pub fn ensure_well_conditioned(&self) -> Result<()> {
        if self.is_ill_conditioned() {
            Err(Error::IllConditioned { condition: self.condition })
        } else {
            Ok(())
        }
    }
}

/// Least-squares `(B, D)` given `(C, K)`, `Γ` and the input moments.
///
/// Minimizes `Σ_k ‖W (y_k − H(B,D) u_k)‖²` with `W = I − ΓΓ⁺`, which is the
/// joint problem in `(B, D, z₀)` after eliminating every `z₀`.
pub fn recover_bd(
    c: &DMatrix<f64>,
    k: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    depth: usize,
    moments: &CrossMoments,
) -> Result<InputMaps> {
    let (p, r) = c.shape();
    let lm = moments.uu.nrows();
    if depth == 0 || lm % depth != 0 {
        return Err(Error::DimensionMismatch(format!("input moments of size {lm} do not fit depth {depth}")));
    }
    let m = lm / depth;
    if m == 0 {
        return Ok(InputMaps { b: DMatrix::zeros(r, 0), d: DMatrix::zeros(p, 0), condition: 1.0 });
    }
    if moments.yu.shape() != (depth * p, lm) || gamma.nrows() != depth * p {
        return Err(Error::DimensionMismatch("output moments do not match (C, depth)".into()));
    }
    let gamma_pinv = pinv(gamma, 1e-12);
    // C K^q for q = 0..depth−2
    let mut ck = Vec::with_capacity(depth);
    ck.push(c.clone());
    for q in 1..depth.saturating_sub(1) {
        let next = &ck[q - 1] * k;
        ck.push(next);
    }
    let n_params = (r + p) * m;
    let basis: Vec<DMatrix<f64>> = (0..n_params).map(|a| toeplitz_basis(a, &ck, p, r, m, depth)).collect();
    let projected: Vec<DMatrix<f64>> = basis
        .iter()
        .map(|h| h - gamma * (&gamma_pinv * h))
        .collect();
    let mut normal = DMatrix::zeros(n_params, n_params);
    let mut rhs = DMatrix::zeros(n_params, 1);
    for a in 0..n_params {
        let wr = &projected[a] * &moments.uu;
        for b in a..n_params {
            let v = wr.dot(&basis[b]);
            normal[(a, b)] = v;
            normal[(b, a)] = v;
        }
        rhs[(a, 0)] = projected[a].dot(&moments.yu);
    }
    let condition = condition_number(&normal);
    let (theta, _) = lstsq(&normal, &rhs, 1e-13);
    let b = DMatrix::from_fn(r, m, |i, j| theta[(i * m + j, 0)]);
    let d = DMatrix::from_fn(p, m, |i, j| theta[(r * m + i * m + j, 0)]);
    Ok(InputMaps { b, d, condition })
}

/// `∂H/∂θ_a` for parameter `a` of `θ = [vec_row(B); vec_row(D)]`.
fn toeplitz_basis(a: usize, ck: &[DMatrix<f64>], p: usize, r: usize, m: usize, depth: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(depth * p, depth * m);
    if a < r * m {
        let (bi, bj) = (a / m, a % m);
        for i in 1..depth {
            for j in 0..i {
                let col = ck[i - 1 - j].column(bi);
                h.view_mut((i * p, j * m + bj), (p, 1)).copy_from(&col);
            }
        }
    } else {
        let a = a - r * m;
        let (di, dj) = (a / m, a % m);
        for i in 0..depth {
            h[(i * p + di, i * m + dj)] = 1.0;
        }
    }
    h
}

/// Lifted initial conditions of Hankel column trajectories paired with the
/// raw state at each column's first step.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedRealization {
    /// `r × N` lifted initial conditions.
    pub z0: DMatrix<f64>,
    /// `d × N` raw initial states.
    pub x0: DMatrix<f64>,
    /// `‖y − Γz₀ − Hu‖` per column.
    pub residuals: Vec<f64>,
}

impl LiftedRealization {
    pub fn len(&self) -> usize {
        self.z0.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// CSV with header `x_1..x_d,z_1..z_r`, one row per column trajectory.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let mut header: Vec<String> = (1..=self.x0.nrows()).map(|k| format!("x_{k}")).collect();
        header.extend((1..=self.z0.nrows()).map(|k| format!("z_{k}")));
        writeln!(w, "{}", header.join(","))?;
        for j in 0..self.len() {
            let row: Vec<String> = self.x0.column(j).iter().chain(self.z0.column(j).iter()).map(|&v| fmt_f64(v)).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let d = headers.iter().filter(|h| h.starts_with("x_")).count();
        let r = headers.iter().filter(|h| h.starts_with("z_")).count();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            rows.push(rec.iter().map(crate::io::parse_f64).collect::<Result<Vec<_>>>()?);
        }
        let n = rows.len();
        Ok(Self {
            x0: DMatrix::from_fn(d, n, |i, j| rows[j][i]),
            z0: DMatrix::from_fn(r, n, |i, j| rows[j][d + i]),
            residuals: vec![f64::NAN; n],
        })
    }
}

/// Solves `z₀ = Γ⁺(y − H u)` for the selected columns of `pairs`.
///
/// `columns` lists `(pair index, column index)`; `None` selects every column.
pub fn lift_columns(
    gamma: &DMatrix<f64>,
    toeplitz: &DMatrix<f64>,
    pairs: &[HankelPair],
    columns: Option<&[(usize, usize)]>,
) -> LiftedRealization {
    let all: Vec<(usize, usize)>;
    let selected = match columns {
        Some(c) => c,
        None => {
            all = pairs
                .iter()
                .enumerate()
                .flat_map(|(i, h)| (0..h.columns()).map(move |k| (i, k)))
                .collect();
            &all
        }
    };
    let r = gamma.ncols();
    let p = pairs.first().map_or(0, |h| h.output_dim);
    let gamma_pinv = pinv(gamma, 1e-12);
    let mut z0 = DMatrix::zeros(r, selected.len());
    let mut x0 = DMatrix::zeros(p, selected.len());
    let mut residuals = Vec::with_capacity(selected.len());
    for (j, &(i, k)) in selected.iter().enumerate() {
        let h = &pairs[i];
        let mut free = h.y.column(k).into_owned();
        if h.input_dim > 0 {
            free -= toeplitz * h.u.column(k);
        }
        let z = &gamma_pinv * &free;
        residuals.push((&free - gamma * &z).norm());
        z0.set_column(j, &z);
        x0.set_column(j, &h.y.column(k).rows(0, p));
    }
    LiftedRealization { z0, x0, residuals }
}

/// Full realization from a subspace and an archive of Hankel pairs: `(C, K)`,
/// then `(B, D)` from the archive's moments, then `Z₀` for every column.
pub fn recover_bd_z0(
    subspace: &Subspace,
    output_dim: usize,
    archive: &[HankelPair],
) -> Result<(StateSpaceModel, LiftedRealization, InputMaps)> {
    let first = archive.first().ok_or(Error::EmptyArchive)?;
    let (c, k) = recover_ck(subspace, output_dim)?;
    let gamma = subspace.gamma();
    let depth = first.depth;
    let maps = if first.input_dim > 0 {
        recover_bd(&c, &k, &gamma, depth, &CrossMoments::from_pairs(archive)?)?
    } else {
        InputMaps { b: DMatrix::zeros(k.nrows(), 0), d: DMatrix::zeros(output_dim, 0), condition: 1.0 }
    };
    let model = StateSpaceModel::new(k, maps.b.clone(), c, maps.d.clone(), depth)?;
    let h = build_toeplitz(&model, depth);
    let lifted = lift_columns(&gamma, &h, archive, None);
    Ok((model, lifted, maps))
}
