//! Rollout evaluation, RMSE ensembles, the RBF-EDMD baseline and report files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::gating::OnlineSession;
use crate::gplift::GpLifter;
use crate::hankel::DataRecord;
use crate::io::fmt_f64;
use crate::linalg::{condition_number, lstsq};
use crate::realize::StateSpaceModel;
use crate::simulate::{derive_seed, integrate, IcRegion, InputLaw, VectorField};

/// Outputs beyond this magnitude flag a rollout as diverged.
pub const DIVERGENCE_BOUND: f64 = 1e6;

/// Anything that predicts an output trajectory from a raw initial state.
pub trait Predictor: Sync {
    fn name(&self) -> &str;
    fn output_dim(&self) -> usize;
    /// Outputs `y_0 … y_{T−1}` (`p × T`) under `inputs` (`m × ≥T`).
    fn predict(&self, x0: &DVector<f64>, inputs: &DMatrix<f64>, horizon: usize) -> DMatrix<f64>;
}

/// Identified lifted model with a GP lifting of the initial state.
pub struct KoopmanPredictor {
    pub name: String,
    pub model: StateSpaceModel,
    pub lifter: GpLifter,
}

impl Predictor for KoopmanPredictor {
    fn name(&self) -> &str {
        &self.name
    }
    fn output_dim(&self) -> usize {
        self.model.output_dim()
    }
    fn predict(&self, x0: &DVector<f64>, inputs: &DMatrix<f64>, horizon: usize) -> DMatrix<f64> {
        self.model.simulate(&self.lifter.posterior_mean(x0), inputs, horizon)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub predicted: DMatrix<f64>,
    pub truth: DMatrix<f64>,
    /// `|predicted − truth|` per channel and step.
    pub per_step_error: DMatrix<f64>,
    pub diverged: bool,
}

/// Rolls `predictor` out from `x0` against the true system driven by the
/// same inputs. Outputs are taken to be the full state.
pub fn rollout<F: VectorField + ?Sized>(
    predictor: &dyn Predictor,
    system: &F,
    x0: &DVector<f64>,
    inputs: &DMatrix<f64>,
    dt: f64,
    horizon: usize,
) -> Result<RolloutResult> {
    if horizon == 0 {
        return Err(Error::InvalidConfig("rollout horizon must be at least 1".into()));
    }
    if inputs.ncols() < horizon {
        return Err(Error::DimensionMismatch(format!("{} input samples for horizon {horizon}", inputs.ncols())));
    }
    let truth = integrate(system, x0.as_slice(), &inputs.columns(0, horizon).into_owned(), dt)?;
    Ok(compare(predictor.predict(x0, inputs, horizon), truth))
}

fn compare(predicted: DMatrix<f64>, truth: DMatrix<f64>) -> RolloutResult {
    let diverged = predicted.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_BOUND);
    let per_step_error = (&predicted - &truth).abs();
    RolloutResult { predicted, truth, per_step_error, diverged }
}

/// Per-step RMSE of several models over a shared initial-condition ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct RmseTable {
    pub names: Vec<String>,
    /// One `p × T` matrix per model.
    pub rmse: Vec<DMatrix<f64>>,
    /// Rollouts excluded from a model's RMSE because they diverged.
    pub diverged: Vec<usize>,
    pub n_ic: usize,
}

impl RmseTable {
    /// Horizon-averaged RMSE per output channel of model `k`.
    pub fn horizon_mean(&self, k: usize) -> Vec<f64> {
        self.rmse[k].row_iter().map(|r| r.mean()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// CSV `t,<model>_y1,…` with one row per step.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let mut header = vec!["t".to_string()];
        for (name, m) in self.names.iter().zip(&self.rmse) {
            header.extend((1..=m.nrows()).map(|c| format!("{name}_y{c}")));
        }
        writeln!(w, "{}", header.join(","))?;
        let horizon = self.rmse.first().map_or(0, |m| m.ncols());
        for t in 0..horizon {
            let mut row = vec![t.to_string()];
            for m in &self.rmse {
                row.extend(m.column(t).iter().map(|&v| fmt_f64(v)));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> Value {
        let models: Vec<Value> = self
            .names
            .iter()
            .enumerate()
            .map(|(k, n)| json!({ "name": n, "horizon_mean_rmse": self.horizon_mean(k), "diverged": self.diverged[k] }))
            .collect();
        json!({ "n_ic": self.n_ic, "horizon": self.rmse.first().map_or(0, |m| m.ncols()), "models": models })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub ic_region: IcRegion,
    pub input_law: InputLaw,
    pub input_dim: usize,
    pub n_ic: usize,
    pub horizon: usize,
    pub dt: f64,
    pub seed: u64,
}

/// Per-step, per-channel RMSE of every predictor over `spec.n_ic` shared
/// initial conditions and input sequences.
pub fn rmse_ensemble<F: VectorField + ?Sized>(
    predictors: &[&dyn Predictor],
    system: &F,
    spec: &EnsembleSpec,
) -> Result<RmseTable> {
    if spec.n_ic == 0 {
        return Err(Error::InvalidConfig("ensemble needs at least one initial condition".into()));
    }
    let one = |i: usize| -> Result<Vec<RolloutResult>> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, i as u64));
        let x0 = DVector::from_vec(spec.ic_region.sample(&mut rng));
        let inputs = spec.input_law.sample(&mut rng, spec.input_dim, spec.horizon);
        let truth = integrate(system, x0.as_slice(), &inputs, spec.dt)?;
        Ok(predictors.iter().map(|p| compare(p.predict(&x0, &inputs, spec.horizon), truth.clone())).collect())
    };
    #[cfg(feature = "parallel")]
    let runs = {
        use rayon::prelude::*;
        (0..spec.n_ic).into_par_iter().map(one).collect::<Result<Vec<_>>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let runs = (0..spec.n_ic).map(one).collect::<Result<Vec<_>>>()?;

    let mut rmse = Vec::with_capacity(predictors.len());
    let mut diverged = Vec::with_capacity(predictors.len());
    for (k, p) in predictors.iter().enumerate() {
        let mut sq = DMatrix::zeros(p.output_dim(), spec.horizon);
        let mut used = 0usize;
        for run in &runs {
            if run[k].diverged {
                continue;
            }
            sq += run[k].per_step_error.map(|e| e * e);
            used += 1;
        }
        let scale = if used == 0 { f64::NAN } else { 1.0 / used as f64 };
        rmse.push(sq.map(|v| (v * scale).sqrt()));
        diverged.push(spec.n_ic - used);
    }
    Ok(RmseTable { names: predictors.iter().map(|p| p.name().to_string()).collect(), rmse, diverged, n_ic: spec.n_ic })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdmdOptions {
    /// Number of RBF centers; 0 gives the identity dictionary (DMDc).
    pub centers: usize,
    pub ridge: f64,
    /// Upper bound on the states fed to k-means (strided subsample).
    pub kmeans_points: usize,
    pub seed: u64,
}

impl EdmdOptions {
    pub fn with_centers(centers: usize) -> Self {
        Self { centers, ridge: 1e-8, kmeans_points: 20_000, seed: 0 }
    }
}

/// EDMD with control over `ψ(x) = [x; exp(−‖x − c_k‖² / 2σ²)]`.
#[derive(Debug, Clone)]
pub struct EdmdBaseline {
    pub name: String,
    pub centers: DMatrix<f64>,
    pub width: f64,
    pub k: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// Condition number of the regularized normal equations.
    pub condition: f64,
}

impl EdmdBaseline {
    pub fn lifted_dim(&self) -> usize {
        self.k.nrows()
    }

    pub fn lift(&self, x: &[f64]) -> DVector<f64> {
        lift(x, &self.centers, self.width)
    }

    pub fn is_ill_conditioned(&self) -> bool {
        !(self.condition <= 1e12)
    }
}

fn lift(x: &[f64], centers: &DMatrix<f64>, width: f64) -> DVector<f64> {
    let d = x.len();
    let mut psi = DVector::zeros(d + centers.ncols());
    psi.rows_mut(0, d).copy_from_slice(x);
    let inv = 1.0 / (2.0 * width * width);
    for k in 0..centers.ncols() {
        let s: f64 = (0..d).map(|i| (x[i] - centers[(i, k)]).powi(2)).sum();
        psi[d + k] = (-s * inv).exp();
    }
    psi
}

impl Predictor for EdmdBaseline {
    fn name(&self) -> &str {
        &self.name
    }
    fn output_dim(&self) -> usize {
        self.c.nrows()
    }
    fn predict(&self, x0: &DVector<f64>, inputs: &DMatrix<f64>, horizon: usize) -> DMatrix<f64> {
        let mut psi = self.lift(x0.as_slice());
        let mut ys = DMatrix::zeros(self.c.nrows(), horizon);
        for t in 0..horizon {
            ys.set_column(t, &(&self.c * &psi));
            psi = if self.b.ncols() > 0 { &self.k * &psi + &self.b * inputs.column(t) } else { &self.k * &psi };
        }
        ys
    }
}

/// Lloyd k-means with k-means++ seeding over the columns of `points`.
pub fn kmeans(points: &DMatrix<f64>, k: usize, seed: u64, max_iter: usize) -> DMatrix<f64> {
    let (d, n) = points.shape();
    let k = k.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist2 = |j: usize, c: &DMatrix<f64>, q: usize| (points.column(j) - c.column(q)).norm_squared();
    let mut centers = DMatrix::zeros(d, k);
    if k == 0 {
        return centers;
    }
    centers.set_column(0, &points.column(rng.random_range(0..n)));
    let mut nearest: Vec<f64> = (0..n).map(|j| dist2(j, &centers, 0)).collect();
    for q in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            nearest.iter().position(|&w| {
                target -= w;
                target < 0.0
            }).unwrap_or(n - 1)
        } else {
            rng.random_range(0..n)
        };
        centers.set_column(q, &points.column(pick));
        for j in 0..n {
            nearest[j] = nearest[j].min(dist2(j, &centers, q));
        }
    }
    let mut assign = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for j in 0..n {
            let best = (0..k).min_by(|&a, &b| dist2(j, &centers, a).total_cmp(&dist2(j, &centers, b))).unwrap_or(0);
            if assign[j] != best {
                assign[j] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = DMatrix::zeros(d, k);
        let mut counts = vec![0usize; k];
        for j in 0..n {
            let mut col = sums.column_mut(assign[j]);
            col += points.column(j);
            counts[assign[j]] += 1;
        }
        for q in 0..k {
            if counts[q] > 0 {
                centers.set_column(q, &(sums.column(q) / counts[q] as f64));
            }
        }
    }
    centers
}

fn median_pairwise_distance(centers: &DMatrix<f64>) -> f64 {
    let k = centers.ncols();
    let mut d: Vec<f64> = Vec::with_capacity(k * k.saturating_sub(1) / 2);
    for a in 0..k {
        for b in a + 1..k {
            d.push((centers.column(a) - centers.column(b)).norm());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let med = if d.len() % 2 == 0 { 0.5 * (d[mid - 1] + d[mid]) } else { d[mid] };
    if med > 0.0 { med } else { 1.0 }
}

/// Fits the baseline on consecutive state pairs of every record (outputs are
/// taken to be the state).
pub fn fit_edmd(records: &[DataRecord], opts: &EdmdOptions) -> Result<EdmdBaseline> {
    let first = records.first().ok_or(Error::EmptyArchive)?;
    let (d, m) = (first.output_dim(), first.input_dim());
    let snapshots: usize = records.iter().map(|r| r.len() - 1).sum();
    if snapshots < 2 {
        return Err(Error::DegenerateTraining("EDMD needs at least two snapshot pairs".into()));
    }
    let total_states: usize = records.iter().map(DataRecord::len).sum();
    let stride = total_states.div_ceil(opts.kmeans_points.max(1)).max(1);
    let sample: Vec<usize> = (0..total_states).step_by(stride).collect();
    let mut pts = DMatrix::zeros(d, sample.len());
    {
        let (mut rec, mut offset) = (0usize, 0usize);
        for (col, &flat) in sample.iter().enumerate() {
            while flat >= offset + records[rec].len() {
                offset += records[rec].len();
                rec += 1;
            }
            pts.set_column(col, &records[rec].outputs().column(flat - offset));
        }
    }
    let centers = kmeans(&pts, opts.centers, opts.seed, 100);
    let width = median_pairwise_distance(&centers);
    let n_psi = d + centers.ncols();
    let mut gram = DMatrix::<f64>::zeros(n_psi + m, n_psi + m);
    let mut cross = DMatrix::<f64>::zeros(n_psi, n_psi + m);
    let mut phi = DVector::zeros(n_psi + m);
    for r in records {
        if r.output_dim() != d || r.input_dim() != m {
            return Err(Error::DimensionMismatch(format!("record {} has mismatched dimensions", r.id)));
        }
        let mut psi = lift(r.outputs().column(0).as_slice(), &centers, width);
        for t in 0..r.len() - 1 {
            let next = lift(r.outputs().column(t + 1).as_slice(), &centers, width);
            phi.rows_mut(0, n_psi).copy_from(&psi);
            phi.rows_mut(n_psi, m).copy_from(&r.inputs().column(t));
            gram.ger(1.0, &phi, &phi, 1.0);
            cross.ger(1.0, &next, &phi, 1.0);
            psi = next;
        }
    }
    let n = snapshots as f64;
    gram /= n;
    cross /= n;
    for i in 0..n_psi + m {
        gram[(i, i)] += opts.ridge;
    }
    let condition = condition_number(&gram);
    // [K B] gram = cross, gram symmetric
    let (sol_t, _) = lstsq(&gram, &cross.transpose(), 1e-15);
    let kb = sol_t.transpose();
    let mut c = DMatrix::zeros(d, n_psi);
    c.view_mut((0, 0), (d, d)).fill_with_identity();
    Ok(EdmdBaseline {
        name: format!("EDMD-{n_psi}"),
        centers,
        width,
        k: kb.columns(0, n_psi).into_owned(),
        b: kb.columns(n_psi, m).into_owned(),
        c,
        condition,
    })
}

/// Writes the report bundle for a finished session into `out_dir`:
/// decision log, eigenvalue and singular-value series, distance to the
/// reference subspace, the given RMSE tables and `summary.json`.
pub fn make_report(session: &OnlineSession, tables: &[(&str, &RmseTable)], extra: Value, out_dir: &Path) -> Result<Value> {
    if session.accepted() == 0 {
        return Err(Error::EmptyArchive);
    }
    std::fs::create_dir_all(out_dir)?;
    session.write_decisions_csv(&out_dir.join("decisions.csv"))?;
    let log = session.log();

    let n_eig = log.iter().map(|e| e.eigenvalues.len()).max().unwrap_or(0);
    let mut w = BufWriter::new(File::create(out_dir.join("eigenvalues.csv"))?);
    let mut header = vec!["i".to_string()];
    for j in 1..=n_eig {
        header.push(format!("re_{j}"));
        header.push(format!("im_{j}"));
    }
    writeln!(w, "{}", header.join(","))?;
    for e in log {
        let mut row = vec![e.index.to_string()];
        for j in 0..n_eig {
            match e.eigenvalues.get(j) {
                Some(z) => row.extend([fmt_f64(z[0]), fmt_f64(z[1])]),
                None => row.extend([String::new(), String::new()]),
            }
        }
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;

    let n_sig = log.iter().map(|e| e.sigmas.len()).max().unwrap_or(0);
    let mut w = BufWriter::new(File::create(out_dir.join("singular_values.csv"))?);
    let mut header = vec!["i".to_string(), "r".into()];
    header.extend((1..=n_sig).map(|j| format!("sigma_{j}")));
    writeln!(w, "{}", header.join(","))?;
    for e in log {
        let mut row = vec![e.index.to_string(), e.order.to_string()];
        row.extend((0..n_sig).map(|j| e.sigmas.get(j).map(|&v| fmt_f64(v)).unwrap_or_default()));
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(out_dir.join("distance_to_truth.csv"))?);
    writeln!(w, "i,distance")?;
    for e in log {
        writeln!(w, "{},{}", e.index, e.distance_to_reference.map(fmt_f64).unwrap_or_default())?;
    }
    w.flush()?;

    for (file, table) in tables {
        table.write_csv(&out_dir.join(file))?;
    }

    let errors: Vec<Value> = log
        .iter()
        .filter_map(|e| e.error.as_ref().map(|msg| json!({ "i": e.index, "record": e.record_id, "error": msg })))
        .collect();
    let summary = json!({
        "streamed": session.streamed(),
        "accepted": session.accepted(),
        "acceptance_rate": session.accepted() as f64 / session.streamed().max(1) as f64,
        "final_order": session.order(),
        "order_trajectory": log.iter().map(|e| e.order).collect::<Vec<_>>(),
        "errors": errors,
        "rmse": tables.iter().map(|(f, t)| json!({ "file": f, "table": t.summary() })).collect::<Vec<_>>(),
        "extra": extra,
    });
    std::fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gating::GateConfig;
    use crate::simulate::{random_lti, stream_datasets, Duffing, SimConfig};

    /// Linear vector field `ẋ = Ax` with full-state outputs.
    struct Linear(DMatrix<f64>);
    impl VectorField for Linear {
        fn state_dim(&self) -> usize {
            self.0.nrows()
        }
        fn input_dim(&self) -> usize {
            0
        }
        fn eval(&self, x: &[f64], _u: &[f64], dx: &mut [f64]) {
            let y = &self.0 * DVector::from_column_slice(x);
            dx.copy_from_slice(y.as_slice());
        }
    }

    struct Exact(StateSpaceModel);
    impl Predictor for Exact {
        fn name(&self) -> &str {
            "exact"
        }
        fn output_dim(&self) -> usize {
            self.0.output_dim()
        }
        fn predict(&self, x0: &DVector<f64>, inputs: &DMatrix<f64>, horizon: usize) -> DMatrix<f64> {
            self.0.simulate(x0, inputs, horizon)
        }
    }

    fn rk4_matrix(a: &DMatrix<f64>, dt: f64) -> DMatrix<f64> {
        let i = DMatrix::identity(a.nrows(), a.nrows());
        let ah = a * dt;
        let a2 = &ah * &ah;
        let a3 = &a2 * &ah;
        let a4 = &a3 * &ah;
        i + &ah + a2 / 2.0 + a3 / 6.0 + a4 / 24.0
    }

    #[test]
    fn exact_model_has_zero_error() {
        let a = DMatrix::from_row_slice(2, 2, &[-0.2, 1.0, -1.0, -0.2]);
        let model = StateSpaceModel::new(rk4_matrix(&a, 0.1), DMatrix::zeros(2, 0), DMatrix::identity(2, 2), DMatrix::zeros(2, 0), 0).unwrap();
        let res = rollout(&Exact(model), &Linear(a), &DVector::from_vec(vec![1.0, 0.5]), &DMatrix::zeros(0, 50), 0.1, 50).unwrap();
        assert!(res.per_step_error.max() < 1e-12);
        assert!(!res.diverged);
    }

    #[test]
    fn divergence_is_flagged() {
        let model = StateSpaceModel::new(DMatrix::from_element(1, 1, 10.0), DMatrix::zeros(1, 0), DMatrix::identity(1, 1), DMatrix::zeros(1, 0), 0).unwrap();
        let res = rollout(&Exact(model), &Linear(DMatrix::zeros(1, 1)), &DVector::from_vec(vec![1.0]), &DMatrix::zeros(0, 10), 0.1, 10).unwrap();
        assert!(res.diverged);
    }

    #[test]
    fn lifted_rollout_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = random_lti(&mut rng, 4, 2, 1);
        let z0 = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        let u = DMatrix::zeros(1, 30);
        let y = model.simulate(&z0, &u, 30);
        let y3 = model.simulate(&(&z0 * 3.0), &u, 30);
        assert!((y * 3.0 - y3).abs().max() < 1e-12);
    }

    #[test]
    fn ensemble_single_and_identical_models() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let m1 = StateSpaceModel::new(DMatrix::identity(2, 2), DMatrix::zeros(2, 0), DMatrix::identity(2, 2), DMatrix::zeros(2, 0), 0).unwrap();
        let (p1, p2) = (Exact(m1.clone()), Exact(m1));
        let spec = EnsembleSpec {
            ic_region: IcRegion::unit_box(2),
            input_law: InputLaw::None,
            input_dim: 0,
            n_ic: 1,
            horizon: 20,
            dt: 0.1,
            seed: 3,
        };
        let table = rmse_ensemble(&[&p1, &p2], &Linear(a.clone()), &spec).unwrap();
        assert_eq!(table.rmse[0], table.rmse[1]);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(3, 0));
        let x0 = DVector::from_vec(spec.ic_region.sample(&mut rng));
        let single = rollout(&p1, &Linear(a), &x0, &DMatrix::zeros(0, 20), 0.1, 20).unwrap();
        assert!((&table.rmse[0] - single.per_step_error).abs().max() < 1e-15);
        let again = rmse_ensemble(&[&p1], &Linear(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])), &spec).unwrap();
        assert_eq!(again.rmse[0], table.rmse[0]);
    }

    #[test]
    fn edmd_identity_dictionary_recovers_lti() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = random_lti(&mut rng, 3, 3, 2);
        let truth = StateSpaceModel { c: DMatrix::identity(3, 3), d: DMatrix::zeros(3, 2), ..truth };
        let records: Vec<DataRecord> = (0..5)
            .map(|i| {
                let u = DMatrix::from_fn(2, 40, |_, _| rng.random_range(-1.0..1.0));
                let z0 = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
                DataRecord::new(i, u.clone(), truth.simulate(&z0, &u, 40)).unwrap()
            })
            .collect();
        let fit = fit_edmd(&records, &EdmdOptions { ridge: 0.0, ..EdmdOptions::with_centers(0) }).unwrap();
        assert_eq!(fit.lifted_dim(), 3);
        assert!((&fit.k - &truth.k).abs().max() < 1e-8);
        assert!((&fit.b - &truth.b).abs().max() < 1e-8);
        let x0 = DVector::from_vec(vec![0.2, -0.4, 0.1]);
        let u = DMatrix::from_fn(2, 10, |_, _| rng.random_range(-1.0..1.0));
        assert!((fit.predict(&x0, &u, 10) - truth.simulate(&x0, &u, 10)).abs().max() < 1e-8);
    }

    #[test]
    fn edmd_rbf_dictionary_on_duffing() {
        let mut cfg = SimConfig::duffing();
        cfg.steps = 200;
        let recs = stream_datasets(&cfg, 20).unwrap();
        let fit = fit_edmd(&recs, &EdmdOptions::with_centers(25)).unwrap();
        assert_eq!(fit.lifted_dim(), 27);
        assert_eq!(fit.name, "EDMD-27");
        assert!(fit.width > 0.0 && fit.condition.is_finite());
        let spec = EnsembleSpec {
            ic_region: IcRegion::SingleWell,
            input_law: InputLaw::Uniform { lo: -0.1, hi: 0.1 },
            input_dim: 1,
            n_ic: 5,
            horizon: 20,
            dt: 0.01,
            seed: 1,
        };
        let table = rmse_ensemble(&[&fit], &Duffing::default(), &spec).unwrap();
        assert!(table.horizon_mean(0).iter().all(|v| v.is_finite() && *v < 0.5));
    }

    #[test]
    fn kmeans_separates_clusters() {
        let mut pts = DMatrix::zeros(2, 40);
        for j in 0..40 {
            let base = if j < 20 { -5.0 } else { 5.0 };
            pts[(0, j)] = base + 0.01 * j as f64;
        }
        let c = kmeans(&pts, 2, 0, 50);
        let mut xs = vec![c[(0, 0)], c[(0, 1)]];
        xs.sort_by(f64::total_cmp);
        assert!((xs[0] + 5.0 - 0.095).abs() < 1e-9 && (xs[1] - 5.0 - 0.295).abs() < 1e-9);
    }

    #[test]
    fn report_files() {
        let dir = tempfile::tempdir().unwrap();
        let empty = OnlineSession::new(GateConfig::new(1e-3, 10)).unwrap();
        assert!(matches!(make_report(&empty, &[], Value::Null, dir.path()), Err(Error::EmptyArchive)));
        let recs = stream_datasets(&SimConfig::example1(), 20).unwrap();
        let mut s = OnlineSession::new(GateConfig { r_max: Some(5), track_eigenvalues: true, ..GateConfig::new(1e-3, 10) })
            .unwrap()
            .with_reference(crate::subspace::Subspace::from_span(&crate::simulate::Example1::default().true_observability(0.1, 10)));
        s.run(&recs);
        let summary = make_report(&s, &[], json!({ "preset": "example1" }), dir.path()).unwrap();
        for f in ["decisions.csv", "eigenvalues.csv", "singular_values.csv", "distance_to_truth.csv", "summary.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        assert_eq!(summary["streamed"], 20);
        let dist = std::fs::read_to_string(dir.path().join("distance_to_truth.csv")).unwrap();
        assert_eq!(dist.lines().count(), 21);
    }
}
