//! Ground-truth simulation: RK4 with zero-order-hold inputs, the two
//! benchmark systems, random LTI models and seeded dataset streams.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hankel::DataRecord;
use crate::realize::StateSpaceModel;

/// Continuous-time vector field `ẋ = f(x, u)`.
pub trait VectorField: Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn eval(&self, x: &[f64], u: &[f64], dx: &mut [f64]);
}

/// One classical RK4 step with `u` held constant over the step.
pub fn rk4_step<F: VectorField + ?Sized>(f: &F, x: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>> {
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    f.eval(x, u, &mut k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k1[i];
    }
    f.eval(&tmp, u, &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * dt * k2[i];
    }
    f.eval(&tmp, u, &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + dt * k3[i];
    }
    f.eval(&tmp, u, &mut k4);
    let next: Vec<f64> = (0..n)
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(Error::NonFinite)
    }
}

/// Integrates `steps` steps from `x0`; `inputs` is `m × (steps + 1)` (the
/// last column is recorded but never applied). Returns `d × (steps + 1)`.
pub fn integrate<F: VectorField + ?Sized>(f: &F, x0: &[f64], inputs: &DMatrix<f64>, dt: f64) -> Result<DMatrix<f64>> {
    let len = inputs.ncols();
    let d = x0.len();
    let mut states = DMatrix::zeros(d, len);
    let mut x = x0.to_vec();
    let mut u = vec![0.0; inputs.nrows()];
    for t in 0..len {
        states.column_mut(t).copy_from_slice(&x);
        if t + 1 < len {
            u.iter_mut().zip(inputs.column(t).iter()).for_each(|(a, &b)| *a = b);
            x = rk4_step(f, &x, &u, dt)?;
        }
    }
    Ok(states)
}

/// `ẋ₁ = μx₁`, `ẋ₂ = λ(x₂ − x₁²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Example1 {
    pub mu: f64,
    pub lambda: f64,
}

impl Default for Example1 {
    fn default() -> Self {
        Self { mu: -0.3, lambda: -0.8 }
    }
}

impl VectorField for Example1 {
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        0
    }
    fn eval(&self, x: &[f64], _u: &[f64], dx: &mut [f64]) {
        dx[0] = self.mu * x[0];
        dx[1] = self.lambda * (x[1] - x[0] * x[0]);
    }
}

impl Example1 {
    /// Exact discrete Koopman matrix on `(x₁, x₂, x₁²)` for step `dt`.
    pub fn koopman_matrix(&self, dt: f64) -> DMatrix<f64> {
        let (mu, la) = (self.mu, self.lambda);
        let (e1, e2, e3) = ((mu * dt).exp(), (la * dt).exp(), (2.0 * mu * dt).exp());
        let coupling = if (2.0 * mu - la).abs() < 1e-12 {
            -la * dt * e2
        } else {
            -la * (e3 - e2) / (2.0 * mu - la)
        };
        DMatrix::from_row_slice(3, 3, &[e1, 0.0, 0.0, 0.0, e2, coupling, 0.0, 0.0, e3])
    }

    /// Extended observability `[C; CA; …; CA^{l−1}]` of the exact Koopman model with `y = (x₁, x₂)`.
    pub fn true_observability(&self, dt: f64, depth: usize) -> DMatrix<f64> {
        let c = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        crate::realize::observability_matrix(&c, &self.koopman_matrix(dt), depth)
    }
}

/// Exact discrete Koopman matrix of the default Example-1 system.
pub fn true_koopman_example1(dt: f64) -> DMatrix<f64> {
    Example1::default().koopman_matrix(dt)
}

/// Forced Duffing oscillator `ẋ₁ = x₂`, `ẋ₂ = αx₁ + βx₁³ + u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Duffing {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for Duffing {
    fn default() -> Self {
        Self { alpha: 1.0, beta: -1.0 }
    }
}

impl VectorField for Duffing {
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        dx[0] = x[1];
        dx[1] = self.alpha * x[0] + self.beta * x[0] * x[0] * x[0] + u.first().copied().unwrap_or(0.0);
    }
}

impl Duffing {
    /// Unforced energy; zero at the saddle.
    pub fn energy(&self, x: &[f64]) -> f64 {
        0.5 * x[1] * x[1] - 0.5 * self.alpha * x[0] * x[0] - 0.25 * self.beta * x[0].powi(4)
    }
}

/// Whether `x₁` changes sign along a trajectory (`d × T`).
pub fn crosses_saddle(states: &DMatrix<f64>) -> bool {
    let row = states.row(0);
    row.iter().zip(row.iter().skip(1)).any(|(a, b)| a * b < 0.0)
}

pub fn simulate_example1(x0: [f64; 2], dt: f64, steps: usize) -> Result<DataRecord> {
    let states = integrate(&Example1::default(), &x0, &DMatrix::zeros(0, steps + 1), dt)?;
    DataRecord::new(0, DMatrix::zeros(0, steps + 1), states)
}

pub fn simulate_duffing(x0: [f64; 2], dt: f64, steps: usize, law: InputLaw, seed: u64) -> Result<DataRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = law.sample(&mut rng, 1, steps + 1);
    let states = integrate(&Duffing::default(), &x0, &inputs, dt)?;
    DataRecord::new(0, inputs, states)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Example1,
    Duffing,
    /// Random stable observable LTI drawn from the seed (oracle data).
    Lti { order: usize, outputs: usize, inputs: usize },
}

impl SystemKind {
    pub fn input_dim(&self) -> usize {
        match self {
            SystemKind::Example1 => 0,
            SystemKind::Duffing => 1,
            SystemKind::Lti { inputs, .. } => *inputs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IcRegion {
    /// Uniform on the axis-aligned box `[lo, hi]`.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Uniform on `(±1, 0) + [−0.25, 0.25]²`, well chosen with equal odds.
    SingleWell,
    /// Uniform on `[−1.5, 1.5] × [−1, 1]` conditioned on positive Duffing energy.
    DoubleWell,
}

impl IcRegion {
    pub fn unit_box(dim: usize) -> Self {
        IcRegion::Box { lo: vec![-1.0; dim], hi: vec![1.0; dim] }
    }

    pub fn label(&self) -> &'static str {
        match self {
            IcRegion::Box { .. } => "box",
            IcRegion::SingleWell => "single_well",
            IcRegion::DoubleWell => "double_well",
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            IcRegion::Box { lo, hi } => lo.iter().zip(hi).map(|(&a, &b)| if a < b { rng.random_range(a..b) } else { a }).collect(),
            IcRegion::SingleWell => {
                let well = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                vec![well + rng.random_range(-0.25..0.25), rng.random_range(-0.25..0.25)]
            }
            IcRegion::DoubleWell => {
                let duffing = Duffing::default();
                loop {
                    let x = vec![rng.random_range(-1.5..1.5), rng.random_range(-1.0..1.0)];
                    if duffing.energy(&x) > 0.0 {
                        return x;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputLaw {
    None,
    /// Equiprobable `±amplitude` per step.
    Bang { amplitude: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl InputLaw {
    pub fn sample<R: Rng>(&self, rng: &mut R, m: usize, len: usize) -> DMatrix<f64> {
        match *self {
            InputLaw::None => DMatrix::zeros(m, len),
            InputLaw::Bang { amplitude } => {
                DMatrix::from_fn(m, len, |_, _| if rng.random_bool(0.5) { amplitude } else { -amplitude })
            }
            InputLaw::Uniform { lo, hi } => DMatrix::from_fn(m, len, |_, _| rng.random_range(lo..hi)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub system: SystemKind,
    pub dt: f64,
    /// Time steps per record; records hold `steps + 1` samples.
    pub steps: usize,
    pub ic_region: IcRegion,
    /// Region used from record `switch_at + 1` on, if any.
    pub later_region: Option<IcRegion>,
    pub switch_at: usize,
    pub input_law: InputLaw,
    pub seed: u64,
}

impl SimConfig {
    pub fn example1() -> Self {
        Self {
            system: SystemKind::Example1,
            dt: 0.1,
            steps: 15,
            ic_region: IcRegion::unit_box(2),
            later_region: None,
            switch_at: 0,
            input_law: InputLaw::None,
            seed: 1,
        }
    }

    pub fn duffing() -> Self {
        Self {
            system: SystemKind::Duffing,
            dt: 0.01,
            steps: 800,
            ic_region: IcRegion::SingleWell,
            later_region: Some(IcRegion::DoubleWell),
            switch_at: 600,
            input_law: InputLaw::Bang { amplitude: 0.5 },
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if self.steps < 1 {
            return Err(Error::InvalidConfig("steps must be at least 1".into()));
        }
        if let IcRegion::Box { lo, hi } = &self.ic_region {
            if lo.len() != hi.len() || lo.iter().zip(hi).any(|(a, b)| !(a <= b)) {
                return Err(Error::InvalidConfig("malformed initial-condition box".into()));
            }
        }
        if let InputLaw::Uniform { lo, hi } = self.input_law {
            if !(lo < hi) {
                return Err(Error::InvalidConfig("uniform input law needs lo < hi".into()));
            }
        }
        Ok(())
    }

    /// Region of 1-based record `index`.
    pub fn region_for(&self, index: usize) -> &IcRegion {
        match &self.later_region {
            Some(later) if index > self.switch_at => later,
            _ => &self.ic_region,
        }
    }
}

/// SplitMix64 mix of the global seed with a record index.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random stable, observable LTI: eigenvalues with modulus in `[0.3, 0.9]`
/// (complex pairs allowed) in a random well-conditioned basis.
pub fn random_lti<R: Rng>(rng: &mut R, order: usize, outputs: usize, inputs: usize) -> StateSpaceModel {
    let mut blocks = DMatrix::zeros(order, order);
    let mut i = 0;
    while i < order {
        let rho = rng.random_range(0.3..0.9);
        if i + 1 < order && rng.random_bool(0.5) {
            let theta: f64 = rng.random_range(0.2..1.2);
            let (re, im) = (rho * theta.cos(), rho * theta.sin());
            blocks[(i, i)] = re;
            blocks[(i, i + 1)] = im;
            blocks[(i + 1, i)] = -im;
            blocks[(i + 1, i + 1)] = re;
            i += 2;
        } else {
            blocks[(i, i)] = if rng.random_bool(0.5) { rho } else { -rho };
            i += 1;
        }
    }
    let t = DMatrix::from_fn(order, order, |_, _| rng.random_range(-0.5..0.5)) + DMatrix::identity(order, order);
    let t_inv = t.clone().try_inverse().unwrap_or_else(|| DMatrix::identity(order, order));
    let k = &t * blocks * t_inv;
    let b = DMatrix::from_fn(order, inputs, |_, _| rng.random_range(-1.0..1.0));
    let c = DMatrix::from_fn(outputs, order, |_, _| rng.random_range(-1.0..1.0));
    let d = DMatrix::from_fn(outputs, inputs, |_, _| rng.random_range(-1.0..1.0));
    StateSpaceModel { k, b, c, d, depth: 0 }
}

/// Simulates an LTI model from a random lifted state; outputs are the record.
pub fn simulate_lti<R: Rng>(model: &StateSpaceModel, rng: &mut R, law: InputLaw, len: usize) -> Result<DataRecord> {
    let z0 = DVector::from_fn(model.order(), |_, _| rng.random_range(-1.0..1.0));
    let u = law.sample(rng, model.input_dim(), len);
    let y = model.simulate(&z0, &u, len);
    DataRecord::new(0, u, y)
}

/// Record `index` (1-based) of the stream defined by `config`.
pub fn generate_record(config: &SimConfig, index: usize) -> Result<DataRecord> {
    let seed = derive_seed(config.seed, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = config.steps + 1;
    let record = match config.system {
        SystemKind::Example1 => {
            let x0 = config.region_for(index).sample(&mut rng);
            let states = integrate(&Example1::default(), &x0, &DMatrix::zeros(0, len), config.dt)?;
            DataRecord::new(index, DMatrix::zeros(0, len), states)?
        }
        SystemKind::Duffing => {
            let x0 = config.region_for(index).sample(&mut rng);
            let inputs = config.input_law.sample(&mut rng, 1, len);
            let states = integrate(&Duffing::default(), &x0, &inputs, config.dt)?;
            DataRecord::new(index, inputs, states)?
        }
        SystemKind::Lti { order, outputs, inputs } => {
            let mut model_rng = ChaCha8Rng::seed_from_u64(config.seed);
            let model = random_lti(&mut model_rng, order, outputs, inputs);
            let rec = simulate_lti(&model, &mut rng, config.input_law, len)?;
            DataRecord::new(index, rec.inputs().clone(), rec.outputs().clone())?
        }
    };
    Ok(record)
}

/// The first `count` records of the stream, ids `1..=count`, in order.
pub fn stream_datasets(config: &SimConfig, count: usize) -> Result<Vec<DataRecord>> {
    config.validate()?;
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (1..=count).into_par_iter().map(|i| generate_record(config, i)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (1..=count).map(|i| generate_record(config, i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub seed: u64,
    pub regime: String,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: SimConfig,
    pub count: usize,
    pub records: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn path(&self, dir: &Path, entry: &ManifestEntry) -> PathBuf {
        dir.join(&entry.file)
    }
}

/// Writes `record_NNNN.csv` files plus `manifest.json` into `dir`.
pub fn write_dataset(dir: &Path, config: &SimConfig, records: &[DataRecord]) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(records.len());
    for rec in records {
        let file = format!("record_{:04}.csv", rec.id);
        rec.write_csv(&dir.join(&file))?;
        entries.push(ManifestEntry {
            id: rec.id,
            seed: derive_seed(config.seed, rec.id as u64),
            regime: config.region_for(rec.id).label().to_string(),
            file,
        });
    }
    let manifest = Manifest { config: config.clone(), count: records.len(), records: entries };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    Ok(serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?)
}

/// Records of a dataset directory in manifest order.
pub fn read_dataset(dir: &Path) -> Result<(Manifest, Vec<DataRecord>)> {
    let manifest = read_manifest(dir)?;
    let records = manifest
        .records
        .iter()
        .map(|e| DataRecord::read_csv(&manifest.path(dir, e), e.id))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, records))
}
