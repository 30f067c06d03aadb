//! Flat key-value run configuration and the shipped presets.

use serde::{Deserialize, Serialize};

use crate::bench::{EdmdOptions, EnsembleSpec};
use crate::error::{Error, Result};
use crate::gating::GateConfig;
use crate::gplift::GpOptions;
use crate::simulate::{IcRegion, InputLaw, SimConfig, SystemKind};

/// Everything a run needs. Missing keys take the `example1` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: String,
    /// `example1` or `duffing`.
    pub system: String,
    pub dt: f64,
    pub steps: usize,
    pub records: usize,
    /// `box`, `single_well` or `double_well`.
    pub ic_region: String,
    pub ic_lo: Vec<f64>,
    pub ic_hi: Vec<f64>,
    /// Region after `switch_at` records; empty for none.
    pub later_region: String,
    pub switch_at: usize,
    /// `none`, `bang` or `uniform`.
    pub input_law: String,
    pub input_amplitude: f64,
    pub input_lo: f64,
    pub input_hi: f64,

    pub epsilon: f64,
    pub depth: usize,
    pub order_tol: f64,
    /// 0 selects `l·p / 2`.
    pub r_max: usize,
    pub initial_batch: usize,
    pub checkpoint_every: usize,

    /// Archived columns used to train the GP lifter (0 = all).
    pub gp_subsample: usize,
    pub gp_restarts: usize,
    pub gp_max_iter: usize,

    /// Stream index after which a second model is finalized for comparison
    /// (0 = none).
    pub snapshot_at: usize,
    pub bench_n_ic: usize,
    pub bench_horizon: usize,
    pub bench_ic_lo: Vec<f64>,
    pub bench_ic_hi: Vec<f64>,
    pub bench_input_lo: f64,
    pub bench_input_hi: f64,
    pub edmd_centers: Vec<usize>,

    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: "example1".into(),
            system: "example1".into(),
            dt: 0.1,
            steps: 15,
            records: 100,
            ic_region: "box".into(),
            ic_lo: vec![-1.0, -1.0],
            ic_hi: vec![1.0, 1.0],
            later_region: String::new(),
            switch_at: 0,
            input_law: "none".into(),
            input_amplitude: 0.0,
            input_lo: 0.0,
            input_hi: 0.0,
            epsilon: 1e-3,
            depth: 10,
            order_tol: 1e-3,
            r_max: 5,
            initial_batch: 1,
            checkpoint_every: 100,
            gp_subsample: 300,
            gp_restarts: 5,
            gp_max_iter: 200,
            snapshot_at: 0,
            bench_n_ic: 100,
            bench_horizon: 50,
            bench_ic_lo: vec![-1.0, -1.0],
            bench_ic_hi: vec![1.0, 1.0],
            bench_input_lo: 0.0,
            bench_input_hi: 0.0,
            edmd_centers: Vec::new(),
            seed: 1,
        }
    }
}

pub const PRESETS: [&str; 3] = ["example1", "duffing", "duffing-small"];

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "example1" => Ok(Self::default()),
            "duffing" => Ok(Self {
                experiment: "duffing".into(),
                system: "duffing".into(),
                dt: 0.01,
                steps: 800,
                records: 900,
                ic_region: "single_well".into(),
                ic_lo: Vec::new(),
                ic_hi: Vec::new(),
                later_region: "double_well".into(),
                switch_at: 600,
                input_law: "bang".into(),
                input_amplitude: 0.5,
                epsilon: 0.01,
                depth: 200,
                order_tol: 3e-3,
                r_max: 0,
                snapshot_at: 600,
                bench_horizon: 250,
                bench_ic_lo: vec![-1.5, -1.5],
                bench_ic_hi: vec![1.5, 1.5],
                bench_input_lo: -0.1,
                bench_input_hi: 0.1,
                edmd_centers: vec![25, 100],
                ..Self::default()
            }),
            "duffing-small" => Ok(Self {
                experiment: "duffing-small".into(),
                steps: 200,
                records: 300,
                switch_at: 200,
                depth: 50,
                snapshot_at: 200,
                ..Self::preset("duffing")?
            }),
            other => Err(Error::InvalidConfig(format!("unknown preset '{other}' (known: {})", PRESETS.join(", ")))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.sim_config()?.validate()?;
        self.gate_config().validate()?;
        if self.records == 0 {
            return Err(Error::InvalidConfig("records must be at least 1".into()));
        }
        if self.steps < self.depth {
            return Err(Error::InvalidConfig(format!("steps {} shorter than depth {}", self.steps, self.depth)));
        }
        if self.bench_horizon == 0 || self.bench_n_ic == 0 {
            return Err(Error::InvalidConfig("bench needs a positive horizon and IC count".into()));
        }
        if self.bench_ic_lo.len() != 2 || self.bench_ic_hi.len() != 2 {
            return Err(Error::InvalidConfig("bench IC box must be two-dimensional".into()));
        }
        Ok(())
    }

    fn system_kind(&self) -> Result<SystemKind> {
        match self.system.as_str() {
            "example1" => Ok(SystemKind::Example1),
            "duffing" => Ok(SystemKind::Duffing),
            other => Err(Error::InvalidConfig(format!("unknown system '{other}'"))),
        }
    }

    fn region(&self, name: &str) -> Result<IcRegion> {
        match name {
            "box" => Ok(IcRegion::Box { lo: self.ic_lo.clone(), hi: self.ic_hi.clone() }),
            "single_well" => Ok(IcRegion::SingleWell),
            "double_well" => Ok(IcRegion::DoubleWell),
            other => Err(Error::InvalidConfig(format!("unknown initial-condition region '{other}'"))),
        }
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let input_law = match self.input_law.as_str() {
            "none" => InputLaw::None,
            "bang" => InputLaw::Bang { amplitude: self.input_amplitude },
            "uniform" => InputLaw::Uniform { lo: self.input_lo, hi: self.input_hi },
            other => return Err(Error::InvalidConfig(format!("unknown input law '{other}'"))),
        };
        Ok(SimConfig {
            system: self.system_kind()?,
            dt: self.dt,
            steps: self.steps,
            ic_region: self.region(&self.ic_region)?,
            later_region: if self.later_region.is_empty() { None } else { Some(self.region(&self.later_region)?) },
            switch_at: self.switch_at,
            input_law,
            seed: self.seed,
        })
    }

    pub fn gate_config(&self) -> GateConfig {
        GateConfig {
            epsilon: self.epsilon,
            depth: self.depth,
            order_tol: self.order_tol,
            r_max: (self.r_max > 0).then_some(self.r_max),
            initial_batch: self.initial_batch,
            track_eigenvalues: true,
        }
    }

    pub fn gp_options(&self) -> GpOptions {
        GpOptions { restarts: self.gp_restarts, max_iter: self.gp_max_iter, seed: self.seed, ..GpOptions::default() }
    }

    pub fn gp_subsample(&self) -> Option<usize> {
        (self.gp_subsample > 0).then_some(self.gp_subsample)
    }

    pub fn ensemble_spec(&self) -> Result<EnsembleSpec> {
        let kind = self.system_kind()?;
        Ok(EnsembleSpec {
            ic_region: IcRegion::Box { lo: self.bench_ic_lo.clone(), hi: self.bench_ic_hi.clone() },
            input_law: if self.bench_input_lo < self.bench_input_hi {
                InputLaw::Uniform { lo: self.bench_input_lo, hi: self.bench_input_hi }
            } else {
                InputLaw::None
            },
            input_dim: kind.input_dim(),
            n_ic: self.bench_n_ic,
            horizon: self.bench_horizon,
            dt: self.dt,
            seed: crate::simulate::derive_seed(self.seed, u64::MAX),
        })
    }

    pub fn edmd_options(&self) -> Vec<EdmdOptions> {
        self.edmd_centers.iter().map(|&c| EdmdOptions { seed: self.seed, ..EdmdOptions::with_centers(c) }).collect()
    }
}
