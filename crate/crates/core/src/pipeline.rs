//! End-to-end runs: stream, identify, lift, benchmark.

use std::path::Path;

use crate::bench::{fit_edmd, rmse_ensemble, EdmdBaseline, KoopmanPredictor, Predictor, RmseTable};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::gating::{Finalized, OnlineSession};
use crate::gplift::GpLifter;
use crate::hankel::DataRecord;
use crate::simulate::{Duffing, Example1, SystemKind};
use crate::subspace::Subspace;

pub struct Identified {
    pub session: OnlineSession,
    /// Session as it stood after `snapshot_at` records, if requested.
    pub snapshot: Option<OnlineSession>,
    /// Records that failed and were skipped.
    pub errors: Vec<(usize, Error)>,
}

/// Extended observability of the exact Koopman model, for Example-1 runs.
pub fn reference_subspace(cfg: &RunConfig) -> Option<Subspace> {
    (cfg.system == "example1").then(|| Subspace::from_span(&Example1::default().true_observability(cfg.dt, cfg.depth)))
}

pub fn identify(cfg: &RunConfig, records: &[DataRecord], checkpoint_dir: Option<&Path>) -> Result<Identified> {
    let mut session = OnlineSession::new(cfg.gate_config())?;
    if let Some(reference) = reference_subspace(cfg) {
        session = session.with_reference(reference);
    }
    if let Some(dir) = checkpoint_dir {
        session = session.with_checkpoints(dir, cfg.checkpoint_every);
    }
    let mut snapshot = None;
    let mut errors = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        if let Err(e) = session.step(rec) {
            errors.push((rec.id, e));
        }
        if cfg.snapshot_at > 0 && i + 1 == cfg.snapshot_at {
            snapshot = Some(session.clone());
        }
    }
    Ok(Identified { session, snapshot, errors })
}

/// Finalizes a session and fits its GP lifter.
pub fn train(session: &OnlineSession, cfg: &RunConfig, name: &str) -> Result<(Finalized, KoopmanPredictor)> {
    let fin = match cfg.gp_subsample() {
        Some(n) => session.finalize_subsampled(n, cfg.seed)?,
        None => session.finalize()?,
    };
    let (x, z) = fin.training_set();
    let lifter = GpLifter::fit(x, z, &cfg.gp_options())?;
    let predictor = KoopmanPredictor { name: name.to_string(), model: fin.model.clone(), lifter };
    Ok((fin, predictor))
}

/// RMSE of the given predictors on the configured test ensemble.
pub fn evaluate(cfg: &RunConfig, predictors: &[&dyn Predictor]) -> Result<RmseTable> {
    let spec = cfg.ensemble_spec()?;
    match cfg.sim_config()?.system {
        SystemKind::Example1 => rmse_ensemble(predictors, &Example1::default(), &spec),
        SystemKind::Duffing => rmse_ensemble(predictors, &Duffing::default(), &spec),
        SystemKind::Lti { .. } => Err(Error::InvalidConfig("benchmarks need a nonlinear ground-truth system".into())),
    }
}

/// EDMD baselines of every configured dictionary size, fit on `records`.
pub fn edmd_baselines(cfg: &RunConfig, records: &[DataRecord]) -> Result<Vec<EdmdBaseline>> {
    cfg.edmd_options().iter().map(|o| fit_edmd(records, o)).collect()
}
