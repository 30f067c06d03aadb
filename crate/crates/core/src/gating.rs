//! Novelty-gated streaming identification.
//!
//! Every streamed record is turned into a Hankel pair, its own subspace is
//! extracted at the session's current order, and the Grassmann distance `G`
//! to the accumulated subspace decides whether the record is folded into the
//! recursive state (`G > ε`) or discarded.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hankel::{build_hankel, projected_gram, DataRecord, HankelPair};
use crate::io::fmt_f64;
use crate::realize::{
    build_toeplitz, lift_columns, recover_bd, recover_ck, sorted_eigenvalues, CrossMoments, InputMaps,
    LiftedRealization, StateSpaceModel,
};
use crate::rssid::SquaredDataState;
use crate::subspace::{extract_subspace, grassmann_distance, OrderRule, Subspace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    /// Novelty threshold on `G`.
    pub epsilon: f64,
    /// Hankel depth `l`.
    pub depth: usize,
    /// Relative singular-value threshold of the order rule.
    pub order_tol: f64,
    /// Largest admissible order; defaults to `l·p / 2`.
    pub r_max: Option<usize>,
    /// Records ingested unconditionally before gating starts.
    pub initial_batch: usize,
    /// Record `K` eigenvalues after every accepted update.
    pub track_eigenvalues: bool,
}

impl GateConfig {
    pub fn new(epsilon: f64, depth: usize) -> Self {
        Self { epsilon, depth, order_tol: 1e-3, r_max: None, initial_batch: 1, track_eigenvalues: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.depth < 2 {
            return Err(Error::InvalidConfig("depth must be at least 2".into()));
        }
        if !(self.order_tol > 0.0 && self.order_tol < 1.0) {
            return Err(Error::InvalidConfig(format!("order_tol must lie in (0, 1), got {}", self.order_tol)));
        }
        if self.initial_batch == 0 {
            return Err(Error::InvalidConfig("initial_batch must be at least 1".into()));
        }
        if self.r_max == Some(0) {
            return Err(Error::InvalidConfig("r_max must be positive".into()));
        }
        Ok(())
    }

    pub fn effective_r_max(&self, output_dim: usize) -> usize {
        self.r_max.unwrap_or((self.depth * output_dim / 2).max(1))
    }

    fn order_rule(&self, output_dim: usize) -> OrderRule {
        OrderRule::Relative { rel_tol: self.order_tol, max_order: self.effective_r_max(output_dim) }
    }
}

/// Outcome of one streamed record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    /// 1-based stream position.
    pub index: usize,
    /// Novelty score; `None` while the initial batch is being collected.
    pub g: Option<f64>,
    pub accepted: bool,
    /// Order after the decision (0 before initialization).
    pub order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub index: usize,
    pub record_id: usize,
    pub g: Option<f64>,
    pub accepted: bool,
    pub order: usize,
    /// Leading singular values of the accumulated subspace.
    pub sigmas: Vec<f64>,
    /// `(re, im)` eigenvalues of `K`, when tracked.
    pub eigenvalues: Vec<[f64; 2]>,
    pub distance_to_reference: Option<f64>,
    pub error: Option<String>,
}

const LOGGED_SIGMAS: usize = 15;

/// Identified model with its lifted realization.
#[derive(Debug, Clone)]
pub struct Finalized {
    pub model: StateSpaceModel,
    pub lifted: LiftedRealization,
    pub input_maps: InputMaps,
    pub subspace: Subspace,
}

impl Finalized {
    /// GP training pairs `(𝕏, Z₀)`.
    pub fn training_set(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        (&self.lifted.x0, &self.lifted.z0)
    }
}

#[derive(Debug, Clone)]
struct Initialized {
    state: SquaredDataState,
    current: Subspace,
}

#[derive(Debug, Clone)]
pub struct OnlineSession {
    config: GateConfig,
    inner: Option<Initialized>,
    archive: Vec<DataRecord>,
    log: Vec<LogEntry>,
    reference: Option<Subspace>,
    checkpoints: Option<(PathBuf, usize)>,
}

impl OnlineSession {
    pub fn new(config: GateConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, inner: None, archive: Vec::new(), log: Vec::new(), reference: None, checkpoints: None })
    }

    /// Logs the Grassmann distance to `reference` after each decision.
    pub fn with_reference(mut self, reference: Subspace) -> Self {
        self.reference = Some(reference);
        self
    }

    /// Writes a checkpoint into `dir` every `every` streamed records.
    pub fn with_checkpoints(mut self, dir: impl Into<PathBuf>, every: usize) -> Self {
        self.checkpoints = Some((dir.into(), every.max(1)));
        self
    }

    pub fn config(&self) -> &GateConfig {
        &self.config
    }

    pub fn state(&self) -> Option<&SquaredDataState> {
        self.inner.as_ref().map(|s| &s.state)
    }

    pub fn current(&self) -> Option<&Subspace> {
        self.inner.as_ref().map(|s| &s.current)
    }

    pub fn order(&self) -> usize {
        self.current().map_or(0, Subspace::order)
    }

    pub fn archive(&self) -> &[DataRecord] {
        &self.archive
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn streamed(&self) -> usize {
        self.log.len()
    }

    /// Accepted records, initial batch included.
    pub fn accepted(&self) -> usize {
        self.archive.len()
    }

    fn output_dim(&self) -> Option<usize> {
        self.archive.first().map(DataRecord::output_dim)
    }

    fn pair(&self, record: &DataRecord) -> Result<HankelPair> {
        build_hankel(record, self.config.depth, self.config.effective_r_max(record.output_dim()))
    }

    /// `G` between the accumulated subspace and the record's own subspace at
    /// the current order, plus that local subspace. The session is unchanged.
    pub fn evaluate_novelty(&self, h: &HankelPair) -> Result<(f64, Subspace)> {
        let inner = self.inner.as_ref().ok_or(Error::EmptyArchive)?;
        if h.y.nrows() != inner.state.ambient_dim() || h.u.nrows() != inner.state.depth * inner.state.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "record Hankel shape {}x{} does not match the session",
                h.y.nrows(),
                h.u.nrows()
            )));
        }
        let local = extract_subspace(&projected_gram(h)?, OrderRule::Fixed(inner.current.order()))?;
        let g = grassmann_distance(&inner.current, &local)?;
        Ok((g, local))
    }

    /// Streams one record. A failing record is logged, skipped, and its error
    /// returned; the session stays usable.
    pub fn step(&mut self, record: &DataRecord) -> Result<Decision> {
        let index = self.log.len() + 1;
        let result = self.try_step(record, index);
        let entry = match &result {
            Ok(decision) => self.entry_for(record.id, *decision),
            Err(e) => LogEntry {
                index,
                record_id: record.id,
                g: None,
                accepted: false,
                order: self.order(),
                sigmas: Vec::new(),
                eigenvalues: Vec::new(),
                distance_to_reference: None,
                error: Some(e.to_string()),
            },
        };
        self.log.push(entry);
        if let Some((dir, every)) = &self.checkpoints {
            if index % every == 0 && self.inner.is_some() {
                let dir = dir.join(format!("checkpoint_{index:05}"));
                self.write_checkpoint(&dir)?;
            }
        }
        result
    }

    fn try_step(&mut self, record: &DataRecord, index: usize) -> Result<Decision> {
        if let Some(p) = self.output_dim() {
            let first = &self.archive[0];
            if record.output_dim() != p || record.input_dim() != first.input_dim() {
                return Err(Error::DimensionMismatch(format!(
                    "record {} has (p, m) = ({}, {}), session expects ({}, {})",
                    record.id,
                    record.output_dim(),
                    record.input_dim(),
                    p,
                    first.input_dim()
                )));
            }
        }
        let h = self.pair(record)?;
        let rule = self.config.order_rule(record.output_dim());
        match &mut self.inner {
            None => {
                self.archive.push(record.clone());
                if self.archive.len() == self.config.initial_batch {
                    let pairs = self.archive.iter().map(|r| self.pair(r)).collect::<Result<Vec<_>>>();
                    let init = pairs
                        .and_then(|pairs| SquaredDataState::init(&pairs))
                        .and_then(|state| extract_subspace(&state.xi, rule).map(|current| Initialized { state, current }));
                    match init {
                        Ok(init) => self.inner = Some(init),
                        Err(e) => {
                            self.archive.pop();
                            return Err(e);
                        }
                    }
                }
                Ok(Decision { index, g: None, accepted: true, order: self.order() })
            }
            Some(_) => {
                let (g, _) = self.evaluate_novelty(&h)?;
                let mut accepted = false;
                if g > self.config.epsilon {
                    let inner = self.inner.as_mut().expect("initialized");
                    let mut state = inner.state.clone();
                    state.ingest_dataset(&h)?;
                    let current = extract_subspace(&state.xi, rule)?;
                    *inner = Initialized { state, current };
                    self.archive.push(record.clone());
                    accepted = true;
                }
                Ok(Decision { index, g: Some(g), accepted, order: self.order() })
            }
        }
    }

    fn entry_for(&self, record_id: usize, d: Decision) -> LogEntry {
        let current = self.current();
        let sigmas = current.map_or_else(Vec::new, |s| s.spectrum.iter().take(LOGGED_SIGMAS).map(|v| v.max(0.0).sqrt()).collect());
        let eigenvalues = match (current, self.config.track_eigenvalues, self.output_dim()) {
            (Some(s), true, Some(p)) => recover_ck(s, p)
                .map(|(_, k)| sorted_eigenvalues(&k).iter().map(|z| [z.re, z.im]).collect())
                .unwrap_or_default(),
            _ => Vec::new(),
        };
        let distance_to_reference = match (current, &self.reference) {
            (Some(s), Some(r)) => grassmann_distance(s, r).ok(),
            _ => None,
        };
        LogEntry {
            index: d.index,
            record_id,
            g: d.g,
            accepted: d.accepted,
            order: d.order,
            sigmas,
            eigenvalues,
            distance_to_reference,
            error: None,
        }
    }

    /// Streams every record, collecting per-record errors instead of stopping.
    pub fn run<'a>(&mut self, records: impl IntoIterator<Item = &'a DataRecord>) -> Vec<(usize, Error)> {
        let mut errors = Vec::new();
        for rec in records {
            if let Err(e) = self.step(rec) {
                errors.push((rec.id, e));
            }
        }
        errors
    }

    /// Model and lifted realization over every archived Hankel column.
    pub fn finalize(&self) -> Result<Finalized> {
        self.finalize_with(None)
    }

    /// As [`finalize`](Self::finalize), lifting at most `subsample` archived
    /// columns drawn without replacement with `seed`.
    pub fn finalize_subsampled(&self, subsample: usize, seed: u64) -> Result<Finalized> {
        self.finalize_with(Some((subsample, seed)))
    }

    fn finalize_with(&self, subsample: Option<(usize, u64)>) -> Result<Finalized> {
        let inner = self.inner.as_ref().ok_or(Error::EmptyArchive)?;
        let p = self.output_dim().ok_or(Error::EmptyArchive)?;
        let subspace = inner.current.clone();
        let (c, k) = recover_ck(&subspace, p)?;
        let gamma = subspace.gamma();
        let depth = self.config.depth;
        let input_maps = match CrossMoments::from_state(&inner.state) {
            Some(moments) => recover_bd(&c, &k, &gamma, depth, &moments)?,
            None => InputMaps { b: DMatrix::zeros(k.nrows(), 0), d: DMatrix::zeros(p, 0), condition: 1.0 },
        };
        let model = StateSpaceModel::new(k, input_maps.b.clone(), c, input_maps.d.clone(), depth)?;

        let columns_per_record: Vec<usize> = self.archive.iter().map(|r| r.len() - depth).collect();
        let total: usize = columns_per_record.iter().sum();
        let mut chosen: Vec<usize> = match subsample {
            Some((n, seed)) if n < total => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                sample(&mut rng, total, n).into_vec()
            }
            _ => (0..total).collect(),
        };
        chosen.sort_unstable();
        // map flat column indices to (record, column), building only needed pairs
        let mut pairs = Vec::new();
        let mut selected = Vec::with_capacity(chosen.len());
        let (mut rec, mut offset, mut pair_of_rec) = (0usize, 0usize, None);
        for flat in chosen {
            while flat >= offset + columns_per_record[rec] {
                offset += columns_per_record[rec];
                rec += 1;
                pair_of_rec = None;
            }
            let pi = match pair_of_rec {
                Some(pi) => pi,
                None => {
                    pairs.push(self.pair(&self.archive[rec])?);
                    pair_of_rec = Some(pairs.len() - 1);
                    pairs.len() - 1
                }
            };
            selected.push((pi, flat - offset));
        }
        let h = build_toeplitz(&model, depth);
        let lifted = lift_columns(&gamma, &h, &pairs, Some(&selected));
        Ok(Finalized { model, lifted, input_maps, subspace })
    }

    /// Decision log CSV `i,G,accepted,r,sigma_1..sigma_k`.
    pub fn write_decisions_csv(&self, path: &Path) -> Result<()> {
        let k = self.log.iter().map(|e| e.sigmas.len()).max().unwrap_or(0);
        let mut w = BufWriter::new(File::create(path)?);
        let mut header = vec!["i".to_string(), "G".into(), "accepted".into(), "r".into()];
        header.extend((1..=k).map(|j| format!("sigma_{j}")));
        writeln!(w, "{}", header.join(","))?;
        for e in &self.log {
            let mut row = vec![
                e.index.to_string(),
                e.g.map(fmt_f64).unwrap_or_default(),
                u8::from(e.accepted).to_string(),
                e.order.to_string(),
            ];
            row.extend((0..k).map(|j| e.sigmas.get(j).map(|&v| fmt_f64(v)).unwrap_or_default()));
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    /// State dump, archived record ids and the log, enough to resume.
    pub fn write_checkpoint(&self, dir: &Path) -> Result<()> {
        let inner = self.inner.as_ref().ok_or(Error::EmptyArchive)?;
        std::fs::create_dir_all(dir)?;
        inner.state.write_checkpoint(&dir.join("state.txt"))?;
        let meta = CheckpointMeta {
            config: self.config.clone(),
            archive_ids: self.archive.iter().map(|r| r.id).collect(),
            log: self.log.clone(),
        };
        std::fs::write(dir.join("session.json"), serde_json::to_string(&meta)?)?;
        Ok(())
    }

    /// Restores a session; `lookup` returns the record with a given id.
    pub fn resume(dir: &Path, mut lookup: impl FnMut(usize) -> Result<DataRecord>) -> Result<Self> {
        let meta: CheckpointMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("session.json"))?)?;
        let state = SquaredDataState::read_checkpoint(&dir.join("state.txt"))?;
        let current = extract_subspace(&state.xi, meta.config.order_rule(state.output_dim))?;
        let archive = meta.archive_ids.iter().map(|&id| lookup(id)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: meta.config,
            inner: Some(Initialized { state, current }),
            archive,
            log: meta.log,
            reference: None,
            checkpoints: None,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    config: GateConfig,
    archive_ids: Vec<usize>,
    log: Vec<LogEntry>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::relative_frobenius;
    use crate::simulate::{stream_datasets, SimConfig};

    fn example1_config() -> GateConfig {
        GateConfig { r_max: Some(5), track_eigenvalues: true, ..GateConfig::new(1e-3, 10) }
    }

    #[test]
    fn initial_batch_then_gating() {
        let recs = stream_datasets(&SimConfig::example1(), 30).unwrap();
        let mut s = OnlineSession::new(GateConfig { initial_batch: 2, ..example1_config() }).unwrap();
        let d1 = s.step(&recs[0]).unwrap();
        assert!(d1.accepted && d1.g.is_none() && d1.order == 0);
        let d2 = s.step(&recs[1]).unwrap();
        assert!(d2.accepted && d2.order > 0);
        let d3 = s.step(&recs[2]).unwrap();
        assert!(d3.g.is_some());
        assert_eq!(s.streamed(), 3);
    }

    #[test]
    fn restreamed_record_is_rejected() {
        let recs = stream_datasets(&SimConfig::example1(), 3).unwrap();
        let mut s = OnlineSession::new(GateConfig { epsilon: 1e-6, ..example1_config() }).unwrap();
        s.step(&recs[0]).unwrap();
        s.step(&recs[1]).unwrap();
        let again = s.step(&recs[0]).unwrap();
        assert!(!again.accepted);
        assert!(again.g.unwrap() <= 1e-6, "G = {:?}", again.g);
    }

    #[test]
    fn closed_gate_keeps_initial_model() {
        let recs = stream_datasets(&SimConfig::example1(), 20).unwrap();
        let mut s = OnlineSession::new(GateConfig { epsilon: f64::INFINITY, ..example1_config() }).unwrap();
        s.run(&recs);
        assert_eq!(s.accepted(), 1);
        let mut only = OnlineSession::new(example1_config()).unwrap();
        only.step(&recs[0]).unwrap();
        assert_eq!(s.state().unwrap().xi, only.state().unwrap().xi);
    }

    #[test]
    fn archive_matches_batch_state() {
        let recs = stream_datasets(&SimConfig::example1(), 40).unwrap();
        let mut s = OnlineSession::new(example1_config()).unwrap();
        assert!(s.run(&recs).is_empty());
        assert_eq!(s.log().len(), 40);
        assert_eq!(s.accepted(), s.log().iter().filter(|e| e.accepted).count());
        let pairs: Vec<_> = s.archive().iter().map(|r| build_hankel(r, 10, 5).unwrap()).collect();
        let batch = SquaredDataState::init(&pairs).unwrap();
        assert!(relative_frobenius(&s.state().unwrap().xi, &batch.xi) < 1e-8);
    }

    #[test]
    fn bad_record_is_logged_and_skipped() {
        let recs = stream_datasets(&SimConfig::example1(), 3).unwrap();
        let mut s = OnlineSession::new(example1_config()).unwrap();
        s.step(&recs[0]).unwrap();
        let before = s.state().unwrap().xi.clone();
        let short = DataRecord::new(99, DMatrix::zeros(0, 8), DMatrix::zeros(2, 8)).unwrap();
        assert!(s.step(&short).is_err());
        let wrong = DataRecord::new(98, DMatrix::zeros(1, 16), DMatrix::zeros(2, 16)).unwrap();
        assert!(matches!(s.step(&wrong), Err(Error::DimensionMismatch(_))));
        assert_eq!(s.state().unwrap().xi, before);
        assert_eq!(s.log().len(), 3);
        assert!(s.log()[1].error.is_some());
        s.step(&recs[1]).unwrap();
    }

    #[test]
    fn gate_is_monotone_in_epsilon() {
        let recs = stream_datasets(&SimConfig::example1(), 25).unwrap();
        let accepted_set = |eps: f64| {
            let mut s = OnlineSession::new(GateConfig { epsilon: eps, ..example1_config() }).unwrap();
            s.run(&recs);
            s.log().iter().map(|e| e.accepted).collect::<Vec<_>>()
        };
        let eps = [1e-5, 1e-4, 1e-3, 1e-2];
        for w in eps.windows(2) {
            let (lo, hi) = (accepted_set(w[0]), accepted_set(w[1]));
            // identical up to the first divergence, where only the lower ε accepts
            if let Some(i) = lo.iter().zip(&hi).position(|(a, b)| a != b) {
                assert!(lo[i] && !hi[i]);
            }
        }
    }

    #[test]
    fn finalize_example1_session() {
        let recs = stream_datasets(&SimConfig::example1(), 100).unwrap();
        let mut s = OnlineSession::new(example1_config()).unwrap();
        s.run(&recs);
        let fin = s.finalize().unwrap();
        assert_eq!(fin.model.order(), 3);
        assert_eq!(fin.lifted.len(), 6 * s.accepted());
        let sub = s.finalize_subsampled(10, 4).unwrap();
        assert_eq!(sub.lifted.len(), 10);
        assert_eq!(sub.model, fin.model);
        // subsampled columns are a subset of the full lift
        for j in 0..10 {
            let col = sub.lifted.z0.column(j);
            assert!((0..fin.lifted.len()).any(|k| (fin.lifted.z0.column(k) - col).norm() < 1e-12));
        }
    }

    #[test]
    fn empty_session_cannot_finalize() {
        let s = OnlineSession::new(example1_config()).unwrap();
        assert!(matches!(s.finalize(), Err(Error::EmptyArchive)));
    }

    #[test]
    fn checkpoint_resume_continues_identically() {
        let recs = stream_datasets(&SimConfig::example1(), 30).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut a = OnlineSession::new(example1_config()).unwrap().with_checkpoints(dir.path(), 10);
        a.run(&recs[..20]);
        let mut b = OnlineSession::resume(&dir.path().join("checkpoint_00020"), |id| Ok(recs[id - 1].clone())).unwrap();
        a.run(&recs[20..]);
        b.run(&recs[20..]);
        assert_eq!(a.log(), b.log());
        assert_eq!(a.state().unwrap().xi, b.state().unwrap().xi);
        let csv = dir.path().join("decisions.csv");
        a.write_decisions_csv(&csv).unwrap();
        let text = std::fs::read_to_string(csv).unwrap();
        assert!(text.starts_with("i,G,accepted,r,sigma_1"));
        assert_eq!(text.lines().count(), 31);
    }

    #[test]
    fn config_validation() {
        assert!(OnlineSession::new(GateConfig::new(0.0, 10)).is_err());
        assert!(OnlineSession::new(GateConfig::new(1e-3, 1)).is_err());
        assert!(OnlineSession::new(GateConfig { order_tol: 1.0, ..GateConfig::new(1e-3, 10) }).is_err());
    }
}
