//! Commands behind the `rssid` binary.
//!
//! A run directory `<out>/<experiment>-<hash>` is keyed by the SHA-256 of the
//! serialized configuration and holds:
//!
//! ```text
//! config.toml                 verbatim configuration
//! data/                       record_NNNN.csv + manifest.json
//! model.json, lifted.csv, gp.json          final model, Z0 and GP lifter
//! model_kNNN.json, lifted_kNNN.csv, gp_kNNN.json   snapshot model (optional)
//! decisions.csv, eigenvalues.csv, singular_values.csv, distance_to_truth.csv
//! checkpoints/checkpoint_NNNNN/           resumable session state
//! rmse_k600_k900.csv, rmse.csv, rmse_vs_edmd.csv, summary.json, bench_summary.json
//! ```

use std::path::{Path, PathBuf};

use koopman_rssid::bench::{make_report, KoopmanPredictor, Predictor, RmseTable};
use koopman_rssid::config::RunConfig;
use koopman_rssid::gplift::Hyperparameters;
use koopman_rssid::pipeline::{edmd_baselines, evaluate, identify, train};
use koopman_rssid::simulate::{read_dataset, stream_datasets, write_dataset, Manifest};
use koopman_rssid::{DataRecord, Error, GpLifter, LiftedRealization, OnlineSession, Result, StateSpaceModel};
use serde_json::json;
use sha2::{Digest, Sha256};

/// Resolves the configuration: a file wins over a preset; `seed` overrides both.
pub fn load_config(preset: Option<&str>, config: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match config {
        Some(path) => RunConfig::from_toml(&std::fs::read_to_string(path)?)?,
        None => RunConfig::preset(preset.unwrap_or("example1"))?,
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn config_hash(cfg: &RunConfig) -> Result<String> {
    let digest = Sha256::digest(cfg.to_toml()?.as_bytes());
    Ok(digest.iter().take(6).map(|b| format!("{b:02x}")).collect())
}

/// Creates (if needed) the run directory and stores the configuration in it.
pub fn prepare_run_dir(out: &Path, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = out.join(format!("{}-{}", cfg.experiment, config_hash(cfg)?));
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    Ok(dir)
}

pub fn cmd_generate(cfg: &RunConfig, run_dir: &Path) -> Result<Manifest> {
    let sim = cfg.sim_config()?;
    let records = stream_datasets(&sim, cfg.records)?;
    write_dataset(&run_dir.join("data"), &sim, &records)
}

fn load_records(cfg: &RunConfig, run_dir: &Path, data: Option<&Path>) -> Result<Vec<DataRecord>> {
    let dir = data.map_or_else(|| run_dir.join("data"), Path::to_path_buf);
    if !dir.join("manifest.json").exists() {
        if data.is_some() {
            return Err(Error::InvalidConfig(format!("no dataset manifest in {}", dir.display())));
        }
        cmd_generate(cfg, run_dir)?;
    }
    Ok(read_dataset(&dir)?.1)
}

fn save_model(run_dir: &Path, suffix: &str, session: &OnlineSession, cfg: &RunConfig) -> Result<KoopmanPredictor> {
    let name = if suffix.is_empty() { format!("K{}", session.streamed()) } else { format!("K{}", &suffix[2..]) };
    let (fin, predictor) = train(session, cfg, &name)?;
    fin.model.write_json(&run_dir.join(format!("model{suffix}.json")))?;
    fin.lifted.write_csv(&run_dir.join(format!("lifted{suffix}.csv")))?;
    std::fs::write(run_dir.join(format!("gp{suffix}.json")), predictor.lifter.hyperparameters_json()?)?;
    Ok(predictor)
}

fn load_model(run_dir: &Path, suffix: &str, name: String) -> Result<KoopmanPredictor> {
    let model = StateSpaceModel::read_json(&run_dir.join(format!("model{suffix}.json")))?;
    let lifted = LiftedRealization::read_csv(&run_dir.join(format!("lifted{suffix}.csv")))?;
    let hypers: Vec<Hyperparameters> = serde_json::from_str(&std::fs::read_to_string(run_dir.join(format!("gp{suffix}.json")))?)?;
    let lifter = GpLifter::from_hyperparameters(&lifted.x0, &lifted.z0, &hypers)?;
    Ok(KoopmanPredictor { name, model, lifter })
}

#[derive(Debug)]
pub struct IdentifyOutcome {
    pub streamed: usize,
    pub accepted: usize,
    pub order: usize,
    pub snapshot_order: Option<usize>,
    pub errors: Vec<(usize, String)>,
}

/// Streams the dataset through the gate, finalizes, fits the GP lifter(s)
/// and writes the session report.
pub fn cmd_identify(cfg: &RunConfig, run_dir: &Path, data: Option<&Path>) -> Result<IdentifyOutcome> {
    let records = load_records(cfg, run_dir, data)?;
    let run = identify(cfg, &records, Some(&run_dir.join("checkpoints")))?;
    save_model(run_dir, "", &run.session, cfg)?;
    if let Some(snap) = &run.snapshot {
        save_model(run_dir, &format!("_k{}", cfg.snapshot_at), snap, cfg)?;
    }
    let errors: Vec<(usize, String)> = run.errors.iter().map(|(id, e)| (*id, e.to_string())).collect();
    make_report(
        &run.session,
        &[],
        json!({
            "experiment": cfg.experiment,
            "config_hash": config_hash(cfg)?,
            "snapshot_at": cfg.snapshot_at,
            "snapshot_order": run.snapshot.as_ref().map(OnlineSession::order),
        }),
        run_dir,
    )?;
    Ok(IdentifyOutcome {
        streamed: run.session.streamed(),
        accepted: run.session.accepted(),
        order: run.session.order(),
        snapshot_order: run.snapshot.as_ref().map(OnlineSession::order),
        errors,
    })
}

fn final_name(cfg: &RunConfig) -> String {
    format!("K{}", cfg.records)
}

/// RMSE of the identified model(s) on the configured test ensemble; with a
/// snapshot model this is the `rmse_k600_k900.csv`-style comparison.
pub fn cmd_bench(cfg: &RunConfig, run_dir: &Path) -> Result<RmseTable> {
    if !run_dir.join("model.json").exists() {
        return Err(Error::InvalidConfig(format!("no identified model in {}; run identify first", run_dir.display())));
    }
    let last = load_model(run_dir, "", final_name(cfg))?;
    let snapshot_suffix = format!("_k{}", cfg.snapshot_at);
    let (table, file) = if cfg.snapshot_at > 0 && run_dir.join(format!("model{snapshot_suffix}.json")).exists() {
        let first = load_model(run_dir, &snapshot_suffix, format!("K{}", cfg.snapshot_at))?;
        let table = evaluate(cfg, &[&first as &dyn Predictor, &last])?;
        (table, format!("rmse_k{}_k{}.csv", cfg.snapshot_at, cfg.records))
    } else {
        (evaluate(cfg, &[&last as &dyn Predictor])?, "rmse.csv".to_string())
    };
    table.write_csv(&run_dir.join(&file))?;
    write_bench_summary(run_dir, &file, &table)?;
    Ok(table)
}

/// Final model against EDMD baselines fit on the same records.
pub fn cmd_compare_edmd(cfg: &RunConfig, run_dir: &Path, data: Option<&Path>) -> Result<RmseTable> {
    if cfg.edmd_centers.is_empty() {
        return Err(Error::InvalidConfig("edmd_centers is empty".into()));
    }
    let records = load_records(cfg, run_dir, data)?;
    let last = load_model(run_dir, "", final_name(cfg))?;
    let baselines = edmd_baselines(cfg, &records)?;
    let mut predictors: Vec<&dyn Predictor> = vec![&last];
    predictors.extend(baselines.iter().map(|b| b as &dyn Predictor));
    let table = evaluate(cfg, &predictors)?;
    table.write_csv(&run_dir.join("rmse_vs_edmd.csv"))?;
    let conditions: Vec<_> = baselines.iter().map(|b| json!({ "name": b.name, "condition": b.condition, "width": b.width })).collect();
    write_bench_summary(run_dir, "rmse_vs_edmd.csv", &table)?;
    std::fs::write(run_dir.join("edmd.json"), serde_json::to_string_pretty(&conditions)?)?;
    Ok(table)
}

fn write_bench_summary(run_dir: &Path, file: &str, table: &RmseTable) -> Result<()> {
    let path = run_dir.join("bench_summary.json");
    let mut all = match std::fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text)?,
        Err(_) => json!({}),
    };
    all[file] = table.summary();
    std::fs::write(path, serde_json::to_string_pretty(&all)?)?;
    Ok(())
}

/// One-line horizon-averaged RMSE per model.
pub fn describe(table: &RmseTable) -> String {
    (0..table.names.len())
        .map(|k| {
            let v: Vec<String> = table.horizon_mean(k).iter().map(|x| format!("{x:.4}")).collect();
            format!("{} [{}] diverged {}", table.names[k], v.join(", "), table.diverged[k])
        })
        .collect::<Vec<_>>()
        .join("; ")
}
