//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export returns a JSON string. Failures come back as `{"error": "..."}`.

use koopman_rssid::config::RunConfig;
use koopman_rssid::pipeline::identify;
use koopman_rssid::simulate::{crosses_saddle, generate_record, simulate_duffing, true_koopman_example1, Duffing, InputLaw};
use koopman_rssid::subspace::{grassmann_distance, principal_angles, Subspace};
use koopman_rssid::Result;
use nalgebra::DMatrix;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn respond(out: Result<Value>) -> String {
    match out {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e.to_string() }).to_string(),
    }
}

fn eigen_pairs(k: &DMatrix<f64>) -> Vec<[f64; 2]> {
    koopman_rssid::realize::sorted_eigenvalues(k).iter().map(|z| [z.re, z.im]).collect()
}

/// Streams `records` Example-1 trajectories through the gate with threshold `epsilon`.
#[wasm_bindgen]
pub fn stream_example1(epsilon: f64, records: usize, seed: u64) -> String {
    respond(stream_example1_value(epsilon, records, seed))
}

fn stream_example1_value(epsilon: f64, records: usize, seed: u64) -> Result<Value> {
    let cfg = RunConfig { epsilon, records, seed, ..RunConfig::preset("example1")? };
    cfg.validate()?;
    let sim = cfg.sim_config()?;
    let data = (0..records).map(|i| generate_record(&sim, i)).collect::<Result<Vec<_>>>()?;
    let run = identify(&cfg, &data, None)?;
    let log = run.session.log();
    let decisions: Vec<Value> = log
        .iter()
        .map(|e| json!({ "index": e.index, "g": e.g, "accepted": e.accepted, "order": e.order, "distance": e.distance_to_reference }))
        .collect();
    let last = log.last();
    Ok(json!({
        "decisions": decisions,
        "accepted": run.session.accepted(),
        "order": run.session.order(),
        "eigenvalues": last.map(|e| e.eigenvalues.clone()).unwrap_or_default(),
        "true_eigenvalues": eigen_pairs(&true_koopman_example1(cfg.dt)),
        "distance_to_truth": last.and_then(|e| e.distance_to_reference),
    }))
}

/// Principal angles between `span(e₁, e₂)` and the same plane tilted by
/// `theta1` and `theta2` (radians) into `e₃` and `e₄`.
#[wasm_bindgen]
pub fn tilted_planes(theta1: f64, theta2: f64) -> String {
    respond(tilted_planes_value(theta1, theta2))
}

fn tilted_planes_value(theta1: f64, theta2: f64) -> Result<Value> {
    let mut a = DMatrix::zeros(4, 2);
    a[(0, 0)] = 1.0;
    a[(1, 1)] = 1.0;
    let mut b = DMatrix::zeros(4, 2);
    b[(0, 0)] = theta1.cos();
    b[(2, 0)] = theta1.sin();
    b[(1, 1)] = theta2.cos();
    b[(3, 1)] = theta2.sin();
    let (sa, sb) = (Subspace::from_span(&a), Subspace::from_span(&b));
    Ok(json!({
        "angles": principal_angles(&sa, &sb)?,
        "distance": grassmann_distance(&sa, &sb)?,
    }))
}

/// Forced Duffing trajectory from `(x1, x2)` with bang-bang input of the given amplitude.
#[wasm_bindgen]
pub fn duffing_trajectory(x1: f64, x2: f64, amplitude: f64, steps: usize, seed: u64) -> String {
    respond(duffing_trajectory_value(x1, x2, amplitude, steps, seed))
}

fn duffing_trajectory_value(x1: f64, x2: f64, amplitude: f64, steps: usize, seed: u64) -> Result<Value> {
    let law = if amplitude > 0.0 { InputLaw::Bang { amplitude } } else { InputLaw::None };
    let rec = simulate_duffing([x1, x2], 0.01, steps, law, seed)?;
    let y = rec.outputs();
    let energy = Duffing::default().energy(&[x1, x2]);
    Ok(json!({
        "x1": y.row(0).iter().collect::<Vec<_>>(),
        "x2": y.row(1).iter().collect::<Vec<_>>(),
        "energy": energy,
        "initial_regime": if energy < 0.0 { "single-well" } else { "double-well" },
        "crosses_saddle": crosses_saddle(y),
    }))
}
