//! Browser bindings: grounded spectra of a topology, a four-strategy
//! comparison on the reference setup, and a run from a pasted config.
//!
//! Every binding returns a JSON string. The plain `*_json` functions hold
//! the logic so they can be tested natively.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use swarmlead::graph::{build_topology, ground_all, TopologyKind, TopologySpec};
use swarmlead::harness::output::summary_json;
use swarmlead::harness::{compare_strategies, run_scenario, ScenarioConfig, SimTrace};
use swarmlead::selection::Strategy;

/// Longest simulated horizon accepted from the page.
pub const MAX_DURATION: f64 = 120.0;

fn js(result: Result<Value, String>) -> Result<String, JsError> {
    result.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

/// Spectrum of one topology and its grounded spectrum for every leader.
/// Agents and edges are 1-based.
pub fn spectra_json(kind: &str, n_agents: usize, edge_probability: f64, seed: u64) -> Result<Value, String> {
    let kind: TopologyKind = kind.parse().map_err(|e: swarmlead::Error| e.to_string())?;
    let spec = match kind {
        TopologyKind::RandomConnected => TopologySpec::random(n_agents, edge_probability, seed),
        _ => TopologySpec::new(kind, n_agents),
    };
    let graph = build_topology(&spec).map_err(|e| e.to_string())?;
    let spectrum = graph.laplacian_spectrum().map_err(|e| e.to_string())?;
    let leaders: Vec<Value> = ground_all(&graph)
        .map_err(|e| e.to_string())?
        .iter()
        .map(|s| {
            json!({
                "leader": s.leader() + 1,
                "lambda2l": s.lambda2(),
                "lambda_nl": s.lambda_max(),
                "eigenvalues": s.eigenvalues(),
            })
        })
        .collect();
    let edges: Vec<[usize; 2]> = graph.edges().iter().map(|&(a, b)| [a + 1, b + 1]).collect();
    Ok(json!({
        "label": spec.label(),
        "n_agents": n_agents,
        "edges": edges,
        "spectrum": spectrum,
        "lambda2": spectrum.get(1).copied().unwrap_or(0.0),
        "lambda_n": spectrum.last().copied().unwrap_or(0.0),
        "leaders": leaders,
    }))
}

/// Per-tick series of one trace: time, 1-based leader, post-reset metric
/// and topology label.
fn series(trace: &SimTrace) -> Value {
    let ticks = &trace.ticks;
    json!({
        "strategy": trace.summary.strategy.name(),
        "t": ticks.iter().map(|k| k.t).collect::<Vec<_>>(),
        "leader": ticks.iter().map(|k| k.leader + 1).collect::<Vec<_>>(),
        "metric": ticks.iter().map(|k| k.metric).collect::<Vec<_>>(),
        "topology": ticks.iter().map(|k| k.topology).collect::<Vec<_>>(),
        "summary": summary_json(&trace.summary),
        "warnings": trace.warnings,
    })
}

fn check_duration(duration: f64) -> Result<(), String> {
    if !(0.0..=MAX_DURATION).contains(&duration) {
        return Err(format!("duration must lie in [0, {MAX_DURATION}] s"));
    }
    Ok(())
}

/// Constant, local, global and random selection on the reference setup of
/// the given order, from identical initial conditions.
pub fn compare_json(order: &str, duration: f64, seed: u64) -> Result<Value, String> {
    check_duration(duration)?;
    let mut cfg = match order {
        "first" => ScenarioConfig::first_order_reference(seed, duration, Strategy::Constant),
        "second" => ScenarioConfig::second_order_reference(seed, duration, Strategy::Constant),
        other => return Err(format!("unknown order '{other}'")),
    };
    cfg.record_steps = false;
    let (traces, report) = compare_strategies(&cfg).map_err(|e| e.to_string())?;
    Ok(json!({
        "topology_labels": traces.first().map(|t| t.topology_labels.clone()).unwrap_or_default(),
        "strategies": traces.iter().map(series).collect::<Vec<_>>(),
        "constant_is_worst": report.constant_is_worst(),
    }))
}

/// One run from a full scenario config (JSON, 1-based agents).
pub fn run_json(config: &str) -> Result<Value, String> {
    let mut cfg = ScenarioConfig::from_json(config).map_err(|e| e.to_string())?;
    check_duration(cfg.duration)?;
    cfg.record_steps = false;
    let trace = run_scenario(&cfg).map_err(|e| e.to_string())?;
    Ok(json!({
        "topology_labels": trace.topology_labels,
        "strategies": [series(&trace)],
    }))
}

/// Reference first-order config as pretty JSON, for editing in the page.
pub fn default_config_json(duration: f64) -> String {
    let cfg = ScenarioConfig::first_order_reference(1, duration, Strategy::Local);
    serde_json::to_string_pretty(&cfg).expect("config serializes")
}

#[wasm_bindgen]
pub fn spectra(kind: &str, n_agents: usize, edge_probability: f64, seed: u32) -> Result<String, JsError> {
    js(spectra_json(kind, n_agents, edge_probability, seed.into()))
}

#[wasm_bindgen]
pub fn compare(order: &str, duration: f64, seed: u32) -> Result<String, JsError> {
    js(compare_json(order, duration, seed.into()))
}

#[wasm_bindgen]
pub fn run(config: &str) -> Result<String, JsError> {
    js(run_json(config))
}

#[wasm_bindgen]
pub fn default_config(duration: f64) -> String {
    default_config_json(duration)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn star_spectra() {
        let v = spectra_json("star", 5, 0.0, 0).unwrap();
        assert_eq!(v["edges"].as_array().unwrap().len(), 4);
        assert!((v["lambda_n"].as_f64().unwrap() - 5.0).abs() < 1e-9);
        let leaders = v["leaders"].as_array().unwrap();
        assert_eq!(leaders.len(), 5);
        // Grounding the hub leaves isolated leaves pinned to the leader.
        assert!((leaders[0]["lambda2l"].as_f64().unwrap() - 1.0).abs() < 1e-9);
        for l in leaders {
            assert!(l["lambda2l"].as_f64().unwrap() <= v["lambda2"].as_f64().unwrap() + 1e-9);
        }
    }

    #[test]
    fn spectra_rejects_unknown_kind() {
        assert!(spectra_json("torus", 5, 0.0, 0).is_err());
    }

    #[test]
    fn compare_has_four_aligned_series() {
        let v = compare_json("first", 1.0, 2).unwrap();
        let s = v["strategies"].as_array().unwrap();
        assert_eq!(s.len(), 4);
        let len = s[0]["t"].as_array().unwrap().len();
        assert_eq!(len, 21);
        assert!(s.iter().all(|x| x["metric"].as_array().unwrap().len() == len));
        assert_eq!(s[0]["strategy"], "constant");
        assert!(compare_json("third", 1.0, 2).is_err());
        assert!(compare_json("first", 1e4, 2).is_err());
    }

    #[test]
    fn run_round_trips_the_default_config() {
        let v = run_json(&default_config_json(0.5)).unwrap();
        let s = &v["strategies"][0];
        assert_eq!(s["strategy"], "local");
        assert!(s["leader"].as_array().unwrap().iter().all(|l| (1..=10).contains(&l.as_u64().unwrap())));
        assert!(run_json("{}").is_err());
    }
}
