//! Declarative scenario description (JSON, 1-based agent indices).

use std::path::PathBuf;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::FilterGains;
use crate::graph::{canonical_topologies, TopologySpec};
use crate::reference::ReferenceSignal;
use crate::selection::{is_integer_ratio, Strategy, TieBreak};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    First,
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimationMode {
    #[default]
    Oracle,
    Decentralized,
}

/// One entry of the topology schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyPhase {
    pub topology: TopologySpec,
    /// Seconds the topology stays active.
    pub dwell: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceConfig {
    /// Per-component uniform draws in `[-amplitude, amplitude]` every `T_r`.
    Random {
        #[serde(default = "default_amplitude")]
        amplitude: f64,
        /// Defaults to a stream derived from the scenario seed.
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Explicit values, one per sending period; the last is held.
    Schedule { values: Vec<Vec<f64>> },
}

fn default_amplitude() -> f64 {
    1.0
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig::Random {
            amplitude: 1.0,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FormationConfig {
    /// Polygon (d = 2), jittered grid (d = 3) or evenly spaced line (d = 1).
    Auto {
        #[serde(default = "default_spacing")]
        spacing: f64,
    },
    /// One offset per agent.
    Explicit { offsets: Vec<Vec<f64>> },
}

fn default_spacing() -> f64 {
    1.0
}

impl Default for FormationConfig {
    fn default() -> Self {
        FormationConfig::Auto { spacing: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderGainsConfig {
    pub k_p: f64,
    pub k_u: f64,
    /// Metric weight; derived from the smallest grounded connectivity of the
    /// schedule when absent.
    #[serde(default)]
    pub k_n: Option<f64>,
    #[serde(default = "default_kn_margin")]
    pub kn_margin: f64,
}

fn default_kn_margin() -> f64 {
    crate::first_order::DEFAULT_KN_MARGIN
}

impl Default for FirstOrderGainsConfig {
    fn default() -> Self {
        Self {
            k_p: 5.0,
            k_u: 2.5,
            k_n: None,
            kn_margin: default_kn_margin(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderGainsConfig {
    pub b: f64,
    #[serde(default = "one")]
    pub k_v: f64,
    #[serde(default = "one")]
    pub k_u: f64,
    /// Metric weights; selected from the schedule's spectra when absent.
    #[serde(default)]
    pub k_n1: Option<f64>,
    #[serde(default)]
    pub k_n2: Option<f64>,
    #[serde(default)]
    pub k_n3: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl Default for SecondOrderGainsConfig {
    fn default() -> Self {
        Self {
            b: 0.5,
            k_v: 1.0,
            k_u: 1.0,
            k_n1: None,
            k_n2: None,
            k_n3: None,
        }
    }
}

/// Optional output files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputPaths {
    #[serde(default)]
    pub directory: Option<PathBuf>,
    #[serde(default)]
    pub messages: Option<PathBuf>,
    #[serde(default)]
    pub filter_trace: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub order: Order,
    pub dimension: usize,
    pub n_agents: usize,
    pub topology_schedule: Vec<TopologyPhase>,
    /// Restart the schedule after its last phase.
    #[serde(default = "default_true")]
    pub cycle_topologies: bool,
    #[serde(default)]
    pub reference: ReferenceConfig,
    /// Selection period `T`.
    pub selection_period: f64,
    /// Sending period `T_r`.
    pub sending_period: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub duration: f64,
    pub strategy: Strategy,
    /// 1-based.
    #[serde(default = "one_usize")]
    pub initial_leader: usize,
    #[serde(default)]
    pub first_order: FirstOrderGainsConfig,
    #[serde(default)]
    pub second_order: SecondOrderGainsConfig,
    #[serde(default)]
    pub formation: FormationConfig,
    /// Side of the cube initial positions are drawn from.
    #[serde(default = "default_cube")]
    pub initial_cube: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub estimation_mode: EstimationMode,
    #[serde(default)]
    pub filter: FilterGains,
    #[serde(default)]
    pub tie_break: TieBreak,
    /// Run second-order gains outside the certified box.
    #[serde(default)]
    pub allow_infeasible: bool,
    /// Keep the per-step metric samples in the trace.
    #[serde(default = "default_true")]
    pub record_steps: bool,
    #[serde(default)]
    pub outputs: OutputPaths,
}

fn default_true() -> bool {
    true
}
fn default_dt() -> f64 {
    1e-3
}
fn one_usize() -> usize {
    1
}
fn default_cube() -> f64 {
    5.0
}

/// Independent RNG streams derived from the scenario seed.
pub(crate) mod stream {
    pub const INITIAL: u64 = 1;
    pub const FORMATION: u64 = 2;
    pub const REFERENCE: u64 = 3;
    pub const STRATEGY: u64 = 4;
    pub const POWER_ITERATION: u64 = 5;
    pub const VERIFY: u64 = 6;
}

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl ScenarioConfig {
    /// First-order comparison setup: ten agents, the six survey topologies
    /// cycled every 2 s, `T_r = 5 s`, `T = 0.05 s`, `k_p = 5`, `k_u = 2.5`.
    pub fn first_order_reference(seed: u64, duration: f64, strategy: Strategy) -> Self {
        let topology_schedule = canonical_topologies(10, 0.3, [1, 2])
            .into_iter()
            .map(|topology| TopologyPhase { topology, dwell: 2.0 })
            .collect();
        Self {
            order: Order::First,
            dimension: 3,
            n_agents: 10,
            topology_schedule,
            cycle_topologies: true,
            reference: ReferenceConfig::default(),
            selection_period: 0.05,
            sending_period: 5.0,
            dt: 1e-3,
            duration,
            strategy,
            initial_leader: 1,
            first_order: FirstOrderGainsConfig::default(),
            second_order: SecondOrderGainsConfig::default(),
            formation: FormationConfig::default(),
            initial_cube: 5.0,
            seed,
            estimation_mode: EstimationMode::Oracle,
            filter: FilterGains::default(),
            tie_break: TieBreak::LowestIndex,
            allow_infeasible: false,
            record_steps: true,
            outputs: OutputPaths::default(),
        }
    }

    /// Second-order comparison setup: the fifth survey topology (second
    /// random graph) held fixed, `T_r = 10 s`, `k_v = k_u = 1`, `b = 0.5`.
    pub fn second_order_reference(seed: u64, duration: f64, strategy: Strategy) -> Self {
        let topology = canonical_topologies(10, 0.3, [1, 2]).swap_remove(4);
        Self {
            order: Order::Second,
            topology_schedule: vec![TopologyPhase {
                topology,
                dwell: duration.max(1.0),
            }],
            sending_period: 10.0,
            allow_infeasible: true,
            ..Self::first_order_reference(seed, duration, strategy)
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain config")
    }

    /// Checks every structural invariant of the configuration.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(1..=3).contains(&self.dimension) {
            return bad(format!("dimension must be 1, 2 or 3 (got {})", self.dimension));
        }
        if self.n_agents < 2 {
            return bad(format!("need at least 2 agents (got {})", self.n_agents));
        }
        if self.initial_leader == 0 || self.initial_leader > self.n_agents {
            return bad(format!(
                "initial_leader {} outside 1..={}",
                self.initial_leader, self.n_agents
            ));
        }
        for (name, v) in [
            ("selection_period", self.selection_period),
            ("sending_period", self.sending_period),
            ("dt", self.dt),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive (got {v})"));
            }
        }
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return bad(format!("duration must be non-negative (got {})", self.duration));
        }
        if self.selection_period > self.sending_period
            || !is_integer_ratio(self.sending_period, self.selection_period)
        {
            return bad(format!(
                "T_r / T must be a positive integer (T = {}, T_r = {})",
                self.selection_period, self.sending_period
            ));
        }
        if !is_integer_ratio(self.selection_period, self.dt) {
            return bad(format!("dt = {} must divide T = {}", self.dt, self.selection_period));
        }
        if self.topology_schedule.is_empty() {
            return bad("topology_schedule is empty".into());
        }
        for phase in &self.topology_schedule {
            if phase.topology.n_agents != self.n_agents {
                return bad(format!(
                    "topology {} has {} agents, scenario has {}",
                    phase.topology.label(),
                    phase.topology.n_agents,
                    self.n_agents
                ));
            }
            if !(phase.dwell > 0.0) || !is_integer_ratio(phase.dwell, self.dt) {
                return bad(format!("dwell {} must be a positive multiple of dt", phase.dwell));
            }
        }
        if let ReferenceConfig::Schedule { values } = &self.reference {
            if values.is_empty() || values.iter().any(|v| v.len() != self.dimension) {
                return bad(format!("reference values must be non-empty {}-vectors", self.dimension));
            }
        }
        if let FormationConfig::Explicit { offsets } = &self.formation {
            if offsets.len() != self.n_agents
                || offsets.iter().any(|o| o.len() != self.dimension || o.iter().any(|x| !x.is_finite()))
            {
                return bad("formation offsets must be finite, one per agent".into());
            }
        }
        let g = &self.first_order;
        if !(g.k_p > 0.0 && g.k_u > 0.0 && g.k_n.is_none_or(|k| k > 0.0)) {
            return bad("first-order gains must be positive".into());
        }
        let s = &self.second_order;
        if !(s.b > 0.0 && s.k_v > 0.0 && s.k_u > 0.0) {
            return bad("second-order gains must be positive".into());
        }
        if self.order == Order::Second && self.estimation_mode == EstimationMode::Decentralized {
            return bad("decentralized estimation is only available for first-order scenarios".into());
        }
        if self.filter.substeps == 0 {
            return bad("filter.substeps must be at least 1".into());
        }
        Ok(())
    }

    /// Number of selection ticks: `floor(duration / T) + 1`.
    pub fn tick_count(&self) -> usize {
        crate::reference::update_count(self.duration, self.selection_period)
    }

    pub fn steps_per_tick(&self) -> usize {
        (self.selection_period / self.dt).round() as usize
    }

    pub fn total_steps(&self) -> usize {
        (self.duration / self.dt + 1e-9).floor() as usize
    }

    pub fn reference_signal(&self) -> ReferenceSignal {
        match &self.reference {
            ReferenceConfig::Random { amplitude, seed } => {
                let seed = seed.unwrap_or_else(|| {
                    rng_for(self.seed, stream::REFERENCE).random::<u64>()
                });
                ReferenceSignal::random(self.sending_period, self.duration, self.dimension, *amplitude, seed)
            }
            ReferenceConfig::Schedule { values } => ReferenceSignal {
                period: self.sending_period,
                values: values.clone(),
            },
        }
    }

    /// Stacked formation offsets.
    pub fn formation_offsets(&self) -> DVector<f64> {
        let (n, d) = (self.n_agents, self.dimension);
        match &self.formation {
            FormationConfig::Explicit { offsets } => DVector::from_iterator(n * d, offsets.iter().flatten().copied()),
            FormationConfig::Auto { spacing } => auto_formation(n, d, *spacing, self.seed),
        }
    }

    /// Positions uniform in a cube of side `initial_cube` centred at the origin.
    pub fn initial_positions(&self) -> DVector<f64> {
        let mut rng = rng_for(self.seed, stream::INITIAL);
        let h = self.initial_cube / 2.0;
        DVector::from_fn(self.n_agents * self.dimension, |_, _| rng.random_range(-h..=h))
    }
}

/// Regular polygon with unit-`spacing` sides (d = 2), a grid with ±10 %
/// jitter (d = 3), or a line (d = 1).
pub fn auto_formation(n: usize, d: usize, spacing: f64, seed: u64) -> DVector<f64> {
    let mut out = DVector::zeros(n * d);
    match d {
        1 => {
            for i in 0..n {
                out[i] = spacing * i as f64;
            }
        }
        2 => {
            let radius = spacing / (2.0 * (std::f64::consts::PI / n as f64).sin());
            for i in 0..n {
                let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                out[2 * i] = radius * a.cos();
                out[2 * i + 1] = radius * a.sin();
            }
        }
        _ => {
            let side = (n as f64).cbrt().ceil() as usize;
            let mut rng = rng_for(seed, stream::FORMATION);
            for i in 0..n {
                let cell = [i % side, (i / side) % side, i / (side * side)];
                for k in 0..3 {
                    let jitter = rng.random_range(-0.1..=0.1) * spacing;
                    out[3 * i + k] = spacing * cell[k] as f64 + jitter;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_configs_validate() {
        let c = ScenarioConfig::first_order_reference(1, 60.0, Strategy::Global);
        c.validate().unwrap();
        assert_eq!(c.tick_count(), 1201);
        assert_eq!(c.steps_per_tick(), 50);
        let s = ScenarioConfig::second_order_reference(1, 60.0, Strategy::Local);
        s.validate().unwrap();
        assert_eq!(s.topology_schedule.len(), 1);
    }

    #[test]
    fn json_round_trip() {
        let c = ScenarioConfig::first_order_reference(3, 10.0, Strategy::Local);
        let back = ScenarioConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn invalid_periods_rejected() {
        let mut c = ScenarioConfig::first_order_reference(1, 10.0, Strategy::Local);
        c.selection_period = 0.3;
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::first_order_reference(1, 10.0, Strategy::Local);
        c.dt = 0.003;
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::first_order_reference(1, 10.0, Strategy::Local);
        c.initial_leader = 11;
        assert!(c.validate().is_err());
    }

    #[test]
    fn formation_shapes() {
        let f = auto_formation(6, 2, 1.0, 0);
        let d01 = ((f[0] - f[2]).powi(2) + (f[1] - f[3]).powi(2)).sqrt();
        assert!((d01 - 1.0).abs() < 1e-12);
        let g = auto_formation(10, 3, 1.0, 4);
        assert_eq!(g.len(), 30);
        assert_eq!(g, auto_formation(10, 3, 1.0, 4));
    }

    #[test]
    fn minimal_json_uses_defaults() {
        let text = r#"{
            "order": "first", "dimension": 2, "n_agents": 4,
            "topology_schedule": [{"topology": {"kind": "line", "n_agents": 4}, "dwell": 1.0}],
            "selection_period": 0.1, "sending_period": 1.0, "duration": 2.0,
            "strategy": "global"
        }"#;
        let c = ScenarioConfig::from_json(text).unwrap();
        assert_eq!(c.dt, 1e-3);
        assert_eq!(c.initial_leader, 1);
        assert_eq!(c.first_order.k_p, 5.0);
    }
}
