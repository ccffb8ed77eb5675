//! Leader selection: per-candidate costs, the four strategies and the
//! hand-off message protocol.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::first_order::{metric_first, rate_mu, reset_first, FirstOrderGains, SwarmStateFirstOrder};
use crate::graph::{GraphModel, GroundedSpectrum};
use crate::second_order::{rate_nu_for, reset_second, SecondOrderMetric, SwarmStateSecondOrder};

/// Relative tolerance under which two costs count as equal.
pub const COST_TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Constant,
    Random,
    Local,
    Global,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Constant, Strategy::Local, Strategy::Global, Strategy::Random];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Constant => "constant",
            Strategy::Random => "random",
            Strategy::Local => "local",
            Strategy::Global => "global",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Strategy::Constant),
            "random" => Ok(Strategy::Random),
            "local" => Ok(Strategy::Local),
            "global" => Ok(Strategy::Global),
            other => Err(Error::InvalidConfig(format!("unknown strategy `{other}`"))),
        }
    }
}

/// How to choose among several minimizers when the current leader is not one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    LowestIndex,
    SeededRandom,
}

/// Selection and sending periods plus the current leader.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeaderSchedule {
    pub selection_period: f64,
    pub sending_period: f64,
    pub current_leader: usize,
    pub tick_index: usize,
}

impl LeaderSchedule {
    /// Requires `0 < T ≤ T_r` with `T_r / T` an integer.
    pub fn new(selection_period: f64, sending_period: f64, initial_leader: usize) -> Result<Self> {
        if !(selection_period > 0.0 && selection_period <= sending_period) {
            return Err(Error::InvalidConfig(format!(
                "selection period {selection_period} must satisfy 0 < T <= T_r = {sending_period}"
            )));
        }
        if !is_integer_ratio(sending_period, selection_period) {
            return Err(Error::InvalidConfig(format!(
                "T_r / T = {} is not an integer",
                sending_period / selection_period
            )));
        }
        Ok(Self {
            selection_period,
            sending_period,
            current_leader: initial_leader,
            tick_index: 0,
        })
    }

    pub fn tick_time(&self, k: usize) -> f64 {
        k as f64 * self.selection_period
    }

    /// Ticks per reference update.
    pub fn ticks_per_update(&self) -> usize {
        (self.sending_period / self.selection_period).round() as usize
    }

    /// Candidates allowed for `strategy`, sorted by index.
    pub fn candidate_set(&self, graph: &GraphModel, strategy: Strategy) -> Vec<usize> {
        candidate_set(graph, strategy, self.current_leader)
    }
}

/// `a / b` is an integer up to relative rounding `1e-9`.
pub fn is_integer_ratio(a: f64, b: f64) -> bool {
    let r = a / b;
    r >= 1.0 - 1e-9 && (r - r.round()).abs() <= 1e-9 * r.max(1.0)
}

/// `𝒩_l ∪ {l}` for the local strategy, every agent for global, `{l}` for
/// constant. Random draws from every agent.
pub fn candidate_set(graph: &GraphModel, strategy: Strategy, current: usize) -> Vec<usize> {
    match strategy {
        Strategy::Constant => vec![current],
        Strategy::Local => {
            let mut c: Vec<usize> = graph.neighbors(current).to_vec();
            c.push(current);
            c.sort_unstable();
            c
        }
        Strategy::Global | Strategy::Random => (0..graph.n_agents()).collect(),
    }
}

/// `‖e(t_k, m)‖²_{k_n} e^{−2 μ_m T}` for hypothetical leader `m`; the state
/// is not modified.
pub fn cost_first(
    candidate: usize,
    state: &SwarmStateFirstOrder,
    graph: &GraphModel,
    spectrum: &GroundedSpectrum,
    gains: &FirstOrderGains,
    u_r: &[f64],
    horizon: f64,
) -> Result<f64> {
    debug_assert_eq!(spectrum.leader(), candidate);
    let mu = rate_mu(spectrum.lambda2(), gains)?;
    let (_, errors) = reset_first(state, graph, candidate, u_r, gains)?;
    Ok(metric_first(&errors, gains) * (-2.0 * mu * horizon).exp())
}

/// `‖e(t_k, m)‖²_L e^{−2 ν_m T}`; fails with `InfeasibleGains` when the
/// weights are outside the feasibility box for `m`.
pub fn cost_second(
    candidate: usize,
    state: &SwarmStateSecondOrder,
    metric: &SecondOrderMetric,
    spectrum: &GroundedSpectrum,
    u_r: &[f64],
    horizon: f64,
) -> Result<f64> {
    debug_assert_eq!(spectrum.leader(), candidate);
    let nu = rate_nu_for(spectrum, metric.lambda_n(), metric.gains())?;
    let (_, errors) = reset_second(state, candidate, u_r)?;
    Ok(metric.evaluate(&errors) * (-2.0 * nu * horizon).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateCost {
    pub candidate: usize,
    pub cost: Option<f64>,
    /// Why the candidate was not evaluated.
    pub excluded: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostTable {
    pub entries: Vec<CandidateCost>,
    /// Minimizers (sorted); empty only when every candidate was excluded.
    pub argmin: Vec<usize>,
}

impl CostTable {
    pub fn cost_of(&self, candidate: usize) -> Option<f64> {
        self.entries.iter().find(|e| e.candidate == candidate).and_then(|e| e.cost)
    }

    pub fn min_cost(&self) -> Option<f64> {
        self.entries.iter().filter_map(|e| e.cost).reduce(f64::min)
    }

    /// Gap between the best and the second-best distinct cost.
    pub fn margin(&self) -> Option<f64> {
        let best = self.min_cost()?;
        self.entries
            .iter()
            .filter_map(|e| e.cost)
            .filter(|&c| !costs_equal(c, best))
            .reduce(f64::min)
            .map(|c| c - best)
    }
}

/// `|a − b| ≤ 1e−12 · max(1, a)`.
pub fn costs_equal(a: f64, b: f64) -> bool {
    (a - b).abs() <= COST_TIE_TOLERANCE * a.max(1.0)
}

fn is_infeasibility(e: &Error) -> bool {
    matches!(e, Error::InfeasibleGains(_) | Error::InfeasibleMetricWeight { .. })
}

/// Evaluates `cost` on every candidate; infeasible candidates are recorded as
/// excluded, other errors abort.
pub fn cost_table(candidates: &[usize], mut cost: impl FnMut(usize) -> Result<f64>) -> Result<CostTable> {
    let mut entries = Vec::with_capacity(candidates.len());
    for &m in candidates {
        match cost(m) {
            Ok(c) => entries.push(CandidateCost {
                candidate: m,
                cost: Some(c),
                excluded: None,
            }),
            Err(e) if is_infeasibility(&e) => entries.push(CandidateCost {
                candidate: m,
                cost: None,
                excluded: Some(e.to_string()),
            }),
            Err(e) => return Err(e),
        }
    }
    let mut table = CostTable {
        entries,
        argmin: Vec::new(),
    };
    if let Some(best) = table.min_cost() {
        table.argmin = table
            .entries
            .iter()
            .filter(|e| e.cost.is_some_and(|c| costs_equal(c, best)))
            .map(|e| e.candidate)
            .collect();
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub leader: usize,
    pub table: Option<CostTable>,
}

/// One selection step.
///
/// Constant keeps the leader, random draws uniformly from every agent, local
/// and global minimize `cost` over their candidate sets. The current leader
/// is kept whenever it is among the minimizers.
pub fn select(
    strategy: Strategy,
    current: usize,
    graph: &GraphModel,
    tie_break: TieBreak,
    rng: &mut ChaCha8Rng,
    cost: impl FnMut(usize) -> Result<f64>,
) -> Result<Selection> {
    match strategy {
        Strategy::Constant => Ok(Selection {
            leader: current,
            table: None,
        }),
        Strategy::Random => Ok(Selection {
            leader: rng.random_range(0..graph.n_agents()),
            table: None,
        }),
        Strategy::Local | Strategy::Global => {
            let table = cost_table(&candidate_set(graph, strategy, current), cost)?;
            let leader = decide(current, &table.argmin, tie_break, rng);
            Ok(Selection {
                leader,
                table: Some(table),
            })
        }
    }
}

/// Keep-current rule followed by the tie-break.
pub fn decide(current: usize, argmin: &[usize], tie_break: TieBreak, rng: &mut ChaCha8Rng) -> usize {
    if argmin.is_empty() || argmin.contains(&current) {
        return current;
    }
    match tie_break {
        TieBreak::LowestIndex => argmin[0],
        TieBreak::SeededRandom => argmin[rng.random_range(0..argmin.len())],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Agent(usize),
    Planner,
}

impl Serialize for Endpoint {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Endpoint::Agent(i) => s.serialize_u64(*i as u64 + 1),
            Endpoint::Planner => s.serialize_str("planner"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    ReferenceBroadcast,
    CostReply,
    Nomination,
    PlannerNotification,
}

/// A simulated protocol message; agent endpoints serialize 1-based.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Message {
    pub tick: usize,
    pub from: Endpoint,
    pub to: Endpoint,
    pub kind: MessageKind,
    /// Number of scalars carried.
    pub payload_size: usize,
}

/// Message sequence of one selection round led by `old`.
///
/// `old` sends `u_r` to each neighbour, every neighbour replies with its
/// cost, `old` nominates `new` when the leader changes, and the leader
/// notifies the planner: `2|𝒩| + 2` messages, or `2|𝒩| + 1` without a change.
pub fn handoff_messages(
    tick: usize,
    graph: &GraphModel,
    old: usize,
    new: usize,
    dim: usize,
    candidates: &[usize],
) -> Result<Vec<Message>> {
    if !candidates.contains(&new) {
        return Err(Error::NominationOutsideCandidates { target: new + 1 });
    }
    let neighbors = graph.neighbors(old);
    let mut out = Vec::with_capacity(2 * neighbors.len() + 2);
    let msg = |from, to, kind, payload_size| Message {
        tick,
        from,
        to,
        kind,
        payload_size,
    };
    for &j in neighbors {
        out.push(msg(Endpoint::Agent(old), Endpoint::Agent(j), MessageKind::ReferenceBroadcast, dim));
    }
    for &j in neighbors {
        out.push(msg(Endpoint::Agent(j), Endpoint::Agent(old), MessageKind::CostReply, 1));
    }
    if new != old {
        out.push(msg(Endpoint::Agent(old), Endpoint::Agent(new), MessageKind::Nomination, dim));
    }
    out.push(msg(Endpoint::Agent(new), Endpoint::Planner, MessageKind::PlannerNotification, 1));
    Ok(out)
}

/// Messages as JSON lines.
pub fn messages_jsonl(messages: &[Message]) -> String {
    messages
        .iter()
        .map(|m| serde_json::to_string(m).expect("plain struct") + "\n")
        .collect()
}
