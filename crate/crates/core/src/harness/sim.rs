//! Fixed-step closed-loop simulation with leader selection at every tick.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{rng_for, stream, EstimationMode, Order, ScenarioConfig};
use crate::error::{Error, Result};
use crate::estimation::{
    advance_filter, agent_inputs, aggregate_oracle, assemble_cost_from_aggregates, estimate_lambda2,
    local_quantities, AggregateBundle, ConsensusFilterState,
};
use crate::first_order::{
    control_rate_first, metric_first, metric_weight_for, rate_mu, reset_first, tracking_errors_first, FirstOrderGains,
    SwarmStateFirstOrder,
};
use crate::graph::{build_topology, ground_all, GraphModel, GroundedSpectrum};
use crate::integrate::rk4_step;
use crate::reference::{estimator_rate, EstimateField, ReferenceSignal};
use crate::second_order::{
    control_rate_second, lemma_bounds, rate_nu_for, reset_second, select_feasible_gains_for,
    tracking_errors_second, SecondOrderGains, SecondOrderMetric, SwarmStateSecondOrder,
};
use crate::selection::{
    candidate_set, cost_first, cost_table, decide, handoff_messages, select, CostTable, Message, Strategy,
};

/// Metric value beyond which a run is aborted.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Power-iteration budget used by the decentralized mode.
pub const POWER_ITERATION_ROUNDS: usize = 10_000;
pub const POWER_ITERATION_TOLERANCE: f64 = 1e-10;

/// Scale below which aggregate errors are measured absolutely.
pub const AGGREGATE_ERROR_SCALE: f64 = 1.0;

/// Comparison of the decentralized choice with the exact one at a tick.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecentralizedTick {
    pub oracle_leader: usize,
    pub matches: bool,
    /// Gap between the best and second-best exact cost.
    pub oracle_margin: Option<f64>,
    /// Worst relative error over agents, per aggregate
    /// (`sum_u, sum_p, sum_ptilde, s_uu, s_gg, s_ug, s_pp`).
    pub aggregate_error: [f64; 7],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TickRecord {
    pub tick: usize,
    pub t: f64,
    pub previous_leader: usize,
    pub leader: usize,
    /// Metric right after the reset.
    pub metric: f64,
    /// Index into the topology schedule.
    pub topology: usize,
    pub u_r: Vec<f64>,
    pub costs: Option<CostTable>,
    pub decentralized: Option<DecentralizedTick>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: f64,
    pub leader: usize,
    pub topology: usize,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchEvent {
    pub tick: usize,
    pub t: f64,
    pub from: usize,
    pub to: usize,
}

/// One sample of one agent's filter output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterSample {
    pub t: f64,
    pub agent: usize,
    pub estimate_kind: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSummary {
    pub strategy: Strategy,
    /// Time average of the squared metric over `[0, duration)`.
    pub avg_metric: f64,
    /// Time average of the metric's square root.
    pub avg_norm: f64,
    pub final_metric: f64,
    pub switches_per_quarter: [usize; 4],
    pub total_switches: usize,
    /// Fraction of ticks where decentralized and exact choices agree.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leader_match_fraction: Option<f64>,
    /// Worst per-aggregate error over ticks after the first sending period.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_aggregate_error: Option<[f64; 7]>,
}

/// Gains actually used by a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ResolvedGains {
    First(FirstOrderGains),
    Second(SecondOrderGains),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimTrace {
    pub config: ScenarioConfig,
    pub gains: ResolvedGains,
    pub topology_labels: Vec<String>,
    pub reference: ReferenceSignal,
    /// `(activation time, value)` of every reference update inside the run.
    pub reference_updates: Vec<(f64, Vec<f64>)>,
    pub ticks: Vec<TickRecord>,
    pub steps: Vec<StepRecord>,
    pub switches: Vec<SwitchEvent>,
    pub messages: Vec<Message>,
    pub filter_samples: Vec<FilterSample>,
    /// Decentralized choices that differed from the exact one.
    pub divergences: Vec<usize>,
    pub warnings: Vec<String>,
    pub summary: TraceSummary,
}

/// Spectral data of one schedule entry.
#[derive(Debug, Clone)]
pub struct PreparedTopology {
    pub label: String,
    pub graph: GraphModel,
    pub spectra: Vec<GroundedSpectrum>,
    pub lambda_n: f64,
    /// Decentralized `λ_{2,m}` estimates, one per agent.
    pub lambda2_estimates: Option<Vec<f64>>,
}

pub fn prepare_topologies(config: &ScenarioConfig) -> Result<Vec<PreparedTopology>> {
    config
        .topology_schedule
        .iter()
        .enumerate()
        .map(|(idx, phase)| {
            let graph = build_topology(&phase.topology)?;
            let spectra = ground_all(&graph)?;
            let lambda_n = *graph.laplacian_spectrum()?.last().expect("non-empty");
            let lambda2_estimates = if config.estimation_mode == EstimationMode::Decentralized {
                let mut est = Vec::with_capacity(graph.n_agents());
                for m in 0..graph.n_agents() {
                    let seed = rng_seed(config.seed, idx, m);
                    let s = estimate_lambda2(&graph, m, POWER_ITERATION_ROUNDS, POWER_ITERATION_TOLERANCE, seed)?;
                    est.push(s.estimate);
                }
                Some(est)
            } else {
                None
            };
            Ok(PreparedTopology {
                label: phase.topology.label(),
                graph,
                spectra,
                lambda_n,
                lambda2_estimates,
            })
        })
        .collect()
}

fn rng_seed(seed: u64, topology: usize, agent: usize) -> u64 {
    use rand::Rng;
    let mut rng = rng_for(seed, stream::POWER_ITERATION);
    let skip = topology * 1000 + agent;
    for _ in 0..skip {
        rng.random::<u64>();
    }
    rng.random()
}

/// Maps step indices to schedule entries.
#[derive(Debug, Clone)]
struct PhaseClock {
    bounds: Vec<usize>,
    cycle: bool,
}

impl PhaseClock {
    fn new(config: &ScenarioConfig) -> Self {
        let mut acc = 0;
        let bounds = config
            .topology_schedule
            .iter()
            .map(|p| {
                acc += (p.dwell / config.dt).round() as usize;
                acc
            })
            .collect();
        Self {
            bounds,
            cycle: config.cycle_topologies,
        }
    }

    fn phase_at(&self, step: usize) -> usize {
        let total = *self.bounds.last().expect("non-empty schedule");
        let s = if self.cycle { step % total } else { step };
        self.bounds.iter().position(|&b| s < b).unwrap_or(self.bounds.len() - 1)
    }
}

/// `k_n` for the schedule: explicit, or derived from the smallest grounded
/// connectivity over every topology and leader.
pub fn resolve_first_gains(config: &ScenarioConfig, topologies: &[PreparedTopology]) -> FirstOrderGains {
    let g = &config.first_order;
    let k_n = g.k_n.unwrap_or_else(|| {
        let lambda_star = min_lambda2(topologies);
        metric_weight_for(lambda_star, g.k_p, g.k_u, g.kn_margin)
    });
    FirstOrderGains::new(g.k_p, g.k_u, k_n)
}

fn min_lambda2(topologies: &[PreparedTopology]) -> f64 {
    topologies
        .iter()
        .flat_map(|t| t.spectra.iter().map(GroundedSpectrum::lambda2))
        .fold(f64::INFINITY, f64::min)
}

/// Metric weights shared by every topology and leader of the schedule.
pub fn resolve_second_gains(config: &ScenarioConfig, topologies: &[PreparedTopology]) -> Result<SecondOrderGains> {
    let c = &config.second_order;
    let weights = match (c.k_n1, c.k_n2, c.k_n3) {
        (Some(k_n1), Some(k_n2), Some(k_n3)) => (k_n1, k_n2, k_n3),
        (None, None, None) => {
            let lambda_star = min_lambda2(topologies);
            let lambda_nl = topologies
                .iter()
                .flat_map(|t| t.spectra.iter().map(GroundedSpectrum::lambda_max))
                .fold(0.0, f64::max);
            let lambda_n = topologies.iter().map(|t| t.lambda_n).fold(0.0, f64::max);
            let g = select_feasible_gains_for(lambda_star, lambda_nl, lambda_n, c.b);
            (g.k_n1, g.k_n2, g.k_n3)
        }
        _ => {
            return Err(Error::InvalidConfig(
                "give all of k_n1, k_n2, k_n3 or none of them".into(),
            ))
        }
    };
    Ok(SecondOrderGains {
        b: c.b,
        k_v: c.k_v,
        k_u: c.k_u,
        k_n1: weights.0,
        k_n2: weights.1,
        k_n3: weights.2,
    })
}

/// Per-leader decay rates `ν_m` for one topology. Outside the feasibility
/// box the rate is either rejected or, with `allow_infeasible`, replaced by
/// the uncertified value `−max{z̄_1, z̄_2, z_3}`.
fn second_order_rates(
    topo: &PreparedTopology,
    gains: &SecondOrderGains,
    allow_infeasible: bool,
    warnings: &mut Vec<String>,
) -> Result<Vec<f64>> {
    let mut rates = Vec::with_capacity(topo.spectra.len());
    let mut uncertified = Vec::new();
    for s in &topo.spectra {
        match rate_nu_for(s, topo.lambda_n, gains) {
            Ok(nu) => rates.push(nu),
            Err(e) if allow_infeasible => {
                let nu = -lemma_bounds(s.lambda2(), s.lambda_max(), gains)
                    .into_iter()
                    .fold(f64::NEG_INFINITY, f64::max);
                uncertified.push(format!("{}", s.leader() + 1));
                if uncertified.len() == 1 {
                    warnings.push(format!("{}: {e}", topo.label));
                }
                rates.push(nu);
            }
            Err(e) => return Err(e),
        }
    }
    if !uncertified.is_empty() {
        warnings.push(format!(
            "{}: uncertified decay rates used for leaders {}",
            topo.label,
            uncertified.join(",")
        ));
    }
    Ok(rates)
}

fn check_metric(t: f64, metric: f64) -> Result<f64> {
    if !metric.is_finite() || metric > DIVERGENCE_THRESHOLD {
        return Err(Error::Divergence { t, metric });
    }
    Ok(metric)
}

/// Closed loop under one order of dynamics.
trait Plant {
    fn metric(&self, topo: usize, leader: usize, u_r: &[f64]) -> Result<f64>;
    fn select(
        &mut self,
        tick: usize,
        topo: usize,
        current: usize,
        u_r: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<(usize, Option<CostTable>, Option<DecentralizedTick>)>;
    fn reset(&mut self, leader: usize, u_r: &[f64]) -> Result<()>;
    fn step(&mut self, topo: usize, leader: usize, dt: f64) -> Result<()>;
    fn filter_samples(&self, _t: f64, _out: &mut Vec<FilterSample>) {}
}

struct FirstOrderPlant<'a> {
    config: &'a ScenarioConfig,
    topologies: &'a [PreparedTopology],
    gains: FirstOrderGains,
    state: SwarmStateFirstOrder,
    filter: Option<ConsensusFilterState>,
}

impl FirstOrderPlant<'_> {
    fn exact_cost(&self, topo: usize, m: usize, u_r: &[f64]) -> Result<f64> {
        let t = &self.topologies[topo];
        cost_first(m, &self.state, &t.graph, &t.spectra[m], &self.gains, u_r, self.config.selection_period)
    }
}

impl Plant for FirstOrderPlant<'_> {
    fn metric(&self, topo: usize, leader: usize, u_r: &[f64]) -> Result<f64> {
        let t = &self.topologies[topo];
        let e = tracking_errors_first(&self.state, &t.graph, &t.spectra[leader], &self.gains, u_r)?;
        Ok(metric_first(&e, &self.gains))
    }

    fn select(
        &mut self,
        _tick: usize,
        topo: usize,
        current: usize,
        u_r: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<(usize, Option<CostTable>, Option<DecentralizedTick>)> {
        let strategy = self.config.strategy;
        let tie = self.config.tie_break;
        let t = &self.topologies[topo];
        let Some(filter) = self.filter.as_ref().filter(|_| matches!(strategy, Strategy::Local | Strategy::Global))
        else {
            let sel = select(strategy, current, &t.graph, tie, rng, |m| self.exact_cost(topo, m, u_r))?;
            return Ok((sel.leader, sel.table, None));
        };

        let candidates = candidate_set(&t.graph, strategy, current);
        let estimates = t.lambda2_estimates.as_ref().expect("decentralized topologies carry estimates");
        let n = t.graph.n_agents();
        let d = self.config.dimension;
        let kp = self.gains.k_p;
        let table = cost_table(&candidates, |m| {
            let bundle = AggregateBundle::from_means(&filter.estimate(m), d, n);
            let local = local_quantities(&self.state, &t.graph, kp, m);
            assemble_cost_from_aggregates(&local, u_r, &bundle, &self.gains, estimates[m], self.config.selection_period)
        })?;
        let mut oracle_rng = rng.clone();
        let leader = decide(current, &table.argmin, tie, rng);
        let exact = cost_table(&candidates, |m| self.exact_cost(topo, m, u_r))?;
        let oracle_leader = decide(current, &exact.argmin, tie, &mut oracle_rng);

        let truth = aggregate_oracle(&self.state, &t.graph, kp);
        let mut aggregate_error = [0.0f64; 7];
        for i in 0..n {
            let est = AggregateBundle::from_means(&filter.estimate(i), d, n);
            for (acc, e) in aggregate_error.iter_mut().zip(est.relative_errors(&truth, AGGREGATE_ERROR_SCALE)) {
                *acc = acc.max(e);
            }
        }
        let info = DecentralizedTick {
            oracle_leader,
            matches: oracle_leader == leader,
            oracle_margin: exact.margin(),
            aggregate_error,
        };
        Ok((leader, Some(table), Some(info)))
    }

    fn reset(&mut self, leader: usize, u_r: &[f64]) -> Result<()> {
        // The graph only enters the returned errors, not the new state.
        let graph = &self.topologies[0].graph;
        let (next, _) = reset_first(&self.state, graph, leader, u_r, &self.gains)?;
        self.state = next;
        Ok(())
    }

    fn step(&mut self, topo: usize, leader: usize, dt: f64) -> Result<()> {
        let t = &self.topologies[topo];
        let spectrum = &t.spectra[leader];
        let nd = self.state.positions.len();
        let mut x = DVector::zeros(2 * nd);
        x.rows_mut(0, nd).copy_from(&self.state.positions);
        x.rows_mut(nd, nd).copy_from(&self.state.estimates.estimates);
        let template = self.state.clone();
        let gains = self.gains;
        let next = rk4_step(&x, dt, |y| {
            let mut s = template.clone();
            s.positions.copy_from(&y.rows(0, nd));
            s.estimates.estimates.copy_from(&y.rows(nd, nd));
            let pdot = control_rate_first(&s, spectrum, &gains)?;
            let udot = estimator_rate(&s.estimates, spectrum)?;
            let mut out = DVector::zeros(2 * nd);
            out.rows_mut(0, nd).copy_from(&pdot);
            out.rows_mut(nd, nd).copy_from(&udot);
            Ok(out)
        })?;
        let w0 = self.filter.as_ref().map(|_| agent_inputs(&self.state, &t.graph, gains.k_p));
        self.state.positions.copy_from(&next.rows(0, nd));
        self.state.estimates.estimates.copy_from(&next.rows(nd, nd));
        if let (Some(filter), Some(w0)) = (self.filter.as_ref(), w0) {
            let w1 = agent_inputs(&self.state, &t.graph, gains.k_p);
            self.filter = Some(advance_filter(filter, &t.graph, &w0, &w1, dt)?);
        }
        Ok(())
    }

    fn filter_samples(&self, t: f64, out: &mut Vec<FilterSample>) {
        let Some(filter) = &self.filter else { return };
        let names = AggregateBundle::channel_names(self.config.dimension);
        let n = self.config.n_agents as f64;
        for agent in 0..filter.x.nrows() {
            for (c, name) in names.iter().enumerate() {
                out.push(FilterSample {
                    t,
                    agent: agent + 1,
                    estimate_kind: name.clone(),
                    value: filter.x[(agent, c)] * n,
                });
            }
        }
    }
}

struct SecondOrderPlant<'a> {
    config: &'a ScenarioConfig,
    topologies: &'a [PreparedTopology],
    metrics: Vec<SecondOrderMetric>,
    rates: Vec<Vec<f64>>,
    gains: SecondOrderGains,
    state: SwarmStateSecondOrder,
}

impl Plant for SecondOrderPlant<'_> {
    fn metric(&self, topo: usize, leader: usize, u_r: &[f64]) -> Result<f64> {
        Ok(self.metrics[topo].evaluate(&tracking_errors_second(&self.state, leader, u_r)))
    }

    fn select(
        &mut self,
        _tick: usize,
        topo: usize,
        current: usize,
        u_r: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<(usize, Option<CostTable>, Option<DecentralizedTick>)> {
        let t = &self.topologies[topo];
        let horizon = self.config.selection_period;
        let sel = select(self.config.strategy, current, &t.graph, self.config.tie_break, rng, |m| {
            let (_, e) = reset_second(&self.state, m, u_r)?;
            Ok(self.metrics[topo].evaluate(&e) * (-2.0 * self.rates[topo][m] * horizon).exp())
        })?;
        Ok((sel.leader, sel.table, None))
    }

    fn reset(&mut self, leader: usize, u_r: &[f64]) -> Result<()> {
        self.state = reset_second(&self.state, leader, u_r)?.0;
        Ok(())
    }

    fn step(&mut self, topo: usize, leader: usize, dt: f64) -> Result<()> {
        let spectrum = &self.topologies[topo].spectra[leader];
        let nd = self.state.positions.len();
        let mut x = DVector::zeros(3 * nd);
        x.rows_mut(0, nd).copy_from(&self.state.positions);
        x.rows_mut(nd, nd).copy_from(&self.state.velocities);
        x.rows_mut(2 * nd, nd).copy_from(&self.state.estimates.estimates);
        let template = self.state.clone();
        let gains = self.gains;
        let next = rk4_step(&x, dt, |y| {
            let mut s = template.clone();
            s.positions.copy_from(&y.rows(0, nd));
            s.velocities.copy_from(&y.rows(nd, nd));
            s.estimates.estimates.copy_from(&y.rows(2 * nd, nd));
            let (pdot, vdot) = control_rate_second(&s, spectrum, &gains)?;
            let udot = estimator_rate(&s.estimates, spectrum)?;
            let mut out = DVector::zeros(3 * nd);
            out.rows_mut(0, nd).copy_from(&pdot);
            out.rows_mut(nd, nd).copy_from(&vdot);
            out.rows_mut(2 * nd, nd).copy_from(&udot);
            Ok(out)
        })?;
        self.state.positions.copy_from(&next.rows(0, nd));
        self.state.velocities.copy_from(&next.rows(nd, nd));
        self.state.estimates.estimates.copy_from(&next.rows(2 * nd, nd));
        Ok(())
    }
}

/// Runs one scenario to completion.
pub fn run_scenario(config: &ScenarioConfig) -> Result<SimTrace> {
    config.validate()?;
    let topologies = prepare_topologies(config)?;
    let reference = config.reference_signal();
    let d = config.dimension;
    let n = config.n_agents;
    let l0 = config.initial_leader - 1;
    let positions = config.initial_positions();
    let formation = config.formation_offsets();
    let mut warnings = Vec::new();

    match config.order {
        Order::First => {
            let gains = resolve_first_gains(config, &topologies);
            for t in &topologies {
                for s in &t.spectra {
                    rate_mu(s.lambda2(), &gains)?;
                }
            }
            let estimates = EstimateField::initial(n, d, gains.k_u, l0, reference.value_at(0.0));
            let state = SwarmStateFirstOrder {
                positions,
                estimates,
                formation,
            };
            let filter = (config.estimation_mode == EstimationMode::Decentralized).then(|| {
                ConsensusFilterState::new(&agent_inputs(&state, &topologies[0].graph, gains.k_p), config.filter)
            });
            let mut plant = FirstOrderPlant {
                config,
                topologies: &topologies,
                gains,
                state,
                filter,
            };
            simulate(config, &topologies, &reference, ResolvedGains::First(gains), &mut plant, warnings)
        }
        Order::Second => {
            let gains = resolve_second_gains(config, &topologies)?;
            let mut metrics = Vec::with_capacity(topologies.len());
            let mut rates = Vec::with_capacity(topologies.len());
            for t in &topologies {
                metrics.push(SecondOrderMetric::new(&t.graph, &gains)?);
                rates.push(second_order_rates(t, &gains, config.allow_infeasible, &mut warnings)?);
            }
            let state = SwarmStateSecondOrder {
                positions,
                velocities: DVector::zeros(n * d),
                estimates: EstimateField::initial(n, d, gains.k_u, l0, reference.value_at(0.0)),
                formation,
            };
            let mut plant = SecondOrderPlant {
                config,
                topologies: &topologies,
                metrics,
                rates,
                gains,
                state,
            };
            simulate(config, &topologies, &reference, ResolvedGains::Second(gains), &mut plant, warnings)
        }
    }
}

fn simulate(
    config: &ScenarioConfig,
    topologies: &[PreparedTopology],
    reference: &ReferenceSignal,
    gains: ResolvedGains,
    plant: &mut dyn Plant,
    warnings: Vec<String>,
) -> Result<SimTrace> {
    let clock = PhaseClock::new(config);
    let dt = config.dt;
    let spt = config.steps_per_tick();
    let total_steps = config.total_steps();
    let record_filter = config.outputs.filter_trace.is_some();
    let mut rng = rng_for(config.seed, stream::STRATEGY);

    let mut ticks = Vec::with_capacity(config.tick_count());
    let mut steps = Vec::with_capacity(if config.record_steps { total_steps } else { 0 });
    let mut switches = Vec::new();
    let mut messages = Vec::new();
    let mut filter_samples = Vec::new();
    let mut divergences = Vec::new();
    let (mut sum_metric, mut sum_norm) = (0.0, 0.0);
    let mut leader = config.initial_leader - 1;
    let mut final_metric = f64::NAN;

    for k in 0..config.tick_count() {
        let j0 = k * spt;
        let t = j0 as f64 * dt;
        let topo = clock.phase_at(j0);
        let u_r = reference.value_at(t).to_vec();
        let (next, costs, dec) = plant.select(k, topo, leader, &u_r, &mut rng)?;
        if matches!(config.strategy, Strategy::Local | Strategy::Global) {
            let candidates = candidate_set(&topologies[topo].graph, config.strategy, leader);
            messages.extend(handoff_messages(k, &topologies[topo].graph, leader, next, config.dimension, &candidates)?);
        }
        if let Some(info) = &dec {
            if !info.matches {
                divergences.push(k);
            }
        }
        if next != leader {
            switches.push(SwitchEvent {
                tick: k,
                t,
                from: leader,
                to: next,
            });
        }
        plant.reset(next, &u_r)?;
        let previous_leader = leader;
        leader = next;
        let metric = check_metric(t, plant.metric(topo, leader, &u_r)?)?;
        if record_filter {
            plant.filter_samples(t, &mut filter_samples);
        }
        ticks.push(TickRecord {
            tick: k,
            t,
            previous_leader,
            leader,
            metric,
            topology: topo,
            u_r: u_r.clone(),
            costs,
            decentralized: dec,
        });
        final_metric = metric;

        for j in j0..(j0 + spt).min(total_steps) {
            let tj = j as f64 * dt;
            let topo_j = clock.phase_at(j);
            let m = if j == j0 {
                metric
            } else {
                check_metric(tj, plant.metric(topo_j, leader, &u_r)?)?
            };
            sum_metric += m;
            sum_norm += m.max(0.0).sqrt();
            if config.record_steps {
                steps.push(StepRecord {
                    t: tj,
                    leader,
                    topology: topo_j,
                    metric: m,
                });
            }
            plant.step(topo_j, leader, dt)?;
            if j + 1 == total_steps && (j + 1) % spt != 0 {
                final_metric = check_metric(
                    (j + 1) as f64 * dt,
                    plant.metric(clock.phase_at(j + 1), leader, &u_r)?,
                )?;
            }
        }
    }

    let quarter = config.duration / 4.0;
    let mut switches_per_quarter = [0usize; 4];
    for s in &switches {
        let q = if quarter > 0.0 { ((s.t / quarter) as usize).min(3) } else { 0 };
        switches_per_quarter[q] += 1;
    }
    let denom = total_steps.max(1) as f64;
    let dec_ticks: Vec<&DecentralizedTick> = ticks.iter().filter_map(|t| t.decentralized.as_ref()).collect();
    let leader_match_fraction =
        (!dec_ticks.is_empty()).then(|| dec_ticks.iter().filter(|d| d.matches).count() as f64 / dec_ticks.len() as f64);
    let max_aggregate_error = (!dec_ticks.is_empty()).then(|| {
        let mut worst = [0.0f64; 7];
        for t in ticks.iter().filter(|t| t.t >= config.sending_period - 1e-9) {
            if let Some(info) = &t.decentralized {
                for (w, e) in worst.iter_mut().zip(info.aggregate_error) {
                    *w = w.max(e);
                }
            }
        }
        worst
    });
    let summary = TraceSummary {
        strategy: config.strategy,
        avg_metric: if total_steps == 0 { final_metric } else { sum_metric / denom },
        avg_norm: if total_steps == 0 { final_metric.sqrt() } else { sum_norm / denom },
        final_metric,
        switches_per_quarter,
        total_switches: switches.len(),
        leader_match_fraction,
        max_aggregate_error,
    };
    let reference_updates = reference
        .schedule(config.duration)
        .into_iter()
        .map(|(t, v)| (t, v.to_vec()))
        .collect();
    Ok(SimTrace {
        config: config.clone(),
        gains,
        topology_labels: topologies.iter().map(|t| t.label.clone()).collect(),
        reference: reference.clone(),
        reference_updates,
        ticks,
        steps,
        switches,
        messages,
        filter_samples,
        divergences,
        warnings,
        summary,
    })
}

/// Stacked inputs of every agent; exposed for tests of the filter layer.
pub fn filter_inputs(state: &SwarmStateFirstOrder, graph: &GraphModel, k_p: f64) -> DMatrix<f64> {
    agent_inputs(state, graph, k_p)
}
