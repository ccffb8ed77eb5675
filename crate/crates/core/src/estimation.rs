//! Decentralized evaluation of the first-order selection cost.
//!
//! The cost of candidate `m` splits into network sums (three vectors, four
//! scalars and `N`) plus quantities local to `m`. Each agent tracks the sums
//! with a proportional-integral average-consensus filter, and estimates its
//! own grounded connectivity `λ_{2,m}` with a shifted power iteration.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::first_order::{rate_mu, FirstOrderGains, SwarmStateFirstOrder};
use crate::graph::GraphModel;
use crate::linalg::{block, dot};

/// Network sums entering the decomposed cost.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateBundle {
    pub sum_u: Vec<f64>,
    pub sum_p: Vec<f64>,
    pub sum_ptilde: Vec<f64>,
    pub s_uu: f64,
    pub s_gg: f64,
    pub s_ug: f64,
    pub s_pp: f64,
    pub n_agents: usize,
}

impl AggregateBundle {
    /// Number of scalar consensus channels for dimension `d`.
    pub fn channels(d: usize) -> usize {
        3 * d + 4
    }

    pub fn dim(&self) -> usize {
        self.sum_u.len()
    }

    /// Flat layout `(sum_u, sum_p, sum_ptilde, s_uu, s_gg, s_ug, s_pp)`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::channels(self.dim()));
        v.extend_from_slice(&self.sum_u);
        v.extend_from_slice(&self.sum_p);
        v.extend_from_slice(&self.sum_ptilde);
        v.extend([self.s_uu, self.s_gg, self.s_ug, self.s_pp]);
        v
    }

    pub fn from_vec(v: &[f64], d: usize, n_agents: usize) -> Self {
        Self {
            sum_u: v[..d].to_vec(),
            sum_p: v[d..2 * d].to_vec(),
            sum_ptilde: v[2 * d..3 * d].to_vec(),
            s_uu: v[3 * d],
            s_gg: v[3 * d + 1],
            s_ug: v[3 * d + 2],
            s_pp: v[3 * d + 3],
            n_agents,
        }
    }

    /// Sums recovered from network averages: `N · mean`.
    pub fn from_means(means: &[f64], d: usize, n_agents: usize) -> Self {
        let sums: Vec<f64> = means.iter().map(|m| m * n_agents as f64).collect();
        Self::from_vec(&sums, d, n_agents)
    }

    /// Channel labels matching [`AggregateBundle::to_vec`].
    pub fn channel_names(d: usize) -> Vec<String> {
        let mut names = Vec::with_capacity(Self::channels(d));
        for base in ["sum_u", "sum_p", "sum_ptilde"] {
            names.extend((1..=d).map(|k| format!("{base}_{k}")));
        }
        names.extend(["s_uu", "s_gg", "s_ug", "s_pp"].map(String::from));
        names
    }

    /// Per-aggregate relative error against `exact`: vector sums use
    /// `‖x − a‖ / max(‖a‖, scale)`, scalars `|x − a| / max(|a|, scale)`.
    pub fn relative_errors(&self, exact: &AggregateBundle, scale: f64) -> [f64; 7] {
        let vec_err = |x: &[f64], a: &[f64]| {
            let diff = x.iter().zip(a).map(|(x, a)| (x - a).powi(2)).sum::<f64>().sqrt();
            diff / dot(a, a).sqrt().max(scale)
        };
        let sc = |x: f64, a: f64| (x - a).abs() / a.abs().max(scale);
        [
            vec_err(&self.sum_u, &exact.sum_u),
            vec_err(&self.sum_p, &exact.sum_p),
            vec_err(&self.sum_ptilde, &exact.sum_ptilde),
            sc(self.s_uu, exact.s_uu),
            sc(self.s_gg, exact.s_gg),
            sc(self.s_ug, exact.s_ug),
            sc(self.s_pp, exact.s_pp),
        ]
    }
}

/// Quantities agent `m` holds itself: `p_m`, `d_m`, `û_m`, `γ_m`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalQuantities {
    pub agent: usize,
    pub position: Vec<f64>,
    pub formation_offset: Vec<f64>,
    pub estimate: Vec<f64>,
    pub coupling: Vec<f64>,
}

/// `γ_i = −k_p Σ_j A_ij ((p_i − d_i) − (p_j − d_j))`, from neighbour data only.
fn local_coupling(state: &SwarmStateFirstOrder, graph: &GraphModel, k_p: f64, i: usize) -> Vec<f64> {
    let d = state.dim();
    let own = |j: usize| -> Vec<f64> {
        block(&state.positions, j, d)
            .iter()
            .zip(block(&state.formation, j, d))
            .map(|(p, o)| p - o)
            .collect()
    };
    let pi = own(i);
    let mut g = vec![0.0; d];
    for &j in graph.neighbors(i) {
        for (k, pj) in own(j).iter().enumerate() {
            g[k] -= k_p * (pi[k] - pj);
        }
    }
    g
}

pub fn local_quantities(state: &SwarmStateFirstOrder, graph: &GraphModel, k_p: f64, agent: usize) -> LocalQuantities {
    let d = state.dim();
    LocalQuantities {
        agent,
        position: block(&state.positions, agent, d).to_vec(),
        formation_offset: block(&state.formation, agent, d).to_vec(),
        estimate: state.estimates.agent(agent).to_vec(),
        coupling: local_coupling(state, graph, k_p, agent),
    }
}

/// Per-agent contributions whose network sums form the bundle; row `i` in
/// the [`AggregateBundle::to_vec`] layout.
pub fn agent_inputs(state: &SwarmStateFirstOrder, graph: &GraphModel, k_p: f64) -> DMatrix<f64> {
    let n = graph.n_agents();
    let d = state.dim();
    let mut w = DMatrix::zeros(n, AggregateBundle::channels(d));
    for i in 0..n {
        let q = local_quantities(state, graph, k_p, i);
        let pt: Vec<f64> = q.position.iter().zip(&q.formation_offset).map(|(p, o)| p - o).collect();
        for k in 0..d {
            w[(i, k)] = q.estimate[k];
            w[(i, d + k)] = q.position[k];
            w[(i, 2 * d + k)] = pt[k];
        }
        w[(i, 3 * d)] = dot(&q.estimate, &q.estimate);
        w[(i, 3 * d + 1)] = dot(&q.coupling, &q.coupling);
        w[(i, 3 * d + 2)] = dot(&q.estimate, &q.coupling);
        w[(i, 3 * d + 3)] = dot(&pt, &pt);
    }
    w
}

/// Exact centralized bundle.
pub fn aggregate_oracle(state: &SwarmStateFirstOrder, graph: &GraphModel, k_p: f64) -> AggregateBundle {
    let w = agent_inputs(state, graph, k_p);
    let sums: Vec<f64> = (0..w.ncols()).map(|c| w.column(c).sum()).collect();
    AggregateBundle::from_vec(&sums, state.dim(), graph.n_agents())
}

/// Candidate `m`'s cost from the bundle, `u_r` and its own quantities.
///
/// Uses `Σ‖e_û‖² = s_uu − 2u_rᵀΣû + N‖u_r‖² − ‖û_m − u_r‖²`,
/// `Σ‖e_v‖² = s_uu + s_gg + 2s_ug − 2u_rᵀΣû + N‖u_r‖² − ‖û_m − u_r + γ_m‖²`
/// (the sum of the `γ_i` vanishes) and
/// `Σ‖e_p‖² = s_pp − 2p̃_mᵀΣp̃ + N‖p̃_m‖²`.
pub fn assemble_cost_from_aggregates(
    local: &LocalQuantities,
    u_r: &[f64],
    bundle: &AggregateBundle,
    gains: &FirstOrderGains,
    lambda2m: f64,
    horizon: f64,
) -> Result<f64> {
    let mu = rate_mu(lambda2m, gains)?;
    let n = bundle.n_agents as f64;
    let uu = dot(u_r, u_r);
    let u_sum = dot(u_r, &bundle.sum_u);
    let du: Vec<f64> = local.estimate.iter().zip(u_r).map(|(a, b)| a - b).collect();
    let dv: Vec<f64> = du.iter().zip(&local.coupling).map(|(a, g)| a + g).collect();
    let pt: Vec<f64> = local.position.iter().zip(&local.formation_offset).map(|(p, o)| p - o).collect();

    let e_u = bundle.s_uu - 2.0 * u_sum + n * uu - dot(&du, &du);
    let e_v = bundle.s_uu + bundle.s_gg + 2.0 * bundle.s_ug - 2.0 * u_sum + n * uu - dot(&dv, &dv);
    let e_p = bundle.s_pp - 2.0 * dot(&pt, &bundle.sum_ptilde) + n * dot(&pt, &pt);
    let metric = e_u + (e_p + e_v) / gains.k_n;
    Ok(metric * (-2.0 * mu * horizon).exp())
}

/// Gains of the proportional-integral average-consensus filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterGains {
    /// Leak `γ_f` towards the local input.
    pub leak: f64,
    pub k_p: f64,
    pub k_i: f64,
    /// RK4 sub-steps per simulation step.
    pub substeps: usize,
}

impl Default for FilterGains {
    fn default() -> Self {
        Self {
            leak: 40.0,
            k_p: 600.0,
            k_i: 300.0,
            substeps: 10,
        }
    }
}

/// Norm growth beyond which the filter is declared unstable.
pub const FILTER_DIVERGENCE_RATIO: f64 = 1e6;

/// Per-agent average estimates `x` and integral states `q`, one row per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusFilterState {
    pub x: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub gains: FilterGains,
}

impl ConsensusFilterState {
    /// `x(0) = w`, `q(0) = 0`.
    pub fn new(inputs: &DMatrix<f64>, gains: FilterGains) -> Self {
        Self {
            x: inputs.clone(),
            q: DMatrix::zeros(inputs.nrows(), inputs.ncols()),
            gains,
        }
    }

    pub fn estimate(&self, agent: usize) -> Vec<f64> {
        self.x.row(agent).iter().copied().collect()
    }
}

fn filter_rhs(
    l: &DMatrix<f64>,
    g: &FilterGains,
    x: &DMatrix<f64>,
    q: &DMatrix<f64>,
    w: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let lx = l * x;
    let dx = (w - x) * g.leak - &lx * g.k_p + (l * q) * g.k_i;
    let dq = lx * (-g.k_i);
    (dx, dq)
}

fn filter_rk4(
    filter: &ConsensusFilterState,
    l: &DMatrix<f64>,
    w0: &DMatrix<f64>,
    w1: &DMatrix<f64>,
    h: f64,
) -> ConsensusFilterState {
    let g = &filter.gains;
    let wm = (w0 + w1) * 0.5;
    let (x, q) = (&filter.x, &filter.q);
    let (k1x, k1q) = filter_rhs(l, g, x, q, w0);
    let (k2x, k2q) = filter_rhs(l, g, &(x + &k1x * (h / 2.0)), &(q + &k1q * (h / 2.0)), &wm);
    let (k3x, k3q) = filter_rhs(l, g, &(x + &k2x * (h / 2.0)), &(q + &k2q * (h / 2.0)), &wm);
    let (k4x, k4q) = filter_rhs(l, g, &(x + &k3x * h), &(q + &k3q * h), w1);
    ConsensusFilterState {
        x: x + (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0),
        q: q + (k1q + k2q * 2.0 + k3q * 2.0 + k4q) * (h / 6.0),
        gains: filter.gains,
    }
}

fn check_divergence(next: &ConsensusFilterState, w: &DMatrix<f64>) -> Result<()> {
    let norm = next.x.norm() + next.q.norm();
    if !norm.is_finite() || norm > FILTER_DIVERGENCE_RATIO * (1.0 + w.norm()) {
        return Err(Error::FilterDiverged(norm));
    }
    Ok(())
}

/// One RK4 step of `ẋ = γ_f(w − x) − K_P L x + K_I L q`, `q̇ = −K_I L x`
/// with constant inputs.
pub fn consensus_filter_step(
    filter: &ConsensusFilterState,
    graph: &GraphModel,
    inputs: &DMatrix<f64>,
    dt: f64,
) -> Result<ConsensusFilterState> {
    let next = filter_rk4(filter, graph.laplacian(), inputs, inputs, dt);
    check_divergence(&next, inputs)?;
    Ok(next)
}

/// Advances over `dt` with inputs interpolated linearly from `w0` to `w1`,
/// using the configured number of sub-steps.
pub fn advance_filter(
    filter: &ConsensusFilterState,
    graph: &GraphModel,
    w0: &DMatrix<f64>,
    w1: &DMatrix<f64>,
    dt: f64,
) -> Result<ConsensusFilterState> {
    let n = filter.gains.substeps.max(1);
    let h = dt / n as f64;
    let mut cur = filter.clone();
    for s in 0..n {
        let a = w0 + (w1 - w0) * (s as f64 / n as f64);
        let b = w0 + (w1 - w0) * ((s + 1) as f64 / n as f64);
        cur = filter_rk4(&cur, graph.laplacian(), &a, &b, h);
    }
    check_divergence(&cur, w1)?;
    Ok(cur)
}

/// Shifted power iteration on `M_m`, carried on the full agent vector with
/// the candidate's own component pinned at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerIterationState {
    pub leader: usize,
    pub iterate: DVector<f64>,
    pub shift: f64,
    /// Rayleigh quotient `yᵀ M_m y` of the current unit iterate.
    pub estimate: f64,
    pub rounds: usize,
    pub restarts: usize,
    seed: u64,
}

/// `α = 1 + 2 · max degree`, an upper bound on `λ_N ≥ λ_{N,m}`.
pub fn power_iteration_shift(graph: &GraphModel) -> f64 {
    1.0 + 2.0 * graph.max_degree() as f64
}

fn random_unit(n: usize, leader: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let mut y = DVector::from_fn(n, |i, _| if i == leader { 0.0 } else { rng.random_range(0.5..1.5) });
    y /= y.norm();
    y
}

// (M_m y)_i = Σ_j L_ij y_j for i ≠ m; each agent only needs its neighbours.
fn grounded_apply(graph: &GraphModel, leader: usize, y: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(graph.n_agents(), |i, _| {
        if i == leader {
            return 0.0;
        }
        graph.degree(i) as f64 * y[i] - graph.neighbors(i).iter().map(|&j| y[j]).sum::<f64>()
    })
}

impl PowerIterationState {
    pub fn new(graph: &GraphModel, leader: usize, seed: u64) -> Result<Self> {
        let n = graph.n_agents();
        if leader >= n {
            return Err(Error::InvalidAgent { index: leader, n_agents: n });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let iterate = random_unit(n, leader, &mut rng);
        let estimate = iterate.dot(&grounded_apply(graph, leader, &iterate));
        Ok(Self {
            leader,
            iterate,
            shift: power_iteration_shift(graph),
            estimate,
            rounds: 0,
            restarts: 0,
            seed,
        })
    }

    /// `‖M_m y − estimate · y‖` for the current unit iterate.
    pub fn residual(&self, graph: &GraphModel) -> f64 {
        (grounded_apply(graph, self.leader, &self.iterate) - &self.iterate * self.estimate).norm()
    }
}

/// One round `y ← (αI − M_m) y / ‖·‖`; the norm is the network-wide sum of
/// squares, which agents obtain by average consensus (evaluated exactly
/// here).
pub fn grounded_power_iteration_step(state: &PowerIterationState, graph: &GraphModel) -> PowerIterationState {
    let my = grounded_apply(graph, state.leader, &state.iterate);
    let z = &state.iterate * state.shift - my;
    let norm = z.norm();
    let mut next = state.clone();
    next.rounds += 1;
    if norm < 1e-150 || !norm.is_finite() {
        next.restarts += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(state.seed.wrapping_add(next.restarts as u64));
        next.iterate = random_unit(graph.n_agents(), state.leader, &mut rng);
    } else {
        next.iterate = z / norm;
    }
    next.estimate = next.iterate.dot(&grounded_apply(graph, state.leader, &next.iterate));
    next
}

/// Runs rounds until the residual drops below `tolerance` or `max_rounds`
/// is reached.
pub fn estimate_lambda2(
    graph: &GraphModel,
    leader: usize,
    max_rounds: usize,
    tolerance: f64,
    seed: u64,
) -> Result<PowerIterationState> {
    let mut state = PowerIterationState::new(graph, leader, seed)?;
    while state.rounds < max_rounds && state.residual(graph) > tolerance {
        state = grounded_power_iteration_step(&state, graph);
    }
    Ok(state)
}
