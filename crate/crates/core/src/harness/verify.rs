//! Certificates and structural checks for the graphs and gains of a scenario.

use nalgebra::DVector;
use rand::Rng;
use serde::Serialize;

use super::config::{rng_for, stream, Order, ScenarioConfig};
use super::sim::{prepare_topologies, resolve_first_gains, resolve_second_gains, PreparedTopology};
use crate::error::Result;
use crate::estimation::{aggregate_oracle, assemble_cost_from_aggregates, estimate_lambda2, local_quantities};
use crate::first_order::{certificate_first, SwarmStateFirstOrder};
use crate::graph::{GraphModel, GroundedSpectrum};
use crate::linalg::{eigenvalues_general, eigenvalues_symmetric, multiset_gap};
use crate::reference::EstimateField;
use crate::second_order::{certificate_second, check_pl_definite};
use crate::selection::cost_first;

pub const PROPERTY_TOLERANCE: f64 = 1e-12;
pub const SPECTRUM_TOLERANCE: f64 = 1e-8;
pub const INTERLACING_TOLERANCE: f64 = 1e-9;
pub const POWER_ITERATION_ACCURACY: f64 = 1e-4;
pub const COST_EQUIVALENCE_TOLERANCE: f64 = 1e-9;
const RANDOM_STATES: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub check: String,
    pub topology: String,
    /// 1-based; absent for graph-wide checks.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leader: Option<usize>,
    pub passed: bool,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Residuals of the grounding identities for one leader:
/// `‖L_l 1‖`, `‖M_l 1 + ℓ_l‖`, `min σ(M_l)` and the gap between `σ(L_l)`
/// and `σ(M_l) ∪ {0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroundingResiduals {
    pub row_sum: f64,
    pub coupling: f64,
    pub min_eigenvalue: f64,
    pub spectrum_gap: f64,
}

impl GroundingResiduals {
    pub fn holds(&self) -> bool {
        self.row_sum <= PROPERTY_TOLERANCE
            && self.coupling <= PROPERTY_TOLERANCE
            && self.min_eigenvalue > 0.0
            && self.spectrum_gap <= SPECTRUM_TOLERANCE
    }
}

pub fn grounding_residuals(spectrum: &GroundedSpectrum) -> Result<GroundingResiduals> {
    let ll = spectrum.grounded_laplacian();
    let m = spectrum.reduced_matrix();
    let row_sum = (ll * DVector::from_element(ll.nrows(), 1.0)).norm();
    let coupling = (m * DVector::from_element(m.nrows(), 1.0) + spectrum.coupling_column()).norm();
    // L_l is not symmetric; its spectrum is σ(M_l) ∪ {0} because the
    // leader row is zero, so compare against the general eigen-solver.
    let mut grounded: Vec<f64> = eigenvalues_general(ll)?.iter().map(|c| c.re).collect();
    grounded.sort_by(f64::total_cmp);
    let spectrum_gap = multiset_gap(&grounded, &spectrum.full_spectrum_with_zero()).unwrap_or(f64::INFINITY);
    Ok(GroundingResiduals {
        row_sum,
        coupling,
        min_eigenvalue: spectrum.lambda2(),
        spectrum_gap,
    })
}

/// Largest violation of `λ_{i,l} ≤ λ_i` over `i` (non-positive when the
/// interlacing holds).
pub fn interlacing_violation(graph: &GraphModel, spectrum: &GroundedSpectrum) -> Result<f64> {
    let full = eigenvalues_symmetric(graph.laplacian())?;
    Ok(spectrum
        .full_spectrum_with_zero()
        .iter()
        .zip(&full)
        .map(|(g, l)| g - l)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Random first-order state with positions and estimates in `[−s, s]`.
pub fn random_first_order_state(
    n: usize,
    d: usize,
    k_u: f64,
    scale: f64,
    rng: &mut impl Rng,
) -> SwarmStateFirstOrder {
    let mut draw = |len: usize| DVector::from_fn(len, |_, _| rng.random_range(-scale..=scale));
    SwarmStateFirstOrder {
        positions: draw(n * d),
        estimates: EstimateField::new(draw(n * d), k_u, d),
        formation: draw(n * d),
    }
}

fn check(check: &str, topo: &PreparedTopology, leader: Option<usize>, passed: bool, value: f64) -> CheckResult {
    CheckResult {
        check: check.into(),
        topology: topo.label.clone(),
        leader: leader.map(|l| l + 1),
        passed,
        value,
        detail: None,
    }
}

fn failed(check: &str, topo: &PreparedTopology, leader: Option<usize>, detail: String) -> CheckResult {
    CheckResult {
        check: check.into(),
        topology: topo.label.clone(),
        leader: leader.map(|l| l + 1),
        passed: false,
        value: f64::NAN,
        detail: Some(detail),
    }
}

/// Runs every structural check, the certificates for the configured order
/// and gains, the power-iteration accuracy check and (first order) the
/// aggregate-cost equivalence on random states.
pub fn verify(config: &ScenarioConfig) -> Result<VerifyReport> {
    config.validate()?;
    let topologies = prepare_topologies(config)?;
    let d = config.dimension;
    let mut checks = Vec::new();

    for topo in &topologies {
        for s in &topo.spectra {
            let l = Some(s.leader());
            let r = grounding_residuals(s)?;
            checks.push(check("grounding_identities", topo, l, r.holds(), r.spectrum_gap.max(r.row_sum)));
            let v = interlacing_violation(&topo.graph, s)?;
            checks.push(check("interlacing", topo, l, v <= INTERLACING_TOLERANCE, v));
            let est = estimate_lambda2(
                &topo.graph,
                s.leader(),
                super::sim::POWER_ITERATION_ROUNDS,
                super::sim::POWER_ITERATION_TOLERANCE,
                config.seed,
            )?;
            let err = (est.estimate - s.lambda2()).abs();
            checks.push(check("power_iteration", topo, l, err < POWER_ITERATION_ACCURACY, err));
        }
    }

    match config.order {
        Order::First => {
            let gains = resolve_first_gains(config, &topologies);
            let mut rng = rng_for(config.seed, stream::VERIFY);
            for topo in &topologies {
                for s in &topo.spectra {
                    let l = Some(s.leader());
                    checks.push(match certificate_first(s, &gains, d) {
                        Ok(c) => check("decay_certificate_first", topo, l, true, c.rate),
                        Err(e) => failed("decay_certificate_first", topo, l, e.to_string()),
                    });
                }
                let mut worst: f64 = 0.0;
                let u_r: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
                for _ in 0..RANDOM_STATES {
                    let state = random_first_order_state(config.n_agents, d, gains.k_u, 2.0, &mut rng);
                    let bundle = aggregate_oracle(&state, &topo.graph, gains.k_p);
                    for s in &topo.spectra {
                        let m = s.leader();
                        let exact = cost_first(m, &state, &topo.graph, s, &gains, &u_r, config.selection_period)?;
                        let local = local_quantities(&state, &topo.graph, gains.k_p, m);
                        let assembled = assemble_cost_from_aggregates(
                            &local,
                            &u_r,
                            &bundle,
                            &gains,
                            s.lambda2(),
                            config.selection_period,
                        )?;
                        worst = worst.max((assembled - exact).abs() / exact.max(1.0));
                    }
                }
                checks.push(check(
                    "aggregate_cost_equivalence",
                    topo,
                    None,
                    worst <= COST_EQUIVALENCE_TOLERANCE,
                    worst,
                ));
            }
        }
        Order::Second => {
            let gains = resolve_second_gains(config, &topologies)?;
            for topo in &topologies {
                let pl = check_pl_definite(&topo.graph, &gains)?;
                checks.push(check("metric_definite", topo, None, pl.definite, pl.min_eigenvalue));
                for s in &topo.spectra {
                    let l = Some(s.leader());
                    checks.push(match certificate_second(s, topo.lambda_n, &gains, d) {
                        Ok(c) => match c.rate {
                            Some(nu) => check("decay_certificate_second", topo, l, nu > 0.0, nu),
                            None => CheckResult {
                                passed: config.allow_infeasible,
                                detail: c.infeasibility,
                                ..check("decay_certificate_second", topo, l, false, f64::NAN)
                            },
                        },
                        Err(e) => failed("decay_certificate_second", topo, l, e.to_string()),
                    });
                }
            }
        }
    }
    Ok(VerifyReport { checks })
}
