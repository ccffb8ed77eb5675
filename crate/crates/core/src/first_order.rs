//! Single-integrator collective tracking.
//!
//! Followers run `ṗ = û + k_p G_l (p − d)`, the leader moves with the
//! reference. The error metric `‖e‖²_{k_n}` weights position and velocity
//! errors by `1/k_n`; its decay over an inter-switch interval is certified by
//! the rate `μ_l`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphModel, GroundedSpectrum};
use crate::linalg::{
    block_matrix, eigenvalues_symmetric, kron_apply, kron_identity, multiset_gap, sym, zero_block,
};
use crate::reference::{clamp_leader, estimation_error, EstimateField};

/// Tolerance for agreement between closed-form and numeric certificate spectra.
pub const CERTIFICATE_TOLERANCE: f64 = 1e-8;

/// Margin applied on top of the minimal feasible metric weight.
pub const DEFAULT_KN_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderGains {
    pub k_p: f64,
    pub k_u: f64,
    pub k_n: f64,
}

impl FirstOrderGains {
    pub fn new(k_p: f64, k_u: f64, k_n: f64) -> Self {
        Self { k_p, k_u, k_n }
    }

    /// Gains with `k_n` chosen just above the feasibility threshold for the
    /// smallest grounded connectivity `lambda_star` that will be encountered.
    pub fn with_auto_metric(k_p: f64, k_u: f64, lambda_star: f64) -> Self {
        Self::new(k_p, k_u, metric_weight_for(lambda_star, k_p, k_u, DEFAULT_KN_MARGIN))
    }

    pub fn k1(&self) -> f64 {
        self.k_p + self.k_n * self.k_u
    }

    pub fn k2(&self) -> f64 {
        let diff = self.k_p - self.k_n * self.k_u;
        self.k_u * self.k_u + diff * diff
    }

    /// `λ² (4 k_n k_p k_u − k_u²) > 1`.
    pub fn is_feasible(&self, lambda2l: f64) -> bool {
        lambda2l * lambda2l * (4.0 * self.k_n * self.k_p * self.k_u - self.k_u * self.k_u) > 1.0
    }
}

/// `(1 + margin) (1/λ*² + k_u²) / (4 k_p k_u)`.
pub fn metric_weight_for(lambda_star: f64, k_p: f64, k_u: f64, margin: f64) -> f64 {
    (1.0 + margin) * (1.0 / (lambda_star * lambda_star) + k_u * k_u) / (4.0 * k_p * k_u)
}

/// Positions, estimates and formation offsets; velocity is algebraic.
#[derive(Debug, Clone, PartialEq)]
pub struct SwarmStateFirstOrder {
    pub positions: DVector<f64>,
    pub estimates: EstimateField,
    pub formation: DVector<f64>,
}

impl SwarmStateFirstOrder {
    pub fn dim(&self) -> usize {
        self.estimates.dim
    }

    pub fn n_agents(&self) -> usize {
        self.positions.len() / self.dim()
    }

    fn check(&self, n_agents: usize) -> Result<()> {
        let expected = n_agents * self.dim();
        for len in [
            self.positions.len(),
            self.formation.len(),
            self.estimates.estimates.len(),
        ] {
            if len != expected {
                return Err(Error::DimensionMismatch {
                    expected,
                    actual: len,
                });
            }
        }
        Ok(())
    }
}

/// Errors `(e_p, e_v, e_û)` and the coupling term `γ = −k_p (L ⊗ I_d)(p − d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStateFirstOrder {
    pub formation_error: DVector<f64>,
    pub velocity_error: DVector<f64>,
    pub estimation_error: DVector<f64>,
    pub coupling: DVector<f64>,
    pub dim: usize,
}

impl ErrorStateFirstOrder {
    /// Stacked `(e_p, e_v, e_û)`.
    pub fn stacked(&self) -> DVector<f64> {
        let n = self.formation_error.len();
        let mut out = DVector::zeros(3 * n);
        out.rows_mut(0, n).copy_from(&self.formation_error);
        out.rows_mut(n, n).copy_from(&self.velocity_error);
        out.rows_mut(2 * n, n).copy_from(&self.estimation_error);
        out
    }
}

/// `ṗ = û + k_p G_l (p − d)`.
pub fn control_rate_first(
    state: &SwarmStateFirstOrder,
    spectrum: &GroundedSpectrum,
    gains: &FirstOrderGains,
) -> Result<DVector<f64>> {
    let l = spectrum.grounded_laplacian();
    state.check(l.nrows())?;
    let offset = &state.positions - &state.formation;
    Ok(&state.estimates.estimates - kron_apply(l, &offset, state.dim()) * gains.k_p)
}

/// `γ = −k_p (L ⊗ I_d)(p − d)`, built from the full Laplacian.
pub fn coupling_term(graph: &GraphModel, state: &SwarmStateFirstOrder, k_p: f64) -> DVector<f64> {
    let offset = &state.positions - &state.formation;
    kron_apply(graph.laplacian(), &offset, state.dim()) * (-k_p)
}

/// `(p − 1⊗p_l) − (d − 1⊗d_l)`.
pub(crate) fn formation_error(positions: &DVector<f64>, formation: &DVector<f64>, leader: usize, d: usize) -> DVector<f64> {
    let tilde = positions - formation;
    let anchor: Vec<f64> = tilde.as_slice()[leader * d..(leader + 1) * d].to_vec();
    DVector::from_iterator(tilde.len(), tilde.iter().enumerate().map(|(k, x)| x - anchor[k % d]))
}

/// Errors of the current state under a fixed leader (used between ticks).
pub fn tracking_errors_first(
    state: &SwarmStateFirstOrder,
    graph: &GraphModel,
    spectrum: &GroundedSpectrum,
    gains: &FirstOrderGains,
    u_r: &[f64],
) -> Result<ErrorStateFirstOrder> {
    let d = state.dim();
    let velocity = control_rate_first(state, spectrum, gains)?;
    let velocity_error = DVector::from_iterator(
        velocity.len(),
        velocity.iter().enumerate().map(|(k, v)| v - u_r[k % d]),
    );
    Ok(ErrorStateFirstOrder {
        formation_error: formation_error(&state.positions, &state.formation, spectrum.leader(), d),
        velocity_error,
        estimation_error: estimation_error(&state.estimates, u_r),
        coupling: coupling_term(graph, state, gains.k_p),
        dim: d,
    })
}

/// Leader switch at a tick.
///
/// Clamps the new leader's estimate, keeps positions continuous and returns
/// the errors at `t_k`: every block is masked by `S_{l_k}` so the new
/// leader's blocks are zero. The input state is not modified.
pub fn reset_first(
    state: &SwarmStateFirstOrder,
    graph: &GraphModel,
    new_leader: usize,
    u_r: &[f64],
    gains: &FirstOrderGains,
) -> Result<(SwarmStateFirstOrder, ErrorStateFirstOrder)> {
    let n = graph.n_agents();
    state.check(n)?;
    let d = state.dim();
    let estimates = clamp_leader(&state.estimates, new_leader, u_r)?;
    let coupling = coupling_term(graph, state, gains.k_p);
    let mut e_p = formation_error(&state.positions, &state.formation, new_leader, d);
    let mut e_u = estimation_error(&state.estimates, u_r);
    let mut e_v = &e_u + &coupling;
    zero_block(&mut e_p, new_leader, d);
    zero_block(&mut e_u, new_leader, d);
    zero_block(&mut e_v, new_leader, d);
    let next = SwarmStateFirstOrder {
        positions: state.positions.clone(),
        estimates,
        formation: state.formation.clone(),
    };
    Ok((
        next,
        ErrorStateFirstOrder {
            formation_error: e_p,
            velocity_error: e_v,
            estimation_error: e_u,
            coupling,
            dim: d,
        },
    ))
}

/// `‖e‖²_{k_n} = e_ûᵀe_û + (e_pᵀe_p + e_vᵀe_v) / k_n`.
pub fn metric_first(errors: &ErrorStateFirstOrder, gains: &FirstOrderGains) -> f64 {
    errors.estimation_error.norm_squared()
        + (errors.formation_error.norm_squared() + errors.velocity_error.norm_squared()) / gains.k_n
}

/// Certified decay rate `μ_l = (λ k_1 − √(1 + λ² k_2)) / (2 k_n)`.
pub fn rate_mu(lambda2l: f64, gains: &FirstOrderGains) -> Result<f64> {
    if !gains.is_feasible(lambda2l) {
        return Err(Error::InfeasibleMetricWeight {
            k_n: gains.k_n,
            lambda2l,
        });
    }
    Ok(mu_closed_form(lambda2l, gains))
}

fn mu_closed_form(lambda: f64, gains: &FirstOrderGains) -> f64 {
    (lambda * gains.k1() - (1.0 + lambda * lambda * gains.k2()).sqrt()) / (2.0 * gains.k_n)
}

/// The three closed-form eigenvalues of the symmetrised metric derivative for
/// one eigenvalue `a` of the (negative definite) reduced drift generator.
pub fn q_eigenvalues(a: f64, gains: &FirstOrderGains) -> [f64; 3] {
    let root = (1.0 + a * a * gains.k2()).sqrt();
    [
        gains.k_p * a / gains.k_n,
        (a * gains.k1() - root) / (2.0 * gains.k_n),
        (a * gains.k1() + root) / (2.0 * gains.k_n),
    ]
}

/// Reduced error drift `D_l` acting on the follower blocks of `(e_p, e_v, e_û)`.
pub fn reduced_drift_first(spectrum: &GroundedSpectrum, gains: &FirstOrderGains, d: usize) -> DMatrix<f64> {
    let g = kron_identity(spectrum.reduced_matrix(), d) * -1.0;
    let m = g.nrows();
    let z = DMatrix::zeros(m, m);
    let i = DMatrix::identity(m, m);
    block_matrix(&[
        vec![&g * gains.k_p, z.clone(), i],
        vec![z.clone(), &g * gains.k_p, &g * gains.k_u],
        vec![z.clone(), z, &g * gains.k_u],
    ])
}

/// Metric matrix restricted to the follower blocks.
pub fn reduced_metric_first(n_followers: usize, gains: &FirstOrderGains, d: usize) -> DMatrix<f64> {
    let m = n_followers * d;
    let diag = DVector::from_iterator(
        3 * m,
        (0..3 * m).map(|k| if k < 2 * m { 1.0 / gains.k_n } else { 1.0 }),
    );
    DMatrix::from_diagonal(&diag)
}

#[derive(Debug, Clone, Serialize)]
pub struct FirstOrderCertificate {
    pub leader: usize,
    pub lambda2l: f64,
    /// Sorted spectrum of `sym(P D_l)` from the Jacobi solver.
    pub numeric: Vec<f64>,
    /// Sorted closed-form values `{μ_1, μ_2, μ_3}` over every grounded eigenvalue.
    pub closed_form: Vec<f64>,
    pub max_gap: f64,
    pub rate: f64,
}

/// Assembles `sym(P D_l)` and checks it against the closed-form spectrum;
/// its largest eigenvalue must equal `−μ_l`.
pub fn certificate_first(
    spectrum: &GroundedSpectrum,
    gains: &FirstOrderGains,
    d: usize,
) -> Result<FirstOrderCertificate> {
    let rate = rate_mu(spectrum.lambda2(), gains)?;
    let drift = reduced_drift_first(spectrum, gains, d);
    let metric = reduced_metric_first(spectrum.eigenvalues().len(), gains, d);
    let numeric = eigenvalues_symmetric(&sym(&(metric * drift)))?;
    let mut closed_form: Vec<f64> = spectrum
        .eigenvalues()
        .iter()
        .flat_map(|&lambda| q_eigenvalues(-lambda, gains))
        .flat_map(|mu| std::iter::repeat_n(mu, d))
        .collect();
    closed_form.sort_by(f64::total_cmp);
    let max_gap = multiset_gap(&numeric, &closed_form).expect("equal sizes");
    if max_gap > CERTIFICATE_TOLERANCE {
        return Err(Error::CertificateMismatch(format!(
            "first-order spectra differ by {max_gap:e} (leader {})",
            spectrum.leader() + 1
        )));
    }
    let top = *numeric.last().expect("non-empty");
    if top >= 0.0 || (top + rate).abs() > CERTIFICATE_TOLERANCE {
        return Err(Error::CertificateMismatch(format!(
            "largest eigenvalue {top} does not equal -mu = {}",
            -rate
        )));
    }
    Ok(FirstOrderCertificate {
        leader: spectrum.leader(),
        lambda2l: spectrum.lambda2(),
        numeric,
        closed_form,
        max_gap,
        rate,
    })
}
