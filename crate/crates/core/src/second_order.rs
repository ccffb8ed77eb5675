//! Double-integrator collective tracking.
//!
//! Agents obey `ṗ = v`, `v̇ = b(û − v) + k_v G_l (p − d)`. Tracking quality is
//! measured with the quadratic form `eᵀ P_L e` whose weights `k_n1, k_n2,
//! k_n3` must satisfy a definiteness condition and, for a certified decay
//! rate `ν_l`, a feasibility box that depends on the grounded spectrum.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::first_order::{formation_error, CERTIFICATE_TOLERANCE};
use crate::graph::{GraphModel, GroundedSpectrum};
use crate::linalg::{block_matrix, eigenvalues_general, eigenvalues_symmetric, kron_apply, kron_identity, multiset_gap, sym, zero_block};
use crate::reference::{clamp_leader, estimation_error, EstimateField};

/// Slack allowed on `max σ(sym(P_M D)) ≤ −ν`.
pub const RATE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderGains {
    pub b: f64,
    pub k_v: f64,
    pub k_u: f64,
    pub k_n1: f64,
    pub k_n2: f64,
    pub k_n3: f64,
}

impl SecondOrderGains {
    /// Gains with `k_v = k_u = 1`.
    pub fn unit(b: f64, k_n1: f64, k_n2: f64, k_n3: f64) -> Self {
        Self {
            b,
            k_v: 1.0,
            k_u: 1.0,
            k_n1,
            k_n2,
            k_n3,
        }
    }

    pub fn has_unit_gains(&self) -> bool {
        self.k_v == 1.0 && self.k_u == 1.0
    }

    /// `0 < k_n2 < k_n1 / √λ_N`.
    pub fn metric_is_definite(&self, lambda_n: f64) -> bool {
        self.k_n1 > 0.0 && self.k_n3 > 0.0 && self.k_n2 > 0.0 && self.k_n2 < self.k_n1 / lambda_n.sqrt()
    }

    /// Checks the feasibility box for one leader; `Err` names the first
    /// violated condition.
    pub fn check_feasible(&self, lambda2l: f64, lambda_nl: f64, lambda_n: f64) -> Result<()> {
        let fail = |msg: String| Err(Error::InfeasibleGains(msg));
        if !self.has_unit_gains() {
            return fail(format!("rate requires k_v = k_u = 1 (got {}, {})", self.k_v, self.k_u));
        }
        if !(self.b > 0.0 && self.k_n1 > 0.0 && self.k_n2 > 0.0 && self.k_n3 > 0.0) {
            return fail("gains must be positive".into());
        }
        if self.b >= lambda2l {
            return fail(format!("b = {} must be below lambda_2,l = {lambda2l}", self.b));
        }
        if self.k_n1 >= 2.0 * lambda2l / self.b {
            return fail(format!("k_n1 = {} must be below 2 lambda_2,l / b = {}", self.k_n1, 2.0 * lambda2l / self.b));
        }
        let bound = k_n2_bound(self.b, self.k_n1, lambda2l, lambda_nl, lambda_n);
        if self.k_n2 >= bound {
            return fail(format!("k_n2 = {} must be below {bound}", self.k_n2));
        }
        let k3 = self.b * self.k_n2 * lambda2l / 2.0;
        if self.k_n3 >= k3 {
            return fail(format!("k_n3 = {} must be below b k_n2 lambda_2,l / 2 = {k3}", self.k_n3));
        }
        Ok(())
    }
}

/// `min{b k_n1 / (λ_{N,l}(2 + b)), 2/b − k_n1/λ_{2,l}, k_n1/√λ_N}`.
pub fn k_n2_bound(b: f64, k_n1: f64, lambda2l: f64, lambda_nl: f64, lambda_n: f64) -> f64 {
    (b * k_n1 / (lambda_nl * (2.0 + b)))
        .min(2.0 / b - k_n1 / lambda2l)
        .min(k_n1 / lambda_n.sqrt())
}

/// Interior point of the feasibility box for the given spectral data.
pub fn select_feasible_gains_for(lambda2l: f64, lambda_nl: f64, lambda_n: f64, b_hint: f64) -> SecondOrderGains {
    let b = b_hint.min(0.9 * lambda2l);
    let k_n1 = 0.5 * (2.0 * lambda2l / b);
    let k_n2 = 0.75 * k_n2_bound(b, k_n1, lambda2l, lambda_nl, lambda_n);
    let k_n3 = 0.8 * b * k_n2 * lambda2l / 2.0;
    SecondOrderGains::unit(b, k_n1, k_n2, k_n3)
}

/// [`select_feasible_gains_for`] using the spectrum of `leader` and the
/// graph's largest Laplacian eigenvalue.
pub fn select_feasible_gains(spectrum: &GroundedSpectrum, lambda_n: f64, b_hint: f64) -> SecondOrderGains {
    select_feasible_gains_for(spectrum.lambda2(), spectrum.lambda_max(), lambda_n, b_hint)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwarmStateSecondOrder {
    pub positions: DVector<f64>,
    pub velocities: DVector<f64>,
    pub estimates: EstimateField,
    pub formation: DVector<f64>,
}

impl SwarmStateSecondOrder {
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
            self.velocities.len(),
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

/// `(e_p, e_v, e_û)` with `e_v = v − 1⊗v_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStateSecondOrder {
    pub formation_error: DVector<f64>,
    pub velocity_error: DVector<f64>,
    pub estimation_error: DVector<f64>,
    pub dim: usize,
}

impl ErrorStateSecondOrder {
    pub fn stacked(&self) -> DVector<f64> {
        let n = self.formation_error.len();
        let mut out = DVector::zeros(3 * n);
        out.rows_mut(0, n).copy_from(&self.formation_error);
        out.rows_mut(n, n).copy_from(&self.velocity_error);
        out.rows_mut(2 * n, n).copy_from(&self.estimation_error);
        out
    }
}

/// `(ṗ, v̇) = (v, b(û − v) + k_v G_l (p − d))`.
pub fn control_rate_second(
    state: &SwarmStateSecondOrder,
    spectrum: &GroundedSpectrum,
    gains: &SecondOrderGains,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let l = spectrum.grounded_laplacian();
    state.check(l.nrows())?;
    let offset = &state.positions - &state.formation;
    let accel = (&state.estimates.estimates - &state.velocities) * gains.b
        - kron_apply(l, &offset, state.dim()) * gains.k_v;
    Ok((state.velocities.clone(), accel))
}

fn relative_velocity(velocities: &DVector<f64>, leader: usize, d: usize) -> DVector<f64> {
    let anchor: Vec<f64> = velocities.as_slice()[leader * d..(leader + 1) * d].to_vec();
    DVector::from_iterator(
        velocities.len(),
        velocities.iter().enumerate().map(|(k, v)| v - anchor[k % d]),
    )
}

/// Errors of the current state under a fixed leader.
pub fn tracking_errors_second(state: &SwarmStateSecondOrder, leader: usize, u_r: &[f64]) -> ErrorStateSecondOrder {
    let d = state.dim();
    ErrorStateSecondOrder {
        formation_error: formation_error(&state.positions, &state.formation, leader, d),
        velocity_error: relative_velocity(&state.velocities, leader, d),
        estimation_error: estimation_error(&state.estimates, u_r),
        dim: d,
    }
}

/// Leader switch at a tick: positions and velocities are continuous, the new
/// leader's estimate is clamped, and every error block of the new leader is
/// zero.
pub fn reset_second(
    state: &SwarmStateSecondOrder,
    new_leader: usize,
    u_r: &[f64],
) -> Result<(SwarmStateSecondOrder, ErrorStateSecondOrder)> {
    state.check(state.n_agents())?;
    let d = state.dim();
    let estimates = clamp_leader(&state.estimates, new_leader, u_r)?;
    let mut e_u = estimation_error(&state.estimates, u_r);
    zero_block(&mut e_u, new_leader, d);
    let next = SwarmStateSecondOrder {
        positions: state.positions.clone(),
        velocities: state.velocities.clone(),
        estimates,
        formation: state.formation.clone(),
    };
    let errors = ErrorStateSecondOrder {
        formation_error: formation_error(&state.positions, &state.formation, new_leader, d),
        velocity_error: relative_velocity(&state.velocities, new_leader, d),
        estimation_error: e_u,
        dim: d,
    };
    Ok((next, errors))
}

/// The quadratic form `eᵀ P_L e` for a fixed graph and weights.
#[derive(Debug, Clone)]
pub struct SecondOrderMetric {
    laplacian: DMatrix<f64>,
    gains: SecondOrderGains,
    lambda_n: f64,
}

impl SecondOrderMetric {
    /// Rejects weights that do not satisfy the definiteness condition.
    pub fn new(graph: &GraphModel, gains: &SecondOrderGains) -> Result<Self> {
        let lambda_n = *graph.laplacian_spectrum()?.last().expect("non-empty graph");
        if !gains.metric_is_definite(lambda_n) {
            return Err(Error::InfeasibleGains(format!(
                "metric weights need 0 < k_n2 < k_n1/sqrt(lambda_N) = {} (k_n2 = {})",
                gains.k_n1 / lambda_n.sqrt(),
                gains.k_n2
            )));
        }
        Ok(Self::unchecked(graph, gains, lambda_n))
    }

    /// No definiteness check; used for deliberately degenerate weights.
    pub fn unchecked(graph: &GraphModel, gains: &SecondOrderGains, lambda_n: f64) -> Self {
        Self {
            laplacian: graph.laplacian().clone(),
            gains: *gains,
            lambda_n,
        }
    }

    pub fn lambda_n(&self) -> f64 {
        self.lambda_n
    }

    pub fn gains(&self) -> &SecondOrderGains {
        &self.gains
    }

    /// `k_n1 e_pᵀGe_p + k_n3‖e_p‖² + 2k_n2 e_pᵀGe_v + k_n1‖e_v‖² + ‖e_û‖²`.
    pub fn evaluate(&self, e: &ErrorStateSecondOrder) -> f64 {
        let g = &self.gains;
        let gp = kron_apply(&self.laplacian, &e.formation_error, e.dim);
        g.k_n1 * e.formation_error.dot(&gp)
            + g.k_n3 * e.formation_error.norm_squared()
            + 2.0 * g.k_n2 * e.velocity_error.dot(&gp)
            + g.k_n1 * e.velocity_error.norm_squared()
            + e.estimation_error.norm_squared()
    }
}

/// `eᵀ P_L e`; fails when the weights do not guarantee `P_L ≻ 0`.
pub fn metric_second(errors: &ErrorStateSecondOrder, gains: &SecondOrderGains, graph: &GraphModel) -> Result<f64> {
    Ok(SecondOrderMetric::new(graph, gains)?.evaluate(errors))
}

/// Dense `P_L` over all `3Nd` error coordinates.
pub fn metric_matrix(laplacian: &DMatrix<f64>, gains: &SecondOrderGains, d: usize) -> DMatrix<f64> {
    let g = kron_identity(laplacian, d);
    let n = g.nrows();
    let i = DMatrix::identity(n, n);
    let z = DMatrix::zeros(n, n);
    block_matrix(&[
        vec![&g * gains.k_n1 + &i * gains.k_n3, &g * gains.k_n2, z.clone()],
        vec![&g * gains.k_n2, &i * gains.k_n1, z.clone()],
        vec![z.clone(), z, i],
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DefinitenessCheck {
    pub definite: bool,
    /// Smallest eigenvalue of `P_L`.
    pub min_eigenvalue: f64,
    /// Whether the sufficient condition `0 < k_n2 < k_n1/√λ_N` holds.
    pub sufficient_condition: bool,
}

/// Numeric definiteness test of `P_L` (with `d = 1`; the Kronecker factor
/// does not change the spectrum).
pub fn check_pl_definite(graph: &GraphModel, gains: &SecondOrderGains) -> Result<DefinitenessCheck> {
    let lambda_n = *graph.laplacian_spectrum()?.last().expect("non-empty graph");
    let eig = eigenvalues_symmetric(&metric_matrix(graph.laplacian(), gains, 1))?;
    let min_eigenvalue = eig[0];
    Ok(DefinitenessCheck {
        definite: min_eigenvalue > 0.0,
        min_eigenvalue,
        sufficient_condition: gains.metric_is_definite(lambda_n),
    })
}

/// `(z̄_1, z̄_2, z_3)` at the worst-case eigenvalues `φ_1 = λ_{2,l}` and
/// `φ_M = λ_{N,l}`.
pub fn lemma_bounds(lambda2l: f64, lambda_nl: f64, gains: &SecondOrderGains) -> [f64; 3] {
    let (b, k1, k2) = (gains.b, gains.k_n1, gains.k_n2);
    [
        k2 * lambda2l * (b - lambda2l),
        k2 * lambda_nl * (1.0 + b / 2.0) - b * k1 / 2.0,
        -lambda2l + b * k2 * lambda2l / 2.0 + b * k1 / 2.0,
    ]
}

/// Certified rate `ν_l = −max{z̄_1, z̄_2, z_3}`.
pub fn rate_nu(lambda2l: f64, lambda_nl: f64, lambda_n: f64, gains: &SecondOrderGains) -> Result<f64> {
    gains.check_feasible(lambda2l, lambda_nl, lambda_n)?;
    let nu = -lemma_bounds(lambda2l, lambda_nl, gains)
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    debug_assert!(nu > 0.0);
    Ok(nu)
}

/// [`rate_nu`] for a grounded spectrum.
pub fn rate_nu_for(spectrum: &GroundedSpectrum, lambda_n: f64, gains: &SecondOrderGains) -> Result<f64> {
    rate_nu(spectrum.lambda2(), spectrum.lambda_max(), lambda_n, gains)
}

/// Reduced error drift on the follower blocks of `(e_p, e_v, e_û)`.
pub fn reduced_drift_second(spectrum: &GroundedSpectrum, gains: &SecondOrderGains, d: usize) -> DMatrix<f64> {
    let m = kron_identity(spectrum.reduced_matrix(), d);
    let n = m.nrows();
    let i = DMatrix::identity(n, n);
    let z = DMatrix::zeros(n, n);
    block_matrix(&[
        vec![z.clone(), i.clone(), z.clone()],
        vec![&m * -gains.k_v, &i * -gains.b, &i * gains.b],
        vec![z.clone(), z, &m * -gains.k_u],
    ])
}

/// `P_L` restricted to the follower blocks (built from `M_l`).
pub fn reduced_metric_second(spectrum: &GroundedSpectrum, gains: &SecondOrderGains, d: usize) -> DMatrix<f64> {
    metric_matrix(spectrum.reduced_matrix(), gains, d)
}

/// Symmetric 3×3 slice of `sym(P_M D)` along the eigenvector of `M_l` with
/// eigenvalue `φ` (unit `k_v`, `k_u`).
pub fn q_slice(phi: f64, gains: &SecondOrderGains) -> DMatrix<f64> {
    let (b, k1, k2, k3) = (gains.b, gains.k_n1, gains.k_n2, gains.k_n3);
    let q12 = (k3 - b * k2 * phi) / 2.0;
    let q13 = b * k2 * phi / 2.0;
    let q23 = b * k1 / 2.0;
    DMatrix::from_row_slice(
        3,
        3,
        &[
            -k2 * phi * phi, q12, q13,
            q12, k2 * phi - b * k1, q23,
            q13, q23, -phi,
        ],
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct GershgorinPoint {
    pub phi: f64,
    /// Right end points of the three disks of the slice.
    pub z: [f64; 3],
    /// Upper bounds `(z̄_1, z̄_2, z_3)` at this `φ`.
    pub z_bar: [f64; 3],
    /// Largest eigenvalue of the slice.
    pub max_eigenvalue: f64,
}

fn gershgorin(phi: f64, gains: &SecondOrderGains) -> Result<GershgorinPoint> {
    let q = q_slice(phi, gains);
    let mut z = [0.0; 3];
    for (i, zi) in z.iter_mut().enumerate() {
        *zi = q[(i, i)] + (0..3).filter(|&j| j != i).map(|j| q[(i, j)].abs()).sum::<f64>();
    }
    let max_eigenvalue = *eigenvalues_symmetric(&q)?.last().expect("3x3");
    Ok(GershgorinPoint {
        phi,
        z,
        z_bar: lemma_bounds(phi, phi, gains),
        max_eigenvalue,
    })
}

/// Closed-form modal eigenvalues for one grounded eigenvalue `λ`.
#[derive(Debug, Clone, Serialize)]
pub struct ModeRates {
    pub lambda: f64,
    /// Eigenvalues of the 2×2 position/velocity block as `[re, im]`.
    pub r11: [[f64; 2]; 2],
    /// `−k_u λ`.
    pub r22: f64,
}

impl ModeRates {
    pub fn new(lambda: f64, gains: &SecondOrderGains) -> Self {
        let disc = gains.b * gains.b - 4.0 * gains.k_v * lambda;
        let re = -gains.b / 2.0;
        let r11 = if disc >= 0.0 {
            let h = disc.sqrt() / 2.0;
            [[re - h, 0.0], [re + h, 0.0]]
        } else {
            let h = (-disc).sqrt() / 2.0;
            [[re, -h], [re, h]]
        };
        Self {
            lambda,
            r11,
            r22: -gains.k_u * lambda,
        }
    }

    /// Slowest position/velocity mode: `−b/2 + ½ Re √(b² − 4k_vλ)`.
    pub fn slow_rate(&self) -> f64 {
        self.r11[1][0]
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityCertificate {
    pub leader: usize,
    #[serde(skip)]
    pub reduced_drift: DMatrix<f64>,
    #[serde(skip)]
    pub metric_matrix: DMatrix<f64>,
    pub per_mode_rates: Vec<ModeRates>,
    /// Largest closed-form/numeric gap on the drift spectrum.
    pub drift_gap: f64,
    /// `b > 2√(k_v λ_{N,l})`: every position/velocity mode is real.
    pub critically_damped: bool,
    pub max_imaginary: f64,
    /// Empty unless `k_v = k_u = 1`.
    pub sym_product_eigs: Vec<f64>,
    pub gershgorin_points: Vec<GershgorinPoint>,
    /// `Some(ν_l)` when the gains are inside the feasibility box.
    pub rate: Option<f64>,
    pub infeasibility: Option<String>,
}

fn match_complex(numeric: &[Complex<f64>], closed: &[Complex<f64>]) -> f64 {
    let mut used = vec![false; numeric.len()];
    let mut worst: f64 = 0.0;
    for c in closed {
        let (idx, dist) = numeric
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .map(|(i, x)| (i, (x - c).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("equal sizes");
        used[idx] = true;
        worst = worst.max(dist);
    }
    worst
}

/// Executes the modal, damping and rate checks for one leader.
pub fn certificate_second(
    spectrum: &GroundedSpectrum,
    lambda_n: f64,
    gains: &SecondOrderGains,
    d: usize,
) -> Result<StabilityCertificate> {
    let drift = reduced_drift_second(spectrum, gains, d);
    let numeric: Vec<Complex<f64>> = eigenvalues_general(&drift)?;
    let per_mode_rates: Vec<ModeRates> = spectrum.eigenvalues().iter().map(|&l| ModeRates::new(l, gains)).collect();
    let closed: Vec<Complex<f64>> = per_mode_rates
        .iter()
        .flat_map(|m| {
            [
                Complex::new(m.r11[0][0], m.r11[0][1]),
                Complex::new(m.r11[1][0], m.r11[1][1]),
                Complex::new(m.r22, 0.0),
            ]
        })
        .flat_map(|c| std::iter::repeat_n(c, d))
        .collect();
    let drift_gap = match_complex(&numeric, &closed);
    if drift_gap > CERTIFICATE_TOLERANCE {
        return Err(Error::CertificateMismatch(format!(
            "reduced drift spectrum differs from modal closed form by {drift_gap:e}"
        )));
    }
    let critically_damped = gains.b > 2.0 * (gains.k_v * spectrum.lambda_max()).sqrt();
    let max_imaginary = numeric.iter().map(|c| c.im.abs()).fold(0.0, f64::max);

    let metric = reduced_metric_second(spectrum, gains, d);
    let (mut sym_product_eigs, mut gershgorin_points) = (Vec::new(), Vec::new());
    if gains.has_unit_gains() {
        sym_product_eigs = eigenvalues_symmetric(&sym(&(&metric * &drift)))?;
        let mut sliced = Vec::with_capacity(sym_product_eigs.len());
        for &phi in spectrum.eigenvalues() {
            let point = gershgorin(phi, gains)?;
            for v in eigenvalues_symmetric(&q_slice(phi, gains))? {
                sliced.extend(std::iter::repeat_n(v, d));
            }
            gershgorin_points.push(point);
        }
        let gap = multiset_gap(&sym_product_eigs, &sliced).expect("equal sizes");
        if gap > CERTIFICATE_TOLERANCE * (1.0 + spectrum.lambda_max().powi(2)) {
            return Err(Error::CertificateMismatch(format!(
                "sym(P D) spectrum differs from its modal slices by {gap:e}"
            )));
        }
    }

    let (rate, infeasibility) = match rate_nu_for(spectrum, lambda_n, gains) {
        Ok(nu) => (Some(nu), None),
        Err(e) => (None, Some(e.to_string())),
    };
    if let Some(nu) = rate {
        let top = *sym_product_eigs.last().expect("non-empty");
        if top > -nu + RATE_TOLERANCE {
            return Err(Error::CertificateMismatch(format!(
                "max eigenvalue of sym(P D) is {top}, above -nu = {}",
                -nu
            )));
        }
        for p in &gershgorin_points {
            let zmax = p.z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if p.max_eigenvalue > zmax + RATE_TOLERANCE
                || p.z[0] > p.z_bar[0] + RATE_TOLERANCE
                || p.z[1] > p.z_bar[1] + RATE_TOLERANCE
            {
                return Err(Error::CertificateMismatch(format!(
                    "disk bounds violated at phi = {}",
                    p.phi
                )));
            }
        }
    }
    Ok(StabilityCertificate {
        leader: spectrum.leader(),
        reduced_drift: drift,
        metric_matrix: metric,
        per_mode_rates,
        drift_gap,
        critically_damped,
        max_imaginary,
        sym_product_eigs,
        gershgorin_points,
        rate,
        infeasibility,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_topology, ground, TopologyKind, TopologySpec};

    fn line4() -> GraphModel {
        build_topology(&TopologySpec::new(TopologyKind::Line, 4)).unwrap()
    }

    fn state(p: Vec<f64>, v: Vec<f64>, u: Vec<f64>) -> SwarmStateSecondOrder {
        let n = p.len();
        SwarmStateSecondOrder {
            positions: DVector::from_vec(p),
            velocities: DVector::from_vec(v),
            estimates: EstimateField::new(DVector::from_vec(u), 1.0, 1),
            formation: DVector::zeros(n),
        }
    }

    #[test]
    fn control_rate_on_grounded_line() {
        let s = ground(&line4(), 1).unwrap();
        let gains = SecondOrderGains::unit(0.5, 1.0, 0.0, 1.0);
        let st = state(vec![1.0, 0.0, 0.0, 0.0], vec![0.0; 4], vec![0.0; 4]);
        let (pdot, vdot) = control_rate_second(&st, &s, &gains).unwrap();
        assert_eq!(pdot, DVector::zeros(4));
        assert_eq!(vdot.as_slice(), &[-1.0, 0.0, 0.0, 0.0]);
        let st = state(vec![0.0, 1.0, 0.0, 0.0], vec![0.0; 4], vec![0.0; 4]);
        let (_, vdot) = control_rate_second(&st, &s, &gains).unwrap();
        assert_eq!(vdot.as_slice(), &[1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn equilibrium_in_formation() {
        let s = ground(&line4(), 2).unwrap();
        let st = state(vec![3.0; 4], vec![0.4; 4], vec![0.4; 4]);
        let (pdot, vdot) = control_rate_second(&st, &s, &SecondOrderGains::unit(0.5, 1.0, 0.1, 0.1)).unwrap();
        assert_eq!(vdot, DVector::zeros(4));
        assert_eq!(pdot, DVector::from_element(4, 0.4));
    }

    #[test]
    fn reset_relative_velocity() {
        let st = state(vec![0.0, 1.0, 2.0], vec![1.0, 2.0, 3.0], vec![0.0; 3]);
        let (next, e) = reset_second(&st, 1, &[1.0]).unwrap();
        assert_eq!(e.velocity_error.as_slice(), &[-1.0, 0.0, 1.0]);
        assert_eq!(e.formation_error.as_slice(), &[-1.0, 0.0, 1.0]);
        assert_eq!(e.estimation_error.as_slice(), &[-1.0, 0.0, -1.0]);
        assert_eq!(next.velocities, st.velocities);
        assert_eq!(next.positions, st.positions);
        assert_eq!(next.estimates.estimates.as_slice(), &[0.0, 1.0, 0.0]);
        let same = state(vec![0.0; 3], vec![2.0; 3], vec![0.0; 3]);
        for l in 0..3 {
            assert_eq!(reset_second(&same, l, &[0.0]).unwrap().1.velocity_error, DVector::zeros(3));
        }
    }

    #[test]
    fn metric_block_diagonal_limit() {
        let g = line4();
        let gains = SecondOrderGains::unit(0.5, 1.5, 0.0, 0.7);
        let e = ErrorStateSecondOrder {
            formation_error: DVector::from_vec(vec![0.0, 1.0, -2.0, 0.5]),
            velocity_error: DVector::from_vec(vec![0.0, 0.3, 0.1, -1.0]),
            estimation_error: DVector::from_vec(vec![0.0, 2.0, 0.0, 1.0]),
            dim: 1,
        };
        let m = SecondOrderMetric::unchecked(&g, &gains, 3.414);
        let lp = g.laplacian() * &e.formation_error;
        let expected = 1.5 * e.formation_error.dot(&lp)
            + 0.7 * e.formation_error.norm_squared()
            + 1.5 * e.velocity_error.norm_squared()
            + e.estimation_error.norm_squared();
        assert!((m.evaluate(&e) - expected).abs() < 1e-12);
        let dense = metric_matrix(g.laplacian(), &gains, 1);
        let x = e.stacked();
        assert!((x.dot(&(dense * &x)) - expected).abs() < 1e-12);
        assert!(metric_second(&e, &gains, &g).is_err());
    }

    #[test]
    fn definiteness_examples() {
        let clique = build_topology(&TopologySpec::new(TopologyKind::Clique, 10)).unwrap();
        let check = check_pl_definite(&clique, &SecondOrderGains::unit(0.5, 1.0, 0.0, 1.0)).unwrap();
        assert!(check.definite);
        let edge = 1.0 / 10f64.sqrt();
        let check = check_pl_definite(&clique, &SecondOrderGains::unit(0.5, 1.0, 0.999 * edge, 1e-3)).unwrap();
        assert!(check.sufficient_condition && check.definite);
        let check = check_pl_definite(&clique, &SecondOrderGains::unit(0.5, 1.0, 10.0, 1e-3)).unwrap();
        assert!(!check.sufficient_condition && !check.definite);
        assert!(check.min_eigenvalue < 0.0);
    }

    #[test]
    fn rate_nu_worked_example() {
        let gains = SecondOrderGains::unit(0.5, 1.0, 0.05, 0.01);
        let z = lemma_bounds(1.0, 3.0, &gains);
        assert!((z[0] + 0.025).abs() < 1e-15);
        assert!((z[1] + 0.0625).abs() < 1e-15);
        assert!((z[2] + 0.7375).abs() < 1e-15);
        assert!((rate_nu(1.0, 3.0, 3.5, &gains).unwrap() - 0.025).abs() < 1e-15);
        assert!(rate_nu(1.0, 3.0, 3.5, &SecondOrderGains::unit(1.0, 1.0, 0.05, 0.01)).is_err());
        let mut general = gains;
        general.k_v = 2.0;
        assert!(rate_nu(1.0, 3.0, 3.5, &general).is_err());
    }

    #[test]
    fn select_gains_worked_example() {
        let g = select_feasible_gains_for(1.0, 3.0, 3.5, 0.5);
        assert_eq!(g.b, 0.5);
        assert!((g.k_n1 - 2.0).abs() < 1e-15);
        assert!((g.k_n2 - 0.1).abs() < 1e-12);
        assert!((g.k_n3 - 0.02).abs() < 1e-12);
        g.check_feasible(1.0, 3.0, 3.5).unwrap();
        let clamped = select_feasible_gains_for(1.0, 3.0, 3.5, 2.0);
        assert!((clamped.b - 0.9).abs() < 1e-15);
    }

    #[test]
    fn certificate_on_line_and_star() {
        for (kind, leader) in [(TopologyKind::Line, 1), (TopologyKind::Star, 0), (TopologyKind::Ring, 3)] {
            let g = build_topology(&TopologySpec::new(kind, 6)).unwrap();
            let lambda_n = *g.laplacian_spectrum().unwrap().last().unwrap();
            let s = ground(&g, leader).unwrap();
            let gains = select_feasible_gains(&s, lambda_n, 0.5);
            for d in [1, 2] {
                let cert = certificate_second(&s, lambda_n, &gains, d).unwrap();
                assert!(cert.rate.unwrap() > 0.0);
                assert_eq!(cert.sym_product_eigs.len(), 15 * d);
                assert_eq!(cert.gershgorin_points.len(), 5);
            }
        }
    }

    #[test]
    fn critical_damping_gives_real_modes() {
        let g = line4();
        let s = ground(&g, 1).unwrap();
        let gains = SecondOrderGains {
            b: 5.0,
            k_v: 1.0,
            k_u: 1.0,
            k_n1: 1.0,
            k_n2: 0.1,
            k_n3: 0.1,
        };
        let cert = certificate_second(&s, 3.414, &gains, 1).unwrap();
        assert!(cert.critically_damped);
        assert!(cert.max_imaginary < 1e-8);
        assert!(cert.rate.is_none());
        let under = SecondOrderGains { b: 0.5, ..gains };
        let cert = certificate_second(&s, 3.414, &under, 1).unwrap();
        assert!(!cert.critically_damped);
        assert!(cert.max_imaginary > 0.1);
    }
}
