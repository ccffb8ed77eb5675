//! Decentralized propagation of the planner's reference velocity.
//!
//! Followers run a Laplacian consensus on their estimates while the current
//! leader's estimate is clamped to the received reference. The reference
//! itself is sample-and-hold: constant between planner messages.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GroundedSpectrum;
use crate::linalg::kron_apply;

/// Stacked per-agent estimates `û` of the reference velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateField {
    pub estimates: DVector<f64>,
    pub gain: f64,
    pub dim: usize,
}

impl EstimateField {
    pub fn new(estimates: DVector<f64>, gain: f64, dim: usize) -> Self {
        Self {
            estimates,
            gain,
            dim,
        }
    }

    /// Zero estimates for every agent except `leader`, which holds `u_r`.
    pub fn initial(n_agents: usize, dim: usize, gain: f64, leader: usize, u_r: &[f64]) -> Self {
        let field = Self::new(DVector::zeros(n_agents * dim), gain, dim);
        clamp_leader(&field, leader, u_r).expect("valid initial leader")
    }

    pub fn n_agents(&self) -> usize {
        self.estimates.len() / self.dim
    }

    pub fn agent(&self, i: usize) -> &[f64] {
        &self.estimates.as_slice()[i * self.dim..(i + 1) * self.dim]
    }
}

/// `k_u G_l û` with `G_l = -(L_l ⊗ I_d)`; the leader's block is exactly zero.
pub fn estimator_rate(field: &EstimateField, spectrum: &GroundedSpectrum) -> Result<DVector<f64>> {
    let l = spectrum.grounded_laplacian();
    let expected = l.nrows() * field.dim;
    if field.estimates.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: field.estimates.len(),
        });
    }
    Ok(kron_apply(l, &field.estimates, field.dim) * (-field.gain))
}

/// Reset action at a selection tick: only `leader`'s block changes and it
/// becomes exactly `u_r`.
pub fn clamp_leader(field: &EstimateField, leader: usize, u_r: &[f64]) -> Result<EstimateField> {
    let n = field.n_agents();
    if leader >= n {
        return Err(Error::InvalidAgent {
            index: leader,
            n_agents: n,
        });
    }
    if u_r.len() != field.dim {
        return Err(Error::DimensionMismatch {
            expected: field.dim,
            actual: u_r.len(),
        });
    }
    let mut out = field.clone();
    out.estimates.as_mut_slice()[leader * field.dim..(leader + 1) * field.dim].copy_from_slice(u_r);
    Ok(out)
}

/// `e_û = û − 1 ⊗ u_r`.
pub fn estimation_error(field: &EstimateField, u_r: &[f64]) -> DVector<f64> {
    let d = field.dim;
    DVector::from_iterator(
        field.estimates.len(),
        field
            .estimates
            .iter()
            .enumerate()
            .map(|(k, x)| x - u_r[k % d]),
    )
}

/// Piecewise-constant planner reference, updated every `period` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSignal {
    pub period: f64,
    /// Value held on `[k·period, (k+1)·period)`; the last value is held forever.
    pub values: Vec<Vec<f64>>,
}

impl ReferenceSignal {
    /// Per-component uniform draws in `[-amplitude, amplitude]`, one per period,
    /// enough to cover `duration`.
    pub fn random(period: f64, duration: f64, dim: usize, amplitude: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = update_count(duration, period);
        let values = (0..count)
            .map(|_| {
                (0..dim)
                    .map(|_| rng.random_range(-amplitude..=amplitude))
                    .collect()
            })
            .collect();
        Self { period, values }
    }

    /// Index of the value active at time `t`.
    pub fn index_at(&self, t: f64) -> usize {
        let k = (t / self.period + 1e-9).floor().max(0.0) as usize;
        k.min(self.values.len().saturating_sub(1))
    }

    pub fn value_at(&self, t: f64) -> &[f64] {
        &self.values[self.index_at(t)]
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// Activation times `(k·period, value)` within `[0, duration]`.
    pub fn schedule(&self, duration: f64) -> Vec<(f64, &[f64])> {
        (0..update_count(duration, self.period))
            .map(|k| (k as f64 * self.period, self.value_at(k as f64 * self.period)))
            .collect()
    }
}

/// Number of planner updates in `[0, duration]`: `floor(duration / period) + 1`.
pub fn update_count(duration: f64, period: f64) -> usize {
    (duration / period + 1e-9).floor() as usize + 1
}
