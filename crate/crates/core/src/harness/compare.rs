//! Side-by-side runs of the four selection strategies.

use serde::Serialize;

use super::config::ScenarioConfig;
use super::sim::{run_scenario, SimTrace, TraceSummary};
use crate::error::Result;
use crate::selection::Strategy;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub seed: u64,
    pub summaries: Vec<TraceSummary>,
}

impl ComparisonReport {
    pub fn summary(&self, strategy: Strategy) -> Option<&TraceSummary> {
        self.summaries.iter().find(|s| s.strategy == strategy)
    }

    fn avg(&self, strategy: Strategy) -> f64 {
        self.summary(strategy).map_or(f64::NAN, |s| s.avg_metric)
    }

    /// `avg(global) ≤ avg(local) < avg(random) < avg(constant)`.
    pub fn first_order_ordering(&self) -> bool {
        let (g, l, r, c) = (
            self.avg(Strategy::Global),
            self.avg(Strategy::Local),
            self.avg(Strategy::Random),
            self.avg(Strategy::Constant),
        );
        g <= l && l < r && r < c
    }

    /// The constant leader has the strictly largest time-averaged metric.
    pub fn constant_is_worst(&self) -> bool {
        let c = self.avg(Strategy::Constant);
        self.summaries
            .iter()
            .filter(|s| s.strategy != Strategy::Constant)
            .all(|s| s.avg_metric < c)
    }

    /// Fewer switches in the last quarter than in the first, for `strategy`.
    pub fn switches_settle(&self, strategy: Strategy) -> bool {
        self.summary(strategy)
            .is_some_and(|s| s.switches_per_quarter[3] < s.switches_per_quarter[0])
    }
}

/// Runs every strategy from the same initial conditions; the strategy field
/// of `config` is ignored.
pub fn compare_strategies(config: &ScenarioConfig) -> Result<(Vec<SimTrace>, ComparisonReport)> {
    let traces = Strategy::ALL
        .into_iter()
        .map(|strategy| {
            run_scenario(&ScenarioConfig {
                strategy,
                ..config.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = ComparisonReport {
        seed: config.seed,
        summaries: traces.iter().map(|t| t.summary.clone()).collect(),
    };
    Ok((traces, report))
}
