use serde::{Deserialize, Serialize};

use crate::ids::Strategy;

/// Distribution of SOF-to-verdict latencies for one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub strategy: Strategy,
    pub count: usize,
    pub min_us: f64,
    pub max_us: f64,
    pub mean_us: f64,
    pub p50_us: f64,
    pub p99_us: f64,
}

impl LatencySummary {
    /// `None` for an empty sample. Percentiles use nearest rank.
    pub fn from_samples(strategy: Strategy, samples: &[f64]) -> Option<LatencySummary> {
        if samples.is_empty() {
            return None;
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let rank = |p: f64| s[((p * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1];
        Some(LatencySummary {
            strategy,
            count: s.len(),
            min_us: s[0],
            max_us: s[s.len() - 1],
            mean_us: s.iter().sum::<f64>() / s.len() as f64,
            p50_us: rank(0.5),
            p99_us: rank(0.99),
        })
    }
}
