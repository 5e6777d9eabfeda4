//! Report types and the summary statistics behind them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::crypto::Digest;

use super::agents::Regime;
use super::mev::MevReport;
use super::sanity::SanityReport;
use super::world::{QueueStats, SandwichStats, StaleStats};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CapacityStats {
    pub mean: f64,
    pub variance: f64,
    pub max_drawdown: f64,
    pub recovery_epochs: f64,
    pub cov: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PricingStats {
    pub quote_volatility: f64,
    pub repricings_per_100: f64,
    /// Mean cross-agent coefficient of variation of quotes.
    pub dispersion: f64,
    /// `1 - mean((max - min) / mean)` across agents.
    pub consistency: f64,
    /// Mean absolute change of a quote's purchasing power since epoch 0.
    pub drift: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MarketStats {
    pub tasks: u64,
    pub acceptance: f64,
    pub completion: f64,
    /// Share of accepted tasks settling above budget.
    pub overrun: f64,
    /// Share of accepted tasks refused at settlement.
    pub rejection: f64,
    /// Mean settled price per stage in standardized requests, relative to fiat.
    pub mean_price: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DepthStats {
    pub workflows: u64,
    pub failure: f64,
    pub overrun: f64,
    pub partial_settlement: f64,
    /// Mean `|settled - quoted| / quoted` over completed workflows.
    pub settlement_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkflowStats {
    pub by_depth: BTreeMap<usize, DepthStats>,
    pub overrun: f64,
    pub partial_settlement: f64,
    pub settlement_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SurvivalStats {
    pub agents: usize,
    pub survivors: usize,
    pub median_treasury_change: f64,
    pub gini: f64,
    /// Inter-agent payments per epoch, in standardized requests.
    pub trade_volume: f64,
    pub delegation_rate: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSummary {
    pub published_updates: u64,
    pub rejections: u64,
    pub drift_violations: u64,
    pub pause_epochs: u64,
    /// Mean `|published - honest| / honest`.
    pub tracking_error: f64,
    pub stale: StaleStats,
    pub sandwich: SandwichStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub epochs: u64,
    pub trajectory_digest: Digest,
    pub capacity: BTreeMap<Regime, CapacityStats>,
    pub pricing: BTreeMap<Regime, PricingStats>,
    pub market: BTreeMap<Regime, MarketStats>,
    pub workflow: BTreeMap<Regime, WorkflowStats>,
    pub survival: BTreeMap<Regime, SurvivalStats>,
    pub queue: Option<QueueStats>,
    pub protocol: Option<ProtocolSummary>,
    pub sanity: Option<SanityReport>,
    pub mev: Option<MevReport>,
    pub invariant_failures: Vec<String>,
}

impl MetricsReport {
    pub fn new(seed: u64, epochs: u64, trajectory_digest: Digest) -> Self {
        MetricsReport {
            seed,
            epochs,
            trajectory_digest,
            capacity: BTreeMap::new(),
            pricing: BTreeMap::new(),
            market: BTreeMap::new(),
            workflow: BTreeMap::new(),
            survival: BTreeMap::new(),
            queue: None,
            protocol: None,
            sanity: None,
            mev: None,
            invariant_failures: Vec::new(),
        }
    }

    /// `(scope, metric, value)` triples; scope is a regime name or
    /// `protocol`, `queue`, `sanity`, `mev`.
    pub fn rows(&self) -> Vec<(String, String, f64)> {
        let mut rows = Vec::new();
        let mut push = |scope: &str, metric: &str, value: f64| rows.push((scope.to_string(), metric.to_string(), value));
        for (r, s) in &self.capacity {
            let r = r.name();
            push(r, "capacity_mean", s.mean);
            push(r, "capacity_variance", s.variance);
            push(r, "capacity_max_drawdown", s.max_drawdown);
            push(r, "capacity_recovery_epochs", s.recovery_epochs);
            push(r, "capacity_cov", s.cov);
        }
        for (r, s) in &self.pricing {
            let r = r.name();
            push(r, "quote_volatility", s.quote_volatility);
            push(r, "repricings_per_100", s.repricings_per_100);
            push(r, "dispersion", s.dispersion);
            push(r, "consistency", s.consistency);
            push(r, "drift", s.drift);
        }
        for (r, s) in &self.market {
            let r = r.name();
            push(r, "tasks", s.tasks as f64);
            push(r, "acceptance", s.acceptance);
            push(r, "completion", s.completion);
            push(r, "overrun", s.overrun);
            push(r, "rejection", s.rejection);
            push(r, "mean_price", s.mean_price);
        }
        for (r, s) in &self.workflow {
            let r = r.name();
            for (d, ds) in &s.by_depth {
                push(r, &format!("failure_rate_d{d}"), ds.failure);
                push(r, &format!("overrun_rate_d{d}"), ds.overrun);
                push(r, &format!("partial_settlement_rate_d{d}"), ds.partial_settlement);
            }
            push(r, "workflow_overrun_rate", s.overrun);
            push(r, "partial_settlement_rate", s.partial_settlement);
            push(r, "settlement_error", s.settlement_error);
        }
        for (r, s) in &self.survival {
            let r = r.name();
            push(r, "survivors", s.survivors as f64);
            push(r, "median_treasury_change", s.median_treasury_change);
            push(r, "gini", s.gini);
            push(r, "trade_volume", s.trade_volume);
            push(r, "delegation_rate", s.delegation_rate);
        }
        if let Some(q) = &self.queue {
            push("queue", "peak_length", q.peak_length as f64);
            push("queue", "claims_queued", q.claims_queued as f64);
            push("queue", "honored_within_5", q.honored_within_5);
        }
        if let Some(p) = &self.protocol {
            push("protocol", "published_updates", p.published_updates as f64);
            push("protocol", "rejections", p.rejections as f64);
            push("protocol", "drift_violations", p.drift_violations as f64);
            push("protocol", "pause_epochs", p.pause_epochs as f64);
            push("protocol", "tracking_error", p.tracking_error);
            push("protocol", "stale_epochs", p.stale.stale_epochs as f64);
            push("protocol", "stale_redeems_queued", p.stale.redeems_queued as f64);
            push("protocol", "stale_redeems_attempted", p.stale.redeems_attempted as f64);
            push("protocol", "stale_mints_executed", p.stale.mints_executed as f64);
            push("protocol", "sandwich_max_profit", p.sandwich.max_profit);
            push("protocol", "sandwich_max_bound_ratio", p.sandwich.max_bound_ratio);
        }
        if let Some(s) = &self.sanity {
            push("sanity", "stale_queued_fraction", s.stale.queued_fraction);
            push("sanity", "stale_mints_executed", s.stale.mints_executed as f64);
            push("sanity", "stale_recovery_lag", s.stale.recovery_lag.map_or(f64::NAN, |l| l as f64));
            push("sanity", "bias_mean_deviation", s.bias.mean);
            push("sanity", "bias_median_deviation", s.bias.median);
            push("sanity", "bias_median_cap_deviation", s.bias.median_cap);
            for b in &s.bursts {
                push("sanity", &format!("burst_{}_peak_queue", b.name), b.peak_queue as f64);
                push("sanity", &format!("burst_{}_honored_within_5", b.name), b.honored_within_5);
                push("sanity", &format!("burst_{}_auto_pause", b.name), f64::from(u8::from(b.auto_pause)));
                push("sanity", &format!("burst_{}_involuntary_loss", b.name), b.involuntary_loss);
            }
        }
        if let Some(m) = &self.mev {
            push("mev", "placements", m.placements as f64);
            push("mev", "max_profit", m.max_profit);
            push("mev", "max_bound_ratio", m.max_bound_ratio);
            push("mev", "violations", m.violations as f64);
        }
        rows
    }

    /// One row per scope and metric.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scope,metric,value\n");
        for (scope, metric, value) in self.rows() {
            out.push_str(&format!("{scope},{metric},{}\n", fmt_value(value)));
        }
        out
    }
}

pub fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v == v.trunc() && v.abs() < 1e15 {
        format!("{v:.0}")
    } else {
        format!("{v:.6}")
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

pub fn cov(xs: &[f64]) -> f64 {
    let m = mean(xs);
    if m == 0.0 {
        0.0
    } else {
        variance(xs).sqrt() / m.abs()
    }
}

/// Largest fall from a running peak, as a fraction of that peak.
pub fn max_drawdown(xs: &[f64]) -> f64 {
    let mut peak = f64::MIN;
    let mut worst: f64 = 0.0;
    for &x in xs {
        peak = peak.max(x);
        if peak > 0.0 {
            worst = worst.max((peak - x) / peak);
        }
    }
    worst
}

/// Longest stretch spent more than 1% below a running peak (counted to the
/// end of the series when it never recovers).
pub fn recovery_epochs(xs: &[f64]) -> f64 {
    let mut peak = f64::MIN;
    let mut since: Option<usize> = None;
    let mut longest = 0usize;
    for (t, &x) in xs.iter().enumerate() {
        if x >= peak {
            peak = x;
        }
        let under = x < 0.99 * peak;
        match (under, since) {
            (true, None) => since = Some(t),
            (false, Some(s)) => {
                longest = longest.max(t - s);
                since = None;
            }
            _ => {}
        }
    }
    if let Some(s) = since {
        longest = longest.max(xs.len() - s);
    }
    longest as f64
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Gini coefficient of non-negative values (negatives count as 0).
pub fn gini(xs: &[f64]) -> f64 {
    let mut v: Vec<f64> = xs.iter().map(|x| x.max(0.0)).collect();
    let total: f64 = v.iter().sum();
    if v.is_empty() || total == 0.0 {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let weighted: f64 = v.iter().enumerate().map(|(i, x)| (i as f64 + 1.0) * x).sum();
    (2.0 * weighted) / (n * total) - (n + 1.0) / n
}

pub fn capacity_stats(path: &[f64]) -> CapacityStats {
    CapacityStats {
        mean: mean(path),
        variance: variance(path),
        max_drawdown: max_drawdown(path),
        recovery_epochs: recovery_epochs(path),
        cov: cov(path),
    }
}

/// Field-wise mean of several agents' statistics.
pub fn average_capacity(stats: &[CapacityStats]) -> CapacityStats {
    let f = |g: fn(&CapacityStats) -> f64| mean(&stats.iter().map(g).collect::<Vec<_>>());
    CapacityStats {
        mean: f(|s| s.mean),
        variance: f(|s| s.variance),
        max_drawdown: f(|s| s.max_drawdown),
        recovery_epochs: f(|s| s.recovery_epochs),
        cov: f(|s| s.cov),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drawdown_and_recovery() {
        let xs = [100.0, 110.0, 88.0, 99.0, 109.0, 120.0];
        assert!((max_drawdown(&xs) - 0.2).abs() < 1e-12);
        // Below 0.99 * 110 from t=2 until t=4 (109 >= 108.9).
        assert_eq!(recovery_epochs(&xs), 2.0);
        assert_eq!(recovery_epochs(&[5.0, 1.0, 1.0]), 2.0);
    }

    #[test]
    fn gini_extremes() {
        assert_eq!(gini(&[1.0, 1.0, 1.0, 1.0]), 0.0);
        assert!((gini(&[0.0, 0.0, 0.0, 4.0]) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn cov_of_constant_is_zero() {
        assert_eq!(cov(&[3.0; 5]), 0.0);
        assert!((cov(&[1.0, 3.0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
