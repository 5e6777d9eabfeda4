//! Agent policies, treasuries and the per-regime quoting rules.

use std::collections::BTreeMap;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::fixed::Fixed;
use crate::index::{BasketConfig, Estimator, IndexPipeline, ModelId, VendorId};

use super::scenario::ScenarioConfig;
use super::trajectory::{AgentDraw, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Fiat,
    RawCost,
    UsdcInternalIndex,
    Clawcoin,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::Fiat, Regime::RawCost, Regime::UsdcInternalIndex, Regime::Clawcoin];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Fiat => "fiat",
            Regime::RawCost => "raw_cost",
            Regime::UsdcInternalIndex => "usdc_internal_index",
            Regime::Clawcoin => "clawcoin",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Rounds of operating cost an agent must be able to cover to stay in.
pub const BANKRUPTCY_LOOKAHEAD: i128 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentPolicy {
    pub role: String,
    /// Pair indices into the trajectory with weights summing to 1.
    pub mix: Vec<(usize, f64)>,
    /// Provider routed to under raw-cost pricing.
    pub primary: VendorId,
    pub markup: f64,
    pub reprice_threshold: f64,
    /// Private-index observation lag in epochs.
    pub lag: u64,
}

impl AgentPolicy {
    pub fn from_draw(i: usize, d: &AgentDraw) -> Self {
        AgentPolicy {
            role: format!("agent-{i}"),
            mix: d.mix.clone(),
            primary: d.primary.clone(),
            markup: d.markup,
            reprice_threshold: d.threshold,
            lag: d.lag,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentTreasury {
    pub balance: Fixed,
    pub revenue: Fixed,
    pub cost: Fixed,
}

impl AgentTreasury {
    pub fn new(balance: Fixed) -> Self {
        AgentTreasury {
            balance,
            revenue: Fixed::ZERO,
            cost: Fixed::ZERO,
        }
    }
}

/// `T' = T + R - K`, accumulating `R` and `K`.
pub fn step_treasury(t: &AgentTreasury, revenue: Fixed, cost: Fixed) -> AgentTreasury {
    AgentTreasury {
        balance: t.balance + revenue - cost,
        revenue: t.revenue + revenue,
        cost: t.cost + cost,
    }
}

/// True when the balance cannot cover the next three rounds.
pub fn is_bankrupt(balance: Fixed, round_cost: Fixed) -> bool {
    balance < round_cost.mul_int(BANKRUPTCY_LOOKAHEAD)
}

/// Prices an agent's holding is converted at.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityPrices {
    /// Reserve cost of one standardized request (honest basket index).
    pub basket_cost: f64,
    /// Reserve cost of one standardized request at the agent's raw route.
    pub route_cost: f64,
    /// Reserve value of one private-index unit.
    pub private_index: f64,
    pub nav: f64,
}

/// Standardized requests a holding funds. The holding is reserve currency
/// for fiat and raw cost, private-index units for the internal index, and
/// tokens for clawcoin.
pub fn execution_capacity(holding: f64, regime: Regime, p: &CapacityPrices) -> f64 {
    assert!(p.basket_cost > 0.0 && p.route_cost > 0.0, "unit cost must be positive");
    match regime {
        Regime::Fiat => holding / p.basket_cost,
        Regime::RawCost => holding / p.route_cost,
        Regime::UsdcInternalIndex => holding * p.private_index / p.basket_cost,
        Regime::Clawcoin => holding * p.nav / p.basket_cost,
    }
}

/// Float mirror of the published smoothing step, used for agents' own
/// cost estimates.
pub fn smooth_clip_f64(raw: f64, prev: f64, lambda: f64, delta: f64) -> f64 {
    let s = raw + lambda * (prev - raw);
    s.clamp(prev * (1.0 - delta), prev * (1.0 + delta))
}

/// Cost signals for one agent over the whole run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostPaths {
    /// Spot cost of a standardized request over the agent's mix.
    pub spot: Vec<f64>,
    /// Smoothed and capped estimate of `spot`.
    pub estimate: Vec<f64>,
    /// Spot cost at the raw-cost route (one provider across models).
    pub route: Vec<f64>,
    /// Private index over the agent's own vendors, observed with lag.
    pub private_index: Vec<f64>,
}

pub fn cost_paths(config: &ScenarioConfig, traj: &Trajectory, policy: &AgentPolicy) -> CostPaths {
    let (lambda, delta) = (config.lambda_f64(), config.delta_f64());
    let n = traj.epochs;
    let spot: Vec<f64> = (0..n)
        .map(|t| policy.mix.iter().map(|(p, w)| w * traj.pair_cost(*p, t)).sum())
        .collect();
    let mut estimate = Vec::with_capacity(n);
    for t in 0..n {
        let e = if t == 0 {
            spot[0]
        } else {
            smooth_clip_f64(spot[t], estimate[t - 1], lambda, delta)
        };
        estimate.push(e);
    }
    let route = (0..n)
        .map(|t| {
            config
                .basket
                .models
                .iter()
                .map(|m| {
                    let w = config.basket.weights[m].to_f64();
                    let pair = traj
                        .pairs
                        .iter()
                        .position(|p| &p.model == m && p.vendor == policy.primary)
                        .or_else(|| traj.pairs.iter().position(|p| &p.model == m))
                        .expect("model has vendors");
                    w * traj.pair_cost(pair, t)
                })
                .sum()
        })
        .collect();
    CostPaths {
        spot,
        estimate,
        route,
        private_index: private_index_path(config, traj, policy),
    }
}

fn private_basket(config: &ScenarioConfig, traj: &Trajectory, policy: &AgentPolicy) -> BasketConfig {
    let mut vendors: BTreeMap<ModelId, Vec<VendorId>> = BTreeMap::new();
    for (p, _) in &policy.mix {
        let pair = &traj.pairs[*p];
        vendors.entry(pair.model.clone()).or_default().push(pair.vendor.clone());
    }
    BasketConfig {
        version: 1,
        models: config.basket.models.clone(),
        vendors,
        workloads: config.basket.workloads.clone(),
        weights: config.basket.weights.clone(),
        estimator: Estimator::Median,
        n_min: 1,
        lambda: config.basket.lambda,
        delta_max: config.basket.delta_max,
    }
}

/// The full index pipeline run over the agent's own vendors only, fed
/// quotes `lag` epochs old.
fn private_index_path(config: &ScenarioConfig, traj: &Trajectory, policy: &AgentPolicy) -> Vec<f64> {
    let basket = private_basket(config, traj, policy);
    let own: Vec<usize> = policy.mix.iter().map(|(p, _)| *p).collect();
    let quotes = |t: usize| {
        let all = traj.honest_quotes(t);
        own.iter().map(|&p| all[p].clone()).collect::<Vec<_>>()
    };
    let mut pipeline = IndexPipeline::new(basket);
    let mut out = Vec::with_capacity(traj.epochs);
    for t in 0..traj.epochs {
        let seen = t.saturating_sub(policy.lag as usize);
        let state = if t == 0 {
            pipeline.bootstrap(0, &quotes(0))
        } else {
            pipeline.step(t as u64, &quotes(seen), None)
        }
        .expect("own vendors always quote");
        out.push(state.smoothed.to_f64());
    }
    out
}

/// Quotes for one standardized request, per agent per epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeQuotes {
    pub regime: Regime,
    /// In the regime's unit of account.
    pub quote: Vec<Vec<f64>>,
    /// Reserve-currency value of the quote at that epoch.
    pub reserve_value: Vec<Vec<f64>>,
    /// Cost of one request to the agent, in the regime's unit.
    pub unit_cost: Vec<Vec<f64>>,
    pub repricings: Vec<u64>,
}

/// Sticky quote that moves only when the tracked cost drifts past the
/// threshold since the last repricing.
fn sticky(cost: &[f64], threshold: f64) -> (Vec<f64>, u64) {
    let mut reference = cost[0];
    let mut count = 0;
    let out = cost
        .iter()
        .map(|&c| {
            if (c / reference - 1.0).abs() > threshold {
                reference = c;
                count += 1;
            }
            reference
        })
        .collect();
    (out, count)
}

pub fn regime_quotes(regime: Regime, policies: &[AgentPolicy], paths: &[CostPaths], nav: &[f64]) -> RegimeQuotes {
    let mut quote = Vec::new();
    let mut reserve_value = Vec::new();
    let mut unit_cost = Vec::new();
    let mut repricings = Vec::new();
    for (pol, cp) in policies.iter().zip(paths) {
        let m = 1.0 + pol.markup;
        let (q, usd, cost, count) = match regime {
            Regime::Fiat => {
                let (r, n) = sticky(&cp.estimate, pol.reprice_threshold);
                let q: Vec<f64> = r.iter().map(|x| x * m).collect();
                (q.clone(), q, cp.spot.clone(), n)
            }
            Regime::RawCost => {
                let q: Vec<f64> = cp.route.iter().map(|x| x * m).collect();
                let n = q.windows(2).filter(|w| w[0] != w[1]).count() as u64;
                (q.clone(), q, cp.route.clone(), n)
            }
            Regime::UsdcInternalIndex => {
                // A fixed number of private units; the unit's reserve value
                // follows the agent's own lagged index, so nothing reprices.
                let q = vec![m; cp.private_index.len()];
                let usd = cp.private_index.iter().map(|p| m * p).collect();
                let cost = cp.spot.iter().zip(&cp.private_index).map(|(s, p)| s / p).collect();
                (q, usd, cost, 0)
            }
            Regime::Clawcoin => {
                let tokens: Vec<f64> = cp.estimate.iter().zip(nav).map(|(e, v)| e / v).collect();
                let (r, n) = sticky(&tokens, pol.reprice_threshold);
                let q: Vec<f64> = r.iter().map(|x| x * m).collect();
                let usd = q.iter().zip(nav).map(|(k, v)| k * v).collect();
                let cost = cp.spot.iter().zip(nav).map(|(s, v)| s / v).collect();
                (q, usd, cost, n)
            }
        };
        quote.push(q);
        reserve_value.push(usd);
        unit_cost.push(cost);
        repricings.push(count);
    }
    RegimeQuotes {
        regime,
        quote,
        reserve_value,
        unit_cost,
        repricings,
    }
}

/// Reserve value of one unit of the regime's account at an epoch.
pub fn unit_value(regime: Regime, paths: &CostPaths, nav: &[f64], t: usize) -> f64 {
    match regime {
        Regime::Fiat | Regime::RawCost => 1.0,
        Regime::UsdcInternalIndex => paths.private_index[t],
        Regime::Clawcoin => nav[t],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed::fx;

    #[test]
    fn treasury_step_examples() {
        let t = AgentTreasury::new(fx("1000"));
        assert_eq!(step_treasury(&t, fx("50"), fx("30")).balance, fx("1020"));
        assert_eq!(step_treasury(&t, fx("7.5"), fx("7.5")).balance, fx("1000"));
    }

    #[test]
    fn bankruptcy_exit_round_matches_closed_form() {
        // Exit at the first round r with T0 - r*c < 3c, i.e. r = floor(T0/c) - 2
        // when c divides T0, otherwise floor(T0/c) - 3 + 1.
        for (t0, c) in [("100", "7"), ("90", "10"), ("10", "4"), ("2", "1")] {
            let (t0, c) = (fx(t0), fx(c));
            let mut t = AgentTreasury::new(t0);
            let mut round = 0i128;
            while !is_bankrupt(t.balance, c) {
                t = step_treasury(&t, Fixed::ZERO, c);
                round += 1;
            }
            let (t0r, cr) = (t0.raw(), c.raw());
            let oracle = ((t0r - 3 * cr) / cr + 1).max(0);
            let oracle = if t0r < 3 * cr { 0 } else { oracle };
            assert_eq!(round, oracle, "T0={t0} c={c}");
        }
    }

    fn prices(basket: f64, nav: f64, private: f64) -> CapacityPrices {
        CapacityPrices {
            basket_cost: basket,
            route_cost: basket,
            private_index: private,
            nav,
        }
    }

    #[test]
    fn capacity_under_index_doubling() {
        let before = prices(2.0, 1.0, 2.0);
        let after = prices(4.0, 2.0, 4.0);
        let tokens = 100.0;
        assert_eq!(
            execution_capacity(tokens, Regime::Clawcoin, &before),
            execution_capacity(tokens, Regime::Clawcoin, &after)
        );
        assert_eq!(
            execution_capacity(100.0, Regime::Fiat, &after),
            execution_capacity(100.0, Regime::Fiat, &before) / 2.0
        );
    }

    #[test]
    fn zero_lag_private_index_equals_clawcoin() {
        let i0 = 2.0;
        let t0 = 1000.0;
        let path = [2.0, 2.6, 3.1, 1.7, 2.2];
        let units = t0 / path[0];
        let tokens = t0 / (path[0] / i0);
        for &i in &path {
            let p = prices(i, i / i0, i);
            let a = execution_capacity(units, Regime::UsdcInternalIndex, &p);
            let b = execution_capacity(tokens, Regime::Clawcoin, &p);
            assert!((a - b).abs() <= 1e-12 * a, "{a} vs {b}");
        }
    }

    #[test]
    fn sticky_quote_reprices_past_threshold() {
        let (q, n) = sticky(&[1.0, 1.02, 1.06, 1.07, 1.0], 0.05);
        assert_eq!(q, vec![1.0, 1.0, 1.06, 1.06, 1.0]);
        assert_eq!(n, 2);
    }
}
