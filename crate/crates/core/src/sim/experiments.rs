//! Capacity, pricing, market and survival experiments across the four
//! pricing regimes. Every regime sees the same trajectory and the same
//! published index; nothing computed for one regime feeds another.

use std::collections::BTreeMap;

use crate::fixed::Fixed;
use crate::index::compute_raw_index;

use super::agents::{
    cost_paths, execution_capacity, is_bankrupt, regime_quotes, step_treasury, AgentPolicy, AgentTreasury,
    CapacityPrices, CostPaths, Regime, RegimeQuotes,
};
use super::metrics::{
    average_capacity, capacity_stats, gini, mean, median, variance, CapacityStats, MarketStats, PricingStats,
    SurvivalStats,
};
use super::scenario::ScenarioConfig;
use super::trajectory::{to_fixed, Trajectory};

/// Agents, their cost signals and every regime's quotes.
pub struct RegimeSetup {
    pub policies: Vec<AgentPolicy>,
    pub paths: Vec<CostPaths>,
    /// Published NAV per epoch.
    pub nav: Vec<f64>,
    /// Honest raw basket index per epoch.
    pub basket: Vec<f64>,
    pub quotes: BTreeMap<Regime, RegimeQuotes>,
}

impl RegimeSetup {
    pub fn new(config: &ScenarioConfig, traj: &Trajectory, nav: Vec<f64>) -> Self {
        let policies: Vec<AgentPolicy> = traj
            .agents
            .iter()
            .enumerate()
            .map(|(i, d)| AgentPolicy::from_draw(i, d))
            .collect();
        let paths: Vec<CostPaths> = policies.iter().map(|p| cost_paths(config, traj, p)).collect();
        let basket = (0..traj.epochs)
            .map(|t| {
                compute_raw_index(&traj.honest_quotes(t), &config.basket)
                    .expect("honest basket computes")
                    .value
                    .to_f64()
            })
            .collect();
        let quotes = Regime::ALL
            .iter()
            .map(|&r| (r, regime_quotes(r, &policies, &paths, &nav)))
            .collect();
        RegimeSetup {
            policies,
            paths,
            nav,
            basket,
            quotes,
        }
    }

    pub fn epochs(&self) -> usize {
        self.basket.len()
    }

    /// Quote in the unit the regime settles in: tokens for clawcoin,
    /// reserve currency otherwise.
    pub fn settled(&self, r: Regime, agent: usize, t: usize) -> f64 {
        let q = &self.quotes[&r];
        match r {
            Regime::UsdcInternalIndex => q.reserve_value[agent][t],
            _ => q.quote[agent][t],
        }
    }

    /// Reserve value of one settlement unit.
    pub fn settlement_unit(&self, r: Regime, t: usize) -> f64 {
        match r {
            Regime::Clawcoin => self.nav[t],
            _ => 1.0,
        }
    }

    /// Agent's cost of one request in the settlement unit.
    pub fn settled_cost(&self, r: Regime, agent: usize, t: usize) -> f64 {
        match r {
            Regime::Clawcoin => self.paths[agent].spot[t] / self.nav[t],
            Regime::RawCost => self.paths[agent].route[t],
            _ => self.paths[agent].spot[t],
        }
    }

    fn prices(&self, agent: usize, t: usize) -> CapacityPrices {
        let p = &self.paths[agent];
        CapacityPrices {
            basket_cost: self.basket[t],
            route_cost: p.route[t],
            private_index: p.private_index[t],
            nav: self.nav[t],
        }
    }
}

/// Capacity path per agent of a holding worth one standardized request at
/// epoch 0.
pub fn capacity_paths(setup: &RegimeSetup, r: Regime) -> Vec<Vec<f64>> {
    (0..setup.policies.len())
        .map(|i| {
            let holding = 1.0 / execution_capacity(1.0, r, &setup.prices(i, 0));
            (0..setup.epochs())
                .map(|t| execution_capacity(holding, r, &setup.prices(i, t)))
                .collect()
        })
        .collect()
}

/// Capacity statistics averaged over agents.
pub fn capacity_experiment(setup: &RegimeSetup, r: Regime) -> CapacityStats {
    let per_agent: Vec<CapacityStats> = capacity_paths(setup, r).iter().map(|p| capacity_stats(p)).collect();
    average_capacity(&per_agent)
}

pub fn pricing_experiment(setup: &RegimeSetup, r: Regime) -> PricingStats {
    let n = setup.policies.len();
    let epochs = setup.epochs();
    let q = &setup.quotes[&r];
    let volatility: Vec<f64> = (0..n)
        .map(|i| {
            let changes: Vec<f64> = (1..epochs)
                .map(|t| setup.settled(r, i, t) / setup.settled(r, i, t - 1) - 1.0)
                .collect();
            variance(&changes).sqrt()
        })
        .collect();
    let mut dispersion = Vec::with_capacity(epochs);
    let mut spread = Vec::with_capacity(epochs);
    for t in 0..epochs {
        let xs: Vec<f64> = (0..n).map(|i| setup.settled(r, i, t)).collect();
        dispersion.push(super::metrics::cov(&xs));
        let (lo, hi) = xs.iter().fold((f64::MAX, f64::MIN), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        spread.push((hi - lo) / mean(&xs));
    }
    let drift: Vec<f64> = (0..n)
        .flat_map(|i| {
            let real0 = q.reserve_value[i][0] / setup.basket[0];
            (0..epochs).map(move |t| (q.reserve_value[i][t] / setup.basket[t] / real0 - 1.0).abs())
        })
        .collect();
    let span = (epochs.saturating_sub(1)).max(1) as f64;
    PricingStats {
        quote_volatility: mean(&volatility),
        repricings_per_100: mean(&q.repricings.iter().map(|&c| c as f64).collect::<Vec<_>>()) * 100.0 / span,
        dispersion: mean(&dispersion),
        consistency: 1.0 - mean(&spread),
        drift: mean(&drift),
    }
}

/// Tasks quoted at arrival and settled one epoch later. Nominal quotes
/// settle at the provider's price then; clawcoin quotes are escrowed in
/// tokens and settle as quoted. `mean_price` is left in standardized
/// requests; the caller normalizes it against fiat.
pub fn market_experiment(setup: &RegimeSetup, traj: &Trajectory, r: Regime, tolerance: f64) -> MarketStats {
    let (mut tasks, mut accepted, mut completed, mut overrun, mut rejected) = (0u64, 0u64, 0u64, 0u64, 0u64);
    let mut prices = Vec::new();
    for t in 0..setup.epochs().saturating_sub(1) {
        for task in &traj.tasks[t] {
            tasks += 1;
            let k = task.stages.len() as f64;
            let budget = task.wtp * k * setup.basket[t] / setup.settlement_unit(r, t);
            let quoted: f64 = task.stages.iter().map(|&j| setup.settled(r, j, t)).sum();
            if quoted > budget {
                continue;
            }
            accepted += 1;
            let settled = match r {
                Regime::Clawcoin => quoted,
                _ => task.stages.iter().map(|&j| setup.settled(r, j, t + 1)).sum(),
            };
            if settled > budget {
                overrun += 1;
            }
            if settled > budget * (1.0 + tolerance) {
                rejected += 1;
                continue;
            }
            completed += 1;
            prices.push(settled * setup.settlement_unit(r, t + 1) / k / setup.basket[t + 1]);
        }
    }
    let rate = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    MarketStats {
        tasks,
        acceptance: rate(accepted, tasks),
        completion: rate(completed, tasks),
        overrun: rate(overrun, accepted),
        rejection: rate(rejected, accepted),
        mean_price: mean(&prices),
    }
}

/// Divides every regime's mean price by the fiat one.
pub fn normalize_prices(market: &mut BTreeMap<Regime, MarketStats>) {
    let Some(base) = market.get(&Regime::Fiat).map(|m| m.mean_price).filter(|p| *p > 0.0) else {
        return;
    };
    for m in market.values_mut() {
        m.mean_price /= base;
    }
}

/// Agents run treasuries in the settlement unit. The first stage's agent
/// owns a task, quotes the customer the sum of its own and its delegates'
/// quotes, and pays each delegate its quote. Everyone pays overhead each
/// round and leaves once the treasury cannot cover three rounds of it.
pub fn survival_experiment(setup: &RegimeSetup, traj: &Trajectory, config: &ScenarioConfig, r: Regime) -> SurvivalStats {
    let n = setup.policies.len();
    let overhead = config.agents.overhead;
    let start: Vec<Fixed> = (0..n)
        .map(|_| to_fixed(config.agents.treasury * setup.basket[0] / setup.settlement_unit(r, 0)))
        .collect();
    let mut treasury: Vec<AgentTreasury> = start.iter().map(|&b| AgentTreasury::new(b)).collect();
    let mut alive = vec![true; n];
    let (mut stages_total, mut delegated, mut volume) = (0u64, 0u64, 0.0f64);
    for t in 0..setup.epochs() {
        let unit = setup.settlement_unit(r, t);
        for i in 0..n {
            let round_cost = to_fixed(overhead * setup.settled_cost(r, i, t));
            if alive[i] && is_bankrupt(treasury[i].balance, round_cost) {
                alive[i] = false;
            }
        }
        let mut revenue = vec![0.0f64; n];
        let mut cost = vec![0.0f64; n];
        for task in &traj.tasks[t] {
            let owner = task.stages[0];
            if !alive[owner] {
                continue;
            }
            let executors: Vec<usize> = task
                .stages
                .iter()
                .map(|&j| if alive[j] { j } else { owner })
                .collect();
            let quoted: f64 = executors.iter().map(|&j| setup.settled(r, j, t)).sum();
            let budget = task.wtp * task.stages.len() as f64 * setup.basket[t] / unit;
            if quoted > budget {
                continue;
            }
            revenue[owner] += quoted;
            for &j in &executors {
                stages_total += 1;
                cost[j] += setup.settled_cost(r, j, t);
                if j != owner {
                    delegated += 1;
                    let pay = setup.settled(r, j, t);
                    cost[owner] += pay;
                    revenue[j] += pay;
                    volume += pay * unit / setup.basket[t];
                }
            }
        }
        for i in (0..n).filter(|&i| alive[i]) {
            let k = cost[i] + overhead * setup.settled_cost(r, i, t);
            treasury[i] = step_treasury(&treasury[i], to_fixed(revenue[i]), to_fixed(k));
        }
    }
    let last = setup.epochs() - 1;
    let change: Vec<f64> = treasury
        .iter()
        .zip(&start)
        .map(|(tr, s)| (tr.balance - *s).to_f64() / s.to_f64())
        .collect();
    let real: Vec<f64> = treasury
        .iter()
        .map(|tr| tr.balance.to_f64() * setup.settlement_unit(r, last) / setup.basket[last])
        .collect();
    SurvivalStats {
        agents: n,
        survivors: alive.iter().filter(|a| **a).count(),
        median_treasury_change: median(&change),
        gini: gini(&real),
        trade_volume: volume / setup.epochs() as f64,
        delegation_rate: if stages_total == 0 {
            0.0
        } else {
            delegated as f64 / stages_total as f64
        },
    }
}
