//! Seeded price, task and workflow draws shared by every regime of a run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::crypto::{sha256_concat, Digest};
use crate::fixed::Fixed;
use crate::index::{Epoch, ModelId, PriceQuote, VendorId};

use super::scenario::ScenarioConfig;

/// Independent stream per component so adding draws in one place does not
/// shift another.
pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(sha256_concat(&[&seed.to_be_bytes(), label.as_bytes()]).0)
}

fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").sample(rng)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub model: ModelId,
    pub vendor: VendorId,
    pub base_in: f64,
    pub base_out: f64,
    /// Static vendor premium or discount.
    pub level: f64,
    /// Basket-workload cost of one standardized request at base prices.
    pub unit_cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentDraw {
    pub markup: f64,
    pub threshold: f64,
    pub lag: u64,
    /// Pair indices with weights summing to 1.
    pub mix: Vec<(usize, f64)>,
    /// Provider the agent routes to when pricing at raw cost.
    pub primary: VendorId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskDraw {
    /// Executing agent per stage.
    pub stages: Vec<usize>,
    /// Willingness to pay per stage as a multiple of the basket cost.
    pub wtp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopDraw {
    pub executor: usize,
    pub work: f64,
    pub fail: f64,
    pub reconcile: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkflowDraw {
    pub start: Epoch,
    pub originator: usize,
    /// Eight hops; depth `D` uses the first `D`.
    pub hops: Vec<HopDraw>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowDraw {
    pub act: f64,
    pub redeem: bool,
    pub size: f64,
}

pub const MAX_DEPTH: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub epochs: usize,
    pub pairs: Vec<Pair>,
    /// Common cost level per epoch.
    pub common: Vec<f64>,
    /// Price multiplier per pair per epoch (level, common and provider noise).
    pub factor: Vec<Vec<f64>>,
    pub agents: Vec<AgentDraw>,
    pub tasks: Vec<Vec<TaskDraw>>,
    pub workflows: Vec<WorkflowDraw>,
    /// Per epoch, per vault holder.
    pub flows: Vec<Vec<FlowDraw>>,
}

impl Trajectory {
    pub fn generate(config: &ScenarioConfig, seed: u64) -> Self {
        let epochs = config.epochs as usize;
        let shocks = &config.shocks;
        let workloads: Vec<(f64, f64, f64)> = config
            .basket
            .workloads
            .iter()
            .map(|k| (k.alpha.to_f64(), k.beta.to_f64(), k.theta.to_f64()))
            .collect();

        let mut levels = stream(seed, "levels");
        let mut pairs = Vec::new();
        for m in &config.basket.models {
            let base = config.feeds.base_prices[m];
            for v in &config.basket.vendors[m] {
                let level = (config.feeds.vendor_dispersion * std_normal(&mut levels)).exp();
                let unit_cost: f64 = workloads
                    .iter()
                    .map(|(a, b, th)| th * (a * base.price_in + b * base.price_out))
                    .sum();
                pairs.push(Pair {
                    model: m.clone(),
                    vendor: v.clone(),
                    base_in: base.price_in,
                    base_out: base.price_out,
                    level,
                    unit_cost,
                });
            }
        }

        let mut rng = stream(seed, "common");
        let mut common = Vec::with_capacity(epochs);
        let (mut x, mut jump_level) = (0.0f64, 1.0f64);
        for t in 0..epochs {
            if t > 0 {
                x = (1.0 - shocks.common_reversion) * x + shocks.common_volatility * std_normal(&mut rng);
            }
            for j in shocks.jumps.iter().filter(|j| j.epoch as usize == t) {
                jump_level *= 1.0 + j.size;
            }
            common.push(x.exp() * jump_level);
        }

        let providers: Vec<VendorId> = {
            let mut vs: Vec<VendorId> = config.basket.vendors.values().flatten().cloned().collect();
            vs.sort();
            vs.dedup();
            vs
        };
        let mut rng = stream(seed, "providers");
        let mut provider_paths = Vec::with_capacity(providers.len());
        for _ in &providers {
            let mut path = Vec::with_capacity(epochs);
            let mut y = 0.0f64;
            for t in 0..epochs {
                if t > 0 {
                    y = (1.0 - shocks.vendor_reversion) * y + shocks.vendor_volatility * std_normal(&mut rng);
                    if rng.random::<f64>() < shocks.vendor_jump_probability {
                        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                        y += (1.0 + sign * shocks.vendor_jump_size).ln();
                    }
                }
                path.push(y.exp());
            }
            provider_paths.push(path);
        }
        let factor = pairs
            .iter()
            .map(|p| {
                let pi = providers.binary_search(&p.vendor).expect("provider listed");
                (0..epochs).map(|t| p.level * common[t] * provider_paths[pi][t]).collect()
            })
            .collect();

        let roster = &config.agents;
        let mut rng = stream(seed, "agents");
        let mut agents = Vec::with_capacity(roster.count);
        for _ in 0..roster.count {
            let markup = rng.random_range(roster.markup.min..=roster.markup.max);
            let threshold = rng.random_range(roster.reprice_threshold.min..=roster.reprice_threshold.max);
            let lag = rng.random_range(roster.observation_lag.min..=roster.observation_lag.max);
            let mut mix = Vec::new();
            for m in &config.basket.models {
                let w = config.basket.weights[m].to_f64();
                let idx: Vec<usize> = pairs
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| &p.model == m)
                    .map(|(i, _)| i)
                    .collect();
                let chosen = rand::seq::index::sample(&mut rng, idx.len(), roster.vendors_per_model);
                let mut picked: Vec<usize> = chosen.iter().map(|k| idx[k]).collect();
                picked.sort_unstable();
                for i in picked {
                    mix.push((i, w / roster.vendors_per_model as f64));
                }
            }
            let primary = pairs[mix[rng.random_range(0..mix.len())].0].vendor.clone();
            agents.push(AgentDraw {
                markup,
                threshold,
                lag,
                mix,
                primary,
            });
        }

        let market = &config.market;
        let mut rng = stream(seed, "tasks");
        let arrivals = Poisson::new(market.tasks_per_epoch.max(1e-9)).expect("positive mean");
        let tasks = (0..epochs)
            .map(|_| {
                let n = if market.tasks_per_epoch > 0.0 {
                    arrivals.sample(&mut rng) as usize
                } else {
                    0
                };
                (0..n)
                    .map(|_| {
                        let k = rng.random_range(1..=market.max_stages);
                        let stages = (0..k).map(|_| rng.random_range(0..roster.count)).collect();
                        let wtp = market.budget_multiple * (market.budget_spread * std_normal(&mut rng)).exp();
                        TaskDraw { stages, wtp }
                    })
                    .collect()
            })
            .collect();

        let wf = &config.workflow;
        let mut rng = stream(seed, "workflows");
        let last_start = epochs.saturating_sub(MAX_DEPTH + 1).max(2);
        let workflows = (0..wf.count)
            .map(|_| {
                let start = rng.random_range(1..last_start) as Epoch;
                let originator = rng.random_range(0..roster.count);
                let hops = (0..MAX_DEPTH)
                    .map(|_| {
                        let mut executor = rng.random_range(0..roster.count - 1);
                        if executor >= originator {
                            executor += 1;
                        }
                        let s = wf.work_spread;
                        HopDraw {
                            executor,
                            work: (s * std_normal(&mut rng) - 0.5 * s * s).exp(),
                            fail: rng.random(),
                            reconcile: rng.random(),
                        }
                    })
                    .collect();
                WorkflowDraw {
                    start,
                    originator,
                    hops,
                }
            })
            .collect();

        let mut rng = stream(seed, "flows");
        let flows = (0..epochs)
            .map(|_| {
                (0..config.vault_flows.holders)
                    .map(|_| FlowDraw {
                        act: rng.random(),
                        redeem: rng.random(),
                        size: rng.random(),
                    })
                    .collect()
            })
            .collect();

        Trajectory {
            epochs,
            pairs,
            common,
            factor,
            agents,
            tasks,
            workflows,
            flows,
        }
    }

    pub fn price(&self, pair: usize, epoch: usize) -> (f64, f64) {
        let p = &self.pairs[pair];
        let f = self.factor[pair][epoch];
        (p.base_in * f, p.base_out * f)
    }

    /// Cost of one standardized request at this pair's spot prices.
    pub fn pair_cost(&self, pair: usize, epoch: usize) -> f64 {
        self.pairs[pair].unit_cost * self.factor[pair][epoch]
    }

    /// Feed quotes with multiplicative per-vendor bias applied.
    pub fn quotes(&self, epoch: usize, bias: impl Fn(&VendorId) -> f64) -> Vec<PriceQuote> {
        (0..self.pairs.len())
            .map(|i| {
                let (pin, pout) = self.price(i, epoch);
                let b = 1.0 + bias(&self.pairs[i].vendor);
                PriceQuote {
                    model: self.pairs[i].model.clone(),
                    vendor: self.pairs[i].vendor.clone(),
                    price_in: to_fixed(pin * b),
                    price_out: to_fixed(pout * b),
                    observed_at: epoch as Epoch,
                    valid: true,
                }
            })
            .collect()
    }

    pub fn honest_quotes(&self, epoch: usize) -> Vec<PriceQuote> {
        self.quotes(epoch, |_| 0.0)
    }

    /// Commitment over every drawn number, for regime-isolation checks.
    pub fn digest(&self) -> Digest {
        let bytes = serde_json::to_vec(self).expect("trajectory serializes");
        sha256_concat(&[&bytes])
    }
}

pub(crate) fn to_fixed(x: f64) -> Fixed {
    Fixed::from_f64(x).expect("finite simulated price")
}
