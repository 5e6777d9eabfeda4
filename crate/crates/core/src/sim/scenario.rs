//! Scenario files: everything a run depends on apart from the code version.

use std::collections::BTreeMap;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixed::fx;
use crate::index::{BasketConfig, Epoch, Estimator, ModelId, VendorId, WorkloadClass};
use crate::oracle::AggregationMode;
use crate::validate::{ConfigError, Validator};
use crate::vault::RiskParams;

/// Seed used when neither the manifest nor the scenario file sets one.
pub const DEFAULT_SEED: u64 = 42;

/// Delegation depths the workflow experiment understands.
pub const DEPTHS: [usize; 4] = [1, 2, 4, 8];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub epochs: u64,
    pub basket: BasketConfig,
    pub risk: RiskParams,
    pub oracle: OracleSpec,
    pub feeds: FeedSpec,
    pub shocks: ShockSchedule,
    #[serde(default)]
    pub adversary: AdversarySpec,
    pub agents: AgentRoster,
    pub market: MarketSpec,
    pub workflow: WorkflowSpec,
    pub vault_flows: VaultFlowSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    pub members: usize,
    pub threshold: usize,
    pub mode: AggregationMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct BasePrice {
    pub price_in: f64,
    pub price_out: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FeedSpec {
    /// Reference per-token prices per model at epoch 0.
    pub base_prices: BTreeMap<ModelId, BasePrice>,
    /// Log-scale spread of the static per-(model, vendor) price level.
    pub vendor_dispersion: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Jump {
    pub epoch: Epoch,
    /// Fractional change of the common cost level, persistent.
    pub size: f64,
}

/// Mean-reverting log noise on a common factor and on each provider, plus
/// scheduled common jumps and random provider repricings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ShockSchedule {
    pub common_reversion: f64,
    pub common_volatility: f64,
    pub vendor_reversion: f64,
    pub vendor_volatility: f64,
    pub vendor_jump_probability: f64,
    pub vendor_jump_size: f64,
    #[serde(default)]
    pub jumps: Vec<Jump>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub start: Epoch,
    pub length: u64,
}

impl Window {
    pub fn contains(&self, epoch: Epoch) -> bool {
        epoch >= self.start && epoch < self.start + self.length
    }

    pub fn end(&self) -> Epoch {
        self.start + self.length
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct VendorBias {
    /// Vendor ids biased in every model that lists them.
    pub vendors: Vec<VendorId>,
    pub bias: f64,
    pub window: Window,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct RedemptionBurst {
    pub epoch: Epoch,
    pub claims: usize,
    /// Tokens per claim.
    pub tokens: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Collusion {
    pub nodes: usize,
    /// Fractional offset the colluders sign instead of the honest value.
    pub bias: f64,
    pub window: Window,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AdversarySpec {
    #[serde(default)]
    pub stale_window: Option<Window>,
    #[serde(default)]
    pub vendor_bias: Option<VendorBias>,
    #[serde(default)]
    pub redemption_burst: Option<RedemptionBurst>,
    #[serde(default)]
    pub collusion: Option<Collusion>,
    #[serde(default)]
    pub sandwich: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct LagRange {
    pub min: u64,
    pub max: u64,
}

/// Ranges the per-agent policies are drawn from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AgentRoster {
    pub count: usize,
    pub markup: Range,
    pub reprice_threshold: Range,
    pub observation_lag: LagRange,
    pub vendors_per_model: usize,
    /// Opening treasury in standardized requests at epoch-0 prices.
    pub treasury: f64,
    /// Fixed operating cost per round in standardized requests.
    pub overhead: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct MarketSpec {
    /// Poisson mean of customer tasks per epoch.
    pub tasks_per_epoch: f64,
    pub max_stages: usize,
    /// Median willingness to pay per stage, as a multiple of the basket cost.
    pub budget_multiple: f64,
    /// Log-scale spread of willingness to pay.
    pub budget_spread: f64,
    /// Settled amount may exceed the budget by this fraction before the
    /// customer refuses it.
    pub settlement_tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct WorkflowSpec {
    pub count: usize,
    pub depths: Vec<usize>,
    /// Per-hop allowance above the planned price.
    pub slack: f64,
    /// Nominal regimes pay up to this fraction over the allowance.
    pub tolerance: f64,
    pub hop_failure: f64,
    pub reconciliation_failure: f64,
    /// Log-scale spread of per-hop work size.
    pub work_spread: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct VaultFlowSpec {
    pub holders: usize,
    /// Reserve each holder starts with and mints in its opening epoch.
    pub deposit: f64,
    /// Sponsor capital as a fraction of total opening deposits.
    pub buffer: f64,
    /// Probability per holder per epoch of a mint or redeem.
    pub activity: f64,
    /// Size of a routine flow as a fraction of the opening deposit.
    pub flow_size: f64,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("scenario invalid: {}", format_errors(.0))]
    Invalid(Vec<ConfigError>),
}

fn format_errors(errors: &[ConfigError]) -> String {
    errors.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let config: ScenarioConfig = serde_json::from_str(text)?;
        config.validate().map_err(ScenarioError::Invalid)?;
        Ok(config)
    }

    pub fn json_schema() -> schemars::schema::RootSchema {
        schemars::schema_for!(ScenarioConfig)
    }

    /// Manifest override, then the file, then [`DEFAULT_SEED`].
    pub fn effective_seed(&self, manifest: Option<u64>) -> u64 {
        manifest.or(self.seed).unwrap_or(DEFAULT_SEED)
    }

    pub fn validate(&self) -> Result<(), Vec<ConfigError>> {
        let mut v = Validator::new();
        self.validate_into(&mut v);
        v.finish()
    }

    pub fn validate_into(&self, v: &mut Validator) {
        let epochs = self.epochs;
        v.check((20..=100_000).contains(&epochs), "epochs", "epochs must lie in [20, 100000]");
        v.nested("basket", |v| self.basket.validate_into(v));
        v.nested("risk", |v| self.risk.validate_into(v));
        v.check(
            self.risk.delta_max == self.basket.delta_max,
            "risk.delta_max",
            "on-chain drift cap must equal basket.delta_max",
        );
        v.check(self.risk.tau >= 1, "risk.tau", "tau must be at least 1");
        v.nested("oracle", |v| {
            v.check(self.oracle.members >= 1, "members", "at least one member is required");
            v.check(
                self.oracle.threshold >= 1 && self.oracle.threshold <= self.oracle.members,
                "threshold",
                "threshold must lie in [1, members]",
            );
        });
        v.nested("feeds", |v| {
            for m in &self.basket.models {
                match self.feeds.base_prices.get(m) {
                    Some(p) => v.check(
                        finite_pos(p.price_in) && finite_pos(p.price_out),
                        &format!("base_prices.{m}"),
                        "prices must be positive",
                    ),
                    None => v.error(&format!("base_prices.{m}"), "missing base price for basket model"),
                }
            }
            v.check(
                (0.0..1.0).contains(&self.feeds.vendor_dispersion),
                "vendor_dispersion",
                "must lie in [0, 1)",
            );
        });
        v.nested("shocks", |v| {
            let s = &self.shocks;
            v.check(unit(s.common_reversion), "common_reversion", "must lie in [0, 1]");
            v.check(unit(s.vendor_reversion), "vendor_reversion", "must lie in [0, 1]");
            v.check(nonneg(s.common_volatility), "common_volatility", "must be non-negative");
            v.check(nonneg(s.vendor_volatility), "vendor_volatility", "must be non-negative");
            v.check(unit(s.vendor_jump_probability), "vendor_jump_probability", "must lie in [0, 1]");
            v.check(nonneg(s.vendor_jump_size), "vendor_jump_size", "must be non-negative");
            for (i, j) in s.jumps.iter().enumerate() {
                v.check(j.epoch >= 1 && j.epoch < epochs, &format!("jumps[{i}].epoch"), "jump outside the run");
                v.check(j.size.is_finite() && j.size > -0.9, &format!("jumps[{i}].size"), "size must exceed -0.9");
            }
        });
        v.nested("adversary", |v| self.validate_adversary(v));
        v.nested("agents", |v| {
            let a = &self.agents;
            v.check(a.count >= 2, "count", "at least two agents are required");
            v.check(
                nonneg(a.markup.min) && a.markup.min <= a.markup.max,
                "markup",
                "markup range must be non-negative and ordered",
            );
            v.check(
                finite_pos(a.reprice_threshold.min) && a.reprice_threshold.min <= a.reprice_threshold.max,
                "reprice_threshold",
                "threshold range must be positive and ordered",
            );
            v.check(
                a.observation_lag.min >= 1 && a.observation_lag.min <= a.observation_lag.max,
                "observation_lag",
                "lag range must start at 1 or more and be ordered",
            );
            let fewest = self.basket.vendors.values().map(Vec::len).min().unwrap_or(0);
            v.check(
                a.vendors_per_model >= 1 && a.vendors_per_model <= fewest,
                "vendors_per_model",
                format!("must lie in [1, {fewest}]"),
            );
            v.check(finite_pos(a.treasury), "treasury", "must be positive");
            v.check(nonneg(a.overhead), "overhead", "must be non-negative");
        });
        v.nested("market", |v| {
            let m = &self.market;
            v.check(nonneg(m.tasks_per_epoch) && m.tasks_per_epoch <= 1000.0, "tasks_per_epoch", "must lie in [0, 1000]");
            v.check(m.max_stages >= 1 && m.max_stages <= 8, "max_stages", "must lie in [1, 8]");
            v.check(finite_pos(m.budget_multiple), "budget_multiple", "must be positive");
            v.check(nonneg(m.budget_spread), "budget_spread", "must be non-negative");
            v.check(nonneg(m.settlement_tolerance), "settlement_tolerance", "must be non-negative");
        });
        v.nested("workflow", |v| {
            let w = &self.workflow;
            v.check(w.count <= 100_000, "count", "at most 100000 workflows");
            v.check(!w.depths.is_empty(), "depths", "at least one depth is required");
            v.check(
                w.depths.iter().all(|d| DEPTHS.contains(d)),
                "depths",
                "depths must be drawn from {1, 2, 4, 8}",
            );
            let max_depth = w.depths.iter().copied().max().unwrap_or(1) as u64;
            v.check(epochs > max_depth + 1, "depths", "run too short for the deepest chain");
            v.check(nonneg(w.slack), "slack", "must be non-negative");
            v.check(nonneg(w.tolerance), "tolerance", "must be non-negative");
            v.check(unit(w.hop_failure), "hop_failure", "must lie in [0, 1]");
            v.check(unit(w.reconciliation_failure), "reconciliation_failure", "must lie in [0, 1]");
            v.check(nonneg(w.work_spread), "work_spread", "must be non-negative");
        });
        v.nested("vault_flows", |v| {
            let f = &self.vault_flows;
            v.check(f.holders >= 1, "holders", "at least one holder is required");
            v.check(finite_pos(f.deposit), "deposit", "must be positive");
            v.check(nonneg(f.buffer), "buffer", "must be non-negative");
            v.check(unit(f.activity), "activity", "must lie in [0, 1]");
            v.check(unit(f.flow_size), "flow_size", "must lie in [0, 1]");
        });
    }

    fn validate_adversary(&self, v: &mut Validator) {
        let a = &self.adversary;
        let inside = |w: &Window| w.start >= 1 && w.length >= 1 && w.end() <= self.epochs;
        if let Some(w) = &a.stale_window {
            v.check(inside(w), "stale_window", "window must lie inside the run");
        }
        if let Some(b) = &a.vendor_bias {
            v.check(inside(&b.window), "vendor_bias.window", "window must lie inside the run");
            v.check(b.bias.is_finite() && b.bias > -1.0, "vendor_bias.bias", "bias must exceed -1");
            for vendor in &b.vendors {
                v.check(
                    self.basket.vendors.values().any(|vs| vs.contains(vendor)),
                    "vendor_bias.vendors",
                    format!("unknown vendor {vendor}"),
                );
            }
        }
        if let Some(b) = &a.redemption_burst {
            v.check(b.epoch >= 1 && b.epoch < self.epochs, "redemption_burst.epoch", "burst outside the run");
            v.check(finite_pos(b.tokens), "redemption_burst.tokens", "must be positive");
        }
        if let Some(c) = &a.collusion {
            v.check(inside(&c.window), "collusion.window", "window must lie inside the run");
            v.check(c.nodes <= self.oracle.members, "collusion.nodes", "more colluders than members");
            v.check(c.bias.is_finite() && c.bias > -1.0, "collusion.bias", "bias must exceed -1");
        }
    }

    /// Reference configuration: three models, five vendors each, a few
    /// scheduled shocks and every adversary switched on at separate times.
    pub fn example() -> Self {
        let models = ["large", "medium", "small"];
        let vendors: Vec<VendorId> = (0..5).map(|i| VendorId(format!("v{i}"))).collect();
        let basket = BasketConfig {
            version: 1,
            models: models.iter().map(|m| ModelId::from(*m)).collect(),
            vendors: models.iter().map(|m| (ModelId::from(*m), vendors.clone())).collect(),
            workloads: vec![
                WorkloadClass { alpha: fx("800"), beta: fx("400"), theta: fx("0.5") },
                WorkloadClass { alpha: fx("3000"), beta: fx("300"), theta: fx("0.3") },
                WorkloadClass { alpha: fx("1500"), beta: fx("1500"), theta: fx("0.2") },
            ],
            weights: [("large", "0.5"), ("medium", "0.3"), ("small", "0.2")]
                .into_iter()
                .map(|(m, w)| (ModelId::from(m), fx(w)))
                .collect(),
            estimator: Estimator::Median,
            n_min: 3,
            lambda: fx("0.3"),
            delta_max: fx("0.05"),
        };
        let base_prices = [("large", 3e-6, 15e-6), ("medium", 0.8e-6, 4e-6), ("small", 0.15e-6, 0.6e-6)]
            .into_iter()
            .map(|(m, i, o)| (ModelId::from(m), BasePrice { price_in: i, price_out: o }))
            .collect();
        ScenarioConfig {
            seed: Some(DEFAULT_SEED),
            epochs: 300,
            basket,
            risk: RiskParams {
                gamma_min: fx("1.2"),
                gamma_pause: fx("1.1"),
                delta_max: fx("0.05"),
                tau: 4,
                mint_cap_base: fx("6000"),
                redeem_cap_base: fx("3000"),
                headroom_ref: fx("0.3"),
                replenish_rate: fx("0.01"),
            },
            oracle: OracleSpec { members: 5, threshold: 3, mode: AggregationMode::Committee },
            feeds: FeedSpec { base_prices, vendor_dispersion: 0.005 },
            shocks: ShockSchedule {
                common_reversion: 0.05,
                common_volatility: 0.015,
                vendor_reversion: 0.4,
                vendor_volatility: 0.03,
                vendor_jump_probability: 0.02,
                vendor_jump_size: 0.05,
                jumps: vec![
                    Jump { epoch: 20, size: 0.2 },
                    Jump { epoch: 60, size: 0.25 },
                    Jump { epoch: 85, size: -0.15 },
                    Jump { epoch: 140, size: -0.2 },
                    Jump { epoch: 215, size: 0.15 },
                    Jump { epoch: 240, size: 0.15 },
                    Jump { epoch: 280, size: -0.15 },
                ],
            },
            adversary: AdversarySpec {
                stale_window: Some(Window { start: 100, length: 6 }),
                vendor_bias: Some(VendorBias {
                    vendors: vec![VendorId::from("v0")],
                    bias: 0.5,
                    window: Window { start: 170, length: 30 },
                }),
                redemption_burst: Some(RedemptionBurst { epoch: 260, claims: 8, tokens: 500.0 }),
                collusion: Some(Collusion { nodes: 2, bias: 0.5, window: Window { start: 30, length: 10 } }),
                sandwich: true,
            },
            agents: AgentRoster {
                count: 8,
                markup: Range { min: 0.15, max: 0.25 },
                reprice_threshold: Range { min: 0.04, max: 0.1 },
                observation_lag: LagRange { min: 1, max: 3 },
                vendors_per_model: 4,
                treasury: 40.0,
                overhead: 0.3,
            },
            market: MarketSpec {
                tasks_per_epoch: 6.0,
                max_stages: 3,
                budget_multiple: 1.3,
                budget_spread: 0.15,
                settlement_tolerance: 0.02,
            },
            workflow: WorkflowSpec {
                count: 400,
                depths: DEPTHS.to_vec(),
                slack: 0.03,
                tolerance: 0.05,
                hop_failure: 0.004,
                reconciliation_failure: 0.01,
                work_spread: 0.3,
            },
            vault_flows: VaultFlowSpec {
                holders: 10,
                deposit: 1000.0,
                buffer: 0.4,
                activity: 0.2,
                flow_size: 0.1,
            },
        }
    }

    /// No cost movement at all: identical vendors and models, no shocks, no
    /// adversaries.
    pub fn null() -> Self {
        let mut c = Self::example();
        let flat = BasePrice { price_in: 1e-6, price_out: 1e-6 };
        for p in c.feeds.base_prices.values_mut() {
            *p = flat;
        }
        c.feeds.vendor_dispersion = 0.0;
        c.shocks = ShockSchedule {
            common_reversion: 0.0,
            common_volatility: 0.0,
            vendor_reversion: 0.0,
            vendor_volatility: 0.0,
            vendor_jump_probability: 0.0,
            vendor_jump_size: 0.0,
            jumps: Vec::new(),
        };
        c.adversary = AdversarySpec::default();
        c
    }

    pub(crate) fn lambda_f64(&self) -> f64 {
        self.basket.lambda.to_f64()
    }

    pub(crate) fn delta_f64(&self) -> f64 {
        self.basket.delta_max.to_f64()
    }
}

fn finite_pos(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

fn nonneg(x: f64) -> bool {
    x.is_finite() && x >= 0.0
}

fn unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_and_null_validate() {
        ScenarioConfig::example().validate().unwrap();
        ScenarioConfig::null().validate().unwrap();
    }

    #[test]
    fn json_round_trip() {
        let c = ScenarioConfig::example();
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(ScenarioConfig::from_json(&text).unwrap(), c);
    }

    #[test]
    fn theta_error_names_workloads() {
        let mut c = ScenarioConfig::example();
        c.basket.workloads[0].theta = fx("0.4");
        let errs = c.validate().unwrap_err();
        assert!(errs.iter().any(|e| e.path == "basket.workloads"), "{errs:?}");
    }

    #[test]
    fn depth_outside_set_rejected() {
        let mut c = ScenarioConfig::example();
        c.workflow.depths = vec![1, 3];
        let errs = c.validate().unwrap_err();
        assert!(errs.iter().any(|e| e.path == "workflow.depths"));
    }

    #[test]
    fn unknown_field_rejected() {
        let mut value = serde_json::to_value(ScenarioConfig::example()).unwrap();
        value["agents"]["colour"] = serde_json::json!("blue");
        assert!(matches!(
            ScenarioConfig::from_json(&value.to_string()),
            Err(ScenarioError::Parse(_))
        ));
    }

    #[test]
    fn seed_precedence() {
        let mut c = ScenarioConfig::example();
        c.seed = Some(7);
        assert_eq!(c.effective_seed(Some(9)), 9);
        assert_eq!(c.effective_seed(None), 7);
        c.seed = None;
        assert_eq!(c.effective_seed(None), DEFAULT_SEED);
    }
}
