//! Compute-cost index: workload-weighted pair costs, robust per-model
//! aggregation, basket weighting, EMA smoothing and the per-epoch drift cap.
//!
//! All functions here are pure over immutable inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixed::Fixed;
use crate::validate::{ConfigError, Validator, SUM_TOLERANCE};

pub type Epoch = u64;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(transparent)]
pub struct ModelId(pub String);

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(transparent)]
pub struct VendorId(pub String);

impl From<&str> for ModelId {
    fn from(s: &str) -> Self {
        ModelId(s.to_string())
    }
}

impl From<&str> for VendorId {
    fn from(s: &str) -> Self {
        VendorId(s.to_string())
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for VendorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One standardized request shape: normalized input/output token counts and
/// its share of the basket mix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct WorkloadClass {
    pub alpha: Fixed,
    pub beta: Fixed,
    pub theta: Fixed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct PriceQuote {
    pub model: ModelId,
    pub vendor: VendorId,
    /// Reserve currency per input token.
    pub price_in: Fixed,
    /// Reserve currency per output token.
    pub price_out: Fixed,
    pub observed_at: Epoch,
    /// Cleared by the feed layer for stale or malformed fetches.
    pub valid: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimator {
    Median,
    /// Mean after dropping `floor(q * n)` values from each tail.
    Trimmed { q: Fixed },
    /// Mean of the values within `kappa * MAD` of the median.
    MadFiltered { kappa: Fixed },
}

/// Public, versioned basket definition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct BasketConfig {
    pub version: u64,
    pub models: Vec<ModelId>,
    pub vendors: BTreeMap<ModelId, Vec<VendorId>>,
    pub workloads: Vec<WorkloadClass>,
    pub weights: BTreeMap<ModelId, Fixed>,
    pub estimator: Estimator,
    pub n_min: usize,
    /// EMA coefficient on the previous published value, in `[0, 1)`.
    pub lambda: Fixed,
    /// Per-epoch drift cap as a fraction, in `(0, 1)`.
    pub delta_max: Fixed,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IndexError {
    #[error("workload vector invalid: {0}")]
    InvalidWorkloads(String),
    #[error("cannot aggregate an empty cost set")]
    EmptyInput,
    #[error("no model has at least n_min valid vendor costs; index unavailable")]
    IndexUnavailable,
    #[error("quote for ({model}, {vendor}) is not in the basket registry")]
    UnknownPair { model: ModelId, vendor: VendorId },
    #[error("duplicate quote for ({model}, {vendor})")]
    DuplicatePair { model: ModelId, vendor: VendorId },
    #[error("negative price in quote for ({model}, {vendor})")]
    NegativePrice { model: ModelId, vendor: VendorId },
    #[error("previous published value must be positive")]
    NonPositivePrevious,
    #[error("median bound inapplicable for {model}: {adversarial} adversarial of {total} reports")]
    BoundInapplicable {
        model: ModelId,
        adversarial: usize,
        total: usize,
    },
}

impl BasketConfig {
    pub fn validate(&self) -> Result<(), Vec<ConfigError>> {
        let mut v = Validator::new();
        self.validate_into(&mut v);
        v.finish()
    }

    pub fn validate_into(&self, v: &mut Validator) {
        v.check(!self.models.is_empty(), "models", "at least one model is required");
        let unique: BTreeSet<_> = self.models.iter().collect();
        v.check(unique.len() == self.models.len(), "models", "duplicate model id");
        for m in &self.models {
            match self.vendors.get(m) {
                Some(vs) if !vs.is_empty() => {
                    let uniq: BTreeSet<_> = vs.iter().collect();
                    v.check(
                        uniq.len() == vs.len(),
                        &format!("vendors.{m}"),
                        "duplicate vendor id",
                    );
                }
                _ => v.error(&format!("vendors.{m}"), "model has no vendors"),
            }
            if !self.weights.contains_key(m) {
                v.error(&format!("weights.{m}"), "missing weight for model");
            }
        }
        for key in self.weights.keys() {
            v.check(unique.contains(key), &format!("weights.{key}"), "weight for unknown model");
        }
        v.check(
            self.weights.values().all(|w| !w.is_negative()),
            "weights",
            "weights must be non-negative",
        );
        v.sums_to_one("weights", self.weights.values().copied());
        if let Err(IndexError::InvalidWorkloads(msg)) = validate_workloads(&self.workloads) {
            v.error("workloads", msg);
        }
        match &self.estimator {
            Estimator::Median => {}
            Estimator::Trimmed { q } => v.check(
                !q.is_negative() && *q < Fixed::ratio(1, 2),
                "estimator.q",
                "trim fraction must lie in [0, 0.5)",
            ),
            Estimator::MadFiltered { kappa } => {
                v.check(kappa.is_positive(), "estimator.kappa", "kappa must be positive")
            }
        }
        v.check(self.n_min >= 1, "n_min", "n_min must be at least 1");
        v.check(
            !self.lambda.is_negative() && self.lambda < Fixed::ONE,
            "lambda",
            "lambda must lie in [0, 1)",
        );
        v.check(
            self.delta_max.is_positive() && self.delta_max < Fixed::ONE,
            "delta_max",
            "delta_max must lie in (0, 1)",
        );
    }

    fn registered(&self, model: &ModelId, vendor: &VendorId) -> bool {
        self.vendors
            .get(model)
            .is_some_and(|vs| vs.iter().any(|v| v == vendor))
    }
}

pub fn validate_workloads(workloads: &[WorkloadClass]) -> Result<(), IndexError> {
    if workloads.is_empty() {
        return Err(IndexError::InvalidWorkloads("no workload classes".into()));
    }
    if workloads
        .iter()
        .any(|k| k.alpha.is_negative() || k.beta.is_negative() || k.theta.is_negative())
    {
        return Err(IndexError::InvalidWorkloads(
            "alpha, beta and theta must be non-negative".into(),
        ));
    }
    let total: Fixed = workloads.iter().map(|k| k.theta).sum();
    if (total - Fixed::ONE).abs() > SUM_TOLERANCE {
        return Err(IndexError::InvalidWorkloads(format!(
            "theta must sum to 1 (got {total})"
        )));
    }
    Ok(())
}

/// Basket-aware cost of one (model, vendor) pair:
/// `sum_k theta_k * (alpha_k * price_in + beta_k * price_out)`.
pub fn pair_cost(quote: &PriceQuote, workloads: &[WorkloadClass]) -> Result<Fixed, IndexError> {
    validate_workloads(workloads)?;
    if quote.price_in.is_negative() || quote.price_out.is_negative() {
        return Err(IndexError::NegativePrice {
            model: quote.model.clone(),
            vendor: quote.vendor.clone(),
        });
    }
    Ok(workloads
        .iter()
        .map(|k| {
            let nominal = k.alpha.mul_floor(quote.price_in) + k.beta.mul_floor(quote.price_out);
            k.theta.mul_floor(nominal)
        })
        .sum())
}

fn sorted(values: &[Fixed]) -> Vec<Fixed> {
    let mut v = values.to_vec();
    v.sort_unstable();
    v
}

fn median_of_sorted(s: &[Fixed]) -> Fixed {
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        s[n / 2 - 1].midpoint(s[n / 2])
    }
}

/// Order-statistic median; even counts take the midpoint of the two central
/// values. `None` on empty input.
pub fn median(values: &[Fixed]) -> Option<Fixed> {
    if values.is_empty() {
        None
    } else {
        Some(median_of_sorted(&sorted(values)))
    }
}

fn mean_floor(values: &[Fixed]) -> Fixed {
    let total: Fixed = values.iter().sum();
    total.div_int_floor(values.len() as i128)
}

pub fn aggregate_model(costs: &[Fixed], estimator: &Estimator) -> Result<Fixed, IndexError> {
    if costs.is_empty() {
        return Err(IndexError::EmptyInput);
    }
    let s = sorted(costs);
    let med = median_of_sorted(&s);
    Ok(match estimator {
        Estimator::Median => med,
        Estimator::Trimmed { q } => {
            let cut = q.mul_int(s.len() as i128).raw() / crate::fixed::SCALE;
            let cut = (cut.max(0) as usize).min((s.len() - 1) / 2);
            mean_floor(&s[cut..s.len() - cut])
        }
        Estimator::MadFiltered { kappa } => {
            let deviations: Vec<Fixed> = s.iter().map(|c| (*c - med).abs()).collect();
            let mad = median(&deviations).expect("non-empty");
            if mad.is_zero() {
                med
            } else {
                let band = kappa.mul_floor(mad);
                let kept: Vec<Fixed> = s.iter().copied().filter(|c| (*c - med).abs() <= band).collect();
                // With an even count the midpoint median need not be a
                // sample, so the band can come back empty.
                if kept.is_empty() {
                    med
                } else {
                    mean_floor(&kept)
                }
            }
        }
    })
}

/// Per-model aggregation record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelCostSample {
    pub model: ModelId,
    pub costs: Vec<Fixed>,
    /// `None` when the model fell below `n_min` this epoch.
    pub robust_cost: Option<Fixed>,
    pub vendor_count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawIndex {
    pub value: Fixed,
    pub active_models: Vec<ModelId>,
    /// Weights renormalized over the active models; sums to exactly one.
    pub weights: BTreeMap<ModelId, Fixed>,
    pub samples: Vec<ModelCostSample>,
}

/// Rescale the weights of `active` models to sum to one. The rounding
/// residual goes to the last active model so the sum is exact.
pub fn renormalize_weights(
    weights: &BTreeMap<ModelId, Fixed>,
    active: &[ModelId],
) -> BTreeMap<ModelId, Fixed> {
    let total: Fixed = active.iter().map(|m| weights.get(m).copied().unwrap_or_default()).sum();
    let mut out = BTreeMap::new();
    if active.is_empty() {
        return out;
    }
    if total.is_zero() {
        // Degenerate all-zero weights: equal split.
        let share = Fixed::ONE.div_int_floor(active.len() as i128);
        for m in active {
            out.insert(m.clone(), share);
        }
    } else {
        for m in active {
            let w = weights.get(m).copied().unwrap_or_default();
            out.insert(m.clone(), w.div_floor(total));
        }
    }
    let assigned: Fixed = out.values().copied().sum();
    let last = active.last().expect("non-empty");
    *out.get_mut(last).expect("present") += Fixed::ONE - assigned;
    out
}

/// `sum_m w_m * cost_m`, each product rounded down.
pub fn weighted_sum(weights: &BTreeMap<ModelId, Fixed>, costs: &BTreeMap<ModelId, Fixed>) -> Fixed {
    weights
        .iter()
        .map(|(m, w)| w.mul_floor(costs.get(m).copied().unwrap_or_default()))
        .sum()
}

/// Raw index over the valid quotes: models with fewer than `n_min` valid
/// vendor costs are dropped and the surviving weights renormalized.
pub fn compute_raw_index(quotes: &[PriceQuote], config: &BasketConfig) -> Result<RawIndex, IndexError> {
    let mut per_model: BTreeMap<&ModelId, Vec<Fixed>> = BTreeMap::new();
    let mut seen: BTreeSet<(&ModelId, &VendorId)> = BTreeSet::new();
    for q in quotes {
        if !config.registered(&q.model, &q.vendor) {
            return Err(IndexError::UnknownPair {
                model: q.model.clone(),
                vendor: q.vendor.clone(),
            });
        }
        if !seen.insert((&q.model, &q.vendor)) {
            return Err(IndexError::DuplicatePair {
                model: q.model.clone(),
                vendor: q.vendor.clone(),
            });
        }
        if q.valid {
            per_model
                .entry(&q.model)
                .or_default()
                .push(pair_cost(q, &config.workloads)?);
        }
    }

    let mut samples = Vec::with_capacity(config.models.len());
    let mut robust = BTreeMap::new();
    let mut active = Vec::new();
    for m in &config.models {
        let costs = per_model.remove(m).unwrap_or_default();
        let n = costs.len();
        let robust_cost = if n >= config.n_min && n > 0 {
            let c = aggregate_model(&costs, &config.estimator)?;
            robust.insert(m.clone(), c);
            active.push(m.clone());
            Some(c)
        } else {
            None
        };
        samples.push(ModelCostSample {
            model: m.clone(),
            costs,
            robust_cost,
            vendor_count: n,
        });
    }
    if active.is_empty() {
        return Err(IndexError::IndexUnavailable);
    }
    let weights = renormalize_weights(&config.weights, &active);
    let value = weighted_sum(&weights, &robust);
    Ok(RawIndex {
        value,
        active_models: active,
        weights,
        samples,
    })
}

/// EMA toward `raw`, then clamp to `prev * (1 ± delta_max)`.
///
/// The EMA is evaluated as `raw + lambda * (prev - raw)` so a constant input
/// is an exact fixed point. The band half-width is `floor(delta_max * prev)`,
/// which keeps `|result - prev| <= delta_max * prev` exact.
pub fn smooth_and_clip(raw: Fixed, prev: Fixed, lambda: Fixed, delta_max: Fixed) -> Result<Fixed, IndexError> {
    if !prev.is_positive() {
        return Err(IndexError::NonPositivePrevious);
    }
    let smoothed = raw + lambda.mul_floor(prev - raw);
    let band = delta_max.mul_floor(prev);
    Ok(smoothed.clamp(prev - band, prev + band))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexState {
    pub raw: Fixed,
    pub smoothed_prev: Fixed,
    pub smoothed: Fixed,
    pub epoch: Epoch,
    pub initial: Fixed,
    pub active_models: Vec<ModelId>,
}

/// Stateful off-chain calculator for one basket.
#[derive(Clone, Debug)]
pub struct IndexPipeline {
    config: BasketConfig,
    state: Option<IndexState>,
}

impl IndexPipeline {
    pub fn new(config: BasketConfig) -> Self {
        Self { config, state: None }
    }

    pub fn config(&self) -> &BasketConfig {
        &self.config
    }

    pub fn state(&self) -> Option<&IndexState> {
        self.state.as_ref()
    }

    /// First epoch: the raw value becomes `I_0` and the initial published value.
    pub fn bootstrap(&mut self, epoch: Epoch, quotes: &[PriceQuote]) -> Result<&IndexState, IndexError> {
        let raw = compute_raw_index(quotes, &self.config)?;
        if !raw.value.is_positive() {
            return Err(IndexError::NonPositivePrevious);
        }
        self.state = Some(IndexState {
            raw: raw.value,
            smoothed_prev: raw.value,
            smoothed: raw.value,
            epoch,
            initial: raw.value,
            active_models: raw.active_models,
        });
        Ok(self.state.as_ref().expect("just set"))
    }

    /// Advance one epoch. `prior` overrides the previous smoothed value (the
    /// on-chain published value is the prior when nodes follow the chain).
    /// On error the state is unchanged.
    pub fn step(
        &mut self,
        epoch: Epoch,
        quotes: &[PriceQuote],
        prior: Option<Fixed>,
    ) -> Result<&IndexState, IndexError> {
        let Some(prev_state) = self.state.as_ref() else {
            return self.bootstrap(epoch, quotes);
        };
        let prev = prior.unwrap_or(prev_state.smoothed);
        let raw = compute_raw_index(quotes, &self.config)?;
        let smoothed = smooth_and_clip(raw.value, prev, self.config.lambda, self.config.delta_max)?;
        let initial = prev_state.initial;
        self.state = Some(IndexState {
            raw: raw.value,
            smoothed_prev: prev,
            smoothed,
            epoch,
            initial,
            active_models: raw.active_models,
        });
        Ok(self.state.as_ref().expect("just set"))
    }
}

/// Median-estimator integrity envelope for a set of honest reports.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegrityBound {
    pub honest_reference: BTreeMap<ModelId, Fixed>,
    pub honest_envelope: BTreeMap<ModelId, Fixed>,
    /// Renormalized weights over the active models.
    pub weights: BTreeMap<ModelId, Fixed>,
    /// `sum_m w_m * C_honest_m`, rounded the same way as the raw index.
    pub honest_index: Fixed,
    /// `sum_m w_m * eps_m`, each term rounded up.
    pub index_bound: Fixed,
}

/// Honest reference per model is the honest median and the envelope is the
/// largest honest deviation from it. Models are active when honest plus
/// adversarial reports reach `n_min`. Fails when any active model has
/// `f >= n / 2`.
pub fn integrity_bound(
    honest_costs: &BTreeMap<ModelId, Vec<Fixed>>,
    adversarial_count: &BTreeMap<ModelId, usize>,
    config: &BasketConfig,
) -> Result<IntegrityBound, IndexError> {
    let mut reference = BTreeMap::new();
    let mut envelope = BTreeMap::new();
    let mut active = Vec::new();
    for m in &config.models {
        let honest = honest_costs.get(m).map(Vec::as_slice).unwrap_or(&[]);
        let f = adversarial_count.get(m).copied().unwrap_or(0);
        let n = honest.len() + f;
        if n < config.n_min || honest.is_empty() {
            continue;
        }
        if 2 * f >= n {
            return Err(IndexError::BoundInapplicable {
                model: m.clone(),
                adversarial: f,
                total: n,
            });
        }
        let r = median(honest).expect("non-empty");
        let eps = honest.iter().map(|c| (*c - r).abs()).max().expect("non-empty");
        reference.insert(m.clone(), r);
        envelope.insert(m.clone(), eps);
        active.push(m.clone());
    }
    if active.is_empty() {
        return Err(IndexError::IndexUnavailable);
    }
    let weights = renormalize_weights(&config.weights, &active);
    let honest_index = weighted_sum(&weights, &reference);
    let index_bound = weights
        .iter()
        .map(|(m, w)| w.mul_ceil(envelope[m]))
        .sum();
    Ok(IntegrityBound {
        honest_reference: reference,
        honest_envelope: envelope,
        weights,
        honest_index,
        index_bound,
    })
}
