//! Browser bindings for three views of the example scenario: the published
//! index against the raw basket, vault coverage against its solvency floor
//! under maximal index growth, and execution capacity per pricing regime.
//!
//! Every function returns one flat `Float64Array`; the layouts are given
//! per function.

use wasm_bindgen::prelude::*;

use clawcoin_core::fixed::Fixed;
use clawcoin_core::ledger::{Asset, Ledger};
use clawcoin_core::oracle::{build_commitment, AggregationMode, OracleOnChainState};
use clawcoin_core::sim::agents::Regime;
use clawcoin_core::sim::experiments::{capacity_experiment, capacity_paths, RegimeSetup};
use clawcoin_core::sim::metrics::mean;
use clawcoin_core::sim::scenario::{AdversarySpec, ScenarioConfig};
use clawcoin_core::sim::trajectory::Trajectory;
use clawcoin_core::sim::world::{build_committee, holder, publish_value, run_protocol, SPONSOR};
use clawcoin_core::vault::{solvency_bound, RiskParams, Vault};

fn fixed(name: &str, v: f64) -> Result<Fixed, JsError> {
    Fixed::from_f64(v).map_err(|e| JsError::new(&format!("{name}: {e}")))
}

fn validated(config: ScenarioConfig) -> Result<ScenarioConfig, JsError> {
    config.validate().map_err(|errors| {
        let msg: Vec<String> = errors.iter().map(|e| format!("{}: {}", e.path, e.message)).collect();
        JsError::new(&msg.join("; "))
    })?;
    Ok(config)
}

/// `[honest raw index; published index]`, each `epochs` long, both
/// normalized to the first raw value.
#[wasm_bindgen]
pub fn index_trajectory(seed: u32, lambda: f64, delta_max: f64, adversaries: bool) -> Result<Vec<f64>, JsError> {
    let mut config = ScenarioConfig::example();
    config.basket.lambda = fixed("lambda", lambda)?;
    config.basket.delta_max = fixed("delta_max", delta_max)?;
    config.risk.delta_max = config.basket.delta_max;
    if !adversaries {
        config.adversary = AdversarySpec::default();
    }
    let config = validated(config)?;
    let traj = Trajectory::generate(&config, u64::from(seed));
    let run = run_protocol(&config, &traj);
    let base = run.records[0].honest_raw;
    let mut out: Vec<f64> = run.records.iter().map(|r| r.honest_raw / base).collect();
    out.extend(run.records.iter().map(|r| r.published / base));
    Ok(out)
}

/// Vault left alone while the index rises by `delta_max` every epoch.
/// Returns `[simulated coverage; closed-form floor]`, each `epochs + 1`
/// long.
#[wasm_bindgen]
pub fn coverage_under_growth(gamma0: f64, rho: f64, delta_max: f64, epochs: u32) -> Result<Vec<f64>, JsError> {
    let gamma0 = fixed("gamma0", gamma0)?;
    if gamma0 <= Fixed::ONE {
        return Err(JsError::new("gamma0 must exceed 1"));
    }
    let params = RiskParams {
        gamma_min: gamma0,
        gamma_pause: Fixed::ONE,
        delta_max: fixed("delta_max", delta_max)?,
        tau: 4,
        mint_cap_base: Fixed::from_int(1_000_000),
        redeem_cap_base: Fixed::from_int(1_000_000),
        headroom_ref: Fixed::ratio(1, 10),
        replenish_rate: fixed("rho", rho)?,
    };
    params.validate().map_err(|e| JsError::new(&format!("{e:?}")))?;
    let mut vault = Vault::new(params.clone()).map_err(|e| JsError::new(&format!("{e:?}")))?;
    let mut ledger = Ledger::new();
    let mut oracle = OracleOnChainState::genesis(Fixed::ONE, 1, build_commitment(&[]), params.tau);
    let committee = build_committee(5, 3, AggregationMode::Committee);

    let deposit = Fixed::from_int(1000);
    let buffer = deposit.mul_floor(gamma0 - Fixed::ONE);
    let user = holder(0);
    ledger.credit_external(SPONSOR, Asset::Reserve, buffer, "sponsor buffer").map_err(|e| JsError::new(&e.to_string()))?;
    ledger.credit_external(&user, Asset::Reserve, deposit, "deposit").map_err(|e| JsError::new(&e.to_string()))?;
    vault.deposit_buffer(&mut ledger, SPONSOR, buffer).map_err(|e| JsError::new(&e.to_string()))?;
    vault.mint(&mut ledger, &mut oracle, &user, deposit).map_err(|e| JsError::new(&e.to_string()))?;

    let coverage = |vault: &Vault, oracle: &OracleOnChainState| {
        let s = vault.state();
        s.reserves.to_f64() / (s.supply.to_f64() * oracle.published_value.to_f64())
    };
    let mut sim = vec![coverage(&vault, &oracle)];
    for _ in 0..epochs {
        ledger.advance_epoch();
        let value = oracle.published_value + params.delta_max.mul_floor(oracle.published_value);
        publish_value(&committee, &mut oracle, &mut ledger, value, params.delta_max);
        vault.begin_epoch(&mut ledger, &mut oracle);
        sim.push(coverage(&vault, &oracle));
    }
    let start = Fixed::from_f64(sim[0]).unwrap_or(gamma0);
    let floor = (0..=epochs).map(|t| solvency_bound(start, &params, t).lower_bound.to_f64());
    sim.extend(floor);
    Ok(sim)
}

/// Agent-averaged capacity paths for fiat, raw cost, internal index and
/// clawcoin, each `epochs` long, followed by the four capacity CoVs.
#[wasm_bindgen]
pub fn regime_capacity(seed: u32, common_volatility: f64) -> Result<Vec<f64>, JsError> {
    let mut config = ScenarioConfig::example();
    config.shocks.common_volatility = common_volatility;
    let config = validated(config)?;
    let traj = Trajectory::generate(&config, u64::from(seed));
    let run = run_protocol(&config, &traj);
    let setup = RegimeSetup::new(&config, &traj, run.nav());
    let mut out = Vec::new();
    let mut covs = Vec::new();
    for r in Regime::ALL {
        let paths = capacity_paths(&setup, r);
        out.extend((0..setup.epochs()).map(|t| mean(&paths.iter().map(|p| p[t]).collect::<Vec<_>>())));
        covs.push(capacity_experiment(&setup, r).cov);
    }
    out.extend(covs);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coverage_stays_above_floor() {
        let out = coverage_under_growth(1.2, 0.0, 0.02, 5).unwrap();
        let (sim, floor) = out.split_at(6);
        for (s, f) in sim.iter().zip(floor) {
            assert!(s + 1e-12 >= *f, "{s} < {f}");
        }
        assert!((floor[5] - 1.0869).abs() < 1e-4);
    }

    #[test]
    fn capacity_layout() {
        let out = regime_capacity(3, 0.015).unwrap();
        let epochs = ScenarioConfig::example().epochs as usize;
        assert_eq!(out.len(), 4 * epochs + 4);
        let covs = &out[4 * epochs..];
        assert!(covs[3] < covs[0]);
    }

    #[test]
    fn index_layout() {
        let out = index_trajectory(1, 0.3, 0.05, true).unwrap();
        assert_eq!(out.len(), 2 * ScenarioConfig::example().epochs as usize);
        assert_eq!(out[0], 1.0);
    }
}
