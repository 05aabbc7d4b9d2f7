//! WebAssembly bindings for the browser demo. Each export takes and returns
//! JSON so the page needs no generated bindings beyond strings.

use critical_market::clearing::{clear, settle, Mechanism};
use critical_market::crisis::{run_crisis, CrisisConfig, FairnessMode, ScriptedStrategy};
use critical_market::market::{cgd_allocate, MarketState, OfferBook, Resource, Trade};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct CgdCurve {
    pub volumes: Vec<f64>,
    /// `awards[i][b]` is buyer `b`'s right at `volumes[i]`.
    pub awards: Vec<Vec<f64>>,
}

/// Rights of each buyer as the offered volume sweeps from zero to a little
/// past total demand.
pub fn cgd_curve(demands: &[f64], points: usize) -> Result<CgdCurve, String> {
    if points < 2 {
        return Err("need at least two points".into());
    }
    let top = 1.2 * demands.iter().sum::<f64>();
    let volumes: Vec<f64> = (0..points).map(|i| top * i as f64 / (points - 1) as f64).collect();
    let awards = volumes.iter().map(|&v| cgd_allocate(v, demands).map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
    Ok(CgdCurve { volumes, awards })
}

#[derive(Debug, Deserialize)]
pub struct ClearRequest {
    pub state: MarketState,
    pub book: OfferBook,
    pub mechanism: Mechanism,
    pub fairness: FairnessMode,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Serialize)]
pub struct ClearResponse {
    pub trades: Vec<Trade>,
    pub good_volume: f64,
    pub right_volume: f64,
    pub settled: MarketState,
}

pub fn clear_market(request: &ClearRequest) -> Result<ClearResponse, String> {
    let rules = critical_market::clearing::ClearingRules::with_rights(request.fairness.regime());
    let mut rng = ChaCha8Rng::seed_from_u64(request.seed);
    let ledger = clear(request.mechanism, &request.state, &request.book, &rules, &mut rng).map_err(|e| e.to_string())?;
    let settled = settle(&ledger, &request.state, &request.book, &rules, request.mechanism.price_rule())
        .map_err(|e| e.to_string())?;
    Ok(ClearResponse {
        good_volume: ledger.good_volume(),
        right_volume: ledger.right_volume(),
        trades: ledger.trades,
        settled,
    })
}

#[derive(Debug, Deserialize)]
pub struct CrisisRequest {
    pub config: CrisisConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "half")]
    pub ask_fraction: f64,
    #[serde(default = "quarter")]
    pub right_ask_fraction: f64,
}

fn half() -> f64 {
    0.5
}

fn quarter() -> f64 {
    0.25
}

#[derive(Debug, Serialize)]
pub struct MarketSummary {
    pub cleared_volume: f64,
    pub rights_traded: f64,
    pub frustration: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct CrisisResponse {
    pub poa: f64,
    pub markets: Vec<MarketSummary>,
}

/// One crisis under the scripted profile.
pub fn crisis_poa(request: &CrisisRequest) -> Result<CrisisResponse, String> {
    let mut strategy =
        ScriptedStrategy { ask_fraction: request.ask_fraction, right_ask_fraction: request.right_ask_fraction };
    let mut rng = ChaCha8Rng::seed_from_u64(request.seed);
    let trace = run_crisis(&request.config, &mut strategy, &mut rng).map_err(|e| e.to_string())?;
    let markets = trace
        .outcomes
        .iter()
        .map(|o| MarketSummary {
            cleared_volume: o.cleared_good_volume,
            rights_traded: o.ledger.trades.iter().filter(|t| t.resource == Resource::Right).map(|t| t.volume).sum(),
            frustration: o.frustrations.per_buyer.clone(),
        })
        .collect();
    Ok(CrisisResponse { poa: trace.poa, markets })
}

fn respond<T: Serialize>(out: Result<T, String>) -> Result<String, JsError> {
    let out = out.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&out).map_err(|e| JsError::new(&e.to_string()))
}

fn request<T: for<'de> Deserialize<'de>>(json: &str) -> Result<T, String> {
    serde_json::from_str(json).map_err(|e| format!("bad request: {e}"))
}

#[wasm_bindgen(js_name = cgdCurve)]
pub fn cgd_curve_js(demands: &[f64], points: usize) -> Result<String, JsError> {
    respond(cgd_curve(demands, points))
}

#[wasm_bindgen(js_name = clearMarket)]
pub fn clear_market_js(json: &str) -> Result<String, JsError> {
    respond(request(json).and_then(|r| clear_market(&r)))
}

#[wasm_bindgen(js_name = crisisPoa)]
pub fn crisis_poa_js(json: &str) -> Result<String, JsError> {
    respond(request(json).and_then(|r| crisis_poa(&r)))
}

#[cfg(test)]
mod tests {
    use super::*;

    const WORKED: &str = r#"{
        "state": {"buyer_money": [2, 1], "buyer_good": [0, 0], "rights": [0.5, 1.5], "demands": [1, 3],
                  "seller_money": [0], "seller_good": [2]},
        "book": {"sellers": [{"volume": 2, "price": 1}],
                 "buyers": [
                    {"right_sale_volume": 0, "right_sale_price": 0, "right_bid_volume": 0.5, "right_bid_price": 1,
                     "good_bid_volume": 1, "good_bid_price": 1},
                    {"right_sale_volume": 0.5, "right_sale_price": 1, "right_bid_volume": 0, "right_bid_price": 0,
                     "good_bid_volume": 1, "good_bid_price": 2}]},
        "mechanism": "max-flow-absolute",
        "fairness": "rights"
    }"#;

    #[test]
    fn curve_ends_at_demand() {
        let c = cgd_curve(&[1.0, 3.0], 7).unwrap();
        assert_eq!(c.volumes.len(), 7);
        assert_eq!(c.awards[0], vec![0.0, 0.0]);
        assert_eq!(c.awards[6], vec![1.0, 3.0]);
        assert!(cgd_curve(&[1.0], 1).is_err());
    }

    #[test]
    fn clears_the_worked_market() {
        let r = clear_market(&request(WORKED).unwrap()).unwrap();
        assert!((r.good_volume - 2.0).abs() < 1e-12);
        assert!((r.right_volume - 0.5).abs() < 1e-12);
        assert_eq!(r.settled.buyer_good, vec![1.0, 1.0]);
        assert!(serde_json::to_string(&r).unwrap().contains("\"trades\""));
    }

    #[test]
    fn rejects_malformed_requests() {
        assert!(request::<ClearRequest>("{}").is_err());
        let mut bad: serde_json::Value = serde_json::from_str(WORKED).unwrap();
        bad["state"]["rights"] = serde_json::json!([0.0, 0.0]);
        let r: ClearRequest = serde_json::from_value(bad).unwrap();
        // b1 offers rights it no longer holds
        assert!(clear_market(&r).unwrap_err().contains("rights"));
    }

    #[test]
    fn scripted_crisis_reports_every_market() {
        let config = CrisisConfig {
            horizon: 4,
            repeats: 1,
            mechanism: Mechanism::Greedy,
            fairness: FairnessMode::Rights,
            earnings: vec![1.0, 0.5, 0.25],
            resupply: vec![1.0, 0.5],
            demands: vec![1.0, 1.0, 1.0],
            price_cap: 1.0,
            storage_cost: -0.125,
            terminal_stock_value: 0.0,
            terminal_money_value: 1.0,
            discount: 0.99,
        };
        let json = serde_json::json!({ "config": config, "seed": 1 }).to_string();
        let r = crisis_poa(&request(&json).unwrap()).unwrap();
        assert_eq!(r.markets.len(), 4);
        assert!((0.0..=1.0).contains(&r.poa));
    }
}
