//! wasm-bindgen exports for the static demo page in `www/`. Every export returns a JSON
//! string; errors come back as `{"error": "..."}` so the page has one code path.

use latthiggs::asymptotics::{decay_constants, Cutoffs};
use latthiggs::cli::constants;
use latthiggs::clusters::Phase;
use latthiggs::oracle::{transfer_matrix_line, Line};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn respond(r: latthiggs::Result<Value>) -> String {
    match r {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e.to_string() }).to_string(),
    }
}

/// `E(γ)` and `−log E(γ)/|γ|` for centered straight lines of length `1..=max_len` in the
/// `Z_2` model on an `N × N` box.
#[wasm_bindgen]
pub fn wilson_lines(side: usize, beta: f64, kappa: f64, max_len: usize) -> String {
    respond((|| {
        let mut rows = Vec::new();
        for len in 1..=max_len.min(side) {
            let t = transfer_matrix_line(side, beta, kappa, Line::centered(side, len))?;
            rows.push(json!({ "len": len, "e": t.expectation, "rate": t.neg_log / len as f64, "margin": t.margin }));
        }
        Ok(json!({ "side": side, "beta": beta, "kappa": kappa, "rows": rows }))
    })())
}

/// Decay constants `a`, `C` and their tail bounds from the truncated cluster expansion.
#[wasm_bindgen]
pub fn decay(phase: &str, beta: f64, kappa: f64, cutoff: usize) -> String {
    respond((|| {
        let phase: Phase = phase.parse()?;
        let cut = Cutoffs { max_size: cutoff, kmax: cutoff };
        Ok(serde_json::to_value(decay_constants(phase, 2, beta, kappa, cut, None)?)?)
    })())
}

/// Convergence thresholds, plus tail constants where `(β, κ)` is in a regime.
#[wasm_bindgen]
pub fn thresholds(dim: usize, beta: f64, kappa: f64) -> String {
    respond((|| Ok(serde_json::to_value(constants(dim, Some(beta), Some(kappa))?)?))())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exports_return_json() {
        let v: Value = serde_json::from_str(&wilson_lines(6, 0.2, 0.4, 3)).unwrap();
        assert_eq!(v["rows"].as_array().unwrap().len(), 3);
        let v: Value = serde_json::from_str(&decay("higgs", 0.5, 2.0, 2)).unwrap();
        assert!(v["a"].as_f64().unwrap() > 0.0);
        let v: Value = serde_json::from_str(&decay("conf", 0.5, 2.0, 2)).unwrap();
        assert!(v["error"].is_string());
        let v: Value = serde_json::from_str(&thresholds(2, 1e-4, 2.0)).unwrap();
        assert_eq!(v["m2"], 4);
    }
}
