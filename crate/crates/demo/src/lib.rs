//! WebAssembly bindings for the demo page. Every entry point takes and
//! returns JSON text; the logic lives in [`ops`] so it can be tested natively.

pub mod ops;

use wasm_bindgen::prelude::*;

fn to_js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

/// Constrained decode from unnormalized slider weights.
#[wasm_bindgen]
pub fn decode(request: &str) -> Result<String, JsError> {
    to_js(ops::decode(request))
}

/// Explanation span to BIEO tags.
#[wasm_bindgen]
pub fn encode_tags(request: &str) -> Result<String, JsError> {
    to_js(ops::encode(request))
}

/// BIEO tags back to a span, or an error naming the offending position.
#[wasm_bindgen]
pub fn decode_tags(tags: &str) -> Result<String, JsError> {
    to_js(ops::decode_tag_text(tags))
}

/// Grammar-constrained Viterbi over a K×7 emission table.
#[wasm_bindgen]
pub fn viterbi(request: &str) -> Result<String, JsError> {
    to_js(ops::viterbi(request))
}
