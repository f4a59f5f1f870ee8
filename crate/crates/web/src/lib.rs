//! Browser demo bindings. Every export takes and returns JSON text; errors
//! come back as `{"error": "..."}` so nothing here needs a JS value type.

use dmmgr::data::{Detection, EmbeddingTable};
use dmmgr::harness::{lr_at, TrainConfig};
use dmmgr::spatial::build_graph_with;
use dmmgr::tensor::{Graph, Mode, ParamStore, Tensor};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn respond(r: Result<Value, String>) -> String {
    match r {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e }).to_string(),
    }
}

/// `boxes`: `[[x0, y0, x1, y1], ...]`. Returns each node's neighbours and
/// every edge with its relative spatial vector.
pub fn spatial_graph(boxes: &str, k: usize) -> Result<Value, String> {
    let boxes: Vec<[f64; 4]> = serde_json::from_str(boxes).map_err(|e| e.to_string())?;
    let dets = boxes
        .iter()
        .enumerate()
        .map(|(i, b)| Detection::new(&format!("object {i}"), *b, 1.0))
        .collect::<dmmgr::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let g = build_graph_with(&dets, &EmbeddingTable::new(1), k).map_err(|e| e.to_string())?;
    let edges: Vec<Value> = g
        .edges
        .iter()
        .map(|e| json!({ "source": e.source, "target": e.target, "r": e.r }))
        .collect();
    Ok(json!({ "neighbors": if g.sentinel { Vec::new() } else { g.neighbors }, "edges": edges }))
}

/// Learning rate per epoch for `key = value` overrides of the defaults.
pub fn lr_curve(config: &str) -> Result<Value, String> {
    let cfg = TrainConfig::parse(config).map_err(|e| e.to_string())?;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(json!({
        "epochs": cfg.epochs,
        "lr": (0..cfg.epochs).map(|e| lr_at(e, &cfg)).collect::<Vec<_>>(),
    }))
}

/// `scores`: rows of three element scores (subject, relation, object).
/// Returns `0.5 · (1 − softmax(row))`: the element most like the question
/// is suppressed and the other two share the weight.
pub fn element_weights(scores: &str) -> Result<Value, String> {
    let rows: Vec<[f64; 3]> = serde_json::from_str(scores).map_err(|e| e.to_string())?;
    if rows.is_empty() {
        return Ok(json!({ "weights": [] }));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let params = ParamStore::<f64>::new();
    let mut g = Graph::new(&params, Mode::Eval);
    let run = |g: &mut Graph<f64>| -> dmmgr::Result<Vec<f64>> {
        let x = g.input(Tensor::new(vec![rows.len(), 3], flat)?)?;
        let z = g.softmax(x, 1)?;
        let s = g.affine(z, -0.5, 0.5)?;
        Ok(g.value(s).data().to_vec())
    };
    let s = run(&mut g).map_err(|e| e.to_string())?;
    Ok(json!({ "weights": s.chunks(3).collect::<Vec<_>>() }))
}

#[wasm_bindgen(js_name = spatialGraph)]
pub fn spatial_graph_js(boxes: &str, k: usize) -> String {
    respond(spatial_graph(boxes, k))
}

#[wasm_bindgen(js_name = lrCurve)]
pub fn lr_curve_js(config: &str) -> String {
    respond(lr_curve(config))
}

#[wasm_bindgen(js_name = elementWeights)]
pub fn element_weights_js(scores: &str) -> String {
    respond(element_weights(scores))
}
