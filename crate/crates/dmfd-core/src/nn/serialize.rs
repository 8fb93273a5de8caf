//! Parameter-set serialization.
//!
//! Checkpoints are JSON documents mapping each parameter name to its shape
//! and a list of decimal strings. Values are formatted with Rust's shortest
//! round-trip `f64` formatting and parsed back with `f64::from_str`, which
//! reproduces the original bits exactly, including Adam moment buffers and
//! the optimizer step count.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{NnError, ParamSet, Result};
use crate::tensor::Tensor;

#[derive(Serialize, Deserialize)]
struct TensorDoc {
    shape: Vec<usize>,
    values: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ParamSetDoc {
    step_count: u64,
    params: BTreeMap<String, TensorDoc>,
    adam_m: BTreeMap<String, TensorDoc>,
    adam_v: BTreeMap<String, TensorDoc>,
}

fn tensor_to_doc(t: &Tensor) -> TensorDoc {
    TensorDoc {
        shape: t.shape().to_vec(),
        values: t.data().iter().map(|v| format!("{v}")).collect(),
    }
}

fn tensor_from_doc(name: &str, doc: &TensorDoc) -> Result<Tensor> {
    let expect: usize = doc.shape.iter().product();
    if expect != doc.values.len() {
        return Err(NnError::Malformed(format!(
            "tensor {name}: shape {:?} expects {expect} values, found {}",
            doc.shape,
            doc.values.len()
        )));
    }
    let mut data = Vec::with_capacity(doc.values.len());
    for (i, s) in doc.values.iter().enumerate() {
        let v: f64 = s
            .parse()
            .map_err(|_| NnError::Malformed(format!("tensor {name}[{i}]: bad number {s:?}")))?;
        data.push(v);
    }
    Ok(Tensor::from_vec(&doc.shape, data))
}

fn map_from_doc(docs: &BTreeMap<String, TensorDoc>) -> Result<BTreeMap<String, Tensor>> {
    docs.iter()
        .map(|(k, d)| Ok((k.clone(), tensor_from_doc(k, d)?)))
        .collect()
}

/// Serializes a parameter set (values, moments, step count) to a JSON
/// document string.
pub fn paramset_to_document(params: &ParamSet) -> String {
    let (adam_m, adam_v) = params.moments();
    let doc = ParamSetDoc {
        step_count: params.step_count(),
        params: params
            .entries()
            .iter()
            .map(|(k, v)| (k.clone(), tensor_to_doc(v)))
            .collect(),
        adam_m: adam_m.iter().map(|(k, v)| (k.clone(), tensor_to_doc(v))).collect(),
        adam_v: adam_v.iter().map(|(k, v)| (k.clone(), tensor_to_doc(v))).collect(),
    };
    serde_json::to_string_pretty(&doc).expect("parameter document serialization cannot fail")
}

/// Parses a parameter document produced by [`paramset_to_document`].
///
/// Returns a structured error (never panics) on malformed input: bad JSON,
/// inconsistent key sets, shape/value-count mismatches, or unparsable
/// numbers.
pub fn paramset_from_document(text: &str) -> Result<ParamSet> {
    let doc: ParamSetDoc =
        serde_json::from_str(text).map_err(|e| NnError::Malformed(e.to_string()))?;
    let entries = map_from_doc(&doc.params)?;
    let adam_m = map_from_doc(&doc.adam_m)?;
    let adam_v = map_from_doc(&doc.adam_v)?;
    for (name, t) in &entries {
        for (label, map) in [("adam_m", &adam_m), ("adam_v", &adam_v)] {
            match map.get(name) {
                None => {
                    return Err(NnError::Malformed(format!(
                        "parameter {name} missing from {label}"
                    )))
                }
                Some(m) if m.shape() != t.shape() => {
                    return Err(NnError::Malformed(format!(
                        "parameter {name}: {label} shape {:?} != value shape {:?}",
                        m.shape(),
                        t.shape()
                    )))
                }
                _ => {}
            }
        }
    }
    if adam_m.len() != entries.len() || adam_v.len() != entries.len() {
        return Err(NnError::Malformed(
            "moment maps carry keys absent from params".into(),
        ));
    }
    Ok(ParamSet::restore_raw(entries, adam_m, adam_v, doc.step_count))
}
