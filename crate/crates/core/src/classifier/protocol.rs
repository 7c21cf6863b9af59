//! Line-delimited JSON wire protocol between the toolkit and a model server.
//!
//! ```text
//! -> {"op":"hello","version":1}
//! <- {"op":"hello","version":1,"classes":K,"input_shape":[c,h,w],"gradient":true}
//! -> {"op":"predict","id":N,"shape":[b,c,h,w],"data_b64":"..."}
//! <- {"id":N,"probs":[[...],...]}
//! -> {"op":"gradient","id":N,"label":y,"shape":[1,c,h,w],"data_b64":"..."}
//! <- {"id":N,"shape":[1,c,h,w],"data_b64":"..."}
//! <- {"id":N,"error":"message"}
//! ```
//!
//! Payloads are base64 of little-endian `f32`, row-major.

use std::io::{self, BufRead, Write};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde_json::{json, Value};

use crate::classifier::BuiltinNet;
use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: u64 = 1;

pub fn encode_f32(data: &[f32]) -> String {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_f32(text: &str) -> Result<Vec<f32>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| Error::Server(format!("bad base64 payload: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Server(format!(
            "payload of {} bytes is not a whole number of f32",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HelloInfo {
    pub classes: usize,
    pub input_shape: [usize; 3],
    pub gradient: bool,
}

pub fn hello_request() -> String {
    json!({"op": "hello", "version": PROTOCOL_VERSION}).to_string()
}

pub fn hello_reply(info: &HelloInfo) -> String {
    json!({
        "op": "hello",
        "version": PROTOCOL_VERSION,
        "classes": info.classes,
        "input_shape": info.input_shape,
        "gradient": info.gradient,
    })
    .to_string()
}

pub fn parse_hello_reply(line: &str) -> Result<HelloInfo> {
    let v: Value = serde_json::from_str(line)?;
    if v.get("op").and_then(Value::as_str) != Some("hello") {
        return Err(Error::Server(format!("expected hello reply, got {line}")));
    }
    let version = v
        .get("version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Server("hello reply lacks version".into()))?;
    if version != PROTOCOL_VERSION {
        return Err(Error::ProtocolVersion(version));
    }
    let classes = v
        .get("classes")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Server("hello reply lacks classes".into()))? as usize;
    let shape: Vec<usize> = v
        .get("input_shape")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_u64).map(|d| d as usize).collect())
        .unwrap_or_default();
    let input_shape: [usize; 3] = shape
        .try_into()
        .map_err(|_| Error::Server("hello reply input_shape must be [c, h, w]".into()))?;
    let gradient = v.get("gradient").and_then(Value::as_bool).unwrap_or(false);
    if classes < 2 {
        return Err(Error::Server(format!("server reports {classes} classes")));
    }
    Ok(HelloInfo {
        classes,
        input_shape,
        gradient,
    })
}

pub fn predict_request(id: u64, shape: [usize; 4], data: &[f32]) -> String {
    json!({"op": "predict", "id": id, "shape": shape, "data_b64": encode_f32(data)}).to_string()
}

pub fn gradient_request(id: u64, label: usize, shape: [usize; 4], data: &[f32]) -> String {
    json!({
        "op": "gradient",
        "id": id,
        "label": label,
        "shape": shape,
        "data_b64": encode_f32(data),
    })
    .to_string()
}

/// Returns the reply's `id`, if it has one.
pub fn reply_id(v: &Value) -> Option<u64> {
    v.get("id").and_then(Value::as_u64)
}

fn reply_error(v: &Value) -> Option<Error> {
    v.get("error")
        .map(|e| Error::Server(e.as_str().map_or_else(|| e.to_string(), str::to_owned)))
}

pub fn parse_predict_reply(v: &Value) -> Result<Vec<Vec<f64>>> {
    if let Some(e) = reply_error(v) {
        return Err(e);
    }
    let rows = v
        .get("probs")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Server(format!("predict reply lacks probs: {v}")))?;
    rows.iter()
        .map(|r| {
            r.as_array()
                .ok_or_else(|| Error::Server("probs row is not an array".into()))?
                .iter()
                .map(|x| {
                    x.as_f64()
                        .ok_or_else(|| Error::Server("probability is not a number".into()))
                })
                .collect()
        })
        .collect()
}

pub fn parse_gradient_reply(v: &Value, expected_len: usize) -> Result<Vec<f32>> {
    if let Some(e) = reply_error(v) {
        return Err(e);
    }
    let data = v
        .get("data_b64")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Server(format!("gradient reply lacks data_b64: {v}")))?;
    let g = decode_f32(data)?;
    if g.len() != expected_len {
        return Err(Error::Server(format!(
            "gradient has {} elements, expected {expected_len}",
            g.len()
        )));
    }
    Ok(g)
}

fn shape_of(v: &Value) -> Result<Vec<usize>> {
    v.get("shape")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_u64).map(|d| d as usize).collect())
        .ok_or_else(|| Error::Server("request lacks shape".into()))
}

fn handle_request(net: &BuiltinNet, v: &Value) -> Result<Value> {
    let op = v.get("op").and_then(Value::as_str).unwrap_or("");
    if op == "hello" {
        let version = v.get("version").and_then(Value::as_u64).unwrap_or(0);
        if version != PROTOCOL_VERSION {
            return Err(Error::ProtocolVersion(version));
        }
        let info = HelloInfo {
            classes: net.class_count(),
            input_shape: net.input_shape(),
            gradient: true,
        };
        return Ok(serde_json::from_str(&hello_reply(&info))?);
    }
    let id = reply_id(v).ok_or_else(|| Error::Server("request lacks id".into()))?;
    let shape = shape_of(v)?;
    if shape.len() != 4 || shape[1..] != net.input_shape() {
        return Err(Error::Server(format!(
            "shape {shape:?} does not match input {:?}",
            net.input_shape()
        )));
    }
    let data = decode_f32(
        v.get("data_b64")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Server("request lacks data_b64".into()))?,
    )?;
    if data.len() != shape.iter().product::<usize>() {
        return Err(Error::Server("payload length does not match shape".into()));
    }
    match op {
        "predict" => {
            let probs = net.predict_batch(&data, shape[0]);
            let rows: Vec<&[f64]> = probs.iter_rows().collect();
            Ok(json!({"id": id, "probs": rows}))
        }
        "gradient" => {
            if shape[0] != 1 {
                return Err(Error::Server("gradient takes a single image".into()));
            }
            let label = v
                .get("label")
                .and_then(Value::as_u64)
                .ok_or_else(|| Error::Server("gradient request lacks label".into()))?
                as usize;
            if label >= net.class_count() {
                return Err(Error::Server(format!("label {label} out of range")));
            }
            let x: Vec<f64> = data.iter().map(|&p| f64::from(p)).collect();
            let (_, g) = net.loss_and_gradient(&x, label);
            let g: Vec<f32> = g.into_iter().map(|v| v as f32).collect();
            Ok(json!({"id": id, "shape": shape, "data_b64": encode_f32(&g)}))
        }
        other => Err(Error::Server(format!("unknown op `{other}`"))),
    }
}

/// Serves `net` over the protocol until `input` reaches EOF. Malformed
/// requests get an error reply carrying the request id (or `null`).
pub fn serve<R: BufRead, W: Write>(net: &BuiltinNet, input: R, mut output: W) -> io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Value>(&line) {
            Ok(v) => handle_request(net, &v)
                .unwrap_or_else(|e| json!({"id": v.get("id").cloned().unwrap_or(Value::Null), "error": e.to_string()})),
            Err(e) => json!({"id": Value::Null, "error": format!("malformed request: {e}")}),
        };
        writeln!(output, "{reply}")?;
        output.flush()?;
    }
    Ok(())
}
