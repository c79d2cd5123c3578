//! safetensors layout: `u64 LE header length | JSON header | raw LE payload`.
//!
//! The header maps tensor names to `{"dtype", "shape", "data_offsets"}` with
//! offsets relative to the payload start; an optional `__metadata__` object
//! holds string pairs. Writers pad the JSON with trailing spaces to a multiple
//! of 8 bytes. Only `F32` and `I8` are accepted.

use std::path::Path;

use serde_json::Value;

use super::{check_shape, DType, Tensor, TensorData, TensorMap};
use crate::error::IoContext;
use crate::{fsutil, Error, Result};

const METADATA_KEY: &str = "__metadata__";

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization is infallible")
}

/// Header JSON (unpadded) for `m`, entries in insertion order.
fn header_json(m: &TensorMap) -> String {
    let mut parts = Vec::with_capacity(m.len() + 1);
    if !m.metadata.is_empty() {
        let kv: Vec<String> = m
            .metadata
            .iter()
            .map(|(k, v)| format!("{}:{}", json_str(k), json_str(v)))
            .collect();
        parts.push(format!("{}:{{{}}}", json_str(METADATA_KEY), kv.join(",")));
    }
    let mut offset = 0usize;
    for t in m.iter() {
        let len = t.numel() * t.dtype().size();
        let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        parts.push(format!(
            "{}:{{\"dtype\":\"{}\",\"shape\":[{}],\"data_offsets\":[{},{}]}}",
            json_str(t.name()),
            t.dtype().as_str(),
            shape.join(","),
            offset,
            offset + len
        ));
        offset += len;
    }
    format!("{{{}}}", parts.join(","))
}

pub fn encode_model(m: &TensorMap) -> Vec<u8> {
    let mut header = header_json(m);
    while header.len() % 8 != 0 {
        header.push(' ');
    }
    let payload: usize = m.iter().map(|t| t.numel() * t.dtype().size()).sum();
    let mut out = Vec::with_capacity(8 + header.len() + payload);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for t in m.iter() {
        match t.data() {
            TensorData::F32(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            TensorData::I8(v) => out.extend(v.iter().map(|&x| x as u8)),
        }
    }
    out
}

pub fn save_model(m: &TensorMap, path: impl AsRef<Path>) -> Result<()> {
    fsutil::write_bytes_atomic(path.as_ref(), &encode_model(m))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TensorMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).with_path(path)?;
    decode_model(&bytes)
}

struct Entry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    start: usize,
    end: usize,
}

fn parse_entry(name: &str, v: &Value) -> Result<Entry> {
    let bad = |what: &str| Error::Format(format!("tensor '{name}': {what}"));
    let obj = v.as_object().ok_or_else(|| bad("header entry is not an object"))?;
    let dtype = match obj.get("dtype").and_then(Value::as_str) {
        Some("F32") => DType::F32,
        Some("I8") => DType::I8,
        Some(other) => {
            return Err(Error::Unsupported(format!(
                "tensor '{name}': dtype {other} (only F32 and I8 are accepted)"
            )))
        }
        None => return Err(bad("missing dtype")),
    };
    let shape = obj
        .get("shape")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("missing shape"))?
        .iter()
        .map(|d| d.as_u64().map(|d| d as usize).ok_or_else(|| bad("shape is not a list of integers")))
        .collect::<Result<Vec<_>>>()?;
    let offsets = obj
        .get("data_offsets")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("missing data_offsets"))?;
    let (start, end) = match offsets.as_slice() {
        [a, b] => (
            a.as_u64().ok_or_else(|| bad("bad data_offsets"))? as usize,
            b.as_u64().ok_or_else(|| bad("bad data_offsets"))? as usize,
        ),
        _ => return Err(bad("data_offsets must have two entries")),
    };
    let numel = check_shape(name, &shape)?;
    if end < start || Some(end - start) != numel.checked_mul(dtype.size()) {
        return Err(bad(&format!(
            "data_offsets [{start},{end}] do not match shape {shape:?} of {}",
            dtype.as_str()
        )));
    }
    Ok(Entry {
        name: name.to_owned(),
        dtype,
        shape,
        start,
        end,
    })
}

pub fn decode_model(bytes: &[u8]) -> Result<TensorMap> {
    if bytes.len() < 8 {
        return Err(Error::Format("file shorter than the 8-byte header length".into()));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap());
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|n| n.checked_add(8))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| {
            Error::Format(format!(
                "header length {header_len} exceeds file size {}",
                bytes.len()
            ))
        })?;
    let header: Value = serde_json::from_slice(&bytes[8..header_end])
        .map_err(|e| Error::Format(format!("header is not valid JSON: {e}")))?;
    let obj = header
        .as_object()
        .ok_or_else(|| Error::Format("header is not a JSON object".into()))?;

    let mut map = TensorMap::new();
    let mut entries = Vec::with_capacity(obj.len());
    for (name, v) in obj {
        if name == METADATA_KEY {
            let md = v
                .as_object()
                .ok_or_else(|| Error::Format("__metadata__ is not an object".into()))?;
            for (k, v) in md {
                let v = v.as_str().ok_or_else(|| {
                    Error::Format(format!("__metadata__ value for '{k}' is not a string"))
                })?;
                map.metadata.insert(k.clone(), v.to_owned());
            }
            continue;
        }
        entries.push(parse_entry(name, v)?);
    }
    entries.sort_by_key(|e| (e.start, e.end));
    for pair in entries.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(Error::Format(format!(
                "tensors '{}' and '{}' overlap",
                pair[0].name, pair[1].name
            )));
        }
    }

    let payload = &bytes[header_end..];
    let declared = entries.last().map_or(0, |e| e.end);
    if declared > payload.len() {
        return Err(Error::Integrity(format!(
            "payload truncated: header declares {declared} bytes, file holds {}",
            payload.len()
        )));
    }
    if declared < payload.len() {
        return Err(Error::Integrity(format!(
            "{} trailing bytes after the last tensor",
            payload.len() - declared
        )));
    }

    for e in entries {
        let raw = &payload[e.start..e.end];
        let data = match e.dtype {
            DType::F32 => TensorData::F32(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::I8 => TensorData::I8(raw.iter().map(|&b| b as i8).collect()),
        };
        map.insert(Tensor::new(e.name, e.shape, data)?)?;
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two() -> TensorMap {
        let mut m = TensorMap::new();
        m.insert(Tensor::from_f32("w", vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        m
    }

    #[test]
    fn roundtrip_small() {
        let m = two_by_two();
        let back = decode_model(&encode_model(&m)).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back.get("w").unwrap().shape(), &[2, 2]);
        assert_eq!(back, m);
    }

    #[test]
    fn empty_map_is_a_valid_file() {
        let bytes = encode_model(&TensorMap::new());
        assert_eq!(&bytes[..8], &8u64.to_le_bytes());
        assert_eq!(&bytes[8..], b"{}      ");
        assert!(decode_model(&bytes).unwrap().is_empty());
    }

    #[test]
    fn single_int8_byte() {
        let mut m = TensorMap::new();
        m.insert(Tensor::from_i8("b", vec![1], vec![-7]).unwrap()).unwrap();
        let back = decode_model(&encode_model(&m)).unwrap();
        assert_eq!(back.get("b").unwrap().as_i8(), Some(&[-7i8][..]));
    }

    #[test]
    fn truncated_payload_is_integrity_error() {
        let bytes = encode_model(&two_by_two());
        let err = decode_model(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)), "{err}");
    }

    #[test]
    fn malformed_headers_are_format_errors() {
        assert!(matches!(decode_model(b"\x01\x00"), Err(Error::Format(_))));
        let mut bytes = 1000u64.to_le_bytes().to_vec();
        bytes.extend_from_slice(b"{}");
        assert!(matches!(decode_model(&bytes), Err(Error::Format(_))));
        let mut bytes = 4u64.to_le_bytes().to_vec();
        bytes.extend_from_slice(b"{x}]");
        assert!(matches!(decode_model(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn unsupported_dtype_names_tensor() {
        let header = br#"{"h":{"dtype":"F16","shape":[1],"data_offsets":[0,2]}}"#;
        let mut bytes = (header.len() as u64).to_le_bytes().to_vec();
        bytes.extend_from_slice(header);
        bytes.extend_from_slice(&[0, 0]);
        let err = decode_model(&bytes).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
        assert!(err.to_string().contains("'h'"));
    }

    #[test]
    fn nan_payload_is_rejected_with_index() {
        let mut m = TensorMap::new();
        m.insert(Tensor::from_f32("x", vec![3], vec![0.0, 1.0, 2.0]).unwrap()).unwrap();
        let mut bytes = encode_model(&m);
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        let err = decode_model(&bytes).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("index 2"), "{err}");
    }

    #[test]
    fn order_follows_offsets_and_metadata_survives() {
        let mut m = TensorMap::new();
        m.metadata.insert("source".into(), "unit \"test\"".into());
        for name in ["h.1.mlp.c_proj.weight", "h.0.attn.c_attn.weight", "a"] {
            m.insert(Tensor::from_i8(name, vec![2], vec![1, 2]).unwrap()).unwrap();
        }
        let back = decode_model(&encode_model(&m)).unwrap();
        assert_eq!(back, m);
    }
}
