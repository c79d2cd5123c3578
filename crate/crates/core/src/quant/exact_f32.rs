//! Serialize `f32` through its exact `f64` widening so JSON round-trips are
//! bit-exact (shortest f64 text parses back to the same f64, which narrows
//! back to the original f32 without rounding).

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub fn serialize<S: Serializer>(v: &f32, s: S) -> Result<S::Ok, S::Error> {
    (*v as f64).serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f32, D::Error> {
    narrow(f64::deserialize(d)?)
}

fn narrow<E: serde::de::Error>(x: f64) -> Result<f32, E> {
    let f = x as f32;
    if f as f64 != x {
        return Err(E::custom(format!("{x} is not exactly representable as f32")));
    }
    Ok(f)
}

pub mod vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[f32], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|&x| x as f64))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f32>, D::Error> {
        Vec::<f64>::deserialize(d)?.into_iter().map(narrow).collect()
    }
}
