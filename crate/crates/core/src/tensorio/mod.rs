//! Tensor data model, safetensors-layout ingestion/emission and synthetic
//! outlier-bearing tensors.

mod safetensors;
mod synth;

use std::collections::BTreeMap;

use indexmap::IndexMap;

use crate::{Error, Result};

pub use safetensors::{decode_model, encode_model, load_model, save_model};
pub use synth::{
    outlier_channels, synth_activation_stats, synth_activations, synth_weights, OutlierAxis,
    SynthRng, SynthSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    I8,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::I8 => 1,
        }
    }

    /// Name used in the safetensors header.
    pub fn as_str(self) -> &'static str {
        match self {
            DType::F32 => "F32",
            DType::I8 => "I8",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I8(Vec<i8>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::I8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::I8(_) => DType::I8,
        }
    }
}

/// A named, row-major tensor. Construction validates shape and finiteness,
/// so every `Tensor` in circulation satisfies its invariants.
#[derive(Debug, Clone)]
pub struct Tensor {
    name: String,
    shape: Vec<usize>,
    data: TensorData,
}

/// Bitwise equality: two float tensors compare equal only if every value has
/// the same bit pattern (so `-0.0 != 0.0`).
impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        if self.name != other.name || self.shape != other.shape {
            return false;
        }
        match (&self.data, &other.data) {
            (TensorData::F32(a), TensorData::F32(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (TensorData::I8(a), TensorData::I8(b)) => a == b,
            _ => false,
        }
    }
}

pub(crate) fn check_shape(name: &str, shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::Validation(format!(
            "tensor '{name}': rank-0 tensors are not supported"
        )));
    }
    if let Some(d) = shape.iter().position(|&d| d == 0) {
        return Err(Error::Validation(format!(
            "tensor '{name}': dimension {d} is zero"
        )));
    }
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(|| {
        Error::Validation(format!("tensor '{name}': element count overflows"))
    })
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: TensorData) -> Result<Self> {
        let name = name.into();
        let numel = check_shape(&name, &shape)?;
        if data.len() != numel {
            return Err(Error::Shape(format!(
                "tensor '{name}': shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        if let TensorData::F32(v) = &data {
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::Validation(format!(
                    "tensor '{name}': non-finite value {} at index {i}",
                    v[i]
                )));
            }
        }
        Ok(Tensor { name, shape, data })
    }

    pub fn from_f32(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::new(name, shape, TensorData::F32(data))
    }

    pub fn from_i8(name: impl Into<String>, shape: Vec<usize>, data: Vec<i8>) -> Result<Self> {
        Self::new(name, shape, TensorData::I8(data))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            TensorData::I8(_) => None,
        }
    }

    pub fn as_i8(&self) -> Option<&[i8]> {
        match &self.data {
            TensorData::I8(v) => Some(v),
            TensorData::F32(_) => None,
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Shape(format!(
                "tensor '{}': expected a rank-2 matrix, got shape {s:?}",
                self.name
            ))),
        }
    }

    /// Float payload of a rank-2 tensor, or a shape/dtype error.
    pub fn matrix_f32(&self) -> Result<(usize, usize, &[f32])> {
        let (r, c) = self.dims2()?;
        let data = self.as_f32().ok_or_else(|| {
            Error::Unsupported(format!("tensor '{}': expected float32 data", self.name))
        })?;
        Ok((r, c, data))
    }

    /// Raw little-endian bytes, as stored on disk.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        match &self.data {
            TensorData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            TensorData::I8(v) => v.iter().map(|&x| x as u8).collect(),
        }
    }
}

/// Ordered collection of uniquely named tensors plus free-form metadata.
/// Iteration follows insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorMap {
    tensors: IndexMap<String, Tensor>,
    pub metadata: BTreeMap<String, String>,
}

impl TensorMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, tensor: Tensor) -> Result<()> {
        if self.tensors.contains_key(tensor.name()) {
            return Err(Error::Validation(format!(
                "duplicate tensor name '{}'",
                tensor.name()
            )));
        }
        self.tensors.insert(tensor.name().to_owned(), tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.tensors.values()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }
}

impl IntoIterator for TensorMap {
    type Item = Tensor;
    type IntoIter = indexmap::map::IntoValues<String, Tensor>;

    fn into_iter(self) -> Self::IntoIter {
        self.tensors.into_values()
    }
}

impl FromIterator<Tensor> for Result<TensorMap> {
    fn from_iter<I: IntoIterator<Item = Tensor>>(iter: I) -> Self {
        let mut m = TensorMap::new();
        for t in iter {
            m.insert(t)?;
        }
        Ok(m)
    }
}

/// Per-input-channel maxima of |activation|.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats(Vec<f32>);

impl ChannelStats {
    pub fn new(maxima: Vec<f32>) -> Result<Self> {
        if let Some(i) = maxima.iter().position(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Validation(format!(
                "channel stat {i} must be finite and non-negative, got {}",
                maxima[i]
            )));
        }
        Ok(ChannelStats(maxima))
    }

    /// Column-wise max |x| of an activation matrix `[tokens, channels]`.
    pub fn from_activations(x: &Tensor) -> Result<Self> {
        let (rows, cols, data) = x.matrix_f32()?;
        let mut m = vec![0.0f32; cols];
        for r in 0..rows {
            for (acc, v) in m.iter_mut().zip(&data[r * cols..(r + 1) * cols]) {
                *acc = acc.max(v.abs());
            }
        }
        Ok(ChannelStats(m))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert!(matches!(
            Tensor::from_f32("a", vec![], vec![]),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            Tensor::from_f32("a", vec![2, 0], vec![]),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            Tensor::from_f32("a", vec![2, 2], vec![1.0; 3]),
            Err(Error::Shape(_))
        ));
        let err = Tensor::from_f32("w", vec![3], vec![1.0, f32::NAN, 0.0]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("'w'") && msg.contains("index 1"), "{msg}");
        assert!(Tensor::from_f32("w", vec![1], vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn map_rejects_duplicates_and_keeps_order() {
        let mut m = TensorMap::new();
        for n in ["z", "a", "m"] {
            m.insert(Tensor::from_i8(n, vec![1], vec![0]).unwrap()).unwrap();
        }
        assert!(m.insert(Tensor::from_i8("a", vec![1], vec![1]).unwrap()).is_err());
        assert_eq!(m.names().collect::<Vec<_>>(), ["z", "a", "m"]);
    }

    #[test]
    fn channel_stats_from_activations() {
        let x = Tensor::from_f32("x", vec![2, 3], vec![1.0, -5.0, 0.0, -2.0, 4.0, 0.5]).unwrap();
        let s = ChannelStats::from_activations(&x).unwrap();
        assert_eq!(s.as_slice(), &[2.0, 5.0, 0.5]);
        assert!(ChannelStats::new(vec![-1.0]).is_err());
    }
}
