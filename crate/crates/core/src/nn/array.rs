use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl RealArray {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::invalid(format!(
                "shape {shape:?} has a zero dimension"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value {bad}")));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// Ordered, uniquely named collection of arrays holding network weights.
///
/// Entry order is part of the contract: it fixes the checkpoint layout and
/// the order in which gradients are matched to parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NetParams {
    entries: Vec<(String, RealArray)>,
}

impl NetParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: RealArray) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::invalid(format!("duplicate parameter name {name:?}")));
        }
        self.entries.push((name, value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&RealArray> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut RealArray> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &RealArray)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut RealArray)> {
        self.entries.iter_mut().map(|(n, v)| (n.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, index: usize) -> &RealArray {
        &self.entries[index].1
    }

    pub fn entry_mut(&mut self, index: usize) -> &mut RealArray {
        &mut self.entries[index].1
    }

    /// Total number of scalars across all entries.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(n, v)| (n.clone(), RealArray::zeros(v.shape.clone())))
                .collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for (_, v) in &mut self.entries {
            v.data.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Fails unless `other` has the same names and shapes in the same order.
    pub fn check_same_layout(&self, other: &NetParams) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::invalid(format!(
                "parameter count mismatch: {} vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for ((na, va), (nb, vb)) in self.entries.iter().zip(&other.entries) {
            if na != nb || va.shape != vb.shape {
                return Err(Error::invalid(format!(
                    "parameter layout mismatch: {na}{:?} vs {nb}{:?}",
                    va.shape, vb.shape
                )));
            }
        }
        Ok(())
    }

    /// `self += scale * other`; layouts must already match.
    pub fn add_scaled(&mut self, other: &NetParams, scale: f64) {
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(&other.entries) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, v) in &mut self.entries {
            v.data.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Adds every entry of `other` under `prefix.` names.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &NetParams) -> Result<()> {
        for (name, value) in other.iter() {
            self.push(format!("{prefix}.{name}"), value.clone())?;
        }
        Ok(())
    }

    /// Extracts the entries under `prefix.`, stripping the prefix.
    pub fn strip_prefix(&self, prefix: &str) -> NetParams {
        let lead = format!("{prefix}.");
        NetParams {
            entries: self
                .entries
                .iter()
                .filter_map(|(n, v)| n.strip_prefix(&lead).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries
            .iter()
            .all(|(_, v)| v.data.iter().all(|x| x.is_finite()))
    }
}
