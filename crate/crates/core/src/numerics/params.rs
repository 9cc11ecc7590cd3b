use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

/// Named learnable arrays with paired gradient buffers. Iteration follows
/// insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: IndexMap<String, Param>,
}

/// Gradients produced by one backward pass, keyed by store index.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    pub(crate) entries: Vec<(usize, Tensor)>,
}

impl Gradients {
    pub fn get(&self, index: usize) -> Option<&Tensor> {
        self.entries
            .iter()
            .find(|(i, _)| *i == index)
            .map(|(_, g)| g)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Tensor)> {
        self.entries.iter().map(|(i, g)| (*i, g))
    }

    pub fn scale(&mut self, s: Real) {
        for (_, g) in &mut self.entries {
            g.scale_in_place(s);
        }
    }

    /// Adds `other` into `self`, keeping entries sorted by index.
    pub fn merge(&mut self, other: Gradients) -> Result<()> {
        for (idx, g) in other.entries {
            match self.entries.binary_search_by_key(&idx, |(i, _)| *i) {
                Ok(pos) => self.entries[pos].1.add_assign(&g)?,
                Err(pos) => self.entries.insert(pos, (idx, g)),
            }
        }
        Ok(())
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        name: impl Into<String>,
        value: Tensor,
        trainable: bool,
    ) -> Result<usize> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        value.ensure_finite(&name)?;
        let grad = Tensor::zeros(value.rows(), value.cols());
        let (idx, _) = self.params.insert_full(
            name,
            Param {
                value,
                grad,
                trainable,
            },
        );
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.params
            .get_index_of(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.params
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.get(name)?.value)
    }

    /// Scalar value of a `1×1` parameter.
    pub fn scalar(&self, name: &str) -> Result<Real> {
        Ok(self.value(name)?.item())
    }

    pub fn by_index(&self, index: usize) -> Option<(&str, &Param)> {
        self.params.get_index(index).map(|(k, v)| (k.as_str(), v))
    }

    pub fn by_index_mut(&mut self, index: usize) -> Option<(&str, &mut Param)> {
        self.params
            .get_index_mut(index)
            .map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        self.get_mut(name)?.trainable = trainable;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(0.0);
        }
    }

    /// Adds a backward pass's gradients into the stored grad buffers.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        for (idx, g) in grads.iter() {
            let (_, p) = self
                .params
                .get_index_mut(idx)
                .ok_or(Error::IndexOutOfRange {
                    what: "parameter store",
                    index: idx,
                    len: usize::MAX,
                })?;
            if p.trainable {
                p.grad.add_assign(g)?;
            }
        }
        Ok(())
    }

    pub fn trainable_scalars(&self) -> usize {
        self.params
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    /// Order-sensitive FNV-1a digest over names and raw values.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (name, p) in &self.params {
            eat(name.as_bytes());
            for v in p.value.data() {
                eat(&v.to_le_bytes());
            }
        }
        h
    }
}
