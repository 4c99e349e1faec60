use std::collections::{BTreeMap, HashMap};
use std::io::{self, Read, Write};

use super::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors, each with a gradient buffer of the same shape.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    index: HashMap<String, ParamId>,
    values: Vec<Tensor>,
    grads: Vec<Vec<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(TensorError::Invalid(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.values.len());
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        self.grads.push(vec![0.0; value.numel()]);
        self.values.push(value);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.value(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    /// Total number of scalar weights.
    pub fn num_weights(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in &grads.dense {
            for (acc, v) in self.grads[id.0].iter_mut().zip(g) {
                *acc += v;
            }
        }
        for (id, rows) in &grads.rows {
            let width = self.values[id.0].cols();
            let buf = &mut self.grads[id.0];
            for (&row, g) in rows {
                for (acc, v) in buf[row * width..(row + 1) * width].iter_mut().zip(g) {
                    *acc += v;
                }
            }
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn grads_finite(&self) -> bool {
        self.grads.iter().flatten().all(|v| v.is_finite())
    }

    /// Splits the store into values (mutable) and gradients (read-only) for
    /// optimizer updates.
    pub fn values_and_grads_mut(&mut self) -> impl Iterator<Item = (&mut Tensor, &[f64])> {
        self.values.iter_mut().zip(self.grads.iter().map(Vec::as_slice))
    }

    /// Copies every value from `other`, which must have identical names and
    /// shapes.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        self.check_same_layout(other)?;
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    pub fn check_same_layout(&self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(TensorError::Invalid("parameter names differ".into()));
        }
        for (a, b) in self.values.iter().zip(&other.values) {
            if a.shape() != b.shape() {
                return Err(TensorError::Shape {
                    op: "copy_values_from",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Writes all values in the binary layout:
    /// `u32 count`, then per parameter `u32 name_len`, UTF-8 name,
    /// `u32 ndim`, `ndim × u64` dims, row-major `f64` values. Little endian.
    pub fn write_to<W: Write>(&self, out: &mut W) -> io::Result<()> {
        out.write_all(&(self.len() as u32).to_le_bytes())?;
        for (name, value) in self.iter() {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&(value.rank() as u32).to_le_bytes())?;
            for &d in value.shape() {
                out.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in value.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(input: &mut R) -> io::Result<Self> {
        let bad = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
        let count = read_u32(input)? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = read_u32(input)? as usize;
            let mut name = vec![0u8; name_len];
            input.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| bad(e.to_string()))?;
            let ndim = read_u32(input)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                input.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let numel: usize = shape.iter().product();
            let mut bytes = vec![0u8; numel * 8];
            input.read_exact(&mut bytes)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            let tensor = Tensor::new(shape, data).map_err(|e| bad(e.to_string()))?;
            store.add(&name, tensor).map_err(|e| bad(e.to_string()))?;
        }
        Ok(store)
    }
}

fn read_u32<R: Read>(input: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Parameter gradients produced by one backward pass.
///
/// Embedding lookups record only the touched rows so that a large table does
/// not cost a dense buffer per example.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    pub(crate) dense: BTreeMap<ParamId, Vec<f64>>,
    pub(crate) rows: BTreeMap<ParamId, BTreeMap<usize, Vec<f64>>>,
}

impl Gradients {
    /// Dense gradient for `id`, materialising row-sparse entries. Returns
    /// `None` when the parameter did not take part in the loss.
    pub fn get(&self, store: &ParamStore, id: ParamId) -> Option<Vec<f64>> {
        let dense = self.dense.get(&id);
        let rows = self.rows.get(&id);
        if dense.is_none() && rows.is_none() {
            return None;
        }
        let value = store.value(id);
        let mut out = dense.cloned().unwrap_or_else(|| vec![0.0; value.numel()]);
        if let Some(rows) = rows {
            let width = value.cols();
            for (&r, g) in rows {
                for (acc, v) in out[r * width..(r + 1) * width].iter_mut().zip(g) {
                    *acc += v;
                }
            }
        }
        Some(out)
    }

    /// Rows of an embedding table that received a gradient.
    pub fn touched_rows(&self, id: ParamId) -> Vec<usize> {
        self.rows
            .get(&id)
            .map(|r| r.keys().copied().collect())
            .unwrap_or_default()
    }

    pub fn add_dense(&mut self, id: ParamId, g: &[f64]) {
        let buf = self.dense.entry(id).or_insert_with(|| vec![0.0; g.len()]);
        for (acc, v) in buf.iter_mut().zip(g) {
            *acc += v;
        }
    }

    pub fn add_row(&mut self, id: ParamId, row: usize, g: &[f64]) {
        let buf = self
            .rows
            .entry(id)
            .or_default()
            .entry(row)
            .or_insert_with(|| vec![0.0; g.len()]);
        for (acc, v) in buf.iter_mut().zip(g) {
            *acc += v;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.dense.values().flatten().all(|v| v.is_finite())
            && self
                .rows
                .values()
                .flat_map(|r| r.values().flatten())
                .all(|v| v.is_finite())
    }
}
