//! Named parameters, the Adam optimizer and the binary checkpoint format.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    /// Uniform Glorot initialization for a `[fan_in × fan_out]` matrix.
    pub fn add_glorot(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut impl Rng) -> ParamId {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
        self.add(name, Tensor::matrix(rows, cols, data))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) {
        assert_eq!(value.shape(), self.params[id.0].value.shape(), "shape of {}", self.params[id.0].name);
        self.params[id.0].value = value;
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub fn accumulate(&mut self, grads: &[(ParamId, Tensor)]) {
        for (id, g) in grads {
            self.params[id.0].grad.add_assign(g);
        }
    }

    pub fn scale_grads(&mut self, s: f64) {
        for p in &mut self.params {
            p.grad.scale_assign(s);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore) {
        if self.m.len() != store.len() {
            self.m = store.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, m), v) in store.params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.data();
            let (m, v) = (m.data_mut(), v.data_mut());
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                *w -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    Magic,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

const MAGIC: &[u8; 8] = b"NQTFCKP1";

fn write_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u64(r: &mut impl Read) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_len(r: &mut impl Read, what: &str) -> Result<usize, CheckpointError> {
    let n = read_u64(r)?;
    if n > (1 << 32) {
        return Err(CheckpointError::Corrupt(format!("{what} length {n}")));
    }
    Ok(n as usize)
}

/// Writes `magic, header, count, then per parameter: name, rank, extents,
/// little-endian f64 values`. All integers are little-endian u64.
pub fn write_checkpoint(w: &mut impl Write, header: &str, store: &ParamStore) -> Result<(), CheckpointError> {
    w.write_all(MAGIC)?;
    write_u64(w, header.len() as u64)?;
    w.write_all(header.as_bytes())?;
    write_u64(w, store.len() as u64)?;
    for p in &store.params {
        write_u64(w, p.name.len() as u64)?;
        w.write_all(p.name.as_bytes())?;
        write_u64(w, p.value.shape().len() as u64)?;
        for &e in p.value.shape() {
            write_u64(w, e as u64)?;
        }
        for x in p.value.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_string(r: &mut impl Read, what: &str) -> Result<String, CheckpointError> {
    let n = read_len(r, what)?;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| CheckpointError::Corrupt(format!("{what} is not UTF-8")))
}

/// Reads a checkpoint into its header and `(name, value)` pairs.
pub fn read_checkpoint(r: &mut impl Read) -> Result<(String, Vec<(String, Tensor)>), CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::Magic);
    }
    let header = read_string(r, "header")?;
    let count = read_len(r, "parameter count")?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name = read_string(r, "name")?;
        let rank = read_len(r, "rank")?;
        let shape = (0..rank).map(|_| read_len(r, "extent")).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Corrupt(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    Ok((header, out))
}

impl ParamStore {
    /// Overwrites values from checkpoint entries, matching by position,
    /// name and shape.
    pub fn load_values(&mut self, entries: Vec<(String, Tensor)>) -> Result<(), CheckpointError> {
        if entries.len() != self.params.len() {
            return Err(CheckpointError::Corrupt(format!(
                "{} parameters, model has {}",
                entries.len(),
                self.params.len()
            )));
        }
        for (p, (name, value)) in self.params.iter_mut().zip(entries) {
            if p.name != name || p.value.shape() != value.shape() {
                return Err(CheckpointError::Corrupt(format!(
                    "expected {} {:?}, found {name} {:?}",
                    p.name,
                    p.value.shape(),
                    value.shape()
                )));
            }
            p.value = value;
        }
        Ok(())
    }
}
