//! Named trainable tensors, their gradients and the binary checkpoint format.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "MCPRCKPT"
//! version  u32      1
//! count    u32
//! count x { name_len u32, name utf-8, rank u32, dims u64 x rank, values f64 x prod(dims) }
//! ```

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

const MAGIC: &[u8; 8] = b"MCPRCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Learning-rate group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Main,
    Text,
}

/// Text-encoder parameters live under this prefix.
pub const TEXT_PREFIX: &str = "text.";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Invalid(format!("duplicate parameter {name:?}")));
        }
        let id = ParamId(self.tensors.len());
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        if self.names[id.0].starts_with(TEXT_PREFIX) {
            ParamGroup::Text
        } else {
            ParamGroup::Main
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.ids().map(move |id| (id, self.names[id.0].as_str(), &self.tensors[id.0]))
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// ‖Θ‖², summed in parameter order.
    pub fn sum_squares(&self) -> f64 {
        self.tensors.iter().map(Tensor::sum_squares).sum()
    }

    /// Copy without the parameters whose names start with `prefix`.
    pub fn without_prefix(&self, prefix: &str) -> ParamStore {
        let mut out = ParamStore::new();
        for (_, name, t) in self.iter().filter(|(_, n, _)| !n.starts_with(prefix)) {
            out.add(name, t.clone()).expect("names are unique");
        }
        out
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (_, name, t) in self.iter() {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<ParamStore> {
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = read_u32(&mut r)?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("name is not utf-8".into()))?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                read_exact(&mut r, &mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            let mut b = [0u8; 8];
            for _ in 0..n {
                read_exact(&mut r, &mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            store.add(&name, Tensor::new(shape, data)?)?;
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(store)
    }

    pub fn save_file(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.save(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_file(path: &std::path::Path) -> Result<ParamStore> {
        let f = std::fs::File::open(path)?;
        ParamStore::load(std::io::BufReader::new(f))
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Checkpoint("truncated file".into()),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Gradient for one parameter: dense, or sparse rows for embedding tables.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamGrad {
    Dense(Vec<f64>),
    Rows { cols: usize, rows: BTreeMap<usize, Vec<f64>> },
}

/// Per-parameter gradients produced by one backward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<ParamGrad>>,
}

impl Gradients {
    pub fn new(params: usize) -> Self {
        Gradients { grads: vec![None; params] }
    }

    pub fn get(&self, id: ParamId) -> Option<&ParamGrad> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub(crate) fn add_dense(&mut self, id: ParamId, len: usize, g: &[f64]) {
        match &mut self.grads[id.0] {
            slot @ None => *slot = Some(ParamGrad::Dense(g.to_vec())),
            Some(ParamGrad::Dense(d)) => d.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            Some(ParamGrad::Rows { cols, rows }) => {
                let mut d = vec![0.0; len];
                for (r, v) in rows.iter() {
                    d[r * *cols..(r + 1) * *cols].copy_from_slice(v);
                }
                d.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                self.grads[id.0] = Some(ParamGrad::Dense(d));
            }
        }
    }

    pub(crate) fn add_row(&mut self, id: ParamId, cols: usize, row: usize, g: &[f64]) {
        match &mut self.grads[id.0] {
            slot @ None => {
                let mut rows = BTreeMap::new();
                rows.insert(row, g.to_vec());
                *slot = Some(ParamGrad::Rows { cols, rows });
            }
            Some(ParamGrad::Dense(d)) => d[row * cols..(row + 1) * cols].iter_mut().zip(g).for_each(|(a, b)| *a += b),
            Some(ParamGrad::Rows { rows, .. }) => {
                let e = rows.entry(row).or_insert_with(|| vec![0.0; cols]);
                e.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
    }

    /// Adds `scale * self` into dense per-parameter buffers.
    pub fn accumulate_into(&self, total: &mut GradBuffer, scale: f64) {
        for (i, g) in self.grads.iter().enumerate() {
            let dst = &mut total.values[i];
            match g {
                None => {}
                Some(ParamGrad::Dense(d)) => dst.iter_mut().zip(d).for_each(|(a, b)| *a += scale * b),
                Some(ParamGrad::Rows { cols, rows }) => {
                    for (r, v) in rows {
                        dst[r * cols..(r + 1) * cols].iter_mut().zip(v).for_each(|(a, b)| *a += scale * b);
                    }
                }
            }
        }
    }

    /// Dense copy for one parameter (zeros if untouched).
    pub fn dense(&self, id: ParamId, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        match self.get(id) {
            None => {}
            Some(ParamGrad::Dense(d)) => out.copy_from_slice(d),
            Some(ParamGrad::Rows { cols, rows }) => {
                for (r, v) in rows {
                    out[r * cols..(r + 1) * cols].copy_from_slice(v);
                }
            }
        }
        out
    }
}

/// Dense gradient totals mirroring a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer {
    pub values: Vec<Vec<f64>>,
}

impl GradBuffer {
    pub fn zeros_like(store: &ParamStore) -> Self {
        GradBuffer { values: store.tensors.iter().map(|t| vec![0.0; t.len()]).collect() }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.values[id.0]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }
}
