//! Named parameter registry.
//!
//! Each parameter has exactly one canonical slot. Tying is expressed through
//! aliases: an alias is another name for the same [`ParamId`], so every reader
//! observes the same storage.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use rand::Rng as _;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Adam moment accumulators for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerSlot {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
}

impl OptimizerSlot {
    fn new(len: usize) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub optimizer: OptimizerSlot,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    Glorot,
    Zeros,
    Uniform(f64),
}

#[derive(Clone, Debug, Default)]
pub struct ParameterStore {
    entries: Vec<ParamEntry>,
    canonical: HashMap<String, ParamId>,
    aliases: BTreeMap<String, ParamId>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Total number of scalar parameters over canonical entries.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.canonical.contains_key(name) || self.aliases.contains_key(name) {
            return Err(Error::contract(format!("parameter `{name}` already exists")));
        }
        let id = ParamId(self.entries.len());
        let len = value.len();
        let grad = Tensor::zeros(value.shape());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            grad,
            optimizer: OptimizerSlot::new(len),
        });
        self.canonical.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn insert_init(
        &mut self,
        name: &str,
        shape: &[usize],
        init: Init,
        rng: &mut Rng,
    ) -> Result<ParamId> {
        let value = initialize(shape, init, rng);
        self.insert(name, value)
    }

    /// Registers `alias` as another name for the canonical parameter `canonical`.
    pub fn alias(&mut self, alias: &str, canonical: &str) -> Result<ParamId> {
        let id = *self
            .canonical
            .get(canonical)
            .ok_or_else(|| Error::contract(format!("no canonical parameter `{canonical}`")))?;
        if self.canonical.contains_key(alias) {
            return Err(Error::contract(format!(
                "`{alias}` is a canonical name and cannot become an alias"
            )));
        }
        match self.aliases.get(alias) {
            Some(&existing) if existing != id => Err(Error::contract(format!(
                "alias `{alias}` already points elsewhere"
            ))),
            _ => {
                self.aliases.insert(alias.to_string(), id);
                Ok(id)
            }
        }
    }

    /// Resolves a canonical name or alias.
    pub fn resolve(&self, name: &str) -> Option<ParamId> {
        self.canonical
            .get(name)
            .or_else(|| self.aliases.get(name))
            .copied()
    }

    pub fn canonical_id(&self, name: &str) -> Option<ParamId> {
        self.canonical.get(name).copied()
    }

    pub fn aliases(&self) -> impl Iterator<Item = (&str, ParamId)> {
        self.aliases.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entry_mut(&mut self, id: ParamId) -> &mut ParamEntry {
        &mut self.entries[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    /// Same canonical names and shapes in the same order, and the same alias
    /// table. Values are not compared.
    pub fn layout_matches(&self, other: &ParameterStore) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape())
            && self.aliases == other.aliases
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().fill(0.0);
        }
    }

    /// Adds a gradient map into the per-parameter accumulators.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in grads.iter() {
            self.entries[id.0].grad.add_assign(g);
        }
    }

    /// FNV-1a digest over the bit patterns of the given parameters' values.
    pub fn checksum<I: IntoIterator<Item = ParamId>>(&self, ids: I) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for id in ids {
            for v in self.value(id).data() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Writes values and the alias table in the parameter container format
    /// documented in `docs/formats.md`.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(PARAMS_MAGIC)?;
        w.write_all(&PARAMS_VERSION.to_le_bytes())?;
        w.write_all(&8u32.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for e in &self.entries {
            write_str(w, &e.name)?;
            write_tensor(w, &e.value)?;
        }
        w.write_all(&(self.aliases.len() as u64).to_le_bytes())?;
        for (alias, id) in &self.aliases {
            write_str(w, alias)?;
            write_str(w, &self.entries[id.0].name)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != PARAMS_MAGIC {
            return Err(Error::Checkpoint("not a parameter container".into()));
        }
        let version = read_u32(r)?;
        if version != PARAMS_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported parameter container version {version}"
            )));
        }
        let width = read_u32(r)?;
        if width != 8 {
            return Err(Error::Checkpoint(format!("unsupported value width {width}")));
        }
        let mut store = ParameterStore::new();
        let n = read_u64(r)?;
        for _ in 0..n {
            let name = read_str(r)?;
            let value = read_tensor(r)?;
            store.insert(&name, value)?;
        }
        let n_alias = read_u64(r)?;
        for _ in 0..n_alias {
            let alias = read_str(r)?;
            let canonical = read_str(r)?;
            store.alias(&alias, &canonical)?;
        }
        Ok(store)
    }

    /// Optimizer moments, in canonical order.
    pub fn write_optimizer_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for e in &self.entries {
            write_str(w, &e.name)?;
            w.write_all(&e.optimizer.step.to_le_bytes())?;
            write_values(w, &e.optimizer.first_moment)?;
            write_values(w, &e.optimizer.second_moment)?;
        }
        Ok(())
    }

    pub fn read_optimizer_from<R: Read>(&mut self, r: &mut R) -> Result<()> {
        let n = read_u64(r)? as usize;
        if n != self.entries.len() {
            return Err(Error::Checkpoint(format!(
                "optimizer state has {n} entries, store has {}",
                self.entries.len()
            )));
        }
        for e in &mut self.entries {
            let name = read_str(r)?;
            if name != e.name {
                return Err(Error::Checkpoint(format!(
                    "optimizer entry `{name}` does not match parameter `{}`",
                    e.name
                )));
            }
            let step = read_u64(r)?;
            let len = e.value.len();
            e.optimizer = OptimizerSlot {
                first_moment: read_values(r, len)?,
                second_moment: read_values(r, len)?,
                step,
            };
        }
        Ok(())
    }
}

/// Gradients of a scalar with respect to parameters, keyed by canonical id.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn contains(&self, id: ParamId) -> bool {
        self.grads.contains_key(&id)
    }

    pub fn retain(&mut self, mut keep: impl FnMut(ParamId) -> bool) {
        self.grads.retain(|id, _| keep(*id));
    }

    pub(crate) fn add(&mut self, id: ParamId, g: Tensor) {
        match self.grads.get_mut(&id) {
            Some(acc) => acc.add_assign(&g),
            None => {
                self.grads.insert(id, g);
            }
        }
    }
}

pub(crate) fn initialize(shape: &[usize], init: Init, rng: &mut Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    let limit = match init {
        Init::Zeros => return t,
        Init::Uniform(a) => a,
        Init::Glorot => {
            let (fan_out, fan_in) = match shape {
                [n] => (1, *n),
                [r, c, ..] => (*r, *c),
                [] => (1, 1),
            };
            (6.0 / (fan_in + fan_out) as f64).sqrt()
        }
    };
    for v in t.data_mut() {
        *v = rng.gen_range(-limit..=limit);
    }
    t
}

const PARAMS_MAGIC: &[u8; 8] = b"DSPARAMS";
const PARAMS_VERSION: u32 = 1;

pub(crate) fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub(crate) fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Checkpoint("name is not valid UTF-8".into()))
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn write_values<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_values<R: Read>(r: &mut R, len: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; len * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    write_values(w, t.data())
}

fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let rank = read_u32(r)? as usize;
    if rank == 0 || rank > 8 {
        return Err(Error::Checkpoint(format!("implausible tensor rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u64(r)? as usize);
    }
    let len: usize = shape.iter().product();
    let data = read_values(r, len)?;
    Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))
}
