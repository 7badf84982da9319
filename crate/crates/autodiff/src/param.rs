//! Named trainable parameters and the `MTLB1` checkpoint layout.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! "MTLB1"
//! repeated until EOF:
//!   u32 name_len | name (UTF-8) | u32 rank | rank × u64 dim | prod(dims) × f64 value
//! ```

use std::collections::BTreeMap;
use std::io::{ErrorKind, Read, Write};

use crate::error::{AutodiffError, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"MTLB1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One trainable tensor plus its Adam state.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub frozen: bool,
    pub moment1: Tensor,
    pub moment2: Tensor,
    pub step: u64,
}

impl Parameter {
    fn new(name: String, value: Tensor) -> Self {
        let moment1 = Tensor::zeros(value.shape());
        let moment2 = Tensor::zeros(value.shape());
        Self {
            name,
            value,
            frozen: false,
            moment1,
            moment2,
            step: 0,
        }
    }

    pub fn reset_optimizer(&mut self) {
        self.moment1 = Tensor::zeros(self.value.shape());
        self.moment2 = Tensor::zeros(self.value.shape());
        self.step = 0;
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(AutodiffError::Usage(format!("duplicate parameter {name}")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter::new(name, value));
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
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

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Sets the frozen flag on every parameter whose name starts with `prefix`.
    pub fn set_frozen_prefix(&mut self, prefix: &str, frozen: bool) -> usize {
        let mut n = 0;
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.frozen = frozen;
            n += 1;
        }
        n
    }

    pub fn set_all_frozen(&mut self, frozen: bool) {
        self.params.iter_mut().for_each(|p| p.frozen = frozen);
    }

    pub fn reset_optimizer(&mut self) {
        self.params.iter_mut().for_each(Parameter::reset_optimizer);
    }

    /// Order-sensitive FNV-1a digest over the bit patterns of every
    /// parameter whose name starts with `prefix`.
    pub fn checksum(&self, prefix: &str) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for p in self.params.iter().filter(|p| p.name.starts_with(prefix)) {
            eat(p.name.as_bytes());
            for v in p.value.data() {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }

    /// Snapshot of all parameter values, used to restore a selected epoch.
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Tensor]) {
        assert_eq!(snapshot.len(), self.params.len(), "snapshot from a different store");
        for (p, v) in self.params.iter_mut().zip(snapshot) {
            p.value = v.clone();
        }
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        for p in &self.params {
            let name = p.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&(p.value.rank() as u32).to_le_bytes())?;
            for &d in p.value.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in p.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Parses a checkpoint into `(name, value)` pairs in file order.
    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(AutodiffError::Checkpoint("bad magic bytes".into()));
        }
        let mut out = Vec::new();
        loop {
            let mut len = [0u8; 4];
            match r.read_exact(&mut len) {
                Ok(()) => {}
                Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e.into()),
            }
            let name_len = u32::from_le_bytes(len) as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name).map_err(truncated)?;
            let name = String::from_utf8(name)
                .map_err(|_| AutodiffError::Checkpoint("parameter name is not UTF-8".into()))?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(&mut r)? as usize);
            }
            let n: usize = shape.iter().product();
            let mut bytes = vec![0u8; n * 8];
            r.read_exact(&mut bytes).map_err(truncated)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            out.push((name, Tensor::new(shape, data)?));
        }
        Ok(out)
    }

    /// Copies checkpoint values into same-named parameters. Every parameter
    /// in the checkpoint must exist here with an identical shape.
    pub fn load_values(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        for (name, value) in entries {
            let id = self
                .id(name)
                .ok_or_else(|| AutodiffError::Checkpoint(format!("unknown parameter {name}")))?;
            let p = &mut self.params[id.0];
            if p.value.shape() != value.shape() {
                return Err(AutodiffError::Checkpoint(format!(
                    "{name}: shape {:?} in checkpoint, {:?} in model",
                    value.shape(),
                    p.value.shape()
                )));
            }
            p.value = value.clone();
        }
        Ok(())
    }
}

fn truncated(e: std::io::Error) -> AutodiffError {
    if e.kind() == ErrorKind::UnexpectedEof {
        AutodiffError::Checkpoint("truncated checkpoint".into())
    } else {
        e.into()
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}
