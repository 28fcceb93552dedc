use std::collections::HashMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::neural::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named parameter tensors, each paired with a gradient accumulator.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    lookup: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.lookup.contains_key(name) {
            return Err(Error::DuplicateParam(name.to_string()));
        }
        let id = ParamId(self.values.len());
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        self.names.push(name.to_string());
        self.lookup.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied()
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

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    /// Parameter values and gradient accumulators, borrowed together.
    pub fn split_mut(&mut self) -> (&[Tensor], &mut [Tensor]) {
        (&self.values, &mut self.grads)
    }

    pub(crate) fn values_and_grads_mut(&mut self) -> (&mut [Tensor], &mut [Tensor]) {
        (&mut self.values, &mut self.grads)
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Tensor::is_finite) && self.grads.iter().all(Tensor::is_finite)
    }

    /// `(prefix/name, value)` pairs for checkpointing.
    pub fn export(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.names.iter().zip(&self.values).map(|(n, v)| (format!("{prefix}/{n}"), v.clone())).collect()
    }

    /// Loads every parameter `prefix/name` from a checkpoint; shapes must match.
    pub fn import(&mut self, prefix: &str, checkpoint: &Checkpoint) -> Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            let key = format!("{prefix}/{name}");
            let t = checkpoint.get(&key).ok_or_else(|| Error::Checkpoint(format!("missing `{key}`")))?;
            t.ensure_shape(self.values[i].shape())?;
            self.values[i] = t.clone();
        }
        Ok(())
    }
}

const MAGIC: &[u8; 8] = b"TTCCKPT1";

/// Flat container of named tensors plus the run seed and step counter.
///
/// Layout (little endian): magic, seed u64, step u64, entry count u64, then per
/// entry: name length u64, UTF-8 name, rank u64, dims u64 each, f64 values.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub step: u64,
    pub entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for (name, t) in &self.entries {
            w.write_all(&(name.len() as u64).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape().len() as u64).to_le_bytes())?;
            for d in t.shape() {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let seed = read_u64(&mut r)?;
        let step = read_u64(&mut r)?;
        let count = read_u64(&mut r)?;
        let mut entries = Vec::new();
        for _ in 0..count {
            let len = read_u64(&mut r)? as usize;
            if len > 1 << 16 {
                return Err(Error::Checkpoint("name too long".into()));
            }
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
            let rank = read_u64(&mut r)? as usize;
            if rank > 8 {
                return Err(Error::Checkpoint(format!("rank {rank} too large")));
            }
            let shape = (0..rank).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            entries.push((name, Tensor::from_vec(&shape, data)?));
        }
        Ok(Self { seed, step, entries })
    }
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::zeros(&[2])).unwrap();
        assert!(matches!(s.add("w", Tensor::zeros(&[3])), Err(Error::DuplicateParam(_))));
        assert_eq!(s.grad(ParamId(0)).shape(), &[2]);
    }

    #[test]
    fn import_checks_shapes() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::zeros(&[2, 2])).unwrap();
        let ck = Checkpoint { seed: 1, step: 2, entries: vec![("a/w".into(), Tensor::zeros(&[4]))] };
        assert!(s.import("a", &ck).is_err());
        assert!(s.import("b", &ck).is_err());
    }

    proptest! {
        #[test]
        fn checkpoint_round_trips_bit_exactly(
            seed in any::<u64>(),
            step in any::<u64>(),
            values in proptest::collection::vec(any::<f64>(), 0..40),
        ) {
            let n = values.len();
            let ck = Checkpoint {
                seed,
                step,
                entries: vec![
                    ("team1/qbot/w".into(), Tensor::from_vec(&[n], values.clone()).unwrap()),
                    ("team1/abot/b".into(), Tensor::from_vec(&[1, n], values).unwrap()),
                ],
            };
            let mut buf = Vec::new();
            ck.write_to(&mut buf).unwrap();
            let back = Checkpoint::read_from(buf.as_slice()).unwrap();
            prop_assert_eq!(back.seed, ck.seed);
            prop_assert_eq!(back.step, ck.step);
            for ((na, ta), (nb, tb)) in ck.entries.iter().zip(&back.entries) {
                prop_assert_eq!(na, nb);
                prop_assert_eq!(ta.shape(), tb.shape());
                let bits_a: Vec<u64> = ta.data().iter().map(|v| v.to_bits()).collect();
                let bits_b: Vec<u64> = tb.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(bits_a, bits_b);
            }
        }
    }
}
