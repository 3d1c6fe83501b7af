use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Matrix, Scalar};
use crate::error::{Error, Result};

const CHECKPOINT_MAGIC: &[u8; 4] = b"HTMD";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable matrices with gradient buffers.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Matrix<T>>,
    grads: Vec<Matrix<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.values.len());
        self.grads.push(Matrix::zeros(value.rows(), value.cols()));
        self.values.push(value);
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
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
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix<T> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix<T> {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Matrix<T> {
        &self.grads[id.0]
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.as_mut_slice().iter_mut().for_each(|x| *x = T::zero());
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &Matrix<T>) {
        self.grads[id.0].add_assign(g);
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.rows() * v.cols()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Matrix::cast).collect(),
            grads: self.grads.iter().map(Matrix::cast).collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Writes the `HTMD` checkpoint: magic, u32 version, u64 parameter count,
/// then per parameter a u16 name length, name bytes, u64 rows, u64 cols and
/// the float32 little-endian payload.
pub fn save_checkpoint<T: Scalar>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    write(CHECKPOINT_MAGIC)?;
    write(&CHECKPOINT_VERSION.to_le_bytes())?;
    write(&(store.len() as u64).to_le_bytes())?;
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        let len = u16::try_from(name.len())
            .map_err(|_| Error::format(path.display().to_string(), "parameter name too long"))?;
        write(&len.to_le_bytes())?;
        write(name)?;
        let v = store.value(id);
        write(&(v.rows() as u64).to_le_bytes())?;
        write(&(v.cols() as u64).to_le_bytes())?;
        for x in v.as_slice() {
            write(&(x.to_f64_lossy() as f32).to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads an `HTMD` checkpoint into an existing store. Every stored parameter
/// must exist in `store` under the same name with the same shape, and vice
/// versa.
pub fn load_checkpoint<T: Scalar>(store: &mut ParamStore<T>, path: &Path) -> Result<()> {
    let ctx = path.display().to_string();
    let file = File::open(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
    let mut r = BufReader::new(file);
    let mut read = |n: usize| -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        r.read_exact(&mut buf)
            .map_err(|_| Error::format(ctx.clone(), "truncated checkpoint"))?;
        Ok(buf)
    };
    if read(4)? != CHECKPOINT_MAGIC {
        return Err(Error::format(ctx, "bad magic"));
    }
    let version = u32::from_le_bytes(read(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(ctx, format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(read(8)?.try_into().unwrap()) as usize;
    if count != store.len() {
        return Err(Error::Shape(format!(
            "checkpoint has {count} parameters, model has {}",
            store.len()
        )));
    }
    for _ in 0..count {
        let len = u16::from_le_bytes(read(2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(read(len)?).map_err(|e| Error::format(ctx.clone(), e))?;
        let rows = u64::from_le_bytes(read(8)?.try_into().unwrap()) as usize;
        let cols = u64::from_le_bytes(read(8)?.try_into().unwrap()) as usize;
        let id = store
            .id(&name)
            .ok_or_else(|| Error::Shape(format!("unknown parameter {name} in checkpoint")))?;
        if store.value(id).shape() != (rows, cols) {
            return Err(Error::Shape(format!(
                "parameter {name}: checkpoint {rows}x{cols}, model {:?}",
                store.value(id).shape()
            )));
        }
        let payload = read(rows * cols * 4)?;
        let vals = payload
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        *store.value_mut(id) = Matrix::from_vec(rows, cols, vals)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.add("a", Matrix::zeros(1, 1)).unwrap();
        assert!(s.add("a", Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let mut s = ParamStore::<f32>::new();
        s.add("mlp.O.layer0.weight", Matrix::from_fn(2, 3, |i, j| (i * 3 + j) as f32 * 0.5))
            .unwrap();
        s.add("att.init", Matrix::filled(4, 1, -1.25)).unwrap();
        save_checkpoint(&s, &path).unwrap();

        let mut fresh = s.clone();
        for id in fresh.ids().collect::<Vec<_>>() {
            fresh.value_mut(id).as_mut_slice().fill(0.0);
        }
        load_checkpoint(&mut fresh, &path).unwrap();
        for id in s.ids() {
            assert_eq!(s.value(id), fresh.value(id));
        }

        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"HTMD");
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load_checkpoint(&mut fresh, &path).is_err());
    }
}
