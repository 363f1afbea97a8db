//! Binary weight files.
//!
//! ```text
//! "PEPW" | version: u32 | count: u64 | record*
//! record = name_len: u32 | name (utf-8) | dtype: u8 | rank: u32 | dims: u64 * rank | data
//! ```
//!
//! Integers and payloads are little endian. `dtype` is 0 for f32, 1 for f64
//! and 2 for raw bytes. Besides one record per parameter a file carries
//! `<layer>.running_mean`, `<layer>.running_var` for every batch-norm layer,
//! `meta.target_norm` (`[mean_x, mean_y, mean_z, scale]`, f64) and
//! `meta.config` (the model config as `key=value` lines).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::{DType, Real, Tensor};

use super::{Model, ModelConfig, ModelError, TargetNorm};

pub const MAGIC: &[u8; 4] = b"PEPW";
pub const VERSION: u32 = 1;

const CONFIG_KEY: &str = "meta.config";
const NORM_KEY: &str = "meta.target_norm";

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dtype: DType,
    pub dims: Vec<u64>,
    /// Little-endian payload.
    pub data: Vec<u8>,
}

impl Record {
    pub fn from_values<T: Real>(name: impl Into<String>, dims: &[usize], values: &[T]) -> Self {
        let mut data = Vec::with_capacity(values.len() * T::DTYPE.size());
        for &v in values {
            v.write_le(&mut data);
        }
        Self { name: name.into(), dtype: T::DTYPE, dims: dims.iter().map(|&d| d as u64).collect(), data }
    }

    pub fn bytes(name: impl Into<String>, data: Vec<u8>) -> Self {
        Self { name: name.into(), dtype: DType::U8, dims: vec![data.len() as u64], data }
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product::<u64>() as usize
    }

    /// Decodes a float payload into `T`, converting between widths.
    pub fn values<T: Real>(&self) -> Result<Vec<T>, ModelError> {
        let step = self.dtype.size();
        let chunks = self.data.chunks_exact(step);
        match self.dtype {
            DType::F32 => Ok(chunks.map(|c| T::from_f64_lossy(f32::read_le(c) as f64)).collect()),
            DType::F64 => Ok(chunks.map(|c| T::from_f64_lossy(f64::read_le(c))).collect()),
            DType::U8 => Err(ModelError::Checkpoint(format!("record `{}` is not numeric", self.name))),
        }
    }
}

pub fn write_records<W: Write>(mut w: W, records: &[Record]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(records.len() as u64).to_le_bytes())?;
    for r in records {
        w.write_all(&(r.name.len() as u32).to_le_bytes())?;
        w.write_all(r.name.as_bytes())?;
        w.write_all(&[r.dtype as u8])?;
        w.write_all(&(r.dims.len() as u32).to_le_bytes())?;
        for d in &r.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        w.write_all(&r.data)?;
    }
    w.flush()
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, ModelError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, ModelError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> ModelError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        ModelError::Checkpoint("truncated file".into())
    } else {
        ModelError::Io(e)
    }
}

pub fn read_records<R: Read>(mut r: R) -> Result<Vec<Record>, ModelError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u64(&mut r)?;
    let mut records = Vec::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        if len > 1 << 16 {
            return Err(ModelError::Checkpoint(format!("record name length {len} is implausible")));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| ModelError::Checkpoint("record name is not utf-8".into()))?;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag).map_err(truncated)?;
        let dtype = DType::from_tag(tag[0])
            .ok_or_else(|| ModelError::Checkpoint(format!("record `{name}` has unknown dtype {}", tag[0])))?;
        let rank = read_u32(&mut r)? as usize;
        if rank > 8 {
            return Err(ModelError::Checkpoint(format!("record `{name}` has rank {rank}")));
        }
        let dims = (0..rank).map(|_| read_u64(&mut r)).collect::<Result<Vec<_>, _>>()?;
        let bytes = dims
            .iter()
            .try_fold(dtype.size() as u64, |acc, &d| acc.checked_mul(d))
            .filter(|&b| b <= 1 << 34)
            .ok_or_else(|| ModelError::Checkpoint(format!("record `{name}` is too large")))?;
        let mut data = vec![0u8; bytes as usize];
        r.read_exact(&mut data).map_err(truncated)?;
        records.push(Record { name, dtype, dims, data });
    }
    Ok(records)
}

impl<T: Real> Model<T> {
    pub fn to_records(&self) -> Vec<Record> {
        let mut out = vec![Record::bytes(CONFIG_KEY, crate::kv::render(&self.cfg.to_pairs()).into_bytes())];
        let n = &self.target_norm;
        out.push(Record::from_values(NORM_KEY, &[4], &[n.p_mean[0], n.p_mean[1], n.p_mean[2], n.p_scale]));
        for (name, t) in self.params.iter() {
            out.push(Record::from_values(name, t.shape(), t.data()));
        }
        for (name, rs) in &self.running {
            out.push(Record::from_values(format!("{name}.running_mean"), &[rs.channels()], &rs.mean));
            out.push(Record::from_values(format!("{name}.running_var"), &[rs.channels()], &rs.var));
        }
        out
    }

    /// Rebuilds a model from records. Every parameter and running statistic
    /// of the stored config must be present with a matching shape.
    pub fn from_records(records: &[Record]) -> Result<Self, ModelError> {
        let find = |name: &str| {
            records
                .iter()
                .find(|r| r.name == name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing record `{name}`")))
        };
        let cfg_rec = find(CONFIG_KEY)?;
        let text = std::str::from_utf8(&cfg_rec.data)
            .map_err(|_| ModelError::Checkpoint("config record is not utf-8".into()))?;
        let cfg = ModelConfig::from_kv_text(text)?;
        let mut model = Model::<T>::new(cfg, 0)?;

        let norm: Vec<f64> = find(NORM_KEY)?.values()?;
        if norm.len() != 4 {
            return Err(ModelError::Checkpoint("target norm record must hold 4 values".into()));
        }
        model.target_norm = TargetNorm { p_mean: [norm[0], norm[1], norm[2]], p_scale: norm[3] };

        let names: Vec<String> = model.params.iter().map(|(n, _)| n.to_string()).collect();
        for name in names {
            let rec = find(&name)?;
            let slot = model.params.by_name_mut(&name).expect("registered");
            let dims: Vec<u64> = slot.shape().iter().map(|&d| d as u64).collect();
            if rec.dims != dims {
                return Err(ModelError::Checkpoint(format!(
                    "record `{name}` has shape {:?}, expected {:?}",
                    rec.dims, dims
                )));
            }
            *slot = Tensor::new(slot.shape().to_vec(), rec.values()?);
        }
        for (name, rs) in &mut model.running {
            for (suffix, dst) in [("running_mean", &mut rs.mean), ("running_var", &mut rs.var)] {
                let rec = find(&format!("{name}.{suffix}"))?;
                let vals: Vec<T> = rec.values()?;
                if vals.len() != dst.len() {
                    return Err(ModelError::Checkpoint(format!("record `{name}.{suffix}` has the wrong length")));
                }
                *dst = vals;
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let file = File::create(path)?;
        write_records(BufWriter::new(file), &self.to_records())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let file = File::open(path)?;
        Self::from_records(&read_records(BufReader::new(file))?)
    }
}
