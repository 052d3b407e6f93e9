//! `NRWT` named-tensor weight files.
//!
//! Layout (little-endian): magic `NRWT`, version u32, tensor_count u32, then
//! per tensor `name_len u16, name, rank u8, dims u32 × rank, data f32 × ∏dims`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"NRWT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("tensor dims {dims:?} need {n} values, got {}", data.len())));
        }
        Ok(Self { dims, data })
    }
}

/// Weight tensors keyed by canonical name, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightSet {
    tensors: BTreeMap<String, Tensor>,
}

impl WeightSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        check_tensor_name(&name)?;
        self.tensors.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    /// Looks up `name` and checks its shape.
    pub fn require(&self, name: &str, dims: &[usize]) -> Result<&Tensor> {
        let t = self.tensors.get(name).ok_or_else(|| Error::MissingTensor(name.to_string()))?;
        if t.dims != dims {
            return Err(Error::TensorShape {
                name: name.to_string(),
                expected: dims.to_vec(),
                found: t.dims.clone(),
            });
        }
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }
}

fn is_index(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit())
}

/// Accepts only the canonical tensor names:
/// `stub.conv{K}.{kernel,bias}`, `level{1,2,3}.geo_conv{n}.{kernel,bias}`,
/// `level{l}.gru.{W_z,W_r,W_h}.{kernel,bias}`, `level{l}.mlp.layer{j}.{weight,bias}`.
pub fn check_tensor_name(name: &str) -> Result<()> {
    let parts: Vec<&str> = name.split('.').collect();
    let kb = |s: &str| s == "kernel" || s == "bias";
    let ok = match parts.as_slice() {
        ["stub", conv, p] => conv.strip_prefix("conv").is_some_and(is_index) && kb(p),
        [level, rest @ ..] if matches!(*level, "level1" | "level2" | "level3") => match rest {
            [geo, p] => geo.strip_prefix("geo_conv").is_some_and(is_index) && kb(p),
            ["gru", gate, p] => matches!(*gate, "W_z" | "W_r" | "W_h") && kb(p),
            ["mlp", layer, p] => layer.strip_prefix("layer").is_some_and(is_index) && (*p == "weight" || *p == "bias"),
            _ => false,
        },
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::UnknownTensor(name.to_string()))
    }
}

pub fn write_weights<W: Write>(set: &WeightSet, mut w: W) -> std::io::Result<()> {
    w.write_all(&MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(set.len() as u32)?;
    for (name, t) in set.iter() {
        w.write_u16::<LittleEndian>(name.len() as u16)?;
        w.write_all(name.as_bytes())?;
        w.write_u8(t.dims.len() as u8)?;
        for &d in &t.dims {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for &v in &t.data {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    w.flush()
}

pub fn save_weights(set: &WeightSet, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_weights(set, BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

fn trunc(what: &'static str) -> impl Fn(std::io::Error) -> Error {
    move |_| Error::Truncated(what)
}

pub fn read_weights<R: Read>(mut r: R) -> Result<WeightSet> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(trunc("header"))?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: magic,
        });
    }
    let version = r.read_u32::<LittleEndian>().map_err(trunc("header"))?;
    if version != VERSION {
        return Err(Error::Version(version));
    }
    let count = r.read_u32::<LittleEndian>().map_err(trunc("header"))?;
    let mut set = WeightSet::new();
    for _ in 0..count {
        let len = r.read_u16::<LittleEndian>().map_err(trunc("tensor name"))? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(trunc("tensor name"))?;
        let name = String::from_utf8(name).map_err(|_| Error::UnknownTensor("<invalid utf-8>".into()))?;
        check_tensor_name(&name)?;
        let rank = r.read_u8().map_err(trunc("tensor dims"))? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.read_u32::<LittleEndian>().map_err(trunc("tensor dims"))? as usize);
        }
        let n: usize = dims.iter().product();
        let mut data = vec![0f32; n];
        r.read_f32_into::<LittleEndian>(&mut data).map_err(trunc("tensor data"))?;
        set.tensors.insert(name, Tensor { dims, data });
    }
    Ok(set)
}

pub fn load_weights(path: &Path) -> Result<WeightSet> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_weights(BufReader::new(f))
}
