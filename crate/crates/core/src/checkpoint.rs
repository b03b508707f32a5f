//! Versioned binary checkpoint format.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! magic   b"DSMC"
//! version u32 (currently 1)
//! arch    u32 length + utf8 bytes
//! K       u32
//! c,h,w   u32 x 3
//! count   u32
//! tensor* name (u32 length + utf8), ndim u8, dims u32 x ndim, f32 payload
//! ```
//!
//! Parameter payloads are raw IEEE-754 f32 bits, so a save/load round trip
//! reproduces logits bit-identically.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, Array4};

use crate::error::{Error, Result};
use crate::model::{build_model, ClassifierModel, Layer, ParamTensor};
use crate::rng::Rng;

const MAGIC: &[u8; 4] = b"DSMC";
const VERSION: u32 = 1;

pub fn save_checkpoint(model: &ClassifierModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    write_str(&mut w, model.architecture_id())?;
    w.write_u32::<LittleEndian>(model.class_count() as u32)?;
    let (c, h, wd) = model.input_shape();
    for dim in [c, h, wd] {
        w.write_u32::<LittleEndian>(dim as u32)?;
    }
    let tensors = model.param_tensors();
    w.write_u32::<LittleEndian>(tensors.len() as u32)?;
    for (name, tensor) in tensors {
        write_str(&mut w, &name)?;
        let (dims, data): (Vec<usize>, Vec<f32>) = match tensor {
            ParamTensor::T4(a) => (a.shape().to_vec(), a.iter().copied().collect()),
            ParamTensor::T2(a) => (a.shape().to_vec(), a.iter().copied().collect()),
            ParamTensor::T1(a) => (a.shape().to_vec(), a.iter().copied().collect()),
        };
        w.write_u8(dims.len() as u8)?;
        for d in dims {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for v in data {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ClassifierModel> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::CheckpointFormat("file shorter than header".into()))?;
    if &magic != MAGIC {
        return Err(Error::CheckpointFormat(format!(
            "bad magic {magic:02x?}, expected {MAGIC:02x?}"
        )));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            supported: VERSION,
        });
    }
    let arch = read_str(&mut r)?;
    let class_count = r.read_u32::<LittleEndian>()? as usize;
    let c = r.read_u32::<LittleEndian>()? as usize;
    let h = r.read_u32::<LittleEndian>()? as usize;
    let w = r.read_u32::<LittleEndian>()? as usize;

    // Rebuild the skeleton; every parameter is overwritten below.
    let mut rng = Rng::new(0, "checkpoint-skeleton");
    let mut model = build_model(&arch, class_count, (c, h, w), &mut rng)?;

    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut loaded: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::with_capacity(count);
    for _ in 0..count {
        let name = read_str(&mut r)?;
        let ndim = r.read_u8()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.read_u32::<LittleEndian>()? as usize);
        }
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(r.read_f32::<LittleEndian>().map_err(|_| {
                Error::CheckpointFormat("payload shorter than tensor directory".into())
            })?);
        }
        loaded.push((name, dims, data));
    }

    let expected: Vec<String> = model.param_tensors().iter().map(|(n, _)| n.clone()).collect();
    if expected.len() != loaded.len() {
        return Err(Error::CheckpointFormat(format!(
            "expected {} tensors for {arch}, found {}",
            expected.len(),
            loaded.len()
        )));
    }

    for ((name, dims, data), expect_name) in loaded.into_iter().zip(expected) {
        if name != expect_name {
            return Err(Error::CheckpointFormat(format!(
                "tensor {name} out of order, expected {expect_name}"
            )));
        }
        assign_param(&mut model, &name, &dims, data)?;
    }
    Ok(model)
}

fn assign_param(
    model: &mut ClassifierModel,
    name: &str,
    dims: &[usize],
    data: Vec<f32>,
) -> Result<()> {
    let (layer_str, field) = name.split_once('.').ok_or_else(|| {
        Error::CheckpointFormat(format!("malformed tensor name {name}"))
    })?;
    let idx: usize = layer_str
        .strip_prefix("layer")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::CheckpointFormat(format!("malformed tensor name {name}")))?;
    let shape_err = |expected: &[usize]| Error::ShapeMismatch {
        context: "checkpoint tensor",
        expected: format!("{expected:?}"),
        got: format!("{dims:?}"),
    };
    match (&mut model.layers_mut()[idx], field) {
        (Layer::Conv { weight, .. }, "weight") => {
            if dims != weight.shape() {
                return Err(shape_err(weight.shape()));
            }
            *weight = Array4::from_shape_vec(weight.raw_dim(), data).expect("checked shape");
        }
        (Layer::Conv { bias, .. }, "bias") => {
            if dims != bias.shape() {
                return Err(shape_err(bias.shape()));
            }
            *bias = Array1::from_vec(data);
        }
        (Layer::Dense { weight, .. }, "weight") => {
            if dims != weight.shape() {
                return Err(shape_err(weight.shape()));
            }
            *weight = Array2::from_shape_vec(weight.raw_dim(), data).expect("checked shape");
        }
        (Layer::Dense { bias, .. }, "bias") => {
            if dims != bias.shape() {
                return Err(shape_err(bias.shape()));
            }
            *bias = Array1::from_vec(data);
        }
        _ => {
            return Err(Error::CheckpointFormat(format!(
                "tensor {name} does not match a parameterized layer"
            )))
        }
    }
    Ok(())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    if len > 4096 {
        return Err(Error::CheckpointFormat(format!("string length {len} too large")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::CheckpointFormat("non-utf8 string".into()))
}
