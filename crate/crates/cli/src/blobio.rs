//! Raw tensor I/O shared by the checkpoint format and the sample cache:
//! little-endian f64 values in logical (row-major) order, shapes carried by
//! the surrounding manifest.

use anyhow::{ensure, Context, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::ArrayD;
use std::io::{Read, Write};

pub fn write_f64_blob(w: &mut impl Write, array: &ArrayD<f64>) -> Result<()> {
    for &v in array.iter() {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

pub fn read_f64_blob(r: &mut impl Read, shape: &[usize]) -> Result<ArrayD<f64>> {
    let len: usize = shape.iter().product();
    let mut data = vec![0.0; len];
    r.read_f64_into::<LittleEndian>(&mut data)
        .with_context(|| format!("reading {len}-element tensor"))?;
    ArrayD::from_shape_vec(shape.to_vec(), data).context("tensor shape mismatch")
}

/// Length-prefixed JSON blocks frame the manifests inside binary files.
pub fn write_json_block<T: serde::Serialize>(w: &mut impl Write, value: &T) -> Result<()> {
    let bytes = serde_json::to_vec(value)?;
    w.write_u64::<LittleEndian>(bytes.len() as u64)?;
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_json_block<T: serde::de::DeserializeOwned>(r: &mut impl Read) -> Result<T> {
    let len = r.read_u64::<LittleEndian>().context("reading JSON block length")?;
    ensure!(len <= 1 << 30, "unreasonable JSON block length {len}");
    let mut bytes = vec![0u8; len as usize];
    r.read_exact(&mut bytes).context("reading JSON block")?;
    serde_json::from_slice(&bytes).context("decoding JSON block")
}
