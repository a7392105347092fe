//! Binary checkpoint: `HATCKPT\0`, u32 version, u32-length config text,
//! u32 tensor count, then per tensor a u32-length name, u32 rank, u64 dims
//! and little-endian f32 data. All integers little-endian.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use super::config::HatConfig;
use super::params::ParamSet;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HATCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(params: &ParamSet<f32>, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let cfg = params.config.to_canonical_text();
    w.write_all(&(cfg.len() as u32).to_le_bytes())?;
    w.write_all(cfg.as_bytes())?;
    let tensors = params.tensors();
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.numel() * 4);
        for &x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R, what: &str) -> Result<String> {
    let n = read_u32(r)? as usize;
    if n > 1 << 24 {
        return Err(Error::Checkpoint(format!("{what} length {n} is implausible")));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|_| Error::Checkpoint(format!("{what} is not UTF-8")))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamSet<f32>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a HAT checkpoint".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let config = HatConfig::parse(&read_string(&mut r, "config")?)?;
    let mut params = ParamSet::<f32>::zeros(&config);
    let count = read_u32(&mut r)? as usize;
    let mut slots: HashMap<String, _> = params.tensors_mut().into_iter().collect();
    if count != slots.len() {
        return Err(Error::Checkpoint(format!(
            "{count} tensors stored, config needs {}",
            slots.len()
        )));
    }
    for _ in 0..count {
        let name = read_string(&mut r, "tensor name")?;
        let slot = slots
            .remove(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected or repeated tensor `{name}`")))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        if shape != slot.shape() {
            return Err(Error::Checkpoint(format!(
                "`{name}` has shape {shape:?}, config needs {:?}",
                slot.shape()
            )));
        }
        let mut buf = vec![0u8; slot.numel() * 4];
        r.read_exact(&mut buf)?;
        for (dst, b) in slot.data_mut().iter_mut().zip(buf.chunks_exact(4)) {
            *dst = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        }
    }
    drop(slots);
    if !params.is_finite() {
        return Err(Error::Checkpoint("non-finite parameter values".into()));
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ParamSet<f32>, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamSet<f32>> {
    let f = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    #[test]
    fn round_trip_is_bit_exact() {
        let p = init_params::<f32>(&HatConfig::micro(), 3);
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        let q = read_checkpoint(&buf[..]).unwrap();
        for ((na, a), (nb, b)) in p.tensors().into_iter().zip(q.tensors()) {
            assert_eq!(na, nb);
            let ab: Vec<u32> = a.data().iter().map(|x| x.to_bits()).collect();
            let bb: Vec<u32> = b.data().iter().map(|x| x.to_bits()).collect();
            assert_eq!(ab, bb);
        }
        let mut again = Vec::new();
        write_checkpoint(&q, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn rejects_corruption() {
        let p = init_params::<f32>(&HatConfig::micro(), 3);
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&bad[..]).is_err());
    }
}
