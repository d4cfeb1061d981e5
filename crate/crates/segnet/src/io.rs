//! Binary weights file:
//!
//! ```text
//! "MVSW" | u32 version | u32 n | n bytes config JSON | u32 tensor count
//! per tensor: u8 kind | u32 rank | rank × u32 dims | f32 LE values
//! u32 CRC-32 of everything before it
//! ```
//! All integers are little-endian.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::net::{NetworkConfig, Param, ParamKind, Weights};

pub const MAGIC: &[u8; 4] = b"MVSW";
pub const VERSION: u32 = 1;

fn kind_code(k: ParamKind) -> u8 {
    match k {
        ParamKind::Kernel => 0,
        ParamKind::Bias => 1,
        ParamKind::NormScale => 2,
        ParamKind::NormShift => 3,
    }
}

fn kind_from(code: u8) -> Result<ParamKind> {
    Ok(match code {
        0 => ParamKind::Kernel,
        1 => ParamKind::Bias,
        2 => ParamKind::NormScale,
        3 => ParamKind::NormShift,
        c => return Err(Error::WeightsFormat(format!("unknown tensor kind {c}"))),
    })
}

pub fn to_bytes(w: &Weights<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(64 + 4 * w.count());
    out.extend_from_slice(MAGIC);
    let cfg = serde_json::to_vec(&w.config)?;
    let wr = |out: &mut Vec<u8>, v: u32| out.write_u32::<LE>(v).expect("vec write");
    wr(&mut out, VERSION);
    wr(&mut out, cfg.len() as u32);
    out.extend_from_slice(&cfg);
    wr(&mut out, w.params.len() as u32);
    for p in &w.params {
        out.push(kind_code(p.kind));
        wr(&mut out, p.shape.len() as u32);
        for &d in &p.shape {
            wr(&mut out, d as u32);
        }
        for &v in &p.data {
            out.write_f32::<LE>(v).expect("vec write");
        }
    }
    let crc = crc32fast::hash(&out);
    wr(&mut out, crc);
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Weights<f32>> {
    let short = |_| Error::WeightsFormat("file is truncated".into());
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::WeightsFormat("missing MVSW magic".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut r = Cursor::new(&body[4..]);
    let version = r.read_u32::<LE>().map_err(short)?;
    if version != VERSION {
        return Err(Error::WeightsFormat(format!("unsupported version {version}")));
    }
    let n = r.read_u32::<LE>().map_err(short)? as usize;
    let mut cfg = vec![0u8; n];
    r.read_exact(&mut cfg).map_err(short)?;
    let config: NetworkConfig = serde_json::from_slice(&cfg)?;
    let count = r.read_u32::<LE>().map_err(short)? as usize;
    let mut params = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let kind = kind_from(r.read_u8().map_err(short)?)?;
        let rank = r.read_u32::<LE>().map_err(short)? as usize;
        if rank > 8 {
            return Err(Error::WeightsFormat(format!("tensor rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| r.read_u32::<LE>().map(|d| d as usize))
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(short)?;
        let len: usize = shape.iter().product();
        if len * 4 > body.len() {
            return Err(Error::WeightsFormat("tensor larger than file".into()));
        }
        let mut data = vec![0f32; len];
        r.read_f32_into::<LE>(&mut data).map_err(short)?;
        params.push(Param { kind, shape, data });
    }
    if (r.position() as usize) != body.len() - 4 {
        return Err(Error::WeightsFormat("trailing bytes after tensors".into()));
    }
    let w = Weights { config, params };
    w.check_shapes()?;
    if !w.is_finite() {
        return Err(Error::WeightsFormat("non-finite weight".into()));
    }
    Ok(w)
}

pub fn save(w: &Weights<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(w)?).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load(path: impl AsRef<Path>) -> Result<Weights<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Dimensionality;

    fn weights() -> Weights<f32> {
        let cfg = NetworkConfig::new(Dimensionality::ThreeD, 7, 2).with_features(3, 10);
        Weights::init(&cfg, 4).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let w = weights();
        assert_eq!(from_bytes(&to_bytes(&w).unwrap()).unwrap(), w);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.bin");
        save(&w, &p).unwrap();
        assert_eq!(load(&p).unwrap(), w);
    }

    #[test]
    fn corruption_detected() {
        let mut b = to_bytes(&weights()).unwrap();
        let mid = b.len() / 2;
        b[mid] ^= 1;
        assert!(matches!(from_bytes(&b), Err(Error::Checksum { .. })));
        let b = to_bytes(&weights()).unwrap();
        assert!(from_bytes(&b[..b.len() - 9]).is_err());
        assert!(from_bytes(b"NOPE0000").is_err());
    }
}
