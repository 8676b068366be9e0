//! `MRAS` checkpoint container.
//!
//! ```text
//! "MRAS"  u32 version  u32 config_len  config text (UTF-8)
//! u32 tensor_count
//! tensor_count x { u32 name_len  name  u32 rank  rank x u32 dim  u64 payload_offset }
//! payload: little-endian f32 data, offsets relative to payload start
//! ```

use std::path::Path;

use crate::binio::{put_f32s, put_u32, put_u64, Reader};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::config::NetworkConfig;
use super::model::Network;

pub const MAGIC: [u8; 4] = *b"MRAS";
pub const VERSION: u32 = 1;

/// Serializes configuration, weights and batchnorm buffers.
pub fn to_bytes<F: Scalar>(net: &Network<F>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, VERSION);
    let text = net.config().to_text();
    put_u32(&mut out, text.len() as u32);
    out.extend_from_slice(text.as_bytes());
    let entries = net.store().entries();
    put_u32(&mut out, entries.len() as u32);
    let mut offset = 0u64;
    for e in entries {
        put_u32(&mut out, e.name.len() as u32);
        out.extend_from_slice(e.name.as_bytes());
        put_u32(&mut out, e.value.rank() as u32);
        for &d in e.value.shape() {
            put_u32(&mut out, d as u32);
        }
        put_u64(&mut out, offset);
        offset += 4 * e.value.numel() as u64;
    }
    for e in entries {
        put_f32s(&mut out, e.value.data().iter().map(|x| x.as_f32()));
    }
    out
}

pub fn from_bytes<F: Scalar>(bytes: &[u8]) -> Result<Network<F>> {
    let mut r = Reader::new(bytes, "checkpoint");
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            supported: VERSION,
        });
    }
    let n = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(n)?)
        .map_err(|_| Error::Format("checkpoint config is not UTF-8".into()))?;
    let config = NetworkConfig::from_text(text)?;
    let mut net = Network::<F>::new(config, 0)?;

    let count = r.u32()? as usize;
    if count != net.store().len() {
        return Err(Error::Format(format!(
            "checkpoint holds {count} tensors, the configured network has {}",
            net.store().len()
        )));
    }
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let offset = r.u64()? as usize;
        manifest.push((name, shape, offset));
    }
    let payload = r.rest();
    for (name, shape, offset) in manifest {
        let numel: usize = shape.iter().product();
        let mut pr = Reader::new(payload, "checkpoint payload");
        pr.take(offset)?;
        let data = pr.f32s(numel)?;
        let value = Tensor::new(shape, data.into_iter().map(|x| F::of(f64::from(x))).collect())?;
        net.store_mut().assign(&name, value)?;
    }
    Ok(net)
}

pub fn save<F: Scalar>(net: &Network<F>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(net))?;
    Ok(())
}

pub fn load<F: Scalar>(path: impl AsRef<Path>) -> Result<Network<F>> {
    from_bytes(&std::fs::read(path)?)
}
