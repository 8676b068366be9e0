//! `VIBR` dataset container and CSV import.
//!
//! ```text
//! "VIBR"  u32 version  u32 N  u32 c_in  u32 L  u32 K
//! N x c_in x L little-endian f32 windows
//! N little-endian u16 labels
//! K class names: u32 byte length, UTF-8 bytes
//! ```

use std::path::Path;

use crate::binio::{put_f32s, put_u32, Reader};
use crate::error::{Error, Result};

use super::set::SampleSet;

pub const MAGIC: [u8; 4] = *b"VIBR";
pub const VERSION: u32 = 2;

pub fn to_bytes(set: &SampleSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 4 * set.windows().len() + 2 * set.len());
    out.extend_from_slice(&MAGIC);
    for v in [VERSION, set.len() as u32, set.channels() as u32, set.length() as u32, set.num_classes() as u32] {
        put_u32(&mut out, v);
    }
    put_f32s(&mut out, set.windows().iter().copied());
    for &l in set.labels() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    for k in 0..set.num_classes() {
        let name = set.class_names.get(k).map_or("", String::as_str);
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<SampleSet> {
    let mut r = Reader::new(bytes, "dataset");
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            supported: VERSION,
        });
    }
    let n = r.u32()? as usize;
    let c_in = r.u32()? as usize;
    let len = r.u32()? as usize;
    let k = r.u32()? as usize;
    let values = n
        .checked_mul(c_in)
        .and_then(|v| v.checked_mul(len))
        .ok_or_else(|| Error::Format("dataset header sizes overflow".into()))?;
    let expected = values as u128 * 4 + n as u128 * 2;
    if (r.remaining() as u128) < expected {
        return Err(Error::Truncated(format!(
            "dataset header declares {n} windows of [{c_in}, {len}] ({expected} payload bytes), file has {}",
            r.remaining()
        )));
    }
    let windows = r.f32s(values)?;
    let labels = (0..n).map(|_| r.u16()).collect::<Result<Vec<_>>>()?;
    let mut names = Vec::with_capacity(k.min(1 << 16));
    for _ in 0..k {
        let l = r.u32()? as usize;
        let raw = r.take(l)?;
        names.push(
            String::from_utf8(raw.to_vec()).map_err(|_| Error::Format("class name is not UTF-8".into()))?,
        );
    }
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes after dataset payload", r.remaining())));
    }
    let mut set = SampleSet::new(c_in, len, k, windows, labels)?;
    for (slot, name) in set.class_names.iter_mut().zip(names) {
        if !name.is_empty() {
            *slot = name;
        }
    }
    Ok(set)
}

pub fn save_dataset(set: &SampleSet, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(set))?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<SampleSet> {
    from_bytes(&std::fs::read(path)?)
}

/// One window per row: `channels * length` values, channel-major, then an
/// integer label. A first row that does not parse as numbers is taken as
/// a header. With `num_classes = None` the class count is `max label + 1`.
pub fn import_csv(
    path: impl AsRef<Path>,
    channels: usize,
    num_classes: Option<usize>,
) -> Result<SampleSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(e.to_string()))?;
    let mut windows = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(e.to_string()))?;
        let parsed: Option<Vec<f32>> = rec.iter().take(rec.len().saturating_sub(1)).map(|v| v.parse().ok()).collect();
        let label: Option<u16> = rec.get(rec.len().wrapping_sub(1)).and_then(|v| v.parse().ok());
        let (values, label) = match (parsed, label) {
            (Some(v), Some(l)) => (v, l),
            _ if row == 0 => continue,
            _ => return Err(Error::Data(format!("csv row {}: not numeric", row + 1))),
        };
        if *width.get_or_insert(values.len()) != values.len() {
            return Err(Error::Data(format!(
                "csv row {}: {} values, earlier rows have {}",
                row + 1,
                values.len(),
                width.unwrap_or(0)
            )));
        }
        windows.extend(values);
        labels.push(label);
    }
    let width = width.ok_or_else(|| Error::Data("csv holds no windows".into()))?;
    if channels == 0 || width % channels != 0 {
        return Err(Error::Data(format!("{width} values per row do not split into {channels} channels")));
    }
    let k = num_classes.unwrap_or_else(|| labels.iter().map(|&l| usize::from(l) + 1).max().unwrap_or(1));
    SampleSet::new(channels, width / channels, k, windows, labels)
}
