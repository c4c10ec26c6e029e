//! Flat little-endian dataset file.
//!
//! ```text
//! magic "PGDS" | version u32 | H u32 | W u32 | C u32 | N u32 | num_classes u32
//! N·H·W·C f64 images | N u16 labels | N·H·W u8 masks | N u8 group ids
//! ```
//! Group id is `label · num_classes + environment`.

use std::io::{Read, Write};

use super::{DataError, ImageDataset, Result};
use crate::synthesis::{MaskRole, ProvenanceMask};
use crate::tensor::Tensor;

pub const DATASET_MAGIC: [u8; 4] = *b"PGDS";
pub const DATASET_VERSION: u32 = 1;

pub fn write_dataset(ds: &ImageDataset, mut out: impl Write) -> Result<()> {
    let dims = [ds.height, ds.width, ds.channels, ds.len(), ds.num_classes];
    out.write_all(&DATASET_MAGIC)?;
    out.write_all(&DATASET_VERSION.to_le_bytes())?;
    for d in dims {
        let d = u32::try_from(d).map_err(|_| DataError::Format(format!("dimension {d} exceeds u32")))?;
        out.write_all(&d.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(ds.len() * ds.height * ds.width * (ds.channels * 8 + 1) + ds.len() * 3);
    for img in &ds.images {
        for v in img.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    for &l in &ds.labels {
        let l = u16::try_from(l).map_err(|_| DataError::Format(format!("label {l} exceeds u16")))?;
        buf.extend_from_slice(&l.to_le_bytes());
    }
    for m in &ds.targets {
        buf.extend(m.bits().iter().map(|&b| b as u8));
    }
    for i in 0..ds.len() {
        let g = u8::try_from(ds.group(i)).map_err(|_| DataError::Format("group id exceeds u8".into()))?;
        buf.push(g);
    }
    out.write_all(&buf)?;
    Ok(())
}

fn take<'a>(buf: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if buf.len() < n {
        return Err(DataError::Format("truncated file".into()));
    }
    let (head, rest) = buf.split_at(n);
    *buf = rest;
    Ok(head)
}

fn u32_at(buf: &mut &[u8]) -> Result<usize> {
    Ok(u32::from_le_bytes(take(buf, 4)?.try_into().expect("4 bytes")) as usize)
}

pub fn read_dataset(mut input: impl Read) -> Result<ImageDataset> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut buf = bytes.as_slice();
    if take(&mut buf, 4)? != DATASET_MAGIC {
        return Err(DataError::Format("bad magic".into()));
    }
    let version = u32_at(&mut buf)? as u32;
    if version != DATASET_VERSION {
        return Err(DataError::Format(format!("unsupported version {version}")));
    }
    let (h, w, c, n, k) = (u32_at(&mut buf)?, u32_at(&mut buf)?, u32_at(&mut buf)?, u32_at(&mut buf)?, u32_at(&mut buf)?);
    if h == 0 || w == 0 || c == 0 || k == 0 {
        return Err(DataError::Format("zero dimension in header".into()));
    }
    let per = h * w * c;
    let mut images = Vec::with_capacity(n);
    for _ in 0..n {
        let raw = take(&mut buf, per * 8)?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        images.push(Tensor::new(vec![h, w, c], data)?);
    }
    let labels: Vec<usize> = take(&mut buf, n * 2)?
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]) as usize)
        .collect();
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let raw = take(&mut buf, h * w)?;
        if raw.iter().any(|&b| b > 1) {
            return Err(DataError::Format("mask byte outside {0, 1}".into()));
        }
        let bits: Vec<bool> = raw.iter().map(|&b| b == 1).collect();
        targets.push(ProvenanceMask::from_bools(&[h, w], &bits, MaskRole::EditTarget)?);
    }
    let groups = take(&mut buf, n)?;
    if !buf.is_empty() {
        return Err(DataError::Format("trailing bytes".into()));
    }
    let mut envs = Vec::with_capacity(n);
    for (&g, &l) in groups.iter().zip(&labels) {
        let g = g as usize;
        if l >= k || g / k != l {
            return Err(DataError::Format(format!("group {g} inconsistent with label {l}")));
        }
        envs.push(g % k);
    }
    Ok(ImageDataset {
        height: h,
        width: w,
        channels: c,
        num_classes: k,
        images,
        labels,
        targets,
        envs,
    })
}
