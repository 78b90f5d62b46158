//! `NTW1` weight files.
//!
//! Layout: the four bytes `NTW1`; a little-endian `u32` giving the manifest length in
//! bytes; the manifest, UTF-8 text with one line `name\tshape\toffset` per tensor
//! (shape as comma-separated dimensions, offset in bytes from the start of the data
//! section); then the raw little-endian `f32` data of every tensor back to back.

use std::fs;
use std::path::Path;

use super::Tensor;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NTW1";

pub fn encode(tensors: &[(String, Tensor<f32>)]) -> Result<Vec<u8>> {
    let mut manifest = String::new();
    let mut offset = 0usize;
    for (name, t) in tensors {
        if name.is_empty() || name.contains(['\t', '\n']) {
            return Err(Error::format(format!(
                "tensor name `{name}` cannot be stored"
            )));
        }
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        manifest.push_str(&format!("{name}\t{}\t{offset}\n", shape.join(",")));
        offset += 4 * t.len();
    }
    let mut out = Vec::with_capacity(8 + manifest.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(manifest.as_bytes());
    for (_, t) in tensors {
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::format("not an NTW1 checkpoint"));
    }
    let mlen = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let manifest = bytes
        .get(8..8 + mlen)
        .ok_or_else(|| Error::format("checkpoint manifest is truncated"))?;
    let manifest = std::str::from_utf8(manifest)
        .map_err(|_| Error::format("checkpoint manifest is not UTF-8"))?;
    let data = &bytes[8 + mlen..];
    let mut out = Vec::new();
    let mut expected_offset = 0usize;
    for line in manifest.lines() {
        let fields: Vec<&str> = line.split('\t').collect();
        let [name, shape, offset] = fields[..] else {
            return Err(Error::format(format!(
                "bad checkpoint manifest line `{line}`"
            )));
        };
        let shape: Vec<usize> = if shape.is_empty() {
            vec![]
        } else {
            shape
                .split(',')
                .map(|d| {
                    d.parse()
                        .map_err(|_| Error::format(format!("bad dimension `{d}`")))
                })
                .collect::<Result<_>>()?
        };
        let offset: usize = offset
            .parse()
            .map_err(|_| Error::format(format!("bad offset `{offset}`")))?;
        if offset != expected_offset {
            return Err(Error::format(format!(
                "tensor `{name}` is not stored contiguously"
            )));
        }
        let n: usize = shape.iter().product();
        let raw = data.get(offset..offset + 4 * n).ok_or_else(|| {
            Error::format(format!("tensor `{name}` runs past the end of the file"))
        })?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        out.push((name.to_string(), Tensor::new(&shape, values)?));
        expected_offset += 4 * n;
    }
    if expected_offset != data.len() {
        return Err(Error::format(format!(
            "checkpoint holds {} data bytes, manifest accounts for {expected_offset}",
            data.len()
        )));
    }
    Ok(out)
}

pub fn save(path: &Path, tensors: &[(String, Tensor<f32>)]) -> Result<()> {
    fs::write(path, encode(tensors)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    decode(&fs::read(path)?)
}

/// Finds a tensor by name and checks its shape.
pub fn take(tensors: &[(String, Tensor<f32>)], name: &str, shape: &[usize]) -> Result<Tensor<f32>> {
    let t = tensors
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, t)| t)
        .ok_or_else(|| Error::format(format!("checkpoint has no tensor `{name}`")))?;
    if t.shape() != shape {
        return Err(Error::format(format!(
            "tensor `{name}` has shape {:?}, expected {shape:?}",
            t.shape()
        )));
    }
    Ok(t.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<(String, Tensor<f32>)> {
        vec![
            (
                "conv1.w".into(),
                Tensor::new(&[2, 1, 2, 2], (0..8).map(|i| i as f32 * 0.5).collect()).unwrap(),
            ),
            (
                "conv1.b".into(),
                Tensor::new(&[2], vec![-1.0, f32::MIN_POSITIVE]).unwrap(),
            ),
            ("meta".into(), Tensor::scalar(3.25)),
        ]
    }

    #[test]
    fn round_trip_is_exact() {
        let bytes = encode(&sample()).unwrap();
        assert_eq!(&bytes[..4], b"NTW1");
        assert_eq!(decode(&bytes).unwrap(), sample());
    }

    #[test]
    fn manifest_text() {
        let bytes = encode(&sample()).unwrap();
        let mlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let text = std::str::from_utf8(&bytes[8..8 + mlen]).unwrap();
        assert_eq!(text, "conv1.w\t2,1,2,2\t0\nconv1.b\t2\t32\nmeta\t\t40\n");
    }

    #[test]
    fn length_is_verified() {
        let bytes = encode(&sample()).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(decode(&longer).is_err());
        assert!(decode(b"NTW2\0\0\0\0").is_err());
    }
}
