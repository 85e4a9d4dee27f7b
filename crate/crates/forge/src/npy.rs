//! NPY v1.0 reader and writer.
//!
//! Only little-endian `f4`/`f8`, C-order arrays of rank 2 or 4 are accepted.
//! Values are widened to `f64` on read; writes are always `<f8`.

use std::fs;
use std::path::Path;

use concept_forge_core::store::{Dtype, Tensor};
use concept_forge_core::Error as CoreError;

use crate::error::{ForgeError, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub descr: String,
    pub fortran_order: bool,
    pub shape: Vec<usize>,
}

fn format_err(msg: impl Into<String>) -> ForgeError {
    ForgeError::Format(msg.into())
}

/// Parses the Python dict literal of an NPY header, e.g.
/// `{'descr': '<f4', 'fortran_order': False, 'shape': (3, 5), }`.
pub fn parse_header(text: &str) -> Result<Header> {
    let body = text
        .trim()
        .strip_prefix('{')
        .and_then(|t| t.strip_suffix('}'))
        .ok_or_else(|| format_err("header is not a dict literal"))?;

    let (mut descr, mut fortran, mut shape) = (None, None, None);
    let mut rest = body.trim_start();
    while !rest.is_empty() {
        let (key, after) = quoted(rest).ok_or_else(|| format_err("expected a quoted key"))?;
        let after = after
            .trim_start()
            .strip_prefix(':')
            .ok_or_else(|| format_err(format!("missing ':' after '{key}'")))?
            .trim_start();
        rest = match key {
            "descr" => {
                let (v, r) = quoted(after).ok_or_else(|| format_err("descr must be a string"))?;
                descr = Some(v.to_string());
                r
            }
            "fortran_order" => {
                if let Some(r) = after.strip_prefix("False") {
                    fortran = Some(false);
                    r
                } else if let Some(r) = after.strip_prefix("True") {
                    fortran = Some(true);
                    r
                } else {
                    return Err(format_err("fortran_order must be True or False"));
                }
            }
            "shape" => {
                let r = after
                    .strip_prefix('(')
                    .ok_or_else(|| format_err("shape must be a tuple"))?;
                let close = r
                    .find(')')
                    .ok_or_else(|| format_err("unterminated shape"))?;
                let dims = r[..close]
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<usize>()
                            .map_err(|_| format_err(format!("bad dimension '{s}'")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                shape = Some(dims);
                &r[close + 1..]
            }
            other => return Err(format_err(format!("unexpected header key '{other}'"))),
        };
        rest = rest.trim_start();
        rest = rest.strip_prefix(',').unwrap_or(rest).trim_start();
    }
    Ok(Header {
        descr: descr.ok_or_else(|| format_err("header lacks 'descr'"))?,
        fortran_order: fortran.ok_or_else(|| format_err("header lacks 'fortran_order'"))?,
        shape: shape.ok_or_else(|| format_err("header lacks 'shape'"))?,
    })
}

fn quoted(s: &str) -> Option<(&str, &str)> {
    let q = s.chars().next().filter(|c| *c == '\'' || *c == '"')?;
    let end = s[1..].find(q)? + 1;
    Some((&s[1..end], &s[end + 1..]))
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(format_err("bad magic bytes"));
    }
    if bytes[6..8] != [1, 0] {
        return Err(ForgeError::Unsupported(format!(
            "format version {}.{}, only 1.0 is read",
            bytes[6], bytes[7]
        )));
    }
    let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let header = bytes
        .get(10..10 + hlen)
        .ok_or_else(|| format_err("truncated header"))?;
    let header = std::str::from_utf8(header).map_err(|_| format_err("header is not ASCII"))?;
    let h = parse_header(header)?;

    let (width, dtype) = match h.descr.as_str() {
        "<f4" => (4, Dtype::F32),
        "<f8" => (8, Dtype::F64),
        other => return Err(ForgeError::Unsupported(format!("dtype '{other}'"))),
    };
    if h.fortran_order {
        return Err(ForgeError::Unsupported("Fortran-order arrays".into()));
    }
    if h.shape.len() != 2 && h.shape.len() != 4 {
        return Err(
            CoreError::Shape(format!("rank {} array, expected 2 or 4", h.shape.len())).into(),
        );
    }

    let count = h
        .shape
        .iter()
        .try_fold(1usize, |a, &b| a.checked_mul(b))
        .ok_or_else(|| format_err("shape overflows"))?;
    let payload = &bytes[10 + hlen..];
    if payload.len() != count * width {
        return Err(format_err(format!(
            "payload holds {} bytes, shape {:?} needs {}",
            payload.len(),
            h.shape,
            count * width
        )));
    }
    let data: Vec<f64> = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Ok(Tensor::new(h.shape, data, dtype)?)
}

/// Encodes `shape`/`data` as a `<f8` NPY v1.0 file.
pub fn encode(shape: &[usize], data: &[f64]) -> Vec<u8> {
    let dims = match shape {
        [n] => format!("{n},"),
        _ => shape
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(", "),
    };
    let mut header = format!("{{'descr': '<f8', 'fortran_order': False, 'shape': ({dims}), }}");
    // magic + version + length + header + '\n' lands on a multiple of 64
    let unpadded = 10 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');

    let mut out = Vec::with_capacity(10 + header.len() + data.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn load_npy(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| ForgeError::io(path, e))?;
    decode(&bytes)
}

pub fn save_npy(path: &Path, t: &Tensor) -> Result<()> {
    fs::write(path, encode(t.shape(), t.data())).map_err(|e| ForgeError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(header: &str, payload: &[u8]) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&[1, 0]);
        out.extend_from_slice(&(header.len() as u16).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn reads_minimal_f32_file() {
        let payload: Vec<u8> = (0..15).flat_map(|i| (i as f32).to_le_bytes()).collect();
        let t = decode(&raw(
            "{'descr':'<f4','fortran_order':False,'shape':(3,5)}",
            &payload,
        ))
        .unwrap();
        assert_eq!(t.shape(), &[3, 5]);
        assert_eq!(t.dtype(), Dtype::F32);
        assert_eq!(t.data()[14], 14.0);
    }

    #[test]
    fn reads_four_d_ones() {
        let payload: Vec<u8> = (0..24).flat_map(|_| 1f64.to_le_bytes()).collect();
        let t = decode(&raw(
            "{'descr': '<f8', 'fortran_order': False, 'shape': (2, 3, 2, 2), }\n",
            &payload,
        ))
        .unwrap();
        assert_eq!(t.data(), &[1.0; 24][..]);
    }

    #[test]
    fn classifies_bad_files() {
        let mut bad = raw(
            "{'descr':'<f8','fortran_order':False,'shape':(1,1)}",
            &[0; 8],
        );
        bad[1] = b'X';
        assert!(matches!(decode(&bad), Err(ForgeError::Format(_))));
        let f = raw(
            "{'descr':'<f8','fortran_order':True,'shape':(1,1)}",
            &[0; 8],
        );
        assert!(matches!(decode(&f), Err(ForgeError::Unsupported(_))));
        let i = raw(
            "{'descr':'<i8','fortran_order':False,'shape':(1,1)}",
            &[0; 8],
        );
        assert!(matches!(decode(&i), Err(ForgeError::Unsupported(_))));
        let big = raw(
            "{'descr':'>f8','fortran_order':False,'shape':(1,1)}",
            &[0; 8],
        );
        assert!(matches!(decode(&big), Err(ForgeError::Unsupported(_))));
        let r3 = raw(
            "{'descr':'<f8','fortran_order':False,'shape':(1,1,1)}",
            &[0; 8],
        );
        assert!(matches!(
            decode(&r3),
            Err(ForgeError::Core(CoreError::Shape(_)))
        ));
        let short = raw(
            "{'descr':'<f8','fortran_order':False,'shape':(2,1)}",
            &[0; 8],
        );
        assert!(matches!(decode(&short), Err(ForgeError::Format(_))));
        assert!(matches!(decode(b"\x93NUMPY"), Err(ForgeError::Format(_))));
    }

    #[test]
    fn written_header_is_aligned() {
        for shape in [vec![3, 5], vec![2, 3, 4, 5], vec![1000, 2048]] {
            let n: usize = shape.iter().product();
            let bytes = encode(&shape, &vec![0.5; n]);
            let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
            assert_eq!((10 + hlen) % 64, 0);
            assert_eq!(bytes[10 + hlen - 1], b'\n');
            assert_eq!(decode(&bytes).unwrap().shape(), &shape[..]);
        }
    }
}
