//! Single-channel PFM (`Pf`) reading and writing.
//!
//! Invalid pixels of sparse fields are stored as `+inf`.

use std::path::Path;

use smd_core::sampling::DisparityField;
use smd_core::{Result, SmdError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

fn pfm_err(offset: usize, reason: impl Into<String>) -> SmdError {
    SmdError::Pfm {
        offset: offset as u64,
        reason: reason.into(),
    }
}

/// Encodes `field` as PFM bytes with values cast to `f32`.
pub fn encode(field: &DisparityField, endian: Endian) -> Vec<u8> {
    let (w, h) = (field.width(), field.height());
    let scale = match endian {
        Endian::Little => "-1.0",
        Endian::Big => "1.0",
    };
    let mut out = format!("Pf\n{w} {h}\n{scale}\n").into_bytes();
    out.reserve(w * h * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            let v = if field.is_valid(x, y) {
                field.get(x, y) as f32
            } else {
                f32::INFINITY
            };
            out.extend_from_slice(&match endian {
                Endian::Little => v.to_le_bytes(),
                Endian::Big => v.to_be_bytes(),
            });
        }
    }
    out
}

/// Reads one whitespace-delimited header token starting at `*pos`.
fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(pfm_err(start, "header ended early"));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| pfm_err(start, "header is not ASCII"))
}

pub fn decode(bytes: &[u8]) -> Result<DisparityField> {
    let mut pos = 0;
    match token(bytes, &mut pos)? {
        "Pf" => {}
        "PF" => return Err(pfm_err(0, "three-channel PF cannot hold a disparity map")),
        other => return Err(pfm_err(0, format!("bad magic '{other}'"))),
    }
    let mut dim = |name: &str| -> Result<usize> {
        let at = pos;
        let t = token(bytes, &mut pos)?;
        match t.parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(pfm_err(at, format!("bad {name} '{t}'"))),
        }
    };
    let w = dim("width")?;
    let h = dim("height")?;
    let at = pos;
    let t = token(bytes, &mut pos)?;
    let scale: f64 = t.parse().map_err(|_| pfm_err(at, format!("bad scale '{t}'")))?;
    let endian = if scale < 0.0 {
        Endian::Little
    } else if scale > 0.0 {
        Endian::Big
    } else {
        return Err(pfm_err(at, "scale must be non-zero"));
    };
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(pfm_err(pos, "missing newline after scale"));
    }
    pos += 1;
    let need = w * h * 4;
    let have = bytes.len() - pos;
    if have < need {
        return Err(pfm_err(
            bytes.len(),
            format!("truncated payload: {have} of {need} bytes"),
        ));
    }
    let mut values = vec![0.0; w * h];
    let mut valid = vec![true; w * h];
    for (k, chunk) in bytes[pos..pos + need].chunks_exact(4).enumerate() {
        let raw: [u8; 4] = chunk.try_into().expect("four bytes");
        let v = match endian {
            Endian::Little => f32::from_le_bytes(raw),
            Endian::Big => f32::from_be_bytes(raw),
        };
        let (x, row) = (k % w, k / w);
        let i = (h - 1 - row) * w + x;
        if v.is_finite() {
            values[i] = v as f64;
        } else {
            valid[i] = false;
        }
    }
    let field = DisparityField::new(w, h, values)?;
    if valid.iter().all(|v| *v) {
        Ok(field)
    } else {
        field.with_validity(valid)
    }
}

pub fn read(path: &Path) -> Result<DisparityField> {
    decode(&std::fs::read(path)?)
}

pub fn write(path: &Path, field: &DisparityField) -> Result<()> {
    crate::fsutil::write_atomic(path, &encode(field, Endian::Little))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field() -> DisparityField {
        DisparityField::from_fn(5, 7, |x, y| x as f64 * 1.5 - y as f64 * 0.25)
    }

    #[test]
    fn header_and_row_order() {
        let bytes = encode(&DisparityField::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(), Endian::Little);
        assert!(bytes.starts_with(b"Pf\n2 2\n-1.0\n"));
        let payload = &bytes[bytes.len() - 16..];
        // Bottom row first.
        assert_eq!(&payload[..4], &3.0f32.to_le_bytes());
        assert_eq!(&payload[12..], &2.0f32.to_le_bytes());
    }

    #[test]
    fn roundtrip_both_endians() {
        for e in [Endian::Little, Endian::Big] {
            assert_eq!(decode(&encode(&field(), e)).unwrap(), field());
        }
    }

    #[test]
    fn sparse_roundtrip() {
        let f = field().with_validity((0..35).map(|i| i % 3 != 0).collect()).unwrap();
        let back = decode(&encode(&f, Endian::Big)).unwrap();
        assert_eq!(back.validity(), f.validity());
    }

    #[test]
    fn errors() {
        let bytes = encode(&field(), Endian::Little);
        match decode(&bytes[..bytes.len() - 3]) {
            Err(SmdError::Pfm { offset, reason }) => {
                assert_eq!(offset as usize, bytes.len() - 3);
                assert!(reason.contains("truncated"));
            }
            other => panic!("{other:?}"),
        }
        assert!(decode(b"PF\n1 1\n-1.0\n").is_err());
        assert!(decode(b"Pf\n1 1\n0\n\0\0\0\0").is_err());
        assert!(decode(b"P6\n1 1\n").is_err());
        assert!(decode(b"Pf\n0 1\n-1\n").is_err());
    }
}
