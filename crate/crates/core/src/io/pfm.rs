//! Grayscale portable float map (`Pf`).
//!
//! Header is three whitespace-terminated tokens plus a scale line; a
//! negative scale marks little-endian data. Rows are stored bottom to top.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::SaliencyMap;

pub fn encode_pfm(map: &SaliencyMap) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", map.width, map.height).into_bytes();
    out.reserve(map.values.len() * 4);
    for row in map.values.chunks_exact(map.width).rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<SaliencyMap> {
    let bad = |reason: String| Error::format("PFM", path, reason);
    let mut pos = 0;
    let mut token = |what: &str| -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos || pos >= bytes.len() {
            return Err(bad(format!("header ends before the {what}")));
        }
        let t = String::from_utf8_lossy(&bytes[start..pos]).into_owned();
        // exactly one whitespace byte separates the header from the data
        pos += 1;
        Ok(t)
    };
    let magic = token("magic")?;
    if magic != "Pf" {
        return Err(bad(format!("expected grayscale magic `Pf`, got `{magic}`")));
    }
    let dim = |t: String, what: &str| -> Result<usize> {
        t.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| bad(format!("invalid {what} `{t}`")))
    };
    let width = dim(token("width")?, "width")?;
    let height = dim(token("height")?, "height")?;
    let scale_text = token("scale")?;
    let scale: f32 = scale_text
        .parse()
        .ok()
        .filter(|s: &f32| *s != 0.0 && s.is_finite())
        .ok_or_else(|| bad(format!("invalid scale `{scale_text}`")))?;
    let little = scale < 0.0;
    let n = width
        .checked_mul(height)
        .ok_or_else(|| bad("dimensions overflow".into()))?;
    let data = &bytes[pos..];
    if data.len() != n * 4 {
        return Err(bad(format!(
            "expected {} data bytes for {width}x{height}, got {}",
            n * 4,
            data.len()
        )));
    }
    let mut values = vec![0.0f32; n];
    for (r, row) in data.chunks_exact(width * 4).enumerate() {
        let y = height - 1 - r;
        for (x, b) in row.chunks_exact(4).enumerate() {
            let b = [b[0], b[1], b[2], b[3]];
            values[y * width + x] = if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
        }
    }
    SaliencyMap::new(height, width, values)
}

pub fn save_pfm(map: &SaliencyMap, path: &Path) -> Result<()> {
    fs::write(path, encode_pfm(map)).map_err(|e| Error::io(path, e))
}

pub fn load_pfm(path: &Path) -> Result<SaliencyMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_exact() {
        let bytes = encode_pfm(&SaliencyMap::zeros(112, 112));
        assert!(bytes.starts_with(b"Pf\n112 112\n-1.0\n"));
        assert_eq!(bytes.len(), 16 + 112 * 112 * 4);
    }

    #[test]
    fn rows_are_stored_bottom_up() {
        let m = SaliencyMap::new(2, 1, vec![1.0, 2.0]).unwrap();
        let bytes = encode_pfm(&m);
        assert_eq!(
            &bytes[bytes.len() - 8..bytes.len() - 4],
            &2.0f32.to_le_bytes()
        );
    }

    #[test]
    fn big_endian_files_are_read() {
        let mut bytes = b"Pf\n2 1\n1.0\n".to_vec();
        bytes.extend(0.5f32.to_be_bytes());
        bytes.extend((-3.0f32).to_be_bytes());
        let m = decode_pfm(&bytes, Path::new("x.pfm")).unwrap();
        assert_eq!(m.values, vec![0.5, -3.0]);
    }

    #[test]
    fn malformed_files_are_format_errors() {
        let p = Path::new("m.pfm");
        for bytes in [
            &b""[..],
            b"PF\n1 1\n-1.0\n\0\0\0\0",
            b"Pf\n1 x\n-1.0\n\0\0\0\0",
            b"Pf\n1 1\n0\n\0\0\0\0",
            b"Pf\n2 2\n-1.0\n\0\0\0\0",
        ] {
            assert!(
                matches!(decode_pfm(bytes, p), Err(Error::Format { .. })),
                "{bytes:?}"
            );
        }
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(h in 1usize..6, w in 1usize..6, seed in any::<u32>()) {
            let values: Vec<f32> = (0..h * w)
                .map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32 * 40503) & 0xbf7f_ffff))
                .collect();
            let m = SaliencyMap::new(h, w, values).unwrap();
            let back = decode_pfm(&encode_pfm(&m), Path::new("p.pfm")).unwrap();
            let bits = |m: &SaliencyMap| m.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&m));
        }
    }
}
