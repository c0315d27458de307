//! Binary PGM (`P5`) reading and writing.
//!
//! 16-bit maps use maxval 65535 with big-endian samples; 8-bit maps use
//! maxval 255.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;

pub fn encode_pgm16(grid: &Grid<u16>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", grid.width(), grid.height()).into_bytes();
    out.reserve(grid.data().len() * 2);
    for v in grid.data() {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

pub fn encode_pgm8(grid: &Grid<u8>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", grid.width(), grid.height()).into_bytes();
    out.extend_from_slice(grid.data());
    out
}

pub fn write_pgm16(path: impl AsRef<Path>, grid: &Grid<u16>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_pgm16(grid))?;
    Ok(())
}

pub fn write_pgm8(path: impl AsRef<Path>, grid: &Grid<u8>) -> Result<()> {
    fs::write(path, encode_pgm8(grid))?;
    Ok(())
}

/// Decodes a `P5` image of either sample width into 16-bit values.
pub fn decode_pgm(bytes: &[u8]) -> Result<Grid<u16>> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        fields.push(&bytes[start..pos]);
    }
    if fields[0] != b"P5" {
        return Err(Error::Format("not a binary PGM (P5) file".into()));
    }
    let num = |f: &[u8]| -> Result<usize> {
        std::str::from_utf8(f)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("bad PGM header field {:?}", String::from_utf8_lossy(f))))
    };
    let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("PGM maxval {maxval} out of range")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let sample = if maxval > 255 { 2 } else { 1 };
    let raster = bytes
        .get(pos..)
        .ok_or_else(|| Error::Format("missing PGM raster".into()))?;
    if raster.len() != width * height * sample {
        return Err(Error::Format(format!(
            "PGM raster has {} bytes, expected {} for {width}x{height}",
            raster.len(),
            width * height * sample
        )));
    }
    let data = if sample == 2 {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        raster.iter().map(|&v| v as u16).collect()
    };
    Grid::new(height, width, data)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Grid<u16>> {
    let path = path.as_ref();
    let bytes = fs::read(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    decode_pgm(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixteen_bit_is_big_endian() {
        let g = Grid::new(1, 2, vec![0x0102u16, 0xfffe]).unwrap();
        let bytes = encode_pgm16(&g);
        assert!(bytes.starts_with(b"P5\n2 1\n65535\n"));
        assert_eq!(&bytes[bytes.len() - 4..], &[0x01, 0x02, 0xff, 0xfe]);
        assert_eq!(decode_pgm(&bytes).unwrap(), g);
    }

    #[test]
    fn eight_bit_and_comments() {
        let mut bytes = b"P5\n# made by hand\n3 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 128, 255]);
        let g = decode_pgm(&bytes).unwrap();
        assert_eq!(g.data(), &[0, 128, 255]);
    }

    #[test]
    fn rejects_truncated() {
        let g = Grid::new(2, 2, vec![1u16, 2, 3, 4]).unwrap();
        let mut bytes = encode_pgm16(&g);
        bytes.pop();
        assert!(decode_pgm(&bytes).is_err());
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
    }
}
