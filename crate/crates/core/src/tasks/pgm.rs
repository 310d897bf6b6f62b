//! Binary PGM (P5) with 8-bit samples.

use std::path::Path;

use crate::error::{Error, Result};

/// Reads an 8-bit P5 file, returning `(width, height, pixels)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes).map_err(|msg| Error::Data {
        path: path.to_path_buf(),
        msg,
    })
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<u8>), String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    if magic != "P5" {
        return Err(format!("not a binary PGM (magic `{magic}`)"));
    }
    let mut num = |what: &str| -> std::result::Result<usize, String> {
        let t = token()?;
        t.parse().map_err(|_| format!("bad {what} `{t}`"))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval != 255 {
        return Err(format!("maxval {maxval} unsupported (need 255)"));
    }
    // exactly one whitespace byte separates the header from the raster
    let data_start = pos + 1;
    let need = width * height;
    if bytes.len() < data_start + need {
        return Err(format!(
            "raster has {} bytes, expected {need}",
            bytes.len().saturating_sub(data_start)
        ));
    }
    Ok((width, height, bytes[data_start..data_start + need].to_vec()))
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::contract("write_pgm", "pixel count does not match size"));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_header_with_comment() {
        let mut b = b"P5\n# made by hand\n2 2\n255\n".to_vec();
        b.extend([0, 64, 128, 255]);
        assert_eq!(parse_pgm(&b).unwrap(), (2, 2, vec![0, 64, 128, 255]));
    }

    #[test]
    fn rejects_bad_files() {
        assert!(parse_pgm(b"P2\n2 2\n255\n0 0 0 0").is_err());
        assert!(parse_pgm(b"P5\n2 2\n65535\n").is_err());
        assert!(parse_pgm(b"P5\n2 2\n255\n\x01\x02").is_err());
        assert!(parse_pgm(b"P5\n2").is_err());
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        let px: Vec<u8> = (0..12).map(|v| v * 20).collect();
        write_pgm(&p, 4, 3, &px).unwrap();
        assert_eq!(read_pgm(&p).unwrap(), (4, 3, px));
    }
}
