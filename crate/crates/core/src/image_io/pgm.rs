//! Netpbm graymap (P2 ASCII / P5 binary), 8-bit only.

use std::fs;
use std::path::Path;

use super::GrayImage;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmEncoding {
    /// `P2`
    Ascii,
    /// `P5`
    Binary,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    /// Skips whitespace and `#` comments that run to end of line.
    fn skip_separators(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn next_uint(&mut self, what: &str) -> Result<u32> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(if self.pos >= self.bytes.len() {
                Error::Decode(format!("truncated input while reading {what}"))
            } else {
                Error::Decode(format!(
                    "expected {what}, found byte 0x{:02x} at offset {}",
                    self.bytes[self.pos], self.pos
                ))
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse::<u32>()
            .map_err(|e| Error::Decode(format!("{what}: {e}")))
    }
}

pub fn read_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::UnsupportedFormat("missing netpbm magic".into()));
    }
    let encoding = match bytes[1] {
        b'2' => PgmEncoding::Ascii,
        b'5' => PgmEncoding::Binary,
        other => return Err(Error::UnsupportedFormat(format!("magic P{} is not a graymap", other as char))),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.next_uint("width")? as usize;
    let height = cur.next_uint("height")? as usize;
    let maxval = cur.next_uint("maxval")?;
    if maxval > 255 {
        return Err(Error::UnsupportedDepth(maxval));
    }
    if maxval == 0 || width == 0 || height == 0 {
        return Err(Error::Decode(format!("degenerate header {width}x{height} maxval {maxval}")));
    }
    let n = width * height;
    let mut raw = Vec::with_capacity(n);
    match encoding {
        PgmEncoding::Binary => {
            // exactly one whitespace byte separates the header from the raster
            match bytes.get(cur.pos) {
                Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
                Some(_) => return Err(Error::Decode("missing separator after maxval".into())),
                None => return Err(Error::Decode("truncated before raster".into())),
            }
            let payload = &bytes[cur.pos..];
            if payload.len() < n {
                return Err(Error::Decode(format!("truncated raster: expected {n} bytes, found {}", payload.len())));
            }
            raw.extend(payload[..n].iter().map(|&b| b as u32));
        }
        PgmEncoding::Ascii => {
            for i in 0..n {
                let v = cur.next_uint("sample").map_err(|e| match e {
                    Error::Decode(msg) => Error::Decode(format!("sample {i}: {msg}")),
                    e => e,
                })?;
                raw.push(v);
            }
        }
    }
    if let Some(&v) = raw.iter().find(|&&v| v > maxval) {
        return Err(Error::Decode(format!("sample {v} exceeds maxval {maxval}")));
    }
    let data = if maxval == 255 {
        raw.into_iter().map(f64::from).collect()
    } else {
        let scale = 255.0 / maxval as f64;
        raw.into_iter().map(|v| v as f64 * scale).collect()
    };
    GrayImage::new(height, width, data)
}

/// Encodes with maxval 255; samples are rounded and clamped to `0..=255`.
pub fn write_pgm(img: &GrayImage, encoding: PgmEncoding) -> Vec<u8> {
    let quantize = |v: f64| v.round().clamp(0.0, 255.0) as u8;
    let (h, w) = (img.height(), img.width());
    let mut out = Vec::with_capacity(h * w * 4 + 32);
    match encoding {
        PgmEncoding::Binary => {
            out.extend_from_slice(format!("P5\n{w} {h}\n255\n").as_bytes());
            out.extend(img.data().iter().map(|&v| quantize(v)));
        }
        PgmEncoding::Ascii => {
            out.extend_from_slice(format!("P2\n{w} {h}\n255\n").as_bytes());
            for row in img.data().chunks(w) {
                let line: Vec<String> = row.iter().map(|&v| quantize(v).to_string()).collect();
                out.extend_from_slice(line.join(" ").as_bytes());
                out.push(b'\n');
            }
        }
    }
    out
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let bytes = fs::read(path.as_ref())?;
    read_pgm(&bytes)
}

pub fn save_pgm(path: impl AsRef<Path>, img: &GrayImage, encoding: PgmEncoding) -> Result<()> {
    fs::write(path, write_pgm(img, encoding))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_binary_2x2() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255, 128, 64]);
        let img = read_pgm(&bytes).unwrap();
        assert_eq!((img.height(), img.width()), (2, 2));
        assert_eq!(img.data(), &[0.0, 255.0, 128.0, 64.0]);
    }

    #[test]
    fn decodes_ascii_single_pixel() {
        let img = read_pgm(b"P2\n1 1\n255\n0\n").unwrap();
        assert_eq!(img.data(), &[0.0]);
    }

    #[test]
    fn rejects_ppm() {
        let err = read_pgm(b"P6\n1 1\n255\n\x00\x00\x00").unwrap_err();
        assert!(matches!(err, Error::UnsupportedFormat(_)));
        assert!(matches!(read_pgm(b"GIF89a").unwrap_err(), Error::UnsupportedFormat(_)));
    }

    #[test]
    fn rejects_deep_maxval() {
        let err = read_pgm(b"P2\n1 1\n65535\n0\n").unwrap_err();
        assert!(matches!(err, Error::UnsupportedDepth(65535)));
    }

    #[test]
    fn truncated_payload() {
        let err = read_pgm(b"P5\n2 2\n255\n\x01\x02").unwrap_err();
        assert!(matches!(err, Error::Decode(_)));
        let err = read_pgm(b"P2\n2 2\n255\n1 2 3").unwrap_err();
        assert!(matches!(err, Error::Decode(_)));
        assert!(matches!(read_pgm(b"P5\n2").unwrap_err(), Error::Decode(_)));
    }

    #[test]
    fn header_comments_accepted() {
        let bytes = b"P2\n# made by hand\n3 1 # width height\n255\n# raster\n1 2 3\n";
        assert_eq!(read_pgm(bytes).unwrap().data(), &[1.0, 2.0, 3.0]);
        let mut p5 = b"P5 #c\n1 # one\n1\n255\n".to_vec();
        p5.push(7);
        assert_eq!(read_pgm(&p5).unwrap().data(), &[7.0]);
    }

    #[test]
    fn small_maxval_rescaled() {
        let img = read_pgm(b"P2\n3 1\n15\n0 5 15\n").unwrap();
        assert_eq!(img.data(), &[0.0, 85.0, 255.0]);
    }

    #[test]
    fn binary_whitespace_byte_in_raster() {
        // raster bytes that look like whitespace must not be skipped
        let mut bytes = b"P5\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(b"\n ");
        assert_eq!(read_pgm(&bytes).unwrap().data(), &[10.0, 32.0]);
    }

    #[test]
    fn cross_encoding_equality() {
        let img = GrayImage::from_fn(5, 7, |r, c| ((r * 37 + c * 11) % 256) as f64).unwrap();
        let a = read_pgm(&write_pgm(&img, PgmEncoding::Ascii)).unwrap();
        let b = read_pgm(&write_pgm(&img, PgmEncoding::Binary)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, img);
    }
}
