//! Netpbm greymaps: P2 (ASCII) and P5 (binary, 8 or 16 bit) in, 16-bit P5 out.

use std::path::Path;

use crate::detect::ObjectMask;
use crate::error::{Error, Result};
use crate::fieldgen::FieldStack;
use crate::imaging::ImageMap;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Greymap {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// Row-major samples.
    pub samples: Vec<u16>,
}

/// Largest image accepted by the decoder, in pixels.
pub const MAX_PIXELS: usize = 1 << 26;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn line(&self) -> usize {
        1 + self.bytes[..self.pos.min(self.bytes.len())]
            .iter()
            .filter(|&&b| b == b'\n')
            .count()
    }

    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u64> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(self.line(), format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(self.line(), format!("{what} out of range")))
    }
}

/// Decode a P2 or P5 greymap.
pub fn decode(bytes: &[u8]) -> Result<Greymap> {
    if bytes.len() < 2 || bytes[0] != b'P' || !(bytes[1] == b'2' || bytes[1] == b'5') {
        return Err(Error::parse(1, "not a P2 or P5 greymap"));
    }
    let binary = bytes[1] == b'5';
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")? as usize;
    let height = cur.number("height")? as usize;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::parse(cur.line(), "zero image dimension"));
    }
    if width.checked_mul(height).is_none_or(|n| n > MAX_PIXELS) {
        return Err(Error::parse(cur.line(), "image too large"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::parse(cur.line(), format!("maxval {maxval} outside 1..=65535")));
    }
    let n = width * height;
    let mut samples = Vec::with_capacity(n);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
            return Err(Error::parse(cur.line(), "missing raster"));
        }
        let data = &bytes[cur.pos + 1..];
        let wide = maxval > 255;
        let need = if wide { 2 * n } else { n };
        if data.len() < need {
            return Err(Error::parse(cur.line(), format!("raster has {} bytes, need {need}", data.len())));
        }
        for i in 0..n {
            let v = if wide {
                u16::from_be_bytes([data[2 * i], data[2 * i + 1]])
            } else {
                data[i] as u16
            };
            samples.push(v);
        }
    } else {
        for _ in 0..n {
            samples.push(cur.number("sample")? as u16);
        }
    }
    if let Some(bad) = samples.iter().find(|&&v| v as u64 > maxval) {
        return Err(Error::parse(cur.line(), format!("sample {bad} exceeds maxval {maxval}")));
    }
    Ok(Greymap {
        width,
        height,
        maxval: maxval as u16,
        samples,
    })
}

/// Encode as binary P5; 16-bit samples when `maxval > 255`.
pub fn encode(map: &Greymap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", map.width, map.height, map.maxval).into_bytes();
    if map.maxval > 255 {
        for v in &map.samples {
            out.extend_from_slice(&v.to_be_bytes());
        }
    } else {
        out.extend(map.samples.iter().map(|&v| v as u8));
    }
    out
}

/// Transmission mask from a greymap, samples divided by maxval.
pub fn mask_from_greymap(map: &Greymap) -> Result<ObjectMask> {
    let values = map.samples.iter().map(|&v| v as f64 / map.maxval as f64).collect();
    ObjectMask::new(map.width, map.height, values)
}

pub fn read_mask(path: &Path) -> Result<ObjectMask> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    mask_from_greymap(&decode(&bytes)?)
}

/// Min-max scale `values` to 16 bits; non-finite or `skip` entries map to 0.
pub fn scale_to_u16(values: &[f64], skip: &[bool]) -> Vec<u16> {
    let used = || {
        values
            .iter()
            .zip(skip)
            .filter(|(v, s)| v.is_finite() && !**s)
            .map(|(v, _)| *v)
    };
    let lo = used().fold(f64::INFINITY, f64::min);
    let hi = used().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .zip(skip)
        .map(|(&v, &s)| {
            if s || !v.is_finite() || !(hi > lo) {
                0
            } else {
                ((v - lo) / (hi - lo) * 65535.0).round() as u16
            }
        })
        .collect()
}

pub fn image_greymap(image: &ImageMap) -> Greymap {
    Greymap {
        width: image.nx,
        height: image.ny,
        maxval: 65535,
        samples: scale_to_u16(&image.values, &image.starved),
    }
}

/// Intensity frames `0..count` of a stack as `frame_00000.pgm`, ... in `dir`.
pub fn dump_frames(stack: &FieldStack, count: usize, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg = stack.config();
    let mut paths = Vec::new();
    for t in 0..count.min(stack.frames()) {
        let values: Vec<f64> = (0..cfg.pixels()).map(|p| stack.intensity(t, p)).collect();
        let map = Greymap {
            width: cfg.nx,
            height: cfg.ny,
            maxval: 65535,
            samples: scale_to_u16(&values, &vec![false; values.len()]),
        };
        let path = dir.join(format!("frame_{t:05}.pgm"));
        std::fs::write(&path, encode(&map)).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}
