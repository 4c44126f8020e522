use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::PixelClass;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Writes a `[3, H, W]` image in `[0, 1]` as binary PPM (P6).
pub fn write_ppm<W: Write>(image: &Tensor, mut w: W) -> Result<()> {
    let (height, width) = match *image.shape() {
        [3, h, w] => (h, w),
        ref s => return Err(Error::dim("write_ppm", format!("expected [3,H,W], got {s:?}"))),
    };
    let plane = width * height;
    let data = image.data();
    let mut buf = format!("P6\n{width} {height}\n255\n").into_bytes();
    buf.reserve(3 * plane);
    for p in 0..plane {
        for c in 0..3 {
            buf.push((data[c * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    w.write_all(&buf).map_err(|e| Error::io("<ppm stream>", e))
}

pub fn save_ppm(image: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_ppm(image, BufWriter::new(f))
}

fn header_token(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    // skip whitespace and comments
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            _ => break,
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Config("malformed PPM header".into()))
}

/// Reads a binary PPM (P6, maxval ≤ 255) into a `[3, H, W]` tensor in `[0, 1]`.
pub fn read_ppm<R: Read>(mut r: R) -> Result<Tensor> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io("<ppm stream>", e))?;
    if !bytes.starts_with(b"P6") {
        return Err(Error::Config("not a binary PPM (missing P6 magic)".into()));
    }
    let mut pos = 2;
    let width = header_token(&bytes, &mut pos)?;
    let height = header_token(&bytes, &mut pos)?;
    let maxval = header_token(&bytes, &mut pos)?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 255 {
        return Err(Error::Config(format!("unsupported PPM {width}x{height} maxval {maxval}")));
    }
    pos += 1;
    let plane = width * height;
    let body = bytes
        .get(pos..pos + 3 * plane)
        .ok_or_else(|| Error::Config("truncated PPM pixel data".into()))?;
    let mut data = vec![0.0; 3 * plane];
    for p in 0..plane {
        for c in 0..3 {
            data[c * plane + p] = body[3 * p + c] as f64 / maxval as f64;
        }
    }
    Tensor::new(vec![3, height, width], data)
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_ppm(BufReader::new(f))
}

/// Class mask as CSV, one image row per line.
pub fn write_mask_csv<W: Write>(mask: &[PixelClass], width: usize, mut w: W) -> Result<()> {
    let mut s = String::new();
    for row in mask.chunks(width) {
        let line: Vec<String> = row.iter().map(|&c| (c as u8).to_string()).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    w.write_all(s.as_bytes()).map_err(|e| Error::io("<mask stream>", e))
}

pub fn save_mask_csv(mask: &[PixelClass], width: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_mask_csv(mask, width, BufWriter::new(f))
}
