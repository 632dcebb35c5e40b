//! Binary PGM (P5) read/write and baseline grayscale TIFF read.

use std::io::{Read, Write};
use std::path::Path;

use super::RawFrame;
use crate::error::{LaueError, Result};

fn pgm_err(offset: usize, reason: impl Into<String>) -> LaueError {
    LaueError::Format { format: "pgm", offset, reason: reason.into() }
}

/// Reads one header token, skipping whitespace and `#` comments. Returns the
/// token and the offset just past it.
fn token(bytes: &[u8], mut pos: usize) -> Result<(u32, usize)> {
    loop {
        match bytes.get(pos) {
            Some(b'#') => {
                while let Some(&c) = bytes.get(pos) {
                    pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            }
            Some(c) if c.is_ascii_whitespace() => pos += 1,
            Some(_) => break,
            None => return Err(pgm_err(pos, "truncated header")),
        }
    }
    let start = pos;
    while bytes.get(pos).is_some_and(|c| c.is_ascii_digit()) {
        pos += 1;
    }
    if pos == start {
        return Err(pgm_err(start, "expected a decimal number"));
    }
    let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
    let v = text.parse::<u32>().map_err(|_| pgm_err(start, "number out of range"))?;
    Ok((v, pos))
}

pub fn parse_pgm(bytes: &[u8]) -> Result<RawFrame> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(pgm_err(0, "missing P5 magic"));
    }
    let (width, pos) = token(bytes, 2)?;
    let (height, pos) = token(bytes, pos)?;
    let (maxval, pos) = token(bytes, pos)?;
    if width == 0 || height == 0 {
        return Err(pgm_err(pos, "zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(pgm_err(pos, format!("maxval {maxval} outside 1..=65535")));
    }
    if !bytes.get(pos).is_some_and(|c| c.is_ascii_whitespace()) {
        return Err(pgm_err(pos, "expected one whitespace byte after maxval"));
    }
    let start = pos + 1;
    let n = width as usize * height as usize;
    let wide = maxval > 255;
    let need = n * if wide { 2 } else { 1 };
    let payload = &bytes[start.min(bytes.len())..];
    if payload.len() < need {
        return Err(pgm_err(start + payload.len(), format!("truncated payload: {} of {need} bytes", payload.len())));
    }
    let data: Vec<u16> = if wide {
        payload[..need].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        payload[..need].iter().map(|&b| b as u16).collect()
    };
    if let Some(i) = data.iter().position(|&v| v as u32 > maxval) {
        return Err(pgm_err(start + i * if wide { 2 } else { 1 }, "sample exceeds maxval"));
    }
    RawFrame::new(width as usize, height as usize, data)
}

/// 16-bit P5 with maxval 65535.
pub fn write_pgm<W: Write>(mut w: W, frame: &RawFrame) -> Result<()> {
    write!(w, "P5\n{} {}\n65535\n", frame.width, frame.height)?;
    let mut buf = Vec::with_capacity(frame.data.len() * 2);
    frame.data.iter().for_each(|v| buf.extend_from_slice(&v.to_be_bytes()));
    w.write_all(&buf)?;
    Ok(())
}

/// 8-bit P5.
pub fn write_pgm8<W: Write>(mut w: W, width: usize, height: usize, data: &[u8]) -> Result<()> {
    write!(w, "P5\n{width} {height}\n255\n")?;
    w.write_all(data)?;
    Ok(())
}

pub fn parse_tiff(bytes: &[u8]) -> Result<RawFrame> {
    use tiff::decoder::{Decoder, DecodingResult};
    use tiff::ColorType;
    let err = |reason: String| LaueError::Format { format: "tiff", offset: 0, reason };
    let mut dec = Decoder::new(std::io::Cursor::new(bytes)).map_err(|e| err(e.to_string()))?;
    let (w, h) = dec.dimensions().map_err(|e| err(e.to_string()))?;
    match dec.colortype().map_err(|e| err(e.to_string()))? {
        ColorType::Gray(8) | ColorType::Gray(16) => {}
        other => return Err(err(format!("unsupported color type {other:?}"))),
    }
    let data = match dec.read_image().map_err(|e| err(e.to_string()))? {
        DecodingResult::U8(v) => v.into_iter().map(u16::from).collect(),
        DecodingResult::U16(v) => v,
        _ => return Err(err("unsupported sample format".into())),
    };
    RawFrame::new(w as usize, h as usize, data)
}

/// Reads `.pgm` or `.tif`/`.tiff`, chosen by the leading bytes.
pub fn read_frame(path: &Path) -> Result<RawFrame> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    match bytes.get(..2) {
        Some(b"P5") => parse_pgm(&bytes),
        Some(b"II") | Some(b"MM") => parse_tiff(&bytes),
        _ => Err(pgm_err(0, "neither a P5 PGM nor a TIFF file")),
    }
}

pub fn write_frame(frame: &RawFrame, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_pgm(&mut w, frame)?;
    w.flush()?;
    Ok(())
}
