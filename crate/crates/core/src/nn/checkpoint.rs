//! Checkpoint file: magic line, one `name d0xd1x...` header line per tensor,
//! `END`, then the tensors as little-endian f32 in header order.

use std::io::{BufRead, Write};

use super::{Param, Real};
use crate::error::{LaueError, Result};

pub const MAGIC: &str = "LAUERL-CHECKPOINT v1";

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        Self { name: name.into(), shape, data }
    }
}

pub fn from_params<T: Real>(params: &[&Param<T>]) -> Vec<NamedTensor> {
    params
        .iter()
        .map(|p| NamedTensor::new(p.name.clone(), p.shape.clone(), p.value.iter().map(|v| v.f64() as f32).collect()))
        .collect()
}

/// Copies tensors into parameters with the same names; every parameter must be present.
pub fn load_params<T: Real>(params: Vec<&mut Param<T>>, tensors: &[NamedTensor]) -> Result<()> {
    for p in params {
        let t = tensors
            .iter()
            .find(|t| t.name == p.name)
            .ok_or_else(|| LaueError::Checkpoint(format!("missing tensor {}", p.name)))?;
        if t.shape != p.shape {
            return Err(LaueError::Checkpoint(format!("{}: shape {:?} != {:?}", p.name, t.shape, p.shape)));
        }
        for (d, &s) in p.value.iter_mut().zip(&t.data) {
            *d = T::of(s as f64);
        }
    }
    Ok(())
}

pub fn write_checkpoint<W: Write>(mut w: W, tensors: &[NamedTensor]) -> Result<()> {
    writeln!(w, "{MAGIC}")?;
    for t in tensors {
        if t.name.is_empty() || t.name.contains(char::is_whitespace) {
            return Err(LaueError::Checkpoint(format!("invalid tensor name {:?}", t.name)));
        }
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(LaueError::Checkpoint(format!("{}: data does not match shape", t.name)));
        }
        let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
        writeln!(w, "{} {}", t.name, dims.join("x"))?;
    }
    writeln!(w, "END")?;
    for t in tensors {
        let mut buf = Vec::with_capacity(t.data.len() * 4);
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(mut r: R) -> Result<Vec<NamedTensor>> {
    let fmt = |offset: usize, reason: String| LaueError::Format { format: "checkpoint", offset, reason };
    let mut offset = 0;
    let mut line = String::new();
    let mut read_line = |line: &mut String, offset: &mut usize| -> Result<()> {
        line.clear();
        let n = r.read_line(line).map_err(|e| fmt(*offset, e.to_string()))?;
        if n == 0 {
            return Err(fmt(*offset, "unexpected end of header".into()));
        }
        *offset += n;
        Ok(())
    };
    read_line(&mut line, &mut offset)?;
    if line.trim_end() != MAGIC {
        return Err(fmt(0, format!("bad magic {:?}", line.trim_end())));
    }
    let mut headers = Vec::new();
    loop {
        let start = offset;
        read_line(&mut line, &mut offset)?;
        let l = line.trim_end();
        if l == "END" {
            break;
        }
        let (name, dims) = l.split_once(' ').ok_or_else(|| fmt(start, format!("bad header line {l:?}")))?;
        let shape = dims
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| fmt(start, format!("bad shape {dims:?}: {e}")))?;
        headers.push((name.to_string(), shape));
    }
    drop(read_line);
    let mut out = Vec::with_capacity(headers.len());
    for (name, shape) in headers {
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes).map_err(|_| fmt(offset, format!("truncated payload for {name}")))?;
        offset += bytes.len();
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        out.push(NamedTensor { name, shape, data });
    }
    Ok(out)
}
