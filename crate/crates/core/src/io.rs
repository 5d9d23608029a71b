//! Environment files.
//!
//! One header line `#rwre-env {json}` carrying dimension, radius, spec, seed
//! and encoding, then the per-site table `stay, axis_1..axis_d` in row-major
//! site order, either as CSV (shortest round-trip decimals) or as raw
//! little-endian `f64`. Both round-trip bit for bit.

use crate::env::{EnvSpec, Environment, SiteKernel};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

pub const ENV_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "#rwre-env ";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Encoding {
    Csv,
    Binary,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    dim: usize,
    radius: i64,
    spec: EnvSpec,
    seed: u64,
    laziness_removed: bool,
    encoding: Encoding,
}

pub fn write_env(env: &Environment, encoding: Encoding, mut out: impl Write) -> Result<()> {
    let dim = env.lattice_box().dim;
    let header = Header {
        version: ENV_FORMAT_VERSION,
        dim,
        radius: env.radius(),
        spec: env.spec().clone(),
        seed: env.seed(),
        laziness_removed: env.laziness_removed(),
        encoding,
    };
    writeln!(out, "{MAGIC}{}", serde_json::to_string(&header)?)?;
    match encoding {
        Encoding::Csv => {
            let mut line = String::new();
            for k in env.kernels() {
                line.clear();
                line.push_str(&format!("{:?}", k.stay));
                for w in &k.axis[..dim] {
                    line.push_str(&format!(",{w:?}"));
                }
                writeln!(out, "{line}")?;
            }
        }
        Encoding::Binary => {
            let mut buf = Vec::with_capacity(env.kernels().len() * (dim + 1) * 8);
            for k in env.kernels() {
                buf.extend_from_slice(&k.stay.to_le_bytes());
                for w in &k.axis[..dim] {
                    buf.extend_from_slice(&w.to_le_bytes());
                }
            }
            out.write_all(&buf)?;
        }
    }
    Ok(())
}

pub fn read_env(mut input: impl BufRead) -> Result<Environment> {
    let mut first = String::new();
    input.read_line(&mut first)?;
    let json = first
        .trim_end_matches(['\n', '\r'])
        .strip_prefix(MAGIC)
        .ok_or_else(|| Error::Format("missing #rwre-env header".into()))?;
    let h: Header = serde_json::from_str(json)?;
    if h.version != ENV_FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {}", h.version)));
    }
    h.spec.validate(h.dim)?;
    if h.radius < 0 {
        return Err(Error::Format(format!("negative radius {}", h.radius)));
    }
    let count = (2 * h.radius as usize + 1).pow(h.dim as u32);
    let mut kernels = Vec::with_capacity(count);
    match h.encoding {
        Encoding::Csv => {
            for (i, line) in input.lines().enumerate() {
                let line = line?;
                if line.is_empty() {
                    continue;
                }
                let vals: Vec<f64> = line
                    .split(',')
                    .map(|f| f.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Format(format!("row {}: {e}", i + 1)))?;
                if vals.len() != h.dim + 1 {
                    return Err(Error::Format(format!("row {} has {} fields, expected {}", i + 1, vals.len(), h.dim + 1)));
                }
                kernels.push(SiteKernel::new(vals[0], &vals[1..]));
            }
        }
        Encoding::Binary => {
            let mut buf = Vec::new();
            input.read_to_end(&mut buf)?;
            let width = (h.dim + 1) * 8;
            if buf.len() != count * width {
                return Err(Error::Format(format!("binary table has {} bytes, expected {}", buf.len(), count * width)));
            }
            for row in buf.chunks_exact(width) {
                let v: Vec<f64> = row.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
                kernels.push(SiteKernel::new(v[0], &v[1..]));
            }
        }
    }
    if kernels.len() != count {
        return Err(Error::Format(format!("table has {} rows, expected {count}", kernels.len())));
    }
    Environment::from_parts(h.dim, h.spec, h.seed, h.laziness_removed, h.radius, kernels)
}
