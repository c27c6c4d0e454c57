//! Binary artifact container shared by checkpoints, datasets and logs.
//!
//! Layout:
//!
//! ```text
//! SAFEDPA <kind> v1\n
//! <one-line JSON header>\n
//! repeat: u64 LE length, then `length` f64 LE values
//! ```
//!
//! The header records the section names and lengths, so readers validate
//! the payload before interpreting it. Nothing time-dependent is written:
//! the same inputs always produce the same bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::ensure;
use crate::tensor::{NetSpec, NetworkParams};
use crate::{Error, Result};

const MAGIC: &str = "SAFEDPA";
const VERSION: &str = "v1";

/// Decoded container: kind tag, JSON header and raw float sections.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: String,
    pub header: Value,
    pub sections: Vec<Vec<f64>>,
}

pub fn encode(kind: &str, header: &Value, sections: &[&[f64]]) -> Result<Vec<u8>> {
    ensure!(!kind.is_empty() && !kind.contains(char::is_whitespace), Contract, "bad artifact kind {kind:?}");
    let mut out = Vec::new();
    writeln!(out, "{MAGIC} {kind} {VERSION}")?;
    let line = serde_json::to_string(header).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(out, "{line}")?;
    for s in sections {
        out.extend_from_slice(&(s.len() as u64).to_le_bytes());
        for v in *s {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn take_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Format("truncated header".into()))?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end]).map_err(|e| Error::Format(e.to_string()))
}

pub fn decode(bytes: &[u8]) -> Result<Container> {
    let mut pos = 0;
    let first = take_line(bytes, &mut pos)?;
    let parts: Vec<&str> = first.split(' ').collect();
    ensure!(parts.len() == 3 && parts[0] == MAGIC, Format, "not a safedpa artifact");
    ensure!(parts[2] == VERSION, Format, "unsupported artifact version {}", parts[2]);
    let header: Value = serde_json::from_str(take_line(bytes, &mut pos)?).map_err(|e| Error::Format(e.to_string()))?;
    let mut sections = Vec::new();
    while pos < bytes.len() {
        ensure!(bytes.len() - pos >= 8, Format, "truncated section length");
        let n = u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap()) as usize;
        pos += 8;
        ensure!(n <= (bytes.len() - pos) / 8, Format, "section of {n} values overruns file");
        let sec = bytes[pos..pos + 8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        pos += 8 * n;
        sections.push(sec);
    }
    Ok(Container { kind: parts[1].to_string(), header, sections })
}

pub fn write_file(path: &Path, kind: &str, header: &Value, sections: &[&[f64]]) -> Result<()> {
    let bytes = encode(kind, header, sections)?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_file(path: &Path, kind: &str) -> Result<Container> {
    let c = decode(&fs::read(path)?)?;
    ensure!(c.kind == kind, Format, "{}: expected {kind} artifact, found {}", path.display(), c.kind);
    Ok(c)
}

/// Named network entry in a checkpoint header.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct NetEntry {
    name: String,
    spec: NetSpec,
    len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CkptHeader {
    role: String,
    seed: u64,
    created_by: String,
    nets: Vec<NetEntry>,
    arrays: Vec<ArrayEntry>,
    meta: Value,
}

/// A bundle of named networks and named float arrays (normalization
/// statistics, scales) stored as one `.ckpt` file.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub role: String,
    pub seed: u64,
    pub meta: Value,
    pub nets: Vec<(String, NetworkParams)>,
    pub arrays: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new(role: &str, seed: u64) -> Self {
        Self { role: role.to_string(), seed, meta: Value::Null, nets: Vec::new(), arrays: Vec::new() }
    }

    pub fn with_net(mut self, name: &str, p: &NetworkParams) -> Self {
        self.nets.push((name.to_string(), p.clone()));
        self
    }

    pub fn with_array(mut self, name: &str, v: &[f64]) -> Self {
        self.arrays.push((name.to_string(), v.to_vec()));
        self
    }

    pub fn net(&self, name: &str) -> Result<&NetworkParams> {
        self.nets
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p)
            .ok_or_else(|| Error::Format(format!("checkpoint has no network {name:?}")))
    }

    pub fn array(&self, name: &str) -> Result<&[f64]> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::Format(format!("checkpoint has no array {name:?}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = CkptHeader {
            role: self.role.clone(),
            seed: self.seed,
            created_by: concat!("safedpa ", env!("CARGO_PKG_VERSION")).to_string(),
            nets: self
                .nets
                .iter()
                .map(|(n, p)| NetEntry { name: n.clone(), spec: p.spec.clone(), len: p.theta.len() })
                .collect(),
            arrays: self.arrays.iter().map(|(n, v)| ArrayEntry { name: n.clone(), len: v.len() }).collect(),
            meta: self.meta.clone(),
        };
        let header = serde_json::to_value(header).map_err(|e| Error::Format(e.to_string()))?;
        let mut secs: Vec<&[f64]> = self.nets.iter().map(|(_, p)| p.theta.as_slice()).collect();
        secs.extend(self.arrays.iter().map(|(_, v)| v.as_slice()));
        encode("ckpt", &header, &secs)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = decode(bytes)?;
        ensure!(c.kind == "ckpt", Format, "expected ckpt artifact, found {}", c.kind);
        let h: CkptHeader = serde_json::from_value(c.header).map_err(|e| Error::Format(e.to_string()))?;
        ensure!(c.sections.len() == h.nets.len() + h.arrays.len(), Format, "checkpoint section count mismatch");
        let mut secs = c.sections.into_iter();
        let mut nets = Vec::new();
        for e in h.nets {
            let theta = secs.next().unwrap();
            ensure!(theta.len() == e.len, Format, "network {} length {} != header {}", e.name, theta.len(), e.len);
            nets.push((e.name, NetworkParams::new(e.spec, theta)?));
        }
        let mut arrays = Vec::new();
        for e in h.arrays {
            let v = secs.next().unwrap();
            ensure!(v.len() == e.len, Format, "array {} length mismatch", e.name);
            arrays.push((e.name, v));
        }
        Ok(Self { role: h.role, seed: h.seed, meta: h.meta, nets, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
