//! Plain-text network checkpoints.
//!
//! ```text
//! cmarl-mlp 1
//! layers <L>
//! dense <inputs> <outputs> <relu|linear>      (L lines)
//! <row-major weights of layer 0, one matrix row per line>
//! <bias of layer 0 on one line>
//! ...                                          (repeated per layer)
//! ```
//!
//! Values are written in shortest round-trip scientific notation, so a
//! save/load cycle reproduces every parameter bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use super::mlp::{Activation, Mlp};
use crate::error::{Error, Result};

pub const MAGIC: &str = "cmarl-mlp";
pub const VERSION: u32 = 1;

pub fn to_string(net: &Mlp) -> String {
    let mut out = String::new();
    writeln!(out, "{MAGIC} {VERSION}").unwrap();
    writeln!(out, "layers {}", net.layers().len()).unwrap();
    for layer in net.layers() {
        writeln!(out, "dense {} {} {}", layer.inputs, layer.outputs, layer.activation.name()).unwrap();
    }
    for (k, layer) in net.layers().iter().enumerate() {
        for row in net.weights(k).chunks_exact(layer.inputs) {
            write_row(&mut out, row);
        }
        write_row(&mut out, net.bias(k));
    }
    out
}

fn write_row(out: &mut String, row: &[f64]) {
    for (i, v) in row.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        write!(out, "{v:e}").unwrap();
    }
    out.push('\n');
}

pub fn from_str(text: &str) -> std::result::Result<Mlp, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty checkpoint")?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(format!("missing `{MAGIC}` header"));
    }
    let version: u32 = parts.next().and_then(|v| v.parse().ok()).ok_or("missing version")?;
    if version != VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let count: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("layers "))
        .and_then(|n| n.trim().parse().ok())
        .ok_or("missing layer count")?;
    let mut shapes = Vec::with_capacity(count);
    for k in 0..count {
        let line = lines.next().ok_or(format!("missing shape of layer {k}"))?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 || f[0] != "dense" {
            return Err(format!("malformed shape line `{line}`"));
        }
        let inputs = f[1].parse().map_err(|_| format!("bad width in `{line}`"))?;
        let outputs = f[2].parse().map_err(|_| format!("bad width in `{line}`"))?;
        let act = Activation::parse(f[3]).ok_or(format!("unknown activation `{}`", f[3]))?;
        shapes.push((inputs, outputs, act));
    }
    let mut params = Vec::new();
    for &(_, outputs, _) in &shapes {
        for _ in 0..=outputs {
            let line = lines.next().ok_or("truncated parameter block")?;
            let row = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| format!("bad number `{t}`")))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            params.extend(row);
        }
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err("trailing data after parameters".into());
    }
    Mlp::from_shapes(&shapes, Some(params)).map_err(|e| e.to_string())
}

pub fn save(net: &Mlp, path: &Path) -> Result<()> {
    std::fs::write(path, to_string(net)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Mlp> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text).map_err(|message| Error::Parse { path: path.to_path_buf(), message })
}
