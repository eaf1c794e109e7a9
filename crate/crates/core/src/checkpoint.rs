//! Binary checkpoint formats.
//!
//! Float policy (`ROCKPOL1`), all little-endian:
//!
//! ```text
//! magic "ROCKPOL1"
//! u32 layer count
//! per layer: u32 rows, u32 cols, f64 weights[rows*cols] (row-major), f64 bias[rows]
//! u8 hidden activation id, u8 output activation id
//! ```
//!
//! Quantized policy (`ROCKQNT1`):
//!
//! ```text
//! magic "ROCKQNT1"
//! u32 layer count
//! per layer: u32 rows, u32 cols, i8 weights[rows*cols], i32 bias[rows]
//! u8 hidden activation id, u8 output activation id
//! per layer: f64 weight scale, f64 input scale, i32 input zero point,
//!            f64 pre-activation scale, f64 output scale, i32 output zero point
//! ```
//!
//! A text sidecar `<file>.meta` records the SHA-256 of the training config.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};
use crate::quant::{QuantLayer, QuantizedPolicy};

pub const POLICY_MAGIC: &[u8; 8] = b"ROCKPOL1";
pub const QUANT_MAGIC: &[u8; 8] = b"ROCKQNT1";

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn shape(&mut self) -> Result<(usize, usize)> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        if rows == 0 || cols == 0 || rows.saturating_mul(cols) > self.buf.len() {
            return Err(Error::Checkpoint(format!("implausible layer shape {rows}x{cols}")));
        }
        Ok((rows, cols))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn check_magic(r: &mut Reader, magic: &[u8; 8]) -> Result<()> {
    let got = r.take(8)?;
    if got != magic {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(got),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

pub fn encode_policy(net: &Mlp) -> Vec<u8> {
    let mut out = POLICY_MAGIC.to_vec();
    out.extend((net.layer_count() as u32).to_le_bytes());
    for l in 0..net.layer_count() {
        out.extend((net.widths()[l + 1] as u32).to_le_bytes());
        out.extend((net.widths()[l] as u32).to_le_bytes());
        for v in net.weights(l).iter().chain(net.bias(l)) {
            out.extend(v.to_le_bytes());
        }
    }
    out.push(net.hidden_activation().id());
    out.push(net.output_activation().id());
    out
}

pub fn decode_policy(bytes: &[u8]) -> Result<Mlp> {
    let mut r = Reader { buf: bytes, pos: 0 };
    check_magic(&mut r, POLICY_MAGIC)?;
    let count = r.u32()? as usize;
    if count == 0 {
        return Err(Error::Checkpoint("no layers".into()));
    }
    let mut widths = Vec::new();
    let mut layers = Vec::new();
    for l in 0..count {
        let (rows, cols) = r.shape()?;
        if l == 0 {
            widths.push(cols);
        } else if widths[l] != cols {
            return Err(Error::Checkpoint(format!("layer {l} input width {cols} does not chain")));
        }
        widths.push(rows);
        let w = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let b = (0..rows).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        layers.push((w, b));
    }
    let hidden = Activation::from_id(r.u8()?)?;
    let output = Activation::from_id(r.u8()?)?;
    r.finish()?;
    let net = Mlp::from_layers(&widths, &layers, hidden, output)?;
    if !net.is_finite() {
        return Err(Error::CorruptedModel("checkpoint holds non-finite parameters".into()));
    }
    Ok(net)
}

pub fn encode_quantized(q: &QuantizedPolicy) -> Vec<u8> {
    let layers = q.layers();
    let mut out = QUANT_MAGIC.to_vec();
    out.extend((layers.len() as u32).to_le_bytes());
    for l in layers {
        out.extend((l.rows as u32).to_le_bytes());
        out.extend((l.cols as u32).to_le_bytes());
        out.extend(l.weights.iter().map(|&w| w as u8));
        for b in &l.bias {
            out.extend(b.to_le_bytes());
        }
    }
    // A single-layer network has no hidden activation; ELU is recorded.
    let hidden = if layers.len() > 1 { layers[0].activation } else { Activation::Elu };
    let output = layers.last().map_or(Activation::Tanh, |l| l.activation);
    out.push(hidden.id());
    out.push(output.id());
    for l in layers {
        out.extend(l.weight_scale.to_le_bytes());
        out.extend(l.input_scale.to_le_bytes());
        out.extend(l.input_zero.to_le_bytes());
        out.extend(l.pre_scale.to_le_bytes());
        out.extend(l.output_scale.to_le_bytes());
        out.extend(l.output_zero.to_le_bytes());
    }
    out
}

pub fn decode_quantized(bytes: &[u8]) -> Result<QuantizedPolicy> {
    let mut r = Reader { buf: bytes, pos: 0 };
    check_magic(&mut r, QUANT_MAGIC)?;
    let count = r.u32()? as usize;
    if count == 0 {
        return Err(Error::Checkpoint("no layers".into()));
    }
    let mut raw = Vec::new();
    for _ in 0..count {
        let (rows, cols) = r.shape()?;
        let w: Vec<i8> = r.take(rows * cols)?.iter().map(|&b| b as i8).collect();
        let b = (0..rows).map(|_| r.i32()).collect::<Result<Vec<_>>>()?;
        raw.push((rows, cols, w, b));
    }
    let hidden = Activation::from_id(r.u8()?)?;
    let output = Activation::from_id(r.u8()?)?;
    let mut layers = Vec::new();
    for (i, (rows, cols, w, b)) in raw.into_iter().enumerate() {
        let act = if i + 1 == count { output } else { hidden };
        let (ws, is, iz, ps, os, oz) = (r.f64()?, r.f64()?, r.i32()?, r.f64()?, r.f64()?, r.i32()?);
        layers.push(QuantLayer::new(rows, cols, w, b, ws, is, iz, ps, os, oz, act)?);
    }
    r.finish()?;
    QuantizedPolicy::from_layers(layers)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn save_policy(net: &Mlp, path: &Path) -> Result<()> {
    write_file(path, &encode_policy(net))
}

pub fn load_policy(path: &Path) -> Result<Mlp> {
    decode_policy(&fs::read(path)?)
}

pub fn save_quantized(q: &QuantizedPolicy, path: &Path) -> Result<()> {
    write_file(path, &encode_quantized(q))
}

pub fn load_quantized(path: &Path) -> Result<QuantizedPolicy> {
    decode_quantized(&fs::read(path)?)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

pub fn config_hash(config_text: &str) -> String {
    Sha256::digest(config_text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `<path>.meta` with the config hash and any extra `key = value` lines.
pub fn write_sidecar(path: &Path, config_text: &str, extra: &[(&str, String)]) -> Result<()> {
    let mut text = format!("config_sha256 = {}\n", config_hash(config_text));
    for (k, v) in extra {
        text.push_str(&format!("{k} = {v}\n"));
    }
    write_file(&sidecar_path(path), text.as_bytes())
}

/// Reads the config hash recorded in a sidecar.
pub fn read_sidecar_hash(path: &Path) -> Result<String> {
    let text = fs::read_to_string(sidecar_path(path))?;
    text.lines()
        .find_map(|l| l.strip_prefix("config_sha256 = ").map(str::to_owned))
        .ok_or_else(|| Error::Checkpoint("sidecar has no config hash".into()))
}
