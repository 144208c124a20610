//! Binary checkpoint format.
//!
//! ```text
//! "TSD1" | u32 version | entry*
//! entry := u16 name_len | name (UTF-8) | u8 rank | u32 dim * rank | f64 * prod(dims)
//! ```
//!
//! All integers and floats are little-endian. Besides parameters, the bundle
//! dims (`dims`) and each network's layer layout (`<net>.spec`, one
//! `[kind, width, activation]` row per layer after an `[input, 0, 0]` row) are
//! stored as ordinary entries, as are batch-norm running statistics.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::bundle::ModelBundle;
use super::network::{Layer, Network};
use super::spec::{Activation, Dims, LayerSpec, NetworkSpec};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TSD1";
pub const VERSION: u32 = 1;

struct Entry {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn ckpt_err(field: &str, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn write_entry(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn encode_spec(spec: &NetworkSpec) -> (Vec<usize>, Vec<f64>) {
    let act = |a: Activation| match a {
        Activation::None => 0.0,
        Activation::Relu => 1.0,
    };
    let mut rows = vec![spec.input as f64, 0.0, 0.0];
    for layer in &spec.layers {
        rows.extend(match *layer {
            LayerSpec::Dense { out, activation } => [0.0, out as f64, act(activation)],
            LayerSpec::BatchNorm { activation } => [1.0, 0.0, act(activation)],
            LayerSpec::SoftmaxHead { classes } => [2.0, classes as f64, 0.0],
        });
    }
    (vec![spec.layers.len() + 1, 3], rows)
}

fn decode_spec(field: &str, e: &Entry) -> Result<NetworkSpec> {
    if e.shape.len() != 2 || e.shape[1] != 3 || e.shape[0] < 1 {
        return Err(ckpt_err(field, "malformed layer table"));
    }
    let as_usize = |v: f64| -> Result<usize> {
        if v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64 {
            Ok(v as usize)
        } else {
            Err(ckpt_err(field, format!("bad integer {v}")))
        }
    };
    let act = |v: f64| -> Result<Activation> {
        match v as i64 {
            0 => Ok(Activation::None),
            1 => Ok(Activation::Relu),
            _ => Err(ckpt_err(field, format!("bad activation code {v}"))),
        }
    };
    let rows: Vec<&[f64]> = e.data.chunks_exact(3).collect();
    let input = as_usize(rows[0][0])?;
    let layers = rows[1..]
        .iter()
        .map(|r| match r[0] as i64 {
            0 => Ok(LayerSpec::Dense {
                out: as_usize(r[1])?,
                activation: act(r[2])?,
            }),
            1 => Ok(LayerSpec::BatchNorm {
                activation: act(r[2])?,
            }),
            2 => Ok(LayerSpec::SoftmaxHead {
                classes: as_usize(r[1])?,
            }),
            k => Err(ckpt_err(field, format!("bad layer kind {k}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NetworkSpec::new(input, layers))
}

fn network_entries(prefix: &str, net: &Network, out: &mut Vec<u8>) {
    let (shape, data) = encode_spec(net.spec());
    write_entry(out, &format!("{prefix}.spec"), &shape, &data);
    for (i, layer) in net.layers().iter().enumerate() {
        match layer {
            Layer::Dense { weight, bias, .. } => {
                write_entry(out, &format!("{prefix}.{i}.weight"), weight.shape(), weight.data());
                write_entry(out, &format!("{prefix}.{i}.bias"), bias.shape(), bias.data());
            }
            Layer::BatchNorm {
                gamma,
                beta,
                running,
                ..
            } => {
                write_entry(out, &format!("{prefix}.{i}.gamma"), gamma.shape(), gamma.data());
                write_entry(out, &format!("{prefix}.{i}.beta"), beta.shape(), beta.data());
                let n = running.mean.len();
                write_entry(out, &format!("{prefix}.{i}.running_mean"), &[n], &running.mean);
                write_entry(out, &format!("{prefix}.{i}.running_var"), &[n], &running.var);
            }
        }
    }
}

/// Serialises a bundle to checkpoint bytes.
pub fn encode(bundle: &ModelBundle) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let d = bundle.dims;
    write_entry(
        &mut out,
        "dims",
        &[4],
        &[d.input as f64, d.s as f64, d.z as f64, d.classes as f64],
    );
    for (name, net) in bundle.networks() {
        network_entries(name, net, &mut out);
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(ckpt_err(field, "truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

fn parse_entries(bytes: &[u8]) -> Result<BTreeMap<String, Entry>> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(ckpt_err("magic", "bad magic bytes"));
    }
    let version = u32::from_le_bytes(cur.take(4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(ckpt_err(
            "version",
            format!("unsupported version {version} (expected {VERSION})"),
        ));
    }
    let mut entries = BTreeMap::new();
    let mut last = String::from("header");
    while cur.pos < bytes.len() {
        let ctx = format!("entry after `{last}`");
        let len = u16::from_le_bytes(cur.take(2, &ctx)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(cur.take(len, &ctx)?)
            .map_err(|_| ckpt_err(&ctx, "name is not UTF-8"))?
            .to_string();
        let rank = cur.take(1, &name)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(cur.take(4, &name)?.try_into().unwrap()) as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = cur.take(numel.checked_mul(8).ok_or_else(|| ckpt_err(&name, "size overflow"))?, &name)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        last = name.clone();
        if entries.insert(name.clone(), Entry { shape, data }).is_some() {
            return Err(ckpt_err(&name, "duplicate entry"));
        }
    }
    Ok(entries)
}

fn take_tensor(
    entries: &mut BTreeMap<String, Entry>,
    field: &str,
    expect: &[usize],
) -> Result<Entry> {
    let e = entries
        .remove(field)
        .ok_or_else(|| ckpt_err(field, "missing"))?;
    if e.shape != expect {
        return Err(ckpt_err(
            field,
            format!("shape {:?}, expected {:?}", e.shape, expect),
        ));
    }
    if e.data.iter().any(|v| !v.is_finite()) {
        return Err(ckpt_err(field, "non-finite value"));
    }
    Ok(e)
}

fn load_network(prefix: &str, entries: &mut BTreeMap<String, Entry>) -> Result<Network> {
    let spec_field = format!("{prefix}.spec");
    let spec_entry = entries
        .remove(&spec_field)
        .ok_or_else(|| ckpt_err(&spec_field, "missing"))?;
    let spec = decode_spec(&spec_field, &spec_entry)?;
    let mut net = Network::build(&spec, 0).map_err(|e| ckpt_err(&spec_field, e.to_string()))?;
    for (i, layer) in net.layers_mut().iter_mut().enumerate() {
        match layer {
            Layer::Dense { weight, bias, .. } => {
                let f = format!("{prefix}.{i}.weight");
                let w = take_tensor(entries, &f, weight.shape())?;
                *weight = Tensor::new(w.shape, w.data)?;
                let f = format!("{prefix}.{i}.bias");
                let b = take_tensor(entries, &f, bias.shape())?;
                *bias = Tensor::new(b.shape, b.data)?;
            }
            Layer::BatchNorm {
                gamma,
                beta,
                running,
                ..
            } => {
                let n = gamma.numel();
                let g = take_tensor(entries, &format!("{prefix}.{i}.gamma"), &[n])?;
                *gamma = Tensor::new(g.shape, g.data)?;
                let b = take_tensor(entries, &format!("{prefix}.{i}.beta"), &[n])?;
                *beta = Tensor::new(b.shape, b.data)?;
                running.mean = take_tensor(entries, &format!("{prefix}.{i}.running_mean"), &[n])?.data;
                running.var = take_tensor(entries, &format!("{prefix}.{i}.running_var"), &[n])?.data;
            }
        }
    }
    Ok(net)
}

/// Parses checkpoint bytes. Any missing, truncated or malformed field is an
/// error naming that field; no partially filled bundle is ever returned.
pub fn decode(bytes: &[u8]) -> Result<ModelBundle> {
    let mut entries = parse_entries(bytes)?;
    let dims = take_tensor(&mut entries, "dims", &[4])?.data;
    let dims = Dims {
        input: dims[0] as usize,
        s: dims[1] as usize,
        z: dims[2] as usize,
        classes: dims[3] as usize,
    };
    let bundle = ModelBundle {
        enc_s: load_network("enc_s", &mut entries)?,
        s_classifier: load_network("s_classifier", &mut entries)?,
        enc_z: load_network("enc_z", &mut entries)?,
        decoder: load_network("decoder", &mut entries)?,
        adversary: load_network("adversary", &mut entries)?,
        dims,
    };
    if let Some(extra) = entries.keys().next() {
        return Err(ckpt_err(extra, "unexpected entry"));
    }
    bundle
        .spec()
        .validate()
        .map_err(|e| ckpt_err("dims", e.to_string()))?;
    if bundle.spec().dims() != dims {
        return Err(ckpt_err("dims", "dims disagree with network layouts"));
    }
    Ok(bundle)
}

pub fn save_checkpoint(bundle: &ModelBundle, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(bundle))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelBundle> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}
