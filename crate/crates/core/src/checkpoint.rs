//! Binary checkpoints. All integers and floats are little-endian.
//!
//! ```text
//! magic      "PCTA"
//! version    u16                      (currently 1)
//! seed       u64
//! input      u32 ndim, u32 dims[ndim]
//! layers     u32 count, then per layer: u32 len, len bytes of
//!              u8 kind (0 conv, 1 maxpool, 2 flatten, 3 dense)
//!              u8 activation (0 linear, 1 relu)
//!              u32 fields (conv: out_channels, kernel; maxpool: size; dense: out_features)
//! params     u32 edges, then per edge: weight tensor, bias tensor
//! snapshot   u8 present; if 1: u32 count, then that many tensors
//! tensor   = u32 ndim, u32 dims[ndim], f64 data[product(dims)]
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{Activation, Architecture, EdgeParams, LayerGraph, LayerKind, LayerSpec, StateSnapshot};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PCTA";
pub const VERSION: u16 = 1;

pub fn encode(g: &LayerGraph, snapshot: Option<&StateSnapshot>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&g.seed().to_le_bytes());
    let arch = g.architecture();
    put_dims(&mut out, &arch.input_shape);
    put_u32(&mut out, arch.layers.len());
    for spec in &arch.layers {
        let rec = encode_layer(spec);
        put_u32(&mut out, rec.len());
        out.extend_from_slice(&rec);
    }
    put_u32(&mut out, g.num_edges());
    for p in g.params() {
        put_tensor(&mut out, &p.weight);
        put_tensor(&mut out, &p.bias);
    }
    match snapshot {
        None => out.push(0),
        Some(s) => {
            out.push(1);
            put_u32(&mut out, s.values.len());
            for t in &s.values {
                put_tensor(&mut out, t);
            }
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<(LayerGraph, Option<StateSnapshot>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes, not a PCTA checkpoint".into()));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let seed = r.u64()?;
    let input_shape = r.dims()?;
    let n_layers = r.u32()?;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let len = r.u32()?;
        let rec = r.take(len)?;
        layers.push(decode_layer(rec)?);
    }
    let arch = Architecture::new(&input_shape, layers);
    let n_edges = r.u32()?;
    let mut params = Vec::with_capacity(n_edges.min(1024));
    for _ in 0..n_edges {
        let weight = r.tensor()?;
        let bias = r.tensor()?;
        params.push(EdgeParams { weight, bias });
    }
    let g = LayerGraph::with_params(&arch, seed, params)
        .map_err(|e| Error::Checkpoint(format!("parameters do not fit architecture: {e}")))?;
    let snapshot = match r.take(1)?[0] {
        0 => None,
        1 => {
            let n = r.u32()?;
            let values = (0..n).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
            Some(StateSnapshot { values })
        }
        flag => return Err(Error::Checkpoint(format!("bad snapshot flag {flag}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after offset {}",
            bytes.len() - r.pos,
            r.pos
        )));
    }
    Ok((g, snapshot))
}

pub fn save(path: &Path, g: &LayerGraph, snapshot: Option<&StateSnapshot>) -> Result<()> {
    fs::write(path, encode(g, snapshot)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(LayerGraph, Option<StateSnapshot>)> {
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// 64-bit FNV-1a of the encoded checkpoint (parameters only).
pub fn fingerprint(g: &LayerGraph) -> u64 {
    encode(g, None).iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("checkpoint field exceeds u32");
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_dims(out: &mut Vec<u8>, dims: &[usize]) {
    put_u32(out, dims.len());
    for &d in dims {
        put_u32(out, d);
    }
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    put_dims(out, t.shape());
    out.reserve(t.len() * 8);
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn encode_layer(spec: &LayerSpec) -> Vec<u8> {
    let mut rec = Vec::new();
    let (kind, fields): (u8, Vec<usize>) = match spec.kind {
        LayerKind::Conv2D {
            out_channels,
            kernel,
        } => (0, vec![out_channels, kernel]),
        LayerKind::MaxPool { size } => (1, vec![size]),
        LayerKind::Flatten => (2, vec![]),
        LayerKind::Dense { out_features } => (3, vec![out_features]),
    };
    rec.push(kind);
    rec.push(match spec.activation {
        Activation::Linear => 0,
        Activation::Relu => 1,
    });
    for f in fields {
        put_u32(&mut rec, f);
    }
    rec
}

fn decode_layer(rec: &[u8]) -> Result<LayerSpec> {
    let mut r = Reader { bytes: rec, pos: 0 };
    let kind = r.take(1)?[0];
    let activation = match r.take(1)?[0] {
        0 => Activation::Linear,
        1 => Activation::Relu,
        a => return Err(Error::Checkpoint(format!("unknown activation code {a}"))),
    };
    let kind = match kind {
        0 => LayerKind::Conv2D {
            out_channels: r.u32()?,
            kernel: r.u32()?,
        },
        1 => LayerKind::MaxPool { size: r.u32()? },
        2 => LayerKind::Flatten,
        3 => LayerKind::Dense {
            out_features: r.u32()?,
        },
        k => return Err(Error::Checkpoint(format!("unknown layer kind {k}"))),
    };
    if r.pos != rec.len() {
        return Err(Error::Checkpoint("layer record has trailing bytes".into()));
    }
    Ok(LayerSpec { kind, activation })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn dims(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()?;
        if n > 8 {
            return Err(Error::Checkpoint(format!("implausible tensor rank {n}")));
        }
        (0..n).map(|_| self.u32()).collect()
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let shape = self.dims()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Checkpoint("tensor size overflow".into()))?;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor size overflow".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}
