//! `DNET` checkpoint container.
//!
//! ```text
//! magic     b"DNET"
//! version   u16
//! topology  u8 (0 vdsr, 1 irunet)
//! depth, filters, kernel, layer count   u32 each
//! per layer: cin, cout, k  u32 each; weights then biases as f32
//! ```
//! All fields little-endian.

use std::io::{Read, Write};
use std::path::Path;

use super::layers::ConvLayer;
use super::network::{NetworkSpec, Params, Topology};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DNET";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn save_checkpoint<W: Write>(spec: &NetworkSpec, params: &Params<f32>, mut out: W) -> Result<()> {
    if !params.matches(spec) {
        return Err(Error::ShapeMismatch("parameters do not match the network spec".into()));
    }
    let mut buf = Vec::with_capacity(32 + 4 * params.param_count() + 12 * params.layers.len());
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.push(match spec.topology {
        Topology::Vdsr => 0,
        Topology::IrUnet => 1,
    });
    for v in [spec.depth, spec.filters, spec.kernel, params.layers.len()] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for l in &params.layers {
        for v in [l.cin, l.cout, l.k] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in l.weights.iter().chain(&l.bias) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated(what))?;
        let s = self.bytes.get(self.pos..end).ok_or(Error::Truncated(what))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn floats(&mut self, n: usize, what: &'static str) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or(Error::Truncated(what))?, what)?;
        let v: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index: i, value: v[i] as f64 });
        }
        Ok(v)
    }
}

pub fn load_checkpoint<R: Read>(mut src: R) -> Result<(NetworkSpec, Params<f32>)> {
    let mut bytes = Vec::new();
    src.read_to_end(&mut bytes)?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic { expected: CHECKPOINT_MAGIC, found: magic });
    }
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let topology = match r.take(1, "topology")?[0] {
        0 => Topology::Vdsr,
        1 => Topology::IrUnet,
        b => return Err(Error::InvalidArgument(format!("unknown topology byte {b}"))),
    };
    let spec = NetworkSpec { topology, depth: r.u32("depth")?, filters: r.u32("filters")?, kernel: r.u32("kernel")? };
    spec.validate()?;
    let n_layers = r.u32("layer count")?;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let (cin, cout, k) = (r.u32("layer shape")?, r.u32("layer shape")?, r.u32("layer shape")?);
        let nw = cout.checked_mul(cin).and_then(|v| v.checked_mul(k * k)).ok_or(Error::Truncated("weights"))?;
        let weights = r.floats(nw, "weights")?;
        let bias = r.floats(cout, "biases")?;
        layers.push(ConvLayer { cin, cout, k, weights, bias });
    }
    let params = Params { layers };
    if !params.matches(&spec) {
        return Err(Error::ShapeMismatch("checkpoint layers do not match its spec block".into()));
    }
    Ok((spec, params))
}

pub fn write_checkpoint_file(spec: &NetworkSpec, params: &Params<f32>, path: impl AsRef<Path>) -> Result<()> {
    save_checkpoint(spec, params, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn read_checkpoint_file(path: impl AsRef<Path>) -> Result<(NetworkSpec, Params<f32>)> {
    load_checkpoint(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_errors() {
        let spec = NetworkSpec { topology: Topology::IrUnet, depth: 5, filters: 3, kernel: 3 };
        let p = Params::<f32>::he(&spec, 7).unwrap();
        let mut buf = Vec::new();
        save_checkpoint(&spec, &p, &mut buf).unwrap();
        let (s2, p2) = load_checkpoint(&buf[..]).unwrap();
        assert_eq!((s2, p2), (spec, p));
        assert!(matches!(load_checkpoint(&buf[..buf.len() - 2]), Err(Error::Truncated(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(load_checkpoint(&bad[..]), Err(Error::BadMagic { .. })));
    }
}
