//! The `DFRM` frame container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic    b"DFRM"
//! version  u16                 (currently 1)
//! height   u32
//! width    u32
//! flags    u8                  bit 0: dead mask, bit 1: axes, bit 2: stack axis
//! values   f32 * height*width  row-major
//! mask     ceil(n/8) bytes     LSB-first, only when bit 0 is set
//! axes     per axis: label u8 (b'h'|b'k'|b'l'), origin f64, step f64;
//!          rows axis, cols axis, then stack axis when bit 2 is set
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::frame::{AxisLabel, AxisSpec, Frame, ReciprocalAxes};

pub const FRAME_MAGIC: [u8; 4] = *b"DFRM";
pub const FRAME_VERSION: u16 = 1;

const FLAG_MASK: u8 = 1;
const FLAG_AXES: u8 = 1 << 1;
const FLAG_STACK: u8 = 1 << 2;

pub fn save_frame<W: Write>(frame: &Frame, mut out: W) -> Result<()> {
    if let Some((index, v)) = frame.data().iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { index, value: *v as f64 });
    }
    let mut flags = 0u8;
    if frame.has_dead_pixels() {
        flags |= FLAG_MASK;
    }
    if let Some(axes) = frame.axes() {
        flags |= FLAG_AXES;
        if axes.stack.is_some() {
            flags |= FLAG_STACK;
        }
    }
    let mut buf = Vec::with_capacity(15 + 4 * frame.len());
    buf.extend_from_slice(&FRAME_MAGIC);
    buf.extend_from_slice(&FRAME_VERSION.to_le_bytes());
    buf.extend_from_slice(&dim_u32(frame.height())?.to_le_bytes());
    buf.extend_from_slice(&dim_u32(frame.width())?.to_le_bytes());
    buf.push(flags);
    for v in frame.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    if flags & FLAG_MASK != 0 {
        buf.extend(pack_bits(frame.dead_mask()));
    }
    if let Some(axes) = frame.axes() {
        for a in [Some(axes.rows), Some(axes.cols), axes.stack].into_iter().flatten() {
            buf.push(a.label.as_byte());
            buf.extend_from_slice(&a.origin.to_le_bytes());
            buf.extend_from_slice(&a.step.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn load_frame<R: Read>(mut src: R) -> Result<Frame> {
    let mut bytes = Vec::new();
    src.read_to_end(&mut bytes)?;
    decode_frame(&bytes)
}

pub fn decode_frame(bytes: &[u8]) -> Result<Frame> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = cur.take(4, "magic")?.try_into().unwrap();
    if magic != FRAME_MAGIC {
        return Err(Error::BadMagic { expected: FRAME_MAGIC, found: magic });
    }
    let version = u16::from_le_bytes(cur.take(2, "version")?.try_into().unwrap());
    if version != FRAME_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let height = cur.u32("height")? as usize;
    let width = cur.u32("width")? as usize;
    let flags = cur.take(1, "flags")?[0];
    let n = height
        .checked_mul(width)
        .ok_or_else(|| Error::InvalidFrame(format!("{height}x{width} overflows")))?;
    let raw = cur.take(n.checked_mul(4).ok_or(Error::Truncated("intensities"))?, "intensities")?;
    let mut data = Vec::with_capacity(n);
    for (index, chunk) in raw.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFinite { index, value: v as f64 });
        }
        data.push(v);
    }
    let mask = if flags & FLAG_MASK != 0 {
        Some(unpack_bits(cur.take(n.div_ceil(8), "dead mask")?, n))
    } else {
        None
    };
    let axes = if flags & FLAG_AXES != 0 {
        let rows = cur.axis()?;
        let cols = cur.axis()?;
        let stack = if flags & FLAG_STACK != 0 { Some(cur.axis()?) } else { None };
        Some(ReciprocalAxes::new(rows, cols, stack)?)
    } else {
        None
    };
    let mut frame = Frame::new(height, width, data)?;
    if let Some(mask) = mask {
        if let Some(i) = mask.iter().zip(frame.data()).position(|(&d, &v)| d && v != 0.0) {
            return Err(Error::InvalidFrame(format!("dead pixel {i} carries a nonzero value")));
        }
        frame = frame.with_dead_mask(mask)?;
    }
    if let Some(axes) = axes {
        frame = frame.with_axes(axes)?;
    }
    Ok(frame)
}

pub fn write_frame_file(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    save_frame(frame, std::io::BufWriter::new(file))
}

pub fn read_frame_file(path: impl AsRef<Path>) -> Result<Frame> {
    decode_frame(&std::fs::read(path)?)
}

fn dim_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidFrame(format!("dimension {v} exceeds u32")))
}

fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

fn unpack_bits(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| bytes[i / 8] & (1 << (i % 8)) != 0).collect()
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated(what))?;
        let s = self.bytes.get(self.pos..end).ok_or(Error::Truncated(what))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64> {
        let v = f64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFinite { index: self.pos, value: v });
        }
        Ok(v)
    }

    fn axis(&mut self) -> Result<AxisSpec> {
        let b = self.take(1, "axis label")?[0];
        let label = AxisLabel::from_byte(b)
            .ok_or_else(|| Error::InvalidFrame(format!("unknown axis label byte {b:#04x}")))?;
        Ok(AxisSpec::new(label, self.f64("axis origin")?, self.f64("axis step")?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn encode(f: &Frame) -> Vec<u8> {
        let mut v = Vec::new();
        save_frame(f, &mut v).unwrap();
        v
    }

    #[test]
    fn one_pixel_layout() {
        let f = Frame::filled(1, 1, 0.0);
        let bytes = encode(&f);
        assert_eq!(bytes.len(), 19);
        assert_eq!(&bytes[..4], b"DFRM");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..10], &[1, 0, 0, 0]);
        assert_eq!(bytes[14], 0);
        assert_eq!(decode_frame(&bytes).unwrap(), f);
    }

    #[test]
    fn canonical_detector_shape() {
        let f = Frame::filled(194, 242, 1.0);
        let g = decode_frame(&encode(&f)).unwrap();
        assert_eq!(g.len(), 46_948);
        assert!(g.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn random_frames_roundtrip_bit_exact() {
        let mut r = rng::rng(11);
        for i in 0..1000 {
            let data: Vec<f32> = (0..64).map(|_| r.random_range(-1e6f32..1e6)).collect();
            let mask: Vec<bool> = (0..64).map(|_| r.random_bool(0.05)).collect();
            let mut f = Frame::new(8, 8, data).unwrap().with_dead_mask(mask).unwrap();
            if i % 2 == 0 {
                let axes = ReciprocalAxes::new(
                    AxisSpec::new(AxisLabel::L, r.random(), 0.03),
                    AxisSpec::new(AxisLabel::H, r.random(), -0.0025),
                    (i % 4 == 0).then(|| AxisSpec::new(AxisLabel::K, -0.04, 0.004)),
                )
                .unwrap();
                f = f.with_axes(axes).unwrap();
            }
            let g = decode_frame(&encode(&f)).unwrap();
            let a: Vec<u32> = f.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = g.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
            assert_eq!(f, g);
        }
    }

    #[test]
    fn distinct_errors() {
        let f = Frame::filled(2, 2, 3.0);
        let mut bytes = encode(&f);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_frame(&bad), Err(Error::BadMagic { .. })));
        assert!(matches!(decode_frame(&bytes[..bytes.len() - 1]), Err(Error::Truncated(_))));
        bytes[15..19].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(decode_frame(&bytes), Err(Error::NonFinite { index: 0, .. })));
    }
}
