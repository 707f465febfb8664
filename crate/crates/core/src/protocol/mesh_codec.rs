//! MSH1 binary mesh chunk format.
//!
//! All fields little-endian:
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `4D 53 48 31` ("MSH1")  |
//! | 4      | 12   | chunk coords, 3 × i32         |
//! | 16     | 4    | revision, u32                 |
//! | 20     | 4    | vertex count V, u32           |
//! | 24     | 4    | triangle count T, u32         |
//! | 28     | 12V  | positions, V × 3 × f32        |
//! | ..     | 12V  | normals, V × 3 × f32          |
//! | ..     | 12T  | indices, T × 3 × u32          |
//!
//! An encoded chunk is exactly `28 + 24V + 12T` bytes. The last magic byte is
//! the format version as an ASCII digit: `MSH` followed by anything other
//! than `1` is a version this decoder does not understand.
//!
//! On the binary channel each payload is preceded by a u32 byte length.

use thiserror::Error;

use crate::scan::MeshChunk;

pub const MAGIC: [u8; 4] = *b"MSH1";
/// Format version, carried as the ASCII digit in the last magic byte.
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 28;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    /// Raw version byte following `MSH`.
    #[error("unsupported version byte {0:#04x}")]
    UnsupportedVersion(u8),
    #[error("truncated: need {needed} bytes, have {available}")]
    Truncated { needed: u64, available: u64 },
    #[error("triangle index {index} out of range for {vertex_count} vertices")]
    IndexOutOfRange { index: u32, vertex_count: u32 },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
}

/// Exact encoded size for a chunk with `v` vertices and `t` triangles.
pub fn encoded_len(v: usize, t: usize) -> usize {
    HEADER_LEN + 24 * v + 12 * t
}

pub fn encode_mesh_chunk(chunk: &MeshChunk) -> Vec<u8> {
    let v = chunk.positions.len();
    let t = chunk.triangles.len();
    let mut out = Vec::with_capacity(encoded_len(v, t));
    out.extend_from_slice(&MAGIC);
    for c in chunk.coords {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out.extend_from_slice(&chunk.revision.to_le_bytes());
    out.extend_from_slice(&(v as u32).to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    for p in chunk.positions.iter().chain(&chunk.normals) {
        for c in p {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    for tri in &chunk.triangles {
        for i in tri {
            out.extend_from_slice(&i.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let mut b = [0u8; N];
        b.copy_from_slice(&self.buf[self.pos..self.pos + N]);
        self.pos += N;
        b
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }
    fn i32(&mut self) -> i32 {
        i32::from_le_bytes(self.take())
    }
    fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.take())
    }
}

/// Decodes one MSH1 payload. Total over arbitrary input: every byte string
/// yields a chunk or a [`CodecError`], and nothing is allocated before the
/// declared counts have been checked against the input length.
pub fn decode_mesh_chunk(bytes: &[u8]) -> Result<MeshChunk, CodecError> {
    let available = bytes.len() as u64;
    if bytes.len() < 4 {
        return Err(CodecError::Truncated {
            needed: HEADER_LEN as u64,
            available,
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("length checked");
    if magic[..3] != MAGIC[..3] {
        return Err(CodecError::BadMagic(magic));
    }
    if magic[3] != MAGIC[3] {
        return Err(CodecError::UnsupportedVersion(magic[3]));
    }
    if bytes.len() < HEADER_LEN {
        return Err(CodecError::Truncated {
            needed: HEADER_LEN as u64,
            available,
        });
    }
    let mut r = Reader { buf: bytes, pos: 4 };
    let coords = [r.i32(), r.i32(), r.i32()];
    let revision = r.u32();
    let v = r.u32();
    let t = r.u32();

    let needed = HEADER_LEN as u64 + 24 * v as u64 + 12 * t as u64;
    if needed > available {
        return Err(CodecError::Truncated { needed, available });
    }
    if needed < available {
        return Err(CodecError::TrailingBytes((available - needed) as usize));
    }

    let read_vec3 = |r: &mut Reader| [r.f32(), r.f32(), r.f32()];
    let positions: Vec<[f32; 3]> = (0..v).map(|_| read_vec3(&mut r)).collect();
    let normals: Vec<[f32; 3]> = (0..v).map(|_| read_vec3(&mut r)).collect();
    let mut triangles = Vec::with_capacity(t as usize);
    for _ in 0..t {
        let tri = [r.u32(), r.u32(), r.u32()];
        if let Some(&index) = tri.iter().find(|&&i| i >= v) {
            return Err(CodecError::IndexOutOfRange {
                index,
                vertex_count: v,
            });
        }
        triangles.push(tri);
    }

    Ok(MeshChunk {
        coords,
        revision,
        positions,
        normals,
        triangles,
    })
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("frame declares {declared} bytes but {available} follow")]
    Incomplete { declared: u64, available: u64 },
    #[error("frame exceeds limit: {0} bytes")]
    TooLarge(u64),
}

/// Upper bound on a single binary frame.
pub const MAX_FRAME_LEN: u32 = 64 * 1024 * 1024;

/// Prefixes `payload` with its u32 little-endian length.
pub fn encode_frame(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    out
}

/// Splits one length-prefixed frame off the front of `buf`. Returns `None`
/// when more bytes are needed.
pub fn split_frame(buf: &[u8]) -> Result<Option<(&[u8], &[u8])>, FrameError> {
    if buf.len() < 4 {
        return Ok(None);
    }
    let len = u32::from_le_bytes(buf[..4].try_into().expect("length checked"));
    if len > MAX_FRAME_LEN {
        return Err(FrameError::TooLarge(len as u64));
    }
    let end = 4 + len as usize;
    if buf.len() < end {
        return Ok(None);
    }
    Ok(Some((&buf[4..end], &buf[end..])))
}

/// Decodes a buffer that must hold exactly one frame.
pub fn decode_frame(buf: &[u8]) -> Result<&[u8], FrameError> {
    match split_frame(buf)? {
        Some((payload, [])) => Ok(payload),
        _ => {
            let declared = if buf.len() >= 4 {
                u32::from_le_bytes(buf[..4].try_into().expect("length checked")) as u64
            } else {
                4
            };
            Err(FrameError::Incomplete {
                declared,
                available: buf.len().saturating_sub(4) as u64,
            })
        }
    }
}
