//! Wire formats for the text and binary channels.

pub mod mesh_codec;
pub mod message;
pub mod probe;

pub use mesh_codec::{
    decode_frame, decode_mesh_chunk, encode_frame, encode_mesh_chunk, encoded_len, split_frame, CodecError,
    FrameError, HEADER_LEN, MAGIC,
};
pub use message::{decode_message, encode_message, ChunkRef, Envelope, MessageError, PROTOCOL_VERSION};
pub use probe::{resolve_probe, LatencyProbe, ProbeError};
