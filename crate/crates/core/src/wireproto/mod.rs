//! Backend wire protocol.
//!
//! Newline-delimited UTF-8 JSON over a child process's stdio or a TCP
//! socket. Each message is an object with a `type` and a request `id`;
//! every request gets exactly one terminal reply carrying the same id.
//! `propagate` replies with a stream of `mask` items followed by `done`.
//!
//! ```text
//! → {"id":1,"type":"hello"}
//! ← {"id":1,"type":"capabilities","modes":["image","video"],"backend_id":"gtecho"}
//! → {"id":2,"type":"start_session","n_frames":16}
//! ← {"id":2,"type":"ok"}
//! ...
//! → {"id":21,"type":"propagate","direction":"forward"}
//! ← {"id":21,"type":"mask","frame":8,"object":1,"rle":{"width":32,"height":32,"runs":[...]}}
//! ← {"id":21,"type":"done"}
//! ```
//!
//! Frame pixels travel as base64; masks travel as [`RleMask`] runs.

mod client;
pub mod conformance;
mod messages;
mod rle;
pub mod server;

pub use client::{BackendConnection, BackendSpec, Capabilities, FrameMasks, WireError, DEFAULT_TIMEOUT};
pub use messages::{
    Direction, Envelope, Mode, ObjectMask, Request, Response, WireFrame, WirePoint, WirePrompt,
};
pub use rle::{decode_mask_rle, encode_mask_rle, CodecError, RleMask};
