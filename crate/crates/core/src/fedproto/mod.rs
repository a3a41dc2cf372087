//! Function-value protocol between parties and the server.

mod cache;
mod party;
mod server;
mod transcript;
mod wire;

pub use cache::ServerCache;
pub use party::{Party, PartyConfig};
pub(crate) use server::HeadStep;
pub use server::{warmup_cache, Server, ServerConfig, UploadOutcome};
pub use transcript::{audit_transcript, AuditDims, AuditViolation, Dir, Transcript, TranscriptEntry};
pub use wire::{decode_message, encode_message, Frame, TigMessage, WireMessage, HEADER_LEN};
