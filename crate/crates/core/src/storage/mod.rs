//! Transition storage: the replay ring buffer, its on-disk format, and
//! line-delimited run logs.

mod buffer_file;
mod replay;
pub mod runlog;

pub use buffer_file::{decode_buffer, encode_buffer, load_buffer, save_buffer, BufferHeader, BUFFER_FORMAT_VERSION};
pub use replay::{ReplayBuffer, TransitionBatch, TransitionRecord};
pub use runlog::{LogRecord, RunLog, RunStatus, RUN_LOG_SCHEMA_VERSION};
