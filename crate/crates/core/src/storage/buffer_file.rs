use std::fs;
use std::path::Path;

use super::replay::{ReplayBuffer, TransitionRecord};
use crate::codec::{Decoder, Encoder};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ASACBUF\0";
pub const BUFFER_FORMAT_VERSION: u32 = 1;

/// Metadata stored ahead of the transitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BufferHeader {
    pub version: u32,
    pub env_id: String,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub capacity: usize,
    pub cursor: usize,
    pub size: usize,
}

pub fn encode_buffer(buffer: &ReplayBuffer, env_id: &str) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.bytes(MAGIC);
    enc.u32(BUFFER_FORMAT_VERSION);
    enc.str(env_id);
    enc.u64(buffer.obs_dim() as u64);
    enc.u64(buffer.action_dim() as u64);
    enc.u64(buffer.capacity() as u64);
    enc.u64(buffer.cursor() as u64);
    enc.u64(buffer.len() as u64);
    for i in 0..buffer.len() {
        let r = buffer.get(i).expect("slot in range");
        for &x in r.state.iter().chain(&r.action) {
            enc.f64(x);
        }
        enc.f64(r.reward);
        for &x in &r.next_state {
            enc.f64(x);
        }
        enc.bool(r.terminated);
        enc.bool(r.truncated);
        enc.u64(r.episode);
    }
    enc.into_bytes()
}

fn decode_header(dec: &mut Decoder<'_>) -> Result<BufferHeader> {
    if dec.take(MAGIC.len())? != MAGIC {
        return Err(Error::Format("not a replay buffer file".into()));
    }
    let version = dec.u32()?;
    if version != BUFFER_FORMAT_VERSION {
        return Err(Error::Format(format!("buffer format version {version}, expected {BUFFER_FORMAT_VERSION}")));
    }
    Ok(BufferHeader {
        version,
        env_id: dec.str()?,
        obs_dim: dec.u64()? as usize,
        action_dim: dec.u64()? as usize,
        capacity: dec.u64()? as usize,
        cursor: dec.u64()? as usize,
        size: dec.u64()? as usize,
    })
}

/// Decodes a buffer, refusing files whose environment or widths differ from the expectation.
pub fn decode_buffer(bytes: &[u8], expect: Option<(&str, usize, usize)>) -> Result<(BufferHeader, ReplayBuffer)> {
    let mut dec = Decoder::new(bytes);
    let header = decode_header(&mut dec)?;
    if let Some((env, obs, act)) = expect {
        if header.env_id != env {
            return Err(Error::Format(format!("buffer was recorded on '{}', expected '{env}'", header.env_id)));
        }
        if header.obs_dim != obs || header.action_dim != act {
            return Err(Error::Format(format!(
                "buffer widths ({}, {}) differ from ({obs}, {act})",
                header.obs_dim, header.action_dim
            )));
        }
    }
    let (o, a) = (header.obs_dim, header.action_dim);
    let record_bytes = 8 * (2 * o + a + 1) + 2 + 8;
    if header.size.checked_mul(record_bytes) != Some(dec.remaining()) || header.capacity == 0 {
        return Err(Error::Format("buffer body length does not match its header".into()));
    }
    let mut records = Vec::with_capacity(header.size);
    for _ in 0..header.size {
        let read = |n: usize, dec: &mut Decoder<'_>| -> Result<Vec<f64>> { (0..n).map(|_| dec.f64()).collect() };
        let state = read(o, &mut dec)?;
        let action = read(a, &mut dec)?;
        let reward = dec.f64()?;
        let next_state = read(o, &mut dec)?;
        records.push(TransitionRecord {
            state,
            action,
            reward,
            next_state,
            terminated: dec.bool()?,
            truncated: dec.bool()?,
            episode: dec.u64()?,
        });
    }
    dec.finish()?;
    let buffer = ReplayBuffer::from_parts(o, a, header.capacity, header.cursor, records)?;
    Ok((header, buffer))
}

pub fn save_buffer(path: &Path, buffer: &ReplayBuffer, env_id: &str) -> Result<()> {
    fs::write(path, encode_buffer(buffer, env_id))?;
    Ok(())
}

/// Loads a buffer file; `expect` pins the environment id and widths.
pub fn load_buffer(path: &Path, expect: Option<(&str, usize, usize)>) -> Result<(BufferHeader, ReplayBuffer)> {
    decode_buffer(&fs::read(path)?, expect)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn filled(n: u64, capacity: usize) -> ReplayBuffer {
        let mut buf = ReplayBuffer::new(2, 1, capacity);
        for i in 0..n {
            buf.push(TransitionRecord {
                state: vec![i as f64, f64::from_bits(0x7ff8_0000_0000_0123)],
                action: vec![0.25],
                reward: 1.0 / (i as f64 + 3.0),
                next_state: vec![-(i as f64), 1e-300],
                terminated: i % 7 == 0,
                truncated: i % 3 == 0,
                episode: i / 4,
            })
            .unwrap();
        }
        buf
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let buf = filled(13, 10);
        let bytes = encode_buffer(&buf, "pendulum_swingup");
        let (header, back) = decode_buffer(&bytes, Some(("pendulum_swingup", 2, 1))).unwrap();
        assert_eq!(header.size, 10);
        assert_eq!(header.cursor, 3);
        assert_eq!(encode_buffer(&back, "pendulum_swingup"), bytes);
    }

    #[test]
    fn wrong_env_or_width_is_refused() {
        let bytes = encode_buffer(&filled(3, 10), "pendulum_swingup");
        assert!(matches!(decode_buffer(&bytes, Some(("cartpole_swingup", 2, 1))), Err(Error::Format(_))));
        assert!(matches!(decode_buffer(&bytes, Some(("pendulum_swingup", 3, 1))), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_or_bumped_version_is_refused() {
        let mut bytes = encode_buffer(&filled(3, 10), "e");
        assert!(decode_buffer(&bytes[..bytes.len() - 1], None).is_err());
        bytes[8] = 9;
        assert!(matches!(decode_buffer(&bytes, None), Err(Error::Format(_))));
    }
}
