//! Versioned binary checkpoints holding every piece of agent state needed to
//! resume training bit-exactly.

use std::fs;
use std::path::Path;

use super::{GaussianTanhPolicy, SacAgent, SacConfig, Temperature, TwinCritics};
use crate::codec::{Decoder, Encoder};
use crate::error::{Error, Result};
use crate::nn::adam::ScalarAdam;

const MAGIC: &[u8; 8] = b"ASACCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Descriptive fields stored alongside the agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub env_id: String,
    pub size_tag: String,
    pub env_steps: u64,
}

pub fn encode_checkpoint(agent: &SacAgent, meta: &CheckpointMeta) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.bytes(MAGIC);
    enc.u32(CHECKPOINT_VERSION);
    enc.str(&meta.env_id);
    enc.str(&meta.size_tag);
    enc.u64(meta.env_steps);
    enc.str(&serde_json::to_string(&agent.config).expect("config serializes"));
    enc.u64(agent.updates);

    let p = &agent.policy;
    enc.network(&p.net);
    enc.u64(p.action_dim as u64);
    match &p.mask {
        Some(mask) => {
            enc.u8(1);
            enc.u64(mask.len() as u64);
            for &keep in mask {
                enc.bool(keep);
            }
        }
        None => enc.u8(0),
    }
    enc.f64(p.log_std_bounds.0);
    enc.f64(p.log_std_bounds.1);

    let c = &agent.critics;
    for net in c.online.iter().chain(&c.target) {
        enc.network(net);
    }
    enc.f64(c.tau);
    match &c.projection {
        Some(proj) => {
            enc.u8(1);
            enc.network(proj);
        }
        None => enc.u8(0),
    }

    let t = &agent.temperature;
    enc.f64(t.log_alpha);
    enc.f64(t.target_entropy);
    enc.adam_config(&t.optimizer.config);
    enc.f64(t.optimizer.m);
    enc.f64(t.optimizer.v);
    enc.u64(t.optimizer.step);

    enc.adam(&agent.actor_opt);
    for opt in &agent.critic_opts {
        enc.adam(opt);
    }
    enc.into_bytes()
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(SacAgent, CheckpointMeta)> {
    let mut dec = Decoder::new(bytes);
    if dec.take(MAGIC.len())? != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let version = dec.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("checkpoint version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let meta = CheckpointMeta {
        env_id: dec.str()?,
        size_tag: dec.str()?,
        env_steps: dec.u64()?,
    };
    let config: SacConfig = serde_json::from_str(&dec.str()?).map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    let updates = dec.u64()?;

    let net = dec.network()?;
    let action_dim = dec.u64()? as usize;
    let mask = match dec.u8()? {
        0 => None,
        1 => {
            let n = dec.u64()? as usize;
            Some((0..n).map(|_| dec.bool()).collect::<Result<Vec<_>>>()?)
        }
        t => return Err(Error::Format(format!("bad mask tag {t}"))),
    };
    let log_std_bounds = (dec.f64()?, dec.f64()?);
    let policy = GaussianTanhPolicy {
        net,
        action_dim,
        mask,
        log_std_bounds,
    };

    let online = [dec.network()?, dec.network()?];
    let target = [dec.network()?, dec.network()?];
    let tau = dec.f64()?;
    let projection = match dec.u8()? {
        0 => None,
        1 => Some(dec.network()?),
        t => return Err(Error::Format(format!("bad projection tag {t}"))),
    };
    let critics = TwinCritics {
        online,
        target,
        tau,
        projection,
    };

    let log_alpha = dec.f64()?;
    let target_entropy = dec.f64()?;
    let optimizer = ScalarAdam {
        config: dec.adam_config()?,
        m: dec.f64()?,
        v: dec.f64()?,
        step: dec.u64()?,
    };
    let temperature = Temperature {
        log_alpha,
        target_entropy,
        optimizer,
    };
    let actor_opt = dec.adam()?;
    let critic_opts = [dec.adam()?, dec.adam()?];
    dec.finish()?;

    if policy.net.input_width() != config.obs_dim || policy.action_dim != config.action_dim {
        return Err(Error::Format("checkpoint networks disagree with its config".into()));
    }
    Ok((
        SacAgent {
            config,
            policy,
            critics,
            temperature,
            actor_opt,
            critic_opts,
            updates,
        },
        meta,
    ))
}

pub fn save_checkpoint(path: &Path, agent: &SacAgent, meta: &CheckpointMeta) -> Result<()> {
    fs::write(path, encode_checkpoint(agent, meta))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(SacAgent, CheckpointMeta)> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::Regularizers;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            env_id: "pendulum_swingup".into(),
            size_tag: "xs".into(),
            env_steps: 42,
        }
    }

    #[test]
    fn round_trip_preserves_every_field() {
        let mut config = SacConfig::new(6, 2, 8);
        config.critic_hidden = vec![16, 16];
        config.mask_actor_inputs = true;
        config.regularizers = Regularizers {
            spectral_norm: true,
            bias_correction: true,
            ..Regularizers::default()
        };
        let agent = SacAgent::new(config, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let bytes = encode_checkpoint(&agent, &meta());
        let (back, m) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, agent);
        assert_eq!(m, meta());
        assert_eq!(encode_checkpoint(&back, &m), bytes);
    }

    #[test]
    fn corrupt_bytes_are_rejected() {
        let agent = SacAgent::new(SacConfig::new(3, 1, 4), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut bytes = encode_checkpoint(&agent, &meta());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        bytes[8] = 77;
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Format(_))));
        assert!(decode_checkpoint(b"garbage").is_err());
    }
}
