//! Little-endian binary encoding shared by checkpoints and buffer files.
//!
//! Floats are written as their IEEE-754 bit patterns, so every round trip is
//! bit-exact, NaN payloads included.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::norm::{NormKind, SpectralState};
use crate::nn::{Activation, AdamConfig, AdamState, DenseNetwork, Layer};

#[derive(Debug, Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn bool(&mut self, v: bool) {
        self.u8(v as u8);
    }

    pub fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.bytes(s.as_bytes());
    }

    pub fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        for &x in v {
            self.f64(x);
        }
    }

    pub fn matrix(&mut self, m: &Matrix) {
        self.u64(m.rows() as u64);
        self.u64(m.cols() as u64);
        for &x in m.as_slice() {
            self.f64(x);
        }
    }

    pub fn network(&mut self, net: &DenseNetwork) {
        self.u64(net.side_input() as u64);
        self.u64(net.layers().len() as u64);
        for layer in net.layers() {
            self.matrix(&layer.weight);
            self.f64s(&layer.bias);
            self.u8(match layer.activation {
                Activation::Relu => 0,
                Activation::Identity => 1,
            });
            self.u8(match layer.norm {
                NormKind::None => 0,
                NormKind::LayerNorm => 1,
                NormKind::Spectral => 2,
            });
            self.f64s(&layer.ln_gain);
            self.f64s(&layer.ln_shift);
            match &layer.spectral {
                Some(s) => {
                    self.u8(1);
                    self.f64s(&s.u);
                    self.f64s(&s.v);
                }
                None => self.u8(0),
            }
        }
        self.u64(net.init_snapshot().len() as u64);
        for block in net.init_snapshot() {
            self.f64s(block);
        }
    }

    pub fn adam(&mut self, state: &AdamState) {
        self.adam_config(&state.config);
        self.u64(state.step);
        self.u64(state.m.len() as u64);
        for (m, v) in state.m.iter().zip(&state.v) {
            self.f64s(m);
            self.f64s(v);
        }
    }

    pub fn adam_config(&mut self, c: &AdamConfig) {
        self.f64(c.lr);
        self.f64(c.beta1);
        self.f64(c.beta2);
        self.f64(c.eps);
    }
}

pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() == 0 {
            Ok(())
        } else {
            Err(Error::Format(format!("{} trailing bytes", self.remaining())))
        }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Format("unexpected end of data".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::Format(format!("invalid bool byte {b}"))),
        }
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()? as usize;
        // every element occupies at least one byte
        if n > self.remaining() {
            return Err(Error::Format(format!("length {n} exceeds remaining data")));
        }
        Ok(n)
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let n = rows
            .checked_mul(cols)
            .filter(|n| n.saturating_mul(8) <= self.remaining())
            .ok_or_else(|| Error::Format("matrix larger than remaining data".into()))?;
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(Matrix::from_vec(rows, cols, data))
    }

    pub fn network(&mut self) -> Result<DenseNetwork> {
        let side = self.u64()? as usize;
        let n_layers = self.len()?;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let weight = self.matrix()?;
            let bias = self.f64s()?;
            let activation = match self.u8()? {
                0 => Activation::Relu,
                1 => Activation::Identity,
                b => return Err(Error::Format(format!("unknown activation tag {b}"))),
            };
            let norm = match self.u8()? {
                0 => NormKind::None,
                1 => NormKind::LayerNorm,
                2 => NormKind::Spectral,
                b => return Err(Error::Format(format!("unknown normalizer tag {b}"))),
            };
            let ln_gain = self.f64s()?;
            let ln_shift = self.f64s()?;
            let spectral = if self.bool()? {
                Some(SpectralState { u: self.f64s()?, v: self.f64s()? })
            } else {
                None
            };
            layers.push(Layer { weight, bias, activation, norm, ln_gain, ln_shift, spectral });
        }
        let mut net = DenseNetwork::from_layers(layers, side).map_err(|e| Error::Format(e.to_string()))?;
        let n_blocks = self.len()?;
        let snapshot = (0..n_blocks).map(|_| self.f64s()).collect::<Result<Vec<_>>>()?;
        let expected: Vec<usize> = net.blocks().iter().map(|b| b.len()).collect();
        if snapshot.iter().map(Vec::len).collect::<Vec<_>>() != expected {
            return Err(Error::Format("initialization snapshot shape mismatch".into()));
        }
        net.restore_init_snapshot(snapshot);
        Ok(net)
    }

    pub fn adam(&mut self) -> Result<AdamState> {
        let config = self.adam_config()?;
        let step = self.u64()?;
        let n = self.len()?;
        let mut m = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            m.push(self.f64s()?);
            v.push(self.f64s()?);
        }
        Ok(AdamState { config, m, v, step })
    }

    pub fn adam_config(&mut self) -> Result<AdamConfig> {
        Ok(AdamConfig {
            lr: self.f64()?,
            beta1: self.f64()?,
            beta2: self.f64()?,
            eps: self.f64()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetworkSpec;
    use rand::SeedableRng;

    #[test]
    fn network_round_trip_is_bit_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let spec = NetworkSpec::mlp(3, &[5, 4], 2)
            .with_norm(1, NormKind::LayerNorm)
            .with_norm(0, NormKind::Spectral)
            .with_side_input(2);
        let mut net = DenseNetwork::new(&spec, &mut rng).unwrap();
        net.layers_mut()[2].bias[0] = f64::from_bits(0x7ff8_0000_dead_beef);
        let mut enc = Encoder::new();
        enc.network(&net);
        let bytes = enc.into_bytes();
        let mut dec = Decoder::new(&bytes);
        let back = dec.network().unwrap();
        dec.finish().unwrap();
        let mut enc2 = Encoder::new();
        enc2.network(&back);
        assert_eq!(bytes, enc2.into_bytes());
    }

    #[test]
    fn truncated_input_is_an_error() {
        let mut enc = Encoder::new();
        enc.f64s(&[1.0, 2.0, 3.0]);
        let bytes = enc.into_bytes();
        assert!(Decoder::new(&bytes[..bytes.len() - 1]).f64s().is_err());
    }
}
