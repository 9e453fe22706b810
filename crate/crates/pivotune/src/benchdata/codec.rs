//! The fixed invertible latent codec and the raw waveform file format.
//!
//! Waveforms are framed into non-overlapping chunks of `channels` samples;
//! each frame is multiplied by a seeded orthonormal matrix to form one
//! latent row. Decoding applies the transpose, so the round trip is exact
//! to floating-point and norms are preserved.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::autograd::Tensor;
use crate::checkpoint::atomic_write;
use crate::error::{Error, Result};
use crate::rng;

pub struct LatentCodec {
    /// Row-orthonormal `channels x channels` matrix.
    q: Vec<f64>,
    pub channels: usize,
}

impl LatentCodec {
    pub fn new(channels: usize, seed: u64) -> Self {
        let mut stream: ChaCha8Rng = rng::stream(seed, "latent-codec", 0);
        let mut q = rng::normal_vec(&mut stream, channels * channels);
        // modified Gram-Schmidt over rows
        for i in 0..channels {
            for j in 0..i {
                let dot: f64 = (0..channels)
                    .map(|k| q[i * channels + k] * q[j * channels + k])
                    .sum();
                for k in 0..channels {
                    q[i * channels + k] -= dot * q[j * channels + k];
                }
            }
            let norm: f64 = (0..channels)
                .map(|k| q[i * channels + k] * q[i * channels + k])
                .sum::<f64>()
                .sqrt();
            for k in 0..channels {
                q[i * channels + k] /= norm;
            }
        }
        LatentCodec { q, channels }
    }

    pub fn encode(&self, waveform: &[f64]) -> Result<Tensor> {
        if waveform.is_empty() || waveform.len() % self.channels != 0 {
            return Err(Error::Dim(format!(
                "codec: waveform length {} not divisible by frame size {}",
                waveform.len(),
                self.channels
            )));
        }
        let l = waveform.len() / self.channels;
        let c = self.channels;
        let mut data = vec![0.0; l * c];
        for frame in 0..l {
            let x = &waveform[frame * c..(frame + 1) * c];
            for row in 0..c {
                let mut s = 0.0;
                for k in 0..c {
                    s += self.q[row * c + k] * x[k];
                }
                data[frame * c + row] = s;
            }
        }
        Tensor::from_vec(&[l, c], data)
    }

    pub fn decode(&self, latent: &Tensor) -> Result<Vec<f64>> {
        let shape = latent.shape();
        if shape.len() != 2 || shape[1] != self.channels {
            return Err(Error::Dim(format!(
                "codec: latent {:?} vs {} channels",
                shape, self.channels
            )));
        }
        let (l, c) = (shape[0], shape[1]);
        let src = latent.data();
        let mut wave = vec![0.0; l * c];
        for frame in 0..l {
            let z = &src[frame * c..(frame + 1) * c];
            for k in 0..c {
                let mut s = 0.0;
                for row in 0..c {
                    s += self.q[row * c + k] * z[row];
                }
                wave[frame * c + k] = s;
            }
        }
        Ok(wave)
    }
}

// ---- waveform files: 8-byte header (magic + sample count), f32 LE data ----

const WAVE_MAGIC: &[u8; 4] = b"PTWF";

pub fn save_waveform(path: &Path, waveform: &[f64]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + waveform.len() * 4);
    out.extend_from_slice(WAVE_MAGIC);
    out.extend_from_slice(&(waveform.len() as u32).to_le_bytes());
    for &v in waveform {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    atomic_write(path, &out)
}

pub fn load_waveform(path: &Path) -> Result<Vec<f64>> {
    let bytes =
        fs::read(path).map_err(|e| Error::Data(format!("waveform {}: {e}", path.display())))?;
    if bytes.len() < 8 || &bytes[..4] != WAVE_MAGIC {
        return Err(Error::Data(format!("waveform {}: bad header", path.display())));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() != 8 + count * 4 {
        return Err(Error::Data(format!(
            "waveform {}: expected {count} samples",
            path.display()
        )));
    }
    Ok(bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect())
}
