//! Synthetic latent videos with known ground-truth motion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor, TokenMask};

/// RNG streams derived from one run seed.
pub(crate) mod stream {
    pub const TEXTURE: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const FIELD: u64 = 3;
    pub const PERMUTATION: u64 = 4;
    pub const MASK: u64 = 5;
}

/// Deterministic ChaCha stream `(seed, purpose, index)`.
pub(crate) fn rng_for(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 32) | (index & 0xffff_ffff));
    rng
}

fn default_frames() -> usize {
    4
}
fn default_chunks() -> usize {
    2
}
fn default_side() -> usize {
    12
}
fn default_channels() -> usize {
    4
}
fn default_start() -> [f64; 2] {
    [4.0, 3.0]
}
fn default_velocity() -> [f64; 2] {
    [0.5, 1.0]
}
fn default_radius() -> f64 {
    2.5
}
fn default_amplitude() -> f64 {
    12.0
}
fn default_background() -> f64 {
    0.5
}
fn default_noise_scale() -> f64 {
    1.0
}

/// Moving truncated-Gaussian bump over a static plane-wave texture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MovingBlobParams {
    #[serde(default = "default_frames")]
    pub frames_per_chunk: usize,
    #[serde(default = "default_chunks")]
    pub num_chunks: usize,
    #[serde(default = "default_side")]
    pub height: usize,
    #[serde(default = "default_side")]
    pub width: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    /// Blob centre `(row, col)` at global frame 0.
    #[serde(default = "default_start")]
    pub blob_start: [f64; 2],
    /// Centre displacement per frame, in tokens.
    #[serde(default = "default_velocity")]
    pub blob_velocity: [f64; 2],
    /// Support radius; the bump is exactly zero at and beyond it.
    #[serde(default = "default_radius")]
    pub blob_radius: f64,
    #[serde(default = "default_amplitude")]
    pub blob_amplitude: f64,
    #[serde(default = "default_background")]
    pub background_amplitude: f64,
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
    /// AR(1) correlation of the noise between consecutive frames of a chunk.
    #[serde(default)]
    pub noise_temporal_correlation: f64,
}

impl Default for MovingBlobParams {
    fn default() -> Self {
        MovingBlobParams {
            frames_per_chunk: default_frames(),
            num_chunks: default_chunks(),
            height: default_side(),
            width: default_side(),
            channels: default_channels(),
            blob_start: default_start(),
            blob_velocity: default_velocity(),
            blob_radius: default_radius(),
            blob_amplitude: default_amplitude(),
            background_amplitude: default_background(),
            noise_scale: default_noise_scale(),
            noise_temporal_correlation: 0.0,
        }
    }
}

impl MovingBlobParams {
    pub fn shape(&self) -> Result<Shape> {
        Shape::new(self.frames_per_chunk, self.height, self.width, self.channels)
    }

    pub fn total_frames(&self) -> usize {
        self.frames_per_chunk * self.num_chunks
    }

    pub fn center(&self, frame: usize) -> [f64; 2] {
        [
            self.blob_start[0] + self.blob_velocity[0] * frame as f64,
            self.blob_start[1] + self.blob_velocity[1] * frame as f64,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        self.shape()?;
        if self.num_chunks == 0 {
            return Err(Error::invalid("num_chunks must be >= 1"));
        }
        let min_side = self.height.min(self.width) as f64;
        if !(self.blob_radius > 0.0) || self.blob_radius >= min_side / 2.0 {
            return Err(Error::invalid(format!(
                "blob radius {} must lie in (0, min(H, W)/2 = {})",
                self.blob_radius,
                min_side / 2.0
            )));
        }
        if !(-1.0..1.0).contains(&self.noise_temporal_correlation) {
            return Err(Error::invalid("noise_temporal_correlation must lie in (-1, 1)"));
        }
        for f in 0..self.total_frames() {
            let [r, c] = self.center(f);
            if !(0.0..=(self.height - 1) as f64).contains(&r) || !(0.0..=(self.width - 1) as f64).contains(&c) {
                return Err(Error::invalid(format!(
                    "blob centre ({r}, {c}) leaves the {}x{} frame at frame {f}",
                    self.height, self.width
                )));
            }
        }
        Ok(())
    }
}

/// Clean data, initial noise and ground truth for a multi-chunk video.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    shape: Shape,
    data: Vec<Tensor>,
    noise: Vec<Tensor>,
    /// Per global frame, tokens whose data differ from the previous frame.
    /// Frame 0 has no predecessor and an empty mask.
    frame_motion: Vec<TokenMask>,
}

impl Scenario {
    /// Builds a scenario from explicit tensors; motion masks are derived by
    /// differencing consecutive frames.
    pub fn from_tensors(data: Vec<Tensor>, noise: Vec<Tensor>) -> Result<Self> {
        if data.is_empty() || data.len() != noise.len() {
            return Err(Error::invalid("need matching, non-empty data and noise chunk lists"));
        }
        let shape = data[0].shape();
        for (d, n) in data.iter().zip(&noise) {
            d.ensure_same_shape(&data[0], "scenario data")?;
            n.ensure_same_shape(&data[0], "scenario noise")?;
            d.check_finite("scenario data")?;
            n.check_finite("scenario noise")?;
        }
        let frame_motion = derive_motion(shape, &data);
        Ok(Scenario {
            shape,
            data,
            noise,
            frame_motion,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn num_chunks(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self, chunk: usize) -> &Tensor {
        &self.data[chunk]
    }

    pub fn data_chunks(&self) -> &[Tensor] {
        &self.data
    }

    pub fn noise(&self, chunk: usize) -> &Tensor {
        &self.noise[chunk]
    }

    pub fn frame_motion(&self, global_frame: usize) -> &TokenMask {
        &self.frame_motion[global_frame]
    }

    /// Motion mask over the `F·H·W` tokens of `chunk`. Frame 0 of a later
    /// chunk compares against the last frame of the chunk before it.
    pub fn chunk_motion_mask(&self, chunk: usize) -> TokenMask {
        let f_count = self.shape.frames;
        let bits = (0..f_count)
            .flat_map(|f| self.frame_motion[chunk * f_count + f].bits().to_vec())
            .collect();
        TokenMask::from_bits(bits)
    }

    /// SHA-256 over shape, data and noise.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for v in [self.shape.frames, self.shape.height, self.shape.width, self.shape.channels] {
            h.update((v as u64).to_le_bytes());
        }
        for t in self.data.iter().chain(&self.noise) {
            h.update(t.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

fn derive_motion(shape: Shape, data: &[Tensor]) -> Vec<TokenMask> {
    let hw = shape.tokens_per_frame();
    let c = shape.channels;
    let frames: Vec<&[f64]> = data
        .iter()
        .flat_map(|d| (0..shape.frames).map(move |f| d.frame(f)))
        .collect();
    let mut out = vec![TokenMask::none(hw)];
    for g in 1..frames.len() {
        let bits = (0..hw)
            .map(|p| {
                frames[g][p * c..(p + 1) * c]
                    .iter()
                    .zip(&frames[g - 1][p * c..(p + 1) * c])
                    .any(|(a, b)| (a - b).abs() > 0.0)
            })
            .collect();
        out.push(TokenMask::from_bits(bits));
    }
    out
}

/// Truncated Gaussian bump with unit peak that vanishes at `radius`.
fn bump(dist: f64, radius: f64) -> f64 {
    if dist >= radius {
        return 0.0;
    }
    let s2 = 2.0 * (radius / 2.0).powi(2);
    let floor = (-radius * radius / s2).exp();
    ((-dist * dist / s2).exp() - floor) / (1.0 - floor)
}

/// Generates the moving-blob video and its noise, deterministic in `seed`.
pub fn generate_moving_blob(params: &MovingBlobParams, seed: u64) -> Result<Scenario> {
    params.validate()?;
    let shape = params.shape()?;
    let (h, w, c) = (params.height, params.width, params.channels);

    // Static texture: three plane waves per channel.
    let mut tex_rng = rng_for(seed, stream::TEXTURE, 0);
    let waves: Vec<[f64; 4]> = (0..c * 3)
        .map(|_| {
            let kr = tex_rng.random_range(0.2..0.9);
            let kc = tex_rng.random_range(0.2..0.9);
            let phase = tex_rng.random_range(0.0..std::f64::consts::TAU);
            let amp = tex_rng.random_range(0.5..1.0);
            [kr, kc, phase, amp]
        })
        .collect();
    let mut gain: Vec<f64> = (0..c).map(|_| tex_rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = gain.iter().map(|g| g * g).sum::<f64>().sqrt().max(1e-12);
    for g in &mut gain {
        *g *= (c as f64).sqrt() / norm;
    }
    let texture: Vec<f64> = (0..h * w)
        .flat_map(|p| {
            let (r, col) = ((p / w) as f64, (p % w) as f64);
            let waves = &waves;
            (0..c).map(move |ch| {
                waves[ch * 3..ch * 3 + 3]
                    .iter()
                    .map(|[kr, kc, ph, a]| a * (kr * r + kc * col + ph).sin())
                    .sum::<f64>()
                    / 3.0
            })
        })
        .collect();

    let mut data = Vec::with_capacity(params.num_chunks);
    let mut noise = Vec::with_capacity(params.num_chunks);
    let rho = params.noise_temporal_correlation;
    let innovation = (1.0 - rho * rho).sqrt();
    for chunk in 0..params.num_chunks {
        let mut d = Vec::with_capacity(shape.len());
        for f in 0..params.frames_per_chunk {
            let [cr, cc] = params.center(chunk * params.frames_per_chunk + f);
            for p in 0..h * w {
                let (r, col) = ((p / w) as f64, (p % w) as f64);
                let b = bump(((r - cr).powi(2) + (col - cc).powi(2)).sqrt(), params.blob_radius);
                for ch in 0..c {
                    d.push(params.background_amplitude * texture[p * c + ch] + params.blob_amplitude * gain[ch] * b);
                }
            }
        }
        data.push(Tensor::new(shape, d)?);

        let mut rng = rng_for(seed, stream::NOISE, chunk as u64);
        let per_frame = h * w * c;
        let mut n = vec![0.0; shape.len()];
        for f in 0..params.frames_per_chunk {
            for k in 0..per_frame {
                let z: f64 = rng.sample(StandardNormal);
                n[f * per_frame + k] = if f == 0 {
                    z
                } else {
                    rho * n[(f - 1) * per_frame + k] + innovation * z
                };
            }
        }
        for v in &mut n {
            *v *= params.noise_scale;
        }
        noise.push(Tensor::new(shape, n)?);
    }
    Scenario::from_tensors(data, noise)
}
