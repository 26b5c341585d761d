//! Importance-map images and their overlap with the ground-truth motion.

use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Scenario;
use crate::policy::Phase;
use crate::trace::{RunTrace, SnapshotKind, Verbosity};

/// Pixels per token side in exported images.
pub const SCALE: u32 = 8;
const GAP: u32 = 2;

/// Inclusive global-step range; `None` ends are open.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepRange {
    pub from: Option<u64>,
    pub to: Option<u64>,
}

impl StepRange {
    pub fn contains(&self, g: u64) -> bool {
        self.from.is_none_or(|f| g >= f) && self.to.is_none_or(|t| g <= t)
    }
}

fn phase_of(trace: &RunTrace, chunk: u32, t: u32) -> Phase {
    trace
        .steps()
        .find(|s| s.chunk == chunk && s.t == t)
        .map_or(Phase::Uncached, |s| s.phase)
}

fn check_trace(trace: &RunTrace, scenario: &Scenario) -> Result<()> {
    trace.require_verbosity(Verbosity::Latents)?;
    if trace.header.shape != scenario.shape() || trace.header.num_chunks != scenario.num_chunks() {
        return Err(Error::invalid("trace and scenario shapes differ"));
    }
    Ok(())
}

/// One PNG per (weight snapshot, frame): `W`, the data magnitude and the
/// motion mask side by side. File names carry the step's phase label.
pub fn export_importance_frames(trace: &RunTrace, scenario: &Scenario, out_dir: &Path, range: StepRange) -> Result<Vec<PathBuf>> {
    check_trace(trace, scenario)?;
    std::fs::create_dir_all(out_dir)?;
    let shape = scenario.shape();
    let (h, w, hw) = (shape.height as u32, shape.width as u32, shape.tokens_per_frame());
    let panel_w = w * SCALE;
    let mut written = Vec::new();
    for snap in trace.snapshots_of(SnapshotKind::Weight) {
        if !range.contains(snap.global_step) {
            continue;
        }
        let chunk = snap.chunk as usize;
        let data = scenario.data(chunk);
        let magnitude: Vec<f64> = (0..shape.tokens()).map(|p| data.token(p).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        let peak = magnitude.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let phase = phase_of(trace, snap.chunk, snap.t);
        for f in 0..shape.frames {
            let motion = scenario.frame_motion(chunk * shape.frames + f);
            let mut img = GrayImage::new(3 * panel_w + 2 * GAP, h * SCALE);
            for q in 0..hw {
                let p = f * hw + q;
                let values = [
                    snap.data[p].clamp(0.0, 1.0),
                    magnitude[p] / peak,
                    if motion.get(q) { 1.0 } else { 0.0 },
                ];
                let (r, c) = ((q / shape.width) as u32, (q % shape.width) as u32);
                for (k, v) in values.iter().enumerate() {
                    let px = Luma([(v * 255.0).round() as u8]);
                    let x0 = k as u32 * (panel_w + GAP) + c * SCALE;
                    for dy in 0..SCALE {
                        for dx in 0..SCALE {
                            img.put_pixel(x0 + dx, r * SCALE + dy, px);
                        }
                    }
                }
            }
            let name = format!(
                "w_c{}_t{:03}_g{:04}_f{}_{}.png",
                snap.chunk,
                snap.t,
                snap.global_step,
                f,
                phase.label()
            );
            let path = out_dir.join(name);
            img.save(&path).map_err(|e| match e {
                image::ImageError::IoError(io) => Error::Io(io),
                other => Error::Format(other.to_string()),
            })?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Mean `W` inside and outside the chunk's motion mask at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    pub chunk: u32,
    pub t: u32,
    pub phase: Phase,
    pub inside: f64,
    pub outside: f64,
}

impl Localization {
    pub fn gap(&self) -> f64 {
        self.inside - self.outside
    }
}

/// Localization of every recorded weight map whose chunk has both moving
/// and static tokens.
pub fn weight_localization(trace: &RunTrace, scenario: &Scenario) -> Result<Vec<Localization>> {
    check_trace(trace, scenario)?;
    let mut out = Vec::new();
    for snap in trace.snapshots_of(SnapshotKind::Weight) {
        let mask = scenario.chunk_motion_mask(snap.chunk as usize);
        let (mut si, mut ni, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
        for (p, w) in snap.data.iter().enumerate() {
            if mask.get(p) {
                si += w;
                ni += 1;
            } else {
                so += w;
                no += 1;
            }
        }
        if ni == 0 || no == 0 {
            continue;
        }
        out.push(Localization {
            chunk: snap.chunk,
            t: snap.t,
            phase: phase_of(trace, snap.chunk, snap.t),
            inside: si / ni as f64,
            outside: so / no as f64,
        });
    }
    Ok(out)
}
