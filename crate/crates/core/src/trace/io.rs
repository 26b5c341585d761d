//! `MCTR` binary container.
//!
//! Layout (little-endian): `b"MCTR"`, `u32` version, then records of
//! `u8` tag, `u32` payload length, payload. Tag 1 is a step record, tag 2 a
//! tensor snapshot and tag 255 an optional end marker.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::analysis::flops::StepFlops;
use crate::error::{Error, Result};
use crate::policy::{Phase, StepMode};
use crate::tensor::TokenMask;

use super::{RunTrace, Snapshot, SnapshotKind, StepRecord, TraceHeader, TraceRecord};

pub const MAGIC: &[u8; 4] = b"MCTR";
pub const VERSION: u32 = 1;

const TAG_STEP: u8 = 1;
const TAG_SNAPSHOT: u8 = 2;
const TAG_END: u8 = 255;

fn encode_step(r: &StepRecord) -> Vec<u8> {
    let mut b = Vec::with_capacity(64 + r.mask.len() / 8);
    b.extend(r.global_step.to_le_bytes());
    b.extend(r.chunk.to_le_bytes());
    b.extend(r.t.to_le_bytes());
    b.extend(r.step_in_window.to_le_bytes());
    b.push(r.mode.code());
    b.push(r.phase.code());
    match r.delta {
        Some(d) => {
            b.push(1);
            b.extend(d.to_bits().to_le_bytes());
        }
        None => {
            b.push(0);
            b.extend(0u64.to_le_bytes());
        }
    }
    for v in [r.active_count, r.tokens, r.n_kv, r.kv_projected, r.full_count] {
        b.extend(v.to_le_bytes());
    }
    b.extend(r.mask.to_bitmap());
    for v in [r.flops.attention, r.flops.attn_gemm, r.flops.ffn_gemm, r.flops.reuse] {
        b.extend(v.to_le_bytes());
    }
    b
}

fn encode_snapshot(s: &Snapshot) -> Vec<u8> {
    let mut b = Vec::with_capacity(24 + 4 * s.dims.len() + 8 * s.data.len());
    b.extend(s.chunk.to_le_bytes());
    b.extend(s.t.to_le_bytes());
    b.extend(s.global_step.to_le_bytes());
    b.push(s.kind.code());
    b.push(s.dims.len() as u8);
    for d in &s.dims {
        b.extend(d.to_le_bytes());
    }
    for v in &s.data {
        b.extend(v.to_le_bytes());
    }
    b
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("record payload truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!("{} trailing bytes in record", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn decode_step(payload: &[u8]) -> Result<StepRecord> {
    let mut c = Cursor { buf: payload, pos: 0 };
    let global_step = c.u64()?;
    let chunk = c.u32()?;
    let t = c.u32()?;
    let step_in_window = c.u32()?;
    let mode = StepMode::from_code(c.u8()?).ok_or_else(|| Error::Format("unknown step mode".into()))?;
    let phase = Phase::from_code(c.u8()?).ok_or_else(|| Error::Format("unknown phase".into()))?;
    let has_delta = c.u8()?;
    let bits = c.u64()?;
    let delta = match has_delta {
        0 => None,
        1 => Some(f64::from_bits(bits)),
        _ => return Err(Error::Format("bad delta flag".into())),
    };
    let active_count = c.u32()?;
    let tokens = c.u32()?;
    let n_kv = c.u32()?;
    let kv_projected = c.u32()?;
    let full_count = c.u32()?;
    let mask = TokenMask::from_bitmap(tokens as usize, c.take((tokens as usize).div_ceil(8))?)
        .map_err(|e| Error::Format(e.to_string()))?;
    let flops = StepFlops {
        attention: c.u64()?,
        attn_gemm: c.u64()?,
        ffn_gemm: c.u64()?,
        reuse: c.u64()?,
    };
    c.finish()?;
    Ok(StepRecord {
        global_step,
        chunk,
        t,
        step_in_window,
        mode,
        phase,
        delta,
        active_count,
        tokens,
        n_kv,
        kv_projected,
        full_count,
        mask,
        flops,
    })
}

fn decode_snapshot(payload: &[u8]) -> Result<Snapshot> {
    let mut c = Cursor { buf: payload, pos: 0 };
    let chunk = c.u32()?;
    let t = c.u32()?;
    let global_step = c.u64()?;
    let kind = SnapshotKind::from_code(c.u8()?).ok_or_else(|| Error::Format("unknown snapshot kind".into()))?;
    let rank = c.u8()? as usize;
    let dims = (0..rank).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .ok_or_else(|| Error::Format("snapshot size overflows".into()))?;
    let raw = c.take(n.checked_mul(8).ok_or_else(|| Error::Format("snapshot size overflows".into()))?)?;
    let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    c.finish()?;
    Ok(Snapshot {
        chunk,
        t,
        global_step,
        kind,
        dims,
        data,
    })
}

fn write_record(w: &mut impl Write, tag: u8, payload: &[u8]) -> Result<()> {
    let len = u32::try_from(payload.len()).map_err(|_| Error::Format("record exceeds 4 GiB".into()))?;
    w.write_all(&[tag])?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(payload)?;
    Ok(())
}

pub fn write_records(mut w: impl Write, records: &[TraceRecord]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for r in records {
        match r {
            TraceRecord::Step(s) => write_record(&mut w, TAG_STEP, &encode_step(s))?,
            TraceRecord::Snapshot(s) => write_record(&mut w, TAG_SNAPSHOT, &encode_snapshot(s))?,
        }
    }
    write_record(&mut w, TAG_END, &[])?;
    w.flush()?;
    Ok(())
}

pub fn read_records(mut r: impl Read) -> Result<Vec<TraceRecord>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() < 8 || &buf[..4] != MAGIC {
        return Err(Error::Format("missing MCTR magic".into()));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported trace version {version}")));
    }
    let mut c = Cursor { buf: &buf, pos: 8 };
    let mut out = Vec::new();
    while c.pos < buf.len() {
        let tag = c.u8()?;
        let len = c.u32()? as usize;
        let payload = c.take(len)?;
        match tag {
            TAG_STEP => out.push(TraceRecord::Step(decode_step(payload)?)),
            TAG_SNAPSHOT => out.push(TraceRecord::Snapshot(decode_snapshot(payload)?)),
            TAG_END => {
                if c.pos != buf.len() {
                    return Err(Error::Format("data after end marker".into()));
                }
            }
            other => return Err(Error::Format(format!("unknown record tag {other}"))),
        }
    }
    Ok(out)
}

pub fn write_header(mut w: impl Write, header: &TraceHeader) -> Result<()> {
    let json = serde_json::to_string_pretty(header).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(json.as_bytes())?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_header(r: impl Read) -> Result<TraceHeader> {
    serde_json::from_reader(r).map_err(|e| Error::Format(format!("trace header: {e}")))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes `path` and its `path.json` header sidecar.
pub fn write_trace(path: &Path, trace: &RunTrace) -> Result<()> {
    write_records(BufWriter::new(File::create(path)?), &trace.records)?;
    write_header(BufWriter::new(File::create(sidecar(path))?), &trace.header)
}

pub fn read_trace(path: &Path) -> Result<RunTrace> {
    let records = read_records(BufReader::new(File::open(path)?))?;
    let header = read_header(BufReader::new(File::open(sidecar(path))?))?;
    Ok(RunTrace { header, records })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(tokens: usize) -> StepRecord {
        StepRecord {
            global_step: 7,
            chunk: 1,
            t: 33,
            step_in_window: 17,
            mode: StepMode::TokenSparse,
            phase: Phase::Phase2,
            delta: Some(0.012345),
            active_count: 3,
            tokens: tokens as u32,
            n_kv: 2 * tokens as u32,
            kv_projected: 3,
            full_count: 6,
            mask: TokenMask::from_indices(tokens, &[0, 5, tokens - 1]).unwrap(),
            flops: StepFlops {
                attention: 1,
                attn_gemm: 2,
                ffn_gemm: 3,
                reuse: 4,
            },
        }
    }

    #[test]
    fn records_round_trip() {
        let snap = Snapshot {
            chunk: 0,
            t: 5,
            global_step: 2,
            kind: SnapshotKind::Weight,
            dims: vec![2, 1, 3],
            data: vec![0.5, -0.0, f64::MIN_POSITIVE, 1e300, -3.25, 0.1],
        };
        let mut none = step(11);
        none.delta = None;
        let records = vec![
            TraceRecord::Step(step(11)),
            TraceRecord::Snapshot(snap),
            TraceRecord::Step(none),
        ];
        let mut buf = Vec::new();
        write_records(&mut buf, &records).unwrap();
        assert_eq!(&buf[..4], b"MCTR");
        assert_eq!(read_records(buf.as_slice()).unwrap(), records);
    }

    #[test]
    fn rejects_corruption() {
        let mut buf = Vec::new();
        write_records(&mut buf, &[TraceRecord::Step(step(9))]).unwrap();
        assert!(read_records(&buf[..buf.len() - 9]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_records(bad.as_slice()).is_err());
        let mut v2 = buf.clone();
        v2[4] = 2;
        assert!(read_records(v2.as_slice()).is_err());
    }
}
