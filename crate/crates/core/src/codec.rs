//! Lossless toy video codec and bandwidth accounting.
//!
//! Intra frames code horizontal-predictor residuals, delta frames code the
//! pixelwise difference against the previous frame; both residual planes go
//! through the same `(value, run)` run-length stage. Runs are LEB128 varints so
//! a flat frame costs a handful of bytes. All arithmetic on pixels wraps mod 256.
//!
//! The analytic model reproduces published size/bitrate arithmetic where no
//! real encoder is available: `bytes = w * h * fps * seconds * bits_per_pixel / 8`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::scenario::Frame;
use crate::{Error, Result};

/// Bits per pixel that turn a 13 s, 30 fps 1080p clip into 1910 KB.
pub const BASELINE_BITS_PER_PIXEL: f64 = 1_910_000.0 * 8.0 / (1920.0 * 1080.0 * 30.0 * 13.0);
/// Bits per pixel that turn the same clip into 928 KB after filtering and compression.
pub const REDUCED_BITS_PER_PIXEL: f64 = 928_000.0 * 8.0 / (1920.0 * 1080.0 * 30.0 * 13.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameMode {
    Intra,
    Delta,
}

impl FrameMode {
    fn to_byte(self) -> u8 {
        match self {
            FrameMode::Intra => 0,
            FrameMode::Delta => 1,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(FrameMode::Intra),
            1 => Ok(FrameMode::Delta),
            other => Err(Error::Decode(format!("unknown frame mode byte {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedFrame {
    pub camera_id: u32,
    pub t: u32,
    pub width: u32,
    pub height: u32,
    pub mode: FrameMode,
    pub reference_t: Option<u32>,
    pub payload: Vec<u8>,
    /// CRC-32 of the source pixels.
    pub checksum: u32,
}

impl EncodedFrame {
    pub fn payload_len(&self) -> usize {
        self.payload.len()
    }
}

fn push_varint(out: &mut Vec<u8>, mut v: u64) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

fn read_varint(bytes: &[u8], pos: &mut usize) -> Result<u64> {
    let mut v = 0u64;
    for shift in (0..64).step_by(7) {
        let Some(&b) = bytes.get(*pos) else {
            return Err(Error::Decode("truncated run length".into()));
        };
        *pos += 1;
        v |= u64::from(b & 0x7f) << shift;
        if b & 0x80 == 0 {
            return Ok(v);
        }
    }
    Err(Error::Decode("run length overflows 64 bits".into()))
}

/// Run-length code a byte plane as `(value, varint run)` pairs.
pub fn rle_encode(data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < data.len() {
        let v = data[i];
        let start = i;
        while i < data.len() && data[i] == v {
            i += 1;
        }
        out.push(v);
        push_varint(&mut out, (i - start) as u64);
    }
    out
}

/// Inverse of [`rle_encode`]; the payload must expand to exactly `len` bytes.
pub fn rle_decode(payload: &[u8], len: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(len);
    let mut pos = 0;
    while pos < payload.len() {
        let value = payload[pos];
        pos += 1;
        let run = read_varint(payload, &mut pos)?;
        if run == 0 {
            return Err(Error::Decode("zero-length run".into()));
        }
        if run > (len - out.len()) as u64 {
            return Err(Error::Decode(format!(
                "run of {run} overruns a {len}-byte plane"
            )));
        }
        out.resize(out.len() + run as usize, value);
    }
    if out.len() != len {
        return Err(Error::Decode(format!(
            "payload expands to {} of {len} bytes",
            out.len()
        )));
    }
    Ok(out)
}

fn intra_residuals(frame: &Frame) -> Vec<u8> {
    let w = frame.width as usize;
    frame
        .pixels
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let left = if i % w == 0 { 0 } else { frame.pixels[i - 1] };
            p.wrapping_sub(left)
        })
        .collect()
}

fn intra_reconstruct(residuals: &[u8], width: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(residuals.len());
    for (i, &r) in residuals.iter().enumerate() {
        let left = if i % width == 0 { 0 } else { out[i - 1] };
        out.push(r.wrapping_add(left));
    }
    out
}

/// Encode `frame`, trying delta against `reference` when given; the smaller
/// payload wins and intra wins ties.
pub fn encode_frame(frame: &Frame, reference: Option<&Frame>) -> Result<EncodedFrame> {
    let intra = rle_encode(&intra_residuals(frame));
    let (mode, payload, reference_t) = match reference {
        Some(r) => {
            frame.same_shape(r)?;
            let diff: Vec<u8> = frame
                .pixels
                .iter()
                .zip(&r.pixels)
                .map(|(&p, &q)| p.wrapping_sub(q))
                .collect();
            let delta = rle_encode(&diff);
            if delta.len() < intra.len() {
                (FrameMode::Delta, delta, Some(r.t))
            } else {
                (FrameMode::Intra, intra, None)
            }
        }
        None => (FrameMode::Intra, intra, None),
    };
    Ok(EncodedFrame {
        camera_id: frame.camera_id,
        t: frame.t,
        width: frame.width,
        height: frame.height,
        mode,
        reference_t,
        payload,
        checksum: crc32fast::hash(&frame.pixels),
    })
}

/// Intra-only payload size; the unit of cost for masking comparisons.
pub fn intra_payload_len(frame: &Frame) -> usize {
    rle_encode(&intra_residuals(frame)).len()
}

pub fn decode_frame(enc: &EncodedFrame, reference: Option<&Frame>) -> Result<Frame> {
    let len = enc.width as usize * enc.height as usize;
    let residuals = rle_decode(&enc.payload, len)?;
    let pixels = match enc.mode {
        FrameMode::Intra => intra_reconstruct(&residuals, enc.width.max(1) as usize),
        FrameMode::Delta => {
            let r = reference.ok_or_else(|| {
                Error::Protocol(format!(
                    "delta frame t={} decoded without its reference",
                    enc.t
                ))
            })?;
            if (r.width, r.height) != (enc.width, enc.height) {
                return Err(Error::Shape(format!(
                    "reference {}x{} for a {}x{} delta frame",
                    r.width, r.height, enc.width, enc.height
                )));
            }
            residuals
                .iter()
                .zip(&r.pixels)
                .map(|(&d, &q)| d.wrapping_add(q))
                .collect()
        }
    };
    let actual = crc32fast::hash(&pixels);
    if actual != enc.checksum {
        return Err(Error::Checksum {
            expected: enc.checksum,
            actual,
        });
    }
    Frame::new(enc.camera_id, enc.t, enc.width, enc.height, pixels)
}

/// Encode one camera's frames in order, each delta candidate referencing the
/// previous frame of the stream.
pub fn encode_stream(frames: &[Frame]) -> Result<Vec<EncodedFrame>> {
    let mut out = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        if let Some(first) = frames.first() {
            if f.camera_id != first.camera_id {
                return Err(Error::Argument(format!(
                    "stream mixes cameras {} and {}",
                    first.camera_id, f.camera_id
                )));
            }
        }
        let reference = i.checked_sub(1).map(|j| &frames[j]);
        out.push(encode_frame(f, reference)?);
    }
    Ok(out)
}

/// Decode a stream produced by [`encode_stream`].
pub fn decode_stream(encoded: &[EncodedFrame]) -> Result<Vec<Frame>> {
    let mut out: Vec<Frame> = Vec::with_capacity(encoded.len());
    for enc in encoded {
        let reference = match enc.reference_t {
            Some(rt) => {
                let r = out.iter().rev().find(|f| f.t == rt).ok_or_else(|| {
                    Error::Protocol(format!("frame t={} references unseen t={rt}", enc.t))
                })?;
                Some(r)
            }
            None => None,
        };
        let frame = decode_frame(enc, reference)?;
        out.push(frame);
    }
    Ok(out)
}

pub const STREAM_MAGIC: &[u8; 4] = b"XCRL";
pub const STREAM_VERSION: u8 = 1;

/// Serialize a single-camera stream into the container format (all integers
/// little-endian):
///
/// ```text
/// header : magic "XCRL" | version u8 | camera_id u32 | width u32 | height u32 | record_count u32
/// record : t u32 | mode u8 | reference_offset u32 | payload_len u32 | payload | crc32 u32
/// ```
///
/// `reference_offset` counts records back to the reference (0 for intra).
pub fn write_stream(encoded: &[EncodedFrame]) -> Result<Vec<u8>> {
    let (camera_id, width, height) = match encoded.first() {
        Some(e) => (e.camera_id, e.width, e.height),
        None => (0, 0, 0),
    };
    let mut out = Vec::new();
    out.extend_from_slice(STREAM_MAGIC);
    out.push(STREAM_VERSION);
    for v in [camera_id, width, height, encoded.len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (i, e) in encoded.iter().enumerate() {
        if (e.camera_id, e.width, e.height) != (camera_id, width, height) {
            return Err(Error::Argument(format!(
                "record {i} does not match the stream camera or dimensions"
            )));
        }
        let offset = match e.reference_t {
            None => 0,
            Some(rt) => {
                let j = encoded[..i]
                    .iter()
                    .rposition(|p| p.t == rt)
                    .ok_or_else(|| {
                        Error::Protocol(format!("record {i} references unseen t={rt}"))
                    })?;
                (i - j) as u32
            }
        };
        out.extend_from_slice(&e.t.to_le_bytes());
        out.push(e.mode.to_byte());
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&(e.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&e.payload);
        out.extend_from_slice(&e.checksum.to_le_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Decode(format!("stream truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parse a container written by [`write_stream`].
pub fn read_stream(bytes: &[u8]) -> Result<Vec<EncodedFrame>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != STREAM_MAGIC {
        return Err(Error::Decode("bad stream magic".into()));
    }
    let version = c.u8()?;
    if version != STREAM_VERSION {
        return Err(Error::Protocol(format!(
            "unsupported stream version {version}"
        )));
    }
    let camera_id = c.u32()?;
    let width = c.u32()?;
    let height = c.u32()?;
    let count = c.u32()? as usize;
    let mut out: Vec<EncodedFrame> = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let t = c.u32()?;
        let mode = FrameMode::from_byte(c.u8()?)?;
        let offset = c.u32()? as usize;
        let len = c.u32()? as usize;
        let payload = c.take(len)?.to_vec();
        let checksum = c.u32()?;
        let reference_t = match (mode, offset) {
            (FrameMode::Intra, 0) => None,
            (FrameMode::Delta, o) if o >= 1 && o <= i => Some(out[i - o].t),
            _ => {
                return Err(Error::Protocol(format!(
                    "record {i}: invalid reference offset {offset} for {mode:?}"
                )))
            }
        };
        out.push(EncodedFrame {
            camera_id,
            t,
            width,
            height,
            mode,
            reference_t,
            payload,
            checksum,
        });
    }
    if c.pos != bytes.len() {
        return Err(Error::Decode(format!(
            "{} trailing bytes after last record",
            bytes.len() - c.pos
        )));
    }
    Ok(out)
}

/// Stream size in bytes as it would go on the wire.
pub fn stream_size(encoded: &[EncodedFrame]) -> u64 {
    const HEADER: u64 = 4 + 1 + 4 * 4;
    const RECORD: u64 = 4 + 1 + 4 + 4 + 4;
    HEADER
        + encoded
            .iter()
            .map(|e| RECORD + e.payload.len() as u64)
            .sum::<u64>()
}

/// Analytic clip size in bytes. Zero duration yields zero bytes.
pub fn analytic_size(
    width: u32,
    height: u32,
    fps: f64,
    duration_s: f64,
    bits_per_pixel: f64,
) -> Result<f64> {
    if width == 0 || height == 0 {
        return Err(Error::Config(format!("frame size {width}x{height}")));
    }
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(Error::Config(format!("fps must be positive, got {fps}")));
    }
    if !(bits_per_pixel > 0.0 && bits_per_pixel.is_finite()) {
        return Err(Error::Config(format!(
            "bits per pixel must be positive, got {bits_per_pixel}"
        )));
    }
    if !(duration_s >= 0.0 && duration_s.is_finite()) {
        return Err(Error::Config(format!(
            "duration must be non-negative, got {duration_s}"
        )));
    }
    Ok(f64::from(width) * f64::from(height) * fps * duration_s * bits_per_pixel / 8.0)
}

/// Percentage reduction from `before` to `after`.
pub fn reduction_pct(before: f64, after: f64) -> f64 {
    if before == 0.0 {
        return 0.0;
    }
    100.0 * (before - after) / before
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkModel {
    pub uplink_kbps: f64,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for LinkModel {
    fn default() -> Self {
        Self {
            uplink_kbps: 5000.0,
            fps: 30.0,
            width: 1920,
            height: 1080,
        }
    }
}

impl LinkModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.uplink_kbps > 0.0 && self.uplink_kbps.is_finite()) {
            return Err(Error::Config(format!(
                "uplink_kbps must be positive, got {}",
                self.uplink_kbps
            )));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Config(format!(
                "fps must be positive, got {}",
                self.fps
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("link frame size has a zero side".into()));
        }
        Ok(())
    }
}

/// Pipeline stages that bytes are attributed to, in processing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Raw,
    Filtered,
    Compressed,
    Masked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmissionReport {
    pub total_bytes: f64,
    pub duration_s: f64,
    pub bitrate_kbps: f64,
    pub utilization_pct: f64,
    pub uplink_kbps: f64,
    pub per_stage_bytes: BTreeMap<Stage, f64>,
}

/// Build a report from per-stage byte counts; the transmitted total is the
/// latest stage present.
pub fn transmission_report(
    per_stage_bytes: &BTreeMap<Stage, f64>,
    duration_s: f64,
    link: &LinkModel,
) -> Result<TransmissionReport> {
    link.validate()?;
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::Config(format!(
            "transmission duration must be positive, got {duration_s}"
        )));
    }
    if let Some((stage, b)) = per_stage_bytes.iter().find(|(_, b)| !(**b >= 0.0)) {
        return Err(Error::Config(format!("{stage:?} has {b} bytes")));
    }
    let total_bytes = per_stage_bytes.values().last().copied().unwrap_or(0.0);
    let bitrate_kbps = total_bytes * 8.0 / 1000.0 / duration_s;
    Ok(TransmissionReport {
        total_bytes,
        duration_s,
        bitrate_kbps,
        utilization_pct: 100.0 * bitrate_kbps / link.uplink_kbps,
        uplink_kbps: link.uplink_kbps,
        per_stage_bytes: per_stage_bytes.clone(),
    })
}
