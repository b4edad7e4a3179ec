//! Minimal RIFF/WAVE reader and 16-bit writer.
//!
//! Reads integer PCM (8/16/24/32-bit) and 32-bit IEEE float, including the
//! WAVE_FORMAT_EXTENSIBLE wrapper. Multi-channel audio is averaged to mono.

use std::fs;
use std::path::Path;

use super::{AudioClip, AudioError, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

struct Fmt {
    format: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let bytes = fs::read(path).map_err(|source| AudioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_wav(&bytes).map_err(|reason| match reason {
        ParseError::Empty => AudioError::EmptyRecording,
        ParseError::Invalid(reason) => AudioError::Format {
            path: path.to_path_buf(),
            reason,
        },
    })
}

#[derive(Debug)]
enum ParseError {
    Empty,
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ParseError {
    ParseError::Invalid(msg.into())
}

fn parse_wav(bytes: &[u8]) -> std::result::Result<AudioClip, ParseError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(invalid("not a RIFF/WAVE file"));
    }
    let mut fmt = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = le_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start.checked_add(size).ok_or_else(|| invalid("chunk size overflow"))?;
        if body_end > bytes.len() {
            return Err(invalid(format!(
                "chunk {:?} truncated: declares {size} bytes, {} available",
                String::from_utf8_lossy(id),
                bytes.len() - body_start
            )));
        }
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(invalid("fmt chunk too short"));
                }
                let mut format = le_u16(body, 0);
                if format == FORMAT_EXTENSIBLE {
                    if body.len() < 26 {
                        return Err(invalid("extensible fmt chunk too short"));
                    }
                    format = le_u16(body, 24);
                }
                fmt = Some(Fmt {
                    format,
                    channels: le_u16(body, 2),
                    sample_rate: le_u32(body, 4),
                    bits: le_u16(body, 14),
                });
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
    }
    let fmt = fmt.ok_or_else(|| invalid("missing fmt chunk"))?;
    let data = data.ok_or_else(|| invalid("missing data chunk"))?;
    if fmt.channels == 0 {
        return Err(invalid("zero channels"));
    }
    if fmt.sample_rate == 0 {
        return Err(invalid("zero sample rate"));
    }
    let decode: fn(&[u8]) -> f64 = match (fmt.format, fmt.bits) {
        (FORMAT_PCM, 8) => |b| (b[0] as f64 - 128.0) / 128.0,
        (FORMAT_PCM, 16) => |b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0,
        (FORMAT_PCM, 24) => |b| (i32::from_le_bytes([0, b[0], b[1], b[2]]) >> 8) as f64 / 8_388_608.0,
        (FORMAT_PCM, 32) => |b| i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64 / 2_147_483_648.0,
        (FORMAT_FLOAT, 32) => |b| (f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).clamp(-1.0, 1.0),
        (format, bits) => {
            return Err(invalid(format!(
                "unsupported encoding: format tag {format}, {bits} bits per sample"
            )))
        }
    };
    let width = fmt.bits as usize / 8;
    let frame = width * fmt.channels as usize;
    if data.len() % frame != 0 {
        return Err(invalid(format!(
            "data chunk of {} bytes is not a whole number of {frame}-byte frames",
            data.len()
        )));
    }
    if data.is_empty() {
        return Err(ParseError::Empty);
    }
    let channels = fmt.channels as f64;
    let samples = data
        .chunks_exact(frame)
        .map(|f| f.chunks_exact(width).map(decode).sum::<f64>() / channels)
        .collect();
    AudioClip::new(samples, fmt.sample_rate).map_err(|e| invalid(e.to_string()))
}

/// Writes a mono 16-bit PCM file. Samples are clamped to `[-1, 1]`.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let n = clip.samples.len();
    let data_len = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate_hz * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &clip.samples {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    fs::write(path, out).map_err(|source| AudioError::Io {
        path: path.to_path_buf(),
        source,
    })
}
