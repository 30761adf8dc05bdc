//! WPHS stack files and JSON report/label documents.
//!
//! WPHS layout (all integers little-endian):
//!
//! | offset | size      | field                          |
//! |--------|-----------|--------------------------------|
//! | 0      | 4         | magic `WPHS`                   |
//! | 4      | 1         | version = 1                    |
//! | 5      | 1         | dtype = 0 (f32 LE)             |
//! | 6      | 2         | reserved = 0                   |
//! | 8      | 4         | width                          |
//! | 12     | 4         | height                         |
//! | 16     | 4         | frame_count                    |
//! | 20     | w·h       | mask bytes (1 valid, 0 invalid)|
//! | 20+w·h | 4·w·h·N   | frames, row-major              |

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase::{wrap_angle, ApertureMask, PhaseFrame, PhaseStack};
use crate::pipeline::{PipelineParams, StageTimes, SurfaceReport};
use crate::synth::TrialLabels;

pub const MAGIC: &[u8; 4] = b"WPHS";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 0;
pub const HEADER_LEN: usize = 20;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Fixed-size WPHS header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WphsHeader {
    pub version: u8,
    pub dtype: u8,
    pub width: u32,
    pub height: u32,
    pub frame_count: u32,
}

impl WphsHeader {
    /// Expected file length in bytes.
    pub fn file_len(&self) -> u64 {
        let px = self.width as u64 * self.height as u64;
        HEADER_LEN as u64 + px + 4 * px * self.frame_count as u64
    }
}

fn parse_err(offset: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

/// Parse and validate the header, including the total length.
pub fn decode_header(bytes: &[u8]) -> Result<WphsHeader> {
    if bytes.len() < HEADER_LEN {
        return Err(parse_err(
            bytes.len() as u64,
            format!("truncated at offset {}", bytes.len()),
        ));
    }
    if &bytes[0..4] != MAGIC {
        return Err(parse_err(0, "bad magic, expected WPHS"));
    }
    if bytes[4] != VERSION {
        return Err(parse_err(4, format!("unsupported version {}", bytes[4])));
    }
    if bytes[5] != DTYPE_F32 {
        return Err(parse_err(5, format!("unsupported dtype {}", bytes[5])));
    }
    let header = WphsHeader {
        version: bytes[4],
        dtype: bytes[5],
        width: u32_at(bytes, 8),
        height: u32_at(bytes, 12),
        frame_count: u32_at(bytes, 16),
    };
    let expected = header.file_len();
    let actual = bytes.len() as u64;
    if actual < expected {
        return Err(parse_err(actual, format!("truncated at offset {actual}")));
    }
    if actual > expected {
        return Err(parse_err(
            expected,
            format!("{} trailing bytes at offset {expected}", actual - expected),
        ));
    }
    Ok(header)
}

/// Decode a complete WPHS byte buffer.
pub fn decode_stack(bytes: &[u8]) -> Result<PhaseStack> {
    let header = decode_header(bytes)?;
    if header.frame_count == 0 {
        return Err(parse_err(16, "frame_count is 0"));
    }
    let (w, h) = (header.width as usize, header.height as usize);
    let px = w * h;
    let mut valid = Vec::with_capacity(px);
    for (i, &b) in bytes[HEADER_LEN..HEADER_LEN + px].iter().enumerate() {
        match b {
            0 => valid.push(false),
            1 => valid.push(true),
            _ => {
                return Err(parse_err(
                    (HEADER_LEN + i) as u64,
                    format!("mask byte {b} is neither 0 nor 1"),
                ))
            }
        }
    }
    let mask =
        ApertureMask::new(w, h, valid).map_err(|e| parse_err(HEADER_LEN as u64, e.to_string()))?;
    let base = HEADER_LEN + px;
    let mut frames = Vec::with_capacity(header.frame_count as usize);
    for k in 0..header.frame_count as usize {
        let mut values = Vec::with_capacity(px);
        for i in 0..px {
            let at = base + 4 * (k * px + i);
            let v = f32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice")) as f64;
            if !mask.valid()[i] {
                values.push(0.0);
            } else if v.is_finite() {
                values.push(wrap_angle(v));
            } else {
                return Err(parse_err(
                    at as u64,
                    format!("non-finite value {v} in valid pixel"),
                ));
            }
        }
        frames.push(
            PhaseFrame::new(w, h, values).map_err(|e| parse_err(base as u64, e.to_string()))?,
        );
    }
    PhaseStack::new(frames, mask)
}

/// Encode a stack. Values are narrowed to f32; invalid pixels store their
/// in-memory value.
pub fn encode_stack(stack: &PhaseStack) -> Vec<u8> {
    let (w, h) = (stack.width(), stack.height());
    let px = w * h;
    let mut out = Vec::with_capacity(HEADER_LEN + px + 4 * px * stack.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(DTYPE_F32);
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(stack.len() as u32).to_le_bytes());
    out.extend(stack.mask().valid().iter().map(|&v| v as u8));
    for f in stack.frames() {
        for &v in f.values() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn read_stack(path: impl AsRef<Path>) -> Result<PhaseStack> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_stack(&bytes)
}

pub fn read_header(path: impl AsRef<Path>) -> Result<WphsHeader> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_header(&bytes)
}

pub fn write_stack(stack: &PhaseStack, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_stack(stack)).map_err(|e| Error::io(path, e))
}

/// On-disk report document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub schema_version: u32,
    pub method: crate::pipeline::Method,
    pub params: PipelineParams,
    pub rmse_rad: f64,
    pub rmse_nm: f64,
    pub cluster_sizes_chosen: Vec<usize>,
    pub cluster_sizes_abandoned: Vec<usize>,
    pub abandoned_frame_indices: Vec<u32>,
    pub unwrap_call_count: usize,
    pub excluded: Vec<u32>,
    pub warnings: Vec<String>,
    pub stage_times_ms: StageTimes,
    pub seed: Option<u64>,
}

impl ReportFile {
    pub fn new(report: &SurfaceReport, params: &PipelineParams, seed: Option<u64>) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            method: report.method,
            params: params.clone(),
            rmse_rad: report.rmse_rad,
            rmse_nm: report.rmse_nm,
            cluster_sizes_chosen: report.census.chosen.clone(),
            cluster_sizes_abandoned: report.census.abandoned.clone(),
            abandoned_frame_indices: report.abandoned_frame_indices.clone(),
            unwrap_call_count: report.unwrap_call_count,
            excluded: report.excluded.clone(),
            warnings: report.warnings.clone(),
            stage_times_ms: report.stage_times.clone(),
            seed,
        }
    }
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_report(report: &ReportFile, path: impl AsRef<Path>) -> Result<()> {
    write_json(report, path)
}

pub fn read_report(path: impl AsRef<Path>) -> Result<ReportFile> {
    read_json(path)
}

pub fn write_labels(labels: &TrialLabels, path: impl AsRef<Path>) -> Result<()> {
    write_json(labels, path)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<TrialLabels> {
    read_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> PhaseStack {
        let f = PhaseFrame::new(2, 2, vec![0.0, 1.0, -1.0, 3.0]).unwrap();
        PhaseStack::new(vec![f], ApertureMask::full(2, 2).unwrap()).unwrap()
    }

    #[test]
    fn minimal_file_layout() {
        let bytes = encode_stack(&minimal());
        assert_eq!(bytes.len(), 20 + 4 + 16);
        assert_eq!(&bytes[0..8], b"WPHS\x01\x00\x00\x00");
        assert_eq!(&bytes[20..24], &[1, 1, 1, 1]);
        let back = decode_stack(&bytes).unwrap();
        let expect: Vec<f64> = [0.0f32, 1.0, -1.0, 3.0].iter().map(|&v| v as f64).collect();
        assert_eq!(back.frames()[0].values(), &expect[..]);
    }

    #[test]
    fn truncated_by_one_byte() {
        let bytes = encode_stack(&minimal());
        let l = bytes.len();
        let err = decode_stack(&bytes[..l - 1]).unwrap_err();
        assert!(
            err.to_string()
                .contains(&format!("truncated at offset {}", l - 1)),
            "{err}"
        );
    }

    #[test]
    fn out_of_range_value_is_wrapped() {
        let mut bytes = encode_stack(&minimal());
        bytes[24..28].copy_from_slice(&3.2f32.to_le_bytes());
        let back = decode_stack(&bytes).unwrap();
        let v = back.frames()[0].values()[0];
        assert!((v - (3.2f32 as f64 - std::f64::consts::TAU)).abs() < 1e-12);
        assert!((v + 3.083).abs() < 1e-3);
    }

    #[test]
    fn bad_magic_version_and_nan() {
        let good = encode_stack(&minimal());
        let mut b = good.clone();
        b[0] = b'X';
        assert!(matches!(
            decode_stack(&b),
            Err(Error::Parse { offset: 0, .. })
        ));
        let mut b = good.clone();
        b[4] = 2;
        assert!(matches!(
            decode_stack(&b),
            Err(Error::Parse { offset: 4, .. })
        ));
        let mut b = good.clone();
        b[28..32].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            decode_stack(&b),
            Err(Error::Parse { offset: 28, .. })
        ));
        let mut b = good;
        b.push(0);
        assert!(decode_stack(&b).is_err());
    }

    #[test]
    fn nan_in_invalid_pixel_is_ignored() {
        let f = PhaseFrame::new(2, 2, vec![0.0, 1.0, -1.0, 3.0]).unwrap();
        let m = ApertureMask::new(2, 2, vec![true, true, true, false]).unwrap();
        let mut bytes = encode_stack(&PhaseStack::new(vec![f], m).unwrap());
        bytes[36..40].copy_from_slice(&f32::NAN.to_le_bytes());
        let back = decode_stack(&bytes).unwrap();
        assert_eq!(back.frames()[0].values()[3], 0.0);
    }
}
