//! 16-bit binary PGM for view intensities.

use std::path::Path;

use crate::error::{Error, Result};

/// Sample value written for pixels without a valid observation.
pub const INVALID_SAMPLE: u16 = 65535;
pub const MAX_VALID_SAMPLE: u16 = 65534;
/// Intensity represented by `MAX_VALID_SAMPLE`.
pub const INTENSITY_FULL_SCALE: f32 = 2.0;

/// Clamps to `[0, 2]` and rounds to the nearest code.
pub fn quantize_intensity(v: f32) -> u16 {
    let t = (v / INTENSITY_FULL_SCALE).clamp(0.0, 1.0);
    (t * MAX_VALID_SAMPLE as f32).round() as u16
}

pub fn dequantize_intensity(code: u16) -> Option<f32> {
    (code != INVALID_SAMPLE).then(|| code as f32 / MAX_VALID_SAMPLE as f32 * INTENSITY_FULL_SCALE)
}

pub fn encode_pgm16(width: usize, height: usize, samples: &[u16]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    out.reserve(samples.len() * 2);
    for s in samples {
        out.extend_from_slice(&s.to_be_bytes());
    }
    out
}

/// Returns `(width, height, samples)`.
pub fn decode_pgm16(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<u16>), String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err("not a binary PGM (missing P5 magic)".into());
    }
    let mut num = |what: &str| -> std::result::Result<usize, String> {
        let t = token()?;
        t.parse().map_err(|_| format!("bad {what} `{t}`"))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if maxval != 65535 {
        return Err(format!("expected 16-bit PGM (maxval 65535), found maxval {maxval}"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = w * h * 2;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() != need {
        return Err(format!("raster holds {} bytes, expected {need}", raster.len()));
    }
    Ok((
        w,
        h,
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect(),
    ))
}

/// Writes one view; invalid pixels get the sentinel.
pub fn write_view_pgm(path: &Path, width: usize, height: usize, data: &[f32], valid: &[bool]) -> Result<()> {
    let codes: Vec<u16> = data
        .iter()
        .zip(valid)
        .map(|(&v, &ok)| if ok { quantize_intensity(v) } else { INVALID_SAMPLE })
        .collect();
    std::fs::write(path, encode_pgm16(width, height, &codes)).map_err(|e| Error::io(path, e))
}

/// Returns `(width, height, intensities, valid)`; invalid pixels read as 0.
pub fn read_view_pgm(path: &Path) -> Result<(usize, usize, Vec<f32>, Vec<bool>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h, codes) = decode_pgm16(&bytes).map_err(|m| Error::format(path, m))?;
    let valid: Vec<bool> = codes.iter().map(|&c| c != INVALID_SAMPLE).collect();
    let data = codes.iter().map(|&c| dequantize_intensity(c).unwrap_or(0.0)).collect();
    Ok((w, h, data, valid))
}
