//! PNG label maps and color images.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::legend::ColorLegend;

fn encode(
    width: usize,
    height: usize,
    color: png::ColorType,
    palette: Option<Vec<u8>>,
    data: &[u8],
) -> std::result::Result<Vec<u8>, png::EncodingError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        if let Some(p) = palette {
            enc.set_palette(p);
        }
        let mut writer = enc.write_header()?;
        writer.write_image_data(data)?;
    }
    Ok(out)
}

fn write(path: &Path, bytes: std::result::Result<Vec<u8>, png::EncodingError>) -> Result<()> {
    let bytes = bytes.map_err(|e| Error::format(path, e.to_string()))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// 8-bit indexed PNG whose indices are class ids.
pub fn write_label_png(path: &Path, width: usize, height: usize, labels: &[u16], legend: &ColorLegend) -> Result<()> {
    if labels.len() != width * height {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {width}x{height}",
            labels.len()
        )));
    }
    let idx = labels
        .iter()
        .map(|&l| u8::try_from(l).map_err(|_| Error::InvalidArgument(format!("label {l} does not fit an 8-bit PNG"))))
        .collect::<Result<Vec<u8>>>()?;
    write(
        path,
        encode(width, height, png::ColorType::Indexed, Some(legend.palette()), &idx),
    )
}

/// Returns `(width, height, labels)` from an 8-bit indexed or grayscale PNG.
pub fn read_label_png(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: String| Error::format(path, m);
    let mut reader = png::Decoder::new(Cursor::new(bytes))
        .read_info()
        .map_err(|e| bad(e.to_string()))?;
    let info = reader.info();
    let (w, h) = (info.width as usize, info.height as usize);
    if info.bit_depth != png::BitDepth::Eight
        || !matches!(info.color_type, png::ColorType::Indexed | png::ColorType::Grayscale)
    {
        return Err(bad(format!(
            "expected 8-bit paletted labels, found {:?} {:?}",
            info.color_type, info.bit_depth
        )));
    }
    let mut buf = vec![
        0u8;
        reader
            .output_buffer_size()
            .ok_or_else(|| bad("image too large".into()))?
    ];
    reader.next_frame(&mut buf).map_err(|e| bad(e.to_string()))?;
    buf.truncate(w * h);
    Ok((w, h, buf.into_iter().map(u16::from).collect()))
}

pub fn write_rgb_png(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(Error::InvalidArgument(format!(
            "{} bytes for a {width}x{height} RGB image",
            rgb.len()
        )));
    }
    write(path, encode(width, height, png::ColorType::Rgb, None, rgb))
}

/// Grayscale intensities in `[0, max]` as RGB bytes.
pub fn gray_to_rgb(values: &[f32], max: f32) -> Vec<u8> {
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    values
        .iter()
        .flat_map(|&v| {
            let g = (v * scale).clamp(0.0, 255.0).round() as u8;
            [g, g, g]
        })
        .collect()
}

/// Places equally sized RGB tiles left to right with a white gutter.
pub fn side_by_side(width: usize, height: usize, tiles: &[&[u8]], gutter: usize) -> (usize, Vec<u8>) {
    let n = tiles.len();
    let total = n * width + n.saturating_sub(1) * gutter;
    let mut out = vec![255u8; total * height * 3];
    for (t, tile) in tiles.iter().enumerate() {
        let x0 = t * (width + gutter);
        for y in 0..height {
            let dst = (y * total + x0) * 3;
            out[dst..dst + width * 3].copy_from_slice(&tile[y * width * 3..(y + 1) * width * 3]);
        }
    }
    (total, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.png");
        let labels: Vec<u16> = (0..12).map(|i| (i % 5) as u16).chain([255]).collect();
        write_label_png(&p, 13, 1, &labels, &ColorLegend::with_classes(5)).unwrap();
        assert_eq!(read_label_png(&p).unwrap(), (13, 1, labels));
        assert!(write_label_png(&p, 1, 1, &[300], &ColorLegend::with_classes(5)).is_err());
    }

    #[test]
    fn corrupt_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.png");
        std::fs::write(&p, b"not a png").unwrap();
        let msg = read_label_png(&p).unwrap_err().to_string();
        assert!(msg.contains("bad.png"), "{msg}");
    }

    #[test]
    fn panel_layout() {
        let a = [1u8; 2 * 2 * 3];
        let b = [2u8; 2 * 2 * 3];
        let (w, rgb) = side_by_side(2, 2, &[&a, &b], 1);
        assert_eq!(w, 5);
        assert_eq!(&rgb[..15], &[1, 1, 1, 1, 1, 1, 255, 255, 255, 2, 2, 2, 2, 2, 2]);
    }
}
