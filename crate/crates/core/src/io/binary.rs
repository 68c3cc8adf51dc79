//! Little-endian helpers shared by the binary file formats.

pub(crate) fn read_u32(r: &mut &[u8]) -> Result<u32, String> {
    if r.len() < 4 {
        return Err("unexpected end of data".into());
    }
    let v = u32::from_le_bytes([r[0], r[1], r[2], r[3]]);
    *r = &r[4..];
    Ok(v)
}

pub(crate) fn read_f32s(r: &mut &[u8], n: usize) -> Result<Vec<f32>, String> {
    let bytes = n.checked_mul(4).ok_or("payload size overflows")?;
    if r.len() < bytes {
        return Err(format!("payload truncated: need {bytes} bytes, have {}", r.len()));
    }
    let out = r[..bytes]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    *r = &r[bytes..];
    Ok(out)
}

pub(crate) fn write_f32s(buf: &mut Vec<u8>, values: &[f32]) {
    buf.reserve(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}
