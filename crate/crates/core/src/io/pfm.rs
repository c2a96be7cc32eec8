//! Single-channel Portable Float Map. Written little-endian (negative
//! scale), rows stored bottom to top; samples are `f32`.

use std::path::Path;

use ndarray::Array2;

use super::header::Header;
use crate::error::Result;

pub fn encode_pfm(map: &Array2<f64>) -> Vec<u8> {
    let (h, w) = map.dim();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * h * w);
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&(map[[y, x]] as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Array2<f64>> {
    let mut hd = Header::new(bytes);
    match hd.token(false)? {
        "Pf" => {}
        "PF" => {
            hd.pos = 0;
            return hd.err("three-channel PFM is not supported");
        }
        _ => {
            hd.pos = 0;
            return hd.err("missing 'Pf' magic");
        }
    }
    let w: usize = hd.number(false, "width")?;
    let h: usize = hd.number(false, "height")?;
    let scale: f64 = hd.number(false, "scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return hd.err("scale must be non-zero");
    }
    let start = hd.end()?;
    let need = w.checked_mul(h).and_then(|n| n.checked_mul(4));
    let Some(need) = need else {
        return hd.err("image dimensions overflow");
    };
    if bytes.len() < start + need {
        hd.pos = bytes.len();
        return hd.err(format!("truncated data: expected {} bytes, found {}", need, bytes.len() - start));
    }
    let little = scale < 0.0;
    let mut map = Array2::zeros((h, w));
    for (i, chunk) in bytes[start..start + need].chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        map[[h - 1 - i / w, i % w]] = v as f64;
    }
    Ok(map)
}

pub fn write_pfm(path: impl AsRef<Path>, map: &Array2<f64>) -> Result<()> {
    std::fs::write(path, encode_pfm(map))?;
    Ok(())
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    decode_pfm(&std::fs::read(path)?)
}
