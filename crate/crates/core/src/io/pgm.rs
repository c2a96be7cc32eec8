//! Binary greymap (P5), 8- or 16-bit. 16-bit samples are big-endian.
//! An optional `# offset <o> scale <s>` comment declares the physical value
//! `o + s * raw` of each sample.

use std::path::Path;

use ndarray::Array2;

use super::header::Header;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PgmImage {
    pub raw: Array2<u16>,
    pub maxval: u16,
    pub offset: Option<f64>,
    pub scale: Option<f64>,
}

impl PgmImage {
    /// Quantizes `[0, 1]` intensities to `bits` (8 or 16) per sample.
    pub fn from_unit(img: &Array2<f64>, bits: u32) -> Result<Self> {
        let maxval = match bits {
            8 => 255u16,
            16 => u16::MAX,
            _ => return Err(Error::InvalidParam(format!("PGM depth must be 8 or 16 bits, got {bits}"))),
        };
        let m = maxval as f64;
        Ok(Self {
            raw: img.mapv(|v| (v.clamp(0.0, 1.0) * m).round() as u16),
            maxval,
            offset: None,
            scale: None,
        })
    }

    /// 16-bit encoding of arbitrary values as `offset + scale * raw`.
    pub fn from_values(values: &Array2<f64>, offset: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite() && offset.is_finite()) {
            return Err(Error::InvalidParam(format!("invalid PGM offset/scale {offset}/{scale}")));
        }
        Ok(Self {
            raw: values.mapv(|v| ((v - offset) / scale).round().clamp(0.0, u16::MAX as f64) as u16),
            maxval: u16::MAX,
            offset: Some(offset),
            scale: Some(scale),
        })
    }

    /// Samples divided by `maxval`, in `[0, 1]`.
    pub fn normalized(&self) -> Array2<f64> {
        let m = self.maxval as f64;
        self.raw.mapv(|v| v as f64 / m)
    }

    /// Physical values when an offset/scale is declared, else [`Self::normalized`].
    pub fn decoded(&self) -> Array2<f64> {
        match (self.offset, self.scale) {
            (Some(o), Some(s)) => self.raw.mapv(|v| o + s * v as f64),
            _ => self.normalized(),
        }
    }
}

/// 8-bit mask image: 255 where `mask` is set.
pub fn mask_to_pgm(mask: &Array2<bool>) -> PgmImage {
    PgmImage {
        raw: mask.mapv(|b| if b { 255 } else { 0 }),
        maxval: 255,
        offset: None,
        scale: None,
    }
}

pub fn encode_pgm(img: &PgmImage) -> Vec<u8> {
    let (h, w) = img.raw.dim();
    let mut out = String::from("P5\n");
    if let (Some(o), Some(s)) = (img.offset, img.scale) {
        out.push_str(&format!("# offset {o:?} scale {s:?}\n"));
    }
    out.push_str(&format!("{w} {h}\n{}\n", img.maxval));
    let mut out = out.into_bytes();
    let wide = img.maxval > 255;
    for &v in &img.raw {
        if wide {
            out.extend_from_slice(&v.to_be_bytes());
        } else {
            out.push(v as u8);
        }
    }
    out
}

fn offset_scale(comments: &[String]) -> (Option<f64>, Option<f64>) {
    for c in comments {
        let tok: Vec<&str> = c.split_whitespace().collect();
        if let ["offset", o, "scale", s] = tok.as_slice() {
            if let (Ok(o), Ok(s)) = (o.parse(), s.parse()) {
                return (Some(o), Some(s));
            }
        }
    }
    (None, None)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<PgmImage> {
    let mut hd = Header::new(bytes);
    if hd.token(false)? != "P5" {
        hd.pos = 0;
        return hd.err("missing 'P5' magic");
    }
    let w: usize = hd.number(true, "width")?;
    let h: usize = hd.number(true, "height")?;
    let maxval: u32 = hd.number(true, "maxval")?;
    if maxval == 0 || maxval > u16::MAX as u32 {
        return hd.err(format!("maxval {maxval} outside 1..=65535"));
    }
    let start = hd.end()?;
    let bpp = if maxval > 255 { 2 } else { 1 };
    let Some(need) = w.checked_mul(h).and_then(|n| n.checked_mul(bpp)) else {
        return hd.err("image dimensions overflow");
    };
    if bytes.len() < start + need {
        hd.pos = bytes.len();
        return hd.err(format!("truncated data: expected {need} bytes, found {}", bytes.len() - start));
    }
    let data = &bytes[start..start + need];
    let raw = Array2::from_shape_fn((h, w), |(y, x)| {
        let i = (y * w + x) * bpp;
        if bpp == 2 {
            u16::from_be_bytes([data[i], data[i + 1]])
        } else {
            data[i] as u16
        }
    });
    if let Some(bad) = raw.iter().position(|&v| v as u32 > maxval) {
        return Err(Error::Parse {
            offset: start + bad * bpp,
            msg: format!("sample exceeds maxval {maxval}"),
        });
    }
    let (offset, scale) = offset_scale(&hd.comments);
    Ok(PgmImage {
        raw,
        maxval: maxval as u16,
        offset,
        scale,
    })
}

pub fn write_pgm(path: impl AsRef<Path>, img: &PgmImage) -> Result<()> {
    std::fs::write(path, encode_pgm(img))?;
    Ok(())
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<PgmImage> {
    decode_pgm(&std::fs::read(path)?)
}
