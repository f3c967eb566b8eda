//! Binary PPM (P6) input, PGM (P5) heatmaps and masks.

use std::fs;
use std::path::Path;

use crate::data::DataError;
use crate::tensor::{Scalar, Tensor};

/// Decoded 8-bit raster, `channels` interleaved per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

fn header_token<'a>(buf: &'a [u8], pos: &mut usize) -> Result<&'a [u8], DataError> {
    loop {
        while *pos < buf.len() && buf[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < buf.len() && buf[*pos] == b'#' {
            while *pos < buf.len() && buf[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < buf.len() && !buf[*pos].is_ascii_whitespace() && buf[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(DataError::CorruptHeader("header ends early".into()));
    }
    Ok(&buf[start..*pos])
}

fn header_number(buf: &[u8], pos: &mut usize, what: &str) -> Result<usize, DataError> {
    let tok = header_token(buf, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| DataError::CorruptHeader(format!("bad {what} `{}`", String::from_utf8_lossy(tok))))
}

/// Decodes a binary P6 or P5 file with maxval 255.
pub fn decode(buf: &[u8]) -> Result<Raster, DataError> {
    if buf.len() < 2 || buf[0] != b'P' {
        return Err(DataError::UnsupportedFormat("not a PNM file".into()));
    }
    let channels = match buf[1] {
        b'6' => 3,
        b'5' => 1,
        other => {
            return Err(DataError::UnsupportedFormat(format!(
                "PNM variant P{} (only binary P5/P6 are read)",
                other as char
            )))
        }
    };
    let mut pos = 2;
    let width = header_number(buf, &mut pos, "width")?;
    let height = header_number(buf, &mut pos, "height")?;
    let maxval = header_number(buf, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(DataError::UnsupportedFormat(format!("maxval {maxval} (only 255)")));
    }
    if width == 0 || height == 0 {
        return Err(DataError::CorruptHeader("zero extent".into()));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= buf.len() || !buf[pos].is_ascii_whitespace() {
        return Err(DataError::CorruptHeader("missing raster separator".into()));
    }
    pos += 1;
    let need = width * height * channels;
    let pixels = buf
        .get(pos..pos + need)
        .ok_or_else(|| DataError::CorruptHeader(format!("raster has {} of {need} bytes", buf.len() - pos)))?
        .to_vec();
    Ok(Raster {
        width,
        height,
        channels,
        pixels,
    })
}

pub fn encode(raster: &Raster) -> Vec<u8> {
    let magic = if raster.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", raster.width, raster.height).into_bytes();
    out.extend_from_slice(&raster.pixels);
    out
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|e| DataError::IoFailure(format!("{}: {e}", path.display())))
}

pub fn write_raster(path: impl AsRef<Path>, raster: &Raster) -> Result<(), DataError> {
    let path = path.as_ref();
    fs::write(path, encode(raster)).map_err(|e| DataError::IoFailure(format!("{}: {e}", path.display())))
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<Raster, DataError> {
    decode(&read_file(path.as_ref())?)
}

impl Raster {
    /// `(1, 3, H, W)` tensor scaled to `[0, 1]`.
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>, DataError> {
        if self.channels != 3 {
            return Err(DataError::UnsupportedFormat("expected an RGB (P6) image".into()));
        }
        let plane = self.width * self.height;
        let mut data = vec![T::zero(); 3 * plane];
        let scale = T::from_f64_lossy(1.0 / 255.0);
        for (i, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = T::from_u8(px[c]).unwrap() * scale;
            }
        }
        Ok(Tensor::from_vec((1, 3, self.height, self.width), data).expect("sized above"))
    }
}

/// Reads a P6 image as a `(1, 3, H, W)` tensor in `[0, 1]`.
pub fn read_image<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>, DataError> {
    read_raster(path)?.to_tensor()
}

/// Min-max normalises a map to `[0, 255]`; constant maps become 128.
pub fn normalise_gray<T: Scalar>(values: &[T]) -> Vec<u8> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            let v = v.as_f64();
            (lo.min(v), hi.max(v))
        });
    if !(hi > lo) {
        return vec![128; values.len()];
    }
    values
        .iter()
        .map(|v| ((v.as_f64() - lo) / (hi - lo) * 255.0).round() as u8)
        .collect()
}

/// Writes a `(height, width)` map as P5 after min-max normalisation.
pub fn write_gray<T: Scalar>(
    path: impl AsRef<Path>,
    values: &[T],
    height: usize,
    width: usize,
) -> Result<(), DataError> {
    assert_eq!(values.len(), height * width, "map extent");
    write_raster(
        path,
        &Raster {
            width,
            height,
            channels: 1,
            pixels: normalise_gray(values),
        },
    )
}

/// Reads a P5 mask as booleans (nonzero = foreground).
pub fn read_mask(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<bool>), DataError> {
    let r = read_raster(path)?;
    if r.channels != 1 {
        return Err(DataError::UnsupportedFormat("mask must be P5".into()));
    }
    Ok((r.height, r.width, r.pixels.iter().map(|&p| p != 0).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_red_p6() {
        let mut bytes = b"P6\n# comment\n2 2\n255\n".to_vec();
        for _ in 0..4 {
            bytes.extend_from_slice(&[255, 0, 0]);
        }
        let t: Tensor<f32> = decode(&bytes).unwrap().to_tensor().unwrap();
        assert_eq!(t.shape().dims(), [1, 3, 2, 2]);
        assert!(t.plane(0, 0).iter().all(|&v| v == 1.0));
        assert!(t.plane(0, 1).iter().chain(t.plane(0, 2)).all(|&v| v == 0.0));
    }

    #[test]
    fn ascii_variant_rejected() {
        let err = decode(b"P3\n1 1\n255\n0 0 0\n").unwrap_err();
        assert!(matches!(err, DataError::UnsupportedFormat(_)));
        assert!(matches!(decode(b"GIF89a"), Err(DataError::UnsupportedFormat(_))));
    }

    #[test]
    fn corrupt_headers() {
        assert!(matches!(decode(b"P6\n2 x\n255\n"), Err(DataError::CorruptHeader(_))));
        assert!(matches!(decode(b"P6\n2 2\n255\n\0\0"), Err(DataError::CorruptHeader(_))));
        assert!(matches!(decode(b"P6\n2"), Err(DataError::CorruptHeader(_))));
    }

    #[test]
    fn gray_round_trip_within_quantisation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.pgm");
        let values: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        write_gray(&path, &values, 3, 4).unwrap();
        let r = read_raster(&path).unwrap();
        assert_eq!((r.height, r.width, r.channels), (3, 4, 1));
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (&p, &v) in r.pixels.iter().zip(&values) {
            let back = lo + p as f64 / 255.0 * (hi - lo);
            assert!((back - v).abs() <= (hi - lo) / 255.0);
        }
    }

    #[test]
    fn constant_map_is_mid_gray() {
        assert_eq!(normalise_gray(&[3.0f32; 5]), vec![128; 5]);
    }
}
