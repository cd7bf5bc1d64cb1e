//! Binary PPM (P6), PGM (P5) and PAM (P7) codecs, maxval 255.
//!
//! These uncompressed formats keep golden-file tests bit-exact.

use std::fs;
use std::io;
use std::path::Path;

use crate::dataset::SensoryState;

/// Rounds a [0,1] component to a byte.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_ppm(h: usize, w: usize, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), 3 * h * w);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

pub fn encode_pgm(h: usize, w: usize, gray: &[u8]) -> Vec<u8> {
    assert_eq!(gray.len(), h * w);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(gray);
    out
}

pub fn encode_pam_rgba(h: usize, w: usize, rgba: &[u8]) -> Vec<u8> {
    assert_eq!(rgba.len(), 4 * h * w);
    let mut out = format!(
        "P7\nWIDTH {w}\nHEIGHT {h}\nDEPTH 4\nMAXVAL 255\nTUPLTYPE RGB_ALPHA\nENDHDR\n"
    )
    .into_bytes();
    out.extend_from_slice(rgba);
    out
}

/// Byte image of a [0,1] RGB image.
pub fn sensory_to_rgb8(image: &SensoryState) -> Vec<u8> {
    image.values.iter().map(|&v| quantize(v)).collect()
}

pub fn write_ppm(path: &Path, image: &SensoryState) -> io::Result<()> {
    fs::write(path, encode_ppm(image.h, image.w, &sensory_to_rgb8(image)))
}

/// One grayscale plane (0/255) per mask channel.
pub fn mask_channel_to_gray8(mask: &[bool], channel: usize) -> Vec<u8> {
    mask.chunks_exact(3)
        .map(|px| if px[channel] { 255 } else { 0 })
        .collect()
}

pub fn write_mask_pgm(path: &Path, mask: &[bool], h: usize, w: usize, channel: usize) -> io::Result<()> {
    fs::write(path, encode_pgm(h, w, &mask_channel_to_gray8(mask, channel)))
}

#[derive(Debug, thiserror::Error)]
pub enum PnmError {
    #[error("unsupported or malformed magic")]
    BadMagic,
    #[error("malformed header")]
    BadHeader,
    #[error("only maxval 255 is supported, got {0}")]
    BadMaxval(u32),
    #[error("payload length mismatch: expected {expected}, got {got}")]
    PayloadLength { expected: usize, got: usize },
}

fn parse_header(bytes: &[u8], magic: &str) -> Result<(usize, usize, usize), PnmError> {
    // magic, whitespace-separated width/height/maxval, single whitespace,
    // then the raster. Comments are not emitted by the writers and are not
    // accepted here.
    if bytes.len() < 2 || &bytes[..2] != magic.as_bytes() {
        return Err(PnmError::BadMagic);
    }
    let mut fields = Vec::new();
    let mut i = 2usize;
    while fields.len() < 3 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if start == i {
            return Err(PnmError::BadHeader);
        }
        let v: usize = std::str::from_utf8(&bytes[start..i])
            .map_err(|_| PnmError::BadHeader)?
            .parse()
            .map_err(|_| PnmError::BadHeader)?;
        fields.push(v);
    }
    if i >= bytes.len() || !bytes[i].is_ascii_whitespace() {
        return Err(PnmError::BadHeader);
    }
    i += 1;
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(PnmError::BadMaxval(maxval as u32));
    }
    Ok((w, h, i))
}

/// Decodes a P6 file written by [`encode_ppm`]; returns (h, w, rgb bytes).
pub fn decode_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), PnmError> {
    let (w, h, start) = parse_header(bytes, "P6")?;
    let raster = &bytes[start..];
    if raster.len() != 3 * w * h {
        return Err(PnmError::PayloadLength {
            expected: 3 * w * h,
            got: raster.len(),
        });
    }
    Ok((h, w, raster.to_vec()))
}

/// Decodes a P5 file written by [`encode_pgm`]; returns (h, w, gray bytes).
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), PnmError> {
    let (w, h, start) = parse_header(bytes, "P5")?;
    let raster = &bytes[start..];
    if raster.len() != w * h {
        return Err(PnmError::PayloadLength {
            expected: w * h,
            got: raster.len(),
        });
    }
    Ok((h, w, raster.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_golden_bytes() {
        // 2x1 image: red pixel then mid-gray pixel.
        let bytes = encode_ppm(1, 2, &[255, 0, 0, 128, 128, 128]);
        let expected = b"P6\n2 1\n255\n\xff\x00\x00\x80\x80\x80";
        assert_eq!(bytes, expected);
    }

    #[test]
    fn pgm_golden_bytes() {
        let bytes = encode_pgm(2, 2, &[0, 255, 255, 0]);
        assert_eq!(bytes, b"P5\n2 2\n255\n\x00\xff\xff\x00");
    }

    #[test]
    fn pam_header_shape() {
        let bytes = encode_pam_rgba(1, 1, &[1, 2, 3, 255]);
        assert!(bytes.starts_with(b"P7\nWIDTH 1\nHEIGHT 1\nDEPTH 4\nMAXVAL 255\n"));
        assert!(bytes.ends_with(&[1, 2, 3, 255]));
    }

    #[test]
    fn ppm_roundtrip() {
        let rgb: Vec<u8> = (0..3 * 4 * 5).map(|i| (i * 7 % 256) as u8).collect();
        let encoded = encode_ppm(4, 5, &rgb);
        let (h, w, back) = decode_ppm(&encoded).unwrap();
        assert_eq!((h, w), (4, 5));
        assert_eq!(back, rgb);
    }

    #[test]
    fn decode_rejects_garbage() {
        assert!(matches!(decode_ppm(b"P5\n1 1\n255\nx"), Err(PnmError::BadMagic)));
        assert!(matches!(decode_ppm(b"P6\n1\n255\n"), Err(PnmError::BadHeader)));
        assert!(matches!(
            decode_ppm(b"P6\n1 1\n65535\n..."),
            Err(PnmError::BadMaxval(65535))
        ));
        assert!(matches!(
            decode_ppm(b"P6\n2 2\n255\nshort"),
            Err(PnmError::PayloadLength { .. })
        ));
    }

    #[test]
    fn quantize_rounds_and_clamps() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(-2.0), 0);
        assert_eq!(quantize(9.0), 255);
    }
}
