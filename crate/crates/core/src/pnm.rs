//! Portable anymap reading and writing.
//!
//! 8-bit graymaps (`P5`, and plain `P2`) load as-is. Pixmaps (`P6`, `P3`) are
//! converted to luminance with integer weights:
//! `Y = (299 R + 587 G + 114 B + 500) / 1000`.
//! Images are always written as binary `P5`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::GrayImage;

pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    ((299 * u32::from(r) + 587 * u32::from(g) + 114 * u32::from(b) + 500) / 1000) as u8
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: u32,
    /// Offset of the first sample.
    data_start: usize,
}

fn skip_ws_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    while pos < bytes.len() {
        match bytes[pos] {
            b'#' => {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            }
            c if c.is_ascii_whitespace() => pos += 1,
            _ => break,
        }
    }
    pos
}

fn read_uint(bytes: &[u8], pos: &mut usize, what: &str) -> Result<u32> {
    *pos = skip_ws_and_comments(bytes, *pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::MalformedHeader(format!("missing {what}")));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::MalformedHeader(format!("{what} out of range")))
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::MalformedHeader("missing P magic number".into()));
    }
    let magic = [bytes[0], bytes[1]];
    match magic[1] {
        b'2' | b'3' | b'5' | b'6' => {}
        b'1' | b'4' | b'7' => {
            return Err(Error::UnsupportedFormat(
                String::from_utf8_lossy(&magic).into_owned(),
            ))
        }
        _ => return Err(Error::MalformedHeader("unknown magic number".into())),
    }
    let mut pos = 2;
    let width = read_uint(bytes, &mut pos, "width")? as usize;
    let height = read_uint(bytes, &mut pos, "height")? as usize;
    let maxval = read_uint(bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::MalformedHeader("zero image dimension".into()));
    }
    if maxval == 0 {
        return Err(Error::MalformedHeader("maxval must be positive".into()));
    }
    if maxval > 255 {
        return Err(Error::UnsupportedBitDepth(maxval));
    }
    // a single whitespace byte separates the header from binary data
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        if matches!(magic[1], b'5' | b'6') && pos >= bytes.len() {
            return Err(Error::Truncated {
                expected: width * height,
                found: 0,
            });
        }
        if pos < bytes.len() {
            return Err(Error::MalformedHeader("no whitespace after maxval".into()));
        }
    }
    Ok(Header {
        magic,
        width,
        height,
        maxval,
        data_start: pos + 1,
    })
}

fn scale(v: u32, maxval: u32) -> u8 {
    if maxval == 255 {
        v as u8
    } else {
        ((v * 255 + maxval / 2) / maxval) as u8
    }
}

fn plain_samples(bytes: &[u8], mut pos: usize, n: usize, maxval: u32) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        pos = skip_ws_and_comments(bytes, pos);
        if pos >= bytes.len() {
            return Err(Error::Truncated {
                expected: n,
                found: out.len(),
            });
        }
        let v = read_uint(bytes, &mut pos, "sample")?;
        if v > maxval {
            return Err(Error::MalformedHeader(format!("sample {v} exceeds maxval {maxval}")));
        }
        out.push(scale(v, maxval));
    }
    Ok(out)
}

/// Decodes a PGM or PPM held in memory.
pub fn decode(bytes: &[u8]) -> Result<GrayImage> {
    let h = parse_header(bytes)?;
    let channels = if matches!(h.magic[1], b'3' | b'6') { 3 } else { 1 };
    let n = h.width * h.height * channels;
    let samples = match h.magic[1] {
        b'5' | b'6' => {
            let data = bytes.get(h.data_start.min(bytes.len())..).unwrap_or(&[]);
            if data.len() < n {
                return Err(Error::Truncated {
                    expected: n,
                    found: data.len(),
                });
            }
            data[..n]
                .iter()
                .map(|&v| {
                    if u32::from(v) > h.maxval {
                        Err(Error::MalformedHeader(format!(
                            "sample {v} exceeds maxval {}",
                            h.maxval
                        )))
                    } else {
                        Ok(scale(u32::from(v), h.maxval))
                    }
                })
                .collect::<Result<Vec<_>>>()?
        }
        _ => plain_samples(bytes, h.data_start - 1, n, h.maxval)?,
    };
    let pixels = if channels == 3 {
        samples.chunks_exact(3).map(|c| luma(c[0], c[1], c[2])).collect()
    } else {
        samples
    };
    GrayImage::new(h.width, h.height, pixels)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound {
            path: path.to_path_buf(),
        },
        _ => Error::Io(e),
    })?;
    decode(&bytes)
}

/// Binary `P5` encoding.
pub fn encode(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

pub fn save_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(img))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decodes_two_by_two() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend([0, 128, 255, 7]);
        let img = decode(&bytes).unwrap();
        assert_eq!(img.dims(), (2, 2));
        assert_eq!(img.pixels(), &[0, 128, 255, 7]);
    }

    #[test]
    fn header_comments_and_plain_format() {
        let img = decode(b"P2\n# made by hand\n3 1 # width height\n255\n1 2\n 3\n").unwrap();
        assert_eq!(img.pixels(), &[1, 2, 3]);
        let mut bytes = b"P5 #c\n1 1\n#x\n255\n".to_vec();
        bytes.push(b'\n');
        assert_eq!(decode(&bytes).unwrap().pixels(), &[10]);
    }

    #[test]
    fn low_maxval_is_rescaled() {
        assert_eq!(decode(b"P2 3 1 15 0 15 7").unwrap().pixels(), &[0, 255, 119]);
    }

    #[test]
    fn color_is_converted_to_luma() {
        let mut bytes = b"P6\n3 1\n255\n".to_vec();
        bytes.extend([255, 0, 0, 0, 255, 0, 10, 20, 30]);
        let img = decode(&bytes).unwrap();
        // 76.245, 149.685, 18.15
        assert_eq!(img.pixels(), &[76, 150, 18]);
        assert_eq!(luma(255, 255, 255), 255);
        assert_eq!(decode(b"P3 1 1 255 255 255 255").unwrap().pixels(), &[255]);
    }

    #[test]
    fn distinct_errors() {
        let mut short = b"P5\n2 2\n255\n".to_vec();
        short.extend([1, 2, 3]);
        assert!(matches!(decode(&short), Err(Error::Truncated { expected: 4, found: 3 })));
        assert!(matches!(decode(b"P5\n2 2\n65535\n\0\0"), Err(Error::UnsupportedBitDepth(65535))));
        assert!(matches!(decode(b"P4\n1 1\n\0"), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(decode(b"GIF89a"), Err(Error::MalformedHeader(_))));
        assert!(matches!(decode(b"P5\n2\n"), Err(Error::MalformedHeader(_))));
        assert!(matches!(decode(b"P2 2 1 255 7"), Err(Error::Truncated { .. })));
        assert!(matches!(
            load_image("/nonexistent/left.pgm"),
            Err(Error::NotFound { .. })
        ));
        for e in [
            decode(&short).unwrap_err(),
            decode(b"P5\n2 2\n65535\n").unwrap_err(),
            decode(b"GIF").unwrap_err(),
        ] {
            assert_eq!(e.exit_code(), 6);
        }
    }

    proptest! {
        #[test]
        fn round_trip_is_lossless(
            (w, h, pixels) in (1usize..40, 1usize..40)
                .prop_flat_map(|(w, h)| (Just(w), Just(h), proptest::collection::vec(any::<u8>(), w * h)))
        ) {
            let img = GrayImage::new(w, h, pixels).unwrap();
            prop_assert_eq!(decode(&encode(&img)).unwrap(), img);
        }
    }
}
