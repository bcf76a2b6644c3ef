//! Binary per-pixel distribution dumps.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size | field |
//! |---|---|---|
//! | 0 | 4 | magic `SDDP` |
//! | 4 | 2 | version (1) |
//! | 6 | 2 | kind: 0 stochastic counts, 1 quantized reference scores |
//! | 8 | 4 | region x (feature-map coordinates) |
//! | 12 | 4 | region y |
//! | 16 | 4 | region width (`W_f` for a full image) |
//! | 20 | 4 | region height (`H_f`) |
//! | 24 | 4 | `D_max` |
//! | 28 | 4 | `n_max` |
//!
//! The body holds `D_max + 2` u16 counts for each pixel with `x >= D_max`, in
//! row-major order; the last count is the no-match channel. Three bitmaps
//! follow, each `ceil(width * height / 8)` bytes covering every region pixel
//! row-major, least significant bit first: no-match, invalid (border) and
//! timeout.
//!
//! Reference dumps store `round(score * 65535)` with `n_max = 65535`.

use std::fs;
use std::path::Path;

use crate::engine::StochasticResult;
use crate::error::{Error, Result};
use crate::eval::{AccuracyAccumulator, AccuracyReport};
use crate::model::Region;
use crate::reference::{PixelClass, ReferenceResult};

pub const MAGIC: &[u8; 4] = b"SDDP";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 32;
pub const REFERENCE_SCALE: u32 = 65535;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DumpKind {
    Stochastic,
    Reference,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistributionDump {
    pub kind: DumpKind,
    pub region: Region,
    pub d_max: usize,
    pub n_max: u32,
    /// One per region pixel, row-major.
    pub classes: Vec<PixelClass>,
    /// `D_max + 2` counts per non-border pixel, row-major.
    pub counts: Vec<Vec<u16>>,
}

fn bitmap_len(n: usize) -> usize {
    n.div_ceil(8)
}

fn quantize(score: f64) -> u16 {
    (score * f64::from(REFERENCE_SCALE)).round().clamp(0.0, 65535.0) as u16
}

impl DistributionDump {
    pub fn from_stochastic(result: &StochasticResult) -> Result<Self> {
        let n_max = result.n_max();
        if n_max > u32::from(u16::MAX) {
            return Err(Error::Config(format!(
                "counter maximum {n_max} does not fit the 16-bit dump format"
            )));
        }
        Ok(Self {
            kind: DumpKind::Stochastic,
            region: result.region(),
            d_max: result.d_max(),
            n_max,
            classes: result.classes().to_vec(),
            counts: result
                .pixels()
                .iter()
                .map(|p| p.counts.iter().map(|&c| c as u16).collect())
                .collect(),
        })
    }

    pub fn from_reference(result: &ReferenceResult) -> Self {
        Self {
            kind: DumpKind::Reference,
            region: result.region(),
            d_max: result.d_max(),
            n_max: REFERENCE_SCALE,
            classes: result.classes().to_vec(),
            counts: result
                .pixels()
                .iter()
                .map(|p| p.scores.iter().map(|&s| quantize(s)).collect())
                .collect(),
        }
    }

    /// Readouts `count / n_max` of the disparity channels, paired with the
    /// class, for every non-border pixel.
    pub fn readouts(&self) -> impl Iterator<Item = (PixelClass, Vec<f64>)> + '_ {
        let n_max = f64::from(self.n_max);
        let classes = self
            .region
            .coords()
            .zip(&self.classes)
            .filter(|((x, _), _)| *x >= self.d_max)
            .map(|(_, c)| *c);
        classes.zip(&self.counts).map(move |(c, counts)| {
            let r = counts[..counts.len() - 1]
                .iter()
                .map(|&v| f64::from(v) / n_max)
                .collect();
            (c, r)
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let area = self.region.area();
        let m = self.d_max + 2;
        let mut out = Vec::with_capacity(HEADER_LEN + self.counts.len() * m * 2 + 3 * bitmap_len(area));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let kind: u16 = match self.kind {
            DumpKind::Stochastic => 0,
            DumpKind::Reference => 1,
        };
        out.extend_from_slice(&kind.to_le_bytes());
        for v in [
            self.region.x,
            self.region.y,
            self.region.width,
            self.region.height,
            self.d_max,
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.n_max.to_le_bytes());
        for px in &self.counts {
            for c in px {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        let flags: [fn(&PixelClass) -> bool; 3] = [
            |c| *c == PixelClass::NoMatch,
            |c| *c == PixelClass::Invalid,
            |c| *c == PixelClass::Timeout,
        ];
        for flag in flags {
            let mut bits = vec![0u8; bitmap_len(area)];
            for (i, c) in self.classes.iter().enumerate() {
                if flag(c) {
                    bits[i / 8] |= 1 << (i % 8);
                }
            }
            out.extend_from_slice(&bits);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::MalformedDump(msg.to_string());
        if bytes.len() < HEADER_LEN {
            return Err(bad("shorter than the header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u16_at(4);
        if version != VERSION {
            return Err(Error::MalformedDump(format!("unsupported version {version}")));
        }
        let kind = match u16_at(6) {
            0 => DumpKind::Stochastic,
            1 => DumpKind::Reference,
            k => return Err(Error::MalformedDump(format!("unknown kind {k}"))),
        };
        let region = Region::new(
            u32_at(8) as usize,
            u32_at(12) as usize,
            u32_at(16) as usize,
            u32_at(20) as usize,
        );
        let d_max = u32_at(24) as usize;
        let n_max = u32_at(28);
        if region.area() == 0 || n_max == 0 {
            return Err(bad("empty region or zero counter maximum"));
        }
        let valid: usize = region.coords().filter(|&(x, _)| x >= d_max).count();
        let m = d_max + 2;
        let body = valid * m * 2;
        let maps = bitmap_len(region.area());
        let expected = HEADER_LEN + body + 3 * maps;
        if bytes.len() != expected {
            return Err(Error::MalformedDump(format!(
                "expected {expected} bytes, found {}",
                bytes.len()
            )));
        }
        let counts: Vec<Vec<u16>> = bytes[HEADER_LEN..HEADER_LEN + body]
            .chunks_exact(m * 2)
            .map(|px| px.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect())
            .collect();
        let bitmap = |k: usize| &bytes[HEADER_LEN + body + k * maps..HEADER_LEN + body + (k + 1) * maps];
        let bit = |map: &[u8], i: usize| map[i / 8] >> (i % 8) & 1 == 1;
        let (nomatch, invalid, timeout) = (bitmap(0), bitmap(1), bitmap(2));
        let mut valid_counts = counts.iter();
        let mut classes = Vec::with_capacity(region.area());
        for (i, (x, _)) in region.coords().enumerate() {
            let border = x < d_max;
            if bit(invalid, i) != border {
                return Err(bad("invalid bitmap disagrees with the border"));
            }
            if border {
                classes.push(PixelClass::Invalid);
                continue;
            }
            let c = valid_counts.next().expect("count checked above");
            classes.push(if bit(timeout, i) {
                PixelClass::Timeout
            } else if bit(nomatch, i) {
                PixelClass::NoMatch
            } else {
                let disparities = &c[..m - 1];
                let top = *disparities.iter().max().expect("d_max + 1 entries");
                PixelClass::Matched(disparities.iter().position(|&v| v == top).unwrap())
            });
        }
        Ok(Self {
            kind,
            region,
            d_max,
            n_max,
            classes,
            counts,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound {
                path: path.to_path_buf(),
            },
            _ => Error::Io(e),
        })?;
        Self::from_bytes(&bytes)
    }
}

/// Metrics of `other` against `reference` over the same region.
pub fn compare_dumps(reference: &DistributionDump, other: &DistributionDump) -> Result<AccuracyReport> {
    if reference.region != other.region || reference.d_max != other.d_max {
        return Err(Error::Config("dumps cover different regions or disparity ranges".into()));
    }
    let mut acc = AccuracyAccumulator::default();
    let border = reference.classes.len() - reference.counts.len();
    for _ in 0..border {
        acc.add_pixel(PixelClass::Invalid, None, PixelClass::Invalid, None);
    }
    for ((rc, rd), (oc, od)) in reference.readouts().zip(other.readouts()) {
        acc.add_pixel(rc, Some(&rd), oc, Some(&od));
    }
    Ok(acc.report())
}
