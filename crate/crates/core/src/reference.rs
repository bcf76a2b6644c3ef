//! Floating-point posterior: the oracle the stochastic machine is checked
//! against.
//!
//! With a uniform prior the posterior over disparities is proportional to the
//! product of the three likelihoods. Scores are max-normalized the same way
//! counter readout is, over all `D_max + 2` channels including no-match, so a
//! matched pixel's best disparity reads exactly 1.

use rayon::prelude::*;

use crate::model::{div_round, GrayImage, LikelihoodVolume, PixelLikelihoods, Region};

/// Outcome at one output pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PixelClass {
    /// Left of `D_max`: no disparity can be searched.
    Invalid,
    NoMatch,
    Matched(usize),
    /// The machine ran out of cycles.
    Timeout,
}

impl PixelClass {
    pub fn disparity(self) -> Option<usize> {
        match self {
            PixelClass::Matched(d) => Some(d),
            _ => None,
        }
    }

    pub fn is_nomatch(self) -> bool {
        self == PixelClass::NoMatch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePixel {
    pub x: usize,
    pub y: usize,
    /// `D_max + 2` max-normalized scores; the last one is no-match.
    pub scores: Vec<f64>,
    pub class: PixelClass,
}

impl ReferencePixel {
    pub fn disparity_scores(&self) -> &[f64] {
        &self.scores[..self.scores.len() - 1]
    }

    pub fn nomatch_score(&self) -> f64 {
        self.scores[self.scores.len() - 1]
    }

    /// Disparity posterior normalized to sum to 1.
    pub fn posterior(&self) -> Vec<f64> {
        let d = self.disparity_scores();
        let total: f64 = d.iter().sum();
        if total > 0.0 {
            d.iter().map(|s| s / total).collect()
        } else {
            vec![0.0; d.len()]
        }
    }
}

/// Classifies one pixel from its raw disparity scores and no-match score.
///
/// No-match requires the no-match score to strictly exceed every disparity
/// score; otherwise the lowest-index maximum wins. Returns the class and the
/// `D_max + 2` scores divided by their maximum.
pub fn classify(scores: &[f64], nomatch: f64) -> (PixelClass, Vec<f64>) {
    let mut best = 0;
    for (d, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = d;
        }
    }
    let top = scores[best];
    let (class, max) = if nomatch > top {
        (PixelClass::NoMatch, nomatch)
    } else {
        (PixelClass::Matched(best), top)
    };
    let mut normalized: Vec<f64> = scores.iter().chain([&nomatch]).copied().collect();
    if max > 0.0 {
        normalized.iter_mut().for_each(|s| *s /= max);
    }
    (class, normalized)
}

pub fn reference_pixel(px: &PixelLikelihoods) -> ReferencePixel {
    let (class, scores) = classify(&px.products(), px.nomatch);
    ReferencePixel {
        x: px.x,
        y: px.y,
        scores,
        class,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceResult {
    region: Region,
    d_max: usize,
    classes: Vec<PixelClass>,
    pixels: Vec<ReferencePixel>,
}

impl ReferenceResult {
    pub fn region(&self) -> Region {
        self.region
    }

    pub fn d_max(&self) -> usize {
        self.d_max
    }

    /// One class per region pixel, row-major.
    pub fn classes(&self) -> &[PixelClass] {
        &self.classes
    }

    /// Valid pixels, row-major.
    pub fn pixels(&self) -> &[ReferencePixel] {
        &self.pixels
    }

    pub fn class_at(&self, x: usize, y: usize) -> Option<PixelClass> {
        self.region.index(x, y).map(|i| self.classes[i])
    }
}

/// Classes for every pixel of `region`, given the valid pixels in row-major
/// order.
pub(crate) fn region_classes(
    region: Region,
    d_max: usize,
    valid: impl IntoIterator<Item = PixelClass>,
) -> Vec<PixelClass> {
    let mut valid = valid.into_iter();
    region
        .coords()
        .map(|(x, _)| {
            if x < d_max {
                PixelClass::Invalid
            } else {
                valid.next().expect("one result per valid pixel")
            }
        })
        .collect()
}

pub fn reference_infer(volume: &LikelihoodVolume) -> ReferenceResult {
    let pixels: Vec<ReferencePixel> = volume.pixels().par_iter().map(reference_pixel).collect();
    let classes = region_classes(volume.region(), volume.d_max(), pixels.iter().map(|p| p.class));
    ReferenceResult {
        region: volume.region(),
        d_max: volume.d_max(),
        classes,
        pixels,
    }
}

/// Grayscale encoding of a disparity: `round(255 * d / d_max)`.
pub fn disparity_luminance(d: usize, d_max: usize) -> u8 {
    div_round(255 * d as i64, d_max as i64).clamp(0, 255) as u8
}

/// A disparity picture plus the validity channel kept out of the image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DisparityImage {
    pub image: GrayImage,
    /// False for border and timed-out pixels.
    pub valid: Vec<bool>,
}

impl DisparityImage {
    /// Validity as a 0/255 mask image.
    pub fn mask_image(&self) -> GrayImage {
        GrayImage::new(
            self.image.width(),
            self.image.height(),
            self.valid.iter().map(|&v| if v { 255 } else { 0 }).collect(),
        )
        .expect("same dimensions as the disparity image")
    }
}

/// No-match is black, `d` maps to `round(255 * d / d_max)`, invalid pixels are
/// black in the image and false in the validity channel.
pub fn disparity_image(region: Region, classes: &[PixelClass], d_max: usize) -> DisparityImage {
    let image = GrayImage::new(
        region.width,
        region.height,
        classes
            .iter()
            .map(|c| c.disparity().map_or(0, |d| disparity_luminance(d, d_max)))
            .collect(),
    )
    .expect("one class per region pixel");
    let valid = classes
        .iter()
        .map(|c| matches!(c, PixelClass::Matched(_) | PixelClass::NoMatch))
        .collect();
    DisparityImage { image, valid }
}

pub fn reference_disparity_image(result: &ReferenceResult, d_max: usize) -> DisparityImage {
    disparity_image(result.region, &result.classes, d_max)
}
