//! The pixel-wise probabilistic disparity model.
//!
//! Images are filtered by three 5x5 kernels (mean, horizontal and vertical
//! gradient). Squared feature differences become likelihoods
//! `p0 + (1 - p0) * exp(-cost / (2 sigma^2))`, and a per-pixel "no match"
//! probability is derived from the left vertical gradient. Each valid pixel is
//! then a fusion problem with `D_max + 2` rows and three data terms.
//!
//! Kernels (weights listed left to right / top to bottom):
//!
//! * mean: 5x5 box, divided by 25.
//! * `g_H`: smoothing `[1, 1, 1, 1, 1]` down the columns times differencing
//!   `[-1, -1, 0, 1, 1]` along the rows, scaled by `127 / 2550`.
//! * `g_V`: the transpose of `g_H` (positive when brightness grows downwards).
//!
//! `2550 = 255 * 10` is the largest raw gradient of an 8-bit image, so
//! gradients stay within `[-127, 127]`. All outputs are rounded to the nearest
//! integer, ties away from zero.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::machine::{FusionSpec, Prior};

pub const KERNEL_SIZE: usize = 5;
const SMOOTH: [i32; KERNEL_SIZE] = [1, 1, 1, 1, 1];
const DIFF: [i32; KERNEL_SIZE] = [-1, -1, 0, 1, 1];
const MEAN_DIVISOR: i64 = 25;
const GRADIENT_NUM: i64 = 127;
const GRADIENT_DEN: i64 = 2550;

/// Integer division rounding to nearest, ties away from zero. `den > 0`.
pub(crate) fn div_round(num: i64, den: i64) -> i64 {
    if num >= 0 {
        (2 * num + den) / (2 * den)
    } else {
        -((-2 * num + den) / (2 * den))
    }
}

/// 8-bit luminance image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!("empty image {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> Result<Self> {
        let pixels = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Feature {
    Mean,
    GradH,
    GradV,
}

impl Feature {
    pub const ALL: [Feature; 3] = [Feature::Mean, Feature::GradH, Feature::GradV];
}

/// Filter outputs over the valid region, `(W - 4) x (H - 4)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureMaps {
    width: usize,
    height: usize,
    mean: Vec<i16>,
    grad_h: Vec<i16>,
    grad_v: Vec<i16>,
}

impl FeatureMaps {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, feature: Feature, x: usize, y: usize) -> i16 {
        let i = y * self.width + x;
        match feature {
            Feature::Mean => self.mean[i],
            Feature::GradH => self.grad_h[i],
            Feature::GradV => self.grad_v[i],
        }
    }

    pub fn map(&self, feature: Feature) -> &[i16] {
        match feature {
            Feature::Mean => &self.mean,
            Feature::GradH => &self.grad_h,
            Feature::GradV => &self.grad_v,
        }
    }
}

/// Applies the three 5x5 filters without padding.
pub fn compute_features(img: &GrayImage) -> Result<FeatureMaps> {
    let (w, h) = img.dims();
    if w < KERNEL_SIZE || h < KERNEL_SIZE {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
        });
    }
    let (wf, hf) = (w - 4, h - 4);
    // Horizontal pass: box and difference along each row.
    let mut row_sum = vec![0i32; wf * h];
    let mut row_diff = vec![0i32; wf * h];
    for y in 0..h {
        let row = &img.pixels[y * w..(y + 1) * w];
        for x in 0..wf {
            let win = &row[x..x + KERNEL_SIZE];
            let mut s = 0;
            let mut d = 0;
            for k in 0..KERNEL_SIZE {
                s += SMOOTH[k] * i32::from(win[k]);
                d += DIFF[k] * i32::from(win[k]);
            }
            row_sum[y * wf + x] = s;
            row_diff[y * wf + x] = d;
        }
    }
    let n = wf * hf;
    let mut mean = Vec::with_capacity(n);
    let mut grad_h = Vec::with_capacity(n);
    let mut grad_v = Vec::with_capacity(n);
    for y in 0..hf {
        for x in 0..wf {
            let mut box_sum = 0i64;
            let mut gh = 0i64;
            let mut gv = 0i64;
            for k in 0..KERNEL_SIZE {
                let i = (y + k) * wf + x;
                box_sum += i64::from(SMOOTH[k] * row_sum[i]);
                gh += i64::from(SMOOTH[k] * row_diff[i]);
                gv += i64::from(DIFF[k] * row_sum[i]);
            }
            mean.push(div_round(box_sum, MEAN_DIVISOR) as i16);
            grad_h.push(div_round(gh * GRADIENT_NUM, GRADIENT_DEN) as i16);
            grad_v.push(div_round(gv * GRADIENT_NUM, GRADIENT_DEN) as i16);
        }
    }
    Ok(FeatureMaps {
        width: wf,
        height: hf,
        mean,
        grad_h,
        grad_v,
    })
}

/// Model parameters. The default is the evaluated configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub d_max: usize,
    pub p0: f64,
    pub sigma_mean: f64,
    pub sigma_grad_h: f64,
    pub sigma_grad_v: f64,
    pub p_nm0: f64,
    pub sigma_nm: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            d_max: 80,
            p0: 0.02,
            sigma_mean: 10.0,
            sigma_grad_h: 10.0,
            sigma_grad_v: 10.0,
            p_nm0: 0.01,
            sigma_nm: 8.0,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.d_max == 0 {
            return bad("d_max must be positive".into());
        }
        if !(self.p0 > 0.0 && self.p0 < 1.0) {
            return bad(format!("p0 = {} must lie in (0, 1)", self.p0));
        }
        if !(self.p_nm0 > 0.0 && self.p_nm0 < 1.0) {
            return bad(format!("p_nm0 = {} must lie in (0, 1)", self.p_nm0));
        }
        if self.p_nm0 <= self.p0.powi(3) {
            return bad(format!(
                "p_nm0 = {} must exceed p0^3 = {} for occluded pixels to terminate",
                self.p_nm0,
                self.p0.powi(3)
            ));
        }
        for (name, s) in [
            ("sigma_mean", self.sigma_mean),
            ("sigma_grad_h", self.sigma_grad_h),
            ("sigma_grad_v", self.sigma_grad_v),
            ("sigma_nm", self.sigma_nm),
        ] {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("{name} = {s} must be positive"));
            }
        }
        Ok(())
    }

    pub fn sigma(&self, feature: Feature) -> f64 {
        match feature {
            Feature::Mean => self.sigma_mean,
            Feature::GradH => self.sigma_grad_h,
            Feature::GradV => self.sigma_grad_v,
        }
    }

    /// Rows of the disparity machine: disparities `0..=d_max` plus no-match.
    pub fn machine_width(&self) -> usize {
        self.d_max + 2
    }
}

/// Squared difference between `f_l(x, y)` and `f_r(x - d, y)`.
pub fn matching_cost(
    left: &FeatureMaps,
    right: &FeatureMaps,
    x: usize,
    y: usize,
    d: usize,
    feature: Feature,
    d_max: usize,
) -> Result<f64> {
    let inside = x >= d_max
        && d <= d_max
        && x < left.width
        && y < left.height
        && x < right.width
        && y < right.height;
    if !inside {
        return Err(Error::OutOfRange { x, y, d });
    }
    let diff = i32::from(left.get(feature, x, y)) - i32::from(right.get(feature, x - d, y));
    Ok(f64::from(diff * diff))
}

/// `p0 + (1 - p0) * exp(-cost / (2 sigma^2))`, in `[p0, 1]`.
pub fn likelihood(cost: f64, sigma: f64, p0: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma = {sigma} must be positive")));
    }
    if !(0.0..=1.0).contains(&p0) {
        return Err(Error::InvalidProbability(p0));
    }
    if !(cost >= 0.0) {
        return Err(Error::InvalidParameter(format!("cost = {cost} must be non-negative")));
    }
    Ok(decay(cost, sigma, p0))
}

fn decay(squared: f64, sigma: f64, floor: f64) -> f64 {
    let e = (-squared / (2.0 * sigma * sigma)).exp();
    (floor + (1.0 - floor) * e).clamp(floor, 1.0)
}

/// `p_nm0 + (1 - p_nm0) * exp(-g^2 / (2 sigma_nm^2))` where `g` is the left
/// image's vertical gradient itself.
pub fn nomatch_probability(grad_v_left: f64, p_nm0: f64, sigma_nm: f64) -> Result<f64> {
    if !(sigma_nm > 0.0 && sigma_nm.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "sigma_nm = {sigma_nm} must be positive"
        )));
    }
    if !(0.0..=1.0).contains(&p_nm0) {
        return Err(Error::InvalidProbability(p_nm0));
    }
    Ok(decay(grad_v_left * grad_v_left, sigma_nm, p_nm0))
}

/// Rectangle in feature-map coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Region {
    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    pub fn full(maps: &FeatureMaps) -> Self {
        Self::new(0, 0, maps.width, maps.height)
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x..self.x + self.width).contains(&x) && (self.y..self.y + self.height).contains(&y)
    }

    pub fn fits_within(&self, width: usize, height: usize) -> bool {
        self.width > 0
            && self.height > 0
            && self.x + self.width <= width
            && self.y + self.height <= height
    }

    /// Absolute coordinates in row-major order.
    pub fn coords(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y..self.y + self.height)
            .flat_map(move |y| (self.x..self.x + self.width).map(move |x| (x, y)))
    }

    /// Row-major index of an absolute coordinate inside the region.
    pub fn index(&self, x: usize, y: usize) -> Option<usize> {
        self.contains(x, y)
            .then(|| (y - self.y) * self.width + (x - self.x))
    }
}

/// Likelihoods for one valid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelLikelihoods {
    pub x: usize,
    pub y: usize,
    /// `terms[d] = [mean, g_H, g_V]` likelihoods for disparity `d`.
    pub terms: Vec<[f64; 3]>,
    pub nomatch: f64,
}

impl PixelLikelihoods {
    pub fn d_max(&self) -> usize {
        self.terms.len() - 1
    }

    /// Product of the three likelihoods for each disparity.
    pub fn products(&self) -> Vec<f64> {
        self.terms.iter().map(|t| t[0] * t[1] * t[2]).collect()
    }

    /// The machine for this pixel: `D_max + 2` rows, three columns, uniform
    /// constant-1 prior. The no-match row carries `(p_nomatch, 1, 1)`.
    pub fn fusion_spec(&self) -> Result<FusionSpec> {
        let m = self.terms.len() + 1;
        let mut table = vec![Vec::with_capacity(m); 3];
        for t in &self.terms {
            for (col, v) in table.iter_mut().zip(t) {
                col.push(*v);
            }
        }
        table[0].push(self.nomatch);
        table[1].push(1.0);
        table[2].push(1.0);
        FusionSpec::new(
            m,
            Prior::Uniform,
            table,
            vec![Some(self.terms.len() as f64), None, None, None],
        )
    }
}

/// Computes the likelihoods of a single pixel.
pub fn pixel_likelihoods(
    left: &FeatureMaps,
    right: &FeatureMaps,
    x: usize,
    y: usize,
    params: &ModelParams,
) -> Result<PixelLikelihoods> {
    let d_max = params.d_max;
    let mut terms = Vec::with_capacity(d_max + 1);
    for d in 0..=d_max {
        let mut t = [0.0; 3];
        for (slot, f) in t.iter_mut().zip(Feature::ALL) {
            let cost = matching_cost(left, right, x, y, d, f, d_max)?;
            *slot = likelihood(cost, params.sigma(f), params.p0)?;
        }
        terms.push(t);
    }
    let nomatch = nomatch_probability(
        f64::from(left.get(Feature::GradV, x, y)),
        params.p_nm0,
        params.sigma_nm,
    )?;
    Ok(PixelLikelihoods {
        x,
        y,
        terms,
        nomatch,
    })
}

/// Per-pixel likelihoods over a region. Pixels with `x < d_max` have no
/// entry.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodVolume {
    region: Region,
    d_max: usize,
    pixels: Vec<PixelLikelihoods>,
}

impl LikelihoodVolume {
    pub fn from_features(
        left: &FeatureMaps,
        right: &FeatureMaps,
        params: &ModelParams,
        region: Region,
    ) -> Result<Self> {
        params.validate()?;
        if (left.width, left.height) != (right.width, right.height) {
            return Err(Error::DimensionMismatch {
                left: (left.width, left.height),
                right: (right.width, right.height),
            });
        }
        if !region.fits_within(left.width, left.height) {
            return Err(Error::Config(format!(
                "region {region:?} is outside the {}x{} feature maps",
                left.width, left.height
            )));
        }
        let coords: Vec<(usize, usize)> =
            region.coords().filter(|&(x, _)| x >= params.d_max).collect();
        let pixels = coords
            .into_par_iter()
            .map(|(x, y)| pixel_likelihoods(left, right, x, y, params))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            region,
            d_max: params.d_max,
            pixels,
        })
    }

    /// Wraps precomputed likelihoods (e.g. hand-built test volumes).
    pub fn from_pixels(region: Region, d_max: usize, pixels: Vec<PixelLikelihoods>) -> Result<Self> {
        for p in &pixels {
            if p.terms.len() != d_max + 1 || !region.contains(p.x, p.y) || p.x < d_max {
                return Err(Error::OutOfRange {
                    x: p.x,
                    y: p.y,
                    d: p.terms.len().saturating_sub(1),
                });
            }
        }
        Ok(Self {
            region,
            d_max,
            pixels,
        })
    }

    pub fn region(&self) -> Region {
        self.region
    }

    pub fn d_max(&self) -> usize {
        self.d_max
    }

    /// Valid pixels in row-major order.
    pub fn pixels(&self) -> &[PixelLikelihoods] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> Option<&PixelLikelihoods> {
        self.pixels.iter().find(|p| p.x == x && p.y == y)
    }
}

/// The fusion problem at pixel `(x, y)` of a volume.
pub fn build_pixel_spec(volume: &LikelihoodVolume, x: usize, y: usize) -> Result<FusionSpec> {
    volume
        .pixel(x, y)
        .ok_or(Error::OutOfRange { x, y, d: 0 })?
        .fusion_spec()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraGeometry {
    pub focal_length: f64,
    pub baseline: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Depth {
    Finite(f64),
    /// Zero disparity: point at infinity.
    Infinite,
}

/// `Z = B * f / (d * pixel_pitch)`, with `f`, `B` and the pitch in the same
/// length unit.
pub fn disparity_to_depth(d: u32, geom: &CameraGeometry, pixel_pitch: f64) -> Result<Depth> {
    if !(geom.focal_length > 0.0 && geom.baseline > 0.0 && pixel_pitch > 0.0) {
        return Err(Error::InvalidParameter(
            "focal length, baseline and pixel pitch must be positive".into(),
        ));
    }
    if d == 0 {
        return Ok(Depth::Infinite);
    }
    Ok(Depth::Finite(
        geom.baseline * geom.focal_length / (f64::from(d) * pixel_pitch),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct 5x5 correlation with the full 2D kernels.
    fn oracle(img: &GrayImage) -> FeatureMaps {
        let (w, h) = img.dims();
        let (wf, hf) = (w - 4, h - 4);
        let mut mean = vec![];
        let mut gh = vec![];
        let mut gv = vec![];
        for y in 0..hf {
            for x in 0..wf {
                let (mut s, mut a, mut b) = (0i64, 0i64, 0i64);
                for ky in 0..5 {
                    for kx in 0..5 {
                        let v = i64::from(img.get(x + kx, y + ky));
                        s += v;
                        a += i64::from(DIFF[kx]) * v;
                        b += i64::from(DIFF[ky]) * v;
                    }
                }
                let round = |n: i64, d: i64| {
                    let q = n as f64 / d as f64;
                    (q.abs() + 0.5).floor().copysign(q) as i16
                };
                mean.push(round(s, 25));
                gh.push(round(a * 127, 2550));
                gv.push(round(b * 127, 2550));
            }
        }
        FeatureMaps {
            width: wf,
            height: hf,
            mean,
            grad_h: gh,
            grad_v: gv,
        }
    }

    #[test]
    fn div_round_ties_away_from_zero() {
        assert_eq!(div_round(5, 2), 3);
        assert_eq!(div_round(-5, 2), -3);
        assert_eq!(div_round(4, 3), 1);
        assert_eq!(div_round(-4, 3), -1);
        assert_eq!(div_round(0, 7), 0);
    }

    #[test]
    fn flat_field() {
        let img = GrayImage::filled(9, 8, 128).unwrap();
        let f = compute_features(&img).unwrap();
        assert_eq!((f.width(), f.height()), (5, 4));
        assert!(f.map(Feature::Mean).iter().all(|&v| v == 128));
        assert!(f.map(Feature::GradH).iter().all(|&v| v == 0));
        assert!(f.map(Feature::GradV).iter().all(|&v| v == 0));
    }

    #[test]
    fn vertical_step_edge() {
        let img = GrayImage::from_fn(12, 7, |x, _| if x < 6 { 0 } else { 255 }).unwrap();
        let f = compute_features(&img).unwrap();
        let row: Vec<i16> = (0..f.width()).map(|x| f.get(Feature::GradH, x, 1)).collect();
        let max = *row.iter().max().unwrap();
        // windows starting at x = 3, 4 have the edge between their +1 taps
        // and their -1 taps: 5 rows * 510 = 2550, the full-scale response
        assert_eq!(max, 127);
        assert_eq!((row[3], row[4]), (127, 127));
        assert_eq!((row[2], row[5]), (64, 64));
        assert_eq!(row[0], 0);
        assert!(f.map(Feature::GradV).iter().all(|&v| v == 0));
        assert_eq!(f.get(Feature::Mean, 0, 0), 0);
        assert_eq!(f.get(Feature::Mean, f.width() - 1, 0), 255);
    }

    #[test]
    fn extreme_gradients_hit_range_limits() {
        let img = GrayImage::from_fn(5, 5, |x, _| if x >= 3 { 255 } else if x == 2 { 128 } else { 0 })
            .unwrap();
        let f = compute_features(&img).unwrap();
        assert_eq!(f.get(Feature::GradH, 0, 0), 127);
        let img = GrayImage::from_fn(5, 5, |_, y| if y <= 1 { 255 } else { 0 }).unwrap();
        assert_eq!(compute_features(&img).unwrap().get(Feature::GradV, 0, 0), -127);
    }

    #[test]
    fn ramp_matches_direct_convolution() {
        let img = GrayImage::from_fn(7, 7, |x, _| (10 * x) as u8).unwrap();
        let f = compute_features(&img).unwrap();
        assert_eq!(f, oracle(&img));
        // mean of 10x over a 5-wide window centred at x + 2
        assert_eq!(f.get(Feature::Mean, 0, 0), 20);
        assert_eq!(f.get(Feature::Mean, 2, 2), 40);
        // raw horizontal response is 5 rows * 60 = 300, times 127/2550
        assert_eq!(f.get(Feature::GradH, 1, 1), 15);
    }

    #[test]
    fn too_small_image_is_rejected() {
        let img = GrayImage::filled(4, 9, 0).unwrap();
        assert!(matches!(
            compute_features(&img),
            Err(Error::ImageTooSmall { width: 4, height: 9 })
        ));
    }

    #[test]
    fn cost_examples() {
        let img = GrayImage::from_fn(20, 6, |x, y| (x * 7 + y * 3) as u8).unwrap();
        let f = compute_features(&img).unwrap();
        assert_eq!(matching_cost(&f, &f, 5, 1, 0, Feature::Mean, 4).unwrap(), 0.0);
        assert!(matches!(
            matching_cost(&f, &f, 3, 1, 0, Feature::Mean, 4),
            Err(Error::OutOfRange { .. })
        ));
        assert!(matching_cost(&f, &f, 5, 1, 5, Feature::Mean, 4).is_err());
        assert!(matching_cost(&f, &f, 5, 2, 0, Feature::Mean, 4).is_err());

        let left = FeatureMaps {
            width: 2,
            height: 1,
            mean: vec![0, 100],
            grad_h: vec![0, 0],
            grad_v: vec![0, 0],
        };
        let right = FeatureMaps {
            mean: vec![90, 0],
            ..left.clone()
        };
        assert_eq!(matching_cost(&left, &right, 1, 0, 1, Feature::Mean, 1).unwrap(), 100.0);
    }

    #[test]
    fn planted_shift_has_zero_cost() {
        let shift = 6;
        let tex = |x: usize, y: usize| ((x * 37 + y * 91 + (x * y) % 13) % 251) as u8;
        let left = GrayImage::from_fn(40, 12, |x, y| tex(x, y)).unwrap();
        let right = GrayImage::from_fn(40, 12, |x, y| tex(x + shift, y)).unwrap();
        let fl = compute_features(&left).unwrap();
        let fr = compute_features(&right).unwrap();
        let d_max = 10;
        for y in 0..fl.height() {
            for x in d_max..fl.width() {
                for f in Feature::ALL {
                    assert_eq!(matching_cost(&fl, &fr, x, y, shift, f, d_max).unwrap(), 0.0);
                }
            }
        }
    }

    #[test]
    fn likelihood_examples() {
        assert_eq!(likelihood(0.0, 10.0, 0.02).unwrap(), 1.0);
        assert_eq!(likelihood(1e9, 10.0, 0.02).unwrap(), 0.02);
        // 0.02 + 0.98 * exp(-1)
        let v = likelihood(200.0, 10.0, 0.02).unwrap();
        assert!((v - 0.380_521_852_348_013_5).abs() < 1e-12, "{v}");
        assert!(likelihood(1.0, 0.0, 0.02).is_err());
        assert!(likelihood(1.0, -1.0, 0.02).is_err());
        assert!(likelihood(-1.0, 1.0, 0.02).is_err());
    }

    #[test]
    fn nomatch_examples() {
        assert_eq!(nomatch_probability(0.0, 0.01, 8.0).unwrap(), 1.0);
        assert_eq!(nomatch_probability(1e6, 0.01, 8.0).unwrap(), 0.01);
        // 0.01 + 0.99 * exp(-1/2)
        let v = nomatch_probability(8.0, 0.01, 8.0).unwrap();
        assert!((v - 0.610_465_353_115_507_1).abs() < 1e-12, "{v}");
        assert_eq!(
            nomatch_probability(-8.0, 0.01, 8.0).unwrap(),
            nomatch_probability(8.0, 0.01, 8.0).unwrap()
        );
        assert!(nomatch_probability(1.0, 0.01, 0.0).is_err());
    }

    #[test]
    fn params_validation() {
        let p = ModelParams::default();
        p.validate().unwrap();
        assert_eq!(p.machine_width(), 82);
        for bad in [
            ModelParams { p0: 0.0, ..p },
            ModelParams { p_nm0: 1.0, ..p },
            ModelParams { p_nm0: 1e-6, ..p },
            ModelParams { sigma_nm: 0.0, ..p },
            ModelParams { sigma_grad_v: -2.0, ..p },
            ModelParams { d_max: 0, ..p },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    fn synthetic_pixel(d_max: usize, winner: Option<usize>, nomatch: f64, p0: f64) -> PixelLikelihoods {
        PixelLikelihoods {
            x: d_max,
            y: 0,
            terms: (0..=d_max)
                .map(|d| if Some(d) == winner { [1.0; 3] } else { [p0; 3] })
                .collect(),
            nomatch,
        }
    }

    #[test]
    fn pixel_spec_layout() {
        let px = synthetic_pixel(80, Some(5), 0.3, 0.02);
        let spec = px.fusion_spec().unwrap();
        assert_eq!((spec.width(), spec.term_count()), (82, 3));
        assert_eq!(spec.constants()[0], Some(81.0));
        let out = spec.output_p_values();
        let best = (0..82).max_by(|&a, &b| out[a].total_cmp(&out[b])).unwrap();
        assert_eq!(best, 5);
        assert_eq!(spec.term(0, 81), 0.3);
        assert_eq!(spec.term(1, 81), 1.0);
        assert_eq!(spec.term(2, 81), 1.0);
    }

    #[test]
    fn occluded_pixel_favours_nomatch_row() {
        let p = ModelParams::default();
        let px = synthetic_pixel(p.d_max, None, p.p_nm0, p.p0);
        let out = px.fusion_spec().unwrap().output_p_values();
        let occluded = p.p0.powi(3);
        assert!((occluded - 8e-6).abs() < 1e-18);
        assert!(out[..=p.d_max].iter().all(|&v| (v - occluded).abs() < 1e-18));
        assert_eq!(out[p.d_max + 1], p.p_nm0);
        assert!(out[p.d_max + 1] > occluded);
    }

    #[test]
    fn volume_skips_border_and_builds_specs() {
        let img = GrayImage::from_fn(30, 10, |x, y| ((x * 29 + y * 53) % 256) as u8).unwrap();
        let f = compute_features(&img).unwrap();
        let params = ModelParams {
            d_max: 8,
            ..ModelParams::default()
        };
        let vol = LikelihoodVolume::from_features(&f, &f, &params, Region::full(&f)).unwrap();
        assert_eq!(vol.pixels().len(), (26 - 8) * 6);
        assert!(vol.pixel(7, 0).is_none());
        let spec = build_pixel_spec(&vol, 8, 0).unwrap();
        assert_eq!(spec.width(), 10);
        assert!(build_pixel_spec(&vol, 2, 0).is_err());
        assert!(LikelihoodVolume::from_features(&f, &f, &params, Region::new(20, 0, 10, 2)).is_err());
    }

    #[test]
    fn depth_from_disparity() {
        let geom = CameraGeometry {
            focal_length: 2.5,
            baseline: 120.0,
        };
        // pitch such that the largest disparity 80 sits at 420 mm
        let pitch = 120.0 * 2.5 / (420.0 * 80.0);
        let Depth::Finite(z80) = disparity_to_depth(80, &geom, pitch).unwrap() else {
            panic!()
        };
        assert!((z80 - 420.0).abs() < 1e-9);
        let Depth::Finite(z1) = disparity_to_depth(1, &geom, pitch).unwrap() else {
            panic!()
        };
        assert!((z1 - 33_600.0).abs() < 1e-6);
        let Depth::Finite(z40) = disparity_to_depth(40, &geom, pitch).unwrap() else {
            panic!()
        };
        assert!((z40 - 2.0 * z80).abs() < 1e-9);
        assert_eq!(disparity_to_depth(0, &geom, pitch).unwrap(), Depth::Infinite);
        assert!(disparity_to_depth(3, &geom, 0.0).is_err());
    }

    fn image_strategy() -> impl Strategy<Value = GrayImage> {
        (5usize..16, 5usize..16).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<u8>(), w * h)
                .prop_map(move |px| GrayImage::new(w, h, px).unwrap())
        })
    }

    proptest! {
        #[test]
        fn features_match_direct_convolution(img in image_strategy()) {
            let f = compute_features(&img).unwrap();
            prop_assert_eq!(&f, &oracle(&img));
            prop_assert!(f.map(Feature::Mean).iter().all(|&v| (0..=255).contains(&v)));
            prop_assert!(f.map(Feature::GradH).iter().all(|&v| (-127..=127).contains(&v)));
            prop_assert!(f.map(Feature::GradV).iter().all(|&v| (-127..=127).contains(&v)));
        }

        #[test]
        fn likelihood_strictly_decreasing(
            c1 in 0.0f64..5000.0, gap in 0.01f64..5000.0,
            sigma in 5.0f64..50.0, p0 in 0.001f64..0.5,
        ) {
            let a = likelihood(c1, sigma, p0).unwrap();
            let b = likelihood(c1 + gap, sigma, p0).unwrap();
            prop_assert!(a >= b);
            // strict while the exponential term is resolvable next to p0
            if (-c1 / (2.0 * sigma * sigma)).exp() > 1e-12 {
                prop_assert!(a > b);
            }
            prop_assert!((p0..=1.0).contains(&a) && (p0..=1.0).contains(&b));
        }

        #[test]
        fn volume_values_in_range(img in image_strategy(), seed in any::<u8>()) {
            let other = GrayImage::from_fn(img.width(), img.height(), |x, y| {
                img.get(x, y).wrapping_add(seed.wrapping_mul((x + y) as u8))
            }).unwrap();
            let fl = compute_features(&img).unwrap();
            let fr = compute_features(&other).unwrap();
            let params = ModelParams { d_max: 1, ..ModelParams::default() };
            if fl.width() > 1 {
                let vol = LikelihoodVolume::from_features(&fl, &fr, &params, Region::full(&fl)).unwrap();
                for px in vol.pixels() {
                    prop_assert!((params.p_nm0..=1.0).contains(&px.nomatch));
                    for t in &px.terms {
                        prop_assert!(t.iter().all(|v| (params.p0..=1.0).contains(v)));
                    }
                }
            }
        }
    }
}
