//! Procedural rectified stereo pairs.
//!
//! [`planted_shift_pair`] gives a pair with one uniform disparity over i.i.d.
//! texture. [`natural_scene`] renders a small indoor-like layout of planar
//! surfaces (back wall, slanted floor, boxes) covered with 1/f value noise,
//! with sensor noise and a photometric offset between the cameras. Surfaces
//! are defined in left-image coordinates with disparity `a + b x + c y`;
//! nearer surfaces (larger disparity) occlude farther ones in both views.

use rand::{RngExt, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::model::GrayImage;
use crate::stochastic::derive_seed;

/// Left and right views of width `width` where `right(x - shift) = left(x)`.
pub fn planted_shift_pair(
    width: usize,
    height: usize,
    shift: usize,
    seed: u64,
) -> Result<(GrayImage, GrayImage)> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let tw = width + shift;
    let texture: Vec<u8> = (0..tw * height).map(|_| rng.random()).collect();
    let left = GrayImage::from_fn(width, height, |x, y| texture[y * tw + x])?;
    let right = GrayImage::from_fn(width, height, |x, y| texture[y * tw + x + shift])?;
    Ok((left, right))
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = derive_seed(seed, &[ix as u64, iy as u64]);
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Octave value noise with equal variance per octave (the 1/f amplitude
/// spectrum of natural images), standard deviation about 0.5.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Texture {
    pub seed: u64,
    pub finest_period: f64,
    pub octaves: u32,
}

impl Texture {
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let mut sum = 0.0;
        let mut period = self.finest_period;
        for k in 0..self.octaves {
            let (u, v) = (x / period, y / period);
            let (fx, fy) = (u.floor(), v.floor());
            let (tx, ty) = (smooth(u - fx), smooth(v - fy));
            let (ix, iy) = (fx as i64, fy as i64);
            let s = derive_seed(self.seed, &[u64::from(k)]);
            let top = lattice(s, ix, iy) * (1.0 - tx) + lattice(s, ix + 1, iy) * tx;
            let bottom = lattice(s, ix, iy + 1) * (1.0 - tx) + lattice(s, ix + 1, iy + 1) * tx;
            sum += top * (1.0 - ty) + bottom * ty;
            period *= 2.0;
        }
        sum / f64::from(self.octaves).sqrt() * 1.25
    }
}

/// Axis-aligned extent in left-image coordinates; bounds are half-open.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extent {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Extent {
    pub const ALL: Extent = Extent {
        x0: f64::NEG_INFINITY,
        x1: f64::INFINITY,
        y0: f64::NEG_INFINITY,
        y1: f64::INFINITY,
    };

    fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// A textured planar surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Surface {
    /// Disparity `a + b x + c y` at left-image position `(x, y)`.
    pub plane: [f64; 3],
    pub extent: Extent,
    pub texture: Texture,
    pub mean: f64,
    pub contrast: f64,
}

impl Surface {
    fn disparity(&self, x: f64, y: f64) -> f64 {
        self.plane[0] + self.plane[1] * x + self.plane[2] * y
    }

    fn shade(&self, x: f64, y: f64) -> f64 {
        self.mean + self.contrast * self.texture.sample(x, y)
    }

    /// Left-image abscissa of the surface point seen at right-image `xr`.
    fn left_x(&self, xr: f64, y: f64) -> f64 {
        (xr + self.plane[0] + self.plane[2] * y) / (1.0 - self.plane[1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    /// Disparity range of the back wall.
    pub wall_disparity: (f64, f64),
    /// Floor disparity at the bottom row.
    pub floor_disparity: (f64, f64),
    /// Fraction of the height where the floor begins.
    pub horizon: f64,
    pub boxes: usize,
    pub box_disparity: (f64, f64),
    /// Box side length as a fraction of the image height.
    pub box_size: (f64, f64),
    pub contrast: (f64, f64),
    /// Contrast of the low-texture patch on the wall.
    pub flat_contrast: f64,
    pub finest_period: f64,
    pub octaves: u32,
    /// Gaussian sensor noise (gray levels).
    pub noise_sd: f64,
    /// Right-camera photometric response `gain * v + offset`.
    pub right_gain: f64,
    pub right_offset: f64,
    /// Residual vertical misalignment of the right view after rectification,
    /// in pixels.
    pub right_dy: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 176,
            height: 112,
            wall_disparity: (6.0, 12.0),
            floor_disparity: (34.0, 46.0),
            horizon: 0.55,
            boxes: 3,
            box_disparity: (16.0, 60.0),
            box_size: (0.2, 0.45),
            contrast: (80.0, 140.0),
            flat_contrast: 3.0,
            finest_period: 1.0,
            octaves: 5,
            noise_sd: 2.0,
            right_gain: 1.0,
            right_offset: 3.0,
            right_dy: 0.25,
        }
    }
}

/// A rendered pair with the left-view ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoScene {
    pub left: GrayImage,
    pub right: GrayImage,
    /// Disparity of the visible surface at each left pixel, row-major.
    pub disparity: Vec<f64>,
    /// Left pixels whose surface point is hidden in the right view.
    pub occluded: Vec<bool>,
    pub surfaces: Vec<Surface>,
}

fn uniform(rng: &mut Xoshiro256PlusPlus, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

pub fn scene_surfaces(config: &SceneConfig, seed: u64) -> Vec<Surface> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let (w, h) = (config.width as f64, config.height as f64);
    let texture = |rng: &mut Xoshiro256PlusPlus| Texture {
        seed: rng.random(),
        finest_period: config.finest_period,
        octaves: config.octaves,
    };
    let mut surfaces = Vec::new();

    let wall = uniform(&mut rng, config.wall_disparity);
    surfaces.push(Surface {
        plane: [wall, 0.0, 0.0],
        extent: Extent::ALL,
        texture: texture(&mut rng),
        mean: uniform(&mut rng, (90.0, 160.0)),
        contrast: uniform(&mut rng, config.contrast),
    });
    // a poorly textured patch on the wall, slightly in front of it
    let pw = uniform(&mut rng, (0.15, 0.3)) * w;
    let ph = uniform(&mut rng, (0.15, 0.3)) * h;
    let px = uniform(&mut rng, (0.0, w - pw));
    let py = uniform(&mut rng, (0.0, (config.horizon * h - ph).max(1.0)));
    surfaces.push(Surface {
        plane: [wall + 0.5, 0.0, 0.0],
        extent: Extent {
            x0: px,
            x1: px + pw,
            y0: py,
            y1: py + ph,
        },
        texture: texture(&mut rng),
        mean: uniform(&mut rng, (120.0, 200.0)),
        contrast: config.flat_contrast,
    });

    let horizon = config.horizon * h;
    let bottom = uniform(&mut rng, config.floor_disparity);
    let slope = (bottom - wall) / (h - horizon);
    surfaces.push(Surface {
        plane: [wall - slope * horizon, 0.0, slope],
        extent: Extent {
            y0: horizon,
            ..Extent::ALL
        },
        texture: texture(&mut rng),
        mean: uniform(&mut rng, (60.0, 140.0)),
        contrast: uniform(&mut rng, config.contrast),
    });

    for _ in 0..config.boxes {
        let bw = uniform(&mut rng, config.box_size) * h;
        let bh = uniform(&mut rng, config.box_size) * h;
        let bx = uniform(&mut rng, (0.0, (w - bw).max(1.0)));
        let by = uniform(&mut rng, (0.0, (h - bh).max(1.0)));
        let d = uniform(&mut rng, config.box_disparity);
        // mild slant across the face
        let b = uniform(&mut rng, (-0.02, 0.02));
        surfaces.push(Surface {
            plane: [d - b * (bx + bw / 2.0), b, 0.0],
            extent: Extent {
                x0: bx,
                x1: bx + bw,
                y0: by,
                y1: by + bh,
            },
            texture: texture(&mut rng),
            mean: uniform(&mut rng, (40.0, 210.0)),
            contrast: uniform(&mut rng, config.contrast),
        });
    }
    surfaces
}

/// Nearest surface covering left-image point `(x, y)`.
fn visible_left(surfaces: &[Surface], x: f64, y: f64) -> Option<(usize, f64)> {
    surfaces
        .iter()
        .enumerate()
        .filter(|(_, s)| s.extent.contains(x, y))
        .map(|(i, s)| (i, s.disparity(x, y)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
}

/// Nearest surface seen at right-image point `(xr, y)`, with its left abscissa.
fn visible_right(surfaces: &[Surface], xr: f64, y: f64) -> Option<(usize, f64, f64)> {
    surfaces
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            let xl = s.left_x(xr, y);
            s.extent.contains(xl, y).then(|| (i, xl, s.disparity(xl, y)))
        })
        .max_by(|a, b| a.2.total_cmp(&b.2))
}

fn to_gray(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

pub fn natural_scene(config: &SceneConfig, seed: u64) -> Result<StereoScene> {
    if config.width < 5 || config.height < 5 {
        return Err(Error::ImageTooSmall {
            width: config.width,
            height: config.height,
        });
    }
    if !(config.noise_sd >= 0.0) {
        return Err(Error::Config("noise standard deviation must be nonnegative".into()));
    }
    let surfaces = scene_surfaces(config, seed);
    let (w, h) = (config.width, config.height);
    let noise = Normal::new(0.0, config.noise_sd).expect("validated above");
    let mut noise_rng = Xoshiro256PlusPlus::seed_from_u64(derive_seed(seed, &[0x6e6f697365]));

    let mut left = Vec::with_capacity(w * h);
    let mut disparity = Vec::with_capacity(w * h);
    let mut occluded = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let (i, d) = visible_left(&surfaces, xf, yf).expect("the wall covers the plane");
            left.push(to_gray(surfaces[i].shade(xf, yf) + noise.sample(&mut noise_rng)));
            disparity.push(d);
            // hidden in the right view when a nearer surface covers its image there
            let hidden = visible_right(&surfaces, xf - d, yf).is_some_and(|(j, _, _)| j != i);
            occluded.push(hidden);
        }
    }
    let mut right = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let yf = y as f64 + config.right_dy;
            let (i, xl, _) = visible_right(&surfaces, x as f64, yf).expect("the wall covers the plane");
            let v = config.right_gain * surfaces[i].shade(xl, yf)
                + config.right_offset
                + noise.sample(&mut noise_rng);
            right.push(to_gray(v));
        }
    }
    Ok(StereoScene {
        left: GrayImage::new(w, h, left)?,
        right: GrayImage::new(w, h, right)?,
        disparity,
        occluded,
        surfaces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{compute_features, matching_cost, Feature};

    #[test]
    fn planted_shift_has_zero_cost_at_shift() {
        let (l, r) = planted_shift_pair(40, 12, 5, 3).unwrap();
        for y in 0..12 {
            for x in 5..40 {
                assert_eq!(l.get(x, y), r.get(x - 5, y));
            }
        }
        let (fl, fr) = (compute_features(&l).unwrap(), compute_features(&r).unwrap());
        for f in Feature::ALL {
            assert_eq!(matching_cost(&fl, &fr, 20, 3, 5, f, 5).unwrap(), 0.0);
        }
    }

    #[test]
    fn texture_is_deterministic_and_bounded() {
        let t = Texture {
            seed: 7,
            finest_period: 2.0,
            octaves: 6,
        };
        let mut max = 0.0f64;
        for i in 0..2000 {
            let (x, y) = (i as f64 * 0.37, i as f64 * 0.11);
            let v = t.sample(x, y);
            assert_eq!(v, t.sample(x, y));
            max = max.max(v.abs());
        }
        assert!(max < 1.8 && max > 0.3, "{max}");
    }

    #[test]
    fn scene_is_reproducible_and_consistent() {
        let config = SceneConfig::default();
        let a = natural_scene(&config, 11).unwrap();
        let b = natural_scene(&config, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.left, natural_scene(&config, 12).unwrap().left);
        let d_max = a.disparity.iter().cloned().fold(0.0, f64::max);
        assert!(d_max < 80.0, "{d_max}");
        assert!(a.occluded.iter().any(|&o| o));
        assert!(a.occluded.iter().filter(|&&o| o).count() < a.occluded.len() / 4);
    }

    #[test]
    fn noiseless_fronto_parallel_scene_matches_truth() {
        let config = SceneConfig {
            boxes: 0,
            noise_sd: 0.0,
            right_offset: 0.0,
            right_dy: 0.0,
            horizon: 2.0,
            wall_disparity: (8.0, 8.0),
            flat_contrast: 40.0,
            ..SceneConfig::default()
        };
        let s = natural_scene(&config, 5).unwrap();
        let wall = s.surfaces[0].plane[0];
        assert_eq!(wall, 8.0);
        let mut checked = 0;
        for y in 0..config.height {
            for x in 8..config.width {
                if s.disparity[y * config.width + x] == wall && !s.occluded[y * config.width + x] {
                    assert_eq!(s.right.get(x - 8, y), s.left.get(x, y));
                    checked += 1;
                }
            }
        }
        assert!(checked > config.width * config.height / 2);
    }
}
