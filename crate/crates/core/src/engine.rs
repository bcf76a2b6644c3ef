//! Runs the disparity machine at every valid pixel of a likelihood volume.
//!
//! Each pixel gets a freshly built machine seeded from the master seed and its
//! absolute feature-map coordinates, so results do not depend on scan order,
//! cropping or thread count.

use rayon::prelude::*;

use crate::error::Result;
use crate::machine::{build_machine, run_machine};
use crate::model::{LikelihoodVolume, PixelLikelihoods, Region};
use crate::reference::{disparity_image, region_classes, DisparityImage, PixelClass};
use crate::stochastic::{derive_seed, RunOutcome, DEFAULT_MAX_CYCLES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineConfig {
    pub n_max: u32,
    pub seed: u64,
    pub max_cycles: u64,
}

impl EngineConfig {
    pub fn new(n_max: u32, seed: u64) -> Self {
        Self {
            n_max,
            seed,
            max_cycles: DEFAULT_MAX_CYCLES,
        }
    }
}

pub fn pixel_seed(master: u64, x: usize, y: usize) -> u64 {
    derive_seed(master, &[x as u64, y as u64])
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StochasticPixel {
    pub x: usize,
    pub y: usize,
    /// `D_max + 2` counter values; the last one is no-match.
    pub counts: Vec<u32>,
    pub cycles: u64,
    pub class: PixelClass,
}

impl StochasticPixel {
    /// Max-normalized readout of the disparity counters, `None` on timeout.
    pub fn disparity_readout(&self, n_max: u32) -> Option<Vec<f64>> {
        (self.class != PixelClass::Timeout).then(|| {
            self.counts[..self.counts.len() - 1]
                .iter()
                .map(|&c| f64::from(c) / f64::from(n_max))
                .collect()
        })
    }
}

pub fn run_pixel(px: &PixelLikelihoods, config: &EngineConfig) -> Result<StochasticPixel> {
    let spec = px.fusion_spec()?;
    let mut machine = build_machine(&spec, config.n_max, pixel_seed(config.seed, px.x, px.y))?;
    let result = run_machine(&mut machine, config.max_cycles)?;
    let nomatch_row = px.terms.len();
    let class = match result.outcome {
        RunOutcome::Overflow { winner } if winner == nomatch_row => PixelClass::NoMatch,
        RunOutcome::Overflow { winner } => PixelClass::Matched(winner),
        RunOutcome::Timeout => PixelClass::Timeout,
    };
    Ok(StochasticPixel {
        x: px.x,
        y: px.y,
        counts: result.counts,
        cycles: result.cycles,
        class,
    })
}

/// Mean and standard deviation of cycles per completed pixel.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CycleStats {
    pub mean: f64,
    pub sd: f64,
    pub completed: usize,
    pub timeouts: usize,
}

impl CycleStats {
    pub fn from_pixels<'a>(pixels: impl IntoIterator<Item = &'a StochasticPixel>) -> Self {
        Self::from_cycles(
            pixels
                .into_iter()
                .map(|p| (p.class != PixelClass::Timeout).then_some(p.cycles)),
        )
    }

    /// `None` entries are timeouts.
    pub fn from_cycles(cycles: impl IntoIterator<Item = Option<u64>>) -> Self {
        let mut n = 0usize;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut timeouts = 0;
        for c in cycles {
            let Some(c) = c else {
                timeouts += 1;
                continue;
            };
            let c = c as f64;
            n += 1;
            sum += c;
            sum_sq += c * c;
        }
        if n == 0 {
            return Self {
                timeouts,
                ..Self::default()
            };
        }
        let mean = sum / n as f64;
        let var = if n > 1 {
            ((sum_sq - sum * mean) / (n - 1) as f64).max(0.0)
        } else {
            0.0
        };
        Self {
            mean,
            sd: var.sqrt(),
            completed: n,
            timeouts,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StochasticResult {
    region: Region,
    d_max: usize,
    n_max: u32,
    classes: Vec<PixelClass>,
    pixels: Vec<StochasticPixel>,
}

impl StochasticResult {
    pub fn region(&self) -> Region {
        self.region
    }

    pub fn d_max(&self) -> usize {
        self.d_max
    }

    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    pub fn classes(&self) -> &[PixelClass] {
        &self.classes
    }

    pub fn pixels(&self) -> &[StochasticPixel] {
        &self.pixels
    }

    pub fn class_at(&self, x: usize, y: usize) -> Option<PixelClass> {
        self.region.index(x, y).map(|i| self.classes[i])
    }

    pub fn cycle_stats(&self) -> CycleStats {
        CycleStats::from_pixels(&self.pixels)
    }

    pub fn disparity_image(&self) -> DisparityImage {
        disparity_image(self.region, &self.classes, self.d_max)
    }
}

pub fn run_stochastic(volume: &LikelihoodVolume, config: &EngineConfig) -> Result<StochasticResult> {
    let pixels = volume
        .pixels()
        .par_iter()
        .map(|px| run_pixel(px, config))
        .collect::<Result<Vec<_>>>()?;
    let classes = region_classes(volume.region(), volume.d_max(), pixels.iter().map(|p| p.class));
    Ok(StochasticResult {
        region: volume.region(),
        d_max: volume.d_max(),
        n_max: config.n_max,
        classes,
        pixels,
    })
}
