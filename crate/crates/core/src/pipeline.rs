//! Image pair in, disparity images, dumps and statistics out.
//!
//! The region is processed in bands of rows so full-size images never hold a
//! complete likelihood volume in memory. Every per-pixel result depends only
//! on the pixel's absolute coordinates, so banding changes nothing in the
//! output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::dump::{DistributionDump, DumpKind, REFERENCE_SCALE};
use crate::engine::{run_stochastic, CycleStats, EngineConfig};
use crate::error::{Error, Result};
use crate::eval::{compare_accumulate, AccuracyAccumulator, AccuracyReport};
use crate::model::{compute_features, GrayImage, LikelihoodVolume, ModelParams, Region};
use crate::pnm::{load_image, save_image};
use crate::reference::{disparity_image, reference_infer, PixelClass};
use crate::stochastic::DEFAULT_MAX_CYCLES;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Reference,
    Stochastic,
    Both,
}

impl Mode {
    fn reference(self) -> bool {
        matches!(self, Mode::Reference | Mode::Both)
    }

    fn stochastic(self) -> bool {
        matches!(self, Mode::Stochastic | Mode::Both)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: ModelParams,
    pub mode: Mode,
    pub n_max: u32,
    pub seed: u64,
    pub max_cycles: u64,
    /// Feature-map coordinates; the whole map when `None`.
    pub crop: Option<Region>,
    pub out_dir: PathBuf,
    pub dump: bool,
    /// Largest tolerated fraction of timed-out pixels.
    pub timeout_threshold: f64,
    /// Worker threads; the global pool when `None`.
    pub workers: Option<usize>,
    /// Rows per processing band.
    pub band_rows: usize,
}

impl RunConfig {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            params: ModelParams::default(),
            mode: Mode::Both,
            n_max: 16,
            seed: 0,
            max_cycles: DEFAULT_MAX_CYCLES,
            crop: None,
            out_dir: out_dir.into(),
            dump: false,
            timeout_threshold: 0.01,
            workers: None,
            band_rows: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.n_max == 0 {
            return Err(Error::ZeroCounterMax);
        }
        if self.max_cycles == 0 {
            return Err(Error::ZeroMaxCycles);
        }
        if !(0.0..=1.0).contains(&self.timeout_threshold) {
            return Err(Error::Config("timeout threshold must be within [0, 1]".into()));
        }
        if self.band_rows == 0 || self.workers == Some(0) {
            return Err(Error::Config("band rows and workers must be positive".into()));
        }
        if self.dump && self.mode.stochastic() && self.n_max > u32::from(u16::MAX) {
            return Err(Error::Config(format!(
                "counter maximum {} does not fit the 16-bit dump format",
                self.n_max
            )));
        }
        Ok(())
    }
}

/// Per-engine outcome of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineOutput {
    pub classes: Vec<PixelClass>,
    pub dump: DistributionDump,
}

impl EngineOutput {
    fn new(kind: DumpKind, region: Region, d_max: usize, n_max: u32) -> Self {
        Self {
            classes: Vec::with_capacity(region.area()),
            dump: DistributionDump {
                kind,
                region,
                d_max,
                n_max,
                classes: Vec::new(),
                counts: Vec::new(),
            },
        }
    }

    pub fn count(&self, class: impl Fn(PixelClass) -> bool) -> usize {
        self.classes.iter().filter(|&&c| class(c)).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub region: Region,
    pub reference: Option<EngineOutput>,
    pub stochastic: Option<EngineOutput>,
    pub cycles: Option<CycleStats>,
    pub comparison: Option<AccuracyReport>,
}

impl PipelineOutput {
    /// Pixels the machine could be run on.
    pub fn valid_pixels(&self, d_max: usize) -> usize {
        self.region.coords().filter(|&(x, _)| x >= d_max).count()
    }
}

fn in_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Runs the configured engines on an in-memory pair.
pub fn process_pair(left: &GrayImage, right: &GrayImage, config: &RunConfig) -> Result<PipelineOutput> {
    config.validate()?;
    if left.dims() != right.dims() {
        return Err(Error::DimensionMismatch {
            left: left.dims(),
            right: right.dims(),
        });
    }
    let fl = compute_features(left)?;
    let fr = compute_features(right)?;
    let region = config.crop.unwrap_or_else(|| Region::full(&fl));
    if !region.fits_within(fl.width(), fl.height()) {
        return Err(Error::Config(format!(
            "crop {},{},{},{} is outside the {}x{} feature maps",
            region.x,
            region.y,
            region.width,
            region.height,
            fl.width(),
            fl.height()
        )));
    }
    let d_max = config.params.d_max;
    let mut reference = config
        .mode
        .reference()
        .then(|| EngineOutput::new(DumpKind::Reference, region, d_max, REFERENCE_SCALE));
    let mut stochastic = config
        .mode
        .stochastic()
        .then(|| EngineOutput::new(DumpKind::Stochastic, region, d_max, config.n_max));
    let mut cycles: Vec<Option<u64>> = Vec::new();
    let mut accuracy = AccuracyAccumulator::default();
    let engine = EngineConfig {
        n_max: config.n_max,
        seed: config.seed,
        max_cycles: config.max_cycles,
    };

    in_pool(config.workers, || -> Result<()> {
        let mut y = region.y;
        while y < region.y + region.height {
            let rows = config.band_rows.min(region.y + region.height - y);
            let band = Region::new(region.x, y, region.width, rows);
            let volume = LikelihoodVolume::from_features(&fl, &fr, &config.params, band)?;
            let ref_band = reference.is_some().then(|| reference_infer(&volume));
            let sto_band = match stochastic {
                Some(_) => Some(run_stochastic(&volume, &engine)?),
                None => None,
            };
            if let (Some(r), Some(s)) = (&ref_band, &sto_band) {
                accuracy = accuracy.merge(&compare_accumulate(r, s)?);
            }
            if let (Some(out), Some(r)) = (reference.as_mut(), ref_band) {
                let part = DistributionDump::from_reference(&r);
                out.classes.extend_from_slice(r.classes());
                out.dump.counts.extend(part.counts);
            }
            if let (Some(out), Some(s)) = (stochastic.as_mut(), sto_band) {
                let part = DistributionDump::from_stochastic(&s)?;
                out.classes.extend_from_slice(s.classes());
                out.dump.counts.extend(part.counts);
                cycles.extend(
                    s.pixels()
                        .iter()
                        .map(|p| (p.class != PixelClass::Timeout).then_some(p.cycles)),
                );
            }
            y += rows;
        }
        Ok(())
    })??;

    for out in [reference.as_mut(), stochastic.as_mut()].into_iter().flatten() {
        out.dump.classes = out.classes.clone();
    }
    let both = reference.is_some() && stochastic.is_some();
    Ok(PipelineOutput {
        region,
        reference,
        cycles: stochastic.is_some().then(|| CycleStats::from_cycles(cycles)),
        stochastic,
        comparison: both.then(|| accuracy.report()),
    })
}

/// Statistics of the stochastic engine as `quantity,value` lines.
pub fn stats_csv(output: &PipelineOutput, config: &RunConfig) -> String {
    let mut out = String::from("quantity,value\n");
    let _ = writeln!(out, "n_max,{}", config.n_max);
    let _ = writeln!(out, "seed,{}", config.seed);
    let _ = writeln!(out, "valid_pixels,{}", output.valid_pixels(config.params.d_max));
    if let Some(c) = output.cycles {
        let _ = writeln!(out, "completed,{}", c.completed);
        let _ = writeln!(out, "timeouts,{}", c.timeouts);
        let _ = writeln!(out, "cycles_mean,{:.6}", c.mean);
        let _ = writeln!(out, "cycles_sd,{:.6}", c.sd);
    }
    for (name, engine) in [("reference", &output.reference), ("stochastic", &output.stochastic)] {
        if let Some(e) = engine {
            let _ = writeln!(out, "{name}_nomatch,{}", e.count(|c| c == PixelClass::NoMatch));
            let _ = writeln!(out, "{name}_matched,{}", e.count(|c| c.disparity().is_some()));
        }
    }
    if let Some(a) = output.comparison {
        let rms = a.rms_error.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"));
        let _ = writeln!(out, "rms,{rms}");
        let _ = writeln!(out, "f1_nomatch,{:.6}", a.f1_nomatch);
    }
    out
}

/// What a run wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub output: PipelineOutput,
    pub files: Vec<PathBuf>,
}

impl PipelineReport {
    pub fn timeouts(&self) -> usize {
        self.output.cycles.map_or(0, |c| c.timeouts)
    }
}

/// Processes the pair and writes `<engine>.pgm`, `<engine>_valid.pgm`,
/// optionally `<engine>.sdd`, and `stats.csv` under `out_dir`. Nothing is
/// written when the run fails, including when too many pixels time out.
pub fn run_pipeline(
    left: impl AsRef<Path>,
    right: impl AsRef<Path>,
    config: &RunConfig,
) -> Result<PipelineReport> {
    config.validate()?;
    let left = load_image(left)?;
    let right = load_image(right)?;
    let output = process_pair(&left, &right, config)?;
    if let Some(c) = output.cycles {
        let pixels = c.completed + c.timeouts;
        if pixels > 0 && c.timeouts as f64 / pixels as f64 > config.timeout_threshold {
            return Err(Error::TimeoutThreshold {
                timeouts: c.timeouts,
                pixels,
                threshold: config.timeout_threshold,
            });
        }
    }
    write_outputs(&output, config).map(|files| PipelineReport { output, files })
}

fn write_outputs(output: &PipelineOutput, config: &RunConfig) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(&config.out_dir)?;
    let d_max = config.params.d_max;
    let mut files = Vec::new();
    for (name, engine) in [("reference", &output.reference), ("stochastic", &output.stochastic)] {
        let Some(e) = engine else { continue };
        let img = disparity_image(output.region, &e.classes, d_max);
        let path = config.out_dir.join(format!("{name}.pgm"));
        save_image(&img.image, &path)?;
        files.push(path);
        let path = config.out_dir.join(format!("{name}_valid.pgm"));
        save_image(&img.mask_image(), &path)?;
        files.push(path);
        if config.dump {
            let path = config.out_dir.join(format!("{name}.sdd"));
            e.dump.write(&path)?;
            files.push(path);
        }
    }
    let path = config.out_dir.join("stats.csv");
    fs::write(&path, stats_csv(output, config))?;
    files.push(path);
    Ok(files)
}
