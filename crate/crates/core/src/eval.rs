//! Accuracy metrics between the stochastic and reference engines, counter-size
//! sweeps, and the closed-form speed/power model of a hardware machine.

use std::fmt::Write as _;

use rust_decimal::Decimal;

use crate::engine::{run_stochastic, CycleStats, EngineConfig, StochasticResult};
use crate::error::{Error, Result};
use crate::model::{compute_features, GrayImage, LikelihoodVolume, ModelParams, Region};
use crate::reference::{reference_infer, PixelClass, ReferenceResult};
use crate::stochastic::DEFAULT_MAX_CYCLES;

/// Mergeable partial sums behind [`AccuracyReport`].
///
/// RMS runs over the disparity entries of pixels matched by both engines; F1
/// treats the reference no-match set as ground truth over pixels both engines
/// classified (timeouts and border pixels are counted, not scored).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AccuracyAccumulator {
    sq_sum: f64,
    entries: u64,
    true_pos: u64,
    false_pos: u64,
    false_neg: u64,
    matched_both: u64,
    nomatch_reference: u64,
    nomatch_other: u64,
    invalid: u64,
    timeouts: u64,
}

impl AccuracyAccumulator {
    pub fn add_pixel(
        &mut self,
        reference: PixelClass,
        reference_dist: Option<&[f64]>,
        other: PixelClass,
        other_dist: Option<&[f64]>,
    ) {
        match (reference, other) {
            (PixelClass::Invalid, _) | (_, PixelClass::Invalid) => {
                self.invalid += 1;
                return;
            }
            (PixelClass::Timeout, _) | (_, PixelClass::Timeout) => {
                self.timeouts += 1;
                return;
            }
            _ => {}
        }
        let (r, o) = (reference.is_nomatch(), other.is_nomatch());
        self.nomatch_reference += u64::from(r);
        self.nomatch_other += u64::from(o);
        match (r, o) {
            (true, true) => self.true_pos += 1,
            (false, true) => self.false_pos += 1,
            (true, false) => self.false_neg += 1,
            (false, false) => {
                self.matched_both += 1;
                if let (Some(a), Some(b)) = (reference_dist, other_dist) {
                    self.add_distribution(a, b);
                }
            }
        }
    }

    fn add_distribution(&mut self, a: &[f64], b: &[f64]) {
        for (x, y) in a.iter().zip(b) {
            self.sq_sum += (x - y) * (x - y);
        }
        self.entries += a.len().min(b.len()) as u64;
    }

    pub fn merge(mut self, other: &Self) -> Self {
        self.sq_sum += other.sq_sum;
        self.entries += other.entries;
        self.true_pos += other.true_pos;
        self.false_pos += other.false_pos;
        self.false_neg += other.false_neg;
        self.matched_both += other.matched_both;
        self.nomatch_reference += other.nomatch_reference;
        self.nomatch_other += other.nomatch_other;
        self.invalid += other.invalid;
        self.timeouts += other.timeouts;
        self
    }

    pub fn rms(&self) -> Option<f64> {
        (self.entries > 0).then(|| (self.sq_sum / self.entries as f64).sqrt())
    }

    pub fn f1(&self) -> f64 {
        f1_from_counts(self.true_pos, self.false_pos, self.false_neg)
    }

    pub fn report(&self) -> AccuracyReport {
        AccuracyReport {
            rms_error: self.rms(),
            f1_nomatch: self.f1(),
            matched_both: self.matched_both as usize,
            nomatch_reference: self.nomatch_reference as usize,
            nomatch_other: self.nomatch_other as usize,
            invalid: self.invalid as usize,
            timeouts: self.timeouts as usize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyReport {
    /// `None` when no pixel is matched by both engines.
    pub rms_error: Option<f64>,
    pub f1_nomatch: f64,
    pub matched_both: usize,
    pub nomatch_reference: usize,
    pub nomatch_other: usize,
    pub invalid: usize,
    pub timeouts: usize,
}

fn f1_from_counts(tp: u64, fp: u64, fn_: u64) -> f64 {
    if tp + fp + fn_ == 0 {
        return 1.0;
    }
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Root mean squared componentwise difference over all (pixel, entry) pairs.
pub fn rms_distribution_error<A: AsRef<[f64]>, B: AsRef<[f64]>>(
    stochastic: &[A],
    reference: &[B],
) -> Result<f64> {
    if stochastic.len() != reference.len() {
        return Err(Error::LengthMismatch {
            left: stochastic.len(),
            right: reference.len(),
        });
    }
    let mut acc = AccuracyAccumulator::default();
    for (a, b) in stochastic.iter().zip(reference) {
        let (a, b) = (a.as_ref(), b.as_ref());
        if a.len() != b.len() {
            return Err(Error::LengthMismatch {
                left: a.len(),
                right: b.len(),
            });
        }
        acc.add_distribution(a, b);
    }
    acc.rms().ok_or(Error::EmptyInput)
}

/// F1 score of the `other` no-match flags against the reference flags.
/// Both sets empty gives 1.
pub fn f1_nomatch(reference: &[bool], other: &[bool]) -> Result<f64> {
    if reference.len() != other.len() {
        return Err(Error::LengthMismatch {
            left: reference.len(),
            right: other.len(),
        });
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&r, &o) in reference.iter().zip(other) {
        match (r, o) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            _ => {}
        }
    }
    Ok(f1_from_counts(tp, fp, fn_))
}

/// Accumulates the comparison of two runs over the same volume.
pub fn compare_accumulate(
    reference: &ReferenceResult,
    stochastic: &StochasticResult,
) -> Result<AccuracyAccumulator> {
    if reference.region() != stochastic.region() || reference.d_max() != stochastic.d_max() {
        return Err(Error::Config(
            "results cover different regions or disparity ranges".into(),
        ));
    }
    let mut acc = AccuracyAccumulator::default();
    let n_border = reference.classes().len() - reference.pixels().len();
    acc.invalid += n_border as u64;
    let n_max = stochastic.n_max();
    for (r, s) in reference.pixels().iter().zip(stochastic.pixels()) {
        let readout = s.disparity_readout(n_max);
        acc.add_pixel(
            r.class,
            Some(r.disparity_scores()),
            s.class,
            readout.as_deref(),
        );
    }
    Ok(acc)
}

pub fn compare_results(
    reference: &ReferenceResult,
    stochastic: &StochasticResult,
) -> Result<AccuracyReport> {
    Ok(compare_accumulate(reference, stochastic)?.report())
}

/// One line of the counter-size sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub n_max: u32,
    pub accuracy: AccuracyReport,
    pub cycles: CycleStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_HEADER: &str = "n_max,rms,f1,cycles_mean,cycles_sd,timeouts";

impl Sweep {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_HEADER);
        out.push('\n');
        for r in &self.rows {
            let rms = r
                .accuracy
                .rms_error
                .map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"));
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.4},{:.4},{}",
                r.n_max, rms, r.accuracy.f1_nomatch, r.cycles.mean, r.cycles.sd, r.cycles.timeouts
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub n_max: Vec<u32>,
    pub seeds: Vec<u64>,
    pub max_cycles: u64,
}

impl SweepConfig {
    pub fn new(n_max: Vec<u32>, seeds: Vec<u64>) -> Self {
        Self {
            n_max,
            seeds,
            max_cycles: DEFAULT_MAX_CYCLES,
        }
    }
}

/// For each counter maximum, runs every seed over the volume and pools the
/// metrics and cycle counts across seeds.
pub fn sweep_counter_sizes(volume: &LikelihoodVolume, config: &SweepConfig) -> Result<Sweep> {
    if config.n_max.is_empty() {
        return Err(Error::Config("the n_max list is empty".into()));
    }
    if config.seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let reference = reference_infer(volume);
    let mut rows = Vec::with_capacity(config.n_max.len());
    for &n_max in &config.n_max {
        let mut acc = AccuracyAccumulator::default();
        let mut all = Vec::new();
        for &seed in &config.seeds {
            let engine = EngineConfig {
                n_max,
                seed,
                max_cycles: config.max_cycles,
            };
            let result = run_stochastic(volume, &engine)?;
            acc = acc.merge(&compare_accumulate(&reference, &result)?);
            all.extend(result.pixels().iter().cloned());
        }
        rows.push(SweepRow {
            n_max,
            accuracy: acc.report(),
            cycles: CycleStats::from_pixels(&all),
        });
    }
    Ok(Sweep { rows })
}

/// Feature extraction and likelihoods for an image pair, restricted to
/// `region` (feature-map coordinates) when given.
pub fn volume_from_images(
    left: &GrayImage,
    right: &GrayImage,
    params: &ModelParams,
    region: Option<Region>,
) -> Result<LikelihoodVolume> {
    if left.dims() != right.dims() {
        return Err(Error::DimensionMismatch {
            left: left.dims(),
            right: right.dims(),
        });
    }
    let fl = compute_features(left)?;
    let fr = compute_features(right)?;
    let region = region.unwrap_or_else(|| Region::full(&fl));
    LikelihoodVolume::from_features(&fl, &fr, params, region)
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    pearson(&ranks(x), &ranks(y))
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Least-squares line through the points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl LinearFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - (slope * a + intercept)).powi(2))
        .sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    LinearFit {
        slope,
        intercept,
        r_squared: 1.0 - ss_res / ss_tot,
    }
}

/// Inputs of the hardware speed/power model. Decimal fields keep the
/// arithmetic exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardwareInputs {
    /// Rows `M` of the machine.
    pub rows: u64,
    /// Data terms `N`.
    pub terms: u64,
    pub cycles_per_pixel: Decimal,
    pub cycles_per_pixel_sd: Option<Decimal>,
    pub image_width: u64,
    pub image_height: u64,
    pub d_max: u64,
    pub clock_hz: Decimal,
    pub generator_power_w: Decimal,
}

impl Default for HardwareInputs {
    /// 82 x 3 machine, 640x480 frames, 27.97 cycles/pixel, 500 MHz generators
    /// drawing 50 uW each.
    fn default() -> Self {
        Self {
            rows: 82,
            terms: 3,
            cycles_per_pixel: Decimal::new(2797, 2),
            cycles_per_pixel_sd: Some(Decimal::new(458, 2)),
            image_width: 640,
            image_height: 480,
            d_max: 80,
            clock_hz: Decimal::new(500_000_000, 0),
            generator_power_w: Decimal::new(50, 6),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardwareEstimate {
    pub n_generators: u64,
    pub power_w: Decimal,
    pub generator_power_w: Decimal,
    pub valid_pixels: u64,
    pub cycles_per_pixel: Decimal,
    pub cycles_per_pixel_sd: Option<Decimal>,
    pub cycles_per_image: Decimal,
    pub clock_hz: Decimal,
    pub frames_per_second: Decimal,
}

/// One generator per product module; one pixel at a time on a single machine;
/// valid pixels are `(W - 4 - D_max) x (H - 4)`.
pub fn hardware_estimate(inputs: &HardwareInputs) -> Result<HardwareEstimate> {
    let positive = |v: Decimal| v > Decimal::ZERO;
    if inputs.rows == 0 || inputs.terms == 0 || inputs.image_width == 0 || inputs.image_height == 0
    {
        return Err(Error::Config("machine and image dimensions must be positive".into()));
    }
    if !(positive(inputs.cycles_per_pixel)
        && positive(inputs.clock_hz)
        && positive(inputs.generator_power_w))
    {
        return Err(Error::Config(
            "cycles per pixel, clock and generator power must be positive".into(),
        ));
    }
    let valid_w = inputs.image_width.saturating_sub(4 + inputs.d_max);
    let valid_h = inputs.image_height.saturating_sub(4);
    let valid_pixels = valid_w * valid_h;
    if valid_pixels == 0 {
        return Err(Error::Config(format!(
            "a {}x{} image has no valid pixels at d_max = {}",
            inputs.image_width, inputs.image_height, inputs.d_max
        )));
    }
    let n_generators = inputs.rows * inputs.terms;
    let power_w = Decimal::from(n_generators) * inputs.generator_power_w;
    let cycles_per_image = Decimal::from(valid_pixels) * inputs.cycles_per_pixel;
    let frames_per_second = inputs.clock_hz / cycles_per_image;
    Ok(HardwareEstimate {
        n_generators,
        power_w: power_w.normalize(),
        generator_power_w: inputs.generator_power_w,
        valid_pixels,
        cycles_per_pixel: inputs.cycles_per_pixel,
        cycles_per_pixel_sd: inputs.cycles_per_pixel_sd,
        cycles_per_image: cycles_per_image.normalize(),
        clock_hz: inputs.clock_hz,
        frames_per_second,
    })
}

impl HardwareEstimate {
    /// `key,value` lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("quantity,value\n");
        let _ = writeln!(out, "generators,{}", self.n_generators);
        let _ = writeln!(out, "generator_power_w,{}", self.generator_power_w.normalize());
        let _ = writeln!(out, "power_w,{}", self.power_w);
        let _ = writeln!(out, "power_mw,{}", (self.power_w * Decimal::ONE_THOUSAND).normalize());
        let _ = writeln!(out, "valid_pixels,{}", self.valid_pixels);
        let _ = writeln!(out, "cycles_per_pixel,{}", self.cycles_per_pixel);
        if let Some(sd) = self.cycles_per_pixel_sd {
            let _ = writeln!(out, "cycles_per_pixel_sd,{sd}");
        }
        let _ = writeln!(out, "cycles_per_image,{}", self.cycles_per_image);
        let _ = writeln!(out, "clock_hz,{}", self.clock_hz.normalize());
        let _ = writeln!(out, "frames_per_second,{}", self.frames_per_second.round_dp(4));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastic::{run_until_overflow, CounterBank, StochasticBus};
    use std::str::FromStr;

    #[test]
    fn rms_examples() {
        let a = vec![vec![0.2, 1.0, 0.5]];
        assert_eq!(rms_distribution_error(&a, &a).unwrap(), 0.0);
        let r = rms_distribution_error(&[vec![1.0, 0.0]], &[vec![1.0, 1.0]]).unwrap();
        assert!((r - 0.5f64.sqrt()).abs() < 1e-15);
        let empty: Vec<Vec<f64>> = vec![];
        assert!(matches!(rms_distribution_error(&empty, &empty), Err(Error::EmptyInput)));
        assert!(rms_distribution_error(&[vec![1.0]], &[vec![1.0, 0.0]]).is_err());
    }

    #[test]
    fn rms_shrinks_with_counter_size() {
        let p = [1.0, 0.7, 0.4, 0.2];
        let truth = vec![p.to_vec()];
        let mean_rms = |n_max: u32| {
            (0..100)
                .map(|seed| {
                    let mut bus = StochasticBus::from_p_values(&p, None, seed).unwrap();
                    let mut bank = CounterBank::new(4, n_max).unwrap();
                    let r = run_until_overflow(&mut bus, &mut bank, DEFAULT_MAX_CYCLES).unwrap();
                    rms_distribution_error(&[r.readout().unwrap()], &truth).unwrap()
                })
                .sum::<f64>()
                / 100.0
        };
        assert!(mean_rms(1) > mean_rms(256));
    }

    #[test]
    fn f1_examples() {
        let flags = [true, false, true, false];
        assert_eq!(f1_nomatch(&flags, &flags).unwrap(), 1.0);
        assert_eq!(f1_nomatch(&[true, true, false, false], &[false, false, true, true]).unwrap(), 0.0);
        assert_eq!(f1_nomatch(&[false; 3], &[false; 3]).unwrap(), 1.0);
        assert_eq!(f1_nomatch(&[false; 3], &[true, false, false]).unwrap(), 0.0);
        // 5 reference positives, 4 found, 1 false alarm: P = R = 0.8
        let reference = [true, true, true, true, true, false, false];
        let other = [true, true, true, true, false, true, false];
        assert!((f1_nomatch(&reference, &other).unwrap() - 0.8).abs() < 1e-12);
        assert!(f1_nomatch(&[true], &[]).is_err());
    }

    #[test]
    fn accumulator_merge_is_associative() {
        let mut a = AccuracyAccumulator::default();
        a.add_pixel(PixelClass::Matched(1), Some(&[0.5, 1.0]), PixelClass::Matched(1), Some(&[0.0, 1.0]));
        a.add_pixel(PixelClass::NoMatch, None, PixelClass::NoMatch, None);
        let mut b = AccuracyAccumulator::default();
        b.add_pixel(PixelClass::NoMatch, None, PixelClass::Matched(0), Some(&[1.0, 0.0]));
        b.add_pixel(PixelClass::Invalid, None, PixelClass::Invalid, None);
        let mut c = AccuracyAccumulator::default();
        c.add_pixel(PixelClass::Matched(0), Some(&[1.0, 0.0]), PixelClass::Timeout, None);
        c.add_pixel(PixelClass::Matched(0), Some(&[1.0, 0.0]), PixelClass::NoMatch, None);
        let left = a.merge(&b).merge(&c);
        let right = a.merge(&b.merge(&c));
        assert_eq!(left, right);
        let r = left.report();
        assert_eq!(r.matched_both, 1);
        assert_eq!((r.invalid, r.timeouts), (1, 1));
        assert!((r.rms_error.unwrap() - (0.25f64 / 2.0).sqrt()).abs() < 1e-12);
        // tp 1, fp 1, fn 1
        assert!((r.f1_nomatch - 0.5).abs() < 1e-12);
    }

    #[test]
    fn hardware_figures_are_exact() {
        let e = hardware_estimate(&HardwareInputs::default()).unwrap();
        assert_eq!(e.n_generators, 246);
        assert_eq!(e.power_w, Decimal::from_str("0.0123").unwrap());
        assert_eq!(e.valid_pixels, 264_656);
        assert_eq!(e.cycles_per_image, Decimal::from_str("7402428.32").unwrap());
        let fps = e.frames_per_second.round_dp(2);
        assert_eq!(fps, Decimal::from_str("67.55").unwrap());
        assert!((e.frames_per_second - Decimal::from_str("67.5").unwrap()).abs() <= Decimal::new(1, 1));
        let csv = e.to_csv();
        assert!(csv.contains("power_mw,12.3\n"));
        assert!(csv.contains("cycles_per_image,7402428.32\n"));
    }

    #[test]
    fn hardware_rejects_degenerate_inputs() {
        let base = HardwareInputs::default();
        for bad in [
            HardwareInputs { image_width: 0, ..base },
            HardwareInputs { image_width: 84, ..base },
            HardwareInputs { rows: 0, ..base },
            HardwareInputs { clock_hz: Decimal::ZERO, ..base },
        ] {
            assert!(hardware_estimate(&bad).is_err());
        }
    }

    #[test]
    fn rank_statistics() {
        let x = [1.0, 4.0, 16.0, 64.0, 256.0];
        assert!((spearman(&x, &[5.0, 4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert!((spearman(&x, &[1.0, 3.0, 2.0, 4.0, 5.0]) - 0.9).abs() < 1e-12);
        let fit = linear_fit(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]);
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 1.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sweep_csv_layout() {
        let sweep = Sweep {
            rows: vec![SweepRow {
                n_max: 4,
                accuracy: AccuracyAccumulator::default().report(),
                cycles: CycleStats {
                    mean: 7.5,
                    sd: 1.25,
                    completed: 10,
                    timeouts: 0,
                },
            }],
        };
        assert_eq!(
            sweep.to_csv(),
            "n_max,rms,f1,cycles_mean,cycles_sd,timeouts\n4,nan,1.000000,7.5000,1.2500,0\n"
        );
    }
}
