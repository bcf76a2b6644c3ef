use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rust_decimal::Decimal;

use stochastic_disparity::dump::{compare_dumps, DistributionDump};
use stochastic_disparity::eval::{
    hardware_estimate, sweep_counter_sizes, volume_from_images, HardwareInputs, SweepConfig,
};
use stochastic_disparity::model::{ModelParams, Region};
use stochastic_disparity::pipeline::{run_pipeline, Mode, RunConfig};
use stochastic_disparity::pnm::{load_image, save_image};
use stochastic_disparity::stochastic::DEFAULT_MAX_CYCLES;
use stochastic_disparity::synth::{natural_scene, planted_shift_pair, SceneConfig};
use stochastic_disparity::{Error, Result};

/// Stochastic Bayesian machine for binocular disparity.
#[derive(Parser)]
#[command(name = "stodisp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute disparity images from a rectified pair.
    Disparity(DisparityArgs),
    /// Sweep counter sizes and print accuracy and cycle statistics as CSV.
    Sweep(SweepArgs),
    /// Speed and power of a hardware machine.
    Estimate(EstimateArgs),
    /// Compare two distribution dumps; the first one is the reference.
    Compare {
        reference: PathBuf,
        other: PathBuf,
    },
    /// Write a synthetic stereo pair.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 80)]
    d_max: usize,
    #[arg(long, default_value_t = 0.02)]
    p0: f64,
    #[arg(long, default_value_t = 10.0)]
    sigma_mean: f64,
    #[arg(long, default_value_t = 10.0)]
    sigma_grad_h: f64,
    #[arg(long, default_value_t = 10.0)]
    sigma_grad_v: f64,
    #[arg(long, default_value_t = 0.01)]
    p_nm0: f64,
    #[arg(long, default_value_t = 8.0)]
    sigma_nm: f64,
}

impl ModelArgs {
    fn params(&self) -> ModelParams {
        ModelParams {
            d_max: self.d_max,
            p0: self.p0,
            sigma_mean: self.sigma_mean,
            sigma_grad_h: self.sigma_grad_h,
            sigma_grad_v: self.sigma_grad_v,
            p_nm0: self.p_nm0,
            sigma_nm: self.sigma_nm,
        }
    }
}

fn parse_crop(s: &str) -> std::result::Result<Region, String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| e.to_string())?;
    match v[..] {
        [x, y, w, h] => Ok(Region::new(x, y, w, h)),
        _ => Err("expected x,y,width,height".into()),
    }
}

fn parse_decimal(s: &str) -> std::result::Result<Decimal, String> {
    Decimal::from_str(s)
        .or_else(|_| Decimal::from_scientific(s))
        .map_err(|e| e.to_string())
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Reference,
    Stochastic,
    Both,
}

#[derive(Args)]
struct DisparityArgs {
    #[arg(long)]
    left: PathBuf,
    #[arg(long)]
    right: PathBuf,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    mode: ModeArg,
    #[arg(long, default_value_t = 16)]
    n_max: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_CYCLES)]
    max_cycles: u64,
    /// Region of the feature maps as x,y,width,height.
    #[arg(long, value_parser = parse_crop)]
    crop: Option<Region>,
    /// Also write per-pixel distribution dumps.
    #[arg(long)]
    dump: bool,
    /// Fail when more than this fraction of pixels time out.
    #[arg(long, default_value_t = 0.01)]
    timeout_threshold: f64,
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    left: PathBuf,
    #[arg(long)]
    right: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,4,16,64,256")]
    n_max: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[arg(long, value_parser = parse_crop)]
    crop: Option<Region>,
    #[arg(long, default_value_t = DEFAULT_MAX_CYCLES)]
    max_cycles: u64,
    /// Write the table here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long, default_value_t = 82)]
    rows: u64,
    #[arg(long, default_value_t = 3)]
    terms: u64,
    #[arg(long, default_value = "27.97", value_parser = parse_decimal)]
    cycles_per_pixel: Decimal,
    #[arg(long, value_parser = parse_decimal)]
    cycles_sd: Option<Decimal>,
    #[arg(long, default_value_t = 640)]
    width: u64,
    #[arg(long, default_value_t = 480)]
    height: u64,
    #[arg(long, default_value_t = 80)]
    d_max: u64,
    #[arg(long, default_value = "500e6", value_parser = parse_decimal)]
    clock_hz: Decimal,
    #[arg(long, default_value = "50e-6", value_parser = parse_decimal)]
    generator_power_w: Decimal,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Planted,
    Scene,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "scene")]
    kind: SynthKind,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 176)]
    width: usize,
    #[arg(long, default_value_t = 112)]
    height: usize,
    /// Disparity of the planted pair.
    #[arg(long, default_value_t = 12)]
    shift: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn disparity(args: DisparityArgs) -> Result<()> {
    let config = RunConfig {
        params: args.model.params(),
        mode: match args.mode {
            ModeArg::Reference => Mode::Reference,
            ModeArg::Stochastic => Mode::Stochastic,
            ModeArg::Both => Mode::Both,
        },
        n_max: args.n_max,
        seed: args.seed,
        max_cycles: args.max_cycles,
        crop: args.crop,
        out_dir: args.out_dir,
        dump: args.dump,
        timeout_threshold: args.timeout_threshold,
        workers: args.workers,
        ..RunConfig::new("")
    };
    let report = run_pipeline(&args.left, &args.right, &config)?;
    let out = &report.output;
    eprintln!(
        "{} valid pixels of {}",
        out.valid_pixels(config.params.d_max),
        out.region.area()
    );
    if let Some(c) = out.cycles {
        eprintln!("cycles/pixel {:.3} +- {:.3}", c.mean, c.sd);
        if c.timeouts > 0 {
            eprintln!("warning: {} pixels timed out", c.timeouts);
        }
    }
    if let Some(a) = out.comparison {
        let rms = a.rms_error.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        eprintln!("rms {rms}, no-match f1 {:.4}", a.f1_nomatch);
    }
    for f in &report.files {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let left = load_image(&args.left)?;
    let right = load_image(&args.right)?;
    let params = args.model.params();
    let config = SweepConfig {
        n_max: args.n_max,
        seeds: args.seeds,
        max_cycles: args.max_cycles,
    };
    let run = || -> Result<String> {
        let volume = volume_from_images(&left, &right, &params, args.crop)?;
        eprintln!("{} valid pixels", volume.pixels().len());
        Ok(sweep_counter_sizes(&volume, &config)?.to_csv())
    };
    let csv = match args.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(run)?,
        None => run()?,
    };
    match args.output {
        Some(path) => std::fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn estimate(args: EstimateArgs) -> Result<()> {
    let e = hardware_estimate(&HardwareInputs {
        rows: args.rows,
        terms: args.terms,
        cycles_per_pixel: args.cycles_per_pixel,
        cycles_per_pixel_sd: args.cycles_sd,
        image_width: args.width,
        image_height: args.height,
        d_max: args.d_max,
        clock_hz: args.clock_hz,
        generator_power_w: args.generator_power_w,
    })?;
    print!("{}", e.to_csv());
    Ok(())
}

fn compare(reference: PathBuf, other: PathBuf) -> Result<()> {
    let a = DistributionDump::read(reference)?;
    let b = DistributionDump::read(other)?;
    let r = compare_dumps(&a, &b)?;
    let rms = r.rms_error.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"));
    println!("quantity,value");
    println!("rms,{rms}");
    println!("f1_nomatch,{:.6}", r.f1_nomatch);
    println!("matched_both,{}", r.matched_both);
    println!("nomatch_reference,{}", r.nomatch_reference);
    println!("nomatch_other,{}", r.nomatch_other);
    println!("invalid,{}", r.invalid);
    println!("timeouts,{}", r.timeouts);
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let (left, right) = match args.kind {
        SynthKind::Planted => planted_shift_pair(args.width, args.height, args.shift, args.seed)?,
        SynthKind::Scene => {
            let config = SceneConfig {
                width: args.width,
                height: args.height,
                ..SceneConfig::default()
            };
            let s = natural_scene(&config, args.seed)?;
            (s.left, s.right)
        }
    };
    std::fs::create_dir_all(&args.out_dir)?;
    save_image(&left, args.out_dir.join("left.pgm"))?;
    save_image(&right, args.out_dir.join("right.pgm"))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Disparity(a) => disparity(a),
        Command::Sweep(a) => sweep(a),
        Command::Estimate(a) => estimate(a),
        Command::Compare { reference, other } => compare(reference, other),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
