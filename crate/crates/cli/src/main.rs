use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use dbpn::ibp::{ibp_run, IbpConfig};
use dbpn::imaging::{
    degrade, load_image, psnr, rgb_to_y, save_image, ssim, ColorSpace, EvalProtocol, ImagePlane,
};
use dbpn::net::{
    load_checkpoint, network_gradcheck, preset, published_deviation, published_params_k,
    DbpnNetwork, PRESETS,
};
use dbpn::projection::{unit_gradcheck, Direction};
use dbpn::tensor::gradcheck::{op_suite, GradCheck, GradReport};
use dbpn::training::{list_images, Dataset, TrainConfig, Trainer};

/// Exit code for a check that ran but did not pass.
const CHECK_FAILED: u8 = 3;
const DEFAULT_SEED: u64 = 0;
const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(
    name = "dbpn",
    version,
    about = "Deep back-projection super-resolution toolkit"
)]
struct Cli {
    /// Seed for every random choice (default 0).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; 1 is the serial reference, 0 lets the runtime decide.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Degrade a folder of HR images into aligned OUT/LR and OUT/HR pairs.
    Prepare {
        #[arg(long)]
        hr: PathBuf,
        #[arg(long)]
        scale: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network on patches from a dataset folder.
    Train(TrainArgs),
    /// Super-resolve one image with a trained model, or with classical
    /// back-projection when no model is given.
    Upscale {
        /// Checkpoint written by `train`.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Scale for the back-projection fallback (must match the model if both are given).
        #[arg(long)]
        scale: Option<usize>,
        /// With a luma model on colour input, upscale chroma bicubically and
        /// write RGB instead of the luma-only result.
        #[arg(long)]
        keep_color: bool,
    },
    /// Classical iterative back-projection.
    Ibp {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scale: usize,
        /// Blur standard deviation (default scale / 4; 0 disables the blur).
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, default_value_t = 10)]
        iterations: usize,
        #[arg(long, default_value_t = 0.0)]
        tolerance: f64,
    },
    /// PSNR / SSIM of super-resolved images against ground truth.
    Evaluate {
        /// Image or folder of super-resolved results.
        #[arg(long)]
        sr: PathBuf,
        /// Image or folder of ground-truth images with matching names.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        scale: usize,
        /// Score all RGB channels instead of BT.601 luma.
        #[arg(long)]
        rgb: bool,
        /// Border crop in pixels (default: the scale).
        #[arg(long)]
        crop: Option<usize>,
        /// Also write per-image results to this CSV file.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Layer census and parameter count of a preset.
    Params {
        #[arg(long)]
        preset: String,
        #[arg(long)]
        scale: usize,
        /// Fail when the count is more than 1% off the published figure.
        #[arg(long)]
        expect_published: bool,
    },
    /// Finite-difference gradient checks at double precision.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = Target::Ops)]
        target: Target,
        /// Scale the analytic gradient before comparing (harness self-test).
        #[arg(long, hide = true)]
        corrupt: Option<f64>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Target {
    Ops,
    Unit,
    Network,
}

#[derive(clap::Args, Debug)]
struct TrainArgs {
    /// key=value file; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// HR image folder, or a folder prepared by `prepare`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    scale: Option<usize>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    /// LR patch side.
    #[arg(long)]
    patch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    checkpoint_interval: Option<u64>,
    /// Continue from a checkpoint; its network and training settings are the base.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Write the training log as CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Folder scored for validation PSNR at every log step.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Any other setting as key=value (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

type CliResult<T = ()> = Result<T, Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> CliResult<ExitCode> {
    let seed = cli.seed;
    match cli.command {
        Command::Prepare { hr, scale, out } => prepare(&hr, scale, &out),
        Command::Train(args) => train(args, seed),
        Command::Upscale {
            model,
            input,
            out,
            scale,
            keep_color,
        } => upscale(model.as_deref(), &input, &out, scale, keep_color),
        Command::Ibp {
            input,
            out,
            scale,
            sigma,
            iterations,
            tolerance,
        } => {
            let cfg = IbpConfig {
                sigma: sigma.unwrap_or(scale as f64 / 4.0),
                iterations,
                tolerance,
                ..IbpConfig::new(scale)
            };
            let lr = load_image(&input)?;
            let (sr, trace) = ibp_run(&lr, &cfg)?;
            for (i, n) in trace.iter().enumerate() {
                println!("iteration {:>3}  residual {n:.6e}", i + 1);
            }
            save_image(&sr, &out)?;
            println!("wrote {} ({}x{})", out.display(), sr.width(), sr.height());
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate {
            sr,
            gt,
            scale,
            rgb,
            crop,
            csv,
        } => {
            let proto = EvalProtocol {
                crop: crop.unwrap_or(scale),
                y_only: !rgb,
                ..EvalProtocol::for_scale(scale)
            };
            evaluate(&sr, &gt, &proto, csv.as_deref())
        }
        Command::Params {
            preset: name,
            scale,
            expect_published,
        } => params(&name, scale, expect_published),
        Command::Gradcheck { target, corrupt } => gradcheck(
            target,
            seed.unwrap_or(DEFAULT_SEED),
            &GradCheck {
                corrupt_analytic: corrupt,
                ..GradCheck::default()
            },
        ),
    }
}

fn prepare(hr_dir: &Path, scale: usize, out: &Path) -> CliResult<ExitCode> {
    if scale == 0 {
        return Err("scale must be positive".into());
    }
    let (lr_out, hr_out) = (out.join("LR"), out.join("HR"));
    let mut written = 0;
    for path in list_images(hr_dir)? {
        let name = path.file_name().expect("listed files have names");
        let pair = load_image(&path).and_then(|img| {
            let hr = img.crop_to_multiple(scale)?;
            let lr = degrade(&hr, scale)?;
            Ok((lr, hr))
        });
        let (lr, hr) = match pair {
            Ok(p) => p,
            Err(e) => {
                eprintln!("warning: skipping {}: {e}", path.display());
                continue;
            }
        };
        std::fs::create_dir_all(&lr_out)?;
        std::fs::create_dir_all(&hr_out)?;
        save_image(&hr, hr_out.join(name))?;
        save_image(&lr, lr_out.join(name))?;
        println!(
            "{}: HR {}x{} -> LR {}x{}",
            name.to_string_lossy(),
            hr.width(),
            hr.height(),
            lr.width(),
            lr.height()
        );
        written += 1;
    }
    if written == 0 {
        return Err(format!("no usable images in {}", hr_dir.display()).into());
    }
    println!("wrote {written} pair(s) to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn pair(key: &str, value: impl ToString) -> (String, String) {
    (key.to_string(), value.to_string())
}

fn train(args: TrainArgs, seed: Option<u64>) -> CliResult<ExitCode> {
    let mut pairs = Vec::new();
    let checkpoint = match &args.resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            pairs.extend(TrainConfig::parse_pairs(&ck.network.config().to_kv())?);
            pairs.extend(TrainConfig::parse_pairs(&ck.metadata)?);
            Some(ck)
        }
        None => None,
    };
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        pairs.extend(TrainConfig::parse_pairs(&text)?);
    }
    if let Some(v) = &args.preset {
        pairs.push(pair("preset", v));
    }
    if let Some(v) = args.scale {
        pairs.push(pair("scale", v));
    }
    if let Some(v) = &args.dataset {
        pairs.push(pair("dataset", v.display()));
    }
    if let Some(v) = args.iterations {
        pairs.push(pair("iterations", v));
    }
    if let Some(v) = args.batch {
        pairs.push(pair("batch", v));
    }
    if let Some(v) = args.patch {
        pairs.push(pair("patch", v));
    }
    if let Some(v) = args.lr {
        pairs.push(pair("lr", v));
    }
    if let Some(v) = &args.checkpoint {
        pairs.push(pair("checkpoint", v.display()));
    }
    if let Some(v) = args.checkpoint_interval {
        pairs.push(pair("checkpoint_interval", v));
    }
    if let Some(v) = seed {
        pairs.push(pair("seed", v));
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
        pairs.push(pair(k.trim(), v.trim()));
    }
    let config = TrainConfig::from_pairs(&pairs)?;
    let dataset_dir = config
        .dataset
        .clone()
        .ok_or("no dataset given (use --dataset or dataset= in the config file)")?;
    let color = config.network.color;
    let ds = Dataset::from_dir(&dataset_dir, config.scale(), color)?;
    let val = args
        .val
        .as_deref()
        .map(|d| Dataset::from_dir(d, config.scale(), color))
        .transpose()?;
    let mut trainer = match checkpoint {
        Some(ck) => Trainer::resume(config, ck)?,
        None => Trainer::new(config)?,
    };
    let net = trainer.network();
    println!(
        "training {} x{} ({} parameters) on {} image(s) from iteration {}",
        net.config().name,
        net.config().scale,
        net.count_params(),
        ds.len(),
        trainer.iteration()
    );
    let started = Instant::now();
    trainer.run(&ds, val.as_ref(), |r| {
        let val = r
            .val_psnr
            .map(|p| format!("  val {p:.3} dB"))
            .unwrap_or_default();
        println!(
            "iter {:>7}  lr {:.2e}  loss {:.6}{val}  ({:.1}s)",
            r.iteration,
            r.lr,
            r.loss,
            started.elapsed().as_secs_f64()
        );
    })?;
    if let Some(path) = &args.log {
        trainer.log().write_csv(path)?;
    }
    if let Some(path) = &trainer.config().checkpoint {
        println!("checkpoint: {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn upscale(
    model: Option<&Path>,
    input: &Path,
    out: &Path,
    scale: Option<usize>,
    keep_color: bool,
) -> CliResult<ExitCode> {
    let img = load_image(input)?;
    let started = Instant::now();
    let sr = match model {
        Some(path) => {
            let net: DbpnNetwork<f32> = load_checkpoint(path)?.network;
            let cfg = net.config();
            if let Some(s) = scale.filter(|&s| s != cfg.scale) {
                return Err(format!("model is x{} but --scale {s} was given", cfg.scale).into());
            }
            match (cfg.color, img.color()) {
                (ColorSpace::Y, ColorSpace::Rgb) if !keep_color => {
                    println!("luma model on colour input: writing the upscaled Y channel only");
                    net.upscale_image(&rgb_to_y(&img)?)?
                }
                (ColorSpace::Rgb, ColorSpace::Y) => {
                    return Err(format!(
                        "model expects RGB input but {} is grayscale",
                        input.display()
                    )
                    .into())
                }
                _ => net.upscale_image(&img)?,
            }
        }
        None => {
            let s = scale.ok_or("give --model, or --scale for classical back-projection")?;
            ibp_run(&img, &IbpConfig::new(s))?.0
        }
    };
    save_image(&sr, out)?;
    println!(
        "wrote {} ({}x{} -> {}x{}) in {:.2}s",
        out.display(),
        img.width(),
        img.height(),
        sr.width(),
        sr.height(),
        started.elapsed().as_secs_f64()
    );
    Ok(ExitCode::SUCCESS)
}

fn image_set(path: &Path) -> CliResult<BTreeMap<String, PathBuf>> {
    let files = if path.is_dir() {
        list_images(path)?
    } else {
        vec![path.to_path_buf()]
    };
    Ok(files
        .into_iter()
        .map(|p| {
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            (stem, p)
        })
        .collect())
}

fn evaluate(sr: &Path, gt: &Path, proto: &EvalProtocol, csv: Option<&Path>) -> CliResult<ExitCode> {
    let (sr_set, gt_set) = (image_set(sr)?, image_set(gt)?);
    let single = !sr.is_dir() && !gt.is_dir();
    let mut matched: Vec<(String, &PathBuf, &PathBuf)> = Vec::new();
    if single {
        let (name, a) = sr_set.iter().next().expect("one file");
        matched.push((name.clone(), a, gt_set.values().next().expect("one file")));
    } else {
        for (name, a) in &sr_set {
            match gt_set.get(name) {
                Some(b) => matched.push((name.clone(), a, b)),
                None => eprintln!("warning: {name} has no ground truth, excluded"),
            }
        }
        for name in gt_set.keys().filter(|n| !sr_set.contains_key(*n)) {
            eprintln!("warning: {name} has no super-resolved result, excluded");
        }
    }
    if matched.is_empty() {
        return Err("no matching image names between the two sets".into());
    }
    let fmt = |v: f64| {
        if v.is_infinite() {
            "inf".to_string()
        } else {
            format!("{v:.4}")
        }
    };
    let mut rows = Vec::new();
    println!("{:<24} {:>10} {:>8}", "image", "PSNR", "SSIM");
    for (name, a, b) in &matched {
        let (a, b) = (load_image(a)?, load_image(b)?);
        let (a, b) = same_color(a, b)?;
        let (p, s) = (psnr(&a, &b, proto)?, ssim(&a, &b, proto)?);
        println!("{name:<24} {:>10} {:>8.4}", fmt(p), s);
        rows.push((name.clone(), p, s));
    }
    let n = rows.len() as f64;
    let mean_p = rows.iter().map(|r| r.1).sum::<f64>() / n;
    let mean_s = rows.iter().map(|r| r.2).sum::<f64>() / n;
    println!("{:<24} {:>10} {:>8.4}", "mean", fmt(mean_p), mean_s);
    if let Some(path) = csv {
        let mut text = String::from("image,psnr,ssim\n");
        for (name, p, s) in &rows {
            text.push_str(&format!("{name},{},{s:.6}\n", fmt(*p)));
        }
        text.push_str(&format!("mean,{},{mean_s:.6}\n", fmt(mean_p)));
        std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

/// Bring a colour/grayscale pair onto luma so either side may be Y-only.
fn same_color(a: ImagePlane, b: ImagePlane) -> CliResult<(ImagePlane, ImagePlane)> {
    Ok(match (a.color(), b.color()) {
        (ColorSpace::Y, ColorSpace::Rgb) => (a, rgb_to_y(&b)?),
        (ColorSpace::Rgb, ColorSpace::Y) => (rgb_to_y(&a)?, b),
        _ => (a, b),
    })
}

fn params(name: &str, scale: usize, expect: bool) -> CliResult<ExitCode> {
    let cfg = preset(name, scale)?;
    let net = DbpnNetwork::<f32>::build(&cfg, 0)?;
    println!("{}", net.describe());
    let count = net.count_params();
    match (
        published_params_k(name, scale),
        published_deviation(name, scale, count),
    ) {
        (Some(k), Some(dev)) => {
            println!("published: {k}k  deviation: {:.2}%", dev * 100.0);
            if expect && dev > 0.01 {
                eprintln!("parameter count is more than 1% off the published {k}k");
                return Ok(ExitCode::from(CHECK_FAILED));
            }
        }
        _ if expect => {
            return Err(format!(
                "no published count for {name} x{scale} (known presets: {})",
                PRESETS.join(", ")
            )
            .into())
        }
        _ => {}
    }
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(target: Target, seed: u64, checker: &GradCheck) -> CliResult<ExitCode> {
    let reports: Vec<(String, GradReport)> = match target {
        Target::Ops => op_suite(checker, seed)?,
        Target::Unit => vec![
            (
                "up unit (1,4,6,6)".into(),
                unit_gradcheck(Direction::Up, 2, 4, 4, 6, true, seed, checker)?,
            ),
            (
                "down unit (1,4,6,6)".into(),
                unit_gradcheck(Direction::Down, 2, 4, 4, 6, true, seed, checker)?,
            ),
            (
                "down unit with bottleneck (1,8,6,6)".into(),
                unit_gradcheck(Direction::Down, 2, 8, 4, 6, true, seed, checker)?,
            ),
        ],
        Target::Network => network_gradcheck(seed, checker)?,
    };
    let mut worst: f64 = 0.0;
    for (name, r) in &reports {
        let verdict = if r.passes(GRAD_TOLERANCE) {
            "ok"
        } else {
            "FAIL"
        };
        println!(
            "{name:<40} max rel error {:.3e}  {verdict}",
            r.max_rel_error
        );
        worst = worst.max(r.max_rel_error);
    }
    println!("worst {worst:.3e} (tolerance {GRAD_TOLERANCE:e})");
    Ok(if worst < GRAD_TOLERANCE {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(CHECK_FAILED)
    })
}
