//! `amsa`: train, run and benchmark the AMSA-UNet deblurring model.
//!
//! Exit codes: 0 success, 1 training failure, 2 usage, 3 I/O or data,
//! 4 checkpoint or format.

mod config_file;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use amsa_core::bench::{bench_attention, BenchOptions, DEFAULT_SIZES, MIN_REPEATS};
use amsa_core::data::{read_image, write_image, write_synth_dataset, PairDataset, SynthOptions};
use amsa_core::network::{AmsaUnet, ModelConfig};
use amsa_core::train::{deblur, evaluate, format_db, train_loop, TrainConfig, TrainingState, DEFAULT_FREQ_WEIGHT};
use amsa_core::Error;
use clap::{Args, Parser, Subcommand};

const EXIT_TRAINING: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_CHECKPOINT: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "amsa", version, about = "AMSA-UNet image deblurring")]
struct Cli {
    /// Plain `key=value` file of long flag names; explicit flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on paired blurry/sharp directories.
    Train(TrainArgs),
    /// Restore one image with a trained checkpoint.
    Deblur(DeblurArgs),
    /// Per-image and mean PSNR/SSIM of restored images, as CSV.
    Eval(EvalArgs),
    /// Time frequency-domain against softmax attention.
    BenchAttn(BenchArgs),
    /// Write synthetic motion-blurred pairs of procedural textures.
    SynthData(SynthArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_name = "DIR")]
    data_blur: PathBuf,
    #[arg(long, value_name = "DIR")]
    data_sharp: PathBuf,
    /// Receives metrics.csv and checkpoint.amsa.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    epochs: u64,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    /// Square training crop; 0 trains on whole images.
    #[arg(long, default_value_t = 64)]
    crop: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// Learning-rate factor applied every --decay-every epochs.
    #[arg(long, default_value_t = 0.5)]
    decay: f64,
    #[arg(long, default_value_t = 500)]
    decay_every: u64,
    /// Seeds parameter initialization, shuffling and crops.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Self-attention in the encoder too.
    #[arg(long)]
    symmetric: bool,
    /// Replace cross-scale fusion by a plain upsample sum.
    #[arg(long)]
    no_aff: bool,
    #[arg(long, default_value_t = 16)]
    base_channels: usize,
    #[arg(long, default_value_t = 2)]
    blocks: usize,
    #[arg(long, default_value_t = 8)]
    patch: usize,
    /// Weight of the spectral-magnitude loss term.
    #[arg(long, default_value_t = DEFAULT_FREQ_WEIGHT)]
    freq_weight: f64,
    /// Pairs held out for validation; default a tenth of the data.
    #[arg(long)]
    holdout: Option<usize>,
    #[arg(long, default_value_t = 1)]
    checkpoint_every: u64,
    /// Continue from the checkpoint in --out if one exists.
    #[arg(long)]
    resume: bool,
}

#[derive(Args, Debug)]
struct DeblurArgs {
    #[arg(long, value_name = "CKPT")]
    model: PathBuf,
    #[arg(long, value_name = "IMG")]
    input: PathBuf,
    #[arg(long, value_name = "IMG")]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, value_name = "CKPT")]
    model: PathBuf,
    #[arg(long, value_name = "DIR")]
    data_blur: PathBuf,
    #[arg(long, value_name = "DIR")]
    data_sharp: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Patch pixel counts, each the square of a power of two.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SIZES)]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 7)]
    repeats: usize,
    #[arg(long, default_value_t = 8)]
    channels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the CSV here instead of standard output.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    out_blur: PathBuf,
    #[arg(long, value_name = "DIR")]
    out_sharp: PathBuf,
    #[arg(long, default_value_t = 100)]
    count: usize,
    /// Width and height of every image.
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Shifted copies averaged per blurry image.
    #[arg(long, default_value_t = 5)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Failure::new(EXIT_USAGE, message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Checkpoint(_) => EXIT_CHECKPOINT,
            Error::Training(_) => EXIT_TRAINING,
            // configs are validated up front, so what remains are data problems
            Error::Parse { .. } | Error::Dataset { .. } | Error::Io { .. } | Error::Dimension { .. } | Error::Contract(_) => {
                EXIT_DATA
            }
        };
        Failure::new(code, e.to_string())
    }
}

/// Checkpoint problems of any kind, including a missing file, exit with 4.
fn load_model(path: &Path) -> Result<(AmsaUnet, TrainingState), Failure> {
    let state = TrainingState::load(path).map_err(|e| Failure::new(EXIT_CHECKPOINT, format!("{}: {e}", path.display())))?;
    let model = AmsaUnet::new(state.model.clone()).map_err(|e| Failure::new(EXIT_CHECKPOINT, e.to_string()))?;
    Ok((model, state))
}

fn cmd_train(a: TrainArgs) -> Result<(), Failure> {
    let model_cfg = ModelConfig {
        base_channels: a.base_channels,
        blocks_per_level: a.blocks,
        patch: a.patch,
        symmetric_mode: a.symmetric,
        use_aff: !a.no_aff,
        seed: a.seed,
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        lr0: a.lr,
        decay_factor: a.decay,
        decay_every: a.decay_every,
        epochs: a.epochs,
        batch: a.batch,
        crop: (a.crop > 0).then_some(a.crop),
        loss_freq_weight: a.freq_weight,
        seed: a.seed,
        holdout: a.holdout,
        checkpoint_every: a.checkpoint_every,
        ..TrainConfig::default()
    };
    model_cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    println!(
        "train: epochs={} batch={} crop={} lr={:e} decay={} decay_every={} seed={} symmetric={} aff={} \
         base_channels={} blocks={} patch={} freq_weight={}",
        cfg.epochs,
        cfg.batch,
        a.crop,
        cfg.lr0,
        cfg.decay_factor,
        cfg.decay_every,
        cfg.seed,
        model_cfg.symmetric_mode,
        model_cfg.use_aff,
        model_cfg.base_channels,
        model_cfg.blocks_per_level,
        model_cfg.patch,
        cfg.loss_freq_weight
    );
    let summary = train_loop(&model_cfg, &cfg, &a.data_blur, &a.data_sharp, &a.out, a.resume, |r| {
        println!(
            "epoch {} loss {:.6} lr {:e} val_psnr {}",
            r.epoch,
            r.loss,
            r.lr,
            format_db(r.val_psnr)
        );
    })?;
    println!("final val_psnr {}", format_db(summary.final_val_psnr));
    Ok(())
}

fn cmd_deblur(a: DeblurArgs) -> Result<(), Failure> {
    let (model, state) = load_model(&a.model)?;
    let img = read_image(&a.input)?;
    let out = deblur(&model, &state.params, &img)?;
    write_image(&out, &a.output)?;
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    let (model, state) = load_model(&a.model)?;
    let data = PairDataset::load(&a.data_blur, &a.data_sharp)?;
    let scores = evaluate(&model, &state.params, &data)?;
    let mut out = String::from("image,psnr,ssim\n");
    for s in &scores {
        out.push_str(&format!("{},{},{}\n", s.name, s.psnr, s.ssim));
    }
    let n = scores.len() as f64;
    let mean_psnr = scores.iter().map(|s| s.psnr).sum::<f64>() / n;
    let mean_ssim = scores.iter().map(|s| s.ssim).sum::<f64>() / n;
    out.push_str(&format!("mean,{mean_psnr},{mean_ssim}\n"));
    print!("{out}");
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<(), Failure> {
    if a.repeats < MIN_REPEATS {
        return Err(Failure::usage(format!("--repeats must be at least {MIN_REPEATS}")));
    }
    if a.sizes.is_empty() || a.channels == 0 {
        return Err(Failure::usage("--sizes and --channels must be non-empty"));
    }
    let opts = BenchOptions {
        sizes: a.sizes,
        repeats: a.repeats,
        channels: a.channels,
        seed: a.seed,
    };
    let csv = bench_attention(&opts).map_err(|e| Failure::usage(e.to_string()))?.to_csv();
    match a.out {
        Some(path) => fs::write(&path, csv).map_err(|e| Failure::new(EXIT_DATA, format!("{}: {e}", path.display())))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<(), Failure> {
    if a.count == 0 || a.size == 0 || a.frames == 0 {
        return Err(Failure::usage("--count, --size and --frames must be positive"));
    }
    let opts = SynthOptions {
        count: a.count,
        width: a.size,
        height: a.size,
        frames: a.frames,
        seed: a.seed,
    };
    write_synth_dataset(&opts, &a.out_blur, &a.out_sharp).map_err(|e| match e {
        Error::Contract(m) => Failure::usage(m),
        other => other.into(),
    })?;
    println!("wrote {} pairs to {} and {}", a.count, a.out_blur.display(), a.out_sharp.display());
    Ok(())
}

fn main() -> ExitCode {
    let args = match config_file::merge(std::env::args().collect()) {
        Ok(args) => args,
        Err(config_file::ConfigError::Read(m)) => {
            eprintln!("error: cannot read config: {m}");
            return ExitCode::from(EXIT_DATA);
        }
        Err(config_file::ConfigError::Syntax(m)) => {
            eprintln!("error: bad config: {m}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        // help and version exit 0, usage errors exit 2 with usage on stderr
        Err(e) => e.exit(),
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Deblur(a) => cmd_deblur(a),
        Command::Eval(a) => cmd_eval(a),
        Command::BenchAttn(a) => cmd_bench(a),
        Command::SynthData(a) => cmd_synth(a),
    };
    let _ = std::io::stdout().flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
