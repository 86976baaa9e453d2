use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use wmark::attack::{AttackKind, AttackSpec};
use wmark::channel::{self, ChannelConfig, ChannelModel};
use wmark::dataset::{self, DatasetSpec};
use wmark::distortion::{self, DistortionSpec};
use wmark::metrics::seeded_rng;
use wmark::nets::WatermarkModel;
use wmark::pipeline::Pipeline;
use wmark::trainer::{self, TrainConfig, TrainMode};
use wmark::{BitMessage, Error, Result};

#[derive(Parser)]
#[command(name = "wmark", version, about = "Distortion-agnostic deep image watermarking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the channel codec against a binary symmetric channel.
    TrainChannel(TrainChannelArgs),
    /// Train watermark networks.
    Train(TrainArgs),
    /// Embed a message into an image and write a PNG.
    Embed(EmbedArgs),
    /// Extract a message from an image.
    Extract(ExtractArgs),
    /// Evaluate bit accuracy over a distortion suite.
    Evaluate(EvaluateArgs),
    /// Channel codec robustness curve as CSV.
    Curve(CurveArgs),
}

#[derive(Args)]
struct TrainChannelArgs {
    /// TOML file with ChannelConfig fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    source_len: Option<usize>,
    #[arg(long)]
    code_len: Option<usize>,
    #[arg(long)]
    noise_max: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Identity,
    Specialized,
    Combined,
    Adversarial,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackArg {
    Conv,
    Residual,
    Capped,
    Fgsm,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// TOML file with TrainConfig fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of training images.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints and the training log.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long)]
    eval_count: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    message_len: Option<usize>,
    /// Distortion as family:strength; repeat for combined mode.
    #[arg(long = "distortion")]
    distortions: Vec<DistortionSpec>,
    #[arg(long)]
    warm_start: Option<PathBuf>,
    #[arg(long, value_enum)]
    attack: Option<AttackArg>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ModelArgs {
    /// Watermark checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Channel codec checkpoint; without it messages go straight to the
    /// watermark networks.
    #[arg(long)]
    channel: Option<PathBuf>,
}

#[derive(Args)]
struct EmbedArgs {
    #[command(flatten)]
    models: ModelArgs,
    #[arg(long)]
    image: PathBuf,
    /// Binary string of 0/1, or hex with --hex.
    #[arg(long)]
    message: String,
    #[arg(long)]
    hex: bool,
    #[arg(long)]
    out: PathBuf,
    /// Accepted for a uniform interface; embedding is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    models: ModelArgs,
    #[arg(long)]
    image: PathBuf,
    /// Print the message as hex.
    #[arg(long)]
    hex: bool,
    /// Accepted for a uniform interface; extraction is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Known,
    Unknown,
    Both,
    Ablation,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    models: ModelArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    suite: SuiteArg,
    /// Output stem; `.json` and `.csv` are appended.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long)]
    eval_count: Option<usize>,
    /// Seed of the train / eval split.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long)]
    model_id: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long)]
    channel: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated flip probabilities.
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4")]
    grid: Vec<f64>,
    #[arg(long, default_value_t = 3000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::TrainChannel(a) => train_channel(a),
        Command::Train(a) => train(a),
        Command::Embed(a) => embed(a),
        Command::Extract(a) => extract(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Curve(a) => curve(a),
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn train_channel(a: TrainChannelArgs) -> Result<()> {
    let mut cfg: ChannelConfig = match &a.config {
        Some(p) => read_toml(p)?,
        None => ChannelConfig::default(),
    };
    cfg.train_steps = a.steps.unwrap_or(cfg.train_steps);
    cfg.source_len = a.source_len.unwrap_or(cfg.source_len);
    cfg.code_len = a.code_len.unwrap_or(cfg.code_len);
    cfg.train_noise_max = a.noise_max.unwrap_or(cfg.train_noise_max);
    let every = (cfg.train_steps / 20).max(1);
    let model = channel::train_channel(&cfg, &mut seeded_rng(a.seed), |s| {
        if s.step % every == 0 {
            log::info!("step {} noise {:.3} loss {:.4}", s.step, s.noise, s.loss);
        }
    })?;
    model.save(&a.out, cfg.train_steps as u64)?;
    log::info!("wrote {}", a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::from_toml_file(p)?,
        None => TrainConfig::default(),
    };
    if let Some(mode) = a.mode {
        cfg.mode = match mode {
            ModeArg::Identity => TrainMode::Identity,
            ModeArg::Specialized => TrainMode::Specialized,
            ModeArg::Combined => TrainMode::Combined,
            ModeArg::Adversarial => TrainMode::Adversarial,
        };
    }
    if !a.distortions.is_empty() {
        cfg.distortions = a.distortions.clone();
    } else if cfg.mode == TrainMode::Combined && cfg.distortions.is_empty() {
        cfg.distortions = distortion::known_suite();
    }
    if let Some(kind) = a.attack {
        let kind = match kind {
            AttackArg::Conv => AttackKind::Conv,
            AttackArg::Residual => AttackKind::Residual,
            AttackArg::Capped => AttackKind::Capped,
            AttackArg::Fgsm => AttackKind::Fgsm,
        };
        cfg.attack = Some(AttackSpec { kind, epsilon: a.epsilon, ..cfg.attack.clone().unwrap_or_default() });
    } else if cfg.mode == TrainMode::Adversarial && cfg.attack.is_none() {
        cfg.attack = Some(AttackSpec::default());
    }
    cfg.max_steps = a.steps.unwrap_or(cfg.max_steps);
    cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
    cfg.nets.message_len = a.message_len.unwrap_or(cfg.nets.message_len);
    cfg.warm_start = a.warm_start.clone().or(cfg.warm_start);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    if cfg.checkpoint_every == 0 {
        cfg.checkpoint_every = (cfg.max_steps / 10).max(1);
    }

    let data = dataset::ingest(&DatasetSpec {
        root: a.data.clone(),
        target_size: a.size,
        eval_count: a.eval_count,
        split_seed: cfg.seed,
    })?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let cfg_path = a.out.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml_string()?).map_err(|e| Error::io(&cfg_path, e))?;
    let every = (cfg.max_steps / 50).max(1);
    trainer::train(&cfg, &data, Some(&a.out), |m| {
        if m.step % every == 0 {
            log::info!(
                "step {} loss {:.4} msg {:.4} acc {:.3} psnr {:.2}",
                m.step,
                m.total_loss,
                m.message_loss,
                m.bit_acc,
                m.psnr
            );
        }
    })?;
    log::info!("wrote {}", a.out.join("final.ckpt").display());
    Ok(())
}

fn load_models(m: &ModelArgs) -> Result<(Option<ChannelModel>, WatermarkModel)> {
    let channel = m.channel.as_ref().map(ChannelModel::load).transpose()?;
    let (wm, _) = WatermarkModel::load(&m.model)?;
    Ok((channel, wm))
}

fn embed(a: EmbedArgs) -> Result<()> {
    log::debug!("seed {} unused by embed", a.seed);
    let (channel, wm) = load_models(&a.models)?;
    let pipeline = Pipeline::new(channel.as_ref(), &wm)?;
    let message = if a.hex { BitMessage::from_hex(&a.message)? } else { BitMessage::from_binary_str(&a.message)? };
    pipeline.embed(&a.image, &message, &a.out)?;
    println!("{}", a.out.display());
    Ok(())
}

fn extract(a: ExtractArgs) -> Result<()> {
    let (channel, wm) = load_models(&a.models)?;
    let pipeline = Pipeline::new(channel.as_ref(), &wm)?;
    log::debug!("seed {} unused by extract", a.seed);
    let message = pipeline.extract(&a.image)?;
    if a.hex {
        println!("{}", message.to_hex()?);
    } else {
        println!("{message}");
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let (channel, wm) = load_models(&a.models)?;
    let pipeline = Pipeline::new(channel.as_ref(), &wm)?;
    let data = dataset::ingest(&DatasetSpec {
        root: a.data.clone(),
        target_size: a.size,
        eval_count: a.eval_count,
        split_seed: a.split_seed,
    })?;
    let (suite, name) = match a.suite {
        SuiteArg::Known => (distortion::known_suite(), "known"),
        SuiteArg::Unknown => (distortion::unknown_suite(), "unknown"),
        SuiteArg::Both => (distortion::full_suite(), "both"),
        SuiteArg::Ablation => (distortion::ablation_suite(), "ablation"),
    };
    let model_id = a.model_id.clone().unwrap_or_else(|| a.models.model.display().to_string());
    let report = pipeline.evaluate(&data.eval, &suite, a.seed, &model_id, name)?;
    let (json, csv) = report.render(&a.out)?;
    println!("{}\n{}", json.display(), csv.display());
    Ok(())
}

fn curve(a: CurveArgs) -> Result<()> {
    let model = ChannelModel::load(&a.channel)?;
    let points = channel::robustness_curve(&model, &a.grid, a.trials, &mut seeded_rng(a.seed))?;
    let file = File::create(&a.out).map_err(|e| Error::io(&a.out, e))?;
    channel::write_curve_csv(&mut BufWriter::new(file), &points, a.trials, model.code_len(), model.source_len())
        .map_err(|e| Error::io(&a.out, e))?;
    println!("{}", a.out.display());
    Ok(())
}
