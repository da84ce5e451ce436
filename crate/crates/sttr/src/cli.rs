//! Command implementations behind the `sttr` binary: train, stylize,
//! video, attention-dump, and bench, plus shared config/checkpoint
//! plumbing. Kept in the library so the logic is testable without
//! spawning processes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::image::{self, ImageBuffer};
use crate::model::Sttr;
use crate::tensor::{Tape, Tensor};
use crate::train::{list_images, train, TrainSinks};
use crate::transformer::{capture_attention, AttentionSite, AttentionTrace};

#[derive(Parser)]
#[command(name = "sttr", about = "Fine-grained image style transfer", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Optimize a model on a folder of content and style images
    Train(TrainArgs),
    /// Render one content image in the style of another
    Stylize(StylizeArgs),
    /// Stylize an image sequence frame by frame and report smoothness
    Video(VideoArgs),
    /// Export one query token's attention row as an image and raw text
    AttentionDump(AttentionDumpArgs),
    /// Time stylization on synthetic inputs
    Bench(BenchArgs),
}

/// Configuration source shared by every subcommand.
#[derive(Args)]
pub struct ConfigArgs {
    /// JSON config file; wins over --preset
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named profile: desk or paper
    #[arg(long, default_value = "desk")]
    pub preset: String,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<RunConfig> {
        let cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::preset(&self.preset)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Directory of content images (.ppm or .png)
    #[arg(long)]
    pub content_dir: PathBuf,
    /// Directory of style images
    #[arg(long)]
    pub style_dir: PathBuf,
    /// Final checkpoint path
    #[arg(long)]
    pub out: PathBuf,
    /// Step records as JSON lines (default: stdout)
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Directory for scheduled mid-run checkpoints
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct StylizeArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub content: PathBuf,
    #[arg(long)]
    pub style: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output image (.ppm or .png)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct VideoArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Directory of frames, processed in lexicographic order
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub style: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output directory; frames keep their file names
    #[arg(long)]
    pub out: PathBuf,
    /// Smoothness report path (JSON lines, one row per adjacent pair)
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModuleChoice {
    /// Style encoder self-attention
    Enc,
    /// Content decoder cross-attention
    Dec,
}

#[derive(Args)]
pub struct AttentionDumpArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub content: PathBuf,
    #[arg(long)]
    pub style: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Which attention stack to read
    #[arg(long, value_enum)]
    pub module: ModuleChoice,
    /// Layer index, 0-based
    #[arg(long)]
    pub layer: usize,
    /// Query token as "x,y" on the query token grid
    #[arg(long)]
    pub point: String,
    /// Grayscale map image; the raw row lands next to it as .txt
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Square input size, divisible by 32
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Timed runs after one warm-up
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Stylize(args) => cmd_stylize(args),
        Command::Video(args) => cmd_video(args),
        Command::AttentionDump(args) => cmd_attention_dump(args),
        Command::Bench(args) => cmd_bench(args),
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let mut log_file;
    let mut stdout;
    let log: &mut dyn Write = match &args.log {
        Some(path) => {
            log_file = BufWriter::new(File::create(path)?);
            &mut log_file
        }
        None => {
            stdout = std::io::stdout();
            &mut stdout
        }
    };
    let sinks = TrainSinks { log: Some(log), checkpoint_dir: args.checkpoint_dir.as_deref() };
    let (model, records) = train(&args.content_dir, &args.style_dir, &cfg, sinks)?;
    checkpoint::save(&args.out, &model.parameters())?;
    if let Some(last) = records.last() {
        eprintln!(
            "trained {} steps, total loss {:.6} -> {:.6}, checkpoint {}",
            records.len(),
            records[0].total,
            last.total,
            args.out.display()
        );
    } else {
        eprintln!("0 steps requested, wrote initial weights to {}", args.out.display());
    }
    Ok(())
}

/// Builds the model from config and loads weights over it.
fn restore_model(cfg: &RunConfig, checkpoint_path: &Path) -> Result<Sttr> {
    let model = Sttr::new(cfg, cfg.train.seed);
    let loaded = checkpoint::load(checkpoint_path)?;
    checkpoint::apply(&model.parameters(), &loaded)?;
    Ok(model)
}

/// Loads an image and center-crops it to multiples of 32, warning on the
/// diagnostic stream when pixels are trimmed.
fn load_cropped(path: &Path, label: &str) -> Result<ImageBuffer> {
    let img = image::load(path).map_err(|e| match e {
        Error::ImageDecode(m) => Error::ImageDecode(format!("{}: {m}", path.display())),
        Error::Io(io) => Error::ImageDecode(format!("{}: {io}", path.display())),
        other => other,
    })?;
    let (w, h) = (img.width, img.height);
    let (cropped, trimmed) = img.center_crop_to_multiple(32)?;
    if trimmed {
        eprintln!(
            "warning: {label} {} cropped {}x{} -> {}x{}",
            path.display(),
            w,
            h,
            cropped.width,
            cropped.height
        );
    }
    Ok(cropped)
}

/// One deterministic stylization pass over decoded images.
pub fn stylize_buffers(model: &Sttr, content: &ImageBuffer, style: &ImageBuffer) -> ImageBuffer {
    let tape = Tape::new();
    let out = model.stylize(&tape, &content.to_tensor(), &style.to_tensor(), None);
    tape.clear();
    ImageBuffer::from_tensor(&out)
}

fn cmd_stylize(args: StylizeArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let content = load_cropped(&args.content, "content")?;
    let style = load_cropped(&args.style, "style")?;
    let model = restore_model(&cfg, &args.checkpoint)?;
    let out = stylize_buffers(&model, &content, &style);
    image::save(&args.out, &out)?;
    Ok(())
}

/// One report row: mean absolute differences between a frame and its
/// successor, before and after stylization.
#[derive(Serialize)]
struct PairRow<'a> {
    first: &'a str,
    second: &'a str,
    input_mean_abs_diff: f64,
    output_mean_abs_diff: f64,
}

fn cmd_video(args: VideoArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let frames = list_images(&args.frames)?;
    if frames.len() < 2 {
        return Err(Error::ImageDecode(format!(
            "video needs at least 2 frames, found {} in {}",
            frames.len(),
            args.frames.display()
        )));
    }
    let style = load_cropped(&args.style, "style")?;
    let model = restore_model(&cfg, &args.checkpoint)?;
    std::fs::create_dir_all(&args.out)?;

    let mut names = Vec::new();
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    for path in &frames {
        let frame = load_cropped(path, "frame")?;
        let styled = stylize_buffers(&model, &frame, &style);
        let name = path.file_name().expect("listed files have names").to_owned();
        image::save(&args.out.join(&name), &styled)?;
        names.push(name.to_string_lossy().into_owned());
        inputs.push(frame);
        outputs.push(styled);
    }

    let mut report = BufWriter::new(File::create(&args.report)?);
    for i in 0..inputs.len() - 1 {
        let row = PairRow {
            first: &names[i],
            second: &names[i + 1],
            input_mean_abs_diff: image::mean_abs_diff(&inputs[i], &inputs[i + 1])?,
            output_mean_abs_diff: image::mean_abs_diff(&outputs[i], &outputs[i + 1])?,
        };
        writeln!(report, "{}", serde_json::to_string(&row).expect("row serializes"))?;
    }
    Ok(())
}

fn parse_point(text: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("--point must be \"x,y\" with non-negative integers, got `{text}`"));
    let (x, y) = text.split_once(',').ok_or_else(bad)?;
    Ok((x.trim().parse().map_err(|_| bad())?, y.trim().parse().map_err(|_| bad())?))
}

/// Min-max normalizes a row to [0,1]; a constant row becomes all ones.
fn normalize_row(row: &[f32]) -> Vec<f32> {
    let min = row.iter().cloned().fold(f32::INFINITY, f32::min);
    let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    if max > min {
        row.iter().map(|&v| (v - min) / (max - min)).collect()
    } else {
        vec![1.0; row.len()]
    }
}

fn cmd_attention_dump(args: AttentionDumpArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let (x, y) = parse_point(&args.point)?;
    let content = load_cropped(&args.content, "content")?;
    let style = load_cropped(&args.style, "style")?;
    let model = restore_model(&cfg, &args.checkpoint)?;

    // the query lives on the content grid for cross-attention, on the
    // style grid for encoder self-attention; keys are always style tokens
    let (qw, qh, site) = match args.module {
        ModuleChoice::Enc => {
            let (gh, gw) = cfg.style_grid(style.height, style.width);
            (gw, gh, AttentionSite::Encoder)
        }
        ModuleChoice::Dec => {
            let (gh, gw) = cfg.content_grid(content.height, content.width);
            (gw, gh, AttentionSite::Decoder)
        }
    };
    if x >= qw || y >= qh {
        return Err(Error::Shape(format!(
            "point ({x},{y}) is outside the query token grid; valid x: 0..{qw}, y: 0..{qh}"
        )));
    }

    let mut trace = AttentionTrace::default();
    let tape = Tape::new();
    model.stylize(&tape, &content.to_tensor(), &style.to_tensor(), Some(&mut trace));
    tape.clear();
    let map = capture_attention(&trace, site, args.layer, y * qw + x)?;
    let row = map.weights.to_vec();

    let (kh, kw) = cfg.style_grid(style.height, style.width);
    assert_eq!(row.len(), kh * kw, "attention row covers the key grid");
    let gray = normalize_row(&row);
    let pixels: Vec<f32> = gray.iter().flat_map(|&v| [v, v, v]).collect();
    image::save(&args.out, &ImageBuffer::new(kw, kh, pixels))?;

    let txt = args.out.with_extension("txt");
    let mut text = File::create(&txt)?;
    let words: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
    writeln!(text, "{}", words.join(" "))?;
    Ok(())
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// What `bench` prints as one JSON line on stdout.
#[derive(Serialize)]
pub struct BenchReport {
    pub size: usize,
    pub repeats: usize,
    pub median_seconds: f64,
    pub times_seconds: Vec<f64>,
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let cfg = args.config.load()?;
    if args.size % 32 != 0 || args.size == 0 {
        return Err(Error::Config(format!(
            "bench size must be a positive multiple of 32, got {}",
            args.size
        )));
    }
    if args.repeats == 0 {
        return Err(Error::Config("bench needs at least 1 repeat".into()));
    }
    let model = restore_model(&cfg, &args.checkpoint)?;
    let content = Tensor::seeded(100, &[1, 3, args.size, args.size], 0.0, 1.0);
    let style = Tensor::seeded(101, &[1, 3, args.size, args.size], 0.0, 1.0);

    let run_once = || {
        let tape = Tape::new();
        let start = Instant::now();
        let out = model.stylize(&tape, &content, &style, None);
        let elapsed = start.elapsed().as_secs_f64();
        assert!(out.to_vec()[0].is_finite());
        tape.clear();
        elapsed
    };
    run_once(); // warm-up
    let mut times: Vec<f64> = (0..args.repeats).map(|_| run_once()).collect();
    let raw = times.clone();
    times.sort_by(|a, b| a.partial_cmp(b).expect("timings are finite"));
    let report = BenchReport {
        size: args.size,
        repeats: args.repeats,
        median_seconds: median(&times),
        times_seconds: raw,
    };
    println!("{}", serde_json::to_string(&report).expect("report serializes"));
    Ok(())
}
