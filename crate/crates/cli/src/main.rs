use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use palvid::diffusion::{train_with_progress, Checkpoint, NetworkConfig, TrainOptions};
use palvid::gmm::{self, EmOptions, GmmModel};
use palvid::llm::{self, LlmConfig, TagList};
use palvid::metrics::{self, Metric};
use palvid::palette::{kmeans_extract, Palette};
use palvid::sampler::progressive_colorize;
use palvid::vidio::{self, read_frame, read_video, write_video, Frame, SynthConfig, Video};

#[derive(Parser)]
#[command(name = "palvid", version, about = "Palette-guided video colorization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic clips of moving colored shapes.
    Synth(SynthArgs),
    /// Produce a palette file from an image, a GMM or content tags.
    Palette(PaletteArgs),
    /// Fit a color GMM to the saturated pixels of a clip directory.
    FitGmm(FitGmmArgs),
    /// Train the denoiser on a clip directory.
    Train(TrainArgs),
    /// Colorize a gray video.
    Colorize(ColorizeArgs),
    /// Score a video with quality metrics.
    Eval(EvalArgs),
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let w = w.trim().parse().map_err(|_| format!("bad width in {s:?}"))?;
    let h = h.trim().parse().map_err(|_| format!("bad height in {s:?}"))?;
    Ok((w, h))
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    clips: usize,
    #[arg(long, default_value_t = 16)]
    frames: usize,
    /// Frame size as WxH, at least 8x8.
    #[arg(long, default_value = "32x32", value_parser = parse_size)]
    size: (usize, usize),
    #[arg(long, default_value_t = 3)]
    shapes: usize,
    /// Distinct shape colors per clip.
    #[arg(long, default_value_t = 4)]
    colors: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Exactly one palette source.
#[derive(Args, Debug)]
#[group(required = true, multiple = false, id = "source")]
struct SourceArgs {
    /// Existing palette JSON file.
    #[arg(long)]
    palette: Option<PathBuf>,
    /// K-means of a PPM image.
    #[arg(long, value_name = "PPM")]
    from_image: Option<PathBuf>,
    /// Draw from a fitted GMM JSON file.
    #[arg(long, value_name = "GMM")]
    from_gmm: Option<PathBuf>,
    /// Comma-separated content tags; needs --offline or --endpoint.
    #[arg(long)]
    tags: Option<String>,
}

#[derive(Args, Debug)]
struct LlmArgs {
    /// Resolve tags with the built-in table instead of a model.
    #[arg(long, requires = "tags", conflicts_with = "endpoint")]
    offline: bool,
    /// Chat-completion URL; the API key is read from PALVID_API_KEY.
    #[arg(long, requires = "tags")]
    endpoint: Option<String>,
    /// Model name sent to the endpoint.
    #[arg(long, requires = "endpoint")]
    model: Option<String>,
}

#[derive(Args)]
struct PaletteArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    llm: LlmArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "palette.json")]
    out: PathBuf,
}

#[derive(Args)]
struct FitGmmArgs {
    /// Directory of clips as written by `synth`, or a single color video.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 8)]
    components: usize,
    #[arg(long, default_value_t = 10)]
    frames_per_video: usize,
    /// Minimum cross-channel variance (0-255 scale) of a kept pixel.
    #[arg(long, default_value_t = gmm::DEFAULT_VARIANCE_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "gmm.json")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1)]
    batch_size: usize,
    #[arg(long, default_value_t = 100)]
    warmup: usize,
    /// Fraction of training examples conditioned on the null palette.
    #[arg(long, default_value_t = 0.0)]
    palette_dropout: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    channels: usize,
    /// Frames per training window.
    #[arg(long, default_value_t = 8)]
    window: usize,
    #[arg(long, default_value_t = 200)]
    timesteps: usize,
    #[arg(long, default_value_t = 1e-4)]
    beta_start: f64,
    #[arg(long, default_value_t = 0.02)]
    beta_end: f64,
    #[arg(long, default_value = "model.pgvc")]
    out: PathBuf,
}

#[derive(Args)]
struct ColorizeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// One-channel input video (directory or manifest).
    #[arg(long)]
    gray: PathBuf,
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    llm: LlmArgs,
    /// Reference frame (PPM). Defaults to a swatch of the palette.
    #[arg(long = "ref", value_name = "PPM")]
    reference: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    window: usize,
    #[arg(long, default_value_t = 2)]
    overlap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    /// Guidance palette for palette-adherence.
    #[arg(long)]
    palette: Option<PathBuf>,
    /// Comma list from colorful, psnr, ssim, palette-adherence.
    #[arg(long, value_delimiter = ',', default_value = "colorful")]
    metrics: Vec<Metric>,
    /// Report path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Deletes an output the command created unless [`Output::commit`] is called.
/// Paths that already existed are left alone.
struct Output {
    path: PathBuf,
    armed: bool,
}

impl Output {
    fn new(path: &Path) -> Self {
        Output {
            path: path.to_path_buf(),
            armed: !path.exists(),
        }
    }

    fn commit(mut self) {
        self.armed = false;
    }
}

impl Drop for Output {
    fn drop(&mut self) {
        if !self.armed {
            return;
        }
        let _ = if self.path.is_dir() {
            fs::remove_dir_all(&self.path)
        } else {
            fs::remove_file(&self.path)
        };
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let guard = Output::new(path);
    fs::write(path, format!("{contents}\n")).with_context(|| format!("writing {}", path.display()))?;
    guard.commit();
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let config = SynthConfig {
        num_clips: args.clips,
        frames_per_clip: args.frames,
        width: args.size.0,
        height: args.size.1,
        num_shapes: args.shapes,
        shape_palette_size: args.colors,
        seed: args.seed,
    };
    config.validate()?;
    let clips = vidio::synth_generate::<f32>(&config)?;
    let guard = Output::new(&args.out);
    for (i, (color, gray)) in clips.iter().enumerate() {
        let dir = args.out.join(format!("clip_{i:04}"));
        write_video(color, dir.join("color"))?;
        write_video(gray, dir.join("gray"))?;
    }
    guard.commit();
    eprintln!("wrote {} clips to {}", clips.len(), args.out.display());
    Ok(())
}

fn resolve_palette(source: &SourceArgs, llm_args: &LlmArgs, seed: u64) -> Result<Palette> {
    if let Some(path) = &source.palette {
        return Ok(Palette::load(path)?);
    }
    if let Some(path) = &source.from_image {
        let frame: Frame<f32> = read_frame(path, 3)?;
        return Ok(kmeans_extract(&[frame], seed, 100)?);
    }
    if let Some(path) = &source.from_gmm {
        return Ok(gmm::sample_palette(&GmmModel::load(path)?, seed)?);
    }
    let tags = TagList::parse(source.tags.as_deref().expect("clap enforces one source"))?;
    if llm_args.offline {
        return Ok(llm::offline_lookup(&tags, seed));
    }
    let endpoint = llm_args
        .endpoint
        .as_ref()
        .ok_or_else(|| anyhow!("--tags needs either --offline or --endpoint"))?;
    let mut config = LlmConfig::new(endpoint.clone());
    if let Some(model) = &llm_args.model {
        config.model = model.clone();
    }
    Ok(llm::request_colors(&config, &tags)?)
}

fn cmd_palette(args: PaletteArgs) -> Result<()> {
    let palette = resolve_palette(&args.source, &args.llm, args.seed)?;
    write_file(&args.out, &palette.to_json())?;
    eprintln!("wrote palette to {}", args.out.display());
    Ok(())
}

/// Clip directories (`*/color`, `*/gray`) under `root`, in name order.
fn clip_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .with_context(|| format!("reading {}", root.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("color").is_dir() && p.join("gray").is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("no clip directories with color/ and gray/ under {}", root.display());
    }
    Ok(dirs)
}

fn cmd_fit_gmm(args: FitGmmArgs) -> Result<()> {
    let videos: Vec<Video<f32>> = if vidio::manifest_path(&args.data).is_file() {
        vec![read_video(&args.data)?]
    } else {
        clip_dirs(&args.data)?
            .iter()
            .map(|d| read_video(d.join("color")))
            .collect::<palvid::Result<_>>()?
    };
    let pixels = gmm::collect_training_pixels(&videos, args.frames_per_video, args.threshold, args.seed)?;
    eprintln!("{} pixels pass the variance filter", pixels.len());
    let scaled: Vec<[f64; 3]> = pixels.iter().map(|p| p.map(|v| v / 255.0)).collect();
    let fit = gmm::fit_em(
        &scaled,
        &EmOptions {
            components: args.components,
            max_iters: args.max_iters,
            seed: args.seed,
            ..EmOptions::default()
        },
    )?;
    eprintln!(
        "EM stopped after {} iterations, log-likelihood {:.4}",
        fit.iterations,
        fit.log_likelihoods.last().copied().unwrap_or(f64::NAN)
    );
    write_file(&args.out, &fit.model.to_json())?;
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let dataset = clip_dirs(&args.data)?
        .iter()
        .map(|d| Ok((read_video(d.join("color"))?, read_video(d.join("gray"))?)))
        .collect::<Result<Vec<(Video<f32>, Video<f32>)>>>()?;
    let (width, height) = (dataset[0].0.width(), dataset[0].0.height());
    let config = NetworkConfig {
        base_channels: args.channels,
        window_frames: args.window,
        height,
        width,
        timesteps: args.timesteps,
        beta_start: args.beta_start,
        beta_end: args.beta_end,
        ..NetworkConfig::default()
    };
    let options = TrainOptions {
        steps: args.steps,
        lr: args.lr,
        seed: args.seed,
        batch_size: args.batch_size,
        warmup_steps: args.warmup,
        palette_dropout: args.palette_dropout,
    };
    let every = (args.steps / 20).max(1);
    let report = train_with_progress(&dataset, &config, &options, |step, loss| {
        if step % every == 0 || step == args.steps {
            eprintln!("step {step}/{} loss {loss:.5}", args.steps);
        }
    })?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let guard = Output::new(&args.out);
    report.checkpoint.save(&args.out)?;
    guard.commit();
    eprintln!("saved checkpoint to {}", args.out.display());
    Ok(())
}

fn cmd_colorize(args: ColorizeArgs) -> Result<()> {
    let ckpt = Checkpoint::<f32>::load(&args.ckpt)?;
    let gray: Video<f32> = read_video(&args.gray)?;
    if gray.channels() != 1 {
        bail!("{} is not a 1-channel video", args.gray.display());
    }
    let palette = resolve_palette(&args.source, &args.llm, args.seed)?;
    let reference = match &args.reference {
        Some(path) => read_frame(path, 3)?,
        None => palette.swatch(gray.width(), gray.height())?,
    };
    let guard = Output::new(&args.out);
    let video = progressive_colorize(&gray, &palette, &reference, &ckpt, args.window, args.overlap, args.seed)?;
    write_video(&video, &args.out)?;
    guard.commit();
    eprintln!("wrote {} frames to {}", video.len(), args.out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let pred: Video<f32> = read_video(&args.pred)?;
    let reference: Option<Video<f32>> = args.reference.as_ref().map(read_video).transpose()?;
    let palette = args.palette.as_ref().map(Palette::load).transpose()?;
    let report = metrics::evaluate(&pred, reference.as_ref(), palette.as_ref(), &args.metrics)?;
    for m in &report.metrics {
        eprintln!("{}: {:.6}", m.metric, m.aggregate);
    }
    match &args.out {
        Some(path) => write_file(path, &report.to_json())?,
        None => println!("{}", report.to_json()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Palette(a) => cmd_palette(a),
        Command::FitGmm(a) => cmd_fit_gmm(a),
        Command::Train(a) => cmd_train(a),
        Command::Colorize(a) => cmd_colorize(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
