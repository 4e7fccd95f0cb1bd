//! `discdream` command line: dream, video, inspect, logits and replay.
//!
//! Every command is a plain function so tests can drive it without a
//! subprocess; [`run`] maps results onto exit codes 0 (success), 1 (runtime
//! failure) and 2 (usage error).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use discdream::arch::{ArchConfig, LayerName, Tap, TapSet};
use discdream::discriminator::parameter_specs;
use discdream::dream::NormMode;
use discdream::image_io::{load_rgb, save_png};
use discdream::manifest::{Manifest, Provenance, RunKind, StartSource, WeightsRef, MANIFEST_FILE};
use discdream::ops::bilinear_resize;
use discdream::transform::BLACK;
use discdream::weights::{decode_weights, read_file, weights_digest, write_weights};
use discdream::{
    dream, random_start, random_weights, render_video, DiscriminatorGraph, DreamConfig,
    FrameTransform, ImageBuffer, Tensor, VideoConfig, VideoSettings,
};
use log::info;
use thiserror::Error;

/// File name of the single-image result inside `--out-dir`.
pub const DREAM_FILE: &str = "dream.png";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "discdream",
    version,
    about = "Dream images out of a GAN discriminator"
)]
pub struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dream a single image.
    Dream(DreamArgs),
    /// Render a dreamed frame sequence.
    Video(VideoArgs),
    /// Print the architecture stored in a weights file.
    Inspect(InspectArgs),
    /// Print final logits for probe images as JSON.
    Logits(LogitsArgs),
    /// Re-run a previous run from its manifest.
    Replay(ReplayArgs),
    /// Write a seeded random-weights model for experiments.
    RandomWeights(RandomWeightsArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DreamArgs {
    /// DDRW weights file.
    #[arg(long)]
    pub weights: PathBuf,
    /// RGB start image, resized to the network resolution.
    #[arg(long, value_name = "PNG", conflicts_with = "seed")]
    pub start_image: Option<PathBuf>,
    /// Seed of the uniform-noise start image.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated layer names to amplify.
    #[arg(long, value_delimiter = ',', required = true)]
    pub layers: Vec<String>,
    /// Per-layer loss weights, one per `--layers` entry (default 1).
    #[arg(long, value_delimiter = ',')]
    pub layer_weights: Vec<f32>,
    /// Loss normalisation per layer: none, count or sqrt.
    #[arg(long, default_value = "none")]
    pub norm: NormMode,
    #[arg(long, default_value_t = 10)]
    pub octaves: usize,
    #[arg(long, default_value_t = 1.4)]
    pub octave_scale: f64,
    /// Step size of the normalised gradient ascent.
    #[arg(long, default_value_t = 0.01)]
    pub lr: f32,
    /// Ascent steps per octave.
    #[arg(long, default_value_t = 20)]
    pub iterations: usize,
    /// Resize every octave to the network resolution (default).
    #[arg(long, overrides_with = "no_resize_octaves")]
    pub resize_octaves: bool,
    /// Feed octaves at their own size; too-small octaves are skipped.
    #[arg(long, overrides_with = "resize_octaves")]
    pub no_resize_octaves: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct VideoArgs {
    #[command(flatten)]
    pub dream: DreamArgs,
    #[arg(long, default_value_t = 30)]
    pub fps: u32,
    /// Length in seconds.
    #[arg(long, default_value_t = 30.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 10)]
    pub iterations_per_frame: usize,
    /// Pixels cropped per border each frame; negative zooms out.
    #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
    pub zoom_px: i32,
    /// Counter-clockwise rotation per frame.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub rotate_deg: f64,
    /// Rightward shift per frame.
    #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
    pub tx_px: i32,
    /// Downward shift per frame.
    #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
    pub ty_px: i32,
    /// Colour of uncovered pixels as r,g,b in [-1, 1].
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_values_t = BLACK)]
    pub fill: Vec<f32>,
    /// Number frames in reverse temporal order.
    #[arg(long)]
    pub reverse: bool,
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub weights: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct LogitsArgs {
    #[arg(long)]
    pub weights: PathBuf,
    /// First seed of the uniform-noise probes.
    #[arg(long, default_value_t = 0, conflicts_with = "raw")]
    pub seed: u64,
    /// Number of seeded probes.
    #[arg(long, default_value_t = 4, conflicts_with = "raw")]
    pub count: usize,
    /// Little-endian f32 NCHW batch at the network resolution instead of
    /// seeded probes.
    #[arg(long)]
    pub raw: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Weights file to use instead of the recorded path; its digest must
    /// still match.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RandomWeightsArgs {
    #[arg(long)]
    pub resolution: usize,
    #[arg(long, default_value_t = 32768)]
    pub channel_base: usize,
    #[arg(long, default_value_t = 512)]
    pub channel_max: usize,
    #[arg(long, default_value_t = 512)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    let stdout = &mut std::io::stdout();
    let result = match &cli.command {
        Command::Dream(a) => cmd_dream(a).map(|_| ()),
        Command::Video(a) => cmd_video(a).map(|_| ()),
        Command::Inspect(a) => cmd_inspect(a, stdout),
        Command::Logits(a) => cmd_logits(a, stdout),
        Command::Replay(a) => cmd_replay(a).map(|_| ()),
        Command::RandomWeights(a) => cmd_random_weights(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// A weights file read once, with the digest of its exact bytes.
pub struct LoadedWeights {
    pub graph: DiscriminatorGraph,
    pub reference: WeightsRef,
}

pub fn load_weights_file(path: &Path) -> Result<LoadedWeights> {
    let bytes = read_file(path).map_err(runtime)?;
    let (_, graph) =
        decode_weights(&bytes).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    Ok(LoadedWeights {
        graph,
        reference: WeightsRef {
            path: path.display().to_string(),
            sha256: weights_digest(&bytes),
        },
    })
}

fn unknown_layer(name: &str, arch: &ArchConfig) -> CliError {
    let valid: Vec<String> = arch.layer_names().iter().map(ToString::to_string).collect();
    CliError::Usage(format!(
        "unknown layer `{name}` for a {}px model; valid layers: {}",
        arch.img_resolution,
        valid.join(", ")
    ))
}

/// Builds the tap set from `--layers` / `--layer-weights`.
pub fn parse_taps(layers: &[String], weights: &[f32], arch: &ArchConfig) -> Result<TapSet> {
    if !weights.is_empty() && weights.len() != layers.len() {
        return Err(usage(format!(
            "--layer-weights has {} entries for {} layers",
            weights.len(),
            layers.len()
        )));
    }
    let mut taps = Vec::with_capacity(layers.len());
    for (i, raw) in layers.iter().enumerate() {
        let name = raw.trim();
        let layer: LayerName = name.parse().map_err(|_| unknown_layer(name, arch))?;
        if !arch.contains(layer) {
            return Err(unknown_layer(name, arch));
        }
        taps.push(Tap {
            layer,
            weight: weights.get(i).copied().unwrap_or(1.0),
        });
    }
    let taps = TapSet::new(taps).map_err(usage)?;
    taps.validate_for(arch).map_err(usage)?;
    Ok(taps)
}

/// Loads and resizes the start image, or draws seeded noise.
pub fn prepare_start(
    start_image: Option<&Path>,
    seed: u64,
    arch: &ArchConfig,
) -> Result<(ImageBuffer, StartSource)> {
    let r = arch.img_resolution;
    let Some(path) = start_image else {
        return Ok((
            random_start(seed, arch.img_channels, r, r),
            StartSource::Noise { seed },
        ));
    };
    if arch.img_channels != 3 {
        return Err(usage(format!(
            "start images are RGB but the model expects {} channels",
            arch.img_channels
        )));
    }
    let bytes = fs::read(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let img = load_rgb(path).map_err(runtime)?;
    let img = if (img.height(), img.width()) == (r, r) {
        img
    } else {
        let t = bilinear_resize(img.tensor(), r, r).map_err(runtime)?;
        ImageBuffer::clamped(t).map_err(runtime)?
    };
    let source = StartSource::Image {
        path: path.display().to_string(),
        sha256: weights_digest(&bytes),
    };
    Ok((img, source))
}

fn dream_config(a: &DreamArgs, arch: &ArchConfig) -> Result<DreamConfig> {
    let mut cfg = DreamConfig::new(parse_taps(&a.layers, &a.layer_weights, arch)?);
    cfg.norm = a.norm;
    cfg.octaves = a.octaves;
    cfg.octave_scale = a.octave_scale;
    cfg.learning_rate = a.lr;
    cfg.iterations = a.iterations;
    cfg.resize_octaves = !a.no_resize_octaves;
    cfg.seed = a.seed.unwrap_or(0);
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))
}

fn run_dream(
    g: &DiscriminatorGraph,
    start: &ImageBuffer,
    m: &Manifest,
    out_dir: &Path,
) -> Result<PathBuf> {
    create_dir(out_dir)?;
    m.write(&out_dir.join(MANIFEST_FILE)).map_err(runtime)?;
    let out = dream(g, start, &m.dream).map_err(runtime)?;
    let path = out_dir.join(DREAM_FILE);
    save_png(&out, &path).map_err(runtime)?;
    info!("wrote {}", path.display());
    Ok(path)
}

fn run_video(
    g: &DiscriminatorGraph,
    start: &ImageBuffer,
    m: &Manifest,
    settings: &VideoSettings,
    out_dir: &Path,
) -> Result<usize> {
    let vcfg = VideoConfig {
        settings: settings.clone(),
        dream: m.dream.clone(),
        out_dir: out_dir.to_path_buf(),
    };
    render_video(g, start, &vcfg, &m.provenance()).map_err(runtime)
}

/// Dreams one image into `out_dir/dream.png`; returns its path.
pub fn cmd_dream(a: &DreamArgs) -> Result<PathBuf> {
    let w = load_weights_file(&a.weights)?;
    let arch = *w.graph.arch();
    let cfg = dream_config(a, &arch)?;
    let (start, source) = prepare_start(a.start_image.as_deref(), cfg.seed, &arch)?;
    let prov = Provenance {
        weights: w.reference,
        start: source,
    };
    let m = Manifest::new(&prov, arch, cfg, None);
    run_dream(&w.graph, &start, &m, &a.out_dir)
}

fn video_settings(a: &VideoArgs) -> Result<VideoSettings> {
    let fill: [f32; 3] = a
        .fill
        .as_slice()
        .try_into()
        .map_err(|_| usage(format!("--fill needs 3 values, got {}", a.fill.len())))?;
    if fill.iter().any(|v| !(-1.0..=1.0).contains(v)) {
        return Err(usage("--fill values must lie in [-1, 1]"));
    }
    let s = VideoSettings {
        fps: a.fps,
        duration_sec: a.duration,
        iterations_per_frame: a.iterations_per_frame,
        transform: FrameTransform {
            zoom_px: a.zoom_px,
            rotate_deg: a.rotate_deg,
            translate_px: (a.tx_px, a.ty_px),
            fill,
        },
        reverse: a.reverse,
    };
    s.validate().map_err(usage)?;
    Ok(s)
}

/// Renders frames into `out_dir`; returns the frame count.
pub fn cmd_video(a: &VideoArgs) -> Result<usize> {
    let settings = video_settings(a)?;
    let w = load_weights_file(&a.dream.weights)?;
    let arch = *w.graph.arch();
    let cfg = dream_config(&a.dream, &arch)?;
    let r = arch.img_resolution;
    settings.transform.validate(r, r).map_err(usage)?;
    let (start, source) = prepare_start(a.dream.start_image.as_deref(), cfg.seed, &arch)?;
    let prov = Provenance {
        weights: w.reference,
        start: source,
    };
    let m = Manifest::new(&prov, arch, cfg, Some(settings.clone()));
    run_video(&w.graph, &start, &m, &settings, &a.dream.out_dir)
}

pub fn cmd_inspect(a: &InspectArgs, out: &mut impl Write) -> Result<()> {
    let w = load_weights_file(&a.weights)?;
    write_summary(&w, out).map_err(runtime)
}

fn write_summary(w: &LoadedWeights, out: &mut impl Write) -> std::io::Result<()> {
    let g = &w.graph;
    let a = g.arch();
    let r = a.img_resolution;
    writeln!(
        out,
        "weights: {} (sha256 {})",
        w.reference.path, w.reference.sha256
    )?;
    writeln!(
        out,
        "resolution {r}, {} input channels, channel_base {}, channel_max {}, mbstd group {}, latent dim {}",
        a.img_channels, a.channel_base, a.channel_max, a.mbstd_group, a.latent_dim
    )?;
    let blocks: Vec<String> = a.block_resolutions().map(|b| format!("b{b}")).collect();
    writeln!(
        out,
        "blocks: {} ({}) + b4 head",
        a.num_blocks(),
        blocks.join(" ")
    )?;
    writeln!(out, "b4.fc output width: {}", a.latent_dim)?;
    writeln!(out)?;
    writeln!(
        out,
        "{:<14} {:<22} min input",
        "layer", "output at native size"
    )?;
    for layer in a.layer_names() {
        let shape = format!("{:?}", g.layer_output_shape(layer, r));
        writeln!(
            out,
            "{:<14} {:<22} {}",
            layer.to_string(),
            shape,
            a.min_input_size(layer)
        )?;
    }
    writeln!(out)?;
    writeln!(out, "parameters: {}", g.parameter_count())?;
    for spec in parameter_specs(a) {
        writeln!(out, "  {:<22} {:?}", spec.name, spec.shape)?;
    }
    Ok(())
}

fn read_raw_batch(path: &Path, arch: &ArchConfig) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let r = arch.img_resolution;
    let per = arch.img_channels * r * r * 4;
    if bytes.is_empty() || bytes.len() % per != 0 {
        return Err(runtime(format!(
            "{}: {} bytes is not a whole number of {}x{r}x{r} f32 images",
            path.display(),
            bytes.len(),
            arch.img_channels
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    Tensor::from_vec(vec![bytes.len() / per, arch.img_channels, r, r], data).map_err(runtime)
}

/// Writes `{"weights_sha256", "seeds"?, "logits"}` as one JSON line.
pub fn cmd_logits(a: &LogitsArgs, out: &mut impl Write) -> Result<()> {
    let w = load_weights_file(&a.weights)?;
    let arch = *w.graph.arch();
    let r = arch.img_resolution;
    let (batch, seeds) = match &a.raw {
        Some(path) => (read_raw_batch(path, &arch)?, None),
        None => {
            if a.count == 0 {
                return Err(usage("--count must be at least 1"));
            }
            let seeds: Vec<u64> = (0..a.count as u64).map(|i| a.seed + i).collect();
            let mut data = Vec::with_capacity(a.count * arch.img_channels * r * r);
            for &s in &seeds {
                data.extend_from_slice(random_start(s, arch.img_channels, r, r).data());
            }
            let t =
                Tensor::from_vec(vec![a.count, arch.img_channels, r, r], data).map_err(runtime)?;
            (t, Some(seeds))
        }
    };
    // One image at a time so minibatch statistics never mix probes.
    let plane = arch.img_channels * r * r;
    let mut logits = Vec::with_capacity(batch.shape()[0]);
    for img in batch.data().chunks_exact(plane) {
        let x =
            Tensor::from_vec(vec![1, arch.img_channels, r, r], img.to_vec()).map_err(runtime)?;
        logits.extend(w.graph.logits(&x).map_err(runtime)?);
    }
    let mut doc = serde_json::json!({
        "weights_sha256": w.reference.sha256,
        "logits": logits,
    });
    if let Some(seeds) = seeds {
        doc["seeds"] = serde_json::json!(seeds);
    }
    writeln!(out, "{doc}").map_err(runtime)
}

fn check_digest(what: &str, path: &str, want: &str, bytes: &[u8]) -> Result<()> {
    let got = weights_digest(bytes);
    if got != want {
        return Err(runtime(format!(
            "{what} {path} has sha256 {got}, manifest records {want}"
        )));
    }
    Ok(())
}

/// Re-runs a manifest into `out_dir`. The weights and any start image must
/// still have their recorded digests.
pub fn cmd_replay(a: &ReplayArgs) -> Result<PathBuf> {
    let m = Manifest::read(&a.manifest).map_err(runtime)?;
    let weights_path = a
        .weights
        .clone()
        .unwrap_or_else(|| PathBuf::from(&m.weights.path));
    let w = load_weights_file(&weights_path)?;
    check_digest(
        "weights",
        &m.weights.path,
        &m.weights.sha256,
        &read_file(&weights_path).map_err(runtime)?,
    )?;
    if *w.graph.arch() != m.arch {
        return Err(runtime("weights architecture differs from the manifest"));
    }
    let start = match &m.start {
        StartSource::Noise { seed } => prepare_start(None, *seed, &m.arch)?.0,
        StartSource::Image { path, sha256 } => {
            let p = Path::new(path);
            check_digest(
                "start image",
                path,
                sha256,
                &fs::read(p).map_err(|e| runtime(format!("{path}: {e}")))?,
            )?;
            prepare_start(Some(p), 0, &m.arch)?.0
        }
    };
    match (m.run, &m.video) {
        (RunKind::Dream, _) => run_dream(&w.graph, &start, &m, &a.out_dir),
        (RunKind::Video, Some(settings)) => {
            run_video(&w.graph, &start, &m, settings, &a.out_dir)?;
            Ok(a.out_dir.clone())
        }
        (RunKind::Video, None) => Err(runtime("video manifest has no video settings")),
    }
}

pub fn cmd_random_weights(a: &RandomWeightsArgs) -> Result<()> {
    let cfg = ArchConfig::new(a.resolution)
        .with_channels(a.channel_base, a.channel_max)
        .with_latent_dim(a.latent_dim);
    let g = random_weights(&cfg, a.seed).map_err(usage)?;
    write_weights(&g, &a.out).map_err(runtime)
}
