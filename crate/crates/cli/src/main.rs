//! `dense-ddu`: fit feature densities, export uncertainty maps and score them.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dense_ddu::eval::{Aggregation, PatchConfig, ThresholdMode};
use dense_ddu::gda::{CovarianceMode, FitOptions, GdaModel, DEFAULT_JITTER_LADDER};
use dense_ddu::io::{self, DatasetManifest};
use dense_ddu::pipeline::{self, EvalSettings, Measure, RenderSettings};
use dense_ddu::render::Normalization;
use dense_ddu::synth::{self, SynthSpec};
use dense_ddu::{parallel, Error, ErrorKind, Result, Source};
use serde_json::{json, Value};

use config::{pick, resolve_workers, FileConfig, WORKERS_ENV};

#[derive(Parser, Debug)]
#[command(name = "dense-ddu", version, about = "Feature-density and softmax uncertainty for dense prediction")]
struct Cli {
    /// Worker threads (default: all cores). Also read from DENSE_DDU_WORKERS.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// JSON file with default settings; flags and environment take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one Gaussian per class over all labelled pixels.
    Fit(FitArgs),
    /// Write per-image feature log-density maps.
    Density(DensityArgs),
    /// Write per-image softmax entropy, predictive entropy or mutual information maps.
    Entropy(EntropyArgs),
    /// Patch metrics over an uncertainty threshold sweep, plus mIoU and OoD AUROC.
    Evaluate(EvaluateArgs),
    /// Class-mean distance matrices between pixel locations.
    Distances(DistancesArgs),
    /// Generate a synthetic dataset from known class Gaussians.
    Synth(SynthArgs),
    /// Render a map, a directory of maps or a distance matrix as grayscale images.
    Render(RenderArgs),
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output model archive (.npz).
    #[arg(long)]
    out: PathBuf,
    /// full, diagonal or tied.
    #[arg(long)]
    covariance: Option<CovarianceMode>,
    /// Comma-separated jitter multipliers, tried in order.
    #[arg(long, value_delimiter = ',')]
    jitter_ladder: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct DensityArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EntropyArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// entropy, pe or mi.
    #[arg(long)]
    measure: Option<Measure>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory of `<image_id>.npy` maps with `<image_id>.json` sidecars.
    #[arg(long)]
    maps: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Defaults to 1 (every window position).
    #[arg(long)]
    stride: Option<usize>,
    /// mean, max or median.
    #[arg(long)]
    aggregation: Option<Aggregation>,
    /// quantile or absolute.
    #[arg(long)]
    threshold_mode: Option<ThresholdMode>,
    #[arg(long)]
    points: Option<usize>,
    /// Source assumed for maps without a sidecar.
    #[arg(long, value_parser = parse_source)]
    source: Option<Source>,
}

#[derive(Args, Debug)]
struct DistancesArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Pixel coordinate `i,j`; repeat for more. Defaults to the opposite corners of the first image.
    #[arg(long = "coord", value_parser = parse_coord)]
    coords: Vec<(usize, usize)>,
    /// Heatmap pixels per matrix entry.
    #[arg(long)]
    cell: Option<usize>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// JSON generator spec.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RenderArgs {
    /// A `.npy` map, a `.csv` distance matrix or a directory of maps.
    #[arg(long)]
    input: PathBuf,
    /// Output image (.png or .pgm), or a directory when the input is one.
    #[arg(long)]
    out: PathBuf,
    /// Clamp to the `lo,hi` quantiles instead of the min and max.
    #[arg(long, value_parser = parse_quantiles)]
    quantile: Option<(f64, f64)>,
    /// Use one range for all maps of a directory.
    #[arg(long)]
    global: bool,
    #[arg(long)]
    cell: Option<usize>,
    #[arg(long, value_parser = parse_source)]
    source: Option<Source>,
}

fn parse_source(s: &str) -> std::result::Result<Source, String> {
    serde_json::from_value(Value::String(s.to_string()))
        .map_err(|_| format!("unknown source `{s}` (entropy, pe, mi, log-density, neg-log-density)"))
}

fn parse_pair<T: std::str::FromStr>(s: &str) -> std::result::Result<(T, T), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `a,b`, got `{s}`"))?;
    let a = a.trim().parse().map_err(|_| format!("bad value `{a}`"))?;
    let b = b.trim().parse().map_err(|_| format!("bad value `{b}`"))?;
    Ok((a, b))
}

fn parse_coord(s: &str) -> std::result::Result<(usize, usize), String> {
    parse_pair(s)
}

fn parse_quantiles(s: &str) -> std::result::Result<(f64, f64), String> {
    parse_pair(s)
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Format => 3,
        ErrorKind::Numerical => 4,
        ErrorKind::Io => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dense-ddu: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let workers = resolve_workers(cli.workers, std::env::var(WORKERS_ENV).ok(), file.workers)?;
    parallel::with_workers(workers, || dispatch(cli.command, &file))
}

fn dispatch(command: Command, file: &FileConfig) -> Result<()> {
    match command {
        Command::Fit(a) => fit(a, file),
        Command::Density(a) => density(a),
        Command::Entropy(a) => entropy(a, file),
        Command::Evaluate(a) => evaluate(a, file),
        Command::Distances(a) => distances(a, file),
        Command::Synth(a) => synth_cmd(a),
        Command::Render(a) => render(a, file),
    }
}

fn fit(a: FitArgs, file: &FileConfig) -> Result<()> {
    let opts = FitOptions {
        covariance: pick(a.covariance, file.covariance, CovarianceMode::Full),
        jitter_ladder: pick(a.jitter_ladder, file.jitter_ladder.clone(), DEFAULT_JITTER_LADDER.to_vec()),
    };
    let manifest = DatasetManifest::load(&a.manifest)?;
    let settings = json!({ "command": "fit", "covariance": opts.covariance, "jitter_ladder": opts.jitter_ladder });
    let model = pipeline::fit_manifest(&manifest, &opts, settings)?;
    model.save(&a.out)?;
    report_fit(&model);
    Ok(())
}

fn report_fit(model: &GdaModel) {
    let meta = model.metadata();
    println!("class\tpixels\tjitter");
    let mut fitted = model.components().iter().zip(&meta.jitter).peekable();
    for (c, n) in meta.pixel_counts.iter().enumerate() {
        match fitted.peek() {
            Some((g, j)) if g.class_id == c => {
                println!("{c}\t{n}\t{j:e}");
                fitted.next();
            }
            _ => println!("{c}\t{n}\tdropped"),
        }
    }
    if !meta.degenerate_classes.is_empty() {
        println!("degenerate (fewer than D+1 pixels): {:?}", meta.degenerate_classes);
    }
}

fn density(a: DensityArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let model = GdaModel::load(&a.model)?;
    let rec = pipeline::density_maps(&manifest, &model, &a.out, json!({ "command": "density" }))?;
    println!("wrote {} log-density maps to {}", rec.image_ids.len(), a.out.display());
    Ok(())
}

fn entropy(a: EntropyArgs, file: &FileConfig) -> Result<()> {
    let measure = pick(a.measure, file.measure, Measure::Entropy);
    let manifest = DatasetManifest::load(&a.manifest)?;
    let rec = pipeline::entropy_maps(&manifest, measure, &a.out, json!({ "command": "entropy", "measure": measure }))?;
    println!("wrote {} {} maps to {}", rec.image_ids.len(), measure.source().as_str(), a.out.display());
    Ok(())
}

fn evaluate(a: EvaluateArgs, file: &FileConfig) -> Result<()> {
    let window = pick(a.window, file.window, 1);
    let cfg = EvalSettings {
        patch: PatchConfig {
            window,
            alpha: pick(a.alpha, file.alpha, 0.5),
            stride: pick(a.stride, file.stride, 1),
            aggregation: pick(a.aggregation, file.aggregation, Aggregation::Mean),
        },
        mode: pick(a.threshold_mode, file.threshold_mode, ThresholdMode::Quantile),
        points: pick(a.points, file.points, 20),
        default_source: a.source.or(file.source),
    };
    let manifest = DatasetManifest::load(&a.manifest)?;
    let settings = json!({ "command": "evaluate", "evaluation": cfg });
    let ev = pipeline::evaluate(&manifest, &a.maps, &cfg, settings)?;
    pipeline::write_evaluation(&a.out, &ev)?;
    let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.4}"));
    println!("mIoU {}", fmt(ev.summary.miou.miou));
    if let Some(auc) = ev.summary.ood_auroc {
        println!("OoD AUROC {auc:.4}");
    }
    println!("wrote {} curve points to {}", ev.curve.points.len(), a.out.display());
    Ok(())
}

fn default_coords(manifest: &DatasetManifest) -> Result<Vec<(usize, usize)>> {
    let first = manifest
        .entries
        .first()
        .ok_or_else(|| Error::Config("manifest has no entries".into()))?;
    let path = first
        .label_path
        .as_ref()
        .ok_or_else(|| Error::Config(format!("entry `{}` has no label_path", first.image_id)))?;
    let (_, shape) = io::read_header(&manifest.resolve(path))?;
    match shape[..] {
        [h, w] if h > 0 && w > 0 => Ok(vec![(0, 0), (h - 1, w - 1)]),
        _ => Err(Error::Validation(format!("labels of `{}` have shape {shape:?}", first.image_id))),
    }
}

fn distances(a: DistancesArgs, file: &FileConfig) -> Result<()> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let coords = if !a.coords.is_empty() {
        a.coords
    } else if let Some(c) = &file.coords {
        c.clone()
    } else {
        default_coords(&manifest)?
    };
    let cell = pick(a.cell, file.cell, 16);
    if cell == 0 {
        return Err(Error::Config("cell must be at least 1".into()));
    }
    let settings = json!({ "command": "distances", "coords": coords, "cell": cell });
    let report = pipeline::distances(&manifest, &coords, settings)?;
    pipeline::write_distances(&a.out, &report, cell)?;
    for p in &report.pairs {
        let (hits, rows) = p.diagonal_minimum_rows;
        println!("{:?} vs {:?}: diagonal is the row minimum in {hits}/{rows} rows", p.a, p.b);
    }
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.spec).map_err(|e| Error::Io {
        path: a.spec.clone(),
        source: e,
    })?;
    let spec = SynthSpec::from_json(&text)?;
    let manifest = synth::generate(&spec, &a.out)?;
    io::atomic_write(&a.out.join("spec.json"), &io::to_json_bytes(&spec))?;
    println!("wrote {} images to {}", manifest.entries.len(), a.out.display());
    Ok(())
}

fn render(a: RenderArgs, file: &FileConfig) -> Result<()> {
    let normalization = match a.quantile {
        Some((lo, hi)) => Normalization::Quantile { lo, hi },
        None => file.normalization.unwrap_or_default(),
    };
    let cfg = RenderSettings {
        normalization,
        global: a.global || file.global.unwrap_or(false),
        cell: pick(a.cell, file.cell, 16),
        default_source: a.source.or(file.source),
    };
    let written = pipeline::render_path(&a.input, &a.out, &cfg)?;
    println!("wrote {} image(s) under {}", written.len(), a.out.display());
    Ok(())
}
