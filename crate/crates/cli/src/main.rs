//! `metricseg`: metric-graph instance segmentation from the command line.
//!
//! Subcommands compose through NPY/JSON files; every run is deterministic
//! given its flags and seed, down to the output bytes.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use metricseg::{
    boundary_exclusion_mask, build_metric_graph, connected_components, evaluate, fit_embeddings,
    fit_pca, inject_drift, load_field, load_graph, load_labels, postprocess,
    project_to_metric, render_rgb, save_affinity_graph, save_field, save_labels,
    save_metric_graph, seed_segment, voronoi_labels, write_json, Connectivity, EdgeOffset, Error,
    EvalReport, FitConfig, FitLogEntry, GraphRef, LoadedGraph, LossParams, LossReport,
    ProjectionConfig, ProjectionLogEntry, Result, SegmentationConfig,
};

const EXIT_CODE_HELP: &str = "Exit codes:
  0  success
  1  I/O failure other than a missing input (e.g. unwritable output)
  2  usage error (unknown flag, missing or conflicting argument)
  3  an input file does not exist
  4  malformed input (bad magic, dtype, shape, or JSON)
  5  invalid parameter or non-finite value";

#[derive(Parser)]
#[command(
    name = "metricseg",
    version,
    about = "Instance segmentation via metric graphs over per-pixel embeddings",
    after_help = EXIT_CODE_HELP
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic Voronoi ground-truth label map
    Synth(SynthArgs),
    /// Fit per-pixel embeddings to a label map with the discriminative loss
    Fit(FitArgs),
    /// Segment by thresholded connected components on a metric or affinity graph
    SegmentCc(SegmentCcArgs),
    /// Segment by assigning pixels to the nearest ground-truth mean embedding
    SegmentSeed(SegmentSeedArgs),
    /// Project an affinity graph onto a metric graph by fitting embeddings
    Project(ProjectArgs),
    /// Score a predicted segmentation against ground truth (Rand F, VI)
    Evaluate(EvaluateArgs),
    /// Render a vector field to a PNG via PCA projection
    Visualize(VisualizeArgs),
    /// synth -> fit -> segment-cc -> evaluate in one deterministic run
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Grid height in pixels
    #[arg(long, default_value_t = 64)]
    height: usize,
    /// Grid width in pixels
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Number of Voronoi objects
    #[arg(long, default_value_t = 8)]
    objects: usize,
    /// Site placement seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output label map (NPY, u32)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Ground-truth label map (NPY, u32)
    #[arg(long)]
    labels: PathBuf,
    /// Output embedding field (NPY, f32)
    #[arg(long)]
    out: PathBuf,
    /// Optional training log (JSON)
    #[arg(long)]
    log: Option<PathBuf>,
    /// Embedding dimension
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// Hinge margin between object mean embeddings
    #[arg(long, default_value_t = 1.5)]
    delta_d: f64,
    /// Weight of the mean-norm regularizer
    #[arg(long, default_value_t = 0.001)]
    gamma: f64,
    /// Adam learning rate
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    /// Iteration budget
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
    /// Embedding initialization seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gaussian initialization scale
    #[arg(long, default_value_t = 0.1)]
    init_scale: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConnectivityArg {
    Four,
    Eight,
}

impl From<ConnectivityArg> for Connectivity {
    fn from(c: ConnectivityArg) -> Self {
        match c {
            ConnectivityArg::Four => Connectivity::Four,
            ConnectivityArg::Eight => Connectivity::Eight,
        }
    }
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct GraphSource {
    /// Embedding field (NPY, f32) whose L1 metric graph to threshold
    #[arg(long)]
    field: Option<PathBuf>,
    /// Precomputed graph: NPY plus its JSON sidecar naming kind and offsets
    #[arg(long)]
    graph: Option<PathBuf>,
}

#[derive(Args)]
struct SegmentCcArgs {
    #[command(flatten)]
    source: GraphSource,
    /// Output segmentation (NPY, u32)
    #[arg(long)]
    out: PathBuf,
    /// Join edges with distance strictly below this (metric graphs)
    #[arg(long, default_value_t = 1.5)]
    distance_threshold: f64,
    /// Join edges with affinity strictly above this (affinity graphs)
    #[arg(long, default_value_t = 0.5)]
    affinity_threshold: f64,
    /// Remove segments of at most this many pixels before dilation
    #[arg(long, default_value_t = 1)]
    min_size: usize,
    /// Maximum synchronous dilation rounds filling removed pixels
    #[arg(long, default_value_t = 10)]
    max_dilation: usize,
    /// Neighbor channels consulted when joining
    #[arg(long, value_enum, default_value_t = ConnectivityArg::Four)]
    connectivity: ConnectivityArg,
}

#[derive(Args)]
struct SegmentSeedArgs {
    /// Embedding field (NPY, f32)
    #[arg(long)]
    field: PathBuf,
    /// Ground-truth label map supplying the seed means (NPY, u32)
    #[arg(long)]
    gt: PathBuf,
    /// Output segmentation (NPY, u32)
    #[arg(long)]
    out: PathBuf,
    /// Remove segments of at most this many pixels before dilation
    #[arg(long, default_value_t = 1)]
    min_size: usize,
    /// Maximum synchronous dilation rounds filling removed pixels
    #[arg(long, default_value_t = 10)]
    max_dilation: usize,
}

#[derive(Args)]
struct ProjectArgs {
    /// Target affinity graph: NPY plus its JSON sidecar
    #[arg(long)]
    graph: PathBuf,
    /// Output fitted embedding field (NPY, f32)
    #[arg(long)]
    out_field: PathBuf,
    /// Optional output metric graph derived from the fitted field
    #[arg(long)]
    out_metric: Option<PathBuf>,
    /// Optional output affinity graph derived from the fitted field
    #[arg(long)]
    out_affinity: Option<PathBuf>,
    /// Optional residual log (JSON)
    #[arg(long)]
    log: Option<PathBuf>,
    /// Dimension of the fitted embedding vectors
    #[arg(long, default_value_t = 3)]
    embed_dim: usize,
    /// Maximum |dy|, |dx| accepted in the target's offsets
    #[arg(long, default_value_t = 32)]
    max_radius: i32,
    /// Adam learning rate
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    /// Iteration budget
    #[arg(long, default_value_t = 5000)]
    max_iters: usize,
    /// Embedding initialization seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gaussian initialization scale
    #[arg(long, default_value_t = 0.5)]
    init_scale: f64,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predicted segmentation (NPY, u32)
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth label map (NPY, u32)
    #[arg(long)]
    gt: PathBuf,
    /// Chebyshev radius of the excluded band around ground-truth boundaries
    #[arg(long, default_value_t = 2)]
    exclusion_radius: usize,
    /// Optional output report (JSON)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VisualizeArgs {
    /// Embedding field (NPY, f32)
    #[arg(long)]
    field: PathBuf,
    /// Output image (PNG)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    /// Directory for all outputs (created if missing)
    #[arg(long)]
    outdir: PathBuf,
    /// Grid height in pixels
    #[arg(long, default_value_t = 64)]
    height: usize,
    /// Grid width in pixels
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Number of Voronoi objects
    #[arg(long, default_value_t = 8)]
    objects: usize,
    /// Embedding dimension
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// Seed for both site placement and embedding initialization
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Hinge margin between object mean embeddings
    #[arg(long, default_value_t = 1.5)]
    delta_d: f64,
    /// Weight of the mean-norm regularizer
    #[arg(long, default_value_t = 0.001)]
    gamma: f64,
    /// Adam learning rate
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    /// Iteration budget for the embedding fit
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
    /// Join edges with distance strictly below this
    #[arg(long, default_value_t = 1.5)]
    distance_threshold: f64,
    /// Remove segments of at most this many pixels before dilation
    #[arg(long, default_value_t = 1)]
    min_size: usize,
    /// Maximum synchronous dilation rounds filling removed pixels
    #[arg(long, default_value_t = 10)]
    max_dilation: usize,
    /// Chebyshev radius of the excluded band around ground-truth boundaries
    #[arg(long, default_value_t = 2)]
    exclusion_radius: usize,
    /// Optionally add sinusoidal drift of this amplitude to one object
    #[arg(long)]
    drift_amplitude: Option<f64>,
    /// Spatial wavelength of the injected drift, in pixels
    #[arg(long, default_value_t = 128.0)]
    drift_wavelength: f64,
    /// Label receiving the drift (default: the largest object)
    #[arg(long)]
    drift_label: Option<u32>,
}

/// Training log written by `fit` and `pipeline`.
#[derive(Serialize)]
struct FitLog<'a> {
    converged: bool,
    final_report: &'a LossReport,
    entries: &'a [FitLogEntry],
}

/// Residual log written by `project`.
#[derive(Serialize)]
struct ProjectionLog<'a> {
    converged: bool,
    iterations: usize,
    objective: f64,
    entries: &'a [ProjectionLogEntry],
}

/// Condensed fit outcome embedded in the pipeline report.
#[derive(Serialize)]
struct PipelineFitSummary {
    converged: bool,
    iterations: usize,
    num_objects: usize,
    l_int: f64,
    l_ext: f64,
    l_norm: f64,
    total: f64,
}

/// `pipeline`'s report.json: the fit outcome plus the evaluation scores.
#[derive(Serialize)]
struct PipelineReport {
    fit: PipelineFitSummary,
    eval: EvalReport,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 3,
        Error::Io(_) => 1,
        Error::ShapeMismatch(_) | Error::Format(_) | Error::Json(_) => 4,
        Error::InvalidArgument(_) | Error::NonFinite(_) => 5,
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(args) => cmd_synth(args),
        Command::Fit(args) => cmd_fit(args),
        Command::SegmentCc(args) => cmd_segment_cc(args),
        Command::SegmentSeed(args) => cmd_segment_seed(args),
        Command::Project(args) => cmd_project(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Visualize(args) => cmd_visualize(args),
        Command::Pipeline(args) => cmd_pipeline(args),
    }
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let labels = voronoi_labels(args.height, args.width, args.objects, args.seed)?;
    save_labels(&args.out, &labels)?;
    println!(
        "wrote {} ({}x{}, {} objects)",
        args.out.display(),
        args.height,
        args.width,
        args.objects
    );
    Ok(())
}

fn fit_config(
    dim: usize,
    delta_d: f64,
    gamma: f64,
    lr: f64,
    max_iters: usize,
    seed: u64,
    init_scale: f64,
) -> FitConfig {
    FitConfig {
        max_iters,
        loss: LossParams {
            delta_d,
            gamma,
            dim,
        },
        seed,
        init_scale,
        lr,
        ..FitConfig::default()
    }
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let labels = load_labels(&args.labels)?;
    let config = fit_config(
        args.dim,
        args.delta_d,
        args.gamma,
        args.lr,
        args.max_iters,
        args.seed,
        args.init_scale,
    );
    let result = fit_embeddings(&labels, &config)?;
    save_field(&args.out, &result.field)?;
    if let Some(log_path) = &args.log {
        write_json(
            log_path,
            &FitLog {
                converged: result.converged,
                final_report: &result.report,
                entries: &result.log,
            },
        )?;
    }
    println!(
        "fit: l_int {:.6e}  l_ext {:.6e}  total {:.6e}  iterations {}  converged {}",
        result.report.l_int,
        result.report.l_ext,
        result.report.total,
        result.log.last().map_or(0, |e| e.iteration),
        result.converged
    );
    Ok(())
}

fn nn_offsets_for(connectivity: Connectivity) -> Result<Vec<EdgeOffset>> {
    let mut offs = vec![EdgeOffset::new(0, 1)?, EdgeOffset::new(1, 0)?];
    if connectivity == Connectivity::Eight {
        offs.push(EdgeOffset::new(1, 1)?);
        offs.push(EdgeOffset::new(1, -1)?);
    }
    Ok(offs)
}

fn cmd_segment_cc(args: SegmentCcArgs) -> Result<()> {
    let config = SegmentationConfig {
        distance_threshold: args.distance_threshold,
        affinity_threshold: args.affinity_threshold,
        min_size: args.min_size,
        max_dilation: args.max_dilation,
        connectivity: args.connectivity.into(),
    };

    let components = if let Some(field_path) = &args.source.field {
        let field = load_field(field_path)?;
        let metric = build_metric_graph(&field, &nn_offsets_for(config.connectivity)?)?;
        connected_components(GraphRef::Metric(&metric), &config)?
    } else {
        let path = args.source.graph.as_ref().expect("clap enforces the group");
        match load_graph(path)? {
            LoadedGraph::Metric(g) => connected_components(GraphRef::Metric(&g), &config)?,
            LoadedGraph::Affinity(g) => connected_components(GraphRef::Affinity(&g), &config)?,
        }
    };
    let segmentation = postprocess(&components, &config);
    save_labels(&args.out, &segmentation)?;
    println!(
        "wrote {} ({} segments)",
        args.out.display(),
        segmentation.positive_labels().len()
    );
    Ok(())
}

fn cmd_segment_seed(args: SegmentSeedArgs) -> Result<()> {
    let field = load_field(&args.field)?;
    let gt = load_labels(&args.gt)?;
    let seeded = seed_segment(&field, &gt)?;
    let post_config = SegmentationConfig {
        min_size: args.min_size,
        max_dilation: args.max_dilation,
        ..SegmentationConfig::default()
    };
    let segmentation = postprocess(&seeded, &post_config);
    save_labels(&args.out, &segmentation)?;
    println!(
        "wrote {} ({} segments)",
        args.out.display(),
        segmentation.positive_labels().len()
    );
    Ok(())
}

fn cmd_project(args: ProjectArgs) -> Result<()> {
    let target = match load_graph(&args.graph)? {
        LoadedGraph::Affinity(g) => g,
        LoadedGraph::Metric(_) => {
            return Err(Error::InvalidArgument(format!(
                "{} is a metric graph; project expects an affinity graph \
                 (convert with affinity = exp(-distance) upstream)",
                args.graph.display()
            )))
        }
    };
    let config = ProjectionConfig {
        embed_dim: args.embed_dim,
        max_radius: args.max_radius,
        lr: args.lr,
        max_iters: args.max_iters,
        seed: args.seed,
        init_scale: args.init_scale,
        ..ProjectionConfig::default()
    };
    let result = project_to_metric(&target, &config)?;
    save_field(&args.out_field, &result.field)?;
    if let Some(path) = &args.out_metric {
        save_metric_graph(path, &result.metric)?;
    }
    if let Some(path) = &args.out_affinity {
        save_affinity_graph(path, &result.affinity)?;
    }
    if let Some(path) = &args.log {
        write_json(
            path,
            &ProjectionLog {
                converged: result.converged,
                iterations: result.iterations,
                objective: result.objective,
                entries: &result.log,
            },
        )?;
    }
    println!(
        "project: objective {:.6e}  iterations {}  converged {}",
        result.objective, result.iterations, result.converged
    );
    Ok(())
}

fn print_eval_table(report: &EvalReport) {
    println!("metric             value");
    println!("rand_f            {:.6}", report.rand_f);
    println!("rand_merge        {:.6}", report.rand_merge);
    println!("rand_split        {:.6}", report.rand_split);
    println!("vi_total          {:.6}", report.vi_total);
    println!("vi_merge          {:.6}", report.vi_merge);
    println!("vi_split          {:.6}", report.vi_split);
    println!("evaluated_pixels  {}", report.evaluated_pixels);
    println!("excluded_pixels   {}", report.excluded_pixels);
    println!("pred_segments     {}", report.num_pred_segments);
    println!("gt_segments       {}", report.num_gt_segments);
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let pred = load_labels(&args.pred)?;
    let gt = load_labels(&args.gt)?;
    let mask = boundary_exclusion_mask(&gt, args.exclusion_radius);
    let report = evaluate(&pred, &gt, &mask)?;
    print_eval_table(&report);
    if let Some(path) = &args.out {
        write_json(path, &report)?;
    }
    Ok(())
}

fn cmd_visualize(args: VisualizeArgs) -> Result<()> {
    let field = load_field(&args.field)?;
    let model = fit_pca(&field)?;
    let image = render_rgb(&field, &model)?;
    image.save(&args.out).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::Io(io),
        other => Error::InvalidArgument(format!("could not encode image: {other}")),
    })?;
    if model.padded {
        println!(
            "wrote {} (field has fewer than 3 dimensions; missing channels are constant)",
            args.out.display()
        );
    } else {
        println!("wrote {}", args.out.display());
    }
    Ok(())
}

fn cmd_pipeline(args: PipelineArgs) -> Result<()> {
    std::fs::create_dir_all(&args.outdir)?;
    let labels_path = args.outdir.join("labels.npy");
    let field_path = args.outdir.join("field.npy");
    let fit_log_path = args.outdir.join("fit-log.json");
    let seg_path = args.outdir.join("seg.npy");
    let report_path = args.outdir.join("report.json");

    let labels = voronoi_labels(args.height, args.width, args.objects, args.seed)?;
    save_labels(&labels_path, &labels)?;

    let config = fit_config(
        args.dim,
        args.delta_d,
        args.gamma,
        args.lr,
        args.max_iters,
        args.seed,
        0.1,
    );
    let fit = fit_embeddings(&labels, &config)?;
    let mut field = fit.field;
    if let Some(amplitude) = args.drift_amplitude {
        let target = match args.drift_label {
            Some(l) => l,
            None => *labels
                .sizes()
                .iter()
                .max_by_key(|(_, &size)| size)
                .map(|(l, _)| l)
                .expect("voronoi maps always have objects"),
        };
        inject_drift(
            &mut field,
            &labels,
            target,
            amplitude,
            args.drift_wavelength,
        )?;
    }
    save_field(&field_path, &field)?;
    write_json(
        &fit_log_path,
        &FitLog {
            converged: fit.converged,
            final_report: &fit.report,
            entries: &fit.log,
        },
    )?;

    let seg_config = SegmentationConfig {
        distance_threshold: args.distance_threshold,
        min_size: args.min_size,
        max_dilation: args.max_dilation,
        ..SegmentationConfig::default()
    };
    let metric = build_metric_graph(&field, &nn_offsets_for(seg_config.connectivity)?)?;
    let components = connected_components(GraphRef::Metric(&metric), &seg_config)?;
    let segmentation = postprocess(&components, &seg_config);
    save_labels(&seg_path, &segmentation)?;

    let mask = boundary_exclusion_mask(&labels, args.exclusion_radius);
    let eval = evaluate(&segmentation, &labels, &mask)?;
    let report = PipelineReport {
        fit: PipelineFitSummary {
            converged: fit.converged,
            iterations: fit.log.last().map_or(0, |e| e.iteration),
            num_objects: fit.report.num_objects,
            l_int: fit.report.l_int,
            l_ext: fit.report.l_ext,
            l_norm: fit.report.l_norm,
            total: fit.report.total,
        },
        eval,
    };
    write_json(&report_path, &report)?;

    println!(
        "pipeline: l_int {:.6e}  l_ext {:.6e}  rand_f {:.6}  vi {:.6}",
        report.fit.l_int, report.fit.l_ext, report.eval.rand_f, report.eval.vi_total
    );
    print_eval_table(&report.eval);
    Ok(())
}
