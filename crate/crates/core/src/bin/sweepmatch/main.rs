//! Command-line front end for the plane-sweep matching pipeline.
//!
//! Subcommands cover the full workflow: synthesize a test scene, extract
//! geometry-aware features, match a stereo pair or a full multi-view set,
//! build ground truth from a point cloud, score a depth map, and train the
//! learned similarity. Exit code 2 flags bad inputs or arguments, 1 flags
//! pipeline failures; errors are written to stderr as one machine-readable
//! line. Set `SWEEPMATCH_LOG=debug` for progress logging.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector2;

use sweepmatch::eval::{evaluate, write_histogram_csv, write_report_csv, EvalReport};
use sweepmatch::features::{
    extract_patch_descriptors, geometry_aware_features, FeatureError, FeatureExtractor,
    FeatureMap,
};
use sweepmatch::fusion::fuse;
use sweepmatch::geometry::{
    estimate_homography, rectify_calibrated, CameraPinhole, Correspondence, DepthSpec,
    GeometryPrior, PlanarTransform, PriorSide, RansacConfig,
};
use sweepmatch::groundtruth::{dense_ground_truth, sparse_ground_truth};
use sweepmatch::io::{
    read_mlpw, read_pfm, read_point_cloud, read_xyz, write_fmap, write_mlpw, write_pfm, FloatMap,
    FormatError,
};
use sweepmatch::planesweep::{RangeKind, SimilarityMode};
use sweepmatch::regularize::{
    hypothesis_step, pyramid_match, ray_depth_to_elevation, FeatureProvider, MatchRequest,
    MatchView,
};
use sweepmatch::scene::{
    depth_to_float, float_to_depth, load_scene, read_manifest, rectified_training_pair,
    synthesize, write_scene, LoadedScene,
};
use sweepmatch::simlearn::{mine_samples, train_mlp, MlpParams};
use sweepmatch::{DepthMap, Error, Image2D, Result};

#[derive(Parser)]
#[command(name = "sweepmatch", version, about = "Multi-view plane-sweep dense image matching")]
struct Cli {
    /// Key-value run configuration file (`key value` per line).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads for cost-volume computation (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a textured terrain scene and write it as a dataset.
    Synth(SynthArgs),
    /// Write geometry-aware feature maps for one reference/query pair.
    Features(FeaturesArgs),
    /// Match the reference view against one query view.
    Match(MatchArgs),
    /// Match the reference view against all query views and fuse.
    Mvs(MvsArgs),
    /// Build a ground-truth depth map from a surveyed point cloud.
    Gt(GtArgs),
    /// Score a depth map against ground truth.
    Eval(EvalArgs),
    /// Train the learned similarity on a synthetic rectified scene.
    MlpTrain(MlpTrainArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Scene seed (overrides `scene.seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of cameras on the strip (overrides `scene.views`).
    #[arg(long)]
    views: Option<usize>,
}

#[derive(Args)]
struct FeaturesArgs {
    /// Dataset manifest.
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Query view index (default: first query in the manifest).
    #[arg(long)]
    query: Option<usize>,
    /// Geometric alignment applied before extraction.
    #[arg(long, value_enum, default_value_t = PriorArg::Epip)]
    prior: PriorArg,
    /// Extra 90-degree rotations applied to the aligned frame.
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=3))]
    rot_align: u8,
    /// Output path for the reference feature map.
    #[arg(long, value_name = "FILE")]
    out_reference: PathBuf,
    /// Output path for the query feature map.
    #[arg(long, value_name = "FILE")]
    out_query: PathBuf,
}

#[derive(Args)]
struct MatchArgs {
    /// Dataset manifest.
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Query view index (default: first query in the manifest).
    #[arg(long)]
    query: Option<usize>,
    /// Geometric alignment for feature extraction at fine levels.
    #[arg(long, value_enum, default_value_t = PriorArg::None)]
    prior: PriorArg,
    /// Extra 90-degree rotations applied to the aligned frame.
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=3))]
    rot_align: u8,
    /// Similarity backend.
    #[arg(long, value_enum, default_value_t = SimArg::Cos)]
    sim: SimArg,
    /// Trained weights (required with --sim mlp).
    #[arg(long, value_name = "FILE")]
    weights: Option<PathBuf>,
    /// Output elevation map (PFM, invalid pixels NaN).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Optional confidence map output (PFM).
    #[arg(long, value_name = "FILE")]
    confidence_out: Option<PathBuf>,
}

#[derive(Args)]
struct MvsArgs {
    /// Dataset manifest.
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Use only the first N query views.
    #[arg(long, value_name = "N")]
    views: Option<usize>,
    /// Early fusion scores all views in one sweep; late fusion merges
    /// pairwise maps afterwards.
    #[arg(long, value_enum, default_value_t = FusionArg::Early)]
    fusion: FusionArg,
    /// Geometric alignment for feature extraction at fine levels.
    #[arg(long, value_enum, default_value_t = PriorArg::None)]
    prior: PriorArg,
    /// Extra 90-degree rotations applied to the aligned frame.
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=3))]
    rot_align: u8,
    /// Similarity backend.
    #[arg(long, value_enum, default_value_t = SimArg::Cos)]
    sim: SimArg,
    /// Trained weights (required with --sim mlp).
    #[arg(long, value_name = "FILE")]
    weights: Option<PathBuf>,
    /// Output elevation map (PFM, invalid pixels NaN).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Optional confidence map output (PFM).
    #[arg(long, value_name = "FILE")]
    confidence_out: Option<PathBuf>,
}

#[derive(Args)]
struct GtArgs {
    /// Dataset manifest (provides the target camera).
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// View index whose camera receives the projection.
    #[arg(long)]
    view: usize,
    /// Point cloud (.xyz text or binary cloud file).
    #[arg(long, value_name = "FILE")]
    cloud: PathBuf,
    /// Keep the sparse per-pixel selection instead of densifying.
    #[arg(long)]
    sparse: bool,
    /// Store terrain elevation instead of ray depth.
    #[arg(long)]
    elevation: bool,
    /// Output map (PFM, invalid pixels NaN).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Depth map under test (PFM, invalid pixels NaN).
    #[arg(long, value_name = "FILE")]
    depth: PathBuf,
    /// Ground-truth map (PFM, invalid pixels NaN).
    #[arg(long, value_name = "FILE")]
    truth: PathBuf,
    /// Ground sampling distance in meters (or use --manifest).
    #[arg(long, value_name = "METERS")]
    gsd: Option<f64>,
    /// Dataset manifest to take the ground sampling distance from.
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
    /// Optional metrics report output (CSV).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Optional cumulative error histogram output (CSV).
    #[arg(long, value_name = "FILE")]
    histogram: Option<PathBuf>,
}

#[derive(Args)]
struct MlpTrainArgs {
    /// Output weights file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Scene and mining seed (overrides `scene.seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of cameras on the training scene (overrides `scene.views`).
    #[arg(long)]
    views: Option<usize>,
    /// Gradient-descent epochs (overrides `train.epochs`).
    #[arg(long)]
    epochs: Option<usize>,
    /// Gradient-descent step size (overrides `train.learning_rate`).
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PriorArg {
    /// No alignment; raw patch descriptors.
    None,
    /// Rectify each reference/query pair onto a shared epipolar frame.
    Epip,
    /// Warp each query onto the reference through a mid-range plane.
    Hom,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimArg {
    /// Re-normalized cosine similarity.
    Cos,
    /// Learned MLP similarity (needs --weights).
    Mlp,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FusionArg {
    Early,
    Late,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("SWEEPMATCH_LOG", "error"),
    )
    .format_timestamp(None)
    .init();
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("sweepmatch-error kind=input message={:?}", e.to_string());
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = error_exit(&e);
            eprintln!("sweepmatch-error kind={kind} message={:?}", e.to_string());
            ExitCode::from(code)
        }
    }
}

fn error_exit(error: &Error) -> (&'static str, u8) {
    if error.is_input_error() {
        ("input", 2)
    } else {
        ("pipeline", 1)
    }
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => config::Config::load(path)?,
        None => config::Config::empty(),
    };
    match &cli.command {
        Command::Synth(args) => synth(args, &mut cfg),
        Command::Features(args) => features(args, &cfg),
        Command::Match(args) => match_pair(args, &cfg),
        Command::Mvs(args) => mvs(args, &cfg),
        Command::Gt(args) => ground_truth(args, &cfg),
        Command::Eval(args) => eval(args, &cfg),
        Command::MlpTrain(args) => mlp_train(args, &mut cfg),
    }
}

fn input_error(message: impl Into<String>) -> Error {
    FormatError::malformed(Path::new("<args>"), message).into()
}

// ---------------------------------------------------------------------------
// synth

fn synth(args: &SynthArgs, cfg: &mut config::Config) -> Result<()> {
    if let Some(seed) = args.seed {
        cfg.set("scene.seed", seed);
    }
    if let Some(views) = args.views {
        cfg.set("scene.views", views);
    }
    let spec = config::scene_spec(cfg)?;
    let scene = synthesize(&spec)?;
    write_scene(&scene, &args.out)?;
    println!(
        "wrote {} views to {} (gsd {:.4} m, elevation range [{:.2}, {:.2}] m, reference view {})",
        scene.views.len(),
        args.out.display(),
        scene.gsd_m,
        scene.z_min,
        scene.z_max,
        scene.reference,
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// priors and feature providers

/// Alignment requested for feature extraction, with everything needed to
/// rebuild it per pyramid level.
struct PriorContext {
    reference: CameraPinhole,
    queries: Vec<CameraPinhole>,
    kind: PriorArg,
    rotation_align: u8,
    mid_elevation: f64,
    radius: usize,
}

impl PriorContext {
    /// Feature extraction for pyramid view `index` (0 = reference, then
    /// queries in order) at the level the image is scaled to.
    fn features(
        &self,
        index: usize,
        image: &Image2D,
    ) -> std::result::Result<FeatureMap, FeatureError> {
        let factor = (self.reference.size().0 / image.width().max(1)).max(1);
        let reference = self.reference.downscaled(factor)?;
        let native_query = if index == 0 {
            &self.queries[0]
        } else {
            &self.queries[index - 1]
        };
        let query = native_query.downscaled(factor)?;
        let side = if index == 0 {
            PriorSide::Reference
        } else {
            PriorSide::Query
        };
        let prior = match self.kind {
            PriorArg::None => None,
            PriorArg::Epip => {
                let pair = rectify_calibrated(&reference, &query)?;
                Some(GeometryPrior::epipolar(
                    pair.transform_a,
                    pair.transform_b,
                    self.rotation_align,
                )?)
            }
            PriorArg::Hom => {
                let transform = mean_plane_homography(&reference, &query, self.mid_elevation)?;
                Some(GeometryPrior::homography(transform, self.rotation_align)?)
            }
        };
        geometry_aware_features(
            image,
            prior.as_ref(),
            side,
            FeatureExtractor::Builtin {
                radius: self.radius,
            },
        )
    }
}

/// Homography that carries query pixels onto the reference through the
/// horizontal plane at `elevation`, fit from a grid of projected samples.
fn mean_plane_homography(
    reference: &CameraPinhole,
    query: &CameraPinhole,
    elevation: f64,
) -> std::result::Result<PlanarTransform, FeatureError> {
    let (qw, qh) = query.size();
    let mut correspondences = Vec::with_capacity(25);
    for iy in 0..5 {
        for ix in 0..5 {
            let pixel = Vector2::new(
                (0.1 + 0.2 * ix as f64) * (qw - 1) as f64,
                (0.1 + 0.2 * iy as f64) * (qh - 1) as f64,
            );
            let Ok(point) = query.backproject(pixel, DepthSpec::Elevation(elevation)) else {
                continue;
            };
            let Ok(projection) = reference.project(&point) else {
                continue;
            };
            correspondences.push(Correspondence::new(pixel, projection.pixel));
        }
    }
    let estimate = estimate_homography(&correspondences, &RansacConfig::default())?;
    Ok(PlanarTransform::homography(
        estimate.matrix,
        query.size(),
        reference.size(),
    )?)
}

/// Builds the per-level feature provider context, or `None` for raw
/// descriptors. Epipolar alignment re-rectifies per pair, so it only fits a
/// single-query sweep.
fn prior_context(
    prior: PriorArg,
    rotation_align: u8,
    scene: &LoadedScene,
    query_cameras: Vec<CameraPinhole>,
    cfg: &config::Config,
) -> Result<Option<PriorContext>> {
    if prior == PriorArg::None {
        return Ok(None);
    }
    if prior == PriorArg::Epip && query_cameras.len() != 1 {
        return Err(input_error(
            "epipolar alignment is pairwise; use --prior hom or late fusion for multi-view",
        ));
    }
    Ok(Some(PriorContext {
        reference: scene.views[scene.reference].camera.clone(),
        queries: query_cameras,
        kind: prior,
        rotation_align,
        mid_elevation: 0.5 * (scene.z_min + scene.z_max),
        radius: config::patch_radius(cfg)?,
    }))
}

// ---------------------------------------------------------------------------
// features

fn features(args: &FeaturesArgs, cfg: &config::Config) -> Result<()> {
    let scene = load_scene(&read_manifest(&args.manifest)?)?;
    let query = resolve_query(&scene, args.query)?;
    let ctx = prior_context(
        args.prior,
        args.rot_align,
        &scene,
        vec![scene.views[query].camera.clone()],
        cfg,
    )?;
    let (reference_map, query_map) = match &ctx {
        Some(ctx) => (
            ctx.features(0, &scene.views[scene.reference].image)?,
            ctx.features(1, &scene.views[query].image)?,
        ),
        None => {
            let radius = config::patch_radius(cfg)?;
            (
                extract_patch_descriptors(&scene.views[scene.reference].image, radius)?,
                extract_patch_descriptors(&scene.views[query].image, radius)?,
            )
        }
    };
    write_fmap(&args.out_reference, &reference_map)?;
    write_fmap(&args.out_query, &query_map)?;
    println!(
        "wrote {} ({}x{}x{}) and {} ({}x{}x{})",
        args.out_reference.display(),
        reference_map.width(),
        reference_map.height(),
        reference_map.channels(),
        args.out_query.display(),
        query_map.width(),
        query_map.height(),
        query_map.channels(),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// match / mvs

/// Picks the query view: an explicit index (validated), else the manifest's
/// first listed pair, else the first non-reference view.
fn resolve_query(scene: &LoadedScene, requested: Option<usize>) -> Result<usize> {
    match requested {
        Some(index) => {
            if index >= scene.views.len() {
                return Err(input_error(format!(
                    "query view {index} is out of range (dataset has {} views)",
                    scene.views.len()
                )));
            }
            if index == scene.reference {
                return Err(input_error(format!(
                    "view {index} is the reference view; pick a query view"
                )));
            }
            Ok(index)
        }
        None => scene
            .pairs
            .first()
            .map(|&(_, q)| q)
            .or_else(|| (0..scene.views.len()).find(|&i| i != scene.reference))
            .ok_or_else(|| input_error("dataset has no query views")),
    }
}

/// All query view indices in order, optionally truncated to the first N.
/// Non-reference view indices, nearest baseline first, so a `--views`
/// limit keeps the most overlapping cameras.
fn query_indices(scene: &LoadedScene, limit: Option<usize>) -> Result<Vec<usize>> {
    let reference_center = scene.views[scene.reference].camera.center();
    let mut indices: Vec<usize> =
        (0..scene.views.len()).filter(|&i| i != scene.reference).collect();
    indices.sort_by(|&a, &b| {
        let da = (scene.views[a].camera.center() - reference_center).norm();
        let db = (scene.views[b].camera.center() - reference_center).norm();
        da.total_cmp(&db).then(a.cmp(&b))
    });
    if let Some(n) = limit {
        if n == 0 || n > indices.len() {
            return Err(input_error(format!(
                "--views must be between 1 and {}, got {n}",
                indices.len()
            )));
        }
        indices.truncate(n);
    }
    Ok(indices)
}

fn load_weights(sim: SimArg, weights: &Option<PathBuf>) -> Result<Option<MlpParams>> {
    match (sim, weights) {
        (SimArg::Mlp, Some(path)) => Ok(Some(read_mlpw(path)?)),
        (SimArg::Mlp, None) => Err(input_error("--sim mlp requires --weights")),
        (SimArg::Cos, Some(_)) => Err(input_error("--weights only applies with --sim mlp")),
        (SimArg::Cos, None) => Ok(None),
    }
}

/// One pyramid sweep of the scene's reference view against `queries`.
fn sweep(
    scene: &LoadedScene,
    queries: &[MatchView],
    cfg: &config::Config,
    mode: SimilarityMode<'_>,
    ctx: Option<&PriorContext>,
) -> Result<DepthMap> {
    let request = MatchRequest {
        reference: &scene.views[scene.reference],
        queries,
        kind: RangeKind::Elevation,
        z_min: scene.z_min,
        z_max: scene.z_max,
    };
    let provider = ctx.map(|ctx| {
        move |index: usize, image: &Image2D, _camera: &CameraPinhole| ctx.features(index, image)
    });
    let features = provider.as_ref().map(|f| f as &FeatureProvider<'_>);
    Ok(pyramid_match(
        &request,
        &config::pyramid_config(cfg)?,
        &config::sgm_config(cfg)?,
        mode,
        features,
    )?)
}

fn match_pair(args: &MatchArgs, cfg: &config::Config) -> Result<()> {
    let scene = load_scene(&read_manifest(&args.manifest)?)?;
    let query = resolve_query(&scene, args.query)?;
    let params = load_weights(args.sim, &args.weights)?;
    let mode = match &params {
        Some(p) => SimilarityMode::Mlp(p),
        None => SimilarityMode::Cosine,
    };
    let queries = vec![scene.views[query].clone()];
    let ctx = prior_context(
        args.prior,
        args.rot_align,
        &scene,
        vec![scene.views[query].camera.clone()],
        cfg,
    )?;
    let map = sweep(&scene, &queries, cfg, mode, ctx.as_ref())?;
    write_depth_outputs(&map, &args.out, args.confidence_out.as_deref())?;
    println!(
        "wrote {} ({} of {} pixels valid, query view {query})",
        args.out.display(),
        map.valid_count(),
        map.len(),
    );
    Ok(())
}

fn mvs(args: &MvsArgs, cfg: &config::Config) -> Result<()> {
    let scene = load_scene(&read_manifest(&args.manifest)?)?;
    let indices = query_indices(&scene, args.views)?;
    let params = load_weights(args.sim, &args.weights)?;
    let mode = match &params {
        Some(p) => SimilarityMode::Mlp(p),
        None => SimilarityMode::Cosine,
    };
    let map = match args.fusion {
        FusionArg::Early => {
            let queries: Vec<MatchView> =
                indices.iter().map(|&i| scene.views[i].clone()).collect();
            let cameras: Vec<CameraPinhole> =
                indices.iter().map(|&i| scene.views[i].camera.clone()).collect();
            let ctx = prior_context(args.prior, args.rot_align, &scene, cameras, cfg)?;
            sweep(&scene, &queries, cfg, mode, ctx.as_ref())?
        }
        FusionArg::Late => {
            let mut maps = Vec::with_capacity(indices.len());
            for &index in &indices {
                let queries = vec![scene.views[index].clone()];
                let ctx = prior_context(
                    args.prior,
                    args.rot_align,
                    &scene,
                    vec![scene.views[index].camera.clone()],
                    cfg,
                )?;
                let map = sweep(&scene, &queries, cfg, mode, ctx.as_ref())?;
                log::debug!(
                    "pairwise map for query {index}: {} of {} valid",
                    map.valid_count(),
                    map.len()
                );
                maps.push(map);
            }
            let camera_refs: Vec<&CameraPinhole> = indices
                .iter()
                .map(|&i| &scene.views[i].camera)
                .collect();
            let fine_step = hypothesis_step(
                &scene.views[scene.reference].camera,
                &camera_refs,
                RangeKind::Elevation,
                scene.z_min,
                scene.z_max,
                config::pyramid_config(cfg)?.step_px,
            )?;
            fuse(&maps, &config::fusion_config(cfg, fine_step)?)?
        }
    };
    write_depth_outputs(&map, &args.out, args.confidence_out.as_deref())?;
    println!(
        "wrote {} ({} of {} pixels valid, {} query views, {} fusion)",
        args.out.display(),
        map.valid_count(),
        map.len(),
        indices.len(),
        match args.fusion {
            FusionArg::Early => "early",
            FusionArg::Late => "late",
        },
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// gt

fn ground_truth(args: &GtArgs, cfg: &config::Config) -> Result<()> {
    let scene = load_scene(&read_manifest(&args.manifest)?)?;
    if args.view >= scene.views.len() {
        return Err(input_error(format!(
            "view {} is out of range (dataset has {} views)",
            args.view,
            scene.views.len()
        )));
    }
    let camera = &scene.views[args.view].camera;
    let cloud = if args.cloud.extension().is_some_and(|e| e == "xyz") {
        read_xyz(&args.cloud)?
    } else {
        read_point_cloud(&args.cloud)?
    };
    let gt_config = config::ground_truth_config(cfg)?;
    let map = if args.sparse {
        sparse_ground_truth(camera, &cloud, &gt_config)?
    } else {
        dense_ground_truth(camera, &cloud, &gt_config)?
    };
    let map = if args.elevation {
        ray_depth_to_elevation(&map, camera)?
    } else {
        map
    };
    write_pfm(&args.out, &depth_to_float(&map))?;
    println!(
        "wrote {} ({} of {} pixels valid from {} points)",
        args.out.display(),
        map.valid_count(),
        map.len(),
        cloud.len(),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

fn eval(args: &EvalArgs, cfg: &config::Config) -> Result<()> {
    let depth = float_to_depth(&read_pfm(&args.depth)?);
    let truth = float_to_depth(&read_pfm(&args.truth)?);
    let gsd_m = match (args.gsd, &args.manifest) {
        (Some(gsd), _) => gsd,
        (None, Some(path)) => read_manifest(path)?.gsd_m,
        (None, None) => {
            return Err(input_error(
                "ground sampling distance is required: pass --gsd or --manifest",
            ))
        }
    };
    let report = evaluate(&depth, &truth, &config::eval_config(cfg, gsd_m)?)?;
    print_report(&report);
    if let Some(path) = &args.out {
        write_report_csv(&report, path)?;
        println!("wrote {}", path.display());
    }
    if let Some(path) = &args.histogram {
        write_histogram_csv(&report, path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn print_report(report: &EvalReport) {
    println!(
        "compared {} px against {} valid ground-truth px",
        report.compared, report.gt_valid
    );
    println!(
        "inliers (|error| < {:.2} m): {} ({:.2}% completeness)",
        report.inlier_threshold_m, report.inliers, report.completeness_percent
    );
    println!(
        "mean |error| {:.4} m, std {:.4} m, median {:.4} m, nmad {:.4} m",
        report.mean_abs_error_m, report.std_dev_m, report.median_abs_error_m, report.nmad_m
    );
    for band in &report.accuracy {
        println!(
            "within {:.1}x gsd ({:.3} m): {:.2}% of inliers, {:.2}% of compared",
            band.multiple, band.threshold_m, band.inlier_percent, band.compared_percent
        );
    }
}

// ---------------------------------------------------------------------------
// mlp-train

fn mlp_train(args: &MlpTrainArgs, cfg: &mut config::Config) -> Result<()> {
    if let Some(seed) = args.seed {
        cfg.set("scene.seed", seed);
    }
    if let Some(views) = args.views {
        cfg.set("scene.views", views);
    }
    if let Some(epochs) = args.epochs {
        cfg.set("train.epochs", epochs);
    }
    if let Some(rate) = args.learning_rate {
        cfg.set("train.learning_rate", rate);
    }
    let spec = config::scene_spec(cfg)?;
    let (train_config, mining_config) = config::training_config(cfg)?;
    let radius = config::patch_radius(cfg)?;

    let scene = synthesize(&spec)?;
    let mut batches = Vec::new();
    let mut dim = None;
    for query in 0..scene.views.len() {
        if query == scene.reference {
            continue;
        }
        let pair = rectified_training_pair(&scene, query)?;
        let left = extract_patch_descriptors(&pair.left, radius)?;
        let right = extract_patch_descriptors(&pair.right, radius)?;
        dim = Some(left.channels() as usize);
        let batch = mine_samples(
            &left,
            &right,
            &pair.disparity,
            &pair.occluded,
            &mining_config,
            spec.seed,
        )?;
        log::debug!(
            "query {query}: {} training pairs (row residual {:.2e} px)",
            batch.pair_count(),
            pair.max_row_residual_px
        );
        batches.push(batch);
    }
    let dim = dim.ok_or_else(|| input_error("training scene has no query views"))?;
    let initial = MlpParams::new(MlpParams::default_dims_for_feature_dim(dim), spec.seed)?;
    let (trained, losses) = train_mlp(&initial, &batches, &train_config)?;
    write_mlpw(&args.out, &trained)?;
    let pairs: usize = batches.iter().map(|b| b.pair_count()).sum();
    println!(
        "wrote {} ({} pairs, {} epochs, loss {:.4} -> {:.4})",
        args.out.display(),
        pairs,
        losses.len(),
        losses.first().copied().unwrap_or(f64::NAN),
        losses.last().copied().unwrap_or(f64::NAN),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// shared output helpers

/// Confidence plane of a depth map as floats, invalid pixels NaN.
fn confidence_to_float(map: &DepthMap) -> FloatMap {
    let values = map
        .confidences()
        .iter()
        .zip(map.validity())
        .map(|(&c, &valid)| if valid { c as f32 } else { f32::NAN })
        .collect();
    FloatMap::new(map.width(), map.height(), values)
}

fn write_depth_outputs(
    map: &DepthMap,
    out: &Path,
    confidence_out: Option<&Path>,
) -> Result<()> {
    write_pfm(out, &depth_to_float(map))?;
    if let Some(path) = confidence_out {
        write_pfm(path, &confidence_to_float(map))?;
    }
    Ok(())
}
