//! The `register`, `evaluate`, and `synth` subcommands plus the error type
//! that fixes the exit-code contract: 0 success, 1 I/O or parse failure,
//! 2 estimation declined (degenerate or gate-rejected input).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::anyhow;

use qreg_core::estimator::{count_inliers, EstimatorError, RegistrationReport};
use qreg_core::io::{self, CloudFormat, ReportDto};
use qreg_core::metrics::{
    chamfer_modified, evaluate_pair, summarize, PairEvaluation, RECALL_KITTI_RRE_MAX_DEG,
    RECALL_KITTI_RTE_MAX,
};
use qreg_core::synth::{generate, SceneSpec};
use qreg_core::{
    kabsch_weighted, qreg_register_clouds, ransac_register, Correspondence, EstimatorConfig,
    Point3, PointCloud, RigidTransform,
};

use crate::config::{ConfigOverrides, Method, RunConfig};

pub enum CliError {
    /// Exit 1: bad files, bad config, bad arguments.
    Input(anyhow::Error),
    /// Exit 2: inputs were readable but no pose could be estimated.
    Estimation(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Estimation(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(e) => write!(f, "{e:#}"),
            CliError::Estimation(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Input(e)
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        CliError::Estimation(e.to_string())
    }
}

pub type CliResult = Result<(), CliError>;

/// Picks the on-disk format from the extension; `.ply` headers are peeked to
/// distinguish ascii from binary encodings.
fn detect_format(path: &Path) -> Result<CloudFormat, CliError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "xyz" | "txt" => Ok(CloudFormat::XyzWhitespace),
        "ply" => {
            let bytes = std::fs::read(path)
                .map_err(|e| anyhow!(e).context(format!("reading {}", path.display())))?;
            let head = &bytes[..bytes.len().min(512)];
            let head = String::from_utf8_lossy(head);
            if head.contains("format ascii") {
                Ok(CloudFormat::PlyAscii)
            } else {
                Ok(CloudFormat::PlyBinaryLittleEndian)
            }
        }
        other => Err(CliError::Input(anyhow!(
            "unsupported cloud extension {other:?} for {} (expected .ply or .xyz)",
            path.display()
        ))),
    }
}

fn read_cloud_auto(path: &Path) -> Result<PointCloud<f64>, CliError> {
    let format = detect_format(path)?;
    let (cloud, warnings) = io::read_cloud_with_warnings(path, format)
        .map_err(|e| anyhow!(e).context(format!("reading cloud {}", path.display())))?;
    for w in warnings {
        eprintln!("warning: {}: {w}", path.display());
    }
    Ok(cloud)
}

/// Runs the selected method end to end; shared with `bench`.
pub fn run_method(
    method: Method,
    source: &PointCloud<f64>,
    target: &PointCloud<f64>,
    corrs: &[Correspondence<f64>],
    neighbors: usize,
    estimator: &EstimatorConfig<f64>,
) -> Result<RegistrationReport<f64>, CliError> {
    match method {
        Method::Qreg => {
            Ok(qreg_register_clouds(source, target, corrs, neighbors, estimator)?)
        }
        Method::QregNoLo => {
            let cfg = EstimatorConfig {
                lo_iterations: 0,
                ..*estimator
            };
            Ok(qreg_register_clouds(source, target, corrs, neighbors, &cfg)?)
        }
        Method::Ransac(iterations) => Ok(ransac_register(
            corrs, source, target, iterations, estimator, None,
        )?),
        Method::KabschWeighted => kabsch_report(source, target, corrs, estimator),
    }
}

fn kabsch_report(
    source: &PointCloud<f64>,
    target: &PointCloud<f64>,
    corrs: &[Correspondence<f64>],
    cfg: &EstimatorConfig<f64>,
) -> Result<RegistrationReport<f64>, CliError> {
    let start = Instant::now();
    let src: Vec<Point3<f64>> = corrs.iter().map(|c| *source.point(c.source_index)).collect();
    let dst: Vec<Point3<f64>> = corrs.iter().map(|c| *target.point(c.target_index)).collect();
    let weights: Vec<f64> = corrs.iter().map(|c| c.score).collect();
    let t = kabsch_weighted(&src, &dst, &weights)
        .map_err(|e| CliError::Estimation(format!("weighted alignment failed: {e}")))?;
    let align_secs = start.elapsed().as_secs_f64();

    let (inlier_count, inlier_indices) =
        count_inliers(&t, corrs, source, target, cfg.inlier_threshold);
    let mut stage_timings = BTreeMap::new();
    stage_timings.insert("align".to_string(), align_secs);
    Ok(RegistrationReport {
        best_transform: t,
        pre_lo_transform: t,
        inlier_count,
        inlier_indices,
        candidates_evaluated: 1,
        stage_timings,
        per_candidate_scores: None,
    })
}

fn bounds_check(
    corrs: &[Correspondence<f64>],
    source: &PointCloud<f64>,
    target: &PointCloud<f64>,
) -> Result<(), CliError> {
    Correspondence::validate_indices(corrs, source.len(), target.len())
        .map_err(|e| CliError::Input(anyhow!(e)))
}

#[derive(clap::Args)]
pub struct RegisterArgs {
    /// Source point cloud (.ply or .xyz)
    #[arg(long)]
    pub source: PathBuf,
    /// Target point cloud (.ply or .xyz)
    #[arg(long)]
    pub target: PathBuf,
    /// Correspondence CSV with header src,dst[,score]
    #[arg(long)]
    pub corrs: PathBuf,
    /// Key-value TOML config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: ConfigOverrides,
    /// Output path for the estimated 4x4 transform
    #[arg(long, default_value = "transform.txt")]
    pub out_transform: PathBuf,
    /// Output path for the JSON run report
    #[arg(long, default_value = "report.json")]
    pub out_report: PathBuf,
}

pub fn cmd_register(args: &RegisterArgs) -> CliResult {
    let cfg = RunConfig::resolve(args.config.as_deref(), &args.overrides)?;
    let source = read_cloud_auto(&args.source)?;
    let target = read_cloud_auto(&args.target)?;
    let corrs = io::read_correspondences(&args.corrs)
        .map_err(|e| anyhow!(e).context(format!("reading correspondences {}", args.corrs.display())))?;
    bounds_check(&corrs, &source, &target)?;

    let report = run_method(
        cfg.method,
        &source,
        &target,
        &corrs,
        cfg.neighbors,
        &cfg.estimator,
    )?;

    io::write_transform(&report.best_transform, &args.out_transform)
        .map_err(|e| anyhow!(e).context(format!("writing {}", args.out_transform.display())))?;
    write_report_with_extras(&report, &cfg, &args.out_report)?;

    println!(
        "{}: {} / {} inliers, transform {}, report {}",
        cfg.method,
        report.inlier_count,
        corrs.len(),
        args.out_transform.display(),
        args.out_report.display(),
    );
    Ok(())
}

/// The core report plus the CLI-level settings, so a run is reproducible
/// from its report alone.
fn write_report_with_extras(
    report: &RegistrationReport<f64>,
    cfg: &RunConfig,
    path: &Path,
) -> CliResult {
    let mut dto = ReportDto::new(cfg.method.to_string(), report, &cfg.estimator);
    dto.extra
        .insert("neighbors".to_string(), serde_json::json!(cfg.neighbors));
    let mut text = serde_json::to_string_pretty(&dto)
        .map_err(|e| anyhow!(e).context("serializing report"))?;
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| anyhow!(e).context(format!("writing {}", path.display())))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Protocol {
    /// Registered when the RMSE over ground-truth correspondences is < 0.2
    Threedmatch,
    /// Registered when RRE < 5 degrees and RTE < 2 units
    Kitti,
    /// Reports the modified chamfer distance instead of recall flags
    Modelnet,
}

#[derive(clap::Args)]
pub struct EvaluateArgs {
    /// Estimated 4x4 transform file
    #[arg(long, required_unless_present = "batch")]
    pub est: Option<PathBuf>,
    /// Ground-truth 4x4 transform file
    #[arg(long, required_unless_present = "batch")]
    pub gt: Option<PathBuf>,
    /// Source cloud; needed by threedmatch (RMSE) and modelnet (chamfer)
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Target cloud; needed by threedmatch (RMSE) and modelnet (chamfer)
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Ground-truth correspondences; needed by threedmatch
    #[arg(long)]
    pub corrs: Option<PathBuf>,
    /// Evaluation protocol
    #[arg(long, value_enum)]
    pub protocol: Protocol,
    /// Directory of pair subdirectories (est.txt, gt.txt, source.ply,
    /// target.ply, corrs.csv); prints one row per pair plus a summary
    #[arg(long, conflicts_with_all = ["est", "gt", "source", "target", "corrs"])]
    pub batch: Option<PathBuf>,
}

fn protocol_header(protocol: Protocol) -> &'static str {
    match protocol {
        Protocol::Threedmatch => "pair,rre_deg,rte_units,rmse_units,registered",
        Protocol::Kitti => "pair,rre_deg,rte_units,registered",
        Protocol::Modelnet => "pair,rre_deg,rte_units,chamfer",
    }
}

struct PairFiles {
    name: String,
    est: RigidTransform<f64>,
    gt: RigidTransform<f64>,
    source: Option<PointCloud<f64>>,
    target: Option<PointCloud<f64>>,
    corrs: Option<Vec<Correspondence<f64>>>,
}

fn protocol_row(pair: &PairFiles, protocol: Protocol) -> Result<(String, Option<PairEvaluation<f64>>), CliError> {
    let need = |x: &Option<PointCloud<f64>>, what: &str| -> Result<PointCloud<f64>, CliError> {
        x.clone().ok_or_else(|| {
            CliError::Input(anyhow!("protocol needs {what} for pair {}", pair.name))
        })
    };
    match protocol {
        Protocol::Threedmatch => {
            let source = need(&pair.source, "--source")?;
            let target = need(&pair.target, "--target")?;
            let corrs = pair.corrs.clone().ok_or_else(|| {
                CliError::Input(anyhow!("protocol needs --corrs for pair {}", pair.name))
            })?;
            bounds_check(&corrs, &source, &target)?;
            let eval = evaluate_pair(&pair.est, &pair.gt, &corrs, &source, &target);
            let row = format!(
                "{},{},{},{},{}",
                pair.name, eval.rre_degrees, eval.rte_units, eval.rmse_units,
                eval.registered_3dmatch
            );
            Ok((row, Some(eval)))
        }
        // recall flags need only the two transforms; the full evaluation is
        // attached when the pair carries clouds + correspondences (batch mode)
        Protocol::Kitti => {
            let rre_deg = qreg_core::rre(&pair.est, &pair.gt);
            let rte_units = qreg_core::rte(&pair.est, &pair.gt);
            let registered = rre_deg < RECALL_KITTI_RRE_MAX_DEG && rte_units < RECALL_KITTI_RTE_MAX;
            let eval = match (&pair.source, &pair.target, &pair.corrs) {
                (Some(source), Some(target), Some(corrs)) => {
                    bounds_check(corrs, source, target)?;
                    Some(evaluate_pair(&pair.est, &pair.gt, corrs, source, target))
                }
                _ => None,
            };
            Ok((
                format!("{},{rre_deg},{rte_units},{registered}", pair.name),
                eval,
            ))
        }
        Protocol::Modelnet => {
            let source = need(&pair.source, "--source")?;
            let target = need(&pair.target, "--target")?;
            let rre_deg = qreg_core::rre(&pair.est, &pair.gt);
            let rte_units = qreg_core::rte(&pair.est, &pair.gt);
            let cd = chamfer_modified(&source, &source, &target, &target, &pair.est);
            Ok((
                format!("{},{rre_deg},{rte_units},{cd}", pair.name),
                None,
            ))
        }
    }
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> CliResult {
    println!("{}", protocol_header(args.protocol));

    if let Some(batch) = &args.batch {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(batch)
            .map_err(|e| anyhow!(e).context(format!("reading batch dir {}", batch.display())))?
            .filter_map(|r| r.ok().map(|d| d.path()))
            .filter(|p| p.is_dir())
            .collect();
        entries.sort();
        if entries.is_empty() {
            return Err(CliError::Input(anyhow!(
                "batch dir {} has no pair subdirectories",
                batch.display()
            )));
        }
        let mut evals = Vec::new();
        for dir in entries {
            let pair = load_pair_dir(&dir)?;
            let (row, eval) = protocol_row(&pair, args.protocol)?;
            println!("{row}");
            evals.extend(eval);
        }
        if !evals.is_empty() {
            let s = summarize(&evals);
            let fmt_opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| x.to_string());
            let mut line = String::from("# summary");
            write!(
                line,
                " recall={} median_rre={} median_rte={} mean_rre={} mean_rte={} mean_rmse={}",
                s.registration_recall,
                fmt_opt(s.median_rre),
                fmt_opt(s.median_rte),
                s.mean_rre,
                s.mean_rte,
                s.mean_rmse,
            )
            .expect("writing to a String cannot fail");
            println!("{line}");
        }
        return Ok(());
    }

    let est_path = args.est.as_ref().expect("clap enforces est without batch");
    let gt_path = args.gt.as_ref().expect("clap enforces gt without batch");
    let pair = PairFiles {
        name: est_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "pair".to_string()),
        est: read_transform_ctx(est_path)?,
        gt: read_transform_ctx(gt_path)?,
        source: args.source.as_deref().map(read_cloud_auto).transpose()?,
        target: args.target.as_deref().map(read_cloud_auto).transpose()?,
        corrs: args
            .corrs
            .as_ref()
            .map(|p| {
                io::read_correspondences(p).map_err(|e| {
                    CliError::Input(anyhow!(e).context(format!("reading {}", p.display())))
                })
            })
            .transpose()?,
    };
    let (row, _) = protocol_row(&pair, args.protocol)?;
    println!("{row}");
    Ok(())
}

fn read_transform_ctx(path: &Path) -> Result<RigidTransform<f64>, CliError> {
    io::read_transform(path)
        .map_err(|e| CliError::Input(anyhow!(e).context(format!("reading transform {}", path.display()))))
}

fn load_pair_dir(dir: &Path) -> Result<PairFiles, CliError> {
    let opt_cloud = |name: &str| -> Result<Option<PointCloud<f64>>, CliError> {
        let p = dir.join(name);
        if p.exists() {
            read_cloud_auto(&p).map(Some)
        } else {
            Ok(None)
        }
    };
    let corrs_path = dir.join("corrs.csv");
    Ok(PairFiles {
        name: dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string()),
        est: read_transform_ctx(&dir.join("est.txt"))?,
        gt: read_transform_ctx(&dir.join("gt.txt"))?,
        source: opt_cloud("source.ply")?,
        target: opt_cloud("target.ply")?,
        corrs: if corrs_path.exists() {
            Some(io::read_correspondences(&corrs_path).map_err(|e| {
                CliError::Input(anyhow!(e).context(format!("reading {}", corrs_path.display())))
            })?)
        } else {
            None
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PlyEncoding {
    Binary,
    Ascii,
}

#[derive(clap::Args)]
pub struct SynthArgs {
    /// Key-value TOML config file with scene keys
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: ConfigOverrides,
    /// Directory the scene files are written into (created if missing)
    #[arg(long)]
    pub out_dir: PathBuf,
    /// PLY encoding for the emitted clouds
    #[arg(long, value_enum, default_value_t = PlyEncoding::Binary)]
    pub ply: PlyEncoding,
}

pub fn cmd_synth(args: &SynthArgs) -> CliResult {
    let cfg = RunConfig::resolve(args.config.as_deref(), &args.overrides)?;
    let spec = SceneSpec::three_ellipsoids(
        cfg.scene_seed,
        cfg.points_per_surface,
        cfg.n_correspondences,
        cfg.inlier_ratio,
        cfg.noise_sigma,
    );
    let scene = generate(&spec)
        .map_err(|e| CliError::Input(anyhow!(e).context("generating scene")))?;

    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| anyhow!(e).context(format!("creating {}", args.out_dir.display())))?;
    let format = match args.ply {
        PlyEncoding::Binary => CloudFormat::PlyBinaryLittleEndian,
        PlyEncoding::Ascii => CloudFormat::PlyAscii,
    };
    let wrap = |path: &Path, r: Result<(), io::IoError>| -> CliResult {
        r.map_err(|e| anyhow!(e).context(format!("writing {}", path.display())))?;
        Ok(())
    };
    let p = args.out_dir.join("source.ply");
    wrap(&p, io::write_cloud(&scene.source, &p, format))?;
    let p = args.out_dir.join("target.ply");
    wrap(&p, io::write_cloud(&scene.target, &p, format))?;
    let p = args.out_dir.join("correspondences.csv");
    wrap(&p, io::write_correspondences(&scene.correspondences, &p))?;
    // the answer key: which of the correspondences are true matches, in a
    // form `evaluate --protocol threedmatch` can consume directly
    let gt_corrs: Vec<Correspondence<f64>> = scene
        .planted_inliers
        .iter()
        .map(|&i| scene.correspondences[i])
        .collect();
    let p = args.out_dir.join("gt_correspondences.csv");
    wrap(&p, io::write_correspondences(&gt_corrs, &p))?;
    let p = args.out_dir.join("gt_transform.txt");
    wrap(&p, io::write_transform(&scene.ground_truth, &p))?;

    let manifest = serde_json::json!({
        "scene_seed": cfg.scene_seed,
        "points_per_surface": cfg.points_per_surface,
        "n_correspondences": cfg.n_correspondences,
        "inlier_ratio": cfg.inlier_ratio,
        "noise_sigma": cfg.noise_sigma,
        "planted_inliers": scene.planted_inliers.len(),
        "source_points": scene.source.len(),
        "target_points": scene.target.len(),
        "files": [
            "source.ply",
            "target.ply",
            "correspondences.csv",
            "gt_correspondences.csv",
            "gt_transform.txt",
        ],
    });
    let manifest_path = args.out_dir.join("manifest.json");
    std::fs::write(
        &manifest_path,
        format!("{}\n", serde_json::to_string_pretty(&manifest).expect("static schema")),
    )
    .map_err(|e| anyhow!(e).context(format!("writing {}", manifest_path.display())))?;

    println!(
        "scene seed {}: {} + {} points, {} correspondences ({} planted inliers) in {}",
        cfg.scene_seed,
        scene.source.len(),
        scene.target.len(),
        scene.correspondences.len(),
        scene.planted_inliers.len(),
        args.out_dir.display(),
    );
    Ok(())
}
