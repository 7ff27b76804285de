//! Benchmark matrix: (inlier ratio × noise level × method) cells, each run
//! over a fixed set of seeds so a rerun reproduces every number except wall
//! time. Cells execute on the rayon pool; determinism comes from the per-cell
//! seeds, not the schedule.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{anyhow, Context};
use rayon::prelude::*;
use serde::Deserialize;

use qreg_core::metrics::{evaluate_pair, PairEvaluation};
use qreg_core::synth::{generate, SceneSpec};
use qreg_core::{Correspondence, EstimatorConfig};

use crate::commands::{run_method, CliError, CliResult};
use crate::config::Method;

#[derive(clap::Args)]
pub struct BenchArgs {
    /// Matrix TOML: inlier_ratios, noise_sigmas, methods lists plus scalar
    /// scene and estimator keys
    #[arg(long)]
    pub config: PathBuf,
    /// Output CSV path
    #[arg(long)]
    pub out: PathBuf,
}

fn default_trials() -> usize {
    3
}
fn default_points() -> usize {
    600
}
fn default_corrs() -> usize {
    150
}
fn default_neighbors() -> usize {
    100
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixConfig {
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_trials")]
    trials: usize,
    #[serde(default = "default_points")]
    points_per_surface: usize,
    #[serde(default = "default_corrs")]
    n_correspondences: usize,
    #[serde(default = "default_neighbors")]
    neighbors: usize,
    inlier_ratios: Vec<f64>,
    noise_sigmas: Vec<f64>,
    methods: Vec<String>,
    inlier_threshold: Option<f64>,
    lo_iterations: Option<usize>,
    gamma: Option<f64>,
}

pub const HEADER: &str = "method,inlier_ratio,noise_sigma,trials,success_rate,\
median_rre_deg,median_rte_units,mean_rre_deg,mean_rte_units,mean_wall_secs,seeds";

struct Cell {
    method: Method,
    inlier_ratio: f64,
    noise_sigma: f64,
    /// One scene seed per trial, shared across methods at the same
    /// (ratio, noise) coordinate so methods face identical problems.
    seeds: Vec<u64>,
}

pub fn cmd_bench(args: &BenchArgs) -> CliResult {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading matrix config {}", args.config.display()))
        .map_err(CliError::Input)?;
    let matrix: MatrixConfig = toml::from_str(&text)
        .with_context(|| format!("parsing matrix config {}", args.config.display()))
        .map_err(CliError::Input)?;
    if matrix.trials == 0 {
        return Err(CliError::Input(anyhow!("trials must be at least 1")));
    }
    let methods: Vec<Method> = matrix
        .methods
        .iter()
        .map(|m| m.parse().map_err(anyhow::Error::msg))
        .collect::<Result<_, _>>()
        .map_err(CliError::Input)?;

    let mut estimator = EstimatorConfig::<f64>::default();
    if let Some(v) = matrix.inlier_threshold {
        estimator.inlier_threshold = v;
    }
    if let Some(v) = matrix.lo_iterations {
        estimator.lo_iterations = v;
    }
    if let Some(v) = matrix.gamma {
        estimator.gamma = v;
    }

    let mut cells = Vec::new();
    for (coord, (&inlier_ratio, &noise_sigma)) in matrix
        .inlier_ratios
        .iter()
        .flat_map(|r| matrix.noise_sigmas.iter().map(move |n| (r, n)))
        .enumerate()
    {
        let base = matrix.seed + (coord * matrix.trials) as u64;
        let seeds: Vec<u64> = (0..matrix.trials as u64).map(|t| base + t).collect();
        for &method in &methods {
            cells.push(Cell {
                method,
                inlier_ratio,
                noise_sigma,
                seeds: seeds.clone(),
            });
        }
    }

    let rows: Vec<Result<String, CliError>> = cells
        .par_iter()
        .map(|cell| run_cell(cell, &matrix, &estimator))
        .collect();

    let mut csv = String::from(HEADER);
    csv.push('\n');
    for row in rows {
        csv.push_str(&row?);
        csv.push('\n');
    }
    std::fs::write(&args.out, csv)
        .map_err(|e| anyhow!(e).context(format!("writing {}", args.out.display())))?;
    println!("wrote {} ({} cells)", args.out.display(), cells.len());
    Ok(())
}

fn run_cell(
    cell: &Cell,
    matrix: &MatrixConfig,
    estimator: &EstimatorConfig<f64>,
) -> Result<String, CliError> {
    let mut evals: Vec<PairEvaluation<f64>> = Vec::new();
    let mut wall = 0.0f64;
    for &seed in &cell.seeds {
        let spec = SceneSpec::three_ellipsoids(
            seed,
            matrix.points_per_surface,
            matrix.n_correspondences,
            cell.inlier_ratio,
            cell.noise_sigma,
        );
        let scene = generate(&spec)
            .map_err(|e| CliError::Input(anyhow!(e).context("generating bench scene")))?;
        let cfg = EstimatorConfig {
            rng_seed: seed,
            ..*estimator
        };
        let start = Instant::now();
        let outcome = run_method(
            cell.method,
            &scene.source,
            &scene.target,
            &scene.correspondences,
            matrix.neighbors,
            &cfg,
        );
        wall += start.elapsed().as_secs_f64();
        // a declined estimate counts as an unregistered trial, not an abort
        if let Ok(report) = outcome {
            let gt_corrs: Vec<Correspondence<f64>> = scene
                .planted_inliers
                .iter()
                .map(|&i| scene.correspondences[i])
                .collect();
            evals.push(evaluate_pair(
                &report.best_transform,
                &scene.ground_truth,
                &gt_corrs,
                &scene.source,
                &scene.target,
            ));
        }
    }

    let registered: Vec<&PairEvaluation<f64>> =
        evals.iter().filter(|e| e.registered_3dmatch).collect();
    let trials = cell.seeds.len();
    let success_rate = registered.len() as f64 / trials as f64;
    let median = |mut v: Vec<f64>| -> Option<f64> {
        if v.is_empty() {
            return None;
        }
        v.sort_by(|a, b| a.partial_cmp(b).expect("finite metrics"));
        let mid = v.len() / 2;
        Some(if v.len() % 2 == 1 {
            v[mid]
        } else {
            0.5 * (v[mid - 1] + v[mid])
        })
    };
    let fmt_opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| x.to_string());
    let mean = |v: &[f64]| -> Option<f64> {
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };

    let med_rre = median(registered.iter().map(|e| e.rre_degrees).collect());
    let med_rte = median(registered.iter().map(|e| e.rte_units).collect());
    let mean_rre = mean(&evals.iter().map(|e| e.rre_degrees).collect::<Vec<_>>());
    let mean_rte = mean(&evals.iter().map(|e| e.rte_units).collect::<Vec<_>>());
    let seeds = cell
        .seeds
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join(" ");

    let mut row = String::new();
    write!(
        row,
        "{},{},{},{},{},{},{},{},{},{:.6},{}",
        cell.method,
        cell.inlier_ratio,
        cell.noise_sigma,
        trials,
        success_rate,
        fmt_opt(med_rre),
        fmt_opt(med_rte),
        fmt_opt(mean_rre),
        fmt_opt(mean_rte),
        wall / trials as f64,
        seeds,
    )
    .expect("writing to a String cannot fail");
    Ok(row)
}
