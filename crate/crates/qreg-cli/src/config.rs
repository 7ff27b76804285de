//! Run configuration: defaults, optional key-value config file, command-line
//! overrides — in that order of precedence. Unknown file keys are rejected so
//! typos fail loudly instead of silently running defaults.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use anyhow::Context;
use serde::Deserialize;

use qreg_core::{EstimatorConfig, DEFAULT_PATCH_NEIGHBORS};

/// Which registration method drives a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Quadric patch frames, one candidate pose per correspondence,
    /// exhaustive inlier scoring, then local optimization.
    Qreg,
    /// Same pipeline with local optimization disabled.
    QregNoLo,
    /// Classic 3-point RANSAC with the given iteration budget.
    Ransac(usize),
    /// Score-weighted alignment over all correspondences at once.
    KabschWeighted,
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "qreg" => return Ok(Method::Qreg),
            "qreg_no_lo" => return Ok(Method::QregNoLo),
            "kabsch_weighted" => return Ok(Method::KabschWeighted),
            _ => {}
        }
        if let Some(inner) = s.strip_prefix("ransac(").and_then(|r| r.strip_suffix(')')) {
            let iterations: usize = inner
                .parse()
                .map_err(|_| format!("bad ransac iteration count {inner:?}"))?;
            if iterations == 0 {
                return Err("ransac needs at least one iteration".into());
            }
            return Ok(Method::Ransac(iterations));
        }
        Err(format!(
            "unknown method {s:?}; expected qreg, qreg_no_lo, ransac(N), or kabsch_weighted"
        ))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Qreg => write!(f, "qreg"),
            Method::QregNoLo => write!(f, "qreg_no_lo"),
            Method::Ransac(n) => write!(f, "ransac({n})"),
            Method::KabschWeighted => write!(f, "kabsch_weighted"),
        }
    }
}

/// Flat key-value config file contents; every key optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    method: Option<String>,
    inlier_threshold: Option<f64>,
    lo_iterations: Option<usize>,
    lo_sample_fraction: Option<f64>,
    lo_normal_angle_max_deg: Option<f64>,
    scale_min: Option<f64>,
    scale_max: Option<f64>,
    rng_seed: Option<u64>,
    gamma: Option<f64>,
    neighbors: Option<usize>,
    // synthetic scene keys (used by `synth` and ignored by `register`)
    scene_seed: Option<u64>,
    points_per_surface: Option<usize>,
    n_correspondences: Option<usize>,
    inlier_ratio: Option<f64>,
    noise_sigma: Option<f64>,
}

/// Command-line overrides shared by the subcommands that take a config.
#[derive(Debug, Default, clap::Args)]
pub struct ConfigOverrides {
    /// Registration method: qreg | qreg_no_lo | ransac(N) | kabsch_weighted
    #[arg(long)]
    pub method: Option<Method>,
    /// Correspondence residual below which a pose counts a match as inlier
    #[arg(long)]
    pub inlier_threshold: Option<f64>,
    /// Local optimization rounds (0 disables LO)
    #[arg(long)]
    pub lo_iterations: Option<usize>,
    /// Fraction of gathered inliers refit per LO round
    #[arg(long)]
    pub lo_sample_fraction: Option<f64>,
    /// Normal-consistency gate for LO inlier gathering, degrees
    #[arg(long)]
    pub lo_normal_angle_max_deg: Option<f64>,
    /// Lower bound of the patch scale-ratio gate
    #[arg(long)]
    pub scale_min: Option<f64>,
    /// Upper bound of the patch scale-ratio gate
    #[arg(long)]
    pub scale_max: Option<f64>,
    /// Seed for the randomized estimator stages
    #[arg(long)]
    pub rng_seed: Option<u64>,
    /// RMSE clamp of the pose loss
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Neighborhood size for quadric patch fits
    #[arg(long)]
    pub neighbors: Option<usize>,
    /// Seed for synthetic scene generation
    #[arg(long)]
    pub scene_seed: Option<u64>,
    /// Points sampled per synthetic surface
    #[arg(long)]
    pub points_per_surface: Option<usize>,
    /// Number of synthetic correspondences
    #[arg(long)]
    pub n_correspondences: Option<usize>,
    /// Fraction of synthetic correspondences that are true matches
    #[arg(long)]
    pub inlier_ratio: Option<f64>,
    /// Gaussian surface noise of the synthetic scene
    #[arg(long)]
    pub noise_sigma: Option<f64>,
}

/// Fully resolved configuration for one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub method: Method,
    pub estimator: EstimatorConfig<f64>,
    pub neighbors: usize,
    pub scene_seed: u64,
    pub points_per_surface: usize,
    pub n_correspondences: usize,
    pub inlier_ratio: f64,
    pub noise_sigma: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: Method::Qreg,
            estimator: EstimatorConfig::default(),
            neighbors: DEFAULT_PATCH_NEIGHBORS,
            scene_seed: 0,
            points_per_surface: 600,
            n_correspondences: 200,
            inlier_ratio: 0.3,
            noise_sigma: 0.005,
        }
    }
}

impl RunConfig {
    /// defaults ← config file ← command line, later wins.
    pub fn resolve(
        config_path: Option<&Path>,
        overrides: &ConfigOverrides,
    ) -> anyhow::Result<Self> {
        let file = match config_path {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                toml::from_str::<FileConfig>(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => FileConfig::default(),
        };

        let mut cfg = RunConfig::default();
        if let Some(m) = &file.method {
            cfg.method = m.parse().map_err(anyhow::Error::msg)?;
        }
        let e = &mut cfg.estimator;
        merge(&mut e.inlier_threshold, file.inlier_threshold);
        merge(&mut e.lo_iterations, file.lo_iterations);
        merge(&mut e.lo_sample_fraction, file.lo_sample_fraction);
        merge(&mut e.lo_normal_angle_max_deg, file.lo_normal_angle_max_deg);
        merge(&mut e.scale_bounds.0, file.scale_min);
        merge(&mut e.scale_bounds.1, file.scale_max);
        merge(&mut e.rng_seed, file.rng_seed);
        merge(&mut e.gamma, file.gamma);
        merge(&mut cfg.neighbors, file.neighbors);
        merge(&mut cfg.scene_seed, file.scene_seed);
        merge(&mut cfg.points_per_surface, file.points_per_surface);
        merge(&mut cfg.n_correspondences, file.n_correspondences);
        merge(&mut cfg.inlier_ratio, file.inlier_ratio);
        merge(&mut cfg.noise_sigma, file.noise_sigma);

        merge(&mut cfg.method, overrides.method);
        let e = &mut cfg.estimator;
        merge(&mut e.inlier_threshold, overrides.inlier_threshold);
        merge(&mut e.lo_iterations, overrides.lo_iterations);
        merge(&mut e.lo_sample_fraction, overrides.lo_sample_fraction);
        merge(
            &mut e.lo_normal_angle_max_deg,
            overrides.lo_normal_angle_max_deg,
        );
        merge(&mut e.scale_bounds.0, overrides.scale_min);
        merge(&mut e.scale_bounds.1, overrides.scale_max);
        merge(&mut e.rng_seed, overrides.rng_seed);
        merge(&mut e.gamma, overrides.gamma);
        merge(&mut cfg.neighbors, overrides.neighbors);
        merge(&mut cfg.scene_seed, overrides.scene_seed);
        merge(&mut cfg.points_per_surface, overrides.points_per_surface);
        merge(&mut cfg.n_correspondences, overrides.n_correspondences);
        merge(&mut cfg.inlier_ratio, overrides.inlier_ratio);
        merge(&mut cfg.noise_sigma, overrides.noise_sigma);

        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> anyhow::Result<()> {
        anyhow::ensure!(
            self.estimator.inlier_threshold > 0.0,
            "inlier_threshold must be positive"
        );
        anyhow::ensure!(
            self.estimator.scale_bounds.0 > 0.0
                && self.estimator.scale_bounds.0 < self.estimator.scale_bounds.1,
            "scale bounds must satisfy 0 < min < max"
        );
        anyhow::ensure!(
            self.estimator.lo_sample_fraction > 0.0 && self.estimator.lo_sample_fraction <= 1.0,
            "lo_sample_fraction must be in (0, 1]"
        );
        anyhow::ensure!(self.estimator.gamma > 0.0, "gamma must be positive");
        anyhow::ensure!(self.neighbors >= 9, "neighbors must be at least 9");
        Ok(())
    }
}

fn merge<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_strings_round_trip() {
        for text in ["qreg", "qreg_no_lo", "ransac(500)", "kabsch_weighted"] {
            let m: Method = text.parse().unwrap();
            assert_eq!(m.to_string(), text);
        }
    }

    #[test]
    fn method_rejects_garbage() {
        assert!("qregg".parse::<Method>().is_err());
        assert!("ransac()".parse::<Method>().is_err());
        assert!("ransac(0)".parse::<Method>().is_err());
        assert!("ransac(-3)".parse::<Method>().is_err());
    }

    #[test]
    fn file_and_cli_precedence() {
        let dir = std::env::temp_dir().join("qreg-config-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.toml");
        std::fs::write(&path, "method = \"ransac(100)\"\ninlier_threshold = 0.05\n").unwrap();

        let cfg = RunConfig::resolve(Some(&path), &ConfigOverrides::default()).unwrap();
        assert_eq!(cfg.method, Method::Ransac(100));
        assert_eq!(cfg.estimator.inlier_threshold, 0.05);

        let over = ConfigOverrides {
            method: Some(Method::Qreg),
            ..ConfigOverrides::default()
        };
        let cfg = RunConfig::resolve(Some(&path), &over).unwrap();
        assert_eq!(cfg.method, Method::Qreg);
        assert_eq!(cfg.estimator.inlier_threshold, 0.05);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = std::env::temp_dir().join("qreg-config-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.toml");
        std::fs::write(&path, "inlier_treshold = 0.05\n").unwrap();
        let err = RunConfig::resolve(Some(&path), &ConfigOverrides::default()).unwrap_err();
        assert!(format!("{err:#}").contains("inlier_treshold"));
    }

    #[test]
    fn nonsense_values_are_rejected() {
        let over = ConfigOverrides {
            scale_min: Some(1.2),
            ..ConfigOverrides::default()
        };
        assert!(RunConfig::resolve(None, &over).is_err());
    }
}
