//! Run configuration: `key=value` files overridable field by field.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::partition::seed_schedule;
use crate::saliency::SaliencyParams;
use crate::segmentation::VccsParams;

pub const DEFAULT_K: usize = 6;
pub const DEFAULT_R_MIN: f64 = 0.1;
pub const DEFAULT_R_MAX: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    Vccs,
    #[default]
    Ssv,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vccs" => Ok(Mode::Vccs),
            "ssv" => Ok(Mode::Ssv),
            other => Err(Error::invalid(format!("unknown mode '{other}', expected vccs or ssv"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Vccs => "vccs",
            Mode::Ssv => "ssv",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub voxel_resolution: f64,
    /// Required in vccs mode.
    pub seed_resolution: Option<f64>,
    pub k: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub lambda: f64,
    pub mu: f64,
    pub epsilon: f64,
    pub m: f64,
    pub max_iters: usize,
    pub saliency: SaliencyParams,
    pub color: Option<PathBuf>,
    pub depth: Option<PathBuf>,
    pub intrinsics: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub rng_seed: u64,
    /// Worker threads for scene-level parallelism; all cores when unset.
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let vccs = VccsParams::default();
        Self {
            mode: Mode::default(),
            voxel_resolution: vccs.voxel_resolution,
            seed_resolution: None,
            k: DEFAULT_K,
            r_min: DEFAULT_R_MIN,
            r_max: DEFAULT_R_MAX,
            lambda: vccs.lambda,
            mu: vccs.mu,
            epsilon: vccs.epsilon,
            m: vccs.color_norm,
            max_iters: vccs.max_iters,
            saliency: SaliencyParams::default(),
            color: None,
            depth: None,
            intrinsics: None,
            ground_truth: None,
            out_dir: None,
            rng_seed: 0,
            workers: None,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::invalid(format!("bad value '{value}' for {key}")))
}

impl RunConfig {
    pub fn vccs(seed_resolution: f64) -> Self {
        Self {
            mode: Mode::Vccs,
            seed_resolution: Some(seed_resolution),
            ..Self::default()
        }
    }

    pub fn ssv(k: usize, r_min: f64, r_max: f64) -> Self {
        Self {
            mode: Mode::Ssv,
            k,
            r_min,
            r_max,
            ..Self::default()
        }
    }

    /// Sets one field by name. Dashes and underscores in keys are
    /// interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let norm = key.trim().to_ascii_lowercase().replace('-', "_");
        let path = || Some(PathBuf::from(value.trim()));
        match norm.as_str() {
            "mode" => self.mode = value.parse()?,
            "rvoxel" => self.voxel_resolution = parse_value(key, value)?,
            "rseed" => self.seed_resolution = Some(parse_value(key, value)?),
            "k" => self.k = parse_value(key, value)?,
            "rmin" => self.r_min = parse_value(key, value)?,
            "rmax" => self.r_max = parse_value(key, value)?,
            "lambda" => self.lambda = parse_value(key, value)?,
            "mu" => self.mu = parse_value(key, value)?,
            "epsilon" => self.epsilon = parse_value(key, value)?,
            "m" => self.m = parse_value(key, value)?,
            "max_iters" => self.max_iters = parse_value(key, value)?,
            "octaves" => self.saliency.num_octaves = parse_value(key, value)?,
            "center_sigma" => self.saliency.center_sigma = parse_value(key, value)?,
            "surround_ratio" => self.saliency.surround_ratio = parse_value(key, value)?,
            "color" => self.color = path(),
            "depth" => self.depth = path(),
            "intrinsics" => self.intrinsics = path(),
            "gt" => self.ground_truth = path(),
            "out_dir" => self.out_dir = path(),
            "rng_seed" => self.rng_seed = parse_value(key, value)?,
            "workers" => self.workers = Some(parse_value(key, value)?),
            _ => return Err(Error::invalid(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {}: expected key=value", n + 1)))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn vccs_params(&self) -> VccsParams {
        VccsParams {
            voxel_resolution: self.voxel_resolution,
            seed_resolution: self.seed_resolution.unwrap_or(self.r_max),
            lambda: self.lambda,
            mu: self.mu,
            epsilon: self.epsilon,
            color_norm: self.m,
            max_iters: self.max_iters,
            ..VccsParams::default()
        }
    }

    /// Checks every parameter. Input paths are not touched.
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if self.workers == Some(0) {
            return Err(Error::invalid("workers must be at least 1"));
        }
        self.saliency.validate()?;
        let params = self.vccs_params();
        params.validate_weights()?;
        match self.mode {
            Mode::Vccs => {
                if self.seed_resolution.is_none() {
                    return Err(Error::invalid("vccs mode requires rseed"));
                }
                params.validate()
            }
            Mode::Ssv => {
                let radii = seed_schedule(self.k, self.r_min, self.r_max)?;
                for r in radii {
                    params.with_seed_resolution(r).validate()?;
                }
                Ok(())
            }
        }
    }

    /// Checks that the color, depth and intrinsics paths are set and exist.
    pub fn require_inputs(&self) -> Result<(&Path, &Path, &Path)> {
        fn need<'a>(p: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
            let p = p
                .as_deref()
                .ok_or_else(|| Error::invalid(format!("no {name} file given")))?;
            if p.is_file() {
                Ok(p)
            } else {
                Err(Error::MissingInput(p.to_path_buf()))
            }
        }
        Ok((
            need(&self.color, "color")?,
            need(&self.depth, "depth")?,
            need(&self.intrinsics, "intrinsics")?,
        ))
    }

    /// The effective configuration in `key=value` form; [`RunConfig::parse`]
    /// reads it back to an equal value.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode={}", self.mode);
        let _ = writeln!(s, "rvoxel={}", self.voxel_resolution);
        if let Some(r) = self.seed_resolution {
            let _ = writeln!(s, "rseed={r}");
        }
        let _ = writeln!(s, "k={}", self.k);
        let _ = writeln!(s, "rmin={}", self.r_min);
        let _ = writeln!(s, "rmax={}", self.r_max);
        let _ = writeln!(s, "lambda={}", self.lambda);
        let _ = writeln!(s, "mu={}", self.mu);
        let _ = writeln!(s, "epsilon={}", self.epsilon);
        let _ = writeln!(s, "m={}", self.m);
        let _ = writeln!(s, "max_iters={}", self.max_iters);
        let _ = writeln!(s, "octaves={}", self.saliency.num_octaves);
        let _ = writeln!(s, "center_sigma={}", self.saliency.center_sigma);
        let _ = writeln!(s, "surround_ratio={}", self.saliency.surround_ratio);
        for (key, path) in [
            ("color", &self.color),
            ("depth", &self.depth),
            ("intrinsics", &self.intrinsics),
            ("gt", &self.ground_truth),
            ("out_dir", &self.out_dir),
        ] {
            if let Some(p) = path {
                let _ = writeln!(s, "{key}={}", p.display());
            }
        }
        let _ = writeln!(s, "rng_seed={}", self.rng_seed);
        if let Some(w) = self.workers {
            let _ = writeln!(s, "workers={w}");
        }
        s
    }

    /// Short label used in sweep outputs.
    pub fn label(&self) -> String {
        match self.mode {
            Mode::Vccs => format!("vccs_rseed{}", self.seed_resolution.unwrap_or(f64::NAN)),
            Mode::Ssv => format!("ssv_k{}_rmin{}_rmax{}", self.k, self.r_min, self.r_max),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_for_ssv() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.mode, Mode::Ssv);
        assert_eq!((cfg.k, cfg.r_min, cfg.r_max), (6, 0.1, 0.3));
        assert_eq!((cfg.lambda, cfg.mu, cfg.epsilon, cfg.voxel_resolution), (0.7, 0.15, 0.15, 0.02));
        cfg.validate().unwrap();
    }

    #[test]
    fn vccs_needs_seed_resolution() {
        let mut cfg = RunConfig::default();
        cfg.set("mode", "vccs").unwrap();
        assert!(cfg.validate().is_err());
        cfg.set("rseed", "0.1").unwrap();
        cfg.validate().unwrap();
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            "lambda=0.5",
            "rvoxel=0",
            "m=-1",
            "max_iters=0",
            "k=0",
            "rmin=0.4",
            "rmin=0.01",
            "octaves=0",
            "surround_ratio=1",
            "mode=vccs\nrseed=0.01",
            "workers=0",
        ];
        for text in bad {
            let cfg = RunConfig::parse(text).unwrap();
            assert!(cfg.validate().is_err(), "{text}");
        }
        assert!(RunConfig::parse("bogus=1").is_err());
        assert!(RunConfig::parse("k=two").is_err());
        assert!(RunConfig::parse("mode=slic").is_err());
        assert!(RunConfig::parse("no equals sign").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::vccs(0.125);
        cfg.depth = Some("scene/depth.pgm".into());
        cfg.rng_seed = 42;
        cfg.lambda = 0.6;
        cfg.mu = 0.25;
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn comments_and_dashed_keys() {
        let cfg = RunConfig::parse("# header\nmax-iters = 3 # trailing\n\nrng_seed=7").unwrap();
        assert_eq!(cfg.max_iters, 3);
        assert_eq!(cfg.rng_seed, 7);
    }

    #[test]
    fn missing_input_is_usage_error() {
        let mut cfg = RunConfig::vccs(0.1);
        cfg.color = Some("/nonexistent/color.ppm".into());
        let err = cfg.require_inputs().unwrap_err();
        assert!(err.is_usage());
        assert!(err.to_string().contains("/nonexistent/color.ppm"));
    }
}
