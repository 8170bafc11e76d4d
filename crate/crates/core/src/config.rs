//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Lists are comma separated.
//! Relative paths resolve against the directory holding the file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::train::PbtConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train_dirs: Vec<PathBuf>,
    pub val_dirs: Vec<PathBuf>,
    pub test_dirs: Vec<PathBuf>,
    pub blocks: usize,
    pub filters: usize,
    pub nw_depth: usize,
    pub patch_size: usize,
    /// Width of the NW GAUSS baseline; `None` derives it from fiber spacing.
    pub nw_gauss_sigma: Option<f64>,
    pub pbt: PbtConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train_dirs: Vec::new(),
            val_dirs: Vec::new(),
            test_dirs: Vec::new(),
            blocks: 16,
            filters: 64,
            nw_depth: 3,
            patch_size: crate::train::PATCH_SIZE,
            nw_gauss_sigma: None,
            pbt: PbtConfig::default(),
        }
    }
}

/// Parses `key = value` lines, rejecting duplicates and malformed lines.
pub fn parse_pairs(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(parse_err(path, format!("line {}: expected key = value", no + 1)));
        };
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(parse_err(path, format!("line {}: empty key", no + 1)));
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(parse_err(path, format!("line {}: duplicate key {key}", no + 1)));
        }
    }
    Ok(out)
}

fn parse_err(path: &Path, msg: String) -> Error {
    Error::Parse {
        what: "config",
        path: path.to_path_buf(),
        msg,
    }
}

fn value<T: FromStr>(key: &str, v: &str, path: &Path) -> Result<T> {
    v.parse()
        .map_err(|_| parse_err(path, format!("{key}: cannot parse {v:?}")))
}

fn list<T: FromStr>(key: &str, v: &str, path: &Path) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| value(key, s, path))
        .collect()
}

fn paths(v: &str, base: &Path) -> Vec<PathBuf> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| base.join(s))
        .collect()
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        let mut cfg = RunConfig::default();
        for (key, v) in parse_pairs(text, path)? {
            let k = key.as_str();
            match k {
                "train_dirs" => cfg.train_dirs = paths(&v, base),
                "val_dirs" => cfg.val_dirs = paths(&v, base),
                "test_dirs" => cfg.test_dirs = paths(&v, base),
                "blocks" => cfg.blocks = value(k, &v, path)?,
                "filters" => cfg.filters = value(k, &v, path)?,
                "nw_depth" => cfg.nw_depth = value(k, &v, path)?,
                "patch_size" => cfg.patch_size = value(k, &v, path)?,
                "nw_gauss_sigma" => {
                    cfg.nw_gauss_sigma = if v == "auto" {
                        None
                    } else {
                        Some(value(k, &v, path)?)
                    }
                }
                "population" => cfg.pbt.population = value(k, &v, path)?,
                "iterations" => cfg.pbt.iterations = value(k, &v, path)?,
                "interval" => cfg.pbt.interval = value(k, &v, path)?,
                "lr_grid" => cfg.pbt.lr_grid = list(k, &v, path)?,
                "epochs_per_iteration" => cfg.pbt.epochs_per_iteration = value(k, &v, path)?,
                "perturb_factors" => cfg.pbt.perturb_factors = list(k, &v, path)?,
                "batch_size" => cfg.pbt.batch_size = value(k, &v, path)?,
                "augment" => cfg.pbt.augment = value(k, &v, path)?,
                "seed" => cfg.pbt.seed = value(k, &v, path)?,
                _ => return Err(parse_err(path, format!("unknown key {k}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_dirs.is_empty() || self.val_dirs.is_empty() || self.test_dirs.is_empty() {
            return Err(Error::Config("train_dirs, val_dirs and test_dirs are required".into()));
        }
        if self.blocks == 0 || self.filters == 0 || self.nw_depth == 0 || self.patch_size == 0 {
            return Err(Error::Config("blocks, filters, nw_depth and patch_size must be positive".into()));
        }
        if let Some(s) = self.nw_gauss_sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("nw_gauss_sigma must be positive, got {s}")));
            }
        }
        self.pbt.validate()
    }

    /// Canonical text form with absolute-or-given paths; parses back to `self`.
    pub fn to_text(&self) -> String {
        let join_paths = |ps: &[PathBuf]| {
            ps.iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let join = |xs: &[f64]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        let _ = writeln!(out, "train_dirs = {}", join_paths(&self.train_dirs));
        let _ = writeln!(out, "val_dirs = {}", join_paths(&self.val_dirs));
        let _ = writeln!(out, "test_dirs = {}", join_paths(&self.test_dirs));
        let _ = writeln!(out, "blocks = {}", self.blocks);
        let _ = writeln!(out, "filters = {}", self.filters);
        let _ = writeln!(out, "nw_depth = {}", self.nw_depth);
        let _ = writeln!(out, "patch_size = {}", self.patch_size);
        let _ = writeln!(
            out,
            "nw_gauss_sigma = {}",
            self.nw_gauss_sigma.map_or("auto".to_string(), |s| s.to_string())
        );
        let p = &self.pbt;
        let _ = writeln!(out, "population = {}", p.population);
        let _ = writeln!(out, "iterations = {}", p.iterations);
        let _ = writeln!(out, "interval = {}", p.interval);
        let _ = writeln!(out, "lr_grid = {}", join(&p.lr_grid));
        let _ = writeln!(out, "epochs_per_iteration = {}", p.epochs_per_iteration);
        let _ = writeln!(out, "perturb_factors = {}", join(&p.perturb_factors));
        let _ = writeln!(out, "batch_size = {}", p.batch_size);
        let _ = writeln!(out, "augment = {}", p.augment);
        let _ = writeln!(out, "seed = {}", p.seed);
        out
    }
}
