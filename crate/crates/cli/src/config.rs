use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, ValueEnum};
use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Gwv,
    Mvub,
    Multiwindow,
    Sinusoidal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    F64bin,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::F64bin => "f64bin",
        }
    }
}

fn parse_enum<T: ValueEnum>(key: &str, value: &str) -> Result<T, CliError> {
    T::from_str(value, true).map_err(|_| CliError::Config(format!("invalid value '{value}' for {key}")))
}

/// Command-line overrides; every flag mirrors a config-file key.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Flat key=value configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "L")]
    pub l: Option<usize>,
    #[arg(long = "tau-max")]
    pub tau_max: Option<usize>,
    #[arg(long = "nu-max")]
    pub nu_max: Option<usize>,
    #[arg(long = "sigma-n2")]
    pub sigma_n2: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum)]
    pub estimator: Option<EstimatorKind>,
    /// Window support length (also the sinusoidal taper length)
    #[arg(long = "T-len")]
    pub t_len: Option<usize>,
    /// Number of matched windows
    #[arg(long = "N")]
    pub n: Option<usize>,
    /// Number of sinusoidal tapers
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    #[serde(rename = "L")]
    pub l: usize,
    pub tau_max: usize,
    pub nu_max: usize,
    pub sigma_n2: f64,
    pub alpha: f64,
    pub estimator: EstimatorKind,
    #[serde(rename = "T_len")]
    pub t_len: Option<usize>,
    #[serde(rename = "N")]
    pub n: Option<usize>,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub replicates: usize,
    pub seed: u64,
    #[serde(skip)]
    pub out: PathBuf,
    pub format: Format,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            l: 16,
            tau_max: 1,
            nu_max: 1,
            sigma_n2: 0.0,
            alpha: 0.0,
            estimator: EstimatorKind::Mvub,
            t_len: None,
            n: None,
            k: None,
            replicates: 100_000,
            seed: 0,
            out: PathBuf::from("out"),
            format: Format::Csv,
        }
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("invalid value '{value}' for {key}")))
}

impl RunConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "L" => self.l = num(key, value)?,
            "tau_max" => self.tau_max = num(key, value)?,
            "nu_max" => self.nu_max = num(key, value)?,
            "sigma_n2" => self.sigma_n2 = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "estimator" => self.estimator = parse_enum(key, value)?,
            "T_len" => self.t_len = Some(num(key, value)?),
            "N" => self.n = Some(num(key, value)?),
            "K" => self.k = Some(num(key, value)?),
            "replicates" => self.replicates = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "format" => self.format = parse_enum(key, value)?,
            _ => return Err(CliError::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn parse_text(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key=value", i + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse_text(&text)
    }

    pub fn resolve(o: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match &o.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = o.$field.clone() {
                    cfg.$field = v;
                }
            };
            ($field:ident, opt) => {
                if o.$field.is_some() {
                    cfg.$field = o.$field;
                }
            };
        }
        take!(l);
        take!(tau_max);
        take!(nu_max);
        take!(sigma_n2);
        take!(alpha);
        take!(estimator);
        take!(t_len, opt);
        take!(n, opt);
        take!(k, opt);
        take!(replicates);
        take!(seed);
        take!(out);
        take!(format);
        cfg.check()?;
        Ok(cfg)
    }

    /// Checks every constraint the downstream operations impose.
    pub fn check(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.l < 4 || !self.l.is_multiple_of(2) {
            return bad(format!("L must be even and at least 4 (got {})", self.l));
        }
        let half = self.l / 2;
        if self.tau_max > half {
            return bad(format!("tau_max exceeds grid ({} > L/2 = {half})", self.tau_max));
        }
        if self.nu_max > half {
            return bad(format!("nu_max exceeds grid ({} > L/2 = {half})", self.nu_max));
        }
        if !self.sigma_n2.is_finite() || self.sigma_n2 < 0.0 {
            return bad(format!("sigma_n2 must be finite and >= 0 (got {})", self.sigma_n2));
        }
        if !(-0.5..=0.5).contains(&self.alpha) {
            return bad(format!("alpha must lie in [-1/2, 1/2] (got {})", self.alpha));
        }
        let t_len = self.t_len();
        if t_len == 0 || t_len > self.l {
            return bad(format!("T_len must satisfy 1 <= T_len <= L = {} (got {t_len})", self.l));
        }
        if let Some(n) = self.n {
            if n == 0 {
                return bad("N must be at least 1".into());
            }
            if n > t_len {
                return bad(format!("N must not exceed T_len = {t_len} (got {n})"));
            }
        }
        if let Some(k) = self.k {
            if k == 0 {
                return bad("K must be at least 1".into());
            }
            if k > t_len {
                return bad(format!("K must not exceed T_len = {t_len} (got {k})"));
            }
        }
        Ok(())
    }

    pub fn t_len(&self) -> usize {
        self.t_len.unwrap_or(self.l)
    }

    pub fn taper_count(&self) -> usize {
        self.k.unwrap_or(4).min(self.t_len())
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "L={} tau_max={} nu_max={} sigma_n2={} alpha={} estimator={:?} seed={}",
            self.l, self.tau_max, self.nu_max, self.sigma_n2, self.alpha, self.estimator, self.seed
        )
    }
}
