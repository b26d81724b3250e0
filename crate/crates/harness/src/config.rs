//! TOML experiment and bound configurations.
//!
//! ```toml
//! [experiment]
//! scheme = "skp-cc"        # skp-cc | skp-pcc | skp-u | custom
//! M = 8
//! Ka = [10]
//! EbN0_dB = [0.0, 5.0, 10.0, 15.0]
//! frames = 100
//! master_seed = 1
//! workers = 1              # optional
//! output = "results.csv"   # optional
//! precision = "f64"        # optional, f64 | f32
//!
//! [custom]                 # only with scheme = "custom"
//! L_IM = 8
//! L_a = 40
//! L_x = 80
//! e_ref = 7
//! fec = "1/2"
//!
//! [receiver]               # optional; every field has a default
//! n_top = 10
//! p_thr = 3
//! t_max = 30
//! outer_iters = 10
//!
//! [receiver.amp]
//! damping = 0.7
//! max_iter = 30
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;
use skp_ura::bigamp::BigAmpOpts;
use skp_ura::bound::BoundConfig;
use skp_ura::config::{ConfigError, DEFAULT_B, DEFAULT_T_TOT};
use skp_ura::receiver::ReceiverOpts;
use skp_ura::{FecMode, Real, Scheme, SkpConfig, SkpParams};

#[derive(Debug, thiserror::Error)]
pub enum HarnessConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("{field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error(transparent)]
    System(#[from] ConfigError),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> HarnessConfigError {
    HarnessConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub scheme: String,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "Ka")]
    pub ka: Vec<usize>,
    #[serde(rename = "EbN0_dB")]
    pub ebn0_db: Vec<f64>,
    pub frames: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub precision: Precision,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomCode {
    #[serde(rename = "L_IM")]
    pub l_im: usize,
    #[serde(rename = "L_a")]
    pub l_a: usize,
    #[serde(rename = "L_x")]
    pub l_x: usize,
    pub e_ref: usize,
    pub fec: String,
    #[serde(rename = "B", default = "default_b")]
    pub b: usize,
    #[serde(rename = "T_tot", default = "default_t_tot")]
    pub t_tot: usize,
}

fn default_b() -> usize {
    DEFAULT_B
}

fn default_t_tot() -> usize {
    DEFAULT_T_TOT
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AmpSection {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub var_floor: f64,
    pub init_jitter: f64,
    pub adaptive_damping: bool,
}

impl Default for AmpSection {
    fn default() -> Self {
        let d = ReceiverOpts::<f64>::default().amp;
        AmpSection {
            damping: d.damping,
            tol: d.tol,
            max_iter: d.max_iter,
            var_floor: d.var_floor,
            init_jitter: d.init_jitter,
            adaptive_damping: d.adaptive_damping,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReceiverSection {
    pub n_top: usize,
    pub p_thr: usize,
    pub t_max: usize,
    pub outer_iters: usize,
    pub amp: AmpSection,
}

impl Default for ReceiverSection {
    fn default() -> Self {
        let d = ReceiverOpts::<f64>::default();
        ReceiverSection {
            n_top: d.n_top,
            p_thr: d.p_thr,
            t_max: d.t_max,
            outer_iters: d.outer_iters,
            amp: AmpSection::default(),
        }
    }
}

impl ReceiverSection {
    pub fn to_opts<T: Real>(&self) -> ReceiverOpts<T> {
        ReceiverOpts {
            n_top: self.n_top,
            p_thr: self.p_thr,
            t_max: self.t_max,
            outer_iters: self.outer_iters,
            amp: BigAmpOpts {
                damping: T::c(self.amp.damping),
                tol: T::c(self.amp.tol),
                max_iter: self.amp.max_iter,
                var_floor: T::c(self.amp.var_floor),
                init_jitter: T::c(self.amp.init_jitter),
                adaptive_damping: self.amp.adaptive_damping,
            },
        }
    }

    fn validate(&self) -> Result<(), HarnessConfigError> {
        for (field, v) in [
            ("receiver.n_top", self.n_top),
            ("receiver.p_thr", self.p_thr),
            ("receiver.t_max", self.t_max),
            ("receiver.outer_iters", self.outer_iters),
            ("receiver.amp.max_iter", self.amp.max_iter),
        ] {
            if v == 0 {
                return Err(invalid(field, "must be a positive integer"));
            }
        }
        if !(self.amp.damping > 0.0 && self.amp.damping <= 1.0) {
            return Err(invalid("receiver.amp.damping", "must lie in (0, 1]"));
        }
        if !(self.amp.var_floor > 0.0) || !(self.amp.tol >= 0.0) || !(self.amp.init_jitter > 0.0) {
            return Err(invalid("receiver.amp", "var_floor and init_jitter must be positive, tol non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub experiment: Experiment,
    #[serde(default)]
    pub custom: Option<CustomCode>,
    #[serde(default)]
    pub receiver: ReceiverSection,
}

/// One sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub index: usize,
    pub cfg: SkpConfig,
}

/// Parsed and validated experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub scheme_name: String,
    pub points: Vec<Point>,
    pub frames: usize,
    pub master_seed: u64,
    pub workers: usize,
    pub output: PathBuf,
    pub precision: Precision,
    pub receiver: ReceiverSection,
}

fn read(path: &Path) -> Result<String, HarnessConfigError> {
    std::fs::read_to_string(path).map_err(|source| HarnessConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessConfigError> {
        let text = read(path)?;
        Self::parse(&text).map_err(|e| match e {
            HarnessConfigError::Parse { source, .. } => HarnessConfigError::Parse {
                path: path.to_path_buf(),
                source,
            },
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, HarnessConfigError> {
        let file: ExperimentFile = toml::from_str(text).map_err(|source| HarnessConfigError::Parse {
            path: PathBuf::from("<config>"),
            source,
        })?;
        let e = &file.experiment;
        if e.ka.is_empty() {
            return Err(invalid("experiment.Ka", "sweep list is empty"));
        }
        if e.ebn0_db.is_empty() {
            return Err(invalid("experiment.EbN0_dB", "sweep list is empty"));
        }
        if e.frames == 0 {
            return Err(invalid("experiment.frames", "must be at least 1"));
        }
        if e.workers == Some(0) {
            return Err(invalid("experiment.workers", "must be at least 1"));
        }
        file.receiver.validate()?;
        let make = |ka: usize, db: f64| -> Result<SkpConfig, HarnessConfigError> {
            if e.scheme == "custom" {
                let c = file
                    .custom
                    .as_ref()
                    .ok_or_else(|| invalid("custom", "scheme = \"custom\" needs a [custom] section"))?;
                Ok(SkpConfig::new(SkpParams {
                    m: e.m,
                    k_total: ka,
                    k_active: ka,
                    t_tot: c.t_tot,
                    b: c.b,
                    l_im: c.l_im,
                    l_a: c.l_a,
                    l_x: c.l_x,
                    e_ref: c.e_ref,
                    fec: FecMode::from_str(&c.fec)?,
                    ebn0_db: db,
                })?)
            } else {
                if file.custom.is_some() {
                    return Err(invalid("custom", "only allowed with scheme = \"custom\""));
                }
                let scheme = Scheme::from_str(&e.scheme)?;
                Ok(SkpConfig::new(SkpParams::from_scheme(scheme, e.m, ka, db))?)
            }
        };
        let mut points = Vec::with_capacity(e.ka.len() * e.ebn0_db.len());
        for &ka in &e.ka {
            for &db in &e.ebn0_db {
                points.push(Point {
                    index: points.len(),
                    cfg: make(ka, db)?,
                });
            }
        }
        Ok(ExperimentConfig {
            scheme_name: e.scheme.clone(),
            points,
            frames: e.frames,
            master_seed: e.master_seed,
            workers: e.workers.unwrap_or(1),
            output: e.output.clone().unwrap_or_else(|| PathBuf::from("results.csv")),
            precision: e.precision,
            receiver: file.receiver,
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSection {
    #[serde(rename = "M")]
    pub m: Vec<usize>,
    #[serde(rename = "Ka")]
    pub ka: Vec<usize>,
    pub eps: f64,
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    #[serde(default = "default_lo")]
    pub lo_db: f64,
    #[serde(default = "default_hi")]
    pub hi_db: f64,
    #[serde(default = "default_tol")]
    pub tol_db: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(rename = "B", default = "default_b")]
    pub b: usize,
    #[serde(rename = "T_tot", default = "default_t_tot")]
    pub t_tot: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_realizations() -> usize {
    100_000
}
fn default_lo() -> f64 {
    -10.0
}
fn default_hi() -> f64 {
    30.0
}
fn default_tol() -> f64 {
    0.05
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundFile {
    pub bound: BoundSection,
}

/// Bound sweep: one [`BoundConfig`] per `(M, Ka)` in input order.
#[derive(Debug, Clone)]
pub struct BoundSweep {
    pub configs: Vec<BoundConfig>,
    pub output: PathBuf,
}

impl BoundSweep {
    pub fn load(path: &Path) -> Result<Self, HarnessConfigError> {
        let text = read(path)?;
        Self::parse(&text).map_err(|e| match e {
            HarnessConfigError::Parse { source, .. } => HarnessConfigError::Parse {
                path: path.to_path_buf(),
                source,
            },
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, HarnessConfigError> {
        let file: BoundFile = toml::from_str(text).map_err(|source| HarnessConfigError::Parse {
            path: PathBuf::from("<config>"),
            source,
        })?;
        let b = file.bound;
        if b.m.is_empty() || b.ka.is_empty() {
            return Err(invalid("bound", "M and Ka lists must be nonempty"));
        }
        let mut configs = Vec::new();
        for &m in &b.m {
            for &ka in &b.ka {
                let cfg = BoundConfig {
                    m,
                    k_active: ka,
                    t_tot: b.t_tot,
                    b: b.b,
                    eps: b.eps,
                    realizations: b.realizations,
                    lo_db: b.lo_db,
                    hi_db: b.hi_db,
                    tol_db: b.tol_db,
                    seed: b.seed,
                };
                cfg.validate().map_err(|e| invalid("bound", e.to_string()))?;
                configs.push(cfg);
            }
        }
        Ok(BoundSweep {
            configs,
            output: b.output.unwrap_or_else(|| PathBuf::from("bound.csv")),
        })
    }
}
