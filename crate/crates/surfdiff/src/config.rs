//! Experiment configuration: a sectioned key/value text format with
//! command-line overrides, plus the effective-config echo written next to
//! the outputs.
//!
//! ```text
//! [shape]
//! kind = cuboid        # cuboid | box2d | circle | ellipse
//! a = 2.0
//! b = 1.0
//! c = 1.0
//! h = 0.25
//!
//! [model]
//! family = cubic       # isotropic | cubic | signriemannian
//! beta = 0.125
//!
//! [stabilizer]
//! kind = table         # table | constant | sup
//!
//! [time]
//! t_final = 0.5
//! tau = auto           # auto = (2/25) h^2
//!
//! [output]
//! dir = out
//! ```

use crate::anisotropy::AnisotropyModel;
use crate::harness::ShapeSpec;
use crate::stabilizer::K0Opts;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("config validation failed for `{field}`: {msg}")]
    Validation { field: String, msg: String },
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelSpec {
    Isotropic,
    Cubic { beta: f64 },
    SignRiemannian { a: f64, b: f64 },
}

impl ModelSpec {
    pub fn build<const D: usize>(&self) -> AnisotropyModel<D> {
        match *self {
            ModelSpec::Isotropic => AnisotropyModel::Isotropic,
            ModelSpec::Cubic { beta } => AnisotropyModel::CubicPolynomial { beta },
            ModelSpec::SignRiemannian { a, b } => AnisotropyModel::SignRiemannian { a, b },
        }
    }
}

/// How the stabilizing function is obtained.
#[derive(Clone, Debug, PartialEq)]
pub enum StabilizerSpec {
    /// Interpolated k0 table.
    Table,
    /// Fixed constant.
    Constant(f64),
    /// Constant `sup` of the k0 table.
    SupOfTable,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub shape: ShapeSpec,
    pub h: f64,
    pub model: ModelSpec,
    pub stabilizer: StabilizerSpec,
    /// Explicit time step; `None` applies `τ = (2/25) h²`.
    pub tau: Option<f64>,
    pub t_final: f64,
    pub newton_tolerance: f64,
    pub newton_max_iters: usize,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Union-sampling resolution; 0 selects the per-dimension default.
    pub resolution: usize,
    pub keep_every: usize,
    /// Convergence ladder depth: levels h, h/2, ..., h/2^(levels-1).
    pub levels: usize,
    /// Convergence reference mesh size.
    pub h_ref: f64,
    pub k0: K0Opts,
}

impl ExperimentConfig {
    pub fn dim(&self) -> usize {
        self.shape.dim()
    }

    pub fn tau_effective(&self) -> f64 {
        self.tau.unwrap_or(2.0 / 25.0 * self.h * self.h)
    }

    /// Effective config in the same parseable format (the echo file).
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[shape]");
        let kind = match self.shape {
            ShapeSpec::Cuboid { .. } => "cuboid",
            ShapeSpec::Box2d { .. } => "box2d",
            ShapeSpec::Circle { .. } => "circle",
            ShapeSpec::Ellipse { .. } => "ellipse",
        };
        let _ = writeln!(s, "kind = {kind}");
        let names: &[&str] = match self.shape {
            ShapeSpec::Cuboid { .. } => &["a", "b", "c"],
            ShapeSpec::Box2d { .. } => &["a", "b"],
            ShapeSpec::Circle { .. } => &["r"],
            ShapeSpec::Ellipse { .. } => &["rx", "ry"],
        };
        for (name, value) in names.iter().zip(self.shape.params()) {
            let _ = writeln!(s, "{name} = {value:.16e}");
        }
        let _ = writeln!(s, "h = {:.16e}", self.h);
        let _ = writeln!(s, "\n[model]");
        match self.model {
            ModelSpec::Isotropic => {
                let _ = writeln!(s, "family = isotropic");
            }
            ModelSpec::Cubic { beta } => {
                let _ = writeln!(s, "family = cubic");
                let _ = writeln!(s, "beta = {beta:.16e}");
            }
            ModelSpec::SignRiemannian { a, b } => {
                let _ = writeln!(s, "family = signriemannian");
                let _ = writeln!(s, "a = {a:.16e}");
                let _ = writeln!(s, "b = {b:.16e}");
            }
        }
        let _ = writeln!(s, "\n[stabilizer]");
        match self.stabilizer {
            StabilizerSpec::Table => {
                let _ = writeln!(s, "kind = table");
            }
            StabilizerSpec::Constant(k) => {
                let _ = writeln!(s, "kind = constant");
                let _ = writeln!(s, "value = {k:.16e}");
            }
            StabilizerSpec::SupOfTable => {
                let _ = writeln!(s, "kind = sup");
            }
        }
        let _ = writeln!(s, "alpha_tol = {:.16e}", self.k0.alpha_tol);
        let _ = writeln!(s, "alpha_max = {:.16e}", self.k0.alpha_max);
        let _ = writeln!(s, "n_theta = {}", self.k0.n_theta);
        let _ = writeln!(s, "n_euler = {}", self.k0.n_euler);
        let _ = writeln!(s, "table_n_2d = {}", self.k0.table_n_2d);
        let _ = writeln!(s, "refine = {}", self.k0.refine);
        let _ = writeln!(s, "\n[time]");
        match self.tau {
            Some(tau) => {
                let _ = writeln!(s, "tau = {tau:.16e}");
            }
            None => {
                let _ = writeln!(s, "tau = auto");
            }
        }
        let _ = writeln!(s, "t_final = {:.16e}", self.t_final);
        let _ = writeln!(s, "epsilon = {:.16e}", self.newton_tolerance);
        let _ = writeln!(s, "max_newton = {}", self.newton_max_iters);
        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "dir = {}", self.out_dir.display());
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "resolution = {}", self.resolution);
        let _ = writeln!(s, "keep_every = {}", self.keep_every);
        let _ = writeln!(s, "levels = {}", self.levels);
        let _ = writeln!(s, "h_ref = {:.16e}", self.h_ref);
        s
    }
}

fn parse_text(
    path: &str,
    text: &str,
) -> Result<BTreeMap<String, (String, usize)>, ConfigError> {
    let mut map = BTreeMap::new();
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            if !line.ends_with(']') || line.len() < 3 {
                return Err(ConfigError::Parse {
                    path: path.into(),
                    line: line_no,
                    msg: format!("malformed section header {line:?}"),
                });
            }
            section = line[1..line.len() - 1].trim().to_string();
            continue;
        }
        let Some(eq) = line.find('=') else {
            return Err(ConfigError::Parse {
                path: path.into(),
                line: line_no,
                msg: format!("expected `key = value`, found {line:?}"),
            });
        };
        let key = line[..eq].trim();
        let value = line[eq + 1..].trim();
        if section.is_empty() {
            return Err(ConfigError::Parse {
                path: path.into(),
                line: line_no,
                msg: format!("key {key:?} before any [section]"),
            });
        }
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Parse {
                path: path.into(),
                line: line_no,
                msg: "empty key or value".into(),
            });
        }
        map.insert(format!("{section}.{key}"), (value.to_string(), line_no));
    }
    Ok(map)
}

struct Fields {
    map: BTreeMap<String, (String, usize)>,
    used: std::collections::BTreeSet<String>,
}

impl Fields {
    fn take(&mut self, key: &str) -> Option<String> {
        self.used.insert(key.to_string());
        self.map.get(key).map(|(v, _)| v.clone())
    }

    fn f64(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| ConfigError::Validation {
                field: key.into(),
                msg: format!("not a number: {v:?}"),
            }),
        }
    }

    fn usize(&mut self, key: &str) -> Result<Option<usize>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| ConfigError::Validation {
                field: key.into(),
                msg: format!("not a nonnegative integer: {v:?}"),
            }),
        }
    }

    fn u64(&mut self, key: &str) -> Result<Option<u64>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => {
                let parsed = if let Some(hex) = v.strip_prefix("0x") {
                    u64::from_str_radix(hex, 16).ok()
                } else {
                    v.parse().ok()
                };
                parsed.map(Some).ok_or(ConfigError::Validation {
                    field: key.into(),
                    msg: format!("not an unsigned integer: {v:?}"),
                })
            }
        }
    }

    fn require(&mut self, key: &str) -> Result<String, ConfigError> {
        self.take(key).ok_or_else(|| ConfigError::Validation {
            field: key.into(),
            msg: "missing required key".into(),
        })
    }

    fn require_f64(&mut self, key: &str) -> Result<f64, ConfigError> {
        self.f64(key)?.ok_or_else(|| ConfigError::Validation {
            field: key.into(),
            msg: "missing required key".into(),
        })
    }

    fn reject_unknown(&self) -> Result<(), ConfigError> {
        for key in self.map.keys() {
            if !self.used.contains(key) {
                return Err(ConfigError::Validation {
                    field: key.clone(),
                    msg: "unknown key".into(),
                });
            }
        }
        Ok(())
    }
}

/// Parses a config file and applies `section.key=value` overrides on top.
pub fn parse_config(
    path: &std::path::Path,
    overrides: &[(String, String)],
) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut map = parse_text(&display, &text)?;
    for (k, v) in overrides {
        if !k.contains('.') {
            return Err(ConfigError::Validation {
                field: k.clone(),
                msg: "override keys use the section.key form".into(),
            });
        }
        map.insert(k.clone(), (v.clone(), 0));
    }
    build_config(map)
}

/// Parses config text without a file (used for echo round-trips).
pub fn parse_config_text(text: &str) -> Result<ExperimentConfig, ConfigError> {
    build_config(parse_text("<inline>", text)?)
}

fn build_config(map: BTreeMap<String, (String, usize)>) -> Result<ExperimentConfig, ConfigError> {
    let mut f = Fields {
        map,
        used: Default::default(),
    };
    let kind = f.require("shape.kind")?;
    let shape = match kind.as_str() {
        "cuboid" => ShapeSpec::Cuboid {
            a: f.require_f64("shape.a")?,
            b: f.require_f64("shape.b")?,
            c: f.require_f64("shape.c")?,
        },
        "box2d" => ShapeSpec::Box2d {
            a: f.require_f64("shape.a")?,
            b: f.require_f64("shape.b")?,
        },
        "circle" => ShapeSpec::Circle {
            r: f.require_f64("shape.r")?,
        },
        "ellipse" => ShapeSpec::Ellipse {
            rx: f.require_f64("shape.rx")?,
            ry: f.require_f64("shape.ry")?,
        },
        other => {
            return Err(ConfigError::Validation {
                field: "shape.kind".into(),
                msg: format!("unknown shape {other:?}"),
            })
        }
    };
    let h = f.require_f64("shape.h")?;
    if h <= 0.0 {
        return Err(ConfigError::Validation {
            field: "shape.h".into(),
            msg: "mesh size must be positive".into(),
        });
    }
    let family = f.require("model.family")?;
    let model = match family.as_str() {
        "isotropic" => ModelSpec::Isotropic,
        "cubic" => ModelSpec::Cubic {
            beta: f.require_f64("model.beta")?,
        },
        "signriemannian" => ModelSpec::SignRiemannian {
            a: f.require_f64("model.a")?,
            b: f.require_f64("model.b")?,
        },
        other => {
            return Err(ConfigError::Validation {
                field: "model.family".into(),
                msg: format!("unknown family {other:?}"),
            })
        }
    };
    let stab_kind = f.take("stabilizer.kind").unwrap_or_else(|| "table".into());
    let stabilizer = match stab_kind.as_str() {
        "table" => StabilizerSpec::Table,
        "sup" => StabilizerSpec::SupOfTable,
        "constant" => StabilizerSpec::Constant(f.require_f64("stabilizer.value")?),
        other => {
            return Err(ConfigError::Validation {
                field: "stabilizer.kind".into(),
                msg: format!("unknown stabilizer kind {other:?}"),
            })
        }
    };
    let mut k0 = K0Opts::default();
    if let Some(v) = f.f64("stabilizer.alpha_tol")? {
        k0.alpha_tol = v;
    }
    if let Some(v) = f.f64("stabilizer.alpha_max")? {
        k0.alpha_max = v;
    }
    if let Some(v) = f.usize("stabilizer.n_theta")? {
        k0.n_theta = v;
    }
    if let Some(v) = f.usize("stabilizer.n_euler")? {
        k0.n_euler = v;
    }
    if let Some(v) = f.usize("stabilizer.table_n_2d")? {
        k0.table_n_2d = v;
    }
    if let Some(v) = f.take("stabilizer.refine") {
        k0.refine = v.parse().map_err(|_| ConfigError::Validation {
            field: "stabilizer.refine".into(),
            msg: format!("not a boolean: {v:?}"),
        })?;
    }
    let tau = match f.take("time.tau") {
        None => None,
        Some(v) if v == "auto" => None,
        Some(v) => Some(v.parse().map_err(|_| ConfigError::Validation {
            field: "time.tau".into(),
            msg: format!("expected a number or `auto`, found {v:?}"),
        })?),
    };
    if let Some(t) = tau {
        if t <= 0.0 {
            return Err(ConfigError::Validation {
                field: "time.tau".into(),
                msg: "time step must be positive".into(),
            });
        }
    }
    let t_final = f.f64("time.t_final")?.unwrap_or(0.5);
    if t_final < 0.0 {
        return Err(ConfigError::Validation {
            field: "time.t_final".into(),
            msg: "final time must be nonnegative".into(),
        });
    }
    let newton_tolerance = f.f64("time.epsilon")?.unwrap_or(1e-12);
    let newton_max_iters = f.usize("time.max_newton")?.unwrap_or(50);
    let out_dir = PathBuf::from(f.take("output.dir").unwrap_or_else(|| "out".into()));
    let seed = f.u64("output.seed")?.unwrap_or(crate::rng::DEFAULT_SEED);
    let resolution = f.usize("output.resolution")?.unwrap_or(0);
    let keep_every = f.usize("output.keep_every")?.unwrap_or(1).max(1);
    let levels = f.usize("output.levels")?.unwrap_or(2).max(1);
    let h_ref = f.f64("output.h_ref")?.unwrap_or(h / 4.0);
    if h_ref <= 0.0 {
        return Err(ConfigError::Validation {
            field: "output.h_ref".into(),
            msg: "reference mesh size must be positive".into(),
        });
    }
    f.reject_unknown()?;
    Ok(ExperimentConfig {
        shape,
        h,
        model,
        stabilizer,
        tau,
        t_final,
        newton_tolerance,
        newton_max_iters,
        out_dir,
        seed,
        resolution,
        keep_every,
        levels,
        h_ref,
        k0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
[shape]
kind = cuboid
a = 2.0
b = 1.0
c = 1.0
h = 0.5

[model]
family = cubic
beta = 0.125
";

    fn write_tmp(text: &str) -> std::path::PathBuf {
        static COUNTER: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
        let id = COUNTER.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let dir = std::env::temp_dir().join("surfdiff_config_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(format!("cfg_{}_{id}.ini", std::process::id()));
        std::fs::write(&path, text).unwrap();
        path
    }

    #[test]
    fn minimal_config_and_tau_rule() {
        let cfg = parse_config(&write_tmp(MINIMAL), &[]).unwrap();
        assert_eq!(cfg.dim(), 3);
        assert_eq!(cfg.model, ModelSpec::Cubic { beta: 0.125 });
        assert!((cfg.tau_effective() - 2.0 / 25.0 * 0.25).abs() < 1e-18);
        assert_eq!(cfg.stabilizer, StabilizerSpec::Table);
        assert_eq!(cfg.seed, 0x5EED);
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let text = format!("{MINIMAL}foo = 1\n");
        let err = parse_config(&write_tmp(&text), &[]).unwrap_err();
        match err {
            ConfigError::Validation { field, .. } => assert_eq!(field, "model.foo"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn override_applies_last() {
        let cfg = parse_config(
            &write_tmp(MINIMAL),
            &[("model.beta".into(), "0.25".into())],
        )
        .unwrap();
        assert_eq!(cfg.model, ModelSpec::Cubic { beta: 0.25 });
    }

    #[test]
    fn parse_error_carries_line_number() {
        let text = "[shape]\nkind cuboid\n";
        let err = parse_config(&write_tmp(text), &[]).unwrap_err();
        match err {
            ConfigError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn echo_round_trips() {
        let cfg = parse_config(
            &write_tmp(MINIMAL),
            &[
                ("stabilizer.kind".into(), "sup".into()),
                ("time.t_final".into(), "0.25".into()),
                ("output.seed".into(), "0xABCD".into()),
            ],
        )
        .unwrap();
        let echoed = parse_config_text(&cfg.echo()).unwrap();
        assert_eq!(cfg, echoed);
    }
}
