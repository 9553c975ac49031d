//! Run configuration: an INI-style key-value format with sections, strict
//! about unknown keys (with a nearest-match suggestion) and about value
//! invariants, so a typo fails loudly instead of running the wrong problem.

use std::fs;
use std::path::Path;

use crate::analytic::named_pair_field;
use crate::error::Error;
use crate::model::BoussinesqParams;
use crate::state::NewtonOptions;
use crate::Result;

/// How the desired states (u_d, y_d) are produced.
#[derive(Debug, Clone, PartialEq)]
pub enum DesiredSpec {
    /// Named analytic expressions for both targets.
    Analytic { u_d: String, y_d: String },
    /// Forward solve at a named control pattern; targets are the resulting
    /// discrete fields, so the optimum is known by construction.
    InverseCrime { ustar: String },
    /// Same, but the control is imported from a previously exported CSV.
    FromFile { path: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SscOptions {
    /// Threshold for the strongly active set; `None` picks the default
    /// (a small fraction of the largest stationarity defect).
    pub epsilon: Option<f64>,
    pub directions: usize,
    pub growth_radius: f64,
    pub growth_samples: usize,
}

impl Default for SscOptions {
    fn default() -> SscOptions {
        SscOptions {
            epsilon: None,
            directions: 50,
            growth_radius: 0.1,
            growth_samples: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub n: usize,
    pub params: BoussinesqParams,
    /// Named boundary data for the scalar pair.
    pub ydata: String,
    /// Uniform per-component control bounds (may be ±inf).
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub desired: DesiredSpec,
    pub newton: NewtonOptions,
    pub kkt_tol: f64,
    pub max_iterations: usize,
    pub ssc: SscOptions,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            n: 8,
            params: BoussinesqParams::default(),
            ydata: "zero".to_string(),
            lower: [f64::NEG_INFINITY; 2],
            upper: [f64::INFINITY; 2],
            desired: DesiredSpec::Analytic {
                u_d: "zero".to_string(),
                y_d: "zero".to_string(),
            },
            newton: NewtonOptions::default(),
            kkt_tol: 1e-6,
            max_iterations: 200,
            ssc: SscOptions::default(),
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Re-checks every invariant. The parser enforces these with line
    /// context; this catches violations introduced by flag overrides.
    pub fn validate(&self) -> Result<()> {
        let reject = |msg: String| Err(Error::RejectedInput(msg));
        if self.n < 1 {
            return reject(format!("n must be at least 1, got {}", self.n));
        }
        if self.params.lambda <= 0.0 {
            return reject(format!("lambda must be positive, got {}", self.params.lambda));
        }
        if self.params.nu0 <= 0.0 {
            return reject(format!("nu0 must be positive, got {}", self.params.nu0));
        }
        if !(0.0..1.0).contains(&self.params.gamma) {
            return reject(format!("gamma must lie in [0, 1), got {}", self.params.gamma));
        }
        for (name, tol) in [("newton_tol", self.newton.tol), ("kkt_tol", self.kkt_tol)] {
            if tol <= 0.0 {
                return reject(format!("{name} must be positive, got {tol}"));
            }
        }
        for c in 0..2 {
            if self.lower[c] > self.upper[c] {
                return reject(format!(
                    "control bounds out of order in component {c}: lower {} > upper {}",
                    self.lower[c], self.upper[c]
                ));
            }
        }
        if self.ssc.growth_radius <= 0.0 {
            return reject(format!(
                "growth_radius must be positive, got {}",
                self.ssc.growth_radius
            ));
        }
        if let Some(eps) = self.ssc.epsilon {
            if eps <= 0.0 {
                return reject(format!("epsilon must be positive, got {eps}"));
            }
        }
        named_pair_field(&self.ydata)?;
        match &self.desired {
            DesiredSpec::Analytic { u_d, y_d } => {
                named_pair_field(u_d)?;
                named_pair_field(y_d)?;
            }
            DesiredSpec::InverseCrime { ustar } => {
                named_pair_field(ustar)?;
            }
            DesiredSpec::FromFile { path } => {
                if path.is_empty() {
                    return reject("desired kind is from-file but no path is set".to_string());
                }
            }
        }
        Ok(())
    }
}

const SECTIONS: [&str; 8] = [
    "mesh", "model", "boundary", "control", "desired", "solver", "ssc", "run",
];

fn section_keys(section: &str) -> &'static [&'static str] {
    match section {
        "mesh" => &["n"],
        "model" => &["nu0", "gamma", "g_T", "g_S", "kinv", "diffusion", "lambda"],
        "boundary" => &["yD"],
        "control" => &["lower", "upper"],
        "desired" => &["kind", "u_d", "y_d", "ustar", "path"],
        "solver" => &[
            "newton_tol",
            "newton_max_iterations",
            "kkt_tol",
            "max_iterations",
        ],
        "ssc" => &["epsilon", "directions", "growth_radius", "growth_samples"],
        "run" => &["seed"],
        _ => &[],
    }
}

fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut prev = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let cost = if ca == cb { prev } else { prev + 1 };
            prev = row[j + 1];
            row[j + 1] = cost.min(row[j] + 1).min(row[j + 1] + 1);
        }
    }
    row[b.len()]
}

fn nearest<'a>(word: &str, candidates: impl Iterator<Item = &'a str>) -> Option<&'a str> {
    candidates
        .map(|c| (edit_distance(word, c), c))
        .filter(|(d, _)| *d <= 2)
        .min_by_key(|(d, _)| *d)
        .map(|(_, c)| c)
}

fn unknown_key_error(line: usize, section: &str, key: &str) -> Error {
    let mut msg = format!("unknown key `{key}` in [{section}]");
    if let Some(hit) = nearest(key, section_keys(section).iter().copied()) {
        msg.push_str(&format!("; did you mean `{hit}`?"));
    } else if let Some(home) = SECTIONS
        .iter()
        .find(|s| section_keys(s).contains(&key))
    {
        msg.push_str(&format!("; `{key}` belongs in section [{home}]"));
    }
    Error::Config { line, msg }
}

struct Parser {
    cfg: RunConfig,
    desired_kind: String,
    u_d: String,
    y_d: String,
    ustar: String,
    path: String,
    kind_line: usize,
    bounds_line: usize,
    seen: Vec<(String, usize)>,
}

impl Parser {
    fn new() -> Parser {
        Parser {
            cfg: RunConfig::default(),
            desired_kind: "analytic".to_string(),
            u_d: "zero".to_string(),
            y_d: "zero".to_string(),
            ustar: "vortex".to_string(),
            path: String::new(),
            kind_line: 0,
            bounds_line: 0,
            seen: Vec::new(),
        }
    }

    fn fail(line: usize, msg: impl Into<String>) -> Error {
        Error::Config {
            line,
            msg: msg.into(),
        }
    }

    fn float(line: usize, key: &str, v: &str) -> Result<f64> {
        v.parse::<f64>()
            .map_err(|_| Self::fail(line, format!("`{key}` expects a number, got \"{v}\"")))
    }

    fn integer(line: usize, key: &str, v: &str) -> Result<usize> {
        v.parse::<usize>().map_err(|_| {
            Self::fail(line, format!("`{key}` expects a nonnegative integer, got \"{v}\""))
        })
    }

    fn float_list<const K: usize>(line: usize, key: &str, v: &str) -> Result<[f64; K]> {
        let parts: Vec<&str> = v.split(',').map(str::trim).collect();
        if parts.len() != K {
            return Err(Self::fail(
                line,
                format!("`{key}` expects {K} comma-separated numbers, got \"{v}\""),
            ));
        }
        let mut out = [0.0; K];
        for (slot, part) in out.iter_mut().zip(&parts) {
            *slot = Self::float(line, key, part)?;
        }
        Ok(out)
    }

    fn matrix(line: usize, key: &str, v: &str) -> Result<[[f64; 2]; 2]> {
        let flat: [f64; 4] = Self::float_list(line, key, v)?;
        Ok([[flat[0], flat[1]], [flat[2], flat[3]]])
    }

    fn positive(line: usize, key: &str, x: f64) -> Result<f64> {
        if x <= 0.0 {
            return Err(Self::fail(line, format!("`{key}` must be positive, got {x}")));
        }
        Ok(x)
    }

    fn registry_name(line: usize, key: &str, v: &str) -> Result<String> {
        named_pair_field(v).map_err(|e| Self::fail(line, format!("`{key}`: {e}")))?;
        Ok(v.to_string())
    }

    fn assign(&mut self, line: usize, section: &str, key: &str, v: &str) -> Result<()> {
        let qualified = format!("{section}.{key}");
        if let Some((_, first)) = self.seen.iter().find(|(k, _)| *k == qualified) {
            return Err(Self::fail(
                line,
                format!("duplicate key `{key}` in [{section}] (first set at line {first})"),
            ));
        }
        self.seen.push((qualified, line));

        let cfg = &mut self.cfg;
        match (section, key) {
            ("mesh", "n") => {
                cfg.n = Self::integer(line, key, v)?;
                if cfg.n < 1 {
                    return Err(Self::fail(line, "`n` must be at least 1"));
                }
            }
            ("model", "nu0") => {
                cfg.params.nu0 = Self::positive(line, key, Self::float(line, key, v)?)?
            }
            ("model", "gamma") => {
                let g = Self::float(line, key, v)?;
                if !(0.0..1.0).contains(&g) {
                    return Err(Self::fail(line, format!("`gamma` must lie in [0, 1), got {g}")));
                }
                cfg.params.gamma = g;
            }
            ("model", "g_T") => cfg.params.g_t = Self::float(line, key, v)?,
            ("model", "g_S") => cfg.params.g_s = Self::float(line, key, v)?,
            ("model", "kinv") => cfg.params.kinv = Self::matrix(line, key, v)?,
            ("model", "diffusion") => cfg.params.diffusion = Self::matrix(line, key, v)?,
            ("model", "lambda") => {
                cfg.params.lambda = Self::positive(line, key, Self::float(line, key, v)?)?
            }
            ("boundary", "yD") => cfg.ydata = Self::registry_name(line, key, v)?,
            ("control", "lower") => {
                cfg.lower = Self::float_list(line, key, v)?;
                self.bounds_line = line;
            }
            ("control", "upper") => {
                cfg.upper = Self::float_list(line, key, v)?;
                self.bounds_line = line;
            }
            ("desired", "kind") => {
                if !["analytic", "inverse-crime", "from-file"].contains(&v) {
                    return Err(Self::fail(
                        line,
                        format!(
                            "`kind` must be one of analytic, inverse-crime, from-file; got \"{v}\""
                        ),
                    ));
                }
                self.desired_kind = v.to_string();
                self.kind_line = line;
            }
            ("desired", "u_d") => self.u_d = Self::registry_name(line, key, v)?,
            ("desired", "y_d") => self.y_d = Self::registry_name(line, key, v)?,
            ("desired", "ustar") => self.ustar = Self::registry_name(line, key, v)?,
            ("desired", "path") => self.path = v.to_string(),
            ("solver", "newton_tol") => {
                cfg.newton.tol = Self::positive(line, key, Self::float(line, key, v)?)?
            }
            ("solver", "newton_max_iterations") => {
                cfg.newton.max_iterations = Self::integer(line, key, v)?.max(1)
            }
            ("solver", "kkt_tol") => {
                cfg.kkt_tol = Self::positive(line, key, Self::float(line, key, v)?)?
            }
            ("solver", "max_iterations") => cfg.max_iterations = Self::integer(line, key, v)?,
            ("ssc", "epsilon") => {
                cfg.ssc.epsilon =
                    Some(Self::positive(line, key, Self::float(line, key, v)?)?)
            }
            ("ssc", "directions") => {
                cfg.ssc.directions = Self::integer(line, key, v)?.max(1)
            }
            ("ssc", "growth_radius") => {
                cfg.ssc.growth_radius = Self::positive(line, key, Self::float(line, key, v)?)?
            }
            ("ssc", "growth_samples") => {
                cfg.ssc.growth_samples = Self::integer(line, key, v)?.max(1)
            }
            ("run", "seed") => {
                cfg.seed = v.parse::<u64>().map_err(|_| {
                    Self::fail(line, format!("`seed` expects a nonnegative integer, got \"{v}\""))
                })?
            }
            _ => return Err(unknown_key_error(line, section, key)),
        }
        Ok(())
    }

    fn finish(mut self) -> Result<RunConfig> {
        for c in 0..2 {
            if self.cfg.lower[c] > self.cfg.upper[c] {
                return Err(Self::fail(
                    self.bounds_line,
                    format!(
                        "control bounds out of order in component {c}: lower {} > upper {}",
                        self.cfg.lower[c], self.cfg.upper[c]
                    ),
                ));
            }
        }
        self.cfg.desired = match self.desired_kind.as_str() {
            "analytic" => DesiredSpec::Analytic {
                u_d: self.u_d,
                y_d: self.y_d,
            },
            "inverse-crime" => DesiredSpec::InverseCrime { ustar: self.ustar },
            _ => {
                if self.path.is_empty() {
                    return Err(Self::fail(
                        self.kind_line,
                        "`kind = from-file` requires `path` to be set",
                    ));
                }
                DesiredSpec::FromFile { path: self.path }
            }
        };
        self.cfg.validate()?;
        Ok(self.cfg)
    }
}

/// Strips one layer of surrounding double quotes, if present.
fn unquote(v: &str) -> &str {
    v.strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .unwrap_or(v)
}

/// Parses configuration text. Lines are `key = value` under `[section]`
/// headers; `#` or `;` start a full-line comment; values may be quoted.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let mut parser = Parser::new();
    let mut section: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with(';') {
            continue;
        }
        if let Some(inner) = trimmed.strip_prefix('[') {
            let name = inner.strip_suffix(']').ok_or_else(|| Parser::fail(
                line,
                format!("malformed section header \"{trimmed}\""),
            ))?;
            let name = name.trim();
            if !SECTIONS.contains(&name) {
                let mut msg = format!("unknown section [{name}]");
                if let Some(hit) = nearest(name, SECTIONS.iter().copied()) {
                    msg.push_str(&format!("; did you mean [{hit}]?"));
                }
                return Err(Parser::fail(line, msg));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or_else(|| {
            Parser::fail(line, format!("expected `key = value`, got \"{trimmed}\""))
        })?;
        let key = key.trim();
        let value = unquote(value.trim());
        let section = section.as_deref().ok_or_else(|| {
            Parser::fail(line, format!("key `{key}` appears before any [section] header"))
        })?;
        parser.assign(line, section, key, value)?;
    }
    parser.finish()
}

/// Reads and parses a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| {
        Error::RejectedInput(format!("cannot read config {}: {e}", path.display()))
    })?;
    parse_config_str(&text)
}
