//! Experiment configuration: a flat INI-style text format.
//!
//! ```text
//! # comment
//! [section]
//! key = value
//! list = 1.0, 2.5
//! ```
//!
//! Sections: `experiment`, `mesh`, `physics`, `deformation`, `armijo`,
//! `schedule`, `random_field`, `robustness`, and one `target.N` / `initial.N`
//! per shape (`N = 1, 2, ...`). Which optional sections are required depends
//! on `experiment.kind`. Parsing reports every problem at once, each with the
//! line it refers to.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::path::PathBuf;

use crate::deformation::DeformationConfig;
use crate::error::{Error, Result};
use crate::geometry::{Point, ShapeSpec};
use crate::optimizer::{ArmijoConfig, ScheduleKind, StepSchedule};
use crate::randomfield::{KlSpec, SubdomainKl};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigDiagnostic {
    pub line: Option<usize>,
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.key, self.message),
            None => write!(f, "{}: {}", self.key, self.message),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Deterministic,
    Stochastic,
    Robustness,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Deterministic => "deterministic",
            ExperimentKind::Stochastic => "stochastic",
            ExperimentKind::Robustness => "robustness",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "deterministic" => Some(ExperimentKind::Deterministic),
            "stochastic" => Some(ExperimentKind::Stochastic),
            "robustness" => Some(ExperimentKind::Robustness),
            _ => None,
        }
    }
}

/// Update rule of a deterministic run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Armijo,
    /// Step sizes from `[schedule]`, same code path as the stochastic method.
    FixedStep,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Armijo => "armijo",
            Method::FixedStep => "fixed-step",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "armijo" => Some(Method::Armijo),
            "fixed-step" => Some(Method::FixedStep),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeshSettings {
    /// Nodes per side of the structured background grid.
    pub resolution: usize,
    pub target_resolution: usize,
    pub curve_samples: usize,
    pub smoothing_sweeps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomFieldSettings {
    pub correlation_length: f64,
    pub terms: usize,
    /// One entry per subdomain label, outer domain first.
    pub mean: Vec<f64>,
    pub half_width: Vec<f64>,
}

impl RandomFieldSettings {
    pub fn kl_spec(&self) -> Result<KlSpec> {
        KlSpec::new(
            self.correlation_length,
            self.mean
                .iter()
                .zip(&self.half_width)
                .map(|(&mean, &half_width)| SubdomainKl {
                    mean,
                    half_width,
                    terms: self.terms,
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessSettings {
    pub kappa_min: Vec<f64>,
    pub kappa_max: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSettings {
    pub schedule: StepSchedule,
    pub batch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Only meaningful for deterministic runs.
    pub method: Method,
    pub iterations: usize,
    pub seed: u64,
    pub snapshots: Vec<usize>,
    pub output: PathBuf,
    pub mesh: MeshSettings,
    pub g: f64,
    pub nu: Vec<f64>,
    pub kappa: Option<Vec<f64>>,
    pub deformation: DeformationConfig,
    pub armijo: Option<ArmijoConfig>,
    pub schedule: Option<ScheduleSettings>,
    pub random_field: Option<RandomFieldSettings>,
    pub robustness: Option<RobustnessSettings>,
    pub targets: Vec<ShapeSpec>,
    pub initial: Vec<ShapeSpec>,
}

impl ExperimentConfig {
    pub fn n_shapes(&self) -> usize {
        self.initial.len()
    }

    /// Constant coefficients used to generate the target state.
    pub fn target_kappa(&self) -> Vec<f64> {
        match (self.kind, &self.kappa, &self.random_field) {
            (ExperimentKind::Deterministic, Some(k), _) => k.clone(),
            (_, _, Some(rf)) => rf.mean.clone(),
            (_, Some(k), None) => k.clone(),
            _ => unreachable!("validated config has coefficients"),
        }
    }

    /// Serialize in the input format; [`parse_config`] reads it back to an
    /// equal value.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        let _ = writeln!(s, "[experiment]");
        let _ = writeln!(s, "kind = {}", self.kind.name());
        if self.kind == ExperimentKind::Deterministic {
            let _ = writeln!(s, "method = {}", self.method.name());
        }
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "seed = {}", self.seed);
        let snaps: Vec<String> = self.snapshots.iter().map(|k| k.to_string()).collect();
        let _ = writeln!(s, "snapshots = {}", snaps.join(", "));
        let _ = writeln!(s, "output = {}", self.output.display());
        let _ = writeln!(s, "\n[mesh]");
        let _ = writeln!(s, "resolution = {}", self.mesh.resolution);
        let _ = writeln!(s, "target_resolution = {}", self.mesh.target_resolution);
        let _ = writeln!(s, "curve_samples = {}", self.mesh.curve_samples);
        let _ = writeln!(s, "smoothing_sweeps = {}", self.mesh.smoothing_sweeps);
        let _ = writeln!(s, "\n[physics]");
        let _ = writeln!(s, "g = {:?}", self.g);
        let _ = writeln!(s, "nu = {}", list(&self.nu));
        if let Some(k) = &self.kappa {
            let _ = writeln!(s, "kappa = {}", list(k));
        }
        let d = &self.deformation;
        let _ = writeln!(s, "\n[deformation]");
        let _ = writeln!(s, "lambda = {:?}", d.lambda);
        let _ = writeln!(s, "mu_min = {:?}", d.mu_min);
        let _ = writeln!(s, "mu_max = {:?}", d.mu_max);
        let _ = writeln!(s, "rtol = {:?}", d.rtol);
        let _ = writeln!(s, "gradient_scale = {:?}", d.gradient_scale);
        if let Some(a) = &self.armijo {
            let _ = writeln!(s, "\n[armijo]");
            let _ = writeln!(s, "alpha_hat = {:?}", a.alpha_hat);
            let _ = writeln!(s, "sigma = {:?}", a.sigma);
            let _ = writeln!(s, "rho = {:?}", a.rho);
            let _ = writeln!(s, "max_backtracks = {}", a.max_backtracks);
            let _ = writeln!(s, "alpha_scaling = {}", a.alpha_scaling);
        }
        if let Some(sch) = &self.schedule {
            let _ = writeln!(s, "\n[schedule]");
            let _ = writeln!(s, "kind = {}", sch.schedule.kind.name());
            let _ = writeln!(s, "c = {:?}", sch.schedule.c);
            let _ = writeln!(s, "warm_iters = {}", sch.schedule.warm_iters);
            let _ = writeln!(s, "batch = {}", sch.batch);
        }
        if let Some(rf) = &self.random_field {
            let _ = writeln!(s, "\n[random_field]");
            let _ = writeln!(s, "correlation_length = {:?}", rf.correlation_length);
            let _ = writeln!(s, "terms = {}", rf.terms);
            let _ = writeln!(s, "mean = {}", list(&rf.mean));
            let _ = writeln!(s, "half_width = {}", list(&rf.half_width));
        }
        if let Some(r) = &self.robustness {
            let _ = writeln!(s, "\n[robustness]");
            let _ = writeln!(s, "kappa_min = {}", list(&r.kappa_min));
            let _ = writeln!(s, "kappa_max = {}", list(&r.kappa_max));
        }
        for (prefix, shapes) in [("target", &self.targets), ("initial", &self.initial)] {
            for (i, shape) in shapes.iter().enumerate() {
                let _ = writeln!(s, "\n[{prefix}.{}]", i + 1);
                write_shape(&mut s, shape);
            }
        }
        s
    }
}

fn write_shape(s: &mut String, shape: &ShapeSpec) {
    let pt = |p: Point| format!("{:?}, {:?}", p[0], p[1]);
    match *shape {
        ShapeSpec::Circle { center, radius } => {
            let _ = writeln!(s, "type = circle");
            let _ = writeln!(s, "center = {}", pt(center));
            let _ = writeln!(s, "radius = {radius:?}");
        }
        ShapeSpec::Ellipse {
            center,
            semi_axes,
            angle_deg,
        } => {
            let _ = writeln!(s, "type = ellipse");
            let _ = writeln!(s, "center = {}", pt(center));
            let _ = writeln!(s, "semi_axes = {}", pt(semi_axes));
            let _ = writeln!(s, "angle_deg = {angle_deg:?}");
        }
        ShapeSpec::Tube {
            center,
            radius,
            start_deg,
            end_deg,
            half_width,
        } => {
            let _ = writeln!(s, "type = tube");
            let _ = writeln!(s, "center = {}", pt(center));
            let _ = writeln!(s, "radius = {radius:?}");
            let _ = writeln!(s, "start_deg = {start_deg:?}");
            let _ = writeln!(s, "end_deg = {end_deg:?}");
            let _ = writeln!(s, "half_width = {half_width:?}");
        }
    }
}

struct Entry {
    value: String,
    line: usize,
}

struct Section {
    line: usize,
    entries: BTreeMap<String, Entry>,
}

/// Typed access to the raw sections; records missing and malformed keys.
struct Reader {
    sections: BTreeMap<String, Section>,
    used: BTreeSet<(String, String)>,
    diags: Vec<ConfigDiagnostic>,
}

impl Reader {
    fn has(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    fn section_line(&self, section: &str) -> Option<usize> {
        self.sections.get(section).map(|s| s.line)
    }

    fn error(&mut self, line: Option<usize>, key: String, message: impl Into<String>) {
        self.diags.push(ConfigDiagnostic {
            line,
            key,
            message: message.into(),
        });
    }

    fn raw(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        let found = self
            .sections
            .get(section)
            .and_then(|s| s.entries.get(key))
            .map(|e| (e.value.clone(), e.line));
        match found {
            Some(v) => {
                self.used.insert((section.to_string(), key.to_string()));
                Some(v)
            }
            None => {
                let line = self.section_line(section);
                self.error(line, format!("{section}.{key}"), "missing required key");
                None
            }
        }
    }

    fn optional_raw(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        let present = self.sections.get(section).is_some_and(|s| s.entries.contains_key(key));
        if present {
            self.raw(section, key)
        } else {
            None
        }
    }

    fn parsed<T>(&mut self, section: &str, key: &str, what: &str, f: impl Fn(&str) -> Option<T>) -> Option<T> {
        let (v, line) = self.raw(section, key)?;
        let out = f(&v);
        if out.is_none() {
            self.error(Some(line), format!("{section}.{key}"), format!("expected {what}, found `{v}`"));
        }
        out
    }

    fn real(&mut self, section: &str, key: &str) -> Option<f64> {
        self.parsed(section, key, "a real number", parse_real)
    }

    fn int(&mut self, section: &str, key: &str) -> Option<usize> {
        self.parsed(section, key, "a nonnegative integer", |s| s.parse().ok())
    }

    fn uint64(&mut self, section: &str, key: &str) -> Option<u64> {
        self.parsed(section, key, "a nonnegative integer", |s| s.parse().ok())
    }

    fn boolean(&mut self, section: &str, key: &str) -> Option<bool> {
        self.parsed(section, key, "true or false", |s| s.parse().ok())
    }

    fn reals(&mut self, section: &str, key: &str) -> Option<Vec<f64>> {
        self.parsed(section, key, "a comma-separated list of reals", |s| {
            split_list(s).map(parse_real).collect()
        })
    }

    fn ints(&mut self, section: &str, key: &str) -> Option<Vec<usize>> {
        self.parsed(section, key, "a comma-separated list of integers", |s| {
            split_list(s).map(|x| x.parse().ok()).collect()
        })
    }

    fn point(&mut self, section: &str, key: &str) -> Option<Point> {
        self.parsed(section, key, "two comma-separated reals", |s| {
            let v: Option<Vec<f64>> = split_list(s).map(parse_real).collect();
            v.filter(|v| v.len() == 2).map(|v| [v[0], v[1]])
        })
    }

    /// Range check on an already parsed value.
    fn check(&mut self, section: &str, key: &str, ok: bool, message: &str) {
        if !ok {
            let line = self
                .sections
                .get(section)
                .and_then(|s| s.entries.get(key))
                .map(|e| e.line)
                .or_else(|| self.section_line(section));
            self.error(line, format!("{section}.{key}"), message);
        }
    }
}

fn parse_real(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty())
}

fn tokenize(text: &str) -> (BTreeMap<String, Section>, Vec<ConfigDiagnostic>) {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut diags = Vec::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let Some(name) = name.strip_suffix(']') else {
                diags.push(ConfigDiagnostic {
                    line: Some(line),
                    key: content.to_string(),
                    message: "unterminated section header".into(),
                });
                current = None;
                continue;
            };
            let name = name.trim().to_string();
            if sections.contains_key(&name) {
                diags.push(ConfigDiagnostic {
                    line: Some(line),
                    key: name.clone(),
                    message: "duplicate section".into(),
                });
            } else {
                sections.insert(
                    name.clone(),
                    Section {
                        line,
                        entries: BTreeMap::new(),
                    },
                );
            }
            current = Some(name);
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            diags.push(ConfigDiagnostic {
                line: Some(line),
                key: content.to_string(),
                message: "expected `key = value`".into(),
            });
            continue;
        };
        let key = key.trim().to_string();
        let Some(sec) = current.as_ref() else {
            diags.push(ConfigDiagnostic {
                line: Some(line),
                key,
                message: "key outside of any section".into(),
            });
            continue;
        };
        let entries = &mut sections.get_mut(sec).expect("current section exists").entries;
        if entries.contains_key(&key) {
            diags.push(ConfigDiagnostic {
                line: Some(line),
                key: format!("{sec}.{key}"),
                message: "duplicate key".into(),
            });
            continue;
        }
        entries.insert(
            key,
            Entry {
                value: value.trim().to_string(),
                line,
            },
        );
    }
    (sections, diags)
}

const KNOWN_SECTIONS: [&str; 8] = [
    "experiment",
    "mesh",
    "physics",
    "deformation",
    "armijo",
    "schedule",
    "random_field",
    "robustness",
];

fn shape_sections(r: &Reader, prefix: &str) -> Vec<usize> {
    let mut idx: Vec<usize> = r
        .sections
        .keys()
        .filter_map(|name| name.strip_prefix(prefix)?.strip_prefix('.')?.parse().ok())
        .collect();
    idx.sort_unstable();
    idx
}

fn read_shape(r: &mut Reader, section: &str) -> Option<ShapeSpec> {
    let kind = r.raw(section, "type")?;
    match kind.0.as_str() {
        "circle" => {
            let center = r.point(section, "center");
            let radius = r.real(section, "radius");
            r.check(section, "radius", radius.is_none_or(|v| v > 0.0), "radius must be positive");
            Some(ShapeSpec::Circle {
                center: center?,
                radius: radius?,
            })
        }
        "ellipse" => {
            let center = r.point(section, "center");
            let semi_axes = r.point(section, "semi_axes");
            let angle_deg = r.real(section, "angle_deg");
            r.check(
                section,
                "semi_axes",
                semi_axes.is_none_or(|a| a[0] > 0.0 && a[1] > 0.0),
                "semi-axes must be positive",
            );
            Some(ShapeSpec::Ellipse {
                center: center?,
                semi_axes: semi_axes?,
                angle_deg: angle_deg?,
            })
        }
        "tube" => {
            let center = r.point(section, "center");
            let radius = r.real(section, "radius");
            let start_deg = r.real(section, "start_deg");
            let end_deg = r.real(section, "end_deg");
            let half_width = r.real(section, "half_width");
            let ok = matches!((radius, half_width), (Some(rad), Some(w)) if w > 0.0 && w < rad);
            r.check(section, "half_width", ok, "half-width must lie in (0, radius)");
            Some(ShapeSpec::Tube {
                center: center?,
                radius: radius?,
                start_deg: start_deg?,
                end_deg: end_deg?,
                half_width: half_width?,
            })
        }
        other => {
            r.error(
                Some(kind.1),
                format!("{section}.type"),
                format!("unknown shape type `{other}` (circle, ellipse, tube)"),
            );
            None
        }
    }
}

fn open_unit(v: Option<f64>) -> bool {
    v.is_none_or(|x| x > 0.0 && x < 1.0)
}

fn positive(v: Option<f64>) -> bool {
    v.is_none_or(|x| x > 0.0)
}

/// Parse and validate a configuration; on failure every diagnostic is
/// returned.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let (sections, diags) = tokenize(text);
    let mut r = Reader {
        sections,
        used: BTreeSet::new(),
        diags,
    };

    for (name, sec) in &r.sections {
        let is_shape = ["target.", "initial."].iter().any(|p| {
            name.strip_prefix(p)
                .is_some_and(|n| n.parse::<usize>().is_ok_and(|n| n >= 1))
        });
        if !KNOWN_SECTIONS.contains(&name.as_str()) && !is_shape {
            r.diags.push(ConfigDiagnostic {
                line: Some(sec.line),
                key: name.clone(),
                message: "unknown section".into(),
            });
        }
    }

    let kind = r.raw("experiment", "kind").and_then(|(v, line)| {
        let k = ExperimentKind::parse(&v);
        if k.is_none() {
            r.error(
                Some(line),
                "experiment.kind".into(),
                format!("unknown kind `{v}` (deterministic, stochastic, robustness)"),
            );
        }
        k
    });
    let method = match kind {
        Some(ExperimentKind::Deterministic) => r.raw("experiment", "method").and_then(|(v, line)| {
            let m = Method::parse(&v);
            if m.is_none() {
                r.error(
                    Some(line),
                    "experiment.method".into(),
                    format!("unknown method `{v}` (armijo, fixed-step)"),
                );
            }
            m
        }),
        _ => Some(Method::FixedStep),
    };
    let iterations = r.int("experiment", "iterations");
    let seed = r.uint64("experiment", "seed");
    let snapshots = r.ints("experiment", "snapshots");
    if let (Some(n), Some(s)) = (iterations, &snapshots) {
        let ok = s.iter().all(|&k| k <= n);
        r.check("experiment", "snapshots", ok, "snapshot iterations must not exceed iterations");
    }
    let output = r
        .optional_raw("experiment", "output")
        .map_or_else(|| PathBuf::from("out"), |(v, _)| PathBuf::from(v));

    let resolution = r.int("mesh", "resolution");
    let target_resolution = r.int("mesh", "target_resolution");
    let curve_samples = r.int("mesh", "curve_samples");
    let smoothing_sweeps = r.int("mesh", "smoothing_sweeps");
    r.check("mesh", "resolution", resolution.is_none_or(|v| v >= 3), "resolution must be at least 3");
    r.check(
        "mesh",
        "target_resolution",
        target_resolution.is_none_or(|v| v >= 3),
        "resolution must be at least 3",
    );
    r.check(
        "mesh",
        "curve_samples",
        curve_samples.is_none_or(|v| v >= 8),
        "curve_samples must be at least 8",
    );

    let g = r.real("physics", "g");
    let nu = r.reals("physics", "nu");
    if let Some(nu) = &nu {
        r.check("physics", "nu", nu.iter().all(|&v| v >= 0.0), "nu must be nonnegative");
    }
    let has_kappa = r.sections.get("physics").is_some_and(|s| s.entries.contains_key("kappa"));
    let kappa = if kind == Some(ExperimentKind::Deterministic) || has_kappa {
        r.reals("physics", "kappa")
    } else {
        None
    };
    if let Some(k) = &kappa {
        r.check("physics", "kappa", k.iter().all(|&v| v > 0.0), "kappa must be positive");
    }

    let lambda = r.real("deformation", "lambda");
    let mu_min = r.real("deformation", "mu_min");
    let mu_max = r.real("deformation", "mu_max");
    let rtol = r.real("deformation", "rtol");
    let gradient_scale = r.real("deformation", "gradient_scale");
    r.check("deformation", "lambda", lambda.is_none_or(|v| v >= 0.0), "lambda must be nonnegative");
    r.check("deformation", "mu_min", positive(mu_min), "mu_min must be positive");
    if let (Some(a), Some(b)) = (mu_min, mu_max) {
        r.check("deformation", "mu_max", b >= a, "mu_max must be at least mu_min");
    }
    r.check("deformation", "rtol", open_unit(rtol), "rtol must lie in (0,1)");
    r.check("deformation", "gradient_scale", positive(gradient_scale), "gradient_scale must be positive");

    let needs_armijo = matches!(kind, Some(ExperimentKind::Robustness))
        || (kind == Some(ExperimentKind::Deterministic) && method == Some(Method::Armijo));
    let needs_schedule = matches!(kind, Some(ExperimentKind::Stochastic | ExperimentKind::Robustness))
        || (kind == Some(ExperimentKind::Deterministic) && method == Some(Method::FixedStep));
    let needs_random = matches!(kind, Some(ExperimentKind::Stochastic | ExperimentKind::Robustness));

    let armijo = if needs_armijo || r.has("armijo") {
        let alpha_hat = r.real("armijo", "alpha_hat");
        let sigma = r.real("armijo", "sigma");
        let rho = r.real("armijo", "rho");
        let max_backtracks = r.int("armijo", "max_backtracks");
        let alpha_scaling = r.boolean("armijo", "alpha_scaling");
        r.check("armijo", "alpha_hat", positive(alpha_hat), "alpha_hat must be positive");
        r.check("armijo", "sigma", open_unit(sigma), "sigma must lie in (0,1)");
        r.check("armijo", "rho", open_unit(rho), "rho must lie in (0,1)");
        (|| {
            Some(ArmijoConfig {
                alpha_hat: alpha_hat?,
                sigma: sigma?,
                rho: rho?,
                max_backtracks: max_backtracks?,
                alpha_scaling: alpha_scaling?,
            })
        })()
    } else {
        None
    };

    let schedule = if needs_schedule || r.has("schedule") {
        let kind = r.raw("schedule", "kind").and_then(|(v, line)| {
            let k = ScheduleKind::parse(&v);
            if k.is_none() {
                r.error(
                    Some(line),
                    "schedule.kind".into(),
                    format!("unknown schedule `{v}` (constant, robbins-monro, warm-start)"),
                );
            }
            k
        });
        let c = r.real("schedule", "c");
        let warm_iters = r.int("schedule", "warm_iters");
        let batch = r.int("schedule", "batch");
        r.check("schedule", "c", positive(c), "c must be positive");
        r.check("schedule", "batch", batch.is_none_or(|b| b >= 1), "batch must be at least 1");
        (|| {
            Some(ScheduleSettings {
                schedule: StepSchedule {
                    kind: kind?,
                    c: c?,
                    warm_iters: warm_iters?,
                },
                batch: batch?,
            })
        })()
    } else {
        None
    };

    let random_field = if needs_random || r.has("random_field") {
        let correlation_length = r.real("random_field", "correlation_length");
        let terms = r.int("random_field", "terms");
        let mean = r.reals("random_field", "mean");
        let half_width = r.reals("random_field", "half_width");
        r.check(
            "random_field",
            "correlation_length",
            positive(correlation_length),
            "correlation_length must be positive",
        );
        r.check("random_field", "terms", terms.is_none_or(|t| t >= 1), "terms must be at least 1");
        if let (Some(m), Some(w)) = (&mean, &half_width) {
            r.check(
                "random_field",
                "half_width",
                m.len() == w.len(),
                "half_width needs one entry per mean",
            );
            r.check(
                "random_field",
                "half_width",
                w.iter().all(|&v| v >= 0.0),
                "half_width must be nonnegative",
            );
        }
        (|| {
            Some(RandomFieldSettings {
                correlation_length: correlation_length?,
                terms: terms?,
                mean: mean?,
                half_width: half_width?,
            })
        })()
    } else {
        None
    };
    if let Some(rf) = &random_field {
        if rf.mean.len() == rf.half_width.len() {
            if let Err(e) = rf.kl_spec() {
                let line = r.section_line("random_field");
                r.error(line, "random_field".into(), e.to_string());
            }
        }
    }

    let robustness = if kind == Some(ExperimentKind::Robustness) || r.has("robustness") {
        let kappa_min = r.reals("robustness", "kappa_min");
        let kappa_max = r.reals("robustness", "kappa_max");
        for (key, v) in [("kappa_min", &kappa_min), ("kappa_max", &kappa_max)] {
            if let Some(v) = v {
                r.check("robustness", key, v.iter().all(|&x| x > 0.0), "coefficients must be positive");
            }
        }
        (|| {
            Some(RobustnessSettings {
                kappa_min: kappa_min?,
                kappa_max: kappa_max?,
            })
        })()
    } else {
        None
    };

    let mut shapes = |prefix: &str| -> Vec<Option<ShapeSpec>> {
        let idx = shape_sections(&r, prefix);
        if idx.is_empty() {
            r.error(None, format!("{prefix}.1"), "missing required section");
        }
        for (expected, &i) in (1..).zip(&idx) {
            if i != expected {
                let name = format!("{prefix}.{i}");
                let line = r.section_line(&name);
                r.error(line, name, "shape sections must be numbered 1, 2, ... without gaps");
                break;
            }
        }
        idx.iter().map(|i| read_shape(&mut r, &format!("{prefix}.{i}"))).collect()
    };
    let targets = shapes("target");
    let initial = shapes("initial");
    if !targets.is_empty() && targets.len() != initial.len() {
        r.error(None, "target".into(), "number of target and initial shapes differ");
    }
    let n_shapes = initial.len();
    if n_shapes > 0 {
        if let Some(nu) = &nu {
            r.check("physics", "nu", nu.len() == n_shapes, "nu needs one entry per shape");
        }
        if let Some(k) = &kappa {
            r.check("physics", "kappa", k.len() == n_shapes + 1, "kappa needs one entry per subdomain");
        }
        if let Some(rf) = &random_field {
            r.check(
                "random_field",
                "mean",
                rf.mean.len() == n_shapes + 1,
                "mean needs one entry per subdomain",
            );
        }
        if let Some(rb) = &robustness {
            for (key, v) in [("kappa_min", &rb.kappa_min), ("kappa_max", &rb.kappa_max)] {
                r.check("robustness", key, v.len() == n_shapes + 1, "needs one entry per subdomain");
            }
        }
    }

    let unknown: Vec<(usize, String)> = r
        .sections
        .iter()
        .flat_map(|(name, sec)| {
            sec.entries
                .iter()
                .filter(|(key, _)| !r.used.contains(&(name.clone(), (*key).clone())))
                .map(move |(key, e)| (e.line, format!("{name}.{key}")))
        })
        .collect();
    for (line, key) in unknown {
        let known_section = KNOWN_SECTIONS.contains(&key.split('.').next().unwrap_or(""))
            || key.starts_with("target.")
            || key.starts_with("initial.");
        if known_section {
            r.error(Some(line), key, "unknown key");
        }
    }

    if !r.diags.is_empty() {
        let mut diags = r.diags;
        diags.sort_by_key(|d| d.line.unwrap_or(usize::MAX));
        return Err(Error::Config(diags));
    }
    Ok(ExperimentConfig {
        kind: kind.expect("checked"),
        method: method.expect("checked"),
        iterations: iterations.expect("checked"),
        seed: seed.expect("checked"),
        snapshots: snapshots.expect("checked"),
        output,
        mesh: MeshSettings {
            resolution: resolution.expect("checked"),
            target_resolution: target_resolution.expect("checked"),
            curve_samples: curve_samples.expect("checked"),
            smoothing_sweeps: smoothing_sweeps.expect("checked"),
        },
        g: g.expect("checked"),
        nu: nu.expect("checked"),
        kappa,
        deformation: DeformationConfig {
            lambda: lambda.expect("checked"),
            mu_min: mu_min.expect("checked"),
            mu_max: mu_max.expect("checked"),
            rtol: rtol.expect("checked"),
            gradient_scale: gradient_scale.expect("checked"),
        },
        armijo,
        schedule,
        random_field,
        robustness,
        targets: targets.into_iter().map(|s| s.expect("checked")).collect(),
        initial: initial.into_iter().map(|s| s.expect("checked")).collect(),
    })
}
