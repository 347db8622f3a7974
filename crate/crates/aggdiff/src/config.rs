//! Run configuration: a sectioned TOML file, optionally patched by
//! `section.key=value` overrides, validated against the numerical core before
//! anything runs.
//!
//! ```toml
//! [params]
//! d = 3
//! m = "4/3"          # number or "p/q"
//! mass = 1.0
//!
//! [kernel]
//! kind = "smooth_compact"   # none | smooth_compact | power_tail | newtonian | gaussian
//! scale = 1.0
//! strength = 1.0
//! # gamma = 2.5            # power_tail only
//!
//! [grid]
//! cells = 400
//! # radius = 6.0           # default: 3 support radii (m > 1) or 8 (m = 1)
//!
//! [time]
//! tau_max = 8.0
//! snapshot_dtau = 0.05
//!
//! [initial]
//! kind = "annulus"         # barenblatt | gaussian_offcenter_radialized | annulus
//!                          # | double_bump_radial | custom_table
//!
//! [diagnostics]
//! p_list = [2.0, 4.0]
//! k_levels = []            # empty: 1/4, 1/2, 3/4 of the ground state peak
//! delta_slack = 0.05
//! tolerance = 0.3
//! # fit_window = [2.0, 8.0]
//!
//! [output]
//! directory = "out"
//! formats = ["csv", "tsv", "json"]
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use aggdiff_core::diagnostics::{DiagnosticsConfig, ReportSettings};
use aggdiff_core::kernels::{KernelKind, KernelSpec};
use aggdiff_core::solver::{default_radius, InitialData};
use aggdiff_core::{ProblemParams, RadialGrid};
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

/// Output formats understood by `output.formats`.
pub const FORMATS: [&str; 3] = ["csv", "tsv", "json"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: ParamsSection,
    #[serde(default)]
    pub kernel: KernelSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub time: TimeSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub d: usize,
    #[serde(deserialize_with = "exponent")]
    pub m: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub scale: f64,
    pub strength: f64,
}

impl Default for KernelSection {
    fn default() -> Self {
        KernelSection { kind: String::from("none"), gamma: None, scale: 1.0, strength: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    pub cells: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { radius: None, cells: 400 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeSection {
    pub tau_max: f64,
    pub snapshot_dtau: f64,
}

impl Default for TimeSection {
    fn default() -> Self {
        TimeSection { tau_max: 8.0, snapshot_dtau: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialSection {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outer: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub centers: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<[f64; 2]>,
    /// Inline `(r, value)` pairs for `custom_table`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<[f64; 2]>>,
    /// Whitespace separated `r value` file for `custom_table`, relative to the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for InitialSection {
    fn default() -> Self {
        InitialSection {
            kind: String::from("barenblatt"),
            offset: None,
            width: None,
            inner: None,
            outer: None,
            centers: None,
            weights: None,
            points: None,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSection {
    pub p_list: Vec<f64>,
    pub k_levels: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_window: Option<[f64; 2]>,
    pub delta_slack: f64,
    pub tolerance: f64,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        DiagnosticsSection {
            p_list: vec![2.0, 4.0],
            k_levels: Vec::new(),
            fit_window: None,
            delta_slack: aggdiff_core::diagnostics::DEFAULT_DELTA,
            tolerance: aggdiff_core::diagnostics::DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: PathBuf,
    pub formats: Vec<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { directory: PathBuf::from("out"), formats: FORMATS.iter().map(|s| s.to_string()).collect() }
    }
}

impl OutputSection {
    pub fn wants(&self, format: &str) -> bool {
        self.formats.iter().any(|f| f == format)
    }
}

/// Accepts `m` as a number or as a `"p/q"` string.
fn exponent<'de, D: Deserializer<'de>>(deserializer: D) -> std::result::Result<f64, D::Error> {
    struct Exponent;
    impl Visitor<'_> for Exponent {
        type Value = f64;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a number or a fraction string such as \"4/3\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<f64, E> {
            parse_fraction(v).ok_or_else(|| E::custom(format!("cannot read {v:?} as a number or fraction")))
        }
    }
    deserializer.deserialize_any(Exponent)
}

/// Parses `"1.5"`, `"4/3"`.
pub fn parse_fraction(s: &str) -> Option<f64> {
    match s.split_once('/') {
        Some((a, b)) => {
            let (a, b): (f64, f64) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
            (b != 0.0).then(|| a / b)
        }
        None => s.trim().parse().ok(),
    }
}

/// Everything a run needs, checked.
#[derive(Debug, Clone)]
pub struct Validated {
    pub params: ProblemParams,
    pub kernel: Option<KernelSpec>,
    pub grid: RadialGrid,
    pub initial: InitialData,
    pub diagnostics: DiagnosticsConfig,
    pub report: ReportSettings,
    pub warnings: Vec<String>,
}

fn keyed<T>(key: &str, r: aggdiff_core::Result<T>) -> Result<T> {
    r.map_err(|e| AppError::config(format!("{key}: {e}")))
}

impl RunConfig {
    /// Parses TOML text, applying `section.key=value` overrides first.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Table = text.parse().map_err(|e: toml::de::Error| AppError::config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: RunConfig = value.try_into().map_err(|e: toml::de::Error| AppError::config(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads and parses a config file; a relative `initial.path` is resolved
    /// against the file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text, overrides).map_err(|e| match e {
            AppError::Config(msg) => AppError::config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        if let Some(p) = &cfg.initial.path {
            if p.is_relative() {
                cfg.initial.path = Some(path.parent().unwrap_or(Path::new(".")).join(p));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn kernel_spec(&self) -> Result<Option<KernelSpec>> {
        let k = &self.kernel;
        if k.kind == "none" {
            if k.gamma.is_some() {
                return Err(AppError::config("kernel.gamma given but kernel.kind = \"none\""));
            }
            return Ok(None);
        }
        let kind = KernelKind::parse(&k.kind).ok_or_else(|| {
            AppError::config(format!(
                "kernel.kind = {:?} is not one of none, smooth_compact, power_tail, newtonian, gaussian",
                k.kind
            ))
        })?;
        let spec = match kind {
            KernelKind::PowerTail => {
                let gamma = k.gamma.ok_or_else(|| AppError::config("kernel.gamma is required for kernel.kind = \"power_tail\""))?;
                KernelSpec::power_tail(gamma, k.scale, k.strength)
            }
            other => {
                if k.gamma.is_some() {
                    return Err(AppError::config(format!("kernel.gamma only applies to power_tail, not {}", other.as_str())));
                }
                match other {
                    KernelKind::Gaussian => KernelSpec::gaussian(k.scale, k.strength),
                    KernelKind::SmoothCompact => KernelSpec::smooth_compact(k.scale, k.strength),
                    _ => KernelSpec::newtonian(k.strength),
                }
            }
        };
        Ok(Some(spec))
    }

    fn initial_data(&self) -> Result<InitialData> {
        let i = &self.initial;
        let unused = |names: &[(&str, bool)]| -> Result<()> {
            match names.iter().find(|(_, set)| *set) {
                Some((name, _)) => Err(AppError::config(format!("initial.{name} does not apply to initial.kind = {:?}", i.kind))),
                None => Ok(()),
            }
        };
        Ok(match i.kind.as_str() {
            "barenblatt" => {
                unused(&[
                    ("offset", i.offset.is_some()),
                    ("width", i.width.is_some()),
                    ("inner", i.inner.is_some()),
                    ("outer", i.outer.is_some()),
                    ("centers", i.centers.is_some()),
                    ("weights", i.weights.is_some()),
                    ("points", i.points.is_some()),
                    ("path", i.path.is_some()),
                ])?;
                InitialData::Barenblatt
            }
            "gaussian_offcenter_radialized" => {
                let InitialData::GaussianOffcenter { offset, width } = InitialData::gaussian_offcenter() else { unreachable!() };
                InitialData::GaussianOffcenter { offset: i.offset.unwrap_or(offset), width: i.width.unwrap_or(width) }
            }
            "annulus" => {
                let InitialData::Annulus { inner, outer } = InitialData::annulus() else { unreachable!() };
                InitialData::Annulus { inner: i.inner.unwrap_or(inner), outer: i.outer.unwrap_or(outer) }
            }
            "double_bump_radial" => {
                let InitialData::DoubleBump { centers, weights, width } = InitialData::double_bump() else { unreachable!() };
                InitialData::DoubleBump {
                    centers: i.centers.unwrap_or(centers),
                    weights: i.weights.unwrap_or(weights),
                    width: i.width.unwrap_or(width),
                }
            }
            "custom_table" => {
                let points: Vec<(f64, f64)> = match (&i.points, &i.path) {
                    (Some(p), None) => p.iter().map(|x| (x[0], x[1])).collect(),
                    (None, Some(path)) => read_table(path)?,
                    _ => return Err(AppError::config("custom_table needs exactly one of initial.points or initial.path")),
                };
                InitialData::Table(points)
            }
            other => {
                return Err(AppError::config(format!(
                    "initial.kind = {other:?} is not one of barenblatt, gaussian_offcenter_radialized, annulus, \
                     double_bump_radial, custom_table"
                )))
            }
        })
    }

    /// Checks every section against the core's preconditions.
    pub fn validate(&self) -> Result<Validated> {
        let p = &self.params;
        let params = keyed("params", ProblemParams::new(p.d, p.m, p.mass))?;
        let kernel = self.kernel_spec()?;
        let mut warnings = Vec::new();
        if let Some(k) = &kernel {
            keyed("kernel", k.bind(p.d).map(|_| ()))?;
            warnings.extend(k.hypothesis_warnings(&params));
        }
        let radius = match self.grid.radius {
            Some(r) => r,
            None => keyed("grid.radius", default_radius(&params))?,
        };
        let grid = keyed("grid", RadialGrid::new(p.d, radius, self.grid.cells))?;
        let t = &self.time;
        if !(t.tau_max >= 0.0 && t.tau_max.is_finite()) {
            return Err(AppError::config(format!("time.tau_max = {} must be finite and >= 0", t.tau_max)));
        }
        if !(t.snapshot_dtau > 0.0 && t.snapshot_dtau.is_finite()) {
            return Err(AppError::config(format!("time.snapshot_dtau = {} must be positive", t.snapshot_dtau)));
        }
        let initial = self.initial_data()?;
        keyed("initial", aggdiff_core::solver::initial_data(&initial, &params, &grid).map(|_| ()))?;

        let d = &self.diagnostics;
        if let Some(bad) = d.p_list.iter().find(|p| !(**p >= 1.0)) {
            return Err(AppError::config(format!("diagnostics.p_list entry {bad} must be >= 1")));
        }
        if d.k_levels.iter().any(|k| !(*k > 0.0)) || d.k_levels.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(AppError::config("diagnostics.k_levels must be positive and ascending"));
        }
        if !(d.delta_slack >= 0.0 && d.delta_slack < 1.0) {
            return Err(AppError::config(format!("diagnostics.delta_slack = {} must lie in [0, 1)", d.delta_slack)));
        }
        if !(d.tolerance > 0.0) {
            return Err(AppError::config(format!("diagnostics.tolerance = {} must be positive", d.tolerance)));
        }
        let window = match d.fit_window {
            Some([a, b]) if !(a < b && a >= 0.0) => {
                return Err(AppError::config(format!("diagnostics.fit_window = [{a}, {b}] is empty")))
            }
            Some([a, b]) => (a, Some(b)),
            None => (aggdiff_core::diagnostics::DEFAULT_WINDOW_START, None),
        };
        if let Some(bad) = self.output.formats.iter().find(|f| !FORMATS.contains(&f.as_str())) {
            return Err(AppError::config(format!("output.formats entry {bad:?} is not one of csv, tsv, json")));
        }
        Ok(Validated {
            params,
            kernel,
            grid,
            initial,
            diagnostics: DiagnosticsConfig { p_list: d.p_list.clone(), k_levels: d.k_levels.clone() },
            report: ReportSettings { delta: d.delta_slack, tolerance: d.tolerance, window_tau: window },
            warnings,
        })
    }
}

fn read_table(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace().map(str::parse::<f64>);
        match (it.next(), it.next(), it.next()) {
            (Some(Ok(r)), Some(Ok(v)), None) => out.push((r, v)),
            _ => return Err(AppError::config(format!("{}:{}: expected two numbers", path.display(), n + 1))),
        }
    }
    Ok(out)
}

/// Applies `section.key=value` to a parsed TOML table. The value is read as
/// TOML when possible and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (path, raw) = item
        .split_once('=')
        .ok_or_else(|| AppError::config(format!("override {item:?} is not of the form section.key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.len() != 2 || keys.iter().any(|k| k.is_empty()) {
        return Err(AppError::config(format!("override key {path:?} is not of the form section.key")));
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let section = table
        .entry(keys[0])
        .or_insert_with(|| toml::Value::Table(toml::Table::new()))
        .as_table_mut()
        .ok_or_else(|| AppError::config(format!("override target {:?} is not a section", keys[0])))?;
    section.insert(keys[1].to_string(), value);
    Ok(())
}
