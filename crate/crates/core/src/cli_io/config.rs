//! TOML run configuration.
//!
//! ```toml
//! k = 2                      # 1 or 2
//! cap_radius = 1.0471975512  # geodesic radius of the cap, radians, in (0, pi/2)
//! rings = 32                 # optional, default 32, >= 4
//! sectors = 64               # optional, default 64, even, >= 8
//! psi = "0.7 - 0.2*nz"
//! psi_scale_k0 = false       # optional; multiply psi by K0 = R^-k
//!
//! [sphere]
//! center = [0.0, 0.0, 0.3]
//! radius = 1.0
//!
//! [homotopy]                 # optional, defaults shown
//! initial_step = 0.1
//! min_step = 1e-4
//! shrink = 0.5
//! grow = 1.5
//! max_newton_iterations = 30
//! tolerance = 1e-9           # relative to max psi_
//! monitor_tolerance = 1e-10
//! jacobian = "analytic"      # or "finite-difference"
//!
//! [output]                   # optional, defaults shown
//! dir = "out"
//! csv = true
//! obj = true
//! vtk = true
//! history = true
//! report = true
//! ```

use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::psidsl::PsiExpr;
use crate::solver::{ContinuationOptions, JacobianMode, StepController};
use crate::subsolution::EnclosingSphere;

pub const DEFAULT_RINGS: usize = 32;
pub const DEFAULT_SECTORS: usize = 64;

/// Parse or schema error with its location in the source.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: Option<PathBuf>,
    pub key: Option<String>,
    /// 1-based line and column.
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(p) = &self.path {
            write!(f, "{}:", p.display())?;
        }
        if let (Some(l), Some(c)) = (self.line, self.column) {
            write!(f, "{l}:{c}:")?;
        }
        if self.path.is_some() || self.line.is_some() {
            f.write_str(" ")?;
        }
        if let Some(k) = &self.key {
            write!(f, "key '{k}': ")?;
        }
        f.write_str(&self.message)
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    fn at(src: &str, span: Option<Range<usize>>, key: Option<&str>, message: String) -> Self {
        let (line, column) = match span {
            Some(s) => {
                let (l, c) = line_col(src, s.start);
                (Some(l), Some(c))
            }
            None => (None, None),
        };
        Self { path: None, key: key.map(str::to_owned), line, column, message }
    }
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
    (line, column)
}

/// Pulls the offending key out of serde messages such as
/// "missing field `radius`" or "unknown field `foo`, expected ...".
fn key_from_message(msg: &str) -> Option<String> {
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(msg[start..start + len].to_owned())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum JacobianKind {
    #[default]
    Analytic,
    FiniteDifference,
}

impl From<JacobianKind> for JacobianMode {
    fn from(k: JacobianKind) -> Self {
        match k {
            JacobianKind::Analytic => JacobianMode::Analytic,
            JacobianKind::FiniteDifference => JacobianMode::FiniteDifference,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HomotopyConfig {
    pub initial_step: f64,
    pub min_step: f64,
    pub shrink: f64,
    pub grow: f64,
    pub max_newton_iterations: usize,
    pub tolerance: f64,
    pub monitor_tolerance: f64,
    pub jacobian: JacobianKind,
}

impl Default for HomotopyConfig {
    fn default() -> Self {
        let c = ContinuationOptions::default();
        Self {
            initial_step: c.controller.delta,
            min_step: c.controller.min_delta,
            shrink: c.controller.shrink,
            grow: c.controller.grow,
            max_newton_iterations: c.controller.max_newton_iterations,
            tolerance: c.relative_tol,
            monitor_tolerance: c.monitor_tol,
            jacobian: JacobianKind::Analytic,
        }
    }
}

impl HomotopyConfig {
    pub fn continuation_options(&self) -> ContinuationOptions {
        ContinuationOptions {
            controller: StepController {
                delta: self.initial_step,
                min_delta: self.min_step,
                shrink: self.shrink,
                grow: self.grow,
                max_newton_iterations: self.max_newton_iterations,
            },
            relative_tol: self.tolerance,
            monitor_tol: self.monitor_tolerance,
            mode: self.jacobian.into(),
            record_states: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub csv: bool,
    pub obj: bool,
    pub vtk: bool,
    pub history: bool,
    pub report: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), csv: true, obj: true, vtk: true, history: true, report: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub k: usize,
    pub cap_radius: f64,
    pub rings: usize,
    pub sectors: usize,
    pub sphere: EnclosingSphere,
    /// Source text as written in the file.
    pub psi_source: String,
    pub psi_scale_k0: bool,
    pub homotopy: HomotopyConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    /// `psi`, including the `K0` factor when requested.
    pub fn psi(&self) -> PsiExpr {
        let text = if self.psi_scale_k0 {
            let k0 = crate::subsolution::k_zero(&self.sphere, self.k);
            format!("{k0:?}*({})", self.psi_source)
        } else {
            self.psi_source.clone()
        };
        text.parse().expect("psi validated at load time")
    }

    /// Rechecks ranges after command-line overrides.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |key: &str, message: String| Err(ConfigError::at("", None, Some(key), message));
        if self.rings < 4 {
            return err("rings", format!("{} is below the minimum of 4", self.rings));
        }
        if self.sectors < 8 || self.sectors % 2 != 0 {
            return err("sectors", format!("{} must be even and at least 8", self.sectors));
        }
        Ok(())
    }

    /// Serializable echo of the effective configuration.
    pub fn echo(&self) -> ConfigEcho {
        ConfigEcho {
            k: self.k,
            cap_radius: self.cap_radius,
            rings: self.rings,
            sectors: self.sectors,
            psi: self.psi_source.clone(),
            psi_scale_k0: self.psi_scale_k0,
            sphere: self.sphere,
            homotopy: self.homotopy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub k: usize,
    pub cap_radius: f64,
    pub rings: usize,
    pub sectors: usize,
    pub psi: String,
    pub psi_scale_k0: bool,
    pub sphere: EnclosingSphere,
    pub homotopy: HomotopyConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    k: Spanned<i64>,
    cap_radius: Spanned<f64>,
    rings: Option<Spanned<i64>>,
    sectors: Option<Spanned<i64>>,
    psi: Spanned<String>,
    #[serde(default)]
    psi_scale_k0: bool,
    sphere: Spanned<RawSphere>,
    homotopy: Option<RawHomotopy>,
    output: Option<RawOutput>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSphere {
    center: Spanned<[f64; 3]>,
    radius: Spanned<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHomotopy {
    initial_step: Option<Spanned<f64>>,
    min_step: Option<Spanned<f64>>,
    shrink: Option<Spanned<f64>>,
    grow: Option<Spanned<f64>>,
    max_newton_iterations: Option<Spanned<i64>>,
    tolerance: Option<Spanned<f64>>,
    monitor_tolerance: Option<Spanned<f64>>,
    jacobian: Option<JacobianKind>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
    csv: Option<bool>,
    obj: Option<bool>,
    vtk: Option<bool>,
    history: Option<bool>,
    report: Option<bool>,
}

struct Checker<'a> {
    src: &'a str,
}

impl Checker<'_> {
    fn fail<T>(&self, key: &str, span: Range<usize>, message: String) -> Result<T, ConfigError> {
        Err(ConfigError::at(self.src, Some(span), Some(key), message))
    }

    fn int(&self, key: &str, v: &Spanned<i64>, lo: i64, hi: i64) -> Result<usize, ConfigError> {
        let x = *v.get_ref();
        if x < lo || x > hi {
            return self.fail(key, v.span(), format!("{x} outside {lo}..={hi}"));
        }
        Ok(x as usize)
    }

    /// `lo < x < hi` with either bound optional.
    fn real(&self, key: &str, v: &Spanned<f64>, lo: Option<f64>, hi: Option<f64>) -> Result<f64, ConfigError> {
        let x = *v.get_ref();
        let ok = x.is_finite() && lo.is_none_or(|l| x > l) && hi.is_none_or(|h| x < h);
        if !ok {
            let range = match (lo, hi) {
                (Some(l), Some(h)) => format!("in ({l}, {h})"),
                (Some(l), None) => format!("greater than {l}"),
                (None, Some(h)) => format!("less than {h}"),
                (None, None) => "finite".to_owned(),
            };
            return self.fail(key, v.span(), format!("{x} must be {range}"));
        }
        Ok(x)
    }
}

/// Parses and validates a configuration held in memory.
pub fn parse_config(src: &str) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(src).map_err(|e| {
        let msg = e.message().trim().to_owned();
        ConfigError::at(src, e.span(), key_from_message(&msg).as_deref(), msg)
    })?;
    let c = Checker { src };

    let k = c.int("k", &raw.k, 1, 2)?;
    let cap_radius = c.real("cap_radius", &raw.cap_radius, Some(0.0), Some(std::f64::consts::FRAC_PI_2))?;
    let rings = match &raw.rings {
        Some(r) => c.int("rings", r, 4, 4096)?,
        None => DEFAULT_RINGS,
    };
    let sectors = match &raw.sectors {
        Some(s) => {
            let n = c.int("sectors", s, 8, 8192)?;
            if n % 2 != 0 {
                return c.fail("sectors", s.span(), format!("{n} must be even"));
            }
            n
        }
        None => DEFAULT_SECTORS,
    };

    let psi_source = raw.psi.get_ref().clone();
    let psi: PsiExpr = match psi_source.parse() {
        Ok(p) => p,
        Err(e) => return c.fail("psi", raw.psi.span(), e.to_string()),
    };
    if let Err(e) = psi.require_smooth() {
        return c.fail("psi", raw.psi.span(), e.to_string());
    }

    let sphere_span = raw.sphere.span();
    let rs = raw.sphere.into_inner();
    if rs.center.get_ref().iter().any(|x| !x.is_finite()) {
        return c.fail("sphere.center", rs.center.span(), "components must be finite".into());
    }
    let radius = c.real("sphere.radius", &rs.radius, Some(0.0), None)?;
    let sphere = match EnclosingSphere::new(*rs.center.get_ref(), radius) {
        Ok(s) => s,
        Err(e) => return c.fail("sphere", sphere_span, e.to_string()),
    };

    let mut homotopy = HomotopyConfig::default();
    if let Some(h) = &raw.homotopy {
        if let Some(v) = &h.initial_step {
            homotopy.initial_step = c.real("homotopy.initial_step", v, Some(0.0), None)?.min(1.0);
        }
        if let Some(v) = &h.min_step {
            homotopy.min_step = c.real("homotopy.min_step", v, Some(0.0), None)?;
        }
        if let Some(v) = &h.shrink {
            homotopy.shrink = c.real("homotopy.shrink", v, Some(0.0), Some(1.0))?;
        }
        if let Some(v) = &h.grow {
            let g = c.real("homotopy.grow", v, Some(0.0), None)?;
            if g < 1.0 {
                return c.fail("homotopy.grow", v.span(), format!("{g} must be at least 1"));
            }
            homotopy.grow = g;
        }
        if let Some(v) = &h.max_newton_iterations {
            homotopy.max_newton_iterations = c.int("homotopy.max_newton_iterations", v, 1, 1000)?;
        }
        if let Some(v) = &h.tolerance {
            homotopy.tolerance = c.real("homotopy.tolerance", v, Some(0.0), None)?;
        }
        if let Some(v) = &h.monitor_tolerance {
            let m = *v.get_ref();
            if !(m.is_finite() && m >= 0.0) {
                return c.fail("homotopy.monitor_tolerance", v.span(), format!("{m} must be non-negative"));
            }
            homotopy.monitor_tolerance = m;
        }
        if let Some(j) = h.jacobian {
            homotopy.jacobian = j;
        }
    }

    let mut output = OutputConfig::default();
    if let Some(o) = raw.output {
        if let Some(d) = o.dir {
            output.dir = d;
        }
        output.csv = o.csv.unwrap_or(output.csv);
        output.obj = o.obj.unwrap_or(output.obj);
        output.vtk = o.vtk.unwrap_or(output.vtk);
        output.history = o.history.unwrap_or(output.history);
        output.report = o.report.unwrap_or(output.report);
    }

    Ok(RunConfig {
        k,
        cap_radius,
        rings,
        sectors,
        sphere,
        psi_source,
        psi_scale_k0: raw.psi_scale_k0,
        homotopy,
        output,
    })
}

/// Reads and validates a configuration file. A relative `output.dir` is
/// resolved against the working directory.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let src = std::fs::read_to_string(path).map_err(|e| ConfigError {
        path: Some(path.to_owned()),
        key: None,
        line: None,
        column: None,
        message: e.to_string(),
    })?;
    parse_config(&src).map_err(|mut e| {
        e.path = Some(path.to_owned());
        e
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
k = 2
cap_radius = 1.0
psi = "0.7 - 0.2*nz"

[sphere]
center = [0.0, 0.0, 0.3]
radius = 1.0
"#;

    #[test]
    fn minimal_gets_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!((c.rings, c.sectors), (32, 64));
        assert_eq!(c.homotopy.initial_step, 0.1);
        assert_eq!(c.homotopy, HomotopyConfig::default());
        assert_eq!(c.output, OutputConfig::default());
        assert_eq!(c.sphere.center, [0.0, 0.0, 0.3]);
    }

    #[test]
    fn missing_radius_names_key() {
        let src = MINIMAL.replace("\nradius = 1.0\n", "\n");
        let e = parse_config(&src).unwrap_err();
        assert_eq!(e.key.as_deref(), Some("radius"), "{e}");
        assert!(e.line.is_some());
    }

    #[test]
    fn k_out_of_range() {
        let e = parse_config(&MINIMAL.replace("k = 2", "k = 0")).unwrap_err();
        assert_eq!(e.key.as_deref(), Some("k"));
        assert_eq!(e.line, Some(2));
        assert!(e.message.contains("1..=2"), "{e}");
        assert!(parse_config(&MINIMAL.replace("k = 2", "k = 3")).is_err());
    }

    #[test]
    fn unknown_key_rejected() {
        let e = parse_config(&format!("{MINIMAL}colour = 3\n")).unwrap_err();
        assert_eq!(e.key.as_deref(), Some("colour"), "{e}");
    }

    #[test]
    fn odd_sectors_and_bad_psi() {
        let e = parse_config(&MINIMAL.replace("k = 2", "k = 2\nsectors = 33")).unwrap_err();
        assert_eq!((e.key.as_deref(), e.line), (Some("sectors"), Some(3)));
        let e = parse_config(&MINIMAL.replace("0.7 - 0.2*nz", "0.7 - 0.2*nw")).unwrap_err();
        assert_eq!(e.key.as_deref(), Some("psi"));
        let e = parse_config(&MINIMAL.replace("0.7 - 0.2*nz", "abs(nz) + 0.5")).unwrap_err();
        assert_eq!(e.key.as_deref(), Some("psi"));
    }

    #[test]
    fn origin_outside_sphere() {
        let e = parse_config(&MINIMAL.replace("0.3]", "1.3]")).unwrap_err();
        assert_eq!(e.key.as_deref(), Some("sphere"));
    }

    #[test]
    fn scaled_psi() {
        let src = MINIMAL.replace("\nradius = 1.0", "\nradius = 2.0").replace("k = 2", "k = 2\npsi_scale_k0 = true");
        let c = parse_config(&src).unwrap();
        let n = [0.0, 0.0, 1.0];
        assert!((c.psi().value(n) - 0.25 * 0.5).abs() < 1e-15);
    }

    #[test]
    fn homotopy_and_output_overrides() {
        let src = format!(
            "{MINIMAL}\n[homotopy]\ninitial_step = 0.2\njacobian = \"finite-difference\"\n\n[output]\ndir = \"x\"\nvtk = false\n"
        );
        let c = parse_config(&src).unwrap();
        assert_eq!(c.homotopy.initial_step, 0.2);
        assert_eq!(c.homotopy.jacobian, JacobianKind::FiniteDifference);
        assert_eq!(c.output.dir, PathBuf::from("x"));
        assert!(!c.output.vtk && c.output.obj);
        let e = parse_config(&format!("{MINIMAL}\n[homotopy]\nshrink = 1.5\n")).unwrap_err();
        assert_eq!(e.key.as_deref(), Some("homotopy.shrink"));
    }
}
