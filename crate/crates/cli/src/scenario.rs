//! Scenario files: a strict TOML document with `[system]`, `[attack]` and
//! `[output]` tables. Every rejection names the file, the line and the key.

use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};

use flexgrid::attacks::{validate_scenario, AttackScenario, AttackType, Family, Target, Trigger};
use flexgrid::dynamics::{SimConfig, DEFAULT_DT, DEFAULT_DURATION};
use flexgrid::netmodel::{
    builtin_wscc9, validate, AttackMagnitude, NetworkModel, CALIBRATED_D, CALIBRATED_R_DROOP,
    CALIBRATED_T_G, DEFAULT_NATIONAL_TOTAL_MW,
};
use flexgrid::reserves::{default_products, validate_products, ReserveProduct};
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub file: PathBuf,
    pub line: usize,
    pub key: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}: `{}`: {}",
            self.file.display(),
            self.line,
            self.key,
            self.message
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReservePreset {
    Default,
    Off,
}

impl ReservePreset {
    pub fn products(self) -> Vec<ReserveProduct> {
        match self {
            ReservePreset::Default => default_products(),
            ReservePreset::Off => Vec::new(),
        }
    }
}

impl std::str::FromStr for ReservePreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "default" => Ok(ReservePreset::Default),
            "off" => Ok(ReservePreset::Off),
            other => Err(format!("unknown reserve preset `{other}` (expected default or off)")),
        }
    }
}

/// Partial override of one named reserve product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReserveOverride {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enabled: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity_mw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation_start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_activation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_time: Option<f64>,
}

impl ReserveOverride {
    fn apply(&self, p: &mut ReserveProduct) {
        if let Some(v) = self.enabled {
            p.enabled = v;
        }
        if let Some(v) = self.capacity_mw {
            p.capacity_mw = v;
        }
        if let Some(v) = self.activation_start {
            p.activation_start = v;
        }
        if let Some(v) = self.full_activation {
            p.full_activation = v;
        }
        if let Some(v) = self.response_time {
            p.response_time = v;
        }
    }
}

/// Fully resolved `[system]` table; every default is filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemConfig {
    pub model: String,
    pub national_total_mw: f64,
    pub dt_s: f64,
    pub duration_s: f64,
    pub r_droop: f64,
    pub t_g_s: f64,
    pub damping: f64,
    pub reserves: ReservePreset,
    pub reserve_override: Vec<ReserveOverride>,
    /// The product list the run actually used.
    pub reserve_products: Vec<ReserveProduct>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        let mut s = SystemConfig {
            model: "wscc9".into(),
            national_total_mw: DEFAULT_NATIONAL_TOTAL_MW,
            dt_s: DEFAULT_DT,
            duration_s: DEFAULT_DURATION,
            r_droop: CALIBRATED_R_DROOP,
            t_g_s: CALIBRATED_T_G,
            damping: CALIBRATED_D,
            reserves: ReservePreset::Default,
            reserve_override: Vec::new(),
            reserve_products: Vec::new(),
        };
        s.refresh_products();
        s
    }
}

impl SystemConfig {
    pub fn refresh_products(&mut self) {
        let mut products = self.reserves.products();
        for o in &self.reserve_override {
            if let Some(p) = products.iter_mut().find(|p| p.name == o.name) {
                o.apply(p);
            }
        }
        self.reserve_products = products;
    }

    pub fn set_reserves(&mut self, preset: ReservePreset) {
        self.reserves = preset;
        self.refresh_products();
    }

    pub fn model(&self) -> NetworkModel {
        let mut m = builtin_wscc9().with_governor_params(self.r_droop, self.t_g_s, self.damping);
        m.national_total_mw = self.national_total_mw;
        m
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig::default()
            .with_dt(self.dt_s)
            .with_duration(self.duration_s)
            .with_reserves(self.reserve_products.clone())
    }

    pub fn check(&self) -> Result<(), String> {
        if !(self.dt_s > 0.0) {
            return Err(format!("dt must be positive, got {}", self.dt_s));
        }
        if !(self.duration_s >= 0.0) {
            return Err(format!("duration must be non-negative, got {}", self.duration_s));
        }
        let report = validate_products(&self.reserve_products);
        if !report.is_empty() {
            return Err(report.to_string());
        }
        let report = validate(&self.model());
        if !report.is_empty() {
            return Err(report.to_string());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputConfig {
    pub trace: PathBuf,
    pub report: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub path: PathBuf,
    pub system: SystemConfig,
    pub attack: AttackScenario,
    pub output: OutputConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    system: Option<Spanned<RawSystem>>,
    attack: Option<Spanned<RawAttack>>,
    output: Option<RawOutput>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    model: Option<Spanned<String>>,
    national_total_mw: Option<Spanned<f64>>,
    dt_s: Option<Spanned<f64>>,
    duration_s: Option<Spanned<f64>>,
    r_droop: Option<Spanned<f64>>,
    t_g_s: Option<Spanned<f64>>,
    damping: Option<Spanned<f64>>,
    reserves: Option<Spanned<ReservePreset>>,
    #[serde(default)]
    reserve_override: Vec<Spanned<ReserveOverride>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAttack {
    family: Option<Spanned<Family>>,
    #[serde(rename = "type")]
    kind: Option<Spanned<AttackType>>,
    types: Option<Spanned<Vec<AttackType>>>,
    magnitude_pct: Option<Spanned<f64>>,
    magnitude_mw: Option<Spanned<f64>>,
    target_bus: Option<Spanned<usize>>,
    target: Option<Spanned<String>>,
    t_start: Option<Spanned<f64>>,
    t1: Option<Spanned<f64>>,
    interval: Option<Spanned<f64>>,
    count: Option<Spanned<u32>>,
    trigger: Option<Spanned<Trigger>>,
    ramp_s: Option<Spanned<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    trace: Option<PathBuf>,
    report: Option<PathBuf>,
}

struct Locator<'a> {
    file: &'a Path,
    src: &'a str,
}

impl Locator<'_> {
    fn line(&self, offset: usize) -> usize {
        let end = offset.min(self.src.len());
        self.src[..end].bytes().filter(|&b| b == b'\n').count() + 1
    }

    fn at(&self, span: Range<usize>, key: &str, message: impl Into<String>) -> CliError {
        CliError::Diagnostic(Diagnostic {
            file: self.file.to_path_buf(),
            line: self.line(span.start),
            key: key.to_string(),
            message: message.into(),
        })
    }
}

fn key_in_message(msg: &str) -> Option<String> {
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(msg[start..start + len].to_string())
}

fn parse_error(file: &Path, src: &str, e: toml::de::Error) -> CliError {
    let loc = Locator { file, src };
    let line = e.span().map(|s| loc.line(s.start)).unwrap_or(1);
    let message = e.message().trim().to_string();
    let key = key_in_message(&message).unwrap_or_else(|| "-".into());
    CliError::Diagnostic(Diagnostic {
        file: file.to_path_buf(),
        line,
        key,
        message,
    })
}

pub fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    let src = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(path, &src)
}

/// Parses and validates a scenario document. `path` is only used in
/// diagnostics and for default output names.
pub fn parse_scenario(path: &Path, src: &str) -> Result<Scenario, CliError> {
    let raw: RawFile = toml::from_str(src).map_err(|e| parse_error(path, src, e))?;
    let loc = Locator { file: path, src };

    let mut system = SystemConfig::default();
    if let Some(sys) = raw.system {
        let span = sys.span();
        let sys = sys.into_inner();
        if let Some(m) = sys.model {
            if m.get_ref() != "wscc9" {
                return Err(loc.at(m.span(), "model", format!("unknown model `{}` (only wscc9 is built in)", m.get_ref())));
            }
        }
        let positive = |v: Option<Spanned<f64>>, key: &str, dst: &mut f64, allow_zero: bool| {
            if let Some(v) = v {
                let x = *v.get_ref();
                let ok = if allow_zero { x >= 0.0 } else { x > 0.0 };
                if !ok {
                    let want = if allow_zero { "non-negative" } else { "positive" };
                    return Err(loc.at(v.span(), key, format!("must be {want}, got {x}")));
                }
                *dst = x;
            }
            Ok(())
        };
        positive(sys.national_total_mw, "national_total_mw", &mut system.national_total_mw, false)?;
        positive(sys.dt_s, "dt_s", &mut system.dt_s, false)?;
        positive(sys.duration_s, "duration_s", &mut system.duration_s, true)?;
        positive(sys.r_droop, "r_droop", &mut system.r_droop, false)?;
        positive(sys.t_g_s, "t_g_s", &mut system.t_g_s, false)?;
        positive(sys.damping, "damping", &mut system.damping, true)?;
        if let Some(p) = sys.reserves {
            system.reserves = *p.get_ref();
        }
        let known: Vec<String> = default_products().into_iter().map(|p| p.name).collect();
        for o in sys.reserve_override {
            if !known.contains(&o.get_ref().name) {
                return Err(loc.at(
                    o.span(),
                    "reserve_override.name",
                    format!("unknown reserve product `{}` (known: {})", o.get_ref().name, known.join(", ")),
                ));
            }
            system.reserve_override.push(o.into_inner());
        }
        system.refresh_products();
        system.check().map_err(|m| loc.at(span, "system", m))?;
    }

    let Some(attack) = raw.attack else {
        return Err(loc.at(0..0, "attack", "missing [attack] table"));
    };
    let attack_span = attack.span();
    let a = attack.into_inner();
    let missing = |key: &str| loc.at(attack_span.clone(), key, "missing required key");

    let family = a.family.as_ref().map(|f| *f.get_ref()).ok_or_else(|| missing("family"))?;
    let types = match (&a.kind, &a.types) {
        (Some(_), Some(t)) => {
            return Err(loc.at(t.span(), "types", "give either `type` or `types`, not both"))
        }
        (Some(k), None) => vec![*k.get_ref()],
        (None, Some(t)) => t.get_ref().clone(),
        (None, None) => return Err(missing("type")),
    };
    let magnitude = match (&a.magnitude_pct, &a.magnitude_mw) {
        (Some(_), Some(m)) => {
            return Err(loc.at(m.span(), "magnitude_mw", "give either magnitude_pct or magnitude_mw, not both"))
        }
        (Some(p), None) => AttackMagnitude::Percent(*p.get_ref()),
        (None, Some(m)) => AttackMagnitude::Megawatts(*m.get_ref()),
        (None, None) => return Err(missing("magnitude_pct")),
    };
    let target = match (&a.target_bus, &a.target) {
        (Some(_), Some(t)) => {
            return Err(loc.at(t.span(), "target", "give either target_bus or target, not both"))
        }
        (Some(b), None) => Target::Bus(*b.get_ref()),
        (None, Some(t)) if t.get_ref() == "largest" => Target::Largest,
        (None, Some(t)) => {
            return Err(loc.at(t.span(), "target", format!("unknown target `{}` (expected largest)", t.get_ref())))
        }
        (None, None) => Target::Bus(flexgrid::attacks::DEFAULT_TARGET_BUS),
    };
    let t_start = *a.t_start.as_ref().ok_or_else(|| missing("t_start"))?.get_ref();

    let scenario = AttackScenario {
        family,
        types,
        magnitude,
        target,
        t_start,
        t1: a.t1.as_ref().map(|v| *v.get_ref()),
        interval: a.interval.as_ref().map(|v| *v.get_ref()),
        count: a.count.as_ref().map(|v| *v.get_ref()),
        trigger: a.trigger.as_ref().map(|v| *v.get_ref()).unwrap_or(Trigger::Fixed),
        ramp: a.ramp_s.as_ref().map(|v| *v.get_ref()).unwrap_or(0.0),
    };

    let report = validate_scenario(&scenario, &system.model());
    if let Some(v) = report.violations.first() {
        let (key, span) = match v.element.as_str() {
            "types" => match (&a.kind, &a.types) {
                (Some(k), _) => ("type", Some(k.span())),
                (_, Some(t)) => ("types", Some(t.span())),
                _ => ("types", None),
            },
            "magnitude" => match (&a.magnitude_pct, &a.magnitude_mw) {
                (Some(p), _) => ("magnitude_pct", Some(p.span())),
                (_, Some(m)) => ("magnitude_mw", Some(m.span())),
                _ => ("magnitude_pct", None),
            },
            "target" => match (&a.target_bus, &a.target) {
                (Some(b), _) => ("target_bus", Some(b.span())),
                (_, Some(t)) => ("target", Some(t.span())),
                _ => ("target_bus", None),
            },
            "t_start" => ("t_start", a.t_start.as_ref().map(|v| v.span())),
            "t1" => ("t1", a.t1.as_ref().map(|v| v.span())),
            "interval" => ("interval", a.interval.as_ref().map(|v| v.span())),
            "count" => ("count", a.count.as_ref().map(|v| v.span())),
            "trigger" => ("trigger", a.trigger.as_ref().map(|v| v.span())),
            "ramp" => ("ramp_s", a.ramp_s.as_ref().map(|v| v.span())),
            _ => ("attack", None),
        };
        return Err(loc.at(span.unwrap_or(attack_span), key, v.message.clone()));
    }

    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into());
    let raw_out = raw.output.unwrap_or(RawOutput {
        trace: None,
        report: None,
    });
    let output = OutputConfig {
        trace: raw_out.trace.unwrap_or_else(|| format!("{stem}.trace.csv").into()),
        report: raw_out.report.unwrap_or_else(|| format!("{stem}.report.json").into()),
    };

    Ok(Scenario {
        path: path.to_path_buf(),
        system,
        attack: scenario,
        output,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(src: &str) -> Result<Scenario, CliError> {
        parse_scenario(Path::new("case.toml"), src)
    }

    fn diag(src: &str) -> Diagnostic {
        match parse(src) {
            Err(CliError::Diagnostic(d)) => d,
            other => panic!("expected diagnostic, got {other:?}"),
        }
    }

    #[test]
    fn minimal_static_file() {
        let s = parse("[attack]\nfamily = \"static\"\ntype = \"DI\"\nmagnitude_pct = 8\nt_start = 1\n").unwrap();
        assert_eq!(
            s.attack,
            AttackScenario::static_attack(AttackType::DI, AttackMagnitude::Percent(8.0), 1.0)
        );
        assert_eq!(s.system, SystemConfig::default());
        assert_eq!(s.output.trace, PathBuf::from("case.trace.csv"));
    }

    #[test]
    fn negative_interval_names_key_and_line() {
        let d = diag(
            "[attack]\nfamily = \"periodic\"\ntype = \"DI\"\nmagnitude_pct = 8\nt_start = 1\ninterval = -4\ncount = 3\n",
        );
        assert_eq!(d.key, "interval");
        assert_eq!(d.line, 6);
        assert!(d.message.contains("positive"), "{}", d.message);
    }

    #[test]
    fn unknown_key_rejected() {
        let d = diag("[attack]\nfamily = \"static\"\ntype = \"DI\"\ncolour = \"red\"\nmagnitude_pct = 8\nt_start = 1\n");
        assert_eq!(d.key, "colour");
        assert_eq!(d.line, 4);
    }

    #[test]
    fn missing_t_start() {
        let d = diag("[attack]\nfamily = \"static\"\ntype = \"DI\"\nmagnitude_pct = 8\n");
        assert_eq!(d.key, "t_start");
    }

    #[test]
    fn wrong_type_reported() {
        let d = diag("[attack]\nfamily = \"static\"\ntype = \"DI\"\nmagnitude_pct = \"lots\"\nt_start = 1\n");
        assert_eq!(d.line, 4);
    }

    #[test]
    fn switching_without_t1() {
        let d = diag("[attack]\nfamily = \"switching\"\ntype = \"DR\"\nmagnitude_pct = 8\nt_start = 1\n");
        assert_eq!(d.key, "t1");
    }

    #[test]
    fn reserve_override_applies() {
        let s = parse(
            "[system]\nreserves = \"default\"\n[[system.reserve_override]]\nname = \"FFR\"\nenabled = false\n\n\
             [attack]\nfamily = \"static\"\ntype = \"DI\"\nmagnitude_pct = 8\nt_start = 1\n",
        )
        .unwrap();
        let ffr = s.system.reserve_products.iter().find(|p| p.name == "FFR").unwrap();
        assert!(!ffr.enabled);
    }

    #[test]
    fn unknown_reserve_product() {
        let d = diag(
            "[system]\n[[system.reserve_override]]\nname = \"FCR-X\"\n\n[attack]\nfamily = \"static\"\ntype = \"DI\"\nmagnitude_pct = 8\nt_start = 1\n",
        );
        assert_eq!(d.key, "reserve_override.name");
    }

    #[test]
    fn combination_types_list() {
        let s = parse(
            "[attack]\nfamily = \"combination\"\ntypes = [\"DI\", \"DR\"]\nmagnitude_pct = 8\nt_start = 1\ninterval = 8\ncount = 4\n",
        )
        .unwrap();
        assert_eq!(s.attack.types, vec![AttackType::DI, AttackType::DR]);
    }
}
