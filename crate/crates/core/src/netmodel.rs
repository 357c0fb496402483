//! Grid data model, the built-in WSCC 9-bus case, and the mapping from
//! national-scale attack magnitudes onto model per-unit quantities.
//!
//! All power quantities on the model are per-unit on `s_base` unless a field
//! says otherwise. Machine constants (`h`, `d`, `xd_t`, `r_droop`) are on the
//! machine's own MVA base, which is how dynamic data is usually published.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    pub base_kv: f64,
    /// Voltage magnitude setpoint; only meaningful for slack and PV buses.
    pub v_setpoint: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    /// Total line-charging susceptance (split half at each end).
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Governor {
    /// Droop, pu speed per pu power on the machine base.
    pub r_droop: f64,
    /// Governor/turbine time constant in seconds.
    pub t_g: f64,
    /// Mechanical power limit, pu on the system base.
    pub p_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    pub p_set: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// Inertia constant, seconds on the machine base.
    pub h: f64,
    /// Damping, pu torque per pu speed on the machine base.
    pub d: f64,
    /// Transient reactance, pu on the machine base.
    pub xd_t: f64,
    pub mva_base: f64,
    pub governor: Governor,
}

impl Generator {
    /// Ratio of machine base to system base.
    pub fn base_ratio(&self, s_base: f64) -> f64 {
        self.mva_base / s_base
    }

    pub fn h_system(&self, s_base: f64) -> f64 {
        self.h * self.base_ratio(s_base)
    }

    pub fn d_system(&self, s_base: f64) -> f64 {
        self.d * self.base_ratio(s_base)
    }

    pub fn xd_t_system(&self, s_base: f64) -> f64 {
        self.xd_t / self.base_ratio(s_base)
    }

    /// Steady-state governor gain 1/R converted to the system base.
    pub fn droop_gain_system(&self, s_base: f64) -> f64 {
        self.base_ratio(s_base) / self.governor.r_droop
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub bus: usize,
    pub p: f64,
    pub q: f64,
    pub attackable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    pub name: String,
    pub s_base: f64,
    pub f_nominal: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
    /// Real-system generation (MW) that this model stands in for.
    pub national_total_mw: f64,
}

pub const DEFAULT_NATIONAL_TOTAL_MW: f64 = 17_500.0;

/// Governor and damping settings produced by `analysis::calibrate` against
/// the 12% demand-increase anchor with the default reserve set enabled.
/// Frozen here so the built-in case runs calibrated without a calibration pass.
pub const CALIBRATED_R_DROOP: f64 = 0.08;
pub const CALIBRATED_T_G: f64 = 20.0;
pub const CALIBRATED_D: f64 = 0.0;

impl NetworkModel {
    pub fn bus(&self, id: usize) -> Option<&Bus> {
        self.buses.iter().find(|b| b.id == id)
    }

    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn slack_index(&self) -> Option<usize> {
        self.buses.iter().position(|b| b.kind == BusKind::Slack)
    }

    pub fn total_load_p(&self) -> f64 {
        self.loads.iter().map(|l| l.p).sum()
    }

    pub fn total_inertia_system(&self) -> f64 {
        self.generators.iter().map(|g| g.h_system(self.s_base)).sum()
    }

    pub fn total_rating_mva(&self) -> f64 {
        self.generators.iter().map(|g| g.mva_base).sum()
    }

    /// Attackable load with the largest active power; ties go to the lowest bus id.
    pub fn largest_attackable_load_bus(&self) -> Option<usize> {
        self.loads
            .iter()
            .filter(|l| l.attackable)
            .fold(None::<&Load>, |best, l| match best {
                Some(b) if b.p > l.p || (b.p == l.p && b.bus < l.bus) => Some(b),
                _ => Some(l),
            })
            .map(|l| l.bus)
    }

    /// Applies the same governor and damping settings to every machine.
    pub fn with_governor_params(mut self, r_droop: f64, t_g: f64, d: f64) -> Self {
        for g in &mut self.generators {
            g.governor.r_droop = r_droop;
            g.governor.t_g = t_g;
            g.d = d;
        }
        self
    }

    /// Scales every load by `factor` (both P and Q).
    pub fn with_scaled_loads(mut self, factor: f64) -> Self {
        for l in &mut self.loads {
            l.p *= factor;
            l.q *= factor;
        }
        self
    }
}

/// The WSCC 3-machine 9-bus case (Anderson & Fouad numbering: loads at buses
/// 5, 6 and 8; generator step-up transformers 1-4, 2-7, 3-9).
pub fn builtin_wscc9() -> NetworkModel {
    let pv = |id, kv, v| Bus {
        id,
        kind: BusKind::Pv,
        base_kv: kv,
        v_setpoint: v,
    };
    let pq = |id| Bus {
        id,
        kind: BusKind::Pq,
        base_kv: 230.0,
        v_setpoint: 1.0,
    };
    let buses = vec![
        Bus {
            id: 1,
            kind: BusKind::Slack,
            base_kv: 16.5,
            v_setpoint: 1.04,
        },
        pv(2, 18.0, 1.025),
        pv(3, 13.8, 1.025),
        pq(4),
        pq(5),
        pq(6),
        pq(7),
        pq(8),
        pq(9),
    ];

    let line = |from_bus, to_bus, r, x, b| Line {
        from_bus,
        to_bus,
        r,
        x,
        b,
    };
    let lines = vec![
        line(1, 4, 0.0, 0.0576, 0.0),
        line(4, 5, 0.010, 0.085, 0.176),
        line(4, 6, 0.017, 0.092, 0.158),
        line(5, 7, 0.032, 0.161, 0.306),
        line(6, 9, 0.039, 0.170, 0.358),
        line(7, 8, 0.0085, 0.072, 0.149),
        line(8, 9, 0.0119, 0.1008, 0.209),
        line(2, 7, 0.0, 0.0625, 0.0),
        line(3, 9, 0.0, 0.0586, 0.0),
    ];

    // Published dynamic data is on the 100 MVA system base
    // (H = 23.64, 6.4, 3.01 s; x'd = 0.0608, 0.1198, 0.1813 pu);
    // stored here on each machine's own rating.
    let gen = |bus, p_set, mva: f64, h_sys: f64, xd_sys: f64| {
        let ratio = mva / 100.0;
        Generator {
            bus,
            p_set,
            q_min: -3.0,
            q_max: 3.0,
            h: h_sys / ratio,
            d: CALIBRATED_D,
            xd_t: xd_sys * ratio,
            mva_base: mva,
            governor: Governor {
                r_droop: CALIBRATED_R_DROOP,
                t_g: CALIBRATED_T_G,
                p_max: ratio,
            },
        }
    };
    let generators = vec![
        gen(1, 0.716, 247.5, 23.64, 0.0608),
        gen(2, 1.63, 192.0, 6.4, 0.1198),
        gen(3, 0.85, 128.0, 3.01, 0.1813),
    ];

    let load = |bus, p, q| Load {
        bus,
        p,
        q,
        attackable: true,
    };
    let loads = vec![load(5, 1.25, 0.5), load(6, 0.9, 0.3), load(8, 1.0, 0.35)];

    NetworkModel {
        name: "wscc9".to_string(),
        s_base: 100.0,
        f_nominal: 50.0,
        buses,
        lines,
        generators,
        loads,
        national_total_mw: DEFAULT_NATIONAL_TOTAL_MW,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Offending element, e.g. `bus 5`, `line 4-5`, `generator 2`.
    pub element: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.element, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn push(&mut self, element: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            element: element.into(),
            message: message.into(),
        });
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.violations
            .iter()
            .any(|v| v.message.contains(needle) || v.to_string().contains(needle))
    }

    pub fn into_result(self, wrap: fn(ValidationReport) -> Error) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(wrap(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join("; "))
    }
}

/// Checks every type invariant plus graph connectivity.
pub fn validate(model: &NetworkModel) -> ValidationReport {
    let mut report = ValidationReport::default();

    let ids: BTreeSet<usize> = model.buses.iter().map(|b| b.id).collect();
    if ids.len() != model.buses.len() {
        report.push("buses", "duplicate bus ids");
    }
    if !model.buses.is_empty() && (ids.first() != Some(&1) || ids.last() != Some(&model.buses.len()))
    {
        report.push("buses", "bus ids must be contiguous from 1");
    }

    let slack_count = model
        .buses
        .iter()
        .filter(|b| b.kind == BusKind::Slack)
        .count();
    match slack_count {
        0 => report.push("buses", "no slack bus"),
        1 => {}
        _ => report.push("buses", "multiple slack buses"),
    }
    for b in &model.buses {
        if b.kind != BusKind::Pq && b.v_setpoint <= 0.0 {
            report.push(format!("bus {}", b.id), "voltage setpoint must be positive");
        }
    }

    for l in &model.lines {
        let name = format!("line {}-{}", l.from_bus, l.to_bus);
        if l.x == 0.0 {
            report.push(&name, "zero series reactance");
        }
        if l.from_bus == l.to_bus {
            report.push(&name, "line connects a bus to itself");
        }
        for end in [l.from_bus, l.to_bus] {
            if !ids.contains(&end) {
                report.push(&name, format!("unknown bus {end}"));
            }
        }
    }

    for (i, g) in model.generators.iter().enumerate() {
        let name = format!("generator {}", i + 1);
        match model.bus(g.bus) {
            None => report.push(&name, format!("unknown bus {}", g.bus)),
            Some(b) if b.kind == BusKind::Pq => {
                report.push(&name, format!("sits on PQ bus {}", g.bus))
            }
            _ => {}
        }
        if g.h <= 0.0 {
            report.push(&name, "inertia h must be positive");
        }
        if g.xd_t <= 0.0 {
            report.push(&name, "transient reactance must be positive");
        }
        if g.mva_base <= 0.0 {
            report.push(&name, "machine MVA base must be positive");
        }
        if g.governor.r_droop <= 0.0 {
            report.push(&name, "droop must be positive");
        }
        if g.governor.t_g <= 0.0 {
            report.push(&name, "governor time constant must be positive");
        }
        if g.governor.p_max < g.p_set {
            report.push(&name, "p_max below p_set");
        }
        if g.d < 0.0 {
            report.push(&name, "damping must be non-negative");
        }
        if g.q_min > g.q_max {
            report.push(&name, "q_min above q_max");
        }
    }
    for b in model.buses.iter().filter(|b| b.kind != BusKind::Pq) {
        if !model.generators.iter().any(|g| g.bus == b.id) {
            report.push(format!("bus {}", b.id), "voltage-controlled bus without a generator");
        }
    }

    for l in &model.loads {
        let name = format!("load at bus {}", l.bus);
        if !ids.contains(&l.bus) {
            report.push(&name, format!("unknown bus {}", l.bus));
        }
        if l.p < 0.0 {
            report.push(&name, "negative active demand");
        }
    }

    if model.s_base <= 0.0 {
        report.push("model", "system base must be positive");
    }
    if model.national_total_mw <= 0.0 {
        report.push("model", "national_total_mw must be positive");
    }

    for id in disconnected_buses(model) {
        report.push(format!("bus {id}"), format!("disconnected bus {id}"));
    }

    report
}

/// Buses unreachable from the slack bus (or from the first bus if there is no slack).
fn disconnected_buses(model: &NetworkModel) -> Vec<usize> {
    let Some(root) = model
        .buses
        .iter()
        .find(|b| b.kind == BusKind::Slack)
        .or(model.buses.first())
        .map(|b| b.id)
    else {
        return Vec::new();
    };
    let mut seen = BTreeSet::from([root]);
    let mut queue = VecDeque::from([root]);
    while let Some(at) = queue.pop_front() {
        for l in &model.lines {
            let next = if l.from_bus == at {
                l.to_bus
            } else if l.to_bus == at {
                l.from_bus
            } else {
                continue;
            };
            if seen.insert(next) {
                queue.push_back(next);
            }
        }
    }
    model
        .buses
        .iter()
        .map(|b| b.id)
        .filter(|id| !seen.contains(id))
        .collect()
}

/// Attack size, either as a share of national generation or in national MW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMagnitude {
    Percent(f64),
    Megawatts(f64),
}

impl AttackMagnitude {
    pub fn value(&self) -> f64 {
        match *self {
            AttackMagnitude::Percent(v) | AttackMagnitude::Megawatts(v) => v,
        }
    }

    /// Share of national generation, as a fraction.
    pub fn fraction(&self, national_total_mw: f64) -> f64 {
        match *self {
            AttackMagnitude::Percent(p) => p / 100.0,
            AttackMagnitude::Megawatts(mw) => mw / national_total_mw,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        match *self {
            AttackMagnitude::Percent(p) => AttackMagnitude::Percent(p * factor),
            AttackMagnitude::Megawatts(mw) => AttackMagnitude::Megawatts(mw * factor),
        }
    }
}

/// Nominal model generation used as the denominator of attack shares: the
/// scheduled demand the dispatch serves (3.15 pu for WSCC 9-bus).
pub fn nominal_generation(model: &NetworkModel) -> f64 {
    model.total_load_p()
}

/// Maps a national attack magnitude onto a per-unit load delta on the model,
/// preserving the attack's share of total generation.
pub fn attack_fraction_to_pu(model: &NetworkModel, magnitude: AttackMagnitude) -> Result<f64> {
    let v = magnitude.value();
    if v < 0.0 || v.is_nan() {
        return Err(Error::NegativeMagnitude(v));
    }
    Ok(magnitude.fraction(model.national_total_mw) * nominal_generation(model))
}

/// National MW expressed in model per-unit through the same share mapping.
pub fn national_mw_to_pu(model: &NetworkModel, mw: f64) -> f64 {
    mw / model.national_total_mw * nominal_generation(model)
}

/// Sum of generator active power at the solved operating point (load plus losses).
pub fn total_generation(model: &NetworkModel) -> Result<f64> {
    let pf = crate::powerflow::solve(model, crate::powerflow::DEFAULT_TOL, crate::powerflow::DEFAULT_MAX_ITER)?;
    Ok(pf.p_gen.iter().sum())
}
