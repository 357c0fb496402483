//! Attack families (static, switching, periodic, combination) and their
//! compilation into timed load-delta schedules.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{attack_fraction_to_pu, AttackMagnitude, NetworkModel, ValidationReport};

/// Static attack primitive. DI and SR lower the frequency, DR and SI raise it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttackType {
    DI,
    DR,
    SI,
    SR,
}

impl AttackType {
    /// Sign of the demand change at the target bus.
    pub fn demand_sign(self) -> f64 {
        match self {
            AttackType::DI | AttackType::SR => 1.0,
            AttackType::DR | AttackType::SI => -1.0,
        }
    }

    pub fn lowers_frequency(self) -> bool {
        self.demand_sign() > 0.0
    }

    pub fn mirrored(self) -> Self {
        match self {
            AttackType::DI => AttackType::DR,
            AttackType::DR => AttackType::DI,
            AttackType::SI => AttackType::SR,
            AttackType::SR => AttackType::SI,
        }
    }
}

impl fmt::Display for AttackType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl std::str::FromStr for AttackType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "DI" => Ok(AttackType::DI),
            "DR" => Ok(AttackType::DR),
            "SI" => Ok(AttackType::SI),
            "SR" => Ok(AttackType::SR),
            other => Err(format!("unknown attack type {other:?} (expected DI, DR, SI or SR)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Static,
    Switching,
    Periodic,
    Combination,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Bus(usize),
    Largest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trigger {
    Fixed,
    Slope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackScenario {
    pub family: Family,
    pub types: Vec<AttackType>,
    pub magnitude: AttackMagnitude,
    pub target: Target,
    pub t_start: f64,
    /// Reversion time for switching attacks.
    pub t1: Option<f64>,
    /// Time between consecutive transitions for periodic/combination attacks.
    pub interval: Option<f64>,
    /// Number of cycles for periodic/combination attacks.
    pub count: Option<u32>,
    pub trigger: Trigger,
    /// Linear ramp applied to every load change, seconds (0 = step).
    pub ramp: f64,
}

/// Default attack bus for the shipped case.
pub const DEFAULT_TARGET_BUS: usize = 8;

impl AttackScenario {
    pub fn static_attack(kind: AttackType, magnitude: AttackMagnitude, t_start: f64) -> Self {
        AttackScenario {
            family: Family::Static,
            types: vec![kind],
            magnitude,
            target: Target::Bus(DEFAULT_TARGET_BUS),
            t_start,
            t1: None,
            interval: None,
            count: None,
            trigger: Trigger::Fixed,
            ramp: 0.0,
        }
    }

    pub fn switching(kind: AttackType, magnitude: AttackMagnitude, t_start: f64, t1: f64) -> Self {
        AttackScenario {
            family: Family::Switching,
            t1: Some(t1),
            ..Self::static_attack(kind, magnitude, t_start)
        }
    }

    pub fn periodic(
        kind: AttackType,
        magnitude: AttackMagnitude,
        t_start: f64,
        interval: f64,
        count: u32,
    ) -> Self {
        AttackScenario {
            family: Family::Periodic,
            interval: Some(interval),
            count: Some(count),
            ..Self::static_attack(kind, magnitude, t_start)
        }
    }

    pub fn combination(
        types: Vec<AttackType>,
        magnitude: AttackMagnitude,
        t_start: f64,
        interval: f64,
        count: u32,
    ) -> Self {
        AttackScenario {
            family: Family::Combination,
            types,
            interval: Some(interval),
            count: Some(count),
            ..Self::static_attack(AttackType::DI, magnitude, t_start)
        }
    }

    pub fn with_target(mut self, target: Target) -> Self {
        self.target = target;
        self
    }

    pub fn with_magnitude(mut self, magnitude: AttackMagnitude) -> Self {
        self.magnitude = magnitude;
        self
    }

    /// Same scenario with every primitive replaced by its opposite.
    pub fn mirrored(mut self) -> Self {
        self.types = self.types.iter().map(|t| t.mirrored()).collect();
        self
    }

    pub fn resolve_target(&self, model: &NetworkModel) -> Option<usize> {
        match self.target {
            Target::Bus(id) => Some(id),
            Target::Largest => model.largest_attackable_load_bus(),
        }
    }

    /// Latest fixed event time, useful for choosing a simulation horizon.
    pub fn last_event_time(&self) -> f64 {
        let interval = self.interval.unwrap_or(0.0);
        let count = self.count.unwrap_or(1) as f64;
        match self.family {
            Family::Static => self.t_start,
            Family::Switching => self.t1.unwrap_or(self.t_start),
            Family::Periodic => self.t_start + (2.0 * count - 1.0) * interval,
            Family::Combination => self.t_start + count * self.types.len() as f64 * interval,
        }
    }
}

pub fn validate_scenario(s: &AttackScenario, model: &NetworkModel) -> ValidationReport {
    let mut report = ValidationReport::default();

    if s.types.is_empty() {
        report.push("types", "at least one attack type is required");
    }
    match s.family {
        Family::Static | Family::Switching if s.types.len() > 1 => {
            report.push("types", "static and switching attacks use a single type")
        }
        Family::Periodic if s.types.len() > 1 => {
            report.push("types", "periodic attacks use a single type")
        }
        Family::Combination => {
            if s.types.len() < 2 {
                report.push("types", "combination attacks need at least two types");
            }
            // Cycles repeat, so the last type is also followed by the first.
            let n = s.types.len();
            let alternates = (0..n).all(|i| {
                n < 2 || s.types[i].lowers_frequency() != s.types[(i + 1) % n].lowers_frequency()
            });
            if !alternates {
                report.push(
                    "types",
                    "combination attacks must alternate frequency-raising and frequency-lowering types",
                );
            }
        }
        _ => {}
    }

    let m = s.magnitude.value();
    if !(m >= 0.0) {
        report.push("magnitude", "magnitude must be non-negative");
    }
    if !(s.t_start >= 0.0) {
        report.push("t_start", "t_start must be non-negative");
    }
    if !(s.ramp >= 0.0) {
        report.push("ramp", "ramp must be non-negative");
    }

    match s.family {
        Family::Switching => match s.t1 {
            None => report.push("t1", "switching attacks need a reversion time t1"),
            Some(t1) if !(t1 > s.t_start) => report.push("t1", "t1 must be later than t_start"),
            _ => {}
        },
        Family::Periodic | Family::Combination => {
            match s.interval {
                None => report.push("interval", "interval is required"),
                Some(i) if !(i > 0.0) => report.push("interval", "interval must be positive"),
                _ => {}
            }
            match s.count {
                None => report.push("count", "count is required"),
                Some(0) => report.push("count", "count must be at least 1"),
                _ => {}
            }
        }
        Family::Static => {}
    }
    if s.trigger == Trigger::Slope && !matches!(s.family, Family::Periodic | Family::Combination) {
        report.push("trigger", "slope triggering applies to periodic and combination attacks");
    }

    match s.resolve_target(model) {
        None => report.push("target", "no attackable load in the model"),
        Some(bus) => {
            if !model.loads.iter().any(|l| l.bus == bus && l.attackable) {
                report.push("target", format!("bus {bus} carries no attackable load"));
            }
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledEvent {
    pub time: f64,
    pub bus: usize,
    pub delta_p: f64,
    pub ramp: f64,
    pub label: String,
}

/// Runtime timing policy for slope-triggered attacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopePolicy {
    pub window: f64,
    pub refractory: f64,
}

pub const DEFAULT_SLOPE_WINDOW_S: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSchedule {
    /// Events with fixed times, non-decreasing.
    pub events: Vec<ScheduledEvent>,
    /// Slope-triggered transitions, fired in order; their `time` fields hold
    /// the fixed-interval fallback time for reference only.
    pub triggered: Vec<Vec<ScheduledEvent>>,
    pub policy: Option<SlopePolicy>,
}

impl EventSchedule {
    pub fn all_events(&self) -> impl Iterator<Item = &ScheduledEvent> {
        self.events.iter().chain(self.triggered.iter().flatten())
    }

    pub fn net_delta(&self) -> f64 {
        self.all_events().map(|e| e.delta_p).sum()
    }
}

/// Turns a validated scenario into load-delta events at the target bus.
pub fn compile(s: &AttackScenario, model: &NetworkModel) -> Result<EventSchedule> {
    validate_scenario(s, model).into_result(Error::InvalidScenario)?;
    let bus = s.resolve_target(model).expect("validated target");
    let dp = attack_fraction_to_pu(model, s.magnitude)?;

    let ev = |time: f64, kind: AttackType, on: bool| {
        let sign = if on { 1.0 } else { -1.0 };
        ScheduledEvent {
            time,
            bus,
            delta_p: sign * kind.demand_sign() * dp,
            ramp: s.ramp,
            label: format!("{} {kind}", if on { "start" } else { "revert" }),
        }
    };

    // Groups of simultaneous transitions, in firing order.
    let mut groups: Vec<Vec<ScheduledEvent>> = Vec::new();
    let kind = s.types[0];
    match s.family {
        Family::Static => groups.push(vec![ev(s.t_start, kind, true)]),
        Family::Switching => {
            let t1 = s.t1.expect("validated t1");
            groups.push(vec![ev(s.t_start, kind, true)]);
            groups.push(vec![ev(t1, kind, false)]);
        }
        Family::Periodic => {
            let interval = s.interval.expect("validated interval");
            for k in 0..s.count.expect("validated count") {
                let t = s.t_start + 2.0 * k as f64 * interval;
                groups.push(vec![ev(t, kind, true)]);
                groups.push(vec![ev(t + interval, kind, false)]);
            }
        }
        Family::Combination => {
            let interval = s.interval.expect("validated interval");
            let n = s.types.len();
            let mut t = s.t_start;
            let mut current: Option<AttackType> = None;
            for _ in 0..s.count.expect("validated count") {
                for &next in &s.types {
                    let mut group = Vec::new();
                    if let Some(prev) = current {
                        group.push(ev(t, prev, false));
                    }
                    group.push(ev(t, next, true));
                    groups.push(group);
                    current = Some(next);
                    t += interval;
                }
            }
            if let Some(prev) = current {
                groups.push(vec![ev(t, prev, false)]);
            }
            debug_assert_eq!(groups.len() as u32, s.count.unwrap() * n as u32 + 1);
        }
    }

    Ok(match s.trigger {
        Trigger::Fixed => EventSchedule {
            events: groups.into_iter().flatten().collect(),
            triggered: Vec::new(),
            policy: None,
        },
        Trigger::Slope => {
            let mut iter = groups.into_iter();
            EventSchedule {
                events: iter.next().unwrap_or_default(),
                triggered: iter.collect(),
                policy: Some(SlopePolicy {
                    window: DEFAULT_SLOPE_WINDOW_S,
                    refractory: s.interval.expect("validated interval"),
                }),
            }
        }
    })
}

/// Decides whether a slope-timed transition should fire now, given a window
/// of recent `(t, f)` samples in time order.
///
/// Fires when the frequency is heading back toward `f_nominal` and the
/// magnitude of its slope peaked at the previous sample: the steepest slope
/// inside the window sits at the second-to-last difference, so the second
/// difference has just changed sign.
pub fn slope_trigger(history: &[(f64, f64)], f_nominal: f64) -> bool {
    if history.len() < 4 {
        return false;
    }
    let slopes: Vec<f64> = history
        .windows(2)
        .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
        .collect();
    let n = slopes.len();
    let (prev, peak, last) = (slopes[n - 3], slopes[n - 2], slopes[n - 1]);
    let (_, f_last) = history[history.len() - 1];

    let toward_nominal = (f_last - f_nominal) * last < 0.0;
    let steepest_in_window = slopes[..n - 1].iter().all(|s| s.abs() <= peak.abs());
    toward_nominal
        && peak.abs() > 1e-9
        && peak.abs() >= prev.abs()
        && peak.abs() > last.abs()
        && steepest_in_window
}
