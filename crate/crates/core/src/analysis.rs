//! Stability metrics, magnitude and timing sweeps, calibration of the
//! governor/damping parameters, and flexibility feasibility reports.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{AttackScenario, AttackType, Family};
use crate::dynamics::{simulate, SimConfig, SimulationTrace};
use crate::error::{Error, Result};
use crate::netmodel::{AttackMagnitude, NetworkModel};

/// Frequencies whose first crossing is reported.
pub const THRESHOLDS_HZ: [f64; 7] = [49.9, 50.1, 49.7, 49.5, 48.8, 47.5, 52.0];

pub const SETTLE_BAND_HZ: f64 = 0.02;
pub const SETTLE_HOLD_S: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub threshold: f64,
    pub first_crossing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub nadir: f64,
    pub nadir_time: f64,
    pub zenith: f64,
    pub zenith_time: f64,
    /// Frequency at the last sample.
    pub settled_f: f64,
    /// Start of the final stretch that stays within the settle band of
    /// `settled_f` for at least the hold time; `None` if it never does.
    pub settle_time: Option<f64>,
    pub violations: Vec<Violation>,
    /// Peak-to-peak excursion over the trailing half of the trace.
    pub oscillation: f64,
}

impl Metrics {
    pub fn violates(&self, threshold: f64) -> bool {
        self.violations.iter().any(|v| v.threshold == threshold)
    }

    /// Largest absolute deviation from `f_nominal`.
    pub fn peak_deviation(&self, f_nominal: f64) -> f64 {
        (f_nominal - self.nadir).max(self.zenith - f_nominal)
    }
}

pub fn metrics(trace: &SimulationTrace) -> Metrics {
    assert!(!trace.is_empty(), "metrics of an empty trace");
    let f = &trace.f_coi;
    let t = &trace.times;

    let (mut lo, mut hi) = (0, 0);
    for i in 1..f.len() {
        if f[i] < f[lo] {
            lo = i;
        }
        if f[i] > f[hi] {
            hi = i;
        }
    }

    let settled_f = *f.last().unwrap();
    let t_end = *t.last().unwrap();
    let mut start = f.len() - 1;
    while start > 0 && (f[start - 1] - settled_f).abs() <= SETTLE_BAND_HZ {
        start -= 1;
    }
    let settle_time = (t_end - t[start] >= SETTLE_HOLD_S).then_some(t[start]);

    let violations = THRESHOLDS_HZ
        .iter()
        .filter_map(|&thr| {
            let crossed = |x: f64| if thr < 50.0 { x < thr } else { x > thr };
            f.iter().position(|&x| crossed(x)).map(|i| Violation {
                threshold: thr,
                first_crossing: t[i],
            })
        })
        .collect();

    let tail = &f[f.len() / 2..];
    let tail_max = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tail_min = tail.iter().cloned().fold(f64::INFINITY, f64::min);

    Metrics {
        nadir: f[lo],
        nadir_time: t[lo],
        zenith: f[hi],
        zenith_time: t[hi],
        settled_f,
        settle_time,
        violations,
        oscillation: tail_max - tail_min,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFit {
    /// Hz per percent.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// (attack share in percent, extreme frequency in Hz), sorted by share.
    pub points: Vec<(f64, f64)>,
    /// Magnitudes whose run failed, with the reason.
    pub skipped: Vec<(f64, String)>,
}

/// Ordinary least squares of `y` on `x`; points are sorted first so the
/// result does not depend on input order.
pub fn fit_line(points: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut distinct = pts.iter().map(|p| p.0).collect::<Vec<_>>();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Underdetermined(distinct.len()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok((slope, intercept, r_squared))
}

/// Attack start used by sweeps and calibration runs.
pub const SWEEP_T_START: f64 = 1.0;

/// Static attacks of one type over several magnitudes (percent of national
/// generation); fits the nadir (frequency-lowering types) or zenith.
pub fn magnitude_sweep(
    model: &NetworkModel,
    kind: AttackType,
    magnitudes: &[f64],
    cfg: &SimConfig,
) -> Result<SweepFit> {
    let mut runs: Vec<(f64, Result<f64>)> = magnitudes
        .par_iter()
        .map(|&pct| {
            let s = AttackScenario::static_attack(kind, AttackMagnitude::Percent(pct), SWEEP_T_START);
            let y = simulate(model, &s, cfg).map(|tr| {
                let m = metrics(&tr);
                if kind.lowers_frequency() {
                    m.nadir
                } else {
                    m.zenith
                }
            });
            (pct, y)
        })
        .collect();
    runs.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for (x, y) in runs {
        match y {
            Ok(y) => points.push((x, y)),
            Err(e) => skipped.push((x, e.to_string())),
        }
    }
    let (slope, intercept, r_squared) = fit_line(&points)?;
    Ok(SweepFit {
        slope,
        intercept,
        r_squared,
        points,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingPoint {
    pub t1: f64,
    /// Largest |f - f_nominal| at or after the reversion.
    pub post_reversion_deviation: f64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSweep {
    pub optimal_t1: f64,
    pub points: Vec<TimingPoint>,
}

/// Largest |f - f_nominal| over samples with `t >= from`.
pub fn deviation_after(trace: &SimulationTrace, from: f64, f_nominal: f64) -> f64 {
    trace
        .times
        .iter()
        .zip(&trace.f_coi)
        .filter(|(t, _)| **t >= from - 1e-9)
        .map(|(_, f)| (f - f_nominal).abs())
        .fold(0.0, f64::max)
}

/// Runs `base` (a switching attack) for each reversion time and picks the
/// one with the largest post-reversion deviation; ties go to the earliest.
pub fn timing_sweep(
    model: &NetworkModel,
    base: &AttackScenario,
    t1_values: &[f64],
    cfg: &SimConfig,
) -> Result<TimingSweep> {
    if base.family != Family::Switching {
        return Err(Error::Config("timing sweeps need a switching scenario".into()));
    }
    if t1_values.is_empty() {
        return Err(Error::Config("timing sweep needs at least one t1 value".into()));
    }
    let mut points: Vec<TimingPoint> = t1_values
        .par_iter()
        .map(|&t1| {
            let s = AttackScenario {
                t1: Some(t1),
                ..base.clone()
            };
            let tr = simulate(model, &s, cfg)?;
            Ok(TimingPoint {
                t1,
                post_reversion_deviation: deviation_after(&tr, t1, model.f_nominal),
                metrics: metrics(&tr),
            })
        })
        .collect::<Result<_>>()?;
    points.sort_by(|a, b| a.t1.total_cmp(&b.t1));

    let mut best = &points[0];
    for p in &points[1..] {
        if p.post_reversion_deviation > best.post_reversion_deviation {
            best = p;
        }
    }
    Ok(TimingSweep {
        optimal_t1: best.t1,
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Anchor {
    /// Static DI size, percent of national generation.
    pub percent: f64,
    pub nadir: Option<f64>,
    pub settled: Option<f64>,
}

/// The simulated 12% demand-increase response.
pub fn simulated_anchors() -> Vec<Anchor> {
    vec![Anchor {
        percent: 12.0,
        nadir: Some(49.17),
        settled: Some(49.8),
    }]
}

/// The recorded 1400 MW (8%) loss-of-infeed incident.
pub fn incident_anchors() -> Vec<Anchor> {
    vec![Anchor {
        percent: 8.0,
        nadir: Some(49.36),
        settled: Some(49.8),
    }]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBounds {
    pub r_droop: (f64, f64),
    pub t_g: (f64, f64),
    pub d: (f64, f64),
}

impl Default for CalibrationBounds {
    fn default() -> Self {
        CalibrationBounds {
            r_droop: (0.02, 0.08),
            t_g: (0.2, 20.0),
            d: (0.0, 2.0),
        }
    }
}

/// Per-anchor outcome of a calibration run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorFit {
    pub anchor: Anchor,
    pub nadir: f64,
    pub settled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedParams {
    pub r_droop: f64,
    pub t_g: f64,
    pub d: f64,
    /// Sum of squared anchor errors, Hz².
    pub objective_residual: f64,
    pub fits: Vec<AnchorFit>,
    /// Set when the residual exceeds the per-anchor quality threshold.
    pub warning: Option<String>,
}

impl CalibratedParams {
    pub fn apply(&self, model: NetworkModel) -> NetworkModel {
        model.with_governor_params(self.r_droop, self.t_g, self.d)
    }
}

pub const CALIBRATION_QUALITY_HZ2: f64 = 0.01;
const GRID: (usize, usize, usize) = (9, 9, 5);
const REFINE_ROUNDS: usize = 3;

fn linspace((lo, hi): (f64, f64), n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn evaluate(
    model: &NetworkModel,
    anchors: &[Anchor],
    cfg: &SimConfig,
    p: [f64; 3],
) -> (f64, Vec<AnchorFit>) {
    let m = model.clone().with_governor_params(p[0], p[1], p[2]);
    let mut total = 0.0;
    let mut fits = Vec::with_capacity(anchors.len());
    for a in anchors {
        let s = AttackScenario::static_attack(
            AttackType::DI,
            AttackMagnitude::Percent(a.percent),
            SWEEP_T_START,
        );
        match simulate(&m, &s, cfg) {
            Ok(tr) => {
                let mt = metrics(&tr);
                total += a.nadir.map_or(0.0, |n| (mt.nadir - n).powi(2));
                total += a.settled.map_or(0.0, |n| (mt.settled_f - n).powi(2));
                fits.push(AnchorFit {
                    anchor: *a,
                    nadir: mt.nadir,
                    settled: mt.settled_f,
                });
            }
            Err(_) => return (f64::INFINITY, Vec::new()),
        }
    }
    (total, fits)
}

/// Coarse grid over the bounds, then rounds of coordinate refinement with a
/// halving step. Deterministic for fixed inputs.
pub fn calibrate(
    model: &NetworkModel,
    anchors: &[Anchor],
    bounds: CalibrationBounds,
    cfg: &SimConfig,
) -> Result<CalibratedParams> {
    if anchors.is_empty() {
        return Err(Error::Config("calibration needs at least one anchor".into()));
    }
    let ranges = [bounds.r_droop, bounds.t_g, bounds.d];
    for (lo, hi) in ranges {
        if !(lo <= hi) {
            return Err(Error::Config(format!("empty calibration range [{lo}, {hi}]")));
        }
    }

    let mut grid = Vec::new();
    for r in linspace(bounds.r_droop, GRID.0) {
        for t in linspace(bounds.t_g, GRID.1) {
            for d in linspace(bounds.d, GRID.2) {
                grid.push([r, t, d]);
            }
        }
    }
    let scored: Vec<(f64, [f64; 3])> = grid
        .par_iter()
        .map(|&p| (evaluate(model, anchors, cfg, p).0, p))
        .collect();
    // First minimum in grid order keeps ties deterministic.
    let (mut best_score, mut best) = scored[0];
    for &(s, p) in &scored[1..] {
        if s < best_score {
            best_score = s;
            best = p;
        }
    }

    let mut steps = [
        (ranges[0].1 - ranges[0].0) / (GRID.0 - 1) as f64,
        (ranges[1].1 - ranges[1].0) / (GRID.1 - 1) as f64,
        (ranges[2].1 - ranges[2].0) / (GRID.2 - 1) as f64,
    ];
    for _ in 0..REFINE_ROUNDS {
        for s in &mut steps {
            *s /= 2.0;
        }
        for axis in 0..3 {
            loop {
                let candidates: Vec<[f64; 3]> = [-1.0, 1.0]
                    .iter()
                    .map(|sign| {
                        let mut p = best;
                        p[axis] = (p[axis] + sign * steps[axis]).clamp(ranges[axis].0, ranges[axis].1);
                        p
                    })
                    .filter(|p| *p != best)
                    .collect();
                let scored: Vec<(f64, [f64; 3])> = candidates
                    .par_iter()
                    .map(|&p| (evaluate(model, anchors, cfg, p).0, p))
                    .collect();
                let mut improved = false;
                for (s, p) in scored {
                    if s < best_score {
                        best_score = s;
                        best = p;
                        improved = true;
                    }
                }
                if !improved {
                    break;
                }
            }
        }
    }

    let (objective_residual, fits) = evaluate(model, anchors, cfg, best);
    let limit = CALIBRATION_QUALITY_HZ2 * anchors.len() as f64;
    let warning = (objective_residual > limit).then(|| {
        format!("calibration residual {objective_residual:.4} Hz² exceeds {limit:.4} Hz²")
    });
    Ok(CalibratedParams {
        r_droop: best[0],
        t_g: best[1],
        d: best[2],
        objective_residual,
        fits,
        warning,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlexClass {
    Battery,
    HeatPump,
    EvCharging,
    Electrolysis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearForecast {
    pub year: u32,
    pub total_mw: f64,
    pub classes: Vec<(FlexClass, f64)>,
    pub national_demand_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlexibilityForecast {
    pub years: Vec<YearForecast>,
}

impl FlexibilityForecast {
    pub fn year(&self, year: u32) -> Option<&YearForecast> {
        self.years.iter().find(|y| y.year == year)
    }
}

/// Swedish flexibility forecast. Classes without a figure for a year are left out.
impl Default for FlexibilityForecast {
    fn default() -> Self {
        use FlexClass::*;
        FlexibilityForecast {
            years: vec![
                YearForecast {
                    year: 2025,
                    total_mw: 1747.0,
                    classes: vec![(Battery, 1000.0), (Electrolysis, 120.0)],
                    national_demand_mw: 17800.0,
                },
                YearForecast {
                    year: 2030,
                    total_mw: 8000.0,
                    classes: vec![
                        (Battery, 1200.0),
                        (HeatPump, 1300.0),
                        (EvCharging, 500.0),
                        (Electrolysis, 4400.0),
                    ],
                    national_demand_mw: 25800.0,
                },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub attack_mw: f64,
    pub year: u32,
    pub total_flexibility_mw: f64,
    pub feasible: bool,
    /// Classes that could deliver the attack on their own.
    pub sufficient_classes: Vec<FlexClass>,
    /// Attack as a percentage of national demand.
    pub share_of_demand_pct: f64,
}

pub fn feasibility(
    attack_mw: f64,
    year: u32,
    forecast: &FlexibilityForecast,
) -> Result<FeasibilityReport> {
    let y = forecast
        .year(year)
        .ok_or_else(|| Error::Config(format!("no flexibility forecast for year {year}")))?;
    if !(attack_mw >= 0.0) {
        return Err(Error::NegativeMagnitude(attack_mw));
    }
    Ok(FeasibilityReport {
        attack_mw,
        year,
        total_flexibility_mw: y.total_mw,
        feasible: attack_mw <= y.total_mw,
        sufficient_classes: y
            .classes
            .iter()
            .filter(|(_, mw)| attack_mw <= *mw)
            .map(|(c, _)| *c)
            .collect(),
        share_of_demand_pct: attack_mw / y.national_demand_mw * 100.0,
    })
}
