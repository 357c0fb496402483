//! First-swing frequency dynamics: classical machines behind transient
//! reactance, first-order droop governors, constant-impedance loads folded
//! into a Kron-reduced network among the generator internal nodes.

use std::collections::VecDeque;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::attacks::{compile, slope_trigger, AttackScenario, EventSchedule, ScheduledEvent};
use crate::error::{Error, Result};
use crate::netmodel::NetworkModel;
use crate::powerflow::{self, PowerFlowSolution};
use crate::reserves::{command, respond, ReserveProduct, ReserveState};

/// Speed deviation (pu) beyond which a run is declared unstable.
pub const INSTABILITY_LIMIT: f64 = 0.5;

pub const DEFAULT_DT: f64 = 0.01;
pub const DEFAULT_DURATION: f64 = 60.0;

/// Per-machine constants on the system base, read once from the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Machines {
    pub h: Vec<f64>,
    pub d: Vec<f64>,
    /// Governor gain 1/R on the system base.
    pub k: Vec<f64>,
    pub t_g: Vec<f64>,
    pub p_max: Vec<f64>,
    pub xd_t: Vec<f64>,
    pub omega_b: f64,
    pub f_nominal: f64,
}

impl Machines {
    pub fn from_model(model: &NetworkModel) -> Self {
        let s = model.s_base;
        let g = &model.generators;
        Machines {
            h: g.iter().map(|g| g.h_system(s)).collect(),
            d: g.iter().map(|g| g.d_system(s)).collect(),
            k: g.iter().map(|g| g.droop_gain_system(s)).collect(),
            t_g: g.iter().map(|g| g.governor.t_g).collect(),
            p_max: g.iter().map(|g| g.governor.p_max).collect(),
            xd_t: g.iter().map(|g| g.xd_t_system(s)).collect(),
            omega_b: 2.0 * PI * model.f_nominal,
            f_nominal: model.f_nominal,
        }
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicState {
    pub delta: Vec<f64>,
    pub d_omega: Vec<f64>,
    pub p_m: Vec<f64>,
    /// Governor reference, fixed at the pre-disturbance dispatch.
    pub p_m0: Vec<f64>,
    pub e_int: Vec<f64>,
    /// Reserve power injected at each machine, pu (held over a step).
    pub p_reserve: Vec<f64>,
    pub time: f64,
    /// Constant-impedance load admittance at each bus, in bus order.
    pub load_admittance: Vec<Complex64>,
    /// Commanded active demand at each bus, in bus order.
    pub effective_load: Vec<f64>,
}

impl DynamicState {
    pub fn internal_emf(&self) -> Vec<Complex64> {
        self.e_int
            .iter()
            .zip(&self.delta)
            .map(|(&e, &d)| Complex64::from_polar(e, d))
            .collect()
    }
}

/// Network reduced to the generator internal nodes for one load composition.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedNetwork {
    pub y_red: DMatrix<Complex64>,
    /// Maps internal EMFs to bus voltages: `V = v_recover * E`.
    pub v_recover: DMatrix<Complex64>,
}

impl ReducedNetwork {
    pub fn build(model: &NetworkModel, load_admittance: &[Complex64]) -> Result<Self> {
        let n = model.buses.len();
        if load_admittance.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: load_admittance.len(),
            });
        }
        let machines = Machines::from_model(model);
        let g = machines.len();
        let mut y_nn = powerflow::admittance_matrix(model)?;
        for (i, y) in load_admittance.iter().enumerate() {
            y_nn[(i, i)] += y;
        }
        let mut y_ng = DMatrix::<Complex64>::zeros(n, g);
        let mut y_gg = DMatrix::<Complex64>::zeros(g, g);
        for (k, gen) in model.generators.iter().enumerate() {
            let bus = model
                .bus_index(gen.bus)
                .ok_or(Error::Singular("locating a generator bus"))?;
            let y = Complex64::new(0.0, -1.0 / machines.xd_t[k]);
            y_nn[(bus, bus)] += y;
            y_ng[(bus, k)] = -y;
            y_gg[(k, k)] = y;
        }
        let x = y_nn
            .lu()
            .solve(&y_ng)
            .ok_or(Error::Singular("reducing the network"))?;
        let y_red = y_gg - y_ng.transpose() * &x;
        Ok(ReducedNetwork {
            y_red,
            v_recover: -x,
        })
    }

    pub fn bus_voltages(&self, emf: &[Complex64]) -> Vec<Complex64> {
        (0..self.v_recover.nrows())
            .map(|i| (0..emf.len()).map(|k| self.v_recover[(i, k)] * emf[k]).sum())
            .collect()
    }

    pub fn electrical_power(&self, delta: &[f64], e_int: &[f64]) -> Vec<f64> {
        let e: Vec<Complex64> = e_int
            .iter()
            .zip(delta)
            .map(|(&m, &a)| Complex64::from_polar(m, a))
            .collect();
        (0..e.len())
            .map(|i| {
                let current: Complex64 = (0..e.len()).map(|j| self.y_red[(i, j)] * e[j]).sum();
                (e[i] * current.conj()).re
            })
            .collect()
    }
}

/// Back-solves internal EMFs from the power-flow terminal conditions and
/// sets every governor reference to the resulting electrical output.
pub fn init_state(model: &NetworkModel, pf: &PowerFlowSolution) -> Result<DynamicState> {
    let n = model.buses.len();
    if pf.v_mag.len() != n || pf.v_ang.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: pf.v_mag.len(),
        });
    }
    let machines = Machines::from_model(model);

    let mut load_admittance = vec![Complex64::new(0.0, 0.0); n];
    let mut effective_load = vec![0.0; n];
    for l in &model.loads {
        let i = model
            .bus_index(l.bus)
            .ok_or(Error::Singular("locating a load bus"))?;
        let v2 = pf.v_mag[i] * pf.v_mag[i];
        load_admittance[i] += Complex64::new(l.p, -l.q) / v2;
        effective_load[i] += l.p;
    }

    let mut delta = Vec::with_capacity(machines.len());
    let mut e_int = Vec::with_capacity(machines.len());
    for (k, gen) in model.generators.iter().enumerate() {
        let i = model
            .bus_index(gen.bus)
            .ok_or(Error::Singular("locating a generator bus"))?;
        let v = Complex64::from_polar(pf.v_mag[i], pf.v_ang[i]);
        let s = Complex64::new(pf.p_gen[k], pf.q_gen[k]);
        let current = (s / v).conj();
        let e = v + Complex64::new(0.0, machines.xd_t[k]) * current;
        delta.push(e.arg());
        e_int.push(e.norm());
    }

    let reduced = ReducedNetwork::build(model, &load_admittance)?;
    let p_e = reduced.electrical_power(&delta, &e_int);
    let g = machines.len();
    Ok(DynamicState {
        delta,
        d_omega: vec![0.0; g],
        p_m: p_e.clone(),
        p_m0: p_e,
        e_int,
        p_reserve: vec![0.0; g],
        time: 0.0,
        load_admittance,
        effective_load,
    })
}

/// Centre-of-inertia frequency in Hz.
pub fn coi_frequency(state: &DynamicState, model: &NetworkModel) -> f64 {
    let s = model.s_base;
    let (num, den) = model
        .generators
        .iter()
        .zip(&state.d_omega)
        .fold((0.0, 0.0), |(n, d), (g, &w)| {
            let h = g.h_system(s);
            (n + h * w, d + h)
        });
    model.f_nominal * (1.0 + num / den)
}

struct Deriv {
    delta: Vec<f64>,
    d_omega: Vec<f64>,
    p_m: Vec<f64>,
}

fn derivatives(
    m: &Machines,
    reduced: &ReducedNetwork,
    state: &DynamicState,
    delta: &[f64],
    d_omega: &[f64],
    p_m: &[f64],
) -> Deriv {
    let p_e = reduced.electrical_power(delta, &state.e_int);
    let g = m.len();
    let mut out = Deriv {
        delta: vec![0.0; g],
        d_omega: vec![0.0; g],
        p_m: vec![0.0; g],
    };
    for i in 0..g {
        out.delta[i] = m.omega_b * d_omega[i];
        out.d_omega[i] =
            (p_m[i] + state.p_reserve[i] - p_e[i] - m.d[i] * d_omega[i]) / (2.0 * m.h[i]);
        let mut dp = (state.p_m0[i] - m.k[i] * d_omega[i] - p_m[i]) / m.t_g[i];
        // Anti-windup at the mechanical limits.
        if (p_m[i] >= m.p_max[i] && dp > 0.0) || (p_m[i] <= 0.0 && dp < 0.0) {
            dp = 0.0;
        }
        out.p_m[i] = dp;
    }
    out
}

fn axpy(x: &[f64], a: f64, y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(x, y)| x + a * y).collect()
}

/// One classical RK4 step of every machine state.
pub fn step(
    state: &DynamicState,
    dt: f64,
    reduced: &ReducedNetwork,
    machines: &Machines,
) -> Result<DynamicState> {
    let (d0, w0, p0) = (&state.delta, &state.d_omega, &state.p_m);
    let k1 = derivatives(machines, reduced, state, d0, w0, p0);
    let k2 = derivatives(
        machines,
        reduced,
        state,
        &axpy(d0, dt / 2.0, &k1.delta),
        &axpy(w0, dt / 2.0, &k1.d_omega),
        &axpy(p0, dt / 2.0, &k1.p_m),
    );
    let k3 = derivatives(
        machines,
        reduced,
        state,
        &axpy(d0, dt / 2.0, &k2.delta),
        &axpy(w0, dt / 2.0, &k2.d_omega),
        &axpy(p0, dt / 2.0, &k2.p_m),
    );
    let k4 = derivatives(
        machines,
        reduced,
        state,
        &axpy(d0, dt, &k3.delta),
        &axpy(w0, dt, &k3.d_omega),
        &axpy(p0, dt, &k3.p_m),
    );
    let combine = |x: &[f64], a: &[f64], b: &[f64], c: &[f64], d: &[f64]| -> Vec<f64> {
        (0..x.len())
            .map(|i| x[i] + dt / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]))
            .collect()
    };

    let mut next = state.clone();
    next.delta = combine(d0, &k1.delta, &k2.delta, &k3.delta, &k4.delta);
    next.d_omega = combine(w0, &k1.d_omega, &k2.d_omega, &k3.d_omega, &k4.d_omega);
    next.p_m = combine(p0, &k1.p_m, &k2.p_m, &k3.p_m, &k4.p_m)
        .into_iter()
        .zip(&machines.p_max)
        .map(|(p, &max)| p.clamp(0.0, max))
        .collect();
    next.time = state.time + dt;

    for (i, &w) in next.d_omega.iter().enumerate() {
        if !w.is_finite() || w.abs() > INSTABILITY_LIMIT {
            return Err(Error::Instability {
                time: next.time,
                generator: i + 1,
                d_omega: w,
                partial: None,
            });
        }
    }
    Ok(next)
}

/// Changes the load at `bus_index` so that, at the current bus voltage, its
/// active power moves by `delta_p`.
fn apply_load_delta(
    state: &mut DynamicState,
    reduced: &ReducedNetwork,
    bus_index: usize,
    delta_p: f64,
) {
    let v = reduced.bus_voltages(&state.internal_emf())[bus_index];
    state.load_admittance[bus_index] += Complex64::new(delta_p / v.norm_sqr(), 0.0);
    state.effective_load[bus_index] += delta_p;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub duration: f64,
    /// Reserve products simulated alongside the governors (empty = governor only).
    pub reserves: Vec<ReserveProduct>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: DEFAULT_DT,
            duration: DEFAULT_DURATION,
            reserves: Vec::new(),
        }
    }
}

impl SimConfig {
    /// Reserve configuration the built-in calibration was fitted with.
    pub fn calibrated() -> Self {
        SimConfig::default().with_reserves(crate::reserves::default_products())
    }

    pub fn with_duration(mut self, duration: f64) -> Self {
        self.duration = duration;
        self
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_reserves(mut self, reserves: Vec<ReserveProduct>) -> Self {
        self.reserves = reserves;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub times: Vec<f64>,
    pub f_coi: Vec<f64>,
    /// Per sample, the frequency of each machine in Hz.
    pub f_gen: Vec<Vec<f64>>,
    pub p_attack: Vec<f64>,
    pub p_reserve_up: Vec<f64>,
    pub p_reserve_down: Vec<f64>,
    pub events: Vec<EventRecord>,
}

impl SimulationTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Samples with `t < t_end`, as a new trace.
    pub fn prefix_before(&self, t_end: f64) -> SimulationTrace {
        let n = self.times.iter().take_while(|&&t| t < t_end).count();
        SimulationTrace {
            times: self.times[..n].to_vec(),
            f_coi: self.f_coi[..n].to_vec(),
            f_gen: self.f_gen[..n].to_vec(),
            p_attack: self.p_attack[..n].to_vec(),
            p_reserve_up: self.p_reserve_up[..n].to_vec(),
            p_reserve_down: self.p_reserve_down[..n].to_vec(),
            events: self
                .events
                .iter()
                .filter(|e| e.time < t_end)
                .cloned()
                .collect(),
        }
    }
}

/// Step index at which an event scheduled at `time` takes effect.
fn event_step(time: f64, dt: f64) -> usize {
    (time / dt - 1e-9).ceil().max(0.0) as usize
}

struct Ramp {
    bus_index: usize,
    per_step: f64,
    remaining: usize,
}

/// Runs `scenario` from the power-flow equilibrium of `model`.
pub fn simulate(
    model: &NetworkModel,
    scenario: &AttackScenario,
    cfg: &SimConfig,
) -> Result<SimulationTrace> {
    let schedule = compile(scenario, model)?;
    simulate_schedule(model, &schedule, cfg)
}

/// Runs a no-attack simulation.
pub fn simulate_quiet(model: &NetworkModel, cfg: &SimConfig) -> Result<SimulationTrace> {
    let schedule = EventSchedule {
        events: Vec::new(),
        triggered: Vec::new(),
        policy: None,
    };
    simulate_schedule(model, &schedule, cfg)
}

pub fn simulate_schedule(
    model: &NetworkModel,
    schedule: &EventSchedule,
    cfg: &SimConfig,
) -> Result<SimulationTrace> {
    if !(cfg.dt > 0.0) || !(cfg.duration >= 0.0) {
        return Err(Error::Config(format!(
            "dt must be positive and duration non-negative (dt = {}, duration = {})",
            cfg.dt, cfg.duration
        )));
    }
    let pf = powerflow::solve(model, powerflow::DEFAULT_TOL, powerflow::DEFAULT_MAX_ITER)?;
    let state = init_state(model, &pf)?;
    run_from(model, state, schedule, cfg)
}

fn run_from(
    model: &NetworkModel,
    mut state: DynamicState,
    schedule: &EventSchedule,
    cfg: &SimConfig,
) -> Result<SimulationTrace> {
    let dt = cfg.dt;
    let machines = Machines::from_model(model);
    let mut reduced = ReducedNetwork::build(model, &state.load_admittance)?;
    let steps = (cfg.duration / dt - 1e-9).ceil().max(0.0) as usize;
    let base_load: f64 = state.effective_load.iter().sum();

    let mut reserve_state = ReserveState::idle(&cfg.reserves);
    let mut trace = SimulationTrace::default();
    let record = |trace: &mut SimulationTrace,
                  k: usize,
                  state: &DynamicState,
                  reserve_state: &ReserveState| {
        trace.times.push(k as f64 * dt);
        trace.f_coi.push(coi_frequency(state, model));
        trace.f_gen.push(
            state
                .d_omega
                .iter()
                .map(|w| model.f_nominal * (1.0 + w))
                .collect(),
        );
        trace
            .p_attack
            .push(state.effective_load.iter().sum::<f64>() - base_load);
        let (up, down) = reserve_state.split_pu(model);
        trace.p_reserve_up.push(up);
        trace.p_reserve_down.push(down);
    };
    record(&mut trace, 0, &state, &reserve_state);

    let bus_of = |e: &ScheduledEvent| -> Result<usize> {
        model
            .bus_index(e.bus)
            .ok_or_else(|| Error::Config(format!("event targets unknown bus {}", e.bus)))
    };

    let mut next_fixed = 0;
    let mut ramps: Vec<Ramp> = Vec::new();
    let mut pending_triggered = schedule.triggered.iter();
    let mut next_triggered = pending_triggered.next();
    let window_len = schedule
        .policy
        .as_ref()
        .map(|p| (p.window / dt).round() as usize + 1)
        .unwrap_or(0);
    let mut history: VecDeque<(f64, f64)> = VecDeque::with_capacity(window_len + 1);
    let mut last_fire_time = f64::NEG_INFINITY;

    for k in 0..steps {
        let t = k as f64 * dt;
        let mut changed = false;

        let fire = |events: &[ScheduledEvent],
                        state: &mut DynamicState,
                        reduced: &ReducedNetwork,
                        ramps: &mut Vec<Ramp>,
                        trace: &mut SimulationTrace|
         -> Result<()> {
            for e in events {
                let i = bus_of(e)?;
                let n_ramp = (e.ramp / dt).round() as usize;
                if n_ramp <= 1 {
                    apply_load_delta(state, reduced, i, e.delta_p);
                } else {
                    ramps.push(Ramp {
                        bus_index: i,
                        per_step: e.delta_p / n_ramp as f64,
                        remaining: n_ramp,
                    });
                }
                trace.events.push(EventRecord {
                    time: t,
                    description: format!("{} bus {} dp {:+.6} pu", e.label, e.bus, e.delta_p),
                });
            }
            Ok(())
        };

        let mut due = Vec::new();
        while next_fixed < schedule.events.len()
            && event_step(schedule.events[next_fixed].time, dt) <= k
        {
            due.push(schedule.events[next_fixed].clone());
            next_fixed += 1;
        }
        if !due.is_empty() {
            last_fire_time = t;
            fire(&due, &mut state, &reduced, &mut ramps, &mut trace)?;
            changed = true;
        }

        if let (Some(policy), Some(group)) = (&schedule.policy, next_triggered) {
            if next_fixed >= schedule.events.len()
                && t - last_fire_time >= policy.refractory - 1e-9
                && slope_trigger(history.make_contiguous(), model.f_nominal)
            {
                fire(group, &mut state, &reduced, &mut ramps, &mut trace)?;
                last_fire_time = t;
                next_triggered = pending_triggered.next();
                changed = true;
            }
        }

        for r in ramps.iter_mut() {
            apply_load_delta(&mut state, &reduced, r.bus_index, r.per_step);
            r.remaining -= 1;
            changed = true;
        }
        ramps.retain(|r| r.remaining > 0);

        if changed {
            reduced = ReducedNetwork::build(model, &state.load_admittance)?;
        }

        if !cfg.reserves.is_empty() {
            let f = coi_frequency(&state, model);
            let commands: Vec<f64> = cfg
                .reserves
                .iter()
                .map(|p| if p.enabled { command(p, f) } else { 0.0 })
                .collect();
            reserve_state = respond(&reserve_state, &cfg.reserves, &commands, dt);
            state.p_reserve = reserve_state.injection_pu(model);
        }

        state = match step(&state, dt, &reduced, &machines) {
            Ok(s) => s,
            Err(Error::Instability {
                time,
                generator,
                d_omega,
                ..
            }) => {
                return Err(Error::Instability {
                    time,
                    generator,
                    d_omega,
                    partial: Some(Box::new(trace)),
                })
            }
            Err(e) => return Err(e),
        };
        // Keep the nominal time grid free of accumulated rounding.
        state.time = (k + 1) as f64 * dt;
        record(&mut trace, k + 1, &state, &reserve_state);

        if window_len > 0 {
            history.push_back((state.time, *trace.f_coi.last().unwrap()));
            if history.len() > window_len {
                history.pop_front();
            }
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::{AttackType, Family, Trigger};
    use crate::netmodel::{builtin_wscc9, AttackMagnitude};
    use approx::assert_relative_eq;

    fn solved() -> (NetworkModel, DynamicState) {
        let m = builtin_wscc9();
        let pf = powerflow::solve(&m, 1e-10, 50).unwrap();
        let s = init_state(&m, &pf).unwrap();
        (m, s)
    }

    #[test]
    fn init_is_equilibrium() {
        let (m, s) = solved();
        assert!(s.d_omega.iter().all(|&w| w == 0.0));
        let reduced = ReducedNetwork::build(&m, &s.load_admittance).unwrap();
        let machines = Machines::from_model(&m);
        let next = step(&s, 0.01, &reduced, &machines).unwrap();
        for i in 0..3 {
            assert!((next.delta[i] - s.delta[i]).abs() < 1e-12);
            assert!(next.d_omega[i].abs() < 1e-12);
            assert!((next.p_m[i] - s.p_m[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn reduced_network_reproduces_power_flow() {
        let m = builtin_wscc9();
        let pf = powerflow::solve(&m, 1e-12, 50).unwrap();
        let s = init_state(&m, &pf).unwrap();
        for (pm, pg) in s.p_m.iter().zip(&pf.p_gen) {
            assert!((pm - pg).abs() < 1e-8, "{pm} vs {pg}");
        }
        let reduced = ReducedNetwork::build(&m, &s.load_admittance).unwrap();
        let v = reduced.bus_voltages(&s.internal_emf());
        for (i, vi) in v.iter().enumerate() {
            assert!((vi.norm() - pf.v_mag[i]).abs() < 1e-8);
            assert!((vi.arg() - pf.v_ang[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn reduced_network_is_symmetric() {
        let (m, s) = solved();
        let r = ReducedNetwork::build(&m, &s.load_admittance).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((r.y_red[(i, j)] - r.y_red[(j, i)]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn coi_examples() {
        let (m, mut s) = solved();
        assert_eq!(coi_frequency(&s, &m), 50.0);
        s.d_omega = vec![-0.004; 3];
        assert_relative_eq!(coi_frequency(&s, &m), 49.8, epsilon = 1e-12);

        let mut two = m.clone();
        two.generators.truncate(2);
        two.generators[1].h = two.generators[0].h_system(100.0) / two.generators[1].base_ratio(100.0);
        s.d_omega = vec![0.002, -0.002];
        assert_relative_eq!(coi_frequency(&s, &two), 50.0, epsilon = 1e-12);
    }

    #[test]
    fn extra_mechanical_power_raises_frequency() {
        let (m, mut s) = solved();
        s.p_m[1] += 0.01;
        let reduced = ReducedNetwork::build(&m, &s.load_admittance).unwrap();
        let machines = Machines::from_model(&m);
        let next = step(&s, 0.01, &reduced, &machines).unwrap();
        assert!(coi_frequency(&next, &m) > 50.0);
    }

    #[test]
    fn quiet_run_holds_nominal() {
        let m = builtin_wscc9();
        let tr = simulate_quiet(&m, &SimConfig::default()).unwrap();
        assert_eq!(tr.f_coi[0], 50.0);
        assert!(tr.f_coi.iter().all(|f| (f - 50.0).abs() < 1e-4));
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(tr.len(), 6001);
    }

    #[test]
    fn load_event_changes_demand_by_commanded_amount() {
        let (m, mut s) = solved();
        let reduced = ReducedNetwork::build(&m, &s.load_admittance).unwrap();
        let i8 = m.bus_index(8).unwrap();
        let v_pre = reduced.bus_voltages(&s.internal_emf())[i8];
        let g_pre = s.load_admittance[i8].re;
        apply_load_delta(&mut s, &reduced, i8, 0.252);
        let dp_at_pre_voltage = (s.load_admittance[i8].re - g_pre) * v_pre.norm_sqr();
        assert_relative_eq!(dp_at_pre_voltage, 0.252, epsilon = 1e-12);
    }

    #[test]
    fn instability_keeps_partial_trace() {
        let mut m = builtin_wscc9();
        for g in &mut m.generators {
            g.h *= 0.01;
            g.governor.r_droop = 10.0;
            g.d = 0.0;
        }
        let s = AttackScenario::static_attack(AttackType::DI, AttackMagnitude::Percent(60.0), 0.5);
        match simulate(&m, &s, &SimConfig::default().with_duration(30.0)) {
            Err(Error::Instability { partial, time, .. }) => {
                let p = partial.expect("partial trace");
                assert!(!p.is_empty());
                assert!(*p.times.last().unwrap() < time);
            }
            other => panic!("expected instability, got {other:?}"),
        }
    }

    #[test]
    fn ramped_event_reaches_full_delta() {
        let m = builtin_wscc9();
        let mut s = AttackScenario::static_attack(AttackType::DI, AttackMagnitude::Percent(8.0), 1.0);
        s.ramp = 0.5;
        let tr = simulate(&m, &s, &SimConfig::default().with_duration(3.0)).unwrap();
        let at = |t: f64| tr.p_attack[(t / 0.01).round() as usize];
        assert_eq!(at(0.9), 0.0);
        assert!(at(1.2) > 0.0 && at(1.2) < 0.252);
        assert_relative_eq!(at(2.0), 0.252, epsilon = 1e-12);
    }

    #[test]
    fn slope_triggered_periodic_fires_all_transitions() {
        let m = builtin_wscc9();
        let mut s = AttackScenario::periodic(AttackType::DI, AttackMagnitude::Percent(8.0), 1.0, 4.0, 2);
        s.trigger = Trigger::Slope;
        assert_eq!(s.family, Family::Periodic);
        let tr = simulate(&m, &s, &SimConfig::default().with_duration(80.0)).unwrap();
        assert_eq!(tr.events.len(), 4, "{:?}", tr.events);
        assert!(tr.events.windows(2).all(|w| w[1].time - w[0].time >= 4.0 - 1e-9));
        assert!(tr.p_attack.last().unwrap().abs() < 1e-12);
    }
}
