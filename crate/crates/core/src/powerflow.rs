//! Full Newton-Raphson AC power flow in polar coordinates.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{validate, BusKind, NetworkModel};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    pub v_mag: Vec<f64>,
    pub v_ang: Vec<f64>,
    pub p_slack: f64,
    pub q_slack: f64,
    /// Active output per generator, in model order.
    pub p_gen: Vec<f64>,
    pub q_gen: Vec<f64>,
    pub iterations: usize,
    pub max_mismatch: f64,
}

impl PowerFlowSolution {
    pub fn voltage(&self, bus_index: usize) -> Complex64 {
        Complex64::from_polar(self.v_mag[bus_index], self.v_ang[bus_index])
    }
}

/// Bus admittance matrix, buses in model order. Loads are not included.
pub fn admittance_matrix(model: &NetworkModel) -> Result<DMatrix<Complex64>> {
    let n = model.buses.len();
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    for line in &model.lines {
        let (Some(i), Some(j)) = (model.bus_index(line.from_bus), model.bus_index(line.to_bus)) else {
            return Err(Error::InvalidModel(validate(model)));
        };
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(line.r, line.x);
        let ysh = Complex64::new(0.0, line.b / 2.0);
        y[(i, i)] += ys + ysh;
        y[(j, j)] += ys + ysh;
        y[(i, j)] -= ys;
        y[(j, i)] -= ys;
    }
    Ok(y)
}

/// Scheduled net injections (generation minus load) per bus.
fn scheduled_injections(model: &NetworkModel) -> (Vec<f64>, Vec<f64>) {
    let n = model.buses.len();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for g in &model.generators {
        if let Some(i) = model.bus_index(g.bus) {
            p[i] += g.p_set;
        }
    }
    for l in &model.loads {
        if let Some(i) = model.bus_index(l.bus) {
            p[i] -= l.p;
            q[i] -= l.q;
        }
    }
    (p, q)
}

/// Calculated bus injections for the given voltages.
pub fn bus_injections(y: &DMatrix<Complex64>, v_mag: &[f64], v_ang: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = v_mag.len();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let yij = y[(i, j)];
            if yij == Complex64::new(0.0, 0.0) {
                continue;
            }
            let t = v_ang[i] - v_ang[j];
            let (s, c) = t.sin_cos();
            p[i] += v_mag[i] * v_mag[j] * (yij.re * c + yij.im * s);
            q[i] += v_mag[i] * v_mag[j] * (yij.re * s - yij.im * c);
        }
    }
    (p, q)
}

struct Partition {
    /// Buses with an angle unknown (all but slack).
    angle: Vec<usize>,
    /// Buses with a magnitude unknown (PQ).
    mag: Vec<usize>,
}

fn partition(kinds: &[BusKind]) -> Partition {
    Partition {
        angle: (0..kinds.len()).filter(|&i| kinds[i] != BusKind::Slack).collect(),
        mag: (0..kinds.len()).filter(|&i| kinds[i] == BusKind::Pq).collect(),
    }
}

fn residual(
    y: &DMatrix<Complex64>,
    parts: &Partition,
    p_spec: &[f64],
    q_spec: &[f64],
    v_mag: &[f64],
    v_ang: &[f64],
) -> Vec<f64> {
    let (p, q) = bus_injections(y, v_mag, v_ang);
    parts
        .angle
        .iter()
        .map(|&i| p_spec[i] - p[i])
        .chain(parts.mag.iter().map(|&i| q_spec[i] - q[i]))
        .collect()
}

/// Power mismatch (scheduled minus calculated): P for every non-slack bus in
/// bus order, followed by Q for every PQ bus.
pub fn mismatch(model: &NetworkModel, v_mag: &[f64], v_ang: &[f64]) -> Result<Vec<f64>> {
    let n = model.buses.len();
    for len in [v_mag.len(), v_ang.len()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, got: len });
        }
    }
    let y = admittance_matrix(model)?;
    let (p_spec, q_spec) = scheduled_injections(model);
    let kinds: Vec<BusKind> = model.buses.iter().map(|b| b.kind).collect();
    Ok(residual(&y, &partition(&kinds), &p_spec, &q_spec, v_mag, v_ang))
}

fn jacobian(y: &DMatrix<Complex64>, parts: &Partition, v_mag: &[f64], v_ang: &[f64]) -> DMatrix<f64> {
    let (p, q) = bus_injections(y, v_mag, v_ang);
    let na = parts.angle.len();
    let dim = na + parts.mag.len();
    let mut jac = DMatrix::<f64>::zeros(dim, dim);

    // Rows: dP (angle set), dQ (mag set). Cols: dθ (angle set), dV (mag set).
    let rows = parts
        .angle
        .iter()
        .map(|&i| (i, true))
        .chain(parts.mag.iter().map(|&i| (i, false)));
    for (r, (i, is_p)) in rows.enumerate() {
        let cols = parts
            .angle
            .iter()
            .map(|&j| (j, true))
            .chain(parts.mag.iter().map(|&j| (j, false)));
        for (c, (j, is_angle)) in cols.enumerate() {
            let g = y[(i, j)].re;
            let b = y[(i, j)].im;
            let (vi, vj) = (v_mag[i], v_mag[j]);
            let (s, co) = (v_ang[i] - v_ang[j]).sin_cos();
            jac[(r, c)] = match (is_p, is_angle, i == j) {
                (true, true, false) => vi * vj * (g * s - b * co),
                (true, true, true) => -q[i] - b * vi * vi,
                (true, false, false) => vi * (g * co + b * s),
                (true, false, true) => p[i] / vi + g * vi,
                (false, true, false) => -vi * vj * (g * co + b * s),
                (false, true, true) => p[i] - g * vi * vi,
                (false, false, false) => vi * (g * s - b * co),
                (false, false, true) => q[i] / vi - b * vi,
            };
        }
    }
    jac
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

/// Solves the power flow from a flat start. PV buses whose generator reactive
/// output leaves its limits are switched to PQ at the violated limit.
pub fn solve(model: &NetworkModel, tol: f64, max_iter: usize) -> Result<PowerFlowSolution> {
    validate(model).into_result(Error::InvalidModel)?;

    let n = model.buses.len();
    let y = admittance_matrix(model)?;
    let (p_spec, mut q_spec) = scheduled_injections(model);
    let mut kinds: Vec<BusKind> = model.buses.iter().map(|b| b.kind).collect();

    let mut v_mag: Vec<f64> = model
        .buses
        .iter()
        .map(|b| if b.kind == BusKind::Pq { 1.0 } else { b.v_setpoint })
        .collect();
    let mut v_ang = vec![0.0; n];

    let mut iterations = 0;
    loop {
        let mut parts = partition(&kinds);
        let mut f = residual(&y, &parts, &p_spec, &q_spec, &v_mag, &v_ang);
        let mut norm = inf_norm(&f);
        while !(norm <= tol) {
            if iterations >= max_iter || !norm.is_finite() {
                return Err(Error::Divergence {
                    iterations,
                    max_mismatch: norm,
                });
            }
            let jac = jacobian(&y, &parts, &v_mag, &v_ang);
            let Some(dx) = jac.lu().solve(&DVector::from_vec(f.clone())) else {
                return Err(Error::Divergence {
                    iterations,
                    max_mismatch: norm,
                });
            };
            let na = parts.angle.len();
            for (k, &i) in parts.angle.iter().enumerate() {
                v_ang[i] += dx[k];
            }
            for (k, &i) in parts.mag.iter().enumerate() {
                v_mag[i] += dx[na + k];
            }
            iterations += 1;
            f = residual(&y, &parts, &p_spec, &q_spec, &v_mag, &v_ang);
            norm = inf_norm(&f);
        }

        // Reactive limit check on voltage-controlled (non-slack) buses.
        let (_, q_calc) = bus_injections(&y, &v_mag, &v_ang);
        let mut switched = false;
        for i in 0..n {
            if kinds[i] != BusKind::Pv {
                continue;
            }
            let id = model.buses[i].id;
            let gens = model.generators.iter().filter(|g| g.bus == id);
            let (q_min, q_max) = gens.fold((0.0, 0.0), |(lo, hi), g| (lo + g.q_min, hi + g.q_max));
            let load_q: f64 = model.loads.iter().filter(|l| l.bus == id).map(|l| l.q).sum();
            let q_gen = q_calc[i] + load_q;
            let limit = if q_gen > q_max + tol {
                Some(q_max)
            } else if q_gen < q_min - tol {
                Some(q_min)
            } else {
                None
            };
            if let Some(q_lim) = limit {
                kinds[i] = BusKind::Pq;
                q_spec[i] = q_lim - load_q;
                switched = true;
            }
        }
        if !switched {
            parts = partition(&kinds);
            let f = residual(&y, &parts, &p_spec, &q_spec, &v_mag, &v_ang);
            return Ok(assemble(model, &y, v_mag, v_ang, iterations, inf_norm(&f)));
        }
    }
}

fn assemble(
    model: &NetworkModel,
    y: &DMatrix<Complex64>,
    v_mag: Vec<f64>,
    v_ang: Vec<f64>,
    iterations: usize,
    max_mismatch: f64,
) -> PowerFlowSolution {
    let (p_calc, q_calc) = bus_injections(y, &v_mag, &v_ang);
    let slack = model.slack_index().expect("validated model has a slack bus");

    let mut p_gen = Vec::with_capacity(model.generators.len());
    let mut q_gen = Vec::with_capacity(model.generators.len());
    for g in &model.generators {
        let i = model.bus_index(g.bus).expect("validated generator bus");
        let (load_p, load_q) = model
            .loads
            .iter()
            .filter(|l| l.bus == g.bus)
            .fold((0.0, 0.0), |(p, q), l| (p + l.p, q + l.q));
        let peers: Vec<_> = model.generators.iter().filter(|o| o.bus == g.bus).collect();
        let share = 1.0 / peers.len() as f64;
        let bus_p = p_calc[i] + load_p;
        if i == slack {
            // Slack machines split the residual output evenly after any PV-style setpoints.
            p_gen.push(bus_p * share);
        } else {
            p_gen.push(g.p_set);
        }
        q_gen.push((q_calc[i] + load_q) * share);
    }
    let load_at_slack: (f64, f64) = model
        .loads
        .iter()
        .filter(|l| model.bus_index(l.bus) == Some(slack))
        .fold((0.0, 0.0), |(p, q), l| (p + l.p, q + l.q));

    PowerFlowSolution {
        p_slack: p_calc[slack] + load_at_slack.0,
        q_slack: q_calc[slack] + load_at_slack.1,
        v_mag,
        v_ang,
        p_gen,
        q_gen,
        iterations,
        max_mismatch,
    }
}
