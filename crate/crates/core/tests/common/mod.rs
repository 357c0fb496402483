//! Test-only reference implementations, kept independent of the library's
//! admittance-matrix and Jacobian code paths.
#![allow(dead_code)]

use flexgrid::netmodel::{BusKind, NetworkModel};

/// Net active and reactive injection at every bus, summed branch by branch
/// from the pi-model flow equations in polar form.
pub fn branch_injections(model: &NetworkModel, vm: &[f64], va: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = model.buses.len();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let idx = |id: usize| model.buses.iter().position(|b| b.id == id).unwrap();
    for l in &model.lines {
        let z2 = l.r * l.r + l.x * l.x;
        let (g, b) = (l.r / z2, -l.x / z2);
        let bc = l.b / 2.0;
        for (i, j) in [(idx(l.from_bus), idx(l.to_bus)), (idx(l.to_bus), idx(l.from_bus))] {
            let th = va[i] - va[j];
            let (vi, vj) = (vm[i], vm[j]);
            p[i] += vi * vi * g - vi * vj * (g * th.cos() + b * th.sin());
            q[i] += -vi * vi * (b + bc) - vi * vj * (g * th.sin() - b * th.cos());
        }
    }
    (p, q)
}

pub struct OracleSolution {
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
    pub iterations: usize,
}

/// Flat-start Newton with a forward-difference Jacobian and Gaussian
/// elimination. Returns `None` when it fails to converge.
pub fn brute_force_newton(model: &NetworkModel, tol: f64, max_iter: usize) -> Option<OracleSolution> {
    let n = model.buses.len();
    let mut p_sched = vec![0.0; n];
    let mut q_sched = vec![0.0; n];
    let idx = |id: usize| model.buses.iter().position(|b| b.id == id).unwrap();
    for g in &model.generators {
        p_sched[idx(g.bus)] += g.p_set;
    }
    for l in &model.loads {
        p_sched[idx(l.bus)] -= l.p;
        q_sched[idx(l.bus)] -= l.q;
    }
    let kinds: Vec<BusKind> = model.buses.iter().map(|b| b.kind).collect();
    let ang_vars: Vec<usize> = (0..n).filter(|&i| kinds[i] != BusKind::Slack).collect();
    let mag_vars: Vec<usize> = (0..n).filter(|&i| kinds[i] == BusKind::Pq).collect();
    let m = ang_vars.len() + mag_vars.len();

    let mut vm: Vec<f64> = model
        .buses
        .iter()
        .map(|b| if b.kind == BusKind::Pq { 1.0 } else { b.v_setpoint })
        .collect();
    let mut va = vec![0.0; n];

    let residual = |vm: &[f64], va: &[f64]| -> Vec<f64> {
        let (p, q) = branch_injections(model, vm, va);
        ang_vars
            .iter()
            .map(|&i| p_sched[i] - p[i])
            .chain(mag_vars.iter().map(|&i| q_sched[i] - q[i]))
            .collect()
    };

    for it in 0..=max_iter {
        let f = residual(&vm, &va);
        if !f.iter().all(|x| x.is_finite()) {
            return None;
        }
        if f.iter().all(|x| x.abs() <= tol) {
            return Some(OracleSolution { vm, va, iterations: it });
        }
        if it == max_iter {
            return None;
        }
        let h = 1e-7;
        let mut jac = vec![vec![0.0; m]; m];
        for k in 0..m {
            let (mut vm2, mut va2) = (vm.clone(), va.clone());
            if k < ang_vars.len() {
                va2[ang_vars[k]] += h;
            } else {
                vm2[mag_vars[k - ang_vars.len()]] += h;
            }
            let f2 = residual(&vm2, &va2);
            for r in 0..m {
                jac[r][k] = (f2[r] - f[r]) / h;
            }
        }
        // Solve J dx = -f.
        let mut a = jac;
        let mut rhs: Vec<f64> = f.iter().map(|x| -x).collect();
        for col in 0..m {
            let piv = (col..m).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
            if a[piv][col].abs() < 1e-14 {
                return None;
            }
            a.swap(col, piv);
            rhs.swap(col, piv);
            let (top, bottom) = a.split_at_mut(col + 1);
            let pivot = &top[col];
            for (k, r) in bottom.iter_mut().enumerate() {
                let factor = r[col] / pivot[col];
                for (x, p) in r[col..].iter_mut().zip(&pivot[col..]) {
                    *x -= factor * p;
                }
                rhs[col + 1 + k] -= factor * rhs[col];
            }
        }
        let mut dx = vec![0.0; m];
        for row in (0..m).rev() {
            let s: f64 = (row + 1..m).map(|c| a[row][c] * dx[c]).sum();
            dx[row] = (rhs[row] - s) / a[row][row];
        }
        for (k, &i) in ang_vars.iter().enumerate() {
            va[i] += dx[k];
        }
        for (k, &i) in mag_vars.iter().enumerate() {
            vm[i] += dx[ang_vars.len() + k];
        }
    }
    None
}
