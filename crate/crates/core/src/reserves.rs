//! Frequency reserve products: threshold-activated, capacity-limited,
//! first-order-lagged power injections, and the closed-form residual of an
//! attack after the containment reserves have absorbed what they can.

use serde::{Deserialize, Serialize};

use crate::netmodel::{national_mw_to_pu, NetworkModel, ValidationReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
    Both,
}

/// Fast and containment products act within seconds; restoration products
/// act over minutes and are left out of the residual arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReserveClass {
    Fast,
    Containment,
    Restoration,
}

/// One reserve product. For `Up` products `activation_start >= full_activation`
/// (equal means a step at that frequency); for `Down` products the reverse.
/// `Both` products ramp symmetrically: `full_activation` is the under-frequency
/// edge and the over-frequency edge is its mirror about `activation_start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReserveProduct {
    pub name: String,
    pub direction: Direction,
    pub class: ReserveClass,
    pub activation_start: f64,
    pub full_activation: f64,
    /// First-order time constant, seconds.
    pub response_time: f64,
    /// National-scale capacity, MW.
    pub capacity_mw: f64,
    pub enabled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackEffect {
    RaisesF,
    LowersF,
}

#[allow(clippy::too_many_arguments)]
fn product(
    name: &str,
    direction: Direction,
    class: ReserveClass,
    activation_start: f64,
    full_activation: f64,
    response_time: f64,
    capacity_mw: f64,
    enabled: bool,
) -> ReserveProduct {
    ReserveProduct {
        name: name.to_string(),
        direction,
        class,
        activation_start,
        full_activation,
        response_time,
        capacity_mw,
        enabled,
    }
}

/// The Swedish reserve and restoration products.
pub fn default_products() -> Vec<ReserveProduct> {
    use Direction::*;
    use ReserveClass::*;
    vec![
        product("FFR", Up, Fast, 49.6, 49.6, 1.0, 100.0, true),
        product("FCR-D up", Up, Containment, 49.9, 49.5, 2.0, 567.0, true),
        product("FCR-D down", Down, Containment, 50.1, 50.5, 2.0, 547.0, true),
        product("FCR-N", Both, Containment, 50.0, 49.9, 2.0, 235.0, true),
        product("aFRR", Both, Restoration, 50.0, 49.9, 300.0, 111.0, true),
        product("mFRR", Both, Restoration, 50.0, 49.9, 900.0, 300.0, false),
    ]
}

pub fn validate_products(products: &[ReserveProduct]) -> ValidationReport {
    let mut report = ValidationReport::default();
    for p in products {
        let el = format!("reserve {}", p.name);
        if !(p.capacity_mw >= 0.0) {
            report.push(&el, "capacity must be non-negative");
        }
        if !(p.response_time > 0.0) {
            report.push(&el, "response time must be positive");
        }
        let ok = match p.direction {
            Direction::Up => p.activation_start >= p.full_activation,
            Direction::Down => p.activation_start <= p.full_activation,
            Direction::Both => p.activation_start > p.full_activation,
        };
        if !ok {
            report.push(&el, "activation band points the wrong way for its direction");
        }
    }
    report
}

/// Commanded output in MW for frequency `f`; positive is up-regulation.
/// Zero for disabled products.
pub fn command(product: &ReserveProduct, f: f64) -> f64 {
    if !product.enabled {
        return 0.0;
    }
    let cap = product.capacity_mw;
    let start = product.activation_start;
    let full = product.full_activation;
    match product.direction {
        Direction::Up => {
            if f >= start {
                0.0
            } else if start == full {
                cap
            } else {
                cap * ((start - f) / (start - full)).min(1.0)
            }
        }
        Direction::Down => {
            if f <= start {
                0.0
            } else if start == full {
                -cap
            } else {
                -cap * ((f - start) / (full - start)).min(1.0)
            }
        }
        Direction::Both => -cap * ((f - start) / (start - full)).clamp(-1.0, 1.0),
    }
}

/// Current output of each product, MW, signed like [`command`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReserveState {
    pub outputs_mw: Vec<f64>,
}

impl ReserveState {
    pub fn idle(products: &[ReserveProduct]) -> Self {
        ReserveState {
            outputs_mw: vec![0.0; products.len()],
        }
    }

    pub fn total_mw(&self) -> f64 {
        self.outputs_mw.iter().sum()
    }

    /// (up, down) totals in model per-unit; both reported as magnitudes.
    pub fn split_pu(&self, model: &NetworkModel) -> (f64, f64) {
        let up: f64 = self.outputs_mw.iter().filter(|x| **x > 0.0).sum();
        let down: f64 = self.outputs_mw.iter().filter(|x| **x < 0.0).sum();
        (national_mw_to_pu(model, up), national_mw_to_pu(model, -down))
    }

    /// Net injection in model per-unit, shared across generators by rating.
    pub fn injection_pu(&self, model: &NetworkModel) -> Vec<f64> {
        let total = national_mw_to_pu(model, self.total_mw());
        let rating = model.total_rating_mva();
        model
            .generators
            .iter()
            .map(|g| total * g.mva_base / rating)
            .collect()
    }
}

/// Advances every product output one step of `dt` toward its command with an
/// exact first-order lag, then clamps to capacity.
pub fn respond(
    state: &ReserveState,
    products: &[ReserveProduct],
    commands_mw: &[f64],
    dt: f64,
) -> ReserveState {
    let outputs_mw = state
        .outputs_mw
        .iter()
        .zip(products)
        .zip(commands_mw)
        .map(|((&y, p), &c)| {
            let alpha = 1.0 - (-dt / p.response_time).exp();
            let next = y + alpha * (c - y);
            next.clamp(-p.capacity_mw, p.capacity_mw)
        })
        .collect();
    ReserveState { outputs_mw }
}

/// Attack power left over once every enabled fast or containment product
/// that counteracts the attack is fully deployed.
pub fn analytic_residual(attack_mw: f64, products: &[ReserveProduct], effect: AttackEffect) -> f64 {
    let countering: f64 = products
        .iter()
        .filter(|p| p.enabled && p.class != ReserveClass::Restoration)
        .filter(|p| match effect {
            AttackEffect::RaisesF => matches!(p.direction, Direction::Down | Direction::Both),
            AttackEffect::LowersF => matches!(p.direction, Direction::Up | Direction::Both),
        })
        .map(|p| p.capacity_mw)
        .sum();
    (attack_mw - countering).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::builtin_wscc9;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn by_name(name: &str) -> ReserveProduct {
        default_products().into_iter().find(|p| p.name == name).unwrap()
    }

    #[test]
    fn six_products_with_table_capacities() {
        let p = default_products();
        let caps: Vec<f64> = p.iter().map(|p| p.capacity_mw).collect();
        assert_eq!(caps, vec![100.0, 567.0, 547.0, 235.0, 111.0, 300.0]);
        assert!(validate_products(&p).is_empty());
    }

    #[test]
    fn ffr_regulates_up_only() {
        let ffr = by_name("FFR");
        assert_eq!(ffr.direction, Direction::Up);
        assert_eq!(command(&ffr, 50.6), 0.0);
        assert_eq!(command(&ffr, 49.59), 100.0);
        assert_eq!(command(&ffr, 49.65), 0.0);
    }

    #[test]
    fn mfrr_is_manual() {
        assert!(!by_name("mFRR").enabled);
        assert_eq!(command(&by_name("mFRR"), 49.0), 0.0);
    }

    #[test]
    fn fcr_n_band() {
        let n = by_name("FCR-N");
        assert_eq!(command(&n, 50.0), 0.0);
        assert_abs_diff_eq!(command(&n, 49.9), 235.0, epsilon = 1e-9);
        assert_abs_diff_eq!(command(&n, 50.1), -235.0, epsilon = 1e-9);
        assert_abs_diff_eq!(command(&n, 49.95), 117.5, epsilon = 1e-9);
    }

    #[test]
    fn fcr_d_up_ramp_midpoint() {
        let d = by_name("FCR-D up");
        assert_abs_diff_eq!(command(&d, 49.7), 283.5, epsilon = 1e-9);
        assert_eq!(command(&d, 49.95), 0.0);
        assert_eq!(command(&d, 49.0), 567.0);
    }

    #[test]
    fn fcr_d_down_mirrors() {
        let d = by_name("FCR-D down");
        assert_abs_diff_eq!(command(&d, 50.3), -273.5, epsilon = 1e-9);
        assert_eq!(command(&d, 49.0), 0.0);
        assert_eq!(command(&d, 51.0), -547.0);
    }

    #[test]
    fn first_order_step_response() {
        let mut p = by_name("FFR");
        p.response_time = 1.0;
        let products = vec![p];
        let mut state = ReserveState::idle(&products);
        for _ in 0..100 {
            state = respond(&state, &products, &[100.0], 0.01);
        }
        assert_abs_diff_eq!(state.outputs_mw[0], 100.0 * (1.0 - (-1.0f64).exp()), epsilon = 1e-9);
        assert_abs_diff_eq!(state.outputs_mw[0], 63.2, epsilon = 0.05);
    }

    #[test]
    fn idle_stays_idle() {
        let products = default_products();
        let state = respond(&ReserveState::idle(&products), &products, &[0.0; 6], 0.01);
        assert!(state.outputs_mw.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn lag_settles_on_command() {
        let products = vec![by_name("FCR-D up")];
        let mut state = ReserveState::idle(&products);
        for _ in 0..10_000 {
            state = respond(&state, &products, &[400.0], 0.01);
        }
        assert_abs_diff_eq!(state.outputs_mw[0], 400.0, epsilon = 1e-6);
    }

    #[test]
    fn injection_split_by_rating() {
        let m = builtin_wscc9();
        let state = ReserveState {
            outputs_mw: vec![175.0],
        };
        let inj = state.injection_pu(&m);
        let total: f64 = inj.iter().sum();
        assert_abs_diff_eq!(total, 175.0 / 17_500.0 * 3.15, epsilon = 1e-12);
        assert_abs_diff_eq!(inj[0] / inj[2], 247.5 / 128.0, epsilon = 1e-12);
    }

    #[test]
    fn residual_arithmetic() {
        let p = default_products();
        assert_eq!(analytic_residual(1000.0, &p, AttackEffect::RaisesF), 218.0);
        assert_eq!(analytic_residual(1200.0, &p, AttackEffect::RaisesF), 418.0);
        assert_eq!(analytic_residual(500.0, &p, AttackEffect::RaisesF), 0.0);
        assert_eq!(analytic_residual(1000.0, &p, AttackEffect::LowersF), 98.0);
    }

    #[test]
    fn bad_band_flagged() {
        let mut p = by_name("FCR-D down");
        p.full_activation = 49.5;
        assert!(validate_products(&[p]).contains("wrong way"));
    }

    proptest! {
        #[test]
        fn command_monotone_and_bounded(a in 45.0f64..55.0, b in 45.0f64..55.0) {
            for p in default_products().into_iter().filter(|p| p.enabled) {
                let (ca, cb) = (command(&p, a), command(&p, b));
                prop_assert!(ca.abs() <= p.capacity_mw + 1e-9);
                // Up-regulation never grows as frequency rises.
                if a <= b {
                    prop_assert!(ca >= cb - 1e-9);
                }
            }
        }

        #[test]
        fn residual_zero_below_capacity_and_lipschitz(a in 0.0f64..3000.0, b in 0.0f64..3000.0) {
            let p = default_products();
            let ra = analytic_residual(a, &p, AttackEffect::RaisesF);
            let rb = analytic_residual(b, &p, AttackEffect::RaisesF);
            if a <= 782.0 { prop_assert_eq!(ra, 0.0); }
            prop_assert!((ra - rb).abs() <= (a - b).abs() + 1e-12);
        }
    }
}
