#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod output;
mod scenario;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flexgrid::analysis::{
    calibrate, feasibility, incident_anchors, magnitude_sweep, metrics, simulated_anchors,
    timing_sweep, Anchor, CalibratedParams, CalibrationBounds, FlexibilityForecast, Metrics,
    SweepFit, TimingSweep,
};
use flexgrid::attacks::{validate_scenario, AttackScenario, Family, Target};
use flexgrid::dynamics::{simulate, EventRecord};
use flexgrid::powerflow;
use serde::{Deserialize, Serialize};

use crate::output::{trace_csv, write_all_atomic};
use crate::scenario::{load_scenario, Diagnostic, OutputConfig, ReservePreset, Scenario, SystemConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Diagnostic(Diagnostic),
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Sim(#[from] flexgrid::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use flexgrid::Error as E;
        match self {
            CliError::Sim(E::Divergence { .. } | E::Singular(_)) => 3,
            CliError::Sim(E::Instability { .. }) => 4,
            _ => 2,
        }
    }
}

#[derive(Parser)]
#[command(name = "flexgrid", version, about = "Load-altering attack simulator for a 9-bus proxy grid")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// Integration step, seconds.
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// Simulated time, seconds.
    #[arg(long, global = true)]
    duration: Option<f64>,
    /// Reserve preset: `default` or `off`.
    #[arg(long, global = true, value_name = "PRESET")]
    reserves: Option<ReservePreset>,
    /// Attack bus, replacing the scenario's target.
    #[arg(long, global = true)]
    target_bus: Option<usize>,
    /// Directory that relative output paths are resolved against.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Accepted for scripting symmetry; runs are deterministic anyway.
    #[arg(long, global = true)]
    seedless: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the base-case power flow and print it.
    Powerflow {
        /// Multiply every load before solving.
        #[arg(long, default_value_t = 1.0)]
        load_scale: f64,
        #[arg(long)]
        json: bool,
    },
    /// Run one scenario and write its trace CSV and report JSON.
    Simulate { scenario: PathBuf },
    /// Sweep attack magnitudes (percent) or reversion times (seconds).
    Sweep {
        #[arg(long, value_delimiter = ',', conflicts_with = "timings", required_unless_present = "timings")]
        magnitudes: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        timings: Option<Vec<f64>>,
        scenario: PathBuf,
    },
    /// Fit governor droop, time constant and damping to frequency anchors.
    Calibrate {
        /// `simulated`, `incident`, or a TOML file of `[[anchor]]` tables.
        #[arg(long, default_value = "simulated")]
        anchors: String,
        /// Parameter file to write (default: calibration.json).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check whether flexible resources could deliver an attack of this size.
    Feasibility { mw: f64, year: u32 },
}

#[derive(Serialize)]
struct ResolvedConfig<'a> {
    scenario: &'a Path,
    system: &'a SystemConfig,
    attack: &'a AttackScenario,
    target_bus: Option<usize>,
    output: &'a OutputConfig,
}

#[derive(Serialize)]
struct SimulateReport<'a> {
    config: ResolvedConfig<'a>,
    samples: usize,
    metrics: Metrics,
    events: &'a [EventRecord],
}

#[derive(Serialize)]
#[serde(rename_all = "lowercase")]
enum SweepResult {
    Magnitudes(SweepFit),
    Timings(TimingSweep),
}

#[derive(Serialize)]
struct SweepReport<'a> {
    config: ResolvedConfig<'a>,
    result: SweepResult,
}

#[derive(Serialize)]
struct CalibrationReport<'a> {
    anchors: &'a [Anchor],
    bounds: CalibrationBounds,
    system: &'a SystemConfig,
    params: CalibratedParams,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnchorFile {
    anchor: Vec<Anchor>,
}

impl Overrides {
    fn apply_system(&self, system: &mut SystemConfig) -> Result<(), CliError> {
        if let Some(dt) = self.dt {
            system.dt_s = dt;
        }
        if let Some(d) = self.duration {
            system.duration_s = d;
        }
        if let Some(p) = self.reserves {
            system.set_reserves(p);
        }
        system.check().map_err(CliError::Usage)
    }

    fn apply(&self, s: &mut Scenario) -> Result<(), CliError> {
        self.apply_system(&mut s.system)?;
        if let Some(bus) = self.target_bus {
            s.attack.target = Target::Bus(bus);
            let report = validate_scenario(&s.attack, &s.system.model());
            if !report.is_empty() {
                return Err(CliError::Usage(format!("--target-bus {bus}: {report}")));
            }
        }
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        match &self.out_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("report serialization");
    s.push('\n');
    s.into_bytes()
}

fn cmd_powerflow(load_scale: f64, json: bool) -> Result<(), CliError> {
    if !(load_scale > 0.0) {
        return Err(CliError::Usage(format!("--load-scale must be positive, got {load_scale}")));
    }
    let model = SystemConfig::default().model().with_scaled_loads(load_scale);
    let pf = powerflow::solve(&model, powerflow::DEFAULT_TOL, powerflow::DEFAULT_MAX_ITER)?;
    if json {
        print!("{}", String::from_utf8(to_json(&pf)).expect("utf-8"));
        return Ok(());
    }
    println!(
        "converged in {} iterations, max mismatch {:.2e} pu",
        pf.iterations, pf.max_mismatch
    );
    println!("{:>4} {:>9} {:>10}", "bus", "|V| pu", "angle deg");
    for (i, b) in model.buses.iter().enumerate() {
        println!("{:>4} {:>9.5} {:>10.4}", b.id, pf.v_mag[i], pf.v_ang[i].to_degrees());
    }
    println!("{:>4} {:>9} {:>9}", "gen", "P pu", "Q pu");
    for (g, (p, q)) in model.generators.iter().zip(pf.p_gen.iter().zip(&pf.q_gen)) {
        println!("{:>4} {:>9.5} {:>9.5}", g.bus, p, q);
    }
    Ok(())
}

fn cmd_simulate(ov: &Overrides, path: &Path) -> Result<(), CliError> {
    let mut sc = load_scenario(path)?;
    ov.apply(&mut sc)?;
    let model = sc.system.model();
    let trace = simulate(&model, &sc.attack, &sc.system.sim_config())?;
    let mt = metrics(&trace);

    let trace_path = ov.resolve(&sc.output.trace);
    let report_path = ov.resolve(&sc.output.report);
    let report = SimulateReport {
        config: ResolvedConfig {
            scenario: &sc.path,
            system: &sc.system,
            attack: &sc.attack,
            target_bus: sc.attack.resolve_target(&model),
            output: &sc.output,
        },
        samples: trace.len(),
        metrics: mt.clone(),
        events: &trace.events,
    };
    write_all_atomic(&[
        (&trace_path, trace_csv(&trace).as_bytes()),
        (&report_path, &to_json(&report)),
    ])?;

    println!(
        "nadir {:.4} Hz at {:.2} s, zenith {:.4} Hz at {:.2} s, settled {:.4} Hz",
        mt.nadir, mt.nadir_time, mt.zenith, mt.zenith_time, mt.settled_f
    );
    for v in &mt.violations {
        println!("crossed {:.1} Hz at {:.2} s", v.threshold, v.first_crossing);
    }
    println!("trace  {}", trace_path.display());
    println!("report {}", report_path.display());
    Ok(())
}

fn cmd_sweep(
    ov: &Overrides,
    path: &Path,
    magnitudes: Option<Vec<f64>>,
    timings: Option<Vec<f64>>,
) -> Result<(), CliError> {
    let mut sc = load_scenario(path)?;
    ov.apply(&mut sc)?;
    let model = sc.system.model();
    let cfg = sc.system.sim_config();
    let result = match (magnitudes, timings) {
        (Some(xs), None) => {
            if sc.attack.family != Family::Static {
                return Err(CliError::Usage("--magnitudes needs a static scenario".into()));
            }
            let fit = magnitude_sweep(&model, sc.attack.types[0], &xs, &cfg)?;
            println!(
                "slope {:.4} Hz/%, intercept {:.4} Hz, R2 {:.4}",
                fit.slope, fit.intercept, fit.r_squared
            );
            for (x, reason) in &fit.skipped {
                eprintln!("skipped {x}%: {reason}");
            }
            SweepResult::Magnitudes(fit)
        }
        (None, Some(ts)) => {
            if sc.attack.family != Family::Switching {
                return Err(CliError::Usage("--timings needs a switching scenario".into()));
            }
            if let Some(bad) = ts.iter().find(|&&t| !(t > sc.attack.t_start)) {
                return Err(CliError::Usage(format!(
                    "t1 value {bad} is not later than t_start {}",
                    sc.attack.t_start
                )));
            }
            let sweep = timing_sweep(&model, &sc.attack, &ts, &cfg)?;
            println!("optimal t1 {} s", sweep.optimal_t1);
            for p in &sweep.points {
                println!("t1 {:>6.2} s: post-reversion deviation {:.4} Hz", p.t1, p.post_reversion_deviation);
            }
            SweepResult::Timings(sweep)
        }
        _ => return Err(CliError::Usage("give exactly one of --magnitudes or --timings".into())),
    };
    let report_path = ov.resolve(&sc.output.report);
    let report = SweepReport {
        config: ResolvedConfig {
            scenario: &sc.path,
            system: &sc.system,
            attack: &sc.attack,
            target_bus: sc.attack.resolve_target(&model),
            output: &sc.output,
        },
        result,
    };
    write_all_atomic(&[(&report_path, &to_json(&report))])?;
    println!("report {}", report_path.display());
    Ok(())
}

fn load_anchors(spec: &str) -> Result<Vec<Anchor>, CliError> {
    match spec {
        "simulated" => Ok(simulated_anchors()),
        "incident" => Ok(incident_anchors()),
        file => {
            let path = Path::new(file);
            let src = std::fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            let parsed: AnchorFile = toml::from_str(&src).map_err(|e| {
                let line = e
                    .span()
                    .map(|s| src[..s.start].matches('\n').count() + 1)
                    .unwrap_or(1);
                CliError::Usage(format!("{}:{line}: {}", path.display(), e.message().trim()))
            })?;
            Ok(parsed.anchor)
        }
    }
}

fn cmd_calibrate(ov: &Overrides, anchors: &str, output: Option<PathBuf>) -> Result<(), CliError> {
    let anchors = load_anchors(anchors)?;
    let mut system = SystemConfig::default();
    ov.apply_system(&mut system)?;
    let bounds = CalibrationBounds::default();
    let params = calibrate(&system.model(), &anchors, bounds, &system.sim_config())?;
    println!(
        "r_droop {:.5}, t_g {:.3} s, d {:.4}, residual {:.3e} Hz^2",
        params.r_droop, params.t_g, params.d, params.objective_residual
    );
    for f in &params.fits {
        println!("  {}%: nadir {:.4} Hz, settled {:.4} Hz", f.anchor.percent, f.nadir, f.settled);
    }
    if let Some(w) = &params.warning {
        eprintln!("warning: {w}");
    }
    let path = ov.resolve(&output.unwrap_or_else(|| "calibration.json".into()));
    let report = CalibrationReport {
        anchors: &anchors,
        bounds,
        system: &system,
        params,
    };
    write_all_atomic(&[(&path, &to_json(&report))])?;
    println!("parameters {}", path.display());
    Ok(())
}

fn cmd_feasibility(mw: f64, year: u32) -> Result<(), CliError> {
    let report = feasibility(mw, year, &FlexibilityForecast::default())?;
    print!("{}", String::from_utf8(to_json(&report)).expect("utf-8"));
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ov = &cli.overrides;
    match cli.command {
        Command::Powerflow { load_scale, json } => cmd_powerflow(load_scale, json),
        Command::Simulate { scenario } => cmd_simulate(ov, &scenario),
        Command::Sweep {
            magnitudes,
            timings,
            scenario,
        } => cmd_sweep(ov, &scenario, magnitudes, timings),
        Command::Calibrate { anchors, output } => cmd_calibrate(ov, &anchors, output),
        Command::Feasibility { mw, year } => cmd_feasibility(mw, year),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
