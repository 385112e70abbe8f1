//! Experiment runners. Each produces a deterministic result table (one row
//! per grid point, grid order), a JSON summary with a schema block and
//! pass/fail checks, and optionally extra artifacts (solved schedules).

use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Map, Value};
use thiserror::Error;

use qubus_core::fock::{cutoff_rule, evolve, fidelity, FockVector};
use qubus_core::gate::{
    apply_sequence, build_two_qubit_gate_for_targets, build_utot, composite_discrepancy_report,
    solve_eight_op_schedule, GateParams, GateSequence, Primitive,
};
use qubus_core::hybrid::{Bitstring, HybridState};
use qubus_core::loss::{
    compensate_sequence, dephasing_exponent, gate_fidelity, apply_sequence_lossy, GateOutcome,
    MetricsReport,
};
use qubus_core::phase_space::{angle_wrap, CoherentBranch};

use crate::config::{
    fmt_complex, fmt_f64, CutoffPolicy, Experiment, GateSpec, InputSpec, ScenarioConfig,
};

/// Largest automatic cutoff the desk-scale Fock backend will attempt.
const MAX_AUTO_CUTOFF: usize = 1024;

#[derive(Debug, Error)]
pub enum RunError {
    /// Pre-execution feasibility failure: exits with the validation code.
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    Internal(String),
}

pub struct ResultTable {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    /// `<=` or `>=`.
    pub op: &'static str,
    pub pass: bool,
}

impl Check {
    fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Check {
        Check {
            name: name.into(),
            value,
            threshold,
            op: "<=",
            pass: value <= threshold,
        }
    }

    fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Check {
        Check {
            name: name.into(),
            value,
            threshold,
            op: ">=",
            pass: value >= threshold,
        }
    }

    fn to_json(&self) -> Value {
        json!({
            "name": self.name,
            "value": self.value,
            "threshold": self.threshold,
            "op": self.op,
            "pass": self.pass,
        })
    }
}

pub struct RunArtifacts {
    pub table: ResultTable,
    pub summary: Value,
    pub checks: Vec<Check>,
    /// (file name, contents) pairs written next to results.csv.
    pub extra_files: Vec<(String, String)>,
}

impl RunArtifacts {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

pub fn run(config: &ScenarioConfig) -> Result<RunArtifacts, RunError> {
    match config.experiment {
        Experiment::GateCheck => run_gate_check(config),
        Experiment::Sweep => run_sweep(config),
        Experiment::LossScan => run_loss_scan(config),
        Experiment::FockCompare => run_fock_compare(config),
        Experiment::SolveSchedule => run_solve_schedule(config),
    }
}

fn internal(e: impl std::fmt::Display) -> RunError {
    RunError::Internal(e.to_string())
}

/// Per-index deterministic RNG stream.
fn input_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller from two uniforms.
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn input_coeffs(config: &ScenarioConfig, index: usize) -> [Complex64; 4] {
    let normalize = |mut coeffs: [Complex64; 4]| {
        let norm: f64 = coeffs.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for slot in coeffs.iter_mut() {
            *slot /= norm;
        }
        coeffs
    };
    match &config.input {
        InputSpec::Coeffs(c) => normalize(*c),
        InputSpec::Named(name) => match name.as_str() {
            "basis00" => basis(0),
            "basis01" => basis(1),
            "basis10" => basis(2),
            "basis11" => basis(3),
            "uniform" => normalize([Complex64::new(1.0, 0.0); 4]),
            "random" => {
                let mut rng = input_rng(config.seed, index);
                let mut coeffs = [Complex64::new(0.0, 0.0); 4];
                for slot in coeffs.iter_mut() {
                    *slot = Complex64::new(gaussian(&mut rng), gaussian(&mut rng));
                }
                normalize(coeffs)
            }
            _ => unreachable!("validated at config time"),
        },
    }
}

fn basis(index: usize) -> [Complex64; 4] {
    let mut coeffs = [Complex64::new(0.0, 0.0); 4];
    coeffs[index] = Complex64::new(1.0, 0.0);
    coeffs
}

/// Build the configured gate sequence and its parameters.
fn build_gate(config: &ScenarioConfig) -> Result<(GateSequence, GateParams), RunError> {
    match config.gate {
        GateSpec::Direct { beta1, beta2 } => {
            Ok((build_utot(beta1, beta2), GateParams::from_betas(beta1, beta2)))
        }
        GateSpec::Simulated { theta1, theta2, d } => {
            let gate =
                build_two_qubit_gate_for_targets(d, d, theta1, theta2).map_err(internal)?;
            Ok((gate.sequence, gate.params))
        }
    }
}

fn resolve_cutoff(config: &ScenarioConfig, seq: &GateSequence) -> Result<usize, RunError> {
    match config.cutoff {
        CutoffPolicy::Fixed(n) => Ok(n),
        CutoffPolicy::Auto => {
            let needed = cutoff_rule(seq.max_excursion(config.input_bus.norm()));
            if needed > MAX_AUTO_CUTOFF {
                return Err(RunError::Infeasible(format!(
                    "automatic Fock cutoff {needed} exceeds the desk-scale limit {MAX_AUTO_CUTOFF}; \
                     use the exact backend for this regime"
                )));
            }
            Ok(needed)
        }
    }
}

fn timed<T>(timing: bool, body: impl FnOnce() -> T) -> (T, u128) {
    let start = Instant::now();
    let value = body();
    let ms = if timing {
        start.elapsed().as_millis()
    } else {
        0
    };
    (value, ms)
}

fn metric_cells(report: &MetricsReport) -> Vec<String> {
    let mut cells = vec![
        fmt_f64(report.two_qubit_fidelity),
        fmt_f64(report.disentanglement_defect),
        fmt_f64(report.purity),
    ];
    for phase in report.conditional_phases {
        cells.push(fmt_f64(phase));
    }
    for coherence in &report.coherence_magnitudes {
        cells.push(fmt_f64(coherence.magnitude));
    }
    cells.push(fmt_f64(report.env_photon_budget));
    cells
}

const METRIC_COLUMNS: &[&str] = &[
    "fidelity_exact",
    "defect",
    "purity",
    "phase_00",
    "phase_01",
    "phase_10",
    "phase_11",
    "coh_00_01",
    "coh_00_10",
    "coh_00_11",
    "coh_01_10",
    "coh_01_11",
    "coh_10_11",
    "env_budget",
];

struct FockRun {
    fidelity_fock: f64,
    fock_vs_exact: f64,
    leakage: f64,
}

/// One Fock evolution of `seq` from `input ⊗ |bus⟩`, compared against the
/// target metrics and the exact-backend prediction.
fn run_fock_once(
    seq: &GateSequence,
    params: &GateParams,
    input: &[Complex64; 4],
    bus: Complex64,
    cutoff: usize,
    exact_out: &HybridState,
) -> Result<FockRun, RunError> {
    let joint = FockVector::join(
        input,
        &FockVector::coherent(&CoherentBranch::new(bus), cutoff),
    );
    let evolved = evolve(seq, &joint).map_err(internal)?;
    let report = gate_fidelity(&GateOutcome::Fock(&evolved.state), params).map_err(internal)?;
    let predicted = FockVector::from_hybrid(exact_out, cutoff).map_err(internal)?;
    let fock_vs_exact = fidelity(&evolved.state, &predicted).map_err(internal)?;
    Ok(FockRun {
        fidelity_fock: report.two_qubit_fidelity,
        fock_vs_exact,
        leakage: evolved.leakage.total.abs(),
    })
}

fn schema_block(config: &ScenarioConfig, columns: &[&'static str]) -> Value {
    json!({
        "experiment": config.experiment.name(),
        "backend": config.backend.name(),
        "columns": columns,
    })
}

fn config_echo(config: &ScenarioConfig) -> Value {
    let mut map = Map::new();
    for (k, v) in &config.echo {
        map.insert(k.clone(), Value::String(v.clone()));
    }
    Value::Object(map)
}

fn finish(
    config: &ScenarioConfig,
    columns: Vec<&'static str>,
    rows: Vec<Vec<String>>,
    checks: Vec<Check>,
    mut aggregates: Map<String, Value>,
    extra_files: Vec<(String, String)>,
) -> RunArtifacts {
    aggregates.insert("rows".into(), json!(rows.len()));
    let summary = json!({
        "config": config_echo(config),
        "schema": schema_block(config, &columns),
        "aggregates": Value::Object(aggregates),
        "checks": checks.iter().map(Check::to_json).collect::<Vec<_>>(),
        "pass": checks.iter().all(|c| c.pass),
    });
    RunArtifacts {
        table: ResultTable { columns, rows },
        summary,
        checks,
        extra_files,
    }
}

fn min_of(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(f64::INFINITY, f64::min)
}

fn max_of(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

// ---------------------------------------------------------------- gate-check

fn run_gate_check(config: &ScenarioConfig) -> Result<RunArtifacts, RunError> {
    let (seq, params) = build_gate(config)?;
    let want_fock = config.backend.runs_fock();
    let cutoff = if want_fock {
        resolve_cutoff(config, &seq)?
    } else {
        0
    };

    let mut columns = vec!["input_index"];
    columns.extend_from_slice(METRIC_COLUMNS);
    columns.extend_from_slice(&["fidelity_fock", "fock_vs_exact", "leakage", "cutoff", "runtime_ms"]);

    struct RowData {
        cells: Vec<String>,
        fidelity_exact: f64,
        defect: f64,
        fock: Option<FockRun>,
    }

    let rows: Result<Vec<RowData>, RunError> = (0..config.input_count)
        .into_par_iter()
        .map(|index| {
            let input = input_coeffs(config, index);
            let (result, ms) = timed(config.timing, || {
                let state = HybridState::init_state(&input, config.input_bus).map_err(internal)?;
                let exact_out = apply_sequence(&state, &seq).map_err(internal)?;
                let report =
                    gate_fidelity(&GateOutcome::Exact(&exact_out), &params).map_err(internal)?;
                let fock = if want_fock {
                    Some(run_fock_once(
                        &seq, &params, &input, config.input_bus, cutoff, &exact_out,
                    )?)
                } else {
                    None
                };
                Ok::<_, RunError>((report, fock))
            });
            let (report, fock) = result?;
            let mut cells = vec![index.to_string()];
            cells.extend(metric_cells(&report));
            match &fock {
                Some(f) => {
                    cells.push(fmt_f64(f.fidelity_fock));
                    cells.push(fmt_f64(f.fock_vs_exact));
                    cells.push(fmt_f64(f.leakage));
                    cells.push(cutoff.to_string());
                }
                None => {
                    cells.push(String::new());
                    cells.push(String::new());
                    cells.push(String::new());
                    cells.push(String::new());
                }
            }
            cells.push(ms.to_string());
            Ok(RowData {
                cells,
                fidelity_exact: report.two_qubit_fidelity,
                defect: report.disentanglement_defect,
                fock,
            })
        })
        .collect();
    let rows = rows?;

    let mut checks = vec![
        Check::at_least(
            "min fidelity_exact",
            min_of(rows.iter().map(|r| r.fidelity_exact)),
            config.min_fidelity_exact,
        ),
        Check::at_most(
            "max defect",
            max_of(rows.iter().map(|r| r.defect)),
            config.max_defect,
        ),
    ];
    if want_fock {
        checks.push(Check::at_least(
            "min fidelity_fock",
            min_of(rows.iter().filter_map(|r| r.fock.as_ref().map(|f| f.fidelity_fock))),
            config.min_fidelity_fock,
        ));
        checks.push(Check::at_least(
            "min fock_vs_exact",
            min_of(rows.iter().filter_map(|r| r.fock.as_ref().map(|f| f.fock_vs_exact))),
            config.min_fidelity_fock,
        ));
        if config.strict {
            checks.push(Check::at_most(
                "max leakage (strict)",
                max_of(rows.iter().filter_map(|r| r.fock.as_ref().map(|f| f.leakage))),
                config.max_leakage,
            ));
        }
    }

    let mut aggregates = Map::new();
    aggregates.insert(
        "min_fidelity_exact".into(),
        json!(min_of(rows.iter().map(|r| r.fidelity_exact))),
    );
    aggregates.insert(
        "max_defect".into(),
        json!(max_of(rows.iter().map(|r| r.defect))),
    );
    aggregates.insert("gate_phase_target".into(), json!(params.target_phase()));
    aggregates.insert("beta1".into(), json!(fmt_complex(params.beta1)));
    aggregates.insert("beta2".into(), json!(fmt_complex(params.beta2)));
    if let Some(alpha) = config.slot_alpha() {
        aggregates.insert("alpha_slot".into(), json!(alpha));
        aggregates.insert("d".into(), json!(params.d()));
    }

    Ok(finish(
        config,
        columns,
        rows.into_iter().map(|r| r.cells).collect(),
        checks,
        aggregates,
        Vec::new(),
    ))
}

// --------------------------------------------------------------------- sweep

fn run_sweep(config: &ScenarioConfig) -> Result<RunArtifacts, RunError> {
    let d = match config.gate {
        GateSpec::Simulated { d, .. } => d,
        GateSpec::Direct { beta1, .. } => beta1.norm(),
    };
    let mut columns = vec!["theta", "alpha_slot", "d"];
    columns.extend_from_slice(METRIC_COLUMNS);
    columns.extend_from_slice(&["fidelity_fock", "fock_vs_exact", "leakage", "cutoff", "runtime_ms"]);

    struct RowData {
        cells: Vec<String>,
        fidelity_exact: f64,
        defect: f64,
        fock_fidelities: Option<f64>,
    }

    let rows: Result<Vec<RowData>, RunError> = config
        .sweep_theta
        .par_iter()
        .enumerate()
        .map(|(index, &theta)| {
            if theta.sin() == 0.0 {
                return Err(RunError::Infeasible(format!(
                    "sweep.theta contains {theta} with sin(theta) = 0"
                )));
            }
            let gate = build_two_qubit_gate_for_targets(d, d, theta, theta).map_err(internal)?;
            let input = input_coeffs(config, index);
            let (result, ms) = timed(config.timing, || {
                let state = HybridState::init_state(&input, config.input_bus).map_err(internal)?;
                let exact_out = apply_sequence(&state, &gate.sequence).map_err(internal)?;
                let report = gate_fidelity(&GateOutcome::Exact(&exact_out), &gate.params)
                    .map_err(internal)?;
                // Fock runs only where the auto cutoff stays desk-scale.
                let fock = if config.backend.runs_fock() {
                    let needed = match config.cutoff {
                        CutoffPolicy::Fixed(n) => Some(n),
                        CutoffPolicy::Auto => {
                            let n =
                                cutoff_rule(gate.sequence.max_excursion(config.input_bus.norm()));
                            (n <= MAX_AUTO_CUTOFF).then_some(n)
                        }
                    };
                    match needed {
                        Some(n) => Some((
                            run_fock_once(
                                &gate.sequence,
                                &gate.params,
                                &input,
                                config.input_bus,
                                n,
                                &exact_out,
                            )?,
                            n,
                        )),
                        None => None,
                    }
                } else {
                    None
                };
                Ok::<_, RunError>((report, fock))
            });
            let (report, fock) = result?;
            let alpha_slot = d / (2.0 * theta.sin());
            let mut cells = vec![fmt_f64(theta), fmt_f64(alpha_slot), fmt_f64(d)];
            cells.extend(metric_cells(&report));
            match &fock {
                Some((f, n)) => {
                    cells.push(fmt_f64(f.fidelity_fock));
                    cells.push(fmt_f64(f.fock_vs_exact));
                    cells.push(fmt_f64(f.leakage));
                    cells.push(n.to_string());
                }
                None => {
                    for _ in 0..4 {
                        cells.push(String::new());
                    }
                }
            }
            cells.push(ms.to_string());
            Ok(RowData {
                cells,
                fidelity_exact: report.two_qubit_fidelity,
                defect: report.disentanglement_defect,
                fock_fidelities: fock.as_ref().map(|(f, _)| f.fock_vs_exact),
            })
        })
        .collect();
    let rows = rows?;

    let mut checks = vec![
        Check::at_least(
            "min fidelity_exact",
            min_of(rows.iter().map(|r| r.fidelity_exact)),
            config.min_fidelity_exact,
        ),
        Check::at_most(
            "max defect",
            max_of(rows.iter().map(|r| r.defect)),
            config.max_defect,
        ),
    ];
    let fock_count = rows.iter().filter(|r| r.fock_fidelities.is_some()).count();
    if fock_count > 0 {
        checks.push(Check::at_least(
            "min fock_vs_exact",
            min_of(rows.iter().filter_map(|r| r.fock_fidelities)),
            config.min_fidelity_fock,
        ));
    }

    let mut aggregates = Map::new();
    aggregates.insert("fock_rows".into(), json!(fock_count));
    aggregates.insert("d".into(), json!(d));

    Ok(finish(
        config,
        columns,
        rows.into_iter().map(|r| r.cells).collect(),
        checks,
        aggregates,
        Vec::new(),
    ))
}

// ----------------------------------------------------------------- loss-scan

fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let xm = x.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in x.iter().zip(y) {
        num += (a - xm) * (b - ym);
        den += (a - xm) * (a - xm);
    }
    num / den
}

fn run_loss_scan(config: &ScenarioConfig) -> Result<RunArtifacts, RunError> {
    let columns = vec!["eta", "dsin", "exponent", "ratio", "runtime_ms"];

    // Grid order: dsin-major, eta-minor.
    let grid: Vec<(f64, f64)> = config
        .sweep_dsin
        .iter()
        .flat_map(|&dsin| config.sweep_eta.iter().map(move |&eta| (dsin, eta)))
        .collect();

    // (cells, dsin, eta, exponent) per grid point.
    type LossRow = (Vec<String>, f64, f64, f64);
    let rows: Result<Vec<LossRow>, RunError> = grid
        .par_iter()
        .map(|&(dsin, eta)| {
            let beta = 2.0 * dsin;
            let seq = build_utot(Complex64::new(beta, 0.0), Complex64::new(beta, 0.0));
            let (exponent, ms) = timed(config.timing, || dephasing_exponent(&seq, eta));
            let exponent = exponent.map_err(internal)?;
            let ratio = exponent / (eta * eta * dsin * dsin);
            let cells = vec![
                fmt_f64(eta),
                fmt_f64(dsin),
                fmt_f64(exponent),
                fmt_f64(ratio),
                ms.to_string(),
            ];
            Ok((cells, dsin, eta, exponent))
        })
        .collect();
    let rows = rows?;

    // Log-log slope per dsin, plus the pooled ratio spread.
    let mut slopes = Map::new();
    let mut worst_slope_err = 0.0f64;
    for &dsin in &config.sweep_dsin {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|(_, ds, _, _)| *ds == dsin)
            .map(|(_, _, eta, exp)| (eta.ln(), exp.ln()))
            .collect();
        let slope = fit_slope(
            &pts.iter().map(|p| p.0).collect::<Vec<_>>(),
            &pts.iter().map(|p| p.1).collect::<Vec<_>>(),
        );
        worst_slope_err = worst_slope_err.max((slope - 2.0).abs());
        slopes.insert(fmt_f64(dsin), json!(slope));
    }
    let ratios: Vec<f64> = rows
        .iter()
        .map(|(_, dsin, eta, exp)| exp / (eta * eta * dsin * dsin))
        .collect();
    let ratio_spread = max_of(ratios.iter().copied()) / min_of(ratios.iter().copied()) - 1.0;

    // Compensation check: canonical gate at loss.eta, compensated, must
    // restore the conditional phases to ±π/4.
    let b = (std::f64::consts::PI / 8.0).sqrt();
    let canonical = build_utot(Complex64::new(b, 0.0), Complex64::new(b, 0.0));
    let lossy = if config.loss_compensate {
        compensate_sequence(&canonical, config.loss_eta).map_err(internal)?
    } else {
        canonical.with_loss(config.loss_eta)
    };
    let state = HybridState::init_state(&input_coeffs(config, 0), config.input_bus)
        .map_err(internal)?;
    let out = apply_sequence_lossy(&state, &lossy).map_err(internal)?;
    let phases = out.relative_branch_phases();
    let mut comp_phase_err = 0.0f64;
    for bits in Bitstring::all(2) {
        let target = std::f64::consts::FRAC_PI_4 * bits.sigma_z(0) * bits.sigma_z(1);
        comp_phase_err = comp_phase_err.max(angle_wrap(phases[bits.index()] - target).abs());
    }

    let mut checks = vec![
        Check::at_most("max |slope - 2|", worst_slope_err, config.slope_tol),
        Check::at_most("ratio spread", ratio_spread, config.ratio_tol),
    ];
    if config.loss_compensate {
        checks.push(Check::at_most(
            "compensated phase error",
            comp_phase_err,
            config.phase_tol,
        ));
    }

    let mut aggregates = Map::new();
    aggregates.insert("slopes".into(), Value::Object(slopes));
    aggregates.insert("ratio_spread".into(), json!(ratio_spread));
    aggregates.insert(
        "compensation_check".into(),
        json!({
            "eta": config.loss_eta,
            "compensated": config.loss_compensate,
            "max_phase_error": comp_phase_err,
        }),
    );

    Ok(finish(
        config,
        columns,
        rows.into_iter().map(|(cells, ..)| cells).collect(),
        checks,
        aggregates,
        Vec::new(),
    ))
}

// -------------------------------------------------------------- fock-compare

fn run_fock_compare(config: &ScenarioConfig) -> Result<RunArtifacts, RunError> {
    let (seq, params) = build_gate(config)?;
    let cutoff = resolve_cutoff(config, &seq)?;
    let columns = vec![
        "input_index",
        "fidelity_exact",
        "fidelity_fock",
        "fock_vs_exact",
        "defect",
        "leakage",
        "cutoff",
        "runtime_ms",
    ];

    let rows: Result<Vec<(Vec<String>, FockRun, f64)>, RunError> = (0..config.input_count)
        .into_par_iter()
        .map(|index| {
            let input = input_coeffs(config, index);
            let (result, ms) = timed(config.timing, || {
                let state = HybridState::init_state(&input, config.input_bus).map_err(internal)?;
                let exact_out = apply_sequence(&state, &seq).map_err(internal)?;
                let report =
                    gate_fidelity(&GateOutcome::Exact(&exact_out), &params).map_err(internal)?;
                let fock = run_fock_once(&seq, &params, &input, config.input_bus, cutoff, &exact_out)?;
                Ok::<_, RunError>((report, fock))
            });
            let (report, fock) = result?;
            let cells = vec![
                index.to_string(),
                fmt_f64(report.two_qubit_fidelity),
                fmt_f64(fock.fidelity_fock),
                fmt_f64(fock.fock_vs_exact),
                fmt_f64(report.disentanglement_defect),
                fmt_f64(fock.leakage),
                cutoff.to_string(),
                ms.to_string(),
            ];
            Ok((cells, fock, report.two_qubit_fidelity))
        })
        .collect();
    let rows = rows?;

    let mut checks = vec![
        Check::at_least(
            "min fidelity_exact",
            min_of(rows.iter().map(|(_, _, f)| *f)),
            config.min_fidelity_exact,
        ),
        Check::at_least(
            "min fock_vs_exact",
            min_of(rows.iter().map(|(_, f, _)| f.fock_vs_exact)),
            config.min_fidelity_fock,
        ),
        Check::at_least(
            "min fidelity_fock",
            min_of(rows.iter().map(|(_, f, _)| f.fidelity_fock)),
            config.min_fidelity_fock,
        ),
    ];
    if config.strict {
        checks.push(Check::at_most(
            "max leakage (strict)",
            max_of(rows.iter().map(|(_, f, _)| f.leakage)),
            config.max_leakage,
        ));
    }

    let mut aggregates = Map::new();
    aggregates.insert("cutoff".into(), json!(cutoff));

    Ok(finish(
        config,
        columns,
        rows.into_iter().map(|(cells, ..)| cells).collect(),
        checks,
        aggregates,
        Vec::new(),
    ))
}

// ------------------------------------------------------------ solve-schedule

fn run_solve_schedule(config: &ScenarioConfig) -> Result<RunArtifacts, RunError> {
    let columns = vec![
        "pulse_index",
        "qubit",
        "sign",
        "epsilon",
        "t",
        "chi",
        "pump_phase",
        "runtime_ms",
    ];
    let (solution, ms) = timed(config.timing, || {
        solve_eight_op_schedule(config.target_phase, config.chi, config.epsilon_max)
    });
    let solution = solution.map_err(|e| RunError::Internal(e.to_string()))?;

    let mut rows = Vec::new();
    for (index, step) in solution.sequence.steps().iter().enumerate() {
        let Primitive::DrivePulse {
            epsilon,
            sign,
            t,
            chi,
            pump_phase,
            qubit,
        } = step.primitive
        else {
            return Err(RunError::Internal("non-drive primitive in schedule".into()));
        };
        rows.push(vec![
            index.to_string(),
            qubit.to_string(),
            sign.to_string(),
            fmt_f64(epsilon),
            fmt_f64(t),
            fmt_f64(chi),
            fmt_f64(pump_phase),
            ms.to_string(),
        ]);
    }

    // Verify on both backends against the target-phase gate.
    let b_eff = (config.target_phase / 2.0).abs().sqrt();
    let sign = config.target_phase.signum();
    let params = GateParams::from_betas(
        Complex64::new(b_eff, 0.0),
        Complex64::new(sign * b_eff, 0.0),
    );
    let input = input_coeffs(config, 0);
    let state = HybridState::init_state(&input, config.input_bus).map_err(internal)?;
    let exact_out = apply_sequence(&state, &solution.sequence).map_err(internal)?;
    let exact_report =
        gate_fidelity(&GateOutcome::Exact(&exact_out), &params).map_err(internal)?;
    let cutoff = resolve_cutoff(config, &solution.sequence)?;
    let fock = run_fock_once(
        &solution.sequence,
        &params,
        &input,
        config.input_bus,
        cutoff,
        &exact_out,
    )?;

    let mut worst_gap = 0.0f64;
    for bits in Bitstring::all(2) {
        let op = solution.sequence.branch_op(bits);
        worst_gap = worst_gap.max(op.disp.norm()).max(angle_wrap(op.rot).abs());
    }

    let checks = vec![
        Check::at_most("solver residual", solution.residual, 1e-10),
        Check::at_most("loop closure", worst_gap, 1e-10),
        Check::at_most(
            "conditional phase error",
            (solution.conditional_phase - config.target_phase).abs(),
            1e-10,
        ),
        Check::at_least("exact fidelity", exact_report.two_qubit_fidelity, 1.0 - 1e-10),
        Check::at_least("fock fidelity", fock.fidelity_fock, 1.0 - 1e-9),
    ];

    let discrepancy = composite_discrepancy_report(1.0, config.chi, 1e-3);
    let mut aggregates = Map::new();
    aggregates.insert("residual".into(), json!(solution.residual));
    aggregates.insert("iterations".into(), json!(solution.iterations));
    aggregates.insert("attempts".into(), json!(solution.attempts));
    aggregates.insert("conditional_phase".into(), json!(solution.conditional_phase));
    aggregates.insert("cutoff".into(), json!(cutoff));
    aggregates.insert(
        "discrepancy_report".into(),
        serde_json::to_value(discrepancy).map_err(internal)?,
    );

    let schedule_json = serde_json::to_string_pretty(&solution.sequence).map_err(internal)?;
    Ok(finish(
        config,
        columns,
        rows,
        checks,
        aggregates,
        vec![("schedule.json".to_string(), schedule_json)],
    ))
}
