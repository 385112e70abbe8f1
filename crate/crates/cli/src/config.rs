//! Scenario configuration: flat `key = value` files with dotted sections,
//! named presets, schema validation and the complex-number text format.
//!
//! The full key schema lives in `docs/config-schema.txt`; unknown keys are
//! rejected with line context, and CLI `--set key=value` overrides apply
//! one-to-one on top of the file or preset.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("key `{key}`: {message}")]
    BadValue { key: String, message: String },
    #[error("missing required key `{key}` for experiment `{experiment}`")]
    MissingKey {
        key: &'static str,
        experiment: &'static str,
    },
    #[error("unknown preset `{name}` (known: paper-strong, paper-weak, paper-loss)")]
    UnknownPreset { name: String },
    #[error("gate is under-specified: set gate.beta1/gate.beta2 or gate.theta1/gate.theta2")]
    GateUnderSpecified,
    #[error("{0}")]
    Infeasible(String),
}

/// Every legal configuration key. Validation rejects anything else.
pub const KNOWN_KEYS: &[&str] = &[
    "experiment",
    "backend",
    "cutoff",
    "seed",
    "strict",
    "timing",
    "out",
    "gate.beta1",
    "gate.beta2",
    "gate.theta1",
    "gate.theta2",
    "gate.d",
    "drive.target_phase",
    "drive.chi",
    "drive.epsilon_max",
    "loss.eta",
    "loss.compensate",
    "input.state",
    "input.coeffs",
    "input.bus",
    "input.count",
    "sweep.eta",
    "sweep.dsin",
    "sweep.theta",
    "check.min_fidelity_exact",
    "check.min_fidelity_fock",
    "check.max_defect",
    "check.max_leakage",
    "check.phase_tol",
    "check.slope_tol",
    "check.ratio_tol",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    GateCheck,
    Sweep,
    LossScan,
    FockCompare,
    SolveSchedule,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::GateCheck => "gate-check",
            Experiment::Sweep => "sweep",
            Experiment::LossScan => "loss-scan",
            Experiment::FockCompare => "fock-compare",
            Experiment::SolveSchedule => "solve-schedule",
        }
    }

    pub fn parse(text: &str) -> Option<Experiment> {
        match text {
            "gate-check" => Some(Experiment::GateCheck),
            "sweep" => Some(Experiment::Sweep),
            "loss-scan" => Some(Experiment::LossScan),
            "fock-compare" => Some(Experiment::FockCompare),
            "solve-schedule" => Some(Experiment::SolveSchedule),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backend {
    Exact,
    Fock,
    Both,
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::Exact => "exact",
            Backend::Fock => "fock",
            Backend::Both => "both",
        }
    }

    /// Exact metrics are always computed (the Fock comparison needs the
    /// exact prediction anyway); this decides whether Fock columns fill.
    pub fn runs_fock(&self) -> bool {
        matches!(self, Backend::Fock | Backend::Both)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CutoffPolicy {
    Auto,
    Fixed(usize),
}

/// How the two-qubit gate is specified.
#[derive(Clone, Copy, Debug)]
pub enum GateSpec {
    /// Direct conditional displacements `β₁`, `β₂`.
    Direct { beta1: Complex64, beta2: Complex64 },
    /// Simulated conditional displacements: rotation angles per slot with
    /// common target magnitude `d` (β₁ = β₂ = d).
    Simulated { theta1: f64, theta2: f64, d: f64 },
}

#[derive(Clone, Debug)]
pub enum InputSpec {
    Named(String),
    Coeffs([Complex64; 4]),
}

/// Fully resolved scenario.
#[derive(Clone, Debug)]
pub struct ScenarioConfig {
    pub experiment: Experiment,
    pub backend: Backend,
    pub cutoff: CutoffPolicy,
    pub seed: u64,
    pub strict: bool,
    pub timing: bool,
    pub out_dir: String,
    pub gate: GateSpec,
    pub target_phase: f64,
    pub chi: f64,
    pub epsilon_max: f64,
    pub loss_eta: f64,
    pub loss_compensate: bool,
    pub input: InputSpec,
    pub input_bus: Complex64,
    pub input_count: usize,
    pub sweep_eta: Vec<f64>,
    pub sweep_dsin: Vec<f64>,
    pub sweep_theta: Vec<f64>,
    pub min_fidelity_exact: f64,
    pub min_fidelity_fock: f64,
    pub max_defect: f64,
    pub max_leakage: f64,
    pub phase_tol: f64,
    pub slope_tol: f64,
    pub ratio_tol: f64,
    /// Echo of every resolved key, for the summary.
    pub echo: BTreeMap<String, String>,
}

/// Parse `key = value` lines: `#` starts a comment, blank lines skipped,
/// later keys override earlier ones.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String, usize)>, ConfigError> {
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let stripped = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if stripped.is_empty() {
            continue;
        }
        let Some(eq) = stripped.find('=') else {
            return Err(ConfigError::Malformed {
                line,
                text: stripped.to_string(),
            });
        };
        let key = stripped[..eq].trim().to_string();
        let value = stripped[eq + 1..].trim().to_string();
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Malformed {
                line,
                text: stripped.to_string(),
            });
        }
        pairs.push((key, value, line));
    }
    Ok(pairs)
}

/// Named presets as key-value pairs, so overrides compose uniformly.
pub fn preset(name: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let pairs: &[(&str, &str)] = match name {
        // Strong nonlinearity: θ = π/2, weak bus displacements |α| ≈ 0.31.
        "paper-strong" => &[
            ("experiment", "gate-check"),
            ("backend", "both"),
            ("gate.theta1", "1.5707963267948966"),
            ("gate.theta2", "1.5707963267948966"),
            ("gate.d", "0.6266570686577501"),
            ("input.state", "random"),
            ("input.count", "20"),
            ("input.bus", "0.5+0i"),
            ("seed", "42"),
        ],
        // Weak nonlinearity: θ = 10⁻², α ≈ 31.33, exact backend only (the
        // Fock cutoff rule would demand N in the thousands).
        "paper-weak" => &[
            ("experiment", "gate-check"),
            ("backend", "exact"),
            ("gate.theta1", "0.01"),
            ("gate.theta2", "0.01"),
            ("gate.d", "0.6266570686577501"),
            ("input.state", "random"),
            ("input.count", "20"),
            ("input.bus", "1+0i"),
            ("seed", "42"),
        ],
        // Strong regime plus the loss grid and compensation check.
        "paper-loss" => &[
            ("experiment", "loss-scan"),
            ("sweep.eta", "0.001,0.003,0.01"),
            ("sweep.dsin", "0.1,0.3,0.6"),
            ("loss.eta", "0.2"),
            ("loss.compensate", "true"),
            ("input.bus", "0.9+0i"),
            ("seed", "42"),
        ],
        _ => {
            return Err(ConfigError::UnknownPreset {
                name: name.to_string(),
            })
        }
    };
    Ok(pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect())
}

/// Format a float with shortest-roundtrip digits (bit-exact re-parse).
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// Complex as `re+imi` / `re-imi`, shortest-roundtrip parts.
pub fn fmt_complex(z: Complex64) -> String {
    let mut out = String::new();
    if z.im >= 0.0 || z.im.is_nan() {
        let _ = write!(out, "{}+{}i", z.re, z.im);
    } else {
        let _ = write!(out, "{}-{}i", z.re, -z.im);
    }
    out
}

/// Parse `re`, `re+imi`, `re-imi`, or `imi`.
pub fn parse_complex(text: &str) -> Result<Complex64, String> {
    let s = text.trim();
    if s.is_empty() {
        return Err("empty complex literal".into());
    }
    if let Some(body) = s.strip_suffix('i').or_else(|| s.strip_suffix('I')) {
        // Find the sign splitting real and imaginary parts: the last
        // '+'/'-' that is not the leading sign and not an exponent sign.
        let bytes = body.as_bytes();
        let mut split = None;
        for pos in (1..bytes.len()).rev() {
            let ch = bytes[pos];
            if (ch == b'+' || ch == b'-') && bytes[pos - 1] != b'e' && bytes[pos - 1] != b'E' {
                split = Some(pos);
                break;
            }
        }
        match split {
            Some(pos) => {
                let re: f64 = body[..pos]
                    .trim()
                    .parse()
                    .map_err(|e| format!("bad real part `{}`: {e}", &body[..pos]))?;
                let im_text = body[pos..].trim();
                let im: f64 = if im_text == "+" {
                    1.0
                } else if im_text == "-" {
                    -1.0
                } else {
                    im_text
                        .parse()
                        .map_err(|e| format!("bad imaginary part `{im_text}`: {e}"))?
                };
                Ok(Complex64::new(re, im))
            }
            None => {
                // Pure imaginary: `2i`, `-0.5i`, `i`.
                let im: f64 = if body.is_empty() || body == "+" {
                    1.0
                } else if body == "-" {
                    -1.0
                } else {
                    body.parse()
                        .map_err(|e| format!("bad imaginary literal `{body}`: {e}"))?
                };
                Ok(Complex64::new(0.0, im))
            }
        }
    } else {
        let re: f64 = s.parse().map_err(|e| format!("bad real literal `{s}`: {e}"))?;
        Ok(Complex64::new(re, 0.0))
    }
}

fn bad(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        message: message.into(),
    }
}

struct Reader {
    map: BTreeMap<String, String>,
}

impl Reader {
    fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| bad(key, format!("{e}"))),
        }
    }

    fn complex_or(&self, key: &str, default: Complex64) -> Result<Complex64, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => parse_complex(v).map_err(|e| bad(key, e)),
        }
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| bad(key, format!("{e}"))),
        }
    }

    fn u64_or(&self, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| bad(key, format!("{e}"))),
        }
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some("true") | Some("on") | Some("yes") => Ok(true),
            Some("false") | Some("off") | Some("no") => Ok(false),
            Some(v) => Err(bad(key, format!("expected true/false, got `{v}`"))),
        }
    }

    fn f64_list(&self, key: &str) -> Result<Vec<f64>, ConfigError> {
        match self.get(key) {
            None => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(|part| part.trim().parse().map_err(|e| bad(key, format!("{e}"))))
                .collect(),
        }
    }
}

impl ScenarioConfig {
    /// Validate and resolve a pair list (file/preset order, later wins).
    /// `experiment_override` is the CLI subcommand, which takes precedence
    /// over any `experiment` key.
    pub fn resolve(
        pairs: &[(String, String, usize)],
        experiment_override: Option<Experiment>,
    ) -> Result<ScenarioConfig, ConfigError> {
        for (key, _, line) in pairs {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey {
                    line: *line,
                    key: key.clone(),
                });
            }
        }
        let mut map = BTreeMap::new();
        for (key, value, _) in pairs {
            map.insert(key.clone(), value.clone());
        }
        let reader = Reader { map };

        let experiment = match experiment_override {
            Some(e) => e,
            None => {
                let name = reader.get("experiment").ok_or(ConfigError::MissingKey {
                    key: "experiment",
                    experiment: "(unset)",
                })?;
                Experiment::parse(name)
                    .ok_or_else(|| bad("experiment", format!("unknown experiment `{name}`")))?
            }
        };

        let backend = match reader.get("backend").unwrap_or("exact") {
            "exact" => Backend::Exact,
            "fock" => Backend::Fock,
            "both" => Backend::Both,
            other => return Err(bad("backend", format!("unknown backend `{other}`"))),
        };

        let cutoff = match reader.get("cutoff").unwrap_or("auto") {
            "auto" => CutoffPolicy::Auto,
            v => CutoffPolicy::Fixed(
                v.parse()
                    .map_err(|e| bad("cutoff", format!("expected `auto` or integer: {e}")))?,
            ),
        };

        let d_default = (std::f64::consts::PI / 8.0).sqrt();
        let d = reader.f64_or("gate.d", d_default)?;
        let gate = if reader.get("gate.theta1").is_some() || reader.get("gate.theta2").is_some() {
            let theta1 = reader.f64_or("gate.theta1", std::f64::consts::FRAC_PI_2)?;
            let theta2 = reader.f64_or("gate.theta2", theta1)?;
            if theta1.sin() == 0.0 || theta2.sin() == 0.0 {
                return Err(ConfigError::Infeasible(format!(
                    "sin(theta) = 0 cannot realize d = {d}"
                )));
            }
            GateSpec::Simulated { theta1, theta2, d }
        } else if reader.get("gate.beta1").is_some() || reader.get("gate.beta2").is_some() {
            let beta1 = reader.complex_or("gate.beta1", Complex64::new(d_default, 0.0))?;
            let beta2 = reader.complex_or("gate.beta2", beta1)?;
            GateSpec::Direct { beta1, beta2 }
        } else if matches!(
            experiment,
            Experiment::LossScan | Experiment::SolveSchedule | Experiment::Sweep
        ) {
            // These experiments derive the gate from `gate.d` (plus, for
            // sweep, the θ grid).
            GateSpec::Direct {
                beta1: Complex64::new(d, 0.0),
                beta2: Complex64::new(d, 0.0),
            }
        } else {
            return Err(ConfigError::GateUnderSpecified);
        };

        let input = match (reader.get("input.coeffs"), reader.get("input.state")) {
            (Some(list), _) => {
                let parts: Vec<&str> = list.split(',').map(|p| p.trim()).collect();
                if parts.len() != 4 {
                    return Err(bad(
                        "input.coeffs",
                        format!("expected 4 comma-separated complex values, got {}", parts.len()),
                    ));
                }
                let mut coeffs = [Complex64::new(0.0, 0.0); 4];
                for (slot, part) in coeffs.iter_mut().zip(&parts) {
                    *slot = parse_complex(part).map_err(|e| bad("input.coeffs", e))?;
                }
                InputSpec::Coeffs(coeffs)
            }
            (None, Some(name)) => {
                const NAMED: &[&str] = &[
                    "basis00", "basis01", "basis10", "basis11", "uniform", "random",
                ];
                if !NAMED.contains(&name) {
                    return Err(bad(
                        "input.state",
                        format!("unknown input preset `{name}` (known: {})", NAMED.join(", ")),
                    ));
                }
                InputSpec::Named(name.to_string())
            }
            (None, None) => InputSpec::Named("uniform".to_string()),
        };

        let input_count = reader.usize_or("input.count", 1)?;
        if input_count == 0 {
            return Err(bad("input.count", "must be at least 1"));
        }

        let loss_eta = reader.f64_or("loss.eta", 0.0)?;
        if !(0.0..1.0).contains(&loss_eta) {
            return Err(bad("loss.eta", format!("must be in [0, 1), got {loss_eta}")));
        }

        let sweep_eta = reader.f64_list("sweep.eta")?;
        let sweep_dsin = reader.f64_list("sweep.dsin")?;
        let sweep_theta = reader.f64_list("sweep.theta")?;
        match experiment {
            Experiment::LossScan => {
                if sweep_eta.is_empty() {
                    return Err(ConfigError::MissingKey {
                        key: "sweep.eta",
                        experiment: "loss-scan",
                    });
                }
                if sweep_dsin.is_empty() {
                    return Err(ConfigError::MissingKey {
                        key: "sweep.dsin",
                        experiment: "loss-scan",
                    });
                }
            }
            Experiment::Sweep if sweep_theta.is_empty() => {
                return Err(ConfigError::MissingKey {
                    key: "sweep.theta",
                    experiment: "sweep",
                });
            }
            _ => {}
        }

        let config = ScenarioConfig {
            experiment,
            backend,
            cutoff,
            seed: reader.u64_or("seed", 0)?,
            strict: reader.bool_or("strict", false)?,
            timing: reader.bool_or("timing", false)?,
            out_dir: reader.get("out").unwrap_or("out").to_string(),
            gate,
            target_phase: reader.f64_or("drive.target_phase", std::f64::consts::FRAC_PI_4)?,
            chi: reader.f64_or("drive.chi", 1.0)?,
            epsilon_max: reader.f64_or("drive.epsilon_max", 10.0)?,
            loss_eta,
            loss_compensate: reader.bool_or("loss.compensate", true)?,
            input,
            input_bus: reader.complex_or("input.bus", Complex64::new(1.0, 0.0))?,
            input_count,
            sweep_eta,
            sweep_dsin,
            sweep_theta,
            min_fidelity_exact: reader.f64_or("check.min_fidelity_exact", 1.0 - 1e-12)?,
            min_fidelity_fock: reader.f64_or("check.min_fidelity_fock", 1.0 - 1e-8)?,
            max_defect: reader.f64_or("check.max_defect", 1e-12)?,
            max_leakage: reader.f64_or("check.max_leakage", 1e-9)?,
            phase_tol: reader.f64_or("check.phase_tol", 1e-10)?,
            slope_tol: reader.f64_or("check.slope_tol", 0.01)?,
            ratio_tol: reader.f64_or("check.ratio_tol", 0.01)?,
            echo: {
                let mut echo = reader.map.clone();
                echo.insert("experiment".into(), experiment.name().into());
                echo
            },
        };
        Ok(config)
    }

    /// Slot amplitude magnitude |α| = d / (2 sin θ₁) for simulated gates.
    pub fn slot_alpha(&self) -> Option<f64> {
        match self.gate {
            GateSpec::Simulated { theta1, d, .. } => Some(d / (2.0 * theta1.sin())),
            GateSpec::Direct { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complex_round_trip_on_tricky_values() {
        for text in [
            "1",
            "-2.5",
            "1+2i",
            "0.3+0.5i",
            "-1.5e-3-2.25e-7i",
            "2i",
            "-i",
            "1e300+1e-300i",
        ] {
            let z = parse_complex(text).unwrap();
            let again = parse_complex(&fmt_complex(z)).unwrap();
            assert_eq!(z, again, "round trip failed for `{text}`");
        }
    }

    #[test]
    fn complex_rejects_garbage() {
        assert!(parse_complex("").is_err());
        assert!(parse_complex("1+2j").is_err());
        assert!(parse_complex("x+1i").is_err());
    }

    #[test]
    fn parser_handles_comments_and_blank_lines() {
        let text = "# header\nexperiment = gate-check\n\nseed = 7   # trailing\n";
        let pairs = parse_config_text(text).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[1], ("seed".to_string(), "7".to_string(), 4));
    }

    #[test]
    fn unknown_keys_are_rejected_with_line() {
        let pairs = parse_config_text("experiment = gate-check\nbogus.key = 1\n").unwrap();
        match ScenarioConfig::resolve(&pairs, None) {
            Err(ConfigError::UnknownKey { line: 2, key }) => assert_eq!(key, "bogus.key"),
            other => panic!("expected UnknownKey, got {other:?}"),
        }
    }

    #[test]
    fn presets_resolve() {
        for name in ["paper-strong", "paper-weak", "paper-loss"] {
            let pairs: Vec<(String, String, usize)> = preset(name)
                .unwrap()
                .into_iter()
                .map(|(k, v)| (k, v, 0))
                .collect();
            let config = ScenarioConfig::resolve(&pairs, None).unwrap();
            match name {
                "paper-strong" => {
                    assert_eq!(config.experiment, Experiment::GateCheck);
                    assert_eq!(config.backend, Backend::Both);
                    let d = match config.gate {
                        GateSpec::Simulated { d, .. } => d,
                        _ => panic!("expected simulated gate"),
                    };
                    assert!((d - 0.6266570686577501).abs() < 1e-15);
                    // Slot magnitude |α| = d / (2 sin θ) = d/2 ≈ 0.3133.
                    let alpha = config.slot_alpha().unwrap();
                    assert!((alpha - 0.6266570686577501 / 2.0).abs() < 1e-12);
                }
                "paper-weak" => {
                    assert_eq!(config.backend, Backend::Exact);
                    let alpha = config.slot_alpha().unwrap();
                    assert!((alpha - 31.33).abs() < 0.01, "alpha {alpha}");
                }
                "paper-loss" => {
                    assert_eq!(config.experiment, Experiment::LossScan);
                    assert_eq!(config.sweep_eta.len(), 3);
                    assert_eq!(config.sweep_dsin.len(), 3);
                }
                _ => unreachable!(),
            }
        }
        assert!(matches!(
            preset("nope"),
            Err(ConfigError::UnknownPreset { .. })
        ));
    }

    #[test]
    fn subcommand_overrides_experiment_key() {
        let pairs = parse_config_text("experiment = sweep\nsweep.theta = 0.5\ngate.d = 0.6\n").unwrap();
        let config = ScenarioConfig::resolve(&pairs, Some(Experiment::Sweep)).unwrap();
        assert_eq!(config.experiment, Experiment::Sweep);
    }
}
