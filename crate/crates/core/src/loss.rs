//! Beam-splitter photon loss on the qubus, amplitude compensation, and the
//! quantitative gate metrics.
//!
//! Loss attaches to *effective* conditional displacements: a lossy
//! `D(βσz)` becomes `D₁(√(1−η²)βσz)` on the bus and `D₂(ηβσz)` on a fresh
//! environment mode, one independent mode per lossy primitive. Environment
//! branches are appended and never pruned; their overlap products are
//! evaluated lazily when a reduced density matrix is requested.

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::fock::{reduced_qubit_density as fock_reduced_density, FockError, FockVector};
use crate::gate::{apply_sequence, GateError, GateParams, GateSequence, Primitive, TwoQubitTarget};
use crate::hybrid::{Bitstring, HybridError, HybridState};
use crate::phase_space::{angle_wrap, coherent_overlap, CoherentBranch};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("reflectivity must satisfy 0 <= eta < 1, got {eta}")]
    InvalidEta { eta: f64 },
    #[error("loss annotations are only supported on conditional displacements")]
    UnsupportedAnnotation,
    #[error("final state carries no input record for the fidelity target")]
    MissingInputRecord,
    #[error("metrics require a two-qubit state, found dimension {dim}")]
    NotTwoQubit { dim: usize },
    #[error(transparent)]
    Hybrid(#[from] HybridError),
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error(transparent)]
    Fock(#[from] FockError),
}

fn check_eta(eta: f64) -> Result<(), LossError> {
    if (0.0..1.0).contains(&eta) {
        Ok(())
    } else {
        Err(LossError::InvalidEta { eta })
    }
}

/// Loss configuration for a scenario: one reflectivity per annotated
/// primitive, amplitudes split as `√(1−η²)` (bus) and `η` (environment).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LossModel {
    pub eta: f64,
    pub compensation: bool,
}

impl LossModel {
    pub fn new(eta: f64, compensation: bool) -> Result<Self, LossError> {
        check_eta(eta)?;
        Ok(LossModel { eta, compensation })
    }

    pub fn transmission(&self) -> f64 {
        (1.0 - self.eta * self.eta).sqrt()
    }
}

/// Pre-scaled amplitude `β′ = β/√(1−η²)` so the lossy channel delivers
/// exactly `β` on the bus.
pub fn compensate_amplitude(beta_target: Complex64, eta: f64) -> Result<Complex64, LossError> {
    check_eta(eta)?;
    Ok(beta_target / (1.0 - eta * eta).sqrt())
}

/// One lossy conditional displacement: bus branch displaced by
/// `√(1−η²)βs` with full phase bookkeeping, plus a fresh environment
/// branch `|ηβs⟩` appended to every term.
pub fn apply_lossy_cond_disp(
    state: &HybridState,
    beta: Complex64,
    qubit: usize,
    eta: f64,
) -> Result<HybridState, LossError> {
    check_eta(eta)?;
    if qubit >= state.n_qubits() {
        return Err(HybridError::QubitIndex {
            index: qubit,
            n_qubits: state.n_qubits(),
        }
        .into());
    }
    let tau = (1.0 - eta * eta).sqrt();
    let displaced = state.apply_conditional(&crate::hybrid::ConditionalBusOp::displacement(
        tau * beta,
        qubit,
    ))?;
    // The environment mode starts in vacuum, so D(ηβs)|0⟩ = |ηβs⟩ with no
    // displacement phase.
    Ok(displaced.append_env(|bits| CoherentBranch::new(eta * beta * bits.sigma_z(qubit))))
}

/// Execute a sequence honoring loss annotations. Annotations are legal on
/// conditional displacements only; all other primitives run lossless.
pub fn apply_sequence_lossy(
    state: &HybridState,
    seq: &GateSequence,
) -> Result<HybridState, LossError> {
    let mut out = state.clone();
    for step in seq.steps() {
        out = match (step.loss, &step.primitive) {
            (Some(eta), Primitive::CondDisp { beta, qubit }) => {
                apply_lossy_cond_disp(&out, *beta, *qubit, eta)?
            }
            (Some(_), _) => return Err(LossError::UnsupportedAnnotation),
            (None, _) => out.apply_conditional(&step.primitive.conditional_op())?,
        };
    }
    Ok(out)
}

/// Copy of a sequence with every conditional displacement pre-scaled by
/// `1/√(1−η²)` and annotated with loss η, so the bus receives the original
/// amplitudes exactly.
pub fn compensate_sequence(seq: &GateSequence, eta: f64) -> Result<GateSequence, LossError> {
    check_eta(eta)?;
    let tau = (1.0 - eta * eta).sqrt();
    let mut out = GateSequence::new();
    for step in seq.steps() {
        match step.primitive {
            Primitive::CondDisp { beta, qubit } => out.push_lossy(
                Primitive::CondDisp {
                    beta: beta / tau,
                    qubit,
                },
                eta,
            ),
            p => out.push(p),
        }
    }
    Ok(out)
}

/// Dephasing exponent of a schedule at reflectivity η: every conditional
/// displacement runs lossy at η, and the result is
/// `−ln |Π_k ⟨env_last,k | env_first,k⟩|` between the two
/// maximally-separated bitstrings (all-zeros vs all-ones).
pub fn dephasing_exponent(seq: &GateSequence, eta: f64) -> Result<f64, LossError> {
    check_eta(eta)?;
    if eta == 0.0 {
        return Ok(0.0);
    }
    let n_qubits = seq.n_qubits_required().max(1);
    let state = match n_qubits {
        1 => {
            let r = 1.0 / 2.0f64.sqrt();
            HybridState::init_single(&[Complex64::new(r, 0.0); 2], Complex64::new(0.0, 0.0))?
        }
        _ => HybridState::init_state(&[Complex64::new(0.5, 0.0); 4], Complex64::new(0.0, 0.0))?,
    };
    let lossy = apply_sequence_lossy(&state, &seq.with_loss(eta))?;
    let first = Bitstring::from_index(n_qubits, 0);
    let last = Bitstring::from_index(n_qubits, (1 << n_qubits) - 1);
    let coherence: Complex64 = lossy
        .env_branches(first)
        .iter()
        .zip(lossy.env_branches(last))
        .map(|(a, b)| coherent_overlap(b, a))
        .product();
    Ok(-coherence.norm().ln())
}

/// Magnitudes of the upper off-diagonal density-matrix entries, labeled by
/// bitstring pairs.
#[derive(Clone, Debug, Serialize)]
pub struct Coherence {
    pub row: String,
    pub col: String,
    pub magnitude: f64,
}

/// Quantitative summary of a completed gate run.
#[derive(Clone, Debug, Serialize)]
pub struct MetricsReport {
    /// Per-bitstring phase relative to the input coefficients, radians.
    pub conditional_phases: [f64; 4],
    /// Largest bus amplitude separation between occupied branches.
    pub disentanglement_defect: f64,
    /// `⟨target|ρ|target⟩` against the closed-form gate target.
    pub two_qubit_fidelity: f64,
    /// `Tr ρ²` of the reduced two-qubit state.
    pub purity: f64,
    pub coherence_magnitudes: Vec<Coherence>,
    /// Σ|env amplitude|² over modes, maximized over occupied bitstrings.
    pub env_photon_budget: f64,
}

/// Final state handed to [`gate_fidelity`]: exact backend or Fock oracle.
pub enum GateOutcome<'a> {
    Exact(&'a HybridState),
    Fock(&'a FockVector),
}

fn coherences_of(rho: &crate::density::QubitDensityMatrix) -> Vec<Coherence> {
    let mut out = Vec::new();
    for i in 0..4 {
        for j in (i + 1)..4 {
            out.push(Coherence {
                row: Bitstring::from_index(2, i).label(),
                col: Bitstring::from_index(2, j).label(),
                magnitude: rho.entry(i, j).norm(),
            });
        }
    }
    out
}

/// Gate metrics against the closed-form target for `params`
/// (target phase `2 Re(β̄₁β₂)` applied to the recorded input coefficients).
pub fn gate_fidelity(outcome: &GateOutcome, params: &GateParams) -> Result<MetricsReport, LossError> {
    let target = TwoQubitTarget::from_phase(params.target_phase());
    match outcome {
        GateOutcome::Exact(state) => {
            if state.n_qubits() != 2 {
                return Err(LossError::NotTwoQubit { dim: state.dim() });
            }
            let target_state = target.apply_to(state.input_coeffs());
            let rho = state.reduced_qubit_density();
            let phases = state.relative_branch_phases();
            Ok(MetricsReport {
                conditional_phases: [phases[0], phases[1], phases[2], phases[3]],
                disentanglement_defect: state.bus_disentanglement_defect(),
                two_qubit_fidelity: rho.fidelity_with_pure(&target_state),
                purity: rho.purity(),
                coherence_magnitudes: coherences_of(&rho),
                env_photon_budget: state.env_photon_budget(),
            })
        }
        GateOutcome::Fock(vector) => {
            if vector.qubit_dim() != 4 {
                return Err(LossError::NotTwoQubit {
                    dim: vector.qubit_dim(),
                });
            }
            let record = vector.record().ok_or(LossError::MissingInputRecord)?;
            let target_state = target.apply_to(&record.qubit_coeffs);
            let rho = fock_reduced_density(vector);
            // Per-bitstring phase: overlap of each block with the recorded
            // initial bus vector, relative to the input coefficient.
            let mut phases = [0.0f64; 4];
            for (u, phase) in phases.iter_mut().enumerate() {
                let c_in = record.qubit_coeffs[u];
                if c_in.norm() < 1e-12 {
                    continue;
                }
                let block = vector.block(u);
                let mut overlap = Complex64::new(0.0, 0.0);
                for (k, amp) in block.iter().enumerate() {
                    overlap += record.bus[k].conj() * amp;
                }
                if overlap.norm() > 1e-12 {
                    *phase = angle_wrap((overlap / c_in).arg());
                }
            }
            // Defect estimated from per-block mean amplitudes.
            let amps: Vec<Complex64> = (0..4)
                .filter_map(|u| vector.block_mean_amplitude(u))
                .collect();
            let mut defect = 0.0f64;
            for (i, a) in amps.iter().enumerate() {
                for b in &amps[i + 1..] {
                    defect = defect.max((a - b).norm());
                }
            }
            Ok(MetricsReport {
                conditional_phases: phases,
                disentanglement_defect: defect,
                two_qubit_fidelity: rho.fidelity_with_pure(&target_state),
                purity: rho.purity(),
                coherence_magnitudes: coherences_of(&rho),
                env_photon_budget: 0.0,
            })
        }
    }
}

/// Run the canonical four-displacement gate with loss η on every
/// conditional displacement, optionally compensated, from a given input.
pub fn run_lossy_gate(
    input: &[Complex64; 4],
    bus_amp: Complex64,
    beta1: Complex64,
    beta2: Complex64,
    model: &LossModel,
) -> Result<HybridState, LossError> {
    let lossless = crate::gate::build_utot(beta1, beta2);
    let seq = if model.compensation {
        compensate_sequence(&lossless, model.eta)?
    } else {
        lossless.with_loss(model.eta)
    };
    let state = HybridState::init_state(input, bus_amp)?;
    if model.eta == 0.0 {
        return Ok(apply_sequence(&state, &lossless)?);
    }
    apply_sequence_lossy(&state, &seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gate::build_utot;
    use std::f64::consts::{FRAC_PI_4, PI};

    fn c0(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn compensation_arithmetic() {
        assert_eq!(
            compensate_amplitude(c0(1.0), 0.0).unwrap(),
            c0(1.0)
        );
        // η = 0.6: β′ = β/0.8 = 1.25β.
        let scaled = compensate_amplitude(c0(2.0), 0.6).unwrap();
        assert!((scaled - c0(2.5)).norm() < 1e-12);
        assert!(matches!(
            compensate_amplitude(c0(1.0), 1.0),
            Err(LossError::InvalidEta { .. })
        ));
    }

    #[test]
    fn zero_eta_matches_lossless_displacement() {
        let r = 1.0 / 2.0f64.sqrt();
        let state = HybridState::init_single(&[c0(r), c0(r)], c0(0.3)).unwrap();
        let lossy = apply_lossy_cond_disp(&state, c0(0.4), 0, 0.0).unwrap();
        let lossless = state
            .apply_conditional(&crate::hybrid::ConditionalBusOp::displacement(c0(0.4), 0))
            .unwrap();
        for bits in Bitstring::all(1) {
            assert_eq!(lossy.bus_branch(bits).amp, lossless.bus_branch(bits).amp);
            assert_eq!(lossy.env_branches(bits)[0].amp, c0(0.0));
        }
    }

    #[test]
    fn zero_beta_has_no_effect() {
        let r = 1.0 / 2.0f64.sqrt();
        let state = HybridState::init_single(&[c0(r), c0(r)], c0(0.0)).unwrap();
        let lossy = apply_lossy_cond_disp(&state, c0(0.0), 0, 0.2).unwrap();
        for bits in Bitstring::all(1) {
            assert_eq!(lossy.bus_branch(bits).amp, c0(0.0));
            assert_eq!(lossy.env_branches(bits)[0].amp, c0(0.0));
        }
    }

    #[test]
    fn lossy_displacement_coherence_factor() {
        // η = 0.1, β = √(π/8), |+⟩ qubit: coherence between the σz = ±1
        // terms picks up the env factor exp(−2η²|β|²) ≈ 0.992177 on top of
        // the bus factor exp(−2(1−η²)|β|²).
        let eta = 0.1f64;
        let beta = (PI / 8.0).sqrt();
        let r = 1.0 / 2.0f64.sqrt();
        let state = HybridState::init_single(&[c0(r), c0(r)], c0(0.0)).unwrap();
        let lossy = apply_lossy_cond_disp(&state, c0(beta), 0, eta).unwrap();

        let env_plus = lossy.env_branches(Bitstring::new(&[0]))[0];
        let env_minus = lossy.env_branches(Bitstring::new(&[1]))[0];
        let env_factor = coherent_overlap(&env_minus, &env_plus).norm();
        let expected = (-2.0 * eta * eta * beta * beta).exp();
        assert!((env_factor - expected).abs() < 1e-12, "env factor {env_factor}");
        assert!((expected - 0.992177).abs() < 5e-7);

        // Full off-diagonal magnitude includes the bus separation too.
        let rho = lossy.reduced_qubit_density();
        let tau_sq = 1.0 - eta * eta;
        let full = 0.5 * (-2.0 * tau_sq * beta * beta).exp() * expected;
        assert!((rho.entry(0, 1).norm() - full).abs() < 1e-12);
    }

    #[test]
    fn env_bookkeeping_counts_modes_and_photons() {
        let b = (PI / 8.0).sqrt();
        let eta = 0.25;
        let seq = build_utot(c0(b), c0(b)).with_loss(eta);
        let state = HybridState::init_state(&[c0(0.5); 4], c0(0.0)).unwrap();
        let out = apply_sequence_lossy(&state, &seq).unwrap();
        assert_eq!(out.n_env_modes(), 4);
        // Per bitstring: Σ|env|² = η² Σ|β_k|² = η²·4β².
        let expected = eta * eta * 4.0 * b * b;
        assert!((out.env_photon_budget() - expected).abs() < 1e-12);
    }

    #[test]
    fn annotations_on_rotations_are_rejected() {
        let mut seq = GateSequence::new();
        seq.push_lossy(Primitive::CondRot { theta: 0.3, qubit: 0 }, 0.1);
        let state = HybridState::init_single(&[c0(1.0), c0(0.0)], c0(0.0)).unwrap();
        assert!(matches!(
            apply_sequence_lossy(&state, &seq),
            Err(LossError::UnsupportedAnnotation)
        ));
    }

    #[test]
    fn dephasing_exponent_trivial_and_single_displacement() {
        let seq = GateSequence::from_primitives([Primitive::CondDisp {
            beta: c0(0.6),
            qubit: 0,
        }]);
        assert_eq!(dephasing_exponent(&seq, 0.0).unwrap(), 0.0);
        // Single conditional displacement of amplitude β = 2α sin θ:
        // exponent = 2η²|β|².
        let eta = 0.05;
        let exponent = dephasing_exponent(&seq, eta).unwrap();
        assert!((exponent - 2.0 * eta * eta * 0.36).abs() < 1e-12);
    }

    #[test]
    fn compensation_identity_is_exact_arithmetic() {
        // τ·(β/τ) returns β to better than 1e−14 across the η grid.
        let beta = Complex64::new(0.6266570686577501, -0.125);
        for k in 0..=30 {
            let eta = k as f64 * 0.01;
            let tau = (1.0 - eta * eta).sqrt();
            let delivered = compensate_amplitude(beta, eta).unwrap() * tau;
            assert!((delivered - beta).norm() < 1e-14, "eta {eta}");
        }
    }

    #[test]
    fn dephasing_exponent_is_monotone_in_displacement() {
        let eta = 5e-3;
        let mut last = 0.0;
        for &dsin in &[0.1, 0.3, 0.6, 0.9] {
            let beta = 2.0 * dsin;
            let seq = build_utot(c0(beta), c0(beta));
            let exponent = dephasing_exponent(&seq, eta).unwrap();
            assert!(exponent > last, "exponent not increasing at dsin {dsin}");
            last = exponent;
        }
    }

    #[test]
    fn dephasing_exponent_scales_quadratically_in_eta() {
        let b = (PI / 8.0).sqrt();
        let seq = build_utot(c0(b), c0(b));
        let e1 = dephasing_exponent(&seq, 1e-3).unwrap();
        let e2 = dephasing_exponent(&seq, 3e-3).unwrap();
        let e3 = dephasing_exponent(&seq, 1e-2).unwrap();
        let slope12 = (e2 / e1).ln() / (3.0f64).ln();
        let slope23 = (e3 / e2).ln() / (10.0f64 / 3.0).ln();
        assert!((slope12 - 2.0).abs() < 1e-9, "slope {slope12}");
        assert!((slope23 - 2.0).abs() < 1e-9, "slope {slope23}");
        // Monotone in η.
        assert!(e1 < e2 && e2 < e3);
    }

    #[test]
    fn compensated_gate_restores_phases_and_closure() {
        let b = (PI / 8.0).sqrt();
        let model = LossModel::new(0.2, true).unwrap();
        let input = [c0(0.5); 4];
        let out = run_lossy_gate(&input, c0(0.7), c0(b), c0(b), &model).unwrap();
        assert!(out.bus_disentanglement_defect() < 1e-12);
        let phases = out.relative_branch_phases();
        for bits in Bitstring::all(2) {
            let s1s2 = bits.sigma_z(0) * bits.sigma_z(1);
            assert!(
                (phases[bits.index()] - FRAC_PI_4 * s1s2).abs() < 1e-10,
                "{}: {}",
                bits.label(),
                phases[bits.index()]
            );
        }
        // Residual infidelity is attributable solely to env dephasing:
        // purity < 1 but still high at η = 0.2.
        let params = GateParams::from_betas(c0(b), c0(b));
        let report = gate_fidelity(&GateOutcome::Exact(&out), &params).unwrap();
        assert!(report.two_qubit_fidelity < 1.0);
        assert!(report.two_qubit_fidelity > 0.9);
        assert!(report.env_photon_budget > 0.0);
    }

    #[test]
    fn uncompensated_gate_leaves_open_loops() {
        let b = (PI / 8.0).sqrt();
        let model = LossModel::new(0.1, false).unwrap();
        let input = [c0(0.5); 4];
        let out = run_lossy_gate(&input, c0(0.0), c0(b), c0(b), &model).unwrap();
        // Loops stay closed in amplitude for the symmetric gate from
        // vacuum, but phases shrink by 1 − η²; fidelity must drop.
        let params = GateParams::from_betas(c0(b), c0(b));
        let report = gate_fidelity(&GateOutcome::Exact(&out), &params).unwrap();
        assert!(report.two_qubit_fidelity < 1.0 - 1e-4);
    }

    #[test]
    fn diagonal_input_is_loss_immune_in_fidelity() {
        let b = (PI / 8.0).sqrt();
        let model = LossModel::new(0.3, true).unwrap();
        let input = [c0(1.0), c0(0.0), c0(0.0), c0(0.0)];
        let out = run_lossy_gate(&input, c0(0.5), c0(b), c0(b), &model).unwrap();
        let params = GateParams::from_betas(c0(b), c0(b));
        let report = gate_fidelity(&GateOutcome::Exact(&out), &params).unwrap();
        assert!((report.two_qubit_fidelity - 1.0).abs() < 1e-12);
        assert!((report.purity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ideal_gate_metrics_are_perfect() {
        let b = (PI / 8.0).sqrt();
        let seq = build_utot(c0(b), c0(b));
        let input = [c0(0.45), c0(0.55), c0(0.5), c0(0.4950757517794625)];
        let state = HybridState::init_state(&input, c0(1.0)).unwrap();
        let out = apply_sequence(&state, &seq).unwrap();
        let params = GateParams::from_betas(c0(b), c0(b));
        let report = gate_fidelity(&GateOutcome::Exact(&out), &params).unwrap();
        assert!((report.two_qubit_fidelity - 1.0).abs() < 1e-12);
        assert!((report.purity - 1.0).abs() < 1e-12);
        assert!(report.disentanglement_defect < 1e-12);
        assert_eq!(report.env_photon_budget, 0.0);
    }

    #[test]
    fn missing_record_is_reported_for_raw_fock_vectors() {
        let v = FockVector::from_hybrid(
            &HybridState::init_state(&[c0(0.5); 4], c0(0.0)).unwrap(),
            24,
        )
        .unwrap();
        let params = GateParams::from_betas(c0(0.1), c0(0.1));
        assert!(matches!(
            gate_fidelity(&GateOutcome::Fock(&v), &params),
            Err(LossError::MissingInputRecord)
        ));
    }
}
