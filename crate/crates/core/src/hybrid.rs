//! Exact joint state of one or two qubits, the bus mode and any accumulated
//! environment modes, evolved under σz-conditioned bus operations.
//!
//! The state is a sum of terms, exactly one per computational bitstring:
//! a complex coefficient, a phased coherent bus branch, and one phased
//! coherent environment branch per completed lossy primitive. Conditional
//! operations never split terms because they are diagonal in the
//! computational basis; that is also why only diagonal local unitaries are
//! admitted here (the Fock backend handles general ones for cross-checks).
//!
//! Bus branch phases stay on the branch, not in the coefficient, until a
//! reduced density matrix is requested; the phases are the gate.

use num_complex::Complex64;
use thiserror::Error;

use crate::density::QubitDensityMatrix;
use crate::phase_space::{coherent_overlap, BusOp, CoherentBranch};

/// Coefficient magnitude below which a term is treated as absent.
pub const COEFF_EPS: f64 = 1e-15;

#[derive(Debug, Error)]
pub enum HybridError {
    #[error("state coefficients have (near-)zero norm")]
    ZeroNorm,
    #[error("qubit index {index} out of range for {n_qubits}-qubit state")]
    QubitIndex { index: usize, n_qubits: usize },
    #[error("local operation is not unitary: entry modulus deviates by {defect:.3e}")]
    NonUnitary { defect: f64 },
    #[error("operation requires a two-qubit state, found {n_qubits} qubit(s)")]
    NotTwoQubit { n_qubits: usize },
}

/// Computational basis label for one or two qubits.
///
/// σz eigenvalues follow `σz = |0⟩⟨0| − |1⟩⟨1|`: bit 0 ↦ +1, bit 1 ↦ −1.
/// The first qubit (index 0) is the most significant bit, so two-qubit
/// indices run `(00, 01, 10, 11)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Bitstring {
    n_qubits: usize,
    index: usize,
}

impl Bitstring {
    pub fn new(bits: &[u8]) -> Self {
        assert!(
            bits.len() == 1 || bits.len() == 2,
            "supported register sizes are 1 and 2 qubits"
        );
        let mut index = 0;
        for &b in bits {
            assert!(b <= 1, "bits must be 0 or 1");
            index = (index << 1) | b as usize;
        }
        Bitstring {
            n_qubits: bits.len(),
            index,
        }
    }

    pub fn from_index(n_qubits: usize, index: usize) -> Self {
        assert!(n_qubits == 1 || n_qubits == 2);
        assert!(index < (1 << n_qubits));
        Bitstring { n_qubits, index }
    }

    pub fn all(n_qubits: usize) -> impl Iterator<Item = Bitstring> {
        (0..(1usize << n_qubits)).map(move |index| Bitstring { n_qubits, index })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn bit(&self, qubit: usize) -> u8 {
        assert!(qubit < self.n_qubits);
        ((self.index >> (self.n_qubits - 1 - qubit)) & 1) as u8
    }

    /// σz eigenvalue of `qubit`: +1 for |0⟩, −1 for |1⟩.
    pub fn sigma_z(&self, qubit: usize) -> f64 {
        if self.bit(qubit) == 0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn label(&self) -> String {
        (0..self.n_qubits)
            .map(|q| if self.bit(q) == 0 { '0' } else { '1' })
            .collect()
    }
}

/// A bus operation selected by one qubit's σz eigenvalue.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConditionalBusOp {
    pub target: usize,
    /// Applied on the σz = +1 branch.
    pub plus: BusOp,
    /// Applied on the σz = −1 branch.
    pub minus: BusOp,
}

impl ConditionalBusOp {
    /// Conditional displacement `D(β σz)`.
    pub fn displacement(beta: Complex64, target: usize) -> Self {
        ConditionalBusOp {
            target,
            plus: BusOp::displacement(beta),
            minus: BusOp::displacement(-beta),
        }
    }

    /// Conditional rotation `e^{−iθ σz a†a}`.
    pub fn rotation(theta: f64, target: usize) -> Self {
        ConditionalBusOp {
            target,
            plus: BusOp::rotation(theta),
            minus: BusOp::rotation(-theta),
        }
    }

    /// The same operation on both branches.
    pub fn unconditional(op: BusOp, target: usize) -> Self {
        ConditionalBusOp {
            target,
            plus: op,
            minus: op,
        }
    }

    pub fn identity(target: usize) -> Self {
        Self::unconditional(BusOp::IDENTITY, target)
    }

    pub fn for_bit(&self, bit: u8) -> &BusOp {
        if bit == 0 {
            &self.plus
        } else {
            &self.minus
        }
    }

    /// Branch op applied to `bits`, selected by the target qubit.
    pub fn for_bits(&self, bits: Bitstring) -> &BusOp {
        self.for_bit(bits.bit(self.target))
    }
}

/// Exact (two-)qubit ⊗ bus ⊗ environment state.
#[derive(Clone, Debug)]
pub struct HybridState {
    n_qubits: usize,
    coeffs: Vec<Complex64>,
    bus: Vec<CoherentBranch>,
    env: Vec<Vec<CoherentBranch>>,
    input_coeffs: Vec<Complex64>,
    input_bus_amp: Complex64,
    input_norm_defect: f64,
}

impl HybridState {
    /// Two-qubit input state `(Σ c_s |s⟩) ⊗ |bus_amp⟩`, renormalized.
    pub fn init_state(coeffs: &[Complex64; 4], bus_amp: Complex64) -> Result<Self, HybridError> {
        Self::init_any(coeffs, bus_amp, 2)
    }

    /// Single-qubit variant, used by the loss examples and unit tests.
    pub fn init_single(coeffs: &[Complex64; 2], bus_amp: Complex64) -> Result<Self, HybridError> {
        Self::init_any(coeffs, bus_amp, 1)
    }

    fn init_any(coeffs: &[Complex64], bus_amp: Complex64, n_qubits: usize) -> Result<Self, HybridError> {
        let norm_sq: f64 = coeffs.iter().map(|c| c.norm_sqr()).sum();
        if norm_sq < COEFF_EPS * COEFF_EPS {
            return Err(HybridError::ZeroNorm);
        }
        let scale = norm_sq.sqrt();
        let normalized: Vec<Complex64> = coeffs.iter().map(|c| c / scale).collect();
        let dim = 1 << n_qubits;
        debug_assert_eq!(normalized.len(), dim);
        Ok(HybridState {
            n_qubits,
            coeffs: normalized.clone(),
            bus: vec![CoherentBranch::new(bus_amp); dim],
            env: vec![Vec::new(); dim],
            input_coeffs: normalized,
            input_bus_amp: bus_amp,
            input_norm_defect: (scale - 1.0).abs(),
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    /// Σ|c_s|², which every operation preserves.
    pub fn norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn coeff(&self, bits: Bitstring) -> Complex64 {
        self.coeffs[bits.index()]
    }

    pub fn bus_branch(&self, bits: Bitstring) -> &CoherentBranch {
        &self.bus[bits.index()]
    }

    pub fn env_branches(&self, bits: Bitstring) -> &[CoherentBranch] {
        &self.env[bits.index()]
    }

    pub fn n_env_modes(&self) -> usize {
        self.env[0].len()
    }

    /// Normalized coefficients the state was initialized with.
    pub fn input_coeffs(&self) -> &[Complex64] {
        &self.input_coeffs
    }

    pub fn input_bus_amp(&self) -> Complex64 {
        self.input_bus_amp
    }

    /// How far the raw input coefficients were from unit norm.
    pub fn input_norm_defect(&self) -> f64 {
        self.input_norm_defect
    }

    pub fn bitstrings(&self) -> impl Iterator<Item = Bitstring> {
        Bitstring::all(self.n_qubits)
    }

    /// Apply a per-bitstring bus operation; coefficients and env unchanged.
    pub fn apply_branch_ops(&self, op_for: impl Fn(Bitstring) -> BusOp) -> Self {
        let mut next = self.clone();
        for bits in self.bitstrings() {
            let op = op_for(bits);
            next.bus[bits.index()] = op.apply_to_coherent(&self.bus[bits.index()]);
        }
        next
    }

    /// Apply a σz-conditioned bus operation.
    pub fn apply_conditional(&self, op: &ConditionalBusOp) -> Result<Self, HybridError> {
        if op.target >= self.n_qubits {
            return Err(HybridError::QubitIndex {
                index: op.target,
                n_qubits: self.n_qubits,
            });
        }
        Ok(self.apply_branch_ops(|bits| *op.for_bits(bits)))
    }

    /// Append one environment branch to every term (one new lossy mode).
    pub fn append_env(&self, branch_for: impl Fn(Bitstring) -> CoherentBranch) -> Self {
        let mut next = self.clone();
        for bits in self.bitstrings() {
            next.env[bits.index()].push(branch_for(bits));
        }
        next
    }

    /// Apply a diagonal single-qubit unitary `diag(u₀, u₁)` to `qubit`.
    pub fn apply_local_diagonal(&self, qubit: usize, u: &[Complex64; 2]) -> Result<Self, HybridError> {
        if qubit >= self.n_qubits {
            return Err(HybridError::QubitIndex {
                index: qubit,
                n_qubits: self.n_qubits,
            });
        }
        let defect = u
            .iter()
            .map(|e| (e.norm() - 1.0).abs())
            .fold(0.0, f64::max);
        if defect > 1e-12 {
            return Err(HybridError::NonUnitary { defect });
        }
        let mut next = self.clone();
        for bits in self.bitstrings() {
            next.coeffs[bits.index()] *= u[bits.bit(qubit) as usize];
        }
        Ok(next)
    }

    /// Reduced qubit density matrix, tracing out bus and environment:
    /// `ρ_{s,s'} = c_s c̄_{s'} ⟨bus_{s'}|bus_s⟩ Π_k ⟨env_{s'k}|env_{sk}⟩`.
    pub fn reduced_qubit_density(&self) -> QubitDensityMatrix {
        let dim = self.dim();
        QubitDensityMatrix::from_fn(dim, |i, j| {
            let bus_overlap = coherent_overlap(&self.bus[j], &self.bus[i]);
            let env_overlap: Complex64 = self.env[i]
                .iter()
                .zip(&self.env[j])
                .map(|(ei, ej)| coherent_overlap(ej, ei))
                .product();
            self.coeffs[i] * self.coeffs[j].conj() * bus_overlap * env_overlap
        })
    }

    /// Largest bus-amplitude separation between occupied terms; zero means
    /// the bus factorizes exactly (branch phases are absorbable into the
    /// coefficients and are deliberately excluded).
    pub fn bus_disentanglement_defect(&self) -> f64 {
        let occupied: Vec<usize> = (0..self.dim())
            .filter(|&i| self.coeffs[i].norm() > COEFF_EPS)
            .collect();
        let mut worst = 0.0f64;
        for (k, &i) in occupied.iter().enumerate() {
            for &j in &occupied[k + 1..] {
                worst = worst.max((self.bus[i].amp - self.bus[j].amp).norm());
            }
        }
        worst
    }

    /// Per-bitstring phase acquired relative to the input coefficients,
    /// including the bus branch phase. Terms whose input coefficient is
    /// (near-)zero report 0.
    pub fn relative_branch_phases(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| {
                if self.input_coeffs[i].norm() <= COEFF_EPS || self.coeffs[i].norm() <= COEFF_EPS {
                    0.0
                } else {
                    crate::phase_space::angle_wrap(
                        (self.coeffs[i] * Complex64::from_polar(1.0, self.bus[i].phase)
                            / self.input_coeffs[i])
                            .arg(),
                    )
                }
            })
            .collect()
    }

    /// Per-term environment photon count Σ_k |env amp|², maximized over
    /// occupied terms.
    pub fn env_photon_budget(&self) -> f64 {
        (0..self.dim())
            .filter(|&i| self.coeffs[i].norm() > COEFF_EPS)
            .map(|i| {
                self.env[i]
                    .iter()
                    .fold(0.0, |acc, b| acc + b.amp.norm_sqr())
            })
            .fold(0.0, f64::max)
    }
}
