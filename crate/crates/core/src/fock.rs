//! Truncated Fock-space numerical backend.
//!
//! Builds dense cutoff-N matrices for every gate primitive by exponentiating
//! the truncated generator (scaling-and-squaring Padé), evolves joint
//! qubit ⊗ bus vectors, and composes full sequence matrices. This backend is
//! deliberately independent of the closed-form normal-form algebra it is
//! used to check: displacements and drive pulses go through `expm`, not
//! through any displacement identity.
//!
//! Truncating an anti-Hermitian generator keeps it anti-Hermitian, so all
//! primitive matrices here are unitary to machine precision and norms are
//! never silently renormalized; the reported leakage exposes any defect.
//! Truncation accuracy (agreement with the infinite-dimensional operators)
//! is policed separately by the cutoff rule and the cutoff-doubling
//! convergence checks.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use thiserror::Error;

use crate::density::QubitDensityMatrix;
use crate::gate::{GateSequence, Primitive};
use crate::hybrid::HybridState;
use crate::phase_space::{BusOp, CoherentBranch};

pub mod two_mode;

#[derive(Debug, Error)]
pub enum FockError {
    #[error("cutoff {got} below required {needed} (amplitude bound {amp:.3})")]
    CutoffTooSmall { needed: usize, got: usize, amp: f64 },
    #[error("shape mismatch: {context}")]
    ShapeMismatch { context: String },
    #[error("qubit index {index} out of range for {n_qubits} qubit(s)")]
    QubitIndex { index: usize, n_qubits: usize },
    #[error("lossy primitives are not representable in the single-mode Fock backend")]
    LossyPrimitive,
    #[error("hybrid state carries populated environment branches")]
    EnvironmentNotEmpty,
    #[error("reflectivity must satisfy 0 <= eta < 1, got {eta}")]
    InvalidEta { eta: f64 },
}

/// Smallest admissible cutoff for a branch amplitude bound `A`:
/// `N ≥ Ā + 8√Ā + 20` with `Ā = A²` (Poissonian photon-number tail).
pub fn cutoff_rule(max_amp: f64) -> usize {
    let n_bar = max_amp * max_amp;
    (n_bar + 8.0 * max_amp + 20.0).ceil() as usize
}

fn czero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

fn cone() -> Complex64 {
    Complex64::new(1.0, 0.0)
}

/// Annihilation operator `a` at the given cutoff.
pub fn annihilation(cutoff: usize) -> Array2<Complex64> {
    let mut m = Array2::zeros((cutoff, cutoff));
    for n in 1..cutoff {
        m[[n - 1, n]] = Complex64::new((n as f64).sqrt(), 0.0);
    }
    m
}

/// Creation operator `a†`.
pub fn creation(cutoff: usize) -> Array2<Complex64> {
    annihilation(cutoff).t().mapv(|z| z.conj())
}

/// Number operator `a†a` (diagonal).
pub fn number(cutoff: usize) -> Array2<Complex64> {
    Array2::from_diag(&Array1::from_iter(
        (0..cutoff).map(|n| Complex64::new(n as f64, 0.0)),
    ))
}

/// Position quadrature `x = X(0) = a + a†` in this crate's convention,
/// so `⟨α|x|α⟩ = 2 Re α`.
pub fn position(cutoff: usize) -> Array2<Complex64> {
    annihilation(cutoff) + creation(cutoff)
}

pub fn identity(dim: usize) -> Array2<Complex64> {
    Array2::from_diag_elem(dim, cone())
}

/// Max column sum of absolute values.
fn one_norm(a: &Array2<Complex64>) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..a.ncols() {
        let mut sum = 0.0;
        for i in 0..a.nrows() {
            sum += a[[i, j]].norm();
        }
        worst = worst.max(sum);
    }
    worst
}

/// Solve `A X = B` by Gaussian elimination with partial pivoting.
fn solve_linear(a: Array2<Complex64>, b: Array2<Complex64>) -> Array2<Complex64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    assert_eq!(n, b.nrows());
    let m = b.ncols();

    let mut lu = a;
    let mut rhs = b;
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot = lu[[col, col]].norm();
        for row in (col + 1)..n {
            let v = lu[[row, col]].norm();
            if v > pivot {
                pivot = v;
                pivot_row = row;
            }
        }
        assert!(pivot > 1e-300, "singular matrix in Pade solve");
        if pivot_row != col {
            for k in 0..n {
                let tmp = lu[[col, k]];
                lu[[col, k]] = lu[[pivot_row, k]];
                lu[[pivot_row, k]] = tmp;
            }
            for k in 0..m {
                let tmp = rhs[[col, k]];
                rhs[[col, k]] = rhs[[pivot_row, k]];
                rhs[[pivot_row, k]] = tmp;
            }
        }
        let diag = lu[[col, col]];
        for row in (col + 1)..n {
            let factor = lu[[row, col]] / diag;
            if factor == czero() {
                continue;
            }
            for k in col..n {
                let v = lu[[col, k]];
                lu[[row, k]] -= factor * v;
            }
            for k in 0..m {
                let v = rhs[[col, k]];
                rhs[[row, k]] -= factor * v;
            }
        }
    }
    let mut x = Array2::zeros((n, m));
    for col in (0..n).rev() {
        for k in 0..m {
            let mut sum = rhs[[col, k]];
            for j in (col + 1)..n {
                sum -= lu[[col, j]] * x[[j, k]];
            }
            x[[col, k]] = sum / lu[[col, col]];
        }
    }
    x
}

/// Padé(13) coefficients for the matrix exponential.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Dense matrix exponential by scaling-and-squaring with Padé(13).
pub fn expm(a: &Array2<Complex64>) -> Array2<Complex64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm requires a square matrix");
    if n == 0 {
        return Array2::zeros((0, 0));
    }
    if n == 1 {
        let mut out = Array2::zeros((1, 1));
        out[[0, 0]] = a[[0, 0]].exp();
        return out;
    }

    let theta13 = 5.371920351148152;
    let norm = one_norm(a);
    let squarings = if norm > theta13 {
        (norm / theta13).log2().ceil() as u32
    } else {
        0
    };
    let scale = Complex64::new((0.5f64).powi(squarings as i32), 0.0);
    let a1 = a.mapv(|z| z * scale);

    let eye = identity(n);
    let a2 = a1.dot(&a1);
    let a4 = a2.dot(&a2);
    let a6 = a2.dot(&a4);

    let b = |k: usize| Complex64::new(PADE13[k], 0.0);
    let w1 = &a6 * b(13) + &a4 * b(11) + &a2 * b(9);
    let w2 = a6.dot(&w1) + &a6 * b(7) + &a4 * b(5) + &a2 * b(3) + &eye * b(1);
    let u = a1.dot(&w2);
    let z1 = &a6 * b(12) + &a4 * b(10) + &a2 * b(8);
    let v = a6.dot(&z1) + &a6 * b(6) + &a4 * b(4) + &a2 * b(2) + &eye * b(0);

    let mut f = solve_linear(&v - &u, &v + &u);
    for _ in 0..squarings {
        f = f.dot(&f);
    }
    f
}

/// Dense cutoff-N matrix, either bus-only (`qubit_dim = 1`) or joint
/// (`qubit_dim` ∈ {2, 4}) with layout `index = qubit_index·N + photon`.
#[derive(Clone, Debug)]
pub struct FockMatrix {
    cutoff: usize,
    qubit_dim: usize,
    data: Array2<Complex64>,
}

impl FockMatrix {
    pub fn from_bus_matrix(cutoff: usize, data: Array2<Complex64>) -> Self {
        assert_eq!(data.nrows(), cutoff);
        FockMatrix {
            cutoff,
            qubit_dim: 1,
            data,
        }
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn qubit_dim(&self) -> usize {
        self.qubit_dim
    }

    pub fn data(&self) -> &Array2<Complex64> {
        &self.data
    }

    /// Max-entry deviation from unitarity, `‖U†U − I‖_max`, restricted to
    /// the interior photon block on both indices.
    pub fn unitarity_defect(&self, interior: std::ops::Range<usize>) -> f64 {
        let udu = self.data.t().mapv(|z| z.conj()).dot(&self.data);
        let mut worst = 0.0f64;
        let n = self.cutoff;
        for bu in 0..self.qubit_dim {
            for bv in 0..self.qubit_dim {
                for k in interior.clone() {
                    for l in interior.clone() {
                        let i = bu * n + k;
                        let j = bv * n + l;
                        let expect = if i == j { cone() } else { czero() };
                        worst = worst.max((udu[[i, j]] - expect).norm());
                    }
                }
            }
        }
        worst
    }

    pub fn max_entry_distance(&self, other: &FockMatrix, interior: std::ops::Range<usize>) -> Result<f64, FockError> {
        if self.cutoff != other.cutoff || self.qubit_dim != other.qubit_dim {
            return Err(FockError::ShapeMismatch {
                context: format!(
                    "({}, {}) vs ({}, {})",
                    self.qubit_dim, self.cutoff, other.qubit_dim, other.cutoff
                ),
            });
        }
        let n = self.cutoff;
        let mut worst = 0.0f64;
        for bu in 0..self.qubit_dim {
            for bv in 0..self.qubit_dim {
                for k in interior.clone() {
                    for l in interior.clone() {
                        let i = bu * n + k;
                        let j = bv * n + l;
                        worst = worst.max((self.data[[i, j]] - other.data[[i, j]]).norm());
                    }
                }
            }
        }
        Ok(worst)
    }
}

/// Displacement `D(β)` as `expm(β a† − β* a)` at the given cutoff.
pub fn displacement(beta: Complex64, cutoff: usize) -> FockMatrix {
    assert!(cutoff >= 2, "cutoff must be at least 2");
    let mut gen = Array2::zeros((cutoff, cutoff));
    for n in 1..cutoff {
        let root = Complex64::new((n as f64).sqrt(), 0.0);
        gen[[n, n - 1]] = beta * root; // β a†
        gen[[n - 1, n]] = -beta.conj() * root; // −β* a
    }
    FockMatrix::from_bus_matrix(cutoff, expm(&gen))
}

/// Strict-mode displacement: rejects cutoffs below `cutoff_rule(|β|)`.
pub fn displacement_strict(beta: Complex64, cutoff: usize) -> Result<FockMatrix, FockError> {
    let needed = cutoff_rule(beta.norm());
    if cutoff < needed {
        return Err(FockError::CutoffTooSmall {
            needed,
            got: cutoff,
            amp: beta.norm(),
        });
    }
    Ok(displacement(beta, cutoff))
}

/// Rotation `R(θ) = e^{−iθ a†a}`, exactly unitary at any cutoff.
pub fn rotation(theta: f64, cutoff: usize) -> FockMatrix {
    assert!(cutoff >= 2, "cutoff must be at least 2");
    let mut m = Array2::zeros((cutoff, cutoff));
    for n in 0..cutoff {
        m[[n, n]] = Complex64::from_polar(1.0, -theta * n as f64);
    }
    FockMatrix::from_bus_matrix(cutoff, m)
}

/// Drive propagator `exp[−it(ε(a†e^{iφ} + ae^{−iφ}) + χ_eff a†a)]` by
/// direct exponentiation of the truncated generator (`φ` = pump phase).
pub fn drive_matrix(epsilon: f64, pump_phase: f64, chi_eff: f64, t: f64, cutoff: usize) -> FockMatrix {
    let mut gen = Array2::zeros((cutoff, cutoff));
    let it = Complex64::new(0.0, -t);
    let pump = Complex64::from_polar(1.0, pump_phase);
    for n in 0..cutoff {
        gen[[n, n]] = it * chi_eff * n as f64;
        if n + 1 < cutoff {
            let root = ((n + 1) as f64).sqrt();
            gen[[n + 1, n]] = it * epsilon * pump * root;
            gen[[n, n + 1]] = it * epsilon * pump.conj() * root;
        }
    }
    FockMatrix::from_bus_matrix(cutoff, expm(&gen))
}

/// Matrix of a normal-form op `e^{iφ} D(β) R(θ)` (used when comparing the
/// exact algebra against this backend).
pub fn bus_op_matrix(op: &BusOp, cutoff: usize) -> FockMatrix {
    let d = displacement(op.disp, cutoff);
    let mut m = d.data;
    // Right-multiply by the diagonal rotation, then the global phase.
    let global = Complex64::from_polar(1.0, op.phase);
    for col in 0..cutoff {
        let twist = Complex64::from_polar(1.0, -op.rot * col as f64) * global;
        for row in 0..cutoff {
            m[[row, col]] *= twist;
        }
    }
    FockMatrix::from_bus_matrix(cutoff, m)
}

/// Snapshot of the inputs a joint vector was assembled from, consumed by
/// the gate metrics.
#[derive(Clone, Debug)]
pub struct InputRecord {
    pub qubit_coeffs: Vec<Complex64>,
    pub bus: Array1<Complex64>,
}

/// State vector over photon numbers `0..cutoff`, optionally joint with a
/// qubit register (`index = qubit_index·cutoff + photon`).
#[derive(Clone, Debug)]
pub struct FockVector {
    cutoff: usize,
    qubit_dim: usize,
    data: Array1<Complex64>,
    record: Option<InputRecord>,
}

impl FockVector {
    pub fn vacuum(cutoff: usize) -> Self {
        let mut data = Array1::zeros(cutoff);
        data[0] = cone();
        FockVector {
            cutoff,
            qubit_dim: 1,
            data,
            record: None,
        }
    }

    /// Bus-only coherent state with branch phase,
    /// entries `e^{iφ} e^{−|α|²/2} αⁿ/√n!`.
    pub fn coherent(branch: &CoherentBranch, cutoff: usize) -> Self {
        let mut data = Array1::zeros(cutoff);
        let mut amp = Complex64::from_polar((-0.5 * branch.amp.norm_sqr()).exp(), branch.phase);
        data[0] = amp;
        for n in 1..cutoff {
            amp *= branch.amp / Complex64::new((n as f64).sqrt(), 0.0);
            data[n] = amp;
        }
        FockVector {
            cutoff,
            qubit_dim: 1,
            data,
            record: None,
        }
    }

    /// Raw bus-only vector.
    pub fn from_bus_amplitudes(data: Array1<Complex64>) -> Self {
        FockVector {
            cutoff: data.len(),
            qubit_dim: 1,
            data,
            record: None,
        }
    }

    /// Joint qubit ⊗ bus product state; records the inputs for the metrics.
    pub fn join(qubit_coeffs: &[Complex64], bus: &FockVector) -> Self {
        assert!(bus.qubit_dim == 1, "bus factor must be bus-only");
        let q = qubit_coeffs.len();
        assert!(q == 2 || q == 4, "qubit factor must be 1 or 2 qubits");
        let n = bus.cutoff;
        let mut data = Array1::zeros(q * n);
        for (u, c) in qubit_coeffs.iter().enumerate() {
            for k in 0..n {
                data[u * n + k] = c * bus.data[k];
            }
        }
        FockVector {
            cutoff: n,
            qubit_dim: q,
            data,
            record: Some(InputRecord {
                qubit_coeffs: qubit_coeffs.to_vec(),
                bus: bus.data.clone(),
            }),
        }
    }

    /// Joint vector equivalent to an exact-backend state (lossless only).
    pub fn from_hybrid(state: &HybridState, cutoff: usize) -> Result<Self, FockError> {
        for bits in state.bitstrings() {
            if state
                .env_branches(bits)
                .iter()
                .any(|b| b.amp.norm() > 1e-12)
            {
                return Err(FockError::EnvironmentNotEmpty);
            }
        }
        let q = state.dim();
        let mut data = Array1::zeros(q * cutoff);
        for bits in state.bitstrings() {
            let branch = FockVector::coherent(state.bus_branch(bits), cutoff);
            let c = state.coeff(bits);
            for k in 0..cutoff {
                data[bits.index() * cutoff + k] = c * branch.data[k];
            }
        }
        Ok(FockVector {
            cutoff,
            qubit_dim: q,
            data,
            record: None,
        })
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn qubit_dim(&self) -> usize {
        self.qubit_dim
    }

    pub fn n_qubits(&self) -> usize {
        self.qubit_dim.trailing_zeros() as usize
    }

    pub fn data(&self) -> &Array1<Complex64> {
        &self.data
    }

    pub fn record(&self) -> Option<&InputRecord> {
        self.record.as_ref()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Mean photon number of the bus marginal.
    pub fn mean_photon(&self) -> f64 {
        let norm = self.norm_sq();
        if norm == 0.0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for (i, z) in self.data.iter().enumerate() {
            acc += (i % self.cutoff) as f64 * z.norm_sqr();
        }
        acc / norm
    }

    /// Photon block of one qubit basis index.
    pub fn block(&self, qubit_index: usize) -> Array1<Complex64> {
        let n = self.cutoff;
        Array1::from_iter((0..n).map(|k| self.data[qubit_index * n + k]))
    }

    /// `⟨a⟩` of one qubit block, if the block is occupied.
    pub fn block_mean_amplitude(&self, qubit_index: usize) -> Option<Complex64> {
        let block = self.block(qubit_index);
        let norm: f64 = block.iter().map(|z| z.norm_sqr()).sum();
        if norm < 1e-20 {
            return None;
        }
        let mut acc = czero();
        for n in 1..self.cutoff {
            acc += block[n - 1].conj() * block[n] * (n as f64).sqrt();
        }
        Some(acc / norm)
    }
}

pub fn inner(a: &FockVector, b: &FockVector) -> Result<Complex64, FockError> {
    if a.cutoff != b.cutoff || a.qubit_dim != b.qubit_dim {
        return Err(FockError::ShapeMismatch {
            context: format!(
                "({}, {}) vs ({}, {})",
                a.qubit_dim, a.cutoff, b.qubit_dim, b.cutoff
            ),
        });
    }
    let mut acc = czero();
    for (x, y) in a.data.iter().zip(b.data.iter()) {
        acc += x.conj() * y;
    }
    Ok(acc)
}

/// `|⟨a|b⟩|²` over the product of norms, so mild truncation cannot inflate it.
pub fn fidelity(a: &FockVector, b: &FockVector) -> Result<f64, FockError> {
    let overlap = inner(a, b)?;
    Ok(overlap.norm_sqr() / (a.norm_sq() * b.norm_sq()))
}

/// Partial trace over the bus: `ρ_{u,v} = Σ_k ψ[u·N+k] ψ̄[v·N+k]`.
pub fn reduced_qubit_density(v: &FockVector) -> QubitDensityMatrix {
    let q = v.qubit_dim;
    let n = v.cutoff;
    QubitDensityMatrix::from_fn(q, |u, w| {
        let mut acc = czero();
        for k in 0..n {
            acc += v.data[u * n + k] * v.data[w * n + k].conj();
        }
        acc
    })
}

/// Per-step and cumulative truncation leakage, `1 − ‖ψ‖²` relative to the
/// input norm.
#[derive(Clone, Debug, Default)]
pub struct LeakageReport {
    pub per_step: Vec<f64>,
    pub total: f64,
}

impl LeakageReport {
    pub fn max_step(&self) -> f64 {
        self.per_step.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
    }
}

/// Result of evolving a vector through a sequence.
#[derive(Clone, Debug)]
pub struct Evolved {
    pub state: FockVector,
    pub leakage: LeakageReport,
}

/// Sign of the σz eigenvalue of `qubit` inside basis index `u`.
fn sigma_z_of_index(u: usize, qubit: usize, n_qubits: usize) -> f64 {
    if (u >> (n_qubits - 1 - qubit)) & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Per-branch bus matrices of one primitive: (matrix for s = +1, s = −1).
/// Unconditional primitives return the same matrix twice.
fn primitive_matrices(p: &Primitive, cutoff: usize) -> (FockMatrix, FockMatrix) {
    match *p {
        Primitive::UncondDisp { beta } => {
            let m = displacement(beta, cutoff);
            (m.clone(), m)
        }
        Primitive::CondDisp { beta, .. } => {
            (displacement(beta, cutoff), displacement(-beta, cutoff))
        }
        Primitive::CondRot { theta, .. } => (rotation(theta, cutoff), rotation(-theta, cutoff)),
        Primitive::DrivePulse {
            epsilon,
            sign,
            t,
            chi,
            pump_phase,
            ..
        } => {
            let chi_signed = f64::from(sign) * chi;
            (
                drive_matrix(epsilon, pump_phase, chi_signed, t, cutoff),
                drive_matrix(epsilon, pump_phase, -chi_signed, t, cutoff),
            )
        }
    }
}

fn check_sequence(seq: &GateSequence, n_qubits: usize, allow_loss: bool) -> Result<(), FockError> {
    for step in seq.steps() {
        if step.loss.is_some() && !allow_loss {
            return Err(FockError::LossyPrimitive);
        }
        if let Some(q) = step.primitive.qubit() {
            if q >= n_qubits {
                return Err(FockError::QubitIndex {
                    index: q,
                    n_qubits,
                });
            }
        }
    }
    Ok(())
}

/// Evolve a joint vector through a sequence, primitive by primitive, each
/// conditional primitive applied block-diagonally over the qubit basis.
///
/// Rejects the cutoff when the sequence's conservative branch-excursion
/// bound (from the input's mean photon number) exceeds the cutoff rule.
pub fn evolve(seq: &GateSequence, input: &FockVector) -> Result<Evolved, FockError> {
    let n_qubits = input.n_qubits();
    check_sequence(seq, n_qubits, false)?;
    if seq.is_empty() {
        return Ok(Evolved {
            state: input.clone(),
            leakage: LeakageReport::default(),
        });
    }

    let amp_bound = seq.max_excursion(input.mean_photon().sqrt());
    let needed = cutoff_rule(amp_bound);
    if input.cutoff < needed {
        return Err(FockError::CutoffTooSmall {
            needed,
            got: input.cutoff,
            amp: amp_bound,
        });
    }

    let n = input.cutoff;
    let initial_norm = input.norm_sq();
    let mut state = input.clone();
    let mut per_step = Vec::with_capacity(seq.len());
    let mut prev_norm = initial_norm;

    for step in seq.steps() {
        let (plus, minus) = primitive_matrices(&step.primitive, n);
        for u in 0..input.qubit_dim {
            let matrix = match step.primitive.qubit() {
                None => &plus,
                Some(q) => {
                    if sigma_z_of_index(u, q, n_qubits) > 0.0 {
                        &plus
                    } else {
                        &minus
                    }
                }
            };
            let block = state.block(u);
            let transformed = matrix.data.dot(&block);
            for k in 0..n {
                state.data[u * n + k] = transformed[k];
            }
        }
        let norm = state.norm_sq();
        per_step.push(1.0 - norm / prev_norm);
        prev_norm = norm;
    }

    let total = 1.0 - prev_norm / initial_norm;
    Ok(Evolved {
        state,
        leakage: LeakageReport { per_step, total },
    })
}

/// Full joint matrix of a sequence at the given register size and cutoff;
/// block diagonal over the qubit basis because every primitive is.
pub fn sequence_matrix(
    seq: &GateSequence,
    n_qubits: usize,
    cutoff: usize,
) -> Result<FockMatrix, FockError> {
    check_sequence(seq, n_qubits, false)?;
    let q = 1usize << n_qubits;
    let mut blocks: Vec<Array2<Complex64>> = (0..q).map(|_| identity(cutoff)).collect();
    for step in seq.steps() {
        let (plus, minus) = primitive_matrices(&step.primitive, cutoff);
        for (u, block) in blocks.iter_mut().enumerate() {
            let matrix = match step.primitive.qubit() {
                None => &plus,
                Some(qi) => {
                    if sigma_z_of_index(u, qi, n_qubits) > 0.0 {
                        &plus
                    } else {
                        &minus
                    }
                }
            };
            *block = matrix.data.dot(block);
        }
    }
    let mut data = Array2::zeros((q * cutoff, q * cutoff));
    for (u, block) in blocks.iter().enumerate() {
        for i in 0..cutoff {
            for j in 0..cutoff {
                data[[u * cutoff + i, u * cutoff + j]] = block[[i, j]];
            }
        }
    }
    Ok(FockMatrix {
        cutoff,
        qubit_dim: q,
        data,
    })
}

/// Joint diagonal target `diag(phases) ⊗ I_bus`.
pub fn phase_diag_times_identity(phases: &[Complex64], cutoff: usize) -> FockMatrix {
    let q = phases.len();
    let mut data = Array2::zeros((q * cutoff, q * cutoff));
    for (u, ph) in phases.iter().enumerate() {
        for k in 0..cutoff {
            data[[u * cutoff + k, u * cutoff + k]] = *ph;
        }
    }
    FockMatrix {
        cutoff,
        qubit_dim: q,
        data,
    }
}

/// Max-entry deviation between the composed sequence matrix and a target,
/// restricted to the interior photon block on rows and columns.
pub fn operator_distance(
    seq: &GateSequence,
    target: &FockMatrix,
    interior: std::ops::Range<usize>,
) -> Result<f64, FockError> {
    let n_qubits = target.qubit_dim.trailing_zeros() as usize;
    if 1usize << n_qubits != target.qubit_dim {
        return Err(FockError::ShapeMismatch {
            context: format!("target qubit dimension {} is not a power of two", target.qubit_dim),
        });
    }
    if interior.end > target.cutoff {
        return Err(FockError::ShapeMismatch {
            context: format!(
                "interior range end {} exceeds cutoff {}",
                interior.end, target.cutoff
            ),
        });
    }
    let composed = sequence_matrix(seq, n_qubits, target.cutoff)?;
    composed.max_entry_distance(target, interior)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gate::{build_utot, GateSequence};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn c0(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn cutoff_rule_examples() {
        assert_eq!(cutoff_rule(0.0), 20);
        assert_eq!(cutoff_rule(2.0), 40);
        assert!(cutoff_rule(1.0) == 29);
    }

    #[test]
    fn expm_of_zero_is_identity() {
        let z = Array2::<Complex64>::zeros((6, 6));
        let e = expm(&z);
        let defect = (&e - &identity(6)).iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(defect < 1e-14);
    }

    #[test]
    fn expm_matches_diagonal_exponential() {
        let mut a = Array2::<Complex64>::zeros((3, 3));
        a[[0, 0]] = c(0.3, -0.4);
        a[[1, 1]] = c(-1.0, 2.0);
        a[[2, 2]] = c(7.0, 0.5);
        let e = expm(&a);
        for i in 0..3 {
            assert!((e[[i, i]] - a[[i, i]].exp()).norm() < 1e-12 * a[[i, i]].exp().norm());
        }
        assert!(e[[0, 1]].norm() < 1e-14);
    }

    #[test]
    fn displacement_of_zero_is_identity() {
        let d = displacement(c0(0.0), 16);
        let defect = (d.data() - &identity(16))
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max);
        assert!(defect < 1e-14);
    }

    #[test]
    fn displacement_vacuum_matrix_element() {
        // ⟨0|D(1)|0⟩ = e^{−1/2}, from the coherent coefficient formula.
        let d = displacement(c0(1.0), 64);
        let expected = (-0.5f64).exp();
        assert!(
            (d.data()[[0, 0]] - c0(expected)).norm() < 1e-12,
            "{}",
            d.data()[[0, 0]]
        );
    }

    #[test]
    fn displacement_first_column_is_coherent_state() {
        // Column 0 of D(β) must reproduce e^{−|β|²/2} βⁿ/√n!, evaluated
        // independently of expm.
        let beta = c(0.8, -0.55);
        let n = 64;
        let d = displacement(beta, n);
        let mut expected = Complex64::new((-0.5 * beta.norm_sqr()).exp(), 0.0);
        for row in 0..(n - 8) {
            if row > 0 {
                expected *= beta / c0((row as f64).sqrt());
            }
            assert!(
                (d.data()[[row, 0]] - expected).norm() < 1e-10,
                "row {row}: {} vs {}",
                d.data()[[row, 0]],
                expected
            );
        }
    }

    #[test]
    fn displacement_inverse_pair_is_identity_on_interior() {
        let beta = c(0.6, 0.3);
        let n = 48;
        let product = displacement(-beta, n).data().dot(displacement(beta, n).data());
        let mut worst = 0.0f64;
        for i in 0..(n - 12) {
            for j in 0..(n - 12) {
                let expect = if i == j { cone() } else { czero() };
                worst = worst.max((product[[i, j]] - expect).norm());
            }
        }
        assert!(worst < 1e-9, "interior defect {worst}");
    }

    #[test]
    fn displacement_strict_rejects_small_cutoffs() {
        match displacement_strict(c0(2.0), 16) {
            Err(FockError::CutoffTooSmall { needed, got, .. }) => {
                assert_eq!(needed, 40);
                assert_eq!(got, 16);
            }
            other => panic!("expected CutoffTooSmall, got {other:?}"),
        }
        assert!(displacement_strict(c0(2.0), 40).is_ok());
    }

    #[test]
    fn rotation_is_exactly_unitary_and_periodic() {
        let r = rotation(0.0, 12);
        let defect = (r.data() - &identity(12))
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max);
        assert!(defect < 1e-15);
        // Integer spectrum: θ = 2π is the identity too.
        let r = rotation(2.0 * PI, 12);
        let defect = (r.data() - &identity(12))
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max);
        assert!(defect < 1e-12);
        assert!(rotation(1.234, 32).unitarity_defect(0..32) < 1e-14);
    }

    #[test]
    fn rotation_quarter_turn_maps_coherent_to_minus_i() {
        // R(π/2)|α = 1⟩ = |−i⟩ with no extra phase.
        let r = rotation(FRAC_PI_2, 64);
        let rotated = FockVector::from_bus_amplitudes(
            r.data().dot(FockVector::coherent(&CoherentBranch::new(c0(1.0)), 64).data()),
        );
        let expected = FockVector::coherent(&CoherentBranch::new(c(0.0, -1.0)), 64);
        let f = fidelity(&rotated, &expected).unwrap();
        assert!(f >= 1.0 - 1e-10, "fidelity {f}");
        let phase = inner(&expected, &rotated).unwrap().arg();
        assert!(phase.abs() < 1e-10);
    }

    #[test]
    fn coherent_vector_norm_and_mean_photon() {
        let v = FockVector::coherent(&CoherentBranch::new(c(1.0, 0.5)), 64);
        assert!((v.norm_sq() - 1.0).abs() < 1e-12);
        assert!((v.mean_photon() - 1.25).abs() < 1e-9);
    }

    #[test]
    fn quadrature_expectation_matches_convention() {
        // ⟨α|x|α⟩ = 2 Re α under X(0) = a + a†.
        let alpha = c(0.65, -0.4);
        let v = FockVector::coherent(&CoherentBranch::new(alpha), 64);
        let xv = position(64).dot(v.data());
        let mut expect = czero();
        for (a, b) in v.data().iter().zip(xv.iter()) {
            expect += a.conj() * b;
        }
        assert!((expect.re - 2.0 * alpha.re).abs() < 1e-10);
        assert!(expect.im.abs() < 1e-10);
    }

    #[test]
    fn empty_sequence_returns_input() {
        let v = FockVector::join(
            &[c0(1.0), c0(0.0)],
            &FockVector::coherent(&CoherentBranch::new(c0(0.5)), 32),
        );
        let out = evolve(&GateSequence::new(), &v).unwrap();
        assert_eq!(out.state.data(), v.data());
        assert_eq!(out.leakage.total, 0.0);
    }

    #[test]
    fn evolve_rejects_undersized_cutoffs() {
        let v = FockVector::join(
            &[c0(1.0), c0(0.0)],
            &FockVector::coherent(&CoherentBranch::new(c0(1.0)), 24),
        );
        let seq = GateSequence::from_primitives([Primitive::CondDisp {
            beta: c0(1.5),
            qubit: 0,
        }]);
        assert!(matches!(
            evolve(&seq, &v),
            Err(FockError::CutoffTooSmall { .. })
        ));
    }

    #[test]
    fn evolve_rejects_lossy_sequences() {
        let v = FockVector::join(&[c0(1.0), c0(0.0)], &FockVector::vacuum(32));
        let seq = GateSequence::from_primitives([Primitive::CondDisp {
            beta: c0(0.2),
            qubit: 0,
        }])
        .with_loss(0.1);
        assert!(matches!(evolve(&seq, &v), Err(FockError::LossyPrimitive)));
    }

    #[test]
    fn evolve_keeps_unit_norm_and_reports_tiny_leakage() {
        let bus = FockVector::coherent(&CoherentBranch::new(c0(0.8)), 64);
        let half = 1.0 / 2.0f64.sqrt();
        let v = FockVector::join(&[c0(half), c0(half)], &bus);
        let seq = GateSequence::from_primitives([
            Primitive::CondDisp {
                beta: c0(0.7),
                qubit: 0,
            },
            Primitive::CondRot {
                theta: 0.6,
                qubit: 0,
            },
        ]);
        let out = evolve(&seq, &v).unwrap();
        assert!(out.leakage.total.abs() < 1e-9);
        assert!(out.leakage.max_step() < 1e-9);
        assert!((out.state.norm_sq() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn operator_distance_of_inverse_pair_vs_identity() {
        let seq = GateSequence::from_primitives([
            Primitive::UncondDisp { beta: c(0.5, 0.2) },
            Primitive::UncondDisp {
                beta: c(-0.5, -0.2),
            },
        ]);
        let n = 48;
        let target = phase_diag_times_identity(&[cone()], n);
        let dist = operator_distance(&seq, &target, 0..(n - 12)).unwrap();
        assert!(dist < 1e-9, "distance {dist}");
    }

    #[test]
    fn operator_distance_rejects_bad_shapes() {
        let seq = GateSequence::from_primitives([Primitive::UncondDisp { beta: c0(0.1) }]);
        let target = phase_diag_times_identity(&[cone()], 24);
        assert!(matches!(
            operator_distance(&seq, &target, 0..25),
            Err(FockError::ShapeMismatch { .. })
        ));
        let three_block = FockMatrix {
            cutoff: 16,
            qubit_dim: 3,
            data: Array2::zeros((48, 48)),
        };
        assert!(matches!(
            operator_distance(&seq, &three_block, 0..8),
            Err(FockError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn operator_distance_of_rotation_vs_itself_is_zero() {
        let seq = GateSequence::from_primitives([Primitive::CondRot {
            theta: 0.77,
            qubit: 0,
        }]);
        let composed = sequence_matrix(&seq, 1, 24).unwrap();
        let dist = operator_distance(&seq, &composed, 0..24).unwrap();
        assert_eq!(dist, 0.0);
    }

    #[test]
    fn canonical_gate_matrix_is_phase_diagonal_on_interior() {
        let seq = build_utot(c0(0.3), c0(0.5));
        let target = crate::gate::utot_closed_form(c0(0.3), c0(0.5));
        let n = 64;
        let t = phase_diag_times_identity(&target.utot_diag, n);
        let dist = operator_distance(&seq, &t, 0..(n - 20)).unwrap();
        assert!(dist < 1e-7, "distance {dist}");
    }

    #[test]
    fn partial_trace_of_product_state_is_pure() {
        let bus = FockVector::coherent(&CoherentBranch::new(c(0.4, 0.9)), 40);
        let coeffs = [c0(0.5), c(0.0, 0.5), c0(-0.5), c(0.5, 0.0)];
        let v = FockVector::join(&coeffs, &bus);
        let rho = reduced_qubit_density(&v);
        assert!((rho.trace().re - 1.0).abs() < 1e-10);
        assert!((rho.purity() - 1.0).abs() < 1e-10);
        assert!((rho.entry(0, 1) - coeffs[0] * coeffs[1].conj()).norm() < 1e-10);
    }

    #[test]
    fn block_mean_amplitude_recovers_coherent_amplitude() {
        let alpha = c(0.7, -0.3);
        let v = FockVector::join(
            &[c0(1.0), c0(0.0)],
            &FockVector::coherent(&CoherentBranch::new(alpha), 48),
        );
        let a = v.block_mean_amplitude(0).unwrap();
        assert!((a - alpha).norm() < 1e-9);
        assert!(v.block_mean_amplitude(1).is_none());
    }
}
