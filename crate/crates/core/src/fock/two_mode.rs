//! Two-mode (system ⊗ ancilla) Fock machinery for the beam-splitter loss
//! check: a photon-number-conserving beam-splitter unitary, conditional
//! displacements on the system mode, and the qubit partial trace.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use super::{czero, displacement, expm, identity, FockError};
use crate::density::QubitDensityMatrix;

/// Beam splitter `exp[ξ(a b† − a† b)]` with `sin ξ = η`, mapping
/// `|β⟩_a |0⟩_b → |√(1−η²) β⟩_a |η β⟩_b`. Built block-wise: the generator
/// conserves total photon number, so each total-n block is exponentiated
/// densely and scattered into the `(n_sys·n_env)²` matrix.
pub fn beam_splitter(eta: f64, n_sys: usize, n_env: usize) -> Result<Array2<Complex64>, FockError> {
    if !(0.0..1.0).contains(&eta) {
        return Err(FockError::InvalidEta { eta });
    }
    let xi = eta.asin();
    let dim = n_sys * n_env;
    let mut u = Array2::zeros((dim, dim));

    for total in 0..(n_sys + n_env - 1) {
        let k_min = total.saturating_sub(n_env - 1);
        let k_max = total.min(n_sys - 1);
        let size = k_max - k_min + 1;
        // Generator restricted to |k, total−k⟩, ordered by ascending k:
        // a b† couples k → k−1 with amplitude ξ√(k(l+1)), and −a†b is its
        // negative transpose.
        let mut gen = Array2::<Complex64>::zeros((size, size));
        for k in (k_min + 1)..=k_max {
            let l = total - k;
            let coupling = xi * ((k as f64) * (l + 1) as f64).sqrt();
            let row = k - 1 - k_min;
            let col = k - k_min;
            gen[[row, col]] = Complex64::new(coupling, 0.0);
            gen[[col, row]] = Complex64::new(-coupling, 0.0);
        }
        let block = expm(&gen);
        for kp in k_min..=k_max {
            for k in k_min..=k_max {
                let i = kp * n_env + (total - kp);
                let j = k * n_env + (total - k);
                u[[i, j]] = block[[kp - k_min, k - k_min]];
            }
        }
    }
    Ok(u)
}

/// Joint qubit ⊗ system-mode ⊗ ancilla-mode vector with layout
/// `index = (u·n_sys + k)·n_env + l`.
#[derive(Clone, Debug)]
pub struct TwoModeState {
    pub qubit_dim: usize,
    pub n_sys: usize,
    pub n_env: usize,
    pub data: Array1<Complex64>,
}

impl TwoModeState {
    /// Product state: qubit register ⊗ system coherent `|α⟩` ⊗ env vacuum.
    pub fn product(
        qubit_coeffs: &[Complex64],
        sys_alpha: Complex64,
        n_sys: usize,
        n_env: usize,
    ) -> Self {
        let sys = super::FockVector::coherent(
            &crate::phase_space::CoherentBranch::new(sys_alpha),
            n_sys,
        );
        let q = qubit_coeffs.len();
        let mut data = Array1::zeros(q * n_sys * n_env);
        for (u, c) in qubit_coeffs.iter().enumerate() {
            for k in 0..n_sys {
                data[(u * n_sys + k) * n_env] = c * sys.data()[k];
            }
        }
        TwoModeState {
            qubit_dim: q,
            n_sys,
            n_env,
            data,
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    fn n_qubits(&self) -> usize {
        self.qubit_dim.trailing_zeros() as usize
    }

    /// Apply a system-mode matrix conditioned on one qubit's σz value.
    pub fn apply_sys_conditional(&mut self, plus: &Array2<Complex64>, minus: &Array2<Complex64>, qubit: usize) {
        let n_qubits = self.n_qubits();
        for u in 0..self.qubit_dim {
            let s_plus = (u >> (n_qubits - 1 - qubit)) & 1 == 0;
            let m = if s_plus { plus } else { minus };
            for l in 0..self.n_env {
                let col: Array1<Complex64> = Array1::from_iter(
                    (0..self.n_sys).map(|k| self.data[(u * self.n_sys + k) * self.n_env + l]),
                );
                let out = m.dot(&col);
                for k in 0..self.n_sys {
                    self.data[(u * self.n_sys + k) * self.n_env + l] = out[k];
                }
            }
        }
    }

    /// Conditional displacement `D(βσz)` on the system mode.
    pub fn apply_cond_disp(&mut self, beta: Complex64, qubit: usize) {
        let plus = displacement(beta, self.n_sys);
        let minus = displacement(-beta, self.n_sys);
        self.apply_sys_conditional(plus.data(), minus.data(), qubit);
    }

    /// Apply a (system ⊗ ancilla) matrix, e.g. the beam splitter, to every
    /// qubit block.
    pub fn apply_two_mode(&mut self, m: &Array2<Complex64>) {
        let block_dim = self.n_sys * self.n_env;
        assert_eq!(m.nrows(), block_dim);
        for u in 0..self.qubit_dim {
            let col: Array1<Complex64> =
                Array1::from_iter((0..block_dim).map(|i| self.data[u * block_dim + i]));
            let out = m.dot(&col);
            for i in 0..block_dim {
                self.data[u * block_dim + i] = out[i];
            }
        }
    }

    /// Trace out both modes: `ρ_{u,v} = Σ_{k,l} ψ_u(k,l) ψ̄_v(k,l)`.
    pub fn reduced_qubit_density(&self) -> QubitDensityMatrix {
        let block_dim = self.n_sys * self.n_env;
        QubitDensityMatrix::from_fn(self.qubit_dim, |u, v| {
            let mut acc = czero();
            for i in 0..block_dim {
                acc += self.data[u * block_dim + i] * self.data[v * block_dim + i].conj();
            }
            acc
        })
    }
}

/// Convenience: identity on the two-mode block.
pub fn two_mode_identity(n_sys: usize, n_env: usize) -> Array2<Complex64> {
    identity(n_sys * n_env)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{fidelity, FockVector};
    use crate::phase_space::CoherentBranch;

    fn c0(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn beam_splitter_rejects_bad_eta() {
        assert!(matches!(
            beam_splitter(1.0, 8, 8),
            Err(FockError::InvalidEta { .. })
        ));
        assert!(matches!(
            beam_splitter(-0.1, 8, 8),
            Err(FockError::InvalidEta { .. })
        ));
    }

    #[test]
    fn beam_splitter_is_unitary() {
        let u = beam_splitter(0.3, 12, 12).unwrap();
        let udu = u.t().mapv(|z| z.conj()).dot(&u);
        let eye = two_mode_identity(12, 12);
        let defect = (&udu - &eye).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(defect < 1e-12, "defect {defect}");
    }

    #[test]
    fn beam_splitter_splits_coherent_state() {
        // |β, 0⟩ → |√(1−η²)β, ηβ⟩.
        let eta = 0.35f64;
        let beta = c0(0.9);
        let (n_sys, n_env) = (24, 24);
        let u = beam_splitter(eta, n_sys, n_env).unwrap();

        let mut state = TwoModeState::product(&[c0(1.0)], beta, n_sys, n_env);
        state.apply_two_mode(&u);

        let tau = (1.0 - eta * eta).sqrt();
        let sys = FockVector::coherent(&CoherentBranch::new(tau * beta), n_sys);
        let env = FockVector::coherent(&CoherentBranch::new(eta * beta), n_env);
        let mut expected = Array1::zeros(n_sys * n_env);
        for k in 0..n_sys {
            for l in 0..n_env {
                expected[k * n_env + l] = sys.data()[k] * env.data()[l];
            }
        }
        let got = FockVector::from_bus_amplitudes(state.data);
        let want = FockVector::from_bus_amplitudes(expected);
        let f = fidelity(&got, &want).unwrap();
        assert!(f > 1.0 - 1e-10, "fidelity {f}");
    }
}
