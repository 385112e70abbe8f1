//! Small dense qubit density matrices (2×2 and 4×4) with the handful of
//! metrics the gate analysis needs: trace, purity, Hermiticity defect,
//! minimum eigenvalue and fidelity against a pure target.

use num_complex::Complex64;

/// Row-major `dim × dim` complex matrix over the computational basis.
///
/// For two qubits the basis order is `(00, 01, 10, 11)` with the first
/// qubit as the most significant bit.
#[derive(Clone, Debug, PartialEq)]
pub struct QubitDensityMatrix {
    dim: usize,
    data: Vec<Complex64>,
}

impl QubitDensityMatrix {
    pub fn zeros(dim: usize) -> Self {
        QubitDensityMatrix {
            dim,
            data: vec![Complex64::new(0.0, 0.0); dim * dim],
        }
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m.data[i * dim + j] = f(i, j);
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.dim + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: Complex64) {
        self.data[i * self.dim + j] = value;
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|i| self.entry(i, i)).sum()
    }

    /// `Re Tr ρ²`; equals 1 exactly for pure states.
    pub fn purity(&self) -> f64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..self.dim {
            for j in 0..self.dim {
                acc += self.entry(i, j) * self.entry(j, i);
            }
        }
        acc.re
    }

    /// Largest `|ρ_ij − conj(ρ_ji)|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for j in 0..self.dim {
                worst = worst.max((self.entry(i, j) - self.entry(j, i).conj()).norm());
            }
        }
        worst
    }

    /// `⟨t|ρ|t⟩` for a pure target state `t` (assumed normalized).
    pub fn fidelity_with_pure(&self, target: &[Complex64]) -> f64 {
        assert_eq!(target.len(), self.dim, "target dimension mismatch");
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..self.dim {
            for j in 0..self.dim {
                acc += target[i].conj() * self.entry(i, j) * target[j];
            }
        }
        acc.re
    }

    pub fn max_entry_distance(&self, other: &QubitDensityMatrix) -> f64 {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Smallest eigenvalue of the Hermitian part, via cyclic Jacobi sweeps.
    pub fn min_eigenvalue(&self) -> f64 {
        // Symmetrize first so roundoff-level anti-Hermitian parts cannot
        // push the Jacobi iteration off course.
        let n = self.dim;
        let mut a = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = 0.5 * (self.entry(i, j) + self.entry(j, i).conj());
            }
        }

        for _sweep in 0..64 {
            let mut off = 0.0f64;
            for p in 0..n {
                for q in (p + 1)..n {
                    off = off.max(a[p * n + q].norm());
                }
            }
            if off < 1e-14 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[p * n + q];
                    if apq.norm() < 1e-300 {
                        continue;
                    }
                    let app = a[p * n + p].re;
                    let aqq = a[q * n + q].re;
                    let phi = apq.arg();
                    let mag = apq.norm();
                    // Rotation angle for the real 2×2 problem after phasing
                    // out arg(a_pq); zeroes the (p,q) entry of U†AU for
                    // U = [[c, s e^{iφ}], [−s e^{−iφ}, c]].
                    let theta = 0.5 * (2.0 * mag).atan2(aqq - app);
                    let (s, c) = theta.sin_cos();
                    let e_phi = Complex64::from_polar(1.0, phi);

                    // Column update A ← A·U.
                    for r in 0..n {
                        let arp = a[r * n + p];
                        let arq = a[r * n + q];
                        a[r * n + p] = c * arp - s * e_phi.conj() * arq;
                        a[r * n + q] = s * e_phi * arp + c * arq;
                    }
                    // Row update A ← U†·A.
                    for r in 0..n {
                        let apr = a[p * n + r];
                        let aqr = a[q * n + r];
                        a[p * n + r] = c * apr - s * e_phi * aqr;
                        a[q * n + r] = s * e_phi.conj() * apr + c * aqr;
                    }
                }
            }
        }

        (0..n).map(|i| a[i * n + i].re).fold(f64::INFINITY, f64::min)
    }
}
