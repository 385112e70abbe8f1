//! Closed-form algebra of single-mode displacements and number rotations.
//!
//! Every product of displacements `D(β) = exp(βa† − β*a)` and rotations
//! `R(θ) = exp(−iθ a†a)` reduces to the normal form `e^{iφ} D(β) R(θ)`,
//! represented here by [`BusOp`]. The set is closed under composition, so
//! arbitrarily long pulse sequences can be tracked exactly, with no
//! Hilbert-space cutoff and no accumulation of truncation error.
//!
//! The global phase `φ` is stored unwrapped (a plain real, not reduced
//! mod 2π) so that phase bookkeeping across long sequences stays exact;
//! comparisons reduce mod 2π via [`angle_wrap`].
//!
//! # Quadrature and area conventions
//!
//! Quadratures are `X(φ) = a†e^{iφ} + ae^{−iφ}` with `x = X(0)`,
//! `p = X(π/2)`, so `[x, p] = 2i` for `[a, a†] = 1`, and a coherent state
//! `|α⟩` sits at `(⟨x⟩, ⟨p⟩) = (2 Re α, 2 Im α)`.
//!
//! A closed loop of pure displacements imprints a global phase of exactly
//! half the signed area it encloses in the `(x, p)` plane. Derivation: a
//! step `δ` taken from amplitude `α` contributes `Im(δ ᾱ)` to the phase
//! (the `Im(β₂ β̄₁)` factor of the two-displacement composition rule),
//! while the shoelace formula for the polygon with vertices
//! `(2 Re α_k, 2 Im α_k)` gives `area = 2 Σ_k Im(ᾱ_k α_{k+1})`. Writing
//! `α_{k+1} = α_k + δ_{k+1}` makes each shoelace term `2 Im(δ_{k+1} ᾱ_k)`,
//! so `phase = area / 2` identically once the loop closes.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for deciding that a phase-space path returned to its start.
pub const PATH_CLOSURE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PhaseSpaceError {
    /// The path handed to [`loop_area`] does not close on itself.
    #[error("phase-space path is not closed: endpoint gap {gap:.3e} exceeds {tol:.1e}")]
    OpenPath { gap: f64, tol: f64 },
}

/// Marker for the fixed quadrature convention used throughout.
///
/// `X(φ) = a†e^{iφ} + ae^{−iφ}`, `x = X(0)`, `p = X(π/2)`, `[x, p] = 2i`.
pub struct QuadratureConvention;

impl QuadratureConvention {
    /// Mean position of a coherent amplitude: `⟨x⟩ = 2 Re α`.
    pub fn x(alpha: Complex64) -> f64 {
        2.0 * alpha.re
    }

    /// Mean momentum of a coherent amplitude: `⟨p⟩ = 2 Im α`.
    pub fn p(alpha: Complex64) -> f64 {
        2.0 * alpha.im
    }
}

/// Wrap an angle into `(−π, π]`.
pub fn angle_wrap(angle: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut a = angle % two_pi;
    if a <= -std::f64::consts::PI {
        a += two_pi;
    } else if a > std::f64::consts::PI {
        a -= two_pi;
    }
    a
}

/// A single-mode operator in normal form `e^{iφ} D(β) R(θ)`.
///
/// `R(θ) = e^{−iθ a†a}`, i.e. Hamiltonian evolution under `+χ a†a` for a
/// time `t` yields `R(χt)`. The identity is `(0, 0, 0)` and the inverse
/// exists in closed form; see [`BusOp::inverse`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BusOp {
    /// Global phase `φ` in radians, stored unwrapped.
    pub phase: f64,
    /// Displacement amplitude `β`.
    pub disp: Complex64,
    /// Rotation angle `θ` in radians.
    pub rot: f64,
}

impl BusOp {
    pub const IDENTITY: BusOp = BusOp {
        phase: 0.0,
        disp: Complex64::new(0.0, 0.0),
        rot: 0.0,
    };

    pub fn new(phase: f64, disp: Complex64, rot: f64) -> Self {
        let op = BusOp { phase, disp, rot };
        debug_assert!(op.is_finite(), "BusOp built from non-finite fields");
        op
    }

    /// Pure displacement `D(β)`.
    pub fn displacement(beta: Complex64) -> Self {
        Self::new(0.0, beta, 0.0)
    }

    /// Pure rotation `R(θ) = e^{−iθ a†a}`.
    pub fn rotation(theta: f64) -> Self {
        Self::new(0.0, Complex64::new(0.0, 0.0), theta)
    }

    /// Pure global phase `e^{iφ}`.
    pub fn phase_factor(phase: f64) -> Self {
        Self::new(phase, Complex64::new(0.0, 0.0), 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.phase.is_finite() && self.rot.is_finite() && self.disp.is_finite()
    }

    /// Compose with `second` applied after `self`. See [`compose`].
    pub fn then(&self, second: &BusOp) -> BusOp {
        compose(self, second)
    }

    /// Closed-form inverse: `(e^{iφ} D(β) R(θ))⁻¹ = e^{−iφ} D(−βe^{iθ}) R(−θ)`.
    pub fn inverse(&self) -> BusOp {
        BusOp::new(
            -self.phase,
            -self.disp * Complex64::from_polar(1.0, self.rot),
            -self.rot,
        )
    }

    /// Act on a coherent branch, exactly.
    ///
    /// `R(θ)|α⟩ = |αe^{−iθ}⟩` and `D(β)|α⟩ = e^{i Im(β ᾱ)}|β + α⟩`, so the
    /// output amplitude is `β + α e^{−iθ}` and the branch phase picks up
    /// `φ + Im(β · conj(α e^{−iθ}))`.
    pub fn apply_to_coherent(&self, input: &CoherentBranch) -> CoherentBranch {
        let rotated = input.amp * Complex64::from_polar(1.0, -self.rot);
        CoherentBranch {
            amp: self.disp + rotated,
            phase: input.phase + self.phase + (self.disp * rotated.conj()).im,
        }
    }

    /// Field-wise comparison with phases and rotations reduced mod 2π.
    pub fn approx_eq(&self, other: &BusOp, tol: f64) -> bool {
        (self.disp - other.disp).norm() <= tol
            && angle_wrap(self.rot - other.rot).abs() <= tol
            && angle_wrap(self.phase - other.phase).abs() <= tol
    }

    /// Distance to the identity (displacement norm + wrapped rot + wrapped phase).
    pub fn distance_to_identity(&self) -> f64 {
        self.disp.norm() + angle_wrap(self.rot).abs() + angle_wrap(self.phase).abs()
    }
}

/// Normal form of `second ∘ first` (apply `first` to a state, then `second`).
///
/// Composition rule, from `R(θ)D(α)R(−θ) = D(αe^{−iθ})` and the
/// two-displacement phase `D(β₁)D(β₂) = e^{i Im(β₁ β̄₂)} D(β₁+β₂)`:
///
/// ```text
/// rot   = θ₁ + θ₂
/// disp  = β₂ + β₁ e^{−iθ₂}
/// phase = φ₁ + φ₂ + Im(β₂ · conj(β₁ e^{−iθ₂}))
/// ```
pub fn compose(first: &BusOp, second: &BusOp) -> BusOp {
    let rotated = first.disp * Complex64::from_polar(1.0, -second.rot);
    BusOp::new(
        first.phase + second.phase + (second.disp * rotated.conj()).im,
        second.disp + rotated,
        first.rot + second.rot,
    )
}

/// A phased coherent state `e^{iφ}|α⟩`, unit norm by construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherentBranch {
    /// Branch phase `φ` in radians, stored unwrapped.
    pub phase: f64,
    /// Coherent amplitude `α`.
    pub amp: Complex64,
}

impl CoherentBranch {
    pub fn vacuum() -> Self {
        CoherentBranch {
            phase: 0.0,
            amp: Complex64::new(0.0, 0.0),
        }
    }

    pub fn new(amp: Complex64) -> Self {
        CoherentBranch { phase: 0.0, amp }
    }

    pub fn with_phase(phase: f64, amp: Complex64) -> Self {
        CoherentBranch { phase, amp }
    }
}

/// Overlap `⟨a|b⟩` of two phased coherent states:
/// `e^{i(φ_b − φ_a)} · exp(−|α_a|²/2 − |α_b|²/2 + ᾱ_a α_b)`.
pub fn coherent_overlap(a: &CoherentBranch, b: &CoherentBranch) -> Complex64 {
    let cross = a.amp.conj() * b.amp;
    let log_mag = -0.5 * a.amp.norm_sqr() - 0.5 * b.amp.norm_sqr() + cross.re;
    Complex64::from_polar(log_mag.exp(), b.phase - a.phase + cross.im)
}

/// Ordered record of a bus branch's coherent amplitude after each primitive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpacePath {
    vertices: Vec<Complex64>,
}

impl PhaseSpacePath {
    pub fn new(start: Complex64) -> Self {
        PhaseSpacePath {
            vertices: vec![start],
        }
    }

    pub fn from_vertices(vertices: Vec<Complex64>) -> Self {
        PhaseSpacePath { vertices }
    }

    /// Path traced by successive displacements from `start`.
    pub fn from_displacements(start: Complex64, steps: &[Complex64]) -> Self {
        let mut path = PhaseSpacePath::new(start);
        let mut amp = start;
        for &step in steps {
            amp += step;
            path.push(amp);
        }
        path
    }

    pub fn push(&mut self, vertex: Complex64) {
        self.vertices.push(vertex);
    }

    pub fn vertices(&self) -> &[Complex64] {
        &self.vertices
    }

    /// Distance between the last vertex and the first.
    pub fn closure_gap(&self) -> f64 {
        match (self.vertices.first(), self.vertices.last()) {
            (Some(a), Some(b)) => (a - b).norm(),
            _ => 0.0,
        }
    }

    pub fn is_closed(&self) -> bool {
        self.closure_gap() <= PATH_CLOSURE_TOL
    }
}

/// Signed area enclosed by a closed path, counterclockwise positive.
///
/// Vertices map to `(x, p) = (2 Re α, 2 Im α)` and the polygon area follows
/// the shoelace formula, which reduces to `2 Σ_k Im(ᾱ_k α_{k+1})`.
pub fn loop_area(path: &PhaseSpacePath) -> Result<f64, PhaseSpaceError> {
    let gap = path.closure_gap();
    if gap > PATH_CLOSURE_TOL {
        return Err(PhaseSpaceError::OpenPath {
            gap,
            tol: PATH_CLOSURE_TOL,
        });
    }
    let twice_sum: f64 = path
        .vertices
        .windows(2)
        .map(|w| (w[0].conj() * w[1]).im)
        .sum();
    Ok(2.0 * twice_sum)
}
