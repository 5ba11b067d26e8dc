//! Two-photon polarization states and projective measurements.
//!
//! Basis order is |HH⟩, |HV⟩, |VH⟩, |VV⟩ with the signal photon in the first
//! tensor slot. Angles cross the public API in degrees.

use nalgebra::{Matrix2, Matrix4, SymmetricEigen, Vector2, Vector4};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::angle::AngleDeg;
use crate::error::{Error, Result};

pub type Jones = Matrix2<C64>;
pub type Ket2 = Vector2<C64>;
pub type Density = Matrix4<C64>;

const STATE_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-9;

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Single-photon polarization kets.
pub mod kets {
    use super::*;

    pub fn h() -> Ket2 {
        Ket2::new(c(1.0), c(0.0))
    }
    pub fn v() -> Ket2 {
        Ket2::new(c(0.0), c(1.0))
    }
    pub fn d() -> Ket2 {
        linear(AngleDeg::new(45.0))
    }
    pub fn a() -> Ket2 {
        linear(AngleDeg::new(-45.0))
    }
    pub fn r() -> Ket2 {
        Ket2::new(c(1.0), C64::new(0.0, 1.0)) * c(std::f64::consts::FRAC_1_SQRT_2)
    }
    pub fn l() -> Ket2 {
        Ket2::new(c(1.0), C64::new(0.0, -1.0)) * c(std::f64::consts::FRAC_1_SQRT_2)
    }

    /// Linear polarization at `theta` from horizontal.
    pub fn linear(theta: AngleDeg) -> Ket2 {
        let t = theta.radians();
        Ket2::new(c(t.cos()), c(t.sin()))
    }
}

pub fn kron_ket(s: &Ket2, i: &Ket2) -> Vector4<C64> {
    Vector4::new(s[0] * i[0], s[0] * i[1], s[1] * i[0], s[1] * i[1])
}

pub fn kron(a: &Jones, b: &Jones) -> Density {
    Density::from_fn(|r, col| a[(r / 2, col / 2)] * b[(r % 2, col % 2)])
}

/// A 2×2 unitary acting on one photon's polarization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalUnitary(Jones);

impl LocalUnitary {
    pub fn identity() -> Self {
        LocalUnitary(Jones::identity())
    }

    pub fn new(u: Jones) -> Result<Self> {
        let dev = (u * u.adjoint() - Jones::identity()).norm();
        if dev > STATE_TOL * 10.0 {
            return Err(Error::Domain(format!("matrix is not unitary (‖UU†−I‖ = {dev:e})")));
        }
        Ok(LocalUnitary(u))
    }

    /// Wraps a product of unitaries without re-checking.
    pub(crate) fn from_product(u: Jones) -> Self {
        LocalUnitary(u)
    }

    /// Rotation of linear polarization by `theta` (φ ↦ φ + θ).
    pub fn rotation(theta: AngleDeg) -> Self {
        rotation_rad(theta.radians())
    }

    pub fn matrix(&self) -> &Jones {
        &self.0
    }

    pub fn adjoint(&self) -> Self {
        LocalUnitary(self.0.adjoint())
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &LocalUnitary) -> Self {
        LocalUnitary(self.0 * first.0)
    }

    pub fn apply(&self, ket: &Ket2) -> Ket2 {
        self.0 * ket
    }

    pub fn unitarity_defect(&self) -> f64 {
        (self.0 * self.0.adjoint() - Jones::identity()).norm()
    }

    /// Frobenius distance after removing the best global phase.
    pub fn phase_insensitive_distance(&self, other: &LocalUnitary) -> f64 {
        let overlap = (other.0.adjoint() * self.0).trace();
        let phase = if overlap.norm() > 0.0 { overlap / overlap.norm() } else { c(1.0) };
        (self.0 - other.0 * phase).norm()
    }
}

pub(crate) fn rotation_rad(t: f64) -> LocalUnitary {
    let (s, co) = t.sin_cos();
    LocalUnitary(Jones::new(c(co), c(-s), c(s), c(co)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveplateKind {
    Half,
    Quarter,
}

/// Jones operator of an ideal retarder with its fast axis at `fast_axis`
/// (global phase dropped).
pub fn waveplate_unitary(kind: WaveplateKind, fast_axis: AngleDeg) -> LocalUnitary {
    retarder_rad(kind, fast_axis.radians())
}

pub(crate) fn retarder_rad(kind: WaveplateKind, axis: f64) -> LocalUnitary {
    let slow = match kind {
        WaveplateKind::Half => c(-1.0),
        WaveplateKind::Quarter => C64::new(0.0, 1.0),
    };
    let rot = rotation_rad(axis).0;
    let diag = Jones::new(c(1.0), c(0.0), c(0.0), slow);
    LocalUnitary(rot * diag * rot.transpose())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Port {
    Transmitted,
    Reflected,
}

impl Port {
    /// Outcome sign; transmitted is "+".
    pub fn sign(self) -> f64 {
        match self {
            Port::Transmitted => 1.0,
            Port::Reflected => -1.0,
        }
    }

    pub const BOTH: [Port; 2] = [Port::Transmitted, Port::Reflected];
}

/// HWP + PBS analyzer: `angle` is the linear polarization sent to the
/// transmitted port; the reflected port receives the orthogonal one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyzerSetting {
    pub angle: AngleDeg,
    pub port: Port,
}

impl AnalyzerSetting {
    pub fn new(angle: impl Into<AngleDeg>, port: Port) -> Self {
        AnalyzerSetting { angle: angle.into(), port }
    }

    pub fn transmitted(angle: impl Into<AngleDeg>) -> Self {
        Self::new(angle, Port::Transmitted)
    }

    /// The linear polarization this setting projects onto.
    pub fn projected_angle(&self) -> AngleDeg {
        match self.port {
            Port::Transmitted => self.angle,
            Port::Reflected => AngleDeg::new(self.angle.degrees() + 90.0),
        }
    }

    pub fn ket(&self) -> Ket2 {
        kets::linear(self.projected_angle())
    }

    /// Two settings are equivalent when they project onto the same state.
    pub fn same_projector(&self, other: &AnalyzerSetting) -> bool {
        self.projected_angle().distance(other.projected_angle()) < 1e-9
    }
}

/// Density operator of two polarization qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoQubitState {
    rho: Density,
}

impl TwoQubitState {
    /// Validates Hermiticity, unit trace and positivity.
    pub fn from_density(rho: Density) -> Result<Self> {
        let herm = (rho - rho.adjoint()).norm();
        if herm > STATE_TOL {
            return Err(Error::Domain(format!("density is not Hermitian ({herm:e})")));
        }
        let tr = rho.trace();
        if (tr.re - 1.0).abs() > STATE_TOL || tr.im.abs() > STATE_TOL {
            return Err(Error::Domain(format!("trace {tr} != 1")));
        }
        let s = TwoQubitState { rho };
        let min = s.min_eigenvalue();
        if min < -PSD_TOL {
            return Err(Error::Domain(format!("negative eigenvalue {min:e}")));
        }
        Ok(s)
    }

    /// For reconstructions that may not be physical.
    pub fn from_density_unchecked(rho: Density) -> Self {
        TwoQubitState { rho }
    }

    pub fn from_pure(psi: &Vector4<C64>) -> Self {
        let psi = psi / c(psi.norm());
        TwoQubitState { rho: psi * psi.adjoint() }
    }

    pub fn maximally_mixed() -> Self {
        TwoQubitState { rho: Density::identity() * c(0.25) }
    }

    pub fn density(&self) -> &Density {
        &self.rho
    }

    pub fn element(&self, row: usize, col: usize) -> C64 {
        self.rho[(row, col)]
    }

    pub fn trace(&self) -> C64 {
        self.rho.trace()
    }

    pub fn purity(&self) -> f64 {
        (self.rho * self.rho).trace().re
    }

    /// Ascending real eigenvalues of the Hermitian part.
    pub fn eigenvalues(&self) -> [f64; 4] {
        let herm = (self.rho + self.rho.adjoint()) * c(0.5);
        let eig = SymmetricEigen::new(herm);
        let mut v = [0.0; 4];
        for (k, e) in eig.eigenvalues.iter().enumerate() {
            v[k] = *e;
        }
        v.sort_by(|a, b| a.total_cmp(b));
        v
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn is_physical(&self) -> bool {
        self.min_eigenvalue() >= -PSD_TOL
    }

    /// Frobenius distance between density operators.
    pub fn distance(&self, other: &TwoQubitState) -> f64 {
        (self.rho - other.rho).norm()
    }

    /// ⟨s,i|ρ|s,i⟩ for arbitrary single-photon kets.
    pub fn ket_probability(&self, signal: &Ket2, idler: &Ket2) -> f64 {
        let k = kron_ket(signal, idler);
        (k.adjoint() * self.rho * k)[(0, 0)].re
    }
}

/// (|HV⟩ + |VH⟩)/√2, equivalently (|DD⟩ − |AA⟩)/√2.
pub fn make_psi_plus() -> TwoQubitState {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    TwoQubitState::from_pure(&Vector4::new(c(0.0), c(r), c(r), c(0.0)))
}

/// Depolarizing mixture v·ρ + (1−v)·I/4.
pub fn werner_mix(rho: &TwoQubitState, v: f64) -> Result<TwoQubitState> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Domain(format!("visibility {v} outside [0, 1]")));
    }
    Ok(TwoQubitState { rho: rho.rho * c(v) + Density::identity() * c((1.0 - v) / 4.0) })
}

/// (U_s ⊗ U_i) ρ (U_s ⊗ U_i)†.
pub fn apply_local(rho: &TwoQubitState, u_signal: &LocalUnitary, u_idler: &LocalUnitary) -> TwoQubitState {
    let u = kron(&u_signal.0, &u_idler.0);
    TwoQubitState { rho: u * rho.rho * u.adjoint() }
}

/// Born-rule probability of the joint outcome Tr[(P_s ⊗ P_i) ρ].
pub fn projection_probability(rho: &TwoQubitState, s: &AnalyzerSetting, i: &AnalyzerSetting) -> f64 {
    rho.ket_probability(&s.ket(), &i.ket()).clamp(0.0, 1.0)
}

/// P(++) + P(−−) − P(+−) − P(−+) with transmitted as "+".
pub fn correlation_e(rho: &TwoQubitState, a: AngleDeg, b: AngleDeg) -> f64 {
    let mut e = 0.0;
    for ps in Port::BOTH {
        for pi in Port::BOTH {
            let p = projection_probability(rho, &AnalyzerSetting::new(a, ps), &AnalyzerSetting::new(b, pi));
            e += ps.sign() * pi.sign() * p;
        }
    }
    e
}

/// ⟨Ψ|ρ|Ψ⟩ for a pure target.
pub fn fidelity(rho: &TwoQubitState, target: &TwoQubitState) -> Result<f64> {
    let purity = target.purity();
    if (purity - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("target is not pure (Tr ρ² = {purity})")));
    }
    Ok((rho.rho * target.rho).trace().re.clamp(0.0, 1.0))
}

/// Haar-random SU(2) element (uniform unit quaternion).
pub fn random_unitary<R: rand::Rng + ?Sized>(rng: &mut R) -> LocalUnitary {
    use rand_distr::{Distribution, StandardNormal};
    let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    LocalUnitary(Jones::new(C64::new(w, z), C64::new(y, x), C64::new(-y, x), C64::new(w, -z)))
}
