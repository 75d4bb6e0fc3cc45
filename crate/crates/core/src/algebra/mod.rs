//! Complex linear algebra for single-photon (2-dim) and two-photon (4-dim)
//! polarization states.
//!
//! Basis conventions, fixed crate-wide:
//!
//! - single photon: (TE, TM), with TE ≡ H ≡ |0⟩ and TM ≡ V ≡ |1⟩;
//! - two photons: (TE,TE), (TE,TM), (TM,TE), (TM,TM), signal photon first.
//!
//! A positive rotation angle turns TE toward TM.

mod eigen;

pub use eigen::{hermitian_eigen, psd_sqrt, HermitianEigen};

/// Largest element modulus of a complex matrix.
pub fn max_modulus<R: nalgebra::Dim, C: nalgebra::Dim, S: nalgebra::RawStorage<C64, R, C>>(m: &nalgebra::Matrix<C64, R, C, S>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use thiserror::Error;

pub type C64 = Complex64;

/// Label of the two-photon basis order, stored alongside serialized matrices.
pub const BASIS_LABEL: &str = "TE,TE|TE,TM|TM,TE|TM,TM";

pub const HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const MIN_EIGENVALUE_TOL: f64 = -1e-9;
pub const UNITARY_TOL: f64 = 1e-10;
pub const NORM_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgebraError {
    #[error("state is not normalized (norm {norm})")]
    NotNormalized { norm: f64 },
    #[error("operator is not unitary (max |U†U - I| = {deviation:e})")]
    NotUnitary { deviation: f64 },
    #[error("not a valid density matrix: {0}")]
    InvalidDensity(String),
    #[error("unknown polarization label '{0}'")]
    UnknownLabel(String),
}

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Polarization of a single photon or classical field in the (TE, TM) basis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JonesVector(pub Vector2<C64>);

impl JonesVector {
    pub fn new(te: C64, tm: C64) -> Self {
        Self(Vector2::new(te, tm))
    }

    /// TE (horizontal).
    pub fn h() -> Self {
        Self::new(c(1.0), c(0.0))
    }

    /// TM (vertical).
    pub fn v() -> Self {
        Self::new(c(0.0), c(1.0))
    }

    /// +45° linear, (H + V)/√2.
    pub fn d() -> Self {
        Self::new(c(FRAC_1_SQRT_2), c(FRAC_1_SQRT_2))
    }

    /// −45° linear, (H − V)/√2.
    pub fn a() -> Self {
        Self::new(c(FRAC_1_SQRT_2), c(-FRAC_1_SQRT_2))
    }

    /// (H − iV)/√2.
    pub fn r() -> Self {
        Self::new(c(FRAC_1_SQRT_2), C64::new(0.0, -FRAC_1_SQRT_2))
    }

    /// (H + iV)/√2.
    pub fn l() -> Self {
        Self::new(c(FRAC_1_SQRT_2), C64::new(0.0, FRAC_1_SQRT_2))
    }

    /// Linear polarization at `angle_deg` from TE toward TM.
    pub fn linear(angle_deg: f64) -> Self {
        let t = angle_deg.to_radians();
        Self::new(c(t.cos()), c(t.sin()))
    }

    /// One of `H`, `V`, `D`, `A`, `R`, `L` (case-insensitive).
    pub fn from_label(label: char) -> Result<Self, AlgebraError> {
        match label.to_ascii_uppercase() {
            'H' => Ok(Self::h()),
            'V' => Ok(Self::v()),
            'D' => Ok(Self::d()),
            'A' => Ok(Self::a()),
            'R' => Ok(Self::r()),
            'L' => Ok(Self::l()),
            other => Err(AlgebraError::UnknownLabel(other.to_string())),
        }
    }

    pub fn te(&self) -> C64 {
        self.0[0]
    }

    pub fn tm(&self) -> C64 {
        self.0[1]
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn power_te(&self) -> f64 {
        self.0[0].norm_sqr()
    }

    pub fn power_tm(&self) -> f64 {
        self.0[1].norm_sqr()
    }

    pub fn normalized(&self) -> Result<Self, AlgebraError> {
        let n = self.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(AlgebraError::NotNormalized { norm: n });
        }
        Ok(Self(self.0 / c(n)))
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= NORM_TOL
    }

    /// |⟨a|b⟩|.
    pub fn overlap(&self, other: &Self) -> f64 {
        self.0.dotc(&other.0).norm()
    }

    /// Equality up to a global phase: |⟨a|b⟩| = 1 within 1e-9 for unit vectors.
    pub fn same_up_to_phase(&self, other: &Self) -> bool {
        (self.overlap(other) - 1.0).abs() <= NORM_TOL
    }
}

/// Serialized form: a named polarization, a linear angle, or raw components.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum JonesRepr {
    Named(String),
    Linear { linear_deg: f64 },
    Components { te: [f64; 2], tm: [f64; 2] },
}

impl Serialize for JonesVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        JonesRepr::Components {
            te: [self.te().re, self.te().im],
            tm: [self.tm().re, self.tm().im],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for JonesVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match JonesRepr::deserialize(d)? {
            JonesRepr::Named(name) => {
                let mut chars = name.chars();
                match (chars.next(), chars.next()) {
                    (Some(ch), None) => JonesVector::from_label(ch).map_err(serde::de::Error::custom),
                    _ => Err(serde::de::Error::custom(format!(
                        "polarization must be one of H, V, D, A, R, L, got '{name}'"
                    ))),
                }
            }
            JonesRepr::Linear { linear_deg } => Ok(JonesVector::linear(linear_deg)),
            JonesRepr::Components { te, tm } => Ok(JonesVector::new(C64::new(te[0], te[1]), C64::new(tm[0], tm[1]))),
        }
    }
}

/// 2×2 complex operator acting on one photon.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Operator2(pub Matrix2<C64>);

impl Operator2 {
    pub fn identity() -> Self {
        Self(Matrix2::identity())
    }

    pub fn diagonal(te: C64, tm: C64) -> Self {
        Self(Matrix2::new(te, c(0.0), c(0.0), tm))
    }

    pub fn apply(&self, v: &JonesVector) -> JonesVector {
        JonesVector(self.0 * v.0)
    }

    pub fn compose(&self, next: &Operator2) -> Operator2 {
        // `next` acts after `self`.
        Operator2(next.0 * self.0)
    }

    pub fn scaled(&self, factor: f64) -> Operator2 {
        Operator2(self.0 * c(factor))
    }

    pub fn unitarity_deviation(&self) -> f64 {
        max_modulus(&(self.0.adjoint() * self.0 - Matrix2::identity()))
    }

    pub fn is_unitary(&self) -> bool {
        self.unitarity_deviation() <= UNITARY_TOL
    }
}

/// 4×4 complex operator on the two-photon space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Operator4(pub Matrix4<C64>);

impl Operator4 {
    pub fn identity() -> Self {
        Self(Matrix4::identity())
    }

    pub fn apply(&self, psi: &Vector4<C64>) -> Vector4<C64> {
        self.0 * psi
    }

    pub fn unitarity_deviation(&self) -> f64 {
        max_modulus(&(self.0.adjoint() * self.0 - Matrix4::identity()))
    }

    pub fn is_unitary(&self) -> bool {
        self.unitarity_deviation() <= UNITARY_TOL
    }
}

/// Real rotation by `theta_deg`; positive angles turn TE toward TM.
pub fn rotator_matrix(theta_deg: f64) -> Operator2 {
    let t = theta_deg.to_radians();
    let (s, co) = t.sin_cos();
    Operator2(Matrix2::new(c(co), c(-s), c(s), c(co)))
}

/// Linear retarder with retardance `retardance_deg` whose fast axis sits at
/// `fast_axis_deg` from TE: `R(θ) · diag(1, e^{iΓ}) · R(−θ)`.
pub fn waveplate_matrix(retardance_deg: f64, fast_axis_deg: f64) -> Operator2 {
    let r = rotator_matrix(fast_axis_deg).0;
    let rinv = rotator_matrix(-fast_axis_deg).0;
    let retarder = Matrix2::new(c(1.0), c(0.0), c(0.0), C64::from_polar(1.0, retardance_deg.to_radians()));
    Operator2(r * retarder * rinv)
}

pub fn half_wave_plate(fast_axis_deg: f64) -> Operator2 {
    waveplate_matrix(180.0, fast_axis_deg)
}

pub fn quarter_wave_plate(fast_axis_deg: f64) -> Operator2 {
    waveplate_matrix(90.0, fast_axis_deg)
}

/// Kronecker product `a ⊗ b` with `a` on the signal photon.
pub fn tensor(a: &Operator2, b: &Operator2) -> Operator4 {
    Operator4(a.0.kronecker(&b.0).fixed_view::<4, 4>(0, 0).into_owned())
}

/// Product ket `a ⊗ b` (signal first).
pub fn tensor_ket(a: &JonesVector, b: &JonesVector) -> Vector4<C64> {
    Vector4::new(a.te() * b.te(), a.te() * b.tm(), a.tm() * b.te(), a.tm() * b.tm())
}

/// Two-photon pure state in the (TE,TE), (TE,TM), (TM,TE), (TM,TM) basis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoPhotonKet(Vector4<C64>);

impl TwoPhotonKet {
    /// Normalizes `amplitudes`; fails on a zero or non-finite vector.
    pub fn new(amplitudes: Vector4<C64>) -> Result<Self, AlgebraError> {
        let n = amplitudes.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(AlgebraError::NotNormalized { norm: n });
        }
        Ok(Self(amplitudes / c(n)))
    }

    /// Wraps amplitudes that must already be unit norm.
    pub fn from_normalized(amplitudes: Vector4<C64>) -> Result<Self, AlgebraError> {
        let n = amplitudes.norm();
        if (n - 1.0).abs() > NORM_TOL {
            return Err(AlgebraError::NotNormalized { norm: n });
        }
        Ok(Self(amplitudes))
    }

    pub fn basis(index: usize) -> Self {
        let mut v = Vector4::zeros();
        v[index] = c(1.0);
        Self(v)
    }

    pub fn product(signal: &JonesVector, idler: &JonesVector) -> Result<Self, AlgebraError> {
        Self::new(tensor_ket(signal, idler))
    }

    /// (|TE,TE⟩ + e^{−iϕ}|TM,TM⟩)/√2.
    pub fn entangled(phi_rad: f64) -> Self {
        Self(Vector4::new(c(FRAC_1_SQRT_2), c(0.0), c(0.0), C64::from_polar(FRAC_1_SQRT_2, -phi_rad)))
    }

    /// |Φ+⟩ = (|TE,TE⟩ + |TM,TM⟩)/√2.
    pub fn phi_plus() -> Self {
        Self::entangled(0.0)
    }

    pub fn amplitudes(&self) -> &Vector4<C64> {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    /// ⟨self|other⟩.
    pub fn inner(&self, other: &TwoPhotonKet) -> C64 {
        self.0.dotc(&other.0)
    }

    pub fn same_up_to_phase(&self, other: &TwoPhotonKet) -> bool {
        (self.inner(other).norm() - 1.0).abs() <= NORM_TOL
    }
}

/// Two-photon polarization density matrix.
///
/// Constructed only through validating functions, so every value is
/// Hermitian, has unit trace and is positive semidefinite (within the crate
/// tolerances).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DensityMatrixJson", into = "DensityMatrixJson")]
pub struct DensityMatrix4(Matrix4<C64>);

impl DensityMatrix4 {
    /// Validates `m` against the density-matrix invariants.
    pub fn try_new(m: Matrix4<C64>) -> Result<Self, AlgebraError> {
        let herm = max_modulus(&(m - m.adjoint()));
        if !(herm <= HERMITIAN_TOL) {
            return Err(AlgebraError::InvalidDensity(format!("not Hermitian (deviation {herm:e})")));
        }
        let tr = m.trace();
        if !((tr.re - 1.0).abs() <= TRACE_TOL && tr.im.abs() <= TRACE_TOL) {
            return Err(AlgebraError::InvalidDensity(format!("trace {tr} != 1")));
        }
        let min = hermitian_eigen(&m).min_value();
        if min < MIN_EIGENVALUE_TOL {
            return Err(AlgebraError::InvalidDensity(format!("negative eigenvalue {min:e}")));
        }
        Ok(Self(m))
    }

    /// Symmetrizes and trace-normalizes `m` before validating. For matrices
    /// that are PSD up to round-off, e.g. ones built as `T†T`.
    pub fn from_psd(m: Matrix4<C64>) -> Result<Self, AlgebraError> {
        let h = (m + m.adjoint()) * c(0.5);
        let tr = h.trace().re;
        if !(tr.is_finite() && tr > 0.0) {
            return Err(AlgebraError::InvalidDensity(format!("trace {tr} is not positive")));
        }
        Self::try_new(h / c(tr))
    }

    /// |ψ⟩⟨ψ|; `psi` must be unit norm within 1e-9.
    pub fn from_ket(psi: &TwoPhotonKet) -> Result<Self, AlgebraError> {
        state_to_density(psi)
    }

    pub fn maximally_mixed() -> Self {
        Self(Matrix4::identity() * c(0.25))
    }

    /// Werner state `p |Φ+⟩⟨Φ+| + (1 − p) I/4`.
    pub fn werner(p: f64) -> Result<Self, AlgebraError> {
        let bell = Self::from_ket(&TwoPhotonKet::phi_plus())?;
        Self::try_new(bell.0 * c(p) + Matrix4::identity() * c((1.0 - p) / 4.0))
    }

    pub fn matrix(&self) -> &Matrix4<C64> {
        &self.0
    }

    pub fn element(&self, row: usize, col: usize) -> C64 {
        self.0[(row, col)]
    }

    pub fn populations(&self) -> [f64; 4] {
        [self.0[(0, 0)].re, self.0[(1, 1)].re, self.0[(2, 2)].re, self.0[(3, 3)].re]
    }

    pub fn eigen(&self) -> HermitianEigen<4> {
        hermitian_eigen(&self.0)
    }

    /// ⟨ψ|ρ|ψ⟩ for an arbitrary (not necessarily normalized) vector.
    pub fn expectation(&self, psi: &Vector4<C64>) -> f64 {
        psi.dotc(&(self.0 * psi)).re
    }

    /// `O ρ O†` without re-validation; callers guarantee positivity and
    /// trace preservation.
    pub(crate) fn conjugated_unchecked(&self, op: &Operator4) -> Matrix4<C64> {
        op.0 * self.0 * op.0.adjoint()
    }

    /// Reduced single-photon state of the signal (`0`) or idler (`1`) photon.
    pub fn reduced(&self, photon: usize) -> Matrix2<C64> {
        let mut out = Matrix2::zeros();
        for a in 0..2 {
            for b in 0..2 {
                let mut acc = c(0.0);
                for k in 0..2 {
                    let (row, col) = if photon == 0 { (2 * a + k, 2 * b + k) } else { (2 * k + a, 2 * k + b) };
                    acc += self.0[(row, col)];
                }
                out[(a, b)] = acc;
            }
        }
        out
    }

    /// Largest element-wise deviation from another matrix.
    pub fn max_abs_diff(&self, other: &Matrix4<C64>) -> f64 {
        max_modulus(&(self.0 - other))
    }
}

impl fmt::Display for DensityMatrix4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..4 {
            for j in 0..4 {
                let z = self.0[(i, j)];
                write!(f, "{:>9.5}{:+.5}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// JSON form: `{"basis": "...", "data": [[re, im], ...]}`, 16 pairs in
/// row-major order.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityMatrixJson {
    pub basis: String,
    pub data: Vec<[f64; 2]>,
}

impl From<DensityMatrix4> for DensityMatrixJson {
    fn from(rho: DensityMatrix4) -> Self {
        Self { basis: BASIS_LABEL.to_string(), data: matrix_to_pairs(&rho.0) }
    }
}

impl TryFrom<DensityMatrixJson> for DensityMatrix4 {
    type Error = AlgebraError;

    fn try_from(j: DensityMatrixJson) -> Result<Self, Self::Error> {
        if j.basis != BASIS_LABEL {
            return Err(AlgebraError::InvalidDensity(format!("basis '{}' != '{BASIS_LABEL}'", j.basis)));
        }
        if j.data.len() != 16 {
            return Err(AlgebraError::InvalidDensity(format!("expected 16 elements, got {}", j.data.len())));
        }
        let m = Matrix4::from_fn(|r, col| {
            let [re, im] = j.data[4 * r + col];
            C64::new(re, im)
        });
        DensityMatrix4::try_new(m)
    }
}

/// Row-major `[re, im]` pairs of a 4×4 matrix.
pub fn matrix_to_pairs(m: &Matrix4<C64>) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(16);
    for r in 0..4 {
        for col in 0..4 {
            out.push([m[(r, col)].re, m[(r, col)].im]);
        }
    }
    out
}

/// |ψ⟩⟨ψ| for a unit-norm ket.
pub fn state_to_density(psi: &TwoPhotonKet) -> Result<DensityMatrix4, AlgebraError> {
    let n = psi.norm();
    if (n - 1.0).abs() > NORM_TOL {
        return Err(AlgebraError::NotNormalized { norm: n });
    }
    let v = psi.amplitudes();
    DensityMatrix4::try_new(v * v.adjoint())
}

/// `(U_s ⊗ U_i) ρ (U_s ⊗ U_i)†` for unitary `us`, `ui`.
pub fn apply_local(us: &Operator2, ui: &Operator2, rho: &DensityMatrix4) -> Result<DensityMatrix4, AlgebraError> {
    for op in [us, ui] {
        let deviation = op.unitarity_deviation();
        if deviation > UNITARY_TOL {
            return Err(AlgebraError::NotUnitary { deviation });
        }
    }
    let u = tensor(us, ui);
    DensityMatrix4::from_psd(rho.conjugated_unchecked(&u))
}

/// Columns are the magic Bell basis vectors, TE ≡ |0⟩, TM ≡ |1⟩:
/// (|00⟩+|11⟩)/√2, i(|00⟩−|11⟩)/√2, i(|01⟩+|10⟩)/√2, (|01⟩−|10⟩)/√2.
pub fn magic_basis() -> Matrix4<C64> {
    let h = c(FRAC_1_SQRT_2);
    let ih = C64::new(0.0, FRAC_1_SQRT_2);
    let z = c(0.0);
    #[rustfmt::skip]
    let m = Matrix4::new(
        h,  ih,  z,   z,
        z,  z,   ih,  h,
        z,  z,   ih, -h,
        h, -ih,  z,   z,
    );
    m
}

/// ρ expressed in the magic basis, `M† ρ M`.
pub fn magic_basis_transform(rho: &DensityMatrix4) -> Matrix4<C64> {
    let m = magic_basis();
    m.adjoint() * rho.0 * m
}

/// Inverse of [`magic_basis_transform`] for an arbitrary matrix.
pub fn from_magic_basis(m_rho: &Matrix4<C64>) -> Matrix4<C64> {
    let m = magic_basis();
    m * m_rho * m.adjoint()
}

/// σ_y ⊗ σ_y in the computational basis.
pub fn sigma_y_sigma_y() -> Matrix4<C64> {
    let sy = Matrix2::new(c(0.0), C64::new(0.0, -1.0), C64::new(0.0, 1.0), c(0.0));
    sy.kronecker(&sy).fixed_view::<4, 4>(0, 0).into_owned()
}
