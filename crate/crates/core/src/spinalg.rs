//! Closed-form 2×2 spin algebra: Pauli Hamiltonians, eigenprojectors,
//! operator norms and Bloch-vector conversions.

use nalgebra::{DMatrix, Matrix2, SMatrix, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, C64};

pub type Mat2 = Matrix2<C64>;
/// Square complex matrix of compile-time size.
pub type CMat<const D: usize> = SMatrix<C64, D, D>;

/// Relative magnitude below which the effective field counts as vanished.
pub const FIELD_EPS_REL: f64 = 1e-9;
/// Half-overlap band inside which the sign choice is refused.
pub const ALIGN_EPS: f64 = 1e-6;

pub fn field_epsilon(scale: f64) -> f64 {
    FIELD_EPS_REL * scale.abs()
}

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn pauli(self) -> Mat2 {
        match self {
            Axis::X => sigma_x(),
            Axis::Y => sigma_y(),
            Axis::Z => sigma_z(),
        }
    }
}

/// Which eigenstate of `H(b)` is tracked: `Plus` is the state along `+b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// Rotating-frame effective field in rad/s.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EffectiveField {
    pub bx: f64,
    pub by: f64,
    pub bz: f64,
}

impl EffectiveField {
    pub const fn new(bx: f64, by: f64, bz: f64) -> Self {
        Self { bx, by, bz }
    }

    pub fn norm(&self) -> f64 {
        (self.bx * self.bx + self.by * self.by + self.bz * self.bz).sqrt()
    }

    pub fn component(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.bx,
            Axis::Y => self.by,
            Axis::Z => self.bz,
        }
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.bx, self.by, self.bz)
    }

    pub fn is_finite(&self) -> bool {
        self.bx.is_finite() && self.by.is_finite() && self.bz.is_finite()
    }

    /// `b·σ`
    pub fn dot_sigma(&self) -> Mat2 {
        Mat2::new(
            C64::new(self.bz, 0.0),
            C64::new(self.bx, -self.by),
            C64::new(self.bx, self.by),
            C64::new(-self.bz, 0.0),
        )
    }

    pub(crate) fn checked_norm(&self, eps: f64) -> Result<f64> {
        let n = self.norm();
        if !(n > eps) {
            return Err(Error::DegenerateField {
                magnitude: n,
                t: None,
            });
        }
        Ok(n)
    }
}

/// Pure spin-1/2 state `c_up |↑⟩ + c_down |↓⟩`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinState {
    amplitudes: [C64; 2],
}

impl SpinState {
    pub fn new(up: C64, down: C64) -> Result<Self> {
        let n = up.norm_sqr() + down.norm_sqr();
        if !n.is_finite() || (n - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("spin state norm² {n} is not 1")));
        }
        Ok(Self {
            amplitudes: [up, down],
        })
    }

    /// Normalizes the given amplitudes.
    pub fn normalized(up: C64, down: C64) -> Result<Self> {
        let n = (up.norm_sqr() + down.norm_sqr()).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::domain("cannot normalize a zero spin state"));
        }
        Ok(Self {
            amplitudes: [up / n, down / n],
        })
    }

    pub fn up() -> Self {
        Self {
            amplitudes: [ONE, ZERO],
        }
    }

    pub fn down() -> Self {
        Self {
            amplitudes: [ZERO, ONE],
        }
    }

    /// State with Bloch vector `(sinθ cosφ, sinθ sinφ, cosθ)`.
    pub fn from_bloch_angles(theta: f64, phi: f64) -> Self {
        let (s, c) = (theta / 2.0).sin_cos();
        Self {
            amplitudes: [C64::new(c, 0.0), C64::from_polar(s, phi)],
        }
    }

    /// State whose Bloch vector is the given unit vector.
    pub fn from_bloch_vector(n: [f64; 3]) -> Result<Self> {
        let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("Bloch vector norm {norm} is not 1")));
        }
        let theta = (n[2] / norm).clamp(-1.0, 1.0).acos();
        let phi = n[1].atan2(n[0]);
        Ok(Self::from_bloch_angles(theta, phi))
    }

    pub fn amplitudes(&self) -> [C64; 2] {
        self.amplitudes
    }

    pub fn ket(&self) -> Vector2<C64> {
        Vector2::new(self.amplitudes[0], self.amplitudes[1])
    }

    pub fn with_global_phase(&self, phase: f64) -> Self {
        let p = C64::from_polar(1.0, phase);
        Self {
            amplitudes: [self.amplitudes[0] * p, self.amplitudes[1] * p],
        }
    }

    pub fn bloch_vector(&self) -> [f64; 3] {
        let [a, b] = self.amplitudes;
        let ab = a.conj() * b;
        [2.0 * ab.re, 2.0 * ab.im, a.norm_sqr() - b.norm_sqr()]
    }
}

pub fn identity2() -> Mat2 {
    Mat2::identity()
}

pub fn sigma_x() -> Mat2 {
    Mat2::new(ZERO, ONE, ONE, ZERO)
}

pub fn sigma_y() -> Mat2 {
    Mat2::new(ZERO, -I, I, ZERO)
}

pub fn sigma_z() -> Mat2 {
    Mat2::new(ONE, ZERO, ZERO, -ONE)
}

/// `H(b) = −b·σ/2`.
pub fn pauli_hamiltonian(b: &EffectiveField) -> Mat2 {
    b.dot_sigma() * C64::new(-0.5, 0.0)
}

/// Projector `(𝟙 ± b̂·σ)/2` onto the eigenstate along `±b`.
pub fn eigenprojector(b: &EffectiveField, sign: Sign, eps: f64) -> Result<Mat2> {
    let n = b.checked_norm(eps)?;
    let s = sign.value() / n;
    Ok((Mat2::identity() + b.dot_sigma() * C64::new(s, 0.0)) * C64::new(0.5, 0.0))
}

/// `∂P/∂b_α = ±(σ_α − b_α (b·σ)/|b|²)/(2|b|)`.
pub fn eigenprojector_partial(
    b: &EffectiveField,
    sign: Sign,
    axis: Axis,
    eps: f64,
) -> Result<Mat2> {
    let n = b.checked_norm(eps)?;
    let ba = b.component(axis);
    let m = axis.pauli() - b.dot_sigma() * C64::new(ba / (n * n), 0.0);
    Ok(m * C64::new(sign.value() / (2.0 * n), 0.0))
}

/// Picks the eigenstate of `H(b0)` that `psi0` starts in, returning the sign
/// and the overlap `⟨ψ₀|P_s|ψ₀⟩`.
pub fn select_sign(b0: &EffectiveField, psi0: &SpinState, eps: f64) -> Result<(Sign, f64)> {
    let n = b0.checked_norm(eps)?;
    let m = psi0.bloch_vector();
    let proj = (b0.bx * m[0] + b0.by * m[1] + b0.bz * m[2]) / n;
    let plus = 0.5 * (1.0 + proj);
    let minus = 0.5 * (1.0 - proj);
    if (plus - 0.5).abs() < ALIGN_EPS && (minus - 0.5).abs() < ALIGN_EPS {
        return Err(Error::AmbiguousAlignment {
            overlap_plus: plus,
            overlap_minus: minus,
        });
    }
    Ok(if plus >= minus {
        (Sign::Plus, plus)
    } else {
        (Sign::Minus, minus)
    })
}

/// Eigenvalues of a 2×2 Hermitian matrix, ascending.
pub fn hermitian_eigenvalues2(a: &Mat2) -> [f64; 2] {
    let p = a[(0, 0)].re;
    let q = a[(1, 1)].re;
    let c = a[(0, 1)];
    let mean = 0.5 * (p + q);
    let r = (0.25 * (p - q) * (p - q) + c.norm_sqr()).sqrt();
    [mean - r, mean + r]
}

/// Largest absolute eigenvalue of a Hermitian matrix (spectral norm).
pub fn operator_norm(a: &DMatrix<C64>) -> f64 {
    debug_assert!(a.is_square());
    debug_assert!(is_hermitian(a, 1e-9 * (1.0 + a.norm())));
    match a.nrows() {
        0 => 0.0,
        1 => a[(0, 0)].re.abs(),
        2 => {
            let m = Mat2::new(a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]);
            let [lo, hi] = hermitian_eigenvalues2(&m);
            lo.abs().max(hi.abs())
        }
        _ => a
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs())),
    }
}

pub fn operator_norm_fixed<const D: usize>(a: &CMat<D>) -> f64 {
    operator_norm(&DMatrix::from_column_slice(D, D, a.as_slice()))
}

pub fn is_hermitian(a: &DMatrix<C64>, tol: f64) -> bool {
    a.is_square() && (a - a.adjoint()).norm() <= tol
}

/// `(⟨σx⟩, ⟨σy⟩, ⟨σz⟩)` of a 2×2 density matrix.
pub fn bloch_vector_density(rho: &Mat2) -> [f64; 3] {
    [
        2.0 * rho[(0, 1)].re,
        -2.0 * rho[(0, 1)].im,
        (rho[(0, 0)] - rho[(1, 1)]).re,
    ]
}

pub fn density_from_state(psi: &SpinState) -> Mat2 {
    let k = psi.ket();
    k * k.adjoint()
}

/// Kronecker product of dense complex matrices.
pub fn kron(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a.kronecker(b)
}

/// `op` acting on site `site` of `n` spins (site 0 is the most significant
/// tensor factor).
pub fn site_operator(op: &Mat2, site: usize, n: usize) -> DMatrix<C64> {
    let id = DMatrix::<C64>::identity(2, 2);
    let op = DMatrix::from_column_slice(2, 2, op.as_slice());
    (0..n).fold(DMatrix::<C64>::identity(1, 1), |acc, j| {
        if j == site {
            acc.kronecker(&op)
        } else {
            acc.kronecker(&id)
        }
    })
}

/// Secular like-spin dipolar operator `2σzσz − σxσx − σyσy` on sites j, k.
pub fn secular_dipolar(j: usize, k: usize, n: usize) -> DMatrix<C64> {
    let zz = site_operator(&sigma_z(), j, n) * site_operator(&sigma_z(), k, n);
    let xx = site_operator(&sigma_x(), j, n) * site_operator(&sigma_x(), k, n);
    let yy = site_operator(&sigma_y(), j, n) * site_operator(&sigma_y(), k, n);
    zz * C64::new(2.0, 0.0) - xx - yy
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn close(a: &Mat2, b: &Mat2, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn axis_aligned_hamiltonian() {
        let h = pauli_hamiltonian(&EffectiveField::new(0.0, 0.0, 2.0));
        assert!(close(&h, &(sigma_z() * C64::new(-1.0, 0.0)), 0.0));
        let [lo, hi] = hermitian_eigenvalues2(&h);
        assert_eq!((lo, hi), (-1.0, 1.0));
    }

    #[test]
    fn zero_field_hamiltonian_is_zero() {
        assert_eq!(pauli_hamiltonian(&EffectiveField::default()), Mat2::zeros());
    }

    #[test]
    fn pythagorean_magnitude() {
        let h = pauli_hamiltonian(&EffectiveField::new(3.0, 0.0, 4.0));
        let [lo, hi] = hermitian_eigenvalues2(&h);
        assert_relative_eq!(lo, -2.5, epsilon = 1e-15);
        assert_relative_eq!(hi, 2.5, epsilon = 1e-15);
    }

    #[test]
    fn projector_examples() {
        let p = eigenprojector(&EffectiveField::new(0.0, 0.0, 1.0), Sign::Plus, 1e-9).unwrap();
        assert!(close(&p, &Mat2::new(ONE, ZERO, ZERO, ZERO), 0.0));
        let p = eigenprojector(&EffectiveField::new(1.0, 0.0, 0.0), Sign::Plus, 1e-9).unwrap();
        let half = C64::new(0.5, 0.0);
        assert!(close(&p, &Mat2::new(half, half, half, half), 1e-16));
        let err = eigenprojector(&EffectiveField::new(0.0, 0.0, 1e-30), Sign::Plus, 1e-9);
        assert!(matches!(err, Err(Error::DegenerateField { .. })));
    }

    #[test]
    fn sign_selection() {
        let up = SpinState::up();
        let (s, o) = select_sign(&EffectiveField::new(0.0, 0.0, 1.0), &up, 1e-9).unwrap();
        assert_eq!((s, o), (Sign::Plus, 1.0));
        let (s, o) = select_sign(&EffectiveField::new(0.0, 0.0, -1.0), &up, 1e-9).unwrap();
        assert_eq!((s, o), (Sign::Minus, 1.0));
        assert!(matches!(
            select_sign(&EffectiveField::new(1.0, 0.0, 0.0), &up, 1e-9),
            Err(Error::AmbiguousAlignment { .. })
        ));
    }

    #[test]
    fn operator_norm_examples() {
        let z = DMatrix::from_column_slice(2, 2, sigma_z().as_slice());
        assert_eq!(operator_norm(&z), 1.0);
        // spectrum {2, 2, 0, -4}
        let d = secular_dipolar(0, 1, 2);
        let mut eig: Vec<f64> = d.clone().symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (e, want) in eig.iter().zip([-4.0, 0.0, 2.0, 2.0]) {
            assert!((e - want).abs() < 1e-12);
        }
        assert_relative_eq!(operator_norm(&d), 4.0, epsilon = 1e-12);
        assert_eq!(operator_norm(&DMatrix::<C64>::zeros(4, 4)), 0.0);
    }

    #[test]
    fn bloch_vectors() {
        assert_eq!(SpinState::up().bloch_vector(), [0.0, 0.0, 1.0]);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let plus = SpinState::new(C64::new(s, 0.0), C64::new(s, 0.0)).unwrap();
        let v = plus.bloch_vector();
        assert_relative_eq!(v[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(v[2], 0.0, epsilon = 1e-15);
        let mixed = Mat2::identity() * C64::new(0.5, 0.0);
        assert_eq!(bloch_vector_density(&mixed), [0.0, 0.0, 0.0]);
        let rho = density_from_state(&plus);
        let w = bloch_vector_density(&rho);
        assert_relative_eq!(w[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn state_norm_is_checked() {
        assert!(SpinState::new(ONE, ONE).is_err());
    }

    fn field_strategy() -> impl Strategy<Value = EffectiveField> {
        (
            0.1f64..10.0,
            0.0f64..std::f64::consts::PI,
            0.0f64..std::f64::consts::TAU,
        )
            .prop_map(|(r, th, ph)| {
                EffectiveField::new(
                    r * th.sin() * ph.cos(),
                    r * th.sin() * ph.sin(),
                    r * th.cos(),
                )
            })
    }

    proptest! {
        #[test]
        fn projector_properties(b in field_strategy(), plus in any::<bool>()) {
            let sign = if plus { Sign::Plus } else { Sign::Minus };
            let p = eigenprojector(&b, sign, 1e-9).unwrap();
            prop_assert!(close(&(p * p), &p, 1e-12));
            prop_assert!(close(&p.adjoint(), &p, 1e-12));
            prop_assert!((p.trace() - ONE).norm() < 1e-12);
            let h = pauli_hamiltonian(&b);
            let e = C64::new(-sign.value() * b.norm() / 2.0, 0.0);
            prop_assert!(close(&(h * p), &(p * e), 1e-12 * (1.0 + b.norm())));
            let q = eigenprojector(&b, if plus { Sign::Minus } else { Sign::Plus }, 1e-9).unwrap();
            prop_assert!(close(&(p + q), &Mat2::identity(), 1e-15));
        }

        #[test]
        fn norm_is_absolutely_homogeneous(
            re in proptest::collection::vec(-3.0f64..3.0, 16),
            im in proptest::collection::vec(-3.0f64..3.0, 16),
            c in -5.0f64..5.0,
        ) {
            let a = DMatrix::from_fn(4, 4, |i, j| C64::new(re[4 * i + j], im[4 * i + j]));
            let h = (&a + a.adjoint()) * C64::new(0.5, 0.0);
            let lhs = operator_norm(&(&h * C64::new(c, 0.0)));
            let rhs = c.abs() * operator_norm(&h);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs));
        }

        #[test]
        fn bloch_angle_round_trip(theta in 0.0f64..std::f64::consts::PI, phi in -3.0f64..3.0) {
            let v = SpinState::from_bloch_angles(theta, phi).bloch_vector();
            let want = [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()];
            for k in 0..3 {
                prop_assert!((v[k] - want[k]).abs() < 1e-12);
            }
        }
    }
}
