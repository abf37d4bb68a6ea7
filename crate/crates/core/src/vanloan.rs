//! Block upper-triangular (Van Loan) propagation.
//!
//! The generator
//!
//! ```text
//!        ⎡ H   iP   0 ⎤
//! L = −i ⎢ 0   H   δH ⎥
//!        ⎣ 0   0    H ⎦
//! ```
//!
//! integrates to `V_t = [[U, D(iP), D(iP,δH)], [0, U, D(δH)], [0, 0, U]]`, so
//! one ODE solve yields the propagator together with the first-order Dyson
//! terms for the projector and the perturbation. Every matrix in this module
//! shares the shape of `V_t` (three equal diagonal blocks, zero strictly-lower
//! blocks), which [`BlockTri`] stores as four `D×D` blocks.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Mul};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ansatz::FieldFamily;
use crate::ode::{integrate, DenseOutput, SolverOptions, SolverStats};
use crate::spinalg::{
    eigenprojector, eigenprojector_partial, identity2, pauli_hamiltonian, Axis, CMat,
    EffectiveField, Mat2, Sign,
};
use crate::{Error, Result, C64};

const NEG_I: C64 = C64::new(0.0, -1.0);

/// `[[A, B, C], [0, A, E], [0, 0, A]]` with `D×D` blocks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockTri<const D: usize> {
    pub diag: CMat<D>,
    pub b12: CMat<D>,
    pub b23: CMat<D>,
    pub b13: CMat<D>,
}

impl<const D: usize> BlockTri<D> {
    pub fn zeros() -> Self {
        Self {
            diag: CMat::<D>::zeros(),
            b12: CMat::<D>::zeros(),
            b23: CMat::<D>::zeros(),
            b13: CMat::<D>::zeros(),
        }
    }

    pub fn identity() -> Self {
        Self {
            diag: CMat::<D>::identity(),
            ..Self::zeros()
        }
    }

    /// Analytic inverse by block back-substitution; only the `D×D` diagonal
    /// block is inverted (closed form for `D ≤ 4`).
    pub fn inverse(&self) -> Result<Self> {
        let di = self
            .diag
            .try_inverse()
            .ok_or_else(|| Error::domain("singular diagonal block"))?;
        let x = di * self.b12 * di;
        let y = di * self.b23 * di;
        Ok(Self {
            diag: di,
            b12: -x,
            b23: -y,
            b13: x * self.b23 * di - di * self.b13 * di,
        })
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            diag: self.diag * s,
            b12: self.b12 * s,
            b23: self.b23 * s,
            b13: self.b13 * s,
        }
    }

    /// `self += s·other`
    pub fn axpy(&mut self, s: f64, other: &Self) {
        let s = C64::new(s, 0.0);
        self.diag += other.diag * s;
        self.b12 += other.b12 * s;
        self.b23 += other.b23 * s;
        self.b13 += other.b13 * s;
    }

    pub fn norm(&self) -> f64 {
        // Frobenius norm of the full 3D×3D matrix.
        (3.0 * self.diag.norm_squared()
            + self.b12.norm_squared()
            + self.b23.norm_squared()
            + self.b13.norm_squared())
        .sqrt()
    }

    /// The full `3D×3D` matrix.
    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::<C64>::zeros(3 * D, 3 * D);
        for k in 0..3 {
            m.view_mut((k * D, k * D), (D, D)).copy_from(&self.diag);
        }
        m.view_mut((0, D), (D, D)).copy_from(&self.b12);
        m.view_mut((D, 2 * D), (D, D)).copy_from(&self.b23);
        m.view_mut((0, 2 * D), (D, D)).copy_from(&self.b13);
        m
    }

    /// Reads a block upper-triangular matrix, ignoring the lower blocks and
    /// the second and third diagonal copies.
    pub fn from_dense(m: &DMatrix<C64>) -> Self {
        let block = |r: usize, c: usize| CMat::<D>::from_fn(|i, j| m[(r * D + i, c * D + j)]);
        Self {
            diag: block(0, 0),
            b12: block(0, 1),
            b23: block(1, 2),
            b13: block(0, 2),
        }
    }
}

impl<const D: usize> Mul for BlockTri<D> {
    type Output = Self;

    fn mul(self, o: Self) -> Self {
        &self * &o
    }
}

impl<const D: usize> Mul<&BlockTri<D>> for &BlockTri<D> {
    type Output = BlockTri<D>;

    fn mul(self, o: &BlockTri<D>) -> BlockTri<D> {
        BlockTri {
            diag: self.diag * o.diag,
            b12: self.diag * o.b12 + self.b12 * o.diag,
            b23: self.diag * o.b23 + self.b23 * o.diag,
            b13: self.diag * o.b13 + self.b12 * o.b23 + self.b13 * o.diag,
        }
    }
}

impl<const D: usize> Add for BlockTri<D> {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            diag: self.diag + o.diag,
            b12: self.b12 + o.b12,
            b23: self.b23 + o.b23,
            b13: self.b13 + o.b13,
        }
    }
}

impl<const D: usize> AddAssign for BlockTri<D> {
    fn add_assign(&mut self, o: Self) {
        self.diag += o.diag;
        self.b12 += o.b12;
        self.b23 += o.b23;
        self.b13 += o.b13;
    }
}

/// How the single-spin Hamiltonian `H(b)` acts on the `D`-dimensional space
/// the Van Loan blocks live in.
pub trait SpinLift<const D: usize>: Send + Sync {
    fn hamiltonian(&self, b: &EffectiveField) -> CMat<D>;
    fn hamiltonian_partial(&self, axis: Axis) -> CMat<D>;
    fn projector(&self, b: &EffectiveField, sign: Sign, eps: f64) -> Result<CMat<D>>;
    fn projector_partial(
        &self,
        b: &EffectiveField,
        sign: Sign,
        axis: Axis,
        eps: f64,
    ) -> Result<CMat<D>>;
}

/// One spin: `H = −b·σ/2`.
#[derive(Clone, Copy, Debug, Default)]
pub struct SingleSpin;

impl SpinLift<2> for SingleSpin {
    fn hamiltonian(&self, b: &EffectiveField) -> Mat2 {
        pauli_hamiltonian(b)
    }

    fn hamiltonian_partial(&self, axis: Axis) -> Mat2 {
        axis.pauli() * C64::new(-0.5, 0.0)
    }

    fn projector(&self, b: &EffectiveField, sign: Sign, eps: f64) -> Result<Mat2> {
        eigenprojector(b, sign, eps)
    }

    fn projector_partial(
        &self,
        b: &EffectiveField,
        sign: Sign,
        axis: Axis,
        eps: f64,
    ) -> Result<Mat2> {
        eigenprojector_partial(b, sign, axis, eps)
    }
}

pub fn kron2(a: &Mat2, b: &Mat2) -> CMat<4> {
    CMat::<4>::from_fn(|i, j| a[(i / 2, j / 2)] * b[(i % 2, j % 2)])
}

/// Two identical uncoupled spins: `H⊗𝟙 + 𝟙⊗H`; the projector is `P⊗P`.
#[derive(Clone, Copy, Debug, Default)]
pub struct SpinPair;

impl SpinLift<4> for SpinPair {
    fn hamiltonian(&self, b: &EffectiveField) -> CMat<4> {
        let h = pauli_hamiltonian(b);
        kron2(&h, &identity2()) + kron2(&identity2(), &h)
    }

    fn hamiltonian_partial(&self, axis: Axis) -> CMat<4> {
        let d = axis.pauli() * C64::new(-0.5, 0.0);
        kron2(&d, &identity2()) + kron2(&identity2(), &d)
    }

    fn projector(&self, b: &EffectiveField, sign: Sign, eps: f64) -> Result<CMat<4>> {
        let p = eigenprojector(b, sign, eps)?;
        Ok(kron2(&p, &p))
    }

    fn projector_partial(
        &self,
        b: &EffectiveField,
        sign: Sign,
        axis: Axis,
        eps: f64,
    ) -> Result<CMat<4>> {
        let p = eigenprojector(b, sign, eps)?;
        let d = eigenprojector_partial(b, sign, axis, eps)?;
        Ok(kron2(&d, &p) + kron2(&p, &d))
    }
}

/// A perturbation Hamiltonian `δH(b, t)` on the `D`-dimensional space.
pub trait Perturbation<const D: usize>: Debug + Send + Sync {
    fn matrix(&self, b: &EffectiveField, t: f64) -> CMat<D>;

    /// `∂δH/∂b_α`, `None` when δH does not depend on the field.
    fn partial(&self, _b: &EffectiveField, _t: f64, _axis: Axis) -> Option<CMat<D>> {
        None
    }

    /// `‖δH(t)‖_op`
    fn op_norm(&self, b: &EffectiveField, t: f64) -> f64;

    /// `∂‖δH(t)‖_op/∂b_α`
    fn op_norm_partial(&self, _b: &EffectiveField, _t: f64, _axis: Axis) -> f64 {
        0.0
    }

    /// `Some(‖δH‖_op)` when the norm is time- and field-independent.
    fn constant_op_norm(&self) -> Option<f64> {
        None
    }
}

/// A fixed Hermitian matrix (σz, secular dipolar, custom).
#[derive(Clone, Debug, PartialEq)]
pub struct StaticPerturbation<const D: usize> {
    matrix: CMat<D>,
    norm: f64,
}

impl<const D: usize> StaticPerturbation<D> {
    pub fn new(matrix: CMat<D>) -> Result<Self> {
        if (matrix - matrix.adjoint()).norm() > 1e-12 * (1.0 + matrix.norm()) {
            return Err(Error::domain("perturbation matrix is not Hermitian"));
        }
        let norm = crate::spinalg::operator_norm_fixed(&matrix);
        Ok(Self { matrix, norm })
    }

    pub fn matrix_ref(&self) -> &CMat<D> {
        &self.matrix
    }
}

impl<const D: usize> Perturbation<D> for StaticPerturbation<D> {
    fn matrix(&self, _b: &EffectiveField, _t: f64) -> CMat<D> {
        self.matrix
    }

    fn op_norm(&self, _b: &EffectiveField, _t: f64) -> f64 {
        self.norm
    }

    fn constant_op_norm(&self) -> Option<f64> {
        Some(self.norm)
    }
}

/// `δH = b_x σ_x`: first-order sensitivity to a relative Rabi-field error.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RabiProportional;

impl Perturbation<2> for RabiProportional {
    fn matrix(&self, b: &EffectiveField, _t: f64) -> Mat2 {
        crate::spinalg::sigma_x() * C64::new(b.bx, 0.0)
    }

    fn partial(&self, _b: &EffectiveField, _t: f64, axis: Axis) -> Option<Mat2> {
        Some(match axis {
            Axis::X => crate::spinalg::sigma_x(),
            _ => Mat2::zeros(),
        })
    }

    fn op_norm(&self, b: &EffectiveField, _t: f64) -> f64 {
        b.bx.abs()
    }

    fn op_norm_partial(&self, b: &EffectiveField, _t: f64, axis: Axis) -> f64 {
        match axis {
            Axis::X => b.bx.signum(),
            _ => 0.0,
        }
    }
}

/// The Van Loan generator `L(b, t)` and its field derivatives.
#[derive(Clone, Copy)]
pub struct VanLoanGenerator<'a, const D: usize> {
    pub lift: &'a dyn SpinLift<D>,
    /// Eigenstate tracked by the projector block; `None` drops the block.
    pub projector: Option<Sign>,
    /// `None` drops the perturbation block.
    pub perturbation: Option<&'a dyn Perturbation<D>>,
    pub eps_field: f64,
}

impl<'a, const D: usize> VanLoanGenerator<'a, D> {
    pub fn new(
        lift: &'a dyn SpinLift<D>,
        projector: Option<Sign>,
        perturbation: Option<&'a dyn Perturbation<D>>,
        eps_field: f64,
    ) -> Self {
        Self {
            lift,
            projector,
            perturbation,
            eps_field,
        }
    }

    pub fn assemble(&self, b: &EffectiveField, t: f64) -> Result<BlockTri<D>> {
        let mut l = BlockTri::zeros();
        l.diag = self.lift.hamiltonian(b) * NEG_I;
        if let Some(sign) = self.projector {
            // −i·(iP) = P
            l.b12 = self.lift.projector(b, sign, self.eps_field)?;
        }
        if let Some(p) = self.perturbation {
            l.b23 = p.matrix(b, t) * NEG_I;
        }
        Ok(l)
    }

    /// `∂L/∂b_α`
    pub fn partial(&self, b: &EffectiveField, t: f64, axis: Axis) -> Result<BlockTri<D>> {
        let mut l = BlockTri::zeros();
        l.diag = self.lift.hamiltonian_partial(axis) * NEG_I;
        if let Some(sign) = self.projector {
            l.b12 = self.lift.projector_partial(b, sign, axis, self.eps_field)?;
        }
        if let Some(p) = self.perturbation {
            if let Some(d) = p.partial(b, t, axis) {
                l.b23 = d * NEG_I;
            }
        }
        Ok(l)
    }

    fn layout(&self) -> Layout {
        Layout {
            projector: self.projector.is_some(),
            perturbation: self.perturbation.is_some(),
        }
    }
}

/// Which off-diagonal blocks are integrated; the others are structural zeros.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Layout {
    projector: bool,
    perturbation: bool,
}

impl Layout {
    fn blocks(self) -> usize {
        1 + self.projector as usize
            + self.perturbation as usize
            + (self.projector && self.perturbation) as usize
    }

    fn pack<const D: usize>(self, v: &BlockTri<D>, out: &mut [C64]) {
        let n = D * D;
        out[..n].copy_from_slice(v.diag.as_slice());
        let mut k = 1;
        if self.projector {
            out[k * n..(k + 1) * n].copy_from_slice(v.b12.as_slice());
            k += 1;
        }
        if self.perturbation {
            out[k * n..(k + 1) * n].copy_from_slice(v.b23.as_slice());
            k += 1;
        }
        if self.projector && self.perturbation {
            out[k * n..(k + 1) * n].copy_from_slice(v.b13.as_slice());
        }
    }

    fn unpack<const D: usize>(self, y: &[C64]) -> BlockTri<D> {
        let n = D * D;
        let mut v = BlockTri::zeros();
        v.diag = CMat::<D>::from_column_slice(&y[..n]);
        let mut k = 1;
        if self.projector {
            v.b12 = CMat::<D>::from_column_slice(&y[k * n..(k + 1) * n]);
            k += 1;
        }
        if self.perturbation {
            v.b23 = CMat::<D>::from_column_slice(&y[k * n..(k + 1) * n]);
            k += 1;
        }
        if self.projector && self.perturbation {
            v.b13 = CMat::<D>::from_column_slice(&y[k * n..(k + 1) * n]);
        }
        v
    }
}

/// `U(t)` and the three Dyson blocks at one time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DysonBlocks<const D: usize> {
    pub u: CMat<D>,
    /// `𝒟_U(iP; t)`
    pub d_ip: CMat<D>,
    /// `𝒟_U(δH; t)`
    pub d_per: CMat<D>,
    /// `𝒟_U(iP, δH; t)`
    pub d_mix: CMat<D>,
}

impl<const D: usize> From<&BlockTri<D>> for DysonBlocks<D> {
    fn from(v: &BlockTri<D>) -> Self {
        Self {
            u: v.diag,
            d_ip: v.b12,
            d_per: v.b23,
            d_mix: v.b13,
        }
    }
}

/// Dense-output solution `V_t` on `[0, T]`.
#[derive(Clone, Debug)]
pub struct VanLoanTrajectory<const D: usize> {
    duration: f64,
    layout: Layout,
    dense: Option<DenseOutput>,
    terminal: BlockTri<D>,
    pub options: SolverOptions,
    pub stats: SolverStats,
}

impl<const D: usize> VanLoanTrajectory<D> {
    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn terminal(&self) -> &BlockTri<D> {
        &self.terminal
    }

    pub fn has_dense_output(&self) -> bool {
        self.dense.is_some()
    }

    /// `V_t` for `t ∈ [0, T]`; exact at both end points.
    pub fn at(&self, t: f64) -> BlockTri<D> {
        if t <= 0.0 {
            return BlockTri::identity();
        }
        if t >= self.duration {
            return self.terminal;
        }
        let dense = self
            .dense
            .as_ref()
            .expect("trajectory was integrated without dense output");
        let mut y = vec![C64::new(0.0, 0.0); self.layout.blocks() * D * D];
        dense.eval(t, &mut y);
        self.layout.unpack(&y)
    }

    pub fn extract_blocks(&self, t: f64) -> DysonBlocks<D> {
        DysonBlocks::from(&self.at(t))
    }
}

/// Integrates `V' = L(b(x, t), t)·V` from `V_0 = 𝟙` to `t = T`.
pub fn propagate<const D: usize>(
    generator: &VanLoanGenerator<'_, D>,
    field: &dyn FieldFamily,
    x: &[f64],
    opts: &SolverOptions,
) -> Result<VanLoanTrajectory<D>> {
    propagate_with(generator, field, x, opts, true)
}

/// As [`propagate`]; `dense = false` keeps only `V_T`.
pub fn propagate_with<const D: usize>(
    generator: &VanLoanGenerator<'_, D>,
    field: &dyn FieldFamily,
    x: &[f64],
    opts: &SolverOptions,
    dense: bool,
) -> Result<VanLoanTrajectory<D>> {
    let duration = field.duration();
    let layout = generator.layout();
    let dim = layout.blocks() * D * D;
    let mut y0 = vec![C64::new(0.0, 0.0); dim];
    layout.pack(&BlockTri::<D>::identity(), &mut y0);
    let mut store = dense.then(|| DenseOutput::new(dim));
    let rhs = |t: f64, y: &[C64], dy: &mut [C64]| -> Result<()> {
        let b = field.field(x, t)?;
        if !b.is_finite() {
            return Err(Error::domain(format!(
                "non-finite effective field at t = {t:e}"
            )));
        }
        let l = generator.assemble(&b, t).map_err(|e| e.at(t))?;
        let v = layout.unpack::<D>(y);
        layout.pack(&(&l * &v), dy);
        Ok(())
    };
    let (y, stats) = integrate(rhs, 0.0, duration, &y0, opts, |s| {
        if let Some(d) = store.as_mut() {
            d.record(s)
        }
    })?;
    Ok(VanLoanTrajectory {
        duration,
        layout,
        dense: store,
        terminal: layout.unpack(&y),
        options: *opts,
        stats,
    })
}

/// `δV_T/δb_α(t) = V_T·V_t⁻¹·(∂L/∂b_α)·V_t`.
pub fn functional_derivative<const D: usize>(
    traj: &VanLoanTrajectory<D>,
    generator: &VanLoanGenerator<'_, D>,
    field: &dyn FieldFamily,
    x: &[f64],
    t: f64,
    axis: Axis,
) -> Result<BlockTri<D>> {
    let b = field.field(x, t)?;
    let dl = generator.partial(&b, t, axis).map_err(|e| e.at(t))?;
    let v = traj.at(t);
    Ok(&(traj.terminal() * &v.inverse()?) * &(&dl * &v))
}

/// Quadrature rule over `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Quadrature {
    /// Gauss–Kronrod 7/15 panels, starting from `panels` equal ones and
    /// bisecting the panel with the largest `|K15 − G7|` until the summed
    /// estimate is below `rtol` of the integral's norm or `max_panels` is
    /// reached. Rules that need a fixed node set use the starting panels.
    Adaptive {
        panels: usize,
        rtol: f64,
        max_panels: usize,
    },
    /// Uniform grid, trapezoidal weights.
    Trapezoid { nodes: usize },
    /// Uniform grid, composite Simpson weights; an even node count is bumped
    /// by one.
    Simpson { nodes: usize },
    /// `panels` equal panels with an `order`-point Gauss–Legendre rule each.
    GaussLegendre { panels: usize, order: usize },
}

impl Default for Quadrature {
    fn default() -> Self {
        Quadrature::Adaptive {
            panels: 16,
            rtol: 1e-8,
            max_panels: 1024,
        }
    }
}

/// Gauss–Kronrod 15-point abscissae on `[0, 1]` of `[-1, 1]`, descending;
/// odd indices are the 7-point Gauss nodes.
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// The 15 Kronrod nodes on `[a, b]` with Kronrod and embedded Gauss weights
/// (zero off the Gauss nodes).
fn kronrod_panel(a: f64, b: f64) -> [(f64, f64, f64); 15] {
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    let mut out = [(0.0, 0.0, 0.0); 15];
    for j in 0..7 {
        let g = if j % 2 == 1 { WG[j / 2] } else { 0.0 };
        out[2 * j] = (c - h * XGK[j], h * WGK[j], h * g);
        out[2 * j + 1] = (c + h * XGK[j], h * WGK[j], h * g);
    }
    out[14] = (c, h * WGK[7], h * WG[3]);
    out
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, ascending.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let n = order.max(1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() <= 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

impl Quadrature {
    pub fn node_count(&self) -> usize {
        match *self {
            Quadrature::Trapezoid { nodes } => nodes.max(2),
            Quadrature::Simpson { nodes } => {
                let n = nodes.max(3);
                n + (n % 2 == 0) as usize
            }
            Quadrature::GaussLegendre { panels, order } => panels.max(1) * order.max(1),
            Quadrature::Adaptive { panels, .. } => 15 * panels.max(1),
        }
    }

    /// The same rule with (about) twice the nodes.
    pub fn refined(&self) -> Self {
        match *self {
            Quadrature::Trapezoid { nodes } => Quadrature::Trapezoid { nodes: 2 * nodes },
            Quadrature::Simpson { nodes } => Quadrature::Simpson {
                nodes: 2 * nodes - 1,
            },
            Quadrature::GaussLegendre { panels, order } => Quadrature::GaussLegendre {
                panels: 2 * panels,
                order,
            },
            Quadrature::Adaptive {
                panels,
                rtol,
                max_panels,
            } => Quadrature::Adaptive {
                panels: 2 * panels,
                rtol,
                max_panels: 2 * max_panels,
            },
        }
    }

    pub fn nodes_and_weights(&self, duration: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.node_count();
        if let Quadrature::Adaptive { panels, .. } = *self {
            let panels = panels.max(1);
            let h = duration / panels as f64;
            return (0..panels)
                .flat_map(|p| kronrod_panel(p as f64 * h, (p + 1) as f64 * h))
                .map(|(t, w, _)| (t, w))
                .unzip();
        }
        if let Quadrature::GaussLegendre { panels, order } = *self {
            let (gx, gw) = gauss_legendre(order);
            let panels = panels.max(1);
            let h = duration / panels as f64;
            let mut nodes = Vec::with_capacity(n);
            let mut weights = Vec::with_capacity(n);
            for p in 0..panels {
                let a = p as f64 * h;
                for (x, w) in gx.iter().zip(&gw) {
                    nodes.push(a + 0.5 * h * (x + 1.0));
                    weights.push(0.5 * h * w);
                }
            }
            return (nodes, weights);
        }
        let h = duration / (n - 1) as f64;
        let nodes: Vec<f64> = (0..n)
            .map(|k| if k == n - 1 { duration } else { k as f64 * h })
            .collect();
        let weights = match self {
            Quadrature::Simpson { .. } => (0..n)
                .map(|k| {
                    if k == 0 || k == n - 1 {
                        h / 3.0
                    } else if k % 2 == 1 {
                        4.0 * h / 3.0
                    } else {
                        2.0 * h / 3.0
                    }
                })
                .collect(),
            _ => (0..n)
                .map(|k| if k == 0 || k == n - 1 { 0.5 * h } else { h })
                .collect(),
        };
        (nodes, weights)
    }
}

/// `Σ_α J_αn(t)·V_t⁻¹(∂L/∂b_α)V_t` for every parameter `n`.
fn gradient_integrand<const D: usize>(
    traj: &VanLoanTrajectory<D>,
    generator: &VanLoanGenerator<'_, D>,
    field: &dyn FieldFamily,
    x: &[f64],
    t: f64,
) -> Result<Vec<BlockTri<D>>> {
    let b = field.field(x, t)?;
    let v = traj.at(t);
    let vinv = v.inverse()?;
    let jac = field.jacobian(x, t)?;
    let mut m = [BlockTri::zeros(); 3];
    for axis in Axis::ALL {
        let dl = generator.partial(&b, t, axis).map_err(|e| e.at(t))?;
        m[axis.index()] = &vinv * &(&dl * &v);
    }
    Ok((0..field.num_params())
        .map(|p| {
            let mut g = BlockTri::zeros();
            for (axis, ma) in m.iter().enumerate() {
                let j = jac[(axis, p)];
                if j != 0.0 {
                    g.axpy(j, ma);
                }
            }
            g
        })
        .collect())
}

fn blocks_norm<const D: usize>(v: &[BlockTri<D>]) -> f64 {
    v.iter().map(|g| g.norm().powi(2)).sum::<f64>().sqrt()
}

struct Panel<const D: usize> {
    a: f64,
    b: f64,
    value: Vec<BlockTri<D>>,
    error: f64,
}

fn kronrod_estimate<const D: usize>(
    f: &dyn Fn(f64) -> Result<Vec<BlockTri<D>>>,
    n: usize,
    a: f64,
    b: f64,
) -> Result<Panel<D>> {
    let mut k = vec![BlockTri::<D>::zeros(); n];
    let mut g = vec![BlockTri::<D>::zeros(); n];
    for (t, wk, wg) in kronrod_panel(a, b) {
        let v = f(t)?;
        for ((kp, gp), vp) in k.iter_mut().zip(g.iter_mut()).zip(&v) {
            kp.axpy(wk, vp);
            if wg != 0.0 {
                gp.axpy(wg, vp);
            }
        }
    }
    for (gp, kp) in g.iter_mut().zip(&k) {
        gp.axpy(-1.0, kp);
    }
    Ok(Panel {
        a,
        b,
        error: blocks_norm(&g),
        value: k,
    })
}

/// `∂V_T/∂x_n = V_T ∫ Σ_α V_t⁻¹(∂L/∂b_α)V_t·∂b_α/∂x_n dt` for every `n`.
pub fn parameter_gradient<const D: usize>(
    traj: &VanLoanTrajectory<D>,
    generator: &VanLoanGenerator<'_, D>,
    field: &dyn FieldFamily,
    x: &[f64],
    quadrature: &Quadrature,
) -> Result<Vec<BlockTri<D>>> {
    let n = field.num_params();
    let f = |t: f64| gradient_integrand(traj, generator, field, x, t);
    let mut acc = vec![BlockTri::<D>::zeros(); n];
    if let Quadrature::Adaptive {
        panels,
        rtol,
        max_panels,
    } = *quadrature
    {
        let panels = panels.max(1);
        let h = traj.duration() / panels as f64;
        let mut work = (0..panels)
            .map(|p| kronrod_estimate(&f, n, p as f64 * h, (p + 1) as f64 * h))
            .collect::<Result<Vec<_>>>()?;
        loop {
            let error: f64 = work.iter().map(|p| p.error).sum();
            let mut total = vec![BlockTri::<D>::zeros(); n];
            for p in &work {
                for (t, v) in total.iter_mut().zip(&p.value) {
                    t.axpy(1.0, v);
                }
            }
            if error <= rtol * blocks_norm(&total) || work.len() >= max_panels.max(panels) {
                acc = total;
                break;
            }
            let worst = (0..work.len())
                .max_by(|&i, &j| work[i].error.total_cmp(&work[j].error))
                .unwrap_or(0);
            let p = work.swap_remove(worst);
            let mid = 0.5 * (p.a + p.b);
            work.push(kronrod_estimate(&f, n, p.a, mid)?);
            work.push(kronrod_estimate(&f, n, mid, p.b)?);
        }
    } else {
        let (nodes, weights) = quadrature.nodes_and_weights(traj.duration());
        for (&t, &w) in nodes.iter().zip(&weights) {
            for (g, v) in acc.iter_mut().zip(f(t)?) {
                g.axpy(w, &v);
            }
        }
    }
    let vt = traj.terminal();
    Ok(acc.iter().map(|g| vt * g).collect())
}

/// Debug dump of `V_t` at a set of nodes: row-major `3D×3D` complex entries
/// with interleaved real and imaginary parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDump {
    pub dim: usize,
    pub times: Vec<f64>,
    pub propagators: Vec<Vec<f64>>,
    pub rtol: f64,
    pub atol: f64,
}

impl TrajectoryDump {
    pub fn new<const D: usize>(traj: &VanLoanTrajectory<D>, times: &[f64]) -> Self {
        let propagators = times
            .iter()
            .map(|&t| {
                let m = traj.at(t).to_dense();
                let mut flat = Vec::with_capacity(2 * m.len());
                for r in 0..m.nrows() {
                    for c in 0..m.ncols() {
                        flat.push(m[(r, c)].re);
                        flat.push(m[(r, c)].im);
                    }
                }
                flat
            })
            .collect();
        Self {
            dim: 3 * D,
            times: times.to_vec(),
            propagators,
            rtol: traj.options.rtol,
            atol: traj.options.atol,
        }
    }
}
