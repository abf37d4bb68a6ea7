//! Fidelity, adiabaticity and perturbation metrics, their weighted ensemble
//! combination, and analytic gradients through the Van Loan propagator.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::SVector;
use serde::{Deserialize, Serialize};

use crate::ansatz::{Ansatz, FieldFamily, MemberField};
use crate::exec::{Execution, KahanSum};
use crate::ode::SolverOptions;
use crate::spinalg::{field_epsilon, select_sign, sigma_z, CMat, Mat2, Sign, SpinState};
use crate::vanloan::{
    kron2, parameter_gradient, propagate_with, BlockTri, DysonBlocks, Perturbation, Quadrature,
    RabiProportional, SingleSpin, SpinPair, StaticPerturbation, VanLoanGenerator,
    VanLoanTrajectory,
};
use crate::{Error, Result, C64};

/// Imaginary part of `φ_ad` above which the evaluation is rejected.
pub const NON_REAL_TOL: f64 = 1e-6;

/// `(p0, p_ad, p_per)`, a convex combination.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricWeights {
    pub p0: f64,
    pub p_ad: f64,
    #[serde(default)]
    pub p_per: f64,
}

impl MetricWeights {
    pub fn new(p0: f64, p_ad: f64, p_per: f64) -> Result<Self> {
        let w = Self { p0, p_ad, p_per };
        w.validate()?;
        Ok(w)
    }

    pub fn fidelity_only() -> Self {
        Self {
            p0: 1.0,
            p_ad: 0.0,
            p_per: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p0", self.p0), ("p_ad", self.p_ad), ("p_per", self.p_per)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::domain(format!(
                    "metric weight {name} = {p} outside [0, 1]"
                )));
            }
        }
        let s = self.p0 + self.p_ad + self.p_per;
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("metric weights sum to {s}, not 1")));
        }
        Ok(())
    }
}

/// Perturbation Hamiltonian attached to an ensemble member.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PerturbationSpec {
    #[default]
    None,
    /// `δH = σz`: Larmor (resonance-offset) inhomogeneity.
    SigmaZ,
    /// Secular like-spin dipolar coupling `2σzσz − σxσx − σyσy` on a pair of
    /// identical spins, both starting in the member's initial state.
    DipolarPair,
    /// Static Hermitian 2×2 matrix given by real and imaginary parts.
    Custom {
        real: [[f64; 2]; 2],
        imag: [[f64; 2]; 2],
    },
    /// `δH = b_x(x, t)·σx`: relative Rabi-field error.
    RabiProportional,
}

impl PerturbationSpec {
    pub fn is_none(&self) -> bool {
        matches!(self, PerturbationSpec::None)
    }

    fn single_spin(&self) -> Result<Option<Box<dyn Perturbation<2>>>> {
        Ok(match self {
            PerturbationSpec::None | PerturbationSpec::DipolarPair => None,
            PerturbationSpec::SigmaZ => Some(Box::new(StaticPerturbation::new(sigma_z())?)),
            PerturbationSpec::Custom { real, imag } => {
                let m = Mat2::from_fn(|i, j| C64::new(real[i][j], imag[i][j]));
                Some(Box::new(StaticPerturbation::new(m)?))
            }
            PerturbationSpec::RabiProportional => Some(Box::new(RabiProportional)),
        })
    }
}

/// Secular dipolar operator on two spins as a fixed 4×4 matrix.
pub fn dipolar_pair_matrix() -> CMat<4> {
    use crate::spinalg::{sigma_x, sigma_y};
    kron2(&sigma_z(), &sigma_z()) * C64::new(2.0, 0.0)
        - kron2(&sigma_x(), &sigma_x())
        - kron2(&sigma_y(), &sigma_y())
}

/// One representative system of the optimization set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub label: String,
    /// Multiplies the transverse field components (`ω1/ω1max` of this member).
    #[serde(default = "one")]
    pub rabi_scale: f64,
    /// Added to `b_z` (rad/s).
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub perturbation: PerturbationSpec,
    pub initial: SpinState,
    pub target: SpinState,
    /// Fixed eigenstate sign; chosen from the initial field when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign: Option<Sign>,
    pub metric_weights: MetricWeights,
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

impl EnsembleMember {
    pub fn field(&self, family: &Arc<Ansatz>) -> MemberField {
        MemberField::new(family.clone(), self.rabi_scale, self.offset)
    }
}

/// Numerical settings shared by every member evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub solver: SolverOptions,
    pub quadrature: Quadrature,
    /// Uniform samples for the tip-angle diagnostic; 0 skips it.
    pub tip_samples: usize,
    pub execution: Execution,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            solver: SolverOptions::optimization(),
            quadrature: Quadrature::default(),
            tip_samples: 0,
            execution: Execution::default(),
        }
    }
}

impl EvalSettings {
    pub fn verification() -> Self {
        Self {
            solver: SolverOptions::verification(),
            tip_samples: 512,
            ..Self::default()
        }
    }
}

/// `|⟨ψT|U|ψ0⟩|²`
pub fn fidelity_metric(u: &Mat2, psi0: &SpinState, psit: &SpinState) -> f64 {
    (psit.ket().adjoint() * u * psi0.ket())[(0, 0)].norm_sqr()
}

/// `(1/T)·Re⟨ψ0|U†·𝒟(iP)|ψ0⟩`, rejecting an imaginary residue above
/// [`NON_REAL_TOL`].
pub fn adiabaticity_metric<const D: usize>(
    blocks: &DysonBlocks<D>,
    psi0: &SVector<C64, D>,
    duration: f64,
) -> Result<f64> {
    let c = (psi0.adjoint() * blocks.u.adjoint() * blocks.d_ip * psi0)[(0, 0)] / duration;
    if c.im.abs() > NON_REAL_TOL {
        return Err(Error::NonRealMetric { imag: c.im });
    }
    Ok(c.re)
}

/// `1 − ‖𝒟(δH)ψ0‖²/𝒩²` with `𝒩 = ∫‖δH(t)‖ dt`.
pub fn perturbation_metric<const D: usize>(
    blocks: &DysonBlocks<D>,
    psi0: &SVector<C64, D>,
    norm_integral: f64,
) -> Result<f64> {
    if !(norm_integral > 0.0) {
        return Err(Error::ZeroPerturbation);
    }
    let y = blocks.d_per * psi0;
    Ok(1.0 - y.norm_squared() / (norm_integral * norm_integral))
}

/// Metric values of one member plus the combined target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MemberMetrics {
    pub phi0: f64,
    pub phi_ad: f64,
    pub phi_per: Option<f64>,
}

/// `p0·φ0 + p_ad·φ_ad + p_per·φ_per`; a missing `φ_per` counts as zero.
pub fn combined_target(m: &MemberMetrics, w: &MetricWeights) -> f64 {
    w.p0 * m.phi0 + w.p_ad * m.phi_ad + w.p_per * m.phi_per.unwrap_or(0.0)
}

/// Result of evaluating one member.
#[derive(Clone, Debug, PartialEq)]
pub struct MemberEvaluation {
    pub metrics: MemberMetrics,
    pub phi: f64,
    pub sign: Sign,
    pub alpha_max: Option<f64>,
    /// `∇φ` when requested.
    pub gradient: Option<Vec<f64>>,
    /// Per-metric gradients `[∇φ0, ∇φ_ad, ∇φ_per]` when requested.
    pub metric_gradients: Option<[Vec<f64>; 3]>,
}

fn column<const D: usize>(s: &SpinState) -> SVector<C64, D> {
    debug_assert!(D == 2);
    let [a, b] = s.amplitudes();
    SVector::<C64, D>::from_fn(|i, _| if i == 0 { a } else { b })
}

fn pair_state(s: &SpinState) -> SVector<C64, 4> {
    let [a, b] = s.amplitudes();
    SVector::<C64, 4>::new(a * a, a * b, b * a, b * b)
}

fn inner<const D: usize>(a: &SVector<C64, D>, m: &CMat<D>, b: &SVector<C64, D>) -> C64 {
    (a.adjoint() * m * b)[(0, 0)]
}

/// `∫‖δH(t)‖ dt` and its parameter gradient.
fn norm_integral<const D: usize>(
    pert: &dyn Perturbation<D>,
    field: &dyn FieldFamily,
    x: &[f64],
    quad: &Quadrature,
    with_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    let n = field.num_params();
    if let Some(c) = pert.constant_op_norm() {
        return Ok((
            c * field.duration(),
            vec![0.0; if with_grad { n } else { 0 }],
        ));
    }
    let (nodes, weights) = quad.nodes_and_weights(field.duration());
    let mut total = KahanSum::default();
    let mut grad = vec![0.0; if with_grad { n } else { 0 }];
    for (&t, &w) in nodes.iter().zip(&weights) {
        let b = field.field(x, t)?;
        total.add(w * pert.op_norm(&b, t));
        if with_grad {
            let j = field.jacobian(x, t)?;
            let d: [f64; 3] =
                std::array::from_fn(|a| pert.op_norm_partial(&b, t, crate::spinalg::Axis::ALL[a]));
            for (p, g) in grad.iter_mut().enumerate() {
                *g += w * (d[0] * j[(0, p)] + d[1] * j[(1, p)] + d[2] * j[(2, p)]);
            }
        }
    }
    Ok((total.value(), grad))
}

/// `φ_per` and `∇φ_per` from a trajectory carrying the perturbation block.
fn perturbation_term<const D: usize>(
    traj: &VanLoanTrajectory<D>,
    dv: Option<&[BlockTri<D>]>,
    psi0: &SVector<C64, D>,
    norm: f64,
    dnorm: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let blocks = DysonBlocks::from(traj.terminal());
    let phi = perturbation_metric(&blocks, psi0, norm)?;
    let y = blocks.d_per * psi0;
    let y2 = y.norm_squared();
    let grad = match dv {
        Some(dv) => dv
            .iter()
            .zip(dnorm)
            .map(|(g, &dn)| {
                let dy = g.b23 * psi0;
                -2.0 * y.dotc(&dy).re / (norm * norm) + 2.0 * y2 * dn / (norm * norm * norm)
            })
            .collect(),
        None => Vec::new(),
    };
    Ok((phi, grad))
}

/// Evaluates a member's metrics at `x`, optionally with gradients.
pub fn evaluate_member(
    family: &Arc<Ansatz>,
    member: &EnsembleMember,
    x: &[f64],
    settings: &EvalSettings,
    with_gradient: bool,
) -> Result<MemberEvaluation> {
    evaluate_member_inner(family, member, x, settings, with_gradient)
        .map_err(|e| e.for_member(&member.label))
}

fn evaluate_member_inner(
    family: &Arc<Ansatz>,
    member: &EnsembleMember,
    x: &[f64],
    settings: &EvalSettings,
    with_gradient: bool,
) -> Result<MemberEvaluation> {
    let field = member.field(family);
    let w = member.metric_weights;
    let eps = field_epsilon(field.field_scale());
    let duration = field.duration();
    let sign = match member.sign {
        Some(s) => s,
        None => select_sign(&field.field(x, 0.0)?, &member.initial, eps)?.0,
    };

    let single = member.perturbation.single_spin()?;
    let lift = SingleSpin;
    let gen = VanLoanGenerator::new(&lift, Some(sign), single.as_deref(), eps);
    let dense = with_gradient || settings.tip_samples > 0;
    let traj = propagate_with(&gen, &field, x, &settings.solver, dense)?;
    let blocks = DysonBlocks::from(traj.terminal());
    let psi0 = column::<2>(&member.initial);
    let psit = column::<2>(&member.target);

    let amp = inner(&psit, &blocks.u, &psi0);
    let phi0 = amp.norm_sqr();
    let phi_ad = adiabaticity_metric(&blocks, &psi0, duration)?;

    let dv = if with_gradient {
        Some(parameter_gradient(
            &traj,
            &gen,
            &field,
            x,
            &settings.quadrature,
        )?)
    } else {
        None
    };

    let n = field.num_params();
    let mut g0 = Vec::new();
    let mut gad = Vec::new();
    if let Some(dv) = &dv {
        let ux = blocks.u.adjoint() * blocks.d_ip;
        g0.reserve(n);
        gad.reserve(n);
        for g in dv {
            g0.push(2.0 * (amp.conj() * inner(&psit, &g.diag, &psi0)).re);
            let d = g.diag.adjoint() * blocks.d_ip + blocks.u.adjoint() * g.b12;
            gad.push(inner(&psi0, &d, &psi0).re / duration);
            debug_assert!(inner(&psi0, &ux, &psi0).im.is_finite());
        }
    }

    // φ_per from the single-spin run or from a separate two-spin run.
    let per: Option<(f64, Vec<f64>)> = match (&member.perturbation, single.as_deref()) {
        (PerturbationSpec::None, _) => None,
        (PerturbationSpec::DipolarPair, _) => {
            let pert = StaticPerturbation::new(dipolar_pair_matrix())?;
            let pair = SpinPair;
            let gen4 = VanLoanGenerator::new(&pair, None, Some(&pert as &dyn Perturbation<4>), eps);
            let traj4 = propagate_with(&gen4, &field, x, &settings.solver, with_gradient)?;
            let dv4 = if with_gradient {
                Some(parameter_gradient(
                    &traj4,
                    &gen4,
                    &field,
                    x,
                    &settings.quadrature,
                )?)
            } else {
                None
            };
            let (norm, dnorm) =
                norm_integral(&pert, &field, x, &settings.quadrature, with_gradient)?;
            Some(perturbation_term(
                &traj4,
                dv4.as_deref(),
                &pair_state(&member.initial),
                norm,
                &dnorm,
            )?)
        }
        (_, Some(pert)) => {
            let (norm, dnorm) =
                norm_integral(pert, &field, x, &settings.quadrature, with_gradient)?;
            if norm > 0.0 || w.p_per > 0.0 {
                Some(perturbation_term(
                    &traj,
                    dv.as_deref(),
                    &psi0,
                    norm,
                    &dnorm,
                )?)
            } else {
                None
            }
        }
        (_, None) => None,
    };
    if w.p_per > 0.0 && per.is_none() {
        return Err(Error::domain(
            "p_per > 0 but the member has no perturbation",
        ));
    }

    let metrics = MemberMetrics {
        phi0,
        phi_ad,
        phi_per: per.as_ref().map(|p| p.0),
    };
    let phi = combined_target(&metrics, &w);

    let (gradient, metric_gradients) = if dv.is_some() {
        let gper = per.map(|p| p.1).unwrap_or_else(|| vec![0.0; n]);
        let total = (0..n)
            .map(|i| w.p0 * g0[i] + w.p_ad * gad[i] + w.p_per * gper[i])
            .collect();
        (Some(total), Some([g0, gad, gper]))
    } else {
        (None, None)
    };

    let alpha_max = if settings.tip_samples > 0 {
        Some(
            max_tip_angle(
                &traj,
                &member.initial,
                &field,
                x,
                sign,
                settings.tip_samples,
            )?
            .0,
        )
    } else {
        None
    };

    Ok(MemberEvaluation {
        metrics,
        phi,
        sign,
        alpha_max,
        gradient,
        metric_gradients,
    })
}

/// Angle between the selected eigen-direction `s·b̂` and the magnetization,
/// sampled uniformly on `[0, T]`. Returns `(α_max, [(t, α)])` in radians.
pub fn max_tip_angle(
    traj: &VanLoanTrajectory<2>,
    psi0: &SpinState,
    field: &dyn FieldFamily,
    x: &[f64],
    sign: Sign,
    samples: usize,
) -> Result<(f64, Vec<(f64, f64)>)> {
    let samples = samples.max(2);
    let duration = traj.duration();
    let eps = field_epsilon(field.field_scale());
    let ket = psi0.ket();
    let mut series = Vec::with_capacity(samples);
    let mut max = 0.0f64;
    for k in 0..samples {
        let t = duration * k as f64 / (samples - 1) as f64;
        let b = field.field(x, t)?;
        let nb = b.checked_norm(eps).map_err(|e| e.at(t))?;
        let psi = traj.at(t).diag * ket;
        let m = bloch_of(&psi);
        let nm = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
        let c = sign.value() * (b.bx * m[0] + b.by * m[1] + b.bz * m[2]) / (nb * nm);
        let a = c.clamp(-1.0, 1.0).acos();
        max = max.max(a);
        series.push((t, a));
    }
    Ok((max, series))
}

pub(crate) fn bloch_of(psi: &nalgebra::Vector2<C64>) -> [f64; 3] {
    let ab = psi[0].conj() * psi[1];
    [
        2.0 * ab.re,
        2.0 * ab.im,
        psi[0].norm_sqr() - psi[1].norm_sqr(),
    ]
}

/// Family plus optimization set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub family: Arc<Ansatz>,
    pub members: Vec<EnsembleMember>,
}

impl Ensemble {
    pub fn new(family: Ansatz, members: Vec<EnsembleMember>) -> Result<Self> {
        let e = Self {
            family: Arc::new(family),
            members,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        if self.members.is_empty() {
            return Err(Error::domain("optimization set is empty"));
        }
        let mut sum = KahanSum::default();
        for m in &self.members {
            m.metric_weights
                .validate()
                .map_err(|e| e.for_member(&m.label))?;
            if !(0.0..=1.0).contains(&m.weight) {
                return Err(
                    Error::domain(format!("member weight {} outside [0, 1]", m.weight))
                        .for_member(&m.label),
                );
            }
            sum.add(m.weight);
        }
        if (sum.value() - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!(
                "member weights sum to {}, not 1",
                sum.value()
            )));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.family.num_params()
    }
}

/// `Φ = Σ w·φ` and `∇Φ`, members evaluated independently and reduced in
/// member order with compensated summation.
pub fn ensemble_target_and_gradient(
    ensemble: &Ensemble,
    x: &[f64],
    settings: &EvalSettings,
) -> Result<(f64, Vec<f64>)> {
    let settings = EvalSettings {
        tip_samples: 0,
        ..*settings
    };
    let evals = settings.execution.map(&ensemble.members, |m| {
        evaluate_member(&ensemble.family, m, x, &settings, true)
    });
    let n = ensemble.num_params();
    let mut phi = KahanSum::default();
    let mut grad = vec![KahanSum::default(); n];
    for (m, e) in ensemble.members.iter().zip(evals) {
        let e = e?;
        phi.add(m.weight * e.phi);
        for (g, v) in grad.iter_mut().zip(e.gradient.as_deref().unwrap_or(&[])) {
            g.add(m.weight * v);
        }
    }
    Ok((phi.value(), grad.iter().map(KahanSum::value).collect()))
}

/// `Φ` only.
pub fn ensemble_target(ensemble: &Ensemble, x: &[f64], settings: &EvalSettings) -> Result<f64> {
    let settings = EvalSettings {
        tip_samples: 0,
        ..*settings
    };
    let evals = settings.execution.map(&ensemble.members, |m| {
        evaluate_member(&ensemble.family, m, x, &settings, false)
    });
    let mut phi = KahanSum::default();
    for (m, e) in ensemble.members.iter().zip(evals) {
        phi.add(m.weight * e?.phi);
    }
    Ok(phi.value())
}

/// Per-member entry of a [`MetricReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberReport {
    pub label: String,
    pub weight: f64,
    pub phi0: f64,
    pub phi_ad: f64,
    pub phi_per: Option<f64>,
    pub phi: f64,
    pub alpha_max_deg: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub members: Vec<MemberReport>,
    pub total: f64,
}

fn clamp_metric(v: f64, name: &str, label: &str) -> f64 {
    if v > 1.0 + 1e-8 {
        log::warn!("member {label}: {name} = {v} exceeds 1, clamped");
    }
    v.min(1.0)
}

/// Metrics of every member, without gradients.
pub fn ensemble_report(
    ensemble: &Ensemble,
    x: &[f64],
    settings: &EvalSettings,
) -> Result<MetricReport> {
    let evals = settings.execution.map(&ensemble.members, |m| {
        evaluate_member(&ensemble.family, m, x, settings, false)
    });
    let mut total = KahanSum::default();
    let mut members = Vec::with_capacity(evals.len());
    for (m, e) in ensemble.members.iter().zip(evals) {
        let e = e?;
        total.add(m.weight * e.phi);
        members.push(MemberReport {
            label: m.label.clone(),
            weight: m.weight,
            phi0: clamp_metric(e.metrics.phi0, "phi0", &m.label),
            phi_ad: clamp_metric(e.metrics.phi_ad, "phi_ad", &m.label),
            phi_per: e
                .metrics
                .phi_per
                .map(|v| clamp_metric(v, "phi_per", &m.label)),
            phi: clamp_metric(e.phi, "phi", &m.label),
            alpha_max_deg: e.alpha_max.map(|a| a * 180.0 / PI),
        });
    }
    Ok(MetricReport {
        members,
        total: total.value(),
    })
}

pub use crate::ansatz::ConstantField;
