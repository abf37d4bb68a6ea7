//! Verification of pulses: Bloch trajectories, Rabi and offset sweeps,
//! dephasing pulse trains, coupled multi-spin dynamics and selectivity
//! profiles.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::Vector2;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ansatz::{Ansatz, FieldFamily, MemberField};
use crate::exec::{Execution, KahanSum};
use crate::metrics::{bloch_of, evaluate_member, EnsembleMember, EvalSettings};
use crate::ode::{integrate, SolverOptions};
use crate::spinalg::{field_epsilon, select_sign, EffectiveField, Mat2, Sign, SpinState};
use crate::units::{HBAR, MU0};
use crate::vanloan::{propagate_with, SingleSpin, VanLoanGenerator};
use crate::{Error, Result, C64};

/// Sampled response: abscissa (rad/s or a count), ordinate, and an error
/// message for points that could not be evaluated.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResponseCurve {
    pub abscissa_name: String,
    pub ordinate_name: String,
    pub abscissa: Vec<f64>,
    /// Failed points hold NaN, written as `null` in JSON.
    #[serde(with = "nan_as_null")]
    pub ordinate: Vec<f64>,
    pub errors: Vec<Option<String>>,
}

pub(crate) mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|x| x.is_finite().then_some(*x))
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Option<f64>>::deserialize(d)?
            .into_iter()
            .map(|x| x.unwrap_or(f64::NAN))
            .collect())
    }
}

impl ResponseCurve {
    pub fn new(
        abscissa_name: &str,
        ordinate_name: &str,
        abscissa: Vec<f64>,
        ordinate: Vec<f64>,
    ) -> Self {
        let errors = vec![None; abscissa.len()];
        Self {
            abscissa_name: abscissa_name.into(),
            ordinate_name: ordinate_name.into(),
            abscissa,
            ordinate,
            errors,
        }
    }

    pub fn len(&self) -> usize {
        self.abscissa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.abscissa.is_empty()
    }

    /// Linear interpolation; `None` outside the abscissa range.
    pub fn interpolate(&self, at: f64) -> Option<f64> {
        interp(&self.abscissa, &self.ordinate, at)
    }
}

fn interp(xs: &[f64], ys: &[f64], at: f64) -> Option<f64> {
    let n = xs.len();
    if n == 0 || at < xs[0] || at > xs[n - 1] {
        return None;
    }
    if n == 1 {
        return Some(ys[0]);
    }
    let i = xs.partition_point(|&v| v <= at).clamp(1, n - 1);
    let (x0, x1) = (xs[i - 1], xs[i]);
    if x1 == x0 {
        return Some(ys[i]);
    }
    let s = (at - x0) / (x1 - x0);
    Some(ys[i - 1] + s * (ys[i] - ys[i - 1]))
}

/// Propagator `U(T)` of a single spin under `field(x, ·)`.
pub fn pulse_unitary(field: &dyn FieldFamily, x: &[f64], opts: &SolverOptions) -> Result<Mat2> {
    let lift = SingleSpin;
    let gen = VanLoanGenerator::new(&lift, None, None, 0.0);
    Ok(propagate_with(&gen, field, x, opts, false)?.terminal().diag)
}

/// One sample of a Bloch trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlochSample {
    pub t: f64,
    pub m: [f64; 3],
    pub b: EffectiveField,
    /// Angle between `s·b̂` and `m` (rad); `None` where the field vanishes.
    pub alpha: Option<f64>,
}

/// Magnetization, field and tip angle sampled uniformly on `[0, T]`.
pub fn bloch_trajectory(
    field: &dyn FieldFamily,
    x: &[f64],
    psi0: &SpinState,
    samples: usize,
    opts: &SolverOptions,
) -> Result<Vec<BlochSample>> {
    let lift = SingleSpin;
    let gen = VanLoanGenerator::new(&lift, None, None, 0.0);
    let traj = propagate_with(&gen, field, x, opts, true)?;
    let eps = field_epsilon(field.field_scale());
    let sign = select_sign(&field.field(x, 0.0)?, psi0, eps)
        .map(|s| s.0)
        .unwrap_or(Sign::Plus);
    let samples = samples.max(2);
    let duration = field.duration();
    (0..samples)
        .map(|k| {
            let t = duration * k as f64 / (samples - 1) as f64;
            let psi: Vector2<C64> = traj.at(t).diag * psi0.ket();
            let m = bloch_of(&psi);
            let b = field.field(x, t)?;
            let nb = b.norm();
            let alpha = (nb > eps).then(|| {
                let nm = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
                let c = sign.value() * (b.bx * m[0] + b.by * m[1] + b.bz * m[2]) / (nb * nm);
                c.clamp(-1.0, 1.0).acos()
            });
            Ok(BlochSample { t, m, b, alpha })
        })
        .collect()
}

/// Metrics of one member across a grid of maximum Rabi frequencies.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RabiSweep {
    /// ω1max of each grid point (rad/s).
    pub omega1: Vec<f64>,
    #[serde(with = "nan_as_null")]
    pub infidelity: Vec<f64>,
    #[serde(with = "nan_as_null")]
    pub ad_infidelity: Vec<f64>,
    pub per_infidelity: Vec<Option<f64>>,
    #[serde(with = "nan_as_null")]
    pub alpha_max_deg: Vec<f64>,
    pub errors: Vec<Option<String>>,
}

impl RabiSweep {
    pub fn curves(&self) -> Vec<ResponseCurve> {
        let mk = |name: &str, ys: Vec<f64>| {
            let mut c = ResponseCurve::new("omega1_rad_s", name, self.omega1.clone(), ys);
            c.errors = self.errors.clone();
            c
        };
        let mut out = vec![
            mk("one_minus_phi0", self.infidelity.clone()),
            mk("one_minus_phi_ad", self.ad_infidelity.clone()),
            mk("alpha_max_deg", self.alpha_max_deg.clone()),
        ];
        if self.per_infidelity.iter().any(Option::is_some) {
            out.push(mk(
                "one_minus_phi_per",
                self.per_infidelity
                    .iter()
                    .map(|v| v.unwrap_or(f64::NAN))
                    .collect(),
            ));
        }
        out
    }

    /// Largest finite value of a column, ignoring failed points.
    pub fn max_of(values: &[f64]) -> f64 {
        values
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Evaluates `member` (its offset, states and perturbation) with the Rabi
/// scale replaced by `ω1/ω1max` for every `ω1` in `omega1_grid`. Failed
/// points are recorded and the sweep continues.
pub fn rabi_sweep(
    family: &Arc<Ansatz>,
    member: &EnsembleMember,
    x: &[f64],
    omega1_grid: &[f64],
    settings: &EvalSettings,
) -> RabiSweep {
    let settings = EvalSettings {
        tip_samples: settings.tip_samples.max(2),
        ..*settings
    };
    let w1max = family.omega1_max();
    let results = settings.execution.map(omega1_grid, |&w1| {
        if !(w1max > 0.0) {
            return Err(Error::domain("waveform has no transverse field to rescale"));
        }
        let m = EnsembleMember {
            rabi_scale: w1 / w1max,
            ..member.clone()
        };
        evaluate_member(
            family,
            &m,
            x,
            &EvalSettings {
                execution: Execution::Sequential,
                ..settings
            },
            false,
        )
    });
    let mut out = RabiSweep::default();
    for (i, (&w1, r)) in omega1_grid.iter().zip(results).enumerate() {
        out.omega1.push(w1);
        match r {
            Ok(e) => {
                out.infidelity.push(1.0 - e.metrics.phi0);
                out.ad_infidelity.push(1.0 - e.metrics.phi_ad);
                out.per_infidelity.push(e.metrics.phi_per.map(|v| 1.0 - v));
                out.alpha_max_deg
                    .push(e.alpha_max.unwrap_or(f64::NAN) * 180.0 / PI);
                out.errors.push(None);
            }
            Err(e) => {
                let e = Error::GridPoint {
                    index: i,
                    abscissa: w1,
                    source: Box::new(e),
                };
                log::warn!("{e}");
                out.infidelity.push(f64::NAN);
                out.ad_infidelity.push(f64::NAN);
                out.per_infidelity.push(None);
                out.alpha_max_deg.push(f64::NAN);
                out.errors.push(Some(e.to_string()));
            }
        }
    }
    out
}

/// Pulse train with dephasing waits and a Lorentzian offset ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseTrainConfig {
    pub n_max: usize,
    /// Wait between pulses (s).
    pub t_wait: f64,
    /// Dephasing time during waits (s); may be infinite.
    pub t2: f64,
    /// Inhomogeneous dephasing time setting the offset distribution (s).
    pub t2_star: f64,
    /// Deterministic carrier detuning added to every node (rad/s).
    #[serde(default)]
    pub detuning: f64,
    #[serde(default = "default_nodes")]
    pub offset_nodes: usize,
    /// Truncation of the Lorentzian in units of its half width.
    #[serde(default = "default_truncation")]
    pub truncation: f64,
}

fn default_nodes() -> usize {
    33
}

fn default_truncation() -> f64 {
    5.0
}

impl PulseTrainConfig {
    pub fn new(n_max: usize, t_wait: f64, t2: f64, t2_star: f64) -> Self {
        Self {
            n_max,
            t_wait,
            t2,
            t2_star,
            detuning: 0.0,
            offset_nodes: default_nodes(),
            truncation: default_truncation(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_wait > 0.0) || !(self.t2 > 0.0) || !(self.t2_star > 0.0) {
            return Err(Error::domain("t_wait, T2 and T2* must be positive"));
        }
        if self.n_max < 1 || self.offset_nodes < 1 {
            return Err(Error::domain("n_max and offset_nodes must be at least 1"));
        }
        Ok(())
    }

    /// Offset nodes (rad/s, without the carrier detuning) with equal weights.
    pub fn offsets(&self) -> Vec<f64> {
        lorentzian_nodes(1.0 / self.t2_star, self.truncation, self.offset_nodes)
    }
}

/// Midpoint quantiles of a Lorentzian with half width `hwhm` truncated to
/// `±truncation·hwhm`.
pub fn lorentzian_nodes(hwhm: f64, truncation: f64, count: usize) -> Vec<f64> {
    let edge = truncation.atan();
    (0..count)
        .map(|i| {
            let q = (i as f64 + 0.5) / count as f64;
            hwhm * ((2.0 * q - 1.0) * edge).tan()
        })
        .collect()
}

/// Free precession at `offset` for `t_wait` with pure dephasing at rate
/// `1/T2`: the coherence is multiplied by `e^{−t_w/T2}·e^{iδ·t_w}`.
pub fn dephasing_wait(rho: &Mat2, offset: f64, t_wait: f64, t2: f64) -> Mat2 {
    let f = C64::from_polar((-t_wait / t2).exp(), offset * t_wait);
    let c = rho[(0, 1)] * f;
    Mat2::new(rho[(0, 0)], c, c.conj(), rho[(1, 1)])
}

/// Applies the train to a density matrix per offset node. `unitaries[i]` is
/// the pulse seen by the node at total offset `offsets[i]`. Returns the
/// sign-folded ensemble mean `M_z(n)` for `n = 0..=n_max`.
pub fn pulse_train_from_unitaries(
    unitaries: &[Mat2],
    offsets: &[f64],
    cfg: &PulseTrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if unitaries.len() != offsets.len() || unitaries.is_empty() {
        return Err(Error::domain("need one unitary per offset node"));
    }
    let mut sums = vec![KahanSum::default(); cfg.n_max + 1];
    for (u, &off) in unitaries.iter().zip(offsets) {
        let ud = u.adjoint();
        let mut rho = Mat2::new(
            C64::new(1.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
        );
        sums[0].add(1.0);
        for (n, s) in sums.iter_mut().enumerate().skip(1) {
            rho = u * rho * ud;
            let mz = (rho[(0, 0)] - rho[(1, 1)]).re;
            s.add(if n % 2 == 0 { mz } else { -mz });
            rho = dephasing_wait(&rho, off, cfg.t_wait, cfg.t2);
        }
    }
    let k = unitaries.len() as f64;
    Ok(sums.iter().map(|s| s.value() / k).collect())
}

/// Per-node pulse unitaries for a train at one Rabi scale.
fn train_unitaries(
    family: &Arc<Ansatz>,
    x: &[f64],
    rabi_scale: f64,
    totals: &[f64],
    opts: &SolverOptions,
    execution: Execution,
) -> Result<Vec<Mat2>> {
    execution
        .map(totals, |&off| {
            pulse_unitary(&MemberField::new(family.clone(), rabi_scale, off), x, opts)
        })
        .into_iter()
        .collect()
}

/// Sign-folded `M_z(n)`, `n = 0..=n_max`, for a pulse at one Rabi scale.
pub fn pulse_train_decay(
    family: &Arc<Ansatz>,
    x: &[f64],
    rabi_scale: f64,
    cfg: &PulseTrainConfig,
    opts: &SolverOptions,
    execution: Execution,
) -> Result<ResponseCurve> {
    cfg.validate()?;
    let totals: Vec<f64> = cfg.offsets().iter().map(|o| o + cfg.detuning).collect();
    let us = train_unitaries(family, x, rabi_scale, &totals, opts, execution)?;
    let mz = pulse_train_from_unitaries(&us, &totals, cfg)?;
    Ok(ResponseCurve::new(
        "n",
        "mz",
        (0..=cfg.n_max).map(|n| n as f64).collect(),
        mz,
    ))
}

/// `M_z(n)` averaged over a Rabi-frequency distribution: `rabi_scales[i]`
/// with weight `weights[i]` (normalized here).
pub fn ensemble_train_decay(
    family: &Arc<Ansatz>,
    x: &[f64],
    rabi_scales: &[f64],
    weights: &[f64],
    cfg: &PulseTrainConfig,
    opts: &SolverOptions,
    execution: Execution,
) -> Result<ResponseCurve> {
    if rabi_scales.len() != weights.len() || rabi_scales.is_empty() {
        return Err(Error::domain("need one weight per Rabi scale"));
    }
    let wsum: f64 = weights.iter().sum();
    if !(wsum > 0.0) || weights.iter().any(|w| *w < 0.0) {
        return Err(Error::domain(
            "Rabi weights must be non-negative with positive sum",
        ));
    }
    let curves = execution.map(rabi_scales, |&r| {
        pulse_train_decay(family, x, r, cfg, opts, Execution::Sequential)
    });
    let mut acc = vec![KahanSum::default(); cfg.n_max + 1];
    for (c, w) in curves.into_iter().zip(weights) {
        for (a, v) in acc.iter_mut().zip(c?.ordinate) {
            a.add(w / wsum * v);
        }
    }
    Ok(ResponseCurve::new(
        "n",
        "mz",
        (0..=cfg.n_max).map(|n| n as f64).collect(),
        acc.iter().map(KahanSum::value).collect(),
    ))
}

/// Exponential fit `M_z(n) ≈ c·𝒜ⁿ` by least squares on `ln M_z` over the
/// points with `n ≥ 1` and `M_z > floor`. Returns `(𝒜, c)`.
pub fn fit_per_pulse_accuracy(n: &[f64], mz: &[f64], floor: f64) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = n
        .iter()
        .zip(mz)
        .filter(|(k, m)| **k >= 1.0 && **m > floor && m.is_finite())
        .map(|(k, m)| (*k, m.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::domain(
            "too few positive points for an exponential fit",
        ));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::domain("degenerate abscissa in exponential fit"));
    }
    let slope = sxy / sxx;
    Ok((slope.exp(), (my - slope * mx).exp()))
}

/// `M_z` after `n_pulses` as a function of carrier detuning. Trains longer
/// than `n_cap` are simulated to `n_cap` and extrapolated with an
/// exponential fit over the second half of the simulated curve.
pub fn offset_sweep(
    family: &Arc<Ansatz>,
    x: &[f64],
    rabi_scale: f64,
    n_pulses: usize,
    detunings: &[f64],
    cfg: &PulseTrainConfig,
    n_cap: Option<usize>,
    opts: &SolverOptions,
    execution: Execution,
) -> ResponseCurve {
    let results = execution.map(detunings, |&d| {
        train_endpoint(family, x, rabi_scale, n_pulses, d, cfg, n_cap, opts)
    });
    detuning_curve(detunings, results)
}

/// [`offset_sweep`] averaged over a weighted distribution of Rabi scales.
pub fn ensemble_offset_sweep(
    family: &Arc<Ansatz>,
    x: &[f64],
    rabi_scales: &[f64],
    weights: &[f64],
    n_pulses: usize,
    detunings: &[f64],
    cfg: &PulseTrainConfig,
    n_cap: Option<usize>,
    opts: &SolverOptions,
    execution: Execution,
) -> Result<ResponseCurve> {
    if rabi_scales.len() != weights.len() || rabi_scales.is_empty() {
        return Err(Error::domain("need one weight per Rabi scale"));
    }
    let wsum: f64 = weights.iter().sum();
    if !(wsum > 0.0) || weights.iter().any(|w| *w < 0.0) {
        return Err(Error::domain(
            "Rabi weights must be non-negative with positive sum",
        ));
    }
    let points: Vec<(f64, f64)> = detunings
        .iter()
        .flat_map(|&d| rabi_scales.iter().map(move |&r| (d, r)))
        .collect();
    let values = execution.map(&points, |&(d, r)| {
        train_endpoint(family, x, r, n_pulses, d, cfg, n_cap, opts)
    });
    let mut values = values.into_iter();
    let results = detunings
        .iter()
        .map(|_| {
            let mut acc = KahanSum::default();
            let mut first_err = None;
            for (w, v) in weights.iter().zip(values.by_ref().take(rabi_scales.len())) {
                match v {
                    Ok(v) => acc.add(w / wsum * v),
                    Err(e) => {
                        first_err.get_or_insert(e);
                    }
                }
            }
            first_err.map_or(Ok(acc.value()), Err)
        })
        .collect();
    Ok(detuning_curve(detunings, results))
}

fn train_endpoint(
    family: &Arc<Ansatz>,
    x: &[f64],
    rabi_scale: f64,
    n_pulses: usize,
    detuning: f64,
    cfg: &PulseTrainConfig,
    n_cap: Option<usize>,
    opts: &SolverOptions,
) -> Result<f64> {
    let n_sim = n_cap.map_or(n_pulses, |c| c.min(n_pulses)).max(1);
    let c = PulseTrainConfig {
        n_max: n_sim,
        detuning,
        ..cfg.clone()
    };
    let curve = pulse_train_decay(family, x, rabi_scale, &c, opts, Execution::Sequential)?;
    if n_sim == n_pulses {
        return Ok(curve.ordinate[n_pulses]);
    }
    let half = n_sim / 2;
    match fit_per_pulse_accuracy(&curve.abscissa[half..], &curve.ordinate[half..], 1e-12) {
        Ok((a, c0)) => Ok(c0 * a.powf(n_pulses as f64)),
        Err(_) => Ok(0.0),
    }
}

fn detuning_curve(detunings: &[f64], results: Vec<Result<f64>>) -> ResponseCurve {
    let mut curve = ResponseCurve::new(
        "detuning_rad_s",
        "mz",
        detunings.to_vec(),
        Vec::with_capacity(detunings.len()),
    );
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => curve.ordinate.push(v),
            Err(e) => {
                curve.ordinate.push(f64::NAN);
                curve.errors[i] = Some(
                    Error::GridPoint {
                        index: i,
                        abscissa: detunings[i],
                        source: Box::new(e),
                    }
                    .to_string(),
                );
            }
        }
    }
    curve
}

/// Half width of the region around the peak where the curve stays above half
/// of its peak value, with linear interpolation of the crossings.
pub fn half_max_half_width(curve: &ResponseCurve) -> Option<f64> {
    let (lo, hi) = level_crossings(&curve.abscissa, &curve.ordinate, 0.5, true)?;
    Some(0.5 * (hi - lo))
}

/// Crossings of `level` (absolute, or relative to the peak) on both sides of
/// the maximum.
fn level_crossings(xs: &[f64], ys: &[f64], level: f64, relative: bool) -> Option<(f64, f64)> {
    let (ipk, &peak) = ys
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .max_by(|a, b| a.1.total_cmp(b.1))?;
    let lvl = if relative { level * peak } else { level };
    if peak < lvl {
        return None;
    }
    let cross = |i: usize, j: usize| {
        let (x0, x1, y0, y1) = (xs[i], xs[j], ys[i], ys[j]);
        if y1 == y0 {
            x0
        } else {
            x0 + (lvl - y0) / (y1 - y0) * (x1 - x0)
        }
    };
    let mut right = None;
    for j in ipk + 1..ys.len() {
        if !(ys[j] >= lvl) {
            right = Some(cross(j - 1, j));
            break;
        }
    }
    let mut left = None;
    for j in (0..ipk).rev() {
        if !(ys[j] >= lvl) {
            left = Some(cross(j + 1, j));
            break;
        }
    }
    Some((left?, right?))
}

/// Secular dipolar coefficient `μ0γ²ħ(1 − 3cos²θ)/(8π|r|³)` in rad/s, with
/// `θ` the angle between `r` and the static field along z.
pub fn dipolar_coefficient(r: [f64; 3], gamma: f64) -> f64 {
    let d2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
    let d = d2.sqrt();
    let cos2 = r[2] * r[2] / d2;
    MU0 * gamma * gamma * HBAR / (8.0 * PI * d * d2) * (1.0 - 3.0 * cos2)
}

/// Spin positions (m) and gyromagnetic ratio (rad/s/T).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinGeometry {
    pub positions: Vec<[f64; 3]>,
    pub gamma: f64,
    /// Seed of the displacement draw, when generated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl SpinGeometry {
    /// Center and face centers of a cube of side `side`, each displaced by a
    /// uniform draw on `[−jitter, jitter]³`.
    pub fn cube_face_centers(side: f64, jitter: f64, gamma: f64, seed: u64) -> Self {
        let h = side / 2.0;
        let base = [
            [0.0, 0.0, 0.0],
            [h, 0.0, 0.0],
            [-h, 0.0, 0.0],
            [0.0, h, 0.0],
            [0.0, -h, 0.0],
            [0.0, 0.0, h],
            [0.0, 0.0, -h],
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Uniform::new_inclusive(-jitter, jitter);
        let positions = base
            .iter()
            .map(|p| {
                [
                    p[0] + u.sample(&mut rng),
                    p[1] + u.sample(&mut rng),
                    p[2] + u.sample(&mut rng),
                ]
            })
            .collect();
        Self {
            positions,
            gamma,
            seed: Some(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// `d_jk` for `j < k`, row-major over pairs.
    pub fn couplings(&self) -> Result<Vec<(usize, usize, f64)>> {
        let mut out = Vec::new();
        for j in 0..self.len() {
            for k in j + 1..self.len() {
                let (a, b) = (self.positions[j], self.positions[k]);
                let r = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
                if !(r.iter().map(|v| v * v).sum::<f64>() > 0.0) {
                    return Err(Error::domain(format!("spins {j} and {k} coincide")));
                }
                out.push((j, k, dipolar_coefficient(r, self.gamma)));
            }
        }
        Ok(out)
    }

    pub fn max_coupling(&self) -> Result<f64> {
        Ok(self
            .couplings()?
            .iter()
            .fold(0.0f64, |m, c| m.max(c.2.abs())))
    }

    /// Coefficients of `2σzσz − σxσx − σyσy` for every pair.
    pub fn pair_coefficients(
        &self,
        convention: DipolarConvention,
    ) -> Result<Vec<(usize, usize, f64)>> {
        let f = convention.factor();
        Ok(self
            .couplings()?
            .into_iter()
            .map(|(j, k, d)| (j, k, f * d))
            .collect())
    }
}

/// How `d_jk` scales the pair operator `2σzσz − σxσx − σyσy`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DipolarConvention {
    /// `d(3IzIz − I·I)` with `I = σ/2`, i.e. a prefactor `d/4`.
    #[default]
    SpinOperators,
    /// Prefactor `d/2`: twice the spin-operator coupling.
    HalfPauli,
}

impl DipolarConvention {
    pub fn factor(self) -> f64 {
        match self {
            DipolarConvention::SpinOperators => 0.25,
            DipolarConvention::HalfPauli => 0.5,
        }
    }
}

pub const MAX_SPINS: usize = 7;

/// Largest accepted `|‖ψ(T)‖² − 1|` of a multi-spin solve.
pub const MULTISPIN_NORM_TOL: f64 = 1e-10;
const MULTISPIN_RTOL_FLOOR: f64 = 1e-14;

/// Coupled spins under a common field, state-vector representation.
/// Site 0 is the most significant bit; bit value 1 is spin down.
#[derive(Clone, Debug)]
pub struct MultiSpinSystem {
    spins: usize,
    diag: Vec<f64>,
    flips: Vec<(usize, f64)>,
}

impl MultiSpinSystem {
    /// `couplings` are `(j, k, c_jk)` for the term
    /// `c_jk(2σzσz − σxσx − σyσy)`.
    pub fn new(spins: usize, couplings: &[(usize, usize, f64)]) -> Result<Self> {
        if spins > MAX_SPINS {
            return Err(Error::DimensionTooLarge {
                spins,
                max: MAX_SPINS,
            });
        }
        let dim = 1usize << spins;
        let bit = |j: usize| 1usize << (spins - 1 - j);
        let mut diag = vec![0.0; dim];
        let mut flips = Vec::new();
        for &(j, k, c) in couplings {
            let (mj, mk) = (bit(j), bit(k));
            for (i, v) in diag.iter_mut().enumerate() {
                let zj = if i & mj == 0 { 1.0 } else { -1.0 };
                let zk = if i & mk == 0 { 1.0 } else { -1.0 };
                *v += 2.0 * c * zj * zk;
            }
            // σxσx + σyσy = 2(σ+σ− + σ−σ+)
            flips.push((mj | mk, 2.0 * c));
        }
        Ok(Self { spins, diag, flips })
    }

    pub fn dim(&self) -> usize {
        1 << self.spins
    }

    /// `out = −i·H(b)·psi`
    pub fn apply(&self, b: &EffectiveField, psi: &[C64], out: &mut [C64]) {
        let n = self.spins;
        let bp = C64::new(b.bx, -b.by);
        let bm = C64::new(b.bx, b.by);
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = psi[i] * self.diag[i];
            for j in 0..n {
                let m = 1usize << (n - 1 - j);
                // −½(b·σ_j): diagonal ∓bz/2, off-diagonal −(bx ∓ i by)/2.
                if i & m == 0 {
                    acc += -0.5 * (b.bz * psi[i] + bp * psi[i ^ m]);
                } else {
                    acc += -0.5 * (-b.bz * psi[i] + bm * psi[i ^ m]);
                }
            }
            for &(mask, d) in &self.flips {
                let pair = i & mask;
                if pair != 0 && pair != mask {
                    acc -= psi[i ^ mask] * d;
                }
            }
            *o = C64::new(acc.im, -acc.re);
        }
    }

    /// Probability of spin `j` pointing down.
    pub fn down_probability(&self, psi: &[C64], j: usize) -> f64 {
        let m = 1usize << (self.spins - 1 - j);
        psi.iter()
            .enumerate()
            .filter(|(i, _)| i & m != 0)
            .map(|(_, c)| c.norm_sqr())
            .sum()
    }

    /// Reduced density matrix of spin `j`.
    pub fn reduced_density(&self, psi: &[C64], j: usize) -> Mat2 {
        let m = 1usize << (self.spins - 1 - j);
        let mut rho = Mat2::zeros();
        for (i, c) in psi.iter().enumerate() {
            if i & m == 0 {
                rho[(0, 0)] += c.norm_sqr();
                rho[(0, 1)] += c * psi[i | m].conj();
            } else {
                rho[(1, 1)] += c.norm_sqr();
            }
        }
        rho[(1, 0)] = rho[(0, 1)].conj();
        rho
    }

    /// Final state from all spins up.
    ///
    /// The norm drift is a lower bound on the global error and grows in
    /// proportion to the tolerance, so a solve whose drift exceeds
    /// [`MULTISPIN_NORM_TOL`] is repeated at a proportionally tighter
    /// tolerance. The state is never renormalized.
    pub fn evolve(
        &self,
        field: &dyn FieldFamily,
        x: &[f64],
        opts: &SolverOptions,
    ) -> Result<Vec<C64>> {
        let mut psi0 = vec![C64::new(0.0, 0.0); self.dim()];
        psi0[0] = C64::new(1.0, 0.0);
        let rhs = |t: f64, y: &[C64], dy: &mut [C64]| -> Result<()> {
            let b = field.field(x, t)?;
            self.apply(&b, y, dy);
            Ok(())
        };
        let mut opts = *opts;
        loop {
            let psi = integrate(rhs, 0.0, field.duration(), &psi0, &opts, |_| {})?.0;
            let drift = (psi.iter().map(|c| c.norm_sqr()).sum::<f64>() - 1.0).abs();
            if drift <= MULTISPIN_NORM_TOL {
                return Ok(psi);
            }
            if opts.rtol <= MULTISPIN_RTOL_FLOOR {
                return Err(Error::SolverFailure {
                    t: field.duration(),
                    reason: format!("multi-spin norm drift {drift:e} at the tolerance floor"),
                });
            }
            let f = (0.3 * MULTISPIN_NORM_TOL / drift).clamp(1e-3, 0.5);
            let rtol = (opts.rtol * f).max(MULTISPIN_RTOL_FLOOR);
            opts.atol *= rtol / opts.rtol;
            opts.rtol = rtol;
        }
    }
}

/// Mean single-spin inversion fidelity of the coupled system at each Rabi
/// scale (all spins share the field).
pub fn multispin_dipolar_sim(
    family: &Arc<Ansatz>,
    x: &[f64],
    geometry: &SpinGeometry,
    convention: DipolarConvention,
    rabi_scales: &[f64],
    opts: &SolverOptions,
    execution: Execution,
) -> Result<Vec<f64>> {
    let system = MultiSpinSystem::new(geometry.len(), &geometry.pair_coefficients(convention)?)?;
    execution
        .map(rabi_scales, |&r| {
            let field = MemberField::new(family.clone(), r, 0.0);
            let psi = system.evolve(&field, x, opts)?;
            let n = geometry.len();
            Ok((0..n)
                .map(|j| system.down_probability(&psi, j))
                .sum::<f64>()
                / n as f64)
        })
        .into_iter()
        .enumerate()
        .map(|(i, r): (usize, Result<f64>)| {
            r.map_err(|e| Error::GridPoint {
                index: i,
                abscissa: rabi_scales[i],
                source: Box::new(e),
            })
        })
        .collect()
}

/// `φ0ᴹ` against resonance offset, with band and edge widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectivityProfile {
    pub curve: ResponseCurve,
    pub repetitions: u32,
    /// Width of the region around the peak with `φ0ᴹ ≥ 0.1` (rad/s).
    pub band_width: Option<f64>,
    /// 10%→90% transition widths of the lower and upper edges (rad/s).
    pub edge_widths: Option<(f64, f64)>,
}

/// Fidelity `|⟨ψT|U|ψ0⟩|²` at each offset, raised to the power `repetitions`.
pub fn selectivity_profile(
    family: &Arc<Ansatz>,
    x: &[f64],
    rabi_scale: f64,
    psi0: &SpinState,
    target: &SpinState,
    offsets: &[f64],
    repetitions: u32,
    opts: &SolverOptions,
    execution: Execution,
) -> Result<SelectivityProfile> {
    if repetitions < 1 {
        return Err(Error::domain("repetition count must be at least 1"));
    }
    let phis = execution.map(offsets, |&d| -> Result<f64> {
        let u = pulse_unitary(&MemberField::new(family.clone(), rabi_scale, d), x, opts)?;
        Ok(crate::metrics::fidelity_metric(&u, psi0, target).powi(repetitions as i32))
    });
    let ys = phis.into_iter().collect::<Result<Vec<f64>>>()?;
    let band = level_crossings(offsets, &ys, 0.1, false).map(|(l, h)| h - l);
    let edges = (|| {
        let (l10, h10) = level_crossings(offsets, &ys, 0.1, false)?;
        let (l90, h90) = level_crossings(offsets, &ys, 0.9, false)?;
        Some((l90 - l10, h10 - h90))
    })();
    Ok(SelectivityProfile {
        curve: ResponseCurve::new("offset_rad_s", "phi0_pow_m", offsets.to_vec(), ys),
        repetitions,
        band_width: band,
        edge_widths: edges,
    })
}

/// `∫p·ζ / ∫p` by the trapezoidal rule on the weight table's abscissa,
/// restricted to the range of the response curve.
pub fn weighted_signal(response: &ResponseCurve, table: &[(f64, f64)]) -> Result<f64> {
    if table.iter().any(|(_, p)| *p < 0.0 || !p.is_finite()) {
        return Err(Error::domain("weights must be finite and non-negative"));
    }
    let pts: Vec<(f64, f64, f64)> = table
        .iter()
        .filter_map(|&(w, p)| response.interpolate(w).map(|z| (w, p, z)))
        .collect();
    match pts.len() {
        0 => Err(Error::EmptyOverlap),
        1 if pts[0].1 > 0.0 => Ok(pts[0].2),
        1 => Err(Error::EmptyOverlap),
        _ => {
            let mut num = KahanSum::default();
            let mut den = KahanSum::default();
            for w in pts.windows(2) {
                let h = w[1].0 - w[0].0;
                num.add(0.5 * h * (w[0].1 * w[0].2 + w[1].1 * w[1].2));
                den.add(0.5 * h * (w[0].1 + w[1].1));
            }
            if !(den.value() > 0.0) {
                return Err(Error::EmptyOverlap);
            }
            Ok(num.value() / den.value())
        }
    }
}
