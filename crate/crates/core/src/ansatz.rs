//! Waveform families mapping control parameters `x` and time `t` to the
//! effective field and its 3×N Jacobian.

use std::fmt::Debug;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::Matrix3xX;
use serde::{Deserialize, Serialize};

use crate::spinalg::EffectiveField;
use crate::{Error, Result};

/// ∂b/∂x, one column per control parameter.
pub type Jacobian = Matrix3xX<f64>;

/// A differentiable map `(x, t) -> b` on `[0, T]`.
pub trait FieldFamily: Debug + Send + Sync {
    fn num_params(&self) -> usize;
    fn duration(&self) -> f64;
    fn field(&self, x: &[f64], t: f64) -> Result<EffectiveField>;
    fn jacobian(&self, x: &[f64], t: f64) -> Result<Jacobian>;
    /// Characteristic angular frequency, used to scale degeneracy thresholds.
    fn field_scale(&self) -> f64;
}

fn check_time(t: f64, duration: f64) -> Result<()> {
    // Allow round-off at the end points from solvers stepping onto T.
    let slack = 1e-12 * duration;
    if !(t >= -slack && t <= duration + slack) {
        return Err(Error::domain(format!(
            "t = {t:e} outside [0, {duration:e}]"
        )));
    }
    Ok(())
}

fn check_len(x: &[f64], n: usize) -> Result<()> {
    if x.len() != n {
        return Err(Error::domain(format!(
            "parameter vector has {} entries, ansatz expects {n}",
            x.len()
        )));
    }
    Ok(())
}

fn sech2(a: f64) -> f64 {
    let t = a.tanh();
    1.0 - t * t
}

/// Soft-clipped polynomial AFP: `bx = ω1max·tanh a_x`, `by = 0`,
/// `bz = Δωmax·tanh a_z` with `a_x` even and `a_z` odd about `T/2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyAfpAnsatz {
    pub num_params: usize,
    pub duration: f64,
    pub omega1_max: f64,
    pub delta_omega_max: f64,
}

impl PolyAfpAnsatz {
    pub fn new(
        num_params: usize,
        duration: f64,
        omega1_max: f64,
        delta_omega_max: f64,
    ) -> Result<Self> {
        let a = Self {
            num_params,
            duration,
            omega1_max,
            delta_omega_max,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_params < 2 || self.num_params % 2 != 0 {
            return Err(Error::domain(format!(
                "polynomial AFP needs an even parameter count >= 2, got {}",
                self.num_params
            )));
        }
        if !(self.duration > 0.0 && self.omega1_max > 0.0 && self.delta_omega_max > 0.0) {
            return Err(Error::domain("duration, ω1max and Δωmax must be positive"));
        }
        Ok(())
    }

    fn half(&self) -> usize {
        self.num_params / 2
    }

    /// `(a_x, a_z)` at time `t`.
    pub fn polynomials(&self, x: &[f64], t: f64) -> Result<(f64, f64)> {
        check_len(x, self.num_params)?;
        check_time(t, self.duration)?;
        let (u, one_minus_v) = self.variables(t);
        let v = u * u;
        let m = self.half();
        // a_x = Σ x_n (1 − vⁿ) = (1 − v)·Σ_k v^k·(x_{k+1} + … + x_m)
        let mut tail = 0.0;
        let mut acc = 0.0;
        for k in (0..m).rev() {
            tail += x[k];
            acc = acc * v + tail;
        }
        let ax = one_minus_v * acc;
        // a_z = u·Σ_m x_{M+m} v^{m−1}
        let az = u * x[m..].iter().rev().fold(0.0, |acc, &c| acc * v + c);
        Ok((ax, az))
    }

    /// `u = 1 − 2t/T` and `1 − u² = 4(t/T)(1 − t/T)`, the latter computed
    /// without cancellation near the end points.
    fn variables(&self, t: f64) -> (f64, f64) {
        let s = (t / self.duration).clamp(0.0, 1.0);
        (1.0 - 2.0 * s, 4.0 * s * (1.0 - s))
    }
}

impl FieldFamily for PolyAfpAnsatz {
    fn num_params(&self) -> usize {
        self.num_params
    }

    fn duration(&self) -> f64 {
        self.duration
    }

    fn field(&self, x: &[f64], t: f64) -> Result<EffectiveField> {
        let (ax, az) = self.polynomials(x, t)?;
        Ok(EffectiveField::new(
            self.omega1_max * ax.tanh(),
            0.0,
            self.delta_omega_max * az.tanh(),
        ))
    }

    fn jacobian(&self, x: &[f64], t: f64) -> Result<Jacobian> {
        let (ax, az) = self.polynomials(x, t)?;
        let (u, one_minus_v) = self.variables(t);
        let v = u * u;
        let m = self.half();
        let gx = self.omega1_max * sech2(ax);
        let gz = self.delta_omega_max * sech2(az);
        let mut jac = Jacobian::zeros(self.num_params);
        // 1 − vⁿ = (1 − v)(1 + v + … + v^{n−1})
        let mut geom = 0.0;
        let mut vk = 1.0;
        for n in 0..m {
            geom += vk;
            vk *= v;
            jac[(0, n)] = gx * one_minus_v * geom;
        }
        let mut odd = u;
        for n in 0..m {
            jac[(2, m + n)] = gz * odd;
            odd *= v;
        }
        Ok(jac)
    }

    fn field_scale(&self) -> f64 {
        self.omega1_max.max(self.delta_omega_max)
    }
}

/// `(t/T)(1−t/T)·Σ x_n (1−2t/T)^{n−m−1} + (t/T)(ξ′−ξ) + ξ` over
/// `coeffs = x[m..m′]`, pinned to `ξ` at `t = 0` and `ξ′` at `t = T`.
pub fn bridge_polynomial(coeffs: &[f64], xi0: f64, xi1: f64, t: f64, duration: f64) -> f64 {
    let s = t / duration;
    let u = 1.0 - 2.0 * s;
    let poly = coeffs.iter().rev().fold(0.0, |acc, &c| acc * u + c);
    s * (1.0 - s) * poly + s * (xi1 - xi0) + xi0
}

/// [`bridge_polynomial`] over the index range `m..m′` of a full parameter
/// vector.
pub fn bridge_polynomial_range(
    x: &[f64],
    range: Range<usize>,
    xi0: f64,
    xi1: f64,
    t: f64,
    duration: f64,
) -> Result<f64> {
    if range.start >= range.end || range.end > x.len() {
        return Err(Error::domain(format!(
            "bridge range {}..{} invalid for {} parameters",
            range.start,
            range.end,
            x.len()
        )));
    }
    check_time(t, duration)?;
    Ok(bridge_polynomial(&x[range], xi0, xi1, t, duration))
}

/// Three soft-clipped bridge polynomials pinning `b(0) ∝ n̂` and `b(T) ∝ n̂′`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArbitraryStateAnsatz {
    pub num_params: usize,
    pub duration: f64,
    pub omega1_max: f64,
    pub delta_omega_max: f64,
    pub initial: [f64; 3],
    pub target: [f64; 3],
}

impl ArbitraryStateAnsatz {
    pub fn new(
        num_params: usize,
        duration: f64,
        omega1_max: f64,
        delta_omega_max: f64,
        initial: [f64; 3],
        target: [f64; 3],
    ) -> Result<Self> {
        let a = Self {
            num_params,
            duration,
            omega1_max,
            delta_omega_max,
            initial,
            target,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_params == 0 || self.num_params % 3 != 0 {
            return Err(Error::domain(format!(
                "arbitrary-state ansatz needs a positive multiple of 3 parameters, got {}",
                self.num_params
            )));
        }
        if !(self.duration > 0.0 && self.omega1_max > 0.0 && self.delta_omega_max > 0.0) {
            return Err(Error::domain("duration, ω1max and Δωmax must be positive"));
        }
        for n in [&self.initial, &self.target] {
            let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if (norm - 1.0).abs() > 1e-12 {
                return Err(Error::domain(format!(
                    "Bloch direction norm {norm} is not 1"
                )));
            }
        }
        self.boundary_coefficients().map(|_| ())
    }

    /// `[(α, α′), (β, β′), (γ, γ′)]`.
    pub fn boundary_coefficients(&self) -> Result<[(f64, f64); 3]> {
        let zscale = self.omega1_max / (std::f64::consts::SQRT_2 * self.delta_omega_max);
        let atanh = |y: f64| -> Result<f64> {
            if !(y.abs() < 1.0) {
                return Err(Error::domain(format!(
                    "tanh⁻¹ argument {y} outside (−1, 1)"
                )));
            }
            Ok(y.atanh())
        };
        let (n, m) = (&self.initial, &self.target);
        Ok([
            (atanh(n[0])?, atanh(m[0])?),
            (atanh(n[1])?, atanh(m[1])?),
            (atanh(zscale * n[2])?, atanh(zscale * m[2])?),
        ])
    }

    fn arguments(&self, x: &[f64], t: f64) -> Result<[f64; 3]> {
        check_len(x, self.num_params)?;
        check_time(t, self.duration)?;
        let k = self.num_params / 3;
        let bc = self.boundary_coefficients()?;
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            *o = bridge_polynomial(&x[c * k..(c + 1) * k], bc[c].0, bc[c].1, t, self.duration);
        }
        Ok(out)
    }

    fn amplitudes(&self) -> [f64; 3] {
        let a = self.omega1_max / std::f64::consts::SQRT_2;
        [a, a, self.delta_omega_max]
    }
}

impl FieldFamily for ArbitraryStateAnsatz {
    fn num_params(&self) -> usize {
        self.num_params
    }

    fn duration(&self) -> f64 {
        self.duration
    }

    fn field(&self, x: &[f64], t: f64) -> Result<EffectiveField> {
        let f = self.arguments(x, t)?;
        let a = self.amplitudes();
        Ok(EffectiveField::new(
            a[0] * f[0].tanh(),
            a[1] * f[1].tanh(),
            a[2] * f[2].tanh(),
        ))
    }

    fn jacobian(&self, x: &[f64], t: f64) -> Result<Jacobian> {
        let f = self.arguments(x, t)?;
        let a = self.amplitudes();
        let k = self.num_params / 3;
        let s = (t / self.duration).clamp(0.0, 1.0);
        let u = 1.0 - 2.0 * s;
        let envelope = s * (1.0 - s);
        let mut jac = Jacobian::zeros(self.num_params);
        for c in 0..3 {
            let g = a[c] * sech2(f[c]) * envelope;
            let mut p = 1.0;
            for j in 0..k {
                jac[(c, c * k + j)] = g * p;
                p *= u;
            }
        }
        Ok(jac)
    }

    fn field_scale(&self) -> f64 {
        self.omega1_max.max(self.delta_omega_max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum BaselineShape {
    /// Amplitude `1 − |cos(πt/T)|^k`, linear sweep.
    Wurst { k: f64 },
    /// Amplitude `sech(β(2t/T−1))`, offset `tanh(β(2t/T−1))/tanh β`.
    SechTanh { beta: f64 },
}

/// Fixed-form literature waveform (no free control parameters).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineWaveform {
    pub shape: BaselineShape,
    pub duration: f64,
    pub omega1_max: f64,
    pub delta_omega_max: f64,
}

impl BaselineWaveform {
    pub const DEFAULT_WURST_K: f64 = 20.0;
    pub const DEFAULT_SECH_BETA: f64 = 5.3;

    pub fn new(
        shape: BaselineShape,
        duration: f64,
        omega1_max: f64,
        delta_omega_max: f64,
    ) -> Result<Self> {
        let w = Self {
            shape,
            duration,
            omega1_max,
            delta_omega_max,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.omega1_max > 0.0 && self.delta_omega_max > 0.0) {
            return Err(Error::domain("duration, ω1max and Δωmax must be positive"));
        }
        match self.shape {
            BaselineShape::Wurst { k } if !(k > 0.0) => {
                Err(Error::domain("WURST index must be positive"))
            }
            BaselineShape::SechTanh { beta } if !(beta > 0.0) => {
                Err(Error::domain("sech truncation must be positive"))
            }
            _ => Ok(()),
        }
    }
}

impl FieldFamily for BaselineWaveform {
    fn num_params(&self) -> usize {
        0
    }

    fn duration(&self) -> f64 {
        self.duration
    }

    fn field(&self, _x: &[f64], t: f64) -> Result<EffectiveField> {
        check_time(t, self.duration)?;
        let s = (t / self.duration).clamp(0.0, 1.0);
        let (amp, off) = match self.shape {
            BaselineShape::Wurst { k } => {
                let c = (std::f64::consts::PI * s).cos().abs();
                (1.0 - c.powf(k), 2.0 * s - 1.0)
            }
            BaselineShape::SechTanh { beta } => {
                let arg = beta * (2.0 * s - 1.0);
                (1.0 / arg.cosh(), arg.tanh() / beta.tanh())
            }
        };
        Ok(EffectiveField::new(
            self.omega1_max * amp,
            0.0,
            self.delta_omega_max * off,
        ))
    }

    fn jacobian(&self, _x: &[f64], t: f64) -> Result<Jacobian> {
        check_time(t, self.duration)?;
        Ok(Jacobian::zeros(0))
    }

    fn field_scale(&self) -> f64 {
        self.omega1_max.max(self.delta_omega_max)
    }
}

/// Waveform given by samples `(t, bx, by, bz)`, interpolated by natural cubic
/// splines. Used to simulate externally produced pulses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledWaveform {
    pub times: Vec<f64>,
    pub bx: Vec<f64>,
    pub by: Vec<f64>,
    pub bz: Vec<f64>,
    #[serde(skip)]
    splines: Option<[Spline; 3]>,
}

impl SampledWaveform {
    pub fn new(times: Vec<f64>, bx: Vec<f64>, by: Vec<f64>, bz: Vec<f64>) -> Result<Self> {
        let n = times.len();
        if n < 2 || bx.len() != n || by.len() != n || bz.len() != n {
            return Err(Error::domain(
                "sampled waveform needs ≥ 2 samples of equal length",
            ));
        }
        if times[0].abs() > 1e-15 * times[n - 1].abs().max(1.0) {
            return Err(Error::domain("sampled waveform must start at t = 0"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("sample times must be strictly increasing"));
        }
        let splines = [
            Spline::natural(&times, &bx),
            Spline::natural(&times, &by),
            Spline::natural(&times, &bz),
        ];
        Ok(Self {
            times,
            bx,
            by,
            bz,
            splines: Some(splines),
        })
    }

    /// Samples `family` at `samples` uniformly spaced times including both ends.
    pub fn from_family(family: &dyn FieldFamily, x: &[f64], samples: usize) -> Result<Self> {
        let samples = samples.max(2);
        let duration = family.duration();
        let mut times = Vec::with_capacity(samples);
        let (mut bx, mut by, mut bz) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..samples {
            let t = duration * i as f64 / (samples - 1) as f64;
            let b = family.field(x, t)?;
            times.push(t);
            bx.push(b.bx);
            by.push(b.by);
            bz.push(b.bz);
        }
        Self::new(times, bx, by, bz)
    }

    fn splines(&self) -> [Spline; 3] {
        match &self.splines {
            Some(s) => s.clone(),
            None => [
                Spline::natural(&self.times, &self.bx),
                Spline::natural(&self.times, &self.by),
                Spline::natural(&self.times, &self.bz),
            ],
        }
    }

    /// Rebuilds interpolation tables after deserialization.
    pub fn prepared(mut self) -> Result<Self> {
        if self.splines.is_none() {
            self = Self::new(self.times, self.bx, self.by, self.bz)?;
        }
        Ok(self)
    }
}

impl FieldFamily for SampledWaveform {
    fn num_params(&self) -> usize {
        0
    }

    fn duration(&self) -> f64 {
        *self.times.last().expect("validated non-empty")
    }

    fn field(&self, _x: &[f64], t: f64) -> Result<EffectiveField> {
        check_time(t, self.duration())?;
        let s = match &self.splines {
            Some(s) => [
                s[0].eval(&self.times, t),
                s[1].eval(&self.times, t),
                s[2].eval(&self.times, t),
            ],
            None => {
                let s = self.splines();
                [
                    s[0].eval(&self.times, t),
                    s[1].eval(&self.times, t),
                    s[2].eval(&self.times, t),
                ]
            }
        };
        Ok(EffectiveField::new(s[0], s[1], s[2]))
    }

    fn jacobian(&self, _x: &[f64], t: f64) -> Result<Jacobian> {
        check_time(t, self.duration())?;
        Ok(Jacobian::zeros(0))
    }

    fn field_scale(&self) -> f64 {
        self.bx
            .iter()
            .chain(&self.by)
            .chain(&self.bz)
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Natural cubic spline: values plus second derivatives at the knots.
#[derive(Clone, Debug, PartialEq)]
struct Spline {
    y: Vec<f64>,
    m: Vec<f64>,
}

impl Spline {
    fn natural(t: &[f64], y: &[f64]) -> Self {
        let n = t.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior knots.
            let mut c = vec![0.0; n];
            let mut d = vec![0.0; n];
            for i in 1..n - 1 {
                let h0 = t[i] - t[i - 1];
                let h1 = t[i + 1] - t[i];
                let rhs = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
                let diag = 2.0 * (h0 + h1) - h0 * c[i - 1];
                c[i] = h1 / diag;
                d[i] = (rhs - h0 * d[i - 1]) / diag;
            }
            for i in (1..n - 1).rev() {
                m[i] = d[i] - c[i] * m[i + 1];
            }
        }
        Self { y: y.to_vec(), m }
    }

    fn eval(&self, t: &[f64], at: f64) -> f64 {
        let n = t.len();
        let i = match t.partition_point(|&v| v <= at) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        };
        let h = t[i + 1] - t[i];
        let a = (t[i + 1] - at) / h;
        let b = (at - t[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

/// A field map evaluated at fixed parameters, for callers that only hold a
/// waveform (e.g. a constant field in tests).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantField {
    pub b: EffectiveField,
    pub duration: f64,
}

impl FieldFamily for ConstantField {
    fn num_params(&self) -> usize {
        3
    }

    fn duration(&self) -> f64 {
        self.duration
    }

    /// `x` overrides the stored field when it has three entries.
    fn field(&self, x: &[f64], _t: f64) -> Result<EffectiveField> {
        Ok(match x {
            [bx, by, bz] => EffectiveField::new(*bx, *by, *bz),
            _ => self.b,
        })
    }

    fn jacobian(&self, _x: &[f64], _t: f64) -> Result<Jacobian> {
        Ok(Jacobian::from_fn(3, |i, j| if i == j { 1.0 } else { 0.0 }))
    }

    fn field_scale(&self) -> f64 {
        self.b.norm().max(1.0)
    }
}

/// Serializable union of the waveform families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Ansatz {
    PolyAfp(PolyAfpAnsatz),
    ArbitraryState(ArbitraryStateAnsatz),
    Baseline(BaselineWaveform),
    Sampled(SampledWaveform),
    Constant(ConstantField),
}

impl Ansatz {
    fn inner(&self) -> &dyn FieldFamily {
        match self {
            Ansatz::PolyAfp(a) => a,
            Ansatz::ArbitraryState(a) => a,
            Ansatz::Baseline(a) => a,
            Ansatz::Sampled(a) => a,
            Ansatz::Constant(a) => a,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Ansatz::PolyAfp(a) => a.validate(),
            Ansatz::ArbitraryState(a) => a.validate(),
            Ansatz::Baseline(a) => a.validate(),
            Ansatz::Sampled(_) => Ok(()),
            Ansatz::Constant(a) => {
                if a.b.is_finite() && a.duration > 0.0 {
                    Ok(())
                } else {
                    Err(Error::domain(
                        "constant field needs a finite field and positive duration",
                    ))
                }
            }
        }
    }

    /// Nominal maximum Rabi frequency the waveform was designed for.
    pub fn omega1_max(&self) -> f64 {
        match self {
            Ansatz::PolyAfp(a) => a.omega1_max,
            Ansatz::ArbitraryState(a) => a.omega1_max,
            Ansatz::Baseline(a) => a.omega1_max,
            Ansatz::Sampled(a) => {
                a.bx.iter()
                    .zip(&a.by)
                    .fold(0.0f64, |m, (x, y)| m.max(x.hypot(*y)))
            }
            Ansatz::Constant(a) => a.b.bx.hypot(a.b.by),
        }
    }

    /// Copy with every frequency multiplied by `factor` and durations divided
    /// by it; the waveform shape in units of its Rabi cycle is unchanged.
    pub fn rescaled(&self, factor: f64) -> Result<Ansatz> {
        if !(factor > 0.0) {
            return Err(Error::domain("rescale factor must be positive"));
        }
        Ok(match self {
            Ansatz::PolyAfp(a) => Ansatz::PolyAfp(PolyAfpAnsatz {
                duration: a.duration / factor,
                omega1_max: a.omega1_max * factor,
                delta_omega_max: a.delta_omega_max * factor,
                ..a.clone()
            }),
            Ansatz::ArbitraryState(a) => Ansatz::ArbitraryState(ArbitraryStateAnsatz {
                duration: a.duration / factor,
                omega1_max: a.omega1_max * factor,
                delta_omega_max: a.delta_omega_max * factor,
                ..a.clone()
            }),
            Ansatz::Baseline(a) => Ansatz::Baseline(BaselineWaveform {
                duration: a.duration / factor,
                omega1_max: a.omega1_max * factor,
                delta_omega_max: a.delta_omega_max * factor,
                ..a.clone()
            }),
            Ansatz::Sampled(a) => Ansatz::Sampled(SampledWaveform::new(
                a.times.iter().map(|t| t / factor).collect(),
                a.bx.iter().map(|v| v * factor).collect(),
                a.by.iter().map(|v| v * factor).collect(),
                a.bz.iter().map(|v| v * factor).collect(),
            )?),
            Ansatz::Constant(a) => Ansatz::Constant(ConstantField {
                b: EffectiveField::new(a.b.bx * factor, a.b.by * factor, a.b.bz * factor),
                duration: a.duration / factor,
            }),
        })
    }
}

impl FieldFamily for Ansatz {
    fn num_params(&self) -> usize {
        self.inner().num_params()
    }

    fn duration(&self) -> f64 {
        self.inner().duration()
    }

    fn field(&self, x: &[f64], t: f64) -> Result<EffectiveField> {
        self.inner().field(x, t)
    }

    fn jacobian(&self, x: &[f64], t: f64) -> Result<Jacobian> {
        self.inner().jacobian(x, t)
    }

    fn field_scale(&self) -> f64 {
        self.inner().field_scale()
    }
}

/// A family as seen by one ensemble member: transverse components scaled by
/// the member's Rabi factor, longitudinal component shifted by its resonance
/// offset.
#[derive(Clone, Debug)]
pub struct MemberField {
    pub family: Arc<Ansatz>,
    pub rabi_scale: f64,
    pub offset: f64,
}

impl MemberField {
    pub fn new(family: Arc<Ansatz>, rabi_scale: f64, offset: f64) -> Self {
        Self {
            family,
            rabi_scale,
            offset,
        }
    }

    pub fn nominal(family: Arc<Ansatz>) -> Self {
        Self::new(family, 1.0, 0.0)
    }
}

impl FieldFamily for MemberField {
    fn num_params(&self) -> usize {
        self.family.num_params()
    }

    fn duration(&self) -> f64 {
        self.family.duration()
    }

    fn field(&self, x: &[f64], t: f64) -> Result<EffectiveField> {
        let b = self.family.field(x, t)?;
        Ok(EffectiveField::new(
            self.rabi_scale * b.bx,
            self.rabi_scale * b.by,
            b.bz + self.offset,
        ))
    }

    fn jacobian(&self, x: &[f64], t: f64) -> Result<Jacobian> {
        let mut j = self.family.jacobian(x, t)?;
        for c in 0..j.ncols() {
            j[(0, c)] *= self.rabi_scale;
            j[(1, c)] *= self.rabi_scale;
        }
        Ok(j)
    }

    fn field_scale(&self) -> f64 {
        (self.family.field_scale() * self.rabi_scale.max(1.0)).max(self.offset.abs())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn poly(n: usize) -> PolyAfpAnsatz {
        PolyAfpAnsatz::new(n, 2.0, 3.0, 5.0).unwrap()
    }

    /// Central finite differences of `field` with step `1e-6 (1 + |x_n|)`.
    fn fd_jacobian(f: &dyn FieldFamily, x: &[f64], t: f64) -> Jacobian {
        let mut jac = Jacobian::zeros(x.len());
        for n in 0..x.len() {
            let h = 1e-6 * (1.0 + x[n].abs());
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[n] += h;
            xm[n] -= h;
            let bp = f.field(&xp, t).unwrap().as_vector();
            let bm = f.field(&xm, t).unwrap().as_vector();
            jac.set_column(n, &((bp - bm) / (2.0 * h)));
        }
        jac
    }

    fn assert_jacobian_matches(f: &dyn FieldFamily, x: &[f64], t: f64) {
        let a = f.jacobian(x, t).unwrap();
        let fd = fd_jacobian(f, x, t);
        let scale = fd.norm().max(1e-8);
        assert!((&a - &fd).norm() <= 1e-6 * scale, "t={t}: {a} vs {fd}");
    }

    #[test]
    fn poly_boundary_and_center() {
        let a = poly(8);
        let x = [0.3, -1.0, 2.0, 0.5, 1.0, -0.2, 0.7, 0.1];
        assert_eq!(a.field(&x, 0.0).unwrap().bx, 0.0);
        assert_eq!(a.field(&x, 2.0).unwrap().bx, 0.0);
        assert_eq!(a.field(&x, 1.0).unwrap().bz, 0.0);
        let mut big = [0.0; 8];
        big[0] = 1e6;
        let b = a.field(&big, 1.0).unwrap();
        assert_relative_eq!(b.bx, 3.0, epsilon = 1e-15);
    }

    #[test]
    fn poly_jacobian_structure() {
        let a = poly(6);
        let x = [0.4, -0.3, 0.8, 0.2, -0.5, 0.1];
        let j0 = a.jacobian(&x, 0.0).unwrap();
        for n in 0..3 {
            assert_eq!(j0[(0, n)], 0.0);
        }
        let j = a.jacobian(&x, 0.7).unwrap();
        for n in 0..6 {
            assert_eq!(j[(1, n)], 0.0);
        }
        for n in 0..3 {
            assert_eq!(j[(2, n)], 0.0);
            assert_eq!(j[(0, n + 3)], 0.0);
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let a = poly(10);
        let x: Vec<f64> = (0..10).map(|i| ((i as f64) * 0.77).sin()).collect();
        for t in [0.0, 0.13, 0.5, 1.0, 1.61, 2.0] {
            assert_jacobian_matches(&a, &x, t);
        }
        let c = ArbitraryStateAnsatz::new(
            12,
            2.0,
            1.0,
            4.0,
            [FRAC_1_SQRT_2, 0.0, FRAC_1_SQRT_2],
            [0.0, 0.6, -0.8],
        )
        .unwrap();
        let x: Vec<f64> = (0..12).map(|i| ((i as f64) * 1.3).cos()).collect();
        for t in [0.0, 0.3, 1.0, 1.9, 2.0] {
            assert_jacobian_matches(&c, &x, t);
        }
        let m = MemberField::new(Arc::new(Ansatz::ArbitraryState(c)), 1.3, 0.2);
        assert_jacobian_matches(&m, &x, 0.8);
    }

    #[test]
    fn bridge_endpoints() {
        let c = [0.5, -2.0, 1.0];
        assert_eq!(bridge_polynomial(&c, 0.3, -0.7, 0.0, 4.0), 0.3);
        assert_relative_eq!(
            bridge_polynomial(&c, 0.3, -0.7, 4.0, 4.0),
            -0.7,
            epsilon = 1e-15
        );
        let line = bridge_polynomial(&[0.0; 3], 1.0, 3.0, 1.0, 4.0);
        assert_relative_eq!(line, 1.5, epsilon = 1e-15);
        assert_eq!(bridge_polynomial(&[0.0, 2.0], 0.0, 0.0, 4.0, 4.0), 0.0);
        assert_eq!(bridge_polynomial(&[0.0, 2.0], 0.0, 0.0, 0.0, 4.0), 0.0);
        assert!(bridge_polynomial_range(&c, 2..2, 0.0, 0.0, 1.0, 4.0).is_err());
        assert!(bridge_polynomial_range(&c, 1..4, 0.0, 0.0, 1.0, 4.0).is_err());
    }

    #[test]
    fn arbitrary_state_boundaries() {
        let w1 = 2.0;
        let a =
            ArbitraryStateAnsatz::new(9, 3.0, w1, 10.0, [0.0, 0.0, 1.0], [0.0, 0.0, -1.0]).unwrap();
        let x = [0.2; 9];
        let b0 = a.field(&x, 0.0).unwrap();
        assert!(b0.bx.abs() < 1e-15 && b0.by.abs() < 1e-15);
        assert_relative_eq!(b0.bz, w1 / 2f64.sqrt(), epsilon = 1e-12);
        let b1 = a.field(&x, 3.0).unwrap();
        assert_relative_eq!(b1.bz, -w1 / 2f64.sqrt(), epsilon = 1e-12);
        // n_z at the tanh⁻¹ domain edge
        let nz = 2f64.sqrt() * 1.0 / 1.2;
        let bad = ArbitraryStateAnsatz::new(
            9,
            3.0,
            1.2,
            1.0,
            [(1.0 - nz * nz).sqrt(), 0.0, nz],
            [0.0, 0.0, 1.0],
        );
        assert!(matches!(bad, Err(Error::Domain(_))));
    }

    #[test]
    fn baseline_examples() {
        let w = BaselineWaveform::new(BaselineShape::Wurst { k: 20.0 }, 2.0, 3.0, 5.0).unwrap();
        assert_relative_eq!(w.field(&[], 1.0).unwrap().bx, 3.0, epsilon = 1e-15);
        assert_eq!(w.field(&[], 0.0).unwrap().bz, -5.0);
        let s =
            BaselineWaveform::new(BaselineShape::SechTanh { beta: 5.0 }, 2.0, 3.0, 5.0).unwrap();
        let b = s.field(&[], 0.0).unwrap();
        assert_relative_eq!(b.bx, 3.0 / 5f64.cosh(), epsilon = 1e-15);
        assert_relative_eq!(b.bz, -5.0, epsilon = 1e-14);
        assert!(w.field(&[], 2.5).is_err());
    }

    #[test]
    fn domain_errors() {
        let a = poly(4);
        assert!(a.field(&[0.0; 4], -0.1).is_err());
        assert!(a.field(&[0.0; 3], 0.1).is_err());
        assert!(PolyAfpAnsatz::new(5, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn sampled_waveform_reproduces_smooth_family() {
        let a = poly(6);
        let x = [0.5, 0.2, -0.1, 1.0, 0.3, -0.2];
        let s = SampledWaveform::from_family(&a, &x, 801).unwrap();
        for t in [0.0, 0.3131, 1.0, 1.77, 2.0] {
            let (p, q) = (a.field(&x, t).unwrap(), s.field(&[], t).unwrap());
            assert!((p.as_vector() - q.as_vector()).norm() < 1e-5, "t={t}");
        }
        let json = serde_json::to_string(&Ansatz::Sampled(s.clone())).unwrap();
        let back: Ansatz = serde_json::from_str(&json).unwrap();
        match back {
            Ansatz::Sampled(r) => {
                let r = r.prepared().unwrap();
                assert_eq!(r.field(&[], 0.77).unwrap(), s.field(&[], 0.77).unwrap());
            }
            _ => unreachable!(),
        }
    }

    proptest! {
        #[test]
        fn clipping_and_parity(
            x in proptest::collection::vec(-3.0f64..3.0, 8),
            s in 0.0f64..1.0,
        ) {
            let a = poly(8);
            let t = 2.0 * s;
            let b = a.field(&x, t).unwrap();
            prop_assert!(b.bx.abs() <= 3.0 && b.bz.abs() <= 5.0);
            let (ax, az) = a.polynomials(&x, t).unwrap();
            let (bx, bz) = a.polynomials(&x, 2.0 - t).unwrap();
            prop_assert!((ax - bx).abs() <= 1e-12 * (1.0 + ax.abs()));
            prop_assert!((az + bz).abs() <= 1e-12 * (1.0 + az.abs()));
            prop_assert_eq!(a.field(&x, 0.0).unwrap().bx, 0.0);
            prop_assert_eq!(a.field(&x, 2.0).unwrap().bx, 0.0);
        }

        #[test]
        fn arbitrary_state_initial_alignment(
            x in proptest::collection::vec(-2.0f64..2.0, 6),
            th in 0.2f64..2.9,
            ph in -3.0f64..3.0,
        ) {
            let n = [th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()];
            prop_assume!(n[0].abs() < 0.999 && n[1].abs() < 0.999);
            let a = ArbitraryStateAnsatz::new(6, 1.0, 1.0, 3.0, n, [0.6, 0.0, -0.8]).unwrap();
            let b = a.field(&x, 0.0).unwrap().as_vector();
            let cos = b.dot(&nalgebra::Vector3::from(n)) / b.norm();
            prop_assert!((cos - 1.0).abs() < 1e-12);
        }

        #[test]
        fn poly_jacobian_fd(x in proptest::collection::vec(-2.0f64..2.0, 6), s in 0.0f64..1.0) {
            let a = poly(6);
            let t = 2.0 * s;
            let j = a.jacobian(&x, t).unwrap();
            let fd = fd_jacobian(&a, &x, t);
            prop_assert!((j - &fd).norm() <= 1e-6 * fd.norm().max(1e-3));
        }
    }

    #[test]
    fn rescaling_preserves_dimensionless_shape() {
        let a = Ansatz::PolyAfp(poly(4));
        let r = a.rescaled(10.0).unwrap();
        let x = [0.1, 0.2, 0.3, 0.4];
        let b = a.field(&x, 0.5).unwrap();
        let c = r.field(&x, 0.05).unwrap();
        assert_relative_eq!(c.bx, 10.0 * b.bx, epsilon = 1e-12);
        assert_relative_eq!(c.bz, 10.0 * b.bz, epsilon = 1e-12);
        let _ = PI;
    }
}
