//! Adaptive Dormand–Prince 5(4) integration of complex linear systems with
//! continuous (dense) output.

use serde::{Deserialize, Serialize};

use crate::{Error, Result, C64};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl SolverOptions {
    pub const fn new(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            max_steps: 1_000_000,
        }
    }

    /// Tolerances used inside the optimization loop.
    pub const fn optimization() -> Self {
        Self::new(1e-8, 1e-10)
    }

    /// Tolerances used for final reports and gradient verification.
    pub const fn verification() -> Self {
        Self::new(1e-10, 1e-12)
    }
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self::optimization()
    }
}

const A21: f64 = 0.2;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const C2: f64 = 0.2;
const C3: f64 = 0.3;
const C4: f64 = 0.8;
const C5: f64 = 8.0 / 9.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// One accepted step, with the five continuous-extension coefficient vectors.
pub struct Step<'a> {
    pub t: f64,
    pub h: f64,
    pub cont: [&'a [C64]; 5],
}

impl Step<'_> {
    pub fn eval(&self, t: f64, out: &mut [C64]) {
        eval_cont(self.cont, (t - self.t) / self.h, out);
    }
}

fn eval_cont(c: [&[C64]; 5], theta: f64, out: &mut [C64]) {
    let th1 = 1.0 - theta;
    for i in 0..out.len() {
        out[i] = c[0][i] + (c[1][i] + (c[2][i] + (c[3][i] + c[4][i] * th1) * theta) * th1) * theta;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

fn error_norm(y0: &[C64], y1: &[C64], err: &[C64], opts: &SolverOptions) -> f64 {
    let mut acc = 0.0;
    for i in 0..y0.len() {
        let sc = opts.atol + opts.rtol * y0[i].norm().max(y1[i].norm());
        acc += (err[i] / sc).norm_sqr();
    }
    (acc / y0.len() as f64).sqrt()
}

/// Integrates `y' = f(t, y)` from `t0` to `t1` (with `t1 > t0`), calling
/// `observer` on every accepted step. Returns the state at `t1`.
pub fn integrate<F, O>(
    mut rhs: F,
    t0: f64,
    t1: f64,
    y0: &[C64],
    opts: &SolverOptions,
    mut observer: O,
) -> Result<(Vec<C64>, SolverStats)>
where
    F: FnMut(f64, &[C64], &mut [C64]) -> Result<()>,
    O: FnMut(&Step<'_>),
{
    let n = y0.len();
    let span = t1 - t0;
    if !(span > 0.0) {
        return Err(Error::domain(format!(
            "integration interval [{t0}, {t1}] is empty"
        )));
    }
    let zero = C64::new(0.0, 0.0);
    let mut stats = SolverStats::default();
    let mut y = y0.to_vec();
    let mut k: [Vec<C64>; 7] = std::array::from_fn(|_| vec![zero; n]);
    let mut ytmp = vec![zero; n];
    let mut ynew = vec![zero; n];
    let mut err = vec![zero; n];
    let mut cont: [Vec<C64>; 5] = std::array::from_fn(|_| vec![zero; n]);

    let mut t = t0;
    rhs(t, &y, &mut k[0])?;
    stats.rhs_evals += 1;

    // Initial step guess.
    let mut h = {
        let sc: Vec<f64> = y.iter().map(|v| opts.atol + opts.rtol * v.norm()).collect();
        let d0 = (y
            .iter()
            .zip(&sc)
            .map(|(v, s)| (v / s).norm_sqr())
            .sum::<f64>()
            / n as f64)
            .sqrt();
        let d1 = (k[0]
            .iter()
            .zip(&sc)
            .map(|(v, s)| (v / s).norm_sqr())
            .sum::<f64>()
            / n as f64)
            .sqrt();
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6 * span
        } else {
            0.01 * d0 / d1
        };
        let h0 = h0.min(span);
        for i in 0..n {
            ytmp[i] = y[i] + k[0][i] * h0;
        }
        rhs(t + h0, &ytmp, &mut k[1])?;
        stats.rhs_evals += 1;
        let d2 = (k[1]
            .iter()
            .zip(&k[0])
            .zip(&sc)
            .map(|((a, b), s)| ((a - b) / s).norm_sqr())
            .sum::<f64>()
            / n as f64)
            .sqrt()
            / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (1e-6f64).max(h0 * 1e-3)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(span)
    };

    const SAFE: f64 = 0.9;
    const EXPO: f64 = 0.2 - 0.04 * 0.75;
    const BETA: f64 = 0.04;
    let mut facold: f64 = 1e-4;
    let mut last_rejected = false;
    let h_min = 1e-14 * (t0.abs().max(t1.abs())).max(span);

    loop {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(Error::SolverFailure {
                t,
                reason: format!("exceeded {} steps", opts.max_steps),
            });
        }
        let last = t + h >= t1 - 1e-13 * span;
        if last {
            h = t1 - t;
        }
        if h < h_min {
            return Err(Error::SolverFailure {
                t,
                reason: format!("step size {h:e} underflow"),
            });
        }

        macro_rules! stage {
            ($dst:expr, $c:expr, $($kk:expr => $a:expr),+) => {{
                for i in 0..n {
                    ytmp[i] = y[i] $( + k[$kk][i] * ($a * h) )+;
                }
                rhs(t + $c * h, &ytmp, &mut k[$dst]).map_err(|e| e.at(t + $c * h))?;
            }};
        }
        stage!(1, C2, 0 => A21);
        stage!(2, C3, 0 => A31, 1 => A32);
        stage!(3, C4, 0 => A41, 1 => A42, 2 => A43);
        stage!(4, C5, 0 => A51, 1 => A52, 2 => A53, 3 => A54);
        stage!(5, 1.0, 0 => A61, 1 => A62, 2 => A63, 3 => A64, 4 => A65);
        for i in 0..n {
            ynew[i] = y[i]
                + (k[0][i] * B1 + k[2][i] * B3 + k[3][i] * B4 + k[4][i] * B5 + k[5][i] * B6) * h;
        }
        let tnew = if last { t1 } else { t + h };
        rhs(tnew, &ynew, &mut k[6]).map_err(|e| e.at(tnew))?;
        stats.rhs_evals += 6;
        for i in 0..n {
            err[i] = (k[0][i] * E1
                + k[2][i] * E3
                + k[3][i] * E4
                + k[4][i] * E5
                + k[5][i] * E6
                + k[6][i] * E7)
                * h;
        }
        let e = error_norm(&y, &ynew, &err, opts);
        if !e.is_finite() {
            return Err(Error::SolverFailure {
                t,
                reason: "non-finite error estimate".into(),
            });
        }
        let fac11 = e.powf(EXPO);

        if e <= 1.0 {
            stats.accepted += 1;
            for i in 0..n {
                let ydiff = ynew[i] - y[i];
                let bspl = k[0][i] * h - ydiff;
                cont[0][i] = y[i];
                cont[1][i] = ydiff;
                cont[2][i] = bspl;
                cont[3][i] = ydiff - k[6][i] * h - bspl;
                cont[4][i] = (k[0][i] * D1
                    + k[2][i] * D3
                    + k[3][i] * D4
                    + k[4][i] * D5
                    + k[5][i] * D6
                    + k[6][i] * D7)
                    * h;
            }
            observer(&Step {
                t,
                h,
                cont: [&cont[0], &cont[1], &cont[2], &cont[3], &cont[4]],
            });
            std::mem::swap(&mut y, &mut ynew);
            k.swap(0, 6);
            t = tnew;
            if last {
                return Ok((y, stats));
            }
            let mut fac = fac11 / facold.powf(BETA);
            facold = e.max(1e-4);
            fac = (fac / SAFE).clamp(0.1, 5.0);
            let mut hnew = h / fac;
            if last_rejected {
                hnew = hnew.min(h);
            }
            last_rejected = false;
            h = hnew;
        } else {
            stats.rejected += 1;
            last_rejected = true;
            h /= (fac11 / SAFE).min(5.0);
        }
    }
}

/// Piecewise continuous extension over the whole integration interval.
#[derive(Clone, Debug, Default)]
pub struct DenseOutput {
    dim: usize,
    starts: Vec<f64>,
    steps: Vec<f64>,
    coeffs: Vec<C64>,
}

impl DenseOutput {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    pub fn record(&mut self, step: &Step<'_>) {
        self.starts.push(step.t);
        self.steps.push(step.h);
        for c in step.cont {
            self.coeffs.extend_from_slice(c);
        }
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Start and end of the covered interval.
    pub fn span(&self) -> (f64, f64) {
        let n = self.starts.len();
        (self.starts[0], self.starts[n - 1] + self.steps[n - 1])
    }

    pub fn eval(&self, t: f64, out: &mut [C64]) {
        assert!(!self.starts.is_empty(), "dense output is empty");
        let idx = self.starts.partition_point(|&s| s <= t).saturating_sub(1);
        let d = self.dim;
        let base = idx * 5 * d;
        let c = &self.coeffs[base..base + 5 * d];
        let theta = (t - self.starts[idx]) / self.steps[idx];
        eval_cont(
            [
                &c[0..d],
                &c[d..2 * d],
                &c[2 * d..3 * d],
                &c[3 * d..4 * d],
                &c[4 * d..5 * d],
            ],
            theta,
            out,
        );
    }
}
