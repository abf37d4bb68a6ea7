#![allow(dead_code)]

use adiabat::ansatz::{FieldFamily, Jacobian};
use adiabat::spinalg::{EffectiveField, Mat2, Sign};
use adiabat::vanloan::BlockTri;
use adiabat::{Result, C64};
use rand::Rng;

/// Gauss–Legendre nodes and weights on [-1, 1] by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
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
            if dx.abs() < 1e-16 {
                break;
            }
        }
        xs[i] = x;
        ws[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (xs, ws)
}

/// Piecewise-constant field, parameters are ignored (or, with three entries
/// per segment, replace the stored values).
#[derive(Clone, Debug)]
pub struct PiecewiseConstant {
    pub segments: Vec<EffectiveField>,
    pub duration: f64,
}

impl PiecewiseConstant {
    pub fn random<R: Rng>(rng: &mut R, count: usize, duration: f64, lo: f64, hi: f64) -> Self {
        let segments = (0..count)
            .map(|_| {
                let mag = rng.gen_range(lo..=hi);
                let z: f64 = rng.gen_range(-1.0..=1.0);
                let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let s = (1.0 - z * z).sqrt();
                EffectiveField::new(mag * s * phi.cos(), mag * s * phi.sin(), mag * z)
            })
            .collect();
        Self { segments, duration }
    }

    pub fn tau(&self) -> f64 {
        self.duration / self.segments.len() as f64
    }

    fn index(&self, t: f64) -> usize {
        ((t / self.tau()) as usize).min(self.segments.len() - 1)
    }
}

impl FieldFamily for PiecewiseConstant {
    fn num_params(&self) -> usize {
        0
    }

    fn duration(&self) -> f64 {
        self.duration
    }

    fn field(&self, _x: &[f64], t: f64) -> Result<EffectiveField> {
        Ok(self.segments[self.index(t)])
    }

    fn jacobian(&self, _x: &[f64], _t: f64) -> Result<Jacobian> {
        Ok(Jacobian::zeros(0))
    }

    fn field_scale(&self) -> f64 {
        1.0
    }
}

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn pauli(b: &EffectiveField) -> Mat2 {
    Mat2::new(
        c(b.bz),
        C64::new(b.bx, -b.by),
        C64::new(b.bx, b.by),
        c(-b.bz),
    )
}

/// `exp(i·t·b·σ/2)` in closed form.
pub fn rotation(b: &EffectiveField, t: f64) -> Mat2 {
    let n = b.norm();
    if n == 0.0 {
        return Mat2::identity();
    }
    let th = 0.5 * n * t;
    Mat2::identity() * c(th.cos()) + pauli(b) * C64::new(0.0, th.sin() / n)
}

pub fn projector(b: &EffectiveField, sign: Sign) -> Mat2 {
    (Mat2::identity() + pauli(b) * c(sign.value() / b.norm())) * c(0.5)
}

/// Dyson blocks of a piecewise-constant field by exact segment exponentials
/// and Gauss–Legendre quadrature (`nodes` per segment and dimension):
/// `X = U∫U⁻¹PU`, `Y = U∫U⁻¹(−iδH)U`, `Z = U∫U⁻¹PU(s)∫^s U⁻¹(−iδH)U`.
pub fn dyson_oracle(
    field: &PiecewiseConstant,
    sign: Sign,
    delta_h: &Mat2,
    nodes: usize,
) -> BlockTri<2> {
    let (gx, gw) = gauss_legendre(nodes);
    let tau = field.tau();
    let e = delta_h * C64::new(0.0, -1.0);
    // U at segment starts.
    let mut starts = vec![Mat2::identity()];
    for b in &field.segments {
        let last = *starts.last().unwrap();
        starts.push(rotation(b, tau) * last);
    }
    let u_at = |k: usize, s: f64| rotation(&field.segments[k], s) * starts[k];
    let toggled = |m: &Mat2, u: &Mat2| u.try_inverse().unwrap() * m * u;
    // ∫ over [t0, t0 + len] within segment k.
    let seg_integral = |k: usize, len: f64, f: &dyn Fn(&Mat2) -> Mat2| {
        let mut acc = Mat2::zeros();
        for (x, w) in gx.iter().zip(&gw) {
            let s = 0.5 * len * (x + 1.0);
            acc += f(&u_at(k, s)) * c(0.5 * len * w);
        }
        acc
    };
    let mut ix = Mat2::zeros();
    let mut iy = Mat2::zeros();
    let mut iz = Mat2::zeros();
    let mut iy_before = Mat2::zeros();
    for (k, b) in field.segments.iter().enumerate() {
        let p = projector(b, sign);
        ix += seg_integral(k, tau, &|u| toggled(&p, u));
        // Outer integral over s in segment k of P̃(s)·(∫_0^s Ẽ).
        let mut acc = Mat2::zeros();
        for (x, w) in gx.iter().zip(&gw) {
            let s = 0.5 * tau * (x + 1.0);
            let inner = iy_before + seg_integral(k, s, &|u| toggled(&e, u));
            acc += toggled(&p, &u_at(k, s)) * inner * c(0.5 * tau * w);
        }
        iz += acc;
        let seg_y = seg_integral(k, tau, &|u| toggled(&e, u));
        iy += seg_y;
        iy_before += seg_y;
    }
    let ut = *starts.last().unwrap();
    BlockTri {
        diag: ut,
        b12: ut * ix,
        b23: ut * iy,
        b13: ut * iz,
    }
}

pub fn rel_err(a: &Mat2, b: &Mat2) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

pub fn rel_err_vec(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}
