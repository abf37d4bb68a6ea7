//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. The reproduction criteria optimize from fixed RNG seeds.

mod common;

use std::f64::consts::{PI, TAU};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use adiabat::ansatz::{Ansatz, ConstantField, PolyAfpAnsatz};
use adiabat::metrics::{
    evaluate_member, EnsembleMember, EvalSettings, MemberMetrics, MetricWeights, PerturbationSpec,
};
use adiabat::ode::SolverOptions;
use adiabat::optimizer::{draw_seed, optimize, OptimizedPulse};
use adiabat::recipes;
use adiabat::simulator::*;
use adiabat::spinalg::{
    eigenprojector, hermitian_eigenvalues2, sigma_z, EffectiveField, Mat2, Sign, SpinState,
};
use adiabat::units::GAMMA_ELECTRON;
use adiabat::vanloan::{propagate, Perturbation, SingleSpin, StaticPerturbation, VanLoanGenerator};
use adiabat::{Execution, C64};
use common::*;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VERIFY: SolverOptions = SolverOptions::verification();
const TIGHT: SolverOptions = SolverOptions::new(1e-12, 1e-14);

// Fixed seeds of the reproduction runs.
const AFP_SEED: u64 = 1;
const DIPOLAR_SEED: u64 = 1;
const REFERENCE_SEED: u64 = 1;
const GEOMETRY_SEED: u64 = 1;
const SELECTIVE_SEED: u64 = 2;
const ARBITRARY_SEED: u64 = 1;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

fn within(elapsed: Duration, minutes: u64) -> bool {
    elapsed <= Duration::from_secs(60 * minutes)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

fn member(p: MetricWeights, pert: PerturbationSpec) -> EnsembleMember {
    EnsembleMember {
        label: "m".into(),
        rabi_scale: 1.0,
        offset: 0.0,
        perturbation: pert,
        initial: SpinState::up(),
        target: SpinState::down(),
        sign: None,
        metric_weights: p,
        weight: 1.0,
    }
}

fn constant(b: [f64; 3], duration: f64) -> Arc<Ansatz> {
    Arc::new(Ansatz::Constant(ConstantField {
        b: EffectiveField::new(b[0], b[1], b[2]),
        duration,
    }))
}

fn criterion_1() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let pz = StaticPerturbation::new(sigma_z()).unwrap();
    let lift = SingleSpin;
    let mut worst = 0.0f64;
    for k in 0..20 {
        let field = PiecewiseConstant::random(&mut rng, 8, 3.0, 0.5, 5.0);
        let sign = if k % 2 == 0 { Sign::Plus } else { Sign::Minus };
        let g = VanLoanGenerator::new(&lift, Some(sign), Some(&pz as &dyn Perturbation<2>), 1e-9);
        let v = *propagate(&g, &field, &[], &VERIFY).unwrap().terminal();
        let o = dyson_oracle(&field, sign, &sigma_z(), 64);
        for (a, b) in [
            (v.diag, o.diag),
            (v.b12, o.b12),
            (v.b23, o.b23),
            (v.b13, o.b13),
        ] {
            worst = worst.max(rel_err(&a, &b));
        }
    }
    let el = t.elapsed();
    Verdict::new(
        worst <= 1e-6 && within(el, 1),
        format!("max block rel err {worst:.2e}, {el:.1?}"),
    )
}

/// Worst relative error of each metric's gradient against central differences.
fn metric_gradient_errors(fam: &Arc<Ansatz>, m: &EnsembleMember, x: &[f64], step: f64) -> [f64; 3] {
    let s = EvalSettings::verification();
    let grads = evaluate_member(fam, m, x, &s, true)
        .unwrap()
        .metric_gradients
        .unwrap();
    let pick = |mm: &MemberMetrics, k: usize| match k {
        0 => mm.phi0,
        1 => mm.phi_ad,
        _ => mm.phi_per.unwrap(),
    };
    let mut fd = vec![[0.0; 3]; x.len()];
    for (i, row) in fd.iter_mut().enumerate() {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += step;
        xm[i] -= step;
        let fp = evaluate_member(fam, m, &xp, &s, false).unwrap().metrics;
        let fm = evaluate_member(fam, m, &xm, &s, false).unwrap().metrics;
        for (k, v) in row.iter_mut().enumerate() {
            *v = (pick(&fp, k) - pick(&fm, k)) / (2.0 * step);
        }
    }
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        let col: Vec<f64> = fd.iter().map(|r| r[k]).collect();
        *o = rel_err_vec(&grads[k], &col);
    }
    out
}

fn criterion_2() -> Verdict {
    let t = Instant::now();
    let w = MetricWeights::new(0.2, 0.6, 0.2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut report = Vec::new();

    let fam = constant([0.8, -0.3, 1.1], 3.0);
    report.push((
        "constant",
        metric_gradient_errors(
            &fam,
            &member(w, PerturbationSpec::SigmaZ),
            &[0.8, -0.3, 1.1],
            1e-6,
        ),
    ));

    let poly = Arc::new(Ansatz::PolyAfp(
        PolyAfpAnsatz::new(10, 2.3 * TAU, 1.0, 5.0).unwrap(),
    ));
    let x = draw_seed(10, (-1.0, 1.0), &mut rng);
    report.push((
        "poly N=10",
        metric_gradient_errors(&poly, &member(w, PerturbationSpec::SigmaZ), &x, 1e-6),
    ));

    let problem = recipes::arbitrary_state(1).unwrap();
    let design = &problem.ensemble.members[0];
    let (psi0, psit) = (design.initial.clone(), design.target.clone());
    let arb = Arc::new(match problem.ensemble.family.as_ref() {
        Ansatz::ArbitraryState(a) => {
            let mut a = a.clone();
            a.num_params = 12;
            Ansatz::ArbitraryState(a)
        }
        _ => unreachable!(),
    });
    let x = draw_seed(12, (-0.5, 0.5), &mut rng);
    let mut m = member(w, PerturbationSpec::SigmaZ);
    m.initial = psi0;
    m.target = psit;
    report.push(("arbitrary N=12", metric_gradient_errors(&arb, &m, &x, 1e-6)));

    let el = t.elapsed();
    let worst = report.iter().flat_map(|r| r.1).fold(0.0f64, f64::max);
    let detail = report
        .iter()
        .map(|(n, e)| format!("{n}: {:.1e}/{:.1e}/{:.1e}", e[0], e[1], e[2]))
        .collect::<Vec<_>>()
        .join(", ");
    Verdict::new(
        worst <= 1e-4 && within(el, 5),
        format!("phi0/phi_ad/phi_per rel err {detail}, {el:.1?}"),
    )
}

fn criterion_3() -> Verdict {
    let s = EvalSettings::verification();
    let commuting = {
        let fam = constant([0.0, 0.0, 1.3], 2.5);
        let m = member(
            MetricWeights::new(0.0, 0.5, 0.5).unwrap(),
            PerturbationSpec::SigmaZ,
        );
        evaluate_member(&fam, &m, &[0.0, 0.0, 1.3], &s, false)
            .unwrap()
            .metrics
            .phi_per
            .unwrap()
    };
    let averaged = {
        // ωT = 16π with ω = 1: whole periods, so the toggling-frame σz averages to zero.
        let fam = constant([1.0, 0.0, 0.0], 16.0 * PI);
        let mut m = member(
            MetricWeights::new(0.0, 0.0, 1.0).unwrap(),
            PerturbationSpec::SigmaZ,
        );
        m.sign = Some(Sign::Plus);
        evaluate_member(&fam, &m, &[1.0, 0.0, 0.0], &s, false)
            .unwrap()
            .metrics
            .phi_per
            .unwrap()
    };
    let (ad, alpha) = {
        let fam = constant([0.0, 0.0, 2.0], 3.0);
        let m = member(
            MetricWeights::new(0.0, 1.0, 0.0).unwrap(),
            PerturbationSpec::None,
        );
        let e = evaluate_member(&fam, &m, &[0.0, 0.0, 2.0], &s, false).unwrap();
        (e.metrics.phi_ad, e.alpha_max.unwrap())
    };
    let pass = commuting.abs() <= 1e-8
        && averaged >= 0.99
        && (averaged - 1.0).abs() <= 1e-8
        && (ad - 1.0).abs() <= 1e-8
        && alpha <= 1e-8;
    Verdict::new(
        pass,
        format!("commuting phi_per {commuting:.1e}, averaged phi_per {averaged:.10}, aligned 1-phi_ad {:.1e} alpha {alpha:.1e}", 1.0 - ad),
    )
}

fn criterion_4() -> Verdict {
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    // Unitarity drift and block-triangular structure of the propagator.
    let fam = Arc::new(Ansatz::PolyAfp(
        PolyAfpAnsatz::new(20, 2.3 * TAU, 1.0, 5.0).unwrap(),
    ));
    let x = draw_seed(20, (-1.0, 1.0), &mut rng);
    let pz = StaticPerturbation::new(sigma_z()).unwrap();
    let lift = SingleSpin;
    let g = VanLoanGenerator::new(
        &lift,
        Some(Sign::Minus),
        Some(&pz as &dyn Perturbation<2>),
        1e-9,
    );
    let traj = propagate(&g, fam.as_ref(), &x, &VERIFY).unwrap();
    let v = *traj.terminal();
    let drift = (v.diag.adjoint() * v.diag - Mat2::identity()).norm();
    checks.push((
        "unitarity",
        drift <= 10.0 * VERIFY.rtol,
        format!("{drift:.1e}"),
    ));
    let mut structure = 0.0f64;
    for k in 0..=10 {
        let vt = traj.at(traj.duration() * k as f64 / 10.0);
        let d = vt.to_dense();
        for r in 2..6 {
            for c in 0..(r / 2) * 2 {
                structure = structure.max(d[(r, c)].norm());
            }
        }
        let prod = (vt * vt.inverse().unwrap()).to_dense();
        structure = structure.max((prod - DMatrix::<C64>::identity(6, 6)).norm());
    }
    checks.push((
        "block-triangular",
        structure <= 1e-10,
        format!("{structure:.1e}"),
    ));

    // Projector idempotency on random fields.
    let mut idem = 0.0f64;
    for _ in 0..200 {
        let b = EffectiveField::new(
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
        );
        for sign in [Sign::Plus, Sign::Minus] {
            let p = eigenprojector(&b, sign, 1e-9).unwrap();
            idem = idem.max((p * p - p).norm());
        }
    }
    checks.push(("P idempotent", idem <= 1e-12, format!("{idem:.1e}")));

    // Lindblad waits between pulses keep a valid density matrix.
    let mut lindblad = 0.0f64;
    for _ in 0..50 {
        let b = EffectiveField::new(
            rng.gen_range(-PI..PI),
            rng.gen_range(-PI..PI),
            rng.gen_range(-PI..PI),
        );
        let u = (b.dot_sigma() * C64::new(0.0, -0.5)).exp();
        let off = rng.gen_range(-1e5..1e5);
        let mut rho = Mat2::new(
            C64::new(1.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
        );
        for _ in 0..40 {
            rho = dephasing_wait(&(u * rho * u.adjoint()), off, 52e-6, 364e-6);
            let ev = hermitian_eigenvalues2(&rho);
            lindblad = lindblad
                .max(((rho[(0, 0)] + rho[(1, 1)]).re - 1.0).abs())
                .max(-ev[0])
                .max(-ev[1]);
        }
    }
    checks.push((
        "Lindblad trace/positivity",
        lindblad <= 1e-10,
        format!("{lindblad:.1e}"),
    ));

    // Seven coupled spins.
    let geom = SpinGeometry::cube_face_centers(4e-9, 0.5e-9, GAMMA_ELECTRON, GEOMETRY_SEED);
    let sys = MultiSpinSystem::new(
        7,
        &geom
            .pair_coefficients(DipolarConvention::default())
            .unwrap(),
    )
    .unwrap();
    let (lo, _) = recipes::DIPOLAR_RABI_RANGE;
    let afp = Arc::new(Ansatz::PolyAfp(
        PolyAfpAnsatz::new(40, 1e-6, lo, TAU * 50e6).unwrap(),
    ));
    let xa = draw_seed(40, (-1.0, 1.0), &mut rng);
    let psi = sys
        .evolve(
            &adiabat::ansatz::MemberField::new(afp, 1.0, 0.0),
            &xa,
            &TIGHT,
        )
        .unwrap();
    let norm: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
    let mut multi = (norm - 1.0).abs();
    for j in 0..7 {
        let rho = sys.reduced_density(&psi, j);
        let ev = hermitian_eigenvalues2(&rho);
        multi = multi
            .max(((rho[(0, 0)] + rho[(1, 1)]).re - 1.0).abs())
            .max(-ev[0])
            .max(-ev[1]);
    }
    checks.push((
        "multispin trace/positivity",
        multi <= 1e-10,
        format!("{multi:.1e}"),
    ));

    let pass = checks.iter().all(|c| c.1);
    let detail = checks
        .iter()
        .map(|c| format!("{} {}", c.0, c.2))
        .collect::<Vec<_>>()
        .join(", ");
    Verdict::new(pass, detail)
}

fn criterion_5(afp: &OptimizedPulse, elapsed: Duration) -> Verdict {
    let problem = recipes::afp_2p3_cycles(AFP_SEED).unwrap();
    let s = EvalSettings::verification();
    let m = &problem.ensemble.members[0];
    let grid = linspace(1.0, 2.0, 50);
    let sweep = |fam: Ansatz, x: &[f64]| {
        let sw = rabi_sweep(&Arc::new(fam), m, x, &grid, &s);
        (
            RabiSweep::max_of(&sw.infidelity),
            RabiSweep::max_of(&sw.alpha_max_deg),
        )
    };
    let (inf, alpha) = sweep(afp.family.clone(), &afp.x);
    let (_, wurst) = sweep(recipes::wurst_baseline().unwrap(), &[]);
    let (_, sech) = sweep(recipes::sech_tanh_baseline().unwrap(), &[]);
    let pass = afp.converged
        && afp.phi > 0.99
        && afp.restarts <= 20
        && inf <= 1e-3
        && alpha <= 12.0
        && wurst >= 20.0
        && sech >= 28.0
        && within(elapsed, 30);
    Verdict::new(
        pass,
        format!(
            "Phi {:.5} restarts {}, sweep max 1-phi0 {inf:.1e} alpha {alpha:.2} deg, WURST alpha {wurst:.1} deg, SechTanh alpha {sech:.1} deg, optimize {elapsed:.1?}",
            afp.phi, afp.restarts
        ),
    )
}

fn mean_infidelity(fid: &[f64]) -> f64 {
    fid.iter().map(|f| 1.0 - f).sum::<f64>() / fid.len() as f64
}

fn criterion_6() -> Verdict {
    let t = Instant::now();
    let dip = optimize(&recipes::dipolar_electron(true, DIPOLAR_SEED).unwrap()).unwrap();
    let reference = optimize(&recipes::dipolar_electron(false, REFERENCE_SEED).unwrap()).unwrap();
    let (lo, hi) = recipes::DIPOLAR_RABI_RANGE;
    let scales = linspace(1.0, hi / lo, 9);
    let geom = SpinGeometry::cube_face_centers(4e-9, 0.5e-9, GAMMA_ELECTRON, GEOMETRY_SEED);
    let ratio = |convention| {
        let run = |p: &OptimizedPulse| {
            let f = multispin_dipolar_sim(
                &Arc::new(p.family.clone()),
                &p.x,
                &geom,
                convention,
                &scales,
                &VERIFY,
                Execution::default(),
            );
            mean_infidelity(&f.unwrap())
        };
        let (d, r) = (run(&dip), run(&reference));
        (d, r, d / r)
    };
    let (d, r, q) = ratio(DipolarConvention::SpinOperators);
    let (_, _, q_half) = ratio(DipolarConvention::HalfPauli);
    let el = t.elapsed();
    Verdict::new(
        q <= 1.0 / 3.0 && dip.converged && reference.converged && within(el, 60),
        format!(
            "mean 7-spin infidelity dipolar {d:.2e} reference {r:.2e} ratio {q:.3} (doubled coupling: {q_half:.3}), {el:.1?}"
        ),
    )
}

fn criterion_7() -> Verdict {
    let t = Instant::now();
    let problem = recipes::selective_larmor(SELECTIVE_SEED).unwrap();
    let p = optimize(&problem).unwrap();
    let offsets: Vec<f64> = (0..1201)
        .map(|i| TAU * (-150e3 + 250.0 * i as f64))
        .collect();
    let prof = selectivity_profile(
        &Arc::new(p.family.clone()),
        &p.x,
        1.0,
        &SpinState::up(),
        &SpinState::down(),
        &offsets,
        140,
        &VERIFY,
        Execution::default(),
    )
    .unwrap();
    let khz = |w: f64| w / TAU / 1e3;
    let band = prof.band_width.map(khz).unwrap_or(f64::NAN);
    let edge = prof
        .edge_widths
        .map(|(a, b)| khz(a.max(b)))
        .unwrap_or(f64::NAN);
    // In-band tip angle on the interior members; the band-edge members are
    // reported alongside.
    let alpha = |interior: bool| {
        problem
            .ensemble
            .members
            .iter()
            .zip(&p.report.members)
            .filter(|(m, _)| {
                m.target.bloch_vector()[2] < 0.0 && (khz(m.offset.abs()) < 47.0 - 1e-9) == interior
            })
            .filter_map(|(_, r)| r.alpha_max_deg)
            .fold(0.0f64, f64::max)
    };
    let (inner, edge_alpha) = (alpha(true), alpha(false));
    let el = t.elapsed();
    let pass = p.converged
        && (90.0..=125.0).contains(&band)
        && edge <= 20.0
        && inner <= 6.0
        && within(el, 20);
    Verdict::new(
        pass,
        format!(
            "band {band:.2} kHz, edge {edge:.2} kHz, in-band alpha {inner:.2} deg (band-edge members {edge_alpha:.2} deg), {el:.1?}"
        ),
    )
}

fn local_minima(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    (1..ys.len() - 1)
        .filter(|&i| ys[i] < ys[i - 1] && ys[i] < ys[i + 1])
        .map(|i| xs[i])
        .collect()
}

fn criterion_8() -> Verdict {
    let t = Instant::now();
    let problem = recipes::arbitrary_state(ARBITRARY_SEED).unwrap();
    let p = optimize(&problem).unwrap();
    let r = &p.report.members[0];
    let alpha = r.alpha_max_deg.unwrap_or(f64::NAN);
    let fam = Arc::new(p.family.clone());
    let s = EvalSettings::verification();
    let m = &problem.ensemble.members[0];
    let sweep_minima = |lo: f64, hi: f64, n: usize| {
        let khz = linspace(lo, hi, n);
        let grid: Vec<f64> = khz.iter().map(|k| TAU * k * 1e3).collect();
        local_minima(&khz, &rabi_sweep(&fam, m, &p.x, &grid, &s).infidelity)
    };
    // Design window of ±10% around 448 kHz.
    let minima = sweep_minima(0.9 * 448.0, 1.1 * 448.0, 91);
    let wide = sweep_minima(200.0, 700.0, 251);
    let near = minima.len() == 1 && (minima[0] - 448.0).abs() <= 0.02 * 448.0;
    let el = t.elapsed();
    let pass = p.converged && r.phi0 >= 0.9999 && alpha <= 6.0 && near && within(el, 10);
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|k| format!("{k:.0}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    Verdict::new(
        pass,
        format!(
            "phi0 {:.7}, alpha {alpha:.2} deg, minima in 403-493 kHz: [{}] (200-700 kHz: [{}]), {el:.1?}",
            r.phi0,
            fmt(&minima),
            fmt(&wide)
        ),
    )
}

fn criterion_9(afp: &OptimizedPulse) -> Verdict {
    let t = Instant::now();
    let k = TAU * 479e3;
    let cfg = PulseTrainConfig::new(400, 52e-6, 364e-6, 70e-6);
    let scales = linspace(1.0, 2.0, 11);
    let weights = vec![1.0; scales.len()];
    let accuracy = |fam: Ansatz, x: &[f64]| {
        let c = ensemble_train_decay(
            &Arc::new(fam),
            x,
            &scales,
            &weights,
            &cfg,
            &VERIFY,
            Execution::default(),
        )
        .unwrap();
        fit_per_pulse_accuracy(&c.abscissa, &c.ordinate, 1e-12)
            .unwrap()
            .0
    };
    let a = accuracy(afp.family.rescaled(k).unwrap(), &afp.x);
    let w = accuracy(recipes::wurst_baseline().unwrap().rescaled(k).unwrap(), &[]);
    let s = accuracy(
        recipes::sech_tanh_baseline().unwrap().rescaled(k).unwrap(),
        &[],
    );

    let fam = Arc::new(afp.family.rescaled(k).unwrap());
    let detunings: Vec<f64> = linspace(-300e3, 300e3, 41)
        .into_iter()
        .map(|d| TAU * d)
        .collect();
    let curve = ensemble_offset_sweep(
        &fam,
        &afp.x,
        &scales,
        &weights,
        5000,
        &detunings,
        &cfg,
        Some(4096),
        &VERIFY,
        Execution::default(),
    )
    .unwrap();
    let hw = half_max_half_width(&curve).map_or(f64::NAN, |h| h / TAU / 1e3);
    let el = t.elapsed();
    let pass = a > w && a > s && (90.0..=160.0).contains(&hw) && within(el, 60);
    Verdict::new(
        pass,
        format!("per-pulse accuracy AFP {a:.6} WURST {w:.6} SechTanh {s:.6}, offset HWHM {hw:.1} kHz, {el:.1?}"),
    )
}

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Verdict::new(false, format!("panicked: {msg}"))
    })
}

fn main() {
    let total = Instant::now();
    let mut verdicts: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut record = |id, name, v: Verdict| {
        println!(
            "criterion {id} {name}: {} ({})",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
        verdicts.push((id, name, v));
    };
    record(1, "Van Loan oracle", guarded(criterion_1));
    record(2, "gradient correctness", guarded(criterion_2));
    record(3, "closed-form checks", guarded(criterion_3));
    record(4, "structural invariants", guarded(criterion_4));

    let t = Instant::now();
    let afp = catch_unwind(|| optimize(&recipes::afp_2p3_cycles(AFP_SEED).unwrap()).unwrap());
    let afp_time = t.elapsed();
    match &afp {
        Ok(p) => {
            record(5, "2.3-cycle AFP", guarded(|| criterion_5(p, afp_time)));
        }
        Err(_) => record(
            5,
            "2.3-cycle AFP",
            Verdict::new(false, "optimization failed".into()),
        ),
    }
    record(6, "dipolar comparison", guarded(criterion_6));
    record(7, "Larmor selectivity", guarded(criterion_7));
    record(8, "arbitrary-state transfer", guarded(criterion_8));
    match &afp {
        Ok(p) => record(9, "pulse train", guarded(|| criterion_9(p))),
        Err(_) => record(9, "pulse train", Verdict::new(false, "no AFP pulse".into())),
    }

    let failed: Vec<u32> = verdicts.iter().filter(|v| !v.2.pass).map(|v| v.0).collect();
    println!(
        "acceptance: {} of {} passed in {:.1?}",
        verdicts.len() - failed.len(),
        verdicts.len(),
        total.elapsed()
    );
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
