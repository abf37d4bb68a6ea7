//! The shipped design recipes as ready-to-run problems.

use std::f64::consts::{PI, TAU};

use crate::ansatz::{Ansatz, ArbitraryStateAnsatz, BaselineShape, BaselineWaveform, PolyAfpAnsatz};
use crate::metrics::{Ensemble, EnsembleMember, MetricWeights, PerturbationSpec};
use crate::optimizer::{ControlProblem, OptimizerPolicy};
use crate::spinalg::SpinState;
use crate::Result;

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// 2.3-Rabi-cycle AFP in units of Ω₁ = 1 rad/s: N = 50, five members on
/// `[Ω₁, 2Ω₁]`, `Δωmax = 5Ω₁`, `δH = σz`, `p = (0.2, 0.6, 0.2)`.
pub fn afp_2p3_cycles(rng_seed: u64) -> Result<ControlProblem> {
    let family = PolyAfpAnsatz::new(50, 2.3 * TAU, 1.0, 5.0)?;
    let w = MetricWeights::new(0.2, 0.6, 0.2)?;
    let members = linspace(1.0, 2.0, 5)
        .into_iter()
        .map(|r| EnsembleMember {
            label: format!("rabi_{r:.2}"),
            rabi_scale: r,
            offset: 0.0,
            perturbation: PerturbationSpec::SigmaZ,
            initial: SpinState::up(),
            target: SpinState::down(),
            sign: None,
            metric_weights: w,
            weight: 0.2,
        })
        .collect();
    Ok(ControlProblem::new(
        Ensemble::new(Ansatz::PolyAfp(family), members)?,
        OptimizerPolicy {
            rng_seed,
            ..Default::default()
        },
    ))
}

/// WURST or Sech/Tanh reference with the constraints of [`afp_2p3_cycles`].
pub fn afp_baseline(shape: BaselineShape) -> Result<Ansatz> {
    Ok(Ansatz::Baseline(BaselineWaveform::new(
        shape,
        2.3 * TAU,
        1.0,
        5.0,
    )?))
}

pub fn wurst_baseline() -> Result<Ansatz> {
    afp_baseline(BaselineShape::Wurst {
        k: BaselineWaveform::DEFAULT_WURST_K,
    })
}

pub fn sech_tanh_baseline() -> Result<Ansatz> {
    afp_baseline(BaselineShape::SechTanh {
        beta: BaselineWaveform::DEFAULT_SECH_BETA,
    })
}

/// Lower and upper Rabi frequencies of the dipolar design range (rad/s).
pub const DIPOLAR_RABI_RANGE: (f64, f64) = (TAU * 7.57e6, TAU * 12.05e6);

/// Electron-spin AFP, N = 40, T = 1 µs, seven members across the Rabi range,
/// `Δωmax/2π = 50 MHz`. With `dipolar` the pair perturbation enters with
/// `p = (0.2, 0.5, 0.3)`; otherwise the reference uses `p = (0.2, 0.8)`.
pub fn dipolar_electron(dipolar: bool, rng_seed: u64) -> Result<ControlProblem> {
    let (lo, hi) = DIPOLAR_RABI_RANGE;
    let family = PolyAfpAnsatz::new(40, 1e-6, lo, TAU * 50e6)?;
    let (w, pert) = if dipolar {
        (
            MetricWeights::new(0.2, 0.5, 0.3)?,
            PerturbationSpec::DipolarPair,
        )
    } else {
        (MetricWeights::new(0.2, 0.8, 0.0)?, PerturbationSpec::None)
    };
    let members = linspace(1.0, hi / lo, 7)
        .into_iter()
        .map(|r| EnsembleMember {
            label: format!("rabi_{:.3}MHz", r * lo / TAU / 1e6),
            rabi_scale: r,
            offset: 0.0,
            perturbation: pert.clone(),
            initial: SpinState::up(),
            target: SpinState::down(),
            sign: None,
            metric_weights: w,
            weight: 1.0 / 7.0,
        })
        .collect::<Vec<_>>();
    let mut members = members;
    fix_weight_sum(&mut members);
    Ok(ControlProblem::new(
        Ensemble::new(Ansatz::PolyAfp(family), members)?,
        OptimizerPolicy {
            rng_seed,
            ..Default::default()
        },
    ))
}

/// Absorbs the rounding of `1/n` weights into the last member.
fn fix_weight_sum(members: &mut [EnsembleMember]) {
    let head: f64 = members[..members.len() - 1].iter().map(|m| m.weight).sum();
    if let Some(last) = members.last_mut() {
        last.weight = 1.0 - head;
    }
}

/// Larmor-selective proton AFP: N = 10, T = 300 µs, `ω1max/2π = 225.7 kHz`,
/// `Δωmax/2π = 75 kHz`; 11 inverting members on ±47 kHz and two
/// non-inverting members at ±72.5 kHz.
pub fn selective_larmor(rng_seed: u64) -> Result<ControlProblem> {
    let family = PolyAfpAnsatz::new(10, 300e-6, TAU * 225.7e3, TAU * 75e3)?;
    let inside = MetricWeights::new(0.2, 0.8, 0.0)?;
    let outside = MetricWeights::fidelity_only();
    let mut members = Vec::new();
    let edge = |khz: f64| (khz.abs() - 47.0).abs() < 1e-9 || (khz.abs() - 72.5).abs() < 1e-9;
    let mut offsets_khz = linspace(-47.0, 47.0, 11);
    offsets_khz.insert(0, -72.5);
    offsets_khz.push(72.5);
    for khz in offsets_khz {
        let in_band = khz.abs() <= 47.0 + 1e-9;
        members.push(EnsembleMember {
            label: format!("offset_{khz:+.1}kHz"),
            rabi_scale: 1.0,
            offset: TAU * khz * 1e3,
            perturbation: PerturbationSpec::None,
            initial: SpinState::up(),
            target: if in_band {
                SpinState::down()
            } else {
                SpinState::up()
            },
            sign: None,
            metric_weights: if in_band { inside } else { outside },
            weight: if edge(khz) { 2.0 / 17.0 } else { 1.0 / 17.0 },
        });
    }
    fix_weight_sum(&mut members);
    Ok(ControlProblem::new(
        Ensemble::new(Ansatz::PolyAfp(family), members)?,
        OptimizerPolicy {
            rng_seed,
            ..Default::default()
        },
    ))
}

/// Bloch angles `(ϑ, ψ)` of the arbitrary-state transfer.
pub const ARBITRARY_INITIAL: (f64, f64) = (PI / 3.0, 0.0);
pub const ARBITRARY_TARGET: (f64, f64) = (2.0 * PI / 3.0, PI / 2.0);

/// State-to-state transfer `(π/3, 0) → (2π/3, π/2)`: N = 30, T = 13 µs,
/// `Δωmax/2π = 7.4 MHz`, `ω1max/2π = 448 kHz`, `p = (0.2, 0.8)`.
pub fn arbitrary_state(rng_seed: u64) -> Result<ControlProblem> {
    let psi0 = SpinState::from_bloch_angles(ARBITRARY_INITIAL.0, ARBITRARY_INITIAL.1);
    let psit = SpinState::from_bloch_angles(ARBITRARY_TARGET.0, ARBITRARY_TARGET.1);
    let family = ArbitraryStateAnsatz::new(
        30,
        13e-6,
        TAU * 448e3,
        TAU * 7.4e6,
        psi0.bloch_vector(),
        psit.bloch_vector(),
    )?;
    let member = EnsembleMember {
        label: "design".into(),
        rabi_scale: 1.0,
        offset: 0.0,
        perturbation: PerturbationSpec::None,
        initial: psi0,
        target: psit,
        sign: None,
        metric_weights: MetricWeights::new(0.2, 0.8, 0.0)?,
        weight: 1.0,
    };
    Ok(ControlProblem::new(
        Ensemble::new(Ansatz::ArbitraryState(family), vec![member])?,
        OptimizerPolicy {
            rng_seed,
            ..Default::default()
        },
    ))
}
