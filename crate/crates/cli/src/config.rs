//! Run configuration: one JSON document describing the problem, the
//! simulations to run on the resulting pulse and the output directory.
//!
//! Frequencies and times are written in the declared `units` and converted to
//! rad/s and seconds when the problem is built. [`RunConfig::resolved`] fills
//! every default explicitly; the resolved document is what gets hashed and
//! dumped next to the results.

use std::path::PathBuf;

use adiabat::ansatz::{
    Ansatz, ArbitraryStateAnsatz, BaselineShape, BaselineWaveform, PolyAfpAnsatz,
};
use adiabat::metrics::{Ensemble, EnsembleMember, EvalSettings, MetricWeights, PerturbationSpec};
use adiabat::ode::SolverOptions;
use adiabat::optimizer::{ControlProblem, OptimizerPolicy};
use adiabat::simulator::DipolarConvention;
use adiabat::spinalg::{Sign, SpinState};
use adiabat::units::{Units, GAMMA_ELECTRON, GAMMA_P31, GAMMA_PROTON};
use adiabat::vanloan::Quadrature;
use adiabat::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Optimize,
    Simulate,
    Sweep,
    Export,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Filled from the subcommand when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    pub units: Units,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub simulations: Simulations,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("adiabat_out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub ansatz: AnsatzConfig,
    /// Default for members that do not set their own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_weights: Option<MetricWeights>,
    /// Default for members that do not set their own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationSpec>,
    pub members: Vec<MemberConfig>,
    #[serde(default)]
    pub policy: OptimizerPolicy,
    #[serde(default)]
    pub numerics: Numerics,
}

/// Solver tolerances inside the loop and for reports, and the gradient
/// quadrature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    pub optimization: SolverOptions,
    pub report: SolverOptions,
    pub quadrature: Quadrature,
    /// Samples of the α(t) diagnostic in reports.
    pub tip_samples: usize,
}

impl Default for Numerics {
    fn default() -> Self {
        let r = EvalSettings::verification();
        Self {
            optimization: SolverOptions::optimization(),
            report: r.solver,
            quadrature: Quadrature::default(),
            tip_samples: r.tip_samples,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AnsatzConfig {
    PolyAfp {
        num_params: usize,
        duration: f64,
        omega1_max: f64,
        delta_omega_max: f64,
    },
    ArbitraryState {
        num_params: usize,
        duration: f64,
        omega1_max: f64,
        delta_omega_max: f64,
        initial: StateConfig,
        target: StateConfig,
    },
    Wurst {
        duration: f64,
        omega1_max: f64,
        delta_omega_max: f64,
        #[serde(default = "wurst_k")]
        k: f64,
    },
    SechTanh {
        duration: f64,
        omega1_max: f64,
        delta_omega_max: f64,
        #[serde(default = "sech_beta")]
        beta: f64,
    },
}

fn wurst_k() -> f64 {
    BaselineWaveform::DEFAULT_WURST_K
}

fn sech_beta() -> f64 {
    BaselineWaveform::DEFAULT_SECH_BETA
}

impl AnsatzConfig {
    fn omega1_max(&self) -> f64 {
        match self {
            AnsatzConfig::PolyAfp { omega1_max, .. }
            | AnsatzConfig::ArbitraryState { omega1_max, .. }
            | AnsatzConfig::Wurst { omega1_max, .. }
            | AnsatzConfig::SechTanh { omega1_max, .. } => *omega1_max,
        }
    }

    pub fn build(&self, units: Units) -> Result<Ansatz> {
        let f = |v: f64| units.frequency_to_rad_s(v);
        let t = |v: f64| units.time_to_s(v);
        let built = match self {
            AnsatzConfig::PolyAfp {
                num_params,
                duration,
                omega1_max,
                delta_omega_max,
            } => Ansatz::PolyAfp(PolyAfpAnsatz::new(
                *num_params,
                t(*duration),
                f(*omega1_max),
                f(*delta_omega_max),
            )?),
            AnsatzConfig::ArbitraryState {
                num_params,
                duration,
                omega1_max,
                delta_omega_max,
                initial,
                target,
            } => Ansatz::ArbitraryState(ArbitraryStateAnsatz::new(
                *num_params,
                t(*duration),
                f(*omega1_max),
                f(*delta_omega_max),
                initial.state()?.bloch_vector(),
                target.state()?.bloch_vector(),
            )?),
            AnsatzConfig::Wurst {
                duration,
                omega1_max,
                delta_omega_max,
                k,
            } => Ansatz::Baseline(BaselineWaveform::new(
                BaselineShape::Wurst { k: *k },
                t(*duration),
                f(*omega1_max),
                f(*delta_omega_max),
            )?),
            AnsatzConfig::SechTanh {
                duration,
                omega1_max,
                delta_omega_max,
                beta,
            } => Ansatz::Baseline(BaselineWaveform::new(
                BaselineShape::SechTanh { beta: *beta },
                t(*duration),
                f(*omega1_max),
                f(*delta_omega_max),
            )?),
        };
        Ok(built)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedState {
    Up,
    Down,
    PlusX,
    MinusX,
    PlusY,
    MinusY,
}

/// A pure spin state: a name, Bloch angles `(θ, φ)`, or a Bloch vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateConfig {
    Named(NamedState),
    Angles { theta: f64, phi: f64 },
    Bloch { bloch: [f64; 3] },
}

impl StateConfig {
    pub fn state(&self) -> Result<SpinState> {
        Ok(match *self {
            StateConfig::Named(n) => {
                let v = match n {
                    NamedState::Up => return Ok(SpinState::up()),
                    NamedState::Down => return Ok(SpinState::down()),
                    NamedState::PlusX => [1.0, 0.0, 0.0],
                    NamedState::MinusX => [-1.0, 0.0, 0.0],
                    NamedState::PlusY => [0.0, 1.0, 0.0],
                    NamedState::MinusY => [0.0, -1.0, 0.0],
                };
                SpinState::from_bloch_vector(v)?
            }
            StateConfig::Angles { theta, phi } => SpinState::from_bloch_angles(theta, phi),
            StateConfig::Bloch { bloch } => SpinState::from_bloch_vector(bloch)?,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Multiplier of the transverse field; exclusive with `omega1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rabi_scale: Option<f64>,
    /// Absolute maximum Rabi frequency of this member.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega1: Option<f64>,
    /// Resonance offset.
    #[serde(default)]
    pub offset: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<StateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<StateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign: Option<Sign>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_weights: Option<MetricWeights>,
    /// Defaults to `1/|Γ|` when no member sets a weight.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

/// `points` evenly spaced values on `[from, to]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub from: f64,
    pub to: f64,
    pub points: usize,
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        match self.points {
            0 => Vec::new(),
            1 => vec![self.from],
            n => (0..n)
                .map(|i| self.from + (self.to - self.from) * i as f64 / (n - 1) as f64)
                .collect(),
        }
    }

    fn check(&self, path: &str) -> Result<()> {
        if self.points == 0 || !self.from.is_finite() || !self.to.is_finite() || self.to < self.from
        {
            return Err(Error::config(
                path,
                "grid needs finite from <= to and at least one point",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Simulations {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bloch: Option<BlochConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rabi_sweep: Option<RabiSweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset_sweep: Option<OffsetSweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multispin: Option<MultispinConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selectivity: Option<SelectivityConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlochConfig {
    pub samples: usize,
    /// Index of the member whose Rabi scale, offset and initial state are used.
    #[serde(default)]
    pub member: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RabiSweepConfig {
    pub omega1: Grid,
    #[serde(default)]
    pub member: usize,
    /// Two-column CSV `ω1, p(ω1)` (ω1 in config units) for the weighted
    /// inversion signal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_file: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}

fn default_nodes() -> usize {
    33
}

fn default_truncation() -> f64 {
    5.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub n_max: usize,
    pub t_wait: f64,
    pub t2: f64,
    pub t2_star: f64,
    #[serde(default)]
    pub detuning: f64,
    #[serde(default = "default_nodes")]
    pub offset_nodes: usize,
    #[serde(default = "default_truncation")]
    pub truncation: f64,
    /// Uniform Rabi distribution; the nominal pulse when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega1: Option<Grid>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffsetSweepConfig {
    pub n_pulses: usize,
    pub detuning: Grid,
    pub t_wait: f64,
    pub t2: f64,
    pub t2_star: f64,
    #[serde(default = "one")]
    pub rabi_scale: f64,
    /// Longer trains are simulated to this length and extrapolated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_cap: Option<usize>,
    #[serde(default = "default_nodes")]
    pub offset_nodes: usize,
    #[serde(default = "default_truncation")]
    pub truncation: f64,
    /// Uniform Rabi distribution averaged at each detuning; exclusive with
    /// a non-unit `rabi_scale`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega1: Option<Grid>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Species {
    Electron,
    Proton,
    P31,
}

/// Gyromagnetic ratio: a species name or a value in rad/s/T.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gamma {
    Species(Species),
    Value(f64),
}

impl Gamma {
    pub fn rad_s_per_t(self) -> f64 {
        match self {
            Gamma::Species(Species::Electron) => GAMMA_ELECTRON,
            Gamma::Species(Species::Proton) => GAMMA_PROTON,
            Gamma::Species(Species::P31) => GAMMA_P31,
            Gamma::Value(v) => v,
        }
    }
}

/// Spins on the center and face centers of a cube, randomly displaced.
/// Lengths in meters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultispinConfig {
    pub cube_side: f64,
    pub jitter: f64,
    pub gamma: Gamma,
    pub seed: u64,
    pub omega1: Grid,
    #[serde(default)]
    pub convention: DipolarConvention,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectivityConfig {
    pub offset: Grid,
    pub repetitions: u32,
    #[serde(default = "one")]
    pub rabi_scale: f64,
    /// Member supplying the initial and target states.
    #[serde(default)]
    pub member: usize,
}

/// Parses a configuration document, reporting the JSON path of the first
/// offending field.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(
            if path == "." {
                "<root>".to_string()
            } else {
                path
            },
            e.into_inner().to_string(),
        )
    })?;
    cfg.resolved()?;
    Ok(cfg)
}

fn member_path(i: usize, field: &str) -> String {
    format!("problem.members[{i}].{field}")
}

impl RunConfig {
    /// Copy with every default made explicit and the problem validated.
    pub fn resolved(&self) -> Result<RunConfig> {
        let mut c = self.clone();
        let p = &mut c.problem;
        if p.members.is_empty() {
            return Err(Error::config(
                "problem.members",
                "optimization set is empty",
            ));
        }
        let w1max = p.ansatz.omega1_max();
        let n = p.members.len();
        let explicit = p.members.iter().filter(|m| m.weight.is_some()).count();
        if explicit != 0 && explicit != n {
            return Err(Error::config(
                "problem.members",
                "either every member sets a weight or none does",
            ));
        }
        for (i, m) in p.members.iter_mut().enumerate() {
            if m.label.is_none() {
                m.label = Some(format!("member_{i}"));
            }
            match (m.rabi_scale, m.omega1.take()) {
                (Some(_), Some(_)) => {
                    return Err(Error::config(
                        member_path(i, "omega1"),
                        "set either rabi_scale or omega1, not both",
                    ))
                }
                (None, Some(w)) => m.rabi_scale = Some(w / w1max),
                (None, None) => m.rabi_scale = Some(1.0),
                (Some(_), None) => {}
            }
            if !m.rabi_scale.is_some_and(|r| r.is_finite() && r >= 0.0) {
                return Err(Error::config(
                    member_path(i, "rabi_scale"),
                    "must be finite and non-negative",
                ));
            }
            if m.perturbation.is_none() {
                m.perturbation = Some(p.perturbation.clone().unwrap_or_default());
            }
            m.initial.get_or_insert(StateConfig::Named(NamedState::Up));
            m.target.get_or_insert(StateConfig::Named(NamedState::Down));
            if m.metric_weights.is_none() {
                m.metric_weights = Some(p.metric_weights.ok_or_else(|| {
                    Error::config(
                        member_path(i, "metric_weights"),
                        "no metric weights and no problem-level default",
                    )
                })?);
            }
            if let Err(e) = m.metric_weights.unwrap().validate() {
                return Err(Error::config(
                    member_path(i, "metric_weights"),
                    e.to_string(),
                ));
            }
            if m.weight.is_none() {
                m.weight = Some(1.0 / n as f64);
            }
            let w = m.weight.unwrap();
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::config(
                    member_path(i, "weight"),
                    format!("{w} outside [0, 1]"),
                ));
            }
            for (field, s) in [("initial", m.initial), ("target", m.target)] {
                s.unwrap()
                    .state()
                    .map_err(|e| Error::config(member_path(i, field), e.to_string()))?;
            }
        }
        let sum: f64 = {
            let mut s = 0.0f64;
            let mut comp = 0.0f64;
            for m in &p.members {
                let y = m.weight.unwrap() - comp;
                let t = s + y;
                comp = (t - s) - y;
                s = t;
            }
            s
        };
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::config(
                "problem.members[*].weight",
                format!("member weights sum to {sum}, expected 1"),
            ));
        }
        p.policy
            .validate()
            .map_err(|e| Error::config("problem.policy", e.to_string()))?;
        p.ansatz
            .build(c.units)
            .map_err(|e| Error::config("problem.ansatz", e.to_string()))?;
        c.check_simulations()?;
        c.mode.get_or_insert(Mode::Optimize);
        Ok(c)
    }

    fn check_simulations(&self) -> Result<()> {
        let s = &self.simulations;
        let n = self.problem.members.len();
        let member = |path: &str, i: usize| {
            if i >= n {
                Err(Error::config(
                    path,
                    format!("member index {i} out of range (have {n})"),
                ))
            } else {
                Ok(())
            }
        };
        if let Some(b) = &s.bloch {
            member("simulations.bloch.member", b.member)?;
        }
        if let Some(r) = &s.rabi_sweep {
            r.omega1.check("simulations.rabi_sweep.omega1")?;
            member("simulations.rabi_sweep.member", r.member)?;
        }
        if let Some(o) = &s.offset_sweep {
            o.detuning.check("simulations.offset_sweep.detuning")?;
            if o.n_pulses == 0 {
                return Err(Error::config(
                    "simulations.offset_sweep.n_pulses",
                    "must be at least 1",
                ));
            }
            positive_times("simulations.offset_sweep", &[o.t_wait, o.t2, o.t2_star])?;
            if let Some(g) = &o.omega1 {
                g.check("simulations.offset_sweep.omega1")?;
                if o.rabi_scale != 1.0 {
                    return Err(Error::config(
                        "simulations.offset_sweep.omega1",
                        "set either rabi_scale or omega1, not both",
                    ));
                }
            }
        }
        if let Some(t) = &s.train {
            if t.n_max == 0 {
                return Err(Error::config(
                    "simulations.train.n_max",
                    "must be at least 1",
                ));
            }
            positive_times("simulations.train", &[t.t_wait, t.t2, t.t2_star])?;
            if let Some(g) = &t.omega1 {
                g.check("simulations.train.omega1")?;
            }
        }
        if let Some(m) = &s.multispin {
            m.omega1.check("simulations.multispin.omega1")?;
            if !(m.cube_side > 0.0) || !(m.jitter >= 0.0) || !(m.jitter < m.cube_side / 2.0) {
                return Err(Error::config(
                    "simulations.multispin",
                    "need cube_side > 0 and 0 <= jitter < cube_side/2",
                ));
            }
        }
        if let Some(sel) = &s.selectivity {
            sel.offset.check("simulations.selectivity.offset")?;
            member("simulations.selectivity.member", sel.member)?;
            if sel.repetitions == 0 {
                return Err(Error::config(
                    "simulations.selectivity.repetitions",
                    "must be at least 1",
                ));
            }
        }
        Ok(())
    }

    /// SHA-256 of the resolved document without the output directory.
    pub fn hash(&self) -> Result<String> {
        let mut r = self.resolved()?;
        r.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&r)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    /// The optimization problem in canonical units.
    pub fn build_problem(&self) -> Result<ControlProblem> {
        let r = self.resolved()?;
        let u = r.units;
        let family = r.problem.ansatz.build(u)?;
        let members = r
            .problem
            .members
            .iter()
            .map(|m| {
                Ok(EnsembleMember {
                    label: m.label.clone().unwrap(),
                    rabi_scale: m.rabi_scale.unwrap(),
                    offset: u.frequency_to_rad_s(m.offset),
                    perturbation: m.perturbation.clone().unwrap(),
                    initial: m.initial.unwrap().state()?,
                    target: m.target.unwrap().state()?,
                    sign: m.sign,
                    metric_weights: m.metric_weights.unwrap(),
                    weight: m.weight.unwrap(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut problem =
            ControlProblem::new(Ensemble::new(family, members)?, r.problem.policy.clone());
        let nm = r.problem.numerics;
        problem.settings.solver = nm.optimization;
        problem.settings.quadrature = nm.quadrature;
        problem.report_settings.solver = nm.report;
        problem.report_settings.quadrature = nm.quadrature;
        problem.report_settings.tip_samples = nm.tip_samples;
        Ok(problem)
    }

    pub fn freq(&self, v: f64) -> f64 {
        self.units.frequency_to_rad_s(v)
    }

    pub fn time(&self, v: f64) -> f64 {
        self.units.time_to_s(v)
    }
}

fn positive_times(path: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| *v > 0.0 && v.is_finite()) {
        Ok(())
    } else {
        Err(Error::config(
            path,
            "t_wait, t2 and t2_star must be positive and finite",
        ))
    }
}
