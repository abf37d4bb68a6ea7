//! Limited-memory quasi-Newton ascent with restarts from random seeds.

use std::collections::VecDeque;

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ansatz::Ansatz;
use crate::metrics::{
    ensemble_report, ensemble_target_and_gradient, Ensemble, EvalSettings, MetricReport,
};
use crate::ode::SolverOptions;
use crate::vanloan::Quadrature;
use crate::{Error, Execution, Result};

/// A differentiable scalar target to be maximized.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl<F> Objective for (usize, F)
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)> + Sync,
{
    fn dim(&self) -> usize {
        self.0
    }

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        (self.1)(x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerPolicy {
    /// Seeds are drawn i.i.d. uniform on `[lo, hi]`.
    pub seed_range: (f64, f64),
    /// An attempt that has not exceeded this target after `patience` steps is
    /// abandoned.
    pub threshold: f64,
    pub patience: usize,
    pub max_restarts: usize,
    pub max_iterations: usize,
    /// Stop when `‖∇Φ‖ ≤ grad_tol·max(1, |Φ|)`.
    pub grad_tol: f64,
    /// Number of stored curvature pairs.
    pub memory: usize,
    /// Optional bound on the infinity norm of a single step.
    pub max_step: Option<f64>,
    /// Independent seeds run under the restart rule; the best is kept.
    pub multi_start: usize,
    pub rng_seed: u64,
}

impl Default for OptimizerPolicy {
    fn default() -> Self {
        Self {
            seed_range: (-1.0, 1.0),
            threshold: 0.99,
            patience: 50,
            max_restarts: 20,
            max_iterations: 2000,
            grad_tol: 1e-8,
            memory: 10,
            max_step: None,
            multi_start: 1,
            rng_seed: 0,
        }
    }
}

impl OptimizerPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.patience < 1 {
            return Err(Error::domain("patience must be at least 1"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::domain(format!(
                "restart threshold {} outside (0, 1)",
                self.threshold
            )));
        }
        if !(self.seed_range.0 < self.seed_range.1) {
            return Err(Error::domain("seed range is empty"));
        }
        if self.multi_start < 1 || self.memory < 1 {
            return Err(Error::domain("multi_start and memory must be at least 1"));
        }
        Ok(())
    }
}

/// Draws a seed vector with i.i.d. uniform components on `range`.
pub fn draw_seed<R: Rng>(dim: usize, range: (f64, f64), rng: &mut R) -> Vec<f64> {
    let u = Uniform::new_inclusive(range.0, range.1);
    (0..dim).map(|_| u.sample(rng)).collect()
}

/// The RNG stream for multi-start index `start`.
pub fn rng_for(seed: u64, start: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(start as u64);
    rng
}

/// Curvature pairs for the two-loop recursion, stored for minimization of
/// `−Φ`.
#[derive(Clone, Debug, Default)]
pub struct LbfgsState {
    memory: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

impl LbfgsState {
    pub fn new(memory: usize) -> Self {
        Self {
            memory: memory.max(1),
            pairs: VecDeque::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    /// Ascent direction `H·∇Φ` with `H` the inverse-Hessian estimate of `−Φ`.
    pub fn direction(&self, grad: &[f64]) -> Vec<f64> {
        let mut q = grad.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        q
    }

    /// Stores `(s, y)` with `y = −(∇Φ′ − ∇Φ)` when its curvature is usable.
    pub fn update(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        if !(sy > 1e-12 * norm(&s) * norm(&y)) {
            return false;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
        true
    }
}

/// A point with its target value and gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Iterate {
    pub x: Vec<f64>,
    pub phi: f64,
    pub grad: Vec<f64>,
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

fn evaluate(obj: &dyn Objective, x: Vec<f64>) -> Option<Iterate> {
    match obj.value_and_gradient(&x) {
        Ok((phi, grad)) if phi.is_finite() && grad.iter().all(|g| g.is_finite()) => {
            Some(Iterate { x, phi, grad })
        }
        Ok(_) => None,
        Err(e) => {
            log::debug!("trial point rejected: {e}");
            None
        }
    }
}

/// One quasi-Newton ascent step with backtracking; guarantees
/// `Φ(x′) ≥ Φ(x)`. Trial points whose evaluation fails are treated as
/// rejected.
pub fn line_search_step(
    obj: &dyn Objective,
    current: &Iterate,
    state: &mut LbfgsState,
    max_step: Option<f64>,
) -> Result<Iterate> {
    let gnorm = norm(&current.grad);
    if !(gnorm > 0.0) {
        return Err(Error::StepUnderflow);
    }
    let mut d = state.direction(&current.grad);
    let mut slope = dot(&d, &current.grad);
    let steepest = state.is_empty() || !(slope > 0.0);
    if steepest {
        if !state.is_empty() {
            state.clear();
        }
        d = current.grad.iter().map(|g| g / gnorm).collect();
        slope = gnorm;
    }
    let mut alpha = 1.0;
    if let Some(m) = max_step {
        let dmax = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if dmax > m {
            alpha = m / dmax;
        }
    }
    let xscale = 1.0 + norm(&current.x);
    let mut accepted = None;
    for _ in 0..MAX_HALVINGS {
        if alpha * norm(&d) < 1e-15 * xscale {
            break;
        }
        let x: Vec<f64> = current
            .x
            .iter()
            .zip(&d)
            .map(|(xi, di)| xi + alpha * di)
            .collect();
        if let Some(trial) = evaluate(obj, x) {
            if trial.phi >= current.phi + ARMIJO * alpha * slope {
                accepted = Some((alpha, trial));
                break;
            }
            // Quadratic model through Φ(0), Φ′(0), Φ(α).
            let curv = trial.phi - current.phi - slope * alpha;
            let aq = if curv < 0.0 {
                -slope * alpha * alpha / (2.0 * curv)
            } else {
                0.5 * alpha
            };
            alpha = aq.clamp(0.1 * alpha, 0.5 * alpha);
        } else {
            alpha *= 0.5;
        }
    }
    let (alpha, mut next) = accepted.ok_or(Error::StepUnderflow)?;

    // Without curvature information the unit step is poorly scaled; refine it
    // once with the interpolated maximizer of the same quadratic model.
    if steepest {
        let curv = next.phi - current.phi - slope * alpha;
        if curv < 0.0 {
            let mut aq = -slope * alpha * alpha / (2.0 * curv);
            if let Some(m) = max_step {
                let dmax = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                aq = aq.min(m / dmax);
            }
            if aq.is_finite() && (aq - alpha).abs() > 1e-3 * alpha {
                let x = current
                    .x
                    .iter()
                    .zip(&d)
                    .map(|(xi, di)| xi + aq * di)
                    .collect();
                if let Some(t) = evaluate(obj, x) {
                    if t.phi > next.phi {
                        next = t;
                    }
                }
            }
        }
    }

    let s: Vec<f64> = next.x.iter().zip(&current.x).map(|(a, b)| a - b).collect();
    let y: Vec<f64> = next
        .grad
        .iter()
        .zip(&current.grad)
        .map(|(a, b)| b - a)
        .collect();
    state.update(s, y);
    Ok(next)
}

/// One row of the iteration trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// Multi-start index.
    pub start: usize,
    /// Attempt index within the start (0 before the first restart).
    pub attempt: usize,
    /// Step index within the attempt; reset by every restart.
    pub step: usize,
    pub phi: f64,
    pub grad_norm: f64,
    /// True on the first row of an attempt that follows a restart.
    pub restart: bool,
}

/// Why an attempt ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    StepUnderflow,
    MaxIterations,
    Patience,
    SeedFailed,
}

/// Outcome of [`optimize_objective`].
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub x: Vec<f64>,
    pub phi: f64,
    pub trace: Vec<TraceRow>,
    /// Restarts consumed by the start that produced `x`.
    pub restarts: usize,
    pub converged: bool,
    pub termination: Termination,
    pub evaluations: usize,
}

struct Counting<'a> {
    inner: &'a dyn Objective,
    count: std::sync::atomic::AtomicUsize,
}

impl Objective for Counting<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.count
            .fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        self.inner.value_and_gradient(x)
    }
}

/// Runs one start: attempts from fresh seeds until one exceeds the threshold
/// or the restart budget is exhausted.
fn run_start(obj: &dyn Objective, policy: &OptimizerPolicy, start: usize) -> Outcome {
    let mut rng = rng_for(policy.rng_seed, start);
    let mut trace = Vec::new();
    let mut best: Option<(Iterate, Termination, usize)> = None;
    let mut attempt = 0;
    loop {
        let x0 = draw_seed(obj.dim(), policy.seed_range, &mut rng);
        let (term, end) = match evaluate(obj, x0) {
            None => (Termination::SeedFailed, None),
            Some(mut it) => {
                let mut state = LbfgsState::new(policy.memory);
                let mut step = 0;
                let term = loop {
                    let gn = norm(&it.grad);
                    trace.push(TraceRow {
                        start,
                        attempt,
                        step,
                        phi: it.phi,
                        grad_norm: gn,
                        restart: attempt > 0 && step == 0,
                    });
                    if gn <= policy.grad_tol * it.phi.abs().max(1.0) {
                        break Termination::GradientTolerance;
                    }
                    if step == policy.patience && it.phi <= policy.threshold {
                        break Termination::Patience;
                    }
                    if step >= policy.max_iterations {
                        break Termination::MaxIterations;
                    }
                    match line_search_step(obj, &it, &mut state, policy.max_step) {
                        Ok(next) => it = next,
                        Err(_) => break Termination::StepUnderflow,
                    }
                    step += 1;
                };
                (term, Some(it))
            }
        };
        if let Some(it) = end {
            let better = best.as_ref().is_none_or(|(b, _, _)| it.phi > b.phi);
            let success = it.phi > policy.threshold;
            if better {
                best = Some((it, term, attempt));
            }
            if success {
                break;
            }
        }
        if attempt >= policy.max_restarts {
            break;
        }
        attempt += 1;
    }
    match best {
        Some((it, termination, _)) => Outcome {
            converged: it.phi > policy.threshold,
            x: it.x,
            phi: it.phi,
            trace,
            restarts: attempt,
            termination,
            evaluations: 0,
        },
        None => Outcome {
            x: Vec::new(),
            phi: f64::NEG_INFINITY,
            trace,
            restarts: attempt,
            converged: false,
            termination: Termination::SeedFailed,
            evaluations: 0,
        },
    }
}

/// Maximizes `obj` under `policy`; the engine behind [`optimize`], exposed
/// for surrogate targets.
pub fn optimize_objective(
    obj: &dyn Objective,
    policy: &OptimizerPolicy,
    execution: Execution,
) -> Result<Outcome> {
    policy.validate()?;
    let counting = Counting {
        inner: obj,
        count: Default::default(),
    };
    let outcomes = execution.map_range(policy.multi_start, |s| run_start(&counting, policy, s));
    let mut trace = Vec::new();
    let mut best: Option<Outcome> = None;
    for o in outcomes {
        trace.extend_from_slice(&o.trace);
        if best.as_ref().is_none_or(|b| o.phi > b.phi) {
            best = Some(o);
        }
    }
    let mut best = best.expect("multi_start >= 1");
    if best.x.is_empty() {
        return Err(Error::NoConvergence {
            restarts: best.restarts,
            best_phi: f64::NAN,
        });
    }
    best.trace = trace;
    best.evaluations = counting.count.into_inner();
    Ok(best)
}

/// Ansatz, optimization set and search policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlProblem {
    pub ensemble: Ensemble,
    pub policy: OptimizerPolicy,
    /// Settings inside the loop.
    pub settings: EvalSettings,
    /// Settings for the final certificate.
    pub report_settings: EvalSettings,
}

impl ControlProblem {
    pub fn new(ensemble: Ensemble, policy: OptimizerPolicy) -> Self {
        Self {
            ensemble,
            policy,
            settings: EvalSettings::default(),
            report_settings: EvalSettings::verification(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ensemble.validate()?;
        self.policy.validate()
    }
}

impl Objective for ControlProblem {
    fn dim(&self) -> usize {
        self.ensemble.num_params()
    }

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        ensemble_target_and_gradient(&self.ensemble, x, &self.settings)
    }
}

/// Where a pulse came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub rng_seed: u64,
    pub solver_optimization: SolverOptions,
    pub solver_report: SolverOptions,
    pub quadrature: Quadrature,
}

/// Result of [`optimize`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizedPulse {
    pub family: Ansatz,
    pub x: Vec<f64>,
    /// Target reached inside the loop.
    pub phi: f64,
    pub report: MetricReport,
    pub trace: Vec<TraceRow>,
    pub restarts: usize,
    /// False when the restart budget ran out below the threshold.
    pub converged: bool,
    pub termination: Termination,
    pub evaluations: usize,
    pub provenance: Provenance,
}

impl OptimizedPulse {
    /// `Err(NoConvergence)` for a flagged result.
    pub fn ensure_converged(&self) -> Result<&Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NoConvergence {
                restarts: self.restarts,
                best_phi: self.phi,
            })
        }
    }
}

/// Searches for the best pulse of `problem` and certifies it at the report
/// tolerances.
pub fn optimize(problem: &ControlProblem) -> Result<OptimizedPulse> {
    problem.validate()?;
    let outcome = optimize_objective(problem, &problem.policy, Execution::Sequential)?;
    if !outcome.converged {
        log::warn!(
            "no attempt exceeded {} after {} restarts; best {}",
            problem.policy.threshold,
            outcome.restarts,
            outcome.phi
        );
    }
    let report = ensemble_report(&problem.ensemble, &outcome.x, &problem.report_settings)?;
    Ok(OptimizedPulse {
        family: (*problem.ensemble.family).clone(),
        x: outcome.x,
        phi: outcome.phi,
        report,
        trace: outcome.trace,
        restarts: outcome.restarts,
        converged: outcome.converged,
        termination: outcome.termination,
        evaluations: outcome.evaluations,
        provenance: Provenance {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            rng_seed: problem.policy.rng_seed,
            solver_optimization: problem.settings.solver,
            solver_report: problem.report_settings.solver,
            quadrature: problem.settings.quadrature,
        },
    })
}
