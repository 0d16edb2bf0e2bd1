//! Probabilistic behavioral tuning.
//!
//! A complex *system* network is tuned until its frequency response to
//! random load steps can be imitated by a simple *specification* network.
//! The specification gets one parameter copy `q_j` per scenario `j`, and
//! the tuner descends jointly on the system gains `p` and all copies. The
//! loss is
//!
//! ```text
//! Δo = (1/N) Σ_j Σ_i Σ_t (ω_i,sys^j(t) - ω_i,spec^j(t))²
//! ```
//!
//! with `t` over uniform sample points and no normalization in time.
//! Gradients come from forward-mode dual tangents carried through the
//! integrator.

mod adam;
mod scenario;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{adam_step, AdamOptions, AdamState};
pub use scenario::{sample_scenarios, uniform_gains, Scenario};

use crate::netdyn::{Element, NetError, NetworkSystem};
use crate::odesolve::{
    find_steady_state, integrate, jacobian, IntegratorOptions, Method, OdeSystem, Signal, SolveError, Time,
    Trajectory,
};
use crate::scalar::{Dual, Scalar};
use crate::symcore::SymError;

/// Tangent lanes per forward pass.
pub const LANES: usize = 8;

#[derive(Debug, Error)]
pub enum TuneError {
    #[error("invalid tuning problem: {0}")]
    InvalidProblem(String),
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("integration failed in scenario {scenario}: {source}")]
    IntegrationFailure {
        scenario: usize,
        #[source]
        source: SolveError,
    },
    #[error("loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

impl From<SymError> for TuneError {
    fn from(e: SymError) -> Self {
        TuneError::Solve(SolveError::Evaluation(e))
    }
}

/// `Δo` over outputs shaped `[scenario][time][bus]`.
pub fn output_metric(sys: &[Vec<Vec<f64>>], spec: &[Vec<Vec<f64>>]) -> Result<f64, TuneError> {
    let mismatch = |what, expected, got| TuneError::DimensionMismatch { what, expected, got };
    if sys.len() != spec.len() {
        return Err(mismatch("scenarios", sys.len(), spec.len()));
    }
    if sys.is_empty() {
        return Err(mismatch("scenarios", 1, 0));
    }
    let mut total = 0.0;
    for (a, b) in sys.iter().zip(spec) {
        if a.len() != b.len() || a.len() != sys[0].len() {
            return Err(mismatch("sample times", sys[0].len(), b.len()));
        }
        for (ra, rb) in a.iter().zip(b) {
            if ra.len() != rb.len() || ra.len() != sys[0][0].len() {
                return Err(mismatch("buses", sys[0][0].len(), rb.len()));
            }
            total += ra.iter().zip(rb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        }
    }
    Ok(total / sys.len() as f64)
}

/// Value and forward-mode gradient of `f` at `x`, using `ceil(len / 8)`
/// dual passes.
pub fn gradient<F, E>(mut f: F, x: &[f64]) -> Result<(f64, Vec<f64>), E>
where
    F: FnMut(&[Dual<LANES>]) -> Result<Dual<LANES>, E>,
{
    let mut g = vec![0.0; x.len()];
    let mut value = None;
    let mut start = 0;
    loop {
        let end = (start + LANES).min(x.len());
        let xd: Vec<Dual<LANES>> = x
            .iter()
            .enumerate()
            .map(|(i, &v)| if (start..end).contains(&i) { Dual::variable(v, i - start) } else { Dual::constant(v) })
            .collect();
        let y = f(&xd)?;
        value.get_or_insert(y.re);
        g[start..end].copy_from_slice(&y.eps[..end - start]);
        start = end;
        if start >= x.len() {
            break;
        }
    }
    Ok((value.expect("at least one pass runs"), g))
}

fn default_horizon() -> f64 {
    30.0
}
fn default_samples() -> usize {
    100
}
fn default_step() -> f64 {
    0.05
}
fn default_tunable() -> String {
    "D".into()
}
fn default_output() -> String {
    "omega".into()
}

/// Simulation settings shared by every scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSettings {
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Fixed RK4 step.
    #[serde(default = "default_step")]
    pub step: f64,
    /// Node parameter tuned at every bus.
    #[serde(default = "default_tunable")]
    pub tunable: String,
    /// Node state compared between system and specification.
    #[serde(default = "default_output")]
    pub output: String,
}

impl Default for ProblemSettings {
    fn default() -> Self {
        ProblemSettings {
            horizon: default_horizon(),
            samples: default_samples(),
            step: default_step(),
            tunable: default_tunable(),
            output: default_output(),
        }
    }
}

/// Sampled outputs, row-major `[time][bus]`, and their derivatives with
/// respect to each tunable.
struct Sampled {
    values: Vec<f64>,
    tangents: Vec<Vec<f64>>,
}

/// One network with its tunables, outputs and per-scenario copies.
#[derive(Debug, Clone)]
struct Side {
    base: NetworkSystem,
    per_scenario: Vec<NetworkSystem>,
    params: Vec<f64>,
    tunable: Vec<usize>,
    outputs: Vec<usize>,
    x0: Vec<f64>,
}

const STEADY_TOL: f64 = 1e-10;

impl Side {
    fn new(net: NetworkSystem, scenarios: &[Scenario], settings: &ProblemSettings) -> Result<Side, TuneError> {
        let n = net.topology().node_count();
        let tunable = (1..=n)
            .map(|id| net.param_index(Element::Node(id), &settings.tunable))
            .collect::<Result<Vec<_>, _>>()?;
        let outputs = (1..=n).map(|id| net.find_state(id, &settings.output)).collect::<Result<Vec<_>, _>>()?;
        let params = net.default_params()?;
        let opts = IntegratorOptions { newton_tol: STEADY_TOL, ..Default::default() };
        let x0 = find_steady_state(&net, &vec![0.0; net.dim()], &params, 0.0, &opts)?;
        let per_scenario = scenarios
            .iter()
            .map(|s| {
                let mut c = net.clone();
                c.set_signal(s.bus, "P_dist", Signal::step(0.0, 0.0, s.delta_p))?;
                Ok(c)
            })
            .collect::<Result<Vec<_>, NetError>>()?;
        Ok(Side { base: net, per_scenario, params, tunable, outputs, x0 })
    }

    fn with_gains(&self, theta: &[f64]) -> Vec<f64> {
        let mut p = self.params.clone();
        for (&k, &v) in self.tunable.iter().zip(theta) {
            p[k] = v;
        }
        p
    }

    /// Pre-disturbance steady state at `theta` and its sensitivity
    /// `dx0/dtheta` (column-major, one column per tunable).
    fn steady(&self, theta: &[f64], with_tangent: bool) -> Result<(Vec<f64>, Vec<Vec<f64>>), SolveError> {
        let p = self.with_gains(theta);
        let n = self.base.dim();
        let t = Time::at(0.0);
        let mut f = vec![0.0; n];
        self.base.rhs(&self.x0, &p, t, &mut f, &mut Default::default())?;
        let x0 = if f.iter().all(|v| v.abs() < STEADY_TOL) {
            self.x0.clone()
        } else {
            let opts = IntegratorOptions { newton_tol: STEADY_TOL, ..Default::default() };
            find_steady_state(&self.base, &self.x0, &p, 0.0, &opts)?
        };
        if !with_tangent {
            return Ok((x0, Vec::new()));
        }
        // f(x0(θ), θ) = 0 gives J_x·dx0 = -J_θ; the minimum-norm solution
        // leaves symmetry directions (a common angle shift) untouched.
        let cols: Vec<usize> = (0..n).collect();
        let (_, jx) = jacobian(&self.base, &x0, &p, t, &cols)?;
        let xd: Vec<Dual<LANES>> = x0.iter().map(|&v| Dual::constant(v)).collect();
        let mut out = vec![Dual::<LANES>::constant(0.0); n];
        let mut ws = crate::blocksys::Scratch::new();
        let mut jtheta = vec![vec![0.0; n]; theta.len()];
        for (c, chunk) in self.tunable.chunks(LANES).enumerate() {
            let mut pd: Vec<Dual<LANES>> = p.iter().map(|&v| Dual::constant(v)).collect();
            for (lane, &k) in chunk.iter().enumerate() {
                pd[k].eps[lane] = 1.0;
            }
            self.base.rhs(&xd, &pd, t, &mut out, &mut ws)?;
            for lane in 0..chunk.len() {
                for i in 0..n {
                    jtheta[c * LANES + lane][i] = out[i].eps[lane];
                }
            }
        }
        if jtheta.iter().all(|col| col.iter().all(|&v| v == 0.0)) {
            return Ok((x0, jtheta));
        }
        let svd = DMatrix::from_row_slice(n, n, &jx).svd(true, true);
        let eps = 1e-12 * svd.singular_values.max().max(1.0);
        let sens = jtheta
            .iter()
            .map(|col| {
                svd.solve(&DVector::from_column_slice(col), eps)
                    .map(|d| d.iter().map(|v| -v).collect())
                    .map_err(|_| SolveError::NewtonDivergence { t: 0.0 })
            })
            .collect::<Result<Vec<Vec<f64>>, _>>()?;
        Ok((x0, sens))
    }

    fn run<S: Scalar>(
        &self,
        j: usize,
        x0: &[S],
        p: &[S],
        times: &[f64],
        opts: &IntegratorOptions,
    ) -> Result<Vec<Vec<S>>, SolveError> {
        let traj = integrate(&self.per_scenario[j], x0, p, (0.0, *times.last().unwrap()), opts)?;
        let rows = traj.sample(times)?;
        Ok(rows.into_iter().map(|r| self.outputs.iter().map(|&k| r[k]).collect()).collect())
    }

    fn sampled(
        &self,
        j: usize,
        theta: &[f64],
        times: &[f64],
        opts: &IntegratorOptions,
        with_tangent: bool,
    ) -> Result<Sampled, SolveError> {
        let (x0, sens) = self.steady(theta, with_tangent)?;
        let p = self.with_gains(theta);
        if !with_tangent {
            let rows = self.run(j, &x0, &p, times, opts)?;
            return Ok(Sampled { values: rows.concat(), tangents: Vec::new() });
        }
        let mut values = Vec::new();
        let mut tangents = vec![Vec::new(); theta.len()];
        for (c, chunk) in self.tunable.chunks(LANES).enumerate() {
            let mut pd: Vec<Dual<LANES>> = p.iter().map(|&v| Dual::constant(v)).collect();
            let mut xd: Vec<Dual<LANES>> = x0.iter().map(|&v| Dual::constant(v)).collect();
            for (lane, &k) in chunk.iter().enumerate() {
                pd[k].eps[lane] = 1.0;
                for (xi, s) in xd.iter_mut().zip(&sens[c * LANES + lane]) {
                    xi.eps[lane] = *s;
                }
            }
            let rows = self.run(j, &xd, &pd, times, opts)?.concat();
            if c == 0 {
                values = rows.iter().map(|d| d.re).collect();
            }
            for lane in 0..chunk.len() {
                tangents[c * LANES + lane] = rows.iter().map(|d| d.eps[lane]).collect();
            }
        }
        Ok(Sampled { values, tangents })
    }
}

/// System and specification networks driven by a common scenario set.
#[derive(Debug, Clone)]
pub struct TuneProblem {
    system: Side,
    spec: Side,
    scenarios: Vec<Scenario>,
    times: Vec<f64>,
    settings: ProblemSettings,
}

/// Per-scenario loss and its gradients.
struct ScenarioLoss {
    loss: f64,
    grad_p: Vec<f64>,
    grad_q: Vec<f64>,
}

/// Runs `f` for every scenario on the current rayon pool. Results keep
/// scenario order and the first failing scenario is reported.
fn per_scenario<T: Send>(
    n: usize,
    f: impl Fn(usize) -> Result<T, SolveError> + Sync + Send,
) -> Result<Vec<T>, TuneError> {
    let results: Vec<Result<T, SolveError>> = (0..n).into_par_iter().map(f).collect();
    results
        .into_iter()
        .enumerate()
        .map(|(scenario, r)| r.map_err(|source| TuneError::IntegrationFailure { scenario, source }))
        .collect()
}

impl TuneProblem {
    /// Every node of both networks needs the tunable parameter and the
    /// output state named in `settings`, and both networks need the same
    /// number of nodes.
    pub fn new(
        system: NetworkSystem,
        spec: NetworkSystem,
        scenarios: Vec<Scenario>,
        settings: ProblemSettings,
    ) -> Result<TuneProblem, TuneError> {
        if scenarios.is_empty() {
            return Err(TuneError::InvalidProblem("no scenarios".into()));
        }
        if !(settings.horizon > 0.0 && settings.horizon.is_finite()) {
            return Err(TuneError::InvalidProblem(format!("horizon must be positive, got {}", settings.horizon)));
        }
        if settings.samples < 2 {
            return Err(TuneError::InvalidProblem("at least two sample times are needed".into()));
        }
        if !(settings.step > 0.0 && settings.step.is_finite()) {
            return Err(TuneError::InvalidProblem(format!("step must be positive, got {}", settings.step)));
        }
        let buses = system.topology().node_count();
        if spec.topology().node_count() != buses {
            return Err(TuneError::DimensionMismatch {
                what: "specification buses",
                expected: buses,
                got: spec.topology().node_count(),
            });
        }
        for s in &scenarios {
            if s.bus == 0 || s.bus > buses || !s.delta_p.is_finite() {
                return Err(TuneError::InvalidProblem(format!("bad scenario {s:?}")));
            }
        }
        let system = Side::new(system, &scenarios, &settings)?;
        let spec = Side::new(spec, &scenarios, &settings)?;
        let last = (settings.samples - 1) as f64;
        let times = (0..settings.samples)
            .map(|k| if k + 1 == settings.samples { settings.horizon } else { settings.horizon * k as f64 / last })
            .collect();
        Ok(TuneProblem { system, spec, scenarios, times, settings })
    }

    pub fn scenarios(&self) -> &[Scenario] {
        &self.scenarios
    }

    pub fn settings(&self) -> &ProblemSettings {
        &self.settings
    }

    pub fn sample_times(&self) -> &[f64] {
        &self.times
    }

    pub fn bus_count(&self) -> usize {
        self.system.outputs.len()
    }

    /// Tunable gains as stored in the system network.
    pub fn system_gains(&self) -> Vec<f64> {
        self.system.tunable.iter().map(|&k| self.system.params[k]).collect()
    }

    /// Tunable gains as stored in the specification network.
    pub fn spec_gains(&self) -> Vec<f64> {
        self.spec.tunable.iter().map(|&k| self.spec.params[k]).collect()
    }

    pub fn system_network(&self) -> &NetworkSystem {
        &self.system.base
    }

    pub fn spec_network(&self) -> &NetworkSystem {
        &self.spec.base
    }

    fn solver(&self) -> IntegratorOptions {
        IntegratorOptions::with_method(Method::Rk4 { h: self.settings.step })
    }

    fn check_gains(&self, p: &[f64], q: &[Vec<f64>]) -> Result<(), TuneError> {
        let b = self.bus_count();
        if p.len() != b {
            return Err(TuneError::DimensionMismatch { what: "system gains", expected: b, got: p.len() });
        }
        if q.len() != self.scenarios.len() {
            return Err(TuneError::DimensionMismatch {
                what: "specification copies",
                expected: self.scenarios.len(),
                got: q.len(),
            });
        }
        match q.iter().find(|qj| qj.len() != b) {
            Some(qj) => Err(TuneError::DimensionMismatch { what: "specification gains", expected: b, got: qj.len() }),
            None => Ok(()),
        }
    }

    /// System outputs `[scenario][time][bus]` at gains `p`.
    pub fn system_outputs(&self, p: &[f64]) -> Result<Vec<Vec<Vec<f64>>>, TuneError> {
        let opts = self.solver();
        let b = self.bus_count();
        if p.len() != b {
            return Err(TuneError::DimensionMismatch { what: "system gains", expected: b, got: p.len() });
        }
        per_scenario(self.scenarios.len(), |j| {
            let s = self.system.sampled(j, p, &self.times, &opts, false)?;
            Ok(s.values.chunks(b).map(<[f64]>::to_vec).collect())
        })
    }

    /// Specification outputs with copy `q[j]` in scenario `j`.
    pub fn spec_outputs(&self, q: &[Vec<f64>]) -> Result<Vec<Vec<Vec<f64>>>, TuneError> {
        self.check_gains(&vec![0.0; self.bus_count()], q)?;
        let opts = self.solver();
        let b = self.bus_count();
        per_scenario(self.scenarios.len(), |j| {
            let s = self.spec.sampled(j, &q[j], &self.times, &opts, false)?;
            Ok(s.values.chunks(b).map(<[f64]>::to_vec).collect())
        })
    }

    /// `Δo` at system gains `p` and specification copies `q`.
    pub fn loss(&self, p: &[f64], q: &[Vec<f64>]) -> Result<f64, TuneError> {
        self.check_gains(p, q)?;
        output_metric(&self.system_outputs(p)?, &self.spec_outputs(q)?)
    }

    fn scenario_loss(&self, j: usize, sys: &Sampled, q: &[f64]) -> Result<ScenarioLoss, SolveError> {
        let spec = self.spec.sampled(j, q, &self.times, &self.solver(), true)?;
        let r: Vec<f64> = sys.values.iter().zip(&spec.values).map(|(a, b)| a - b).collect();
        let loss = r.iter().map(|v| v * v).sum();
        let dot = |t: &Vec<f64>| 2.0 * r.iter().zip(t).map(|(a, b)| a * b).sum::<f64>();
        Ok(ScenarioLoss {
            loss,
            grad_p: sys.tangents.iter().map(dot).collect(),
            grad_q: spec.tangents.iter().map(|t| -dot(t)).collect(),
        })
    }

    /// `Δo` and its gradients with respect to `p` and every `q[j]`.
    pub fn loss_and_gradient(&self, p: &[f64], q: &[Vec<f64>]) -> Result<(f64, Vec<f64>, Vec<Vec<f64>>), TuneError> {
        self.check_gains(p, q)?;
        let opts = self.solver();
        let parts = per_scenario(self.scenarios.len(), |j| {
            let sys = self.system.sampled(j, p, &self.times, &opts, true)?;
            self.scenario_loss(j, &sys, &q[j])
        })?;
        let n = self.scenarios.len() as f64;
        let mut loss = 0.0;
        let mut gp = vec![0.0; p.len()];
        for part in &parts {
            loss += part.loss;
            for (g, v) in gp.iter_mut().zip(&part.grad_p) {
                *g += v;
            }
        }
        gp.iter_mut().for_each(|g| *g /= n);
        let gq = parts.into_iter().map(|part| part.grad_q.into_iter().map(|g| g / n).collect()).collect();
        Ok((loss / n, gp, gq))
    }

    /// Full trajectories of scenario `j` for plotting.
    pub fn scenario_trajectories(
        &self,
        j: usize,
        p: &[f64],
        q: &[f64],
    ) -> Result<(Trajectory, Trajectory), TuneError> {
        if j >= self.scenarios.len() {
            return Err(TuneError::InvalidProblem(format!("scenario {j} out of range")));
        }
        self.check_gains(p, &vec![q.to_vec(); self.scenarios.len()])?;
        let opts = self.solver();
        let run = |side: &Side, theta: &[f64]| -> Result<Trajectory, TuneError> {
            let (x0, _) = side.steady(theta, false)?;
            let traj = integrate(&side.per_scenario[j], &x0, &side.with_gains(theta), (0.0, self.settings.horizon), &opts)
                .map_err(|source| TuneError::IntegrationFailure { scenario: j, source })?;
            Ok(traj)
        };
        Ok((run(&self.system, p)?, run(&self.spec, q)?))
    }

    /// Flat output indices (0-based) of the system and the specification.
    pub fn output_indices(&self) -> (&[usize], &[usize]) {
        (&self.system.outputs, &self.spec.outputs)
    }
}

/// Settings of the per-scenario minimization over `q_j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InnerOptions {
    pub adam: AdamOptions,
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Iterations without a new best before the learning rate is halved.
    pub patience: usize,
    /// Stop once the learning rate fell by this factor.
    pub min_lr_ratio: f64,
    /// Feed ADAM the gradient of the logarithm of the scenario summand.
    pub log_scale: bool,
}

impl Default for InnerOptions {
    fn default() -> Self {
        InnerOptions {
            adam: AdamOptions::default(),
            max_iters: 3000,
            grad_tol: 1e-12,
            patience: 50,
            min_lr_ratio: 1e-3,
            log_scale: true,
        }
    }
}

/// Result of [`behavioral_distance`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distance {
    pub distance: f64,
    /// Minimizing specification gains per scenario.
    pub q: Vec<Vec<f64>>,
    /// Minimal summand per scenario, before division by `N`.
    pub per_scenario: Vec<f64>,
    pub iterations: Vec<usize>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn project(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

/// Estimates the behavioral distance at fixed system gains `p`:
/// `(1/N) Σ_j min_q_j` of the scenario summand, each minimum sought by
/// ADAM from `q0[j]` with projection onto nonnegative gains.
///
/// The learning rate halves whenever `patience` iterations pass without a
/// new best, and the best iterate seen is returned.
pub fn behavioral_distance(
    problem: &TuneProblem,
    p: &[f64],
    q0: &[Vec<f64>],
    opts: &InnerOptions,
) -> Result<Distance, TuneError> {
    problem.check_gains(p, q0)?;
    let solver = problem.solver();
    let results = per_scenario(problem.scenarios.len(), |j| {
        let sys = problem.system.sampled(j, p, &problem.times, &solver, false)?;
        let mut q = q0[j].clone();
        project(&mut q);
        let mut adam = AdamState::new(q.len(), opts.adam);
        let (mut best, mut best_q) = (f64::INFINITY, q.clone());
        let (mut stale, mut iters) = (0, 0);
        loop {
            let l = problem.scenario_loss(j, &sys, &q)?;
            if !l.loss.is_finite() {
                return Err(SolveError::NonFinite { t: problem.settings.horizon });
            }
            if l.loss < best {
                best = l.loss;
                best_q.clone_from(&q);
                stale = 0;
            } else {
                stale += 1;
            }
            if norm(&l.grad_q) < opts.grad_tol || iters >= opts.max_iters {
                break;
            }
            if stale >= opts.patience {
                adam.opts.lr *= 0.5;
                stale = 0;
                if adam.opts.lr < opts.adam.lr * opts.min_lr_ratio {
                    break;
                }
            }
            let mut g = l.grad_q;
            if opts.log_scale && l.loss > 0.0 {
                g.iter_mut().for_each(|v| *v /= l.loss);
            }
            for (qi, d) in q.iter_mut().zip(adam.step(&g)) {
                *qi += d;
            }
            project(&mut q);
            iters += 1;
        }
        Ok((best, best_q, iters))
    })?;
    let n = results.len() as f64;
    let distance = results.iter().map(|r| r.0).sum::<f64>() / n;
    Ok(Distance {
        distance,
        per_scenario: results.iter().map(|r| r.0).collect(),
        q: results.iter().map(|r| r.1.clone()).collect(),
        iterations: results.iter().map(|r| r.2).collect(),
    })
}

/// Settings of the joint descent over `(p, q_1..q_N)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneOptions {
    pub adam: AdamOptions,
    pub max_iters: usize,
    /// Stop when the loss changed by less than `rel_tol` (relative) over
    /// this many iterations.
    pub window: usize,
    pub rel_tol: f64,
    /// Applied to the gradient of `Δo` itself, not of its logarithm.
    pub grad_tol: f64,
    /// Feed ADAM the gradient of `ln Δo`.
    pub log_scale: bool,
}

impl Default for TuneOptions {
    fn default() -> Self {
        TuneOptions {
            adam: AdamOptions::default(),
            max_iters: 2000,
            window: 50,
            rel_tol: 1e-6,
            grad_tol: 1e-12,
            log_scale: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    GradientTolerance,
    Stalled,
    MaxIterations,
    /// The progress callback asked to stop.
    Interrupted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    /// Best system gains seen.
    pub p: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    /// Loss before each update; the last entry belongs to the final iterate.
    pub history: Vec<f64>,
    pub best_loss: f64,
    pub iterations: usize,
    pub stop: StopReason,
}

/// Joint ADAM descent on `Δo` over the system gains and every
/// specification copy, with gains clamped at zero after each step.
///
/// With `log_scale` the gradient handed to ADAM is that of `ln Δo`. The
/// minimizers are the same, but the loss typically falls by several
/// orders of magnitude and ADAM's slowly decaying second moment would
/// otherwise keep the late steps far below the learning rate.
///
/// Returns the iterate with the lowest loss, so the reported loss never
/// exceeds the initial one.
pub fn tune(problem: &TuneProblem, p0: &[f64], q0: &[Vec<f64>], opts: &TuneOptions) -> Result<TuneResult, TuneError> {
    tune_with(problem, p0, q0, opts, |_, _| true)
}

/// [`tune`] with a callback that sees `(iteration, loss)` after every
/// evaluation and returns `false` to stop early.
pub fn tune_with(
    problem: &TuneProblem,
    p0: &[f64],
    q0: &[Vec<f64>],
    opts: &TuneOptions,
    mut progress: impl FnMut(usize, f64) -> bool,
) -> Result<TuneResult, TuneError> {
    problem.check_gains(p0, q0)?;
    let b = p0.len();
    let mut theta: Vec<f64> = p0.iter().chain(q0.iter().flatten()).copied().collect();
    project(&mut theta);
    let mut adam = AdamState::new(theta.len(), opts.adam);
    let split = |theta: &[f64]| (theta[..b].to_vec(), theta[b..].chunks(b).map(<[f64]>::to_vec).collect::<Vec<_>>());
    let mut history = Vec::new();
    let (mut best, mut best_theta) = (f64::INFINITY, theta.clone());
    let mut iteration = 0;
    let stop = loop {
        let (p, q) = split(&theta);
        let (loss, gp, gq) = problem.loss_and_gradient(&p, &q)?;
        if !loss.is_finite() {
            return Err(TuneError::NonFiniteLoss { iteration });
        }
        history.push(loss);
        if loss < best {
            best = loss;
            best_theta.clone_from(&theta);
        }
        let mut grad: Vec<f64> = gp.into_iter().chain(gq.into_iter().flatten()).collect();
        if opts.log_scale && loss > 0.0 {
            grad.iter_mut().for_each(|g| *g /= loss);
        }
        if norm(&grad) < opts.grad_tol {
            break StopReason::GradientTolerance;
        }
        if history.len() > opts.window {
            let old = history[history.len() - 1 - opts.window];
            if (old - loss).abs() <= opts.rel_tol * old.abs() {
                break StopReason::Stalled;
            }
        }
        if iteration >= opts.max_iters {
            break StopReason::MaxIterations;
        }
        if !progress(iteration, loss) {
            break StopReason::Interrupted;
        }
        for (t, d) in theta.iter_mut().zip(adam.step(&grad)) {
            *t += d;
        }
        project(&mut theta);
        iteration += 1;
    };
    let (p, q) = split(&best_theta);
    Ok(TuneResult { p, q, history, best_loss: best, iterations: iteration, stop })
}
