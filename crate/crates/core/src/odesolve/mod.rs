//! Integration of `M dx/dt = f(x, p, t)` with diagonal `M`, steady states
//! and dense sampling.
//!
//! All integrators are generic over [`Scalar`], so running them on
//! [`Dual`](crate::Dual) states and parameters carries forward-mode tangents
//! through the solve. Step-size decisions and Newton convergence tests only
//! look at primal values, which keeps the discrete map of a dual run
//! identical to the plain run.

mod explicit;
mod implicit;
mod steady;
mod trajectory;

use thiserror::Error;

use crate::blocksys::{CompiledBlock, Scratch};
use crate::scalar::Scalar;
use crate::symcore::SymError;

pub use implicit::{consistent_initial_state, jacobian};
pub use steady::find_steady_state;
pub use trajectory::{format_full, CsvError, Trajectory};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("Newton iteration diverged at t = {t}")]
    NewtonDivergence { t: f64 },
    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },
    #[error("inconsistent initial condition: constraint residual {residual:e}")]
    InconsistentInitialCondition { residual: f64 },
    #[error("time {0} outside the trajectory span")]
    OutOfRange(f64),
    #[error("expected length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero-mass rows need the implicit trapezoid method")]
    ImplicitRequired,
    #[error("invalid integrator options: {0}")]
    InvalidOptions(String),
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error(transparent)]
    Evaluation(#[from] SymError),
}

/// Evaluation time together with a representative instant of the current
/// continuity interval. Piecewise-constant inputs are looked up at `piece`,
/// so a stage evaluated exactly on a breakpoint still sees the value of the
/// interval being integrated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Time {
    pub t: f64,
    pub piece: f64,
}

impl Time {
    pub fn at(t: f64) -> Self {
        Time { t, piece: t }
    }
}

/// Piecewise-constant, right-continuous input signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    base: f64,
    steps: Vec<(f64, f64)>,
}

impl Signal {
    pub fn constant(v: f64) -> Self {
        Signal { base: v, steps: Vec::new() }
    }

    /// `before` until `at`, `after` from then on.
    pub fn step(before: f64, at: f64, after: f64) -> Self {
        Signal { base: before, steps: vec![(at, after)] }
    }

    /// Adds a jump to `value` at `at`. Steps are kept sorted by time.
    pub fn then(mut self, at: f64, value: f64) -> Self {
        let i = self.steps.partition_point(|(s, _)| *s <= at);
        self.steps.insert(i, (at, value));
        self
    }

    pub fn value(&self, t: f64) -> f64 {
        let i = self.steps.partition_point(|(s, _)| *s <= t);
        if i == 0 {
            self.base
        } else {
            self.steps[i - 1].1
        }
    }

    pub fn breakpoints(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|(s, _)| *s)
    }
}

/// A system in mass-matrix form.
pub trait OdeSystem: Sync {
    fn dim(&self) -> usize;
    fn param_count(&self) -> usize;
    /// Diagonal of `M`; zero entries mark algebraic rows.
    fn mass(&self) -> &[f64];
    fn state_names(&self) -> Vec<String>;
    fn rhs<S: Scalar>(
        &self,
        x: &[S],
        p: &[S],
        t: Time,
        out: &mut [S],
        ws: &mut Scratch<S>,
    ) -> Result<(), SymError>;
    /// Times where inputs jump; integration restarts there.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// A compiled block driven by piecewise-constant input signals.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    block: CompiledBlock,
    inputs: Vec<Signal>,
}

impl BlockSystem {
    pub fn new(block: CompiledBlock, inputs: Vec<Signal>) -> Result<Self, SolveError> {
        if inputs.len() != block.inputs().len() {
            return Err(SolveError::DimensionMismatch { expected: block.inputs().len(), got: inputs.len() });
        }
        Ok(BlockSystem { block, inputs })
    }

    pub fn block(&self) -> &CompiledBlock {
        &self.block
    }
}

impl OdeSystem for BlockSystem {
    fn dim(&self) -> usize {
        self.block.dim()
    }
    fn param_count(&self) -> usize {
        self.block.params().len()
    }
    fn mass(&self) -> &[f64] {
        self.block.mass()
    }
    fn state_names(&self) -> Vec<String> {
        self.block.states().iter().map(|s| s.path()).collect()
    }
    fn rhs<S: Scalar>(
        &self,
        x: &[S],
        p: &[S],
        t: Time,
        out: &mut [S],
        ws: &mut Scratch<S>,
    ) -> Result<(), SymError> {
        let mut u = std::mem::take(&mut ws.aux);
        u.clear();
        u.extend(self.inputs.iter().map(|s| S::from_f64(s.value(t.piece))));
        let r = self.block.rhs(x, &u, p, t.t, out, ws);
        ws.aux = u;
        r
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.inputs.iter().flat_map(Signal::breakpoints).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// Classical fourth-order Runge-Kutta with step `h`, shortened so that
    /// every segment is covered by whole steps.
    Rk4 { h: f64 },
    /// Dormand-Prince 5(4) with PI step control.
    Dopri45,
    /// Trapezoidal rule with damped Newton; handles zero-mass rows.
    Trapezoid { h: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorOptions {
    pub method: Method,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    /// Zero selects a step from the segment length.
    pub initial_step: f64,
    pub newton_tol: f64,
    pub newton_max_iters: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            method: Method::Dopri45,
            rel_tol: 1e-6,
            abs_tol: 1e-8,
            max_step: f64::INFINITY,
            initial_step: 0.0,
            newton_tol: 1e-10,
            newton_max_iters: 25,
        }
    }
}

impl IntegratorOptions {
    pub fn with_method(method: Method) -> Self {
        IntegratorOptions { method, ..Default::default() }
    }

    fn validate(&self) -> Result<(), SolveError> {
        let bad = |what: &str| Err(SolveError::InvalidOptions(what.to_owned()));
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !(self.rel_tol > 0.0) || !(self.abs_tol > 0.0) || !(self.newton_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.max_step > 0.0) || self.initial_step < 0.0 {
            return bad("step limits must be positive");
        }
        if self.newton_max_iters == 0 {
            return bad("newton_max_iters must be at least 1");
        }
        match self.method {
            Method::Rk4 { h } | Method::Trapezoid { h } if !positive(h) => bad("step h must be positive"),
            _ => Ok(()),
        }
    }
}

/// Integrates from `x0` over `tspan`.
///
/// When zero-mass rows are inconsistent at `x0`, the algebraic variables are
/// first projected onto the constraints with the differential variables held
/// fixed.
pub fn integrate<S: Scalar, Sys: OdeSystem>(
    sys: &Sys,
    x0: &[S],
    p: &[S],
    tspan: (f64, f64),
    opts: &IntegratorOptions,
) -> Result<Trajectory<S>, SolveError> {
    opts.validate()?;
    let n = sys.dim();
    if x0.len() != n {
        return Err(SolveError::DimensionMismatch { expected: n, got: x0.len() });
    }
    if p.len() != sys.param_count() {
        return Err(SolveError::DimensionMismatch { expected: sys.param_count(), got: p.len() });
    }
    let (t0, t1) = tspan;
    if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(SolveError::InvalidOptions(format!("bad time span [{t0}, {t1}]")));
    }
    let has_alg = sys.mass().iter().any(|&m| m == 0.0);
    if has_alg && !matches!(opts.method, Method::Trapezoid { .. }) {
        return Err(SolveError::ImplicitRequired);
    }

    let mut cuts: Vec<f64> = sys.breakpoints().into_iter().filter(|&b| b > t0 && b < t1).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut edges = vec![t0];
    edges.extend(cuts);
    edges.push(t1);

    let mut ws = Scratch::new();
    let first = Time { t: t0, piece: 0.5 * (edges[0] + edges[1]) };
    let x0 = if has_alg {
        consistent_initial_state(sys, x0, p, first, opts, &mut ws)?
    } else {
        x0.to_vec()
    };
    let mut traj = Trajectory::start(sys.state_names(), sys.mass().to_vec(), t0, x0);
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        let piece = 0.5 * (a + b);
        match opts.method {
            Method::Rk4 { h } => explicit::rk4(sys, p, a, b, piece, h, &mut traj, &mut ws)?,
            Method::Dopri45 => explicit::dopri45(sys, p, a, b, piece, opts, &mut traj, &mut ws)?,
            Method::Trapezoid { h } => implicit::trapezoid(sys, p, a, b, piece, h, opts, &mut traj, &mut ws)?,
        }
    }
    Ok(traj)
}

/// `f(x) / m` for differential rows; zero for algebraic rows.
pub(crate) fn derivative<S: Scalar, Sys: OdeSystem>(
    sys: &Sys,
    x: &[S],
    p: &[S],
    t: Time,
    ws: &mut Scratch<S>,
) -> Result<Vec<S>, SolveError> {
    let mut f = vec![S::zero(); x.len()];
    sys.rhs(x, p, t, &mut f, ws)?;
    for (fi, &m) in f.iter_mut().zip(sys.mass()) {
        *fi = if m == 0.0 { S::zero() } else if m == 1.0 { *fi } else { fi.scale(1.0 / m) };
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(SolveError::NonFinite { t: t.t });
    }
    Ok(f)
}


#[cfg(test)]
mod tests {
    use super::testsys::*;
    use super::*;

    #[test]
    fn signal_lookup() {
        let s = Signal::step(1.0, 2.0, 0.9).then(5.0, 1.1);
        assert_eq!(s.value(0.0), 1.0);
        assert_eq!(s.value(2.0), 0.9);
        assert_eq!(s.value(4.9), 0.9);
        assert_eq!(s.value(6.0), 1.1);
        assert_eq!(s.breakpoints().collect::<Vec<_>>(), vec![2.0, 5.0]);
    }

    #[test]
    fn explicit_methods_reject_algebraic_rows() {
        let opts = IntegratorOptions::with_method(Method::Rk4 { h: 0.1 });
        let r = integrate(&DecaySquare, &[1.0, 1.0], &[], (0.0, 1.0), &opts);
        assert_eq!(r.unwrap_err(), SolveError::ImplicitRequired);
    }

    #[test]
    fn option_validation() {
        let mut opts = IntegratorOptions::with_method(Method::Rk4 { h: -0.1 });
        assert!(matches!(integrate(&Decay, &[1.0], &[1.0], (0.0, 1.0), &opts), Err(SolveError::InvalidOptions(_))));
        opts.method = Method::Rk4 { h: 0.1 };
        assert!(matches!(integrate(&Decay, &[1.0], &[1.0], (1.0, 0.0), &opts), Err(SolveError::InvalidOptions(_))));
        assert!(matches!(integrate(&Decay, &[1.0, 2.0], &[1.0], (0.0, 1.0), &opts), Err(SolveError::DimensionMismatch { .. })));
    }
}
