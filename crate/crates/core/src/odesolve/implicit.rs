use super::{derivative, IntegratorOptions, OdeSystem, SolveError, Time, Trajectory};
use crate::blocksys::Scratch;
use crate::scalar::{Dual, Scalar};

const LANES: usize = 8;
const MAX_BACKTRACKS: usize = 10;
const MAX_HALVINGS: usize = 20;

/// Right-hand side and the dense Jacobian columns `df/dx_j` for `j` in
/// `cols`, row-major with `cols.len()` columns. Columns are seeded eight
/// at a time as dual tangents.
pub fn jacobian<Sys: OdeSystem>(
    sys: &Sys,
    x: &[f64],
    p: &[f64],
    t: Time,
    cols: &[usize],
) -> Result<(Vec<f64>, Vec<f64>), SolveError> {
    let n = sys.dim();
    let m = cols.len();
    let mut f = vec![0.0; n];
    let mut jac = vec![0.0; n * m];
    if m == 0 {
        sys.rhs(x, p, t, &mut f, &mut Scratch::new())?;
        return Ok((f, jac));
    }
    let pd: Vec<Dual<LANES>> = p.iter().map(|&v| Dual::constant(v)).collect();
    let mut out = vec![Dual::<LANES>::constant(0.0); n];
    let mut ws = Scratch::new();
    for (c, chunk) in cols.chunks(LANES).enumerate() {
        let mut xd: Vec<Dual<LANES>> = x.iter().map(|&v| Dual::constant(v)).collect();
        for (lane, &j) in chunk.iter().enumerate() {
            xd[j].eps[lane] = 1.0;
        }
        sys.rhs(&xd, &pd, t, &mut out, &mut ws)?;
        for i in 0..n {
            f[i] = out[i].re;
            for lane in 0..chunk.len() {
                jac[i * m + c * LANES + lane] = out[i].eps[lane];
            }
        }
    }
    Ok((f, jac))
}

/// LU factorization with partial pivoting.
pub(crate) struct Lu {
    n: usize,
    a: Vec<f64>,
    piv: Vec<usize>,
}

impl Lu {
    pub(crate) fn factor(mut a: Vec<f64>, n: usize) -> Option<Lu> {
        let mut piv: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (r, big) = (k..n)
                .map(|r| (r, a[r * n + k].abs()))
                .fold((k, -1.0), |best, c| if c.1 > best.1 { c } else { best });
            if !(big > 0.0) || !big.is_finite() {
                return None;
            }
            if r != k {
                for j in 0..n {
                    a.swap(k * n + j, r * n + j);
                }
                piv.swap(k, r);
            }
            let d = a[k * n + k];
            for i in k + 1..n {
                let l = a[i * n + k] / d;
                a[i * n + k] = l;
                for j in k + 1..n {
                    a[i * n + j] -= l * a[k * n + j];
                }
            }
        }
        Some(Lu { n, a, piv })
    }

    /// Solves `A y = b` for scalar-valued `b`.
    pub(crate) fn solve<S: Scalar>(&self, b: &[S]) -> Vec<S> {
        let n = self.n;
        let mut y: Vec<S> = self.piv.iter().map(|&i| b[i]).collect();
        for i in 0..n {
            for j in 0..i {
                let l = self.a[i * n + j];
                if l != 0.0 {
                    let yj = y[j];
                    y[i] -= yj.scale(l);
                }
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                let u = self.a[i * n + j];
                if u != 0.0 {
                    let yj = y[j];
                    y[i] -= yj.scale(u);
                }
            }
            y[i] = y[i].scale(1.0 / self.a[i * n + i]);
        }
        y
    }
}

fn primal_norm<S: Scalar>(r: &[S]) -> f64 {
    r.iter().map(|v| v.value().abs()).fold(0.0, f64::max)
}

/// Damped Newton on the entries `vars` of `x`.
///
/// Convergence is judged on the primal residual. One more update with the
/// last factorization follows, which settles dual tangents onto the
/// implicit-function derivative. Returns the final primal residual norm on
/// success and `None` when the iteration fails.
fn newton<S, R, J>(
    x: &mut [S],
    vars: &[usize],
    mut resid: R,
    mut jac: J,
    tol: f64,
    max_iters: usize,
) -> Result<Option<f64>, SolveError>
where
    S: Scalar,
    R: FnMut(&[S]) -> Result<Vec<S>, SolveError>,
    J: FnMut(&[f64]) -> Result<Vec<f64>, SolveError>,
{
    let k = vars.len();
    let mut r = resid(x)?;
    let mut norm = primal_norm(&r);
    let mut lu: Option<Lu> = None;
    for _ in 0..=max_iters {
        if norm <= tol {
            let lu = match lu {
                Some(lu) => lu,
                None => {
                    let primal: Vec<f64> = x.iter().map(Scalar::value).collect();
                    match Lu::factor(jac(&primal)?, k) {
                        Some(lu) => lu,
                        None => return Ok(None),
                    }
                }
            };
            let dx = lu.solve(&r);
            for (&v, d) in vars.iter().zip(dx) {
                x[v] -= d;
            }
            return Ok(Some(primal_norm(&resid(x)?).min(norm)));
        }
        let primal: Vec<f64> = x.iter().map(Scalar::value).collect();
        let Some(fact) = Lu::factor(jac(&primal)?, k) else {
            return Ok(None);
        };
        let dx = fact.solve(&r);
        lu = Some(fact);
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_BACKTRACKS {
            let mut trial = x.to_vec();
            for (&v, d) in vars.iter().zip(&dx) {
                trial[v] -= d.scale(lambda);
            }
            let r_trial = match resid(&trial) {
                Ok(r) => r,
                Err(SolveError::Evaluation(_)) | Err(SolveError::NonFinite { .. }) => {
                    lambda *= 0.5;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let n_trial = primal_norm(&r_trial);
            if n_trial.is_finite() && n_trial < norm {
                x.copy_from_slice(&trial);
                r = r_trial;
                norm = n_trial;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Ok(None);
        }
    }
    Ok(None)
}

fn algebraic_rows(mass: &[f64]) -> Vec<usize> {
    mass.iter().enumerate().filter(|(_, &m)| m == 0.0).map(|(i, _)| i).collect()
}

/// Projects the zero-mass components of `x0` onto the constraint manifold,
/// holding differential components fixed.
pub fn consistent_initial_state<S: Scalar, Sys: OdeSystem>(
    sys: &Sys,
    x0: &[S],
    p: &[S],
    t: Time,
    opts: &IntegratorOptions,
    ws: &mut Scratch<S>,
) -> Result<Vec<S>, SolveError> {
    let alg = algebraic_rows(sys.mass());
    let mut x = x0.to_vec();
    if alg.is_empty() {
        return Ok(x);
    }
    let n = sys.dim();
    let pp: Vec<f64> = p.iter().map(Scalar::value).collect();
    let mut last = f64::INFINITY;
    let resid = |x: &[S]| -> Result<Vec<S>, SolveError> {
        let mut f = vec![S::zero(); n];
        sys.rhs(x, p, t, &mut f, ws)?;
        let r: Vec<S> = alg.iter().map(|&i| f[i]).collect();
        last = primal_norm(&r);
        Ok(r)
    };
    let jac = |x: &[f64]| -> Result<Vec<f64>, SolveError> {
        let (_, j) = jacobian(sys, x, &pp, t, &alg)?;
        Ok(alg.iter().flat_map(|&i| j[i * alg.len()..(i + 1) * alg.len()].to_vec()).collect())
    };
    match newton(&mut x, &alg, resid, jac, opts.newton_tol, opts.newton_max_iters)? {
        Some(_) => Ok(x),
        None => Err(SolveError::InconsistentInitialCondition { residual: last }),
    }
}

struct StepCtx<'a, Sys> {
    sys: &'a Sys,
    piece: f64,
    opts: &'a IntegratorOptions,
    min_step: f64,
}

impl<Sys: OdeSystem> StepCtx<'_, Sys> {
    fn raw<S: Scalar>(&self, x: &[S], p: &[S], t: f64, ws: &mut Scratch<S>) -> Result<Vec<S>, SolveError> {
        let mut f = vec![S::zero(); x.len()];
        self.sys.rhs(x, p, Time { t, piece: self.piece }, &mut f, ws)?;
        Ok(f)
    }

    /// One trapezoid step, or `None` if Newton fails.
    fn step<S: Scalar>(
        &self,
        p: &[S],
        t0: f64,
        t1: f64,
        x0: &[S],
        f0: &[S],
        ws: &mut Scratch<S>,
    ) -> Result<Option<Vec<S>>, SolveError> {
        let h = t1 - t0;
        let mass = self.sys.mass();
        let n = x0.len();
        let mut x: Vec<S> = (0..n)
            .map(|i| if mass[i] == 0.0 { x0[i] } else { x0[i] + f0[i].scale(h / mass[i]) })
            .collect();
        let all: Vec<usize> = (0..n).collect();
        let pp: Vec<f64> = p.iter().map(Scalar::value).collect();
        let time = Time { t: t1, piece: self.piece };
        let resid = |x: &[S]| -> Result<Vec<S>, SolveError> {
            let f1 = self.raw(x, p, t1, ws)?;
            Ok((0..n)
                .map(|i| {
                    if mass[i] == 0.0 {
                        f1[i]
                    } else {
                        (x[i] - x0[i]).scale(mass[i]) - (f0[i] + f1[i]).scale(0.5 * h)
                    }
                })
                .collect())
        };
        let jac = |x: &[f64]| -> Result<Vec<f64>, SolveError> {
            let (_, mut j) = jacobian(self.sys, x, &pp, time, &all)?;
            for i in 0..n {
                if mass[i] != 0.0 {
                    for v in &mut j[i * n..(i + 1) * n] {
                        *v *= -0.5 * h;
                    }
                    j[i * n + i] += mass[i];
                }
            }
            Ok(j)
        };
        let ok = newton(&mut x, &all, resid, jac, self.opts.newton_tol, self.opts.newton_max_iters)?;
        Ok(ok.map(|_| x))
    }

    /// Advances from `t0` to `t1`, halving on Newton failure.
    #[allow(clippy::too_many_arguments)]
    fn advance<S: Scalar>(
        &self,
        p: &[S],
        t0: f64,
        t1: f64,
        x0: &[S],
        f0: &[S],
        depth: usize,
        traj: &mut Trajectory<S>,
        ws: &mut Scratch<S>,
    ) -> Result<(Vec<S>, Vec<S>), SolveError> {
        if let Some(x1) = self.step(p, t0, t1, x0, f0, ws)? {
            if x1.iter().all(Scalar::is_finite) {
                let f1 = self.raw(&x1, p, t1, ws)?;
                return Ok((x1, f1));
            }
        }
        if depth >= MAX_HALVINGS || (t1 - t0) < self.min_step {
            return Err(SolveError::NewtonDivergence { t: t0 });
        }
        let mid = 0.5 * (t0 + t1);
        let (xm, fm) = self.advance(p, t0, mid, x0, f0, depth + 1, traj, ws)?;
        traj.push(mid, xm.clone(), derivative(self.sys, &xm, p, Time { t: mid, piece: self.piece }, ws)?);
        self.advance(p, mid, t1, &xm, &fm, depth + 1, traj, ws)
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn trapezoid<S: Scalar, Sys: OdeSystem>(
    sys: &Sys,
    p: &[S],
    a: f64,
    b: f64,
    piece: f64,
    h: f64,
    opts: &IntegratorOptions,
    traj: &mut Trajectory<S>,
    ws: &mut Scratch<S>,
) -> Result<(), SolveError> {
    let steps = ((b - a) / h - 1e-9).ceil().max(1.0) as usize;
    let h = (b - a) / steps as f64;
    let ctx = StepCtx { sys, piece, opts, min_step: 1e-12 * (b - a).max(1.0) };
    let mut x = traj.last().1.to_vec();
    // algebraic components may jump at a breakpoint
    if a > traj.span().0 {
        x = consistent_initial_state(sys, &x, p, Time { t: a, piece }, opts, ws)?;
    }
    let mut f = ctx.raw(&x, p, a, ws)?;
    traj.set_leaving(derivative(sys, &x, p, Time { t: a, piece }, ws)?);
    for i in 0..steps {
        let t0 = a + i as f64 * h;
        let t1 = if i + 1 == steps { b } else { a + (i + 1) as f64 * h };
        let (x1, f1) = ctx.advance(p, t0, t1, &x, &f, 0, traj, ws)?;
        traj.push(t1, x1.clone(), derivative(sys, &x1, p, Time { t: t1, piece }, ws)?);
        x = x1;
        f = f1;
    }
    Ok(())
}
