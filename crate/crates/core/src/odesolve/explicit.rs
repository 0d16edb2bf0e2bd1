use super::{derivative, IntegratorOptions, OdeSystem, SolveError, Time, Trajectory};
use crate::blocksys::Scratch;
use crate::scalar::Scalar;

/// `x + sum_k c_k * d_k`
fn axpy<S: Scalar>(x: &[S], terms: &[(f64, &[S])]) -> Vec<S> {
    let mut y = x.to_vec();
    for &(c, d) in terms {
        if c != 0.0 {
            for (yi, di) in y.iter_mut().zip(d) {
                *yi += di.scale(c);
            }
        }
    }
    y
}

fn check_finite<S: Scalar>(x: &[S], t: f64) -> Result<(), SolveError> {
    if x.iter().all(Scalar::is_finite) {
        Ok(())
    } else {
        Err(SolveError::NonFinite { t })
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn rk4<S: Scalar, Sys: OdeSystem>(
    sys: &Sys,
    p: &[S],
    a: f64,
    b: f64,
    piece: f64,
    h: f64,
    traj: &mut Trajectory<S>,
    ws: &mut Scratch<S>,
) -> Result<(), SolveError> {
    let steps = ((b - a) / h - 1e-9).ceil().max(1.0) as usize;
    let h = (b - a) / steps as f64;
    let at = |t: f64| Time { t, piece };
    let mut x = traj.last().1.to_vec();
    let mut k1 = derivative(sys, &x, p, at(a), ws)?;
    traj.set_leaving(k1.clone());
    for i in 0..steps {
        let t = a + i as f64 * h;
        let t_next = if i + 1 == steps { b } else { a + (i + 1) as f64 * h };
        let k2 = derivative(sys, &axpy(&x, &[(0.5 * h, &k1)]), p, at(t + 0.5 * h), ws)?;
        let k3 = derivative(sys, &axpy(&x, &[(0.5 * h, &k2)]), p, at(t + 0.5 * h), ws)?;
        let k4 = derivative(sys, &axpy(&x, &[(h, &k3)]), p, at(t_next), ws)?;
        x = axpy(&x, &[(h / 6.0, &k1), (h / 3.0, &k2), (h / 3.0, &k3), (h / 6.0, &k4)]);
        check_finite(&x, t_next)?;
        k1 = derivative(sys, &x, p, at(t_next), ws)?;
        traj.push(t_next, x.clone(), k1.clone());
    }
    Ok(())
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;
const ALPHA: f64 = 0.7 / 5.0;
const BETA: f64 = 0.4 / 5.0;

#[allow(clippy::too_many_arguments)]
pub(super) fn dopri45<S: Scalar, Sys: OdeSystem>(
    sys: &Sys,
    p: &[S],
    a: f64,
    b: f64,
    piece: f64,
    opts: &IntegratorOptions,
    traj: &mut Trajectory<S>,
    ws: &mut Scratch<S>,
) -> Result<(), SolveError> {
    let at = |t: f64| Time { t, piece };
    let mut x = traj.last().1.to_vec();
    let n = x.len();
    let mut k = vec![derivative(sys, &x, p, at(a), ws)?];
    traj.set_leaving(k[0].clone());
    let span = b - a;
    let mut h = if opts.initial_step > 0.0 { opts.initial_step } else { span / 100.0 };
    h = h.min(opts.max_step).min(span);
    let mut t = a;
    let mut err_prev: f64 = 1e-4;
    let mut rejected = false;
    while t < b {
        if b - t <= h * (1.0 + 1e-12) {
            h = b - t;
        }
        if h <= 1e-14 * t.abs().max(1.0) {
            return Err(SolveError::StepSizeUnderflow { t });
        }
        k.truncate(1);
        for s in 1..7 {
            let terms: Vec<(f64, &[S])> = (0..s).map(|j| (h * A[s][j], k[j].as_slice())).collect();
            let xs = axpy(&x, &terms);
            k.push(derivative(sys, &xs, p, at(t + C[s] * h), ws)?);
        }
        let t_new = if h == b - t { b } else { t + h };
        // stage 7 is evaluated at the fifth-order solution
        let terms: Vec<(f64, &[S])> = (0..6).map(|j| (h * A[6][j], k[j].as_slice())).collect();
        let x_new = axpy(&x, &terms);

        let mut acc = 0.0;
        for i in 0..n {
            let e: f64 = (0..7).map(|j| E[j] * k[j][i].value()).sum::<f64>() * h;
            let sc = opts.abs_tol + opts.rel_tol * x[i].value().abs().max(x_new[i].value().abs());
            acc += (e / sc).powi(2);
        }
        let err = (acc / n.max(1) as f64).sqrt();
        if !err.is_finite() {
            h *= MIN_FACTOR;
            rejected = true;
            continue;
        }
        if err <= 1.0 {
            let fac = if err == 0.0 {
                MAX_FACTOR
            } else {
                (SAFETY * err.powf(-ALPHA) * err_prev.powf(BETA)).clamp(MIN_FACTOR, MAX_FACTOR)
            };
            let fac = if rejected { fac.min(1.0) } else { fac };
            err_prev = err.max(1e-4);
            t = t_new;
            x = x_new;
            check_finite(&x, t)?;
            let k7 = k.pop().unwrap();
            traj.push(t, x.clone(), k7.clone());
            k[0] = k7;
            h = (h * fac).min(opts.max_step);
            rejected = false;
        } else {
            h *= (SAFETY * err.powf(-ALPHA)).clamp(MIN_FACTOR, 1.0);
            rejected = true;
        }
    }
    Ok(())
}
