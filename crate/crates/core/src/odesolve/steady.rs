use nalgebra::{DMatrix, DVector};

use super::{jacobian, IntegratorOptions, OdeSystem, SolveError, Time};

/// Solves `0 = f(x, p, t0)` over all rows.
///
/// Steps are minimum-norm least-squares Newton steps, so symmetries that
/// leave the Jacobian singular (a common angle shift in a network, say) do
/// not stall the iteration. A backtracking line search on `|f|` guards
/// against overshoot.
pub fn find_steady_state<Sys: OdeSystem>(
    sys: &Sys,
    guess: &[f64],
    p: &[f64],
    t0: f64,
    opts: &IntegratorOptions,
) -> Result<Vec<f64>, SolveError> {
    let n = sys.dim();
    if guess.len() != n {
        return Err(SolveError::DimensionMismatch { expected: n, got: guess.len() });
    }
    if guess.iter().any(|v| !v.is_finite()) {
        return Err(SolveError::NonFinite { t: t0 });
    }
    let t = Time::at(t0);
    let cols: Vec<usize> = (0..n).collect();
    let norm = |f: &[f64]| f.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut x = guess.to_vec();
    let iters = opts.newton_max_iters.max(50);
    for _ in 0..iters {
        let (f, j) = jacobian(sys, &x, p, t, &cols)?;
        let fnorm = norm(&f);
        if fnorm < opts.newton_tol {
            return Ok(x);
        }
        let jm = DMatrix::from_row_slice(n, n, &j);
        let svd = jm.svd(true, true);
        let eps = 1e-12 * svd.singular_values.max().max(1.0);
        let dx = svd
            .solve(&DVector::from_column_slice(&f), eps)
            .map_err(|_| SolveError::NewtonDivergence { t: t0 })?;
        let mut lambda = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let trial: Vec<f64> = x.iter().zip(dx.iter()).map(|(xi, d)| xi - lambda * d).collect();
            let mut ft = vec![0.0; n];
            let ok = sys.rhs(&trial, p, t, &mut ft, &mut Default::default()).is_ok();
            if ok && norm(&ft) < fnorm {
                x = trial;
                improved = true;
                break;
            }
            lambda *= 0.5;
        }
        if !improved {
            return Err(SolveError::NewtonDivergence { t: t0 });
        }
    }
    Err(SolveError::NewtonDivergence { t: t0 })
}

#[cfg(test)]
mod tests {
    use super::super::testsys::DecaySquare;
    use super::*;
    use crate::blocksys::Scratch;
    use crate::scalar::Scalar;
    use crate::symcore::SymError;

    /// Two coupled angles with a shift symmetry: only the difference is pinned.
    struct Pair;

    impl OdeSystem for Pair {
        fn dim(&self) -> usize {
            2
        }
        fn param_count(&self) -> usize {
            1
        }
        fn mass(&self) -> &[f64] {
            &[1.0, 1.0]
        }
        fn state_names(&self) -> Vec<String> {
            vec!["a".into(), "b".into()]
        }
        fn rhs<S: Scalar>(&self, x: &[S], p: &[S], _: Time, out: &mut [S], _: &mut Scratch<S>) -> Result<(), SymError> {
            let flow = (x[0] - x[1]).sin();
            out[0] = p[0] - flow;
            out[1] = flow - p[0];
            Ok(())
        }
    }

    #[test]
    fn singular_jacobian_direction() {
        let opts = IntegratorOptions::default();
        let x = find_steady_state(&Pair, &[0.0, 0.0], &[0.3], 0.0, &opts).unwrap();
        assert!(((x[0] - x[1]).sin() - 0.3).abs() < 1e-10);
        // minimum-norm steps keep the common shift at its initial value
        assert!((x[0] + x[1]).abs() < 1e-12);
    }

    #[test]
    fn dae_rows_included() {
        let x = find_steady_state(&DecaySquare, &[0.5, 2.0], &[], 0.0, &IntegratorOptions::default()).unwrap();
        assert!(x[0].abs() < 1e-10 && x[1].abs() < 1e-10);
    }

    #[test]
    fn unsolvable() {
        let r = find_steady_state(&Pair, &[0.0, 0.0], &[2.0], 0.0, &IntegratorOptions::default());
        assert!(matches!(r, Err(SolveError::NewtonDivergence { .. })));
    }
}
