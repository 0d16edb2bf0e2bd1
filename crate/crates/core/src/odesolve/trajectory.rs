use std::io::Write;

use super::SolveError;
use crate::scalar::Scalar;

/// Accepted integration points with the derivatives needed for cubic
/// Hermite interpolation.
///
/// At a breakpoint the derivative jumps, so each knot keeps the derivative
/// seen from the left (`d_in`) and the one used to leave it (`d_out`).
/// Zero-mass components have no stored derivative and are interpolated
/// linearly.
#[derive(Debug, Clone)]
pub struct Trajectory<S = f64> {
    names: Vec<String>,
    mass: Vec<f64>,
    times: Vec<f64>,
    states: Vec<Vec<S>>,
    d_in: Vec<Vec<S>>,
    d_out: Vec<Vec<S>>,
}

impl<S: Scalar> Trajectory<S> {
    pub(crate) fn start(names: Vec<String>, mass: Vec<f64>, t0: f64, x0: Vec<S>) -> Self {
        let zero = vec![S::zero(); x0.len()];
        Trajectory {
            names,
            mass,
            times: vec![t0],
            states: vec![x0],
            d_in: vec![zero.clone()],
            d_out: vec![zero],
        }
    }

    pub(crate) fn last(&self) -> (f64, &[S]) {
        (*self.times.last().unwrap(), self.states.last().unwrap())
    }

    /// Sets the outgoing derivative of the last knot; the incoming one is
    /// set too when the knot was the initial point.
    pub(crate) fn set_leaving(&mut self, d: Vec<S>) {
        if self.times.len() == 1 {
            *self.d_in.last_mut().unwrap() = d.clone();
        }
        *self.d_out.last_mut().unwrap() = d;
    }

    pub(crate) fn push(&mut self, t: f64, x: Vec<S>, d: Vec<S>) {
        self.times.push(t);
        self.states.push(x);
        self.d_in.push(d.clone());
        self.d_out.push(d);
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[Vec<S>] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &[S] {
        self.states.last().unwrap()
    }

    pub fn span(&self) -> (f64, f64) {
        (self.times[0], *self.times.last().unwrap())
    }

    /// Interpolated state at `t`; exact at knots.
    pub fn at(&self, t: f64) -> Result<Vec<S>, SolveError> {
        let (a, b) = self.span();
        if !(t >= a && t <= b) {
            return Err(SolveError::OutOfRange(t));
        }
        let k = self.times.partition_point(|&s| s <= t);
        if self.times[k - 1] == t {
            return Ok(self.states[k - 1].clone());
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        let (x0, x1) = (&self.states[k - 1], &self.states[k]);
        let (d0, d1) = (&self.d_out[k - 1], &self.d_in[k]);
        Ok((0..x0.len())
            .map(|i| {
                if self.mass[i] == 0.0 {
                    x0[i].scale(1.0 - s) + x1[i].scale(s)
                } else {
                    x0[i].scale(h00) + d0[i].scale(h10 * h) + x1[i].scale(h01) + d1[i].scale(h11 * h)
                }
            })
            .collect())
    }

    /// Interpolated states, one row per requested time.
    pub fn sample(&self, times: &[f64]) -> Result<Vec<Vec<S>>, SolveError> {
        times.iter().map(|&t| self.at(t)).collect()
    }
}

impl Trajectory<f64> {
    /// Writes `t` followed by the state columns, one row per time, with
    /// 17 significant digits.
    pub fn write_csv<W: Write>(&self, w: W, times: &[f64]) -> Result<(), CsvError> {
        let rows = self.sample(times)?;
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_owned()];
        header.extend(self.names.iter().cloned());
        out.write_record(&header)?;
        for (t, row) in times.iter().zip(rows) {
            let mut rec = vec![format_full(*t)];
            rec.extend(row.into_iter().map(format_full));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Round-trip decimal form with 17 significant digits.
pub fn format_full(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cubic() -> Trajectory {
        // x = t^3 on [0, 2] with exact derivatives
        let mut tr = Trajectory::start(vec!["x".into()], vec![1.0], 0.0, vec![0.0]);
        tr.set_leaving(vec![0.0]);
        tr.push(1.0, vec![1.0], vec![3.0]);
        tr.push(2.0, vec![8.0], vec![12.0]);
        tr
    }

    #[test]
    fn hermite_reproduces_cubics() {
        let tr = cubic();
        for &t in &[0.25, 0.5, 1.5, 1.9] {
            assert!((tr.at(t).unwrap()[0] - t * t * t).abs() < 1e-14);
        }
        assert_eq!(tr.at(1.0).unwrap(), vec![1.0]);
        assert_eq!(tr.at(2.5), Err(SolveError::OutOfRange(2.5)));
        assert_eq!(tr.at(-0.1), Err(SolveError::OutOfRange(-0.1)));
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        cubic().write_csv(&mut buf, &[0.0, 1.0]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "t,x\n0.0000000000000000e0,0.0000000000000000e0\n1.0000000000000000e0,1.0000000000000000e0\n");
        let v: f64 = "0.1".parse().unwrap();
        assert_eq!(format_full(v).parse::<f64>().unwrap(), v);
    }
}
