//! Adaptive Dormand–Prince 5(4) integration of `y' = f(t, y)` for complex
//! state vectors.

use num_complex::Complex64;

use crate::error::{Error, Result};

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
/// Difference between the 5th- and 4th-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

#[derive(Debug, Clone, Copy)]
pub(crate) struct Tolerances {
    pub atol: f64,
    pub rtol: f64,
}

/// Integrator state carried across segments.
pub(crate) struct Stepper {
    tol: Tolerances,
    k: Vec<Vec<Complex64>>,
    tmp: Vec<Complex64>,
    y_new: Vec<Complex64>,
    h: Option<f64>,
    /// `k[0]` holds `f(t, y)` for the current point.
    fsal_valid: bool,
    pub steps: usize,
    pub rejected: usize,
}

impl Stepper {
    pub fn new(dim: usize, tol: Tolerances) -> Self {
        Stepper {
            tol,
            k: vec![vec![Complex64::new(0.0, 0.0); dim]; 7],
            tmp: vec![Complex64::new(0.0, 0.0); dim],
            y_new: vec![Complex64::new(0.0, 0.0); dim],
            h: None,
            fsal_valid: false,
            steps: 0,
            rejected: 0,
        }
    }

    /// Call when the right-hand side changes discontinuously at the current time.
    pub fn invalidate(&mut self) {
        self.fsal_valid = false;
    }

    fn error_norm(&self, y: &[Complex64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..y.len() {
            let mut e = Complex64::new(0.0, 0.0);
            for (s, &w) in E.iter().enumerate() {
                if w != 0.0 {
                    e += self.k[s][i] * w;
                }
            }
            let scale = self.tol.atol + self.tol.rtol * y[i].norm().max(self.y_new[i].norm());
            acc += (e.norm() / scale).powi(2);
        }
        (acc / y.len().max(1) as f64).sqrt()
    }

    /// Advances `y` from `t0` to exactly `t1` (`t1 > t0`).
    pub fn integrate<F>(&mut self, f: &mut F, t0: f64, t1: f64, y: &mut [Complex64]) -> Result<()>
    where
        F: FnMut(f64, &[Complex64], &mut [Complex64]),
    {
        let mut t = t0;
        if !self.fsal_valid {
            f(t, y, &mut self.k[0]);
            self.fsal_valid = true;
        }
        let span = t1 - t0;
        let mut h = match self.h {
            Some(h) => h,
            None => self.initial_step(y, span),
        };
        while t < t1 {
            let last = t + h >= t1 || (t1 - (t + h)) < 1e-12 * span;
            let step = if last { t1 - t } else { h };
            if step <= 16.0 * f64::EPSILON * t.abs().max(1e-300) || step < 1e-14 {
                return Err(Error::StepSizeUnderflow { last_good_time: t });
            }
            for s in 1..7 {
                for i in 0..y.len() {
                    let mut acc = y[i];
                    for (j, &a) in A[s].iter().enumerate().take(s) {
                        if a != 0.0 {
                            acc += self.k[j][i] * (a * step);
                        }
                    }
                    self.tmp[i] = acc;
                }
                f(t + C[s] * step, &self.tmp, &mut self.k[s]);
            }
            // stage 7 evaluated at the 5th-order solution
            self.y_new.copy_from_slice(&self.tmp);
            let err = self.error_norm(y);
            if !err.is_finite() {
                h = step * 0.2;
                self.rejected += 1;
                continue;
            }
            if err <= 1.0 {
                t = if last { t1 } else { t + step };
                y.copy_from_slice(&self.y_new);
                self.k.swap(0, 6);
                self.steps += 1;
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                // keep the pre-truncation step when the last step was shortened
                h = if last { h.max(step * fac) } else { step * fac };
            } else {
                self.rejected += 1;
                h = step * (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
            }
        }
        self.h = Some(h);
        Ok(())
    }

    fn initial_step(&self, y: &[Complex64], span: f64) -> f64 {
        let scale = |i: usize| self.tol.atol + self.tol.rtol * y[i].norm();
        let d0 = (y.iter().enumerate().map(|(i, v)| (v.norm() / scale(i)).powi(2)).sum::<f64>()
            / y.len().max(1) as f64)
            .sqrt();
        let d1 = (self.k[0].iter().enumerate().map(|(i, v)| (v.norm() / scale(i)).powi(2)).sum::<f64>()
            / y.len().max(1) as f64)
            .sqrt();
        let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h.min(span)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let tol = Tolerances { atol: 1e-12, rtol: 1e-10 };
        let mut s = Stepper::new(1, tol);
        let mut y = vec![Complex64::new(1.0, 0.0)];
        let mut f = |_t: f64, y: &[Complex64], dy: &mut [Complex64]| dy[0] = -2.0 * y[0];
        s.integrate(&mut f, 0.0, 1.5, &mut y).unwrap();
        assert!((y[0].re - (-3.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn oscillator_phase() {
        let tol = Tolerances { atol: 1e-12, rtol: 1e-10 };
        let mut s = Stepper::new(1, tol);
        let mut y = vec![Complex64::new(1.0, 0.0)];
        let w = 7.0;
        let mut f = |_t: f64, y: &[Complex64], dy: &mut [Complex64]| dy[0] = Complex64::new(0.0, -w) * y[0];
        s.integrate(&mut f, 0.0, 0.4, &mut y).unwrap();
        s.integrate(&mut f, 0.4, 2.0, &mut y).unwrap();
        let exact = Complex64::from_polar(1.0, -w * 2.0);
        assert!((y[0] - exact).norm() < 1e-8);
    }

    #[test]
    fn blow_up_reports_underflow() {
        let tol = Tolerances { atol: 1e-10, rtol: 1e-8 };
        let mut s = Stepper::new(1, tol);
        let mut y = vec![Complex64::new(1.0, 0.0)];
        // y' = y², finite-time blow-up at t = 1
        let mut f = |_t: f64, y: &[Complex64], dy: &mut [Complex64]| dy[0] = y[0] * y[0];
        match s.integrate(&mut f, 0.0, 2.0, &mut y) {
            Err(Error::StepSizeUnderflow { last_good_time }) => {
                assert!(last_good_time > 0.9 && last_good_time < 1.0)
            }
            other => panic!("expected underflow, got {other:?}"),
        }
    }
}
