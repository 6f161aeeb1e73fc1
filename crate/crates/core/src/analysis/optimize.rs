//! Scalar minimization and monotone interpolation.

use crate::error::{Error, Result};

const GOLDEN: f64 = 0.381_966_011_250_105_1;

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: f64,
    pub fx: f64,
    /// Every evaluated `(x, f(x))`, in call order.
    pub evaluations: Vec<(f64, f64)>,
}

/// Brent's method: golden-section search with parabolic interpolation on
/// `[a, b]`, stopping when the bracket shrinks below `tol` around the
/// current best point.
pub fn brent_minimize<F>(mut f: F, a: f64, b: f64, tol: f64, max_evaluations: usize) -> Result<Minimum>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(a < b) || !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("invalid bracket [{a}, {b}] or tolerance {tol}")));
    }
    let mut evals = Vec::new();
    let mut eval = |x: f64, evals: &mut Vec<(f64, f64)>| -> Result<f64> {
        let y = f(x)?;
        if !y.is_finite() {
            return Err(Error::FitNonConvergence(format!("objective is not finite at {x}")));
        }
        evals.push((x, y));
        Ok(y)
    };
    let (mut a, mut b) = (a, b);
    let mut x = a + GOLDEN * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = eval(x, &mut evals)?;
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    loop {
        let m = 0.5 * (a + b);
        let tol1 = tol + 1e-12 * x.abs();
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            return Ok(Minimum { x, fx, evaluations: evals });
        }
        if evals.len() >= max_evaluations {
            return Err(Error::FitNonConvergence(format!(
                "no convergence after {} objective evaluations (bracket [{a:.6}, {b:.6}])",
                evals.len()
            )));
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            if p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { b - x } else { a - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = eval(u, &mut evals)?;
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            (v, fv, w, fw, x, fx) = (w, fw, x, fx, u, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv, w, fw) = (w, fw, u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
}

/// Piecewise cubic Hermite interpolant with Fritsch–Carlson slopes; preserves
/// monotonicity of the data.
#[derive(Debug, Clone)]
pub struct Pchip {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl Pchip {
    /// `xs` must be strictly increasing.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        let n = xs.len();
        if n < 2 || ys.len() != n {
            return Err(Error::InvalidInput("PCHIP needs at least two (x, y) pairs".into()));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("PCHIP abscissae must be strictly increasing".into()));
        }
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
        let mut slopes = vec![0.0; n];
        if n == 2 {
            slopes = vec![delta[0]; 2];
        } else {
            for i in 1..n - 1 {
                if delta[i - 1] * delta[i] > 0.0 {
                    let w1 = 2.0 * h[i] + h[i - 1];
                    let w2 = h[i] + 2.0 * h[i - 1];
                    slopes[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
                }
            }
            slopes[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            slopes[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Ok(Pchip { xs, ys, slopes })
    }

    pub fn range(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    /// Interpolated value; refuses points outside the data range.
    pub fn eval(&self, x: f64) -> Result<f64> {
        let (lo, hi) = self.range();
        if !(x >= lo && x <= hi) {
            return Err(Error::Extrapolation { value: x, min: lo, max: hi });
        }
        let i = match self.xs.partition_point(|&v| v <= x) {
            0 => 0,
            k => (k - 1).min(self.xs.len() - 2),
        };
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        Ok(h00 * self.ys[i] + h10 * h * self.slopes[i] + h01 * self.ys[i + 1] + h11 * h * self.slopes[i + 1])
    }
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if s.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && s.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn brent_finds_parabola_minimum() {
        let m = brent_minimize(|x| Ok((x - 3.7).powi(2) + 1.0), 0.0, 10.0, 1e-8, 100).unwrap();
        assert!((m.x - 3.7).abs() < 1e-7);
        // parabolic steps converge in a handful of calls
        assert!(m.evaluations.len() < 12, "{}", m.evaluations.len());
    }

    #[test]
    fn brent_non_smooth_and_edge() {
        let m = brent_minimize(|x| Ok((x - 2.0).abs()), -5.0, 5.0, 1e-9, 200).unwrap();
        assert!((m.x - 2.0).abs() < 1e-7);
        let m = brent_minimize(|x| Ok(x), 1.0, 2.0, 1e-6, 200).unwrap();
        assert!((m.x - 1.0).abs() < 1e-5);
    }

    #[test]
    fn brent_gives_up() {
        assert!(matches!(
            brent_minimize(|x| Ok((x - 0.3).abs().sqrt()), 0.0, 1.0, 1e-12, 5),
            Err(Error::FitNonConvergence(_))
        ));
    }

    #[test]
    fn pchip_reproduces_nodes_and_refuses_extrapolation() {
        let p = Pchip::new(vec![0.0, 1.0, 2.0, 4.0], vec![0.0, 1.0, 4.0, 16.0]).unwrap();
        assert_eq!(p.eval(2.0).unwrap(), 4.0);
        assert_eq!(p.eval(4.0).unwrap(), 16.0);
        assert!(matches!(p.eval(4.5), Err(Error::Extrapolation { .. })));
        // linear data stays linear
        let l = Pchip::new(vec![0.0, 1.0, 3.0], vec![1.0, 3.0, 7.0]).unwrap();
        assert!((l.eval(2.2).unwrap() - 5.4).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn pchip_preserves_monotonicity(steps in proptest::collection::vec((0.01f64..2.0, 0.0f64..3.0), 3..10)) {
            let mut xs = vec![0.0];
            let mut ys = vec![0.0];
            for (dx, dy) in &steps {
                xs.push(xs.last().unwrap() + dx);
                ys.push(ys.last().unwrap() + dy);
            }
            let p = Pchip::new(xs.clone(), ys).unwrap();
            let (lo, hi) = p.range();
            let mut prev = f64::NEG_INFINITY;
            for k in 0..=400 {
                let y = p.eval((lo + (hi - lo) * k as f64 / 400.0).min(hi)).unwrap();
                prop_assert!(y >= prev - 1e-12);
                prev = y;
            }
        }
    }
}
