//! Damped least-squares fitting of Lorentzian line shapes.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Outcome of a Levenberg–Marquardt fit.
#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    /// Parameter covariance; scaled by the reduced χ² when no data errors
    /// were supplied.
    pub covariance: DMatrix<f64>,
    pub chi2: f64,
    pub iterations: usize,
}

impl LmOutcome {
    pub fn std_error(&self, k: usize) -> f64 {
        self.covariance[(k, k)].max(0.0).sqrt()
    }
}

/// Minimises `Σ w_i (y_i − f(p, x_i))²`. `model(p, x, grad)` returns
/// `f(p, x)` and writes `∂f/∂p` into `grad`. `sigma` gives per-point
/// standard errors; without it all weights are 1 and the covariance is
/// rescaled by χ²/(N − P).
pub fn levenberg_marquardt<F>(
    model: F,
    xs: &[f64],
    ys: &[f64],
    sigma: Option<&[f64]>,
    p0: &[f64],
    max_iter: usize,
) -> Result<LmOutcome>
where
    F: Fn(&[f64], f64, &mut [f64]) -> f64,
{
    let n = xs.len();
    let np = p0.len();
    if n < np {
        return Err(Error::FitNonConvergence(format!("{n} points cannot constrain {np} parameters")));
    }
    let weights: Vec<f64> = match sigma {
        Some(s) => s
            .iter()
            .map(|&e| if e > 0.0 && e.is_finite() { 1.0 / (e * e) } else { 1.0 })
            .collect(),
        None => vec![1.0; n],
    };
    let mut grad = vec![0.0; np];
    let eval = |p: &[f64], grad: &mut [f64], jac: Option<&mut DMatrix<f64>>, res: &mut DVector<f64>| -> f64 {
        let mut chi2 = 0.0;
        let mut jac = jac;
        for i in 0..n {
            let f = model(p, xs[i], grad);
            let sw = weights[i].sqrt();
            let r = (ys[i] - f) * sw;
            res[i] = r;
            chi2 += r * r;
            if let Some(j) = jac.as_deref_mut() {
                for k in 0..np {
                    j[(i, k)] = grad[k] * sw;
                }
            }
        }
        chi2
    };

    let mut p = p0.to_vec();
    let mut jac = DMatrix::zeros(n, np);
    let mut res = DVector::zeros(n);
    let mut chi2 = eval(&p, &mut grad, Some(&mut jac), &mut res);
    if !chi2.is_finite() {
        return Err(Error::FitNonConvergence("model is not finite at the starting point".into()));
    }
    let mut lambda = 1e-3;
    let mut trial_res = DVector::zeros(n);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &res;
        let mut improved = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for k in 0..np {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(step) = a.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let c = eval(&trial, &mut grad, None, &mut trial_res);
            if c.is_finite() && c <= chi2 {
                let small_step = step
                    .iter()
                    .zip(&p)
                    .all(|(d, v)| d.abs() <= 1e-13 * (v.abs() + 1e-13));
                let small_gain = chi2 - c <= 1e-15 * chi2;
                p = trial;
                chi2 = eval(&p, &mut grad, Some(&mut jac), &mut res);
                lambda = (lambda / 10.0).max(1e-15);
                improved = true;
                if small_step || small_gain || chi2 == 0.0 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e20 {
                break;
            }
        }
        if converged || !improved {
            // no downhill step at any damping: at a minimum to machine precision
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::FitNonConvergence(format!(
            "no convergence after {max_iter} iterations (chi2 = {chi2:.3e})"
        )));
    }
    let jtj = jac.transpose() * &jac;
    let inv = jtj
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::FitNonConvergence("singular normal matrix at the optimum".into()))?;
    let scale = if sigma.is_some() {
        1.0
    } else if n > np {
        chi2 / (n - np) as f64
    } else {
        0.0
    };
    Ok(LmOutcome {
        params: p,
        covariance: inv * scale,
        chi2,
        iterations,
    })
}

/// `A / (1 + ((x − c)/w)²) + offset`.
pub fn lorentzian(x: f64, center: f64, hwhm: f64, amplitude: f64, offset: f64) -> f64 {
    let u = (x - center) / hwhm;
    amplitude / (1.0 + u * u) + offset
}

/// Value and gradient of `A/(1+u²)` with respect to `(c, w, A)`.
fn lorentz_parts(x: f64, c: f64, w: f64, a: f64) -> (f64, [f64; 3]) {
    let u = (x - c) / w;
    let d = 1.0 + u * u;
    let l = 1.0 / d;
    let dl_du = -2.0 * u / (d * d);
    (a * l, [a * dl_du * (-1.0 / w), a * dl_du * (-u / w), l])
}

#[derive(Debug, Clone, PartialEq)]
pub struct LorentzianFit {
    pub center: f64,
    pub hwhm: f64,
    pub amplitude: f64,
    pub offset: f64,
    /// Standard errors of (center, hwhm, amplitude, offset).
    pub errors: [f64; 4],
    pub residual_norm: f64,
}

/// Indices of interior local maxima (plateaus count once), highest first.
pub fn local_maxima(ys: &[f64]) -> Vec<usize> {
    let n = ys.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && ys[j + 1] == ys[i] {
            j += 1;
        }
        let left_ok = i == 0 || ys[i - 1] < ys[i];
        let right_ok = j + 1 == n || ys[j + 1] < ys[j];
        if left_ok && right_ok {
            out.push((i + j) / 2);
        }
        i = j + 1;
    }
    out.sort_by(|&a, &b| ys[b].partial_cmp(&ys[a]).unwrap());
    out
}

/// Half width at half maximum read off the samples around `peak`.
fn rough_hwhm(xs: &[f64], ys: &[f64], peak: usize, base: f64) -> f64 {
    let half = base + 0.5 * (ys[peak] - base);
    let mut lo = peak;
    while lo > 0 && ys[lo] > half {
        lo -= 1;
    }
    let mut hi = peak;
    while hi + 1 < ys.len() && ys[hi] > half {
        hi += 1;
    }
    let w = 0.5 * (xs[hi] - xs[lo]).abs();
    if w > 0.0 {
        w
    } else {
        (xs[xs.len() - 1] - xs[0]).abs() / xs.len() as f64
    }
}

/// Single Lorentzian plus offset, started from each of the three highest
/// local maxima; the lowest-χ² result wins.
pub fn fit_lorentzian(xs: &[f64], ys: &[f64], sigma: Option<&[f64]>) -> Result<LorentzianFit> {
    if xs.len() < 5 || xs.len() != ys.len() {
        return Err(Error::FitNonConvergence("need at least 5 points for a Lorentzian fit".into()));
    }
    let base = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let mut starts = local_maxima(ys);
    starts.truncate(3);
    if starts.is_empty() {
        return Err(Error::FitNonConvergence("no local maximum in the data".into()));
    }
    let model = |p: &[f64], x: f64, g: &mut [f64]| {
        let (v, d) = lorentz_parts(x, p[0], p[1], p[2]);
        g[..3].copy_from_slice(&d);
        g[3] = 1.0;
        v + p[3]
    };
    let mut best: Option<LmOutcome> = None;
    let mut last_err = None;
    for &k in &starts {
        let p0 = [xs[k], rough_hwhm(xs, ys, k, base), ys[k] - base, base];
        match levenberg_marquardt(model, xs, ys, sigma, &p0, 1000) {
            Ok(o) if o.params[1] != 0.0 => {
                if best.as_ref().is_none_or(|b| o.chi2 < b.chi2) {
                    best = Some(o);
                }
            }
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
    }
    let o = best.ok_or_else(|| last_err.unwrap_or_else(|| Error::FitNonConvergence("degenerate width".into())))?;
    Ok(LorentzianFit {
        center: o.params[0],
        hwhm: o.params[1].abs(),
        amplitude: o.params[2],
        offset: o.params[3],
        errors: [o.std_error(0), o.std_error(1), o.std_error(2), o.std_error(3)],
        residual_norm: o.chi2.sqrt(),
    })
}

/// Central line with two sidebands at `±d` sharing one width:
/// parameters `(c, w, d, A0, A−, A+, offset)`.
pub fn triple_lorentzian(p: &[f64], x: f64, g: &mut [f64]) -> f64 {
    let (c, w, d) = (p[0], p[1], p[2]);
    let (v0, g0) = lorentz_parts(x, c, w, p[3]);
    let (vm, gm) = lorentz_parts(x, c - d, w, p[4]);
    let (vp, gp) = lorentz_parts(x, c + d, w, p[5]);
    g[0] = g0[0] + gm[0] + gp[0];
    g[1] = g0[1] + gm[1] + gp[1];
    g[2] = -gm[0] + gp[0];
    g[3] = g0[2];
    g[4] = gm[2];
    g[5] = gp[2];
    g[6] = 1.0;
    v0 + vm + vp + p[6]
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinewidthFit {
    /// Central-line HWHM in calibrated units.
    pub kappa: f64,
    pub kappa_error: f64,
    /// Factor converting the raw x axis to calibrated frequency.
    pub axis_scale: f64,
    pub params: Vec<f64>,
}

/// Fits a central line plus sidebands and calibrates the x axis so that the
/// sidebands sit at `±sideband_offset`.
pub fn fit_linewidth(xs: &[f64], ys: &[f64], sigma: Option<&[f64]>, sideband_offset: f64) -> Result<LinewidthFit> {
    if !(sideband_offset > 0.0) {
        return Err(Error::InvalidInput("sideband offset must be positive".into()));
    }
    let base = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let top = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut peaks: Vec<usize> = local_maxima(ys)
        .into_iter()
        .filter(|&k| ys[k] - base > 0.02 * (top - base))
        .collect();
    if peaks.len() < 3 {
        return Err(Error::FitNonConvergence(format!(
            "found {} resolvable peak(s); a central line and two sidebands are required",
            peaks.len()
        )));
    }
    // strongest line is the carrier; sidebands are the strongest on each side
    let carrier = peaks[0];
    peaks.remove(0);
    let left = peaks.iter().copied().find(|&k| xs[k] < xs[carrier]);
    let right = peaks.iter().copied().find(|&k| xs[k] > xs[carrier]);
    let (Some(left), Some(right)) = (left, right) else {
        return Err(Error::FitNonConvergence("sidebands not found on both sides of the carrier".into()));
    };
    let p0 = [
        xs[carrier],
        rough_hwhm(xs, ys, carrier, base),
        0.5 * (xs[right] - xs[left]),
        ys[carrier] - base,
        ys[left] - base,
        ys[right] - base,
        base,
    ];
    let o = levenberg_marquardt(triple_lorentzian, xs, ys, sigma, &p0, 2000)?;
    let (w, d) = (o.params[1].abs(), o.params[2].abs());
    if d == 0.0 {
        return Err(Error::FitNonConvergence("sideband spacing collapsed to zero".into()));
    }
    let s = sideband_offset / d;
    let kappa = w * s;
    // gradient of κ = |w|·offset/|d| with respect to (w, d)
    let gw = s * o.params[1].signum();
    let gd = -kappa / d * o.params[2].signum();
    let var = gw * gw * o.covariance[(1, 1)] + gd * gd * o.covariance[(2, 2)] + 2.0 * gw * gd * o.covariance[(1, 2)];
    Ok(LinewidthFit {
        kappa,
        kappa_error: var.max(0.0).sqrt(),
        axis_scale: s,
        params: o.params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn exact_recovery_single() {
        let xs = grid(-25.0, 25.0, 81);
        let ys: Vec<f64> = xs.iter().map(|&x| lorentzian(x, -8.5, 3.2, 0.7, 0.01)).collect();
        let f = fit_lorentzian(&xs, &ys, None).unwrap();
        assert!((f.center + 8.5).abs() < 1e-9);
        assert!((f.hwhm - 3.2).abs() < 1e-9);
        assert!((f.amplitude - 0.7).abs() < 1e-9);
        assert!((f.offset - 0.01).abs() < 1e-9);
        assert!(f.errors.iter().all(|e| *e >= 0.0 && *e < 1e-8));
    }

    #[test]
    fn multistart_escapes_minor_peak() {
        let xs = grid(-30.0, 30.0, 121);
        // weak bump on the left, dominant line on the right
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| lorentzian(x, 12.0, 2.5, 1.0, 0.0) + lorentzian(x, -20.0, 1.0, 0.3, 0.0))
            .collect();
        let f = fit_lorentzian(&xs, &ys, None).unwrap();
        assert!((f.center - 12.0).abs() < 0.1);
    }

    #[test]
    fn triple_recovery_and_calibration() {
        let truth = [0.3, 4.1, 45.0, 1.0, 0.25, 0.22, 0.02];
        let xs = grid(-70.0, 70.0, 281);
        let mut g = [0.0; 7];
        let ys: Vec<f64> = xs.iter().map(|&x| triple_lorentzian(&truth, x, &mut g)).collect();
        let fit = fit_linewidth(&xs, &ys, None, 45.0).unwrap();
        assert!((fit.kappa - 4.1).abs() < 1e-9);
        assert!((fit.axis_scale - 1.0).abs() < 1e-9);

        // same data on an axis stretched by 1.3
        let stretched: Vec<f64> = xs.iter().map(|x| x * 1.3).collect();
        let fit = fit_linewidth(&stretched, &ys, None, 45.0).unwrap();
        assert!((fit.kappa - 4.1).abs() < 1e-9);
        assert!((fit.axis_scale - 1.0 / 1.3).abs() < 1e-9);
    }

    #[test]
    fn triple_gradient_matches_finite_difference() {
        let p = [0.3, 4.1, 45.0, 1.0, 0.25, 0.22, 0.02];
        let mut g = [0.0; 7];
        let mut scratch = [0.0; 7];
        for &x in &[-44.0, -3.0, 0.5, 47.0] {
            triple_lorentzian(&p, x, &mut g);
            for k in 0..7 {
                let h = 1e-6 * p[k].abs().max(1.0);
                let mut hi = p;
                let mut lo = p;
                hi[k] += h;
                lo[k] -= h;
                let fd = (triple_lorentzian(&hi, x, &mut scratch) - triple_lorentzian(&lo, x, &mut scratch)) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-6, "param {k} at x={x}");
            }
        }
    }

    #[test]
    fn single_peak_is_not_a_linewidth_scan() {
        let xs = grid(-70.0, 70.0, 141);
        let ys: Vec<f64> = xs.iter().map(|&x| lorentzian(x, 0.0, 4.1, 1.0, 0.0)).collect();
        assert!(matches!(
            fit_linewidth(&xs, &ys, None, 45.0),
            Err(Error::FitNonConvergence(_))
        ));
    }

    #[test]
    fn local_maxima_order() {
        let ys = [0.0, 1.0, 0.0, 3.0, 3.0, 0.0, 2.0];
        assert_eq!(local_maxima(&ys), vec![3, 6, 1]);
    }
}
