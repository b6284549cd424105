//! Adaptive Dormand-Prince 5(4) integration of matrix-valued ODEs.
//!
//! The state is anything implementing [`OdeState`]; in practice a single
//! complex matrix or a short list of them integrated jointly. Step size is
//! chosen by a PI controller on the embedded fourth-order error estimate.

use crate::error::{Error, Result};
use crate::linalg::{real, CMatrix};

pub trait OdeState: Clone {
    /// `self += a * other`
    fn axpy(&mut self, a: f64, other: &Self);

    /// RMS of `err / (atol + rtol * max(|y0|, |y1|))` over all components.
    fn error_norm(err: &Self, y0: &Self, y1: &Self, rtol: f64, atol: f64) -> f64;

    fn all_finite(&self) -> bool;
}

fn sum_scaled(err: &CMatrix, y0: &CMatrix, y1: &CMatrix, rtol: f64, atol: f64) -> (f64, usize) {
    let mut acc = 0.0;
    for ((e, a), b) in err.iter().zip(y0.iter()).zip(y1.iter()) {
        let sc = atol + rtol * a.norm().max(b.norm());
        let r = e.norm() / sc;
        acc += r * r;
    }
    (acc, err.len())
}

impl OdeState for CMatrix {
    fn axpy(&mut self, a: f64, other: &Self) {
        *self += other * real(a);
    }

    fn error_norm(err: &Self, y0: &Self, y1: &Self, rtol: f64, atol: f64) -> f64 {
        let (acc, n) = sum_scaled(err, y0, y1, rtol, atol);
        (acc / n.max(1) as f64).sqrt()
    }

    fn all_finite(&self) -> bool {
        crate::linalg::is_finite(self)
    }
}

impl OdeState for Vec<CMatrix> {
    fn axpy(&mut self, a: f64, other: &Self) {
        for (x, y) in self.iter_mut().zip(other) {
            *x += y * real(a);
        }
    }

    fn error_norm(err: &Self, y0: &Self, y1: &Self, rtol: f64, atol: f64) -> f64 {
        let mut acc = 0.0;
        let mut n = 0;
        for ((e, a), b) in err.iter().zip(y0).zip(y1) {
            let (s, k) = sum_scaled(e, a, b, rtol, atol);
            acc += s;
            n += k;
        }
        (acc / n.max(1) as f64).sqrt()
    }

    fn all_finite(&self) -> bool {
        self.iter().all(crate::linalg::is_finite)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; `None` means span / 1000.
    pub first_step: Option<f64>,
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rtol: 1e-9, atol: 1e-12, first_step: None, max_step: 0.1, max_steps: 10_000_000 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
}

// Dormand-Prince tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b - b* (fifth minus fourth order weights).
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const BETA: f64 = 0.04;
const ALPHA: f64 = 0.2 - BETA * 0.75;

fn combo<S: OdeState>(y: &S, h: f64, terms: &[(f64, &S)]) -> S {
    let mut out = y.clone();
    for &(c, k) in terms {
        if c != 0.0 {
            out.axpy(h * c, k);
        }
    }
    out
}

/// Integrate `dy/dt = f(t, y)` from `t0` to `t1`, stopping exactly at every
/// time in `t_out` (which must be increasing and inside the span).
///
/// `on_accept` sees every accepted step `(t, y)` and may abort the run.
pub fn integrate<S, F, A>(
    mut f: F,
    y0: S,
    (t0, t1): (f64, f64),
    t_out: &[f64],
    opts: OdeOptions,
    mut on_accept: A,
) -> Result<(Vec<(f64, S)>, StepStats)>
where
    S: OdeState,
    F: FnMut(f64, &S) -> Result<S>,
    A: FnMut(f64, &S) -> Result<()>,
{
    if t1.partial_cmp(&t0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::InvalidParameter(format!("integration span ({t0}, {t1}) is empty")));
    }
    if t_out.windows(2).any(|w| w[1] < w[0]) || t_out.iter().any(|&t| t < t0 || t > t1) {
        return Err(Error::InvalidParameter("output times must be increasing and inside the span".into()));
    }
    let span = t1 - t0;
    let mut h = opts.first_step.unwrap_or(span / 1000.0).min(opts.max_step);
    let mut t = t0;
    let mut y = y0;
    let mut stats = StepStats::default();
    let mut out = Vec::with_capacity(t_out.len());
    let mut next_out = 0;
    while next_out < t_out.len() && t_out[next_out] <= t0 {
        out.push((t, y.clone()));
        next_out += 1;
    }
    let mut k1 = f(t, &y)?;
    let mut err_prev: f64 = 1e-4;
    let mut last_rejected = false;

    while t < t1 {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(Error::StepSizeUnderflow { tau: t });
        }
        let target = if next_out < t_out.len() { t_out[next_out].min(t1) } else { t1 };
        let mut step = h.min(opts.max_step);
        let mut hits_target = false;
        if t + step >= target - 1e-12 * span.max(1.0) {
            step = target - t;
            hits_target = true;
        }
        if step < 1e-14 * t.abs().max(1.0) {
            if hits_target && step >= 0.0 {
                // Already at the requested output time.
                t = target;
                while next_out < t_out.len() && t_out[next_out] <= t {
                    out.push((t, y.clone()));
                    next_out += 1;
                }
                if t >= t1 {
                    break;
                }
                continue;
            }
            return Err(Error::StepSizeUnderflow { tau: t });
        }

        let k2 = f(t + C2 * step, &combo(&y, step, &[(A21, &k1)]))?;
        let k3 = f(t + C3 * step, &combo(&y, step, &[(A31, &k1), (A32, &k2)]))?;
        let k4 = f(t + C4 * step, &combo(&y, step, &[(A41, &k1), (A42, &k2), (A43, &k3)]))?;
        let k5 = f(t + C5 * step, &combo(&y, step, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]))?;
        let k6 = f(t + step, &combo(&y, step, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]))?;
        let y_new = combo(&y, step, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
        let k7 = f(t + step, &y_new)?;
        let mut zero = k1.clone();
        zero.axpy(-1.0, &k1);
        let err = combo(&zero, step, &[(E1, &k1), (E3, &k3), (E4, &k4), (E5, &k5), (E6, &k6), (E7, &k7)]);
        let en = S::error_norm(&err, &y, &y_new, opts.rtol, opts.atol);

        if !en.is_finite() || !y_new.all_finite() {
            stats.rejected += 1;
            h = step * FAC_MIN;
            last_rejected = true;
            continue;
        }

        if en <= 1.0 {
            stats.accepted += 1;
            t = if hits_target { target } else { t + step };
            y = y_new;
            k1 = k7;
            on_accept(t, &y)?;
            while next_out < t_out.len() && t_out[next_out] <= t + 1e-12 * span.max(1.0) {
                out.push((t_out[next_out], y.clone()));
                next_out += 1;
            }
            let en_c = en.max(1e-10);
            let mut fac = SAFETY * en_c.powf(-ALPHA) * err_prev.powf(BETA);
            fac = fac.clamp(FAC_MIN, FAC_MAX);
            if last_rejected {
                fac = fac.min(1.0);
            }
            // Do not let a short step forced by an output time shrink h.
            h = if hits_target { h.max(step * fac) } else { step * fac };
            err_prev = en_c;
            last_rejected = false;
        } else {
            stats.rejected += 1;
            let fac = (SAFETY * en.powf(-ALPHA)).clamp(FAC_MIN, 1.0);
            h = step * fac;
            last_rejected = true;
        }
    }
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c64, matrix_exp, CMatrix};

    fn scalar(x: f64) -> CMatrix {
        CMatrix::from_element(1, 1, real(x))
    }

    #[test]
    fn exponential_decay() {
        let (out, stats) = integrate(
            |_, y: &CMatrix| Ok(y * real(-1.0)),
            scalar(1.0),
            (0.0, 5.0),
            &[0.0, 1.0, 5.0],
            OdeOptions::default(),
            |_, _| Ok(()),
        )
        .unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[1].0, 1.0);
        assert!((out[1].1[(0, 0)].re - (-1.0f64).exp()).abs() < 1e-9);
        assert!((out[2].1[(0, 0)].re - (-5.0f64).exp()).abs() < 1e-9);
        assert!(stats.accepted > 0);
    }

    #[test]
    fn linear_matrix_ode_matches_exponential() {
        let a = CMatrix::from_row_slice(2, 2, &[c64(-0.3, 1.0), c64(0.5, 0.0), c64(-0.5, 0.2), c64(-1.0, -0.4)]);
        let y0 = CMatrix::identity(2, 2);
        let (out, _) = integrate(|_, y: &CMatrix| Ok(&a * y), y0, (0.0, 3.0), &[3.0], OdeOptions::default(), |_, _| Ok(())).unwrap();
        let want = matrix_exp(&(&a * real(3.0))).unwrap();
        assert!((&out[0].1 - want).norm() < 1e-8);
    }

    #[test]
    fn time_dependent_scalar() {
        // y' = cos(t) y, y = exp(sin t).
        let (out, _) = integrate(
            |t, y: &CMatrix| Ok(y * real(t.cos())),
            scalar(1.0),
            (0.0, 10.0),
            &[10.0],
            OdeOptions::default(),
            |_, _| Ok(()),
        )
        .unwrap();
        assert!((out[0].1[(0, 0)].re - 10f64.sin().exp()).abs() < 1e-8);
    }

    #[test]
    fn joint_state_vector() {
        let (out, _) = integrate(
            |_, y: &Vec<CMatrix>| Ok(vec![y[1].clone(), y[0].clone() * real(-1.0)]),
            vec![scalar(1.0), scalar(0.0)],
            (0.0, std::f64::consts::PI),
            &[std::f64::consts::PI],
            OdeOptions::default(),
            |_, _| Ok(()),
        )
        .unwrap();
        assert!((out[0].1[0][(0, 0)].re + 1.0).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_output_times() {
        let r = integrate(|_, y: &CMatrix| Ok(y.clone()), scalar(1.0), (0.0, 1.0), &[0.5, 0.2], OdeOptions::default(), |_, _| Ok(()));
        assert!(r.is_err());
    }

    #[test]
    fn underflow_is_reported_with_time() {
        // Finite-time blow-up y' = y^2 at t = 1.
        let r = integrate(
            |_, y: &CMatrix| Ok(y * y),
            scalar(1.0),
            (0.0, 2.0),
            &[],
            OdeOptions { max_steps: 100_000, ..OdeOptions::default() },
            |_, _| Ok(()),
        );
        match r {
            Err(Error::StepSizeUnderflow { tau }) => assert!(tau > 0.9 && tau <= 1.0, "tau = {tau}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn on_accept_can_abort() {
        let r = integrate(
            |_, y: &CMatrix| Ok(y.clone()),
            scalar(1.0),
            (0.0, 1.0),
            &[],
            OdeOptions::default(),
            |t, _| if t > 0.5 { Err(Error::InvariantViolation { tau: t, what: "test", value: 1.0 }) } else { Ok(()) },
        );
        assert!(matches!(r, Err(Error::InvariantViolation { .. })));
    }
}
