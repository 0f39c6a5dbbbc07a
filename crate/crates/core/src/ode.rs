//! Adaptive Dormand-Prince 5(4) integrator for small dense ODE systems.

use std::ops::ControlFlow;

use crate::error::{Error, Result};

// Butcher tableau.
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
// Difference between the 5th and embedded 4th order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone, Copy)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    pub initial_step: Option<f64>,
}

impl Dopri5 {
    pub fn new(rtol: f64, atol: f64) -> Self {
        Dopri5 {
            rtol,
            atol,
            max_steps: 1_000_000,
            initial_step: None,
        }
    }
}

/// Integrates `y' = f(t, y)` from `t0` to `t1` and returns `y(t1)`.
pub fn integrate_to<F>(solver: &Dopri5, f: F, t0: f64, y0: &[f64], t1: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    integrate_with(solver, f, t0, y0, t1, |_, _| ControlFlow::Continue(())).map(|(_, y)| y)
}

/// Integrates from `t0` towards `t1`, calling `observe` after every accepted step.
///
/// Returns the time and state where integration stopped: `t1`, or the step at which the
/// observer returned `ControlFlow::Break`.
pub fn integrate_with<F, O>(
    solver: &Dopri5,
    mut f: F,
    t0: f64,
    y0: &[f64],
    t1: f64,
    mut observe: O,
) -> Result<(f64, Vec<f64>)>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    O: FnMut(f64, &[f64]) -> ControlFlow<()>,
{
    let n = y0.len();
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let span = (t1 - t0).abs();
    if span == 0.0 {
        return Ok((t0, y0.to_vec()));
    }

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    f(t, &y, &mut k[0]);

    let mut h = solver.initial_step.unwrap_or_else(|| {
        let scale: f64 = y
            .iter()
            .zip(&k[0])
            .map(|(yi, di)| di.abs() / (solver.atol + solver.rtol * yi.abs()))
            .fold(0.0, f64::max);
        if scale > 0.0 {
            (0.01 / scale).min(span)
        } else {
            span * 1e-3
        }
    });
    h = h.max(span * 1e-14);

    for _ in 0..solver.max_steps {
        if (t - t1).abs() <= span * 1e-15 {
            return Ok((t1, y));
        }
        if h > (t1 - t).abs() {
            h = (t1 - t).abs();
        }
        let hs = dir * h;

        let stage = |coeffs: &[(usize, f64)], k: &[Vec<f64>], y: &[f64], out: &mut [f64]| {
            for i in 0..y.len() {
                out[i] = y[i] + hs * coeffs.iter().map(|&(j, a)| a * k[j][i]).sum::<f64>();
            }
        };
        stage(&[(0, A21)], &k, &y, &mut tmp);
        f(t + C2 * hs, &tmp, &mut k[1]);
        stage(&[(0, A31), (1, A32)], &k, &y, &mut tmp);
        f(t + C3 * hs, &tmp, &mut k[2]);
        stage(&[(0, A41), (1, A42), (2, A43)], &k, &y, &mut tmp);
        f(t + C4 * hs, &tmp, &mut k[3]);
        stage(&[(0, A51), (1, A52), (2, A53), (3, A54)], &k, &y, &mut tmp);
        f(t + C5 * hs, &tmp, &mut k[4]);
        stage(&[(0, A61), (1, A62), (2, A63), (3, A64), (4, A65)], &k, &y, &mut tmp);
        f(t + hs, &tmp, &mut k[5]);
        stage(&[(0, B1), (2, B3), (3, B4), (4, B5), (5, B6)], &k, &y, &mut y_new);
        f(t + hs, &y_new, &mut k[6]);

        let mut err: f64 = 0.0;
        for i in 0..n {
            let e = hs
                * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i]
                    + E7 * k[6][i]);
            let sc = solver.atol + solver.rtol * y[i].abs().max(y_new[i].abs());
            err = err.max((e / sc).abs());
        }
        if !err.is_finite() {
            h *= 0.1;
            if h < span * 1e-16 {
                return Err(Error::Solver(format!("non-finite derivative near t={t}")));
            }
            continue;
        }

        if err <= 1.0 {
            t += hs;
            std::mem::swap(&mut y, &mut y_new);
            k.swap(0, 6);
            if observe(t, &y).is_break() {
                return Ok((t, y));
            }
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= fac;
        } else {
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
            if h < span * 1e-16 {
                return Err(Error::Solver(format!("step size underflow at t={t}")));
            }
        }
    }
    Err(Error::Solver(format!(
        "exceeded {} steps before reaching t={t1}",
        solver.max_steps
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let y = integrate_to(&Dopri5::new(1e-12, 1e-14), |_, y, d| d[0] = -y[0], 0.0, &[1.0], 3.0)
            .unwrap();
        assert!((y[0] - (-3.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn harmonic_oscillator_backwards() {
        let rhs = |_: f64, y: &[f64], d: &mut [f64]| {
            d[0] = y[1];
            d[1] = -y[0];
        };
        let y = integrate_to(&Dopri5::new(1e-11, 1e-13), rhs, 2.0, &[2.0f64.sin(), 2.0f64.cos()], 0.0)
            .unwrap();
        assert!(y[0].abs() < 1e-9);
        assert!((y[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn observer_can_stop() {
        let (t, y) = integrate_with(
            &Dopri5::new(1e-10, 1e-12),
            |_, _, d| d[0] = 1.0,
            0.0,
            &[0.0],
            10.0,
            |_, y| if y[0] > 2.0 { ControlFlow::Break(()) } else { ControlFlow::Continue(()) },
        )
        .unwrap();
        assert!(t < 10.0 && y[0] > 2.0);
    }
}
