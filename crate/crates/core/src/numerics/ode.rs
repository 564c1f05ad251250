//! Adaptive Dormand–Prince 5(4) integrator for small autonomous or
//! time-dependent systems.
//!
//! The stepper exposes single accepted steps so that callers can bracket
//! events (hazard crossings, boundary hits) between consecutive steps and
//! refine them by re-integrating from the bracket start.

use crate::error::{Error, Result};

/// Relative/absolute tolerance pair used by the step-size controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

impl Tolerance {
    pub const fn new(rtol: f64, atol: f64) -> Self {
        Self { rtol, atol }
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self::new(1e-10, 1e-12)
    }
}

const MAX_STEPS: usize = 10_000_000;

// Butcher tableau (Dormand & Prince 1980).
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
// b - b* (error weights)
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// dense output weights (Hairer, Nørsett & Wanner)
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Single-step adaptive integrator state.
pub struct Dopri5<F> {
    rhs: F,
    tol: Tolerance,
    t: f64,
    y: Vec<f64>,
    h: f64,
    k: [Vec<f64>; 7],
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
    steps: usize,
    fsal_valid: bool,
    /// Start and length of the last accepted step.
    t_old: f64,
    h_old: f64,
    /// Coefficients of the continuous extension on the last accepted step.
    cont: [Vec<f64>; 5],
}

impl<F> Dopri5<F>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    pub fn new(rhs: F, t0: f64, y0: &[f64], tol: Tolerance) -> Self {
        let n = y0.len();
        let zeros = || vec![0.0; n];
        Self {
            rhs,
            tol,
            t: t0,
            y: y0.to_vec(),
            h: 0.0,
            k: [zeros(), zeros(), zeros(), zeros(), zeros(), zeros(), zeros()],
            ytmp: zeros(),
            ynew: zeros(),
            steps: 0,
            fsal_valid: false,
            t_old: t0,
            h_old: 0.0,
            cont: [zeros(), zeros(), zeros(), zeros(), zeros()],
        }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    fn scale(&self, a: f64, b: f64) -> f64 {
        self.tol.atol + self.tol.rtol * a.abs().max(b.abs())
    }

    fn initial_step(&mut self, t_end: f64) -> f64 {
        let n = self.y.len();
        (self.rhs)(self.t, &self.y, &mut self.k[0]);
        self.fsal_valid = true;
        let span = (t_end - self.t).abs();
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for i in 0..n {
            let sc = self.scale(self.y[i], self.y[i]);
            d0 += (self.y[i] / sc).powi(2);
            d1 += (self.k[0][i] / sc).powi(2);
        }
        d0 = (d0 / n.max(1) as f64).sqrt();
        d1 = (d1 / n.max(1) as f64).sqrt();
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0 = h0.min(span);
        for i in 0..n {
            self.ytmp[i] = self.y[i] + h0 * self.k[0][i];
        }
        (self.rhs)(self.t + h0, &self.ytmp, &mut self.k[1]);
        let mut d2 = 0.0;
        for i in 0..n {
            let sc = self.scale(self.y[i], self.y[i]);
            d2 += ((self.k[1][i] - self.k[0][i]) / sc).powi(2);
        }
        d2 = (d2 / n.max(1) as f64).sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(span).max(f64::MIN_POSITIVE)
    }

    /// Take one accepted step towards `t_end` without overshooting it.
    /// Returns the new time.
    pub fn step(&mut self, t_end: f64) -> Result<f64> {
        let n = self.y.len();
        if self.t >= t_end {
            return Ok(self.t);
        }
        if self.h <= 0.0 {
            self.h = self.initial_step(t_end);
        }
        if !self.fsal_valid {
            (self.rhs)(self.t, &self.y, &mut self.k[0]);
            self.fsal_valid = true;
        }
        loop {
            self.steps += 1;
            if self.steps > MAX_STEPS {
                return Err(Error::StepLimit { time: self.t });
            }
            let remaining = t_end - self.t;
            let last = self.h >= remaining * (1.0 - 1e-12);
            let h = if last { remaining } else { self.h };
            if h <= 1e-14 * self.t.abs().max(1.0) && !last {
                return Err(Error::StepSizeUnderflow { time: self.t });
            }
            let t = self.t;
            let y = &self.y;
            let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
            let ytmp = &mut self.ytmp;
            for i in 0..n {
                ytmp[i] = y[i] + h * A21 * k1[i];
            }
            (self.rhs)(t + C2 * h, ytmp, k2);
            for i in 0..n {
                ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            (self.rhs)(t + C3 * h, ytmp, k3);
            for i in 0..n {
                ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            (self.rhs)(t + C4 * h, ytmp, k4);
            for i in 0..n {
                ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            (self.rhs)(t + C5 * h, ytmp, k5);
            for i in 0..n {
                ytmp[i] = y[i]
                    + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            let t_new = if last { t_end } else { t + h };
            (self.rhs)(t_new, ytmp, k6);
            for i in 0..n {
                self.ynew[i] =
                    y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
            }
            (self.rhs)(t_new, &self.ynew, k7);

            let mut err = 0.0;
            let mut finite = true;
            for i in 0..n {
                let e = h
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = self.tol.atol + self.tol.rtol * y[i].abs().max(self.ynew[i].abs());
                err += (e / sc).powi(2);
                finite &= self.ynew[i].is_finite();
            }
            err = (err / n.max(1) as f64).sqrt();

            if !finite || !err.is_finite() {
                if h <= 1e-14 * t.abs().max(1.0) {
                    return Err(Error::NonFinite { time: t });
                }
                self.h = h * 0.1;
                continue;
            }
            if err <= 1.0 {
                let [c1, c2, c3, c4, c5] = &mut self.cont;
                for i in 0..n {
                    let dy = self.ynew[i] - y[i];
                    let bspl = h * k1[i] - dy;
                    c1[i] = y[i];
                    c2[i] = dy;
                    c3[i] = bspl;
                    c4[i] = dy - h * k7[i] - bspl;
                    c5[i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
                }
                self.t_old = t;
                self.h_old = t_new - t;
                self.t = t_new;
                std::mem::swap(&mut self.y, &mut self.ynew);
                // first-same-as-last
                self.k.swap(0, 6);
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                if !last || fac < 1.0 {
                    self.h = h * fac;
                }
                return Ok(self.t);
            }
            self.h = h * (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
        }
    }

    /// Fourth-order interpolant of the last accepted step, valid for
    /// `t` between the previous and the current time.
    pub fn dense(&self, t: f64, out: &mut [f64]) {
        let theta = if self.h_old > 0.0 { (t - self.t_old) / self.h_old } else { 1.0 };
        let th1 = 1.0 - theta;
        let [c1, c2, c3, c4, c5] = &self.cont;
        for i in 0..out.len() {
            out[i] = c1[i] + theta * (c2[i] + th1 * (c3[i] + theta * (c4[i] + th1 * c5[i])));
        }
    }

    /// Integrate all the way to `t_end`.
    pub fn advance_to(&mut self, t_end: f64) -> Result<()> {
        while self.t < t_end {
            self.step(t_end)?;
        }
        Ok(())
    }
}

/// Integrate `y' = rhs(t, y)` from `(t0, y0)` to `t1` and return `y(t1)`.
pub fn integrate<F>(rhs: F, t0: f64, y0: &[f64], t1: f64, tol: Tolerance) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if t1 == t0 {
        return Ok(y0.to_vec());
    }
    let mut solver = Dopri5::new(rhs, t0, y0, tol);
    solver.advance_to(t1)?;
    Ok(solver.y)
}
