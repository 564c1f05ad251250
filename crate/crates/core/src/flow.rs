//! Deterministic motion between jumps: flows, hazards along flows, and exact
//! jump-time sampling.
//!
//! A [`Flow`] is the solution map of `x' = g(x)`; when a closed form is
//! supplied it is used instead of the integrator. A [`Hazard`] is a jump
//! intensity. The time to the next jump from `x0` has distribution function
//! `F(t) = 1 - exp(-∫_0^t rate(π_s x0) ds)`, sampled either by inverting the
//! cumulative hazard (integrated as an extra ODE coordinate) or by thinning
//! against a constant dominating rate.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Exp, Exp1};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::numerics::ode::{Dopri5, Tolerance};
use crate::numerics::quad::{self, QuadOptions};
use crate::numerics::roots;

pub type VectorFieldFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type ClosedFormFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
pub type StateFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Tolerance for locating hazard crossings and boundary hits in time.
pub const TOL_EVENT: f64 = 1e-10;
/// Cap on the waiting time for a single event.
pub const DEFAULT_HORIZON_CAP: f64 = 1e6;

/// Axis-aligned box `lower ≤ x ≤ upper` (bounds may be infinite).
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Domain {
    pub fn unbounded(dim: usize) -> Self {
        Self { lower: vec![f64::NEG_INFINITY; dim], upper: vec![f64::INFINITY; dim] }
    }

    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        Self { lower, upper }
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Membership with a relative slack of 1e-12 on finite bounds.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(&v, (&lo, &hi))| {
            let slack_lo = 1e-12 * (1.0 + lo.abs());
            let slack_hi = 1e-12 * (1.0 + hi.abs());
            v >= lo - slack_lo && v <= hi + slack_hi
        })
    }
}

/// Solution map of an autonomous ODE `x' = g(x)`.
#[derive(Clone)]
pub struct Flow {
    dim: usize,
    rhs: VectorFieldFn,
    closed_form: Option<ClosedFormFn>,
    jacobian: Option<VectorFieldFn>,
    domain: Domain,
    tol: Tolerance,
}

impl fmt::Debug for Flow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Flow")
            .field("dim", &self.dim)
            .field("closed_form", &self.closed_form.is_some())
            .field("jacobian", &self.jacobian.is_some())
            .field("domain", &self.domain)
            .finish()
    }
}

impl Flow {
    pub fn new(dim: usize, rhs: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        Self {
            dim,
            rhs: Arc::new(rhs),
            closed_form: None,
            jacobian: None,
            domain: Domain::unbounded(dim),
            tol: Tolerance::default(),
        }
    }

    /// `x' = 0`.
    pub fn frozen(dim: usize) -> Self {
        Self::new(dim, |_, d| d.fill(0.0)).with_closed_form(|_, x, out| out.copy_from_slice(x))
    }

    /// One-dimensional flow `x' = g(x)`.
    pub fn scalar(g: ScalarField) -> Self {
        let g2 = g.clone();
        Self::new(1, move |x, d| d[0] = g.eval(x[0]))
            .with_jacobian(move |x, j| j[0] = g2.derivative(x[0]))
    }

    /// Closed-form solution `(t, x0) ↦ π_t x0`.
    pub fn with_closed_form(mut self, f: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.closed_form = Some(Arc::new(f));
        self
    }

    /// Row-major Jacobian `J[j*d + k] = ∂g_j/∂x_k`.
    pub fn with_jacobian(mut self, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.jacobian = Some(Arc::new(f));
        self
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        assert_eq!(domain.lower.len(), self.dim);
        self.domain = domain;
        self
    }

    pub fn with_tolerance(mut self, tol: Tolerance) -> Self {
        self.tol = tol;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn tolerance(&self) -> Tolerance {
        self.tol
    }

    pub fn has_closed_form(&self) -> bool {
        self.closed_form.is_some()
    }

    pub fn rhs_into(&self, x: &[f64], out: &mut [f64]) {
        (self.rhs)(x, out)
    }

    pub fn rhs(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        (self.rhs)(x, &mut out);
        out
    }

    /// Jacobian at `x`, analytic when supplied, else central differences.
    pub fn jacobian(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut jac = vec![0.0; d * d];
        if let Some(j) = &self.jacobian {
            j(x, &mut jac);
            return jac;
        }
        let mut xp = x.to_vec();
        let mut fp = vec![0.0; d];
        let mut fm = vec![0.0; d];
        for k in 0..d {
            let h = 1e-6 * (1.0 + x[k].abs());
            xp[k] = x[k] + h;
            (self.rhs)(&xp, &mut fp);
            xp[k] = x[k] - h;
            (self.rhs)(&xp, &mut fm);
            xp[k] = x[k];
            for j in 0..d {
                jac[j * d + k] = (fp[j] - fm[j]) / (2.0 * h);
            }
        }
        jac
    }

    fn is_stationary_at(&self, x: &[f64]) -> bool {
        self.rhs(x).iter().all(|&v| v == 0.0)
    }

    fn closed_form_into(&self, t: f64, x0: &[f64], out: &mut [f64]) -> bool {
        match &self.closed_form {
            Some(cf) => {
                cf(t, x0, out);
                true
            }
            None => false,
        }
    }

    /// `π_t x0`.
    pub fn evolve(&self, x0: &[f64], t: f64) -> Result<Vec<f64>> {
        flow_evolve(self, x0, t)
    }
}

/// `π_t x0`, via the closed form when present, else adaptive integration with
/// domain-exit detection.
pub fn flow_evolve(flow: &Flow, x0: &[f64], t: f64) -> Result<Vec<f64>> {
    assert!(t >= 0.0, "negative flow time {t}");
    if t == 0.0 {
        return Ok(x0.to_vec());
    }
    let mut out = vec![0.0; flow.dim];
    if flow.closed_form_into(t, x0, &mut out) {
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { time: t });
        }
        if !flow.domain.contains(&out) {
            let exit = roots::bisect_predicate(
                |s| {
                    let mut y = vec![0.0; flow.dim];
                    flow.closed_form_into(s, x0, &mut y);
                    Ok(!flow.domain.contains(&y))
                },
                0.0,
                t,
                TOL_EVENT,
            )?;
            flow.closed_form_into(exit, x0, &mut out);
            return Err(Error::DomainExit { time: exit, state: out });
        }
        return Ok(out);
    }
    let search = EventSearch::new(flow, x0, &[], &[]);
    let stop = search.run(t)?;
    Ok(stop.state)
}

#[derive(Clone)]
enum Rate {
    Constant(f64),
    State(StateFn),
}

/// Jump intensity `λ(x) ≥ 0`, optionally with a global upper bound used by
/// the thinning sampler.
#[derive(Clone)]
pub struct Hazard {
    rate: Rate,
    upper_bound: Option<f64>,
}

impl fmt::Debug for Hazard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.rate {
            Rate::Constant(c) => write!(f, "Hazard::Constant({c})"),
            Rate::State(_) => write!(f, "Hazard::State(bound={:?})", self.upper_bound),
        }
    }
}

impl Hazard {
    pub fn constant(rate: f64) -> Self {
        assert!(rate >= 0.0, "negative hazard {rate}");
        Self { rate: Rate::Constant(rate), upper_bound: Some(rate) }
    }

    pub fn new(rate: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { rate: Rate::State(Arc::new(rate)), upper_bound: None }
    }

    /// Hazard depending on one coordinate of the state through `field`.
    pub fn on_coordinate(field: ScalarField, coord: usize) -> Self {
        match field {
            ScalarField::Constant(c) => Self::constant(c),
            ScalarField::Function(f) => Self::new(move |x| f(x[coord])),
        }
    }

    pub fn with_upper_bound(mut self, bound: f64) -> Self {
        self.upper_bound = Some(bound);
        self
    }

    #[inline]
    pub fn rate(&self, x: &[f64]) -> f64 {
        match &self.rate {
            Rate::Constant(c) => *c,
            Rate::State(f) => f(x),
        }
    }

    pub fn constant_rate(&self) -> Option<f64> {
        match self.rate {
            Rate::Constant(c) => Some(c),
            Rate::State(_) => None,
        }
    }

    pub fn upper_bound(&self) -> Option<f64> {
        self.upper_bound
    }

    /// Spot-check `0 ≤ rate ≤ upper_bound` at the given states; returns the
    /// first offending state.
    pub fn check_bound<'a>(&self, states: impl IntoIterator<Item = &'a [f64]>) -> Option<Vec<f64>> {
        for x in states {
            let r = self.rate(x);
            let over = self.upper_bound.is_some_and(|b| r > b);
            if !(r >= 0.0) || over {
                return Some(x.to_vec());
            }
        }
        None
    }
}

/// Value of the cumulative hazard `∫_0^t rate(π_s x0) ds` at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CumulativeHazard {
    pub t: f64,
    pub value: f64,
}

/// `∫_0^t rate(π_s x0) ds`, integrated as an extra ODE coordinate.
pub fn hazard_integral(flow: &Flow, hazard: &Hazard, x0: &[f64], t: f64) -> Result<CumulativeHazard> {
    assert!(t >= 0.0);
    if let Some(c) = hazard.constant_rate() {
        // still honour domain exits of the underlying flow
        if !flow.has_closed_form() && t > 0.0 {
            flow_evolve(flow, x0, t)?;
        }
        return Ok(CumulativeHazard { t, value: c * t });
    }
    if t == 0.0 {
        return Ok(CumulativeHazard { t, value: 0.0 });
    }
    let levels = [(hazard, f64::INFINITY)];
    let stop = EventSearch::new(flow, x0, &levels, &[]).run(t)?;
    Ok(CumulativeHazard { t, value: stop.cumulative[0] })
}

/// Jump-time sampling method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplingMethod {
    /// Draw `ξ ~ Exp(1)` and solve `Λ(τ) = ξ`.
    #[default]
    InverseTransform,
    /// Propose from `Exp(upper_bound)` and accept with probability
    /// `rate/upper_bound`.
    Thinning,
}

/// Draw the waiting time to the first jump from `x0`.
pub fn sample_jump_time(
    flow: &Flow,
    hazard: &Hazard,
    x0: &[f64],
    method: SamplingMethod,
    horizon: f64,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    sample_jump(flow, hazard, x0, method, horizon, rng).map(|(t, _)| t)
}

/// As [`sample_jump_time`], also returning the pre-jump state `π_τ x0`.
pub fn sample_jump(
    flow: &Flow,
    hazard: &Hazard,
    x0: &[f64],
    method: SamplingMethod,
    horizon: f64,
    rng: &mut dyn RngCore,
) -> Result<(f64, Vec<f64>)> {
    match method {
        SamplingMethod::InverseTransform => {
            let xi: f64 = Exp1.sample(rng);
            if let Some(c) = hazard.constant_rate() {
                if c <= 0.0 || xi / c > horizon {
                    return Err(Error::HorizonExceeded { horizon, cumulative_hazard: c * horizon });
                }
                let tau = xi / c;
                return Ok((tau, flow_evolve(flow, x0, tau)?));
            }
            if hazard.rate(x0) == 0.0 && flow.is_stationary_at(x0) {
                return Err(Error::HorizonExceeded { horizon, cumulative_hazard: 0.0 });
            }
            let levels = [(hazard, xi)];
            let stop = EventSearch::new(flow, x0, &levels, &[]).run(horizon)?;
            match stop.trigger {
                Trigger::Hazard(_) => Ok((stop.time, stop.state)),
                _ => Err(Error::HorizonExceeded { horizon, cumulative_hazard: stop.cumulative[0] }),
            }
        }
        SamplingMethod::Thinning => {
            let bound = hazard.upper_bound().ok_or(Error::MissingBound)?;
            if bound <= 0.0 {
                return Err(Error::HorizonExceeded { horizon, cumulative_hazard: 0.0 });
            }
            let proposal = Exp::new(bound).expect("positive bound");
            let mut t = 0.0;
            let mut x = x0.to_vec();
            loop {
                let dt = proposal.sample(rng);
                if t + dt > horizon {
                    return Err(Error::HorizonExceeded { horizon, cumulative_hazard: f64::NAN });
                }
                x = flow_evolve(flow, &x, dt)?;
                t += dt;
                let u: f64 = rng.random();
                if u * bound < hazard.rate(&x) {
                    return Ok((t, x));
                }
            }
        }
    }
}

/// What stopped an [`EventSearch`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Trigger {
    /// Cumulative hazard `i` reached its level.
    Hazard(usize),
    /// Boundary function `i` changed sign.
    Boundary(usize),
    /// The deadline was reached first.
    Deadline,
}

pub(crate) struct Stop {
    pub time: f64,
    pub state: Vec<f64>,
    pub trigger: Trigger,
    pub cumulative: Vec<f64>,
}

/// Integrates a flow together with cumulative hazards and watches for the
/// first of: a hazard reaching its level, a boundary function changing sign,
/// the flow leaving its domain, or the deadline.
pub(crate) struct EventSearch<'a> {
    flow: &'a Flow,
    x0: &'a [f64],
    hazards: &'a [(&'a Hazard, f64)],
    boundaries: &'a [StateFn],
}

impl<'a> EventSearch<'a> {
    pub fn new(flow: &'a Flow, x0: &'a [f64], hazards: &'a [(&'a Hazard, f64)], boundaries: &'a [StateFn]) -> Self {
        Self { flow, x0, hazards, boundaries }
    }

    fn augmented_len(&self) -> usize {
        let m = self.hazards.len();
        if self.flow.has_closed_form() { m } else { self.flow.dim + m }
    }

    fn initial(&self) -> Vec<f64> {
        let mut y = vec![0.0; self.augmented_len()];
        if !self.flow.has_closed_form() {
            y[..self.flow.dim].copy_from_slice(self.x0);
        }
        y
    }

    fn rhs(&self) -> impl FnMut(f64, &[f64], &mut [f64]) + '_ {
        let d = self.flow.dim;
        let mut xbuf = vec![0.0; d];
        move |t, y, dy| {
            let (x, off): (&[f64], usize) = match &self.flow.closed_form {
                Some(cf) => {
                    cf(t, self.x0, &mut xbuf);
                    (&xbuf, 0)
                }
                None => {
                    (self.flow.rhs)(&y[..d], &mut dy[..d]);
                    (&y[..d], d)
                }
            };
            for (j, (hz, _)) in self.hazards.iter().enumerate() {
                dy[off + j] = hz.rate(x);
            }
        }
    }

    fn state(&self, t: f64, y: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.flow.dim];
        if !self.flow.closed_form_into(t, self.x0, &mut x) {
            x.copy_from_slice(&y[..self.flow.dim]);
        }
        x
    }

    fn cumulative<'y>(&self, y: &'y [f64]) -> &'y [f64] {
        let off = if self.flow.has_closed_form() { 0 } else { self.flow.dim };
        &y[off..]
    }

    fn advance(&self, t0: f64, y0: &[f64], t1: f64) -> Result<Vec<f64>> {
        let mut s = Dopri5::new(self.rhs(), t0, y0, self.flow.tol);
        s.advance_to(t1)?;
        Ok(s.y().to_vec())
    }

    /// Which condition holds at `(t, y)`, in priority order boundaries,
    /// domain exit, hazards.
    fn fired(&self, t: f64, y: &[f64], signs: &[f64]) -> Option<Fired> {
        let x = self.state(t, y);
        for (k, h) in self.boundaries.iter().enumerate() {
            let v = h(&x);
            if signs[k] != 0.0 && (v == 0.0 || v.signum() != signs[k]) {
                return Some(Fired::Boundary(k));
            }
        }
        if !self.flow.domain.contains(&x) {
            return Some(Fired::Exit);
        }
        let cum = self.cumulative(y);
        for (j, (_, level)) in self.hazards.iter().enumerate() {
            if cum[j] >= *level {
                return Some(Fired::Hazard(j));
            }
        }
        None
    }

    /// Upper end, within `TOL_EVENT`, of the first level crossing of the
    /// cumulative hazards inside the step `[t0, t1]`, found on the step
    /// interpolant. Cumulative hazards are nondecreasing, so each crossing
    /// is a simple root.
    fn hazard_crossing(&self, t0: f64, t1: f64, y1: &[f64], interp: impl Fn(f64, &mut [f64])) -> Option<f64> {
        let mut buf = vec![0.0; y1.len()];
        let mut first = t1;
        for (j, (_, level)) in self.hazards.iter().enumerate() {
            if self.cumulative(y1)[j] < *level {
                continue;
            }
            let gap = |s: f64| {
                interp(s, &mut buf);
                self.cumulative(&buf)[j] - level
            };
            let root = roots::brent(gap, t0, t1, 0.25 * TOL_EVENT).ok()?;
            first = first.min(root);
        }
        Some((first + 0.5 * TOL_EVENT).min(t1))
    }

    pub fn run(&self, deadline: f64) -> Result<Stop> {
        let y0 = self.initial();
        let x0 = self.x0;
        let mut signs: Vec<f64> = self.boundaries.iter().map(|h| h(x0)).map(f64::signum).collect();
        for s in signs.iter_mut() {
            if *s == 0.0 || s.is_nan() {
                *s = 0.0;
            }
        }
        let watch_nothing = self.hazards.is_empty() && self.boundaries.is_empty();
        if watch_nothing && self.flow.has_closed_form() {
            let mut x = vec![0.0; self.flow.dim];
            self.flow.closed_form_into(deadline, x0, &mut x);
            return Ok(Stop { time: deadline, state: x, trigger: Trigger::Deadline, cumulative: vec![] });
        }
        if deadline <= 0.0 {
            return Ok(Stop { time: 0.0, state: x0.to_vec(), trigger: Trigger::Deadline, cumulative: y0.clone() });
        }

        let mut stepper = Dopri5::new(self.rhs(), 0.0, &y0, self.flow.tol);
        let mut t_prev = 0.0;
        let mut y_prev = y0;
        loop {
            let t = stepper.step(deadline)?;
            let y = stepper.y().to_vec();
            if self.fired(t, &y, &signs).is_some() {
                // Locate the earliest time some condition holds.
                let holds = |s: f64| -> Result<bool> {
                    let ys = self.advance(t_prev, &y_prev, s)?;
                    Ok(self.fired(s, &ys, &signs).is_some())
                };
                let mut located = None;
                if self.boundaries.is_empty() && matches!(self.fired(t, &y, &signs), Some(Fired::Hazard(_))) {
                    // root of the interpolant, confirmed on the integrated path
                    if let Some(hi) = self.hazard_crossing(t_prev, t, &y, |s, out| stepper.dense(s, out)) {
                        let y_hi = if hi == t { y.clone() } else { self.advance(t_prev, &y_prev, hi)? };
                        if self.fired(hi, &y_hi, &signs).is_some() {
                            located = Some((hi, y_hi));
                        }
                    }
                }
                let (tau, y_tau) = match located {
                    Some(found) => found,
                    None => {
                        let tau = roots::bisect_predicate(holds, t_prev, t, TOL_EVENT)?;
                        let y_tau = if tau == t { y } else { self.advance(t_prev, &y_prev, tau)? };
                        (tau, y_tau)
                    }
                };
                let state = self.state(tau, &y_tau);
                let cumulative = self.cumulative(&y_tau).to_vec();
                let trigger = match self.fired(tau, &y_tau, &signs) {
                    Some(Fired::Boundary(k)) => Trigger::Boundary(k),
                    Some(Fired::Hazard(j)) => Trigger::Hazard(j),
                    Some(Fired::Exit) => return Err(Error::DomainExit { time: tau, state }),
                    None => unreachable!("bisection returns a point where a condition holds"),
                };
                return Ok(Stop { time: tau, state, trigger, cumulative });
            }
            // boundary functions that started at zero take their sign from
            // the first step away
            for (k, h) in self.boundaries.iter().enumerate() {
                if signs[k] == 0.0 {
                    let v = h(&self.state(t, &y));
                    if v != 0.0 {
                        signs[k] = v.signum();
                    }
                }
            }
            if t >= deadline {
                let state = self.state(t, &y);
                let cumulative = self.cumulative(&y).to_vec();
                return Ok(Stop { time: t, state, trigger: Trigger::Deadline, cumulative });
            }
            t_prev = t;
            y_prev = y;
        }
    }
}

enum Fired {
    Boundary(usize),
    Exit,
    Hazard(usize),
}

/// `Q(x) = ∫_0^x φ(r)/g(r) dr` and its inverse.
///
/// `Q` is nondecreasing, so `Q⁻¹` is found by bracketing followed by a
/// safeguarded Newton iteration with `Q' = φ/g`.
#[derive(Clone, Debug)]
pub struct QTransform {
    g: ScalarField,
    phi: ScalarField,
    opts: QuadOptions,
}

impl QTransform {
    pub fn new(g: ScalarField, phi: ScalarField) -> Self {
        Self { g, phi, opts: QuadOptions::default() }
    }

    fn density(&self, r: f64) -> f64 {
        self.phi.eval(r) / self.g.eval(r)
    }

    fn segment(&self, a: f64, b: f64) -> Result<f64> {
        quad::integrate(|r| self.density(r), a, b, self.opts)
    }

    /// `Q(x)`; fails with [`Error::DivergentIntegral`] when `φ/g` is not
    /// integrable at 0.
    pub fn value(&self, x: f64) -> Result<f64> {
        assert!(x > 0.0, "Q is defined for x > 0");
        let probe = quad::probe_left_endpoint(|r| self.density(r), x, self.opts)?;
        probe.value.ok_or(Error::DivergentIntegral { exponent: probe.exponent })
    }

    /// `Q⁻¹(Q(x) + dq)` for `dq ≥ 0`, computed from `x` without evaluating
    /// `Q(x)` itself.
    pub fn advance(&self, x: f64, dq: f64) -> Result<f64> {
        assert!(dq >= 0.0);
        if dq == 0.0 {
            return Ok(x);
        }
        // bracket [lo, hi] with ∫_x^lo < dq ≤ ∫_x^hi
        let mut lo = x;
        let mut acc_lo = 0.0;
        let d0 = self.density(x);
        let mut step = if d0 > 0.0 { dq / d0 } else { 1e-3 * (1.0 + x) };
        // residuals below a few ulps of dq are as good as zero
        let negligible = |f: f64| f.abs() <= 8.0 * f64::EPSILON * dq;
        let mut hi = loop {
            let cand = lo + step;
            let acc = acc_lo + self.segment(lo, cand)?;
            if negligible(acc - dq) {
                return Ok(cand);
            }
            if acc >= dq {
                break cand;
            }
            lo = cand;
            acc_lo = acc;
            step *= 2.0;
            if lo > 1e15 {
                return Err(Error::NoBracket { lower: x, upper: lo });
            }
        };
        // Newton–bisection, anchored at lo with known ∫_x^lo = acc_lo.
        let mut y = lo + (hi - lo) * 0.5;
        for _ in 0..100 {
            let seg = self.segment(lo, y)?;
            let f = acc_lo + seg - dq;
            if negligible(f) {
                return Ok(y);
            }
            if f >= 0.0 {
                hi = y;
            } else {
                acc_lo += seg;
                lo = y;
            }
            let slope = self.density(y);
            let mut next = if slope > 0.0 && slope.is_finite() { y - f / slope } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - y).abs() <= 1e-14 * (1.0 + y.abs()) || hi - lo <= 1e-14 * (1.0 + hi.abs()) {
                return Ok(next);
            }
            y = next;
        }
        Ok(y)
    }

    /// `Q⁻¹(q)`.
    pub fn inverse(&self, q: f64) -> Result<f64> {
        assert!(q >= 0.0);
        let anchor = 1.0;
        let q_anchor = self.value(anchor)?;
        if q >= q_anchor {
            return self.advance(anchor, q - q_anchor);
        }
        let target = q_anchor - q;
        roots::brent(
            |y| {
                if y <= 0.0 {
                    return q_anchor - target;
                }
                self.segment(y, anchor).unwrap_or(f64::NAN) - target
            },
            0.0,
            anchor,
            1e-14,
        )
    }
}
