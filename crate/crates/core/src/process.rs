//! Generic PDMP state machine.
//!
//! A [`PdmpModel`] is a list of regimes. In each regime the continuous state
//! follows the regime's [`Flow`] until the first of its competing events:
//! stochastic transitions (a [`Hazard`] plus a [`JumpKernel`]) or
//! deterministic clocks (a fixed delay since regime entry, or the flow
//! hitting a boundary). The kernel receives the left limit `x(t⁻)`.
//!
//! Competing hazards are sampled per cause and minimised; simultaneous events
//! are resolved in favour of clocks, lower index first.

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use rand::RngCore;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{
    flow_evolve, EventSearch, Flow, Hazard, SamplingMethod, StateFn, Trigger, DEFAULT_HORIZON_CAP, TOL_EVENT,
};
use crate::rng::{stream_rng, PathRng};

pub type KernelFn = Arc<dyn Fn(&[f64], usize, &mut dyn RngCore) -> (Vec<f64>, usize) + Send + Sync>;

/// Post-jump law: maps `(x(t⁻), regime, rng)` to `(x(t), regime')`.
#[derive(Clone)]
pub struct JumpKernel {
    sampler: KernelFn,
    description: Option<String>,
}

impl fmt::Debug for JumpKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "JumpKernel({})", self.description.as_deref().unwrap_or("..."))
    }
}

impl JumpKernel {
    pub fn new(f: impl Fn(&[f64], usize, &mut dyn RngCore) -> (Vec<f64>, usize) + Send + Sync + 'static) -> Self {
        Self { sampler: Arc::new(f), description: None }
    }

    /// Deterministic map of the state into regime `target`.
    pub fn map(target: usize, f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self::new(move |x, _, _| (f(x), target))
    }

    /// Keep the state, switch to regime `target`.
    pub fn switch_to(target: usize) -> Self {
        Self::new(move |x, _, _| (x.to_vec(), target)).describe(format!("switch to regime {target}"))
    }

    /// Human-readable description of `P(x, ·)`.
    pub fn describe(mut self, text: impl Into<String>) -> Self {
        self.description = Some(text.into());
        self
    }

    pub fn description(&self) -> Option<&str> {
        self.description.as_deref()
    }

    pub fn apply(&self, x: &[f64], regime: usize, rng: &mut dyn RngCore) -> (Vec<f64>, usize) {
        (self.sampler)(x, regime, rng)
    }
}

/// Stochastic jump cause.
#[derive(Clone, Debug)]
pub struct Transition {
    pub label: String,
    pub hazard: Hazard,
    pub kernel: JumpKernel,
}

#[derive(Clone)]
pub enum ClockKind {
    /// Fires once the process has spent `duration` in the regime.
    FixedDelay(f64),
    /// Fires when `h(x)` changes sign along the flow.
    BoundaryHit(StateFn),
}

impl fmt::Debug for ClockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClockKind::FixedDelay(d) => write!(f, "FixedDelay({d})"),
            ClockKind::BoundaryHit(_) => f.write_str("BoundaryHit(..)"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DeterministicClock {
    pub label: String,
    pub kind: ClockKind,
    pub kernel: JumpKernel,
}

#[derive(Clone, Debug)]
pub struct Regime {
    pub id: usize,
    pub flow: Flow,
    pub transitions: Vec<Transition>,
    pub clocks: Vec<DeterministicClock>,
    pub absorbing: bool,
}

impl Regime {
    pub fn new(id: usize, flow: Flow) -> Self {
        Self { id, flow, transitions: Vec::new(), clocks: Vec::new(), absorbing: false }
    }

    pub fn with_transition(mut self, label: &str, hazard: Hazard, kernel: JumpKernel) -> Self {
        self.transitions.push(Transition { label: label.to_string(), hazard, kernel });
        self
    }

    pub fn with_fixed_delay(mut self, label: &str, duration: f64, kernel: JumpKernel) -> Self {
        assert!(duration > 0.0, "fixed delay must be positive");
        self.clocks.push(DeterministicClock { label: label.to_string(), kind: ClockKind::FixedDelay(duration), kernel });
        self
    }

    pub fn with_boundary(
        mut self,
        label: &str,
        h: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        kernel: JumpKernel,
    ) -> Self {
        self.clocks.push(DeterministicClock {
            label: label.to_string(),
            kind: ClockKind::BoundaryHit(Arc::new(h)),
            kernel,
        });
        self
    }

    pub fn absorbing(mut self) -> Self {
        self.absorbing = true;
        self
    }
}

/// Full process description.
#[derive(Clone, Debug)]
pub struct PdmpModel {
    name: String,
    regimes: Vec<Regime>,
    sampling: SamplingMethod,
    parameters: Vec<(String, f64)>,
}

impl PdmpModel {
    pub fn new(name: &str, regimes: Vec<Regime>) -> Result<Self> {
        if regimes.is_empty() {
            return Err(Error::invalid(name, "at least one regime"));
        }
        let dim = regimes[0].flow.dim();
        for (k, r) in regimes.iter().enumerate() {
            if r.id != k {
                return Err(Error::invalid(name, format!("regime ids must be 0..{}, found {} at {k}", regimes.len(), r.id)));
            }
            if r.flow.dim() != dim {
                return Err(Error::invalid(name, "all regimes share the state dimension"));
            }
            if r.transitions.is_empty() && r.clocks.is_empty() && !r.absorbing {
                return Err(Error::invalid(name, format!("regime {k} has no events and is not declared absorbing")));
            }
        }
        Ok(Self { name: name.to_string(), regimes, sampling: SamplingMethod::default(), parameters: Vec::new() })
    }

    pub fn with_parameters(mut self, params: Vec<(String, f64)>) -> Self {
        self.parameters = params;
        self
    }

    pub fn with_sampling(mut self, method: SamplingMethod) -> Self {
        self.sampling = method;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn regimes(&self) -> &[Regime] {
        &self.regimes
    }

    pub fn regime(&self, id: usize) -> &Regime {
        &self.regimes[id]
    }

    pub fn dim(&self) -> usize {
        self.regimes[0].flow.dim()
    }

    pub fn parameters(&self) -> &[(String, f64)] {
        &self.parameters
    }

    pub fn sampling(&self) -> SamplingMethod {
        self.sampling
    }

    pub fn event_label(&self, regime: usize, kind: EventKind) -> &str {
        let r = &self.regimes[regime];
        match kind {
            EventKind::Transition(i) => &r.transitions[i].label,
            EventKind::Clock(i) => &r.clocks[i].label,
        }
    }
}

/// Position of the process: continuous state, regime and time spent in the
/// current regime (drives fixed-delay clocks).
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessState {
    pub x: Vec<f64>,
    pub regime: usize,
    pub age: f64,
}

impl ProcessState {
    pub fn new(x: Vec<f64>, regime: usize) -> Self {
        Self { x, regime, age: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    Transition(usize),
    Clock(usize),
}

/// A realised jump.
#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    /// Waiting time since the previous state.
    pub dt: f64,
    pub kind: EventKind,
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
    pub regime_pre: usize,
    pub regime_post: usize,
}

#[derive(Clone, Copy)]
enum Owner {
    Cap,
    Clock(usize),
    Transition(usize),
}

fn thinning_time(
    flow: &Flow,
    hazard: &Hazard,
    x0: &[f64],
    cap: f64,
    rng: &mut dyn RngCore,
) -> Result<Option<f64>> {
    match crate::flow::sample_jump_time(flow, hazard, x0, SamplingMethod::Thinning, cap, rng) {
        Ok(t) => Ok(Some(t)),
        Err(Error::HorizonExceeded { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Sample the next event from `state`, looking at most `cap` time units
/// ahead. `Ok(None)` means no event occurs before the cap (or the regime is
/// absorbing); the caller truncates there.
pub fn next_event(model: &PdmpModel, state: &ProcessState, cap: f64, rng: &mut dyn RngCore) -> Result<Option<Event>> {
    let regime = &model.regimes[state.regime];
    let flow = &regime.flow;
    let x = &state.x;

    let mut best_time = cap;
    let mut best = Owner::Cap;
    let mut boundaries: Vec<StateFn> = Vec::new();
    let mut boundary_owner: Vec<usize> = Vec::new();
    for (j, clock) in regime.clocks.iter().enumerate() {
        match &clock.kind {
            ClockKind::FixedDelay(d) => {
                let residual = (d - state.age).max(0.0);
                if residual < best_time {
                    best_time = residual;
                    best = Owner::Clock(j);
                }
            }
            ClockKind::BoundaryHit(h) => {
                boundaries.push(h.clone());
                boundary_owner.push(j);
            }
        }
    }

    let thinning = model.sampling == SamplingMethod::Thinning;
    let mut integrated: Vec<(&Hazard, f64)> = Vec::new();
    let mut integrated_owner: Vec<usize> = Vec::new();
    for (i, tr) in regime.transitions.iter().enumerate() {
        if let Some(c) = tr.hazard.constant_rate() {
            if c > 0.0 {
                let xi: f64 = Exp1.sample(rng);
                let tau = xi / c;
                if tau < best_time {
                    best_time = tau;
                    best = Owner::Transition(i);
                }
            }
        } else if thinning && tr.hazard.upper_bound().is_some() && boundaries.is_empty() {
            if let Some(tau) = thinning_time(flow, &tr.hazard, x, best_time, rng)? {
                if tau < best_time {
                    best_time = tau;
                    best = Owner::Transition(i);
                }
            }
        } else {
            let xi: f64 = Exp1.sample(rng);
            integrated.push((&tr.hazard, xi));
            integrated_owner.push(i);
        }
    }

    let stationary = flow.rhs(x).iter().all(|&v| v == 0.0);
    if stationary && integrated.iter().all(|(h, _)| h.rate(x) == 0.0) && boundaries.is_empty() {
        // trap: nothing changes until a constant-rate or clock event
        integrated.clear();
    }

    let (time, pre, owner) = if integrated.is_empty() && boundaries.is_empty() {
        if let Owner::Cap = best {
            return Ok(None);
        }
        (best_time, flow_evolve(flow, x, best_time)?, best)
    } else {
        let stop = EventSearch::new(flow, x, &integrated, &boundaries).run(best_time)?;
        let owner = match stop.trigger {
            Trigger::Boundary(k) => Owner::Clock(boundary_owner[k]),
            Trigger::Hazard(m) => match best {
                Owner::Clock(_) if (best_time - stop.time).abs() <= TOL_EVENT => best,
                _ => Owner::Transition(integrated_owner[m]),
            },
            Trigger::Deadline => best,
        };
        if let Owner::Cap = owner {
            return Ok(None);
        }
        (stop.time, stop.state, owner)
    };

    let (kind, kernel) = match owner {
        Owner::Clock(j) => (EventKind::Clock(j), &regime.clocks[j].kernel),
        Owner::Transition(i) => (EventKind::Transition(i), &regime.transitions[i].kernel),
        Owner::Cap => unreachable!(),
    };
    let (post, regime_post) = kernel.apply(&pre, state.regime, rng);
    debug_assert!(regime_post < model.regimes.len(), "kernel returned unknown regime {regime_post}");
    debug_assert!(
        model.regimes[regime_post].flow.domain().contains(&post),
        "post-jump state {post:?} outside the domain of regime {regime_post}"
    );
    Ok(Some(Event { dt: time, kind, pre, post, regime_pre: state.regime, regime_post }))
}

/// Limits for a single path.
#[derive(Clone, Copy, Debug)]
pub struct SimOptions {
    pub jump_budget: usize,
    pub event_cap: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { jump_budget: 10_000_000, event_cap: DEFAULT_HORIZON_CAP }
    }
}

/// Receives the pieces of a path as they are generated.
pub trait PathObserver {
    /// The process followed the flow of `state.regime` from `state` at
    /// `t_start` until `t_end` (a jump time, or the horizon when `last`).
    fn segment(&mut self, model: &PdmpModel, t_start: f64, t_end: f64, state: &ProcessState, last: bool) -> Result<()>;

    fn jump(&mut self, _model: &PdmpModel, _t: f64, _event: &Event) {}
}

impl PathObserver for () {
    fn segment(&mut self, _: &PdmpModel, _: f64, _: f64, _: &ProcessState, _: bool) -> Result<()> {
        Ok(())
    }
}

impl ProcessState {
    /// State right after `event`. The regime age restarts on a regime change
    /// or a clock event and keeps running otherwise.
    pub fn after(&self, event: Event) -> ProcessState {
        let reset = event.regime_post != self.regime || matches!(event.kind, EventKind::Clock(_));
        ProcessState {
            x: event.post,
            regime: event.regime_post,
            age: if reset { 0.0 } else { self.age + event.dt },
        }
    }
}

/// End of a simulated path.
#[derive(Clone, Debug, PartialEq)]
pub struct PathEnd {
    pub state: ProcessState,
    pub n_jumps: usize,
}

/// Run one path to `horizon`, streaming segments and jumps to `observer`.
pub fn simulate_path(
    model: &PdmpModel,
    init: ProcessState,
    horizon: f64,
    opts: &SimOptions,
    rng: &mut dyn RngCore,
    observer: &mut dyn PathObserver,
) -> Result<PathEnd> {
    assert!(horizon > 0.0, "horizon must be positive");
    let mut t = 0.0;
    let mut state = init;
    let mut n_jumps = 0usize;
    loop {
        let cap = (horizon - t).min(opts.event_cap);
        match next_event(model, &state, cap, rng)? {
            Some(ev) if t + ev.dt <= horizon => {
                let t_jump = t + ev.dt;
                observer.segment(model, t, t_jump, &state, false)?;
                observer.jump(model, t_jump, &ev);
                n_jumps += 1;
                if n_jumps > opts.jump_budget {
                    return Err(Error::JumpBudgetExceeded { budget: opts.jump_budget, time: t_jump });
                }
                state = state.after(ev);
                t = t_jump;
            }
            _ if horizon - t > opts.event_cap => {
                // nothing within the per-event cap: move on without a jump
                let x = flow_evolve(&model.regimes[state.regime].flow, &state.x, cap)?;
                observer.segment(model, t, t + cap, &state, false)?;
                state = ProcessState { x, regime: state.regime, age: state.age + cap };
                t += cap;
            }
            _ => {
                observer.segment(model, t, horizon, &state, true)?;
                let dt = horizon - t;
                let x = flow_evolve(&model.regimes[state.regime].flow, &state.x, dt)?;
                let end = ProcessState { x, regime: state.regime, age: state.age + dt };
                return Ok(PathEnd { state: end, n_jumps });
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub t_start: f64,
    pub regime: usize,
    pub state: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Jump {
    pub t: f64,
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
    pub regime_pre: usize,
    pub regime_post: usize,
    pub kind: EventKind,
}

/// Recorded path: segments between jumps and the jumps themselves.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Trajectory {
    pub segments: Vec<Segment>,
    pub jumps: Vec<Jump>,
    pub horizon: f64,
    pub final_state: Option<ProcessState>,
}

impl PathObserver for Trajectory {
    fn segment(&mut self, _: &PdmpModel, t_start: f64, _: f64, state: &ProcessState, _: bool) -> Result<()> {
        self.segments.push(Segment { t_start, regime: state.regime, state: state.x.clone() });
        Ok(())
    }

    fn jump(&mut self, _: &PdmpModel, t: f64, ev: &Event) {
        self.jumps.push(Jump {
            t,
            pre: ev.pre.clone(),
            post: ev.post.clone(),
            regime_pre: ev.regime_pre,
            regime_post: ev.regime_post,
            kind: ev.kind,
        });
    }
}

impl Trajectory {
    /// State at time `t` (right-continuous).
    pub fn state_at(&self, model: &PdmpModel, t: f64) -> Result<(Vec<f64>, usize)> {
        let idx = self.segments.partition_point(|s| s.t_start <= t).saturating_sub(1);
        let seg = &self.segments[idx];
        let x = flow_evolve(&model.regime(seg.regime).flow, &seg.state, t - seg.t_start)?;
        Ok((x, seg.regime))
    }

    /// CSV rows `path_id,t,event_kind,regime_pre,regime_post,pre_*,post_*`,
    /// bracketed by `start` and `horizon` rows.
    pub fn write_csv<W: Write>(&self, out: &mut W, model: &PdmpModel, path_id: usize) -> io::Result<()> {
        let fmt_state = |x: &[f64]| x.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",");
        if let Some(first) = self.segments.first() {
            let s = fmt_state(&first.state);
            writeln!(out, "{path_id},{},start,{},{},{s},{s}", fmt_f64(0.0), first.regime, first.regime)?;
        }
        for j in &self.jumps {
            writeln!(
                out,
                "{path_id},{},{},{},{},{},{}",
                fmt_f64(j.t),
                model.event_label(j.regime_pre, j.kind),
                j.regime_pre,
                j.regime_post,
                fmt_state(&j.pre),
                fmt_state(&j.post)
            )?;
        }
        if let Some(end) = &self.final_state {
            let s = fmt_state(&end.x);
            writeln!(out, "{path_id},{},horizon,{},{},{s},{s}", fmt_f64(self.horizon), end.regime, end.regime)?;
        }
        Ok(())
    }

    pub fn csv_header(dim: usize) -> String {
        let mut cols = vec!["path_id", "t", "event_kind", "regime_pre", "regime_post"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        cols.extend((0..dim).map(|i| format!("pre_{i}")));
        cols.extend((0..dim).map(|i| format!("post_{i}")));
        cols.join(",")
    }
}

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Simulate and record a full path.
pub fn simulate_trajectory(
    model: &PdmpModel,
    init: ProcessState,
    horizon: f64,
    opts: &SimOptions,
    rng: &mut dyn RngCore,
) -> Result<Trajectory> {
    let mut traj = Trajectory { horizon, ..Default::default() };
    let end = simulate_path(model, init, horizon, opts, rng, &mut traj)?;
    traj.final_state = Some(end.state);
    Ok(traj)
}

/// State of one path at a requested time.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub regime: usize,
    pub x: Vec<f64>,
}

/// Evaluates the path at sorted snapshot times as segments stream past.
#[derive(Clone, Debug)]
pub struct SnapshotCollector<'a> {
    times: &'a [f64],
    next: usize,
    pub snapshots: Vec<Snapshot>,
}

impl<'a> SnapshotCollector<'a> {
    pub fn new(times: &'a [f64]) -> Self {
        debug_assert!(times.windows(2).all(|w| w[0] <= w[1]), "snapshot times must be sorted");
        Self { times, next: 0, snapshots: Vec::new() }
    }
}

/// Calls `f(t, regime, x)` for every time in `times[*next..]` falling inside
/// the segment; shared by snapshot-style observers.
pub fn visit_times(
    model: &PdmpModel,
    times: &[f64],
    next: &mut usize,
    t_start: f64,
    t_end: f64,
    state: &ProcessState,
    last: bool,
    mut f: impl FnMut(f64, usize, &[f64]),
) -> Result<()> {
    let flow = &model.regime(state.regime).flow;
    while *next < times.len() {
        let s = times[*next];
        let inside = if last { s <= t_end } else { s < t_end };
        if !inside {
            break;
        }
        if s >= t_start {
            let x = flow_evolve(flow, &state.x, s - t_start)?;
            f(s, state.regime, &x);
        }
        *next += 1;
    }
    Ok(())
}

impl PathObserver for SnapshotCollector<'_> {
    fn segment(&mut self, model: &PdmpModel, t_start: f64, t_end: f64, state: &ProcessState, last: bool) -> Result<()> {
        let snaps = &mut self.snapshots;
        visit_times(model, self.times, &mut self.next, t_start, t_end, state, last, |t, regime, x| {
            snaps.push(Snapshot { t, regime, x: x.to_vec() })
        })
    }
}

/// Outcome of one ensemble member.
#[derive(Debug)]
pub struct PathRun<O> {
    pub path_id: usize,
    pub observer: O,
    pub end: Result<PathEnd>,
}

/// Run `n_paths` independent paths in parallel. Path `k` uses stream `k` of
/// the generator keyed by `seed`; its initial state is drawn first from that
/// stream. Output order is by path id, independent of scheduling.
pub fn simulate_ensemble_with<O, I, M>(
    model: &PdmpModel,
    initial: I,
    horizon: f64,
    n_paths: usize,
    seed: u64,
    opts: &SimOptions,
    make_observer: M,
) -> Vec<PathRun<O>>
where
    O: PathObserver + Send,
    I: Fn(&mut PathRng) -> ProcessState + Sync,
    M: Fn(usize) -> O + Sync,
{
    assert!(n_paths >= 1, "n_paths must be at least 1");
    (0..n_paths)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k as u64);
            let init = initial(&mut rng);
            let mut observer = make_observer(k);
            let end = simulate_path(model, init, horizon, opts, &mut rng, &mut observer);
            PathRun { path_id: k, observer, end }
        })
        .collect()
}

/// Final states and snapshots of an ensemble.
#[derive(Debug)]
pub struct EnsembleSummary {
    pub finals: Vec<Result<ProcessState>>,
    pub snapshots: Vec<Vec<Snapshot>>,
}

impl EnsembleSummary {
    pub fn n_failed(&self) -> usize {
        self.finals.iter().filter(|r| r.is_err()).count()
    }

    /// CSV rows `path_id,t_snap,regime,x_*`.
    pub fn write_snapshots_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        for (k, snaps) in self.snapshots.iter().enumerate() {
            for s in snaps {
                let xs = s.x.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",");
                writeln!(out, "{k},{},{},{xs}", fmt_f64(s.t), s.regime)?;
            }
        }
        Ok(())
    }

    pub fn snapshot_header(dim: usize) -> String {
        let mut cols = vec!["path_id".to_string(), "t_snap".into(), "regime".into()];
        cols.extend((0..dim).map(|i| format!("x_{i}")));
        cols.join(",")
    }
}

pub fn simulate_ensemble<I>(
    model: &PdmpModel,
    initial: I,
    horizon: f64,
    n_paths: usize,
    seed: u64,
    snapshot_times: &[f64],
    opts: &SimOptions,
) -> EnsembleSummary
where
    I: Fn(&mut PathRng) -> ProcessState + Sync,
{
    let mut times = snapshot_times.to_vec();
    times.sort_by(f64::total_cmp);
    let runs = simulate_ensemble_with(model, initial, horizon, n_paths, seed, opts, |_| SnapshotCollector::new(&times));
    let mut finals = Vec::with_capacity(n_paths);
    let mut snapshots = Vec::with_capacity(n_paths);
    for run in runs {
        finals.push(run.end.map(|e| e.state));
        snapshots.push(run.observer.snapshots);
    }
    EnsembleSummary { finals, snapshots }
}
