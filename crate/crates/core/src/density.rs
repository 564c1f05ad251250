//! First-order finite-volume solvers for the forward (Fokker–Planck type)
//! equations: pure transport, switching transport, the single-phase cell
//! cycle and the two-phase cell cycle.
//!
//! All schemes are upwind and positivity preserving under their step-size
//! conditions. Mass leaving through the truncation boundary is accumulated in
//! `outflow`, so `mass + outflow` is conserved; every step records the
//! conservation defect and the smallest value seen.

use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::process::fmt_f64;

const CFL_TRANSPORT: f64 = 0.9;
const CFL_RATE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid1D {
    x_min: f64,
    x_max: f64,
    n: usize,
    dyadic: bool,
}

impl Grid1D {
    pub fn new(x_min: f64, x_max: f64, n: usize) -> Result<Self> {
        if n < 8 {
            return Err(Error::InvalidGrid(format!("n >= 8 (got {n})")));
        }
        if !(x_min < x_max) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::InvalidGrid(format!("finite x_min < x_max (got {x_min}, {x_max})")));
        }
        Ok(Self { x_min, x_max, n, dyadic: false })
    }

    /// Grid on `[0, x_max]` with `n` even, so `x ↦ 2x` maps the boundaries
    /// of the first `n/2` cells exactly onto boundaries.
    pub fn dyadic(x_max: f64, n: usize) -> Result<Self> {
        if n % 2 != 0 {
            return Err(Error::GridNotDyadic(format!("n must be even (got {n})")));
        }
        Ok(Self { dyadic: true, ..Self::new(0.0, x_max, n)? })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_dyadic(&self) -> bool {
        self.dyadic
    }

    pub fn h(&self) -> f64 {
        (self.x_max - self.x_min) / self.n as f64
    }

    pub fn edge(&self, i: usize) -> f64 {
        self.x_min + self.h() * i as f64
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.n).map(|i| self.edge(i)).collect()
    }

    pub fn center(&self, i: usize) -> f64 {
        self.x_min + self.h() * (i as f64 + 0.5)
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.center(i)).collect()
    }

    /// Cell index containing `x`, `None` outside `[x_min, x_max]`.
    pub fn locate(&self, x: f64) -> Option<usize> {
        if !(x >= self.x_min && x <= self.x_max) {
            return None;
        }
        Some((((x - self.x_min) / self.h()) as usize).min(self.n - 1))
    }

    /// Cell averages of `f` (5-point Gauss–Legendre per cell).
    pub fn project(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        const NODES: [f64; 5] = [0.0, -0.538_469_310_105_683_1, 0.538_469_310_105_683_1, -0.906_179_845_938_664, 0.906_179_845_938_664];
        const WEIGHTS: [f64; 5] =
            [0.568_888_888_888_888_9, 0.478_628_670_499_366_5, 0.478_628_670_499_366_5, 0.236_926_885_056_189_1, 0.236_926_885_056_189_1];
        let half = 0.5 * self.h();
        (0..self.n)
            .map(|i| {
                let c = self.center(i);
                NODES.iter().zip(WEIGHTS).map(|(n, w)| 0.5 * w * f(c + half * n)).sum()
            })
            .collect()
    }

    pub fn integral(&self, values: &[f64]) -> f64 {
        values.iter().sum::<f64>() * self.h()
    }
}

/// Per-regime cell averages on a common grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityGrid {
    pub grid: Grid1D,
    pub values: Vec<Vec<f64>>,
    pub time: f64,
    /// Cumulative mass lost through the boundary.
    pub outflow: f64,
    pub initial_mass: f64,
    /// Largest `|mass + outflow − initial_mass|` over all steps.
    pub max_mass_defect: f64,
    /// Smallest cell value over all steps.
    pub min_value: f64,
}

impl DensityGrid {
    pub fn new(grid: Grid1D, values: Vec<Vec<f64>>) -> Result<Self> {
        for v in &values {
            if v.len() != grid.n() {
                return Err(Error::GridMismatch(format!("{} values for {} cells", v.len(), grid.n())));
            }
            if v.iter().any(|&u| !(u >= 0.0) || !u.is_finite()) {
                return Err(Error::InvalidGrid("initial density must be finite and nonnegative".into()));
            }
        }
        let mut d = Self { grid, values, time: 0.0, outflow: 0.0, initial_mass: 0.0, max_mass_defect: 0.0, min_value: f64::INFINITY };
        d.initial_mass = d.mass();
        d.min_value = d.values.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
        Ok(d)
    }

    pub fn single(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        Self::new(grid, vec![values])
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().map(|v| self.grid.integral(v)).sum()
    }

    pub fn regime_mass(&self, regime: usize) -> f64 {
        self.grid.integral(&self.values[regime])
    }

    /// `Σ_regimes ∫_{x_min}^{x_min+ε}` (whole cells only).
    pub fn mass_below(&self, eps: f64) -> f64 {
        let h = self.grid.h();
        let cells = ((eps / h) + 1e-9).floor() as usize;
        self.values.iter().map(|v| v[..cells.min(v.len())].iter().sum::<f64>() * h).sum()
    }

    /// `Σ |u − v|·h` over all regimes.
    pub fn l1_distance(&self, other: &DensityGrid) -> Result<f64> {
        if self.grid != other.grid || self.values.len() != other.values.len() {
            return Err(Error::GridMismatch("density grids differ".into()));
        }
        let h = self.grid.h();
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() * h)
            .sum())
    }

    fn record_step(&mut self) {
        let defect = (self.mass() + self.outflow - self.initial_mass).abs();
        self.max_mass_defect = self.max_mass_defect.max(defect);
        let lo = self.values.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
        self.min_value = self.min_value.min(lo);
        debug_assert!(lo >= 0.0, "negative density {lo}");
    }

    /// CSV rows `t,regime,cell_center,value`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        for (r, vals) in self.values.iter().enumerate() {
            for (i, v) in vals.iter().enumerate() {
                writeln!(out, "{},{r},{},{}", fmt_f64(self.time), fmt_f64(self.grid.center(i)), fmt_f64(*v))?;
            }
        }
        Ok(())
    }

    pub const CSV_HEADER: &'static str = "t,regime,cell_center,value";
}

/// Upwind transport `∂u/∂t = −∂(g u)/∂x` with face velocities fixed at
/// construction.
#[derive(Clone, Debug)]
struct Upwind {
    faces: Vec<f64>,
    ratio: f64,
}

impl Upwind {
    fn new(grid: &Grid1D, g: &ScalarField, dt: f64) -> Result<Self> {
        let faces: Vec<f64> = grid.edges().iter().map(|&x| g.eval(x)).collect();
        if let Some(bad) = faces.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid(format!("velocity not finite on the grid ({bad})")));
        }
        let ratio = dt / grid.h();
        let vmax = faces.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if ratio * vmax > CFL_TRANSPORT {
            return Err(Error::CflViolation { quantity: "dt*max|g|/h".into(), value: ratio * vmax, limit: CFL_TRANSPORT });
        }
        // total fraction leaving any one cell
        let worst = faces.windows(2).map(|w| w[1].max(0.0) + (-w[0]).max(0.0)).fold(0.0, f64::max);
        if ratio * worst > 1.0 {
            return Err(Error::CflViolation { quantity: "dt*outflow/h".into(), value: ratio * worst, limit: 1.0 });
        }
        Ok(Self { faces, ratio })
    }

    /// One step, `ratio` scaled by `frac` for a shortened final step; returns
    /// the mass leaving the domain.
    fn step(&self, u: &mut [f64], flux: &mut Vec<f64>, frac: f64) -> f64 {
        let n = u.len();
        flux.clear();
        flux.resize(n + 1, 0.0);
        // interior faces
        for i in 1..n {
            let v = self.faces[i];
            flux[i] = if v > 0.0 { v * u[i - 1] } else { v * u[i] };
        }
        // boundaries: outflow only
        flux[0] = self.faces[0].min(0.0) * u[0];
        flux[n] = self.faces[n].max(0.0) * u[n - 1];
        let r = self.ratio * frac;
        for i in 0..n {
            u[i] -= r * (flux[i + 1] - flux[i]);
            if u[i] < 0.0 {
                // only roundoff can get here under the CFL checks
                u[i] = 0.0;
            }
        }
        r * (flux[n] - flux[0])
    }
}

fn step_plan(duration: f64, dt: f64) -> (usize, f64) {
    assert!(dt > 0.0 && duration >= 0.0);
    let exact = duration / dt;
    let full = (exact + 1e-9).floor() as usize;
    let rest = (exact - full as f64).max(0.0);
    (full, if rest > 1e-9 { rest } else { 0.0 })
}

/// Stepping interface shared by the 1-D solvers.
pub trait Evolver {
    type State: Clone;

    fn advance(&self, state: &mut Self::State, duration: f64) -> Result<()>;

    fn distance(&self, a: &Self::State, b: &Self::State) -> f64;
}

/// Liouville transport `x' = g(x)`.
#[derive(Clone, Debug)]
pub struct LiouvilleSolver {
    transport: Upwind,
    dt: f64,
}

impl LiouvilleSolver {
    pub fn new(grid: &Grid1D, g: &ScalarField, dt: f64) -> Result<Self> {
        Ok(Self { transport: Upwind::new(grid, g, dt)?, dt })
    }
}

impl Evolver for LiouvilleSolver {
    type State = DensityGrid;

    fn advance(&self, state: &mut DensityGrid, duration: f64) -> Result<()> {
        let (full, rest) = step_plan(duration, self.dt);
        let mut flux = Vec::new();
        let steps = (0..full).map(|_| 1.0).chain((rest > 0.0).then_some(rest));
        for frac in steps {
            for v in state.values.iter_mut() {
                state.outflow += self.transport.step(v, &mut flux, frac) * state.grid.h();
            }
            state.time += frac * self.dt;
            state.record_step();
        }
        Ok(())
    }

    fn distance(&self, a: &DensityGrid, b: &DensityGrid) -> f64 {
        a.l1_distance(b).unwrap_or(f64::INFINITY)
    }
}

pub fn evolve_liouville(grid: &Grid1D, g: &ScalarField, f0: Vec<f64>, t_end: f64, dt: f64) -> Result<DensityGrid> {
    let solver = LiouvilleSolver::new(grid, g, dt)?;
    let mut state = DensityGrid::single(grid.clone(), f0)?;
    solver.advance(&mut state, t_end)?;
    Ok(state)
}

/// Two-regime transport with switching `0 → 1` at rate `q₀(x)` and
/// `1 → 0` at rate `q₁(x)`, split into transport and an exact per-cell
/// exchange.
#[derive(Clone, Debug)]
pub struct SwitchingSolver {
    transport: [Upwind; 2],
    q: [Vec<f64>; 2],
    dt: f64,
}

impl SwitchingSolver {
    pub fn new(grid: &Grid1D, g: [&ScalarField; 2], q: [&ScalarField; 2], dt: f64) -> Result<Self> {
        let transport = [Upwind::new(grid, g[0], dt)?, Upwind::new(grid, g[1], dt)?];
        let centers = grid.centers();
        let q: [Vec<f64>; 2] = [centers.iter().map(|&x| q[0].eval(x)).collect(), centers.iter().map(|&x| q[1].eval(x)).collect()];
        let qmax = q.iter().flatten().cloned().fold(0.0, f64::max);
        if q.iter().flatten().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidGrid("switching intensities must be finite and nonnegative on the grid".into()));
        }
        if dt * qmax > CFL_RATE {
            return Err(Error::CflViolation { quantity: "dt*max q".into(), value: dt * qmax, limit: CFL_RATE });
        }
        Ok(Self { transport, q, dt })
    }

    fn exchange(&self, state: &mut DensityGrid, dt: f64) {
        let (lo, hi) = state.values.split_at_mut(1);
        let (u0, u1) = (&mut lo[0], &mut hi[0]);
        for i in 0..u0.len() {
            let (a, b) = (self.q[0][i], self.q[1][i]);
            let s = a + b;
            if s == 0.0 {
                continue;
            }
            let m = u0[i] + u1[i];
            let eq0 = b * m / s;
            let new0 = eq0 + (u0[i] - eq0) * (-s * dt).exp();
            u0[i] = new0.clamp(0.0, m);
            u1[i] = m - u0[i];
        }
    }
}

impl Evolver for SwitchingSolver {
    type State = DensityGrid;

    fn advance(&self, state: &mut DensityGrid, duration: f64) -> Result<()> {
        if state.values.len() != 2 {
            return Err(Error::GridMismatch("switching solver needs two regimes".into()));
        }
        let (full, rest) = step_plan(duration, self.dt);
        let mut flux = Vec::new();
        let h = state.grid.h();
        for frac in (0..full).map(|_| 1.0).chain((rest > 0.0).then_some(rest)) {
            for (r, tr) in self.transport.iter().enumerate() {
                state.outflow += tr.step(&mut state.values[r], &mut flux, frac) * h;
            }
            self.exchange(state, frac * self.dt);
            state.time += frac * self.dt;
            state.record_step();
        }
        Ok(())
    }

    fn distance(&self, a: &DensityGrid, b: &DensityGrid) -> f64 {
        a.l1_distance(b).unwrap_or(f64::INFINITY)
    }
}

pub fn evolve_switching(
    grid: &Grid1D,
    g: [&ScalarField; 2],
    q: [&ScalarField; 2],
    f0: [Vec<f64>; 2],
    t_end: f64,
    dt: f64,
) -> Result<DensityGrid> {
    let solver = SwitchingSolver::new(grid, g, q, dt)?;
    let [a, b] = f0;
    let mut state = DensityGrid::new(grid.clone(), vec![a, b])?;
    solver.advance(&mut state, t_end)?;
    Ok(state)
}

/// `out_i = u_{2i} + u_{2i+1}` for `i < n/2`, zero above: the cell averages
/// of `2u(2x)` on a dyadic grid.
fn dyadic_gain(u: &[f64], out: &mut [f64]) {
    let n = u.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = if 2 * i + 1 < n { u[2 * i] + u[2 * i + 1] } else { 0.0 };
    }
}

/// Single-phase cell cycle: transport along `g`, division at rate `φ(x)`
/// sending `x → x/2`.
#[derive(Clone, Debug)]
pub struct CellCycleSolver {
    transport: Upwind,
    phi: Vec<f64>,
    dt: f64,
}

impl CellCycleSolver {
    pub fn new(grid: &Grid1D, g: &ScalarField, phi: &ScalarField, dt: f64) -> Result<Self> {
        if !grid.is_dyadic() {
            return Err(Error::GridNotDyadic("cell-cycle solver needs a dyadic grid".into()));
        }
        let phi: Vec<f64> = grid.centers().iter().map(|&x| phi.eval(x)).collect();
        if phi.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidGrid("division rate must be finite and nonnegative on the grid".into()));
        }
        let pmax = phi.iter().cloned().fold(0.0, f64::max);
        if dt * pmax > CFL_RATE {
            return Err(Error::CflViolation { quantity: "dt*max phi".into(), value: dt * pmax, limit: CFL_RATE });
        }
        Ok(Self { transport: Upwind::new(grid, g, dt)?, phi, dt })
    }
}

impl Evolver for CellCycleSolver {
    type State = DensityGrid;

    fn advance(&self, state: &mut DensityGrid, duration: f64) -> Result<()> {
        let (full, rest) = step_plan(duration, self.dt);
        let mut flux = Vec::new();
        let h = state.grid.h();
        let n = state.grid.n();
        let mut rate_mass = vec![0.0; n];
        let mut gain = vec![0.0; n];
        for frac in (0..full).map(|_| 1.0).chain((rest > 0.0).then_some(rest)) {
            let dt = frac * self.dt;
            let u = &mut state.values[0];
            state.outflow += self.transport.step(u, &mut flux, frac) * h;
            for i in 0..n {
                rate_mass[i] = self.phi[i] * u[i];
            }
            dyadic_gain(&rate_mass, &mut gain);
            for i in 0..n {
                u[i] += dt * (gain[i] - rate_mass[i]);
            }
            state.time += dt;
            state.record_step();
        }
        Ok(())
    }

    fn distance(&self, a: &DensityGrid, b: &DensityGrid) -> f64 {
        a.l1_distance(b).unwrap_or(f64::INFINITY)
    }
}

pub fn evolve_cell_cycle(
    grid: &Grid1D,
    g: &ScalarField,
    phi: &ScalarField,
    f0: Vec<f64>,
    t_end: f64,
    dt: f64,
) -> Result<DensityGrid> {
    let solver = CellCycleSolver::new(grid, g, phi, dt)?;
    let mut state = DensityGrid::single(grid.clone(), f0)?;
    solver.advance(&mut state, t_end)?;
    Ok(state)
}

/// Densities of the two-phase cell cycle. Phase B is stored in age classes
/// of width `dt`; class `k` holds cells with age in `[k·dt, (k+1)·dt)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoPhaseDensity {
    pub grid: Grid1D,
    /// Output grid for the age variable on `[0, t_B]`.
    pub age_grid: Grid1D,
    pub phase_a: Vec<f64>,
    pub classes: Vec<Vec<f64>>,
    pub dt: f64,
    pub time: f64,
    pub outflow: f64,
    pub initial_mass: f64,
    pub max_mass_defect: f64,
    pub min_value: f64,
}

impl TwoPhaseDensity {
    pub fn mass_a(&self) -> f64 {
        self.grid.integral(&self.phase_a)
    }

    pub fn mass_b(&self) -> f64 {
        self.classes.iter().map(|c| self.grid.integral(c)).sum()
    }

    pub fn mass(&self) -> f64 {
        self.mass_a() + self.mass_b()
    }

    /// Size density of phase B, integrated over age.
    pub fn phase_b_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.n()];
        for c in &self.classes {
            for (o, v) in out.iter_mut().zip(c) {
                *o += v;
            }
        }
        out
    }

    /// Joint density of phase B on the `(x, age)` output grid, indexed
    /// `[age cell][x cell]`.
    pub fn phase_b_joint(&self) -> Vec<Vec<f64>> {
        let per_cell = self.classes.len() / self.age_grid.n();
        let dy = self.age_grid.h();
        self.classes
            .chunks(per_cell)
            .map(|chunk| {
                let mut acc = vec![0.0; self.grid.n()];
                for c in chunk {
                    for (a, v) in acc.iter_mut().zip(c) {
                        *a += v / dy;
                    }
                }
                acc
            })
            .collect()
    }

    /// Both phases as size marginals.
    pub fn marginals(&self) -> DensityGrid {
        DensityGrid {
            grid: self.grid.clone(),
            values: vec![self.phase_a.clone(), self.phase_b_marginal()],
            time: self.time,
            outflow: self.outflow,
            initial_mass: self.initial_mass,
            max_mass_defect: self.max_mass_defect,
            min_value: self.min_value,
        }
    }

    fn record_step(&mut self) {
        let defect = (self.mass() + self.outflow - self.initial_mass).abs();
        self.max_mass_defect = self.max_mass_defect.max(defect);
        let lo = self.phase_a.iter().chain(self.classes.iter().flatten()).cloned().fold(f64::INFINITY, f64::min);
        self.min_value = self.min_value.min(lo);
        debug_assert!(lo >= 0.0, "negative density {lo}");
    }

    /// CSV rows `t,regime,cell_center,age_center,value`; phase A rows leave
    /// the age column empty.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        let t = fmt_f64(self.time);
        for (i, v) in self.phase_a.iter().enumerate() {
            writeln!(out, "{t},0,{},,{}", fmt_f64(self.grid.center(i)), fmt_f64(*v))?;
        }
        for (k, row) in self.phase_b_joint().iter().enumerate() {
            let y = fmt_f64(self.age_grid.center(k));
            for (i, v) in row.iter().enumerate() {
                writeln!(out, "{t},1,{},{y},{}", fmt_f64(self.grid.center(i)), fmt_f64(*v))?;
            }
        }
        Ok(())
    }

    pub const CSV_HEADER: &'static str = "t,regime,cell_center,age_center,value";
}

/// Two-phase cell cycle: phase A transports along `g` and enters phase B
/// at rate `φ(x)`; phase B transports along `g` while ageing at unit speed,
/// and cells reaching age `t_B` divide into phase A at half size.
#[derive(Clone, Debug)]
pub struct TwoPhaseSolver {
    transport: Upwind,
    entry: Vec<f64>,
    age_grid: Grid1D,
    classes: usize,
    dt: f64,
}

impl TwoPhaseSolver {
    /// `n_age` output cells on `[0, t_B]`; `dt` must divide the age-cell
    /// width.
    pub fn new(grid: &Grid1D, n_age: usize, g: &ScalarField, phi: &ScalarField, t_b: f64, dt: f64) -> Result<Self> {
        if !grid.is_dyadic() {
            return Err(Error::GridNotDyadic("two-phase solver needs a dyadic size grid".into()));
        }
        if !(t_b > 0.0) {
            return Err(Error::invalid("cell_cycle_2p", format!("t_B > 0 (got {t_b})")));
        }
        if n_age == 0 {
            return Err(Error::InvalidGrid("at least one age cell".into()));
        }
        // the age grid is an output binning, exempt from the size-grid minimum
        let age_grid = Grid1D { x_min: 0.0, x_max: t_b, n: n_age, dyadic: false };
        let dy = age_grid.h();
        let per_cell = (dy / dt).round();
        if per_cell < 1.0 || (per_cell * dt - dy).abs() > 1e-9 * dy {
            return Err(Error::DtMisaligned { dt, dy });
        }
        let entry: Vec<f64> = grid
            .centers()
            .iter()
            .map(|&x| {
                let p = phi.eval(x);
                // exact exponential loss over one step
                -(-p * dt).exp_m1()
            })
            .collect();
        if entry.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidGrid("entry rate must be finite and nonnegative on the grid".into()));
        }
        Ok(Self {
            transport: Upwind::new(grid, g, dt)?,
            entry,
            classes: per_cell as usize * n_age,
            age_grid,
            dt,
        })
    }

    /// Initial state with phase A density `f_a` and an empty phase B.
    pub fn initial(&self, grid: &Grid1D, f_a: Vec<f64>) -> Result<TwoPhaseDensity> {
        if f_a.len() != grid.n() {
            return Err(Error::GridMismatch(format!("{} values for {} cells", f_a.len(), grid.n())));
        }
        let mut d = TwoPhaseDensity {
            grid: grid.clone(),
            age_grid: self.age_grid.clone(),
            classes: vec![vec![0.0; grid.n()]; self.classes],
            phase_a: f_a,
            dt: self.dt,
            time: 0.0,
            outflow: 0.0,
            initial_mass: 0.0,
            max_mass_defect: 0.0,
            min_value: 0.0,
        };
        d.initial_mass = d.mass();
        d.min_value = d.phase_a.iter().cloned().fold(f64::INFINITY, f64::min);
        Ok(d)
    }
}

impl Evolver for TwoPhaseSolver {
    type State = TwoPhaseDensity;

    fn advance(&self, s: &mut TwoPhaseDensity, duration: f64) -> Result<()> {
        let steps = (duration / self.dt).round();
        if (steps * self.dt - duration).abs() > 1e-9 * duration.max(1.0) {
            return Err(Error::DtMisaligned { dt: self.dt, dy: duration });
        }
        let h = s.grid.h();
        let n = s.grid.n();
        let mut flux = Vec::new();
        let mut gain = vec![0.0; n];
        for _ in 0..steps as usize {
            s.outflow += self.transport.step(&mut s.phase_a, &mut flux, 1.0) * h;
            for c in s.classes.iter_mut() {
                s.outflow += self.transport.step(c, &mut flux, 1.0) * h;
            }
            // cells completing phase B divide; the vacated slot receives the
            // new entrants from phase A
            let mut slot = s.classes.pop().expect("at least one age class");
            dyadic_gain(&slot, &mut gain);
            for i in 0..n {
                let enter = self.entry[i] * s.phase_a[i];
                slot[i] = enter;
                s.phase_a[i] += gain[i] - enter;
            }
            s.classes.insert(0, slot);
            s.time += self.dt;
            s.record_step();
        }
        Ok(())
    }

    fn distance(&self, a: &TwoPhaseDensity, b: &TwoPhaseDensity) -> f64 {
        let h = a.grid.h();
        let da: f64 = a.phase_a.iter().zip(&b.phase_a).map(|(x, y)| (x - y).abs()).sum();
        let db: f64 = a.classes.iter().flatten().zip(b.classes.iter().flatten()).map(|(x, y)| (x - y).abs()).sum();
        (da + db) * h
    }
}

#[allow(clippy::too_many_arguments)]
pub fn evolve_two_phase(
    grid: &Grid1D,
    n_age: usize,
    g: &ScalarField,
    phi: &ScalarField,
    t_b: f64,
    f0_a: Vec<f64>,
    t_end: f64,
    dt: f64,
) -> Result<TwoPhaseDensity> {
    let solver = TwoPhaseSolver::new(grid, n_age, g, phi, t_b, dt)?;
    let mut state = solver.initial(grid, f0_a)?;
    solver.advance(&mut state, t_end)?;
    Ok(state)
}

#[derive(Clone, Debug)]
pub struct SteadyState<S> {
    pub state: S,
    pub converged: bool,
    /// Last `‖f(t+Δ) − f(t)‖₁ / Δ`.
    pub residual: f64,
}

/// Advance in chunks of `chunk` until `‖f(t+Δ) − f(t)‖₁ < tol·Δ` or `t_max`.
pub fn steady_state<E: Evolver>(evolver: &E, f0: E::State, chunk: f64, tol: f64, t_max: f64) -> Result<SteadyState<E::State>> {
    assert!(chunk > 0.0);
    let mut state = f0;
    let mut elapsed = 0.0;
    let mut residual = f64::INFINITY;
    while elapsed < t_max - 1e-12 {
        let delta = chunk.min(t_max - elapsed);
        let before = state.clone();
        evolver.advance(&mut state, delta)?;
        elapsed += delta;
        residual = evolver.distance(&before, &state) / delta;
        if residual < tol {
            return Ok(SteadyState { state, converged: true, residual });
        }
    }
    Ok(SteadyState { state, converged: false, residual })
}
