//! The batch commands. Each writes its artifacts into the output directory
//! and returns the JSON report it also stores there.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use pdmp::analysis::{classify, hormander_check, intensity_positivity_check, stationary_density};
use pdmp::density::{
    steady_state, CellCycleSolver, DensityGrid, Evolver, Grid1D, SwitchingSolver, TwoPhaseDensity, TwoPhaseSolver,
};
use pdmp::models::{simulate_population, PopEventKind, PopulationOptions, PopulationRun};
use pdmp::process::{
    fmt_f64, simulate_ensemble_with, Event, PathObserver, PdmpModel, SimOptions, Snapshot, SnapshotCollector,
};
use pdmp::rng::stream_rng;
use pdmp::stats::{empirical_density_regimes, l1_distance, FitReport, FitThresholds, Histogram, OccupationSampler};
use pdmp::{Flow, ProcessState, ScalarField, Trajectory};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::build::{param_field, parse_field, ModelSpec};
use crate::config::{Command, Config, GridConfig, Reference, SimulateConfig};
use crate::error::CliError;
use crate::SCHEMA_VERSION;

pub(crate) struct Out<'a> {
    dir: &'a Path,
    pub files: Vec<PathBuf>,
}

impl<'a> Out<'a> {
    pub(crate) fn new(dir: &'a Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self { dir, files: Vec::new() })
    }

    /// Writes `name` through a buffered writer; `fill` receives the writer.
    pub(crate) fn write(
        &mut self,
        name: &str,
        fill: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    ) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        fill(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(&path, e))?;
        self.files.push(path);
        Ok(())
    }

    pub(crate) fn json(&mut self, name: &str, value: &Value) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).expect("json serialises");
        self.write(name, |w| writeln!(w, "{text}"))
    }

    pub(crate) fn dir(&self) -> &Path {
        self.dir
    }

    pub(crate) fn file_names(&self) -> Vec<String> {
        self.files.iter().filter_map(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()).collect()
    }
}

/// Adds `schema_version`, `command` and `files`, then writes `<command>.json`.
pub(crate) fn finish(out: &mut Out, command: Command, mut report: Value) -> Result<Value, CliError> {
    report["schema_version"] = json!(SCHEMA_VERSION);
    report["command"] = json!(command.name());
    let mut files = out.file_names();
    files.push(format!("{}.json", command.name()));
    report["files"] = json!(files);
    out.json(&format!("{}.json", command.name()), &report)?;
    Ok(report)
}

pub fn run_command(cfg: &Config, out_dir: &Path) -> Result<Value, CliError> {
    let mut out = Out::new(out_dir)?;
    let report = match cfg.command {
        Command::Simulate => simulate(cfg, &mut out)?,
        Command::Stationary => stationary(cfg, &mut out)?,
        Command::Classify => classify_cmd(cfg, &mut out)?,
        Command::Evolve => evolve(cfg, &mut out)?,
        Command::Compare => compare(cfg, &mut out)?,
        Command::Hormander => hormander(cfg, &mut out)?,
        Command::Population => population(cfg, &mut out)?,
        Command::Experiment => crate::experiments::run_experiment(cfg, &mut out)?,
    };
    finish(&mut out, cfg.command, report)
}

fn check_initial(model: &PdmpModel, sim: &SimulateConfig) -> Result<ProcessState, CliError> {
    if sim.initial.x.len() != model.dim() {
        return Err(CliError::config(
            "simulate.initial.x",
            format!("{} has state dimension {} (got {})", model.name(), model.dim(), sim.initial.x.len()),
        ));
    }
    if sim.initial.regime >= model.regimes().len() {
        return Err(CliError::config("simulate.initial.regime", format!("{} has {} regimes", model.name(), model.regimes().len())));
    }
    if !(sim.horizon > 0.0) {
        return Err(CliError::config("simulate.horizon", "must be positive"));
    }
    if sim.n_paths == 0 {
        return Err(CliError::config("simulate.n_paths", "must be at least 1"));
    }
    Ok(ProcessState::new(sim.initial.x.clone(), sim.initial.regime))
}

/// Observer combining the optional outputs of `simulate`.
struct SimObserver<'a> {
    trajectory: Option<Trajectory>,
    snapshots: SnapshotCollector<'a>,
    occupation: Option<OccupationSampler>,
}

impl PathObserver for SimObserver<'_> {
    fn segment(&mut self, model: &PdmpModel, t0: f64, t1: f64, state: &ProcessState, last: bool) -> pdmp::Result<()> {
        if let Some(t) = &mut self.trajectory {
            t.segment(model, t0, t1, state, last)?;
        }
        self.snapshots.segment(model, t0, t1, state, last)?;
        if let Some(o) = &mut self.occupation {
            o.segment(model, t0, t1, state, last)?;
        }
        Ok(())
    }

    fn jump(&mut self, model: &PdmpModel, t: f64, event: &Event) {
        if let Some(tr) = &mut self.trajectory {
            tr.jump(model, t, event);
        }
    }
}

pub(crate) struct SimulationOutput {
    pub model: PdmpModel,
    pub trajectories: Vec<Trajectory>,
    pub snapshots: Vec<Vec<Snapshot>>,
    pub occupation: Vec<(usize, f64)>,
    pub failures: Vec<(usize, String)>,
    pub total_jumps: usize,
}

pub(crate) fn run_simulation(cfg: &Config, spec: &ModelSpec) -> Result<SimulationOutput, CliError> {
    let sim = cfg.section("simulate", &cfg.simulate)?;
    let model = spec.pdmp()?;
    let init = check_initial(&model, sim)?;
    let mut times = sim.snapshot_times.clone();
    times.sort_by(f64::total_cmp);
    let mut opts = SimOptions::default();
    if let Some(b) = sim.jump_budget {
        opts.jump_budget = b;
    }
    if let Some(o) = &sim.occupation {
        if !(o.step > 0.0) || !(0.0..1.0).contains(&o.burn_in_fraction) {
            return Err(CliError::config("simulate.occupation", "need step > 0 and 0 <= burn_in_fraction < 1"));
        }
        if o.coord >= model.dim() {
            return Err(CliError::config("simulate.occupation.coord", format!("state dimension is {}", model.dim())));
        }
    }
    let runs = simulate_ensemble_with(&model, |_| init.clone(), sim.horizon, sim.n_paths, cfg.seed, &opts, |_| SimObserver {
        trajectory: sim.trajectories.then(|| Trajectory { horizon: sim.horizon, ..Default::default() }),
        snapshots: SnapshotCollector::new(&times),
        occupation: sim.occupation.as_ref().map(|o| OccupationSampler::new(o.coord, o.burn_in_fraction * sim.horizon, o.step)),
    });
    let mut result = SimulationOutput {
        trajectories: Vec::new(),
        snapshots: Vec::new(),
        occupation: Vec::new(),
        failures: Vec::new(),
        total_jumps: 0,
        model: spec.pdmp()?,
    };
    for run in runs {
        let SimObserver { trajectory, snapshots, occupation } = run.observer;
        match run.end {
            Ok(end) => {
                result.total_jumps += end.n_jumps;
                if let Some(mut t) = trajectory {
                    t.final_state = Some(end.state);
                    result.trajectories.push(t);
                }
            }
            Err(e) => {
                result.failures.push((run.path_id, e.to_string()));
                if let Some(t) = trajectory {
                    result.trajectories.push(t);
                }
            }
        }
        result.snapshots.push(snapshots.snapshots);
        if let Some(o) = occupation {
            result.occupation.extend(o.samples);
        }
    }
    Ok(result)
}

pub(crate) fn failures_json(f: &[(usize, String)]) -> Value {
    json!(f.iter().take(10).map(|(k, e)| json!({ "path_id": k, "error": e })).collect::<Vec<_>>())
}

fn simulate(cfg: &Config, out: &mut Out) -> Result<Value, CliError> {
    let spec = ModelSpec::from_config(cfg.model()?)?;
    let sim = cfg.section("simulate", &cfg.simulate)?;
    let res = run_simulation(cfg, &spec)?;
    let dim = res.model.dim();
    if sim.trajectories {
        let model = &res.model;
        out.write("trajectories.csv", |w| {
            writeln!(w, "{}", Trajectory::csv_header(dim))?;
            for (k, t) in res.trajectories.iter().enumerate() {
                t.write_csv(w, model, k)?;
            }
            Ok(())
        })?;
    }
    if !sim.snapshot_times.is_empty() {
        out.write("snapshots.csv", |w| {
            writeln!(w, "{}", pdmp::process::EnsembleSummary::snapshot_header(dim))?;
            for (k, snaps) in res.snapshots.iter().enumerate() {
                for s in snaps {
                    let xs = s.x.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",");
                    writeln!(w, "{k},{},{},{xs}", fmt_f64(s.t), s.regime)?;
                }
            }
            Ok(())
        })?;
    }
    let mut report = json!({
        "model": spec.name(),
        "seed": cfg.seed,
        "n_paths": sim.n_paths,
        "n_failed": res.failures.len(),
        "failures": failures_json(&res.failures),
        "mean_jumps": res.total_jumps as f64 / (sim.n_paths - res.failures.len()).max(1) as f64,
    });
    if sim.occupation.is_some() {
        let hist = occupation_histogram(cfg, &spec, &res)?;
        out.write("histogram.csv", |w| {
            writeln!(w, "{}", Histogram::CSV_HEADER)?;
            hist.write_csv(w)
        })?;
        report["occupation_samples"] = json!(hist.sample_size());
        report["out_of_range"] = json!(hist.out_of_range());
    }
    Ok(report)
}

fn occupation_histogram(cfg: &Config, spec: &ModelSpec, res: &SimulationOutput) -> Result<Histogram, CliError> {
    let grid = density_grid(spec, cfg.section("grid", &cfg.grid)?)?;
    Ok(empirical_density_regimes(&res.occupation, res.model.regimes().len(), &grid)?)
}

fn classify_cmd(cfg: &Config, _out: &mut Out) -> Result<Value, CliError> {
    let spec = ModelSpec::from_config(cfg.model()?)?;
    classification_json(&spec)
}

fn classification_json(spec: &ModelSpec) -> Result<Value, CliError> {
    let sys = spec.switching_system()?;
    let report = classify(&sys)?;
    let mut v = serde_json::to_value(&report).expect("report serialises");
    v["model"] = json!(spec.name());
    v["interval"] = json!([sys.lower, sys.upper]);
    v["regime_labels"] = json!(spec.system_regimes());
    Ok(v)
}

fn stationary(cfg: &Config, out: &mut Out) -> Result<Value, CliError> {
    let spec = ModelSpec::from_config(cfg.model()?)?;
    let mut report = classification_json(&spec)?;
    match stationary_reference(cfg, &spec)? {
        Some(reference) => {
            out.write("stationary.csv", |w| {
                writeln!(w, "{}", Histogram::CSV_HEADER)?;
                write_density_rows(w, &reference)
            })?;
            report["normalizable"] = json!(true);
        }
        None => report["normalizable"] = json!(false),
    }
    out.json("classification.json", &report)?;
    Ok(report)
}

/// Rows `cell_center,regime,density`.
pub(crate) fn write_density_rows<W: Write>(w: &mut W, d: &DensityGrid) -> std::io::Result<()> {
    for (r, vals) in d.values.iter().enumerate() {
        for (i, v) in vals.iter().enumerate() {
            writeln!(w, "{},{r},{}", fmt_f64(d.grid.center(i)), fmt_f64(*v))?;
        }
    }
    Ok(())
}

/// Cell averages of `f*` on the configured grid, in model regime order;
/// `None` when `f*` does not exist.
pub(crate) fn stationary_reference(cfg: &Config, spec: &ModelSpec) -> Result<Option<DensityGrid>, CliError> {
    let sys = spec.switching_system()?;
    let grid = match &cfg.grid {
        Some(g) => density_grid(spec, g)?,
        None => Grid1D::new(sys.lower, sys.upper, 256)?,
    };
    stationary_on(spec, &grid)
}

/// Cell averages of `f*` on `grid`, in model regime order.
pub(crate) fn stationary_on(spec: &ModelSpec, grid: &Grid1D) -> Result<Option<DensityGrid>, CliError> {
    let sys = spec.switching_system()?;
    if grid.x_min() < sys.lower || grid.x_max() > sys.upper {
        return Err(CliError::config(
            "grid",
            format!("the stationary density lives on [{}, {}]; the grid must lie inside it", sys.lower, sys.upper),
        ));
    }
    let st = stationary_density(&sys)?;
    let Some(avg) = st.cell_averages(&grid.edges())? else { return Ok(None) };
    let map = spec.system_regimes();
    let mut values = vec![vec![0.0; grid.n()]; 2];
    for (i, [a, b]) in avg.into_iter().enumerate() {
        values[map[0]][i] = a;
        values[map[1]][i] = b;
    }
    Ok(Some(DensityGrid::new(grid.clone(), values)?))
}

pub(crate) fn density_grid(spec: &ModelSpec, g: &GridConfig) -> Result<Grid1D, CliError> {
    Ok(match spec {
        ModelSpec::CellCycle1p { .. } | ModelSpec::CellCycle2p(_) => {
            if g.x_min != 0.0 {
                return Err(CliError::config("grid.x_min", "cell-cycle grids start at 0"));
            }
            Grid1D::dyadic(g.x_max, g.n)?
        }
        _ => Grid1D::new(g.x_min, g.x_max, g.n)?,
    })
}

/// Solver state in model regime order.
#[derive(Clone, Debug)]
pub enum DensityState {
    Grid(DensityGrid),
    TwoPhase(TwoPhaseDensity),
}

impl DensityState {
    pub fn marginals(&self) -> DensityGrid {
        match self {
            DensityState::Grid(g) => g.clone(),
            DensityState::TwoPhase(t) => t.marginals(),
        }
    }

    pub fn max_mass_defect(&self) -> f64 {
        match self {
            DensityState::Grid(g) => g.max_mass_defect,
            DensityState::TwoPhase(t) => t.max_mass_defect,
        }
    }

    pub fn min_value(&self) -> f64 {
        match self {
            DensityState::Grid(g) => g.min_value,
            DensityState::TwoPhase(t) => t.min_value,
        }
    }

    fn header(&self) -> &'static str {
        match self {
            DensityState::Grid(_) => DensityGrid::CSV_HEADER,
            DensityState::TwoPhase(_) => TwoPhaseDensity::CSV_HEADER,
        }
    }

    fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        match self {
            DensityState::Grid(g) => g.write_csv(w),
            DensityState::TwoPhase(t) => t.write_csv(w),
        }
    }

    pub fn summary(&self) -> Value {
        let m = self.marginals();
        json!({
            "time": m.time,
            "mass": m.mass(),
            "regime_mass": (0..m.values.len()).map(|r| m.regime_mass(r)).collect::<Vec<_>>(),
            "outflow": m.outflow,
            "initial_mass": m.initial_mass,
            "max_mass_defect": m.max_mass_defect,
            "min_value": m.min_value,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Evolution {
    pub state: DensityState,
    pub snapshots: Vec<DensityState>,
    /// `(converged, residual)` in steady-state mode.
    pub steady: Option<(bool, f64)>,
}

fn initial_values(spec: &ModelSpec, grid: &Grid1D, g: &GridConfig, regimes: usize) -> Result<Vec<Vec<f64>>, CliError> {
    let fields: Vec<ScalarField> = match &g.initial {
        Some(list) => {
            if list.len() != regimes {
                return Err(CliError::config(
                    "grid.initial",
                    format!("{} needs {regimes} initial densities (got {})", spec.name(), list.len()),
                ));
            }
            list.iter().map(|p| param_field("grid.initial", p)).collect::<Result<_, _>>()?
        }
        None => (0..regimes).map(|r| ScalarField::Constant(if r == 0 { 1.0 } else { 0.0 })).collect(),
    };
    let mut values: Vec<Vec<f64>> = fields.iter().map(|f| grid.project(|x| f.eval(x))).collect();
    let mass: f64 = values.iter().map(|v| grid.integral(v)).sum();
    if !(mass > 0.0) || values.iter().flatten().any(|v| !(*v >= 0.0)) {
        return Err(CliError::config("grid.initial", "initial densities must be nonnegative with positive mass"));
    }
    values.iter_mut().flatten().for_each(|v| *v /= mass);
    Ok(values)
}

fn drive<E: Evolver>(
    solver: &E,
    mut state: E::State,
    g: &GridConfig,
    t_end: f64,
    wrap: impl Fn(&E::State) -> DensityState,
) -> Result<Evolution, CliError> {
    let mut times: Vec<f64> = g.snapshot_times.iter().cloned().filter(|t| *t <= t_end).collect();
    times.sort_by(f64::total_cmp);
    let mut snapshots = Vec::new();
    let mut now = 0.0;
    for t in times {
        solver.advance(&mut state, t - now)?;
        now = t;
        snapshots.push(wrap(&state));
    }
    let steady = match g.tol {
        Some(tol) => {
            let chunk = g.chunk.unwrap_or(1.0);
            let res = steady_state(solver, state, chunk, tol, t_end - now)?;
            state = res.state;
            Some((res.converged, res.residual))
        }
        None => {
            solver.advance(&mut state, t_end - now)?;
            None
        }
    };
    Ok(Evolution { state: wrap(&state), snapshots, steady })
}

pub(crate) fn run_evolution(cfg: &Config, spec: &ModelSpec) -> Result<Evolution, CliError> {
    let g = cfg.section("grid", &cfg.grid)?;
    let dt = g.dt.ok_or_else(|| CliError::config("grid.dt", "required to evolve densities"))?;
    let t_end = g.t_end.ok_or_else(|| CliError::config("grid.t_end", "required to evolve densities"))?;
    let grid = density_grid(spec, g)?;
    match spec {
        ModelSpec::Gene(_) | ModelSpec::Allee(_) | ModelSpec::BirthSwitch(_) => {
            let sys = spec.switching_system()?;
            let map = spec.system_regimes();
            let solver = SwitchingSolver::new(&grid, [&sys.g0, &sys.g1], [&sys.q0, &sys.q1], dt)?;
            let init = initial_values(spec, &grid, g, 2)?;
            let state = DensityGrid::new(grid, vec![init[map[0]].clone(), init[map[1]].clone()])?;
            drive(&solver, state, g, t_end, |s| {
                let mut m = s.clone();
                m.values = vec![Vec::new(), Vec::new()];
                m.values[map[0]] = s.values[0].clone();
                m.values[map[1]] = s.values[1].clone();
                DensityState::Grid(m)
            })
        }
        ModelSpec::CellCycle1p { g: growth, phi } => {
            let solver = CellCycleSolver::new(&grid, growth, phi, dt)?;
            let init = initial_values(spec, &grid, g, 1)?;
            drive(&solver, DensityGrid::new(grid, init)?, g, t_end, |s| DensityState::Grid(s.clone()))
        }
        ModelSpec::CellCycle2p(p) => {
            let n_age = g.n_age.ok_or_else(|| CliError::config("grid.n_age", "required by the two-phase solver"))?;
            let solver = TwoPhaseSolver::new(&grid, n_age, &p.g, &p.phi, p.t_b, dt)?;
            let init = initial_values(spec, &grid, g, 1)?;
            let state = solver.initial(&grid, init.into_iter().next().expect("one regime"))?;
            drive(&solver, state, g, t_end, |s| DensityState::TwoPhase(s.clone()))
        }
        other => Err(CliError::config("model.name", format!("no density solver for {}", other.name()))),
    }
}

fn evolve(cfg: &Config, out: &mut Out) -> Result<Value, CliError> {
    let spec = ModelSpec::from_config(cfg.model()?)?;
    let ev = run_evolution(cfg, &spec)?;
    out.write("density.csv", |w| {
        writeln!(w, "{}", ev.state.header())?;
        for s in ev.snapshots.iter().chain(std::iter::once(&ev.state)) {
            s.write_csv(w)?;
        }
        Ok(())
    })?;
    let mut report = json!({ "model": spec.name(), "final": ev.state.summary() });
    report["snapshots"] = json!(ev.snapshots.iter().map(DensityState::summary).collect::<Vec<_>>());
    let worst = ev.snapshots.iter().chain(std::iter::once(&ev.state)).map(DensityState::max_mass_defect).fold(0.0, f64::max);
    report["max_mass_defect"] = json!(worst);
    report["min_value"] = json!(ev.state.min_value());
    if let Some((converged, residual)) = ev.steady {
        report["converged"] = json!(converged);
        report["residual"] = json!(residual);
    }
    Ok(report)
}

fn compare(cfg: &Config, out: &mut Out) -> Result<Value, CliError> {
    let spec = ModelSpec::from_config(cfg.model()?)?;
    let against = cfg.section("compare", &cfg.compare)?.against;
    if cfg.section("simulate", &cfg.simulate)?.occupation.is_none() {
        return Err(CliError::config("simulate.occupation", "compare needs occupation sampling"));
    }
    let res = run_simulation(cfg, &spec)?;
    let hist = occupation_histogram(cfg, &spec, &res)?;
    let (reference, extra) = match against {
        Reference::Stationary => match stationary_reference(cfg, &spec)? {
            Some(r) => (r, json!({})),
            None => {
                return Err(CliError::config("compare.against", "the stationary density does not exist (alpha is infinite)"))
            }
        },
        Reference::Evolve => {
            let ev = run_evolution(cfg, &spec)?;
            let extra = json!({ "evolve": ev.state.summary(), "converged": ev.steady.map(|s| s.0) });
            (ev.state.marginals(), extra)
        }
    };
    let l1 = l1_distance(&hist, &reference)?;
    let th = cfg.thresholds();
    let fit = FitReport::new(Some(l1), None, hist.sample_size(), hist.out_of_range(), &FitThresholds { l1_max: th.l1_max, ks_max: None });
    out.write("histogram.csv", |w| {
        writeln!(w, "{}", Histogram::CSV_HEADER)?;
        hist.write_csv(w)
    })?;
    out.write("reference.csv", |w| {
        writeln!(w, "{}", Histogram::CSV_HEADER)?;
        write_density_rows(w, &reference)
    })?;
    let mut report = serde_json::to_value(&fit).expect("fit serialises");
    report["model"] = json!(spec.name());
    report["against"] = json!(against);
    report["n_failed"] = json!(res.failures.len());
    report["reference"] = extra;
    Ok(report)
}

fn hormander(cfg: &Config, _out: &mut Out) -> Result<Value, CliError> {
    let h = cfg.section("hormander", &cfg.hormander)?;
    let (fields, label, spec): (Vec<Flow>, String, Option<ModelSpec>) = match &h.fields {
        Some(list) => {
            let flows = list
                .iter()
                .enumerate()
                .map(|(i, t)| parse_field(&format!("hormander.fields[{i}]"), t).map(Flow::scalar))
                .collect::<Result<Vec<_>, _>>()?;
            (flows, "fields".into(), None)
        }
        None => {
            let spec = ModelSpec::from_config(cfg.model()?)?;
            let model = spec.pdmp()?;
            (model.regimes().iter().map(|r| r.flow.clone()).collect(), spec.name().into(), Some(spec))
        }
    };
    if fields.len() < 2 {
        return Err(CliError::config("hormander.fields", "need at least two vector fields"));
    }
    let dim = fields[0].dim();
    let mut results = Vec::new();
    let mut holds = true;
    for (i, x) in h.points.iter().enumerate() {
        if x.len() != dim {
            return Err(CliError::config(&format!("hormander.points[{i}]"), format!("expected dimension {dim}")));
        }
        let rep = hormander_check(&fields, x, h.depth, h.tol);
        holds &= rep.holds;
        results.push(json!({ "x": x, "report": rep }));
    }
    let mut report = json!({ "source": label, "holds": holds, "depth": h.depth, "tol": h.tol, "points": results });
    if let Some(Ok(sys)) = spec.as_ref().map(ModelSpec::switching_system) {
        let q0 = |x: &[f64]| sys.q0.eval(x[0]);
        let q1 = |x: &[f64]| sys.q1.eval(x[0]);
        let pos = intensity_positivity_check(&[&q0, &q1], h.points.iter().map(Vec::as_slice));
        report["intensity_positivity"] = serde_json::to_value(pos).expect("serialises");
    }
    Ok(report)
}

pub(crate) struct PopulationSummary {
    pub runs: Vec<Result<PopulationRun, String>>,
}

pub(crate) fn run_population(cfg: &Config) -> Result<PopulationSummary, CliError> {
    let spec = ModelSpec::from_config(cfg.model()?)?;
    let ModelSpec::Population { g, b, d } = &spec else {
        return Err(CliError::config("model.name", "the population command needs the population model"));
    };
    let p = cfg.section("population", &cfg.population)?;
    if p.initial.is_empty() || p.initial.iter().any(|x| !(*x > 0.0)) {
        return Err(CliError::config("population.initial", "initial sizes must be positive and nonempty"));
    }
    if !(p.horizon > 0.0) {
        return Err(CliError::config("population.horizon", "must be positive"));
    }
    let mut opts = PopulationOptions { snapshot_times: p.snapshot_times.clone(), ..Default::default() };
    if let Some(cap) = p.cap {
        opts.cap = cap;
    }
    let runs = (0..p.n_runs)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(cfg.seed, k as u64);
            simulate_population(g, b, d, &p.initial, p.horizon, &opts, &mut rng).map_err(|e| e.to_string())
        })
        .collect();
    Ok(PopulationSummary { runs })
}

fn population(cfg: &Config, out: &mut Out) -> Result<Value, CliError> {
    let p = cfg.section("population", &cfg.population)?;
    let summary = run_population(cfg)?;
    if p.events {
        out.write("events.csv", |w| {
            writeln!(w, "run,t,kind,size,population")?;
            for (k, run) in summary.runs.iter().enumerate() {
                let Ok(run) = run else { continue };
                for e in &run.events {
                    let kind = match e.kind {
                        PopEventKind::Death => "death",
                        PopEventKind::Division => "division",
                    };
                    writeln!(w, "{k},{},{kind},{},{}", fmt_f64(e.t), fmt_f64(e.size), e.population)?;
                }
            }
            Ok(())
        })?;
    }
    if !p.snapshot_times.is_empty() {
        out.write("snapshots.csv", |w| {
            writeln!(w, "run,t,cell,size")?;
            for (k, run) in summary.runs.iter().enumerate() {
                let Ok(run) = run else { continue };
                for s in &run.snapshots {
                    for (i, x) in s.sizes.iter().enumerate() {
                        writeln!(w, "{k},{},{i},{}", fmt_f64(s.t), fmt_f64(*x))?;
                    }
                }
            }
            Ok(())
        })?;
    }
    let ok: Vec<&PopulationRun> = summary.runs.iter().filter_map(|r| r.as_ref().ok()).collect();
    let finals: Vec<f64> = ok.iter().map(|r| r.final_sizes.len() as f64).collect();
    let n = finals.len().max(1) as f64;
    let mean = finals.iter().sum::<f64>() / n;
    let var = finals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    let extinct = ok.iter().filter(|r| r.extinction_time.is_some()).count();
    let errors: Vec<&String> = summary.runs.iter().filter_map(|r| r.as_ref().err()).collect();
    Ok(json!({
        "model": "population",
        "seed": cfg.seed,
        "n_runs": summary.runs.len(),
        "n_failed": errors.len(),
        "failures": errors.iter().take(10).collect::<Vec<_>>(),
        "horizon": p.horizon,
        "mean_final_population": mean,
        "stderr_final_population": (var / n).sqrt(),
        "extinction_frequency": extinct as f64 / n,
        "max_hazard_drift": ok.iter().map(|r| r.max_hazard_drift).fold(0.0, f64::max),
    }))
}
