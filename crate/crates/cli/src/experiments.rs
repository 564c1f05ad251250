//! Named experiments. Each combines several modules and reports its own
//! pass/fail verdict next to the raw numbers it was based on.

use std::io::Write;
use std::path::Path;

use pdmp::analysis::{classify, hormander_check, Verdict};
use pdmp::density::{evolve_liouville, DensityGrid, Grid1D};
use pdmp::flow::hazard_integral;
use pdmp::models::{make_two_phase_cell_cycle, TwoPhaseRecursion, PHASE_A};
use pdmp::process::{fmt_f64, next_event, EventKind};
use pdmp::rng::stream_rng;
use pdmp::stats::{
    empirical_density_regimes, ks_critical, ks_critical_two_sample, ks_statistic, ks_two_sample, l1_distance,
    sweeping_mass, Histogram,
};
use pdmp::{Flow, ProcessState, ScalarField};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::build::{param_field, ModelSpec};
use crate::commands::{
    failures_json, run_command, run_evolution, run_simulation, stationary_on, write_density_rows, Out,
};
use crate::config::{Command, Config, ExperimentConfig, ExperimentName};
use crate::error::CliError;

pub(crate) fn run_experiment(cfg: &Config, out: &mut Out) -> Result<Value, CliError> {
    let exp = cfg.section("experiment", &cfg.experiment)?;
    let mut report = match exp.name {
        ExperimentName::DwellTime => dwell_time(cfg, exp, out)?,
        ExperimentName::GeneStationarity => gene_stationarity(cfg, exp, out)?,
        ExperimentName::LongTime => long_time(cfg, exp, out)?,
        ExperimentName::TwoPhaseRecursion => two_phase_recursion(cfg, exp, out)?,
        ExperimentName::DensitySuite => density_suite(cfg, exp)?,
        ExperimentName::Convergence => convergence(cfg, exp, out)?,
        ExperimentName::HormanderInvariance => hormander_invariance(cfg, exp)?,
        ExperimentName::Reproducibility => reproducibility(cfg, exp, out)?,
    };
    report["experiment"] = json!(exp.name);
    report["seed"] = json!(cfg.seed);
    Ok(report)
}

fn require<T>(v: Option<T>, key: &str, why: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::config(key, why.to_string()))
}

fn model_spec(cfg: &Config, expected: &[&str]) -> Result<ModelSpec, CliError> {
    let spec = ModelSpec::from_config(cfg.model()?)?;
    if !expected.contains(&spec.name()) {
        return Err(CliError::config("model.name", format!("this experiment needs one of {expected:?}")));
    }
    Ok(spec)
}

/// Waiting times out of the inactive gene state against the survival law
/// `1 − exp(−∫ q₀(π_s x₀) ds)`.
fn dwell_time(cfg: &Config, exp: &ExperimentConfig, out: &mut Out) -> Result<Value, CliError> {
    let spec = model_spec(cfg, &["gene_expression"])?;
    let model = spec.pdmp()?;
    let n = exp.n_samples.unwrap_or(100_000);
    let x0 = exp.x0.unwrap_or(0.5);
    if n == 0 || !(x0 >= 0.0) {
        return Err(CliError::config("experiment", "need n_samples > 0 and x0 >= 0"));
    }
    let start = ProcessState::new(vec![x0], 0);
    let samples = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(cfg.seed, k as u64);
            match next_event(&model, &start, f64::INFINITY, &mut rng)? {
                Some(ev) => Ok(ev.dt),
                None => Ok(f64::INFINITY),
            }
        })
        .collect::<Result<Vec<f64>, pdmp::Error>>()?;
    let regime = model.regime(0);
    let (flow, hazard) = (&regime.flow, &regime.transitions[0].hazard);
    let cdf = |t: f64| {
        if t.is_infinite() {
            return 1.0;
        }
        hazard_integral(flow, hazard, &[x0], t).map(|c| -(-c.value).exp_m1()).unwrap_or(f64::NAN)
    };
    let ks = ks_statistic(&samples, cdf)?;
    let level = cfg.thresholds().ks_level.unwrap_or(0.01);
    let critical = ks_critical(n, level);
    out.write("dwell_samples.csv", |w| {
        writeln!(w, "sample,dwell_time")?;
        for (k, t) in samples.iter().enumerate() {
            writeln!(w, "{k},{}", fmt_f64(*t))?;
        }
        Ok(())
    })?;
    Ok(json!({
        "model": spec.name(),
        "x0": x0,
        "n_samples": n,
        "ks_statistic": ks,
        "ks_level": level,
        "ks_critical": critical,
        "mean_dwell": samples.iter().sum::<f64>() / n as f64,
        "pass": ks < critical,
    }))
}

fn histogram_grid(spec: &ModelSpec, exp: &ExperimentConfig) -> Result<Grid1D, CliError> {
    let sys = spec.switching_system()?;
    Ok(Grid1D::new(sys.lower, sys.upper, exp.histogram_bins.unwrap_or(64))?)
}

fn write_histogram(out: &mut Out, name: &str, hist: &Histogram) -> Result<(), CliError> {
    out.write(name, |w| {
        writeln!(w, "{}", Histogram::CSV_HEADER)?;
        hist.write_csv(w)
    })
}

fn write_reference(out: &mut Out, name: &str, d: &DensityGrid) -> Result<(), CliError> {
    out.write(name, |w| {
        writeln!(w, "{}", Histogram::CSV_HEADER)?;
        write_density_rows(w, d)
    })
}

/// Occupation histogram and PDE steady state, both against the analytic `f*`.
fn gene_stationarity(cfg: &Config, exp: &ExperimentConfig, out: &mut Out) -> Result<Value, CliError> {
    let spec = model_spec(cfg, &["gene_expression"])?;
    let th = cfg.thresholds();
    let (l1_max, pde_max) = (th.l1_max.unwrap_or(0.03), th.pde_l1_max.unwrap_or(0.05));

    let sim = run_simulation(cfg, &spec)?;
    let hgrid = histogram_grid(&spec, exp)?;
    let hist = empirical_density_regimes(&sim.occupation, 2, &hgrid)?;
    let analytic = require(stationary_on(&spec, &hgrid)?, "model", "f* does not exist for these parameters")?;
    let mc_l1 = l1_distance(&hist, &analytic)?;
    write_histogram(out, "histogram.csv", &hist)?;
    write_reference(out, "stationary.csv", &analytic)?;

    let ev = run_evolution(cfg, &spec)?;
    let pde = ev.state.marginals();
    let analytic_pde = require(stationary_on(&spec, &pde.grid)?, "model", "f* does not exist for these parameters")?;
    let pde_l1 = pde.l1_distance(&analytic_pde)?;
    write_reference(out, "pde_steady.csv", &pde)?;
    write_reference(out, "stationary_pde_grid.csv", &analytic_pde)?;

    let converged = ev.steady.map(|s| s.0);
    Ok(json!({
        "model": spec.name(),
        "mc": {
            "l1_distance": mc_l1,
            "l1_max": l1_max,
            "occupation_samples": hist.sample_size(),
            "out_of_range": hist.out_of_range(),
            "total_jumps": sim.total_jumps,
            "failures": failures_json(&sim.failures),
            "pass": mc_l1 < l1_max && sim.failures.is_empty(),
        },
        "pde": {
            "l1_distance": pde_l1,
            "l1_max": pde_max,
            "converged": converged,
            "residual": ev.steady.map(|s| s.1),
            "summary": ev.state.summary(),
            "max_mass_defect": ev.state.max_mass_defect(),
            "min_value": ev.state.min_value(),
            "pass": pde_l1 < pde_max && converged != Some(false),
        },
        "pass": mc_l1 < l1_max && sim.failures.is_empty() && pde_l1 < pde_max && converged != Some(false),
    }))
}

/// Classification, then the Monte Carlo check matching the verdict: an
/// occupation fit for a stable system, mass near the boundary for sweeping.
fn long_time(cfg: &Config, exp: &ExperimentConfig, out: &mut Out) -> Result<Value, CliError> {
    let spec = model_spec(cfg, &["birth_switch", "gene_expression", "allee"])?;
    let sys = spec.switching_system()?;
    let class = classify(&sys)?;
    let th = cfg.thresholds();
    let mut report = json!({
        "model": spec.name(),
        "classification": serde_json::to_value(&class).expect("report serialises"),
    });
    let sim = run_simulation(cfg, &spec)?;
    report["failures"] = failures_json(&sim.failures);
    let ok_paths = sim.failures.is_empty();
    match class.verdict {
        Verdict::Stable => {
            let hgrid = histogram_grid(&spec, exp)?;
            if sim.occupation.is_empty() {
                return Err(CliError::config("simulate.occupation", "a stable system is checked through occupation sampling"));
            }
            let hist = empirical_density_regimes(&sim.occupation, 2, &hgrid)?;
            let analytic = require(stationary_on(&spec, &hgrid)?, "model", "f* does not exist")?;
            let l1 = l1_distance(&hist, &analytic)?;
            let l1_max = th.l1_max.unwrap_or(0.05);
            write_histogram(out, "histogram.csv", &hist)?;
            write_reference(out, "stationary.csv", &analytic)?;
            report["mc"] = json!({
                "l1_distance": l1,
                "l1_max": l1_max,
                "occupation_samples": hist.sample_size(),
                "out_of_range": hist.out_of_range(),
            });
            report["pass"] = json!(ok_paths && l1 < l1_max);
        }
        Verdict::Sweeping => {
            let eps = exp.eps.unwrap_or(0.05);
            let t = require(exp.t_sweep, "experiment.t_sweep", "time at which to measure the swept mass")?;
            let sweep = sweeping_mass(&sim.snapshots, eps, &[t], 2);
            let row = &sweep.rows[0];
            if row.n == 0 {
                return Err(CliError::config("simulate.snapshot_times", format!("must contain t_sweep = {t}")));
            }
            let mass_min = th.sweep_mass_min.unwrap_or(0.95);
            let tol = th.frequency_tol.unwrap_or(0.02);
            // model regime r carries system regime map[r]
            let map = spec.system_regimes();
            let p_sys = [class.p0, class.p1];
            let expected: Vec<f64> = (0..2).map(|r| p_sys[map.iter().position(|&m| m == r).expect("permutation")]).collect();
            let freq_ok = row
                .small_x_frequencies
                .as_ref()
                .is_some_and(|f| f.iter().zip(&expected).all(|(a, b)| (a - b).abs() <= tol));
            out.write("sweep.csv", |w| {
                writeln!(w, "t,eps,n,total,regime0,regime1")?;
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    fmt_f64(row.t),
                    fmt_f64(eps),
                    row.n,
                    fmt_f64(row.total),
                    fmt_f64(row.per_regime[0]),
                    fmt_f64(row.per_regime[1])
                )
            })?;
            report["sweep"] = json!({
                "t": t,
                "eps": eps,
                "paths": row.n,
                "mass": row.total,
                "mass_min": mass_min,
                "small_x_frequencies": row.small_x_frequencies,
                "expected_frequencies": expected,
                "frequency_tol": tol,
            });
            report["pass"] = json!(ok_paths && row.total > mass_min && freq_ok);
        }
        Verdict::Inconclusive => report["pass"] = json!(false),
    }
    Ok(report)
}

/// Size at the `G`-th division of independent full-process paths against
/// the `G`-th iterate of the size recursion, all started from `x₀` in phase A.
fn two_phase_recursion(cfg: &Config, exp: &ExperimentConfig, out: &mut Out) -> Result<Value, CliError> {
    let spec = model_spec(cfg, &["cell_cycle_2p"])?;
    let ModelSpec::CellCycle2p(params) = &spec else { unreachable!() };
    let model = make_two_phase_cell_cycle(params)?;
    let recursion = TwoPhaseRecursion::new(params);
    let n = exp.n_samples.unwrap_or(100_000);
    let generations = exp.generations.unwrap_or(8);
    let x0 = exp.x0.unwrap_or(1.0);
    if n == 0 || generations == 0 || !(x0 > 0.0) {
        return Err(CliError::config("experiment", "need n_samples > 0, generations > 0 and x0 > 0"));
    }
    let from_process = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(cfg.seed, k as u64);
            let mut state = ProcessState::new(vec![x0, 0.0], PHASE_A);
            let mut divisions = 0;
            loop {
                let ev = next_event(&model, &state, f64::INFINITY, &mut rng)?.ok_or(pdmp::Error::HorizonExceeded {
                    horizon: f64::INFINITY,
                    cumulative_hazard: f64::NAN,
                })?;
                let divided = matches!(ev.kind, EventKind::Clock(_));
                state = state.after(ev);
                if divided {
                    divisions += 1;
                    if divisions == generations {
                        return Ok(state.x[0]);
                    }
                }
            }
        })
        .collect::<Result<Vec<f64>, pdmp::Error>>()?;
    let from_recursion = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(cfg.seed, (n + k) as u64);
            (0..generations).try_fold(x0, |x, _| recursion.step(x, &mut rng))
        })
        .collect::<Result<Vec<f64>, pdmp::Error>>()?;
    let ks = ks_two_sample(&from_process, &from_recursion)?;
    let ks_max = cfg.thresholds().ks_max.unwrap_or(0.01);
    out.write("division_sizes.csv", |w| {
        writeln!(w, "sample,source,size")?;
        for (k, x) in from_process.iter().enumerate() {
            writeln!(w, "{k},process,{}", fmt_f64(*x))?;
        }
        for (k, x) in from_recursion.iter().enumerate() {
            writeln!(w, "{k},recursion,{}", fmt_f64(*x))?;
        }
        Ok(())
    })?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(json!({
        "model": spec.name(),
        "n_samples": n,
        "generations": generations,
        "x0": x0,
        "ks_statistic": ks,
        "ks_max": ks_max,
        "ks_critical_0.01": ks_critical_two_sample(n, n, 0.01),
        "mean_process": mean(&from_process),
        "mean_recursion": mean(&from_recursion),
        "pass": ks < ks_max,
    }))
}

fn load_sub(cfg: &Config, path: &Path) -> Result<Config, CliError> {
    Config::load(&cfg.resolve(path))
}

/// Mass balance and positivity of every listed density-solver config.
fn density_suite(cfg: &Config, exp: &ExperimentConfig) -> Result<Value, CliError> {
    if exp.configs.is_empty() {
        return Err(CliError::config("experiment.configs", "list the evolve configs to check"));
    }
    let defect_max = cfg.thresholds().mass_defect_max.unwrap_or(1e-10);
    let mut runs = Vec::new();
    let mut all = true;
    for path in &exp.configs {
        let sub = load_sub(cfg, path)?;
        let spec = ModelSpec::from_config(sub.model()?)?;
        let ev = match run_evolution(&sub, &spec) {
            Ok(ev) => ev,
            Err(e) => {
                all = false;
                runs.push(json!({ "config": path.display().to_string(), "error": e.to_json(), "pass": false }));
                continue;
            }
        };
        let states = ev.snapshots.iter().chain(std::iter::once(&ev.state));
        let defect = states.clone().map(|s| s.max_mass_defect()).fold(0.0, f64::max);
        let min = states.map(|s| s.min_value()).fold(f64::INFINITY, f64::min);
        let pass = defect <= defect_max && min >= 0.0;
        all &= pass;
        runs.push(json!({
            "config": path.display().to_string(),
            "model": spec.name(),
            "max_mass_defect": defect,
            "min_value": min,
            "final": ev.state.summary(),
            "pass": pass,
        }));
    }
    Ok(json!({ "mass_defect_max": defect_max, "runs": runs, "pass": all }))
}

/// Upwind Liouville solver on `g = −μx` against the exact push-forward
/// `f(t, x) = e^{μt} f₀(x e^{μt})`, with no inflow through the right edge.
fn convergence(cfg: &Config, exp: &ExperimentConfig, out: &mut Out) -> Result<Value, CliError> {
    let g = cfg.section("grid", &cfg.grid)?;
    let mu = exp.rate.unwrap_or(1.0);
    let courant = exp.courant.unwrap_or(0.5);
    let sizes = exp.grid_sizes.clone().unwrap_or_else(|| vec![256, 512]);
    let t_end = require(g.t_end, "grid.t_end", "time at which errors are measured")?;
    let f0 = match g.initial.as_deref() {
        Some([p]) => param_field("grid.initial", p)?,
        _ => return Err(CliError::config("grid.initial", "give one initial density expression")),
    };
    if !(mu > 0.0) || !(courant > 0.0 && courant <= 0.9) || sizes.len() < 2 {
        return Err(CliError::config("experiment", "need rate > 0, 0 < courant <= 0.9 and two or more grid sizes"));
    }
    let velocity = ScalarField::func(move |x| -mu * x);
    let speed = mu * g.x_min.abs().max(g.x_max.abs());
    let x_max = g.x_max;
    let exact = |t: f64| {
        let f0 = &f0;
        move |x: f64| {
            let y = x * (mu * t).exp();
            if y <= x_max { (mu * t).exp() * f0.eval(y) } else { 0.0 }
        }
    };
    let mut rows = Vec::new();
    for &n in &sizes {
        let grid = Grid1D::new(g.x_min, g.x_max, n)?;
        let dt = courant * grid.h() / speed;
        let numeric = evolve_liouville(&grid, &velocity, grid.project(exact(0.0)), t_end, dt)?;
        let oracle = DensityGrid::single(grid.clone(), grid.project(exact(t_end)))?;
        rows.push((n, dt, numeric.l1_distance(&oracle)?, numeric.max_mass_defect, numeric.min_value));
    }
    let ratios: Vec<f64> = rows.windows(2).map(|w| w[0].2 / w[1].2).collect();
    let th = cfg.thresholds();
    let (lo, hi) = (th.ratio_min.unwrap_or(1.5), th.ratio_max.unwrap_or(3.0));
    out.write("convergence.csv", |w| {
        writeln!(w, "n,dt,l1_error")?;
        for (n, dt, e, _, _) in &rows {
            writeln!(w, "{n},{},{}", fmt_f64(*dt), fmt_f64(*e))?;
        }
        Ok(())
    })?;
    Ok(json!({
        "rate": mu,
        "courant": courant,
        "t_end": t_end,
        "runs": rows.iter().map(|(n, dt, e, d, m)| json!({
            "n": n, "dt": dt, "l1_error": e, "max_mass_defect": d, "min_value": m,
        })).collect::<Vec<_>>(),
        "ratios": ratios,
        "ratio_min": lo,
        "ratio_max": hi,
        "pass": ratios.iter().all(|r| (lo..=hi).contains(r)),
    }))
}

fn affine_field(a: Vec<f64>, b: Vec<f64>, scale: f64) -> Flow {
    let d = b.len();
    Flow::new(d, move |x, out| {
        for i in 0..d {
            out[i] = scale * (b[i] + (0..d).map(|j| a[i * d + j] * x[j]).sum::<f64>());
        }
    })
}

/// Random affine field families: the bracket rank must not change when the
/// fields are permuted or all multiplied by one positive constant.
fn hormander_invariance(cfg: &Config, exp: &ExperimentConfig) -> Result<Value, CliError> {
    let cases = exp.n_samples.unwrap_or(100);
    let depth = cfg.hormander.as_ref().map_or(2, |h| h.depth);
    let tol = cfg.hormander.as_ref().map_or(1e-10, |h| h.tol);
    let mut rng = stream_rng(cfg.seed, 0);
    let mut failures = Vec::new();
    let mut holds = 0usize;
    for case in 0..cases {
        let dim = rng.random_range(1..=3usize);
        let k = rng.random_range(2..=4usize);
        // a third of the families share one field, so degenerate ranks occur
        let shared = rng.random_bool(1.0 / 3.0);
        let mut normal = || -> f64 { rng.sample(StandardNormal) };
        let base: (Vec<f64>, Vec<f64>) = ((0..dim * dim).map(|_| normal()).collect(), (0..dim).map(|_| normal()).collect());
        let params: Vec<(Vec<f64>, Vec<f64>)> = (0..k)
            .map(|_| if shared { base.clone() } else { ((0..dim * dim).map(|_| normal()).collect(), (0..dim).map(|_| normal()).collect()) })
            .collect();
        let x: Vec<f64> = (0..dim).map(|_| normal()).collect();
        let scale = 10f64.powf(rng.random_range(-1.0..1.0));
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(&mut rng);
        let build = |idx: &[usize], s: f64| idx.iter().map(|&i| affine_field(params[i].0.clone(), params[i].1.clone(), s)).collect::<Vec<_>>();
        let identity: Vec<usize> = (0..k).collect();
        let r0 = hormander_check(&build(&identity, 1.0), &x, depth, tol);
        let r1 = hormander_check(&build(&order, 1.0), &x, depth, tol);
        let r2 = hormander_check(&build(&identity, scale), &x, depth, tol);
        holds += r0.holds as usize;
        if r0.rank != r1.rank || r0.rank != r2.rank {
            failures.push(json!({
                "case": case, "dim": dim, "fields": k, "order": order, "scale": scale,
                "ranks": [r0.rank, r1.rank, r2.rank],
            }));
        }
    }
    Ok(json!({
        "cases": cases,
        "depth": depth,
        "holds": holds,
        "fails": cases - holds,
        "mismatches": failures,
        "pass": failures.is_empty(),
    }))
}

fn csv_files(dir: &Path) -> Result<Vec<String>, CliError> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    Ok(names)
}

/// Runs every listed config twice and compares the CSV artifacts byte by byte.
fn reproducibility(cfg: &Config, exp: &ExperimentConfig, out: &mut Out) -> Result<Value, CliError> {
    if exp.configs.is_empty() {
        return Err(CliError::config("experiment.configs", "list the configs to rerun"));
    }
    let mut runs = Vec::new();
    let mut all = true;
    for (i, path) in exp.configs.iter().enumerate() {
        let sub = load_sub(cfg, path)?;
        if sub.command == Command::Experiment {
            return Err(CliError::config("experiment.configs", "nested experiments are not rerun"));
        }
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| i.to_string());
        let dirs = [out.dir().join(format!("{stem}_a")), out.dir().join(format!("{stem}_b"))];
        for d in &dirs {
            run_command(&sub, d)?;
        }
        let names = csv_files(&dirs[0])?;
        let mut files = Vec::new();
        let mut same = !names.is_empty() && names == csv_files(&dirs[1])?;
        for name in &names {
            let read = |d: &Path| std::fs::read(d.join(name)).map_err(|e| CliError::io(&d.join(name), e));
            let (a, b) = (read(&dirs[0])?, read(&dirs[1])?);
            same &= a == b;
            files.push(json!({ "file": name, "bytes": a.len(), "identical": a == b }));
        }
        all &= same;
        runs.push(json!({ "config": path.display().to_string(), "seed": sub.seed, "files": files, "identical": same }));
    }
    Ok(json!({ "runs": runs, "pass": all }))
}
