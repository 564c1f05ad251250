//! Acceptance suite: runs every shipped acceptance config and re-checks the
//! artifacts against oracles computed here. Prints one line per criterion
//! and exits nonzero when any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use pdmp_cli::{run_command, Config};
use serde_json::Value;

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/acceptance").join(name)
}

struct Run {
    report: Value,
    dir: PathBuf,
    elapsed: Duration,
}

fn run(root: &Path, name: &str) -> Result<Run, String> {
    let cfg = Config::load(&config_path(name)).map_err(|e| format!("{name}: {e}"))?;
    let dir = root.join(name.trim_end_matches(".toml"));
    let start = Instant::now();
    let report = run_command(&cfg, &dir).map_err(|e| format!("{name}: {e}"))?;
    Ok(Run { report, dir, elapsed: start.elapsed() })
}

/// Columns of a CSV file with a header row, parsed as text.
fn read_csv(path: &Path) -> Result<Vec<BTreeMap<String, String>>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or("empty csv")?.split(',').collect();
    Ok(lines
        .filter(|l| !l.is_empty())
        .map(|l| header.iter().map(|h| h.to_string()).zip(l.split(',').map(str::to_string)).collect())
        .collect())
}

fn num(row: &BTreeMap<String, String>, col: &str) -> f64 {
    row[col].parse().unwrap_or_else(|_| panic!("column {col} is not a number: {:?}", row[col]))
}

fn f(v: &Value, path: &[&str]) -> f64 {
    path.iter().fold(v, |v, k| &v[*k]).as_f64().unwrap_or(f64::NAN)
}

/// Sup distance between the empirical CDF and `cdf`, including left limits.
fn ks_one(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = cdf(x);
            ((i + 1) as f64 / n - c).abs().max((c - i as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

fn ks_two(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Composite Simpson average of `g` over `[a, b]`.
fn cell_average(g: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let m = 64;
    let h = (b - a) / m as f64;
    let mut s = g(a) + g(b);
    for k in 1..m {
        s += g(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0 / (b - a)
}

/// L1 distance between a `cell_center,regime,density` table on a uniform
/// grid and exact per-regime densities.
fn l1_against(rows: &[BTreeMap<String, String>], density_col: &str, exact: &[&dyn Fn(f64) -> f64]) -> f64 {
    let mut centers: Vec<f64> = rows.iter().map(|r| num(r, "cell_center")).collect();
    centers.sort_by(f64::total_cmp);
    centers.dedup();
    let h = centers[1] - centers[0];
    rows.iter()
        .map(|r| {
            let c = num(r, "cell_center");
            let g = exact[num(r, "regime") as usize];
            (num(r, density_col) - cell_average(g, c - 0.5 * h, c + 0.5 * h)).abs() * h
        })
        .sum()
}

type Outcome = Result<(bool, String), String>;

fn within(elapsed: Duration, limit: u64) -> (bool, String) {
    (elapsed.as_secs_f64() < limit as f64, format!("{:.1}s of {limit}s", elapsed.as_secs_f64()))
}

fn dwell_time(root: &Path) -> Outcome {
    let r = run(root, "01_dwell_time.toml")?;
    let x0 = f(&r.report, &["x0"]);
    let samples: Vec<f64> = read_csv(&r.dir.join("dwell_samples.csv"))?.iter().map(|row| num(row, "dwell_time")).collect();
    // x(s) = x0 e^{-s}, hazard 1 + x: Λ(t) = t + x0 (1 − e^{-t})
    let d = ks_one(samples.clone(), |t| 1.0 - (-(t + x0 * (1.0 - (-t).exp()))).exp());
    let n = samples.len() as f64;
    let critical = (-(0.01f64 / 2.0).ln() / 2.0).sqrt() / n.sqrt();
    let (fast, time) = within(r.elapsed, 30);
    let ok = d < critical && r.report["pass"] == true && n == 1e5 && fast;
    Ok((ok, format!("KS {d:.5} < {critical:.5} at level 0.01, N = {n}, quadrature KS {:.5}, {time}", f(&r.report, &["ks_statistic"]))))
}

fn gene_stationarity(root: &Path) -> Outcome {
    let r = run(root, "02_gene_stationarity.toml")?;
    let exact: [&dyn Fn(f64) -> f64; 2] = [&|x| 1.0 - x, &|x| x];
    let mc = l1_against(&read_csv(&r.dir.join("histogram.csv"))?, "density", &exact);
    let pde = l1_against(&read_csv(&r.dir.join("pde_steady.csv"))?, "density", &exact);
    let jumps = f(&r.report, &["mc", "total_jumps"]);
    let (fast, time) = within(r.elapsed, 120);
    let ok = mc < 0.03 && pde < 0.05 && jumps >= 1e6 && r.report["pass"] == true && fast;
    Ok((ok, format!("MC L1 {mc:.4} < 0.03 over {jumps} events, PDE n=512 L1 {pde:.4} < 0.05, {time}")))
}

fn long_time(root: &Path) -> Outcome {
    let a = run(root, "03a_birth_switch_stable.toml")?;
    let b = run(root, "03b_birth_switch_sweeping.toml")?;
    let (ca, cb) = (&a.report["classification"], &b.report["classification"]);
    let verdicts = ca["verdict"] == "Stable" && cb["verdict"] == "Sweeping";
    let r0 = (f(ca, &["r0"]) + 1.0).abs() < 1e-9 && (f(cb, &["r0"]) - 0.75).abs() < 1e-9;
    // g0 = −x/2 − x², g1 = x − x², q = 1: f0 = 3(1−x)/(8(x+½)³), f1 = 3/(8(x+½)²)
    let exact: [&dyn Fn(f64) -> f64; 2] =
        [&|x| 0.375 * (1.0 - x) / (x + 0.5).powi(3), &|x| 0.375 / (x + 0.5).powi(2)];
    let l1 = l1_against(&read_csv(&a.dir.join("histogram.csv"))?, "density", &exact);
    let sweep = read_csv(&b.dir.join("sweep.csv"))?;
    let row = &sweep[0];
    let mass = num(row, "total");
    let (p0, p1) = (num(row, "regime0") / mass, num(row, "regime1") / mass);
    let swept = num(row, "t") == 200.0 && num(row, "eps") == 0.05 && mass > 0.95;
    let freq = (p0 - 0.5).abs() <= 0.02 && (p1 - 0.5).abs() <= 0.02;
    let (fast, time) = within(a.elapsed + b.elapsed, 180);
    let ok = verdicts && r0 && l1 < 0.05 && swept && freq && fast;
    Ok((
        ok,
        format!(
            "verdicts {}/{}, r0 {}/{}, stable L1 {l1:.4} < 0.05, swept mass {mass:.4} > 0.95, small-x frequencies {p0:.4}/{p1:.4} (tol 0.02), {time}",
            ca["verdict"], cb["verdict"], ca["r0"], cb["r0"]
        ),
    ))
}

fn two_phase(root: &Path) -> Outcome {
    let r = run(root, "04_two_phase_recursion.toml")?;
    let rows = read_csv(&r.dir.join("division_sizes.csv"))?;
    let pick = |src: &str| rows.iter().filter(|row| row["source"] == src).map(|row| num(row, "size")).collect::<Vec<_>>();
    let (process, recursion) = (pick("process"), pick("recursion"));
    let n = process.len();
    let d = ks_two(process, recursion.clone());
    let (fast, time) = within(r.elapsed, 60);
    let ok = d < 0.01 && n == 100_000 && recursion.len() == n && fast;
    Ok((ok, format!("two-sample KS {d:.5} < 0.01, N = {n}, {time}")))
}

fn mass_balance(root: &Path) -> Outcome {
    let suite = run(root, "05_density_suite.toml")?;
    let mut worst_defect = 0.0f64;
    let mut lowest = f64::INFINITY;
    let mut count = 0;
    let mut errors = Vec::new();
    for entry in suite.report["runs"].as_array().ok_or("no runs")? {
        if !entry["error"].is_null() {
            errors.push(entry["config"].to_string());
        }
        worst_defect = worst_defect.max(f(entry, &["max_mass_defect"]));
        lowest = lowest.min(f(entry, &["min_value"]));
        count += 1;
    }
    // density runs inside the other acceptance experiments
    let gene = run(root, "02_gene_stationarity.toml")?;
    worst_defect = worst_defect.max(f(&gene.report, &["pde", "max_mass_defect"]));
    lowest = lowest.min(f(&gene.report, &["pde", "min_value"]));
    let conv = run(root, "06_convergence.toml")?;
    for entry in conv.report["runs"].as_array().ok_or("no runs")? {
        worst_defect = worst_defect.max(f(entry, &["max_mass_defect"]));
        lowest = lowest.min(f(entry, &["min_value"]));
    }
    count += 1 + conv.report["runs"].as_array().map_or(0, Vec::len);
    let ok = errors.is_empty() && worst_defect <= 1e-10 && lowest >= 0.0;
    Ok((ok, format!("{count} solver runs, worst |mass + outflow - 1| {worst_defect:.2e} <= 1e-10, min value {lowest:.3e} >= 0, errors {errors:?}")))
}

fn convergence(root: &Path) -> Outcome {
    let r = run(root, "06_convergence.toml")?;
    let rows = read_csv(&r.dir.join("convergence.csv"))?;
    let err = |n: f64| rows.iter().find(|row| num(row, "n") == n).map(|row| num(row, "l1_error"));
    let (e256, e512) = (err(256.0).ok_or("n = 256 missing")?, err(512.0).ok_or("n = 512 missing")?);
    let ratio = e256 / e512;
    Ok(((1.5..=3.0).contains(&ratio), format!("L1 errors {e256:.4e} / {e512:.4e}, ratio {ratio:.3} in [1.5, 3]")))
}

fn population(root: &Path) -> Outcome {
    let yule = run(root, "07a_yule.toml")?;
    let bd = run(root, "07b_birth_death.toml")?;
    let mean = f(&yule.report, &["mean_final_population"]);
    let se = f(&yule.report, &["stderr_final_population"]);
    let target = 3f64.exp();
    let runs = f(&yule.report, &["n_runs"]);
    let extinct = f(&bd.report, &["extinction_frequency"]);
    let clean = f(&yule.report, &["n_failed"]) == 0.0 && f(&bd.report, &["n_failed"]) == 0.0;
    let (fast, time) = within(yule.elapsed + bd.elapsed, 120);
    let ok = (mean - target).abs() <= 3.0 * se && runs == 1e4 && extinct > 0.99 && clean && fast;
    Ok((
        ok,
        format!("Yule mean {mean:.3} vs e^3 = {target:.3} (3 se = {:.3}), extinction frequency {extinct:.4} > 0.99, {time}", 3.0 * se),
    ))
}

fn hormander(root: &Path) -> Outcome {
    let gene = run(root, "08a_hormander_gene.toml")?;
    let dup = run(root, "08b_hormander_duplicated.toml")?;
    let inv = run(root, "08c_hormander_invariance.toml")?;
    let cases = f(&inv.report, &["cases"]);
    let mismatches = inv.report["mismatches"].as_array().map_or(usize::MAX, Vec::len);
    let both = f(&inv.report, &["holds"]) > 0.0 && f(&inv.report, &["fails"]) > 0.0;
    let ok = gene.report["holds"] == true && dup.report["holds"] == false && cases == 100.0 && mismatches == 0 && both;
    Ok((
        ok,
        format!(
            "gene {}, duplicated {}, invariance {} cases with {mismatches} rank mismatches ({} full rank)",
            gene.report["holds"], dup.report["holds"], cases, inv.report["holds"]
        ),
    ))
}

fn reproducibility(root: &Path) -> Outcome {
    let r = run(root, "09_reproducibility.toml")?;
    let mut compared = 0;
    let mut differing = Vec::new();
    for entry in std::fs::read_dir(&r.dir).map_err(|e| e.to_string())? {
        let a = entry.map_err(|e| e.to_string())?.path();
        let Some(stem) = a.file_name().and_then(|n| n.to_str()).and_then(|n| n.strip_suffix("_a")) else { continue };
        let b = r.dir.join(format!("{stem}_b"));
        for file in std::fs::read_dir(&a).map_err(|e| e.to_string())? {
            let p = file.map_err(|e| e.to_string())?.path();
            if p.extension().is_some_and(|e| e == "csv") {
                let other = b.join(p.file_name().expect("file name"));
                if std::fs::read(&p).ok() != std::fs::read(&other).ok() {
                    differing.push(p.display().to_string());
                }
                compared += 1;
            }
        }
    }
    Ok((compared > 0 && differing.is_empty(), format!("{compared} CSV files compared byte for byte, differing: {differing:?}")))
}

fn main() -> ExitCode {
    let root = tempfile::tempdir().expect("temporary directory");
    let criteria: [(&str, fn(&Path) -> Outcome); 9] = [
        ("jump-time law", dwell_time),
        ("gene stationarity", gene_stationarity),
        ("stability/sweeping", long_time),
        ("two-phase recursion", two_phase),
        ("mass conservation and positivity", mass_balance),
        ("first-order convergence", convergence),
        ("population engine", population),
        ("bracket condition", hormander),
        ("reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let (pass, detail) = check(root.path()).unwrap_or_else(|e| (false, format!("error: {e}")));
        failed += (!pass) as usize;
        println!("criterion {}: {} {name}: {detail}", k + 1, if pass { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
