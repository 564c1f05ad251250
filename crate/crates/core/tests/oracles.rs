//! Statistical and analytic oracles for the engine, the solvers and the
//! invariant-density formulas. Every oracle is computed independently of the
//! code under test.

use pdmp::analysis::{classify, stationary_density, Verdict};
use pdmp::density::{evolve_liouville, steady_state, DensityGrid, Grid1D, SwitchingSolver};
use pdmp::models::*;
use pdmp::process::{simulate_ensemble, simulate_ensemble_with, SimOptions};
use pdmp::stats::{empirical_density_regimes, l1_to_fields, OccupationSampler};
use pdmp::{ProcessState, ScalarField};

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[test]
fn grasshopper_jump_count_is_poisson() {
    let (lambda, t) = (2.0, 3.0);
    let m = make_grasshopper(lambda, JumpDistribution::Constant(1.0)).unwrap();
    let runs = simulate_ensemble_with(&m, |_| ProcessState::new(vec![0.0], 0), t, 4000, 21, &SimOptions::default(), |_| ());
    let counts: Vec<f64> = runs.iter().map(|r| r.end.as_ref().unwrap().n_jumps as f64).collect();
    let (mean, se) = mean_and_se(&counts);
    assert!((mean - lambda * t).abs() < 4.0 * se, "mean {mean} vs {}", lambda * t);
    // unit jumps: position equals the count
    for r in &runs {
        let end = r.end.as_ref().unwrap();
        assert_eq!(end.state.x[0], end.n_jumps as f64);
    }
}

#[test]
fn telegraph_variance_matches_closed_form() {
    let (lambda, t) = (1.0, 2.0);
    let m = make_telegraph(lambda, 1.0).unwrap();
    let sum = simulate_ensemble(&m, |_| ProcessState::new(vec![0.0, 1.0], 0), t, 8000, 22, &[t], &SimOptions::default());
    let sq: Vec<f64> = sum.snapshots.iter().map(|s| s[0].x[0].powi(2)).collect();
    let (mean, se) = mean_and_se(&sq);
    // E x(t)² for velocity flips at rate λ: (t − (1 − e^{−2λt})/(2λ))/λ
    let exact = (t - (1.0 - (-2.0 * lambda * t).exp()) / (2.0 * lambda)) / lambda;
    assert!((mean - exact).abs() < 4.0 * se, "E x^2 = {mean} vs {exact}");
    assert!(sum.snapshots.iter().all(|s| s[0].x[0].abs() <= t + 1e-12));
}

#[test]
fn birth_switch_invariant_density_closed_form() {
    let p = BirthSwitchParams { b0: 0.5, b1: 2.0, c: 1.0, mu: 1.0, q0: 1.0.into(), q1: 1.0.into() };
    let sys = p.switching_system().unwrap();
    assert_eq!(classify(&sys).unwrap().verdict, Verdict::Stable);
    let st = stationary_density(&sys).unwrap();
    for x in [0.05, 0.2, 0.5, 0.8, 0.95] {
        let [a, b] = st.density(x).unwrap().unwrap();
        let (ea, eb) = (0.375 * (1.0 - x) / (x + 0.5f64).powi(3), 0.375 / (x + 0.5f64).powi(2));
        assert!((a - ea).abs() < 1e-6 * ea.max(1.0), "f0({x}) = {a} vs {ea}");
        assert!((b - eb).abs() < 1e-6 * eb.max(1.0), "f1({x}) = {b} vs {eb}");
    }
}

#[test]
fn gene_steady_state_matches_closed_form() {
    let grid = Grid1D::new(0.0, 1.0, 256).unwrap();
    let (g0, g1) = (ScalarField::func(|x| -x), ScalarField::func(|x| 1.0 - x));
    let one = ScalarField::Constant(1.0);
    let solver = SwitchingSolver::new(&grid, [&g0, &g1], [&one, &one], 0.8 * grid.h()).unwrap();
    let f0 = DensityGrid::new(grid.clone(), vec![vec![1.0; 256], vec![0.0; 256]]).unwrap();
    let ss = steady_state(&solver, f0, 1.0, 1e-9, 200.0).unwrap();
    assert!(ss.converged);
    let exact = DensityGrid::new(grid.clone(), vec![grid.project(|x| 1.0 - x), grid.project(|x| x)]).unwrap();
    assert!(ss.state.l1_distance(&exact).unwrap() < 0.05);
    assert!(ss.state.max_mass_defect < 1e-12 && ss.state.min_value >= 0.0);
}

#[test]
fn gene_occupation_matches_closed_form() {
    let m = make_gene_expression(&GeneExpressionParams { p: 1.0, mu: 1.0, q0: 1.0.into(), q1: 1.0.into() }).unwrap();
    let runs = simulate_ensemble_with(&m, |_| ProcessState::new(vec![0.5], 1), 1e5, 1, 23, &SimOptions::default(), |_| {
        OccupationSampler::new(0, 5e4, 0.5)
    });
    let h = empirical_density_regimes(&runs[0].observer.samples, 2, &Grid1D::new(0.0, 1.0, 32).unwrap()).unwrap();
    assert!(l1_to_fields(&h, &[&|x| 1.0 - x, &|x| x]).unwrap() < 0.05);
}

#[test]
fn liouville_error_halves_with_the_mesh() {
    // g = −x pushes f0 forward as f(t, x) = e^t f0(x e^t)
    let f0 = |x: f64| (-(x - 2.0).powi(2) / 0.18).exp();
    let exact = |t: f64| move |x: f64| t.exp() * f0(x * t.exp());
    let errs: Vec<f64> = [128, 256, 512]
        .iter()
        .map(|&n| {
            let grid = Grid1D::new(0.0, 4.0, n).unwrap();
            let out = evolve_liouville(&grid, &ScalarField::func(|x| -x), grid.project(exact(0.0)), 1.0, 0.5 * grid.h() / 4.0)
                .unwrap();
            out.l1_distance(&DensityGrid::single(grid.clone(), grid.project(exact(1.0))).unwrap()).unwrap()
        })
        .collect();
    for w in errs.windows(2) {
        assert!((1.5..=3.0).contains(&(w[0] / w[1])), "errors {errs:?}");
    }
}

#[test]
fn sweeping_density_drains_to_the_boundary() {
    let p = BirthSwitchParams { b0: 0.2, b1: 1.5, c: 1.0, mu: 1.0, q0: 1.0.into(), q1: 1.0.into() };
    let sys = p.switching_system().unwrap();
    assert_eq!(classify(&sys).unwrap().verdict, Verdict::Sweeping);
    let grid = Grid1D::new(0.0, 0.5, 200).unwrap();
    let solver = SwitchingSolver::new(&grid, [&sys.g0, &sys.g1], [&sys.q0, &sys.q1], 0.002).unwrap();
    let mut f = DensityGrid::new(grid.clone(), vec![vec![1.0; 200], vec![1.0; 200]]).unwrap();
    let near = |f: &DensityGrid| f.mass_below(0.05);
    let mut last = near(&f);
    for _ in 0..4 {
        use pdmp::density::Evolver;
        solver.advance(&mut f, 25.0).unwrap();
        let now = near(&f);
        assert!(now >= last - 1e-12);
        last = now;
    }
    assert!(last > 0.9, "mass near 0 after t = 100: {last}");
}

#[test]
fn two_phase_division_keeps_phase_b_duration() {
    let p = TwoPhaseCellCycleParams { g: ScalarField::func(|x| x), phi: ScalarField::func(|x| x), t_b: 0.5 };
    let m = make_two_phase_cell_cycle(&p).unwrap();
    let mut rng = pdmp::rng::stream_rng(24, 0);
    let mut state = ProcessState::new(vec![1.0, 0.0], PHASE_A);
    for _ in 0..200 {
        let ev = pdmp::process::next_event(&m, &state, f64::INFINITY, &mut rng).unwrap().unwrap();
        if ev.regime_pre == PHASE_B {
            assert!((ev.dt - 0.5).abs() < 1e-9);
            // exponential growth over t_B, then halving
            assert!((ev.post[0] - 0.5 * state.x[0] * 0.5f64.exp()).abs() < 1e-8 * ev.post[0]);
        }
        state = state.after(ev);
    }
}
