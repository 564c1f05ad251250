//! Individual-based population of independent cells.
//!
//! Every cell grows along `x' = g(x)`, divides into two halves at rate
//! `b(x)` and dies at rate `d(x)`. The population is a multiset of sizes; the
//! next event is sampled from the total hazard `Σ (b + d)(xᵢ)` integrated
//! along the product flow.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::flow::{flow_evolve, sample_jump, Flow, Hazard, SamplingMethod};

#[derive(Clone, Debug)]
pub struct PopulationOptions {
    /// Maximum number of living cells.
    pub cap: usize,
    pub snapshot_times: Vec<f64>,
    /// Events between full recomputations of the incrementally maintained
    /// total hazard.
    pub resync_every: usize,
}

impl Default for PopulationOptions {
    fn default() -> Self {
        Self { cap: 1_000_000, snapshot_times: Vec::new(), resync_every: 1024 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PopEventKind {
    Death,
    Division,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PopEvent {
    pub t: f64,
    pub kind: PopEventKind,
    /// Size of the selected cell just before the event.
    pub size: f64,
    /// Number of cells after the event.
    pub population: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PopulationSnapshot {
    pub t: f64,
    pub sizes: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PopulationRun {
    pub events: Vec<PopEvent>,
    pub snapshots: Vec<PopulationSnapshot>,
    pub final_sizes: Vec<f64>,
    pub extinction_time: Option<f64>,
    pub horizon: f64,
    /// Largest relative gap seen between the maintained and the recomputed
    /// total hazard.
    pub max_hazard_drift: f64,
}

struct Rates<'a> {
    b: &'a ScalarField,
    d: &'a ScalarField,
}

impl Rates<'_> {
    fn cell(&self, x: f64) -> (f64, f64) {
        (self.b.eval(x), self.d.eval(x))
    }
}

/// Simulate the population from `initial` sizes until `horizon` or extinction.
pub fn simulate_population(
    g: &ScalarField,
    b: &ScalarField,
    d: &ScalarField,
    initial: &[f64],
    horizon: f64,
    opts: &PopulationOptions,
    rng: &mut dyn RngCore,
) -> Result<PopulationRun> {
    if let Some(bad) = initial.iter().find(|&&x| !(x > 0.0)) {
        return Err(Error::invalid("population", format!("sizes > 0 (got {bad})")));
    }
    let mut times = opts.snapshot_times.clone();
    times.sort_by(f64::total_cmp);
    let rates = Rates { b, d };
    let frozen = g.as_constant() == Some(0.0);

    let mut sizes = initial.to_vec();
    let mut run = PopulationRun {
        events: Vec::new(),
        snapshots: Vec::with_capacity(times.len()),
        final_sizes: Vec::new(),
        extinction_time: None,
        horizon,
        max_hazard_drift: 0.0,
    };
    let mut next_snap = 0;
    let mut t = 0.0;

    // per-cell hazards, kept in step with `sizes` when the state is frozen
    let mut cell_hazard: Vec<f64> = sizes.iter().map(|&x| total(rates.cell(x))).collect();
    let mut total_hazard: f64 = cell_hazard.iter().sum();

    loop {
        if sizes.is_empty() {
            run.extinction_time = Some(t);
            while next_snap < times.len() && times[next_snap] <= horizon {
                run.snapshots.push(PopulationSnapshot { t: times[next_snap], sizes: Vec::new() });
                next_snap += 1;
            }
            break;
        }
        let remaining = horizon - t;
        let (tau, pre, flow) = if frozen {
            let tau = if total_hazard > 0.0 {
                let xi: f64 = Exp1.sample(rng);
                xi / total_hazard
            } else {
                f64::INFINITY
            };
            (tau, None, None)
        } else {
            let gf = g.clone();
            let flow = Flow::new(sizes.len(), move |x, dx| {
                for (o, &v) in dx.iter_mut().zip(x) {
                    *o = gf.eval(v);
                }
            });
            let (bb, dd) = (b.clone(), d.clone());
            let hazard = Hazard::new(move |x| x.iter().map(|&v| bb.eval(v) + dd.eval(v)).sum());
            match sample_jump(&flow, &hazard, &sizes, SamplingMethod::InverseTransform, remaining, rng) {
                Ok((tau, state)) => (tau, Some(state), Some(flow)),
                Err(Error::HorizonExceeded { .. }) => (f64::INFINITY, None, Some(flow)),
                Err(e) => return Err(e),
            }
        };

        let t_next = t + tau;
        let past_horizon = t_next > horizon;
        while next_snap < times.len() {
            let s = times[next_snap];
            let inside = if past_horizon { s <= horizon } else { s < t_next };
            if !inside {
                break;
            }
            if s >= t {
                let snap = match &flow {
                    Some(f) => flow_evolve(f, &sizes, s - t)?,
                    None => sizes.clone(),
                };
                run.snapshots.push(PopulationSnapshot { t: s, sizes: snap });
            }
            next_snap += 1;
        }
        if past_horizon {
            if let Some(f) = &flow {
                sizes = flow_evolve(f, &sizes, remaining)?;
            }
            break;
        }
        t = t_next;
        if let Some(state) = pre {
            sizes = state;
            cell_hazard = sizes.iter().map(|&x| total(rates.cell(x))).collect();
            total_hazard = cell_hazard.iter().sum();
        }

        // select the cell with probability proportional to its hazard
        let target = rng.random::<f64>() * total_hazard;
        let mut acc = 0.0;
        let mut i = cell_hazard.len() - 1;
        for (k, &h) in cell_hazard.iter().enumerate() {
            acc += h;
            if target < acc {
                i = k;
                break;
            }
        }
        let x = sizes[i];
        let (bi, di) = rates.cell(x);
        let kind = if rng.random::<f64>() * (bi + di) < di { PopEventKind::Death } else { PopEventKind::Division };
        match kind {
            PopEventKind::Death => {
                sizes.swap_remove(i);
                total_hazard -= cell_hazard.swap_remove(i);
            }
            PopEventKind::Division => {
                let half = 0.5 * x;
                let h = total(rates.cell(half));
                sizes[i] = half;
                sizes.push(half);
                total_hazard += 2.0 * h - cell_hazard[i];
                cell_hazard[i] = h;
                cell_hazard.push(h);
            }
        }
        run.events.push(PopEvent { t, kind, size: x, population: sizes.len() });
        if sizes.len() > opts.cap {
            return Err(Error::PopulationBlowup { cap: opts.cap, time: t });
        }
        if run.events.len() % opts.resync_every.max(1) == 0 || sizes.is_empty() {
            let exact: f64 = sizes.iter().map(|&x| total(rates.cell(x))).sum();
            let drift = (exact - total_hazard).abs() / exact.abs().max(f64::MIN_POSITIVE);
            if !sizes.is_empty() {
                run.max_hazard_drift = run.max_hazard_drift.max(drift);
            }
            debug_assert!(sizes.is_empty() || drift <= 1e-9, "hazard drift {drift}");
            total_hazard = exact;
        }
    }
    run.final_sizes = sizes;
    Ok(run)
}

fn total((b, d): (f64, f64)) -> f64 {
    b + d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn pure_birth_never_shrinks() {
        let g = ScalarField::func(|x| 0.3 * x);
        let b = ScalarField::func(|x| x);
        let mut rng = stream_rng(1, 0);
        let opts = PopulationOptions { snapshot_times: vec![0.5, 1.0, 2.0], ..Default::default() };
        let run = simulate_population(&g, &b, &0.0.into(), &[1.0], 3.0, &opts, &mut rng).unwrap();
        assert!(run.events.windows(2).all(|w| w[1].population >= w[0].population));
        assert!(run.events.iter().all(|e| e.kind == PopEventKind::Division));
        assert_eq!(run.snapshots.len(), 3);
        assert!(run.snapshots.windows(2).all(|w| w[1].sizes.len() >= w[0].sizes.len()));
    }

    #[test]
    fn hazard_bookkeeping_does_not_drift() {
        let b = ScalarField::func(|x| 1.5 + x);
        let d = ScalarField::func(|x| 0.3 * x);
        let mut rng = stream_rng(2, 0);
        let opts = PopulationOptions { resync_every: 1, cap: 100_000, ..Default::default() };
        let run = simulate_population(&0.0.into(), &b, &d, &[1.0, 2.0, 3.0], 4.0, &opts, &mut rng).unwrap();
        assert!(run.events.len() > 100);
        assert!(run.max_hazard_drift <= 1e-9, "{}", run.max_hazard_drift);
    }

    #[test]
    fn extinction_is_recorded() {
        let mut rng = stream_rng(3, 0);
        let opts = PopulationOptions { snapshot_times: vec![100.0], ..Default::default() };
        let run = simulate_population(&0.0.into(), &0.0.into(), &1.0.into(), &[1.0], 100.0, &opts, &mut rng).unwrap();
        assert!(run.extinction_time.is_some());
        assert!(run.final_sizes.is_empty());
        assert_eq!(run.snapshots[0].sizes.len(), 0);
    }

    #[test]
    fn blowup_is_signalled() {
        let mut rng = stream_rng(4, 0);
        let opts = PopulationOptions { cap: 50, ..Default::default() };
        let r = simulate_population(&0.0.into(), &5.0.into(), &0.0.into(), &[1.0], 100.0, &opts, &mut rng);
        assert!(matches!(r, Err(Error::PopulationBlowup { cap: 50, .. })));
    }
}
