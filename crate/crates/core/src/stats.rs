//! Ensemble statistics: histograms, L1 and Kolmogorov–Smirnov distances,
//! occupation sampling and sweeping diagnostics.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::density::{DensityGrid, Grid1D};
use crate::error::{Error, Result};
use crate::flow::flow_evolve;
use crate::process::{fmt_f64, PathObserver, PdmpModel, ProcessState, Snapshot};

/// Regime-resolved histogram. `density` integrates to one over all regimes
/// and the in-range cells; out-of-range samples are counted separately.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub grid: Grid1D,
    pub counts: Vec<Vec<u64>>,
    pub below: u64,
    pub above: u64,
    pub density: Vec<Vec<f64>>,
}

impl Histogram {
    pub fn sample_size(&self) -> u64 {
        self.in_range() + self.below + self.above
    }

    pub fn in_range(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn out_of_range(&self) -> u64 {
        self.below + self.above
    }

    /// Probability mass of each regime.
    pub fn regime_masses(&self) -> Vec<f64> {
        let h = self.grid.h();
        self.density.iter().map(|d| d.iter().sum::<f64>() * h).collect()
    }

    pub fn to_density_grid(&self) -> DensityGrid {
        DensityGrid::new(self.grid.clone(), self.density.clone()).expect("histogram densities are valid")
    }

    /// CSV rows `cell_center,regime,density`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        for (r, d) in self.density.iter().enumerate() {
            for (i, v) in d.iter().enumerate() {
                writeln!(out, "{},{r},{}", fmt_f64(self.grid.center(i)), fmt_f64(*v))?;
            }
        }
        Ok(())
    }

    pub const CSV_HEADER: &'static str = "cell_center,regime,density";
}

/// Histogram of `(regime, x)` samples over `n_regimes` regimes.
pub fn empirical_density_regimes(samples: &[(usize, f64)], n_regimes: usize, grid: &Grid1D) -> Result<Histogram> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut counts = vec![vec![0u64; grid.n()]; n_regimes];
    let (mut below, mut above) = (0, 0);
    for &(r, x) in samples {
        assert!(r < n_regimes, "regime {r} out of range");
        match grid.locate(x) {
            Some(i) => counts[r][i] += 1,
            None if x < grid.x_min() => below += 1,
            None => above += 1,
        }
    }
    let inside: u64 = counts.iter().flatten().sum();
    let scale = if inside > 0 { 1.0 / (inside as f64 * grid.h()) } else { 0.0 };
    let density = counts.iter().map(|c| c.iter().map(|&k| k as f64 * scale).collect()).collect();
    Ok(Histogram { grid: grid.clone(), counts, below, above, density })
}

pub fn empirical_density(samples: &[f64], grid: &Grid1D) -> Result<Histogram> {
    let tagged: Vec<(usize, f64)> = samples.iter().map(|&x| (0, x)).collect();
    empirical_density_regimes(&tagged, 1, grid)
}

/// `Σ |hᵢ − fᵢ|·h_cell` over regimes and cells.
pub fn l1_distance(h: &Histogram, f: &DensityGrid) -> Result<f64> {
    if h.grid != f.grid || h.density.len() != f.values.len() {
        return Err(Error::GridMismatch(format!(
            "histogram has {} regimes on n={}, density has {} on n={}",
            h.density.len(),
            h.grid.n(),
            f.values.len(),
            f.grid.n()
        )));
    }
    h.to_density_grid().l1_distance(f)
}

/// L1 distance to densities given pointwise, one per regime, compared by
/// exact cell averages.
pub fn l1_to_fields(h: &Histogram, fields: &[&dyn Fn(f64) -> f64]) -> Result<f64> {
    if fields.len() != h.density.len() {
        return Err(Error::GridMismatch(format!("{} fields for {} regimes", fields.len(), h.density.len())));
    }
    let values = fields.iter().map(|f| h.grid.project(f)).collect();
    let target = DensityGrid::new(h.grid.clone(), values)?;
    l1_distance(h, &target)
}

/// `sup |F_n − F|` for a nondecreasing `cdf`; left limits are evaluated just
/// below each sample, so atoms in `cdf` are handled.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < xs.len() {
        let v = xs[i];
        let mut j = i;
        while j < xs.len() && xs[j] == v {
            j += 1;
        }
        let (below, at) = (i as f64 / n, j as f64 / n);
        d = d.max((below - cdf(v.next_down())).abs()).max((at - cdf(v)).abs());
        i = j;
    }
    Ok(d)
}

/// Two-sample statistic `sup |F_a − F_b|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Asymptotic one-sample critical value `√(−½ ln(α/2)) / √n`.
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    (-0.5 * (alpha / 2.0).ln()).sqrt() / (n as f64).sqrt()
}

/// Asymptotic two-sample critical value.
pub fn ks_critical_two_sample(n: usize, m: usize, alpha: f64) -> f64 {
    let (n, m) = (n as f64, m as f64);
    (-0.5 * (alpha / 2.0).ln()).sqrt() * ((n + m) / (n * m)).sqrt()
}

/// Dvoretzky–Kiefer–Wolfowitz band half-width at level `alpha`.
pub fn dkw_band(n: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * n as f64)).sqrt()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitThresholds {
    pub l1_max: Option<f64>,
    pub ks_max: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub l1_distance: Option<f64>,
    pub ks_statistic: Option<f64>,
    pub sample_size: u64,
    pub out_of_range: u64,
    pub l1_max: Option<f64>,
    pub ks_max: Option<f64>,
    pub pass_l1: Option<bool>,
    pub pass_ks: Option<bool>,
    pub pass: bool,
}

impl FitReport {
    pub fn new(l1: Option<f64>, ks: Option<f64>, sample_size: u64, out_of_range: u64, thresholds: &FitThresholds) -> Self {
        let check = |v: Option<f64>, max: Option<f64>| match (v, max) {
            (Some(v), Some(m)) => Some(v < m),
            _ => None,
        };
        let pass_l1 = check(l1, thresholds.l1_max);
        let pass_ks = check(ks, thresholds.ks_max);
        Self {
            l1_distance: l1,
            ks_statistic: ks,
            sample_size,
            out_of_range,
            l1_max: thresholds.l1_max,
            ks_max: thresholds.ks_max,
            pass_l1,
            pass_ks,
            pass: pass_l1 != Some(false) && pass_ks != Some(false),
        }
    }
}

/// Records `(regime, x[coord])` at `burn_in + k·step` up to the horizon:
/// the occupation measure sampled on a fixed time lattice.
#[derive(Clone, Debug)]
pub struct OccupationSampler {
    coord: usize,
    burn_in: f64,
    step: f64,
    k: u64,
    pub samples: Vec<(usize, f64)>,
}

impl OccupationSampler {
    pub fn new(coord: usize, burn_in: f64, step: f64) -> Self {
        assert!(step > 0.0 && burn_in >= 0.0);
        Self { coord, burn_in, step, k: 0, samples: Vec::new() }
    }
}

impl PathObserver for OccupationSampler {
    fn segment(&mut self, model: &PdmpModel, t_start: f64, t_end: f64, state: &ProcessState, last: bool) -> Result<()> {
        let flow = &model.regime(state.regime).flow;
        loop {
            let t = self.burn_in + self.k as f64 * self.step;
            if !(t < t_end || (last && t <= t_end)) {
                break;
            }
            if t >= t_start {
                let x = flow_evolve(flow, &state.x, t - t_start)?;
                self.samples.push((state.regime, x[self.coord]));
            }
            self.k += 1;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub t: f64,
    pub n: usize,
    /// Fraction of paths with `x ≤ ε`.
    pub total: f64,
    /// Fraction of paths with `x ≤ ε` in each regime.
    pub per_regime: Vec<f64>,
    /// Regime frequencies among paths with `x ≤ ε`; `None` when there are none.
    pub small_x_frequencies: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepingReport {
    pub eps: f64,
    pub rows: Vec<SweepRow>,
}

/// Mass near the lower boundary at each snapshot time, from per-path
/// snapshots of a 1-D process (coordinate 0).
pub fn sweeping_mass(snapshots: &[Vec<Snapshot>], eps: f64, times: &[f64], n_regimes: usize) -> SweepingReport {
    let rows = times
        .iter()
        .map(|&t| {
            let mut n = 0usize;
            let mut near = vec![0usize; n_regimes];
            for path in snapshots {
                if let Some(s) = path.iter().find(|s| s.t == t) {
                    n += 1;
                    if s.x[0] <= eps {
                        near[s.regime] += 1;
                    }
                }
            }
            let total_near: usize = near.iter().sum();
            let frac = |k: usize| if n > 0 { k as f64 / n as f64 } else { 0.0 };
            SweepRow {
                t,
                n,
                total: frac(total_near),
                per_regime: near.iter().map(|&k| frac(k)).collect(),
                small_x_frequencies: (total_near > 0)
                    .then(|| near.iter().map(|&k| k as f64 / total_near as f64).collect()),
            }
        })
        .collect();
    SweepingReport { eps, rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Exp};

    fn unit_grid(n: usize) -> Grid1D {
        Grid1D::new(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn single_cell_sample() {
        let g = unit_grid(10);
        let h = empirical_density(&[0.55, 0.51, 0.59], &g).unwrap();
        assert_abs_diff_eq!(h.density[0][5], 10.0, epsilon = 1e-12);
        assert_eq!(h.density[0].iter().filter(|&&v| v > 0.0).count(), 1);
    }

    #[test]
    fn out_of_range_is_counted() {
        let g = unit_grid(8);
        let h = empirical_density(&[-0.1, 0.5, 1.5, 2.0], &g).unwrap();
        assert_eq!((h.below, h.above, h.in_range(), h.sample_size()), (1, 2, 1, 4));
        assert_abs_diff_eq!(h.regime_masses()[0], 1.0, epsilon = 1e-12);
        assert!(matches!(empirical_density(&[], &g), Err(Error::EmptySample)));
    }

    #[test]
    fn uniform_samples_approach_uniform_density() {
        let g = unit_grid(64);
        let mut rng = stream_rng(9, 0);
        let xs: Vec<f64> = (0..1_000_000).map(|_| rng.random::<f64>()).collect();
        let h = empirical_density(&xs, &g).unwrap();
        let d = l1_to_fields(&h, &[&|_| 1.0]).unwrap();
        assert!(d < 0.03, "{d}");
    }

    #[test]
    fn regime_masses_sum_to_one() {
        let g = unit_grid(16);
        let mut rng = stream_rng(3, 0);
        let xs: Vec<(usize, f64)> = (0..5000).map(|_| (rng.random_range(0..3), rng.random::<f64>())).collect();
        let h = empirical_density_regimes(&xs, 3, &g).unwrap();
        assert_abs_diff_eq!(h.regime_masses().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn l1_extremes() {
        let g = unit_grid(8);
        let a = empirical_density(&[0.05], &g).unwrap();
        let b = empirical_density(&[0.95], &g).unwrap();
        assert_eq!(l1_distance(&a, &a.to_density_grid()).unwrap(), 0.0);
        assert_abs_diff_eq!(l1_distance(&a, &b.to_density_grid()).unwrap(), 2.0, epsilon = 1e-12);
        let other = empirical_density(&[0.05], &unit_grid(16)).unwrap();
        assert!(matches!(l1_distance(&a, &other.to_density_grid()), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn ks_on_own_distribution() {
        let mut rng = stream_rng(11, 0);
        let exp = Exp::new(2.0).unwrap();
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| exp.sample(&mut rng)).collect();
        let d = ks_statistic(&xs, |x| if x > 0.0 { 1.0 - (-2.0 * x).exp() } else { 0.0 }).unwrap();
        assert!(d < ks_critical(n, 0.01), "{d}");
        let wrong = ks_statistic(&xs, |x| if x > 0.0 { 1.0 - (-4.0 * x).exp() } else { 0.0 }).unwrap();
        assert!(wrong > 0.1);
    }

    #[test]
    fn ks_point_mass() {
        let d = ks_statistic(&[2.0; 10], |x| if x >= 2.0 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(d, 0.0);
        let shifted = ks_statistic(&[2.0; 10], |x| if x >= 3.0 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(shifted, 1.0);
    }

    #[test]
    fn ks_two_sample_basics() {
        let a = [0.1, 0.2, 0.3];
        assert_eq!(ks_two_sample(&a, &a).unwrap(), 0.0);
        assert_eq!(ks_two_sample(&a, &[1.0, 2.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(ks_two_sample(&[1.0, 2.0, 3.0, 4.0], &[2.5]).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn critical_values() {
        assert_abs_diff_eq!(ks_critical(1, 0.01), 1.6276, epsilon = 1e-4);
        assert_abs_diff_eq!(ks_critical(1, 0.05), 1.3581, epsilon = 1e-4);
        // the DKW band coincides with the leading-term asymptotic quantile
        assert_abs_diff_eq!(dkw_band(10_000, 0.01), ks_critical(10_000, 0.01), epsilon = 1e-15);
    }

    #[test]
    fn fit_report_flags() {
        let th = FitThresholds { l1_max: Some(0.03), ks_max: None };
        let r = FitReport::new(Some(0.01), Some(0.2), 10, 0, &th);
        assert!(r.pass && r.pass_l1 == Some(true) && r.pass_ks.is_none());
        assert!(!FitReport::new(Some(0.05), None, 10, 0, &th).pass);
    }

    fn snap(t: f64, regime: usize, x: f64) -> Snapshot {
        Snapshot { t, regime, x: vec![x] }
    }

    #[test]
    fn sweeping_rows() {
        let paths = vec![vec![snap(1.0, 0, 0.01)], vec![snap(1.0, 1, 0.02)], vec![snap(1.0, 1, 0.5)], vec![snap(1.0, 0, 0.9)]];
        let rep = sweeping_mass(&paths, 0.05, &[1.0], 2);
        let row = &rep.rows[0];
        assert_eq!(row.n, 4);
        assert_eq!(row.total, 0.5);
        assert_eq!(row.per_regime, vec![0.25, 0.25]);
        assert_eq!(row.small_x_frequencies, Some(vec![0.5, 0.5]));
    }

    fn random_hist(seed: u64) -> Histogram {
        let mut rng = stream_rng(seed, 0);
        let n = rng.random_range(1..200);
        let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powi(rng.random_range(1..4))).collect();
        empirical_density(&xs, &unit_grid(16)).unwrap()
    }

    proptest! {
        #[test]
        fn l1_is_a_metric(a in any::<u64>(), b in any::<u64>(), c in any::<u64>()) {
            let (ha, hb, hc) = (random_hist(a), random_hist(b), random_hist(c));
            let d = |x: &Histogram, y: &Histogram| l1_distance(x, &y.to_density_grid()).unwrap();
            prop_assert_eq!(d(&ha, &ha), 0.0);
            prop_assert!((d(&ha, &hb) - d(&hb, &ha)).abs() < 1e-12);
            prop_assert!(d(&ha, &hc) <= d(&ha, &hb) + d(&hb, &hc) + 1e-12);
            prop_assert!(d(&ha, &hb) <= 2.0 + 1e-12);
        }

        #[test]
        fn sweeping_mass_monotone_in_eps(seed in any::<u64>(), e1 in 0.0f64..1.0, e2 in 0.0f64..1.0) {
            let mut rng = stream_rng(seed, 0);
            let paths: Vec<Vec<Snapshot>> =
                (0..50).map(|_| vec![snap(2.0, rng.random_range(0..2), rng.random::<f64>())]).collect();
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            let a = sweeping_mass(&paths, lo, &[2.0], 2);
            let b = sweeping_mass(&paths, hi, &[2.0], 2);
            prop_assert!(a.rows[0].total <= b.rows[0].total);
            for r in 0..2 {
                prop_assert!(a.rows[0].per_regime[r] <= b.rows[0].per_regime[r]);
            }
        }
    }
}
