//! Span of flow differences and iterated Lie brackets at a point.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::flow::Flow;

/// `[a, b](x) = Db(x)·a(x) − Da(x)·b(x)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BracketField {
    /// `g_i`.
    Base(usize),
    /// `g_i − g_j`.
    Difference(usize, usize),
    Bracket(Box<BracketField>, Box<BracketField>),
}

impl BracketField {
    pub fn label(&self) -> String {
        match self {
            BracketField::Base(i) => format!("g{}", i + 1),
            BracketField::Difference(i, j) => format!("g{}-g{}", i + 1, j + 1),
            BracketField::Bracket(a, b) => format!("[{},{}]", a.label(), b.label()),
        }
    }

    fn eval(&self, fields: &[Flow], x: &[f64]) -> Vec<f64> {
        match self {
            BracketField::Base(i) => fields[*i].rhs(x),
            BracketField::Difference(i, j) => {
                let (a, b) = (fields[*i].rhs(x), fields[*j].rhs(x));
                a.iter().zip(&b).map(|(p, q)| p - q).collect()
            }
            BracketField::Bracket(a, b) => {
                let (va, vb) = (a.eval(fields, x), b.eval(fields, x));
                let (ja, jb) = (a.jacobian(fields, x), b.jacobian(fields, x));
                let d = x.len();
                (0..d)
                    .map(|j| (0..d).map(|k| jb[j * d + k] * va[k] - ja[j * d + k] * vb[k]).sum())
                    .collect()
            }
        }
    }

    /// Row-major Jacobian; analytic (or flow-provided) for base fields,
    /// central differences with `h = 1e-6·(1+|x_k|)` for brackets.
    fn jacobian(&self, fields: &[Flow], x: &[f64]) -> Vec<f64> {
        match self {
            BracketField::Base(i) => fields[*i].jacobian(x),
            BracketField::Difference(i, j) => {
                let (a, b) = (fields[*i].jacobian(x), fields[*j].jacobian(x));
                a.iter().zip(&b).map(|(p, q)| p - q).collect()
            }
            BracketField::Bracket(..) => {
                let d = x.len();
                let mut jac = vec![0.0; d * d];
                let mut xp = x.to_vec();
                for k in 0..d {
                    let h = 1e-6 * (1.0 + x[k].abs());
                    xp[k] = x[k] + h;
                    let fp = self.eval(fields, &xp);
                    xp[k] = x[k] - h;
                    let fm = self.eval(fields, &xp);
                    xp[k] = x[k];
                    for j in 0..d {
                        jac[j * d + k] = (fp[j] - fm[j]) / (2.0 * h);
                    }
                }
                jac
            }
        }
    }
}

/// The candidate family: `g_i − g_1` for `i ≥ 2`, and brackets of the base
/// fields involving at most `depth` of them.
pub fn bracket_family(n_fields: usize, depth: usize) -> Vec<BracketField> {
    let mut family: Vec<BracketField> = (1..n_fields).map(|i| BracketField::Difference(i, 0)).collect();
    let mut level: Vec<BracketField> = (0..n_fields).map(BracketField::Base).collect();
    for _ in 2..=depth {
        let mut next = Vec::new();
        for i in 0..n_fields {
            for inner in &level {
                if let BracketField::Base(j) = inner {
                    if *j <= i {
                        continue;
                    }
                }
                next.push(BracketField::Bracket(Box::new(BracketField::Base(i)), Box::new(inner.clone())));
            }
        }
        family.extend(next.iter().cloned());
        level = next;
    }
    family
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HormanderReport {
    pub holds: bool,
    pub rank: usize,
    pub dim: usize,
    /// Labels of a maximal independent subfamily, in evaluation order.
    pub spanning: Vec<String>,
    pub singular_values: Vec<f64>,
}

fn rank_of(columns: &[Vec<f64>], dim: usize, tol: f64) -> (usize, Vec<f64>) {
    if columns.is_empty() {
        return (0, Vec::new());
    }
    let m = DMatrix::from_fn(dim, columns.len(), |r, c| columns[c][r]);
    let sv = m.singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let rank = if max > 0.0 { sv.iter().filter(|&&s| s > tol * max).count() } else { 0 };
    (rank, sv.iter().cloned().collect())
}

/// Whether the differences `g_i − g_1` and brackets up to `depth` span
/// `ℝ^d` at `x`. Singular values below `tol·σ_max` count as zero.
pub fn hormander_check(fields: &[Flow], x: &[f64], depth: usize, tol: f64) -> HormanderReport {
    let dim = x.len();
    let family = bracket_family(fields.len(), depth);
    let columns: Vec<Vec<f64>> = family.iter().map(|f| f.eval(fields, x)).collect();
    let (rank, singular_values) = rank_of(&columns, dim, tol);

    // greedy maximal subfamily; the threshold is relative to the whole family
    let scale = singular_values.iter().cloned().fold(0.0, f64::max);
    let mut chosen: Vec<Vec<f64>> = Vec::new();
    let mut spanning = Vec::new();
    for (f, col) in family.iter().zip(&columns) {
        if chosen.len() == rank {
            break;
        }
        chosen.push(col.clone());
        let m = DMatrix::from_fn(dim, chosen.len(), |r, c| chosen[c][r]);
        let independent = m.singular_values().iter().filter(|&&s| s > tol * scale).count() == chosen.len();
        if independent {
            spanning.push(f.label());
        } else {
            chosen.pop();
        }
    }
    HormanderReport { holds: rank == dim, rank, dim, spanning, singular_values }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub holds: bool,
    pub min: f64,
    pub argmin: Vec<f64>,
}

/// Checks `q_ij(x) > 0` for every supplied off-diagonal intensity at every
/// sampled point.
pub fn intensity_positivity_check<'a>(
    intensities: &[&dyn Fn(&[f64]) -> f64],
    points: impl IntoIterator<Item = &'a [f64]>,
) -> PositivityReport {
    let mut min = f64::INFINITY;
    let mut argmin = Vec::new();
    for x in points {
        for q in intensities {
            let v = q(x);
            if v < min || v.is_nan() {
                min = v;
                argmin = x.to_vec();
            }
        }
    }
    PositivityReport { holds: min > 0.0, min, argmin }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ScalarField;
    use proptest::prelude::*;
    use rand::Rng;

    fn rotation() -> Flow {
        Flow::new(2, |x, d| {
            d[0] = -x[1];
            d[1] = x[0];
        })
    }

    #[test]
    fn family_sizes() {
        // 2 fields, depth 3: one difference, [g1,g2], [g1,[g1,g2]], [g2,[g1,g2]]
        let fam = bracket_family(2, 3);
        assert_eq!(fam.len(), 4);
        assert_eq!(fam[1].label(), "[g1,g2]");
    }

    #[test]
    fn gene_fields_span_the_line() {
        let p = 1.5;
        let g0 = Flow::scalar(ScalarField::func(|x| -x));
        let g1 = Flow::scalar(ScalarField::func(move |x| p - x));
        for x in [0.1, 0.7, 1.4] {
            let rep = hormander_check(&[g0.clone(), g1.clone()], &[x], 3, 1e-10);
            assert!(rep.holds);
            assert_eq!(rep.spanning, vec!["g2-g1"]);
        }
    }

    #[test]
    fn identical_fields_fail() {
        let g = Flow::scalar(ScalarField::func(|x| x * (1.0 - x)));
        let rep = hormander_check(&[g.clone(), g], &[0.3], 3, 1e-10);
        assert!(!rep.holds);
        assert_eq!(rep.rank, 0);
    }

    #[test]
    fn rotation_against_zero_field() {
        // g1 = (−y, x), g2 = 0: g2 − g1 = (y, −x); every bracket with the
        // zero field vanishes, so the span is one-dimensional
        let zero = Flow::new(2, |_, d| d.fill(0.0));
        let x = [0.6, -0.2];
        let fam = bracket_family(2, 3);
        let fields = [rotation(), zero];
        assert_eq!(fam[0].eval(&fields, &x), vec![-0.2, -0.6]);
        for f in &fam[1..] {
            assert!(f.eval(&fields, &x).iter().all(|v| v.abs() < 1e-8));
        }
        let rep = hormander_check(&fields, &x, 3, 1e-8);
        assert_eq!(rep.rank, 1);
        assert!(!rep.holds);
    }

    #[test]
    fn brackets_reach_full_rank() {
        // g1 = (1, 0), g2 = (0, x): [g1, g2] = (0, 1) and g2 − g1 = (−1, x)
        let g1 = Flow::new(2, |_, d| {
            d[0] = 1.0;
            d[1] = 0.0;
        });
        let g2 = Flow::new(2, |x, d| {
            d[0] = 0.0;
            d[1] = x[0];
        });
        let rep = hormander_check(&[g1, g2], &[0.0, 0.0], 2, 1e-8);
        assert!(rep.holds);
        assert_eq!(rep.spanning, vec!["g2-g1", "[g1,g2]"]);
    }

    #[test]
    fn positivity() {
        let one = |_: &[f64]| 1.0;
        let rep = intensity_positivity_check(&[&one], [[0.5].as_slice()]);
        assert!(rep.holds && rep.min == 1.0);
        let q = |x: &[f64]| x[0];
        let away: Vec<[f64; 1]> = (1..=100).map(|k| [k as f64 / 100.0]).collect();
        assert!(intensity_positivity_check(&[&q], away.iter().map(|p| p.as_slice())).holds);
        let with_zero: Vec<[f64; 1]> = (0..=100).map(|k| [k as f64 / 100.0]).collect();
        let rep = intensity_positivity_check(&[&q], with_zero.iter().map(|p| p.as_slice()));
        assert!(!rep.holds);
        assert_eq!(rep.argmin, vec![0.0]);
    }

    fn linear_field(a: [f64; 4], b: [f64; 2], scale: f64) -> Flow {
        Flow::new(2, move |x, d| {
            d[0] = scale * (a[0] * x[0] + a[1] * x[1] + b[0]);
            d[1] = scale * (a[2] * x[0] + a[3] * x[1] + b[1]);
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn rank_invariant_under_reordering_and_scaling(seed in any::<u64>(), degenerate in any::<bool>(), c in 0.1f64..10.0) {
            let mut rng = crate::rng::stream_rng(seed, 0);
            let mut coeffs = || -> ([f64; 4], [f64; 2]) {
                let mut a = [0.0; 4];
                let mut b = [0.0; 2];
                a.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
                b.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
                (a, b)
            };
            let (a1, b1) = coeffs();
            let (a2, b2) = if degenerate { (a1, b1) } else { coeffs() };
            let (a3, b3) = coeffs();
            let x = [0.3, -0.4];
            let base = [linear_field(a1, b1, 1.0), linear_field(a2, b2, 1.0), linear_field(a3, b3, 1.0)];
            let reference = hormander_check(&base[..2], &x, 3, 1e-9).rank;
            let swapped = hormander_check(&[base[1].clone(), base[0].clone()], &x, 3, 1e-9).rank;
            let scaled = hormander_check(&[linear_field(a1, b1, c), linear_field(a2, b2, c)], &x, 3, 1e-9).rank;
            prop_assert_eq!(reference, swapped);
            prop_assert_eq!(reference, scaled);
            let three = hormander_check(&base, &x, 3, 1e-9).rank;
            let rotated = hormander_check(&[base[2].clone(), base[0].clone(), base[1].clone()], &x, 3, 1e-9).rank;
            prop_assert_eq!(three, rotated);
        }
    }
}
