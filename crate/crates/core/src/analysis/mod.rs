//! Stationary densities and stability/sweeping classification for
//! two-regime switching flows on an interval, plus bracket-span checks.
//!
//! On `(l, u)` the regime-0 field decreases (`g₀ < 0`) and the regime-1
//! field increases (`g₁ > 0`). With `r = q₀/g₀ + q₁/g₁` and
//! `R(x) = ∫_{x_ref}^x r`, the stationary equations are solved by
//! `f̄₀ = −e^{−R}/g₀`, `f̄₁ = e^{−R}/g₁`; a stationary density exists iff
//! `α = ∫ (f̄₀ + f̄₁) < ∞`.

mod hormander;

pub use hormander::{hormander_check, intensity_positivity_check, BracketField, HormanderReport, PositivityReport};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::numerics::ode::{Dopri5, Tolerance};
use crate::numerics::quad::{self, fit_decade_tail, QuadOptions};

/// Absolute tolerance under which `r₀` is treated as zero.
pub const R0_ZERO_TOL: f64 = 1e-9;
/// Smallest admissible `|g'|` at the boundary.
pub const DERIVATIVE_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct SwitchingSystem1D {
    pub g0: ScalarField,
    pub g1: ScalarField,
    pub q0: ScalarField,
    pub q1: ScalarField,
    pub lower: f64,
    pub upper: f64,
    pub x_ref: f64,
    /// `(g₀'(l), g₁'(l))` when known analytically.
    pub boundary_derivatives: Option<(f64, f64)>,
}

impl SwitchingSystem1D {
    /// Checks the sign structure on 999 interior points; `x_ref` defaults to
    /// the midpoint.
    pub fn new(
        g0: ScalarField,
        g1: ScalarField,
        q0: ScalarField,
        q1: ScalarField,
        lower: f64,
        upper: f64,
    ) -> Result<Self> {
        let m = "switching_system";
        if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
            return Err(Error::invalid(m, format!("finite lower < upper (got {lower}, {upper})")));
        }
        for k in 1..1000 {
            let x = lower + (upper - lower) * k as f64 / 1000.0;
            if !(g0.eval(x) < 0.0) {
                return Err(Error::invalid(m, format!("g0 < 0 on the interior (g0({x}) = {})", g0.eval(x))));
            }
            if !(g1.eval(x) > 0.0) {
                return Err(Error::invalid(m, format!("g1 > 0 on the interior (g1({x}) = {})", g1.eval(x))));
            }
            for (name, q) in [("q0", &q0), ("q1", &q1)] {
                let v = q.eval(x);
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::invalid(m, format!("{name} positive and finite (got {v} at {x})")));
                }
            }
        }
        Ok(Self { g0, g1, q0, q1, lower, upper, x_ref: 0.5 * (lower + upper), boundary_derivatives: None })
    }

    pub fn with_reference(mut self, x_ref: f64) -> Self {
        assert!(x_ref > self.lower && x_ref < self.upper, "x_ref must be interior");
        self.x_ref = x_ref;
        self
    }

    pub fn with_derivatives(mut self, dg0: f64, dg1: f64) -> Self {
        self.boundary_derivatives = Some((dg0, dg1));
        self
    }

    /// Scale both intensities by `k > 0`.
    pub fn with_scaled_intensities(mut self, k: f64) -> Self {
        self.q0 = self.q0.scaled(k);
        self.q1 = self.q1.scaled(k);
        self
    }

    #[inline]
    pub fn r(&self, x: f64) -> f64 {
        self.q0.eval(x) / self.g0.eval(x) + self.q1.eval(x) / self.g1.eval(x)
    }

    /// `∫_a^b r`.
    fn r_integral(&self, a: f64, b: f64) -> Result<f64> {
        let opts = QuadOptions { abs_tol: 1e-14, rel_tol: 1e-12, max_intervals: 4000 };
        quad::integrate(|s| self.r(s), a, b, opts)
    }

    /// `R(x) = ∫_{x_ref}^x r`.
    pub fn big_r(&self, x: f64) -> Result<f64> {
        self.r_integral(self.x_ref, x)
    }

    fn fbar_from(&self, x: f64, big_r: f64) -> [f64; 2] {
        let w = (-big_r).exp();
        [-w / self.g0.eval(x), w / self.g1.eval(x)]
    }

    /// Unnormalised `(f̄₀(x), f̄₁(x))`.
    pub fn fbar(&self, x: f64) -> Result<[f64; 2]> {
        Ok(self.fbar_from(x, self.big_r(x)?))
    }

    /// `(f̄₀, f̄₁)` at many points, chaining `R` between sorted neighbours.
    pub fn fbar_many(&self, xs: &[f64]) -> Result<Vec<[f64; 2]>> {
        let mut order: Vec<usize> = (0..xs.len()).collect();
        order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
        let split = order.partition_point(|&i| xs[i] < self.x_ref);
        let mut out = vec![[0.0; 2]; xs.len()];
        let (mut at, mut acc) = (self.x_ref, 0.0);
        for &i in &order[split..] {
            acc += self.r_integral(at, xs[i])?;
            at = xs[i];
            out[i] = self.fbar_from(xs[i], acc);
        }
        let (mut at, mut acc) = (self.x_ref, 0.0);
        for &i in order[..split].iter().rev() {
            acc += self.r_integral(at, xs[i])?;
            at = xs[i];
            out[i] = self.fbar_from(xs[i], acc);
        }
        Ok(out)
    }

    /// One-sided derivative at the lower end, `O(h²)`.
    fn boundary_slope(g: &ScalarField, x: f64, width: f64) -> f64 {
        let h = 1e-6 * (1.0 + x.abs()).max(width * 1e-3).min(1.0);
        (-3.0 * g.eval(x) + 4.0 * g.eval(x + h) - g.eval(x + 2.0 * h)) / (2.0 * h)
    }

    /// `(g₀'(l), g₁'(l))`, supplied or finite-differenced.
    pub fn lower_derivatives(&self) -> (f64, f64) {
        self.boundary_derivatives.unwrap_or_else(|| {
            let w = self.upper - self.lower;
            (Self::boundary_slope(&self.g0, self.lower, w), Self::boundary_slope(&self.g1, self.lower, w))
        })
    }

    /// Both fields vanish at the lower end, so it is a common equilibrium
    /// and the boundary-exponent route applies.
    pub fn lower_is_common_equilibrium(&self) -> bool {
        let scale = 1.0 + self.lower.abs();
        let tol = 1e-12 * scale;
        self.g0.eval(self.lower).abs() <= tol && self.g1.eval(self.lower).abs() <= tol
    }
}

/// `α` together with the endpoint diagnostics of its quadrature.
#[derive(Clone, Debug)]
pub struct StationaryDensity {
    sys: SwitchingSystem1D,
    /// `∫ (f̄₀ + f̄₁)`, `+∞` when divergent.
    pub alpha: f64,
    /// Tail exponents at the lower and upper ends; positive means the
    /// integral diverges there.
    pub exponents: (f64, f64),
}

impl StationaryDensity {
    pub fn system(&self) -> &SwitchingSystem1D {
        &self.sys
    }

    pub fn is_normalizable(&self) -> bool {
        self.alpha.is_finite()
    }

    /// `(f*₀(x), f*₁(x))`, or `None` when `α = ∞`.
    pub fn density(&self, x: f64) -> Result<Option<[f64; 2]>> {
        if !self.is_normalizable() {
            return Ok(None);
        }
        let [a, b] = self.sys.fbar(x)?;
        Ok(Some([a / self.alpha, b / self.alpha]))
    }

    /// Normalised values at many points.
    pub fn density_many(&self, xs: &[f64]) -> Result<Option<Vec<[f64; 2]>>> {
        if !self.is_normalizable() {
            return Ok(None);
        }
        let v = self.sys.fbar_many(xs)?;
        Ok(Some(v.into_iter().map(|[a, b]| [a / self.alpha, b / self.alpha]).collect()))
    }

    /// Cell averages of `f*ᵢ` over cells with the given edges (5-point
    /// Gauss–Legendre per cell).
    pub fn cell_averages(&self, edges: &[f64]) -> Result<Option<Vec<[f64; 2]>>> {
        const NODES: [f64; 5] = [0.0, -0.538_469_310_105_683_1, 0.538_469_310_105_683_1, -0.906_179_845_938_664, 0.906_179_845_938_664];
        const WEIGHTS: [f64; 5] =
            [0.568_888_888_888_888_9, 0.478_628_670_499_366_5, 0.478_628_670_499_366_5, 0.236_926_885_056_189_1, 0.236_926_885_056_189_1];
        let mut points = Vec::with_capacity(5 * edges.len());
        for w in edges.windows(2) {
            let (c, h) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
            points.extend(NODES.iter().map(|n| c + h * n));
        }
        let Some(vals) = self.density_many(&points)? else { return Ok(None) };
        Ok(Some(
            vals.chunks(5)
                .map(|chunk| {
                    let mut acc = [0.0; 2];
                    for (v, w) in chunk.iter().zip(WEIGHTS) {
                        acc[0] += 0.5 * w * v[0];
                        acc[1] += 0.5 * w * v[1];
                    }
                    acc
                })
                .collect(),
        ))
    }
}

/// Contributions of `f̄₀ + f̄₁` towards one endpoint.
struct EndpointTail {
    /// `∫` over the part of `[x_ref, end]` outside the first cut-off.
    head: f64,
    /// Decade pieces between successive cut-offs `ε_k = 10^{-k}·ε_0`.
    pieces: Vec<f64>,
    /// `R` grew without bound, so the tail certainly diverges.
    overflow: bool,
}

/// Sweeps from `x_ref` towards `end` in the variable `v = −ln|x − end|`,
/// integrating `R` and `∫(f̄₀ + f̄₁)` together as one ODE. Cut-offs are
/// `ε ∈ {ε_0, …, 10^{-5}ε_0}` with `ε_0 = min(1e-3, |x_ref − end|/2)`.
fn endpoint_tail(sys: &SwitchingSystem1D, end: f64) -> Result<EndpointTail> {
    let dir = if end < sys.x_ref { 1.0 } else { -1.0 };
    let s0 = (sys.x_ref - end).abs();
    let first = 1e-3_f64.min(0.5 * s0);
    // x = end + dir·e^{−v}; dx/dv = −dir·s
    let rhs = |v: f64, y: &[f64], dy: &mut [f64]| {
        let s = (-v).exp();
        let x = end + dir * s;
        let dx = -dir * s;
        dy[0] = sys.r(x) * dx;
        let w = (-y[0]).exp();
        dy[1] = (-w / sys.g0.eval(x) + w / sys.g1.eval(x)) * s;
    };
    let tol = Tolerance::new(1e-11, 1e-15);
    let mut ode = Dopri5::new(rhs, -s0.ln(), &[0.0, 0.0], tol);
    let mut marks = Vec::with_capacity(6);
    let overflow = |marks: &[f64]| EndpointTail { head: marks.first().copied().unwrap_or(0.0), pieces: Vec::new(), overflow: true };
    for k in 0..=5 {
        let target = -(first * 10f64.powi(-k)).ln();
        while ode.t() < target {
            match ode.step(target) {
                Ok(_) => {}
                // e^{−R} blowing up makes the integrator stall
                Err(Error::NonFinite { .. } | Error::StepSizeUnderflow { .. }) if ode.y()[0] < -50.0 => {
                    return Ok(overflow(&marks));
                }
                Err(e) => return Err(e),
            }
            if ode.y()[0] < -600.0 || !ode.y()[1].is_finite() {
                return Ok(overflow(&marks));
            }
        }
        marks.push(ode.y()[1]);
    }
    let pieces = marks.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(EndpointTail { head: marks[0], pieces, overflow: false })
}

impl EndpointTail {
    fn fit(&self) -> (f64, Option<f64>) {
        if self.overflow {
            return (f64::INFINITY, None);
        }
        let partial = self.head + self.pieces.iter().sum::<f64>();
        fit_decade_tail(partial, &self.pieces)
    }
}

/// `α = ∫(f̄₀ + f̄₁)` with the divergence diagnostics of both endpoints.
pub fn stationary_density(sys: &SwitchingSystem1D) -> Result<StationaryDensity> {
    let (left_exp, left) = endpoint_tail(sys, sys.lower)?.fit();
    let (right_exp, right) = endpoint_tail(sys, sys.upper)?.fit();
    let alpha = match (left, right) {
        (Some(a), Some(b)) => a + b,
        _ => f64::INFINITY,
    };
    Ok(StationaryDensity { sys: sys.clone(), alpha, exponents: (left_exp, right_exp) })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Stable,
    Sweeping,
    Inconclusive,
}

fn ser_extended<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

fn de_extended<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }
    match Repr::deserialize(d)? {
        Repr::Num(v) => Ok(v),
        Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
        Repr::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
        Repr::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {t:?}"))),
    }
}

/// Outcome of [`classify`]. `α = ∞` serialises as the string `"inf"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    /// `q₀(l)/g₀'(l) + q₁(l)/g₁'(l)`; absent when the lower end is not a
    /// common equilibrium.
    pub r0: Option<f64>,
    /// `p₀ g₀'(l) + p₁ g₁'(l)`.
    pub lambda_mean: Option<f64>,
    #[serde(serialize_with = "ser_extended", deserialize_with = "de_extended")]
    pub alpha: f64,
    pub verdict: Verdict,
    /// `q₁(l)/(q₀(l) + q₁(l))`.
    pub p0: f64,
    /// `q₀(l)/(q₀(l) + q₁(l))`.
    pub p1: f64,
    /// Larger of the two endpoint tail exponents of `α`.
    pub divergence_exponent: f64,
}

/// Decide stability (`α < ∞`) versus sweeping (`α = ∞`), cross-checked
/// against the sign of `r₀` when the lower end is a common equilibrium.
pub fn classify(sys: &SwitchingSystem1D) -> Result<ClassificationReport> {
    let st = stationary_density(sys)?;
    let (q0, q1) = (sys.q0.eval(sys.lower), sys.q1.eval(sys.lower));
    let (p0, p1) = (q1 / (q0 + q1), q0 / (q0 + q1));
    let by_alpha = if st.is_normalizable() { Verdict::Stable } else { Verdict::Sweeping };

    let (r0, lambda_mean, verdict) = if sys.lower_is_common_equilibrium() {
        let (d0, d1) = sys.lower_derivatives();
        for (which, v) in [("g0'(lower)", d0), ("g1'(lower)", d1)] {
            if v.abs() <= DERIVATIVE_TOL {
                return Err(Error::DerivativeDegenerate { which: which.into(), value: v });
            }
        }
        let r0 = q0 / d0 + q1 / d1;
        let by_sign = if r0.abs() < R0_ZERO_TOL {
            Verdict::Inconclusive
        } else if r0 < 0.0 {
            Verdict::Stable
        } else {
            Verdict::Sweeping
        };
        let verdict = if by_sign == by_alpha { by_alpha } else { Verdict::Inconclusive };
        (Some(r0), Some(p0 * d0 + p1 * d1), verdict)
    } else {
        (None, None, by_alpha)
    };

    Ok(ClassificationReport {
        r0,
        lambda_mean,
        alpha: st.alpha,
        verdict,
        p0,
        p1,
        divergence_exponent: st.exponents.0.max(st.exponents.1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn f(g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> ScalarField {
        ScalarField::func(g)
    }

    fn unit_gene() -> SwitchingSystem1D {
        SwitchingSystem1D::new(f(|x| -x), f(|x| 1.0 - x), 1.0.into(), 1.0.into(), 0.0, 1.0).unwrap()
    }

    fn birth_switch(b0: f64, b1: f64, q: f64) -> SwitchingSystem1D {
        let (r0, r1) = (b0 - 1.0, b1 - 1.0);
        SwitchingSystem1D::new(f(move |x| r0 * x - x * x), f(move |x| r1 * x - x * x), q.into(), q.into(), 0.0, r1).unwrap()
    }

    #[test]
    fn sign_structure_is_enforced() {
        assert!(SwitchingSystem1D::new(f(|x| x), f(|x| 1.0 - x), 1.0.into(), 1.0.into(), 0.0, 1.0).is_err());
        assert!(SwitchingSystem1D::new(f(|x| -x), f(|x| 1.0 - x), 0.0.into(), 1.0.into(), 0.0, 1.0).is_err());
    }

    #[test]
    fn gene_density_is_linear() {
        let st = stationary_density(&unit_gene()).unwrap();
        assert!(st.is_normalizable());
        for x in [0.01, 0.2, 0.5, 0.77, 0.99] {
            let [a, b] = st.density(x).unwrap().unwrap();
            assert_abs_diff_eq!(a, 1.0 - x, epsilon = 1e-9);
            assert_abs_diff_eq!(b, x, epsilon = 1e-9);
        }
    }

    #[test]
    fn density_matches_hand_integration() {
        // g0 = −x, g1 = 1 − x, q ≡ 1: r = −1/x + 1/(1−x), R = −ln(2x) − ln(2(1−x)),
        // e^{−R} = 4x(1−x), f̄₀ = 4(1−x), f̄₁ = 4x, α = 4
        let st = stationary_density(&unit_gene()).unwrap();
        assert_abs_diff_eq!(st.alpha, 4.0, epsilon = 1e-9);
        let [a, b] = unit_gene().fbar(0.3).unwrap();
        assert_abs_diff_eq!(a, 4.0 * 0.7, epsilon = 1e-11);
        assert_abs_diff_eq!(b, 4.0 * 0.3, epsilon = 1e-11);
    }

    #[test]
    fn stationary_equations_hold() {
        let sys = SwitchingSystem1D::new(
            f(|x| -1.3 * x),
            f(|x| 2.0 - 1.3 * x),
            f(|x| 1.0 + x),
            f(|x| 2.0 - 0.5 * x),
            0.0,
            2.0 / 1.3,
        )
        .unwrap();
        let h = 1e-5;
        for k in 1..20 {
            let x = sys.upper * k as f64 / 20.0;
            let fl = |y: f64| sys.fbar(y).unwrap();
            let [a, b] = fl(x);
            let flux0 = |y: f64| sys.g0.eval(y) * fl(y)[0];
            let flux1 = |y: f64| sys.g1.eval(y) * fl(y)[1];
            let d0 = (flux0(x + h) - flux0(x - h)) / (2.0 * h);
            let d1 = (flux1(x + h) - flux1(x - h)) / (2.0 * h);
            let exchange = sys.q1.eval(x) * b - sys.q0.eval(x) * a;
            let scale = a.abs() + b.abs();
            assert!((d0 - exchange).abs() / scale < 1e-8, "x={x}: {d0} vs {exchange}");
            assert!((d1 + exchange).abs() / scale < 1e-8, "x={x}");
        }
    }

    #[test]
    fn normalized_density_integrates_to_one() {
        let sys = birth_switch(0.5, 2.0, 1.0);
        let st = stationary_density(&sys).unwrap();
        let mass = quad::integrate_raw(
            |x| st.density(x).unwrap().unwrap().iter().sum(),
            0.0,
            1.0,
            QuadOptions { max_intervals: 20000, ..Default::default() },
        );
        assert_abs_diff_eq!(mass.value, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn stable_birth_switch() {
        let rep = classify(&birth_switch(0.5, 2.0, 1.0).with_derivatives(-0.5, 1.0)).unwrap();
        assert_eq!(rep.verdict, Verdict::Stable);
        assert_abs_diff_eq!(rep.r0.unwrap(), -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rep.lambda_mean.unwrap(), 0.25, epsilon = 1e-12);
        assert_eq!((rep.p0, rep.p1), (0.5, 0.5));
        assert!(rep.alpha.is_finite());
        assert!(rep.divergence_exponent < 0.0);
    }

    #[test]
    fn sweeping_birth_switch_with_finite_differences() {
        let rep = classify(&birth_switch(0.2, 1.5, 1.0)).unwrap();
        assert_eq!(rep.verdict, Verdict::Sweeping);
        assert_abs_diff_eq!(rep.r0.unwrap(), 0.75, epsilon = 1e-6);
        assert_abs_diff_eq!(rep.lambda_mean.unwrap(), -0.15, epsilon = 1e-6);
        assert!(rep.alpha.is_infinite());
        assert_abs_diff_eq!(rep.divergence_exponent, 0.75, epsilon = 0.05);
    }

    #[test]
    fn report_json_round_trip() {
        let rep = classify(&birth_switch(0.2, 1.5, 1.0)).unwrap();
        let text = serde_json::to_string(&rep).unwrap();
        assert!(text.contains("\"alpha\":\"inf\""), "{text}");
        let back: ClassificationReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, rep);
    }

    #[test]
    fn critical_case_is_inconclusive() {
        // g0'(0) = −1, g1'(0) = 1, q ≡ 1: r0 = 0
        let sys = SwitchingSystem1D::new(f(|x| -x - x * x), f(|x| x - x * x), 1.0.into(), 1.0.into(), 0.0, 1.0).unwrap();
        assert_eq!(classify(&sys).unwrap().verdict, Verdict::Inconclusive);
    }

    #[test]
    fn degenerate_derivative_is_rejected() {
        let sys = SwitchingSystem1D::new(f(|x| -x * x), f(|x| x - x * x), 1.0.into(), 1.0.into(), 0.0, 1.0).unwrap();
        assert!(matches!(classify(&sys), Err(Error::DerivativeDegenerate { .. })));
    }

    #[test]
    fn non_equilibrium_boundary_uses_alpha_only() {
        let rep = classify(&unit_gene()).unwrap();
        assert_eq!(rep.verdict, Verdict::Stable);
        assert_eq!(rep.r0, None);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn verdict_routes_agree(b0 in 0.05f64..0.95, b1 in 1.1f64..3.0, q in 0.2f64..3.0) {
            let r0 = q / (b0 - 1.0) + q / (b1 - 1.0);
            prop_assume!(r0.abs() > 0.1);
            let rep = classify(&birth_switch(b0, b1, q)).unwrap();
            let expected = if r0 < 0.0 { Verdict::Stable } else { Verdict::Sweeping };
            prop_assert_eq!(rep.verdict, expected);
        }

        #[test]
        fn verdict_invariant_under_common_rate_scaling(b0 in 0.05f64..0.95, b1 in 1.1f64..3.0, k in 0.1f64..10.0) {
            let base = birth_switch(b0, b1, 1.0);
            prop_assume!((1.0 / (b0 - 1.0) + 1.0 / (b1 - 1.0)).abs() > 0.1);
            let a = classify(&base).unwrap();
            let b = classify(&base.with_scaled_intensities(k)).unwrap();
            prop_assert_eq!(a.verdict, b.verdict);
        }
    }
}
