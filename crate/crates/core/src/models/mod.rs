//! Concrete models: compound Poisson, telegraph, cell cycles, gene
//! expression, Stein neuron, switching population models, and the
//! individual-based population engine.
//!
//! Every constructor validates its parameters and returns
//! [`Error::InvalidParam`] naming the violated constraint.

mod population;

pub use population::{simulate_population, PopEvent, PopEventKind, PopulationOptions, PopulationRun, PopulationSnapshot};

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Exp, Exp1, Normal};

use crate::analysis::SwitchingSystem1D;
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::flow::{flow_evolve, Domain, Flow, Hazard, QTransform};
use crate::numerics::{brent, quad, QuadOptions};
use crate::process::{JumpKernel, PdmpModel, Regime};

/// Names under which models are addressable in configuration files.
pub const CATALOG: &[&str] = &[
    "grasshopper",
    "telegraph",
    "cell_cycle_1p",
    "rubinow",
    "cell_cycle_2p",
    "gene_expression",
    "stein",
    "allee",
    "birth_switch",
    "population",
];

fn positive(model: &str, name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(model, format!("{name} > 0 (got {v})")))
    }
}

fn nonnegative(model: &str, name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(model, format!("{name} >= 0 (got {v})")))
    }
}

/// Sampled `(min, max)` of `field` on `[a, b]`; rejects non-finite values.
fn sampled_bounds(model: &str, name: &str, field: &ScalarField, a: f64, b: f64) -> Result<(f64, f64)> {
    let (lo, hi) = field.sampled_range(a, b, 1001);
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(model, format!("{name} finite on [{a}, {b}]")));
    }
    Ok((lo, hi))
}

fn positive_on(model: &str, name: &str, field: &ScalarField, a: f64, b: f64) -> Result<(f64, f64)> {
    let (lo, hi) = sampled_bounds(model, name, field, a, b)?;
    if lo <= 0.0 {
        return Err(Error::invalid(model, format!("{name} > 0 on [{a}, {b}] (min {lo})")));
    }
    Ok((lo, hi))
}

/// Log-spaced samples on `(0, ∞)` used for half-line sign checks.
fn half_line_points() -> impl Iterator<Item = f64> {
    (0..=240).map(|k| 10f64.powf(-6.0 + k as f64 * 0.05))
}

/// Heuristic for `∫_{x0}^∞ f = ∞` with `f ≥ 0`: contributions of successive
/// decades must not shrink geometrically.
fn diverges_at_infinity(mut f: impl FnMut(f64) -> f64, x0: f64) -> Result<bool> {
    let opts = QuadOptions { abs_tol: 1e-12, rel_tol: 1e-8, max_intervals: 2000 };
    let mut pieces = Vec::new();
    for k in 0..6 {
        let (a, b) = (x0 * 10f64.powi(k), x0 * 10f64.powi(k + 1));
        let v = crate::numerics::integrate_quad(
            |u: f64| {
                let x = u.exp();
                f(x) * x
            },
            a.ln(),
            b.ln(),
            opts,
        )?;
        pieces.push(v);
    }
    let tail = &pieces[pieces.len() - 3..];
    if tail.iter().any(|&p| p <= 0.0) {
        return Ok(false);
    }
    let slope = ((tail[1] / tail[0]).log10() + (tail[2] / tail[1]).log10()) / 2.0;
    Ok(slope > -1e-3)
}

/// Distribution of the jump increments `Y` of a compound Poisson process.
#[derive(Clone, Debug, PartialEq)]
pub enum JumpDistribution {
    /// `Y ≡ 0`.
    Zero,
    Constant(f64),
    /// `Y = a` with probability `p`, else `b`.
    TwoPoint { a: f64, b: f64, p: f64 },
    Normal { mean: f64, sd: f64 },
    Exponential { rate: f64 },
    Uniform { low: f64, high: f64 },
}

impl JumpDistribution {
    fn validate(&self) -> Result<()> {
        let m = "grasshopper";
        match *self {
            JumpDistribution::TwoPoint { p, .. } if !(0.0..=1.0).contains(&p) => {
                Err(Error::invalid(m, format!("0 <= p <= 1 (got {p})")))
            }
            JumpDistribution::Normal { sd, .. } => nonnegative(m, "sd", sd),
            JumpDistribution::Exponential { rate } => positive(m, "rate", rate),
            JumpDistribution::Uniform { low, high } if !(low < high) => {
                Err(Error::invalid(m, format!("low < high (got {low}, {high})")))
            }
            _ => Ok(()),
        }
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        match *self {
            JumpDistribution::Zero => 0.0,
            JumpDistribution::Constant(c) => c,
            JumpDistribution::TwoPoint { a, b, p } => {
                if rng.random::<f64>() < p {
                    a
                } else {
                    b
                }
            }
            JumpDistribution::Normal { mean, sd } => Normal::new(mean, sd).expect("validated").sample(rng),
            JumpDistribution::Exponential { rate } => Exp::new(rate).expect("validated").sample(rng),
            JumpDistribution::Uniform { low, high } => rng.random_range(low..high),
        }
    }
}

/// Compound Poisson process: frozen state, jumps `x → x + Y` at rate `λ`.
pub fn make_grasshopper(lambda: f64, jumps: JumpDistribution) -> Result<PdmpModel> {
    positive("grasshopper", "lambda", lambda)?;
    jumps.validate()?;
    let kernel = JumpKernel::new(move |x, r, rng| (vec![x[0] + jumps.sample(rng)], r)).describe("x -> x + Y");
    let regime = Regime::new(0, Flow::frozen(1)).with_transition("jump", Hazard::constant(lambda), kernel);
    Ok(PdmpModel::new("grasshopper", vec![regime])?.with_parameters(vec![("lambda".into(), lambda)]))
}

/// Telegraph process on state `(x, v)`: `x' = v`, `v` flips sign at rate `λ`.
pub fn make_telegraph(lambda: f64, speed: f64) -> Result<PdmpModel> {
    positive("telegraph", "lambda", lambda)?;
    positive("telegraph", "c", speed)?;
    let flow = Flow::new(2, |x, d| {
        d[0] = x[1];
        d[1] = 0.0;
    })
    .with_closed_form(|t, x, o| {
        o[0] = x[0] + x[1] * t;
        o[1] = x[1];
    });
    let kernel = JumpKernel::map(0, |x| vec![x[0], -x[1]]).describe("v -> -v");
    let regime = Regime::new(0, flow).with_transition("reverse", Hazard::constant(lambda), kernel);
    Ok(PdmpModel::new("telegraph", vec![regime])?.with_parameters(vec![("lambda".into(), lambda), ("c".into(), speed)]))
}

fn validate_cell_growth(model: &str, g: &ScalarField, phi: &ScalarField) -> Result<()> {
    for x in half_line_points() {
        let (gv, pv) = (g.eval(x), phi.eval(x));
        if !(gv > 0.0) || !gv.is_finite() {
            return Err(Error::invalid(model, format!("g > 0 on (0, inf) (g({x:e}) = {gv})")));
        }
        if !(pv >= 0.0) || !pv.is_finite() {
            return Err(Error::invalid(model, format!("phi >= 0 on (0, inf) (phi({x:e}) = {pv})")));
        }
    }
    if !diverges_at_infinity(|x| 1.0 / g.eval(x), 1.0)? {
        return Err(Error::invalid(model, "integral of 1/g to infinity diverges"));
    }
    if !diverges_at_infinity(|x| phi.eval(x) / g.eval(x), 1.0)? {
        return Err(Error::invalid(model, "integral of phi/g to infinity diverges"));
    }
    Ok(())
}

fn positive_half_line() -> Domain {
    Domain::new(vec![0.0], vec![f64::INFINITY])
}

/// Single-phase cell cycle: size grows along `g`, divides at rate `φ(x)`
/// into `x/2`.
pub fn make_cell_cycle_one_phase(g: ScalarField, phi: ScalarField) -> Result<PdmpModel> {
    validate_cell_growth("cell_cycle_1p", &g, &phi)?;
    let flow = Flow::scalar(g).with_domain(positive_half_line());
    let regime = Regime::new(0, flow).with_transition(
        "division",
        Hazard::on_coordinate(phi, 0),
        JumpKernel::map(0, |x| vec![0.5 * x[0]]).describe("x -> x/2"),
    );
    PdmpModel::new("cell_cycle_1p", vec![regime])
}

/// Deterministic cell cycle: division exactly at size `2m`, daughter size `m`.
pub fn make_rubinow(g: ScalarField, m: f64) -> Result<PdmpModel> {
    positive("rubinow", "m", m)?;
    positive_on("rubinow", "g", &g, m, 2.0 * m)?;
    let flow = Flow::scalar(g).with_domain(positive_half_line());
    let regime = Regime::new(0, flow).with_boundary(
        "division",
        move |x| x[0] - 2.0 * m,
        JumpKernel::map(0, move |_| vec![m]).describe("2m -> m"),
    );
    Ok(PdmpModel::new("rubinow", vec![regime])?.with_parameters(vec![("m".into(), m)]))
}

/// `∫_m^{2m} dr / g(r)`, the deterministic cycle length.
pub fn rubinow_cycle_time(g: &ScalarField, m: f64) -> Result<f64> {
    quad(|r| 1.0 / g.eval(r), m, 2.0 * m)
}

#[derive(Clone, Debug)]
pub struct TwoPhaseCellCycleParams {
    pub g: ScalarField,
    pub phi: ScalarField,
    pub t_b: f64,
}

/// Regime index of the resting phase.
pub const PHASE_A: usize = 0;
/// Regime index of the proliferating phase.
pub const PHASE_B: usize = 1;

/// Two-phase cell cycle on `(x, y)`: phase A grows `x` and enters phase B at
/// rate `φ(x)`; phase B also runs the clock `y' = 1` and divides after
/// exactly `t_B`.
pub fn make_two_phase_cell_cycle(p: &TwoPhaseCellCycleParams) -> Result<PdmpModel> {
    positive("cell_cycle_2p", "t_B", p.t_b)?;
    validate_cell_growth("cell_cycle_2p", &p.g, &p.phi)?;
    let domain = Domain::new(vec![0.0, 0.0], vec![f64::INFINITY, f64::INFINITY]);
    let g = p.g.clone();
    let flow_a = Flow::new(2, move |x, d| {
        d[0] = g.eval(x[0]);
        d[1] = 0.0;
    })
    .with_domain(domain.clone());
    let g = p.g.clone();
    let flow_b = Flow::new(2, move |x, d| {
        d[0] = g.eval(x[0]);
        d[1] = 1.0;
    })
    .with_domain(domain);
    let a = Regime::new(PHASE_A, flow_a).with_transition(
        "enter_b",
        Hazard::on_coordinate(p.phi.clone(), 0),
        JumpKernel::map(PHASE_B, |x| vec![x[0], 0.0]).describe("(x, y) -> (x, 0) in phase B"),
    );
    let b = Regime::new(PHASE_B, flow_b).with_fixed_delay(
        "division",
        p.t_b,
        JumpKernel::map(PHASE_A, |x| vec![0.5 * x[0], 0.0]).describe("(x, t_B) -> (x/2, 0) in phase A"),
    );
    Ok(PdmpModel::new("cell_cycle_2p", vec![a, b])?.with_parameters(vec![("t_B".into(), p.t_b)]))
}

/// Size sequence of consecutive newborn cells generated directly from the
/// recursion `x_n = ½ π_{t_B}(Q⁻¹(Q(x_{n-1}) + ξ_n))`, `ξ_n ~ Exp(1)`.
pub struct TwoPhaseRecursion {
    q: QTransform,
    flow: Flow,
    t_b: f64,
}

impl TwoPhaseRecursion {
    pub fn new(p: &TwoPhaseCellCycleParams) -> Self {
        Self { q: QTransform::new(p.g.clone(), p.phi.clone()), flow: Flow::scalar(p.g.clone()), t_b: p.t_b }
    }

    pub fn step(&self, x: f64, rng: &mut dyn RngCore) -> Result<f64> {
        let xi: f64 = Exp1.sample(rng);
        let entry = self.q.advance(x, xi)?;
        Ok(0.5 * flow_evolve(&self.flow, &[entry], self.t_b)?[0])
    }
}

#[derive(Clone, Debug)]
pub struct GeneExpressionParams {
    pub p: f64,
    pub mu: f64,
    pub q0: ScalarField,
    pub q1: ScalarField,
}

impl GeneExpressionParams {
    /// Upper end `P/μ` of the invariant interval.
    pub fn x_max(&self) -> f64 {
        self.p / self.mu
    }

    fn validate(&self) -> Result<()> {
        let m = "gene_expression";
        positive(m, "P", self.p)?;
        positive(m, "mu", self.mu)?;
        positive_on(m, "q0", &self.q0, 0.0, self.x_max())?;
        positive_on(m, "q1", &self.q1, 0.0, self.x_max())?;
        Ok(())
    }

    pub fn switching_system(&self) -> Result<SwitchingSystem1D> {
        self.validate()?;
        let (p, mu) = (self.p, self.mu);
        SwitchingSystem1D::new(
            ScalarField::func(move |x| -mu * x),
            ScalarField::func(move |x| p - mu * x),
            self.q0.clone(),
            self.q1.clone(),
            0.0,
            self.x_max(),
        )
    }
}

/// Regime 0 is the inactive gene (`x' = −μx`), regime 1 the active gene
/// (`x' = P − μx`).
pub fn make_gene_expression(params: &GeneExpressionParams) -> Result<PdmpModel> {
    params.validate()?;
    let (p, mu) = (params.p, params.mu);
    let domain = Domain::new(vec![0.0], vec![f64::INFINITY]);
    let inactive = Flow::new(1, move |x, d| d[0] = -mu * x[0])
        .with_closed_form(move |t, x, o| o[0] = x[0] * (-mu * t).exp())
        .with_jacobian(move |_, j| j[0] = -mu)
        .with_domain(domain.clone());
    let eq = p / mu;
    let active = Flow::new(1, move |x, d| d[0] = p - mu * x[0])
        .with_closed_form(move |t, x, o| o[0] = eq + (x[0] - eq) * (-mu * t).exp())
        .with_jacobian(move |_, j| j[0] = -mu)
        .with_domain(domain);
    let r0 = Regime::new(0, inactive).with_transition(
        "activate",
        Hazard::on_coordinate(params.q0.clone(), 0),
        JumpKernel::switch_to(1),
    );
    let r1 = Regime::new(1, active).with_transition(
        "deactivate",
        Hazard::on_coordinate(params.q1.clone(), 0),
        JumpKernel::switch_to(0),
    );
    Ok(PdmpModel::new("gene_expression", vec![r0, r1])?.with_parameters(vec![("P".into(), p), ("mu".into(), mu)]))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SteinParams {
    pub alpha: f64,
    pub a_e: f64,
    pub a_i: f64,
    pub lambda_e: f64,
    pub lambda_i: f64,
    pub theta: f64,
    pub t_r: f64,
}

/// Regime index of the integrating phase of the neuron.
pub const STEIN_ACTIVE: usize = 0;
/// Regime index of the refractory phase.
pub const STEIN_REFRACTORY: usize = 1;

/// Stein neuron on `(V, y)`. In the active phase `V' = −αV` and input
/// events arrive at rate `λ_E + λ_I`: an excitation from `V ≥ θ − a_E` fires
/// (to `(0, 0)`, refractory), otherwise `V += a_E`; an inhibition sets
/// `V −= a_I`. The refractory phase runs `y' = 1` for exactly `t_R`.
pub fn make_stein(p: &SteinParams) -> Result<PdmpModel> {
    let m = "stein";
    positive(m, "alpha", p.alpha)?;
    nonnegative(m, "a_E", p.a_e)?;
    nonnegative(m, "a_I", p.a_i)?;
    positive(m, "lambda_E", p.lambda_e)?;
    positive(m, "lambda_I", p.lambda_i)?;
    positive(m, "theta", p.theta)?;
    positive(m, "t_R", p.t_r)?;
    let alpha = p.alpha;
    let active = Flow::new(2, move |x, d| {
        d[0] = -alpha * x[0];
        d[1] = 0.0;
    })
    .with_closed_form(move |t, x, o| {
        o[0] = x[0] * (-alpha * t).exp();
        o[1] = x[1];
    })
    .with_domain(Domain::new(vec![f64::NEG_INFINITY, 0.0], vec![p.theta, 0.0]));
    let refractory = Flow::new(2, |_, d| {
        d[0] = 0.0;
        d[1] = 1.0;
    })
    .with_closed_form(|t, x, o| {
        o[0] = x[0];
        o[1] = x[1] + t;
    })
    .with_domain(Domain::new(vec![0.0, 0.0], vec![0.0, p.t_r]));
    let (a_e, a_i, theta) = (p.a_e, p.a_i, p.theta);
    let p_exc = p.lambda_e / (p.lambda_e + p.lambda_i);
    let input = JumpKernel::new(move |x, _, rng| {
        if rng.random::<f64>() < p_exc {
            if x[0] >= theta - a_e {
                (vec![0.0, 0.0], STEIN_REFRACTORY)
            } else {
                (vec![x[0] + a_e, 0.0], STEIN_ACTIVE)
            }
        } else {
            (vec![x[0] - a_i, 0.0], STEIN_ACTIVE)
        }
    })
    .describe("excite, fire at threshold, or inhibit");
    let r0 = Regime::new(STEIN_ACTIVE, active).with_transition("input", Hazard::constant(p.lambda_e + p.lambda_i), input);
    let r1 = Regime::new(STEIN_REFRACTORY, refractory).with_fixed_delay(
        "recover",
        p.t_r,
        JumpKernel::map(STEIN_ACTIVE, |_| vec![0.0, 0.0]).describe("-> (0, 0) active"),
    );
    Ok(PdmpModel::new("stein", vec![r0, r1])?.with_parameters(vec![
        ("alpha".into(), p.alpha),
        ("a_E".into(), p.a_e),
        ("a_I".into(), p.a_i),
        ("lambda_E".into(), p.lambda_e),
        ("lambda_I".into(), p.lambda_i),
        ("theta".into(), p.theta),
        ("t_R".into(), p.t_r),
    ]))
}

#[derive(Clone, Debug)]
pub struct AlleeParams {
    pub lambda: f64,
    pub k: f64,
    pub a: f64,
    pub b: f64,
    /// Intensity of the switch 0 → 1 (logistic to Allee).
    pub q01: ScalarField,
    /// Intensity of the switch 1 → 0.
    pub q10: ScalarField,
}

impl AlleeParams {
    pub fn g0(&self) -> ScalarField {
        let (l, k) = (self.lambda, self.k);
        ScalarField::func(move |x| l * (1.0 - x / k) * x)
    }

    pub fn g1(&self) -> ScalarField {
        let (l, k, a, b) = (self.lambda, self.k, self.a, self.b);
        ScalarField::func(move |x| l * (1.0 - x / k - a / (1.0 + b * x)) * x)
    }

    fn validate(&self) -> Result<()> {
        let m = "allee";
        positive(m, "lambda", self.lambda)?;
        positive(m, "K", self.k)?;
        positive(m, "A", self.a)?;
        positive(m, "B", self.b)?;
        if self.k * self.b <= 1.0 {
            return Err(Error::invalid(m, format!("K*B > 1 (got {})", self.k * self.b)));
        }
        let upper = (self.b * self.k + 1.0).powi(2) / (4.0 * self.k * self.b);
        if !(self.a > 1.0 && self.a < upper) {
            return Err(Error::invalid(m, format!("1 < A < (BK+1)^2/(4KB) = {upper} (got A = {})", self.a)));
        }
        Ok(())
    }

    /// Interior stationary points `x₁ < x₂` of the Allee flow.
    pub fn roots(&self) -> Result<(f64, f64)> {
        self.validate()?;
        let (k, a, b) = (self.k, self.a, self.b);
        let h = |x: f64| 1.0 - x / k - a / (1.0 + b * x);
        // per-capita rate is unimodal with its maximum at the vertex below
        let vertex = (b * k - 1.0) / (2.0 * b);
        if h(vertex) <= 0.0 {
            return Err(Error::NoInteriorRoots);
        }
        let x1 = brent(h, 0.0, vertex, 1e-14).map_err(|_| Error::NoInteriorRoots)?;
        let x2 = brent(h, vertex, k, 1e-14).map_err(|_| Error::NoInteriorRoots)?;
        Ok((x1, x2))
    }

    /// The switching system restricted to the attractor `[x₂, K]`. The Allee
    /// regime decreases there, so it takes the role of the decreasing field.
    pub fn switching_system(&self) -> Result<SwitchingSystem1D> {
        let (_, x2) = self.roots()?;
        SwitchingSystem1D::new(self.g1(), self.g0(), self.q10.clone(), self.q01.clone(), x2, self.k)
    }
}

/// Regime 0 follows the logistic flow, regime 1 the Allee flow.
pub fn make_allee(p: &AlleeParams) -> Result<PdmpModel> {
    let (x1, x2) = p.roots()?;
    positive_on("allee", "q01", &p.q01, 0.0, p.k)?;
    positive_on("allee", "q10", &p.q10, 0.0, p.k)?;
    let (l, k) = (p.lambda, p.k);
    let g0 = p.g0();
    let logistic = Flow::new(1, move |x, d| d[0] = g0.eval(x[0]))
        .with_closed_form(move |t, x, o| {
            let e = (l * t).exp();
            o[0] = k * x[0] * e / (k + x[0] * (e - 1.0));
        })
        .with_domain(positive_half_line());
    let allee = Flow::scalar(p.g1()).with_domain(positive_half_line());
    let r0 = Regime::new(0, logistic).with_transition("to_allee", Hazard::on_coordinate(p.q01.clone(), 0), JumpKernel::switch_to(1));
    let r1 = Regime::new(1, allee).with_transition("to_logistic", Hazard::on_coordinate(p.q10.clone(), 0), JumpKernel::switch_to(0));
    Ok(PdmpModel::new("allee", vec![r0, r1])?.with_parameters(vec![
        ("lambda".into(), p.lambda),
        ("K".into(), p.k),
        ("A".into(), p.a),
        ("B".into(), p.b),
        ("x1".into(), x1),
        ("x2".into(), x2),
    ]))
}

#[derive(Clone, Debug)]
pub struct BirthSwitchParams {
    pub b0: f64,
    pub b1: f64,
    pub c: f64,
    pub mu: f64,
    pub q0: ScalarField,
    pub q1: ScalarField,
}

impl BirthSwitchParams {
    /// Right end `a = (b₁ − μ)/c` of the attractor `(0, a]`.
    pub fn attractor_end(&self) -> f64 {
        (self.b1 - self.mu) / self.c
    }

    pub fn g(&self, regime: usize) -> ScalarField {
        let r = if regime == 0 { self.b0 - self.mu } else { self.b1 - self.mu };
        let c = self.c;
        ScalarField::func(move |x| r * x - c * x * x)
    }

    fn validate(&self) -> Result<()> {
        let m = "birth_switch";
        positive(m, "c", self.c)?;
        nonnegative(m, "b0", self.b0)?;
        if !(self.b0 < self.mu && self.mu < self.b1) {
            return Err(Error::invalid(m, format!("b0 < mu < b1 (got {}, {}, {})", self.b0, self.mu, self.b1)));
        }
        let a = self.attractor_end();
        positive_on(m, "q0", &self.q0, 0.0, a)?;
        positive_on(m, "q1", &self.q1, 0.0, a)?;
        Ok(())
    }

    pub fn switching_system(&self) -> Result<SwitchingSystem1D> {
        self.validate()?;
        Ok(SwitchingSystem1D::new(self.g(0), self.g(1), self.q0.clone(), self.q1.clone(), 0.0, self.attractor_end())?
            .with_derivatives(self.b0 - self.mu, self.b1 - self.mu))
    }
}

/// Flow of `x' = r x − c x²`.
fn bernoulli_flow(r: f64, c: f64) -> Flow {
    Flow::new(1, move |x, d| d[0] = r * x[0] - c * x[0] * x[0])
        .with_closed_form(move |t, x, o| {
            let growth = if r == 0.0 { t } else { (r * t).exp_m1() / r };
            o[0] = x[0] * (r * t).exp() / (1.0 + c * x[0] * growth);
        })
        .with_jacobian(move |x, j| j[0] = r - 2.0 * c * x[0])
        .with_domain(positive_half_line())
}

/// Two-regime logistic population with birth rate switching between `b₀`
/// and `b₁`.
pub fn make_birth_switch(p: &BirthSwitchParams) -> Result<PdmpModel> {
    p.validate()?;
    let r0 = Regime::new(0, bernoulli_flow(p.b0 - p.mu, p.c)).with_transition(
        "switch_up",
        Hazard::on_coordinate(p.q0.clone(), 0),
        JumpKernel::switch_to(1),
    );
    let r1 = Regime::new(1, bernoulli_flow(p.b1 - p.mu, p.c)).with_transition(
        "switch_down",
        Hazard::on_coordinate(p.q1.clone(), 0),
        JumpKernel::switch_to(0),
    );
    Ok(PdmpModel::new("birth_switch", vec![r0, r1])?.with_parameters(vec![
        ("b0".into(), p.b0),
        ("b1".into(), p.b1),
        ("c".into(), p.c),
        ("mu".into(), p.mu),
        ("a".into(), p.attractor_end()),
    ]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::{simulate_trajectory, EventKind, ProcessState, SimOptions};
    use crate::rng::stream_rng;
    use approx::assert_abs_diff_eq;

    fn field(f: fn(f64) -> f64) -> ScalarField {
        ScalarField::func(f)
    }

    #[test]
    fn constructors_reject_invalid_parameters() {
        assert!(matches!(make_telegraph(0.0, 1.0), Err(Error::InvalidParam { .. })));
        assert!(make_grasshopper(1.0, JumpDistribution::TwoPoint { a: 1.0, b: -1.0, p: 1.5 }).is_err());
        assert!(make_rubinow(1.0.into(), -1.0).is_err());
        assert!(make_cell_cycle_one_phase(field(|x| x * x), 1.0.into()).is_err());
        assert!(make_cell_cycle_one_phase(field(|x| -x), 1.0.into()).is_err());
        let gene = GeneExpressionParams { p: 1.0, mu: 1.0, q0: field(|x| x), q1: 1.0.into() };
        assert!(make_gene_expression(&gene).is_err());
        let stein = SteinParams { alpha: 1.0, a_e: 0.6, a_i: 0.5, lambda_e: 2.0, lambda_i: 1.0, theta: 1.0, t_r: 0.0 };
        let err = make_stein(&stein).unwrap_err();
        assert!(err.to_string().contains("t_R"), "{err}");
        let bs = BirthSwitchParams { b0: 1.5, b1: 2.0, c: 1.0, mu: 1.0, q0: 1.0.into(), q1: 1.0.into() };
        assert!(make_birth_switch(&bs).is_err());
    }

    #[test]
    fn allee_roots_match_quadratic_formula() {
        let p = AlleeParams { lambda: 1.0, k: 10.0, a: 2.0, b: 1.0, q01: 1.0.into(), q10: 1.0.into() };
        let (x1, x2) = p.roots().unwrap();
        // roots of B x² − (BK − 1) x + K(A − 1)
        let (qa, qb, qc) = (p.b, -(p.b * p.k - 1.0), p.k * (p.a - 1.0));
        let disc = (qb * qb - 4.0 * qa * qc).sqrt();
        assert_abs_diff_eq!(x1, (-qb - disc) / (2.0 * qa), epsilon = 1e-12);
        assert_abs_diff_eq!(x2, (-qb + disc) / (2.0 * qa), epsilon = 1e-12);
        let bad = AlleeParams { a: 4.0, ..p.clone() };
        assert!(matches!(make_allee(&bad), Err(Error::InvalidParam { .. })));
        let low_kb = AlleeParams { b: 0.05, ..p };
        assert!(low_kb.roots().is_err());
    }

    #[test]
    fn allee_frozen_regimes_converge_to_their_attractors() {
        let p = AlleeParams { lambda: 1.0, k: 10.0, a: 2.0, b: 1.0, q01: 1.0.into(), q10: 1.0.into() };
        let (x1, x2) = p.roots().unwrap();
        let m = make_allee(&p).unwrap();
        let logistic = &m.regime(0).flow;
        let allee = &m.regime(1).flow;
        let mut prev = 0.3;
        for k in 1..=40 {
            let x = flow_evolve(logistic, &[0.3], k as f64).unwrap();
            assert!(x[0] >= prev && x[0] <= p.k);
            prev = x[0];
        }
        assert_abs_diff_eq!(prev, p.k, epsilon = 1e-9);
        let x = flow_evolve(allee, &[x1 + 0.1], 60.0).unwrap();
        assert_abs_diff_eq!(x[0], x2, epsilon = 1e-6);
        let x = flow_evolve(allee, &[0.99 * p.k], 60.0).unwrap();
        assert_abs_diff_eq!(x[0], x2, epsilon = 1e-6);
    }

    #[test]
    fn allee_switching_path_stays_in_attractor() {
        let p = AlleeParams { lambda: 1.0, k: 10.0, a: 2.0, b: 1.0, q01: 1.0.into(), q10: 2.0.into() };
        let (_, x2) = p.roots().unwrap();
        assert!(p.g0().eval(x2) >= 0.0 && p.g1().eval(p.k) <= 0.0);
        let m = make_allee(&p).unwrap();
        let mut rng = stream_rng(3, 0);
        let traj = simulate_trajectory(&m, ProcessState::new(vec![0.5 * (x2 + p.k)], 0), 50.0, &SimOptions::default(), &mut rng).unwrap();
        for j in &traj.jumps {
            assert!(j.pre[0] >= x2 - 1e-9 && j.pre[0] <= p.k + 1e-9, "{}", j.pre[0]);
        }
    }

    #[test]
    fn birth_switch_sign_structure() {
        let p = BirthSwitchParams { b0: 0.5, b1: 2.0, c: 1.0, mu: 1.0, q0: 1.0.into(), q1: 1.0.into() };
        let a = p.attractor_end();
        assert_eq!(a, 1.0);
        assert!(half_line_points().all(|x| p.g(0).eval(x) < 0.0));
        assert_eq!(p.g(1).eval(a), 0.0);
        let m = make_birth_switch(&p).unwrap();
        // closed form agrees with the integrated vector field
        let num = crate::numerics::integrate_ode(|_, y, d| d[0] = 1.0 * y[0] - y[0] * y[0], 0.0, &[0.2], 3.0, Default::default()).unwrap();
        assert_abs_diff_eq!(flow_evolve(&m.regime(1).flow, &[0.2], 3.0).unwrap()[0], num[0], epsilon = 1e-9);
        let mut rng = stream_rng(9, 0);
        let traj = simulate_trajectory(&m, ProcessState::new(vec![0.7], 1), 100.0, &SimOptions::default(), &mut rng).unwrap();
        assert!(traj.jumps.iter().all(|j| j.pre[0] > 0.0 && j.pre[0] <= a));
    }

    #[test]
    fn rubinow_cycles_are_deterministic() {
        let g = field(|x| 1.0 + x);
        let m_size = 1.5;
        let cycle = rubinow_cycle_time(&g, m_size).unwrap();
        assert_abs_diff_eq!(cycle, (4.0f64 / 2.5).ln(), epsilon = 1e-12);
        let model = make_rubinow(g, m_size).unwrap();
        let mut rng = stream_rng(0, 0);
        let traj = simulate_trajectory(&model, ProcessState::new(vec![m_size], 0), 10.0, &SimOptions::default(), &mut rng).unwrap();
        assert_eq!(traj.jumps.len(), (10.0 / cycle) as usize);
        for (k, j) in traj.jumps.iter().enumerate() {
            assert_eq!(j.post[0], m_size);
            assert_abs_diff_eq!(j.t, (k + 1) as f64 * cycle, epsilon = 1e-8);
        }
        let unit = make_rubinow(1.0.into(), 1.0).unwrap();
        let traj = simulate_trajectory(&unit, ProcessState::new(vec![1.0], 0), 3.5, &SimOptions::default(), &mut rng).unwrap();
        let times: Vec<f64> = traj.jumps.iter().map(|j| j.t).collect();
        assert_eq!(times.len(), 3);
        assert!(times.iter().zip([1.0, 2.0, 3.0]).all(|(t, e)| (t - e).abs() < 1e-9));
    }

    #[test]
    fn one_phase_divisions_halve_size() {
        let m = make_cell_cycle_one_phase(field(|x| x), field(|x| x)).unwrap();
        let mut rng = stream_rng(4, 0);
        let traj = simulate_trajectory(&m, ProcessState::new(vec![1.0], 0), 50.0, &SimOptions::default(), &mut rng).unwrap();
        assert!(traj.jumps.len() > 10);
        assert!(traj.jumps.iter().all(|j| j.post[0] == 0.5 * j.pre[0]));
    }

    #[test]
    fn two_phase_residence_and_division() {
        let p = TwoPhaseCellCycleParams { g: field(|x| x), phi: field(|x| x), t_b: 0.5 };
        let m = make_two_phase_cell_cycle(&p).unwrap();
        let mut rng = stream_rng(1, 0);
        let traj = simulate_trajectory(&m, ProcessState::new(vec![1.0, 0.0], PHASE_A), 40.0, &SimOptions::default(), &mut rng).unwrap();
        let mut entered = None;
        let mut divisions = 0;
        for j in &traj.jumps {
            match (j.regime_pre, j.regime_post) {
                (PHASE_A, PHASE_B) => entered = Some(j.t),
                (PHASE_B, PHASE_A) => {
                    assert_abs_diff_eq!(j.t - entered.unwrap(), 0.5, epsilon = 1e-12);
                    assert_abs_diff_eq!(j.pre[1], 0.5, epsilon = 1e-9);
                    assert_eq!(j.post[0], 0.5 * j.pre[0]);
                    assert_eq!(j.kind, EventKind::Clock(0));
                    divisions += 1;
                }
                other => panic!("unexpected transition {other:?}"),
            }
        }
        assert!(divisions > 5);
    }

    #[test]
    fn two_phase_recursion_step_is_bounded_below() {
        // a newborn of size x enters phase B no smaller than x, and phase B
        // multiplies size by e^{t_B} when g(x) = x
        let p = TwoPhaseCellCycleParams { g: field(|x| x), phi: field(|x| x), t_b: 0.5 };
        let rec = TwoPhaseRecursion::new(&p);
        let mut rng = stream_rng(2, 0);
        for _ in 0..100 {
            let x = 0.7;
            let next = rec.step(x, &mut rng).unwrap();
            assert!(next >= 0.5 * x * 0.5f64.exp() - 1e-12);
        }
    }

    #[test]
    fn gene_paths_stay_in_invariant_interval() {
        let p = GeneExpressionParams { p: 2.0, mu: 1.0, q0: field(|x| 1.0 + x), q1: 1.0.into() };
        let m = make_gene_expression(&p).unwrap();
        let mut rng = stream_rng(5, 0);
        let traj = simulate_trajectory(&m, ProcessState::new(vec![0.3], 0), 200.0, &SimOptions::default(), &mut rng).unwrap();
        assert!(traj.jumps.iter().all(|j| (0.0..=p.x_max()).contains(&j.pre[0])));
    }

    #[test]
    fn stein_threshold_rules() {
        let p = SteinParams { alpha: 1.0, a_e: 0.6, a_i: 0.5, lambda_e: 2.0, lambda_i: 1.0, theta: 1.0, t_r: 0.2 };
        let m = make_stein(&p).unwrap();
        let mut rng = stream_rng(6, 0);
        let traj = simulate_trajectory(&m, ProcessState::new(vec![0.0, 0.0], 0), 200.0, &SimOptions::default(), &mut rng).unwrap();
        let mut fired_at = None;
        let mut fires = 0;
        for j in &traj.jumps {
            if j.regime_pre == STEIN_ACTIVE {
                assert!(j.pre[0] < p.theta);
                if j.regime_post == STEIN_REFRACTORY {
                    assert!(j.pre[0] >= p.theta - p.a_e);
                    assert_eq!(j.post, vec![0.0, 0.0]);
                    fired_at = Some(j.t);
                    fires += 1;
                } else {
                    assert!(j.post[0] < p.theta);
                }
            } else {
                assert_abs_diff_eq!(j.t - fired_at.unwrap(), p.t_r, epsilon = 1e-12);
            }
        }
        assert!(fires > 10);
    }

    #[test]
    fn telegraph_slopes_are_unit() {
        let m = make_telegraph(1.0, 1.0).unwrap();
        let mut rng = stream_rng(8, 0);
        let traj = simulate_trajectory(&m, ProcessState::new(vec![0.0, 1.0], 0), 30.0, &SimOptions::default(), &mut rng).unwrap();
        for w in traj.segments.windows(2) {
            let slope = (w[1].state[0] - w[0].state[0]) / (w[1].t_start - w[0].t_start);
            assert_abs_diff_eq!(slope.abs(), 1.0, epsilon = 1e-9);
            assert!(w[1].state[0].abs() <= w[1].t_start + 1e-12);
        }
    }

    #[test]
    fn grasshopper_with_null_jumps_is_constant() {
        let m = make_grasshopper(1.0, JumpDistribution::Zero).unwrap();
        let mut rng = stream_rng(0, 1);
        let traj = simulate_trajectory(&m, ProcessState::new(vec![2.5], 0), 20.0, &SimOptions::default(), &mut rng).unwrap();
        assert!(!traj.jumps.is_empty());
        assert!(traj.jumps.iter().all(|j| j.post[0] == 2.5));
    }
}
