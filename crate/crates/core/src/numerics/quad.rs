//! Adaptive Gauss–Kronrod quadrature and a left-endpoint singularity probe.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

// 15-point Kronrod nodes with the embedded 7-point Gauss rule.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let s = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    let value = kronrod * half;
    let err = ((kronrod - gauss) * half).abs();
    (value, err)
}

/// Tolerances and budget for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self { abs_tol: 1e-13, rel_tol: 1e-11, max_intervals: 4000 }
    }
}

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Outcome of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub converged: bool,
}

/// Globally adaptive G7/K15 integration of `f` over `[a, b]`.
///
/// Endpoints are never evaluated, so integrable endpoint singularities are
/// tolerated (convergence may then stop short of the tolerance, which is
/// reported through `converged`).
pub fn integrate_raw<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, opts: QuadOptions) -> QuadResult {
    if a == b {
        return QuadResult { value: 0.0, error: 0.0, converged: true };
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let (v, e) = gk15(&mut f, lo, hi);
    let mut heap = BinaryHeap::new();
    heap.push(Piece { a: lo, b: hi, value: v, err: e });
    let mut total = v;
    let mut total_err = e;
    let mut converged = false;
    for _ in 0..opts.max_intervals {
        if total_err <= opts.abs_tol.max(opts.rel_tol * total.abs()) {
            converged = true;
            break;
        }
        let Some(worst) = heap.pop() else { break };
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval below floating resolution
            heap.push(worst);
            break;
        }
        let (v1, e1) = gk15(&mut f, worst.a, mid);
        let (v2, e2) = gk15(&mut f, mid, worst.b);
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.err;
        heap.push(Piece { a: worst.a, b: mid, value: v1, err: e1 });
        heap.push(Piece { a: mid, b: worst.b, value: v2, err: e2 });
    }
    // re-sum to shed accumulated cancellation in the running totals
    let value: f64 = heap.iter().map(|p| p.value).sum();
    let error: f64 = heap.iter().map(|p| p.err).sum();
    if !converged {
        converged = error <= opts.abs_tol.max(opts.rel_tol * value.abs());
    }
    QuadResult { value: sign * value, error, converged }
}

/// Adaptive integration that fails with [`Error::QuadratureFailure`] when the
/// tolerance cannot be met or the integrand is not finite.
pub fn integrate<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, opts: QuadOptions) -> Result<f64> {
    let r = integrate_raw(f, a, b, opts);
    if !r.value.is_finite() {
        return Err(Error::QuadratureFailure {
            lower: a.min(b),
            upper: a.max(b),
            detail: "non-finite integrand".into(),
        });
    }
    if !r.converged {
        return Err(Error::QuadratureFailure {
            lower: a.min(b),
            upper: a.max(b),
            detail: format!("error estimate {:.3e} above tolerance", r.error),
        });
    }
    Ok(r.value)
}

/// Shorthand with default options.
pub fn quad<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64) -> Result<f64> {
    integrate(f, a, b, QuadOptions::default())
}

/// Result of probing `∫_0^b f` for a singularity at the left endpoint.
#[derive(Debug, Clone)]
pub struct LeftEndpointProbe {
    /// Cut-offs `ε_k` used (decreasing).
    pub cutoffs: Vec<f64>,
    /// `∫_{ε_k}^b f` for each cut-off.
    pub partial: Vec<f64>,
    /// Fitted exponent `p` of the tail law `∫_ε^{ε_0} f ~ ε^{-p}`; positive
    /// means divergence.
    pub exponent: f64,
    /// Extrapolated value of the full integral when it converges.
    pub value: Option<f64>,
}

/// Tail law fitted to the contributions `pieces` of successive decades
/// towards an endpoint, after `partial` has been accumulated. Returns the
/// exponent `p` of `∫_ε ~ ε^{-p}` and the extrapolated total when `p < 0`.
pub fn fit_decade_tail(partial: f64, pieces: &[f64]) -> (f64, Option<f64>) {
    // Each decade contributes ~ C·ε^{-p}(10^p - 1); the log-ratio of
    // successive decades estimates p.
    let tail = &pieces[pieces.len().saturating_sub(3)..];
    let slopes: Vec<f64> = tail
        .windows(2)
        .filter(|w| w[0] > 0.0 && w[1] > 0.0)
        .map(|w| (w[1] / w[0]).log10())
        .collect();
    if slopes.is_empty() {
        // identically zero tail
        return (f64::NEG_INFINITY, Some(partial));
    }
    let exponent = slopes.iter().sum::<f64>() / slopes.len() as f64;
    if exponent < -1e-3 {
        let last = *pieces.last().unwrap();
        let ratio = 10f64.powf(exponent);
        (exponent, Some(partial + last * ratio / (1.0 - ratio)))
    } else {
        (exponent, None)
    }
}

/// Integrate a nonnegative `f` on `(0, b]` by pieces `[ε_{k+1}, ε_k]` for
/// `ε_k = 10^{-3-k}` down to `1e-8`, each in the log variable `x = e^u`, and
/// decide convergence from the decay of the piece contributions.
pub fn probe_left_endpoint<F: FnMut(f64) -> f64>(mut f: F, b: f64, opts: QuadOptions) -> Result<LeftEndpointProbe> {
    let first = 1e-3_f64.min(0.5 * b);
    let mut cutoffs = vec![first];
    for k in 1..=5 {
        cutoffs.push(first * 10f64.powi(-k));
    }
    let head = integrate(&mut f, first, b, opts)?;
    let mut partial = vec![head];
    let mut pieces = Vec::with_capacity(5);
    for w in cutoffs.windows(2) {
        let (hi, lo) = (w[0], w[1]);
        let raw = integrate_raw(
            |u: f64| {
                let x = u.exp();
                f(x) * x
            },
            lo.ln(),
            hi.ln(),
            opts,
        );
        if raw.value == f64::INFINITY || (raw.value.is_nan() && pieces.last().is_some_and(|&p: &f64| p > 0.0)) {
            // overflow towards the endpoint: divergence is certain
            return Ok(LeftEndpointProbe { cutoffs, partial, exponent: f64::INFINITY, value: None });
        }
        if !raw.converged || !raw.value.is_finite() {
            return Err(Error::QuadratureFailure { lower: lo, upper: hi, detail: format!("tail piece estimate {}", raw.value) });
        }
        let piece = raw.value;
        pieces.push(piece);
        partial.push(partial.last().unwrap() + piece);
    }
    let (exponent, value) = fit_decade_tail(*partial.last().unwrap(), &pieces);
    Ok(LeftEndpointProbe { cutoffs, partial, exponent, value })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let v = quad(|x| 3.0 * x * x, 0.0, 2.0).unwrap();
        assert!((v - 8.0).abs() < 1e-12);
    }

    #[test]
    fn reversed_limits_flip_sign() {
        let v = quad(|x| x.exp(), 1.0, 0.0).unwrap();
        assert!((v + (1f64.exp() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn integrable_endpoint_singularity() {
        // ∫_0^1 x^{-1/2} = 2
        let r = integrate_raw(|x| x.powf(-0.5), 0.0, 1.0, QuadOptions { max_intervals: 20000, ..Default::default() });
        assert!((r.value - 2.0).abs() < 1e-7, "{}", r.value);
    }

    #[test]
    fn probe_detects_convergence_and_divergence() {
        // x^{-1/2}: tail decades shrink like ε^{1/2}
        let conv = probe_left_endpoint(|x| x.powf(-0.5), 1.0, QuadOptions::default()).unwrap();
        assert!((conv.exponent + 0.5).abs() < 1e-6, "{}", conv.exponent);
        assert!((conv.value.unwrap() - 2.0).abs() < 1e-8);

        // x^{-1.75}: diverges with exponent 0.75
        let div = probe_left_endpoint(|x| x.powf(-1.75), 1.0, QuadOptions::default()).unwrap();
        assert!((div.exponent - 0.75).abs() < 1e-6, "{}", div.exponent);
        assert!(div.value.is_none());

        // 1/x: logarithmic divergence, exponent 0
        let log = probe_left_endpoint(|x| 1.0 / x, 1.0, QuadOptions::default()).unwrap();
        assert!(log.exponent.abs() < 1e-6);
        assert!(log.value.is_none());
    }
}
