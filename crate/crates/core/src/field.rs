use std::fmt;
use std::sync::Arc;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A real function of one real variable, with a fast path for constants.
#[derive(Clone)]
pub enum ScalarField {
    Constant(f64),
    Function(ScalarFn),
}

impl ScalarField {
    pub fn func(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        ScalarField::Function(Arc::new(f))
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            ScalarField::Constant(c) => *c,
            ScalarField::Function(f) => f(x),
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            ScalarField::Constant(c) => Some(*c),
            ScalarField::Function(_) => None,
        }
    }

    /// Central finite-difference derivative with step `1e-6·(1+|x|)`.
    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            ScalarField::Constant(_) => 0.0,
            ScalarField::Function(f) => {
                let h = 1e-6 * (1.0 + x.abs());
                (f(x + h) - f(x - h)) / (2.0 * h)
            }
        }
    }

    pub fn scaled(&self, k: f64) -> ScalarField {
        match self {
            ScalarField::Constant(c) => ScalarField::Constant(k * c),
            ScalarField::Function(f) => {
                let f = f.clone();
                ScalarField::func(move |x| k * f(x))
            }
        }
    }

    /// Minimum and maximum over `n` equispaced points of `[a, b]`.
    pub fn sampled_range(&self, a: f64, b: f64, n: usize) -> (f64, f64) {
        if let ScalarField::Constant(c) = self {
            return (*c, *c);
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let x = a + (b - a) * i as f64 / (n - 1).max(1) as f64;
            let v = self.eval(x);
            if v.is_nan() {
                return (f64::NAN, f64::NAN);
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

impl From<f64> for ScalarField {
    fn from(c: f64) -> Self {
        ScalarField::Constant(c)
    }
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarField::Constant(c) => write!(f, "Constant({c})"),
            ScalarField::Function(_) => f.write_str("Function(..)"),
        }
    }
}
