//! Model construction from a `[model]` section.

use std::collections::BTreeMap;

use exmex::prelude::*;
use pdmp::analysis::SwitchingSystem1D;
use pdmp::models::{
    make_allee, make_birth_switch, make_cell_cycle_one_phase, make_gene_expression, make_grasshopper, make_rubinow,
    make_stein, make_telegraph, make_two_phase_cell_cycle, AlleeParams, BirthSwitchParams, GeneExpressionParams,
    JumpDistribution, SteinParams, TwoPhaseCellCycleParams,
};
use pdmp::{PdmpModel, ScalarField};

use crate::config::{ModelConfig, Param};
use crate::error::CliError;

/// Parses an expression in the single variable `x`; expressions without
/// variables become constants.
pub fn parse_field(key: &str, text: &str) -> Result<ScalarField, CliError> {
    let expr = exmex::parse::<f64>(text).map_err(|e| CliError::config(key, format!("cannot parse {text:?}: {e}")))?;
    match expr.var_names() {
        [] => {
            let v = expr.eval(&[]).map_err(|e| CliError::config(key, format!("cannot evaluate {text:?}: {e}")))?;
            Ok(ScalarField::Constant(v))
        }
        [v] if v == "x" => Ok(ScalarField::func(move |x| expr.eval(&[x]).unwrap_or(f64::NAN))),
        names => Err(CliError::config(key, format!("expressions may only use the variable x (found {names:?})"))),
    }
}

pub fn param_field(key: &str, p: &Param) -> Result<ScalarField, CliError> {
    match p {
        Param::Number(v) => Ok(ScalarField::Constant(*v)),
        Param::Text(t) => parse_field(key, t),
    }
}

struct Params<'a> {
    model: &'a str,
    map: &'a BTreeMap<String, Param>,
}

impl<'a> Params<'a> {
    fn new(cfg: &'a ModelConfig, allowed: &[&str]) -> Result<Self, CliError> {
        if let Some(k) = cfg.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(CliError::config(
                &format!("model.params.{k}"),
                format!("unknown parameter for {} (expected one of {allowed:?})", cfg.name),
            ));
        }
        Ok(Self { model: &cfg.name, map: &cfg.params })
    }

    fn key(&self, name: &str) -> String {
        format!("model.params.{name}")
    }

    fn get(&self, name: &str) -> Result<&'a Param, CliError> {
        self.map.get(name).ok_or_else(|| CliError::config(&self.key(name), format!("required by {}", self.model)))
    }

    fn number(&self, name: &str) -> Result<f64, CliError> {
        match self.get(name)? {
            Param::Number(v) => Ok(*v),
            Param::Text(t) => match parse_field(&self.key(name), t)? {
                ScalarField::Constant(v) => Ok(v),
                ScalarField::Function(_) => Err(CliError::config(&self.key(name), "must be a number")),
            },
        }
    }

    fn number_or(&self, name: &str, default: f64) -> Result<f64, CliError> {
        if self.map.contains_key(name) {
            self.number(name)
        } else {
            Ok(default)
        }
    }

    fn field(&self, name: &str) -> Result<ScalarField, CliError> {
        param_field(&self.key(name), self.get(name)?)
    }

    fn text(&self, name: &str) -> Result<&'a str, CliError> {
        match self.get(name)? {
            Param::Text(t) => Ok(t),
            Param::Number(_) => Err(CliError::config(&self.key(name), "must be a string")),
        }
    }
}

/// A validated model description.
#[derive(Clone, Debug)]
pub enum ModelSpec {
    Grasshopper { lambda: f64, jumps: JumpDistribution },
    Telegraph { lambda: f64, c: f64 },
    CellCycle1p { g: ScalarField, phi: ScalarField },
    Rubinow { g: ScalarField, m: f64 },
    CellCycle2p(TwoPhaseCellCycleParams),
    Gene(GeneExpressionParams),
    Stein(SteinParams),
    Allee(AlleeParams),
    BirthSwitch(BirthSwitchParams),
    Population { g: ScalarField, b: ScalarField, d: ScalarField },
}

impl ModelSpec {
    pub fn from_config(cfg: &ModelConfig) -> Result<Self, CliError> {
        let spec = match cfg.name.as_str() {
            "grasshopper" => {
                let p = Params::new(cfg, &["lambda", "jump", "value", "a", "b", "p", "mean", "sd", "rate", "low", "high"])?;
                let kind = if cfg.params.contains_key("jump") { p.text("jump")? } else { "zero" };
                let jumps = match kind {
                    "zero" => JumpDistribution::Zero,
                    "constant" => JumpDistribution::Constant(p.number("value")?),
                    "two_point" => JumpDistribution::TwoPoint { a: p.number("a")?, b: p.number("b")?, p: p.number_or("p", 0.5)? },
                    "normal" => JumpDistribution::Normal { mean: p.number_or("mean", 0.0)?, sd: p.number("sd")? },
                    "exponential" => JumpDistribution::Exponential { rate: p.number("rate")? },
                    "uniform" => JumpDistribution::Uniform { low: p.number("low")?, high: p.number("high")? },
                    other => return Err(CliError::config("model.params.jump", format!("unknown jump distribution {other:?}"))),
                };
                ModelSpec::Grasshopper { lambda: p.number("lambda")?, jumps }
            }
            "telegraph" => {
                let p = Params::new(cfg, &["lambda", "c"])?;
                ModelSpec::Telegraph { lambda: p.number("lambda")?, c: p.number_or("c", 1.0)? }
            }
            "cell_cycle_1p" => {
                let p = Params::new(cfg, &["g", "phi"])?;
                ModelSpec::CellCycle1p { g: p.field("g")?, phi: p.field("phi")? }
            }
            "rubinow" => {
                let p = Params::new(cfg, &["g", "m"])?;
                ModelSpec::Rubinow { g: p.field("g")?, m: p.number("m")? }
            }
            "cell_cycle_2p" => {
                let p = Params::new(cfg, &["g", "phi", "t_B"])?;
                ModelSpec::CellCycle2p(TwoPhaseCellCycleParams { g: p.field("g")?, phi: p.field("phi")?, t_b: p.number("t_B")? })
            }
            "gene_expression" => {
                let p = Params::new(cfg, &["P", "mu", "q0", "q1"])?;
                ModelSpec::Gene(GeneExpressionParams { p: p.number("P")?, mu: p.number("mu")?, q0: p.field("q0")?, q1: p.field("q1")? })
            }
            "stein" => {
                let p = Params::new(cfg, &["alpha", "a_E", "a_I", "lambda_E", "lambda_I", "theta", "t_R"])?;
                ModelSpec::Stein(SteinParams {
                    alpha: p.number("alpha")?,
                    a_e: p.number("a_E")?,
                    a_i: p.number("a_I")?,
                    lambda_e: p.number("lambda_E")?,
                    lambda_i: p.number("lambda_I")?,
                    theta: p.number("theta")?,
                    t_r: p.number("t_R")?,
                })
            }
            "allee" => {
                let p = Params::new(cfg, &["lambda", "K", "A", "B", "q01", "q10"])?;
                ModelSpec::Allee(AlleeParams {
                    lambda: p.number("lambda")?,
                    k: p.number("K")?,
                    a: p.number("A")?,
                    b: p.number("B")?,
                    q01: p.field("q01")?,
                    q10: p.field("q10")?,
                })
            }
            "birth_switch" => {
                let p = Params::new(cfg, &["b0", "b1", "c", "mu", "q0", "q1"])?;
                ModelSpec::BirthSwitch(BirthSwitchParams {
                    b0: p.number("b0")?,
                    b1: p.number("b1")?,
                    c: p.number("c")?,
                    mu: p.number("mu")?,
                    q0: p.field("q0")?,
                    q1: p.field("q1")?,
                })
            }
            "population" => {
                let p = Params::new(cfg, &["g", "b", "d"])?;
                ModelSpec::Population { g: p.field("g")?, b: p.field("b")?, d: p.field("d")? }
            }
            other => {
                return Err(CliError::config(
                    "model.name",
                    format!("unknown model {other:?} (expected one of {:?})", pdmp::models::CATALOG),
                ))
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Grasshopper { .. } => "grasshopper",
            ModelSpec::Telegraph { .. } => "telegraph",
            ModelSpec::CellCycle1p { .. } => "cell_cycle_1p",
            ModelSpec::Rubinow { .. } => "rubinow",
            ModelSpec::CellCycle2p(_) => "cell_cycle_2p",
            ModelSpec::Gene(_) => "gene_expression",
            ModelSpec::Stein(_) => "stein",
            ModelSpec::Allee(_) => "allee",
            ModelSpec::BirthSwitch(_) => "birth_switch",
            ModelSpec::Population { .. } => "population",
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        match self {
            ModelSpec::Population { .. } => Ok(()),
            _ => self.pdmp().map(|_| ()),
        }
    }

    pub fn pdmp(&self) -> Result<PdmpModel, CliError> {
        Ok(match self {
            ModelSpec::Grasshopper { lambda, jumps } => make_grasshopper(*lambda, jumps.clone())?,
            ModelSpec::Telegraph { lambda, c } => make_telegraph(*lambda, *c)?,
            ModelSpec::CellCycle1p { g, phi } => make_cell_cycle_one_phase(g.clone(), phi.clone())?,
            ModelSpec::Rubinow { g, m } => make_rubinow(g.clone(), *m)?,
            ModelSpec::CellCycle2p(p) => make_two_phase_cell_cycle(p)?,
            ModelSpec::Gene(p) => make_gene_expression(p)?,
            ModelSpec::Stein(p) => make_stein(p)?,
            ModelSpec::Allee(p) => make_allee(p)?,
            ModelSpec::BirthSwitch(p) => make_birth_switch(p)?,
            ModelSpec::Population { .. } => {
                return Err(CliError::config("model.name", "the population model runs through the `population` command"))
            }
        })
    }

    /// Model regime of each regime of [`Self::switching_system`].
    pub fn system_regimes(&self) -> [usize; 2] {
        match self {
            // on the attractor the Allee regime is the decreasing one
            ModelSpec::Allee(_) => [1, 0],
            _ => [0, 1],
        }
    }

    /// The 1-D two-regime system of the switching models.
    pub fn switching_system(&self) -> Result<SwitchingSystem1D, CliError> {
        Ok(match self {
            ModelSpec::Gene(p) => p.switching_system()?,
            ModelSpec::Allee(p) => p.switching_system()?,
            ModelSpec::BirthSwitch(p) => p.switching_system()?,
            other => {
                return Err(CliError::config(
                    "model.name",
                    format!("{} is not a one-dimensional two-regime switching model", other.name()),
                ))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;

    fn model(text: &str) -> Result<ModelSpec, CliError> {
        let cfg = Config::parse(&format!("command = \"classify\"\n[model]\n{text}\n")).unwrap();
        ModelSpec::from_config(cfg.model.as_ref().unwrap())
    }

    #[test]
    fn expressions() {
        let f = parse_field("k", "1 + x^2").unwrap();
        assert_eq!(f.eval(2.0), 5.0);
        assert_eq!(parse_field("k", "2*3").unwrap().as_constant(), Some(6.0));
        assert!(parse_field("k", "y + 1").is_err());
        assert!(parse_field("k", "1 +").is_err());
    }

    #[test]
    fn builds_catalog_models() {
        assert!(matches!(model("name = \"gene_expression\"\nparams = { P = 1, mu = 1, q0 = \"1 + x\", q1 = 1 }"), Ok(ModelSpec::Gene(_))));
        assert!(model("name = \"telegraph\"\nparams = { lambda = 1 }").is_ok());
        assert!(model("name = \"grasshopper\"\nparams = { lambda = 2, jump = \"two_point\", a = 1, b = -1 }").is_ok());
        assert!(model("name = \"stein\"\nparams = { alpha = 1, a_E = 0.6, a_I = 0.5, lambda_E = 2, lambda_I = 1, theta = 1, t_R = 0.2 }").is_ok());
        assert!(model("name = \"population\"\nparams = { g = 0, b = 1, d = 0 }").is_ok());
    }

    #[test]
    fn rejects_bad_models() {
        let err = model("name = \"gene_expression\"\nparams = { P = -1, mu = 1, q0 = 1, q1 = 1 }").unwrap_err();
        assert!(matches!(err, CliError::Model(pdmp::Error::InvalidParam { .. })), "{err}");
        match model("name = \"telegraph\"\nparams = { lambda = 1, speed = 2 }").unwrap_err() {
            CliError::Config { key, .. } => assert_eq!(key.as_deref(), Some("model.params.speed")),
            e => panic!("{e}"),
        }
        match model("name = \"telegraph\"\nparams = { c = 2 }").unwrap_err() {
            CliError::Config { key, .. } => assert_eq!(key.as_deref(), Some("model.params.lambda")),
            e => panic!("{e}"),
        }
        assert!(model("name = \"nope\"").is_err());
    }
}
