//! Markov population models as data.
//!
//! A [`Model`] is the symbolic description (variables, box domain, parameters,
//! initial state, transitions with rate expressions). [`CompiledModel`] is the
//! evaluable form used by the simulators and solvers.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{CompiledExpr, RateExpr, Slot};

/// Time-scale class of a transition. Slow rates are multiplied by `eps`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Slow,
    Fast,
    Unscaled,
}

/// Per-variable bounds; `hi = None` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bound {
    pub lo: i64,
    pub hi: Option<i64>,
}

impl Bound {
    pub fn contains(&self, v: i64) -> bool {
        v >= self.lo && self.hi.is_none_or(|h| v <= h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub label: String,
    pub update: Vec<i64>,
    /// Base rate W₀; the effective rate applies the scale factor.
    pub rate: RateExpr,
    pub scale: Scale,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub name: String,
    pub vars: Vec<String>,
    pub domain: Vec<Bound>,
    pub params: BTreeMap<String, f64>,
    pub init: Vec<i64>,
    pub transitions: Vec<Transition>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    name: String,
    vars: Vec<String>,
    domain: Vec<(i64, Option<i64>)>,
    params: BTreeMap<String, f64>,
    init: Vec<i64>,
    transitions: Vec<TransitionDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransitionDoc {
    label: String,
    update: Vec<i64>,
    rate: String,
    scale: Scale,
}

impl Model {
    /// Parse and validate a JSON model document.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(text)?;
        let transitions = doc
            .transitions
            .into_iter()
            .map(|t| {
                let rate = RateExpr::parse(&t.rate).map_err(|e| match e {
                    Error::Syntax { pos, msg } => Error::Syntax {
                        pos,
                        msg: format!("{msg} (rate of transition `{}`)", t.label),
                    },
                    other => other,
                })?;
                Ok(Transition {
                    label: t.label,
                    update: t.update,
                    rate,
                    scale: t.scale,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = Model {
            name: doc.name,
            vars: doc.vars,
            domain: doc.domain.into_iter().map(|(lo, hi)| Bound { lo, hi }).collect(),
            params: doc.params,
            init: doc.init,
            transitions,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        let doc = ModelDoc {
            name: self.name.clone(),
            vars: self.vars.clone(),
            domain: self.domain.iter().map(|b| (b.lo, b.hi)).collect(),
            params: self.params.clone(),
            init: self.init.clone(),
            transitions: self
                .transitions
                .iter()
                .map(|t| TransitionDoc {
                    label: t.label.clone(),
                    update: t.update.clone(),
                    rate: t.rate.to_string(),
                    scale: t.scale,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("model documents always serialize")
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vars.len();
        if n == 0 {
            return Err(Error::InvalidModel("model has no variables".into()));
        }
        if self.transitions.is_empty() {
            return Err(Error::InvalidModel("model has no transitions".into()));
        }
        let mut seen = BTreeSet::new();
        for v in &self.vars {
            if !seen.insert(v.as_str()) {
                return Err(Error::InvalidModel(format!("duplicate variable `{v}`")));
            }
            if self.params.contains_key(v) {
                return Err(Error::InvalidModel(format!("`{v}` is both a variable and a parameter")));
            }
        }
        check_len("domain", n, self.domain.len())?;
        check_len("init", n, self.init.len())?;
        for (v, b) in self.vars.iter().zip(&self.domain) {
            if b.lo < 0 || b.hi.is_some_and(|h| h < b.lo) {
                return Err(Error::InvalidModel(format!("invalid bounds for `{v}`")));
            }
        }
        for (k, v) in &self.params {
            if !v.is_finite() {
                return Err(Error::InvalidModel(format!("parameter `{k}` is not finite")));
            }
        }
        match self.params.get("N") {
            Some(&n) if n >= 1.0 => {}
            Some(_) => return Err(Error::InvalidModel("system size `N` must be at least 1".into())),
            None => return Err(Error::InvalidModel("missing parameter `N`".into())),
        }
        match self.params.get("eps") {
            Some(&e) if e > 0.0 => {}
            Some(_) => return Err(Error::InvalidModel("`eps` must be positive".into())),
            None => return Err(Error::InvalidModel("missing parameter `eps`".into())),
        }
        for t in &self.transitions {
            check_len(&format!("update of transition `{}`", t.label), n, t.update.len())?;
            for s in t.rate.symbols() {
                if !self.vars.contains(&s) && !self.params.contains_key(&s) {
                    return Err(Error::UnknownSymbol {
                        symbol: s,
                        context: format!("rate of transition `{}`", t.label),
                    });
                }
            }
        }
        if !self.in_domain(&self.init) {
            return Err(Error::InitOutOfDomain { init: self.init.clone() });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.vars.len()
    }

    pub fn system_size(&self) -> f64 {
        self.params["N"]
    }

    pub fn eps(&self) -> f64 {
        self.params["eps"]
    }

    pub fn in_domain(&self, x: &[i64]) -> bool {
        x.len() == self.domain.len() && self.domain.iter().zip(x).all(|(b, &v)| b.contains(v))
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v == name)
    }

    /// Copy with one parameter replaced (or added), revalidated.
    pub fn with_param(&self, name: &str, value: f64) -> Result<Model> {
        let mut m = self.clone();
        m.params.insert(name.to_string(), value);
        m.validate()?;
        Ok(m)
    }

    /// Copy at a different system size: `N` is replaced and the initial state
    /// and finite bounds are rescaled proportionally (rounded to integers).
    pub fn with_system_size(&self, n_new: f64) -> Result<Model> {
        let ratio = n_new / self.system_size();
        let scale = |v: i64| (v as f64 * ratio).round() as i64;
        let mut m = self.clone();
        m.params.insert("N".into(), n_new);
        m.init = self.init.iter().map(|&v| scale(v)).collect();
        for b in &mut m.domain {
            b.lo = scale(b.lo);
            b.hi = b.hi.map(scale);
        }
        m.validate()?;
        Ok(m)
    }

    /// Density view x = X/N of a count vector.
    pub fn normalize(&self, x: &[i64]) -> Vec<f64> {
        let n = self.system_size();
        x.iter().map(|&v| v as f64 / n).collect()
    }

    /// Indices of transitions with the given scale tag.
    pub fn indices_with_scale(&self, scale: Scale) -> Vec<usize> {
        (0..self.transitions.len()).filter(|&j| self.transitions[j].scale == scale).collect()
    }

    pub fn compile(&self) -> Result<CompiledModel> {
        self.compile_with(&BTreeMap::new())
    }

    /// Compile with some parameters overridden (used for the limit-rate
    /// probes, which rescale `N`).
    pub fn compile_with(&self, overrides: &BTreeMap<String, f64>) -> Result<CompiledModel> {
        self.validate()?;
        let lookup = |name: &str| -> Option<f64> {
            overrides.get(name).or_else(|| self.params.get(name)).copied()
        };
        let resolve = |s: &str| -> Option<Slot> {
            self.var_index(s).map(Slot::Var).or_else(|| lookup(s).map(Slot::Value))
        };
        let eps = lookup("eps").expect("validated");
        let mut rates = Vec::with_capacity(self.transitions.len());
        let mut factors = Vec::with_capacity(self.transitions.len());
        let mut reads = Vec::with_capacity(self.transitions.len());
        for t in &self.transitions {
            let c = t.rate.compile(&resolve)?;
            let mut r: BTreeSet<usize> = c.vars().iter().copied().collect();
            r.extend(t.update.iter().enumerate().filter(|(_, &d)| d != 0).map(|(i, _)| i));
            reads.push(r.into_iter().collect());
            rates.push(c);
            factors.push(match t.scale {
                Scale::Slow => eps,
                Scale::Fast | Scale::Unscaled => 1.0,
            });
        }
        Ok(CompiledModel {
            labels: self.transitions.iter().map(|t| t.label.clone()).collect(),
            updates: self.transitions.iter().map(|t| t.update.clone()).collect(),
            scales: self.transitions.iter().map(|t| t.scale).collect(),
            rates,
            factors,
            reads,
            domain: self.domain.clone(),
            init: self.init.clone(),
            vars: self.vars.clone(),
            eps,
            n: lookup("N").expect("validated"),
        })
    }
}

fn check_len(context: &str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context: context.to_string(),
            expected,
            found,
        })
    }
}

/// Anything that behaves like an integer-state CTMC with finitely many
/// transitions: compiled models, reduced models with averaged rates.
pub trait RateSource: Sync {
    fn dim(&self) -> usize;
    fn n_transitions(&self) -> usize;
    fn update(&self, j: usize) -> &[i64];
    fn label(&self, j: usize) -> &str;
    /// Effective rate of transition `j` at `x`; zero when `x + ν_j` leaves
    /// the domain.
    fn rate(&self, j: usize, x: &[i64]) -> Result<f64>;
    fn in_domain(&self, x: &[i64]) -> bool;
    fn initial(&self) -> &[i64];
    fn var_names(&self) -> &[String];
    fn bounds(&self) -> &[Bound];
    /// Coordinates whose change can alter the rate of `j`.
    fn reads(&self, j: usize) -> &[usize];
}

/// Model with rate expressions compiled against fixed parameter values.
#[derive(Debug, Clone)]
pub struct CompiledModel {
    labels: Vec<String>,
    updates: Vec<Vec<i64>>,
    scales: Vec<Scale>,
    rates: Vec<CompiledExpr>,
    factors: Vec<f64>,
    reads: Vec<Vec<usize>>,
    domain: Vec<Bound>,
    init: Vec<i64>,
    vars: Vec<String>,
    eps: f64,
    n: f64,
}

impl CompiledModel {
    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn system_size(&self) -> f64 {
        self.n
    }

    pub fn scale(&self, j: usize) -> Scale {
        self.scales[j]
    }

    /// Multiplier turning W₀ into the effective rate.
    pub fn scale_factor(&self, j: usize) -> f64 {
        self.factors[j]
    }

    /// Raw base rate W₀ at a real-valued point, without domain handling.
    pub fn base_rate_at(&self, j: usize, x: &[f64]) -> Result<f64> {
        self.rates[j].eval(x).map_err(|msg| self.eval_error(j, msg))
    }

    /// Base rate W₀ at an integer state with boundary zeroing but without the
    /// scale factor.
    pub fn base_rate(&self, j: usize, x: &[i64]) -> Result<f64> {
        if !self.target_in_domain(j, x) {
            return Ok(0.0);
        }
        let v = self.rates[j].eval(x).map_err(|msg| self.eval_error(j, msg))?;
        if v < 0.0 {
            return Err(Error::NegativeRate {
                transition: self.labels[j].clone(),
                state: x.to_vec(),
                value: v,
            });
        }
        Ok(v.max(0.0))
    }

    fn target_in_domain(&self, j: usize, x: &[i64]) -> bool {
        self.updates[j]
            .iter()
            .zip(x)
            .zip(&self.domain)
            .all(|((&d, &v), b)| d == 0 || b.contains(v + d))
    }

    fn eval_error(&self, j: usize, msg: &str) -> Error {
        Error::Evaluation {
            context: format!("rate of transition `{}`", self.labels[j]),
            msg: msg.to_string(),
        }
    }
}

impl RateSource for CompiledModel {
    fn dim(&self) -> usize {
        self.vars.len()
    }

    fn n_transitions(&self) -> usize {
        self.updates.len()
    }

    fn update(&self, j: usize) -> &[i64] {
        &self.updates[j]
    }

    fn label(&self, j: usize) -> &str {
        &self.labels[j]
    }

    fn rate(&self, j: usize, x: &[i64]) -> Result<f64> {
        Ok(self.factors[j] * self.base_rate(j, x)?)
    }

    fn in_domain(&self, x: &[i64]) -> bool {
        self.domain.iter().zip(x).all(|(b, &v)| b.contains(v))
    }

    fn initial(&self) -> &[i64] {
        &self.init
    }

    fn var_names(&self) -> &[String] {
        &self.vars
    }

    fn bounds(&self) -> &[Bound] {
        &self.domain
    }

    fn reads(&self, j: usize) -> &[usize] {
        &self.reads[j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn gene_fixture_parses() {
        let m = fixtures::gene();
        assert_eq!(m.dim(), 3);
        assert_eq!(m.transitions.len(), 4);
        let updates: Vec<_> = m.transitions.iter().map(|t| t.update.clone()).collect();
        assert_eq!(updates, vec![vec![0, 0, 1], vec![0, 0, -1], vec![-1, 1, 0], vec![1, -1, 0]]);
    }

    #[test]
    fn update_length_mismatch() {
        let text = fixtures::GENE_JSON.replacen("[0, 0, 1]", "[0, 1]", 1);
        let err = Model::from_json(&text).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 3, found: 2, .. }), "{err:?}");
    }

    #[test]
    fn unknown_rate_symbol() {
        let text = fixtures::GENE_JSON.replacen("k_d * X3", "k_z * X3", 1);
        let err = Model::from_json(&text).unwrap_err();
        assert!(matches!(err, Error::UnknownSymbol { ref symbol, .. } if symbol == "k_z"), "{err:?}");
    }

    #[test]
    fn init_out_of_domain() {
        let text = fixtures::GENE_JSON.replacen("\"init\": [100, 0, 0]", "\"init\": [101, 0, 0]", 1);
        assert!(matches!(Model::from_json(&text).unwrap_err(), Error::InitOutOfDomain { .. }));
    }

    #[test]
    fn malformed_json_reports_location() {
        let err = Model::from_json("{\n  \"name\": }").unwrap_err();
        assert!(matches!(err, Error::Json { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn missing_or_bad_scale_parameters() {
        let m = fixtures::gene();
        assert!(m.with_param("eps", 0.0).is_err());
        assert!(m.with_param("N", 0.5).is_err());
        let mut m2 = m.clone();
        m2.params.remove("eps");
        assert!(m2.validate().is_err());
    }

    #[test]
    fn repress_rate_is_bimolecular() {
        let m = fixtures::gene().with_param("N", 2.0).unwrap().with_param("k_b", 1.0).unwrap();
        let c = m.compile().unwrap();
        assert_eq!(c.rate(3, &[1, 3, 4]).unwrap(), 6.0);
    }

    #[test]
    fn slow_rate_carries_eps() {
        let m = fixtures::gene().with_param("k_p", 2.0).unwrap().with_param("eps", 0.1).unwrap();
        let c = m.compile().unwrap();
        let r = c.rate(0, &[95, 5, 0]).unwrap();
        assert!((r - 1.0).abs() < 1e-15, "{r}");
    }

    #[test]
    fn leaving_the_domain_zeroes_the_rate() {
        let c = fixtures::gene().compile().unwrap();
        assert_eq!(c.rate(1, &[100, 0, 0]).unwrap(), 0.0);
        assert_eq!(c.rate(2, &[0, 100, 3]).unwrap(), 0.0);
    }

    #[test]
    fn negative_rate_is_reported_with_state() {
        let mut m = fixtures::birth();
        m.transitions[0].rate = RateExpr::parse("lambda - X").unwrap();
        let c = m.compile().unwrap();
        match c.rate(0, &[7]).unwrap_err() {
            Error::NegativeRate { state, .. } => assert_eq!(state, vec![7]),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn division_by_zero_is_an_evaluation_error() {
        let mut m = fixtures::birth();
        m.transitions[0].rate = RateExpr::parse("lambda / X").unwrap();
        let c = m.compile().unwrap();
        assert!(matches!(c.rate(0, &[0]).unwrap_err(), Error::Evaluation { .. }));
    }

    #[test]
    fn json_round_trip() {
        for m in [fixtures::gene(), fixtures::toggle(), fixtures::flip(), fixtures::birth()] {
            assert_eq!(Model::from_json(&m.to_json()).unwrap(), m);
        }
    }

    #[test]
    fn rescaling_system_size() {
        let m = fixtures::gene().with_system_size(200.0).unwrap();
        assert_eq!(m.init, vec![200, 0, 0]);
        assert_eq!(m.domain[0].hi, Some(200));
        assert_eq!(m.domain[2].hi, None);
    }

    #[test]
    fn small_truncation_rates_are_nonnegative_and_vanish_on_boundary() {
        let m = fixtures::gene().with_system_size(2.0).unwrap();
        let c = m.compile().unwrap();
        for x1 in 0..=2 {
            for x2 in 0..=2 {
                for x3 in 0..=5 {
                    let x = [x1, x2, x3];
                    for j in 0..4 {
                        let r = c.rate(j, &x).unwrap();
                        assert!(r >= 0.0);
                        let y: Vec<i64> = x.iter().zip(c.update(j)).map(|(a, b)| a + b).collect();
                        if !m.in_domain(&y) {
                            assert_eq!(r, 0.0);
                        }
                        assert_eq!(r.to_bits(), c.rate(j, &x).unwrap().to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn dependency_sets_include_update_support() {
        let c = fixtures::gene().compile().unwrap();
        assert_eq!(c.reads(0), &[1, 2]);
        assert_eq!(c.reads(3), &[0, 1, 2]);
    }
}
