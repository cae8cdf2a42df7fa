//! Mean-field limit: normalized rates, the drift field, ODE integration and
//! equilibria.

mod equilibria;
mod ode;

pub use equilibria::{eigenvalues, find_equilibria, jacobian, newton, JACOBIAN_STEP, Equilibrium, EquilibriumOptions, EquilibriumSet, Stability};
pub use ode::{integrate, integrate_fixed, integrate_with, OdeOptions, OdeSolution};

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{CompiledModel, Model, RateSource, Scale};

/// A smooth map `ℝⁿ → ℝⁿ`.
pub trait VectorField: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<()>;
}

/// Vector field backed by a closure.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&[f64], &mut [f64]) -> Result<()> + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnField { dim, f }
    }
}

impl<F> VectorField for FnField<F>
where
    F: Fn(&[f64], &mut [f64]) -> Result<()> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        (self.f)(x, out)
    }
}

/// Reference system size at which limit rates are evaluated.
pub const N_REF: f64 = 1e6;

const PROBES: usize = 20;
const PROBE_SEED: u64 = 0x6d65_616e;

/// Drift `F(x) = Σ ν_j f_j w_j(x)` with `w_j(x) = W₀_j(N_ref x)/N_ref` and
/// `f_j = ε` for slow transitions, `1` otherwise.
#[derive(Debug, Clone)]
pub struct DriftField {
    pub model_name: String,
    pub vars: Vec<String>,
    /// Reference size used for the limit.
    pub n_ref: f64,
    /// System size of the source model (for normalizing states).
    pub n_model: f64,
    w0: CompiledModel,
    updates: Vec<Vec<f64>>,
    factors: Vec<f64>,
    eps: f64,
}

/// Normalized limit rates of a model, checked for density dependence by
/// doubling the reference size at seeded probe points.
pub fn limit_rates(model: &Model) -> Result<DriftField> {
    let at = |n: f64| model.compile_with(&BTreeMap::from([("N".to_string(), n)]));
    let w0 = at(N_REF)?;
    let w0_double = at(2.0 * N_REF)?;
    let probes = probe_points(model, PROBES);
    let mut x_big = vec![0.0; model.dim()];
    for p in &probes {
        for j in 0..model.transitions.len() {
            for (xb, v) in x_big.iter_mut().zip(p) {
                *xb = v * N_REF;
            }
            let w = w0.base_rate_at(j, &x_big)? / N_REF;
            for (xb, v) in x_big.iter_mut().zip(p) {
                *xb = v * 2.0 * N_REF;
            }
            let w2 = w0_double.base_rate_at(j, &x_big)? / (2.0 * N_REF);
            if !((w2 - w).abs() <= 1e-6 * (1.0 + w.abs())) {
                return Err(Error::NotDensityDependent {
                    transition: model.transitions[j].label.clone(),
                });
            }
        }
    }
    let eps = model.eps();
    Ok(DriftField {
        model_name: model.name.clone(),
        vars: model.vars.clone(),
        n_ref: N_REF,
        n_model: model.system_size(),
        updates: model.transitions.iter().map(|t| t.update.iter().map(|&v| v as f64).collect()).collect(),
        factors: model
            .transitions
            .iter()
            .map(|t| if t.scale == Scale::Slow { eps } else { 1.0 })
            .collect(),
        eps,
        w0,
    })
}

/// Seeded points in the normalized domain box; unbounded coordinates are
/// sampled from `[lo/N, lo/N + 10]`.
pub fn probe_points(model: &Model, count: usize) -> Vec<Vec<f64>> {
    let n = model.system_size();
    let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
    (0..count)
        .map(|_| {
            model
                .domain
                .iter()
                .map(|b| {
                    let lo = b.lo as f64 / n;
                    let hi = b.hi.map_or(lo + 10.0, |h| h as f64 / n);
                    lo + (hi - lo) * rng.random::<f64>()
                })
                .collect()
        })
        .collect()
}

impl DriftField {
    pub fn n_transitions(&self) -> usize {
        self.updates.len()
    }

    pub fn update(&self, j: usize) -> &[f64] {
        &self.updates[j]
    }

    pub fn scale(&self, j: usize) -> Scale {
        self.w0.scale(j)
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Copy with a different `ε` (the limit rates do not depend on it).
    pub fn with_eps(&self, eps: f64) -> DriftField {
        let mut d = self.clone();
        d.eps = eps;
        for (j, f) in d.factors.iter_mut().enumerate() {
            if d.w0.scale(j) == Scale::Slow {
                *f = eps;
            }
        }
        d
    }

    /// Normalized base rate `w₀_j(x)` (no ε factor).
    pub fn w0(&self, j: usize, x: &[f64]) -> Result<f64> {
        let big: Vec<f64> = x.iter().map(|v| v * self.n_ref).collect();
        Ok(self.w0.base_rate_at(j, &big)? / self.n_ref)
    }

    /// All normalized base rates at `x`.
    pub fn w0_all(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let big: Vec<f64> = x.iter().map(|v| v * self.n_ref).collect();
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.w0.base_rate_at(j, &big)? / self.n_ref;
        }
        Ok(())
    }

    /// Initial density `X₀ / N` of the source model.
    pub fn initial_density(&self) -> Vec<f64> {
        self.w0.initial().iter().map(|&v| v as f64 / self.n_model).collect()
    }

    /// Normalized domain box.
    pub fn density_box(&self, unbounded_width: f64) -> Vec<(f64, f64)> {
        self.w0
            .bounds()
            .iter()
            .map(|b| {
                let lo = b.lo as f64 / self.n_model;
                (lo, b.hi.map_or(lo + unbounded_width, |h| h as f64 / self.n_model))
            })
            .collect()
    }
}

impl VectorField for DriftField {
    fn dim(&self) -> usize {
        self.vars.len()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let big: Vec<f64> = x.iter().map(|v| v * self.n_ref).collect();
        out.iter_mut().for_each(|o| *o = 0.0);
        for (j, nu) in self.updates.iter().enumerate() {
            let w = self.factors[j] * self.w0.base_rate_at(j, &big)? / self.n_ref;
            for (o, d) in out.iter_mut().zip(nu) {
                *o += d * w;
            }
        }
        Ok(())
    }
}
