//! Quasi-equilibrium reduction.
//!
//! Transitions are tagged slow or fast in the model. The p-invariants `C` of
//! the fast stoichiometry define slow variables `Y = Cᵀ X`; the completion
//! `K` defines fast variables `Z = Kᵀ X`. Everything downstream works on the
//! image of the model under `A = (C, K)`, whose first `m` coordinates are `Y`.
//!
//! Two reductions are provided:
//!
//! * [`ReducedOde`]: the deterministic one. Fast variables are slaved to the
//!   stable root `φ(y)` of `H(y, ·)` and `y` follows `G(y, φ(y))` in slow time.
//! * [`ReducedMpm`]: the stochastic one. Slow transitions keep their updates
//!   `μ = Cᵀ ν` and get rates averaged over the stationary law of the fast
//!   subsystem at fixed `Y`.

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cme::{build_generator, stationary_distribution, DEFAULT_STATE_LIMIT};
use crate::error::{Error, Result};
use crate::expr::{BinOp, CompiledExpr, RateExpr, Slot};
use crate::meanfield::{
    eigenvalues, find_equilibria, integrate, jacobian, limit_rates, newton, DriftField, Equilibrium,
    EquilibriumOptions, OdeOptions, Stability, VectorField,
};
use crate::model::{Bound, CompiledModel, Model, RateSource, Scale, Transition};
use crate::ssa::{estimate_stationary_from, RngSpec, StationaryOptions};
use crate::stoich::{apply_linear_image, complete_basis, p_invariants, stoich_matrix, Basis, RatMatrix};

/// Fast/slow split of a tagged model.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub slow: Vec<usize>,
    pub fast: Vec<usize>,
    /// `C` holds the fast p-invariants, `K` completes it.
    pub basis: Basis,
    pub slow_vars: Vec<String>,
    pub fast_vars: Vec<String>,
    /// `Cᵀν` of each slow transition, in the order of `slow`.
    pub mu: Vec<Vec<i64>>,
    /// `Kᵀν` of every transition, in model order.
    pub sigma: Vec<Vec<i64>>,
    /// The model over `(Y, Z)`; transitions keep their order and tags.
    pub image: Model,
}

impl Partition {
    /// Number of slow variables, `codim` of the fast stoichiometry.
    pub fn m(&self) -> usize {
        self.slow_vars.len()
    }

    /// Fast p-invariants as integer columns of `C`.
    pub fn fast_invariants(&self) -> Vec<Vec<i64>> {
        (0..self.basis.c.cols())
            .map(|k| {
                self.basis
                    .c
                    .column(k)
                    .iter()
                    .map(|q| q.to_integer().try_into().expect("p-invariant entries fit in i64"))
                    .collect()
            })
            .collect()
    }
}

/// Split by tags and build the slow/fast coordinates.
pub fn make_partition(model: &Model) -> Result<Partition> {
    if let Some(t) = model.transitions.iter().find(|t| t.scale == Scale::Unscaled) {
        return Err(Error::Untagged(t.label.clone()));
    }
    let slow = model.indices_with_scale(Scale::Slow);
    let fast = model.indices_with_scale(Scale::Fast);
    if slow.is_empty() {
        return Err(Error::EmptyPartition("slow"));
    }
    if fast.is_empty() {
        return Err(Error::EmptyPartition("fast"));
    }
    let n = model.dim();
    let inv = p_invariants(&stoich_matrix(model, &fast));
    if inv.is_empty() {
        return Err(Error::NotReducible);
    }
    let m = inv.len();
    let basis = complete_basis(&RatMatrix::from_int_columns(n, &inv), n)?;
    let image = apply_linear_image(model, &basis.matrix())?;
    for &j in &fast {
        // exact: C was computed in rational arithmetic
        assert!(image.transitions[j].update[..m].iter().all(|&v| v == 0));
    }
    Ok(Partition {
        mu: slow.iter().map(|&i| image.transitions[i].update[..m].to_vec()).collect(),
        sigma: image.transitions.iter().map(|t| t.update[m..].to_vec()).collect(),
        slow_vars: image.vars[..m].to_vec(),
        fast_vars: image.vars[m..].to_vec(),
        slow,
        fast,
        basis,
        image,
    })
}

/// Models with conserved quantities are first reduced by their p-invariants
/// so that the fast split only sees free directions.
pub fn reducible_form(model: &Model) -> Result<(Model, Option<crate::stoich::StoichReduction>)> {
    let all: Vec<usize> = (0..model.transitions.len()).collect();
    if p_invariants(&stoich_matrix(model, &all)).is_empty() {
        Ok((model.clone(), None))
    } else {
        let red = crate::stoich::stoich_reduce(model)?;
        Ok((red.model.clone(), Some(red)))
    }
}

// ---------------------------------------------------------------------------
// rate gap diagnostic

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRange {
    pub label: String,
    pub scale: Scale,
    /// Smallest positive effective rate seen, if any.
    pub min_positive: Option<f64>,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub probes: usize,
    pub max_slow_rate: f64,
    pub min_fast_rate: Option<f64>,
    /// Median over probes of total fast rate over total slow rate.
    pub gap_ratio: f64,
    pub per_transition: Vec<RateRange>,
    /// Probes where an active fast transition is slower than some slow one.
    pub violations: Vec<Vec<i64>>,
    pub warnings: Vec<String>,
}

/// Seeded in-domain states; unbounded coordinates are drawn from `[lo, lo + N]`.
pub fn sample_states(model: &Model, count: usize, seed: u64) -> Vec<Vec<i64>> {
    let n = model.system_size().round() as i64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            model
                .domain
                .iter()
                .map(|b| rng.random_range(b.lo..=b.hi.unwrap_or(b.lo + n)))
                .collect()
        })
        .collect()
}

/// Evaluate effective rates at the probes and compare the two classes.
/// Zero fast rates are not violations: the ordering is only required where a
/// fast transition is active.
pub fn check_rate_gap(model: &Model, p: &Partition, probes: &[Vec<i64>]) -> Result<GapReport> {
    let cm = model.compile()?;
    let r = model.transitions.len();
    let mut ranges: Vec<RateRange> = model
        .transitions
        .iter()
        .map(|t| RateRange {
            label: t.label.clone(),
            scale: t.scale,
            min_positive: None,
            max: 0.0,
        })
        .collect();
    let mut ratios = Vec::new();
    let mut violations = Vec::new();
    let mut w = vec![0.0; r];
    for x in probes {
        for (j, wj) in w.iter_mut().enumerate() {
            *wj = cm.rate(j, x)?;
            let rr = &mut ranges[j];
            rr.max = rr.max.max(*wj);
            if *wj > 0.0 {
                rr.min_positive = Some(rr.min_positive.map_or(*wj, |m| m.min(*wj)));
            }
        }
        let slow_max = p.slow.iter().map(|&i| w[i]).fold(0.0, f64::max);
        let slow_total: f64 = p.slow.iter().map(|&i| w[i]).sum();
        let fast_total: f64 = p.fast.iter().map(|&j| w[j]).sum();
        if slow_total > 0.0 {
            ratios.push(fast_total / slow_total);
        }
        if p.fast.iter().any(|&j| w[j] > 0.0 && w[j] < slow_max) {
            violations.push(x.clone());
        }
    }
    ratios.sort_by(f64::total_cmp);
    let gap_ratio = if ratios.is_empty() {
        f64::INFINITY
    } else {
        ratios[ratios.len() / 2]
    };
    let mut warnings = Vec::new();
    if !violations.is_empty() {
        warnings.push(format!(
            "rate ordering violated at {} of {} probes; no clear time-scale gap",
            violations.len(),
            probes.len()
        ));
    }
    if gap_ratio <= 1.0 {
        warnings.push(format!("median fast/slow rate ratio is {gap_ratio:.3}; no time-scale gap"));
    }
    Ok(GapReport {
        probes: probes.len(),
        max_slow_rate: p.slow.iter().map(|&i| ranges[i].max).fold(0.0, f64::max),
        min_fast_rate: p
            .fast
            .iter()
            .filter_map(|&j| ranges[j].min_positive)
            .reduce(f64::min),
        gap_ratio,
        per_transition: ranges,
        violations,
        warnings,
    })
}

// ---------------------------------------------------------------------------
// deterministic reduction

/// Density width used for unbounded fast coordinates in equilibrium searches.
pub const FAST_BOX_WIDTH: f64 = 15.0;

/// Slow-time reduced ODE `dy/dτ = G(y, φ(y))`.
#[derive(Debug)]
pub struct ReducedOde {
    pub slow_vars: Vec<String>,
    pub fast_vars: Vec<String>,
    field: DriftField,
    mu: Vec<(usize, Vec<f64>)>,
    sigma: Vec<(usize, Vec<f64>)>,
    z_bounds: Vec<(f64, f64)>,
    newton_tol: f64,
    /// Last root found; the next Newton solve starts here.
    warm: Mutex<Option<Vec<f64>>>,
}

/// Result of integrating the reduced ODE on a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReducedTrajectory {
    pub tau: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    /// `φ(y)` at each grid point.
    pub z: Vec<Vec<f64>>,
    /// Largest `‖H(y, φ(y))‖∞` over accepted steps.
    pub max_residual: f64,
    pub steps: usize,
}

pub const DEFAULT_NEWTON_TOL: f64 = 1e-10;

/// Build `G`, `H` and the root map from the mean-field limit of the image
/// model. `newton_tol` is relative to `1 + ‖z‖∞`.
pub fn tikhonov_reduce(p: &Partition, newton_tol: f64) -> Result<ReducedOde> {
    let field = limit_rates(&p.image)?;
    let m = p.m();
    let as_f64 = |v: &[i64]| v.iter().map(|&x| x as f64).collect::<Vec<f64>>();
    let z_bounds = field.density_box(f64::INFINITY)[m..].to_vec();
    Ok(ReducedOde {
        slow_vars: p.slow_vars.clone(),
        fast_vars: p.fast_vars.clone(),
        mu: p.slow.iter().zip(&p.mu).map(|(&i, mu)| (i, as_f64(mu))).collect(),
        sigma: p.fast.iter().map(|&j| (j, as_f64(&p.sigma[j]))).collect(),
        z_bounds,
        newton_tol,
        warm: Mutex::new(None),
        field,
    })
}

/// `z ↦ H(y, z)` at fixed `y`.
pub struct FastField<'a> {
    ode: &'a ReducedOde,
    y: Vec<f64>,
}

impl VectorField for FastField<'_> {
    fn dim(&self) -> usize {
        self.ode.fast_vars.len()
    }

    fn eval(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        self.ode.h(&self.y, z, out)
    }
}

impl ReducedOde {
    pub fn m(&self) -> usize {
        self.slow_vars.len()
    }

    fn point(&self, y: &[f64], z: &[f64]) -> Vec<f64> {
        y.iter().chain(z).copied().collect()
    }

    pub fn g(&self, y: &[f64], z: &[f64], out: &mut [f64]) -> Result<()> {
        let x = self.point(y, z);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, mu) in &self.mu {
            let w = self.field.w0(*i, &x)?;
            for (o, d) in out.iter_mut().zip(mu) {
                *o += d * w;
            }
        }
        Ok(())
    }

    pub fn h(&self, y: &[f64], z: &[f64], out: &mut [f64]) -> Result<()> {
        let x = self.point(y, z);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (j, sigma) in &self.sigma {
            let w = self.field.w0(*j, &x)?;
            for (o, d) in out.iter_mut().zip(sigma) {
                *o += d * w;
            }
        }
        Ok(())
    }

    pub fn fast_field(&self, y: &[f64]) -> FastField<'_> {
        FastField { ode: self, y: y.to_vec() }
    }

    /// Box for equilibrium searches over `z`; unbounded coordinates get
    /// `width` density units.
    pub fn fast_box(&self, width: f64) -> Vec<(f64, f64)> {
        self.z_bounds
            .iter()
            .map(|&(lo, hi)| (lo, if hi.is_finite() { hi } else { lo + width }))
            .collect()
    }

    /// Initial densities `(y₀, z₀)` of the image model.
    pub fn initial(&self) -> (Vec<f64>, Vec<f64>) {
        let x0 = self.field.initial_density();
        let m = self.m();
        (x0[..m].to_vec(), x0[m..].to_vec())
    }

    /// Root of `H(y, ·)` by Newton from `guess`, checked for stability.
    pub fn phi_from(&self, y: &[f64], guess: &[f64]) -> Result<Vec<f64>> {
        let f = self.fast_field(y);
        let scale = 1.0 + guess.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let (z, _) = newton(&f, guess, &self.z_bounds, self.newton_tol * scale, 100)
            .ok_or_else(|| Error::NewtonDivergence { y: y.to_vec() })?;
        let ev = eigenvalues(&jacobian(&f, &z, crate::meanfield::JACOBIAN_STEP)?);
        let max_real = ev.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max);
        if !(max_real < 0.0) {
            return Err(Error::UnstableRoot { y: y.to_vec(), max_real });
        }
        Ok(z)
    }

    /// `φ(y)`, warm-started from the previous root.
    pub fn phi(&self, y: &[f64]) -> Result<Vec<f64>> {
        let guess = self.warm.lock().unwrap().clone();
        let guess = match guess {
            Some(g) => g,
            None => self.settle(y, &self.initial().1)?,
        };
        let z = self.phi_from(y, &guess)?;
        *self.warm.lock().unwrap() = Some(z.clone());
        Ok(z)
    }

    /// Follow the fast dynamics `dz/ds = H(y, z)` from `z0` until it is
    /// nearly at rest. This picks the root whose basin contains `z0`.
    pub fn settle(&self, y: &[f64], z0: &[f64]) -> Result<Vec<f64>> {
        let f = self.fast_field(y);
        let mut z = z0.to_vec();
        let mut hz = vec![0.0; z.len()];
        let opts = OdeOptions {
            tol: 1e-9,
            ..OdeOptions::default()
        };
        for _ in 0..1000 {
            f.eval(&z, &mut hz)?;
            let scale = 1.0 + z.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if hz.iter().all(|v| v.abs() <= 1e-6 * scale) {
                return Ok(z);
            }
            z = integrate(&f, &z, 10.0, 2, &opts)?.last().to_vec();
        }
        Err(Error::NewtonDivergence { y: y.to_vec() })
    }

    /// Set the root branch by settling from `z0` at `y`.
    pub fn reset_branch(&self, y: &[f64], z0: &[f64]) -> Result<Vec<f64>> {
        let guess = self.settle(y, z0)?;
        let z = self.phi_from(y, &guess)?;
        *self.warm.lock().unwrap() = Some(z.clone());
        Ok(z)
    }

    /// Reduced drift `G(y, φ(y))`.
    pub fn drift(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        let z = self.phi(y)?;
        self.g(y, &z, out)
    }

    /// Integrate from the model's initial slow state over `[0, t_end]` in
    /// slow time. The root branch is the one the fast dynamics reach from
    /// the initial fast state.
    pub fn integrate(&self, t_end: f64, points: usize, opts: &OdeOptions) -> Result<ReducedTrajectory> {
        let (y0, z0) = self.initial();
        self.reset_branch(&y0, &z0)?;
        let grid = crate::ssa::uniform_grid(t_end, points);
        let mut max_residual = 0.0f64;
        let mut hz = vec![0.0; self.fast_vars.len()];
        let sol = crate::meanfield::integrate_with(self, &y0, &grid, opts, |_, y| {
            let z = self.phi(y)?;
            self.h(y, &z, &mut hz)?;
            max_residual = max_residual.max(hz.iter().fold(0.0f64, |a, v| a.max(v.abs())));
            Ok(())
        })?;
        // re-trace roots along the grid from the initial branch
        self.reset_branch(&y0, &z0)?;
        let z = sol.x.iter().map(|y| self.phi(y)).collect::<Result<Vec<_>>>()?;
        Ok(ReducedTrajectory {
            tau: sol.t,
            y: sol.x,
            z,
            max_residual,
            steps: sol.steps,
        })
    }
}

impl VectorField for ReducedOde {
    fn dim(&self) -> usize {
        self.m()
    }

    fn eval(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        self.drift(y, out)
    }
}

/// Full mean-field drift of the image model on the slow clock, `F(x)/ε`.
#[derive(Debug, Clone)]
pub struct SlowClock {
    pub field: DriftField,
}

impl SlowClock {
    pub fn new(p: &Partition, eps: f64) -> Result<Self> {
        Ok(SlowClock {
            field: limit_rates(&p.image)?.with_eps(eps),
        })
    }
}

impl VectorField for SlowClock {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.field.eval(x, out)?;
        let eps = self.field.eps();
        out.iter_mut().for_each(|o| *o /= eps);
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// uniqueness of the fast equilibrium

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Uniqueness {
    Unique,
    NonUnique,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessProbe {
    pub y: Vec<f64>,
    pub stable: usize,
    pub unstable: usize,
    pub marginal: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessWitness {
    pub y: Vec<f64>,
    pub equilibria: Vec<Equilibrium>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessReport {
    pub verdict: Uniqueness,
    pub probes: Vec<UniquenessProbe>,
    /// First few probes that are not unique.
    pub witnesses: Vec<UniquenessWitness>,
}

const MAX_WITNESSES: usize = 3;

/// Equilibria of `z ↦ H(y, z)` in `fast_box` at each `y`. Unique means one
/// stable equilibrium and nothing else at every probe.
pub fn check_fast_uniqueness(
    ode: &ReducedOde,
    y_grid: &[Vec<f64>],
    fast_box: &[(f64, f64)],
    opts: &EquilibriumOptions,
) -> Result<UniquenessReport> {
    let mut probes = Vec::with_capacity(y_grid.len());
    let mut witnesses = Vec::new();
    for y in y_grid {
        let set = find_equilibria(&ode.fast_field(y), fast_box, opts)?;
        let probe = UniquenessProbe {
            y: y.clone(),
            stable: set.count(Stability::Stable),
            unstable: set.count(Stability::Unstable),
            marginal: set.count(Stability::Marginal),
        };
        let unique = probe.stable == 1 && set.equilibria.len() == 1;
        if !unique && witnesses.len() < MAX_WITNESSES {
            witnesses.push(UniquenessWitness {
                y: y.clone(),
                equilibria: set.equilibria,
            });
        }
        probes.push(probe);
    }
    Ok(UniquenessReport {
        verdict: if witnesses.is_empty() {
            Uniqueness::Unique
        } else {
            Uniqueness::NonUnique
        },
        probes,
        witnesses,
    })
}

// ---------------------------------------------------------------------------
// stochastic reduction

/// How averaged slow rates are obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum Backend {
    /// One expression per slow transition over the slow variables and
    /// parameters, in the order of `Partition::slow`.
    ClosedForm(Vec<RateExpr>),
    /// Stationary CME of the fast subsystem. `caps` bound the fast
    /// variables; `None` uses the domain bound or [`AUTO_CAP_DENSITY`]`·N`.
    ExactCme { caps: Vec<Option<i64>> },
    /// Time averages of one long fast-subsystem run per slow state.
    /// Defaults: burn-in `20·max_j N / w_j(Y, Z₀)`, horizon 10× that.
    NestedSsa {
        burn_in: Option<f64>,
        horizon: Option<f64>,
        seed: u64,
    },
}

impl Backend {
    pub fn exact() -> Self {
        Backend::ExactCme { caps: Vec::new() }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Backend::ClosedForm(_) => "closed",
            Backend::ExactCme { .. } => "exact",
            Backend::NestedSsa { .. } => "nested",
        }
    }

    /// Same backend for a model of `factor` times the size.
    pub fn scaled(&self, factor: f64) -> Backend {
        match self {
            Backend::ExactCme { caps } => Backend::ExactCme {
                caps: caps.iter().map(|c| c.map(|c| (c as f64 * factor).ceil() as i64)).collect(),
            },
            other => other.clone(),
        }
    }
}

/// Truncation for unbounded fast variables, in density units.
pub const AUTO_CAP_DENSITY: f64 = 15.0;

/// Stationary law of the fast subsystem at one slow state.
#[derive(Debug, Clone, PartialEq)]
pub struct FastLaw {
    pub states: Vec<Vec<i64>>,
    pub probs: Vec<f64>,
    /// Standard errors of the fast means (sampling backends only).
    pub std_err: Option<Vec<f64>>,
}

impl FastLaw {
    pub fn mean(&self) -> Vec<f64> {
        let d = self.states.first().map_or(0, Vec::len);
        let mut m = vec![0.0; d];
        for (s, p) in self.states.iter().zip(&self.probs) {
            for (mi, &si) in m.iter_mut().zip(s) {
                *mi += p * si as f64;
            }
        }
        m
    }

    fn point_mass(state: Vec<i64>) -> Self {
        FastLaw {
            states: vec![state],
            probs: vec![1.0],
            std_err: None,
        }
    }
}

type Memo = Mutex<HashMap<Vec<u64>, Arc<OnceLock<Result<Arc<FastLaw>>>>>>;

/// Reduced Markov population model over the slow variables.
#[derive(Debug)]
pub struct ReducedMpm {
    pub name: String,
    pub vars: Vec<String>,
    pub fast_vars: Vec<String>,
    labels: Vec<String>,
    mu: Vec<Vec<i64>>,
    domain: Vec<Bound>,
    init: Vec<i64>,
    z0: Vec<i64>,
    reads: Vec<usize>,
    image: CompiledModel,
    params: BTreeMap<String, f64>,
    slow: Vec<usize>,
    fast: Vec<usize>,
    sigma: Vec<Vec<i64>>,
    z_bounds: Vec<Bound>,
    backend: Backend,
    closed: Vec<CompiledExpr>,
    key_coords: Vec<usize>,
    memo: Memo,
}

/// Build the reduced model with the chosen averaging backend.
pub fn qe_reduce_mpm(p: &Partition, backend: Backend) -> Result<ReducedMpm> {
    let m = p.m();
    let image = p.image.compile()?;
    let n_size = p.image.system_size();
    let z_bounds = p.image.domain[m..].to_vec();
    let backend = match backend {
        Backend::ExactCme { caps } => {
            if !caps.is_empty() && caps.len() != z_bounds.len() {
                return Err(Error::DimensionMismatch {
                    context: "fast truncation caps".into(),
                    expected: z_bounds.len(),
                    found: caps.len(),
                });
            }
            let auto = (AUTO_CAP_DENSITY * n_size).ceil() as i64;
            let caps = z_bounds
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    let given = caps.get(i).copied().flatten();
                    Some(match (b.hi, given) {
                        (Some(h), Some(c)) => h.min(c),
                        (Some(h), None) => h,
                        (None, Some(c)) => c,
                        (None, None) => b.lo + auto,
                    })
                })
                .collect();
            Backend::ExactCme { caps }
        }
        Backend::ClosedForm(exprs) if exprs.len() != p.slow.len() => {
            return Err(Error::DimensionMismatch {
                context: "closed-form averaged rates".into(),
                expected: p.slow.len(),
                found: exprs.len(),
            })
        }
        other => other,
    };
    let closed = match &backend {
        Backend::ClosedForm(exprs) => {
            let resolve = |s: &str| {
                p.slow_vars
                    .iter()
                    .position(|v| v == s)
                    .map(Slot::Var)
                    .or_else(|| p.image.params.get(s).map(|&v| Slot::Value(v)))
            };
            exprs.iter().map(|e| e.compile(&resolve)).collect::<Result<Vec<_>>>()?
        }
        _ => Vec::new(),
    };
    let key_coords = (0..m)
        .filter(|&k| {
            p.fast
                .iter()
                .any(|&j| p.image.transitions[j].rate.symbols().contains(&p.slow_vars[k]))
        })
        .collect();
    Ok(ReducedMpm {
        name: p.image.name.clone(),
        vars: p.slow_vars.clone(),
        fast_vars: p.fast_vars.clone(),
        labels: p.slow.iter().map(|&i| p.image.transitions[i].label.clone()).collect(),
        mu: p.mu.clone(),
        domain: p.image.domain[..m].to_vec(),
        init: p.image.init[..m].to_vec(),
        z0: p.image.init[m..].to_vec(),
        reads: (0..m).collect(),
        params: p.image.params.clone(),
        slow: p.slow.clone(),
        fast: p.fast.clone(),
        sigma: p.fast.iter().map(|&j| p.sigma[j].clone()).collect(),
        z_bounds,
        backend,
        closed,
        key_coords,
        memo: Mutex::new(HashMap::new()),
        image,
    })
}

/// Fast transitions at a frozen slow state, as a CTMC over `Z`.
struct FastSubsystem<'a> {
    red: &'a ReducedMpm,
    y: Vec<f64>,
    bounds: Vec<Bound>,
    init: Vec<i64>,
    reads: Vec<usize>,
}

impl<'a> FastSubsystem<'a> {
    fn new(red: &'a ReducedMpm, y: &[f64], caps: Option<&[Option<i64>]>) -> Self {
        let bounds: Vec<Bound> = red
            .z_bounds
            .iter()
            .enumerate()
            .map(|(i, b)| match caps.and_then(|c| c[i]) {
                Some(c) => Bound {
                    lo: b.lo,
                    hi: Some(b.hi.map_or(c, |h| h.min(c))),
                },
                None => *b,
            })
            .collect();
        let init = red
            .z0
            .iter()
            .zip(&bounds)
            .map(|(&z, b)| z.max(b.lo).min(b.hi.unwrap_or(i64::MAX)))
            .collect();
        FastSubsystem {
            red,
            y: y.to_vec(),
            bounds,
            init,
            reads: (0..red.fast_vars.len()).collect(),
        }
    }

    fn full_point(&self, z: &[i64]) -> Vec<f64> {
        self.y.iter().copied().chain(z.iter().map(|&v| v as f64)).collect()
    }
}

impl RateSource for FastSubsystem<'_> {
    fn dim(&self) -> usize {
        self.red.fast_vars.len()
    }

    fn n_transitions(&self) -> usize {
        self.red.fast.len()
    }

    fn update(&self, j: usize) -> &[i64] {
        &self.red.sigma[j]
    }

    fn label(&self, j: usize) -> &str {
        self.red.image.label(self.red.fast[j])
    }

    fn rate(&self, j: usize, z: &[i64]) -> Result<f64> {
        let ok = self.red.sigma[j]
            .iter()
            .zip(z)
            .zip(&self.bounds)
            .all(|((&d, &v), b)| d == 0 || b.contains(v + d));
        if !ok {
            return Ok(0.0);
        }
        let w = self.red.image.base_rate_at(self.red.fast[j], &self.full_point(z))?;
        if w < 0.0 {
            return Err(Error::NegativeRate {
                transition: self.label(j).to_string(),
                state: z.to_vec(),
                value: w,
            });
        }
        Ok(w)
    }

    fn in_domain(&self, z: &[i64]) -> bool {
        self.bounds.iter().zip(z).all(|(b, &v)| b.contains(v))
    }

    fn initial(&self) -> &[i64] {
        &self.init
    }

    fn var_names(&self) -> &[String] {
        &self.red.fast_vars
    }

    fn bounds(&self) -> &[Bound] {
        &self.bounds
    }

    fn reads(&self, _j: usize) -> &[usize] {
        &self.reads
    }
}

fn key_stream(key: &[u64]) -> u64 {
    // FNV-1a over the key words
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for w in key {
        for b in w.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

impl ReducedMpm {
    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn system_size(&self) -> f64 {
        self.image.system_size()
    }

    /// Number of distinct fast laws computed so far.
    pub fn memo_len(&self) -> usize {
        self.memo.lock().unwrap().len()
    }

    /// Stationary law of the fast subsystem at slow state `y` (counts, may
    /// be fractional). Computed once per distinct value of the slow
    /// coordinates that the fast rates read.
    pub fn fast_law(&self, y: &[f64]) -> Result<Arc<FastLaw>> {
        if matches!(self.backend, Backend::ClosedForm(_)) {
            return Err(Error::InvalidArgument("the closed-form backend has no fast law".into()));
        }
        let key: Vec<u64> = self.key_coords.iter().map(|&k| y[k].to_bits()).collect();
        let cell = {
            let mut memo = self.memo.lock().unwrap();
            match memo.entry(key.clone()) {
                Entry::Occupied(e) => e.get().clone(),
                Entry::Vacant(e) => e.insert(Arc::new(OnceLock::new())).clone(),
            }
        };
        cell.get_or_init(|| self.compute_law(y, &key).map(Arc::new)).clone()
    }

    fn compute_law(&self, y: &[f64], key: &[u64]) -> Result<FastLaw> {
        match &self.backend {
            Backend::ExactCme { caps } => {
                let sub = FastSubsystem::new(self, y, Some(caps));
                let (index, g) = build_generator(&sub, &vec![None; sub.dim()], DEFAULT_STATE_LIMIT)?;
                let st = stationary_distribution(&g)?;
                let (states, probs) = st
                    .pi
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(k, &p)| (index.state(k), p))
                    .unzip();
                Ok(FastLaw {
                    states,
                    probs,
                    std_err: None,
                })
            }
            Backend::NestedSsa { burn_in, horizon, seed } => {
                let sub = FastSubsystem::new(self, y, None);
                let burn_in = match burn_in {
                    Some(b) => *b,
                    None => {
                        // a channel firing at rate w needs about N/w time to move
                        // the fast state by O(N); the slowest such channel sets the clock
                        let z = sub.initial();
                        let n = self.system_size();
                        let mut clock: f64 = 0.0;
                        for j in 0..sub.n_transitions() {
                            let w = sub.rate(j, z)?;
                            if w > 0.0 {
                                clock = clock.max(n.max(1.0) / w);
                            }
                        }
                        if clock == 0.0 {
                            return Ok(FastLaw::point_mass(z.to_vec()));
                        }
                        20.0 * clock
                    }
                };
                let opts = StationaryOptions {
                    burn_in,
                    horizon: horizon.unwrap_or(10.0 * burn_in),
                    max_events: 1_000_000_000,
                    batches: 20,
                    joint: true,
                };
                let mut rng = RngSpec::new(*seed, key_stream(key)).rng();
                match estimate_stationary_from(&sub, sub.initial(), &opts, &mut rng, &[]) {
                    Ok(est) => {
                        let (states, probs) = est.joint.expect("joint occupation requested").into_iter().unzip();
                        Ok(FastLaw {
                            states,
                            probs,
                            std_err: Some(est.std_err),
                        })
                    }
                    // the fast chain settles in an absorbing state
                    Err(Error::Absorbed { state, .. }) => Ok(FastLaw::point_mass(state)),
                    Err(e) => Err(e),
                }
            }
            Backend::ClosedForm(_) => unreachable!("closed form has no fast law"),
        }
    }

    /// Mean of the fast variables under the fast stationary law at `y`.
    pub fn fast_mean(&self, y: &[f64]) -> Result<Vec<f64>> {
        Ok(self.fast_law(y)?.mean())
    }

    /// Averaged base rates `W̃_i(y)` of the slow transitions at a real slow
    /// state, without boundary handling.
    pub fn averaged_rates(&self, y: &[f64]) -> Result<Vec<f64>> {
        if let Backend::ClosedForm(_) = self.backend {
            return self
                .closed
                .iter()
                .enumerate()
                .map(|(i, e)| {
                    e.eval(y).map_err(|msg| Error::Evaluation {
                        context: format!("averaged rate of `{}`", self.labels[i]),
                        msg: msg.to_string(),
                    })
                })
                .collect();
        }
        let law = self.fast_law(y)?;
        let mut x: Vec<f64> = y.to_vec();
        x.resize(y.len() + self.fast_vars.len(), 0.0);
        let mut out = vec![0.0; self.slow.len()];
        for (z, p) in law.states.iter().zip(&law.probs) {
            for (xi, &zi) in x[y.len()..].iter_mut().zip(z) {
                *xi = zi as f64;
            }
            for (o, &i) in out.iter_mut().zip(&self.slow) {
                *o += p * self.image.base_rate_at(i, &x)?;
            }
        }
        for (k, &w) in out.iter().enumerate() {
            if w < -1e-12 * (1.0 + w.abs()) {
                return Err(Error::NegativeRate {
                    transition: self.labels[k].clone(),
                    state: y.iter().map(|v| v.round() as i64).collect(),
                    value: w,
                });
            }
        }
        Ok(out.into_iter().map(|w| w.max(0.0)).collect())
    }

    /// Finite-N drift `F̃ᴺ(y) = Σ μ_i W̃_i(N y) / N` on densities.
    pub fn drift(&self) -> ReducedDrift<'_> {
        ReducedDrift { red: self }
    }

    /// The reduced model as a document. Closed-form rates are written as
    /// expressions; averaged rates are tabulated over the integer slow box as
    /// `Σ_v w(v)·0^(Σ_k (Y_k − v_k)^2)`, with the table returned as CSV.
    pub fn to_model(&self, caps: &[Option<i64>]) -> Result<(Model, Option<String>)> {
        let m = self.vars.len();
        let domain: Vec<Bound> = self
            .domain
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let cap = caps.get(k).copied().flatten();
                Bound {
                    lo: b.lo,
                    hi: match (b.hi, cap) {
                        (Some(h), Some(c)) => Some(h.min(c)),
                        (h, c) => h.or(c),
                    },
                }
            })
            .collect();
        let mut params = self.params.clone();
        params.entry("eps".into()).or_insert(1.0);
        let (rates, table) = if let Backend::ClosedForm(exprs) = &self.backend {
            (exprs.clone(), None)
        } else {
            let mut lo = Vec::with_capacity(m);
            let mut hi = Vec::with_capacity(m);
            for (k, b) in domain.iter().enumerate() {
                lo.push(b.lo);
                hi.push(b.hi.ok_or_else(|| Error::MissingCap(self.vars[k].clone()))?);
            }
            let mut csv = format!("{},{}\n", self.vars.join(","), self.labels.join(","));
            let mut terms: Vec<Vec<RateExpr>> = vec![Vec::new(); self.labels.len()];
            let mut y = lo.clone();
            'outer: loop {
                let mut row: Vec<String> = y.iter().map(|v| v.to_string()).collect();
                for i in 0..self.labels.len() {
                    let w = self.rate(i, &y)?;
                    row.push(w.to_string());
                    if w > 0.0 {
                        terms[i].push(indicator_term(w, &self.vars, &y));
                    }
                }
                csv.push_str(&row.join(","));
                csv.push('\n');
                for k in (0..m).rev() {
                    if y[k] < hi[k] {
                        y[k] += 1;
                        continue 'outer;
                    }
                    y[k] = lo[k];
                }
                break;
            }
            let rates = terms
                .into_iter()
                .map(|ts| {
                    ts.into_iter()
                        .reduce(|a, b| RateExpr::binary(BinOp::Add, a, b))
                        .unwrap_or(RateExpr::constant(0.0))
                })
                .collect();
            (rates, Some(csv))
        };
        let model = Model {
            name: format!("{} (quasi-equilibrium)", self.name),
            vars: self.vars.clone(),
            domain,
            params,
            init: self.init.clone(),
            transitions: self
                .labels
                .iter()
                .zip(&self.mu)
                .zip(rates)
                .map(|((label, mu), rate)| Transition {
                    label: label.clone(),
                    update: mu.clone(),
                    rate,
                    scale: Scale::Unscaled,
                })
                .collect(),
        };
        model.validate()?;
        Ok((model, table))
    }
}

fn indicator_term(w: f64, vars: &[String], at: &[i64]) -> RateExpr {
    let dist = vars
        .iter()
        .zip(at)
        .map(|(v, &a)| {
            let d = RateExpr::binary(BinOp::Sub, RateExpr::symbol(v), RateExpr::constant(a as f64));
            RateExpr::binary(BinOp::Pow, d, RateExpr::constant(2.0))
        })
        .reduce(|a, b| RateExpr::binary(BinOp::Add, a, b))
        .expect("at least one slow variable");
    let ind = RateExpr::binary(BinOp::Pow, RateExpr::constant(0.0), dist);
    RateExpr::binary(BinOp::Mul, RateExpr::constant(w), ind)
}

impl RateSource for ReducedMpm {
    fn dim(&self) -> usize {
        self.vars.len()
    }

    fn n_transitions(&self) -> usize {
        self.labels.len()
    }

    fn update(&self, j: usize) -> &[i64] {
        &self.mu[j]
    }

    fn label(&self, j: usize) -> &str {
        &self.labels[j]
    }

    fn rate(&self, j: usize, y: &[i64]) -> Result<f64> {
        let inside = self.mu[j]
            .iter()
            .zip(y)
            .zip(&self.domain)
            .all(|((&d, &v), b)| d == 0 || b.contains(v + d));
        if !inside {
            return Ok(0.0);
        }
        let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
        Ok(self.averaged_rates(&yf)?[j])
    }

    fn in_domain(&self, y: &[i64]) -> bool {
        self.domain.iter().zip(y).all(|(b, &v)| b.contains(v))
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

    fn reads(&self, _j: usize) -> &[usize] {
        &self.reads
    }
}

/// Density drift of a reduced model, see [`ReducedMpm::drift`].
pub struct ReducedDrift<'a> {
    red: &'a ReducedMpm,
}

impl VectorField for ReducedDrift<'_> {
    fn dim(&self) -> usize {
        self.red.vars.len()
    }

    fn eval(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.red.system_size();
        let big: Vec<f64> = y.iter().map(|v| v * n).collect();
        let w = self.red.averaged_rates(&big)?;
        out.iter_mut().for_each(|o| *o = 0.0);
        for (mu, wi) in self.red.mu.iter().zip(&w) {
            for (o, &d) in out.iter_mut().zip(mu) {
                *o += d as f64 * wi / n;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::meanfield::integrate;

    fn gene_partition() -> Partition {
        let (m, _) = reducible_form(&fixtures::gene()).unwrap();
        make_partition(&m).unwrap()
    }

    #[test]
    fn gene_split() {
        let p = gene_partition();
        assert_eq!(p.slow_vars, vec!["X3"]);
        assert_eq!(p.fast_vars, vec!["X2"]);
        assert_eq!(p.fast_invariants(), vec![vec![0, 1]]);
        assert_eq!(p.mu, vec![vec![1], vec![-1]]);
        assert_eq!(p.slow, vec![0, 1]);
        assert_eq!(p.fast, vec![2, 3]);
    }

    #[test]
    fn toggle_split() {
        let p = make_partition(&fixtures::toggle()).unwrap();
        assert_eq!(p.slow_vars, vec!["X3"]);
        assert_eq!(p.fast_vars, vec!["X1", "X2"]);
        assert_eq!(p.slow, vec![4, 5]);
    }

    #[test]
    fn partition_errors() {
        let mut m = fixtures::gene();
        m.transitions[0].scale = Scale::Unscaled;
        assert_eq!(make_partition(&m).unwrap_err(), Error::Untagged("produce".into()));
        let mut m = fixtures::gene();
        m.transitions.iter_mut().for_each(|t| t.scale = Scale::Fast);
        assert_eq!(make_partition(&m).unwrap_err(), Error::EmptyPartition("slow"));
        // fast updates spanning everything leave no slow variable
        let mut m = fixtures::birth();
        m.transitions[0].scale = Scale::Fast;
        m.transitions.push(Transition {
            label: "slow".into(),
            update: vec![-1],
            rate: RateExpr::parse("X").unwrap(),
            scale: Scale::Slow,
        });
        assert_eq!(make_partition(&m).unwrap_err(), Error::NotReducible);
    }

    #[test]
    fn rate_gap() {
        let g = fixtures::gene().with_param("eps", 1e-3).unwrap();
        let p = make_partition(&g).unwrap();
        let probes = sample_states(&g, 100, 7);
        let r = check_rate_gap(&g, &p, &probes).unwrap();
        assert!(r.violations.is_empty() && r.warnings.is_empty(), "{r:?}");
        assert!(r.gap_ratio > 1e2 && r.gap_ratio < 1e4, "{}", r.gap_ratio);

        let g1 = fixtures::gene().with_param("eps", 1.0).unwrap();
        let r1 = check_rate_gap(&g1, &p, &probes).unwrap();
        assert!(!r1.warnings.is_empty());
    }

    #[test]
    fn gene_phi_and_drift() {
        let p = gene_partition();
        let ode = tikhonov_reduce(&p, DEFAULT_NEWTON_TOL).unwrap();
        for k in 0..50 {
            let y = 20.0 * k as f64 / 49.0;
            let z = ode.phi(&[y]).unwrap()[0];
            assert!((z - 1.0 / (1.0 + y)).abs() < 1e-8);
            let mut d = [0.0];
            ode.drift(&[y], &mut d).unwrap();
            assert!((d[0] - (1.0 / (1.0 + y) - y)).abs() < 1e-8);
        }
    }

    #[test]
    fn linear_fast_root_in_one_step() {
        // H = y - z through a bespoke two-variable model
        let m = Model::from_json(
            r#"{"name":"lin","vars":["Y","Z"],"domain":[[0,null],[0,null]],
            "params":{"N":10,"eps":0.1},"init":[10,0],
            "transitions":[
              {"label":"zin","update":[0,1],"rate":"Y","scale":"fast"},
              {"label":"zout","update":[0,-1],"rate":"Z","scale":"fast"},
              {"label":"ydeg","update":[-1,0],"rate":"Y","scale":"slow"}]}"#,
        )
        .unwrap();
        let p = make_partition(&m).unwrap();
        let ode = tikhonov_reduce(&p, DEFAULT_NEWTON_TOL).unwrap();
        let z = ode.phi_from(&[0.7], &[0.0]).unwrap();
        assert!((z[0] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn tikhonov_residual_along_solution() {
        let ode = tikhonov_reduce(&gene_partition(), DEFAULT_NEWTON_TOL).unwrap();
        let tr = ode.integrate(5.0, 11, &OdeOptions::default()).unwrap();
        assert!(tr.max_residual <= DEFAULT_NEWTON_TOL * 2.0);
        for (y, z) in tr.y.iter().zip(&tr.z) {
            assert!((z[0] - 1.0 / (1.0 + y[0])).abs() < 1e-9);
        }
    }

    #[test]
    fn toggle_branch_below_diagonal() {
        let p = make_partition(&fixtures::toggle()).unwrap();
        let ode = tikhonov_reduce(&p, DEFAULT_NEWTON_TOL).unwrap();
        let tr = ode.integrate(20.0, 5, &OdeOptions::default()).unwrap();
        let z = tr.z.last().unwrap();
        assert!((z[0] - 5.931).abs() < 1e-3 && (z[1] - 0.764).abs() < 1e-3, "{z:?}");
        assert!((tr.y.last().unwrap()[0] - 5.931).abs() < 1e-2);
    }

    #[test]
    fn uniqueness_verdicts() {
        let ode = tikhonov_reduce(&gene_partition(), DEFAULT_NEWTON_TOL).unwrap();
        let grid: Vec<Vec<f64>> = (0..50).map(|k| vec![20.0 * k as f64 / 49.0]).collect();
        let r = check_fast_uniqueness(&ode, &grid, &ode.fast_box(FAST_BOX_WIDTH), &EquilibriumOptions::default())
            .unwrap();
        assert_eq!(r.verdict, Uniqueness::Unique);

        let t = tikhonov_reduce(&make_partition(&fixtures::toggle()).unwrap(), DEFAULT_NEWTON_TOL).unwrap();
        let r = check_fast_uniqueness(&t, &[vec![1.0]], &t.fast_box(FAST_BOX_WIDTH), &EquilibriumOptions::default())
            .unwrap();
        assert_eq!(r.verdict, Uniqueness::NonUnique);
        assert_eq!((r.probes[0].stable, r.probes[0].unstable), (2, 1));
    }

    #[test]
    fn exact_backend_small_gene() {
        let g = fixtures::gene().with_system_size(4.0).unwrap();
        let (m, _) = reducible_form(&g).unwrap();
        let red = qe_reduce_mpm(&make_partition(&m).unwrap(), Backend::exact()).unwrap();
        let z = red.fast_mean(&[2.0]).unwrap()[0];
        assert!((z - 8.0 / 3.0).abs() < 1e-12);
        let w = red.averaged_rates(&[2.0]).unwrap();
        assert!((w[0] - 8.0 / 3.0).abs() < 1e-12 && (w[1] - 2.0).abs() < 1e-12);
        // Y = 0: repression is off and the gene ends up fully active
        assert!((red.fast_mean(&[0.0]).unwrap()[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn memo_is_keyed_by_referenced_coordinates() {
        let t = fixtures::toggle();
        let red = qe_reduce_mpm(&make_partition(&t).unwrap(), Backend::ExactCme { caps: vec![Some(60), Some(60)] }).unwrap();
        let a = red.averaged_rates(&[0.0]).unwrap();
        let b = red.averaged_rates(&[7.0]).unwrap();
        assert_eq!(a[0], b[0]);
        assert_eq!(red.memo_len(), 1);
        assert!((b[1] - 7.0).abs() < 1e-12);
    }

    #[test]
    fn nested_backend_agrees_with_exact() {
        let g = fixtures::gene().with_system_size(20.0).unwrap();
        let (m, _) = reducible_form(&g).unwrap();
        let p = make_partition(&m).unwrap();
        let nested = qe_reduce_mpm(
            &p,
            Backend::NestedSsa {
                burn_in: None,
                horizon: None,
                seed: 11,
            },
        )
        .unwrap();
        let y = 10.0;
        let law = nested.fast_law(&[y]).unwrap();
        let se = law.std_err.as_ref().unwrap()[0];
        let exact = 20.0 / (1.0 + y / 20.0);
        assert!((law.mean()[0] - exact).abs() <= 3.0 * se + 1e-12, "{} vs {exact} (se {se})", law.mean()[0]);
        // deterministic per slow state
        let again = qe_reduce_mpm(&p, nested.backend().clone()).unwrap().fast_law(&[y]).unwrap();
        assert_eq!(*law, *again);
    }

    #[test]
    fn closed_form_backend_matches_exact() {
        let g = fixtures::gene().with_system_size(10.0).unwrap();
        let (m, _) = reducible_form(&g).unwrap();
        let p = make_partition(&m).unwrap();
        let closed = qe_reduce_mpm(
            &p,
            Backend::ClosedForm(vec![
                RateExpr::parse("k_p * N * k_u / (k_u + k_b * X3 / N)").unwrap(),
                RateExpr::parse("k_d * X3").unwrap(),
            ]),
        )
        .unwrap();
        let exact = qe_reduce_mpm(&p, Backend::exact()).unwrap();
        for y in 0..=30 {
            let a = closed.rate(0, &[y]).unwrap();
            let b = exact.rate(0, &[y]).unwrap();
            assert!((a - b).abs() < 1e-10 * (1.0 + a));
        }
    }

    #[test]
    fn tabulated_model_round_trips() {
        let g = fixtures::gene().with_system_size(5.0).unwrap();
        let (m, _) = reducible_form(&g).unwrap();
        let red = qe_reduce_mpm(&make_partition(&m).unwrap(), Backend::exact()).unwrap();
        let (doc, table) = red.to_model(&[Some(12)]).unwrap();
        assert!(table.unwrap().starts_with("X3,produce,degrade\n"));
        let back = Model::from_json(&doc.to_json()).unwrap().compile().unwrap();
        for y in 0..=12 {
            for j in 0..2 {
                let a = back.rate(j, &[y]).unwrap();
                // the written domain is capped at 12
                let b = if y == 12 && j == 0 { 0.0 } else { red.rate(j, &[y]).unwrap() };
                assert!((a - b).abs() <= 1e-12 * (1.0 + b), "{y} {j}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn reduced_drift_matches_tikhonov_on_gene() {
        let (m, _) = reducible_form(&fixtures::gene()).unwrap();
        let p = make_partition(&m).unwrap();
        let red = qe_reduce_mpm(&p, Backend::exact()).unwrap();
        let ode = tikhonov_reduce(&p, DEFAULT_NEWTON_TOL).unwrap();
        let (mut a, mut b) = ([0.0], [0.0]);
        for y in [0.0, 0.3, 1.7, 4.2] {
            red.drift().eval(&[y], &mut a).unwrap();
            ode.drift(&[y], &mut b).unwrap();
            assert!((a[0] - b[0]).abs() < 1e-10, "{y}: {} vs {}", a[0], b[0]);
        }
    }

    #[test]
    fn slow_clock_full_ode_approaches_reduced() {
        let p = gene_partition();
        let ode = tikhonov_reduce(&p, DEFAULT_NEWTON_TOL).unwrap();
        let reduced = ode.integrate(5.0, 51, &OdeOptions::default()).unwrap();
        let sup = |eps: f64| {
            let full = SlowClock::new(&p, eps).unwrap();
            let x0 = full.field.initial_density();
            let sol = integrate(&full, &x0, 5.0, 51, &OdeOptions { tol: 1e-9, ..Default::default() }).unwrap();
            sol.x.iter().zip(&reduced.y).map(|(x, y)| (x[0] - y[0]).abs()).fold(0.0, f64::max)
        };
        let (a, b) = (sup(1e-1), sup(1e-2));
        assert!(b < a && a / b > 3.0, "{a} {b}");
    }
}
