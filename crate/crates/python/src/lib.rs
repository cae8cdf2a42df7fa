//! Python bindings. Results that are JSON documents on the Rust side come
//! back as plain Python dicts and lists.

use std::collections::BTreeMap;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use mpm_core::cme::{build_generator, caps_by_name, initial_distribution, stationary_distribution, transient_solve, DEFAULT_STATE_LIMIT};
use mpm_core::meanfield::{find_equilibria, integrate, limit_rates, EquilibriumOptions, OdeOptions};
use mpm_core::pipeline::{commute_compare, slow_histogram, CommuteOptions, HistogramOptions, SsaRequest};
use mpm_core::qe::{make_partition, qe_reduce_mpm, reducible_form, tikhonov_reduce, Backend, Partition, ReducedOde, DEFAULT_NEWTON_TOL, FAST_BOX_WIDTH};
use mpm_core::ssa::{run_ensemble, EnsembleOptions};
use mpm_core::stoich::{p_invariants, rank_codim, stoich_matrix};
use mpm_core::{fixtures, RateExpr, Scale};

create_exception!(mpm, MpmError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    MpmError::new_err(e.to_string())
}

fn json_to_py(py: Python<'_>, value: &impl serde::Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn caps(vars: &[String], trunc: Option<BTreeMap<String, i64>>) -> PyResult<Vec<Option<i64>>> {
    let pairs: Vec<(String, i64)> = trunc.unwrap_or_default().into_iter().collect();
    caps_by_name(vars, &pairs).map_err(err)
}

/// A Markov population model.
#[pyclass(module = "mpm", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Model {
    inner: mpm_core::Model,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Model {
            inner: mpm_core::Model::from_json(text).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Self::from_json(&std::fs::read_to_string(path).map_err(err)?)
    }

    /// One of the bundled models: gene, toggle, flip, birth.
    #[staticmethod]
    fn fixture(name: &str) -> PyResult<Self> {
        fixtures::by_name(name)
            .map(|inner| Model { inner })
            .ok_or_else(|| err(format!("no bundled model named `{name}`")))
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn vars(&self) -> Vec<String> {
        self.inner.vars.clone()
    }

    #[getter]
    fn params(&self) -> BTreeMap<String, f64> {
        self.inner.params.clone()
    }

    #[getter]
    fn init(&self) -> Vec<i64> {
        self.inner.init.clone()
    }

    #[getter]
    fn system_size(&self) -> f64 {
        self.inner.system_size()
    }

    #[getter]
    fn eps(&self) -> f64 {
        self.inner.eps()
    }

    fn with_param(&self, name: &str, value: f64) -> PyResult<Self> {
        Ok(Model {
            inner: self.inner.with_param(name, value).map_err(err)?,
        })
    }

    /// Rescale `N`, the initial state and finite bounds.
    fn with_system_size(&self, n: f64) -> PyResult<Self> {
        Ok(Model {
            inner: self.inner.with_system_size(n).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("Model({:?}, vars={:?})", self.inner.name, self.inner.vars)
    }
}

/// Stoichiometry, rank, codimension and p-invariants, plus the same for the
/// fast transitions after conserved totals are eliminated.
#[pyfunction]
fn invariants(py: Python<'_>, model: &Model) -> PyResult<Py<PyAny>> {
    let section = |m: &mpm_core::Model, subset: &[usize]| {
        let s = stoich_matrix(m, subset);
        let (rank, codim) = rank_codim(&s);
        serde_json::json!({ "vars": m.vars, "S": s.to_rows(), "rank": rank, "codim": codim, "p_invariants": p_invariants(&s) })
    };
    let m = &model.inner;
    let mut out = section(m, &(0..m.transitions.len()).collect::<Vec<_>>());
    if !m.indices_with_scale(Scale::Fast).is_empty() {
        let (prepared, _) = reducible_form(m).map_err(err)?;
        out["fast"] = section(&prepared, &prepared.indices_with_scale(Scale::Fast));
    }
    json_to_py(py, &out)
}

/// Ensemble moments on a uniform grid: dict with `t`, `mean`, `variance`.
#[pyfunction]
#[pyo3(signature = (model, t_end, replicates=100, seed=0, grid_points=101))]
fn simulate(py: Python<'_>, model: &Model, t_end: f64, replicates: usize, seed: u64, grid_points: usize) -> PyResult<Py<PyAny>> {
    let m = model.inner.clone();
    let ens = py
        .detach(move || run_ensemble(&m.compile()?, &EnsembleOptions::new(t_end, replicates, grid_points, seed)))
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("vars", ens.vars)?;
    d.set_item("t", ens.grid)?;
    d.set_item("mean", ens.mean)?;
    d.set_item("variance", ens.variance)?;
    Ok(d.into_any().unbind())
}

/// Truncated master equation. Returns `(states, probabilities)`; stationary
/// when `t` is omitted.
#[pyfunction]
#[pyo3(signature = (model, trunc=None, t=None))]
fn cme(py: Python<'_>, model: &Model, trunc: Option<BTreeMap<String, i64>>, t: Option<f64>) -> PyResult<(Vec<Vec<i64>>, Vec<f64>)> {
    let m = model.inner.clone();
    let caps = caps(&m.vars, trunc)?;
    py.detach(move || {
        let (index, g) = build_generator(&m.compile()?, &caps, DEFAULT_STATE_LIMIT)?;
        let p = match t {
            Some(t) => transient_solve(&g, &initial_distribution(&g), t)?,
            None => stationary_distribution(&g)?.pi,
        };
        Ok(((0..index.len()).map(|k| index.state(k)).collect(), p))
    })
    .map_err(|e: mpm_core::Error| err(e))
}

/// Mean-field ODE from the initial density: `(t, x)`.
#[pyfunction]
#[pyo3(signature = (model, t_end, tol=1e-8, points=101))]
fn meanfield(py: Python<'_>, model: &Model, t_end: f64, tol: f64, points: usize) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let m = model.inner.clone();
    let sol = py
        .detach(move || {
            let drift = limit_rates(&m)?;
            integrate(&drift, &drift.initial_density(), t_end, points, &OdeOptions { tol, ..OdeOptions::default() })
        })
        .map_err(err)?;
    Ok((sol.t, sol.x))
}

/// Equilibria of the mean-field drift, or of the fast field at slow
/// densities `fast`. `bounds` is one `(lo, hi)` per searched coordinate.
#[pyfunction]
#[pyo3(signature = (model, bounds=None, starts=64, fast=None))]
fn equilibria(py: Python<'_>, model: &Model, bounds: Option<Vec<(f64, f64)>>, starts: usize, fast: Option<Vec<f64>>) -> PyResult<Py<PyAny>> {
    let m = model.inner.clone();
    let opts = EquilibriumOptions {
        starts,
        ..EquilibriumOptions::default()
    };
    let set = py
        .detach(move || match fast {
            Some(y) => {
                let ode = reduced_ode(&m)?;
                let b = bounds.unwrap_or_else(|| ode.fast_box(FAST_BOX_WIDTH));
                find_equilibria(&ode.fast_field(&y), &b, &opts)
            }
            None => {
                let n = m.system_size();
                let b = bounds.unwrap_or_else(|| {
                    m.domain
                        .iter()
                        .map(|d| (d.lo as f64 / n, d.hi.map_or(d.lo as f64 / n + FAST_BOX_WIDTH, |h| h as f64 / n)))
                        .collect()
                });
                find_equilibria(&limit_rates(&m)?, &b, &opts)
            }
        })
        .map_err(err)?;
    json_to_py(py, &set)
}

fn partition(m: &mpm_core::Model) -> mpm_core::Result<Partition> {
    let (prepared, _) = reducible_form(m)?;
    make_partition(&prepared)
}

fn reduced_ode(m: &mpm_core::Model) -> mpm_core::Result<ReducedOde> {
    tikhonov_reduce(&partition(m)?, DEFAULT_NEWTON_TOL)
}

/// Tikhonov-reduced ODE on the slow clock: dict with `tau`, `y`, `z`.
#[pyfunction]
#[pyo3(signature = (model, t_end, points=101))]
fn qe_ode(py: Python<'_>, model: &Model, t_end: f64, points: usize) -> PyResult<Py<PyAny>> {
    let m = model.inner.clone();
    let traj = py
        .detach(move || reduced_ode(&m)?.integrate(t_end, points, &OdeOptions::default()))
        .map_err(err)?;
    json_to_py(py, &traj)
}

/// Slow manifold `φ(y)` of the reduced ODE.
#[pyfunction]
fn slow_manifold(model: &Model, y: Vec<f64>) -> PyResult<Vec<f64>> {
    reduced_ode(&model.inner).and_then(|ode| ode.phi(&y)).map_err(err)
}

fn backend(p: &Partition, kind: &str, fast_caps: Option<BTreeMap<String, i64>>, rates: Option<BTreeMap<String, String>>, seed: u64) -> PyResult<Backend> {
    match kind {
        "exact" => Ok(Backend::ExactCme {
            caps: if fast_caps.is_some() { caps(&p.fast_vars, fast_caps)? } else { Vec::new() },
        }),
        "nested" => Ok(Backend::NestedSsa {
            burn_in: None,
            horizon: None,
            seed,
        }),
        "closed" => {
            let rates = rates.ok_or_else(|| err("the closed backend needs `rates`"))?;
            let exprs = p
                .slow
                .iter()
                .map(|&j| {
                    let label = &p.image.transitions[j].label;
                    let text = rates.get(label).ok_or_else(|| err(format!("missing rate for `{label}`")))?;
                    RateExpr::parse(text).map_err(err)
                })
                .collect::<PyResult<_>>()?;
            Ok(Backend::ClosedForm(exprs))
        }
        other => Err(err(format!("unknown backend `{other}`"))),
    }
}

/// Quasi-equilibrium reduction of the stochastic model.
#[pyclass(module = "mpm", frozen)]
struct ReducedModel {
    inner: mpm_core::qe::ReducedMpm,
}

#[pymethods]
impl ReducedModel {
    #[getter]
    fn vars(&self) -> Vec<String> {
        self.inner.vars.clone()
    }

    #[getter]
    fn fast_vars(&self) -> Vec<String> {
        self.inner.fast_vars.clone()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.labels().to_vec()
    }

    /// Mean of the fast variables under their stationary law at slow counts `y`.
    fn fast_mean(&self, py: Python<'_>, y: Vec<f64>) -> PyResult<Vec<f64>> {
        py.detach(|| self.inner.fast_mean(&y)).map_err(err)
    }

    /// Averaged rates of the slow transitions at slow counts `y`.
    fn averaged_rates(&self, py: Python<'_>, y: Vec<f64>) -> PyResult<Vec<f64>> {
        py.detach(|| self.inner.averaged_rates(&y)).map_err(err)
    }

    /// The reduced model as a loadable model plus the rate table (CSV) when
    /// rates are tabulated.
    #[pyo3(signature = (trunc=None))]
    fn to_model(&self, py: Python<'_>, trunc: Option<BTreeMap<String, i64>>) -> PyResult<(Model, Option<String>)> {
        let caps = caps(&self.inner.vars, trunc)?;
        let (m, table) = py.detach(|| self.inner.to_model(&caps)).map_err(err)?;
        Ok((Model { inner: m }, table))
    }
}

#[pyfunction]
#[pyo3(signature = (model, backend="exact", fast_caps=None, rates=None, seed=0))]
fn qe_reduce(
    model: &Model,
    backend: &str,
    fast_caps: Option<BTreeMap<String, i64>>,
    rates: Option<BTreeMap<String, String>>,
    seed: u64,
) -> PyResult<ReducedModel> {
    let p = partition(&model.inner).map_err(err)?;
    let b = self::backend(&p, backend, fast_caps, rates, seed)?;
    Ok(ReducedModel {
        inner: qe_reduce_mpm(&p, b).map_err(err)?,
    })
}

/// Compare reduce-then-limit against limit-then-reduce; returns the report dict.
#[pyfunction]
#[pyo3(signature = (model, t_end, tol=1e-4, points=101, backend="exact", ssa_replicates=None, seed=0, doubling=true))]
#[allow(clippy::too_many_arguments)]
fn commute(
    py: Python<'_>,
    model: &Model,
    t_end: f64,
    tol: f64,
    points: usize,
    backend: &str,
    ssa_replicates: Option<usize>,
    seed: u64,
    doubling: bool,
) -> PyResult<Py<PyAny>> {
    let m = model.inner.clone();
    let mut opts = CommuteOptions::new(t_end);
    opts.tol = tol;
    opts.points = points;
    opts.doubling = doubling;
    opts.backend = self::backend(&partition(&m).map_err(err)?, backend, None, None, seed)?;
    opts.ssa = ssa_replicates.map(|replicates| SsaRequest { replicates, seed });
    let report = py.detach(move || commute_compare(&m, &opts)).map_err(err)?;
    json_to_py(py, &report)
}

/// Long-run histogram of the first slow variable in density units.
#[pyfunction]
#[pyo3(signature = (model, horizon, replicates=64, seed=0, bin_width=0.1, start=None))]
fn histogram(py: Python<'_>, model: &Model, horizon: f64, replicates: usize, seed: u64, bin_width: f64, start: Option<Vec<i64>>) -> PyResult<Py<PyAny>> {
    let m = model.inner.clone();
    let mut opts = HistogramOptions::new(horizon, replicates, seed);
    opts.bin_width = bin_width;
    opts.start = start;
    let h = py.detach(move || slow_histogram(&m, &opts)).map_err(err)?;
    json_to_py(py, &h)
}

#[pymodule]
fn mpm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MpmError", m.py().get_type::<MpmError>())?;
    m.add_class::<Model>()?;
    m.add_class::<ReducedModel>()?;
    m.add_function(wrap_pyfunction!(invariants, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(cme, m)?)?;
    m.add_function(wrap_pyfunction!(meanfield, m)?)?;
    m.add_function(wrap_pyfunction!(equilibria, m)?)?;
    m.add_function(wrap_pyfunction!(qe_ode, m)?)?;
    m.add_function(wrap_pyfunction!(slow_manifold, m)?)?;
    m.add_function(wrap_pyfunction!(qe_reduce, m)?)?;
    m.add_function(wrap_pyfunction!(commute, m)?)?;
    m.add_function(wrap_pyfunction!(histogram, m)?)?;
    Ok(())
}
