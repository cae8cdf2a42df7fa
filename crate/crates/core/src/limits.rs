//! Empirical checks of the limit theorems behind the reductions. Each
//! function returns a single distance so that its behaviour along a sequence
//! (growing `N`, shrinking `ε`) can be inspected.

use std::collections::BTreeMap;

use crate::cme::{build_generator, caps_by_name, initial_distribution, total_variation, transient_solve, DEFAULT_STATE_LIMIT};
use crate::error::Result;
use crate::meanfield::{integrate, limit_rates, OdeOptions};
use crate::model::Model;
use crate::qe::{make_partition, qe_reduce_mpm, reducible_form, tikhonov_reduce, Backend, SlowClock, DEFAULT_NEWTON_TOL};
use crate::ssa::{run_ensemble, EnsembleOptions};

/// `sup_{t ≤ t_end} ‖mean SSA(t)/N − x(t)‖∞` over `points` grid times, with
/// `x` the mean-field solution from `X₀/N`. The model is used as given
/// (including its `ε`).
pub fn kurtz_gap(model: &Model, replicates: usize, seed: u64, t_end: f64, points: usize) -> Result<f64> {
    let drift = limit_rates(model)?.with_eps(model.eps());
    let x0 = drift.initial_density();
    let ode = integrate(&drift, &x0, t_end, points, &OdeOptions::default())?;
    let ens = run_ensemble(&model.compile()?, &EnsembleOptions::new(t_end, replicates, points, seed))?;
    let n = model.system_size();
    Ok(ens
        .mean
        .iter()
        .zip(&ode.x)
        .flat_map(|(m, x)| m.iter().zip(x).map(move |(a, b)| (a / n - b).abs()))
        .fold(0.0, f64::max))
}

/// `sup_{τ ≤ t_end} ‖y^ε(τ) − ȳ(τ)‖∞` between the slow coordinates of the
/// full mean-field ODE on the slow clock and the Tikhonov-reduced ODE.
pub fn tikhonov_gap(model: &Model, eps: f64, t_end: f64, points: usize) -> Result<f64> {
    let (prepared, _) = reducible_form(model)?;
    let p = make_partition(&prepared)?;
    let reduced = tikhonov_reduce(&p, DEFAULT_NEWTON_TOL)?.integrate(t_end, points, &OdeOptions::default())?;
    let full = SlowClock::new(&p, eps)?;
    let x0 = full.field.initial_density();
    let opts = OdeOptions {
        tol: 1e-10,
        ..OdeOptions::default()
    };
    let sol = integrate(&full, &x0, t_end, points, &opts)?;
    let m = p.m();
    Ok(sol
        .x
        .iter()
        .zip(&reduced.y)
        .flat_map(|(x, y)| x[..m].iter().zip(y).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max))
}

/// Total-variation distance at slow time `tau` between the law of the slow
/// variables under the full CME (run for `tau/ε`) and under the reduced CME
/// with exactly averaged rates. `caps` truncate variables by name; slow
/// variables that are also model variables share their cap.
pub fn qe_tv_gap(model: &Model, eps: f64, tau: f64, caps: &[(String, i64)]) -> Result<f64> {
    let (prepared, _) = reducible_form(&model.with_param("eps", eps)?)?;
    let p = make_partition(&prepared)?;
    let m = p.m();

    let full_caps: Vec<(String, i64)> =
        caps.iter().filter(|(v, _)| prepared.vars.contains(v)).cloned().collect();
    let image = p.image.compile()?;
    let (index, g) = build_generator(&image, &caps_by_name(&p.image.vars, &full_caps)?, DEFAULT_STATE_LIMIT)?;
    let pt = transient_solve(&g, &initial_distribution(&g), tau / eps)?;
    let mut full: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
    for (k, &pk) in pt.iter().enumerate() {
        if pk > 0.0 {
            *full.entry(index.state(k)[..m].to_vec()).or_insert(0.0) += pk;
        }
    }

    let red = qe_reduce_mpm(&p, Backend::exact())?;
    let slow_caps: Vec<(String, i64)> = caps.iter().filter(|(v, _)| p.slow_vars.contains(v)).cloned().collect();
    let (rindex, rg) = build_generator(&red, &caps_by_name(&p.slow_vars, &slow_caps)?, DEFAULT_STATE_LIMIT)?;
    let rt = transient_solve(&rg, &initial_distribution(&rg), tau)?;
    let mut reduced: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
    for (k, &pk) in rt.iter().enumerate() {
        if pk > 0.0 {
            reduced.insert(rindex.state(k), pk);
        }
    }

    let keys: Vec<&Vec<i64>> = full.keys().chain(reduced.keys()).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let a: Vec<f64> = keys.iter().map(|k| full.get(*k).copied().unwrap_or(0.0)).collect();
    let b: Vec<f64> = keys.iter().map(|k| reduced.get(*k).copied().unwrap_or(0.0)).collect();
    Ok(total_variation(&a, &b))
}
