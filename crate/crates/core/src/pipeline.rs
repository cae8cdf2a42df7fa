//! Mean-field limit and quasi-equilibrium reduction composed in both orders.
//!
//! `q_of_m` takes the mean-field ODE and reduces it (fast variables slaved to
//! their stable root). `m_of_q` averages the fast subsystem first and then
//! takes the drift of the reduced process at finite `N`. Both run in slow
//! time on densities, so the trajectories are directly comparable.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::meanfield::{integrate, EquilibriumOptions, OdeOptions};
use crate::model::{Model, RateSource};
use crate::qe::{
    check_fast_uniqueness, make_partition, qe_reduce_mpm, reducible_form, tikhonov_reduce, Backend, Partition,
    ReducedTrajectory, Uniqueness, UniquenessReport, DEFAULT_NEWTON_TOL, FAST_BOX_WIDTH,
};
use crate::ssa::{estimate_stationary_from, run_ensemble, uniform_grid, EnsembleOptions, RngSpec, StationaryOptions};

/// Deterministic branch: mean-field limit, then Tikhonov reduction.
pub fn q_of_m(p: &Partition, t_end: f64, points: usize, ode: &OdeOptions) -> Result<ReducedTrajectory> {
    tikhonov_reduce(p, DEFAULT_NEWTON_TOL)?.integrate(t_end, points, ode)
}

/// Trajectory of the finite-size reduced drift, with the same run at `2N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MqResult {
    pub tau: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    /// `sup_τ ‖y_N − y_2N‖∞`, when the doubled run succeeded.
    pub doubling_gap: Option<f64>,
    pub doubling_error: Option<String>,
    pub fast_laws: usize,
}

fn mq_trajectory(p: &Partition, backend: &Backend, t_end: f64, points: usize, ode: &OdeOptions) -> Result<(Vec<f64>, Vec<Vec<f64>>, usize)> {
    let red = qe_reduce_mpm(p, backend.clone())?;
    let n = red.system_size();
    let y0: Vec<f64> = red.initial().iter().map(|&v| v as f64 / n).collect();
    let sol = integrate(&red.drift(), &y0, t_end, points, ode)?;
    Ok((sol.t, sol.x, red.memo_len()))
}

/// Stochastic branch: quasi-equilibrium reduction, then the drift
/// `F̃ᴺ(y) = Σ μ_i W̃_i(N y) / N` integrated in slow time. `model` must be
/// the model `p` was built from; it is rescaled for the doubling probe.
pub fn m_of_q(model: &Model, p: &Partition, backend: &Backend, t_end: f64, points: usize, ode: &OdeOptions, doubling: bool) -> Result<MqResult> {
    let (tau, y, fast_laws) = mq_trajectory(p, backend, t_end, points, ode)?;
    let (mut doubling_gap, mut doubling_error) = (None, None);
    if doubling {
        let probe = model
            .with_system_size(2.0 * model.system_size())
            .and_then(|m2| make_partition(&m2))
            .and_then(|p2| mq_trajectory(&p2, &backend.scaled(2.0), t_end, points, ode));
        match probe {
            Ok((_, y2, _)) => doubling_gap = Some(sup_distance(&y, &y2)),
            Err(e) => doubling_error = Some(e.to_string()),
        }
    }
    Ok(MqResult {
        tau,
        y,
        doubling_gap,
        doubling_error,
        fast_laws,
    })
}

/// `sup_k ‖a_k − b_k‖∞` over paired grid points.
pub fn sup_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(u, v)| u.iter().zip(v).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Commutes,
    NonCommuting,
    Inconclusive,
}

/// Full-model SSA ensemble attached to a comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct SsaRequest {
    pub replicates: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct CommuteOptions {
    /// Slow-time horizon.
    pub t_end: f64,
    pub points: usize,
    /// Threshold on the sup distance, in density units.
    pub tol: f64,
    pub backend: Backend,
    pub ode: OdeOptions,
    pub doubling: bool,
    /// Slow states at which fast uniqueness is checked, taken along `y_QM`.
    pub uniqueness_probes: usize,
    pub equilibria: EquilibriumOptions,
    pub ssa: Option<SsaRequest>,
}

impl CommuteOptions {
    pub fn new(t_end: f64) -> Self {
        CommuteOptions {
            t_end,
            points: 101,
            tol: 1e-4,
            backend: Backend::exact(),
            ode: OdeOptions::default(),
            doubling: true,
            uniqueness_probes: 11,
            equilibria: EquilibriumOptions::default(),
            ssa: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageStatus {
    pub ok: bool,
    pub error: Option<String>,
}

impl StageStatus {
    fn of<T>(r: &Result<T>) -> Self {
        StageStatus {
            ok: r.is_ok(),
            error: r.as_ref().err().map(|e| e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stages {
    pub q_of_m: StageStatus,
    pub m_of_q: StageStatus,
    pub uniqueness: StageStatus,
    pub ssa: Option<StageStatus>,
    pub tikhonov_residual: Option<f64>,
    pub doubling_gap: Option<f64>,
    pub fast_laws: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommutationReport {
    pub model: String,
    /// Variables eliminated through p-invariants before splitting.
    pub invariant_params: Vec<String>,
    pub slow_vars: Vec<String>,
    pub fast_vars: Vec<String>,
    pub system_size: f64,
    pub eps: f64,
    pub backend: String,
    pub tol: f64,
    pub tau: Vec<f64>,
    pub y_qm: Option<Vec<Vec<f64>>>,
    pub y_mq: Option<Vec<Vec<f64>>>,
    /// Ensemble mean of the slow variables of the full model (densities,
    /// clock `τ = ε t`).
    pub ssa_mean: Option<Vec<Vec<f64>>>,
    pub distance: Option<f64>,
    pub uniqueness: Option<UniquenessReport>,
    pub verdict: Verdict,
    pub stages: Stages,
    pub warnings: Vec<String>,
}

impl CommutationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Columns `tau, y_qm_<var>..., y_mq_<var>..., [ssa_mean_<var>...]`.
    /// Missing branches are written as empty fields.
    pub fn curves_csv(&self) -> String {
        let mut head = vec!["tau".to_string()];
        for prefix in ["y_qm", "y_mq"] {
            head.extend(self.slow_vars.iter().map(|v| format!("{prefix}_{v}")));
        }
        if self.ssa_mean.is_some() {
            head.extend(self.slow_vars.iter().map(|v| format!("ssa_mean_{v}")));
        }
        let mut out = head.join(",");
        out.push('\n');
        let m = self.slow_vars.len();
        let cell = |src: &Option<Vec<Vec<f64>>>, k: usize, out: &mut Vec<String>| match src {
            Some(rows) => out.extend(rows[k].iter().map(|v| v.to_string())),
            None => out.extend(std::iter::repeat_n(String::new(), m)),
        };
        for (k, t) in self.tau.iter().enumerate() {
            let mut row = vec![t.to_string()];
            cell(&self.y_qm, k, &mut row);
            cell(&self.y_mq, k, &mut row);
            if self.ssa_mean.is_some() {
                cell(&self.ssa_mean, k, &mut row);
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Slow-variable densities `Cᵀ x` of each ensemble mean.
fn ssa_slow_mean(model: &Model, p: &Partition, req: &SsaRequest, t_end: f64, points: usize) -> Result<Vec<Vec<f64>>> {
    let cm = model.compile()?;
    let eps = model.eps();
    let opts = EnsembleOptions::new(t_end / eps, req.replicates, points, req.seed);
    let ens = run_ensemble(&cm, &opts)?;
    let n = model.system_size();
    let c = p.basis.c.to_f64_rows();
    Ok(ens
        .mean
        .iter()
        .map(|x| {
            (0..p.m())
                .map(|k| x.iter().enumerate().map(|(i, xi)| c[i][k] * xi).sum::<f64>() / n)
                .collect()
        })
        .collect())
}

fn probe_grid(y: &[Vec<f64>], count: usize) -> Vec<Vec<f64>> {
    if y.len() <= count || count < 2 {
        return y.to_vec();
    }
    (0..count).map(|k| y[k * (y.len() - 1) / (count - 1)].clone()).collect()
}

/// Run both branches on a shared grid and compare them. Stage failures are
/// recorded and lead to an inconclusive verdict rather than an error; only a
/// model that cannot be split at all is an error.
pub fn commute_compare(model: &Model, opts: &CommuteOptions) -> Result<CommutationReport> {
    if !(opts.t_end > 0.0) || opts.points < 2 {
        return Err(Error::InvalidArgument("need a positive horizon and at least two grid points".into()));
    }
    let (prepared, reduction) = reducible_form(model)?;
    let p = make_partition(&prepared)?;
    let ((qm, uniq), (mq, ssa)) = rayon::join(
        || {
            let qm = q_of_m(&p, opts.t_end, opts.points, &opts.ode);
            let uniq = tikhonov_reduce(&p, DEFAULT_NEWTON_TOL).and_then(|ode| {
                let grid = match &qm {
                    Ok(tr) => probe_grid(&tr.y, opts.uniqueness_probes),
                    Err(_) => vec![ode.initial().0],
                };
                check_fast_uniqueness(&ode, &grid, &ode.fast_box(FAST_BOX_WIDTH), &opts.equilibria)
            });
            (qm, uniq)
        },
        || {
            rayon::join(
                || m_of_q(&prepared, &p, &opts.backend, opts.t_end, opts.points, &opts.ode, opts.doubling),
                || opts.ssa.as_ref().map(|req| ssa_slow_mean(&prepared, &p, req, opts.t_end, opts.points)),
            )
        },
    );
    let mut warnings = Vec::new();
    let distance = match (&qm, &mq) {
        (Ok(a), Ok(b)) => Some(sup_distance(&a.y, &b.y)),
        _ => None,
    };
    if let Ok(r) = &mq {
        if let Some(gap) = r.doubling_gap {
            if gap > opts.tol {
                warnings.push(format!(
                    "reduced drift moves by {gap:.3e} when N is doubled; its large-N limit may not exist"
                ));
            }
        }
        if let Some(e) = &r.doubling_error {
            warnings.push(format!("doubling probe failed: {e}"));
        }
    }
    if let Ok(u) = &uniq {
        if u.verdict == Uniqueness::NonUnique {
            warnings.push("fast subsystem has several equilibria; the two orders need not agree".into());
        }
    }
    let unique = matches!(&uniq, Ok(u) if u.verdict == Uniqueness::Unique);
    let verdict = match distance {
        Some(d) if d <= opts.tol && unique => Verdict::Commutes,
        Some(d) if d > opts.tol => Verdict::NonCommuting,
        _ => Verdict::Inconclusive,
    };
    let tau = match (&qm, &mq) {
        (Ok(a), _) => a.tau.clone(),
        (_, Ok(b)) => b.tau.clone(),
        _ => uniform_grid(opts.t_end, opts.points),
    };
    Ok(CommutationReport {
        model: model.name.clone(),
        invariant_params: reduction.map(|r| r.invariant_params).unwrap_or_default(),
        slow_vars: p.slow_vars.clone(),
        fast_vars: p.fast_vars.clone(),
        system_size: prepared.system_size(),
        eps: prepared.eps(),
        backend: opts.backend.name().into(),
        tol: opts.tol,
        tau,
        stages: Stages {
            q_of_m: StageStatus::of(&qm),
            m_of_q: StageStatus::of(&mq),
            uniqueness: StageStatus::of(&uniq),
            ssa: ssa.as_ref().map(StageStatus::of),
            tikhonov_residual: qm.as_ref().ok().map(|t| t.max_residual),
            doubling_gap: mq.as_ref().ok().and_then(|r| r.doubling_gap),
            fast_laws: mq.as_ref().ok().map(|r| r.fast_laws),
        },
        y_qm: qm.ok().map(|t| t.y),
        y_mq: mq.ok().map(|r| r.y),
        ssa_mean: ssa.and_then(|r| r.ok()),
        distance,
        uniqueness: uniq.ok(),
        verdict,
        warnings,
    })
}

// ---------------------------------------------------------------------------
// stationary histogram of a slow variable

#[derive(Debug, Clone)]
pub struct HistogramOptions {
    /// Total simulated slow time, split evenly over the replicates.
    pub horizon: f64,
    pub replicates: usize,
    /// Fraction of each replicate discarded as burn-in.
    pub burn_in_fraction: f64,
    pub seed: u64,
    /// Bin width in density units.
    pub bin_width: f64,
    /// Start state in the model's coordinates; `None` uses the initial state.
    pub start: Option<Vec<i64>>,
    /// Modes must carry at least this much mass in their bin.
    pub min_mode_mass: f64,
    /// A mode is the largest bin within this many bins on either side.
    pub mode_window: usize,
}

impl HistogramOptions {
    pub fn new(horizon: f64, replicates: usize, seed: u64) -> Self {
        HistogramOptions {
            horizon,
            replicates,
            burn_in_fraction: 0.1,
            seed,
            bin_width: 0.1,
            start: None,
            min_mode_mass: 0.05,
            mode_window: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mode {
    /// Bin center in density units.
    pub location: f64,
    /// Mass of the bins closer to this mode than to any other.
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlowHistogram {
    pub var: String,
    pub system_size: f64,
    pub eps: f64,
    pub bin_width: f64,
    /// `(bin center, probability)` in density units.
    pub bins: Vec<(f64, f64)>,
    pub modes: Vec<Mode>,
    pub events: u64,
}

impl SlowHistogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("value,probability\n");
        for (c, p) in &self.bins {
            out.push_str(&format!("{c},{p}\n"));
        }
        out
    }
}

/// Time-weighted occupation of the first slow variable (density units),
/// pooled over independent replicates of the full model.
pub fn slow_histogram(model: &Model, opts: &HistogramOptions) -> Result<SlowHistogram> {
    if opts.replicates == 0 || !(opts.bin_width > 0.0) {
        return Err(Error::InvalidArgument("need at least one replicate and a positive bin width".into()));
    }
    let (prepared, _) = reducible_form(model)?;
    let p = make_partition(&prepared)?;
    let image = p.image.compile()?;
    let a = p.basis.matrix();
    let start_x = opts.start.clone().unwrap_or_else(|| prepared.init.clone());
    let start: Vec<i64> = a
        .tr_mul_int(&start_x)
        .iter()
        .map(|q| q.to_integer().try_into().expect("start state fits in i64"))
        .collect();
    let eps = prepared.eps();
    let n = prepared.system_size();
    let fast_horizon = opts.horizon / eps / opts.replicates as f64;
    let sopts = StationaryOptions {
        burn_in: opts.burn_in_fraction * fast_horizon,
        horizon: fast_horizon,
        max_events: u64::MAX,
        batches: 20,
        joint: false,
    };
    use rayon::prelude::*;
    let runs: Vec<_> = (0..opts.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = RngSpec::new(opts.seed, r as u64).rng();
            estimate_stationary_from(&image, &start, &sopts, &mut rng, &[])
        })
        .collect::<Result<Vec<_>>>()?;
    let mut bins: std::collections::BTreeMap<i64, f64> = std::collections::BTreeMap::new();
    let mut events = 0;
    for run in &runs {
        events += run.events;
        for (&v, &w) in &run.histograms[0] {
            let b = ((v as f64 / n) / opts.bin_width).floor() as i64;
            *bins.entry(b).or_insert(0.0) += w / opts.replicates as f64;
        }
    }
    let first = *bins.keys().next().unwrap_or(&0);
    let last = *bins.keys().next_back().unwrap_or(&0);
    let dense: Vec<(f64, f64)> = (first..=last)
        .map(|b| ((b as f64 + 0.5) * opts.bin_width, bins.get(&b).copied().unwrap_or(0.0)))
        .collect();
    Ok(SlowHistogram {
        var: p.slow_vars[0].clone(),
        system_size: n,
        eps,
        bin_width: opts.bin_width,
        modes: find_modes(&dense, opts.min_mode_mass, opts.mode_window),
        bins: dense,
        events,
    })
}

/// Local maxima over a window with enough mass; each bin's mass is then
/// credited to the nearest mode.
pub fn find_modes(bins: &[(f64, f64)], min_mass: f64, window: usize) -> Vec<Mode> {
    let mut peaks: Vec<usize> = Vec::new();
    for k in 0..bins.len() {
        let lo = k.saturating_sub(window);
        let hi = (k + window).min(bins.len() - 1);
        let pk = bins[k].1;
        // strict to the left so a flat top yields one peak
        let is_max = (lo..k).all(|j| bins[j].1 < pk) && (k + 1..=hi).all(|j| bins[j].1 <= pk);
        if is_max && pk >= min_mass {
            peaks.push(k);
        }
    }
    let mut modes: Vec<Mode> = peaks
        .iter()
        .map(|&k| Mode {
            location: bins[k].0,
            mass: 0.0,
        })
        .collect();
    if modes.is_empty() {
        return modes;
    }
    for &(c, w) in bins {
        let nearest = (0..modes.len())
            .min_by(|&i, &j| (modes[i].location - c).abs().total_cmp(&(modes[j].location - c).abs()))
            .unwrap();
        modes[nearest].mass += w;
    }
    modes
}
