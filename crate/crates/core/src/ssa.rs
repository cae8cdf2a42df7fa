//! Gillespie direct-method simulation, ensembles and stationary estimates.
//!
//! Randomness comes from `ChaCha8Rng::seed_from_u64(seed)` with
//! `set_stream(stream)`; replicate `r` of an ensemble uses stream `r`. A
//! `(seed, stream)` pair therefore fixes a path bit for bit.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::RateSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RngSpec {
    pub seed: u64,
    pub stream: u64,
}

impl RngSpec {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngSpec { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(self.stream);
        r
    }
}

/// Receives the piecewise-constant path as it is generated.
pub trait Observer {
    /// The process sits in `x` on `[from, to)`.
    fn hold(&mut self, x: &[i64], from: f64, to: f64);
    /// Transition `j` fired at `t`, leading to `x`.
    fn jump(&mut self, _t: f64, _j: usize, _x: &[i64]) {}
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub events: u64,
    /// Time the path is known up to: `t_end`, or the last event time when
    /// truncated.
    pub final_time: f64,
    pub final_state: Vec<i64>,
    pub truncated: bool,
    /// Time at which the total rate became zero, if it did.
    pub absorbed_at: Option<f64>,
}

/// Transitions whose rate may change when `j` fires.
fn dependency_graph<S: RateSource + ?Sized>(src: &S) -> Vec<Vec<usize>> {
    let r = src.n_transitions();
    (0..r)
        .map(|j| {
            let changed: Vec<usize> = (0..src.dim()).filter(|&i| src.update(j)[i] != 0).collect();
            (0..r).filter(|&k| src.reads(k).iter().any(|v| changed.contains(v))).collect()
        })
        .collect()
}

/// Core simulation loop; all public entry points go through here.
pub fn run<S, O>(src: &S, t_end: f64, rng: &mut ChaCha8Rng, max_events: u64, obs: &mut O) -> Result<RunSummary>
where
    S: RateSource + ?Sized,
    O: Observer + ?Sized,
{
    run_from(src, src.initial(), t_end, rng, max_events, obs)
}

pub fn run_from<S, O>(
    src: &S,
    x0: &[i64],
    t_end: f64,
    rng: &mut ChaCha8Rng,
    max_events: u64,
    obs: &mut O,
) -> Result<RunSummary>
where
    S: RateSource + ?Sized,
    O: Observer + ?Sized,
{
    if !(t_end > 0.0) {
        return Err(Error::InvalidArgument(format!("time horizon must be positive, got {t_end}")));
    }
    let deps = dependency_graph(src);
    let r = src.n_transitions();
    let mut x = x0.to_vec();
    let mut rates: Vec<f64> = (0..r).map(|j| src.rate(j, &x)).collect::<Result<_>>()?;
    let mut t = 0.0;
    let mut events = 0u64;
    loop {
        let total: f64 = rates.iter().sum();
        if total <= 0.0 {
            obs.hold(&x, t, t_end);
            return Ok(RunSummary {
                events,
                final_time: t_end,
                final_state: x,
                truncated: false,
                absorbed_at: Some(t),
            });
        }
        let u: f64 = 1.0 - rng.random::<f64>();
        let t_next = t - u.ln() / total;
        if t_next >= t_end {
            obs.hold(&x, t, t_end);
            return Ok(RunSummary {
                events,
                final_time: t_end,
                final_state: x,
                truncated: false,
                absorbed_at: None,
            });
        }
        if events >= max_events {
            return Ok(RunSummary {
                events,
                final_time: t,
                final_state: x,
                truncated: true,
                absorbed_at: None,
            });
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut j = usize::MAX;
        for (k, &w) in rates.iter().enumerate() {
            if w > 0.0 {
                j = k;
                acc += w;
                if target < acc {
                    break;
                }
            }
        }
        obs.hold(&x, t, t_next);
        for (xi, d) in x.iter_mut().zip(src.update(j)) {
            *xi += d;
        }
        debug_assert!(src.in_domain(&x), "left the domain at {x:?}");
        t = t_next;
        events += 1;
        for &k in &deps[j] {
            rates[k] = src.rate(k, &x)?;
        }
        obs.jump(t, j, &x);
    }
}

/// A sampled path: jump times, the transition fired and the state after it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub initial: Vec<i64>,
    pub times: Vec<f64>,
    pub fired: Vec<usize>,
    pub states: Vec<Vec<i64>>,
    pub final_time: f64,
    pub truncated: bool,
}

impl Trajectory {
    /// State at time `t` (right continuous).
    pub fn state_at(&self, t: f64) -> &[i64] {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            &self.initial
        } else {
            &self.states[k - 1]
        }
    }
}

struct Recorder<'a> {
    traj: &'a mut Trajectory,
}

impl Observer for Recorder<'_> {
    fn hold(&mut self, _x: &[i64], _from: f64, _to: f64) {}

    fn jump(&mut self, t: f64, j: usize, x: &[i64]) {
        self.traj.times.push(t);
        self.traj.fired.push(j);
        self.traj.states.push(x.to_vec());
    }
}

/// One exact sample path on `[0, t_end]`. Hitting `max_events` sets the
/// `truncated` flag instead of failing.
pub fn simulate<S: RateSource + ?Sized>(src: &S, t_end: f64, rng: RngSpec, max_events: u64) -> Result<Trajectory> {
    let mut traj = Trajectory {
        initial: src.initial().to_vec(),
        times: Vec::new(),
        fired: Vec::new(),
        states: Vec::new(),
        final_time: t_end,
        truncated: false,
    };
    let summary = run(src, t_end, &mut rng.rng(), max_events, &mut Recorder { traj: &mut traj })?;
    traj.final_time = summary.final_time;
    traj.truncated = summary.truncated;
    Ok(traj)
}

/// `points` equally spaced times from 0 to `t_end` inclusive.
pub fn uniform_grid(t_end: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![t_end],
        _ => (0..points).map(|k| t_end * k as f64 / (points - 1) as f64).collect(),
    }
}

struct GridSampler<'a> {
    grid: &'a [f64],
    next: usize,
    out: Vec<Vec<i64>>,
}

impl Observer for GridSampler<'_> {
    fn hold(&mut self, x: &[i64], _from: f64, to: f64) {
        while self.next < self.grid.len() && self.grid[self.next] < to {
            self.out.push(x.to_vec());
            self.next += 1;
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleOptions {
    pub t_end: f64,
    pub replicates: usize,
    pub grid: Vec<f64>,
    pub seed: u64,
    pub max_events: u64,
    /// Variables for which per-grid-point histograms are kept.
    pub histogram_vars: Vec<usize>,
}

impl EnsembleOptions {
    pub fn new(t_end: f64, replicates: usize, grid_points: usize, seed: u64) -> Self {
        EnsembleOptions {
            t_end,
            replicates,
            grid: uniform_grid(t_end, grid_points),
            seed,
            max_events: u64::MAX,
            histogram_vars: Vec::new(),
        }
    }
}

/// Empirical law of `R` replicates on a common grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ensemble {
    pub replicates: usize,
    pub vars: Vec<String>,
    pub grid: Vec<f64>,
    /// `mean[k][i]`: mean of variable `i` at `grid[k]`.
    pub mean: Vec<Vec<f64>>,
    /// Unbiased sample variance; zero for a single replicate.
    pub variance: Vec<Vec<f64>>,
    /// `(variable, per grid point: value -> probability)`.
    pub histograms: Vec<(usize, Vec<BTreeMap<i64, f64>>)>,
    pub truncated_replicates: usize,
}

/// `R` independent replicates on streams `0..R`, reduced in replicate order.
pub fn run_ensemble<S: RateSource + ?Sized>(src: &S, opts: &EnsembleOptions) -> Result<Ensemble> {
    if opts.replicates == 0 {
        return Err(Error::InvalidArgument("at least one replicate is required".into()));
    }
    if opts.grid.iter().any(|&g| !(0.0..=opts.t_end).contains(&g)) || opts.grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("grid must be sorted and lie within [0, T]".into()));
    }
    let samples: Vec<Result<(Vec<Vec<i64>>, bool)>> = (0..opts.replicates)
        .into_par_iter()
        .map(|r| {
            let mut sampler = GridSampler {
                grid: &opts.grid,
                next: 0,
                out: Vec::with_capacity(opts.grid.len()),
            };
            let mut rng = RngSpec::new(opts.seed, r as u64).rng();
            let summary = run(src, opts.t_end, &mut rng, opts.max_events, &mut sampler)
                .map_err(|e| Error::Replicate { replicate: r, source: Box::new(e) })?;
            while sampler.out.len() < opts.grid.len() {
                sampler.out.push(summary.final_state.clone());
            }
            Ok((sampler.out, summary.truncated))
        })
        .collect();
    let mut paths = Vec::with_capacity(samples.len());
    let mut truncated = 0;
    for s in samples {
        let (p, t) = s?;
        truncated += t as usize;
        paths.push(p);
    }
    let n = src.dim();
    let rr = opts.replicates as f64;
    let mut mean = vec![vec![0.0; n]; opts.grid.len()];
    let mut variance = vec![vec![0.0; n]; opts.grid.len()];
    for k in 0..opts.grid.len() {
        for i in 0..n {
            let m = paths.iter().map(|p| p[k][i] as f64).sum::<f64>() / rr;
            mean[k][i] = m;
            if opts.replicates > 1 {
                variance[k][i] = paths.iter().map(|p| (p[k][i] as f64 - m).powi(2)).sum::<f64>() / (rr - 1.0);
            }
        }
    }
    let histograms = opts
        .histogram_vars
        .iter()
        .map(|&i| {
            let per_point = (0..opts.grid.len())
                .map(|k| {
                    let mut h = BTreeMap::new();
                    for p in &paths {
                        *h.entry(p[k][i]).or_insert(0.0) += 1.0 / rr;
                    }
                    h
                })
                .collect();
            (i, per_point)
        })
        .collect();
    Ok(Ensemble {
        replicates: opts.replicates,
        vars: src.var_names().to_vec(),
        grid: opts.grid.clone(),
        mean,
        variance,
        histograms,
        truncated_replicates: truncated,
    })
}

impl Ensemble {
    /// `t,mean_<var>...,var_<var>...`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t");
        for v in &self.vars {
            write!(s, ",mean_{v}").unwrap();
        }
        for v in &self.vars {
            write!(s, ",var_{v}").unwrap();
        }
        s.push('\n');
        for (k, t) in self.grid.iter().enumerate() {
            write!(s, "{t}").unwrap();
            for m in &self.mean[k] {
                write!(s, ",{m}").unwrap();
            }
            for v in &self.variance[k] {
                write!(s, ",{v}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// `value,probability`
pub fn histogram_csv(h: &BTreeMap<i64, f64>) -> String {
    let mut s = String::from("value,probability\n");
    for (v, p) in h {
        writeln!(s, "{v},{p}").unwrap();
    }
    s
}

#[derive(Debug, Clone)]
pub struct StationaryOptions {
    pub burn_in: f64,
    pub horizon: f64,
    pub max_events: u64,
    pub batches: usize,
    /// Keep the full occupation measure over states.
    pub joint: bool,
}

impl StationaryOptions {
    /// Burn-in defaults to 10% of the horizon.
    pub fn new(horizon: f64) -> Self {
        StationaryOptions {
            burn_in: 0.1 * horizon,
            horizon,
            max_events: u64::MAX,
            batches: 20,
            joint: false,
        }
    }
}

/// Time-weighted occupation statistics of one long run over
/// `[burn_in, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryEstimate {
    pub mean: Vec<f64>,
    /// Batch-means standard errors of `mean`.
    pub std_err: Vec<f64>,
    pub histograms: Vec<BTreeMap<i64, f64>>,
    pub observable_mean: Vec<f64>,
    pub observable_std_err: Vec<f64>,
    /// Occupation probability per state, sorted by state.
    pub joint: Option<Vec<(Vec<i64>, f64)>>,
    pub events: u64,
    pub truncated: bool,
}

pub type Observable<'a> = &'a (dyn Fn(&[i64]) -> f64 + Sync);

/// Occupation weights over a contiguous integer range that grows on demand.
#[derive(Debug, Clone, Default)]
struct DenseHist {
    offset: i64,
    weights: Vec<f64>,
}

impl DenseHist {
    #[inline]
    fn add(&mut self, v: i64, w: f64) {
        if self.weights.is_empty() {
            self.offset = v;
            self.weights.push(0.0);
        } else if v < self.offset {
            let grow = (self.offset - v) as usize;
            self.weights.splice(0..0, std::iter::repeat_n(0.0, grow));
            self.offset = v;
        } else if v >= self.offset + self.weights.len() as i64 {
            self.weights.resize((v - self.offset) as usize + 1, 0.0);
        }
        self.weights[(v - self.offset) as usize] += w;
    }

    fn normalized(&self, total: f64) -> BTreeMap<i64, f64> {
        (self.offset..)
            .zip(&self.weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(v, &w)| (v, w / total))
            .collect()
    }
}

struct Occupation<'a> {
    burn_in: f64,
    batch_len: f64,
    batches: usize,
    observables: &'a [Observable<'a>],
    values: Vec<f64>,
    sums: Vec<Vec<f64>>,
    hist: Vec<DenseHist>,
    joint: Option<HashMap<Vec<i64>, f64>>,
}

impl Observer for Occupation<'_> {
    fn hold(&mut self, x: &[i64], from: f64, to: f64) {
        let from = from.max(self.burn_in);
        if to <= from {
            return;
        }
        let n = x.len();
        for (v, &xi) in self.values.iter_mut().zip(x) {
            *v = xi as f64;
        }
        for (k, f) in self.observables.iter().enumerate() {
            self.values[n + k] = f(x);
        }
        let dt = to - from;
        for (h, &xi) in self.hist.iter_mut().zip(x) {
            h.add(xi, dt);
        }
        if let Some(j) = &mut self.joint {
            match j.get_mut(x) {
                Some(w) => *w += dt,
                None => {
                    j.insert(x.to_vec(), dt);
                }
            }
        }
        // split the interval over batch boundaries
        let mut a = from;
        while a < to {
            let b = (((a - self.burn_in) / self.batch_len).floor() as usize).min(self.batches - 1);
            let end = if b + 1 == self.batches {
                to
            } else {
                to.min(self.burn_in + (b + 1) as f64 * self.batch_len)
            };
            let end = if end <= a { to } else { end };
            for (s, v) in self.sums[b].iter_mut().zip(&self.values) {
                *s += v * (end - a);
            }
            a = end;
        }
    }
}

/// Time-weighted averages of a single run from the model's initial state.
/// Absorption before `burn_in` is an error.
pub fn estimate_stationary<S: RateSource + ?Sized>(
    src: &S,
    opts: &StationaryOptions,
    rng: RngSpec,
    observables: &[Observable<'_>],
) -> Result<StationaryEstimate> {
    estimate_stationary_from(src, src.initial(), opts, &mut rng.rng(), observables)
}

pub fn estimate_stationary_from<S: RateSource + ?Sized>(
    src: &S,
    x0: &[i64],
    opts: &StationaryOptions,
    rng: &mut ChaCha8Rng,
    observables: &[Observable<'_>],
) -> Result<StationaryEstimate> {
    if !(opts.horizon > opts.burn_in && opts.burn_in >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= burn-in < horizon, got {} and {}",
            opts.burn_in, opts.horizon
        )));
    }
    let n = src.dim();
    let nb = opts.batches.max(2);
    let width = n + observables.len();
    let mut occ = Occupation {
        burn_in: opts.burn_in,
        batch_len: (opts.horizon - opts.burn_in) / nb as f64,
        batches: nb,
        observables,
        values: vec![0.0; width],
        sums: vec![vec![0.0; width]; nb],
        hist: vec![DenseHist::default(); n],
        joint: opts.joint.then(HashMap::new),
    };
    let summary = run_from(src, x0, opts.horizon, rng, opts.max_events, &mut occ)?;
    if let Some(t) = summary.absorbed_at {
        if t < opts.burn_in {
            return Err(Error::Absorbed {
                time: t,
                state: summary.final_state,
            });
        }
    }
    let span = summary.final_time - opts.burn_in;
    if !(span > 0.0) {
        return Err(Error::Stationarity(format!(
            "run stopped after {} events at t = {}, before the burn-in ended",
            summary.events, summary.final_time
        )));
    }
    let batch_len = occ.batch_len;
    let mut mean = vec![0.0; width];
    let mut std_err = vec![0.0; width];
    for c in 0..width {
        let total: f64 = occ.sums.iter().map(|s| s[c]).sum();
        mean[c] = total / span;
        if !summary.truncated {
            let bm: Vec<f64> = occ.sums.iter().map(|s| s[c] / batch_len).collect();
            let var = bm.iter().map(|b| (b - mean[c]).powi(2)).sum::<f64>() / (nb as f64 - 1.0);
            std_err[c] = (var / nb as f64).sqrt();
        } else {
            std_err[c] = f64::NAN;
        }
    }
    let histograms = occ
        .hist
        .into_iter()
        .map(|h| h.normalized(span))
        .collect();
    let joint = occ.joint.map(|j| {
        let mut v: Vec<(Vec<i64>, f64)> = j.into_iter().map(|(x, w)| (x, w / span)).collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    });
    Ok(StationaryEstimate {
        mean: mean[..n].to_vec(),
        std_err: std_err[..n].to_vec(),
        histograms,
        observable_mean: mean[n..].to_vec(),
        observable_std_err: std_err[n..].to_vec(),
        joint,
        events: summary.events,
        truncated: summary.truncated,
    })
}
