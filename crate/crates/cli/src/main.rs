//! `mpm`: command-line front end for Markov population model reductions.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use mpm_core::cme::{self, boundary_mass, build_generator, caps_by_name, initial_distribution, stationary_distribution, transient_solve};
use mpm_core::meanfield::{find_equilibria, integrate, limit_rates, EquilibriumOptions, OdeOptions};
use mpm_core::pipeline::{commute_compare, slow_histogram, CommuteOptions, HistogramOptions, SsaRequest};
use mpm_core::qe::{make_partition, qe_reduce_mpm, reducible_form, tikhonov_reduce, Backend, DEFAULT_NEWTON_TOL, FAST_BOX_WIDTH};
use mpm_core::ssa::{histogram_csv, run_ensemble, EnsembleOptions};
use mpm_core::stoich::{p_invariants, rank_codim, stoich_matrix};
use mpm_core::{Model, RateExpr, Scale};

type CliResult<T> = std::result::Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "mpm", version, about = "Mean-field and quasi-equilibrium reductions of Markov population models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ModelArgs {
    /// Model document (JSON).
    model: PathBuf,
    /// Override a parameter, `name=value`; repeatable.
    #[arg(long = "set", value_name = "NAME=VALUE")]
    set: Vec<String>,
    /// Rescale the system size, scaling the initial state and finite bounds.
    #[arg(long)]
    size: Option<f64>,
}

impl ModelArgs {
    fn load(&self) -> CliResult<Model> {
        let text = fs::read_to_string(&self.model).map_err(|e| format!("{}: {e}", self.model.display()))?;
        let mut m = Model::from_json(&text)?;
        for kv in &self.set {
            let (k, v) = split_pair(kv)?;
            m = m.with_param(k, v.parse()?)?;
        }
        if let Some(n) = self.size {
            m = m.with_system_size(n)?;
        }
        Ok(m)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Exact,
    Nested,
    Closed,
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, value_enum, default_value = "exact")]
    backend: BackendKind,
    /// Fast truncation for the exact backend, `VAR=cap`; repeatable.
    #[arg(long = "fast-cap", value_name = "VAR=CAP")]
    fast_cap: Vec<String>,
    /// Averaged rate of a slow transition for the closed backend, `label=expr`; repeatable.
    #[arg(long = "rate", value_name = "LABEL=EXPR")]
    rate: Vec<String>,
    /// Seed of the nested backend.
    #[arg(long = "nested-seed", default_value_t = 0)]
    nested_seed: u64,
    #[arg(long = "nested-burn-in")]
    nested_burn_in: Option<f64>,
    #[arg(long = "nested-horizon")]
    nested_horizon: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Stoichiometry, rank, codimension and p-invariants as JSON.
    Invariants(ModelArgs),
    /// Ensemble statistics of exact stochastic simulation.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        t_end: f64,
        #[arg(long, default_value_t = 100)]
        replicates: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 101)]
        grid_points: usize,
        /// Trajectory CSV; final-time histograms go next to it as `hist_<var>.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Truncated master equation: stationary or transient distribution.
    Cme {
        #[command(flatten)]
        model: ModelArgs,
        /// Truncate a variable, `VAR=cap`; repeatable.
        #[arg(long = "trunc", value_name = "VAR=CAP")]
        trunc: Vec<String>,
        #[arg(long, conflicts_with = "t", required_unless_present = "t")]
        stationary: bool,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean-field ODE in densities.
    Meanfield {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        t_end: f64,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 101)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Equilibria of the mean-field drift, or of the fast field at fixed slow densities.
    Equilibria {
        #[command(flatten)]
        model: ModelArgs,
        /// Search box in densities: `lo:hi` for every coordinate, or one per coordinate separated by commas.
        #[arg(long = "box")]
        search_box: Option<String>,
        #[arg(long, default_value_t = 64)]
        starts: usize,
        /// Slow densities `y1,y2,...`: search the fast subsystem at this slow state.
        #[arg(long)]
        fast: Option<String>,
    },
    /// Quasi-equilibrium reduction of the stochastic model, written as a model document.
    Qe {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        backend: BackendArgs,
        /// Truncation of slow variables for tabulated rates, `VAR=cap`; repeatable.
        #[arg(long = "trunc", value_name = "VAR=CAP")]
        trunc: Vec<String>,
        /// Reduced model; a tabulated rate table goes next to it as `<stem>.table.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tikhonov-reduced mean-field ODE on the slow clock.
    QeOde {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        t_end: f64,
        #[arg(long, default_value_t = 101)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare reduce-then-limit against limit-then-reduce.
    Commute {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long)]
        t_end: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 101)]
        points: usize,
        /// Also run an ensemble of the full model on the slow clock.
        #[arg(long)]
        with_ssa: bool,
        #[arg(long, default_value_t = 100)]
        replicates: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Skip the run at twice the system size.
        #[arg(long)]
        no_doubling: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Long-run histogram of the first slow variable of the full model.
    Histogram {
        #[command(flatten)]
        model: ModelArgs,
        /// Total slow time over all replicates.
        #[arg(long)]
        horizon: f64,
        #[arg(long, default_value_t = 64)]
        replicates: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.1)]
        bin_width: f64,
        #[arg(long, default_value_t = 0.1)]
        burn_in_fraction: f64,
        /// Start state in counts, `x1,x2,...`.
        #[arg(long)]
        start: Option<String>,
        /// Histogram CSV; the summary with modes goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn split_pair(s: &str) -> CliResult<(&str, &str)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| format!("expected NAME=VALUE, got `{s}`").into())
}

fn int_pairs(items: &[String]) -> CliResult<Vec<(String, i64)>> {
    items
        .iter()
        .map(|s| {
            let (k, v) = split_pair(s)?;
            Ok((k.to_string(), v.parse::<i64>().map_err(|e| format!("`{s}`: {e}"))?))
        })
        .collect()
}

fn floats(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}").into()))
        .collect()
}

fn parse_box(s: &str, dim: usize) -> CliResult<Vec<(f64, f64)>> {
    let parts: Vec<(f64, f64)> = s
        .split(',')
        .map(|p| {
            let (lo, hi) = p.split_once(':').ok_or_else(|| format!("expected lo:hi, got `{p}`"))?;
            Ok((lo.trim().parse()?, hi.trim().parse()?))
        })
        .collect::<CliResult<_>>()?;
    match parts.len() {
        1 => Ok(vec![parts[0]; dim]),
        n if n == dim => Ok(parts),
        n => Err(format!("box has {n} intervals for {dim} coordinates").into()),
    }
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| format!("{}: {e}", p.display()).into()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn sibling(out: &Path, name: &str) -> PathBuf {
    out.parent().map(|d| d.join(name)).unwrap_or_else(|| PathBuf::from(name))
}

fn backend(model: &Model, args: &BackendArgs) -> CliResult<Backend> {
    let (prepared, _) = reducible_form(model)?;
    let p = make_partition(&prepared)?;
    Ok(match args.backend {
        BackendKind::Exact => {
            let caps = if args.fast_cap.is_empty() {
                Vec::new()
            } else {
                cme::caps_by_name(&p.fast_vars, &int_pairs(&args.fast_cap)?)?
            };
            Backend::ExactCme { caps }
        }
        BackendKind::Nested => Backend::NestedSsa {
            burn_in: args.nested_burn_in,
            horizon: args.nested_horizon,
            seed: args.nested_seed,
        },
        BackendKind::Closed => {
            let mut exprs: Vec<Option<RateExpr>> = vec![None; p.slow.len()];
            for kv in &args.rate {
                let (label, expr) = split_pair(kv)?;
                let k = p
                    .slow
                    .iter()
                    .position(|&j| prepared.transitions[j].label == label)
                    .ok_or_else(|| format!("`{label}` is not a slow transition"))?;
                exprs[k] = Some(RateExpr::parse(expr)?);
            }
            let exprs: Vec<RateExpr> = exprs
                .into_iter()
                .enumerate()
                .map(|(k, e)| e.ok_or_else(|| format!("missing --rate for `{}`", prepared.transitions[p.slow[k]].label)))
                .collect::<Result<_, _>>()?;
            Backend::ClosedForm(exprs)
        }
    })
}

fn invariants(model: &Model) -> CliResult<serde_json::Value> {
    let section = |m: &Model, subset: &[usize]| {
        let s = stoich_matrix(m, subset);
        let (rank, codim) = rank_codim(&s);
        json!({
            "vars": m.vars,
            "transitions": subset.iter().map(|&j| &m.transitions[j].label).collect::<Vec<_>>(),
            "S": s.to_rows(),
            "rank": rank,
            "codim": codim,
            "p_invariants": p_invariants(&s),
        })
    };
    let all: Vec<usize> = (0..model.transitions.len()).collect();
    let mut out = section(model, &all);
    let fast = model.indices_with_scale(Scale::Fast);
    if !fast.is_empty() {
        // conserved totals are eliminated first, so the fast report lives on
        // the reduced variables
        let (prepared, _) = reducible_form(model)?;
        out["fast"] = section(&prepared, &prepared.indices_with_scale(Scale::Fast));
    }
    Ok(out)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Invariants(args) => {
            let report = invariants(&args.load()?)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Simulate {
            model,
            t_end,
            replicates,
            seed,
            grid_points,
            out,
        } => {
            let m = model.load()?;
            let mut opts = EnsembleOptions::new(t_end, replicates, grid_points, seed);
            opts.histogram_vars = (0..m.dim()).collect();
            let ens = run_ensemble(&m.compile()?, &opts)?;
            emit(out.as_deref(), &ens.to_csv())?;
            if let Some(out) = &out {
                for (i, per_grid) in &ens.histograms {
                    let last = per_grid.last().expect("grid is nonempty");
                    fs::write(sibling(out, &format!("hist_{}.csv", m.vars[*i])), histogram_csv(last))?;
                }
            }
            if ens.truncated_replicates > 0 {
                eprintln!("warning: {} replicates hit the event limit", ens.truncated_replicates);
            }
        }
        Command::Cme {
            model,
            trunc,
            stationary,
            t,
            out,
        } => {
            let m = model.load()?;
            let caps = caps_by_name(&m.vars, &int_pairs(&trunc)?)?;
            let (index, g) = build_generator(&m.compile()?, &caps, cme::DEFAULT_STATE_LIMIT)?;
            let p = if stationary {
                stationary_distribution(&g)?.pi
            } else {
                transient_solve(&g, &initial_distribution(&g), t.expect("clap enforces --t"))?
            };
            emit(out.as_deref(), &cme::distribution_csv(&index, &p))?;
            eprintln!("states: {}, truncation boundary mass: {:e}", index.len(), boundary_mass(&index, &p));
        }
        Command::Meanfield {
            model,
            t_end,
            tol,
            points,
            out,
        } => {
            let drift = limit_rates(&model.load()?)?;
            let opts = OdeOptions { tol, ..OdeOptions::default() };
            let sol = integrate(&drift, &drift.initial_density(), t_end, points, &opts)?;
            let mut csv = format!("t,{}\n", drift.vars.join(","));
            for (t, x) in sol.t.iter().zip(&sol.x) {
                csv.push_str(&row(*t, x.iter()));
            }
            emit(out.as_deref(), &csv)?;
        }
        Command::Equilibria {
            model,
            search_box,
            starts,
            fast,
        } => {
            let m = model.load()?;
            let opts = EquilibriumOptions {
                starts,
                ..EquilibriumOptions::default()
            };
            let (vars, set) = match fast {
                Some(y) => {
                    let (prepared, _) = reducible_form(&m)?;
                    let p = make_partition(&prepared)?;
                    let ode = tikhonov_reduce(&p, DEFAULT_NEWTON_TOL)?;
                    let y = floats(&y)?;
                    if y.len() != p.m() {
                        return Err(format!("--fast needs {} slow densities", p.m()).into());
                    }
                    let bounds = match &search_box {
                        Some(b) => parse_box(b, p.fast_vars.len())?,
                        None => ode.fast_box(FAST_BOX_WIDTH),
                    };
                    (p.fast_vars.clone(), find_equilibria(&ode.fast_field(&y), &bounds, &opts)?)
                }
                None => {
                    let drift = limit_rates(&m)?;
                    let n = m.system_size();
                    let bounds = match &search_box {
                        Some(b) => parse_box(b, m.dim())?,
                        None => m
                            .domain
                            .iter()
                            .map(|b| (b.lo as f64 / n, b.hi.map_or(b.lo as f64 / n + FAST_BOX_WIDTH, |h| h as f64 / n)))
                            .collect(),
                    };
                    (m.vars.clone(), find_equilibria(&drift, &bounds, &opts)?)
                }
            };
            println!("{}", serde_json::to_string_pretty(&json!({ "vars": vars, "result": set }))?);
        }
        Command::Qe {
            model,
            backend: bargs,
            trunc,
            out,
        } => {
            let m = model.load()?;
            let b = backend(&m, &bargs)?;
            let (prepared, _) = reducible_form(&m)?;
            let p = make_partition(&prepared)?;
            let red = qe_reduce_mpm(&p, b)?;
            let caps = caps_by_name(&p.slow_vars, &int_pairs(&trunc)?)?;
            let (doc, table) = red.to_model(&caps)?;
            emit(out.as_deref(), &(doc.to_json() + "\n"))?;
            if let (Some(out), Some(table)) = (&out, table) {
                let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("reduced");
                fs::write(sibling(out, &format!("{stem}.table.csv")), table)?;
            }
        }
        Command::QeOde {
            model,
            t_end,
            points,
            out,
        } => {
            let (prepared, _) = reducible_form(&model.load()?)?;
            let p = make_partition(&prepared)?;
            let traj = tikhonov_reduce(&p, DEFAULT_NEWTON_TOL)?.integrate(t_end, points, &OdeOptions::default())?;
            let mut csv = format!("tau,{},{}\n", p.slow_vars.join(","), p.fast_vars.join(","));
            for k in 0..traj.tau.len() {
                csv.push_str(&row(traj.tau[k], traj.y[k].iter().chain(&traj.z[k])));
            }
            emit(out.as_deref(), &csv)?;
        }
        Command::Commute {
            model,
            backend: bargs,
            t_end,
            tol,
            points,
            with_ssa,
            replicates,
            seed,
            no_doubling,
            out,
            csv,
        } => {
            let m = model.load()?;
            let mut opts = CommuteOptions::new(t_end);
            opts.tol = tol;
            opts.points = points;
            opts.backend = backend(&m, &bargs)?;
            opts.doubling = !no_doubling;
            opts.ssa = with_ssa.then_some(SsaRequest { replicates, seed });
            let report = commute_compare(&m, &opts)?;
            emit(out.as_deref(), &(report.to_json() + "\n"))?;
            if let Some(csv) = csv {
                fs::write(&csv, report.curves_csv())?;
            }
            if out.is_some() {
                let d = report.distance.map_or("n/a".to_string(), |d| format!("{d:e}"));
                println!("D = {d}, verdict: {}", serde_json::to_value(report.verdict)?.as_str().unwrap_or("?"));
            }
        }
        Command::Histogram {
            model,
            horizon,
            replicates,
            seed,
            bin_width,
            burn_in_fraction,
            start,
            out,
        } => {
            let m = model.load()?;
            let mut opts = HistogramOptions::new(horizon, replicates, seed);
            opts.bin_width = bin_width;
            opts.burn_in_fraction = burn_in_fraction;
            opts.start = start
                .map(|s| s.split(',').map(|v| v.trim().parse::<i64>()).collect::<Result<Vec<_>, _>>())
                .transpose()?;
            let h = slow_histogram(&m, &opts)?;
            emit(out.as_deref(), &h.to_csv())?;
            let summary = json!({ "var": h.var, "system_size": h.system_size, "modes": h.modes, "events": h.events });
            if out.is_some() {
                println!("{}", serde_json::to_string_pretty(&summary)?);
            } else {
                eprintln!("{summary}");
            }
        }
    }
    Ok(())
}

fn row<'a>(t: f64, xs: impl Iterator<Item = &'a f64>) -> String {
    let mut s = t.to_string();
    for x in xs {
        s.push(',');
        s.push_str(&x.to_string());
    }
    s.push('\n');
    s
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
