//! Finite-state master equation: truncated state spaces, sparse generators,
//! stationary laws and transient solutions.

use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::RateSource;

pub const DEFAULT_STATE_LIMIT: u128 = 1_000_000;

/// Band entries the stationary solver may allocate (about 1.2 GB of f64).
const BAND_ENTRY_LIMIT: usize = 150_000_000;

/// Mixed-radix enumeration of the box `lo ≤ x ≤ hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceIndex {
    vars: Vec<String>,
    lo: Vec<i64>,
    hi: Vec<i64>,
    /// Whether `hi` comes from a cap below the domain bound.
    capped: Vec<bool>,
    strides: Vec<usize>,
    size: usize,
}

impl StateSpaceIndex {
    /// Box of the domain intersected with `caps` (`None` keeps the domain
    /// bound, which must then be finite).
    pub fn new<S: RateSource + ?Sized>(src: &S, caps: &[Option<i64>], limit: u128) -> Result<Self> {
        let n = src.dim();
        if caps.len() != n {
            return Err(Error::DimensionMismatch {
                context: "truncation caps".into(),
                expected: n,
                found: caps.len(),
            });
        }
        let mut lo = Vec::with_capacity(n);
        let mut hi = Vec::with_capacity(n);
        let mut capped = Vec::with_capacity(n);
        for (i, b) in src.bounds().iter().enumerate() {
            let h = match (b.hi, caps[i]) {
                (Some(h), Some(c)) => h.min(c),
                (Some(h), None) => h,
                (None, Some(c)) => c,
                (None, None) => return Err(Error::MissingCap(src.var_names()[i].clone())),
            };
            capped.push(b.hi.is_none_or(|dh| h < dh));
            lo.push(b.lo);
            hi.push(h);
        }
        let mut size: u128 = 1;
        for (l, h) in lo.iter().zip(&hi) {
            let width = (h - l + 1).max(0) as u128;
            size = size.saturating_mul(width);
        }
        if size > limit {
            return Err(Error::StateSpaceOverflow { size, limit });
        }
        if size == 0 {
            return Err(Error::InvalidArgument("truncated state space is empty".into()));
        }
        let mut strides = vec![1usize; n];
        for i in (0..n.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * (hi[i + 1] - lo[i + 1] + 1) as usize;
        }
        Ok(StateSpaceIndex {
            vars: src.var_names().to_vec(),
            lo,
            hi,
            capped,
            strides,
            size: size as usize,
        })
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn index(&self, x: &[i64]) -> Option<usize> {
        let mut k = 0;
        for i in 0..x.len() {
            if x[i] < self.lo[i] || x[i] > self.hi[i] {
                return None;
            }
            k += (x[i] - self.lo[i]) as usize * self.strides[i];
        }
        Some(k)
    }

    pub fn state(&self, mut k: usize) -> Vec<i64> {
        let mut x = vec![0; self.lo.len()];
        for i in 0..x.len() {
            x[i] = self.lo[i] + (k / self.strides[i]) as i64;
            k %= self.strides[i];
        }
        x
    }

    /// Whether `x` sits on a cap that cuts the domain short.
    pub fn on_truncation_boundary(&self, x: &[i64]) -> bool {
        (0..x.len()).any(|i| self.capped[i] && x[i] == self.hi[i])
    }
}

/// Sparse generator: `rows[i]` lists `(j, q_ij)` for `j ≠ i`, merged and
/// positive; `diag[i] = −Σ_j q_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub rows: Vec<Vec<(usize, f64)>>,
    pub diag: Vec<f64>,
    /// Index of the initial state.
    pub init: usize,
}

impl Generator {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn max_exit_rate(&self) -> f64 {
        self.diag.iter().fold(0.0, |m, d| m.max(-d))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let mut q = vec![vec![0.0; n]; n];
        for i in 0..n {
            for &(j, v) in &self.rows[i] {
                q[i][j] = v;
            }
            q[i][i] = self.diag[i];
        }
        q
    }

    /// `p Q` as a row vector.
    pub fn apply_left(&self, p: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = p.iter().zip(&self.diag).map(|(a, d)| a * d).collect();
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                out[j] += p[i] * v;
            }
        }
        out
    }
}

/// Enumerate the truncated box and collect transition rates. Moves leaving
/// the truncation are dropped (reflecting truncation).
pub fn build_generator<S: RateSource + ?Sized>(
    src: &S,
    caps: &[Option<i64>],
    limit: u128,
) -> Result<(StateSpaceIndex, Generator)> {
    let index = StateSpaceIndex::new(src, caps, limit)?;
    let init = index.index(src.initial()).ok_or_else(|| Error::InitNotInTruncation {
        init: src.initial().to_vec(),
    })?;
    let r = src.n_transitions();
    let mut rows = Vec::with_capacity(index.len());
    let mut diag = Vec::with_capacity(index.len());
    let mut y = vec![0; src.dim()];
    for k in 0..index.len() {
        let x = index.state(k);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for j in 0..r {
            let w = src.rate(j, &x)?;
            if w <= 0.0 {
                continue;
            }
            for ((yi, xi), d) in y.iter_mut().zip(&x).zip(src.update(j)) {
                *yi = xi + d;
            }
            if let Some(t) = index.index(&y) {
                if t != k {
                    row.push((t, w));
                }
            }
        }
        row.sort_by_key(|e| e.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
        for (t, w) in row {
            match merged.last_mut() {
                Some(last) if last.0 == t => last.1 += w,
                _ => merged.push((t, w)),
            }
        }
        diag.push(-merged.iter().map(|e| e.1).sum::<f64>());
        rows.push(merged);
    }
    Ok((index, Generator { rows, diag, init }))
}

/// Convenience: caps given by variable name.
pub fn caps_by_name(vars: &[String], caps: &[(String, i64)]) -> Result<Vec<Option<i64>>> {
    let mut out = vec![None; vars.len()];
    for (name, c) in caps {
        let i = vars.iter().position(|v| v == name).ok_or_else(|| Error::UnknownSymbol {
            symbol: name.clone(),
            context: "truncation caps".into(),
        })?;
        out[i] = Some(*c);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stationary {
    pub pi: Vec<f64>,
    /// `‖πQ‖∞`.
    pub residual: f64,
    /// Size of the closed class carrying π.
    pub class_size: usize,
}

/// States reachable from the initial state along positive rates.
fn reachable(g: &Generator) -> Vec<bool> {
    let mut seen = vec![false; g.len()];
    let mut queue = VecDeque::from([g.init]);
    seen[g.init] = true;
    while let Some(i) = queue.pop_front() {
        for &(j, _) in &g.rows[i] {
            if !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen
}

/// Strongly connected components restricted to `active` (iterative Tarjan).
/// Returns the component id per state (`usize::MAX` if inactive).
fn scc(g: &Generator, active: &[bool]) -> (Vec<usize>, usize) {
    let n = g.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut comp = vec![usize::MAX; n];
    let mut stack = Vec::new();
    let mut next = 0;
    let mut ncomp = 0;
    for root in 0..n {
        if !active[root] || index[root] != usize::MAX {
            continue;
        }
        let mut call: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut edge)) = call.last_mut() {
            if *edge < g.rows[v].len() {
                let w = g.rows[v][*edge].0;
                *edge += 1;
                if index[w] == usize::MAX {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    loop {
                        let w = stack.pop().expect("tarjan stack");
                        on_stack[w] = false;
                        comp[w] = ncomp;
                        if w == v {
                            break;
                        }
                    }
                    ncomp += 1;
                }
            }
        }
    }
    (comp, ncomp)
}

/// The unique closed class reachable from the initial state.
fn closed_class(g: &Generator) -> Result<Vec<usize>> {
    let active = reachable(g);
    let (comp, ncomp) = scc(g, &active);
    let mut open = vec![false; ncomp];
    for i in 0..g.len() {
        if active[i] {
            for &(j, _) in &g.rows[i] {
                if comp[j] != comp[i] {
                    open[comp[i]] = true;
                }
            }
        }
    }
    let closed: Vec<usize> = (0..ncomp).filter(|&c| !open[c]).collect();
    if closed.len() != 1 {
        return Err(Error::AmbiguousStationary { classes: closed.len() });
    }
    Ok((0..g.len()).filter(|&i| comp[i] == closed[0]).collect())
}

/// Solve `πQ = 0`, `Σπ = 1` on the closed class reached from the initial
/// state, by banded GTH elimination. Several closed classes are an error; a
/// single absorbing state yields the point mass.
pub fn stationary_distribution(g: &Generator) -> Result<Stationary> {
    let class = closed_class(g)?;
    let mut pi = vec![0.0; g.len()];
    if class.len() == 1 {
        pi[class[0]] = 1.0;
        return Ok(Stationary {
            pi,
            residual: 0.0,
            class_size: 1,
        });
    }
    let mut local = vec![usize::MAX; g.len()];
    for (k, &i) in class.iter().enumerate() {
        local[i] = k;
    }
    let n = class.len();
    let mut band = 0;
    for &i in &class {
        for &(j, _) in &g.rows[i] {
            band = band.max(local[i].abs_diff(local[j]));
        }
    }
    let width = 2 * band + 1;
    if n.saturating_mul(width) > BAND_ENTRY_LIMIT {
        return Err(Error::StateSpaceOverflow {
            size: (n * width) as u128,
            limit: BAND_ENTRY_LIMIT as u128,
        });
    }
    // a[i * width + (j + band - i)] = rate i -> j
    let mut a = vec![0.0f64; n * width];
    for &i in &class {
        let li = local[i];
        for &(j, v) in &g.rows[i] {
            a[li * width + local[j] + band - li] += v;
        }
    }
    let at = |i: usize, j: usize| i * width + j + band - i;
    let mut s = vec![0.0; n];
    for k in (1..n).rev() {
        let lo = k.saturating_sub(band);
        let sk: f64 = (lo..k).map(|j| a[at(k, j)]).sum();
        if !(sk > 0.0) {
            return Err(Error::Stationarity(format!("state elimination hit a zero pivot at local state {k}")));
        }
        s[k] = sk;
        for i in lo..k {
            let aik = a[at(i, k)];
            if aik == 0.0 {
                continue;
            }
            let f = aik / sk;
            for j in lo..k {
                if j != i {
                    let akj = a[at(k, j)];
                    if akj != 0.0 {
                        a[at(i, j)] += f * akj;
                    }
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    x[0] = 1.0;
    for k in 1..n {
        let lo = k.saturating_sub(band);
        x[k] = (lo..k).map(|i| x[i] * a[at(i, k)]).sum::<f64>() / s[k];
        // rescale before overflow; entries that underflow are negligible
        if x[k] > 1e200 {
            let f = x[k];
            x[..=k].iter_mut().for_each(|v| *v /= f);
        }
    }
    let total: f64 = x.iter().sum();
    for (k, &i) in class.iter().enumerate() {
        pi[i] = x[k] / total;
    }
    let residual = g.apply_left(&pi).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = g.max_exit_rate().max(1.0);
    if !(residual <= 1e-10 * scale) {
        return Err(Error::Stationarity(format!("residual {residual:e} exceeds tolerance")));
    }
    Ok(Stationary {
        pi,
        residual,
        class_size: n,
    })
}

/// Probability carried by states on a truncation cap.
pub fn boundary_mass(index: &StateSpaceIndex, p: &[f64]) -> f64 {
    (0..index.len())
        .filter(|&k| p[k] != 0.0 && index.on_truncation_boundary(&index.state(k)))
        .map(|k| p[k])
        .sum()
}

/// Point mass at the generator's initial state.
pub fn initial_distribution(g: &Generator) -> Vec<f64> {
    let mut p = vec![0.0; g.len()];
    p[g.init] = 1.0;
    p
}

/// Relative Poisson weights below this are dropped.
const POISSON_CUTOFF: f64 = 1e-20;

/// `p0 exp(Qt)` by uniformization at rate `Λ = max exit rate`.
pub fn transient_solve(g: &Generator, p0: &[f64], t: f64) -> Result<Vec<f64>> {
    if p0.len() != g.len() {
        return Err(Error::DimensionMismatch {
            context: "initial distribution".into(),
            expected: g.len(),
            found: p0.len(),
        });
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!("time must be finite and non-negative, got {t}")));
    }
    let lambda = g.max_exit_rate();
    if t == 0.0 || lambda == 0.0 {
        return Ok(p0.to_vec());
    }
    let lt = lambda * t;
    // weights relative to the mode, walked outwards
    let mode = lt.floor() as usize;
    let mut left = vec![1.0];
    let mut k = mode;
    while k > 0 {
        let w = left.last().unwrap() * k as f64 / lt;
        if w < POISSON_CUTOFF {
            break;
        }
        left.push(w);
        k -= 1;
    }
    let first = k;
    let mut right = Vec::new();
    let mut w = 1.0;
    let mut k = mode;
    loop {
        w *= lt / (k + 1) as f64;
        if w < POISSON_CUTOFF {
            break;
        }
        right.push(w);
        k += 1;
    }
    let mut weights: Vec<f64> = left.into_iter().rev().collect();
    weights.extend(right);
    let total: f64 = weights.iter().sum();

    let inv = 1.0 / lambda;
    let mut v = p0.to_vec();
    let mut next = vec![0.0; v.len()];
    let mut out = vec![0.0; v.len()];
    for step in 0..first + weights.len() {
        if step >= first {
            let w = weights[step - first] / total;
            for (o, x) in out.iter_mut().zip(&v) {
                *o += w * x;
            }
        }
        for (i, nx) in next.iter_mut().enumerate() {
            *nx = v[i] * (1.0 + g.diag[i] * inv);
        }
        for (i, row) in g.rows.iter().enumerate() {
            let vi = v[i];
            if vi == 0.0 {
                continue;
            }
            for &(j, q) in row {
                next[j] += vi * q * inv;
            }
        }
        std::mem::swap(&mut v, &mut next);
    }
    for o in &mut out {
        if *o < 0.0 {
            debug_assert!(*o >= -1e-12, "uniformization produced {o}");
            *o = 0.0;
        }
    }
    let sum: f64 = out.iter().sum();
    let mass: f64 = p0.iter().sum();
    if (sum - mass).abs() > 1e-9 {
        return Err(Error::Stationarity(format!("transient solution lost mass: {sum}")));
    }
    Ok(out)
}

/// `<vars>...,probability`, one row per state.
pub fn distribution_csv(index: &StateSpaceIndex, p: &[f64]) -> String {
    let mut s = index.vars().join(",");
    s.push_str(",probability\n");
    for (k, pk) in p.iter().enumerate() {
        for v in index.state(k) {
            write!(s, "{v},").unwrap();
        }
        writeln!(s, "{pk}").unwrap();
    }
    s
}

/// Total variation distance `½ Σ |p − q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::Model;
    use crate::ssa::{estimate_stationary, RngSpec, StationaryOptions};

    fn flip(a: f64, b: f64) -> Model {
        fixtures::flip().with_param("a", a).unwrap().with_param("b", b).unwrap()
    }

    #[test]
    fn flip_generator() {
        let c = flip(2.0, 3.0).compile().unwrap();
        let (_, g) = build_generator(&c, &[None], DEFAULT_STATE_LIMIT).unwrap();
        assert_eq!(g.to_dense(), vec![vec![-2.0, 2.0], vec![3.0, -3.0]]);
    }

    #[test]
    fn stationary_survives_extreme_rate_ratios() {
        // π(k+1)/π(k) = 1e6 (N - k)/(k + 1): the unnormalized weights overflow
        let m = Model::from_json(
            r#"{"name":"ratio","vars":["X"],"domain":[[0,200]],"params":{"N":200,"eps":1},"init":[0],
            "transitions":[{"label":"up","update":[1],"rate":"1e6 * (N - X)","scale":"unscaled"},
                           {"label":"down","update":[-1],"rate":"X","scale":"unscaled"}]}"#,
        )
        .unwrap();
        let (_, g) = build_generator(&m.compile().unwrap(), &[None], DEFAULT_STATE_LIMIT).unwrap();
        let st = stationary_distribution(&g).unwrap();
        assert!(st.pi.iter().all(|p| p.is_finite()));
        assert!((st.pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // binomial with p = 1e6 / (1e6 + 1)
        let mean: f64 = st.pi.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
        assert!((mean - 200.0 * 1e6 / (1e6 + 1.0)).abs() < 1e-9);
    }

    #[test]
    fn flip_stationary() {
        let c = flip(2.0, 3.0).compile().unwrap();
        let (_, g) = build_generator(&c, &[None], DEFAULT_STATE_LIMIT).unwrap();
        let st = stationary_distribution(&g).unwrap();
        assert!((st.pi[0] - 0.6).abs() < 1e-15 && (st.pi[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn flip_transient_equilibrates() {
        let c = flip(1.0, 1.0).compile().unwrap();
        let (_, g) = build_generator(&c, &[None], DEFAULT_STATE_LIMIT).unwrap();
        let p0 = initial_distribution(&g);
        assert_eq!(transient_solve(&g, &p0, 0.0).unwrap(), p0);
        let p = transient_solve(&g, &p0, 50.0).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-8 && (p[1] - 0.5).abs() < 1e-8);
        // closed form: p1(t) = (1 - e^{-2t}) / 2
        let p = transient_solve(&g, &p0, 0.3).unwrap();
        assert!((p[1] - 0.5 * (1.0 - (-0.6f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn missing_cap_and_overflow() {
        let c = fixtures::birth().compile().unwrap();
        assert!(matches!(build_generator(&c, &[None], 10).unwrap_err(), Error::MissingCap(_)));
        let err = build_generator(&c, &[Some(100)], 10).unwrap_err();
        assert_eq!(err, Error::StateSpaceOverflow { size: 101, limit: 10 });
    }

    #[test]
    fn truncation_must_contain_init() {
        let m = fixtures::birth();
        let mut m2 = m.clone();
        m2.init = vec![5];
        let c = m2.compile().unwrap();
        assert!(matches!(build_generator(&c, &[Some(3)], 100).unwrap_err(), Error::InitNotInTruncation { .. }));
    }

    #[test]
    fn pure_birth_has_one_closed_class_at_the_cap() {
        let c = fixtures::birth().compile().unwrap();
        let (idx, g) = build_generator(&c, &[Some(5)], 100).unwrap();
        let st = stationary_distribution(&g).unwrap();
        assert_eq!(st.pi[5], 1.0);
        assert_eq!(boundary_mass(&idx, &st.pi), 1.0);
    }

    #[test]
    fn two_absorbing_states_are_ambiguous() {
        // symmetric random walk on {0..4} absorbed at both ends
        let text = r#"{"name":"gambler","vars":["X"],"domain":[[0,4]],"params":{"N":1,"eps":1},
            "init":[2],"transitions":[
            {"label":"up","update":[1],"rate":"X * (4 - X)","scale":"unscaled"},
            {"label":"down","update":[-1],"rate":"X * (4 - X)","scale":"unscaled"}]}"#;
        let c = Model::from_json(text).unwrap().compile().unwrap();
        let (_, g) = build_generator(&c, &[None], 100).unwrap();
        assert_eq!(stationary_distribution(&g).unwrap_err(), Error::AmbiguousStationary { classes: 2 });
    }

    fn gene_fast(n: f64, y: i64) -> (StateSpaceIndex, Generator) {
        // Z = active genes at fixed protein level Y: births k_u (N - Z), deaths k_b Y Z / N
        let text = format!(
            r#"{{"name":"fast","vars":["Z"],"domain":[[0,{n}]],"params":{{"N":{n},"eps":1,"Y":{y}}},
            "init":[0],"transitions":[
            {{"label":"unbind","update":[1],"rate":"N - Z","scale":"fast"}},
            {{"label":"repress","update":[-1],"rate":"Y * Z / N","scale":"fast"}}]}}"#
        );
        let c = Model::from_json(&text).unwrap().compile().unwrap();
        build_generator(&c, &[None], 100).unwrap()
    }

    #[test]
    fn gene_fast_generator_is_tridiagonal() {
        let (_, g) = gene_fast(2.0, 3);
        let q = g.to_dense();
        assert_eq!(q[0], vec![-2.0, 2.0, 0.0]);
        assert_eq!(q[1], vec![1.5, -2.5, 1.0]);
        assert_eq!(q[2], vec![0.0, 3.0, -3.0]);
    }

    #[test]
    fn gene_fast_mean_matches_closed_form() {
        let (_, g) = gene_fast(2.0, 2);
        let pi = stationary_distribution(&g).unwrap().pi;
        let mean: f64 = pi.iter().enumerate().map(|(z, p)| z as f64 * p).sum();
        assert!((mean - 1.0).abs() < 1e-12);
        let (_, g) = gene_fast(4.0, 2);
        let pi = stationary_distribution(&g).unwrap().pi;
        let mean: f64 = pi.iter().enumerate().map(|(z, p)| z as f64 * p).sum();
        assert!((mean - 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn stationary_is_a_fixed_point() {
        let m = stoich_gene(12.0);
        let c = m.compile().unwrap();
        let (_, g) = build_generator(&c, &[None, Some(40)], DEFAULT_STATE_LIMIT).unwrap();
        let st = stationary_distribution(&g).unwrap();
        let t = 10.0 / g.max_exit_rate();
        let p = transient_solve(&g, &st.pi, t).unwrap();
        let l1: f64 = p.iter().zip(&st.pi).map(|(a, b)| (a - b).abs()).sum();
        assert!(l1 <= 1e-8, "{l1}");
    }

    fn stoich_gene(n: f64) -> Model {
        let m = fixtures::gene().with_system_size(n).unwrap().with_param("eps", 0.3).unwrap();
        crate::stoich::stoich_reduce(&m).unwrap().model
    }

    #[test]
    fn transient_conserves_probability() {
        let c = stoich_gene(10.0).compile().unwrap();
        let (_, g) = build_generator(&c, &[None, Some(30)], DEFAULT_STATE_LIMIT).unwrap();
        let p0 = initial_distribution(&g);
        for t in [0.01, 1.0, 25.0] {
            let p = transient_solve(&g, &p0, t).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
            assert!(p.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn ssa_occupation_matches_flip_law() {
        let m = flip(1.0, 3.0);
        let c = m.compile().unwrap();
        let (_, g) = build_generator(&c, &[None], 10).unwrap();
        let pi = stationary_distribution(&g).unwrap().pi;
        let est = estimate_stationary(&c, &StationaryOptions::new(2e4), RngSpec::new(17, 0), &[]).unwrap();
        assert!((est.mean[0] - pi[1]).abs() <= 3.0 * est.std_err[0], "{} vs {}", est.mean[0], pi[1]);
    }

    #[test]
    fn csv_layout() {
        let c = flip(1.0, 1.0).compile().unwrap();
        let (idx, g) = build_generator(&c, &[None], 10).unwrap();
        let pi = stationary_distribution(&g).unwrap().pi;
        assert_eq!(distribution_csv(&idx, &pi), "X,probability\n0,0.5\n1,0.5\n");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn index_is_a_bijection(n in 2.0f64..15.0, cap in 1i64..20) {
                let c = stoich_gene(n.floor()).compile().unwrap();
                let idx = StateSpaceIndex::new(&c, &[None, Some(cap)], DEFAULT_STATE_LIMIT).unwrap();
                for k in 0..idx.len() {
                    prop_assert_eq!(idx.index(&idx.state(k)), Some(k));
                }
            }

            #[test]
            fn transient_output_is_a_distribution(t in 0.0f64..20.0, n in 2.0f64..10.0) {
                let c = stoich_gene(n.floor()).compile().unwrap();
                let (_, g) = build_generator(&c, &[None, Some(15)], DEFAULT_STATE_LIMIT).unwrap();
                let p = transient_solve(&g, &initial_distribution(&g), t).unwrap();
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
                prop_assert!(p.iter().all(|&v| v >= 0.0));
            }

            #[test]
            fn generator_rows_sum_to_zero(n in 2.0f64..12.0, cap in 1i64..25) {
                let c = stoich_gene(n.floor()).compile().unwrap();
                let (_, g) = build_generator(&c, &[None, Some(cap)], DEFAULT_STATE_LIMIT).unwrap();
                for i in 0..g.len() {
                    let s: f64 = g.rows[i].iter().map(|e| e.1).sum::<f64>() + g.diag[i];
                    prop_assert!(s.abs() <= 1e-12 * (1.0 + g.diag[i].abs()));
                    prop_assert!(g.rows[i].iter().all(|e| e.1 > 0.0));
                }
            }
        }
    }
}
