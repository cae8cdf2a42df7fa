//! Multi-start damped Newton for zeros of a vector field, with stability
//! classification from Jacobian eigenvalues.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::VectorField;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Stable,
    Unstable,
    Marginal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Equilibrium {
    pub point: Vec<f64>,
    /// `‖F(x*)‖∞`.
    pub residual: f64,
    /// Jacobian eigenvalues as `(re, im)`, sorted by real part.
    pub eigenvalues: Vec<(f64, f64)>,
    pub stability: Stability,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumSet {
    pub equilibria: Vec<Equilibrium>,
    pub starts: usize,
    pub converged_starts: usize,
}

impl EquilibriumSet {
    pub fn count(&self, s: Stability) -> usize {
        self.equilibria.iter().filter(|e| e.stability == s).count()
    }
}

#[derive(Debug, Clone)]
pub struct EquilibriumOptions {
    pub starts: usize,
    /// Residual tolerance; also sets the deduplication distance `10·tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// Eigenvalues with `|re| ≤ tol_eig` make a point marginal.
    pub tol_eig: f64,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        EquilibriumOptions {
            starts: 64,
            tol: 1e-10,
            max_iter: 200,
            tol_eig: 1e-8,
        }
    }
}

/// Central-difference Jacobian with step `h·(1 + |x_i|)`.
pub fn jacobian<F: VectorField + ?Sized>(f: &F, x: &[f64], h: f64) -> Result<DMatrix<f64>> {
    let n = f.dim();
    let mut j = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for c in 0..n {
        let step = h * (1.0 + x[c].abs());
        xp[c] = x[c] + step;
        f.eval(&xp, &mut fp)?;
        xp[c] = x[c] - step;
        f.eval(&xp, &mut fm)?;
        xp[c] = x[c];
        for r in 0..n {
            j[(r, c)] = (fp[r] - fm[r]) / (2.0 * step);
        }
    }
    Ok(j)
}

pub const JACOBIAN_STEP: f64 = 1e-6;

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn clamp_into(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, (lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(*lo, *hi);
    }
}

/// Damped Newton from `x0`, kept inside `bounds`. Returns the root and its
/// residual on convergence.
pub fn newton<F: VectorField + ?Sized>(
    f: &F,
    x0: &[f64],
    bounds: &[(f64, f64)],
    tol: f64,
    max_iter: usize,
) -> Option<(Vec<f64>, f64)> {
    let n = f.dim();
    let mut x = x0.to_vec();
    clamp_into(&mut x, bounds);
    let mut fx = vec![0.0; n];
    f.eval(&x, &mut fx).ok()?;
    let mut r = norm_inf(&fx);
    let mut trial = vec![0.0; n];
    let mut ft = vec![0.0; n];
    for _ in 0..max_iter {
        if r <= tol {
            break;
        }
        let j = jacobian(f, &x, JACOBIAN_STEP).ok()?;
        let d = j.lu().solve(&DVector::from_iterator(n, fx.iter().map(|v| -v)))?;
        let mut alpha = 1.0;
        loop {
            for i in 0..n {
                trial[i] = x[i] + alpha * d[i];
            }
            clamp_into(&mut trial, bounds);
            if f.eval(&trial, &mut ft).is_ok() {
                let rt = norm_inf(&ft);
                if rt.is_finite() && rt < (1.0 - 1e-4 * alpha) * r {
                    x.copy_from_slice(&trial);
                    fx.copy_from_slice(&ft);
                    r = rt;
                    break;
                }
            }
            alpha *= 0.5;
            if alpha < 1e-10 {
                return None;
            }
        }
    }
    if r > tol {
        return None;
    }
    // polish: plain Newton steps while they keep reducing the residual
    for _ in 0..3 {
        let Ok(j) = jacobian(f, &x, JACOBIAN_STEP) else { break };
        let Some(d) = j.lu().solve(&DVector::from_iterator(n, fx.iter().map(|v| -v))) else { break };
        for i in 0..n {
            trial[i] = x[i] + d[i];
        }
        clamp_into(&mut trial, bounds);
        if f.eval(&trial, &mut ft).is_err() {
            break;
        }
        let rt = norm_inf(&ft);
        if !(rt < r) {
            break;
        }
        x.copy_from_slice(&trial);
        fx.copy_from_slice(&ft);
        r = rt;
    }
    Some((x, r))
}

fn halton(index: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let mut i = index;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

const PRIMES: [usize; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Box center followed by Halton points.
pub fn start_points(bounds: &[(f64, f64)], count: usize) -> Vec<Vec<f64>> {
    let n = bounds.len();
    assert!(n <= PRIMES.len(), "start points support up to {} dimensions", PRIMES.len());
    (0..count)
        .map(|k| {
            (0..n)
                .map(|i| {
                    let u = if k == 0 { 0.5 } else { halton(k, PRIMES[i]) };
                    bounds[i].0 + u * (bounds[i].1 - bounds[i].0)
                })
                .collect()
        })
        .collect()
}

/// Classify by eigenvalue real parts against `tol_eig`.
pub fn classify(eigenvalues: &[(f64, f64)], tol_eig: f64) -> Stability {
    if eigenvalues.iter().all(|e| e.0 < -tol_eig) {
        Stability::Stable
    } else if eigenvalues.iter().any(|e| e.0 > tol_eig) {
        Stability::Unstable
    } else {
        Stability::Marginal
    }
}

pub fn eigenvalues(j: &DMatrix<f64>) -> Vec<(f64, f64)> {
    let mut ev: Vec<(f64, f64)> = j.complex_eigenvalues().iter().map(|c| (c.re, c.im)).collect();
    ev.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    ev
}

/// Zeros of `f` in the box from `opts.starts` quasi-random starts,
/// deduplicated and sorted lexicographically.
pub fn find_equilibria<F: VectorField + ?Sized>(
    f: &F,
    bounds: &[(f64, f64)],
    opts: &EquilibriumOptions,
) -> Result<EquilibriumSet> {
    if bounds.len() != f.dim() {
        return Err(Error::DimensionMismatch {
            context: "equilibrium search box".into(),
            expected: f.dim(),
            found: bounds.len(),
        });
    }
    if bounds.iter().any(|(lo, hi)| !(lo <= hi)) {
        return Err(Error::InvalidArgument("equilibrium search box is empty".into()));
    }
    let starts = start_points(bounds, opts.starts);
    let roots: Vec<Option<(Vec<f64>, f64)>> =
        starts.par_iter().map(|s| newton(f, s, bounds, opts.tol, opts.max_iter)).collect();
    let converged = roots.iter().filter(|r| r.is_some()).count();
    let mut unique: Vec<(Vec<f64>, f64)> = Vec::new();
    for (x, r) in roots.into_iter().flatten() {
        match unique.iter_mut().find(|(u, _)| u.iter().zip(&x).all(|(a, b)| (a - b).abs() <= 10.0 * opts.tol)) {
            Some(u) if r < u.1 => *u = (x, r),
            Some(_) => {}
            None => unique.push((x, r)),
        }
    }
    unique.sort_by(|a, b| {
        a.0.iter()
            .zip(&b.0)
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let equilibria = unique
        .into_iter()
        .map(|(point, residual)| {
            let ev = eigenvalues(&jacobian(f, &point, JACOBIAN_STEP)?);
            Ok(Equilibrium {
                stability: classify(&ev, opts.tol_eig),
                eigenvalues: ev,
                point,
                residual,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EquilibriumSet {
        equilibria,
        starts: opts.starts,
        converged_starts: converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meanfield::FnField;

    fn toggle_fast() -> FnField<impl Fn(&[f64], &mut [f64]) -> Result<()> + Sync> {
        FnField::new(2, |x: &[f64], out: &mut [f64]| {
            out[0] = 10.0 / (1.0 + x[1].powf(1.4)) - x[0];
            out[1] = 10.0 / (1.0 + x[0].powf(1.4)) - x[1];
            Ok(())
        })
    }

    #[test]
    fn toggle_has_two_stable_and_one_unstable_point() {
        let set = find_equilibria(&toggle_fast(), &[(0.0, 12.0), (0.0, 12.0)], &EquilibriumOptions::default()).unwrap();
        assert_eq!(set.equilibria.len(), 3, "{set:?}");
        assert_eq!(set.count(Stability::Stable), 2);
        assert_eq!(set.count(Stability::Unstable), 1);
        let s = &set.equilibria;
        // independent check: a and b solve b = 10/(1+a^1.4), a = 10/(1+b^1.4)
        let (a, b) = (s[0].point[0], s[0].point[1]);
        assert!((b - 10.0 / (1.0 + a.powf(1.4))).abs() < 1e-9 && (a - 10.0 / (1.0 + b.powf(1.4))).abs() < 1e-9);
        assert!((a - 0.764).abs() < 1e-3 && (b - 5.931).abs() < 1e-3);
        assert!((s[1].point[0] - s[1].point[1]).abs() < 1e-8);
    }

    #[test]
    fn scalar_decay() {
        let f = FnField::new(1, |x: &[f64], out: &mut [f64]| {
            out[0] = -x[0];
            Ok(())
        });
        let set = find_equilibria(&f, &[(-5.0, 5.0)], &EquilibriumOptions::default()).unwrap();
        assert_eq!(set.equilibria.len(), 1);
        assert!(set.equilibria[0].point[0].abs() < 1e-12);
        assert_eq!(set.equilibria[0].stability, Stability::Stable);
    }

    #[test]
    fn gene_fast_root() {
        // H(z) = k_u (1 - z) - k_b y z at y = 1
        let f = FnField::new(1, |z: &[f64], out: &mut [f64]| {
            out[0] = (1.0 - z[0]) - z[0];
            Ok(())
        });
        let set = find_equilibria(&f, &[(0.0, 1.0)], &EquilibriumOptions::default()).unwrap();
        assert_eq!(set.equilibria.len(), 1);
        assert!((set.equilibria[0].point[0] - 0.5).abs() < 1e-12);
        assert_eq!(set.equilibria[0].stability, Stability::Stable);
    }

    #[test]
    fn no_roots_gives_an_empty_set() {
        let f = FnField::new(1, |_: &[f64], out: &mut [f64]| {
            out[0] = 1.0;
            Ok(())
        });
        let set = find_equilibria(&f, &[(0.0, 1.0)], &EquilibriumOptions { starts: 8, ..Default::default() }).unwrap();
        assert!(set.equilibria.is_empty());
        assert_eq!(set.converged_starts, 0);
    }

    #[test]
    fn marginal_is_reported() {
        let f = FnField::new(1, |x: &[f64], out: &mut [f64]| {
            out[0] = -x[0].powi(3);
            Ok(())
        });
        let ev = eigenvalues(&jacobian(&f, &[0.0], JACOBIAN_STEP).unwrap());
        assert_eq!(classify(&ev, 1e-8), Stability::Marginal);
    }

    #[test]
    fn jacobian_stencils_agree_at_equilibria() {
        let f = toggle_fast();
        let set = find_equilibria(&f, &[(0.0, 12.0), (0.0, 12.0)], &EquilibriumOptions::default()).unwrap();
        for e in &set.equilibria {
            let j1 = jacobian(&f, &e.point, JACOBIAN_STEP).unwrap();
            let j2 = jacobian(&f, &e.point, JACOBIAN_STEP / 2.0).unwrap();
            let scale = j1.amax().max(1e-12);
            assert!((j1 - j2).amax() / scale <= 1e-4);
        }
    }
}
