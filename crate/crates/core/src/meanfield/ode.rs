//! Dormand–Prince 5(4) with embedded error control.

use serde::Serialize;

use super::VectorField;
use crate::error::{Error, Result};

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights (equal to the last row of `A`).
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
/// Fourth-order embedded weights.
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

#[derive(Debug, Clone)]
pub struct OdeOptions {
    /// Local error bound per step, relative to `1 + max|x|`.
    pub tol: f64,
    pub max_steps: usize,
    /// First trial step; chosen from the horizon when `None`.
    pub h0: Option<f64>,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            tol: 1e-10,
            max_steps: 10_000_000,
            h0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OdeSolution {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub steps: usize,
    pub rejected: usize,
    pub tol: f64,
}

impl OdeSolution {
    pub fn last(&self) -> &[f64] {
        self.x.last().expect("solutions contain the initial point")
    }
}

struct Stepper<'a, F: VectorField + ?Sized> {
    f: &'a F,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
}

impl<'a, F: VectorField + ?Sized> Stepper<'a, F> {
    fn new(f: &'a F) -> Self {
        let n = f.dim();
        Stepper {
            f,
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
        }
    }

    /// One step from `x` (with `k[0] = F(x)` already set). Writes the fifth
    /// order solution to `out` and returns the embedded error estimate
    /// vector in `err`.
    fn step(&mut self, x: &[f64], h: f64, out: &mut [f64], err: &mut [f64]) -> Result<()> {
        let n = x.len();
        for s in 1..7 {
            for i in 0..n {
                let mut acc = x[i];
                for (r, a) in A[s][..s].iter().enumerate() {
                    acc += h * a * self.k[r][i];
                }
                self.tmp[i] = acc;
            }
            self.f.eval(&self.tmp, &mut self.k[s])?;
        }
        for i in 0..n {
            let mut hi = 0.0;
            let mut lo = 0.0;
            for s in 0..7 {
                hi += B5[s] * self.k[s][i];
                lo += B4[s] * self.k[s][i];
            }
            out[i] = x[i] + h * hi;
            err[i] = h * (hi - lo);
        }
        Ok(())
    }
}

/// Adaptive integration reported on `grid` (which must start at the initial
/// time). Steps are clipped to land on grid points.
pub fn integrate_with<F, C>(f: &F, x0: &[f64], grid: &[f64], opts: &OdeOptions, mut on_step: C) -> Result<OdeSolution>
where
    F: VectorField + ?Sized,
    C: FnMut(f64, &[f64]) -> Result<()>,
{
    let n = f.dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            context: "initial condition".into(),
            expected: n,
            found: x0.len(),
        });
    }
    if grid.is_empty() || grid.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(Error::InvalidArgument("output grid must be non-empty and increasing".into()));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let t0 = grid[0];
    let t_end = *grid.last().unwrap();
    let mut st = Stepper::new(f);
    let mut x = x0.to_vec();
    let mut x_new = vec![0.0; n];
    let mut err = vec![0.0; n];
    let mut t = t0;
    let mut h = opts.h0.unwrap_or(((t_end - t0) * 1e-3).max(1e-6));
    let mut sol = OdeSolution {
        t: vec![t0],
        x: vec![x.clone()],
        steps: 0,
        rejected: 0,
        tol: opts.tol,
    };
    on_step(t, &x)?;
    f.eval(&x, &mut st.k[0])?;
    let mut next = 1;
    let mut saw_non_finite = false;
    let mut trial_error: Option<Error> = None;
    while next < grid.len() {
        let target = grid[next];
        if target <= t {
            sol.t.push(target);
            sol.x.push(x.clone());
            next += 1;
            continue;
        }
        let clipped = t + h >= target;
        let h_try = if clipped { target - t } else { h };
        if h_try < 1e-14 * t.abs().max(1.0) {
            return Err(match trial_error.take() {
                Some(e) => e,
                None if saw_non_finite => Error::NonFinite { t },
                None => Error::StepSizeUnderflow { t },
            });
        }
        // a failed stage evaluation (e.g. a trial point outside the rate
        // expressions' domain) rejects the step
        if let Err(e) = st.step(&x, h_try, &mut x_new, &mut err) {
            trial_error = Some(e);
            sol.rejected += 1;
            h = h_try * 0.1;
            continue;
        }
        let scale = 1.0 + x.iter().chain(x_new.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
        let e = err.iter().fold(0.0f64, |m, v| m.max(v.abs())) / (opts.tol * scale);
        let finite = e.is_finite() && x_new.iter().all(|v| v.is_finite());
        if finite && e <= 1.0 {
            saw_non_finite = false;
            trial_error = None;
            t = if clipped { target } else { t + h_try };
            std::mem::swap(&mut x, &mut x_new);
            sol.steps += 1;
            if sol.steps > opts.max_steps {
                return Err(Error::TooManySteps(opts.max_steps));
            }
            // first-same-as-last: the stage at c = 1 is F(x_new)
            st.k.swap(0, 6);
            on_step(t, &x)?;
            if clipped {
                sol.t.push(target);
                sol.x.push(x.clone());
                next += 1;
            }
            let grow = if e == 0.0 { 5.0 } else { (0.9 * e.powf(-0.2)).clamp(0.2, 5.0) };
            if !clipped || grow < 1.0 {
                h = h_try * grow;
            }
        } else {
            sol.rejected += 1;
            if finite {
                h = h_try * (0.9 * e.powf(-0.2)).clamp(0.1, 0.9);
            } else {
                saw_non_finite = true;
                h = h_try * 0.1;
            }
        }
    }
    Ok(sol)
}

/// Adaptive integration on `[0, t_end]` reported at `points` equally spaced
/// times.
pub fn integrate<F: VectorField + ?Sized>(f: &F, x0: &[f64], t_end: f64, points: usize, opts: &OdeOptions) -> Result<OdeSolution> {
    let grid = crate::ssa::uniform_grid(t_end, points.max(2));
    integrate_with(f, x0, &grid, opts, |_, _| Ok(()))
}

/// Fixed-step fifth-order integration (no error control); returns `x(t_end)`.
pub fn integrate_fixed<F: VectorField + ?Sized>(f: &F, x0: &[f64], t_end: f64, steps: usize) -> Result<Vec<f64>> {
    let n = f.dim();
    let h = t_end / steps as f64;
    let mut st = Stepper::new(f);
    let mut x = x0.to_vec();
    let mut x_new = vec![0.0; n];
    let mut err = vec![0.0; n];
    for _ in 0..steps {
        f.eval(&x, &mut st.k[0])?;
        st.step(&x, h, &mut x_new, &mut err)?;
        std::mem::swap(&mut x, &mut x_new);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meanfield::{limit_rates, FnField};

    fn decay() -> FnField<impl Fn(&[f64], &mut [f64]) -> Result<()> + Sync> {
        FnField::new(1, |x: &[f64], out: &mut [f64]| {
            out[0] = -x[0];
            Ok(())
        })
    }

    #[test]
    fn zero_drift_keeps_state() {
        let f = FnField::new(2, |_: &[f64], out: &mut [f64]| {
            out.fill(0.0);
            Ok(())
        });
        let sol = integrate(&f, &[1.5, -2.0], 3.0, 11, &OdeOptions::default()).unwrap();
        assert!(sol.x.iter().all(|x| x == &[1.5, -2.0]));
    }

    #[test]
    fn exponential_decay() {
        let sol = integrate(&decay(), &[1.0], 1.0, 2, &OdeOptions::default()).unwrap();
        assert!((sol.last()[0] - (-1.0f64).exp()).abs() <= 1e-8);
        assert_eq!(sol.t, vec![0.0, 1.0]);
    }

    #[test]
    fn fixed_step_order() {
        let exact = (-1.0f64).exp();
        let e1 = (integrate_fixed(&decay(), &[1.0], 1.0, 10).unwrap()[0] - exact).abs();
        let e2 = (integrate_fixed(&decay(), &[1.0], 1.0, 20).unwrap()[0] - exact).abs();
        assert!(e1 / e2 >= 4.0, "{}", e1 / e2);
        assert!(e1 / e2 > 20.0, "fifth order should give about 32, got {}", e1 / e2);
    }

    #[test]
    fn tolerance_controls_error() {
        let exact = (-5.0f64).exp();
        let loose = integrate(&decay(), &[1.0], 5.0, 2, &OdeOptions { tol: 1e-6, ..Default::default() }).unwrap();
        let tight = integrate(&decay(), &[1.0], 5.0, 2, &OdeOptions { tol: 1e-12, ..Default::default() }).unwrap();
        assert!((tight.last()[0] - exact).abs() < (loose.last()[0] - exact).abs());
    }

    #[test]
    fn stiff_problem_underflows_or_exhausts_steps() {
        let f = FnField::new(1, |x: &[f64], out: &mut [f64]| {
            out[0] = -1e9 * (x[0] - 1.0);
            Ok(())
        });
        let opts = OdeOptions { tol: 1e-10, max_steps: 10_000, h0: None };
        let err = integrate(&f, &[0.0], 100.0, 2, &opts).unwrap_err();
        assert!(matches!(err, Error::TooManySteps(_) | Error::StepSizeUnderflow { .. }), "{err:?}");
    }

    #[test]
    fn blow_up_is_reported() {
        let f = FnField::new(1, |x: &[f64], out: &mut [f64]| {
            out[0] = x[0] * x[0];
            Ok(())
        });
        assert!(integrate(&f, &[1.0], 2.0, 2, &OdeOptions::default()).is_err());
    }

    #[test]
    fn gene_conservation_along_solution() {
        let m = crate::fixtures::gene().with_param("eps", 1.0).unwrap();
        let d = limit_rates(&m).unwrap();
        let sol = integrate(&d, &d.initial_density(), 10.0, 101, &OdeOptions::default()).unwrap();
        for x in &sol.x {
            assert!((x[0] + x[1] - 1.0).abs() <= 1e-8);
        }
    }

    #[test]
    fn callback_sees_every_accepted_step() {
        let mut count = 0;
        let sol = integrate_with(&decay(), &[1.0], &[0.0, 0.5, 2.0], &OdeOptions::default(), |_, _| {
            count += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(count, sol.steps + 1);
    }
}
