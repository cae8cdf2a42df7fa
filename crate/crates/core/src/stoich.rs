//! Exact stoichiometric linear algebra over the rationals.

use std::collections::BTreeSet;
use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::expr::{BinOp, RateExpr};
use crate::model::{Bound, Model, Transition};

pub type Rat = BigRational;

pub fn rat(v: i64) -> Rat {
    Rat::from_integer(BigInt::from(v))
}

fn rat_to_i64(q: &Rat) -> Option<i64> {
    if q.is_integer() {
        q.to_integer().to_i64()
    } else {
        None
    }
}

/// Dense integer matrix, row major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntMatrix {
    rows: usize,
    cols: usize,
    data: Vec<i64>,
}

impl IntMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        IntMatrix {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    /// Matrix whose columns are the given vectors, all of length `rows`.
    pub fn from_columns(rows: usize, columns: &[Vec<i64>]) -> Self {
        let mut m = IntMatrix::zeros(rows, columns.len());
        for (j, c) in columns.iter().enumerate() {
            assert_eq!(c.len(), rows, "column length");
            for (i, &v) in c.iter().enumerate() {
                m.data[i * m.cols + j] = v;
            }
        }
        m
    }

    pub fn from_rows(rows: &[Vec<i64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "row length");
            data.extend_from_slice(r);
        }
        IntMatrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> i64 {
        self.data[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<i64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<i64>> {
        self.data.chunks(self.cols.max(1)).take(self.rows).map(<[i64]>::to_vec).collect()
    }

    pub fn to_rat(&self) -> RatMatrix {
        RatMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| rat(v)).collect(),
        }
    }
}

/// Dense rational matrix, row major, entries in canonical form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Rat>,
}

impl RatMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        RatMatrix {
            rows,
            cols,
            data: vec![Rat::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = RatMatrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, Rat::one());
        }
        m
    }

    pub fn from_columns(rows: usize, columns: &[Vec<Rat>]) -> Self {
        let mut m = RatMatrix::zeros(rows, columns.len());
        for (j, c) in columns.iter().enumerate() {
            assert_eq!(c.len(), rows, "column length");
            for (i, v) in c.iter().enumerate() {
                m.set(i, j, v.clone());
            }
        }
        m
    }

    pub fn from_int_columns(rows: usize, columns: &[Vec<i64>]) -> Self {
        IntMatrix::from_columns(rows, columns).to_rat()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &Rat {
        &self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Rat) {
        self.data[i * self.cols + j] = v;
    }

    pub fn column(&self, j: usize) -> Vec<Rat> {
        (0..self.rows).map(|i| self.get(i, j).clone()).collect()
    }

    pub fn columns(&self) -> Vec<Vec<Rat>> {
        (0..self.cols).map(|j| self.column(j)).collect()
    }

    pub fn transpose(&self) -> RatMatrix {
        let mut t = RatMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j).clone());
            }
        }
        t
    }

    /// Horizontal concatenation `(self, other)`.
    pub fn hcat(&self, other: &RatMatrix) -> RatMatrix {
        assert_eq!(self.rows, other.rows, "row count");
        let mut cols = self.columns();
        cols.extend(other.columns());
        RatMatrix::from_columns(self.rows, &cols)
    }

    pub fn mul_vec(&self, v: &[Rat]) -> Vec<Rat> {
        assert_eq!(v.len(), self.cols, "vector length");
        (0..self.rows)
            .map(|i| (0..self.cols).fold(Rat::zero(), |acc, j| acc + self.get(i, j) * &v[j]))
            .collect()
    }

    /// `selfᵀ v` for an integer vector.
    pub fn tr_mul_int(&self, v: &[i64]) -> Vec<Rat> {
        let v: Vec<Rat> = v.iter().map(|&x| rat(x)).collect();
        self.transpose().mul_vec(&v)
    }

    /// Reduced row echelon form and the pivot columns.
    pub fn rref(&self) -> (RatMatrix, Vec<usize>) {
        let mut m = self.clone();
        let mut pivots = Vec::new();
        let mut row = 0;
        for col in 0..m.cols {
            if row == m.rows {
                break;
            }
            let Some(p) = (row..m.rows).find(|&i| !m.get(i, col).is_zero()) else {
                continue;
            };
            m.swap_rows(row, p);
            let inv = m.get(row, col).recip();
            for j in col..m.cols {
                let v = m.get(row, j) * &inv;
                m.set(row, j, v);
            }
            for i in 0..m.rows {
                if i == row || m.get(i, col).is_zero() {
                    continue;
                }
                let f = m.get(i, col).clone();
                for j in col..m.cols {
                    let v = m.get(i, j) - &f * m.get(row, j);
                    m.set(i, j, v);
                }
            }
            pivots.push(col);
            row += 1;
        }
        (m, pivots)
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a != b {
            for j in 0..self.cols {
                self.data.swap(a * self.cols + j, b * self.cols + j);
            }
        }
    }

    pub fn rank(&self) -> usize {
        self.rref().1.len()
    }

    pub fn inverse(&self) -> Result<RatMatrix> {
        if self.rows != self.cols {
            return Err(Error::DimensionMismatch {
                context: "matrix inverse".into(),
                expected: self.rows,
                found: self.cols,
            });
        }
        let n = self.rows;
        let (r, pivots) = self.hcat(&RatMatrix::identity(n)).rref();
        if pivots.len() < n || pivots[n - 1] != n - 1 {
            return Err(Error::Singular);
        }
        let mut inv = RatMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                inv.set(i, j, r.get(i, n + j).clone());
            }
        }
        Ok(inv)
    }

    /// Basis of the null space `{v : self v = 0}` from the free columns of
    /// the reduced row echelon form.
    pub fn null_space(&self) -> Vec<Vec<Rat>> {
        let (r, pivots) = self.rref();
        let pivot_set: BTreeSet<usize> = pivots.iter().copied().collect();
        (0..self.cols)
            .filter(|c| !pivot_set.contains(c))
            .map(|free| {
                let mut v = vec![Rat::zero(); self.cols];
                v[free] = Rat::one();
                for (row, &p) in pivots.iter().enumerate() {
                    v[p] = -r.get(row, free).clone();
                }
                v
            })
            .collect()
    }

    pub fn to_f64_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j).to_f64().unwrap_or(f64::NAN)).collect())
            .collect()
    }
}

impl fmt::Display for RatMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|j| self.get(i, j).to_string()).collect();
            writeln!(f, "[{}]", row.join(", "))?;
        }
        Ok(())
    }
}

/// Basis `(C, K)` of the state space: `C` spans conserved directions,
/// `K` completes it. The square matrix `(C, K)` is invertible.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Basis {
    pub c: RatMatrix,
    pub k: RatMatrix,
}

impl Basis {
    pub fn matrix(&self) -> RatMatrix {
        self.c.hcat(&self.k)
    }
}

/// Columns are the update vectors of the selected transitions, in model order.
pub fn stoich_matrix(model: &Model, subset: &[usize]) -> IntMatrix {
    let mut idx: Vec<usize> = subset.to_vec();
    idx.sort_unstable();
    idx.dedup();
    let cols: Vec<Vec<i64>> = idx.iter().map(|&j| model.transitions[j].update.clone()).collect();
    IntMatrix::from_columns(model.dim(), &cols)
}

/// Rank by exact elimination and `codim = rows − rank`.
pub fn rank_codim(s: &IntMatrix) -> (usize, usize) {
    let rank = s.to_rat().rank();
    (rank, s.rows() - rank)
}

/// Integer basis of the left null space `{c : cᵀS = 0}`, each vector with
/// gcd 1 and first nonzero entry positive.
pub fn p_invariants(s: &IntMatrix) -> Vec<Vec<i64>> {
    s.to_rat().transpose().null_space().iter().map(|v| primitive_integer(v)).collect()
}

/// Scale a nonzero rational vector to the primitive integer vector with
/// positive leading entry.
pub fn primitive_integer(v: &[Rat]) -> Vec<i64> {
    let lcm = v.iter().fold(BigInt::one(), |acc, q| acc.lcm(q.denom()));
    let ints: Vec<BigInt> = v.iter().map(|q| (q * Rat::from_integer(lcm.clone())).to_integer()).collect();
    let g = ints.iter().fold(BigInt::zero(), |acc, x| acc.gcd(x));
    let sign = match ints.iter().find(|x| !x.is_zero()) {
        Some(x) if x.is_negative() => -BigInt::one(),
        Some(_) => BigInt::one(),
        None => return vec![0; v.len()],
    };
    ints.iter()
        .map(|x| (x / &g * &sign).to_i64().expect("p-invariant entries fit in i64"))
        .collect()
}

/// Complete the independent columns of `C` with unit vectors: `K` holds
/// `e_j` for every non-pivot column `j` of `rref(Cᵀ)`, in increasing order.
pub fn complete_basis(c: &RatMatrix, n: usize) -> Result<Basis> {
    if c.rows() != n {
        return Err(Error::DimensionMismatch {
            context: "complete_basis".into(),
            expected: n,
            found: c.rows(),
        });
    }
    let (_, pivots) = c.transpose().rref();
    if pivots.len() < c.cols() {
        return Err(Error::DependentColumns);
    }
    let pivot_set: BTreeSet<usize> = pivots.into_iter().collect();
    let k_cols: Vec<Vec<Rat>> = (0..n)
        .filter(|j| !pivot_set.contains(j))
        .map(|j| {
            let mut e = vec![Rat::zero(); n];
            e[j] = Rat::one();
            e
        })
        .collect();
    Ok(Basis {
        c: c.clone(),
        k: RatMatrix::from_columns(n, &k_cols),
    })
}

/// Build `Σ q_k · term_k` from exact rational coefficients. Non-integer
/// coefficients are written as `p / q` so constants stay non-negative.
pub fn rational_combination(terms: &[(Rat, RateExpr)]) -> RateExpr {
    let mut acc: Option<RateExpr> = None;
    for (q, term) in terms {
        if q.is_zero() {
            continue;
        }
        let mag = q.abs();
        let scaled = if mag.is_one() {
            term.clone()
        } else {
            let num = RateExpr::constant(mag.numer().to_f64().expect("finite coefficient"));
            let with_num = RateExpr::binary(BinOp::Mul, num, term.clone());
            if mag.is_integer() {
                with_num
            } else {
                let den = RateExpr::constant(mag.denom().to_f64().expect("finite coefficient"));
                RateExpr::binary(BinOp::Div, with_num, den)
            }
        };
        let neg = q.is_negative();
        acc = Some(match acc {
            None if neg => RateExpr::Neg(Box::new(scaled)),
            None => scaled,
            Some(prev) if neg => RateExpr::binary(BinOp::Sub, prev, scaled),
            Some(prev) => RateExpr::binary(BinOp::Add, prev, scaled),
        });
    }
    acc.unwrap_or(RateExpr::Const(0.0))
}

fn integer_vector(v: &[Rat], what: impl Fn() -> String) -> Result<Vec<i64>> {
    v.iter()
        .map(|q| rat_to_i64(q).ok_or_else(|| Error::NonIntegerImage { what: what() }))
        .collect()
}

fn fresh_name(base: &str, taken: &dyn Fn(&str) -> bool) -> String {
    let mut name = base.to_string();
    while taken(&name) {
        name.push('_');
    }
    name
}

/// Interval image of the box under `y = Aᵀ x`, intersected with `y ≥ 0`.
fn image_bounds(domain: &[Bound], a: &RatMatrix) -> Result<Vec<Bound>> {
    (0..a.cols())
        .map(|k| {
            let mut lo = Some(Rat::zero());
            let mut hi = Some(Rat::zero());
            for (i, b) in domain.iter().enumerate() {
                let w = a.get(i, k);
                if w.is_zero() {
                    continue;
                }
                let lo_i = Some(rat(b.lo));
                let hi_i = b.hi.map(rat);
                let (for_lo, for_hi) = if w.is_positive() { (lo_i, hi_i) } else { (hi_i, lo_i) };
                lo = lo.zip(for_lo).map(|(acc, v)| acc + w * v);
                hi = hi.zip(for_hi).map(|(acc, v)| acc + w * v);
            }
            let lo = lo.map_or(0, |q| q.floor().to_integer().to_i64().unwrap_or(i64::MIN).max(0));
            let hi = hi.map(|q| q.ceil().to_integer().to_i64().unwrap_or(i64::MAX));
            if hi.is_some_and(|h| h < lo) {
                return Err(Error::InvalidModel(format!("linear image coordinate {} has an empty range", k + 1)));
            }
            Ok(Bound { lo, hi })
        })
        .collect()
}

/// The image of a model under `Y = Aᵀ X`: updates `Aᵀν`, rates
/// `W(A⁻ᵀ y)`, init `Aᵀ X₀`, domain the interval image of the box.
/// A coordinate whose column of `A` is a unit vector `e_i` keeps the name of
/// variable `i`; others are named `lin<k>`.
pub fn apply_linear_image(model: &Model, a: &RatMatrix) -> Result<Model> {
    let n = model.dim();
    if a.rows() != n || a.cols() != n {
        return Err(Error::DimensionMismatch {
            context: "linear image matrix".into(),
            expected: n,
            found: if a.rows() != n { a.rows() } else { a.cols() },
        });
    }
    let inv_t = a.inverse()?.transpose();
    let names: Vec<String> = (0..n)
        .map(|k| match unit_index(&a.column(k)) {
            Some(i) => model.vars[i].clone(),
            None => fresh_name(&format!("lin{}", k + 1), &|s| {
                model.params.contains_key(s) || model.vars.iter().any(|v| v == s)
            }),
        })
        .collect();
    let image_syms: Vec<RateExpr> = names.iter().map(RateExpr::symbol).collect();
    let transitions = transform_transitions(model, a, &inv_t, &image_syms)?;
    let init = integer_vector(&a.tr_mul_int(&model.init), || "the initial state".into())?;
    let out = Model {
        name: model.name.clone(),
        vars: names,
        domain: image_bounds(&model.domain, a)?,
        params: model.params.clone(),
        init,
        transitions,
    };
    out.validate()?;
    Ok(out)
}

fn unit_index(col: &[Rat]) -> Option<usize> {
    let nz: Vec<usize> = (0..col.len()).filter(|&i| !col[i].is_zero()).collect();
    match nz.as_slice() {
        [i] if col[*i].is_one() => Some(*i),
        _ => None,
    }
}

/// Updates mapped by `Aᵀ` and rates with each original variable replaced by
/// its expression `x_i = Σ_k (A⁻ᵀ)_{ik} y_k` over `image_syms`.
fn transform_transitions(
    model: &Model,
    a: &RatMatrix,
    inv_t: &RatMatrix,
    image_syms: &[RateExpr],
) -> Result<Vec<Transition>> {
    let n = model.dim();
    let x_exprs: Vec<RateExpr> = (0..n)
        .map(|i| {
            let terms: Vec<(Rat, RateExpr)> =
                (0..n).map(|k| (inv_t.get(i, k).clone(), image_syms[k].clone())).collect();
            rational_combination(&terms)
        })
        .collect();
    model
        .transitions
        .iter()
        .map(|t| {
            let update = integer_vector(&a.tr_mul_int(&t.update), || format!("the update of `{}`", t.label))?;
            let rate = t.rate.substitute(&|s| model.var_index(s).map(|i| x_exprs[i].clone()));
            Ok(Transition {
                label: t.label.clone(),
                update,
                rate,
                scale: t.scale,
            })
        })
        .collect()
}

/// Result of eliminating conserved quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct StoichReduction {
    /// Model over `Z = Kᵀ X`.
    pub model: Model,
    /// Invariant values `Y₀ = Cᵀ X₀`.
    pub invariant_values: Vec<Rat>,
    /// Names of the parameters holding `Y₀ / N`.
    pub invariant_params: Vec<String>,
    pub basis: Basis,
}

/// Eliminate the p-invariants of all transitions. Each conserved coordinate
/// is replaced in the rates by `inv<k> * N`, with parameter
/// `inv<k> = Y₀ₖ / N`, so the reduced model stays density dependent.
pub fn stoich_reduce(model: &Model) -> Result<StoichReduction> {
    let n = model.dim();
    let all: Vec<usize> = (0..model.transitions.len()).collect();
    let inv = p_invariants(&stoich_matrix(model, &all));
    if inv.is_empty() {
        return Err(Error::NotReducible);
    }
    let basis = complete_basis(&RatMatrix::from_int_columns(n, &inv), n)?;
    let a = basis.matrix();
    let inv_t = a.inverse()?.transpose();
    let m = inv.len();
    let n_sym = RateExpr::symbol("N");
    let taken = |s: &str| model.params.contains_key(s) || model.vars.iter().any(|v| v == s);
    let invariant_params: Vec<String> = (1..=m).map(|k| fresh_name(&format!("inv{k}"), &taken)).collect();
    let invariant_values = basis.c.tr_mul_int(&model.init);
    let mut image_syms: Vec<RateExpr> = invariant_params
        .iter()
        .map(|p| RateExpr::binary(BinOp::Mul, RateExpr::symbol(p), n_sym.clone()))
        .collect();
    let mut vars = Vec::with_capacity(n - m);
    for k in 0..n - m {
        let i = unit_index(&basis.k.column(k)).expect("completion uses unit vectors");
        vars.push(model.vars[i].clone());
        image_syms.push(RateExpr::symbol(&model.vars[i]));
    }
    let mut transitions = transform_transitions(model, &a, &inv_t, &image_syms)?;
    for t in &mut transitions {
        debug_assert!(t.update[..m].iter().all(|&v| v == 0));
        t.update.drain(..m);
    }
    let bounds = image_bounds(&model.domain, &a)?;
    let init = integer_vector(&a.tr_mul_int(&model.init), || "the initial state".into())?;
    let mut params = model.params.clone();
    let n_val = model.system_size();
    for (p, y0) in invariant_params.iter().zip(&invariant_values) {
        params.insert(p.clone(), y0.to_f64().expect("finite invariant") / n_val);
    }
    let reduced = Model {
        name: model.name.clone(),
        vars,
        domain: bounds[m..].to_vec(),
        params,
        init: init[m..].to_vec(),
        transitions,
    };
    reduced.validate()?;
    Ok(StoichReduction {
        model: reduced,
        invariant_values,
        invariant_params,
        basis,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::RateSource;

    fn gene_s() -> IntMatrix {
        stoich_matrix(&fixtures::gene(), &[0, 1, 2, 3])
    }

    #[test]
    fn gene_stoichiometry() {
        assert_eq!(gene_s().to_rows(), vec![vec![0, 0, -1, 1], vec![0, 0, 1, -1], vec![1, -1, 0, 0]]);
        assert_eq!(stoich_matrix(&fixtures::gene(), &[0]).to_rows(), vec![vec![0], vec![0], vec![1]]);
    }

    #[test]
    fn gene_rank_and_invariants() {
        assert_eq!(rank_codim(&gene_s()), (2, 1));
        assert_eq!(p_invariants(&gene_s()), vec![vec![1, 1, 0]]);
    }

    #[test]
    fn gene_fast_block() {
        let fast = IntMatrix::from_rows(&[vec![1, -1], vec![0, 0]]);
        assert_eq!(rank_codim(&fast), (1, 1));
        assert_eq!(p_invariants(&fast), vec![vec![0, 1]]);
    }

    #[test]
    fn degenerate_ranks() {
        assert_eq!(rank_codim(&IntMatrix::zeros(3, 4)), (0, 3));
        assert!(p_invariants(&IntMatrix::from_rows(&[vec![1, 0], vec![0, 1]])).is_empty());
    }

    #[test]
    fn invariant_normalization() {
        let v = [Rat::new(BigInt::from(-2), BigInt::from(3)), rat(0), Rat::new(BigInt::from(4), BigInt::from(9))];
        assert_eq!(primitive_integer(&v), vec![3, 0, -2]);
    }

    #[test]
    fn basis_completion_examples() {
        let b = complete_basis(&RatMatrix::from_int_columns(3, &[vec![1, 1, 0]]), 3).unwrap();
        assert_eq!(b.k, RatMatrix::from_int_columns(3, &[vec![0, 1, 0], vec![0, 0, 1]]));
        let b = complete_basis(&RatMatrix::from_int_columns(2, &[vec![0, 1]]), 2).unwrap();
        assert_eq!(b.k, RatMatrix::from_int_columns(2, &[vec![1, 0]]));
        let b = complete_basis(&RatMatrix::identity(2), 2).unwrap();
        assert_eq!(b.k.cols(), 0);
        let dep = RatMatrix::from_int_columns(2, &[vec![1, 1], vec![2, 2]]);
        assert_eq!(complete_basis(&dep, 2).unwrap_err(), Error::DependentColumns);
    }

    #[test]
    fn singular_matrices_are_rejected() {
        let s = RatMatrix::from_int_columns(2, &[vec![1, 2], vec![2, 4]]);
        assert_eq!(s.inverse().unwrap_err(), Error::Singular);
        assert_eq!(apply_linear_image(&fixtures::flip(), &RatMatrix::zeros(1, 1)).unwrap_err(), Error::Singular);
    }

    #[test]
    fn identity_image_is_the_same_model() {
        let m = fixtures::gene();
        let img = apply_linear_image(&m, &RatMatrix::identity(3)).unwrap();
        assert_eq!(img.vars, m.vars);
        assert_eq!(img.init, m.init);
        assert_eq!(img.domain, m.domain);
        let c0 = m.compile().unwrap();
        let c1 = img.compile().unwrap();
        for j in 0..4 {
            assert_eq!(img.transitions[j].update, m.transitions[j].update);
            assert_eq!(c0.rate(j, &[40, 60, 7]).unwrap(), c1.rate(j, &[40, 60, 7]).unwrap());
        }
    }

    #[test]
    fn permutation_swaps_variables() {
        let m = fixtures::gene();
        let p = RatMatrix::from_int_columns(3, &[vec![0, 1, 0], vec![1, 0, 0], vec![0, 0, 1]]);
        let img = apply_linear_image(&m, &p).unwrap();
        assert_eq!(img.vars, ["X2", "X1", "X3"]);
        assert_eq!(img.transitions[2].update, vec![1, -1, 0]);
        let c0 = m.compile().unwrap();
        let c1 = img.compile().unwrap();
        assert_eq!(c0.rate(3, &[30, 70, 9]).unwrap(), c1.rate(3, &[70, 30, 9]).unwrap());
    }

    #[test]
    fn invariant_image_freezes_first_coordinate_under_fast_moves() {
        let m = fixtures::gene();
        let b = complete_basis(&RatMatrix::from_int_columns(3, &[vec![1, 1, 0]]), 3).unwrap();
        let img = apply_linear_image(&m, &b.matrix()).unwrap();
        assert_eq!(img.vars, ["lin1", "X2", "X3"]);
        assert_eq!(img.init, vec![100, 0, 0]);
        assert_eq!(img.transitions[2].update, vec![0, 1, 0]);
        assert_eq!(img.transitions[3].update, vec![0, -1, 0]);
    }

    #[test]
    fn non_integer_image_is_rejected() {
        let m = fixtures::flip();
        let half = RatMatrix::from_columns(1, &[vec![Rat::new(BigInt::from(1), BigInt::from(2))]]);
        assert!(matches!(apply_linear_image(&m, &half).unwrap_err(), Error::NonIntegerImage { .. }));
    }

    #[test]
    fn gene_reduction() {
        let red = stoich_reduce(&fixtures::gene()).unwrap();
        assert_eq!(red.invariant_values, vec![rat(100)]);
        let m = &red.model;
        assert_eq!(m.vars, ["X2", "X3"]);
        let updates: Vec<_> = m.transitions.iter().map(|t| t.update.clone()).collect();
        assert_eq!(updates, vec![vec![0, 1], vec![0, -1], vec![1, 0], vec![-1, 0]]);
        assert_eq!(m.transitions[2].rate.to_string(), "k_u * (inv1 * N - X2)");
        assert_eq!(m.params["inv1"], 1.0);
        assert_eq!(m.init, vec![0, 0]);
        let c = m.compile().unwrap();
        // k_u (N - Z1) with N = 100
        assert_eq!(c.rate(2, &[37, 5]).unwrap(), 63.0);
    }

    #[test]
    fn full_rank_model_is_not_reducible() {
        assert_eq!(stoich_reduce(&fixtures::birth()).unwrap_err(), Error::NotReducible);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::{Rng, SeedableRng};

        fn arb_int_matrix() -> impl Strategy<Value = IntMatrix> {
            (1usize..5, 1usize..6).prop_flat_map(|(r, c)| {
                prop::collection::vec(-3i64..=3, r * c).prop_map(move |d| IntMatrix { rows: r, cols: c, data: d })
            })
        }

        fn arb_unimodular() -> impl Strategy<Value = RatMatrix> {
            // products of elementary integer row operations on the identity
            prop::collection::vec((0usize..3, 0usize..3, -2i64..=2), 0..6).prop_map(|ops| {
                let mut m = RatMatrix::identity(3);
                for (i, j, f) in ops {
                    if i == j {
                        continue;
                    }
                    for c in 0..3 {
                        let v = m.get(i, c) + rat(f) * m.get(j, c);
                        m.set(i, c, v);
                    }
                }
                m
            })
        }

        proptest! {
            #[test]
            fn invariants_annihilate_every_update(s in arb_int_matrix()) {
                let (rank, codim) = rank_codim(&s);
                prop_assert_eq!(rank + codim, s.rows());
                let inv = p_invariants(&s);
                prop_assert_eq!(inv.len(), codim);
                for c in &inv {
                    for j in 0..s.cols() {
                        let dot: i64 = (0..s.rows()).map(|i| c[i] * s.get(i, j)).sum();
                        prop_assert_eq!(dot, 0);
                    }
                    let g = c.iter().fold(0i64, |acc, &x| acc.gcd(&x));
                    prop_assert_eq!(g, 1);
                    prop_assert!(*c.iter().find(|&&x| x != 0).unwrap() > 0);
                }
            }

            #[test]
            fn completed_basis_is_invertible(s in arb_int_matrix()) {
                let inv = p_invariants(&s);
                let c = RatMatrix::from_int_columns(s.rows(), &inv);
                let b = complete_basis(&c, s.rows()).unwrap();
                prop_assert!(b.matrix().inverse().is_ok());
            }

            #[test]
            fn image_then_inverse_image_restores_the_model(a in arb_unimodular(), seed in any::<u64>()) {
                let m = fixtures::gene();
                let Ok(img) = apply_linear_image(&m, &a) else { return Ok(()) };
                let Ok(back) = apply_linear_image(&img, &a.inverse().unwrap()) else { return Ok(()) };
                for (t0, t1) in m.transitions.iter().zip(&back.transitions) {
                    prop_assert_eq!(&t0.update, &t1.update);
                }
                let c0 = m.compile().unwrap();
                let c1 = back.compile().unwrap();
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                for _ in 0..100 {
                    let x = [rng.random_range(0..=100), rng.random_range(0..=100), rng.random_range(0..500)];
                    for j in 0..4 {
                        let w0 = c0.base_rate_at(j, &x.map(|v| v as f64)).unwrap();
                        let w1 = c1.base_rate_at(j, &x.map(|v| v as f64)).unwrap();
                        prop_assert!((w0 - w1).abs() <= 1e-9 * (1.0 + w0.abs()), "{} vs {}", w0, w1);
                    }
                }
            }
        }
    }
}
