//! Numeric checking of derived PMEs with random matrices.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Index, IndexMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::blockarith::Blocking;
use crate::binding::RuleCombination;
use crate::engine::Pme;
use crate::expr::{Dimension, Expr, Size};
use crate::opspec::{Kind, OperandDecl, OperationSpec, Property};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("matrix is singular or too ill-conditioned (estimate {0:e})")]
    Singular(f64),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("no value bound for `{0}`")]
    Unbound(String),
    #[error("no numeric solver for operator `{0}`")]
    UnknownOperator(String),
    #[error("operator `{op}` expects {expected} arguments, got {found}")]
    Arity {
        op: String,
        expected: usize,
        found: usize,
    },
    #[error("size `{0}` has no value")]
    UnsizedSymbol(String),
    #[error("PME is for `{pme}`, not `{spec}`")]
    WrongOperation { pme: String, spec: String },
    #[error(transparent)]
    Block(#[from] crate::blockarith::BlockError),
}

/// Condition estimates above this make inversion an error.
pub const MAX_CONDITION: f64 = 1e12;
/// Relative residual above which a PME fails its check.
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Matrix {
        Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Builds a matrix from rows of equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Matrix {
        let cols = rows.first().map_or(0, Vec::len);
        Matrix::from_fn(rows.len(), cols, |i, j| rows[i][j])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix, OracleError> {
        if self.shape() != other.shape() {
            return Err(OracleError::Shape {
                op: "add",
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix, OracleError> {
        self.add(&other.scale(-1.0))
    }

    /// Matrix product; a 1x1 operand acts as a scalar.
    pub fn mul(&self, other: &Matrix) -> Result<Matrix, OracleError> {
        if self.shape() == (1, 1) && other.rows != 1 {
            return Ok(other.scale(self.data[0]));
        }
        if other.shape() == (1, 1) && self.cols != 1 {
            return Ok(self.scale(other.data[0]));
        }
        if self.cols != other.rows {
            return Err(OracleError::Shape {
                op: "mul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn norm1(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |i, j| self[(r0 + i, c0 + j)])
    }

    /// Stacks a grid of blocks; blocks in a row share a height and blocks
    /// in a column share a width.
    pub fn from_blocks(grid: &[Vec<Matrix>]) -> Result<Matrix, OracleError> {
        let heights: Vec<usize> = grid.iter().map(|r| r.first().map_or(0, |b| b.rows)).collect();
        let widths: Vec<usize> = grid.first().map_or(vec![], |r| r.iter().map(|b| b.cols).collect());
        let mut out = Matrix::zeros(heights.iter().sum(), widths.iter().sum());
        let mut r0 = 0;
        for (i, row) in grid.iter().enumerate() {
            let mut c0 = 0;
            for (j, b) in row.iter().enumerate() {
                if b.shape() != (heights[i], widths[j]) {
                    return Err(OracleError::Shape {
                        op: "from_blocks",
                        left: b.shape(),
                        right: (heights[i], widths[j]),
                    });
                }
                out.set_block(r0, c0, b);
                c0 += widths[j];
            }
            r0 += heights[i];
        }
        Ok(out)
    }

    fn set_block(&mut self, r0: usize, c0: usize, b: &Matrix) {
        for i in 0..b.rows {
            for j in 0..b.cols {
                self[(r0 + i, c0 + j)] = b[(i, j)];
            }
        }
    }

    /// Gauss-Jordan inverse with partial pivoting.
    pub fn inverse(&self) -> Result<Matrix, OracleError> {
        if self.rows != self.cols {
            return Err(OracleError::Shape {
                op: "inverse",
                left: self.shape(),
                right: self.shape(),
            });
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = Matrix::identity(n);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&x, &y| a[(x, col)].abs().total_cmp(&a[(y, col)].abs()))
                .expect("non-empty range");
            if a[(pivot, col)] == 0.0 {
                return Err(OracleError::Singular(f64::INFINITY));
            }
            if pivot != col {
                for j in 0..n {
                    a.data.swap(pivot * n + j, col * n + j);
                    inv.data.swap(pivot * n + j, col * n + j);
                }
            }
            let p = a[(col, col)];
            for j in 0..n {
                a[(col, j)] /= p;
                inv[(col, j)] /= p;
            }
            for i in 0..n {
                if i == col {
                    continue;
                }
                let f = a[(i, col)];
                if f == 0.0 {
                    continue;
                }
                for j in 0..n {
                    a[(i, j)] -= f * a[(col, j)];
                    inv[(i, j)] -= f * inv[(col, j)];
                }
            }
        }
        let cond = self.norm1() * inv.norm1();
        if !cond.is_finite() || cond > MAX_CONDITION {
            return Err(OracleError::Singular(cond));
        }
        Ok(inv)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }
}

/// Lower Cholesky factor `L` with `L L^T = A`.
pub fn cholesky(a: &Matrix) -> Result<Matrix, OracleError> {
    if a.rows != a.cols {
        return Err(OracleError::Shape {
            op: "cholesky",
            left: a.shape(),
            right: a.shape(),
        });
    }
    let n = a.rows;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(OracleError::NotPositiveDefinite);
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Solves `L x = b` for lower-triangular `L`, column by column of `b`.
pub fn forward_substitute(l: &Matrix, b: &Matrix) -> Result<Matrix, OracleError> {
    if l.rows != l.cols || l.rows != b.rows {
        return Err(OracleError::Shape {
            op: "forward_substitute",
            left: l.shape(),
            right: b.shape(),
        });
    }
    let n = l.rows;
    let mut x = b.clone();
    for c in 0..b.cols {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            if l[(i, i)] == 0.0 {
                return Err(OracleError::Singular(f64::INFINITY));
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    Ok(x)
}

/// Solves `X L^T = B` for lower-triangular `L`.
pub fn trsm_right_lower_trans(l: &Matrix, b: &Matrix) -> Result<Matrix, OracleError> {
    // X L^T = B  <=>  L X^T = B^T
    Ok(forward_substitute(l, &b.transpose())?.transpose())
}

/// Solves `L X + X U = C` for lower-triangular `L` and upper-triangular `U`.
pub fn triangular_sylvester(l: &Matrix, u: &Matrix, c: &Matrix) -> Result<Matrix, OracleError> {
    if l.rows != l.cols || u.rows != u.cols || c.shape() != (l.rows, u.rows) {
        return Err(OracleError::Shape {
            op: "sylvester",
            left: l.shape(),
            right: c.shape(),
        });
    }
    let (m, n) = c.shape();
    let mut x = Matrix::zeros(m, n);
    for j in 0..n {
        // (L + u_jj I) x_j = c_j - sum_{i<j} x_i u_ij
        let mut rhs = c.block(0, j, m, 1);
        for i in 0..j {
            for r in 0..m {
                rhs[(r, 0)] -= x[(r, i)] * u[(i, j)];
            }
        }
        let mut shifted = l.clone();
        for r in 0..m {
            shifted[(r, r)] += u[(j, j)];
        }
        let col = forward_substitute(&shifted, &rhs)?;
        x.set_block(0, j, &col);
    }
    Ok(x)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(a: &Matrix) -> Vec<f64> {
    let n = a.rows;
    let mut m = a.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if off < 1e-22 * (1.0 + m.frobenius().powi(2)) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * m[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

type Solver = fn(&[Matrix]) -> Result<Matrix, OracleError>;

fn arity(op: &str, args: &[Matrix], n: usize) -> Result<(), OracleError> {
    if args.len() == n {
        Ok(())
    } else {
        Err(OracleError::Arity {
            op: op.to_string(),
            expected: n,
            found: args.len(),
        })
    }
}

fn gamma(args: &[Matrix]) -> Result<Matrix, OracleError> {
    arity("Gamma", args, 1)?;
    cholesky(&args[0])
}

fn omega(args: &[Matrix]) -> Result<Matrix, OracleError> {
    arity("Omega", args, 3)?;
    triangular_sylvester(&args[0], &args[1], &args[2])
}

fn trsm(args: &[Matrix]) -> Result<Matrix, OracleError> {
    arity("Trsm", args, 2)?;
    trsm_right_lower_trans(&args[0], &args[1])
}

/// Numeric implementations of solution operators, keyed by name.
#[derive(Debug, Clone)]
pub struct BaseSolvers {
    solvers: BTreeMap<String, Solver>,
}

impl Default for BaseSolvers {
    fn default() -> Self {
        let mut solvers: BTreeMap<String, Solver> = BTreeMap::new();
        solvers.insert("Gamma".into(), gamma);
        solvers.insert("Omega".into(), omega);
        solvers.insert("Trsm".into(), trsm);
        BaseSolvers { solvers }
    }
}

impl BaseSolvers {
    pub fn register(&mut self, name: impl Into<String>, solver: Solver) {
        self.solvers.insert(name.into(), solver);
    }

    pub fn apply(&self, name: &str, args: &[Matrix]) -> Result<Matrix, OracleError> {
        let f = self
            .solvers
            .get(name)
            .ok_or_else(|| OracleError::UnknownOperator(name.to_string()))?;
        f(args)
    }

    pub fn names(&self) -> Vec<&str> {
        self.solvers.keys().map(String::as_str).collect()
    }
}

/// Values for size symbols and operand (or block) names.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NumericBinding {
    pub sizes: BTreeMap<String, usize>,
    pub values: BTreeMap<String, Matrix>,
}

impl NumericBinding {
    pub fn size(&self, s: &Size) -> Result<usize, OracleError> {
        s.eval(&self.sizes)
            .ok_or_else(|| OracleError::UnsizedSymbol(s.to_string()))
    }

    pub fn dims(&self, d: &Dimension) -> Result<(usize, usize), OracleError> {
        Ok((self.size(&d.rows)?, self.size(&d.cols)?))
    }
}

/// How split sizes are chosen for a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitChoice {
    /// Every split takes one row or column.
    Smallest,
    /// Every split leaves one row or column.
    Largest,
    Random,
}

impl SplitChoice {
    /// The first two trials exercise the extremes.
    pub fn for_trial(trial: usize) -> SplitChoice {
        match trial {
            0 => SplitChoice::Smallest,
            1 => SplitChoice::Largest,
            _ => SplitChoice::Random,
        }
    }
}

/// Draws base sizes in `2..=8` and split sizes in `1..parent`.
pub fn sample_sizes(
    spec: &OperationSpec,
    combo: &RuleCombination,
    split: SplitChoice,
    rng: &mut impl Rng,
) -> BTreeMap<String, usize> {
    let mut sizes = BTreeMap::new();
    for d in &spec.operands {
        for s in [&d.dims.rows, &d.dims.cols] {
            if !s.is_one() && !sizes.contains_key(s.as_str()) {
                sizes.insert(s.as_str().to_string(), rng.gen_range(2..=8));
            }
        }
    }
    for (k, parent) in combo.split_parents(spec) {
        let p = parent.eval(&sizes).unwrap_or(2).max(2);
        let v = match split {
            SplitChoice::Smallest => 1,
            SplitChoice::Largest => p - 1,
            SplitChoice::Random => rng.gen_range(1..p),
        };
        sizes.insert(k.as_str().to_string(), v);
    }
    sizes
}

/// A random value honouring the operand's kind and properties.
pub fn sample_operand(decl: &OperandDecl, rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let mut uniform = |r: usize, c: usize| {
        let mut m = Matrix::zeros(r, c);
        for x in m.data.iter_mut() {
            *x = rng.gen_range(-1.0..1.0);
        }
        m
    };
    let mut m = uniform(rows, cols);
    if decl.kind == Kind::Scalar {
        m[(0, 0)] = 1.0 + m[(0, 0)].abs();
        return m;
    }
    let n = rows;
    if decl.has(Property::Spd) {
        let g = uniform(n, n);
        let mut a = g.transpose().mul(&g).expect("square");
        for i in 0..n {
            a[(i, i)] += n as f64;
        }
        return Matrix::from_fn(n, n, |i, j| if i >= j { a[(i, j)] } else { a[(j, i)] });
    }
    if decl.has(Property::Symmetric) {
        return Matrix::from_fn(n, n, |i, j| {
            let v = (m[(i, j)] + m[(j, i)]) / 2.0;
            if i == j {
                v + n as f64
            } else {
                v
            }
        });
    }
    let diag = |x: f64| 1.0 + (x.abs()).min(1.0);
    if decl.has(Property::Diagonal) {
        return Matrix::from_fn(n, n, |i, j| if i == j { diag(m[(i, j)]) } else { 0.0 });
    }
    if decl.has(Property::LowerTriangular) {
        m = Matrix::from_fn(n, n, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Less => 0.0,
            std::cmp::Ordering::Equal => diag(m[(i, j)]),
            std::cmp::Ordering::Greater => m[(i, j)],
        });
    } else if decl.has(Property::UpperTriangular) {
        m = Matrix::from_fn(n, n, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => 0.0,
            std::cmp::Ordering::Equal => diag(m[(i, j)]),
            std::cmp::Ordering::Less => m[(i, j)],
        });
    } else if rows == cols {
        // Keep general square inputs comfortably invertible.
        for i in 0..n {
            m[(i, i)] += n as f64;
        }
    }
    m
}

/// Sizes plus input operands and their blocks.
pub fn sample_binding(
    spec: &OperationSpec,
    combo: &RuleCombination,
    split: SplitChoice,
    rng: &mut impl Rng,
) -> Result<NumericBinding, OracleError> {
    let sizes = sample_sizes(spec, combo, split, rng);
    sample_values(spec, combo, sizes, false, rng)
}

/// Values (and blocks) for every operand, outputs included, at the given
/// sizes.
pub fn sample_values(
    spec: &OperationSpec,
    combo: &RuleCombination,
    sizes: BTreeMap<String, usize>,
    include_outputs: bool,
    rng: &mut impl Rng,
) -> Result<NumericBinding, OracleError> {
    let mut b = NumericBinding {
        sizes,
        values: BTreeMap::new(),
    };
    for d in spec.operands.iter().filter(|d| include_outputs || d.is_input()) {
        let (r, c) = b.dims(&d.dims)?;
        let v = sample_operand(d, r, c, rng);
        b.values.insert(d.name.clone(), v);
    }
    let blocking = Blocking::new(spec, combo)?;
    for bo in &blocking.operands {
        let Some(whole) = b.values.get(&bo.operand).cloned() else {
            continue;
        };
        let row_sizes = bo.row_sizes.iter().map(|s| b.size(s)).collect::<Result<Vec<_>, _>>()?;
        let col_sizes = bo.col_sizes.iter().map(|s| b.size(s)).collect::<Result<Vec<_>, _>>()?;
        let mut r0 = 0;
        for (i, row) in bo.blocks.iter().enumerate() {
            let mut c0 = 0;
            for (j, blk) in row.iter().enumerate() {
                if let Expr::Operand(name) = &blk.expr {
                    if name != &bo.operand {
                        b.values
                            .insert(name.clone(), whole.block(r0, c0, row_sizes[i], col_sizes[j]));
                    }
                }
                c0 += col_sizes[j];
            }
            r0 += row_sizes[i];
        }
    }
    Ok(b)
}

/// Value of `e`, or `None` for an (unsized) zero.
fn eval(e: &Expr, b: &NumericBinding, solvers: &BaseSolvers) -> Result<Option<Matrix>, OracleError> {
    Ok(match e {
        Expr::Zero => None,
        Expr::Operand(n) => Some(
            b.values
                .get(n)
                .cloned()
                .ok_or_else(|| OracleError::Unbound(n.clone()))?,
        ),
        Expr::Plus(ts) => {
            let mut acc: Option<Matrix> = None;
            for t in ts {
                if let Some(v) = eval(t, b, solvers)? {
                    acc = Some(match acc {
                        None => v,
                        Some(a) => a.add(&v)?,
                    });
                }
            }
            acc
        }
        Expr::Times(fs) => {
            let mut acc: Option<Matrix> = None;
            for f in fs {
                let Some(v) = eval(f, b, solvers)? else {
                    return Ok(None);
                };
                acc = Some(match acc {
                    None => v,
                    Some(a) => a.mul(&v)?,
                });
            }
            acc
        }
        Expr::Minus(x) => eval(x, b, solvers)?.map(|v| v.scale(-1.0)),
        Expr::Transpose(x) => eval(x, b, solvers)?.map(|v| v.transpose()),
        Expr::Inverse(x) => match eval(x, b, solvers)? {
            Some(v) => Some(v.inverse()?),
            None => return Err(OracleError::Singular(f64::INFINITY)),
        },
        Expr::Solved(op, args) => {
            let vals = args
                .iter()
                .map(|a| eval(a, b, solvers)?.ok_or(OracleError::Unbound("0".into())))
                .collect::<Result<Vec<_>, _>>()?;
            Some(solvers.apply(op, &vals)?)
        }
    })
}

/// Value of `e`; a zero result takes the given shape.
pub fn evaluate(
    e: &Expr,
    b: &NumericBinding,
    solvers: &BaseSolvers,
    shape: (usize, usize),
) -> Result<Matrix, OracleError> {
    Ok(eval(e, b, solvers)?.unwrap_or_else(|| Matrix::zeros(shape.0, shape.1)))
}

/// `||l - r||_F / max(||l||_F, ||r||_F)`, or the absolute difference when
/// both sides vanish.
pub fn relative_residual(l: &Matrix, r: &Matrix) -> Result<f64, OracleError> {
    let diff = l.sub(r)?.frobenius();
    let scale = l.frobenius().max(r.frobenius());
    Ok(if scale > 0.0 { diff / scale } else { diff })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialReport {
    pub trial: usize,
    pub seed: u64,
    pub sizes: BTreeMap<String, usize>,
    pub residual: f64,
    /// Set when the trial could not be evaluated.
    pub error: Option<String>,
}

impl TrialReport {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.residual <= RESIDUAL_TOLERANCE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub operation: String,
    pub combination: String,
    pub tolerance: f64,
    pub trials: Vec<TrialReport>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.trials.iter().all(TrialReport::passed)
    }

    pub fn max_residual(&self) -> f64 {
        self.trials.iter().map(|t| t.residual).fold(0.0, f64::max)
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} [{}]", self.operation, self.combination)?;
        for t in &self.trials {
            let sizes = t
                .sizes
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(",");
            let verdict = if t.passed() { "pass" } else { "FAIL" };
            write!(f, "  trial {} seed={} {sizes} residual={:.3e} {verdict}", t.trial, t.seed, t.residual)?;
            if let Some(e) = &t.error {
                write!(f, " ({e})")?;
            }
            writeln!(f)?;
        }
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        write!(
            f,
            "{verdict}: max residual {:.3e} (tolerance {:.0e})",
            self.max_residual(),
            self.tolerance
        )
    }
}

/// Output operands assembled from the PME's block values.
fn assemble_outputs(
    spec: &OperationSpec,
    blocking: &Blocking,
    b: &mut NumericBinding,
    solvers: &BaseSolvers,
) -> Result<(), OracleError> {
    for d in spec.outputs() {
        let bo = blocking
            .operand(&d.name)
            .ok_or_else(|| OracleError::Unbound(d.name.clone()))?;
        let (rows, cols) = b.dims(&d.dims)?;
        let mut whole = Matrix::zeros(rows, cols);
        let mut r0 = 0;
        for row in &bo.blocks {
            let mut c0 = 0;
            let mut height = 0;
            for blk in row {
                let shape = b.dims(&blk.dims)?;
                let v = if blk.expr == Expr::operand(&d.name) {
                    b.values
                        .get(&d.name)
                        .cloned()
                        .ok_or_else(|| OracleError::Unbound(d.name.clone()))?
                } else {
                    evaluate(&blk.expr, b, solvers, shape)?
                };
                whole.set_block(r0, c0, &v);
                c0 += shape.1;
                height = shape.0;
            }
            r0 += height;
        }
        b.values.insert(d.name.clone(), whole);
    }
    Ok(())
}

type Sizes = BTreeMap<String, usize>;

fn run_trial(
    pme: &Pme,
    spec: &OperationSpec,
    split: SplitChoice,
    seed: u64,
    solvers: &BaseSolvers,
) -> Result<(Sizes, f64), (Sizes, OracleError)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = sample_binding(spec, &pme.combination, split, &mut rng).map_err(|e| (BTreeMap::new(), e))?;
    let sizes = b.sizes.clone();
    let fail = |e: OracleError| (sizes.clone(), e);
    let blocking = Blocking::new(spec, &pme.combination).map_err(|e| fail(e.into()))?;
    let dims = blocking.block_dims();
    for a in &pme.assignments {
        let d = dims.get(&a.output).ok_or_else(|| fail(OracleError::Unbound(a.output.clone())))?;
        let shape = b.dims(d).map_err(fail)?;
        let v = evaluate(&a.value, &b, solvers, shape).map_err(fail)?;
        if v.shape() != shape {
            return Err(fail(OracleError::Shape {
                op: "assignment",
                left: v.shape(),
                right: shape,
            }));
        }
        b.values.insert(a.output.clone(), v);
    }
    assemble_outputs(spec, &blocking, &mut b, solvers).map_err(fail)?;
    let lhs = eval(&spec.postcondition.lhs, &b, solvers).map_err(fail)?;
    let rhs = eval(&spec.postcondition.rhs, &b, solvers).map_err(fail)?;
    let residual = match (lhs, rhs) {
        (Some(l), Some(r)) => relative_residual(&l, &r).map_err(fail)?,
        (Some(x), None) | (None, Some(x)) => {
            if x.frobenius() == 0.0 {
                0.0
            } else {
                1.0
            }
        }
        (None, None) => 0.0,
    };
    Ok((sizes, residual))
}

/// Evaluates the PME on `trials` random instances and measures how well the
/// assembled outputs satisfy the unpartitioned postcondition.
pub fn check_pme(
    pme: &Pme,
    spec: &OperationSpec,
    trials: usize,
    seed: u64,
    solvers: &BaseSolvers,
) -> Result<CheckReport, OracleError> {
    if !pme.is_for(spec) {
        return Err(OracleError::WrongOperation {
            pme: pme.operation.clone(),
            spec: spec.name.clone(),
        });
    }
    let mut reports = Vec::with_capacity(trials);
    for trial in 0..trials {
        let trial_seed = seed.wrapping_add(trial as u64);
        let report = match run_trial(pme, spec, SplitChoice::for_trial(trial), trial_seed, solvers) {
            Ok((sizes, residual)) => TrialReport {
                trial,
                seed: trial_seed,
                sizes,
                residual,
                error: None,
            },
            Err((sizes, e)) => TrialReport {
                trial,
                seed: trial_seed,
                sizes,
                residual: f64::INFINITY,
                error: Some(e.to_string()),
            },
        };
        reports.push(report);
    }
    Ok(CheckReport {
        operation: pme.operation.clone(),
        combination: pme.combination.summary(),
        tolerance: RESIDUAL_TOLERANCE,
        trials: reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    fn close(a: &Matrix, b: &Matrix) -> bool {
        relative_residual(a, b).unwrap() < 1e-12
    }

    #[test]
    fn inverse_of_a_small_matrix() {
        let a = m(&[&[4.0, 7.0], &[2.0, 6.0]]);
        let inv = a.inverse().unwrap();
        assert!(close(&inv, &m(&[&[0.6, -0.7], &[-0.2, 0.4]])));
    }

    #[test]
    fn singular_inverse_is_an_error() {
        let a = m(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert!(matches!(a.inverse(), Err(OracleError::Singular(_))));
    }

    #[test]
    fn cholesky_of_known_factor() {
        let l = m(&[&[2.0, 0.0, 0.0], &[1.0, 3.0, 0.0], &[-1.0, 0.5, 1.5]]);
        let a = l.mul(&l.transpose()).unwrap();
        assert!(close(&cholesky(&a).unwrap(), &l));
        assert!(cholesky(&m(&[&[1.0, 2.0], &[2.0, 1.0]])).is_err());
    }

    #[test]
    fn trsm_solves_against_transposed_factor() {
        let l = m(&[&[2.0, 0.0], &[1.0, 3.0]]);
        let x = m(&[&[1.0, -2.0], &[0.5, 4.0], &[3.0, 1.0]]);
        let b = x.mul(&l.transpose()).unwrap();
        assert!(close(&trsm_right_lower_trans(&l, &b).unwrap(), &x));
    }

    #[test]
    fn sylvester_solution_satisfies_equation() {
        let l = m(&[&[2.0, 0.0, 0.0], &[1.0, 1.5, 0.0], &[0.3, -1.0, 1.2]]);
        let u = m(&[&[1.0, 0.4], &[0.0, 2.0]]);
        let c = m(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        let x = triangular_sylvester(&l, &u, &c).unwrap();
        let lhs = l.mul(&x).unwrap().add(&x.mul(&u).unwrap()).unwrap();
        assert!(close(&lhs, &c));
    }

    #[test]
    fn jacobi_eigenvalues() {
        let a = m(&[&[2.0, 1.0], &[1.0, 2.0]]);
        let ev = symmetric_eigenvalues(&a);
        assert!((ev[0] - 1.0).abs() < 1e-12 && (ev[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_factor_scales() {
        let s = m(&[&[2.0]]);
        let a = m(&[&[1.0, 2.0]]);
        assert_eq!(s.mul(&a).unwrap(), m(&[&[2.0, 4.0]]));
    }

    #[test]
    fn zero_terms_vanish() {
        let mut b = NumericBinding::default();
        b.values.insert("A".into(), m(&[&[1.0]]));
        let e = Expr::plus(vec![Expr::operand("A"), Expr::times(vec![Expr::Zero, Expr::operand("A")])]);
        let v = evaluate(&e, &b, &BaseSolvers::default(), (1, 1)).unwrap();
        assert_eq!(v, m(&[&[1.0]]));
        let z = evaluate(&Expr::Zero, &b, &BaseSolvers::default(), (2, 3)).unwrap();
        assert_eq!(z, Matrix::zeros(2, 3));
    }
}
