//! Symbolic blocked arithmetic: substitute partitioned operands into the
//! postcondition, multiply out, and split `=` into one equation per block.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binding::RuleCombination;
use crate::expr::{to_canonical_equation, Dimension, Equation, Expr, Size};
use crate::opspec::{Kind, OperationSpec};
use crate::partition::{apply_rule, position_name, scan_order, BlockedOperand, PartitionError, PartitionRule};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BlockError {
    #[error("blocks do not conform: {0}")]
    Conformance(String),
    #[error("cannot invert a partitioned operand in `{0}`")]
    InversePartitioned(String),
    #[error("combination partitions no operand")]
    Identity,
    #[error("operand `{0}` has no rule")]
    MissingRule(String),
    #[error("solution operators cannot appear in a postcondition")]
    Solved,
    #[error(transparent)]
    Partition(#[from] PartitionError),
}

/// All operands of a spec, partitioned by one combination.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Blocking {
    pub operands: Vec<BlockedOperand>,
}

impl Blocking {
    pub fn new(spec: &OperationSpec, combo: &RuleCombination) -> Result<Blocking, BlockError> {
        let mut operands = Vec::with_capacity(spec.operands.len());
        for decl in &spec.operands {
            let identity;
            let rule = match combo.rule(&decl.name) {
                Some(r) => r,
                None if spec.postcondition.operands().contains(&decl.name) => {
                    return Err(BlockError::MissingRule(decl.name.clone()))
                }
                None => {
                    identity = PartitionRule::identity(&decl.name);
                    &identity
                }
            };
            operands.push(apply_rule(decl, rule)?);
        }
        Ok(Blocking { operands })
    }

    pub fn operand(&self, name: &str) -> Option<&BlockedOperand> {
        self.operands.iter().find(|b| b.operand == name)
    }

    /// Every named block, with its dimensions.
    pub fn block_dims(&self) -> BTreeMap<String, Dimension> {
        self.operands.iter().flat_map(|b| b.block_dims()).collect()
    }

    /// Block names belonging to the spec's input operands.
    pub fn known_blocks(&self, spec: &OperationSpec) -> BTreeSet<String> {
        self.operands
            .iter()
            .filter(|b| spec.operand(&b.operand).is_some_and(|d| d.is_input()))
            .flat_map(|b| b.block_names())
            .collect()
    }
}

/// A matrix of symbolic blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockGrid {
    pub row_sizes: Vec<Size>,
    pub col_sizes: Vec<Size>,
    pub cells: Vec<Vec<Expr>>,
    pub scalar: bool,
}

impl BlockGrid {
    pub fn shape(&self) -> (usize, usize) {
        (self.row_sizes.len(), self.col_sizes.len())
    }

    fn map(&self, f: impl Fn(&Expr) -> Expr) -> BlockGrid {
        BlockGrid {
            cells: self
                .cells
                .iter()
                .map(|row| row.iter().map(&f).collect())
                .collect(),
            ..self.clone()
        }
    }

    fn transposed(&self) -> BlockGrid {
        let (r, c) = self.shape();
        BlockGrid {
            row_sizes: self.col_sizes.clone(),
            col_sizes: self.row_sizes.clone(),
            cells: (0..c)
                .map(|j| (0..r).map(|i| Expr::trans(self.cells[i][j].clone())).collect())
                .collect(),
            scalar: self.scalar,
        }
    }
}

/// `None` stands for a literal zero whose partitioning is taken from context.
type Blocked = Option<BlockGrid>;

fn sizes_text(sizes: &[Size]) -> String {
    let parts: Vec<&str> = sizes.iter().map(Size::as_str).collect();
    format!("[{}]", parts.join(", "))
}

/// Blocked form of an expression under `blocking`.
pub fn block_expression(spec: &OperationSpec, blocking: &Blocking, e: &Expr) -> Result<Option<BlockGrid>, BlockError> {
    let ctx = |e: &Expr| crate::opspec::expr_to_dsl(e);
    Ok(match e {
        Expr::Zero => None,
        Expr::Operand(name) => {
            let b = blocking
                .operand(name)
                .ok_or_else(|| BlockError::MissingRule(name.clone()))?;
            Some(BlockGrid {
                row_sizes: b.row_sizes.clone(),
                col_sizes: b.col_sizes.clone(),
                cells: b
                    .blocks
                    .iter()
                    .map(|row| row.iter().map(|c| c.expr.clone()).collect())
                    .collect(),
                scalar: spec.operand(name).is_some_and(|d| d.kind == Kind::Scalar),
            })
        }
        Expr::Minus(x) => block_expression(spec, blocking, x)?.map(|g| g.map(|c| Expr::neg(c.clone()))),
        Expr::Transpose(x) => block_expression(spec, blocking, x)?.map(|g| g.transposed()),
        Expr::Inverse(x) => match block_expression(spec, blocking, x)? {
            None => None,
            Some(g) if g.shape() == (1, 1) => Some(g.map(|c| Expr::inv(c.clone()))),
            Some(_) => return Err(BlockError::InversePartitioned(ctx(e))),
        },
        Expr::Plus(ts) => {
            let mut acc: Blocked = None;
            for t in ts {
                let Some(g) = block_expression(spec, blocking, t)? else { continue };
                acc = Some(match acc {
                    None => g,
                    Some(a) => {
                        if a.row_sizes != g.row_sizes || a.col_sizes != g.col_sizes {
                            return Err(BlockError::Conformance(format!(
                                "sum in `{}`: {}x{} blocks vs {}x{} blocks",
                                ctx(e),
                                sizes_text(&a.row_sizes),
                                sizes_text(&a.col_sizes),
                                sizes_text(&g.row_sizes),
                                sizes_text(&g.col_sizes)
                            )));
                        }
                        let cells = a
                            .cells
                            .iter()
                            .zip(&g.cells)
                            .map(|(ra, rg)| {
                                ra.iter()
                                    .zip(rg)
                                    .map(|(x, y)| Expr::plus(vec![x.clone(), y.clone()]))
                                    .collect()
                            })
                            .collect();
                        BlockGrid {
                            cells,
                            scalar: a.scalar && g.scalar,
                            ..a
                        }
                    }
                });
            }
            acc
        }
        Expr::Times(fs) => {
            let mut acc: Option<BlockGrid> = None;
            for f in fs {
                let Some(g) = block_expression(spec, blocking, f)? else {
                    return Ok(None);
                };
                acc = Some(match acc {
                    None => g,
                    Some(a) if a.scalar && a.shape() == (1, 1) => {
                        let s = a.cells[0][0].clone();
                        g.map(|c| Expr::times(vec![s.clone(), c.clone()]))
                    }
                    Some(a) if g.scalar && g.shape() == (1, 1) => {
                        let s = g.cells[0][0].clone();
                        a.map(|c| Expr::times(vec![c.clone(), s.clone()]))
                    }
                    Some(a) => multiply(&a, &g).ok_or_else(|| {
                        BlockError::Conformance(format!(
                            "product in `{}`: inner blocks {} vs {}",
                            ctx(e),
                            sizes_text(&a.col_sizes),
                            sizes_text(&g.row_sizes)
                        ))
                    })?,
                });
            }
            acc
        }
        Expr::Solved(..) => return Err(BlockError::Solved),
    })
}

fn multiply(a: &BlockGrid, b: &BlockGrid) -> Option<BlockGrid> {
    if a.col_sizes != b.row_sizes {
        return None;
    }
    let (r, inner) = a.shape();
    let c = b.col_sizes.len();
    let cells = (0..r)
        .map(|i| {
            (0..c)
                .map(|j| {
                    Expr::plus(
                        (0..inner)
                            .map(|k| Expr::times(vec![a.cells[i][k].clone(), b.cells[k][j].clone()]))
                            .collect(),
                    )
                })
                .collect()
        })
        .collect();
    Some(BlockGrid {
        row_sizes: a.row_sizes.clone(),
        col_sizes: b.col_sizes.clone(),
        cells,
        scalar: false,
    })
}

fn blocked_sides(spec: &OperationSpec, combo: &RuleCombination) -> Result<(Blocking, BlockGrid, BlockGrid), BlockError> {
    let blocking = Blocking::new(spec, combo)?;
    let lhs = block_expression(spec, &blocking, &spec.postcondition.lhs)?;
    let rhs = block_expression(spec, &blocking, &spec.postcondition.rhs)?;
    let (lhs, rhs) = match (lhs, rhs) {
        (Some(l), Some(r)) => (l, r),
        (Some(l), None) => {
            let r = l.map(|_| Expr::Zero);
            (l, r)
        }
        (None, Some(r)) => {
            let l = r.map(|_| Expr::Zero);
            (l, r)
        }
        (None, None) => return Err(BlockError::Conformance("both sides are zero".into())),
    };
    if lhs.row_sizes != rhs.row_sizes || lhs.col_sizes != rhs.col_sizes {
        return Err(BlockError::Conformance(format!(
            "`=`: {}x{} blocks vs {}x{} blocks",
            sizes_text(&lhs.row_sizes),
            sizes_text(&lhs.col_sizes),
            sizes_text(&rhs.row_sizes),
            sizes_text(&rhs.col_sizes)
        )));
    }
    Ok((blocking, lhs, rhs))
}

/// True iff the partitioned postcondition is algebraically well defined.
/// The all-identity combination conforms trivially; see
/// [`RuleCombination::is_identity`] for excluding it.
pub fn validate_conformance(spec: &OperationSpec, combo: &RuleCombination) -> bool {
    blocked_sides(spec, combo).is_ok()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum QuadrantStatus {
    Unsolved,
    /// `output = value` holds, found through `pattern`.
    Solved {
        output: String,
        value: Expr,
        pattern: String,
    },
    /// The transpose of the equation at `partner`.
    RedundantStar { partner: String },
    /// Reduced to `0 = 0`.
    Trivial,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadrantEquation {
    pub position: String,
    pub row: usize,
    pub col: usize,
    pub equation: Equation,
    pub status: QuadrantStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockedEquationGrid {
    pub row_sizes: Vec<Size>,
    pub col_sizes: Vec<Size>,
    /// Row-major.
    pub cells: Vec<QuadrantEquation>,
}

impl BlockedEquationGrid {
    pub fn shape(&self) -> (usize, usize) {
        (self.row_sizes.len(), self.col_sizes.len())
    }

    pub fn cell(&self, position: &str) -> Option<&QuadrantEquation> {
        self.cells.iter().find(|c| c.position == position)
    }

    /// Cell indices in derivation scan order.
    pub fn scan(&self) -> Vec<usize> {
        let (_, c) = self.shape();
        scan_order(self.shape())
            .into_iter()
            .map(|(i, j)| i * c + j)
            .collect()
    }
}

/// Blocks the postcondition, distributes `=` over the blocks, and puts each
/// block equation in canonical form with respect to the input operands.
/// Transposed duplicates are marked with [`detect_star`].
pub fn blocked_postcondition(spec: &OperationSpec, combo: &RuleCombination) -> Result<BlockedEquationGrid, BlockError> {
    if combo.is_identity() {
        return Err(BlockError::Identity);
    }
    let (blocking, lhs, rhs) = blocked_sides(spec, combo)?;
    let known = blocking.known_blocks(spec);
    let grid = lhs.shape();
    let mut cells = Vec::new();
    for i in 0..grid.0 {
        for j in 0..grid.1 {
            let eq = Equation::new(lhs.cells[i][j].clone(), rhs.cells[i][j].clone());
            let canonical = to_canonical_equation(&eq, &known).equation;
            let status = if canonical.lhs.is_zero() && canonical.rhs.is_zero() {
                QuadrantStatus::Trivial
            } else {
                QuadrantStatus::Unsolved
            };
            cells.push(QuadrantEquation {
                position: position_name(grid, i, j).to_string(),
                row: i,
                col: j,
                equation: canonical,
                status,
            });
        }
    }
    Ok(detect_star(BlockedEquationGrid {
        row_sizes: lhs.row_sizes,
        col_sizes: lhs.col_sizes,
        cells,
    }))
}

/// Marks a cell redundant when its transposed equation equals the equation
/// of a cell earlier in scan order (so TR yields to BL).
pub fn detect_star(mut grid: BlockedEquationGrid) -> BlockedEquationGrid {
    let order = grid.scan();
    for (n, &b) in order.iter().enumerate() {
        if grid.cells[b].status != QuadrantStatus::Unsolved {
            continue;
        }
        let transposed = grid.cells[b].equation.transposed();
        let partner = order[..n].iter().copied().find(|&a| {
            !matches!(grid.cells[a].status, QuadrantStatus::RedundantStar { .. } | QuadrantStatus::Trivial)
                && grid.cells[a].equation == transposed
        });
        if let Some(a) = partner {
            grid.cells[b].status = QuadrantStatus::RedundantStar {
                partner: grid.cells[a].position.clone(),
            };
        }
    }
    grid
}
