//! Dimension binding over the postcondition tree and enumeration of the
//! viable partitioning-rule combinations.
//!
//! Every operand contributes a row and a column [`DimensionVar`]. A
//! post-order walk of the postcondition merges variables that must be split
//! together (operator conformance, structured operands, `=`), leaving `g`
//! equivalence classes. Each non-empty subset of the partitionable classes
//! yields one combination, so there are `2^g - 1` of them.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Expr, Size};
use crate::opspec::{Kind, OperationSpec};
use crate::partition::{PartitionRule, Shape};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BindingError {
    #[error("non-conformant postcondition: {a} ({a_size}) is bound to {b} ({b_size})")]
    NonConformant {
        a: DimensionVar,
        a_size: Size,
        b: DimensionVar,
        b_size: Size,
    },
    #[error("solution operators cannot appear in a postcondition")]
    SolvedInPostcondition,
    #[error("operand `{0}` is not declared")]
    Undeclared(String),
    #[error("no viable partitionings: no dimension of `{0}` can be partitioned")]
    NoViablePartitionings(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DimensionVar {
    pub operand: String,
    pub axis: Axis,
}

impl DimensionVar {
    pub fn new(operand: impl Into<String>, axis: Axis) -> Self {
        DimensionVar {
            operand: operand.into(),
            axis,
        }
    }
}

impl fmt::Display for DimensionVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = match self.axis {
            Axis::Rows => 'r',
            Axis::Cols => 'c',
        };
        write!(f, "{}_{}", self.operand, a)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionGroup {
    /// Members in order of first encounter during the walk.
    pub members: Vec<DimensionVar>,
    /// The declared size shared by every member.
    pub size: Size,
    pub partitionable: bool,
}

impl DimensionGroup {
    pub fn contains(&self, v: &DimensionVar) -> bool {
        self.members.contains(v)
    }
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new() -> Self {
        UnionFind {
            parent: Vec::new(),
            rank: Vec::new(),
        }
    }

    fn push(&mut self) -> usize {
        self.parent.push(self.parent.len());
        self.rank.push(0);
        self.parent.len() - 1
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Union-find over dimension variables plus per-variable partitionability.
struct BindingState<'a> {
    spec: &'a OperationSpec,
    vars: Vec<DimensionVar>,
    sizes: Vec<Size>,
    index: BTreeMap<DimensionVar, usize>,
    sets: UnionFind,
}

#[derive(Clone, Copy)]
struct SubtreeDims {
    rows: usize,
    cols: usize,
    scalar: bool,
}

impl<'a> BindingState<'a> {
    fn var(&mut self, operand: &str, axis: Axis, size: &Size) -> usize {
        let v = DimensionVar::new(operand, axis);
        if let Some(&i) = self.index.get(&v) {
            return i;
        }
        let i = self.sets.push();
        self.index.insert(v.clone(), i);
        self.vars.push(v);
        self.sizes.push(size.clone());
        i
    }

    fn visit(&mut self, e: &Expr) -> Result<Option<SubtreeDims>, BindingError> {
        match e {
            Expr::Zero => Ok(None),
            Expr::Operand(name) => {
                let decl = self
                    .spec
                    .operand(name)
                    .ok_or_else(|| BindingError::Undeclared(name.clone()))?;
                let rows = self.var(name, Axis::Rows, &decl.dims.rows);
                let cols = self.var(name, Axis::Cols, &decl.dims.cols);
                if decl.is_structured() {
                    self.sets.union(rows, cols);
                }
                Ok(Some(SubtreeDims {
                    rows,
                    cols,
                    scalar: decl.kind == Kind::Scalar,
                }))
            }
            Expr::Times(fs) => {
                let mut acc: Option<SubtreeDims> = None;
                for f in fs {
                    let Some(next) = self.visit(f)? else { continue };
                    acc = Some(match acc {
                        None => next,
                        // Scalar multiplication does not bind anything.
                        Some(a) if a.scalar => next,
                        Some(a) if next.scalar => a,
                        Some(a) => {
                            self.sets.union(a.cols, next.rows);
                            SubtreeDims {
                                rows: a.rows,
                                cols: next.cols,
                                scalar: false,
                            }
                        }
                    });
                }
                Ok(acc)
            }
            Expr::Plus(ts) => {
                let mut acc: Option<SubtreeDims> = None;
                for t in ts {
                    let Some(next) = self.visit(t)? else { continue };
                    acc = Some(match acc {
                        None => next,
                        Some(a) => {
                            self.sets.union(a.rows, next.rows);
                            self.sets.union(a.cols, next.cols);
                            SubtreeDims {
                                scalar: a.scalar && next.scalar,
                                ..a
                            }
                        }
                    });
                }
                Ok(acc)
            }
            Expr::Minus(x) => self.visit(x),
            Expr::Transpose(x) => Ok(self.visit(x)?.map(|d| SubtreeDims {
                rows: d.cols,
                cols: d.rows,
                scalar: d.scalar,
            })),
            Expr::Inverse(x) => {
                let d = self.visit(x)?;
                if let Some(d) = d {
                    self.sets.union(d.rows, d.cols);
                }
                Ok(d)
            }
            Expr::Solved(..) => Err(BindingError::SolvedInPostcondition),
        }
    }
}

/// Walks the postcondition in post-order and returns the classes of bound
/// dimensions, ordered by their first-encountered member.
pub fn bind_dimensions(spec: &OperationSpec) -> Result<Vec<DimensionGroup>, BindingError> {
    let mut state = BindingState {
        spec,
        vars: Vec::new(),
        sizes: Vec::new(),
        index: BTreeMap::new(),
        sets: UnionFind::new(),
    };
    let lhs = state.visit(&spec.postcondition.lhs)?;
    let rhs = state.visit(&spec.postcondition.rhs)?;
    if let (Some(l), Some(r)) = (lhs, rhs) {
        state.sets.union(l.rows, r.rows);
        state.sets.union(l.cols, r.cols);
    }

    let mut order: Vec<usize> = Vec::new();
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..state.vars.len() {
        let root = state.sets.find(i);
        if !members.contains_key(&root) {
            order.push(root);
        }
        members.entry(root).or_default().push(i);
    }

    let mut groups = Vec::with_capacity(order.len());
    for root in order {
        let idx = &members[&root];
        let first = idx[0];
        for &i in &idx[1..] {
            if state.sizes[i] != state.sizes[first] {
                return Err(BindingError::NonConformant {
                    a: state.vars[first].clone(),
                    a_size: state.sizes[first].clone(),
                    b: state.vars[i].clone(),
                    b_size: state.sizes[i].clone(),
                });
            }
        }
        groups.push(DimensionGroup {
            members: idx.iter().map(|&i| state.vars[i].clone()).collect(),
            size: state.sizes[first].clone(),
            partitionable: !state.sizes[first].is_one(),
        });
    }
    Ok(groups)
}

/// One choice of partitioning rule per operand.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleCombination {
    /// Rules in operand declaration order.
    pub rules: Vec<PartitionRule>,
    /// Split (`true`) or keep, per dimension group.
    pub group_choices: Vec<bool>,
}

impl RuleCombination {
    pub fn rule(&self, operand: &str) -> Option<&PartitionRule> {
        self.rules.iter().find(|r| r.operand == operand)
    }

    pub fn is_identity(&self) -> bool {
        self.rules.iter().all(|r| r.shape == Shape::R1x1)
    }

    /// Each split symbol together with the size it splits.
    pub fn split_parents(&self, spec: &OperationSpec) -> BTreeMap<Size, Size> {
        let mut out = BTreeMap::new();
        for r in &self.rules {
            let Some(decl) = spec.operand(&r.operand) else { continue };
            if let Some(k) = &r.split_rows {
                out.insert(k.clone(), decl.dims.rows.clone());
            }
            if let Some(k) = &r.split_cols {
                out.insert(k.clone(), decl.dims.cols.clone());
            }
        }
        out
    }

    /// Compact description such as `L: 2x2, U: 1x1, C: 2x1, X: 2x1`.
    pub fn summary(&self) -> String {
        self.rules
            .iter()
            .map(|r| format!("{}: {}", r.operand, r.shape))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Enumerates the `2^g - 1` combinations for the partitionable groups.
///
/// Choices are produced by binary counting with the first group as the most
/// significant bit. Split symbols `k1, k2, ...` are assigned per group, in
/// operand declaration order.
pub fn enumerate_combinations(
    spec: &OperationSpec,
    groups: &[DimensionGroup],
) -> Result<Vec<RuleCombination>, BindingError> {
    let live: Vec<usize> = (0..groups.len())
        .filter(|&i| groups[i].partitionable)
        .collect();
    let g = live.len();
    if g == 0 {
        return Err(BindingError::NoViablePartitionings(spec.name.clone()));
    }

    let group_of = |v: &DimensionVar| groups.iter().position(|grp| grp.contains(v));
    let mut out = Vec::with_capacity((1usize << g) - 1);
    for mask in 1usize..(1 << g) {
        let mut choices = vec![false; groups.len()];
        for (bit, &gi) in live.iter().enumerate() {
            choices[gi] = (mask >> (g - 1 - bit)) & 1 == 1;
        }
        let mut symbols: BTreeMap<usize, Size> = BTreeMap::new();
        let mut rules = Vec::with_capacity(spec.operands.len());
        for decl in &spec.operands {
            let mut split_for = |axis: Axis| -> Option<Size> {
                let gi = group_of(&DimensionVar::new(&decl.name, axis))?;
                if !choices[gi] {
                    return None;
                }
                let next = symbols.len() + 1;
                Some(
                    symbols
                        .entry(gi)
                        .or_insert_with(|| Size::new(format!("k{next}")))
                        .clone(),
                )
            };
            let rows = split_for(Axis::Rows);
            let cols = split_for(Axis::Cols);
            rules.push(PartitionRule::new(&decl.name, rows, cols));
        }
        out.push(RuleCombination {
            rules,
            group_choices: choices,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opspec::parse_operation;

    fn names(group: &DimensionGroup) -> Vec<String> {
        let mut v: Vec<String> = group.members.iter().map(|m| m.to_string()).collect();
        v.sort();
        v
    }

    fn set(items: &[&str]) -> Vec<String> {
        let mut v: Vec<String> = items.iter().map(|s| s.to_string()).collect();
        v.sort();
        v
    }

    const SYLVESTER: &str = "operation sylvester
  operand L : matrix(m,m), known, lower_triangular
  operand U : matrix(n,n), known, upper_triangular
  operand C : matrix(m,n), known
  operand X : matrix(m,n), unknown
  postcondition: L * X + X * U = C
  solve: Omega
";

    #[test]
    fn sylvester_binds_into_two_groups() {
        let spec = parse_operation(SYLVESTER).unwrap();
        let groups = bind_dimensions(&spec).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(names(&groups[0]), set(&["L_r", "L_c", "X_r", "C_r"]));
        assert_eq!(names(&groups[1]), set(&["U_r", "U_c", "X_c", "C_c"]));
    }

    #[test]
    fn sylvester_combinations_follow_binary_counting() {
        let spec = parse_operation(SYLVESTER).unwrap();
        let groups = bind_dimensions(&spec).unwrap();
        let combos = enumerate_combinations(&spec, &groups).unwrap();
        let shapes: Vec<String> = combos.iter().map(RuleCombination::summary).collect();
        assert_eq!(
            shapes,
            vec![
                "L: 1x1, U: 2x2, C: 1x2, X: 1x2",
                "L: 2x2, U: 1x1, C: 2x1, X: 2x1",
                "L: 2x2, U: 2x2, C: 2x2, X: 2x2",
            ]
        );
        let all = &combos[2];
        assert_eq!(all.rule("L").unwrap().split_rows, Some(Size::new("k1")));
        assert_eq!(all.rule("X").unwrap().split_cols, Some(Size::new("k2")));
    }

    #[test]
    fn cholesky_binds_into_one_group() {
        let spec = parse_operation(
            "operation cholesky
  operand L : matrix(m,m), unknown, lower_triangular
  operand A : matrix(m,m), known, spd
  postcondition: L * trans(L) = A
  solve: Gamma
",
        )
        .unwrap();
        let groups = bind_dimensions(&spec).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(names(&groups[0]), set(&["L_r", "L_c", "A_r", "A_c"]));
        let combos = enumerate_combinations(&spec, &groups).unwrap();
        assert_eq!(combos.len(), 1);
        assert_eq!(combos[0].summary(), "L: 2x2, A: 2x2");
    }

    #[test]
    fn plain_assignment_binds_axes_pairwise() {
        let spec = parse_operation(
            "operation copy
  operand X : matrix(m,n), unknown
  operand B : matrix(m,n), known
  postcondition: X = B
  solve: Copy
",
        )
        .unwrap();
        let groups = bind_dimensions(&spec).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(names(&groups[0]), set(&["X_r", "B_r"]));
        assert_eq!(names(&groups[1]), set(&["X_c", "B_c"]));
    }

    #[test]
    fn scalar_equation_has_no_viable_partitioning() {
        let spec = parse_operation(
            "operation sdiv
  operand x : scalar, unknown
  operand y : scalar, known
  operand z : scalar, known
  postcondition: x * y = z
  solve: Div
",
        )
        .unwrap();
        let groups = bind_dimensions(&spec).unwrap();
        assert!(matches!(
            enumerate_combinations(&spec, &groups),
            Err(BindingError::NoViablePartitionings(_))
        ));
    }

    #[test]
    fn scalar_multiplication_binds_nothing() {
        let spec = parse_operation(
            "operation scale
  operand X : matrix(m,n), unknown
  operand a : scalar, known
  operand B : matrix(m,n), known
  postcondition: a * X = B
  solve: Scale
",
        )
        .unwrap();
        let groups = bind_dimensions(&spec).unwrap();
        let live = groups.iter().filter(|g| g.partitionable).count();
        assert_eq!(live, 2);
    }

    #[test]
    fn mismatched_sizes_are_non_conformant() {
        let spec = parse_operation(
            "operation bad
  operand X : matrix(m,n), unknown
  operand B : matrix(n,m), known
  postcondition: X = B
  solve: Bad
",
        )
        .unwrap();
        assert!(matches!(
            bind_dimensions(&spec),
            Err(BindingError::NonConformant { .. })
        ));
    }

    #[test]
    fn inverse_binds_rows_to_columns() {
        let spec = parse_operation(
            "operation solve
  operand X : matrix(n,n), unknown
  operand A : matrix(n,n), known
  postcondition: inv(A) = X
  solve: Inv
",
        )
        .unwrap();
        let groups = bind_dimensions(&spec).unwrap();
        assert_eq!(groups.len(), 1);
    }
}
