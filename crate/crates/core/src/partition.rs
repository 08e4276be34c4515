//! Partitioning rules for single operands and the properties their blocks
//! inherit from the parent's structure.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Dimension, Expr, Size};
use crate::opspec::{Kind, OperandDecl, Property};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PartitionError {
    #[error("rule {shape} is not admissible for operand `{operand}`")]
    Inadmissible { operand: String, shape: Shape },
    #[error("rule for `{operand}` has split sizes inconsistent with shape {shape}")]
    BadSplit { operand: String, shape: Shape },
    #[error("`{0}` is not a 2x2-partitioned SPD operand")]
    NotSpd(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Shape {
    R1x1,
    R1x2,
    R2x1,
    R2x2,
}

impl Shape {
    pub fn from_splits(rows: bool, cols: bool) -> Shape {
        match (rows, cols) {
            (false, false) => Shape::R1x1,
            (false, true) => Shape::R1x2,
            (true, false) => Shape::R2x1,
            (true, true) => Shape::R2x2,
        }
    }

    pub fn grid(self) -> (usize, usize) {
        match self {
            Shape::R1x1 => (1, 1),
            Shape::R1x2 => (1, 2),
            Shape::R2x1 => (2, 1),
            Shape::R2x2 => (2, 2),
        }
    }

    pub fn splits_rows(self) -> bool {
        self.grid().0 == 2
    }

    pub fn splits_cols(self) -> bool {
        self.grid().1 == 2
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (r, c) = self.grid();
        write!(f, "{r}x{c}")
    }
}

/// Position label of cell `(i, j)` in a grid with the given shape.
pub fn position_name(grid: (usize, usize), i: usize, j: usize) -> &'static str {
    match grid {
        (1, 1) => "whole",
        (2, 1) => ["T", "B"][i],
        (1, 2) => ["L", "R"][j],
        _ => [["TL", "TR"], ["BL", "BR"]][i][j],
    }
}

/// Cells of a grid in derivation scan order: TL, BL, TR, BR for 2x2.
pub fn scan_order(grid: (usize, usize)) -> Vec<(usize, usize)> {
    let mut cells = Vec::new();
    for j in 0..grid.1 {
        for i in 0..grid.0 {
            cells.push((i, j));
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionRule {
    pub shape: Shape,
    pub operand: String,
    pub split_rows: Option<Size>,
    pub split_cols: Option<Size>,
}

impl PartitionRule {
    pub fn identity(operand: impl Into<String>) -> Self {
        PartitionRule {
            shape: Shape::R1x1,
            operand: operand.into(),
            split_rows: None,
            split_cols: None,
        }
    }

    pub fn new(operand: impl Into<String>, split_rows: Option<Size>, split_cols: Option<Size>) -> Self {
        PartitionRule {
            shape: Shape::from_splits(split_rows.is_some(), split_cols.is_some()),
            operand: operand.into(),
            split_rows,
            split_cols,
        }
    }

    fn is_consistent(&self) -> bool {
        self.shape.splits_rows() == self.split_rows.is_some()
            && self.shape.splits_cols() == self.split_cols.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    /// A block reference, `Zero`, or the transpose of a sibling block.
    pub expr: Expr,
    pub dims: Dimension,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockedOperand {
    pub operand: String,
    pub shape: Shape,
    pub row_sizes: Vec<Size>,
    pub col_sizes: Vec<Size>,
    pub blocks: Vec<Vec<Block>>,
    /// Properties of every named block (the operand itself for 1x1).
    pub block_properties: BTreeMap<String, BTreeSet<Property>>,
}

impl BlockedOperand {
    /// Names of the fresh block operands, in row-major order.
    pub fn block_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for row in &self.blocks {
            for b in row {
                if let Expr::Operand(n) = &b.expr {
                    names.push(n.clone());
                }
            }
        }
        names
    }

    pub fn block_dims(&self) -> BTreeMap<String, Dimension> {
        let mut out = BTreeMap::new();
        for row in &self.blocks {
            for b in row {
                if let Expr::Operand(n) = &b.expr {
                    out.insert(n.clone(), b.dims.clone());
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PropertyFact {
    pub expression: Expr,
    pub property: Property,
}

impl PropertyFact {
    pub fn new(expression: Expr, property: Property) -> Self {
        PropertyFact {
            expression,
            property,
        }
    }
}

pub fn admissible_rules(decl: &OperandDecl) -> Vec<Shape> {
    match decl.kind {
        Kind::Scalar => vec![Shape::R1x1],
        Kind::Vector => vec![Shape::R1x1, Shape::R2x1],
        Kind::Matrix if decl.is_structured() => vec![Shape::R1x1, Shape::R2x2],
        Kind::Matrix => vec![Shape::R1x1, Shape::R1x2, Shape::R2x1, Shape::R2x2],
    }
}

pub fn block_name(operand: &str, position: &str) -> String {
    format!("{operand}_{position}")
}

/// Applies `rule` to `decl`, producing the block grid and inherited properties.
pub fn apply_rule(decl: &OperandDecl, rule: &PartitionRule) -> Result<BlockedOperand, PartitionError> {
    if !admissible_rules(decl).contains(&rule.shape) {
        return Err(PartitionError::Inadmissible {
            operand: decl.name.clone(),
            shape: rule.shape,
        });
    }
    let bad_split = || PartitionError::BadSplit {
        operand: decl.name.clone(),
        shape: rule.shape,
    };
    if !rule.is_consistent() {
        return Err(bad_split());
    }
    if decl.is_structured() && rule.shape == Shape::R2x2 && rule.split_rows != rule.split_cols {
        return Err(bad_split());
    }

    let sizes = |whole: &Size, split: &Option<Size>| match split {
        Some(k) => vec![k.clone(), whole.remainder(k)],
        None => vec![whole.clone()],
    };
    let row_sizes = sizes(&decl.dims.rows, &rule.split_rows);
    let col_sizes = sizes(&decl.dims.cols, &rule.split_cols);
    let grid = rule.shape.grid();

    let mut block_properties = BTreeMap::new();
    if grid == (1, 1) {
        block_properties.insert(decl.name.clone(), decl.properties.clone());
        return Ok(BlockedOperand {
            operand: decl.name.clone(),
            shape: rule.shape,
            blocks: vec![vec![Block {
                expr: Expr::operand(&decl.name),
                dims: decl.dims.clone(),
            }]],
            row_sizes,
            col_sizes,
            block_properties,
        });
    }

    let lower = decl.has(Property::LowerTriangular);
    let upper = decl.has(Property::UpperTriangular);
    let diagonal = decl.has(Property::Diagonal);
    let symmetric = decl.has(Property::Symmetric);

    let mut blocks = Vec::new();
    for (i, rs) in row_sizes.iter().enumerate() {
        let mut row = Vec::new();
        for (j, cs) in col_sizes.iter().enumerate() {
            let pos = position_name(grid, i, j);
            let name = block_name(&decl.name, pos);
            let dims = Dimension::new(rs.clone(), cs.clone());
            let expr = if grid == (2, 2) && i != j {
                let upper_right = i == 0;
                if diagonal || (lower && upper_right) || (upper && !upper_right) {
                    Expr::Zero
                } else if symmetric && upper_right {
                    Expr::trans(Expr::operand(block_name(&decl.name, "BL")))
                } else {
                    Expr::operand(&name)
                }
            } else {
                Expr::operand(&name)
            };
            if let Expr::Operand(_) = expr {
                block_properties.insert(name, inherited(decl, grid, i, j));
            }
            row.push(Block { expr, dims });
        }
        blocks.push(row);
    }
    Ok(BlockedOperand {
        operand: decl.name.clone(),
        shape: rule.shape,
        row_sizes,
        col_sizes,
        blocks,
        block_properties,
    })
}

/// Properties block `(i, j)` inherits directly from its parent.
fn inherited(decl: &OperandDecl, grid: (usize, usize), i: usize, j: usize) -> BTreeSet<Property> {
    let mut props = BTreeSet::new();
    if decl.has(Property::General) {
        props.insert(Property::General);
    }
    if grid == (2, 2) && i == j {
        for p in [
            Property::LowerTriangular,
            Property::UpperTriangular,
            Property::Diagonal,
            Property::Symmetric,
            Property::Spd,
        ] {
            if decl.has(p) {
                props.insert(p);
            }
        }
    }
    props
}

/// Facts that hold for a 2x2-partitioned SPD operand: both diagonal blocks
/// and both Schur complements are SPD. A 1x1 SPD operand yields itself only.
pub fn spd_facts(decl: &OperandDecl, blocked: &BlockedOperand) -> Result<Vec<PropertyFact>, PartitionError> {
    if !decl.has(Property::Spd) || decl.name != blocked.operand {
        return Err(PartitionError::NotSpd(blocked.operand.clone()));
    }
    let spd = |e: Expr| PropertyFact::new(e, Property::Spd);
    match blocked.shape {
        Shape::R1x1 => Ok(vec![spd(Expr::operand(&decl.name))]),
        Shape::R2x2 => {
            let tl = Expr::operand(block_name(&decl.name, "TL"));
            let bl = Expr::operand(block_name(&decl.name, "BL"));
            let br = Expr::operand(block_name(&decl.name, "BR"));
            let top_schur = Expr::minus(
                tl.clone(),
                Expr::times(vec![
                    Expr::trans(bl.clone()),
                    Expr::inv(br.clone()),
                    bl.clone(),
                ]),
            );
            let bottom_schur = Expr::minus(
                br.clone(),
                Expr::times(vec![bl.clone(), Expr::inv(tl.clone()), Expr::trans(bl)]),
            );
            Ok(vec![spd(tl), spd(br), spd(top_schur), spd(bottom_schur)])
        }
        _ => Err(PartitionError::NotSpd(blocked.operand.clone())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opspec::IoRole;

    fn decl(name: &str, kind: Kind, rows: &str, cols: &str, props: &[Property]) -> OperandDecl {
        let mut d = OperandDecl::new(
            name,
            kind,
            Dimension::new(Size::new(rows), Size::new(cols)),
            IoRole::Input,
            props.iter().copied(),
        );
        d.validate().unwrap();
        d
    }

    fn split(operand: &str, shape: Shape, k: &str) -> PartitionRule {
        PartitionRule::new(
            operand,
            shape.splits_rows().then(|| Size::new(k)),
            shape.splits_cols().then(|| Size::new(k)),
        )
    }

    fn cells(b: &BlockedOperand) -> Vec<Vec<String>> {
        b.blocks
            .iter()
            .map(|r| r.iter().map(|c| c.expr.to_prefix()).collect())
            .collect()
    }

    #[test]
    fn admissible_shapes_by_kind_and_structure() {
        let general = decl("A", Kind::Matrix, "m", "n", &[]);
        assert_eq!(admissible_rules(&general).len(), 4);
        let spd = decl("A", Kind::Matrix, "m", "m", &[Property::Spd]);
        assert_eq!(admissible_rules(&spd), vec![Shape::R1x1, Shape::R2x2]);
        let x = decl("x", Kind::Vector, "n", "1", &[]);
        assert_eq!(admissible_rules(&x), vec![Shape::R1x1, Shape::R2x1]);
        let s = decl("s", Kind::Scalar, "1", "1", &[]);
        assert_eq!(admissible_rules(&s), vec![Shape::R1x1]);
    }

    #[test]
    fn spd_blocking_uses_transposed_bottom_left() {
        let a = decl("A", Kind::Matrix, "m", "m", &[Property::Spd]);
        let b = apply_rule(&a, &split("A", Shape::R2x2, "k1")).unwrap();
        assert_eq!(
            cells(&b),
            vec![
                vec!["A_TL".to_string(), "(trans A_BL)".to_string()],
                vec!["A_BL".to_string(), "A_BR".to_string()]
            ]
        );
        let spd_sym: BTreeSet<_> = [Property::Spd, Property::Symmetric].into();
        assert_eq!(b.block_properties["A_TL"], spd_sym);
        assert_eq!(b.block_properties["A_BR"], spd_sym);
        assert!(b.block_properties["A_BL"].is_empty());
        assert_eq!(b.blocks[0][0].dims, Dimension::new(Size::new("k1"), Size::new("k1")));
        assert_eq!(
            b.blocks[1][0].dims,
            Dimension::new(Size::new("m-k1"), Size::new("k1"))
        );
    }

    #[test]
    fn lower_triangular_blocking_has_zero_top_right() {
        let l = decl("L", Kind::Matrix, "m", "m", &[Property::LowerTriangular]);
        let b = apply_rule(&l, &split("L", Shape::R2x2, "k1")).unwrap();
        assert_eq!(
            cells(&b),
            vec![
                vec!["L_TL".to_string(), "0".to_string()],
                vec!["L_BL".to_string(), "L_BR".to_string()]
            ]
        );
        let lower: BTreeSet<_> = [Property::LowerTriangular].into();
        assert_eq!(b.block_properties["L_TL"], lower);
        assert_eq!(b.block_properties["L_BR"], lower);
        assert_eq!(b.block_names(), vec!["L_TL", "L_BL", "L_BR"]);
    }

    #[test]
    fn upper_and_diagonal_blockings() {
        let u = decl("U", Kind::Matrix, "n", "n", &[Property::UpperTriangular]);
        let b = apply_rule(&u, &split("U", Shape::R2x2, "k2")).unwrap();
        assert_eq!(cells(&b)[1][0], "0");
        let d = decl("D", Kind::Matrix, "n", "n", &[Property::Diagonal]);
        let b = apply_rule(&d, &split("D", Shape::R2x2, "k2")).unwrap();
        assert_eq!(cells(&b)[0][1], "0");
        assert_eq!(cells(&b)[1][0], "0");
        assert_eq!(b.block_properties["D_BR"], [Property::Diagonal].into());
    }

    #[test]
    fn identity_rule_leaves_operand() {
        let c = decl("C", Kind::Matrix, "m", "n", &[]);
        let b = apply_rule(&c, &PartitionRule::identity("C")).unwrap();
        assert_eq!(cells(&b), vec![vec!["C".to_string()]]);
    }

    #[test]
    fn vector_and_general_one_sided_blockings() {
        let x = decl("x", Kind::Vector, "n", "1", &[]);
        let b = apply_rule(&x, &split("x", Shape::R2x1, "k1")).unwrap();
        assert_eq!(b.block_names(), vec!["x_T", "x_B"]);
        let c = decl("C", Kind::Matrix, "m", "n", &[]);
        let b = apply_rule(&c, &split("C", Shape::R1x2, "k2")).unwrap();
        assert_eq!(b.block_names(), vec!["C_L", "C_R"]);
        assert_eq!(b.col_sizes, vec![Size::new("k2"), Size::new("n-k2")]);
    }

    #[test]
    fn inadmissible_rules_are_rejected() {
        let l = decl("L", Kind::Matrix, "m", "m", &[Property::LowerTriangular]);
        assert!(matches!(
            apply_rule(&l, &split("L", Shape::R2x1, "k1")),
            Err(PartitionError::Inadmissible { .. })
        ));
        let skew = PartitionRule::new("L", Some(Size::new("k1")), Some(Size::new("k2")));
        assert!(matches!(
            apply_rule(&l, &skew),
            Err(PartitionError::BadSplit { .. })
        ));
    }

    #[test]
    fn spd_facts_include_schur_complements() {
        let a = decl("A", Kind::Matrix, "m", "m", &[Property::Spd]);
        let b = apply_rule(&a, &split("A", Shape::R2x2, "k1")).unwrap();
        let facts: Vec<String> = spd_facts(&a, &b)
            .unwrap()
            .iter()
            .map(|f| f.expression.to_prefix())
            .collect();
        assert_eq!(
            facts,
            vec![
                "A_TL",
                "A_BR",
                "(plus (minus (times (trans A_BL) (inv A_BR) A_BL)) A_TL)",
                "(plus (minus (times A_BL (inv A_TL) (trans A_BL))) A_BR)",
            ]
        );
    }

    #[test]
    fn spd_facts_of_unpartitioned_operand() {
        let a = decl("A", Kind::Matrix, "m", "m", &[Property::Spd]);
        let b = apply_rule(&a, &PartitionRule::identity("A")).unwrap();
        let facts = spd_facts(&a, &b).unwrap();
        assert_eq!(facts, vec![PropertyFact::new(Expr::operand("A"), Property::Spd)]);
    }

    #[test]
    fn spd_facts_require_spd_parent() {
        let a = decl("A", Kind::Matrix, "m", "m", &[Property::Symmetric]);
        let b = apply_rule(&a, &split("A", Shape::R2x2, "k1")).unwrap();
        assert!(spd_facts(&a, &b).is_err());
    }
}
