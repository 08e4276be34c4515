//! Structural matching of block equations against pattern templates.

use std::collections::{BTreeMap, BTreeSet};

use crate::expr::{Dimension, Equation, Expr};
use crate::opspec::{expr_to_dsl, Kind, Property};

use super::kb::{KnowledgeBase, Pattern};
use super::prover::prove_spd;
use super::DerivationState;

pub type Bindings = BTreeMap<String, Expr>;

/// A successful match: `output = value` follows from `equation`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Match {
    pub pattern: String,
    pub bindings: Bindings,
    pub output: String,
    pub value: Expr,
}

/// Why a structurally matching pattern was rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub pattern: String,
    pub reason: String,
}

/// All instantiations of `template` that make it equal to `target`.
pub fn match_expr(template: &Expr, target: &Expr, bindings: &Bindings) -> Vec<Bindings> {
    match template {
        Expr::Operand(slot) => match bindings.get(slot) {
            Some(bound) if bound == target => vec![bindings.clone()],
            Some(_) => vec![],
            None => {
                let mut b = bindings.clone();
                b.insert(slot.clone(), target.clone());
                vec![b]
            }
        },
        Expr::Zero => {
            if target.is_zero() {
                vec![bindings.clone()]
            } else {
                vec![]
            }
        }
        Expr::Transpose(inner) => match_expr(inner, &Expr::trans(target.clone()), bindings),
        Expr::Inverse(inner) => match target {
            Expr::Zero => vec![],
            _ => match_expr(inner, &Expr::inv(target.clone()), bindings),
        },
        Expr::Minus(inner) => match_expr(inner, &Expr::neg(target.clone()), bindings),
        Expr::Plus(ts) => match target {
            Expr::Plus(xs) if xs.len() == ts.len() => {
                let mut used = vec![false; xs.len()];
                let mut out = Vec::new();
                match_permuted(ts, xs, &mut used, bindings, &mut out);
                out
            }
            _ => vec![],
        },
        Expr::Times(ts) => match target {
            Expr::Times(xs) => {
                let mut out = Vec::new();
                match_segments(ts, xs, bindings, &mut out);
                out
            }
            _ => vec![],
        },
        Expr::Solved(op, args) => match target {
            Expr::Solved(op2, xs) if op == op2 && args.len() == xs.len() => {
                let mut frontier = vec![bindings.clone()];
                for (a, x) in args.iter().zip(xs) {
                    frontier = frontier
                        .iter()
                        .flat_map(|b| match_expr(a, x, b))
                        .collect();
                }
                frontier
            }
            _ => vec![],
        },
    }
}

fn match_permuted(ts: &[Expr], xs: &[Expr], used: &mut [bool], b: &Bindings, out: &mut Vec<Bindings>) {
    let Some((t, rest)) = ts.split_first() else {
        out.push(b.clone());
        return;
    };
    for i in 0..xs.len() {
        if used[i] {
            continue;
        }
        for b2 in match_expr(t, &xs[i], b) {
            used[i] = true;
            match_permuted(rest, xs, used, &b2, out);
            used[i] = false;
        }
    }
}

/// Each template factor takes a non-empty run of consecutive target factors.
fn match_segments(ts: &[Expr], xs: &[Expr], b: &Bindings, out: &mut Vec<Bindings>) {
    let Some((t, rest)) = ts.split_first() else {
        if xs.is_empty() {
            out.push(b.clone());
        }
        return;
    };
    if xs.len() < ts.len() {
        return;
    }
    for len in 1..=xs.len() - rest.len() {
        let seg = if len == 1 {
            xs[0].clone()
        } else {
            Expr::times(xs[..len].to_vec())
        };
        for b2 in match_expr(t, &seg, b) {
            match_segments(rest, &xs[len..], &b2, out);
        }
    }
}

/// Replaces slot operands by their bindings, renormalizing on the way up.
pub fn substitute(e: &Expr, bindings: &Bindings) -> Expr {
    match e {
        Expr::Operand(n) => bindings.get(n).cloned().unwrap_or_else(|| e.clone()),
        Expr::Zero => Expr::Zero,
        Expr::Plus(ts) => Expr::plus(ts.iter().map(|t| substitute(t, bindings)).collect()),
        Expr::Times(fs) => Expr::times(fs.iter().map(|f| substitute(f, bindings)).collect()),
        Expr::Minus(x) => Expr::neg(substitute(x, bindings)),
        Expr::Transpose(x) => Expr::trans(substitute(x, bindings)),
        Expr::Inverse(x) => Expr::inv(substitute(x, bindings)),
        Expr::Solved(op, args) => Expr::solved(op, args.iter().map(|a| substitute(a, bindings)).collect()),
    }
}

/// Symbolic dimensions of `e`, when they can be read off the block sizes.
pub fn expr_dims(e: &Expr, dims: &BTreeMap<String, Dimension>) -> Option<Dimension> {
    match e {
        Expr::Operand(n) => dims.get(n).cloned(),
        Expr::Zero | Expr::Solved(..) => None,
        Expr::Plus(ts) => ts.iter().find_map(|t| expr_dims(t, dims)),
        Expr::Minus(x) | Expr::Inverse(x) => expr_dims(x, dims),
        Expr::Transpose(x) => expr_dims(x, dims).map(|d| d.transposed()),
        Expr::Times(fs) => {
            let mut acc: Option<Dimension> = None;
            for f in fs {
                let d = expr_dims(f, dims)?;
                acc = Some(match acc {
                    None => d,
                    Some(a) if a.rows.is_one() && a.cols.is_one() => d,
                    Some(a) if d.rows.is_one() && d.cols.is_one() => a,
                    Some(a) => Dimension::new(a.rows, d.cols),
                });
            }
            acc
        }
    }
}

fn fact(state: &DerivationState, e: &Expr, p: Property) -> bool {
    state
        .facts
        .iter()
        .any(|f| f.property == p && &f.expression == e)
}

/// Triangularity from block facts, closed under sums, negation and
/// transposition (which swaps lower and upper).
pub fn is_triangular(e: &Expr, p: Property, state: &DerivationState) -> bool {
    let flipped = match p {
        Property::LowerTriangular => Property::UpperTriangular,
        Property::UpperTriangular => Property::LowerTriangular,
        Property::Diagonal => Property::Diagonal,
        _ => return false,
    };
    match e {
        Expr::Zero => true,
        Expr::Operand(_) => fact(state, e, p) || fact(state, e, Property::Diagonal),
        Expr::Transpose(x) => is_triangular(x, flipped, state),
        Expr::Minus(x) => is_triangular(x, p, state),
        Expr::Plus(ts) => ts.iter().all(|t| is_triangular(t, p, state)),
        _ => false,
    }
}

pub fn is_symmetric(e: &Expr, state: &DerivationState) -> bool {
    let structural = match e {
        Expr::Zero => true,
        Expr::Operand(_) => fact(state, e, Property::Symmetric) || fact(state, e, Property::Spd),
        Expr::Transpose(x) | Expr::Minus(x) => is_symmetric(x, state),
        Expr::Plus(ts) => ts.iter().all(|t| is_symmetric(t, state)),
        _ => false,
    };
    structural || prove_spd(e, state)
}

/// Whether property `p` can be established for `e`.
pub fn establish(e: &Expr, p: Property, state: &DerivationState) -> bool {
    match p {
        Property::LowerTriangular | Property::UpperTriangular | Property::Diagonal => {
            is_triangular(e, p, state)
        }
        Property::Symmetric => is_symmetric(e, state),
        Property::Spd => prove_spd(e, state),
        Property::General => {
            !is_triangular(e, Property::LowerTriangular, state)
                && !is_triangular(e, Property::UpperTriangular, state)
                && !symmetric_by_structure(e, state)
        }
    }
}

fn symmetric_by_structure(e: &Expr, state: &DerivationState) -> bool {
    match e {
        Expr::Zero => true,
        Expr::Operand(_) => fact(state, e, Property::Symmetric) || fact(state, e, Property::Spd),
        Expr::Transpose(x) | Expr::Minus(x) => symmetric_by_structure(x, state),
        Expr::Plus(ts) => ts.iter().all(|t| symmetric_by_structure(t, state)),
        _ => false,
    }
}

fn kind_name(k: Kind) -> &'static str {
    match k {
        Kind::Matrix => "matrix",
        Kind::Vector => "vector",
        Kind::Scalar => "scalar",
    }
}

/// Checks slot roles, kinds and property guards of one candidate binding.
fn validate(pattern: &Pattern, b: &Bindings, state: &DerivationState) -> Result<String, String> {
    let mut output = None;
    for slot in &pattern.spec.operands {
        let Some(bound) = b.get(&slot.name) else {
            continue;
        };
        if slot.is_input() {
            if !bound.is_known_only(&state.known) {
                return Err(format!("`{}` would bind `{}`, which is not known", slot.name, expr_to_dsl(bound)));
            }
        } else {
            match bound {
                Expr::Operand(n) if !state.known.contains(n) => output = Some(n.clone()),
                _ => {
                    return Err(format!(
                        "output `{}` would bind `{}`, not an unknown block",
                        slot.name,
                        expr_to_dsl(bound)
                    ))
                }
            }
        }
        let dims = expr_dims(bound, &state.dims);
        let kind_ok = match (slot.kind, &dims) {
            (Kind::Matrix, _) => true,
            (Kind::Scalar, Some(d)) => d.rows.is_one() && d.cols.is_one(),
            (Kind::Vector, Some(d)) => d.cols.is_one(),
            (_, None) => false,
        };
        if !kind_ok {
            return Err(format!("`{}` is not a {}", expr_to_dsl(bound), kind_name(slot.kind)));
        }
        if let Some(d) = dims {
            if slot.dims.is_square() && !slot.dims.rows.is_one() && !d.is_square() {
                return Err(format!("`{}` is not square", expr_to_dsl(bound)));
            }
        }
        for &p in &slot.properties {
            if p == Property::Symmetric && slot.has(Property::Spd) {
                continue;
            }
            if !establish(bound, p, state) {
                return Err(format!("could not establish {p} for `{}`", expr_to_dsl(bound)));
            }
        }
    }
    output.ok_or_else(|| "no output bound".to_string())
}

/// Tries one pattern against a canonical equation.
pub fn match_pattern(
    pattern: &Pattern,
    eq: &Equation,
    state: &DerivationState,
) -> Result<Option<Match>, Rejection> {
    let mut candidates = Vec::new();
    for b in match_expr(&pattern.template.lhs, &eq.lhs, &Bindings::new()) {
        candidates.extend(match_expr(&pattern.template.rhs, &eq.rhs, &b));
    }
    if candidates.is_empty() {
        return Ok(None);
    }
    let mut last = String::new();
    for b in candidates {
        match validate(pattern, &b, state) {
            Ok(output) => {
                let value = substitute(&pattern.solved.rhs, &b);
                return Ok(Some(Match {
                    pattern: pattern.name.clone(),
                    bindings: b,
                    output,
                    value,
                }));
            }
            Err(reason) => last = reason,
        }
    }
    Err(Rejection {
        pattern: pattern.name.clone(),
        reason: last,
    })
}

/// First pattern, in knowledge-base order, that solves `eq`, plus the
/// reasons structurally matching patterns were turned down.
pub fn match_equation(
    eq: &Equation,
    kb: &KnowledgeBase,
    state: &DerivationState,
) -> (Option<Match>, Vec<Rejection>) {
    let mut rejections = Vec::new();
    for p in kb.match_order() {
        match match_pattern(p, eq, state) {
            Ok(Some(m)) => return (Some(m), rejections),
            Ok(None) => {}
            Err(r) => rejections.push(r),
        }
    }
    (None, rejections)
}

/// Operands of `e` outside `known`.
pub fn unknowns(e: &Expr, known: &BTreeSet<String>) -> BTreeSet<String> {
    e.operands().into_iter().filter(|n| !known.contains(n)).collect()
}
