//! Symbolic matrix expressions.
//!
//! Expressions are immutable trees over named operands. [`normalize`] brings
//! any well-formed tree to a unique canonical representative, and the prefix
//! serialization of that representative is what every other module hashes,
//! orders and persists.
//!
//! The canonical form satisfies:
//! - `Plus` has at least two terms, is flat, contains no `Zero`, no term
//!   together with its negation, and its terms are sorted by their prefix text;
//! - `Times` has at least two factors, is flat, contains no `Zero` and no
//!   `Minus` factor (signs are pulled in front of the product);
//! - transposes sit only directly on operands, inverses and solved terms;
//! - inverses sit only on operands, products and solved terms.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExprError {
    #[error("malformed {node} node: expected at least {expected} children, found {found}")]
    Arity {
        node: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("prefix syntax error at token {position}: {message}")]
    Syntax { position: usize, message: String },
}

/// A symbolic matrix expression.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Operand(String),
    Zero,
    Plus(Vec<Expr>),
    Times(Vec<Expr>),
    /// Unary negation.
    Minus(Box<Expr>),
    Transpose(Box<Expr>),
    Inverse(Box<Expr>),
    /// Application of a solution operator, e.g. `Gamma(A_TL)`.
    Solved(String, Vec<Expr>),
}

impl Expr {
    pub fn operand(name: impl Into<String>) -> Expr {
        Expr::Operand(name.into())
    }

    /// Sum of normalized terms, normalized.
    pub fn plus(terms: Vec<Expr>) -> Expr {
        let mut flat = Vec::with_capacity(terms.len());
        for t in terms {
            match t {
                Expr::Zero => {}
                Expr::Plus(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }

        // Cancel x against -x. Entries keep the first-seen core and a signed count.
        let mut tally: Vec<(String, Expr, i64)> = Vec::new();
        for t in flat {
            let (core, sign) = match t {
                Expr::Minus(inner) => (*inner, -1),
                other => (other, 1),
            };
            let key = core.to_prefix();
            match tally.iter_mut().find(|(k, _, _)| *k == key) {
                Some(entry) => entry.2 += sign,
                None => tally.push((key, core, sign)),
            }
        }
        let mut out = Vec::new();
        for (_, core, count) in tally {
            for _ in 0..count.unsigned_abs() {
                if count > 0 {
                    out.push(core.clone());
                } else {
                    out.push(Expr::Minus(Box::new(core.clone())));
                }
            }
        }
        match out.len() {
            0 => Expr::Zero,
            1 => out.pop().unwrap(),
            _ => {
                out.sort_by_cached_key(Expr::to_prefix);
                Expr::Plus(out)
            }
        }
    }

    /// Product of normalized factors, normalized. Order is preserved.
    pub fn times(factors: Vec<Expr>) -> Expr {
        let mut flat = Vec::with_capacity(factors.len());
        let mut negative = false;
        for f in factors {
            let f = match f {
                Expr::Minus(inner) => {
                    negative = !negative;
                    *inner
                }
                other => other,
            };
            match f {
                Expr::Zero => return Expr::Zero,
                Expr::Times(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        let product = match flat.len() {
            0 => unreachable!("product of no factors"),
            1 => flat.pop().unwrap(),
            _ => Expr::Times(flat),
        };
        if negative {
            Expr::neg(product)
        } else {
            product
        }
    }

    // An associated constructor like `plus` and `times`, not `Neg::neg`.
    #[allow(clippy::should_implement_trait)]
    pub fn neg(e: Expr) -> Expr {
        match e {
            Expr::Zero => Expr::Zero,
            Expr::Minus(inner) => *inner,
            Expr::Plus(terms) => Expr::plus(terms.into_iter().map(Expr::neg).collect()),
            other => Expr::Minus(Box::new(other)),
        }
    }

    pub fn trans(e: Expr) -> Expr {
        match e {
            Expr::Zero => Expr::Zero,
            Expr::Transpose(inner) => *inner,
            Expr::Times(fs) => Expr::times(fs.into_iter().rev().map(Expr::trans).collect()),
            Expr::Plus(ts) => Expr::plus(ts.into_iter().map(Expr::trans).collect()),
            Expr::Minus(inner) => Expr::neg(Expr::trans(*inner)),
            other => Expr::Transpose(Box::new(other)),
        }
    }

    pub fn inv(e: Expr) -> Expr {
        match e {
            Expr::Transpose(inner) => Expr::trans(Expr::inv(*inner)),
            Expr::Inverse(inner) => *inner,
            Expr::Minus(inner) => Expr::neg(Expr::inv(*inner)),
            other => Expr::Inverse(Box::new(other)),
        }
    }

    pub fn solved(operator: impl Into<String>, args: Vec<Expr>) -> Expr {
        Expr::Solved(operator.into(), args)
    }

    /// `a - b`, normalized.
    pub fn minus(a: Expr, b: Expr) -> Expr {
        Expr::plus(vec![a, Expr::neg(b)])
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Zero)
    }

    /// Additive terms of a normalized expression.
    pub fn terms(&self) -> Vec<Expr> {
        match self {
            Expr::Zero => Vec::new(),
            Expr::Plus(ts) => ts.clone(),
            other => vec![other.clone()],
        }
    }

    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Operand(_) | Expr::Zero => Vec::new(),
            Expr::Plus(xs) | Expr::Times(xs) | Expr::Solved(_, xs) => xs.iter().collect(),
            Expr::Minus(x) | Expr::Transpose(x) | Expr::Inverse(x) => vec![x],
        }
    }

    /// Names of all operands referenced, in first-occurrence order.
    pub fn operands(&self) -> Vec<String> {
        let mut seen = Vec::new();
        self.collect_operands(&mut seen);
        seen
    }

    fn collect_operands(&self, out: &mut Vec<String>) {
        if let Expr::Operand(name) = self {
            if !out.contains(name) {
                out.push(name.clone());
            }
        }
        for c in self.children() {
            c.collect_operands(out);
        }
    }

    pub fn mentions(&self, name: &str) -> bool {
        match self {
            Expr::Operand(n) => n == name,
            _ => self.children().into_iter().any(|c| c.mentions(name)),
        }
    }

    pub fn occurrences(&self, name: &str) -> usize {
        match self {
            Expr::Operand(n) => usize::from(n == name),
            _ => self.children().into_iter().map(|c| c.occurrences(name)).sum(),
        }
    }

    /// True when every operand is in `known`.
    pub fn is_known_only(&self, known: &BTreeSet<String>) -> bool {
        self.operands().iter().all(|n| known.contains(n))
    }

    pub fn contains_solved(&self) -> bool {
        match self {
            Expr::Solved(..) => true,
            _ => self.children().into_iter().any(Expr::contains_solved),
        }
    }

    /// Parenthesized prefix serialization, e.g. `(times L (trans L))`.
    pub fn to_prefix(&self) -> String {
        let mut s = String::new();
        self.write_prefix(&mut s);
        s
    }

    fn write_prefix(&self, out: &mut String) {
        let list = |out: &mut String, head: &str, xs: &[Expr]| {
            out.push('(');
            out.push_str(head);
            for x in xs {
                out.push(' ');
                x.write_prefix(out);
            }
            out.push(')');
        };
        match self {
            Expr::Operand(n) => out.push_str(n),
            Expr::Zero => out.push('0'),
            Expr::Plus(ts) => list(out, "plus", ts),
            Expr::Times(fs) => list(out, "times", fs),
            Expr::Minus(x) => list(out, "minus", std::slice::from_ref(x)),
            Expr::Transpose(x) => list(out, "trans", std::slice::from_ref(x)),
            Expr::Inverse(x) => list(out, "inv", std::slice::from_ref(x)),
            Expr::Solved(op, args) => {
                out.push_str("(solved ");
                out.push_str(op);
                for a in args {
                    out.push(' ');
                    a.write_prefix(out);
                }
                out.push(')');
            }
        }
    }

    pub fn from_prefix(text: &str) -> Result<Expr, ExprError> {
        let tokens = tokenize_prefix(text);
        let mut pos = 0;
        let e = parse_prefix_expr(&tokens, &mut pos)?;
        if pos != tokens.len() {
            return Err(ExprError::Syntax {
                position: pos,
                message: "trailing tokens".into(),
            });
        }
        Ok(e)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_prefix())
    }
}

impl FromStr for Expr {
    type Err = ExprError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expr::from_prefix(s)
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_prefix())
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Expr::from_prefix(&text).map_err(serde::de::Error::custom)
    }
}

fn tokenize_prefix(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        match ch {
            '(' | ')' => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
                tokens.push(ch.to_string());
            }
            c if c.is_whitespace() => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

fn parse_prefix_expr(tokens: &[String], pos: &mut usize) -> Result<Expr, ExprError> {
    let err = |position: usize, message: &str| ExprError::Syntax {
        position,
        message: message.to_string(),
    };
    let tok = tokens.get(*pos).ok_or_else(|| err(*pos, "unexpected end"))?;
    *pos += 1;
    match tok.as_str() {
        ")" => Err(err(*pos - 1, "unexpected ')'")),
        "0" => Ok(Expr::Zero),
        "(" => {
            let head = tokens
                .get(*pos)
                .ok_or_else(|| err(*pos, "missing head"))?
                .clone();
            *pos += 1;
            let operator = if head == "solved" {
                let op = tokens
                    .get(*pos)
                    .filter(|t| is_identifier(t))
                    .ok_or_else(|| err(*pos, "expected operator name"))?
                    .clone();
                *pos += 1;
                Some(op)
            } else {
                None
            };
            let mut args = Vec::new();
            while tokens.get(*pos).map(String::as_str) != Some(")") {
                if *pos >= tokens.len() {
                    return Err(err(*pos, "unclosed '('"));
                }
                args.push(parse_prefix_expr(tokens, pos)?);
            }
            *pos += 1;
            let unary = |args: Vec<Expr>, wrap: fn(Box<Expr>) -> Expr| {
                if args.len() != 1 {
                    return Err(err(*pos, "unary node needs exactly one child"));
                }
                Ok(wrap(Box::new(args.into_iter().next().unwrap())))
            };
            match head.as_str() {
                "plus" => Ok(Expr::Plus(args)),
                "times" => Ok(Expr::Times(args)),
                "minus" => unary(args, Expr::Minus),
                "trans" => unary(args, Expr::Transpose),
                "inv" => unary(args, Expr::Inverse),
                "solved" => Ok(Expr::Solved(operator.unwrap(), args)),
                other => Err(err(*pos, &format!("unknown head `{other}`"))),
            }
        }
        name if is_identifier(name) => Ok(Expr::Operand(name.to_string())),
        other => Err(err(*pos - 1, &format!("bad token `{other}`"))),
    }
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Brings `e` to canonical form.
pub fn normalize(e: &Expr) -> Result<Expr, ExprError> {
    let arity = |node: &'static str, expected: usize, found: usize| {
        if found < expected {
            Err(ExprError::Arity {
                node,
                expected,
                found,
            })
        } else {
            Ok(())
        }
    };
    Ok(match e {
        Expr::Operand(_) | Expr::Zero => e.clone(),
        Expr::Plus(ts) => {
            arity("plus", 2, ts.len())?;
            Expr::plus(ts.iter().map(normalize).collect::<Result<_, _>>()?)
        }
        Expr::Times(fs) => {
            arity("times", 2, fs.len())?;
            Expr::times(fs.iter().map(normalize).collect::<Result<_, _>>()?)
        }
        Expr::Minus(x) => Expr::neg(normalize(x)?),
        Expr::Transpose(x) => Expr::trans(normalize(x)?),
        Expr::Inverse(x) => Expr::inv(normalize(x)?),
        Expr::Solved(op, args) => {
            arity("solved", 1, args.len())?;
            Expr::Solved(
                op.clone(),
                args.iter().map(normalize).collect::<Result<_, _>>()?,
            )
        }
    })
}

/// An equation `lhs = rhs`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Equation {
    pub lhs: Expr,
    pub rhs: Expr,
}

impl Equation {
    pub fn new(lhs: Expr, rhs: Expr) -> Self {
        Equation { lhs, rhs }
    }

    pub fn normalized(&self) -> Result<Equation, ExprError> {
        Ok(Equation::new(normalize(&self.lhs)?, normalize(&self.rhs)?))
    }

    /// Transpose of both sides (inputs assumed normalized).
    pub fn transposed(&self) -> Equation {
        Equation::new(Expr::trans(self.lhs.clone()), Expr::trans(self.rhs.clone()))
    }

    pub fn operands(&self) -> Vec<String> {
        let mut names = self.lhs.operands();
        for n in self.rhs.operands() {
            if !names.contains(&n) {
                names.push(n);
            }
        }
        names
    }

    pub fn to_prefix(&self) -> String {
        format!("(eq {} {})", self.lhs.to_prefix(), self.rhs.to_prefix())
    }

    pub fn from_prefix(text: &str) -> Result<Equation, ExprError> {
        let tokens = tokenize_prefix(text);
        let bad = |position: usize| ExprError::Syntax {
            position,
            message: "expected `(eq <lhs> <rhs>)`".into(),
        };
        if tokens.len() < 4 || tokens[0] != "(" || tokens[1] != "eq" {
            return Err(bad(0));
        }
        let mut pos = 2;
        let lhs = parse_prefix_expr(&tokens, &mut pos)?;
        let rhs = parse_prefix_expr(&tokens, &mut pos)?;
        if tokens.get(pos).map(String::as_str) != Some(")") || pos + 1 != tokens.len() {
            return Err(bad(pos));
        }
        Ok(Equation::new(lhs, rhs))
    }
}

impl fmt::Display for Equation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_prefix())
    }
}

impl Serialize for Equation {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_prefix())
    }
}

impl<'de> Deserialize<'de> for Equation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Equation::from_prefix(&text).map_err(serde::de::Error::custom)
    }
}

/// Result of moving terms across `=`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Canonical {
    pub equation: Equation,
    /// No unknown operand occurs anywhere in the equation.
    pub tautology_candidate: bool,
}

/// Moves unknown-containing terms to the left and known-only terms to the
/// right, flipping signs as they cross. Both sides must be normalized.
///
/// A left side made only of negated terms is negated together with the right
/// side, so `-X = E` becomes `X = -E`.
pub fn to_canonical_equation(eq: &Equation, known: &BTreeSet<String>) -> Canonical {
    let mut left = Vec::new();
    let mut right = Vec::new();
    for t in eq.lhs.terms() {
        if t.is_known_only(known) {
            right.push(Expr::neg(t));
        } else {
            left.push(t);
        }
    }
    for t in eq.rhs.terms() {
        if t.is_known_only(known) {
            right.push(t);
        } else {
            left.push(Expr::neg(t));
        }
    }
    let tautology_candidate = left.is_empty();
    let mut lhs = Expr::plus(left);
    let mut rhs = Expr::plus(right);
    if !lhs.is_zero() && lhs.terms().iter().all(|t| matches!(t, Expr::Minus(_))) {
        lhs = Expr::neg(lhs);
        rhs = Expr::neg(rhs);
    }
    Canonical {
        equation: Equation::new(lhs, rhs),
        tautology_candidate,
    }
}

/// Rebuilds `e` with child `i` replaced, renormalizing the node.
fn with_child(e: &Expr, i: usize, child: Expr) -> Expr {
    let replace = |xs: &[Expr]| {
        let mut v = xs.to_vec();
        v[i] = child.clone();
        v
    };
    match e {
        Expr::Plus(ts) => Expr::plus(replace(ts)),
        Expr::Times(fs) => Expr::times(replace(fs)),
        Expr::Solved(op, args) => Expr::Solved(op.clone(), replace(args)),
        Expr::Minus(_) => Expr::neg(child),
        Expr::Transpose(_) => Expr::trans(child),
        Expr::Inverse(_) => Expr::inv(child),
        Expr::Operand(_) | Expr::Zero => e.clone(),
    }
}

/// Applies `local` at every node of `e`, returning one rewritten (and
/// renormalized) expression per site and per variant `local` yields there.
pub fn rewrite_sites(e: &Expr, local: &dyn Fn(&Expr) -> Vec<Expr>) -> Vec<Expr> {
    let mut out = local(e);
    for (i, child) in e.children().into_iter().enumerate() {
        for variant in rewrite_sites(child, local) {
            out.push(with_child(e, i, variant));
        }
    }
    out
}

/// Replaces every occurrence of `from` in `e` by `to`, including runs of
/// consecutive factors inside longer products. Inputs must be normalized.
pub fn replace_all(e: &Expr, from: &Expr, to: &Expr) -> Expr {
    if e == from {
        return to.clone();
    }
    match e {
        Expr::Operand(_) | Expr::Zero => e.clone(),
        Expr::Times(fs) => {
            let fs: Vec<Expr> = fs.iter().map(|f| replace_all(f, from, to)).collect();
            if let Expr::Times(pattern) = from {
                if pattern.len() <= fs.len() {
                    let mut out = Vec::with_capacity(fs.len());
                    let mut i = 0;
                    while i < fs.len() {
                        if i + pattern.len() <= fs.len() && fs[i..i + pattern.len()] == pattern[..]
                        {
                            out.push(to.clone());
                            i += pattern.len();
                        } else {
                            out.push(fs[i].clone());
                            i += 1;
                        }
                    }
                    return Expr::times(out);
                }
            }
            Expr::times(fs)
        }
        Expr::Plus(ts) => Expr::plus(ts.iter().map(|t| replace_all(t, from, to)).collect()),
        Expr::Solved(op, args) => Expr::Solved(
            op.clone(),
            args.iter().map(|a| replace_all(a, from, to)).collect(),
        ),
        Expr::Minus(x) => Expr::neg(replace_all(x, from, to)),
        Expr::Transpose(x) => Expr::trans(replace_all(x, from, to)),
        Expr::Inverse(x) => Expr::inv(replace_all(x, from, to)),
    }
}

/// Applies `rule` left-to-right, along with its transposed instance.
pub fn apply_rule(e: &Expr, rule: &Equation) -> Expr {
    let once = replace_all(e, &rule.lhs, &rule.rhs);
    let t = rule.transposed();
    if t.lhs != rule.lhs {
        replace_all(&once, &t.lhs, &t.rhs)
    } else {
        once
    }
}

/// Rewrites `e` with `rules` oriented left-to-right (and their transposed
/// instances), at most `max_depth` rule applications. Each application
/// replaces every occurrence of the rule's left side.
pub fn rewrite_with(e: &Expr, rules: &[Equation], max_depth: usize) -> Expr {
    let mut cur = e.clone();
    for _ in 0..max_depth {
        let next = rules
            .iter()
            .map(|r| apply_rule(&cur, r))
            .find(|candidate| *candidate != cur);
        match next {
            Some(n) => cur = n,
            None => break,
        }
    }
    cur
}

/// A symbolic size: an identifier, the literal `1`, or `base-a-b...`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Size(String);

impl Size {
    pub fn new(s: impl Into<String>) -> Self {
        Size(s.into())
    }

    pub fn one() -> Self {
        Size("1".into())
    }

    pub fn is_one(&self) -> bool {
        self.0 == "1"
    }

    /// `self - part`.
    pub fn remainder(&self, part: &Size) -> Size {
        Size(format!("{}-{}", self.0, part.0))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Evaluates against concrete values for the identifiers involved.
    pub fn eval(&self, values: &std::collections::BTreeMap<String, usize>) -> Option<usize> {
        let mut parts = self.0.split('-');
        let lookup = |p: &str| -> Option<i64> {
            match p.parse::<i64>() {
                Ok(v) => Some(v),
                Err(_) => values.get(p).map(|&v| v as i64),
            }
        };
        let mut total = lookup(parts.next()?)?;
        for p in parts {
            total -= lookup(p)?;
        }
        usize::try_from(total).ok()
    }
}

impl fmt::Display for Size {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dimension {
    pub rows: Size,
    pub cols: Size,
}

impl Dimension {
    pub fn new(rows: Size, cols: Size) -> Self {
        Dimension { rows, cols }
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn transposed(&self) -> Dimension {
        Dimension::new(self.cols.clone(), self.rows.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(n: &str) -> Expr {
        Expr::operand(n)
    }
    fn t(e: Expr) -> Expr {
        Expr::Transpose(Box::new(e))
    }
    fn known(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }
    fn p(s: &str) -> Expr {
        Expr::from_prefix(s).unwrap()
    }

    #[test]
    fn double_transpose_is_identity() {
        assert_eq!(normalize(&t(t(op("A")))).unwrap(), op("A"));
    }

    #[test]
    fn gram_product_is_self_transpose() {
        let llt = Expr::Times(vec![op("L"), t(op("L"))]);
        assert_eq!(normalize(&t(llt.clone())).unwrap(), llt);
    }

    #[test]
    fn difference_with_itself_cancels() {
        let bc = Expr::Times(vec![op("B"), op("C")]);
        let e = Expr::Plus(vec![bc.clone(), Expr::Minus(Box::new(bc))]);
        assert_eq!(normalize(&e).unwrap(), Expr::Zero);
    }

    #[test]
    fn inverse_of_transpose_puts_transpose_outside() {
        let e = Expr::Inverse(Box::new(t(op("L"))));
        assert_eq!(normalize(&e).unwrap().to_prefix(), "(trans (inv L))");
    }

    #[test]
    fn zero_annihilates_products_and_vanishes_from_sums() {
        let e = Expr::Plus(vec![
            Expr::Times(vec![op("A"), Expr::Zero]),
            op("B"),
        ]);
        assert_eq!(normalize(&e).unwrap(), op("B"));
    }

    #[test]
    fn minus_is_pulled_out_of_products_and_distributed_over_sums() {
        let e = Expr::Times(vec![Expr::Minus(Box::new(op("A"))), op("B")]);
        assert_eq!(normalize(&e).unwrap().to_prefix(), "(minus (times A B))");
        let s = Expr::Minus(Box::new(Expr::Plus(vec![op("A"), op("B")])));
        assert_eq!(
            normalize(&s).unwrap().to_prefix(),
            "(plus (minus A) (minus B))"
        );
    }

    #[test]
    fn grouped_inverse_is_left_alone() {
        let e = p("(inv (times L (trans L)))");
        assert_eq!(normalize(&e).unwrap(), e);
    }

    #[test]
    fn malformed_arity_is_reported() {
        let e = Expr::Plus(vec![op("A")]);
        assert!(matches!(normalize(&e), Err(ExprError::Arity { .. })));
        let s = Expr::Solved("Gamma".into(), vec![]);
        assert!(normalize(&s).is_err());
    }

    #[test]
    fn prefix_round_trip() {
        for s in [
            "(eq (times L (trans L)) A)",
            "(plus A (minus (times B C)))",
            "(solved Omega L_TL U C_T)",
            "(trans (inv (times A B)))",
        ] {
            if s.starts_with("(eq") {
                assert_eq!(Equation::from_prefix(s).unwrap().to_prefix(), s);
            } else {
                assert_eq!(p(s).to_prefix(), s);
            }
        }
        assert!(Expr::from_prefix("(plus A").is_err());
        assert!(Expr::from_prefix("(frob A)").is_err());
    }

    #[test]
    fn canonical_form_moves_known_products_right() {
        let eq = Equation::new(
            p("(plus (times L_BL (trans L_BL)) (times L_BR (trans L_BR)))"),
            op("A_BR"),
        );
        let c = to_canonical_equation(&eq, &known(&["L_BL", "A_BR"]));
        assert_eq!(
            c.equation.to_prefix(),
            "(eq (times L_BR (trans L_BR)) (plus (minus (times L_BL (trans L_BL))) A_BR))"
        );
        assert!(!c.tautology_candidate);
    }

    #[test]
    fn canonical_form_leaves_canonical_equations() {
        let eq = Equation::new(p("(times L (trans L))"), op("A"));
        assert_eq!(to_canonical_equation(&eq, &known(&["A"])).equation, eq);
    }

    #[test]
    fn canonical_form_isolates_single_unknown() {
        let eq = Equation::new(op("A"), p("(plus X B)"));
        let c = to_canonical_equation(&eq, &known(&["A", "B"]));
        assert_eq!(c.equation.to_prefix(), "(eq X (plus (minus B) A))");
    }

    #[test]
    fn canonical_form_flags_tautology_candidates() {
        let eq = Equation::new(op("A"), op("B"));
        assert!(to_canonical_equation(&eq, &known(&["A", "B"])).tautology_candidate);
    }

    #[test]
    fn canonical_form_keeps_mixed_terms_left() {
        let eq = Equation::new(p("(times A X)"), op("B"));
        let c = to_canonical_equation(&eq, &known(&["A", "B"]));
        assert_eq!(c.equation, eq);
    }

    #[test]
    fn rewrite_substitutes_solved_block() {
        let e = p("(plus (minus (times L_BL (trans L_BL))) A_BR)");
        let rule = Equation::new(op("L_BL"), p("(times A_BL (trans (inv L_TL)))"));
        let out = rewrite_with(&e, &[rule], 4);
        assert_eq!(
            out.to_prefix(),
            "(plus (minus (times A_BL (trans (inv L_TL)) (inv L_TL) (trans A_BL))) A_BR)"
        );
    }

    #[test]
    fn rewrite_contracts_grouped_product() {
        let e = p("(plus (minus (times A_BL (inv (times L_TL (trans L_TL))) (trans A_BL))) A_BR)");
        let rule = Equation::new(p("(times L_TL (trans L_TL))"), op("A_TL"));
        let out = rewrite_with(&e, &[rule], 4);
        assert_eq!(
            out.to_prefix(),
            "(plus (minus (times A_BL (inv A_TL) (trans A_BL))) A_BR)"
        );
    }

    #[test]
    fn rewrite_without_rules_is_identity() {
        let e = p("(times A (trans B))");
        assert_eq!(rewrite_with(&e, &[], 3), e);
    }

    #[test]
    fn replace_all_finds_factor_runs() {
        let e = p("(times A B C D)");
        let out = replace_all(&e, &p("(times B C)"), &op("E"));
        assert_eq!(out.to_prefix(), "(times A E D)");
    }

    #[test]
    fn size_arithmetic() {
        let mut v = std::collections::BTreeMap::new();
        v.insert("m".to_string(), 7);
        v.insert("k1".to_string(), 3);
        let r = Size::new("m").remainder(&Size::new("k1"));
        assert_eq!(r.as_str(), "m-k1");
        assert_eq!(r.eval(&v), Some(4));
        assert_eq!(Size::one().eval(&v), Some(1));
        assert_eq!(Size::new("n").eval(&v), None);
    }
}
