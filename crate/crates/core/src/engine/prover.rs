//! Bounded search for a proof that an expression is SPD.
//!
//! Starting from the expression, the search rewrites with the equations
//! solved so far (in both orientations), contracts adjacent inverse factors
//! and expands inverted products. It succeeds when it reaches an expression
//! recorded as SPD in the derivation's facts.

use std::collections::{BTreeSet, VecDeque};

use crate::expr::{apply_rule, rewrite_sites, Equation, Expr};
use crate::opspec::Property;

use super::DerivationState;

pub const MAX_DEPTH: usize = 8;
pub const MAX_NODES: usize = 20_000;

/// Rewrite rules available to the prover, oriented left to right.
pub fn rewrite_rules(state: &DerivationState) -> Vec<Equation> {
    let mut rules = Vec::new();
    let mut push = |r: Equation| {
        if r.lhs != r.rhs && !r.lhs.is_zero() && !rules.contains(&r) {
            rules.push(r);
        }
    };
    for t in &state.tautologies {
        let eq = &t.equation;
        push(eq.clone());
        if !eq.rhs.contains_solved() {
            push(Equation::new(eq.rhs.clone(), eq.lhs.clone()));
        }
        if !t.value.contains_solved() {
            push(Equation::new(Expr::operand(&t.output), t.value.clone()));
        }
        if let Some(iso) = isolate(eq, &t.output) {
            push(iso);
        }
    }
    for f in &state.facts {
        if matches!(f.property, Property::Symmetric | Property::Spd) {
            if let Expr::Operand(_) = &f.expression {
                push(Equation::new(Expr::trans(f.expression.clone()), f.expression.clone()));
            }
        }
    }
    rules
}

/// Solves `X * rest = R` or `rest * X = R` for `X`, if `X` occurs once.
fn isolate(eq: &Equation, output: &str) -> Option<Equation> {
    if eq.lhs.occurrences(output) + eq.rhs.occurrences(output) != 1 || eq.rhs.contains_solved() {
        return None;
    }
    let x = Expr::operand(output);
    let Expr::Times(fs) = &eq.lhs else {
        return None;
    };
    if fs.first() == Some(&x) {
        let rest = Expr::times(fs[1..].to_vec());
        Some(Equation::new(x, Expr::times(vec![eq.rhs.clone(), Expr::inv(rest)])))
    } else if fs.last() == Some(&x) {
        let rest = Expr::times(fs[..fs.len() - 1].to_vec());
        Some(Equation::new(x, Expr::times(vec![Expr::inv(rest), eq.rhs.clone()])))
    } else {
        None
    }
}

fn is_inverse_form(e: &Expr) -> bool {
    match e {
        Expr::Inverse(_) => true,
        Expr::Transpose(x) => matches!(**x, Expr::Inverse(_)),
        _ => false,
    }
}

/// `f1^-1 f2^-1`-style neighbours folded into `(f2 f1)^-1`.
fn contractions(e: &Expr) -> Vec<Expr> {
    let Expr::Times(fs) = e else {
        return vec![];
    };
    let mut out = Vec::new();
    for i in 0..fs.len().saturating_sub(1) {
        if is_inverse_form(&fs[i]) && is_inverse_form(&fs[i + 1]) {
            let merged = Expr::inv(Expr::times(vec![
                Expr::inv(fs[i + 1].clone()),
                Expr::inv(fs[i].clone()),
            ]));
            let mut v = fs[..i].to_vec();
            v.push(merged);
            v.extend_from_slice(&fs[i + 2..]);
            out.push(Expr::times(v));
        }
    }
    out
}

/// `(a b)^-1` expanded into `b^-1 a^-1`.
fn expansions(e: &Expr) -> Vec<Expr> {
    match e {
        Expr::Inverse(x) => match &**x {
            Expr::Times(fs) => vec![Expr::times(fs.iter().rev().cloned().map(Expr::inv).collect())],
            _ => vec![],
        },
        _ => vec![],
    }
}

fn successors(e: &Expr, rules: &[Equation]) -> Vec<Expr> {
    let mut out = Vec::new();
    for r in rules {
        let next = apply_rule(e, r);
        if &next != e {
            out.push(next);
        }
    }
    out.extend(rewrite_sites(e, &contractions));
    out.extend(rewrite_sites(e, &expansions));
    out
}

/// Whether `e` is SPD according to the facts and rewrites in `state`.
pub fn prove_spd(e: &Expr, state: &DerivationState) -> bool {
    let goals: BTreeSet<String> = state
        .facts
        .iter()
        .filter(|f| f.property == Property::Spd)
        .map(|f| f.expression.to_prefix())
        .collect();
    if goals.is_empty() {
        return false;
    }
    if goals.contains(&e.to_prefix()) {
        return true;
    }
    let rules = rewrite_rules(state);
    let mut seen = BTreeSet::from([e.to_prefix()]);
    let mut queue = VecDeque::from([(e.clone(), 0usize)]);
    while let Some((cur, depth)) = queue.pop_front() {
        if depth == MAX_DEPTH {
            continue;
        }
        for next in successors(&cur, &rules) {
            let key = next.to_prefix();
            if goals.contains(&key) {
                return true;
            }
            if seen.len() >= MAX_NODES {
                return false;
            }
            if seen.insert(key) {
                queue.push_back((next, depth + 1));
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Tautology;
    use crate::opspec::{parse_equation, parse_expr};
    use crate::partition::PropertyFact;

    fn e(s: &str) -> Expr {
        crate::expr::normalize(&parse_expr(s).unwrap()).unwrap()
    }

    fn cholesky_state() -> DerivationState {
        let mut s = DerivationState::default();
        s.known = ["A_TL", "A_BL", "A_BR", "L_TL", "L_BL"].iter().map(|s| s.to_string()).collect();
        for f in ["A_TL", "A_BR", "A_TL - trans(A_BL) * inv(A_BR) * A_BL", "A_BR - A_BL * inv(A_TL) * trans(A_BL)"] {
            s.facts.push(PropertyFact::new(e(f), Property::Spd));
        }
        s.facts.push(PropertyFact::new(e("A_TL"), Property::Symmetric));
        s.tautologies.push(Tautology {
            output: "L_TL".into(),
            equation: parse_equation("L_TL * trans(L_TL) = A_TL").unwrap().normalized().unwrap(),
            value: Expr::solved("Gamma", vec![e("A_TL")]),
        });
        s.tautologies.push(Tautology {
            output: "L_BL".into(),
            equation: parse_equation("L_BL * trans(L_TL) = A_BL").unwrap().normalized().unwrap(),
            value: e("A_BL * trans(inv(L_TL))"),
        });
        s
    }

    #[test]
    fn schur_update_is_spd() {
        let s = cholesky_state();
        assert!(prove_spd(&e("A_BR - L_BL * trans(L_BL)"), &s));
    }

    #[test]
    fn facts_are_spd() {
        let s = cholesky_state();
        assert!(prove_spd(&e("A_TL"), &s));
        assert!(prove_spd(&e("L_TL * trans(L_TL)"), &s));
    }

    #[test]
    fn unrelated_expressions_are_not() {
        let s = cholesky_state();
        assert!(!prove_spd(&e("A_BL"), &s));
        assert!(!prove_spd(&e("A_BR - A_BL * trans(A_BL)"), &s));
        assert!(!prove_spd(&e("A_BR - L_BL"), &s));
    }

    #[test]
    fn contraction_folds_inverse_pairs() {
        let got = contractions(&e("A * trans(inv(L)) * inv(L) * B"));
        assert_eq!(got, vec![e("A * inv(L * trans(L)) * B")]);
    }
}
