//! Text and LaTeX renderings of expressions, blockings and PMEs.
//!
//! Everything here is a pure function of its input, so a PME read back from
//! JSON renders byte-identically.

use crate::binding::RuleCombination;
use crate::blockarith::Blocking;
use crate::engine::{CellEntry, Pattern, Pme};
use crate::expr::Expr;
use crate::opspec::render_spec;
use crate::partition::BlockedOperand;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Style {
    Text,
    Latex,
}

fn name(n: &str, style: Style) -> String {
    match style {
        Style::Text => n.to_string(),
        Style::Latex => match n.split_once('_') {
            Some((base, sub)) => format!("{}_{{{}}}", base, sub),
            None => n.to_string(),
        },
    }
}

fn operator(op: &str, style: Style) -> String {
    match style {
        Style::Text => op.to_string(),
        Style::Latex => {
            const GREEK: &[&str] = &[
                "Gamma", "Delta", "Theta", "Lambda", "Xi", "Pi", "Sigma", "Upsilon", "Phi", "Psi", "Omega",
            ];
            if GREEK.contains(&op) {
                format!("\\{op}")
            } else {
                format!("\\mathrm{{{op}}}")
            }
        }
    }
}

/// Positive terms first, so `A - B` rather than `-B + A`.
fn ordered_terms(ts: &[Expr]) -> Vec<&Expr> {
    ts.iter()
        .filter(|t| !matches!(t, Expr::Minus(_)))
        .chain(ts.iter().filter(|t| matches!(t, Expr::Minus(_))))
        .collect()
}

fn paren(s: String, style: Style) -> String {
    match style {
        Style::Text => format!("({s})"),
        Style::Latex => format!("\\left({s}\\right)"),
    }
}

fn superscript(base: &Expr, sup: &str, style: Style) -> String {
    let inner = match base {
        Expr::Operand(_) | Expr::Solved(..) => render(base, style),
        _ => paren(render(base, style), style),
    };
    match style {
        Style::Text => format!("{inner}^{sup}"),
        Style::Latex if sup.len() == 1 => format!("{inner}^{sup}"),
        Style::Latex => format!("{inner}^{{{sup}}}"),
    }
}

fn factor(e: &Expr, style: Style) -> String {
    match e {
        Expr::Plus(_) | Expr::Minus(_) => paren(render(e, style), style),
        _ => render(e, style),
    }
}

fn render(e: &Expr, style: Style) -> String {
    match e {
        Expr::Operand(n) => name(n, style),
        Expr::Zero => "0".into(),
        Expr::Plus(ts) => {
            let mut s = String::new();
            for (i, t) in ordered_terms(ts).into_iter().enumerate() {
                match (i, t) {
                    (0, Expr::Minus(x)) => s.push_str(&format!("-{}", factor(x, style))),
                    (0, t) => s.push_str(&render(t, style)),
                    (_, Expr::Minus(x)) => s.push_str(&format!(" - {}", factor(x, style))),
                    (_, t) => s.push_str(&format!(" + {}", render(t, style))),
                }
            }
            s
        }
        Expr::Times(fs) => fs
            .iter()
            .map(|f| factor(f, style))
            .collect::<Vec<_>>()
            .join(" "),
        Expr::Minus(x) => format!("-{}", factor(x, style)),
        Expr::Transpose(x) => match &**x {
            Expr::Inverse(y) => superscript(y, "-T", style),
            _ => superscript(x, "T", style),
        },
        Expr::Inverse(x) => superscript(x, "-1", style),
        Expr::Solved(op, args) => {
            let args = args.iter().map(|a| render(a, style)).collect::<Vec<_>>().join(", ");
            format!("{}({})", operator(op, style), args)
        }
    }
}

pub fn expr_text(e: &Expr) -> String {
    render(e, Style::Text)
}

pub fn expr_latex(e: &Expr) -> String {
    render(e, Style::Latex)
}

fn cell(pme: &Pme, position: &str, style: Style) -> String {
    match pme.entry(position) {
        Some(CellEntry::Assigned(a)) => format!(
            "{} = {}",
            name(&a.output, style),
            render(&a.value, style)
        ),
        Some(CellEntry::Star(_)) => match style {
            Style::Text => "*".into(),
            Style::Latex => "\\star".into(),
        },
        Some(CellEntry::Trivial) => "0 = 0".into(),
        None => "?".into(),
    }
}

/// Grid cells listed row by row, one per line.
pub fn pme_text(pme: &Pme, index: usize) -> String {
    let mut out = format!("PME {index} for {} [{}]\n", pme.operation, pme.combination.summary());
    for pos in pme.positions() {
        out.push_str(&format!("  {pos:<5} {}\n", cell(pme, pos, Style::Text)));
    }
    out
}

fn array_spec(cols: usize) -> String {
    vec!["c"; cols].join("|")
}

fn latex_grid(rows: Vec<Vec<String>>) -> String {
    let cols = rows.first().map_or(1, Vec::len);
    let body = rows
        .iter()
        .map(|r| r.join(" & "))
        .collect::<Vec<_>>()
        .join(" \\\\ \\hline\n  ");
    format!("\\left(\\begin{{array}}{{{}}}\n  {}\n\\end{{array}}\\right)", array_spec(cols), body)
}

/// The PME as a parenthesised LaTeX array, one cell per block.
pub fn pme_latex(pme: &Pme, index: usize) -> String {
    let (r, c) = pme.shape();
    let positions = pme.positions();
    let rows = (0..r)
        .map(|i| (0..c).map(|j| cell(pme, positions[i * c + j], Style::Latex)).collect())
        .collect();
    format!(
        "% PME {index} for {} [{}]\n{}\n",
        pme.operation,
        pme.combination.summary(),
        latex_grid(rows)
    )
}

fn blocked_text(b: &BlockedOperand) -> String {
    let rows = b
        .blocks
        .iter()
        .map(|row| {
            row.iter()
                .map(|blk| expr_text(&blk.expr))
                .collect::<Vec<_>>()
                .join(" | ")
        })
        .collect::<Vec<_>>()
        .join(" ; ");
    format!("{} -> ( {} )", b.operand, rows)
}

fn blocked_latex(b: &BlockedOperand) -> String {
    let rows = b
        .blocks
        .iter()
        .map(|row| row.iter().map(|blk| expr_latex(&blk.expr)).collect())
        .collect();
    format!("{} \\rightarrow {}", b.operand, latex_grid(rows))
}

/// A numbered combination followed by each operand's blocking.
pub fn combination_text(combo: &RuleCombination, blocking: &Blocking, index: usize) -> String {
    let mut out = format!("combination {index}: {}\n", combo.summary());
    for b in &blocking.operands {
        out.push_str(&format!("  {}\n", blocked_text(b)));
    }
    out
}

pub fn combination_latex(combo: &RuleCombination, blocking: &Blocking, index: usize) -> String {
    let mut out = format!("% combination {index}: {}\n", combo.summary());
    for b in &blocking.operands {
        out.push_str(&format!("${}$\n", blocked_latex(b)));
    }
    out
}

/// A pattern's description followed by its solved form.
pub fn pattern_text(p: &Pattern) -> String {
    let mut out = format!("pattern {} ({})\n", p.name, p.provenance);
    let spec = render_spec(&p.spec).expect("patterns hold validated specs");
    for line in spec.lines() {
        out.push_str("  ");
        out.push_str(line);
        out.push('\n');
    }
    out.push_str(&format!(
        "  solved: {} = {}\n",
        expr_text(&p.solved.lhs),
        expr_text(&p.solved.rhs)
    ));
    out
}
