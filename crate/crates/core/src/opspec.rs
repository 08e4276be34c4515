//! Operation descriptions: operand declarations (the precondition) plus the
//! equation to solve (the postcondition), and the small text format they are
//! written in.
//!
//! ```text
//! operation cholesky
//!   operand L : matrix(m,m), unknown, lower_triangular
//!   operand A : matrix(m,m), known, spd
//!   postcondition: L * trans(L) = A
//!   solve: Gamma
//! ```

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{is_identifier, Dimension, Equation, Expr, ExprError, Size};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SpecError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("operand `{0}` is used in the postcondition but not declared")]
    Undeclared(String),
    #[error("operand `{0}` is declared more than once")]
    Duplicate(String),
    #[error("operand `{operand}`: {message}")]
    PropertyConflict { operand: String, message: String },
    #[error("operation declares no operands")]
    NoOperands,
    #[error("operation declares no unknown operand")]
    NoOutput,
    #[error("operation `{0}` is missing `{1}`")]
    Missing(String, &'static str),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Matrix,
    Vector,
    Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IoRole {
    /// Known on entry.
    Input,
    /// Unknown, to be computed.
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    LowerTriangular,
    UpperTriangular,
    Symmetric,
    Spd,
    Diagonal,
    /// No recognized structure. Used as a pattern guard.
    General,
}

impl Property {
    pub const ALL: [Property; 6] = [
        Property::LowerTriangular,
        Property::UpperTriangular,
        Property::Symmetric,
        Property::Spd,
        Property::Diagonal,
        Property::General,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            Property::LowerTriangular => "lower_triangular",
            Property::UpperTriangular => "upper_triangular",
            Property::Symmetric => "symmetric",
            Property::Spd => "spd",
            Property::Diagonal => "diagonal",
            Property::General => "general",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Property> {
        Property::ALL.into_iter().find(|p| p.keyword() == s)
    }

    /// Properties that constrain the shape of an operand.
    pub fn is_structural(self) -> bool {
        !matches!(self, Property::General)
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperandDecl {
    pub name: String,
    pub kind: Kind,
    pub dims: Dimension,
    pub io_role: IoRole,
    pub properties: BTreeSet<Property>,
}

impl OperandDecl {
    pub fn new(
        name: impl Into<String>,
        kind: Kind,
        dims: Dimension,
        io_role: IoRole,
        properties: impl IntoIterator<Item = Property>,
    ) -> Self {
        OperandDecl {
            name: name.into(),
            kind,
            dims,
            io_role,
            properties: properties.into_iter().collect(),
        }
    }

    pub fn has(&self, p: Property) -> bool {
        self.properties.contains(&p)
    }

    pub fn is_structured(&self) -> bool {
        self.properties.iter().any(|p| p.is_structural())
    }

    pub fn is_input(&self) -> bool {
        self.io_role == IoRole::Input
    }

    /// Checks the declaration invariants, adding `symmetric` when `spd` is present.
    pub fn validate(&mut self) -> Result<(), SpecError> {
        let conflict = |message: String| SpecError::PropertyConflict {
            operand: self.name.clone(),
            message,
        };
        if self.has(Property::Spd) {
            self.properties.insert(Property::Symmetric);
        }
        let structured: Vec<Property> = self
            .properties
            .iter()
            .copied()
            .filter(|p| p.is_structural())
            .collect();
        if !structured.is_empty() {
            if self.kind != Kind::Matrix {
                return Err(conflict(format!(
                    "{} requires a matrix operand",
                    structured[0]
                )));
            }
            if !self.dims.is_square() {
                return Err(conflict(format!(
                    "{} requires square dimensions, got {}x{}",
                    structured[0], self.dims.rows, self.dims.cols
                )));
            }
            if self.has(Property::General) {
                return Err(conflict("general excludes structural properties".into()));
            }
        }
        let shape_props = [
            Property::LowerTriangular,
            Property::UpperTriangular,
            Property::Diagonal,
        ]
        .iter()
        .filter(|p| self.has(**p))
        .count();
        if shape_props > 1 {
            return Err(conflict(
                "at most one of lower_triangular, upper_triangular, diagonal".into(),
            ));
        }
        match self.kind {
            Kind::Vector if !self.dims.cols.is_one() => {
                return Err(conflict("vector operands have one column".into()))
            }
            Kind::Scalar if !(self.dims.rows.is_one() && self.dims.cols.is_one()) => {
                return Err(conflict("scalar operands are 1x1".into()))
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationSpec {
    pub name: String,
    pub operands: Vec<OperandDecl>,
    pub postcondition: Equation,
    pub solution_operator: String,
}

impl OperationSpec {
    /// Validates the declarations and normalizes the postcondition.
    pub fn new(
        name: impl Into<String>,
        operands: Vec<OperandDecl>,
        postcondition: Equation,
        solution_operator: impl Into<String>,
    ) -> Result<Self, SpecError> {
        let mut spec = OperationSpec {
            name: name.into(),
            operands,
            postcondition,
            solution_operator: solution_operator.into(),
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&mut self) -> Result<(), SpecError> {
        if self.operands.is_empty() {
            return Err(SpecError::NoOperands);
        }
        let mut seen = BTreeSet::new();
        for op in &mut self.operands {
            if !seen.insert(op.name.clone()) {
                return Err(SpecError::Duplicate(op.name.clone()));
            }
            op.validate()?;
        }
        if !self.operands.iter().any(|o| o.io_role == IoRole::Output) {
            return Err(SpecError::NoOutput);
        }
        self.postcondition = self.postcondition.normalized()?;
        for name in self.postcondition.operands() {
            if !seen.contains(&name) {
                return Err(SpecError::Undeclared(name));
            }
        }
        if self.postcondition.lhs.contains_solved() || self.postcondition.rhs.contains_solved() {
            return Err(SpecError::Syntax {
                line: 0,
                column: 0,
                message: "solution operators cannot appear in a postcondition".into(),
            });
        }
        Ok(())
    }

    pub fn operand(&self, name: &str) -> Option<&OperandDecl> {
        self.operands.iter().find(|o| o.name == name)
    }

    pub fn inputs(&self) -> impl Iterator<Item = &OperandDecl> {
        self.operands.iter().filter(|o| o.is_input())
    }

    pub fn outputs(&self) -> impl Iterator<Item = &OperandDecl> {
        self.operands.iter().filter(|o| !o.is_input())
    }

    pub fn known_names(&self) -> BTreeSet<String> {
        self.inputs().map(|o| o.name.clone()).collect()
    }
}

/// Parses an operation description.
pub fn parse_operation(text: &str) -> Result<OperationSpec, SpecError> {
    let mut name: Option<String> = None;
    let mut operands = Vec::new();
    let mut post: Option<Equation> = None;
    let mut solve: Option<String> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("");
        let indent = line.len() - line.trim_start().len();
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let syntax = |column: usize, message: String| SpecError::Syntax {
            line: line_no,
            column: column + 1,
            message,
        };
        let (keyword, rest) = match line.find(|c: char| c.is_whitespace() || c == ':') {
            Some(i) => (&line[..i], &line[i..]),
            None => (line, ""),
        };
        let rest_col = indent + keyword.len();
        match keyword {
            "operation" => {
                let n = rest.trim();
                if !is_identifier(n) {
                    return Err(syntax(rest_col, format!("bad operation name `{n}`")));
                }
                if name.replace(n.to_string()).is_some() {
                    return Err(syntax(indent, "second `operation` header".into()));
                }
            }
            _ if name.is_none() => {
                return Err(syntax(indent, "expected `operation <name>` first".into()));
            }
            "operand" => {
                operands.push(parse_operand(rest, line_no, rest_col)?);
            }
            "postcondition" => {
                let body = rest.trim_start();
                let Some(body) = body.strip_prefix(':') else {
                    return Err(syntax(rest_col, "expected `:` after postcondition".into()));
                };
                let col = indent + line.len() - body.len();
                if post.is_some() {
                    return Err(syntax(indent, "second postcondition".into()));
                }
                post = Some(parse_equation_at(body, line_no, col)?);
            }
            "solve" => {
                let body = rest.trim_start();
                let Some(body) = body.strip_prefix(':') else {
                    return Err(syntax(rest_col, "expected `:` after solve".into()));
                };
                let op = body.trim();
                if !is_identifier(op) {
                    return Err(syntax(rest_col, format!("bad operator name `{op}`")));
                }
                if solve.replace(op.to_string()).is_some() {
                    return Err(syntax(indent, "second `solve` line".into()));
                }
            }
            other => return Err(syntax(indent, format!("unknown keyword `{other}`"))),
        }
    }

    let name = name.ok_or(SpecError::Missing("<unnamed>".into(), "operation"))?;
    let post = post.ok_or_else(|| SpecError::Missing(name.clone(), "postcondition"))?;
    let solve = solve.ok_or_else(|| SpecError::Missing(name.clone(), "solve"))?;
    OperationSpec::new(name, operands, post, solve)
}

fn parse_size(s: &str) -> Option<Size> {
    let s = s.trim();
    if s == "1" {
        Some(Size::one())
    } else if is_identifier(s) {
        Some(Size::new(s))
    } else {
        None
    }
}

fn parse_operand(rest: &str, line: usize, col0: usize) -> Result<OperandDecl, SpecError> {
    let syntax = |message: String| SpecError::Syntax {
        line,
        column: col0 + 1,
        message,
    };
    let (name, decl) = rest
        .split_once(':')
        .ok_or_else(|| syntax("expected `operand <name> : <type>, ...`".into()))?;
    let name = name.trim();
    if !is_identifier(name) || name == "trans" || name == "inv" {
        return Err(syntax(format!("bad operand name `{name}`")));
    }
    // Split on commas outside parentheses.
    let mut fields = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for c in decl.chars() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                fields.push(std::mem::take(&mut cur));
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    fields.push(cur);
    let fields: Vec<&str> = fields.iter().map(|f| f.trim()).collect();
    if fields.len() < 2 {
        return Err(syntax("expected type and known/unknown".into()));
    }

    let ty = fields[0].replace(' ', "");
    let (kind, dims) = if ty == "scalar" {
        (Kind::Scalar, Dimension::new(Size::one(), Size::one()))
    } else if let Some(inner) = ty.strip_prefix("vector(").and_then(|s| s.strip_suffix(')')) {
        let r = parse_size(inner).ok_or_else(|| syntax(format!("bad size `{inner}`")))?;
        (Kind::Vector, Dimension::new(r, Size::one()))
    } else if let Some(inner) = ty.strip_prefix("matrix(").and_then(|s| s.strip_suffix(')')) {
        let (r, c) = inner
            .split_once(',')
            .ok_or_else(|| syntax("matrix needs `matrix(rows,cols)`".into()))?;
        let r = parse_size(r).ok_or_else(|| syntax(format!("bad size `{r}`")))?;
        let c = parse_size(c).ok_or_else(|| syntax(format!("bad size `{c}`")))?;
        (Kind::Matrix, Dimension::new(r, c))
    } else {
        return Err(syntax(format!("unknown operand type `{}`", fields[0])));
    };

    let io_role = match fields[1] {
        "known" => IoRole::Input,
        "unknown" => IoRole::Output,
        other => return Err(syntax(format!("expected known/unknown, found `{other}`"))),
    };
    let mut properties = BTreeSet::new();
    for f in &fields[2..] {
        let p = Property::from_keyword(f).ok_or_else(|| syntax(format!("unknown property `{f}`")))?;
        properties.insert(p);
    }
    Ok(OperandDecl {
        name: name.to_string(),
        kind,
        dims,
        io_role,
        properties,
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Zero,
    Plus,
    Minus,
    Star,
    LParen,
    RParen,
    Eq,
    Comma,
}

fn lex(text: &str, line: usize, col0: usize) -> Result<Vec<(Tok, usize)>, SpecError> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = col0 + i + 1;
        let simple = match c {
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '=' => Some(Tok::Eq),
            ',' => Some(Tok::Comma),
            '0' => Some(Tok::Zero),
            _ => None,
        };
        if let Some(t) = simple {
            out.push((t, col));
            i += 1;
        } else if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), col));
        } else {
            return Err(SpecError::Syntax {
                line,
                column: col,
                message: format!("unexpected character `{c}`"),
            });
        }
    }
    Ok(out)
}

struct ExprParser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    line: usize,
    end_col: usize,
}

impl ExprParser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn err(&self, message: impl Into<String>) -> SpecError {
        SpecError::Syntax {
            line: self.line,
            column: self.toks.get(self.pos).map_or(self.end_col, |(_, c)| *c),
            message: message.into(),
        }
    }

    fn expect(&mut self, t: Tok, what: &str) -> Result<(), SpecError> {
        if self.peek() == Some(&t) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected {what}")))
        }
    }

    fn expr(&mut self) -> Result<Expr, SpecError> {
        let mut terms = vec![self.term()?];
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    terms.push(self.term()?);
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    terms.push(Expr::Minus(Box::new(self.term()?)));
                }
                _ => break,
            }
        }
        Ok(if terms.len() == 1 {
            terms.pop().unwrap()
        } else {
            Expr::Plus(terms)
        })
    }

    fn term(&mut self) -> Result<Expr, SpecError> {
        let mut factors = vec![self.factor()?];
        while self.peek() == Some(&Tok::Star) {
            self.pos += 1;
            factors.push(self.factor()?);
        }
        Ok(if factors.len() == 1 {
            factors.pop().unwrap()
        } else {
            Expr::Times(factors)
        })
    }

    fn factor(&mut self) -> Result<Expr, SpecError> {
        match self.peek().cloned() {
            Some(Tok::Minus) => {
                self.pos += 1;
                Ok(Expr::Minus(Box::new(self.factor()?)))
            }
            Some(Tok::Zero) => {
                self.pos += 1;
                Ok(Expr::Zero)
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if name == "trans" || name == "inv" {
                    self.expect(Tok::LParen, "`(`")?;
                    let e = self.expr()?;
                    self.expect(Tok::RParen, "`)`")?;
                    Ok(if name == "trans" {
                        Expr::Transpose(Box::new(e))
                    } else {
                        Expr::Inverse(Box::new(e))
                    })
                } else if self.peek() == Some(&Tok::LParen) {
                    // A solved form such as `Gamma(A_TL)`.
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    while self.peek() == Some(&Tok::Comma) {
                        self.pos += 1;
                        args.push(self.expr()?);
                    }
                    self.expect(Tok::RParen, "`)` or `,`")?;
                    Ok(Expr::Solved(name, args))
                } else {
                    Ok(Expr::Operand(name))
                }
            }
            _ => Err(self.err("expected an operand, `trans(`, `inv(`, `-` or `(`")),
        }
    }
}

/// Parses `<expr> = <expr>` in infix notation.
pub fn parse_equation(text: &str) -> Result<Equation, SpecError> {
    parse_equation_at(text, 1, 0)
}

/// Parses a single infix expression.
pub fn parse_expr(text: &str) -> Result<Expr, SpecError> {
    let mut p = ExprParser {
        toks: lex(text, 1, 0)?,
        pos: 0,
        line: 1,
        end_col: text.len() + 1,
    };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return Err(p.err("unexpected trailing input"));
    }
    Ok(e)
}

fn parse_equation_at(text: &str, line: usize, col0: usize) -> Result<Equation, SpecError> {
    let mut p = ExprParser {
        toks: lex(text, line, col0)?,
        pos: 0,
        line,
        end_col: col0 + text.len() + 1,
    };
    let lhs = p.expr()?;
    p.expect(Tok::Eq, "`=`")?;
    let rhs = p.expr()?;
    if p.pos != p.toks.len() {
        return Err(p.err("unexpected trailing input"));
    }
    Ok(Equation::new(lhs, rhs))
}

/// Infix rendering in the description language's own syntax.
pub fn expr_to_dsl(e: &Expr) -> String {
    match e {
        Expr::Operand(n) => n.clone(),
        Expr::Zero => "0".into(),
        Expr::Plus(ts) => {
            // Positive terms first, so `A - B` rather than `-B + A`.
            let ordered = ts
                .iter()
                .filter(|t| !matches!(t, Expr::Minus(_)))
                .chain(ts.iter().filter(|t| matches!(t, Expr::Minus(_))));
            let mut s = String::new();
            for (i, t) in ordered.enumerate() {
                match (i, t) {
                    (0, Expr::Minus(x)) => {
                        s.push('-');
                        s.push_str(&dsl_term(x));
                    }
                    (0, t) => s.push_str(&dsl_term(t)),
                    (_, Expr::Minus(x)) => {
                        s.push_str(" - ");
                        s.push_str(&dsl_term(x));
                    }
                    (_, t) => {
                        s.push_str(" + ");
                        s.push_str(&dsl_term(t));
                    }
                }
            }
            s
        }
        Expr::Times(_) => dsl_term(e),
        Expr::Minus(x) => format!("-{}", dsl_factor(x)),
        Expr::Transpose(x) => format!("trans({})", expr_to_dsl(x)),
        Expr::Inverse(x) => format!("inv({})", expr_to_dsl(x)),
        Expr::Solved(op, args) => format!(
            "{}({})",
            op,
            args.iter().map(expr_to_dsl).collect::<Vec<_>>().join(", ")
        ),
    }
}

fn dsl_term(e: &Expr) -> String {
    match e {
        Expr::Times(fs) => fs.iter().map(dsl_factor).collect::<Vec<_>>().join(" * "),
        other => dsl_factor(other),
    }
}

fn dsl_factor(e: &Expr) -> String {
    match e {
        Expr::Plus(_) | Expr::Times(_) => format!("({})", expr_to_dsl(e)),
        Expr::Minus(x) => format!("-{}", dsl_factor(x)),
        other => expr_to_dsl(other),
    }
}

/// Renders a spec in the description language. Parsing the output yields
/// the same spec.
pub fn render_spec(spec: &OperationSpec) -> Result<String, SpecError> {
    // Re-validate: a hand-built value may not satisfy the invariants.
    let mut checked = spec.clone();
    checked.validate()?;

    let mut out = format!("operation {}\n", spec.name);
    for op in &spec.operands {
        let ty = match op.kind {
            Kind::Scalar => "scalar".to_string(),
            Kind::Vector => format!("vector({})", op.dims.rows),
            Kind::Matrix => format!("matrix({},{})", op.dims.rows, op.dims.cols),
        };
        let role = match op.io_role {
            IoRole::Input => "known",
            IoRole::Output => "unknown",
        };
        out.push_str(&format!("  operand {} : {}, {}", op.name, ty, role));
        for p in &op.properties {
            if *p == Property::Symmetric && op.has(Property::Spd) {
                continue;
            }
            out.push_str(", ");
            out.push_str(p.keyword());
        }
        out.push('\n');
    }
    out.push_str(&format!(
        "  postcondition: {} = {}\n",
        expr_to_dsl(&spec.postcondition.lhs),
        expr_to_dsl(&spec.postcondition.rhs)
    ));
    out.push_str(&format!("  solve: {}\n", spec.solution_operator));
    Ok(out)
}
