//! Patterns and the knowledge base that stores them.

use std::fmt;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{to_canonical_equation, Dimension, Equation, Expr, Size};
use crate::opspec::{parse_expr, parse_operation, IoRole, Kind, OperandDecl, OperationSpec, Property, SpecError};

#[derive(Debug, Error)]
pub enum KbError {
    #[error("pattern `{0}` is already defined with a different template")]
    Conflict(String),
    #[error("pattern `{name}`: {message}")]
    Invalid { name: String, message: String },
    #[error("no builtin pattern named `{0}`")]
    UnknownBuiltin(String),
    #[error("no pattern named `{0}`")]
    Unknown(String),
    #[error("knowledge base line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("knowledge base I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Spec(#[from] SpecError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    Builtin,
    LearnedFrom(String),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Builtin => f.write_str("builtin"),
            Provenance::LearnedFrom(op) => write!(f, "learned-from:{op}"),
        }
    }
}

impl Provenance {
    fn parse(s: &str) -> Option<Provenance> {
        if s == "builtin" {
            Some(Provenance::Builtin)
        } else {
            s.strip_prefix("learned-from:")
                .map(|op| Provenance::LearnedFrom(op.to_string()))
        }
    }

    pub fn is_builtin(&self) -> bool {
        matches!(self, Provenance::Builtin)
    }
}

/// A solved operation: the spec's operands are the slots, its postcondition
/// (in canonical form) is the template, and `solved` gives the output slot in
/// terms of the input slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    pub name: String,
    pub provenance: Provenance,
    pub spec: OperationSpec,
    pub template: Equation,
    pub solved: Equation,
}

impl Pattern {
    /// The pattern an operation contributes once learned:
    /// `output = Op(inputs in declaration order)`.
    pub fn from_spec(spec: &OperationSpec, provenance: Provenance) -> Result<Pattern, KbError> {
        let output = single_output(spec)?;
        let args = spec.inputs().map(|o| Expr::operand(&o.name)).collect::<Vec<_>>();
        if args.is_empty() {
            return Err(KbError::Invalid {
                name: spec.name.clone(),
                message: "an operation without inputs cannot be learned".into(),
            });
        }
        let solved = Equation::new(
            Expr::operand(output),
            Expr::solved(&spec.solution_operator, args),
        );
        Pattern::with_solved(spec.clone(), provenance, solved)
    }

    /// A pattern with an explicit solved form.
    pub fn with_solved(spec: OperationSpec, provenance: Provenance, solved: Equation) -> Result<Pattern, KbError> {
        let invalid = |message: String| KbError::Invalid {
            name: spec.name.clone(),
            message,
        };
        let output = single_output(&spec)?;
        let solved = solved.normalized().map_err(|e| invalid(e.to_string()))?;
        if solved.lhs != Expr::operand(&output) {
            return Err(invalid(format!("solved form must define `{output}`")));
        }
        for n in solved.rhs.operands() {
            match spec.operand(&n) {
                Some(d) if d.is_input() => {}
                Some(_) => return Err(invalid(format!("solved form uses unknown `{n}`"))),
                None => return Err(invalid(format!("solved form uses undeclared `{n}`"))),
            }
        }
        let template = to_canonical_equation(&spec.postcondition, &spec.known_names()).equation;
        if !template.lhs.mentions(&output) {
            return Err(invalid("template does not mention its output".into()));
        }
        Ok(Pattern {
            name: spec.name.clone(),
            provenance,
            spec,
            template,
            solved,
        })
    }

    pub fn output(&self) -> &OperandDecl {
        self.spec.outputs().next().expect("validated single output")
    }

    fn same_definition(&self, other: &Pattern) -> bool {
        self.spec == other.spec && self.solved == other.solved
    }
}

fn single_output(spec: &OperationSpec) -> Result<String, KbError> {
    let outs: Vec<&OperandDecl> = spec.outputs().collect();
    if outs.len() != 1 {
        return Err(KbError::Invalid {
            name: spec.name.clone(),
            message: format!("patterns need exactly one output, found {}", outs.len()),
        });
    }
    Ok(outs[0].name.clone())
}

/// Builtin patterns as (description, solved right-hand side).
const BUILTINS: &[(&str, &str)] = &[
    (
        "operation assign
  operand X : matrix(m,n), unknown
  operand E : matrix(m,n), known
  postcondition: X = E
  solve: assign",
        "E",
    ),
    (
        "operation add
  operand X : matrix(m,n), unknown
  operand E : matrix(m,n), known
  operand F : matrix(m,n), known
  postcondition: X + E = F
  solve: add",
        "F - E",
    ),
    (
        "operation transpose
  operand X : matrix(m,n), unknown
  operand E : matrix(n,m), known
  postcondition: trans(X) = E
  solve: transpose",
        "trans(E)",
    ),
    (
        "operation solve_left
  operand A : matrix(m,m), known, general
  operand X : matrix(m,n), unknown
  operand B : matrix(m,n), known
  postcondition: A * X = B
  solve: solve_left",
        "inv(A) * B",
    ),
    (
        "operation solve_right
  operand A : matrix(n,n), known, general
  operand X : matrix(m,n), unknown
  operand B : matrix(m,n), known
  postcondition: X * A = B
  solve: solve_right",
        "B * inv(A)",
    ),
    (
        "operation trsm_lower_left
  operand L : matrix(m,m), known, lower_triangular
  operand X : matrix(m,n), unknown
  operand B : matrix(m,n), known
  postcondition: L * X = B
  solve: trsm_lower_left",
        "inv(L) * B",
    ),
    (
        "operation trsm_lower_left_trans
  operand L : matrix(m,m), known, lower_triangular
  operand X : matrix(m,n), unknown
  operand B : matrix(m,n), known
  postcondition: trans(L) * X = B
  solve: trsm_lower_left_trans",
        "trans(inv(L)) * B",
    ),
    (
        "operation trsm_lower_right
  operand L : matrix(n,n), known, lower_triangular
  operand X : matrix(m,n), unknown
  operand B : matrix(m,n), known
  postcondition: X * L = B
  solve: trsm_lower_right",
        "B * inv(L)",
    ),
    (
        "operation trsm_lower_right_trans
  operand L : matrix(n,n), known, lower_triangular
  operand X : matrix(m,n), unknown
  operand B : matrix(m,n), known
  postcondition: X * trans(L) = B
  solve: trsm_lower_right_trans",
        "B * trans(inv(L))",
    ),
    (
        "operation trsm_upper_left
  operand U : matrix(m,m), known, upper_triangular
  operand X : matrix(m,n), unknown
  operand B : matrix(m,n), known
  postcondition: U * X = B
  solve: trsm_upper_left",
        "inv(U) * B",
    ),
    (
        "operation trsm_upper_left_trans
  operand U : matrix(m,m), known, upper_triangular
  operand X : matrix(m,n), unknown
  operand B : matrix(m,n), known
  postcondition: trans(U) * X = B
  solve: trsm_upper_left_trans",
        "trans(inv(U)) * B",
    ),
    (
        "operation trsm_upper_right
  operand U : matrix(n,n), known, upper_triangular
  operand X : matrix(m,n), unknown
  operand B : matrix(m,n), known
  postcondition: X * U = B
  solve: trsm_upper_right",
        "B * inv(U)",
    ),
    (
        "operation trsm_upper_right_trans
  operand U : matrix(n,n), known, upper_triangular
  operand X : matrix(m,n), unknown
  operand B : matrix(m,n), known
  postcondition: X * trans(U) = B
  solve: trsm_upper_right_trans",
        "B * trans(inv(U))",
    ),
    (
        "operation scalar_div_left
  operand a : scalar, known
  operand x : scalar, unknown
  operand b : scalar, known
  postcondition: a * x = b
  solve: scalar_div_left",
        "inv(a) * b",
    ),
    (
        "operation scalar_div_right
  operand a : scalar, known
  operand x : scalar, unknown
  operand b : scalar, known
  postcondition: x * a = b
  solve: scalar_div_right",
        "b * inv(a)",
    ),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeBase {
    builtins: Vec<Pattern>,
    learned: Vec<Pattern>,
}

/// The elementary solvers every derivation starts from.
pub fn seed_builtins() -> KnowledgeBase {
    let builtins = BUILTINS
        .iter()
        .map(|(text, rhs)| {
            let spec = parse_operation(text).expect("builtin description parses");
            let output = spec.outputs().next().expect("builtin output").name.clone();
            let rhs = parse_expr(rhs).expect("builtin solved form parses");
            Pattern::with_solved(spec, Provenance::Builtin, Equation::new(Expr::operand(output), rhs))
                .expect("builtin pattern is valid")
        })
        .collect();
    KnowledgeBase {
        builtins,
        learned: Vec::new(),
    }
}

impl KnowledgeBase {
    pub fn builtins(&self) -> &[Pattern] {
        &self.builtins
    }

    pub fn learned(&self) -> &[Pattern] {
        &self.learned
    }

    /// Patterns in matching order: learned (most recent first), then builtins.
    pub fn match_order(&self) -> impl Iterator<Item = &Pattern> {
        self.learned.iter().rev().chain(self.builtins.iter())
    }

    pub fn get(&self, name: &str) -> Option<&Pattern> {
        self.builtins
            .iter()
            .chain(self.learned.iter())
            .find(|p| p.name == name)
    }

    pub fn names(&self) -> Vec<(String, Provenance)> {
        self.builtins
            .iter()
            .chain(self.learned.iter())
            .map(|p| (p.name.clone(), p.provenance.clone()))
            .collect()
    }

    /// Drops builtin `family` and every builtin named `family_...`.
    pub fn without_builtin(&self, family: &str) -> Result<KnowledgeBase, KbError> {
        let prefix = format!("{family}_");
        let keep: Vec<Pattern> = self
            .builtins
            .iter()
            .filter(|p| p.name != family && !p.name.starts_with(&prefix))
            .cloned()
            .collect();
        if keep.len() == self.builtins.len() {
            return Err(KbError::UnknownBuiltin(family.to_string()));
        }
        Ok(KnowledgeBase {
            builtins: keep,
            learned: self.learned.clone(),
        })
    }

    /// Adds a pattern. Re-adding an identical definition is a no-op.
    pub fn with_pattern(&self, pattern: Pattern) -> Result<KnowledgeBase, KbError> {
        if let Some(existing) = self.get(&pattern.name) {
            if existing.provenance.is_builtin() || !existing.same_definition(&pattern) {
                return Err(KbError::Conflict(pattern.name));
            }
            return Ok(self.clone());
        }
        let mut kb = self.clone();
        kb.learned.push(pattern);
        Ok(kb)
    }

    /// Serializes the learned patterns, one JSON record per line.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for p in &self.learned {
            let record = PatternRecord::from(p);
            out.push_str(&serde_json::to_string(&record).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Builtins plus the learned patterns in `text`.
    pub fn from_records(text: &str) -> Result<KnowledgeBase, KbError> {
        let mut kb = seed_builtins();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let format = |message: String| KbError::Format {
                line: i + 1,
                message,
            };
            let record: PatternRecord =
                serde_json::from_str(line).map_err(|e| format(e.to_string()))?;
            let pattern = record.into_pattern().map_err(|e| format(e.to_string()))?;
            if kb.get(&pattern.name).is_some() {
                return Err(format(format!("duplicate pattern `{}`", pattern.name)));
            }
            kb.learned.push(pattern);
        }
        Ok(kb)
    }

    /// Loads a knowledge base file; a missing file means builtins only.
    pub fn load(path: &Path) -> Result<KnowledgeBase, KbError> {
        match std::fs::read_to_string(path) {
            Ok(text) => KnowledgeBase::from_records(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(seed_builtins()),
            Err(e) => Err(e.into()),
        }
    }

    /// Writes the learned patterns to `path` via a temporary file and rename.
    pub fn save(&self, path: &Path) -> Result<(), KbError> {
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(self.to_records().as_bytes())?;
        tmp.flush()?;
        tmp.persist(path).map_err(|e| KbError::Io(e.error))?;
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SlotRecord {
    name: String,
    kind: Kind,
    rows: Size,
    cols: Size,
    io_role: IoRole,
    properties: Vec<Property>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PatternRecord {
    name: String,
    provenance: String,
    solution_operator: String,
    operands: Vec<SlotRecord>,
    postcondition: Equation,
    solved: Equation,
}

impl From<&Pattern> for PatternRecord {
    fn from(p: &Pattern) -> Self {
        PatternRecord {
            name: p.name.clone(),
            provenance: p.provenance.to_string(),
            solution_operator: p.spec.solution_operator.clone(),
            operands: p
                .spec
                .operands
                .iter()
                .map(|o| SlotRecord {
                    name: o.name.clone(),
                    kind: o.kind,
                    rows: o.dims.rows.clone(),
                    cols: o.dims.cols.clone(),
                    io_role: o.io_role,
                    properties: o.properties.iter().copied().collect(),
                })
                .collect(),
            postcondition: p.spec.postcondition.clone(),
            solved: p.solved.clone(),
        }
    }
}

impl PatternRecord {
    fn into_pattern(self) -> Result<Pattern, KbError> {
        let provenance = Provenance::parse(&self.provenance).ok_or_else(|| KbError::Invalid {
            name: self.name.clone(),
            message: format!("bad provenance `{}`", self.provenance),
        })?;
        if provenance.is_builtin() {
            return Err(KbError::Invalid {
                name: self.name,
                message: "builtin patterns are not stored".into(),
            });
        }
        let operands = self
            .operands
            .into_iter()
            .map(|s| OperandDecl::new(s.name, s.kind, Dimension::new(s.rows, s.cols), s.io_role, s.properties))
            .collect();
        let spec = OperationSpec::new(self.name, operands, self.postcondition, self.solution_operator)?;
        Pattern::with_solved(spec, provenance, self.solved)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CHOLESKY: &str = "operation cholesky
  operand L : matrix(m,m), unknown, lower_triangular
  operand A : matrix(m,m), known, spd
  postcondition: L * trans(L) = A
  solve: Gamma
";

    #[test]
    fn builtins_are_well_formed_and_unique() {
        let kb = seed_builtins();
        let names: Vec<String> = kb.names().into_iter().map(|(n, _)| n).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert!(names.contains(&"trsm_lower_right_trans".to_string()));
        assert!(kb.learned().is_empty());
    }

    #[test]
    fn learned_pattern_uses_solution_operator() {
        let spec = parse_operation(CHOLESKY).unwrap();
        let p = Pattern::from_spec(&spec, Provenance::LearnedFrom("cholesky".into())).unwrap();
        assert_eq!(p.solved.to_prefix(), "(eq L (solved Gamma A))");
        assert_eq!(p.template.to_prefix(), "(eq (times L (trans L)) A)");
    }

    #[test]
    fn learning_is_idempotent_and_detects_conflicts() {
        let spec = parse_operation(CHOLESKY).unwrap();
        let p = Pattern::from_spec(&spec, Provenance::LearnedFrom("cholesky".into())).unwrap();
        let kb = seed_builtins().with_pattern(p.clone()).unwrap();
        assert_eq!(kb.with_pattern(p).unwrap(), kb);

        let other = parse_operation(&CHOLESKY.replace("L * trans(L)", "trans(L) * L")).unwrap();
        let q = Pattern::from_spec(&other, Provenance::LearnedFrom("cholesky".into())).unwrap();
        assert!(matches!(kb.with_pattern(q), Err(KbError::Conflict(_))));

        let clash = parse_operation(&CHOLESKY.replace("operation cholesky", "operation assign")).unwrap();
        let r = Pattern::from_spec(&clash, Provenance::LearnedFrom("assign".into())).unwrap();
        assert!(matches!(seed_builtins().with_pattern(r), Err(KbError::Conflict(_))));
    }

    #[test]
    fn records_round_trip() {
        let spec = parse_operation(CHOLESKY).unwrap();
        let p = Pattern::from_spec(&spec, Provenance::LearnedFrom("cholesky".into())).unwrap();
        let kb = seed_builtins().with_pattern(p).unwrap();
        let text = kb.to_records();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(KnowledgeBase::from_records(&text).unwrap(), kb);
    }

    #[test]
    fn loading_rejects_invalid_records() {
        assert!(matches!(
            KnowledgeBase::from_records("{not json"),
            Err(KbError::Format { line: 1, .. })
        ));
        let spec = parse_operation(CHOLESKY).unwrap();
        let p = Pattern::from_spec(&spec, Provenance::LearnedFrom("cholesky".into())).unwrap();
        let line = seed_builtins().with_pattern(p).unwrap().to_records();
        let twice = format!("{line}{line}");
        assert!(KnowledgeBase::from_records(&twice).is_err());
        let bad = line.replace("(solved Gamma A)", "(solved Gamma Q)");
        assert!(KnowledgeBase::from_records(&bad).is_err());
    }

    #[test]
    fn disabling_a_builtin_family() {
        let kb = seed_builtins().without_builtin("trsm").unwrap();
        assert!(kb.builtins().iter().all(|p| !p.name.starts_with("trsm")));
        assert!(kb.get("assign").is_some());
        assert!(matches!(
            seed_builtins().without_builtin("nope"),
            Err(KbError::UnknownBuiltin(_))
        ));
    }

    #[test]
    fn save_and_load_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.jsonl");
        assert_eq!(KnowledgeBase::load(&path).unwrap(), seed_builtins());
        let spec = parse_operation(CHOLESKY).unwrap();
        let p = Pattern::from_spec(&spec, Provenance::LearnedFrom("cholesky".into())).unwrap();
        let kb = seed_builtins().with_pattern(p).unwrap();
        kb.save(&path).unwrap();
        assert_eq!(KnowledgeBase::load(&path).unwrap(), kb);
    }
}
