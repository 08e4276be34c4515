use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::binding::{bind_dimensions, enumerate_combinations, BindingError, RuleCombination};
use crate::blockarith::{blocked_postcondition, BlockError, Blocking, BlockedEquationGrid, QuadrantStatus};
use crate::expr::{to_canonical_equation, Equation};
use crate::opspec::{expr_to_dsl, parse_operation, OperationSpec, Property};
use crate::partition::{spd_facts, PropertyFact};

use super::kb::{KbError, KnowledgeBase, Pattern, Provenance};
use super::matcher::{match_equation, unknowns};
use super::{Assignment, DerivationState, Pme, StarCell, Tautology, TraceStep};

#[derive(Debug, Error)]
pub enum DeriveError {
    #[error(transparent)]
    Binding(#[from] BindingError),
    #[error(transparent)]
    Block(#[from] BlockError),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error("{0}")]
    Stuck(Box<StuckReport>),
}

/// The equations left when no pattern applies, with the reasons candidate
/// patterns were rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StuckReport {
    pub operation: String,
    pub combination: String,
    pub remaining: Vec<(String, Equation)>,
    pub diagnostics: Vec<String>,
}

impl fmt::Display for StuckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "derivation of `{}` stuck for [{}]", self.operation, self.combination)?;
        for (pos, eq) in &self.remaining {
            writeln!(f, "  {pos}: {} = {}", expr_to_dsl(&eq.lhs), expr_to_dsl(&eq.rhs))?;
        }
        for d in &self.diagnostics {
            writeln!(f, "    {d}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct DeriveOptions {
    /// Directory of `*.op` descriptions to derive and learn from when stuck.
    pub ops_dir: Option<PathBuf>,
}

/// A finished derivation for one combination.
#[derive(Debug, Clone)]
pub struct Derivation {
    pub pme: Pme,
    pub grid: BlockedEquationGrid,
    pub state: DerivationState,
    /// Patterns learned from the ops directory along the way.
    pub acquired: Vec<Pattern>,
}

/// Outcomes for every viable combination, in enumeration order.
#[derive(Debug)]
pub struct DeriveAll {
    pub combinations: Vec<RuleCombination>,
    pub outcomes: Vec<Result<Derivation, DeriveError>>,
}

impl DeriveAll {
    pub fn pmes(&self) -> Vec<&Pme> {
        self.outcomes
            .iter()
            .filter_map(|o| o.as_ref().ok())
            .map(|d| &d.pme)
            .collect()
    }

    pub fn failures(&self) -> Vec<(&RuleCombination, &DeriveError)> {
        self.combinations
            .iter()
            .zip(&self.outcomes)
            .filter_map(|(c, o)| o.as_ref().err().map(|e| (c, e)))
            .collect()
    }

    /// Patterns acquired from the ops directory by any combination.
    pub fn acquired(&self) -> Vec<&Pattern> {
        let mut out: Vec<&Pattern> = Vec::new();
        for d in self.outcomes.iter().filter_map(|o| o.as_ref().ok()) {
            for p in &d.acquired {
                if !out.iter().any(|q| q.name == p.name) {
                    out.push(p);
                }
            }
        }
        out
    }
}

/// Adds the operation's own pattern to `kb`.
pub fn learn(spec: &OperationSpec, kb: &KnowledgeBase) -> Result<KnowledgeBase, KbError> {
    let pattern = Pattern::from_spec(spec, Provenance::LearnedFrom(spec.name.clone()))?;
    kb.with_pattern(pattern)
}

pub fn derive_pme(spec: &OperationSpec, combo: &RuleCombination, kb: &KnowledgeBase) -> Result<Derivation, DeriveError> {
    derive_pme_with(spec, combo, kb, &DeriveOptions::default())
}

pub fn derive_pme_with(
    spec: &OperationSpec,
    combo: &RuleCombination,
    kb: &KnowledgeBase,
    opts: &DeriveOptions,
) -> Result<Derivation, DeriveError> {
    derive_one(spec, combo, kb, opts, std::slice::from_ref(&spec.name))
}

pub fn derive_all(spec: &OperationSpec, kb: &KnowledgeBase) -> Result<DeriveAll, DeriveError> {
    derive_all_with(spec, kb, &DeriveOptions::default())
}

/// Derives a PME for every viable combination, concurrently.
pub fn derive_all_with(spec: &OperationSpec, kb: &KnowledgeBase, opts: &DeriveOptions) -> Result<DeriveAll, DeriveError> {
    derive_all_nested(spec, kb, opts, &[])
}

fn derive_all_nested(
    spec: &OperationSpec,
    kb: &KnowledgeBase,
    opts: &DeriveOptions,
    stack: &[String],
) -> Result<DeriveAll, DeriveError> {
    let groups = bind_dimensions(spec)?;
    let combinations = enumerate_combinations(spec, &groups)?;
    let mut stack = stack.to_vec();
    stack.push(spec.name.clone());
    let outcomes = std::thread::scope(|s| {
        let handles: Vec<_> = combinations
            .iter()
            .map(|c| {
                let stack = &stack;
                s.spawn(move || derive_one(spec, c, kb, opts, stack))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("derivation thread panicked"))
            .collect()
    });
    Ok(DeriveAll {
        combinations,
        outcomes,
    })
}

fn initial_state(spec: &OperationSpec, blocking: &Blocking) -> Result<DerivationState, DeriveError> {
    let mut facts = Vec::new();
    for b in &blocking.operands {
        for (name, props) in &b.block_properties {
            for &p in props {
                facts.push(PropertyFact::new(crate::expr::Expr::operand(name), p));
            }
        }
    }
    for decl in spec.inputs().filter(|d| d.has(Property::Spd)) {
        let blocked = blocking.operand(&decl.name).expect("every operand is blocked");
        for f in spd_facts(decl, blocked).map_err(BlockError::from)? {
            if !facts.contains(&f) {
                facts.push(f);
            }
        }
    }
    Ok(DerivationState {
        known: blocking.known_blocks(spec),
        facts,
        tautologies: Vec::new(),
        dims: blocking.block_dims(),
        trace: Vec::new(),
    })
}

fn derive_one(
    spec: &OperationSpec,
    combo: &RuleCombination,
    kb: &KnowledgeBase,
    opts: &DeriveOptions,
    stack: &[String],
) -> Result<Derivation, DeriveError> {
    let mut working = learn(spec, kb)?;
    let mut grid = blocked_postcondition(spec, combo)?;
    let blocking = Blocking::new(spec, combo)?;
    let mut state = initial_state(spec, &blocking)?;
    let mut acquired = Vec::new();
    let mut ops_loaded = false;
    let mut notes = Vec::new();

    loop {
        let pending: Vec<usize> = grid
            .scan()
            .into_iter()
            .filter(|&i| grid.cells[i].status == QuadrantStatus::Unsolved)
            .collect();
        if pending.is_empty() {
            break;
        }
        let mut progress = false;
        let mut diagnostics = Vec::new();
        for &i in &pending {
            let cell = &grid.cells[i];
            let (found, rejections) = match_equation(&cell.equation, &working, &state);
            let Some(m) = found else {
                if unknowns(&cell.equation.lhs, &state.known).is_empty() {
                    diagnostics.push(format!("{}: no unknown block left to solve for", cell.position));
                } else if rejections.is_empty() {
                    diagnostics.push(format!("{}: no pattern matches the equation's structure", cell.position));
                }
                for r in rejections {
                    diagnostics.push(format!("{}: pattern `{}` rejected: {}", cell.position, r.pattern, r.reason));
                }
                continue;
            };
            let equation = cell.equation.clone();
            let position = cell.position.clone();
            state.known.insert(m.output.clone());
            state.tautologies.push(Tautology {
                output: m.output.clone(),
                equation: equation.clone(),
                value: m.value.clone(),
            });
            state.trace.push(TraceStep {
                position,
                pattern: m.pattern.clone(),
                equation,
                output: m.output.clone(),
                value: m.value.clone(),
            });
            grid.cells[i].status = QuadrantStatus::Solved {
                output: m.output,
                value: m.value,
                pattern: m.pattern,
            };
            for c in grid.cells.iter_mut() {
                if c.status == QuadrantStatus::Unsolved {
                    let canonical = to_canonical_equation(&c.equation, &state.known);
                    c.equation = canonical.equation;
                    if c.equation.lhs.is_zero() && c.equation.rhs.is_zero() {
                        c.status = QuadrantStatus::Trivial;
                    }
                }
            }
            progress = true;
            break;
        }
        if progress {
            continue;
        }
        if let (Some(dir), false) = (&opts.ops_dir, ops_loaded) {
            ops_loaded = true;
            let learned = acquire_from_dir(dir, &working, opts, stack, &mut notes);
            if !learned.is_empty() {
                for p in learned {
                    working = working.with_pattern(p.clone())?;
                    acquired.push(p);
                }
                continue;
            }
        }
        diagnostics.extend(notes);
        return Err(DeriveError::Stuck(Box::new(StuckReport {
            operation: spec.name.clone(),
            combination: combo.summary(),
            remaining: pending
                .iter()
                .map(|&i| (grid.cells[i].position.clone(), grid.cells[i].equation.clone()))
                .collect(),
            diagnostics,
        })));
    }

    let pme = assemble(spec, combo, &grid, &state);
    Ok(Derivation {
        pme,
        grid,
        state,
        acquired,
    })
}

/// Derives every operation in `dir` not yet known and returns the patterns
/// of those that produced at least one PME.
fn acquire_from_dir(
    dir: &Path,
    kb: &KnowledgeBase,
    opts: &DeriveOptions,
    stack: &[String],
    notes: &mut Vec<String>,
) -> Vec<Pattern> {
    let mut files: Vec<PathBuf> = match std::fs::read_dir(dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "op"))
            .collect(),
        Err(e) => {
            notes.push(format!("cannot read {}: {e}", dir.display()));
            return vec![];
        }
    };
    files.sort();
    let mut learned = Vec::new();
    for path in files {
        let spec = match std::fs::read_to_string(&path)
            .map_err(|e| e.to_string())
            .and_then(|t| parse_operation(&t).map_err(|e| e.to_string()))
        {
            Ok(s) => s,
            Err(e) => {
                notes.push(format!("skipped {}: {e}", path.display()));
                continue;
            }
        };
        if kb.get(&spec.name).is_some() || stack.contains(&spec.name) {
            continue;
        }
        match derive_all_nested(&spec, kb, opts, stack) {
            Ok(all) if !all.pmes().is_empty() => {
                match Pattern::from_spec(&spec, Provenance::LearnedFrom(spec.name.clone())) {
                    Ok(p) => learned.push(p),
                    Err(e) => notes.push(format!("cannot learn `{}`: {e}", spec.name)),
                }
            }
            Ok(_) => notes.push(format!("`{}` from {} could not be derived", spec.name, path.display())),
            Err(e) => notes.push(format!("`{}` from {}: {e}", spec.name, path.display())),
        }
    }
    learned
}

fn assemble(spec: &OperationSpec, combo: &RuleCombination, grid: &BlockedEquationGrid, state: &DerivationState) -> Pme {
    let assignments = state
        .trace
        .iter()
        .map(|t| Assignment {
            position: t.position.clone(),
            output: t.output.clone(),
            value: t.value.clone(),
            pattern: t.pattern.clone(),
        })
        .collect();
    let mut stars = Vec::new();
    let mut trivial = Vec::new();
    for c in &grid.cells {
        match &c.status {
            QuadrantStatus::RedundantStar { partner } => stars.push(StarCell {
                position: c.position.clone(),
                partner: partner.clone(),
            }),
            QuadrantStatus::Trivial => trivial.push(c.position.clone()),
            _ => {}
        }
    }
    Pme {
        operation: spec.name.clone(),
        combination: combo.clone(),
        row_sizes: grid.row_sizes.clone(),
        col_sizes: grid.col_sizes.clone(),
        assignments,
        stars,
        trivial,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::kb::seed_builtins;
    use crate::engine::CellEntry;

    const CHOLESKY: &str = "operation cholesky
  operand L : matrix(m,m), unknown, lower_triangular
  operand A : matrix(m,m), known, spd
  postcondition: L * trans(L) = A
  solve: Gamma
";
    const SYLVESTER: &str = "operation sylvester
  operand L : matrix(m,m), known, lower_triangular
  operand U : matrix(n,n), known, upper_triangular
  operand C : matrix(m,n), known
  operand X : matrix(m,n), unknown
  postcondition: L * X + X * U = C
  solve: Omega
";

    fn dsl(a: &Assignment) -> String {
        format!("{} = {}", a.output, expr_to_dsl(&a.value))
    }

    #[test]
    fn cholesky_pme() {
        let spec = parse_operation(CHOLESKY).unwrap();
        let all = derive_all(&spec, &seed_builtins()).unwrap();
        let pmes = all.pmes();
        assert_eq!(pmes.len(), 1);
        let got: Vec<String> = pmes[0].assignments.iter().map(dsl).collect();
        assert_eq!(
            got,
            vec![
                "L_TL = Gamma(A_TL)",
                "L_BL = A_BL * trans(inv(L_TL))",
                "L_BR = Gamma(A_BR - L_BL * trans(L_BL))",
            ]
        );
        assert_eq!(pmes[0].entry("TR"), Some(CellEntry::Star("BL")));
    }

    #[test]
    fn sylvester_pmes() {
        let spec = parse_operation(SYLVESTER).unwrap();
        let all = derive_all(&spec, &seed_builtins()).unwrap();
        let pmes = all.pmes();
        assert_eq!(pmes.len(), 3);
        let rows: Vec<Vec<String>> = pmes
            .iter()
            .map(|p| p.assignments.iter().map(dsl).collect())
            .collect();
        assert_eq!(
            rows[0],
            vec!["X_L = Omega(L, U_TL, C_L)", "X_R = Omega(L, U_BR, C_R - X_L * U_TR)"]
        );
        assert_eq!(
            rows[1],
            vec!["X_T = Omega(L_TL, U, C_T)", "X_B = Omega(L_BR, U, C_B - L_BL * X_T)"]
        );
        assert_eq!(rows[2].len(), 4);
        assert_eq!(rows[2][0], "X_TL = Omega(L_TL, U_TL, C_TL)");
    }

    #[test]
    fn stuck_without_triangular_solves() {
        let spec = parse_operation(CHOLESKY).unwrap();
        let kb = seed_builtins().without_builtin("trsm").unwrap();
        let all = derive_all(&spec, &kb).unwrap();
        assert!(all.pmes().is_empty());
        let (_, err) = all.failures()[0];
        let DeriveError::Stuck(report) = err else {
            panic!("expected a stuck derivation, got {err}");
        };
        assert_eq!(report.remaining[0].0, "BL");
    }

    #[test]
    fn learning_twice_is_a_no_op() {
        let spec = parse_operation(CHOLESKY).unwrap();
        let once = learn(&spec, &seed_builtins()).unwrap();
        assert_eq!(learn(&spec, &once).unwrap(), once);
        let p = once.get("cholesky").unwrap();
        assert_eq!(p.solved.to_prefix(), "(eq L (solved Gamma A))");
        assert!(p.output().has(Property::LowerTriangular));
    }
}
