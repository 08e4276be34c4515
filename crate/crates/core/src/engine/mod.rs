//! Derivation of PMEs by matching block equations against known patterns.

mod derive;
pub mod kb;
pub mod matcher;
pub mod prover;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::binding::RuleCombination;
use crate::expr::{Dimension, Equation, Expr, Size};
use crate::opspec::OperationSpec;
use crate::partition::{position_name, PropertyFact};

pub use derive::{
    derive_all, derive_all_with, derive_pme, derive_pme_with, learn, DeriveAll, DeriveError,
    DeriveOptions, Derivation, StuckReport,
};
pub use kb::{seed_builtins, KbError, KnowledgeBase, Pattern, Provenance};

/// `output = value`, established by solving `equation`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tautology {
    pub output: String,
    pub equation: Equation,
    pub value: Expr,
}

/// One solved block, in solve order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub position: String,
    pub pattern: String,
    pub equation: Equation,
    pub output: String,
    pub value: Expr,
}

/// What the matcher and prover may rely on while deriving.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DerivationState {
    /// Input blocks and every block solved so far.
    pub known: BTreeSet<String>,
    pub facts: Vec<PropertyFact>,
    pub tautologies: Vec<Tautology>,
    pub dims: BTreeMap<String, Dimension>,
    pub trace: Vec<TraceStep>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub position: String,
    pub output: String,
    pub value: Expr,
    pub pattern: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StarCell {
    pub position: String,
    pub partner: String,
}

/// A partitioned matrix expression: for one combination of partitioning
/// rules, every output block in terms of input blocks and earlier outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pme {
    pub operation: String,
    pub combination: RuleCombination,
    pub row_sizes: Vec<Size>,
    pub col_sizes: Vec<Size>,
    /// In dependency (solve) order.
    pub assignments: Vec<Assignment>,
    pub stars: Vec<StarCell>,
    /// Cells whose equation reduced to `0 = 0`.
    pub trivial: Vec<String>,
}

/// What a PME says about one grid cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CellEntry<'a> {
    Assigned(&'a Assignment),
    Star(&'a str),
    Trivial,
}

impl Pme {
    pub fn shape(&self) -> (usize, usize) {
        (self.row_sizes.len(), self.col_sizes.len())
    }

    /// Cell positions in row-major order.
    pub fn positions(&self) -> Vec<&'static str> {
        let (r, c) = self.shape();
        (0..r)
            .flat_map(|i| (0..c).map(move |j| position_name((r, c), i, j)))
            .collect()
    }

    pub fn entry(&self, position: &str) -> Option<CellEntry<'_>> {
        if let Some(a) = self.assignments.iter().find(|a| a.position == position) {
            return Some(CellEntry::Assigned(a));
        }
        if let Some(s) = self.stars.iter().find(|s| s.position == position) {
            return Some(CellEntry::Star(&s.partner));
        }
        self.trivial
            .iter()
            .any(|t| t == position)
            .then_some(CellEntry::Trivial)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("PME serializes")
    }

    pub fn from_json(text: &str) -> Result<Pme, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Whether the PME belongs to `spec`.
    pub fn is_for(&self, spec: &OperationSpec) -> bool {
        self.operation == spec.name
    }
}
