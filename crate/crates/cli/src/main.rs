use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use pme_core::binding::{bind_dimensions, enumerate_combinations, BindingError};
use pme_core::blockarith::Blocking;
use pme_core::engine::{
    derive_all_with, derive_pme_with, DeriveError, DeriveOptions, Derivation, KnowledgeBase, Pme, Provenance,
};
use pme_core::oracle::{check_pme, BaseSolvers};
use pme_core::render;
use pme_core::{learn, parse_operation, OperationSpec, RuleCombination};

const EXIT_USAGE: u8 = 1;
const EXIT_NO_PARTITIONING: u8 = 2;
const EXIT_STUCK: u8 = 3;
const EXIT_CHECK_FAILED: u8 = 4;

#[derive(Parser)]
#[command(name = "pmegen", version, about = "Derive partitioned matrix expressions from operation descriptions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Enumerate partitionings of an operation and derive a PME for each.
    Derive {
        file: PathBuf,
        #[arg(long, env = "PME_KB")]
        kb: Option<PathBuf>,
        /// Operation descriptions to derive and learn from when stuck.
        #[arg(long)]
        ops_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Store the operation's pattern in the knowledge base on success.
        #[arg(long)]
        learn: bool,
        /// Only derive combination N (1-based).
        #[arg(long)]
        combination: Option<usize>,
        /// Disable a builtin pattern, or a family such as `trsm`.
        #[arg(long = "no-builtin", value_name = "NAME")]
        no_builtin: Vec<String>,
    },
    /// Check PMEs numerically against the unpartitioned postcondition.
    Check {
        file: PathBuf,
        pme: PathBuf,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Inspect the knowledge base.
    Kb {
        #[command(subcommand)]
        action: KbAction,
        #[arg(long, env = "PME_KB", global = true)]
        kb: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum KbAction {
    List,
    Show { name: String },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Latex,
    Json,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Failure::new(EXIT_USAGE, message)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Derive {
            file,
            kb,
            ops_dir,
            format,
            learn,
            combination,
            no_builtin,
        } => cmd_derive(&file, kb.as_deref(), ops_dir, format, learn, combination, &no_builtin),
        Command::Check {
            file,
            pme,
            trials,
            seed,
        } => cmd_check(&file, &pme, trials, seed),
        Command::Kb { action, kb } => cmd_kb(action, kb.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message.trim_end());
            ExitCode::from(f.code)
        }
    }
}

fn read_spec(path: &Path) -> Result<OperationSpec, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
    parse_operation(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn load_kb(path: Option<&Path>) -> Result<KnowledgeBase, Failure> {
    match path {
        Some(p) => KnowledgeBase::load(p).map_err(|e| Failure::usage(format!("{}: {e}", p.display()))),
        None => Ok(pme_core::seed_builtins()),
    }
}

fn combinations(spec: &OperationSpec) -> Result<Vec<RuleCombination>, Failure> {
    let groups = bind_dimensions(spec).map_err(|e| match e {
        BindingError::NoViablePartitionings(_) => Failure::new(EXIT_NO_PARTITIONING, e.to_string()),
        _ => Failure::usage(e.to_string()),
    })?;
    enumerate_combinations(spec, &groups).map_err(|e| match e {
        BindingError::NoViablePartitionings(_) => Failure::new(EXIT_NO_PARTITIONING, e.to_string()),
        _ => Failure::usage(e.to_string()),
    })
}

fn cmd_derive(
    file: &Path,
    kb_path: Option<&Path>,
    ops_dir: Option<PathBuf>,
    format: Format,
    learn_pattern: bool,
    only: Option<usize>,
    disabled: &[String],
) -> Result<(), Failure> {
    let spec = read_spec(file)?;
    if learn_pattern && kb_path.is_none() {
        return Err(Failure::usage("--learn needs a knowledge base path (--kb or PME_KB)"));
    }
    let stored = load_kb(kb_path)?;
    let mut kb = stored.clone();
    for name in disabled {
        kb = kb.without_builtin(name).map_err(|e| Failure::usage(e.to_string()))?;
    }
    let opts = DeriveOptions { ops_dir };

    let all = combinations(&spec)?;
    let selected: Vec<(usize, RuleCombination)> = match only {
        Some(n) if n == 0 || n > all.len() => {
            return Err(Failure::usage(format!(
                "combination {n} out of range: `{}` has {} combination(s)",
                spec.name,
                all.len()
            )))
        }
        Some(n) => vec![(n, all[n - 1].clone())],
        None => all.iter().cloned().enumerate().map(|(i, c)| (i + 1, c)).collect(),
    };

    let outcomes: Vec<Result<Derivation, DeriveError>> = if only.is_some() {
        selected
            .iter()
            .map(|(_, c)| derive_pme_with(&spec, c, &kb, &opts))
            .collect()
    } else {
        derive_all_with(&spec, &kb, &opts)
            .map_err(|e| Failure::usage(e.to_string()))?
            .outcomes
    };

    let mut out = String::new();
    let mut pmes: Vec<(usize, &Pme)> = Vec::new();
    let mut stuck: Vec<(usize, &DeriveError)> = Vec::new();
    for ((index, _), outcome) in selected.iter().zip(&outcomes) {
        match outcome {
            Ok(d) => pmes.push((*index, &d.pme)),
            Err(e) => stuck.push((*index, e)),
        }
    }

    match format {
        Format::Text | Format::Latex => {
            if format == Format::Text {
                out.push_str(&format!("operation {}: {} viable combination(s)\n", spec.name, all.len()));
            } else {
                out.push_str(&format!("% operation {}: {} viable combination(s)\n", spec.name, all.len()));
            }
            for (index, combo) in &selected {
                let blocking = Blocking::new(&spec, combo).map_err(|e| Failure::usage(e.to_string()))?;
                out.push_str(&match format {
                    Format::Text => render::combination_text(combo, &blocking, *index),
                    _ => render::combination_latex(combo, &blocking, *index),
                });
            }
            for (index, pme) in &pmes {
                out.push('\n');
                out.push_str(&match format {
                    Format::Text => render::pme_text(pme, *index),
                    _ => render::pme_latex(pme, *index),
                });
            }
        }
        Format::Json => {
            let combos: Vec<Value> = selected
                .iter()
                .map(|(i, c)| json!({ "index": i, "summary": c.summary(), "combination": c }))
                .collect();
            let pme_values: Vec<Value> = pmes
                .iter()
                .map(|(i, p)| {
                    let mut v = serde_json::to_value(p).expect("PME serializes");
                    v["index"] = json!(i);
                    v
                })
                .collect();
            let doc = json!({
                "operation": spec.name,
                "viable_combinations": all.len(),
                "combinations": combos,
                "pmes": pme_values,
            });
            out.push_str(&serde_json::to_string_pretty(&doc).expect("JSON renders"));
            out.push('\n');
        }
    }
    print!("{out}");

    let mut diagnostics = String::new();
    for (index, e) in &stuck {
        diagnostics.push_str(&format!("combination {index}: {e}\n"));
    }
    if pmes.is_empty() {
        return Err(Failure::new(EXIT_STUCK, diagnostics));
    }
    if !diagnostics.is_empty() {
        eprint!("warning: {diagnostics}");
    }

    if learn_pattern {
        let path = kb_path.expect("checked above");
        let mut updated = learn(&spec, &stored).map_err(|e| Failure::usage(e.to_string()))?;
        for d in outcomes.iter().filter_map(|o| o.as_ref().ok()) {
            for p in &d.acquired {
                updated = updated
                    .with_pattern(p.clone())
                    .map_err(|e| Failure::usage(e.to_string()))?;
            }
        }
        updated
            .save(path)
            .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

/// Accepts a single PME object or a `derive --format json` document.
fn read_pmes(path: &Path) -> Result<Vec<Pme>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
    let bad = |e: serde_json::Error| Failure::usage(format!("{}: {e}", path.display()));
    let value: Value = serde_json::from_str(&text).map_err(bad)?;
    match value.get("pmes") {
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| serde_json::from_value(v.clone()).map_err(bad))
            .collect(),
        _ => Ok(vec![serde_json::from_value(value).map_err(bad)?]),
    }
}

fn cmd_check(file: &Path, pme_path: &Path, trials: usize, seed: u64) -> Result<(), Failure> {
    let spec = read_spec(file)?;
    let pmes = read_pmes(pme_path)?;
    if trials == 0 {
        eprintln!("warning: no trials requested, nothing checked");
    }
    let solvers = BaseSolvers::default();
    let mut failed = false;
    for pme in &pmes {
        let report = check_pme(pme, &spec, trials, seed, &solvers).map_err(|e| Failure::usage(e.to_string()))?;
        println!("{report}");
        failed |= !report.passed();
    }
    if failed {
        return Err(Failure::new(EXIT_CHECK_FAILED, "residual above tolerance"));
    }
    Ok(())
}

fn cmd_kb(action: KbAction, kb_path: Option<&Path>) -> Result<(), Failure> {
    let kb = load_kb(kb_path)?;
    match action {
        KbAction::List => {
            for (name, provenance) in kb.names() {
                let tag = match provenance {
                    Provenance::Builtin => "builtin",
                    Provenance::LearnedFrom(_) => "learned",
                };
                println!("{name} ({tag})");
            }
        }
        KbAction::Show { name } => {
            let p = kb
                .get(&name)
                .ok_or_else(|| Failure::usage(format!("no pattern named `{name}`")))?;
            print!("{}", render::pattern_text(p));
        }
    }
    Ok(())
}
