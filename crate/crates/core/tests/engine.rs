use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pme_core::blockarith::QuadrantStatus;
use pme_core::engine::matcher::expr_dims;
use pme_core::engine::prover::prove_spd;
use pme_core::engine::{derive_all, DeriveError, KnowledgeBase, Pme};
use pme_core::expr::{normalize, Expr};
use pme_core::opspec::{expr_to_dsl, parse_expr, OperationSpec, Property};
use pme_core::oracle::{
    check_pme, cholesky, evaluate, sample_operand, symmetric_eigenvalues, trsm_right_lower_trans, BaseSolvers,
    NumericBinding,
};
use pme_core::random_spec::{random_spec, RandomSpecConfig};
use pme_core::{learn, parse_operation, render, seed_builtins};

fn spec(file: &str) -> OperationSpec {
    let path = format!("{}/../../ops/{file}", env!("CARGO_MANIFEST_DIR"));
    parse_operation(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn e(s: &str) -> Expr {
    normalize(&parse_expr(s).unwrap()).unwrap()
}

#[test]
fn derived_pmes_satisfy_the_postcondition() {
    let solvers = BaseSolvers::default();
    for (file, tol) in [("cholesky.op", 1e-10), ("sylvester.op", 1e-8), ("trsm.op", 1e-8)] {
        let s = spec(file);
        let all = derive_all(&s, &seed_builtins()).unwrap();
        assert!(all.failures().is_empty(), "{file}");
        for pme in all.pmes() {
            let report = check_pme(pme, &s, 50, 11, &solvers).unwrap();
            assert!(report.passed() && report.max_residual() <= tol, "{report}");
        }
    }
}

#[test]
fn a_corrupted_pme_is_caught() {
    let s = spec("cholesky.op");
    let all = derive_all(&s, &seed_builtins()).unwrap();
    let mut pme = all.pmes()[0].clone();
    pme.assignments[2].value = Expr::solved("Gamma", vec![e("A_BR")]);
    let report = check_pme(&pme, &s, 10, 0, &BaseSolvers::default()).unwrap();
    assert!(!report.passed());
}

#[test]
fn traces_only_ever_grow_the_known_set() {
    for file in ["cholesky.op", "sylvester.op", "trsm.op"] {
        let s = spec(file);
        let all = derive_all(&s, &seed_builtins()).unwrap();
        for outcome in &all.outcomes {
            let d = outcome.as_ref().unwrap();
            let mut known = s.known_names();
            let inputs_only: Vec<String> = d.state.known.iter().filter(|k| !d.state.trace.iter().any(|t| &t.output == *k)).cloned().collect();
            known.extend(inputs_only);
            for step in &d.state.trace {
                assert!(!known.contains(&step.output), "{} solved twice", step.output);
                assert!(step.value.is_known_only(&known), "{} uses an unknown", expr_to_dsl(&step.value));
                known.insert(step.output.clone());
            }
            let needed = d
                .grid
                .cells
                .iter()
                .filter(|c| !matches!(c.status, QuadrantStatus::RedundantStar { .. } | QuadrantStatus::Trivial))
                .count();
            assert!(d.state.trace.len() <= needed);
            assert_eq!(d.state.trace.len(), d.pme.assignments.len());
        }
    }
}

#[test]
fn a_learned_operation_solves_its_own_unpartitioned_form() {
    let s = spec("cholesky.op");
    let kb = learn(&s, &seed_builtins()).unwrap();
    let p = kb.get("cholesky").unwrap();
    assert_eq!(expr_to_dsl(&p.solved.rhs), "Gamma(A)");
    // Learned patterns match first, and the result is unchanged.
    let with = derive_all(&s, &kb).unwrap();
    let without = derive_all(&s, &seed_builtins()).unwrap();
    assert_eq!(with.pmes(), without.pmes());
    assert_eq!(with.pmes()[0].assignments[0].pattern, "cholesky");
}

#[test]
fn pmes_render_identically_after_a_json_round_trip() {
    let s = spec("sylvester.op");
    let all = derive_all(&s, &seed_builtins()).unwrap();
    for (i, pme) in all.pmes().into_iter().enumerate() {
        let back = Pme::from_json(&pme.to_json()).unwrap();
        assert_eq!(&back, pme);
        assert_eq!(render::pme_text(&back, i + 1), render::pme_text(pme, i + 1));
        assert_eq!(render::pme_latex(&back, i + 1), render::pme_latex(pme, i + 1));
    }
}

#[test]
fn knowledge_base_survives_save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("kb.jsonl");
    assert_eq!(KnowledgeBase::load(&path).unwrap(), seed_builtins());
    let kb = learn(&spec("trsm.op"), &learn(&spec("cholesky.op"), &seed_builtins()).unwrap()).unwrap();
    kb.save(&path).unwrap();
    let back = KnowledgeBase::load(&path).unwrap();
    assert_eq!(back, kb);
    assert_eq!(std::fs::read_to_string(&path).unwrap(), back.to_records());
}

#[test]
fn a_stuck_derivation_names_the_blocking_equation() {
    let s = spec("cholesky.op");
    let kb = seed_builtins().without_builtin("trsm").unwrap();
    let all = derive_all(&s, &kb).unwrap();
    let (_, err) = all.failures()[0];
    let DeriveError::Stuck(report) = err else { panic!("{err}") };
    assert_eq!(report.remaining[0].0, "BL");
    assert!(err.to_string().contains("L_BL * trans(L_TL) = A_BL"), "{err}");
}

/// The Cholesky blocks at one random size, with `L_TL` and `L_BL` computed
/// from their defining equations.
fn cholesky_instance(rng: &mut ChaCha8Rng, spd: &pme_core::opspec::OperandDecl) -> NumericBinding {
    let m = rng.gen_range(2..=8);
    let k = rng.gen_range(1..m);
    let a = sample_operand(spd, m, m, rng);
    let a_tl = a.block(0, 0, k, k);
    let a_bl = a.block(k, 0, m - k, k);
    let l_tl = cholesky(&a_tl).unwrap();
    let l_bl = trsm_right_lower_trans(&l_tl, &a_bl).unwrap();
    let mut values = BTreeMap::new();
    values.insert("A_TL".into(), a_tl);
    values.insert("A_BL".into(), a_bl);
    values.insert("A_BR".into(), a.block(k, k, m - k, m - k));
    values.insert("L_TL".into(), l_tl);
    values.insert("L_BL".into(), l_bl);
    NumericBinding {
        sizes: [("m".to_string(), m), ("k1".to_string(), k)].into(),
        values,
    }
}

#[test]
fn everything_the_prover_accepts_is_positive_definite() {
    let s = spec("cholesky.op");
    let all = derive_all(&s, &seed_builtins()).unwrap();
    let mut state = all.outcomes[0].as_ref().unwrap().state.clone();
    state.tautologies.truncate(2);
    state.known.remove("L_BR");

    let bottom = ["A_BR", "L_BL * trans(L_BL)", "A_BL * trans(A_BL)", "A_BL * inv(A_TL) * trans(A_BL)"];
    let top = ["A_TL", "L_TL * trans(L_TL)", "trans(A_BL) * A_BL", "trans(L_BL) * L_BL"];
    let mut candidates = Vec::new();
    for pool in [bottom, top] {
        for a in 0..pool.len() {
            for b in 0..pool.len() {
                for signs in ["+ +", "+ -", "- +"] {
                    let (sa, sb) = signs.split_once(' ').unwrap();
                    candidates.push(format!("{sa}{} {sb} {}", pool[a], pool[b]).trim_start_matches('+').to_string());
                }
            }
            candidates.push(pool[a].to_string());
        }
    }
    candidates.push("inv(A_BR - L_BL * trans(L_BL))".into());
    candidates.push("trans(A_BR - L_BL * trans(L_BL))".into());

    let accepted: Vec<Expr> = candidates.iter().map(|c| e(c)).filter(|x| !x.is_zero() && prove_spd(x, &state)).collect();
    assert!(accepted.contains(&e("A_BR - L_BL * trans(L_BL)")));
    assert!(!accepted.contains(&e("A_BR - A_BL * trans(A_BL)")));

    let spd = s.operand("A").unwrap().clone();
    assert!(spd.has(Property::Spd));
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let solvers = BaseSolvers::default();
    for x in &accepted {
        for _ in 0..100 {
            let b = cholesky_instance(&mut rng, &spd);
            let d = expr_dims(x, &state.dims).unwrap();
            let shape = b.dims(&d).unwrap();
            let v = evaluate(x, &b, &solvers, shape).unwrap();
            assert!(v.is_symmetric(1e-10), "{}", expr_to_dsl(x));
            let min = symmetric_eigenvalues(&v)[0];
            assert!(min > 0.0, "{} has eigenvalue {min}", expr_to_dsl(x));
        }
    }
}

#[test]
fn random_operations_only_yield_sound_pmes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let solvers = BaseSolvers::default();
    let mut checked = 0;
    for _ in 0..40 {
        let s = random_spec(&mut rng, &RandomSpecConfig::default());
        let Ok(all) = derive_all(&s, &seed_builtins()) else { continue };
        for pme in all.pmes() {
            if pme.assignments.iter().any(|a| format!("{:?}", a.value).contains("\"Phi\"")) {
                continue;
            }
            let report = check_pme(pme, &s, 5, 3, &solvers).unwrap();
            assert!(report.passed(), "{}\n{}", pme_core::render_spec(&s).unwrap(), report);
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn a_learned_pattern_matches_inside_another_operation() {
    use pme_core::engine::matcher::match_equation;
    use pme_core::expr::{to_canonical_equation, Dimension, Size};
    use pme_core::opspec::parse_equation;
    use pme_core::partition::PropertyFact;

    let kb = learn(&spec("sylvester.op"), &seed_builtins()).unwrap();
    let mut state = pme_core::engine::DerivationState::default();
    let dim = |r: &str, c: &str| Dimension::new(Size::new(r), Size::new(c));
    for (name, d) in [("P", dim("p", "p")), ("Q", dim("q", "q")), ("C", dim("p", "q")), ("D", dim("p", "q"))] {
        state.known.insert(name.to_string());
        state.dims.insert(name.to_string(), d);
    }
    state.dims.insert("Y".into(), dim("p", "q"));
    state.facts.push(PropertyFact::new(e("P"), Property::LowerTriangular));
    state.facts.push(PropertyFact::new(e("Q"), Property::UpperTriangular));

    let eq = parse_equation("P * Y + Y * Q + D = C").unwrap().normalized().unwrap();
    let canon = to_canonical_equation(&eq, &state.known).equation;
    let (m, _) = match_equation(&canon, &kb, &state);
    let m = m.expect("the learned Sylvester pattern applies");
    assert_eq!(m.pattern, "sylvester");
    assert_eq!(m.output, "Y");
    assert_eq!(m.value, e("Omega(P, Q, C - D)"));

    // Without the structure on Q the guard fails.
    state.facts.pop();
    assert!(match_equation(&canon, &kb, &state).0.is_none_or(|m| m.pattern != "sylvester"));
}
