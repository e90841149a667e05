//! Library updates: accept a candidate only when the objective drops.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::dataset::Dataset;
use crate::library::{objective_of, Library, Macro, RefactoredProgram};
use crate::search::{best_programs, SearchConfig};

/// Minimum objective decrease for a change to be accepted.
pub const IMPROVEMENT_TOL: f64 = 1e-9;

/// A library with its objective value and best programs on some dataset.
#[derive(Clone, Debug)]
pub struct Evaluated {
    pub library: Library,
    pub f: f64,
    pub programs: Vec<RefactoredProgram>,
}

pub fn evaluate(library: Library, d: &Dataset, search: &SearchConfig) -> Evaluated {
    let programs = best_programs(d, &library, search).expect("base functions cover every line");
    let f = objective_of(&library, &search.weights, &programs);
    Evaluated { library, f, programs }
}

/// The evaluated `plus` if its objective is strictly lower than `cur`'s.
pub fn optimize(cur: &Evaluated, plus: Library, d: &Dataset, search: &SearchConfig) -> Option<Evaluated> {
    if plus == cur.library {
        return None;
    }
    let e = evaluate(plus, d, search);
    (e.f < cur.f - IMPROVEMENT_TOL).then_some(e)
}

/// Calls per function name.
pub fn usage(e: &Evaluated) -> BTreeMap<String, usize> {
    let mut ids = BTreeMap::new();
    for p in &e.programs {
        p.usage(&mut ids);
    }
    ids.into_iter()
        .map(|(id, n)| (e.library.functions()[id].name.clone(), n))
        .collect()
}

/// Macros of `cur` used in `plus` less than `ratio` times as often.
pub fn infrequent_functions(cur: &Evaluated, plus: &Evaluated, ratio: f64) -> Vec<String> {
    let before = usage(cur);
    let after = usage(plus);
    cur.library
        .macros()
        .iter()
        .filter(|m| {
            let b = before.get(&m.name).copied().unwrap_or(0);
            let a = after.get(&m.name).copied().unwrap_or(0);
            b > 0 && (a as f64) < ratio * b as f64
        })
        .map(|m| m.name.clone())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Added,
    AddedWithRemoval,
    Rejected,
    Removed,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Action {
    pub function: String,
    pub outcome: Outcome,
    pub f_before: f64,
    pub f_after: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub removed: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub readded: Vec<String>,
}

/// Tries to add `m`. When that alone does not help, retries without the
/// macros `m` makes infrequent and then re-adds any of those that still pay
/// for themselves.
pub fn integration_step(
    m: Macro,
    cur: Evaluated,
    d_sub: &Dataset,
    search: &SearchConfig,
    infrequent_ratio: f64,
) -> (Evaluated, Action) {
    let mut action = Action {
        function: m.name.clone(),
        outcome: Outcome::Rejected,
        f_before: cur.f,
        f_after: cur.f,
        removed: vec![],
        readded: vec![],
    };
    let Ok(lib_plus) = cur.library.with_macro(m) else {
        return (cur, action);
    };
    let plus = evaluate(lib_plus, d_sub, search);
    if plus.f < cur.f - IMPROVEMENT_TOL {
        action.outcome = Outcome::Added;
        action.f_after = plus.f;
        return (plus, action);
    }
    let infrequent = infrequent_functions(&cur, &plus, infrequent_ratio);
    if infrequent.is_empty() {
        return (cur, action);
    }
    let Some(mut best) = optimize(&cur, plus.library.without(&infrequent), d_sub, search) else {
        return (cur, action);
    };
    for name in &infrequent {
        let old = cur.library.functions()[cur.library.position(name).expect("infrequent names come from the library")].clone();
        if let Ok(lib) = best.library.with_macro(old) {
            if let Some(e) = optimize(&best, lib, d_sub, search) {
                best = e;
                action.readded.push(name.clone());
            }
        }
    }
    action.removed = infrequent.into_iter().filter(|n| !action.readded.contains(n)).collect();
    action.outcome = Outcome::AddedWithRemoval;
    action.f_after = best.f;
    (best, action)
}

/// Drops each macro whose removal lowers the objective, in library order.
pub fn removal_pass(mut cur: Evaluated, d: &Dataset, search: &SearchConfig) -> (Evaluated, Vec<Action>) {
    let names: Vec<String> = cur.library.macros().iter().map(|m| m.name.clone()).collect();
    let mut log = Vec::new();
    for name in names {
        if let Some(e) = optimize(&cur, cur.library.without(std::slice::from_ref(&name)), d, search) {
            log.push(Action {
                function: name,
                outcome: Outcome::Removed,
                f_before: cur.f,
                f_after: e.f,
                removed: vec![],
                readded: vec![],
            });
            cur = e;
        }
    }
    (cur, log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{Axis, Command, CuboidId, Domain, ParamValue, Program, Symbol};
    use crate::library::{Formal, MacroLine, ParamSpec};

    fn leg_dataset() -> Dataset {
        let progs = (0..4).map(|i| {
            let h = 0.3 + 0.1 * i as f64;
            let x = 0.1 + 0.2 * i as f64;
            let text = format!(
                "bbox = Cuboid(1,1,1,True)\nc1 = Cuboid(0.1,{h},0.1,True)\nattach(bbox,0.5,0,0.5,{x},0,0.5)\nreflect(X)\n"
            );
            (format!("p{i}"), Program::parse(&text).unwrap())
        });
        Dataset::from_programs(progs, 24).unwrap()
    }

    fn c(x: f64) -> ParamSpec {
        ParamSpec::Const(ParamValue::Float(x))
    }

    fn leg_macro(name: &str, fixed_axis: bool) -> Macro {
        let mut formals = vec![Formal::new(Domain::Dim), Formal::new(Domain::Unit)];
        let sym = if fixed_axis {
            ParamSpec::Const(ParamValue::Discrete(Symbol::Axis(Axis::X)))
        } else {
            formals.push(Formal::new(Domain::Axis));
            ParamSpec::Formal(2)
        };
        let m = Macro {
            name: name.into(),
            formals,
            body: vec![
                MacroLine {
                    command: Command::Cuboid,
                    slots: vec![c(0.1), ParamSpec::Formal(0), c(0.1), ParamSpec::Const(ParamValue::Bool(true))],
                },
                MacroLine {
                    command: Command::Attach,
                    slots: vec![
                        ParamSpec::Const(ParamValue::Cid(CuboidId::BBOX)),
                        c(0.5),
                        c(0.0),
                        c(0.5),
                        ParamSpec::Formal(1),
                        c(0.0),
                        c(0.5),
                    ],
                },
                MacroLine {
                    command: Command::Reflect,
                    slots: vec![sym],
                },
            ],
            provenance: vec![],
        };
        m.validate().unwrap();
        m
    }

    fn search() -> SearchConfig {
        SearchConfig::default()
    }

    #[test]
    fn optimize_keeps_the_better_library() {
        let d = leg_dataset();
        let cur = evaluate(Library::base(), &d, &search());
        assert!(optimize(&cur, cur.library.clone(), &d, &search()).is_none());

        let mut unused = leg_macro("unused", true);
        unused.body[0].slots[0] = c(0.9);
        assert!(optimize(&cur, Library::base().with_macro(unused).unwrap(), &d, &search()).is_none());

        let better = optimize(&cur, Library::base().with_macro(leg_macro("leg", true)).unwrap(), &d, &search()).unwrap();
        assert!(better.f < cur.f);
        assert_eq!(usage(&better)["leg"], 4);
    }

    #[test]
    fn direct_improvements_are_added() {
        let d = leg_dataset();
        let cur = evaluate(Library::base(), &d, &search());
        let (e, a) = integration_step(leg_macro("leg", true), cur, &d, &search(), 0.5);
        assert_eq!(a.outcome, Outcome::Added);
        assert_eq!(e.library.len(), 6);
    }

    #[test]
    fn useless_candidates_leave_the_library_alone() {
        let d = leg_dataset();
        let cur = evaluate(Library::base(), &d, &search());
        let f = cur.f;
        let mut unused = leg_macro("unused", true);
        unused.body[0].slots[0] = c(0.9);
        let (e, a) = integration_step(unused, cur, &d, &search(), 0.5);
        assert_eq!(a.outcome, Outcome::Rejected);
        assert_eq!(e.library, Library::base());
        assert_eq!(e.f, f);
    }

    #[test]
    fn subsumed_macros_are_replaced() {
        let d = leg_dataset();
        let old = Library::base().with_macro(leg_macro("old", false)).unwrap();
        let cur = evaluate(old, &d, &search());
        assert_eq!(usage(&cur)["old"], 4);
        let plus = evaluate(cur.library.with_macro(leg_macro("new", true)).unwrap(), &d, &search());
        assert!(plus.f >= cur.f, "adding alone must not pay off for this fixture");

        let (e, a) = integration_step(leg_macro("new", true), cur.clone(), &d, &search(), 0.5);
        assert_eq!(a.outcome, Outcome::AddedWithRemoval);
        assert_eq!(a.removed, vec!["old".to_string()]);
        assert!(a.readded.is_empty());
        assert_eq!(e.library.names()[5..], ["new".to_string()]);
        assert!(e.f < cur.f);
    }

    #[test]
    fn removal_drops_unused_macros() {
        let d = leg_dataset();
        let lib = Library::base()
            .with_macro(leg_macro("leg", true))
            .unwrap()
            .with_macro({
                let mut m = leg_macro("spare", false);
                m.body[0].slots[0] = c(0.9);
                m
            })
            .unwrap();
        let cur = evaluate(lib, &d, &search());
        let (e, log) = removal_pass(cur, &d, &search());
        assert_eq!(e.library.names()[5..], ["leg".to_string()]);
        assert_eq!(log.len(), 1);
        assert!(log[0].f_after < log[0].f_before);
    }
}
