//! Single-pass baseline: frequent command sequences become macros with
//! constants wherever most occurrences agree.

use std::collections::{BTreeMap, BTreeSet};

use crate::dataset::{Dataset, OrderedView};
use crate::lang::{Command, CuboidId, ParamKind, ParamValue};
use crate::library::{objective_of, Formal, Library, Macro, MacroLine, ParamSpec, RefactoredProgram};
use crate::search::{best_programs, SearchConfig};

use super::proposal::{MAX_BODY, MIN_BODY};

/// A sequence must appear in more than this fraction of programs.
pub const BASELINE_MIN_FREQUENCY: f64 = 0.1;
/// Fraction of occurrences that must agree for a slot to become constant.
pub const BASELINE_AGREEMENT: f64 = 0.9;
/// Continuous values within this distance of the mean agree.
pub const BASELINE_BAND: f64 = 0.05;

#[derive(Clone, Debug)]
pub struct BaselineResult {
    pub library: Library,
    pub programs: Vec<RefactoredProgram>,
    pub f: f64,
}

fn canonical_view(d: &Dataset, i: usize) -> &OrderedView {
    let e = &d.entries()[i];
    &e.views()[e.orders().canonical_index()]
}

fn windows(v: &OrderedView) -> impl Iterator<Item = (usize, usize)> + '_ {
    (1..v.len())
        .filter(|&s| v.block_start[s])
        .flat_map(move |s| (MIN_BODY..=MAX_BODY.min(v.len() - s)).map(move |l| (s, l)))
}

/// Command sequences starting at a block and present in more than
/// `min_frequency` of the views, with their program counts.
pub fn frequent_sequences(views: &[&OrderedView], min_frequency: f64) -> Vec<(Vec<Command>, usize)> {
    let mut counts: BTreeMap<Vec<Command>, usize> = BTreeMap::new();
    for v in views {
        let seen: BTreeSet<Vec<Command>> = windows(v)
            .map(|(s, l)| v.lines[s..s + l].iter().map(|x| x.command).collect())
            .collect();
        for k in seen {
            *counts.entry(k).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .filter(|(_, n)| *n as f64 > min_frequency * views.len() as f64)
        .collect()
}

/// The value shared by at least `BASELINE_AGREEMENT` of the observations.
pub fn discrete_constant(values: &[ParamValue]) -> Option<ParamValue> {
    let mut counts: Vec<(ParamValue, usize)> = Vec::new();
    for v in values {
        match counts.iter_mut().find(|(u, _)| u == v) {
            Some((_, n)) => *n += 1,
            None => counts.push((*v, 1)),
        }
    }
    let (v, n) = counts.into_iter().max_by_key(|&(_, n)| n)?;
    (n as f64 >= BASELINE_AGREEMENT * values.len() as f64).then_some(v)
}

/// The mean, when at least `BASELINE_AGREEMENT` of the values lie within
/// `BASELINE_BAND` of it.
pub fn float_constant(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let near = values.iter().filter(|&&x| (x - mean).abs() <= BASELINE_BAND + 1e-9).count();
    (near as f64 >= BASELINE_AGREEMENT * values.len() as f64).then_some(mean)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum CidClass {
    Bbox,
    Local(usize),
    Outside,
}

fn sequence_macro(name: String, commands: &[Command], occ: &[(&OrderedView, usize)]) -> Macro {
    let mut formals = Vec::new();
    let mut body = Vec::with_capacity(commands.len());
    for (k, &cmd) in commands.iter().enumerate() {
        let mut slots = Vec::new();
        for (s, &dom) in cmd.signature().iter().enumerate() {
            let vals: Vec<ParamValue> = occ.iter().map(|(v, p)| v.lines[p + k].params[s]).collect();
            let fixed = match dom.kind() {
                ParamKind::Cid => {
                    let classes: Vec<ParamValue> = occ
                        .iter()
                        .zip(&vals)
                        .map(|((v, p), val)| {
                            let c = val.as_cid().unwrap_or(CuboidId::BBOX).0;
                            let first = v.next_cuboid[*p];
                            let class = if c == 0 {
                                CidClass::Bbox
                            } else if c >= first {
                                CidClass::Local(c - first)
                            } else {
                                CidClass::Outside
                            };
                            let code = match class {
                                CidClass::Bbox => 0,
                                CidClass::Local(j) => j + 1,
                                CidClass::Outside => usize::MAX,
                            };
                            ParamValue::Cid(CuboidId(code))
                        })
                        .collect();
                    match discrete_constant(&classes) {
                        Some(ParamValue::Cid(CuboidId(0))) => Some(ParamSpec::Const(ParamValue::Cid(CuboidId::BBOX))),
                        Some(ParamValue::Cid(CuboidId(j))) if j != usize::MAX => Some(ParamSpec::LocalCuboid(j - 1)),
                        _ => None,
                    }
                }
                ParamKind::Float => {
                    let xs: Vec<f64> = vals.iter().filter_map(ParamValue::as_float).collect();
                    float_constant(&xs)
                        .map(|m| ParamValue::Float(dom.clamp(m)))
                        .filter(|v| dom.admits(v))
                        .map(ParamSpec::Const)
                }
                _ => discrete_constant(&vals).map(ParamSpec::Const),
            };
            slots.push(fixed.unwrap_or_else(|| {
                formals.push(Formal::new(dom));
                ParamSpec::Formal(formals.len() - 1)
            }));
        }
        body.push(MacroLine { command: cmd, slots });
    }
    Macro {
        name,
        formals,
        body,
        provenance: Vec::new(),
    }
}

/// Builds the baseline library on each program's canonical order and
/// refactors the dataset with it.
pub fn run_baseline(d: &Dataset, search: &SearchConfig) -> BaselineResult {
    let views: Vec<&OrderedView> = (0..d.len()).map(|i| canonical_view(d, i)).collect();
    let mut lib = Library::base();
    for (commands, _) in frequent_sequences(&views, BASELINE_MIN_FREQUENCY) {
        let occ: Vec<(&OrderedView, usize)> = views
            .iter()
            .flat_map(|v| {
                windows(v)
                    .filter(|&(s, l)| l == commands.len() && v.lines[s..s + l].iter().map(|x| x.command).eq(commands.iter().copied()))
                    .map(move |(s, _)| (*v, s))
            })
            .collect();
        let name = format!("b{}", lib.len() - crate::library::NUM_BASE);
        let m = sequence_macro(name, &commands, &occ);
        if m.validate().is_ok() && !lib.contains_key(&m.key()) {
            lib.add_macro(m).expect("validated above");
        }
    }
    let programs = best_programs(d, &lib, search).expect("base functions cover every line");
    let f = objective_of(&lib, &search.weights, &programs);
    BaselineResult { library: lib, programs, f }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{Program, Symbol};

    fn view(text: &str) -> OrderedView {
        let p = Program::parse(text).unwrap();
        OrderedView::new(&p, &(0..p.blocks().len()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn rare_sequences_are_skipped() {
        let common = view("bbox = Cuboid(1,1,1,True)\nc1 = Cuboid(0.1,0.1,0.1,True)\nattach(bbox,0.5,0,0.5,0.5,0,0.5)\n");
        let rare = view("bbox = Cuboid(1,1,1,True)\nc1 = Cuboid(0.1,0.1,0.1,True)\nattach(bbox,0.5,0,0.5,0.5,0,0.5)\nreflect(X)\n");
        let mut views: Vec<&OrderedView> = vec![&common; 91];
        views.extend(vec![&rare; 9]);
        let seqs = frequent_sequences(&views, BASELINE_MIN_FREQUENCY);
        assert_eq!(seqs, vec![(vec![Command::Cuboid, Command::Attach], 100)]);
        views.push(&rare);
        views.push(&rare);
        assert_eq!(frequent_sequences(&views, BASELINE_MIN_FREQUENCY).len(), 2);
    }

    #[test]
    fn agreement_thresholds() {
        let x = ParamValue::Discrete(Symbol::Axis(crate::lang::Axis::X));
        let y = ParamValue::Discrete(Symbol::Axis(crate::lang::Axis::Y));
        let mut vals = vec![x; 19];
        vals.push(y);
        assert_eq!(discrete_constant(&vals), Some(x));
        let mut vals = vec![x; 8];
        vals.extend([y, y]);
        assert_eq!(discrete_constant(&vals), None);

        let uniform: Vec<f64> = (0..=300).map(|i| i as f64 * 0.001).collect();
        assert_eq!(float_constant(&uniform), None);
        let tight = [0.5, 0.52, 0.48, 0.51];
        assert!((float_constant(&tight).unwrap() - 0.5025).abs() < 1e-12);
    }

    #[test]
    fn baseline_beats_nothing_worse_than_base() {
        let progs = (0..10).map(|i| {
            let x = 0.1 + 0.08 * i as f64;
            let text = format!("bbox = Cuboid(1,1,1,True)\nc1 = Cuboid(0.1,0.5,0.1,True)\nattach(bbox,0.5,0,0.5,{x},0,0.5)\n");
            (format!("p{i}"), Program::parse(&text).unwrap())
        });
        let d = Dataset::from_programs(progs, 24).unwrap();
        let cfg = SearchConfig::default();
        let r = run_baseline(&d, &cfg);
        assert_eq!(r.library.len(), 6);
        let b = &r.library.macros()[0];
        assert_eq!(b.formals.len(), 1);
        let base = best_programs(&d, &Library::base(), &cfg).unwrap();
        assert!(r.f <= objective_of(&Library::base(), &cfg.weights, &base));
    }
}
