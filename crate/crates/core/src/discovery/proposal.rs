//! Candidate macros from windows of abstracted programs, and their
//! generalizations.

use std::collections::{BTreeMap, BTreeSet};

use indexmap::IndexMap;
use serde::Serialize;

use crate::dataset::OrderedView;
use crate::lang::{Command, Domain, ParamValue};
use crate::library::{ExpandContext, Formal, LinExpr, Macro, MacroLine, ObjectiveWeights, Operand, ParamSpec};

use super::abstraction::AbstractProgram;
use super::cluster::Member;

pub const MIN_BODY: usize = 2;
pub const MAX_BODY: usize = 6;
pub const MAX_FORMALS: usize = 8;
/// Weighted degrees of freedom a valid macro must remove.
pub const MIN_CONSTRAINED_DOF: f64 = 1.0;

/// Lines of one program view covered by a candidate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Covered {
    pub entry: usize,
    pub view: usize,
    pub start: usize,
    pub len: usize,
}

#[derive(Clone, Debug)]
pub struct CandidateMacro {
    pub function: Macro,
    pub coverage: BTreeSet<Covered>,
    /// Proposal step whose cluster produced it.
    pub cluster: usize,
}

impl CandidateMacro {
    pub fn key(&self) -> String {
        self.function.key()
    }

    /// Distinct programs in the coverage.
    pub fn programs(&self) -> usize {
        let mut e: Vec<usize> = self.coverage.iter().map(|c| c.entry).collect();
        e.dedup();
        e.len()
    }
}

/// Which macros may enter the candidate pool.
#[derive(Clone, Copy, Debug)]
pub struct Validity {
    pub weights: ObjectiveWeights,
    pub enabled: bool,
}

impl Validity {
    pub fn accepts(&self, m: &Macro) -> bool {
        if m.validate().is_err() {
            return false;
        }
        if !self.enabled {
            return true;
        }
        (MIN_BODY..=MAX_BODY).contains(&m.len())
            && m.formals.len() <= MAX_FORMALS
            && m.commands().any(|c| matches!(c, Command::Cuboid | Command::Attach | Command::Squeeze))
            && m.constrained_dof(&self.weights) >= MIN_CONSTRAINED_DOF - 1e-9
    }

    /// Window starts and lengths to consider over a view. Windows begin at
    /// a block's `Cuboid` line; the bbox line is never included.
    pub fn windows(&self, view: &OrderedView) -> Vec<(usize, usize)> {
        let n = view.len();
        let (lo, hi) = if self.enabled { (MIN_BODY, MAX_BODY) } else { (1, MAX_BODY) };
        let mut out = Vec::new();
        for start in 1..n {
            if self.enabled && !view.block_start[start] {
                continue;
            }
            for len in lo..=hi.min(n - start) {
                out.push((start, len));
            }
        }
        out
    }
}

/// Renumbers formals by first occurrence, dropping unused ones.
fn renumber(formals: &[Formal], body: &mut [MacroLine]) -> Vec<Formal> {
    let mut map: BTreeMap<usize, usize> = BTreeMap::new();
    let mut out = Vec::new();
    for line in body.iter_mut() {
        for spec in &mut line.slots {
            match spec {
                ParamSpec::Formal(i) => {
                    let next = map.len();
                    let j = *map.entry(*i).or_insert_with(|| {
                        out.push(formals[*i]);
                        next
                    });
                    *i = j;
                }
                ParamSpec::Lin(e) => {
                    for t in &mut e.terms {
                        if let Operand::Formal(i) = &mut t.operand {
                            *i = map[i];
                        }
                    }
                }
                _ => {}
            }
        }
    }
    out
}

/// The macro for `abs` lines `start..start + len`, relative to the seed view.
pub fn window_macro(abs: &AbstractProgram, seed: &OrderedView, start: usize, len: usize) -> Macro {
    let first_local = seed.next_cuboid[start];
    let end_local = seed.next_cuboid[start + len];
    let mut formals: Vec<Formal> = Vec::new();
    let mut vars: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cids: BTreeMap<usize, usize> = BTreeMap::new();
    let mut body = Vec::with_capacity(len);
    for line in &abs.body[start..start + len] {
        let sig = line.command.signature();
        let mut slots = Vec::with_capacity(line.slots.len());
        for (spec, &dom) in line.slots.iter().zip(sig) {
            let fresh = |formals: &mut Vec<Formal>| {
                formals.push(Formal::new(dom));
                ParamSpec::Formal(formals.len() - 1)
            };
            let s = match spec {
                ParamSpec::Const(ParamValue::Cid(c)) if c.0 != 0 => {
                    if (first_local..end_local).contains(&c.0) {
                        ParamSpec::LocalCuboid(c.0 - first_local)
                    } else if let Some(&i) = cids.get(&c.0) {
                        ParamSpec::Formal(i)
                    } else {
                        let s = fresh(&mut formals);
                        if let ParamSpec::Formal(i) = s {
                            cids.insert(c.0, i);
                        }
                        s
                    }
                }
                ParamSpec::Const(v) => ParamSpec::Const(*v),
                ParamSpec::Formal(u) => {
                    if let Some(&i) = vars.get(u) {
                        ParamSpec::Formal(i)
                    } else {
                        formals.push(abs.formals[*u]);
                        vars.insert(*u, formals.len() - 1);
                        ParamSpec::Formal(formals.len() - 1)
                    }
                }
                ParamSpec::Lin(e) => {
                    let mapped: Option<Vec<(i8, Operand)>> = e
                        .terms
                        .iter()
                        .map(|t| match t.operand {
                            Operand::Formal(u) => vars.get(&u).map(|&i| (t.coef, Operand::Formal(i))),
                            o => Some((t.coef, o)),
                        })
                        .collect();
                    match mapped {
                        Some(terms) => ParamSpec::Lin(LinExpr::new(terms, e.constant)),
                        None => fresh(&mut formals),
                    }
                }
                ParamSpec::LocalCuboid(j) => ParamSpec::LocalCuboid(*j),
            };
            slots.push(s);
        }
        body.push(MacroLine {
            command: line.command,
            slots,
        });
    }
    let formals = renumber(&formals, &mut body);
    Macro {
        name: String::new(),
        formals,
        body,
        provenance: Vec::new(),
    }
}

/// All valid window macros of an abstracted program, each with the cluster
/// members it matches.
pub fn propose_macros(
    abs: &AbstractProgram,
    views: &[&OrderedView],
    members: &[Member],
    function_names: &[String],
    validity: &Validity,
    eps: f64,
    cluster: usize,
) -> Vec<CandidateMacro> {
    let seed = views[0];
    let mut out = Vec::new();
    for (start, len) in validity.windows(seed) {
        let mut m = window_macro(abs, seed, start, len);
        if !validity.accepts(&m) {
            continue;
        }
        let mut prov: Vec<String> = abs
            .segments
            .iter()
            .filter(|s| s.function >= crate::library::NUM_BASE && s.start < start + len && start < s.start + s.len)
            .map(|s| function_names[s.function].clone())
            .collect();
        prov.dedup();
        m.provenance = prov;
        let coverage = views
            .iter()
            .zip(members)
            .filter(|(v, _)| {
                let ctx = ExpandContext {
                    bbox: v.bbox(),
                    next_cuboid: v.next_cuboid[start],
                };
                m.match_at(&v.lines, start, ctx, eps).is_some()
            })
            .map(|(_, mb)| Covered {
                entry: mb.entry,
                view: mb.view,
                start,
                len,
            })
            .collect();
        out.push(CandidateMacro {
            function: m,
            coverage,
            cluster,
        });
    }
    out
}

/// Merges candidates with equal keys, uniting their coverage. The first
/// occurrence keeps its place.
pub fn merge_candidates(cands: impl IntoIterator<Item = CandidateMacro>) -> Vec<CandidateMacro> {
    let mut map: IndexMap<String, CandidateMacro> = IndexMap::new();
    for c in cands {
        match map.entry(c.key()) {
            indexmap::map::Entry::Occupied(mut o) => o.get_mut().coverage.extend(c.coverage),
            indexmap::map::Entry::Vacant(v) => {
                v.insert(c);
            }
        }
    }
    map.into_values().collect()
}

#[derive(Clone, Debug, Default)]
pub struct GeneralizationGraph {
    pub nodes: Vec<CandidateMacro>,
    /// `(specific, general)` node pairs.
    pub edges: Vec<(usize, usize)>,
}

/// Slots holding a constant or an expression.
fn constrained_slots(m: &Macro) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (k, l) in m.body.iter().enumerate() {
        for (s, spec) in l.slots.iter().enumerate() {
            if spec.is_constraint() {
                out.push((k, s));
            }
        }
    }
    out
}

fn combinations(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    fn go(n: usize, k: usize, from: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in from..n {
            cur.push(i);
            go(n, k, i + 1, cur, f);
            cur.pop();
        }
    }
    go(n, k, 0, &mut Vec::new(), &mut f);
}

/// `m` with the given slots turned into new formals.
pub fn free_slots(m: &Macro, slots: &[(usize, usize)]) -> Macro {
    let mut formals = m.formals.clone();
    let mut body = m.body.clone();
    for &(k, s) in slots {
        let dom: Domain = body[k].command.signature()[s];
        formals.push(Formal::new(dom));
        body[k].slots[s] = ParamSpec::Formal(formals.len() - 1);
    }
    let formals = renumber(&formals, &mut body);
    Macro {
        name: m.name.clone(),
        formals,
        body,
        provenance: m.provenance.clone(),
    }
}

/// Adds every macro reachable from each candidate by freeing up to `n_edits`
/// constrained slots. Edges run from specific to general, and coverage of
/// the specific macro is added to each of its generalizations.
pub fn generalize_macros(cands: Vec<CandidateMacro>, n_edits: usize, validity: &Validity) -> GeneralizationGraph {
    let cands = merge_candidates(cands);
    let originals = cands.len();
    let mut index: IndexMap<String, usize> = cands.iter().enumerate().map(|(i, c)| (c.key(), i)).collect();
    let mut nodes = cands;
    let mut edges = BTreeSet::new();
    for o in 0..originals {
        let slots = constrained_slots(&nodes[o].function);
        for k in 1..=n_edits.min(slots.len()) {
            combinations(slots.len(), k, |pick| {
                let chosen: Vec<(usize, usize)> = pick.iter().map(|&i| slots[i]).collect();
                let g = free_slots(&nodes[o].function, &chosen);
                if !validity.accepts(&g) {
                    return;
                }
                let key = g.key();
                let id = match index.get(&key) {
                    Some(&id) => id,
                    None => {
                        nodes.push(CandidateMacro {
                            function: g,
                            coverage: BTreeSet::new(),
                            cluster: nodes[o].cluster,
                        });
                        index.insert(key, nodes.len() - 1);
                        nodes.len() - 1
                    }
                };
                if id != o {
                    edges.insert((o, id));
                }
            });
        }
    }
    let own: Vec<BTreeSet<Covered>> = nodes.iter().map(|n| n.coverage.clone()).collect();
    for &(s, g) in &edges {
        nodes[g].coverage.extend(own[s].iter().copied());
    }
    GeneralizationGraph {
        nodes,
        edges: edges.into_iter().collect(),
    }
}
