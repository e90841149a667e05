//! Best refactored program of a base program under a library.
//!
//! A function covers a run of lines when its body matches them: same
//! commands, exact discrete, boolean and cuboid parameters, continuous
//! parameters within `eps_match`. A call costs `λ_fn` plus the weighted
//! formals of the function plus `λ_ε` times its continuous error.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Entry, OrderedView};
use crate::error::SearchError;
use crate::lang::{Line, ParamValue, Program};
use crate::library::{Call, ExpandContext, Library, Macro, ObjectiveWeights, RefactoredProgram};
use crate::order::OrderingSet;

pub const EXHAUSTIVE_MAX_LINES: usize = 8;
pub const EXHAUSTIVE_MAX_FNS: usize = 8;

const COST_TIE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStrategy {
    #[default]
    Beam,
    /// Expands the partial cover with the lowest normalized cost first and
    /// returns the first complete one.
    BestFirst,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub beam_width: usize,
    pub eps_match: f64,
    pub weights: ObjectiveWeights,
    #[serde(default)]
    pub strategy: SearchStrategy,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            beam_width: 10,
            eps_match: 0.05,
            weights: ObjectiveWeights::default(),
            strategy: SearchStrategy::Beam,
        }
    }
}

/// A function application available at some position.
#[derive(Clone, Debug)]
struct Edge {
    function: usize,
    len: usize,
    args: Vec<ParamValue>,
    error: f64,
    cost: f64,
}

/// Every call that applies at every position of a view. The bounding box
/// line is only covered by single-line functions.
fn edges(view: &OrderedView, lib: &Library, cfg: &SearchConfig) -> Vec<Vec<Edge>> {
    let bbox = view.bbox();
    let w = &cfg.weights;
    (0..view.len())
        .map(|pos| {
            let ctx = ExpandContext {
                bbox,
                next_cuboid: view.next_cuboid[pos],
            };
            lib.functions()
                .iter()
                .enumerate()
                .filter(|(_, m)| pos > 0 || m.len() == 1)
                .filter_map(|(id, m)| {
                    let mt = m.match_at(&view.lines, pos, ctx, cfg.eps_match)?;
                    Some(Edge {
                        function: id,
                        len: m.len(),
                        cost: w.fns + m.dof(w) + w.error * mt.error,
                        args: mt.args,
                        error: mt.error,
                    })
                })
                .collect()
        })
        .collect()
}

/// Cost of one call of `m` on `view.lines[start..start + m.len()]`, if it
/// matches there.
pub fn call_cost_at(m: &Macro, view: &OrderedView, start: usize, cfg: &SearchConfig) -> Option<f64> {
    if start == 0 && m.len() != 1 {
        return None;
    }
    let ctx = ExpandContext {
        bbox: view.bbox(),
        next_cuboid: *view.next_cuboid.get(start)?,
    };
    let mt = m.match_at(&view.lines, start, ctx, cfg.eps_match)?;
    let w = &cfg.weights;
    Some(w.fns + m.dof(w) + w.error * mt.error)
}

/// Cheapest cover of `view.lines[start..start + len]` by calls that stay
/// inside the window.
pub fn window_cover_cost(view: &OrderedView, start: usize, len: usize, lib: &Library, cfg: &SearchConfig) -> Option<f64> {
    if start + len > view.len() {
        return None;
    }
    let mut best = vec![f64::INFINITY; len + 1];
    best[0] = 0.0;
    for a in 0..len {
        if !best[a].is_finite() {
            continue;
        }
        for f in lib.functions() {
            if a + f.len() > len {
                continue;
            }
            if let Some(c) = call_cost_at(f, view, start + a, cfg) {
                let c = best[a] + c;
                if c < best[a + f.len()] {
                    best[a + f.len()] = c;
                }
            }
        }
    }
    best[len].is_finite().then_some(best[len])
}

/// A partial cover of a prefix of the lines.
#[derive(Clone, Debug)]
struct State {
    pos: usize,
    cost: f64,
    error: f64,
    steps: Vec<(usize, usize)>,
    fns: Vec<usize>,
}

impl State {
    fn start() -> State {
        State {
            pos: 0,
            cost: 0.0,
            error: 0.0,
            steps: Vec::new(),
            fns: Vec::new(),
        }
    }

    fn extend(&self, edge_index: usize, e: &Edge) -> State {
        let mut steps = self.steps.clone();
        steps.push((self.pos, edge_index));
        let mut fns = self.fns.clone();
        fns.push(e.function);
        State {
            pos: self.pos + e.len,
            cost: self.cost + e.cost,
            error: self.error + e.error,
            steps,
            fns,
        }
    }

    /// Cost, then continuous error, then number of calls, then function ids.
    fn rank(&self, other: &State) -> Ordering {
        self.rank_cost(other).then_with(|| {
            self.fns
                .len()
                .cmp(&other.fns.len())
                .then_with(|| self.fns.cmp(&other.fns))
        })
    }

    /// Cost, then continuous error, with ties below `COST_TIE`.
    fn rank_cost(&self, other: &State) -> Ordering {
        if (self.cost - other.cost).abs() > COST_TIE {
            return self.cost.total_cmp(&other.cost);
        }
        if (self.error - other.error).abs() > COST_TIE {
            return self.error.total_cmp(&other.error);
        }
        Ordering::Equal
    }

    fn normalized(&self) -> f64 {
        if self.pos == 0 {
            0.0
        } else {
            self.cost / self.pos as f64
        }
    }

    fn into_program(self, view: &OrderedView, edges: &[Vec<Edge>]) -> RefactoredProgram {
        let calls = self
            .steps
            .iter()
            .map(|&(pos, i)| {
                let e = &edges[pos][i];
                Call {
                    function: e.function,
                    args: e.args.clone(),
                    error: e.error,
                }
            })
            .collect();
        RefactoredProgram {
            calls,
            order: view.order.clone(),
            cont_error: self.error,
        }
    }
}

fn beam(edges: &[Vec<Edge>], n: usize, width: usize) -> Option<State> {
    let width = width.max(1);
    let mut best: Vec<Option<State>> = vec![None; n + 1];
    best[0] = Some(State::start());
    let mut frontier = vec![0];
    while !frontier.is_empty() {
        let mut improved: BTreeMap<usize, State> = BTreeMap::new();
        for &pos in &frontier {
            let s = best[pos].clone().expect("frontier positions are reached");
            for (i, e) in edges[pos].iter().enumerate() {
                let ns = s.extend(i, e);
                let np = ns.pos;
                if best[np].as_ref().is_some_and(|b| ns.rank(b) != Ordering::Less) {
                    continue;
                }
                if improved.get(&np).is_some_and(|b| ns.rank(b) != Ordering::Less) {
                    continue;
                }
                improved.insert(np, ns);
            }
        }
        let mut next: Vec<&State> = improved.values().filter(|s| s.pos < n).collect();
        next.sort_by(|a, b| a.normalized().total_cmp(&b.normalized()).then_with(|| a.rank(b)));
        frontier = next.iter().take(width).map(|s| s.pos).collect();
        for (np, s) in improved {
            best[np] = Some(s);
        }
    }
    best[n].take()
}

struct Queued(State);

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // Reversed so the max-heap pops the cheapest state.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .normalized()
            .total_cmp(&self.0.normalized())
            .then_with(|| other.0.rank(&self.0))
    }
}

fn best_first(edges: &[Vec<Edge>], n: usize) -> Option<State> {
    let mut heap = BinaryHeap::new();
    heap.push(Queued(State::start()));
    let mut done = vec![false; n + 1];
    while let Some(Queued(s)) = heap.pop() {
        if done[s.pos] {
            continue;
        }
        done[s.pos] = true;
        if s.pos == n {
            return Some(s);
        }
        for (i, e) in edges[s.pos].iter().enumerate() {
            let ns = s.extend(i, e);
            if !done[ns.pos] {
                heap.push(Queued(ns));
            }
        }
    }
    None
}

fn exhaustive(edges: &[Vec<Edge>], n: usize) -> Option<State> {
    fn rec(s: State, edges: &[Vec<Edge>], n: usize, best: &mut Option<State>) {
        if s.pos == n {
            if best.as_ref().is_none_or(|b| s.rank(b) == Ordering::Less) {
                *best = Some(s);
            }
            return;
        }
        for (i, e) in edges[s.pos].iter().enumerate() {
            rec(s.extend(i, e), edges, n, best);
        }
    }
    let mut best = None;
    rec(State::start(), edges, n, &mut best);
    best
}

fn search_view(
    view: &OrderedView,
    lib: &Library,
    cfg: &SearchConfig,
    exact: bool,
) -> Result<(State, RefactoredProgram), SearchError> {
    let es = edges(view, lib, cfg);
    let n = view.len();
    let found = if exact {
        exhaustive(&es, n)
    } else {
        match cfg.strategy {
            SearchStrategy::Beam => beam(&es, n, cfg.beam_width),
            SearchStrategy::BestFirst => best_first(&es, n),
        }
    };
    let s = found.ok_or(SearchError::NoCover(0))?;
    let rp = s.clone().into_program(view, &es);
    Ok((s, rp))
}

fn best_over_views<'a>(
    views: impl IntoIterator<Item = &'a OrderedView>,
    lib: &Library,
    cfg: &SearchConfig,
    exact: bool,
) -> Result<RefactoredProgram, SearchError> {
    let mut best: Option<(State, RefactoredProgram)> = None;
    for v in views {
        let (s, rp) = search_view(v, lib, cfg, exact)?;
        let better = match &best {
            None => true,
            Some((bs, brp)) => match s.rank_cost(bs) {
                Ordering::Less => true,
                Ordering::Equal => rp.order < brp.order,
                Ordering::Greater => false,
            },
        };
        if better {
            best = Some((s, rp));
        }
    }
    best.map(|(_, rp)| rp).ok_or(SearchError::NoOrders)
}

fn views_of(p: &Program, orders: &OrderingSet) -> Result<Vec<OrderedView>, SearchError> {
    orders
        .orders()
        .iter()
        .map(|o| OrderedView::new(p, o).map_err(SearchError::from))
        .collect()
}

/// Best refactoring of `p` across its orders. Ties between orders go to the
/// most canonical one.
pub fn best_program(
    p: &Program,
    orders: &OrderingSet,
    lib: &Library,
    cfg: &SearchConfig,
) -> Result<RefactoredProgram, SearchError> {
    best_over_views(&views_of(p, orders)?, lib, cfg, false)
}

pub fn best_for_entry(e: &Entry, lib: &Library, cfg: &SearchConfig) -> Result<RefactoredProgram, SearchError> {
    best_over_views(e.views(), lib, cfg, false)
}

/// Best refactoring under each order of an entry, in view order.
pub fn best_per_order(e: &Entry, lib: &Library, cfg: &SearchConfig) -> Result<Vec<RefactoredProgram>, SearchError> {
    e.views()
        .iter()
        .map(|v| search_view(v, lib, cfg, false).map(|(_, rp)| rp))
        .collect()
}

/// Refactors a single ordered view.
pub fn refactor_view(view: &OrderedView, lib: &Library, cfg: &SearchConfig) -> Result<RefactoredProgram, SearchError> {
    search_view(view, lib, cfg, false).map(|(_, rp)| rp)
}

/// Best programs for a whole dataset, searched in parallel.
pub fn best_programs(d: &Dataset, lib: &Library, cfg: &SearchConfig) -> Result<Vec<RefactoredProgram>, SearchError> {
    d.entries()
        .par_iter()
        .map(|e| best_for_entry(e, lib, cfg))
        .collect()
}

/// Exact optimum by enumerating every covering under every order.
pub fn exhaustive_best(
    p: &Program,
    orders: &OrderingSet,
    lib: &Library,
    cfg: &SearchConfig,
) -> Result<RefactoredProgram, SearchError> {
    if p.num_lines() > EXHAUSTIVE_MAX_LINES || lib.len() > EXHAUSTIVE_MAX_FNS {
        return Err(SearchError::TooLarge {
            lines: p.num_lines(),
            fns: lib.len(),
            max_lines: EXHAUSTIVE_MAX_LINES,
            max_fns: EXHAUSTIVE_MAX_FNS,
        });
    }
    best_over_views(&views_of(p, orders)?, lib, cfg, true)
}

/// Checks that a refactoring expands to the lines of `p` under its order:
/// same commands, exact discrete parameters, continuous ones within `eps`.
pub fn verify_refactoring(p: &Program, rp: &RefactoredProgram, lib: &Library, eps: f64) -> Result<(), String> {
    let q = p.reorder(&rp.order).map_err(|e| e.to_string())?;
    let want = q.lines();
    let got = rp.expand(lib).map_err(|e| e.to_string())?;
    if want.len() != got.len() {
        return Err(format!("{} lines expanded, {} expected", got.len(), want.len()));
    }
    for (i, (a, b)) in got.iter().zip(&want).enumerate() {
        if !lines_match(a, b, eps) {
            return Err(format!("line {i} differs: {a:?} vs {b:?}"));
        }
    }
    Ok(())
}

fn lines_match(a: &Line, b: &Line, eps: f64) -> bool {
    a.command == b.command
        && a.params.iter().zip(&b.params).all(|(x, y)| match (x, y) {
            (ParamValue::Float(x), ParamValue::Float(y)) => (x - y).abs() <= eps + 1e-9,
            _ => x == y,
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{count_params, Command, Domain};
    use crate::library::{Formal, Macro, MacroLine, ParamSpec};
    use crate::order::enumerate_valid_orders;

    const TABLE: &str = "bbox = Cuboid(1,1,1,True)\n\
                         c1 = Cuboid(1,0.1,1,True)\n\
                         attach(bbox,0.5,1,0.5,0.5,1,0.5)\n\
                         c2 = Cuboid(0.1,0.9,0.1,True)\n\
                         attach(bbox,0.5,0,0.5,0.1,0,0.1)\n\
                         reflect(X)\n";

    fn leg_macro() -> Macro {
        // The whole leg block with every parameter fixed except the attach
        // position on the box.
        let f = |x: f64| ParamSpec::Const(ParamValue::Float(x));
        Macro {
            name: "leg".into(),
            formals: vec![Formal::new(Domain::Unit), Formal::new(Domain::Unit)],
            body: vec![
                MacroLine {
                    command: Command::Cuboid,
                    slots: vec![f(0.1), f(0.9), f(0.1), ParamSpec::Const(ParamValue::Bool(true))],
                },
                MacroLine {
                    command: Command::Attach,
                    slots: vec![
                        ParamSpec::Const(ParamValue::Cid(crate::lang::CuboidId::BBOX)),
                        f(0.5),
                        f(0.0),
                        f(0.5),
                        ParamSpec::Formal(0),
                        f(0.0),
                        ParamSpec::Formal(1),
                    ],
                },
                MacroLine {
                    command: Command::Reflect,
                    slots: vec![ParamSpec::Const(ParamValue::Discrete(crate::lang::Symbol::Axis(
                        crate::lang::Axis::X,
                    )))],
                },
            ],
            provenance: vec![],
        }
    }

    fn setup() -> (Program, OrderingSet) {
        let p = Program::parse(TABLE).unwrap();
        let os = enumerate_valid_orders(&p, 24).unwrap();
        (p, os)
    }

    #[test]
    fn base_library_covers_line_by_line() {
        let (p, os) = setup();
        let lib = Library::base();
        let cfg = SearchConfig::default();
        let rp = best_program(&p, &os, &lib, &cfg).unwrap();
        assert_eq!(rp.calls.len(), p.num_lines());
        assert_eq!(rp.cont_error, 0.0);
        assert_eq!(rp.order, vec![0, 1]);
        assert_eq!(rp.counts(&lib), count_params(&p));
        verify_refactoring(&p, &rp, &lib, 0.0).unwrap();
        assert_eq!(exhaustive_best(&p, &os, &lib, &cfg).unwrap(), rp);
    }

    #[test]
    fn planted_macro_is_used() {
        let (p, os) = setup();
        let mut lib = Library::base();
        lib.add_macro(leg_macro()).unwrap();
        let cfg = SearchConfig::default();
        let rp = best_program(&p, &os, &lib, &cfg).unwrap();
        assert_eq!(rp.calls.len(), 4);
        assert_eq!(rp.calls.last().unwrap().function, 5);
        let base = best_program(&p, &os, &Library::base(), &cfg).unwrap();
        let w = &cfg.weights;
        assert!(rp.cost(&lib, w) < base.cost(&Library::base(), w));
        assert_eq!(exhaustive_best(&p, &os, &lib, &cfg).unwrap(), rp);
        verify_refactoring(&p, &rp, &lib, cfg.eps_match).unwrap();
    }

    #[test]
    fn tolerance_blocks_far_constants() {
        let text = TABLE.replace("Cuboid(0.1,0.9,0.1,True)", "Cuboid(0.16,0.9,0.1,True)");
        let p = Program::parse(&text).unwrap();
        let os = enumerate_valid_orders(&p, 24).unwrap();
        let mut lib = Library::base();
        lib.add_macro(leg_macro()).unwrap();
        let rp = best_program(&p, &os, &lib, &SearchConfig::default()).unwrap();
        assert!(rp.calls.iter().all(|c| c.function < 5));
        let near = TABLE.replace("Cuboid(0.1,0.9,0.1,True)", "Cuboid(0.14,0.9,0.1,True)");
        let p = Program::parse(&near).unwrap();
        let rp = best_program(&p, &os, &lib, &SearchConfig::default()).unwrap();
        assert!(rp.calls.iter().any(|c| c.function == 5));
        assert!((rp.cont_error - 0.04).abs() < 1e-9);
    }

    #[test]
    fn window_cover_prefers_the_macro() {
        let p = Program::parse(TABLE).unwrap();
        let view = OrderedView::new(&p, &[0, 1]).unwrap();
        let cfg = SearchConfig::default();
        let base = window_cover_cost(&view, 3, 3, &Library::base(), &cfg).unwrap();
        let own = call_cost_at(&leg_macro(), &view, 3, &cfg).unwrap();
        assert!(own < base);
        let mut lib = Library::base();
        lib.add_macro(leg_macro()).unwrap();
        assert_eq!(window_cover_cost(&view, 3, 3, &lib, &cfg), Some(own));
        assert_eq!(window_cover_cost(&view, 4, 3, &lib, &cfg), None);
        assert_eq!(call_cost_at(&leg_macro(), &view, 1, &cfg), None);
    }

    #[test]
    fn single_line_program() {
        let p = Program::parse("bbox = Cuboid(1,1,1,True)").unwrap();
        let os = enumerate_valid_orders(&p, 24).unwrap();
        let rp = exhaustive_best(&p, &os, &Library::base(), &SearchConfig::default()).unwrap();
        assert_eq!(rp.calls.len(), 1);
        assert_eq!(rp.calls[0].function, 0);
    }

    #[test]
    fn exhaustive_refuses_large_inputs() {
        let (p, os) = setup();
        let mut lib = Library::base();
        for i in 0..4 {
            let mut m = leg_macro();
            m.name = format!("leg{i}");
            lib.add_macro(m).unwrap();
        }
        assert!(matches!(
            exhaustive_best(&p, &os, &lib, &SearchConfig::default()),
            Err(SearchError::TooLarge { .. })
        ));
    }

    #[test]
    fn best_first_finds_a_cover() {
        let (p, os) = setup();
        let mut lib = Library::base();
        lib.add_macro(leg_macro()).unwrap();
        let cfg = SearchConfig {
            strategy: SearchStrategy::BestFirst,
            ..Default::default()
        };
        let rp = best_program(&p, &os, &lib, &cfg).unwrap();
        verify_refactoring(&p, &rp, &lib, cfg.eps_match).unwrap();
    }
}
