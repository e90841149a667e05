//! Ranking candidates by expected objective savings.

use serde::Serialize;

use crate::dataset::Dataset;
use crate::lang::{Command, ParamKind, ParamValue};
use crate::library::{Library, Macro, ObjectiveWeights, Operand, ParamSpec};
use crate::search::{call_cost_at, window_cover_cost, SearchConfig};

use super::affine::Affine;
use super::proposal::CandidateMacro;

#[derive(Clone, Debug, PartialEq)]
enum Sym {
    Exact(ParamValue),
    Var(usize),
    Aff(Affine),
    Local(usize),
}

impl Sym {
    fn same(&self, other: &Sym) -> bool {
        match (self, other) {
            (Sym::Aff(a), Sym::Aff(b)) => a.approx_eq(b),
            (a, b) => a == b,
        }
    }
}

fn sym_of(m: &Macro, spec: &ParamSpec) -> Sym {
    let formal = |i: usize| Some(Affine::operand(Operand::Formal(i)));
    match spec {
        ParamSpec::Const(ParamValue::Float(x)) => Sym::Aff(Affine::constant(*x)),
        ParamSpec::Const(v) => Sym::Exact(*v),
        ParamSpec::Formal(i) if m.formals[*i].kind == ParamKind::Float => Sym::Aff(Affine::operand(Operand::Formal(*i))),
        ParamSpec::Formal(i) => Sym::Var(*i),
        ParamSpec::Lin(e) => Sym::Aff(Affine::of_lin(e, formal).expect("formal operands resolve")),
        ParamSpec::LocalCuboid(j) => Sym::Local(*j),
    }
}

/// Whether every output of `m` on lines `at..at + f.len()` can also be
/// produced by some call of `f`.
pub fn generalizes_at(f: &Macro, m: &Macro, at: usize) -> bool {
    let Some(lines) = m.body.get(at..at + f.len()) else {
        return false;
    };
    if lines.iter().zip(&f.body).any(|(a, b)| a.command != b.command) {
        return false;
    }
    let offset = m.body[..at].iter().filter(|l| l.command == Command::Cuboid).count();
    let mut bound: Vec<Option<Sym>> = vec![None; f.formals.len()];
    for (ml, fl) in lines.iter().zip(&f.body) {
        for (ms, fs) in ml.slots.iter().zip(&fl.slots) {
            let s = sym_of(m, ms);
            let ok = match fs {
                ParamSpec::Formal(i) => match &bound[*i] {
                    Some(b) => b.same(&s),
                    None => {
                        let admits = match &s {
                            Sym::Exact(v) => f.formals[*i].domain.admits(v),
                            Sym::Aff(a) if a.terms.is_empty() => f.formals[*i].domain.admits(&ParamValue::Float(a.constant)),
                            _ => true,
                        };
                        bound[*i] = Some(s);
                        admits
                    }
                },
                ParamSpec::Const(_) => sym_of(f, fs).same(&s),
                ParamSpec::Lin(e) => Affine::of_lin(e, |i| match &bound[i] {
                    Some(Sym::Aff(a)) => Some(a.clone()),
                    _ => None,
                })
                .is_some_and(|a| Sym::Aff(a).same(&s)),
                ParamSpec::LocalCuboid(j) => s == Sym::Local(offset + j),
            };
            if !ok {
                return false;
            }
        }
    }
    true
}

/// Cost of the cheapest sequence of library functions that together
/// generalize the body of `m`: `Σ (λ_fn + dof)` over the calls.
pub fn cover_cost(m: &Macro, lib: &Library, w: &ObjectiveWeights) -> f64 {
    let n = m.len();
    let mut best = vec![f64::INFINITY; n + 1];
    best[0] = 0.0;
    for a in 0..n {
        if !best[a].is_finite() {
            continue;
        }
        for f in lib.functions() {
            let l = f.len();
            if a + l <= n && generalizes_at(f, m, a) {
                let c = best[a] + w.fns + f.dof(w);
                if c < best[a + l] {
                    best[a + l] = c;
                }
            }
        }
    }
    best[n]
}

/// Weighted parameters saved by one call of `m` over the cheapest
/// equivalent or more general cover by `lib`.
pub fn gain(m: &Macro, lib: &Library, w: &ObjectiveWeights) -> f64 {
    (cover_cost(m, lib, w) - (w.fns + m.dof(w))).max(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ranked {
    pub index: usize,
    pub score: f64,
    pub gain: f64,
    pub frequency: f64,
}

pub fn score(c: &CandidateMacro, lib: &Library, num_programs: usize, w: &ObjectiveWeights) -> Ranked {
    let frequency = if num_programs == 0 {
        0.0
    } else {
        c.programs() as f64 / num_programs as f64
    };
    let g = if frequency > 0.0 { gain(&c.function, lib, w) } else { 0.0 };
    Ranked {
        index: 0,
        score: frequency * g,
        gain: g,
        frequency,
    }
}

/// Occurrences sampled when measuring gain on concrete lines.
pub const MAX_GAIN_SAMPLES: usize = 32;

/// Mean saving of `c` over the cheapest cover of its covered lines by `lib`,
/// measured on up to [`MAX_GAIN_SAMPLES`] evenly spaced occurrences.
pub fn occurrence_gain(c: &CandidateMacro, d: &Dataset, lib: &Library, cfg: &SearchConfig) -> f64 {
    let n = c.coverage.len();
    if n == 0 {
        return 0.0;
    }
    let k = n.min(MAX_GAIN_SAMPLES);
    let items: Vec<_> = c.coverage.iter().collect();
    let mut total = 0.0;
    for t in 0..k {
        let cov = items[t * n / k];
        let Some(view) = d.get(cov.entry).and_then(|e| e.views().get(cov.view)) else {
            continue;
        };
        let own = call_cost_at(&c.function, view, cov.start, cfg);
        let cover = window_cover_cost(view, cov.start, cov.len, lib, cfg);
        if let (Some(own), Some(cover)) = (own, cover) {
            total += (cover - own).max(0.0);
        }
    }
    total / k as f64
}

/// [`score`] with the gain measured on covered lines instead of symbolically.
pub fn occurrence_score(c: &CandidateMacro, d: &Dataset, lib: &Library, num_programs: usize, cfg: &SearchConfig) -> Ranked {
    let frequency = if num_programs == 0 {
        0.0
    } else {
        c.programs() as f64 / num_programs as f64
    };
    let g = if frequency > 0.0 { occurrence_gain(c, d, lib, cfg) } else { 0.0 };
    Ranked {
        index: 0,
        score: frequency * g,
        gain: g,
        frequency,
    }
}

/// Candidates ordered by `p · g`, highest first; ties by macro key.
pub fn rank_candidates(cands: &[CandidateMacro], lib: &Library, num_programs: usize, w: &ObjectiveWeights) -> Vec<Ranked> {
    let keys: Vec<String> = cands.iter().map(CandidateMacro::key).collect();
    let mut out: Vec<Ranked> = cands
        .iter()
        .enumerate()
        .map(|(i, c)| Ranked {
            index: i,
            ..score(c, lib, num_programs, w)
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| keys[a.index].cmp(&keys[b.index])));
    out
}
