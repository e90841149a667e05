//! Abstracted programs: one parameterization shared by a whole cluster, with
//! constants, reused variables and linear relations where the members agree.

use crate::dataset::OrderedView;
use crate::lang::{Axis, Command, CuboidId, Domain, ParamKind, ParamValue};
use crate::library::{ExpandContext, Formal, Library, Macro, MacroLine, ObjectiveWeights, Operand, ParamSpec};

use super::affine::Affine;

const SLACK: f64 = 1e-9;

/// A library call chosen by the greedy cover.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub function: usize,
    pub start: usize,
    pub len: usize,
}

/// The cluster's lines with every slot written as a [`ParamSpec`]. Cuboid
/// references are absolute ids; formals are the shared variables.
#[derive(Clone, Debug)]
pub struct AbstractProgram {
    pub formals: Vec<Formal>,
    pub body: Vec<MacroLine>,
    pub segments: Vec<Segment>,
    /// Value of each variable in each member.
    pub values: Vec<Vec<ParamValue>>,
}

impl AbstractProgram {
    pub fn len(&self) -> usize {
        self.body.len()
    }

    pub fn is_empty(&self) -> bool {
        self.body.is_empty()
    }

    pub fn num_free(&self) -> usize {
        self.formals.len()
    }

    /// The whole program as one macro, expandable with `next_cuboid = 0`.
    pub fn as_macro(&self, name: &str) -> Macro {
        Macro {
            name: name.to_string(),
            formals: self.formals.clone(),
            body: self.body.clone(),
            provenance: Vec::new(),
        }
    }
}

/// Members that must satisfy a choice: `ceil(p · m)`, at least one.
pub fn required_support(p: f64, m: usize) -> usize {
    ((p * m as f64) - 1e-9).ceil().max(1.0) as usize
}

#[derive(Clone, Debug)]
enum Abs {
    Fixed(ParamValue),
    Var(usize),
    Aff(Affine),
}

struct Builder<'a> {
    views: &'a [&'a OrderedView],
    required: usize,
    eps: f64,
    allow_bbox: bool,
    formals: Vec<Formal>,
    values: Vec<Vec<ParamValue>>,
}

fn close(a: f64, b: f64, eps: f64) -> bool {
    (a - b).abs() <= eps + SLACK
}

/// Rounds constants to a 1e-6 grid so equal inputs give equal outputs.
fn quantize(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

impl Builder<'_> {
    fn new_var(&mut self, domain: Domain, vals: Vec<ParamValue>) -> usize {
        self.formals.push(Formal::new(domain));
        self.values.push(vals);
        self.formals.len() - 1
    }

    fn floats(vals: &[ParamValue]) -> Vec<f64> {
        vals.iter().map(|v| v.as_float().unwrap_or(f64::NAN)).collect()
    }

    fn operand_values(&self, o: Operand) -> Vec<f64> {
        match o {
            Operand::Formal(u) => Self::floats(&self.values[u]),
            Operand::BboxDim(a) => self.views.iter().map(|v| v.bbox()[a.index()]).collect(),
        }
    }

    fn abstract_discrete(&mut self, dom: Domain, vals: Vec<ParamValue>) -> Abs {
        let mut best: Option<(ParamValue, usize)> = None;
        for v in &vals {
            let n = vals.iter().filter(|w| *w == v).count();
            if best.is_none_or(|(_, b)| n > b) {
                best = Some((*v, n));
            }
        }
        if let Some((v, n)) = best {
            if n >= self.required {
                return Abs::Fixed(v);
            }
        }
        let reuse = (0..self.formals.len())
            .filter(|&u| self.formals[u].domain == dom)
            .map(|u| (u, self.values[u].iter().zip(&vals).filter(|(a, b)| a == b).count()))
            .filter(|&(_, n)| n >= self.required)
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)));
        if let Some((u, _)) = reuse {
            return Abs::Var(u);
        }
        Abs::Var(self.new_var(dom, vals))
    }

    fn count_fit(&self, dom: Domain, xs: &[f64], pred: impl Fn(usize) -> f64) -> usize {
        xs.iter()
            .enumerate()
            .filter(|&(m, &x)| close(dom.clamp(pred(m)), x, self.eps))
            .count()
    }

    fn abstract_float(&mut self, dom: Domain, vals: Vec<ParamValue>) -> Abs {
        let xs = Self::floats(&vals);
        let mut center: Option<(f64, usize)> = None;
        for &c in &xs {
            let n = xs.iter().filter(|&&x| close(x, c, self.eps)).count();
            if center.is_none_or(|(_, b)| n > b) {
                center = Some((c, n));
            }
        }
        if let Some((c, n)) = center {
            let inl: Vec<f64> = xs.iter().copied().filter(|&x| close(x, c, self.eps)).collect();
            let mean = quantize(inl.iter().sum::<f64>() / inl.len() as f64);
            if dom.admits(&ParamValue::Float(mean)) && xs.iter().filter(|&&x| close(x, mean, self.eps)).count() >= self.required {
                return Abs::Aff(Affine::constant(mean));
            }
            if n >= self.required {
                return Abs::Aff(Affine::constant(c));
            }
        }

        let float_vars: Vec<usize> = (0..self.formals.len())
            .filter(|&u| self.formals[u].kind == ParamKind::Float)
            .collect();
        let mut reuse: Option<(usize, usize)> = None;
        for &u in &float_vars {
            if self.formals[u].domain != dom {
                continue;
            }
            let us = Self::floats(&self.values[u]);
            let n = xs.iter().zip(&us).filter(|(x, y)| close(**x, **y, self.eps)).count();
            if n >= self.required && reuse.is_none_or(|(_, b)| n > b) {
                reuse = Some((u, n));
            }
        }
        if let Some((u, _)) = reuse {
            return Abs::Aff(Affine::operand(Operand::Formal(u)));
        }

        let mut forms: Vec<Vec<(i32, Operand)>> = Vec::new();
        for &u in &float_vars {
            for s in [1, -1] {
                forms.push(vec![(s, Operand::Formal(u))]);
            }
        }
        let axes: &[Axis] = if self.allow_bbox { &Axis::ALL } else { &[] };
        for &a in axes {
            for s in [1, -1] {
                forms.push(vec![(s, Operand::BboxDim(a))]);
            }
        }
        for &u in &float_vars {
            for &a in axes {
                for s1 in [1, -1] {
                    for s2 in [1, -1] {
                        forms.push(vec![(s1, Operand::Formal(u)), (s2, Operand::BboxDim(a))]);
                    }
                }
            }
        }
        let mut best: Option<(Affine, usize)> = None;
        for form in forms {
            let cols: Vec<(i32, Vec<f64>)> = form.iter().map(|&(s, o)| (s, self.operand_values(o))).collect();
            let base: Vec<f64> = (0..xs.len())
                .map(|m| cols.iter().map(|(s, c)| f64::from(*s) * c[m]).sum())
                .collect();
            let mut resid: Vec<f64> = xs.iter().zip(&base).map(|(x, b)| x - b).collect();
            let c = quantize(median(&mut resid));
            if !c.is_finite() {
                continue;
            }
            let n = self.count_fit(dom, &xs, |m| base[m] + c);
            if n >= self.required && best.as_ref().is_none_or(|(_, b)| n > *b) {
                let mut a = Affine::constant(c);
                for &(s, o) in &form {
                    a.add_scaled(&Affine::operand(o), s);
                }
                best = Some((a, n));
            }
        }
        if let Some((a, _)) = best {
            return Abs::Aff(a);
        }
        Abs::Aff(Affine::operand(Operand::Formal(self.new_var(dom, vals))))
    }

    fn spec_of_affine(&self, a: &Affine, dom: Domain) -> Option<ParamSpec> {
        if a.constant.abs() <= 1e-12 && a.terms.len() == 1 {
            if let Some((&Operand::Formal(u), &1)) = a.terms.iter().next() {
                if self.formals[u].domain == dom {
                    return Some(ParamSpec::Formal(u));
                }
            }
        }
        a.to_spec(dom)
    }
}

/// Builds the abstracted program of a cluster. `views[0]` is the seed; all
/// views share the seed's commands and cuboid references.
pub fn find_abstracted_program(
    views: &[&OrderedView],
    lib: &Library,
    p_thresh: f64,
    eps: f64,
    w: &ObjectiveWeights,
) -> AbstractProgram {
    assert!(!views.is_empty(), "cluster must be nonempty");
    let seed = views[0];
    let mut b = Builder {
        views,
        required: required_support(p_thresh, views.len()),
        eps,
        allow_bbox: false,
        formals: Vec::new(),
        values: Vec::new(),
    };
    let mut order: Vec<usize> = (0..lib.len()).collect();
    order.sort_by(|&a, &c| {
        let (fa, fc) = (&lib.functions()[a], &lib.functions()[c]);
        fc.constrained_dof(w).total_cmp(&fa.constrained_dof(w)).then(a.cmp(&c))
    });
    let ctx = |v: &OrderedView, pos: usize| ExpandContext {
        bbox: v.bbox(),
        next_cuboid: v.next_cuboid[pos],
    };

    let mut body = Vec::with_capacity(seed.len());
    let mut segments = Vec::new();
    let mut pos = 0;
    while pos < seed.len() {
        let fid = order
            .iter()
            .copied()
            .find(|&f| {
                let m = &lib.functions()[f];
                if pos == 0 && m.len() != 1 {
                    return false;
                }
                let Some(window) = seed.lines.get(pos..pos + m.len()) else {
                    return false;
                };
                if window.iter().zip(m.commands()).any(|(l, c)| l.command != c) {
                    return false;
                }
                views
                    .iter()
                    .filter(|v| m.match_at(&v.lines, pos, ctx(v, pos), eps).is_some())
                    .count()
                    >= b.required
            })
            .unwrap_or_else(|| lib.position(seed.lines[pos].command.name()).expect("base function"));
        let f = &lib.functions()[fid];
        b.allow_bbox = pos > 0;
        let binds: Vec<Vec<ParamValue>> = views
            .iter()
            .map(|v| f.bind_at(&v.lines, pos, ctx(v, pos)).expect("commands agree").args)
            .collect();
        let abs: Vec<Abs> = f
            .formals
            .iter()
            .enumerate()
            .map(|(i, formal)| {
                let vals: Vec<ParamValue> = binds.iter().map(|a| a[i]).collect();
                if formal.kind == ParamKind::Float {
                    b.abstract_float(formal.domain, vals)
                } else {
                    b.abstract_discrete(formal.domain, vals)
                }
            })
            .collect();
        let next = seed.next_cuboid[pos];
        for (k, ml) in f.body.iter().enumerate() {
            let sig = ml.command.signature();
            let mut slots = Vec::with_capacity(ml.slots.len());
            for (s, (spec, &dom)) in ml.slots.iter().zip(sig).enumerate() {
                let composed = match spec {
                    ParamSpec::Const(v) => Some(ParamSpec::Const(*v)),
                    ParamSpec::LocalCuboid(j) => Some(ParamSpec::Const(ParamValue::Cid(CuboidId(next + j)))),
                    ParamSpec::Formal(i) => match &abs[*i] {
                        Abs::Fixed(v) => Some(ParamSpec::Const(*v)),
                        Abs::Var(u) => Some(ParamSpec::Formal(*u)),
                        Abs::Aff(a) => b.spec_of_affine(a, dom),
                    },
                    ParamSpec::Lin(e) => Affine::of_lin(e, |i| match &abs[i] {
                        Abs::Aff(a) => Some(a.clone()),
                        _ => None,
                    })
                    .and_then(|a| b.spec_of_affine(&a, dom)),
                };
                let spec = composed.unwrap_or_else(|| {
                    let vals = views.iter().map(|v| v.lines[pos + k].params[s]).collect();
                    ParamSpec::Formal(b.new_var(dom, vals))
                });
                slots.push(spec);
            }
            body.push(MacroLine {
                command: ml.command,
                slots,
            });
        }
        segments.push(Segment {
            function: fid,
            start: pos,
            len: f.len(),
        });
        pos += f.len();
    }
    debug_assert!(body.iter().all(|l| l.command != Command::Cuboid || l.slots.len() == 4));
    AbstractProgram {
        formals: b.formals,
        body,
        segments,
        values: b.values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::OrderedView;
    use crate::lang::{Line, Program};

    fn views_of(texts: &[String]) -> Vec<OrderedView> {
        texts
            .iter()
            .map(|t| {
                let p = Program::parse(t).unwrap();
                let order: Vec<usize> = (0..p.blocks().len()).collect();
                OrderedView::new(&p, &order).unwrap()
            })
            .collect()
    }

    fn abstracted(texts: &[String]) -> (AbstractProgram, Vec<OrderedView>) {
        let views = views_of(texts);
        let refs: Vec<&OrderedView> = views.iter().collect();
        let a = find_abstracted_program(&refs, &Library::base(), 0.7, 0.05, &ObjectiveWeights::default());
        (a, views)
    }

    fn legs(w: f64) -> String {
        let mut s = "bbox = Cuboid(1,1,1,True)\n".to_string();
        for (i, (x, z)) in [(0.1, 0.1), (0.9, 0.1), (0.1, 0.9), (0.9, 0.9)].iter().enumerate() {
            s.push_str(&format!("c{} = Cuboid({w},0.5,0.1,True)\nattach(bbox,0.5,0,0.5,{x},0,{z})\n", i + 1));
        }
        s
    }

    #[test]
    fn identical_members_give_constants_only() {
        let (a, views) = abstracted(&[legs(0.1), legs(0.1), legs(0.1)]);
        assert_eq!(a.num_free(), 0);
        let lines = a.as_macro("p").expand(&[], ExpandContext { bbox: [1.0; 3], next_cuboid: 0 }).unwrap();
        assert_eq!(lines, views[0].lines);
    }

    #[test]
    fn shared_leg_width_becomes_one_variable() {
        let (a, _) = abstracted(&[legs(0.05), legs(0.15), legs(0.25)]);
        assert_eq!(a.num_free(), 1);
        assert_eq!(a.formals[0].kind, ParamKind::Float);
        let refs = a
            .body
            .iter()
            .flat_map(|l| &l.slots)
            .filter(|s| **s == ParamSpec::Formal(0))
            .count();
        assert_eq!(refs, 4);
    }

    #[test]
    fn table_heights_sum_to_the_box() {
        let table = |h: f64, base: f64| {
            format!(
                "bbox = Cuboid(1,{h},1,True)\n\
                 c1 = Cuboid(0.3,{base},0.3,True)\nattach(bbox,0.5,0,0.5,0.5,0,0.5)\n\
                 c2 = Cuboid(1,{},1,True)\nattach(bbox,0.5,1,0.5,0.5,1,0.5)\n",
                h - base
            )
        };
        let texts = [table(1.0, 0.3), table(1.4, 0.5), table(0.8, 0.6), table(1.2, 0.2)];
        let (a, _) = abstracted(&texts);
        let top_h = &a.body[3].slots[1];
        let ParamSpec::Lin(e) = top_h else {
            panic!("expected a linear relation, got {top_h:?}");
        };
        let mut terms: Vec<(i8, Operand)> = e.terms.iter().map(|t| (t.coef, t.operand)).collect();
        terms.sort();
        let base_var = match a.body[1].slots[1] {
            ParamSpec::Formal(u) => u,
            ref s => panic!("base height should be free, got {s:?}"),
        };
        assert_eq!(terms, vec![(-1, Operand::Formal(base_var)), (1, Operand::BboxDim(Axis::Y))]);
        assert!(e.constant.abs() < 1e-9);
    }

    #[test]
    fn bbox_line_uses_single_line_functions() {
        let (a, _) = abstracted(&[legs(0.1)]);
        assert_eq!(a.segments[0], Segment { function: 0, start: 0, len: 1 });
        assert_eq!(a.len(), 9);
        assert_eq!(required_support(0.7, 20), 14);
        assert_eq!(required_support(0.7, 3), 3);
        assert_eq!(required_support(0.7, 1), 1);
        let _ = Line::reflect(Axis::X).unwrap();
    }
}
