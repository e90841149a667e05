//! Affine forms over formals and bounding-box dimensions, used to compose and
//! compare slot expressions symbolically.

use std::collections::BTreeMap;

use crate::lang::{Domain, ParamValue};
use crate::library::{LinExpr, Operand, ParamSpec};

const TOL: f64 = 1e-9;

#[derive(Clone, Debug, Default, PartialEq)]
pub(crate) struct Affine {
    pub terms: BTreeMap<Operand, i32>,
    pub constant: f64,
}

impl Affine {
    pub fn constant(c: f64) -> Affine {
        Affine {
            terms: BTreeMap::new(),
            constant: c,
        }
    }

    pub fn operand(o: Operand) -> Affine {
        Affine {
            terms: BTreeMap::from([(o, 1)]),
            constant: 0.0,
        }
    }

    pub fn add_scaled(&mut self, other: &Affine, k: i32) {
        self.constant += f64::from(k) * other.constant;
        for (&o, &c) in &other.terms {
            *self.terms.entry(o).or_default() += k * c;
        }
        self.terms.retain(|_, c| *c != 0);
    }

    /// Substitutes formal operands of `e` through `formal`.
    pub fn of_lin(e: &LinExpr, formal: impl Fn(usize) -> Option<Affine>) -> Option<Affine> {
        let mut out = Affine::constant(e.constant);
        for t in &e.terms {
            let a = match t.operand {
                Operand::Formal(i) => formal(i)?,
                o @ Operand::BboxDim(_) => Affine::operand(o),
            };
            out.add_scaled(&a, i32::from(t.coef));
        }
        Some(out)
    }

    /// The slot spec computing this form, if it fits the expression grammar.
    pub fn to_spec(&self, dom: Domain) -> Option<ParamSpec> {
        if self.terms.is_empty() {
            let v = ParamValue::Float(self.constant);
            return dom.admits(&v).then_some(ParamSpec::Const(v));
        }
        if self.terms.len() > 2 || self.terms.values().any(|c| c.abs() != 1) {
            return None;
        }
        Some(ParamSpec::Lin(LinExpr::new(
            self.terms.iter().map(|(&o, &c)| (c as i8, o)).collect(),
            self.constant,
        )))
    }

    pub fn approx_eq(&self, other: &Affine) -> bool {
        self.terms == other.terms && (self.constant - other.constant).abs() <= TOL
    }
}
