//! Function library: the five base commands plus discovered macros, macro
//! expansion and matching, and the compression objective.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::LibraryError;
use crate::lang::{Axis, Command, CuboidId, Domain, Line, ParamCounts, ParamKind, ParamValue, Program};

/// Weights of the objective terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    #[serde(rename = "lambda_n")]
    pub n: f64,
    #[serde(rename = "lambda_fn")]
    pub fns: f64,
    #[serde(rename = "lambda_cid")]
    pub cid: f64,
    #[serde(rename = "lambda_f")]
    pub float: f64,
    #[serde(rename = "lambda_d")]
    pub discrete: f64,
    #[serde(rename = "lambda_b")]
    pub boolean: f64,
    #[serde(rename = "lambda_eps")]
    pub error: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        ObjectiveWeights {
            n: 1.0,
            fns: 8.0,
            cid: 8.0,
            float: 1.0,
            discrete: 0.5,
            boolean: 0.25,
            error: 10.0,
        }
    }
}

impl ObjectiveWeights {
    pub fn weight(&self, kind: ParamKind) -> f64 {
        match kind {
            ParamKind::Fn => self.fns,
            ParamKind::Cid => self.cid,
            ParamKind::Float => self.float,
            ParamKind::Discrete => self.discrete,
            ParamKind::Bool => self.boolean,
        }
    }

    /// `Σ λ_τ · counts_τ`.
    pub fn weigh(&self, counts: &ParamCounts) -> f64 {
        ParamKind::ALL
            .iter()
            .map(|&k| self.weight(k) * counts.get(k))
            .sum()
    }
}

/// Sum of the weights of a list of free parameter kinds.
pub fn weighted_dof(kinds: impl IntoIterator<Item = ParamKind>, w: &ObjectiveWeights) -> f64 {
    kinds.into_iter().map(|k| w.weight(k)).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "t", content = "v", rename_all = "lowercase")]
pub enum Operand {
    Formal(usize),
    BboxDim(Axis),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinTerm {
    /// `1` or `-1`.
    pub coef: i8,
    pub operand: Operand,
}

/// `Σ coef_i · operand_i + constant` with at most two terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinExpr {
    pub terms: Vec<LinTerm>,
    pub constant: f64,
}

impl LinExpr {
    pub fn new(terms: Vec<(i8, Operand)>, constant: f64) -> LinExpr {
        LinExpr {
            terms: terms
                .into_iter()
                .map(|(coef, operand)| LinTerm { coef, operand })
                .collect(),
            constant,
        }
    }

    pub fn eval(&self, formal: impl Fn(usize) -> f64, bbox: [f64; 3]) -> f64 {
        self.terms.iter().fold(self.constant, |acc, t| {
            let v = match t.operand {
                Operand::Formal(i) => formal(i),
                Operand::BboxDim(a) => bbox[a.index()],
            };
            acc + f64::from(t.coef) * v
        })
    }
}

/// How a macro body slot gets its value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", content = "v", rename_all = "snake_case")]
pub enum ParamSpec {
    Const(ParamValue),
    /// The first occurrence of a formal binds it; later occurrences reuse it.
    Formal(usize),
    Lin(LinExpr),
    /// The cuboid declared by the `j`-th `Cuboid` line of the same call.
    LocalCuboid(usize),
}

impl ParamSpec {
    pub fn is_constraint(&self) -> bool {
        matches!(self, ParamSpec::Const(_) | ParamSpec::Lin(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Formal {
    pub kind: ParamKind,
    pub domain: Domain,
}

impl Formal {
    pub fn new(domain: Domain) -> Formal {
        Formal {
            kind: domain.kind(),
            domain,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroLine {
    pub command: Command,
    pub slots: Vec<ParamSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Macro {
    pub name: String,
    pub formals: Vec<Formal>,
    pub body: Vec<MacroLine>,
    /// Names of library functions this macro was assembled from.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub provenance: Vec<String>,
}

/// Where a call sits inside a program.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpandContext {
    pub bbox: [f64; 3],
    /// Id of the next cuboid to be declared.
    pub next_cuboid: usize,
}

/// A successful match of a function against program lines.
#[derive(Clone, Debug, PartialEq)]
pub struct Match {
    pub args: Vec<ParamValue>,
    /// Summed absolute deviation of continuous parameters.
    pub error: f64,
}

const MATCH_SLACK: f64 = 1e-9;

fn quantize(x: f64) -> i64 {
    (x * 100.0).round() as i64
}

impl Macro {
    /// The base function for one command: every slot is its own formal.
    pub fn base(command: Command) -> Macro {
        let sig = command.signature();
        Macro {
            name: command.name().to_string(),
            formals: sig.iter().map(|&d| Formal::new(d)).collect(),
            body: vec![MacroLine {
                command,
                slots: (0..sig.len()).map(ParamSpec::Formal).collect(),
            }],
            provenance: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.body.len()
    }

    pub fn is_empty(&self) -> bool {
        self.body.is_empty()
    }

    pub fn commands(&self) -> impl Iterator<Item = Command> + '_ {
        self.body.iter().map(|l| l.command)
    }

    /// Weighted free parameters of a call, excluding the function choice.
    pub fn dof(&self, w: &ObjectiveWeights) -> f64 {
        weighted_dof(self.formals.iter().map(|f| f.kind), w)
    }

    /// Weighted parameters of the body lines written out as base commands,
    /// excluding function choices.
    pub fn raw_dof(&self, w: &ObjectiveWeights) -> f64 {
        self.body
            .iter()
            .flat_map(|l| l.command.signature())
            .map(|d| w.weight(d.kind()))
            .sum()
    }

    /// Weighted degrees of freedom removed relative to raw base lines.
    pub fn constrained_dof(&self, w: &ObjectiveWeights) -> f64 {
        self.raw_dof(w) - self.dof(w)
    }

    /// Checks slot domains, formal binding order and expression operands.
    pub fn validate(&self) -> Result<(), LibraryError> {
        let bad = |msg: String| LibraryError::Malformed {
            name: self.name.clone(),
            msg,
        };
        if self.body.is_empty() {
            return Err(bad("empty body".into()));
        }
        for f in &self.formals {
            if f.kind != f.domain.kind() {
                return Err(bad(format!("formal kind {:?} does not fit domain {:?}", f.kind, f.domain)));
            }
        }
        let mut bound = vec![false; self.formals.len()];
        let mut cuboids = 0;
        for (k, line) in self.body.iter().enumerate() {
            let sig = line.command.signature();
            if sig.len() != line.slots.len() {
                return Err(bad(format!("line {k}: {} slots for {}", line.slots.len(), line.command.name())));
            }
            for (s, (spec, &dom)) in line.slots.iter().zip(sig).enumerate() {
                match spec {
                    ParamSpec::Const(v) => {
                        if !dom.admits(v) {
                            return Err(bad(format!("line {k} slot {s}: constant outside {dom:?}")));
                        }
                    }
                    ParamSpec::Formal(i) => {
                        let f = self
                            .formals
                            .get(*i)
                            .ok_or_else(|| bad(format!("line {k} slot {s}: unknown formal {i}")))?;
                        if f.domain != dom {
                            return Err(bad(format!("line {k} slot {s}: formal {i} is {:?}, slot is {dom:?}", f.domain)));
                        }
                        bound[*i] = true;
                    }
                    ParamSpec::Lin(e) => {
                        if dom.kind() != ParamKind::Float {
                            return Err(bad(format!("line {k} slot {s}: expression in non-float slot")));
                        }
                        if e.terms.is_empty() || e.terms.len() > 2 || !e.constant.is_finite() {
                            return Err(bad(format!("line {k} slot {s}: malformed expression")));
                        }
                        for t in &e.terms {
                            if t.coef != 1 && t.coef != -1 {
                                return Err(bad(format!("line {k} slot {s}: coefficient {}", t.coef)));
                            }
                            if let Operand::Formal(i) = t.operand {
                                let ok = bound.get(i).copied().unwrap_or(false)
                                    && self.formals[i].kind == ParamKind::Float;
                                if !ok {
                                    return Err(bad(format!("line {k} slot {s}: operand {i} not bound earlier")));
                                }
                            }
                        }
                    }
                    ParamSpec::LocalCuboid(j) => {
                        if dom != Domain::Cid || *j >= cuboids {
                            return Err(bad(format!("line {k} slot {s}: bad local cuboid {j}")));
                        }
                    }
                }
            }
            if line.command == Command::Cuboid {
                cuboids += 1;
            }
        }
        if let Some(i) = bound.iter().position(|b| !b) {
            return Err(bad(format!("formal {i} never bound")));
        }
        Ok(())
    }

    /// Expands a call into base lines.
    pub fn expand(&self, args: &[ParamValue], ctx: ExpandContext) -> Result<Vec<Line>, LibraryError> {
        if args.len() != self.formals.len() {
            return Err(LibraryError::Arity {
                name: self.name.clone(),
                expected: self.formals.len(),
                found: args.len(),
            });
        }
        for (i, (f, a)) in self.formals.iter().zip(args).enumerate() {
            if !f.domain.admits(a) {
                return Err(LibraryError::Argument {
                    name: self.name.clone(),
                    slot: i,
                    domain: format!("{:?}", f.domain),
                    value: format!("{a:?}"),
                });
            }
        }
        let formal = |i: usize| args[i].as_float().unwrap_or(f64::NAN);
        let mut out = Vec::with_capacity(self.body.len());
        for line in &self.body {
            let sig = line.command.signature();
            let params = line
                .slots
                .iter()
                .zip(sig)
                .map(|(spec, &dom)| match spec {
                    ParamSpec::Const(v) => *v,
                    ParamSpec::Formal(i) => args[*i],
                    ParamSpec::Lin(e) => ParamValue::Float(dom.clamp(e.eval(formal, ctx.bbox))),
                    ParamSpec::LocalCuboid(j) => ParamValue::Cid(CuboidId(ctx.next_cuboid + j)),
                })
                .collect();
            out.push(Line::new(line.command, params)?);
        }
        Ok(out)
    }

    /// Matches the body against `lines[pos..]`. Discrete, boolean and cuboid
    /// parameters must agree exactly and continuous ones within `eps`.
    pub fn match_at(&self, lines: &[Line], pos: usize, ctx: ExpandContext, eps: f64) -> Option<Match> {
        self.bind(lines, pos, ctx, Some(eps))
    }

    /// Reads formal values off `lines[pos..]` without checking constraints;
    /// only commands must agree.
    pub fn bind_at(&self, lines: &[Line], pos: usize, ctx: ExpandContext) -> Option<Match> {
        self.bind(lines, pos, ctx, None)
    }

    fn bind(&self, lines: &[Line], pos: usize, ctx: ExpandContext, eps: Option<f64>) -> Option<Match> {
        let window = lines.get(pos..pos + self.body.len())?;
        if window.iter().zip(&self.body).any(|(l, m)| l.command != m.command) {
            return None;
        }
        let mut args: Vec<Option<ParamValue>> = vec![None; self.formals.len()];
        let mut error = 0.0;
        for (line, ml) in window.iter().zip(&self.body) {
            let sig = line.command.signature();
            for ((spec, actual), &dom) in ml.slots.iter().zip(&line.params).zip(sig) {
                let expected = match spec {
                    ParamSpec::Formal(i) => match args[*i] {
                        None => {
                            args[*i] = Some(*actual);
                            continue;
                        }
                        Some(v) => v,
                    },
                    ParamSpec::Const(v) => *v,
                    ParamSpec::Lin(e) => {
                        let x = e.eval(|i| args[i].and_then(|v| v.as_float()).unwrap_or(f64::NAN), ctx.bbox);
                        ParamValue::Float(dom.clamp(x))
                    }
                    ParamSpec::LocalCuboid(j) => ParamValue::Cid(CuboidId(ctx.next_cuboid + j)),
                };
                match (expected, actual) {
                    (ParamValue::Float(a), ParamValue::Float(b)) => {
                        let d = (a - b).abs();
                        if let Some(e) = eps {
                            if d.is_nan() || d > e + MATCH_SLACK {
                                return None;
                            }
                        }
                        error += d;
                    }
                    (a, b) => {
                        if eps.is_some() && a != *b {
                            return None;
                        }
                    }
                }
            }
        }
        Some(Match {
            args: args.into_iter().map(|a| a.expect("validated macros bind every formal")).collect(),
            error,
        })
    }

    /// Canonical structural key; constant floats are rounded to 0.01.
    pub fn key(&self) -> String {
        let mut s = String::new();
        for f in &self.formals {
            let _ = write!(s, "{:?},", f.domain);
        }
        s.push('|');
        for line in &self.body {
            s.push_str(line.command.name());
            s.push('(');
            for spec in &line.slots {
                match spec {
                    ParamSpec::Const(ParamValue::Float(x)) => {
                        let _ = write!(s, "c{}", quantize(*x));
                    }
                    ParamSpec::Const(v) => {
                        let _ = write!(s, "c{v:?}");
                    }
                    ParamSpec::Formal(i) => {
                        let _ = write!(s, "p{i}");
                    }
                    ParamSpec::Lin(e) => {
                        s.push('l');
                        for t in &e.terms {
                            let _ = write!(s, "{:+}{:?}", t.coef, t.operand);
                        }
                        let _ = write!(s, "{:+}", quantize(e.constant));
                    }
                    ParamSpec::LocalCuboid(j) => {
                        let _ = write!(s, "o{j}");
                    }
                }
                s.push(',');
            }
            s.push(')');
        }
        s
    }
}

/// Number of base functions at the front of every library.
pub const NUM_BASE: usize = 5;

/// Ordered function list. The first [`NUM_BASE`] entries are the base
/// commands; function ids index this list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Library {
    functions: Vec<Macro>,
}

impl Default for Library {
    fn default() -> Self {
        Library::base()
    }
}

impl Library {
    pub fn base() -> Library {
        Library {
            functions: Command::ALL.iter().map(|&c| Macro::base(c)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn functions(&self) -> &[Macro] {
        &self.functions
    }

    pub fn get(&self, id: usize) -> Option<&Macro> {
        self.functions.get(id)
    }

    pub fn macros(&self) -> &[Macro] {
        &self.functions[NUM_BASE..]
    }

    pub fn is_base(id: usize) -> bool {
        id < NUM_BASE
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.functions.iter().position(|m| m.name == name)
    }

    pub fn contains_key(&self, key: &str) -> bool {
        self.functions.iter().any(|m| m.key() == key)
    }

    /// Appends a validated macro with a fresh name; returns its id.
    pub fn add_macro(&mut self, m: Macro) -> Result<usize, LibraryError> {
        m.validate()?;
        if self.position(&m.name).is_some() {
            return Err(LibraryError::Malformed {
                name: m.name,
                msg: "name already in library".into(),
            });
        }
        self.functions.push(m);
        Ok(self.functions.len() - 1)
    }

    pub fn with_macro(&self, m: Macro) -> Result<Library, LibraryError> {
        let mut l = self.clone();
        l.add_macro(m)?;
        Ok(l)
    }

    /// Library without the named macros. Base functions are never removed.
    pub fn without(&self, names: &[String]) -> Library {
        Library {
            functions: self
                .functions
                .iter()
                .enumerate()
                .filter(|(i, m)| Library::is_base(*i) || !names.contains(&m.name))
                .map(|(_, m)| m.clone())
                .collect(),
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.functions.iter().map(|m| m.name.clone()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("library serializes")
    }

    pub fn from_json(text: &str) -> Result<Library, LibraryError> {
        let lib: Library = serde_json::from_str(text).map_err(|e| LibraryError::Malformed {
            name: "<library>".into(),
            msg: e.to_string(),
        })?;
        let base = Library::base();
        if lib.functions.len() < NUM_BASE || lib.functions[..NUM_BASE] != base.functions[..] {
            return Err(LibraryError::Malformed {
                name: "<library>".into(),
                msg: "library must start with the base functions".into(),
            });
        }
        let mut names = std::collections::BTreeSet::new();
        for m in &lib.functions {
            m.validate()?;
            if !names.insert(m.name.as_str()) {
                return Err(LibraryError::Malformed {
                    name: m.name.clone(),
                    msg: "duplicate name".into(),
                });
            }
        }
        Ok(lib)
    }
}

/// One function application in a refactored program.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Call {
    pub function: usize,
    pub args: Vec<ParamValue>,
    pub error: f64,
}

/// A program rewritten as a sequence of library calls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefactoredProgram {
    pub calls: Vec<Call>,
    /// Block order the calls cover.
    pub order: Vec<usize>,
    pub cont_error: f64,
}

impl RefactoredProgram {
    /// Free parameters per kind: one function choice per call plus the
    /// formals of the called function.
    pub fn counts(&self, lib: &Library) -> ParamCounts {
        let mut c = ParamCounts::default();
        for call in &self.calls {
            c.fns += 1.0;
            for f in &lib.functions[call.function].formals {
                *c.get_mut(f.kind) += 1.0;
            }
        }
        c
    }

    /// Contribution of this program to the objective.
    pub fn cost(&self, lib: &Library, w: &ObjectiveWeights) -> f64 {
        w.weigh(&self.counts(lib)) + w.error * self.cont_error
    }

    /// Expands every call back into base lines.
    pub fn expand(&self, lib: &Library) -> Result<Vec<Line>, LibraryError> {
        let mut lines: Vec<Line> = Vec::new();
        let mut bbox = [1.0; 3];
        let mut next_cuboid = 0;
        for call in &self.calls {
            let m = lib.get(call.function).ok_or(LibraryError::UnknownFunction(call.function))?;
            let out = m.expand(&call.args, ExpandContext { bbox, next_cuboid })?;
            for l in &out {
                if l.command == Command::Cuboid {
                    if lines.is_empty() {
                        bbox = [l.float(0), l.float(1), l.float(2)];
                    }
                    next_cuboid += 1;
                }
                lines.push(l.clone());
            }
        }
        Ok(lines)
    }

    pub fn to_program(&self, lib: &Library) -> Result<Program, LibraryError> {
        Ok(Program::from_lines(&self.expand(lib)?)?)
    }

    /// Number of calls using each function id.
    pub fn usage(&self, counts: &mut BTreeMap<usize, usize>) {
        for c in &self.calls {
            *counts.entry(c.function).or_default() += 1;
        }
    }
}

/// `λ_n |L| + mean over programs of (Σ λ_τ count_τ + λ_ε error)`.
pub fn objective(
    d: &Dataset,
    lib: &Library,
    w: &ObjectiveWeights,
    best: &[RefactoredProgram],
) -> Result<f64, LibraryError> {
    if best.len() < d.len() {
        return Err(LibraryError::MissingRefactoring(best.len()));
    }
    Ok(objective_of(lib, w, &best[..d.len()]))
}

/// Objective over an explicit list of refactorings.
pub fn objective_of(lib: &Library, w: &ObjectiveWeights, best: &[RefactoredProgram]) -> f64 {
    let mut f = w.n * lib.len() as f64;
    if !best.is_empty() {
        let total: f64 = best.iter().map(|r| r.cost(lib, w)).sum();
        f += total / best.len() as f64;
    }
    f
}
