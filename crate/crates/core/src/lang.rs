//! The cuboid-assembly shape language: parameter types, lines, blocks and
//! programs, together with the textual `.sap` parser and printer.
//!
//! A program is a bounding box declaration followed by a list of blocks. Each
//! block declares one cuboid, attaches it (one or two `attach` lines, or one
//! `squeeze`) and optionally applies a symmetry operation to it. All
//! non-`Cuboid` commands implicitly act on the cuboid declared by their block.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::LangError;

/// Type of a free parameter, as counted by the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    /// Choice of function for a line.
    Fn,
    /// Cuboid reference.
    Cid,
    /// Continuous value.
    Float,
    /// Discrete enum value (face, axis, repetition count).
    Discrete,
    /// Boolean flag.
    Bool,
}

impl ParamKind {
    pub const ALL: [ParamKind; 5] = [
        ParamKind::Fn,
        ParamKind::Cid,
        ParamKind::Float,
        ParamKind::Discrete,
        ParamKind::Bool,
    ];
}

/// Value domain of a parameter slot, one level finer than [`ParamKind`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    /// Positive length in world units.
    Dim,
    /// Normalized coordinate in `[0, 1]`.
    Unit,
    Bool,
    Cid,
    Face,
    Axis,
    /// Positive repetition count.
    Count,
}

impl Domain {
    pub fn kind(self) -> ParamKind {
        match self {
            Domain::Dim | Domain::Unit => ParamKind::Float,
            Domain::Bool => ParamKind::Bool,
            Domain::Cid => ParamKind::Cid,
            Domain::Face | Domain::Axis | Domain::Count => ParamKind::Discrete,
        }
    }

    pub fn admits(self, v: &ParamValue) -> bool {
        match (self, v) {
            (Domain::Dim, ParamValue::Float(x)) => x.is_finite() && *x > 0.0,
            (Domain::Unit, ParamValue::Float(x)) => x.is_finite() && (0.0..=1.0).contains(x),
            (Domain::Bool, ParamValue::Bool(_)) => true,
            (Domain::Cid, ParamValue::Cid(_)) => true,
            (Domain::Face, ParamValue::Discrete(Symbol::Face(_))) => true,
            (Domain::Axis, ParamValue::Discrete(Symbol::Axis(_))) => true,
            (Domain::Count, ParamValue::Discrete(Symbol::Count(n))) => *n >= 1,
            _ => false,
        }
    }

    /// Clamp a computed float into this domain. Non-float domains are returned
    /// unchanged.
    pub fn clamp(self, x: f64) -> f64 {
        match self {
            Domain::Unit => x.clamp(0.0, 1.0),
            Domain::Dim => x.max(MIN_DIM),
            _ => x,
        }
    }
}

/// Smallest dimension a cuboid may take.
pub const MIN_DIM: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Face {
    Right,
    Left,
    Top,
    Bot,
    Front,
    Back,
}

impl Face {
    pub const ALL: [Face; 6] = [Face::Right, Face::Left, Face::Top, Face::Bot, Face::Front, Face::Back];

    pub fn opposite(self) -> Face {
        match self {
            Face::Right => Face::Left,
            Face::Left => Face::Right,
            Face::Top => Face::Bot,
            Face::Bot => Face::Top,
            Face::Front => Face::Back,
            Face::Back => Face::Front,
        }
    }

    /// Local coordinates of the point `(u, v)` on this face.
    pub fn point(self, u: f64, v: f64) -> [f64; 3] {
        match self {
            Face::Right => [1.0, u, v],
            Face::Left => [0.0, u, v],
            Face::Top => [u, 1.0, v],
            Face::Bot => [u, 0.0, v],
            Face::Front => [u, v, 1.0],
            Face::Back => [u, v, 0.0],
        }
    }

    fn name(self) -> &'static str {
        match self {
            Face::Right => "right",
            Face::Left => "left",
            Face::Top => "top",
            Face::Bot => "bot",
            Face::Front => "front",
            Face::Back => "back",
        }
    }
}

/// Discrete parameter value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "t", content = "v", rename_all = "lowercase")]
pub enum Symbol {
    Axis(Axis),
    Face(Face),
    Count(u32),
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Axis(a) => write!(f, "{a:?}"),
            Symbol::Face(face) => f.write_str(face.name()),
            Symbol::Count(n) => write!(f, "{n}"),
        }
    }
}

/// Index of a cuboid inside a program. `0` is the bounding box; block `i`
/// declares cuboid `i + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CuboidId(pub usize);

impl CuboidId {
    pub const BBOX: CuboidId = CuboidId(0);
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", content = "v", rename_all = "lowercase")]
pub enum ParamValue {
    Float(f64),
    Discrete(Symbol),
    Bool(bool),
    Cid(CuboidId),
}

impl ParamValue {
    pub fn as_float(&self) -> Option<f64> {
        match self {
            ParamValue::Float(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_cid(&self) -> Option<CuboidId> {
        match self {
            ParamValue::Cid(c) => Some(*c),
            _ => None,
        }
    }

    pub fn kind(&self) -> ParamKind {
        match self {
            ParamValue::Float(_) => ParamKind::Float,
            ParamValue::Discrete(_) => ParamKind::Discrete,
            ParamValue::Bool(_) => ParamKind::Bool,
            ParamValue::Cid(_) => ParamKind::Cid,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Command {
    Cuboid,
    Attach,
    Squeeze,
    Reflect,
    Translate,
}

impl Command {
    pub const ALL: [Command; 5] = [
        Command::Cuboid,
        Command::Attach,
        Command::Squeeze,
        Command::Reflect,
        Command::Translate,
    ];

    /// Slot domains of the command, in argument order.
    pub fn signature(self) -> &'static [Domain] {
        use Domain::*;
        match self {
            Command::Cuboid => &[Dim, Dim, Dim, Bool],
            Command::Attach => &[Cid, Unit, Unit, Unit, Unit, Unit, Unit],
            Command::Squeeze => &[Cid, Cid, Face, Unit, Unit],
            Command::Reflect => &[Axis],
            Command::Translate => &[Axis, Count, Unit],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Command::Cuboid => "Cuboid",
            Command::Attach => "attach",
            Command::Squeeze => "squeeze",
            Command::Reflect => "reflect",
            Command::Translate => "translate",
        }
    }

    fn from_name(s: &str) -> Option<Command> {
        Command::ALL.into_iter().find(|c| c.name() == s)
    }
}

/// One statement of a program.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub command: Command,
    pub params: Vec<ParamValue>,
}

impl Line {
    /// Builds a line, checking arity and slot domains.
    pub fn new(command: Command, params: Vec<ParamValue>) -> Result<Line, LangError> {
        let sig = command.signature();
        if sig.len() != params.len() {
            return Err(LangError::Arity {
                command: command.name(),
                expected: sig.len(),
                found: params.len(),
            });
        }
        for (i, (d, v)) in sig.iter().zip(&params).enumerate() {
            if !d.admits(v) {
                return Err(LangError::Domain {
                    command: command.name(),
                    slot: i,
                    value: format!("{v:?}"),
                });
            }
        }
        Ok(Line { command, params })
    }

    pub fn cuboid(w: f64, h: f64, d: f64, aligned: bool) -> Result<Line, LangError> {
        use ParamValue::*;
        Line::new(Command::Cuboid, vec![Float(w), Float(h), Float(d), Bool(aligned)])
    }

    pub fn attach(target: CuboidId, local: [f64; 3], on_target: [f64; 3]) -> Result<Line, LangError> {
        use ParamValue::*;
        let mut params = vec![Cid(target)];
        params.extend(local.iter().chain(on_target.iter()).map(|&x| Float(x)));
        Line::new(Command::Attach, params)
    }

    pub fn squeeze(a: CuboidId, b: CuboidId, face: Face, u: f64, v: f64) -> Result<Line, LangError> {
        use ParamValue::*;
        Line::new(
            Command::Squeeze,
            vec![Cid(a), Cid(b), Discrete(Symbol::Face(face)), Float(u), Float(v)],
        )
    }

    pub fn reflect(axis: Axis) -> Result<Line, LangError> {
        Line::new(Command::Reflect, vec![ParamValue::Discrete(Symbol::Axis(axis))])
    }

    pub fn translate(axis: Axis, count: u32, dist: f64) -> Result<Line, LangError> {
        use ParamValue::*;
        Line::new(
            Command::Translate,
            vec![
                Discrete(Symbol::Axis(axis)),
                Discrete(Symbol::Count(count)),
                Float(dist),
            ],
        )
    }

    /// Float parameter at `slot`. Panics on a slot of another kind; lines are
    /// validated at construction so this is a programming error.
    pub fn float(&self, slot: usize) -> f64 {
        self.params[slot].as_float().expect("float slot")
    }

    pub fn cid(&self, slot: usize) -> CuboidId {
        self.params[slot].as_cid().expect("cid slot")
    }

    pub fn symbol(&self, slot: usize) -> Symbol {
        match self.params[slot] {
            ParamValue::Discrete(s) => s,
            _ => panic!("discrete slot"),
        }
    }

    pub fn flag(&self, slot: usize) -> bool {
        match self.params[slot] {
            ParamValue::Bool(b) => b,
            _ => panic!("bool slot"),
        }
    }

    /// Cuboid ids referenced by this line.
    pub fn references(&self) -> impl Iterator<Item = CuboidId> + '_ {
        self.params.iter().filter_map(ParamValue::as_cid)
    }

    pub(crate) fn map_cids(&mut self, f: impl Fn(CuboidId) -> CuboidId) {
        for p in &mut self.params {
            if let ParamValue::Cid(c) = p {
                *c = f(*c);
            }
        }
    }
}

/// A cuboid declaration with its attachment and optional symmetry lines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PBlock {
    cuboid: Line,
    attach: Vec<Line>,
    sym: Option<Line>,
}

impl PBlock {
    pub fn new(cuboid: Line, attach: Vec<Line>, sym: Option<Line>) -> Result<PBlock, LangError> {
        if cuboid.command != Command::Cuboid {
            return Err(LangError::Structure("block must start with a Cuboid".into()));
        }
        let ok = match attach.as_slice() {
            [a] => matches!(a.command, Command::Attach | Command::Squeeze),
            [a, b] => a.command == Command::Attach && b.command == Command::Attach,
            _ => false,
        };
        if !ok {
            return Err(LangError::Structure(
                "block needs one or two attach lines, or one squeeze".into(),
            ));
        }
        if let Some(s) = &sym {
            if !matches!(s.command, Command::Reflect | Command::Translate) {
                return Err(LangError::Structure("symmetry line must be reflect or translate".into()));
            }
        }
        Ok(PBlock { cuboid, attach, sym })
    }

    pub fn cuboid(&self) -> &Line {
        &self.cuboid
    }

    pub fn attach(&self) -> &[Line] {
        &self.attach
    }

    pub fn sym(&self) -> Option<&Line> {
        self.sym.as_ref()
    }

    pub fn lines(&self) -> impl Iterator<Item = &Line> {
        std::iter::once(&self.cuboid)
            .chain(self.attach.iter())
            .chain(self.sym.iter())
    }

    pub fn len(&self) -> usize {
        2 + usize::from(self.attach.len() == 2) + usize::from(self.sym.is_some())
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Cuboids this block refers to.
    pub fn references(&self) -> impl Iterator<Item = CuboidId> + '_ {
        self.lines().flat_map(Line::references)
    }

    fn map_cids(&mut self, f: impl Fn(CuboidId) -> CuboidId + Copy) {
        self.cuboid.map_cids(f);
        for l in &mut self.attach {
            l.map_cids(f);
        }
        if let Some(s) = &mut self.sym {
            s.map_cids(f);
        }
    }
}

/// A flat shape program.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Program {
    bbox: Line,
    blocks: Vec<PBlock>,
}

impl Program {
    /// Builds a program, checking that the bounding box is an aligned cuboid
    /// and that blocks only reference earlier cuboids.
    pub fn new(bbox: Line, blocks: Vec<PBlock>) -> Result<Program, LangError> {
        if bbox.command != Command::Cuboid || !bbox.flag(3) {
            return Err(LangError::Structure("bbox must be Cuboid(w, h, d, True)".into()));
        }
        for (i, b) in blocks.iter().enumerate() {
            if let Some(c) = b.references().find(|c| c.0 > i) {
                return Err(LangError::DanglingCuboid {
                    name: format!("c{}", c.0),
                    line: None,
                });
            }
        }
        Ok(Program { bbox, blocks })
    }

    pub fn bbox(&self) -> &Line {
        &self.bbox
    }

    pub fn bbox_dims(&self) -> [f64; 3] {
        [self.bbox.float(0), self.bbox.float(1), self.bbox.float(2)]
    }

    pub fn blocks(&self) -> &[PBlock] {
        &self.blocks
    }

    /// All lines, bounding box first.
    pub fn lines(&self) -> Vec<Line> {
        let mut out = Vec::with_capacity(self.num_lines());
        out.push(self.bbox.clone());
        for b in &self.blocks {
            out.extend(b.lines().cloned());
        }
        out
    }

    /// Owning block of each line of [`Program::lines`]; `None` for the bbox.
    pub fn line_blocks(&self) -> Vec<Option<usize>> {
        let mut out = vec![None];
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(std::iter::repeat_n(Some(i), b.len()));
        }
        out
    }

    pub fn num_lines(&self) -> usize {
        1 + self.blocks.iter().map(PBlock::len).sum::<usize>()
    }

    /// Indices of the blocks block `i` depends on.
    pub fn dependencies(&self, i: usize) -> Vec<usize> {
        let mut deps: Vec<usize> = self.blocks[i]
            .references()
            .filter(|c| c.0 > 0)
            .map(|c| c.0 - 1)
            .collect();
        deps.sort_unstable();
        deps.dedup();
        deps
    }

    /// Rearranges blocks so that new position `k` holds old block `order[k]`,
    /// renumbering cuboid references accordingly.
    pub fn reorder(&self, order: &[usize]) -> Result<Program, LangError> {
        let n = self.blocks.len();
        let mut new_pos = vec![usize::MAX; n];
        for (k, &old) in order.iter().enumerate() {
            if old >= n || new_pos[old] != usize::MAX {
                return Err(LangError::Structure(format!("invalid block order {order:?}")));
            }
            new_pos[old] = k;
        }
        if order.len() != n {
            return Err(LangError::Structure(format!("invalid block order {order:?}")));
        }
        let remap = |c: CuboidId| {
            if c.0 == 0 {
                c
            } else {
                CuboidId(new_pos[c.0 - 1] + 1)
            }
        };
        let blocks = order
            .iter()
            .map(|&old| {
                let mut b = self.blocks[old].clone();
                b.map_cids(remap);
                b
            })
            .collect();
        Program::new(self.bbox.clone(), blocks)
    }

    /// Parses the textual form.
    pub fn parse(text: &str) -> Result<Program, LangError> {
        Parser::default().run(text)
    }

    /// Regroups a flat line list (bbox first) into blocks.
    pub fn from_lines(lines: &[Line]) -> Result<Program, LangError> {
        let (bbox, rest) = lines
            .split_first()
            .ok_or_else(|| LangError::Structure("missing bbox declaration".into()))?;
        let mut blocks = Vec::new();
        let mut i = 0;
        while i < rest.len() {
            let cuboid = rest[i].clone();
            if cuboid.command != Command::Cuboid {
                return Err(LangError::Structure(format!(
                    "line {} should start a block",
                    i + 1
                )));
            }
            i += 1;
            let mut attach = Vec::new();
            while i < rest.len() && matches!(rest[i].command, Command::Attach | Command::Squeeze) {
                attach.push(rest[i].clone());
                i += 1;
            }
            let mut sym = None;
            if i < rest.len() && matches!(rest[i].command, Command::Reflect | Command::Translate) {
                sym = Some(rest[i].clone());
                i += 1;
            }
            if attach.is_empty() {
                return Err(LangError::Unattached { line: i });
            }
            blocks.push(PBlock::new(cuboid, attach, sym)?);
        }
        Program::new(bbox.clone(), blocks)
    }
}

/// Per-kind free-parameter counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamCounts {
    #[serde(rename = "fn")]
    pub fns: f64,
    pub cid: f64,
    #[serde(rename = "f")]
    pub float: f64,
    #[serde(rename = "d")]
    pub discrete: f64,
    #[serde(rename = "b")]
    pub boolean: f64,
}

impl ParamCounts {
    pub fn get(&self, kind: ParamKind) -> f64 {
        match kind {
            ParamKind::Fn => self.fns,
            ParamKind::Cid => self.cid,
            ParamKind::Float => self.float,
            ParamKind::Discrete => self.discrete,
            ParamKind::Bool => self.boolean,
        }
    }

    pub fn get_mut(&mut self, kind: ParamKind) -> &mut f64 {
        match kind {
            ParamKind::Fn => &mut self.fns,
            ParamKind::Cid => &mut self.cid,
            ParamKind::Float => &mut self.float,
            ParamKind::Discrete => &mut self.discrete,
            ParamKind::Bool => &mut self.boolean,
        }
    }

    pub fn add(&mut self, other: &ParamCounts) {
        for k in ParamKind::ALL {
            *self.get_mut(k) += other.get(k);
        }
    }

    pub fn scale(&self, s: f64) -> ParamCounts {
        let mut out = *self;
        for k in ParamKind::ALL {
            *out.get_mut(k) *= s;
        }
        out
    }

    /// Counts for a run of raw lines: one function choice per line plus every
    /// parameter slot.
    pub fn of_lines<'a>(lines: impl IntoIterator<Item = &'a Line>) -> ParamCounts {
        let mut c = ParamCounts::default();
        for l in lines {
            c.fns += 1.0;
            for d in l.command.signature() {
                *c.get_mut(d.kind()) += 1.0;
            }
        }
        c
    }
}

/// Free parameters of a base program, per kind. Every line is one function
/// choice and every slot is free.
pub fn count_params(p: &Program) -> ParamCounts {
    ParamCounts::of_lines(&p.lines())
}

// ---------------------------------------------------------------------------
// Printing

fn fmt_value(v: &ParamValue, out: &mut String) {
    use std::fmt::Write;
    match v {
        ParamValue::Float(x) => write!(out, "{x:.4}").unwrap(),
        ParamValue::Discrete(s) => write!(out, "{s}").unwrap(),
        ParamValue::Bool(b) => out.push_str(if *b { "True" } else { "False" }),
        ParamValue::Cid(c) if c.0 == 0 => out.push_str("bbox"),
        ParamValue::Cid(c) => write!(out, "c{}", c.0).unwrap(),
    }
}

/// Renders a line as a statement; `decl` names the cuboid for `Cuboid` lines.
pub fn format_line(line: &Line, decl: Option<&str>) -> String {
    let mut s = String::new();
    if let Some(name) = decl {
        s.push_str(name);
        s.push_str(" = ");
    }
    s.push_str(line.command.name());
    s.push('(');
    for (i, v) in line.params.iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        fmt_value(v, &mut s);
    }
    s.push(')');
    s
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", format_line(&self.bbox, Some("bbox")))?;
        for (i, b) in self.blocks.iter().enumerate() {
            let name = format!("c{}", i + 1);
            writeln!(f, "{}", format_line(&b.cuboid, Some(&name)))?;
            for l in b.attach.iter().chain(b.sym.iter()) {
                writeln!(f, "{}", format_line(l, None))?;
            }
        }
        Ok(())
    }
}

/// Canonical text: one statement per line, floats with four decimals.
pub fn print_program(p: &Program) -> String {
    p.to_string()
}

pub fn parse_program(text: &str) -> Result<Program, LangError> {
    Program::parse(text)
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Default)]
struct Parser {
    names: HashMap<String, usize>,
    bbox: Option<Line>,
    blocks: Vec<(usize, Line, Vec<Line>, Option<Line>)>,
}

struct Stmt<'a> {
    decl: Option<&'a str>,
    func: &'a str,
    args: Vec<(usize, &'a str)>,
}

fn syntax(line: usize, col: usize, msg: impl Into<String>) -> LangError {
    LangError::Syntax {
        line,
        col,
        msg: msg.into(),
    }
}

fn is_ident(s: &str) -> bool {
    let mut cs = s.chars();
    matches!(cs.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && cs.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn split_stmt(src: &str, lineno: usize) -> Result<Stmt<'_>, LangError> {
    let lead = src.len() - src.trim_start().len();
    let (decl, rest, rest_off) = match src.find('=') {
        Some(eq) => {
            let name = src[..eq].trim();
            if !is_ident(name) {
                return Err(syntax(lineno, lead + 1, format!("invalid name `{name}`")));
            }
            let after = &src[eq + 1..];
            let off = eq + 1 + (after.len() - after.trim_start().len());
            (Some(name), after.trim(), off)
        }
        None => (None, src.trim(), lead),
    };
    let open = rest
        .find('(')
        .ok_or_else(|| syntax(lineno, rest_off + 1, "expected `(`"))?;
    if !rest.ends_with(')') {
        return Err(syntax(lineno, rest_off + rest.len(), "expected `)` at end of statement"));
    }
    let func = rest[..open].trim();
    if !is_ident(func) {
        return Err(syntax(lineno, rest_off + 1, format!("invalid function name `{func}`")));
    }
    let inner = &rest[open + 1..rest.len() - 1];
    let mut args = Vec::new();
    if !inner.trim().is_empty() {
        let mut off = rest_off + open + 1;
        for piece in inner.split(',') {
            let col = off + (piece.len() - piece.trim_start().len()) + 1;
            args.push((col, piece.trim()));
            off += piece.len() + 1;
        }
    }
    Ok(Stmt { decl, func, args })
}

impl Parser {
    fn value(&self, d: Domain, tok: &str, line: usize, col: usize) -> Result<ParamValue, LangError> {
        let bad = || syntax(line, col, format!("cannot read `{tok}` as {d:?}"));
        Ok(match d {
            Domain::Dim | Domain::Unit => {
                let x: f64 = tok.parse().map_err(|_| bad())?;
                if !x.is_finite() {
                    return Err(bad());
                }
                ParamValue::Float(x)
            }
            Domain::Bool => match tok {
                "True" | "true" => ParamValue::Bool(true),
                "False" | "false" => ParamValue::Bool(false),
                _ => return Err(bad()),
            },
            Domain::Cid => match self.names.get(tok) {
                Some(&id) => ParamValue::Cid(CuboidId(id)),
                None if is_ident(tok) => {
                    return Err(LangError::DanglingCuboid {
                        name: tok.to_string(),
                        line: Some(line),
                    })
                }
                None => return Err(bad()),
            },
            Domain::Face => {
                let f = Face::ALL
                    .into_iter()
                    .find(|f| f.name() == tok)
                    .ok_or_else(bad)?;
                ParamValue::Discrete(Symbol::Face(f))
            }
            Domain::Axis => {
                let a = match tok {
                    "X" => Axis::X,
                    "Y" => Axis::Y,
                    "Z" => Axis::Z,
                    _ => return Err(bad()),
                };
                ParamValue::Discrete(Symbol::Axis(a))
            }
            Domain::Count => ParamValue::Discrete(Symbol::Count(tok.parse().map_err(|_| bad())?)),
        })
    }

    fn run(mut self, text: &str) -> Result<Program, LangError> {
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let src = match raw.find('#') {
                Some(h) => &raw[..h],
                None => raw,
            };
            if src.trim().is_empty() {
                continue;
            }
            let stmt = split_stmt(src, lineno)?;
            let command = Command::from_name(stmt.func)
                .ok_or_else(|| syntax(lineno, 1, format!("unknown command `{}`", stmt.func)))?;
            let sig = command.signature();
            if sig.len() != stmt.args.len() {
                return Err(LangError::Arity {
                    command: command.name(),
                    expected: sig.len(),
                    found: stmt.args.len(),
                });
            }
            let params = sig
                .iter()
                .zip(&stmt.args)
                .map(|(&d, &(col, tok))| self.value(d, tok, lineno, col))
                .collect::<Result<Vec<_>, _>>()?;
            let line = Line::new(command, params).map_err(|e| LangError::AtLine {
                line: lineno,
                source: Box::new(e),
            })?;
            self.push(stmt.decl, line, lineno)?;
        }
        let bbox = self
            .bbox
            .ok_or_else(|| LangError::Structure("missing bbox declaration".into()))?;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (lineno, cuboid, attach, sym) in self.blocks {
            if attach.is_empty() {
                return Err(LangError::Unattached { line: lineno });
            }
            blocks.push(PBlock::new(cuboid, attach, sym).map_err(|e| LangError::AtLine {
                line: lineno,
                source: Box::new(e),
            })?);
        }
        Program::new(bbox, blocks)
    }

    fn push(&mut self, decl: Option<&str>, line: Line, lineno: usize) -> Result<(), LangError> {
        let structure = |msg: &str| LangError::AtLine {
            line: lineno,
            source: Box::new(LangError::Structure(msg.into())),
        };
        match (decl, line.command) {
            (Some(name), Command::Cuboid) => {
                if self.names.contains_key(name) {
                    return Err(structure("cuboid name declared twice"));
                }
                if self.bbox.is_none() {
                    if name != "bbox" {
                        return Err(structure("first declaration must be `bbox`"));
                    }
                    self.names.insert(name.to_string(), 0);
                    self.bbox = Some(line);
                } else {
                    let id = self.blocks.len() + 1;
                    self.names.insert(name.to_string(), id);
                    self.blocks.push((lineno, line, Vec::new(), None));
                }
                Ok(())
            }
            (Some(_), _) => Err(structure("only Cuboid lines may be assigned")),
            (None, Command::Cuboid) => Err(structure("Cuboid must be assigned to a name")),
            (None, cmd) => {
                let Some((_, _, attach, sym)) = self.blocks.last_mut() else {
                    return Err(structure("statement before the first cuboid block"));
                };
                if sym.is_some() {
                    return Err(structure("no statements allowed after a symmetry line"));
                }
                match cmd {
                    Command::Attach | Command::Squeeze => {
                        if attach.len() >= 2
                            || attach.iter().any(|l| l.command == Command::Squeeze)
                            || (cmd == Command::Squeeze && !attach.is_empty())
                        {
                            return Err(structure("too many attachments in block"));
                        }
                        attach.push(line);
                    }
                    _ => {
                        if attach.is_empty() {
                            return Err(LangError::Unattached { line: lineno });
                        }
                        *sym = Some(line);
                    }
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "bbox = Cuboid(1.0,1.0,1.0,True)\nc1 = Cuboid(0.1,0.5,0.1,True)\nattach(bbox,0.5,0.0,0.5,0.5,0.0,0.5)";

    #[test]
    fn parses_minimal_program() {
        let p = Program::parse(MINIMAL).unwrap();
        assert_eq!(p.blocks().len(), 1);
        assert_eq!(p.num_lines(), 3);
        assert_eq!(p.blocks()[0].attach()[0].cid(0), CuboidId::BBOX);
    }

    #[test]
    fn print_then_parse_is_identity() {
        let p = Program::parse(MINIMAL).unwrap();
        let text = print_program(&p);
        assert_eq!(Program::parse(&text).unwrap(), p);
        assert_eq!(
            text,
            "bbox = Cuboid(1.0000, 1.0000, 1.0000, True)\n\
             c1 = Cuboid(0.1000, 0.5000, 0.1000, True)\n\
             attach(bbox, 0.5000, 0.0000, 0.5000, 0.5000, 0.0000, 0.5000)\n"
        );
    }

    #[test]
    fn floats_use_four_decimals() {
        let p = Program::parse("bbox = Cuboid(0.05, 1, 1, True)").unwrap();
        assert!(print_program(&p).contains("0.0500"));
    }

    #[test]
    fn bbox_only_program() {
        let p = Program::parse("bbox = Cuboid(1, 2, 3, True)\n").unwrap();
        assert!(p.blocks().is_empty());
        assert_eq!(print_program(&p), "bbox = Cuboid(1.0000, 2.0000, 3.0000, True)\n");
    }

    #[test]
    fn dangling_reference_is_rejected() {
        let text = format!("{MINIMAL}\nc2 = Cuboid(0.1,0.1,0.1,True)\nattach(c7,0.5,0.5,0.5,0.5,0.5,0.5)");
        match Program::parse(&text) {
            Err(LangError::DanglingCuboid { name, line }) => {
                assert_eq!(name, "c7");
                assert_eq!(line, Some(5));
            }
            other => panic!("expected dangling id error, got {other:?}"),
        }
    }

    #[test]
    fn unattached_cuboid_is_rejected() {
        let text = "bbox = Cuboid(1,1,1,True)\nc1 = Cuboid(0.1,0.1,0.1,True)\n";
        assert!(matches!(Program::parse(text), Err(LangError::Unattached { line: 2 })));
    }

    #[test]
    fn arity_and_domain_errors() {
        let text = "bbox = Cuboid(1,1,1,True)\nc1 = Cuboid(0.1,0.1,True)\n";
        assert!(matches!(Program::parse(text), Err(LangError::Arity { expected: 4, found: 3, .. })));
        let text = "bbox = Cuboid(1,1,1,True)\nc1 = Cuboid(0.1,0.1,0.1,True)\nattach(bbox,1.5,0,0,0,0,0)";
        assert!(matches!(Program::parse(text), Err(LangError::AtLine { line: 3, .. })));
    }

    #[test]
    fn syntax_error_reports_position() {
        let text = "bbox = Cuboid(1,1,1,True)\nc1 = Cuboid(0.1, abc, 0.1, True)\n";
        match Program::parse(text) {
            Err(LangError::Syntax { line, col, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(col, 18);
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn parses_every_command() {
        let text = "bbox = Cuboid(1,1,1,True)\n\
                    c1 = Cuboid(1,0.1,1,True)\n\
                    attach(bbox,0.5,0,0.5,0.5,0,0.5)\n\
                    c2 = Cuboid(1,0.1,1,True)\n\
                    attach(bbox,0.5,1,0.5,0.5,1,0.5)\n\
                    c3 = Cuboid(0.1,0.8,0.1,False)\n\
                    squeeze(c1,c2,top,0.2,0.5)\n\
                    reflect(X)\n\
                    c4 = Cuboid(0.1,0.1,0.1,True)\n\
                    attach(c3,0.5,0.5,0.5,0.5,0.5,0.5)\n\
                    translate(Y,3,0.5)\n";
        let p = Program::parse(text).unwrap();
        assert_eq!(p.blocks().len(), 4);
        assert_eq!(p.dependencies(2), vec![0, 1]);
        assert_eq!(p.dependencies(3), vec![2]);
        assert_eq!(Program::parse(&print_program(&p)).unwrap(), p);
    }

    #[test]
    fn counts_for_minimal_program() {
        let p = Program::parse(MINIMAL).unwrap();
        let c = count_params(&p);
        assert_eq!((c.fns, c.float, c.boolean, c.cid, c.discrete), (3.0, 12.0, 2.0, 1.0, 0.0));
        let bbox_only = Program::parse("bbox = Cuboid(1,1,1,True)").unwrap();
        let c = count_params(&bbox_only);
        assert_eq!((c.fns, c.float, c.boolean), (1.0, 3.0, 1.0));
    }

    #[test]
    fn squeeze_contributes_one_discrete() {
        let text = "bbox = Cuboid(1,1,1,True)\n\
                    c1 = Cuboid(0.1,0.1,0.1,True)\n\
                    squeeze(bbox,bbox,top,0.5,0.5)\n";
        let c = count_params(&Program::parse(text).unwrap());
        assert_eq!(c.discrete, 1.0);
        assert_eq!(c.cid, 2.0);
    }

    #[test]
    fn reorder_renumbers_references() {
        let text = "bbox = Cuboid(1,1,1,True)\n\
                    c1 = Cuboid(0.1,0.1,0.1,True)\n\
                    attach(bbox,0.5,0,0.5,0.5,0,0.5)\n\
                    c2 = Cuboid(0.2,0.2,0.2,True)\n\
                    attach(bbox,0.5,0,0.5,0.2,0,0.5)\n\
                    c3 = Cuboid(0.1,0.1,0.1,True)\n\
                    attach(c1,0.5,0,0.5,0.5,1,0.5)\n";
        let p = Program::parse(text).unwrap();
        let q = p.reorder(&[1, 0, 2]).unwrap();
        assert_eq!(q.blocks()[2].attach()[0].cid(0), CuboidId(2));
        assert!(p.reorder(&[2, 0, 1]).is_err());
        assert!(p.reorder(&[0, 0, 1]).is_err());
    }

    #[test]
    fn from_lines_regroups_blocks() {
        let text = "bbox = Cuboid(1,1,1,True)\n\
                    c1 = Cuboid(0.1,0.1,0.1,True)\n\
                    attach(bbox,0.5,0,0.5,0.5,0,0.5)\n\
                    attach(bbox,0.5,1,0.5,0.5,1,0.5)\n\
                    reflect(X)\n\
                    c2 = Cuboid(0.2,0.2,0.2,True)\n\
                    squeeze(bbox,c1,top,0.5,0.5)\n";
        let p = Program::parse(text).unwrap();
        assert_eq!(Program::from_lines(&p.lines()).unwrap(), p);
        let mut lines = p.lines();
        lines.swap(1, 2);
        assert!(Program::from_lines(&lines).is_err());
    }

    mod props {
        use super::super::*;
        use crate::arb::arb_program;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn print_parse_round_trip(p in arb_program(6)) {
                let text = print_program(&p);
                prop_assert_eq!(Program::parse(&text).unwrap(), p);
            }

            #[test]
            fn from_lines_inverts_lines(p in arb_program(6)) {
                prop_assert_eq!(Program::from_lines(&p.lines()).unwrap(), p);
            }

            #[test]
            fn counts_are_additive_over_blocks(p in arb_program(6)) {
                let mut total = ParamCounts::of_lines([p.bbox()]);
                for b in p.blocks() {
                    total.add(&ParamCounts::of_lines(b.lines()));
                }
                prop_assert_eq!(total, count_params(&p));
                prop_assert_eq!(total.fns as usize, p.num_lines());
            }
        }
    }
}
