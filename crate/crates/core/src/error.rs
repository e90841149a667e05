use thiserror::Error;

#[derive(Debug, Error)]
pub enum LangError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("`{command}` takes {expected} arguments, found {found}")]
    Arity {
        command: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("`{command}` slot {slot}: value {value} outside its domain")]
    Domain {
        command: &'static str,
        slot: usize,
        value: String,
    },
    #[error("reference to undeclared cuboid `{name}`{}", line.map(|l| format!(" on line {l}")).unwrap_or_default())]
    DanglingCuboid { name: String, line: Option<usize> },
    #[error("cuboid declared on line {line} is never attached")]
    Unattached { line: usize },
    #[error("{0}")]
    Structure(String),
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<LangError>,
    },
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("attach to cuboid {0} before it is placed")]
    Unplaced(usize),
    #[error("cuboid {0} attached more than twice")]
    TooManyAttachments(usize),
    #[error("symmetry copy of cuboid {0} does not touch the bounding box")]
    CopyOutsideBox(usize),
    #[error(transparent)]
    Lang(#[from] LangError),
}

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("`{name}` takes {expected} arguments, found {found}")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("`{name}` argument {slot}: {value} is not a valid {domain}")]
    Argument {
        name: String,
        slot: usize,
        domain: String,
        value: String,
    },
    #[error("unknown function id {0}")]
    UnknownFunction(usize),
    #[error("malformed macro `{name}`: {msg}")]
    Malformed { name: String, msg: String },
    #[error("no refactoring supplied for program {0}")]
    MissingRefactoring(usize),
    #[error(transparent)]
    Lang(#[from] LangError),
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("program has no valid orderings")]
    NoOrders,
    #[error("no covering of line {0} exists")]
    NoCover(usize),
    #[error("exhaustive search limited to {max_lines} lines and {max_fns} functions (got {lines}, {fns})")]
    TooLarge {
        lines: usize,
        fns: usize,
        max_lines: usize,
        max_fns: usize,
    },
    #[error(transparent)]
    Lang(#[from] LangError),
}

#[derive(Debug, Error)]
pub enum OrderError {
    #[error("block dependency graph has a cycle")]
    Cycle,
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Lang(#[from] LangError),
}
