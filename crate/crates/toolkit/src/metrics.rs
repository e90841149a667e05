//! Compression metrics over libraries.

use serde::{Deserialize, Serialize};

use shape_macros::dataset::Dataset;
use shape_macros::library::{Library, ObjectiveWeights, RefactoredProgram};
use shape_macros::error::SearchError;
use shape_macros::search::{best_programs, SearchConfig};

use crate::corpus::{planted_lines, Corpus};

/// One row of a compression table. Counts are means over the corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub f: f64,
    pub library_size: usize,
    pub fns: f64,
    pub cid: f64,
    pub float: f64,
    pub discrete: f64,
    pub boolean: f64,
    pub cont_error: f64,
}

impl MetricsRow {
    pub fn from_programs(method: &str, lib: &Library, programs: &[RefactoredProgram], w: &ObjectiveWeights) -> MetricsRow {
        let n = programs.len().max(1) as f64;
        let mut row = MetricsRow {
            method: method.to_string(),
            f: shape_macros::library::objective_of(lib, w, programs),
            library_size: lib.len(),
            fns: 0.0,
            cid: 0.0,
            float: 0.0,
            discrete: 0.0,
            boolean: 0.0,
            cont_error: 0.0,
        };
        for rp in programs {
            let c = rp.counts(lib);
            row.fns += c.fns / n;
            row.cid += c.cid / n;
            row.float += c.float / n;
            row.discrete += c.discrete / n;
            row.boolean += c.boolean / n;
            row.cont_error += rp.cont_error / n;
        }
        row
    }

    /// The objective rebuilt from the row's own columns.
    pub fn recomputed_f(&self, w: &ObjectiveWeights) -> f64 {
        w.n * self.library_size as f64
            + w.fns * self.fns
            + w.cid * self.cid
            + w.float * self.float
            + w.discrete * self.discrete
            + w.boolean * self.boolean
            + w.error * self.cont_error
    }
}

/// One row per library, each refactoring the full dataset.
pub fn compression_report(
    d: &Dataset,
    libs: &[(String, Library)],
    search: &SearchConfig,
) -> Result<Vec<MetricsRow>, SearchError> {
    libs.iter()
        .map(|(name, lib)| {
            let programs = best_programs(d, lib, search)?;
            Ok(MetricsRow::from_programs(name, lib, &programs, &search.weights))
        })
        .collect()
}

pub fn markdown_table(rows: &[MetricsRow]) -> String {
    let mut out = String::from("| method | f | |L| | fn | cid | f | d | b | error |\n|---|---|---|---|---|---|---|---|---|\n");
    for r in rows {
        out += &format!(
            "| {} | {:.3} | {} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} | {:.4} |\n",
            r.method, r.f, r.library_size, r.fns, r.cid, r.float, r.discrete, r.boolean, r.cont_error
        );
    }
    out
}

/// Line span `[start, end)` of every call, in the call's order.
pub fn call_spans(rp: &RefactoredProgram, lib: &Library) -> Vec<(usize, usize, usize)> {
    let mut pos = 0;
    rp.calls
        .iter()
        .map(|c| {
            let len = lib.functions()[c.function].len();
            let span = (c.function, pos, pos + len);
            pos += len;
            span
        })
        .collect()
}

/// Planted programs whose refactoring has one macro call spanning every
/// planted line. Returns `(covered, planted)`.
pub fn planted_coverage(corpus: &Corpus, lib: &Library, programs: &[RefactoredProgram]) -> (usize, usize) {
    let mut covered = 0;
    let mut total = 0;
    for (i, p) in corpus.planted() {
        total += 1;
        let rp = &programs[i];
        let lines = planted_lines(p, &rp.order);
        let (Some(&lo), Some(&hi)) = (lines.first(), lines.last()) else {
            continue;
        };
        let hit = call_spans(rp, lib)
            .iter()
            .any(|&(f, s, e)| !Library::is_base(f) && s <= lo && hi < e);
        covered += usize::from(hit);
    }
    (covered, total)
}
