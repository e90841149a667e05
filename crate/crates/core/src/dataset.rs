//! Program corpora with their valid orderings.

use crate::error::{LangError, OrderError};
use crate::lang::{Command, Line, Program};
use crate::order::{enumerate_valid_orders, OrderingSet};

/// A program re-indexed under one of its orders.
#[derive(Clone, Debug)]
pub struct OrderedView {
    pub order: Vec<usize>,
    pub lines: Vec<Line>,
    /// `next_cuboid[i]` is the id the next `Cuboid` line at or after position
    /// `i` declares. Has one more entry than `lines`.
    pub next_cuboid: Vec<usize>,
    /// Whether each line starts a block (the bbox counts as one).
    pub block_start: Vec<bool>,
    /// Commands and cuboid references of every line.
    pub signature: String,
}

impl OrderedView {
    pub fn new(p: &Program, order: &[usize]) -> Result<OrderedView, LangError> {
        let q = p.reorder(order)?;
        let lines = q.lines();
        let mut next_cuboid = Vec::with_capacity(lines.len() + 1);
        let mut n = 0;
        for l in &lines {
            next_cuboid.push(n);
            if l.command == Command::Cuboid {
                n += 1;
            }
        }
        next_cuboid.push(n);
        let block_start = lines.iter().map(|l| l.command == Command::Cuboid).collect();
        Ok(OrderedView {
            order: order.to_vec(),
            signature: signature(&lines),
            lines,
            next_cuboid,
            block_start,
        })
    }

    pub fn bbox(&self) -> [f64; 3] {
        let b = &self.lines[0];
        [b.float(0), b.float(1), b.float(2)]
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }
}

fn signature(lines: &[Line]) -> String {
    let mut s = String::new();
    for l in lines {
        s.push_str(l.command.name());
        for c in l.references() {
            s.push(':');
            s.push_str(&c.0.to_string());
        }
        s.push(';');
    }
    s
}

/// A program together with the orders it may be refactored under.
#[derive(Clone, Debug)]
pub struct Entry {
    pub name: String,
    program: Program,
    orders: OrderingSet,
    views: Vec<OrderedView>,
}

impl Entry {
    pub fn new(name: impl Into<String>, program: Program, orders: OrderingSet) -> Result<Entry, LangError> {
        let views = orders
            .orders()
            .iter()
            .map(|o| OrderedView::new(&program, o))
            .collect::<Result<_, _>>()?;
        Ok(Entry {
            name: name.into(),
            program,
            orders,
            views,
        })
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn orders(&self) -> &OrderingSet {
        &self.orders
    }

    /// One view per order, in the order of [`Entry::orders`].
    pub fn views(&self) -> &[OrderedView] {
        &self.views
    }

    pub fn view(&self, order: &[usize]) -> Option<&OrderedView> {
        self.views.iter().find(|v| v.order == order)
    }

    /// Keeps only the orders for which `keep` holds (never all removed).
    pub fn retain_orders(&mut self, mut keep: impl FnMut(&[usize]) -> bool) {
        self.orders.retain(|_, o| keep(o));
        let orders = &self.orders;
        self.views.retain(|v| orders.contains(&v.order));
    }
}

/// The corpus `D`: a list of `(program, orders)` entries.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    entries: Vec<Entry>,
}

impl Dataset {
    pub fn new(entries: Vec<Entry>) -> Dataset {
        Dataset { entries }
    }

    /// Builds entries, enumerating up to `max_orders` valid orders each.
    pub fn from_programs(
        programs: impl IntoIterator<Item = (String, Program)>,
        max_orders: usize,
    ) -> Result<Dataset, OrderError> {
        let mut entries = Vec::new();
        for (name, p) in programs {
            let orders = enumerate_valid_orders(&p, max_orders)?;
            entries.push(Entry::new(name, p, orders)?);
        }
        Ok(Dataset { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Entry] {
        &mut self.entries
    }

    pub fn get(&self, i: usize) -> Option<&Entry> {
        self.entries.get(i)
    }

    /// The entries at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            entries: indices.iter().map(|&i| self.entries[i].clone()).collect(),
        }
    }
}
