//! Valid block orderings of a program.
//!
//! Blocks form a dependency DAG (a block depends on every block whose cuboid
//! it references). Every topological order of that DAG is a candidate; a
//! candidate is kept when executing the re-indexed program gives the same
//! geometry as the original.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::OrderError;
use crate::exec::execute;
use crate::geometry::geometrically_equal;
use crate::dataset::Dataset;
use crate::lang::Program;
use crate::library::Library;
use crate::search::{best_per_order, SearchConfig};

pub const DEFAULT_MAX_ORDERS: usize = 24;

/// Tolerance for the geometric validity check.
pub const ORDER_TOLERANCE: f64 = 1e-4;

const SAMPLING_SEED: u64 = 0x0bde_75ee_d000_0001;

/// Valid orderings of a program's blocks. Each order lists old block indices
/// in their new sequence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderingSet {
    orders: Vec<Vec<usize>>,
    canonical_index: usize,
}

impl OrderingSet {
    /// Builds a set from explicit orders. Panics if `orders` is empty.
    pub fn new(orders: Vec<Vec<usize>>) -> OrderingSet {
        assert!(!orders.is_empty(), "an ordering set is never empty");
        let canonical_index = canonical_index(&orders);
        OrderingSet {
            orders,
            canonical_index,
        }
    }

    /// Just the declaration order.
    pub fn identity(n_blocks: usize) -> OrderingSet {
        OrderingSet::new(vec![(0..n_blocks).collect()])
    }

    pub fn orders(&self) -> &[Vec<usize>] {
        &self.orders
    }

    pub fn len(&self) -> usize {
        self.orders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orders.is_empty()
    }

    pub fn canonical_index(&self) -> usize {
        self.canonical_index
    }

    pub fn contains(&self, order: &[usize]) -> bool {
        self.orders.iter().any(|o| o == order)
    }

    /// Keeps the orders for which `keep` holds. If none would remain, the
    /// canonical order is kept.
    pub fn retain(&mut self, mut keep: impl FnMut(usize, &[usize]) -> bool) {
        let canonical = self.orders[self.canonical_index].clone();
        let mut i = 0;
        self.orders.retain(|o| {
            let k = keep(i, o);
            i += 1;
            k
        });
        if self.orders.is_empty() {
            self.orders.push(canonical);
        }
        self.canonical_index = canonical_index(&self.orders);
    }
}

fn canonical_index(orders: &[Vec<usize>]) -> usize {
    orders
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// The most canonical order: lexicographically smallest sequence of original
/// block indices, i.e. the one closest to declaration order.
pub fn canonical_order(os: &OrderingSet) -> &[usize] {
    &os.orders[os.canonical_index]
}

struct Dag {
    deps: Vec<Vec<usize>>,
    dependents: Vec<Vec<usize>>,
}

impl Dag {
    fn of(p: &Program) -> Dag {
        let n = p.blocks().len();
        let deps: Vec<Vec<usize>> = (0..n).map(|i| p.dependencies(i)).collect();
        let mut dependents = vec![Vec::new(); n];
        for (i, ds) in deps.iter().enumerate() {
            for &d in ds {
                dependents[d].push(i);
            }
        }
        Dag { deps, dependents }
    }

    fn indegrees(&self) -> Vec<usize> {
        self.deps.iter().map(Vec::len).collect()
    }

    fn check_acyclic(&self) -> Result<(), OrderError> {
        let mut indeg = self.indegrees();
        let mut stack: Vec<usize> = (0..indeg.len()).filter(|&i| indeg[i] == 0).collect();
        let mut seen = 0;
        while let Some(v) = stack.pop() {
            seen += 1;
            for &w in &self.dependents[v] {
                indeg[w] -= 1;
                if indeg[w] == 0 {
                    stack.push(w);
                }
            }
        }
        if seen == indeg.len() {
            Ok(())
        } else {
            Err(OrderError::Cycle)
        }
    }

    /// Topological orders in lexicographic order, at most `limit` of them.
    fn lexicographic(&self, limit: usize) -> Vec<Vec<usize>> {
        fn rec(dag: &Dag, indeg: &mut [usize], used: &mut [bool], cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>, limit: usize) {
            if out.len() >= limit {
                return;
            }
            if cur.len() == indeg.len() {
                out.push(cur.clone());
                return;
            }
            for v in 0..indeg.len() {
                if used[v] || indeg[v] != 0 {
                    continue;
                }
                used[v] = true;
                cur.push(v);
                for &w in &dag.dependents[v] {
                    indeg[w] -= 1;
                }
                rec(dag, indeg, used, cur, out, limit);
                for &w in &dag.dependents[v] {
                    indeg[w] += 1;
                }
                cur.pop();
                used[v] = false;
                if out.len() >= limit {
                    return;
                }
            }
        }
        let mut indeg = self.indegrees();
        let mut used = vec![false; indeg.len()];
        let mut out = Vec::new();
        rec(self, &mut indeg, &mut used, &mut Vec::new(), &mut out, limit);
        out
    }

    fn random(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut indeg = self.indegrees();
        let mut ready: Vec<usize> = (0..indeg.len()).filter(|&i| indeg[i] == 0).collect();
        let mut out = Vec::with_capacity(indeg.len());
        while let Some(&v) = ready.choose(rng) {
            ready.retain(|&x| x != v);
            out.push(v);
            for &w in &self.dependents[v] {
                indeg[w] -= 1;
                if indeg[w] == 0 {
                    ready.push(w);
                }
            }
            ready.sort_unstable();
        }
        out
    }
}

/// Enumerates valid orders, at most `max_orders` of them. When the DAG has
/// more topological orders than that, the declaration order is kept and the
/// rest are sampled with a fixed seed, so structurally identical programs
/// get identical candidate sets.
pub fn enumerate_valid_orders(p: &Program, max_orders: usize) -> Result<OrderingSet, OrderError> {
    let max_orders = max_orders.max(1);
    let dag = Dag::of(p);
    dag.check_acyclic()?;
    let mut candidates = dag.lexicographic(max_orders + 1);
    if candidates.len() > max_orders {
        let mut rng = ChaCha8Rng::seed_from_u64(SAMPLING_SEED);
        candidates.truncate(1);
        let mut attempts = 0;
        while candidates.len() < max_orders && attempts < 50 * max_orders {
            attempts += 1;
            let o = dag.random(&mut rng);
            if !candidates.contains(&o) {
                candidates.push(o);
            }
        }
        candidates.sort();
    }
    let reference = execute::<f64>(p)?;
    let mut orders = Vec::with_capacity(candidates.len());
    for o in candidates {
        let q = p.reorder(&o)?;
        if geometrically_equal(&execute::<f64>(&q)?, &reference, ORDER_TOLERANCE) {
            orders.push(o);
        }
    }
    if orders.is_empty() {
        orders.push((0..p.blocks().len()).collect());
    }
    Ok(OrderingSet::new(orders))
}

/// Indices of the orders whose cost is within `tau` of the cheapest.
pub fn orders_within(costs: &[f64], tau: f64) -> Vec<usize> {
    let best = costs.iter().copied().fold(f64::INFINITY, f64::min);
    (0..costs.len()).filter(|&i| costs[i] <= best + tau).collect()
}

/// Drops, per program, the orders whose best refactoring costs more than
/// `tau` above that of the program's best order.
pub fn filter_bad_orders(d: &Dataset, lib: &Library, tau: f64, cfg: &SearchConfig) -> Dataset {
    let costs: Vec<Vec<f64>> = d
        .entries()
        .par_iter()
        .map(|e| {
            best_per_order(e, lib, cfg)
                .map(|rps| rps.iter().map(|rp| rp.cost(lib, &cfg.weights)).collect())
                .unwrap_or_else(|_| vec![0.0; e.orders().len()])
        })
        .collect();
    let mut out = d.clone();
    for (e, c) in out.entries_mut().iter_mut().zip(costs) {
        let keep = orders_within(&c, tau);
        let orders: Vec<Vec<usize>> = keep.iter().map(|&i| e.orders().orders()[i].clone()).collect();
        e.retain_orders(|o| orders.iter().any(|k| k == o));
    }
    out
}
