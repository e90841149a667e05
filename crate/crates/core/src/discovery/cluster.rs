//! Cluster formation: a seed program under one of its orders, plus
//! structurally matching programs sampled by parameter similarity.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::Serialize;

use crate::dataset::{Dataset, OrderedView};
use crate::lang::ParamValue;

/// Floor applied to sampling weights so the farthest match stays possible.
pub const MIN_CLUSTER_WEIGHT: f64 = 0.01;

/// A program under one of its orders.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Member {
    pub entry: usize,
    pub view: usize,
}

#[derive(Clone, Debug)]
pub struct ClusterInfo {
    pub seed: Member,
    /// Seed first, then the sampled matches in entry order.
    pub members: Vec<Member>,
    /// Distance of each member's continuous parameters to the seed's.
    pub norms: Vec<f64>,
    pub max_norm: f64,
}

impl ClusterInfo {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn views<'a>(&self, d: &'a Dataset) -> Vec<&'a OrderedView> {
        self.members
            .iter()
            .map(|m| &d.entries()[m.entry].views()[m.view])
            .collect()
    }
}

/// Programs grouped by the commands and cuboid references of their lines.
#[derive(Clone, Debug, Default)]
pub struct SignatureIndex {
    map: BTreeMap<String, Vec<Member>>,
}

impl SignatureIndex {
    pub fn build(d: &Dataset) -> SignatureIndex {
        let mut map: BTreeMap<String, Vec<Member>> = BTreeMap::new();
        for (entry, e) in d.entries().iter().enumerate() {
            for (view, v) in e.views().iter().enumerate() {
                map.entry(v.signature.clone()).or_default().push(Member { entry, view });
            }
        }
        SignatureIndex { map }
    }

    pub fn matches(&self, signature: &str) -> &[Member] {
        self.map.get(signature).map_or(&[], Vec::as_slice)
    }
}

/// L2 norm of the difference of the continuous parameters of two views with
/// the same structure.
pub fn param_distance(a: &OrderedView, b: &OrderedView) -> f64 {
    let mut s = 0.0;
    for (la, lb) in a.lines.iter().zip(&b.lines) {
        for (x, y) in la.params.iter().zip(&lb.params) {
            if let (ParamValue::Float(x), ParamValue::Float(y)) = (x, y) {
                s += (x - y) * (x - y);
            }
        }
    }
    s.sqrt()
}

/// Sampling weight `max(1 - n / n*, floor)` of each match, or uniform weights.
pub fn cluster_weights(norms: &[f64], uniform: bool) -> Vec<f64> {
    let max = norms.iter().copied().fold(0.0, f64::max);
    norms
        .iter()
        .map(|&n| {
            if uniform || max <= 0.0 {
                1.0
            } else {
                (1.0 - n / max).max(MIN_CLUSTER_WEIGHT)
            }
        })
        .collect()
}

/// Samples a seed `(P, o)` uniformly, finds all programs with a matching
/// order, and keeps the seed plus up to `k - 1` matches drawn without
/// replacement by parameter similarity.
pub fn form_cluster(d: &Dataset, index: &SignatureIndex, k: usize, uniform: bool, rng: &mut impl Rng) -> ClusterInfo {
    let entry = rng.random_range(0..d.len());
    let view = rng.random_range(0..d.entries()[entry].views().len());
    let seed = Member { entry, view };
    let seed_view = &d.entries()[entry].views()[view];
    let mut candidates: Vec<Member> = Vec::new();
    for m in index.matches(&seed_view.signature) {
        if m.entry != entry && candidates.last().is_none_or(|c| c.entry != m.entry) {
            candidates.push(*m);
        }
    }
    let view_of = |m: &Member| &d.entries()[m.entry].views()[m.view];
    let norms: Vec<f64> = candidates.iter().map(|m| param_distance(seed_view, view_of(m))).collect();
    let max_norm = norms.iter().copied().fold(0.0, f64::max);
    let weights = cluster_weights(&norms, uniform);
    let idx: Vec<usize> = (0..candidates.len()).collect();
    let mut chosen: Vec<usize> = idx
        .choose_multiple_weighted(rng, k.saturating_sub(1), |&i| weights[i])
        .map(|it| it.copied().collect())
        .unwrap_or_default();
    chosen.sort_unstable();
    let mut members = vec![seed];
    let mut member_norms = vec![0.0];
    for i in chosen {
        members.push(candidates[i]);
        member_norms.push(norms[i]);
    }
    ClusterInfo {
        seed,
        members,
        norms: member_norms,
        max_norm,
    }
}
