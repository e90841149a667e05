//! Macro discovery: alternating proposal and integration rounds.
//!
//! Each round samples clusters of structurally matching programs, abstracts
//! every cluster into one shared parameterization, proposes windows of it as
//! candidate macros, generalizes them, and then greedily integrates the top
//! ranked candidates into the library while the objective improves.

mod abstraction;
mod affine;
mod baseline;
mod cluster;
mod integration;
mod proposal;
mod rank;

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::lang::{Command, ParamCounts};
use crate::library::{Library, RefactoredProgram};
use crate::order::filter_bad_orders;
use crate::search::{SearchConfig, SearchStrategy};

pub use abstraction::{find_abstracted_program, required_support, AbstractProgram, Segment};
pub use baseline::{
    discrete_constant, float_constant, frequent_sequences, run_baseline, BaselineResult, BASELINE_AGREEMENT,
    BASELINE_BAND, BASELINE_MIN_FREQUENCY,
};
pub use cluster::{cluster_weights, form_cluster, param_distance, ClusterInfo, Member, SignatureIndex, MIN_CLUSTER_WEIGHT};
pub use integration::{
    evaluate, infrequent_functions, integration_step, optimize, removal_pass, usage, Action, Evaluated, Outcome,
    IMPROVEMENT_TOL,
};
pub use proposal::{
    free_slots, generalize_macros, merge_candidates, propose_macros, window_macro, CandidateMacro, Covered,
    GeneralizationGraph, Validity, MAX_BODY, MAX_FORMALS, MIN_BODY, MIN_CONSTRAINED_DOF,
};
pub use rank::{
    cover_cost, gain, generalizes_at, occurrence_gain, occurrence_score, rank_candidates, score, Ranked, MAX_GAIN_SAMPLES,
};

/// Switches that disable parts of the algorithm.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub uniform_cluster_sampling: bool,
    pub disable_generalize: bool,
    pub disable_order_filter: bool,
    pub disable_validity_criteria: bool,
    pub best_first_instead_of_beam: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscoveryConfig {
    pub num_rounds: usize,
    pub num_proposal_steps: usize,
    pub num_integration_steps: usize,
    pub cluster_size: usize,
    pub p_thresh: f64,
    pub gen_edits: usize,
    /// Proposals (by rank) whose generalizations are added to the pool.
    pub generalize_top: usize,
    pub subsample_size: usize,
    pub tau_o: f64,
    pub infrequent_drop_ratio: f64,
    /// A round must lower the subsample objective by more than this to
    /// continue.
    pub min_improvement: f64,
    pub seed: u64,
    pub search: SearchConfig,
    pub ablation: Ablation,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            num_rounds: 5,
            num_proposal_steps: 10_000,
            num_integration_steps: 20,
            cluster_size: 20,
            p_thresh: 0.7,
            gen_edits: 2,
            generalize_top: 100,
            subsample_size: 100,
            tau_o: 1.0,
            infrequent_drop_ratio: 0.5,
            min_improvement: 1e-6,
            seed: 0,
            search: SearchConfig::default(),
            ablation: Ablation::default(),
        }
    }
}

impl DiscoveryConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.p_thresh > 0.0 && self.p_thresh <= 1.0) {
            return Err(format!("p_thresh must be in (0, 1], got {}", self.p_thresh));
        }
        if self.cluster_size == 0 || self.subsample_size == 0 || self.search.beam_width == 0 {
            return Err("cluster_size, subsample_size and beam_width must be positive".into());
        }
        if !(self.tau_o >= 0.0 && self.infrequent_drop_ratio > 0.0 && self.search.eps_match >= 0.0) {
            return Err("tau_o, infrequent_drop_ratio and eps_match must be nonnegative".into());
        }
        Ok(())
    }

    /// Search settings after applying the ablation switches.
    pub fn search_config(&self) -> SearchConfig {
        let mut s = self.search;
        if self.ablation.best_first_instead_of_beam {
            s.strategy = SearchStrategy::BestFirst;
        }
        s
    }

    pub fn validity(&self) -> Validity {
        Validity {
            weights: self.search.weights,
            enabled: !self.ablation.disable_validity_criteria,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundReport {
    pub round: usize,
    pub f_subsample_before: f64,
    pub f_subsample_after: f64,
    /// Objective on the whole dataset after the round.
    pub f: f64,
    pub library_size: usize,
    /// Mean free parameters per program, by kind.
    pub counts: ParamCounts,
    pub proposals: usize,
    pub candidates: usize,
    pub actions: Vec<Action>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiscoveryReport {
    pub config: DiscoveryConfig,
    pub programs: usize,
    pub initial_f: f64,
    pub rounds: Vec<RoundReport>,
    pub final_f: f64,
    pub final_counts: ParamCounts,
    pub library: Vec<String>,
}

impl DiscoveryReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Timings {
    pub rounds_secs: Vec<f64>,
    pub total_secs: f64,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub library: Library,
    /// Best refactoring of each entry of `dataset`.
    pub programs: Vec<RefactoredProgram>,
    /// The input with bad orders filtered out.
    pub dataset: Dataset,
    pub report: DiscoveryReport,
    pub timings: Timings,
}

const SUBSAMPLE_STREAM: u64 = u64::MAX;

fn stream_seed(seed: u64, round: u64, step: u64) -> u64 {
    seed ^ round.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ step.wrapping_add(1).wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
}

/// Sorted indices of a uniform sample of `min(|D|, size)` entries.
pub fn subsample(n: usize, size: usize, seed: u64, round: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, round as u64, SUBSAMPLE_STREAM));
    let all: Vec<usize> = (0..n).collect();
    let mut s: Vec<usize> = all.choose_multiple(&mut rng, size.min(n)).copied().collect();
    s.sort_unstable();
    s
}

/// Mean counts per program.
pub fn mean_counts(lib: &Library, programs: &[RefactoredProgram]) -> ParamCounts {
    let mut c = ParamCounts::default();
    for p in programs {
        c.add(&p.counts(lib));
    }
    if programs.is_empty() {
        c
    } else {
        c.scale(1.0 / programs.len() as f64)
    }
}

/// Runs all proposal steps of one round and returns the merged proposals.
pub fn proposal_phase(d: &Dataset, lib: &Library, cfg: &DiscoveryConfig, round: usize) -> Vec<CandidateMacro> {
    let index = SignatureIndex::build(d);
    let names = lib.names();
    let validity = cfg.validity();
    let w = cfg.search.weights;
    let batches: Vec<Vec<CandidateMacro>> = (0..cfg.num_proposal_steps)
        .into_par_iter()
        .map(|step| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, round as u64, step as u64));
            let c = form_cluster(d, &index, cfg.cluster_size, cfg.ablation.uniform_cluster_sampling, &mut rng);
            let views = c.views(d);
            let abs = find_abstracted_program(&views, lib, cfg.p_thresh, cfg.search.eps_match, &w);
            propose_macros(&abs, &views, &c.members, &names, &validity, cfg.search.eps_match, step)
        })
        .collect();
    merge_candidates(batches.into_iter().flatten())
        .into_iter()
        .filter(|c| !lib.contains_key(&c.key()))
        .collect()
}

/// Proposals plus the generalizations of the best ranked ones.
pub fn candidate_pool(proposals: Vec<CandidateMacro>, lib: &Library, n: usize, cfg: &DiscoveryConfig) -> Vec<CandidateMacro> {
    if cfg.ablation.disable_generalize || cfg.gen_edits == 0 {
        return proposals;
    }
    let ranked = rank_candidates(&proposals, lib, n, &cfg.search.weights);
    let mut top = vec![false; proposals.len()];
    for r in ranked.iter().take(cfg.generalize_top) {
        top[r.index] = true;
    }
    let (sources, rest): (Vec<_>, Vec<_>) = proposals.into_iter().zip(top).partition(|(_, t)| *t);
    let graph = generalize_macros(sources.into_iter().map(|(c, _)| c).collect(), cfg.gen_edits, &cfg.validity());
    merge_candidates(graph.nodes.into_iter().chain(rest.into_iter().map(|(c, _)| c)))
        .into_iter()
        .filter(|c| !lib.contains_key(&c.key()))
        .collect()
}

/// Integrates candidates greedily by rank. Candidates start from their
/// symbolic score; before one is tried its score is recomputed on the lines
/// it covers in `data` under the current library. Scores only drop as the
/// library grows, so stale scores bound fresh ones from above.
pub fn integration_phase(
    pool: &[CandidateMacro],
    data: &Dataset,
    mut cur: Evaluated,
    d_sub: &Dataset,
    num_programs: usize,
    cfg: &DiscoveryConfig,
    round: usize,
    next_name: &mut usize,
) -> (Evaluated, Vec<Action>) {
    let search = cfg.search_config();
    let w = cfg.search.weights;
    let keys: Vec<String> = pool.iter().map(CandidateMacro::key).collect();
    let shapes: Vec<Vec<Command>> =
        pool.iter().map(|c| c.function.body.iter().map(|l| l.command).collect()).collect();
    let rescore = |lib: &Library, scores: &mut [f64], alive: &[bool]| {
        let fresh: Vec<f64> = pool
            .par_iter()
            .enumerate()
            .map(|(i, c)| if alive[i] { score(c, lib, num_programs, &w).score } else { 0.0 })
            .collect();
        scores.copy_from_slice(&fresh);
    };
    let mut alive = vec![true; pool.len()];
    let mut scores = vec![0.0; pool.len()];
    rescore(&cur.library, &mut scores, &alive);
    let mut log = Vec::new();
    for _ in 0..cfg.num_integration_steps {
        let mut order: Vec<usize> = (0..pool.len()).filter(|&i| alive[i] && scores[i] > 0.0).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| keys[a].cmp(&keys[b])));
        let mut best: Option<(usize, f64)> = None;
        for &i in &order {
            if let Some((b, s)) = best {
                if scores[i] < s || (scores[i] == s && keys[i] > keys[b]) {
                    break;
                }
            }
            let s = occurrence_score(&pool[i], data, &cur.library, num_programs, &search)
                .score
                .min(scores[i]);
            scores[i] = s;
            let better = match best {
                None => true,
                Some((b, bs)) => s > bs || (s == bs && keys[i] < keys[b]),
            };
            if s > 0.0 && better {
                best = Some((i, s));
            }
        }
        let Some((i, s)) = best else {
            break;
        };
        log::debug!("round {round}: trying score {s:.4} {}", keys[i]);
        alive[i] = false;
        let mut m = pool[i].function.clone();
        m.name = format!("m{round}_{next_name}");
        let (e, action) = integration_step(m, cur, d_sub, &search, cfg.infrequent_drop_ratio);
        cur = e;
        if action.outcome == Outcome::Rejected {
            let spots: BTreeSet<(usize, usize)> = pool[i].coverage.iter().map(|c| (c.entry, c.start)).collect();
            for j in 0..pool.len() {
                if shapes[j] == shapes[i] && pool[j].coverage.iter().any(|c| spots.contains(&(c.entry, c.start))) {
                    alive[j] = false;
                }
            }
        } else {
            *next_name += 1;
        }
        if action.outcome == Outcome::AddedWithRemoval {
            rescore(&cur.library, &mut scores, &alive);
        }
        log.push(action);
    }
    (cur, log)
}

/// Alternates proposal and integration rounds until the subsample objective
/// stops improving or `num_rounds` is reached.
pub fn run_shapemod(d: &Dataset, cfg: &DiscoveryConfig) -> RunResult {
    let start = Instant::now();
    let search = cfg.search_config();
    let mut data = d.clone();
    let mut full = evaluate(Library::base(), &data, &search);
    let initial_f = full.f;
    let mut rounds = Vec::new();
    let mut timings = Timings::default();
    let mut next_name = 0;
    for round in 0..cfg.num_rounds {
        let t = Instant::now();
        let lib = full.library.clone();
        let sub = data.subset(&subsample(data.len(), cfg.subsample_size, cfg.seed, round));
        let proposals = proposal_phase(&data, &lib, cfg, round);
        let n_proposals = proposals.len();
        let pool = candidate_pool(proposals, &lib, data.len(), cfg);
        let cur = evaluate(lib, &sub, &search);
        let f_before = cur.f;
        let (cur, mut actions) = integration_phase(&pool, &data, cur, &sub, data.len(), cfg, round, &mut next_name);
        let (cur, removals) = removal_pass(cur, &sub, &search);
        actions.extend(removals);
        if !cfg.ablation.disable_order_filter {
            data = filter_bad_orders(&data, &cur.library, cfg.tau_o, &search);
        }
        let f_after = cur.f;
        full = evaluate(cur.library, &data, &search);
        log::info!(
            "round {round}: f {:.4} -> {:.4} on subsample, {:.4} overall, |L| = {}",
            f_before,
            f_after,
            full.f,
            full.library.len()
        );
        rounds.push(RoundReport {
            round,
            f_subsample_before: f_before,
            f_subsample_after: f_after,
            f: full.f,
            library_size: full.library.len(),
            counts: mean_counts(&full.library, &full.programs),
            proposals: n_proposals,
            candidates: pool.len(),
            actions,
        });
        timings.rounds_secs.push(t.elapsed().as_secs_f64());
        if f_before - f_after <= cfg.min_improvement {
            break;
        }
    }
    timings.total_secs = start.elapsed().as_secs_f64();
    let report = DiscoveryReport {
        config: cfg.clone(),
        programs: data.len(),
        initial_f,
        rounds,
        final_f: full.f,
        final_counts: mean_counts(&full.library, &full.programs),
        library: full.library.names(),
    };
    RunResult {
        library: full.library,
        programs: full.programs,
        dataset: data,
        report,
        timings,
    }
}
