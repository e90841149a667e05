//! Gaussian perturbation of free continuous parameters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use shape_macros::exec::execute;
use shape_macros::geometry::{corner_distance, ShapeGeometry};
use shape_macros::lang::{ParamKind, ParamValue};
use shape_macros::library::{Library, RefactoredProgram};

pub const DEFAULT_SIGMAS: [f64; 5] = [0.0, 0.01, 0.02, 0.04, 0.08];

/// A refactored corpus under one library.
#[derive(Clone, Copy, Debug)]
pub struct Condition<'a> {
    pub name: &'a str,
    pub library: &'a Library,
    pub programs: &'a [RefactoredProgram],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbRow {
    pub condition: String,
    pub sigma: f64,
    pub mean_distance: f64,
    /// Perturbed programs that failed to execute; excluded from the mean.
    pub failures: usize,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbReport {
    pub trials: usize,
    pub seed: u64,
    /// Mean free continuous parameters per program, by condition.
    pub free_floats: Vec<(String, f64)>,
    pub rows: Vec<PerturbRow>,
}

/// Slots of continuous formals across all calls, as `(call, arg)` pairs.
pub fn free_float_slots(rp: &RefactoredProgram, lib: &Library) -> Vec<(usize, usize)> {
    rp.calls
        .iter()
        .enumerate()
        .flat_map(|(i, c)| {
            lib.functions()[c.function]
                .formals
                .iter()
                .enumerate()
                .filter(|(_, f)| f.kind == ParamKind::Float)
                .map(move |(j, _)| (i, j))
        })
        .collect()
}

pub fn mean_free_floats(c: &Condition) -> f64 {
    if c.programs.is_empty() {
        return 0.0;
    }
    let total: usize = c.programs.iter().map(|rp| free_float_slots(rp, c.library).len()).sum();
    total as f64 / c.programs.len() as f64
}

fn geometry(rp: &RefactoredProgram, lib: &Library) -> Option<ShapeGeometry<f64>> {
    let p = rp.to_program(lib).ok()?;
    execute::<f64>(&p).ok()
}

/// Applies `sigma · z` to every free continuous slot, clamped to its domain.
pub fn perturbed(rp: &RefactoredProgram, lib: &Library, z: &[f64], sigma: f64) -> RefactoredProgram {
    let mut out = rp.clone();
    for (&(i, j), &dz) in free_float_slots(rp, lib).iter().zip(z) {
        let dom = lib.functions()[rp.calls[i].function].formals[j].domain;
        if let ParamValue::Float(x) = &mut out.calls[i].args[j] {
            *x = dom.clamp(*x + sigma * dz);
        }
    }
    out
}

/// Mean corner distance to the unperturbed shape for each σ. The same
/// standard-normal draws are scaled by every σ.
pub fn perturbation_harness(conditions: &[Condition], sigmas: &[f64], trials: usize, seed: u64) -> PerturbReport {
    let mut rows = Vec::new();
    for (ci, c) in conditions.iter().enumerate() {
        let per_program: Vec<Vec<(f64, usize)>> = c
            .programs
            .par_iter()
            .enumerate()
            .map(|(pi, rp)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(((ci as u64) << 32) | pi as u64);
                let slots = free_float_slots(rp, c.library).len();
                let base = geometry(rp, c.library);
                let draws: Vec<Vec<f64>> = (0..trials)
                    .map(|_| (0..slots).map(|_| StandardNormal.sample(&mut rng)).collect())
                    .collect();
                sigmas
                    .iter()
                    .map(|&s| {
                        let Some(base) = &base else {
                            return (0.0, trials);
                        };
                        let mut sum = 0.0;
                        let mut failed = 0;
                        for z in &draws {
                            match geometry(&perturbed(rp, c.library, z, s), c.library) {
                                Some(g) => sum += corner_distance(base, &g),
                                None => failed += 1,
                            }
                        }
                        (sum, failed)
                    })
                    .collect()
            })
            .collect();
        for (k, &sigma) in sigmas.iter().enumerate() {
            let (sum, failures) = per_program
                .iter()
                .fold((0.0, 0), |(s, f), v| (s + v[k].0, f + v[k].1));
            let samples = c.programs.len() * trials - failures;
            rows.push(PerturbRow {
                condition: c.name.to_string(),
                sigma,
                mean_distance: if samples == 0 { 0.0 } else { sum / samples as f64 },
                failures,
                samples,
            });
        }
    }
    PerturbReport {
        trials,
        seed,
        free_floats: conditions.iter().map(|c| (c.name.to_string(), mean_free_floats(c))).collect(),
        rows,
    }
}

/// Whether each condition's mean distance never drops as σ grows.
pub fn is_monotone(report: &PerturbReport) -> bool {
    report.free_floats.iter().all(|(name, _)| {
        let mut rows: Vec<&PerturbRow> = report.rows.iter().filter(|r| &r.condition == name).collect();
        rows.sort_by(|a, b| a.sigma.total_cmp(&b.sigma));
        rows.windows(2).all(|w| w[1].mean_distance >= w[0].mean_distance)
    })
}
