use shape_macros::dataset::Dataset;
use shape_macros::discovery::{run_shapemod, DiscoveryConfig};
use shape_macros::exec::execute;
use shape_macros::geometry::corner_distance;
use shape_macros::lang::Program;
use shape_macros::library::Library;
use shape_macros::order::DEFAULT_MAX_ORDERS;
use shape_macros::search::verify_refactoring;

fn table(w: f64, h: f64, d: f64, top: f64, leg: f64, x: f64, z: f64) -> String {
    format!(
        "bbox = Cuboid({w}, {h}, {d}, True)\n\
         c1 = Cuboid({w}, {top}, {d}, True)\n\
         attach(bbox, 0.5, 1, 0.5, 0.5, 1, 0.5)\n\
         c2 = Cuboid({leg}, {lh}, {leg}, True)\n\
         attach(bbox, 0.5, 0, 0.5, {x}, 0, {z})\n\
         attach(c1, 0.5, 1, 0.5, {x}, 0, {z})\n\
         reflect(X)\n\
         c3 = Cuboid({leg}, {lh}, {leg}, True)\n\
         attach(bbox, 0.5, 0, 0.5, {x}, 0, {z2})\n\
         attach(c1, 0.5, 1, 0.5, {x}, 0, {z2})\n\
         reflect(X)\n",
        lh = h - top,
        z2 = 1.0 - z,
    )
}

fn tables(n: usize) -> Dataset {
    let programs = (0..n).map(|i| {
        let t = i as f64 / n as f64;
        let text = table(1.0 + 0.4 * t, 0.7 + 0.1 * t, 0.6 + 0.2 * (1.0 - t), 0.06, 0.08, 0.1, 0.1);
        (format!("table_{i}"), Program::parse(&text).unwrap())
    });
    Dataset::from_programs(programs, DEFAULT_MAX_ORDERS).unwrap()
}

#[test]
fn discovery_compresses_a_uniform_family() {
    let d = tables(24);
    let cfg = DiscoveryConfig {
        num_rounds: 2,
        num_proposal_steps: 60,
        subsample_size: 24,
        seed: 3,
        ..Default::default()
    };
    let r = run_shapemod(&d, &cfg);
    assert!(!r.library.macros().is_empty());
    assert!(r.report.final_f < r.report.initial_f);
    for round in &r.report.rounds {
        assert!(round.f_subsample_after <= round.f_subsample_before + 1e-9);
    }
    for (e, rp) in r.dataset.entries().iter().zip(&r.programs) {
        verify_refactoring(e.program(), rp, &r.library, cfg.search.eps_match).unwrap();
        let a = execute::<f64>(e.program()).unwrap();
        let b = execute::<f64>(&rp.to_program(&r.library).unwrap()).unwrap();
        assert_eq!(a.cuboids.len(), b.cuboids.len());
        assert!(corner_distance(&a, &b) < 0.1);
    }
}

#[test]
fn discovered_library_round_trips_through_json() {
    let d = tables(12);
    let cfg = DiscoveryConfig { num_rounds: 1, num_proposal_steps: 30, subsample_size: 12, ..Default::default() };
    let r = run_shapemod(&d, &cfg);
    let back = Library::from_json(&r.library.to_json()).unwrap();
    assert_eq!(back, r.library);
}
