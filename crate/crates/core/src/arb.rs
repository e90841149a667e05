//! Random valid programs for property tests.

use proptest::prelude::*;

use crate::exec::execute;
use crate::lang::{Axis, CuboidId, Face, Line, PBlock, Program};

fn q(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

#[derive(Clone, Debug)]
struct BlockSeed {
    dims: [f64; 3],
    attach_kind: u8,
    targets: (usize, usize),
    coords: [f64; 6],
    coords2: [f64; 6],
    face: usize,
    sym: u8,
    axis: usize,
    count: u32,
    dist: f64,
}

fn block_seed() -> impl Strategy<Value = BlockSeed> {
    (
        prop::array::uniform3(0.05..0.4f64),
        0u8..3,
        (0usize..8, 0usize..8),
        prop::array::uniform6(0.0..=1.0f64),
        prop::array::uniform6(0.0..=1.0f64),
        0usize..6,
        0u8..3,
        0usize..3,
        1u32..4,
        0.0..=0.5f64,
    )
        .prop_map(
            |(dims, attach_kind, targets, coords, coords2, face, sym, axis, count, dist)| BlockSeed {
                dims,
                attach_kind,
                targets,
                coords,
                coords2,
                face,
                sym,
                axis,
                count,
                dist,
            },
        )
}

fn build(bbox: [f64; 3], seeds: &[BlockSeed]) -> Option<Program> {
    let bbox = Line::cuboid(q(bbox[0]), q(bbox[1]), q(bbox[2]), true).ok()?;
    let mut blocks = Vec::new();
    for (i, s) in seeds.iter().enumerate() {
        let cuboid = Line::cuboid(q(s.dims[0]), q(s.dims[1]), q(s.dims[2]), s.sym == 0).ok()?;
        let t1 = CuboidId(s.targets.0 % (i + 1));
        let t2 = CuboidId(s.targets.1 % (i + 1));
        let c = s.coords.map(q);
        let c2 = s.coords2.map(q);
        let attach = match s.attach_kind {
            0 => vec![Line::attach(t1, [c[0], c[1], c[2]], [c[3], c[4], c[5]]).ok()?],
            1 => vec![
                Line::attach(t1, [c[0], c[1], c[2]], [c[3], c[4], c[5]]).ok()?,
                Line::attach(t2, [c2[0], c2[1], c2[2]], [c2[3], c2[4], c2[5]]).ok()?,
            ],
            _ => vec![Line::squeeze(t1, t2, Face::ALL[s.face], c[0], c[1]).ok()?],
        };
        let sym = match s.sym {
            1 => Some(Line::reflect(Axis::ALL[s.axis]).ok()?),
            2 => Some(Line::translate(Axis::ALL[s.axis], s.count, q(s.dist)).ok()?),
            _ => None,
        };
        blocks.push(PBlock::new(cuboid, attach, sym).ok()?);
    }
    Program::new(bbox, blocks).ok()
}

/// Programs with up to `max_blocks` blocks and floats on a 1e-4 grid. Only
/// programs that execute without error are produced.
pub(crate) fn arb_program(max_blocks: usize) -> impl Strategy<Value = Program> {
    (
        prop::array::uniform3(0.5..2.0f64),
        prop::collection::vec(block_seed(), 0..=max_blocks),
    )
        .prop_filter_map("program must execute", |(bbox, seeds)| {
            let p = build(bbox, &seeds)?;
            execute::<f64>(&p).ok()?;
            Some(p)
        })
}
