//! Deterministic executor.
//!
//! The bounding box occupies `x in [-w/2, w/2]`, `y in [0, h]`,
//! `z in [-d/2, d/2]`. Local coordinates `(x, y, z) in [0, 1]^3` of a cuboid
//! map to `center + ((x - 1/2) W, (y - 1/2) H, (z - 1/2) D)`.
//!
//! Cuboids are axis aligned. The first attach translates a cuboid; a second
//! attach stretches it per axis so that both attachment points hold.
//! `squeeze`, `reflect` and `translate` are evaluated through their expansion
//! into `Cuboid` and `attach` lines (see [`expand_sym_ops`]).

use crate::error::ExecError;
use crate::geometry::{Attachment, CuboidGeom, ShapeGeometry, Vec3};
use crate::lang::{Command, CuboidId, Line, PBlock, Program, Symbol, MIN_DIM};
use crate::scalar::Real;

/// Lines of a squeeze as the equivalent pair of attaches.
pub fn squeeze_as_attaches(line: &Line) -> [Line; 2] {
    debug_assert_eq!(line.command, Command::Squeeze);
    let (a, b) = (line.cid(0), line.cid(1));
    let Symbol::Face(face) = line.symbol(2) else {
        unreachable!("squeeze face slot")
    };
    let (u, v) = (line.float(3), line.float(4));
    let near = face.opposite().point(u, v);
    let far = face.point(u, v);
    [
        Line::attach(a, near, far).expect("face points lie in the unit cube"),
        Line::attach(b, far, face.opposite().point(u, v)).expect("face points lie in the unit cube"),
    ]
}

fn attach_parts(line: &Line) -> (CuboidId, [f64; 3], [f64; 3]) {
    (
        line.cid(0),
        [line.float(1), line.float(2), line.float(3)],
        [line.float(4), line.float(5), line.float(6)],
    )
}

struct Placement<T> {
    dims: Vec3<T>,
    center: Vec3<T>,
    first: Option<(Vec3<T>, Vec3<T>)>,
}

impl<T: Real> Placement<T> {
    fn attach(&mut self, local: [f64; 3], target: Vec3<T>, warnings: &mut Vec<String>, id: usize) {
        let local: Vec3<T> = local.map(T::of);
        match self.first {
            None => {
                for a in 0..3 {
                    self.center[a] = target[a] - (local[a] - T::half()) * self.dims[a];
                }
                self.first = Some((local, target));
            }
            Some((l1, w1)) => {
                let eps = T::of(1e-12);
                for a in 0..3 {
                    let (l2, w2) = (local[a], target[a]);
                    if (l1[a] - l2).abs() > eps {
                        let mut dim = (w1[a] - w2) / (l1[a] - l2);
                        if dim < T::of(MIN_DIM) {
                            warnings.push(format!(
                                "cuboid {id}: axis {a} stretched to {dim}, clamped to {MIN_DIM}"
                            ));
                            dim = T::of(MIN_DIM);
                        }
                        self.dims[a] = dim;
                        let c1 = w1[a] - (l1[a] - T::half()) * dim;
                        let c2 = w2 - (l2 - T::half()) * dim;
                        self.center[a] = (c1 + c2) * T::half();
                    } else if (w1[a] - w2).abs() > eps {
                        let mid = (w1[a] + w2) * T::half();
                        self.center[a] = mid - (l1[a] - T::half()) * self.dims[a];
                    }
                }
            }
        }
    }
}

/// Centers of the copies produced by a symmetry line.
fn symmetry_copies<T: Real>(sym: &Line, center: Vec3<T>, bbox: &CuboidGeom<T>) -> Vec<Vec3<T>> {
    match sym.command {
        Command::Reflect => {
            let Symbol::Axis(axis) = sym.symbol(0) else { unreachable!() };
            let a = axis.index();
            let mut c = center;
            c[a] = bbox.center[a] + bbox.center[a] - center[a];
            vec![c]
        }
        Command::Translate => {
            let (Symbol::Axis(axis), Symbol::Count(m)) = (sym.symbol(0), sym.symbol(1)) else {
                unreachable!()
            };
            let a = axis.index();
            let step = T::of(sym.float(2)) * bbox.dims[a] / T::of(f64::from(m));
            (1..=m)
                .map(|k| {
                    let mut c = center;
                    c[a] = c[a] + T::of(f64::from(k)) * step;
                    c
                })
                .collect()
        }
        _ => unreachable!("not a symmetry line"),
    }
}

/// Local point on a copy and the bbox point it attaches to, chosen so the copy
/// lands at `center`.
fn anchor_to_bbox<T: Real>(
    bbox: &CuboidGeom<T>,
    center: Vec3<T>,
    dims: Vec3<T>,
) -> Option<(Vec3<T>, Vec3<T>)> {
    let lo = bbox.min_corner();
    let mut local = [T::half(); 3];
    let mut on_box = [T::zero(); 3];
    for a in 0..3 {
        let t = (center[a] - lo[a]) / bbox.dims[a];
        if t >= T::zero() && t <= T::one() {
            on_box[a] = t;
        } else {
            let tc = t.max(T::zero()).min(T::one());
            let l = T::half() + (lo[a] + tc * bbox.dims[a] - center[a]) / dims[a];
            if l < T::zero() || l > T::one() {
                return None;
            }
            local[a] = l;
            on_box[a] = tc;
        }
    }
    Some((local, on_box))
}

/// Runs a program and returns its cuboids, bounding box first.
pub fn execute<T: Real>(p: &Program) -> Result<ShapeGeometry<T>, ExecError> {
    let [w, h, d] = p.bbox_dims().map(T::of);
    let bbox = CuboidGeom {
        id: 0,
        center: [T::zero(), h * T::half(), T::zero()],
        dims: [w, h, d],
    };
    let n = p.blocks().len();
    let mut geom = ShapeGeometry {
        cuboids: Vec::with_capacity(n + 1),
        attachments: Vec::new(),
        warnings: Vec::new(),
    };
    geom.cuboids.push(bbox);
    let mut copies = Vec::new();
    for (i, block) in p.blocks().iter().enumerate() {
        let id = i + 1;
        let c = block.cuboid();
        let mut place = Placement {
            dims: [c.float(0), c.float(1), c.float(2)].map(T::of),
            center: [T::zero(); 3],
            first: None,
        };
        let attaches: Vec<Line> = match block.attach() {
            [s] if s.command == Command::Squeeze => squeeze_as_attaches(s).to_vec(),
            other => other.to_vec(),
        };
        if attaches.len() > 2 {
            return Err(ExecError::TooManyAttachments(id));
        }
        for line in &attaches {
            let (target, local, on_target) = attach_parts(line);
            let parent = geom
                .cuboids
                .get(target.0)
                .filter(|_| target.0 < id)
                .ok_or(ExecError::Unplaced(target.0))?;
            let point = parent.world_point(on_target);
            place.attach(local, point, &mut geom.warnings, id);
            geom.attachments.push(Attachment {
                child: id,
                parent: target.0,
                point,
            });
        }
        geom.cuboids.push(CuboidGeom {
            id,
            center: place.center,
            dims: place.dims,
        });
        if let Some(sym) = block.sym() {
            for center in symmetry_copies(sym, place.center, &geom.cuboids[0]) {
                copies.push((id, center, place.dims));
            }
        }
    }
    for (k, (src, center, dims)) in copies.into_iter().enumerate() {
        let id = n + 1 + k;
        let bbox = &geom.cuboids[0];
        let (_, on_box) = anchor_to_bbox(bbox, center, dims).ok_or(ExecError::CopyOutsideBox(src))?;
        let point = std::array::from_fn(|a| bbox.min_corner()[a] + on_box[a] * bbox.dims[a]);
        geom.cuboids.push(CuboidGeom { id, center, dims });
        geom.attachments.push(Attachment {
            child: id,
            parent: 0,
            point,
        });
    }
    Ok(geom)
}

/// Rewrites `squeeze`, `reflect` and `translate` into `Cuboid` and `attach`
/// lines. Symmetry copies become blocks placed right after their source block
/// and later cuboid references are renumbered.
pub fn expand_sym_ops(p: &Program) -> Result<Program, ExecError> {
    let geom = execute::<f64>(p)?;
    let bbox = &geom.cuboids[0];
    // New id of each old cuboid id.
    let mut new_id = vec![0usize; p.blocks().len() + 1];
    let mut next = 1;
    for (i, b) in p.blocks().iter().enumerate() {
        new_id[i + 1] = next;
        next += 1 + b.sym().map_or(0, |s| symmetry_copies(s, [0.0; 3], bbox).len());
    }
    let mut blocks = Vec::with_capacity(next - 1);
    for (i, b) in p.blocks().iter().enumerate() {
        let mut attach: Vec<Line> = match b.attach() {
            [s] if s.command == Command::Squeeze => squeeze_as_attaches(s).to_vec(),
            other => other.to_vec(),
        };
        for l in &mut attach {
            l.map_cids(|c| CuboidId(new_id[c.0]));
        }
        blocks.push(PBlock::new(b.cuboid().clone(), attach, None)?);
        if let Some(sym) = b.sym() {
            let src = &geom.cuboids[i + 1];
            let aligned = b.cuboid().flag(3);
            for center in symmetry_copies(sym, src.center, bbox) {
                let (local, on_box) =
                    anchor_to_bbox(bbox, center, src.dims).ok_or(ExecError::CopyOutsideBox(i + 1))?;
                let cuboid = Line::cuboid(src.dims[0], src.dims[1], src.dims[2], aligned)?;
                let attach = Line::attach(CuboidId::BBOX, local, on_box)?;
                blocks.push(PBlock::new(cuboid, vec![attach], None)?);
            }
        }
    }
    Ok(Program::new(p.bbox().clone(), blocks)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{corner_distance, geometrically_equal};

    fn run(text: &str) -> ShapeGeometry<f64> {
        execute(&Program::parse(text).unwrap()).unwrap()
    }

    #[test]
    fn single_attach_places_center() {
        let g = run("bbox = Cuboid(1,1,1,True)\nc1 = Cuboid(0.2,0.2,0.2,True)\nattach(bbox,0.5,0.0,0.5,0.5,0.0,0.5)");
        let c = g.cuboid(1).unwrap();
        for (x, e) in c.center.iter().zip([0.0, 0.1, 0.0]) {
            assert!((x - e).abs() < 1e-12);
        }
        assert_eq!(g.cuboids[0].center, [0.0, 0.5, 0.0]);
        assert_eq!(g.attachments.len(), 1);
    }

    #[test]
    fn second_attach_stretches() {
        // Leg between the floor and a slab whose bottom is at y = 0.9.
        let g = run("bbox = Cuboid(1,1,1,True)\n\
                     c1 = Cuboid(1,0.1,1,True)\n\
                     attach(bbox,0.5,1,0.5,0.5,1,0.5)\n\
                     c2 = Cuboid(0.1,0.5,0.1,True)\n\
                     attach(c1,0.5,1,0.5,0.2,0,0.2)\n\
                     attach(bbox,0.5,0,0.5,0.2,0,0.2)");
        let leg = g.cuboid(2).unwrap();
        // dim = (w1 - w2) / (l1 - l2) = (0.9 - 0.0) / (1 - 0)
        assert!((leg.dims[1] - 0.9).abs() < 1e-12);
        assert!((leg.center[1] - 0.45).abs() < 1e-12);
        assert!((leg.dims[0] - 0.1).abs() < 1e-12);
        assert!((leg.center[0] - (-0.3)).abs() < 1e-12);
    }

    #[test]
    fn inverted_second_attach_is_clamped_with_warning() {
        let g = run("bbox = Cuboid(1,1,1,True)\n\
                     c1 = Cuboid(0.1,0.5,0.1,True)\n\
                     attach(bbox,0.5,0,0.5,0.5,1,0.5)\n\
                     attach(bbox,0.5,1,0.5,0.5,0,0.5)");
        assert_eq!(g.cuboid(1).unwrap().dims[1], MIN_DIM);
        assert_eq!(g.warnings.len(), 1);
    }

    #[test]
    fn equal_locals_with_different_targets_use_midpoint() {
        let g = run("bbox = Cuboid(1,1,1,True)\n\
                     c1 = Cuboid(0.1,0.1,0.1,True)\n\
                     attach(bbox,0.5,0.5,0.5,0.4,0.5,0.5)\n\
                     attach(bbox,0.5,0.5,0.5,0.6,0.5,0.5)");
        assert!(g.cuboid(1).unwrap().center[0].abs() < 1e-12);
    }

    #[test]
    fn reflect_mirrors_about_center_plane() {
        let g = run("bbox = Cuboid(1,1,1,True)\n\
                     c1 = Cuboid(0.1,0.2,0.1,True)\n\
                     attach(bbox,0.5,0.5,0.5,0.8,0.5,0.5)\n\
                     reflect(X)");
        assert_eq!(g.cuboids.len(), 3);
        let (a, b) = (&g.cuboids[1], &g.cuboids[2]);
        assert!((a.center[0] - 0.3).abs() < 1e-12);
        assert!((b.center[0] + 0.3).abs() < 1e-12);
        assert!((b.center[1] - 0.5).abs() < 1e-12);
        assert_eq!(a.dims, b.dims);
    }

    #[test]
    fn translate_spaces_copies() {
        let text = "bbox = Cuboid(2,1,1,True)\n\
                    c1 = Cuboid(0.1,0.1,0.1,True)\n\
                    attach(bbox,0.5,0.5,0.5,0.1,0.5,0.5)\n\
                    translate(X,2,0.5)";
        let g = run(text);
        let x0 = g.cuboids[1].center[0];
        for k in 1..=2 {
            let xk = g.cuboids[1 + k].center[0];
            assert!((xk - x0 - 0.25 * 2.0 * k as f64).abs() < 1e-12);
        }
        let expanded = expand_sym_ops(&Program::parse(text).unwrap()).unwrap();
        assert_eq!(expanded.blocks().len(), 3);
    }

    #[test]
    fn squeeze_spans_between_cuboids() {
        let g = run("bbox = Cuboid(1,1,1,True)\n\
                     c1 = Cuboid(1,0.1,1,True)\n\
                     attach(bbox,0.5,0,0.5,0.5,0,0.5)\n\
                     c2 = Cuboid(1,0.1,1,True)\n\
                     attach(bbox,0.5,1,0.5,0.5,1,0.5)\n\
                     c3 = Cuboid(0.05,0.5,1,True)\n\
                     squeeze(c1,c2,top,0.5,0.5)");
        let c = g.cuboid(3).unwrap();
        assert!((c.dims[1] - 0.8).abs() < 1e-12);
        assert!((c.center[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn expansion_matches_direct_execution() {
        let text = "bbox = Cuboid(1.2,1,0.8,True)\n\
                    c1 = Cuboid(1,0.1,1,True)\n\
                    attach(bbox,0.5,0,0.5,0.5,0,0.5)\n\
                    translate(Y,2,0.4)\n\
                    c2 = Cuboid(1,0.1,1,True)\n\
                    attach(bbox,0.5,1,0.5,0.5,1,0.5)\n\
                    c3 = Cuboid(0.05,0.5,0.3,True)\n\
                    squeeze(c1,c2,top,0.2,0.5)\n\
                    reflect(X)\n\
                    c4 = Cuboid(0.1,0.1,0.1,True)\n\
                    attach(c3,0.5,0,0.5,0.5,1,0.5)\n";
        let p = Program::parse(text).unwrap();
        let e = expand_sym_ops(&p).unwrap();
        assert!(e
            .lines()
            .iter()
            .all(|l| matches!(l.command, Command::Cuboid | Command::Attach)));
        assert_eq!(e.blocks().len(), 7);
        let (a, b) = (execute::<f64>(&p).unwrap(), execute::<f64>(&e).unwrap());
        assert!(geometrically_equal(&a, &b, 1e-6), "{}", corner_distance(&a, &b));
        // c4 attached to c3, which moved from id 4 to id 5 after the expansion.
        assert_eq!(e.blocks()[6].attach()[0].cid(0), CuboidId(5));
        assert_eq!(expand_sym_ops(&e).unwrap(), e);
    }

    #[test]
    fn no_sym_ops_is_identity() {
        let p = Program::parse("bbox = Cuboid(1,1,1,True)\nc1 = Cuboid(0.2,0.2,0.2,True)\nattach(bbox,0.5,0.0,0.5,0.5,0.0,0.5)").unwrap();
        assert_eq!(expand_sym_ops(&p).unwrap(), p);
    }

    #[test]
    fn executes_in_single_precision() {
        let p = Program::parse("bbox = Cuboid(1,1,1,True)\nc1 = Cuboid(0.2,0.2,0.2,True)\nattach(bbox,0.5,0.0,0.5,0.5,0.0,0.5)").unwrap();
        let g = execute::<f32>(&p).unwrap();
        assert!((g.cuboids[1].center[1] - 0.1).abs() < 1e-6);
    }

    mod props {
        use super::super::*;
        use crate::arb::arb_program;
        use crate::geometry::geometrically_equal;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn execution_is_deterministic(p in arb_program(6)) {
                let a = execute::<f64>(&p).unwrap();
                let b = execute::<f64>(&p).unwrap();
                prop_assert_eq!(a, b);
            }

            #[test]
            fn expansion_preserves_geometry(p in arb_program(6)) {
                let e = expand_sym_ops(&p).unwrap();
                for b in e.blocks() {
                    prop_assert!(b.sym().is_none());
                    prop_assert!(b.attach().iter().all(|l| l.command == Command::Attach));
                }
                let (g, ge) = (execute::<f64>(&p).unwrap(), execute::<f64>(&e).unwrap());
                prop_assert!(geometrically_equal(&g, &ge, 1e-6));
                prop_assert_eq!(expand_sym_ops(&e).unwrap(), e);
            }
        }
    }
}
