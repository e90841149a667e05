//! Executed shape geometry and the corner-distance comparison.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

pub type Vec3<T> = [T; 3];

/// An axis-aligned cuboid in world space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CuboidGeom<T> {
    pub id: usize,
    pub center: Vec3<T>,
    pub dims: Vec3<T>,
}

impl<T: Real> CuboidGeom<T> {
    /// World position of local coordinates in `[0, 1]^3`.
    pub fn world_point(&self, local: [f64; 3]) -> Vec3<T> {
        std::array::from_fn(|a| self.center[a] + (T::of(local[a]) - T::half()) * self.dims[a])
    }

    pub fn corners(&self) -> [Vec3<T>; 8] {
        std::array::from_fn(|k| {
            self.world_point([(k & 1) as f64, ((k >> 1) & 1) as f64, ((k >> 2) & 1) as f64])
        })
    }

    pub fn diagonal(&self) -> T {
        norm(self.dims)
    }

    pub fn min_corner(&self) -> Vec3<T> {
        std::array::from_fn(|a| self.center[a] - self.dims[a] * T::half())
    }
}

/// One attach constraint as realised by the executor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attachment<T> {
    pub child: usize,
    pub parent: usize,
    pub point: Vec3<T>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ShapeGeometry<T> {
    pub cuboids: Vec<CuboidGeom<T>>,
    pub attachments: Vec<Attachment<T>>,
    /// Non-fatal issues raised while executing, e.g. clamped dimensions.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Entry of the geometry export format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportedCuboid {
    pub id: usize,
    pub center: [f64; 3],
    pub dims: [f64; 3],
}

impl<T: Real> ShapeGeometry<T> {
    /// The `[{id, center, dims}]` list consumed by the editor and metrics.
    pub fn export(&self) -> Vec<ExportedCuboid> {
        self.cuboids
            .iter()
            .map(|c| ExportedCuboid {
                id: c.id,
                center: c.center.map(Real::to_f64_lossy),
                dims: c.dims.map(Real::to_f64_lossy),
            })
            .collect()
    }

    pub fn cuboid(&self, id: usize) -> Option<&CuboidGeom<T>> {
        self.cuboids.iter().find(|c| c.id == id)
    }
}

fn norm<T: Real>(v: Vec3<T>) -> T {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Mean Euclidean distance between corresponding corners.
pub fn cuboid_corner_distance<T: Real>(a: &CuboidGeom<T>, b: &CuboidGeom<T>) -> T {
    let (ca, cb) = (a.corners(), b.corners());
    let sum = ca
        .iter()
        .zip(&cb)
        .fold(T::zero(), |acc, (p, q)| acc + norm(std::array::from_fn(|i| p[i] - q[i])));
    sum / T::of(8.0)
}

/// Distance between two shapes. Cuboids are paired by a minimum-cost
/// assignment on corner distance; the result is the mean distance over pairs
/// plus the diagonal length of every cuboid left unpaired.
pub fn corner_distance<T: Real>(a: &ShapeGeometry<T>, b: &ShapeGeometry<T>) -> T {
    let (small, large) = if a.cuboids.len() <= b.cuboids.len() {
        (&a.cuboids, &b.cuboids)
    } else {
        (&b.cuboids, &a.cuboids)
    };
    if small.is_empty() {
        return large.iter().fold(T::zero(), |acc, c| acc + c.diagonal());
    }
    let cost: Vec<Vec<T>> = small
        .iter()
        .map(|x| large.iter().map(|y| cuboid_corner_distance(x, y)).collect())
        .collect();
    let assignment = min_cost_assignment(&cost);
    let mut matched = vec![false; large.len()];
    let mut total = T::zero();
    for (i, &j) in assignment.iter().enumerate() {
        matched[j] = true;
        total = total + cost[i][j];
    }
    let mean = total / T::of(small.len() as f64);
    large
        .iter()
        .zip(&matched)
        .filter(|(_, m)| !**m)
        .fold(mean, |acc, (c, _)| acc + c.diagonal())
}

pub fn geometrically_equal<T: Real>(a: &ShapeGeometry<T>, b: &ShapeGeometry<T>, tol: T) -> bool {
    corner_distance(a, b) <= tol
}

/// Minimum-cost assignment of each row to a distinct column, for a matrix with
/// no more rows than columns. Returns the column chosen for every row.
pub fn min_cost_assignment<T: Real>(cost: &[Vec<T>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m, "assignment needs rows <= columns");
    // Shortest augmenting path with potentials; rows/cols are 1-based inside.
    let inf = T::infinity();
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] = u[p[j]] + delta;
                    v[j] = v[j] - delta;
                } else {
                    minv[j] = minv[j] - delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cub(id: usize, c: [f64; 3], d: [f64; 3]) -> CuboidGeom<f64> {
        CuboidGeom { id, center: c, dims: d }
    }

    fn geom(cs: Vec<CuboidGeom<f64>>) -> ShapeGeometry<f64> {
        ShapeGeometry { cuboids: cs, ..Default::default() }
    }

    /// Brute force over all injective row->column maps.
    fn brute_assignment(cost: &[Vec<f64>]) -> f64 {
        fn rec(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
            if row == cost.len() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..used.len() {
                if !used[j] {
                    used[j] = true;
                    best = best.min(cost[row][j] + rec(cost, row + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        rec(cost, 0, &mut vec![false; cost[0].len()])
    }

    #[test]
    fn identical_is_zero() {
        let g = geom(vec![cub(0, [0.0, 0.5, 0.0], [1.0; 3]), cub(1, [0.1, 0.2, 0.3], [0.1, 0.2, 0.3])]);
        assert_eq!(corner_distance(&g, &g), 0.0);
        assert!(geometrically_equal(&g, &g, 0.0));
    }

    #[test]
    fn translation_shifts_every_corner() {
        let a = geom(vec![cub(1, [0.0, 0.0, 0.0], [0.2, 0.3, 0.4])]);
        let b = geom(vec![cub(1, [0.1, 0.0, 0.0], [0.2, 0.3, 0.4])]);
        assert!((corner_distance(&a, &b) - 0.1).abs() < 1e-12);
        let tol = 0.01;
        let c = geom(vec![cub(1, [10.0 * tol, 0.0, 0.0], [0.2, 0.3, 0.4])]);
        assert!(!geometrically_equal(&a, &c, tol));
    }

    #[test]
    fn permutation_invariant() {
        let cs = vec![
            cub(0, [0.0, 0.5, 0.0], [1.0; 3]),
            cub(1, [0.3, 0.1, 0.0], [0.1, 0.2, 0.1]),
            cub(2, [-0.3, 0.1, 0.0], [0.1, 0.2, 0.1]),
        ];
        let mut rev = cs.clone();
        rev.reverse();
        assert!(corner_distance(&geom(cs), &geom(rev)) < 1e-12);
    }

    #[test]
    fn unmatched_cuboids_pay_their_diagonal() {
        let a = geom(vec![cub(0, [0.0; 3], [1.0; 3])]);
        let b = geom(vec![cub(0, [0.0; 3], [1.0; 3]), cub(1, [0.0; 3], [0.3, 0.4, 0.0])]);
        assert!((corner_distance(&a, &b) - 0.5).abs() < 1e-12);
        assert!((corner_distance(&b, &a) - 0.5).abs() < 1e-12);
        assert!((corner_distance(&geom(vec![]), &b) - (3f64.sqrt() + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn works_in_single_precision() {
        let a: ShapeGeometry<f32> = ShapeGeometry {
            cuboids: vec![CuboidGeom { id: 1, center: [0.0; 3], dims: [1.0; 3] }],
            ..Default::default()
        };
        let mut b = a.clone();
        b.cuboids[0].center[1] = 0.25;
        assert!((corner_distance(&a, &b) - 0.25).abs() < 1e-6);
    }

    fn arb_cuboid() -> impl Strategy<Value = CuboidGeom<f64>> {
        (prop::array::uniform3(-1.0..1.0f64), prop::array::uniform3(0.05..1.0f64))
            .prop_map(|(c, d)| cub(0, c, d))
    }

    proptest! {
        #[test]
        fn hungarian_matches_brute_force(rows in 1usize..5, extra in 0usize..3, seed in prop::collection::vec(0.0..10.0f64, 64)) {
            let cols = rows + extra;
            let cost: Vec<Vec<f64>> = (0..rows).map(|i| (0..cols).map(|j| seed[(i * 8 + j) % 64]).collect()).collect();
            let a = min_cost_assignment(&cost);
            let mut seen = a.clone();
            seen.sort_unstable();
            seen.dedup();
            prop_assert_eq!(seen.len(), rows);
            let total: f64 = a.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
            prop_assert!((total - brute_assignment(&cost)).abs() < 1e-9);
        }

        #[test]
        fn corner_distance_is_a_pseudometric(
            xs in prop::collection::vec(arb_cuboid(), 3),
            ys in prop::collection::vec(arb_cuboid(), 3),
            zs in prop::collection::vec(arb_cuboid(), 3),
        ) {
            let (a, b, c) = (geom(xs), geom(ys), geom(zs));
            let ab = corner_distance(&a, &b);
            prop_assert!((ab - corner_distance(&b, &a)).abs() < 1e-9);
            prop_assert!(corner_distance(&a, &a) < 1e-12);
            prop_assert!(corner_distance(&a, &c) <= ab + corner_distance(&b, &c) + 1e-9);
        }
    }
}
