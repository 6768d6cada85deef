//! Marching cubes over a [`ScalarGrid`].
//!
//! The case table is derived at first use. Each cube face is cut by a rule
//! that sees only that face's four corners (every inside run of corners is
//! cut off on its own, so diagonal ambiguities always separate the inside
//! corners), which makes neighboring cells agree on shared faces. The face
//! segments of a case chain into closed loops that are fan-triangulated and
//! oriented so normals point from inside corners toward outside corners.

use std::sync::OnceLock;

use super::grid::ScalarGrid;
use super::mesh::TriangleMesh;

/// Corner `c` sits at offset `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
fn corner_offset(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, (c >> 2) & 1]
}

/// Edge `4·axis + m` runs along `axis` from the corner whose other two bits
/// are `m` (lower axis bit first) to its neighbor.
pub(crate) fn edge_corners(e: usize) -> (usize, usize) {
    let axis = e / 4;
    let m = e % 4;
    let others = [(axis + 1) % 3, (axis + 2) % 3];
    let (b0, b1) = if others[0] < others[1] {
        (others[0], others[1])
    } else {
        (others[1], others[0])
    };
    let lo = ((m & 1) << b0) | (((m >> 1) & 1) << b1);
    (lo, lo | (1 << axis))
}

fn edge_between(a: usize, b: usize) -> usize {
    (0..12)
        .find(|&e| {
            let (p, q) = edge_corners(e);
            (p, q) == (a, b) || (p, q) == (b, a)
        })
        .expect("corners share an edge")
}

/// Corners of each face in counter-clockwise order seen from outside.
fn faces() -> Vec<[usize; 4]> {
    let mut out = Vec::new();
    for axis in 0..3 {
        let (b, c) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in 0..2 {
            let base = side << axis;
            let mut ring = [base, base | (1 << b), base | (1 << b) | (1 << c), base | (1 << c)];
            // (1<<b) × (1<<c) = +axis for cyclic (axis, b, c); flip the low face.
            if side == 0 {
                ring.reverse();
            }
            out.push(ring);
        }
    }
    out
}

/// A closed loop of crossed edges. With `center` set it is triangulated
/// around an extra vertex at its centroid, otherwise as a fan from its first
/// edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Loop {
    pub edges: Vec<u8>,
    pub center: bool,
}

/// Loops for each of the 256 inside/outside patterns (bit `c` set when
/// corner `c` is inside).
pub(crate) fn case_table() -> &'static [Vec<Loop>] {
    static TABLE: OnceLock<Vec<Vec<Loop>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (0..256)
            .map(|case| build_case(case).into_iter().map(triangulation).collect())
            .collect()
    })
}

fn share_face(a: usize, b: usize) -> bool {
    let (a0, a1) = edge_corners(a);
    let (b0, b1) = edge_corners(b);
    // Both edges lie in the face fixing some axis bit to a common value.
    (0..3).any(|axis| {
        let bit = |c: usize| c >> axis & 1;
        a / 4 != axis && b / 4 != axis && bit(a0) == bit(a1) && bit(b0) == bit(b1) && bit(a0) == bit(b0)
    })
}

/// A fan diagonal lying in a cube face could coincide with the neighbor
/// cell's boundary segment; pick a fan apex that avoids that, or fall back
/// to a centroid vertex.
fn triangulation(edges: Vec<u8>) -> Loop {
    let n = edges.len();
    for s in 0..n {
        let ok = (2..n.saturating_sub(1)).all(|k| !share_face(edges[s] as usize, edges[(s + k) % n] as usize));
        if ok {
            let mut rotated = edges[s..].to_vec();
            rotated.extend_from_slice(&edges[..s]);
            return Loop {
                edges: rotated,
                center: false,
            };
        }
    }
    Loop { edges, center: true }
}

fn build_case(case: usize) -> Vec<Vec<u8>> {
    let inside = |c: usize| case >> c & 1 == 1;
    let mut next = [usize::MAX; 12];
    for ring in faces() {
        for i in 0..4 {
            let (prev, cur) = (ring[(i + 3) % 4], ring[i]);
            if inside(prev) || !inside(cur) {
                continue;
            }
            // Entering an inside run at `cur`; leave where it ends.
            let mut j = i;
            while inside(ring[(j + 1) % 4]) {
                j = (j + 1) % 4;
            }
            let entry = edge_between(prev, cur);
            let exit = edge_between(ring[j], ring[(j + 1) % 4]);
            debug_assert_eq!(next[entry], usize::MAX);
            next[entry] = exit;
        }
    }
    let mut seen = [false; 12];
    let mut loops = Vec::new();
    for start in 0..12 {
        if next[start] == usize::MAX || seen[start] {
            continue;
        }
        let mut lp = Vec::new();
        let mut e = start;
        while !seen[e] {
            seen[e] = true;
            lp.push(e as u8);
            e = next[e];
        }
        debug_assert_eq!(e, start);
        loops.push(lp);
    }
    loops
}

/// Triangulates the `level` isosurface of `grid`; points with
/// `value > level` are inside. Vertices are shared between cells and
/// ordered by first use in `(z, y, x)` cell order.
pub fn marching_cubes(grid: &ScalarGrid, level: f64) -> TriangleMesh {
    let [nx, ny, nz] = grid.resolution;
    let table = case_table();
    let h = grid.spacing();
    let lattice_gradients = grid.gradients();
    let mut edge_vertex = vec![u32::MAX; 3 * nx * ny * nz];
    let mut mesh = TriangleMesh::default();
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut case = 0;
                for c in 0..8 {
                    let [dx, dy, dz] = corner_offset(c);
                    if grid.value(i + dx, j + dy, k + dz) > level {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let mut vertex_of = |e: usize, mesh: &mut TriangleMesh| -> u32 {
                    let (a, b) = edge_corners(e);
                    let axis = e / 4;
                    let [ax, ay, az] = corner_offset(a);
                    let base = grid.index(i + ax, j + ay, k + az);
                    let slot = axis * nx * ny * nz + base;
                    if edge_vertex[slot] != u32::MAX {
                        return edge_vertex[slot];
                    }
                    let [bx, by, bz] = corner_offset(b);
                    let other = grid.index(i + bx, j + by, k + bz);
                    let (va, vb) = (grid.values[base], grid.values[other]);
                    let t = ((level - va) / (vb - va)).clamp(0.0, 1.0);
                    let pa = grid.point(i + ax, j + ay, k + az);
                    let mut p = pa;
                    p[axis] += t * h[axis];
                    let (ga, gb) = (lattice_gradients[base], lattice_gradients[other]);
                    let g: [f64; 3] = std::array::from_fn(|d| ga[d] + t * (gb[d] - ga[d]));
                    let gn = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
                    let n = if gn > 0.0 { g.map(|v| -v / gn) } else { [0.0; 3] };
                    let id = mesh.vertices.len() as u32;
                    mesh.vertices.push(p);
                    mesh.normals.push(n);
                    edge_vertex[slot] = id;
                    id
                };
                for lp in &table[case] {
                    let ids: Vec<u32> = lp.edges.iter().map(|&e| vertex_of(e as usize, &mut mesh)).collect();
                    if lp.center {
                        let c = mesh.vertices.len() as u32;
                        let m = ids.len() as f64;
                        let mean = |v: &[[f64; 3]]| -> [f64; 3] {
                            std::array::from_fn(|d| ids.iter().map(|&i| v[i as usize][d]).sum::<f64>() / m)
                        };
                        let p = mean(&mesh.vertices);
                        let n = mean(&mesh.normals);
                        let l = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                        mesh.vertices.push(p);
                        mesh.normals.push(if l > 0.0 { n.map(|v| v / l) } else { [0.0; 3] });
                        for w in 0..ids.len() {
                            mesh.faces.push([c, ids[w], ids[(w + 1) % ids.len()]]);
                        }
                    } else {
                        for w in 1..ids.len() - 1 {
                            mesh.faces.push([ids[0], ids[w], ids[w + 1]]);
                        }
                    }
                }
            }
        }
    }
    mesh.repair_normals();
    mesh
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edges_are_axis_aligned_and_distinct() {
        let mut seen = std::collections::HashSet::new();
        for e in 0..12 {
            let (a, b) = edge_corners(e);
            assert_eq!(a ^ b, 1 << (e / 4));
            assert!(a < b);
            assert!(seen.insert((a, b)));
        }
    }

    #[test]
    fn faces_wind_outward() {
        for ring in faces() {
            let p = ring.map(|c| corner_offset(c).map(|v| v as f64));
            let u: [f64; 3] = std::array::from_fn(|d| p[1][d] - p[0][d]);
            let v: [f64; 3] = std::array::from_fn(|d| p[2][d] - p[1][d]);
            let n = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
            let center: [f64; 3] = std::array::from_fn(|d| p.iter().map(|q| q[d]).sum::<f64>() / 4.0 - 0.5);
            assert!(n.iter().zip(&center).map(|(a, b)| a * b).sum::<f64>() > 0.0);
        }
    }

    #[test]
    fn every_crossed_edge_is_used_once() {
        for (case, loops) in case_table().iter().enumerate() {
            let mut used = [0; 12];
            for lp in loops {
                assert!(lp.edges.len() >= 3, "case {case}");
                for &e in &lp.edges {
                    used[e as usize] += 1;
                }
            }
            for (e, &count) in used.iter().enumerate() {
                let (a, b) = edge_corners(e);
                let crossed = (case >> a & 1) != (case >> b & 1);
                assert_eq!(count, crossed as usize, "case {case} edge {e}");
            }
        }
    }

    #[test]
    fn loops_face_away_from_inside_corners() {
        let mid = |e: usize| {
            let (a, b) = edge_corners(e);
            let (pa, pb) = (corner_offset(a), corner_offset(b));
            std::array::from_fn::<f64, 3, _>(|d| 0.5 * (pa[d] + pb[d]) as f64)
        };
        for (case, loops) in case_table().iter().enumerate() {
            for lp in loops.iter().map(|l| &l.edges) {
                let pts: Vec<[f64; 3]> = lp.iter().map(|&e| mid(e as usize)).collect();
                let mut n = [0.0; 3];
                for w in 0..pts.len() {
                    let (p, q) = (pts[w], pts[(w + 1) % pts.len()]);
                    n[0] += (p[1] - q[1]) * (p[2] + q[2]);
                    n[1] += (p[2] - q[2]) * (p[0] + q[0]);
                    n[2] += (p[0] - q[0]) * (p[1] + q[1]);
                }
                let mut want = [0.0; 3];
                for &e in lp {
                    let (a, _) = edge_corners(e as usize);
                    let s = if case >> a & 1 == 1 { 1.0 } else { -1.0 };
                    want[e as usize / 4] += s;
                }
                let dot: f64 = n.iter().zip(&want).map(|(a, b)| a * b).sum();
                assert!(dot > 0.0, "case {case} loop {lp:?}");
            }
        }
    }

    #[test]
    fn shared_faces() {
        // edges 0 (x, y=0 z=0) and 4 (y, x=0 z=0) meet on the z=0 face
        assert!(share_face(0, 4));
        // edges 0 and 3 (x, y=1 z=1) are opposite
        assert!(!share_face(0, 3));
        assert!(share_face(0, 1) && share_face(0, 2));
        let total = (0..12).flat_map(|a| (0..12).map(move |b| (a, b))).filter(|&(a, b)| a != b && share_face(a, b)).count();
        // 4 edges per face give 12 ordered pairs
        assert_eq!(total, 6 * 12);
    }

    #[test]
    fn fan_diagonals_stay_off_cube_faces() {
        for lp in case_table().iter().flatten().filter(|l| !l.center) {
            let n = lp.edges.len();
            for k in 2..n - 1 {
                assert!(!share_face(lp.edges[0] as usize, lp.edges[k] as usize), "{lp:?}");
            }
        }
    }

    #[test]
    fn every_two_cell_pattern_is_edge_manifold() {
        use super::super::grid::Aabb;
        use super::super::mesh::mesh_diagnostics;
        for res in [[3, 2, 2], [2, 3, 2], [2, 2, 3]] {
            for pattern in 0..1u32 << 12 {
                let vals = (0..12).map(|b| if pattern >> b & 1 == 1 { 0.9 } else { 0.1 }).collect();
                let g = ScalarGrid::new(res, Aabb::cube(1.0), vals).unwrap();
                let d = mesh_diagnostics(&marching_cubes(&g, 0.5));
                assert_eq!((d.nonmanifold_edges, d.inconsistent_edges), (0, 0), "{res:?} {pattern:012b}");
            }
        }
    }
}
