use std::sync::OnceLock;

use rustc_hash::FxHashMap;

use super::{TriangleMesh, TsdfVolume};

/// Cube edges as (lower corner, upper corner); corner `c` sits at offset
/// `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
const EDGES: [(u8, u8); 12] = [
    (0, 1),
    (0, 2),
    (0, 4),
    (1, 3),
    (1, 5),
    (2, 3),
    (2, 6),
    (3, 7),
    (4, 5),
    (4, 6),
    (5, 7),
    (6, 7),
];

fn edge_between(a: u8, b: u8) -> u8 {
    let key = (a.min(b), a.max(b));
    EDGES.iter().position(|e| *e == key).expect("corners share an edge") as u8
}

/// Triangulates one corner-sign configuration.
///
/// Surface loops are traced over the cube faces: on each face, walking the
/// corners counter-clockwise as seen from outside, every edge where the sign
/// turns from outside to inside links to the next sign change. This pairing
/// keeps inside corners apart on ambiguous faces, it depends only on the face
/// corners, so neighboring cubes agree, and it orients every loop so that
/// triangle normals point toward positive sdf.
fn triangulate_case(case: u8) -> Vec<[u8; 3]> {
    let inside = |c: u8| (case >> c) & 1 == 1;
    let mut next = [None::<u8>; 12];
    for axis in 0..3u8 {
        let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in 0..2u8 {
            let (u, v) = if side == 1 { (a1, a2) } else { (a2, a1) };
            let base = side << axis;
            let ring = [base, base | 1 << u, base | 1 << u | 1 << v, base | 1 << v];
            let crossings: Vec<(u8, bool)> = (0..4)
                .filter_map(|i| {
                    let (a, b) = (ring[i], ring[(i + 1) % 4]);
                    (inside(a) != inside(b)).then(|| (edge_between(a, b), inside(b)))
                })
                .collect();
            for (j, &(edge, exits)) in crossings.iter().enumerate() {
                if exits {
                    next[edge as usize] = Some(crossings[(j + 1) % crossings.len()].0);
                }
            }
        }
    }
    let mut triangles = Vec::new();
    let mut visited = [false; 12];
    for start in 0..12u8 {
        if visited[start as usize] || next[start as usize].is_none() {
            continue;
        }
        let mut ring = Vec::new();
        let mut e = start;
        while !visited[e as usize] {
            visited[e as usize] = true;
            ring.push(e);
            e = next[e as usize].expect("surface loops close");
        }
        for i in 1..ring.len() - 1 {
            triangles.push([ring[0], ring[i], ring[i + 1]]);
        }
    }
    triangles
}

fn table() -> &'static [Vec<[u8; 3]>] {
    static TABLE: OnceLock<Vec<Vec<[u8; 3]>>> = OnceLock::new();
    TABLE.get_or_init(|| (0..=255u8).map(triangulate_case).collect())
}

/// Edge-index triangles for a case whose bit `c` is set when corner `c` is inside.
pub fn case_triangles(case: u8) -> &'static [[u8; 3]] {
    &table()[case as usize]
}

/// Marching cubes over every allocated block, reading a one-voxel apron from
/// the neighbors. Cubes with an unobserved corner are skipped. Vertices on
/// shared edges are emitted once.
pub fn extract_mesh(vol: &TsdfVolume) -> TriangleMesh {
    let b = vol.config().block_size;
    let a = b + 1;
    let mut apron = vec![(0.0f32, 0.0f32); a * a * a];
    let mut vertex_ids: FxHashMap<([i64; 3], u8), u32> = FxHashMap::default();
    let mut mesh = TriangleMesh::default();
    for coord in vol.block_coords() {
        let origin = coord.map(|c| c as i64 * b as i64);
        for z in 0..a {
            for y in 0..a {
                for x in 0..a {
                    let g = [origin[0] + x as i64, origin[1] + y as i64, origin[2] + z as i64];
                    apron[(z * a + y) * a + x] = vol.voxel(g).unwrap_or((0.0, 0.0));
                }
            }
        }
        for z in 0..b {
            for y in 0..b {
                for x in 0..b {
                    let corner_cell = |c: u8| {
                        let (dx, dy, dz) = ((c & 1) as usize, ((c >> 1) & 1) as usize, ((c >> 2) & 1) as usize);
                        apron[((z + dz) * a + y + dy) * a + x + dx]
                    };
                    let mut case = 0u8;
                    let mut observed = true;
                    for c in 0..8u8 {
                        let (s, w) = corner_cell(c);
                        observed &= w > 0.0;
                        if s < 0.0 {
                            case |= 1 << c;
                        }
                    }
                    if !observed || case == 0 || case == 255 {
                        continue;
                    }
                    let cube = [origin[0] + x as i64, origin[1] + y as i64, origin[2] + z as i64];
                    for tri in case_triangles(case) {
                        let ids = tri.map(|e| {
                            let (lo, hi) = EDGES[e as usize];
                            let offset = |c: u8| [(c & 1) as i64, ((c >> 1) & 1) as i64, ((c >> 2) & 1) as i64];
                            let o = offset(lo);
                            let start = [cube[0] + o[0], cube[1] + o[1], cube[2] + o[2]];
                            let axis = (hi ^ lo).trailing_zeros() as u8;
                            *vertex_ids.entry((start, axis)).or_insert_with(|| {
                                let (s0, s1) = (corner_cell(lo).0 as f64, corner_cell(hi).0 as f64);
                                let t = s0 / (s0 - s1);
                                let mut p = vol.voxel_position(start);
                                p[axis as usize] += t * vol.config().voxel_size;
                                mesh.vertices.push([p.x as f32, p.y as f32, p.z as f32]);
                                (mesh.vertices.len() - 1) as u32
                            })
                        });
                        mesh.triangles.push(ids);
                    }
                }
            }
        }
    }
    mesh
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::FusionConfig;
    use nalgebra::Vector3;
    use std::collections::HashMap;

    fn corner(c: u8) -> Vector3<f64> {
        Vector3::new((c & 1) as f64, ((c >> 1) & 1) as f64, ((c >> 2) & 1) as f64)
    }

    fn midpoint(e: u8) -> Vector3<f64> {
        let (a, b) = EDGES[e as usize];
        (corner(a) + corner(b)) / 2.0
    }

    #[test]
    fn trivial_cases_are_empty() {
        assert!(case_triangles(0).is_empty());
        assert!(case_triangles(255).is_empty());
    }

    #[test]
    fn single_corner_is_one_triangle_facing_out() {
        let tris = case_triangles(1);
        assert_eq!(tris.len(), 1);
        let [a, b, c] = tris[0].map(midpoint);
        let n = (b - a).cross(&(c - a));
        assert!(n.x > 0.0 && n.y > 0.0 && n.z > 0.0);
    }

    #[test]
    fn complement_cases_use_the_same_edges() {
        for case in 0..=255u8 {
            let mut e1: Vec<u8> = case_triangles(case).iter().flatten().copied().collect();
            let mut e2: Vec<u8> = case_triangles(!case).iter().flatten().copied().collect();
            e1.sort();
            e1.dedup();
            e2.sort();
            e2.dedup();
            assert_eq!(e1, e2, "case {case}");
        }
    }

    #[test]
    fn every_crossing_edge_is_used() {
        for case in 1..255u8 {
            let used: Vec<u8> = case_triangles(case).iter().flatten().copied().collect();
            for (e, (a, b)) in EDGES.iter().enumerate() {
                let crossing = ((case >> a) & 1) != ((case >> b) & 1);
                assert_eq!(crossing, used.contains(&(e as u8)), "case {case} edge {e}");
            }
        }
    }

    fn sphere(radius: f64) -> TriangleMesh {
        let mut vol = TsdfVolume::new(FusionConfig::default()).unwrap();
        let r = Vector3::repeat(radius + 0.2);
        vol.fill_analytic(&-r, &r, |p| p.norm() - radius);
        extract_mesh(&vol)
    }

    #[test]
    fn sphere_vertices_lie_on_the_surface() {
        let mesh = sphere(0.5);
        assert!(!mesh.triangles.is_empty());
        let err: f64 = mesh
            .vertices
            .iter()
            .map(|v| (Vector3::new(v[0] as f64, v[1] as f64, v[2] as f64).norm() - 0.5).abs())
            .sum::<f64>()
            / mesh.vertices.len() as f64;
        assert!(err < 0.01, "{err}");
    }

    #[test]
    fn sphere_is_closed_and_consistently_oriented() {
        let mesh = sphere(0.37);
        let mut directed: HashMap<(u32, u32), usize> = HashMap::new();
        for t in &mesh.triangles {
            for i in 0..3 {
                *directed.entry((t[i], t[(i + 1) % 3])).or_default() += 1;
            }
        }
        for (&(a, b), &n) in &directed {
            assert_eq!(n, 1, "edge {a}-{b} repeated");
            assert_eq!(directed.get(&(b, a)), Some(&1), "edge {a}-{b} is a border");
        }
        for t in &mesh.triangles {
            let [a, b, c] = t.map(|i| {
                let v = mesh.vertices[i as usize];
                Vector3::new(v[0] as f64, v[1] as f64, v[2] as f64)
            });
            let n = (b - a).cross(&(c - a));
            assert!(n.dot(&(a + b + c)) >= 0.0);
        }
    }

    #[test]
    fn empty_volume_gives_empty_mesh() {
        let vol = TsdfVolume::new(FusionConfig::default()).unwrap();
        assert!(extract_mesh(&vol).is_empty());
    }

    #[test]
    fn all_positive_block_has_no_triangles() {
        let mut vol = TsdfVolume::new(FusionConfig::default()).unwrap();
        vol.fill_analytic(&Vector3::zeros(), &Vector3::repeat(0.1), |_| 0.05);
        assert_eq!(vol.block_count(), 1);
        assert!(extract_mesh(&vol).triangles.is_empty());
    }

    #[test]
    fn vertices_lie_within_a_voxel_of_a_sign_change() {
        let mut vol = TsdfVolume::new(FusionConfig::default()).unwrap();
        let r = Vector3::repeat(0.5);
        vol.fill_analytic(&-r, &r, |p| p.z - 0.3 * p.x + 0.013);
        let mesh = extract_mesh(&vol);
        let vs = vol.config().voxel_size;
        for v in &mesh.vertices {
            let g = [v[0], v[1], v[2]].map(|c| (c as f64 / vs).floor() as i64);
            let mut signs = Vec::new();
            for dz in 0..2 {
                for dy in 0..2 {
                    for dx in 0..2 {
                        if let Some((s, _)) = vol.voxel([g[0] + dx, g[1] + dy, g[2] + dz]) {
                            signs.push(s < 0.0);
                        }
                    }
                }
            }
            assert!(signs.contains(&true) && signs.contains(&false));
        }
    }
}
