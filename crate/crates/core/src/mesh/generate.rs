use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Point, PolyMesh};
use crate::{Error, Result};

const MAX_RESAMPLES: usize = 32;

/// Axis-aligned box `[lo, hi]`; the z-range is ignored in 2D.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxDomain {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl BoxDomain {
    pub fn unit() -> Self {
        Self {
            lo: [0.0; 3],
            hi: [1.0; 3],
        }
    }

    pub fn rect(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self {
            lo: [x0, y0, 0.0],
            hi: [x1, y1, 1.0],
        }
    }

    fn extent(&self, k: usize) -> f64 {
        self.hi[k] - self.lo[k]
    }

    /// Boundary tag of a point on the box surface.
    pub fn tag(&self, p: &Point, dim: usize) -> Option<String> {
        let tol = 1e-9 * (0..dim).map(|k| self.extent(k)).fold(0.0, f64::max);
        let names = [("left", "right"), ("bottom", "top"), ("front", "back")];
        for (k, (lo, hi)) in names.iter().enumerate().take(dim) {
            if (p[k] - self.lo[k]).abs() <= tol {
                return Some(lo.to_string());
            }
            if (p[k] - self.hi[k]).abs() <= tol {
                return Some(hi.to_string());
            }
        }
        None
    }
}

fn check_args(nx: usize, ny: usize, perturbation: f64) -> Result<()> {
    if nx == 0 || ny == 0 {
        return Err(Error::Invalid("cell counts must be at least 1".into()));
    }
    if !(0.0..0.5).contains(&perturbation) {
        return Err(Error::Invalid(format!(
            "perturbation {perturbation} outside [0, 0.5)"
        )));
    }
    Ok(())
}

fn quad_is_convex(p: [Point; 4]) -> bool {
    (0..4).all(|k| {
        let a = p[(k + 3) % 4];
        let b = p[k];
        let c = p[(k + 1) % 4];
        super::geometry::cross2(&(b - a), &(c - b)) > 0.0
    })
}

/// Node grid of an `nx x ny` structured quad mesh with randomly displaced
/// nodes. Interior nodes move by up to `perturbation * h` per direction,
/// boundary nodes only tangentially, corners not at all. A displacement that
/// would make an adjacent quad non-convex is resampled.
fn perturbed_grid(nx: usize, ny: usize, domain: BoxDomain, perturbation: f64, seed: u64) -> Vec<Point> {
    let hx = domain.extent(0) / nx as f64;
    let hy = domain.extent(1) / ny as f64;
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut nodes: Vec<Point> = (0..=ny)
        .flat_map(|j| {
            (0..=nx).map(move |i| Point::new(domain.lo[0] + i as f64 * hx, domain.lo[1] + j as f64 * hy, 0.0))
        })
        .collect();
    if perturbation == 0.0 {
        return nodes;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for j in 0..=ny {
        for i in 0..=nx {
            let on_x = i == 0 || i == nx;
            let on_y = j == 0 || j == ny;
            if on_x && on_y {
                continue;
            }
            let origin = nodes[id(i, j)];
            for _ in 0..MAX_RESAMPLES {
                let dx = if on_x { 0.0 } else { perturbation * hx * rng.gen_range(-1.0..1.0) };
                let dy = if on_y { 0.0 } else { perturbation * hy * rng.gen_range(-1.0..1.0) };
                nodes[id(i, j)] = origin + Point::new(dx, dy, 0.0);
                let ok = (i.saturating_sub(1)..i.min(nx - 1) + 1).all(|ci| {
                    (j.saturating_sub(1)..j.min(ny - 1) + 1).all(|cj| {
                        quad_is_convex([
                            nodes[id(ci, cj)],
                            nodes[id(ci + 1, cj)],
                            nodes[id(ci + 1, cj + 1)],
                            nodes[id(ci, cj + 1)],
                        ])
                    })
                });
                if ok {
                    break;
                }
                nodes[id(i, j)] = origin;
            }
        }
    }
    nodes
}

/// Randomly perturbed quadrilateral mesh of a rectangle with `nx x ny` cells.
/// Deterministic for a fixed seed. Boundary faces are tagged
/// `left`/`right`/`bottom`/`top`.
pub fn generate_perturbed_quad_mesh(
    nx: usize,
    ny: usize,
    domain: BoxDomain,
    perturbation: f64,
    seed: u64,
) -> Result<PolyMesh> {
    check_args(nx, ny, perturbation)?;
    let nodes = perturbed_grid(nx, ny, domain, perturbation, seed);
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let quads: Vec<Vec<usize>> = (0..ny)
        .flat_map(|j| (0..nx).map(move |i| vec![id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)]))
        .collect();
    PolyMesh::from_polygons(nodes, &quads, |p| domain.tag(p, 2))
}

/// Perturbed quads split into triangles along alternating diagonals.
pub fn generate_perturbed_tri_mesh(
    nx: usize,
    ny: usize,
    domain: BoxDomain,
    perturbation: f64,
    seed: u64,
) -> Result<PolyMesh> {
    check_args(nx, ny, perturbation)?;
    let nodes = perturbed_grid(nx, ny, domain, perturbation, seed);
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut tris = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            if (i + j) % 2 == 0 {
                tris.push(vec![a, b, c]);
                tris.push(vec![a, c, d]);
            } else {
                tris.push(vec![a, b, d]);
                tris.push(vec![b, c, d]);
            }
        }
    }
    PolyMesh::from_polygons(nodes, &tris, |p| domain.tag(p, 2))
}

/// Hexahedral mesh whose faces stay exactly planar: every family of grid
/// planes gets random offsets and tilts (boundary planes stay put), and
/// each node is the intersection of its three planes.
pub fn generate_perturbed_hex_mesh(
    n: [usize; 3],
    domain: BoxDomain,
    perturbation: f64,
    seed: u64,
) -> Result<PolyMesh> {
    check_args(n[0], n[1], perturbation)?;
    check_args(n[2], 1, perturbation)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center: Vec<f64> = (0..3).map(|k| 0.5 * (domain.lo[k] + domain.hi[k])).collect();
    // planes[a][k] = (offset, tilt against the two other axes)
    let mut planes: Vec<Vec<(f64, [f64; 3])>> = Vec::with_capacity(3);
    for a in 0..3 {
        let h = domain.extent(a) / n[a] as f64;
        let mut fam = Vec::with_capacity(n[a] + 1);
        for k in 0..=n[a] {
            let base = domain.lo[a] + k as f64 * h;
            if k == 0 || k == n[a] || perturbation == 0.0 {
                fam.push((base, [0.0; 3]));
                continue;
            }
            let offset = 0.5 * perturbation * h * rng.gen_range(-1.0..1.0);
            let mut tilt = [0.0; 3];
            for b in (0..3).filter(|&b| b != a) {
                // the plane moves by at most perturbation*h/4 across the box
                tilt[b] = 0.5 * perturbation * h / domain.extent(b) * rng.gen_range(-0.5..0.5);
            }
            fam.push((base + offset, tilt));
        }
        planes.push(fam);
    }
    let id = |i: usize, j: usize, k: usize| (k * (n[1] + 1) + j) * (n[0] + 1) + i;
    let mut nodes = Vec::with_capacity((n[0] + 1) * (n[1] + 1) * (n[2] + 1));
    for k in 0..=n[2] {
        for j in 0..=n[1] {
            for i in 0..=n[0] {
                // x_a - sum_b tilt_b (x_b - center_b) = offset_a
                let idx = [i, j, k];
                let mut m = nalgebra::Matrix3::<f64>::identity();
                let mut rhs = nalgebra::Vector3::<f64>::zeros();
                for a in 0..3 {
                    let (off, tilt) = planes[a][idx[a]];
                    rhs[a] = off;
                    for b in 0..3 {
                        if b != a {
                            m[(a, b)] = -tilt[b];
                            rhs[a] -= tilt[b] * center[b];
                        }
                    }
                }
                let x = m.lu().solve(&rhs).ok_or_else(|| Error::Invalid("plane intersection".into()))?;
                nodes.push(Point::new(x[0], x[1], x[2]));
            }
        }
    }
    let mut hexes = Vec::with_capacity(n[0] * n[1] * n[2]);
    for k in 0..n[2] {
        for j in 0..n[1] {
            for i in 0..n[0] {
                let v = |di: usize, dj: usize, dk: usize| id(i + di, j + dj, k + dk);
                hexes.push(vec![
                    vec![v(0, 0, 0), v(0, 1, 0), v(1, 1, 0), v(1, 0, 0)],
                    vec![v(0, 0, 1), v(1, 0, 1), v(1, 1, 1), v(0, 1, 1)],
                    vec![v(0, 0, 0), v(1, 0, 0), v(1, 0, 1), v(0, 0, 1)],
                    vec![v(0, 1, 0), v(0, 1, 1), v(1, 1, 1), v(1, 1, 0)],
                    vec![v(0, 0, 0), v(0, 0, 1), v(0, 1, 1), v(0, 1, 0)],
                    vec![v(1, 0, 0), v(1, 1, 0), v(1, 1, 1), v(1, 0, 1)],
                ]);
            }
        }
    }
    PolyMesh::from_polyhedra(nodes, &hexes, |p| domain.tag(p, 3))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_perturbation_is_uniform() {
        let m = generate_perturbed_quad_mesh(2, 2, BoxDomain::unit(), 0.0, 0).unwrap();
        assert_eq!(m.num_cells(), 4);
        for c in 0..4 {
            assert!((m.cell_geometry(c).volume - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn same_seed_same_nodes() {
        let a = generate_perturbed_quad_mesh(2, 2, BoxDomain::unit(), 0.3, 7).unwrap();
        let b = generate_perturbed_quad_mesh(2, 2, BoxDomain::unit(), 0.3, 7).unwrap();
        for (p, q) in a.nodes().iter().zip(b.nodes()) {
            assert_eq!(p.x.to_bits(), q.x.to_bits());
            assert_eq!(p.y.to_bits(), q.y.to_bits());
        }
    }

    #[test]
    fn marshak_aspect_mesh() {
        let m = generate_perturbed_quad_mesh(30, 10, BoxDomain::rect(0.0, 3.0, 0.0, 1.0), 0.2, 1).unwrap();
        assert_eq!(m.num_cells(), 300);
        // shoelace area straight from the node grid
        let id = |i: usize, j: usize| j * 31 + i;
        for j in 0..10 {
            for i in 0..30 {
                let q = [id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)].map(|n| m.nodes()[n]);
                let area: f64 = (0..4).map(|k| q[k].x * q[(k + 1) % 4].y - q[(k + 1) % 4].x * q[k].y).sum::<f64>() / 2.0;
                assert!(area > 0.0);
                assert!((area - m.cell_geometry(j * 30 + i).volume).abs() < 1e-14);
            }
        }
        let total: f64 = (0..m.num_cells()).map(|c| m.cell_geometry(c).volume).sum();
        assert!((total - 3.0).abs() < 1e-12);
    }

    #[test]
    fn large_perturbation_is_rejected() {
        assert!(generate_perturbed_quad_mesh(2, 2, BoxDomain::unit(), 0.5, 0).is_err());
    }

    #[test]
    fn boundary_nodes_stay_on_boundary() {
        let m = generate_perturbed_quad_mesh(5, 4, BoxDomain::unit(), 0.4, 3).unwrap();
        for f in m.boundary_faces() {
            let tag = m.boundary_tag(f).expect("tagged");
            for &n in &m.faces()[f] {
                let p = m.nodes()[n];
                let on = match tag {
                    "left" => p.x == 0.0,
                    "right" => p.x == 1.0,
                    "bottom" => p.y == 0.0,
                    "top" => p.y == 1.0,
                    _ => false,
                };
                assert!(on, "{tag} {p:?}");
            }
        }
    }

    #[test]
    fn hex_mesh_is_planar_and_fills_box() {
        let m = generate_perturbed_hex_mesh([3, 3, 3], BoxDomain::unit(), 0.3, 5).unwrap();
        assert_eq!(m.num_cells(), 27);
        let total: f64 = (0..m.num_cells()).map(|c| m.cell_geometry(c).volume).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(m.boundary_faces().count(), 6 * 9);
    }

    #[test]
    fn tri_mesh_counts() {
        let m = generate_perturbed_tri_mesh(3, 2, BoxDomain::unit(), 0.1, 1).unwrap();
        assert_eq!(m.num_cells(), 12);
        let total: f64 = (0..m.num_cells()).map(|c| m.cell_geometry(c).volume).sum();
        assert!((total - 1.0).abs() < 1e-13);
    }
}
