use super::Point;
use crate::{Error, Result};

/// Planarity tolerance for 3D faces, relative to the face diameter.
pub const PLANARITY_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct FaceGeometry {
    /// Length (2D) or area (3D).
    pub area: f64,
    pub centroid: Point,
    /// Fixed unit normal from the stored node order.
    pub normal: Point,
    pub diameter: f64,
}

/// Measures of one cell and of its faces, in the cell's stored face order.
#[derive(Clone, Debug)]
pub struct CellGeometry {
    pub dim: usize,
    pub volume: f64,
    pub centroid: Point,
    pub diameter: f64,
    /// Global face indices.
    pub faces: Vec<usize>,
    /// `sigma_{c,f}` as `+1.0` / `-1.0`.
    pub signs: Vec<f64>,
    pub face_areas: Vec<f64>,
    pub face_centroids: Vec<Point>,
    pub normals: Vec<Point>,
    /// Face node coordinates in stored order.
    pub face_vertices: Vec<Vec<Point>>,
    /// Distance from the centroid to the plane of each face.
    pub distances: Vec<f64>,
}

impl CellGeometry {
    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    /// Outward unit normal `n_{c,f} = sigma_{c,f} n_f`.
    pub fn outward_normal(&self, i: usize) -> Point {
        self.normals[i] * self.signs[i]
    }

    /// Distinct vertices of the cell.
    pub fn vertices(&self) -> Vec<Point> {
        let mut out: Vec<Point> = Vec::new();
        for fv in &self.face_vertices {
            for v in fv {
                if !out.iter().any(|w| (w - v).norm() == 0.0) {
                    out.push(*v);
                }
            }
        }
        out
    }

    /// Positively oriented simplices covering the cell, each with the cell
    /// centroid as apex: triangles `(x_c, p, q)` in 2D, tetrahedra
    /// `(x_c, x_f, p, q)` in 3D. The returned sign is +1 unless the cell is
    /// not star-shaped with respect to its centroid.
    pub fn simplices(&self) -> Vec<(Vec<Point>, f64)> {
        let xc = self.centroid;
        let mut out = Vec::new();
        for (i, fv) in self.face_vertices.iter().enumerate() {
            if self.dim == 2 {
                // counter-clockwise walk: q -> p when the stored normal is outward
                let (p, q) = if self.signs[i] > 0.0 { (fv[1], fv[0]) } else { (fv[0], fv[1]) };
                let area = 0.5 * cross2(&(p - xc), &(q - xc));
                out.push((vec![xc, p, q], area));
            } else {
                let xf = self.face_centroids[i];
                let k = fv.len();
                for j in 0..k {
                    let (p, q) = if self.signs[i] > 0.0 {
                        (fv[j], fv[(j + 1) % k])
                    } else {
                        (fv[(j + 1) % k], fv[j])
                    };
                    let vol = (p - xf).cross(&(q - xf)).dot(&(xf - xc)) / 6.0;
                    out.push((vec![xc, xf, p, q], vol));
                }
            }
        }
        out
    }
}

pub(crate) fn cross2(a: &Point, b: &Point) -> f64 {
    a.x * b.y - a.y * b.x
}

fn max_pairwise(points: &[Point]) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            d = d.max((points[i] - points[j]).norm());
        }
    }
    d
}

pub(super) fn face_geometry(dim: usize, nodes: &[Point], loop_: &[usize], f: usize) -> Result<FaceGeometry> {
    let pts: Vec<Point> = loop_.iter().map(|&n| nodes[n]).collect();
    let degenerate = |msg: &str| Error::Degenerate {
        entity: format!("face {f}"),
        msg: msg.to_string(),
    };
    if dim == 2 {
        let d = pts[1] - pts[0];
        let len = d.norm();
        if len == 0.0 {
            return Err(degenerate("zero length"));
        }
        return Ok(FaceGeometry {
            area: len,
            centroid: (pts[0] + pts[1]) * 0.5,
            normal: Point::new(-d.y, d.x, 0.0) / len,
            diameter: len,
        });
    }
    let k = pts.len();
    let mut area_vec = Point::zeros();
    for i in 0..k {
        area_vec += pts[i].cross(&pts[(i + 1) % k]);
    }
    area_vec *= 0.5;
    let area = area_vec.norm();
    let diameter = max_pairwise(&pts);
    if area <= 1e-14 * diameter * diameter {
        return Err(degenerate("zero area"));
    }
    let normal = area_vec / area;
    let seed = pts.iter().sum::<Point>() / k as f64;
    let mut total = 0.0;
    let mut centroid = Point::zeros();
    for i in 0..k {
        let (p, q) = (pts[i], pts[(i + 1) % k]);
        let a = 0.5 * (p - seed).cross(&(q - seed)).dot(&normal);
        total += a;
        centroid += (seed + p + q) * (a / 3.0);
    }
    centroid /= total;
    let off_plane = pts
        .iter()
        .map(|p| (p - centroid).dot(&normal).abs())
        .fold(0.0, f64::max);
    if off_plane > PLANARITY_TOL * diameter {
        return Err(degenerate(&format!(
            "non-planar face (offset {off_plane:.3e}, diameter {diameter:.3e})"
        )));
    }
    Ok(FaceGeometry {
        area,
        centroid,
        normal,
        diameter,
    })
}

pub(super) fn cell_geometry(
    dim: usize,
    c: usize,
    cf: &[usize],
    signs: &[f64],
    faces: &[Vec<usize>],
    face_geom: &[FaceGeometry],
    nodes: &[Point],
) -> Result<CellGeometry> {
    let face_vertices: Vec<Vec<Point>> = cf
        .iter()
        .map(|&f| faces[f].iter().map(|&n| nodes[n]).collect())
        .collect();
    let all: Vec<Point> = face_vertices.iter().flatten().copied().collect();
    let seed = all.iter().sum::<Point>() / all.len() as f64;
    let diameter = max_pairwise(&all);

    let mut volume = 0.0;
    let mut centroid = Point::zeros();
    for (i, &f) in cf.iter().enumerate() {
        let fv = &face_vertices[i];
        if dim == 2 {
            let (p, q) = if signs[i] > 0.0 { (fv[1], fv[0]) } else { (fv[0], fv[1]) };
            let a = 0.5 * cross2(&(p - seed), &(q - seed));
            volume += a;
            centroid += (seed + p + q) * (a / 3.0);
        } else {
            let xf = face_geom[f].centroid;
            let k = fv.len();
            for j in 0..k {
                let (p, q) = if signs[i] > 0.0 {
                    (fv[j], fv[(j + 1) % k])
                } else {
                    (fv[(j + 1) % k], fv[j])
                };
                let v = (p - xf).cross(&(q - xf)).dot(&(xf - seed)) / 6.0;
                volume += v;
                centroid += (seed + xf + p + q) * (v / 4.0);
            }
        }
    }
    let scale = diameter.powi(dim as i32);
    if volume <= 1e-14 * scale {
        return Err(Error::Degenerate {
            entity: format!("cell {c}"),
            msg: format!("non-positive volume {volume:.3e}"),
        });
    }
    centroid /= volume;

    let mut distances = Vec::with_capacity(cf.len());
    for (i, &f) in cf.iter().enumerate() {
        let g = &face_geom[f];
        let d = (g.centroid - centroid).dot(&(g.normal * signs[i]));
        if d <= 1e-12 * diameter {
            return Err(Error::Degenerate {
                entity: format!("cell {c}"),
                msg: format!("centroid is not strictly inside the plane of face {f} (distance {d:.3e})"),
            });
        }
        distances.push(d);
    }

    Ok(CellGeometry {
        dim,
        volume,
        centroid,
        diameter,
        faces: cf.to_vec(),
        signs: signs.to_vec(),
        face_areas: cf.iter().map(|&f| face_geom[f].area).collect(),
        face_centroids: cf.iter().map(|&f| face_geom[f].centroid).collect(),
        normals: cf.iter().map(|&f| face_geom[f].normal).collect(),
        face_vertices,
        distances,
    })
}

#[cfg(test)]
mod tests {
    use super::super::PolyMesh;
    use super::*;

    fn assert_closed(g: &CellGeometry) {
        let mut s = Point::zeros();
        for i in 0..g.num_faces() {
            s += g.outward_normal(i) * g.face_areas[i];
        }
        let scale: f64 = g.face_areas.iter().sum();
        assert!(s.norm() <= 1e-12 * scale, "closed-surface defect {}", s.norm());
        // |c| a = sum_f |f| (a . (x_f - x_c)) n_{c,f}
        for k in 0..g.dim {
            let mut a = Point::zeros();
            a[k] = 1.0;
            let mut lhs = Point::zeros();
            for i in 0..g.num_faces() {
                lhs += g.outward_normal(i) * (g.face_areas[i] * a.dot(&(g.face_centroids[i] - g.centroid)));
            }
            assert!((lhs - a * g.volume).norm() <= 1e-12 * g.volume);
        }
    }

    #[test]
    fn unit_square() {
        let m = PolyMesh::unit_square();
        let g = m.cell_geometry(0);
        assert!((g.volume - 1.0).abs() < 1e-15);
        assert!((g.centroid - Point::new(0.5, 0.5, 0.0)).norm() < 1e-15);
        assert!((g.diameter - 2f64.sqrt()).abs() < 1e-15);
        assert!(g.face_areas.iter().all(|a| (a - 1.0).abs() < 1e-15));
        assert!(g.distances.iter().all(|d| (d - 0.5).abs() < 1e-15));
        assert_closed(g);
    }

    #[test]
    fn right_triangle() {
        let m = PolyMesh::polygon(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        let g = m.cell_geometry(0);
        assert!((g.volume - 0.5).abs() < 1e-15);
        assert!((g.centroid - Point::new(1.0 / 3.0, 1.0 / 3.0, 0.0)).norm() < 1e-15);
        assert_closed(g);
    }

    #[test]
    fn regular_hexagon() {
        let v: Vec<[f64; 2]> = (0..6)
            .map(|k| {
                let t = std::f64::consts::PI / 3.0 * k as f64;
                [t.cos(), t.sin()]
            })
            .collect();
        let m = PolyMesh::polygon(&v).unwrap();
        let g = m.cell_geometry(0);
        assert!((g.volume - 3.0 * 3f64.sqrt() / 2.0).abs() < 1e-14);
        assert!(g.centroid.norm() < 1e-15);
        assert_closed(g);
    }

    #[test]
    fn unit_cube() {
        let v = [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 0.0, 1.0],
            [1.0, 1.0, 1.0],
            [0.0, 1.0, 1.0],
        ];
        // mixed loop orientations on purpose
        let faces = vec![
            vec![0, 1, 2, 3],
            vec![4, 5, 6, 7],
            vec![0, 1, 5, 4],
            vec![3, 7, 6, 2],
            vec![0, 4, 7, 3],
            vec![1, 5, 6, 2],
        ];
        let m = PolyMesh::polyhedron(&v, &faces).unwrap();
        let g = m.cell_geometry(0);
        assert!((g.volume - 1.0).abs() < 1e-15);
        assert!((g.centroid - Point::new(0.5, 0.5, 0.5)).norm() < 1e-15);
        assert!(g.distances.iter().all(|d| (d - 0.5).abs() < 1e-15));
        for i in 0..6 {
            let n = g.outward_normal(i);
            assert!((g.face_centroids[i] - g.centroid).normalize().dot(&n) > 0.99);
        }
        assert_closed(g);
    }

    #[test]
    fn non_planar_face_is_rejected() {
        let v = [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.1],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 0.0, 1.0],
            [1.0, 1.0, 1.0],
            [0.0, 1.0, 1.0],
        ];
        let faces = vec![
            vec![0, 1, 2, 3],
            vec![4, 5, 6, 7],
            vec![0, 1, 5, 4],
            vec![3, 7, 6, 2],
            vec![0, 4, 7, 3],
            vec![1, 5, 6, 2],
        ];
        let err = PolyMesh::polyhedron(&v, &faces).unwrap_err();
        assert!(matches!(err, Error::Degenerate { .. }));
    }

    #[test]
    fn simplices_cover_cell() {
        let m = PolyMesh::polygon(&[[0.0, 0.0], [2.0, 0.1], [2.5, 1.2], [1.0, 2.0], [-0.3, 1.1]]).unwrap();
        let g = m.cell_geometry(0);
        let total: f64 = g.simplices().iter().map(|(_, a)| a).sum();
        assert!((total - g.volume).abs() < 1e-14);
    }
}
