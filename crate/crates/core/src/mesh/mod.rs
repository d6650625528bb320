//! Conforming polygonal (2D) and polyhedral (3D) meshes.
//!
//! A mesh stores nodes, faces as node loops (in 2D a face is an edge with two
//! nodes) and cells as lists of face indices. Each face carries a fixed unit
//! normal `n_f` derived from its stored node order: in 2D the edge direction
//! rotated 90 degrees counter-clockwise, in 3D the Newell normal of the loop.
//! The orientation sign `sigma_{c,f}` is `+1` when `n_f` points out of `c`.
//!
//! Geometry is computed once at construction; meshes are immutable afterwards.

mod generate;
mod geometry;
mod io;
mod quality;

use std::collections::HashMap;

pub use generate::{
    generate_perturbed_hex_mesh, generate_perturbed_quad_mesh, generate_perturbed_tri_mesh, BoxDomain,
};
pub use geometry::{CellGeometry, FaceGeometry};
pub use io::MeshFormat;
pub use quality::QualityReport;

use crate::{Error, Result};

pub type Point = nalgebra::Vector3<f64>;

/// Cells incident to a face: the first owner and, for interior faces, the second.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FaceCells {
    pub first: usize,
    pub second: Option<usize>,
}

impl FaceCells {
    pub fn is_boundary(&self) -> bool {
        self.second.is_none()
    }
}

#[derive(Clone, Debug)]
pub struct PolyMesh {
    dim: usize,
    nodes: Vec<Point>,
    faces: Vec<Vec<usize>>,
    cells: Vec<Vec<usize>>,
    signs: Vec<Vec<f64>>,
    face_cells: Vec<FaceCells>,
    tags: Vec<Option<String>>,
    face_geom: Vec<FaceGeometry>,
    cell_geom: Vec<CellGeometry>,
}

impl PolyMesh {
    /// Builds and validates a mesh. `tags` assigns names to boundary faces.
    pub fn new(
        dim: usize,
        nodes: Vec<Point>,
        faces: Vec<Vec<usize>>,
        cells: Vec<Vec<usize>>,
        tags: Vec<(usize, String)>,
    ) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Invalid(format!("dimension must be 2 or 3, got {dim}")));
        }
        for (f, loop_) in faces.iter().enumerate() {
            let need = if dim == 2 { 2 } else { 3 };
            if (dim == 2 && loop_.len() != 2) || loop_.len() < need {
                return Err(Error::Degenerate {
                    entity: format!("face {f}"),
                    msg: format!("{} nodes", loop_.len()),
                });
            }
            if let Some(&bad) = loop_.iter().find(|&&n| n >= nodes.len()) {
                return Err(Error::Invalid(format!("face {f} references missing node {bad}")));
            }
        }
        let mut refs: Vec<Vec<usize>> = vec![Vec::new(); faces.len()];
        for (c, cf) in cells.iter().enumerate() {
            for &f in cf {
                if f >= faces.len() {
                    return Err(Error::Invalid(format!("cell {c} references missing face {f}")));
                }
                refs[f].push(c);
            }
        }
        let mut face_cells = Vec::with_capacity(faces.len());
        for (f, r) in refs.iter().enumerate() {
            match r.as_slice() {
                [a] => face_cells.push(FaceCells {
                    first: *a,
                    second: None,
                }),
                [a, b] if a != b => face_cells.push(FaceCells {
                    first: *a,
                    second: Some(*b),
                }),
                _ => return Err(Error::Conformity { face: f, count: r.len() }),
            }
        }
        let mut tag_vec = vec![None; faces.len()];
        for (f, t) in tags {
            if f >= faces.len() {
                return Err(Error::Invalid(format!("boundary tag on missing face {f}")));
            }
            if !face_cells[f].is_boundary() {
                return Err(Error::Invalid(format!("boundary tag `{t}` on interior face {f}")));
            }
            tag_vec[f] = Some(t);
        }

        let face_geom = faces
            .iter()
            .enumerate()
            .map(|(f, loop_)| geometry::face_geometry(dim, &nodes, loop_, f))
            .collect::<Result<Vec<_>>>()?;

        let mut signs = Vec::with_capacity(cells.len());
        let mut cell_geom = Vec::with_capacity(cells.len());
        for (c, cf) in cells.iter().enumerate() {
            let s = if dim == 2 {
                orient_polygon(c, cf, &faces, &nodes)?
            } else {
                orient_polyhedron(c, cf, &faces, &face_geom, &nodes)?
            };
            cell_geom.push(geometry::cell_geometry(dim, c, cf, &s, &faces, &face_geom, &nodes)?);
            signs.push(s);
        }

        for (f, fc) in face_cells.iter().enumerate() {
            if let Some(second) = fc.second {
                let s1 = sign_of(&cells[fc.first], &signs[fc.first], f);
                let s2 = sign_of(&cells[second], &signs[second], f);
                if s1 * s2 != -1.0 {
                    return Err(Error::Orientation {
                        cell: second,
                        msg: format!("face {f} is outward for both incident cells"),
                    });
                }
            }
        }

        Ok(Self {
            dim,
            nodes,
            faces,
            cells,
            signs,
            face_cells,
            tags: tag_vec,
            face_geom,
            cell_geom,
        })
    }

    /// One-cell 2D mesh from a counter-clockwise vertex list. Edge `i` joins
    /// vertex `i` and `i+1`, stored so that its fixed normal points outward.
    pub fn polygon(vertices: &[[f64; 2]]) -> Result<Self> {
        let nodes: Vec<Point> = vertices.iter().map(|v| Point::new(v[0], v[1], 0.0)).collect();
        let n = nodes.len();
        let faces: Vec<Vec<usize>> = (0..n).map(|i| vec![(i + 1) % n, i]).collect();
        let cells = vec![(0..n).collect()];
        Self::new(2, nodes, faces, cells, Vec::new())
    }

    /// Unit square `[0,1]^2` with faces ordered right, top, left, bottom and
    /// outward fixed normals.
    pub fn unit_square() -> Self {
        Self::polygon(&[[1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.0, 0.0]]).expect("unit square")
    }

    /// One-cell 3D mesh from vertices and face loops.
    pub fn polyhedron(vertices: &[[f64; 3]], face_loops: &[Vec<usize>]) -> Result<Self> {
        let nodes = vertices.iter().map(|v| Point::new(v[0], v[1], v[2])).collect();
        let cells = vec![(0..face_loops.len()).collect()];
        Self::new(3, nodes, face_loops.to_vec(), cells, Vec::new())
    }

    /// One-cell tetrahedron.
    pub fn tetrahedron(v: [[f64; 3]; 4]) -> Result<Self> {
        Self::polyhedron(&v, &[vec![1, 2, 3], vec![0, 3, 2], vec![0, 1, 3], vec![0, 2, 1]])
    }

    /// 2D mesh from polygons given as counter-clockwise node loops. Shared
    /// edges are merged; boundary edges are tagged by `tag`.
    pub fn from_polygons(
        nodes: Vec<Point>,
        polygons: &[Vec<usize>],
        tag: impl Fn(&Point) -> Option<String>,
    ) -> Result<Self> {
        let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
        let mut faces: Vec<Vec<usize>> = Vec::new();
        let mut cells = Vec::with_capacity(polygons.len());
        for poly in polygons {
            let n = poly.len();
            let mut cf = Vec::with_capacity(n);
            for i in 0..n {
                let (a, b) = (poly[i], poly[(i + 1) % n]);
                let key = (a.min(b), a.max(b));
                let f = *lookup.entry(key).or_insert_with(|| {
                    faces.push(vec![b, a]);
                    faces.len() - 1
                });
                cf.push(f);
            }
            cells.push(cf);
        }
        let tags = boundary_tags(&faces, &cells, &nodes, &tag);
        Self::new(2, nodes, faces, cells, tags)
    }

    /// 3D mesh from polyhedra given as lists of node loops. Faces are merged
    /// by node set; the first occurrence fixes the stored loop order.
    pub fn from_polyhedra(
        nodes: Vec<Point>,
        polyhedra: &[Vec<Vec<usize>>],
        tag: impl Fn(&Point) -> Option<String>,
    ) -> Result<Self> {
        let mut lookup: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut faces: Vec<Vec<usize>> = Vec::new();
        let mut cells = Vec::with_capacity(polyhedra.len());
        for poly in polyhedra {
            let mut cf = Vec::with_capacity(poly.len());
            for loop_ in poly {
                let mut key = loop_.clone();
                key.sort_unstable();
                let f = *lookup.entry(key).or_insert_with(|| {
                    faces.push(loop_.clone());
                    faces.len() - 1
                });
                cf.push(f);
            }
            cells.push(cf);
        }
        let tags = boundary_tags(&faces, &cells, &nodes, &tag);
        Self::new(3, nodes, faces, cells, tags)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }
    pub fn faces(&self) -> &[Vec<usize>] {
        &self.faces
    }
    pub fn cells(&self) -> &[Vec<usize>] {
        &self.cells
    }
    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }
    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }
    /// Orientation signs of cell `c`, aligned with `cells()[c]`.
    pub fn signs(&self, c: usize) -> &[f64] {
        &self.signs[c]
    }
    pub fn face_cells(&self, f: usize) -> FaceCells {
        self.face_cells[f]
    }
    pub fn is_boundary_face(&self, f: usize) -> bool {
        self.face_cells[f].is_boundary()
    }
    pub fn boundary_tag(&self, f: usize) -> Option<&str> {
        self.tags[f].as_deref()
    }
    pub fn boundary_faces(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.faces.len()).filter(|&f| self.is_boundary_face(f))
    }
    pub fn face_geometry(&self, f: usize) -> &FaceGeometry {
        &self.face_geom[f]
    }

    /// Geometry of one cell (precomputed at construction).
    pub fn cell_geometry(&self, c: usize) -> &CellGeometry {
        &self.cell_geom[c]
    }

    pub fn cell_geometries(&self) -> &[CellGeometry] {
        &self.cell_geom
    }

    /// Largest cell diameter.
    pub fn h(&self) -> f64 {
        self.cell_geom.iter().map(|g| g.diameter).fold(0.0, f64::max)
    }

    /// Position of face `f` in the local face list of cell `c`.
    pub fn local_index(&self, c: usize, f: usize) -> Option<usize> {
        self.cells[c].iter().position(|&g| g == f)
    }

    pub fn quality(&self) -> QualityReport {
        quality::mesh_quality(self)
    }
}

fn sign_of(cell_faces: &[usize], signs: &[f64], f: usize) -> f64 {
    cell_faces
        .iter()
        .position(|&g| g == f)
        .map(|i| signs[i])
        .unwrap_or(0.0)
}

fn boundary_tags(
    faces: &[Vec<usize>],
    cells: &[Vec<usize>],
    nodes: &[Point],
    tag: &impl Fn(&Point) -> Option<String>,
) -> Vec<(usize, String)> {
    let mut count = vec![0usize; faces.len()];
    for cf in cells {
        for &f in cf {
            count[f] += 1;
        }
    }
    let mut tags = Vec::new();
    for (f, loop_) in faces.iter().enumerate() {
        if count[f] == 1 {
            let mid = loop_.iter().map(|&n| nodes[n]).sum::<Point>() / loop_.len() as f64;
            if let Some(t) = tag(&mid) {
                tags.push((f, t));
            }
        }
    }
    tags
}

/// Orientation signs of a polygonal cell: chain the edges into one loop,
/// make it counter-clockwise, then compare each traversal with the stored
/// edge direction.
fn orient_polygon(c: usize, cf: &[usize], faces: &[Vec<usize>], nodes: &[Point]) -> Result<Vec<f64>> {
    let n = cf.len();
    if n < 3 {
        return Err(Error::Degenerate {
            entity: format!("cell {c}"),
            msg: format!("{n} edges"),
        });
    }
    let mut at_node: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, &f) in cf.iter().enumerate() {
        for &v in &faces[f] {
            at_node.entry(v).or_default().push(i);
        }
    }
    if at_node.values().any(|e| e.len() != 2) {
        return Err(Error::Orientation {
            cell: c,
            msg: "edges do not form a closed loop".into(),
        });
    }
    // traversal[i] = +1 when edge i is walked from its first to its second node
    let mut traversal = vec![0.0; n];
    traversal[0] = 1.0;
    let mut current = 0;
    let mut head = faces[cf[0]][1];
    for _ in 1..n {
        let next = at_node[&head]
            .iter()
            .copied()
            .find(|&j| j != current)
            .expect("two edges per node");
        if traversal[next] != 0.0 {
            break;
        }
        let [a, b] = [faces[cf[next]][0], faces[cf[next]][1]];
        if a == head {
            traversal[next] = 1.0;
            head = b;
        } else {
            traversal[next] = -1.0;
            head = a;
        }
        current = next;
    }
    if traversal.iter().any(|&t| t == 0.0) {
        return Err(Error::Orientation {
            cell: c,
            msg: "edges form more than one loop".into(),
        });
    }
    let mut area2 = 0.0;
    for (i, &f) in cf.iter().enumerate() {
        let (p, q) = if traversal[i] > 0.0 {
            (nodes[faces[f][0]], nodes[faces[f][1]])
        } else {
            (nodes[faces[f][1]], nodes[faces[f][0]])
        };
        area2 += p.x * q.y - p.y * q.x;
    }
    if area2 == 0.0 {
        return Err(Error::Degenerate {
            entity: format!("cell {c}"),
            msg: "zero area".into(),
        });
    }
    let ccw = area2.signum();
    // On a counter-clockwise walk the outward normal is the clockwise rotation
    // of the walking direction, i.e. opposite to the stored fixed normal when
    // the edge is walked in stored order.
    Ok(traversal.iter().map(|t| -t * ccw).collect())
}

/// Orientation signs of a polyhedral cell: propagate a consistent loop
/// orientation across shared edges, then flip globally so the enclosed
/// signed volume is positive.
fn orient_polyhedron(
    c: usize,
    cf: &[usize],
    faces: &[Vec<usize>],
    face_geom: &[FaceGeometry],
    nodes: &[Point],
) -> Result<Vec<f64>> {
    let n = cf.len();
    if n < 4 {
        return Err(Error::Degenerate {
            entity: format!("cell {c}"),
            msg: format!("{n} faces"),
        });
    }
    // edge -> [(local face, +1 if walked low->high)]
    let mut edges: HashMap<(usize, usize), Vec<(usize, f64)>> = HashMap::new();
    for (i, &f) in cf.iter().enumerate() {
        let lp = &faces[f];
        for k in 0..lp.len() {
            let (a, b) = (lp[k], lp[(k + 1) % lp.len()]);
            let dir = if a < b { 1.0 } else { -1.0 };
            edges.entry((a.min(b), a.max(b))).or_default().push((i, dir));
        }
    }
    if edges.values().any(|e| e.len() != 2) {
        return Err(Error::Orientation {
            cell: c,
            msg: "faces do not form a closed surface".into(),
        });
    }
    let mut orient = vec![0.0; n];
    orient[0] = 1.0;
    let mut stack = vec![0usize];
    while let Some(i) = stack.pop() {
        let lp = &faces[cf[i]];
        for k in 0..lp.len() {
            let (a, b) = (lp[k], lp[(k + 1) % lp.len()]);
            let dir_i = if a < b { 1.0 } else { -1.0 };
            for &(j, dir_j) in &edges[&(a.min(b), a.max(b))] {
                if j == i {
                    continue;
                }
                let want = -orient[i] * dir_i * dir_j;
                if orient[j] == 0.0 {
                    orient[j] = want;
                    stack.push(j);
                } else if orient[j] != want {
                    return Err(Error::Orientation {
                        cell: c,
                        msg: "surface is not orientable".into(),
                    });
                }
            }
        }
    }
    if orient.iter().any(|&o| o == 0.0) {
        return Err(Error::Orientation {
            cell: c,
            msg: "surface is not connected".into(),
        });
    }
    let seed = cf
        .iter()
        .flat_map(|&f| faces[f].iter().map(|&v| nodes[v]))
        .sum::<Point>()
        / cf.iter().map(|&f| faces[f].len()).sum::<usize>() as f64;
    let vol: f64 = cf
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let g = &face_geom[f];
            orient[i] * g.area * g.normal.dot(&(g.centroid - seed))
        })
        .sum::<f64>()
        / 3.0;
    if vol == 0.0 {
        return Err(Error::Degenerate {
            entity: format!("cell {c}"),
            msg: "zero volume".into(),
        });
    }
    Ok(orient.iter().map(|o| o * vol.signum()).collect())
}
