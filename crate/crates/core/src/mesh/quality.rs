use super::PolyMesh;

/// Shape-regularity measures of a mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct QualityReport {
    /// Maximum face count per cell.
    pub max_faces_per_cell: usize,
    /// Maximum edge count per face (3D); 1 in 2D where faces are edges.
    pub max_edges_per_face: usize,
    /// `max(max_faces_per_cell, max_edges_per_face)`.
    pub n_star: usize,
    /// `min |c| / diam(c)^d`.
    pub min_volume_ratio: f64,
    /// `min |f| / diam(c)^(d-1)`.
    pub min_face_ratio: f64,
    /// `min |e| / diam(c)`.
    pub min_edge_ratio: f64,
    /// `min d_{c,f} / diam(c)`, a computable stand-in for the pyramid-height
    /// condition.
    pub min_pyramid_ratio: f64,
    pub max_diameter: f64,
}

impl QualityReport {
    /// Smallest of the three shape ratios.
    pub fn rho_star(&self) -> f64 {
        self.min_volume_ratio.min(self.min_face_ratio).min(self.min_edge_ratio)
    }
}

pub(super) fn mesh_quality(mesh: &PolyMesh) -> QualityReport {
    let d = mesh.dim() as i32;
    let mut rep = QualityReport {
        max_faces_per_cell: 0,
        max_edges_per_face: if mesh.dim() == 2 { 1 } else { 0 },
        n_star: 0,
        min_volume_ratio: f64::INFINITY,
        min_face_ratio: f64::INFINITY,
        min_edge_ratio: f64::INFINITY,
        min_pyramid_ratio: f64::INFINITY,
        max_diameter: 0.0,
    };
    for g in mesh.cell_geometries() {
        let diam = g.diameter;
        rep.max_diameter = rep.max_diameter.max(diam);
        rep.max_faces_per_cell = rep.max_faces_per_cell.max(g.num_faces());
        rep.min_volume_ratio = rep.min_volume_ratio.min(g.volume / diam.powi(d));
        for (i, fv) in g.face_vertices.iter().enumerate() {
            rep.min_face_ratio = rep.min_face_ratio.min(g.face_areas[i] / diam.powi(d - 1));
            rep.min_pyramid_ratio = rep.min_pyramid_ratio.min(g.distances[i] / diam);
            let k = fv.len();
            if mesh.dim() == 3 {
                rep.max_edges_per_face = rep.max_edges_per_face.max(k);
                for j in 0..k {
                    let e = (fv[(j + 1) % k] - fv[j]).norm();
                    rep.min_edge_ratio = rep.min_edge_ratio.min(e / diam);
                }
            } else {
                rep.min_edge_ratio = rep.min_edge_ratio.min(g.face_areas[i] / diam);
            }
        }
    }
    rep.n_star = rep.max_faces_per_cell.max(rep.max_edges_per_face);
    rep
}
