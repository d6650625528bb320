use nalgebra::DVector;
use rayon::prelude::*;

use super::{edge_gram, edge_moments, ho_build_matrices, ho_interpolate, project_pressure, HoLocalMatrices};
use crate::hybrid::{BoundaryCondition, ProblemSpec, SolveReport};
use crate::linalg::spd_inverse;
use crate::local_ops::stability_constants;
use crate::quadrature::integrate_cell;
use crate::sparse::{band_solve, TripletBuilder};
use crate::{Error, Result};

/// Default size limit of the direct solve.
pub const DEFAULT_LIMIT: usize = 50_000;

/// Solution of the high-order scheme.
#[derive(Clone, Debug)]
pub struct HoSolution {
    pub order: usize,
    /// Pressure coefficients in each cell's scaled monomial basis.
    pub pressure: Vec<DVector<f64>>,
    /// Global flux degrees of freedom: edge moments, then cell moments.
    pub flux: DVector<f64>,
    pub local: Vec<HoLocalMatrices>,
    pub report: SolveReport,
}

impl HoSolution {
    /// Cell average of the discrete pressure.
    pub fn cell_average(&self, c: usize) -> f64 {
        // scaled monomials are centred at the centroid, so linear terms average to zero
        self.pressure[c][0]
    }
}

struct Indexing {
    per_edge: usize,
    cell_flux: usize,
    edge_block: usize,
    flux_total: usize,
    pressure: usize,
}

impl Indexing {
    fn flux_dof(&self, cell_faces: &[usize], c: usize, local: usize) -> usize {
        let ne = self.per_edge;
        let edges = cell_faces.len() * ne;
        if local < edges {
            cell_faces[local / ne] * ne + local % ne
        } else {
            self.edge_block + c * self.cell_flux + (local - edges)
        }
    }

    fn pressure_dof(&self, c: usize, i: usize) -> usize {
        self.flux_total + c * self.pressure + i
    }
}

/// Assembles and solves the mixed system
/// `M u - D^T p = -(Dirichlet trace)`, `-D u = -(int b psi)` with a banded LU.
/// Only Dirichlet boundaries are supported.
pub fn ho_solve(spec: &ProblemSpec<'_>, r: usize, limit: usize) -> Result<HoSolution> {
    let mesh = spec.mesh;
    if mesh.dim() != 2 {
        return Err(Error::Invalid("the high-order scheme is two-dimensional".into()));
    }
    for f in mesh.boundary_faces() {
        if !matches!(spec.boundary_condition(f)?, BoundaryCondition::Dirichlet(_)) {
            return Err(Error::Invalid("the high-order solve supports Dirichlet boundaries only".into()));
        }
    }
    let local: Vec<HoLocalMatrices> = mesh
        .cell_geometries()
        .par_iter()
        .zip(spec.tensors.par_iter())
        .map(|(g, k)| ho_build_matrices(g, k, r))
        .collect::<Result<_>>()?;
    let layout = local.first().map(|l| l.layout).ok_or_else(|| Error::Invalid("empty mesh".into()))?;
    let ne = layout.per_edge();
    let idx = Indexing {
        per_edge: ne,
        cell_flux: layout.cell_flux(),
        edge_block: mesh.num_faces() * ne,
        flux_total: mesh.num_faces() * ne + mesh.num_cells() * layout.cell_flux(),
        pressure: layout.pressure(),
    };
    let n = idx.flux_total + mesh.num_cells() * idx.pressure;
    if n > limit {
        return Err(Error::TooLarge { size: n, limit });
    }

    let mut t = TripletBuilder::new(n);
    let mut rhs = DVector::zeros(n);
    let b = &spec.source;
    for (c, lm) in local.iter().enumerate() {
        let faces = &mesh.cells()[c];
        let g = mesh.cell_geometry(c);
        let nu = lm.layout.flux();
        let dofs: Vec<usize> = (0..nu).map(|i| idx.flux_dof(faces, c, i)).collect();
        for i in 0..nu {
            for j in 0..nu {
                t.add(dofs[i], dofs[j], lm.m[(i, j)]);
            }
        }
        for p in 0..idx.pressure {
            let row = idx.pressure_dof(c, p);
            for j in 0..nu {
                let v = lm.div[(p, j)];
                if v != 0.0 {
                    t.add(row, dofs[j], -v);
                    t.add(dofs[j], row, -v);
                }
            }
            rhs[row] = -integrate_cell(g, 2 * r + 4, |x| b(x) * lm.basis.value(p, x));
        }
    }
    let einv = spd_inverse(&edge_gram(ne))?;
    for f in mesh.boundary_faces() {
        let BoundaryCondition::Dirichlet(gfun) = spec.boundary_condition(f)? else { unreachable!() };
        let c = mesh.face_cells(f).first;
        let geom = mesh.cell_geometry(c);
        let i = mesh.local_index(c, f).unwrap();
        let fv = &geom.face_vertices[i];
        let w = edge_moments(&fv[0], &fv[1], ne, r + 5, |x| gfun(x));
        let coef = &einv * w * (geom.signs[i] * geom.face_areas[i]);
        for k in 0..ne {
            rhs[f * ne + k] -= coef[k];
        }
    }
    let x = band_solve(&t.build(), &rhs, limit)?;
    let pressure: Vec<DVector<f64>> = (0..mesh.num_cells())
        .map(|c| DVector::from_fn(idx.pressure, |i, _| x[idx.pressure_dof(c, i)]))
        .collect();
    let flux = x.rows(0, idx.flux_total).into_owned();

    let mut c1_min = f64::INFINITY;
    let mut c2_max: f64 = 0.0;
    for (lm, g) in local.iter().zip(mesh.cell_geometries()) {
        let (c1, c2) = stability_constants(&lm.m, g)?;
        c1_min = c1_min.min(c1);
        c2_max = c2_max.max(c2);
    }
    let mut report = SolveReport {
        h: mesh.h(),
        size: n,
        c1_min,
        c2_max,
        ..Default::default()
    };
    if let Some(exact) = &spec.exact {
        let mut ep = 0.0;
        let mut eu = 0.0;
        for (c, lm) in local.iter().enumerate() {
            let g = mesh.cell_geometry(c);
            let pi = project_pressure(g, &lm.basis, &lm.mass, |x| (exact.pressure)(x))?;
            let dp = &pi - &pressure[c];
            ep += dp.dot(&(&lm.mass * &dp));
            let k = &spec.tensors[c];
            let ui = ho_interpolate(g, r, |x| -k.apply(&(exact.gradient)(x)))?;
            let faces = &mesh.cells()[c];
            let uh = DVector::from_fn(lm.layout.flux(), |i, _| flux[idx.flux_dof(faces, c, i)]);
            let du = ui - uh;
            eu += du.dot(&(&lm.m * &du));
        }
        report.err_p = Some(ep.sqrt());
        report.err_u = Some(eu.sqrt());
    }
    Ok(HoSolution {
        order: r,
        pressure,
        flux,
        local,
        report,
    })
}

/// Local flux degrees of freedom of cell `c` extracted from a global vector.
pub fn local_flux(sol: &HoSolution, mesh: &crate::mesh::PolyMesh, c: usize) -> DVector<f64> {
    let lm = &sol.local[c];
    let ne = lm.layout.per_edge();
    let idx = Indexing {
        per_edge: ne,
        cell_flux: lm.layout.cell_flux(),
        edge_block: mesh.num_faces() * ne,
        flux_total: 0,
        pressure: 0,
    };
    let faces = &mesh.cells()[c];
    DVector::from_fn(lm.layout.flux(), |i, _| sol.flux[idx.flux_dof(faces, c, i)])
}
