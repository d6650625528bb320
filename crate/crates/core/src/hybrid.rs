//! Mixed-hybrid assembly and solve.
//!
//! Every cell contributes a flux operator `W_c` mapping the signed pressure
//! jumps `B (p_c 1 - lambda_c)` to face fluxes, where `B = diag(sigma |f|)`.
//! Cell pressures and fluxes are eliminated locally and the face multipliers
//! `lambda` solve a symmetric positive definite system. The mimetic scheme
//! uses `W_c = M_c^{-1}`; the finite volume bridges and the div-k scheme plug
//! in their own operators.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::linalg::spd_inverse;
use crate::local_ops::{stability_constants, DiffusionTensor, LocalMatrices, Stabilization};
use crate::mesh::{CellGeometry, Point, PolyMesh};
use crate::quadrature::{cell_average, face_average};
use crate::sparse::{band_solve, dense_solve, pcg, CsrMatrix, TripletBuilder, BAND_LIMIT};
use crate::{Error, Result};

pub type ScalarFn = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&Point) -> Point + Send + Sync>;

/// Wraps a closure as a [`ScalarFn`].
pub fn scalar_fn(f: impl Fn(&Point) -> f64 + Send + Sync + 'static) -> ScalarFn {
    Arc::new(f)
}

pub fn vector_fn(f: impl Fn(&Point) -> Point + Send + Sync + 'static) -> VectorFn {
    Arc::new(f)
}

#[derive(Clone)]
pub enum BoundaryCondition {
    /// Pressure data; `lambda_f` is its face average.
    Dirichlet(ScalarFn),
    /// Outward normal flux density `u . n_{c,f}`.
    Neumann(ScalarFn),
}

impl std::fmt::Debug for BoundaryCondition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Dirichlet(_) => f.write_str("Dirichlet"),
            Self::Neumann(_) => f.write_str("Neumann"),
        }
    }
}

/// Exact pressure and its gradient; the exact flux is `-K grad p`.
#[derive(Clone)]
pub struct ExactSolution {
    pub pressure: ScalarFn,
    pub gradient: VectorFn,
}

/// Resolved condition on one face.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FaceCondition {
    Free,
    /// Known multiplier value.
    Fixed(f64),
    /// Prescribed total outward flux `|f| g`.
    Flux(f64),
}

/// Stationary diffusion problem `u = -K grad p`, `div u = b`.
#[derive(Clone)]
pub struct ProblemSpec<'a> {
    pub mesh: &'a PolyMesh,
    pub tensors: Vec<DiffusionTensor>,
    pub source: ScalarFn,
    pub boundary: BTreeMap<String, BoundaryCondition>,
    /// Applied to boundary faces whose tag has no entry in `boundary`.
    pub default_boundary: Option<BoundaryCondition>,
    /// Fixes `lambda` on one face; needed when no Dirichlet data is present.
    pub pin: Option<(usize, f64)>,
    pub exact: Option<ExactSolution>,
}

impl<'a> ProblemSpec<'a> {
    /// Homogeneous Dirichlet problem with zero source and a uniform tensor.
    pub fn new(mesh: &'a PolyMesh, k: DiffusionTensor) -> Self {
        Self {
            mesh,
            tensors: vec![k; mesh.num_cells()],
            source: scalar_fn(|_| 0.0),
            boundary: BTreeMap::new(),
            default_boundary: Some(BoundaryCondition::Dirichlet(scalar_fn(|_| 0.0))),
            pin: None,
            exact: None,
        }
    }

    pub fn with_tensors(mut self, tensors: Vec<DiffusionTensor>) -> Self {
        self.tensors = tensors;
        self
    }

    pub fn with_source(mut self, b: ScalarFn) -> Self {
        self.source = b;
        self
    }

    pub fn with_boundary(mut self, tag: &str, bc: BoundaryCondition) -> Self {
        self.boundary.insert(tag.to_string(), bc);
        self
    }

    pub fn with_default_boundary(mut self, bc: Option<BoundaryCondition>) -> Self {
        self.default_boundary = bc;
        self
    }

    pub fn with_pin(mut self, face: usize, value: f64) -> Self {
        self.pin = Some((face, value));
        self
    }

    /// Sets the exact solution and uses its trace as Dirichlet data everywhere.
    pub fn with_exact(mut self, exact: ExactSolution) -> Self {
        self.default_boundary = Some(BoundaryCondition::Dirichlet(exact.pressure.clone()));
        self.boundary.clear();
        self.exact = Some(exact);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.tensors.len() != self.mesh.num_cells() {
            return Err(Error::SizeMismatch {
                expected: self.mesh.num_cells(),
                got: self.tensors.len(),
            });
        }
        if let Some(k) = self.tensors.iter().find(|k| k.dim() != self.mesh.dim()) {
            return Err(Error::Invalid(format!("{}D tensor on a {}D mesh", k.dim(), self.mesh.dim())));
        }
        Ok(())
    }

    pub fn boundary_condition(&self, f: usize) -> Result<&BoundaryCondition> {
        let tag = self.mesh.boundary_tag(f);
        tag.and_then(|t| self.boundary.get(t))
            .or(self.default_boundary.as_ref())
            .ok_or_else(|| Error::Invalid(format!("boundary face {f} (tag {tag:?}) has no condition")))
    }

    /// Resolves boundary data to per-face conditions. Rejects problems whose
    /// pressure is only determined up to a constant unless `allow_floating`.
    pub fn face_conditions(&self, allow_floating: bool) -> Result<Vec<FaceCondition>> {
        let mesh = self.mesh;
        let mut out = vec![FaceCondition::Free; mesh.num_faces()];
        for f in mesh.boundary_faces() {
            let c = mesh.face_cells(f).first;
            let g = mesh.cell_geometry(c);
            let i = mesh.local_index(c, f).expect("face of its cell");
            out[f] = match self.boundary_condition(f)? {
                BoundaryCondition::Dirichlet(p) => FaceCondition::Fixed(face_average(g, i, 4, |x| p(x))),
                BoundaryCondition::Neumann(q) => {
                    FaceCondition::Flux(face_average(g, i, 4, |x| q(x)) * g.face_areas[i])
                }
            };
        }
        if let Some((f, v)) = self.pin {
            if f >= mesh.num_faces() {
                return Err(Error::Invalid(format!("pin face {f} out of range")));
            }
            out[f] = FaceCondition::Fixed(v);
        }
        if !allow_floating && !out.iter().any(|c| matches!(c, FaceCondition::Fixed(_))) {
            return Err(Error::Invalid(
                "pure Neumann problem: supply a pressure pin to remove the constant null space".into(),
            ));
        }
        Ok(out)
    }
}

/// Cell pressures, face multipliers and per-cell fluxes (fixed-normal sign
/// convention, cell face order).
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteFields {
    pub p: Vec<f64>,
    pub lambda: Vec<f64>,
    pub u: Vec<DVector<f64>>,
}

/// Cell averages of `f`.
pub fn interpolate_scalar<F: Fn(&Point) -> f64 + Sync>(mesh: &PolyMesh, f: F) -> Vec<f64> {
    mesh.cell_geometries().iter().map(|g| cell_average(g, 4, &f)).collect()
}

/// Face averages of `v . n_f`, one value per face scattered to both cells.
pub fn interpolate_flux<F: Fn(&Point) -> Point + Sync>(mesh: &PolyMesh, v: F) -> Vec<DVector<f64>> {
    let face_values: Vec<f64> = (0..mesh.num_faces())
        .map(|f| {
            let c = mesh.face_cells(f).first;
            let g = mesh.cell_geometry(c);
            let i = mesh.local_index(c, f).expect("face of its cell");
            let n = g.normals[i];
            face_average(g, i, 4, |x| v(x).dot(&n))
        })
        .collect();
    scatter(mesh, &face_values)
}

/// Per-cell copies of a face-indexed vector.
pub fn scatter(mesh: &PolyMesh, face_values: &[f64]) -> Vec<DVector<f64>> {
    mesh.cells()
        .iter()
        .map(|cf| DVector::from_iterator(cf.len(), cf.iter().map(|&f| face_values[f])))
        .collect()
}

/// Flux interpolant of the exact solution, cell by cell: `-K_c grad p . n_f`.
pub fn exact_flux_interpolant(spec: &ProblemSpec<'_>, exact: &ExactSolution) -> Vec<DVector<f64>> {
    spec.mesh
        .cell_geometries()
        .iter()
        .zip(&spec.tensors)
        .map(|(g, k)| {
            DVector::from_fn(g.num_faces(), |i, _| {
                let n = g.normals[i];
                face_average(g, i, 4, |x| -k.apply(&(exact.gradient)(x)).dot(&n))
            })
        })
        .collect()
}

/// One cell's contribution to the condensed system.
#[derive(Clone, Debug)]
pub struct CellOperator {
    /// Maps `B (p 1 - lambda)` to fluxes; symmetric positive definite.
    pub w: DMatrix<f64>,
    /// Mass coefficient `m_c` (zero for stationary problems).
    pub mass: f64,
    /// `|c| b_c + m_c p_old`.
    pub rhs: f64,
}

#[derive(Clone, Debug)]
struct Condensed {
    b: DVector<f64>,
    a: DVector<f64>,
    denom: f64,
    w: DMatrix<f64>,
    rhs: f64,
}

/// How the condensed system is solved.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SolverMethod {
    Cg,
    /// Dense direct solve, limited to small systems.
    Direct,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub rtol: f64,
    pub max_iter: Option<usize>,
    pub method: SolverMethod,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-11,
            max_iter: None,
            method: SolverMethod::Cg,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
    pub size: usize,
}

/// Schur complement system in the free face multipliers plus the data needed
/// to recover cell unknowns.
#[derive(Clone, Debug)]
pub struct CondensedSystem {
    pub matrix: CsrMatrix,
    pub rhs: DVector<f64>,
    /// Unknown index of each free face.
    pub unknown: Vec<Option<usize>>,
    /// Multiplier value of each fixed face.
    pub fixed: Vec<Option<f64>>,
    cells: Vec<Condensed>,
    face_lists: Vec<Vec<usize>>,
}

/// Eliminates cell unknowns and assembles the face system.
pub fn condense(mesh: &PolyMesh, ops: &[CellOperator], conditions: &[FaceCondition]) -> Result<CondensedSystem> {
    if ops.len() != mesh.num_cells() {
        return Err(Error::SizeMismatch {
            expected: mesh.num_cells(),
            got: ops.len(),
        });
    }
    let nf = mesh.num_faces();
    let mut unknown = vec![None; nf];
    let mut fixed = vec![None; nf];
    let mut count = 0;
    for f in 0..nf {
        match conditions[f] {
            FaceCondition::Fixed(v) => fixed[f] = Some(v),
            _ => {
                unknown[f] = Some(count);
                count += 1;
            }
        }
    }
    let cells: Vec<Condensed> = mesh
        .cell_geometries()
        .par_iter()
        .zip(ops.par_iter())
        .enumerate()
        .map(|(c, (g, op))| {
            let b = signed_areas(g);
            let a_mat = DMatrix::from_fn(b.len(), b.len(), |i, j| b[i] * op.w[(i, j)] * b[j]);
            let a: DVector<f64> = a_mat.column_sum();
            let alpha = a.sum();
            let denom = op.mass + alpha;
            if !(denom > 0.0) || op.mass < 0.0 {
                return Err(Error::Singular { cell: c, cond: f64::INFINITY });
            }
            Ok(Condensed {
                b,
                a,
                denom,
                w: op.w.clone(),
                rhs: op.rhs,
            })
        })
        .collect::<Result<_>>()?;

    let mut trip = TripletBuilder::new(count);
    let mut rhs = DVector::zeros(count);
    for (c, cell) in cells.iter().enumerate() {
        let faces = &mesh.cells()[c];
        let nl = faces.len();
        for i in 0..nl {
            let Some(ui) = unknown[faces[i]] else { continue };
            rhs[ui] += cell.a[i] * cell.rhs / cell.denom;
            for j in 0..nl {
                let s = cell.b[i] * cell.w[(i, j)] * cell.b[j] - cell.a[i] * cell.a[j] / cell.denom;
                match (unknown[faces[j]], fixed[faces[j]]) {
                    (Some(uj), _) => trip.add(ui, uj, s),
                    (None, Some(v)) => rhs[ui] -= s * v,
                    (None, None) => unreachable!(),
                }
            }
        }
    }
    for f in 0..nf {
        if let (Some(u), FaceCondition::Flux(s)) = (unknown[f], conditions[f]) {
            rhs[u] -= s;
        }
    }
    Ok(CondensedSystem {
        matrix: trip.build(),
        rhs,
        unknown,
        fixed,
        cells,
        face_lists: mesh.cells().to_vec(),
    })
}

fn signed_areas(g: &CellGeometry) -> DVector<f64> {
    DVector::from_fn(g.num_faces(), |i, _| g.signs[i] * g.face_areas[i])
}

impl CondensedSystem {
    pub fn size(&self) -> usize {
        self.rhs.len()
    }

    /// Solves for the free multipliers and recovers all fields.
    pub fn solve(&self, opts: &SolverOptions, guess: Option<&[f64]>) -> Result<(DiscreteFields, SolveStats)> {
        let n = self.size();
        let (x, iterations, residual) = match opts.method {
            SolverMethod::Direct => {
                let x = dense_solve(&self.matrix, &self.rhs)?;
                let r = residual_of(&self.matrix, &x, &self.rhs);
                (x, 0, r)
            }
            SolverMethod::Cg => {
                let x0 = guess.map(|lam| {
                    let mut v = DVector::zeros(n);
                    for (f, u) in self.unknown.iter().enumerate() {
                        if let Some(u) = u {
                            v[*u] = lam[f];
                        }
                    }
                    v
                });
                let out = pcg(&self.matrix, &self.rhs, x0.as_ref(), opts.rtol, opts.max_iter)?;
                (out.x, out.iterations, out.residual)
            }
        };
        Ok((
            self.recover(&x),
            SolveStats {
                iterations,
                residual,
                size: n,
            },
        ))
    }

    /// Cell pressures and fluxes from the free multipliers `x`.
    pub fn recover(&self, x: &DVector<f64>) -> DiscreteFields {
        let lambda: Vec<f64> = self
            .unknown
            .iter()
            .zip(&self.fixed)
            .map(|(u, v)| match (u, v) {
                (Some(u), _) => x[*u],
                (None, Some(v)) => *v,
                _ => unreachable!(),
            })
            .collect();
        let (p, u): (Vec<f64>, Vec<DVector<f64>>) = self
            .cells
            .par_iter()
            .zip(self.face_lists.par_iter())
            .map(|(cell, faces)| {
                let lam = DVector::from_iterator(faces.len(), faces.iter().map(|&f| lambda[f]));
                let p = (cell.rhs + cell.a.dot(&lam)) / cell.denom;
                let jump = cell.b.component_mul(&DVector::from_fn(faces.len(), |i, _| p - lam[i]));
                (p, &cell.w * jump)
            })
            .unzip();
        DiscreteFields { p, lambda, u }
    }
}

fn residual_of(a: &CsrMatrix, x: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let bn = b.norm();
    if bn == 0.0 {
        0.0
    } else {
        (b - a.matvec(x)).norm() / bn
    }
}

/// Mimetic local matrices for every cell, computed in parallel.
pub fn local_matrices(spec: &ProblemSpec<'_>, stab: &Stabilization) -> Result<Vec<LocalMatrices>> {
    spec.validate()?;
    spec.mesh
        .cell_geometries()
        .par_iter()
        .zip(spec.tensors.par_iter())
        .enumerate()
        .map(|(c, (g, k))| {
            LocalMatrices::new(g, k, stab).map_err(|e| match e {
                Error::Degenerate { msg, .. } => Error::Degenerate {
                    entity: format!("cell {c}"),
                    msg,
                },
                other => other,
            })
        })
        .collect()
}

/// Source cell integrals `|c| b_c`.
pub fn source_integrals(spec: &ProblemSpec<'_>) -> Vec<f64> {
    let b = &spec.source;
    spec.mesh
        .cell_geometries()
        .par_iter()
        .map(|g| g.volume * cell_average(g, 4, |x| b(x)))
        .collect()
}

/// Condensed system of the mimetic scheme with stabilization `stab`.
pub fn assemble_condensed_system(
    spec: &ProblemSpec<'_>,
    stab: &Stabilization,
) -> Result<(CondensedSystem, Vec<LocalMatrices>)> {
    let conditions = spec.face_conditions(false)?;
    let local = local_matrices(spec, stab)?;
    let rhs = source_integrals(spec);
    let ops: Vec<CellOperator> = local
        .par_iter()
        .zip(rhs.par_iter())
        .map(|(lm, r)| {
            Ok(CellOperator {
                w: spd_inverse(&lm.m)?,
                mass: 0.0,
                rhs: *r,
            })
        })
        .collect::<Result<_>>()?;
    Ok((condense(spec.mesh, &ops, &conditions)?, local))
}

/// Errors and diagnostics of one solve.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolveReport {
    pub h: f64,
    pub err_p: Option<f64>,
    pub err_u: Option<f64>,
    /// Relative defect of the discrete energy identity of the solution.
    pub duality_residual: f64,
    pub iterations: usize,
    pub residual: f64,
    pub size: usize,
    pub c1_min: f64,
    pub c2_max: f64,
}

impl SolveReport {
    /// Flat `key=value` block.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map(|v| format!("{v:e}")).unwrap_or_default();
        writeln!(s, "h={:e}", self.h).unwrap();
        writeln!(s, "err_p={}", opt(self.err_p)).unwrap();
        writeln!(s, "err_u={}", opt(self.err_u)).unwrap();
        writeln!(s, "duality_residual={:e}", self.duality_residual).unwrap();
        writeln!(s, "iterations={}", self.iterations).unwrap();
        writeln!(s, "residual={:e}", self.residual).unwrap();
        writeln!(s, "size={}", self.size).unwrap();
        writeln!(s, "c1_min={:e}", self.c1_min).unwrap();
        writeln!(s, "c2_max={:e}", self.c2_max).unwrap();
        s
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub fields: DiscreteFields,
    pub report: SolveReport,
    /// Inner-product matrix of every cell, used for flux norms.
    pub mass: Vec<DMatrix<f64>>,
}

/// Solves the stationary problem with the mimetic scheme.
pub fn solve(spec: &ProblemSpec<'_>, stab: &Stabilization, opts: &SolverOptions) -> Result<Solution> {
    let (system, local) = assemble_condensed_system(spec, stab)?;
    let (fields, stats) = system.solve(opts, None)?;
    let mass: Vec<DMatrix<f64>> = local.into_iter().map(|lm| lm.m).collect();
    let report = build_report(spec, &fields, &mass, stats)?;
    Ok(Solution { fields, report, mass })
}

/// Report for fields produced with inner products `mass`.
pub fn build_report(
    spec: &ProblemSpec<'_>,
    fields: &DiscreteFields,
    mass: &[DMatrix<f64>],
    stats: SolveStats,
) -> Result<SolveReport> {
    let mut c1_min = f64::INFINITY;
    let mut c2_max: f64 = 0.0;
    for (g, m) in spec.mesh.cell_geometries().iter().zip(mass) {
        let (c1, c2) = stability_constants(m, g)?;
        c1_min = c1_min.min(c1);
        c2_max = c2_max.max(c2);
    }
    let (err_p, err_u) = match &spec.exact {
        Some(_) => {
            let (p, u) = error_norms(fields, spec, mass)?;
            (Some(p), Some(u))
        }
        None => (None, None),
    };
    Ok(SolveReport {
        h: spec.mesh.h(),
        err_p,
        err_u,
        duality_residual: energy_identity_defect(spec.mesh, fields, mass),
        iterations: stats.iterations,
        residual: stats.residual,
        size: stats.size,
        c1_min,
        c2_max,
    })
}

/// `|||q|||_C = (sum |c| q_c^2)^{1/2}`.
pub fn cell_norm(mesh: &PolyMesh, q: &[f64]) -> f64 {
    mesh.cell_geometries()
        .iter()
        .zip(q)
        .map(|(g, v)| g.volume * v * v)
        .sum::<f64>()
        .sqrt()
}

/// `|||v|||_F = (sum v_c^T M_c v_c)^{1/2}`.
pub fn flux_norm(mass: &[DMatrix<f64>], v: &[DVector<f64>]) -> f64 {
    mass.iter().zip(v).map(|(m, v)| v.dot(&(m * v))).sum::<f64>().sqrt()
}

/// Triple-bar errors `(|||p^I - p_h|||, |||u^I - u_h|||)` against the
/// interpolants of the exact solution.
pub fn error_norms(fields: &DiscreteFields, spec: &ProblemSpec<'_>, mass: &[DMatrix<f64>]) -> Result<(f64, f64)> {
    let exact = spec
        .exact
        .as_ref()
        .ok_or_else(|| Error::Invalid("error norms need an exact solution".into()))?;
    let p_int = interpolate_scalar(spec.mesh, |x| (exact.pressure)(x));
    let dp: Vec<f64> = p_int.iter().zip(&fields.p).map(|(a, b)| a - b).collect();
    let u_int = exact_flux_interpolant(spec, exact);
    let du: Vec<DVector<f64>> = u_int.iter().zip(&fields.u).map(|(a, b)| a - b).collect();
    Ok((cell_norm(spec.mesh, &dp), flux_norm(mass, &du)))
}

/// Relative defect of `sum_c u_c^T M_c u_c = sum_c sum_f sigma |f| (p_c - lambda_f) u_f`,
/// i.e. of the duality relation `u = -GRAD~(p, lambda)` tested with `u`.
pub fn energy_identity_defect(mesh: &PolyMesh, fields: &DiscreteFields, mass: &[DMatrix<f64>]) -> f64 {
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    let mut scale = 0.0;
    for (c, g) in mesh.cell_geometries().iter().enumerate() {
        let u = &fields.u[c];
        lhs += u.dot(&(&mass[c] * u));
        for (i, &f) in g.faces.iter().enumerate() {
            let t = g.signs[i] * g.face_areas[i] * (fields.p[c] - fields.lambda[f]) * u[i];
            rhs += t;
            scale += t.abs();
        }
    }
    if scale == 0.0 {
        0.0
    } else {
        (lhs - rhs).abs() / scale
    }
}

/// Global face inner-product matrix assembled from the cell matrices.
pub fn global_mass_matrix(mesh: &PolyMesh, mass: &[DMatrix<f64>]) -> CsrMatrix {
    let mut t = TripletBuilder::new(mesh.num_faces());
    for (faces, m) in mesh.cells().iter().zip(mass) {
        for (i, &fi) in faces.iter().enumerate() {
            for (j, &fj) in faces.iter().enumerate() {
                t.add(fi, fj, m[(i, j)]);
            }
        }
    }
    t.build()
}

/// `(D u)_c = sum_f sigma |f| u_f` for a conforming face vector.
pub fn apply_divergence(mesh: &PolyMesh, u: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        mesh.num_cells(),
        mesh.cell_geometries()
            .iter()
            .map(|g| (0..g.num_faces()).map(|i| g.signs[i] * g.face_areas[i] * u[g.faces[i]]).sum::<f64>()),
    )
}

/// `D^T q` as a face vector.
pub fn apply_divergence_transpose(mesh: &PolyMesh, q: &[f64]) -> DVector<f64> {
    let mut out = DVector::zeros(mesh.num_faces());
    for (c, g) in mesh.cell_geometries().iter().enumerate() {
        for i in 0..g.num_faces() {
            out[g.faces[i]] += g.signs[i] * g.face_areas[i] * q[c];
        }
    }
    out
}

/// Global derived gradient with homogeneous Dirichlet data:
/// `GRAD~ q = -M_F^{-1} D^T q`, solved directly.
pub fn global_derived_gradient(mesh: &PolyMesh, mass: &[DMatrix<f64>], q: &[f64]) -> Result<DVector<f64>> {
    let mf = global_mass_matrix(mesh, mass);
    let rhs = -apply_divergence_transpose(mesh, q);
    band_solve(&mf, &rhs, BAND_LIMIT)
}

/// `|[DIV u, q]_C + [u, GRAD~ q]_F|` for a conforming face vector `u`.
pub fn global_duality_residual(mesh: &PolyMesh, mass: &[DMatrix<f64>], u: &DVector<f64>, q: &[f64]) -> Result<f64> {
    if u.len() != mesh.num_faces() || q.len() != mesh.num_cells() {
        return Err(Error::SizeMismatch {
            expected: mesh.num_faces(),
            got: u.len(),
        });
    }
    let grad = global_derived_gradient(mesh, mass, q)?;
    let div_term = apply_divergence(mesh, u).dot(&DVector::from_column_slice(q));
    let mf = global_mass_matrix(mesh, mass);
    Ok((div_term + u.dot(&mf.matvec(&grad))).abs())
}

/// Cell pressures and conforming face fluxes from the uncondensed system.
#[derive(Clone, Debug)]
pub struct SaddlePointSolution {
    pub p: Vec<f64>,
    /// One flux per face, fixed-normal convention.
    pub u: Vec<f64>,
}

/// Solves the mixed system `M_F u - D^T p = -G`, `-D u = -|c| b` directly.
/// Intended as an independent check of the condensed solve on small meshes.
pub fn solve_saddle_point(spec: &ProblemSpec<'_>, mass: &[DMatrix<f64>]) -> Result<SaddlePointSolution> {
    if spec.pin.is_some() {
        return Err(Error::Invalid("the saddle-point solve does not support pins".into()));
    }
    let mesh = spec.mesh;
    let conditions = spec.face_conditions(false)?;
    let nf = mesh.num_faces();
    let nc = mesh.num_cells();
    let mut known = vec![None; nf];
    for f in mesh.boundary_faces() {
        if let FaceCondition::Flux(total) = conditions[f] {
            // outward total -> fixed-normal density
            let c = mesh.face_cells(f).first;
            let i = mesh.local_index(c, f).unwrap();
            let g = mesh.cell_geometry(c);
            known[f] = Some(g.signs[i] * total / g.face_areas[i]);
        }
    }
    let mut index = vec![usize::MAX; nf];
    let mut nu = 0;
    for f in 0..nf {
        if known[f].is_none() {
            index[f] = nu;
            nu += 1;
        }
    }
    let n = nu + nc;
    let mut t = TripletBuilder::new(n);
    let mut rhs = DVector::zeros(n);
    let sources = source_integrals(spec);
    for (c, g) in mesh.cell_geometries().iter().enumerate() {
        let row_p = nu + c;
        rhs[row_p] -= sources[c];
        for i in 0..g.num_faces() {
            let fi = g.faces[i];
            let bi = g.signs[i] * g.face_areas[i];
            match known[fi] {
                Some(v) => rhs[row_p] += bi * v,
                None => {
                    t.add(row_p, index[fi], -bi);
                    t.add(index[fi], row_p, -bi);
                    if let FaceCondition::Fixed(lam) = conditions[fi] {
                        rhs[index[fi]] -= bi * lam;
                    }
                    for j in 0..g.num_faces() {
                        let fj = g.faces[j];
                        match known[fj] {
                            Some(v) => rhs[index[fi]] -= mass[c][(i, j)] * v,
                            None => t.add(index[fi], index[fj], mass[c][(i, j)]),
                        }
                    }
                }
            }
        }
    }
    let x = band_solve(&t.build(), &rhs, BAND_LIMIT)?;
    let u = (0..nf).map(|f| known[f].unwrap_or_else(|| x[index[f]])).collect();
    let p = (0..nc).map(|c| x[nu + c]).collect();
    Ok(SaddlePointSolution { p, u })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::local_ops::primary_div;
    use crate::mesh::{generate_perturbed_quad_mesh, BoxDomain};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn linear_exact() -> ExactSolution {
        ExactSolution {
            pressure: scalar_fn(|p| 1.0 + 2.0 * p.x - p.y),
            gradient: vector_fn(|_| Point::new(2.0, -1.0, 0.0)),
        }
    }

    #[test]
    fn scalar_interpolants() {
        let m = PolyMesh::unit_square();
        assert!((interpolate_scalar(&m, |_| 1.0)[0] - 1.0).abs() < 1e-15);
        assert!((interpolate_scalar(&m, |p| p.x)[0] - 0.5).abs() < 1e-15);
        assert!((interpolate_scalar(&m, |p| p.x * p.x)[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn flux_interpolants() {
        let m = PolyMesh::unit_square();
        let u = interpolate_flux(&m, |p| Point::new(p.x, 0.0, 0.0));
        assert!((&u[0] - DVector::from_column_slice(&[1.0, 0.0, 0.0, 0.0])).norm() < 1e-15);
        let a = Point::new(0.3, -2.0, 0.0);
        let c = interpolate_flux(&m, |_| a);
        let g = m.cell_geometry(0);
        for i in 0..4 {
            assert!((c[0][i] - a.dot(&g.normals[i])).abs() < 1e-15);
        }
        let mesh = generate_perturbed_quad_mesh(3, 2, BoxDomain::unit(), 0.2, 1).unwrap();
        let u = interpolate_flux(&mesh, |p| Point::new(p.y * p.y, p.x, 0.0));
        for f in 0..mesh.num_faces() {
            let fc = mesh.face_cells(f);
            if let Some(c2) = fc.second {
                let a = u[fc.first][mesh.local_index(fc.first, f).unwrap()];
                let b = u[c2][mesh.local_index(c2, f).unwrap()];
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn single_cell_system() {
        let m = PolyMesh::unit_square();
        let spec = ProblemSpec::new(&m, DiffusionTensor::isotropic(2, 1.0));
        // all faces Dirichlet: nothing left to solve
        let (sys, _) = assemble_condensed_system(&spec, &Stabilization::DefaultTrace).unwrap();
        assert_eq!(sys.size(), 0);
        let spec = spec
            .with_default_boundary(Some(BoundaryCondition::Neumann(scalar_fn(|_| 0.0))))
            .with_pin(0, 0.0);
        let (sys, _) = assemble_condensed_system(&spec, &Stabilization::DefaultTrace).unwrap();
        assert_eq!(sys.size(), 3);
        let spec = ProblemSpec::new(&m, DiffusionTensor::isotropic(2, 1.0))
            .with_default_boundary(Some(BoundaryCondition::Neumann(scalar_fn(|_| 0.0))));
        assert!(matches!(
            assemble_condensed_system(&spec, &Stabilization::DefaultTrace),
            Err(Error::Invalid(_))
        ));
    }

    #[test]
    fn one_cell_with_neumann_sides_is_spd() {
        let m = PolyMesh::unit_square();
        let spec = ProblemSpec::new(&m, DiffusionTensor::isotropic(2, 1.0))
            .with_default_boundary(Some(BoundaryCondition::Neumann(scalar_fn(|_| 0.0))))
            .with_pin(2, 1.0);
        let (sys, _) = assemble_condensed_system(&spec, &Stabilization::DefaultTrace).unwrap();
        let d = sys.matrix.to_dense();
        assert!(crate::linalg::sym_eigenvalues(&d)[0] > 0.0);
    }

    #[test]
    fn two_cells_couple_through_interior_face() {
        let mesh = generate_perturbed_quad_mesh(2, 1, BoxDomain::unit(), 0.0, 0).unwrap();
        let spec = ProblemSpec::new(&mesh, DiffusionTensor::diagonal(&[1.0, 3.0]))
            .with_default_boundary(Some(BoundaryCondition::Neumann(scalar_fn(|_| 0.0))))
            .with_boundary("left", BoundaryCondition::Dirichlet(scalar_fn(|_| 1.0)));
        let (sys, _) = assemble_condensed_system(&spec, &Stabilization::DefaultTrace).unwrap();
        assert!(sys.matrix.symmetry_defect() < 1e-14);
        let interior = (0..mesh.num_faces()).find(|&f| !mesh.is_boundary_face(f)).unwrap();
        let row = sys.unknown[interior].unwrap();
        // both cells minus the eliminated Dirichlet face
        assert_eq!(sys.matrix.row(row).count(), 6);
    }

    #[test]
    fn linear_solution_is_exact() {
        let mesh = generate_perturbed_quad_mesh(6, 5, BoxDomain::unit(), 0.25, 3).unwrap();
        let k = DiffusionTensor::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.0])).unwrap();
        let spec = ProblemSpec::new(&mesh, k).with_exact(linear_exact());
        let sol = solve(&spec, &Stabilization::DefaultTrace, &SolverOptions::default()).unwrap();
        assert!(sol.report.err_p.unwrap() < 1e-10);
        assert!(sol.report.err_u.unwrap() < 1e-10);
        assert!(sol.report.duality_residual < 1e-10);
        assert!(sol.report.c1_min > 0.0);
    }

    #[test]
    fn mixed_boundary_and_balance() {
        let mesh = generate_perturbed_quad_mesh(8, 8, BoxDomain::unit(), 0.2, 5).unwrap();
        let exact = ExactSolution {
            pressure: scalar_fn(|p| p.x * p.x + p.y),
            gradient: vector_fn(|p| Point::new(2.0 * p.x, 1.0, 0.0)),
        };
        // u.n on top (n = +y) is -1, on bottom (n = -y) is +1
        let spec = ProblemSpec::new(&mesh, DiffusionTensor::isotropic(2, 1.0))
            .with_exact(exact)
            .with_source(scalar_fn(|_| -2.0))
            .with_boundary("top", BoundaryCondition::Neumann(scalar_fn(|_| -1.0)))
            .with_boundary("bottom", BoundaryCondition::Neumann(scalar_fn(|_| 1.0)));
        let sol = solve(&spec, &Stabilization::DefaultTrace, &SolverOptions::default()).unwrap();
        for (c, g) in mesh.cell_geometries().iter().enumerate() {
            let div = primary_div(g, sol.fields.u[c].as_slice()).unwrap();
            assert!((div + 2.0).abs() < 1e-8, "cell {c}: {div}");
        }
        for f in 0..mesh.num_faces() {
            let fc = mesh.face_cells(f);
            if let Some(c2) = fc.second {
                let a = sol.fields.u[fc.first][mesh.local_index(fc.first, f).unwrap()];
                let b = sol.fields.u[c2][mesh.local_index(c2, f).unwrap()];
                assert!((a - b).abs() < 1e-9);
            }
        }
        assert!(sol.report.err_p.unwrap() < 0.02);
    }

    #[test]
    fn condensed_matches_saddle_point() {
        let mesh = generate_perturbed_quad_mesh(5, 4, BoxDomain::unit(), 0.3, 8).unwrap();
        let exact = ExactSolution {
            pressure: scalar_fn(|p| (p.x * 2.0).sin() + p.y * p.y),
            gradient: vector_fn(|p| Point::new(2.0 * (2.0 * p.x).cos(), 2.0 * p.y, 0.0)),
        };
        let spec = ProblemSpec::new(&mesh, DiffusionTensor::diagonal(&[1.0, 4.0]))
            .with_exact(exact)
            .with_source(scalar_fn(|p| 4.0 * (2.0 * p.x).sin() - 8.0))
            .with_boundary("right", BoundaryCondition::Neumann(scalar_fn(|p| -2.0 * (2.0 * p.x).cos())));
        let opts = SolverOptions {
            method: SolverMethod::Direct,
            ..Default::default()
        };
        let sol = solve(&spec, &Stabilization::DefaultTrace, &opts).unwrap();
        let sp = solve_saddle_point(&spec, &sol.mass).unwrap();
        for c in 0..mesh.num_cells() {
            assert!((sol.fields.p[c] - sp.p[c]).abs() < 1e-10);
            for (i, &f) in mesh.cells()[c].iter().enumerate() {
                assert!((sol.fields.u[c][i] - sp.u[f]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn norms_of_trivial_fields() {
        let mesh = generate_perturbed_quad_mesh(4, 4, BoxDomain::unit(), 0.0, 0).unwrap();
        assert!((cell_norm(&mesh, &vec![1.0; 16]) - 1.0).abs() < 1e-14);
        let spec = ProblemSpec::new(&mesh, DiffusionTensor::isotropic(2, 1.0)).with_exact(linear_exact());
        let local = local_matrices(&spec, &Stabilization::DefaultTrace).unwrap();
        let mass: Vec<_> = local.into_iter().map(|l| l.m).collect();
        let exact = spec.exact.clone().unwrap();
        let fields = DiscreteFields {
            p: interpolate_scalar(&mesh, |x| (exact.pressure)(x)),
            lambda: vec![0.0; mesh.num_faces()],
            u: exact_flux_interpolant(&spec, &exact),
        };
        assert_eq!(error_norms(&fields, &spec, &mass).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn global_duality_zero_fields() {
        let mesh = generate_perturbed_quad_mesh(4, 4, BoxDomain::unit(), 0.2, 2).unwrap();
        let spec = ProblemSpec::new(&mesh, DiffusionTensor::isotropic(2, 1.0));
        let mass: Vec<_> = local_matrices(&spec, &Stabilization::DefaultTrace)
            .unwrap()
            .into_iter()
            .map(|l| l.m)
            .collect();
        let r = global_duality_residual(&mesh, &mass, &DVector::zeros(mesh.num_faces()), &vec![0.0; 16]).unwrap();
        assert_eq!(r, 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn global_duality_random(seed in 0u64..10_000) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mesh = generate_perturbed_quad_mesh(4, 4, BoxDomain::unit(), 0.3, seed).unwrap();
            let tensors: Vec<DiffusionTensor> = (0..16)
                .map(|_| {
                    let a: f64 = rng.gen_range(0.5..3.0);
                    let b: f64 = rng.gen_range(0.5..3.0);
                    let c = rng.gen_range(-0.5..0.5) * (a * b).sqrt();
                    DiffusionTensor::new(DMatrix::from_row_slice(2, 2, &[a, c, c, b])).unwrap()
                })
                .collect();
            let spec = ProblemSpec::new(&mesh, tensors[0].clone()).with_tensors(tensors);
            let mass: Vec<_> = local_matrices(&spec, &Stabilization::DefaultTrace)
                .unwrap()
                .into_iter()
                .map(|l| l.m)
                .collect();
            let u = DVector::from_fn(mesh.num_faces(), |_, _| rng.gen_range(-1.0..1.0));
            let q: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let scale = apply_divergence(&mesh, &u).norm() * DVector::from_column_slice(&q).norm();
            let r = global_duality_residual(&mesh, &mass, &u, &q).unwrap();
            prop_assert!(r <= 1e-12 * scale.max(1.0));
        }
    }
}
