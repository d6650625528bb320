//! Nonlinear diffusion `p_t + div(-k(p) K grad p) = b` with face diffusion
//! coefficients, backward Euler in time and Picard linearization.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::hybrid::{
    cell_norm, condense, scalar_fn, CellOperator, DiscreteFields, FaceCondition, ProblemSpec, ScalarFn,
    SolverOptions,
};
use crate::linalg::spd_inverse;
use crate::local_ops::{build_m, DiffusionTensor, Stabilization};
use crate::mesh::{generate_perturbed_quad_mesh, BoxDomain, CellGeometry, Point, PolyMesh};
use crate::quadrature::face_average;
use crate::{Error, Result};

/// Default coefficient floor.
pub const DEFAULT_FLOOR: f64 = 1e-12;

const MIN_RELAXATION: f64 = 1.0 / 64.0;

pub type ScalarLaw = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type TimeFn = Arc<dyn Fn(&Point, f64) -> f64 + Send + Sync>;

pub fn scalar_law(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> ScalarLaw {
    Arc::new(f)
}

pub fn time_fn(f: impl Fn(&Point, f64) -> f64 + Send + Sync + 'static) -> TimeFn {
    Arc::new(f)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Averaging {
    /// Distance-weighted arithmetic mean of the two cell values.
    Arithmetic,
    Harmonic,
}

impl FromStr for Averaging {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "arithmetic" => Ok(Self::Arithmetic),
            "harmonic" => Ok(Self::Harmonic),
            _ => Err(Error::Invalid(format!("unknown averaging mode '{s}'"))),
        }
    }
}

impl fmt::Display for Averaging {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Arithmetic => "arithmetic",
            Self::Harmonic => "harmonic",
        })
    }
}

/// Time-dependent boundary data.
#[derive(Clone)]
pub enum TimeBoundary {
    Dirichlet(TimeFn),
    /// Outward flux density.
    Neumann(TimeFn),
}

impl fmt::Debug for TimeBoundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Dirichlet(_) => f.write_str("Dirichlet(..)"),
            Self::Neumann(_) => f.write_str("Neumann(..)"),
        }
    }
}

#[derive(Clone)]
pub struct NonlinearConfig {
    pub law: ScalarLaw,
    /// One tensor per cell.
    pub tensors: Vec<DiffusionTensor>,
    pub averaging: Averaging,
    pub floor: f64,
    pub dt: f64,
    pub picard_tol: f64,
    pub picard_max: usize,
    pub initial: ScalarFn,
    pub source: TimeFn,
    /// Conditions by boundary tag; untagged faces use `default_boundary`.
    pub boundary: BTreeMap<String, TimeBoundary>,
    pub default_boundary: Option<TimeBoundary>,
    pub solver: SolverOptions,
}

impl NonlinearConfig {
    /// Heat equation with `k = 1`, zero source and homogeneous Dirichlet data.
    pub fn new(mesh: &PolyMesh, k: DiffusionTensor, dt: f64) -> Self {
        Self {
            law: scalar_law(|_| 1.0),
            tensors: vec![k; mesh.num_cells()],
            averaging: Averaging::Arithmetic,
            floor: DEFAULT_FLOOR,
            dt,
            picard_tol: 1e-6,
            picard_max: 50,
            initial: scalar_fn(|_| 0.0),
            source: time_fn(|_, _| 0.0),
            boundary: BTreeMap::new(),
            default_boundary: Some(TimeBoundary::Dirichlet(time_fn(|_, _| 0.0))),
            solver: SolverOptions::default(),
        }
    }

    pub fn validate(&self, mesh: &PolyMesh) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Invalid(format!("time step must be positive, got {}", self.dt)));
        }
        if self.floor < 0.0 || !(self.picard_tol > 0.0) || self.picard_max == 0 {
            return Err(Error::Invalid("floor, Picard tolerance or iteration cap out of range".into()));
        }
        if self.tensors.len() != mesh.num_cells() {
            return Err(Error::SizeMismatch {
                expected: mesh.num_cells(),
                got: self.tensors.len(),
            });
        }
        Ok(())
    }

    fn boundary_of(&self, mesh: &PolyMesh, f: usize) -> Result<&TimeBoundary> {
        let tag = mesh.boundary_tag(f);
        tag.and_then(|t| self.boundary.get(t))
            .or(self.default_boundary.as_ref())
            .ok_or_else(|| Error::Invalid(format!("boundary face {f} (tag {tag:?}) has no condition")))
    }

    /// Face conditions at time `t`.
    pub fn face_conditions(&self, mesh: &PolyMesh, t: f64) -> Result<Vec<FaceCondition>> {
        let mut out = vec![FaceCondition::Free; mesh.num_faces()];
        for f in mesh.boundary_faces() {
            let c = mesh.face_cells(f).first;
            let g = mesh.cell_geometry(c);
            let i = mesh.local_index(c, f).expect("face of its cell");
            out[f] = match self.boundary_of(mesh, f)? {
                TimeBoundary::Dirichlet(v) => FaceCondition::Fixed(face_average(g, i, 4, |x| v(x, t))),
                TimeBoundary::Neumann(q) => FaceCondition::Flux(face_average(g, i, 4, |x| q(x, t)) * g.face_areas[i]),
            };
        }
        if !out.iter().any(|c| matches!(c, FaceCondition::Fixed(_))) {
            return Err(Error::Invalid("nonlinear problems need at least one Dirichlet face".into()));
        }
        Ok(out)
    }
}

/// Face coefficients `k_f^c` per cell (cell face order) and cell values `k_c`.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceCoefficients {
    pub face: Vec<DVector<f64>>,
    pub cell: Vec<f64>,
}

impl FaceCoefficients {
    /// All coefficients equal to one.
    pub fn unit(mesh: &PolyMesh) -> Self {
        Self {
            face: mesh.cells().iter().map(|f| DVector::from_element(f.len(), 1.0)).collect(),
            cell: vec![1.0; mesh.num_cells()],
        }
    }

    /// Diagonal matrix of the face coefficients of cell `c`.
    pub fn diag(&self, c: usize) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.face[c])
    }
}

fn law_value(law: &ScalarLaw, p: f64, what: &str) -> Result<f64> {
    let k = law(p);
    if k < 0.0 || k.is_nan() {
        return Err(Error::Invalid(format!("diffusion law is negative ({k:e}) at {what} value {p:e}")));
    }
    Ok(k)
}

/// Face coefficients from cell pressures `p`.
///
/// `dirichlet` optionally gives the boundary value on fixed faces; those faces
/// then average the cell value with `k(g_f)`, the face acting as a neighbour
/// at zero distance. Other boundary faces use `k(p_c)`.
pub fn face_diffusion_coeffs(
    mesh: &PolyMesh,
    p: &[f64],
    law: &ScalarLaw,
    mode: Averaging,
    floor: f64,
    dirichlet: Option<&[Option<f64>]>,
) -> Result<FaceCoefficients> {
    if p.len() != mesh.num_cells() {
        return Err(Error::SizeMismatch {
            expected: mesh.num_cells(),
            got: p.len(),
        });
    }
    let kc: Vec<f64> = p.iter().map(|&v| law_value(law, v, "cell")).collect::<Result<_>>()?;
    let dist = |c: usize, f: usize| {
        let g = mesh.cell_geometry(c);
        let i = mesh.local_index(c, f).expect("face of its cell");
        (g.face_centroids[i] - g.centroid).norm()
    };
    let harmonic = |a: f64, b: f64| 2.0 * a * b / (a + b + floor);
    let mut per_face = vec![0.0; mesh.num_faces()];
    for (f, v) in per_face.iter_mut().enumerate() {
        let fc = mesh.face_cells(f);
        *v = match fc.second {
            Some(c2) => {
                let (k1, k2) = (kc[fc.first], kc[c2]);
                match mode {
                    Averaging::Arithmetic => {
                        let (d1, d2) = (dist(fc.first, f), dist(c2, f));
                        (d2 * k1 + d1 * k2) / (d1 + d2)
                    }
                    Averaging::Harmonic => harmonic(k1, k2),
                }
            }
            None => {
                let k1 = kc[fc.first];
                match dirichlet.and_then(|d| d[f]) {
                    Some(g) => {
                        let kg = law_value(law, g, "boundary")?;
                        match mode {
                            Averaging::Arithmetic => kg,
                            Averaging::Harmonic => harmonic(k1, kg),
                        }
                    }
                    None => k1,
                }
            }
        };
    }
    let face = mesh
        .cells()
        .iter()
        .map(|faces| DVector::from_iterator(faces.len(), faces.iter().map(|&f| per_face[f].max(floor))))
        .collect();
    Ok(FaceCoefficients {
        face,
        cell: kc.into_iter().map(|k| k.max(floor)).collect(),
    })
}

/// `(1/|c|) sum_f sigma |f| k_f u_f`.
pub fn divk_apply(geom: &CellGeometry, kf: &DVector<f64>, u: &[f64]) -> Result<f64> {
    let n = geom.num_faces();
    if kf.len() != n || u.len() != n {
        return Err(Error::SizeMismatch {
            expected: n,
            got: if kf.len() != n { kf.len() } else { u.len() },
        });
    }
    let s: f64 = (0..n).map(|i| geom.signs[i] * geom.face_areas[i] * kf[i] * u[i]).sum();
    Ok(s / geom.volume)
}

/// Physical flux matrix `K_f M^{-1} K_f` where `M` is the inner product with
/// weight `k_c K^{-1}`.
pub fn divk_flux_matrix(geom: &CellGeometry, k: &DiffusionTensor, kc: f64, kf: &DVector<f64>) -> Result<DMatrix<f64>> {
    if !(kc > 0.0) {
        return Err(Error::Invalid(format!("cell coefficient must be positive, got {kc:e}")));
    }
    let m = build_m(geom, &k.scaled(1.0 / kc), &Stabilization::DefaultTrace)?;
    Ok(scale_flux_matrix(&spd_inverse(&m)?, kf))
}

fn scale_flux_matrix(minv: &DMatrix<f64>, kf: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(minv.nrows(), minv.ncols(), |i, j| kf[i] * minv[(i, j)] * kf[j])
}

/// Physical fluxes `K_f M^{-1} K_f [sigma |f| (p - lambda_f)]`.
pub fn divk_fluxes(
    geom: &CellGeometry,
    k: &DiffusionTensor,
    kc: f64,
    kf: &DVector<f64>,
    p: f64,
    lambda: &[f64],
) -> Result<DVector<f64>> {
    if lambda.len() != geom.num_faces() {
        return Err(Error::SizeMismatch {
            expected: geom.num_faces(),
            got: lambda.len(),
        });
    }
    let w = divk_flux_matrix(geom, k, kc, kf)?;
    let jump = DVector::from_fn(lambda.len(), |i, _| geom.signs[i] * geom.face_areas[i] * (p - lambda[i]));
    Ok(w * jump)
}

/// Velocities `u_f^c = w_f / k_f^c` from physical fluxes.
pub fn velocities(coeffs: &FaceCoefficients, w: &[DVector<f64>]) -> Vec<DVector<f64>> {
    w.iter().zip(&coeffs.face).map(|(w, k)| w.component_div(k)).collect()
}

/// Largest interior-face mismatch `|k_f^{c1} u_f^{c1} - k_f^{c2} u_f^{c2}|`.
pub fn modified_continuity_residual(mesh: &PolyMesh, coeffs: &FaceCoefficients, u: &[DVector<f64>]) -> f64 {
    let side = |c: usize, f: usize| {
        let i = mesh.local_index(c, f).expect("face of its cell");
        coeffs.face[c][i] * u[c][i]
    };
    (0..mesh.num_faces())
        .filter_map(|f| {
            let fc = mesh.face_cells(f);
            fc.second.map(|c2| (side(fc.first, f) - side(c2, f)).abs())
        })
        .fold(0.0, f64::max)
}

/// Per-cell `M^{-1}` for the unit weight; `M` for weight `k_c K^{-1}` is `k_c M`.
fn unit_inverses(mesh: &PolyMesh, tensors: &[DiffusionTensor]) -> Result<Vec<DMatrix<f64>>> {
    mesh.cell_geometries()
        .par_iter()
        .zip(tensors.par_iter())
        .map(|(g, k)| spd_inverse(&build_m(g, k, &Stabilization::DefaultTrace)?))
        .collect()
}

/// One frozen-coefficient linear solve.
#[derive(Clone, Debug)]
pub struct LinearizedSolve {
    /// `u` holds physical fluxes.
    pub fields: DiscreteFields,
    pub iterations: usize,
    pub residual: f64,
    /// Relative symmetry defect of the assembled interface matrix.
    pub symmetry_defect: f64,
}

struct Frozen<'a> {
    mesh: &'a PolyMesh,
    minv: &'a [DMatrix<f64>],
    conditions: &'a [FaceCondition],
    /// `|c| b_c` at the new time.
    load: &'a [f64],
    /// Mass coefficient `|c| / dt` per cell, zero when stationary.
    mass: Vec<f64>,
    p_old: Option<&'a [f64]>,
    solver: SolverOptions,
}

impl Frozen<'_> {
    fn solve(&self, coeffs: &FaceCoefficients, guess: Option<&[f64]>) -> Result<LinearizedSolve> {
        let ops: Vec<CellOperator> = (0..self.mesh.num_cells())
            .into_par_iter()
            .map(|c| CellOperator {
                w: scale_flux_matrix(&self.minv[c], &coeffs.face[c]) / coeffs.cell[c],
                mass: self.mass[c],
                rhs: self.load[c] + self.p_old.map_or(0.0, |p| self.mass[c] * p[c]),
            })
            .collect();
        let system = condense(self.mesh, &ops, self.conditions)?;
        let defect = system.matrix.symmetry_defect();
        if defect > 1e-12 {
            return Err(Error::NotSymmetric(defect));
        }
        let (fields, stats) = system.solve(&self.solver, guess)?;
        Ok(LinearizedSolve {
            fields,
            iterations: stats.iterations,
            residual: stats.residual,
            symmetry_defect: defect,
        })
    }
}

fn dirichlet_values(conditions: &[FaceCondition]) -> Vec<Option<f64>> {
    conditions
        .iter()
        .map(|c| match c {
            FaceCondition::Fixed(v) => Some(*v),
            _ => None,
        })
        .collect()
}

/// Diagnostics of one Picard iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PicardRecord {
    pub change: f64,
    pub symmetry_defect: f64,
    pub cg_iterations: usize,
    pub cg_residual: f64,
}

/// Result of a Picard loop.
#[derive(Clone, Debug)]
pub struct PicardOutcome {
    pub fields: DiscreteFields,
    pub coeffs: FaceCoefficients,
    pub iterations: usize,
    /// Last relative change in the cell norm.
    pub change: f64,
    /// Largest interface-matrix symmetry defect over the iterations.
    pub symmetry_defect: f64,
    pub cg_iterations: usize,
    pub history: Vec<PicardRecord>,
}

fn picard(
    frozen: &Frozen<'_>,
    start: &[f64],
    law: &ScalarLaw,
    mode: Averaging,
    floor: f64,
    tol: f64,
    max_iter: usize,
) -> Result<PicardOutcome> {
    let dirichlet = dirichlet_values(frozen.conditions);
    let mut p = start.to_vec();
    let mut guess: Option<Vec<f64>> = None;
    let mut change = f64::INFINITY;
    let mut sym: f64 = 0.0;
    let mut cg = 0;
    // relaxation factor, halved whenever the change grows
    let mut omega: f64 = 1.0;
    let mut history = Vec::new();
    for it in 1..=max_iter {
        let coeffs = face_diffusion_coeffs(frozen.mesh, &p, law, mode, floor, Some(&dirichlet))?;
        let step = frozen.solve(&coeffs, guess.as_deref())?;
        sym = sym.max(step.symmetry_defect);
        cg += step.iterations;
        let diff: Vec<f64> = step.fields.p.iter().zip(&p).map(|(a, b)| a - b).collect();
        let scale = cell_norm(frozen.mesh, &step.fields.p);
        let previous = change;
        change = cell_norm(frozen.mesh, &diff) / if scale > 0.0 { scale } else { 1.0 };
        if change > previous {
            omega = (0.5 * omega).max(MIN_RELAXATION);
        }
        history.push(PicardRecord {
            change,
            symmetry_defect: step.symmetry_defect,
            cg_iterations: step.iterations,
            cg_residual: step.residual,
        });
        guess = Some(step.fields.lambda.clone());
        if change <= tol {
            return Ok(PicardOutcome {
                fields: step.fields,
                coeffs,
                iterations: it,
                change,
                symmetry_defect: sym,
                cg_iterations: cg,
                history,
            });
        }
        for (a, d) in p.iter_mut().zip(&diff) {
            *a += omega * d;
        }
    }
    Err(Error::PicardNoConvergence {
        iterations: max_iter,
        change,
    })
}

/// Stationary nonlinear solve with the data of `spec` (pure Neumann problems
/// need a pin). With `k = 1` this is the linear mimetic scheme.
pub fn divk_stationary_solve(
    spec: &ProblemSpec<'_>,
    law: &ScalarLaw,
    mode: Averaging,
    floor: f64,
    tol: f64,
    max_iter: usize,
    solver: &SolverOptions,
) -> Result<PicardOutcome> {
    let mesh = spec.mesh;
    let conditions = spec.face_conditions(false)?;
    let minv = unit_inverses(mesh, &spec.tensors)?;
    let load = crate::hybrid::source_integrals(spec);
    let frozen = Frozen {
        mesh,
        minv: &minv,
        conditions: &conditions,
        load: &load,
        mass: vec![0.0; mesh.num_cells()],
        p_old: None,
        solver: *solver,
    };
    let start = vec![0.0; mesh.num_cells()];
    picard(&frozen, &start, law, mode, floor, tol, max_iter)
}

/// Time stepper with cached per-cell inverses.
pub struct Stepper<'a> {
    mesh: &'a PolyMesh,
    config: &'a NonlinearConfig,
    minv: Vec<DMatrix<f64>>,
    mass: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(mesh: &'a PolyMesh, config: &'a NonlinearConfig) -> Result<Self> {
        config.validate(mesh)?;
        Ok(Self {
            mesh,
            config,
            minv: unit_inverses(mesh, &config.tensors)?,
            mass: mesh.cell_geometries().iter().map(|g| g.volume / config.dt).collect(),
        })
    }

    /// Cell averages of the initial condition.
    pub fn initial_state(&self) -> Vec<f64> {
        crate::hybrid::interpolate_scalar(self.mesh, |x| (self.config.initial)(x))
    }

    /// Advances `p_old` from `t` to `t + dt`.
    pub fn step(&self, p_old: &[f64], t: f64) -> Result<PicardOutcome> {
        let cfg = self.config;
        let t_new = t + cfg.dt;
        let conditions = cfg.face_conditions(self.mesh, t_new)?;
        let load: Vec<f64> = self
            .mesh
            .cell_geometries()
            .par_iter()
            .map(|g| g.volume * crate::quadrature::cell_average(g, 4, |x| (cfg.source)(x, t_new)))
            .collect();
        let frozen = Frozen {
            mesh: self.mesh,
            minv: &self.minv,
            conditions: &conditions,
            load: &load,
            mass: self.mass.clone(),
            p_old: Some(p_old),
            solver: cfg.solver,
        };
        picard(&frozen, p_old, &cfg.law, cfg.averaging, cfg.floor, cfg.picard_tol, cfg.picard_max)
    }
}

/// One backward Euler step from `state` at time `t`.
pub fn backward_euler_step(mesh: &PolyMesh, state: &[f64], t: f64, config: &NonlinearConfig) -> Result<PicardOutcome> {
    Stepper::new(mesh, config)?.step(state, t)
}

/// Setup of the Marshak wave run.
#[derive(Clone, Debug, PartialEq)]
pub struct MarshakConfig {
    pub nx: usize,
    pub ny: usize,
    pub length: f64,
    pub height: f64,
    pub perturbation: f64,
    pub seed: u64,
    pub dt: f64,
    pub t_end: f64,
    pub averaging: Averaging,
    pub background: f64,
    /// Left boundary value is `amplitude * t^(1/3)`.
    pub amplitude: f64,
    pub threshold: f64,
    pub floor: f64,
    pub picard_tol: f64,
    pub picard_max: usize,
    pub snapshot_times: Vec<f64>,
}

impl Default for MarshakConfig {
    fn default() -> Self {
        Self {
            nx: 90,
            ny: 30,
            length: 3.0,
            height: 1.0,
            perturbation: 0.2,
            seed: 7,
            dt: 0.005,
            t_end: 5.0,
            averaging: Averaging::Arithmetic,
            background: 1e-3,
            amplitude: 0.78,
            threshold: 0.05,
            floor: DEFAULT_FLOOR,
            picard_tol: 1e-6,
            picard_max: 50,
            snapshot_times: vec![1.0, 2.5, 5.0],
        }
    }
}

impl MarshakConfig {
    /// Front speed of the travelling wave `p = (3c(ct - x))^(1/3)` that
    /// matches the boundary law.
    pub fn self_similar_speed(&self) -> f64 {
        self.amplitude.powf(1.5) / 3f64.sqrt()
    }

    pub fn mesh(&self) -> Result<PolyMesh> {
        generate_perturbed_quad_mesh(
            self.nx,
            self.ny,
            BoxDomain::rect(0.0, self.length, 0.0, self.height),
            self.perturbation,
            self.seed,
        )
    }

    /// Nonlinear problem data on `mesh`.
    pub fn problem(&self, mesh: &PolyMesh) -> NonlinearConfig {
        let (amp, bg) = (self.amplitude, self.background);
        let mut cfg = NonlinearConfig::new(mesh, DiffusionTensor::isotropic(2, 1.0), self.dt);
        // undershoots below zero would make p^3 negative
        cfg.law = scalar_law(|p| p.max(0.0).powi(3));
        cfg.averaging = self.averaging;
        cfg.floor = self.floor;
        cfg.picard_tol = self.picard_tol;
        cfg.picard_max = self.picard_max;
        cfg.initial = scalar_fn(move |_| bg);
        cfg.default_boundary = None;
        cfg.boundary.insert("left".into(), TimeBoundary::Dirichlet(time_fn(move |_, t| amp * t.cbrt())));
        cfg.boundary.insert("right".into(), TimeBoundary::Dirichlet(time_fn(move |_, _| bg)));
        for tag in ["bottom", "top"] {
            cfg.boundary.insert(tag.into(), TimeBoundary::Neumann(time_fn(|_, _| 0.0)));
        }
        cfg
    }
}

/// Cell pressures at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub p: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct MarshakResult {
    pub mesh: PolyMesh,
    pub snapshots: Vec<Snapshot>,
    /// `(t, x_front)` after every step.
    pub front: Vec<(f64, f64)>,
    pub final_state: Vec<f64>,
    pub picard_iterations: usize,
    pub max_symmetry_defect: f64,
    pub min_pressure: f64,
}

impl MarshakResult {
    pub fn final_front(&self) -> f64 {
        self.front.last().map_or(0.0, |f| f.1)
    }
}

/// Largest `x` where the `y`-averaged pressure exceeds `threshold`.
///
/// Cells are binned by centroid into `bins` columns over `[x0, x1]`, averaged
/// by volume, and the crossing is interpolated linearly between bin centres.
pub fn front_position(mesh: &PolyMesh, p: &[f64], x0: f64, x1: f64, bins: usize, threshold: f64) -> f64 {
    let width = (x1 - x0) / bins as f64;
    let mut sum = vec![0.0; bins];
    let mut vol = vec![0.0; bins];
    for (g, v) in mesh.cell_geometries().iter().zip(p) {
        let b = (((g.centroid.x - x0) / width).floor().max(0.0) as usize).min(bins - 1);
        sum[b] += g.volume * v;
        vol[b] += g.volume;
    }
    let avg: Vec<f64> = sum.iter().zip(&vol).map(|(s, v)| if *v > 0.0 { s / v } else { 0.0 }).collect();
    let centre = |b: usize| x0 + (b as f64 + 0.5) * width;
    match avg.iter().rposition(|&a| a > threshold) {
        None => x0,
        Some(b) if b + 1 == bins => centre(b),
        Some(b) => {
            let (a0, a1) = (avg[b], avg[b + 1]);
            centre(b) + width * (a0 - threshold) / (a0 - a1)
        }
    }
}

/// Runs the Marshak wave to `t_end`.
pub fn marshak_driver(config: &MarshakConfig) -> Result<MarshakResult> {
    let mesh = config.mesh()?;
    let problem = config.problem(&mesh);
    let steps = (config.t_end / config.dt).round() as usize;
    let (front, snapshots, state, picard_iterations, sym, min_p) = {
        let stepper = Stepper::new(&mesh, &problem)?;
        let mut p = stepper.initial_state();
        let mut front = Vec::with_capacity(steps);
        let mut snapshots = Vec::new();
        let mut pending: Vec<f64> = config.snapshot_times.clone();
        pending.sort_by(f64::total_cmp);
        pending.reverse();
        let mut picard_total = 0;
        let mut sym: f64 = 0.0;
        let mut min_p = p.iter().copied().fold(f64::INFINITY, f64::min);
        for n in 0..steps {
            let t = n as f64 * config.dt;
            let out = stepper.step(&p, t)?;
            picard_total += out.iterations;
            sym = sym.max(out.symmetry_defect);
            p = out.fields.p;
            min_p = p.iter().copied().fold(min_p, f64::min);
            let t_new = (n + 1) as f64 * config.dt;
            front.push((t_new, front_position(&mesh, &p, 0.0, config.length, config.nx, config.threshold)));
            while pending.last().is_some_and(|&ts| ts <= t_new + 0.5 * config.dt) {
                pending.pop();
                snapshots.push(Snapshot { t: t_new, p: p.clone() });
            }
        }
        (front, snapshots, p, picard_total, sym, min_p)
    };
    Ok(MarshakResult {
        mesh,
        snapshots,
        front,
        final_state: state,
        picard_iterations,
        max_symmetry_defect: sym,
        min_pressure: min_p,
    })
}
