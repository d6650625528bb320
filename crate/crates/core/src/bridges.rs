//! Finite volume and Raviart-Thomas schemes seen as flux maps, and the audit
//! that decides whether a flux map belongs to the mimetic family.
//!
//! A local flux map takes `(p_c, lambda_c)` to face fluxes `u_c`. Every map
//! here is linear and of the form `u = W B delta` with `delta = p 1 - lambda`
//! and `B = diag(sigma |f|)`; a map is a mimetic member when `W R = N` and `W`
//! is symmetric positive definite, in which case `W^{-1}` is an admissible
//! inner-product matrix.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::hybrid::{build_report, condense, source_integrals, CellOperator, ProblemSpec, Solution, SolverOptions};
use crate::linalg::{complement_projector, small_inverse, spd_inverse, sym_eigenvalues, symmetry_defect};
use crate::local_ops::{build_m, build_n, build_r, DiffusionTensor, Stabilization, MAX_COND};
use crate::mesh::{CellGeometry, Point};
use crate::{Error, Result};

/// Where a flux map came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Mfd,
    Hfv,
    Mfv,
    Rt0,
    User,
}

/// Black-box local flux map.
pub trait LocalFluxMap {
    fn num_faces(&self) -> usize;
    /// Fluxes through the cell faces (fixed-normal convention).
    fn apply(&self, p: f64, lambda: &[f64]) -> DVector<f64>;
}

/// Linear flux map `u = L [p; lambda]`.
#[derive(Clone, Debug)]
pub struct FluxMap {
    pub provenance: Provenance,
    /// `n_c x (n_c + 1)`, first column acts on `p_c`.
    pub l: DMatrix<f64>,
    /// HFV stabilization parameters.
    pub alpha: Option<Vec<f64>>,
    /// MFV matrix.
    pub g: Option<DMatrix<f64>>,
}

impl FluxMap {
    /// Map `u = W B (p 1 - lambda)`.
    pub fn from_w(geom: &CellGeometry, w: &DMatrix<f64>, provenance: Provenance) -> Self {
        let n = geom.num_faces();
        let wb = DMatrix::from_fn(n, n, |i, j| w[(i, j)] * geom.signs[j] * geom.face_areas[j]);
        let mut l = DMatrix::zeros(n, n + 1);
        for i in 0..n {
            l[(i, 0)] = wb.row(i).sum();
            for j in 0..n {
                l[(i, j + 1)] = -wb[(i, j)];
            }
        }
        Self {
            provenance,
            l,
            alpha: None,
            g: None,
        }
    }
}

impl LocalFluxMap for FluxMap {
    fn num_faces(&self) -> usize {
        self.l.nrows()
    }

    fn apply(&self, p: f64, lambda: &[f64]) -> DVector<f64> {
        let mut x = DVector::zeros(lambda.len() + 1);
        x[0] = p;
        x.rows_mut(1, lambda.len()).copy_from_slice(lambda);
        &self.l * x
    }
}

/// Gradient from the divergence theorem: `(1/|c|) sum_f |f| (lambda_f - p_c) n_{c,f}`.
pub fn hfv_gradient(geom: &CellGeometry, p: f64, lambda: &[f64]) -> Point {
    let mut g = Point::zeros();
    for i in 0..geom.num_faces() {
        g += geom.outward_normal(i) * (geom.face_areas[i] * (lambda[i] - p));
    }
    g / geom.volume
}

/// Symmetric form of the stabilized hybrid finite volume scheme acting on
/// `delta = p 1 - lambda`: consistency `|c| (K G delta) . (G delta)` plus
/// `sum_f alpha_f |f| / d_{c,f} s_f^2`, with `s_f` the defect of the linear
/// reconstruction at the face centroid.
pub fn hfv_form(geom: &CellGeometry, k: &DiffusionTensor, alpha: &[f64]) -> Result<DMatrix<f64>> {
    let n = geom.num_faces();
    let d = geom.dim;
    if alpha.len() != n {
        return Err(Error::SizeMismatch { expected: n, got: alpha.len() });
    }
    if let Some(a) = alpha.iter().find(|&&a| !(a > 0.0)) {
        return Err(Error::Invalid(format!("stabilization parameters must be positive, got {a}")));
    }
    // gradient of delta: G delta, G = -(1/|c|) [|f| n_{c,f}]
    let grad = DMatrix::from_fn(d, n, |j, i| -geom.face_areas[i] * geom.outward_normal(i)[j] / geom.volume);
    let x = DMatrix::from_fn(n, d, |i, j| geom.face_centroids[i][j] - geom.centroid[j]);
    // -s = (I + X G) delta
    let s = DMatrix::identity(n, n) + &x * &grad;
    let weights = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            alpha[i] * geom.face_areas[i] / geom.distances[i]
        } else {
            0.0
        }
    });
    Ok(grad.transpose() * k.matrix() * &grad * geom.volume + s.transpose() * weights * s)
}

/// Hybrid finite volume flux map `u = Sigma F^{-1} A delta`.
pub fn hfv_flux_map(geom: &CellGeometry, k: &DiffusionTensor, alpha: &[f64]) -> Result<FluxMap> {
    let a = hfv_form(geom, k, alpha)?;
    let n = geom.num_faces();
    // u = W B delta with W = Sigma F^{-1} A F^{-1} Sigma
    let w = DMatrix::from_fn(n, n, |i, j| {
        geom.signs[i] * a[(i, j)] * geom.signs[j] / (geom.face_areas[i] * geom.face_areas[j])
    });
    let mut map = FluxMap::from_w(geom, &w, Provenance::Hfv);
    map.alpha = Some(alpha.to_vec());
    Ok(map)
}

/// Mixed finite volume flux map: `u = G^{-1} F Sigma (p 1 - lambda)`.
pub fn mfv_flux_map(geom: &CellGeometry, g: &DMatrix<f64>) -> Result<FluxMap> {
    let n = geom.num_faces();
    if g.nrows() != n || g.ncols() != n {
        return Err(Error::SizeMismatch { expected: n, got: g.nrows() });
    }
    let defect = symmetry_defect(g);
    if defect > 1e-12 {
        return Err(Error::NotSymmetric(defect));
    }
    let w = spd_inverse(g)?;
    let mut map = FluxMap::from_w(geom, &w, Provenance::Mfv);
    map.g = Some(g.clone());
    Ok(map)
}

/// Mimetic flux map `u = M^{-1} B delta`, i.e. minus the derived gradient.
pub fn mfd_flux_map(geom: &CellGeometry, m: &DMatrix<f64>) -> Result<FluxMap> {
    Ok(FluxMap::from_w(geom, &spd_inverse(m)?, Provenance::Mfd))
}

/// Raviart-Thomas stabilization of a simplex.
#[derive(Clone, Debug)]
pub struct Rt0Stabilization {
    /// `(1/(d^2 (d+1))) sum_f (x_f - x_c)^T K^{-1} (x_f - x_c)`.
    pub g_c: f64,
    /// Weight of the rank-one term that reproduces the mass matrix.
    pub weight: f64,
    pub m: DMatrix<f64>,
}

/// Consistency term plus the projected rank-one term `P p w p^T P` with
/// `p = (sigma_f |f|)_f`. The weight is `g_c d^2 / (|c| (d + 2))`, which makes
/// `M` the lowest order Raviart-Thomas mass matrix with weight `K^{-1}`.
pub fn rt0_stabilization(geom: &CellGeometry, k: &DiffusionTensor) -> Result<Rt0Stabilization> {
    let d = geom.dim;
    let n = geom.num_faces();
    if n != d + 1 {
        return Err(Error::Invalid(format!("{n}-face cell is not a {d}-simplex")));
    }
    let kinv = k.inverse();
    let mut sum = 0.0;
    for xf in &geom.face_centroids {
        let v = DVector::from_fn(d, |j, _| xf[j] - geom.centroid[j]);
        sum += v.dot(&(&kinv * &v));
    }
    let df = d as f64;
    let g_c = sum / (df * df * (df + 1.0));
    let weight = g_c * df * df / (geom.volume * (df + 2.0));
    let nm = build_n(geom, k);
    let r = build_r(geom);
    let inv = small_inverse(&(r.transpose() * &nm), usize::MAX, MAX_COND)?;
    let proj = complement_projector(&nm)?;
    let p = DVector::from_fn(n, |i, _| geom.signs[i] * geom.face_areas[i]);
    let pp = &proj * &p;
    let m = &r * inv * r.transpose() + &pp * pp.transpose() * weight;
    Ok(Rt0Stabilization { g_c, weight, m })
}

/// Outcome of [`audit_membership`].
#[derive(Clone, Debug)]
pub struct MembershipReport {
    /// Induced `W = W~1 Sigma F^{-1}`.
    pub w: DMatrix<f64>,
    pub annihilates_constants: bool,
    pub exact_on_linears: bool,
    pub symmetric: bool,
    pub positive_definite: bool,
    pub mimetic_member: bool,
    pub constant_defect: f64,
    pub linear_defect: f64,
    /// `||W~1 Sigma F^{-1} R - N|| / ||N||`.
    pub lemma_defect: f64,
    pub symmetry_defect: f64,
    pub min_eigenvalue: f64,
}

/// Defect below which a check passes, relative to the natural scale.
pub const AUDIT_TOL: f64 = 1e-10;

impl MembershipReport {
    /// Member of the extended family: exact on constants and linears.
    pub fn extended_member(&self) -> bool {
        self.annihilates_constants && self.exact_on_linears
    }

    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        writeln!(s, "annihilates_constants={}", self.annihilates_constants).unwrap();
        writeln!(s, "exact_on_linears={}", self.exact_on_linears).unwrap();
        writeln!(s, "symmetric={}", self.symmetric).unwrap();
        writeln!(s, "positive_definite={}", self.positive_definite).unwrap();
        writeln!(s, "mimetic_member={}", self.mimetic_member).unwrap();
        writeln!(s, "constant_defect={:e}", self.constant_defect).unwrap();
        writeln!(s, "linear_defect={:e}", self.linear_defect).unwrap();
        writeln!(s, "lemma_defect={:e}", self.lemma_defect).unwrap();
        writeln!(s, "symmetry_defect={:e}", self.symmetry_defect).unwrap();
        writeln!(s, "min_eigenvalue={:e}", self.min_eigenvalue).unwrap();
        s
    }
}

/// Probes `map` with canonical pressure jumps and checks constants,
/// exactness on linear pressures, and symmetry/positivity of the induced `W`.
pub fn audit_membership(map: &dyn LocalFluxMap, geom: &CellGeometry, k: &DiffusionTensor) -> MembershipReport {
    let n = geom.num_faces();
    let d = geom.dim;
    // column j: delta = e_j, i.e. p = 0, lambda = -e_j
    let mut w1 = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut lam = vec![0.0; n];
        lam[j] = -1.0;
        w1.set_column(j, &map.apply(0.0, &lam));
    }
    let w = DMatrix::from_fn(n, n, |i, j| w1[(i, j)] * geom.signs[j] / geom.face_areas[j]);
    let nm = build_n(geom, k);
    let r = build_r(geom);
    let scale = w1.norm().max(f64::MIN_POSITIVE);
    let constant_defect = map.apply(1.0, &vec![1.0; n]).norm() / scale;
    let mut linear_defect: f64 = 0.0;
    for j in 0..d {
        let lam: Vec<f64> = geom.face_centroids.iter().map(|x| x[j]).collect();
        let u = map.apply(geom.centroid[j], &lam);
        let want = -nm.column(j);
        linear_defect = linear_defect.max((u - want).norm() / nm.norm());
    }
    let lemma_defect = (&w * &r - &nm).norm() / nm.norm();
    let sym = symmetry_defect(&w);
    let ev = sym_eigenvalues(&w);
    let min_eigenvalue = ev[0];
    let annihilates_constants = constant_defect <= AUDIT_TOL;
    let exact_on_linears = linear_defect <= AUDIT_TOL;
    let symmetric = sym <= AUDIT_TOL;
    let positive_definite = min_eigenvalue > AUDIT_TOL * ev[n - 1].abs();
    MembershipReport {
        w,
        annihilates_constants,
        exact_on_linears,
        symmetric,
        positive_definite,
        mimetic_member: annihilates_constants && exact_on_linears && symmetric && positive_definite,
        constant_defect,
        linear_defect,
        lemma_defect,
        symmetry_defect: sym,
        min_eigenvalue,
    }
}

/// Discretization used by [`solve_scheme`].
#[derive(Clone, Debug, PartialEq)]
pub enum Scheme {
    /// Mimetic scheme with a stabilization choice.
    Mfd(Stabilization),
    /// Hybrid finite volume with a uniform parameter `alpha`.
    Hfv(f64),
    /// Mixed finite volume with `G_c = M_c` from the default mimetic matrix.
    Mfv,
    /// Raviart-Thomas on simplicial meshes.
    Rt0,
}

/// Per-cell `W_c` of a scheme.
pub fn scheme_operators(spec: &ProblemSpec<'_>, scheme: &Scheme) -> Result<Vec<DMatrix<f64>>> {
    spec.mesh
        .cell_geometries()
        .par_iter()
        .zip(spec.tensors.par_iter())
        .map(|(g, k)| match scheme {
            Scheme::Mfd(stab) => spd_inverse(&build_m(g, k, stab)?),
            Scheme::Hfv(alpha) => {
                let map = hfv_flux_map(g, k, &vec![*alpha; g.num_faces()])?;
                Ok(w_of(&map, g))
            }
            Scheme::Mfv => {
                let m = build_m(g, k, &Stabilization::DefaultTrace)?;
                Ok(w_of(&mfv_flux_map(g, &m)?, g))
            }
            Scheme::Rt0 => spd_inverse(&rt0_stabilization(g, k)?.m),
        })
        .collect()
}

fn w_of(map: &FluxMap, g: &CellGeometry) -> DMatrix<f64> {
    let n = g.num_faces();
    DMatrix::from_fn(n, n, |i, j| -map.l[(i, j + 1)] * g.signs[j] / g.face_areas[j])
}

/// Solves the stationary problem with any member of the family. Flux errors
/// use `M_c = W_c^{-1}`.
pub fn solve_scheme(spec: &ProblemSpec<'_>, scheme: &Scheme, opts: &SolverOptions) -> Result<Solution> {
    let conditions = spec.face_conditions(false)?;
    let ws = scheme_operators(spec, scheme)?;
    let rhs = source_integrals(spec);
    let ops: Vec<CellOperator> = ws
        .iter()
        .zip(&rhs)
        .map(|(w, r)| CellOperator {
            w: w.clone(),
            mass: 0.0,
            rhs: *r,
        })
        .collect();
    let system = condense(spec.mesh, &ops, &conditions)?;
    let (fields, stats) = system.solve(opts, None)?;
    let mass: Vec<DMatrix<f64>> = ws.iter().map(spd_inverse).collect::<Result<_>>()?;
    let report = build_report(spec, &fields, &mass, stats)?;
    Ok(Solution { fields, report, mass })
}
