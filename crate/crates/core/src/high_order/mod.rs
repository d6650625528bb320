//! Moment-based mimetic scheme of order `r` in `{0, 1}` on polygonal meshes.
//!
//! Flux degrees of freedom of a cell:
//! - per edge `f`, the moments `(1/|f|) int_f (u . n_f) t^k` for `k = 0..=r+1`,
//!   with `t` running from `-1` at the first stored node to `+1` at the second
//!   (shared by both cells, so the values are single valued);
//! - for `r = 1`, the cell averages of `u_x` and `u_y`, i.e. the moments of
//!   `u` against `h grad psi` for the scaled monomials `psi` of degree one.
//!
//! Pressures are polynomials of degree `r` in scaled monomials
//! `((x - x_c)/h)^a ((y - y_c)/h)^b`, `h = diam(c)`, and are stored by their
//! coefficients.

mod solve;

pub use solve::{ho_solve, local_flux, HoSolution, DEFAULT_LIMIT};

use nalgebra::{DMatrix, DVector};

use crate::linalg::{complement_projector, small_inverse, spd_inverse};
use crate::local_ops::{DiffusionTensor, MAX_COND};
use crate::mesh::{CellGeometry, Point};
use crate::quadrature::{gauss_legendre, integrate_cell};
use crate::{Error, Result};

/// Scaled monomials of total degree at most `degree`, ordered by degree.
#[derive(Clone, Debug)]
pub struct ScaledMonomials {
    pub center: Point,
    pub h: f64,
    pub exponents: Vec<(i32, i32)>,
}

impl ScaledMonomials {
    pub fn new(center: Point, h: f64, degree: usize) -> Self {
        let mut exponents = Vec::new();
        for total in 0..=degree as i32 {
            for b in 0..=total {
                exponents.push((total - b, b));
            }
        }
        Self { center, h, exponents }
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn value(&self, i: usize, x: &Point) -> f64 {
        let (a, b) = self.exponents[i];
        let xi = (x.x - self.center.x) / self.h;
        let eta = (x.y - self.center.y) / self.h;
        xi.powi(a) * eta.powi(b)
    }

    pub fn gradient(&self, i: usize, x: &Point) -> Point {
        let (a, b) = self.exponents[i];
        let xi = (x.x - self.center.x) / self.h;
        let eta = (x.y - self.center.y) / self.h;
        let dx = if a > 0 { a as f64 * xi.powi(a - 1) * eta.powi(b) } else { 0.0 };
        let dy = if b > 0 { b as f64 * xi.powi(a) * eta.powi(b - 1) } else { 0.0 };
        Point::new(dx / self.h, dy / self.h, 0.0)
    }
}

/// Degree-of-freedom counts for one cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HoDofLayout {
    pub order: usize,
    pub edges: usize,
}

impl HoDofLayout {
    pub fn new(order: usize, edges: usize) -> Result<Self> {
        if order > 1 {
            return Err(Error::Invalid(format!("order {order} is not supported (0 or 1)")));
        }
        Ok(Self { order, edges })
    }

    /// `r + 2` moments per edge.
    pub fn per_edge(&self) -> usize {
        self.order + 2
    }

    /// Cell flux moments: two for `r = 1`, none for `r = 0`.
    pub fn cell_flux(&self) -> usize {
        if self.order == 1 {
            2
        } else {
            0
        }
    }

    /// `(r+1)(r+2)/2`.
    pub fn pressure(&self) -> usize {
        (self.order + 1) * (self.order + 2) / 2
    }

    pub fn flux(&self) -> usize {
        self.edges * self.per_edge() + self.cell_flux()
    }
}

/// Moment matrix `E_kl = (1/2) int_{-1}^{1} t^{k+l} dt` of one edge.
fn edge_gram(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |k, l| if (k + l) % 2 == 0 { 1.0 / (k + l + 1) as f64 } else { 0.0 })
}

/// `(1/|f|) int_f t^k phi` for `k < n`, by Gauss quadrature with `points` nodes.
fn edge_moments<F: Fn(&Point) -> f64>(a: &Point, b: &Point, n: usize, points: usize, phi: F) -> DVector<f64> {
    let (gx, gw) = gauss_legendre(points);
    let mut out = DVector::zeros(n);
    for (t, w) in gx.iter().zip(&gw) {
        let x = a + (b - a) * (0.5 * (t + 1.0));
        let v = phi(&x);
        for k in 0..n {
            out[k] += 0.5 * w * t.powi(k as i32) * v;
        }
    }
    out
}

fn check_2d(geom: &CellGeometry) -> Result<()> {
    if geom.dim != 2 {
        return Err(Error::Invalid("the high-order scheme is two-dimensional".into()));
    }
    Ok(())
}

/// Degrees of freedom of a vector field on one cell.
pub fn ho_interpolate<F: Fn(&Point) -> Point>(geom: &CellGeometry, r: usize, field: F) -> Result<DVector<f64>> {
    check_2d(geom)?;
    let layout = HoDofLayout::new(r, geom.num_faces())?;
    let ne = layout.per_edge();
    let mut out = DVector::zeros(layout.flux());
    for (i, fv) in geom.face_vertices.iter().enumerate() {
        let n = geom.normals[i];
        let m = edge_moments(&fv[0], &fv[1], ne, r + 4, |x| field(x).dot(&n));
        out.rows_mut(i * ne, ne).copy_from(&m);
    }
    if layout.cell_flux() > 0 {
        let base = geom.num_faces() * ne;
        for j in 0..2 {
            out[base + j] = integrate_cell(geom, 2 * r + 4, |x| field(x)[j]) / geom.volume;
        }
    }
    Ok(out)
}

/// High-order local matrices and the operators they are built from.
#[derive(Clone, Debug)]
pub struct HoLocalMatrices {
    pub layout: HoDofLayout,
    pub basis: ScaledMonomials,
    /// Columns: degrees of freedom of `K grad q`, `q` of degree `1..=r+2`.
    pub n: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub m: DMatrix<f64>,
    /// `(D v)_i = int_c div(v) psi_i`, computed from degrees of freedom.
    pub div: DMatrix<f64>,
    /// Pressure mass matrix `int_c psi_i psi_j`.
    pub mass: DMatrix<f64>,
    pub gamma: f64,
}

struct CellOps {
    layout: HoDofLayout,
    pressure: ScaledMonomials,
    einv: DMatrix<f64>,
    div: DMatrix<f64>,
    mass: DMatrix<f64>,
}

fn cell_ops(geom: &CellGeometry, r: usize) -> Result<CellOps> {
    check_2d(geom)?;
    let layout = HoDofLayout::new(r, geom.num_faces())?;
    let ne = layout.per_edge();
    let pressure = ScaledMonomials::new(geom.centroid, geom.diameter, r);
    let np = pressure.len();
    let einv = spd_inverse(&edge_gram(ne))?;
    let mut div = DMatrix::zeros(np, layout.flux());
    for i in 0..np {
        for (f, fv) in geom.face_vertices.iter().enumerate() {
            let w = edge_moments(&fv[0], &fv[1], ne, r + 4, |x| pressure.value(i, x));
            let coef = &einv * w * (geom.signs[f] * geom.face_areas[f]);
            for k in 0..ne {
                div[(i, f * ne + k)] += coef[k];
            }
        }
        if layout.cell_flux() > 0 {
            // grad psi is constant for degree <= 1: int v . grad psi = |c| avg(v) . grad psi
            let g = pressure.gradient(i, &geom.centroid);
            let base = geom.num_faces() * ne;
            for j in 0..2 {
                div[(i, base + j)] -= geom.volume * g[j];
            }
        }
    }
    let mass = DMatrix::from_fn(np, np, |i, j| {
        integrate_cell(geom, 2 * r + 2, |x| pressure.value(i, x) * pressure.value(j, x))
    });
    Ok(CellOps {
        layout,
        pressure,
        einv,
        div,
        mass,
    })
}

/// `D v`: the divergence moments `int_c div(v) psi_i` from the degrees of freedom.
pub fn ho_divergence(geom: &CellGeometry, r: usize, u: &DVector<f64>) -> Result<DVector<f64>> {
    let ops = cell_ops(geom, r)?;
    if u.len() != ops.layout.flux() {
        return Err(Error::SizeMismatch {
            expected: ops.layout.flux(),
            got: u.len(),
        });
    }
    Ok(&ops.div * u)
}

/// Consistency and stabilization for one cell with constant tensor `k`.
pub fn ho_build_matrices(geom: &CellGeometry, k: &DiffusionTensor, r: usize) -> Result<HoLocalMatrices> {
    let ops = cell_ops(geom, r)?;
    let ne = ops.layout.per_edge();
    let nu = ops.layout.flux();
    let q = ScaledMonomials::new(geom.centroid, geom.diameter, r + 2);
    let cols = q.len() - 1;
    let mut n = DMatrix::zeros(nu, cols);
    let mut rm = DMatrix::zeros(nu, cols);
    let mass_inv = spd_inverse(&ops.mass)?;
    for j in 0..cols {
        let qi = j + 1;
        let dofs = ho_interpolate(geom, r, |x| k.apply(&q.gradient(qi, x)))?;
        n.set_column(j, &dofs);
        // -int q div v, with div v reconstructed in the pressure space
        let hq = DVector::from_fn(ops.pressure.len(), |i, _| {
            integrate_cell(geom, 2 * r + 4, |x| q.value(qi, x) * ops.pressure.value(i, x))
        });
        let mut col = -(ops.div.transpose() * (&mass_inv * hq));
        // + sum_f int_f (v . n_{c,f}) q, with v . n_f reconstructed of degree r+1
        for (f, fv) in geom.face_vertices.iter().enumerate() {
            let w = edge_moments(&fv[0], &fv[1], ne, r + 4, |x| q.value(qi, x));
            let coef = &ops.einv * w * (geom.signs[f] * geom.face_areas[f]);
            for kk in 0..ne {
                col[f * ne + kk] += coef[kk];
            }
        }
        rm.set_column(j, &col);
    }
    let rtn = rm.transpose() * &n;
    let inv = small_inverse(&crate::linalg::symmetrize(&rtn), usize::MAX, MAX_COND).map_err(|e| match e {
        Error::Singular { cond, .. } => Error::Degenerate {
            entity: format!("cell with faces {:?}", geom.faces),
            msg: format!("high-order R^T N has condition number {cond:.3e}"),
        },
        other => other,
    })?;
    let consistency = &rm * inv * rm.transpose();
    let gamma = consistency.trace() / nu as f64;
    let m = consistency + complement_projector(&n)? * gamma;
    Ok(HoLocalMatrices {
        layout: ops.layout,
        basis: ops.pressure,
        n,
        r: rm,
        m,
        div: ops.div,
        mass: ops.mass,
        gamma,
    })
}

/// Coefficients of the `L^2` projection of `p` onto the pressure space.
pub fn project_pressure<F: Fn(&Point) -> f64>(geom: &CellGeometry, basis: &ScaledMonomials, mass: &DMatrix<f64>, p: F) -> Result<DVector<f64>> {
    let rhs = DVector::from_fn(basis.len(), |i, _| {
        integrate_cell(geom, 8, |x| p(x) * basis.value(i, x))
    });
    Ok(spd_inverse(mass)? * rhs)
}

/// Moments `int_c f psi_i` against the pressure basis.
pub fn pressure_moments<F: Fn(&Point) -> f64>(geom: &CellGeometry, basis: &ScaledMonomials, f: F) -> DVector<f64> {
    DVector::from_fn(basis.len(), |i, _| integrate_cell(geom, 8, |x| f(x) * basis.value(i, x)))
}
