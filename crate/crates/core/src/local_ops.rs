//! Cell-local mimetic operators.
//!
//! Local vectors and matrices index faces in the cell's stored face order.
//! Flux values `u_f` are taken with respect to the fixed face normal `n_f`, so
//! the outward flux through `f` is `sigma_{c,f} u_f`.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{complement_projector, small_inverse, spd_inverse, sym_eigenvalues, symmetry_defect};
use crate::mesh::{CellGeometry, Point};
use crate::quadrature::face_average;
use crate::{Error, Result};

/// Largest accepted condition number of `R^T N`.
pub const MAX_COND: f64 = 1e12;

/// Constant symmetric positive definite tensor on one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionTensor {
    k: DMatrix<f64>,
}

impl DiffusionTensor {
    pub fn new(k: DMatrix<f64>) -> Result<Self> {
        if k.nrows() != k.ncols() || !(2..=3).contains(&k.nrows()) {
            return Err(Error::Invalid(format!("tensor must be 2x2 or 3x3, got {}x{}", k.nrows(), k.ncols())));
        }
        let defect = symmetry_defect(&k);
        if defect > 1e-14 {
            return Err(Error::NotSymmetric(defect));
        }
        if sym_eigenvalues(&k)[0] <= 0.0 {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self { k })
    }

    pub fn isotropic(dim: usize, value: f64) -> Self {
        Self::diagonal(&vec![value; dim])
    }

    /// Diagonal tensor; entries must be positive.
    pub fn diagonal(values: &[f64]) -> Self {
        assert!(values.iter().all(|&v| v > 0.0), "diagonal entries must be positive");
        Self {
            k: DMatrix::from_diagonal(&DVector::from_column_slice(values)),
        }
    }

    pub fn dim(&self) -> usize {
        self.k.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self { k: &self.k * alpha }
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        spd_inverse(&self.k).expect("validated at construction")
    }

    /// `K v` for a point-valued vector.
    pub fn apply(&self, v: &Point) -> Point {
        let d = self.dim();
        let mut out = Point::zeros();
        for i in 0..d {
            for j in 0..d {
                out[i] += self.k[(i, j)] * v[j];
            }
        }
        out
    }
}

/// Stabilization term of the inner-product family.
#[derive(Clone, Debug, PartialEq)]
pub enum Stabilization {
    /// `gamma P` with `gamma` the mean trace of the consistency term.
    DefaultTrace,
    /// `gamma P` for a given `gamma > 0`.
    Scalar(f64),
    /// `P G P` for a symmetric `G`, positive definite on the range of `P`.
    Matrix(DMatrix<f64>),
}

/// All local matrices of one cell.
#[derive(Clone, Debug)]
pub struct LocalMatrices {
    pub n: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub w: Option<DMatrix<f64>>,
    pub projector: DMatrix<f64>,
    /// Scalar stabilization, when one was used.
    pub gamma: Option<f64>,
    /// Matrix stabilization, when one was used.
    pub g: Option<DMatrix<f64>>,
    /// Face areas `F_c`.
    pub areas: DVector<f64>,
    /// Orientation signs `Sigma_c`.
    pub signs: DVector<f64>,
}

impl LocalMatrices {
    pub fn new(geom: &CellGeometry, k: &DiffusionTensor, stab: &Stabilization) -> Result<Self> {
        let n = build_n(geom, k);
        let r = build_r(geom);
        let rtn = r.transpose() * &n;
        let inv = small_inverse(&rtn, usize::MAX, MAX_COND).map_err(|e| relabel(e, geom))?;
        let consistency = &r * inv * r.transpose();
        let projector = complement_projector(&n)?;
        let (stab_term, gamma, g) = match stab {
            Stabilization::DefaultTrace => {
                let gamma = consistency.trace() / geom.num_faces() as f64;
                (&projector * gamma, Some(gamma), None)
            }
            Stabilization::Scalar(gamma) => {
                if *gamma <= 0.0 {
                    return Err(Error::Invalid(format!("stabilization must be positive, got {gamma}")));
                }
                (&projector * *gamma, Some(*gamma), None)
            }
            Stabilization::Matrix(g) => {
                check_square(g, geom.num_faces())?;
                let defect = symmetry_defect(g);
                if defect > 1e-12 {
                    return Err(Error::NotSymmetric(defect));
                }
                (&projector * g * &projector, None, Some(g.clone()))
            }
        };
        let m = consistency + stab_term;
        Ok(Self {
            n,
            r,
            m,
            w: None,
            projector,
            gamma,
            g,
            areas: DVector::from_column_slice(&geom.face_areas),
            signs: DVector::from_column_slice(&geom.signs),
        })
    }

    /// Stores `W = M^{-1}` alongside `M`.
    pub fn with_inverse(mut self) -> Result<Self> {
        self.w = Some(spd_inverse(&self.m)?);
        Ok(self)
    }

    /// Diagonal entries `sigma_{c,f} |f|`.
    pub fn signed_areas(&self) -> DVector<f64> {
        self.areas.component_mul(&self.signs)
    }
}

fn relabel(e: Error, geom: &CellGeometry) -> Error {
    match e {
        Error::Singular { cond, .. } => Error::Degenerate {
            entity: format!("cell with faces {:?}", geom.faces),
            msg: format!("R^T N has condition number {cond:.3e}"),
        },
        other => other,
    }
}

fn check_len(v: usize, geom: &CellGeometry) -> Result<()> {
    if v != geom.num_faces() {
        return Err(Error::SizeMismatch {
            expected: geom.num_faces(),
            got: v,
        });
    }
    Ok(())
}

fn check_square(m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::SizeMismatch {
            expected: n,
            got: m.nrows().max(m.ncols()),
        });
    }
    Ok(())
}

/// `(1/|c|) sum_f sigma_{c,f} |f| u_f`.
pub fn primary_div(geom: &CellGeometry, u: &[f64]) -> Result<f64> {
    check_len(u.len(), geom)?;
    let total: f64 = (0..u.len()).map(|i| geom.signs[i] * geom.face_areas[i] * u[i]).sum();
    Ok(total / geom.volume)
}

/// Rows `(K n_f)^T`: the flux interpolant of `K grad x_j` in column `j`.
pub fn build_n(geom: &CellGeometry, k: &DiffusionTensor) -> DMatrix<f64> {
    let d = geom.dim;
    DMatrix::from_fn(geom.num_faces(), d, |f, j| k.apply(&geom.normals[f])[j])
}

/// Rows `sigma_{c,f} |f| (x_f - x_c)^T`.
pub fn build_r(geom: &CellGeometry) -> DMatrix<f64> {
    let d = geom.dim;
    DMatrix::from_fn(geom.num_faces(), d, |f, j| {
        geom.signs[f] * geom.face_areas[f] * (geom.face_centroids[f][j] - geom.centroid[j])
    })
}

/// Member of the inner-product family for the given stabilization.
pub fn build_m(geom: &CellGeometry, k: &DiffusionTensor, stab: &Stabilization) -> Result<DMatrix<f64>> {
    Ok(LocalMatrices::new(geom, k, stab)?.m)
}

/// Member of the flux family `W = N (N^T R)^{-1} N^T + G~ (I - R (R^T R)^{-1} R^T)`.
/// Satisfies `W R = N` for every `G~`; symmetry and positivity depend on `G~`.
pub fn build_w(geom: &CellGeometry, k: &DiffusionTensor, gtilde: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let nf = geom.num_faces();
    check_square(gtilde, nf)?;
    let n = build_n(geom, k);
    let r = build_r(geom);
    let ntr_inv = small_inverse(&(n.transpose() * &r), usize::MAX, MAX_COND).map_err(|e| relabel(e, geom))?;
    let q = complement_projector(&r)?;
    Ok(&n * ntr_inv * n.transpose() + gtilde * q)
}

/// `(lambda_min(M)/|c|, lambda_max(M)/|c|)`.
pub fn stability_constants(m: &DMatrix<f64>, geom: &CellGeometry) -> Result<(f64, f64)> {
    let defect = symmetry_defect(m);
    if defect > 1e-12 {
        return Err(Error::NotSymmetric(defect));
    }
    let ev = sym_eigenvalues(m);
    Ok((ev[0] / geom.volume, ev[ev.len() - 1] / geom.volume))
}

/// Right-hand side `[sigma_{c,f} |f| (p_c - lambda_f)]_f` shared by the
/// derived gradient and every flux map.
pub fn pressure_jump(geom: &CellGeometry, p: f64, lambda: &[f64]) -> DVector<f64> {
    DVector::from_fn(geom.num_faces(), |i, _| geom.signs[i] * geom.face_areas[i] * (p - lambda[i]))
}

/// `GRAD~(p, lambda) = -M^{-1} [sigma |f| (p_c - lambda_f)]`. For data sampled
/// from a linear `q` this is the flux interpolant of `K grad q`.
pub fn derived_gradient(m: &DMatrix<f64>, geom: &CellGeometry, p: f64, lambda: &[f64]) -> Result<DVector<f64>> {
    check_len(lambda.len(), geom)?;
    check_square(m, geom.num_faces())?;
    let rhs = pressure_jump(geom, p, lambda);
    let chol = nalgebra::Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite)?;
    Ok(-chol.solve(&rhs))
}

/// `|[DIV u, q]_c - sum_f sigma |f| lambda_f u_f + [u, GRAD~(q, lambda)]_M|`.
pub fn local_duality_residual(
    m: &DMatrix<f64>,
    geom: &CellGeometry,
    u: &[f64],
    q: f64,
    lambda: &[f64],
) -> Result<f64> {
    let div = primary_div(geom, u)?;
    let grad = derived_gradient(m, geom, q, lambda)?;
    let uv = DVector::from_column_slice(u);
    let interface: f64 = (0..u.len()).map(|i| geom.signs[i] * geom.face_areas[i] * lambda[i] * u[i]).sum();
    let inner = uv.dot(&(m * grad));
    Ok((geom.volume * div * q - interface + inner).abs())
}

/// Face averages of `v . n_f` over the cell's faces.
pub fn flux_interpolant<F: Fn(&Point) -> Point>(geom: &CellGeometry, v: F) -> DVector<f64> {
    DVector::from_fn(geom.num_faces(), |i, _| {
        let n = geom.normals[i];
        face_average(geom, i, 4, |x| v(x).dot(&n))
    })
}
