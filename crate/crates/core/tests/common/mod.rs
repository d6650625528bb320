//! Oracles shared by the integration tests.

use mimetic_core::local_ops::DiffusionTensor;
use mimetic_core::mesh::{CellGeometry, Point};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// `int_c K^{-1} phi_i . phi_j` with `phi_i = sigma_i |f_i| (x - v_i) / (d |c|)`,
/// using `int (x-a)^T B (x-b) = |c| ((xb-a)^T B (xb-b) + tr(B C))` and the
/// simplex covariance `C = sum_v (v-xb)(v-xb)^T / ((d+1)(d+2))`.
pub fn rt0_mass(g: &CellGeometry, kinv: &DMatrix<f64>) -> DMatrix<f64> {
    let d = g.dim;
    let verts = g.vertices();
    assert_eq!(verts.len(), d + 1);
    let to_vec = |p: &Point| DVector::from_fn(d, |j, _| p[j]);
    let xb = verts.iter().fold(Point::zeros(), |a, v| a + v) / (d + 1) as f64;
    let mut cov = DMatrix::zeros(d, d);
    for v in &verts {
        let e = to_vec(&(v - xb));
        cov += &e * e.transpose();
    }
    cov /= ((d + 1) * (d + 2)) as f64;
    let trace = (kinv * cov).trace();
    let opposite: Vec<Point> = g
        .face_vertices
        .iter()
        .map(|fv| *verts.iter().find(|v| !fv.iter().any(|w| (w - *v).norm() == 0.0)).unwrap())
        .collect();
    let n = d + 1;
    DMatrix::from_fn(n, n, |i, j| {
        let a = to_vec(&(xb - opposite[i]));
        let b = to_vec(&(xb - opposite[j]));
        let integral = g.volume * (a.dot(&(kinv * b)) + trace);
        let scale = g.signs[i] * g.signs[j] * g.face_areas[i] * g.face_areas[j] / (d as f64 * g.volume).powi(2);
        scale * integral
    })
}

pub fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DiffusionTensor {
    let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    DiffusionTensor::new(mimetic_core::linalg::symmetrize(&(&a * a.transpose() + DMatrix::identity(d, d) * 0.5)))
        .unwrap()
}
