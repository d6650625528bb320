//! Quadrature on segments, simplices and polytopal cells.
//!
//! Cells are split into simplices around their centroid (see
//! [`CellGeometry::simplices`]); each simplex uses a rule of the requested
//! polynomial degree. Rule weights are normalized to sum to one.

use std::f64::consts::PI;

use crate::mesh::{CellGeometry, Point};

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    if n == 1 {
        return (vec![0.0], vec![2.0]);
    }
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Rule on the reference simplex as (barycentric coordinates, weight), with
/// weights summing to one.
#[derive(Clone, Debug)]
pub struct SimplexRule {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

const DUNAVANT4_A: f64 = 0.445948490915965;
const DUNAVANT4_WA: f64 = 0.223381589678011;
const DUNAVANT4_B: f64 = 0.091576213509771;
const DUNAVANT4_WB: f64 = 0.109951743655322;

/// Triangle rule exact for polynomials of total degree `degree`.
pub fn triangle_rule(degree: usize) -> SimplexRule {
    if degree <= 4 {
        let mut points = Vec::with_capacity(6);
        let mut weights = Vec::with_capacity(6);
        for (a, w) in [(DUNAVANT4_A, DUNAVANT4_WA), (DUNAVANT4_B, DUNAVANT4_WB)] {
            let b = 1.0 - 2.0 * a;
            for bary in [[b, a, a], [a, b, a], [a, a, b]] {
                points.push(bary.to_vec());
                weights.push(w);
            }
        }
        return SimplexRule { points, weights };
    }
    // collapsed Gauss: x = u, y = v(1-u), jacobian (1-u)
    let n = (degree + 2).div_ceil(2);
    let (gx, gw) = gauss_legendre(n);
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for i in 0..n {
        let u = 0.5 * (gx[i] + 1.0);
        for j in 0..n {
            let v = 0.5 * (gx[j] + 1.0);
            let (x, y) = (u, v * (1.0 - u));
            points.push(vec![1.0 - x - y, x, y]);
            // reference area 1/2 -> normalize by 2
            weights.push(2.0 * 0.25 * gw[i] * gw[j] * (1.0 - u));
        }
    }
    SimplexRule { points, weights }
}

/// Tetrahedron rule exact for polynomials of total degree `degree`.
pub fn tetrahedron_rule(degree: usize) -> SimplexRule {
    let n = (degree + 3).div_ceil(2).max(1);
    let (gx, gw) = gauss_legendre(n);
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for i in 0..n {
        let u = 0.5 * (gx[i] + 1.0);
        for j in 0..n {
            let v = 0.5 * (gx[j] + 1.0);
            for k in 0..n {
                let s = 0.5 * (gx[k] + 1.0);
                let x = u;
                let y = v * (1.0 - u);
                let z = s * (1.0 - u) * (1.0 - v);
                points.push(vec![1.0 - x - y - z, x, y, z]);
                let jac = (1.0 - u) * (1.0 - u) * (1.0 - v);
                // reference volume 1/6
                weights.push(6.0 * 0.125 * gw[i] * gw[j] * gw[k] * jac);
            }
        }
    }
    SimplexRule { points, weights }
}

fn map(bary: &[f64], verts: &[Point]) -> Point {
    bary.iter().zip(verts).fold(Point::zeros(), |acc, (b, v)| acc + v * *b)
}

/// Integral of `f` over a simplex (2 or 3 spatial dims) of measure `measure`.
pub fn integrate_simplex<F: Fn(&Point) -> f64>(verts: &[Point], measure: f64, rule: &SimplexRule, f: F) -> f64 {
    let mut s = 0.0;
    for (b, w) in rule.points.iter().zip(&rule.weights) {
        s += w * f(&map(b, verts));
    }
    s * measure
}

/// Integral over a cell, exact for polynomials of degree `degree`.
pub fn integrate_cell<F: Fn(&Point) -> f64>(geom: &CellGeometry, degree: usize, f: F) -> f64 {
    let rule = if geom.dim == 2 {
        triangle_rule(degree)
    } else {
        tetrahedron_rule(degree)
    };
    geom.simplices()
        .iter()
        .map(|(v, m)| integrate_simplex(v, *m, &rule, &f))
        .sum()
}

pub fn cell_average<F: Fn(&Point) -> f64>(geom: &CellGeometry, degree: usize, f: F) -> f64 {
    integrate_cell(geom, degree, f) / geom.volume
}

/// Integral over a face given by its vertex loop. Edges use `n`-point Gauss,
/// polygons a fan of triangles from `centroid`.
pub fn integrate_face<F: Fn(&Point) -> f64>(verts: &[Point], centroid: &Point, dim: usize, degree: usize, f: F) -> f64 {
    if dim == 2 {
        let n = (degree + 2).div_ceil(2).max(3);
        let (gx, gw) = gauss_legendre(n);
        let (a, b) = (verts[0], verts[1]);
        let len = (b - a).norm();
        return gx
            .iter()
            .zip(&gw)
            .map(|(x, w)| 0.5 * w * f(&(a + (b - a) * (0.5 * (x + 1.0)))))
            .sum::<f64>()
            * len;
    }
    let rule = triangle_rule(degree);
    let k = verts.len();
    (0..k)
        .map(|j| {
            let (p, q) = (verts[j], verts[(j + 1) % k]);
            let area = 0.5 * (p - centroid).cross(&(q - centroid)).norm();
            integrate_simplex(&[*centroid, p, q], area, &rule, &f)
        })
        .sum()
}

/// Average over the `i`-th face of a cell.
pub fn face_average<F: Fn(&Point) -> f64>(geom: &CellGeometry, i: usize, degree: usize, f: F) -> f64 {
    integrate_face(&geom.face_vertices[i], &geom.face_centroids[i], geom.dim, degree, f) / geom.face_areas[i]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::PolyMesh;

    // exact monomial integral over the unit right triangle: a! b! / (a+b+2)!
    fn fact(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    #[test]
    fn gauss_legendre_integrates_monomials() {
        for n in 1..8 {
            let (x, w) = gauss_legendre(n);
            for p in 0..2 * n {
                let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p as i32)).sum();
                let want = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
                assert!((got - want).abs() < 1e-14, "n={n} p={p}");
            }
        }
    }

    #[test]
    fn triangle_rules_are_exact() {
        let verts = [Point::zeros(), Point::new(1.0, 0.0, 0.0), Point::new(0.0, 1.0, 0.0)];
        for deg in [4usize, 6, 8] {
            let rule = triangle_rule(deg);
            for a in 0..=deg as u32 {
                for b in 0..=(deg as u32 - a) {
                    let got = integrate_simplex(&verts, 0.5, &rule, |p| p.x.powi(a as i32) * p.y.powi(b as i32));
                    let want = fact(a) * fact(b) / fact(a + b + 2);
                    assert!((got - want).abs() < 1e-14, "deg={deg} a={a} b={b}");
                }
            }
        }
    }

    #[test]
    fn tetrahedron_rule_is_exact() {
        let verts = [
            Point::zeros(),
            Point::new(1.0, 0.0, 0.0),
            Point::new(0.0, 1.0, 0.0),
            Point::new(0.0, 0.0, 1.0),
        ];
        let rule = tetrahedron_rule(4);
        for (a, b, c) in [(0, 0, 0), (1, 0, 0), (2, 1, 0), (1, 1, 1), (0, 0, 4), (2, 0, 2)] {
            let got = integrate_simplex(&verts, 1.0 / 6.0, &rule, |p| {
                p.x.powi(a) * p.y.powi(b) * p.z.powi(c)
            });
            let want = fact(a as u32) * fact(b as u32) * fact(c as u32) / fact((a + b + c + 3) as u32);
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn cell_moments_on_unit_square() {
        let m = PolyMesh::unit_square();
        let g = m.cell_geometry(0);
        assert!((cell_average(g, 2, |_| 1.0) - 1.0).abs() < 1e-15);
        assert!((cell_average(g, 2, |p| p.x) - 0.5).abs() < 1e-15);
        assert!((cell_average(g, 2, |p| p.x * p.x) - 1.0 / 3.0).abs() < 1e-15);
        // right edge, average of y^2 is 1/3
        assert!((face_average(g, 0, 2, |p| p.y * p.y) - 1.0 / 3.0).abs() < 1e-15);
    }
}
