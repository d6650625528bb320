//! Lowest order Raviart-Thomas mass matrices by closed-form integration,
//! compared against the one-rank stabilized mimetic matrix.

mod common;

use common::{random_spd, rt0_mass};
use mimetic_core::bridges::{audit_membership, mfd_flux_map, rt0_stabilization};
use mimetic_core::local_ops::DiffusionTensor;
use mimetic_core::mesh::PolyMesh;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn unit_triangle_mass_matrix() {
    let t = PolyMesh::polygon(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
    let g = t.cell_geometry(0);
    let s = rt0_stabilization(g, &DiffusionTensor::isotropic(2, 1.0)).unwrap();
    let oracle = rt0_mass(g, &DMatrix::identity(2, 2));
    assert!((&s.m - &oracle).norm() <= 1e-13 * oracle.norm(), "{}\n{}", s.m, oracle);
}

#[test]
fn random_triangles_and_tets() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..50 {
        let pts: Vec<[f64; 2]> = (0..3).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let Ok(mesh) = PolyMesh::polygon(&pts) else { continue };
        let g = mesh.cell_geometry(0);
        if g.volume < 0.05 {
            continue;
        }
        let k = random_spd(&mut rng, 2);
        let s = rt0_stabilization(g, &k).unwrap();
        let oracle = rt0_mass(g, &k.inverse());
        assert!((&s.m - &oracle).norm() <= 1e-11 * oracle.norm());
        assert!(audit_membership(&mfd_flux_map(g, &s.m).unwrap(), g, &k).mimetic_member);
    }
    for _ in 0..20 {
        let v: Vec<[f64; 3]> = (0..4)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let Ok(mesh) = PolyMesh::tetrahedron([v[0], v[1], v[2], v[3]]) else { continue };
        let g = mesh.cell_geometry(0);
        if g.volume < 0.02 {
            continue;
        }
        let k = random_spd(&mut rng, 3);
        let s = rt0_stabilization(g, &k).unwrap();
        let oracle = rt0_mass(g, &k.inverse());
        assert!((&s.m - &oracle).norm() <= 1e-11 * oracle.norm(), "{}\n{}", s.m, oracle);
    }
}
