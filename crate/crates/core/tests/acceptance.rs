//! Acceptance criteria. Each criterion prints one PASS/FAIL line; the test
//! fails if any criterion fails.

mod common;

use std::io::Write as _;
use std::time::{Duration, Instant};

use common::{random_spd, rt0_mass};
use mimetic_core::bridges::{audit_membership, hfv_flux_map, mfv_flux_map, rt0_stabilization, FluxMap, Provenance};
use mimetic_core::divk::{
    divk_flux_matrix, divk_stationary_solve, marshak_driver, scalar_law, time_fn, Averaging, MarshakConfig,
    NonlinearConfig, Stepper, TimeBoundary, DEFAULT_FLOOR,
};
use mimetic_core::high_order::{ho_build_matrices, ho_divergence, ho_interpolate, ho_solve, pressure_moments, DEFAULT_LIMIT};
use mimetic_core::hybrid::{scalar_fn, solve, BoundaryCondition, ProblemSpec, SolverMethod, SolverOptions};
use mimetic_core::linalg::{sym_eigenvalues, symmetry_defect};
use mimetic_core::local_ops::{build_m, build_w, local_duality_residual, DiffusionTensor, LocalMatrices, Stabilization};
use mimetic_core::mesh::{
    generate_perturbed_hex_mesh, generate_perturbed_quad_mesh, generate_perturbed_tri_mesh, BoxDomain, CellGeometry,
    Point, PolyMesh,
};
use mimetic_core::report::{front_csv, Format, Report};
use mimetic_core::study::{run_convergence_study, run_level, MeshKind, Mms, StudyConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-11;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

fn within(elapsed: Duration, secs: u64) -> bool {
    elapsed <= Duration::from_secs(secs)
}

/// Star-shaped polygon with jittered angles and radii under a random affine
/// map with positive determinant.
fn random_polygon(rng: &mut ChaCha8Rng) -> PolyMesh {
    loop {
        let n = rng.gen_range(3..=8);
        let step = std::f64::consts::TAU / n as f64;
        let base: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let t = step * (i as f64 + rng.gen_range(-0.3..0.3));
                let r = rng.gen_range(0.7..1.0);
                (r * t.cos(), r * t.sin())
            })
            .collect();
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let (s1, s2) = (rng.gen_range(1.0..3.0), 1.0);
        let scale = 10f64.powf(rng.gen_range(-2.0..1.0));
        let shift = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
        let pts: Vec<[f64; 2]> = base
            .iter()
            .map(|(x, y)| {
                let (x, y) = (s1 * x, s2 * y);
                let (c, s) = (theta.cos(), theta.sin());
                [scale * (c * x - s * y) + shift[0], scale * (s * x + c * y) + shift[1]]
            })
            .collect();
        if let Ok(m) = PolyMesh::polygon(&pts) {
            return m;
        }
    }
}

fn identity_defects(g: &CellGeometry, k: &DiffusionTensor, rng: &mut ChaCha8Rng) -> [f64; 6] {
    let lm = LocalMatrices::new(g, k, &Stabilization::DefaultTrace).unwrap();
    let ck = k.matrix() * g.volume;
    let lemma = rel(&(lm.r.transpose() * &lm.n), &ck);
    let mn = rel(&(&lm.m * &lm.n), &lm.r);
    let sym = symmetry_defect(&lm.m);
    let ev = sym_eigenvalues(&lm.m);
    let pos = if ev[0] > 0.0 { 0.0 } else { 1.0 };
    let p = &lm.projector;
    let proj = rel(&(p * p), p)
        .max((p * &lm.n).norm() / lm.n.norm())
        .max(symmetry_defect(p));
    let nf = g.num_faces();
    let u: Vec<f64> = (0..nf).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let lam: Vec<f64> = (0..nf).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let q = rng.gen_range(-1.0..1.0);
    let res = local_duality_residual(&lm.m, g, &u, q, &lam).unwrap();
    let scale: f64 = g.volume.max(g.face_areas.iter().sum::<f64>() * g.diameter);
    [lemma, mn, sym, pos, proj, res / scale]
}

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = [0.0f64; 6];
    let mut merge = |d: [f64; 6]| {
        for (w, v) in worst.iter_mut().zip(d) {
            *w = w.max(v);
        }
    };
    for _ in 0..200 {
        let m = random_polygon(&mut rng);
        let k = random_spd(&mut rng, 2);
        merge(identity_defects(m.cell_geometry(0), &k, &mut rng));
    }
    let mut hexes = 0;
    let mut seed = 0;
    while hexes < 50 {
        let m = generate_perturbed_hex_mesh([2, 2, 2], BoxDomain::unit(), 0.3, seed).unwrap();
        seed += 1;
        for g in m.cell_geometries().iter().take(50 - hexes) {
            let k = random_spd(&mut rng, 3);
            merge(identity_defects(g, &k, &mut rng));
            hexes += 1;
        }
    }
    let el = t0.elapsed();
    let pass = worst[3] == 0.0 && worst.iter().all(|&d| d <= TOL) && within(el, 10);
    outcome(
        pass,
        format!(
            "algebraic identities on 200 polygons and 50 hexahedra: R^T N {:.1e}, M N {:.1e}, symmetry {:.1e}, \
             positive {}, projector {:.1e}, duality {:.1e} ({:.2?})",
            worst[0],
            worst[1],
            worst[2],
            worst[3] == 0.0,
            worst[4],
            worst[5],
            el
        ),
    )
}

fn criterion_2() -> Outcome {
    let t0 = Instant::now();
    let quad = StudyConfig {
        problem: Mms::Linear,
        nx: vec![16],
        ..Default::default()
    };
    let hex = StudyConfig {
        problem: Mms::Linear,
        mesh_kind: MeshKind::Hex,
        nx: vec![4],
        ..Default::default()
    };
    let a = run_level(&quad, 16).unwrap();
    let b = run_level(&hex, 4).unwrap();
    let el = t0.elapsed();
    let errs = [a.err_p.unwrap(), a.err_u.unwrap(), b.err_p.unwrap(), b.err_u.unwrap()];
    let pass = errs.iter().all(|&e| e <= 1e-8) && within(el, 30);
    outcome(
        pass,
        format!(
            "linearity preservation: quads err_p {:.1e} err_u {:.1e}, hexes err_p {:.1e} err_u {:.1e} ({:.2?})",
            errs[0], errs[1], errs[2], errs[3], el
        ),
    )
}

fn criterion_3() -> Outcome {
    let t0 = Instant::now();
    let cfg = StudyConfig {
        problem: Mms::Smooth,
        nx: vec![8, 16, 32, 64],
        ..Default::default()
    };
    let table = run_convergence_study(&cfg).unwrap();
    let (sp, su) = table.fitted_slopes();
    let el = t0.elapsed();
    let pass = su >= 0.9 && sp >= 1.8 && within(el, 120);
    outcome(
        pass,
        format!("low-order convergence: flux slope {su:.3}, pressure slope {sp:.3} ({el:.2?})"),
    )
}

fn criterion_4() -> Outcome {
    let t0 = Instant::now();
    let mesh = generate_perturbed_quad_mesh(16, 16, BoxDomain::unit(), 0.2, 1).unwrap();
    let k = Mms::Linear.tensor(2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut hfv_ok, mut mfv_ok, mut bad_ext, mut bad_rejected) = (0, 0, 0, 0);
    for g in mesh.cell_geometries() {
        let n = g.num_faces();
        let hfv = hfv_flux_map(g, &k, &vec![1.0; n]).unwrap();
        let m = build_m(g, &k, &Stabilization::DefaultTrace).unwrap();
        let mfv = mfv_flux_map(g, &m).unwrap();
        let rh = audit_membership(&hfv, g, &k);
        let rm = audit_membership(&mfv, g, &k);
        hfv_ok += usize::from(rh.extended_member() && rh.symmetric && rh.positive_definite);
        mfv_ok += usize::from(rm.extended_member() && rm.symmetric && rm.positive_definite);
        let skew = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let gtilde = DMatrix::identity(n, n) + (&skew - skew.transpose());
        let w = build_w(g, &k, &gtilde).unwrap();
        let rb = audit_membership(&FluxMap::from_w(g, &w, Provenance::User), g, &k);
        bad_ext += usize::from(rb.extended_member());
        bad_rejected += usize::from(!rb.mimetic_member);
    }
    let el = t0.elapsed();
    let c = mesh.num_cells();
    let pass = hfv_ok == c && mfv_ok == c && bad_ext == c && bad_rejected == c && within(el, 10);
    outcome(
        pass,
        format!(
            "family audit on {c} cells: hfv {hfv_ok}, mfv {mfv_ok}, non-symmetric member extended {bad_ext} \
             rejected {bad_rejected} ({el:.2?})"
        ),
    )
}

fn criterion_5() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut worst: f64 = 0.0;
    let (mut tris, mut tets) = (0, 0);
    while tris < 100 {
        let pts: Vec<[f64; 2]> = (0..3).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let Ok(m) = PolyMesh::polygon(&pts) else { continue };
        let g = m.cell_geometry(0);
        if g.volume < 0.05 {
            continue;
        }
        let k = random_spd(&mut rng, 2);
        let s = rt0_stabilization(g, &k).unwrap();
        worst = worst.max(rel(&s.m, &rt0_mass(g, &k.inverse())));
        tris += 1;
    }
    while tets < 20 {
        let v: Vec<[f64; 3]> = (0..4)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let Ok(m) = PolyMesh::tetrahedron([v[0], v[1], v[2], v[3]]) else { continue };
        let g = m.cell_geometry(0);
        if g.volume < 0.02 {
            continue;
        }
        let k = random_spd(&mut rng, 3);
        let s = rt0_stabilization(g, &k).unwrap();
        worst = worst.max(rel(&s.m, &rt0_mass(g, &k.inverse())));
        tets += 1;
    }
    let unit = PolyMesh::polygon(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
    let gc = rt0_stabilization(unit.cell_geometry(0), &DiffusionTensor::isotropic(2, 1.0))
        .unwrap()
        .g_c;
    let gc_err = (gc - 1.0 / 36.0).abs();
    let el = t0.elapsed();
    let pass = worst <= TOL && gc_err <= 4.0 * f64::EPSILON / 36.0 && within(el, 10);
    outcome(
        pass,
        format!("RT0 equivalence on 100 triangles and 20 tets: {worst:.1e}, unit g_c - 1/36 = {gc_err:.1e} ({el:.2?})"),
    )
}

fn criterion_6() -> Outcome {
    let t0 = Instant::now();
    let cfg = StudyConfig {
        problem: Mms::Smooth,
        nx: vec![4, 8, 16],
        order: 1,
        ..Default::default()
    };
    let table = run_convergence_study(&cfg).unwrap();
    let (sp, su) = table.fitted_slopes();

    // commutation on polynomial fields of degree <= 2
    let mesh = generate_perturbed_quad_mesh(3, 3, BoxDomain::unit(), 0.25, 6).unwrap();
    let k = DiffusionTensor::isotropic(2, 1.0);
    let mut commute: f64 = 0.0;
    for g in mesh.cell_geometries() {
        for r in 0..=1 {
            let basis = ho_build_matrices(g, &k, r).unwrap().basis;
            for (a, b) in (0..=2).flat_map(|a| (0..=2 - a).map(move |b| (a, b))) {
                for comp in 0..2 {
                    let mono = move |x: &Point| x.x.powi(a) * x.y.powi(b);
                    let field = move |x: &Point| {
                        let v = mono(x);
                        if comp == 0 {
                            Point::new(v, 0.0, 0.0)
                        } else {
                            Point::new(0.0, v, 0.0)
                        }
                    };
                    let div = move |x: &Point| {
                        let (a, b) = (a as i32, b as i32);
                        if comp == 0 {
                            if a == 0 { 0.0 } else { a as f64 * x.x.powi(a - 1) * x.y.powi(b) }
                        } else if b == 0 {
                            0.0
                        } else {
                            b as f64 * x.x.powi(a) * x.y.powi(b - 1)
                        }
                    };
                    let u = ho_interpolate(g, r, field).unwrap();
                    let d = ho_divergence(g, r, &u).unwrap();
                    let want = pressure_moments(g, &basis, div);
                    commute = commute.max((d - want).amax());
                }
            }
        }
    }

    // order zero against the low-order scheme on a shared linear problem
    let lin = StudyConfig {
        problem: Mms::Linear,
        ..Default::default()
    };
    let lmesh = generate_perturbed_quad_mesh(8, 8, BoxDomain::unit(), 0.2, 3).unwrap();
    let spec = lin.problem_spec(&lmesh);
    let low = solve(&spec, &Stabilization::DefaultTrace, &SolverOptions::default()).unwrap();
    let ho = ho_solve(&spec, 0, DEFAULT_LIMIT).unwrap();
    let mut r0: f64 = 0.0;
    for c in 0..lmesh.num_cells() {
        r0 = r0.max((ho.cell_average(c) - low.fields.p[c]).abs());
        for (i, &f) in lmesh.cells()[c].iter().enumerate() {
            r0 = r0.max((ho.flux[2 * f] - low.fields.u[c][i]).abs());
        }
    }
    let el = t0.elapsed();
    let pass = sp >= 2.7 && su >= 2.7 && commute <= 1e-12 && r0 <= 1e-9 && within(el, 120);
    outcome(
        pass,
        format!(
            "high order r=1: pressure slope {sp:.3}, flux slope {su:.3}; commutation {commute:.1e}; \
             r=0 vs low order {r0:.1e} ({el:.2?})"
        ),
    )
}

fn criterion_7() -> Outcome {
    let t0 = Instant::now();
    let mesh = generate_perturbed_quad_mesh(10, 10, BoxDomain::unit(), 0.2, 7).unwrap();
    let spec = ProblemSpec::new(&mesh, DiffusionTensor::diagonal(&[1.0, 10.0]))
        .with_source(scalar_fn(|x| (3.0 * x.x).sin() + x.y))
        .with_boundary("left", BoundaryCondition::Neumann(scalar_fn(|x| x.y - 0.5)))
        .with_boundary("top", BoundaryCondition::Dirichlet(scalar_fn(|x| x.x)));
    let opts = SolverOptions {
        rtol: 1e-13,
        ..Default::default()
    };
    let lin = solve(&spec, &Stabilization::DefaultTrace, &opts).unwrap();
    let nl = divk_stationary_solve(&spec, &scalar_law(|_| 1.0), Averaging::Arithmetic, DEFAULT_FLOOR, 1e-12, 5, &opts)
        .unwrap();
    let mut diff: f64 = 0.0;
    for (a, b) in nl.fields.p.iter().zip(&lin.fields.p).chain(nl.fields.lambda.iter().zip(&lin.fields.lambda)) {
        diff = diff.max((a - b).abs());
    }
    for (a, b) in nl.fields.u.iter().zip(&lin.fields.u) {
        diff = diff.max((a - b).amax());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut sym: f64 = 0.0;
    for _ in 0..200 {
        let m = random_polygon(&mut rng);
        let g = m.cell_geometry(0);
        let k = random_spd(&mut rng, 2);
        let kf = DVector::from_fn(g.num_faces(), |_, _| 10f64.powf(rng.gen_range(-3.0..1.0)));
        let w = divk_flux_matrix(g, &k, rng.gen_range(0.01..5.0), &kf).unwrap();
        sym = sym.max(symmetry_defect(&w));
    }

    // nonlinear heat run: every Picard system symmetric and solved by CG
    let hmesh = generate_perturbed_quad_mesh(12, 12, BoxDomain::unit(), 0.2, 8).unwrap();
    let mut cfg = NonlinearConfig::new(&hmesh, DiffusionTensor::isotropic(2, 1.0), 0.01);
    cfg.law = scalar_law(|p| 1.0 + p * p);
    cfg.initial = scalar_fn(|x| (std::f64::consts::PI * x.x).sin() * (std::f64::consts::PI * x.y).sin());
    cfg.boundary.insert("left".into(), TimeBoundary::Dirichlet(time_fn(|_, t| t)));
    let stepper = Stepper::new(&hmesh, &cfg).unwrap();
    let mut p = stepper.initial_state();
    let (mut iters, mut worst_sym, mut worst_res): (usize, f64, f64) = (0, 0.0, 0.0);
    let mut all_ok = true;
    for n in 0..10 {
        match stepper.step(&p, n as f64 * cfg.dt) {
            Ok(out) => {
                for rec in &out.history {
                    iters += 1;
                    worst_sym = worst_sym.max(rec.symmetry_defect);
                    worst_res = worst_res.max(rec.cg_residual);
                }
                p = out.fields.p;
            }
            Err(_) => {
                all_ok = false;
                break;
            }
        }
    }
    let spd = all_ok && worst_sym <= 1e-12 && worst_res <= cfg.solver.rtol;
    let el = t0.elapsed();
    let pass = diff <= 1e-9 && sym <= 1e-12 && spd && within(el, 60);
    outcome(
        pass,
        format!(
            "nonlinear reduction: k=1 vs linear {diff:.1e}, flux matrix symmetry {sym:.1e}, \
             {iters} Picard systems symmetric ({worst_sym:.1e}) and CG-solved ({worst_res:.1e}) ({el:.2?})"
        ),
    )
}

fn criterion_8() -> Outcome {
    let t0 = Instant::now();
    let arithmetic = MarshakConfig::default();
    let harmonic = MarshakConfig {
        averaging: Averaging::Harmonic,
        ..Default::default()
    };
    let (a, h) = std::thread::scope(|s| {
        let ja = s.spawn(|| marshak_driver(&arithmetic));
        let jh = s.spawn(|| marshak_driver(&harmonic));
        (ja.join().unwrap(), jh.join().unwrap())
    });
    let el = t0.elapsed();
    let (a, h) = match (a, h) {
        (Ok(a), Ok(h)) => (a, h),
        (a, h) => {
            return outcome(
                false,
                format!("Marshak wave run failed: arithmetic {:?}, harmonic {:?}", a.err(), h.err()),
            )
        }
    };
    let target = arithmetic.self_similar_speed() * arithmetic.t_end;
    let xa = a.final_front();
    let xh = h.final_front();
    let err = (xa - target).abs() / target;
    let pass = err <= 0.10 && xh <= 0.75 * xa && within(el, 600);
    outcome(
        pass,
        format!(
            "Marshak wave: arithmetic front {xa:.4} vs self-similar {target:.4} ({:.1}%), harmonic front {xh:.4} \
             ({:.0}% behind) ({el:.2?})",
            100.0 * err,
            100.0 * (1.0 - xh / xa)
        ),
    )
}

/// Pentagon, quadrilateral and triangle sharing edges.
fn polygon_mesh() -> PolyMesh {
    let xy = [
        (0.0, 0.0),
        (1.0, 0.0),
        (1.3, 0.6),
        (0.5, 1.1),
        (-0.2, 0.6),
        (2.0, 0.1),
        (2.1, 0.9),
        (0.9, 1.8),
    ];
    let nodes = xy.iter().map(|&(x, y)| Point::new(x, y, 0.0)).collect();
    let polys = [vec![0, 1, 2, 3, 4], vec![1, 5, 6, 2], vec![2, 7, 3]];
    PolyMesh::from_polygons(nodes, &polys, |_| Some("boundary".into())).unwrap()
}

fn criterion_9() -> Outcome {
    let t0 = Instant::now();
    let cfg = StudyConfig {
        nx: vec![4, 8, 16],
        seed: 99,
        ..Default::default()
    };
    let csv = || Report::Table(&run_convergence_study(&cfg).unwrap()).render(Format::Csv);
    let study_same = csv() == csv();
    let hfv = StudyConfig {
        scheme: mimetic_core::bridges::Scheme::Hfv(1.0),
        method: SolverMethod::Direct,
        ..cfg.clone()
    };
    let csv_hfv = || Report::Table(&run_convergence_study(&hfv).unwrap()).render(Format::Csv);
    let hfv_same = csv_hfv() == csv_hfv();
    let mcfg = MarshakConfig {
        nx: 18,
        ny: 6,
        dt: 0.01,
        t_end: 0.2,
        seed: 5,
        ..Default::default()
    };
    let front = || front_csv(&marshak_driver(&mcfg).unwrap().front);
    let marshak_same = front() == front();

    let dir = tempfile::tempdir().unwrap();
    let meshes = [
        generate_perturbed_quad_mesh(5, 4, BoxDomain::unit(), 0.3, 1).unwrap(),
        generate_perturbed_tri_mesh(4, 4, BoxDomain::rect(-1.0, 2.0, 0.0, 1.0), 0.2, 2).unwrap(),
        generate_perturbed_hex_mesh([3, 2, 2], BoxDomain::unit(), 0.2, 3).unwrap(),
        polygon_mesh(),
    ];
    let mut round_trip = true;
    for (i, m) in meshes.iter().enumerate() {
        let s = m.to_pmesh_string();
        round_trip &= PolyMesh::from_pmesh_str(&s).unwrap().to_pmesh_string() == s;
        let path = dir.path().join(format!("m{i}.pmesh"));
        m.save(&path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let back = PolyMesh::load(&path, mimetic_core::mesh::MeshFormat::Pmesh).unwrap();
        let path2 = dir.path().join(format!("m{i}b.pmesh"));
        back.save(&path2).unwrap();
        round_trip &= first == std::fs::read(&path2).unwrap();
    }
    let el = t0.elapsed();
    let pass = study_same && hfv_same && marshak_same && round_trip;
    outcome(
        pass,
        format!(
            "determinism and I/O: study CSV {study_same}, hfv CSV {hfv_same}, Marshak front CSV {marshak_same}, \
             mesh round trip {round_trip} ({el:.2?})"
        ),
    )
}

#[test]
fn acceptance() {
    let criteria: [(usize, fn() -> Outcome); 9] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
    ];
    let mut failed = Vec::new();
    // written to the process stdout so the lines survive output capture
    let mut out = std::io::stdout();
    for (id, run) in criteria {
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        writeln!(out, "{tag} criterion {id}: {}", o.detail).unwrap();
        out.flush().unwrap();
        if !o.pass {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
