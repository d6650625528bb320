//! Convergence studies driven by a flat `key = value` configuration.
//!
//! ```text
//! # comments start with '#'
//! problem = smooth
//! mesh.kind = quad
//! mesh.nx = 8, 16, 32
//! scheme.name = mfd
//! ```

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::bridges::{audit_membership, hfv_flux_map, mfd_flux_map, mfv_flux_map, solve_scheme, Scheme};
use crate::divk::{Averaging, MarshakConfig};
use crate::high_order::{ho_solve, DEFAULT_LIMIT};
use crate::hybrid::{scalar_fn, solve, vector_fn, ExactSolution, ProblemSpec, SolveReport, SolverMethod, SolverOptions};
use crate::local_ops::{build_m, DiffusionTensor, Stabilization};
use crate::mesh::{
    generate_perturbed_hex_mesh, generate_perturbed_quad_mesh, generate_perturbed_tri_mesh, BoxDomain, Point,
    PolyMesh,
};
use crate::{Error, Result};

/// Manufactured solutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mms {
    /// `p = 1 + 2x - 3y (+ z)` with a constant full tensor.
    Linear,
    /// `p = sin(pi x) sin(pi y)` with `K = diag(1, 10)`.
    Smooth,
}

impl FromStr for Mms {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "smooth" => Ok(Self::Smooth),
            _ => Err(Error::Invalid(format!("unknown problem '{s}'"))),
        }
    }
}

impl Mms {
    pub fn tensor(self, dim: usize) -> DiffusionTensor {
        match (self, dim) {
            (Self::Linear, 2) => DiffusionTensor::new(nalgebra::DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]))
                .expect("SPD tensor"),
            (Self::Linear, _) => DiffusionTensor::new(nalgebra::DMatrix::from_row_slice(
                3,
                3,
                &[3.0, 1.0, 0.0, 1.0, 2.0, 0.5, 0.0, 0.5, 1.0],
            ))
            .expect("SPD tensor"),
            (Self::Smooth, 2) => DiffusionTensor::diagonal(&[1.0, 10.0]),
            (Self::Smooth, _) => DiffusionTensor::diagonal(&[1.0, 10.0, 1.0]),
        }
    }

    pub fn exact(self, dim: usize) -> ExactSolution {
        match self {
            Self::Linear => {
                let cz = if dim == 3 { 1.0 } else { 0.0 };
                ExactSolution {
                    pressure: scalar_fn(move |x| 1.0 + 2.0 * x.x - 3.0 * x.y + cz * x.z),
                    gradient: vector_fn(move |_| Point::new(2.0, -3.0, cz)),
                }
            }
            Self::Smooth => ExactSolution {
                pressure: scalar_fn(|x| (PI * x.x).sin() * (PI * x.y).sin()),
                gradient: vector_fn(|x| {
                    Point::new(
                        PI * (PI * x.x).cos() * (PI * x.y).sin(),
                        PI * (PI * x.x).sin() * (PI * x.y).cos(),
                        0.0,
                    )
                }),
            },
        }
    }

    /// `b = -div(K grad p)`.
    pub fn source(self) -> crate::hybrid::ScalarFn {
        match self {
            Self::Linear => scalar_fn(|_| 0.0),
            Self::Smooth => scalar_fn(|x| 11.0 * PI * PI * (PI * x.x).sin() * (PI * x.y).sin()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshKind {
    Quad,
    Tri,
    Hex,
}

impl FromStr for MeshKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quad" => Ok(Self::Quad),
            "tri" => Ok(Self::Tri),
            "hex" => Ok(Self::Hex),
            _ => Err(Error::Invalid(format!("unknown mesh kind '{s}'"))),
        }
    }
}

impl MeshKind {
    pub fn dim(self) -> usize {
        if self == Self::Hex {
            3
        } else {
            2
        }
    }
}

/// Parses `mfd`, `hfv`, `mfv` or `rt0`.
pub fn parse_scheme(name: &str, stab: Stabilization, alpha: f64) -> Result<Scheme> {
    match name {
        "mfd" => Ok(Scheme::Mfd(stab)),
        "hfv" => Ok(Scheme::Hfv(alpha)),
        "mfv" => Ok(Scheme::Mfv),
        "rt0" => Ok(Scheme::Rt0),
        _ => Err(Error::Invalid(format!("unknown scheme '{name}'"))),
    }
}

pub fn scheme_name(scheme: &Scheme) -> &'static str {
    match scheme {
        Scheme::Mfd(_) => "mfd",
        Scheme::Hfv(_) => "hfv",
        Scheme::Mfv => "mfv",
        Scheme::Rt0 => "rt0",
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyConfig {
    pub problem: Mms,
    pub mesh_kind: MeshKind,
    pub nx: Vec<usize>,
    pub perturbation: f64,
    pub seed: u64,
    pub scheme: Scheme,
    pub order: usize,
    pub rtol: f64,
    pub method: SolverMethod,
    pub output: Option<PathBuf>,
    pub marshak: MarshakConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            problem: Mms::Smooth,
            mesh_kind: MeshKind::Quad,
            nx: vec![8, 16, 32, 64],
            perturbation: 0.2,
            seed: 1,
            scheme: Scheme::Mfd(Stabilization::DefaultTrace),
            order: 0,
            rtol: 1e-11,
            method: SolverMethod::Cg,
            output: None,
            marshak: MarshakConfig::default(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad value '{value}' for {key}"),
    })
}

fn parse_list<T: FromStr>(key: &str, value: &str, line: usize) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|v| parse_value(key, v, line))
        .collect()
}

impl FromStr for StudyConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut scheme = "mfd".to_string();
        let mut stab = Stabilization::DefaultTrace;
        let mut alpha = 1.0;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| Error::Parse {
                line,
                msg: format!("expected 'key = value', got '{body}'"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let wrap = |e: Error| match e {
                Error::Invalid(msg) => Error::Parse { line, msg },
                other => other,
            };
            match key {
                "problem" => cfg.problem = value.parse().map_err(wrap)?,
                "mesh.kind" => cfg.mesh_kind = value.parse().map_err(wrap)?,
                "mesh.nx" => cfg.nx = parse_list(key, value, line)?,
                "mesh.perturbation" => cfg.perturbation = parse_value(key, value, line)?,
                "mesh.seed" => cfg.seed = parse_value(key, value, line)?,
                "scheme.name" => scheme = value.to_string(),
                "scheme.order" => cfg.order = parse_value(key, value, line)?,
                "scheme.stabilization" => {
                    stab = match value {
                        "default" => Stabilization::DefaultTrace,
                        v => Stabilization::Scalar(parse_value(key, v, line)?),
                    }
                }
                "scheme.alpha" => alpha = parse_value(key, value, line)?,
                "solver.rtol" => cfg.rtol = parse_value(key, value, line)?,
                "solver.method" => {
                    cfg.method = match value {
                        "cg" => SolverMethod::Cg,
                        "direct" => SolverMethod::Direct,
                        _ => {
                            return Err(Error::Parse {
                                line,
                                msg: format!("unknown solver '{value}'"),
                            })
                        }
                    }
                }
                "output.dir" => cfg.output = Some(PathBuf::from(value)),
                "marshak.nx" => cfg.marshak.nx = parse_value(key, value, line)?,
                "marshak.ny" => cfg.marshak.ny = parse_value(key, value, line)?,
                "marshak.perturbation" => cfg.marshak.perturbation = parse_value(key, value, line)?,
                "marshak.seed" => cfg.marshak.seed = parse_value(key, value, line)?,
                "marshak.dt" => cfg.marshak.dt = parse_value(key, value, line)?,
                "marshak.t_end" => cfg.marshak.t_end = parse_value(key, value, line)?,
                "marshak.averaging" => cfg.marshak.averaging = value.parse::<Averaging>().map_err(wrap)?,
                "marshak.threshold" => cfg.marshak.threshold = parse_value(key, value, line)?,
                "marshak.picard_tol" => cfg.marshak.picard_tol = parse_value(key, value, line)?,
                "marshak.snapshots" => cfg.marshak.snapshot_times = parse_list(key, value, line)?,
                _ => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("unknown key '{key}'"),
                    })
                }
            }
        }
        cfg.scheme = parse_scheme(&scheme, stab, alpha)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl StudyConfig {
    pub fn load(path: &Path) -> Result<Self> {
        fs::read_to_string(path)?.parse()
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx.is_empty() || self.nx.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("mesh.nx must be a non-empty, strictly increasing list".into()));
        }
        if !(self.rtol > 0.0) || !(self.marshak.dt > 0.0) || !(self.marshak.threshold > 0.0) {
            return Err(Error::Invalid("tolerances and time step must be positive".into()));
        }
        if self.order > 1 {
            return Err(Error::Invalid(format!("order {} is not supported (0 or 1)", self.order)));
        }
        if self.order == 1 && (self.mesh_kind.dim() != 2 || !matches!(self.scheme, Scheme::Mfd(_))) {
            return Err(Error::Invalid("order 1 needs a 2D mesh and the mfd scheme".into()));
        }
        if matches!(self.scheme, Scheme::Rt0) && self.mesh_kind != MeshKind::Tri {
            return Err(Error::Invalid("rt0 needs a triangular mesh".into()));
        }
        Ok(())
    }

    pub fn solver(&self) -> SolverOptions {
        SolverOptions {
            rtol: self.rtol,
            max_iter: None,
            method: self.method,
        }
    }

    /// Mesh of one refinement level.
    pub fn mesh(&self, nx: usize) -> Result<PolyMesh> {
        match self.mesh_kind {
            MeshKind::Quad => generate_perturbed_quad_mesh(nx, nx, BoxDomain::unit(), self.perturbation, self.seed),
            MeshKind::Tri => generate_perturbed_tri_mesh(nx, nx, BoxDomain::unit(), self.perturbation, self.seed),
            MeshKind::Hex => generate_perturbed_hex_mesh([nx; 3], BoxDomain::unit(), self.perturbation, self.seed),
        }
    }

    /// Manufactured problem on `mesh`.
    pub fn problem_spec<'a>(&self, mesh: &'a PolyMesh) -> ProblemSpec<'a> {
        let dim = mesh.dim();
        ProblemSpec::new(mesh, self.problem.tensor(dim))
            .with_source(self.problem.source())
            .with_exact(self.problem.exact(dim))
    }
}

/// Solves one level and reports errors against the manufactured solution.
pub fn run_level(config: &StudyConfig, nx: usize) -> Result<SolveReport> {
    let mesh = config.mesh(nx)?;
    let spec = config.problem_spec(&mesh);
    let opts = config.solver();
    if config.order == 1 {
        return Ok(ho_solve(&spec, 1, DEFAULT_LIMIT)?.report);
    }
    let sol = match &config.scheme {
        Scheme::Mfd(stab) => solve(&spec, stab, &opts)?,
        other => solve_scheme(&spec, other, &opts)?,
    };
    Ok(sol.report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub level: usize,
    pub nx: usize,
    pub h: f64,
    pub err_p: f64,
    pub err_u: f64,
    pub rate_p: Option<f64>,
    pub rate_u: Option<f64>,
    pub iterations: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
}

/// Errors below this are round-off; rates between them are not reported.
pub const RATE_FLOOR: f64 = 1e-12;

fn rate(e0: f64, e1: f64, h0: f64, h1: f64) -> Option<f64> {
    (e0 > RATE_FLOOR && e1 > RATE_FLOOR).then(|| (e0 / e1).ln() / (h0 / h1).ln())
}

impl ConvergenceTable {
    /// Builds the table with rates between consecutive levels.
    pub fn from_reports(levels: &[(usize, SolveReport)]) -> Self {
        let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(levels.len());
        for (level, (nx, r)) in levels.iter().enumerate() {
            let err_p = r.err_p.unwrap_or(f64::NAN);
            let err_u = r.err_u.unwrap_or(f64::NAN);
            let (rate_p, rate_u) = match rows.last() {
                Some(prev) => (rate(prev.err_p, err_p, prev.h, r.h), rate(prev.err_u, err_u, prev.h, r.h)),
                None => (None, None),
            };
            rows.push(ConvergenceRow {
                level,
                nx: *nx,
                h: r.h,
                err_p,
                err_u,
                rate_p,
                rate_u,
                iterations: r.iterations,
            });
        }
        Self { rows }
    }

    /// Least-squares slopes of `log err` against `log h` for pressure and flux.
    pub fn fitted_slopes(&self) -> (f64, f64) {
        let h: Vec<f64> = self.rows.iter().map(|r| r.h).collect();
        let p: Vec<f64> = self.rows.iter().map(|r| r.err_p).collect();
        let u: Vec<f64> = self.rows.iter().map(|r| r.err_u).collect();
        (least_squares_slope(&h, &p), least_squares_slope(&h, &u))
    }
}

/// Slope of the least-squares line through `(log x_i, log y_i)`.
pub fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Runs every level (concurrently) and tabulates errors and rates.
pub fn run_convergence_study(config: &StudyConfig) -> Result<ConvergenceTable> {
    config.validate()?;
    let reports: Vec<(usize, SolveReport)> = config
        .nx
        .par_iter()
        .enumerate()
        .map(|(level, &nx)| {
            run_level(config, nx)
                .map(|r| (nx, r))
                .map_err(|e| Error::Level {
                    level,
                    nx,
                    source: Box::new(e),
                })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<_>>()?;
    Ok(ConvergenceTable::from_reports(&reports))
}

/// Audit summary of one flux-map family over a mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct FamilySummary {
    pub name: String,
    pub cells: usize,
    pub extended: usize,
    pub symmetric: usize,
    pub positive_definite: usize,
    pub mimetic: usize,
    pub max_linear_defect: f64,
    pub max_lemma_defect: f64,
    pub max_symmetry_defect: f64,
}

impl FamilySummary {
    pub fn all_pass(&self) -> bool {
        self.mimetic == self.cells
    }
}

/// Audits the mimetic, hybrid finite volume and mixed finite volume maps on
/// every cell of the finest mesh of `config`.
pub fn family_check(config: &StudyConfig) -> Result<Vec<FamilySummary>> {
    let nx = *config.nx.last().ok_or_else(|| Error::Invalid("empty mesh.nx".into()))?;
    let mesh = config.mesh(nx)?;
    let k = config.problem.tensor(mesh.dim());
    let alpha = match config.scheme {
        Scheme::Hfv(a) => a,
        _ => 1.0,
    };
    let names = ["mfd", "hfv", "mfv"];
    names
        .iter()
        .map(|&name| {
            let reports = mesh
                .cell_geometries()
                .par_iter()
                .map(|g| {
                    let map = match name {
                        "mfd" => mfd_flux_map(g, &build_m(g, &k, &Stabilization::DefaultTrace)?)?,
                        "hfv" => hfv_flux_map(g, &k, &vec![alpha; g.num_faces()])?,
                        _ => mfv_flux_map(g, &build_m(g, &k, &Stabilization::DefaultTrace)?)?,
                    };
                    Ok(audit_membership(&map, g, &k))
                })
                .collect::<Result<Vec<_>>>()?;
            let count = |f: fn(&crate::bridges::MembershipReport) -> bool| reports.iter().filter(|r| f(r)).count();
            let max = |f: fn(&crate::bridges::MembershipReport) -> f64| reports.iter().map(f).fold(0.0, f64::max);
            Ok(FamilySummary {
                name: name.to_string(),
                cells: reports.len(),
                extended: count(|r| r.extended_member()),
                symmetric: count(|r| r.symmetric),
                positive_definite: count(|r| r.positive_definite),
                mimetic: count(|r| r.mimetic_member),
                max_linear_defect: max(|r| r.linear_defect),
                max_lemma_defect: max(|r| r.lemma_defect),
                max_symmetry_defect: max(|r| r.symmetry_defect),
            })
        })
        .collect()
}
