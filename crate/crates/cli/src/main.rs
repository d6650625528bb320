use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mimetic_core::divk::{marshak_driver, Averaging};
use mimetic_core::local_ops::Stabilization;
use mimetic_core::mesh::{MeshFormat, PolyMesh};
use mimetic_core::report::{emit_report, front_csv, snapshot_csv, write_file, Format, Report};
use mimetic_core::study::{family_check, run_convergence_study, run_level, scheme_name, StudyConfig};
use mimetic_core::{bridges::Scheme, Error, Result};

#[derive(Parser, Debug)]
#[command(name = "mimetic", version, about = "Mimetic finite difference diffusion studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flux-space order of the 2D scheme.
    #[arg(long, global = true, value_parser = clap::value_parser!(u8).range(0..=1))]
    order: Option<u8>,

    #[arg(long, global = true, value_enum)]
    scheme: Option<SchemeArg>,

    /// Face coefficient averaging for the Marshak run.
    #[arg(long, global = true, value_enum)]
    averaging: Option<AveragingArg>,

    /// Directory for CSV and text output.
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    /// Mesh perturbation seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the configured problem on the finest mesh.
    Solve { config: PathBuf },
    /// Run a refinement study and print the convergence table.
    Convergence { config: PathBuf },
    /// Run the Marshak wave.
    Marshak { config: PathBuf },
    /// Audit the mimetic, hybrid and mixed finite volume flux maps.
    CheckFamily { config: PathBuf },
    /// Print shape-regularity measures of a mesh file.
    MeshQuality { mesh: PathBuf },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SchemeArg {
    Mfd,
    Hfv,
    Mfv,
    Rt0,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AveragingArg {
    Arithmetic,
    Harmonic,
}

impl Cli {
    fn config(&self, path: &Path) -> Result<StudyConfig> {
        let mut cfg = StudyConfig::load(path)?;
        if let Some(r) = self.order {
            cfg.order = r as usize;
        }
        if let Some(s) = self.scheme {
            let alpha = match cfg.scheme {
                Scheme::Hfv(a) => a,
                _ => 1.0,
            };
            let stab = match &cfg.scheme {
                Scheme::Mfd(s) => s.clone(),
                _ => Stabilization::DefaultTrace,
            };
            cfg.scheme = match s {
                SchemeArg::Mfd => Scheme::Mfd(stab),
                SchemeArg::Hfv => Scheme::Hfv(alpha),
                SchemeArg::Mfv => Scheme::Mfv,
                SchemeArg::Rt0 => Scheme::Rt0,
            };
        }
        if let Some(a) = self.averaging {
            cfg.marshak.averaging = match a {
                AveragingArg::Arithmetic => Averaging::Arithmetic,
                AveragingArg::Harmonic => Averaging::Harmonic,
            };
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.marshak.seed = seed;
        }
        if let Some(dir) = &self.output {
            cfg.output = Some(dir.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn emit(cfg: &StudyConfig, name: &str, report: Report<'_>) -> Result<()> {
    if let Some(dir) = &cfg.output {
        emit_report(report, &dir.join(format!("{name}.csv")), Format::Csv)?;
        emit_report(report, &dir.join(format!("{name}.txt")), Format::Text)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Solve { config } => {
            let cfg = cli.config(config)?;
            let nx = *cfg.nx.last().expect("validated");
            let report = run_level(&cfg, nx)?;
            println!("scheme={}", scheme_name(&cfg.scheme));
            println!("order={}", cfg.order);
            println!("nx={nx}");
            print!("{}", Report::Solve(&report).render(Format::Text));
            emit(&cfg, "solve", Report::Solve(&report))
        }
        Command::Convergence { config } => {
            let cfg = cli.config(config)?;
            let table = run_convergence_study(&cfg)?;
            print!("{}", Report::Table(&table).render(Format::Csv));
            emit(&cfg, "convergence", Report::Table(&table))
        }
        Command::Marshak { config } => {
            let cfg = cli.config(config)?;
            let m = &cfg.marshak;
            let out = marshak_driver(m)?;
            let expected = m.self_similar_speed() * m.t_end;
            println!("averaging={}", m.averaging);
            println!("steps={}", out.front.len());
            println!("picard_iterations={}", out.picard_iterations);
            println!("x_front={:e}", out.final_front());
            println!("x_front_self_similar={expected:e}");
            println!("min_pressure={:e}", out.min_pressure);
            if let Some(dir) = &cfg.output {
                let tag = m.averaging.to_string();
                write_file(&dir.join(format!("front_{tag}.csv")), &front_csv(&out.front))?;
                for s in &out.snapshots {
                    let name = format!("snapshot_{tag}_t{:.3}.csv", s.t);
                    write_file(&dir.join(name), &snapshot_csv(&out.mesh, s))?;
                }
            }
            Ok(())
        }
        Command::CheckFamily { config } => {
            let cfg = cli.config(config)?;
            let summaries = family_check(&cfg)?;
            print!("{}", Report::Family(&summaries).render(Format::Text));
            emit(&cfg, "family", Report::Family(&summaries))
        }
        Command::MeshQuality { mesh } => {
            let m = PolyMesh::load(mesh, MeshFormat::Pmesh)?;
            let q = m.quality();
            println!("dim={}", m.dim());
            println!("cells={}", m.num_cells());
            println!("faces={}", m.num_faces());
            println!("max_faces_per_cell={}", q.max_faces_per_cell);
            println!("max_edges_per_face={}", q.max_edges_per_face);
            println!("n_star={}", q.n_star);
            println!("min_volume_ratio={:e}", q.min_volume_ratio);
            println!("min_face_ratio={:e}", q.min_face_ratio);
            println!("min_edge_ratio={:e}", q.min_edge_ratio);
            println!("min_pyramid_ratio={:e}", q.min_pyramid_ratio);
            println!("rho_star={:e}", q.rho_star());
            println!("max_diameter={:e}", q.max_diameter);
            Ok(())
        }
    }
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("MIMETIC_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| Error::Invalid(format!("MIMETIC_THREADS must be a positive integer, got '{v}'")))?;
    if n == 0 {
        return Err(Error::Invalid("MIMETIC_THREADS must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Invalid(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_threads().and_then(|_| run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
